//! Flat `key = value` settings covering every hyperparameter.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are errors.
//! Lists are comma separated.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{LossConfig, ModelConfig};
use crate::raster::{RasterConfig, WindowingConfig};
use crate::synth::SynthConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(Error::config(format!(
                "precision must be f32 or f64, got {s:?}"
            ))),
        }
    }
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Settings {
    pub windowing: WindowingConfig,
    pub raster: RasterConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub tz_offset_s: i64,
    pub precision: Precision,
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::config(format!("bad value for {key}: {v:?}")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| parse(key, x)).collect()
}

fn list<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl Settings {
    /// Sets one key. `k` and `d` apply to both the rasterizer and the spatial CNN.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let m = &mut self.model;
        let t = &mut self.train;
        let s = &mut self.synth;
        match key.trim() {
            "window_km" => self.windowing.window_km = parse(key, v)?,
            "step_km" => self.windowing.step_km = parse(key, v)?,
            "k" => {
                self.raster.k = parse(key, v)?;
                m.pathcnn.k = self.raster.k;
            }
            "d" => {
                self.raster.d = parse(key, v)?;
                m.pathcnn.d = self.raster.d;
            }
            "r_lng" => self.raster.r_lng = parse(key, v)?,
            "r_lat" => self.raster.r_lat = parse(key, v)?,
            "highway_width_px" => self.raster.highway_width_px = parse(key, v)?,
            "other_width_px" => self.raster.other_width_px = parse(key, v)?,
            "pathcnn_channels" => m.pathcnn.channels = parse_list(key, v)?,
            "pathcnn_kernel" => m.pathcnn.kernel = parse(key, v)?,
            "lambda" => m.pathcnn.lambda = parse(key, v)?,
            "dropout" => m.pathcnn.dropout = parse(key, v)?,
            "s_max" => m.temporal.s_max = parse(key, v)?,
            "temporal_channels" => m.temporal.channels = parse_list(key, v)?,
            "temporal_kernel" => m.temporal.kernel = parse(key, v)?,
            "head_dims" => m.temporal.head_dims = parse_list(key, v)?,
            "subpath_hidden" => m.temporal.subpath_hidden = parse(key, v)?,
            "output_scale_s" => m.output_scale_s = parse(key, v)?,
            "subpath_scale_s" => m.subpath_scale_s = parse(key, v)?,
            "beta" => t.loss.beta = parse(key, v)?,
            "gamma_center" => t.loss.gamma_center = parse(key, v)?,
            "gamma_div" => t.loss.gamma_div = parse(key, v)?,
            "gamma_l2" => t.loss.gamma_l2 = parse(key, v)?,
            "learning_rate" => t.adam.lr = parse(key, v)?,
            "adam_beta1" => t.adam.beta1 = parse(key, v)?,
            "adam_beta2" => t.adam.beta2 = parse(key, v)?,
            "adam_eps" => t.adam.eps = parse(key, v)?,
            "batch_size" => t.batch_size = parse(key, v)?,
            "max_iterations" => t.max_iterations = parse(key, v)?,
            "seed" => t.seed = parse(key, v)?,
            "split" => {
                let f: Vec<f64> = parse_list(key, v)?;
                t.split = f
                    .try_into()
                    .map_err(|_| Error::config("split needs three fractions"))?;
            }
            "eval_every" => t.eval_every = parse(key, v)?,
            "cache_size" => t.cache_size = parse(key, v)?,
            "tz_offset_s" => {
                self.tz_offset_s = parse(key, v)?;
                s.tz_offset_s = self.tz_offset_s;
            }
            "precision" => self.precision = parse(key, v)?,
            "synth_grid" => s.grid = parse(key, v)?,
            "synth_spacing_m" => s.spacing_m = parse(key, v)?,
            "synth_highway_rows" => s.highway_rows = parse_list(key, v)?,
            "synth_highway_cols" => s.highway_cols = parse_list(key, v)?,
            "synth_highway_speed_mps" => s.highway_speed_mps = parse(key, v)?,
            "synth_other_speed_mps" => s.other_speed_mps = parse(key, v)?,
            "synth_hourly_multipliers" => s.hourly_multipliers = parse_list(key, v)?,
            "synth_signal_fraction" => s.signal_fraction = parse(key, v)?,
            "synth_signal_delay_s" => s.signal_delay_s = parse(key, v)?,
            "synth_seed" => s.seed = parse(key, v)?,
            "synth_num_paths" => s.num_paths = parse(key, v)?,
            "synth_min_edges" => s.min_edges = parse(key, v)?,
            "synth_max_edges" => s.max_edges = parse(key, v)?,
            "synth_origin_lng" => s.origin.0 = parse(key, v)?,
            "synth_origin_lat" => s.origin.1 = parse(key, v)?,
            "synth_start_epoch" => s.start_epoch = parse(key, v)?,
            "synth_span_days" => s.span_days = parse(key, v)?,
            other => return Err(Error::config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Every key with its current value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let m = &self.model;
        let t = &self.train;
        let s = &self.synth;
        vec![
            ("window_km", self.windowing.window_km.to_string()),
            ("step_km", self.windowing.step_km.to_string()),
            ("k", self.raster.k.to_string()),
            ("d", self.raster.d.to_string()),
            ("r_lng", self.raster.r_lng.to_string()),
            ("r_lat", self.raster.r_lat.to_string()),
            ("highway_width_px", self.raster.highway_width_px.to_string()),
            ("other_width_px", self.raster.other_width_px.to_string()),
            ("pathcnn_channels", list(&m.pathcnn.channels)),
            ("pathcnn_kernel", m.pathcnn.kernel.to_string()),
            ("lambda", m.pathcnn.lambda.to_string()),
            ("dropout", m.pathcnn.dropout.to_string()),
            ("s_max", m.temporal.s_max.to_string()),
            ("temporal_channels", list(&m.temporal.channels)),
            ("temporal_kernel", m.temporal.kernel.to_string()),
            ("head_dims", list(&m.temporal.head_dims)),
            ("subpath_hidden", m.temporal.subpath_hidden.to_string()),
            ("output_scale_s", m.output_scale_s.to_string()),
            ("subpath_scale_s", m.subpath_scale_s.to_string()),
            ("beta", t.loss.beta.to_string()),
            ("gamma_center", t.loss.gamma_center.to_string()),
            ("gamma_div", t.loss.gamma_div.to_string()),
            ("gamma_l2", t.loss.gamma_l2.to_string()),
            ("learning_rate", t.adam.lr.to_string()),
            ("adam_beta1", t.adam.beta1.to_string()),
            ("adam_beta2", t.adam.beta2.to_string()),
            ("adam_eps", t.adam.eps.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("max_iterations", t.max_iterations.to_string()),
            ("seed", t.seed.to_string()),
            ("split", list(&t.split)),
            ("eval_every", t.eval_every.to_string()),
            ("cache_size", t.cache_size.to_string()),
            ("tz_offset_s", self.tz_offset_s.to_string()),
            ("precision", self.precision.to_string()),
            ("synth_grid", s.grid.to_string()),
            ("synth_spacing_m", s.spacing_m.to_string()),
            ("synth_highway_rows", list(&s.highway_rows)),
            ("synth_highway_cols", list(&s.highway_cols)),
            ("synth_highway_speed_mps", s.highway_speed_mps.to_string()),
            ("synth_other_speed_mps", s.other_speed_mps.to_string()),
            ("synth_hourly_multipliers", list(&s.hourly_multipliers)),
            ("synth_signal_fraction", s.signal_fraction.to_string()),
            ("synth_signal_delay_s", s.signal_delay_s.to_string()),
            ("synth_seed", s.seed.to_string()),
            ("synth_num_paths", s.num_paths.to_string()),
            ("synth_min_edges", s.min_edges.to_string()),
            ("synth_max_edges", s.max_edges.to_string()),
            ("synth_origin_lng", s.origin.0.to_string()),
            ("synth_origin_lat", s.origin.1.to_string()),
            ("synth_start_epoch", s.start_epoch.to_string()),
            ("synth_span_days", s.span_days.to_string()),
        ]
    }

    /// Applies a `key = value` text on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value", n + 1)))?;
            self.set(key, value)
                .map_err(|e| Error::config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override {kv:?} is not key=value")))?;
        self.set(key, value)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut s = Self::default();
        s.apply_text(text)?;
        Ok(s)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn loss(&self) -> &LossConfig {
        &self.train.loss
    }

    pub fn validate(&self) -> Result<()> {
        self.windowing.validate()?;
        self.raster.validate()?;
        let mut model = self.model.clone();
        // zero scales are resolved from training data later
        if model.output_scale_s == 0.0 {
            model.output_scale_s = 1.0;
        }
        if model.subpath_scale_s == 0.0 {
            model.subpath_scale_s = 1.0;
        }
        model.validate()?;
        if (self.raster.k, self.raster.d) != (self.model.pathcnn.k, self.model.pathcnn.d) {
            return Err(Error::config("raster and model image sizes differ"));
        }
        self.train.validate()?;
        self.synth.validate()
    }
}
