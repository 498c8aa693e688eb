//! Dataset splitting, minibatch training, evaluation and feature-map export.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use lru::LruCache;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::Settings;
use crate::error::{Error, Result};
use crate::geo::PathRecord;
use crate::model::{splitmix, subpath_truths, Grads, LossConfig, Mode, Model, ModelConfig};
use crate::nn::{adam_step, AdamConfig, Checkpoint, Tensor};
use crate::raster::write_gray_ppm;
use crate::raster::{slide_windows, GeneralizedImage, Rasterizer, SubPathWindow, WindowingConfig};
use crate::scalar::Scalar;
use crate::traffic::local_hour;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_iterations: usize,
    pub seed: u64,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
    pub loss: LossConfig,
    pub eval_every: usize,
    /// Rendered window images kept per dataset; 0 disables caching.
    pub cache_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 32,
            max_iterations: 20_000,
            seed: 0,
            split: [0.8, 0.1, 0.1],
            loss: LossConfig::default(),
            eval_every: 500,
            cache_size: 4096,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_fractions(&self.split)?;
        self.loss.validate()?;
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::config("batch_size and eval_every must be positive"));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        Ok(())
    }
}

fn check_fractions(f: &[f64; 3]) -> Result<()> {
    if f.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!(
            "split fractions {f:?} must be non-negative and sum to 1"
        )));
    }
    Ok(())
}

/// Seeded shuffle, then consecutive train / validation / test blocks.
pub fn split_dataset<R: Clone>(
    records: &[R],
    fractions: [f64; 3],
    seed: u64,
) -> Result<(Vec<R>, Vec<R>, Vec<R>)> {
    check_fractions(&fractions)?;
    let n = records.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((fractions[0] * n as f64).round() as usize).min(n);
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
    let pick = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    Ok((
        pick(&order[..n_train]),
        pick(&order[n_train..n_train + n_val]),
        pick(&order[n_train + n_val..]),
    ))
}

/// What the model needs to turn a record into window images.
pub struct Context<'a> {
    pub rasterizer: Rasterizer<'a>,
    pub windowing: WindowingConfig,
    pub tz_offset_s: i64,
}

struct Prepared {
    windows: Vec<SubPathWindow>,
    truths: Vec<Option<f64>>,
    hour: u8,
}

type ImageCache<T> = Mutex<LruCache<(u64, usize), Arc<Tensor<T>>>>;

/// Records with their windows and sub-path truths precomputed; images are
/// rendered lazily through an LRU cache keyed by (record id, window index).
pub struct Dataset<'r, T> {
    pub records: &'r [PathRecord],
    prepared: Vec<Prepared>,
    cache: Option<ImageCache<T>>,
}

impl<'r, T: Scalar> Dataset<'r, T> {
    pub fn new(
        records: &'r [PathRecord],
        ctx: &Context<'_>,
        s_max: usize,
        cache_size: usize,
    ) -> Result<Self> {
        let prepared = records
            .par_iter()
            .map(|r| {
                let windows = slide_windows(r, &ctx.windowing, ctx.rasterizer.network())?;
                let truths = subpath_truths(r, &windows, s_max)?;
                Ok(Prepared {
                    windows,
                    truths,
                    hour: local_hour(r.departure_time, ctx.tz_offset_s),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let cache = NonZeroUsize::new(cache_size).map(|n| Mutex::new(LruCache::new(n)));
        Ok(Self {
            records,
            prepared,
            cache,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Sub-path truths of the windows that reach the model.
    pub fn subpath_truths(&self, i: usize) -> &[Option<f64>] {
        &self.prepared[i].truths
    }

    pub fn windows(&self, i: usize) -> &[SubPathWindow] {
        &self.prepared[i].windows
    }

    fn image(&self, i: usize, w: usize, ctx: &Context<'_>) -> Result<Arc<Tensor<T>>> {
        let rec = &self.records[i];
        let key = (rec.id, w);
        if let Some(cache) = &self.cache {
            if let Some(img) = cache.lock().expect("cache lock").get(&key) {
                return Ok(Arc::clone(img));
            }
        }
        let p = &self.prepared[i];
        let img = Arc::new(
            ctx.rasterizer
                .rasterize::<T>(&p.windows[w], rec, p.hour)?
                .tensor,
        );
        if let Some(cache) = &self.cache {
            cache.lock().expect("cache lock").put(key, Arc::clone(&img));
        }
        Ok(img)
    }

    /// Images of the first `min(n, s_max)` windows of record `i`.
    pub fn images(&self, i: usize, ctx: &Context<'_>, s_max: usize) -> Result<Vec<Arc<Tensor<T>>>> {
        (0..self.prepared[i].windows.len().min(s_max))
            .map(|w| self.image(i, w, ctx))
            .collect()
    }
}

/// Sets zero output scales to training-set means (path time and valid sub-path times).
pub fn resolve_output_scales(
    cfg: &mut ModelConfig,
    records: &[PathRecord],
    ctx: &Context<'_>,
) -> Result<()> {
    if records.is_empty() {
        return Err(Error::validation(
            "cannot derive output scales from no records",
        ));
    }
    if cfg.output_scale_s == 0.0 {
        let mut t: Vec<f64> = records.iter().map(PathRecord::total_time_s).collect();
        t.sort_by(f64::total_cmp);
        cfg.output_scale_s = t.iter().sum::<f64>() / t.len() as f64;
    }
    if cfg.subpath_scale_s == 0.0 {
        let mut all = Vec::new();
        for r in records {
            let windows = slide_windows(r, &ctx.windowing, ctx.rasterizer.network())?;
            all.extend(
                subpath_truths(r, &windows, cfg.temporal.s_max)?
                    .into_iter()
                    .flatten(),
            );
        }
        all.sort_by(f64::total_cmp);
        cfg.subpath_scale_s = if all.is_empty() {
            60.0
        } else {
            all.iter().sum::<f64>() / all.len() as f64
        };
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub rmse_s: f64,
    pub mae_s: f64,
    pub mape_pct: f64,
    pub n_examples: usize,
}

impl std::fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "n = {} | MAE = {:.2} s | MAPE = {:.2} % | RMSE = {:.2} s",
            self.n_examples, self.mae_s, self.mape_pct, self.rmse_s
        )
    }
}

impl MetricsReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "rmse_s,mae_s,mape_pct,n_examples")?;
        writeln!(
            w,
            "{},{},{},{}",
            self.rmse_s, self.mae_s, self.mape_pct, self.n_examples
        )?;
        Ok(())
    }
}

fn sorted_mean(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

/// RMSE, MAE and MAPE of predictions against truths. Terms are summed in
/// sorted order, so the result does not depend on example order.
pub fn metrics(predictions: &[f64], truths: &[f64]) -> Result<MetricsReport> {
    if predictions.len() != truths.len() {
        return Err(Error::shape("predictions and truths differ in length"));
    }
    if truths.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::validation("ground truth must be positive"));
    }
    let n = truths.len();
    if n == 0 {
        return Ok(MetricsReport {
            rmse_s: 0.0,
            mae_s: 0.0,
            mape_pct: 0.0,
            n_examples: 0,
        });
    }
    let err: Vec<f64> = predictions.iter().zip(truths).map(|(p, t)| p - t).collect();
    Ok(MetricsReport {
        rmse_s: sorted_mean(err.iter().map(|e| e * e).collect()).sqrt(),
        mae_s: sorted_mean(err.iter().map(|e| e.abs()).collect()),
        mape_pct: 100.0 * sorted_mean(err.iter().zip(truths).map(|(e, t)| e.abs() / t).collect()),
        n_examples: n,
    })
}

/// Inference-mode path estimates in seconds, in dataset order.
pub fn predict<T: Scalar>(
    model: &Model<T>,
    data: &Dataset<'_, T>,
    ctx: &Context<'_>,
) -> Result<Vec<f64>> {
    let s_max = model.config.temporal.s_max;
    (0..data.len())
        .into_par_iter()
        .map(|i| {
            let imgs = data.images(i, ctx, s_max)?;
            let refs: Vec<&Tensor<T>> = imgs.iter().map(|a| a.as_ref()).collect();
            Ok(model
                .forward_path(&refs, Mode::Inference)?
                .estimate
                .as_f64())
        })
        .collect()
}

pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    data: &Dataset<'_, T>,
    ctx: &Context<'_>,
) -> Result<MetricsReport> {
    let preds = predict(model, data, ctx)?;
    let truths: Vec<f64> = data.records.iter().map(PathRecord::total_time_s).collect();
    metrics(&preds, &truths)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub iteration: usize,
    pub train_loss: f64,
    pub val_mae: f64,
    pub val_mape: f64,
    pub val_rmse: f64,
}

pub fn write_history<W: Write>(mut w: W, rows: &[HistoryRow]) -> Result<()> {
    writeln!(w, "iteration,train_loss,val_mae,val_mape,val_rmse")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.iteration, r.train_loss, r.val_mae, r.val_mape, r.val_rmse
        )?;
    }
    Ok(())
}

pub struct TrainOutcome<T> {
    /// Parameters with the best validation MAE seen.
    pub model: Model<T>,
    pub history: Vec<HistoryRow>,
    pub best_iteration: usize,
    pub best_val: Option<MetricsReport>,
}

/// Loss terms of one minibatch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLoss {
    pub path: f64,
    pub sub: f64,
    pub total: f64,
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Path loss term, sub-path loss terms and gradients of one sample.
type SampleTerms<T> = (f64, Vec<f64>, Grads<T>);

/// Forward and backward over a minibatch. Returns the loss terms and the
/// gradient of the total loss (including penalties).
pub fn batch_gradients<T: Scalar>(
    model: &Model<T>,
    data: &Dataset<'_, T>,
    ctx: &Context<'_>,
    batch: &[usize],
    loss: &LossConfig,
    dropout_seed: u64,
) -> Result<(BatchLoss, Grads<T>)> {
    let s_max = model.config.temporal.s_max;
    let b = batch.len() as f64;
    let n_sub: usize = batch
        .iter()
        .map(|&i| data.subpath_truths(i).iter().flatten().count())
        .sum();
    let mut grads = model.zero_grads();
    let (mut path_terms, mut sub_terms) = (Vec::new(), Vec::new());
    let chunk = rayon::current_num_threads().max(1);
    for (c, idx) in batch.chunks(chunk).enumerate() {
        let results: Vec<Result<SampleTerms<T>>> = idx
            .par_iter()
            .enumerate()
            .map(|(j, &i)| {
                let imgs = data.images(i, ctx, s_max)?;
                let refs: Vec<&Tensor<T>> = imgs.iter().map(|a| a.as_ref()).collect();
                let mode = Mode::Training {
                    seed: splitmix(dropout_seed ^ splitmix((c * chunk + j) as u64)),
                };
                let pass = model.forward_path(&refs, mode)?;
                let truth = data.records[i].total_time_s();
                let est = pass.estimate.as_f64();
                let d_est = loss.beta * sign(est - truth) / (truth * b);
                let mut subs = Vec::new();
                let d_sub: Vec<T> = pass
                    .subpath_estimates
                    .iter()
                    .zip(data.subpath_truths(i))
                    .map(|(e, t)| match t {
                        Some(t) => {
                            let e = e.as_f64();
                            subs.push((e - t).abs() / t);
                            T::from_f64_lossy((1.0 - loss.beta) * sign(e - t) / (t * n_sub as f64))
                        }
                        None => T::zero(),
                    })
                    .collect();
                let mut g = model.zero_grads();
                model.backward_path(&pass, T::from_f64_lossy(d_est), &d_sub, &mut g)?;
                Ok(((est - truth).abs() / truth, subs, g))
            })
            .collect();
        for r in results {
            let (p, s, g) = r?;
            path_terms.push(p);
            sub_terms.extend(s);
            for (acc, gi) in grads.iter_mut().zip(&g) {
                acc.add_assign(gi);
            }
        }
    }
    model.penalties_backward(loss, &mut grads);
    let path = sorted_mean(path_terms);
    let sub = if sub_terms.is_empty() {
        0.0
    } else {
        sorted_mean(sub_terms)
    };
    let total = crate::model::total_loss(path, sub, &model.penalties(), loss);
    Ok((BatchLoss { path, sub, total }, grads))
}

/// Minibatch Adam on the total loss, keeping the parameters with the best
/// validation MAE. `on_eval` sees every history row as it is produced.
pub fn train<T: Scalar>(
    mut model: Model<T>,
    train_data: &Dataset<'_, T>,
    val_data: &Dataset<'_, T>,
    ctx: &Context<'_>,
    cfg: &TrainConfig,
    mut on_eval: impl FnMut(&HistoryRow),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train_data.is_empty() || val_data.is_empty() {
        return Err(Error::validation(
            "training and validation sets must be nonempty",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    let mut best: Option<(MetricsReport, usize, Vec<Tensor<T>>)> = None;
    let mut losses = Vec::new();
    for it in 1..=cfg.max_iterations {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if order.is_empty() {
                order = (0..train_data.len()).collect();
                order.shuffle(&mut rng);
                order.reverse();
            }
            batch.push(order.pop().expect("refilled"));
        }
        let seed = splitmix(cfg.seed ^ splitmix(it as u64));
        let (loss, grads) = batch_gradients(&model, train_data, ctx, &batch, &cfg.loss, seed)?;
        if !loss.total.is_finite() {
            return Err(Error::Divergence {
                iteration: it,
                loss: loss.total,
            });
        }
        losses.push(loss.total);
        for (p, g) in model.params.iter_mut().zip(grads) {
            p.grad = g;
        }
        adam_step(&mut model.params, &cfg.adam, it as u64);

        if it % cfg.eval_every == 0 || it == cfg.max_iterations {
            let val = evaluate(&model, val_data, ctx)?;
            let row = HistoryRow {
                iteration: it,
                train_loss: sorted_mean(std::mem::take(&mut losses)),
                val_mae: val.mae_s,
                val_mape: val.mape_pct,
                val_rmse: val.rmse_s,
            };
            on_eval(&row);
            history.push(row);
            if best.as_ref().is_none_or(|(b, _, _)| val.mae_s < b.mae_s) {
                best = Some((
                    val,
                    it,
                    model.params.iter().map(|p| p.value.clone()).collect(),
                ));
            }
        }
    }
    let (best_val, best_iteration) = match best {
        Some((val, it, values)) => {
            for (p, v) in model.params.iter_mut().zip(values) {
                p.value = v;
            }
            (Some(val), it)
        }
        None => (None, 0),
    };
    for p in &mut model.params {
        p.zero_grad();
    }
    Ok(TrainOutcome {
        model,
        history,
        best_iteration,
        best_val,
    })
}

/// Writes a checkpoint whose config text is the full settings file.
pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    settings: &Settings,
    model: &Model<T>,
    step: u64,
) -> Result<()> {
    let mut s = settings.clone();
    s.model = model.config.clone();
    let ckpt = Checkpoint {
        config_text: s.to_text(),
        step,
        params: model.params.clone(),
    };
    let mut w = BufWriter::new(fs::File::create(path)?);
    ckpt.write(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Reads a checkpoint back into its settings and model.
pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(Settings, Model<T>, u64)> {
    let ckpt = Checkpoint::<T>::read(BufReader::new(fs::File::open(path)?))?;
    let settings = Settings::from_text(&ckpt.config_text)?;
    let model = Model::from_params(settings.model.clone(), ckpt.params)?;
    Ok((settings, model, ckpt.step))
}

/// Post-ReLU activation grid of one filter of one branch.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub branch: &'static str,
    pub filter: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl FeatureMap {
    /// Values divided by the map maximum (all zeros stay zero).
    pub fn normalized(&self) -> Vec<f64> {
        let max = self.values.iter().copied().fold(0.0, f64::max);
        if max > 0.0 {
            self.values.iter().map(|v| v / max).collect()
        } else {
            vec![0.0; self.values.len()]
        }
    }
}

/// Pre-pool activations of both branches of max+avg layer `layer` (0 = first).
pub fn export_feature_maps<T: Scalar>(
    model: &Model<T>,
    image: &GeneralizedImage<T>,
    layer: usize,
) -> Result<Vec<FeatureMap>> {
    let (max_act, avg_act) = model.maxavg_activations(&image.tensor, layer)?;
    let mut maps = Vec::new();
    for (branch, act) in [("max", &max_act), ("avg", &avg_act)] {
        let (h, w, c) = (act.shape()[0], act.shape()[1], act.shape()[2]);
        for filter in 0..c {
            let values = (0..h * w).map(|p| act[p * c + filter].as_f64()).collect();
            maps.push(FeatureMap {
                branch,
                filter,
                height: h,
                width: w,
                values,
            });
        }
    }
    Ok(maps)
}

/// Writes each map as `{prefix}_{branch}_{filter:03}.ppm`, normalized per map.
pub fn write_feature_maps(dir: &Path, prefix: &str, maps: &[FeatureMap]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    maps.iter()
        .map(|m| {
            let path = dir.join(format!("{prefix}_{}_{:03}.ppm", m.branch, m.filter));
            write_gray_ppm(
                BufWriter::new(fs::File::create(&path)?),
                m.width,
                m.height,
                &m.normalized(),
            )?;
            Ok(path)
        })
        .collect()
}
