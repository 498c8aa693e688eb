//! From a path record to model outputs: windows, rasters, forward pass.

use crate::error::Result;
use crate::geo::{subpath_ground_truth, PathRecord};
use crate::model::{Mode, Model, PathPass};
use crate::nn::Tensor;
use crate::raster::{slide_windows, Rasterizer, SubPathWindow, WindowingConfig};
use crate::scalar::Scalar;
use crate::traffic::local_hour;

/// Windows of one path with the rendered images of those that reach the model.
#[derive(Debug, Clone)]
pub struct PathSample<T> {
    pub windows: Vec<SubPathWindow>,
    /// Images of the first `min(n, S_max)` windows.
    pub images: Vec<Tensor<T>>,
    pub hour: u8,
}

impl<T: Scalar> PathSample<T> {
    pub fn image_refs(&self) -> Vec<&Tensor<T>> {
        self.images.iter().collect()
    }
}

/// Slides windows over the record and renders up to `s_max` of them at the departure hour.
pub fn render_path<T: Scalar>(
    record: &PathRecord,
    rasterizer: &Rasterizer<'_>,
    windowing: &WindowingConfig,
    tz_offset_s: i64,
    s_max: usize,
) -> Result<PathSample<T>> {
    let windows = slide_windows(record, windowing, rasterizer.network())?;
    let hour = local_hour(record.departure_time, tz_offset_s);
    let images = windows
        .iter()
        .take(s_max)
        .map(|w| Ok(rasterizer.rasterize::<T>(w, record, hour)?.tensor))
        .collect::<Result<Vec<_>>>()?;
    Ok(PathSample {
        windows,
        images,
        hour,
    })
}

/// Sub-path ground truth of each window that reaches the model; `None` below 1 s.
pub fn subpath_truths(
    record: &PathRecord,
    windows: &[SubPathWindow],
    s_max: usize,
) -> Result<Vec<Option<f64>>> {
    windows
        .iter()
        .take(s_max)
        .map(|w| {
            if w.span.1 <= w.span.0 {
                return Ok(None);
            }
            let t = subpath_ground_truth(record, w.span)?;
            Ok((t >= 1.0).then_some(t))
        })
        .collect()
}

/// Path estimate and per-window estimates, both in seconds.
pub fn full_forward<T: Scalar>(
    model: &Model<T>,
    record: &PathRecord,
    rasterizer: &Rasterizer<'_>,
    windowing: &WindowingConfig,
    tz_offset_s: i64,
    mode: Mode,
) -> Result<(T, Vec<T>)> {
    let pass = forward_record(model, record, rasterizer, windowing, tz_offset_s, mode)?.1;
    Ok((pass.estimate, pass.subpath_estimates))
}

pub fn forward_record<T: Scalar>(
    model: &Model<T>,
    record: &PathRecord,
    rasterizer: &Rasterizer<'_>,
    windowing: &WindowingConfig,
    tz_offset_s: i64,
    mode: Mode,
) -> Result<(PathSample<T>, PathPass<T>)> {
    let sample = render_path(
        record,
        rasterizer,
        windowing,
        tz_offset_s,
        model.config.temporal.s_max,
    )?;
    let pass = model.forward_path(&sample.image_refs(), mode)?;
    Ok((sample, pass))
}
