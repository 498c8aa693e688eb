//! Sliding windows over a path and their rendering into generalized images.
//!
//! Channel layout (height x width x channel, row 0 is north):
//! 0 sub-path, 1 traffic along the sub-path, 2 road network, 3 signal nodes.
//! Configurations with fewer than four channels keep the leading ones.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::geo::{
    path_length, pieces_in_span, point_on_edge, PathPiece, PathRecord, RoadNetwork, RoadType,
};
use crate::nn::Tensor;
use crate::scalar::Scalar;
use crate::traffic::TrafficTable;

pub const CH_PATH: usize = 0;
pub const CH_TRAFFIC: usize = 1;
pub const CH_NETWORK: usize = 2;
pub const CH_SIGNALS: usize = 3;
pub const MAX_CHANNELS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowingConfig {
    pub window_km: f64,
    pub step_km: f64,
}

impl Default for WindowingConfig {
    fn default() -> Self {
        Self {
            window_km: 0.5,
            step_km: 0.4,
        }
    }
}

impl WindowingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_km > 0.0 && self.window_km >= self.step_km) {
            return Err(Error::config(format!(
                "window size {} km and step {} km violate w >= s > 0",
                self.window_km, self.step_km
            )));
        }
        Ok(())
    }
}

/// Number of windows for a path: 1 if it fits in one window, else `1 + ceil((L - w) / s)`.
pub fn window_count(length_m: f64, cfg: &WindowingConfig) -> usize {
    let w = cfg.window_km * 1000.0;
    let s = cfg.step_km * 1000.0;
    if length_m <= w {
        1
    } else {
        1 + ((length_m - w) / s - 1e-9).ceil() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubPathWindow {
    pub index: usize,
    /// Distances along the path, meters.
    pub span: (f64, f64),
    pub center: (f64, f64),
}

/// Arithmetic mean of the window's breakpoint coordinates.
pub fn window_center(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    if points.is_empty() {
        return Err(Error::validation("window has no points"));
    }
    let n = points.len() as f64;
    let (sx, sy) = points
        .iter()
        .fold((0.0, 0.0), |(x, y), p| (x + p.0, y + p.1));
    Ok((sx / n, sy / n))
}

/// Entry point, crossed node coordinates and exit point of a span.
fn breakpoints(pieces: &[PathPiece], network: &RoadNetwork) -> Result<Vec<(f64, f64)>> {
    let mut pts = Vec::with_capacity(pieces.len() + 1);
    if let Some(first) = pieces.first() {
        pts.push(point_on_edge(
            network,
            network.edge(first.edge_id)?,
            first.t0,
        )?);
    }
    for p in pieces {
        if p.t1 > p.t0 {
            pts.push(point_on_edge(network, network.edge(p.edge_id)?, p.t1)?);
        }
    }
    Ok(pts)
}

/// Windows `[i*s, i*s + w]` (clipped to the path) covering the whole path.
pub fn slide_windows(
    record: &PathRecord,
    cfg: &WindowingConfig,
    network: &RoadNetwork,
) -> Result<Vec<SubPathWindow>> {
    cfg.validate()?;
    let total = path_length(record, network)?;
    if total <= 0.0 {
        return Err(Error::validation(format!(
            "record {}: zero-length path",
            record.id
        )));
    }
    let w = cfg.window_km * 1000.0;
    let s = cfg.step_km * 1000.0;
    (0..window_count(total, cfg))
        .map(|index| {
            let start = (index as f64 * s).min(total);
            let end = (start + w).min(total);
            let pieces = pieces_in_span(record, network, start, end)?;
            let center = window_center(&breakpoints(&pieces, network)?)?;
            Ok(SubPathWindow {
                index,
                span: (start, end),
                center,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterConfig {
    pub k: usize,
    pub d: usize,
    pub r_lng: f64,
    pub r_lat: f64,
    pub highway_width_px: usize,
    pub other_width_px: usize,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self {
            k: 100,
            d: 4,
            r_lng: 0.0058699,
            r_lat: 0.0044966,
            highway_width_px: 2,
            other_width_px: 1,
        }
    }
}

impl RasterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::config("image size k must be at least 2"));
        }
        if !(1..=MAX_CHANNELS).contains(&self.d) {
            return Err(Error::config(format!(
                "channel count must be 1..={MAX_CHANNELS}"
            )));
        }
        if !(self.r_lng > 0.0 && self.r_lat > 0.0) {
            return Err(Error::config("geographic ranges must be positive"));
        }
        if self.highway_width_px == 0 || self.other_width_px == 0 {
            return Err(Error::config("stroke widths must be at least one pixel"));
        }
        Ok(())
    }

    fn width(&self, road_type: RoadType) -> usize {
        match road_type {
            RoadType::Highway => self.highway_width_px,
            RoadType::Other => self.other_width_px,
        }
    }
}

/// Linear map from the `r_lng x r_lat` area around a center to `[0, k)^2` pixel space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoProjection {
    pub center: (f64, f64),
    pub r_lng: f64,
    pub r_lat: f64,
    pub k: usize,
}

impl GeoProjection {
    pub fn new(center: (f64, f64), cfg: &RasterConfig) -> Self {
        Self {
            center,
            r_lng: cfg.r_lng,
            r_lat: cfg.r_lat,
            k: cfg.k,
        }
    }

    /// Continuous pixel coordinates (x east, y south); the center maps to (k/2, k/2).
    pub fn to_pixel(&self, p: (f64, f64)) -> (f64, f64) {
        let k = self.k as f64;
        let x = (p.0 - (self.center.0 - self.r_lng / 2.0)) / self.r_lng * k;
        let y = ((self.center.1 + self.r_lat / 2.0) - p.1) / self.r_lat * k;
        (x, y)
    }

    /// (min_lng, min_lat, max_lng, max_lat) of the covered area.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        (
            self.center.0 - self.r_lng / 2.0,
            self.center.1 - self.r_lat / 2.0,
            self.center.0 + self.r_lng / 2.0,
            self.center.1 + self.r_lat / 2.0,
        )
    }
}

/// Pixels of one straight segment with the segment parameter of each pixel center.
#[derive(Debug, Clone)]
struct Stroke {
    pixels: Vec<(i64, i64, f64)>,
    len_px: f64,
    x_major: bool,
}

/// Clips `a + t (b - a)` to the box `[lo, hi]^2`, returning the parameter range.
fn clip_segment(a: (f64, f64), b: (f64, f64), lo: f64, hi: f64) -> Option<(f64, f64)> {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let mut t0: f64 = 0.0;
    let mut t1: f64 = 1.0;
    for (p, q) in [
        (-dx, a.0 - lo),
        (dx, hi - a.0),
        (-dy, a.1 - lo),
        (dy, hi - a.1),
    ] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    (t0 <= t1).then_some((t0, t1))
}

/// Integer grid traversal between two pixels (8-connected).
fn bresenham(x0: i64, y0: i64, x1: i64, y1: i64, mut visit: impl FnMut(i64, i64)) {
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        visit(x, y);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

impl Stroke {
    /// The pixel set depends only on the unordered endpoint pair, so an edge and
    /// its reverse twin render identically.
    fn new(p: (f64, f64), q: (f64, f64), k: usize) -> Self {
        let swapped = (q.0, q.1) < (p.0, p.1);
        let (a, b) = if swapped { (q, p) } else { (p, q) };
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len2 = dx * dx + dy * dy;
        let len_px = len2.sqrt();
        let x_major = dx.abs() >= dy.abs();
        let mut pixels = Vec::new();
        let margin = 1.0;
        if let Some((ta, tb)) = clip_segment(a, b, -margin, k as f64 + margin) {
            let ca = (a.0 + ta * dx, a.1 + ta * dy);
            let cb = (a.0 + tb * dx, a.1 + tb * dy);
            let (x0, y0) = (ca.0.floor() as i64, ca.1.floor() as i64);
            let (x1, y1) = (cb.0.floor() as i64, cb.1.floor() as i64);
            bresenham(x0, y0, x1, y1, |x, y| {
                let t = if len2 > 0.0 {
                    ((x as f64 + 0.5 - a.0) * dx + (y as f64 + 0.5 - a.1) * dy) / len2
                } else {
                    0.0
                };
                pixels.push((x, y, if swapped { 1.0 - t } else { t }));
            });
        }
        Self {
            pixels,
            len_px,
            x_major,
        }
    }

    /// Pixels whose parameter lies in `[t0, t1]`, plus the pixels closest to
    /// either end when they are within one pixel of it.
    fn select(&self, t0: f64, t1: f64) -> Vec<(i64, i64)> {
        let mut out: Vec<(i64, i64)> = self
            .pixels
            .iter()
            .filter(|p| p.2 >= t0 && p.2 <= t1)
            .map(|p| (p.0, p.1))
            .collect();
        for target in [t0, t1] {
            let nearest = self
                .pixels
                .iter()
                .min_by(|a, b| (a.2 - target).abs().total_cmp(&(b.2 - target).abs()));
            if let Some(&(x, y, t)) = nearest {
                if (t - target).abs() * self.len_px <= 1.0 {
                    out.push((x, y));
                }
            }
        }
        out
    }

    /// All pixels, widened across the minor axis to `width` pixels.
    fn widened(&self, width: usize) -> impl Iterator<Item = (i64, i64)> + '_ {
        let lo = -((width as i64 - 1) / 2);
        let hi = lo + width as i64;
        let x_major = self.x_major;
        self.pixels.iter().flat_map(move |&(x, y, _)| {
            (lo..hi).map(move |o| if x_major { (x, y + o) } else { (x + o, y) })
        })
    }
}

/// Uniform-grid bucket index over edge bounding boxes and node positions.
#[derive(Debug, Clone)]
pub struct NetworkIndex {
    origin: (f64, f64),
    cell: (f64, f64),
    edges: BTreeMap<(i64, i64), Vec<u64>>,
    nodes: BTreeMap<(i64, i64), Vec<u64>>,
}

impl NetworkIndex {
    pub fn new(network: &RoadNetwork, cell_lng: f64, cell_lat: f64) -> Result<Self> {
        let origin = network
            .nodes
            .values()
            .fold((f64::INFINITY, f64::INFINITY), |acc, n| {
                (acc.0.min(n.lng), acc.1.min(n.lat))
            });
        let origin = if origin.0.is_finite() {
            origin
        } else {
            (0.0, 0.0)
        };
        let mut idx = Self {
            origin,
            cell: (cell_lng, cell_lat),
            edges: BTreeMap::new(),
            nodes: BTreeMap::new(),
        };
        for e in network.edges.values() {
            let (a, b) = network.edge_coords(e)?;
            let ((cx0, cy0), (cx1, cy1)) = (
                idx.cell_of((a.0.min(b.0), a.1.min(b.1))),
                idx.cell_of((a.0.max(b.0), a.1.max(b.1))),
            );
            for cx in cx0..=cx1 {
                for cy in cy0..=cy1 {
                    idx.edges.entry((cx, cy)).or_default().push(e.id);
                }
            }
        }
        for n in network.nodes.values() {
            let c = idx.cell_of(n.coord());
            idx.nodes.entry(c).or_default().push(n.id);
        }
        Ok(idx)
    }

    fn cell_of(&self, p: (f64, f64)) -> (i64, i64) {
        (
            ((p.0 - self.origin.0) / self.cell.0).floor() as i64,
            ((p.1 - self.origin.1) / self.cell.1).floor() as i64,
        )
    }

    fn query(
        map: &BTreeMap<(i64, i64), Vec<u64>>,
        lo: (i64, i64),
        hi: (i64, i64),
    ) -> BTreeSet<u64> {
        let mut out = BTreeSet::new();
        for cx in lo.0..=hi.0 {
            for ((_, _), ids) in map.range((cx, lo.1)..=(cx, hi.1)) {
                out.extend(ids.iter().copied());
            }
        }
        out
    }

    /// Edges whose bounding box may intersect the given (min_lng, min_lat, max_lng, max_lat) box.
    pub fn edges_in(&self, b: (f64, f64, f64, f64)) -> BTreeSet<u64> {
        Self::query(
            &self.edges,
            self.cell_of((b.0, b.1)),
            self.cell_of((b.2, b.3)),
        )
    }

    pub fn nodes_in(&self, b: (f64, f64, f64, f64)) -> BTreeSet<u64> {
        Self::query(
            &self.nodes,
            self.cell_of((b.0, b.1)),
            self.cell_of((b.2, b.3)),
        )
    }
}

/// A `k x k x d` raster of one sub-path window, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizedImage<T> {
    pub tensor: Tensor<T>,
}

impl<T: Scalar> GeneralizedImage<T> {
    pub fn zeros(k: usize, d: usize) -> Self {
        Self {
            tensor: Tensor::zeros(&[k, k, d]),
        }
    }

    pub fn k(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn d(&self) -> usize {
        self.tensor.shape()[2]
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> T {
        let (k, d) = (self.k(), self.d());
        self.tensor.data()[(y * k + x) * d + c]
    }

    fn set(&mut self, x: i64, y: i64, c: usize, v: T) {
        let (k, d) = (self.k() as i64, self.d());
        if c < d && (0..k).contains(&x) && (0..k).contains(&y) {
            self.tensor.data_mut()[(y * k + x) as usize * d + c] = v;
        }
    }

    /// Pixel coordinates (x, y) with a nonzero value in channel `c`.
    pub fn nonzero(&self, c: usize) -> BTreeSet<(usize, usize)> {
        let k = self.k();
        let mut out = BTreeSet::new();
        for y in 0..k {
            for x in 0..k {
                if self.get(x, y, c) != T::zero() {
                    out.insert((x, y));
                }
            }
        }
        out
    }
}

/// Renders windows of paths on one network with one traffic table.
pub struct Rasterizer<'a> {
    network: &'a RoadNetwork,
    traffic: &'a TrafficTable,
    cfg: RasterConfig,
    index: NetworkIndex,
}

impl<'a> Rasterizer<'a> {
    pub fn new(
        network: &'a RoadNetwork,
        traffic: &'a TrafficTable,
        cfg: RasterConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let index = NetworkIndex::new(network, cfg.r_lng, cfg.r_lat)?;
        Ok(Self {
            network,
            traffic,
            cfg,
            index,
        })
    }

    pub fn config(&self) -> &RasterConfig {
        &self.cfg
    }

    pub fn network(&self) -> &RoadNetwork {
        self.network
    }

    fn edge_stroke(&self, proj: &GeoProjection, edge_id: u64) -> Result<(Stroke, RoadType)> {
        let edge = self.network.edge(edge_id)?;
        let (a, b) = self.network.edge_coords(edge)?;
        Ok((
            Stroke::new(proj.to_pixel(a), proj.to_pixel(b), self.cfg.k),
            edge.road_type,
        ))
    }

    /// Renders one window. Traffic is read at `hour` for every covered edge.
    pub fn rasterize<T: Scalar>(
        &self,
        window: &SubPathWindow,
        record: &PathRecord,
        hour: u8,
    ) -> Result<GeneralizedImage<T>> {
        let cfg = &self.cfg;
        let proj = GeoProjection::new(window.center, cfg);
        let mut img = GeneralizedImage::zeros(cfg.k, cfg.d);
        let pieces = pieces_in_span(record, self.network, window.span.0, window.span.1)?;

        // Reverse order: where pieces overlap, the one nearest the window entry wins.
        for piece in pieces.iter().rev() {
            let (stroke, _) = self.edge_stroke(&proj, piece.edge_id)?;
            let speed = T::from_f64_lossy(self.traffic.normalized_speed(piece.edge_id, hour));
            for (x, y) in stroke.select(piece.t0, piece.t1) {
                img.set(x, y, CH_PATH, T::one());
                img.set(x, y, CH_TRAFFIC, speed);
            }
        }

        let (x0, y0, x1, y1) = proj.bounds();
        let (mx, my) = (cfg.r_lng / cfg.k as f64, cfg.r_lat / cfg.k as f64);
        let search = (x0 - mx, y0 - my, x1 + mx, y1 + my);
        if cfg.d > CH_NETWORK {
            for edge_id in self.index.edges_in(search) {
                let (stroke, road_type) = self.edge_stroke(&proj, edge_id)?;
                for (x, y) in stroke.widened(cfg.width(road_type)) {
                    img.set(x, y, CH_NETWORK, T::one());
                }
            }
        }
        if cfg.d > CH_SIGNALS {
            for node_id in self.index.nodes_in(search) {
                let node = self.network.node(node_id)?;
                if node.node_type.is_signal() {
                    let (px, py) = proj.to_pixel(node.coord());
                    img.set(px.floor() as i64, py.floor() as i64, CH_SIGNALS, T::one());
                }
            }
        }
        Ok(img)
    }
}

/// One-shot rendering without a reusable index.
pub fn rasterize<T: Scalar>(
    window: &SubPathWindow,
    record: &PathRecord,
    network: &RoadNetwork,
    traffic: &TrafficTable,
    cfg: &RasterConfig,
    hour: u8,
) -> Result<GeneralizedImage<T>> {
    Rasterizer::new(network, traffic, *cfg)?.rasterize(window, record, hour)
}

/// File name of a per-channel debug dump.
pub fn dump_file_name(record_id: u64, window_index: usize, channel: usize) -> String {
    format!("{record_id}_{window_index}_{channel}.ppm")
}

/// Writes a `k x k` grid of values in [0, 1] as a binary (P6) grey pixmap.
pub fn write_gray_ppm<W: Write>(
    mut w: W,
    width: usize,
    height: usize,
    values: &[f64],
) -> Result<()> {
    if values.len() != width * height {
        return Err(Error::shape("pixmap size does not match its values"));
    }
    write!(w, "P6\n{width} {height}\n255\n")?;
    let mut buf = Vec::with_capacity(values.len() * 3);
    for &v in values {
        let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        buf.extend_from_slice(&[g, g, g]);
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

/// Debug dump of one channel.
pub fn write_channel_ppm<T: Scalar, W: Write>(
    img: &GeneralizedImage<T>,
    channel: usize,
    w: W,
) -> Result<()> {
    let k = img.k();
    if channel >= img.d() {
        return Err(Error::shape(format!("channel {channel} out of range")));
    }
    let values: Vec<f64> = (0..k * k)
        .map(|i| img.get(i % k, i / k, channel).as_f64())
        .collect();
    write_gray_ppm(w, k, k, &values)
}

/// Tensor batch: little-endian u32 header `k, d, n`, then `n` row-major
/// `k x k x d` tensors as little-endian f32.
pub fn write_tensor_batch<T: Scalar, W: Write>(
    mut w: W,
    images: &[GeneralizedImage<T>],
) -> Result<()> {
    let (k, d) = match images.first() {
        Some(img) => (img.k(), img.d()),
        None => (0, 0),
    };
    for v in [k, d, images.len()] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    for img in images {
        if img.k() != k || img.d() != d {
            return Err(Error::shape("tensor batch mixes image sizes"));
        }
        for v in img.tensor.data() {
            w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_tensor_batch<R: Read>(mut r: R) -> Result<Vec<GeneralizedImage<f32>>> {
    let mut word = [0u8; 4];
    let mut header = [0usize; 3];
    for h in header.iter_mut() {
        r.read_exact(&mut word)?;
        *h = u32::from_le_bytes(word) as usize;
    }
    let [k, d, n] = header;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut data = Vec::with_capacity(k * k * d);
        for _ in 0..k * k * d {
            r.read_exact(&mut word)?;
            data.push(f32::from_le_bytes(word));
        }
        out.push(GeneralizedImage {
            tensor: Tensor::from_vec(&[k, k, d], data)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{Anchor, NodeType, PathSegment, EARTH_RADIUS_M};

    fn deg(m: f64) -> f64 {
        (m / EARTH_RADIUS_M).to_degrees()
    }

    #[test]
    fn window_counts() {
        let cfg = WindowingConfig::default();
        assert_eq!(window_count(300.0, &cfg), 1);
        assert_eq!(window_count(1200.0, &cfg), 3);
        assert_eq!(window_count(6373.0, &cfg), 16);
        assert_eq!(window_count(500.0, &cfg), 1);
        assert_eq!(window_count(900.0, &cfg), 2);
    }

    #[test]
    fn invalid_windowing_rejected() {
        assert!(WindowingConfig {
            window_km: 0.3,
            step_km: 0.4
        }
        .validate()
        .is_err());
        assert!(WindowingConfig {
            window_km: 0.3,
            step_km: 0.0
        }
        .validate()
        .is_err());
    }

    #[test]
    fn centers() {
        assert_eq!(
            window_center(&[(0.0, 0.0), (0.002, 0.0)]).unwrap(),
            (0.001, 0.0)
        );
        let c = window_center(&[(0.0, 0.0), (0.002, 0.0), (0.002, 0.002)]).unwrap();
        assert!((c.0 - 0.002 * 2.0 / 3.0).abs() < 1e-15 && (c.1 - 0.002 / 3.0).abs() < 1e-15);
        assert_eq!(window_center(&[(0.5, 0.25)]).unwrap(), (0.5, 0.25));
        assert!(window_center(&[]).is_err());
    }

    /// North-south line of `n` edges through the origin plus a crossing street.
    fn cross_network() -> RoadNetwork {
        let mut net = RoadNetwork::new();
        let step = deg(100.0);
        for i in 0..5 {
            net.add_node(i, 0.0, (i as f64 - 2.0) * step, NodeType::Plain)
                .unwrap();
        }
        net.add_node(10, -step, 0.0, NodeType::TrafficLight)
            .unwrap();
        net.add_node(11, step, 0.0, NodeType::StopSign).unwrap();
        for i in 0..4 {
            net.add_edge(i, i, i + 1, RoadType::Other).unwrap();
        }
        net.add_edge(20, 10, 2, RoadType::Highway).unwrap();
        net.add_edge(21, 2, 11, RoadType::Highway).unwrap();
        net
    }

    fn straight_record(net: &RoadNetwork) -> PathRecord {
        let len: f64 = (0..4).map(|e| net.edges[&e].length_m).sum();
        PathRecord {
            id: 3,
            path: (0..4).map(PathSegment::full).collect(),
            departure_time: 8.0 * 3600.0,
            anchors: vec![
                Anchor {
                    dist_m: 0.0,
                    time_s: 8.0 * 3600.0,
                },
                Anchor {
                    dist_m: len,
                    time_s: 8.0 * 3600.0 + 40.0,
                },
            ],
            raw_length_m: None,
        }
    }

    fn table(net: &RoadNetwork, speed: f64, max: f64) -> TrafficTable {
        let speeds = net.edges.keys().map(|&e| ((e, 8u8), speed)).collect();
        TrafficTable::from_speeds(speeds, net, Some(max)).unwrap()
    }

    #[test]
    fn vertical_path_through_center_is_one_column() {
        let net = cross_network();
        let rec = straight_record(&net);
        let cfg = RasterConfig::default();
        let windows = slide_windows(&rec, &WindowingConfig::default(), &net).unwrap();
        assert_eq!(windows.len(), 1);
        assert_eq!(windows[0].center.0, 0.0);
        let img: GeneralizedImage<f64> =
            rasterize(&windows[0], &rec, &net, &table(&net, 5.0, 10.0), &cfg, 8).unwrap();
        let ch0 = img.nonzero(CH_PATH);
        assert!(!ch0.is_empty());
        assert!(ch0.iter().all(|&(x, _)| x == 50));
        let ch1 = img.nonzero(CH_TRAFFIC);
        assert_eq!(ch1, ch0);
        assert!(ch1.iter().all(|&(x, y)| img.get(x, y, CH_TRAFFIC) == 0.5));
        assert!(ch0.is_subset(&img.nonzero(CH_NETWORK)));
        // the crossing street is a highway: two rows thick
        let rows: BTreeSet<usize> = img
            .nonzero(CH_NETWORK)
            .iter()
            .filter(|p| p.0 == 40)
            .map(|p| p.1)
            .collect();
        assert_eq!(rows.len(), 2);
        assert_eq!(img.nonzero(CH_SIGNALS).len(), 2);
    }

    #[test]
    fn path_only_network_matches_path_channel() {
        let mut net = RoadNetwork::new();
        let step = deg(100.0);
        for i in 0..4 {
            net.add_node(i, 0.0, i as f64 * step, NodeType::Plain)
                .unwrap();
        }
        for i in 0..3 {
            net.add_edge(i, i, i + 1, RoadType::Other).unwrap();
        }
        let len: f64 = net.edges.values().map(|e| e.length_m).sum();
        let rec = PathRecord {
            id: 0,
            path: (0..3).map(PathSegment::full).collect(),
            departure_time: 0.0,
            anchors: vec![(0.0, 0.0).into(), (len, 30.0).into()],
            raw_length_m: None,
        };
        let w = &slide_windows(&rec, &WindowingConfig::default(), &net).unwrap()[0];
        let img: GeneralizedImage<f64> = rasterize(
            w,
            &rec,
            &net,
            &table(&net, 5.0, 10.0),
            &RasterConfig::default(),
            0,
        )
        .unwrap();
        assert_eq!(img.nonzero(CH_PATH), img.nonzero(CH_NETWORK));
    }

    #[test]
    fn rendering_is_deterministic() {
        let net = cross_network();
        let rec = straight_record(&net);
        let t = table(&net, 5.0, 10.0);
        let w = &slide_windows(
            &rec,
            &WindowingConfig {
                window_km: 0.2,
                step_km: 0.1,
            },
            &net,
        )
        .unwrap()[1];
        let a: GeneralizedImage<f32> =
            rasterize(w, &rec, &net, &t, &RasterConfig::default(), 8).unwrap();
        let b: GeneralizedImage<f32> =
            rasterize(w, &rec, &net, &t, &RasterConfig::default(), 8).unwrap();
        assert_eq!(a.tensor.data(), b.tensor.data());
    }

    #[test]
    fn fewer_channels_keep_leading_layers() {
        let net = cross_network();
        let rec = straight_record(&net);
        let w = &slide_windows(&rec, &WindowingConfig::default(), &net).unwrap()[0];
        let cfg = RasterConfig {
            d: 2,
            ..RasterConfig::default()
        };
        let img: GeneralizedImage<f64> =
            rasterize(w, &rec, &net, &table(&net, 5.0, 10.0), &cfg, 8).unwrap();
        assert_eq!(img.d(), 2);
        assert!(!img.nonzero(CH_TRAFFIC).is_empty());
    }

    #[test]
    fn clip_rejects_outside_segments() {
        assert!(clip_segment((-5.0, -5.0), (-3.0, -1.0), 0.0, 10.0).is_none());
        let (t0, t1) = clip_segment((-5.0, 5.0), (15.0, 5.0), 0.0, 10.0).unwrap();
        assert!((t0 - 0.25).abs() < 1e-12 && (t1 - 0.75).abs() < 1e-12);
    }

    #[test]
    fn reverse_strokes_share_pixels() {
        let a = Stroke::new((1.3, 2.7), (17.9, 9.2), 20);
        let b = Stroke::new((17.9, 9.2), (1.3, 2.7), 20);
        let pa: Vec<_> = a.pixels.iter().map(|p| (p.0, p.1)).collect();
        let pb: Vec<_> = b.pixels.iter().map(|p| (p.0, p.1)).collect();
        assert_eq!(pa, pb);
        for (x, y) in [a.pixels.first(), a.pixels.last()]
            .into_iter()
            .flatten()
            .map(|p| (p.0, p.1))
        {
            assert!(x >= 1 && y >= 2);
        }
    }

    #[test]
    fn ppm_and_tensor_batch() {
        let mut img: GeneralizedImage<f64> = GeneralizedImage::zeros(3, 2);
        img.set(1, 2, 0, 1.0);
        img.set(0, 0, 1, 0.5);
        let mut buf = Vec::new();
        write_channel_ppm(&img, 0, &mut buf).unwrap();
        assert!(buf.starts_with(b"P6\n3 3\n255\n"));
        assert_eq!(buf.len(), 11 + 27);
        assert_eq!(buf[11 + (2 * 3 + 1) * 3], 255);
        assert_eq!(dump_file_name(4, 2, 1), "4_2_1.ppm");

        let mut bytes = Vec::new();
        write_tensor_batch(&mut bytes, &[img.clone(), img.clone()]).unwrap();
        assert_eq!(&bytes[..12], &[3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0]);
        let back = read_tensor_batch(bytes.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].tensor.data(), img.tensor.cast::<f32>().data());
    }
}
