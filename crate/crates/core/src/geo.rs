//! Road networks, matched paths and their timing anchors.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Shortest and longest accepted trip duration, seconds.
pub const MIN_TRAVEL_TIME_S: f64 = 60.0;
pub const MAX_TRAVEL_TIME_S: f64 = 3600.0;
/// Accepted relative deviation between matched and raw trajectory length.
pub const MAX_LENGTH_DEVIATION: f64 = 0.10;

const DISTANCE_EPS_M: f64 = 1e-6;

/// Equirectangular distance in meters between two (lng, lat) points in degrees.
///
/// `d = R * sqrt((dlng * cos(mean_lat))^2 + dlat^2)`, angles in radians.
/// Symmetric in its arguments.
pub fn equirectangular_m(a: (f64, f64), b: (f64, f64)) -> f64 {
    let mean_lat = ((a.1 + b.1) * 0.5).to_radians();
    let x = (b.0 - a.0).to_radians() * mean_lat.cos();
    let y = (b.1 - a.1).to_radians();
    EARTH_RADIUS_M * (x * x + y * y).sqrt()
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum NodeType {
    #[default]
    Plain,
    TrafficLight,
    StopSign,
    Crossing,
}

impl NodeType {
    pub const ALL: [NodeType; 4] = [
        NodeType::Plain,
        NodeType::TrafficLight,
        NodeType::StopSign,
        NodeType::Crossing,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NodeType::Plain => "plain",
            NodeType::TrafficLight => "traffic_light",
            NodeType::StopSign => "stop_sign",
            NodeType::Crossing => "crossing",
        }
    }

    /// Anything that is not a plain intersection.
    pub fn is_signal(self) -> bool {
        self != NodeType::Plain
    }

    /// Lenient parse: unknown labels collapse to `Plain`.
    pub fn parse_lenient(s: &str) -> Self {
        match s.trim().to_ascii_lowercase().as_str() {
            "traffic_light" | "traffic_signals" => NodeType::TrafficLight,
            "stop_sign" | "stop" => NodeType::StopSign,
            "crossing" => NodeType::Crossing,
            _ => NodeType::Plain,
        }
    }
}

impl fmt::Display for NodeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoadType {
    Highway,
    Other,
}

impl RoadType {
    pub fn as_str(self) -> &'static str {
        match self {
            RoadType::Highway => "highway",
            RoadType::Other => "other",
        }
    }
}

impl fmt::Display for RoadType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RoadType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "highway" => Ok(RoadType::Highway),
            "other" => Ok(RoadType::Other),
            other => Err(Error::parse(format!("unknown road type {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub id: u64,
    pub lng: f64,
    pub lat: f64,
    pub node_type: NodeType,
}

impl Node {
    pub fn coord(&self) -> (f64, f64) {
        (self.lng, self.lat)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub id: u64,
    pub start_node: u64,
    pub end_node: u64,
    pub road_type: RoadType,
    pub length_m: f64,
}

/// Directed road graph. Ordered maps keep every traversal deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoadNetwork {
    pub nodes: BTreeMap<u64, Node>,
    pub edges: BTreeMap<u64, Edge>,
}

impl RoadNetwork {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, id: u64, lng: f64, lat: f64, node_type: NodeType) -> Result<()> {
        if !(-180.0..=180.0).contains(&lng) || !(-90.0..=90.0).contains(&lat) {
            return Err(Error::validation(format!(
                "node {id}: coordinate ({lng}, {lat}) out of range"
            )));
        }
        if self
            .nodes
            .insert(
                id,
                Node {
                    id,
                    lng,
                    lat,
                    node_type,
                },
            )
            .is_some()
        {
            return Err(Error::validation(format!("duplicate node id {id}")));
        }
        Ok(())
    }

    /// Adds an edge; its length is the equirectangular distance between its endpoints.
    pub fn add_edge(
        &mut self,
        id: u64,
        start_node: u64,
        end_node: u64,
        road_type: RoadType,
    ) -> Result<()> {
        if start_node == end_node {
            return Err(Error::validation(format!("edge {id} is a self loop")));
        }
        let s = self.node(start_node)?;
        let e = self.node(end_node)?;
        let length_m = equirectangular_m(s.coord(), e.coord());
        if length_m <= 0.0 {
            return Err(Error::validation(format!("edge {id} has zero length")));
        }
        if self.edges.contains_key(&id) {
            return Err(Error::validation(format!("duplicate edge id {id}")));
        }
        self.edges.insert(
            id,
            Edge {
                id,
                start_node,
                end_node,
                road_type,
                length_m,
            },
        );
        Ok(())
    }

    pub fn node(&self, id: u64) -> Result<&Node> {
        self.nodes
            .get(&id)
            .ok_or_else(|| Error::validation(format!("unknown node id {id}")))
    }

    pub fn edge(&self, id: u64) -> Result<&Edge> {
        self.edges
            .get(&id)
            .ok_or_else(|| Error::validation(format!("unknown edge id {id}")))
    }

    /// Endpoint coordinates of an edge.
    pub fn edge_coords(&self, edge: &Edge) -> Result<((f64, f64), (f64, f64))> {
        Ok((
            self.node(edge.start_node)?.coord(),
            self.node(edge.end_node)?.coord(),
        ))
    }

    /// Outgoing edges per node id.
    pub fn adjacency(&self) -> BTreeMap<u64, Vec<u64>> {
        let mut adj: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
        for e in self.edges.values() {
            adj.entry(e.start_node).or_default().push(e.id);
        }
        adj
    }

    /// Edge from `start` to `end`, if any.
    pub fn find_edge(&self, start: u64, end: u64) -> Option<&Edge> {
        self.edges
            .values()
            .find(|e| e.start_node == start && e.end_node == end)
    }
}

/// One (possibly partial) road segment of a path: covered fraction `[from, to]`
/// measured along the edge direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(u64, f64, f64)", into = "(u64, f64, f64)")]
pub struct PathSegment {
    pub edge_id: u64,
    pub from: f64,
    pub to: f64,
}

impl PathSegment {
    pub fn full(edge_id: u64) -> Self {
        Self {
            edge_id,
            from: 0.0,
            to: 1.0,
        }
    }
}

impl From<(u64, f64, f64)> for PathSegment {
    fn from((edge_id, from, to): (u64, f64, f64)) -> Self {
        Self { edge_id, from, to }
    }
}

impl From<PathSegment> for (u64, f64, f64) {
    fn from(s: PathSegment) -> Self {
        (s.edge_id, s.from, s.to)
    }
}

/// Timing anchor: arc length along the path and the epoch timestamp at that point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(f64, f64)", into = "(f64, f64)")]
pub struct Anchor {
    pub dist_m: f64,
    pub time_s: f64,
}

impl From<(f64, f64)> for Anchor {
    fn from((dist_m, time_s): (f64, f64)) -> Self {
        Self { dist_m, time_s }
    }
}

impl From<Anchor> for (f64, f64) {
    fn from(a: Anchor) -> Self {
        (a.dist_m, a.time_s)
    }
}

/// A map-matched path with the timing of its source trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    #[serde(default)]
    pub id: u64,
    pub path: Vec<PathSegment>,
    /// Epoch seconds.
    pub departure_time: f64,
    pub anchors: Vec<Anchor>,
    /// Length of the raw (unmatched) trajectory; absent means "same as matched".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_length_m: Option<f64>,
}

impl PathRecord {
    /// Travel time: last anchor timestamp minus first anchor timestamp.
    pub fn total_time_s(&self) -> f64 {
        match (self.anchors.first(), self.anchors.last()) {
            (Some(a), Some(b)) => b.time_s - a.time_s,
            _ => 0.0,
        }
    }

    /// Checks path structure against the network and the anchor ordering.
    pub fn validate(&self, network: &RoadNetwork) -> Result<()> {
        let n = self.path.len();
        if n == 0 {
            return Err(Error::validation(format!("record {}: empty path", self.id)));
        }
        let mut prev_end: Option<u64> = None;
        for (i, seg) in self.path.iter().enumerate() {
            let edge = network.edge(seg.edge_id)?;
            if !(0.0..=1.0).contains(&seg.from)
                || !(0.0..=1.0).contains(&seg.to)
                || seg.from >= seg.to
            {
                return Err(Error::validation(format!(
                    "record {}: segment {i} has invalid fractions [{}, {}]",
                    self.id, seg.from, seg.to
                )));
            }
            if (i > 0 && seg.from != 0.0) || (i + 1 < n && seg.to != 1.0) {
                return Err(Error::validation(format!(
                    "record {}: only the first and last segment may be partial",
                    self.id
                )));
            }
            if let Some(p) = prev_end {
                if p != edge.start_node {
                    return Err(Error::validation(format!(
                        "record {}: segment {i} is not connected to its predecessor",
                        self.id
                    )));
                }
            }
            prev_end = Some(edge.end_node);
        }
        if self.anchors.len() < 2 {
            return Err(Error::validation(format!(
                "record {}: fewer than two anchors",
                self.id
            )));
        }
        for w in self.anchors.windows(2) {
            if !(w[1].dist_m > w[0].dist_m && w[1].time_s > w[0].time_s) {
                return Err(Error::validation(format!(
                    "record {}: anchors are not strictly increasing",
                    self.id
                )));
            }
        }
        Ok(())
    }

    fn interpolate_time(&self, dist_m: f64) -> f64 {
        let a = &self.anchors;
        let first = a[0];
        let last = a[a.len() - 1];
        if dist_m <= first.dist_m {
            return first.time_s;
        }
        if dist_m >= last.dist_m {
            return last.time_s;
        }
        // first index whose distance exceeds dist_m; 1 <= hi < len
        let hi = a.partition_point(|p| p.dist_m <= dist_m);
        let (p, q) = (a[hi - 1], a[hi]);
        let frac = (dist_m - p.dist_m) / (q.dist_m - p.dist_m);
        p.time_s + frac * (q.time_s - p.time_s)
    }

    /// Epoch timestamp at a distance along the path, clamped to the anchored span.
    pub fn time_at(&self, dist_m: f64) -> Result<f64> {
        if self.anchors.is_empty() {
            return Err(Error::validation(format!("record {}: no anchors", self.id)));
        }
        Ok(self.interpolate_time(dist_m))
    }
}

/// Sum of covered edge lengths.
pub fn path_length(record: &PathRecord, network: &RoadNetwork) -> Result<f64> {
    if record.path.is_empty() {
        return Err(Error::validation(format!(
            "record {}: empty path",
            record.id
        )));
    }
    record.path.iter().try_fold(0.0, |acc, seg| {
        let edge = network.edge(seg.edge_id)?;
        Ok(acc + edge.length_m * (seg.to - seg.from))
    })
}

/// Travel time over `[start_m, end_m]` assuming constant speed between consecutive anchors.
///
/// Span ends outside the anchored range are clamped to it.
pub fn subpath_ground_truth(record: &PathRecord, span: (f64, f64)) -> Result<f64> {
    let (start_m, end_m) = span;
    if record.anchors.len() < 2 {
        return Err(Error::validation(format!(
            "record {}: fewer than two anchors",
            record.id
        )));
    }
    if !(start_m < end_m) {
        return Err(Error::validation(format!(
            "empty span [{start_m}, {end_m}]"
        )));
    }
    Ok(record.interpolate_time(end_m) - record.interpolate_time(start_m))
}

/// The part of one path segment that falls inside a distance span.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathPiece {
    pub segment_index: usize,
    pub edge_id: u64,
    /// Edge parameters (0 = start node, 1 = end node) of the covered part.
    pub t0: f64,
    pub t1: f64,
    /// Distances along the path of the covered part.
    pub start_m: f64,
    pub end_m: f64,
}

/// Pieces of the path covering `[start_m, end_m]`, in path order.
///
/// A zero-length span yields a single degenerate piece at that location.
pub fn pieces_in_span(
    record: &PathRecord,
    network: &RoadNetwork,
    start_m: f64,
    end_m: f64,
) -> Result<Vec<PathPiece>> {
    let total = path_length(record, network)?;
    if start_m < -DISTANCE_EPS_M || end_m > total + DISTANCE_EPS_M || start_m > end_m {
        return Err(Error::validation(format!(
            "span [{start_m}, {end_m}] outside path of length {total}"
        )));
    }
    let start_m = start_m.max(0.0);
    let end_m = end_m.min(total);
    let mut pieces = Vec::new();
    let mut offset = 0.0;
    let last = record.path.len() - 1;
    for (i, seg) in record.path.iter().enumerate() {
        let edge = network.edge(seg.edge_id)?;
        let seg_len = edge.length_m * (seg.to - seg.from);
        let seg_end = if i == last { total } else { offset + seg_len };
        let lo = start_m.max(offset);
        let hi = end_m.min(seg_end);
        let touches = lo < hi || (start_m == end_m && lo == hi && (start_m < seg_end || i == last));
        if touches {
            let to_param = |d: f64| -> f64 {
                if d >= seg_end {
                    seg.to
                } else if d <= offset {
                    seg.from
                } else {
                    (seg.from + (d - offset) / edge.length_m).min(seg.to)
                }
            };
            pieces.push(PathPiece {
                segment_index: i,
                edge_id: seg.edge_id,
                t0: to_param(lo),
                t1: to_param(hi),
                start_m: lo,
                end_m: hi,
            });
            if start_m == end_m {
                break;
            }
        }
        offset = seg_end;
        if offset >= end_m && !pieces.is_empty() {
            break;
        }
    }
    Ok(pieces)
}

/// Point on an edge at parameter `t`; exact node coordinates at 0 and 1.
pub fn point_on_edge(network: &RoadNetwork, edge: &Edge, t: f64) -> Result<(f64, f64)> {
    let (a, b) = network.edge_coords(edge)?;
    Ok(if t <= 0.0 {
        a
    } else if t >= 1.0 {
        b
    } else {
        (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1))
    })
}

/// Geographic point at an arc length along the path (edges are straight lines).
pub fn locate(record: &PathRecord, network: &RoadNetwork, distance_m: f64) -> Result<(f64, f64)> {
    let pieces = pieces_in_span(record, network, distance_m, distance_m)?;
    let piece = pieces
        .first()
        .ok_or_else(|| Error::validation(format!("distance {distance_m} not on path")))?;
    point_on_edge(network, network.edge(piece.edge_id)?, piece.t0)
}

/// Keeps records whose travel time lies in [60 s, 3600 s] and whose matched
/// length is within ±10% (inclusive) of the raw trajectory length.
/// Structurally invalid records are dropped as well.
pub fn filter_dataset(records: &[PathRecord], network: &RoadNetwork) -> Vec<PathRecord> {
    records
        .iter()
        .filter(|r| keep_record(r, network))
        .cloned()
        .collect()
}

fn keep_record(record: &PathRecord, network: &RoadNetwork) -> bool {
    if record.validate(network).is_err() {
        return false;
    }
    let t = record.total_time_s();
    if !(MIN_TRAVEL_TIME_S..=MAX_TRAVEL_TIME_S).contains(&t) {
        return false;
    }
    let Ok(matched) = path_length(record, network) else {
        return false;
    };
    match record.raw_length_m {
        Some(raw) if raw > 0.0 => (matched - raw).abs() / raw <= MAX_LENGTH_DEVIATION + 1e-12,
        Some(_) => false,
        None => true,
    }
}

/// Dataset summary in the style of "number of paths / moving distance mean / travel time mean".
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetStats {
    pub count: usize,
    pub mean_distance_km: f64,
    pub mean_time_s: f64,
}

pub fn dataset_stats(records: &[PathRecord], network: &RoadNetwork) -> Result<DatasetStats> {
    let count = records.len();
    if count == 0 {
        return Ok(DatasetStats {
            count,
            mean_distance_km: 0.0,
            mean_time_s: 0.0,
        });
    }
    let mut dist = 0.0;
    let mut time = 0.0;
    for r in records {
        dist += path_length(r, network)?;
        time += r.total_time_s();
    }
    Ok(DatasetStats {
        count,
        mean_distance_km: dist / count as f64 / 1000.0,
        mean_time_s: time / count as f64,
    })
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "# of paths: {} | moving distance mean: {:.3} km | travel time mean: {:.3} sec",
            self.count, self.mean_distance_km, self.mean_time_s
        )
    }
}
