//! Synthetic lattice city with a closed-form travel-time law.
//!
//! Edge time is `covered length / (base_speed(type) * multiplier(hour))` at the
//! departure hour, plus a fixed delay at every non-plain node the path enters.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geo::{
    path_length, Anchor, Edge, NodeType, PathRecord, PathSegment, RoadNetwork, RoadType,
    EARTH_RADIUS_M,
};
use crate::model::splitmix;
use crate::traffic::{local_hour, TrafficTable};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Nodes per side of the lattice.
    pub grid: usize,
    pub spacing_m: f64,
    pub highway_rows: Vec<usize>,
    pub highway_cols: Vec<usize>,
    pub highway_speed_mps: f64,
    pub other_speed_mps: f64,
    /// Speed multiplier per local hour.
    pub hourly_multipliers: Vec<f64>,
    /// Fraction of nodes given a non-plain type.
    pub signal_fraction: f64,
    pub signal_delay_s: f64,
    pub seed: u64,
    pub num_paths: usize,
    /// Route length in edges, inclusive bounds.
    pub min_edges: usize,
    pub max_edges: usize,
    /// South-west corner (lng, lat).
    pub origin: (f64, f64),
    /// Departures are uniform over `[start_epoch, start_epoch + span_days days)`.
    pub start_epoch: f64,
    pub span_days: f64,
    pub tz_offset_s: i64,
}

/// Rush hours at 8h and 18h slow traffic to about half speed.
pub fn default_hourly_multipliers() -> Vec<f64> {
    (0..24)
        .map(|h| {
            let h = h as f64;
            let dip = |c: f64| 0.5 * (-(h - c) * (h - c) / 4.0).exp();
            1.0 - dip(8.0) - dip(18.0) + if h < 5.0 { 0.1 } else { 0.0 }
        })
        .collect()
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            grid: 20,
            spacing_m: 100.0,
            highway_rows: vec![10],
            highway_cols: vec![10],
            highway_speed_mps: 20.0,
            other_speed_mps: 10.0,
            hourly_multipliers: default_hourly_multipliers(),
            signal_fraction: 0.35,
            signal_delay_s: 5.0,
            seed: 0,
            num_paths: 1000,
            min_edges: 8,
            max_edges: 30,
            origin: (-8.62, 41.14),
            start_epoch: 1_372_636_800.0,
            span_days: 7.0,
            tz_offset_s: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid < 2 {
            return Err(Error::config("grid needs at least 2 nodes per side"));
        }
        if !(self.spacing_m > 0.0 && self.highway_speed_mps > 0.0 && self.other_speed_mps > 0.0) {
            return Err(Error::config("spacing and speeds must be positive"));
        }
        if self.hourly_multipliers.len() != 24
            || self.hourly_multipliers.iter().any(|&m| !(m > 0.0))
        {
            return Err(Error::config("need 24 positive hourly multipliers"));
        }
        if !(0.0..=1.0).contains(&self.signal_fraction) || self.signal_delay_s < 0.0 {
            return Err(Error::config(
                "signal fraction must be in [0, 1] and delay non-negative",
            ));
        }
        if self.min_edges < 2 || self.min_edges > self.max_edges {
            return Err(Error::config(
                "route length bounds need 2 <= min_edges <= max_edges",
            ));
        }
        if self
            .highway_rows
            .iter()
            .chain(&self.highway_cols)
            .any(|&i| i >= self.grid)
        {
            return Err(Error::config("highway row or column outside the grid"));
        }
        if !(self.span_days >= 0.0) {
            return Err(Error::config("span_days must be non-negative"));
        }
        Ok(())
    }

    pub fn base_speed(&self, road_type: RoadType) -> f64 {
        match road_type {
            RoadType::Highway => self.highway_speed_mps,
            RoadType::Other => self.other_speed_mps,
        }
    }

    fn node_id(&self, row: usize, col: usize) -> u64 {
        (row * self.grid + col) as u64
    }
}

/// `g x g` lattice with two directed edges per adjacent pair.
pub fn generate_network(cfg: &SynthConfig) -> Result<RoadNetwork> {
    cfg.validate()?;
    let g = cfg.grid;
    let dlat = (cfg.spacing_m / EARTH_RADIUS_M).to_degrees();
    let dlng = dlat / cfg.origin.1.to_radians().cos();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_signals = (cfg.signal_fraction * (g * g) as f64).round() as usize;
    let mut ids: Vec<u64> = (0..(g * g) as u64).collect();
    ids.shuffle(&mut rng);
    let signal_types = [
        NodeType::TrafficLight,
        NodeType::StopSign,
        NodeType::Crossing,
    ];
    let signals: BTreeMap<u64, NodeType> = ids[..n_signals]
        .iter()
        .map(|&id| (id, signal_types[rng.gen_range(0..signal_types.len())]))
        .collect();

    let mut net = RoadNetwork::new();
    for row in 0..g {
        for col in 0..g {
            let id = cfg.node_id(row, col);
            let node_type = signals.get(&id).copied().unwrap_or(NodeType::Plain);
            net.add_node(
                id,
                cfg.origin.0 + col as f64 * dlng,
                cfg.origin.1 + row as f64 * dlat,
                node_type,
            )?;
        }
    }
    let mut next_id = 0u64;
    for row in 0..g {
        for col in 0..g {
            let here = cfg.node_id(row, col);
            if col + 1 < g {
                let road = if cfg.highway_rows.contains(&row) {
                    RoadType::Highway
                } else {
                    RoadType::Other
                };
                let there = cfg.node_id(row, col + 1);
                net.add_edge(next_id, here, there, road)?;
                net.add_edge(next_id + 1, there, here, road)?;
                next_id += 2;
            }
            if row + 1 < g {
                let road = if cfg.highway_cols.contains(&col) {
                    RoadType::Highway
                } else {
                    RoadType::Other
                };
                let there = cfg.node_id(row + 1, col);
                net.add_edge(next_id, here, there, road)?;
                net.add_edge(next_id + 1, there, here, road)?;
                next_id += 2;
            }
        }
    }
    Ok(net)
}

/// Edges of a self-avoiding walk of `len` steps, or `None` if it got stuck.
///
/// Each step picks uniformly among edges to unvisited nodes, which also rules
/// out immediate backtracking.
fn walk(
    network: &RoadNetwork,
    adj: &BTreeMap<u64, Vec<u64>>,
    start: u64,
    len: usize,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<u64>> {
    let mut edges = Vec::with_capacity(len);
    let mut here = start;
    let mut seen = BTreeSet::from([start]);
    for _ in 0..len {
        let options: Vec<&Edge> = adj
            .get(&here)?
            .iter()
            .map(|id| &network.edges[id])
            .filter(|e| !seen.contains(&e.end_node))
            .collect();
        let next = *options.choose(rng)?;
        seen.insert(next.end_node);
        edges.push(next.id);
        here = next.end_node;
    }
    Some(edges)
}

/// Applies the travel-time law to a path and returns its anchors.
pub fn law_anchors(
    network: &RoadNetwork,
    cfg: &SynthConfig,
    path: &[PathSegment],
    departure_time: f64,
) -> Result<Vec<Anchor>> {
    let hour = local_hour(departure_time, cfg.tz_offset_s);
    let mult = cfg.hourly_multipliers[hour as usize];
    let mut anchors = vec![Anchor {
        dist_m: 0.0,
        time_s: departure_time,
    }];
    let (mut dist, mut elapsed) = (0.0, 0.0);
    for seg in path {
        let edge = network.edge(seg.edge_id)?;
        let len = edge.length_m * (seg.to - seg.from);
        dist += len;
        elapsed += len / (cfg.base_speed(edge.road_type) * mult);
        if seg.to == 1.0 && network.node(edge.end_node)?.node_type != NodeType::Plain {
            elapsed += cfg.signal_delay_s;
        }
        anchors.push(Anchor {
            dist_m: dist,
            time_s: departure_time + elapsed,
        });
    }
    Ok(anchors)
}

const MAX_WALK_ATTEMPTS: usize = 10_000;

fn generate_one(
    network: &RoadNetwork,
    adj: &BTreeMap<u64, Vec<u64>>,
    cfg: &SynthConfig,
    index: usize,
) -> Result<PathRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(cfg.seed ^ splitmix(index as u64 + 1)));
    let n_nodes = (cfg.grid * cfg.grid) as u64;
    let mut attempt = 0;
    let edges = loop {
        let len = rng.gen_range(cfg.min_edges..=cfg.max_edges);
        let start = rng.gen_range(0..n_nodes);
        if let Some(edges) = walk(network, adj, start, len, &mut rng) {
            break edges;
        }
        attempt += 1;
        if attempt == MAX_WALK_ATTEMPTS {
            return Err(Error::config(format!(
                "no self-avoiding route of {}..={} edges found",
                cfg.min_edges, cfg.max_edges
            )));
        }
    };
    let mut path: Vec<PathSegment> = edges.into_iter().map(PathSegment::full).collect();
    let last = path.len() - 1;
    path[0].from = (rng.gen_range(0.0..0.8f64) * 1000.0).round() / 1000.0;
    path[last].to = (rng.gen_range(0.2..1.0f64) * 1000.0).round() / 1000.0;
    let departure_time = (cfg.start_epoch + rng.gen_range(0.0..=cfg.span_days * 86_400.0)).floor();
    let anchors = law_anchors(network, cfg, &path, departure_time)?;
    let mut record = PathRecord {
        id: index as u64,
        path,
        departure_time,
        anchors,
        raw_length_m: None,
    };
    record.raw_length_m = Some(path_length(&record, network)?);
    Ok(record)
}

/// Random self-avoiding lattice routes timed by the law. Deterministic per seed.
pub fn generate_paths(network: &RoadNetwork, cfg: &SynthConfig) -> Result<Vec<PathRecord>> {
    cfg.validate()?;
    let adj = network.adjacency();
    (0..cfg.num_paths)
        .into_par_iter()
        .map(|i| generate_one(network, &adj, cfg, i))
        .collect()
}

/// The generator's own speeds for every (edge, hour).
pub fn true_traffic_table(network: &RoadNetwork, cfg: &SynthConfig) -> Result<TrafficTable> {
    cfg.validate()?;
    let mut speeds = BTreeMap::new();
    for edge in network.edges.values() {
        for (hour, m) in cfg.hourly_multipliers.iter().enumerate() {
            speeds.insert((edge.id, hour as u8), cfg.base_speed(edge.road_type) * m);
        }
    }
    TrafficTable::from_speeds(speeds, network, None)
}

/// Sum of covered length over table speed at the departure hour.
pub fn segment_sum_baseline(
    traffic: &TrafficTable,
    record: &PathRecord,
    network: &RoadNetwork,
    tz_offset_s: i64,
) -> Result<f64> {
    if record.path.is_empty() {
        return Err(Error::validation(format!(
            "record {}: empty path",
            record.id
        )));
    }
    let hour = local_hour(record.departure_time, tz_offset_s);
    record.path.iter().try_fold(0.0, |acc, seg| {
        let edge = network.edge(seg.edge_id)?;
        Ok(acc + edge.length_m * (seg.to - seg.from) / traffic.speed(edge.id, hour))
    })
}
