//! Hourly per-edge speed table used to paint the traffic channel.
//!
//! Speeds are historical means per (edge, local hour). Lookups fall back from
//! the (edge, hour) cell to the edge's mean over hours, then to the mean of its
//! road type, then to the dataset mean.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::geo::{path_length, PathRecord, RoadNetwork, RoadType};

/// Local hour of day for an epoch timestamp shifted by a timezone offset.
pub fn local_hour(epoch_s: f64, tz_offset_s: i64) -> u8 {
    let shifted = epoch_s.floor() as i64 + tz_offset_s;
    shifted.div_euclid(3600).rem_euclid(24) as u8
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficTable {
    /// Mean speed in m/s per (edge id, hour 0..24).
    pub speeds: BTreeMap<(u64, u8), f64>,
    pub global_max_speed: f64,
    pub dataset_mean: f64,
    pub type_means: BTreeMap<RoadType, f64>,
    edge_means: BTreeMap<u64, f64>,
    edge_types: BTreeMap<u64, RoadType>,
}

fn ordered_mean(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

impl TrafficTable {
    /// Table from explicit cell speeds; fallbacks are derived from the cells.
    ///
    /// `global_max_speed` defaults to the largest cell speed.
    pub fn from_speeds(
        speeds: BTreeMap<(u64, u8), f64>,
        network: &RoadNetwork,
        global_max_speed: Option<f64>,
    ) -> Result<Self> {
        if speeds.is_empty() {
            return Err(Error::validation("traffic table has no speeds"));
        }
        let mut by_type: BTreeMap<RoadType, Vec<f64>> = BTreeMap::new();
        let mut all: Vec<f64> = speeds.values().copied().collect();
        for (&(edge, _), &v) in &speeds {
            if let Some(e) = network.edges.get(&edge) {
                by_type.entry(e.road_type).or_default().push(v);
            }
        }
        let type_means = by_type
            .into_iter()
            .map(|(t, mut v)| (t, ordered_mean(&mut v)))
            .collect();
        let dataset_mean = ordered_mean(&mut all);
        Self::assemble(speeds, network, global_max_speed, dataset_mean, type_means)
    }

    fn assemble(
        speeds: BTreeMap<(u64, u8), f64>,
        network: &RoadNetwork,
        global_max_speed: Option<f64>,
        dataset_mean: f64,
        type_means: BTreeMap<RoadType, f64>,
    ) -> Result<Self> {
        if let Some((&key, &v)) = speeds.iter().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::validation(format!(
                "non-positive speed {v} for {key:?}"
            )));
        }
        let cell_max = speeds.values().copied().fold(0.0, f64::max);
        let global_max_speed = global_max_speed.unwrap_or(cell_max);
        if global_max_speed < cell_max || global_max_speed <= 0.0 {
            return Err(Error::validation(
                "global maximum speed below a stored speed",
            ));
        }
        let mut per_edge: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        for (&(edge, _), &v) in &speeds {
            per_edge.entry(edge).or_default().push(v);
        }
        let edge_means = per_edge
            .into_iter()
            .map(|(e, mut v)| (e, ordered_mean(&mut v)))
            .collect();
        let edge_types = network
            .edges
            .values()
            .map(|e| (e.id, e.road_type))
            .collect();
        Ok(Self {
            speeds,
            global_max_speed,
            dataset_mean,
            type_means,
            edge_means,
            edge_types,
        })
    }

    /// Speed for an edge at an hour, following the fallback hierarchy.
    pub fn speed(&self, edge_id: u64, hour: u8) -> f64 {
        if let Some(&v) = self.speeds.get(&(edge_id, hour)) {
            return v;
        }
        if let Some(&v) = self.edge_means.get(&edge_id) {
            return v;
        }
        self.fallback_speed(edge_id)
    }

    /// Road-type mean for the edge, or the dataset mean when the type has no data.
    pub fn fallback_speed(&self, edge_id: u64) -> f64 {
        self.edge_types
            .get(&edge_id)
            .and_then(|t| self.type_means.get(t))
            .copied()
            .unwrap_or(self.dataset_mean)
    }

    /// Speed divided by the dataset maximum, in (0, 1].
    pub fn normalized_speed(&self, edge_id: u64, hour: u8) -> f64 {
        (self.speed(edge_id, hour) / self.global_max_speed).min(1.0)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let highway = self
            .type_means
            .get(&RoadType::Highway)
            .copied()
            .unwrap_or(0.0);
        let other = self
            .type_means
            .get(&RoadType::Other)
            .copied()
            .unwrap_or(0.0);
        writeln!(
            w,
            "# global_max_speed={};dataset_mean={};highway_mean={};other_mean={}",
            self.global_max_speed, self.dataset_mean, highway, other
        )?;
        writeln!(w, "edge_id,hour,mean_speed_mps")?;
        for (&(edge, hour), &v) in &self.speeds {
            writeln!(w, "{edge},{hour},{v}")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the CSV written by [`TrafficTable::write_csv`]; the network supplies road types.
    pub fn read_csv<R: BufRead>(reader: R, network: &RoadNetwork) -> Result<Self> {
        let mut lines = reader.lines();
        let meta = lines
            .next()
            .ok_or_else(|| Error::parse("empty traffic file"))??;
        let meta = meta
            .strip_prefix('#')
            .ok_or_else(|| Error::parse("traffic file lacks the metadata line"))?;
        let mut fields: BTreeMap<String, f64> = BTreeMap::new();
        for kv in meta.split(';') {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::parse(format!("bad metadata {kv:?}")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::parse(format!("bad metadata value {v:?}")))?;
            fields.insert(k.trim().to_string(), v);
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| Error::parse(format!("metadata lacks {k}")))
        };
        let global_max = get("global_max_speed")?;
        let dataset_mean = get("dataset_mean")?;
        let mut type_means = BTreeMap::new();
        for (t, key) in [
            (RoadType::Highway, "highway_mean"),
            (RoadType::Other, "other_mean"),
        ] {
            let v = get(key)?;
            if v > 0.0 {
                type_means.insert(t, v);
            }
        }
        let header = lines
            .next()
            .ok_or_else(|| Error::parse("traffic file lacks a header"))??;
        if header.trim() != "edge_id,hour,mean_speed_mps" {
            return Err(Error::parse(format!(
                "unexpected traffic header {header:?}"
            )));
        }
        let mut speeds = BTreeMap::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = || Error::parse(format!("bad traffic row {line:?}"));
            if parts.len() != 3 {
                return Err(bad());
            }
            let edge: u64 = parts[0].parse().map_err(|_| bad())?;
            let hour: u8 = parts[1].parse().map_err(|_| bad())?;
            let v: f64 = parts[2].parse().map_err(|_| bad())?;
            if hour > 23 {
                return Err(bad());
            }
            speeds.insert((edge, hour), v);
        }
        if speeds.is_empty() {
            return Err(Error::validation("traffic table has no speeds"));
        }
        Self::assemble(speeds, network, Some(global_max), dataset_mean, type_means)
    }
}

/// Builds hourly mean traversal speeds from anchored records.
///
/// Each covered segment contributes `covered length / interpolated time`,
/// keyed by the local hour at which the segment is entered. Means are summed in
/// sorted order so the result does not depend on record order.
pub fn build_traffic_table(
    records: &[PathRecord],
    network: &RoadNetwork,
    tz_offset_s: i64,
) -> Result<TrafficTable> {
    if records.is_empty() {
        return Err(Error::validation(
            "cannot build a traffic table from no records",
        ));
    }
    let mut cells: BTreeMap<(u64, u8), Vec<f64>> = BTreeMap::new();
    let mut by_type: BTreeMap<RoadType, Vec<f64>> = BTreeMap::new();
    let mut all = Vec::new();
    let mut max_speed: f64 = 0.0;
    for rec in records {
        rec.validate(network)?;
        let total = path_length(rec, network)?;
        let mut offset = 0.0;
        for (i, seg) in rec.path.iter().enumerate() {
            let edge = network.edge(seg.edge_id)?;
            let len = edge.length_m * (seg.to - seg.from);
            let end = if i + 1 == rec.path.len() {
                total
            } else {
                offset + len
            };
            let t0 = rec.time_at(offset)?;
            let dt = rec.time_at(end)? - t0;
            if len > 0.0 && dt > 0.0 {
                let v = len / dt;
                cells
                    .entry((edge.id, local_hour(t0, tz_offset_s)))
                    .or_default()
                    .push(v);
                by_type.entry(edge.road_type).or_default().push(v);
                all.push(v);
                max_speed = max_speed.max(v);
            }
            offset = end;
        }
    }
    if all.is_empty() {
        return Err(Error::validation("records contain no timed traversals"));
    }
    let speeds = cells
        .into_iter()
        .map(|(k, mut v)| (k, ordered_mean(&mut v)))
        .collect();
    let type_means = by_type
        .into_iter()
        .map(|(t, mut v)| (t, ordered_mean(&mut v)))
        .collect();
    let dataset_mean = ordered_mean(&mut all);
    TrafficTable::assemble(speeds, network, Some(max_speed), dataset_mean, type_means)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::tests::chain;
    use crate::geo::{Anchor, PathSegment};

    fn traversal(
        id: u64,
        edges: &[u64],
        net: &RoadNetwork,
        depart: f64,
        secs: &[f64],
    ) -> PathRecord {
        let mut anchors = vec![Anchor {
            dist_m: 0.0,
            time_s: depart,
        }];
        let (mut d, mut t) = (0.0, depart);
        for (e, s) in edges.iter().zip(secs) {
            d += net.edges[e].length_m;
            t += s;
            anchors.push(Anchor {
                dist_m: d,
                time_s: t,
            });
        }
        PathRecord {
            id,
            path: edges.iter().map(|&e| PathSegment::full(e)).collect(),
            departure_time: depart,
            anchors,
            raw_length_m: None,
        }
    }

    #[test]
    fn hour_of_day() {
        assert_eq!(local_hour(8.0 * 3600.0 + 5.0, 0), 8);
        assert_eq!(local_hour(23.5 * 3600.0, 3600), 0);
        assert_eq!(local_hour(0.5 * 3600.0, -3600), 23);
    }

    #[test]
    fn single_and_mean_traversals() {
        let net = chain(3, 100.0);
        let len = net.edges[&0].length_m;
        let r = traversal(0, &[0], &net, 8.0 * 3600.0, &[len / 10.0]);
        let table = build_traffic_table(std::slice::from_ref(&r), &net, 0).unwrap();
        assert!((table.speeds[&(0, 8)] - 10.0).abs() < 1e-9);

        let r2 = traversal(1, &[0], &net, 8.0 * 3600.0 + 60.0, &[len / 20.0]);
        let table = build_traffic_table(&[r.clone(), r2.clone()], &net, 0).unwrap();
        assert!((table.speeds[&(0, 8)] - 15.0).abs() < 1e-9);
        assert!((table.global_max_speed - 20.0).abs() < 1e-9);
        // never traversed edge: road-type mean
        assert!((table.speed(2, 8) - 15.0).abs() < 1e-9);
        // other hour of a known edge: edge mean
        assert!((table.speed(0, 3) - 15.0).abs() < 1e-9);

        let swapped = build_traffic_table(&[r2, r], &net, 0).unwrap();
        assert_eq!(swapped, table);
        assert!(build_traffic_table(&[], &net, 0).is_err());
    }

    #[test]
    fn normalized_speed_examples() {
        let net = chain(3, 100.0);
        let speeds = BTreeMap::from([((0, 5), 15.0), ((1, 5), 30.0)]);
        let t = TrafficTable::from_speeds(speeds, &net, None).unwrap();
        assert_eq!(t.normalized_speed(0, 5), 0.5);
        assert_eq!(t.normalized_speed(1, 5), 1.0);

        let speeds = BTreeMap::from([((0, 5), 8.0)]);
        let t = TrafficTable::from_speeds(speeds, &net, Some(16.0)).unwrap();
        assert_eq!(t.fallback_speed(2), 8.0);
        assert_eq!(t.normalized_speed(2, 11), 0.5);
        assert!(
            TrafficTable::from_speeds(BTreeMap::from([((0, 5), 8.0)]), &net, Some(4.0)).is_err()
        );
    }

    #[test]
    fn csv_round_trip() {
        let net = chain(3, 100.0);
        let len = net.edges[&0].length_m;
        let recs = [
            traversal(0, &[0, 1], &net, 3600.0 * 7.0, &[len / 9.0, len / 11.0]),
            traversal(1, &[1, 2], &net, 3600.0 * 9.0, &[len / 13.0, len / 7.0]),
        ];
        let table = build_traffic_table(&recs, &net, 0).unwrap();
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let again = TrafficTable::read_csv(buf.as_slice(), &net).unwrap();
        assert_eq!(again, table);
    }
}
