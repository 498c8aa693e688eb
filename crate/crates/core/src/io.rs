//! Network CSV pair and path JSON-lines files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::geo::{NodeType, PathRecord, RoadNetwork, RoadType};

pub const NODES_FILE: &str = "nodes.csv";
pub const EDGES_FILE: &str = "edges.csv";

#[derive(Deserialize)]
struct NodeRow {
    id: u64,
    lng: f64,
    lat: f64,
    node_type: String,
}

#[derive(Deserialize)]
struct EdgeRow {
    id: u64,
    start_node: u64,
    end_node: u64,
    road_type: String,
}

/// Decimal degrees with at least six fractional digits, round-trip exact.
pub(crate) fn fmt_degrees(v: f64) -> String {
    let mut s = format!("{v}");
    if s.contains('e') || s.contains('E') {
        s = format!("{v:.12}");
    }
    let frac = match s.find('.') {
        Some(p) => s.len() - p - 1,
        None => {
            s.push('.');
            0
        }
    };
    for _ in frac..6 {
        s.push('0');
    }
    s
}

pub fn read_network_csv<R1: Read, R2: Read>(nodes: R1, edges: R2) -> Result<RoadNetwork> {
    let mut net = RoadNetwork::new();
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(nodes);
    for row in rdr.deserialize::<NodeRow>() {
        let row = row?;
        net.add_node(
            row.id,
            row.lng,
            row.lat,
            NodeType::parse_lenient(&row.node_type),
        )?;
    }
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(edges);
    for row in rdr.deserialize::<EdgeRow>() {
        let row = row?;
        net.add_edge(
            row.id,
            row.start_node,
            row.end_node,
            row.road_type.parse::<RoadType>()?,
        )?;
    }
    Ok(net)
}

pub fn write_network_csv<W1: Write, W2: Write>(
    net: &RoadNetwork,
    nodes: W1,
    edges: W2,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(nodes);
    w.write_record(["id", "lng", "lat", "node_type"])?;
    for n in net.nodes.values() {
        w.write_record([
            n.id.to_string(),
            fmt_degrees(n.lng),
            fmt_degrees(n.lat),
            n.node_type.to_string(),
        ])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_writer(edges);
    w.write_record(["id", "start_node", "end_node", "road_type"])?;
    for e in net.edges.values() {
        w.write_record([
            e.id.to_string(),
            e.start_node.to_string(),
            e.end_node.to_string(),
            e.road_type.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Loads `nodes.csv` and `edges.csv` from a directory.
pub fn load_network(dir: &Path) -> Result<RoadNetwork> {
    read_network_csv(
        File::open(dir.join(NODES_FILE))?,
        File::open(dir.join(EDGES_FILE))?,
    )
}

pub fn save_network(net: &RoadNetwork, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_network_csv(
        net,
        BufWriter::new(File::create(dir.join(NODES_FILE))?),
        BufWriter::new(File::create(dir.join(EDGES_FILE))?),
    )
}

/// One JSON object per line; blank lines are skipped. Records without an
/// `id` are numbered by their line position.
pub fn read_paths<R: BufRead>(reader: R) -> Result<Vec<PathRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| Error::parse(format!("line {}: {e}", lineno + 1)))?;
        let has_id = value.get("id").is_some();
        let mut rec: PathRecord = serde_json::from_value(value)
            .map_err(|e| Error::parse(format!("line {}: {e}", lineno + 1)))?;
        if !has_id {
            rec.id = out.len() as u64;
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_paths<W: Write>(records: &[PathRecord], mut writer: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn load_paths(path: &Path) -> Result<Vec<PathRecord>> {
    read_paths(BufReader::new(File::open(path)?))
}

pub fn save_paths(records: &[PathRecord], path: &Path) -> Result<()> {
    write_paths(records, BufWriter::new(File::create(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::PathSegment;

    #[test]
    fn degrees_keep_six_digits_and_round_trip() {
        assert_eq!(fmt_degrees(-8.61), "-8.610000");
        assert_eq!(fmt_degrees(41.0), "41.000000");
        let v = 41.123456789012345;
        assert_eq!(fmt_degrees(v).parse::<f64>().unwrap(), v);
    }

    #[test]
    fn network_csv_round_trip() {
        let nodes = "id,lng,lat,node_type\n1,-8.610000,41.150000,traffic_light\n2,-8.609000,41.150000,bus_stop\n";
        let edges = "id,start_node,end_node,road_type\n7,1,2,highway\n";
        let net = read_network_csv(nodes.as_bytes(), edges.as_bytes()).unwrap();
        assert_eq!(net.nodes[&1].node_type, NodeType::TrafficLight);
        assert_eq!(net.nodes[&2].node_type, NodeType::Plain);
        assert!(net.edges[&7].length_m > 80.0 && net.edges[&7].length_m < 90.0);
        let (mut n, mut e) = (Vec::new(), Vec::new());
        write_network_csv(&net, &mut n, &mut e).unwrap();
        let again = read_network_csv(n.as_slice(), e.as_slice()).unwrap();
        assert_eq!(again.nodes[&1], net.nodes[&1]);
        assert_eq!(again.edges, net.edges);
    }

    #[test]
    fn edge_to_missing_node_is_rejected() {
        let nodes = "id,lng,lat,node_type\n1,0.0,0.0,plain\n";
        let edges = "id,start_node,end_node,road_type\n7,1,2,other\n";
        assert!(matches!(
            read_network_csv(nodes.as_bytes(), edges.as_bytes()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn path_lines_parse() {
        let text = "{\"path\":[[3,0.5,1.0],[4,0,1]],\"departure_time\":1000,\"anchors\":[[0,1000],[150,1015]]}\n\n\
                    {\"id\":9,\"path\":[[4,0,1]],\"departure_time\":5,\"anchors\":[[0,5],[10,6]],\"raw_length_m\":10.5}\n";
        let recs = read_paths(text.as_bytes()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].id, 0);
        assert_eq!(
            recs[0].path[0],
            PathSegment {
                edge_id: 3,
                from: 0.5,
                to: 1.0
            }
        );
        assert_eq!(recs[0].total_time_s(), 15.0);
        assert_eq!(recs[1].id, 9);
        assert_eq!(recs[1].raw_length_m, Some(10.5));
        let mut buf = Vec::new();
        write_paths(&recs, &mut buf).unwrap();
        assert_eq!(read_paths(buf.as_slice()).unwrap(), recs);
    }
}
