//! Edge-list ingestion and serialization.
//!
//! Canonical format, one edge per line, tab-separated:
//! `src_id<TAB>src_type<TAB>dst_id<TAB>dst_type<TAB>edge_type<TAB>snapshot_index`
//! with `#` comment lines and blank lines ignored. A JSON [`FormatDescriptor`]
//! adapts other column layouts and bins raw timestamps into snapshots.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{DynamicGraph, Edge, EdgeTypeId, NodeId, NodeTypeId, Snapshot};

/// Incremental constructor used by the loader and the synthetic generator.
/// Nodes and type names are interned in first-appearance order.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    node_ids: BTreeMap<String, NodeId>,
    node_names: Vec<String>,
    node_type_of: Vec<NodeTypeId>,
    node_type_ids: BTreeMap<String, NodeTypeId>,
    node_type_names: Vec<String>,
    edge_type_ids: BTreeMap<String, EdgeTypeId>,
    edge_type_names: Vec<String>,
    per_snapshot: Vec<Vec<Edge>>,
}

impl GraphBuilder {
    pub fn new() -> GraphBuilder {
        GraphBuilder::default()
    }

    /// Registers a node, checking that repeated mentions keep one type.
    pub fn intern_node(&mut self, name: &str, node_type: &str) -> Result<NodeId> {
        let tid = match self.node_type_ids.get(node_type) {
            Some(&t) => t,
            None => {
                let t = self.node_type_names.len();
                self.node_type_ids.insert(node_type.to_string(), t);
                self.node_type_names.push(node_type.to_string());
                t
            }
        };
        match self.node_ids.get(name) {
            Some(&v) => {
                if self.node_type_of[v] != tid {
                    return Err(Error::Contract(format!(
                        "node '{name}' declared as '{node_type}' but was '{}'",
                        self.node_type_names[self.node_type_of[v]]
                    )));
                }
                Ok(v)
            }
            None => {
                let v = self.node_names.len();
                self.node_ids.insert(name.to_string(), v);
                self.node_names.push(name.to_string());
                self.node_type_of.push(tid);
                Ok(v)
            }
        }
    }

    pub fn intern_edge_type(&mut self, name: &str) -> EdgeTypeId {
        match self.edge_type_ids.get(name) {
            Some(&r) => r,
            None => {
                let r = self.edge_type_names.len();
                self.edge_type_ids.insert(name.to_string(), r);
                self.edge_type_names.push(name.to_string());
                r
            }
        }
    }

    /// Grows the snapshot list so indexes `0..=t` exist.
    pub fn ensure_snapshot(&mut self, t: usize) {
        if self.per_snapshot.len() <= t {
            self.per_snapshot.resize_with(t + 1, Vec::new);
        }
    }

    pub fn add_edge(
        &mut self,
        t: usize,
        src: &str,
        src_type: &str,
        dst: &str,
        dst_type: &str,
        edge_type: &str,
    ) -> Result<()> {
        let s = self.intern_node(src, src_type)?;
        let d = self.intern_node(dst, dst_type)?;
        let r = self.intern_edge_type(edge_type);
        self.ensure_snapshot(t);
        self.per_snapshot[t].push(Edge { src: s, dst: d, etype: r });
        Ok(())
    }

    pub fn finish(self) -> Result<DynamicGraph> {
        if self.per_snapshot.iter().all(|e| e.is_empty()) {
            return Err(Error::Parse { line: 0, msg: "no edges found".into() });
        }
        for (t, edges) in self.per_snapshot.iter().enumerate() {
            if edges.is_empty() {
                log::warn!("snapshot {t} has no edges; kept as an empty snapshot");
            }
        }
        if self.node_type_names.len() + self.edge_type_names.len() <= 2 {
            log::warn!(
                "input looks homogeneous ({} node type(s), {} edge type(s))",
                self.node_type_names.len(),
                self.edge_type_names.len()
            );
        }
        let snapshots = self.per_snapshot.into_iter().map(Snapshot::from_edges).collect();
        Ok(DynamicGraph::from_parts(
            snapshots,
            self.node_names,
            self.node_type_of,
            self.node_type_names,
            self.edge_type_names,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Separator {
    #[default]
    Tab,
    Whitespace,
    Comma,
}

impl Separator {
    fn split<'a>(&self, line: &'a str) -> Vec<&'a str> {
        match self {
            Separator::Tab => line.split('\t').collect(),
            Separator::Whitespace => line.split_whitespace().collect(),
            Separator::Comma => line.split(',').collect(),
        }
    }
}

/// Column layout and snapshot binning for foreign edge lists. Exactly one of
/// `snapshot_col` and `timestamp_col` must be set; timestamped inputs also
/// need exactly one of `num_snapshots` (equal-width bins over the observed
/// range) or `snapshot_duration` (fixed-width bins from the earliest stamp).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormatDescriptor {
    #[serde(default)]
    pub separator: Separator,
    pub src_col: usize,
    pub dst_col: usize,
    #[serde(default)]
    pub src_type_col: Option<usize>,
    #[serde(default)]
    pub dst_type_col: Option<usize>,
    #[serde(default)]
    pub edge_type_col: Option<usize>,
    #[serde(default)]
    pub snapshot_col: Option<usize>,
    #[serde(default)]
    pub timestamp_col: Option<usize>,
    #[serde(default = "default_node_type")]
    pub default_node_type: String,
    #[serde(default = "default_edge_type")]
    pub default_edge_type: String,
    #[serde(default)]
    pub num_snapshots: Option<usize>,
    #[serde(default)]
    pub snapshot_duration: Option<f64>,
}

fn default_node_type() -> String {
    "node".to_string()
}

fn default_edge_type() -> String {
    "link".to_string()
}

impl FormatDescriptor {
    /// The layout `write_edge_list` emits: tab-separated
    /// src, src type, dst, dst type, edge type, snapshot index.
    pub fn canonical() -> FormatDescriptor {
        FormatDescriptor {
            separator: Separator::Tab,
            src_col: 0,
            dst_col: 2,
            src_type_col: Some(1),
            dst_type_col: Some(3),
            edge_type_col: Some(4),
            snapshot_col: Some(5),
            timestamp_col: None,
            default_node_type: default_node_type(),
            default_edge_type: default_edge_type(),
            num_snapshots: None,
            snapshot_duration: None,
        }
    }

    pub fn from_json(json: &str) -> Result<FormatDescriptor> {
        let d: FormatDescriptor = serde_json::from_str(json)
            .map_err(|e| Error::Config(format!("bad format descriptor: {e}")))?;
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        match (self.snapshot_col, self.timestamp_col) {
            (Some(_), Some(_)) | (None, None) => {
                return Err(Error::Config(
                    "format descriptor needs exactly one of snapshot_col and timestamp_col"
                        .into(),
                ))
            }
            (Some(_), None) => {
                if self.num_snapshots.is_some() || self.snapshot_duration.is_some() {
                    return Err(Error::Config(
                        "binning options only apply to timestamp_col inputs".into(),
                    ));
                }
            }
            (None, Some(_)) => match (self.num_snapshots, self.snapshot_duration) {
                (Some(n), None) if n >= 1 => {}
                (None, Some(d)) if d > 0.0 => {}
                _ => {
                    return Err(Error::Config(
                        "timestamped input needs exactly one of num_snapshots >= 1 \
                         or snapshot_duration > 0"
                            .into(),
                    ))
                }
            },
        }
        Ok(())
    }
}

struct RawRecord {
    line: usize,
    src: String,
    src_type: String,
    dst: String,
    dst_type: String,
    edge_type: String,
    time: TimeField,
}

enum TimeField {
    Index(usize),
    Stamp(f64),
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn canonical_record(line_no: usize, line: &str) -> Result<RawRecord> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 6 {
        return Err(parse_err(
            line_no,
            format!("expected 6 tab-separated fields, found {}", fields.len()),
        ));
    }
    let t: usize = fields[5]
        .trim()
        .parse()
        .map_err(|_| parse_err(line_no, format!("bad snapshot index '{}'", fields[5])))?;
    Ok(RawRecord {
        line: line_no,
        src: fields[0].to_string(),
        src_type: fields[1].to_string(),
        dst: fields[2].to_string(),
        dst_type: fields[3].to_string(),
        edge_type: fields[4].to_string(),
        time: TimeField::Index(t),
    })
}

fn descriptor_record(line_no: usize, line: &str, d: &FormatDescriptor) -> Result<RawRecord> {
    let fields = d.separator.split(line);
    let need = [
        Some(d.src_col),
        Some(d.dst_col),
        d.src_type_col,
        d.dst_type_col,
        d.edge_type_col,
        d.snapshot_col,
        d.timestamp_col,
    ];
    let max_col = need.iter().flatten().max().copied().unwrap_or(0);
    if fields.len() <= max_col {
        return Err(parse_err(
            line_no,
            format!("expected at least {} columns, found {}", max_col + 1, fields.len()),
        ));
    }
    let col = |c: Option<usize>, def: &str| -> String {
        c.map_or_else(|| def.to_string(), |i| fields[i].to_string())
    };
    let time = if let Some(sc) = d.snapshot_col {
        TimeField::Index(fields[sc].trim().parse().map_err(|_| {
            parse_err(line_no, format!("bad snapshot index '{}'", fields[sc]))
        })?)
    } else {
        let tc = d.timestamp_col.expect("validated");
        TimeField::Stamp(fields[tc].trim().parse().map_err(|_| {
            parse_err(line_no, format!("bad timestamp '{}'", fields[tc]))
        })?)
    };
    Ok(RawRecord {
        line: line_no,
        src: fields[d.src_col].to_string(),
        src_type: col(d.src_type_col, &d.default_node_type),
        dst: fields[d.dst_col].to_string(),
        dst_type: col(d.dst_type_col, &d.default_node_type),
        edge_type: col(d.edge_type_col, &d.default_edge_type),
        time,
    })
}

/// Assigns a snapshot index to every record. Raw timestamps are binned per
/// the descriptor; indexed records pass through.
fn assign_snapshots(records: &[RawRecord], d: Option<&FormatDescriptor>) -> Result<Vec<usize>> {
    let stamps: Vec<Option<f64>> = records
        .iter()
        .map(|r| match r.time {
            TimeField::Index(_) => None,
            TimeField::Stamp(s) => Some(s),
        })
        .collect();
    if stamps.iter().all(|s| s.is_none()) {
        return Ok(records
            .iter()
            .map(|r| match r.time {
                TimeField::Index(i) => i,
                TimeField::Stamp(_) => unreachable!(),
            })
            .collect());
    }
    let d = d.expect("timestamps imply a descriptor");
    let lo = stamps.iter().flatten().fold(f64::INFINITY, |a, &b| a.min(b));
    let hi = stamps.iter().flatten().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let bin = |s: f64| -> usize {
        if let Some(n) = d.num_snapshots {
            if hi <= lo {
                return 0;
            }
            let width = (hi - lo) / n as f64;
            (((s - lo) / width) as usize).min(n - 1)
        } else {
            let dur = d.snapshot_duration.expect("validated");
            ((s - lo) / dur) as usize
        }
    };
    Ok(stamps.iter().map(|s| bin(s.expect("all stamps"))).collect())
}

pub fn read_edge_list_with<R: BufRead>(
    reader: R,
    descriptor: Option<&FormatDescriptor>,
) -> Result<DynamicGraph> {
    if let Some(d) = descriptor {
        d.validate()?;
    }
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let rec = match descriptor {
            Some(d) => descriptor_record(line_no, line, d)?,
            None => canonical_record(line_no, line)?,
        };
        records.push(rec);
    }
    let snapshots = assign_snapshots(&records, descriptor)?;
    let mut b = GraphBuilder::new();
    for (rec, &t) in records.iter().zip(&snapshots) {
        b.add_edge(t, &rec.src, &rec.src_type, &rec.dst, &rec.dst_type, &rec.edge_type)
            .map_err(|e| match e {
                Error::Contract(msg) => parse_err(rec.line, msg),
                other => other,
            })?;
    }
    if let Some(n) = descriptor.and_then(|d| d.num_snapshots) {
        // Equal-width binning promises exactly n snapshots even when the
        // trailing bins stay empty.
        b.ensure_snapshot(n - 1);
    }
    b.finish()
}

pub fn read_edge_list<R: BufRead>(reader: R) -> Result<DynamicGraph> {
    read_edge_list_with(reader, None)
}

pub fn load_edge_list(
    path: &Path,
    descriptor: Option<&FormatDescriptor>,
) -> Result<DynamicGraph> {
    let file = File::open(path)
        .map_err(|e| Error::Parse { line: 0, msg: format!("{}: {e}", path.display()) })?;
    let g = read_edge_list_with(BufReader::new(file), descriptor)?;
    log::info!(
        "loaded {}: {} nodes ({} types), {} edges ({} types), {} snapshots",
        path.display(),
        g.num_nodes(),
        g.num_node_types(),
        g.total_edges(),
        g.num_edge_types(),
        g.num_snapshots()
    );
    Ok(g)
}

/// Writes the canonical tab-separated format; a load of the output
/// reconstructs an identical graph.
pub fn write_edge_list<W: Write>(g: &DynamicGraph, mut w: W) -> Result<()> {
    for (t, snap) in g.snapshots().iter().enumerate() {
        for e in snap.edges() {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}",
                g.node_name(e.src),
                g.node_type_names()[g.node_type(e.src)],
                g.node_name(e.dst),
                g.node_type_names()[g.node_type(e.dst)],
                g.edge_type_names()[e.etype],
                t
            )?;
        }
    }
    Ok(())
}

pub fn save_edge_list(g: &DynamicGraph, path: &Path) -> Result<()> {
    let mut f = File::create(path)?;
    write_edge_list(g, &mut f)?;
    Ok(())
}
