//! CSV ingestion and emission for edge and label streams.
//!
//! Edge files: header `src,dst,t[,f0,f1,...]`. Label files: header
//! `node,t,w0,...,w{n-1}` (dense) or `node,t,labels` with
//! `cat:weight;cat:weight` entries (sparse).

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::stream::{AffinityVector, EventLog, LabelEvent, NodeId, TemporalEdge};

/// Tolerance for silently renormalizing label rows.
const ROW_SUM_TOL: f64 = 1e-6;

/// Column mapping for edge ingestion. Columns not named here are treated
/// as numeric feature columns, in header order.
#[derive(Debug, Clone)]
pub struct EdgeSchema {
    pub source: String,
    pub destination: String,
    pub timestamp: String,
}

impl Default for EdgeSchema {
    fn default() -> Self {
        Self {
            source: "src".into(),
            destination: "dst".into(),
            timestamp: "t".into(),
        }
    }
}

/// Mapping from original node tokens to dense ids, in order of first
/// appearance in the timestamp-sorted edge stream.
#[derive(Debug, Clone, Default)]
pub struct NodeMap {
    tokens: Vec<String>,
    index: HashMap<String, NodeId>,
}

impl NodeMap {
    fn intern(&mut self, token: &str) -> NodeId {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len() as NodeId;
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    pub fn dense(&self, token: &str) -> Option<NodeId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: NodeId) -> Option<&str> {
        self.tokens.get(id as usize).map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

fn open_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::io(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, e.to_string()),
            ),
            _ => Error::Parse {
                line: 1,
                msg: e.to_string(),
            },
        })
}

fn parse_f64(raw: &str, line: u64, what: &str) -> Result<f64> {
    raw.trim().parse::<f64>().map_err(|_| Error::Parse {
        line,
        msg: format!("non-numeric {what} `{raw}`"),
    })
}

/// Read an edge CSV, remap node tokens to dense ids, and return the log
/// (edges only) with the token mapping. Edges are stably sorted by
/// timestamp, preserving file order among ties.
pub fn ingest_edges_csv(path: &Path, schema: &EdgeSchema) -> Result<(EventLog, NodeMap)> {
    let mut reader = open_reader(path)?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            msg: e.to_string(),
        })?
        .clone();

    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let src_col = col(&schema.source)?;
    let dst_col = col(&schema.destination)?;
    let t_col = col(&schema.timestamp)?;
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&i| i != src_col && i != dst_col && i != t_col)
        .collect();

    // (timestamp, file order, src token, dst token, features)
    let mut rows: Vec<(f64, usize, String, String, Vec<f64>)> = Vec::new();
    for (order, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            line: order as u64 + 2,
            msg: e.to_string(),
        })?;
        let line = record
            .position()
            .map(|p| p.line())
            .unwrap_or(order as u64 + 2);
        let t = parse_f64(&record[t_col], line, "timestamp")?;
        if t < 0.0 {
            return Err(Error::Parse {
                line,
                msg: format!("negative timestamp {t}"),
            });
        }
        let mut features = Vec::with_capacity(feature_cols.len());
        for &fc in &feature_cols {
            features.push(parse_f64(&record[fc], line, "feature")?);
        }
        rows.push((
            t,
            order,
            record[src_col].to_string(),
            record[dst_col].to_string(),
            features,
        ));
    }

    rows.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));

    let mut map = NodeMap::default();
    let edges: Vec<TemporalEdge> = rows
        .into_iter()
        .map(|(t, _, src, dst, features)| TemporalEdge {
            source: map.intern(&src),
            destination: map.intern(&dst),
            timestamp: t,
            features,
        })
        .collect();
    let log = EventLog::new(edges, Vec::new(), 0)?;
    Ok((log, map))
}

fn parse_sparse_targets(raw: &str, n_categories: usize, line: u64) -> Result<Vec<f64>> {
    let mut values = vec![0.0; n_categories];
    for part in raw.split(';').filter(|p| !p.trim().is_empty()) {
        let (cat, weight) = part.split_once(':').ok_or_else(|| Error::Parse {
            line,
            msg: format!("sparse entry `{part}` is not cat:weight"),
        })?;
        let cat: usize = cat.trim().parse().map_err(|_| Error::Parse {
            line,
            msg: format!("non-integer category `{cat}`"),
        })?;
        if cat >= n_categories {
            return Err(Error::Parse {
                line,
                msg: format!("category {cat} out of range 0..{n_categories}"),
            });
        }
        values[cat] += parse_f64(weight, line, "weight")?;
    }
    Ok(values)
}

/// Read a label CSV. Dense rows carry one weight column per category;
/// sparse rows carry `cat:weight;...` in a single column. Rows whose sum
/// deviates from 1 by at most 1e-6 are renormalized; larger deviations and
/// negative weights are validation errors. Node tokens resolve through
/// `node_map` when given, else they must already be dense integers.
pub fn ingest_labels_csv(
    path: &Path,
    n_categories: usize,
    sparse: bool,
    node_map: Option<&NodeMap>,
) -> Result<Vec<LabelEvent>> {
    if n_categories == 0 {
        return Err(Error::validation("n_categories must be positive"));
    }
    let mut reader = open_reader(path)?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    let expected = if sparse { 3 } else { 2 + n_categories };
    if headers.len() != expected {
        return Err(Error::validation(format!(
            "label file has {} columns, expected {expected}",
            headers.len()
        )));
    }

    let mut labels: Vec<(f64, usize, LabelEvent)> = Vec::new();
    for (order, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            line: order as u64 + 2,
            msg: e.to_string(),
        })?;
        let line = record
            .position()
            .map(|p| p.line())
            .unwrap_or(order as u64 + 2);
        let node = match node_map {
            Some(map) => map.dense(record[0].trim()).ok_or_else(|| Error::Parse {
                line,
                msg: format!("unknown node `{}`", &record[0]),
            })?,
            None => record[0].trim().parse::<NodeId>().map_err(|_| Error::Parse {
                line,
                msg: format!("non-integer node id `{}`", &record[0]),
            })?,
        };
        let t = parse_f64(&record[1], line, "timestamp")?;
        let values = if sparse {
            parse_sparse_targets(&record[2], n_categories, line)?
        } else {
            let mut v = Vec::with_capacity(n_categories);
            for i in 0..n_categories {
                v.push(parse_f64(&record[2 + i], line, "weight")?);
            }
            v
        };
        if values.iter().any(|&w| w < 0.0) {
            return Err(Error::validation(format!(
                "line {line}: negative weight in label row"
            )));
        }
        let target = AffinityVector::from_weights(values, ROW_SUM_TOL)
            .map_err(|e| Error::validation(format!("line {line}: {e}")))?;
        labels.push((
            t,
            order,
            LabelEvent {
                node,
                timestamp: t,
                target,
            },
        ));
    }
    labels.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    Ok(labels.into_iter().map(|(_, _, l)| l).collect())
}

/// Write edges as `src,dst,t[,f0,...]`. Output is byte-stable for a given
/// log.
pub fn write_edges_csv(log: &EventLog, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    let feat_dim = log.edges().first().map_or(0, |e| e.features.len());
    let mut header = String::from("src,dst,t");
    for i in 0..feat_dim {
        header.push_str(&format!(",f{i}"));
    }
    writeln!(out, "{header}").expect("vec write");
    for e in log.edges() {
        let mut row = format!("{},{},{}", e.source, e.destination, e.timestamp);
        for f in &e.features {
            row.push_str(&format!(",{f}"));
        }
        writeln!(out, "{row}").expect("vec write");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Write labels densely as `node,t,w0,...,w{n-1}`.
pub fn write_labels_csv(log: &EventLog, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    let n = log.n_categories();
    let mut header = String::from("node,t");
    for i in 0..n {
        header.push_str(&format!(",w{i}"));
    }
    writeln!(out, "{header}").expect("vec write");
    for l in log.labels() {
        let mut row = format!("{},{}", l.node, l.timestamp);
        for w in l.target.values() {
            row.push_str(&format!(",{w}"));
        }
        writeln!(out, "{row}").expect("vec write");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
