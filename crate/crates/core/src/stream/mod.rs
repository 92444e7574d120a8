//! Event data model: timestamped edges, sparse label events, chronological
//! splitting, fixed-size batching, and the shuffling perturbations used in
//! the ablations.

mod ingest;
mod synth;

pub use ingest::{
    ingest_edges_csv, ingest_labels_csv, write_edges_csv, write_labels_csv, EdgeSchema, NodeMap,
};
pub use synth::{synth_generate, SyntheticSpec};

use crate::error::{Error, Result};
use crate::rng::seeded_rng;
use rand::seq::SliceRandom;

/// Dense node identifier. Ingestion remaps arbitrary tokens to these.
pub type NodeId = u64;

/// Absolute tolerance for the simplex sum invariant.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// An n-dimensional probability vector: components >= 0, summing to 1
/// within `SIMPLEX_TOL`. Targets, pseudo-targets, and predictions all
/// live here.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityVector(Vec<f64>);

impl AffinityVector {
    /// Validate and wrap. Rejects negative or non-finite components and
    /// sums off by more than `SIMPLEX_TOL`.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::validation("affinity vector must be non-empty"));
        }
        let mut sum = 0.0;
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::validation(format!(
                    "affinity component {i} is not finite"
                )));
            }
            if v < 0.0 {
                return Err(Error::validation(format!(
                    "affinity component {i} is negative ({v})"
                )));
            }
            sum += v;
        }
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::validation(format!(
                "affinity components sum to {sum}, expected 1"
            )));
        }
        Ok(Self(values))
    }

    /// Wrap weights whose sum may deviate from 1 by up to `tol`,
    /// renormalizing exactly to sum 1. Larger deviations are an error.
    pub fn from_weights(values: Vec<f64>, tol: f64) -> Result<Self> {
        let mut sum = 0.0;
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::validation(format!(
                    "weight {i} is negative or non-finite ({v})"
                )));
            }
            sum += v;
        }
        if (sum - 1.0).abs() > tol {
            return Err(Error::validation(format!(
                "weights sum to {sum}, deviation exceeds tolerance {tol}"
            )));
        }
        Self::new(values.into_iter().map(|v| v / sum).collect())
    }

    pub fn one_hot(n: usize, index: usize) -> Self {
        assert!(index < n, "one-hot index out of range");
        let mut v = vec![0.0; n];
        v[index] = 1.0;
        Self(v)
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0);
        Self(vec![1.0 / n as f64; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A timestamped interaction from `source` to `destination`, optionally
/// carrying a feature vector of the log-wide edge feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalEdge {
    pub source: NodeId,
    pub destination: NodeId,
    pub timestamp: f64,
    pub features: Vec<f64>,
}

/// A sparse ground-truth affinity observation for one node.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelEvent {
    pub node: NodeId,
    pub timestamp: f64,
    pub target: AffinityVector,
}

/// A chronological interaction log: time-ordered edges plus time-ordered
/// sparse label events over `n_categories` affinity categories.
#[derive(Debug, Clone)]
pub struct EventLog {
    edges: Vec<TemporalEdge>,
    labels: Vec<LabelEvent>,
    n_categories: usize,
}

impl EventLog {
    /// Build a log, validating chronology, timestamp non-negativity,
    /// uniform edge-feature dimension, and label dimension.
    pub fn new(
        edges: Vec<TemporalEdge>,
        labels: Vec<LabelEvent>,
        n_categories: usize,
    ) -> Result<Self> {
        let feat_dim = edges.first().map(|e| e.features.len());
        let mut prev = f64::NEG_INFINITY;
        for e in &edges {
            if e.timestamp < 0.0 || !e.timestamp.is_finite() {
                return Err(Error::validation(format!(
                    "edge timestamp {} is negative or non-finite",
                    e.timestamp
                )));
            }
            if e.timestamp < prev {
                return Err(Error::Chronology(format!(
                    "edges out of order at timestamp {}",
                    e.timestamp
                )));
            }
            if Some(e.features.len()) != feat_dim {
                return Err(Error::Dimension(format!(
                    "edge feature dimension {} differs from {}",
                    e.features.len(),
                    feat_dim.unwrap_or(0)
                )));
            }
            prev = e.timestamp;
        }
        prev = f64::NEG_INFINITY;
        for l in &labels {
            if l.timestamp < 0.0 || !l.timestamp.is_finite() {
                return Err(Error::validation(format!(
                    "label timestamp {} is negative or non-finite",
                    l.timestamp
                )));
            }
            if l.timestamp < prev {
                return Err(Error::Chronology(format!(
                    "labels out of order at timestamp {}",
                    l.timestamp
                )));
            }
            if l.target.len() != n_categories {
                return Err(Error::Dimension(format!(
                    "label target has {} categories, log has {}",
                    l.target.len(),
                    n_categories
                )));
            }
            prev = l.timestamp;
        }
        Ok(Self {
            edges,
            labels,
            n_categories,
        })
    }

    pub fn edges(&self) -> &[TemporalEdge] {
        &self.edges
    }

    pub fn labels(&self) -> &[LabelEvent] {
        &self.labels
    }

    pub fn n_categories(&self) -> usize {
        self.n_categories
    }

    /// Count of distinct node ids appearing as edge endpoints.
    pub fn distinct_nodes(&self) -> usize {
        let mut ids: Vec<NodeId> = self
            .edges
            .iter()
            .flat_map(|e| [e.source, e.destination])
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }

    /// Same edges, new labels (validated against this log's category count).
    pub fn with_labels(&self, labels: Vec<LabelEvent>, n_categories: usize) -> Result<Self> {
        Self::new(self.edges.clone(), labels, n_categories)
    }
}

/// A fixed-size slice of the edge stream plus the label events assigned
/// to it by the last-edge-before rule.
#[derive(Debug, Clone)]
pub struct Batch {
    pub index: usize,
    pub edges: Vec<TemporalEdge>,
    pub labels: Vec<LabelEvent>,
}

/// Result of a chronological three-way split.
#[derive(Debug, Clone)]
pub struct SplitLogs {
    pub train: EventLog,
    pub valid: EventLog,
    pub test: EventLog,
    /// Set when at least one split received zero edges.
    pub empty_split_warning: bool,
}

/// Index of the last edge with `timestamp <= t`, or None when `t` precedes
/// every edge. Edges must be sorted by timestamp.
fn last_edge_at_or_before(edges: &[TemporalEdge], t: f64) -> Option<usize> {
    // partition_point: count of edges with timestamp <= t
    let count = edges.partition_point(|e| e.timestamp <= t);
    count.checked_sub(1)
}

/// Split a log chronologically by edge counts. Boundary indices are the
/// floor of the cumulative fraction times the edge count; the remainder
/// goes to the final split. Labels follow the split that contains the last
/// edge at or before their timestamp.
pub fn chronological_split(log: &EventLog, fractions: [f64; 3]) -> Result<SplitLogs> {
    let sum: f64 = fractions.iter().sum();
    if fractions.iter().any(|&f| f < 0.0 || !f.is_finite()) {
        return Err(Error::validation("split fractions must be non-negative"));
    }
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::validation(format!(
            "split fractions sum to {sum}, expected 1"
        )));
    }
    let m = log.edges.len();
    let b1 = (fractions[0] * m as f64).floor() as usize;
    let b2 = ((fractions[0] + fractions[1]) * m as f64).floor() as usize;
    let (b1, b2) = (b1.min(m), b2.min(m).max(b1));

    let split_of_edge = |idx: usize| -> usize {
        if idx < b1 {
            0
        } else if idx < b2 {
            1
        } else {
            2
        }
    };

    let mut split_labels: [Vec<LabelEvent>; 3] = Default::default();
    for l in &log.labels {
        let edge_idx = last_edge_at_or_before(&log.edges, l.timestamp).unwrap_or(0);
        split_labels[split_of_edge(edge_idx)].push(l.clone());
    }
    let [lab0, lab1, lab2] = split_labels;

    let train = EventLog::new(log.edges[..b1].to_vec(), lab0, log.n_categories)?;
    let valid = EventLog::new(log.edges[b1..b2].to_vec(), lab1, log.n_categories)?;
    let test = EventLog::new(log.edges[b2..].to_vec(), lab2, log.n_categories)?;
    let empty_split_warning =
        train.edges.is_empty() || valid.edges.is_empty() || test.edges.is_empty();
    Ok(SplitLogs {
        train,
        valid,
        test,
        empty_split_warning,
    })
}

/// Keep only the final ceil(keep_fraction * edge count) edges and the
/// label events from the kept time span onward.
pub fn truncate_train_tail(train: &EventLog, keep_fraction: f64) -> Result<EventLog> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::validation(format!(
            "keep_fraction {keep_fraction} must lie in (0, 1]"
        )));
    }
    let m = train.edges.len();
    let keep = ((keep_fraction * m as f64).ceil() as usize).min(m);
    let start = m - keep;
    let edges = train.edges[start..].to_vec();
    let labels = match edges.first() {
        Some(first) => train
            .labels
            .iter()
            .filter(|l| l.timestamp >= first.timestamp)
            .cloned()
            .collect(),
        None => Vec::new(),
    };
    EventLog::new(edges, labels, train.n_categories)
}

/// Partition the edge stream into consecutive batches of `batch_edges`
/// edges (the final batch may hold fewer). Each label event lands in the
/// batch containing the last edge with timestamp <= the label's timestamp;
/// labels preceding every edge go to batch 0.
pub fn make_batches(log: &EventLog, batch_edges: usize) -> Result<Vec<Batch>> {
    if batch_edges == 0 {
        return Err(Error::validation("batch size must be at least 1"));
    }
    if log.edges.is_empty() {
        return Ok(Vec::new());
    }
    let mut batches: Vec<Batch> = log
        .edges
        .chunks(batch_edges)
        .enumerate()
        .map(|(index, chunk)| Batch {
            index,
            edges: chunk.to_vec(),
            labels: Vec::new(),
        })
        .collect();
    for l in &log.labels {
        let edge_idx = last_edge_at_or_before(&log.edges, l.timestamp).unwrap_or(0);
        batches[edge_idx / batch_edges].labels.push(l.clone());
    }
    Ok(batches)
}

/// Fraction of batches carrying at least one label event.
pub fn compute_label_density(batches: &[Batch]) -> Result<f64> {
    if batches.is_empty() {
        return Err(Error::validation(
            "label density is undefined for an empty batch sequence",
        ));
    }
    let labeled = batches.iter().filter(|b| !b.labels.is_empty()).count();
    Ok(labeled as f64 / batches.len() as f64)
}

/// Permute edge order uniformly at random, then reassign the original
/// sorted timestamp sequence so the log stays time-ordered while the
/// interaction order is destroyed. Labels are untouched.
pub fn shuffle_edges(log: &EventLog, seed: u64) -> EventLog {
    let mut rng = seeded_rng(seed);
    let timestamps: Vec<f64> = log.edges.iter().map(|e| e.timestamp).collect();
    let mut edges = log.edges.clone();
    edges.shuffle(&mut rng);
    for (e, &t) in edges.iter_mut().zip(&timestamps) {
        e.timestamp = t;
    }
    EventLog {
        edges,
        labels: log.labels.clone(),
        n_categories: log.n_categories,
    }
}

/// Permute the multiset of target vectors uniformly across the existing
/// (node, timestamp) label slots. Slots and edges are untouched.
pub fn shuffle_targets(log: &EventLog, seed: u64) -> EventLog {
    let mut rng = seeded_rng(seed);
    let mut targets: Vec<AffinityVector> = log.labels.iter().map(|l| l.target.clone()).collect();
    targets.shuffle(&mut rng);
    let labels = log
        .labels
        .iter()
        .zip(targets)
        .map(|(slot, target)| LabelEvent {
            node: slot.node,
            timestamp: slot.timestamp,
            target,
        })
        .collect();
    EventLog {
        edges: log.edges.clone(),
        labels,
        n_categories: log.n_categories,
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    pub fn edge(src: NodeId, dst: NodeId, t: f64) -> TemporalEdge {
        TemporalEdge {
            source: src,
            destination: dst,
            timestamp: t,
            features: Vec::new(),
        }
    }

    pub fn label(node: NodeId, t: f64, values: &[f64]) -> LabelEvent {
        LabelEvent {
            node,
            timestamp: t,
            target: AffinityVector::new(values.to_vec()).unwrap(),
        }
    }

    /// n sequential edges 0->1 at timestamps 0..n.
    pub fn line_log(n: usize, n_categories: usize) -> EventLog {
        let edges = (0..n).map(|i| edge(0, 1, i as f64)).collect();
        EventLog::new(edges, Vec::new(), n_categories).unwrap()
    }
}
