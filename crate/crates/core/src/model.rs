//! The trainable predictor: deterministic decay-and-project node memory,
//! a softmax-linear affinity head, cross-entropy loss with its analytic
//! last-layer gradient, and the diminishing-step SGD update.

use std::collections::BTreeMap;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{hash_to_slot, seeded_rng};
use crate::stream::{AffinityVector, NodeId, TemporalEdge};

/// Softmax output for one node; lives on the simplex by construction.
pub type Prediction = AffinityVector;

/// Non-learned per-node memory. Embeddings have dimension `dim` with the
/// final component reserved as a bias fixed to 1, so no node ever presents
/// an all-zero embedding. Source-side only: destination memories are not
/// updated.
#[derive(Debug, Clone)]
pub struct NodeMemory {
    dim: usize,
    decay: f64,
    /// Fixed random projection (dim x feat_dim), standard normal scaled by
    /// 1/sqrt(feat_dim); empty when edges carry no features.
    projection: Vec<Vec<f64>>,
    feat_dim: usize,
    embeddings: BTreeMap<NodeId, Vec<f64>>,
    last_update: BTreeMap<NodeId, f64>,
    last_timestamp: f64,
}

impl NodeMemory {
    pub fn new(dim: usize, decay: f64, feat_dim: usize, seed: u64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::validation("memory dimension must be at least 2"));
        }
        if !(0.0..=1.0).contains(&decay) {
            return Err(Error::validation(format!(
                "memory decay {decay} must lie in [0, 1]"
            )));
        }
        let mut rng = seeded_rng(seed);
        let scale = if feat_dim > 0 {
            1.0 / (feat_dim as f64).sqrt()
        } else {
            0.0
        };
        let projection = (0..dim)
            .map(|_| {
                (0..feat_dim)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z * scale
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            dim,
            decay,
            projection,
            feat_dim,
            embeddings: BTreeMap::new(),
            last_update: BTreeMap::new(),
            last_timestamp: f64::NEG_INFINITY,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn default_embedding(&self) -> Vec<f64> {
        let mut e = vec![0.0; self.dim];
        e[self.dim - 1] = 1.0;
        e
    }

    /// Current embedding for a node; unseen nodes get zero-with-bias.
    pub fn embedding(&self, node: NodeId) -> Vec<f64> {
        self.embeddings
            .get(&node)
            .cloned()
            .unwrap_or_else(|| self.default_embedding())
    }

    /// Timestamp of the node's most recent source-side interaction.
    pub fn last_update(&self, node: NodeId) -> Option<f64> {
        self.last_update.get(&node).copied()
    }

    /// Apply one batch's worth of edges in order. Edges must not precede
    /// anything already applied.
    pub fn update(&mut self, edges: &[TemporalEdge]) -> Result<()> {
        for edge in edges {
            if edge.timestamp < self.last_timestamp {
                return Err(Error::Chronology(format!(
                    "edge at {} precedes memory time {}",
                    edge.timestamp, self.last_timestamp
                )));
            }
            self.last_timestamp = edge.timestamp;
            self.last_update.insert(edge.source, edge.timestamp);
            if self.decay == 1.0 {
                continue; // frozen memory
            }
            let mut signal = vec![0.0; self.dim];
            if self.feat_dim > 0 {
                for (row, s) in self.projection.iter().zip(signal.iter_mut()) {
                    *s = row
                        .iter()
                        .zip(&edge.features)
                        .map(|(w, f)| w * f)
                        .sum::<f64>();
                }
            }
            // destination encoded by a stable hash into a non-bias slot
            signal[hash_to_slot(edge.destination, self.dim - 1)] += 1.0;

            let entry = self
                .embeddings
                .entry(edge.source)
                .or_insert_with(|| {
                    let mut e = vec![0.0; self.dim];
                    e[self.dim - 1] = 1.0;
                    e
                });
            for (e, s) in entry.iter_mut().zip(&signal) {
                *e = self.decay * *e + (1.0 - self.decay) * s;
            }
            let norm = entry.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                for e in entry.iter_mut() {
                    *e /= norm;
                }
            }
            let dim = self.dim;
            entry[dim - 1] = 1.0;
        }
        Ok(())
    }
}

/// Last-layer weights C (n_categories x dim), trained by SGD.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    weights: Vec<Vec<f64>>,
}

impl ModelParams {
    /// Seeded normal initialization with standard deviation 1/sqrt(dim).
    pub fn init(n_categories: usize, dim: usize, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let sd = 1.0 / (dim as f64).sqrt();
        let weights = (0..n_categories)
            .map(|_| {
                (0..dim)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z * sd
                    })
                    .collect()
            })
            .collect();
        Self { weights }
    }

    pub fn zeros(n_categories: usize, dim: usize) -> Self {
        Self {
            weights: vec![vec![0.0; dim]; n_categories],
        }
    }

    pub fn n_categories(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.weights.first().map_or(0, |r| r.len())
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.weights
    }
}

/// p = softmax(C e), computed with max subtraction.
pub fn forward(params: &ModelParams, embedding: &[f64]) -> Result<Prediction> {
    if embedding.len() != params.dim() {
        return Err(Error::Dimension(format!(
            "embedding dim {} vs params dim {}",
            embedding.len(),
            params.dim()
        )));
    }
    let logits: Vec<f64> = params
        .weights
        .iter()
        .map(|row| row.iter().zip(embedding).map(|(w, e)| w * e).sum())
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    AffinityVector::new(exps.into_iter().map(|v| v / sum).collect())
}

/// Cross-entropy against a (possibly soft) target: -sum_i y_i ln(p_i + 1e-12).
pub fn ce_loss(prediction: &Prediction, target: &AffinityVector) -> f64 {
    prediction
        .values()
        .iter()
        .zip(target.values())
        .map(|(p, y)| -y * (p + 1e-12).ln())
        .sum()
}

/// Analytic last-layer gradient: G[i][j] = (p_i - y_i) e_j.
pub fn grad_last_layer(
    prediction: &Prediction,
    target: &AffinityVector,
    embedding: &[f64],
) -> Result<Vec<Vec<f64>>> {
    if prediction.len() != target.len() {
        return Err(Error::Dimension(format!(
            "prediction has {} categories, target {}",
            prediction.len(),
            target.len()
        )));
    }
    Ok(prediction
        .values()
        .iter()
        .zip(target.values())
        .map(|(p, y)| embedding.iter().map(|e| (p - y) * e).collect())
        .collect())
}

/// Diminishing-step SGD: C <- C - max(1/(mu t), alpha_min) * G.
pub fn sgd_step(
    params: &mut ModelParams,
    grad: &[Vec<f64>],
    step: u64,
    mu: f64,
    alpha_min: f64,
) -> Result<()> {
    debug_assert!(step >= 1);
    let mut norm_sq = 0.0;
    for row in grad {
        for g in row {
            norm_sq += g * g;
        }
    }
    if !norm_sq.is_finite() {
        return Err(Error::NonFiniteGradient {
            step,
            norm: norm_sq.sqrt(),
        });
    }
    let alpha = (1.0 / (mu * step as f64)).max(alpha_min);
    for (prow, grow) in params.weights.iter_mut().zip(grad) {
        for (p, g) in prow.iter_mut().zip(grow) {
            *p -= alpha * g;
        }
    }
    Ok(())
}

/// Step size at step t for a (mu, alpha_min) schedule.
pub fn step_size(step: u64, mu: f64, alpha_min: f64) -> f64 {
    (1.0 / (mu * step as f64)).max(alpha_min)
}
