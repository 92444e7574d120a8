//! Per-node pseudo-target aggregation: Historical Average, Moving Average,
//! and Persistent Forecast, plus zero-sum noise regularization.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng::seeded_rng;
use crate::stream::{AffinityVector, NodeId};

/// Aggregation strategy for pseudo-target generation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AggregatorKind {
    /// Arithmetic mean of all past observed targets.
    HistoricalAverage,
    /// Convex update toward each new observation with window w >= 1
    /// (w need not be an integer; w = 1 keeps only the newest target).
    MovingAverage { window: f64 },
    /// The most recent observed target.
    PersistentForecast,
}

impl AggregatorKind {
    pub fn validate(&self) -> Result<()> {
        if let AggregatorKind::MovingAverage { window } = self {
            if *window < 1.0 || !window.is_finite() {
                return Err(Error::validation(format!(
                    "moving-average window {window} must be >= 1"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum NodeAgg {
    Ha { sum: Vec<f64>, count: u64 },
    Ma { avg: Vec<f64> },
    Pf { last: Vec<f64> },
}

/// Incremental per-node aggregation state. Nodes with no observed target
/// have no entry, and their pseudo-target is unavailable.
#[derive(Debug, Clone)]
pub struct AggregatorState {
    kind: AggregatorKind,
    n_categories: usize,
    nodes: BTreeMap<NodeId, NodeAgg>,
}

impl AggregatorState {
    pub fn new(kind: AggregatorKind, n_categories: usize) -> Result<Self> {
        kind.validate()?;
        if n_categories == 0 {
            return Err(Error::validation("n_categories must be positive"));
        }
        Ok(Self {
            kind,
            n_categories,
            nodes: BTreeMap::new(),
        })
    }

    pub fn kind(&self) -> AggregatorKind {
        self.kind
    }

    pub fn observed_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Fold one observed target into the node's state.
    pub fn observe(&mut self, node: NodeId, target: &AffinityVector) -> Result<()> {
        if target.len() != self.n_categories {
            return Err(Error::Dimension(format!(
                "target has {} categories, aggregator has {}",
                target.len(),
                self.n_categories
            )));
        }
        match self.nodes.entry(node) {
            std::collections::btree_map::Entry::Vacant(slot) => {
                let v = target.values().to_vec();
                slot.insert(match self.kind {
                    AggregatorKind::HistoricalAverage => NodeAgg::Ha { sum: v, count: 1 },
                    // first observation initializes the average directly
                    AggregatorKind::MovingAverage { .. } => NodeAgg::Ma { avg: v },
                    AggregatorKind::PersistentForecast => NodeAgg::Pf { last: v },
                });
            }
            std::collections::btree_map::Entry::Occupied(mut slot) => match slot.get_mut() {
                NodeAgg::Ha { sum, count } => {
                    for (s, y) in sum.iter_mut().zip(target.values()) {
                        *s += y;
                    }
                    *count += 1;
                }
                NodeAgg::Ma { avg } => {
                    let w = match self.kind {
                        AggregatorKind::MovingAverage { window } => window,
                        _ => unreachable!("variant fixed by kind"),
                    };
                    for (a, y) in avg.iter_mut().zip(target.values()) {
                        *a = (w - 1.0) / w * *a + y / w;
                    }
                }
                NodeAgg::Pf { last } => {
                    last.copy_from_slice(target.values());
                }
            },
        }
        Ok(())
    }

    /// The node's current pseudo-target, or None when it has no history.
    pub fn pseudo_target(&self, node: NodeId) -> Option<AffinityVector> {
        let values = match self.nodes.get(&node)? {
            NodeAgg::Ha { sum, count } => {
                sum.iter().map(|s| s / *count as f64).collect::<Vec<f64>>()
            }
            NodeAgg::Ma { avg } => avg.clone(),
            NodeAgg::Pf { last } => last.clone(),
        };
        // convex combinations of simplex vectors stay within validation
        // tolerance; no renormalization, so PF returns stored bits exactly
        Some(AffinityVector::new(values).expect("aggregate stays on simplex"))
    }
}

/// Zero-sum noise configuration for pseudo-target perturbation.
/// gamma = 0 disables noise exactly.
#[derive(Debug, Clone, Copy)]
pub struct NoiseSpec {
    pub gamma: f64,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            gamma: 0.0,
            alpha: 1.0,
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if self.gamma < 0.0 || !self.gamma.is_finite() {
            return Err(Error::validation("noise gamma must be >= 0"));
        }
        if self.alpha <= 0.0 || !self.alpha.is_finite() {
            return Err(Error::validation("noise alpha must be > 0"));
        }
        Ok(())
    }
}

/// Stateful noise source: one stream per training run, advanced once per
/// pseudo-target emission.
#[derive(Debug, Clone)]
pub struct NoiseGenerator {
    gamma: f64,
    alpha: f64,
    rng: ChaCha8Rng,
}

impl NoiseGenerator {
    pub fn new(spec: &NoiseSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            gamma: spec.gamma,
            alpha: spec.alpha,
            rng: seeded_rng(spec.seed),
        })
    }

    /// Perturb a pseudo-target with mean-subtracted uniform noise, then
    /// clip negatives and renormalize back onto the simplex. Bit-exact
    /// identity when gamma = 0.
    pub fn perturb(&mut self, ybar: &AffinityVector) -> AffinityVector {
        if self.gamma == 0.0 {
            return ybar.clone();
        }
        add_zero_sum_noise(ybar, self.gamma, self.alpha, &mut self.rng)
    }
}

/// One noise application: draw n values uniform on (-alpha, alpha),
/// subtract their mean so they sum to zero, add gamma times the result to
/// `ybar`, clip negative components to 0, and renormalize to sum 1.
pub fn add_zero_sum_noise(
    ybar: &AffinityVector,
    gamma: f64,
    alpha: f64,
    rng: &mut impl Rng,
) -> AffinityVector {
    if gamma == 0.0 {
        return ybar.clone();
    }
    let n = ybar.len();
    let eps: Vec<f64> = (0..n)
        .map(|_| rng.gen_range(-alpha..alpha))
        .collect();
    let mean = eps.iter().sum::<f64>() / n as f64;
    let mut values: Vec<f64> = ybar
        .values()
        .iter()
        .zip(&eps)
        .map(|(y, e)| (y + gamma * (e - mean)).max(0.0))
        .collect();
    let sum: f64 = values.iter().sum();
    // pre-clip sum is exactly 1, so at least one component stays positive
    for v in &mut values {
        *v /= sum;
    }
    AffinityVector::new(values).expect("clip + renormalize lands on simplex")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn av(values: &[f64]) -> AffinityVector {
        AffinityVector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn ha_is_running_mean() {
        let mut state = AggregatorState::new(AggregatorKind::HistoricalAverage, 2).unwrap();
        assert!(state.pseudo_target(0).is_none());
        state.observe(0, &av(&[1.0, 0.0])).unwrap();
        state.observe(0, &av(&[0.0, 1.0])).unwrap();
        assert_eq!(state.pseudo_target(0).unwrap().values(), &[0.5, 0.5]);
        state.observe(0, &av(&[1.0, 0.0])).unwrap();
        let t = state.pseudo_target(0).unwrap();
        assert!((t.values()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((t.values()[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ha_incremental_equals_from_scratch_mean() {
        use rand::Rng;
        let mut rng = seeded_rng(17);
        for _ in 0..20 {
            let n = rng.gen_range(2..6);
            let len = rng.gen_range(1..1000);
            let mut state =
                AggregatorState::new(AggregatorKind::HistoricalAverage, n).unwrap();
            let mut sums = vec![0.0; n];
            for _ in 0..len {
                let raw: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 1e-3).collect();
                let total: f64 = raw.iter().sum();
                let y = av(&raw.iter().map(|v| v / total).collect::<Vec<_>>());
                for (s, v) in sums.iter_mut().zip(y.values()) {
                    *s += v;
                }
                state.observe(3, &y).unwrap();
            }
            let got = state.pseudo_target(3).unwrap();
            for (g, s) in got.values().iter().zip(&sums) {
                assert!((g - s / len as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ma_update_rule_and_initialization() {
        let mut state =
            AggregatorState::new(AggregatorKind::MovingAverage { window: 2.0 }, 2).unwrap();
        state.observe(5, &av(&[1.0, 0.0])).unwrap();
        // first observation initializes the average
        assert_eq!(state.pseudo_target(5).unwrap().values(), &[1.0, 0.0]);
        state.observe(5, &av(&[0.0, 1.0])).unwrap();
        assert_eq!(state.pseudo_target(5).unwrap().values(), &[0.5, 0.5]);
    }

    #[test]
    fn ma_matches_closed_form_expansion() {
        use rand::Rng;
        let mut rng = seeded_rng(23);
        for &w in &[1.0, 2.0, 3.5, 7.0, 15.0] {
            let n = 3;
            let mut state =
                AggregatorState::new(AggregatorKind::MovingAverage { window: w }, n).unwrap();
            let mut ys: Vec<Vec<f64>> = Vec::new();
            for _ in 0..40 {
                let raw: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 1e-3).collect();
                let total: f64 = raw.iter().sum();
                let y: Vec<f64> = raw.iter().map(|v| v / total).collect();
                state.observe(0, &av(&y)).unwrap();
                ys.push(y);
            }
            // ybar = ((w-1)/w)^(m-1) y_1 + sum_{j=2..m} (1/w)((w-1)/w)^(m-j) y_j
            let m = ys.len();
            let decay = (w - 1.0) / w;
            let mut expect = vec![0.0; n];
            for (j, y) in ys.iter().enumerate() {
                let coeff = if j == 0 {
                    decay.powi((m - 1) as i32)
                } else {
                    (1.0 / w) * decay.powi((m - 1 - j) as i32)
                };
                for (e, v) in expect.iter_mut().zip(y) {
                    *e += coeff * v;
                }
            }
            let got = state.pseudo_target(0).unwrap();
            for (g, e) in got.values().iter().zip(&expect) {
                assert!((g - e).abs() < 1e-10, "w={w}");
            }
        }
    }

    #[test]
    fn pf_returns_last_observation_exactly() {
        let mut state = AggregatorState::new(AggregatorKind::PersistentForecast, 2).unwrap();
        state.observe(1, &av(&[1.0, 0.0])).unwrap();
        state.observe(1, &av(&[0.3, 0.7])).unwrap();
        assert_eq!(state.pseudo_target(1).unwrap().values(), &[0.3, 0.7]);
    }

    #[test]
    fn constant_stream_is_fixed_point_for_all_kinds() {
        let c = av(&[0.2, 0.5, 0.3]);
        for kind in [
            AggregatorKind::HistoricalAverage,
            AggregatorKind::MovingAverage { window: 4.0 },
            AggregatorKind::PersistentForecast,
        ] {
            let mut state = AggregatorState::new(kind, 3).unwrap();
            for _ in 0..25 {
                state.observe(0, &c).unwrap();
            }
            let got = state.pseudo_target(0).unwrap();
            for (g, e) in got.values().iter().zip(c.values()) {
                assert!((g - e).abs() < 1e-12, "{kind:?}");
            }
        }
    }

    #[test]
    fn window_below_one_is_rejected() {
        assert!(AggregatorKind::MovingAverage { window: 0.5 }.validate().is_err());
        assert!(AggregatorKind::MovingAverage { window: 1.0 }.validate().is_ok());
    }

    #[test]
    fn zero_gamma_is_bitwise_identity() {
        let spec = NoiseSpec {
            gamma: 0.0,
            alpha: 1.0,
            seed: 3,
        };
        let mut gen = NoiseGenerator::new(&spec).unwrap();
        let y = av(&[0.25, 0.75]);
        let out = gen.perturb(&y);
        assert_eq!(out.values(), y.values());
    }

    #[test]
    fn noisy_outputs_stay_on_simplex() {
        let mut rng = seeded_rng(11);
        let y = av(&[0.6, 0.1, 0.3]);
        for _ in 0..10_000 {
            let out = add_zero_sum_noise(&y, 0.5, 1.0, &mut rng);
            let sum: f64 = out.values().iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(out.values().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn small_noise_is_mean_preserving() {
        // gamma=0.01, alpha=1: mean over many draws within 4 standard
        // errors of the clean target (clipping is rare at this scale)
        let y = av(&[0.5, 0.5]);
        let mut rng = seeded_rng(29);
        let m = 100_000;
        let mut sums = [0.0f64; 2];
        let mut sq = [0.0f64; 2];
        for _ in 0..m {
            let out = add_zero_sum_noise(&y, 0.01, 1.0, &mut rng);
            for i in 0..2 {
                sums[i] += out.values()[i];
                sq[i] += out.values()[i] * out.values()[i];
            }
        }
        for i in 0..2 {
            let mean = sums[i] / m as f64;
            let var = sq[i] / m as f64 - mean * mean;
            let se = (var / m as f64).sqrt();
            assert!(
                (mean - 0.5).abs() <= 4.0 * se,
                "component {i}: mean {mean}, se {se}"
            );
        }
    }

    #[test]
    fn noise_stream_is_deterministic_per_seed() {
        let spec = NoiseSpec {
            gamma: 0.3,
            alpha: 1.0,
            seed: 99,
        };
        let y = av(&[0.4, 0.6]);
        let mut a = NoiseGenerator::new(&spec).unwrap();
        let mut b = NoiseGenerator::new(&spec).unwrap();
        for _ in 0..50 {
            assert_eq!(a.perturb(&y).values(), b.perturb(&y).values());
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let mut state = AggregatorState::new(AggregatorKind::HistoricalAverage, 3).unwrap();
        assert!(state.observe(0, &av(&[0.5, 0.5])).is_err());
    }
}
