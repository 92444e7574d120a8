//! Closed-form label-statistic moments, regret-bound coefficients, and the
//! Monte Carlo machinery that cross-checks them.
//!
//! The central quantity is t_h: the value of one true-label component of a
//! history-aggregated target. It is the product of a Bernoulli(u)
//! observation indicator and a Binomial(h, 1/k) count scaled by 1/h.

use rand::Rng;
use rand_distr::{Bernoulli, Binomial, Distribution};

use crate::error::{Error, Result};
use crate::model::{grad_last_layer, forward, ModelParams};
use crate::rng::seeded_rng;
use crate::stream::AffinityVector;

/// The (k, n, h, u) label process: k true categories out of n, history
/// length h, observation probability u.
#[derive(Debug, Clone, Copy)]
pub struct LabelProcessParams {
    pub true_set: u64,
    pub n_categories: u64,
    pub history: u64,
    pub obs_prob: f64,
}

impl LabelProcessParams {
    pub fn new(true_set: u64, n_categories: u64, history: u64, obs_prob: f64) -> Result<Self> {
        let p = Self {
            true_set,
            n_categories,
            history,
            obs_prob,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.true_set == 0 || self.true_set > self.n_categories {
            return Err(Error::validation(format!(
                "require 1 <= k <= n, got k={} n={}",
                self.true_set, self.n_categories
            )));
        }
        if self.history == 0 {
            return Err(Error::validation("history length h must be >= 1"));
        }
        if !(self.obs_prob > 0.0 && self.obs_prob <= 1.0) {
            return Err(Error::validation(format!(
                "observation probability {} must lie in (0, 1]",
                self.obs_prob
            )));
        }
        Ok(())
    }
}

/// E[t_h] = u/k, independent of the history length.
pub fn analytic_mean_t_h(params: &LabelProcessParams) -> f64 {
    params.obs_prob / params.true_set as f64
}

/// Var(t_h) = u(k-1)/(k^2 h) + u(1-u)/k^2.
///
/// At h = 1 this reduces to the one-hot form (u/k)(1 - u/k).
pub fn analytic_var_t_h(params: &LabelProcessParams) -> f64 {
    let k = params.true_set as f64;
    let h = params.history as f64;
    let u = params.obs_prob;
    u * (k - 1.0) / (k * k * h) + u * (1.0 - u) / (k * k)
}

/// One-hot variance form (u/k)(1 - u/k); equals `analytic_var_t_h` at h=1.
pub fn oh_variance(true_set: u64, obs_prob: f64) -> f64 {
    let p = obs_prob / true_set as f64;
    p * (1.0 - p)
}

/// Moments of a Monte Carlo run together with their standard errors.
#[derive(Debug, Clone, Copy)]
pub struct McMoments {
    pub mean: f64,
    pub variance: f64,
    pub mean_se: f64,
    pub variance_se: f64,
    pub samples: u64,
}

/// Streaming central-moment accumulator (up to the fourth moment), with
/// pairwise merge so sharded runs combine exactly.
#[derive(Debug, Clone, Copy, Default)]
pub struct MomentAccumulator {
    n: u64,
    mean: f64,
    m2: f64,
    m3: f64,
    m4: f64,
}

impl MomentAccumulator {
    pub fn push(&mut self, x: f64) {
        let n1 = self.n as f64;
        self.n += 1;
        let n = self.n as f64;
        let delta = x - self.mean;
        let delta_n = delta / n;
        let delta_n2 = delta_n * delta_n;
        let term1 = delta * delta_n * n1;
        self.mean += delta_n;
        self.m4 += term1 * delta_n2 * (n * n - 3.0 * n + 3.0)
            + 6.0 * delta_n2 * self.m2
            - 4.0 * delta_n * self.m3;
        self.m3 += term1 * delta_n * (n - 2.0) - 3.0 * delta_n * self.m2;
        self.m2 += term1;
    }

    pub fn merge(&self, other: &Self) -> Self {
        if other.n == 0 {
            return *self;
        }
        if self.n == 0 {
            return *other;
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let delta = other.mean - self.mean;
        let d2 = delta * delta;
        let mean = self.mean + delta * nb / n;
        let m2 = self.m2 + other.m2 + d2 * na * nb / n;
        let m3 = self.m3
            + other.m3
            + d2 * delta * na * nb * (na - nb) / (n * n)
            + 3.0 * delta * (na * other.m2 - nb * self.m2) / n;
        let m4 = self.m4
            + other.m4
            + d2 * d2 * na * nb * (na * na - na * nb + nb * nb) / (n * n * n)
            + 6.0 * d2 * (na * na * other.m2 + nb * nb * self.m2) / (n * n)
            + 4.0 * delta * (na * other.m3 - nb * self.m3) / n;
        Self {
            n: self.n + other.n,
            mean,
            m2,
            m3,
            m4,
        }
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn finish(&self) -> McMoments {
        let m = self.n as f64;
        let variance = if self.n > 1 { self.m2 / (m - 1.0) } else { 0.0 };
        let mean_se = if self.n > 1 {
            (variance / m).sqrt()
        } else {
            0.0
        };
        // SE of the sample variance via the fourth central moment
        let variance_se = if self.n > 3 {
            let mu4 = self.m4 / m;
            let var_of_var = (mu4 - variance * variance * (m - 3.0) / (m - 1.0)) / m;
            var_of_var.max(0.0).sqrt()
        } else {
            0.0
        };
        McMoments {
            mean: self.mean,
            variance,
            mean_se,
            variance_se,
            samples: self.n,
        }
    }
}

/// Monte Carlo estimate of the moments of t_h = xi * X / h with
/// xi ~ Bernoulli(u) and X ~ Binomial(h, 1/k) independent.
pub fn mc_estimate_t_h(params: &LabelProcessParams, samples: u64, seed: u64) -> Result<McMoments> {
    params.validate()?;
    if samples < 1_000 {
        return Err(Error::validation("Monte Carlo needs at least 10^3 samples"));
    }
    let mut rng = seeded_rng(seed);
    let bern = Bernoulli::new(params.obs_prob).expect("u validated in (0,1]");
    let bino = Binomial::new(params.history, 1.0 / params.true_set as f64)
        .expect("1/k validated in (0,1]");
    let h = params.history as f64;
    let mut acc = MomentAccumulator::default();
    for _ in 0..samples {
        let xi = bern.sample(&mut rng);
        let x = bino.sample(&mut rng);
        acc.push(if xi { x as f64 / h } else { 0.0 });
    }
    Ok(acc.finish())
}

/// Inputs for the SGD regret upper bound.
#[derive(Debug, Clone, Copy)]
pub struct RegretParams {
    /// Strong-convexity constant.
    pub mu: f64,
    pub batch_size: u64,
    /// Step horizon; must be >= 2 so log T > 0.
    pub horizon: u64,
    /// The proportionality constant left unspecified by the bound.
    pub constant: f64,
}

impl RegretParams {
    pub fn validate(&self) -> Result<()> {
        if self.mu <= 0.0 || self.constant <= 0.0 || self.batch_size == 0 {
            return Err(Error::validation(
                "regret parameters must be strictly positive",
            ));
        }
        if self.horizon < 2 {
            return Err(Error::validation("horizon T must be >= 2"));
        }
        Ok(())
    }
}

/// Upper regret bound 17 sigma^2 (1 + ln T) / (mu B T).
pub fn sgd_regret_bound(sigma2: f64, rp: &RegretParams) -> Result<f64> {
    rp.validate()?;
    if sigma2 < 0.0 {
        return Err(Error::validation("variance must be non-negative"));
    }
    let t = rp.horizon as f64;
    Ok(17.0 * sigma2 * (1.0 + t.ln()) / (rp.mu * rp.batch_size as f64 * t))
}

/// The exact and informal regret coefficients for the OH and HA cases,
/// and the implied convergence speedup.
#[derive(Debug, Clone, Copy)]
pub struct RegretCoeffs {
    /// Exact OH coefficient 1 - u/k.
    pub oh_coeff: f64,
    /// Exact HA coefficient (k-1)/(kh) + (1-u)/k.
    pub ha_coeff: f64,
    /// Informal OH upper bound (= 1).
    pub informal_oh: f64,
    /// Informal HA upper bound 2/min(h, k).
    pub informal_ha: f64,
    /// oh_coeff / ha_coeff.
    pub speedup: f64,
}

/// Coefficients multiplying (u/k) * c/(mu B) * (1 + log T)/T in the two
/// regret bounds. The informal bounds dominate the exact coefficients for
/// every valid (k, h, u).
pub fn regret_coefficients(params: &LabelProcessParams) -> Result<RegretCoeffs> {
    params.validate()?;
    let k = params.true_set as f64;
    let h = params.history as f64;
    let u = params.obs_prob;
    let oh_coeff = 1.0 - u / k;
    let ha_coeff = (k - 1.0) / (k * h) + (1.0 - u) / k;
    let informal_ha = 2.0 / params.history.min(params.true_set) as f64;
    debug_assert!(oh_coeff <= 1.0 + 1e-15);
    debug_assert!(ha_coeff <= informal_ha + 1e-15);
    Ok(RegretCoeffs {
        oh_coeff,
        ha_coeff,
        informal_oh: 1.0,
        informal_ha,
        speedup: oh_coeff / ha_coeff,
    })
}

/// How labels are presented to the gradient-variance probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelPresentation {
    /// Raw one-hot observations (h = 1).
    OneHot,
    /// Normalized aggregates over `history` fresh observations.
    HistoryAverage { history: u64 },
}

/// Draw one full n-dimensional label realization of the process. With
/// probability u the (possibly aggregated) observation lands uniformly on
/// the first k categories; otherwise it lands outside the true set.
pub fn sample_label(
    params: &LabelProcessParams,
    presentation: LabelPresentation,
    rng: &mut impl Rng,
) -> AffinityVector {
    let n = params.n_categories as usize;
    let k = params.true_set as usize;
    let h = match presentation {
        LabelPresentation::OneHot => 1,
        LabelPresentation::HistoryAverage { history } => history,
    };
    let observed = rng.gen::<f64>() < params.obs_prob;
    let mut values = vec![0.0; n];
    for _ in 0..h {
        let cat = if observed {
            rng.gen_range(0..k)
        } else if k < n {
            k + rng.gen_range(0..n - k)
        } else {
            rng.gen_range(0..n)
        };
        values[cat] += 1.0 / h as f64;
    }
    AffinityVector::from_weights(values, 1e-9).expect("counts normalized by h")
}

/// Trace of the per-sample gradient covariance at a fixed (C, e): the mean
/// squared Frobenius deviation of grad_last_layer from its sample mean,
/// over `samples` label realizations.
pub fn empirical_gradient_variance(
    params_model: &ModelParams,
    embedding: &[f64],
    process: &LabelProcessParams,
    presentation: LabelPresentation,
    samples: u64,
    seed: u64,
) -> Result<f64> {
    process.validate()?;
    if process.n_categories as usize != params_model.n_categories() {
        return Err(Error::Dimension(format!(
            "label process has {} categories, model has {}",
            process.n_categories,
            params_model.n_categories()
        )));
    }
    let prediction = forward(params_model, embedding)?;
    let mut rng = seeded_rng(seed);
    let n = params_model.n_categories();
    let d = params_model.dim();

    let mut grads: Vec<Vec<f64>> = Vec::with_capacity(samples as usize);
    let mut mean = vec![0.0; n * d];
    for _ in 0..samples {
        let y = sample_label(process, presentation, &mut rng);
        let g = grad_last_layer(&prediction, &y, embedding)?;
        let flat: Vec<f64> = g.into_iter().flatten().collect();
        for (m, v) in mean.iter_mut().zip(&flat) {
            *m += v;
        }
        grads.push(flat);
    }
    let m = samples as f64;
    for v in &mut mean {
        *v /= m;
    }
    let total: f64 = grads
        .iter()
        .map(|g| {
            g.iter()
                .zip(&mean)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum();
    Ok(total / m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lp(k: u64, n: u64, h: u64, u: f64) -> LabelProcessParams {
        LabelProcessParams::new(k, n, h, u).unwrap()
    }

    #[test]
    fn mean_is_u_over_k() {
        assert_eq!(analytic_mean_t_h(&lp(1, 4, 7, 1.0)), 1.0);
        assert_eq!(analytic_mean_t_h(&lp(2, 4, 1, 1.0)), 0.5);
        assert!((analytic_mean_t_h(&lp(4, 8, 10, 0.9)) - 0.225).abs() < 1e-15);
    }

    #[test]
    fn variance_formula_values() {
        assert_eq!(analytic_var_t_h(&lp(2, 4, 1, 1.0)), 0.25);
        assert_eq!(analytic_var_t_h(&lp(1, 4, 1, 1.0)), 0.0);
        // u(k-1)/(k^2 h) + u(1-u)/k^2 at (4, 10, 0.9):
        // 0.9*3/160 + 0.9*0.1/16 = 0.016875 + 0.005625 = 0.0225
        assert!((analytic_var_t_h(&lp(4, 8, 10, 0.9)) - 0.0225).abs() < 1e-15);
    }

    #[test]
    fn h1_variance_matches_one_hot_form_on_grid() {
        for k in 1..=20u64 {
            for ui in 1..=20 {
                let u = ui as f64 / 20.0;
                let p = lp(k, k + 3, 1, u);
                assert!(
                    (analytic_var_t_h(&p) - oh_variance(k, u)).abs() < 1e-12,
                    "k={k} u={u}"
                );
            }
        }
    }

    #[test]
    fn variance_strictly_decreasing_in_h() {
        for k in 2..=6u64 {
            let mut prev = f64::INFINITY;
            for h in [1u64, 2, 5, 20, 100] {
                let v = analytic_var_t_h(&lp(k, 10, h, 0.8));
                assert!(v < prev, "k={k} h={h}");
                prev = v;
            }
        }
    }

    #[test]
    fn mc_is_exact_for_deterministic_label() {
        let m = mc_estimate_t_h(&lp(1, 3, 1, 1.0), 10_000, 1).unwrap();
        assert_eq!(m.mean, 1.0);
        assert_eq!(m.variance, 0.0);
    }

    #[test]
    fn mc_matches_analytic_within_four_se() {
        for (k, h, u) in [(2u64, 1u64, 1.0), (5, 20, 0.8), (3, 7, 0.7)] {
            let p = lp(k, k + 2, h, u);
            let m = mc_estimate_t_h(&p, 200_000, 7).unwrap();
            let am = analytic_mean_t_h(&p);
            let av = analytic_var_t_h(&p);
            assert!(
                (m.mean - am).abs() <= 4.0 * m.mean_se,
                "mean {} vs {} (se {})",
                m.mean,
                am,
                m.mean_se
            );
            assert!(
                (m.variance - av).abs() <= 4.0 * m.variance_se,
                "var {} vs {} (se {})",
                m.variance,
                av,
                m.variance_se
            );
        }
    }

    #[test]
    fn mc_rejects_tiny_sample_counts() {
        assert!(mc_estimate_t_h(&lp(2, 4, 1, 1.0), 10, 1).is_err());
    }

    #[test]
    fn moment_merge_agrees_with_single_pass() {
        let mut rng = seeded_rng(3);
        let xs: Vec<f64> = (0..10_000).map(|_| rng.gen::<f64>().powi(2)).collect();
        let mut whole = MomentAccumulator::default();
        for &x in &xs {
            whole.push(x);
        }
        let mut a = MomentAccumulator::default();
        let mut b = MomentAccumulator::default();
        for &x in &xs[..3_333] {
            a.push(x);
        }
        for &x in &xs[3_333..] {
            b.push(x);
        }
        let merged = a.merge(&b).finish();
        let direct = whole.finish();
        assert!((merged.mean - direct.mean).abs() < 1e-12);
        assert!((merged.variance - direct.variance).abs() < 1e-12);
        assert!((merged.variance_se - direct.variance_se).abs() < 1e-12);
        assert_eq!(merged.samples, direct.samples);
    }

    #[test]
    fn regret_bound_values() {
        let rp = RegretParams {
            mu: 1.0,
            batch_size: 1,
            horizon: 2,
            constant: 1.0,
        };
        assert_eq!(sgd_regret_bound(0.0, &rp).unwrap(), 0.0);
        let b = sgd_regret_bound(1.0, &rp).unwrap();
        assert!((b - 17.0 * (1.0 + 2f64.ln()) / 2.0).abs() < 1e-12);
        assert!((b - 14.392).abs() < 1e-3);

        let doubled = RegretParams {
            batch_size: 2,
            ..rp
        };
        let b2 = sgd_regret_bound(1.0, &doubled).unwrap();
        assert!((b2 - b / 2.0).abs() < 1e-15);
    }

    #[test]
    fn regret_bound_rejects_degenerate_horizon() {
        let rp = RegretParams {
            mu: 1.0,
            batch_size: 1,
            horizon: 1,
            constant: 1.0,
        };
        assert!(sgd_regret_bound(1.0, &rp).is_err());
    }

    #[test]
    fn regret_coefficient_values() {
        let c = regret_coefficients(&lp(10, 50, 100, 1.0)).unwrap();
        assert!((c.oh_coeff - 0.9).abs() < 1e-15);
        assert!((c.ha_coeff - 0.009).abs() < 1e-15);
        assert!((c.speedup - 100.0).abs() < 1e-10);
        assert_eq!(c.informal_oh, 1.0);
        assert_eq!(c.informal_ha, 2.0 / 10.0);

        // h = 1 collapses HA to OH
        for k in 2..8 {
            let c = regret_coefficients(&lp(k, 10, 1, 1.0)).unwrap();
            assert!((c.ha_coeff - c.oh_coeff).abs() < 1e-15);
            assert!((c.speedup - 1.0).abs() < 1e-12);
        }

        // large h: exact coefficient heads to (1-u)/k, informal stays 2/k
        let big = regret_coefficients(&lp(10, 20, 1_000_000, 1.0)).unwrap();
        assert!(big.ha_coeff < 1e-6);
        assert_eq!(big.informal_ha, 0.2);
    }

    #[test]
    fn informal_bounds_dominate_exact_on_grid() {
        for k in 1..=12u64 {
            for h in [1u64, 2, 3, 8, 64, 1024] {
                for ui in 1..=10 {
                    let u = ui as f64 / 10.0;
                    let c = regret_coefficients(&lp(k, k + 5, h, u)).unwrap();
                    assert!(c.oh_coeff <= c.informal_oh + 1e-15);
                    assert!(c.ha_coeff <= c.informal_ha + 1e-15, "k={k} h={h} u={u}");
                }
            }
        }
    }

    #[test]
    fn gradient_variance_zero_for_deterministic_label() {
        let params = ModelParams::init(3, 4, 11);
        let e = vec![0.4, -0.2, 0.9, 1.0];
        let process = lp(1, 3, 1, 1.0);
        let v = empirical_gradient_variance(
            &params,
            &e,
            &process,
            LabelPresentation::OneHot,
            2_000,
            5,
        )
        .unwrap();
        assert!(v.abs() < 1e-12, "v = {v}");
    }

    #[test]
    fn gradient_variance_scales_with_embedding_norm() {
        let params = ModelParams::init(5, 3, 2);
        let e: Vec<f64> = vec![0.3, -0.7, 0.5];
        let e2: Vec<f64> = e.iter().map(|x| 2.0 * x).collect();
        let process = lp(3, 5, 1, 1.0);
        let v1 = empirical_gradient_variance(
            &params,
            &e,
            &process,
            LabelPresentation::OneHot,
            30_000,
            9,
        )
        .unwrap();
        let v2 = empirical_gradient_variance(
            &params,
            &e2,
            &process,
            LabelPresentation::OneHot,
            30_000,
            9,
        )
        .unwrap();
        assert!((v2 / v1 - 4.0).abs() < 0.04, "ratio {}", v2 / v1);
    }

    #[test]
    fn gradient_variance_ratio_tracks_analytic_ratio() {
        let (k, h, u) = (5u64, 25u64, 1.0);
        let process = lp(k, 5, h, u);
        let params = ModelParams::init(5, 4, 3);
        let e = vec![0.5, 0.25, -0.4, 1.0];
        let v_oh = empirical_gradient_variance(
            &params,
            &e,
            &process,
            LabelPresentation::OneHot,
            20_000,
            21,
        )
        .unwrap();
        let v_ha = empirical_gradient_variance(
            &params,
            &e,
            &process,
            LabelPresentation::HistoryAverage { history: h },
            20_000,
            22,
        )
        .unwrap();
        let analytic = analytic_var_t_h(&lp(k, 5, 1, u)) / analytic_var_t_h(&process);
        let ratio = v_oh / v_ha;
        assert!(
            (ratio / analytic - 1.0).abs() < 0.25,
            "empirical {ratio} vs analytic {analytic}"
        );
    }
}
