//! Reproducible experiment harness: strategy comparisons, fixed-budget
//! runs, moving-average window sweeps, shuffling ablations, and the
//! OH-vs-HA convergence-speedup experiment. Every run is a pure function
//! of its spec and seeds; emitted files are byte-stable across reruns and
//! worker counts.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::eval::{evaluate_split, EvalReport, SplitEval};
use crate::model::{ce_loss, forward, grad_last_layer, sgd_step, ModelParams};
use crate::pseudo::NoiseSpec;
use crate::rng::{derive_seed, seeded_rng};
use crate::stream::{
    chronological_split, ingest_edges_csv, ingest_labels_csv, shuffle_edges, shuffle_targets,
    synth_generate, truncate_train_tail, EdgeSchema, EventLog, SyntheticSpec,
};
use crate::theory::{analytic_var_t_h, sample_label, LabelPresentation, LabelProcessParams};
use crate::train::{train, trace_to_jsonl, Strategy, TrainConfig, TrainOutcome};

use rand_distr::{Distribution, StandardNormal};

const NOISE_SEED_TAG: u64 = 0x6e6f_6973;
const SHUFFLE_SEED_TAG: u64 = 0x7368_7566;
const EMBED_SEED_TAG: u64 = 0x656d_6264;
const SPEEDUP_PARAMS_TAG: u64 = 0x7370_6475;
const SPEEDUP_LABEL_TAG: u64 = 0x6c61_6263;

/// Where the event log comes from.
#[derive(Debug, Clone)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Csv {
        edges: PathBuf,
        labels: PathBuf,
        n_categories: usize,
        sparse_labels: bool,
    },
}

/// A full experiment description: data, strategies, seeds, budget, and
/// the output directory the artifacts land in.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub data: DataSource,
    pub strategies: Vec<Strategy>,
    pub seeds: Vec<u64>,
    /// Moving-average windows for `run_window_sweep`.
    pub sweep_windows: Vec<f64>,
    pub train: TrainConfig,
    pub noise: NoiseSpec,
    pub split_fractions: [f64; 3],
    /// Tail fraction of the train split to keep (1.0 keeps everything).
    pub keep_tail: f64,
    pub out_dir: PathBuf,
    pub workers: usize,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.strategies.is_empty() {
            return Err(Error::validation("at least one strategy is required"));
        }
        if self.seeds.is_empty() {
            return Err(Error::validation("at least one seed is required"));
        }
        self.train.validate()?;
        self.noise.validate()?;
        Ok(())
    }

    /// Materialize the event log (generation or ingestion).
    pub fn load_log(&self) -> Result<EventLog> {
        match &self.data {
            DataSource::Synthetic(spec) => synth_generate(spec),
            DataSource::Csv {
                edges,
                labels,
                n_categories,
                sparse_labels,
            } => {
                let (log, map) = ingest_edges_csv(edges, &EdgeSchema::default())?;
                let events =
                    ingest_labels_csv(labels, *n_categories, *sparse_labels, Some(&map))?;
                log.with_labels(events, *n_categories)
            }
        }
    }

    /// Load, split chronologically, and truncate the train tail.
    pub fn load_splits(&self) -> Result<(EventLog, EventLog, EventLog)> {
        self.split_log(&self.load_log()?)
    }

    pub fn split_log(&self, log: &EventLog) -> Result<(EventLog, EventLog, EventLog)> {
        let splits = chronological_split(log, self.split_fractions)?;
        let train_log = if self.keep_tail < 1.0 {
            truncate_train_tail(&splits.train, self.keep_tail)?
        } else {
            splits.train
        };
        Ok((train_log, splits.valid, splits.test))
    }
}

/// One trained-and-evaluated run.
#[derive(Debug, Clone)]
pub struct RunMetrics {
    pub strategy: String,
    pub seed: u64,
    pub valid_ndcg: Option<f64>,
    pub test_ndcg: Option<f64>,
    /// Batches processed through the reported epoch.
    pub steps: u64,
    pub grad_steps: u64,
    pub time_s: f64,
    pub best_epoch: usize,
}

/// Median over seeds for one strategy.
#[derive(Debug, Clone)]
pub struct StrategySummary {
    pub strategy: String,
    pub test_ndcg: f64,
    pub valid_ndcg: f64,
    pub steps: f64,
    pub grad_steps: f64,
    pub time_s: f64,
    pub best_epoch: f64,
}

fn median(values: &mut Vec<f64>) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        (values[mid - 1] + values[mid]) / 2.0
    }
}

fn summarize(strategy: &str, runs: &[&RunMetrics]) -> StrategySummary {
    let collect = |f: &dyn Fn(&RunMetrics) -> Option<f64>| {
        let mut v: Vec<f64> = runs.iter().filter_map(|r| f(r)).collect();
        median(&mut v)
    };
    StrategySummary {
        strategy: strategy.to_string(),
        test_ndcg: collect(&|r| r.test_ndcg),
        valid_ndcg: collect(&|r| r.valid_ndcg),
        steps: collect(&|r| Some(r.steps as f64)),
        grad_steps: collect(&|r| Some(r.grad_steps as f64)),
        time_s: collect(&|r| Some(r.time_s)),
        best_epoch: collect(&|r| Some(r.best_epoch as f64)),
    }
}

/// Run `count` independent jobs on up to `workers` threads, returning
/// results in index order regardless of scheduling.
fn run_parallel<T, F>(count: usize, workers: usize, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let workers = workers.max(1).min(count.max(1));
    if workers <= 1 || count <= 1 {
        return (0..count).map(&job).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T>>>> =
        Mutex::new((0..count).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::SeqCst);
                if idx >= count {
                    break;
                }
                let result = job(idx);
                slots.lock().expect("worker poisoned")[idx] = Some(result);
            });
        }
    });
    let collected = slots.into_inner().expect("worker poisoned");
    collected
        .into_iter()
        .map(|slot| slot.expect("every index filled"))
        .collect()
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => "NaN".to_string(),
    }
}

fn file_slug(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect::<String>()
        .trim_matches('_')
        .to_string()
}

pub const RUNS_HEADER: &str = "strategy,seed,split,ndcg10,steps,grad_steps,time_s,best_epoch";
pub const SUMMARY_HEADER: &str =
    "strategy,test_ndcg10,valid_ndcg10,steps,grad_steps,time_s,best_epoch";

fn runs_csv(rows: &[RunMetrics]) -> String {
    let mut out = String::from(RUNS_HEADER);
    out.push('\n');
    for r in rows {
        for (split, ndcg) in [("valid", r.valid_ndcg), ("test", r.test_ndcg)] {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.strategy,
                r.seed,
                split,
                fmt_opt(ndcg),
                r.steps,
                r.grad_steps,
                r.time_s,
                r.best_epoch
            ));
        }
    }
    out
}

fn summary_csv(rows: &[StrategySummary]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for s in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            s.strategy, s.test_ndcg, s.valid_ndcg, s.steps, s.grad_steps, s.time_s, s.best_epoch
        ));
    }
    out
}

/// Replay memory over the train stream, then score validation and test in
/// chronological continuation.
fn evaluate_chain(
    params: &ModelParams,
    cfg: &TrainConfig,
    train_log: &EventLog,
    valid_log: &EventLog,
    test_log: &EventLog,
) -> Result<(SplitEval, SplitEval)> {
    let feat_dim = train_log.edges().first().map_or(0, |e| e.features.len());
    let mut memory = cfg.init_memory(feat_dim)?;
    memory.update(train_log.edges())?;
    let valid = evaluate_split(params, &mut memory, valid_log, 10)?;
    let test = evaluate_split(params, &mut memory, test_log, 10)?;
    Ok((valid, test))
}

struct SingleRun {
    metrics: RunMetrics,
    outcome: TrainOutcome,
}

/// Train one (strategy, seed) and evaluate. With `budget_epochs` set, the
/// run goes exactly that many epochs and reports final-epoch parameters
/// and totals; otherwise early stopping applies and the best-validation
/// epoch is reported.
fn run_single(
    spec: &ExperimentSpec,
    logs: &(EventLog, EventLog, EventLog),
    strategy: &Strategy,
    label: &str,
    seed: u64,
    budget_epochs: Option<usize>,
) -> Result<SingleRun> {
    let (train_log, valid_log, test_log) = logs;
    let mut cfg = spec.train.clone();
    cfg.seed = seed;
    if let Some(epochs) = budget_epochs {
        cfg.max_epochs = epochs;
        cfg.patience = epochs + 1;
    }
    let noise = NoiseSpec {
        seed: derive_seed(seed, NOISE_SEED_TAG),
        ..spec.noise
    };
    let outcome = train(train_log, valid_log, strategy, &cfg, &noise)?;
    let (params, steps, grad_steps, time_s, epoch) = if budget_epochs.is_some() {
        (
            &outcome.last_params,
            outcome.batches_total,
            outcome.grad_steps_total,
            outcome.time_s_total,
            outcome.trace.len(),
        )
    } else {
        (
            &outcome.params,
            outcome.batches_at_best,
            outcome.grad_steps_at_best,
            outcome.time_s_at_best,
            outcome.best_epoch,
        )
    };
    let (valid_eval, test_eval) = evaluate_chain(params, &cfg, train_log, valid_log, test_log)?;
    let report = |eval: SplitEval| EvalReport {
        ndcg_at_10: eval.ndcg,
        per_event: eval.per_event,
        steps,
        grad_steps,
        time_s,
        best_epoch: epoch,
    };
    let (valid_report, test_report) = (report(valid_eval), report(test_eval));
    Ok(SingleRun {
        metrics: RunMetrics {
            strategy: label.to_string(),
            seed,
            valid_ndcg: valid_report.ndcg_at_10,
            test_ndcg: test_report.ndcg_at_10,
            steps: test_report.steps,
            grad_steps: test_report.grad_steps,
            time_s: test_report.time_s,
            best_epoch: test_report.best_epoch,
        },
        outcome,
    })
}

/// Output of comparison-style experiments.
#[derive(Debug, Clone)]
pub struct ComparisonResult {
    pub runs: Vec<RunMetrics>,
    pub summary: Vec<StrategySummary>,
}

fn summarize_by_strategy(labels: &[String], runs: &[RunMetrics]) -> Vec<StrategySummary> {
    labels
        .iter()
        .map(|label| {
            let group: Vec<&RunMetrics> =
                runs.iter().filter(|r| &r.strategy == label).collect();
            summarize(label, &group)
        })
        .collect()
}

/// Train every (strategy, seed) to early-stopped convergence on identical
/// data and emit `runs.csv`, `summary.csv`, and per-run traces.
pub fn run_strategy_comparison(spec: &ExperimentSpec) -> Result<ComparisonResult> {
    spec.validate()?;
    let logs = spec.load_splits()?;
    let jobs: Vec<(Strategy, u64)> = spec
        .strategies
        .iter()
        .flat_map(|s| spec.seeds.iter().map(move |&seed| (*s, seed)))
        .collect();
    let results = run_parallel(jobs.len(), spec.workers, |i| {
        let (strategy, seed) = &jobs[i];
        run_single(spec, &logs, strategy, &strategy.label(), *seed, None)
    })?;

    let mut runs = Vec::with_capacity(results.len());
    for r in &results {
        let name = format!(
            "trace_{}_s{}.jsonl",
            file_slug(&r.metrics.strategy),
            r.metrics.seed
        );
        write_atomic(
            &spec.out_dir.join(name),
            trace_to_jsonl(&r.outcome.trace).as_bytes(),
        )?;
        runs.push(r.metrics.clone());
    }
    let labels: Vec<String> = spec.strategies.iter().map(|s| s.label()).collect();
    let summary = summarize_by_strategy(&labels, &runs);
    write_atomic(&spec.out_dir.join("runs.csv"), runs_csv(&runs).as_bytes())?;
    write_atomic(
        &spec.out_dir.join("summary.csv"),
        summary_csv(&summary).as_bytes(),
    )?;
    Ok(ComparisonResult { runs, summary })
}

/// Fixed-budget comparison: every strategy trains exactly `epochs` epochs.
/// When Default and at least one aggregation strategy are present, a
/// `default-X` row is added, X chosen as the smallest epoch count whose
/// modeled time meets or exceeds the slowest aggregation strategy's.
pub fn run_fixed_budget(spec: &ExperimentSpec, epochs: usize) -> Result<ComparisonResult> {
    spec.validate()?;
    if epochs == 0 {
        return Err(Error::validation("budget must be at least one epoch"));
    }
    let logs = spec.load_splits()?;
    let jobs: Vec<(Strategy, u64)> = spec
        .strategies
        .iter()
        .flat_map(|s| spec.seeds.iter().map(move |&seed| (*s, seed)))
        .collect();
    let results = run_parallel(jobs.len(), spec.workers, |i| {
        let (strategy, seed) = &jobs[i];
        run_single(spec, &logs, strategy, &strategy.label(), *seed, Some(epochs))
    })?;
    let mut runs: Vec<RunMetrics> = results.iter().map(|r| r.metrics.clone()).collect();
    let mut labels: Vec<String> = spec.strategies.iter().map(|s| s.label()).collect();

    let has_default = spec.strategies.iter().any(|s| *s == Strategy::Default);
    let slowest_aggregation = runs
        .iter()
        .filter(|r| r.strategy != "default")
        .map(|r| r.time_s)
        .fold(f64::NEG_INFINITY, f64::max);
    if has_default && slowest_aggregation.is_finite() {
        let default_time = runs
            .iter()
            .filter(|r| r.strategy == "default")
            .map(|r| r.time_s)
            .fold(f64::NEG_INFINITY, f64::max);
        let per_epoch = default_time / epochs as f64;
        let x = if per_epoch > 0.0 {
            ((slowest_aggregation / per_epoch).ceil() as usize).max(1)
        } else {
            1
        };
        let label = format!("default-{x}");
        let extra = run_parallel(spec.seeds.len(), spec.workers, |i| {
            run_single(
                spec,
                &logs,
                &Strategy::Default,
                &label,
                spec.seeds[i],
                Some(x),
            )
        })?;
        runs.extend(extra.into_iter().map(|r| r.metrics));
        labels.push(label);
    }

    let summary = summarize_by_strategy(&labels, &runs);
    write_atomic(&spec.out_dir.join("runs.csv"), runs_csv(&runs).as_bytes())?;
    write_atomic(
        &spec.out_dir.join("summary.csv"),
        summary_csv(&summary).as_bytes(),
    )?;
    Ok(ComparisonResult { runs, summary })
}

/// One sweep point.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub window: f64,
    pub seed: u64,
    pub ndcg: Option<f64>,
    pub steps: u64,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    /// Default-strategy baseline per seed (the dashed line).
    pub baseline: Vec<SweepPoint>,
}

/// Train MA across the window grid (one run per (w, seed)) plus the
/// Default baseline; emits `sweep.csv` (`w,seed,ndcg10,steps`) and
/// `baseline.csv`.
pub fn run_window_sweep(spec: &ExperimentSpec) -> Result<SweepResult> {
    spec.validate()?;
    if spec.sweep_windows.is_empty() {
        return Err(Error::validation("sweep grid must be non-empty"));
    }
    let logs = spec.load_splits()?;
    let jobs: Vec<(Option<f64>, u64)> = spec
        .sweep_windows
        .iter()
        .map(|&w| Some(w))
        .chain(std::iter::once(None))
        .flat_map(|w| spec.seeds.iter().map(move |&seed| (w, seed)))
        .collect();
    let results = run_parallel(jobs.len(), spec.workers, |i| {
        let (window, seed) = jobs[i];
        let strategy = match window {
            Some(w) => Strategy::MovingAverage { window: w },
            None => Strategy::Default,
        };
        let run = run_single(spec, &logs, &strategy, &strategy.label(), seed, None)?;
        Ok(SweepPoint {
            window: window.unwrap_or(f64::NAN),
            seed,
            ndcg: run.metrics.test_ndcg,
            steps: run.metrics.steps,
        })
    })?;
    let (points, baseline): (Vec<SweepPoint>, Vec<SweepPoint>) = results
        .into_iter()
        .partition(|p| p.window.is_finite());

    let mut out = String::from("w,seed,ndcg10,steps\n");
    for p in &points {
        out.push_str(&format!(
            "{},{},{},{}\n",
            p.window,
            p.seed,
            fmt_opt(p.ndcg),
            p.steps
        ));
    }
    write_atomic(&spec.out_dir.join("sweep.csv"), out.as_bytes())?;

    let mut base = String::from("seed,ndcg10,steps\n");
    for p in &baseline {
        base.push_str(&format!("{},{},{}\n", p.seed, fmt_opt(p.ndcg), p.steps));
    }
    write_atomic(&spec.out_dir.join("baseline.csv"), base.as_bytes())?;
    Ok(SweepResult { points, baseline })
}

/// Which perturbation an ablation applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationMode {
    Edges,
    Targets,
}

impl AblationMode {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "edges" => Ok(AblationMode::Edges),
            "targets" => Ok(AblationMode::Targets),
            other => Err(Error::validation(format!(
                "unknown ablation mode `{other}` (expected edges|targets)"
            ))),
        }
    }
}

/// One original-vs-perturbed pair.
#[derive(Debug, Clone)]
pub struct AblationPair {
    pub strategy: String,
    pub seed: u64,
    pub original_ndcg: Option<f64>,
    pub shuffled_ndcg: Option<f64>,
    /// shuffled - original (test split).
    pub delta: Option<f64>,
}

/// Run each strategy on the original log and on the perturbed log with
/// identical seeds, emitting `ablation.csv` with per-pair NDCG deltas.
pub fn run_shuffle_ablation(
    spec: &ExperimentSpec,
    mode: AblationMode,
) -> Result<Vec<AblationPair>> {
    spec.validate()?;
    let log = spec.load_log()?;
    let logs = spec.split_log(&log)?;
    let jobs: Vec<(Strategy, u64)> = spec
        .strategies
        .iter()
        .flat_map(|s| spec.seeds.iter().map(move |&seed| (*s, seed)))
        .collect();
    let pairs = run_parallel(jobs.len(), spec.workers, |i| {
        let (strategy, seed) = &jobs[i];
        let shuffle_seed = derive_seed(*seed, SHUFFLE_SEED_TAG);
        let perturbed_log = match mode {
            AblationMode::Edges => shuffle_edges(&log, shuffle_seed),
            AblationMode::Targets => shuffle_targets(&log, shuffle_seed),
        };
        let perturbed = spec.split_log(&perturbed_log)?;
        let label = strategy.label();
        let original = run_single(spec, &logs, strategy, &label, *seed, None)?;
        let shuffled = run_single(spec, &perturbed, strategy, &label, *seed, None)?;
        let delta = match (shuffled.metrics.test_ndcg, original.metrics.test_ndcg) {
            (Some(s), Some(o)) => Some(s - o),
            _ => None,
        };
        Ok(AblationPair {
            strategy: label,
            seed: *seed,
            original_ndcg: original.metrics.test_ndcg,
            shuffled_ndcg: shuffled.metrics.test_ndcg,
            delta,
        })
    })?;

    let mut out = String::from("strategy,seed,original_ndcg10,shuffled_ndcg10,delta\n");
    for p in &pairs {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            p.strategy,
            p.seed,
            fmt_opt(p.original_ndcg),
            fmt_opt(p.shuffled_ndcg),
            fmt_opt(p.delta)
        ));
    }
    write_atomic(&spec.out_dir.join("ablation.csv"), out.as_bytes())?;
    Ok(pairs)
}

/// Spec for the convergence-speedup experiment: last layer only, fixed
/// embedding, labels presented as one-hot vs. h-history aggregates.
#[derive(Debug, Clone)]
pub struct SpeedupSpec {
    pub n_categories: u64,
    pub true_set: u64,
    pub obs_prob: f64,
    pub h_grid: Vec<u64>,
    pub seeds: Vec<u64>,
    pub mu: f64,
    pub alpha_min: f64,
    pub dim: usize,
    pub max_steps: u64,
    /// Absolute loss threshold; None derives optimal loss + `tau_excess`.
    pub tau_loss: Option<f64>,
    pub tau_excess: f64,
    pub out_dir: PathBuf,
    pub workers: usize,
}

impl SpeedupSpec {
    pub fn validate(&self) -> Result<()> {
        LabelProcessParams::new(self.true_set, self.n_categories, 1, self.obs_prob)?;
        if self.h_grid.is_empty() || self.seeds.is_empty() {
            return Err(Error::validation("speedup needs at least one h and one seed"));
        }
        if self.h_grid.contains(&0) {
            return Err(Error::validation("history length h must be >= 1"));
        }
        if self.mu <= 0.0 || self.alpha_min <= 0.0 || self.max_steps == 0 || self.dim == 0 {
            return Err(Error::validation("speedup parameters must be positive"));
        }
        if self.tau_excess <= 0.0 {
            return Err(Error::validation("tau_excess must be positive"));
        }
        Ok(())
    }

    /// Population label mean: u/k on the true set, the rest spread
    /// uniformly outside it (or over everything when k = n).
    fn mean_label(&self) -> Vec<f64> {
        let n = self.n_categories as usize;
        let k = self.true_set as usize;
        let u = self.obs_prob;
        let mut mean = vec![0.0; n];
        if k < n {
            for v in mean.iter_mut().take(k) {
                *v = u / k as f64;
            }
            for v in mean.iter_mut().skip(k) {
                *v = (1.0 - u) / (n - k) as f64;
            }
        } else {
            for v in mean.iter_mut() {
                *v = 1.0 / n as f64;
            }
        }
        mean
    }
}

#[derive(Debug, Clone)]
pub struct SpeedupRun {
    pub history: u64,
    pub seed: u64,
    pub steps_oh: u64,
    pub steps_ha: u64,
    pub censored_oh: bool,
    pub censored_ha: bool,
}

#[derive(Debug, Clone)]
pub struct SpeedupSummaryRow {
    pub history: u64,
    pub steps_oh_median: f64,
    pub steps_ha_median: f64,
    /// median steps_OH / median steps_HA.
    pub ratio: f64,
    /// Analytic prediction var(t_1)/var(t_h).
    pub predicted_ratio: f64,
    pub censored: bool,
}

#[derive(Debug, Clone)]
pub struct SpeedupReport {
    pub runs: Vec<SpeedupRun>,
    pub summary: Vec<SpeedupSummaryRow>,
    pub tau_loss: f64,
}

/// Gradient steps until the loss against the population mean label first
/// drops below tau. Returns (steps, censored).
fn steps_to_threshold(
    spec: &SpeedupSpec,
    seed: u64,
    presentation: LabelPresentation,
    mean: &crate::stream::AffinityVector,
    tau: f64,
) -> Result<(u64, bool)> {
    let n = spec.n_categories as usize;
    let mut params = ModelParams::init(n, spec.dim, derive_seed(seed, SPEEDUP_PARAMS_TAG));
    let mut embed_rng = seeded_rng(derive_seed(seed, EMBED_SEED_TAG));
    let mut embedding: Vec<f64> = (0..spec.dim)
        .map(|_| StandardNormal.sample(&mut embed_rng))
        .collect();
    let norm = embedding.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in &mut embedding {
        *v /= norm;
    }
    // one label stream per seed, shared across presentations so h = 1
    // reproduces the one-hot run draw for draw
    let mut label_rng = seeded_rng(derive_seed(seed, SPEEDUP_LABEL_TAG));
    let h = match presentation {
        LabelPresentation::OneHot => 1,
        LabelPresentation::HistoryAverage { history } => history,
    };
    let process = LabelProcessParams::new(spec.true_set, spec.n_categories, h, spec.obs_prob)?;

    for step in 1..=spec.max_steps {
        let y = sample_label(&process, presentation, &mut label_rng);
        let p = forward(&params, &embedding)?;
        let grad = grad_last_layer(&p, &y, &embedding)?;
        sgd_step(&mut params, &grad, step, spec.mu, spec.alpha_min)?;
        let loss = ce_loss(&forward(&params, &embedding)?, mean);
        if loss < tau {
            return Ok((step, false));
        }
    }
    Ok((spec.max_steps, true))
}

/// Train the last layer with OH vs. HA(h) targets and count gradient
/// steps to the loss threshold (median over seeds), next to the analytic
/// variance-ratio prediction. Censored runs report the step budget.
pub fn run_speedup_experiment(spec: &SpeedupSpec) -> Result<SpeedupReport> {
    spec.validate()?;
    let mean = crate::stream::AffinityVector::new(spec.mean_label())
        .expect("mean label is a distribution");
    let tau = spec
        .tau_loss
        .unwrap_or_else(|| ce_loss(&mean, &mean) + spec.tau_excess);

    // one-hot baseline once per seed
    let oh = run_parallel(spec.seeds.len(), spec.workers, |i| {
        steps_to_threshold(spec, spec.seeds[i], LabelPresentation::OneHot, &mean, tau)
    })?;

    let jobs: Vec<(u64, usize)> = spec
        .h_grid
        .iter()
        .flat_map(|&h| (0..spec.seeds.len()).map(move |si| (h, si)))
        .collect();
    let ha = run_parallel(jobs.len(), spec.workers, |i| {
        let (h, si) = jobs[i];
        steps_to_threshold(
            spec,
            spec.seeds[si],
            LabelPresentation::HistoryAverage { history: h },
            &mean,
            tau,
        )
    })?;

    let mut runs = Vec::with_capacity(jobs.len());
    for (i, &(h, si)) in jobs.iter().enumerate() {
        runs.push(SpeedupRun {
            history: h,
            seed: spec.seeds[si],
            steps_oh: oh[si].0,
            steps_ha: ha[i].0,
            censored_oh: oh[si].1,
            censored_ha: ha[i].1,
        });
    }

    let var_1 = analytic_var_t_h(&LabelProcessParams::new(
        spec.true_set,
        spec.n_categories,
        1,
        spec.obs_prob,
    )?);
    let summary = spec
        .h_grid
        .iter()
        .map(|&h| {
            let group: Vec<&SpeedupRun> = runs.iter().filter(|r| r.history == h).collect();
            let mut oh_steps: Vec<f64> = group.iter().map(|r| r.steps_oh as f64).collect();
            let mut ha_steps: Vec<f64> = group.iter().map(|r| r.steps_ha as f64).collect();
            let steps_oh_median = median(&mut oh_steps);
            let steps_ha_median = median(&mut ha_steps);
            let var_h = analytic_var_t_h(
                &LabelProcessParams::new(spec.true_set, spec.n_categories, h, spec.obs_prob)
                    .expect("validated"),
            );
            SpeedupSummaryRow {
                history: h,
                steps_oh_median,
                steps_ha_median,
                ratio: steps_oh_median / steps_ha_median,
                predicted_ratio: var_1 / var_h,
                censored: group.iter().any(|r| r.censored_oh || r.censored_ha),
            }
        })
        .collect::<Vec<_>>();

    let mut out = String::from("h,seed,steps_oh,steps_ha,censored_oh,censored_ha\n");
    for r in &runs {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.history, r.seed, r.steps_oh, r.steps_ha, r.censored_oh, r.censored_ha
        ));
    }
    write_atomic(&spec.out_dir.join("speedup.csv"), out.as_bytes())?;

    let mut sum = String::from("h,steps_oh_median,steps_ha_median,ratio,predicted_ratio,censored\n");
    for s in &summary {
        sum.push_str(&format!(
            "{},{},{},{},{},{}\n",
            s.history, s.steps_oh_median, s.steps_ha_median, s.ratio, s.predicted_ratio, s.censored
        ));
    }
    write_atomic(&spec.out_dir.join("speedup_summary.csv"), sum.as_bytes())?;

    Ok(SpeedupReport {
        runs,
        summary,
        tau_loss: tau,
    })
}
