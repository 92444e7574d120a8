//! Streaming training: the two batch-processing modes (memory-only vs.
//! full gradient step), pseudo-target assembly, and the epoch loop with
//! validation-based early stopping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::evaluate_split;
use crate::model::{ce_loss, forward, grad_last_layer, sgd_step, ModelParams, NodeMemory};
use crate::pseudo::{AggregatorKind, AggregatorState, NoiseGenerator, NoiseSpec};
use crate::rng::derive_seed;
use crate::stream::{make_batches, AffinityVector, Batch, EventLog, LabelEvent, NodeId};

const MEMORY_SEED_TAG: u64 = 0x6d65_6d6f;
const PARAMS_SEED_TAG: u64 = 0x7061_7261;

/// Deterministic work accounting standing in for wall time, so traces and
/// summaries are byte-stable across reruns and machine load. One unit is
/// one edge memory update; scaled to nominal seconds for reporting.
#[derive(Debug, Clone, Copy, Default)]
pub struct WorkClock {
    units: f64,
}

impl WorkClock {
    const EDGE_COST: f64 = 1.0;
    const TARGET_COST: f64 = 4.0;
    const EVAL_COST: f64 = 2.0;
    const SECONDS_PER_UNIT: f64 = 1e-5;

    pub fn add_edges(&mut self, count: usize) {
        self.units += Self::EDGE_COST * count as f64;
    }

    pub fn add_targets(&mut self, count: usize) {
        self.units += Self::TARGET_COST * count as f64;
    }

    pub fn add_eval_events(&mut self, count: usize) {
        self.units += Self::EVAL_COST * count as f64;
    }

    pub fn seconds(&self) -> f64 {
        self.units * Self::SECONDS_PER_UNIT
    }
}

/// Batch-processing mode: Default skips unlabeled batches; Pseudo turns
/// them into gradient steps via aggregated pseudo-targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Default,
    Pseudo,
}

/// End-to-end training strategy: the aggregation choice, with Default
/// meaning no pseudo-supervision at all.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    Default,
    HistoricalAverage,
    MovingAverage { window: f64 },
    PersistentForecast,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Default => "default",
            Strategy::HistoricalAverage => "ha",
            Strategy::MovingAverage { .. } => "ma",
            Strategy::PersistentForecast => "pf",
        }
    }

    pub fn mode(&self) -> Mode {
        match self {
            Strategy::Default => Mode::Default,
            _ => Mode::Pseudo,
        }
    }

    pub fn aggregator_kind(&self) -> Option<AggregatorKind> {
        match self {
            Strategy::Default => None,
            Strategy::HistoricalAverage => Some(AggregatorKind::HistoricalAverage),
            Strategy::MovingAverage { window } => {
                Some(AggregatorKind::MovingAverage { window: *window })
            }
            Strategy::PersistentForecast => Some(AggregatorKind::PersistentForecast),
        }
    }

    /// Parse `default|ha|ma|pf`; `ma` takes its window from `ma_window`.
    pub fn parse(name: &str, ma_window: f64) -> Result<Self> {
        match name {
            "default" => Ok(Strategy::Default),
            "ha" => Ok(Strategy::HistoricalAverage),
            "ma" => Ok(Strategy::MovingAverage { window: ma_window }),
            "pf" => Ok(Strategy::PersistentForecast),
            other => Err(Error::validation(format!(
                "unknown strategy `{other}` (expected default|ha|ma|pf)"
            ))),
        }
    }

    /// Label for output rows: `ma` carries its window, e.g. `ma(w=7)`.
    pub fn label(&self) -> String {
        match self {
            Strategy::MovingAverage { window } => format!("ma(w={window})"),
            other => other.name().to_string(),
        }
    }
}

/// Training hyperparameters; field names mirror the config keys.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Memory embedding dimension (includes the bias slot).
    pub dim: usize,
    /// Memory decay rate in [0, 1].
    pub mem_decay: f64,
    /// Strong-convexity rate for the 1/(mu t) schedule.
    pub mu: f64,
    /// Step-size floor.
    pub alpha_min: f64,
    pub max_epochs: usize,
    /// Validation evaluations without improvement before stopping.
    pub patience: usize,
    /// Edges per batch (N).
    pub batch_edges: usize,
    pub seed: u64,
    /// When true, pseudo-targets replace ground truth for labeled nodes
    /// with history (the blanket-replacement reading of the objective).
    pub replace_ground_truth: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            mem_decay: 0.9,
            mu: 1.0,
            alpha_min: 1e-6,
            max_epochs: 20,
            patience: 3,
            batch_edges: 200,
            seed: 1,
            replace_ground_truth: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mu <= 0.0 {
            return Err(Error::validation("train.mu must be > 0"));
        }
        if self.alpha_min <= 0.0 {
            return Err(Error::validation("train.alpha_min must be > 0"));
        }
        if self.patience == 0 {
            return Err(Error::validation("train.patience must be >= 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::validation("train.max_epochs must be >= 1"));
        }
        if self.batch_edges == 0 {
            return Err(Error::validation("train.batch_edges must be >= 1"));
        }
        if self.dim < 2 {
            return Err(Error::validation("model.dim must be >= 2"));
        }
        if !(0.0..=1.0).contains(&self.mem_decay) {
            return Err(Error::validation("model.mem_decay must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Fresh memory seeded consistently for this run.
    pub fn init_memory(&self, feat_dim: usize) -> Result<NodeMemory> {
        NodeMemory::new(
            self.dim,
            self.mem_decay,
            feat_dim,
            derive_seed(self.seed, MEMORY_SEED_TAG),
        )
    }

    /// Fresh last-layer weights seeded consistently for this run.
    pub fn init_params(&self, n_categories: usize) -> ModelParams {
        ModelParams::init(n_categories, self.dim, derive_seed(self.seed, PARAMS_SEED_TAG))
    }
}

/// Mutable training state threaded through batch processing.
#[derive(Debug, Clone)]
pub struct PipelineState {
    pub memory: NodeMemory,
    pub params: ModelParams,
    pub aggregator: Option<AggregatorState>,
    pub noise: NoiseGenerator,
    pub grad_steps: u64,
    pub clock: WorkClock,
}

impl PipelineState {
    pub fn new(
        cfg: &TrainConfig,
        strategy: &Strategy,
        noise: &NoiseSpec,
        n_categories: usize,
        feat_dim: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        let aggregator = match strategy.aggregator_kind() {
            Some(kind) => Some(AggregatorState::new(kind, n_categories)?),
            None => None,
        };
        Ok(Self {
            memory: cfg.init_memory(feat_dim)?,
            params: cfg.init_params(n_categories),
            aggregator,
            noise: NoiseGenerator::new(noise)?,
            grad_steps: 0,
            clock: WorkClock::default(),
        })
    }
}

/// Outcome of processing one batch.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub step_taken: bool,
    pub loss: Option<f64>,
    pub ground_truth_targets: usize,
    pub pseudo_targets: usize,
}

/// Labels sorted by (timestamp, node id) for a reproducible observation
/// order within the batch.
fn ordered_labels(batch: &Batch) -> Vec<&LabelEvent> {
    let mut labels: Vec<&LabelEvent> = batch.labels.iter().collect();
    labels.sort_by(|a, b| {
        a.timestamp
            .partial_cmp(&b.timestamp)
            .unwrap()
            .then(a.node.cmp(&b.node))
    });
    labels
}

/// Process one batch. Memory updates run first: edges strictly before the
/// earliest ground-truth label timestamp are applied before the gradient
/// step (so predictions never see the future), the remainder after it.
/// Pseudo mode adds a pseudo-target for every other participating node
/// with aggregator history. Ground-truth labels feed the aggregator only
/// after being used as targets, so a pseudo-target never includes the
/// current observation.
pub fn process_batch(
    state: &mut PipelineState,
    batch: &Batch,
    mode: Mode,
    cfg: &TrainConfig,
) -> Result<StepReport> {
    let labels = ordered_labels(batch);
    let t_min = labels
        .first()
        .map(|l| l.timestamp)
        .unwrap_or(f64::INFINITY);
    let cut = batch.edges.partition_point(|e| e.timestamp < t_min);

    state.memory.update(&batch.edges[..cut])?;
    state.clock.add_edges(cut);

    // assemble (node, target): ground truth first, then pseudo fill-ins
    let mut targets: Vec<(NodeId, AffinityVector)> = Vec::new();
    let mut pseudo_count = 0usize;
    for label in &labels {
        let mut target = label.target.clone();
        if mode == Mode::Pseudo && cfg.replace_ground_truth {
            if let Some(agg) = &state.aggregator {
                if let Some(pt) = agg.pseudo_target(label.node) {
                    target = state.noise.perturb(&pt);
                    pseudo_count += 1;
                }
            }
        }
        targets.push((label.node, target));
    }
    let ground_truth_targets = targets.len() - pseudo_count;

    if mode == Mode::Pseudo {
        if let Some(agg) = &state.aggregator {
            let mut participants: Vec<NodeId> = batch
                .edges
                .iter()
                .flat_map(|e| [e.source, e.destination])
                .collect();
            participants.sort_unstable();
            participants.dedup();
            let labeled: std::collections::BTreeSet<NodeId> =
                labels.iter().map(|l| l.node).collect();
            let mut pseudo: Vec<(NodeId, AffinityVector)> = Vec::new();
            for node in participants {
                if labeled.contains(&node) {
                    continue;
                }
                if let Some(pt) = agg.pseudo_target(node) {
                    pseudo.push((node, state.noise.perturb(&pt)));
                }
            }
            pseudo_count += pseudo.len();
            targets.extend(pseudo);
        }
    }

    let mut report = StepReport {
        step_taken: false,
        loss: None,
        ground_truth_targets,
        pseudo_targets: pseudo_count,
    };

    if !targets.is_empty() {
        let n = state.params.n_categories();
        let d = state.params.dim();
        let mut grad_sum = vec![vec![0.0; d]; n];
        let mut loss_sum = 0.0;
        for (node, target) in &targets {
            let e = state.memory.embedding(*node);
            let p = forward(&state.params, &e)?;
            loss_sum += ce_loss(&p, target);
            let g = grad_last_layer(&p, target, &e)?;
            for (acc, row) in grad_sum.iter_mut().zip(g) {
                for (a, v) in acc.iter_mut().zip(row) {
                    *a += v;
                }
            }
        }
        let count = targets.len() as f64;
        for row in &mut grad_sum {
            for v in row.iter_mut() {
                *v /= count;
            }
        }
        state.grad_steps += 1;
        sgd_step(
            &mut state.params,
            &grad_sum,
            state.grad_steps,
            cfg.mu,
            cfg.alpha_min,
        )?;
        state.clock.add_targets(targets.len());
        report.step_taken = true;
        report.loss = Some(loss_sum / count);
    }

    // observations enter the aggregator only after target use
    if let Some(agg) = &mut state.aggregator {
        for label in &labels {
            agg.observe(label.node, &label.target)?;
        }
    }

    state.memory.update(&batch.edges[cut..])?;
    state.clock.add_edges(batch.edges.len() - cut);
    Ok(report)
}

/// One record per validation evaluation, serialized as a JSON line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: u64,
    pub time_s: f64,
    pub epoch: usize,
    pub train_loss: Option<f64>,
    pub val_ndcg: Option<f64>,
}

/// A finished training run: best-epoch parameters plus the convergence
/// trace and step/time accounting at the best epoch and overall.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Parameters after the final epoch run (fixed-budget reporting).
    pub last_params: ModelParams,
    pub trace: Vec<TraceRecord>,
    /// 1-based epoch with the best validation NDCG.
    pub best_epoch: usize,
    pub best_val_ndcg: Option<f64>,
    pub grad_steps_at_best: u64,
    pub batches_at_best: u64,
    pub time_s_at_best: f64,
    pub grad_steps_total: u64,
    pub batches_total: u64,
    pub time_s_total: f64,
}

/// Train on the train split, evaluating validation NDCG@10 after every
/// epoch. Memory and aggregator are rebuilt from scratch each epoch by
/// replaying the training stream; early stopping fires after `patience`
/// evaluations without improvement. Returns the parameters from the best
/// validation epoch.
pub fn train(
    train_log: &EventLog,
    valid_log: &EventLog,
    strategy: &Strategy,
    cfg: &TrainConfig,
    noise: &NoiseSpec,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if let Some(kind) = strategy.aggregator_kind() {
        kind.validate()?;
    }
    let n_categories = train_log.n_categories().max(valid_log.n_categories());
    if n_categories == 0 {
        return Err(Error::validation("training needs at least one category"));
    }
    let feat_dim = train_log.edges().first().map_or(0, |e| e.features.len());
    let batches = make_batches(train_log, cfg.batch_edges)?;
    let mode = strategy.mode();

    let mut params = cfg.init_params(n_categories);
    let mut grad_steps = 0u64;
    let mut clock = WorkClock::default();
    let mut trace = Vec::new();

    let mut best: Option<(usize, f64, ModelParams, u64, f64)> = None;
    let mut final_params = params.clone();
    let mut epochs_run = 0usize;
    let mut evals_without_improvement = 0usize;

    for epoch in 1..=cfg.max_epochs {
        epochs_run = epoch;
        let mut state = PipelineState {
            memory: cfg.init_memory(feat_dim)?,
            params,
            aggregator: match strategy.aggregator_kind() {
                Some(kind) => Some(AggregatorState::new(kind, n_categories)?),
                None => None,
            },
            noise: NoiseGenerator::new(noise)?,
            grad_steps,
            clock,
        };
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for batch in &batches {
            let report = process_batch(&mut state, batch, mode, cfg)?;
            if let Some(loss) = report.loss {
                loss_sum += loss;
                loss_count += 1;
            }
        }
        grad_steps = state.grad_steps;
        clock = state.clock;
        params = state.params;

        // validation continues the stream from the end-of-replay memory
        let mut val_memory = state.memory.clone();
        let val = evaluate_split(&params, &mut val_memory, valid_log, 10)?;
        clock.add_eval_events(val.per_event.len());

        let train_loss = if loss_count > 0 {
            Some(loss_sum / loss_count as f64)
        } else {
            None
        };
        trace.push(TraceRecord {
            step: grad_steps,
            time_s: clock.seconds(),
            epoch,
            train_loss,
            val_ndcg: val.ndcg,
        });

        let improved = match (val.ndcg, &best) {
            (Some(_), None) => true,
            (Some(v), Some((_, b, ..))) => v > *b,
            (None, _) => false,
        };
        if improved {
            let v = val.ndcg.expect("improvement implies a value");
            best = Some((epoch, v, params.clone(), grad_steps, clock.seconds()));
            evals_without_improvement = 0;
        } else {
            evals_without_improvement += 1;
        }
        final_params = params.clone();
        if evals_without_improvement >= cfg.patience {
            break;
        }
    }

    let batches_per_epoch = batches.len() as u64;
    let outcome = match best {
        Some((epoch, ndcg, best_params, steps, time_s)) => TrainOutcome {
            params: best_params,
            last_params: final_params,
            trace,
            best_epoch: epoch,
            best_val_ndcg: Some(ndcg),
            grad_steps_at_best: steps,
            batches_at_best: batches_per_epoch * epoch as u64,
            time_s_at_best: time_s,
            grad_steps_total: grad_steps,
            batches_total: batches_per_epoch * epochs_run as u64,
            time_s_total: clock.seconds(),
        },
        // no validation signal at all: keep the final parameters
        None => TrainOutcome {
            params: final_params.clone(),
            last_params: final_params,
            trace,
            best_epoch: epochs_run,
            best_val_ndcg: None,
            grad_steps_at_best: grad_steps,
            batches_at_best: batches_per_epoch * epochs_run as u64,
            time_s_at_best: clock.seconds(),
            grad_steps_total: grad_steps,
            batches_total: batches_per_epoch * epochs_run as u64,
            time_s_total: clock.seconds(),
        },
    };
    Ok(outcome)
}

/// Serialize a trace as JSON lines (one record per evaluation).
pub fn trace_to_jsonl(trace: &[TraceRecord]) -> String {
    let mut out = String::new();
    for record in trace {
        out.push_str(&serde_json::to_string(record).expect("trace serializes"));
        out.push('\n');
    }
    out
}
