//! `halstream`: subcommand dispatch over the streaming trainer, the
//! experiment harness, and the theory-verification suite.

mod config;

use std::path::{Path, PathBuf};

use config::{help_keys, Config, ConfigError};
use halstream_core::error::Error as CoreError;
use halstream_core::experiments::{
    run_fixed_budget, run_shuffle_ablation, run_speedup_experiment, run_strategy_comparison,
    run_window_sweep, AblationMode, DataSource, ExperimentSpec, SpeedupSpec,
};
use halstream_core::pseudo::NoiseSpec;
use halstream_core::rng::derive_seed;
use halstream_core::stream::{synth_generate, write_edges_csv, write_labels_csv, SyntheticSpec};
use halstream_core::theory::{
    analytic_mean_t_h, analytic_var_t_h, mc_estimate_t_h, regret_coefficients,
    LabelProcessParams,
};
use halstream_core::train::{Strategy, TraceRecord, TrainConfig};

const USAGE: &str = "usage: halstream <subcommand> [options]

subcommands:
  generate       synthesize an event log; writes edges.csv and labels.csv
  train          train one strategy; writes trace and summary CSVs
  compare        train every strategy to convergence on shared data
  budget         fixed-epoch-budget comparison including a default-X row
  sweep          moving-average window sweep (w,seed,ndcg10,steps)
  ablate         original-vs-shuffled pairs (--mode edges|targets)
  verify-theory  label-moment Monte Carlo grid and regret coefficients
  speedup        OH-vs-HA steps-to-loss-threshold ratio experiment
  plot-data      extract x,y,series CSV from trace files to stdout

options:
  --config PATH    flat `key = value` config file
  --set KEY=VALUE  override one config key (repeatable)
  --mode MODE      ablate: edges | targets
  --grid NAME      verify-theory: grid name (only `default`)
  --seed N         generate: shorthand for --set synth.seed=N
  --workers N      shorthand for --set workers=N
  --trace PATH     plot-data: trace file (repeatable)
  -v, -vv          log verbosity on stderr
  --help           this text plus the configuration key table";

enum CliError {
    Usage(String),
    Validation(String),
    Runtime(String),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Validation(e.0)
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Validation(_)
            | CoreError::Parse { .. }
            | CoreError::MissingColumn(_)
            | CoreError::Dimension(_) => CliError::Validation(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let code = match dispatch(&args) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("{msg}\n\n{USAGE}");
            1
        }
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            2
        }
    };
    std::process::exit(code);
}

struct Cli {
    subcommand: String,
    config_path: Option<PathBuf>,
    overrides: Vec<(String, String)>,
    mode: Option<String>,
    grid: String,
    traces: Vec<PathBuf>,
    verbosity: u8,
}

fn parse_args(args: &[String]) -> Result<Option<Cli>, CliError> {
    if args.is_empty() {
        return Err(CliError::Usage("missing subcommand".into()));
    }
    if args[0] == "--help" || args[0] == "-h" {
        println!("{USAGE}\n\n{}", help_keys());
        return Ok(None);
    }
    let mut cli = Cli {
        subcommand: args[0].clone(),
        config_path: None,
        overrides: Vec::new(),
        mode: None,
        grid: "default".to_string(),
        traces: Vec::new(),
        verbosity: 0,
    };
    let known = [
        "generate",
        "train",
        "compare",
        "budget",
        "sweep",
        "ablate",
        "verify-theory",
        "speedup",
        "plot-data",
    ];
    if !known.contains(&cli.subcommand.as_str()) {
        return Err(CliError::Usage(format!(
            "unknown subcommand `{}`",
            cli.subcommand
        )));
    }
    let mut i = 1;
    let take_value = |i: &mut usize, flag: &str| -> Result<String, CliError> {
        *i += 1;
        args.get(*i)
            .cloned()
            .ok_or_else(|| CliError::Usage(format!("flag {flag} needs a value")))
    };
    while i < args.len() {
        match args[i].as_str() {
            "--help" | "-h" => {
                println!("{USAGE}\n\n{}", help_keys());
                return Ok(None);
            }
            "--config" => cli.config_path = Some(PathBuf::from(take_value(&mut i, "--config")?)),
            "--set" => {
                let raw = take_value(&mut i, "--set")?;
                let (key, value) = raw.split_once('=').ok_or_else(|| {
                    CliError::Usage(format!("--set expects KEY=VALUE, got `{raw}`"))
                })?;
                cli.overrides
                    .push((key.trim().to_string(), value.trim().to_string()));
            }
            "--mode" => cli.mode = Some(take_value(&mut i, "--mode")?),
            "--grid" => cli.grid = take_value(&mut i, "--grid")?,
            "--seed" => {
                let value = take_value(&mut i, "--seed")?;
                cli.overrides.push(("synth.seed".to_string(), value));
            }
            "--workers" => {
                let value = take_value(&mut i, "--workers")?;
                cli.overrides.push(("workers".to_string(), value));
            }
            "--trace" => cli.traces.push(PathBuf::from(take_value(&mut i, "--trace")?)),
            "-v" => cli.verbosity = cli.verbosity.max(1),
            "-vv" => cli.verbosity = 2,
            other if !other.starts_with('-') && cli.subcommand == "plot-data" => {
                cli.traces.push(PathBuf::from(other));
            }
            other => {
                return Err(CliError::Usage(format!("unknown flag `{other}`")));
            }
        }
        i += 1;
    }
    Ok(Some(cli))
}

fn dispatch(args: &[String]) -> Result<(), CliError> {
    let Some(cli) = parse_args(args)? else {
        return Ok(()); // --help
    };
    let cfg = Config::load(cli.config_path.as_deref(), &cli.overrides)?;
    let log = |level: u8, msg: &str| {
        if cli.verbosity >= level {
            eprintln!("halstream: {msg}");
        }
    };
    match cli.subcommand.as_str() {
        "generate" => cmd_generate(&cfg, &log),
        "train" => cmd_train(&cfg, &log),
        "compare" => cmd_compare(&cfg, &log),
        "budget" => cmd_budget(&cfg, &log),
        "sweep" => cmd_sweep(&cfg, &log),
        "ablate" => cmd_ablate(&cfg, cli.mode.as_deref(), &log),
        "verify-theory" => cmd_verify_theory(&cfg, &cli.grid, &log),
        "speedup" => cmd_speedup(&cfg, &log),
        "plot-data" => cmd_plot_data(&cli.traces),
        _ => unreachable!("subcommand validated"),
    }
}

// ---------------------------------------------------------------------
// config -> core structs
// ---------------------------------------------------------------------

fn out_dir(cfg: &Config) -> Result<PathBuf, CliError> {
    Ok(PathBuf::from(cfg.require("out.dir")?))
}

fn synth_spec(cfg: &Config) -> Result<SyntheticSpec, CliError> {
    let spec = SyntheticSpec {
        n_users: cfg.get_u64("synth.users")?,
        n_categories: cfg.get_usize("synth.categories")?,
        true_set: cfg.get_usize("synth.true_set")?,
        obs_prob: cfg.get_f64("synth.obs_prob")?,
        events_per_user: cfg.get_u64("synth.events_per_user")?,
        label_period: cfg.get_u64("synth.label_period")?,
        seed: cfg.get_u64("synth.seed")?,
    };
    spec.validate()?;
    Ok(spec)
}

fn data_source(cfg: &Config) -> Result<DataSource, CliError> {
    match cfg.require("data.source")? {
        "synth" => Ok(DataSource::Synthetic(synth_spec(cfg)?)),
        "csv" => Ok(DataSource::Csv {
            edges: PathBuf::from(cfg.require("data.edges")?),
            labels: PathBuf::from(cfg.require("data.labels")?),
            n_categories: cfg.get_usize("data.n_categories")?,
            sparse_labels: cfg.get_bool("data.labels_sparse")?,
        }),
        other => Err(CliError::Validation(format!(
            "key `data.source`: expected synth | csv, got `{other}`"
        ))),
    }
}

fn train_config(cfg: &Config) -> Result<TrainConfig, CliError> {
    let tc = TrainConfig {
        dim: cfg.get_usize("model.dim")?,
        mem_decay: cfg.get_f64("model.mem_decay")?,
        mu: cfg.get_f64("train.mu")?,
        alpha_min: cfg.get_f64("train.alpha_min")?,
        max_epochs: cfg.get_usize("train.max_epochs")?,
        patience: cfg.get_usize("train.patience")?,
        batch_edges: cfg.get_usize("train.batch_edges")?,
        seed: cfg.get_u64("train.seed")?,
        replace_ground_truth: cfg.get_bool("pseudo.replace_ground_truth")?,
    };
    tc.validate()?;
    Ok(tc)
}

fn noise_spec(cfg: &Config) -> Result<NoiseSpec, CliError> {
    let spec = NoiseSpec {
        gamma: cfg.get_f64("noise.gamma")?,
        alpha: cfg.get_f64("noise.alpha")?,
        seed: cfg.get_u64("noise.seed")?,
    };
    spec.validate()?;
    Ok(spec)
}

fn parse_strategies(cfg: &Config) -> Result<Vec<Strategy>, CliError> {
    let window = cfg.get_f64("ma.window")?;
    cfg.require("experiment.strategies")?
        .split(',')
        .map(|name| Strategy::parse(name.trim(), window).map_err(CliError::from))
        .collect()
}

fn fractions(cfg: &Config) -> Result<[f64; 3], CliError> {
    Ok([
        cfg.get_f64("split.train")?,
        cfg.get_f64("split.valid")?,
        cfg.get_f64("split.test")?,
    ])
}

fn workers(cfg: &Config) -> Result<usize, CliError> {
    let configured = cfg.get_usize("workers")?;
    if configured > 0 {
        return Ok(configured);
    }
    Ok(std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1))
}

fn experiment_spec(cfg: &Config, subdir: &str) -> Result<ExperimentSpec, CliError> {
    let spec = ExperimentSpec {
        data: data_source(cfg)?,
        strategies: parse_strategies(cfg)?,
        seeds: cfg.get_u64_list("experiment.seeds")?,
        sweep_windows: cfg.get_f64_list("sweep.windows")?,
        train: train_config(cfg)?,
        noise: noise_spec(cfg)?,
        split_fractions: fractions(cfg)?,
        keep_tail: cfg.get_f64("split.keep_tail")?,
        out_dir: out_dir(cfg)?.join(subdir),
        workers: workers(cfg)?,
    };
    spec.validate()?;
    Ok(spec)
}

fn write_snapshot(dir: &Path, cfg: &Config) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    std::fs::write(dir.join("spec.snapshot"), cfg.snapshot())
        .map_err(|e| CliError::Runtime(format!("cannot write spec.snapshot: {e}")))?;
    Ok(())
}

// ---------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------

fn cmd_generate(cfg: &Config, log: &dyn Fn(u8, &str)) -> Result<(), CliError> {
    let dir = out_dir(cfg)?;
    let spec = synth_spec(cfg)?;
    let event_log = synth_generate(&spec)?;
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    write_edges_csv(&event_log, &dir.join("edges.csv"))?;
    write_labels_csv(&event_log, &dir.join("labels.csv"))?;
    write_snapshot(&dir, cfg)?;
    log(
        1,
        &format!(
            "generated {} edges, {} labels into {}",
            event_log.edges().len(),
            event_log.labels().len(),
            dir.display()
        ),
    );
    Ok(())
}

fn cmd_train(cfg: &Config, log: &dyn Fn(u8, &str)) -> Result<(), CliError> {
    let mut spec = experiment_spec(cfg, "train")?;
    let window = cfg.get_f64("ma.window")?;
    let strategy = Strategy::parse(cfg.require("strategy")?, window)?;
    spec.strategies = vec![strategy];
    spec.seeds = vec![spec.train.seed];
    write_snapshot(&spec.out_dir, cfg)?;
    let result = run_strategy_comparison(&spec)?;
    for row in &result.summary {
        log(
            1,
            &format!(
                "{}: test={:.4} valid={:.4} steps={} best_epoch={}",
                row.strategy, row.test_ndcg, row.valid_ndcg, row.steps, row.best_epoch
            ),
        );
    }
    Ok(())
}

fn cmd_compare(cfg: &Config, log: &dyn Fn(u8, &str)) -> Result<(), CliError> {
    let spec = experiment_spec(cfg, "compare")?;
    write_snapshot(&spec.out_dir, cfg)?;
    let result = run_strategy_comparison(&spec)?;
    log(1, &format!("{} runs summarized", result.runs.len()));
    Ok(())
}

fn cmd_budget(cfg: &Config, log: &dyn Fn(u8, &str)) -> Result<(), CliError> {
    let spec = experiment_spec(cfg, "budget")?;
    let epochs = cfg.get_usize("budget.epochs")?;
    write_snapshot(&spec.out_dir, cfg)?;
    let result = run_fixed_budget(&spec, epochs)?;
    log(1, &format!("{} budget rows", result.runs.len()));
    Ok(())
}

fn cmd_sweep(cfg: &Config, log: &dyn Fn(u8, &str)) -> Result<(), CliError> {
    let spec = experiment_spec(cfg, "sweep")?;
    write_snapshot(&spec.out_dir, cfg)?;
    let result = run_window_sweep(&spec)?;
    log(1, &format!("{} sweep points", result.points.len()));
    Ok(())
}

fn cmd_ablate(
    cfg: &Config,
    mode: Option<&str>,
    log: &dyn Fn(u8, &str),
) -> Result<(), CliError> {
    let mode = mode.ok_or_else(|| CliError::Usage("ablate needs --mode edges|targets".into()))?;
    let mode = AblationMode::parse(mode)?;
    let subdir = match mode {
        AblationMode::Edges => "ablate_edges",
        AblationMode::Targets => "ablate_targets",
    };
    let spec = experiment_spec(cfg, subdir)?;
    write_snapshot(&spec.out_dir, cfg)?;
    let pairs = run_shuffle_ablation(&spec, mode)?;
    log(1, &format!("{} ablation pairs", pairs.len()));
    Ok(())
}

fn cmd_verify_theory(cfg: &Config, grid: &str, log: &dyn Fn(u8, &str)) -> Result<(), CliError> {
    if grid != "default" {
        return Err(CliError::Validation(format!(
            "unknown verify-theory grid `{grid}` (only `default`)"
        )));
    }
    let samples = cfg.get_u64("theory.samples")?;
    let seed = cfg.get_u64("theory.seed")?;
    let dir = out_dir(cfg)?.join("verify-theory");
    write_snapshot(&dir, cfg)?;

    let ks = [2u64, 5, 20];
    let hs = [1u64, 5, 50];
    let us = [0.7, 1.0];
    let mut moments = String::from(
        "k,h,u,analytic_mean,mc_mean,mean_se,analytic_var,mc_var,var_se,pass\n",
    );
    let mut coeffs_csv =
        String::from("k,h,u,oh_coeff,ha_coeff,informal_oh,informal_ha,speedup\n");
    let mut cell = 0u64;
    let mut all_pass = true;
    for &k in &ks {
        for &h in &hs {
            for &u in &us {
                let params = LabelProcessParams::new(k, k + 5, h, u)?;
                let est = mc_estimate_t_h(&params, samples, derive_seed(seed, cell))?;
                cell += 1;
                let mean = analytic_mean_t_h(&params);
                let var = analytic_var_t_h(&params);
                let pass = (est.mean - mean).abs() <= 4.0 * est.mean_se
                    && (est.variance - var).abs() <= 4.0 * est.variance_se;
                all_pass &= pass;
                moments.push_str(&format!(
                    "{k},{h},{u},{mean},{},{},{var},{},{},{pass}\n",
                    est.mean, est.mean_se, est.variance, est.variance_se
                ));
                let coeffs = regret_coefficients(&params)?;
                coeffs_csv.push_str(&format!(
                    "{k},{h},{u},{},{},{},{},{}\n",
                    coeffs.oh_coeff,
                    coeffs.ha_coeff,
                    coeffs.informal_oh,
                    coeffs.informal_ha,
                    coeffs.speedup
                ));
            }
        }
    }
    std::fs::write(dir.join("moments.csv"), moments)
        .map_err(|e| CliError::Runtime(format!("cannot write moments.csv: {e}")))?;
    std::fs::write(dir.join("regret_coeffs.csv"), coeffs_csv)
        .map_err(|e| CliError::Runtime(format!("cannot write regret_coeffs.csv: {e}")))?;
    log(
        1,
        &format!("verify-theory: all cells pass = {all_pass} ({cell} cells)"),
    );
    Ok(())
}

fn cmd_speedup(cfg: &Config, log: &dyn Fn(u8, &str)) -> Result<(), CliError> {
    let tau_loss = match cfg.require("speedup.tau_loss")? {
        "auto" => None,
        raw => Some(raw.parse::<f64>().map_err(|_| {
            CliError::Validation("key `speedup.tau_loss`: expected a number or auto".into())
        })?),
    };
    let spec = SpeedupSpec {
        n_categories: cfg.get_u64("speedup.categories")?,
        true_set: cfg.get_u64("speedup.true_set")?,
        obs_prob: cfg.get_f64("speedup.obs_prob")?,
        h_grid: cfg.get_u64_list("speedup.h_grid")?,
        seeds: cfg.get_u64_list("experiment.seeds")?,
        mu: cfg.get_f64("speedup.mu")?,
        alpha_min: cfg.get_f64("speedup.alpha_min")?,
        dim: cfg.get_usize("speedup.dim")?,
        max_steps: cfg.get_u64("speedup.max_steps")?,
        tau_loss,
        tau_excess: cfg.get_f64("speedup.tau_excess")?,
        out_dir: out_dir(cfg)?.join("speedup"),
        workers: workers(cfg)?,
    };
    spec.validate()?;
    write_snapshot(&spec.out_dir, cfg)?;
    let report = run_speedup_experiment(&spec)?;
    for row in &report.summary {
        log(
            1,
            &format!(
                "h={}: ratio={:.2} predicted={:.2} censored={}",
                row.history, row.ratio, row.predicted_ratio, row.censored
            ),
        );
    }
    Ok(())
}

fn cmd_plot_data(traces: &[PathBuf]) -> Result<(), CliError> {
    if traces.is_empty() {
        return Err(CliError::Usage(
            "plot-data needs at least one --trace FILE".into(),
        ));
    }
    let mut out = String::from("x,y,series\n");
    for path in traces {
        let series = path
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| path.display().to_string());
        let content = std::fs::read_to_string(path)
            .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
        for (lineno, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: TraceRecord = serde_json::from_str(line).map_err(|e| {
                CliError::Validation(format!(
                    "{}:{}: bad trace record: {e}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            if let Some(ndcg) = record.val_ndcg {
                out.push_str(&format!("{},{},{}\n", record.time_s, ndcg, series));
            }
        }
    }
    print!("{out}");
    Ok(())
}
