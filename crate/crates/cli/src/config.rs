//! Flat `key = value` configuration: a fixed key registry with documented
//! defaults, file loading, and last-writer-wins flag overrides. Unknown
//! keys are rejected.

use std::collections::BTreeMap;
use std::path::Path;

/// (key, default, description). `None` default means the key is required
/// by the subcommands that consume it (data source and output directory).
pub const REGISTRY: &[(&str, Option<&str>, &str)] = &[
    ("data.source", None, "data source: synth | csv"),
    ("data.edges", None, "edge CSV path (csv source)"),
    ("data.labels", None, "label CSV path (csv source)"),
    ("data.n_categories", None, "category count for csv labels"),
    ("data.labels_sparse", Some("false"), "label CSV uses sparse cat:weight;... rows"),
    ("out.dir", None, "output directory (env HALSTREAM_OUT as fallback)"),
    ("synth.users", Some("20"), "synthetic: number of users"),
    ("synth.categories", Some("10"), "synthetic: total categories n"),
    ("synth.true_set", Some("3"), "synthetic: true-set size k"),
    ("synth.obs_prob", Some("1.0"), "synthetic: observation probability u"),
    ("synth.events_per_user", Some("2000"), "synthetic: interactions per user"),
    ("synth.label_period", Some("250"), "synthetic: interactions per label emission"),
    ("synth.seed", Some("1234"), "synthetic: generator seed"),
    ("split.train", Some("0.7"), "chronological split: train fraction"),
    ("split.valid", Some("0.15"), "chronological split: validation fraction"),
    ("split.test", Some("0.15"), "chronological split: test fraction"),
    ("split.keep_tail", Some("1.0"), "keep only this tail fraction of the train split"),
    ("strategy", Some("default"), "training strategy: default | ha | ma | pf"),
    ("ma.window", Some("7"), "moving-average window w (>= 1)"),
    ("noise.gamma", Some("0.0"), "pseudo-target noise scale (0 disables)"),
    ("noise.alpha", Some("1.0"), "pseudo-target noise half-width"),
    ("noise.seed", Some("7"), "pseudo-target noise seed"),
    (
        "pseudo.replace_ground_truth",
        Some("false"),
        "replace ground-truth targets with pseudo-targets when history exists",
    ),
    ("model.dim", Some("64"), "memory embedding dimension"),
    ("model.mem_decay", Some("0.97"), "memory decay rate in [0, 1]"),
    ("train.mu", Some("2.0"), "strong-convexity rate for the 1/(mu t) schedule"),
    ("train.alpha_min", Some("1e-6"), "step-size floor"),
    ("train.max_epochs", Some("40"), "maximum training epochs"),
    ("train.patience", Some("6"), "validation evaluations without improvement before stopping"),
    ("train.batch_edges", Some("100"), "edges per batch (N)"),
    ("train.seed", Some("1"), "training seed (init, noise derivation)"),
    ("experiment.strategies", Some("default,ha,ma,pf"), "strategies for compare/budget/ablate"),
    ("experiment.seeds", Some("1,2,3,4,5"), "seeds for experiment runs"),
    ("budget.epochs", Some("1"), "fixed-budget epoch count"),
    ("sweep.windows", Some("1..15"), "MA window grid (comma list or a..b range)"),
    ("speedup.categories", Some("50"), "speedup: total categories n"),
    ("speedup.true_set", Some("10"), "speedup: true-set size k"),
    ("speedup.obs_prob", Some("0.95"), "speedup: observation probability u"),
    ("speedup.h_grid", Some("1,4,16,32,64"), "speedup: history lengths"),
    ("speedup.mu", Some("0.1"), "speedup: step-size rate"),
    ("speedup.alpha_min", Some("1e-6"), "speedup: step-size floor"),
    ("speedup.dim", Some("8"), "speedup: embedding dimension"),
    ("speedup.max_steps", Some("200000"), "speedup: step budget per run"),
    ("speedup.tau_loss", Some("auto"), "speedup: absolute loss threshold, or auto"),
    ("speedup.tau_excess", Some("0.1"), "speedup: excess over optimal loss when auto"),
    ("theory.samples", Some("1000000"), "verify-theory: Monte Carlo samples per cell"),
    ("theory.seed", Some("1"), "verify-theory: Monte Carlo seed"),
    ("workers", Some("0"), "parallel run workers (0 = logical cores)"),
];

/// Fully-resolved configuration.
#[derive(Debug, Clone)]
pub struct Config {
    values: BTreeMap<String, String>,
}

/// A validation failure the CLI reports with exit code 1.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

fn known_key(key: &str) -> bool {
    REGISTRY.iter().any(|(k, _, _)| *k == key)
}

impl Config {
    /// Defaults, then file values, then flag overrides (last writer wins).
    pub fn load(
        path: Option<&Path>,
        overrides: &[(String, String)],
    ) -> Result<Self, ConfigError> {
        let mut values = BTreeMap::new();
        for (key, default, _) in REGISTRY {
            if let Some(value) = default {
                values.insert(key.to_string(), value.to_string());
            }
        }
        if let Some(path) = path {
            let content = std::fs::read_to_string(path)
                .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
            for (lineno, raw) in content.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    ConfigError(format!(
                        "config {}:{}: expected `key = value`",
                        path.display(),
                        lineno + 1
                    ))
                })?;
                let key = key.trim();
                if !known_key(key) {
                    return Err(ConfigError(format!(
                        "config {}:{}: unknown key `{key}`",
                        path.display(),
                        lineno + 1
                    )));
                }
                values.insert(key.to_string(), value.trim().to_string());
            }
        }
        for (key, value) in overrides {
            if !known_key(key) {
                return Err(ConfigError(format!("unknown key `{key}`")));
            }
            values.insert(key.clone(), value.clone());
        }
        if !values.contains_key("out.dir") {
            if let Ok(dir) = std::env::var("HALSTREAM_OUT") {
                values.insert("out.dir".to_string(), dir);
            }
        }
        Ok(Self { values })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str, ConfigError> {
        self.get(key)
            .ok_or_else(|| ConfigError(format!("missing required key `{key}`")))
    }

    pub fn get_u64(&self, key: &str) -> Result<u64, ConfigError> {
        self.require(key)?
            .parse()
            .map_err(|_| ConfigError(format!("key `{key}`: expected an unsigned integer")))
    }

    pub fn get_usize(&self, key: &str) -> Result<usize, ConfigError> {
        self.require(key)?
            .parse()
            .map_err(|_| ConfigError(format!("key `{key}`: expected an unsigned integer")))
    }

    pub fn get_f64(&self, key: &str) -> Result<f64, ConfigError> {
        self.require(key)?
            .parse()
            .map_err(|_| ConfigError(format!("key `{key}`: expected a number")))
    }

    pub fn get_bool(&self, key: &str) -> Result<bool, ConfigError> {
        match self.require(key)? {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            other => Err(ConfigError(format!(
                "key `{key}`: expected a boolean, got `{other}`"
            ))),
        }
    }

    /// Comma list or inclusive `a..b` integer range.
    pub fn get_f64_list(&self, key: &str) -> Result<Vec<f64>, ConfigError> {
        let raw = self.require(key)?;
        if let Some((a, b)) = raw.split_once("..") {
            let a: u64 = a.trim().parse().map_err(|_| range_err(key))?;
            let b: u64 = b.trim().parse().map_err(|_| range_err(key))?;
            if a > b {
                return Err(range_err(key));
            }
            return Ok((a..=b).map(|v| v as f64).collect());
        }
        raw.split(',')
            .map(|part| {
                part.trim()
                    .parse::<f64>()
                    .map_err(|_| ConfigError(format!("key `{key}`: bad number `{part}`")))
            })
            .collect()
    }

    pub fn get_u64_list(&self, key: &str) -> Result<Vec<u64>, ConfigError> {
        self.get_f64_list(key)?
            .into_iter()
            .map(|v| {
                if v.fract() == 0.0 && v >= 0.0 {
                    Ok(v as u64)
                } else {
                    Err(ConfigError(format!("key `{key}`: expected integers")))
                }
            })
            .collect()
    }

    /// Sorted `key = value` echo for provenance snapshots.
    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        for (key, value) in &self.values {
            out.push_str(&format!("{key} = {value}\n"));
        }
        out
    }
}

fn range_err(key: &str) -> ConfigError {
    ConfigError(format!("key `{key}`: expected `a..b` with integers a <= b"))
}

/// Key table for `--help`.
pub fn help_keys() -> String {
    let mut out = String::from("configuration keys (key = default  description):\n");
    for (key, default, desc) in REGISTRY {
        let d = default.unwrap_or("(required)");
        out.push_str(&format!("  {key:<30} {d:<18} {desc}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_then_file_then_flags() {
        let dir = std::env::temp_dir().join(format!("halstream-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("a.cfg");
        std::fs::write(&path, "train.mu = 3.5\n# comment\n\nsynth.users = 7\n").unwrap();
        let cfg = Config::load(
            Some(&path),
            &[("train.mu".to_string(), "4.0".to_string())],
        )
        .unwrap();
        assert_eq!(cfg.get_f64("train.mu").unwrap(), 4.0); // flag wins
        assert_eq!(cfg.get_u64("synth.users").unwrap(), 7); // file over default
        assert_eq!(cfg.get_u64("train.patience").unwrap(), 6); // default
    }

    #[test]
    fn unknown_keys_fail_closed() {
        let dir = std::env::temp_dir().join(format!("halstream-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.cfg");
        std::fs::write(&path, "no.such.key = 1\n").unwrap();
        assert!(Config::load(Some(&path), &[]).is_err());
        assert!(Config::load(None, &[("bogus".to_string(), "1".to_string())]).is_err());
    }

    #[test]
    fn list_and_range_parsing() {
        let cfg = Config::load(
            None,
            &[("sweep.windows".to_string(), "2..5".to_string())],
        )
        .unwrap();
        assert_eq!(cfg.get_f64_list("sweep.windows").unwrap(), vec![2.0, 3.0, 4.0, 5.0]);
        let cfg = Config::load(
            None,
            &[("speedup.h_grid".to_string(), "1, 8,64".to_string())],
        )
        .unwrap();
        assert_eq!(cfg.get_u64_list("speedup.h_grid").unwrap(), vec![1, 8, 64]);
    }

    #[test]
    fn snapshot_is_sorted_and_stable() {
        let cfg = Config::load(None, &[]).unwrap();
        let snap = cfg.snapshot();
        let mut lines: Vec<&str> = snap.lines().collect();
        let sorted = {
            let mut s = lines.clone();
            s.sort();
            s
        };
        assert_eq!(lines, sorted);
        lines.retain(|l| l.starts_with("train.mu"));
        assert_eq!(lines, vec!["train.mu = 2.0"]);
    }
}
