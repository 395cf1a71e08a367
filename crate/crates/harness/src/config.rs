//! Experiment configuration: a TOML file, optionally patched with dotted
//! `key=value` overrides, validated as a whole before anything runs.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use adfs_core::objective::LossKind;
use adfs_core::topology::TopologyKind;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    /// Dotted field path, or `<file>` for errors before parsing.
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Adfs,
    AdfsEfficient,
    NsAdfs,
    PointSaga,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Adfs => "adfs",
            Algorithm::AdfsEfficient => "adfs_efficient",
            Algorithm::NsAdfs => "ns_adfs",
            Algorithm::PointSaga => "point_saga",
        }
    }

    fn needs_smooth(self) -> bool {
        !matches!(self, Algorithm::NsAdfs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Logistic,
    Squared,
    Absolute,
}

impl From<Loss> for LossKind {
    fn from(l: Loss) -> Self {
        match l {
            Loss::Logistic => LossKind::Logistic,
            Loss::Squared => LossKind::Squared,
            Loss::Absolute => LossKind::Absolute,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologySpec {
    Line { n: usize },
    Complete { n: usize },
    Grid2d { rows: usize, cols: usize },
    Custom { n: usize, edges: Vec<[usize; 2]> },
}

impl TopologySpec {
    pub fn n(&self) -> usize {
        match *self {
            TopologySpec::Line { n } | TopologySpec::Complete { n } | TopologySpec::Custom { n, .. } => n,
            TopologySpec::Grid2d { rows, cols } => rows * cols,
        }
    }

    pub fn kind(&self) -> TopologyKind {
        match self {
            TopologySpec::Line { n } => TopologyKind::Line(*n),
            TopologySpec::Complete { n } => TopologyKind::Complete(*n),
            TopologySpec::Grid2d { rows, cols } => TopologyKind::Grid2d {
                rows: *rows,
                cols: *cols,
            },
            TopologySpec::Custom { n, edges } => TopologyKind::Custom {
                n: *n,
                edges: edges.iter().map(|e| (e[0], e[1])).collect(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    Synthetic {
        d: usize,
        #[serde(default)]
        correlation: f64,
        #[serde(default = "default_noise")]
        noise: f64,
        /// Base pool size; `n·m` when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pool: Option<usize>,
    },
    Libsvm {
        path: PathBuf,
        /// Use only the first `limit` samples of the file as the base set.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        limit: Option<usize>,
    },
}

fn default_noise() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaSpec {
    Uniform(f64),
    PerNode(Vec<f64>),
}

impl SigmaSpec {
    pub fn values(&self, n: usize) -> Vec<f64> {
        match self {
            SigmaSpec::Uniform(s) => vec![*s; n],
            SigmaSpec::PerNode(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub topology: TopologySpec,
    pub data: DataSpec,
    /// Samples per node.
    pub m: usize,
    pub loss: Loss,
    pub sigma: SigmaSpec,
    pub tau: f64,
    pub algorithms: Vec<Algorithm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_comm: Option<f64>,
    /// Iteration budget per run.
    pub iters: u64,
    /// Stop a run once its suboptimality reaches this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub data_seed: u64,
    #[serde(default = "default_log_every")]
    pub log_every: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default = "default_reference_tol")]
    pub reference_tol: f64,
}

fn default_log_every() -> u64 {
    100
}

fn default_output() -> PathBuf {
    PathBuf::from("results.csv")
}

fn default_reference_tol() -> f64 {
    1e-10
}

impl ExperimentConfig {
    pub fn n(&self) -> usize {
        self.topology.n()
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError::new("<file>", format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text, overrides)?;
        if let DataSpec::Libsvm { path: data, .. } = &mut cfg.data {
            if data.is_relative() {
                if let Some(dir) = path.parent() {
                    *data = dir.join(&*data);
                }
            }
        }
        Ok(cfg)
    }

    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut value: toml::Value = toml::from_str::<toml::Table>(text)
            .map(toml::Value::Table)
            .map_err(|e| ConfigError::new("<file>", e.message().to_string()))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: Self = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            ConfigError::new(if path == "." { "<root>".into() } else { path }, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let n = self.n();
        if n == 0 {
            return Err(ConfigError::new("topology", "graph has no nodes"));
        }
        if let TopologySpec::Custom { edges, .. } = &self.topology {
            for (k, e) in edges.iter().enumerate() {
                if e[0] >= n || e[1] >= n || e[0] == e[1] {
                    return Err(ConfigError::new(
                        format!("topology.edges[{k}]"),
                        format!("invalid edge {:?} for {n} nodes", e),
                    ));
                }
            }
        }
        if self.m == 0 {
            return Err(ConfigError::new("m", "must be at least 1"));
        }
        match &self.data {
            DataSpec::Synthetic {
                d,
                correlation,
                noise,
                pool,
            } => {
                if *d == 0 {
                    return Err(ConfigError::new("data.d", "must be at least 1"));
                }
                if !(0.0..1.0).contains(correlation) {
                    return Err(ConfigError::new("data.correlation", "must lie in [0, 1)"));
                }
                if !(noise.is_finite() && *noise >= 0.0) {
                    return Err(ConfigError::new("data.noise", "must be finite and non-negative"));
                }
                if let Some(p) = pool {
                    if *p < self.m {
                        return Err(ConfigError::new("data.pool", format!("smaller than m = {}", self.m)));
                    }
                }
            }
            DataSpec::Libsvm { path, limit } => {
                if !path.is_file() {
                    return Err(ConfigError::new("data.path", format!("{} is not a file", path.display())));
                }
                if let Some(l) = limit {
                    if *l < self.m {
                        return Err(ConfigError::new("data.limit", format!("smaller than m = {}", self.m)));
                    }
                }
            }
        }
        match &self.sigma {
            SigmaSpec::Uniform(s) => check_positive("sigma", *s)?,
            SigmaSpec::PerNode(v) => {
                if v.len() != n {
                    return Err(ConfigError::new(
                        "sigma",
                        format!("{} values for {n} nodes", v.len()),
                    ));
                }
                for (i, s) in v.iter().enumerate() {
                    check_positive(&format!("sigma[{i}]"), *s)?;
                }
            }
        }
        if !(self.tau.is_finite() && self.tau >= 0.0) {
            return Err(ConfigError::new("tau", "must be finite and non-negative"));
        }
        if self.algorithms.is_empty() {
            return Err(ConfigError::new("algorithms", "list is empty"));
        }
        let mut seen = BTreeSet::new();
        let smooth = !matches!(self.loss, Loss::Absolute);
        for (k, a) in self.algorithms.iter().enumerate() {
            if !seen.insert(*a) {
                return Err(ConfigError::new(format!("algorithms[{k}]"), format!("{} listed twice", a.name())));
            }
            if a.needs_smooth() != smooth {
                let need = if smooth { "a non-smooth" } else { "a smooth" };
                return Err(ConfigError::new(
                    format!("algorithms[{k}]"),
                    format!("{} needs {need} loss", a.name()),
                ));
            }
            if *a == Algorithm::NsAdfs && n < 2 {
                return Err(ConfigError::new(format!("algorithms[{k}]"), "ns_adfs needs at least two nodes"));
            }
        }
        if let Some(p) = self.p_comm {
            if n == 1 {
                return Err(ConfigError::new("p_comm", "a single node has no communication edges"));
            }
            if !(p > 0.0 && p < 1.0) {
                return Err(ConfigError::new("p_comm", "must lie in (0, 1)"));
            }
        }
        if let Some(t) = self.target {
            check_positive("target", t)?;
        }
        if self.seeds.is_empty() {
            return Err(ConfigError::new("seeds", "list is empty"));
        }
        if self.log_every == 0 {
            return Err(ConfigError::new("log_every", "must be at least 1"));
        }
        check_positive("reference_tol", self.reference_tol)?;
        Ok(())
    }
}

fn check_positive(path: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(ConfigError::new(path, format!("{v} must be finite and positive")))
    }
}

/// Applies `a.b.c=value`. The value is read as a TOML literal, falling back
/// to a bare string.
pub fn apply_override(root: &mut toml::Value, spec: &str) -> Result<(), ConfigError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::new(spec, "override must look like key=value"))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(ConfigError::new(key, "empty key segment"));
    }
    let value = toml::from_str::<toml::Table>(&format!("v = {}", raw.trim()))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("non-empty key");
    let mut node = root;
    let mut walked = String::new();
    for p in parts {
        if !walked.is_empty() {
            walked.push('.');
        }
        walked.push_str(p);
        let table = node
            .as_table_mut()
            .ok_or_else(|| ConfigError::new(walked.clone(), "not a table"))?;
        node = table
            .entry(p)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    node.as_table_mut()
        .ok_or_else(|| ConfigError::new(key, "parent is not a table"))?
        .insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
        m = 5
        loss = "logistic"
        sigma = 1.0
        tau = 5.0
        algorithms = ["adfs_efficient", "point_saga"]
        iters = 100
        seeds = [0, 1]

        [topology]
        kind = "grid2d"
        rows = 2
        cols = 2

        [data]
        kind = "synthetic"
        d = 3
    "#;

    #[test]
    fn parses_with_defaults() {
        let c = ExperimentConfig::from_toml(BASE, &[]).unwrap();
        assert_eq!(c.n(), 4);
        assert_eq!(c.log_every, 100);
        assert_eq!(c.sigma.values(4), vec![1.0; 4]);
        let again = ExperimentConfig::from_toml(&c.to_toml(), &[]).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn overrides_patch_nested_fields() {
        let o = ["topology.rows=3".to_string(), "data.correlation=0.5".into(), "sigma=[1, 2, 3, 4, 5, 6]".into()];
        let c = ExperimentConfig::from_toml(BASE, &o).unwrap();
        assert_eq!(c.n(), 6);
        assert!(matches!(c.data, DataSpec::Synthetic { correlation, .. } if correlation == 0.5));
        assert_eq!(c.sigma.values(6)[5], 6.0);
    }

    #[test]
    fn errors_name_the_field() {
        let err = |o: &str| ExperimentConfig::from_toml(BASE, &[o.to_string()]).unwrap_err().path;
        assert_eq!(err("tau=-1"), "tau");
        assert_eq!(err("data.correlation=1.0"), "data.correlation");
        assert_eq!(err("sigma=[1.0]"), "sigma");
        assert_eq!(err("algorithms=[\"ns_adfs\"]"), "algorithms[0]");
        assert_eq!(err("algorithms=[\"sgd\"]"), "algorithms[0]");
        assert_eq!(err("log_every=0"), "log_every");
        assert_eq!(err("iters=\"many\""), "iters");
        assert_eq!(err("data.extra=1"), "data");
        assert_eq!(err("p_comm=1.5"), "p_comm");
        assert_eq!(err("bogus"), "bogus");
    }
}
