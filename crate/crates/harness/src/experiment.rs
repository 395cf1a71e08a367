//! Experiment orchestration: dataset assembly, reference optimum, concurrent
//! (algorithm, seed) cells, CSV and metadata output.

use std::fs;
use std::path::{Path, PathBuf};

use adfs_core::adfs::{run_adfs, run_adfs_efficient, run_ns_adfs, RunOptions};
use adfs_core::augmented::{build_augmented, build_augmented_ns, Regime};
use adfs_core::baselines::{ns_reference, point_saga, reference_optimum};
use adfs_core::objective::{LocalObjective, LossKind, Sample};
use adfs_core::topology::build_topology;
use adfs_core::{Flat, Objective, Problem, Record};
use log::{error, info, warn};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::{Algorithm, ConfigError, DataSpec, ExperimentConfig};
use crate::libsvm::{parse_libsvm, LibsvmError};
use crate::synth::{assign_nodes, synth_pool, Row, SynthSpec};

pub const CSV_HEADER: &str = "algo,seed,iter,time,subopt";

/// Slack allowed below `F*` before a logged objective is reported.
const ENVELOPE_TOL: f64 = 1e-9;

/// Default accuracy for the predicted time when the config sets no target.
const DEFAULT_EPS: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error at {0}")]
    Config(#[from] ConfigError),
    #[error("dataset: {0}")]
    Libsvm(#[from] LibsvmError),
    #[error("dataset: {0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] adfs_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Everything derived from a config before any solver runs.
pub struct Instance {
    pub objectives: Vec<Objective>,
    pub problem: Problem,
    pub flat: Flat,
    pub theta_star: Vec<f64>,
    pub f_star: f64,
    pub dataset: String,
}

/// Builds per-node objectives. Logistic labels are coerced to ±1.
pub fn node_objectives(
    rows: &[Vec<Row>],
    sigma: &[f64],
    loss: LossKind,
) -> Result<Vec<Objective>, HarnessError> {
    rows.iter()
        .zip(sigma)
        .enumerate()
        .map(|(i, (node, &s))| {
            let samples = node
                .iter()
                .enumerate()
                .map(|(j, (x, y))| {
                    let y = match loss {
                        LossKind::Logistic if *y > 0.0 => 1.0,
                        LossKind::Logistic => -1.0,
                        _ => *y,
                    };
                    Sample::new(x.clone(), y)
                        .map_err(|e| HarnessError::Data(format!("node {i}, sample {j}: {e}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(LocalObjective::new(samples, s, loss)?)
        })
        .collect()
}

fn node_rows(cfg: &ExperimentConfig) -> Result<(Vec<Vec<Row>>, String), HarnessError> {
    let n = cfg.n();
    let loss: LossKind = cfg.loss.into();
    let (pool, name) = match &cfg.data {
        DataSpec::Synthetic {
            d,
            correlation,
            noise,
            pool,
        } => {
            let spec = SynthSpec {
                d: *d,
                correlation: *correlation,
                noise: *noise,
            };
            let size = pool.unwrap_or(n * cfg.m);
            let name = format!("synthetic(d={d},correlation={correlation},noise={noise},pool={size})");
            (synth_pool(&spec, size, loss, cfg.data_seed), name)
        }
        DataSpec::Libsvm { path, limit } => {
            let data = parse_libsvm(path)?;
            let take = limit.unwrap_or(data.samples.len());
            let pool: Vec<Row> = data
                .samples
                .iter()
                .take(take)
                .map(|s| (s.to_dense(data.dim), s.label))
                .collect();
            (pool, format!("libsvm({})", path.display()))
        }
    };
    if pool.len() < cfg.m {
        return Err(HarnessError::Data(format!(
            "base set has {} samples but m = {}",
            pool.len(),
            cfg.m
        )));
    }
    let rows = assign_nodes(pool.len(), n, cfg.m, cfg.data_seed)
        .into_iter()
        .map(|idx| idx.into_iter().map(|k| pool[k].clone()).collect())
        .collect();
    Ok((rows, name))
}

pub fn build_instance(cfg: &ExperimentConfig) -> Result<Instance, HarnessError> {
    cfg.validate()?;
    let loss: LossKind = cfg.loss.into();
    let (rows, dataset) = node_rows(cfg)?;
    let objectives = node_objectives(&rows, &cfg.sigma.values(cfg.n()), loss)?;
    let graph = build_topology(&cfg.topology.kind())?;
    let flat = Flat::from_objectives(&objectives)?;
    let (theta_star, f_star) = if loss.is_smooth() {
        reference_optimum(&flat, cfg.reference_tol)?
    } else {
        let r = ns_reference(&flat, cfg.reference_tol)?;
        (r.theta, r.primal_value)
    };
    let problem = if loss.is_smooth() {
        build_augmented(graph, objectives.clone(), cfg.tau, cfg.p_comm)?
    } else {
        build_augmented_ns(graph, objectives.clone(), cfg.tau, cfg.p_comm)?
    };
    Ok(Instance {
        objectives,
        problem,
        flat,
        theta_star,
        f_star,
        dataset,
    })
}

/// Derived constants written to the metadata file.
#[derive(Debug, Clone, Serialize)]
pub struct Constants {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa_s: Option<f64>,
    /// Largest per-node batch condition number.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa_b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa_comm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    pub p_comm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_star: Option<f64>,
    pub f_star: f64,
    /// `ρ⁻¹ (p_comp + τ p_comm)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_per_log_epsilon: Option<f64>,
    pub epsilon: f64,
    /// `ρ⁻¹ (p_comp + τ p_comm) log(1/ε)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predicted_time: Option<f64>,
}

impl Constants {
    pub fn of(instance: &Instance, epsilon: f64) -> Result<Self, HarnessError> {
        let p = &instance.problem;
        let mut c = Constants {
            n: p.n(),
            m: p.layout.m_max(),
            d: p.d,
            gamma: p.spectrum.gamma,
            kappa_s: None,
            kappa_b: None,
            kappa_comm: None,
            alpha: None,
            rho: None,
            p_comm: p.sampling.p_comm(),
            p_star: None,
            f_star: instance.f_star,
            time_per_log_epsilon: None,
            epsilon,
            predicted_time: None,
        };
        if let Regime::Smooth(s) = &p.regime {
            c.kappa_s = Some(s.condition.kappa_s);
            c.kappa_b = s.condition.kappa_b.iter().copied().reduce(f64::max);
            c.kappa_comm = s.kappa_comm;
            c.alpha = Some(s.alpha);
            c.rho = Some(s.rate.rho);
            c.p_star = p.optimal_p_comm()?;
            let per = p.time_per_log_epsilon()?;
            c.time_per_log_epsilon = Some(per);
            c.predicted_time = Some(per * (1.0 / epsilon).ln());
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CellFailure {
    pub algo: String,
    pub seed: u64,
    pub message: String,
}

pub struct ExperimentOutput {
    pub constants: Constants,
    /// Successful runs, sorted by (algorithm, seed).
    pub records: Vec<Record>,
    pub failures: Vec<CellFailure>,
    /// Logged objectives more than `ENVELOPE_TOL` below `F*`.
    pub envelope_violations: usize,
    pub csv: String,
    pub metadata: String,
}

fn run_cell(
    cfg: &ExperimentConfig,
    inst: &Instance,
    algo: Algorithm,
    seed: u64,
) -> Result<Record, HarnessError> {
    let mut opts = RunOptions::new(cfg.iters, seed, cfg.log_every).with_f_star(inst.f_star);
    if let Some(t) = cfg.target {
        opts = opts.with_target(t);
    }
    let mut rec = match algo {
        Algorithm::Adfs => run_adfs(&inst.problem, &opts)?,
        Algorithm::AdfsEfficient => run_adfs_efficient(&inst.problem, &opts)?,
        Algorithm::NsAdfs => run_ns_adfs(&inst.problem, &opts)?,
        Algorithm::PointSaga => point_saga(&inst.flat, &opts)?,
    };
    rec.meta.dataset = inst.dataset.clone();
    Ok(rec)
}

/// `%.12e` formatting: 12 fractional digits, signed exponent of at least two digits.
pub fn format_e12(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let s = format!("{x:.12e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mantissa}e{sign}{:02}", exp.abs())
}

pub fn records_csv(records: &[Record]) -> String {
    let mut lines: Vec<(&str, u64, u64, String)> = Vec::new();
    for r in records {
        for row in &r.rows {
            let line = format!(
                "{},{},{},{},{}",
                r.meta.algorithm,
                r.meta.seed,
                row.t,
                format_e12(row.time),
                format_e12(row.subopt.unwrap_or(f64::NAN))
            );
            lines.push((&r.meta.algorithm, r.meta.seed, row.t, line));
        }
    }
    lines.sort_by(|a, b| (a.0, a.1, a.2).cmp(&(b.0, b.1, b.2)));
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for (_, _, _, l) in lines {
        out.push_str(&l);
        out.push('\n');
    }
    out
}

/// First logged time at which the suboptimality is at most `eps`.
pub fn time_to_target(record: &Record, eps: f64) -> Option<f64> {
    record
        .rows
        .iter()
        .find(|r| r.subopt.is_some_and(|s| s <= eps))
        .map(|r| r.time)
}

#[derive(Serialize)]
struct Metadata<'a> {
    constants: &'a Constants,
    envelope_violations: usize,
    failures: &'a [CellFailure],
    config: &'a ExperimentConfig,
}

fn thread_pool() -> Result<rayon::ThreadPool, HarnessError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("ADFS_LAB_THREADS") {
        let k: usize = v.trim().parse().ok().filter(|&k| k > 0).ok_or_else(|| {
            ConfigError::new("ADFS_LAB_THREADS", format!("`{v}` is not a positive integer"))
        })?;
        b = b.num_threads(k);
    }
    b.build()
        .map_err(|e| HarnessError::Data(format!("thread pool: {e}")))
}

/// Runs every (algorithm, seed) cell. Failed cells are logged and reported,
/// the others still produce rows.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput, HarnessError> {
    let inst = build_instance(cfg)?;
    let constants = Constants::of(&inst, cfg.target.unwrap_or(DEFAULT_EPS))?;
    info!(
        "instance ready: n={} m={} d={} F*={:.12e}",
        constants.n, constants.m, constants.d, inst.f_star
    );
    // A zero budget runs nothing, so the CSV holds only its header.
    let cells: Vec<(Algorithm, u64)> = if cfg.iters == 0 {
        Vec::new()
    } else {
        cfg.algorithms
            .iter()
            .flat_map(|&a| cfg.seeds.iter().map(move |&s| (a, s)))
            .collect()
    };
    let results: Vec<_> = thread_pool()?.install(|| {
        cells
            .par_iter()
            .map(|&(a, s)| ((a, s), run_cell(cfg, &inst, a, s)))
            .collect()
    });
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for ((algo, seed), res) in results {
        match res {
            Ok(r) => records.push(r),
            Err(e) => {
                error!("cell {} seed {seed} failed: {e}", algo.name());
                failures.push(CellFailure {
                    algo: algo.name().into(),
                    seed,
                    message: e.to_string(),
                });
            }
        }
    }
    records.sort_by(|a, b| (&a.meta.algorithm, a.meta.seed).cmp(&(&b.meta.algorithm, b.meta.seed)));
    failures.sort_by(|a, b| (&a.algo, a.seed).cmp(&(&b.algo, b.seed)));
    let envelope_violations = records
        .iter()
        .flat_map(|r| &r.rows)
        .filter(|row| row.subopt.is_some_and(|s| s < -ENVELOPE_TOL))
        .count();
    if envelope_violations > 0 {
        warn!("{envelope_violations} logged objectives fall below F*");
    }
    let csv = records_csv(&records);
    let metadata = toml::to_string(&Metadata {
        constants: &constants,
        envelope_violations,
        failures: &failures,
        config: cfg,
    })
    .expect("metadata is serializable");
    Ok(ExperimentOutput {
        constants,
        records,
        failures,
        envelope_violations,
        csv,
        metadata,
    })
}

/// Sidecar path: `results.csv` becomes `results.meta.toml`.
pub fn metadata_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.toml")
}

pub fn write_outputs(out: &ExperimentOutput, csv_path: &Path) -> Result<(), HarnessError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| HarnessError::Io { path, source }
    };
    if let Some(dir) = csv_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io(dir))?;
    }
    fs::write(csv_path, &out.csv).map_err(io(csv_path))?;
    let meta = metadata_path(csv_path);
    fs::write(&meta, &out.metadata).map_err(io(&meta))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn c_style_exponent() {
        assert_eq!(format_e12(0.0), "0.000000000000e+00");
        assert_eq!(format_e12(1.5e-5), "1.500000000000e-05");
        assert_eq!(format_e12(-123.0), "-1.230000000000e+02");
        assert_eq!(format_e12(1e300), "1.000000000000e+300");
    }
}
