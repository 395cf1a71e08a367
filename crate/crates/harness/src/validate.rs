//! Built-in check suite run by `adfs-lab validate`. Every check uses fixed
//! seeds, so the report is identical from run to run.

use std::fmt;

use adfs_core::adfs::{Adfs, AdfsEfficient, DualComposite, RunOptions};
use adfs_core::apcg::{Apcg, ApcgMode, BlockSampler};
use adfs_core::augmented::{apply_comm_step, build_augmented, dense, rate_rho, BlockDraw};
use adfs_core::baselines::{point_saga, reference_optimum};
use adfs_core::linalg::Mat;
use adfs_core::objective::{condition_numbers, LocalObjective, LossKind, Sample};
use adfs_core::rng::DrawStream;
use adfs_core::topology::{build_topology, CommunicationGraph, TopologyKind};
use adfs_core::{Flat, Objective, Problem, Quadratic};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::experiment::node_objectives;
use crate::libsvm::{parse_libsvm_str, write_libsvm, SparseSample};
use crate::synth::{synth_dataset, SynthSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

type Outcome = Result<(bool, String), String>;

/// Random objectives with features uniform in `[-1, 1]^d`.
pub fn random_objectives(seed: u64, n: usize, m: usize, d: usize, loss: LossKind, sigma: f64) -> Vec<Objective> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let samples = (0..m)
                .map(|_| {
                    let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let y = match loss {
                        LossKind::Logistic if rng.random_bool(0.5) => 1.0,
                        LossKind::Logistic => -1.0,
                        _ => rng.random_range(-1.0..1.0),
                    };
                    Sample::new(x, y).expect("nonzero features")
                })
                .collect();
            LocalObjective::new(samples, sigma, loss).expect("valid objective")
        })
        .collect()
}

/// Connected random graph: a shuffled path plus random chords.
pub fn random_graph(seed: u64, n: usize) -> CommunicationGraph<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    for k in (1..n).rev() {
        order.swap(k, rng.random_range(0..=k));
    }
    let mut edges: Vec<(usize, usize)> = order.windows(2).map(|w| (w[0].min(w[1]), w[0].max(w[1]))).collect();
    for a in 0..n {
        for b in a + 1..n {
            if !edges.contains(&(a, b)) && rng.random_bool(0.3) {
                edges.push((a, b));
            }
        }
    }
    CommunicationGraph::with_unit_weights(n, edges).expect("connected")
}

/// Small random smooth instances: `n ≤ 5`, `m ≤ 3`, `d ≤ 3`.
fn small_instances(count: u64) -> Vec<Problem> {
    (0..count)
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + s);
            let n = rng.random_range(2..=5);
            let m = rng.random_range(1..=3);
            let d = rng.random_range(1..=3);
            let sigma = rng.random_range(0.2..2.0);
            let objs = random_objectives(2000 + s, n, m, d, LossKind::Logistic, sigma);
            build_augmented(random_graph(3000 + s, n), objs, 2.0, None).expect("valid instance")
        })
        .collect()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn spectral_bound() -> Outcome {
    let mut worst = f64::INFINITY;
    for p in small_instances(8) {
        let exact = dense::sigma_a_exact(&p).map_err(|e| e.to_string())?;
        let alpha = p.smooth().map_err(|e| e.to_string())?.alpha;
        let comm = dense::comm_curvature_min_pos(&p).map_err(|e| e.to_string())?;
        worst = worst.min(exact - alpha / 2.0).min(exact - comm);
    }
    Ok((worst >= -1e-8, format!("min slack {worst:.3e}")))
}

fn projector_identity() -> Outcome {
    let mut worst: f64 = 0.0;
    for p in small_instances(8) {
        let proj = dense::dense_ata_projector(&p).map_err(|e| e.to_string())?;
        let d = p.d;
        for (i, j) in p.layout.virtual_edges() {
            let col = dense::virtual_edge_col(&p, i, j);
            let x = p.sample(i, j).features();
            let mut e = vec![0.0; proj.rows()];
            for c in 0..d {
                e[col + c] = 0.7 * x[c];
            }
            let pe = proj.matvec(&e).map_err(|e| e.to_string())?;
            worst = worst.max(max_diff(&pe, &e));
        }
    }
    Ok((worst <= 1e-8, format!("max deviation {worst:.3e}")))
}

fn operator_shortcuts() -> Outcome {
    let mut worst: f64 = 0.0;
    let problems = small_instances(5);
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut draws = DrawStream::new(42);
    for k in 0..20 {
        let p = &problems[k % problems.len()];
        let a = dense::dense_a(p).map_err(|e| e.to_string())?;
        let y = Mat::from_fn(p.rows(), p.d, |_, _| rng.random_range(-1.0..1.0));
        let sd = dense::dense_sigma_dagger(p).map_err(|e| e.to_string())?;
        let wb = dense::dense_wb(p, &BlockDraw::Communication).map_err(|e| e.to_string())?;
        let want = wb.matmul(&sd).and_then(|m| m.matvec(y.as_slice())).map_err(|e| e.to_string())?;
        worst = worst.max(max_diff(apply_comm_step(p, &y).as_slice(), &want));

        // The shortcut acts on increments spanned by the drawn block's columns.
        let draw = p.sampling.draw(&mut draws);
        let mask = dense::block_scaling(p, &draw);
        let lambda: Vec<f64> = mask
            .iter()
            .map(|&w| if w > 0.0 { rng.random_range(-1.0..1.0) } else { 0.0 })
            .collect();
        let delta = a.matvec(&lambda).map_err(|e| e.to_string())?;
        let delta = Mat::from_vec(p.rows(), p.d, delta).map_err(|e| e.to_string())?;
        let wt = dense::dense_wtilde(p, &draw).map_err(|e| e.to_string())?;
        let want = wt.matvec(delta.as_slice()).map_err(|e| e.to_string())?;
        let got = p.apply_wtilde_checked(&draw, &delta).map_err(|e| e.to_string())?;
        worst = worst.max(max_diff(got.as_slice(), &want));
    }
    Ok((worst <= 1e-8, format!("max deviation {worst:.3e}")))
}

fn apcg_lasso() -> Outcome {
    let h = Mat::from_vec(3, 3, vec![3.0, 1.0, 0.0, 1.0, 2.0, 0.5, 0.0, 0.5, 1.5]).map_err(|e| e.to_string())?;
    let c = vec![1.0, -2.0, 0.5];
    let l1 = vec![0.3, 0.0, 0.4];
    let q = Quadratic::new(h.clone(), c.clone(), l1.clone(), BlockSampler::uniform_singletons(3))
        .map_err(|e| e.to_string())?;
    let mut solver = Apcg::new(&q, ApcgMode::StronglyConvex).map_err(|e| e.to_string())?;
    let mut rng = DrawStream::new(5);
    for _ in 0..3000 {
        solver.step(&mut rng).map_err(|e| e.to_string())?;
    }
    // Proximal gradient with step 1/trace(H) ≤ 1/λ_max(H).
    let step = 1.0 / 6.5;
    let mut x = vec![0.0; 3];
    for _ in 0..20_000 {
        let diff: Vec<f64> = x.iter().zip(&c).map(|(a, b)| a - b).collect();
        let g = h.matvec(&diff).map_err(|e| e.to_string())?;
        for k in 0..3 {
            let z = x[k] - step * g[k];
            x[k] = z.signum() * (z.abs() - step * l1[k]).max(0.0);
        }
    }
    let err = max_diff(&solver.state().x, &x);
    Ok((err <= 1e-8, format!("distance to proximal gradient {err:.3e}")))
}

fn single_node_reduction() -> Outcome {
    let g = CommunicationGraph::with_unit_weights(1, vec![]).map_err(|e| e.to_string())?;
    let p = build_augmented(g, random_objectives(7, 1, 3, 3, LossKind::Logistic, 1.0), 1.0, None)
        .map_err(|e| e.to_string())?;
    let dual = DualComposite::new(&p).map_err(|e| e.to_string())?;
    let mut apcg = Apcg::new(&dual, ApcgMode::StronglyConvex).map_err(|e| e.to_string())?;
    let mut adfs = Adfs::new(&p).map_err(|e| e.to_string())?;
    let (mut r1, mut r2) = (DrawStream::new(11), DrawStream::new(11));
    let mut worst: f64 = 0.0;
    for _ in 0..300 {
        apcg.step(&mut r1).map_err(|e| e.to_string())?;
        adfs.step(&mut r2).map_err(|e| e.to_string())?;
        let x = dual.to_nodes(&apcg.state().x).map_err(|e| e.to_string())?;
        worst = worst.max(max_diff(x.as_slice(), adfs.x().as_slice()));
    }
    let rho = p.rho().map_err(|e| e.to_string())?;
    let params = p.smooth().map_err(|e| e.to_string())?;
    let base = 3.0 + (3.0 * params.condition.kappa_s).sqrt();
    let inv = 1.0 / rho;
    let in_range = inv >= base * (1.0 - 1e-12) && inv <= 2f64.sqrt() * base * (1.0 + 1e-9);
    Ok((
        worst <= 1e-8 && in_range,
        format!("max row difference {worst:.3e}, 1/rho = {inv:.6}"),
    ))
}

fn efficient_equivalence() -> Outcome {
    let objs = random_objectives(12, 4, 5, 3, LossKind::Logistic, 1.0);
    let g = build_topology(&TopologyKind::Grid2d { rows: 2, cols: 2 }).map_err(|e| e.to_string())?;
    let p = build_augmented(g, objs, 3.0, None).map_err(|e| e.to_string())?;
    let mut a = Adfs::new(&p).map_err(|e| e.to_string())?;
    let mut b = AdfsEfficient::new(&p).map_err(|e| e.to_string())?;
    let (mut ra, mut rb) = (DrawStream::new(3), DrawStream::new(3));
    let (mut worst, mut touched): (f64, usize) = (0.0, 0);
    for _ in 0..500 {
        a.step(&mut ra).map_err(|e| e.to_string())?;
        if let BlockDraw::Computation(_) = b.step(&mut rb).map_err(|e| e.to_string())? {
            touched = touched.max(b.touched_rows().len());
        }
        let (xa, xb) = (a.x(), b.x());
        let scale = 1.0 + xa.frobenius_norm();
        worst = worst.max(max_diff(xa.as_slice(), xb.as_slice()) / scale);
    }
    Ok((
        worst <= 1e-6 && touched <= 2 * p.n(),
        format!("relative deviation {worst:.3e}, at most {touched} rows per computation block"),
    ))
}

fn rate_branches_meet() -> Outcome {
    let objs = random_objectives(21, 9, 6, 3, LossKind::Logistic, 0.5);
    let g = build_topology(&TopologyKind::Grid2d { rows: 3, cols: 3 }).map_err(|e| e.to_string())?;
    let p = build_augmented(g, objs, 5.0, None).map_err(|e| e.to_string())?;
    let p_star = p.optimal_p_comm().map_err(|e| e.to_string())?.ok_or("no communication")?;
    let rate = rate_rho(&p, p_star).map_err(|e| e.to_string())?;
    let comm = rate.rho_comm.ok_or("no communication branch")?;
    let gap = (comm - rate.rho_comp).abs() / rate.rho_comp;
    Ok((gap <= 1e-10, format!("relative gap {gap:.3e} at p* = {p_star:.6}")))
}

fn condition_inequality() -> Outcome {
    let mut checked = 0;
    for (k, &corr) in [0.0, 0.5, 0.9].iter().enumerate() {
        for loss in [LossKind::Logistic, LossKind::Squared] {
            let spec = SynthSpec::new(4, corr);
            let rows = synth_dataset(3, 12, &spec, loss, 60 + k as u64);
            let objs = node_objectives(&rows, &[0.1; 3], loss).map_err(|e| e.to_string())?;
            let rep = condition_numbers(&objs).map_err(|e| e.to_string())?;
            for (i, (&ks, &kb)) in rep.kappa_i.iter().zip(&rep.kappa_b).enumerate() {
                let m = objs[i].m() as f64;
                let ok = ks >= kb * (1.0 - 1e-12) && (m + 1.0) * kb >= ks * (1.0 - 1e-12);
                if !ok {
                    return Ok((false, format!("node {i}: kappa_s = {ks}, kappa_b = {kb}")));
                }
                checked += 1;
            }
        }
    }
    Ok((true, format!("{checked} nodes")))
}

fn libsvm_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let samples: Vec<SparseSample> = (0..1000)
        .map(|_| {
            let mut features = Vec::new();
            let mut k = 0;
            for _ in 0..rng.random_range(0..8) {
                k += rng.random_range(1..20);
                let v = f64::from_bits(rng.random::<u64>() >> 2) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                features.push((k - 1, v));
            }
            SparseSample {
                label: if rng.random_bool(0.5) { 1.0 } else { -1.0 },
                features,
            }
        })
        .collect();
    let back = parse_libsvm_str(&write_libsvm(&samples)).map_err(|e| e.to_string())?;
    let exact = back.samples.len() == samples.len()
        && back.samples.iter().zip(&samples).all(|(a, b)| {
            a.label.to_bits() == b.label.to_bits()
                && a.features.len() == b.features.len()
                && a.features.iter().zip(&b.features).all(|(x, y)| x.0 == y.0 && x.1.to_bits() == y.1.to_bits())
        });
    Ok((exact, "1000 samples".into()))
}

fn point_saga_reference() -> Outcome {
    let objs = random_objectives(33, 2, 15, 3, LossKind::Logistic, 0.5);
    let flat = Flat::from_objectives(&objs).map_err(|e| e.to_string())?;
    let (theta, _) = reference_optimum(&flat, 1e-12).map_err(|e| e.to_string())?;
    let rec = point_saga(&flat, &RunOptions::new(20_000, 4, 20_000)).map_err(|e| e.to_string())?;
    let err = max_diff(&rec.theta, &theta);
    Ok((err <= 1e-6, format!("distance to reference {err:.3e}")))
}

/// Runs every check in a fixed order.
pub fn run_suite() -> Vec<CheckResult> {
    let checks: [(&'static str, fn() -> Outcome); 10] = [
        ("spectral_bound", spectral_bound),
        ("projector_identity", projector_identity),
        ("operator_shortcuts", operator_shortcuts),
        ("apcg_lasso", apcg_lasso),
        ("single_node_reduction", single_node_reduction),
        ("efficient_equivalence", efficient_equivalence),
        ("rate_branches_meet", rate_branches_meet),
        ("condition_inequality", condition_inequality),
        ("libsvm_round_trip", libsvm_round_trip),
        ("point_saga_reference", point_saga_reference),
    ];
    checks
        .iter()
        .map(|&(name, f)| match f() {
            Ok((passed, detail)) => CheckResult { name, passed, detail },
            Err(e) => CheckResult {
                name,
                passed: false,
                detail: format!("error: {e}"),
            },
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_graphs_are_connected_and_deterministic() {
        for s in 0..10 {
            let g = random_graph(s, 6);
            assert_eq!(g.edges(), random_graph(s, 6).edges());
            assert!(g.spectrum().unwrap().gamma.unwrap() > 0.0);
        }
    }

    #[test]
    fn suite_is_green_and_repeatable() {
        let a = run_suite();
        for r in &a {
            assert!(r.passed, "{r}");
        }
        assert_eq!(a, run_suite());
    }
}
