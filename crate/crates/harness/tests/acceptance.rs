//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Dense reference quantities are rebuilt here from the raw
//! data with nalgebra rather than taken from the library.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use adfs_core::adfs::{
    run_adfs, run_adfs_efficient, Adfs, AdfsEfficient, DualComposite, NsAdfsEfficient, RunOptions,
};
use adfs_core::apcg::{run_apcg, run_apcg_efficient, Apcg, ApcgMode, ApcgState, BlockSampler};
use adfs_core::augmented::{apply_comm_step, build_augmented, build_augmented_ns, rate_rho, BlockDraw, Regime};
use adfs_core::baselines::ns_reference;
use adfs_core::linalg::Mat;
use adfs_core::objective::{condition_numbers, LocalObjective, LossKind, Sample};
use adfs_core::rng::DrawStream;
use adfs_core::topology::{build_topology, CommunicationGraph, TopologyKind};
use adfs_core::{Flat, Objective, Problem, Quadratic};
use adfs_harness::config::ExperimentConfig;
use adfs_harness::experiment::{build_instance, run_experiment, time_to_target};
use adfs_harness::libsvm::{parse_libsvm_str, write_libsvm, SparseSample};
use adfs_harness::synth::{synth_dataset, SynthSpec};
use adfs_harness::validate::run_suite;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<(bool, String), String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------------------
// Dense linear algebra helpers.

fn eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let mut e: Vec<f64> = sym.symmetric_eigen().eigenvalues.iter().copied().collect();
    e.sort_by(f64::total_cmp);
    e
}

fn lambda_max(m: &DMatrix<f64>) -> f64 {
    *eigenvalues(m).last().unwrap()
}

fn lambda_min_pos(m: &DMatrix<f64>) -> f64 {
    let e = eigenvalues(m);
    let top = e.last().unwrap().abs().max(f64::MIN_POSITIVE);
    e.into_iter().find(|&x| x > 1e-9 * top).expect("nonzero matrix")
}

fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().pseudo_inverse(1e-10).expect("valid tolerance")
}

fn to_dvec(m: &Mat<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Instances.

fn random_objectives(rng: &mut ChaCha8Rng, n: usize, m: usize, d: usize, loss: LossKind, sigma: &[f64]) -> Vec<Objective> {
    (0..n)
        .map(|i| {
            let samples = (0..m)
                .map(|_| {
                    let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let y = match loss {
                        LossKind::Logistic => {
                            if rng.random_bool(0.5) {
                                1.0
                            } else {
                                -1.0
                            }
                        }
                        _ => rng.random_range(-1.0..1.0),
                    };
                    Sample::new(x, y).unwrap()
                })
                .collect();
            LocalObjective::new(samples, sigma[i], loss).unwrap()
        })
        .collect()
}

fn random_connected_graph(rng: &mut ChaCha8Rng, n: usize) -> CommunicationGraph<f64> {
    let mut edges: Vec<(usize, usize)> = (1..n).map(|k| (rng.random_range(0..k), k)).collect();
    for a in 0..n {
        for b in a + 1..n {
            if !edges.contains(&(a, b)) && rng.random_bool(0.25) {
                edges.push((a, b));
            }
        }
    }
    CommunicationGraph::with_unit_weights(n, edges).unwrap()
}

/// Twenty smooth instances with `n ≤ 6`, `m ≤ 4`, `d ≤ 3` and heterogeneous σ.
fn spectral_instances() -> Vec<Problem> {
    (0..20)
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(500 + s);
            let n = rng.random_range(2..=6);
            let m = rng.random_range(1..=4);
            let d = rng.random_range(1..=3);
            let sigma: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..3.0)).collect();
            let g = random_connected_graph(&mut rng, n);
            let objs = random_objectives(&mut rng, n, m, d, LossKind::Logistic, &sigma);
            build_augmented(g, objs, 3.0, None).unwrap()
        })
        .collect()
}

fn laplacian(p: &Problem) -> DMatrix<f64> {
    let n = p.n();
    let mut l = DMatrix::zeros(n, n);
    for (&(a, b), &w) in p.graph.edges().iter().zip(p.graph.weights()) {
        let w2 = w * w;
        l[(a, a)] += w2;
        l[(b, b)] += w2;
        l[(a, b)] -= w2;
        l[(b, a)] -= w2;
    }
    l
}

/// Node-by-edge incidence with columns `μ_kl (e_k − e_l)`.
fn incidence(p: &Problem) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(p.n(), p.graph.num_edges());
    for (e, (&(k, l), &w)) in p.graph.edges().iter().zip(p.graph.weights()).enumerate() {
        b[(k, e)] = w;
        b[(l, e)] = -w;
    }
    b
}

fn outer(x: &[f64]) -> DMatrix<f64> {
    let v = DVector::from_column_slice(x);
    &v * v.transpose()
}

fn logistic_smoothness(s: &Sample<f64>) -> f64 {
    s.squared_norm() / 4.0
}

/// `σ_i + 2 λ_max(Σ_j L_ij P_ij)` for the logistic loss.
fn d_tilde(p: &Problem) -> Vec<f64> {
    (0..p.n())
        .map(|i| {
            let f = &p.objectives[i];
            let mut m = DMatrix::zeros(p.d, p.d);
            for s in f.samples() {
                m += outer(s.features()) * 0.25;
            }
            f.sigma() + 2.0 * lambda_max(&m)
        })
        .collect()
}

/// `α = 2 λ_min⁺(D̃^{-1/2} L D̃^{-1/2})`.
fn alpha_oracle(p: &Problem) -> f64 {
    let dt = d_tilde(p);
    let l = laplacian(p);
    let s = DMatrix::from_diagonal(&DVector::from_iterator(p.n(), dt.iter().map(|x| 1.0 / x.sqrt())));
    2.0 * lambda_min_pos(&(&s * l * &s))
}

/// Constraint matrix `A` (rows: augmented nodes × d, columns: edges × d) with
/// the given virtual-edge weights, plus the column offset of each virtual edge.
struct Dense {
    a: DMatrix<f64>,
    /// `Σ†`, with zero blocks on virtual rows when `smooth` is false.
    sigma_dagger: DMatrix<f64>,
    vcol: BTreeMap<(usize, usize), usize>,
    comm_cols: usize,
}

fn dense_oracle(p: &Problem, mu: &dyn Fn(usize, usize) -> f64, smooth: bool) -> Dense {
    let d = p.d;
    let e = p.graph.num_edges();
    let nv = p.layout.num_virtual();
    let rows = p.rows() * d;
    let mut a = DMatrix::zeros(rows, (e + nv) * d);
    for (k, (&(u, w), &mu_e)) in p.graph.edges().iter().zip(p.graph.weights()).enumerate() {
        for c in 0..d {
            a[(u * d + c, k * d + c)] = mu_e;
            a[(w * d + c, k * d + c)] = -mu_e;
        }
    }
    let mut sd = DMatrix::zeros(rows, rows);
    for i in 0..p.n() {
        for c in 0..d {
            sd[(i * d + c, i * d + c)] = 1.0 / p.objectives[i].sigma();
        }
    }
    let mut vcol = BTreeMap::new();
    let mut next = e * d;
    for i in 0..p.n() {
        for j in 0..p.objectives[i].m() {
            let s = &p.objectives[i].samples()[j];
            let proj = outer(s.features()) / s.squared_norm();
            let r = p.layout.virtual_row(i, j);
            let w = mu(i, j);
            for x in 0..d {
                for y in 0..d {
                    a[(i * d + x, next + y)] = w * proj[(x, y)];
                    a[(r * d + x, next + y)] = -w * proj[(x, y)];
                    if smooth {
                        sd[(r * d + x, r * d + y)] = proj[(x, y)] / logistic_smoothness(s);
                    }
                }
            }
            vcol.insert((i, j), next);
            next += d;
        }
    }
    Dense {
        a,
        sigma_dagger: sd,
        vcol,
        comm_cols: e * d,
    }
}

fn smooth_oracle(p: &Problem) -> (Dense, f64) {
    let alpha = if p.n() == 1 { 1.0 } else { alpha_oracle(p) };
    let mu = move |i: usize, j: usize| (alpha * logistic_smoothness(&p.objectives[i].samples()[j])).sqrt();
    (dense_oracle(p, &mu, true), alpha)
}

/// Diagonal of `P_b†` over edge coordinates.
fn block_diag(p: &Problem, o: &Dense, draw: &BlockDraw) -> DVector<f64> {
    let mut diag = DVector::zeros(o.a.ncols());
    match draw {
        BlockDraw::Communication => {
            for k in 0..o.comm_cols {
                diag[k] = 1.0 / p.sampling.p_comm();
            }
        }
        BlockDraw::Computation(chosen) => {
            for (i, &j) in chosen.iter().enumerate() {
                let col = o.vcol[&(i, j)];
                for c in 0..p.d {
                    diag[col + c] = 1.0 / p.sampling.p_virtual(i, j);
                }
            }
        }
    }
    diag
}

// ---------------------------------------------------------------------------
// Criteria.

fn c1_spectral_bound() -> Outcome {
    let start = Instant::now();
    let (mut worst_alpha, mut worst_comm, mut worst_mu) = (f64::INFINITY, f64::INFINITY, 0.0f64);
    for p in spectral_instances() {
        let (o, alpha) = smooth_oracle(&p);
        for (i, row) in p.mu_virtual.iter().enumerate() {
            for (j, &mu) in row.iter().enumerate() {
                let want = (alpha * logistic_smoothness(&p.objectives[i].samples()[j])).sqrt();
                worst_mu = worst_mu.max((mu - want).abs() / want);
            }
        }
        let hess = o.a.transpose() * &o.sigma_dagger * &o.a;
        let sigma_a = lambda_min_pos(&hess);
        let inc = incidence(&p);
        let dinv = DMatrix::from_diagonal(&DVector::from_iterator(p.n(), d_tilde(&p).iter().map(|x| 1.0 / x)));
        let comm = lambda_min_pos(&(inc.transpose() * dinv * &inc));
        worst_alpha = worst_alpha.min(sigma_a - alpha / 2.0);
        worst_comm = worst_comm.min(sigma_a - comm);
    }
    let elapsed = start.elapsed();
    Ok((
        worst_alpha >= -1e-8 && worst_comm >= -1e-8 && worst_mu <= 1e-10 && elapsed < Duration::from_secs(10),
        format!(
            "min(sigma_A - alpha/2) = {worst_alpha:.3e}, min(sigma_A - comm bound) = {worst_comm:.3e}, \
             virtual weights within {worst_mu:.1e}, {:.2}s",
            elapsed.as_secs_f64()
        ),
    ))
}

fn c2_projector_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for p in spectral_instances() {
        let (o, _) = smooth_oracle(&p);
        let proj = pinv(&o.a) * &o.a;
        for (&(i, j), &col) in &o.vcol {
            let x = p.objectives[i].samples()[j].features();
            let c = rng.random_range(-2.0..2.0);
            let mut e = DVector::zeros(o.a.ncols());
            for k in 0..p.d {
                e[col + k] = c * x[k];
            }
            worst = worst.max((&proj * &e - &e).norm());
            count += 1;
        }
    }
    Ok((worst <= 1e-8, format!("{count} virtual edges, max deviation {worst:.3e}")))
}

fn c3_operator_shortcuts() -> Outcome {
    let problems = spectral_instances();
    let oracles: Vec<(Dense, DMatrix<f64>)> = problems
        .iter()
        .map(|p| {
            let (o, _) = smooth_oracle(p);
            let ap = pinv(&o.a);
            (o, ap)
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst_w, mut worst_t): (f64, f64) = (0.0, 0.0);
    for k in 0..50 {
        let idx = k % problems.len();
        let p = &problems[idx];
        let (o, a_pinv) = &oracles[idx];
        let draw = if k % 2 == 0 {
            BlockDraw::Communication
        } else {
            BlockDraw::Computation((0..p.n()).map(|i| rng.random_range(0..p.layout.m(i))).collect())
        };
        let diag = block_diag(p, o, &draw);
        let pb = DMatrix::from_diagonal(&diag);
        let y = Mat::from_fn(p.rows(), p.d, |_, _| rng.random_range(-1.0..1.0));
        let want = &o.a * &pb * o.a.transpose() * &o.sigma_dagger * to_dvec(&y);
        let got = match &draw {
            BlockDraw::Communication => apply_comm_step(p, &y),
            BlockDraw::Computation(_) => p.apply_wb_sigma_dagger(&draw, &y),
        };
        worst_w = worst_w.max(max_abs_diff(got.as_slice(), want.as_slice()));

        // Increments produced by a step lie in the span of the block's columns.
        let lambda = DVector::from_iterator(diag.len(), diag.iter().map(|&w| if w > 0.0 { rng.random_range(-1.0..1.0) } else { 0.0 }));
        let delta = &o.a * lambda;
        let delta_m = Mat::from_vec(p.rows(), p.d, delta.as_slice().to_vec()).map_err(err)?;
        let want = &o.a * &pb * a_pinv * &delta;
        let got = p.apply_wtilde(&draw, &delta_m);
        worst_t = worst_t.max(max_abs_diff(got.as_slice(), want.as_slice()));
    }
    Ok((
        worst_w <= 1e-8 && worst_t <= 1e-8,
        format!("50 pairs, W_b Sigma^+ deviation {worst_w:.3e}, W~ deviation {worst_t:.3e}"),
    ))
}

/// `F(x) = ½(x − c)ᵀH(x − c) + Σ λ_k |x_k|`.
fn composite_value(h: &DMatrix<f64>, c: &[f64], l1: &[f64], x: &[f64]) -> f64 {
    let diff = DVector::from_iterator(c.len(), x.iter().zip(c).map(|(a, b)| a - b));
    0.5 * diff.dot(&(h * &diff)) + x.iter().zip(l1).map(|(v, w)| w * v.abs()).sum::<f64>()
}

fn proximal_gradient(h: &DMatrix<f64>, c: &[f64], l1: &[f64], iters: usize) -> Vec<f64> {
    let step = 1.0 / lambda_max(h);
    let cv = DVector::from_column_slice(c);
    let mut x = DVector::zeros(c.len());
    for _ in 0..iters {
        let g = h * (&x - &cv);
        for k in 0..c.len() {
            let z = x[k] - step * g[k];
            x[k] = z.signum() * (z.abs() - step * l1[k]).max(0.0);
        }
    }
    x.as_slice().to_vec()
}

fn to_mat(h: &DMatrix<f64>) -> Mat<f64> {
    Mat::from_fn(h.nrows(), h.ncols(), |r, c| h[(r, c)])
}

fn lyapunov(state: &ApcgState<f64>, proj: &DMatrix<f64>, theta: &[f64], f: &dyn Fn(&[f64]) -> f64, f_star: f64) -> f64 {
    let diff = DVector::from_iterator(theta.len(), state.v.iter().zip(theta).map(|(a, b)| a - b));
    let pd = proj * diff;
    state.b_big * pd.norm_squared() + 2.0 * state.a_big * (f(&state.x) - f_star)
}

/// Past `A_t ≥ 10⁸ A_0` the objective gap sits below rounding level relative
/// to `V_0`, so `2 A_t (F − F*)` no longer measures the iterate.
fn evaluable(s: &ApcgState<f64>, s0: &ApcgState<f64>) -> bool {
    s.a_big <= 1e8 * s0.a_big.max(1.0)
}

fn c4_apcg() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let dim = 4;
    let b = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
    let h = &b * b.transpose() + DMatrix::identity(dim, dim) * 0.5;
    let c: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    let l1: Vec<f64> = (0..dim).map(|_| rng.random_range(0.05..0.6)).collect();

    // (a) lasso against proximal gradient.
    let theta = proximal_gradient(&h, &c, &l1, 100_000);
    let q = Quadratic::new(to_mat(&h), c.clone(), l1.clone(), BlockSampler::uniform_singletons(dim)).map_err(err)?;
    let states = run_apcg(&q, ApcgMode::StronglyConvex, 6000, 40).map_err(err)?;
    let err_a = max_abs_diff(&states.last().unwrap().x, &theta);

    // (b) Lyapunov bound: pointwise under the full block, in mean under
    // random single-coordinate sampling.
    let f_star = composite_value(&h, &c, &l1, &theta);
    let f = |x: &[f64]| composite_value(&h, &c, &l1, x);
    let ident = DMatrix::identity(dim, dim);
    let mut worst_det = f64::NEG_INFINITY;
    let full = Quadratic::new(to_mat(&h), c.clone(), l1.clone(), BlockSampler::full(dim)).map_err(err)?;
    for mode in [ApcgMode::StronglyConvex, ApcgMode::Convex] {
        let states = run_apcg(&full, mode, 300, 0).map_err(err)?;
        let v0 = lyapunov(&states[0], &ident, &theta, &f, f_star);
        for s in states.iter().filter(|s| evaluable(s, &states[0])) {
            worst_det = worst_det.max(lyapunov(s, &ident, &theta, &f, f_star) / v0);
        }
    }
    // Rank-deficient smooth part: strong convexity only on the range of H.
    let bl = DMatrix::from_fn(dim, 2, |_, _| rng.random_range(-1.0..1.0));
    let hl = &bl * bl.transpose();
    let proj_l = &hl * pinv(&hl);
    let cl: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let zeros = vec![0.0; dim];
    let fl = |x: &[f64]| composite_value(&hl, &cl, &zeros, x);
    let checkpoints = [5usize, 20, 50, 100, 200];
    let mut worst_mc = f64::NEG_INFINITY;
    let mut mc_points = 0;
    let cases: Vec<(DMatrix<f64>, Vec<f64>, Vec<f64>, Vec<f64>, f64)> = vec![
        (h.clone(), c.clone(), l1.clone(), theta.clone(), f_star),
        (hl.clone(), cl.clone(), zeros.clone(), cl.clone(), 0.0),
    ];
    for (case, (hh, cc, ll, th, fs)) in cases.iter().enumerate() {
        let proj = if case == 0 { ident.clone() } else { proj_l.clone() };
        let fv = |x: &[f64]| if case == 0 { f(x) } else { fl(x) };
        let qd = Quadratic::new(to_mat(hh), cc.clone(), ll.clone(), BlockSampler::full(dim)).map_err(err)?;
        let states = run_apcg(&qd, ApcgMode::StronglyConvex, 200, 0).map_err(err)?;
        let v0 = lyapunov(&states[0], &proj, th, &fv, *fs);
        for s in states.iter().filter(|s| evaluable(s, &states[0])) {
            worst_det = worst_det.max(lyapunov(s, &proj, th, &fv, *fs) / v0);
        }
        let qr = Quadratic::new(to_mat(hh), cc.clone(), ll.clone(), BlockSampler::uniform_singletons(dim)).map_err(err)?;
        for mode in [ApcgMode::StronglyConvex, ApcgMode::Convex] {
            let mut sums = vec![0.0; checkpoints.len()];
            let mut v0 = 0.0;
            let mut live = vec![false; checkpoints.len()];
            for seed in 0..200 {
                let states = run_apcg(&qr, mode, 200, seed).map_err(err)?;
                v0 = lyapunov(&states[0], &proj, th, &fv, *fs);
                for (k, &t) in checkpoints.iter().enumerate() {
                    live[k] = evaluable(&states[t], &states[0]);
                    sums[k] += lyapunov(&states[t], &proj, th, &fv, *fs) / 200.0;
                }
            }
            for (s, live) in sums.into_iter().zip(live) {
                if live {
                    worst_mc = worst_mc.max(s / v0);
                    mc_points += 1;
                }
            }
        }
    }

    // (c) sparse-update forms against the direct iteration.
    let mut worst_c: f64 = 0.0;
    for mode in [ApcgMode::StronglyConvex, ApcgMode::Convex] {
        for (qq, seed) in [(&q, 7u64), (&full, 8)] {
            let naive = run_apcg(qq, mode, 500, seed).map_err(err)?;
            let fast = run_apcg_efficient(qq, mode, 500, seed).map_err(err)?;
            for (s, x) in naive.iter().zip(&fast) {
                let scale = 1.0 + s.x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                worst_c = worst_c.max(max_abs_diff(&s.x, x) / scale);
            }
        }
    }
    let elapsed = start.elapsed();
    Ok((
        err_a <= 1e-8
            && worst_det <= 1.0 + 1e-9
            && worst_mc <= 1.1
            && worst_c <= 1e-6
            && elapsed < Duration::from_secs(60),
        format!(
            "(a) {err_a:.3e} from proximal gradient; (b) max V_t/V_0 = {worst_det:.6} deterministic, \
             {worst_mc:.4} mean over 200 seeds at {mc_points} checkpoints; (c) max deviation {worst_c:.3e}; {:.2}s",
            elapsed.as_secs_f64()
        ),
    ))
}

fn c5_single_node() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m = 5;
    let sigma = 0.7;
    let objs = random_objectives(&mut rng, 1, m, 3, LossKind::Logistic, &[sigma]);
    let g = CommunicationGraph::with_unit_weights(1, vec![]).map_err(err)?;
    let p = build_augmented(g, objs, 1.0, None).map_err(err)?;
    let dual = DualComposite::new(&p).map_err(err)?;
    let mut apcg = Apcg::new(&dual, ApcgMode::StronglyConvex).map_err(err)?;
    let mut adfs = Adfs::new(&p).map_err(err)?;
    let (mut r1, mut r2) = (DrawStream::new(55), DrawStream::new(55));
    let mut worst: f64 = 0.0;
    for _ in 0..300 {
        apcg.step(&mut r1).map_err(err)?;
        adfs.step(&mut r2).map_err(err)?;
        let x = dual.to_nodes(&apcg.state().x).map_err(err)?;
        worst = worst.max(max_abs_diff(x.as_slice(), adfs.x().as_slice()));
    }
    let kappa_s = 1.0 + p.objectives[0].samples().iter().map(logistic_smoothness).sum::<f64>() / sigma;
    let base = m as f64 + (m as f64 * kappa_s).sqrt();
    let inv = 1.0 / p.rho().map_err(err)?;
    let in_range = inv >= base && inv <= 2f64.sqrt() * base * (1.0 + 1e-9);
    Ok((
        worst <= 1e-8 && in_range,
        format!(
            "max row difference {worst:.3e} over 300 steps; 1/rho = {inv:.6} in [{base:.6}, {:.6}]",
            2f64.sqrt() * base
        ),
    ))
}

fn logistic(z: f64, y: f64) -> f64 {
    let u = -y * z;
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

fn logistic_prime(z: f64, y: f64) -> f64 {
    -y / (1.0 + (y * z).exp())
}

/// Newton's method on the pooled logistic objective.
fn logistic_optimum(objs: &[Objective]) -> (Vec<f64>, f64) {
    let d = objs[0].dim();
    let sigma: f64 = objs.iter().map(|f| f.sigma()).sum();
    let samples: Vec<&Sample<f64>> = objs.iter().flat_map(|f| f.samples()).collect();
    let value = |t: &DVector<f64>| {
        samples.iter().map(|s| logistic(DVector::from_column_slice(s.features()).dot(t), s.label())).sum::<f64>()
            + 0.5 * sigma * t.norm_squared()
    };
    let mut theta = DVector::zeros(d);
    for _ in 0..50 {
        let mut g = &theta * sigma;
        let mut h = DMatrix::identity(d, d) * sigma;
        for s in &samples {
            let x = DVector::from_column_slice(s.features());
            let z = x.dot(&theta);
            g += &x * logistic_prime(z, s.label());
            let e = (s.label() * z).exp();
            h += &x * x.transpose() * (e / ((1.0 + e) * (1.0 + e)));
        }
        let step = h.cholesky().expect("positive definite").solve(&g);
        theta -= step;
    }
    let f = value(&theta);
    (theta.as_slice().to_vec(), f)
}

fn c6_linear_rate() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (n, m, d) = (4, 10, 5);
    let objs = random_objectives(&mut rng, n, m, d, LossKind::Logistic, &[1.0; 4]);
    let (theta, f_star) = logistic_optimum(&objs);
    let g = build_topology(&TopologyKind::Grid2d { rows: 2, cols: 2 }).map_err(err)?;
    let p = build_augmented(g, objs, 1.0, None).map_err(err)?;
    let (o, alpha) = smooth_oracle(&p);

    // x* = [σ_i θ*; ∇f_ij(θ*)].
    let mut x_star = p.zero_state();
    for i in 0..n {
        let s = p.objectives[i].sigma();
        for (c, t) in theta.iter().enumerate() {
            x_star[(i, c)] = s * t;
        }
        for (j, smp) in p.objectives[i].samples().iter().enumerate() {
            let z: f64 = smp.features().iter().zip(&theta).map(|(a, b)| a * b).sum();
            let gprime = logistic_prime(z, smp.label());
            let r = p.layout.virtual_row(i, j);
            for (c, x) in smp.features().iter().enumerate() {
                x_star[(r, c)] = gprime * x;
            }
        }
    }
    let xs = to_dvec(&x_star);
    let a_pinv = pinv(&o.a);
    let sd2 = &o.sigma_dagger * &o.sigma_dagger;
    let lmax = lambda_max(&(o.a.transpose() * sd2 * &o.a));
    let sigma_a = alpha / 2.0;
    // The logistic conjugate vanishes at 0, so F*_A(0) = 0.
    let c0 = lmax * ((&a_pinv * &xs).norm_squared() + 2.0 * f_star / sigma_a);
    let rho = p.rho().map_err(err)?;
    let k = ((c0 / 1e-6).ln() / rho).ceil() as u64;
    let checkpoints = [k / 4, k / 2, k];
    let mut errors: Vec<Vec<f64>> = vec![Vec::new(); 3];
    let mut center_errors: Vec<Vec<f64>> = vec![Vec::new(); 3];
    for seed in 0..20 {
        let mut solver = AdfsEfficient::new(&p).map_err(err)?;
        let mut r = DrawStream::new(seed);
        for t in 1..=k {
            solver.step(&mut r).map_err(err)?;
            if let Some(idx) = checkpoints.iter().position(|&c| c == t) {
                let diff = to_dvec(&solver.v()) - &xs;
                let e = &o.sigma_dagger * diff;
                errors[idx].push(e.norm_squared());
                center_errors[idx].push(e.rows(0, n * d).norm_squared());
            }
        }
    }
    let mut ok = true;
    let mut parts = Vec::new();
    for (idx, &t) in checkpoints.iter().enumerate() {
        let bound = c0 * (1.0 - rho).powf(t as f64);
        let med = median(errors[idx].clone());
        ok &= med < bound;
        parts.push(format!(
            "t={t}: {med:.3e} < {bound:.3e} (centers {:.3e})",
            median(center_errors[idx].clone())
        ));
    }
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(300);
    Ok((
        ok,
        format!("C0 = {c0:.4e}, rho = {rho:.4e}, K = {k}; {}; {:.2}s", parts.join(", "), elapsed.as_secs_f64()),
    ))
}

fn c7_efficient_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let objs = random_objectives(&mut rng, 6, 6, 3, LossKind::Logistic, &[1.0, 0.5, 2.0, 1.0, 0.8, 1.5]);
    let g = build_topology(&TopologyKind::Grid2d { rows: 2, cols: 3 }).map_err(err)?;
    let p = build_augmented(g, objs, 2.0, None).map_err(err)?;
    let opts = RunOptions::new(500, 17, 1);
    let ra = run_adfs(&p, &opts).map_err(err)?;
    let rb = run_adfs_efficient(&p, &opts).map_err(err)?;
    let mut worst_obj: f64 = 0.0;
    for (a, b) in ra.rows.iter().zip(&rb.rows) {
        worst_obj = worst_obj.max((a.objective - b.objective).abs() / (1.0 + a.objective.abs()));
        if a.time != b.time {
            return Ok((false, format!("time differs at t = {}", a.t)));
        }
    }
    let mut a = Adfs::new(&p).map_err(err)?;
    let mut b = AdfsEfficient::new(&p).map_err(err)?;
    let (mut r1, mut r2) = (DrawStream::new(17), DrawStream::new(17));
    let (mut worst_x, mut most_rows): (f64, usize) = (0.0, 0);
    for _ in 0..500 {
        let (u0, z0) = {
            let (u, z) = b.storage();
            (u.clone(), z.clone())
        };
        a.step(&mut r1).map_err(err)?;
        let draw = b.step(&mut r2).map_err(err)?;
        if let BlockDraw::Computation(_) = draw {
            let (u, z) = b.storage();
            let changed = (0..p.rows()).filter(|&r| u.row(r) != u0.row(r) || z.row(r) != z0.row(r)).count();
            most_rows = most_rows.max(changed);
        }
        let scale = 1.0 + a.x().max_abs();
        worst_x = worst_x.max(max_abs_diff(a.x().as_slice(), b.x().as_slice()) / scale);
    }
    Ok((
        worst_obj <= 1e-6 && worst_x <= 1e-6 && most_rows <= 2 * p.n() && ra.rows.len() == 501,
        format!(
            "objective deviation {worst_obj:.3e}, state deviation {worst_x:.3e}, \
             at most {most_rows} stored rows written per computation block (n = {})",
            p.n()
        ),
    ))
}

/// `p*` and both rate branches rebuilt from raw spectra.
fn rate_oracle(p: &Problem) -> (f64, f64, f64) {
    let inc = incidence(p);
    let l_edges = inc.transpose() * &inc;
    let sigma_inv = DMatrix::from_diagonal(&DVector::from_iterator(p.n(), p.objectives.iter().map(|f| 1.0 / f.sigma())));
    let dinv = DMatrix::from_diagonal(&DVector::from_iterator(p.n(), d_tilde(p).iter().map(|x| 1.0 / x)));
    let top = lambda_max(&(inc.transpose() * sigma_inv * &inc)) / lambda_max(&l_edges);
    let bottom = lambda_min_pos(&(inc.transpose() * dinv * &inc)) / lambda_min_pos(&l_edges);
    let kappa_comm = top / bottom;
    let lap = laplacian(p);
    let gamma = lambda_min_pos(&lap) / lambda_max(&lap);
    let m = p.layout.m_max() as f64;
    let kappa_s = p
        .objectives
        .iter()
        .map(|f| 1.0 + f.samples().iter().map(logistic_smoothness).sum::<f64>() / f.sigma())
        .fold(0.0, f64::max);
    let s = m + (m * kappa_s).sqrt();
    let p_star = 1.0 / (1.0 + (2.0 * gamma / kappa_comm).sqrt() * s);
    let rho_comm = (gamma / kappa_comm).sqrt() * p_star;
    let rho_comp = (1.0 - p_star) / (2f64.sqrt() * s);
    (p_star, rho_comm, rho_comp)
}

fn c8_time_model() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let objs = random_objectives(&mut rng, 9, 4, 3, LossKind::Logistic, &[1.0; 9]);
    let g = build_topology(&TopologyKind::Grid2d { rows: 3, cols: 3 }).map_err(err)?;
    let tau = 5.0;
    let p = build_augmented(g, objs, tau, None).map_err(err)?;
    let k = 10_000u64;
    let seeds = 30;
    let mut total = 0.0;
    for seed in 0..seeds {
        let rec = run_adfs_efficient(&p, &RunOptions::new(k, seed, k)).map_err(err)?;
        total += rec.final_time;
    }
    let mean = total / seeds as f64;
    let pc = p.sampling.p_comm();
    let expected = ((1.0 - pc) + tau * pc) * k as f64;
    // One run's time is a sum of K independent increments in {1, τ}.
    let se = (k as f64 * pc * (1.0 - pc)).sqrt() * (tau - 1.0) / (seeds as f64).sqrt();
    let within = (mean - expected).abs() <= 3.0 * se;

    let (p_star, rho_comm, rho_comp) = rate_oracle(&p);
    let branch_gap = (rho_comm - rho_comp).abs() / rho_comp;
    let lib = rate_rho(&p, p_star).map_err(err)?;
    let lib_gap = (lib.rho_comm.unwrap() - lib.rho_comp).abs() / lib.rho_comp;
    let default_gap = (pc - p_star).abs() / p_star;
    Ok((
        within && branch_gap <= 1e-10 && lib_gap <= 1e-10 && default_gap <= 1e-10,
        format!(
            "mean T(K) = {mean:.2} vs {expected:.2} (3 SE = {:.2}); at p* = {p_star:.6} branch gap {branch_gap:.2e}, \
             library gap {lib_gap:.2e}, default p_comm offset {default_gap:.2e}",
            3.0 * se
        ),
    ))
}

/// `F*(x) = Σ ℓ*(c_ij) + Σ ‖x_i‖²/(2σ_i)` for the absolute loss, where
/// `ℓ*(c) = c·y` on `|c| ≤ 1`.
fn ns_dual_value(p: &Problem, x: &Mat<f64>) -> f64 {
    let mut total = 0.0;
    for i in 0..p.n() {
        total += x.row(i).iter().map(|v| v * v).sum::<f64>() / (2.0 * p.objectives[i].sigma());
        for (j, s) in p.objectives[i].samples().iter().enumerate() {
            let row = x.row(p.layout.virtual_row(i, j));
            let c: f64 = row.iter().zip(s.features()).map(|(a, b)| a * b).sum::<f64>() / s.squared_norm();
            let off_span: f64 = row.iter().zip(s.features()).map(|(a, b)| (a - c * b).abs()).fold(0.0, f64::max);
            if c.abs() > 1.0 + 1e-9 || off_span > 1e-8 * (1.0 + c.abs()) {
                return f64::INFINITY;
            }
            total += c.clamp(-1.0, 1.0) * s.label();
        }
    }
    total
}

fn absolute_primal(objs: &[Objective], theta: &[f64]) -> f64 {
    objs.iter()
        .map(|f| {
            f.samples()
                .iter()
                .map(|s| (s.features().iter().zip(theta).map(|(a, b)| a * b).sum::<f64>() - s.label()).abs())
                .sum::<f64>()
                + 0.5 * f.sigma() * theta.iter().map(|t| t * t).sum::<f64>()
        })
        .sum()
}

/// Dual optimum, certified by a primal point with matching value.
fn ns_optimum(p: &Problem) -> Result<(f64, Mat<f64>, f64), String> {
    let flat = Flat::from_objectives(&p.objectives).map_err(err)?;
    let r = ns_reference(&flat, 1e-13).map_err(err)?;
    let mut x = p.zero_state();
    let mut k = 0;
    for i in 0..p.n() {
        for (c, t) in r.theta.iter().enumerate() {
            x[(i, c)] = p.objectives[i].sigma() * t;
        }
        for (j, s) in p.objectives[i].samples().iter().enumerate() {
            let row = p.layout.virtual_row(i, j);
            for (c, f) in s.features().iter().enumerate() {
                x[(row, c)] = r.coefficients[k] * f;
            }
            k += 1;
        }
    }
    let dual = ns_dual_value(p, &x);
    let primal = absolute_primal(&p.objectives, &r.theta);
    Ok((dual, x, primal + dual))
}

fn c9_non_smooth_rate() -> Outcome {
    let start = Instant::now();
    // Halving ratios.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let objs = random_objectives(&mut rng, 4, 8, 3, LossKind::Absolute, &[1.0; 4]);
    let g = build_topology(&TopologyKind::Grid2d { rows: 2, cols: 2 }).map_err(err)?;
    let p = build_augmented_ns(g, objs, 1.0, None).map_err(err)?;
    let (d_star, _, gap) = ns_optimum(&p)?;
    if gap.abs() > 1e-8 {
        return Ok((false, format!("reference duality gap {gap:.3e}")));
    }
    let marks = [100u64, 200, 400, 800];
    let mut ratios: Vec<Vec<f64>> = vec![Vec::new(); 3];
    for seed in 0..10 {
        let mut s = NsAdfsEfficient::new(&p).map_err(err)?;
        let mut r = DrawStream::new(seed);
        let mut vals = Vec::new();
        for t in 1..=800 {
            s.step(&mut r).map_err(err)?;
            if marks.contains(&t) {
                vals.push(ns_dual_value(&p, &s.x()) - d_star);
            }
        }
        for k in 0..3 {
            ratios[k].push(vals[k + 1] / vals[k]);
        }
    }
    let meds: Vec<f64> = ratios.into_iter().map(median).collect();
    let halving_ok = meds.iter().all(|&r| r <= 0.35);

    // Bound with measured r_t on a tiny instance.
    let mut rng = ChaCha8Rng::seed_from_u64(90);
    let objs = random_objectives(&mut rng, 2, 2, 2, LossKind::Absolute, &[1.0; 2]);
    let g = build_topology(&TopologyKind::Line(2)).map_err(err)?;
    let p = build_augmented_ns(g, objs, 1.0, None).map_err(err)?;
    let (d_star, x_star, gap) = ns_optimum(&p)?;
    let lap = laplacian(&p);
    let lmin = lambda_min_pos(&lap);
    let mu = |i: usize, _j: usize| (lmin / (1.0 + p.objectives[i].m() as f64)).sqrt();
    let o = dense_oracle(&p, &mu, false);
    let ata_min = lambda_min_pos(&(o.a.transpose() * &o.a));
    let a_pinv = pinv(&o.a);
    let proj = &a_pinv * &o.a;
    let hess = o.a.transpose() * &o.sigma_dagger * &o.a;
    let mut s2_dense: f64 = 0.0;
    let mut blocks = vec![BlockDraw::Communication];
    for j0 in 0..2 {
        for j1 in 0..2 {
            blocks.push(BlockDraw::Computation(vec![j0, j1]));
        }
    }
    for b in &blocks {
        let pb = DMatrix::from_diagonal(&block_diag(&p, &o, b));
        s2_dense = s2_dense.max(lambda_max(&(&proj * &pb * &hess * &pb * &proj)));
    }
    let s2 = match &p.regime {
        Regime::NonSmooth(ns) => ns.s_squared,
        Regime::Smooth(_) => unreachable!("non-smooth builder"),
    };
    let p_min = (0..2)
        .flat_map(|i| (0..2).map(move |j| (i, j)))
        .map(|(i, j)| p.sampling.p_virtual(i, j))
        .fold(f64::INFINITY, f64::min);
    let xs = to_dvec(&x_star);
    let runs = 400;
    let check = [10u64, 50, 200, 800];
    let mut mean_gap = vec![0.0; check.len()];
    let mut mean_dist = vec![0.0; check.len()];
    for seed in 0..runs {
        let mut s = NsAdfsEfficient::new(&p).map_err(err)?;
        let mut r = DrawStream::new(1000 + seed);
        for t in 1..=*check.last().unwrap() {
            s.step(&mut r).map_err(err)?;
            if let Some(k) = check.iter().position(|&c| c == t) {
                mean_gap[k] += (ns_dual_value(&p, &s.x()) - d_star) / runs as f64;
                mean_dist[k] += (to_dvec(&s.v()) - &xs).norm_squared() / runs as f64;
            }
        }
    }
    let dist0 = xs.norm_squared();
    let f0 = -d_star;
    let mut bound_ok = gap.abs() <= 1e-8 && s2 >= s2_dense * (1.0 - 1e-9);
    let mut parts = Vec::new();
    for (k, &t) in check.iter().enumerate() {
        let r2 = dist0 - mean_dist[k];
        let bound = 2.0 / (t as f64).powi(2) * (s2 / ata_min * r2 + 6.0 / (p_min * p_min) * f0);
        bound_ok &= mean_gap[k] <= bound;
        parts.push(format!("t={t}: {:.3e} <= {bound:.3e}", mean_gap[k]));
    }
    let elapsed = start.elapsed();
    Ok((
        halving_ok && bound_ok,
        format!(
            "median ratios {:.3}/{:.3}/{:.3}; bound ({} runs, S^2 = {s2:.3e} >= dense {s2_dense:.3e}): {}; {:.2}s",
            meds[0],
            meds[1],
            meds[2],
            runs,
            parts.join(", "),
            elapsed.as_secs_f64()
        ),
    ))
}

const GRID_CONFIG: &str = r#"
m = 200
loss = "logistic"
sigma = 1.0
tau = 5.0
algorithms = ["adfs_efficient", "point_saga"]
iters = 400000
target = 1e-5
seeds = [0, 1, 2, 3, 4]
data_seed = 0
log_every = 20
output = "unused.csv"

[topology]
kind = "grid2d"
rows = 4
cols = 4

[data]
kind = "synthetic"
d = 20
correlation = 0.0
"#;

fn c10_grid_comparison() -> Outcome {
    let start = Instant::now();
    let cfg = ExperimentConfig::from_toml(GRID_CONFIG, &[]).map_err(err)?;
    let out = run_experiment(&cfg).map_err(err)?;
    if !out.failures.is_empty() {
        return Ok((false, format!("{} failed cells", out.failures.len())));
    }
    let mut times: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in &out.records {
        let t = time_to_target(r, 1e-5).unwrap_or(f64::INFINITY);
        times.entry(r.meta.algorithm.clone()).or_default().push(t);
    }
    let adfs = median(times["adfs_efficient"].clone());
    let saga = median(times["point_saga"].clone());
    let elapsed = start.elapsed();
    Ok((
        adfs < saga && elapsed < Duration::from_secs(600),
        format!(
            "median time to 1e-5: ADFS {adfs:.0}, Point-SAGA {saga:.0}; {:.2}s",
            elapsed.as_secs_f64()
        ),
    ))
}

fn condition_oracle(f: &Objective) -> (f64, f64) {
    let sigma = f.sigma();
    let lg = match f.loss() {
        LossKind::Logistic => 0.25,
        LossKind::Squared => 1.0,
        LossKind::Absolute => unreachable!("smooth datasets only"),
    };
    let mut batch = DMatrix::zeros(f.dim(), f.dim());
    let mut total = 0.0;
    for s in f.samples() {
        batch += outer(s.features()) * lg;
        total += lg * s.squared_norm();
    }
    (1.0 + total / sigma, (sigma + lambda_max(&batch)) / sigma)
}

fn c11_conditions_parser_validate() -> Outcome {
    // Condition numbers on every generated dataset.
    let mut datasets: Vec<Vec<Objective>> = Vec::new();
    let cfg = ExperimentConfig::from_toml(GRID_CONFIG, &[]).map_err(err)?;
    datasets.push(build_instance(&cfg).map_err(err)?.objectives);
    for (k, &corr) in [0.0, 0.3, 0.7, 0.9, 0.99].iter().enumerate() {
        for loss in [LossKind::Logistic, LossKind::Squared] {
            let rows = synth_dataset(4, 50, &SynthSpec::new(5, corr), loss, 11 + k as u64);
            datasets.push(adfs_harness::experiment::node_objectives(&rows, &[0.5; 4], loss).map_err(err)?);
        }
    }
    let mut nodes = 0;
    let mut worst_lib: f64 = 0.0;
    for objs in &datasets {
        let lib = condition_numbers(objs).map_err(err)?;
        for (i, f) in objs.iter().enumerate() {
            let (ks, kb) = condition_oracle(f);
            let m = f.m() as f64;
            if !(ks >= kb * (1.0 - 1e-12) && (m + 1.0) * kb >= ks * (1.0 - 1e-12)) {
                return Ok((false, format!("node {i}: kappa_s = {ks}, kappa_b = {kb}, m = {m}")));
            }
            worst_lib = worst_lib.max((lib.kappa_i[i] - ks).abs() / ks).max((lib.kappa_b[i] - kb).abs() / kb);
            nodes += 1;
        }
    }

    // LibSVM round trip.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let samples: Vec<SparseSample> = (0..1000)
        .map(|_| {
            let mut k = 0;
            let features = (0..rng.random_range(0..10))
                .map(|_| {
                    k += rng.random_range(1..50);
                    let v = match rng.random_range(0..3) {
                        0 => rng.random_range(-1.0..1.0),
                        1 => f64::from_bits(rng.random::<u64>() & !(0x7ffu64 << 52) | (rng.random_range(1..2046u64) << 52)),
                        _ => rng.random_range(-1e6..1e6f64).round(),
                    };
                    (k - 1, v)
                })
                .collect();
            SparseSample {
                label: if rng.random_bool(0.5) { 1.0 } else { -1.0 },
                features,
            }
        })
        .collect();
    let back = parse_libsvm_str(&write_libsvm(&samples)).map_err(err)?;
    let bits = |s: &[SparseSample]| -> Vec<(u64, Vec<(usize, u64)>)> {
        s.iter()
            .map(|x| (x.label.to_bits(), x.features.iter().map(|&(k, v)| (k, v.to_bits())).collect()))
            .collect()
    };
    let round_trip = bits(&back.samples) == bits(&samples);

    // Validation suite: green and repeatable.
    let first = run_suite();
    let second = run_suite();
    let green = first.iter().all(|r| r.passed);
    Ok((
        worst_lib <= 1e-9 && round_trip && green && first == second,
        format!(
            "{nodes} nodes satisfy the inequality (library within {worst_lib:.1e}); \
             round trip of 1000 samples {}; validate: {}/{} checks pass, repeat identical: {}",
            if round_trip { "bit-exact" } else { "MISMATCH" },
            first.iter().filter(|r| r.passed).count(),
            first.len(),
            first == second
        ),
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("spectral bound", c1_spectral_bound),
        ("projector identity", c2_projector_identity),
        ("operator shortcuts", c3_operator_shortcuts),
        ("APCG correctness", c4_apcg),
        ("single-node reduction", c5_single_node),
        ("ADFS linear rate", c6_linear_rate),
        ("efficient ADFS equivalence", c7_efficient_equivalence),
        ("time model", c8_time_model),
        ("NS-ADFS sublinear rate", c9_non_smooth_rate),
        ("4x4 grid comparison", c10_grid_comparison),
        ("conditioning, parser, validate", c11_conditions_parser_validate),
    ];
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let (pass, detail) = match f() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!("{} criterion {} ({name}): {detail}", if pass { "PASS" } else { "FAIL" }, k + 1);
    }
    if failed == 0 {
        println!("all 11 criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria fail");
        ExitCode::FAILURE
    }
}
