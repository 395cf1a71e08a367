//! ADFS solvers on the augmented graph: the reference smooth and non-smooth
//! iterations, their sparse-update forms, primal recovery and run records.
//!
//! States are `n(1 + m) × d` matrices with one row per augmented node
//! (centers first, then virtual nodes).

use std::ops::Range;

use crate::apcg::{next_alpha, phi, CompositeProblem};
use crate::augmented::{dense, AugmentedProblem, BlockDraw, BlockKind};
use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigensolve, Mat, DEFAULT_ZERO_TOL};
use crate::objective::{fstar_value, primal_value, prox_fstar, prox_tilde_fstar, LossKind, Sample};
use crate::rng::DrawStream;
use crate::scalar::{all_finite, norm_sq, Scalar};

/// Relative slack accepted on the domain of `ℓ*` when evaluating the dual.
const DOMAIN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct RunMeta {
    pub algorithm: String,
    pub seed: u64,
    pub rho: Option<f64>,
    pub p_comm: f64,
    pub tau: f64,
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub dataset: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub t: u64,
    /// Idealized time: 1 per computation block, `τ` per communication block.
    pub time: f64,
    /// Average over nodes of `F(θ_i)`.
    pub objective: f64,
    /// `objective − F*` when `F*` was supplied.
    pub subopt: Option<f64>,
    /// `F*(x_t)` for the non-smooth solver.
    pub dual_value: Option<f64>,
    /// Kind of the block drawn at iteration `t − 1`.
    pub kind: Option<BlockKind>,
}

#[derive(Debug, Clone)]
pub struct RunRecord<S> {
    pub meta: RunMeta,
    pub rows: Vec<RunRow>,
    /// Final primal estimate.
    pub theta: Vec<S>,
    pub final_time: f64,
}

#[derive(Debug, Clone)]
pub struct RunOptions<S> {
    pub iters: u64,
    pub seed: u64,
    pub log_every: u64,
    pub f_star: Option<S>,
    /// Stop at the first logged row with `subopt ≤ target` (needs `f_star`).
    pub target: Option<S>,
}

impl<S: Scalar> RunOptions<S> {
    pub fn new(iters: u64, seed: u64, log_every: u64) -> Self {
        Self {
            iters,
            seed,
            log_every,
            f_star: None,
            target: None,
        }
    }

    pub fn with_target(mut self, target: S) -> Self {
        self.target = Some(target);
        self
    }

    /// Whether a logged row meets the stopping target.
    pub fn reached(&self, row: &RunRow) -> bool {
        match (self.target, row.subopt) {
            (Some(t), Some(s)) => s <= t.as_f64(),
            _ => false,
        }
    }

    pub fn with_f_star(mut self, f_star: S) -> Self {
        self.f_star = Some(f_star);
        self
    }

    pub fn check(&self) -> Result<()> {
        if self.log_every == 0 {
            return Err(Error::InvalidArgument("log_every must be at least 1".into()));
        }
        if self.target.is_some() && self.f_star.is_none() {
            return Err(Error::InvalidArgument("a stopping target needs F*".into()));
        }
        Ok(())
    }
}

fn meta<S: Scalar>(p: &AugmentedProblem<S>, algorithm: &str, seed: u64) -> RunMeta {
    RunMeta {
        algorithm: algorithm.to_string(),
        seed,
        rho: p.rho().ok().map(|r| r.as_f64()),
        p_comm: p.sampling.p_comm().as_f64(),
        tau: p.tau.as_f64(),
        n: p.n(),
        m: p.layout.m_max(),
        d: p.d,
        dataset: String::new(),
    }
}

fn time_increment<S: Scalar>(p: &AugmentedProblem<S>, draw: &BlockDraw) -> f64 {
    match draw {
        BlockDraw::Communication => p.tau.as_f64(),
        BlockDraw::Computation(_) => 1.0,
    }
}

/// Per-node estimates `θ_i = y_i/σ_i` from the center rows.
pub fn center_estimates<S: Scalar>(problem: &AugmentedProblem<S>, y: &Mat<S>) -> Vec<Vec<S>> {
    (0..problem.n())
        .map(|i| {
            let inv = S::one() / problem.sigma(i);
            y.row(i).iter().map(|&v| v * inv).collect()
        })
        .collect()
}

/// Average of the per-node estimates `y_i/σ_i`.
pub fn primal_estimate<S: Scalar>(problem: &AugmentedProblem<S>, y: &Mat<S>) -> Vec<S> {
    let n = S::of(problem.n() as f64);
    let mut theta = vec![S::zero(); problem.d];
    for est in center_estimates(problem, y) {
        for (t, e) in theta.iter_mut().zip(est) {
            *t += e / n;
        }
    }
    theta
}

/// `Σ† v`: `v_i/σ_i` on centers and `v_ij/L_ij` on virtual rows (zero when
/// non-smooth).
pub fn sigma_dagger_rows<S: Scalar>(problem: &AugmentedProblem<S>, v: &Mat<S>) -> Mat<S> {
    let mut out = problem.zero_state();
    for i in 0..problem.n() {
        let inv = S::one() / problem.sigma(i);
        for (o, &x) in out.row_mut(i).iter_mut().zip(v.row(i)) {
            *o = x * inv;
        }
    }
    for (i, j) in problem.layout.virtual_edges() {
        if let Some(l) = problem.smoothness(i, j) {
            let r = problem.layout.virtual_row(i, j);
            let proj = problem.sample(i, j).project(v.row(r));
            for (o, x) in out.row_mut(r).iter_mut().zip(proj) {
                *o = x / l;
            }
        }
    }
    out
}

/// Average over nodes of `F(y_i/σ_i)`.
fn average_objective<S: Scalar>(problem: &AugmentedProblem<S>, centers: &[Vec<S>]) -> S {
    let total: S = centers
        .iter()
        .map(|theta| primal_value(&problem.objectives, theta))
        .sum();
    total / S::of(centers.len() as f64)
}

/// `ℓ*` of the coefficient of `x` along `X`, with rounding-level violations
/// of the domain projected away.
fn fstar_tolerant<S: Scalar>(s: &Sample<S>, kind: LossKind, x: &[S]) -> S {
    let exact = fstar_value(s, kind, x);
    if exact.is_finite() || s.check_in_span(x).is_err() {
        return exact;
    }
    let c = s.coefficient(x);
    let label = s.label();
    let tol = S::of(DOMAIN_TOL);
    let clamped = match kind {
        LossKind::Absolute if c.abs() <= S::one() + tol => c.max(-S::one()).min(S::one()),
        LossKind::Logistic => {
            let u = -c * label;
            if u >= -tol && u <= S::one() + tol {
                -u.max(S::zero()).min(S::one()) * label
            } else {
                return exact;
            }
        }
        _ => return exact,
    };
    kind.conjugate(clamped, label)
}

/// `F*(x) = Σ_ij f_ij*(x_ij) + Σ_i ‖x_i‖²/(2σ_i)`.
pub fn dual_objective<S: Scalar>(problem: &AugmentedProblem<S>, x: &Mat<S>) -> S {
    let two = S::of(2.0);
    let mut total = S::zero();
    for i in 0..problem.n() {
        total += norm_sq(x.row(i)) / (two * problem.sigma(i));
    }
    for (i, j) in problem.layout.virtual_edges() {
        let r = problem.layout.virtual_row(i, j);
        total += fstar_tolerant(problem.sample(i, j), problem.loss, x.row(r));
    }
    total
}

fn combine<S: Scalar>(a: S, x: &Mat<S>, b: S, y: &Mat<S>) -> Mat<S> {
    let data = x
        .as_slice()
        .iter()
        .zip(y.as_slice())
        .map(|(&u, &v)| a * u + b * v)
        .collect();
    Mat::from_vec(x.rows(), x.cols(), data).expect("same shape")
}

fn check_finite<S: Scalar>(m: &Mat<S>, t: u64) -> Result<()> {
    if all_finite(m.as_slice()) {
        Ok(())
    } else {
        Err(Error::Diverged(t as usize))
    }
}

/// Virtual-row prox argument, projected onto `span(X_ij)` to remove rounding drift.
fn span_arg<S: Scalar>(problem: &AugmentedProblem<S>, i: usize, j: usize, x: &[S]) -> Vec<S> {
    problem.sample(i, j).project(x)
}

/// Step `η = ρ/σ_A` of the smooth solver.
fn smooth_step<S: Scalar>(problem: &AugmentedProblem<S>, sigma_a: Option<S>) -> Result<(S, S)> {
    let rho = problem.rho()?;
    let sigma_a = match sigma_a {
        Some(s) if s > S::zero() => s,
        Some(s) => return Err(Error::InvalidArgument(format!("sigma_A = {s} must be positive"))),
        None => problem.sigma_a_bound()?,
    };
    Ok((rho, rho / sigma_a))
}

/// Reference smooth iteration, with explicit `x`, `y`, `v`.
pub struct Adfs<'a, S: Scalar> {
    problem: &'a AugmentedProblem<S>,
    rho: S,
    eta: S,
    x: Mat<S>,
    y: Mat<S>,
    v: Mat<S>,
    warm: Vec<Vec<S>>,
    t: u64,
}

impl<'a, S: Scalar> Adfs<'a, S> {
    /// Uses `σ_A = α/2`.
    pub fn new(problem: &'a AugmentedProblem<S>) -> Result<Self> {
        Self::build(problem, None)
    }

    /// Uses the given strong convexity constant (for example the exact
    /// `λ_min⁺(AᵀΣ†A)`) in `η = ρ/σ_A`.
    pub fn with_sigma_a(problem: &'a AugmentedProblem<S>, sigma_a: S) -> Result<Self> {
        Self::build(problem, Some(sigma_a))
    }

    fn build(problem: &'a AugmentedProblem<S>, sigma_a: Option<S>) -> Result<Self> {
        let (rho, eta) = smooth_step(problem, sigma_a)?;
        Ok(Self {
            problem,
            rho,
            eta,
            x: problem.zero_state(),
            y: problem.zero_state(),
            v: problem.zero_state(),
            warm: problem.objectives.iter().map(|f| vec![S::zero(); f.m()]).collect(),
            t: 0,
        })
    }

    pub fn x(&self) -> &Mat<S> {
        &self.x
    }

    /// `y_t`: the last combination point, zero before the first step.
    pub fn y(&self) -> &Mat<S> {
        &self.y
    }

    pub fn v(&self) -> &Mat<S> {
        &self.v
    }

    pub fn eta(&self) -> S {
        self.eta
    }

    pub fn iteration(&self) -> u64 {
        self.t
    }

    /// `y_t = (x_t + ρ v_t)/(1 + ρ)` at the current iterate.
    pub fn current_y(&self) -> Mat<S> {
        let r = self.rho;
        let c = S::one() / (S::one() + r);
        combine(c, &self.x, c * r, &self.v)
    }

    pub fn step(&mut self, rng: &mut DrawStream) -> Result<BlockDraw> {
        let p = self.problem;
        let rho = self.rho;
        let y = self.current_y();
        let draw = p.sampling.draw(rng);
        let g = p.apply_wb_sigma_dagger(&draw, &y);
        let w = combine(S::one() - rho, &self.v, rho, &y);
        let mut v_new = combine(S::one(), &w, -self.eta, &g);
        if let BlockDraw::Computation(chosen) = &draw {
            for (i, &j) in chosen.iter().enumerate() {
                let r = p.layout.virtual_row(i, j);
                let mu = p.mu_virtual[i][j];
                let eta_t = self.eta * mu * mu / p.sampling.p_virtual(i, j);
                let z_r = span_arg(p, i, j, v_new.row(r));
                let (vr, warm) =
                    prox_tilde_fstar(p.sample(i, j), p.loss, &z_r, eta_t, self.warm[i][j])?;
                self.warm[i][j] = warm;
                let (zi, zr) = (v_new.row(i).to_vec(), v_new.row(r).to_vec());
                for c in 0..p.d {
                    v_new[(i, c)] = zi[c] + zr[c] - vr[c];
                }
                v_new.row_mut(r).copy_from_slice(&vr);
            }
        }
        let delta = combine(S::one(), &v_new, -S::one(), &w);
        let x = combine(S::one(), &y, rho, &p.apply_wtilde(&draw, &delta));
        check_finite(&x, self.t)?;
        check_finite(&v_new, self.t)?;
        self.x = x;
        self.v = v_new;
        self.y = y;
        self.t += 1;
        Ok(draw)
    }

    /// `θ = Σ† v` restricted to the centers and averaged.
    pub fn return_value(&self) -> Vec<S> {
        primal_estimate(self.problem, &self.v)
    }
}

/// Sparse-update smooth iteration. The pair `(u, z)` represents
/// `y = φ^{t+1} u + z`, with `φ^{t+1}` kept as a separate scale so that a
/// computation block only writes the `2n` rows it involves.
pub struct AdfsEfficient<'a, S: Scalar> {
    problem: &'a AugmentedProblem<S>,
    rho: S,
    eta: S,
    phi: S,
    u: Mat<S>,
    z: Mat<S>,
    scale: S,
    warm: Vec<Vec<S>>,
    touched: Vec<usize>,
    t: u64,
}

impl<'a, S: Scalar> AdfsEfficient<'a, S> {
    pub fn new(problem: &'a AugmentedProblem<S>) -> Result<Self> {
        Self::build(problem, None)
    }

    pub fn with_sigma_a(problem: &'a AugmentedProblem<S>, sigma_a: S) -> Result<Self> {
        Self::build(problem, Some(sigma_a))
    }

    fn build(problem: &'a AugmentedProblem<S>, sigma_a: Option<S>) -> Result<Self> {
        let (rho, eta) = smooth_step(problem, sigma_a)?;
        let phi = phi(rho);
        Ok(Self {
            problem,
            rho,
            eta,
            phi,
            u: problem.zero_state(),
            z: problem.zero_state(),
            scale: phi,
            warm: problem.objectives.iter().map(|f| vec![S::zero(); f.m()]).collect(),
            touched: Vec::new(),
            t: 0,
        })
    }

    pub fn iteration(&self) -> u64 {
        self.t
    }

    /// Rows written by the last step.
    pub fn touched_rows(&self) -> &[usize] {
        &self.touched
    }

    /// Stored pair `(u, z)`, before applying the lazy scale.
    pub fn storage(&self) -> (&Mat<S>, &Mat<S>) {
        (&self.u, &self.z)
    }

    fn y_row(&self, r: usize) -> Vec<S> {
        self.u
            .row(r)
            .iter()
            .zip(self.z.row(r))
            .map(|(&u, &z)| self.scale * u + z)
            .collect()
    }

    /// `y_t = φ^{t+1} u_t + z_t`.
    pub fn y(&self) -> Mat<S> {
        combine(self.scale, &self.u, S::one(), &self.z)
    }

    /// `x_t = φ^t u_t + z_t`.
    pub fn x(&self) -> Mat<S> {
        combine(self.scale / self.phi, &self.u, S::one(), &self.z)
    }

    /// `v_t = (w_t − ρ y_t)/(1 − ρ)` with `w_t = z_t − φ^{t+1} u_t`.
    pub fn v(&self) -> Mat<S> {
        let r = self.rho;
        let k = S::one() / (S::one() - r);
        // w − ρy = (1 − ρ) z − (1 + ρ) φ^{t+1} u
        combine(-(S::one() + r) * k * self.scale, &self.u, S::one(), &self.z)
    }

    /// `y` restricted to the center rows.
    pub fn center_rows(&self) -> Mat<S> {
        let n = self.problem.n();
        let d = self.problem.d;
        let data = (0..n).flat_map(|i| self.y_row(i)).collect();
        Mat::from_vec(n, d, data).expect("shape")
    }

    fn apply(&mut self, r: usize, h: &[S], wh: &[S]) {
        let two = S::of(2.0);
        let rho = self.rho;
        let s = self.scale;
        for c in 0..h.len() {
            self.u[(r, c)] -= (h[c] - rho * wh[c]) / (two * s);
            self.z[(r, c)] += (h[c] + rho * wh[c]) / two;
        }
        self.touched.push(r);
    }

    pub fn step(&mut self, rng: &mut DrawStream) -> Result<BlockDraw> {
        let p = self.problem;
        let d = p.d;
        let draw = p.sampling.draw(rng);
        self.touched.clear();
        match &draw {
            BlockDraw::Communication => {
                let centers: Vec<Vec<S>> = (0..p.n()).map(|i| self.y_row(i)).collect();
                let g = comm_gradient(p, &centers);
                let inv = S::one() / p.sampling.p_comm();
                for (i, gi) in g.iter().enumerate() {
                    let h: Vec<S> = gi.iter().map(|&x| -self.eta * x).collect();
                    let wh: Vec<S> = h.iter().map(|&x| x * inv).collect();
                    self.apply(i, &h, &wh);
                }
            }
            BlockDraw::Computation(chosen) => {
                for (i, &j) in chosen.iter().enumerate() {
                    let r = p.layout.virtual_row(i, j);
                    let yi = self.y_row(i);
                    let yr = self.y_row(r);
                    let g = p.pair_gradient(i, j, &yi, &yr);
                    let w_r: Vec<S> = (0..d)
                        .map(|c| self.z[(r, c)] - self.scale * self.u[(r, c)])
                        .collect();
                    let arg: Vec<S> = w_r.iter().zip(&g).map(|(&w, &gc)| w + self.eta * gc).collect();
                    let mu = p.mu_virtual[i][j];
                    let pij = p.sampling.p_virtual(i, j);
                    let eta_t = self.eta * mu * mu / pij;
                    let arg = span_arg(p, i, j, &arg);
                    let (vr, warm) = prox_tilde_fstar(p.sample(i, j), p.loss, &arg, eta_t, self.warm[i][j])?;
                    self.warm[i][j] = warm;
                    let h_r: Vec<S> = vr.iter().zip(&w_r).map(|(&a, &b)| a - b).collect();
                    let h_i: Vec<S> = h_r.iter().map(|&x| -x).collect();
                    let inv = S::one() / pij;
                    let wh_r: Vec<S> = h_r.iter().map(|&x| x * inv).collect();
                    let wh_i: Vec<S> = h_i.iter().map(|&x| x * inv).collect();
                    self.apply(i, &h_i, &wh_i);
                    self.apply(r, &h_r, &wh_r);
                }
            }
        }
        for &r in &self.touched {
            if !all_finite(self.u.row(r)) || !all_finite(self.z.row(r)) {
                return Err(Error::Diverged(self.t as usize));
            }
        }
        self.scale *= self.phi;
        if self.scale < S::min_positive_value().sqrt() {
            for x in self.u.as_mut_slice() {
                *x *= self.scale;
            }
            self.scale = S::one();
        }
        self.t += 1;
        Ok(draw)
    }
}

/// `(1/p_comm) Σ_{kl} μ_kl² (y_k/σ_k − y_l/σ_l)` on center rows.
fn comm_gradient<S: Scalar>(p: &AugmentedProblem<S>, centers: &[Vec<S>]) -> Vec<Vec<S>> {
    let d = p.d;
    let mut out = vec![vec![S::zero(); d]; p.n()];
    let inv_p = S::one() / p.sampling.p_comm();
    for (&(k, l), &mu) in p.graph.edges().iter().zip(p.graph.weights()) {
        let w = mu * mu * inv_p;
        let (sk, sl) = (S::one() / p.sigma(k), S::one() / p.sigma(l));
        for c in 0..d {
            let diff = w * (centers[k][c] * sk - centers[l][c] * sl);
            out[k][c] += diff;
            out[l][c] -= diff;
        }
    }
    out
}

/// Reference non-smooth iteration.
pub struct NsAdfs<'a, S: Scalar> {
    problem: &'a AugmentedProblem<S>,
    s2: S,
    alpha: S,
    x: Mat<S>,
    v: Mat<S>,
    warm: Vec<Vec<S>>,
    t: u64,
}

impl<'a, S: Scalar> NsAdfs<'a, S> {
    pub fn new(problem: &'a AugmentedProblem<S>) -> Result<Self> {
        let s2 = problem.non_smooth()?.s_squared;
        Ok(Self {
            problem,
            s2,
            alpha: problem.sampling.p_min(),
            x: problem.zero_state(),
            v: problem.zero_state(),
            warm: problem.objectives.iter().map(|f| vec![S::zero(); f.m()]).collect(),
            t: 0,
        })
    }

    pub fn x(&self) -> &Mat<S> {
        &self.x
    }

    pub fn v(&self) -> &Mat<S> {
        &self.v
    }

    pub fn alpha(&self) -> S {
        self.alpha
    }

    /// `η_t = 1/(α_t S²)`.
    pub fn eta(&self) -> S {
        S::one() / (self.alpha * self.s2)
    }

    pub fn current_y(&self) -> Mat<S> {
        combine(S::one() - self.alpha, &self.x, self.alpha, &self.v)
    }

    pub fn step(&mut self, rng: &mut DrawStream) -> Result<BlockDraw> {
        let p = self.problem;
        let alpha = self.alpha;
        let eta = self.eta();
        let y = self.current_y();
        let draw = p.sampling.draw(rng);
        let g = p.apply_wb_sigma_dagger(&draw, &y);
        let mut v_new = combine(S::one(), &self.v, -eta, &g);
        if let BlockDraw::Computation(chosen) = &draw {
            for (i, &j) in chosen.iter().enumerate() {
                let r = p.layout.virtual_row(i, j);
                let mu = p.mu_virtual[i][j];
                let eta_t = eta * mu * mu / p.sampling.p_virtual(i, j);
                let z_r = span_arg(p, i, j, v_new.row(r));
                let (vr, warm) = prox_fstar(p.sample(i, j), p.loss, &z_r, eta_t, self.warm[i][j])?;
                self.warm[i][j] = warm;
                let (zi, zr) = (v_new.row(i).to_vec(), v_new.row(r).to_vec());
                for c in 0..p.d {
                    v_new[(i, c)] = zi[c] + zr[c] - vr[c];
                }
                v_new.row_mut(r).copy_from_slice(&vr);
            }
        }
        let delta = combine(S::one(), &v_new, -S::one(), &self.v);
        let x = combine(S::one(), &y, alpha, &p.apply_wtilde(&draw, &delta));
        check_finite(&x, self.t)?;
        check_finite(&v_new, self.t)?;
        self.x = x;
        self.v = v_new;
        self.alpha = next_alpha(alpha);
        self.t += 1;
        Ok(draw)
    }
}

/// Sparse-update non-smooth iteration: `y = α_t² u + z`, `x = α_{t−1}² u + z`.
pub struct NsAdfsEfficient<'a, S: Scalar> {
    problem: &'a AugmentedProblem<S>,
    s2: S,
    alpha: S,
    prev_alpha: S,
    u: Mat<S>,
    z: Mat<S>,
    warm: Vec<Vec<S>>,
    t: u64,
}

impl<'a, S: Scalar> NsAdfsEfficient<'a, S> {
    pub fn new(problem: &'a AugmentedProblem<S>) -> Result<Self> {
        let s2 = problem.non_smooth()?.s_squared;
        Ok(Self {
            problem,
            s2,
            alpha: problem.sampling.p_min(),
            prev_alpha: S::zero(),
            u: problem.zero_state(),
            z: problem.zero_state(),
            warm: problem.objectives.iter().map(|f| vec![S::zero(); f.m()]).collect(),
            t: 0,
        })
    }

    pub fn x(&self) -> Mat<S> {
        combine(self.prev_alpha * self.prev_alpha, &self.u, S::one(), &self.z)
    }

    pub fn v(&self) -> &Mat<S> {
        &self.z
    }

    fn y_row(&self, r: usize) -> Vec<S> {
        let a2 = self.alpha * self.alpha;
        self.u
            .row(r)
            .iter()
            .zip(self.z.row(r))
            .map(|(&u, &z)| a2 * u + z)
            .collect()
    }

    fn apply(&mut self, r: usize, h: &[S], wh: &[S]) {
        let a = self.alpha;
        let a2 = a * a;
        for c in 0..h.len() {
            self.u[(r, c)] -= (h[c] - a * wh[c]) / a2;
            self.z[(r, c)] += h[c];
        }
    }

    pub fn step(&mut self, rng: &mut DrawStream) -> Result<BlockDraw> {
        let p = self.problem;
        let d = p.d;
        let eta = S::one() / (self.alpha * self.s2);
        let draw = p.sampling.draw(rng);
        let mut rows = Vec::new();
        match &draw {
            BlockDraw::Communication => {
                let centers: Vec<Vec<S>> = (0..p.n()).map(|i| self.y_row(i)).collect();
                let g = comm_gradient(p, &centers);
                let inv = S::one() / p.sampling.p_comm();
                for (i, gi) in g.iter().enumerate() {
                    let h: Vec<S> = gi.iter().map(|&x| -eta * x).collect();
                    let wh: Vec<S> = h.iter().map(|&x| x * inv).collect();
                    rows.push((i, h, wh));
                }
            }
            BlockDraw::Computation(chosen) => {
                for (i, &j) in chosen.iter().enumerate() {
                    let r = p.layout.virtual_row(i, j);
                    let g = p.pair_gradient(i, j, &self.y_row(i), &self.y_row(r));
                    let arg: Vec<S> = (0..d).map(|c| self.z[(r, c)] + eta * g[c]).collect();
                    let mu = p.mu_virtual[i][j];
                    let pij = p.sampling.p_virtual(i, j);
                    let arg = span_arg(p, i, j, &arg);
                    let (vr, warm) =
                        prox_fstar(p.sample(i, j), p.loss, &arg, eta * mu * mu / pij, self.warm[i][j])?;
                    self.warm[i][j] = warm;
                    let h_r: Vec<S> = (0..d).map(|c| vr[c] - self.z[(r, c)]).collect();
                    let inv = S::one() / pij;
                    let h_i: Vec<S> = h_r.iter().map(|&x| -x).collect();
                    let wh_i = h_i.iter().map(|&x| x * inv).collect();
                    let wh_r = h_r.iter().map(|&x| x * inv).collect();
                    rows.push((i, h_i, wh_i));
                    rows.push((r, h_r, wh_r));
                }
            }
        }
        for (r, h, wh) in rows {
            self.apply(r, &h, &wh);
            if !all_finite(self.u.row(r)) || !all_finite(self.z.row(r)) {
                return Err(Error::Diverged(self.t as usize));
            }
        }
        self.prev_alpha = self.alpha;
        self.alpha = next_alpha(self.alpha);
        self.t += 1;
        Ok(draw)
    }
}

struct Logger<'a, S: Scalar> {
    problem: &'a AugmentedProblem<S>,
    opts: &'a RunOptions<S>,
    rows: Vec<RunRow>,
    time: f64,
}

impl<'a, S: Scalar> Logger<'a, S> {
    fn new(problem: &'a AugmentedProblem<S>, opts: &'a RunOptions<S>) -> Self {
        Self {
            problem,
            opts,
            rows: Vec::new(),
            time: 0.0,
        }
    }

    fn due(&self, t: u64) -> bool {
        t % self.opts.log_every == 0
    }

    /// Returns whether the stopping target is met.
    fn log(&mut self, t: u64, y: &Mat<S>, kind: Option<BlockKind>, dual: Option<S>) -> bool {
        let centers = center_estimates(self.problem, y);
        let objective = average_objective(self.problem, &centers).as_f64();
        self.rows.push(RunRow {
            t,
            time: self.time,
            objective,
            subopt: self.opts.f_star.map(|f| objective - f.as_f64()),
            dual_value: dual.map(|v| v.as_f64()),
            kind,
        });
        self.opts.reached(self.rows.last().expect("just pushed"))
    }

    fn finish(self, problem: &AugmentedProblem<S>, name: &str, theta: Vec<S>) -> RunRecord<S> {
        RunRecord {
            meta: meta(problem, name, self.opts.seed),
            rows: self.rows,
            theta,
            final_time: self.time,
        }
    }
}

/// Reference smooth solver. Logged objectives use `y_t/σ_i` on each center.
pub fn run_adfs<S: Scalar>(problem: &AugmentedProblem<S>, opts: &RunOptions<S>) -> Result<RunRecord<S>> {
    opts.check()?;
    let mut solver = Adfs::new(problem)?;
    let mut rng = DrawStream::new(opts.seed);
    let mut log = Logger::new(problem, opts);
    let iters = if log.log(0, &solver.current_y(), None, None) { 0 } else { opts.iters };
    for t in 1..=iters {
        let draw = solver.step(&mut rng)?;
        log.time += time_increment(problem, &draw);
        if log.due(t) && log.log(t, &solver.current_y(), Some(draw.kind()), None) {
            break;
        }
    }
    let theta = primal_estimate(problem, &solver.current_y());
    Ok(log.finish(problem, "adfs", theta))
}

/// Sparse-update smooth solver; same draws and iterates as [`run_adfs`].
pub fn run_adfs_efficient<S: Scalar>(
    problem: &AugmentedProblem<S>,
    opts: &RunOptions<S>,
) -> Result<RunRecord<S>> {
    opts.check()?;
    let mut solver = AdfsEfficient::new(problem)?;
    let mut rng = DrawStream::new(opts.seed);
    let mut log = Logger::new(problem, opts);
    let iters = if log.log(0, &solver.center_rows(), None, None) { 0 } else { opts.iters };
    for t in 1..=iters {
        let draw = solver.step(&mut rng)?;
        log.time += time_increment(problem, &draw);
        if log.due(t) && log.log(t, &solver.center_rows(), Some(draw.kind()), None) {
            break;
        }
    }
    let theta = primal_estimate(problem, &solver.center_rows());
    Ok(log.finish(problem, "adfs_efficient", theta))
}

/// Reference non-smooth solver. Rows carry `F*(x_t)`; the primal estimate is
/// taken from `y_t` as in the smooth case.
pub fn run_ns_adfs<S: Scalar>(problem: &AugmentedProblem<S>, opts: &RunOptions<S>) -> Result<RunRecord<S>> {
    opts.check()?;
    let mut solver = NsAdfs::new(problem)?;
    let mut rng = DrawStream::new(opts.seed);
    let mut log = Logger::new(problem, opts);
    let iters = if log.log(0, &solver.current_y(), None, Some(dual_objective(problem, solver.x()))) { 0 } else { opts.iters };
    for t in 1..=iters {
        let draw = solver.step(&mut rng)?;
        log.time += time_increment(problem, &draw);
        if log.due(t) {
            let dual = dual_objective(problem, solver.x());
            if log.log(t, &solver.current_y(), Some(draw.kind()), Some(dual)) {
                break;
            }
        }
    }
    let theta = primal_estimate(problem, &solver.current_y());
    Ok(log.finish(problem, "ns_adfs", theta))
}

/// Sparse-update non-smooth solver.
pub fn run_ns_adfs_efficient<S: Scalar>(
    problem: &AugmentedProblem<S>,
    opts: &RunOptions<S>,
) -> Result<RunRecord<S>> {
    opts.check()?;
    let mut solver = NsAdfsEfficient::new(problem)?;
    let mut rng = DrawStream::new(opts.seed);
    let mut log = Logger::new(problem, opts);
    let y_of = |s: &NsAdfsEfficient<S>| {
        let a2 = s.alpha * s.alpha;
        combine(a2, &s.u, S::one(), &s.z)
    };
    let iters = if log.log(0, &y_of(&solver), None, Some(dual_objective(problem, &solver.x()))) { 0 } else { opts.iters };
    for t in 1..=iters {
        let draw = solver.step(&mut rng)?;
        log.time += time_increment(problem, &draw);
        if log.due(t) {
            let dual = dual_objective(problem, &solver.x());
            if log.log(t, &y_of(&solver), Some(draw.kind()), Some(dual)) {
                break;
            }
        }
    }
    let theta = primal_estimate(problem, &y_of(&solver));
    Ok(log.finish(problem, "ns_adfs_efficient", theta))
}

/// Optimal node variables `x* = A θ*_A`: `σ_i θ*` on centers and
/// `∇f_ij(θ*)` on virtual rows.
pub fn optimal_node_state<S: Scalar>(problem: &AugmentedProblem<S>, theta_star: &[S]) -> Mat<S> {
    let mut x = problem.zero_state();
    for i in 0..problem.n() {
        for (o, &t) in x.row_mut(i).iter_mut().zip(theta_star) {
            *o = problem.sigma(i) * t;
        }
    }
    for (i, j) in problem.layout.virtual_edges() {
        let s = problem.sample(i, j);
        let z = crate::scalar::dot(s.features(), theta_star);
        let g = problem.loss.derivative(z, s.label());
        let r = problem.layout.virtual_row(i, j);
        for (o, &f) in x.row_mut(r).iter_mut().zip(s.features()) {
            *o = g * f;
        }
    }
    x
}

/// `‖Σ†(v − x*)‖²` over all augmented rows.
pub fn stacked_error<S: Scalar>(problem: &AugmentedProblem<S>, v: &Mat<S>, theta_star: &[S]) -> S {
    let x_star = optimal_node_state(problem, theta_star);
    let diff = combine(S::one(), v, -S::one(), &x_star);
    norm_sq(sigma_dagger_rows(problem, &diff).as_slice())
}

/// `C_0 = λ_max(AᵀΣ†²A) [‖A†A θ*_A‖² + 2σ_A⁻¹(F*_A(0) − F*_A(θ*_A))]`, computed
/// densely with the `σ_A` the smooth solver runs with (`α/2`). Uses
/// `F*_A(θ*_A) = −F(θ*)` and `F*_A(0) = Σ_ij ℓ*(0)`.
pub fn c0_dense<S: Scalar>(problem: &AugmentedProblem<S>, theta_star: &[S]) -> Result<S> {
    let a = dense::dense_a(problem)?;
    let sd = dense::dense_sigma_dagger(problem)?;
    let sd2 = sd.matmul(&sd)?;
    let m = a.transpose().matmul(&sd2)?.matmul(&a)?;
    let lmax = symmetric_eigensolve(&m, S::of(DEFAULT_ZERO_TOL), false)?.lambda_max();
    let x_star = dense::flatten(&optimal_node_state(problem, theta_star));
    let a_pinv = crate::linalg::pinv(&a, S::of(1e-10))?;
    let theta_a = a_pinv.matvec(&x_star)?;
    let f0: S = problem
        .layout
        .virtual_edges()
        .map(|(i, j)| problem.loss.conjugate(S::zero(), problem.sample(i, j).label()))
        .sum();
    let gap = f0 + primal_value(&problem.objectives, theta_star);
    let sigma_a = problem.sigma_a_bound()?;
    Ok(lmax * (norm_sq(&theta_a) + S::of(2.0) * gap / sigma_a))
}

/// The dual problem `min_λ ½ λᵀAᵀΣ†Aλ + Σ_ij ψ_ij(λ_ij)` with
/// `ψ_ij(λ) = f̃*_ij(−μ_ij λ)` (or `f*_ij` when non-smooth), as a composite
/// problem over edge coordinates. Groups are edges: communication edges first,
/// then virtual edges. Dense, for validation on small instances.
pub struct DualComposite<'a, S: Scalar> {
    problem: &'a AugmentedProblem<S>,
    a: Mat<S>,
    hessian: Mat<S>,
    projector: Mat<S>,
    sigma_dagger: Mat<S>,
    virtual_pairs: Vec<(usize, usize)>,
    sigma_a: S,
    s: S,
}

impl<'a, S: Scalar> DualComposite<'a, S> {
    /// Smooth problems use `σ_A = α/2` and `S = √σ_A/ρ`, so that the engine's
    /// rate and step equal the solver's; non-smooth problems use `σ_A = 0` and
    /// the bound `S²` of the problem.
    pub fn new(problem: &'a AugmentedProblem<S>) -> Result<Self> {
        let (sigma_a, s) = if problem.is_smooth() {
            let sa = problem.sigma_a_bound()?;
            (sa, sa.sqrt() / problem.rho()?)
        } else {
            (S::zero(), problem.non_smooth()?.s_squared.sqrt())
        };
        Ok(Self {
            problem,
            a: dense::dense_a(problem)?,
            hessian: dense::dense_dual_hessian(problem)?,
            projector: dense::dense_ata_projector(problem)?,
            sigma_dagger: dense::dense_sigma_dagger(problem)?,
            virtual_pairs: problem.layout.virtual_edges().collect(),
            sigma_a,
            s,
        })
    }

    /// Node variables `Aλ`.
    pub fn to_nodes(&self, lambda: &[S]) -> Result<Mat<S>> {
        dense::unflatten(self.problem, self.a.matvec(lambda)?)
    }

    fn pair(&self, g: usize) -> Option<(usize, usize)> {
        g.checked_sub(self.problem.graph.num_edges())
            .map(|k| self.virtual_pairs[k])
    }

    fn psi(&self, g: usize, lambda: &[S]) -> S {
        let Some((i, j)) = self.pair(g) else {
            return S::zero();
        };
        let p = self.problem;
        let mu = p.mu_virtual[i][j];
        let x: Vec<S> = lambda.iter().map(|&l| -mu * l).collect();
        let s = p.sample(i, j);
        let base = fstar_tolerant(s, p.loss, &x);
        match p.smoothness(i, j) {
            Some(l) => base - norm_sq(&x) / (S::of(2.0) * l),
            None => base,
        }
    }
}

impl<S: Scalar> CompositeProblem<S> for DualComposite<'_, S> {
    fn dim(&self) -> usize {
        self.a.cols()
    }

    fn num_groups(&self) -> usize {
        self.problem.graph.num_edges() + self.virtual_pairs.len()
    }

    fn group(&self, g: usize) -> Range<usize> {
        let d = self.problem.d;
        g * d..(g + 1) * d
    }

    fn smooth_grad(&self, y: &[S]) -> Vec<S> {
        self.hessian.matvec(y).expect("dimensions")
    }

    fn has_prox(&self, g: usize) -> bool {
        self.pair(g).is_some()
    }

    /// `prox_{sψ}(x) = −(1/μ) prox_{sμ² f̃*}(−μx)`, solved from a cold start.
    fn prox(&self, g: usize, x: &[S], step: S) -> Result<Vec<S>> {
        let (i, j) = self
            .pair(g)
            .ok_or_else(|| Error::InvalidArgument(format!("edge {g} has no proximal term")))?;
        let p = self.problem;
        let mu = p.mu_virtual[i][j];
        let s = p.sample(i, j);
        let arg: Vec<S> = s.project(&x.iter().map(|&v| -mu * v).collect::<Vec<_>>());
        let step2 = step * mu * mu;
        let (out, _) = if p.is_smooth() {
            prox_tilde_fstar(s, p.loss, &arg, step2, S::zero())?
        } else {
            prox_fstar(s, p.loss, &arg, step2, S::zero())?
        };
        Ok(out.into_iter().map(|v| -v / mu).collect())
    }

    fn project(&self, x: &[S]) -> Vec<S> {
        self.projector.matvec(x).expect("dimensions")
    }

    fn sigma_a(&self) -> S {
        self.sigma_a
    }

    fn s_constant(&self) -> S {
        self.s
    }

    fn marginal(&self, g: usize) -> S {
        match self.pair(g) {
            Some((i, j)) => self.problem.sampling.p_virtual(i, j),
            None => self.problem.sampling.p_comm(),
        }
    }

    fn sample(&self, rng: &mut DrawStream) -> Vec<usize> {
        let p = self.problem;
        let e = p.graph.num_edges();
        match p.sampling.draw(rng) {
            BlockDraw::Communication => (0..e).collect(),
            BlockDraw::Computation(chosen) => chosen
                .iter()
                .enumerate()
                .map(|(i, &j)| e + p.layout.virtual_index(i, j))
                .collect(),
        }
    }

    fn objective(&self, lambda: &[S]) -> S {
        let x = self.a.matvec(lambda).expect("dimensions");
        let sx = self.sigma_dagger.matvec(&x).expect("dimensions");
        let quad = crate::scalar::dot(&x, &sx) / S::of(2.0);
        let d = self.problem.d;
        quad + (0..self.num_groups())
            .map(|g| self.psi(g, &lambda[g * d..(g + 1) * d]))
            .sum::<S>()
    }
}
