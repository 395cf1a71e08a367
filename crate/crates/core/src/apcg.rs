//! Generalized block accelerated proximal coordinate gradient for
//! `min_x q_A(x) + Σ_g ψ_g(x_g)`, where `q_A` is strongly convex only on
//! `Ker(A)^⊥` and blocks of coordinate groups are drawn with arbitrary
//! probabilities.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::linalg::{range_projector, symmetric_eigensolve, Mat, DEFAULT_ZERO_TOL};
use crate::rng::{cumulative, DrawStream};
use crate::scalar::{all_finite, norm_sq, Scalar};

/// Oracles describing a composite problem over coordinate groups.
pub trait CompositeProblem<S: Scalar> {
    fn dim(&self) -> usize;
    fn num_groups(&self) -> usize;
    /// Coordinates of group `g`.
    fn group(&self, g: usize) -> Range<usize>;
    /// `∇q_A(y)`.
    fn smooth_grad(&self, y: &[S]) -> Vec<S>;
    /// Whether `ψ_g ≠ 0`.
    fn has_prox(&self, g: usize) -> bool;
    /// `argmin_v (1/(2·step))‖v − x‖² + ψ_g(v)`; only called when `has_prox(g)`.
    fn prox(&self, g: usize, x: &[S], step: S) -> Result<Vec<S>>;
    /// `A†A x`.
    fn project(&self, x: &[S]) -> Vec<S>;
    /// Strong convexity of `q_A` on `Ker(A)^⊥` (0 allowed in convex mode).
    fn sigma_a(&self) -> S;
    /// `S` with `S² ≥ λ_max(A†A P_b† M P_b† A†A)` for every block.
    fn s_constant(&self) -> S;
    /// Probability `p_g` that group `g` belongs to the drawn block.
    fn marginal(&self, g: usize) -> S;
    /// Draws a block, as a list of distinct groups.
    fn sample(&self, rng: &mut DrawStream) -> Vec<usize>;
    /// `q_A(x) + Σ ψ_g(x_g)`.
    fn objective(&self, x: &[S]) -> S;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApcgMode {
    StronglyConvex,
    Convex,
}

#[derive(Debug, Clone)]
pub struct ApcgState<S> {
    pub x: Vec<S>,
    pub y: Vec<S>,
    pub v: Vec<S>,
    pub alpha: S,
    pub beta: S,
    pub eta: S,
    /// `A_t` and `B_t` of the Lyapunov function.
    pub a_big: S,
    pub b_big: S,
    pub t: usize,
}

/// `φ = (1 − ρ)/(1 + ρ)`.
pub fn phi<S: Scalar>(rho: S) -> S {
    (S::one() - rho) / (S::one() + rho)
}

/// Convex-mode step `α_{t+1} = (√(α⁴ + 4α²) − α²)/2`.
pub fn next_alpha<S: Scalar>(alpha: S) -> S {
    let a2 = alpha * alpha;
    ((a2 * a2 + S::of(4.0) * a2).sqrt() - a2) / S::of(2.0)
}

fn p_min_prox<S: Scalar, P: CompositeProblem<S> + ?Sized>(p: &P) -> S {
    let m = (0..p.num_groups())
        .filter(|&g| p.has_prox(g))
        .map(|g| p.marginal(g))
        .fold(S::infinity(), S::min);
    if m.is_finite() {
        m
    } else {
        (0..p.num_groups())
            .map(|g| p.marginal(g))
            .fold(S::one(), S::min)
    }
}

/// Checks `1 − α/p_g ≥ 0` on every group with a proximal term.
fn check_schedule<S: Scalar, P: CompositeProblem<S> + ?Sized>(p: &P, alpha: S) -> Result<()> {
    for g in 0..p.num_groups() {
        if p.has_prox(g) && S::one() - alpha / p.marginal(g) < -S::tol(1e-12) {
            return Err(Error::Schedule {
                group: g,
                detail: format!("1 - alpha/p = {} < 0", S::one() - alpha / p.marginal(g)),
            });
        }
    }
    Ok(())
}

/// Literal form: keeps `x`, `y`, `v` explicitly.
pub struct Apcg<'a, S: Scalar, P: CompositeProblem<S> + ?Sized> {
    problem: &'a P,
    mode: ApcgMode,
    state: ApcgState<S>,
    s2: S,
    sigma_a: S,
    b0: S,
    last_w: Vec<S>,
    last_block: Vec<usize>,
}

impl<'a, S: Scalar, P: CompositeProblem<S> + ?Sized> Apcg<'a, S, P> {
    pub fn new(problem: &'a P, mode: ApcgMode) -> Result<Self> {
        let dim = problem.dim();
        let s = problem.s_constant();
        let s2 = s * s;
        let sigma_a = problem.sigma_a();
        if !(s > S::zero()) {
            return Err(Error::InvalidArgument(format!("S = {s} must be positive")));
        }
        let (alpha, beta, eta, a_big, b_big, b0) = match mode {
            ApcgMode::StronglyConvex => {
                if !(sigma_a > S::zero()) {
                    return Err(Error::InvalidArgument(
                        "strongly convex mode needs sigma_A > 0".into(),
                    ));
                }
                let rho = sigma_a.sqrt() / s;
                (rho, rho, rho / sigma_a, S::one(), sigma_a, sigma_a)
            }
            ApcgMode::Convex => {
                let alpha = p_min_prox(problem);
                let a_big = (S::one() - alpha) / (s2 * alpha * alpha);
                (alpha, S::zero(), S::one() / (alpha * s2), a_big, S::one(), S::one())
            }
        };
        check_schedule(problem, alpha)?;
        Ok(Self {
            problem,
            mode,
            state: ApcgState {
                x: vec![S::zero(); dim],
                y: vec![S::zero(); dim],
                v: vec![S::zero(); dim],
                alpha,
                beta,
                eta,
                a_big,
                b_big,
                t: 0,
            },
            s2,
            sigma_a,
            b0,
            last_w: vec![S::zero(); dim],
            last_block: Vec::new(),
        })
    }

    pub fn state(&self) -> &ApcgState<S> {
        &self.state
    }

    /// `w_t = (1 − β_t) v_t + β_t y_t` from the last step.
    pub fn last_w(&self) -> &[S] {
        &self.last_w
    }

    pub fn last_block(&self) -> &[usize] {
        &self.last_block
    }

    pub fn step(&mut self, rng: &mut DrawStream) -> Result<()> {
        let p = self.problem;
        let st = &mut self.state;
        let (alpha, beta, eta) = (st.alpha, st.beta, st.eta);
        st.y = match self.mode {
            ApcgMode::StronglyConvex => st
                .x
                .iter()
                .zip(&st.v)
                .map(|(&x, &v)| (x + alpha * v) / (S::one() + alpha))
                .collect(),
            ApcgMode::Convex => st
                .x
                .iter()
                .zip(&st.v)
                .map(|(&x, &v)| (S::one() - alpha) * x + alpha * v)
                .collect(),
        };
        let block = p.sample(rng);
        let grad = p.smooth_grad(&st.y);
        let w: Vec<S> = st
            .v
            .iter()
            .zip(&st.y)
            .map(|(&v, &y)| (S::one() - beta) * v + beta * y)
            .collect();
        let mut v_new = w.clone();
        for &g in &block {
            let range = p.group(g);
            let step = eta / p.marginal(g);
            for k in range.clone() {
                v_new[k] = w[k] - step * grad[k];
            }
            if p.has_prox(g) {
                let out = p.prox(g, &v_new[range.clone()], step)?;
                v_new[range].copy_from_slice(&out);
            }
        }
        let diff: Vec<S> = v_new.iter().zip(&w).map(|(&a, &b)| a - b).collect();
        let proj = p.project(&diff);
        let mut x = st.y.clone();
        for &g in &block {
            let scale = alpha / p.marginal(g);
            for k in p.group(g) {
                x[k] += scale * proj[k];
            }
        }
        if !all_finite(&x) || !all_finite(&v_new) {
            return Err(Error::Diverged(st.t));
        }
        st.x = x;
        st.v = v_new;
        st.t += 1;
        self.last_w = w;
        self.last_block = block;
        match self.mode {
            ApcgMode::StronglyConvex => {
                let decay = S::one() - alpha;
                st.a_big = st.a_big / decay;
                st.b_big = self.sigma_a * st.a_big;
            }
            ApcgMode::Convex => {
                let a = next_alpha(alpha);
                st.alpha = a;
                st.eta = S::one() / (a * self.s2);
                st.a_big = self.b0 * (S::one() - a) / (self.s2 * a * a);
            }
        }
        Ok(())
    }
}

/// States at `t = 0..=iters`.
pub fn run_apcg<S: Scalar, P: CompositeProblem<S> + ?Sized>(
    problem: &P,
    mode: ApcgMode,
    iters: usize,
    seed: u64,
) -> Result<Vec<ApcgState<S>>> {
    let mut solver = Apcg::new(problem, mode)?;
    let mut rng = DrawStream::new(seed);
    let mut out = Vec::with_capacity(iters + 1);
    out.push(solver.state().clone());
    for _ in 0..iters {
        solver.step(&mut rng)?;
        out.push(solver.state().clone());
    }
    Ok(out)
}

/// Form without convex combinations of dense vectors: iterates are kept as
/// `(u, z)` with `y = c·u + z`, where `c = φ^{t+1}` (strongly convex) or
/// `α_t²` (convex).
///
/// In strongly convex mode `φ^{t+1}` is carried as a separate scale factor
/// that is folded into `u` only when it nears underflow, so that each step
/// touches only the sampled coordinates of `u`.
pub struct ApcgEfficient<'a, S: Scalar, P: CompositeProblem<S> + ?Sized> {
    problem: &'a P,
    mode: ApcgMode,
    u: Vec<S>,
    z: Vec<S>,
    /// Multiplier on `u` in `y = scale·u + z`.
    scale: S,
    rho: S,
    eta: S,
    alpha: S,
    prev_alpha: S,
    s2: S,
    t: usize,
}

impl<'a, S: Scalar, P: CompositeProblem<S> + ?Sized> ApcgEfficient<'a, S, P> {
    pub fn new(problem: &'a P, mode: ApcgMode) -> Result<Self> {
        let dim = problem.dim();
        let s = problem.s_constant();
        if !(s > S::zero()) {
            return Err(Error::InvalidArgument(format!("S = {s} must be positive")));
        }
        let s2 = s * s;
        let (rho, eta, alpha, scale) = match mode {
            ApcgMode::StronglyConvex => {
                let sigma_a = problem.sigma_a();
                if !(sigma_a > S::zero()) {
                    return Err(Error::InvalidArgument(
                        "strongly convex mode needs sigma_A > 0".into(),
                    ));
                }
                let rho = sigma_a.sqrt() / s;
                check_schedule(problem, rho)?;
                (rho, rho / sigma_a, rho, phi(rho))
            }
            ApcgMode::Convex => {
                let alpha = p_min_prox(problem);
                check_schedule(problem, alpha)?;
                (S::zero(), S::one() / (alpha * s2), alpha, alpha * alpha)
            }
        };
        Ok(Self {
            problem,
            mode,
            u: vec![S::zero(); dim],
            z: vec![S::zero(); dim],
            scale,
            rho,
            eta,
            alpha,
            prev_alpha: S::zero(),
            s2,
            t: 0,
        })
    }

    /// Current `x_t`.
    pub fn x(&self) -> Vec<S> {
        let c = match self.mode {
            ApcgMode::StronglyConvex => self.scale / phi(self.rho),
            ApcgMode::Convex => self.prev_alpha * self.prev_alpha,
        };
        self.u
            .iter()
            .zip(&self.z)
            .map(|(&u, &z)| c * u + z)
            .collect()
    }

    /// Current `y_t`.
    pub fn y(&self) -> Vec<S> {
        self.u
            .iter()
            .zip(&self.z)
            .map(|(&u, &z)| self.scale * u + z)
            .collect()
    }

    pub fn step(&mut self, rng: &mut DrawStream) -> Result<()> {
        let p = self.problem;
        let y = self.y();
        let block = p.sample(rng);
        let grad = p.smooth_grad(&y);
        let dim = p.dim();
        let mut h = vec![S::zero(); dim];
        let (eta, c) = match self.mode {
            ApcgMode::StronglyConvex => (self.eta, self.scale),
            ApcgMode::Convex => (self.eta, S::zero()),
        };
        for &g in &block {
            let range = p.group(g);
            let step = eta / p.marginal(g);
            // Strongly convex: w = z − φ^{t+1}u; convex: the prox acts on z.
            let w: Vec<S> = range.clone().map(|k| self.z[k] - c * self.u[k]).collect();
            let arg: Vec<S> = w
                .iter()
                .zip(range.clone())
                .map(|(&wk, k)| wk - step * grad[k])
                .collect();
            let out = if p.has_prox(g) {
                p.prox(g, &arg, step)?
            } else {
                arg
            };
            for ((k, &o), &wk) in range.zip(&out).zip(&w) {
                h[k] = o - wk;
            }
        }
        let proj = p.project(&h);
        let mut qh = vec![S::zero(); dim];
        for &g in &block {
            let inv = S::one() / p.marginal(g);
            for k in p.group(g) {
                qh[k] = inv * proj[k];
            }
        }
        let two = S::of(2.0);
        match self.mode {
            ApcgMode::StronglyConvex => {
                let rho = self.rho;
                for k in 0..dim {
                    if h[k] == S::zero() && qh[k] == S::zero() {
                        continue;
                    }
                    self.u[k] -= (h[k] - rho * qh[k]) / (two * self.scale);
                    self.z[k] += (h[k] + rho * qh[k]) / two;
                }
                self.scale *= phi(rho);
                if self.scale < S::min_positive_value().sqrt() {
                    for u in self.u.iter_mut() {
                        *u *= self.scale;
                    }
                    self.scale = S::one();
                }
            }
            ApcgMode::Convex => {
                let a = self.alpha;
                let a2 = a * a;
                for k in 0..dim {
                    if h[k] == S::zero() && qh[k] == S::zero() {
                        continue;
                    }
                    self.u[k] -= (h[k] - a * qh[k]) / a2;
                    self.z[k] += h[k];
                }
                self.prev_alpha = a;
                self.alpha = next_alpha(a);
                self.eta = S::one() / (self.alpha * self.s2);
                self.scale = self.alpha * self.alpha;
            }
        }
        if !all_finite(&self.z) || !all_finite(&self.u) {
            return Err(Error::Diverged(self.t));
        }
        self.t += 1;
        Ok(())
    }

    pub fn alpha(&self) -> S {
        self.alpha
    }
}

/// Reconstructed `x_t` for `t = 0..=iters`.
pub fn run_apcg_efficient<S: Scalar, P: CompositeProblem<S> + ?Sized>(
    problem: &P,
    mode: ApcgMode,
    iters: usize,
    seed: u64,
) -> Result<Vec<Vec<S>>> {
    let mut solver = ApcgEfficient::new(problem, mode)?;
    let mut rng = DrawStream::new(seed);
    let mut out = Vec::with_capacity(iters + 1);
    out.push(solver.x());
    for _ in 0..iters {
        solver.step(&mut rng)?;
        out.push(solver.x());
    }
    Ok(out)
}

/// `B_t ‖v_t − θ*‖²_{A†A} + 2 A_t (F(x_t) − F*)`.
pub fn lyapunov_value<S: Scalar, P: CompositeProblem<S> + ?Sized>(
    problem: &P,
    state: &ApcgState<S>,
    theta_star: &[S],
    f_star: S,
) -> S {
    let diff: Vec<S> = state.v.iter().zip(theta_star).map(|(&a, &b)| a - b).collect();
    let dist = norm_sq(&problem.project(&diff));
    state.b_big * dist + S::of(2.0) * state.a_big * (problem.objective(&state.x) - f_star)
}

/// Explicit distribution over blocks of single-coordinate groups.
#[derive(Debug, Clone)]
pub struct BlockSampler {
    blocks: Vec<Vec<usize>>,
    probs: Vec<f64>,
    cumulative: Vec<f64>,
}

impl BlockSampler {
    pub fn new(blocks: Vec<Vec<usize>>, probs: Vec<f64>) -> Result<Self> {
        if blocks.is_empty() || blocks.len() != probs.len() {
            return Err(Error::InvalidArgument("one probability per block".into()));
        }
        let total: f64 = probs.iter().sum();
        if probs.iter().any(|&p| !(p > 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(
                "block probabilities must be positive and sum to 1".into(),
            ));
        }
        let cumulative = cumulative(probs.iter().copied());
        Ok(Self {
            blocks,
            probs,
            cumulative,
        })
    }

    /// Each coordinate alone, uniformly.
    pub fn uniform_singletons(dim: usize) -> Self {
        Self::new(
            (0..dim).map(|i| vec![i]).collect(),
            vec![1.0 / dim as f64; dim],
        )
        .expect("valid uniform distribution")
    }

    /// The full coordinate set with probability one.
    pub fn full(dim: usize) -> Self {
        Self::new(vec![(0..dim).collect()], vec![1.0]).expect("valid")
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn marginals(&self, dim: usize) -> Vec<f64> {
        let mut m = vec![0.0; dim];
        for (b, &p) in self.blocks.iter().zip(&self.probs) {
            for &i in b {
                m[i] += p;
            }
        }
        m
    }

    pub fn draw(&self, rng: &mut DrawStream) -> Vec<usize> {
        self.blocks[rng.categorical(&self.cumulative)].clone()
    }
}

/// `q(x) = ½ (x − c)ᵀ H (x − c)` plus `Σ λ_i |x_i|`, with single-coordinate
/// groups. `H` may be singular; `ℓ1` weights are only allowed on coordinates
/// fixed by the range projector of `H`.
#[derive(Debug, Clone)]
pub struct QuadraticComposite<S> {
    h: Mat<S>,
    c: Vec<S>,
    l1: Vec<S>,
    sampler: BlockSampler,
    marginals: Vec<S>,
    projector: Mat<S>,
    sigma_a: S,
    s: S,
}

impl<S: Scalar> QuadraticComposite<S> {
    pub fn new(h: Mat<S>, c: Vec<S>, l1: Vec<S>, sampler: BlockSampler) -> Result<Self> {
        let dim = h.rows();
        if h.cols() != dim || c.len() != dim || l1.len() != dim {
            return Err(Error::Shape("quadratic composite dimensions".into()));
        }
        let zero_tol = S::of(DEFAULT_ZERO_TOL);
        let projector = range_projector(&h, zero_tol)?;
        for (i, &w) in l1.iter().enumerate() {
            if w != S::zero() && (projector[(i, i)] - S::one()).abs() > S::tol(1e-8) {
                return Err(Error::InvalidArgument(format!(
                    "coordinate {i} has an l1 term but is not fixed by the projector"
                )));
            }
        }
        let sigma_a = symmetric_eigensolve(&h, zero_tol, false)?
            .lambda_min_pos()
            .unwrap_or_else(S::zero);
        let marginals_f = sampler.marginals(dim);
        if let Some(i) = marginals_f.iter().position(|&p| p == 0.0) {
            return Err(Error::InvalidArgument(format!("coordinate {i} is never sampled")));
        }
        let marginals: Vec<S> = marginals_f.iter().map(|&p| S::of(p)).collect();
        let mut s2 = S::zero();
        for b in sampler.blocks() {
            let mut scale = vec![S::zero(); dim];
            for &i in b {
                scale[i] = S::one() / marginals[i];
            }
            let pm = Mat::from_fn(dim, dim, |r, q| scale[r] * h[(r, q)] * scale[q]);
            let full = projector.matmul(&pm)?.matmul(&projector)?;
            s2 = s2.max(symmetric_eigensolve(&full, zero_tol, false)?.lambda_max());
        }
        Ok(Self {
            h,
            c,
            l1,
            sampler,
            marginals,
            projector,
            sigma_a,
            s: s2.sqrt(),
        })
    }

    pub fn hessian(&self) -> &Mat<S> {
        &self.h
    }

    pub fn center(&self) -> &[S] {
        &self.c
    }

    pub fn l1_weights(&self) -> &[S] {
        &self.l1
    }

    /// Overrides `σ_A` (for example to run convex mode with `σ_A = 0`).
    pub fn with_sigma_a(mut self, sigma_a: S) -> Self {
        self.sigma_a = sigma_a;
        self
    }
}

impl<S: Scalar> CompositeProblem<S> for QuadraticComposite<S> {
    fn dim(&self) -> usize {
        self.c.len()
    }

    fn num_groups(&self) -> usize {
        self.c.len()
    }

    fn group(&self, g: usize) -> Range<usize> {
        g..g + 1
    }

    fn smooth_grad(&self, y: &[S]) -> Vec<S> {
        let diff: Vec<S> = y.iter().zip(&self.c).map(|(&a, &b)| a - b).collect();
        self.h.matvec(&diff).expect("dimensions checked")
    }

    fn has_prox(&self, g: usize) -> bool {
        self.l1[g] != S::zero()
    }

    fn prox(&self, g: usize, x: &[S], step: S) -> Result<Vec<S>> {
        let t = step * self.l1[g];
        Ok(vec![x[0].signum() * (x[0].abs() - t).max(S::zero())])
    }

    fn project(&self, x: &[S]) -> Vec<S> {
        self.projector.matvec(x).expect("dimensions checked")
    }

    fn sigma_a(&self) -> S {
        self.sigma_a
    }

    fn s_constant(&self) -> S {
        self.s
    }

    fn marginal(&self, g: usize) -> S {
        self.marginals[g]
    }

    fn sample(&self, rng: &mut DrawStream) -> Vec<usize> {
        self.sampler.draw(rng)
    }

    fn objective(&self, x: &[S]) -> S {
        let g = self.smooth_grad(x);
        let diff: Vec<S> = x.iter().zip(&self.c).map(|(&a, &b)| a - b).collect();
        let quad = crate::scalar::dot(&diff, &g) / S::of(2.0);
        quad + x
            .iter()
            .zip(&self.l1)
            .map(|(&xi, &w)| w * xi.abs())
            .sum::<S>()
    }
}

#[cfg(test)]
pub(crate) mod oracle {
    use super::*;

    /// Proximal gradient with step `1/λ_max(H)` run to stagnation.
    pub fn proximal_gradient(p: &QuadraticComposite<f64>, iters: usize) -> Vec<f64> {
        let lmax = symmetric_eigensolve(p.hessian(), 1e-9, false).unwrap().lambda_max();
        let step = 1.0 / lmax;
        let mut x = vec![0.0; p.dim()];
        for _ in 0..iters {
            let g = p.smooth_grad(&x);
            let mut change = 0.0f64;
            for i in 0..x.len() {
                let z = x[i] - step * g[i];
                let t = step * p.l1_weights()[i];
                let nx = z.signum() * (z.abs() - t).max(0.0);
                change = change.max((nx - x[i]).abs());
                x[i] = nx;
            }
            if change == 0.0 {
                break;
            }
        }
        x
    }
}
