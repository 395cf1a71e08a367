//! The augmented graph: every node is replaced by a star whose center keeps
//! the regularizer and whose leaves (virtual nodes) carry one sample each.
//!
//! State matrices have one row per augmented node: rows `0..n` are the
//! centers, followed by the virtual nodes of node 0, node 1, and so on.

use log::warn;

use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigensolve, Mat, DEFAULT_ZERO_TOL};
use crate::objective::{condition_numbers, ConditionReport, LocalObjective, LossKind};
use crate::rng::{cumulative, DrawStream};
use crate::scalar::Scalar;
use crate::topology::{CommunicationGraph, GraphSpectrum};

/// Keeps `2ρ < min p_ij` strict so the conjugate prox step stays below `L_ij`.
const CLAMP_MARGIN: f64 = 1e-6;

/// Row indexing of the augmented graph, with ragged sample counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    n: usize,
    m: Vec<usize>,
    offsets: Vec<usize>,
}

impl Layout {
    pub fn new(m: Vec<usize>) -> Self {
        let mut offsets = Vec::with_capacity(m.len());
        let mut acc = 0;
        for &mi in &m {
            offsets.push(acc);
            acc += mi;
        }
        Self {
            n: m.len(),
            m,
            offsets,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self, i: usize) -> usize {
        self.m[i]
    }

    pub fn m_max(&self) -> usize {
        self.m.iter().copied().max().unwrap_or(0)
    }

    pub fn num_virtual(&self) -> usize {
        self.m.iter().sum()
    }

    /// Total number of augmented nodes.
    pub fn rows(&self) -> usize {
        self.n + self.num_virtual()
    }

    pub fn virtual_row(&self, i: usize, j: usize) -> usize {
        debug_assert!(j < self.m[i]);
        self.n + self.offsets[i] + j
    }

    /// Index of virtual edge (i, j) among all virtual edges.
    pub fn virtual_index(&self, i: usize, j: usize) -> usize {
        self.offsets[i] + j
    }

    /// All virtual edges in row order.
    pub fn virtual_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| (0..self.m[i]).map(move |j| (i, j)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockKind {
    Communication,
    Computation,
}

/// One synchronous block: all communication edges, or one virtual edge per node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BlockDraw {
    Communication,
    /// `chosen[i]` is the sample index picked at node `i`.
    Computation(Vec<usize>),
}

impl BlockDraw {
    pub fn kind(&self) -> BlockKind {
        match self {
            BlockDraw::Communication => BlockKind::Communication,
            BlockDraw::Computation(_) => BlockKind::Computation,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SamplingScheme<S> {
    p_comm: S,
    /// Absolute probabilities `p_ij`; each node's row sums to `p_comp`.
    p_virtual: Vec<Vec<S>>,
    cumulative: Vec<Vec<f64>>,
    /// `S_i = Σ_j (1 + L_ij/σ_i)^{1/2}` (smooth case) or `m_i`.
    normalizers: Vec<S>,
}

impl<S: Scalar> SamplingScheme<S> {
    /// `weights[i][j]` are unnormalized per-node sample weights.
    pub fn new(p_comm: S, weights: &[Vec<S>]) -> Result<Self> {
        if !(p_comm >= S::zero() && p_comm < S::one()) {
            return Err(Error::InvalidArgument(format!(
                "p_comm = {p_comm} must lie in [0, 1)"
            )));
        }
        let p_comp = S::one() - p_comm;
        let mut p_virtual = Vec::with_capacity(weights.len());
        let mut cum = Vec::with_capacity(weights.len());
        let mut normalizers = Vec::with_capacity(weights.len());
        for (i, w) in weights.iter().enumerate() {
            let total: S = w.iter().copied().sum();
            if w.is_empty() || !(total > S::zero()) || w.iter().any(|&x| !(x > S::zero())) {
                return Err(Error::InvalidArgument(format!(
                    "node {i} has invalid sampling weights"
                )));
            }
            p_virtual.push(w.iter().map(|&x| p_comp * x / total).collect());
            cum.push(cumulative(w.iter().map(|&x| (x / total).as_f64())));
            normalizers.push(total);
        }
        Ok(Self {
            p_comm,
            p_virtual,
            cumulative: cum,
            normalizers,
        })
    }

    pub fn p_comm(&self) -> S {
        self.p_comm
    }

    pub fn p_comp(&self) -> S {
        S::one() - self.p_comm
    }

    pub fn p_virtual(&self, i: usize, j: usize) -> S {
        self.p_virtual[i][j]
    }

    pub fn node_probabilities(&self, i: usize) -> &[S] {
        &self.p_virtual[i]
    }

    pub fn normalizer(&self, i: usize) -> S {
        self.normalizers[i]
    }

    pub fn p_min(&self) -> S {
        self.p_virtual
            .iter()
            .flatten()
            .copied()
            .fold(S::infinity(), S::min)
    }

    /// Draws a block. The block-kind uniform is always consumed, so streams
    /// stay aligned across solvers.
    pub fn draw(&self, rng: &mut DrawStream) -> BlockDraw {
        let u = rng.block_uniform();
        if u < self.p_comm.as_f64() {
            BlockDraw::Communication
        } else {
            BlockDraw::Computation(self.cumulative.iter().map(|c| rng.categorical(c)).collect())
        }
    }
}

/// Constants specific to smooth losses.
#[derive(Debug, Clone)]
pub struct SmoothParams<S> {
    /// `α = 2 λ_min⁺(D̃^{-1/2} L D̃^{-1/2})` (1 for a single node).
    pub alpha: S,
    /// `σ_i + λ_max(Σ_j L_ij P_ij)`.
    pub dm: Vec<S>,
    /// `σ_i + 2 λ_max(Σ_j L_ij P_ij)`.
    pub dm_tilde: Vec<S>,
    /// `L_ij = L_g ‖X_ij‖²`.
    pub smoothness: Vec<Vec<S>>,
    pub condition: ConditionReport<S>,
    /// Undefined for a single node.
    pub kappa_comm: Option<S>,
    /// `m + √(m κ_s)` with `m` the largest local sample count.
    pub s_max: S,
    pub rate: RateBreakdown<S>,
}

/// Constants specific to non-smooth losses.
#[derive(Debug, Clone)]
pub struct NonSmoothParams<S> {
    /// Upper bound on `S²` used by the step schedule.
    pub s_squared: S,
    pub sigma_min: S,
}

#[derive(Debug, Clone)]
pub enum Regime<S> {
    Smooth(SmoothParams<S>),
    NonSmooth(NonSmoothParams<S>),
}

#[derive(Debug, Clone, Copy)]
pub struct RateBreakdown<S> {
    /// Final rate, after clamping.
    pub rho: S,
    /// `√(γ/κ_comm) p_comm`; absent without communication edges.
    pub rho_comm: Option<S>,
    /// `p_comp / (√2 (m + √(m κ_s)))`.
    pub rho_comp: S,
    /// `min p_ij / 2` times a safety margin.
    pub rho_cap: S,
    pub clamped: bool,
}

/// Everything the ADFS solvers need about one problem instance.
#[derive(Debug, Clone)]
pub struct AugmentedProblem<S> {
    pub graph: CommunicationGraph<S>,
    pub objectives: Vec<LocalObjective<S>>,
    pub layout: Layout,
    pub d: usize,
    pub loss: LossKind,
    pub spectrum: GraphSpectrum<S>,
    /// `μ_ij` per virtual edge.
    pub mu_virtual: Vec<Vec<S>>,
    pub sampling: SamplingScheme<S>,
    /// Communication delay in time units.
    pub tau: S,
    pub regime: Regime<S>,
}

fn check_inputs<S: Scalar>(
    graph: &CommunicationGraph<S>,
    objectives: &[LocalObjective<S>],
    tau: S,
) -> Result<(usize, LossKind)> {
    if objectives.len() != graph.n() {
        return Err(Error::InvalidArgument(format!(
            "{} local objectives for {} nodes",
            objectives.len(),
            graph.n()
        )));
    }
    let d = objectives[0].dim();
    let loss = objectives[0].loss();
    for (i, f) in objectives.iter().enumerate() {
        if f.dim() != d {
            return Err(Error::InvalidArgument(format!(
                "node {i} has dimension {} instead of {d}",
                f.dim()
            )));
        }
        if f.loss() != loss {
            return Err(Error::InvalidArgument(format!(
                "node {i} uses a different loss"
            )));
        }
    }
    if !(tau >= S::zero()) || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!("tau = {tau} must be non-negative")));
    }
    Ok((d, loss))
}

fn check_override<S: Scalar>(n: usize, p: Option<S>) -> Result<()> {
    if let Some(p) = p {
        if n == 1 {
            return Err(Error::InvalidArgument(
                "a single node has no communication edges; drop the p_comm override".into(),
            ));
        }
        if !(p > S::zero() && p < S::one()) {
            return Err(Error::InvalidArgument(format!("p_comm = {p} must lie in (0, 1)")));
        }
    }
    Ok(())
}

/// Smallest positive eigenvalue of `diag(w) L diag(w)`.
fn scaled_laplacian_min_pos<S: Scalar>(l: &Mat<S>, w: &[S]) -> Result<(Option<S>, S)> {
    let n = l.rows();
    let m = Mat::from_fn(n, n, |a, b| w[a] * l[(a, b)] * w[b]);
    let spec = symmetric_eigensolve(&m, S::of(DEFAULT_ZERO_TOL), false)?;
    Ok((spec.lambda_min_pos(), spec.lambda_max()))
}

/// Builds the smooth problem with the default virtual-edge weights,
/// sampling probabilities and rate.
pub fn build_augmented<S: Scalar>(
    graph: CommunicationGraph<S>,
    objectives: Vec<LocalObjective<S>>,
    tau: S,
    p_comm_override: Option<S>,
) -> Result<AugmentedProblem<S>> {
    let (d, loss) = check_inputs(&graph, &objectives, tau)?;
    if !loss.is_smooth() {
        return Err(Error::NonSmooth(
            "use build_augmented_ns for non-smooth losses".into(),
        ));
    }
    let n = graph.n();
    check_override(n, p_comm_override)?;
    let layout = Layout::new(objectives.iter().map(|f| f.m()).collect());
    let spectrum = graph.spectrum()?;
    let condition = condition_numbers(&objectives)?;

    let smoothness: Vec<Vec<S>> = objectives
        .iter()
        .map(|f| (0..f.m()).map(|j| f.smoothness(j).unwrap()).collect())
        .collect();
    let sigma: Vec<S> = objectives.iter().map(|f| f.sigma()).collect();
    let batch: Vec<S> = condition
        .kappa_b
        .iter()
        .zip(&sigma)
        .map(|(&kb, &s)| (kb - S::one()) * s)
        .collect();
    let dm: Vec<S> = sigma.iter().zip(&batch).map(|(&s, &b)| s + b).collect();
    let two = S::of(2.0);
    let dm_tilde: Vec<S> = sigma.iter().zip(&batch).map(|(&s, &b)| s + two * b).collect();

    let (alpha, kappa_comm) = if n == 1 {
        (S::one(), None)
    } else {
        let l = graph.laplacian();
        let inv_sqrt_dt: Vec<S> = dm_tilde.iter().map(|&x| S::one() / x.sqrt()).collect();
        let (min_dt, _) = scaled_laplacian_min_pos(&l, &inv_sqrt_dt)?;
        let min_dt = min_dt
            .filter(|v| *v > S::zero())
            .ok_or_else(|| Error::Graph("α is not positive".into()))?;
        let inv_sqrt_s: Vec<S> = sigma.iter().map(|&x| S::one() / x.sqrt()).collect();
        let (_, max_s) = scaled_laplacian_min_pos(&l, &inv_sqrt_s)?;
        let lmin = spectrum
            .lambda_min_pos
            .ok_or_else(|| Error::Graph("Laplacian has no positive eigenvalue".into()))?;
        let kappa_comm = (max_s / spectrum.lambda_max) / (min_dt / lmin);
        (two * min_dt, Some(kappa_comm))
    };

    let m_max = S::of(layout.m_max() as f64);
    let s_max = m_max + (m_max * condition.kappa_s).sqrt();
    let p_comm = match (p_comm_override, spectrum.gamma, kappa_comm) {
        (Some(p), _, _) => p,
        (None, Some(gamma), Some(kc)) => p_star(gamma, kc, s_max),
        _ => S::zero(),
    };

    let weights: Vec<Vec<S>> = smoothness
        .iter()
        .zip(&sigma)
        .map(|(ls, &s)| ls.iter().map(|&l| (S::one() + l / s).sqrt()).collect())
        .collect();
    let sampling = SamplingScheme::new(p_comm, &weights)?;
    let mu_virtual = smoothness
        .iter()
        .map(|ls| ls.iter().map(|&l| (alpha * l).sqrt()).collect())
        .collect();

    let mut params = SmoothParams {
        alpha,
        dm,
        dm_tilde,
        smoothness,
        condition,
        kappa_comm,
        s_max,
        rate: RateBreakdown {
            rho: S::zero(),
            rho_comm: None,
            rho_comp: S::zero(),
            rho_cap: S::zero(),
            clamped: false,
        },
    };
    params.rate = rate_for(&params, &spectrum, &sampling, p_comm);
    if params.rate.clamped {
        warn!(
            "rate clamped from {} to {} so that 2ρ < min p_ij",
            params
                .rate
                .rho_comm
                .map_or(params.rate.rho_comp, |c| c.min(params.rate.rho_comp)),
            params.rate.rho
        );
    }
    Ok(AugmentedProblem {
        graph,
        objectives,
        layout,
        d,
        loss,
        spectrum,
        mu_virtual,
        sampling,
        tau,
        regime: Regime::Smooth(params),
    })
}

/// Communication probability at which the two rate branches meet.
fn p_star<S: Scalar>(gamma: S, kappa_comm: S, s_max: S) -> S {
    S::one() / (S::one() + (S::of(2.0) * gamma / kappa_comm).sqrt() * s_max)
}

fn rate_for<S: Scalar>(
    params: &SmoothParams<S>,
    spectrum: &GraphSpectrum<S>,
    sampling: &SamplingScheme<S>,
    p_comm: S,
) -> RateBreakdown<S> {
    let p_comp = S::one() - p_comm;
    let rho_comm = match (spectrum.gamma, params.kappa_comm) {
        (Some(g), Some(kc)) => Some((g / kc).sqrt() * p_comm),
        _ => None,
    };
    let rho_comp = p_comp / (S::of(2.0).sqrt() * params.s_max);
    let unclamped = rho_comm.map_or(rho_comp, |c| c.min(rho_comp));
    // p_ij scale linearly with p_comp.
    let p_min = sampling.p_min() / sampling.p_comp() * p_comp;
    let rho_cap = p_min / S::of(2.0) * (S::one() - S::of(CLAMP_MARGIN));
    RateBreakdown {
        rho: unclamped.min(rho_cap),
        rho_comm,
        rho_comp,
        rho_cap,
        clamped: unclamped > rho_cap,
    }
}

/// Builds the non-smooth problem: `μ_ij² = λ_min⁺(L)/(1 + m_i)`,
/// `p_ij = p_comp/m_i`, default `p_comm = (1 + √(γ m))⁻¹`.
pub fn build_augmented_ns<S: Scalar>(
    graph: CommunicationGraph<S>,
    objectives: Vec<LocalObjective<S>>,
    tau: S,
    p_comm_override: Option<S>,
) -> Result<AugmentedProblem<S>> {
    let (d, loss) = check_inputs(&graph, &objectives, tau)?;
    if loss.is_smooth() {
        return Err(Error::Smooth("use build_augmented for smooth losses".into()));
    }
    let n = graph.n();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "the non-smooth solver needs at least two nodes".into(),
        ));
    }
    check_override(n, p_comm_override)?;
    let layout = Layout::new(objectives.iter().map(|f| f.m()).collect());
    let spectrum = graph.spectrum()?;
    let gamma = spectrum.gamma.expect("n ≥ 2");
    let lmin = spectrum.lambda_min_pos.expect("n ≥ 2");
    let m_max = S::of(layout.m_max() as f64);
    let p_comm = p_comm_override.unwrap_or_else(|| S::one() / (S::one() + (gamma * m_max).sqrt()));
    let weights: Vec<Vec<S>> = objectives.iter().map(|f| vec![S::one(); f.m()]).collect();
    let sampling = SamplingScheme::new(p_comm, &weights)?;
    let mu_virtual = objectives
        .iter()
        .map(|f| {
            let mu = (lmin / (S::one() + S::of(f.m() as f64))).sqrt();
            vec![mu; f.m()]
        })
        .collect();
    let sigma_min = objectives.iter().map(|f| f.sigma()).fold(S::infinity(), S::min);
    let p_comp = S::one() - p_comm;
    let s_squared = (spectrum.lambda_max / (p_comm * p_comm))
        .max(lmin * m_max * m_max / ((m_max + S::one()) * p_comp * p_comp))
        / sigma_min;
    Ok(AugmentedProblem {
        graph,
        objectives,
        layout,
        d,
        loss,
        spectrum,
        mu_virtual,
        sampling,
        tau,
        regime: Regime::NonSmooth(NonSmoothParams {
            s_squared,
            sigma_min,
        }),
    })
}

impl<S: Scalar> AugmentedProblem<S> {
    pub fn n(&self) -> usize {
        self.layout.n()
    }

    /// Number of augmented nodes (state rows).
    pub fn rows(&self) -> usize {
        self.layout.rows()
    }

    pub fn sigma(&self, i: usize) -> S {
        self.objectives[i].sigma()
    }

    pub fn smooth(&self) -> Result<&SmoothParams<S>> {
        match &self.regime {
            Regime::Smooth(p) => Ok(p),
            Regime::NonSmooth(_) => Err(Error::NonSmooth("problem was built for a non-smooth loss".into())),
        }
    }

    pub fn non_smooth(&self) -> Result<&NonSmoothParams<S>> {
        match &self.regime {
            Regime::NonSmooth(p) => Ok(p),
            Regime::Smooth(_) => Err(Error::Smooth("problem was built for a smooth loss".into())),
        }
    }

    pub fn is_smooth(&self) -> bool {
        matches!(self.regime, Regime::Smooth(_))
    }

    /// Linear rate `ρ` of the smooth solver.
    pub fn rho(&self) -> Result<S> {
        Ok(self.smooth()?.rate.rho)
    }

    /// Lower bound `α/2` on the strong convexity of the dual on `Ker(A)^⊥`.
    pub fn sigma_a_bound(&self) -> Result<S> {
        Ok(self.smooth()?.alpha / S::of(2.0))
    }

    /// `L_ij`, or `None` in the non-smooth case.
    pub fn smoothness(&self, i: usize, j: usize) -> Option<S> {
        match &self.regime {
            Regime::Smooth(p) => Some(p.smoothness[i][j]),
            Regime::NonSmooth(_) => None,
        }
    }

    pub fn sample(&self, i: usize, j: usize) -> &crate::objective::Sample<S> {
        &self.objectives[i].samples()[j]
    }

    pub fn zero_state(&self) -> Mat<S> {
        Mat::zeros(self.rows(), self.d)
    }

    /// `Σ†` applied to the virtual row `(i, j)`: `y/L_ij` (rows stay in
    /// `span(X_ij)`), or zero in the non-smooth case.
    fn virtual_sigma_dagger_coef(&self, i: usize, j: usize) -> S {
        self.smoothness(i, j).map_or(S::zero(), |l| S::one() / l)
    }

    /// Gradient contribution of the pair `(i, j)` inside a computation block:
    /// `(μ_ij²/p_ij) P_ij (y_i/σ_i − Σ†_ij y_ij)`. The center row receives `+g`,
    /// the virtual row `−g`.
    pub fn pair_gradient(&self, i: usize, j: usize, y_center: &[S], y_virtual: &[S]) -> Vec<S> {
        let mu = self.mu_virtual[i][j];
        let scale = mu * mu / self.sampling.p_virtual(i, j);
        let inv_sigma = S::one() / self.sigma(i);
        let inv_l = self.virtual_sigma_dagger_coef(i, j);
        let diff: Vec<S> = y_center
            .iter()
            .zip(y_virtual)
            .map(|(&c, &v)| c * inv_sigma - v * inv_l)
            .collect();
        self.sample(i, j)
            .project(&diff)
            .into_iter()
            .map(|x| x * scale)
            .collect()
    }

    /// `W_b Σ† Y` for the drawn block, computed edge-wise.
    pub fn apply_wb_sigma_dagger(&self, draw: &BlockDraw, y: &Mat<S>) -> Mat<S> {
        match draw {
            BlockDraw::Communication => apply_comm_step(self, y),
            BlockDraw::Computation(chosen) => {
                let mut out = self.zero_state();
                for (i, &j) in chosen.iter().enumerate() {
                    let r = self.layout.virtual_row(i, j);
                    let g = self.pair_gradient(i, j, y.row(i), y.row(r));
                    out.row_mut(i).copy_from_slice(&g);
                    for (o, gi) in out.row_mut(r).iter_mut().zip(&g) {
                        *o = -*gi;
                    }
                }
                out
            }
        }
    }

    /// `W̃_b Δ` for `Δ` in the range of the block's columns of `A`.
    pub fn apply_wtilde(&self, draw: &BlockDraw, delta: &Mat<S>) -> Mat<S> {
        let mut out = self.zero_state();
        match draw {
            BlockDraw::Communication => {
                let inv = S::one() / self.sampling.p_comm();
                for i in 0..self.n() {
                    for (o, &x) in out.row_mut(i).iter_mut().zip(delta.row(i)) {
                        *o = x * inv;
                    }
                }
            }
            BlockDraw::Computation(chosen) => {
                for (i, &j) in chosen.iter().enumerate() {
                    let inv = S::one() / self.sampling.p_virtual(i, j);
                    let r = self.layout.virtual_row(i, j);
                    for row in [i, r] {
                        for (o, &x) in out.row_mut(row).iter_mut().zip(delta.row(row)) {
                            *o = x * inv;
                        }
                    }
                }
            }
        }
        out
    }

    /// [`apply_wtilde`](Self::apply_wtilde) after checking that `Δ` lies in
    /// the range it assumes.
    pub fn apply_wtilde_checked(&self, draw: &BlockDraw, delta: &Mat<S>) -> Result<Mat<S>> {
        let scale = delta.max_abs().max(S::min_positive_value());
        let mut residual = S::zero();
        let d = self.d;
        match draw {
            BlockDraw::Communication => {
                for c in 0..d {
                    let s: S = (0..self.n()).map(|i| delta[(i, c)]).sum();
                    residual = residual.max(s.abs());
                }
                for r in self.n()..self.rows() {
                    residual = residual.max(delta.row(r).iter().fold(S::zero(), |m, x| m.max(x.abs())));
                }
            }
            BlockDraw::Computation(chosen) => {
                let mut touched = vec![false; self.rows()];
                for (i, &j) in chosen.iter().enumerate() {
                    let r = self.layout.virtual_row(i, j);
                    touched[i] = true;
                    touched[r] = true;
                    let s = self.sample(i, j);
                    let v = delta.row(r);
                    for ((&a, &b), &pb) in delta.row(i).iter().zip(v).zip(&s.project(v)) {
                        residual = residual.max((a + b).abs()).max((b - pb).abs());
                    }
                }
                for (r, _) in touched.iter().enumerate().filter(|(_, t)| !**t) {
                    residual = residual.max(delta.row(r).iter().fold(S::zero(), |m, x| m.max(x.abs())));
                }
            }
        }
        if residual > S::tol(1e-6) * scale {
            return Err(Error::OutOfRange(residual.as_f64()));
        }
        Ok(self.apply_wtilde(draw, delta))
    }

    /// `E[T(K)] = (p_comp + τ p_comm) K`.
    pub fn expected_time(&self, k: u64) -> S {
        (self.sampling.p_comp() + self.tau * self.sampling.p_comm()) * S::of(k as f64)
    }

    /// Predicted time per `log(1/ε)`: `ρ⁻¹ (p_comp + τ p_comm)`.
    pub fn time_per_log_epsilon(&self) -> Result<S> {
        Ok(self.expected_time(1) / self.rho()?)
    }

    /// Balancing communication probability `p*`; `None` for one node.
    pub fn optimal_p_comm(&self) -> Result<Option<S>> {
        let p = self.smooth()?;
        Ok(match (self.spectrum.gamma, p.kappa_comm) {
            (Some(g), Some(kc)) => Some(p_star(g, kc, p.s_max)),
            _ => None,
        })
    }

    /// Bound `√2 (m + √(m κ_s)) + τ √(κ_comm/γ)` on the time per `log(1/ε)`
    /// at the optimal communication probability.
    pub fn time_bound_per_log_epsilon(&self) -> Result<S> {
        let p = self.smooth()?;
        let comm = match (p.kappa_comm, self.spectrum.gamma) {
            (Some(kc), Some(g)) => self.tau * (kc / g).sqrt(),
            _ => S::zero(),
        };
        Ok(S::of(2.0).sqrt() * p.s_max + comm)
    }
}

/// Rate for a given communication probability, with the clamp applied.
pub fn rate_rho<S: Scalar>(problem: &AugmentedProblem<S>, p_comm: S) -> Result<RateBreakdown<S>> {
    let params = problem.smooth()?;
    if !(p_comm >= S::zero() && p_comm < S::one()) {
        return Err(Error::InvalidArgument(format!("p_comm = {p_comm} must lie in [0, 1)")));
    }
    Ok(rate_for(params, &problem.spectrum, &problem.sampling, p_comm))
}

/// `E[T(K)] = (p_comp + τ p_comm) K`.
pub fn expected_time<S: Scalar>(problem: &AugmentedProblem<S>, k: u64) -> S {
    problem.expected_time(k)
}

/// `W_comm Σ† Y = (1/p_comm) L Σ_comm⁻¹ Y_comm`, computed edge by edge. Only
/// communication rows are non-zero.
pub fn apply_comm_step<S: Scalar>(problem: &AugmentedProblem<S>, y: &Mat<S>) -> Mat<S> {
    let mut out = problem.zero_state();
    let p = problem.sampling.p_comm();
    if p == S::zero() {
        return out;
    }
    let inv_p = S::one() / p;
    let g = &problem.graph;
    for (&(k, l), &mu) in g.edges().iter().zip(g.weights()) {
        let w = mu * mu * inv_p;
        let (sk, sl) = (S::one() / problem.sigma(k), S::one() / problem.sigma(l));
        for c in 0..problem.d {
            let diff = w * (y[(k, c)] * sk - y[(l, c)] * sl);
            out[(k, c)] += diff;
            out[(l, c)] -= diff;
        }
    }
    out
}

/// Dense matrices of the augmented problem, for validation on small
/// instances. Vectors are state matrices flattened row-major
/// (`node · d + coordinate`); edge coordinates list communication edges
/// first, then virtual edges in row order.
pub mod dense {
    use super::*;
    use crate::linalg::{pinv, pinv_symmetric, range_projector};

    pub const MAX_DENSE_ROWS: usize = 5000;
    const PINV_TOL: f64 = 1e-10;

    fn guard<S: Scalar>(p: &AugmentedProblem<S>) -> Result<()> {
        let rows = p.rows() * p.d;
        if rows > MAX_DENSE_ROWS {
            return Err(Error::TooLarge {
                rows,
                limit: MAX_DENSE_ROWS,
            });
        }
        Ok(())
    }

    pub fn num_edge_coords<S: Scalar>(p: &AugmentedProblem<S>) -> usize {
        (p.graph.num_edges() + p.layout.num_virtual()) * p.d
    }

    fn projector<S: Scalar>(p: &AugmentedProblem<S>, i: usize, j: usize) -> Mat<S> {
        let s = p.sample(i, j);
        let x = s.features();
        Mat::from_fn(p.d, p.d, |a, b| x[a] * x[b] / s.squared_norm())
    }

    /// Column index of the first coordinate of virtual edge (i, j).
    pub fn virtual_edge_col<S: Scalar>(p: &AugmentedProblem<S>, i: usize, j: usize) -> usize {
        (p.graph.num_edges() + p.layout.virtual_index(i, j)) * p.d
    }

    /// The constraint operator `A`.
    pub fn dense_a<S: Scalar>(p: &AugmentedProblem<S>) -> Result<Mat<S>> {
        guard(p)?;
        let d = p.d;
        let mut a = Mat::zeros(p.rows() * d, num_edge_coords(p));
        for (e, (&(k, l), &mu)) in p.graph.edges().iter().zip(p.graph.weights()).enumerate() {
            for c in 0..d {
                a[(k * d + c, e * d + c)] = mu;
                a[(l * d + c, e * d + c)] = -mu;
            }
        }
        for (i, j) in p.layout.virtual_edges() {
            let mu = p.mu_virtual[i][j];
            let proj = projector(p, i, j);
            let col = virtual_edge_col(p, i, j);
            let r = p.layout.virtual_row(i, j);
            for a_ in 0..d {
                for b in 0..d {
                    a[(i * d + a_, col + b)] = mu * proj[(a_, b)];
                    a[(r * d + a_, col + b)] = -mu * proj[(a_, b)];
                }
            }
        }
        Ok(a)
    }

    /// `Σ†`: `I/σ_i` on centers, `P_ij/L_ij` on virtual nodes (zero when non-smooth).
    pub fn dense_sigma_dagger<S: Scalar>(p: &AugmentedProblem<S>) -> Result<Mat<S>> {
        guard(p)?;
        let d = p.d;
        let mut s = Mat::zeros(p.rows() * d, p.rows() * d);
        for i in 0..p.n() {
            for c in 0..d {
                s[(i * d + c, i * d + c)] = S::one() / p.sigma(i);
            }
        }
        for (i, j) in p.layout.virtual_edges() {
            let coef = p.virtual_sigma_dagger_coef(i, j);
            let proj = projector(p, i, j);
            let r = p.layout.virtual_row(i, j);
            for a in 0..d {
                for b in 0..d {
                    s[(r * d + a, r * d + b)] = coef * proj[(a, b)];
                }
            }
        }
        Ok(s)
    }

    /// Diagonal of `P_b†` over edge coordinates.
    pub fn block_scaling<S: Scalar>(p: &AugmentedProblem<S>, draw: &BlockDraw) -> Vec<S> {
        let d = p.d;
        let mut diag = vec![S::zero(); num_edge_coords(p)];
        match draw {
            BlockDraw::Communication => {
                let inv = S::one() / p.sampling.p_comm();
                for x in diag.iter_mut().take(p.graph.num_edges() * d) {
                    *x = inv;
                }
            }
            BlockDraw::Computation(chosen) => {
                for (i, &j) in chosen.iter().enumerate() {
                    let col = virtual_edge_col(p, i, j);
                    let inv = S::one() / p.sampling.p_virtual(i, j);
                    for x in &mut diag[col..col + d] {
                        *x = inv;
                    }
                }
            }
        }
        diag
    }

    fn scale_columns<S: Scalar>(a: &Mat<S>, diag: &[S]) -> Mat<S> {
        Mat::from_fn(a.rows(), a.cols(), |r, c| a[(r, c)] * diag[c])
    }

    /// `W_b = A P_b† Aᵀ`.
    pub fn dense_wb<S: Scalar>(p: &AugmentedProblem<S>, draw: &BlockDraw) -> Result<Mat<S>> {
        let a = dense_a(p)?;
        scale_columns(&a, &block_scaling(p, draw)).matmul(&a.transpose())
    }

    /// `W̃_b = A P_b† A†`.
    pub fn dense_wtilde<S: Scalar>(p: &AugmentedProblem<S>, draw: &BlockDraw) -> Result<Mat<S>> {
        let a = dense_a(p)?;
        let a_pinv = pinv(&a, S::of(PINV_TOL))?;
        scale_columns(&a, &block_scaling(p, draw)).matmul(&a_pinv)
    }

    /// `A†A`, the orthogonal projector onto `Ker(A)^⊥`.
    pub fn dense_ata_projector<S: Scalar>(p: &AugmentedProblem<S>) -> Result<Mat<S>> {
        let a = dense_a(p)?;
        range_projector(&a.transpose().matmul(&a)?, S::of(PINV_TOL))
    }

    /// `AᵀΣ†A`, the Hessian of the dual quadratic.
    pub fn dense_dual_hessian<S: Scalar>(p: &AugmentedProblem<S>) -> Result<Mat<S>> {
        let a = dense_a(p)?;
        a.transpose().matmul(&dense_sigma_dagger(p)?)?.matmul(&a)
    }

    /// `λ_min⁺(AᵀΣ†A)`.
    pub fn sigma_a_exact<S: Scalar>(p: &AugmentedProblem<S>) -> Result<S> {
        let spec = symmetric_eigensolve(&dense_dual_hessian(p)?, S::of(DEFAULT_ZERO_TOL), false)?;
        spec.lambda_min_pos()
            .ok_or_else(|| Error::InvalidArgument("dual Hessian vanishes".into()))
    }

    /// `λ_min⁺(A_commᵀ D̃⁻¹ A_comm)` from the E × E form.
    pub fn comm_curvature_min_pos<S: Scalar>(p: &AugmentedProblem<S>) -> Result<S> {
        let params = p.smooth()?;
        let inc = p.graph.incidence();
        let inv_dt: Vec<S> = params.dm_tilde.iter().map(|&x| S::one() / x).collect();
        let m = inc.transpose().matmul(&Mat::diag(&inv_dt))?.matmul(&inc)?;
        symmetric_eigensolve(&m, S::of(DEFAULT_ZERO_TOL), false)?
            .lambda_min_pos()
            .ok_or_else(|| Error::Graph("no communication edges".into()))
    }

    /// `λ_max(A†A P_b† M P_b† A†A)` with `M = AᵀΣ†A`.
    pub fn block_smoothness<S: Scalar>(p: &AugmentedProblem<S>, draw: &BlockDraw) -> Result<S> {
        let proj = dense_ata_projector(p)?;
        let m = dense_dual_hessian(p)?;
        let diag = block_scaling(p, draw);
        let pm = Mat::from_fn(m.rows(), m.cols(), |r, c| diag[r] * m[(r, c)] * diag[c]);
        let full = proj.matmul(&pm)?.matmul(&proj)?;
        Ok(symmetric_eigensolve(&full, S::of(DEFAULT_ZERO_TOL), false)?.lambda_max())
    }

    /// `ρ_dense = min_b √(λ_min⁺(AᵀΣ†A) / λ_max(A†A P_b† M P_b† A†A))` over the
    /// communication block and every computation block.
    pub fn rho_dense<S: Scalar>(p: &AugmentedProblem<S>) -> Result<S> {
        let sigma_a = sigma_a_exact(p)?;
        let mut worst = S::zero();
        if p.sampling.p_comm() > S::zero() {
            worst = worst.max(block_smoothness(p, &BlockDraw::Communication)?);
        }
        let n = p.n();
        let mut chosen = vec![0usize; n];
        loop {
            worst = worst.max(block_smoothness(p, &BlockDraw::Computation(chosen.clone()))?);
            let mut k = 0;
            while k < n {
                chosen[k] += 1;
                if chosen[k] < p.layout.m(k) {
                    break;
                }
                chosen[k] = 0;
                k += 1;
            }
            if k == n {
                break;
            }
        }
        Ok((sigma_a / worst).sqrt())
    }

    /// Pseudo-inverse of a symmetric matrix with the tolerance used here.
    pub fn pinv_sym<S: Scalar>(m: &Mat<S>) -> Result<Mat<S>> {
        pinv_symmetric(m, S::of(PINV_TOL))
    }

    /// Flattens a state matrix into a vector indexed by `node · d + coordinate`.
    pub fn flatten<S: Scalar>(m: &Mat<S>) -> Vec<S> {
        m.as_slice().to_vec()
    }

    pub fn unflatten<S: Scalar>(p: &AugmentedProblem<S>, v: Vec<S>) -> Result<Mat<S>> {
        Mat::from_vec(p.rows(), p.d, v)
    }
}
