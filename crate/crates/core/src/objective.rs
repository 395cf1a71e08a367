//! Per-sample linear-model losses, their proximal operators, and condition
//! numbers of the local objectives `f_i(θ) = Σ_j ℓ(X_ijᵀθ) + (σ_i/2)‖θ‖²`.

use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigensolve, Mat, DEFAULT_ZERO_TOL};
use crate::scalar::{all_finite, axpy, dot, norm_sq, Scalar};

const NEWTON_STEPS: usize = 10;
const BISECTION_STEPS: usize = 30;
const NEWTON_TOL: f64 = 1e-12;
const SPAN_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    /// `log(1 + exp(−label·z))`, labels in {−1, +1}.
    Logistic,
    /// `(z − label)² / 2`.
    Squared,
    /// `|z − label|`, non-smooth.
    Absolute,
}

impl LossKind {
    /// Smoothness constant `L_g` of the scalar loss, `None` when non-smooth.
    pub fn scalar_smoothness<S: Scalar>(self) -> Option<S> {
        match self {
            LossKind::Logistic => Some(S::of(0.25)),
            LossKind::Squared => Some(S::one()),
            LossKind::Absolute => None,
        }
    }

    pub fn is_smooth(self) -> bool {
        self != LossKind::Absolute
    }

    pub fn value<S: Scalar>(self, z: S, label: S) -> S {
        match self {
            LossKind::Logistic => softplus(-label * z),
            LossKind::Squared => (z - label).powi(2) / S::of(2.0),
            LossKind::Absolute => (z - label).abs(),
        }
    }

    /// Derivative in `z` (a subgradient for the absolute loss).
    pub fn derivative<S: Scalar>(self, z: S, label: S) -> S {
        match self {
            LossKind::Logistic => -label * sigmoid(-label * z),
            LossKind::Squared => z - label,
            LossKind::Absolute => {
                if z == label {
                    S::zero()
                } else {
                    (z - label).signum()
                }
            }
        }
    }

    /// Fenchel conjugate `ℓ*(s)`; `+∞` outside its domain.
    pub fn conjugate<S: Scalar>(self, s: S, label: S) -> S {
        match self {
            LossKind::Logistic => {
                let u = -s * label;
                if u < S::zero() || u > S::one() {
                    S::infinity()
                } else {
                    xlogx(u) + xlogx(S::one() - u)
                }
            }
            LossKind::Squared => s * s / S::of(2.0) + s * label,
            LossKind::Absolute => {
                if s.abs() > S::one() {
                    S::infinity()
                } else {
                    s * label
                }
            }
        }
    }

    /// Greatest lower bound of the loss over `z`.
    pub fn infimum<S: Scalar>(self) -> S {
        S::zero()
    }
}

fn softplus<S: Scalar>(x: S) -> S {
    if x > S::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

fn xlogx<S: Scalar>(x: S) -> S {
    if x == S::zero() {
        S::zero()
    } else {
        x * x.ln()
    }
}

pub fn loss_value<S: Scalar>(kind: LossKind, z: S, label: S) -> S {
    kind.value(z, label)
}

pub fn loss_grad<S: Scalar>(kind: LossKind, z: S, label: S) -> S {
    kind.derivative(z, label)
}

/// `argmin_v (1/(2·step))(v − z)² + ℓ(v)`.
///
/// Logistic uses Newton from `warm`; if an iterate leaves
/// `[min(z,warm) − 10·step, max(z,warm) + 10·step]` or the step count runs out,
/// it falls back to bisection on `[z − step, z + step]` (which contains the
/// solution since `|ℓ'| < 1`) followed by a short Newton polish.
pub fn loss_prox_1d<S: Scalar>(kind: LossKind, z: S, label: S, step: S, warm: S) -> Result<S> {
    if !(z.is_finite() && label.is_finite() && step.is_finite() && warm.is_finite()) {
        return Err(Error::NonFinite("loss_prox_1d input".into()));
    }
    if !(step > S::zero()) {
        return Err(Error::InvalidArgument(format!("prox step {step} must be positive")));
    }
    Ok(match kind {
        LossKind::Squared => (z + step * label) / (S::one() + step),
        LossKind::Absolute => {
            let r = z - label;
            label + r.signum() * (r.abs() - step).max(S::zero())
        }
        LossKind::Logistic => logistic_prox(z, label, step, warm),
    })
}

fn logistic_prox<S: Scalar>(z: S, label: S, step: S, warm: S) -> S {
    let inv = S::one() / step;
    let phi = |v: S| (v - z) * inv - label * sigmoid(-label * v);
    let dphi = |v: S| {
        let s = sigmoid(label * v);
        inv + s * (S::one() - s)
    };
    let ten = S::of(10.0);
    let lo = z.min(warm) - ten * step;
    let hi = z.max(warm) + ten * step;
    let tol = S::tol(NEWTON_TOL);

    let mut v = warm;
    for _ in 0..NEWTON_STEPS {
        let delta = phi(v) / dphi(v);
        v -= delta;
        if !(v >= lo && v <= hi) {
            break;
        }
        if delta.abs() <= tol * (S::one() + v.abs()) {
            return v;
        }
    }

    let (mut a, mut b) = (z - step, z + step);
    for _ in 0..BISECTION_STEPS {
        let mid = (a + b) / S::of(2.0);
        if phi(mid) > S::zero() {
            b = mid;
        } else {
            a = mid;
        }
    }
    let mut v = (a + b) / S::of(2.0);
    for _ in 0..NEWTON_STEPS {
        let delta = phi(v) / dphi(v);
        v -= delta;
        if delta.abs() <= tol * (S::one() + v.abs()) {
            break;
        }
    }
    v
}

/// Data point `(X, label)` with cached `‖X‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<S> {
    features: Vec<S>,
    label: S,
    squared_norm: S,
}

impl<S: Scalar> Sample<S> {
    pub fn new(features: Vec<S>, label: S) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Sample("empty feature vector".into()));
        }
        if !all_finite(&features) || !label.is_finite() {
            return Err(Error::Sample("non-finite feature or label".into()));
        }
        let squared_norm = norm_sq(&features);
        if !(squared_norm > S::zero()) {
            return Err(Error::Sample(
                "all-zero feature vector has no projector".into(),
            ));
        }
        Ok(Self {
            features,
            label,
            squared_norm,
        })
    }

    pub fn features(&self) -> &[S] {
        &self.features
    }

    pub fn label(&self) -> S {
        self.label
    }

    pub fn squared_norm(&self) -> S {
        self.squared_norm
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    /// `P x = (Xᵀx / ‖X‖²) X`.
    pub fn project(&self, x: &[S]) -> Vec<S> {
        let c = self.coefficient(x);
        self.features.iter().map(|&f| c * f).collect()
    }

    /// `Xᵀx / ‖X‖²`, the coordinate of `P x` along `X`.
    pub fn coefficient(&self, x: &[S]) -> S {
        dot(&self.features, x) / self.squared_norm
    }

    /// Errors unless `x` lies in `span(X)` up to a relative tolerance.
    pub fn check_in_span(&self, x: &[S]) -> Result<()> {
        let c = self.coefficient(x);
        let off: S = x
            .iter()
            .zip(&self.features)
            .map(|(&xi, &fi)| (xi - c * fi).powi(2))
            .sum::<S>()
            .sqrt();
        let scale = norm_sq(x).sqrt();
        if off > S::tol(SPAN_TOL) * scale {
            return Err(Error::OutOfRange((off / scale).as_f64()));
        }
        Ok(())
    }
}

/// Returns `(prox_{η f}(v), p*)` for `f(θ) = ℓ(Xᵀθ)`, where `p*` is the
/// solution of the induced one-dimensional problem (the next warm start).
pub fn prox_sample<S: Scalar>(
    s: &Sample<S>,
    kind: LossKind,
    v: &[S],
    eta: S,
    warm: S,
) -> Result<(Vec<S>, S)> {
    let z = dot(&s.features, v);
    let p = loss_prox_1d(kind, z, s.label, eta * s.squared_norm, warm)?;
    let mut out = v.to_vec();
    axpy((p - z) / s.squared_norm, &s.features, &mut out);
    Ok((out, p))
}

/// Prox of `f̃* = f* − (1/(2L))‖·‖²_P` with step `η̃ < L`, through
/// `(1 − η̃/L) prox_{η̃f̃*}(x) = x − η̃ prox_{(1/η̃ − 1/L) f}(x/η̃)`.
pub fn prox_tilde_fstar<S: Scalar>(
    s: &Sample<S>,
    kind: LossKind,
    x: &[S],
    eta_tilde: S,
    warm: S,
) -> Result<(Vec<S>, S)> {
    let lg = kind.scalar_smoothness::<S>().ok_or_else(|| {
        Error::NonSmooth("the smoothed conjugate needs a smooth loss".into())
    })?;
    let l = lg * s.squared_norm;
    if !(eta_tilde > S::zero()) || eta_tilde >= l {
        return Err(Error::InvalidArgument(format!(
            "conjugate prox step {eta_tilde} must lie in (0, L = {l})"
        )));
    }
    s.check_in_span(x)?;
    let c = S::one() / eta_tilde - S::one() / l;
    let w: Vec<S> = x.iter().map(|&xi| xi / eta_tilde).collect();
    let (p, scalar) = prox_sample(s, kind, &w, c, warm)?;
    let denom = S::one() - eta_tilde / l;
    let out = x
        .iter()
        .zip(&p)
        .map(|(&xi, &pi)| (xi - eta_tilde * pi) / denom)
        .collect();
    Ok((out, scalar))
}

/// `prox_{η f*}(x) = x − η prox_{f/η}(x/η)`.
pub fn prox_fstar<S: Scalar>(
    s: &Sample<S>,
    kind: LossKind,
    x: &[S],
    eta: S,
    warm: S,
) -> Result<(Vec<S>, S)> {
    if !(eta > S::zero()) {
        return Err(Error::InvalidArgument(format!("prox step {eta} must be positive")));
    }
    let w: Vec<S> = x.iter().map(|&xi| xi / eta).collect();
    let (p, scalar) = prox_sample(s, kind, &w, S::one() / eta, warm)?;
    Ok((
        x.iter().zip(&p).map(|(&xi, &pi)| xi - eta * pi).collect(),
        scalar,
    ))
}

/// `f*(x)` for `f = ℓ(Xᵀ·)`: `ℓ*(s)` when `x = sX`, `+∞` off the span.
pub fn fstar_value<S: Scalar>(s: &Sample<S>, kind: LossKind, x: &[S]) -> S {
    if norm_sq(x) == S::zero() {
        return kind.conjugate(S::zero(), s.label);
    }
    if s.check_in_span(x).is_err() {
        return S::infinity();
    }
    kind.conjugate(s.coefficient(x), s.label)
}

/// One node's objective `Σ_j ℓ(X_jᵀθ) + (σ/2)‖θ‖²`.
#[derive(Debug, Clone)]
pub struct LocalObjective<S> {
    samples: Vec<Sample<S>>,
    sigma: S,
    loss: LossKind,
}

impl<S: Scalar> LocalObjective<S> {
    pub fn new(samples: Vec<Sample<S>>, sigma: S, loss: LossKind) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("a node needs at least one sample".into()));
        }
        if !(sigma > S::zero()) || !sigma.is_finite() {
            return Err(Error::InvalidArgument(format!("sigma {sigma} must be positive")));
        }
        let d = samples[0].dim();
        if let Some(j) = samples.iter().position(|s| s.dim() != d) {
            return Err(Error::Sample(format!(
                "sample {j} has dimension {} instead of {d}",
                samples[j].dim()
            )));
        }
        if loss == LossKind::Logistic {
            if let Some(j) = samples
                .iter()
                .position(|s| s.label() != S::one() && s.label() != -S::one())
            {
                return Err(Error::Sample(format!(
                    "sample {j} has label {} but logistic loss needs ±1",
                    samples[j].label()
                )));
            }
        }
        Ok(Self {
            samples,
            sigma,
            loss,
        })
    }

    pub fn samples(&self) -> &[Sample<S>] {
        &self.samples
    }

    pub fn sigma(&self) -> S {
        self.sigma
    }

    pub fn loss(&self) -> LossKind {
        self.loss
    }

    pub fn m(&self) -> usize {
        self.samples.len()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].dim()
    }

    /// `L_ij = L_g ‖X_ij‖²`, `None` for non-smooth losses.
    pub fn smoothness(&self, j: usize) -> Option<S> {
        self.loss
            .scalar_smoothness::<S>()
            .map(|lg| lg * self.samples[j].squared_norm())
    }

    pub fn value(&self, theta: &[S]) -> S {
        let data: S = self
            .samples
            .iter()
            .map(|s| self.loss.value(dot(s.features(), theta), s.label()))
            .sum();
        data + self.sigma * norm_sq(theta) / S::of(2.0)
    }

    pub fn grad(&self, theta: &[S]) -> Vec<S> {
        let mut g: Vec<S> = theta.iter().map(|&t| self.sigma * t).collect();
        for s in &self.samples {
            let d = self.loss.derivative(dot(s.features(), theta), s.label());
            axpy(d, s.features(), &mut g);
        }
        g
    }

    /// `Σ_j L_ij P_ij` as a dense d × d matrix.
    pub fn curvature_matrix(&self) -> Result<Mat<S>> {
        let d = self.dim();
        let mut m = Mat::zeros(d, d);
        for (j, s) in self.samples.iter().enumerate() {
            let l = self
                .smoothness(j)
                .ok_or_else(|| Error::NonSmooth("curvature matrix undefined".into()))?;
            let w = l / s.squared_norm();
            for a in 0..d {
                for b in 0..d {
                    m[(a, b)] += w * s.features()[a] * s.features()[b];
                }
            }
        }
        Ok(m)
    }

    /// `λ_max(Σ_j L_ij P_ij)`.
    pub fn batch_smoothness(&self) -> Result<S> {
        Ok(symmetric_eigensolve(&self.curvature_matrix()?, S::of(DEFAULT_ZERO_TOL), false)?
            .lambda_max())
    }
}

#[derive(Debug, Clone)]
pub struct ConditionReport<S> {
    /// `κ_i = 1 + σ_i⁻¹ Σ_j L_ij`.
    pub kappa_i: Vec<S>,
    /// `max_i κ_i`.
    pub kappa_s: S,
    /// `(σ_i + λ_max(Σ_j L_ij P_ij)) / σ_i`.
    pub kappa_b: Vec<S>,
}

pub fn condition_numbers<S: Scalar>(objectives: &[LocalObjective<S>]) -> Result<ConditionReport<S>> {
    let mut kappa_i = Vec::with_capacity(objectives.len());
    let mut kappa_b = Vec::with_capacity(objectives.len());
    for (i, f) in objectives.iter().enumerate() {
        if !f.loss().is_smooth() {
            return Err(Error::NonSmooth(format!(
                "condition numbers undefined for node {i}"
            )));
        }
        let total: S = (0..f.m()).map(|j| f.smoothness(j).unwrap()).sum();
        kappa_i.push(S::one() + total / f.sigma());
        kappa_b.push((f.sigma() + f.batch_smoothness()?) / f.sigma());
    }
    let kappa_s = kappa_i.iter().copied().fold(S::zero(), S::max);
    Ok(ConditionReport {
        kappa_i,
        kappa_s,
        kappa_b,
    })
}

/// `F(θ) = Σ_i f_i(θ)`.
pub fn primal_value<S: Scalar>(objectives: &[LocalObjective<S>], theta: &[S]) -> S {
    objectives.iter().map(|f| f.value(theta)).sum()
}

pub fn primal_grad<S: Scalar>(objectives: &[LocalObjective<S>], theta: &[S]) -> Vec<S> {
    let mut g = vec![S::zero(); theta.len()];
    for f in objectives {
        axpy(S::one(), &f.grad(theta), &mut g);
    }
    g
}

#[cfg(test)]
pub(crate) mod oracle {
    /// Golden-section minimization of a unimodal function on `[a, b]`.
    pub fn golden(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
        let r = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = b - r * (b - a);
        let mut d = a + r * (b - a);
        let (mut fc, mut fd) = (f(c), f(d));
        for _ in 0..200 {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - r * (b - a);
                fc = f(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + r * (b - a);
                fd = f(d);
            }
            if (b - a).abs() < 1e-14 * (1.0 + a.abs()) {
                break;
            }
        }
        0.5 * (a + b)
    }

    /// `ℓ*(s)` by maximizing `s z − ℓ(z)` over a wide bracket.
    pub fn conjugate_by_max(loss: impl Fn(f64) -> f64, s: f64) -> f64 {
        let z = golden(|z| -(s * z - loss(z)), -60.0, 60.0);
        s * z - loss(z)
    }
}
