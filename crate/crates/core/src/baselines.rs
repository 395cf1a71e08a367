//! Single-machine baselines: Point-SAGA on the pooled samples, and
//! deterministic reference solvers for `θ*` and `F*`.

use crate::adfs::{RunMeta, RunOptions, RunRecord, RunRow};
use crate::augmented::BlockKind;
use crate::error::{Error, Result};
use crate::linalg::{cholesky_solve, symmetric_eigensolve, Mat, DEFAULT_ZERO_TOL};
use crate::objective::{prox_sample, LocalObjective, LossKind, Sample};
use crate::rng::DrawStream;
use crate::scalar::{axpy, dot, norm_sq, Scalar};

/// All samples of all nodes pooled, with `σ_total = Σ_i σ_i`, so that the
/// objective equals `Σ_i f_i`.
#[derive(Debug, Clone)]
pub struct FlatProblem<S> {
    samples: Vec<Sample<S>>,
    sigma_total: S,
    loss: LossKind,
}

impl<S: Scalar> FlatProblem<S> {
    pub fn new(samples: Vec<Sample<S>>, sigma_total: S, loss: LossKind) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("no samples".into()));
        }
        if !(sigma_total > S::zero()) {
            return Err(Error::InvalidArgument(format!("sigma {sigma_total} must be positive")));
        }
        Ok(Self {
            samples,
            sigma_total,
            loss,
        })
    }

    pub fn from_objectives(objectives: &[LocalObjective<S>]) -> Result<Self> {
        let loss = objectives
            .first()
            .ok_or_else(|| Error::InvalidArgument("no nodes".into()))?
            .loss();
        let samples = objectives.iter().flat_map(|f| f.samples().iter().cloned()).collect();
        let sigma = objectives.iter().map(|f| f.sigma()).sum();
        Self::new(samples, sigma, loss)
    }

    pub fn samples(&self) -> &[Sample<S>] {
        &self.samples
    }

    pub fn sigma_total(&self) -> S {
        self.sigma_total
    }

    pub fn loss(&self) -> LossKind {
        self.loss
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].dim()
    }

    pub fn value(&self, theta: &[S]) -> S {
        let data: S = self
            .samples
            .iter()
            .map(|s| self.loss.value(dot(s.features(), theta), s.label()))
            .sum();
        data + self.sigma_total * norm_sq(theta) / S::of(2.0)
    }

    pub fn grad(&self, theta: &[S]) -> Vec<S> {
        let mut g: Vec<S> = theta.iter().map(|&t| self.sigma_total * t).collect();
        for s in &self.samples {
            let d = self.loss.derivative(dot(s.features(), theta), s.label());
            axpy(d, s.features(), &mut g);
        }
        g
    }

    /// `λ_max(Σ_j L_j X_j X_jᵀ/‖X_j‖²) + σ_total`.
    pub fn smoothness(&self) -> Result<S> {
        let lg = self
            .loss
            .scalar_smoothness::<S>()
            .ok_or_else(|| Error::NonSmooth("smoothness of a non-smooth loss".into()))?;
        let d = self.dim();
        let mut m = Mat::zeros(d, d);
        for s in &self.samples {
            let x = s.features();
            for a in 0..d {
                for b in 0..d {
                    m[(a, b)] += lg * x[a] * x[b];
                }
            }
        }
        let top = symmetric_eigensolve(&m, S::of(DEFAULT_ZERO_TOL), false)?.lambda_max();
        Ok(top + self.sigma_total)
    }
}

/// Point-SAGA on `(1/N) Σ_j f_j` with `f_j = ℓ(X_jᵀθ) + (σ_total/(2N))‖θ‖²`,
/// step `γ = (√((N−1)² + 4N L/μ) − (N−1))/(2LN)` with `L = max_j L_j` and
/// `μ = σ_total/N`. The gradient table starts at the gradients at `0`, and
/// every iteration costs one unit of idealized time.
pub fn point_saga<S: Scalar>(problem: &FlatProblem<S>, opts: &RunOptions<S>) -> Result<RunRecord<S>> {
    let lg = problem
        .loss
        .scalar_smoothness::<S>()
        .ok_or_else(|| Error::NonSmooth("Point-SAGA needs a smooth loss".into()))?;
    opts.check()?;
    let n_s = problem.len();
    let nf = S::of(n_s as f64);
    let d = problem.dim();
    let c = problem.sigma_total / nf;
    let l = problem
        .samples
        .iter()
        .map(|s| lg * s.squared_norm())
        .fold(S::zero(), S::max)
        + c;
    let gamma = (((nf - S::one()).powi(2) + S::of(4.0) * nf * l / c).sqrt() - (nf - S::one()))
        / (S::of(2.0) * l * nf);
    let shrink = S::one() + gamma * c;
    let step = gamma / shrink;

    let mut theta = vec![S::zero(); d];
    let mut table: Vec<Vec<S>> = problem
        .samples
        .iter()
        .map(|s| {
            let g = problem.loss.derivative(S::zero(), s.label());
            s.features().iter().map(|&x| g * x).collect()
        })
        .collect();
    let mut avg = vec![S::zero(); d];
    for g in &table {
        axpy(S::one() / nf, g, &mut avg);
    }
    let mut warm = vec![S::zero(); n_s];
    let cumulative = crate::rng::cumulative(std::iter::repeat_n(1.0, n_s));
    let mut rng = DrawStream::new(opts.seed);

    let mut rows = Vec::new();
    let mut log = |t: u64, theta: &[S]| {
        let objective = problem.value(theta).as_f64();
        rows.push(RunRow {
            t,
            time: t as f64,
            objective,
            subopt: opts.f_star.map(|f| objective - f.as_f64()),
            dual_value: None,
            kind: (t > 0).then_some(BlockKind::Computation),
        });
        opts.reached(rows.last().expect("just pushed"))
    };
    let iters = if log(0, &theta) { 0 } else { opts.iters };
    let mut last = 0;
    for t in 1..=iters {
        last = t;
        let j = rng.categorical(&cumulative);
        let s = &problem.samples[j];
        let z: Vec<S> = (0..d)
            .map(|k| theta[k] + gamma * (table[j][k] - avg[k]))
            .collect();
        let arg: Vec<S> = z.iter().map(|&v| v / shrink).collect();
        let (next, p) = prox_sample(s, problem.loss, &arg, step, warm[j])?;
        warm[j] = p;
        let g_new: Vec<S> = z.iter().zip(&next).map(|(&a, &b)| (a - b) / gamma).collect();
        for k in 0..d {
            avg[k] += (g_new[k] - table[j][k]) / nf;
        }
        table[j] = g_new;
        theta = next;
        if !crate::scalar::all_finite(&theta) {
            return Err(Error::Diverged(t as usize));
        }
        if t % opts.log_every == 0 && log(t, &theta) {
            break;
        }
    }
    Ok(RunRecord {
        meta: RunMeta {
            algorithm: "point_saga".into(),
            seed: opts.seed,
            rho: None,
            p_comm: 0.0,
            tau: 0.0,
            n: 1,
            m: n_s,
            d,
            dataset: String::new(),
        },
        rows,
        theta,
        final_time: last as f64,
    })
}

const MAX_REFERENCE_ITERS: usize = 1_000_000;

/// High-accuracy `(θ*, F*)`. Squared loss solves the normal equations;
/// logistic loss runs accelerated gradient descent until
/// `‖∇F‖ ≤ tol·σ_total`; absolute loss solves the dual box QP (see
/// [`ns_reference`]) until the duality gap is below `tol·(1 + |F|)`.
pub fn reference_optimum<S: Scalar>(problem: &FlatProblem<S>, tol: S) -> Result<(Vec<S>, S)> {
    if !(tol > S::zero()) {
        return Err(Error::InvalidArgument(format!("tol {tol} must be positive")));
    }
    match problem.loss {
        LossKind::Squared => {
            let d = problem.dim();
            let mut m = Mat::identity(d).scale(problem.sigma_total);
            let mut rhs = vec![S::zero(); d];
            for s in &problem.samples {
                let x = s.features();
                for a in 0..d {
                    for b in 0..d {
                        m[(a, b)] += x[a] * x[b];
                    }
                }
                axpy(s.label(), x, &mut rhs);
            }
            let theta = cholesky_solve(&m, &rhs)?;
            let f = problem.value(&theta);
            Ok((theta, f))
        }
        LossKind::Logistic => {
            let l = problem.smoothness()?;
            let mu = problem.sigma_total;
            let q = (mu / l).sqrt();
            let momentum = (S::one() - q) / (S::one() + q);
            let d = problem.dim();
            let mut x = vec![S::zero(); d];
            let mut y = x.clone();
            let target = tol * mu;
            let mut last = S::infinity();
            for _ in 0..MAX_REFERENCE_ITERS {
                let gx = problem.grad(&x);
                last = norm_sq(&gx).sqrt();
                if last <= target {
                    let f = problem.value(&x);
                    return Ok((x, f));
                }
                let gy = problem.grad(&y);
                let next: Vec<S> = y.iter().zip(&gy).map(|(&a, &g)| a - g / l).collect();
                y = next
                    .iter()
                    .zip(&x)
                    .map(|(&nx, &px)| nx + momentum * (nx - px))
                    .collect();
                x = next;
            }
            Err(Error::NotConverged(format!("gradient norm {last} after {MAX_REFERENCE_ITERS} iterations")))
        }
        LossKind::Absolute => {
            let r = ns_reference(problem, tol)?;
            Ok((r.theta, r.primal_value))
        }
    }
}

/// Solution of the absolute-loss problem through its dual
/// `min_{|c_j| ≤ 1} Σ_j c_j y_j + ‖Σ_j c_j X_j‖²/(2σ)`, with
/// `θ = −Σ_j c_j X_j / σ`.
#[derive(Debug, Clone)]
pub struct NsReference<S> {
    pub theta: Vec<S>,
    pub coefficients: Vec<S>,
    pub primal_value: S,
    /// Value of the dual objective at `coefficients`; `−F*` up to the gap.
    pub dual_value: S,
    pub gap: S,
}

/// Exact cyclic coordinate descent on the dual box QP, stopped when the
/// duality gap is below `tol·(1 + |F|)`.
pub fn ns_reference<S: Scalar>(problem: &FlatProblem<S>, tol: S) -> Result<NsReference<S>> {
    if problem.loss != LossKind::Absolute {
        return Err(Error::Smooth("the box-QP dual is for the absolute loss".into()));
    }
    let sigma = problem.sigma_total;
    let d = problem.dim();
    let n_s = problem.len();
    let mut c = vec![S::zero(); n_s];
    let mut s = vec![S::zero(); d];
    let mut gap = S::infinity();
    for _ in 0..MAX_REFERENCE_ITERS / 10 {
        for (j, sample) in problem.samples.iter().enumerate() {
            let x = sample.features();
            let rest = dot(x, &s) - c[j] * sample.squared_norm();
            let cj = (-(sigma * sample.label() + rest) / sample.squared_norm())
                .max(-S::one())
                .min(S::one());
            if cj != c[j] {
                axpy(cj - c[j], x, &mut s);
                c[j] = cj;
            }
        }
        // Recompute s to keep rounding from accumulating.
        s = vec![S::zero(); d];
        for (sample, &cj) in problem.samples.iter().zip(&c) {
            axpy(cj, sample.features(), &mut s);
        }
        let theta: Vec<S> = s.iter().map(|&v| -v / sigma).collect();
        let primal = problem.value(&theta);
        let dual = problem
            .samples
            .iter()
            .zip(&c)
            .map(|(sm, &cj)| cj * sm.label())
            .sum::<S>()
            + norm_sq(&s) / (S::of(2.0) * sigma);
        gap = primal + dual;
        if gap <= tol * (S::one() + primal.abs()) {
            return Ok(NsReference {
                theta,
                coefficients: c,
                primal_value: primal,
                dual_value: dual,
                gap,
            });
        }
    }
    Err(Error::NotConverged(format!("duality gap {gap}")))
}
