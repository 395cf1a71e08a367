//! Small dense linear algebra: row-major matrices, a cyclic Jacobi
//! eigensolver, symmetric pseudo-inverses and Cholesky solves.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Mat<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = S::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn diag(values: &[S]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<S> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [S] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "{}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == S::zero() {
                    continue;
                }
                let src = other.row(k);
                for (o, &b) in out.row_mut(i).iter_mut().zip(src) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, x: &[S]) -> Result<Vec<S>> {
        if self.cols != x.len() {
            return Err(Error::Shape(format!(
                "{}x{} times vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        Ok((0..self.rows)
            .map(|i| crate::scalar::dot(self.row(i), x))
            .collect())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(S, S) -> S) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Shape(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, s: S) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&a| a * s).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> S {
        crate::scalar::norm_sq(&self.data).sqrt()
    }

    pub fn max_abs(&self) -> S {
        self.data.iter().fold(S::zero(), |m, &a| m.max(a.abs()))
    }

    pub fn trace(&self) -> S {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Largest `|M - Mᵀ|` entry relative to the largest entry.
    pub fn asymmetry(&self) -> S {
        if self.rows != self.cols {
            return S::infinity();
        }
        let scale = self.max_abs();
        if scale == S::zero() {
            return S::zero();
        }
        let mut worst = S::zero();
        for i in 0..self.rows {
            for j in i + 1..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst / scale
    }
}

impl<S> std::ops::Index<(usize, usize)> for Mat<S> {
    type Output = S;
    fn index(&self, (i, j): (usize, usize)) -> &S {
        &self.data[i * self.cols + j]
    }
}

impl<S> std::ops::IndexMut<(usize, usize)> for Mat<S> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut S {
        &mut self.data[i * self.cols + j]
    }
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymmetricSpectrum<S> {
    /// Ascending.
    pub eigenvalues: Vec<S>,
    /// Number of eigenvalues with `|λ| ≤ zero_tol · max|λ|`.
    pub kernel_dim: usize,
    /// Columns are eigenvectors, in the order of `eigenvalues`.
    pub eigenvectors: Option<Mat<S>>,
    zero_threshold: S,
}

impl<S: Scalar> SymmetricSpectrum<S> {
    pub fn lambda_max(&self) -> S {
        self.eigenvalues.last().copied().unwrap_or_else(S::zero)
    }

    pub fn lambda_min(&self) -> S {
        self.eigenvalues.first().copied().unwrap_or_else(S::zero)
    }

    /// Smallest eigenvalue above the zero threshold.
    pub fn lambda_min_pos(&self) -> Option<S> {
        self.eigenvalues
            .iter()
            .copied()
            .find(|&l| l > self.zero_threshold)
    }

    pub fn zero_threshold(&self) -> S {
        self.zero_threshold
    }
}

pub const DEFAULT_ZERO_TOL: f64 = 1e-9;
const MAX_SWEEPS: usize = 100;
const SYMMETRY_TOL: f64 = 1e-10;

/// Cyclic Jacobi eigensolver for dense symmetric matrices.
pub fn symmetric_eigensolve<S: Scalar>(
    m: &Mat<S>,
    zero_tol: S,
    want_vectors: bool,
) -> Result<SymmetricSpectrum<S>> {
    let n = m.rows();
    if n != m.cols() {
        return Err(Error::Shape(format!("{}x{} is not square", n, m.cols())));
    }
    if !crate::scalar::all_finite(m.as_slice()) {
        return Err(Error::NonFinite("eigensolver input".into()));
    }
    let asym = m.asymmetry();
    if asym > S::tol(SYMMETRY_TOL) {
        return Err(Error::NotSymmetric(asym.as_f64()));
    }

    let mut a = m.clone();
    for i in 0..n {
        for j in i + 1..n {
            let avg = (a[(i, j)] + a[(j, i)]) / S::of(2.0);
            a[(i, j)] = avg;
            a[(j, i)] = avg;
        }
    }
    let mut v = want_vectors.then(|| Mat::identity(n));
    let frob = a.frobenius_norm();
    let target = S::epsilon() * frob;

    let off_norm = |a: &Mat<S>| {
        let mut s = S::zero();
        for i in 0..n {
            for j in i + 1..n {
                s += a[(i, j)] * a[(i, j)];
            }
        }
        (s + s).sqrt()
    };

    let mut converged = n <= 1 || frob == S::zero();
    let mut sweeps = 0;
    while !converged && sweeps < MAX_SWEEPS {
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == S::zero() {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                // Negligible against both diagonal entries: drop it.
                if sweeps > 3
                    && app.abs() + apq.abs() * S::of(1e3) == app.abs()
                    && aqq.abs() + apq.abs() * S::of(1e3) == aqq.abs()
                {
                    a[(p, q)] = S::zero();
                    a[(q, p)] = S::zero();
                    continue;
                }
                let theta = (aqq - app) / (S::of(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + S::one()).sqrt());
                let c = S::one() / (t * t + S::one()).sqrt();
                let s = t * c;
                rotate(&mut a, p, q, c, s);
                if let Some(v) = v.as_mut() {
                    for k in 0..n {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = c * vkp - s * vkq;
                        v[(k, q)] = s * vkp + c * vkq;
                    }
                }
            }
        }
        sweeps += 1;
        converged = off_norm(&a) <= target;
    }
    if !converged {
        return Err(Error::NoConvergence {
            sweeps,
            residual: off_norm(&a).as_f64(),
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].partial_cmp(&a[(j, j)]).unwrap());
    let eigenvalues: Vec<S> = order.iter().map(|&i| a[(i, i)]).collect();
    let eigenvectors = v.map(|v| Mat::from_fn(n, n, |r, c| v[(r, order[c])]));
    let scale = eigenvalues
        .iter()
        .fold(S::zero(), |m, &l| m.max(l.abs()));
    let zero_threshold = zero_tol * scale;
    let kernel_dim = eigenvalues
        .iter()
        .filter(|l| l.abs() <= zero_threshold)
        .count();
    Ok(SymmetricSpectrum {
        eigenvalues,
        kernel_dim,
        eigenvectors,
        zero_threshold,
    })
}

/// Applies `A ← JᵀAJ` for the rotation in the (p, q) plane.
fn rotate<S: Scalar>(a: &mut Mat<S>, p: usize, q: usize, c: S, s: S) {
    let n = a.rows();
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = c * akp - s * akq;
        a[(k, q)] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = c * apk - s * aqk;
        a[(q, k)] = s * apk + c * aqk;
    }
}

/// Moore-Penrose pseudo-inverse of a symmetric matrix; eigenvalues below
/// `zero_tol · max|λ|` are treated as zero.
pub fn pinv_symmetric<S: Scalar>(m: &Mat<S>, zero_tol: S) -> Result<Mat<S>> {
    spectral_function(m, zero_tol, |l| S::one() / l)
}

/// Orthogonal projector onto the range of a symmetric matrix.
pub fn range_projector<S: Scalar>(m: &Mat<S>, zero_tol: S) -> Result<Mat<S>> {
    spectral_function(m, zero_tol, |_| S::one())
}

/// `V f(Λ) Vᵀ`, with `f` applied only to eigenvalues above the zero threshold.
pub fn spectral_function<S: Scalar>(
    m: &Mat<S>,
    zero_tol: S,
    f: impl Fn(S) -> S,
) -> Result<Mat<S>> {
    let spec = symmetric_eigensolve(m, zero_tol, true)?;
    let v = spec.eigenvectors.as_ref().expect("requested eigenvectors");
    let n = m.rows();
    let mut out = Mat::zeros(n, n);
    for (k, &l) in spec.eigenvalues.iter().enumerate() {
        if l.abs() <= spec.zero_threshold {
            continue;
        }
        let w = f(l);
        for i in 0..n {
            let vi = v[(i, k)] * w;
            if vi == S::zero() {
                continue;
            }
            for j in 0..n {
                out[(i, j)] += vi * v[(j, k)];
            }
        }
    }
    Ok(out)
}

/// Pseudo-inverse of a general matrix via `(MᵀM)† Mᵀ`.
pub fn pinv<S: Scalar>(m: &Mat<S>, zero_tol: S) -> Result<Mat<S>> {
    let mt = m.transpose();
    let gram = mt.matmul(m)?;
    pinv_symmetric(&gram, zero_tol)?.matmul(&mt)
}

/// Solves `M x = b` for symmetric positive definite `M`.
pub fn cholesky_solve<S: Scalar>(m: &Mat<S>, b: &[S]) -> Result<Vec<S>> {
    let n = m.rows();
    if n != m.cols() || b.len() != n {
        return Err(Error::Shape("cholesky_solve".into()));
    }
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > S::zero()) {
            return Err(Error::InvalidArgument(
                "matrix is not positive definite".into(),
            ));
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            let t = l[(i, k)] * y[k];
            y[i] -= t;
        }
        y[i] /= l[(i, i)];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            let t = l[(k, i)] * y[k];
            y[i] -= t;
        }
        y[i] /= l[(i, i)];
    }
    Ok(y)
}

#[cfg(test)]
pub(crate) mod oracle {
    //! Independent eigenvalue oracle: Householder tridiagonalization followed
    //! by Sturm-sequence bisection.

    /// Reduces a symmetric matrix to tridiagonal form; returns (diag, offdiag).
    pub fn tridiagonalize(m: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
        let n = m.len();
        let mut a: Vec<Vec<f64>> = m.to_vec();
        for k in 0..n.saturating_sub(2) {
            let x: Vec<f64> = (k + 1..n).map(|i| a[i][k]).collect();
            let alpha = -x[0].signum() * x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if alpha == 0.0 {
                continue;
            }
            let mut v = x.clone();
            v[0] -= alpha;
            let vnorm = v.iter().map(|t| t * t).sum::<f64>().sqrt();
            if vnorm == 0.0 {
                continue;
            }
            for t in v.iter_mut() {
                *t /= vnorm;
            }
            // H = I - 2 v vᵀ acting on indices k+1..n; A ← H A H.
            let idx: Vec<usize> = (k + 1..n).collect();
            let mut p = vec![0.0; n];
            for (r, row) in a.iter().enumerate() {
                p[r] = idx.iter().zip(&v).map(|(&i, vi)| row[i] * vi).sum();
            }
            let mut q = vec![0.0; n];
            for (c, qc) in q.iter_mut().enumerate() {
                *qc = idx.iter().zip(&v).map(|(&i, vi)| a[i][c] * vi).sum();
            }
            let vav: f64 = idx.iter().zip(&v).map(|(&i, vi)| p[i] * vi).sum();
            let mut full_v = vec![0.0; n];
            for (&i, &vi) in idx.iter().zip(&v) {
                full_v[i] = vi;
            }
            for r in 0..n {
                for c in 0..n {
                    a[r][c] += -2.0 * full_v[r] * q[c] - 2.0 * p[r] * full_v[c]
                        + 4.0 * vav * full_v[r] * full_v[c];
                }
            }
        }
        let diag = (0..n).map(|i| a[i][i]).collect();
        let off = (1..n).map(|i| a[i][i - 1]).collect();
        (diag, off)
    }

    /// Number of eigenvalues strictly below `x`.
    fn sturm_count(diag: &[f64], off: &[f64], x: f64) -> usize {
        let mut count = 0;
        let mut q = diag[0] - x;
        if q < 0.0 {
            count += 1;
        }
        for i in 1..diag.len() {
            let denom = if q == 0.0 { f64::EPSILON } else { q };
            q = diag[i] - x - off[i - 1] * off[i - 1] / denom;
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    pub fn eigenvalues(m: &[Vec<f64>]) -> Vec<f64> {
        let n = m.len();
        let (diag, off) = tridiagonalize(m);
        let bound = (0..n)
            .map(|i| {
                diag[i].abs()
                    + if i > 0 { off[i - 1].abs() } else { 0.0 }
                    + if i + 1 < n { off[i].abs() } else { 0.0 }
            })
            .fold(0.0, f64::max)
            + 1.0;
        (0..n)
            .map(|k| {
                let (mut lo, mut hi) = (-bound, bound);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if sturm_count(&diag, &off, mid) > k {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                0.5 * (lo + hi)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(n: usize, seed: u64) -> Mat<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v: f64 = rng.random_range(-1.0..1.0);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    #[test]
    fn identity_spectrum() {
        let s = symmetric_eigensolve(&Mat::<f64>::identity(3), 1e-9, false).unwrap();
        assert_eq!(s.eigenvalues, vec![1.0, 1.0, 1.0]);
        assert_eq!(s.kernel_dim, 0);
    }

    #[test]
    fn matches_sturm_bisection_oracle() {
        for seed in 0..10 {
            let m = random_symmetric(10, seed);
            let rows: Vec<Vec<f64>> = (0..10).map(|i| m.row(i).to_vec()).collect();
            let expected = oracle::eigenvalues(&rows);
            let got = symmetric_eigensolve(&m, 1e-9, false).unwrap();
            for (a, b) in got.eigenvalues.iter().zip(&expected) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn reconstruction_and_invariants() {
        for seed in 0..5 {
            let m = random_symmetric(12, 100 + seed);
            let s = symmetric_eigensolve(&m, 1e-9, true).unwrap();
            let v = s.eigenvectors.as_ref().unwrap();
            let lam = Mat::diag(&s.eigenvalues);
            let rec = v.matmul(&lam).unwrap().matmul(&v.transpose()).unwrap();
            let err = rec.sub(&m).unwrap().frobenius_norm();
            assert!(err <= 1e-8 * m.frobenius_norm());
            let tr: f64 = s.eigenvalues.iter().sum();
            assert!((tr - m.trace()).abs() <= 1e-10 * m.frobenius_norm().max(1.0));
            let sq: f64 = s.eigenvalues.iter().map(|l| l * l).sum();
            let fro2 = m.frobenius_norm().powi(2);
            assert!((sq - fro2).abs() <= 1e-10 * fro2);
            assert!(s.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn rejects_asymmetric() {
        let m = Mat::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(
            symmetric_eigensolve(&m, 1e-9, false),
            Err(Error::NotSymmetric(_))
        ));
    }

    #[test]
    fn pinv_of_rank_deficient() {
        // Laplacian of a single edge.
        let l = Mat::from_rows(&[vec![1.0f64, -1.0], vec![-1.0, 1.0]]).unwrap();
        let p = pinv_symmetric(&l, 1e-9).unwrap();
        let lpl = l.matmul(&p).unwrap().matmul(&l).unwrap();
        assert!(lpl.sub(&l).unwrap().max_abs() < 1e-12);
        assert!((p[(0, 0)] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn general_pinv_penrose_conditions() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = Mat::from_fn(5, 3, |_, _| rng.random_range(-1.0..1.0));
        let p = pinv(&a, 1e-12).unwrap();
        let apa = a.matmul(&p).unwrap().matmul(&a).unwrap();
        assert!(apa.sub(&a).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn cholesky_solves_spd() {
        let m = Mat::from_rows(&[
            vec![4.0f64, 1.0, 0.5],
            vec![1.0, 3.0, 0.2],
            vec![0.5, 0.2, 2.0],
        ])
        .unwrap();
        let b = [1.0, 2.0, 3.0];
        let x = cholesky_solve(&m, &b).unwrap();
        let r = m.matvec(&x).unwrap();
        for (ri, bi) in r.iter().zip(&b) {
            assert!((ri - bi).abs() < 1e-12);
        }
    }

    #[test]
    fn f32_smoke() {
        let m = Mat::<f32>::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let s = symmetric_eigensolve(&m, 1e-6, false).unwrap();
        assert!((s.eigenvalues[0] - 1.0).abs() < 1e-5);
        assert!((s.eigenvalues[1] - 3.0).abs() < 1e-5);
    }
}
