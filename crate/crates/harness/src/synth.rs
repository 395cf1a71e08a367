//! Synthetic datasets: equicorrelated Gaussian features and labels from a
//! planted linear model.
//!
//! Features have covariance `((1 − c) I + c 11ᵀ)/d`, so `E‖x‖² = 1` and the
//! trace to top-eigenvalue ratio is `d / (1 + c (d − 1))`.

use adfs_core::objective::LossKind;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// A labelled dense sample before it is attached to a node.
pub type Row = (Vec<f64>, f64);

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub d: usize,
    /// Pairwise feature correlation, in `[0, 1)`.
    pub correlation: f64,
    /// Standard deviation of the label noise.
    pub noise: f64,
}

impl SynthSpec {
    pub fn new(d: usize, correlation: f64) -> Self {
        Self {
            d,
            correlation,
            noise: 0.1,
        }
    }

    /// `tr(C) / λ_max(C)`, which `(κ_s − 1)/(κ_b − 1)` tracks for the squared
    /// loss when `m ≫ d`.
    pub fn trace_ratio(&self) -> f64 {
        let d = self.d as f64;
        d / (1.0 + self.correlation * (d - 1.0))
    }
}

/// Draws `size` rows. Logistic labels are `sign(xᵀw + noise)`; the other
/// losses use `xᵀw + noise` directly.
pub fn synth_pool(spec: &SynthSpec, size: usize, loss: LossKind, seed: u64) -> Vec<Row> {
    assert!(spec.d >= 1, "dimension must be positive");
    assert!(
        (0.0..1.0).contains(&spec.correlation),
        "correlation must lie in [0, 1)"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = spec.d;
    let w: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let a = (1.0 - spec.correlation).sqrt() / (d as f64).sqrt();
    let b = spec.correlation.sqrt() / (d as f64).sqrt();
    (0..size)
        .map(|_| {
            let common: f64 = rng.sample(StandardNormal);
            let x: Vec<f64> = (0..d)
                .map(|_| a * rng.sample::<f64, _>(StandardNormal) + b * common)
                .collect();
            let eps: f64 = rng.sample(StandardNormal);
            let z = x.iter().zip(&w).map(|(u, v)| u * v).sum::<f64>() + spec.noise * eps;
            let label = match loss {
                LossKind::Logistic => {
                    if z >= 0.0 {
                        1.0
                    } else {
                        -1.0
                    }
                }
                LossKind::Squared | LossKind::Absolute => z,
            };
            (x, label)
        })
        .collect()
}

/// Indices of the `m` rows each node draws from a pool of `pool` rows:
/// without replacement within a node, independently across nodes.
pub fn assign_nodes(pool: usize, n: usize, m: usize, seed: u64) -> Vec<Vec<usize>> {
    assert!(m <= pool, "cannot draw {m} distinct rows from {pool}");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    (0..n)
        .map(|_| index::sample(&mut rng, pool, m).into_vec())
        .collect()
}

/// Per-node datasets drawn from a pool of `n·m` rows.
pub fn synth_dataset(
    n: usize,
    m: usize,
    spec: &SynthSpec,
    loss: LossKind,
    seed: u64,
) -> Vec<Vec<Row>> {
    let pool = synth_pool(spec, n * m, loss, seed);
    assign_nodes(pool.len(), n, m, seed)
        .into_iter()
        .map(|idx| idx.into_iter().map(|k| pool[k].clone()).collect())
        .collect()
}
