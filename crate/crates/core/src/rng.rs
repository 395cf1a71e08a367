//! Deterministic random streams shared by the solvers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two disjoint ChaCha8 streams derived from one seed: one decides the block
/// kind, the other picks samples inside computation blocks. Solvers that
/// consume draws in the same order see identical blocks.
#[derive(Debug, Clone)]
pub struct DrawStream {
    blocks: ChaCha8Rng,
    samples: ChaCha8Rng,
}

impl DrawStream {
    pub fn new(seed: u64) -> Self {
        let mut blocks = ChaCha8Rng::seed_from_u64(seed);
        blocks.set_stream(1);
        let mut samples = ChaCha8Rng::seed_from_u64(seed);
        samples.set_stream(2);
        Self { blocks, samples }
    }

    /// Uniform in `[0, 1)` from the block-kind stream.
    pub fn block_uniform(&mut self) -> f64 {
        self.blocks.random()
    }

    /// Uniform in `[0, 1)` from the sample stream.
    pub fn sample_uniform(&mut self) -> f64 {
        self.samples.random()
    }

    /// Index drawn from cumulative weights (last entry is the total).
    pub fn categorical(&mut self, cumulative: &[f64]) -> usize {
        let total = *cumulative.last().expect("non-empty distribution");
        let u = self.sample_uniform() * total;
        cumulative
            .partition_point(|&c| c <= u)
            .min(cumulative.len() - 1)
    }
}

/// Running sums of `weights`, for [`DrawStream::categorical`].
pub fn cumulative(weights: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .into_iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible() {
        let mut a = DrawStream::new(3);
        let mut b = DrawStream::new(3);
        for _ in 0..10 {
            assert_eq!(a.block_uniform(), b.block_uniform());
            assert_eq!(a.sample_uniform(), b.sample_uniform());
        }
    }

    #[test]
    fn block_stream_independent_of_sample_consumption() {
        let mut a = DrawStream::new(9);
        let mut b = DrawStream::new(9);
        for _ in 0..5 {
            a.sample_uniform();
        }
        assert_eq!(a.block_uniform(), b.block_uniform());
    }

    #[test]
    fn categorical_frequencies() {
        let mut s = DrawStream::new(1);
        let cum = cumulative([0.2, 0.5, 0.3]);
        let mut counts = [0usize; 3];
        let n = 100_000;
        for _ in 0..n {
            counts[s.categorical(&cum)] += 1;
        }
        for (c, p) in counts.iter().zip([0.2, 0.5, 0.3]) {
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((*c as f64 / n as f64 - p).abs() < 4.0 * se);
        }
    }
}
