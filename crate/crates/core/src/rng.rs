//! Seeded, portable random streams.
//!
//! Every consumer derives its own substream from `(seed, tag)` so results do
//! not depend on evaluation order.

use nalgebra::{DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// ChaCha8 stream keyed by a 64-bit seed.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream derived from this stream's seed and `tag`.
    /// Does not depend on (or advance) the current position.
    pub fn substream(&self, tag: u64) -> Rng {
        Rng::new(splitmix64(self.seed ^ splitmix64(tag.wrapping_add(0x5EED))))
    }

    pub fn gaussian(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn gaussian_vector(&mut self, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| self.gaussian())
    }

    /// Fills row by row.
    pub fn gaussian_matrix(&mut self, rows: usize, cols: usize) -> DMatrix<f64> {
        let data: Vec<f64> = (0..rows * cols).map(|_| self.gaussian()).collect();
        DMatrix::from_row_slice(rows, cols, &data)
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        // Lemire-style rejection keeps this exact and platform independent.
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let x = self.inner.next_u64();
            if x < zone {
                return (x % n) as usize;
            }
        }
    }

    /// `k` distinct indices from `0..n`, in draw order (partial Fisher–Yates).
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(7);
        let mut b = Rng::new(7);
        for _ in 0..100 {
            assert_eq!(a.gaussian().to_bits(), b.gaussian().to_bits());
        }
    }

    #[test]
    fn substreams_ignore_position() {
        let mut a = Rng::new(11);
        let s1 = a.substream(3);
        a.gaussian();
        let s2 = a.substream(3);
        assert_eq!(s1.seed(), s2.seed());
        assert_ne!(a.substream(4).seed(), s1.seed());
    }

    #[test]
    fn sample_indices_distinct() {
        let mut r = Rng::new(1);
        let mut idx = r.sample_indices(50, 20);
        idx.sort_unstable();
        idx.dedup();
        assert_eq!(idx.len(), 20);
        assert!(idx.iter().all(|&i| i < 50));
    }
}
