//! Seedable Brownian increments on a uniform fine grid.
//!
//! Path `j` is driven by its own ChaCha stream (`stream = j`) keyed by the
//! experiment seed, so its increments depend only on `(seed, j)` and never on
//! the number of paths or workers. Each step consumes exactly one 64-bit word,
//! mapped to a uniform in (0, 1) and through Φ⁻¹.
//!
//! Increments are rounded to multiples of `2^-40`. All partial sums of a path
//! are then exactly representable in `f64`, which makes coarsening exact
//! regardless of summation order: the increments of a coarse grid telescope
//! to exactly the same `W_T` as the fine ones.

use ndarray::Array2;
use rand_chacha::ChaCha12Rng;
use rand_core::{RngCore, SeedableRng};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::normal::quantile_unchecked;
use crate::scalar::Real;

pub const INCREMENT_QUANTUM_BITS: i32 = 40;
/// Largest `M·N_fine` held in memory by [`BrownianLattice::generate`].
pub const DEFAULT_MAX_ENTRIES: usize = 1 << 26;

#[inline]
fn unit_open(word: u64) -> f64 {
    ((word >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Streaming generator of Brownian paths, one path at a time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrownianSource<T> {
    pub seed: u64,
    pub horizon: T,
    pub n_fine: usize,
}

impl<T: Real> BrownianSource<T> {
    pub fn new(seed: u64, horizon: T, n_fine: usize) -> Result<Self> {
        if n_fine == 0 {
            return Err(Error::InvalidInput("N_fine must be at least 1".into()));
        }
        if !(horizon > T::zero()) || !horizon.is_finite() {
            return Err(Error::Domain(format!("time horizon must be positive, got {horizon}")));
        }
        Ok(Self {
            seed,
            horizon,
            n_fine,
        })
    }

    pub fn dt(&self) -> T {
        self.horizon / T::from_usize_lossy(self.n_fine)
    }

    /// Writes the `n_fine` increments of path `j` into `out`.
    pub fn fill_path(&self, j: usize, out: &mut [T]) {
        assert_eq!(out.len(), self.n_fine, "output length must equal N_fine");
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed);
        rng.set_stream(j as u64);
        let sd = self.dt().as_f64().sqrt();
        let scale = (2.0f64).powi(INCREMENT_QUANTUM_BITS);
        for slot in out.iter_mut() {
            let z = quantile_unchecked(unit_open(rng.next_u64()));
            *slot = T::lit((z * sd * scale).round() / scale);
        }
    }

    pub fn path(&self, j: usize) -> Vec<T> {
        let mut out = vec![T::zero(); self.n_fine];
        self.fill_path(j, &mut out);
        out
    }
}

/// `M × N_fine` Brownian increments held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianLattice<T> {
    pub horizon: T,
    pub n_fine: usize,
    pub paths: usize,
    pub seed: u64,
    increments: Array2<T>,
}

impl<T: Real> BrownianLattice<T> {
    pub fn generate(seed: u64, horizon: T, n_fine: usize, paths: usize) -> Result<Self> {
        Self::generate_with_cap(seed, horizon, n_fine, paths, DEFAULT_MAX_ENTRIES)
    }

    pub fn generate_with_cap(
        seed: u64,
        horizon: T,
        n_fine: usize,
        paths: usize,
        cap: usize,
    ) -> Result<Self> {
        let source = BrownianSource::new(seed, horizon, n_fine)?;
        if paths == 0 {
            return Err(Error::InvalidInput("M must be at least 1".into()));
        }
        let requested = paths.saturating_mul(n_fine);
        if requested > cap {
            return Err(Error::Resource { requested, cap });
        }
        let mut data = vec![T::zero(); requested];
        data.par_chunks_mut(n_fine)
            .enumerate()
            .for_each(|(j, row)| source.fill_path(j, row));
        Ok(Self {
            horizon,
            n_fine,
            paths,
            seed,
            increments: Array2::from_shape_vec((paths, n_fine), data).expect("shape"),
        })
    }

    /// Wraps hand-made increments (seed recorded as 0).
    pub fn from_increments(horizon: T, increments: Array2<T>) -> Result<Self> {
        let (paths, n_fine) = increments.dim();
        if paths == 0 || n_fine == 0 {
            return Err(Error::InvalidInput("empty increment array".into()));
        }
        if !(horizon > T::zero()) {
            return Err(Error::Domain("time horizon must be positive".into()));
        }
        Ok(Self {
            horizon,
            n_fine,
            paths,
            seed: 0,
            increments: increments.as_standard_layout().into_owned(),
        })
    }

    pub fn dt(&self) -> T {
        self.horizon / T::from_usize_lossy(self.n_fine)
    }

    pub fn increments(&self) -> &Array2<T> {
        &self.increments
    }

    pub fn path(&self, j: usize) -> &[T] {
        self.increments
            .row(j)
            .to_slice()
            .expect("standard layout rows are contiguous")
    }

    /// Increments on the coarse grid of `n` steps: entry `(j, k)` sums the
    /// fine increments of path `j` over `[kT/n, (k+1)T/n)`.
    pub fn coarsen(&self, n: usize) -> Result<Array2<T>> {
        let factor = divisor_factor(self.n_fine, n)?;
        let mut out = Array2::zeros((self.paths, n));
        for (j, mut row) in out.rows_mut().into_iter().enumerate() {
            let coarse = coarsen_increments(self.path(j), factor);
            row.as_slice_mut().expect("contiguous").copy_from_slice(&coarse);
        }
        Ok(out)
    }
}

/// `n_fine / n`, or a divisibility error.
pub fn divisor_factor(n_fine: usize, n: usize) -> Result<usize> {
    if n == 0 || n_fine % n != 0 {
        return Err(Error::Divisibility { n, n_fine });
    }
    Ok(n_fine / n)
}

/// Sums consecutive groups of `factor` increments. Power-of-two factors are
/// reduced by repeated pairwise halving, so coarsening in stages gives
/// bit-identical results to coarsening at once.
pub fn coarsen_increments<T: Real>(fine: &[T], factor: usize) -> Vec<T> {
    assert!(factor >= 1 && fine.len() % factor == 0);
    if factor.is_power_of_two() {
        let mut level = fine.to_vec();
        let mut f = factor;
        while f > 1 {
            level = level.chunks_exact(2).map(|p| p[0] + p[1]).collect();
            f /= 2;
        }
        level
    } else {
        fine.chunks_exact(factor)
            .map(|c| c.iter().fold(T::zero(), |a, &x| a + x))
            .collect()
    }
}
