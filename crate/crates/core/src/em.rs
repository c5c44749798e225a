//! Euler–Maruyama on a coarse grid `t_k = kT/n`, with its continuous-time
//! interpolation sampled on the fine Brownian lattice:
//!
//! ```text
//! X_t = X_{η(t)} + b(X_{η(t)})(t − η(t)) + σ(X_{η(t)})(W_t − W_{η(t)})
//! ```

use std::collections::BTreeMap;

use ndarray::Array2;
use rayon::prelude::*;

use crate::brownian::{coarsen_increments, divisor_factor, BrownianLattice, BrownianSource};
use crate::coeffs::CoefficientSpec;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// EM values for `M` paths at resolution `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmTrajectory<T> {
    pub n: usize,
    pub n_fine: usize,
    pub x0: T,
    pub horizon: T,
    /// `M × (n+1)`.
    pub coarse_values: Array2<T>,
    /// `M × (N_fine+1)` when requested.
    pub fine_values: Option<Array2<T>>,
}

impl<T: Real> EmTrajectory<T> {
    pub fn paths(&self) -> usize {
        self.coarse_values.nrows()
    }

    pub fn coarse_path(&self, j: usize) -> &[T] {
        self.coarse_values.row(j).to_slice().expect("contiguous row")
    }

    pub fn fine_path(&self, j: usize) -> Option<&[T]> {
        self.fine_values
            .as_ref()
            .map(|f| f.row(j).to_slice().expect("contiguous row"))
    }

    /// Fine steps per coarse step.
    pub fn cell_len(&self) -> usize {
        self.n_fine / self.n
    }

    pub fn fine_dt(&self) -> T {
        self.horizon / T::from_usize_lossy(self.n_fine)
    }
}

/// Runs EM for one path.
///
/// `coarse` receives `n + 1` values; `fine`, when present, receives
/// `fine_incs.len() + 1` interpolated values that coincide exactly with
/// `coarse` at multiples of `N_fine / n`. `path` only labels errors.
#[allow(clippy::too_many_arguments)]
pub fn em_single_path<T: Real>(
    b: &CoefficientSpec<T>,
    sigma: &CoefficientSpec<T>,
    x0: T,
    horizon: T,
    fine_incs: &[T],
    n: usize,
    coarse: &mut [T],
    fine: Option<&mut [T]>,
    path: usize,
) -> Result<()> {
    let n_fine = fine_incs.len();
    let cell = divisor_factor(n_fine, n)?;
    assert_eq!(coarse.len(), n + 1, "coarse buffer must hold n + 1 values");
    let h = horizon / T::from_usize_lossy(n);
    let dt = horizon / T::from_usize_lossy(n_fine);
    let dw = coarsen_increments(fine_incs, cell);

    coarse[0] = x0;
    let mut x = x0;
    for (k, &dwk) in dw.iter().enumerate() {
        x = x + b.eval(x) * h + sigma.eval(x) * dwk;
        if !x.is_finite() {
            return Err(Error::NonFinite { path, step: k + 1 });
        }
        coarse[k + 1] = x;
    }

    if let Some(fine) = fine {
        assert_eq!(fine.len(), n_fine + 1, "fine buffer must hold N_fine + 1 values");
        fine[0] = x0;
        for k in 0..n {
            let xk = coarse[k];
            let (bk, sk) = (b.eval(xk), sigma.eval(xk));
            let base = k * cell;
            let mut w = T::zero();
            for r in 1..cell {
                w += fine_incs[base + r - 1];
                fine[base + r] = xk + bk * (T::from_usize_lossy(r) * dt) + sk * w;
            }
            fine[base + cell] = coarse[k + 1];
        }
    }
    Ok(())
}

pub fn em_path<T: Real>(
    b: &CoefficientSpec<T>,
    sigma: &CoefficientSpec<T>,
    x0: T,
    lattice: &BrownianLattice<T>,
    n: usize,
    want_fine: bool,
) -> Result<EmTrajectory<T>> {
    divisor_factor(lattice.n_fine, n)?;
    let m = lattice.paths;
    let mut coarse = Array2::zeros((m, n + 1));
    let mut fine = want_fine.then(|| Array2::zeros((m, lattice.n_fine + 1)));
    let coarse_rows = coarse
        .as_slice_mut()
        .expect("standard layout")
        .par_chunks_mut(n + 1);
    match fine.as_mut() {
        Some(fine) => coarse_rows
            .zip(
                fine.as_slice_mut()
                    .expect("standard layout")
                    .par_chunks_mut(lattice.n_fine + 1),
            )
            .enumerate()
            .try_for_each(|(j, (c, f))| {
                em_single_path(b, sigma, x0, lattice.horizon, lattice.path(j), n, c, Some(f), j)
            })?,
        None => coarse_rows.enumerate().try_for_each(|(j, c)| {
            em_single_path(b, sigma, x0, lattice.horizon, lattice.path(j), n, c, None, j)
        })?,
    }
    Ok(EmTrajectory {
        n,
        n_fine: lattice.n_fine,
        x0,
        horizon: lattice.horizon,
        coarse_values: coarse,
        fine_values: fine,
    })
}

/// EM at every `n` in `n_list` and at `n_ref`, all driven by the same
/// lattice, with fine interpolation. The `n_ref` entry plays the role of the
/// exact solution.
pub fn em_coupled<T: Real>(
    b: &CoefficientSpec<T>,
    sigma: &CoefficientSpec<T>,
    x0: T,
    lattice: &BrownianLattice<T>,
    n_list: &[usize],
    n_ref: usize,
) -> Result<BTreeMap<usize, EmTrajectory<T>>> {
    if let Some(&max) = n_list.iter().max() {
        if n_ref <= max {
            return Err(Error::InvalidInput(format!(
                "n_ref = {n_ref} must exceed every n (max {max})"
            )));
        }
    }
    for &n in n_list.iter().chain(std::iter::once(&n_ref)) {
        divisor_factor(lattice.n_fine, n)?;
    }
    let mut out = BTreeMap::new();
    for &n in n_list.iter().chain(std::iter::once(&n_ref)) {
        if !out.contains_key(&n) {
            out.insert(n, em_path(b, sigma, x0, lattice, n, true)?);
        }
    }
    Ok(out)
}

/// `|x0| + ‖b‖T + σ̄·Σ|ΔW|`, an a-priori bound on every EM value of a path.
pub fn path_bound<T: Real>(x0: T, b_sup: T, horizon: T, sigma_upper: T, fine_incs: &[T]) -> T {
    let variation: T = fine_incs.iter().map(|d| d.abs()).sum();
    x0.abs() + b_sup * horizon + sigma_upper * variation
}

/// Per-path coupled EM for streaming Monte Carlo: draws path `j` from a
/// [`BrownianSource`] and fills the fine interpolation at the reference and
/// every requested resolution, reusing its buffers across calls.
#[derive(Clone)]
pub struct CoupledSampler<T> {
    pub b: CoefficientSpec<T>,
    pub sigma: CoefficientSpec<T>,
    pub x0: T,
    pub source: BrownianSource<T>,
    pub n_list: Vec<usize>,
    pub n_ref: usize,
}

/// Scratch and output buffers for one sampled path.
#[derive(Debug, Clone, Default)]
pub struct CoupledPath<T> {
    pub increments: Vec<T>,
    pub reference: Vec<T>,
    /// Fine paths in `n_list` order.
    pub fine: Vec<Vec<T>>,
    coarse: Vec<T>,
}

impl<T: Real> CoupledSampler<T> {
    pub fn new(
        b: CoefficientSpec<T>,
        sigma: CoefficientSpec<T>,
        x0: T,
        source: BrownianSource<T>,
        n_list: Vec<usize>,
        n_ref: usize,
    ) -> Result<Self> {
        for &n in n_list.iter().chain(std::iter::once(&n_ref)) {
            divisor_factor(source.n_fine, n)?;
        }
        Ok(Self {
            b,
            sigma,
            x0,
            source,
            n_list,
            n_ref,
        })
    }

    pub fn buffers(&self) -> CoupledPath<T> {
        let len = self.source.n_fine + 1;
        CoupledPath {
            increments: vec![T::zero(); self.source.n_fine],
            reference: vec![T::zero(); len],
            fine: vec![vec![T::zero(); len]; self.n_list.len()],
            coarse: Vec::new(),
        }
    }

    pub fn sample(&self, j: usize, out: &mut CoupledPath<T>) -> Result<()> {
        self.source.fill_path(j, &mut out.increments);
        let horizon = self.source.horizon;
        out.coarse.resize(self.n_ref + 1, T::zero());
        em_single_path(
            &self.b,
            &self.sigma,
            self.x0,
            horizon,
            &out.increments,
            self.n_ref,
            &mut out.coarse,
            Some(&mut out.reference),
            j,
        )?;
        for (&n, fine) in self.n_list.iter().zip(out.fine.iter_mut()) {
            out.coarse.resize(n + 1, T::zero());
            em_single_path(
                &self.b,
                &self.sigma,
                self.x0,
                horizon,
                &out.increments,
                n,
                &mut out.coarse,
                Some(fine),
                j,
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{make_constant, make_indicator_interval, make_step_sigma};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn constant_coefficients_reproduce_brownian_motion() {
        let lattice = BrownianLattice::<f64>::generate(1, 1.0, 256, 4).unwrap();
        let (b, s) = (make_constant(0.0), make_constant(1.0));
        for n in [1, 4, 32, 256] {
            let tr = em_path(&b, &s, 0.0, &lattice, n, true).unwrap();
            for j in 0..4 {
                let mut w = 0.0;
                let fine = tr.fine_path(j).unwrap();
                assert_eq!(fine[0], 0.0);
                for (i, d) in lattice.path(j).iter().enumerate() {
                    w += d;
                    assert_eq!(fine[i + 1], w, "n={n} i={i}");
                }
            }
        }
    }

    #[test]
    fn scaled_brownian_exact_for_dyadic_coefficients() {
        let lattice = BrownianLattice::<f64>::generate(2, 1.0, 128, 3).unwrap();
        let (b, s) = (make_constant(0.0), make_constant(2.0));
        for n in [2, 16, 128] {
            let tr = em_path(&b, &s, 0.5, &lattice, n, true).unwrap();
            for j in 0..3 {
                let mut w = 0.0;
                for (i, d) in lattice.path(j).iter().enumerate() {
                    w += d;
                    assert_eq!(tr.fine_path(j).unwrap()[i + 1], 0.5 + 2.0 * w);
                }
            }
        }
    }

    #[test]
    fn step_sigma_hand_recursion() {
        let (s, _) = make_step_sigma::<f64>();
        let b = make_constant(0.0);
        let lattice = BrownianLattice::from_increments(1.0, array![[0.5, -1.0]]).unwrap();
        let tr = em_path(&b, &s, 0.0, &lattice, 2, false).unwrap();
        assert_eq!(tr.coarse_path(0), &[0.0, 1.0, -1.0]);
    }

    #[test]
    fn deterministic_ode_with_indicator_drift() {
        let b = make_indicator_interval(0.0f64, 1.0).unwrap();
        let s = make_constant(1.0);
        let lattice = BrownianLattice::from_increments(1.0, Array2::zeros((1, 4))).unwrap();
        let tr = em_path(&b, &s, 0.0, &lattice, 4, false).unwrap();
        assert_eq!(tr.coarse_path(0), &[0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn coupled_hand_example() {
        let (s, _) = make_step_sigma::<f64>();
        let b = make_constant(0.0);
        let lattice = BrownianLattice::from_increments(1.0, array![[0.3, 0.2, -0.8, -0.2]]).unwrap();
        let tr = em_coupled(&b, &s, 0.0, &lattice, &[2], 4).unwrap();
        assert_eq!(tr[&2].coarse_path(0), &[0.0, 1.0, -1.0]);
        let r = tr[&4].coarse_path(0);
        for (got, want) in r.iter().zip([0.0, 0.6, 1.0, -0.6, -0.8]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
        let diff = (tr[&2].coarse_path(0)[2] - r[4]).abs();
        assert_abs_diff_eq!(diff, 0.2, epsilon = 1e-12);
    }

    #[test]
    fn fine_agrees_with_coarse_at_grid_times() {
        let (s, _) = make_step_sigma::<f64>();
        let b = make_indicator_interval(-0.5, 0.5).unwrap();
        let lattice = BrownianLattice::<f64>::generate(4, 1.0, 512, 6).unwrap();
        let tr = em_path(&b, &s, 0.1, &lattice, 16, true).unwrap();
        for j in 0..6 {
            let fine = tr.fine_path(j).unwrap();
            for (k, c) in tr.coarse_path(j).iter().enumerate() {
                assert_eq!(fine[k * 32], *c);
            }
        }
    }

    #[test]
    fn coupled_validates() {
        let (s, _) = make_step_sigma::<f64>();
        let b = make_constant(0.0);
        let lattice = BrownianLattice::<f64>::generate(4, 1.0, 64, 2).unwrap();
        assert!(em_coupled(&b, &s, 0.0, &lattice, &[64], 32).is_err());
        assert!(matches!(
            em_coupled(&b, &s, 0.0, &lattice, &[3], 64),
            Err(Error::Divisibility { .. })
        ));
        assert!(matches!(em_path(&b, &s, 0.0, &lattice, 5, true), Err(Error::Divisibility { .. })));
    }

    #[test]
    fn path_bound_holds() {
        let (s, cert) = make_step_sigma::<f64>();
        let b = make_indicator_interval(0.0, 1.0).unwrap();
        let lattice = BrownianLattice::<f64>::generate(6, 1.0, 256, 20).unwrap();
        let tr = em_path(&b, &s, 0.3, &lattice, 32, false).unwrap();
        for j in 0..20 {
            let bound = path_bound(0.3, 1.0, 1.0, cert.sigma_upper, lattice.path(j));
            assert!(tr.coarse_path(j).iter().all(|x| x.abs() <= bound));
        }
    }

    #[test]
    fn non_finite_is_reported() {
        use crate::coeffs::CoefficientSpec;
        use std::sync::Arc;
        let bad = CoefficientSpec::from_parts(
            "blowup",
            Arc::new(|x: f64| if x > 0.5 { f64::INFINITY } else { 1.0 }),
            (1.0, 1.0),
            1.0,
            1.0,
            0.0,
            crate::coeffs::SingularSet::Empty,
            0.0,
            None,
        );
        let lattice = BrownianLattice::from_increments(1.0, array![[0.0, 0.0, 0.0, 0.0]]).unwrap();
        let r = em_path(&bad, &make_constant(1.0), 0.0, &lattice, 4, false);
        assert!(matches!(r, Err(Error::NonFinite { path: 0, .. })));
    }
}
