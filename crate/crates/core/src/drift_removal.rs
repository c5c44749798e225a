//! Removal-of-drift transform
//!
//! ```text
//! φ(x) = ∫₀ˣ exp(−2 ∫₀ʸ b(z)/σ²(z) dz) dy
//! ```
//!
//! for integrable `b` and uniformly elliptic `σ`. `Y = φ(X)` has no drift.
//! The inner integral `G(y) = ∫₀ʸ b/σ²` is tabulated on an adaptive mesh that
//! contains every jump of `b` and `σ` as a node, and interpolated linearly
//! between nodes. With `G` piecewise linear the outer integral has a closed
//! form on each mesh segment, so `φ`, `φ'` and `φ⁻¹` are all consistent with
//! one another to rounding.

use std::cmp::Ordering;

use crate::coeffs::{CoefficientSpec, DiffusionCertificate};
use crate::error::{Error, Result};
use crate::quadrature;
use crate::scalar::Real;

const MAX_BREAKPOINTS: usize = 10_000;

#[derive(Debug, Clone)]
pub struct DriftRemovalOptions<T> {
    /// Absolute accuracy target for `φ`.
    pub tolerance: T,
    /// Mesh covers `[−domain_bound, domain_bound]`; `φ` is extended linearly
    /// beyond it.
    pub domain_bound: T,
    pub initial_spacing: T,
    pub min_segment: T,
    pub max_nodes: usize,
}

impl<T: Real> Default for DriftRemovalOptions<T> {
    fn default() -> Self {
        Self {
            tolerance: T::lit(1e-8),
            domain_bound: T::lit(50.0),
            initial_spacing: T::lit(0.5),
            min_segment: T::lit(1e-9),
            max_nodes: 1 << 20,
        }
    }
}

#[derive(Clone)]
pub struct DriftRemovalTransform<T> {
    pub b: CoefficientSpec<T>,
    pub sigma: CoefficientSpec<T>,
    /// `K_σ = σ̄ ∨ σ̲⁻¹`.
    pub k_sigma: T,
    /// `C_0 = exp(2 K_σ² ‖b‖_{L¹})`.
    pub c0: T,
    pub tolerance: T,
    pub domain_bound: T,
    nodes: Vec<T>,
    inner: Vec<T>,
    phi_nodes: Vec<T>,
}

impl<T: Real> std::fmt::Debug for DriftRemovalTransform<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DriftRemovalTransform")
            .field("b", &self.b)
            .field("sigma", &self.sigma)
            .field("k_sigma", &self.k_sigma)
            .field("c0", &self.c0)
            .field("mesh_len", &self.nodes.len())
            .finish()
    }
}

/// `(e^u − 1)/u`, continuous at 0.
fn expm1_ratio<T: Real>(u: T) -> T {
    if u.abs() < T::lit(1e-8) {
        T::one() + u * T::lit(0.5)
    } else {
        u.exp_m1() / u
    }
}

fn cmp<T: Real>(a: &T, b: &T) -> Ordering {
    a.partial_cmp(b).unwrap_or(Ordering::Equal)
}

impl<T: Real> DriftRemovalTransform<T> {
    pub fn new(
        b: &CoefficientSpec<T>,
        sigma: &CoefficientSpec<T>,
        cert: &DiffusionCertificate<T>,
    ) -> Result<Self> {
        Self::with_options(b, sigma, cert, DriftRemovalOptions::default())
    }

    pub fn with_options(
        b: &CoefficientSpec<T>,
        sigma: &CoefficientSpec<T>,
        cert: &DiffusionCertificate<T>,
        opts: DriftRemovalOptions<T>,
    ) -> Result<Self> {
        let l1 = b.l1_norm.ok_or_else(|| {
            Error::Domain(format!("drift {} is not integrable; φ is undefined", b.name))
        })?;
        if !(cert.sigma_lower > T::zero()) || cert.sigma_upper < cert.sigma_lower {
            return Err(Error::Domain("diffusion must be uniformly elliptic".into()));
        }
        let k_sigma = cert.k_sigma();
        let c0 = (T::lit(2.0) * k_sigma * k_sigma * l1).exp();
        let bound = opts.domain_bound;

        let mut nodes: Vec<T> = Vec::new();
        let steps = (bound / opts.initial_spacing).ceil().to_usize().unwrap_or(1).max(1);
        for i in 0..=2 * steps {
            nodes.push(-bound + T::from_usize_lossy(i) * (bound + bound) / T::from_usize_lossy(2 * steps));
        }
        nodes.push(T::zero());
        nodes.extend(b.singular_set.points_in(-bound, bound, MAX_BREAKPOINTS));
        nodes.extend(sigma.singular_set.points_in(-bound, bound, MAX_BREAKPOINTS));
        nodes.sort_by(cmp);
        nodes.dedup();

        let ratio = |x: T| {
            let s = sigma.eval(x);
            b.eval(x) / (s * s)
        };
        let g_tol = opts.tolerance * T::lit(0.1);
        let q_tol = g_tol * T::lit(1e-2);
        let integral = |a: T, c: T| -> Result<T> {
            Ok(quadrature::integrate(ratio, a, c, &[], q_tol)?.value)
        };

        // Adaptive refinement: split a segment while the linear interpolant of
        // G misses the midpoint value by more than g_tol.
        let mut refined: Vec<(T, T)> = Vec::with_capacity(nodes.len());
        for w in nodes.windows(2) {
            let mut stack = vec![(w[0], w[1], integral(w[0], w[1])?)];
            let mut done = Vec::new();
            while let Some((a, c, i_ac)) = stack.pop() {
                let mid = T::lit(0.5) * (a + c);
                let i_am = integral(a, mid)?;
                if (i_am - T::lit(0.5) * i_ac).abs() <= g_tol || c - a <= opts.min_segment {
                    done.push((a, i_ac));
                } else {
                    stack.push((mid, c, i_ac - i_am));
                    stack.push((a, mid, i_am));
                }
                if refined.len() + done.len() + stack.len() > opts.max_nodes {
                    return Err(Error::Quadrature {
                        achieved: (i_am - T::lit(0.5) * i_ac).abs().as_f64(),
                        tolerance: g_tol.as_f64(),
                    });
                }
            }
            done.sort_by(|x, y| cmp(&x.0, &y.0));
            refined.extend(done);
        }
        let last = *nodes.last().expect("nodes");
        let mut mesh: Vec<T> = refined.iter().map(|s| s.0).collect();
        mesh.push(last);
        let seg_int: Vec<T> = refined.iter().map(|s| s.1).collect();

        let zero = mesh
            .binary_search_by(|x| cmp(x, &T::zero()))
            .expect("0 is a mesh node");
        let mut inner = vec![T::zero(); mesh.len()];
        for i in zero..seg_int.len() {
            inner[i + 1] = inner[i] + seg_int[i];
        }
        for i in (0..zero).rev() {
            inner[i] = inner[i + 1] - seg_int[i];
        }
        let mut phi_nodes = vec![T::zero(); mesh.len()];
        let seg_phi = |i: usize| {
            let len = mesh[i + 1] - mesh[i];
            let u = T::lit(-2.0) * (inner[i + 1] - inner[i]);
            (T::lit(-2.0) * inner[i]).exp() * len * expm1_ratio(u)
        };
        for i in zero..seg_int.len() {
            phi_nodes[i + 1] = phi_nodes[i] + seg_phi(i);
        }
        for i in (0..zero).rev() {
            phi_nodes[i] = phi_nodes[i + 1] - seg_phi(i);
        }

        Ok(Self {
            b: b.clone(),
            sigma: sigma.clone(),
            k_sigma,
            c0,
            tolerance: opts.tolerance,
            domain_bound: bound,
            nodes: mesh,
            inner,
            phi_nodes,
        })
    }

    pub fn mesh_len(&self) -> usize {
        self.nodes.len()
    }

    /// Index `i` of the mesh segment `[x_i, x_{i+1})` containing `x`.
    fn segment(&self, x: T) -> usize {
        let i = self.nodes.partition_point(|&n| n <= x);
        i.saturating_sub(1).min(self.nodes.len() - 2)
    }

    fn inner_at(&self, x: T) -> T {
        let x = x.max(-self.domain_bound).min(self.domain_bound);
        let i = self.segment(x);
        let (a, c) = (self.nodes[i], self.nodes[i + 1]);
        let s = (self.inner[i + 1] - self.inner[i]) / (c - a);
        self.inner[i] + s * (x - a)
    }

    /// `φ'(x) = exp(−2 ∫₀ˣ b/σ²)`.
    pub fn phi_prime(&self, x: T) -> T {
        (T::lit(-2.0) * self.inner_at(x)).exp()
    }

    /// `φ''(x) = −2 b(x) φ'(x) / σ²(x)`.
    pub fn phi_second(&self, x: T) -> T {
        let s = self.sigma.eval(x);
        T::lit(-2.0) * self.b.eval(x) * self.phi_prime(x) / (s * s)
    }

    pub fn phi(&self, x: T) -> T {
        let bound = self.domain_bound;
        if x > bound {
            return self.phi(bound) + self.phi_prime(bound) * (x - bound);
        }
        if x < -bound {
            return self.phi(-bound) + self.phi_prime(-bound) * (x + bound);
        }
        let i = self.segment(x);
        let (a, c) = (self.nodes[i], self.nodes[i + 1]);
        let slope = (self.inner[i + 1] - self.inner[i]) / (c - a);
        let len = x - a;
        let u = T::lit(-2.0) * slope * len;
        self.phi_nodes[i] + (T::lit(-2.0) * self.inner[i]).exp() * len * expm1_ratio(u)
    }

    /// Values `φ(−X_max)` and `φ(X_max)` bounding the invertible range.
    pub fn range(&self) -> (T, T) {
        (self.phi_nodes[0], *self.phi_nodes.last().expect("nodes"))
    }

    /// `φ⁻¹(z)`: bracketed Newton iteration with bisection fallback.
    pub fn phi_inverse(&self, z: T) -> Result<T> {
        let (lo, hi) = self.range();
        if !(z >= lo && z <= hi) {
            return Err(Error::Range {
                z: z.as_f64(),
                lo: lo.as_f64(),
                hi: hi.as_f64(),
            });
        }
        let i = self
            .phi_nodes
            .partition_point(|&p| p <= z)
            .saturating_sub(1)
            .min(self.nodes.len() - 2);
        let (mut a, mut c) = (self.nodes[i], self.nodes[i + 1]);
        if self.phi_nodes[i] == z {
            return Ok(a);
        }
        let target = self.tolerance * T::lit(1e-3);
        let mut x = a + (z - self.phi_nodes[i]) / self.phi_prime(a);
        for _ in 0..200 {
            if !(x > a && x < c) {
                x = T::lit(0.5) * (a + c);
            }
            let f = self.phi(x) - z;
            if f.abs() <= target {
                return Ok(x);
            }
            if f > T::zero() {
                c = x;
            } else {
                a = x;
            }
            x = x - f / self.phi_prime(x);
            if c - a <= T::epsilon() * (a.abs() + c.abs()) {
                return Ok(T::lit(0.5) * (a + c));
            }
        }
        Ok(x)
    }
}

/// Extremes measured while checking the bounds on `φ` on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftRemovalReport<T> {
    pub c0: T,
    pub min_phi_prime: T,
    pub max_phi_prime: T,
    /// `max |φ''|` against `2 K_σ² ‖b‖_∞ ‖φ'‖_∞`.
    pub max_phi_second: T,
    pub phi_second_bound: T,
    /// `max |φ⁻¹(φ(x)) − x|`.
    pub max_roundtrip_error: T,
    /// `max |φ⁻¹(z) − φ⁻¹(w)| / |z − w|` over sampled pairs (≤ C_0 required).
    pub max_inverse_lipschitz: T,
    pub pairs: usize,
    pub violations: Vec<(String, T)>,
}

impl<T> DriftRemovalReport<T> {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

impl<T: Real> DriftRemovalTransform<T> {
    /// Checks `C_0⁻¹ ≤ φ' ≤ C_0`, the `φ''` bound and inverse consistency on
    /// `grid`, and the Lipschitz bound on `φ⁻¹` over consecutive grid pairs
    /// plus `pairs` random pairs.
    pub fn verify(&self, grid: &[T], pairs: usize, seed: u64) -> Result<DriftRemovalReport<T>> {
        use rand_chacha::ChaCha8Rng;
        use rand_core::{RngCore, SeedableRng};

        let slack = T::one() + T::lit(1e-9);
        let mut report = DriftRemovalReport {
            c0: self.c0,
            min_phi_prime: T::infinity(),
            max_phi_prime: T::zero(),
            max_phi_second: T::zero(),
            phi_second_bound: T::lit(2.0) * self.k_sigma * self.k_sigma * self.b.sup_norm,
            max_roundtrip_error: T::zero(),
            max_inverse_lipschitz: T::zero(),
            pairs: 0,
            violations: Vec::new(),
        };
        let mut sup_prime = T::zero();
        let mut images = Vec::with_capacity(grid.len());
        for &x in grid {
            let d = self.phi_prime(x);
            sup_prime = sup_prime.max(d);
            report.min_phi_prime = report.min_phi_prime.min(d);
            report.max_phi_prime = report.max_phi_prime.max(d);
            if d * self.c0 < T::one() / slack || d > self.c0 * slack {
                report.violations.push((format!("C0^-1 <= phi' <= C0 at x={x}"), d));
            }
            report.max_phi_second = report.max_phi_second.max(self.phi_second(x).abs());
            let z = self.phi(x);
            let back = self.phi_inverse(z)?;
            report.max_roundtrip_error = report.max_roundtrip_error.max((back - x).abs());
            images.push((z, back));
        }
        report.phi_second_bound = report.phi_second_bound * sup_prime;
        if report.max_phi_second > report.phi_second_bound * slack {
            report.violations.push(("|phi''| bound".into(), report.max_phi_second));
        }

        let check = |a: (T, T), b: (T, T), report: &mut DriftRemovalReport<T>| {
            let dz = (a.0 - b.0).abs();
            if dz > T::zero() {
                let ratio = (a.1 - b.1).abs() / dz;
                report.max_inverse_lipschitz = report.max_inverse_lipschitz.max(ratio);
                report.pairs += 1;
                if ratio > self.c0 * slack {
                    report.violations.push((format!("phi^-1 Lipschitz at z={}", a.0), ratio));
                }
            }
        };
        for w in images.windows(2) {
            check(w[0], w[1], &mut report);
        }
        if images.len() > 1 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..pairs {
                let i = (rng.next_u64() % images.len() as u64) as usize;
                let j = (rng.next_u64() % images.len() as u64) as usize;
                check(images[i], images[j], &mut report);
            }
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{make_constant, make_indicator_interval, make_step_sigma};
    use approx::assert_abs_diff_eq;

    fn unit_indicator() -> DriftRemovalTransform<f64> {
        let b = make_indicator_interval(0.0, 1.0).unwrap();
        let s = make_constant(1.0);
        let cert = DiffusionCertificate::bounds_only(&s).unwrap();
        DriftRemovalTransform::new(&b, &s, &cert).unwrap()
    }

    #[test]
    fn zero_drift_is_identity() {
        let (s, cert) = make_step_sigma();
        let t = DriftRemovalTransform::new(&make_constant(0.0), &s, &cert).unwrap();
        for x in [-30.0, -1.0, 0.0, 0.3, 7.0, 60.0] {
            assert_abs_diff_eq!(t.phi(x), x, epsilon = 1e-12);
            assert_abs_diff_eq!(t.phi_prime(x), 1.0, epsilon = 1e-15);
            assert_eq!(t.phi_second(x), 0.0);
        }
        assert_abs_diff_eq!(t.phi_inverse(3.5).unwrap(), 3.5, epsilon = 1e-9);
        assert_eq!(t.c0, 1.0);
    }

    #[test]
    fn indicator_closed_forms() {
        let t = unit_indicator();
        let e2 = (-2.0f64).exp();
        assert_eq!(t.phi(0.0), 0.0);
        assert_abs_diff_eq!(t.phi(2.0), (1.0 + e2) / 2.0, epsilon = 1e-10);
        assert_abs_diff_eq!(t.phi(-1.0), -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(t.phi_prime(2.0), e2, epsilon = 1e-12);
        assert_abs_diff_eq!(t.phi_second(0.5), -2.0 * (-1.0f64).exp(), epsilon = 1e-10);
        assert_abs_diff_eq!(t.c0, 2f64.exp(), epsilon = 1e-12);
        assert!(t.phi_second(0.5).abs() <= 2.0 * t.k_sigma.powi(2) * 1.0 * t.c0);
        assert_abs_diff_eq!(t.phi_inverse((1.0 + e2) / 2.0).unwrap(), 2.0, epsilon = 1e-6);
    }

    #[test]
    fn inverse_out_of_range() {
        let t = unit_indicator();
        let (_, hi) = t.range();
        assert!(matches!(t.phi_inverse(hi + 1.0), Err(Error::Range { .. })));
    }

    #[test]
    fn non_integrable_drift_rejected() {
        let s = make_constant(1.0);
        let cert = DiffusionCertificate::bounds_only(&s).unwrap();
        assert!(DriftRemovalTransform::new(&make_constant(0.5), &s, &cert).is_err());
    }

    #[test]
    fn smooth_drift_matches_nested_quadrature() {
        // b(x) = exp(−x²) is not in the built-in piece catalogue; build it raw.
        use crate::coeffs::{CoefficientSpec, SingularSet};
        use std::sync::Arc;
        let b = CoefficientSpec::from_parts(
            "gauss",
            Arc::new(|x: f64| (-x * x).exp()),
            (0.0, 1.0),
            1.0,
            1.0,
            1.0,
            SingularSet::Empty,
            0.0,
            Some(std::f64::consts::PI.sqrt()),
        );
        let s = make_constant(1.0);
        let cert = DiffusionCertificate::bounds_only(&s).unwrap();
        let t = DriftRemovalTransform::new(&b, &s, &cert).unwrap();
        // Oracle: direct nested adaptive quadrature.
        let inner = |y: f64| quadrature::integrate(|z: f64| (-z * z).exp(), 0.0, y, &[], 1e-13).unwrap().value;
        let outer = quadrature::integrate(|y: f64| (-2.0 * inner(y)).exp(), 0.0, 1.7, &[], 1e-11).unwrap().value;
        assert_abs_diff_eq!(t.phi(1.7), outer, epsilon = 1e-8);
    }

    #[test]
    fn verify_indicator_transform() {
        let t = unit_indicator();
        let grid: Vec<f64> = (0..=2000).map(|i| -10.0 + 0.01 * i as f64).collect();
        let r = t.verify(&grid, 10_000, 1).unwrap();
        assert!(r.passed(), "{:?}", r.violations);
        assert_abs_diff_eq!(r.min_phi_prime, (-2f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(r.max_phi_prime, 1.0, epsilon = 1e-12);
        assert!(r.max_roundtrip_error <= 1e-5);
        assert!(r.max_inverse_lipschitz <= 2f64.exp() + 1e-9);
    }
}
