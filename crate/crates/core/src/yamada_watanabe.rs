//! Yamada–Watanabe mollifier pair `(ψ_{δ,ε}, φ_{δ,ε})`.
//!
//! `ψ` is supported in `[ε/δ, ε]`, integrates to one and stays below
//! `2/(z log δ)`. We take `ψ(z) = s·h(log z)/z` with `h` a trapezoid in
//! log coordinates (linear ramps over `ramp_fraction` of the log-width, flat
//! at 1 in between). The normaliser is then exact: `s = 1/((1 − f) log δ)`,
//! and the cap holds as long as `f ≤ 1/2`.
//!
//! `φ(x) = ∫₀^{|x|} ∫₀^y ψ(z) dz dy` is even, C², vanishes on
//! `[−ε/δ, ε/δ]` and has slope `±1` outside `[−ε, ε]`. The inner integral is
//! closed form; the outer one is tabulated on log-spaced nodes and
//! interpolated with monotone cubic Hermite splines.

use crate::error::{Error, Result};
use crate::quadrature;
use crate::scalar::Real;

pub const DEFAULT_RAMP_FRACTION: f64 = 0.125;
pub const DEFAULT_GRID_POINTS: usize = 2048;

#[derive(Debug, Clone)]
pub struct MollifierPair<T> {
    pub delta: T,
    pub eps: T,
    pub ramp_fraction: T,
    /// Normaliser `s` in `ψ(z) = s·h(log z)/z`.
    pub scale: T,
    log_lower: T,
    log_width: T,
    nodes: Vec<T>,
    values: Vec<T>,
    slopes: Vec<T>,
}

impl<T: Real> MollifierPair<T> {
    pub fn build(delta: T, eps: T, ramp_fraction: T, grid_points: usize) -> Result<Self> {
        if !(delta > T::one()) || !delta.is_finite() {
            return Err(Error::Domain(format!("δ must exceed 1, got {delta}")));
        }
        if !(eps > T::zero() && eps < T::one()) {
            return Err(Error::Domain(format!("ε must be in (0, 1), got {eps}")));
        }
        if !(ramp_fraction > T::zero() && ramp_fraction <= T::lit(0.25)) {
            return Err(Error::Domain(format!(
                "ramp fraction must be in (0, 1/4], got {ramp_fraction}"
            )));
        }
        if grid_points < 2 {
            return Err(Error::InvalidInput("need at least two tabulation nodes".into()));
        }
        let log_width = delta.ln();
        let scale = ((T::one() - ramp_fraction) * log_width).recip();
        if scale * log_width > T::lit(2.0) {
            return Err(Error::Domain(format!(
                "cap ψ ≤ 2/(z log δ) violated: s·log δ = {}",
                scale * log_width
            )));
        }
        let mut pair = Self {
            delta,
            eps,
            ramp_fraction,
            scale,
            log_lower: (eps / delta).ln(),
            log_width,
            nodes: Vec::new(),
            values: Vec::new(),
            slopes: Vec::new(),
        };
        pair.tabulate(grid_points)?;
        Ok(pair)
    }

    pub fn with_defaults(delta: T, eps: T) -> Result<Self> {
        Self::build(delta, eps, T::lit(DEFAULT_RAMP_FRACTION), DEFAULT_GRID_POINTS)
    }

    pub fn support(&self) -> (T, T) {
        (self.eps / self.delta, self.eps)
    }

    fn ramp(&self) -> T {
        self.ramp_fraction * self.log_width
    }

    /// Trapezoid in log-offset coordinates `v = log z − log(ε/δ)`.
    fn bump(&self, v: T) -> T {
        let (w, r) = (self.log_width, self.ramp());
        if v <= T::zero() || v >= w {
            T::zero()
        } else if v < r {
            v / r
        } else if v > w - r {
            (w - v) / r
        } else {
            T::one()
        }
    }

    /// `∫₀^v bump`.
    fn bump_integral(&self, v: T) -> T {
        let (w, r) = (self.log_width, self.ramp());
        let half = T::lit(0.5);
        if v <= T::zero() {
            T::zero()
        } else if v < r {
            half * v * v / r
        } else if v <= w - r {
            half * r + (v - r)
        } else if v < w {
            let tail = w - v;
            w - r - half * tail * tail / r
        } else {
            w - r
        }
    }

    /// Log-space corners of the trapezoid, in `z`.
    fn corners(&self) -> [T; 2] {
        let r = self.ramp();
        [
            (self.log_lower + r).exp(),
            (self.log_lower + self.log_width - r).exp(),
        ]
    }

    pub fn psi(&self, z: T) -> T {
        let (lo, hi) = self.support();
        if z < lo || z > hi {
            return T::zero();
        }
        self.scale * self.bump(z.ln() - self.log_lower) / z
    }

    /// `Ψ(y) = ∫₀^y ψ`.
    pub fn psi_integral(&self, y: T) -> T {
        let (lo, hi) = self.support();
        if y <= lo {
            T::zero()
        } else if y >= hi {
            T::one()
        } else {
            (self.scale * self.bump_integral(y.ln() - self.log_lower)).min(T::one())
        }
    }

    fn tabulate(&mut self, points: usize) -> Result<()> {
        let (lo, hi) = self.support();
        let corners = self.corners();
        let span = self.log_width;
        let nodes: Vec<T> = (0..points)
            .map(|i| {
                if i == 0 {
                    lo
                } else if i == points - 1 {
                    hi
                } else {
                    (self.log_lower + span * T::from_usize_lossy(i) / T::from_usize_lossy(points - 1)).exp()
                }
            })
            .collect();
        let tol = T::lit(1e-14).max(T::epsilon() * T::lit(16.0)) * self.eps;
        let mut values = vec![T::zero(); points];
        for i in 1..points {
            let piece = quadrature::integrate(|y| self.psi_integral(y), nodes[i - 1], nodes[i], &corners, tol)?;
            values[i] = values[i - 1] + piece.value;
        }
        let mut slopes: Vec<T> = nodes.iter().map(|&y| self.psi_integral(y)).collect();
        // Fritsch–Carlson limiter.
        for i in 0..points - 1 {
            let secant = (values[i + 1] - values[i]) / (nodes[i + 1] - nodes[i]);
            if secant <= T::zero() {
                slopes[i] = T::zero();
                slopes[i + 1] = T::zero();
                continue;
            }
            let (a, b) = (slopes[i] / secant, slopes[i + 1] / secant);
            let norm = a * a + b * b;
            if norm > T::lit(9.0) {
                let t = T::lit(3.0) / norm.sqrt();
                slopes[i] = t * a * secant;
                slopes[i + 1] = t * b * secant;
            }
        }
        self.nodes = nodes;
        self.values = values;
        self.slopes = slopes;
        Ok(())
    }

    /// `φ_{δ,ε}(x)`.
    pub fn phi(&self, x: T) -> T {
        let a = x.abs();
        let (lo, hi) = self.support();
        if a <= lo {
            return T::zero();
        }
        let last = *self.values.last().expect("tabulated");
        if a >= hi {
            return last + (a - hi);
        }
        let i = self
            .nodes
            .partition_point(|&y| y <= a)
            .saturating_sub(1)
            .min(self.nodes.len() - 2);
        let (y0, y1) = (self.nodes[i], self.nodes[i + 1]);
        let h = y1 - y0;
        let t = (a - y0) / h;
        let (t2, t3) = (t * t, t * t * t);
        let two = T::lit(2.0);
        let three = T::lit(3.0);
        let h00 = two * t3 - three * t2 + T::one();
        let h10 = t3 - two * t2 + t;
        let h01 = three * t2 - two * t3;
        let h11 = t3 - t2;
        h00 * self.values[i] + h10 * h * self.slopes[i] + h01 * self.values[i + 1] + h11 * h * self.slopes[i + 1]
    }

    /// `φ'(x) = sign(x)·Ψ(|x|)`.
    pub fn phi_prime(&self, x: T) -> T {
        let v = self.psi_integral(x.abs());
        if x < T::zero() {
            -v
        } else {
            v
        }
    }

    /// `φ''(x) = ψ(|x|)`.
    pub fn phi_second(&self, x: T) -> T {
        self.psi(x.abs())
    }
}

/// Largest deviations from each property; a property holds when its
/// violation count is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct MollifierReport<T> {
    pub points: usize,
    /// `|∫ψ − 1|`.
    pub integral_error: T,
    /// `max ψ(z)·z·log δ / 2` (≤ 1 required).
    pub cap_ratio: T,
    /// `min (ε + φ(x) − |x|)` (≥ 0 required).
    pub dominance_slack: T,
    /// `max |φ'(x)|` (≤ 1 required).
    pub max_slope: T,
    /// `max |φ''(x) − φ''(−x)|`, `max |φ''(x) − ψ(|x|)|` folded together.
    pub second_derivative_mismatch: T,
    pub violations: Vec<(String, T)>,
}

impl<T> MollifierReport<T> {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Dense grid on `[−2ε, 2ε]` plus tail points.
pub fn default_check_grid<T: Real>(pair: &MollifierPair<T>, points: usize) -> Vec<T> {
    let two_eps = pair.eps + pair.eps;
    let mut grid: Vec<T> = (0..points)
        .map(|i| -two_eps + (two_eps + two_eps) * T::from_usize_lossy(i) / T::from_usize_lossy(points.max(2) - 1))
        .collect();
    for k in [5.0, 10.0, 100.0] {
        grid.push(pair.eps * T::lit(k));
        grid.push(-pair.eps * T::lit(k));
    }
    grid
}

pub fn verify_properties<T: Real>(pair: &MollifierPair<T>, grid: &[T]) -> Result<MollifierReport<T>> {
    let (lo, hi) = pair.support();
    let slack = T::lit(1e-9);
    let integral = quadrature::integrate(|z| pair.psi(z), lo, hi, &pair.corners(), T::lit(1e-12))?.value;
    let mut report = MollifierReport {
        points: grid.len(),
        integral_error: (integral - T::one()).abs(),
        cap_ratio: T::zero(),
        dominance_slack: T::infinity(),
        max_slope: T::zero(),
        second_derivative_mismatch: T::zero(),
        violations: Vec::new(),
    };
    if report.integral_error > T::lit(1e-6) {
        report.violations.push(("integral".into(), integral));
    }
    for &x in grid {
        let a = x.abs();
        let psi = pair.psi(a);
        if a > T::zero() {
            let ratio = psi * a * pair.delta.ln() / T::lit(2.0);
            report.cap_ratio = report.cap_ratio.max(ratio);
            if psi < T::zero() || ratio > T::one() + slack {
                report.violations.push((format!("cap at z={a}"), ratio));
            }
            let inside = a >= lo && a <= hi;
            if !inside && psi != T::zero() {
                report.violations.push((format!("support at z={a}"), psi));
            }
        }
        let dom = pair.eps + pair.phi(x) - a;
        report.dominance_slack = report.dominance_slack.min(dom);
        if dom < -slack {
            report.violations.push((format!("|x| ≤ ε + φ at x={x}"), dom));
        }
        let slope = pair.phi_prime(x).abs();
        report.max_slope = report.max_slope.max(slope);
        if slope > T::one() + slack {
            report.violations.push((format!("|φ'| ≤ 1 at x={x}"), slope));
        }
        let mismatch = (pair.phi_second(x) - pair.phi_second(-x))
            .abs()
            .max((pair.phi_second(x) - psi).abs());
        report.second_derivative_mismatch = report.second_derivative_mismatch.max(mismatch);
        if mismatch > T::zero() {
            report.violations.push((format!("φ''(±|x|) = ψ(|x|) at x={x}"), mismatch));
        }
    }
    Ok(report)
}
