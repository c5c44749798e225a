//! Globally adaptive Gauss–Kronrod (7/15) quadrature with mandatory
//! breakpoints. Jumps of the integrand must be passed as breakpoints so no
//! panel straddles them.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::scalar::Real;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

pub const DEFAULT_MAX_PANELS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult<T> {
    pub value: T,
    pub abs_error: T,
    pub panels: usize,
}

#[derive(Debug, Clone, Copy)]
struct Panel<T> {
    a: T,
    b: T,
    value: T,
    error: T,
}

impl<T: Real> PartialEq for Panel<T> {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl<T: Real> Eq for Panel<T> {}
impl<T: Real> PartialOrd for Panel<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T: Real> Ord for Panel<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error
            .partial_cmp(&other.error)
            .unwrap_or(Ordering::Equal)
    }
}

fn gauss_kronrod<T: Real, F: Fn(T) -> T>(f: &F, a: T, b: T) -> Panel<T> {
    let half = T::lit(0.5);
    let center = half * (a + b);
    let half_len = half * (b - a);
    let fc = f(center);
    let mut kronrod = fc * T::lit(WGK[7]);
    let mut gauss = fc * T::lit(WG[3]);
    for j in 0..7 {
        let dx = half_len * T::lit(XGK[j]);
        let pair = f(center - dx) + f(center + dx);
        kronrod += T::lit(WGK[j]) * pair;
        if j % 2 == 1 {
            gauss += T::lit(WG[j / 2]) * pair;
        }
    }
    Panel {
        a,
        b,
        value: kronrod * half_len,
        error: ((kronrod - gauss) * half_len).abs(),
    }
}

/// Integrates `f` over `[a, b]` to absolute tolerance `tol`.
///
/// `breakpoints` outside `(a, b)` are ignored; the rest become panel edges.
pub fn integrate<T: Real, F: Fn(T) -> T>(
    f: F,
    a: T,
    b: T,
    breakpoints: &[T],
    tol: T,
) -> Result<QuadResult<T>> {
    integrate_with_limit(f, a, b, breakpoints, tol, DEFAULT_MAX_PANELS)
}

pub fn integrate_with_limit<T: Real, F: Fn(T) -> T>(
    f: F,
    a: T,
    b: T,
    breakpoints: &[T],
    tol: T,
    max_panels: usize,
) -> Result<QuadResult<T>> {
    if a == b {
        return Ok(QuadResult {
            value: T::zero(),
            abs_error: T::zero(),
            panels: 0,
        });
    }
    if b < a {
        let r = integrate_with_limit(f, b, a, breakpoints, tol, max_panels)?;
        return Ok(QuadResult {
            value: -r.value,
            ..r
        });
    }
    let mut edges: Vec<T> = std::iter::once(a)
        .chain(breakpoints.iter().copied().filter(|&p| p > a && p < b))
        .chain(std::iter::once(b))
        .collect();
    edges.sort_by(|x, y| x.partial_cmp(y).unwrap_or(Ordering::Equal));
    edges.dedup();

    let mut heap: BinaryHeap<Panel<T>> = edges
        .windows(2)
        .map(|w| gauss_kronrod(&f, w[0], w[1]))
        .collect();
    let total = |heap: &BinaryHeap<Panel<T>>| {
        heap.iter().fold((T::zero(), T::zero()), |(v, e), p| {
            (v + p.value, e + p.error)
        })
    };
    loop {
        let (value, error) = total(&heap);
        if error <= tol {
            return Ok(QuadResult {
                value,
                abs_error: error,
                panels: heap.len(),
            });
        }
        let worst = heap.pop().expect("non-empty panel set");
        let mid = T::lit(0.5) * (worst.a + worst.b);
        if heap.len() + 2 > max_panels || mid <= worst.a || mid >= worst.b {
            heap.push(worst);
            let (_, error) = total(&heap);
            return Err(Error::Quadrature {
                achieved: error.as_f64(),
                tolerance: tol.as_f64(),
            });
        }
        heap.push(gauss_kronrod(&f, worst.a, mid));
        heap.push(gauss_kronrod(&f, mid, worst.b));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn polynomial_exact() {
        let r = integrate(|x: f64| x * x * x - 2.0 * x, 0.0, 2.0, &[], 1e-12).unwrap();
        assert_abs_diff_eq!(r.value, 0.0, epsilon = 1e-13);
    }

    #[test]
    fn exponential() {
        let r = integrate(|x: f64| (-2.0 * x).exp(), 0.0, 1.0, &[], 1e-12).unwrap();
        assert_abs_diff_eq!(r.value, (1.0 - (-2.0f64).exp()) / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn jump_with_breakpoint_is_exact() {
        let step = |x: f64| if x >= 0.3 { 1.0 } else { 0.0 };
        let r = integrate(step, -1.0, 1.0, &[0.3], 1e-12).unwrap();
        assert_abs_diff_eq!(r.value, 0.7, epsilon = 1e-14);
    }

    #[test]
    fn reversed_limits_negate() {
        let r = integrate(|x: f64| x.sin(), 1.0, 0.0, &[], 1e-12).unwrap();
        assert_abs_diff_eq!(r.value, -(1.0 - 1.0f64.cos()), epsilon = 1e-12);
    }

    #[test]
    fn reports_nonconvergence() {
        let r = integrate_with_limit(|x: f64| 1.0 / x.abs().sqrt().max(1e-300), -1.0, 1.0, &[], 1e-14, 8);
        assert!(matches!(r, Err(Error::Quadrature { .. })));
    }

    #[test]
    fn f32_works() {
        let r = integrate(|x: f32| x.cos(), 0.0f32, 1.0, &[], 1e-5).unwrap();
        assert!((r.value - 1.0f32.sin()).abs() < 1e-5);
    }
}
