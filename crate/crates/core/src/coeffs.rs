//! Coefficient functions with machine-checkable regularity certificates.
//!
//! A [`CoefficientSpec`] couples an evaluatable `f: ℝ → ℝ` with the data
//! describing its membership in the class of bounded functions that are
//! β-Hölder away from a singular set `S(f)` whose ε-neighbourhood satisfies
//! `λ(S(f)^ε ∩ [−K, K]) ≤ C·K·ε^κ`. Diffusion coefficients additionally carry
//! a [`DiffusionCertificate`]: ellipticity bounds plus a bounded, strictly
//! increasing witness `f_σ` with `|σ(x) − σ(y)|² ≤ |f_σ(x) − f_σ(y)|`.
//!
//! The witnesses shipped for the step diffusion and for ζ are our own
//! choices; see [`make_step_sigma`] and [`make_zeta`].

use std::cmp::Ordering;
use std::fmt;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};
use crate::quadrature;
use crate::scalar::Real;

pub type ScalarFn<T> = Arc<dyn Fn(T) -> T + Send + Sync>;
pub type PointFn<T> = Arc<dyn Fn(u64) -> T + Send + Sync>;

/// Scan limit when locating the merge cutoff of an accumulating sequence.
const MAX_SEQUENCE_SCAN: u64 = 50_000_000;
pub const DEFAULT_HOLDER_PAIRS: usize = 10_000;
pub const DEFAULT_PAIR_SEED: u64 = 0x5eed_c0ef;

fn total_cmp<T: Real>(a: &T, b: &T) -> Ordering {
    a.partial_cmp(b).unwrap_or(Ordering::Equal)
}

/// `p_1 > p_2 > … > 0` with `p_k → 0`, given in closed form.
#[derive(Clone)]
pub struct AccumulatingSequence<T> {
    pub label: String,
    point: PointFn<T>,
}

impl<T: Real> AccumulatingSequence<T> {
    pub fn new(label: impl Into<String>, point: PointFn<T>) -> Self {
        Self {
            label: label.into(),
            point,
        }
    }

    /// `p_k = k^{−exponent}`.
    pub fn power_law(exponent: T) -> Self {
        Self::new(
            format!("k^-{exponent}"),
            Arc::new(move |k: u64| T::from_u64(k).expect("index").powf(-exponent)),
        )
    }

    #[inline]
    pub fn point(&self, k: u64) -> T {
        (self.point)(k)
    }

    /// Smallest `k ≥ 1` with `p_k ≤ y` (for `y > 0`).
    fn first_at_or_below(&self, y: T) -> u64 {
        if self.point(1) <= y {
            return 1;
        }
        let mut hi = 2u64;
        while self.point(hi) > y {
            if hi > u64::MAX / 4 {
                return hi;
            }
            hi *= 2;
        }
        let mut lo = hi / 2; // p_lo > y
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if self.point(mid) > y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }
}

impl<T> fmt::Debug for AccumulatingSequence<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AccumulatingSequence")
            .field("label", &self.label)
            .finish_non_exhaustive()
    }
}

/// The singular set `S(f)` outside of which `f` is Hölder.
#[derive(Clone, Debug)]
pub enum SingularSet<T> {
    Empty,
    /// Strictly increasing points.
    Finite(Vec<T>),
    /// Strictly decreasing points accumulating at 0.
    Accumulating(AccumulatingSequence<T>),
    /// Produced when combining coefficients.
    Union(Vec<SingularSet<T>>),
}

impl<T: Real> SingularSet<T> {
    pub fn finite(points: Vec<T>) -> Result<Self> {
        if points.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidInput(
                "singular points must be strictly increasing".into(),
            ));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidInput("singular points must be finite".into()));
        }
        Ok(if points.is_empty() {
            SingularSet::Empty
        } else {
            SingularSet::Finite(points)
        })
    }

    pub fn is_empty(&self) -> bool {
        match self {
            SingularSet::Empty => true,
            SingularSet::Finite(p) => p.is_empty(),
            SingularSet::Accumulating(_) => false,
            SingularSet::Union(parts) => parts.iter().all(SingularSet::is_empty),
        }
    }

    /// Whether the closed interval `[a, b]` meets the set.
    pub fn intersects(&self, a: T, b: T) -> bool {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        match self {
            SingularSet::Empty => false,
            SingularSet::Finite(points) => {
                let i = points.partition_point(|&p| p < a);
                i < points.len() && points[i] <= b
            }
            SingularSet::Accumulating(seq) => {
                if b <= T::zero() {
                    false
                } else if a <= T::zero() {
                    true
                } else {
                    seq.point(seq.first_at_or_below(b)) >= a
                }
            }
            SingularSet::Union(parts) => parts.iter().any(|s| s.intersects(a, b)),
        }
    }

    /// Points of the set inside `(a, b)`, at most `limit` of them (the
    /// largest ones for an accumulating sequence).
    pub fn points_in(&self, a: T, b: T, limit: usize) -> Vec<T> {
        let mut out = Vec::new();
        match self {
            SingularSet::Empty => {}
            SingularSet::Finite(points) => {
                out.extend(points.iter().copied().filter(|&p| p > a && p < b));
            }
            SingularSet::Accumulating(seq) => {
                if b > T::zero() {
                    let start = if b > seq.point(1) { 1 } else { seq.first_at_or_below(b) };
                    let mut k = start;
                    while out.len() < limit {
                        let p = seq.point(k);
                        if p <= a || p <= T::zero() {
                            break;
                        }
                        if p < b {
                            out.push(p);
                        }
                        k += 1;
                    }
                }
            }
            SingularSet::Union(parts) => {
                for s in parts {
                    out.extend(s.points_in(a, b, limit));
                }
            }
        }
        out.sort_by(total_cmp);
        out.dedup();
        out.truncate(limit);
        out
    }

    fn raw_intervals(&self, eps: T, out: &mut Vec<(T, T)>) -> Result<()> {
        match self {
            SingularSet::Empty => {}
            SingularSet::Finite(points) => {
                out.extend(points.iter().map(|&p| (p - eps, p + eps)));
            }
            SingularSet::Accumulating(seq) => {
                let two_eps = eps + eps;
                let gap = |k: u64| seq.point(k) - seq.point(k + 1);
                // The cutoff is the first index whose gap and the two
                // following gaps are all below 2ε.
                let mut k = 1u64;
                loop {
                    if gap(k) < two_eps && gap(k + 1) < two_eps && gap(k + 2) < two_eps {
                        break;
                    }
                    out.push((seq.point(k) - eps, seq.point(k) + eps));
                    k += 1;
                    if k > MAX_SEQUENCE_SCAN {
                        return Err(Error::Domain(format!(
                            "ε = {eps} too small to resolve sequence {}",
                            seq.label
                        )));
                    }
                }
                out.push((-eps, seq.point(k) + eps));
            }
            SingularSet::Union(parts) => {
                for s in parts {
                    s.raw_intervals(eps, out)?;
                }
            }
        }
        Ok(())
    }

    /// Disjoint sorted intervals forming `S^ε ∩ [−K, K]`.
    pub fn neighborhood_intervals(&self, eps: T, k_bound: T) -> Result<Vec<(T, T)>> {
        if !(eps > T::zero()) || !(k_bound >= T::one()) {
            return Err(Error::Domain(format!(
                "neighbourhood needs ε > 0 and K ≥ 1, got ε = {eps}, K = {k_bound}"
            )));
        }
        let mut raw = Vec::new();
        self.raw_intervals(eps, &mut raw)?;
        raw.sort_by(|x, y| total_cmp(&x.0, &y.0));
        let mut merged: Vec<(T, T)> = Vec::with_capacity(raw.len());
        for (lo, hi) in raw {
            let lo = lo.max(-k_bound);
            let hi = hi.min(k_bound);
            if lo >= hi {
                continue;
            }
            match merged.last_mut() {
                Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
                _ => merged.push((lo, hi)),
            }
        }
        Ok(merged)
    }

    pub fn summary(&self) -> String {
        match self {
            SingularSet::Empty => "∅".into(),
            SingularSet::Finite(p) => format!(
                "{{{}}}",
                p.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(", ")
            ),
            SingularSet::Accumulating(seq) => format!("{{p_k = {}, k ≥ 1}} → 0", seq.label),
            SingularSet::Union(parts) => parts
                .iter()
                .map(SingularSet::summary)
                .collect::<Vec<_>>()
                .join(" ∪ "),
        }
    }
}

/// Exact Lebesgue measure of `S^ε ∩ [−K, K]` by interval merging.
pub fn neighborhood_measure<T: Real>(set: &SingularSet<T>, eps: T, k_bound: T) -> Result<T> {
    Ok(set
        .neighborhood_intervals(eps, k_bound)?
        .into_iter()
        .map(|(a, b)| b - a)
        .sum())
}

/// Lower bound for `C_{β,κ}`: the largest ratio `λ(S^ε ∩ [−K,K]) / (K ε^κ)`
/// over the supplied `(K, ε)` pairs.
pub fn estimate_c_beta_kappa<T: Real>(set: &SingularSet<T>, kappa: T, grid: &[(T, T)]) -> Result<T> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty (K, ε) grid".into()));
    }
    let mut best = T::zero();
    for &(k, eps) in grid {
        let ratio = neighborhood_measure(set, eps, k)? / (k * eps.powf(kappa));
        best = best.max(ratio);
    }
    Ok(best)
}

/// `K ∈ {1, 2, 5, 10, 100}` × `ε ∈ {10⁻⁶ … 10}` at four points per decade.
pub fn default_neighborhood_grid<T: Real>() -> Vec<(T, T)> {
    let mut grid = Vec::new();
    for k in [1.0, 2.0, 5.0, 10.0, 100.0] {
        for j in 0..=28 {
            let eps = 10f64.powf(-6.0 + j as f64 * 0.25);
            grid.push((T::lit(k), T::lit(eps)));
        }
    }
    grid
}

/// An evaluatable coefficient with its regularity certificate.
#[derive(Clone)]
pub struct CoefficientSpec<T> {
    pub name: String,
    f: ScalarFn<T>,
    /// `‖f‖_∞`.
    pub sup_norm: T,
    /// Certified `inf f` and `sup f`.
    pub range: (T, T),
    pub beta: T,
    pub kappa: T,
    /// Hölder constant away from `S(f)`; `‖f‖_β = sup_norm + holder_seminorm`.
    pub holder_seminorm: T,
    pub singular_set: SingularSet<T>,
    pub c_beta_kappa_bound: T,
    /// `Some(‖f‖_{L¹})` when `f` is integrable.
    pub l1_norm: Option<T>,
}

impl<T> fmt::Debug for CoefficientSpec<T>
where
    T: Real,
{
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientSpec")
            .field("name", &self.name)
            .field("sup_norm", &self.sup_norm)
            .field("range", &self.range)
            .field("beta", &self.beta)
            .field("kappa", &self.kappa)
            .field("holder_seminorm", &self.holder_seminorm)
            .field("singular_set", &self.singular_set.summary())
            .field("c_beta_kappa_bound", &self.c_beta_kappa_bound)
            .field("l1_norm", &self.l1_norm)
            .finish()
    }
}

impl<T: Real> CoefficientSpec<T> {
    #[inline]
    pub fn eval(&self, x: T) -> T {
        (self.f)(x)
    }

    pub fn function(&self) -> ScalarFn<T> {
        Arc::clone(&self.f)
    }

    pub fn in_l1(&self) -> bool {
        self.l1_norm.is_some()
    }

    /// `‖f‖_β`.
    pub fn holder_norm(&self) -> T {
        self.sup_norm + self.holder_seminorm
    }

    pub fn is_constant(&self) -> bool {
        self.range.0 == self.range.1
    }

    /// Builds a spec from raw parts. Nothing is verified here; run
    /// [`check_certificates`] on the result.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        name: impl Into<String>,
        f: ScalarFn<T>,
        range: (T, T),
        beta: T,
        kappa: T,
        holder_seminorm: T,
        singular_set: SingularSet<T>,
        c_beta_kappa_bound: T,
        l1_norm: Option<T>,
    ) -> Self {
        Self {
            name: name.into(),
            f,
            sup_norm: range.0.abs().max(range.1.abs()),
            range,
            beta,
            kappa,
            holder_seminorm,
            singular_set,
            c_beta_kappa_bound,
            l1_norm,
        }
    }

    /// `a·f + b·g`; the certificate is assembled from the two inputs.
    pub fn linear_combination(a: T, f: &Self, b: T, g: &Self) -> Self {
        let beta = f.beta.min(g.beta);
        let kappa = f.kappa.min(g.kappa);
        // Hölder constant of exponent `beta` for a bounded function certified
        // with a larger exponent: pairs closer than 1 keep the old constant,
        // farther pairs are bounded by the oscillation.
        let reexpress = |s: &Self| {
            if s.beta == beta {
                s.holder_seminorm
            } else {
                s.holder_seminorm.max(s.sup_norm + s.sup_norm)
            }
        };
        let seminorm = a.abs() * reexpress(f) + b.abs() * reexpress(g);
        let c_bound = if f.kappa == g.kappa {
            f.c_beta_kappa_bound + g.c_beta_kappa_bound
        } else {
            (f.c_beta_kappa_bound + g.c_beta_kappa_bound).max(T::lit(2.0))
        };
        let singular_set = union_sets(&f.singular_set, &g.singular_set);
        let l1 = match (f.l1_norm, g.l1_norm) {
            (Some(x), Some(y)) => Some(a.abs() * x + b.abs() * y),
            _ if b == T::zero() => f.l1_norm.map(|x| a.abs() * x),
            _ if a == T::zero() => g.l1_norm.map(|y| b.abs() * y),
            _ => None,
        };
        let scaled = |c: T, r: (T, T)| {
            let (x, y) = (c * r.0, c * r.1);
            (x.min(y), x.max(y))
        };
        let (fa, gb) = (scaled(a, f.range), scaled(b, g.range));
        let range = (fa.0 + gb.0, fa.1 + gb.1);
        let (ff, gg) = (Arc::clone(&f.f), Arc::clone(&g.f));
        Self {
            name: format!("{a}·{} + {b}·{}", f.name, g.name),
            f: Arc::new(move |x| a * ff(x) + b * gg(x)),
            sup_norm: a.abs() * f.sup_norm + b.abs() * g.sup_norm,
            range,
            beta,
            kappa,
            holder_seminorm: seminorm,
            singular_set,
            c_beta_kappa_bound: c_bound,
            l1_norm: l1,
        }
    }
}

fn union_sets<T: Real>(a: &SingularSet<T>, b: &SingularSet<T>) -> SingularSet<T> {
    match (a, b) {
        (SingularSet::Empty, s) | (s, SingularSet::Empty) => s.clone(),
        (SingularSet::Finite(x), SingularSet::Finite(y)) => {
            let mut pts: Vec<T> = x.iter().chain(y.iter()).copied().collect();
            pts.sort_by(total_cmp);
            pts.dedup();
            SingularSet::Finite(pts)
        }
        (x, y) => {
            let mut parts = Vec::new();
            for s in [x, y] {
                match s {
                    SingularSet::Union(inner) => parts.extend(inner.iter().cloned()),
                    other => parts.push(other.clone()),
                }
            }
            SingularSet::Union(parts)
        }
    }
}

/// Bounded, strictly increasing `f_σ` dominating the squared increments of σ.
#[derive(Clone)]
pub struct MonotoneWitness<T> {
    pub label: String,
    f: ScalarFn<T>,
    pub sup_norm: T,
}

impl<T: Real> MonotoneWitness<T> {
    pub fn new(label: impl Into<String>, f: ScalarFn<T>, sup_norm: T) -> Self {
        Self {
            label: label.into(),
            f,
            sup_norm,
        }
    }

    #[inline]
    pub fn eval(&self, x: T) -> T {
        (self.f)(x)
    }
}

impl<T: fmt::Debug> fmt::Debug for MonotoneWitness<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MonotoneWitness")
            .field("label", &self.label)
            .field("sup_norm", &self.sup_norm)
            .finish()
    }
}

/// Ellipticity bounds and the monotone dominance witness of a diffusion.
///
/// `f_sigma` is `None` for diffusions (e.g. `1 + 0.1 sin x`) that are
/// elliptic but admit no bounded dominating witness.
#[derive(Clone, Debug)]
pub struct DiffusionCertificate<T> {
    pub sigma_lower: T,
    pub sigma_upper: T,
    pub f_sigma: Option<MonotoneWitness<T>>,
}

impl<T: Real> DiffusionCertificate<T> {
    /// Ellipticity bounds taken from the certified range of `sigma`.
    pub fn bounds_only(sigma: &CoefficientSpec<T>) -> Result<Self> {
        if !(sigma.range.0 > T::zero()) {
            return Err(Error::Domain(format!(
                "diffusion {} is not uniformly positive (inf = {})",
                sigma.name, sigma.range.0
            )));
        }
        Ok(Self {
            sigma_lower: sigma.range.0,
            sigma_upper: sigma.range.1,
            f_sigma: None,
        })
    }

    /// `K_σ = σ̄ ∨ σ̲⁻¹`.
    pub fn k_sigma(&self) -> T {
        self.sigma_upper.max(self.sigma_lower.recip())
    }
}

/// `arctan(x)/π + 1/2`, bounded in (0, 1) and strictly increasing.
fn arctan_ramp<T: Real>(x: T) -> T {
    x.atan() / T::PI() + T::lit(0.5)
}

/// `σ(x) = 1 + 1_{x≥0}` with `f_σ(x) = 1_{x≥0} + arctan(x)/π + 1/2`.
pub fn make_step_sigma<T: Real>() -> (CoefficientSpec<T>, DiffusionCertificate<T>) {
    let one = T::one();
    let spec = CoefficientSpec {
        name: "step_sigma".into(),
        f: Arc::new(move |x: T| if x >= T::zero() { one + one } else { one }),
        sup_norm: T::lit(2.0),
        range: (one, T::lit(2.0)),
        beta: one,
        kappa: one,
        holder_seminorm: T::zero(),
        singular_set: SingularSet::Finite(vec![T::zero()]),
        c_beta_kappa_bound: T::lit(2.0),
        l1_norm: None,
    };
    let witness = MonotoneWitness::new(
        "1{x≥0} + arctan(x)/π + 1/2",
        Arc::new(|x: T| {
            let jump = if x >= T::zero() { T::one() } else { T::zero() };
            jump + arctan_ramp(x)
        }),
        T::lit(2.0),
    );
    (
        spec,
        DiffusionCertificate {
            sigma_lower: one,
            sigma_upper: T::lit(2.0),
            f_sigma: Some(witness),
        },
    )
}

/// The strictly increasing ζ with jumps accumulating at 0:
///
/// ```text
/// ζ(x) = (x−1)/(2x−1)                       x ≤ 0
///        1 + (log 2 / log(n+1)) x^β̂        (n+1)^{−1/(1−κ)} ≤ x < n^{−1/(1−κ)}
///        (3x+1)/(x+1)                        x ≥ 1
/// ```
///
/// Certified with `β = (1+β̂−κ)/(2−κ)`, `S = {n^{−1/(1−κ)}}`, `C_{β,κ} ≤ 3`,
/// `σ̲ = 1/2`, `σ̄ = 3`, and witness `f_σ = (5/2)·ζ` (valid because the
/// oscillation of ζ is below 5/2).
pub fn make_zeta<T: Real>(
    beta_hat: T,
    kappa: T,
) -> Result<(CoefficientSpec<T>, DiffusionCertificate<T>)> {
    let unit = |v: T| v > T::zero() && v < T::one();
    if !unit(beta_hat) || !unit(kappa) {
        return Err(Error::Domain(format!(
            "zeta needs β̂, κ in (0, 1), got β̂ = {beta_hat}, κ = {kappa}"
        )));
    }
    let one = T::one();
    let two = T::lit(2.0);
    let exponent = (one - kappa).recip();
    let beta = (one + beta_hat - kappa) / (two - kappa);
    let point = move |k: T| k.powf(-exponent);
    let f = move |x: T| zeta_eval(x, beta_hat, kappa, exponent);

    let ln2 = two.ln();
    let mut seminorm = one;
    for n in 1..=200_000u32 {
        let nt = T::from_u32(n).expect("index");
        let (right, left) = (point(nt), point(nt + one));
        let len = right - left;
        let coef = ln2 / (nt + one).ln();
        let bound = coef * beta_hat * left.powf(beta_hat - one) * len.powf(one - beta);
        seminorm = seminorm.max(bound);
    }

    let spec = CoefficientSpec {
        name: format!("zeta(beta_hat={beta_hat}, kappa={kappa})"),
        f: Arc::new(f),
        sup_norm: T::lit(3.0),
        range: (T::lit(0.5), T::lit(3.0)),
        beta,
        kappa,
        holder_seminorm: seminorm,
        singular_set: SingularSet::Accumulating(AccumulatingSequence::new(
            format!("k^-{exponent}"),
            Arc::new(move |k: u64| T::from_u64(k).expect("index").powf(-exponent)),
        )),
        c_beta_kappa_bound: T::lit(3.0),
        l1_norm: None,
    };
    let witness = MonotoneWitness::new(
        "(5/2)·zeta",
        Arc::new(move |x: T| T::lit(2.5) * f(x)),
        T::lit(7.5),
    );
    Ok((
        spec,
        DiffusionCertificate {
            sigma_lower: T::lit(0.5),
            sigma_upper: T::lit(3.0),
            f_sigma: Some(witness),
        },
    ))
}

fn zeta_eval<T: Real>(x: T, beta_hat: T, _kappa: T, exponent: T) -> T {
    let one = T::one();
    let two = T::lit(2.0);
    if x <= T::zero() {
        return (x - one) / (two * x - one);
    }
    if x >= one {
        return (T::lit(3.0) * x + one) / (x + one);
    }
    let point = |k: T| k.powf(-exponent);
    // n with p_{n+1} ≤ x < p_n, p_k = k^{−1/(1−κ)}.
    let mut n = (x.powf(-exponent.recip()).ceil() - one).max(one);
    if n < T::lit(1e15) {
        while n > one && x >= point(n) {
            n -= one;
        }
        while x < point(n + one) {
            n += one;
        }
    }
    one + two.ln() / (n + one).ln() * x.powf(beta_hat)
}

/// One segment of a piecewise coefficient.
#[derive(Clone)]
pub enum Piece<T> {
    Constant(T),
    /// `slope·x + intercept`; only allowed on bounded segments unless flat.
    Linear { slope: T, intercept: T },
    /// `offset + amplitude·sin(frequency·x + phase)`.
    Sin {
        amplitude: T,
        frequency: T,
        phase: T,
        offset: T,
    },
    /// User function with declared bounds on its segment.
    Custom { f: ScalarFn<T>, lower: T, upper: T },
}

impl<T: Real> fmt::Debug for Piece<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Piece::Constant(c) => write!(f, "Constant({c})"),
            Piece::Linear { slope, intercept } => write!(f, "Linear({slope}·x + {intercept})"),
            Piece::Sin {
                amplitude,
                frequency,
                phase,
                offset,
            } => write!(f, "Sin({offset} + {amplitude}·sin({frequency}·x + {phase}))"),
            Piece::Custom { lower, upper, .. } => write!(f, "Custom([{lower}, {upper}])"),
        }
    }
}

impl<T: Real> Piece<T> {
    #[inline]
    pub fn eval(&self, x: T) -> T {
        match self {
            Piece::Constant(c) => *c,
            Piece::Linear { slope, intercept } => *slope * x + *intercept,
            Piece::Sin {
                amplitude,
                frequency,
                phase,
                offset,
            } => *offset + *amplitude * (*frequency * x + *phase).sin(),
            Piece::Custom { f, .. } => f(x),
        }
    }

    /// Bounds of the piece on `(lo, hi)`.
    fn bounds(&self, lo: T, hi: T) -> Result<(T, T)> {
        match self {
            Piece::Constant(c) => Ok((*c, *c)),
            Piece::Linear { slope, intercept } => {
                if *slope == T::zero() {
                    return Ok((*intercept, *intercept));
                }
                if !lo.is_finite() || !hi.is_finite() {
                    return Err(Error::InvalidInput(
                        "a sloped linear piece must sit on a bounded segment".into(),
                    ));
                }
                let (a, b) = (*slope * lo + *intercept, *slope * hi + *intercept);
                Ok((a.min(b), a.max(b)))
            }
            Piece::Sin {
                amplitude, offset, ..
            } => Ok((*offset - amplitude.abs(), *offset + amplitude.abs())),
            Piece::Custom { lower, upper, .. } => Ok((*lower, *upper)),
        }
    }

    fn abs_integral(&self, lo: T, hi: T) -> Result<T> {
        match self {
            Piece::Constant(c) => Ok(c.abs() * (hi - lo)),
            _ => Ok(quadrature::integrate(|x| self.eval(x).abs(), lo, hi, &[], T::lit(1e-10))?.value),
        }
    }

    fn is_zero(&self) -> bool {
        matches!(self, Piece::Constant(c) if *c == T::zero())
    }
}

/// Piecewise β-Hölder coefficient with `m` breakpoints `s_1 < … < s_m` and
/// `m + 1` pieces. Right-continuous: at `s_k` the piece to the right applies.
/// `C_{β,1} ≤ 2m`.
pub fn make_piecewise_holder<T: Real>(
    breakpoints: Vec<T>,
    pieces: Vec<Piece<T>>,
    beta: T,
    lipschitz: T,
) -> Result<CoefficientSpec<T>> {
    if pieces.len() != breakpoints.len() + 1 {
        return Err(Error::InvalidInput(format!(
            "{} breakpoints need {} pieces, got {}",
            breakpoints.len(),
            breakpoints.len() + 1,
            pieces.len()
        )));
    }
    if !(beta > T::zero() && beta <= T::one()) {
        return Err(Error::Domain(format!("β must be in (0, 1], got {beta}")));
    }
    if lipschitz < T::zero() {
        return Err(Error::Domain("Hölder constant must be nonnegative".into()));
    }
    let singular_set = SingularSet::finite(breakpoints.clone())?;
    let edges: Vec<T> = std::iter::once(T::neg_infinity())
        .chain(breakpoints.iter().copied())
        .chain(std::iter::once(T::infinity()))
        .collect();
    let mut range = (T::infinity(), T::neg_infinity());
    for (piece, w) in pieces.iter().zip(edges.windows(2)) {
        let (lo, hi) = piece.bounds(w[0], w[1])?;
        range = (range.0.min(lo), range.1.max(hi));
    }
    let l1_norm = if pieces.first().is_some_and(Piece::is_zero) && pieces.last().is_some_and(Piece::is_zero) {
        let mut total = T::zero();
        for (piece, w) in pieces.iter().zip(edges.windows(2)).skip(1).take(breakpoints.len().saturating_sub(1)) {
            total += piece.abs_integral(w[0], w[1])?;
        }
        Some(total)
    } else {
        None
    };
    let m = breakpoints.len();
    let points = breakpoints.clone();
    let pieces_eval = pieces.clone();
    let f = Arc::new(move |x: T| {
        let idx = points.partition_point(|&s| s <= x);
        pieces_eval[idx].eval(x)
    });
    Ok(CoefficientSpec::from_parts(
        format!("piecewise(m={m})"),
        f,
        range,
        beta,
        T::one(),
        lipschitz,
        singular_set,
        T::from_usize_lossy(2 * m),
        l1_norm,
    ))
}

pub fn make_constant<T: Real>(value: T) -> CoefficientSpec<T> {
    CoefficientSpec::from_parts(
        format!("constant({value})"),
        Arc::new(move |_| value),
        (value, value),
        T::one(),
        T::one(),
        T::zero(),
        SingularSet::Empty,
        T::zero(),
        (value == T::zero()).then(T::zero),
    )
}

/// `1_{[a, b]}` (closed interval).
pub fn make_indicator_interval<T: Real>(a: T, b: T) -> Result<CoefficientSpec<T>> {
    if !(a < b) {
        return Err(Error::InvalidInput(format!(
            "indicator interval needs a < b, got [{a}, {b}]"
        )));
    }
    Ok(CoefficientSpec::from_parts(
        format!("indicator[{a}, {b}]"),
        Arc::new(move |x: T| if x >= a && x <= b { T::one() } else { T::zero() }),
        (T::zero(), T::one()),
        T::one(),
        T::one(),
        T::zero(),
        SingularSet::Finite(vec![a, b]),
        T::lit(4.0),
        Some(b - a),
    ))
}

/// Witness for a piecewise-constant diffusion with jumps `J_k` at `s_k`:
/// `f_σ(x) = Σ J_k² 1_{x ≥ s_k} + arctan(x)/π + 1/2`.
pub fn piecewise_constant_witness<T: Real>(breakpoints: &[T], values: &[T]) -> Result<MonotoneWitness<T>> {
    if values.len() != breakpoints.len() + 1 {
        return Err(Error::InvalidInput("need one value per segment".into()));
    }
    let jumps: Vec<(T, T)> = breakpoints
        .iter()
        .zip(values.windows(2))
        .map(|(&s, v)| (s, (v[1] - v[0]).powi(2)))
        .collect();
    let sup = jumps.iter().map(|j| j.1).sum::<T>() + T::one();
    Ok(MonotoneWitness::new(
        "Σ J_k² 1{x≥s_k} + arctan(x)/π + 1/2",
        Arc::new(move |x: T| {
            jumps
                .iter()
                .filter(|(s, _)| x >= *s)
                .map(|j| j.1)
                .sum::<T>()
                + arctan_ramp(x)
        }),
        sup,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    SupNorm,
    Holder,
    Neighborhood,
    SigmaBounds,
    WitnessMonotone,
    WitnessBound,
    Dominance,
}

/// A violated inequality `lhs ≤ rhs` with the points that witness it.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation<T> {
    pub kind: ViolationKind,
    pub witness: Vec<T>,
    pub lhs: T,
    pub rhs: T,
}

#[derive(Debug, Clone, Default)]
pub struct CertificateReport<T> {
    pub checks: usize,
    pub violations: Vec<Violation<T>>,
    /// Largest `λ(S^ε ∩ [−K,K]) / (K ε^κ)` seen.
    pub c_beta_kappa_estimate: T,
}

impl<T> CertificateReport<T> {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct CheckOptions<T> {
    pub random_pairs: usize,
    pub seed: u64,
    pub neighborhood_grid: Vec<(T, T)>,
    /// Relative slack allowed on every inequality to absorb rounding.
    pub rel_slack: T,
}

impl<T: Real> Default for CheckOptions<T> {
    fn default() -> Self {
        Self {
            random_pairs: DEFAULT_HOLDER_PAIRS,
            seed: DEFAULT_PAIR_SEED,
            neighborhood_grid: default_neighborhood_grid(),
            rel_slack: T::lit(1e-9),
        }
    }
}

/// Checks every certificate inequality of `spec` (and of `cert`, when given)
/// on `sample_grid`. Violations are collected, not raised.
pub fn check_certificates<T: Real>(
    spec: &CoefficientSpec<T>,
    cert: Option<&DiffusionCertificate<T>>,
    sample_grid: &[T],
) -> Result<CertificateReport<T>> {
    check_certificates_with(spec, cert, sample_grid, &CheckOptions::default())
}

pub fn check_certificates_with<T: Real>(
    spec: &CoefficientSpec<T>,
    cert: Option<&DiffusionCertificate<T>>,
    sample_grid: &[T],
    opts: &CheckOptions<T>,
) -> Result<CertificateReport<T>> {
    if sample_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidInput("sample grid must be strictly increasing".into()));
    }
    let mut report = CertificateReport {
        checks: 0,
        violations: Vec::new(),
        c_beta_kappa_estimate: T::zero(),
    };
    let slack = T::one() + opts.rel_slack;
    let tiny = T::lit(1e-12);
    let values: Vec<T> = sample_grid.iter().map(|&x| spec.eval(x)).collect();

    for (&x, &v) in sample_grid.iter().zip(&values) {
        report.checks += 1;
        if v.abs() > spec.sup_norm * slack + tiny {
            report.violations.push(Violation {
                kind: ViolationKind::SupNorm,
                witness: vec![x],
                lhs: v.abs(),
                rhs: spec.sup_norm,
            });
        }
    }

    let pairs = sample_pairs(sample_grid.len(), opts.random_pairs, opts.seed);
    for &(i, j) in &pairs {
        let (x, y) = (sample_grid[i], sample_grid[j]);
        if spec.singular_set.intersects(x, y) {
            continue;
        }
        report.checks += 1;
        let lhs = (values[i] - values[j]).abs();
        let rhs = spec.holder_seminorm * (y - x).abs().powf(spec.beta);
        if lhs > rhs * slack + tiny {
            report.violations.push(Violation {
                kind: ViolationKind::Holder,
                witness: vec![x, y],
                lhs,
                rhs,
            });
        }
    }

    for &(k, eps) in &opts.neighborhood_grid {
        report.checks += 1;
        let measure = neighborhood_measure(&spec.singular_set, eps, k)?;
        let scale = k * eps.powf(spec.kappa);
        report.c_beta_kappa_estimate = report.c_beta_kappa_estimate.max(measure / scale);
        let rhs = spec.c_beta_kappa_bound * scale;
        if measure > rhs * slack + tiny {
            report.violations.push(Violation {
                kind: ViolationKind::Neighborhood,
                witness: vec![k, eps],
                lhs: measure,
                rhs,
            });
        }
    }

    if let Some(cert) = cert {
        for (&x, &v) in sample_grid.iter().zip(&values) {
            report.checks += 1;
            if v < cert.sigma_lower / slack - tiny || v > cert.sigma_upper * slack + tiny {
                report.violations.push(Violation {
                    kind: ViolationKind::SigmaBounds,
                    witness: vec![x],
                    lhs: v,
                    rhs: if v < cert.sigma_lower { cert.sigma_lower } else { cert.sigma_upper },
                });
            }
        }
        if let Some(witness) = &cert.f_sigma {
            let wvals: Vec<T> = sample_grid.iter().map(|&x| witness.eval(x)).collect();
            for (idx, w) in wvals.windows(2).enumerate() {
                report.checks += 1;
                if !(w[1] > w[0]) {
                    report.violations.push(Violation {
                        kind: ViolationKind::WitnessMonotone,
                        witness: vec![sample_grid[idx], sample_grid[idx + 1]],
                        lhs: w[0],
                        rhs: w[1],
                    });
                }
            }
            for (&x, &w) in sample_grid.iter().zip(&wvals) {
                report.checks += 1;
                if w.abs() > witness.sup_norm * slack + tiny {
                    report.violations.push(Violation {
                        kind: ViolationKind::WitnessBound,
                        witness: vec![x],
                        lhs: w.abs(),
                        rhs: witness.sup_norm,
                    });
                }
            }
            for &(i, j) in &pairs {
                report.checks += 1;
                let lhs = (values[i] - values[j]).powi(2);
                let rhs = (wvals[i] - wvals[j]).abs();
                if lhs > rhs * slack + tiny {
                    report.violations.push(Violation {
                        kind: ViolationKind::Dominance,
                        witness: vec![sample_grid[i], sample_grid[j]],
                        lhs,
                        rhs,
                    });
                }
            }
        }
    }
    Ok(report)
}

/// Consecutive pairs plus `random` pairs `i < j`, deterministic in `seed`.
fn sample_pairs(len: usize, random: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(usize, usize)> = (1..len).map(|i| (i - 1, i)).collect();
    if len < 2 {
        return pairs;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = len as u64;
    while pairs.len() < len - 1 + random {
        let i = (rng.next_u64() % n) as usize;
        let j = (rng.next_u64() % n) as usize;
        if i != j {
            pairs.push((i.min(j), i.max(j)));
        }
    }
    pairs
}

/// `count` points evenly spaced on `[lo, hi]`, nudged off the singular set.
pub fn sample_grid_avoiding<T: Real>(set: &SingularSet<T>, lo: T, hi: T, count: usize) -> Vec<T> {
    let step = (hi - lo) / T::from_usize_lossy(count.max(2) - 1);
    let nudge = step * T::lit(1e-3);
    (0..count)
        .map(|i| {
            let x = lo + step * T::from_usize_lossy(i);
            if set.intersects(x, x) {
                x + nudge
            } else {
                x
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Brute force: midpoint Riemann sum of 1{dist(x, pts) ≤ ε} over [−K, K].
    fn riemann_oracle(pts: &[f64], eps: f64, k: f64, cells: usize) -> f64 {
        let mut pts = pts.to_vec();
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let h = 2.0 * k / cells as f64;
        let hits = (0..cells)
            .filter(|&i| {
                let x = -k + (i as f64 + 0.5) * h;
                let j = pts.partition_point(|&p| p < x);
                let near = |idx: usize| pts.get(idx).is_some_and(|p| (x - p).abs() <= eps);
                near(j) || (j > 0 && near(j - 1))
            })
            .count();
        hits as f64 * h
    }

    #[test]
    fn step_sigma_values() {
        let (s, cert) = make_step_sigma::<f64>();
        assert_eq!(s.eval(-1.0), 1.0);
        assert_eq!(s.eval(0.0), 2.0);
        let w = cert.f_sigma.unwrap();
        let tiny = 1e-12;
        let jump = w.eval(0.0) - w.eval(-tiny);
        assert!(jump >= 1.0);
        assert!((s.eval(0.0) - s.eval(-tiny)).powi(2) <= jump);
    }

    #[test]
    fn zeta_branch_values() {
        let (z, _) = make_zeta(0.5f64, 0.5).unwrap();
        assert_abs_diff_eq!(z.eval(0.0), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(z.eval(1.0), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(z.eval(0.5), 1.0 + 0.5f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(z.beta, 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn zeta_piece_index_is_right_continuous() {
        let (z, _) = make_zeta(0.5f64, 0.5).unwrap();
        // p_2 = 1/4 belongs to the piece [p_2, p_1), index n = 1.
        assert_abs_diff_eq!(z.eval(0.25), 1.0 + 0.5, epsilon = 1e-12);
        // just left of 1/4 uses n = 2: coefficient log2/log3.
        let x: f64 = 0.25 - 1e-9;
        let want = 1.0 + 2f64.ln() / 3f64.ln() * x.sqrt();
        assert_abs_diff_eq!(z.eval(x), want, epsilon = 1e-12);
    }

    #[test]
    fn zeta_rejects_out_of_range() {
        assert!(make_zeta(0.0f64, 0.5).is_err());
        assert!(make_zeta(0.5f64, 1.0).is_err());
    }

    #[test]
    fn zeta_bounds_and_monotone() {
        let (z, _) = make_zeta(0.3f64, 0.7).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for i in 0..20_000 {
            let x = -50.0 + 100.0 * i as f64 / 20_000.0;
            let v = z.eval(x);
            assert!(v > 0.5 && v < 3.0);
            assert!(v > prev, "not increasing at {x}");
            prev = v;
        }
    }

    #[test]
    fn neighborhood_examples() {
        let s = SingularSet::finite(vec![0.0]).unwrap();
        assert_abs_diff_eq!(neighborhood_measure(&s, 0.1, 1.0).unwrap(), 0.2, epsilon = 1e-15);
        let s = SingularSet::finite(vec![0.0, 0.15]).unwrap();
        assert_abs_diff_eq!(neighborhood_measure(&s, 0.1, 1.0).unwrap(), 0.35, epsilon = 1e-15);
        assert_eq!(neighborhood_measure(&SingularSet::<f64>::Empty, 0.3, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn zeta_neighborhood_hand_merge() {
        // Blob (−0.01, 0.05], intervals around 1/4, 1/9, 1/16 of width 0.02,
        // and [0.99, 1] clipped by K = 1.
        let seq = SingularSet::Accumulating(AccumulatingSequence::power_law(2.0f64));
        let m = neighborhood_measure(&seq, 0.01, 1.0).unwrap();
        assert_abs_diff_eq!(m, 0.13, epsilon = 1e-12);
        let mut pts: Vec<f64> = (1..=400).map(|k| (k as f64).powi(-2)).collect();
        pts.push(0.0);
        let oracle = riemann_oracle(&pts, 0.01, 1.0, 1_000_000);
        assert!((m - oracle).abs() <= 2e-6, "{m} vs {oracle}");
    }

    #[test]
    fn neighborhood_rejects_bad_args() {
        let s = SingularSet::finite(vec![0.0f64]).unwrap();
        assert!(neighborhood_measure(&s, 0.0, 1.0).is_err());
        assert!(neighborhood_measure(&s, 0.1, 0.5).is_err());
    }

    #[test]
    fn c_beta_kappa_estimates() {
        let s = SingularSet::finite(vec![0.0f64]).unwrap();
        assert_abs_diff_eq!(
            estimate_c_beta_kappa(&s, 1.0, &[(1.0, 0.1)]).unwrap(),
            2.0,
            epsilon = 1e-12
        );
        assert_eq!(
            estimate_c_beta_kappa(&SingularSet::<f64>::Empty, 1.0, &[(1.0, 0.1)]).unwrap(),
            0.0
        );
        let (z, _) = make_zeta(0.5f64, 0.5).unwrap();
        let at = estimate_c_beta_kappa(&z.singular_set, 0.5, &[(1.0, 0.01)]).unwrap();
        assert_abs_diff_eq!(at, 1.3, epsilon = 1e-10);
        let full = estimate_c_beta_kappa(&z.singular_set, 0.5, &default_neighborhood_grid()).unwrap();
        assert!((1.4..=3.0).contains(&full), "{full}");
        assert!(estimate_c_beta_kappa(&s, 1.0, &[]).is_err());
    }

    #[test]
    fn unsorted_breakpoints_rejected() {
        let r = make_piecewise_holder(vec![1.0f64, 0.0], vec![Piece::Constant(0.0); 3], 1.0, 0.0);
        assert!(r.is_err());
    }

    #[test]
    fn plain_lipschitz_piecewise() {
        let s = make_piecewise_holder(
            vec![],
            vec![Piece::Sin { amplitude: 1.0f64, frequency: 1.0, phase: 0.0, offset: 0.0 }],
            1.0,
            1.0,
        )
        .unwrap();
        assert!(s.singular_set.is_empty());
        assert_eq!(s.c_beta_kappa_bound, 0.0);
        assert_abs_diff_eq!(s.eval(1.0), 1f64.sin());
        let grid: Vec<f64> = (0..500).map(|i| -10.0 + i as f64 * 0.04).collect();
        assert!(check_certificates(&s, None, &grid).unwrap().passed());
    }

    #[test]
    fn indicator_drift() {
        let b = make_indicator_interval(0.0f64, 1.0).unwrap();
        assert_eq!(b.c_beta_kappa_bound, 4.0);
        assert_eq!(b.l1_norm, Some(1.0));
        assert_eq!(b.eval(0.0), 1.0);
        assert_eq!(b.eval(1.0), 1.0);
        assert_eq!(b.eval(1.0 + 1e-12), 0.0);
        // piecewise form of the same drift
        let p = make_piecewise_holder(
            vec![0.0f64, 1.0],
            vec![Piece::Constant(0.0), Piece::Constant(1.0), Piece::Constant(0.0)],
            1.0,
            0.0,
        )
        .unwrap();
        assert_eq!(p.c_beta_kappa_bound, 4.0);
        assert_abs_diff_eq!(p.l1_norm.unwrap(), 1.0, epsilon = 1e-12);
        let (x, y) = (-1.0, -0.5);
        assert!(!p.singular_set.intersects(x, y));
        assert!((p.eval(x) - p.eval(y)).abs() <= p.holder_seminorm * 0.5f64.powf(p.beta));
    }

    #[test]
    fn step_sigma_certificate_clean() {
        let (s, cert) = make_step_sigma::<f64>();
        let grid = [-2.0, -1.0, -0.5, 0.5, 1.0, 2.0];
        let r = check_certificates(&s, Some(&cert), &grid).unwrap();
        assert!(r.passed(), "{:?}", r.violations);
    }

    #[test]
    fn forced_holder_failure_reports_witness() {
        let mut s = make_piecewise_holder(
            vec![],
            vec![Piece::Sin { amplitude: 1.0f64, frequency: 1.0, phase: 0.0, offset: 0.0 }],
            1.0,
            1.0,
        )
        .unwrap();
        s.holder_seminorm = 0.0;
        let grid: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let r = check_certificates(&s, None, &grid).unwrap();
        let v = r.violations.iter().find(|v| v.kind == ViolationKind::Holder).unwrap();
        assert_eq!(v.witness.len(), 2);
        assert!(v.lhs > v.rhs);
    }

    #[test]
    fn zeta_certificate_clean() {
        let (z, cert) = make_zeta(0.5f64, 0.5).unwrap();
        let grid = sample_grid_avoiding(&z.singular_set, -3.0, 3.0, 1000);
        let r = check_certificates(&z, Some(&cert), &grid).unwrap();
        assert!(r.passed(), "{:?}", &r.violations[..r.violations.len().min(5)]);
        assert!(r.c_beta_kappa_estimate <= 3.0);
    }

    #[test]
    fn intersects_accumulating() {
        let seq = SingularSet::Accumulating(AccumulatingSequence::power_law(2.0f64));
        assert!(seq.intersects(-0.1, 1e-9));
        assert!(!seq.intersects(-1.0, 0.0));
        assert!(seq.intersects(0.2, 0.3)); // 1/4
        assert!(!seq.intersects(0.26, 0.9));
        assert!(seq.intersects(1.0, 1.0));
    }

    #[test]
    fn linear_combination_certifies() {
        let (s, _) = make_step_sigma::<f64>();
        let (z, _) = make_zeta(0.5f64, 0.5).unwrap();
        let c = CoefficientSpec::linear_combination(0.5, &s, -2.0, &z);
        assert_abs_diff_eq!(c.eval(0.3), 0.5 * 2.0 - 2.0 * z.eval(0.3));
        let grid = sample_grid_avoiding(&c.singular_set, -3.0, 3.0, 600);
        let r = check_certificates(&c, None, &grid).unwrap();
        assert!(r.passed(), "{:?}", &r.violations[..r.violations.len().min(5)]);
    }
}
