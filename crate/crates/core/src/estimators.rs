//! Monte Carlo estimators for the strong error and the supporting bounds
//! (increment moments, local time, within-cell modulus, key integral,
//! truncation tail), closed-form bound evaluators and rate fits.
//!
//! Every estimator has a per-path kernel working on fine-lattice slices, so
//! the harness can stream paths, and a trajectory-level wrapper reducing
//! over the rows of an [`EmTrajectory`] in fixed path order.

use std::collections::BTreeMap;

use ndarray::Array2;

use crate::coeffs::CoefficientSpec;
use crate::em::EmTrajectory;
use crate::error::{Error, Result};
use crate::reduce::{reduce_paths, DEFAULT_BATCH_PATHS};
use crate::scalar::Real;

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate<T> {
    pub mean: T,
    pub se: T,
    pub samples: usize,
}

/// Running sum and sum of squares of a scalar per-path quantity.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MeanAccumulator<T> {
    pub sum: T,
    pub sumsq: T,
    pub count: usize,
}

impl<T: Real> MeanAccumulator<T> {
    pub fn push(&mut self, v: T) {
        self.sum += v;
        self.sumsq += v * v;
        self.count += 1;
    }

    pub fn merge(&mut self, other: Self) {
        self.sum += other.sum;
        self.sumsq += other.sumsq;
        self.count += other.count;
    }

    pub fn finish(&self) -> Estimate<T> {
        let (mean, se) = mean_and_se(self.sum, self.sumsq, self.count);
        Estimate {
            mean,
            se,
            samples: self.count,
        }
    }
}

fn mean_and_se<T: Real>(sum: T, sumsq: T, count: usize) -> (T, T) {
    if count == 0 {
        return (T::zero(), T::zero());
    }
    let m = T::from_usize_lossy(count);
    let mean = sum / m;
    if count < 2 {
        return (mean, T::zero());
    }
    let var = ((sumsq - sum * mean) / (m - T::one())).max(T::zero());
    (mean, (var / m).sqrt())
}

/// Per-time Monte Carlo means; reports the sup over time of the means.
#[derive(Debug, Clone, PartialEq)]
pub struct SupMeanAccumulator<T> {
    sum: Vec<T>,
    sumsq: Vec<T>,
    count: usize,
}

/// `max_t mean_t` with the CLT standard error at the maximiser.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupMean<T> {
    pub value: T,
    pub se: T,
    pub argmax: usize,
    pub samples: usize,
}

impl<T: Real> SupMeanAccumulator<T> {
    pub fn new(len: usize) -> Self {
        Self {
            sum: vec![T::zero(); len],
            sumsq: vec![T::zero(); len],
            count: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.sum.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sum.is_empty()
    }

    pub fn push(&mut self, values: impl IntoIterator<Item = T>) {
        let mut k = 0;
        for (v, (s, q)) in values
            .into_iter()
            .zip(self.sum.iter_mut().zip(self.sumsq.iter_mut()))
        {
            *s += v;
            *q += v * v;
            k += 1;
        }
        assert_eq!(k, self.sum.len(), "sample length must match accumulator length");
        self.count += 1;
    }

    pub fn merge(&mut self, other: &Self) {
        for (s, o) in self.sum.iter_mut().zip(&other.sum) {
            *s += *o;
        }
        for (s, o) in self.sumsq.iter_mut().zip(&other.sumsq) {
            *s += *o;
        }
        self.count += other.count;
    }

    pub fn mean_at(&self, i: usize) -> T {
        mean_and_se(self.sum[i], self.sumsq[i], self.count).0
    }

    pub fn finish(&self) -> SupMean<T> {
        let mut argmax = 0;
        for (i, s) in self.sum.iter().enumerate() {
            if *s > self.sum[argmax] {
                argmax = i;
            }
        }
        let (value, se) = if self.sum.is_empty() {
            (T::zero(), T::zero())
        } else {
            mean_and_se(self.sum[argmax], self.sumsq[argmax], self.count)
        };
        SupMean {
            value,
            se,
            argmax,
            samples: self.count,
        }
    }
}

fn fine_path_of<T: Real>(traj: &EmTrajectory<T>, j: usize) -> Result<&[T]> {
    traj.fine_path(j)
        .ok_or_else(|| Error::InvalidInput(format!("trajectory n={} has no fine interpolation", traj.n)))
}

fn reduce_scalar<T: Real>(
    paths: usize,
    per_path: impl Fn(usize) -> Result<T> + Sync,
) -> Result<MeanAccumulator<T>> {
    reduce_paths(
        paths,
        DEFAULT_BATCH_PATHS,
        MeanAccumulator::<T>::default,
        |acc, j| {
            acc.push(per_path(j)?);
            Ok(())
        },
        |acc, part| acc.merge(part),
    )
}

fn reduce_sup<T: Real>(
    paths: usize,
    len: usize,
    per_path: impl Fn(&mut SupMeanAccumulator<T>, usize) -> Result<()> + Sync,
) -> Result<SupMeanAccumulator<T>> {
    reduce_paths(
        paths,
        DEFAULT_BATCH_PATHS,
        || SupMeanAccumulator::new(len),
        per_path,
        |acc, part| acc.merge(&part),
    )
}

// ---------------------------------------------------------------- strong error

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorRow<T> {
    pub n: usize,
    /// `max_t mean |X^ref_t − X^(n)_t|` over fine times.
    pub error_mean: T,
    pub error_se: T,
    pub samples: usize,
    pub argmax_time: T,
}

impl<T: Real> ErrorRow<T> {
    pub fn error_times_logn(&self) -> T {
        self.error_mean * T::from_usize_lossy(self.n).ln()
    }

    fn from_sup(n: usize, s: SupMean<T>, dt: T) -> Self {
        Self {
            n,
            error_mean: s.value,
            error_se: s.se,
            samples: s.samples,
            argmax_time: T::from_usize_lossy(s.argmax) * dt,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport<T> {
    pub n_ref: usize,
    pub rows: Vec<ErrorRow<T>>,
    /// Error of `n_ref / 2` against `n_ref`.
    pub self_coupling_floor: Option<ErrorRow<T>>,
    pub fits: Vec<RateFit<T>>,
    pub warnings: Vec<String>,
}

impl<T: Real> ErrorReport<T> {
    pub fn new(n_ref: usize, rows: Vec<ErrorRow<T>>, floor: Option<ErrorRow<T>>) -> Self {
        let mut report = Self {
            n_ref,
            rows,
            self_coupling_floor: floor,
            fits: Vec::new(),
            warnings: Vec::new(),
        };
        if let Some(f) = floor {
            let ten = T::lit(10.0);
            for r in &report.rows {
                if r.error_mean < ten * f.error_mean {
                    report.warnings.push(format!(
                        "e({}) = {:.4e} is within 10x of the self-coupling floor {:.4e}",
                        r.n, r.error_mean, f.error_mean
                    ));
                }
            }
        }
        report
    }

    pub fn points(&self) -> Vec<(usize, T)> {
        self.rows.iter().map(|r| (r.n, r.error_mean)).collect()
    }

    /// Adds both rate models; degenerate fits become warnings.
    pub fn fit_models(&mut self, power_bounds: Option<(T, T)>) {
        let pts = self.points();
        for model in [RateModel::COverLogN, RateModel::PowerLaw { bounds: power_bounds }] {
            match rate_fit(&pts, model) {
                Ok(f) => self.fits.push(f),
                Err(e) => self.warnings.push(format!("{} fit: {e}", model.name())),
            }
        }
    }
}

/// Accumulates `|X^ref − X^(n)|` over fine times for every `n`, plus the
/// self-coupling floor.
#[derive(Debug, Clone, PartialEq)]
pub struct StrongErrorAccumulator<T> {
    pub n_list: Vec<usize>,
    pub per_n: Vec<SupMeanAccumulator<T>>,
    pub floor: Option<SupMeanAccumulator<T>>,
}

impl<T: Real> StrongErrorAccumulator<T> {
    pub fn new(n_list: &[usize], len: usize, with_floor: bool) -> Self {
        Self {
            n_list: n_list.to_vec(),
            per_n: n_list.iter().map(|_| SupMeanAccumulator::new(len)).collect(),
            floor: with_floor.then(|| SupMeanAccumulator::new(len)),
        }
    }

    /// `fine` in `n_list` order; `half` is the `n_ref/2` path when tracked.
    pub fn push(&mut self, reference: &[T], fine: &[&[T]], half: Option<&[T]>) {
        for (acc, x) in self.per_n.iter_mut().zip(fine) {
            acc.push(reference.iter().zip(x.iter()).map(|(r, v)| (*r - *v).abs()));
        }
        if let (Some(acc), Some(h)) = (self.floor.as_mut(), half) {
            acc.push(reference.iter().zip(h).map(|(r, v)| (*r - *v).abs()));
        }
    }

    pub fn merge(&mut self, other: &Self) {
        for (a, b) in self.per_n.iter_mut().zip(&other.per_n) {
            a.merge(b);
        }
        if let (Some(a), Some(b)) = (self.floor.as_mut(), other.floor.as_ref()) {
            a.merge(b);
        }
    }

    pub fn report(&self, n_ref: usize, fine_dt: T) -> ErrorReport<T> {
        let rows = self
            .n_list
            .iter()
            .zip(&self.per_n)
            .map(|(&n, acc)| ErrorRow::from_sup(n, acc.finish(), fine_dt))
            .collect();
        let floor = self
            .floor
            .as_ref()
            .map(|acc| ErrorRow::from_sup(n_ref / 2, acc.finish(), fine_dt));
        ErrorReport::new(n_ref, rows, floor)
    }
}

/// Strong error of every resolution against the `n_ref` trajectory. The sup
/// over fine times is taken after averaging over paths. If `n_ref / 2` is
/// present in `trajs` it serves as the self-coupling floor and is not
/// reported as a row.
pub fn strong_error<T: Real>(trajs: &BTreeMap<usize, EmTrajectory<T>>, n_ref: usize) -> Result<ErrorReport<T>> {
    let reference = trajs
        .get(&n_ref)
        .ok_or_else(|| Error::InvalidInput(format!("no trajectory at n_ref = {n_ref}")))?;
    let half = (n_ref % 2 == 0).then_some(n_ref / 2).and_then(|h| trajs.get(&h));
    let n_list: Vec<usize> = trajs
        .keys()
        .copied()
        .filter(|&n| n != n_ref && Some(n) != half.map(|h| h.n))
        .collect();
    let others: Vec<&EmTrajectory<T>> = n_list.iter().map(|n| &trajs[n]).collect();
    for t in others.iter().chain(half.iter()) {
        if t.paths() != reference.paths() || t.n_fine != reference.n_fine {
            return Err(Error::InvalidInput("trajectories are not coupled on one lattice".into()));
        }
    }
    let len = reference.n_fine + 1;
    let acc = reduce_paths(
        reference.paths(),
        DEFAULT_BATCH_PATHS,
        || StrongErrorAccumulator::new(&n_list, len, half.is_some()),
        |acc, j| {
            let r = fine_path_of(reference, j)?;
            let fine = others.iter().map(|t| fine_path_of(t, j)).collect::<Result<Vec<_>>>()?;
            let h = half.map(|t| fine_path_of(t, j)).transpose()?;
            acc.push(r, &fine, h);
            Ok(())
        },
        |acc, part| acc.merge(&part),
    )?;
    Ok(acc.report(n_ref, reference.fine_dt()))
}

// ----------------------------------------------------------- increment moment

/// Adds `|X_t − X_{η(t)}|^q` at every fine time of one path.
pub fn push_increment_moment<T: Real>(acc: &mut SupMeanAccumulator<T>, fine: &[T], cell: usize, q: T) {
    acc.push(
        fine.iter()
            .enumerate()
            .map(|(i, &x)| (x - fine[(i / cell) * cell]).abs().powf(q)),
    );
}

/// `max_t E|X^(n)_t − X^(n)_{η(t)}|^q` over fine times.
pub fn increment_moment<T: Real>(traj: &EmTrajectory<T>, q: T) -> Result<SupMean<T>> {
    if !(q > T::zero()) {
        return Err(Error::Domain(format!("moment order must be positive, got {q}")));
    }
    let cell = traj.cell_len();
    let acc = reduce_sup(traj.paths(), traj.n_fine + 1, |acc, j| {
        push_increment_moment(acc, fine_path_of(traj, j)?, cell, q);
        Ok(())
    })?;
    Ok(acc.finish())
}

// ------------------------------------------------------------------ local time

/// Fills `values` with `V(θ) = (1−θ)X^ref + θX^(n)` and `qv` with
/// `((1−θ)σ(X^ref_s) + θσ(X^(n)_{η(s)}))²·Δt` per fine step.
pub fn interpolate_path<T: Real>(
    theta: T,
    reference: &[T],
    x_n: &[T],
    cell: usize,
    sigma: &CoefficientSpec<T>,
    dt: T,
    values: &mut [T],
    qv: &mut [T],
) {
    let one = T::one();
    for ((v, r), x) in values.iter_mut().zip(reference).zip(x_n) {
        *v = (one - theta) * *r + theta * *x;
    }
    let mut frozen = T::zero();
    for (i, slot) in qv.iter_mut().enumerate() {
        if i % cell == 0 {
            frozen = sigma.eval(x_n[i]);
        }
        let s = (one - theta) * sigma.eval(reference[i]) + theta * frozen;
        *slot = s * s * dt;
    }
}

/// Occupation-density estimate `(1/2h)·Σ 1{|V_s − x| ≤ h}·Δ⟨V⟩_s` for one path.
pub fn local_time_path<T: Real>(values: &[T], qv: &[T], x: T, h: T) -> T {
    let band: T = values
        .iter()
        .zip(qv)
        .filter(|(v, _)| (**v - x).abs() <= h)
        .map(|(_, q)| *q)
        .sum();
    band / (h + h)
}

pub fn default_bandwidth<T: Real>(horizon: T, n_fine: usize) -> T {
    (horizon / T::from_usize_lossy(n_fine)).cbrt()
}

/// Returns a warning if `h < 3·√(σ̄²Δt)`.
pub fn bandwidth_warning<T: Real>(h: T, sigma_upper: T, dt: T) -> Option<String> {
    let floor = T::lit(3.0) * (sigma_upper * sigma_upper * dt).sqrt();
    (h < floor).then(|| format!("bandwidth {h:.4e} under-resolved: below 3·σ̄·√Δt = {floor:.4e}"))
}

/// `V^(n)(θ)` on the fine lattice for all paths.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolatedProcess<T> {
    pub theta: T,
    pub fine_dt: T,
    pub sigma_upper: T,
    /// `M × (N_fine+1)`.
    pub values: Array2<T>,
    /// `M × N_fine`.
    pub qv_increments: Array2<T>,
}

impl<T: Real> InterpolatedProcess<T> {
    pub fn build(
        theta: T,
        reference: &EmTrajectory<T>,
        approx: &EmTrajectory<T>,
        sigma: &CoefficientSpec<T>,
    ) -> Result<Self> {
        if !(theta >= T::zero() && theta <= T::one()) {
            return Err(Error::Domain(format!("θ must lie in [0, 1], got {theta}")));
        }
        if reference.paths() != approx.paths() || reference.n_fine != approx.n_fine {
            return Err(Error::InvalidInput("trajectories are not coupled on one lattice".into()));
        }
        let (m, nf) = (reference.paths(), reference.n_fine);
        let dt = reference.fine_dt();
        let mut values = Array2::zeros((m, nf + 1));
        let mut qv = Array2::zeros((m, nf));
        for j in 0..m {
            let mut vrow = values.row_mut(j);
            let mut qrow = qv.row_mut(j);
            interpolate_path(
                theta,
                fine_path_of(reference, j)?,
                fine_path_of(approx, j)?,
                approx.cell_len(),
                sigma,
                dt,
                vrow.as_slice_mut().expect("contiguous row"),
                qrow.as_slice_mut().expect("contiguous row"),
            );
        }
        Ok(Self {
            theta,
            fine_dt: dt,
            sigma_upper: sigma.range.1.abs().max(sigma.range.0.abs()),
            values,
            qv_increments: qv,
        })
    }

    pub fn paths(&self) -> usize {
        self.values.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalTimeEstimate<T> {
    pub per_path: Vec<T>,
    pub mean: Estimate<T>,
    /// Mean of `L̂²` with its standard error.
    pub second_moment: Estimate<T>,
    pub warning: Option<String>,
}

impl<T: Real> LocalTimeEstimate<T> {
    pub fn from_values(per_path: Vec<T>, warning: Option<String>) -> Self {
        let mut first = MeanAccumulator::default();
        let mut second = MeanAccumulator::default();
        for &v in &per_path {
            first.push(v);
            second.push(v * v);
        }
        Self {
            per_path,
            mean: first.finish(),
            second_moment: second.finish(),
            warning,
        }
    }
}

pub fn local_time_estimate<T: Real>(proc: &InterpolatedProcess<T>, x: T, h: T) -> Result<LocalTimeEstimate<T>> {
    if !(h > T::zero()) {
        return Err(Error::Domain(format!("bandwidth must be positive, got {h}")));
    }
    let per_path = (0..proc.paths())
        .map(|j| {
            let v = proc.values.row(j);
            let q = proc.qv_increments.row(j);
            let v = v.as_slice().expect("contiguous row");
            local_time_path(&v[..v.len() - 1], q.as_slice().expect("contiguous row"), x, h)
        })
        .collect();
    Ok(LocalTimeEstimate::from_values(
        per_path,
        bandwidth_warning(h, proc.sigma_upper, proc.fine_dt),
    ))
}

/// `12‖b‖²T² + 6σ̄²T`.
pub fn local_time_bound<T: Real>(b_sup: T, sigma_upper: T, horizon: T) -> T {
    T::lit(12.0) * b_sup * b_sup * horizon * horizon + T::lit(6.0) * sigma_upper * sigma_upper * horizon
}

// --------------------------------------------------------- tightness schedule

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TightnessSchedule<T> {
    pub n: usize,
    pub alpha: T,
    pub horizon: T,
    pub gamma: T,
    pub c_tilde: T,
    pub eps: T,
    pub chi: T,
    pub delta: T,
    /// Truncation level `K_n`.
    pub truncation: T,
}

pub fn tightness_schedule<T: Real>(
    n: usize,
    horizon: T,
    b_sup: T,
    sigma_upper: T,
    alpha: T,
    x0: T,
) -> Result<TightnessSchedule<T>> {
    if n < 3 {
        return Err(Error::Domain(format!("schedule needs n ≥ 3, got {n}")));
    }
    if !(alpha > T::zero()) {
        return Err(Error::Domain(format!("α must be positive, got {alpha}")));
    }
    let nf = T::from_usize_lossy(n);
    let logn = nf.ln();
    let gamma = (nf.powf(alpha) * logn).recip();
    let b4 = b_sup.powi(4);
    let s4 = sigma_upper.powi(4);
    let inner = horizon * horizon * b4 + T::lit(128.0) * s4;
    let c_tilde = T::lit(2.0).powf(T::lit(0.75)) * horizon.sqrt() * inner.powf(T::lit(0.25));
    let eps = c_tilde / (gamma.powf(T::lit(0.25)) * nf.sqrt());
    let chi = gamma * nf / horizon;
    let delta = horizon / nf;
    let truncation = (T::one() + x0.abs() + horizon * b_sup + T::lit(2.0) * sigma_upper * (horizon * alpha).sqrt())
        * logn.sqrt();
    Ok(TightnessSchedule {
        n,
        alpha,
        horizon,
        gamma,
        c_tilde,
        eps,
        chi,
        delta,
        truncation,
    })
}

// -------------------------------------------------------- modulus probability

/// Number of coarse cells of one path in which `max |X_s − X_{t_k}| ≥ eps`
/// over the fine points of the cell.
pub fn modulus_exceedances<T: Real>(fine: &[T], cell: usize, eps: T) -> usize {
    let cells = (fine.len() - 1) / cell;
    (0..cells)
        .filter(|&k| {
            let start = fine[k * cell];
            fine[k * cell + 1..=(k + 1) * cell]
                .iter()
                .any(|&x| (x - start).abs() >= eps)
        })
        .count()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyEstimate<T> {
    pub hits: usize,
    pub trials: usize,
    pub frequency: T,
    /// Binomial standard error `√(p(1−p)/trials)`.
    pub se: T,
}

impl<T: Real> FrequencyEstimate<T> {
    pub fn new(hits: usize, trials: usize) -> Self {
        let (frequency, se) = if trials == 0 {
            (T::zero(), T::zero())
        } else {
            let t = T::from_usize_lossy(trials);
            let p = T::from_usize_lossy(hits) / t;
            (p, (p * (T::one() - p) / t).sqrt())
        };
        Self {
            hits,
            trials,
            frequency,
            se,
        }
    }

    /// `frequency + z·se`.
    pub fn upper(&self, z: T) -> T {
        self.frequency + z * self.se
    }
}

pub fn modulus_probability<T: Real>(traj: &EmTrajectory<T>, eps: T) -> Result<FrequencyEstimate<T>> {
    let cell = traj.cell_len();
    let hits = reduce_paths(
        traj.paths(),
        DEFAULT_BATCH_PATHS,
        || 0usize,
        |acc, j| {
            *acc += modulus_exceedances(fine_path_of(traj, j)?, cell, eps);
            Ok(())
        },
        |acc, part| *acc += part,
    )?;
    Ok(FrequencyEstimate::new(hits, traj.paths() * traj.n))
}

// --------------------------------------------------------------- key integral

/// `Σ |f(X_s) − f(X_{η(s)})|^p Δt` over the fine steps of one path.
pub fn key_integral_path<T: Real>(f: &CoefficientSpec<T>, p: T, fine: &[T], cell: usize, dt: T) -> T {
    let mut total = T::zero();
    let mut frozen = T::zero();
    for (i, &x) in fine[..fine.len() - 1].iter().enumerate() {
        if i % cell == 0 {
            frozen = f.eval(x);
            continue;
        }
        total += (f.eval(x) - frozen).abs().powf(p);
    }
    total * dt
}

pub fn key_lemma_integral<T: Real>(f: &CoefficientSpec<T>, p: T, traj: &EmTrajectory<T>) -> Result<Estimate<T>> {
    if !(p >= T::one()) {
        return Err(Error::Domain(format!("p must be at least 1, got {p}")));
    }
    let (cell, dt) = (traj.cell_len(), traj.fine_dt());
    Ok(reduce_scalar(traj.paths(), |j| Ok(key_integral_path(f, p, fine_path_of(traj, j)?, cell, dt)))?.finish())
}

// ------------------------------------------------------------ truncation tail

/// `2·exp((|x0|+‖b‖T)²/(2σ̄²T))·exp(−K²/(4σ̄²T))`.
pub fn truncation_tail_bound<T: Real>(x0: T, b_sup: T, sigma_upper: T, horizon: T, k: T) -> Result<T> {
    let shift = x0.abs() + b_sup * horizon;
    if !(k > shift) {
        return Err(Error::Domain(format!("truncation level {k} must exceed |x0| + ‖b‖T = {shift}")));
    }
    let v = sigma_upper * sigma_upper * horizon;
    Ok(T::lit(2.0) * (shift * shift / (v + v)).exp() * (-k * k / (T::lit(4.0) * v)).exp())
}

/// `max_t |X_t − x0 − ∫₀ᵗ b(X_{η(s)}) ds|` on the fine lattice of one path.
pub fn stochastic_integral_sup<T: Real>(fine: &[T], cell: usize, b: &CoefficientSpec<T>, x0: T, dt: T) -> T {
    let mut drift = T::zero();
    let mut frozen = T::zero();
    let mut best = T::zero();
    for (i, &x) in fine.iter().enumerate() {
        best = best.max((x - x0 - drift).abs());
        if i % cell == 0 {
            frozen = b.eval(x);
        }
        drift += frozen * dt;
    }
    best
}

/// Frequency of `sup_t |stochastic integral| ≥ K − ‖b‖T − |x0|`.
pub fn stochastic_integral_exceedance<T: Real>(
    traj: &EmTrajectory<T>,
    b: &CoefficientSpec<T>,
    k: T,
) -> Result<FrequencyEstimate<T>> {
    let level = k - b.sup_norm * traj.horizon - traj.x0.abs();
    let (cell, dt) = (traj.cell_len(), traj.fine_dt());
    let acc = reduce_scalar(traj.paths(), |j| {
        let s = stochastic_integral_sup(fine_path_of(traj, j)?, cell, b, traj.x0, dt);
        Ok(if s >= level { T::one() } else { T::zero() })
    })?;
    Ok(FrequencyEstimate::new(acc.sum.as_f64().round() as usize, acc.count))
}

// ------------------------------------------------------------------ rate fits

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateModel<T> {
    /// `e(n) = c / log n`.
    COverLogN,
    /// `e(n) = c·n^{−a}`, with `a` optionally clamped to `[lo, hi]`.
    PowerLaw { bounds: Option<(T, T)> },
}

impl<T> RateModel<T> {
    pub fn name(&self) -> &'static str {
        match self {
            RateModel::COverLogN => "c_over_log_n",
            RateModel::PowerLaw { .. } => "power_law",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit<T> {
    pub model: RateModel<T>,
    pub c: T,
    /// Log-log slope `−a`; zero for `c / log n`.
    pub slope: T,
    /// `‖log e − log model‖₂`, comparable across models.
    pub residual: T,
}

impl<T: Real> RateFit<T> {
    pub fn predict(&self, n: usize) -> T {
        let nf = T::from_usize_lossy(n);
        match self.model {
            RateModel::COverLogN => self.c / nf.ln(),
            RateModel::PowerLaw { .. } => self.c * nf.powf(self.slope),
        }
    }
}

pub fn rate_fit<T: Real>(rows: &[(usize, T)], model: RateModel<T>) -> Result<RateFit<T>> {
    if rows.len() < 3 {
        return Err(Error::InvalidInput(format!("rate fit needs at least 3 rows, got {}", rows.len())));
    }
    if let Some(&(n, _)) = rows.iter().find(|(n, _)| *n < 2) {
        return Err(Error::InvalidInput(format!("rate fit needs n ≥ 2, got {n}")));
    }
    if let Some(&(n, e)) = rows.iter().find(|(_, e)| !(*e > T::zero() && e.is_finite())) {
        return Err(Error::DegenerateFit(format!("non-positive error {e} at n = {n}")));
    }
    if rows.iter().all(|(_, e)| *e == rows[0].1) {
        return Err(Error::DegenerateFit("all errors are equal".into()));
    }
    let m = T::from_usize_lossy(rows.len());
    let logs: Vec<(T, T)> = rows
        .iter()
        .map(|&(n, e)| (T::from_usize_lossy(n).ln(), e.ln()))
        .collect();
    let (c, slope) = match model {
        RateModel::COverLogN => {
            let c = rows
                .iter()
                .map(|&(n, e)| e * T::from_usize_lossy(n).ln())
                .sum::<T>()
                / m;
            (c, T::zero())
        }
        RateModel::PowerLaw { bounds } => {
            let mx = logs.iter().map(|p| p.0).sum::<T>() / m;
            let my = logs.iter().map(|p| p.1).sum::<T>() / m;
            let sxx: T = logs.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
            let sxy: T = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
            if sxx == T::zero() {
                return Err(Error::DegenerateFit("all n are equal".into()));
            }
            let mut a = -sxy / sxx;
            if let Some((lo, hi)) = bounds {
                a = a.max(lo).min(hi);
            }
            // Intercept is re-optimised for the (possibly clamped) slope.
            let log_c = my + a * mx;
            (log_c.exp(), -a)
        }
    };
    let fit = RateFit {
        model,
        c,
        slope,
        residual: T::zero(),
    };
    let residual = rows
        .iter()
        .zip(&logs)
        .map(|(&(n, _), &(_, le))| {
            let d = le - fit.predict(n).ln();
            d * d
        })
        .sum::<T>()
        .sqrt();
    Ok(RateFit { residual, ..fit })
}

/// Least-squares slope of `log y` against `log n`.
pub fn log_log_slope<T: Real>(rows: &[(usize, T)]) -> Result<T> {
    Ok(rate_fit(rows, RateModel::PowerLaw { bounds: None })?.slope)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brownian::BrownianLattice;
    use crate::coeffs::{make_constant, make_step_sigma};
    use crate::em::{em_coupled, em_path};
    use approx::assert_abs_diff_eq;

    fn brownian(seed: u64, n_fine: usize, paths: usize, n: usize) -> EmTrajectory<f64> {
        let lattice = BrownianLattice::generate(seed, 1.0, n_fine, paths).unwrap();
        em_path(&make_constant(0.0), &make_constant(1.0), 0.0, &lattice, n, true).unwrap()
    }

    #[test]
    fn accumulators_mean_and_se() {
        let mut a = MeanAccumulator::<f64>::default();
        for v in [1.0, 2.0, 3.0, 4.0] {
            a.push(v);
        }
        let e = a.finish();
        assert_eq!(e.mean, 2.5);
        assert_abs_diff_eq!(e.se, (5.0f64 / 3.0 / 4.0).sqrt(), epsilon = 1e-15);

        let mut s = SupMeanAccumulator::<f64>::new(3);
        s.push([0.0, 1.0, 0.5]);
        s.push([0.0, 3.0, 0.5]);
        let r = s.finish();
        assert_eq!((r.value, r.argmax, r.samples), (2.0, 1, 2));
        assert_abs_diff_eq!(r.se, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn constant_coefficients_have_zero_error() {
        let lattice = BrownianLattice::<f64>::generate(3, 1.0, 256, 16).unwrap();
        let trajs = em_coupled(&make_constant(0.5), &make_constant(1.0), 0.0, &lattice, &[4, 16, 64], 256).unwrap();
        let rep = strong_error(&trajs, 256).unwrap();
        assert_eq!(rep.rows.len(), 3);
        for r in &rep.rows {
            assert_eq!(r.error_mean, 0.0);
        }
    }

    #[test]
    fn self_comparison_is_zero_and_floor_is_split_off() {
        let (sigma, _) = make_step_sigma::<f64>();
        let lattice = BrownianLattice::generate(4, 1.0, 512, 16).unwrap();
        let b = make_constant(0.0);
        let trajs = em_coupled(&b, &sigma, 0.0, &lattice, &[8, 256], 512).unwrap();
        let rep = strong_error(&trajs, 512).unwrap();
        assert_eq!(rep.rows.len(), 1);
        assert!(rep.self_coupling_floor.is_some());
        assert!(rep.rows[0].error_mean > rep.self_coupling_floor.unwrap().error_mean);

        let same = em_coupled(&b, &sigma, 0.0, &lattice, &[], 512).unwrap();
        let mut both = same.clone();
        both.insert(3, same[&512].clone());
        let r = strong_error(&both, 512).unwrap();
        // n = 3 is a relabelled copy of the reference.
        assert_eq!(r.rows[0].error_mean, 0.0);
    }

    #[test]
    fn triangle_inequality_across_references() {
        let (sigma, _) = make_step_sigma::<f64>();
        let lattice = BrownianLattice::generate(5, 1.0, 1024, 64).unwrap();
        let b = make_constant(0.0);
        let trajs = em_coupled(&b, &sigma, 0.0, &lattice, &[8, 32, 512], 1024).unwrap();
        let mut at512: BTreeMap<usize, EmTrajectory<f64>> = BTreeMap::new();
        at512.insert(8, trajs[&8].clone());
        at512.insert(512, trajs[&512].clone());
        let e_n_512 = strong_error(&at512, 512).unwrap().rows[0].error_mean;
        let mut at1024 = trajs.clone();
        at1024.remove(&32);
        let rep = strong_error(&at1024, 1024).unwrap();
        let e_n_1024 = rep.rows[0].error_mean;
        let e_512_1024 = rep.self_coupling_floor.unwrap().error_mean;
        assert!(e_n_512 <= e_n_1024 + e_512_1024 + 1e-12);
    }

    #[test]
    fn floor_warning_triggers() {
        let rows = vec![ErrorRow {
            n: 64,
            error_mean: 0.01,
            error_se: 0.001,
            samples: 10,
            argmax_time: 1.0,
        }];
        let floor = ErrorRow { n: 512, ..rows[0] };
        let rep = ErrorReport::new(1024, rows.clone(), Some(ErrorRow { error_mean: 0.0005, ..floor }));
        assert!(rep.warnings.is_empty());
        let rep = ErrorReport::new(1024, rows, Some(ErrorRow { error_mean: 0.005, ..floor }));
        assert_eq!(rep.warnings.len(), 1);
    }

    #[test]
    fn increment_moment_of_brownian_motion() {
        let tr = brownian(11, 1024, 4000, 16);
        let m = increment_moment(&tr, 2.0).unwrap();
        // Maximum sits on the last fine point before a grid time: t − η(t) = T/n − Δt.
        let expected = 1.0 / 16.0 - 1.0 / 1024.0;
        assert!((m.value - expected).abs() <= 4.0 * m.se, "{m:?}");
        assert_ne!(m.argmax % 64, 0);
        assert!(increment_moment(&tr, 0.0).is_err());
    }

    #[test]
    fn increment_moment_at_grid_times_is_zero() {
        let tr = brownian(12, 64, 8, 64);
        let m = increment_moment(&tr, 2.0).unwrap();
        assert_eq!(m.value, 0.0);
    }

    #[test]
    fn local_time_bound_values() {
        assert_eq!(local_time_bound(0.0, 1.0, 1.0), 6.0);
        assert_eq!(local_time_bound(1.0, 1.0, 1.0), 18.0);
        assert_eq!(local_time_bound(0.0, 2.0, 1.0), 24.0);
    }

    #[test]
    fn local_time_of_brownian_motion_at_zero() {
        let n_fine = 4096;
        let tr = brownian(13, n_fine, 2000, n_fine);
        let sigma = make_constant(1.0);
        let p = InterpolatedProcess::build(0.0, &tr, &tr, &sigma).unwrap();
        let h = default_bandwidth(1.0, n_fine);
        let lt = local_time_estimate(&p, 0.0, h).unwrap();
        assert!(lt.warning.is_none());
        assert!(
            (lt.mean.mean - 0.7978845608028654).abs() <= 4.0 * lt.mean.se,
            "{:?}",
            lt.mean
        );
        // Far from the path.
        let far = local_time_estimate(&p, 100.0, h).unwrap();
        assert!(far.per_path.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn local_time_reduces_to_occupation_density() {
        let tr = brownian(14, 256, 3, 256);
        let p = InterpolatedProcess::build(0.0, &tr, &tr, &make_constant(1.0)).unwrap();
        let h = 0.1;
        let lt = local_time_estimate(&p, 0.05, h).unwrap();
        for j in 0..3 {
            let path = tr.fine_path(j).unwrap();
            let inside = path[..256].iter().filter(|v| (**v - 0.05).abs() <= h).count();
            assert_abs_diff_eq!(lt.per_path[j], inside as f64 / 256.0 / (2.0 * h), epsilon = 1e-12);
        }
    }

    #[test]
    fn interpolated_process_endpoints_and_qv_floor() {
        let (sigma, _) = make_step_sigma::<f64>();
        let lattice = BrownianLattice::generate(15, 1.0, 256, 4).unwrap();
        let b = make_constant(0.0);
        let trajs = em_coupled(&b, &sigma, 0.0, &lattice, &[16], 256).unwrap();
        let p0 = InterpolatedProcess::build(0.0, &trajs[&256], &trajs[&16], &sigma).unwrap();
        let p1 = InterpolatedProcess::build(1.0, &trajs[&256], &trajs[&16], &sigma).unwrap();
        let ph = InterpolatedProcess::build(0.5, &trajs[&256], &trajs[&16], &sigma).unwrap();
        for j in 0..4 {
            assert_eq!(p0.values.row(j).to_vec(), trajs[&256].fine_path(j).unwrap().to_vec());
            assert_eq!(p1.values.row(j).to_vec(), trajs[&16].fine_path(j).unwrap().to_vec());
        }
        let floor = sigma.range.0 * sigma.range.0 / 256.0;
        assert!(ph.qv_increments.iter().all(|&q| q >= floor));
        assert!(bandwidth_warning(1e-3, 2.0, 1.0 / 256.0).is_some());
        assert!(InterpolatedProcess::build(1.5, &trajs[&256], &trajs[&16], &sigma).is_err());
    }

    #[test]
    fn schedule_closed_forms() {
        let s = tightness_schedule(64, 1.0f64, 0.0, 2.0, 0.25, 0.0).unwrap();
        assert_abs_diff_eq!(s.c_tilde, 11.313708498984761, epsilon = 1e-12);
        assert_eq!(s.delta, 1.0 / 64.0);
        assert_abs_diff_eq!(s.gamma, 1.0 / (64f64.powf(0.25) * 64f64.ln()), epsilon = 1e-15);
        assert!(tightness_schedule(2, 1.0f64, 0.0, 1.0, 0.25, 0.0).is_err());
    }

    #[test]
    fn schedule_identities_to_machine_precision() {
        use rand_core::{RngCore, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut u = |lo: f64, hi: f64| lo + (hi - lo) * (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        for _ in 0..1000 {
            let n = u(3.0, 1e6) as usize;
            let t = u(0.1, 10.0);
            let b = u(0.0, 3.0);
            let s = u(0.1, 3.0);
            let a = u(0.01, 0.3);
            let x0 = u(-2.0, 2.0);
            let sc = tightness_schedule(n, t, b, s, a, x0).unwrap();
            let tol = 8.0 * f64::EPSILON;
            assert!((sc.delta * sc.chi / sc.gamma - 1.0).abs() <= tol);
            let lhs = sc.eps.powi(4) * sc.chi / (8.0 * (t * t * b.powi(4) + 128.0 * s.powi(4)));
            assert!((lhs / sc.delta - 1.0).abs() <= 32.0 * f64::EPSILON, "{lhs} {}", sc.delta);
        }
    }

    #[test]
    fn modulus_counts_and_trivial_case() {
        let fine = [0.0, 0.5, 1.2, 1.0, 1.0, 0.1];
        assert_eq!(modulus_exceedances(&fine, 1, 1.0), 0);
        assert_eq!(modulus_exceedances(&fine[..5], 2, 1.0), 1);
        assert_eq!(modulus_exceedances(&fine[..5], 2, 0.15), 2);
        let tr = brownian(16, 256, 8, 16);
        let f = modulus_probability(&tr, 1e6).unwrap();
        assert_eq!((f.hits, f.frequency), (0, 0.0));
    }

    #[test]
    fn modulus_matches_reflection_principle() {
        // 64 fine points per cell; discrete monitoring shifts the barrier by
        // 0.5826·√(cell length) (continuity correction).
        let n = 256;
        let tr = brownian(17, 1 << 14, 4000, n);
        let f = modulus_probability(&tr, 4.0 * (1.0 / n as f64).sqrt()).unwrap();
        let oracle = 9.28926455820055e-5;
        assert!((f.frequency - oracle).abs() <= 4.0 * f.se, "{f:?}");
    }

    #[test]
    fn key_integral_constant_and_sign_rate() {
        let tr = brownian(18, 1024, 8, 16);
        let c = make_constant(2.0);
        assert_eq!(key_lemma_integral(&c, 2.0, &tr).unwrap().mean, 0.0);
        let mut rows = Vec::new();
        for n in [16, 64, 256] {
            let tr = brownian(19, 4096, 500, n);
            let (f, _) = make_step_sigma::<f64>();
            rows.push((n, key_lemma_integral(&f, 2.0, &tr).unwrap().mean));
        }
        let slope = log_log_slope(&rows).unwrap();
        assert!((slope + 0.5).abs() <= 0.15, "slope {slope}");
    }

    #[test]
    fn tail_bound_closed_form() {
        assert_abs_diff_eq!(
            truncation_tail_bound(0.0, 0.0, 1.0, 1.0, 2.0).unwrap(),
            0.7357588823428847,
            epsilon = 1e-15
        );
        let mut prev = f64::INFINITY;
        for k in [1.5, 2.0, 4.0, 8.0, 16.0] {
            let v = truncation_tail_bound(0.5, 0.5, 1.0, 1.0, k).unwrap();
            assert!(v < prev);
            prev = v;
        }
        assert!(prev < 1e-20);
        assert!(truncation_tail_bound(0.5, 0.5, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn stochastic_integral_of_brownian_motion() {
        let tr = brownian(20, 256, 50, 16);
        let b = make_constant(0.0);
        for j in 0..50 {
            let path = tr.fine_path(j).unwrap();
            let m = path.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            assert_eq!(stochastic_integral_sup(path, 16, &b, 0.0, 1.0 / 256.0), m);
        }
        let f = stochastic_integral_exceedance(&tr, &b, 2.0).unwrap();
        assert!(f.frequency <= truncation_tail_bound(0.0, 0.0, 1.0, 1.0, 2.0).unwrap());
    }

    #[test]
    fn rate_fit_exact_models() {
        let ns = [64usize, 128, 256, 512, 1024];
        let rows: Vec<_> = ns.iter().map(|&n| (n, 3.0 / (n as f64).ln())).collect();
        let f = rate_fit(&rows, RateModel::COverLogN).unwrap();
        assert_abs_diff_eq!(f.c, 3.0, epsilon = 1e-12);
        assert!(f.residual < 1e-12);

        let rows: Vec<_> = ns.iter().map(|&n| (n, (n as f64).powf(-0.5))).collect();
        let f = rate_fit(&rows, RateModel::PowerLaw { bounds: None }).unwrap();
        assert_abs_diff_eq!(f.slope, -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(f.c, 1.0, epsilon = 1e-12);
        assert!(f.residual < 1e-12);

        let clamped = rate_fit(&rows, RateModel::PowerLaw { bounds: Some((0.0, 0.1)) }).unwrap();
        assert_abs_diff_eq!(clamped.slope, -0.1, epsilon = 1e-15);
        assert!(clamped.residual > 0.1);
    }

    #[test]
    fn rate_fit_degenerate_inputs() {
        let flat = [(8usize, 0.1f64), (16, 0.1), (32, 0.1)];
        assert!(matches!(rate_fit(&flat, RateModel::COverLogN), Err(Error::DegenerateFit(_))));
        let zero = [(8usize, 0.0f64), (16, 0.0), (32, 0.0)];
        assert!(matches!(
            rate_fit(&zero, RateModel::PowerLaw { bounds: None }),
            Err(Error::DegenerateFit(_))
        ));
        assert!(rate_fit(&flat[..2], RateModel::COverLogN).is_err());
    }

    #[test]
    fn f32_schedule() {
        let s = tightness_schedule(64, 1.0f32, 0.0, 2.0, 0.25, 0.0).unwrap();
        assert!((s.c_tilde - 11.313_708).abs() < 1e-4);
    }
}
