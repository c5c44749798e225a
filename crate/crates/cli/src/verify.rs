//! Verification suites: each selector runs the invariant checks for one
//! supporting bound and reports measured slacks with a verdict.

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::Serialize;

use sdeconv_core::coeffs::{check_certificates, sample_grid_avoiding, CoefficientSpec, DiffusionCertificate};
use sdeconv_core::estimators::{
    bandwidth_warning, local_time_bound, log_log_slope, tightness_schedule, truncation_tail_bound,
};
use sdeconv_core::reduce::with_workers;
use sdeconv_core::yamada_watanabe::{default_check_grid, verify_properties, MollifierPair, DEFAULT_GRID_POINTS};
use sdeconv_core::DriftRemovalTransform;

use crate::config::ExperimentConfig;
use crate::experiment::Experiment;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    IncrementMoments,
    LocalTime,
    Tightness,
    DriftRemoval,
    KeyIntegral,
    Mollifier,
    Certificates,
}

impl Suite {
    pub const ALL: [Suite; 7] = [
        Suite::Certificates,
        Suite::Mollifier,
        Suite::DriftRemoval,
        Suite::IncrementMoments,
        Suite::LocalTime,
        Suite::Tightness,
        Suite::KeyIntegral,
    ];

    pub fn selector(self) -> &'static str {
        match self {
            Suite::IncrementMoments => "3.1",
            Suite::LocalTime => "3.2",
            Suite::Tightness => "3.4",
            Suite::DriftRemoval => "3.5",
            Suite::KeyIntegral => "3.6",
            Suite::Mollifier => "yw",
            Suite::Certificates => "certs",
        }
    }
}

/// Parsed `--lemma` value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selector(pub Vec<Suite>);

impl FromStr for Selector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "all" {
            return Ok(Selector(Suite::ALL.to_vec()));
        }
        Suite::ALL
            .iter()
            .find(|suite| suite.selector() == s)
            .map(|&suite| Selector(vec![suite]))
            .ok_or_else(|| format!("unknown selector `{s}`; expected one of all, 3.1, 3.2, 3.4, 3.5, 3.6, yw, certs"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub suite: &'static str,
    pub name: String,
    pub passed: bool,
    pub metrics: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl Check {
    fn new(suite: Suite, name: impl Into<String>) -> Self {
        Self {
            suite: suite.selector(),
            name: name.into(),
            passed: true,
            metrics: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    fn metric(&mut self, key: impl Into<String>, v: f64) -> &mut Self {
        self.metrics.insert(key.into(), v);
        self
    }

    fn require(&mut self, ok: bool, why: impl Into<String>) -> &mut Self {
        if !ok {
            self.passed = false;
            self.notes.push(why.into());
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub fn run_verify(config: &ExperimentConfig, selector: &Selector, workers: usize) -> anyhow::Result<VerifyReport> {
    let exp = Experiment::new(config.clone())?;
    let checks = with_workers(workers, || -> anyhow::Result<Vec<Check>> {
        let mut all = Vec::new();
        for &suite in &selector.0 {
            all.extend(run_suite(&exp, suite)?);
        }
        Ok(all)
    })??;
    Ok(VerifyReport {
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}

fn run_suite(exp: &Experiment, suite: Suite) -> anyhow::Result<Vec<Check>> {
    match suite {
        Suite::Certificates => certificates(exp),
        Suite::Mollifier => mollifiers(exp),
        Suite::DriftRemoval => Ok(vec![drift_removal(exp)?]),
        Suite::IncrementMoments => Ok(vec![increment_moments(exp)?]),
        Suite::LocalTime => Ok(vec![local_time(exp)?]),
        Suite::Tightness => tightness(exp),
        Suite::KeyIntegral => key_integral(exp),
    }
}

pub fn certificate_check(
    name: &str,
    spec: &CoefficientSpec<f64>,
    cert: Option<&DiffusionCertificate<f64>>,
    points: usize,
) -> anyhow::Result<Check> {
    let mut check = Check::new(Suite::Certificates, name);
    let grid = sample_grid_avoiding(&spec.singular_set, -3.0, 3.0, points);
    let report = check_certificates(spec, cert, &grid)?;
    check
        .metric("beta", spec.beta)
        .metric("kappa", spec.kappa)
        .metric("checks", report.checks as f64)
        .metric("violations", report.violations.len() as f64)
        .metric("c_beta_kappa_estimate", report.c_beta_kappa_estimate)
        .metric("c_beta_kappa_bound", spec.c_beta_kappa_bound);
    for v in report.violations.iter().take(5) {
        check.notes.push(format!("{:?} at {:?}: {} > {}", v.kind, v.witness, v.lhs, v.rhs));
    }
    check.require(report.passed(), "certificate violations");
    Ok(check)
}

fn certificates(exp: &Experiment) -> anyhow::Result<Vec<Check>> {
    let points = exp.config.estimators.cert_grid_points;
    Ok(vec![
        certificate_check("b", &exp.b, None, points)?,
        certificate_check("sigma", &exp.sigma, Some(&exp.cert), points)?,
    ])
}

pub fn mollifier_check(delta: f64, eps: f64, ramp: f64, points: usize) -> anyhow::Result<Check> {
    let mut check = Check::new(Suite::Mollifier, format!("delta={delta},eps={eps}"));
    let pair = MollifierPair::build(delta, eps, ramp, DEFAULT_GRID_POINTS)?;
    let grid = default_check_grid(&pair, points);
    let r = verify_properties(&pair, &grid)?;
    check
        .metric("integral_error", r.integral_error)
        .metric("cap_ratio", r.cap_ratio)
        .metric("dominance_slack", r.dominance_slack)
        .metric("max_slope", r.max_slope)
        .metric("second_derivative_mismatch", r.second_derivative_mismatch)
        .metric("points", r.points as f64)
        .metric("violations", r.violations.len() as f64);
    for (what, v) in r.violations.iter().take(5) {
        check.notes.push(format!("{what}: {v}"));
    }
    check.require(r.passed(), "mollifier property violations");
    Ok(check)
}

fn mollifiers(exp: &Experiment) -> anyhow::Result<Vec<Check>> {
    let est = &exp.config.estimators;
    est.mollifiers
        .iter()
        .map(|m| mollifier_check(m.delta, m.eps, est.ramp_fraction, est.mollifier_grid_points))
        .collect()
}

fn drift_removal(exp: &Experiment) -> anyhow::Result<Check> {
    let mut check = Check::new(Suite::DriftRemoval, "transform");
    let t = match DriftRemovalTransform::new(&exp.b, &exp.sigma, &exp.cert) {
        Ok(t) => t,
        Err(e) => {
            check.require(false, format!("transform unavailable: {e}"));
            return Ok(check);
        }
    };
    let grid: Vec<f64> = (0..=2000).map(|i| -10.0 + 0.01 * i as f64).collect();
    let r = t.verify(&grid, 10_000, exp.config.seed)?;
    check
        .metric("c0", r.c0)
        .metric("min_phi_prime", r.min_phi_prime)
        .metric("max_phi_prime", r.max_phi_prime)
        .metric("max_phi_second", r.max_phi_second)
        .metric("phi_second_bound", r.phi_second_bound)
        .metric("max_roundtrip_error", r.max_roundtrip_error)
        .metric("max_inverse_lipschitz", r.max_inverse_lipschitz)
        .metric("pairs", r.pairs as f64)
        .metric("phi_at_2", t.phi(2.0));
    for (what, v) in r.violations.iter().take(5) {
        check.notes.push(format!("{what}: {v}"));
    }
    check
        .require(r.passed(), "bound violations")
        .require(r.max_roundtrip_error <= 1e-5, "inverse round trip above 1e-5");
    Ok(check)
}

fn increment_moments(exp: &Experiment) -> anyhow::Result<Check> {
    let q = exp.config.estimators.q;
    let mut check = Check::new(Suite::IncrementMoments, format!("q={q}"));
    let rows = exp.increment_moments(q)?;
    for (n, m) in &rows {
        check.metric(format!("value_n{n}"), m.value).metric(format!("se_n{n}"), m.se);
    }
    let pts: Vec<(usize, f64)> = rows.iter().map(|(n, m)| (*n, m.value)).collect();
    match log_log_slope(&pts) {
        Ok(slope) => {
            check.metric("slope", slope).metric("expected_slope", -q / 2.0);
            check.require((slope + q / 2.0).abs() <= 0.15, "slope differs from −q/2 by more than 0.15");
        }
        Err(e) => {
            check.require(false, format!("slope fit failed: {e}"));
        }
    }
    Ok(check)
}

fn local_time(exp: &Experiment) -> anyhow::Result<Check> {
    let cfg = &exp.config;
    let n = cfg.estimators.local_time_n.unwrap_or(cfg.n_list[0]);
    let mut check = Check::new(Suite::LocalTime, format!("n={n}"));
    let h = exp.bandwidth();
    let bound = local_time_bound(exp.b.sup_norm, exp.cert.sigma_upper, cfg.horizon);
    if let Some(w) = bandwidth_warning(h, exp.cert.sigma_upper, exp.fine_dt()) {
        check.notes.push(w);
    }
    let cells = exp.local_times(n)?;
    let mut worst = f64::NEG_INFINITY;
    for c in &cells {
        let slack = bound + 4.0 * c.second_moment.se - c.second_moment.mean;
        worst = worst.max(c.second_moment.mean / bound);
        check.metric(format!("second_moment_theta{}_x{}", c.theta, c.x), c.second_moment.mean);
        check.metric(format!("mean_theta{}_x{}", c.theta, c.x), c.mean.mean);
        check.require(slack >= 0.0, format!("θ = {}, x = {}: E L² = {} above bound + 4 SE", c.theta, c.x, c.second_moment.mean));
    }
    check.metric("bound", bound).metric("bandwidth", h).metric("max_ratio_to_bound", worst);
    Ok(check)
}

fn tightness(exp: &Experiment) -> anyhow::Result<Vec<Check>> {
    let cfg = &exp.config;
    let n = cfg.estimators.modulus_n.unwrap_or(cfg.n_list[0]);
    let sched = tightness_schedule(n, cfg.horizon, exp.b.sup_norm, exp.cert.sigma_upper, cfg.alpha, cfg.x0)?;
    let mut ident = Check::new(Suite::Tightness, "schedule_identities");
    let b4 = exp.b.sup_norm.powi(4);
    let s4 = exp.cert.sigma_upper.powi(4);
    let r1 = (sched.delta * sched.chi / sched.gamma - 1.0).abs();
    let lhs = sched.eps.powi(4) * sched.chi / (8.0 * (cfg.horizon * cfg.horizon * b4 + 128.0 * s4));
    let r2 = (lhs / sched.delta - 1.0).abs();
    ident
        .metric("gamma", sched.gamma)
        .metric("c_tilde", sched.c_tilde)
        .metric("eps", sched.eps)
        .metric("chi", sched.chi)
        .metric("delta", sched.delta)
        .metric("truncation_k", sched.truncation)
        .metric("delta_chi_rel_error", r1)
        .metric("eps4_identity_rel_error", r2)
        .require(r1 <= 8.0 * f64::EPSILON, "δχ ≠ γ")
        .require(r2 <= 32.0 * f64::EPSILON, "ε⁴χ identity fails");

    let k = cfg.estimators.tail_k.unwrap_or(sched.truncation);
    let (modulus, _) = exp.modulus_and_tail(n, sched.eps, k)?;
    let mut m = Check::new(Suite::Tightness, format!("modulus_n{n}"));
    m.metric("frequency", modulus.frequency)
        .metric("se", modulus.se)
        .metric("trials", modulus.trials as f64)
        .metric("gamma", sched.gamma)
        .require(modulus.frequency <= sched.gamma + 3.0 * modulus.se, "frequency above γ + 3 SE");
    Ok(vec![ident, m])
}

fn key_integral(exp: &Experiment) -> anyhow::Result<Vec<Check>> {
    let cfg = &exp.config;
    let p = cfg.estimators.p;
    let f = match &cfg.estimators.key_f {
        Some(d) => d.build()?,
        None => exp.sigma.clone(),
    };
    let mut check = Check::new(Suite::KeyIntegral, format!("f={},p={p}", f.name));
    let rows = exp.key_integrals(&f, p)?;
    for (n, e) in &rows {
        check.metric(format!("value_n{n}"), e.mean).metric(format!("se_n{n}"), e.se);
    }
    if rows.iter().all(|(_, e)| e.mean == 0.0) {
        check.notes.push("identically zero".into());
    } else {
        let pts: Vec<(usize, f64)> = rows.iter().map(|(n, e)| (*n, e.mean)).collect();
        match log_log_slope(&pts) {
            Ok(slope) => {
                check.metric("slope", slope).metric("alpha", cfg.alpha);
                check.require(slope <= -cfg.alpha, "decay slower than n^(−α)");
            }
            Err(e) => {
                check.require(false, format!("slope fit failed: {e}"));
            }
        }
    }

    let n = cfg.estimators.modulus_n.unwrap_or(cfg.n_list[0]);
    let sched = tightness_schedule(n, cfg.horizon, exp.b.sup_norm, exp.cert.sigma_upper, cfg.alpha, cfg.x0)?;
    let k = cfg.estimators.tail_k.unwrap_or(sched.truncation);
    let bound = truncation_tail_bound(cfg.x0, exp.b.sup_norm, exp.cert.sigma_upper, cfg.horizon, k)?;
    let (_, tail) = exp.modulus_and_tail(n, f64::INFINITY, k)?;
    let mut t = Check::new(Suite::KeyIntegral, format!("tail_k{k}"));
    t.metric("k", k)
        .metric("bound", bound)
        .metric("frequency", tail.frequency)
        .metric("se", tail.se)
        .require(tail.frequency <= bound, "empirical tail frequency above the bound");
    Ok(vec![check, t])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::Descriptor;

    #[test]
    fn selectors_parse() {
        assert_eq!("all".parse::<Selector>().unwrap().0.len(), 7);
        assert_eq!("3.5".parse::<Selector>().unwrap().0, vec![Suite::DriftRemoval]);
        assert!("3.3".parse::<Selector>().is_err());
    }

    #[test]
    fn drift_removal_suite_on_unit_indicator() {
        let cfg = ExperimentConfig::desk_profile(
            Descriptor::IndicatorInterval { a: 0.0, b: 1.0 },
            Descriptor::Constant { value: 1.0 },
        );
        let r = run_verify(&cfg, &"3.5".parse().unwrap(), 1).unwrap();
        assert!(r.passed, "{r:?}");
        let c = &r.checks[0];
        assert!((c.metrics["c0"] - 7.38905609893065).abs() < 1e-12);
        assert!((c.metrics["min_phi_prime"] - (-2f64).exp()).abs() < 1e-12);
        assert!((c.metrics["phi_at_2"] - 0.5676676416183063).abs() < 1e-6);
    }

    #[test]
    fn drift_removal_suite_fails_for_non_integrable_drift() {
        let cfg = ExperimentConfig::desk_profile(Descriptor::Constant { value: 1.0 }, Descriptor::StepSigma);
        let r = run_verify(&cfg, &"3.5".parse().unwrap(), 1).unwrap();
        assert!(!r.passed);
    }

    #[test]
    fn mollifier_and_certificate_suites() {
        let cfg = ExperimentConfig::desk_profile(Descriptor::Constant { value: 0.0 }, Descriptor::StepSigma);
        let r = run_verify(&cfg, &"yw".parse().unwrap(), 1).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r.checks[0].metrics["integral_error"] < 1e-6);
        let r = run_verify(&cfg, &"certs".parse().unwrap(), 1).unwrap();
        assert!(r.passed, "{r:?}");
    }
}
