//! Experiment configuration: JSON with unknown keys rejected, validated
//! against the coefficient certificates.

use std::f64::consts::E;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::descriptor::Descriptor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub x0: f64,
    #[serde(rename = "M")]
    pub paths: usize,
    #[serde(rename = "log2_N_fine")]
    pub log2_n_fine: u32,
    pub n_list: Vec<usize>,
    pub n_ref: usize,
    pub alpha: f64,
    pub b: Descriptor,
    pub sigma: Descriptor,
    #[serde(default)]
    pub estimators: EstimatorOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorOptions {
    /// Local-time bandwidth; `(T/N_fine)^{1/3}` when absent.
    pub bandwidth: Option<f64>,
    pub theta: Vec<f64>,
    pub x_grid: Vec<f64>,
    /// Increment moment order.
    pub q: f64,
    /// Key-integral exponent.
    pub p: f64,
    /// Resolution used by the local-time check; smallest `n` when absent.
    pub local_time_n: Option<usize>,
    /// Resolution used by the modulus and tail checks; smallest `n` when absent.
    pub modulus_n: Option<usize>,
    /// Truncation level for the tail check; `K_n` of the schedule when absent.
    pub tail_k: Option<f64>,
    /// Function of the key-integral check; `sigma` when absent.
    pub key_f: Option<Descriptor>,
    /// Constrains the fitted power-law exponent `a` to `[lo, hi]`.
    pub power_bounds: Option<[f64; 2]>,
    pub mollifiers: Vec<MollifierParams>,
    pub ramp_fraction: f64,
    pub mollifier_grid_points: usize,
    pub cert_grid_points: usize,
    pub batch_paths: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MollifierParams {
    pub delta: f64,
    pub eps: f64,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self {
            bandwidth: None,
            theta: vec![0.0, 0.5, 1.0],
            x_grid: vec![-1.0, -0.5, 0.0, 0.5, 1.0],
            q: 2.0,
            p: 2.0,
            local_time_n: None,
            modulus_n: None,
            tail_k: None,
            key_f: None,
            power_bounds: None,
            mollifiers: vec![MollifierParams { delta: E * E, eps: 0.5 }],
            ramp_fraction: 0.125,
            mollifier_grid_points: 10_000,
            cert_grid_points: 1_000,
            batch_paths: 64,
        }
    }
}

/// A validation failure located by its field path.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config.{}: {}", self.path, self.message)
    }
}

fn fail<T>(path: impl Into<String>, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError {
        path: path.into(),
        message: message.into(),
    })
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| ConfigError {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        Ok(Self::from_json(&text)?)
    }

    /// Desk-scale default for a given `b` and `σ`.
    pub fn desk_profile(b: Descriptor, sigma: Descriptor) -> Self {
        Self {
            seed: 20240601,
            horizon: 1.0,
            x0: 0.0,
            paths: 2000,
            log2_n_fine: 16,
            n_list: (6..=12).map(|k| 1usize << k).collect(),
            n_ref: 1 << 16,
            alpha: 0.1,
            b,
            sigma,
            estimators: EstimatorOptions::default(),
            output_dir: None,
        }
    }

    pub fn n_fine(&self) -> usize {
        1usize << self.log2_n_fine
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return fail("T", format!("must be positive and finite, got {}", self.horizon));
        }
        if !self.x0.is_finite() {
            return fail("x0", "must be finite");
        }
        if self.paths < 2 {
            return fail("M", format!("need at least 2 paths, got {}", self.paths));
        }
        if !(1..=26).contains(&self.log2_n_fine) {
            return fail("log2_N_fine", format!("must be in 1..=26, got {}", self.log2_n_fine));
        }
        let n_fine = self.n_fine();
        if self.n_list.is_empty() {
            return fail("n_list", "must not be empty");
        }
        for (i, &n) in self.n_list.iter().enumerate() {
            if n < 3 {
                return fail(format!("n_list[{i}]"), format!("must be at least 3, got {n}"));
            }
            if n_fine % n != 0 {
                return fail(format!("n_list[{i}]"), format!("{n} does not divide N_fine = {n_fine}"));
            }
            if i > 0 && n <= self.n_list[i - 1] {
                return fail(format!("n_list[{i}]"), "must be strictly increasing");
            }
        }
        if n_fine % self.n_ref != 0 || self.n_ref == 0 {
            return fail("n_ref", format!("{} does not divide N_fine = {n_fine}", self.n_ref));
        }
        let max = *self.n_list.iter().max().expect("non-empty");
        if self.n_ref <= max {
            return fail("n_ref", format!("must exceed max(n_list) = {max}, got {}", self.n_ref));
        }

        let b = self.b.build().or_else(|e| fail("b", e.to_string()))?;
        let (sigma, cert) = self
            .sigma
            .build_with_certificate()
            .or_else(|e| fail("sigma", e.to_string()))?;
        if cert.is_none() {
            return fail("sigma", format!("{} is not uniformly elliptic", sigma.name));
        }
        let beta = b.beta.min(sigma.beta);
        let kappa = b.kappa.min(sigma.kappa);
        let cap = alpha_cap(beta, kappa);
        if !(self.alpha > 0.0 && self.alpha < cap) {
            return fail(
                "alpha",
                format!("must lie in (0, β/2 ∧ 2κ/(κ+4)) = (0, {cap:.6}) for β = {beta}, κ = {kappa}; got {}", self.alpha),
            );
        }

        let est = &self.estimators;
        if let Some(h) = est.bandwidth {
            if !(h > 0.0) {
                return fail("estimators.bandwidth", "must be positive");
            }
        }
        for (i, &t) in est.theta.iter().enumerate() {
            if !(0.0..=1.0).contains(&t) {
                return fail(format!("estimators.theta[{i}]"), "must lie in [0, 1]");
            }
        }
        if !(est.q > 0.0) {
            return fail("estimators.q", "must be positive");
        }
        if !(est.p >= 1.0) {
            return fail("estimators.p", "must be at least 1");
        }
        for (name, n) in [("local_time_n", est.local_time_n), ("modulus_n", est.modulus_n)] {
            if let Some(n) = n {
                if n < 3 || n_fine % n != 0 {
                    return fail(format!("estimators.{name}"), format!("{n} must be ≥ 3 and divide N_fine"));
                }
            }
        }
        if let Some(k) = est.tail_k {
            let shift = self.x0.abs() + b.sup_norm * self.horizon;
            if !(k > shift) {
                return fail("estimators.tail_k", format!("must exceed |x0| + ‖b‖T = {shift}"));
            }
        }
        if let Some(f) = &est.key_f {
            f.build().or_else(|e| fail("estimators.key_f", e.to_string()))?;
        }
        if let Some([lo, hi]) = est.power_bounds {
            if !(lo <= hi) {
                return fail("estimators.power_bounds", "lower bound exceeds upper bound");
            }
        }
        for (i, m) in est.mollifiers.iter().enumerate() {
            if !(m.delta > 1.0) {
                return fail(format!("estimators.mollifiers[{i}].delta"), "must exceed 1");
            }
            if !(m.eps > 0.0 && m.eps < 1.0) {
                return fail(format!("estimators.mollifiers[{i}].eps"), "must lie in (0, 1)");
            }
        }
        if !(est.ramp_fraction > 0.0 && est.ramp_fraction <= 0.25) {
            return fail("estimators.ramp_fraction", "must lie in (0, 1/4]");
        }
        if est.mollifier_grid_points < 2 {
            return fail("estimators.mollifier_grid_points", "must be at least 2");
        }
        if est.cert_grid_points < 2 {
            return fail("estimators.cert_grid_points", "must be at least 2");
        }
        if est.batch_paths == 0 {
            return fail("estimators.batch_paths", "must be positive");
        }
        Ok(())
    }
}

/// `β/2 ∧ 2κ/(κ+4)`.
pub fn alpha_cap(beta: f64, kappa: f64) -> f64 {
    (beta / 2.0).min(2.0 * kappa / (kappa + 4.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> serde_json::Value {
        serde_json::json!({
            "seed": 1, "T": 1.0, "x0": 0.0, "M": 100, "log2_N_fine": 10,
            "n_list": [8, 16, 32], "n_ref": 1024, "alpha": 0.25,
            "b": {"kind": "constant", "value": 0.0},
            "sigma": {"kind": "step_sigma"}
        })
    }

    fn parse(v: &serde_json::Value) -> Result<ExperimentConfig, ConfigError> {
        ExperimentConfig::from_json(&v.to_string())
    }

    #[test]
    fn accepts_valid_and_round_trips() {
        let cfg = parse(&base()).unwrap();
        assert_eq!(cfg.n_fine(), 1024);
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected_with_path() {
        let mut v = base();
        v["estimators"] = serde_json::json!({"bandwith": 0.1});
        let e = parse(&v).unwrap_err();
        assert!(e.path.starts_with("estimators"), "{e}");
        let mut v = base();
        v["extra"] = serde_json::json!(1);
        assert!(parse(&v).is_err());
    }

    #[test]
    fn field_paths_on_validation_errors() {
        let mut v = base();
        v["n_list"] = serde_json::json!([8, 24]);
        assert_eq!(parse(&v).unwrap_err().path, "n_list[1]");
        let mut v = base();
        v["n_ref"] = serde_json::json!(32);
        assert_eq!(parse(&v).unwrap_err().path, "n_ref");
        let mut v = base();
        v["alpha"] = serde_json::json!(0.45);
        assert_eq!(parse(&v).unwrap_err().path, "alpha");
        let mut v = base();
        v["sigma"] = serde_json::json!({"kind": "constant", "value": 0.0});
        assert_eq!(parse(&v).unwrap_err().path, "sigma");
        let mut v = base();
        v["estimators"] = serde_json::json!({"mollifiers": [{"delta": 0.5, "eps": 0.1}]});
        assert_eq!(parse(&v).unwrap_err().path, "estimators.mollifiers[0].delta");
    }

    #[test]
    fn alpha_cap_values() {
        assert_eq!(alpha_cap(1.0, 1.0), 0.4);
        assert!((alpha_cap(2.0 / 3.0, 0.5) - 2.0 / 9.0).abs() < 1e-15);
    }
}
