//! JSON descriptors for the coefficient constructors.

use serde::{Deserialize, Serialize};

use sdeconv_core::coeffs::{
    make_constant, make_indicator_interval, make_piecewise_holder, make_step_sigma, make_zeta, CoefficientSpec,
    DiffusionCertificate, Piece,
};
use sdeconv_core::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Descriptor {
    /// `1 + 1_{x≥0}`.
    StepSigma,
    Zeta {
        beta_hat: f64,
        kappa: f64,
    },
    Piecewise {
        #[serde(default)]
        breakpoints: Vec<f64>,
        pieces: Vec<PieceDescriptor>,
        #[serde(default = "one")]
        beta: f64,
        lipschitz: f64,
    },
    Constant {
        value: f64,
    },
    IndicatorInterval {
        a: f64,
        b: f64,
    },
}

fn one() -> f64 {
    1.0
}

fn zero() -> f64 {
    0.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PieceDescriptor {
    Constant {
        value: f64,
    },
    Linear {
        slope: f64,
        intercept: f64,
    },
    Sin {
        amplitude: f64,
        #[serde(default = "one")]
        frequency: f64,
        #[serde(default = "zero")]
        phase: f64,
        #[serde(default = "zero")]
        offset: f64,
    },
}

/// Every kind with its parameter names, for help output.
pub const KINDS: &[(&str, &str)] = &[
    ("step_sigma", ""),
    ("zeta", "beta_hat, kappa"),
    ("piecewise", "breakpoints, pieces, beta, lipschitz"),
    ("constant", "value"),
    ("indicator_interval", "a, b"),
];

impl Descriptor {
    pub fn build(&self) -> Result<CoefficientSpec<f64>> {
        Ok(self.build_with_certificate()?.0)
    }

    /// The spec and, when it is uniformly positive, its diffusion
    /// certificate. Kinds without a dedicated monotone witness get bounds only.
    pub fn build_with_certificate(&self) -> Result<(CoefficientSpec<f64>, Option<DiffusionCertificate<f64>>)> {
        let spec = match self {
            Descriptor::StepSigma => {
                let (s, c) = make_step_sigma();
                return Ok((s, Some(c)));
            }
            Descriptor::Zeta { beta_hat, kappa } => {
                let (s, c) = make_zeta(*beta_hat, *kappa)?;
                return Ok((s, Some(c)));
            }
            Descriptor::Piecewise {
                breakpoints,
                pieces,
                beta,
                lipschitz,
            } => make_piecewise_holder(
                breakpoints.clone(),
                pieces.iter().map(PieceDescriptor::to_piece).collect(),
                *beta,
                *lipschitz,
            )?,
            Descriptor::Constant { value } => make_constant(*value),
            Descriptor::IndicatorInterval { a, b } => make_indicator_interval(*a, *b)?,
        };
        let cert = DiffusionCertificate::bounds_only(&spec).ok();
        Ok((spec, cert))
    }

    /// `1 + 0.1 sin x`, a smooth elliptic diffusion.
    pub fn sin_perturbed(amplitude: f64) -> Self {
        Descriptor::Piecewise {
            breakpoints: Vec::new(),
            pieces: vec![PieceDescriptor::Sin {
                amplitude,
                frequency: 1.0,
                phase: 0.0,
                offset: 1.0,
            }],
            beta: 1.0,
            lipschitz: amplitude.abs(),
        }
    }
}

impl PieceDescriptor {
    fn to_piece(&self) -> Piece<f64> {
        match *self {
            PieceDescriptor::Constant { value } => Piece::Constant(value),
            PieceDescriptor::Linear { slope, intercept } => Piece::Linear { slope, intercept },
            PieceDescriptor::Sin {
                amplitude,
                frequency,
                phase,
                offset,
            } => Piece::Sin {
                amplitude,
                frequency,
                phase,
                offset,
            },
        }
    }
}

/// Parses `key=value` pairs (repeatable, comma separated) into a descriptor
/// of the given kind. Values are read as JSON, falling back to strings.
pub fn from_params(kind: &str, params: &[String]) -> anyhow::Result<Descriptor> {
    let mut obj = serde_json::Map::new();
    obj.insert("kind".into(), serde_json::Value::String(kind.into()));
    for item in params.iter().flat_map(|p| split_top_level(p)) {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| anyhow::anyhow!("parameter `{item}` is not of the form key=value"))?;
        let value = serde_json::from_str(v.trim()).unwrap_or_else(|_| serde_json::Value::String(v.trim().into()));
        obj.insert(k.trim().into(), value);
    }
    let value = serde_json::Value::Object(obj);
    serde_path_to_error::deserialize(value).map_err(|e| {
        let known: Vec<&str> = KINDS.iter().map(|k| k.0).collect();
        anyhow::anyhow!("{e} (known kinds: {})", known.join(", "))
    })
}

/// Splits on commas that are not nested inside brackets or braces.
fn split_top_level(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for c in s.chars() {
        match c {
            '[' | '{' => depth += 1,
            ']' | '}' => depth -= 1,
            ',' if depth == 0 => {
                if !cur.trim().is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                continue;
            }
            _ => {}
        }
        cur.push(c);
    }
    if !cur.trim().is_empty() {
        out.push(cur);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_json_and_params() {
        let d: Descriptor = serde_json::from_str(r#"{"kind":"zeta","beta_hat":0.5,"kappa":0.5}"#).unwrap();
        assert_eq!(d, from_params("zeta", &["beta_hat=0.5,kappa=0.5".into()]).unwrap());
        let p = from_params("piecewise", &["breakpoints=[0, 1], lipschitz=0".into(), r#"pieces=[{"type":"constant","value":0},{"type":"constant","value":1},{"type":"constant","value":0}]"#.into()]).unwrap();
        let spec = p.build().unwrap();
        assert_eq!(spec.eval(0.5), 1.0);
        assert_eq!(spec.l1_norm, Some(1.0));
    }

    #[test]
    fn rejects_unknown() {
        assert!(from_params("nope", &[]).is_err());
        assert!(serde_json::from_str::<Descriptor>(r#"{"kind":"constant","value":1,"extra":2}"#).is_err());
    }

    #[test]
    fn sin_perturbed_is_elliptic() {
        let (s, cert) = Descriptor::sin_perturbed(0.1).build_with_certificate().unwrap();
        let cert = cert.unwrap();
        assert!((s.eval(std::f64::consts::FRAC_PI_2) - 1.1).abs() < 1e-15);
        assert!((cert.sigma_lower - 0.9).abs() < 1e-15);
        assert!(cert.f_sigma.is_none());
    }
}
