//! Euler–Maruyama approximation of scalar SDEs
//!
//! ```text
//! dX_t = b(X_t) dt + σ(X_t) dW_t,   X_0 = x0,  t ∈ [0, T]
//! ```
//!
//! with drift and diffusion coefficients that may jump, together with the
//! machinery needed to measure its strong error empirically: coefficient
//! regularity certificates, seedable Brownian lattices, coupled EM runs across
//! resolutions, the removal-of-drift transform, the Yamada–Watanabe mollifier
//! pair and the Monte Carlo estimators used to check each supporting bound.
//!
//! All numerics are generic over [`Real`] (`f32` or `f64`). The `*F64`
//! aliases below are what the harness uses.

pub mod brownian;
pub mod coeffs;
pub mod drift_removal;
pub mod em;
pub mod error;
pub mod estimators;
pub mod normal;
pub mod quadrature;
pub mod reduce;
pub mod scalar;
pub mod yamada_watanabe;

pub use brownian::{BrownianLattice, BrownianSource};
pub use coeffs::{CoefficientSpec, DiffusionCertificate, Piece, SingularSet};
pub use drift_removal::DriftRemovalTransform;
pub use em::EmTrajectory;
pub use error::{Error, Result};
pub use estimators::{ErrorReport, ErrorRow, RateFit, RateModel, TightnessSchedule};
pub use scalar::Real;
pub use yamada_watanabe::MollifierPair;

pub type CoefficientSpecF64 = CoefficientSpec<f64>;
pub type DiffusionCertificateF64 = DiffusionCertificate<f64>;
pub type SingularSetF64 = SingularSet<f64>;
pub type BrownianLatticeF64 = BrownianLattice<f64>;
pub type EmTrajectoryF64 = EmTrajectory<f64>;
pub type DriftRemovalTransformF64 = DriftRemovalTransform<f64>;
pub type MollifierPairF64 = MollifierPair<f64>;
pub type TightnessScheduleF64 = TightnessSchedule<f64>;
pub type ErrorReportF64 = ErrorReport<f64>;

pub type CoefficientSpecF32 = CoefficientSpec<f32>;
pub type BrownianLatticeF32 = BrownianLattice<f32>;
pub type EmTrajectoryF32 = EmTrajectory<f32>;
