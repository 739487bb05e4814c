//! Numerical kernels for calibrated maps between Riemannian manifolds.
//!
//! * [`exterior`]: constant-coefficient exterior algebra (wedge, interior
//!   product, metric inner products, Hodge star, pullback).
//! * [`energy`]: singular-value energy densities `|A|_p`, `sigma_{p,q}`,
//!   `tau_m`, `tau_tilde`.
//! * [`models`]: the flat special-holonomy model forms and the pointwise
//!   calibration inequality for the identity map.
//! * [`verify`]: mixed-form evaluation and the remaining pointwise
//!   calibration checks (Lichnerowicz, Wirtinger, fibrations, AM-GM).
//! * [`oracle`]: brute-force Leibniz evaluations for cross-checks.
//! * [`torus`]: flat-torus experiments: energy quadrature, descent,
//!   homotopy invariance, cohomological bound, intersection invariants.

pub mod energy;
pub mod error;
pub mod exterior;
pub mod linalg;
pub mod models;
pub mod oracle;
pub mod sampling;
pub mod torus;
pub mod verify;

pub use energy::{LinearMapData, SingularSpectrum};
pub use error::{CalibraError, Result};
pub use exterior::{KForm, Metric, MultiIndex, Orientation};
pub use models::{ModelForm, ModelTag};
pub use torus::TorusMapSpec;
pub use verify::MixedForm;
