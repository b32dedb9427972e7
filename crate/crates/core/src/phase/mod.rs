//! Symplectic structure and Poisson brackets of smeared functionals.
//!
//! [`SymplecticStructure::extract`] reads the canonical pairs off a model's
//! kinetic term (or its declared overrides), [`variational_derivative`]
//! implements the Euler-Lagrange derivative of an integrated density, and
//! [`poisson_bracket`] combines the two into the exact bracket of two
//! smeared functionals. [`localize`] recovers the distributional kernel
//! `{A(x), B(y)}` from a doubly smeared bracket.

mod bracket;
mod symplectic;
mod variation;

pub use bracket::{localize, poisson_bracket, smear_constraint, SmearedConstraint};
pub use symplectic::{PairRule, SymplecticStructure};
pub use variation::{ibp_normal_form, local_variational_derivative, variational_derivative};

use thiserror::Error;

use crate::context::ContextError;
use crate::expr::ExprError;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PhaseError {
    #[error("kinetic coefficient of the `{0}` pairing is not invertible")]
    NonInvertibleKinetic(String),
    #[error("symplectic override `{coord}`/`{mom}` matches no kinetic pairing")]
    OrphanOverride { coord: String, mom: String },
    #[error("`{0}` is not part of any canonical pair")]
    UnpairedField(String),
    #[error("density is not a single-point scalar: {0}")]
    BadDensity(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Context(#[from] ContextError),
}
