//! Symbolic Hamiltonian analysis for first-order gauge field theories.
//!
//! The crate builds phase-space models from a small declaration language,
//! computes Poisson brackets of smeared functionals exactly, classifies
//! constraints, detects reducibility relations, counts physical degrees of
//! freedom, and derives the gauge transformations generated by first-class
//! constraints. All coefficient arithmetic is exact (Gaussian rationals
//! times formal constant monomials); a finite-difference evaluator provides
//! an independent numerical cross-check of every symbolic bracket.

pub mod context;
pub mod dimpoly;
pub mod dsl;
pub mod expr;
pub mod index;
pub mod models;
pub mod oracle;
pub mod phase;
pub mod scalar;

#[cfg(test)]
pub(crate) mod test_fixtures;

pub use context::{Context, ContextError, FieldDecl, FieldId, FieldKind};
pub use dimpoly::{DimPoly, DimPolyError};
pub use dsl::{
    ConstraintDef, Convention, Diagnostic, KineticTerm, ModelDef, Span, SymplecticOverride,
};
pub use expr::{Expression, ExprError, Factor, FieldOccurrence, FreeSig, PointPolicy, Term};
pub use index::{FamilyId, Index, IndexFamily, IndexLabel, Point, Variance};
pub use models::{builtin, builtin_source, BuiltinError, BUILTIN_NAMES};
pub use phase::{
    ibp_normal_form, local_variational_derivative, localize, poisson_bracket, smear_constraint,
    PairRule, PhaseError, SmearedConstraint, SymplecticStructure, variational_derivative,
};
pub use oracle::{BracketPair, EvalEnv, Lattice, LatticeCheck, OracleError, RankVerdict};
pub use scalar::{ConstSym, Monomial, ScalarCoeff};
