//! Independent numerical cross-checks.
//!
//! Nothing in this module reuses the symbolic rewriting pipeline: terms are
//! evaluated component by component, summing dummy indices explicitly, so
//! that agreement with the canonicalizer or with a lattice functional is
//! evidence rather than tautology.

pub mod eval;
pub mod lattice;

pub use eval::{eval_expression, eval_terms, su2_structure, EvalEnv, OracleError};
pub use lattice::{rank_check, BracketPair, FieldGradient, Lattice, LatticeCheck, RankVerdict};
