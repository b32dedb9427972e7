//! Tensor expressions.
//!
//! An expression is a finite sum of terms; a term is an exact scalar
//! coefficient times a multiset of factors. Factors are field occurrences
//! (with spatial-derivative multi-index and point label), epsilon symbols,
//! structure constants, Kronecker deltas, and delta distributions relating
//! two points.
//!
//! Index contractions are positional: a label occurring twice in a term is
//! summed, a label occurring once is free. Every term of an expression must
//! expose the same free labels. Equality of canonicalized expressions is
//! structural; see [`canon`] for the normal form.

pub mod calculus;
pub mod canon;
pub mod render;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::context::{Context, FieldId};
use crate::index::{FamilyId, Index, IndexLabel, Point, Variance};
use crate::scalar::ScalarCoeff;

/// Highest delta-distribution derivative order kept before failing hard.
pub const DELTA_DERIV_CAP: usize = 2;

/// One occurrence of a field: slot indices, derivative multi-index (a sorted
/// multiset of spatial indices), and the spatial point it sits at.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FieldOccurrence {
    pub field: FieldId,
    pub indices: Vec<Index>,
    pub derivs: Vec<Index>,
    pub point: Point,
}

/// Multiplicative factor of a term.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Factor {
    Field(FieldOccurrence),
    /// Totally antisymmetric symbol; arity equals the family dimension.
    Epsilon { indices: Vec<Index> },
    /// Totally antisymmetric structure constants of the gauge algebra.
    Structure { indices: [Index; 3] },
    /// Kronecker delta within one family.
    Kron { a: Index, b: Index },
    /// `derivs` act on the `left` point of delta(left - right).
    DeltaDist {
        left: Point,
        right: Point,
        derivs: Vec<Index>,
    },
}

impl Factor {
    pub fn family_of_epsilon(&self) -> Option<FamilyId> {
        match self {
            Factor::Epsilon { indices } => indices.first().map(|i| i.family),
            _ => None,
        }
    }

    /// Labels in deterministic scan order (slot indices before derivatives).
    pub(crate) fn labels(&self) -> Vec<&Index> {
        match self {
            Factor::Field(f) => f.indices.iter().chain(f.derivs.iter()).collect(),
            Factor::Epsilon { indices } => indices.iter().collect(),
            Factor::Structure { indices } => indices.iter().collect(),
            Factor::Kron { a, b } => vec![a, b],
            Factor::DeltaDist { derivs, .. } => derivs.iter().collect(),
        }
    }

    pub(crate) fn map_labels(&self, f: &mut impl FnMut(&Index) -> Index) -> Factor {
        match self {
            Factor::Field(occ) => Factor::Field(FieldOccurrence {
                field: occ.field,
                indices: occ.indices.iter().map(&mut *f).collect(),
                derivs: occ.derivs.iter().map(&mut *f).collect(),
                point: occ.point,
            }),
            Factor::Epsilon { indices } => Factor::Epsilon {
                indices: indices.iter().map(&mut *f).collect(),
            },
            Factor::Structure { indices } => {
                let v: Vec<Index> = indices.iter().map(&mut *f).collect();
                Factor::Structure {
                    indices: [v[0].clone(), v[1].clone(), v[2].clone()],
                }
            }
            Factor::Kron { a, b } => Factor::Kron { a: f(a), b: f(b) },
            Factor::DeltaDist {
                left,
                right,
                derivs,
            } => Factor::DeltaDist {
                left: *left,
                right: *right,
                derivs: derivs.iter().map(&mut *f).collect(),
            },
        }
    }

    pub(crate) fn points(&self) -> Vec<Point> {
        match self {
            Factor::Field(f) => vec![f.point],
            Factor::DeltaDist { left, right, .. } => vec![*left, *right],
            _ => vec![],
        }
    }

    pub(crate) fn map_points(&self, f: &mut impl FnMut(Point) -> Point) -> Factor {
        match self {
            Factor::Field(occ) => Factor::Field(FieldOccurrence {
                point: f(occ.point),
                ..occ.clone()
            }),
            Factor::DeltaDist {
                left,
                right,
                derivs,
            } => Factor::DeltaDist {
                left: f(*left),
                right: f(*right),
                derivs: derivs.clone(),
            },
            other => other.clone(),
        }
    }
}

/// Coefficient times factors. The factor list of a canonical term is sorted.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Term {
    pub coeff: ScalarCoeff,
    pub factors: Vec<Factor>,
}

impl Term {
    pub fn new(coeff: ScalarCoeff, factors: Vec<Factor>) -> Term {
        Term { coeff, factors }
    }

    pub fn scalar(coeff: ScalarCoeff) -> Term {
        Term {
            coeff,
            factors: Vec::new(),
        }
    }
}

/// Free-index signature: free label -> (family, rendering variance).
pub type FreeSig = BTreeMap<String, (FamilyId, Variance)>;

/// Whether point labels are meaningful (kernels) or bound and renamable
/// (bodies of integrated functionals).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointPolicy {
    Fixed,
    Bound,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExprError {
    #[error("field `{field}` expects {expected} indices, found {got}")]
    Arity {
        field: String,
        expected: usize,
        got: usize,
    },
    #[error("index `{label}` used with conflicting families `{fam_a}` and `{fam_b}`")]
    FamilyClash {
        label: String,
        fam_a: String,
        fam_b: String,
    },
    #[error("index `{0}` occurs more than twice in a term")]
    LabelOveruse(String),
    #[error("epsilon over `{family}` must carry exactly {dim} indices, found {got}")]
    EpsilonArity {
        family: String,
        dim: usize,
        got: usize,
    },
    #[error("family `{0}` does not carry an epsilon symbol")]
    EpsilonNotAllowed(String),
    #[error("family `{0}` does not carry structure constants")]
    StructureNotAllowed(String),
    #[error("trace of a Kronecker delta over symbolic-dimension family `{0}`")]
    SymbolicTrace(String),
    #[error("delta distribution carries more than {cap} derivatives", cap = DELTA_DERIV_CAP)]
    DeltaDerivCap,
    #[error("delta distribution at coincident points")]
    CoincidentDelta,
    #[error("derivative index must belong to the spatial family, found `{0}`")]
    NonSpatialDerivative(String),
    #[error("terms have mismatched free indices: `{0}` vs `{1}`")]
    SigMismatch(String, String),
    #[error("no spatial family declared")]
    NoSpatialFamily,
    #[error("substitution replaces slot `{0}` but the replacement lacks that free index")]
    BadSubstitution(String),
}

/// Canonicalized sum of terms plus the cached free-index signature.
#[derive(Debug, Clone)]
pub struct Expression {
    terms: Vec<Term>,
    sig: FreeSig,
}

// Equality ignores the rendering variance stored in the signature: under a
// delta metric it is cosmetic and may legitimately differ between equal
// expressions built along different routes.
impl PartialEq for Expression {
    fn eq(&self, other: &Self) -> bool {
        self.terms == other.terms
            && self.sig.len() == other.sig.len()
            && self
                .sig
                .iter()
                .zip(other.sig.iter())
                .all(|((la, (fa, _)), (lb, (fb, _)))| la == lb && fa == fb)
    }
}

impl Eq for Expression {}

impl std::hash::Hash for Expression {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.terms.hash(state);
        for (label, (fam, _)) in &self.sig {
            label.hash(state);
            fam.hash(state);
        }
    }
}

impl Expression {
    pub fn zero() -> Expression {
        Expression {
            terms: Vec::new(),
            sig: FreeSig::new(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn free_sig(&self) -> &FreeSig {
        &self.sig
    }

    /// Builds and canonicalizes. Point labels are treated as fixed.
    pub fn from_terms(ctx: &Context, terms: Vec<Term>) -> Result<Expression, ExprError> {
        Expression::from_terms_policy(ctx, terms, PointPolicy::Fixed)
    }

    pub fn from_terms_policy(
        ctx: &Context,
        terms: Vec<Term>,
        policy: PointPolicy,
    ) -> Result<Expression, ExprError> {
        canon::canonicalize(ctx, terms, policy)
    }

    /// Re-runs canonicalization; the result must be identical (idempotence).
    pub fn canonicalize(&self, ctx: &Context) -> Result<Expression, ExprError> {
        canon::canonicalize(ctx, self.terms.clone(), PointPolicy::Fixed)
    }

    pub fn scale(&self, c: &ScalarCoeff) -> Expression {
        if c.is_zero() {
            return Expression::zero();
        }
        let mut terms: Vec<Term> = self
            .terms
            .iter()
            .map(|t| Term::new(t.coeff.mul(c), t.factors.clone()))
            .collect();
        // Canonical term order sorts on the coefficient too, so scaling can
        // reorder; keep the list sorted.
        terms.sort();
        Expression {
            terms,
            sig: self.sig.clone(),
        }
    }

    pub fn neg(&self) -> Expression {
        self.scale(&ScalarCoeff::from_int(-1))
    }

    pub fn add(&self, other: &Expression, ctx: &Context) -> Result<Expression, ExprError> {
        self.add_policy(other, ctx, PointPolicy::Fixed)
    }

    pub(crate) fn add_policy(
        &self,
        other: &Expression,
        ctx: &Context,
        policy: PointPolicy,
    ) -> Result<Expression, ExprError> {
        let families_match = self.sig.len() == other.sig.len()
            && self
                .sig
                .iter()
                .zip(other.sig.iter())
                .all(|((la, (fa, _)), (lb, (fb, _)))| la == lb && fa == fb);
        if !self.is_zero() && !other.is_zero() && !families_match {
            return Err(ExprError::SigMismatch(
                render::sig_string(ctx, &self.sig),
                render::sig_string(ctx, &other.sig),
            ));
        }
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Expression::from_terms_policy(ctx, terms, policy)
    }

    pub fn sub(&self, other: &Expression, ctx: &Context) -> Result<Expression, ExprError> {
        self.add(&other.neg(), ctx)
    }

    pub fn render(&self, ctx: &Context) -> String {
        render::render_expression(ctx, self)
    }

    pub(crate) fn from_canonical_parts(terms: Vec<Term>, sig: FreeSig) -> Expression {
        Expression { terms, sig }
    }
}

/// Occurrence counts of every label in a term, with family consistency
/// enforced. Returns label -> (family, count, first slot variance).
pub(crate) fn label_census(
    ctx: &Context,
    term: &Term,
) -> Result<BTreeMap<IndexLabel, (FamilyId, usize, Variance)>, ExprError> {
    let mut census: BTreeMap<IndexLabel, (FamilyId, usize, Variance)> = BTreeMap::new();
    let mut record = |idx: &Index, var: Variance| -> Result<(), ExprError> {
        match census.get_mut(&idx.label) {
            None => {
                census.insert(idx.label.clone(), (idx.family, 1, var));
                Ok(())
            }
            Some((fam, count, _)) => {
                if *fam != idx.family {
                    return Err(ExprError::FamilyClash {
                        label: render::label_debug(&idx.label),
                        fam_a: ctx.family(*fam).name.clone(),
                        fam_b: ctx.family(idx.family).name.clone(),
                    });
                }
                *count += 1;
                if *count > 2 {
                    return Err(ExprError::LabelOveruse(render::label_debug(&idx.label)));
                }
                Ok(())
            }
        }
    };
    for factor in &term.factors {
        match factor {
            Factor::Field(occ) => {
                let decl = ctx.field(occ.field);
                for (pos, idx) in occ.indices.iter().enumerate() {
                    let var = decl
                        .signature
                        .get(pos)
                        .map(|s| s.1)
                        .unwrap_or(Variance::Down);
                    record(idx, var)?;
                }
                for idx in &occ.derivs {
                    record(idx, Variance::Down)?;
                }
            }
            _ => {
                for idx in factor.labels() {
                    record(idx, Variance::Down)?;
                }
            }
        }
    }
    Ok(census)
}
