//! Parsed model definitions.
//!
//! A model couples a declaration [`Context`] with the dynamical data the
//! analysis consumes: kinetic pairings, optional symplectic overrides, the
//! constraint set and the total Hamiltonian density (constraint references
//! already inlined).

use crate::context::{Context, FieldId};
use crate::dimpoly::DimPoly;
use crate::expr::Expression;
use crate::index::{FamilyId, Variance};
use crate::scalar::ScalarCoeff;

/// Source position, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

impl Span {
    pub fn new(line: u32, col: u32) -> Span {
        Span { line, col }
    }
}

/// A positioned error or lint message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub span: Span,
    pub message: String,
}

impl Diagnostic {
    pub fn new(span: Span, message: impl Into<String>) -> Diagnostic {
        Diagnostic {
            span,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}:{}: {}",
            self.span.line, self.span.col, self.message
        )
    }
}

/// Which symplectic normalization the analysis uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Convention {
    /// Derive every bracket coefficient from the kinetic term.
    #[default]
    Kinetic,
    /// Use explicit `symplectic` override lines where given.
    Paper,
}

/// One `kinetic` line: `coeff dt coord(...) mom(...)`, a full contraction
/// of the coordinate's slots against the momentum's.
///
/// Equality is structural and ignores the source span.
#[derive(Debug, Clone)]
pub struct KineticTerm {
    pub coeff: ScalarCoeff,
    pub coord: FieldId,
    pub coord_labels: Vec<String>,
    pub mom: FieldId,
    pub mom_labels: Vec<String>,
    /// For coordinate slot `k`, the position of its contraction partner in
    /// the momentum's slot list.
    pub slot_map: Vec<usize>,
    pub span: Span,
}

impl PartialEq for KineticTerm {
    fn eq(&self, other: &Self) -> bool {
        self.coeff == other.coeff
            && self.coord == other.coord
            && self.coord_labels == other.coord_labels
            && self.mom == other.mom
            && self.mom_labels == other.mom_labels
            && self.slot_map == other.slot_map
    }
}

/// One `symplectic` line: replaces the kinetic-derived bracket coefficient
/// of an existing pair when the paper convention is selected.
///
/// Equality is structural and ignores the source span.
#[derive(Debug, Clone)]
pub struct SymplecticOverride {
    pub coord: FieldId,
    pub mom: FieldId,
    pub coeff: ScalarCoeff,
    pub span: Span,
}

impl PartialEq for SymplecticOverride {
    fn eq(&self, other: &Self) -> bool {
        self.coord == other.coord && self.mom == other.mom && self.coeff == other.coeff
    }
}

/// A named constraint with an ordered free-label list and a single-point
/// scalar-density body whose free signature matches those labels.
///
/// Equality is structural and ignores the source span.
#[derive(Debug, Clone)]
pub struct ConstraintDef {
    pub name: String,
    pub labels: Vec<String>,
    /// Declared antisymmetric label pair, 0-based positions into `labels`.
    pub antisym: Option<(usize, usize)>,
    pub body: Expression,
    pub span: Span,
}

impl PartialEq for ConstraintDef {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.labels == other.labels
            && self.antisym == other.antisym
            && self.body == other.body
    }
}

impl ConstraintDef {
    /// Families and rendering variances of the free slots, in label order.
    pub fn slot_sig(&self) -> Vec<(FamilyId, Variance)> {
        self.labels
            .iter()
            .map(|l| {
                let (fam, var) = self.body.free_sig()[l];
                (fam, var)
            })
            .collect()
    }

    /// Number of independent components, as a polynomial in N.
    pub fn components(&self, ctx: &Context) -> DimPoly {
        let mut total = DimPoly::constant(1);
        for (pos, l) in self.labels.iter().enumerate() {
            let (fam, _) = self.body.free_sig()[l];
            let d = ctx.dim(fam).clone();
            match self.antisym {
                Some((p, q)) if pos == q && p != q => {
                    // Second member of the antisymmetric pair: replace the
                    // combined d*d factor by d*(d-1)/2.
                    let dm1 = d.sub(&DimPoly::constant(1));
                    total = total
                        .mul(&dm1)
                        .div_exact(2)
                        .expect("antisymmetric pair count is integral");
                }
                _ => total = total.mul(&d),
            }
        }
        total
    }
}

/// A complete model definition.
#[derive(Debug, Clone)]
pub struct ModelDef {
    pub name: String,
    pub ctx: Context,
    pub convention: Convention,
    pub kinetic: Vec<KineticTerm>,
    pub overrides: Vec<SymplecticOverride>,
    pub constraints: Vec<ConstraintDef>,
    /// Total Hamiltonian density with constraint references expanded.
    pub hamiltonian: Expression,
}

impl ModelDef {
    pub fn constraint(&self, name: &str) -> Option<&ConstraintDef> {
        self.constraints.iter().find(|c| c.name == name)
    }
}

impl PartialEq for ModelDef {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.ctx == other.ctx
            && self.convention == other.convention
            && self.kinetic == other.kinetic
            && self.overrides == other.overrides
            && self.constraints == other.constraints
            && self.hamiltonian == other.hamiltonian
    }
}
