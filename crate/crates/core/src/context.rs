//! Symbol context: the families, fields and constants an expression may
//! reference.
//!
//! Expressions store compact ids; every structural operation (arity checks,
//! antisymmetry normalization, epsilon expansion, rendering) resolves them
//! through a `Context`. Analyses extend a model's context with probe and
//! smearing fields, so the context is cheap to clone.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::dimpoly::DimPoly;
use crate::index::{FamilyId, IndexFamily, Variance};
use crate::scalar::ConstSym;

/// Role a field plays in the phase space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FieldKind {
    Coordinate,
    Momentum,
    Multiplier,
    /// Smearing function or probe introduced by analyses, never part of a
    /// model file.
    Parameter,
}

/// Handle into a [`Context`] field table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FieldId(pub u16);

/// A declared field: name, role, index signature and optional pair
/// antisymmetry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldDecl {
    pub name: String,
    pub kind: FieldKind,
    /// Ordered slots: family and rendering variance.
    pub signature: Vec<(FamilyId, Variance)>,
    /// At most one antisymmetric slot pair (0-based positions, same family).
    pub antisym: Option<(usize, usize)>,
    /// Density weight, informational.
    pub weight: i8,
}

impl FieldDecl {
    pub fn arity(&self) -> usize {
        self.signature.len()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ContextError {
    #[error("duplicate family `{0}`")]
    DuplicateFamily(String),
    #[error("duplicate field `{0}`")]
    DuplicateField(String),
    #[error("family `{0}`: epsilon requires a concrete dimension")]
    EpsilonSymbolicDim(String),
    #[error("field `{0}`: antisymmetric slots must be distinct positions of one family")]
    BadAntisym(String),
    #[error("field `{0}`: antisymmetric slot out of range")]
    AntisymRange(String),
}

/// Families, fields and constants visible to expressions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Context {
    families: Vec<IndexFamily>,
    fields: Vec<FieldDecl>,
    by_family_name: BTreeMap<String, FamilyId>,
    by_field_name: BTreeMap<String, FieldId>,
    constants: Vec<ConstSym>,
    spatial: Option<FamilyId>,
}

impl Context {
    pub fn new() -> Context {
        Context::default()
    }

    pub fn add_family(&mut self, fam: IndexFamily) -> Result<FamilyId, ContextError> {
        if self.by_family_name.contains_key(&fam.name) {
            return Err(ContextError::DuplicateFamily(fam.name.clone()));
        }
        if fam.has_epsilon && fam.dim.as_constant().is_none() {
            return Err(ContextError::EpsilonSymbolicDim(fam.name.clone()));
        }
        let id = FamilyId(self.families.len() as u16);
        self.by_family_name.insert(fam.name.clone(), id);
        self.families.push(fam);
        Ok(id)
    }

    pub fn add_field(&mut self, decl: FieldDecl) -> Result<FieldId, ContextError> {
        if self.by_field_name.contains_key(&decl.name) {
            return Err(ContextError::DuplicateField(decl.name.clone()));
        }
        if let Some((a, b)) = decl.antisym {
            if a >= decl.signature.len() || b >= decl.signature.len() {
                return Err(ContextError::AntisymRange(decl.name.clone()));
            }
            if a == b || decl.signature[a].0 != decl.signature[b].0 {
                return Err(ContextError::BadAntisym(decl.name.clone()));
            }
        }
        let id = FieldId(self.fields.len() as u16);
        self.by_field_name.insert(decl.name.clone(), id);
        self.fields.push(decl);
        Ok(id)
    }

    pub fn declare_constant(&mut self, sym: ConstSym) {
        if !self.constants.contains(&sym) {
            self.constants.push(sym);
        }
    }

    /// Marks the family whose labels may appear as spatial derivatives.
    pub fn set_spatial_family(&mut self, id: FamilyId) {
        self.spatial = Some(id);
    }

    pub fn spatial_family(&self) -> Option<FamilyId> {
        self.spatial
    }

    pub fn family(&self, id: FamilyId) -> &IndexFamily {
        &self.families[id.0 as usize]
    }

    pub fn field(&self, id: FieldId) -> &FieldDecl {
        &self.fields[id.0 as usize]
    }

    pub fn family_id(&self, name: &str) -> Option<FamilyId> {
        self.by_family_name.get(name).copied()
    }

    pub fn field_id(&self, name: &str) -> Option<FieldId> {
        self.by_field_name.get(name).copied()
    }

    pub fn families(&self) -> impl Iterator<Item = (FamilyId, &IndexFamily)> {
        self.families
            .iter()
            .enumerate()
            .map(|(i, f)| (FamilyId(i as u16), f))
    }

    pub fn fields(&self) -> impl Iterator<Item = (FieldId, &FieldDecl)> {
        self.fields
            .iter()
            .enumerate()
            .map(|(i, f)| (FieldId(i as u16), f))
    }

    pub fn constants(&self) -> &[ConstSym] {
        &self.constants
    }

    pub fn has_constant(&self, sym: ConstSym) -> bool {
        self.constants.contains(&sym)
    }

    /// The unique structure-constant family, if any.
    pub fn structure_family(&self) -> Option<FamilyId> {
        self.families()
            .find(|(_, f)| f.has_structure)
            .map(|(id, _)| id)
    }

    /// Dimension of a family as a polynomial in N.
    pub fn dim(&self, id: FamilyId) -> &DimPoly {
        &self.family(id).dim
    }

    /// Number of independent components of a field: the product of slot
    /// dimensions, with an antisymmetric pair contributing d*(d-1)/2.
    pub fn field_components(&self, id: FieldId) -> DimPoly {
        let decl = self.field(id);
        let mut total = DimPoly::constant(1);
        for (pos, (fam, _)) in decl.signature.iter().enumerate() {
            if let Some((a, b)) = decl.antisym {
                if pos == b {
                    continue;
                }
                if pos == a {
                    let d = self.dim(*fam);
                    let pairs = d
                        .mul(&d.sub(&DimPoly::constant(1)))
                        .div_exact(2)
                        .expect("d*(d-1) is even");
                    total = total.mul(&pairs);
                    continue;
                }
            }
            total = total.mul(self.dim(*fam));
        }
        total
    }

    /// Registers a fresh parameter field (smearing function or probe),
    /// deriving a name from `base` that does not collide with existing
    /// fields.
    pub fn add_parameter(
        &mut self,
        base: &str,
        signature: Vec<(FamilyId, Variance)>,
        antisym: Option<(usize, usize)>,
    ) -> FieldId {
        let mut name = base.to_string();
        let mut k = 1;
        while self.by_field_name.contains_key(&name) {
            name = format!("{}{}", base, k);
            k += 1;
        }
        self.add_field(FieldDecl {
            name,
            kind: FieldKind::Parameter,
            signature,
            antisym,
            weight: 0,
        })
        .expect("fresh name cannot collide")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space() -> IndexFamily {
        IndexFamily {
            name: "space".into(),
            dim: DimPoly::constant(3),
            has_epsilon: true,
            has_structure: false,
            letters: vec!["a".into(), "b".into(), "c".into()],
        }
    }

    #[test]
    fn epsilon_needs_concrete_dim() {
        let mut ctx = Context::new();
        let err = ctx
            .add_family(IndexFamily {
                name: "adj".into(),
                dim: DimPoly::parse("N^2-1").unwrap(),
                has_epsilon: true,
                has_structure: true,
                letters: vec![],
            })
            .unwrap_err();
        assert_eq!(err, ContextError::EpsilonSymbolicDim("adj".into()));
    }

    #[test]
    fn antisym_pair_component_count() {
        let mut ctx = Context::new();
        let sp = ctx.add_family(space()).unwrap();
        let adj = ctx
            .add_family(IndexFamily {
                name: "adj".into(),
                dim: DimPoly::parse("N^2-1").unwrap(),
                has_epsilon: false,
                has_structure: true,
                letters: vec![],
            })
            .unwrap();
        let b2 = ctx
            .add_field(FieldDecl {
                name: "B2".into(),
                kind: FieldKind::Coordinate,
                signature: vec![
                    (adj, Variance::Up),
                    (sp, Variance::Down),
                    (sp, Variance::Down),
                ],
                antisym: Some((1, 2)),
                weight: 0,
            })
            .unwrap();
        // (N^2-1) * 3 independent components.
        assert_eq!(ctx.field_components(b2).eval(2), 9);
        assert_eq!(ctx.field_components(b2).to_string(), "3*N^2-3");
    }

    #[test]
    fn parameter_names_avoid_collisions() {
        let mut ctx = Context::new();
        let sp = ctx.add_family(space()).unwrap();
        ctx.add_field(FieldDecl {
            name: "lam".into(),
            kind: FieldKind::Multiplier,
            signature: vec![(sp, Variance::Up)],
            antisym: None,
            weight: 0,
        })
        .unwrap();
        let p = ctx.add_parameter("lam", vec![(sp, Variance::Up)], None);
        assert_eq!(ctx.field(p).name, "lam1");
    }
}
