//! Small shared contexts for unit tests.

use crate::context::{Context, FieldDecl, FieldId, FieldKind};
use crate::dimpoly::DimPoly;
use crate::expr::{Factor, FieldOccurrence};
use crate::index::{FamilyId, Index, IndexFamily, Point, Variance};

/// One three-dimensional epsilon-capable family (doubling as the spatial
/// family) with two vector fields `V` and `W`.
pub(crate) fn so3_context() -> (Context, FamilyId) {
    let mut ctx = Context::new();
    let fam = ctx
        .add_family(IndexFamily {
            name: "so3".into(),
            dim: DimPoly::constant(3),
            has_epsilon: true,
            has_structure: false,
            letters: vec!["i", "j", "k", "l", "m", "n"]
                .into_iter()
                .map(String::from)
                .collect(),
        })
        .unwrap();
    ctx.set_spatial_family(fam);
    for name in ["V", "W"] {
        ctx.add_field(FieldDecl {
            name: name.into(),
            kind: FieldKind::Coordinate,
            signature: vec![(fam, Variance::Down)],
            antisym: None,
            weight: 0,
        })
        .unwrap();
    }
    (ctx, fam)
}

/// Bare field occurrence at the base point with no derivatives.
pub(crate) fn occ(field: FieldId, indices: &[Index]) -> Factor {
    Factor::Field(FieldOccurrence {
        field,
        indices: indices.to_vec(),
        derivs: Vec::new(),
        point: Point::BASE,
    })
}
