//! Structural checks on the built-in model files: inventories, component
//! counts, scalar-density Hamiltonians, and the exact divergence identities
//! that tie the two constraint generations of the topological models
//! together.

use bfham_core::dsl::parse_expression;
use bfham_core::models::{builtin, BUILTIN_NAMES};
use bfham_core::{DimPoly, FieldKind, ModelDef, PointPolicy};

fn coordinate_components(model: &ModelDef) -> DimPoly {
    let mut total = DimPoly::zero();
    for (id, decl) in model.ctx.fields() {
        if decl.kind == FieldKind::Coordinate {
            total = total.add(&model.ctx.field_components(id));
        }
    }
    total
}

fn constraint_components(model: &ModelDef, names: &[&str]) -> DimPoly {
    let mut total = DimPoly::zero();
    for name in names {
        let c = model.constraint(name).unwrap_or_else(|| {
            panic!("model `{}` has no constraint `{}`", model.name, name)
        });
        total = total.add(&c.components(&model.ctx));
    }
    total
}

#[test]
fn phase_space_sizes() {
    let sc = builtin("second_chern").unwrap();
    assert_eq!(coordinate_components(&sc).as_constant(), Some(18));

    let euler = builtin("euler").unwrap();
    assert_eq!(coordinate_components(&euler).as_constant(), Some(18));

    // 1 + 3 + 3 + 3 coordinate components per group generator.
    let expected = DimPoly::parse("10*N^2 - 10").unwrap();
    let bf = builtin("bf_ym").unwrap();
    assert_eq!(coordinate_components(&bf), expected);
    let mart = builtin("martellini").unwrap();
    assert_eq!(coordinate_components(&mart), expected);
}

#[test]
fn constraint_multiplicities() {
    let sc = builtin("second_chern").unwrap();
    let total = constraint_components(&sc, &["phi", "psi", "Phi", "Psi"]);
    assert_eq!(total.as_constant(), Some(24));

    let bf = builtin("bf_ym").unwrap();
    assert_eq!(
        constraint_components(&bf, &["gamma0", "gamma"]),
        DimPoly::parse("2*N^2 - 2").unwrap()
    );
    assert_eq!(
        constraint_components(&bf, &["chi", "chi0", "chiij", "phiij"]),
        DimPoly::parse("12*N^2 - 12").unwrap()
    );

    let mart = builtin("martellini").unwrap();
    assert_eq!(
        constraint_components(&mart, &["gamma0", "gamma"]),
        DimPoly::parse("2*N^2 - 2").unwrap()
    );
    assert_eq!(
        constraint_components(&mart, &["phi", "phi0", "phiij", "psi0"]),
        DimPoly::parse("12*N^2 - 12").unwrap()
    );
}

#[test]
fn hamiltonians_are_scalar_densities() {
    for name in BUILTIN_NAMES {
        let model = builtin(name).unwrap();
        assert!(
            model.hamiltonian.free_sig().is_empty(),
            "hamiltonian of `{}` has free indices",
            name
        );
        assert!(!model.hamiltonian.is_zero());
    }
}

#[test]
fn kinetic_pairings() {
    let pairs = |model: &ModelDef| -> Vec<(String, String)> {
        model
            .kinetic
            .iter()
            .map(|k| {
                (
                    model.ctx.field(k.coord).name.clone(),
                    model.ctx.field(k.mom).name.clone(),
                )
            })
            .collect()
    };

    let sc = builtin("second_chern").unwrap();
    assert_eq!(
        pairs(&sc),
        [("Ups", "pi"), ("w", "P")].map(|(a, b)| (a.into(), b.into()))
    );

    // The Euler pairing swaps the momenta relative to second_chern.
    let euler = builtin("euler").unwrap();
    assert_eq!(
        pairs(&euler),
        [("Ups", "P"), ("w", "pi")].map(|(a, b)| (a.into(), b.into()))
    );

    let bf = builtin("bf_ym").unwrap();
    assert_eq!(
        pairs(&bf),
        [("A0", "P0"), ("A", "P"), ("B0", "Q0"), ("B", "Q")]
            .map(|(a, b)| (a.into(), b.into()))
    );
}

/// The divergences of the one-forms of second-stage constraints reproduce
/// the Gauss-law pair up to terms linear in the constraints themselves, as
/// an exact algebraic identity. This pins down the relative signs inside
/// the constraint bodies and is the root of the six reducibility relations.
#[test]
fn divergence_identities() {
    for model_name in ["second_chern", "euler"] {
        let m = builtin(model_name).unwrap();
        for (label, src) in [
            (
                "Phi",
                "d_a Phi(i,a) - phi(i) + eps[so3](i,j,k) w(j,a) Psi(k,a) \
                 + eps[so3](i,j,k) Ups(j,a) Phi(k,a)",
            ),
            (
                "Psi",
                "d_a Psi(i,a) - psi(i) + eps[so3](i,j,k) Ups(j,a) Psi(k,a) \
                 - eps[so3](i,j,k) w(j,a) Phi(k,a)",
            ),
        ] {
            let e = parse_expression(&m.ctx, &m.constraints, src, PointPolicy::Fixed)
                .unwrap_or_else(|d| panic!("{model_name}/{label}: {d}"));
            assert!(
                e.is_zero(),
                "divergence identity for {label} fails in `{model_name}`: {}",
                e.render(&m.ctx)
            );
        }
    }
}
