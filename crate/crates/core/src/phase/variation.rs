//! Functional derivatives of densities and the integration-by-parts
//! normal form for integrands.

use crate::context::{Context, FieldId, FieldKind};
use crate::expr::calculus::term_derivative;
use crate::expr::{Expression, Factor, PointPolicy, Term};
use crate::index::{Index, Point};

use super::PhaseError;

fn slot_deltas(
    ctx: &Context,
    field: FieldId,
    slots: &[&str],
    occ_indices: &[Index],
) -> Vec<Factor> {
    let sig = &ctx.field(field).signature;
    slots
        .iter()
        .zip(occ_indices)
        .zip(sig)
        .map(|((name, idx), (fam, _))| Factor::Kron {
            a: Index::named(*fam, name),
            b: idx.clone(),
        })
        .collect()
}

fn check_slots(ctx: &Context, field: FieldId, slots: &[&str]) -> Result<(), PhaseError> {
    let decl = ctx.field(field);
    if slots.len() != decl.arity() {
        return Err(PhaseError::BadDensity(format!(
            "`{}` expects {} slot names, got {}",
            decl.name,
            decl.arity(),
            slots.len()
        )));
    }
    Ok(())
}

/// Euler-Lagrange derivative of the integrated density: the variation of
/// `F = integral of density` with respect to `field(slots)` at `point`.
///
/// Every occurrence contributes `(-1)^k d_k [rest of the term]` where `k`
/// runs over the occurrence's derivative indices; the occurrence's slot
/// indices are tied to the requested `slots` names through Kronecker
/// deltas, which the canonicalizer then eliminates. The density must be a
/// single-point scalar; the result lives at `point`.
pub fn variational_derivative(
    ctx: &Context,
    density: &Expression,
    field: FieldId,
    slots: &[&str],
    point: Point,
) -> Result<Expression, PhaseError> {
    check_slots(ctx, field, slots)?;
    if !density.free_sig().is_empty() {
        return Err(PhaseError::BadDensity(
            "variational derivative of a non-scalar density".into(),
        ));
    }
    let mut out: Vec<Term> = Vec::new();
    for term in density.terms() {
        for (pos, factor) in term.factors.iter().enumerate() {
            let Factor::Field(occ) = factor else {
                continue;
            };
            if occ.field != field {
                continue;
            }
            if occ.point != Point::BASE {
                return Err(PhaseError::BadDensity(
                    "density must live at the base point".into(),
                ));
            }
            let mut coeff = term.coeff.clone();
            if occ.derivs.len() % 2 == 1 {
                coeff = coeff.neg();
            }
            let mut rest: Vec<Factor> = term
                .factors
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != pos)
                .map(|(_, f)| f.clone())
                .collect();
            rest.extend(slot_deltas(ctx, field, slots, &occ.indices));
            let mut pieces = vec![Term::new(coeff, rest)];
            for d in &occ.derivs {
                let mut next = Vec::new();
                for t in &pieces {
                    next.extend(term_derivative(t, d, Point::BASE)?);
                }
                pieces = next;
            }
            out.extend(pieces);
        }
    }
    let result = Expression::from_terms(ctx, out)?;
    if point == Point::BASE {
        return Ok(result);
    }
    let moved = result
        .terms()
        .iter()
        .map(|t| {
            Term::new(
                t.coeff.clone(),
                t.factors
                    .iter()
                    .map(|f| f.map_points(&mut |_| point))
                    .collect(),
            )
        })
        .collect();
    Ok(Expression::from_terms_policy(ctx, moved, PointPolicy::Fixed)?)
}

/// Integration-by-parts normal form of an integrated scalar density: no
/// spatial derivative acts on the distinguished smearing parameter, the
/// lowest-id `Parameter` field occurring in the density.
///
/// Integrands are only meaningful under an integral, so total spatial
/// divergences are dropped while transferring derivatives off the
/// parameter onto the remaining factors. For densities linear in the
/// distinguished parameter this representative is unique: a divergence
/// whose every term carries the parameter underived has a vanishing
/// variation with respect to it, hence vanishes itself. Densities without
/// parameters are returned unchanged.
pub fn ibp_normal_form(ctx: &Context, density: &Expression) -> Result<Expression, PhaseError> {
    let field = density
        .terms()
        .iter()
        .flat_map(|t| &t.factors)
        .filter_map(|f| match f {
            Factor::Field(occ) if ctx.field(occ.field).kind == FieldKind::Parameter => {
                Some(occ.field)
            }
            _ => None,
        })
        .min();
    match field {
        Some(field) => clear_derivatives(ctx, density, field),
        None => Ok(density.clone()),
    }
}

/// Moves every spatial derivative off `field` by parts, discarding the
/// total-derivative remainders: `d_a u * rest = d_a(u * rest) - u *
/// d_a(rest)`, keeping only the last piece. Terms must be linear in
/// `field` or the rewrite could feed derivatives back onto it.
fn clear_derivatives(
    ctx: &Context,
    density: &Expression,
    field: FieldId,
) -> Result<Expression, PhaseError> {
    let mut cur = density.clone();
    loop {
        let mut acc: Vec<Term> = Vec::new();
        let mut dirty = false;
        for term in cur.terms() {
            let occs: Vec<usize> = term
                .factors
                .iter()
                .enumerate()
                .filter(|(_, f)| matches!(f, Factor::Field(occ) if occ.field == field))
                .map(|(i, _)| i)
                .collect();
            if occs.len() > 1 {
                return Err(PhaseError::BadDensity(format!(
                    "integrand is not linear in the smearing parameter `{}`",
                    ctx.field(field).name
                )));
            }
            let Some(&pos) = occs.first() else {
                acc.push(term.clone());
                continue;
            };
            let Factor::Field(occ) = &term.factors[pos] else {
                unreachable!();
            };
            if occ.point != Point::BASE {
                return Err(PhaseError::BadDensity(
                    "density must live at the base point".into(),
                ));
            }
            let Some(d) = occ.derivs.last().cloned() else {
                acc.push(term.clone());
                continue;
            };
            dirty = true;
            let mut reduced = term.clone();
            let Factor::Field(occ) = &mut reduced.factors[pos] else {
                unreachable!();
            };
            occ.derivs.pop();
            // The Leibniz expansion of d_d(reduced) reproduces the original
            // term once, from the derivative landing back on `field`; the
            // other pieces enter negated.
            let mut seen_self = false;
            for piece in term_derivative(&reduced, &d, Point::BASE)? {
                if !seen_self && piece == *term {
                    seen_self = true;
                    continue;
                }
                acc.push(Term::new(piece.coeff.neg(), piece.factors));
            }
            assert!(seen_self, "Leibniz expansion must reproduce the term");
        }
        cur = Expression::from_terms(ctx, acc)?;
        if !dirty {
            return Ok(cur);
        }
    }
}

/// Distributional derivative of a local expression: the variation of
/// `expr` (not integrated) with respect to `field(slots)` at `point`.
///
/// An occurrence `d_k field(I)(p)` contributes the two-point distribution
/// `d_k delta(p - point)` carrying the occurrence's derivative indices, so
/// the result is a kernel connecting `expr`'s points to `point`.
pub fn local_variational_derivative(
    ctx: &Context,
    expr: &Expression,
    field: FieldId,
    slots: &[&str],
    point: Point,
) -> Result<Expression, PhaseError> {
    check_slots(ctx, field, slots)?;
    let mut out: Vec<Term> = Vec::new();
    for term in expr.terms() {
        for (pos, factor) in term.factors.iter().enumerate() {
            let Factor::Field(occ) = factor else {
                continue;
            };
            if occ.field != field {
                continue;
            }
            let mut rest: Vec<Factor> = term
                .factors
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != pos)
                .map(|(_, f)| f.clone())
                .collect();
            rest.extend(slot_deltas(ctx, field, slots, &occ.indices));
            rest.push(Factor::DeltaDist {
                left: occ.point,
                right: point,
                derivs: occ.derivs.clone(),
            });
            out.push(Term::new(term.coeff.clone(), rest));
        }
    }
    Ok(Expression::from_terms_policy(ctx, out, PointPolicy::Fixed)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::{FieldDecl, FieldKind};
    use crate::dsl::parse_expression;
    use crate::index::Variance;
    use crate::models::builtin;
    use crate::test_fixtures::so3_context;

    fn with_param(ctx: &Context, name: &str, arity: usize) -> (Context, FieldId) {
        let mut ctx = ctx.clone();
        let fam = ctx.spatial_family().unwrap();
        let id = ctx
            .add_field(FieldDecl {
                name: name.into(),
                kind: FieldKind::Parameter,
                signature: vec![(fam, Variance::Up); arity],
                antisym: None,
                weight: 0,
            })
            .unwrap();
        (ctx, id)
    }

    fn parse(ctx: &Context, src: &str) -> Expression {
        parse_expression(ctx, &[], src, PointPolicy::Fixed).unwrap()
    }

    #[test]
    fn derivative_integrates_by_parts() {
        let (ctx, _) = so3_context();
        let (ctx, _) = with_param(&ctx, "lam", 1);
        let v = ctx.field_id("V").unwrap();
        // F = integral lam(i) d_i V(m) W(m); dF/dV = -d_i(lam(i) W(m)).
        let density = parse(&ctx, "lam(i) d_i V(m) W(m)");
        let got = variational_derivative(&ctx, &density, v, &["m"], Point::BASE).unwrap();
        let expected = parse(&ctx, "- d_i lam(i) W(m) - lam(i) d_i W(m)");
        assert_eq!(got, expected);
    }

    #[test]
    fn quadratic_density_doubles() {
        let (ctx, _) = so3_context();
        let v = ctx.field_id("V").unwrap();
        let density = parse(&ctx, "1/2 V(m) V(m)");
        let got = variational_derivative(&ctx, &density, v, &["m"], Point::BASE).unwrap();
        assert_eq!(got, parse(&ctx, "V(m)"));
    }

    #[test]
    fn double_derivative_keeps_sign() {
        let (ctx, _) = so3_context();
        let v = ctx.field_id("V").unwrap();
        let w = ctx.field_id("W").unwrap();
        let density = parse(&ctx, "W(m) d_a d_a V(m)");
        let dv = variational_derivative(&ctx, &density, v, &["m"], Point::BASE).unwrap();
        assert_eq!(dv, parse(&ctx, "d_a d_a W(m)"));
        // And against the symmetric partner: d(F)/dW = d_a d_a V.
        let dw = variational_derivative(&ctx, &density, w, &["m"], Point::BASE).unwrap();
        assert_eq!(dw, parse(&ctx, "d_a d_a V(m)"));
    }

    #[test]
    fn result_point_is_movable() {
        let (ctx, _) = so3_context();
        let v = ctx.field_id("V").unwrap();
        let density = parse(&ctx, "1/2 V(m) V(m)");
        let got = variational_derivative(&ctx, &density, v, &["m"], Point(1)).unwrap();
        let expected =
            parse_expression(&ctx, &[], "V(m)@y", PointPolicy::Fixed).unwrap();
        assert_eq!(got, expected);
    }

    #[test]
    fn local_derivative_produces_delta_kernels() {
        let (ctx, _) = so3_context();
        let v = ctx.field_id("V").unwrap();
        let expr = parse(&ctx, "d_a V(m) W(m)");
        let got = local_variational_derivative(&ctx, &expr, v, &["n"], Point(1)).unwrap();
        let expected = parse_expression(
            &ctx,
            &[],
            "W(n)@x d_a dirac(x,y)",
            PointPolicy::Fixed,
        )
        .unwrap();
        assert_eq!(got, expected);
    }

    #[test]
    fn ibp_moves_derivatives_off_the_parameter() {
        let (ctx, _) = so3_context();
        let (ctx, _) = with_param(&ctx, "lam", 1);
        let density = parse(&ctx, "d_i lam(i) V(m) W(m)");
        let got = ibp_normal_form(&ctx, &density).unwrap();
        let expected = parse(&ctx, "- lam(i) d_i V(m) W(m) - lam(i) V(m) d_i W(m)");
        assert_eq!(got, expected);
    }

    #[test]
    fn ibp_sends_divergences_to_zero() {
        let (ctx, _) = so3_context();
        let (ctx, _) = with_param(&ctx, "lam", 1);
        // The expansion of d_i(lam(j) V(j) W(i)) term by term.
        let div = parse(
            &ctx,
            "d_i lam(j) V(j) W(i) + lam(j) d_i V(j) W(i) + lam(j) V(j) d_i W(i)",
        );
        assert!(ibp_normal_form(&ctx, &div).unwrap().is_zero());
    }

    #[test]
    fn ibp_is_idempotent_and_divergence_blind() {
        let (ctx, _) = so3_context();
        let (ctx, _) = with_param(&ctx, "lam", 1);
        let density = parse(&ctx, "lam(i) d_i V(m) W(m) + 2 lam(i) V(i) W(m) V(m)");
        let div = parse(
            &ctx,
            "d_i lam(j) V(j) W(i) + lam(j) d_i V(j) W(i) + lam(j) V(j) d_i W(i)",
        );
        let nf = ibp_normal_form(&ctx, &density).unwrap();
        assert_eq!(ibp_normal_form(&ctx, &nf).unwrap(), nf);
        let shifted = density.add(&div, &ctx).unwrap();
        assert_eq!(ibp_normal_form(&ctx, &shifted).unwrap(), nf);
    }

    #[test]
    fn ibp_rejects_nonlinear_parameter_terms() {
        let (ctx, _) = so3_context();
        let (ctx, _) = with_param(&ctx, "lam", 1);
        let density = parse(&ctx, "lam(i) d_i lam(j) V(j)");
        assert!(matches!(
            ibp_normal_form(&ctx, &density),
            Err(PhaseError::BadDensity(_))
        ));
    }

    #[test]
    fn gauss_law_variation_matches_hand_result() {
        let m = builtin("second_chern").unwrap();
        let mut ctx = m.ctx.clone();
        let so3 = ctx.family_id("so3").unwrap();
        ctx.add_field(FieldDecl {
            name: "lamt".into(),
            kind: FieldKind::Parameter,
            signature: vec![(so3, Variance::Down)],
            antisym: None,
            weight: 0,
        })
        .unwrap();
        let pi = ctx.field_id("pi").unwrap();
        let body = parse_expression(&ctx, &m.constraints, "lamt(i) phi(i)", PointPolicy::Fixed)
            .unwrap();
        let got = variational_derivative(&ctx, &body, pi, &["m", "c"], Point::BASE).unwrap();
        let expected = parse_expression(
            &ctx,
            &[],
            "- d_c lamt(m) + eps[so3](i,j,m) lamt(i) Ups(j,c)",
            PointPolicy::Fixed,
        )
        .unwrap();
        assert_eq!(got, expected);
    }
}
