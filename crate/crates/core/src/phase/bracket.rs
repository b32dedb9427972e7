//! Poisson brackets of integrated functionals.

use crate::context::{Context, FieldDecl, FieldId, FieldKind};
use crate::dsl::ConstraintDef;
use crate::expr::{Expression, Factor, FieldOccurrence, Term};
use crate::index::{Point, Variance};
use crate::scalar::ScalarCoeff;

use super::symplectic::SymplecticStructure;
use super::variation::{ibp_normal_form, local_variational_derivative, variational_derivative};
use super::PhaseError;

/// A constraint smeared against a fresh parameter field: the functional
/// `C[param] = integral param(labels) * body(labels)`.
#[derive(Debug, Clone)]
pub struct SmearedConstraint {
    pub constraint: String,
    pub param: FieldId,
    pub density: Expression,
}

/// Declares a smearing parameter for `c` in `ctx` and builds the smeared
/// density. The parameter mirrors the constraint's slot families and its
/// antisymmetric pair, with flipped rendering variance.
pub fn smear_constraint(
    ctx: &mut Context,
    c: &ConstraintDef,
    param_name: &str,
) -> Result<SmearedConstraint, PhaseError> {
    let signature: Vec<_> = c
        .slot_sig()
        .iter()
        .map(|(fam, var)| {
            let flipped = match var {
                Variance::Up => Variance::Down,
                Variance::Down => Variance::Up,
            };
            (*fam, flipped)
        })
        .collect();
    let param = ctx.add_field(FieldDecl {
        name: param_name.to_string(),
        kind: FieldKind::Parameter,
        signature,
        antisym: c.antisym,
        weight: 0,
    })?;
    let occ = Factor::Field(FieldOccurrence {
        field: param,
        indices: c
            .labels
            .iter()
            .zip(c.slot_sig())
            .map(|(l, (fam, _))| crate::index::Index::named(fam, l))
            .collect(),
        derivs: Vec::new(),
        point: Point::BASE,
    });
    let param_expr = Expression::from_terms(ctx, vec![Term::new(ScalarCoeff::one(), vec![occ])])?;
    let density = param_expr.multiply(&c.body, ctx)?;
    Ok(SmearedConstraint {
        constraint: c.name.clone(),
        param,
        density,
    })
}

fn mentions(e: &Expression, field: FieldId) -> bool {
    e.terms().iter().any(|t| {
        t.factors.iter().any(|f| match f {
            Factor::Field(occ) => occ.field == field,
            _ => false,
        })
    })
}

/// The Poisson bracket of two integrated scalar densities, as an
/// integrated scalar density: `{F, G} = sum over pairs of
/// dF/dq . K . dG/dp - dG/dq . K . dF/dp` with `K` the pair's bracket
/// kernel. The result is returned in integration-by-parts normal form,
/// so equal functionals have equal densities.
pub fn poisson_bracket(
    ctx: &Context,
    symp: &SymplecticStructure,
    f: &Expression,
    g: &Expression,
) -> Result<Expression, PhaseError> {
    let mut result = Expression::zero();
    for pair in symp.pairs() {
        let arity = ctx.field(pair.coord).arity();
        let qnames: Vec<String> = (0..arity).map(|k| format!("vq{k}")).collect();
        let pnames: Vec<String> = (0..arity).map(|k| format!("vp{k}")).collect();
        let qslots: Vec<&str> = qnames.iter().map(String::as_str).collect();
        let pslots: Vec<&str> = pnames.iter().map(String::as_str).collect();
        let kernel = pair.kernel_density(ctx, &qslots, &pslots)?;
        for (a, b, sign) in [(f, g, 1), (g, f, -1)] {
            if !mentions(a, pair.coord) || !mentions(b, pair.mom) {
                continue;
            }
            let da = variational_derivative(ctx, a, pair.coord, &qslots, Point::BASE)?;
            let db = variational_derivative(ctx, b, pair.mom, &pslots, Point::BASE)?;
            let piece = da.multiply(&kernel, ctx)?.multiply(&db, ctx)?;
            result = if sign == 1 {
                result.add(&piece, ctx)?
            } else {
                result.sub(&piece, ctx)?
            };
        }
    }
    ibp_normal_form(ctx, &result)
}

/// Recovers the two-point kernel `{A(x), B(y)}` from the density of
/// `{A[lam], B[mu]}`: the second variation with respect to the two
/// smearing parameters, the first integrated, the second distributional.
/// The kernel's free labels are `lam_slots` at `x` and `mu_slots` at `y`.
pub fn localize(
    ctx: &Context,
    bracket_density: &Expression,
    lam: FieldId,
    lam_slots: &[&str],
    mu: FieldId,
    mu_slots: &[&str],
) -> Result<Expression, PhaseError> {
    let at_x = variational_derivative(ctx, bracket_density, lam, lam_slots, Point::BASE)?;
    local_variational_derivative(ctx, &at_x, mu, mu_slots, Point(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{parse_expression, Convention};
    use crate::expr::PointPolicy;
    use crate::models::builtin;
    use crate::phase::SymplecticStructure;

    struct Setup {
        ctx: Context,
        symp: SymplecticStructure,
        constraints: Vec<ConstraintDef>,
    }

    fn setup(model: &str) -> Setup {
        let m = builtin(model).unwrap();
        let symp = SymplecticStructure::extract(&m, Convention::Kinetic).unwrap();
        Setup {
            ctx: m.ctx.clone(),
            symp,
            constraints: m.constraints.clone(),
        }
    }

    fn smeared(s: &mut Setup, name: &str, param: &str) -> SmearedConstraint {
        let c = s
            .constraints
            .iter()
            .find(|c| c.name == name)
            .unwrap()
            .clone();
        smear_constraint(&mut s.ctx, &c, param).unwrap()
    }

    #[test]
    fn canonical_pair_bracket_is_the_kernel_coefficient() {
        let mut s = setup("bf_ym");
        // F = integral lam(a) A0(a), G = integral mu(a) P0(a):
        // {F, G} = integral lam mu since {A0, P0} = delta.
        let su = s.ctx.family_id("su").unwrap();
        for (name, arity) in [("lamX", 1), ("muX", 1)] {
            s.ctx
                .add_field(FieldDecl {
                    name: name.into(),
                    kind: FieldKind::Parameter,
                    signature: vec![(su, Variance::Up); arity],
                    antisym: None,
                    weight: 0,
                })
                .unwrap();
        }
        let f = parse_expression(&s.ctx, &[], "lamX(a) A0(a)", PointPolicy::Fixed).unwrap();
        let g = parse_expression(&s.ctx, &[], "muX(a) P0(a)", PointPolicy::Fixed).unwrap();
        let got = poisson_bracket(&s.ctx, &s.symp, &f, &g).unwrap();
        let expected =
            parse_expression(&s.ctx, &[], "lamX(a) muX(a)", PointPolicy::Fixed).unwrap();
        assert_eq!(got, expected);
        // Antisymmetry of the bracket.
        let flipped = poisson_bracket(&s.ctx, &s.symp, &g, &f).unwrap();
        assert_eq!(flipped, expected.neg());
    }

    #[test]
    fn antisymmetric_pair_counts_both_orders() {
        let mut s = setup("bf_ym");
        let su = s.ctx.family_id("su").unwrap();
        let space = s.ctx.family_id("space").unwrap();
        for name in ["lamB", "muB"] {
            s.ctx
                .add_field(FieldDecl {
                    name: name.into(),
                    kind: FieldKind::Parameter,
                    signature: vec![
                        (su, Variance::Up),
                        (space, Variance::Up),
                        (space, Variance::Up),
                    ],
                    antisym: Some((1, 2)),
                    weight: 0,
                })
                .unwrap();
        }
        // {B(a,i,j), Q(b,k,l)} = 1/2 (dd - dd) delta(ab): smearing both
        // sides with antisymmetric parameters gives
        // {F, G} = 2 * 1/2 * integral lamB muB = integral lamB(a,i,j) muB(a,i,j).
        let f = parse_expression(&s.ctx, &[], "lamB(a,i,j) B(a,i,j)", PointPolicy::Fixed)
            .unwrap();
        let g = parse_expression(&s.ctx, &[], "muB(a,i,j) Q(a,i,j)", PointPolicy::Fixed)
            .unwrap();
        let got = poisson_bracket(&s.ctx, &s.symp, &f, &g).unwrap();
        let expected =
            parse_expression(&s.ctx, &[], "lamB(a,i,j) muB(a,i,j)", PointPolicy::Fixed)
                .unwrap();
        assert_eq!(got, expected);
    }

    #[test]
    fn gauss_law_algebra_closes() {
        let mut s = setup("second_chern");
        let fphi = smeared(&mut s, "phi", "lamQ");
        let gphi = smeared(&mut s, "phi", "muQ");
        let got = poisson_bracket(&s.ctx, &s.symp, &fphi.density, &gphi.density).unwrap();
        // {phi[lam], phi[mu]} = integral eps(i,j,k) lam(i) mu(j) phi(k).
        let expected = parse_expression(
            &s.ctx,
            &s.constraints,
            "eps[so3](i,j,k) lamQ(i) muQ(j) phi(k)",
            PointPolicy::Fixed,
        )
        .unwrap();
        assert_eq!(got, expected);
    }

    #[test]
    fn localized_gauss_bracket_is_ultralocal() {
        let mut s = setup("second_chern");
        let fphi = smeared(&mut s, "phi", "lamQ");
        let gpsi = smeared(&mut s, "psi", "muQ");
        let density =
            poisson_bracket(&s.ctx, &s.symp, &fphi.density, &gpsi.density).unwrap();
        let kernel = localize(&s.ctx, &density, fphi.param, &["i"], gpsi.param, &["j"])
            .unwrap();
        let expected = parse_expression(
            &s.ctx,
            &s.constraints,
            "eps[so3](i,j,k) psi(k) dirac(x,y)",
            PointPolicy::Fixed,
        )
        .unwrap();
        assert_eq!(kernel, expected);
    }

    #[test]
    fn mixed_gauss_brackets_rotate_each_other() {
        let mut s = setup("second_chern");
        let fphi = smeared(&mut s, "phi", "lamQ");
        let gpsi = smeared(&mut s, "psi", "muQ");
        let got = poisson_bracket(&s.ctx, &s.symp, &fphi.density, &gpsi.density).unwrap();
        let expected = parse_expression(
            &s.ctx,
            &s.constraints,
            "eps[so3](i,j,k) lamQ(i) muQ(j) psi(k)",
            PointPolicy::Fixed,
        )
        .unwrap();
        assert_eq!(got, expected);
    }
}
