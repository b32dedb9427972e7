//! Products, spatial derivatives, and field substitution.
//!
//! These operations build raw term lists and canonicalize once at the end.
//! Dummy collisions between operands are avoided by shifting the numbered
//! dummies of one side past the other side's maximum before combining.

use crate::context::{Context, FieldId};
use crate::index::{Index, IndexLabel, Point};

use super::{Expression, ExprError, Factor, PointPolicy, Term, DELTA_DERIV_CAP};

pub(crate) fn max_dummy_id(term: &Term) -> Option<u32> {
    term.factors
        .iter()
        .flat_map(|f| f.labels())
        .filter_map(|i| match i.label {
            IndexLabel::Dummy(k) => Some(k),
            IndexLabel::Named(_) => None,
        })
        .max()
}

pub(crate) fn shift_dummies(term: &Term, offset: u32) -> Term {
    if offset == 0 {
        return term.clone();
    }
    Term::new(
        term.coeff.clone(),
        term.factors
            .iter()
            .map(|f| {
                f.map_labels(&mut |idx| match idx.label {
                    IndexLabel::Dummy(k) => Index {
                        family: idx.family,
                        label: IndexLabel::Dummy(k + offset),
                    },
                    IndexLabel::Named(_) => idx.clone(),
                })
            })
            .collect(),
    )
}

/// Leibniz derivative of one term with respect to the coordinate `index` at
/// `point`, without canonicalization.
pub(crate) fn term_derivative(
    term: &Term,
    index: &Index,
    point: Point,
) -> Result<Vec<Term>, ExprError> {
    let mut out = Vec::new();
    for (pos, factor) in term.factors.iter().enumerate() {
        match factor {
            Factor::Field(occ) if occ.point == point => {
                let mut t = term.clone();
                let Factor::Field(occ) = &mut t.factors[pos] else {
                    unreachable!();
                };
                occ.derivs.push(index.clone());
                out.push(t);
            }
            Factor::DeltaDist { left, right, derivs } => {
                let hits_left = *left == point;
                let hits_right = *right == point;
                if !hits_left && !hits_right {
                    continue;
                }
                if derivs.len() + 1 > DELTA_DERIV_CAP {
                    return Err(ExprError::DeltaDerivCap);
                }
                let mut t = term.clone();
                // The stored derivative multi-index acts on the left point;
                // a derivative at the right point flips the sign.
                if hits_right {
                    t.coeff = t.coeff.neg();
                }
                let Factor::DeltaDist { derivs, .. } = &mut t.factors[pos] else {
                    unreachable!();
                };
                derivs.push(index.clone());
                out.push(t);
            }
            _ => {}
        }
    }
    Ok(out)
}

impl Expression {
    /// Pointwise product. Shared named labels contract; numbered dummies of
    /// `other` are freshened against each term of `self`.
    pub fn multiply(&self, other: &Expression, ctx: &Context) -> Result<Expression, ExprError> {
        self.multiply_policy(other, ctx, PointPolicy::Fixed)
    }

    pub(crate) fn multiply_policy(
        &self,
        other: &Expression,
        ctx: &Context,
        policy: PointPolicy,
    ) -> Result<Expression, ExprError> {
        let mut terms = Vec::with_capacity(self.terms().len() * other.terms().len());
        for a in self.terms() {
            let offset = max_dummy_id(a).map_or(0, |m| m + 1);
            for b in other.terms() {
                let b = shift_dummies(b, offset);
                let mut factors = a.factors.clone();
                factors.extend(b.factors);
                terms.push(Term::new(a.coeff.mul(&b.coeff), factors));
            }
        }
        Expression::from_terms_policy(ctx, terms, policy)
    }

    /// d/dx^index applied at `point`.
    pub fn spatial_derivative(
        &self,
        ctx: &Context,
        index: &Index,
        point: Point,
    ) -> Result<Expression, ExprError> {
        let mut terms = Vec::new();
        for term in self.terms() {
            terms.extend(term_derivative(term, index, point)?);
        }
        Expression::from_terms(ctx, terms)
    }

    /// Replaces every occurrence of `field` by `replacement`, whose free
    /// indices must be named exactly `slots` (matched positionally to the
    /// field's index slots). Derivatives on an occurrence are pushed through
    /// by the Leibniz rule; the occurrence's point is applied to the copy.
    pub fn substitute_field(
        &self,
        ctx: &Context,
        field: FieldId,
        slots: &[&str],
        replacement: &Expression,
    ) -> Result<Expression, ExprError> {
        let decl = ctx.field(field);
        if slots.len() != decl.arity() {
            return Err(ExprError::Arity {
                field: decl.name.clone(),
                expected: decl.arity(),
                got: slots.len(),
            });
        }
        let rep_sig = replacement.free_sig();
        if !replacement.is_zero() {
            for slot in slots {
                if !rep_sig.contains_key(*slot) {
                    return Err(ExprError::BadSubstitution((*slot).to_string()));
                }
            }
            for key in rep_sig.keys() {
                if !slots.contains(&key.as_str()) {
                    return Err(ExprError::BadSubstitution(key.clone()));
                }
            }
        }
        let rep_span = replacement
            .terms()
            .iter()
            .filter_map(max_dummy_id)
            .max()
            .map_or(1, |m| m + 1);

        let mut out_terms: Vec<Term> = Vec::new();
        for host in self.terms() {
            let mut occurrences = Vec::new();
            let mut base_factors = Vec::new();
            for factor in &host.factors {
                match factor {
                    Factor::Field(occ) if occ.field == field => occurrences.push(occ.clone()),
                    other => base_factors.push(other.clone()),
                }
            }
            if occurrences.is_empty() {
                out_terms.push(host.clone());
                continue;
            }
            let mut next_fresh = max_dummy_id(host).map_or(0, |m| m + 1);
            // Partial products: coefficient and factors accumulated so far.
            let mut acc: Vec<Term> = vec![Term::new(host.coeff.clone(), base_factors)];
            for occ in occurrences {
                let mut copy_terms: Vec<Term> = Vec::new();
                for rep_term in replacement.terms() {
                    let shifted = shift_dummies(rep_term, next_fresh);
                    let mapped = Term::new(
                        shifted.coeff.clone(),
                        shifted
                            .factors
                            .iter()
                            .map(|f| {
                                let relabeled = f.map_labels(&mut |idx| {
                                    if let IndexLabel::Named(name) = &idx.label {
                                        if let Some(pos) =
                                            slots.iter().position(|s| s == name)
                                        {
                                            return occ.indices[pos].clone();
                                        }
                                    }
                                    idx.clone()
                                });
                                relabeled.map_points(&mut |_| occ.point)
                            })
                            .collect(),
                    );
                    copy_terms.push(mapped);
                }
                next_fresh += rep_span;
                for d in &occ.derivs {
                    let mut next = Vec::new();
                    for t in &copy_terms {
                        next.extend(term_derivative(t, d, occ.point)?);
                    }
                    copy_terms = next;
                }
                let mut next_acc = Vec::with_capacity(acc.len() * copy_terms.len());
                for a in &acc {
                    for c in &copy_terms {
                        let mut factors = a.factors.clone();
                        factors.extend(c.factors.iter().cloned());
                        next_acc.push(Term::new(a.coeff.mul(&c.coeff), factors));
                    }
                }
                acc = next_acc;
            }
            out_terms.extend(acc);
        }
        Expression::from_terms(ctx, out_terms)
    }

    /// Simultaneously renames named labels. Dummies are untouched; if a
    /// target name collides with another free label the pair contracts.
    pub fn rename_free(
        &self,
        ctx: &Context,
        map: &[(String, String)],
    ) -> Result<Expression, ExprError> {
        let terms = self
            .terms()
            .iter()
            .map(|t| {
                Term::new(
                    t.coeff.clone(),
                    t.factors
                        .iter()
                        .map(|f| {
                            f.map_labels(&mut |idx| {
                                if let IndexLabel::Named(name) = &idx.label {
                                    if let Some((_, to)) =
                                        map.iter().find(|(from, _)| from == name)
                                    {
                                        return Index::named(idx.family, to);
                                    }
                                }
                                idx.clone()
                            })
                        })
                        .collect(),
                )
            })
            .collect();
        Expression::from_terms(ctx, terms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::FieldOccurrence;
    use crate::scalar::ScalarCoeff;
    use crate::test_fixtures::{occ, so3_context};

    fn named(f: crate::index::FamilyId, s: &str) -> Index {
        Index::named(f, s)
    }

    #[test]
    fn product_contracts_shared_named_labels() {
        let (ctx, f) = so3_context();
        let v = ctx.field_id("V").unwrap();
        let w = ctx.field_id("W").unwrap();
        let a = Expression::from_terms(
            &ctx,
            vec![Term::new(ScalarCoeff::one(), vec![occ(v, &[named(f, "i")])])],
        )
        .unwrap();
        let b = Expression::from_terms(
            &ctx,
            vec![Term::new(ScalarCoeff::one(), vec![occ(w, &[named(f, "i")])])],
        )
        .unwrap();
        let prod = a.multiply(&b, &ctx).unwrap();
        assert!(prod.free_sig().is_empty());
        assert_eq!(prod.terms().len(), 1);
    }

    #[test]
    fn product_freshens_dummies() {
        let (ctx, f) = so3_context();
        let v = ctx.field_id("V").unwrap();
        let w = ctx.field_id("W").unwrap();
        // (V_m W_m) * (V_m W_m): dummies must not collide, giving
        // a single term with four fields and two dummy pairs.
        let s = Expression::from_terms(
            &ctx,
            vec![Term::new(
                ScalarCoeff::one(),
                vec![occ(v, &[named(f, "m")]), occ(w, &[named(f, "m")])],
            )],
        )
        .unwrap();
        let sq = s.multiply(&s, &ctx).unwrap();
        assert_eq!(sq.terms().len(), 1);
        assert_eq!(sq.terms()[0].factors.len(), 4);
    }

    #[test]
    fn derivative_is_leibniz() {
        let (ctx, f) = so3_context();
        let v = ctx.field_id("V").unwrap();
        let w = ctx.field_id("W").unwrap();
        let s = Expression::from_terms(
            &ctx,
            vec![Term::new(
                ScalarCoeff::one(),
                vec![occ(v, &[named(f, "m")]), occ(w, &[named(f, "m")])],
            )],
        )
        .unwrap();
        let spatial = ctx.spatial_family().unwrap();
        let d = s
            .spatial_derivative(&ctx, &named(spatial, "a"), Point::BASE)
            .unwrap();
        assert_eq!(d.terms().len(), 2);
        for t in d.terms() {
            let total_derivs: usize = t
                .factors
                .iter()
                .map(|f| match f {
                    Factor::Field(o) => o.derivs.len(),
                    _ => 0,
                })
                .sum();
            assert_eq!(total_derivs, 1);
        }
    }

    #[test]
    fn substitution_applies_derivatives_to_copy() {
        let (ctx, f) = so3_context();
        let v = ctx.field_id("V").unwrap();
        let w = ctx.field_id("W").unwrap();
        let spatial = ctx.spatial_family().unwrap();
        // d_a V(i) with V(i) := W(i) becomes d_a W(i).
        let host = Expression::from_terms(
            &ctx,
            vec![Term::new(
                ScalarCoeff::one(),
                vec![Factor::Field(FieldOccurrence {
                    field: v,
                    indices: vec![named(f, "i")],
                    derivs: vec![named(spatial, "a")],
                    point: Point::BASE,
                })],
            )],
        )
        .unwrap();
        let replacement = Expression::from_terms(
            &ctx,
            vec![Term::new(ScalarCoeff::one(), vec![occ(w, &[named(f, "i")])])],
        )
        .unwrap();
        let result = host
            .substitute_field(&ctx, v, &["i"], &replacement)
            .unwrap();
        let expected = Expression::from_terms(
            &ctx,
            vec![Term::new(
                ScalarCoeff::one(),
                vec![Factor::Field(FieldOccurrence {
                    field: w,
                    indices: vec![named(f, "i")],
                    derivs: vec![named(spatial, "a")],
                    point: Point::BASE,
                })],
            )],
        )
        .unwrap();
        assert_eq!(result, expected);
    }

    #[test]
    fn substitution_rejects_mismatched_slots() {
        let (ctx, f) = so3_context();
        let v = ctx.field_id("V").unwrap();
        let w = ctx.field_id("W").unwrap();
        let host = Expression::from_terms(
            &ctx,
            vec![Term::new(ScalarCoeff::one(), vec![occ(v, &[named(f, "i")])])],
        )
        .unwrap();
        let replacement = Expression::from_terms(
            &ctx,
            vec![Term::new(ScalarCoeff::one(), vec![occ(w, &[named(f, "j")])])],
        )
        .unwrap();
        assert!(host
            .substitute_field(&ctx, v, &["i"], &replacement)
            .is_err());
    }
}
