//! Canonical pairs and their bracket coefficients.

use crate::context::{Context, FieldId};
use crate::dsl::{Convention, ModelDef};
use crate::expr::{Expression, ExprError, Factor, Term};
use crate::index::{Index, Point};
use crate::scalar::ScalarCoeff;

use super::PhaseError;

/// One canonical pair with its fundamental bracket.
///
/// The field bracket reads `{coord(I)(x), mom(J)(y)} = coeff * D(I,J) *
/// delta(x - y)` where `D` is the product of slot deltas matched through
/// `slot_map`, antisymmetrized over `antisym` when present. A kinetic line
/// `c dt q(..) p(..)` yields `coeff = 1/c`, or `1/(2c)` for a pair with an
/// antisymmetric slot pair (the full contraction counts each independent
/// component twice).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairRule {
    pub coord: FieldId,
    pub mom: FieldId,
    /// Coordinate slot `k` contracts with momentum slot `slot_map[k]`.
    pub slot_map: Vec<usize>,
    pub coeff: ScalarCoeff,
    /// Antisymmetric slot positions on the coordinate side.
    pub antisym: Option<(usize, usize)>,
}

impl PairRule {
    /// The delta structure `coeff * D(I,J)` of the fundamental bracket as a
    /// single-point expression with free labels `coord_slots` and
    /// `mom_slots`. Multiplying two functional derivatives by this kernel
    /// and integrating gives their bracket contribution.
    pub fn kernel_density(
        &self,
        ctx: &Context,
        coord_slots: &[&str],
        mom_slots: &[&str],
    ) -> Result<Expression, ExprError> {
        let sig = &ctx.field(self.coord).signature;
        let pair = |k: usize, m: usize| -> Factor {
            Factor::Kron {
                a: Index::named(sig[k].0, coord_slots[k]),
                b: Index::named(sig[k].0, mom_slots[self.slot_map[m]]),
            }
        };
        let straight: Vec<Factor> = (0..sig.len()).map(|k| pair(k, k)).collect();
        let mut terms = vec![Term::new(self.coeff.clone(), straight.clone())];
        if let Some((p, q)) = self.antisym {
            let mut crossed = straight;
            crossed[p] = pair(p, q);
            crossed[q] = pair(q, p);
            terms.push(Term::new(self.coeff.neg(), crossed));
        }
        Expression::from_terms(ctx, terms)
    }

    /// The full two-point bracket `{coord(I)(x), mom(J)(y)}` for display
    /// and fixtures: the kernel density times `delta(x - y)`.
    pub fn bracket_kernel(
        &self,
        ctx: &Context,
        coord_slots: &[&str],
        mom_slots: &[&str],
    ) -> Result<Expression, ExprError> {
        let density = self.kernel_density(ctx, coord_slots, mom_slots)?;
        let delta = Expression::from_terms(
            ctx,
            vec![Term::new(
                ScalarCoeff::one(),
                vec![Factor::DeltaDist {
                    left: Point::BASE,
                    right: Point(1),
                    derivs: Vec::new(),
                }],
            )],
        )?;
        density.multiply(&delta, ctx)
    }
}

/// The complete set of canonical pairs of a model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymplecticStructure {
    pairs: Vec<PairRule>,
}

impl SymplecticStructure {
    /// Reads the pairs off the kinetic term. Under [`Convention::Paper`]
    /// the model's `symplectic` override lines replace the kinetic-derived
    /// coefficients of the pairs they name.
    pub fn extract(model: &ModelDef, convention: Convention) -> Result<SymplecticStructure, PhaseError> {
        let mut pairs = Vec::with_capacity(model.kinetic.len());
        for k in &model.kinetic {
            let decl = model.ctx.field(k.coord);
            let mut c = k.coeff.clone();
            if decl.antisym.is_some() {
                c = c.mul_int(2);
            }
            let coeff = c
                .inverse()
                .ok_or_else(|| PhaseError::NonInvertibleKinetic(decl.name.clone()))?;
            pairs.push(PairRule {
                coord: k.coord,
                mom: k.mom,
                slot_map: k.slot_map.clone(),
                coeff,
                antisym: decl.antisym,
            });
        }
        if convention == Convention::Paper {
            for ov in &model.overrides {
                let pair = pairs
                    .iter_mut()
                    .find(|p| p.coord == ov.coord && p.mom == ov.mom)
                    .ok_or_else(|| PhaseError::OrphanOverride {
                        coord: model.ctx.field(ov.coord).name.clone(),
                        mom: model.ctx.field(ov.mom).name.clone(),
                    })?;
                pair.coeff = ov.coeff.clone();
            }
        }
        Ok(SymplecticStructure { pairs })
    }

    pub fn pairs(&self) -> &[PairRule] {
        &self.pairs
    }

    pub fn pair_of_coord(&self, field: FieldId) -> Option<&PairRule> {
        self.pairs.iter().find(|p| p.coord == field)
    }

    pub fn pair_of_mom(&self, field: FieldId) -> Option<&PairRule> {
        self.pairs.iter().find(|p| p.mom == field)
    }

    /// The pair containing `field` on either side.
    pub fn pair_of(&self, field: FieldId) -> Option<&PairRule> {
        self.pairs
            .iter()
            .find(|p| p.coord == field || p.mom == field)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::builtin;
    use crate::scalar::ConstSym;

    #[test]
    fn second_chern_pairs_are_unit() {
        let m = builtin("second_chern").unwrap();
        let s = SymplecticStructure::extract(&m, m.convention).unwrap();
        assert_eq!(s.pairs().len(), 2);
        for p in s.pairs() {
            assert!(p.coeff.is_one());
            assert_eq!(p.antisym, None);
            assert_eq!(p.slot_map, vec![0, 1]);
        }
    }

    #[test]
    fn bf_ym_antisymmetric_pair_halves() {
        let m = builtin("bf_ym").unwrap();
        let s = SymplecticStructure::extract(&m, m.convention).unwrap();
        let b = m.ctx.field_id("B").unwrap();
        let q0 = m.ctx.field_id("Q0").unwrap();
        let bq = s.pair_of_coord(b).unwrap();
        assert_eq!(bq.coeff, ScalarCoeff::from_rational(1, 2));
        assert_eq!(bq.antisym, Some((1, 2)));
        // The doubled kinetic coefficient of the B0 pairing halves the
        // bracket even without antisymmetry.
        let b0 = s.pair_of_mom(q0).unwrap();
        assert_eq!(b0.coeff, ScalarCoeff::from_rational(1, 2));
        assert_eq!(b0.antisym, None);
    }

    #[test]
    fn euler_conventions_differ_in_one_sign() {
        let m = builtin("euler").unwrap();
        let ups = m.ctx.field_id("Ups").unwrap();
        let w = m.ctx.field_id("w").unwrap();
        let xi_over_omega = ScalarCoeff::constant(ConstSym::Xi, 1)
            .mul(&ScalarCoeff::constant(ConstSym::Omega, -1));

        let kinetic = SymplecticStructure::extract(&m, Convention::Kinetic).unwrap();
        assert_eq!(
            kinetic.pair_of_coord(ups).unwrap().coeff,
            xi_over_omega.neg()
        );
        assert_eq!(kinetic.pair_of_coord(w).unwrap().coeff, xi_over_omega.neg());

        let paper = SymplecticStructure::extract(&m, Convention::Paper).unwrap();
        assert_eq!(paper.pair_of_coord(ups).unwrap().coeff, xi_over_omega);
        assert_eq!(paper.pair_of_coord(w).unwrap().coeff, xi_over_omega.neg());
    }

    #[test]
    fn kernel_density_antisymmetrizes() {
        let m = builtin("bf_ym").unwrap();
        let s = SymplecticStructure::extract(&m, m.convention).unwrap();
        let b = m.ctx.field_id("B").unwrap();
        let rule = s.pair_of_coord(b).unwrap();
        let k = rule
            .kernel_density(&m.ctx, &["a1", "i1", "j1"], &["a2", "i2", "j2"])
            .unwrap();
        assert_eq!(k.terms().len(), 2);
        assert_eq!(k.free_sig().len(), 6);
    }
}
