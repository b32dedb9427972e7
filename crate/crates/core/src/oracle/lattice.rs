//! Periodic lattice functionals with deterministic pseudo-random field data.
//!
//! Functionals become site sums, spatial derivatives become central
//! differences (whose transpose under the site sum is exactly minus
//! themselves, so summation by parts holds without error terms), and
//! Poisson brackets are computed by exact per-component differentiation of
//! the compiled polynomial: every gradient entry is accumulated
//! analytically, never by finite differences in field space.
//!
//! Field data is a pure function of `(seed, field, components, site)`, so
//! every check replays bit-identically; antisymmetric index pairs are
//! resolved to an independent component with the sign of the reordering
//! before hashing.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::context::{Context, FieldId};
use crate::expr::{label_census, Expression, Factor, Term};
use crate::index::{Index, IndexLabel, Point};

use super::eval::{levi_civita, EvalEnv, OracleError};

/// Relative singular-value floor below which a bracket matrix counts as
/// degenerate.
pub const RANK_TOLERANCE: f64 = 1e-8;

/// A periodic hypercubic lattice with unit spacing.
#[derive(Debug, Clone)]
pub struct Lattice {
    size: usize,
    dims: usize,
    n_sites: usize,
}

impl Lattice {
    /// `size` sites along each of `dims` directions. Sizes below three make
    /// the two central-difference neighbours coincide, so they are rejected.
    pub fn new(size: usize, dims: usize) -> Lattice {
        assert!(size >= 3, "central differences need at least three sites");
        Lattice {
            size,
            dims,
            n_sites: size.pow(dims as u32),
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    /// Moves `steps` lattice units along direction `dir`, wrapping around.
    pub fn shift(&self, site: usize, dir: usize, steps: isize) -> usize {
        let stride = self.size.pow(dir as u32);
        let coord = (site / stride) % self.size;
        let moved = (coord as isize + steps).rem_euclid(self.size as isize) as usize;
        site - coord * stride + moved * stride
    }
}

fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Standard normal deviate by Box-Muller over two hash-derived uniforms.
fn gaussian(key: u64) -> f64 {
    let a = splitmix64(key);
    let b = splitmix64(a);
    let u1 = (((a >> 11) | 1) as f64) / (1u64 << 53) as f64;
    let u2 = ((b >> 11) as f64) / (1u64 << 53) as f64;
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// The independent components of one field under the concrete dimensions of
/// an evaluation environment, together with the sign map from arbitrary slot
/// tuples onto them.
#[derive(Debug, Clone)]
struct CompSpace {
    antisym: Option<(usize, usize)>,
    tuples: Vec<Vec<usize>>,
    lookup: BTreeMap<Vec<usize>, usize>,
}

impl CompSpace {
    fn for_field(env: &EvalEnv, ctx: &Context, field: FieldId) -> Result<CompSpace, OracleError> {
        let decl = ctx.field(field);
        let dims: Vec<usize> = decl
            .signature
            .iter()
            .map(|(fam, _)| env.dim(*fam))
            .collect::<Result<_, _>>()?;
        let antisym = decl.antisym;
        let mut tuples = Vec::new();
        let mut current = vec![0usize; dims.len()];
        loop {
            let independent = match antisym {
                Some((p, q)) => current[p] < current[q],
                None => true,
            };
            if independent {
                tuples.push(current.clone());
            }
            let mut pos = 0;
            loop {
                if pos == dims.len() {
                    let lookup = tuples
                        .iter()
                        .enumerate()
                        .map(|(i, t)| (t.clone(), i))
                        .collect();
                    return Ok(CompSpace {
                        antisym,
                        tuples,
                        lookup,
                    });
                }
                current[pos] += 1;
                if current[pos] < dims[pos] {
                    break;
                }
                current[pos] = 0;
                pos += 1;
            }
        }
    }

    fn n_indep(&self) -> usize {
        self.tuples.len()
    }

    /// Independent component index and reordering sign for an arbitrary slot
    /// tuple; `None` when the tuple vanishes identically (antisymmetric pair
    /// on equal values).
    fn resolve(&self, comps: &[usize]) -> Option<(usize, f64)> {
        if let Some((p, q)) = self.antisym {
            if comps[p] == comps[q] {
                return None;
            }
            if comps[p] > comps[q] {
                let mut swapped = comps.to_vec();
                swapped.swap(p, q);
                let idx = self.lookup[&swapped];
                return Some((idx, -1.0));
            }
        }
        Some((self.lookup[comps], 1.0))
    }
}

/// Accumulated gradient of one functional with respect to one field: a value
/// per independent component per site.
#[derive(Debug, Clone)]
pub struct FieldGradient {
    space: CompSpace,
    n_sites: usize,
    values: Vec<Complex64>,
}

impl FieldGradient {
    fn zeros(space: CompSpace, n_sites: usize) -> FieldGradient {
        let values = vec![Complex64::new(0.0, 0.0); space.n_indep() * n_sites];
        FieldGradient {
            space,
            n_sites,
            values,
        }
    }

    fn add(&mut self, comps: &[usize], site: usize, amount: Complex64) {
        if let Some((idx, sign)) = self.space.resolve(comps) {
            self.values[idx * self.n_sites + site] += amount * sign;
        }
    }

    /// Gradient entry at an independent component index and site.
    pub fn at(&self, indep: usize, site: usize) -> Complex64 {
        self.values[indep * self.n_sites + site]
    }

    pub fn n_indep(&self) -> usize {
        self.space.n_indep()
    }

    /// The independent slot tuples, in index order.
    pub fn components(&self) -> &[Vec<usize>] {
        &self.space.tuples
    }

    fn dot(&self, other: &FieldGradient) -> Complex64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }
}

/// One canonical pair with the diagonal bracket value of its independent
/// components: `{coord_k(x), mom_l(y)} = weight delta_kl delta(x, y)`.
#[derive(Debug, Clone)]
pub struct BracketPair {
    pub coord: FieldId,
    pub mom: FieldId,
    pub weight: Complex64,
}

/// Outcome of a numeric rank check: one relative singular-value margin per
/// trial, full rank iff every margin clears [`RANK_TOLERANCE`].
#[derive(Debug, Clone)]
pub struct RankVerdict {
    pub full_rank: bool,
    pub margins: Vec<f64>,
}

/// A seeded field assignment on a lattice, with the compiled evaluation and
/// differentiation entry points.
pub struct LatticeCheck<'a> {
    env: &'a EvalEnv<'a>,
    lattice: Lattice,
    seed: u64,
    unit: BTreeSet<FieldId>,
    bump: Option<Bump>,
    spaces: BTreeMap<FieldId, CompSpace>,
}

struct Bump {
    field: FieldId,
    comps: Vec<usize>,
    site: usize,
    amount: f64,
}

impl<'a> LatticeCheck<'a> {
    /// Fails if any family used by a declared field has no concrete
    /// dimension in `env`.
    pub fn new(env: &'a EvalEnv<'a>, lattice: Lattice, seed: u64) -> Result<Self, OracleError> {
        let ctx = env.ctx();
        let mut spaces = BTreeMap::new();
        for (id, _) in ctx.fields() {
            spaces.insert(id, CompSpace::for_field(env, ctx, id)?);
        }
        Ok(LatticeCheck {
            env,
            lattice,
            seed,
            unit: BTreeSet::new(),
            bump: None,
            spaces,
        })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    /// Values the field identically 1 instead of hashing (constant smearing).
    pub fn set_unit(&mut self, field: FieldId) -> &mut Self {
        self.unit.insert(field);
        self
    }

    /// Adds `amount` to one component at one site, for finite-difference
    /// cross-checks of the analytic gradients.
    pub fn set_bump(&mut self, field: FieldId, comps: &[usize], site: usize, amount: f64) {
        self.bump = Some(Bump {
            field,
            comps: comps.to_vec(),
            site,
            amount,
        });
    }

    pub fn clear_bump(&mut self) {
        self.bump = None;
    }

    /// The assigned value of one field component at one site.
    pub fn field_value(&self, field: FieldId, comps: &[usize], site: usize) -> f64 {
        let space = &self.spaces[&field];
        let Some((idx, sign)) = space.resolve(comps) else {
            return 0.0;
        };
        let canonical = &space.tuples[idx];
        let mut value = if self.unit.contains(&field) {
            1.0
        } else {
            let mut bytes = Vec::with_capacity(18 + canonical.len());
            bytes.extend_from_slice(&self.seed.to_le_bytes());
            bytes.extend_from_slice(&field.0.to_le_bytes());
            for &c in canonical {
                bytes.push(c as u8);
            }
            bytes.extend_from_slice(&(site as u64).to_le_bytes());
            gaussian(fnv1a(bytes))
        };
        if let Some(bump) = &self.bump {
            if bump.field == field && bump.site == site && bump.comps == *canonical {
                value += bump.amount;
            }
        }
        sign * value
    }

    /// Central-difference derivative stack applied to one component.
    pub fn value_with_derivs(
        &self,
        field: FieldId,
        comps: &[usize],
        derivs: &[usize],
        site: usize,
    ) -> f64 {
        match derivs.split_first() {
            None => self.field_value(field, comps, site),
            Some((&dir, rest)) => {
                let plus = self.value_with_derivs(field, comps, rest, self.lattice.shift(site, dir, 1));
                let minus =
                    self.value_with_derivs(field, comps, rest, self.lattice.shift(site, dir, -1));
                (plus - minus) / 2.0
            }
        }
    }

    fn term_points(term: &Term) -> Result<Vec<Point>, OracleError> {
        let mut points = BTreeSet::new();
        for factor in &term.factors {
            match factor {
                Factor::Field(occ) => {
                    points.insert(occ.point);
                }
                Factor::DeltaDist { .. } => return Err(OracleError::DeltaInNumericPath),
                _ => {}
            }
        }
        if points.is_empty() {
            points.insert(Point::BASE);
        }
        Ok(points.into_iter().collect())
    }

    /// Integrates a scalar expression: every point is summed over all sites
    /// independently, derivatives are central differences.
    pub fn functional(&self, expr: &Expression) -> Result<Complex64, OracleError> {
        let mut total = Complex64::new(0.0, 0.0);
        let free = BTreeMap::new();
        for term in expr.terms() {
            let points = Self::term_points(term)?;
            let mut sites = vec![0usize; points.len()];
            loop {
                let site_of: BTreeMap<Point, usize> =
                    points.iter().copied().zip(sites.iter().copied()).collect();
                let mut value = |f: FieldId, s: &[usize], d: &[usize], p: Point| {
                    Complex64::new(self.value_with_derivs(f, s, d, site_of[&p]), 0.0)
                };
                total +=
                    super::eval::eval_terms(self.env, std::slice::from_ref(term), &free, &mut value)?;
                let mut pos = 0;
                loop {
                    if pos == sites.len() {
                        break;
                    }
                    sites[pos] += 1;
                    if sites[pos] < self.lattice.n_sites {
                        break;
                    }
                    sites[pos] = 0;
                    pos += 1;
                }
                if sites.iter().all(|&s| s == 0) {
                    break;
                }
            }
        }
        Ok(total)
    }

    /// Exact gradients of a scalar functional with respect to each target
    /// field, accumulated through the product rule and the difference
    /// stencils.
    pub fn gradients(
        &self,
        expr: &Expression,
        targets: &[FieldId],
    ) -> Result<BTreeMap<FieldId, FieldGradient>, OracleError> {
        let mut out = self.empty_gradients(targets);
        let free = BTreeMap::new();
        for term in expr.terms() {
            let points = Self::term_points(term)?;
            let mut sites = vec![0usize; points.len()];
            loop {
                let site_of: BTreeMap<Point, usize> =
                    points.iter().copied().zip(sites.iter().copied()).collect();
                self.accumulate_term(term, &free, &site_of, Complex64::new(1.0, 0.0), &mut out)?;
                let mut pos = 0;
                loop {
                    if pos == sites.len() {
                        break;
                    }
                    sites[pos] += 1;
                    if sites[pos] < self.lattice.n_sites {
                        break;
                    }
                    sites[pos] = 0;
                    pos += 1;
                }
                if sites.iter().all(|&s| s == 0) {
                    break;
                }
            }
        }
        Ok(out)
    }

    /// Gradients of `sum_x w(x) body(x)`: the single-point density smeared
    /// with an explicit per-site weight vector.
    pub fn smeared_gradients(
        &self,
        body: &Expression,
        free: &BTreeMap<String, usize>,
        weights: &[Complex64],
        targets: &[FieldId],
    ) -> Result<BTreeMap<FieldId, FieldGradient>, OracleError> {
        let mut out = self.empty_gradients(targets);
        for term in body.terms() {
            let points = Self::term_points(term)?;
            for (site, &w) in weights.iter().enumerate() {
                if w == Complex64::new(0.0, 0.0) {
                    continue;
                }
                let site_of: BTreeMap<Point, usize> =
                    points.iter().map(|&p| (p, site)).collect();
                self.accumulate_term(term, free, &site_of, w, &mut out)?;
            }
        }
        Ok(out)
    }

    fn empty_gradients(&self, targets: &[FieldId]) -> BTreeMap<FieldId, FieldGradient> {
        targets
            .iter()
            .map(|&f| {
                (
                    f,
                    FieldGradient::zeros(self.spaces[&f].clone(), self.lattice.n_sites),
                )
            })
            .collect()
    }

    fn accumulate_term(
        &self,
        term: &Term,
        free: &BTreeMap<String, usize>,
        site_of: &BTreeMap<Point, usize>,
        weight: Complex64,
        out: &mut BTreeMap<FieldId, FieldGradient>,
    ) -> Result<(), OracleError> {
        let census = label_census(self.env.ctx(), term).expect("term validated before evaluation");
        let mut dummies: Vec<(IndexLabel, usize)> = Vec::new();
        for (label, (fam, count, _)) in &census {
            if *count == 2 {
                dummies.push((label.clone(), self.env.dim(*fam)?));
            } else if let IndexLabel::Named(name) = label {
                if !free.contains_key(name) {
                    return Err(OracleError::MissingFree(name.clone()));
                }
            } else {
                return Err(OracleError::MissingFree(format!("{label:?}")));
            }
        }

        let coeff = self.env.coeff_value(&term.coeff)? * weight;
        let zero = Complex64::new(0.0, 0.0);
        let n = term.factors.len();
        let mut assignment: BTreeMap<IndexLabel, usize> = BTreeMap::new();
        let mut odometer = vec![0usize; dummies.len()];
        let mut values = vec![zero; n];
        let mut prefix = vec![zero; n + 1];
        let mut suffix = vec![zero; n + 1];

        loop {
            assignment.clear();
            for (slot, (label, _)) in dummies.iter().enumerate() {
                assignment.insert(label.clone(), odometer[slot]);
            }
            let resolve = |idx: &Index| -> Result<usize, OracleError> {
                if let Some(v) = assignment.get(&idx.label) {
                    return Ok(*v);
                }
                match &idx.label {
                    IndexLabel::Named(name) => free
                        .get(name)
                        .copied()
                        .ok_or_else(|| OracleError::MissingFree(name.clone())),
                    IndexLabel::Dummy(k) => Err(OracleError::MissingFree(format!("#{k}"))),
                }
            };

            for (k, factor) in term.factors.iter().enumerate() {
                values[k] = match factor {
                    Factor::Field(occ) => {
                        let slots: Vec<usize> =
                            occ.indices.iter().map(&resolve).collect::<Result<_, _>>()?;
                        let derivs: Vec<usize> =
                            occ.derivs.iter().map(&resolve).collect::<Result<_, _>>()?;
                        Complex64::new(
                            self.value_with_derivs(occ.field, &slots, &derivs, site_of[&occ.point]),
                            0.0,
                        )
                    }
                    Factor::Epsilon { indices } => {
                        let vals: Vec<usize> =
                            indices.iter().map(&resolve).collect::<Result<_, _>>()?;
                        Complex64::new(levi_civita(&vals), 0.0)
                    }
                    Factor::Structure { indices } => {
                        let vals: Vec<usize> =
                            indices.iter().map(&resolve).collect::<Result<_, _>>()?;
                        Complex64::new(self.env.structure_value(vals[0], vals[1], vals[2])?, 0.0)
                    }
                    Factor::Kron { a, b } => {
                        if resolve(a)? == resolve(b)? {
                            Complex64::new(1.0, 0.0)
                        } else {
                            zero
                        }
                    }
                    Factor::DeltaDist { .. } => return Err(OracleError::DeltaInNumericPath),
                };
            }
            prefix[0] = Complex64::new(1.0, 0.0);
            for k in 0..n {
                prefix[k + 1] = prefix[k] * values[k];
            }
            suffix[n] = Complex64::new(1.0, 0.0);
            for k in (0..n).rev() {
                suffix[k] = suffix[k + 1] * values[k];
            }

            for (k, factor) in term.factors.iter().enumerate() {
                let Factor::Field(occ) = factor else {
                    continue;
                };
                if !out.contains_key(&occ.field) {
                    continue;
                }
                let cofactor = coeff * prefix[k] * suffix[k + 1];
                if cofactor == zero {
                    continue;
                }
                let slots: Vec<usize> =
                    occ.indices.iter().map(&resolve).collect::<Result<_, _>>()?;
                let derivs: Vec<usize> =
                    occ.derivs.iter().map(&resolve).collect::<Result<_, _>>()?;
                let grad = out.get_mut(&occ.field).expect("target checked above");
                self.distribute(grad, &slots, &derivs, site_of[&occ.point], cofactor);
            }

            let mut pos = 0;
            loop {
                if pos == dummies.len() {
                    return Ok(());
                }
                odometer[pos] += 1;
                if odometer[pos] < dummies[pos].1 {
                    break;
                }
                odometer[pos] = 0;
                pos += 1;
            }
            if dummies.is_empty() {
                return Ok(());
            }
        }
    }

    /// Deposits `amount` through the adjoint of the difference stencil: the
    /// derivative of `(D_dirs u)(site)` with respect to `u(target)`.
    fn distribute(
        &self,
        grad: &mut FieldGradient,
        comps: &[usize],
        dirs: &[usize],
        site: usize,
        amount: Complex64,
    ) {
        match dirs.split_first() {
            None => grad.add(comps, site, amount),
            Some((&dir, rest)) => {
                let half = amount * 0.5;
                self.distribute(grad, comps, rest, self.lattice.shift(site, dir, 1), half);
                self.distribute(grad, comps, rest, self.lattice.shift(site, dir, -1), -half);
            }
        }
    }

    /// `{F, G}` over the given canonical pairs: exact gradient contraction,
    /// `sum_pairs w sum_{k,x} (dF/dq dG/dp - dF/dp dG/dq)`.
    pub fn bracket(
        &self,
        pairs: &[BracketPair],
        f: &Expression,
        g: &Expression,
    ) -> Result<Complex64, OracleError> {
        let mut targets: Vec<FieldId> = Vec::new();
        for pair in pairs {
            for field in [pair.coord, pair.mom] {
                if !targets.contains(&field) {
                    targets.push(field);
                }
            }
        }
        let gf = self.gradients(f, &targets)?;
        let gg = self.gradients(g, &targets)?;
        let mut total = Complex64::new(0.0, 0.0);
        for pair in pairs {
            let fq = &gf[&pair.coord];
            let fp = &gf[&pair.mom];
            let gq = &gg[&pair.coord];
            let gp = &gg[&pair.mom];
            total += pair.weight * (fq.dot(gp) - fp.dot(gq));
        }
        Ok(total)
    }
}

/// Domain separator so smearing weights never collide with field values.
const SMEAR_TAG: u64 = 0x536d_6561_7257_7467;

/// Deterministic per-site smearing weights for one row of a rank check.
fn smearing_weights(seed: u64, row: usize, n_sites: usize) -> Vec<Complex64> {
    (0..n_sites)
        .map(|site| {
            let mut bytes = Vec::with_capacity(24);
            bytes.extend_from_slice(&seed.to_le_bytes());
            bytes.extend_from_slice(&(row as u64).to_le_bytes());
            bytes.extend_from_slice(&(site as u64).to_le_bytes());
            Complex64::new(gaussian(fnv1a(bytes) ^ SMEAR_TAG), 0.0)
        })
        .collect()
}

/// Numeric nondegeneracy check of a constraint set: each listed component
/// `(body, free assignment)` is smeared with an independent deterministic
/// weight function, the full antisymmetric matrix of pairwise brackets is
/// assembled, and the relative singular-value margin is recorded per trial.
///
/// An empty component list is vacuously full rank.
pub fn rank_check(
    env: &EvalEnv,
    lattice: &Lattice,
    pairs: &[BracketPair],
    components: &[(&Expression, BTreeMap<String, usize>)],
    seed: u64,
    trials: usize,
) -> Result<RankVerdict, OracleError> {
    let mut margins = Vec::with_capacity(trials);
    if components.is_empty() {
        return Ok(RankVerdict {
            full_rank: true,
            margins,
        });
    }
    let mut targets: Vec<FieldId> = Vec::new();
    for pair in pairs {
        for field in [pair.coord, pair.mom] {
            if !targets.contains(&field) {
                targets.push(field);
            }
        }
    }
    for trial in 0..trials {
        let trial_seed = splitmix64(seed ^ (trial as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let check = LatticeCheck::new(env, lattice.clone(), trial_seed)?;
        let grads: Vec<BTreeMap<FieldId, FieldGradient>> = components
            .iter()
            .enumerate()
            .map(|(row, (body, free))| {
                let weights = smearing_weights(trial_seed, row, lattice.n_sites());
                check.smeared_gradients(body, free, &weights, &targets)
            })
            .collect::<Result<_, _>>()?;
        let n = components.len();
        let mut m = DMatrix::<Complex64>::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let mut entry = Complex64::new(0.0, 0.0);
                for pair in pairs {
                    let fq = &grads[i][&pair.coord];
                    let fp = &grads[i][&pair.mom];
                    let gq = &grads[j][&pair.coord];
                    let gp = &grads[j][&pair.mom];
                    entry += pair.weight * (fq.dot(gp) - fp.dot(gq));
                }
                m[(i, j)] = entry;
                m[(j, i)] = -entry;
            }
        }
        let singular = m.svd(false, false).singular_values;
        let max = singular.iter().cloned().fold(0.0f64, f64::max);
        let min = singular.iter().cloned().fold(f64::INFINITY, f64::min);
        let margin = if max == 0.0 { 0.0 } else { min / max };
        margins.push(margin);
    }
    let full_rank = margins.iter().all(|&m| m > RANK_TOLERANCE);
    Ok(RankVerdict { full_rank, margins })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::{FieldDecl, FieldKind};
    use crate::expr::FieldOccurrence;
    use crate::index::Variance;
    use crate::scalar::ScalarCoeff;
    use crate::test_fixtures::{occ, so3_context};

    fn docc(field: FieldId, indices: &[Index], derivs: &[Index]) -> Factor {
        Factor::Field(FieldOccurrence {
            field,
            indices: indices.to_vec(),
            derivs: derivs.to_vec(),
            point: Point::BASE,
        })
    }

    #[test]
    fn shift_wraps_periodically() {
        let lat = Lattice::new(3, 2);
        assert_eq!(lat.n_sites(), 9);
        assert_eq!(lat.shift(0, 0, 1), 1);
        assert_eq!(lat.shift(2, 0, 1), 0);
        assert_eq!(lat.shift(0, 0, -1), 2);
        assert_eq!(lat.shift(0, 1, 1), 3);
        assert_eq!(lat.shift(6, 1, 1), 0);
        assert_eq!(lat.shift(4, 1, -2), 7);
    }

    #[test]
    fn antisymmetric_fields_value_with_a_sign() {
        let (mut ctx, fam) = so3_context();
        let b = ctx
            .add_field(FieldDecl {
                name: "B".into(),
                kind: FieldKind::Coordinate,
                signature: vec![(fam, Variance::Down), (fam, Variance::Down)],
                antisym: Some((0, 1)),
                weight: 0,
            })
            .unwrap();
        let env = EvalEnv::new(&ctx);
        let check = LatticeCheck::new(&env, Lattice::new(3, 3), 7).unwrap();
        for site in [0usize, 5, 26] {
            assert_eq!(check.field_value(b, &[1, 1], site), 0.0);
            let v = check.field_value(b, &[0, 2], site);
            assert_ne!(v, 0.0);
            assert_eq!(check.field_value(b, &[2, 0], site), -v);
            // Replay is bit-identical.
            assert_eq!(check.field_value(b, &[0, 2], site), v);
        }
        let other = LatticeCheck::new(&env, Lattice::new(3, 3), 8).unwrap();
        assert_ne!(
            other.field_value(b, &[0, 2], 5),
            check.field_value(b, &[0, 2], 5)
        );
    }

    #[test]
    fn constant_density_integrates_to_the_volume() {
        let (ctx, _) = so3_context();
        let env = EvalEnv::new(&ctx);
        let check = LatticeCheck::new(&env, Lattice::new(4, 3), 1).unwrap();
        let expr = Expression::from_terms(
            &ctx,
            vec![Term::new(ScalarCoeff::from_rational(3, 2), vec![])],
        )
        .unwrap();
        let got = check.functional(&expr).unwrap();
        assert_eq!(got, Complex64::new(1.5 * 64.0, 0.0));
    }

    #[test]
    fn unit_smearing_reduces_to_a_site_sum() {
        let (mut ctx, fam) = so3_context();
        let lam = ctx.add_parameter("lam", vec![(fam, Variance::Down)], None);
        let w = ctx.field_id("W").unwrap();
        let env = EvalEnv::new(&ctx);
        let mut check = LatticeCheck::new(&env, Lattice::new(3, 3), 11).unwrap();
        check.set_unit(lam);
        let expr = Expression::from_terms(
            &ctx,
            vec![Term::new(
                ScalarCoeff::one(),
                vec![
                    occ(lam, &[Index::named(fam, "m")]),
                    occ(w, &[Index::named(fam, "m")]),
                ],
            )],
        )
        .unwrap();
        let got = check.functional(&expr).unwrap();
        let mut want = 0.0;
        for site in 0..27 {
            for m in 0..3 {
                want += check.field_value(w, &[m], site);
            }
        }
        assert!((got - Complex64::new(want, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn functional_matches_a_straight_line_expansion() {
        // F = sum_x W_m (d_m V_n) W_n against a literal loop nest.
        let (ctx, fam) = so3_context();
        let v = ctx.field_id("V").unwrap();
        let w = ctx.field_id("W").unwrap();
        let env = EvalEnv::new(&ctx);
        let check = LatticeCheck::new(&env, Lattice::new(3, 3), 23).unwrap();
        let expr = Expression::from_terms(
            &ctx,
            vec![Term::new(
                ScalarCoeff::one(),
                vec![
                    occ(w, &[Index::named(fam, "m")]),
                    docc(v, &[Index::named(fam, "n")], &[Index::named(fam, "m")]),
                    occ(w, &[Index::named(fam, "n")]),
                ],
            )],
        )
        .unwrap();
        let got = check.functional(&expr).unwrap();
        let lat = check.lattice().clone();
        let mut want = 0.0;
        for site in 0..lat.n_sites() {
            for m in 0..3 {
                for n in 0..3 {
                    let fwd = check.field_value(v, &[n], lat.shift(site, m, 1));
                    let bwd = check.field_value(v, &[n], lat.shift(site, m, -1));
                    want += check.field_value(w, &[m], site)
                        * ((fwd - bwd) / 2.0)
                        * check.field_value(w, &[n], site);
                }
            }
        }
        assert!((got - Complex64::new(want, 0.0)).norm() < 1e-9 * want.abs().max(1.0));
    }

    /// `sum_x V_m W_m V_n (d_p d_p W_n)`: nonlinear in both fields, with a
    /// repeated derivative stack to exercise nested stencils.
    fn quartic(ctx: &Context, fam: crate::index::FamilyId) -> Expression {
        let v = ctx.field_id("V").unwrap();
        let w = ctx.field_id("W").unwrap();
        Expression::from_terms(
            ctx,
            vec![Term::new(
                ScalarCoeff::one(),
                vec![
                    occ(v, &[Index::named(fam, "m")]),
                    occ(w, &[Index::named(fam, "m")]),
                    occ(v, &[Index::named(fam, "n")]),
                    docc(
                        w,
                        &[Index::named(fam, "n")],
                        &[Index::named(fam, "p"), Index::named(fam, "p")],
                    ),
                ],
            )],
        )
        .unwrap()
    }

    #[test]
    fn gradients_match_field_space_finite_differences() {
        // F = sum_x V_m W_m V_n (d_p d_p W_n): nonlinear in V, derivative
        // stencils on W; the analytic gradient must match a central
        // difference in field space exactly (F is polynomial of degree 2 in
        // each single component, so the difference quotient is exact).
        let (ctx, fam) = so3_context();
        let v = ctx.field_id("V").unwrap();
        let w = ctx.field_id("W").unwrap();
        let env = EvalEnv::new(&ctx);
        let mut check = LatticeCheck::new(&env, Lattice::new(3, 3), 31).unwrap();
        let expr = quartic(&ctx, fam);
        let grads = check.gradients(&expr, &[v, w]).unwrap();
        let eps = 1e-5;
        for (field, comp, site) in [(v, 1usize, 4usize), (w, 0, 13), (w, 2, 26), (v, 0, 0)] {
            check.set_bump(field, &[comp], site, eps);
            let plus = check.functional(&expr).unwrap();
            check.set_bump(field, &[comp], site, -eps);
            let minus = check.functional(&expr).unwrap();
            check.clear_bump();
            let fd = (plus - minus) / (2.0 * eps);
            let analytic = grads[&field].at(comp, site);
            assert!(
                (fd - analytic).norm() <= 1e-8 * analytic.norm().max(1.0),
                "field {field:?} comp {comp} site {site}: fd {fd} vs analytic {analytic}"
            );
        }
    }

    #[test]
    fn bracket_with_itself_vanishes() {
        let (ctx, fam) = so3_context();
        let v = ctx.field_id("V").unwrap();
        let w = ctx.field_id("W").unwrap();
        let env = EvalEnv::new(&ctx);
        let check = LatticeCheck::new(&env, Lattice::new(3, 3), 5).unwrap();
        let f = quartic(&ctx, fam);
        let pairs = [BracketPair {
            coord: v,
            mom: w,
            weight: Complex64::new(1.0, 0.0),
        }];
        let got = check.bracket(&pairs, &f, &f).unwrap();
        assert!(got.norm() < 1e-12);
    }

    #[test]
    fn bracket_matches_the_hand_formula() {
        // F = sum V_m W_m, G = sum V_n V_n: {F, G} = -2 sum_x V.V.
        let (ctx, fam) = so3_context();
        let v = ctx.field_id("V").unwrap();
        let w = ctx.field_id("W").unwrap();
        let env = EvalEnv::new(&ctx);
        let check = LatticeCheck::new(&env, Lattice::new(3, 3), 17).unwrap();
        let f = Expression::from_terms(
            &ctx,
            vec![Term::new(
                ScalarCoeff::one(),
                vec![
                    occ(v, &[Index::named(fam, "m")]),
                    occ(w, &[Index::named(fam, "m")]),
                ],
            )],
        )
        .unwrap();
        let g = Expression::from_terms(
            &ctx,
            vec![Term::new(
                ScalarCoeff::one(),
                vec![
                    occ(v, &[Index::named(fam, "n")]),
                    occ(v, &[Index::named(fam, "n")]),
                ],
            )],
        )
        .unwrap();
        let pairs = [BracketPair {
            coord: v,
            mom: w,
            weight: Complex64::new(1.0, 0.0),
        }];
        let got = check.bracket(&pairs, &f, &g).unwrap();
        let mut want = 0.0;
        for site in 0..27 {
            for c in 0..3 {
                let x = check.field_value(v, &[c], site);
                want -= 2.0 * x * x;
            }
        }
        assert!((got - Complex64::new(want, 0.0)).norm() < 1e-9 * want.abs());
    }

    #[test]
    fn rank_check_separates_canonical_and_commuting_sets() {
        let (ctx, fam) = so3_context();
        let v = ctx.field_id("V").unwrap();
        let w = ctx.field_id("W").unwrap();
        let env = EvalEnv::new(&ctx);
        let lat = Lattice::new(3, 3);
        let pairs = [BracketPair {
            coord: v,
            mom: w,
            weight: Complex64::new(1.0, 0.0),
        }];
        let body_v = Expression::from_terms(
            &ctx,
            vec![Term::new(ScalarCoeff::one(), vec![occ(v, &[Index::named(fam, "i")])])],
        )
        .unwrap();
        let body_w = Expression::from_terms(
            &ctx,
            vec![Term::new(ScalarCoeff::one(), vec![occ(w, &[Index::named(fam, "i")])])],
        )
        .unwrap();
        let assign = |i: usize| BTreeMap::from([("i".to_string(), i)]);

        // V_i and W_j together pair into a nondegenerate block.
        let mut comps: Vec<(&Expression, BTreeMap<String, usize>)> = Vec::new();
        for i in 0..3 {
            comps.push((&body_v, assign(i)));
            comps.push((&body_w, assign(i)));
        }
        let verdict = rank_check(&env, &lat, &pairs, &comps, 99, 2).unwrap();
        assert!(verdict.full_rank, "margins {:?}", verdict.margins);
        assert_eq!(verdict.margins.len(), 2);

        // The W_i alone commute with each other: rank deficient.
        let commuting: Vec<(&Expression, BTreeMap<String, usize>)> =
            (0..3).map(|i| (&body_w, assign(i))).collect();
        let verdict = rank_check(&env, &lat, &pairs, &commuting, 99, 2).unwrap();
        assert!(!verdict.full_rank);

        // Empty block: vacuously full rank.
        let verdict = rank_check(&env, &lat, &pairs, &[], 99, 2).unwrap();
        assert!(verdict.full_rank);
        assert!(verdict.margins.is_empty());
    }

    #[test]
    fn rank_check_flags_a_first_class_set() {
        // Angular momenta L_i = eps_ijk V_j W_k close on themselves, so the
        // smeared 3x3 bracket matrix is antisymmetric of odd size: singular.
        let (ctx, fam) = so3_context();
        let v = ctx.field_id("V").unwrap();
        let w = ctx.field_id("W").unwrap();
        let env = EvalEnv::new(&ctx);
        let pairs = [BracketPair {
            coord: v,
            mom: w,
            weight: Complex64::new(1.0, 0.0),
        }];
        let body = Expression::from_terms(
            &ctx,
            vec![Term::new(
                ScalarCoeff::one(),
                vec![
                    Factor::Epsilon {
                        indices: vec![
                            Index::named(fam, "i"),
                            Index::named(fam, "j"),
                            Index::named(fam, "k"),
                        ],
                    },
                    occ(v, &[Index::named(fam, "j")]),
                    occ(w, &[Index::named(fam, "k")]),
                ],
            )],
        )
        .unwrap();
        let comps: Vec<(&Expression, BTreeMap<String, usize>)> = (0..3)
            .map(|i| (&body, BTreeMap::from([("i".to_string(), i)])))
            .collect();
        let verdict = rank_check(&env, &Lattice::new(3, 3), &pairs, &comps, 4, 3).unwrap();
        assert!(!verdict.full_rank);
        // The degeneracy is structural, not numerical luck: every trial.
        assert!(verdict.margins.iter().all(|&m| m <= RANK_TOLERANCE));
    }
}
