//! Canonical form for tensor terms.
//!
//! The pipeline per input term:
//!
//! 1. structural validation (arities, family consistency, label use <= 2);
//! 2. local normalization (sorted derivative multisets, antisymmetric index
//!    blocks sorted with parity sign, delta distributions oriented);
//! 3. contraction loop: Kronecker deltas are eliminated against other
//!    factors or traced, and any two epsilon symbols over one family are
//!    expanded into Kronecker products via the determinant identity;
//! 4. dummy relabeling: summed labels are replaced by numbered dummies.
//!    Factors are grouped by a renaming-invariant skeleton key, every
//!    arrangement of each group is tried, and within each factor the
//!    first-appearance numbering walk additionally tries every order of the
//!    distinct dummy labels of each reorderable block (derivative multisets,
//!    epsilon and structure index lists, Kronecker pairs, antisymmetric slot
//!    pairs, and bound points of delta distributions). The lexicographically
//!    least relabeled, re-sorted term wins; a term whose least form arises
//!    with both signs cancels to zero.
//!
//! Equal canonical factor lists are merged by adding coefficients (which
//! requires equal constant monomials; the monomial is part of the merge
//! key). Canonicalization is idempotent because the candidate set is an
//! invariant of the term's renaming orbit: stored orders inside reorderable
//! blocks never influence which numberings are reachable.

use std::collections::BTreeMap;

use crate::context::Context;
use crate::index::{FamilyId, Index, IndexLabel, Point};
use crate::scalar::ScalarCoeff;

use super::{
    label_census, render, Expression, ExprError, Factor, FreeSig, PointPolicy, Term,
    DELTA_DERIV_CAP,
};

/// Permutation-search width guard: groups of equal-skeleton factors larger
/// than this would need 9!+ arrangements; nothing in scope comes close.
const MAX_GROUP: usize = 8;

/// Guard on the total number of relabeling candidates (group arrangements
/// times per-block visit orders) tried for a single term.
const CANDIDATE_CAP: u128 = 1_000_000;

pub(crate) fn canonicalize(
    ctx: &Context,
    terms: Vec<Term>,
    policy: PointPolicy,
) -> Result<Expression, ExprError> {
    let mut worklist: Vec<Term> = Vec::with_capacity(terms.len());
    for term in terms {
        validate(ctx, &term)?;
        worklist.push(term);
    }

    let mut reduced: Vec<Term> = Vec::new();
    while let Some(term) = worklist.pop() {
        if term.coeff.is_zero() {
            continue;
        }
        match reduce_once(ctx, term)? {
            Reduction::Zero => {}
            Reduction::Done(t) => reduced.push(t),
            Reduction::Again(ts) => worklist.extend(ts),
        }
    }

    let mut canonical: Vec<Term> = Vec::new();
    for term in reduced {
        if let Some(t) = relabel_minimal(ctx, term, policy)? {
            canonical.push(t);
        }
    }

    // Merge terms with identical factor lists and like monomials.
    let mut merged: BTreeMap<(Vec<Factor>, crate::scalar::Monomial), ScalarCoeff> =
        BTreeMap::new();
    for term in canonical {
        let key = (term.factors.clone(), term.coeff.monomial().clone());
        match merged.get_mut(&key) {
            None => {
                merged.insert(key, term.coeff);
            }
            Some(c) => {
                *c = c
                    .try_add(&term.coeff)
                    .expect("merge key includes the monomial");
            }
        }
    }

    let mut out: Vec<Term> = merged
        .into_iter()
        .filter(|(_, c)| !c.is_zero())
        .map(|((factors, _), coeff)| Term { coeff, factors })
        .collect();
    out.sort();

    // Free signature: common across terms. Rendering variance is cosmetic
    // under a delta metric and does not participate in the comparison; the
    // first term's choice wins.
    let mut sig: Option<FreeSig> = None;
    for term in &out {
        let s = term_sig(ctx, term)?;
        match &sig {
            None => sig = Some(s),
            Some(prev) => {
                let families_match = prev.len() == s.len()
                    && prev
                        .iter()
                        .zip(s.iter())
                        .all(|((la, (fa, _)), (lb, (fb, _)))| la == lb && fa == fb);
                if !families_match {
                    return Err(ExprError::SigMismatch(
                        render::sig_string(ctx, prev),
                        render::sig_string(ctx, &s),
                    ));
                }
            }
        }
    }
    Ok(Expression::from_canonical_parts(
        out,
        sig.unwrap_or_default(),
    ))
}

fn term_sig(ctx: &Context, term: &Term) -> Result<FreeSig, ExprError> {
    let census = label_census(ctx, term)?;
    let mut sig = FreeSig::new();
    for (label, (fam, count, var)) in census {
        if count == 1 {
            if let IndexLabel::Named(name) = label {
                sig.insert(name, (fam, var));
            }
        }
    }
    Ok(sig)
}

fn validate(ctx: &Context, term: &Term) -> Result<(), ExprError> {
    label_census(ctx, term)?;
    for factor in &term.factors {
        match factor {
            Factor::Field(occ) => {
                let decl = ctx.field(occ.field);
                if occ.indices.len() != decl.arity() {
                    return Err(ExprError::Arity {
                        field: decl.name.clone(),
                        expected: decl.arity(),
                        got: occ.indices.len(),
                    });
                }
                for (pos, idx) in occ.indices.iter().enumerate() {
                    let want = decl.signature[pos].0;
                    if idx.family != want {
                        return Err(ExprError::FamilyClash {
                            label: render::label_debug(&idx.label),
                            fam_a: ctx.family(want).name.clone(),
                            fam_b: ctx.family(idx.family).name.clone(),
                        });
                    }
                }
                for idx in &occ.derivs {
                    check_spatial(ctx, idx)?;
                }
            }
            Factor::Epsilon { indices } => {
                let fam = indices
                    .first()
                    .map(|i| i.family)
                    .ok_or_else(|| ExprError::EpsilonArity {
                        family: String::from("?"),
                        dim: 0,
                        got: 0,
                    })?;
                let decl = ctx.family(fam);
                if !decl.has_epsilon {
                    return Err(ExprError::EpsilonNotAllowed(decl.name.clone()));
                }
                let dim = decl
                    .dim
                    .as_constant()
                    .expect("epsilon families have concrete dimension") as usize;
                if indices.len() != dim || indices.iter().any(|i| i.family != fam) {
                    return Err(ExprError::EpsilonArity {
                        family: decl.name.clone(),
                        dim,
                        got: indices.len(),
                    });
                }
            }
            Factor::Structure { indices } => {
                let fam = indices[0].family;
                let decl = ctx.family(fam);
                if !decl.has_structure || indices.iter().any(|i| i.family != fam) {
                    return Err(ExprError::StructureNotAllowed(decl.name.clone()));
                }
            }
            Factor::Kron { a, b } => {
                if a.family != b.family {
                    return Err(ExprError::FamilyClash {
                        label: render::label_debug(&b.label),
                        fam_a: ctx.family(a.family).name.clone(),
                        fam_b: ctx.family(b.family).name.clone(),
                    });
                }
            }
            Factor::DeltaDist {
                left,
                right,
                derivs,
            } => {
                if left == right {
                    return Err(ExprError::CoincidentDelta);
                }
                if derivs.len() > DELTA_DERIV_CAP {
                    return Err(ExprError::DeltaDerivCap);
                }
                for idx in derivs {
                    check_spatial(ctx, idx)?;
                }
            }
        }
    }
    Ok(())
}

fn check_spatial(ctx: &Context, idx: &Index) -> Result<(), ExprError> {
    let spatial = ctx.spatial_family().ok_or(ExprError::NoSpatialFamily)?;
    if idx.family != spatial {
        return Err(ExprError::NonSpatialDerivative(
            ctx.family(idx.family).name.clone(),
        ));
    }
    Ok(())
}

enum Reduction {
    Zero,
    Done(Term),
    Again(Vec<Term>),
}

/// Applies local normalizations, then at most one rewrite (Kronecker
/// contraction or epsilon-pair expansion).
fn reduce_once(ctx: &Context, term: Term) -> Result<Reduction, ExprError> {
    let mut coeff = term.coeff;
    let mut factors: Vec<Factor> = Vec::with_capacity(term.factors.len());

    for factor in term.factors {
        match factor {
            Factor::Field(mut occ) => {
                occ.derivs.sort();
                let decl = ctx.field(occ.field);
                if let Some((p, q)) = decl.antisym {
                    match occ.indices[p].cmp(&occ.indices[q]) {
                        std::cmp::Ordering::Equal => return Ok(Reduction::Zero),
                        std::cmp::Ordering::Greater => {
                            occ.indices.swap(p, q);
                            coeff = coeff.neg();
                        }
                        std::cmp::Ordering::Less => {}
                    }
                }
                factors.push(Factor::Field(occ));
            }
            Factor::Epsilon { indices } => {
                let (sorted, sign) = sort_antisym(indices);
                match sign {
                    None => return Ok(Reduction::Zero),
                    Some(-1) => coeff = coeff.neg(),
                    _ => {}
                }
                factors.push(Factor::Epsilon { indices: sorted });
            }
            Factor::Structure { indices } => {
                let (sorted, sign) = sort_antisym(indices.to_vec());
                match sign {
                    None => return Ok(Reduction::Zero),
                    Some(-1) => coeff = coeff.neg(),
                    _ => {}
                }
                factors.push(Factor::Structure {
                    indices: [sorted[0].clone(), sorted[1].clone(), sorted[2].clone()],
                });
            }
            Factor::Kron { a, b } => {
                let (a, b) = if a <= b { (a, b) } else { (b, a) };
                factors.push(Factor::Kron { a, b });
            }
            Factor::DeltaDist {
                left,
                right,
                mut derivs,
            } => {
                derivs.sort();
                if left > right {
                    if derivs.len() % 2 == 1 {
                        coeff = coeff.neg();
                    }
                    factors.push(Factor::DeltaDist {
                        left: right,
                        right: left,
                        derivs,
                    });
                } else {
                    factors.push(Factor::DeltaDist {
                        left,
                        right,
                        derivs,
                    });
                }
            }
        }
    }

    // Kronecker contraction: eliminate the first delta that touches
    // anything, or trace it.
    for pos in 0..factors.len() {
        let Factor::Kron { a, b } = &factors[pos] else {
            continue;
        };
        let (a, b) = (a.clone(), b.clone());
        if a.label == b.label {
            let decl = ctx.family(a.family);
            let dim = decl
                .dim
                .as_constant()
                .ok_or_else(|| ExprError::SymbolicTrace(decl.name.clone()))?;
            factors.remove(pos);
            return Ok(Reduction::Again(vec![Term::new(
                coeff.mul_int(dim),
                factors,
            )]));
        }
        let occurs = |idx: &Index| {
            factors
                .iter()
                .enumerate()
                .any(|(j, f)| j != pos && f.labels().iter().any(|l| *l == idx))
        };
        let (kill, keep) = if occurs(&b) {
            (b, a)
        } else if occurs(&a) {
            (a, b)
        } else {
            continue;
        };
        factors.remove(pos);
        let mapped: Vec<Factor> = factors
            .iter()
            .map(|f| {
                f.map_labels(&mut |idx| {
                    if *idx == kill {
                        keep.clone()
                    } else {
                        idx.clone()
                    }
                })
            })
            .collect();
        return Ok(Reduction::Again(vec![Term::new(coeff, mapped)]));
    }

    // Epsilon pair expansion over one family.
    let mut eps_positions: BTreeMap<FamilyId, Vec<usize>> = BTreeMap::new();
    for (i, f) in factors.iter().enumerate() {
        if let Some(fam) = f.family_of_epsilon() {
            eps_positions.entry(fam).or_default().push(i);
        }
    }
    for positions in eps_positions.values() {
        if positions.len() < 2 {
            continue;
        }
        let (pi, pj) = (positions[0], positions[1]);
        let (Factor::Epsilon { indices: us }, Factor::Epsilon { indices: vs }) =
            (factors[pi].clone(), factors[pj].clone())
        else {
            unreachable!();
        };
        let mut rest = factors;
        rest.remove(pj);
        rest.remove(pi);
        let n = us.len();
        let mut out = Vec::new();
        for (perm, sign) in permutations_with_sign(n) {
            let mut fs = rest.clone();
            for (k, idx) in us.iter().enumerate() {
                fs.push(Factor::Kron {
                    a: idx.clone(),
                    b: vs[perm[k]].clone(),
                });
            }
            let c = if sign < 0 { coeff.neg() } else { coeff.clone() };
            out.push(Term::new(c, fs));
        }
        return Ok(Reduction::Again(out));
    }

    Ok(Reduction::Done(Term::new(coeff, factors)))
}

/// Sorts an antisymmetric index block. Returns `None` sign when two indices
/// coincide (the factor vanishes), otherwise the permutation parity.
fn sort_antisym(mut indices: Vec<Index>) -> (Vec<Index>, Option<i8>) {
    let mut sign = 1i8;
    // Insertion sort, counting swaps.
    for i in 1..indices.len() {
        let mut j = i;
        while j > 0 && indices[j] < indices[j - 1] {
            indices.swap(j, j - 1);
            sign = -sign;
            j -= 1;
        }
    }
    for w in indices.windows(2) {
        if w[0] == w[1] {
            return (indices, None);
        }
    }
    (indices, Some(sign))
}

fn permutations_with_sign(n: usize) -> Vec<(Vec<usize>, i8)> {
    permutations_of(n)
        .into_iter()
        .map(|p| {
            let sign = parity(&p);
            (p, sign)
        })
        .collect()
}

fn parity(perm: &[usize]) -> i8 {
    let mut inversions = 0usize;
    for i in 0..perm.len() {
        for j in i + 1..perm.len() {
            if perm[i] > perm[j] {
                inversions += 1;
            }
        }
    }
    if inversions % 2 == 0 {
        1
    } else {
        -1
    }
}

/// Skeleton key: renaming-invariant image of a factor. Dummy-eligible labels
/// collapse to a placeholder; under `Bound` policy point labels collapse too.
fn skeleton_key(
    ctx: &Context,
    factor: &Factor,
    dummies: &BTreeMap<IndexLabel, FamilyId>,
    policy: PointPolicy,
) -> FactorKey {
    factor_key(ctx, factor, Some(dummies), policy)
}

fn full_key(ctx: &Context, factor: &Factor) -> FactorKey {
    factor_key(ctx, factor, None, PointPolicy::Fixed)
}

/// Comparison key. With `dummies` present (skeleton mode) dummy labels and,
/// under Bound, points are erased; the full key orders by the same invariant
/// components first and breaks ties by the literal dummy labels, so full
/// order never contradicts skeleton order across distinct skeletons.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct FactorKey {
    rank: u8,
    name: String,
    deriv_count: usize,
    invariant_labels: Vec<LabelKey>,
    points: Vec<u8>,
    tiebreak_labels: Vec<Index>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum LabelKey {
    Free(String),
    Dummy(u16),
}

fn factor_key(
    ctx: &Context,
    factor: &Factor,
    dummies: Option<&BTreeMap<IndexLabel, FamilyId>>,
    policy: PointPolicy,
) -> FactorKey {
    let (rank, name, deriv_count) = match factor {
        Factor::Field(occ) => (0u8, ctx.field(occ.field).name.clone(), occ.derivs.len()),
        Factor::Epsilon { indices } => (
            1,
            ctx.family(indices[0].family).name.clone(),
            0,
        ),
        Factor::Structure { .. } => (2, String::new(), 0),
        Factor::Kron { a, .. } => (3, ctx.family(a.family).name.clone(), 0),
        Factor::DeltaDist { derivs, .. } => (4, String::new(), derivs.len()),
    };
    // Dummy-eligible labels (and all numbered dummies) collapse to their
    // family so the key is invariant under dummy renaming. Reorderable
    // blocks (derivative multisets, antisymmetric index lists, Kronecker
    // pairs, antisymmetric slot pairs) are sorted so the key is also
    // independent of their stored order.
    let key_of = |i: &Index| -> LabelKey {
        let eligible = match dummies {
            Some(set) => set.contains_key(&i.label),
            None => matches!(i.label, IndexLabel::Dummy(_)),
        };
        if eligible || matches!(i.label, IndexLabel::Dummy(_)) {
            LabelKey::Dummy(i.family.0)
        } else {
            match &i.label {
                IndexLabel::Named(s) => LabelKey::Free(s.clone()),
                IndexLabel::Dummy(_) => unreachable!(),
            }
        }
    };
    let mut invariant_labels: Vec<LabelKey> = Vec::new();
    match factor {
        Factor::Field(occ) => {
            let mut slot_keys: Vec<LabelKey> = occ.indices.iter().map(key_of).collect();
            if let Some((p, q)) = ctx.field(occ.field).antisym {
                if slot_keys[p] > slot_keys[q] {
                    slot_keys.swap(p, q);
                }
            }
            invariant_labels.extend(slot_keys);
            let mut deriv_keys: Vec<LabelKey> = occ.derivs.iter().map(key_of).collect();
            deriv_keys.sort();
            invariant_labels.extend(deriv_keys);
        }
        Factor::Epsilon { indices } => {
            let mut keys: Vec<LabelKey> = indices.iter().map(key_of).collect();
            keys.sort();
            invariant_labels.extend(keys);
        }
        Factor::Structure { indices } => {
            let mut keys: Vec<LabelKey> = indices.iter().map(key_of).collect();
            keys.sort();
            invariant_labels.extend(keys);
        }
        Factor::Kron { a, b } => {
            let mut keys = vec![key_of(a), key_of(b)];
            keys.sort();
            invariant_labels.extend(keys);
        }
        Factor::DeltaDist { derivs, .. } => {
            let mut keys: Vec<LabelKey> = derivs.iter().map(key_of).collect();
            keys.sort();
            invariant_labels.extend(keys);
        }
    }
    let points = match policy {
        PointPolicy::Bound if dummies.is_some() => Vec::new(),
        _ => factor.points().iter().map(|p| p.0).collect(),
    };
    let tiebreak_labels = match dummies {
        Some(_) => Vec::new(),
        None => factor.labels().into_iter().cloned().collect(),
    };
    FactorKey {
        rank,
        name,
        deriv_count,
        invariant_labels,
        points,
        tiebreak_labels,
    }
}

/// Finds the lexicographically least dummy labeling of one reduced term.
/// Returns `None` when the least form arises with both signs.
fn relabel_minimal(
    ctx: &Context,
    term: Term,
    policy: PointPolicy,
) -> Result<Option<Term>, ExprError> {
    let census = label_census(ctx, &term)?;
    let dummies: BTreeMap<IndexLabel, FamilyId> = census
        .iter()
        .filter(|(_, (_, count, _))| *count == 2)
        .map(|(label, (fam, _, _))| (label.clone(), *fam))
        .collect();

    if dummies.is_empty() && policy == PointPolicy::Fixed {
        let mut factors = term.factors;
        factors.sort_by(|x, y| full_key(ctx, x).cmp(&full_key(ctx, y)));
        return Ok(Some(Term::new(term.coeff, factors)));
    }

    // Group factors by skeleton.
    let mut indexed: Vec<(FactorKey, Factor)> = term
        .factors
        .iter()
        .map(|f| (skeleton_key(ctx, f, &dummies, policy), f.clone()))
        .collect();
    indexed.sort_by(|a, b| a.0.cmp(&b.0));

    let mut groups: Vec<Vec<Factor>> = Vec::new();
    let mut group_keys: Vec<FactorKey> = Vec::new();
    for (key, factor) in indexed {
        if group_keys.last() == Some(&key) {
            groups.last_mut().unwrap().push(factor);
        } else {
            group_keys.push(key);
            groups.push(vec![factor]);
        }
    }

    for g in &groups {
        assert!(
            g.len() <= MAX_GROUP,
            "term has {} factors with one skeleton; widen MAX_GROUP",
            g.len()
        );
    }

    let group_perms: Vec<Vec<Vec<usize>>> = groups
        .iter()
        .map(|g| {
            permutations_of(g.len())
        })
        .collect();

    // First-appearance numbering walks each factor's labels, so the order
    // in which a factor presents the distinct dummies of a reorderable
    // block changes which numberings are reachable. Trying every block
    // order (aligned with groups) keeps the candidate set an invariant of
    // the renaming orbit.
    let label_orders: Vec<Vec<Vec<Vec<IndexLabel>>>> = groups
        .iter()
        .map(|g| {
            g.iter()
                .map(|f| label_visit_orders(ctx, f, &dummies))
                .collect()
        })
        .collect();
    let point_orders: Vec<Vec<Vec<Vec<Point>>>> = groups
        .iter()
        .map(|g| g.iter().map(|f| point_visit_orders(f, policy)).collect())
        .collect();

    // Flat choice vector: one digit per group arrangement, then one digit
    // per factor for its label order, then one per factor for its points.
    let n_factors = term.factors.len();
    let mut offsets: Vec<usize> = Vec::with_capacity(groups.len());
    let mut acc = 0usize;
    for g in &groups {
        offsets.push(acc);
        acc += g.len();
    }
    let label_base = groups.len();
    let point_base = groups.len() + n_factors;

    let mut radices: Vec<usize> = group_perms.iter().map(|p| p.len()).collect();
    for orders in &label_orders {
        radices.extend(orders.iter().map(Vec::len));
    }
    for orders in &point_orders {
        radices.extend(orders.iter().map(Vec::len));
    }

    let total: u128 = radices.iter().map(|&r| r as u128).product();
    assert!(
        total <= CANDIDATE_CAP,
        "term admits {total} relabeling candidates; widen CANDIDATE_CAP"
    );

    let mut best: Option<(Vec<Factor>, i8)> = None;
    let mut cancels = false;
    let mut choice = vec![0usize; radices.len()];
    loop {
        // Walk the arrangement for this choice vector, assigning numbered
        // dummies (and, under Bound, points) by first appearance.
        let mut label_map: BTreeMap<IndexLabel, u32> = BTreeMap::new();
        let mut point_map: BTreeMap<Point, Point> = BTreeMap::new();
        let mut next_dummy = 0u32;
        let mut next_point = 0u8;
        let mut arrangement: Vec<&Factor> = Vec::with_capacity(n_factors);
        for (gi, g) in groups.iter().enumerate() {
            for &k in &group_perms[gi][choice[gi]] {
                arrangement.push(&g[k]);
                let flat = offsets[gi] + k;
                for label in &label_orders[gi][k][choice[label_base + flat]] {
                    if dummies.contains_key(label) && !label_map.contains_key(label) {
                        label_map.insert(label.clone(), next_dummy);
                        next_dummy += 1;
                    }
                }
                if policy == PointPolicy::Bound {
                    for p in &point_orders[gi][k][choice[point_base + flat]] {
                        point_map.entry(*p).or_insert_with(|| {
                            let np = Point(next_point);
                            next_point += 1;
                            np
                        });
                    }
                }
            }
        }

        let mut factors: Vec<Factor> = arrangement
            .iter()
            .map(|f| {
                let relabeled = f.map_labels(&mut |idx| match label_map.get(&idx.label) {
                    Some(k) => Index {
                        family: idx.family,
                        label: IndexLabel::Dummy(*k),
                    },
                    None => idx.clone(),
                });
                match policy {
                    PointPolicy::Bound => {
                        relabeled.map_points(&mut |p| *point_map.get(&p).unwrap_or(&p))
                    }
                    PointPolicy::Fixed => relabeled,
                }
            })
            .collect();
        // Local renormalization after relabeling can flip signs.
        let sign = renormalize_in_place(ctx, &mut factors);
        factors.sort_by(|x, y| full_key(ctx, x).cmp(&full_key(ctx, y)));

        match &best {
            None => best = Some((factors, sign)),
            Some((bf, bs)) => match factors.cmp(bf) {
                std::cmp::Ordering::Less => {
                    best = Some((factors, sign));
                    cancels = false;
                }
                std::cmp::Ordering::Equal => {
                    if sign != *bs {
                        cancels = true;
                    }
                }
                std::cmp::Ordering::Greater => {}
            },
        }

        // Advance the mixed-radix choice vector.
        let mut pos = 0;
        loop {
            if pos == radices.len() {
                let (factors, sign) = best.expect("at least one arrangement");
                if cancels {
                    return Ok(None);
                }
                let coeff = if sign < 0 {
                    term.coeff.neg()
                } else {
                    term.coeff
                };
                return Ok(Some(Term::new(coeff, factors)));
            }
            choice[pos] += 1;
            if choice[pos] < radices[pos] {
                break;
            }
            choice[pos] = 0;
            pos += 1;
        }
    }
}

/// Label visit orders of one factor that can change first-appearance
/// numbering: the distinct dummies of each reorderable block are tried in
/// every order while fixed parts keep their stored order. Field slots are
/// positional (only an antisymmetric slot pair may swap); derivative
/// multisets, epsilon and structure index lists, and Kronecker pairs are
/// free to reorder.
fn label_visit_orders(
    ctx: &Context,
    factor: &Factor,
    dummies: &BTreeMap<IndexLabel, FamilyId>,
) -> Vec<Vec<IndexLabel>> {
    match factor {
        Factor::Field(occ) => {
            let slots: Vec<IndexLabel> = occ.indices.iter().map(|i| i.label.clone()).collect();
            let mut heads = vec![slots.clone()];
            if let Some((p, q)) = ctx.field(occ.field).antisym {
                let lp = &occ.indices[p].label;
                let lq = &occ.indices[q].label;
                if lp != lq && (dummies.contains_key(lp) || dummies.contains_key(lq)) {
                    let mut swapped = slots;
                    swapped.swap(p, q);
                    heads.push(swapped);
                }
            }
            let tails = dummy_orders(occ.derivs.iter().map(|i| &i.label), dummies);
            let mut out = Vec::with_capacity(heads.len() * tails.len());
            for head in &heads {
                for tail in &tails {
                    let mut seq = head.clone();
                    seq.extend(tail.iter().cloned());
                    out.push(seq);
                }
            }
            out
        }
        Factor::Epsilon { indices } => dummy_orders(indices.iter().map(|i| &i.label), dummies),
        Factor::Structure { indices } => dummy_orders(indices.iter().map(|i| &i.label), dummies),
        Factor::Kron { a, b } => dummy_orders([&a.label, &b.label].into_iter(), dummies),
        Factor::DeltaDist { derivs, .. } => dummy_orders(derivs.iter().map(|i| &i.label), dummies),
    }
}

/// Every order of the distinct dummy labels drawn from one reorderable
/// block. Non-dummy labels never assign numbers, so they are dropped.
fn dummy_orders<'a>(
    labels: impl Iterator<Item = &'a IndexLabel>,
    dummies: &BTreeMap<IndexLabel, FamilyId>,
) -> Vec<Vec<IndexLabel>> {
    let mut distinct: Vec<IndexLabel> = Vec::new();
    for label in labels {
        if dummies.contains_key(label) && !distinct.contains(label) {
            distinct.push(label.clone());
        }
    }
    if distinct.len() <= 1 {
        return vec![distinct];
    }
    permutations_of(distinct.len())
        .into_iter()
        .map(|perm| perm.into_iter().map(|k| distinct[k].clone()).collect())
        .collect()
}

/// Point visit orders of one factor. Only a delta distribution under the
/// Bound policy has a reorderable point pair.
fn point_visit_orders(factor: &Factor, policy: PointPolicy) -> Vec<Vec<Point>> {
    if policy == PointPolicy::Bound {
        if let Factor::DeltaDist { left, right, .. } = factor {
            if left != right {
                return vec![vec![*left, *right], vec![*right, *left]];
            }
        }
    }
    vec![factor.points()]
}

fn permutations_of(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    let mut items: Vec<usize> = (0..n).collect();
    permute_rec(&mut items, 0, &mut out);
    out.sort();
    out
}

fn permute_rec(items: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
    if k == items.len() {
        out.push(items.clone());
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute_rec(items, k + 1, out);
        items.swap(k, i);
    }
}

/// Re-applies the local normalizations that relabeling may have disturbed:
/// antisymmetric blocks, field antisymmetric slot pairs, derivative
/// multisets, and delta-distribution orientation. Returns the sign.
fn renormalize_in_place(ctx: &Context, factors: &mut [Factor]) -> i8 {
    let mut sign = 1i8;
    for factor in factors.iter_mut() {
        match factor {
            Factor::Field(occ) => {
                occ.derivs.sort();
                if let Some((p, q)) = ctx.field(occ.field).antisym {
                    if occ.indices[p] > occ.indices[q] {
                        occ.indices.swap(p, q);
                        sign = -sign;
                    }
                }
            }
            Factor::Epsilon { indices } => {
                let (sorted, s) = sort_antisym(indices.clone());
                *indices = sorted;
                if s == Some(-1) {
                    sign = -sign;
                }
            }
            Factor::Structure { indices } => {
                let (sorted, s) = sort_antisym(indices.to_vec());
                *indices = [sorted[0].clone(), sorted[1].clone(), sorted[2].clone()];
                if s == Some(-1) {
                    sign = -sign;
                }
            }
            Factor::Kron { a, b } => {
                if a > b {
                    std::mem::swap(a, b);
                }
            }
            Factor::DeltaDist {
                left,
                right,
                derivs,
            } => {
                derivs.sort();
                if left > right {
                    std::mem::swap(left, right);
                    if derivs.len() % 2 == 1 {
                        sign = -sign;
                    }
                }
            }
        }
    }
    sign
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_fixtures::{occ, so3_context};
    use crate::scalar::ScalarCoeff;

    #[test]
    fn permutation_signs_sum_to_zero_for_n3() {
        let perms = permutations_with_sign(3);
        assert_eq!(perms.len(), 6);
        let total: i32 = perms.iter().map(|(_, s)| *s as i32).sum();
        assert_eq!(total, 0);
        // Identity is even; a single swap is odd.
        assert!(perms.contains(&(vec![0, 1, 2], 1)));
        assert!(perms.contains(&(vec![0, 2, 1], -1)));
        assert!(perms.contains(&(vec![1, 2, 0], 1)));
    }

    #[test]
    fn epsilon_with_repeated_index_vanishes() {
        let (ctx, f) = so3_context();
        let term = Term::new(
            ScalarCoeff::one(),
            vec![Factor::Epsilon {
                indices: vec![
                    Index::named(f, "i"),
                    Index::named(f, "i"),
                    Index::named(f, "j"),
                ],
            }],
        );
        // Two occurrences of `i` in one epsilon: antisymmetry kills it
        // before the census can complain.
        let e = Expression::from_terms(&ctx, vec![term]).unwrap();
        assert!(e.is_zero());
    }

    #[test]
    fn kron_trace_gives_dimension() {
        let (ctx, f) = so3_context();
        let term = Term::new(
            ScalarCoeff::one(),
            vec![Factor::Kron {
                a: Index::named(f, "i"),
                b: Index::named(f, "i"),
            }],
        );
        let e = Expression::from_terms(&ctx, vec![term]).unwrap();
        assert_eq!(e.terms().len(), 1);
        assert_eq!(e.terms()[0].coeff, ScalarCoeff::from_int(3));
        assert!(e.terms()[0].factors.is_empty());
    }

    #[test]
    fn kron_contracts_into_field_slot() {
        let (ctx, f) = so3_context();
        let v = ctx.field_id("V").unwrap();
        let term = Term::new(
            ScalarCoeff::one(),
            vec![
                occ(v, &[Index::named(f, "k")]),
                Factor::Kron {
                    a: Index::named(f, "i"),
                    b: Index::named(f, "k"),
                },
            ],
        );
        let e = Expression::from_terms(&ctx, vec![term]).unwrap();
        assert_eq!(e.terms().len(), 1);
        let Factor::Field(occ) = &e.terms()[0].factors[0] else {
            panic!("expected field factor");
        };
        assert_eq!(occ.indices[0], Index::named(f, "i"));
        assert_eq!(e.free_sig().len(), 1);
        assert!(e.free_sig().contains_key("i"));
    }

    #[test]
    fn dummy_relabeling_identifies_equal_terms() {
        let (ctx, f) = so3_context();
        let v = ctx.field_id("V").unwrap();
        let w = ctx.field_id("W").unwrap();
        // V_m W_m and V_q W_q are the same term.
        let t1 = Term::new(
            ScalarCoeff::one(),
            vec![
                occ(v, &[Index::named(f, "m")]),
                occ(w, &[Index::named(f, "m")]),
            ],
        );
        let t2 = Term::new(
            ScalarCoeff::one(),
            vec![
                occ(w, &[Index::named(f, "q")]),
                occ(v, &[Index::named(f, "q")]),
            ],
        );
        let e = Expression::from_terms(&ctx, vec![t1, t2]).unwrap();
        assert_eq!(e.terms().len(), 1);
        assert_eq!(e.terms()[0].coeff, ScalarCoeff::from_int(2));
    }

    #[test]
    fn antisymmetric_contraction_with_symmetric_pair_cancels() {
        let (ctx, f) = so3_context();
        let v = ctx.field_id("V").unwrap();
        // eps(i,j,k) V_j V_k = 0 by symmetry.
        let term = Term::new(
            ScalarCoeff::one(),
            vec![
                Factor::Epsilon {
                    indices: vec![
                        Index::named(f, "i"),
                        Index::named(f, "j"),
                        Index::named(f, "k"),
                    ],
                },
                occ(v, &[Index::named(f, "j")]),
                occ(v, &[Index::named(f, "k")]),
            ],
        );
        let e = Expression::from_terms(&ctx, vec![term]).unwrap();
        assert!(e.is_zero());
    }

    #[test]
    fn epsilon_pair_expands_to_kron_difference() {
        let (ctx, f) = so3_context();
        let v = ctx.field_id("V").unwrap();
        let w = ctx.field_id("W").unwrap();
        // eps(m,i,j) eps(m,k,l) V_k W_l with i,j free contracted against
        // V_i W_j minus V_j W_i structure: check via explicit expansion.
        let lhs = Term::new(
            ScalarCoeff::one(),
            vec![
                Factor::Epsilon {
                    indices: vec![
                        Index::named(f, "m"),
                        Index::named(f, "i"),
                        Index::named(f, "j"),
                    ],
                },
                Factor::Epsilon {
                    indices: vec![
                        Index::named(f, "m"),
                        Index::named(f, "k"),
                        Index::named(f, "l"),
                    ],
                },
                occ(v, &[Index::named(f, "k")]),
                occ(w, &[Index::named(f, "l")]),
            ],
        );
        let expanded = Expression::from_terms(&ctx, vec![lhs]).unwrap();
        let direct = Expression::from_terms(
            &ctx,
            vec![
                Term::new(
                    ScalarCoeff::one(),
                    vec![
                        occ(v, &[Index::named(f, "i")]),
                        occ(w, &[Index::named(f, "j")]),
                    ],
                ),
                Term::new(
                    ScalarCoeff::from_int(-1),
                    vec![
                        occ(v, &[Index::named(f, "j")]),
                        occ(w, &[Index::named(f, "i")]),
                    ],
                ),
            ],
        )
        .unwrap();
        assert_eq!(expanded, direct);
    }

    #[test]
    fn canonicalization_is_idempotent_on_samples() {
        let (ctx, f) = so3_context();
        let v = ctx.field_id("V").unwrap();
        let w = ctx.field_id("W").unwrap();
        let term = Term::new(
            ScalarCoeff::from_rational(3, 2),
            vec![
                Factor::Epsilon {
                    indices: vec![
                        Index::named(f, "a"),
                        Index::named(f, "b"),
                        Index::named(f, "c"),
                    ],
                },
                occ(v, &[Index::named(f, "b")]),
                occ(w, &[Index::named(f, "c")]),
                occ(w, &[Index::named(f, "a")]),
            ],
        );
        let once = Expression::from_terms(&ctx, vec![term]).unwrap();
        let twice = once.canonicalize(&ctx).unwrap();
        assert_eq!(once, twice);
    }
}
