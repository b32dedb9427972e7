//! Brute-force component evaluation of tensor terms.
//!
//! Every dummy index is summed explicitly over its family's range; epsilon
//! symbols become literal permutation signs, Kronecker deltas become 0/1,
//! and field occurrences are resolved through a caller-supplied valuation.
//! Delta distributions are deliberately unsupported: the numerical pipeline
//! only ever sees integrated (smeared) quantities.

use std::collections::BTreeMap;

use num_complex::Complex64;
use num_traits::ToPrimitive;
use thiserror::Error;

use crate::context::{Context, FieldId};
use crate::expr::{label_census, Expression, Factor, Term};
use crate::index::{FamilyId, Index, IndexLabel, Point};
use crate::scalar::{ConstSym, ScalarCoeff};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("family `{0}` has no concrete dimension; supply one with set_dim")]
    NoDimension(String),
    #[error("free index `{0}` was not assigned a component")]
    MissingFree(String),
    #[error("constant `{0}` was not assigned a value")]
    MissingConst(String),
    #[error("delta distributions cannot be evaluated componentwise")]
    DeltaInNumericPath,
    #[error("structure constants used but no table was supplied")]
    MissingStructure,
    #[error("coefficient does not fit in f64")]
    CoeffOverflow,
}

/// Concrete dimensions and constant values for componentwise evaluation.
pub struct EvalEnv<'a> {
    ctx: &'a Context,
    dims: BTreeMap<FamilyId, usize>,
    consts: BTreeMap<ConstSym, Complex64>,
    structure: Option<&'a dyn Fn(usize, usize, usize) -> f64>,
}

impl<'a> EvalEnv<'a> {
    /// Starts from the context's concrete family dimensions; families with
    /// symbolic dimension must be pinned via [`EvalEnv::set_dim`].
    pub fn new(ctx: &'a Context) -> EvalEnv<'a> {
        let mut dims = BTreeMap::new();
        for (id, fam) in ctx.families() {
            if let Some(n) = fam.dim.as_constant() {
                dims.insert(id, n as usize);
            }
        }
        EvalEnv {
            ctx,
            dims,
            consts: BTreeMap::new(),
            structure: None,
        }
    }

    pub fn set_dim(&mut self, fam: FamilyId, n: usize) -> &mut Self {
        self.dims.insert(fam, n);
        self
    }

    pub fn set_const(&mut self, sym: ConstSym, value: Complex64) -> &mut Self {
        self.consts.insert(sym, value);
        self
    }

    pub fn set_structure(&mut self, f: &'a dyn Fn(usize, usize, usize) -> f64) -> &mut Self {
        self.structure = Some(f);
        self
    }

    pub fn ctx(&self) -> &Context {
        self.ctx
    }

    pub fn dim(&self, fam: FamilyId) -> Result<usize, OracleError> {
        self.dims
            .get(&fam)
            .copied()
            .ok_or_else(|| OracleError::NoDimension(self.ctx.family(fam).name.clone()))
    }

    pub fn structure_value(&self, a: usize, b: usize, c: usize) -> Result<f64, OracleError> {
        let f = self.structure.ok_or(OracleError::MissingStructure)?;
        Ok(f(a, b, c))
    }

    pub fn coeff_value(&self, c: &ScalarCoeff) -> Result<Complex64, OracleError> {
        let re = c.re().to_f64().ok_or(OracleError::CoeffOverflow)?;
        let im = c.im().to_f64().ok_or(OracleError::CoeffOverflow)?;
        let mut value = Complex64::new(re, im);
        for (sym, exp) in c.monomial().exponents() {
            let base = self
                .consts
                .get(&sym)
                .copied()
                .ok_or_else(|| OracleError::MissingConst(sym.name().to_string()))?;
            value *= base.powi(exp);
        }
        Ok(value)
    }
}

/// Valuation of a field occurrence: slot components, derivative components,
/// point. Implementations decide what derivatives mean (analytic formula,
/// lattice difference, ...).
pub type FieldValue<'s> = dyn FnMut(FieldId, &[usize], &[usize], Point) -> Complex64 + 's;

pub fn eval_expression(
    env: &EvalEnv,
    expr: &Expression,
    free: &BTreeMap<String, usize>,
    field_value: &mut FieldValue,
) -> Result<Complex64, OracleError> {
    eval_terms(env, expr.terms(), free, field_value)
}

/// Evaluates a raw term list (not necessarily canonical).
pub fn eval_terms(
    env: &EvalEnv,
    terms: &[Term],
    free: &BTreeMap<String, usize>,
    field_value: &mut FieldValue,
) -> Result<Complex64, OracleError> {
    let mut total = Complex64::new(0.0, 0.0);
    for term in terms {
        total += eval_term(env, term, free, field_value)?;
    }
    Ok(total)
}

fn eval_term(
    env: &EvalEnv,
    term: &Term,
    free: &BTreeMap<String, usize>,
    field_value: &mut FieldValue,
) -> Result<Complex64, OracleError> {
    let census = label_census(env.ctx, term).expect("term validated before evaluation");
    let mut dummies: Vec<(IndexLabel, usize)> = Vec::new();
    for (label, (fam, count, _)) in &census {
        if *count == 2 {
            dummies.push((label.clone(), env.dim(*fam)?));
        } else if let IndexLabel::Named(name) = label {
            if !free.contains_key(name) {
                return Err(OracleError::MissingFree(name.clone()));
            }
        } else {
            // A numbered dummy occurring once cannot be assigned.
            return Err(OracleError::MissingFree(format!("{label:?}")));
        }
    }

    let coeff = env.coeff_value(&term.coeff)?;
    let mut assignment: BTreeMap<IndexLabel, usize> = BTreeMap::new();
    let mut odometer = vec![0usize; dummies.len()];
    let mut total = Complex64::new(0.0, 0.0);

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

        let mut product = coeff;
        for factor in &term.factors {
            if product == Complex64::new(0.0, 0.0) {
                break;
            }
            let value = match factor {
                Factor::Field(occ) => {
                    let slots: Vec<usize> = occ
                        .indices
                        .iter()
                        .map(&resolve)
                        .collect::<Result<_, _>>()?;
                    let derivs: Vec<usize> = occ
                        .derivs
                        .iter()
                        .map(&resolve)
                        .collect::<Result<_, _>>()?;
                    field_value(occ.field, &slots, &derivs, occ.point)
                }
                Factor::Epsilon { indices } => {
                    let vals: Vec<usize> =
                        indices.iter().map(&resolve).collect::<Result<_, _>>()?;
                    Complex64::new(levi_civita(&vals), 0.0)
                }
                Factor::Structure { indices } => {
                    let vals: Vec<usize> =
                        indices.iter().map(&resolve).collect::<Result<_, _>>()?;
                    let f = env.structure.ok_or(OracleError::MissingStructure)?;
                    Complex64::new(f(vals[0], vals[1], vals[2]), 0.0)
                }
                Factor::Kron { a, b } => {
                    if resolve(a)? == resolve(b)? {
                        Complex64::new(1.0, 0.0)
                    } else {
                        Complex64::new(0.0, 0.0)
                    }
                }
                Factor::DeltaDist { .. } => return Err(OracleError::DeltaInNumericPath),
            };
            product *= value;
        }
        total += product;

        // Advance the odometer.
        let mut pos = 0;
        loop {
            if pos == dummies.len() {
                return Ok(total);
            }
            odometer[pos] += 1;
            if odometer[pos] < dummies[pos].1 {
                break;
            }
            odometer[pos] = 0;
            pos += 1;
        }
        if dummies.is_empty() {
            return Ok(total);
        }
    }
}

/// Sign of the permutation given by `vals` (0 on repeats); the totally
/// antisymmetric symbol with eps(0,1,...,n-1) = +1.
pub fn levi_civita(vals: &[usize]) -> f64 {
    let n = vals.len();
    for i in 0..n {
        if vals[i] >= n {
            return 0.0;
        }
        for j in i + 1..n {
            if vals[i] == vals[j] {
                return 0.0;
            }
        }
    }
    let mut inversions = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            if vals[i] > vals[j] {
                inversions += 1;
            }
        }
    }
    if inversions % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// su(2) structure constants in the adjoint basis: f_abc = eps_abc.
pub fn su2_structure(a: usize, b: usize, c: usize) -> f64 {
    levi_civita(&[a, b, c])
}
