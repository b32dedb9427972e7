//! Deterministic text form of expressions.
//!
//! The output is re-parseable by the model-file expression parser: factors
//! are juxtaposed atoms, numbered dummies are printed using each family's
//! letter pool (skipping letters taken by free indices), epsilon symbols are
//! qualified with their family whenever the context declares more than one
//! epsilon-capable family, and Kronecker deltas are always qualified. Point
//! suffixes (`@x`) and delta distributions (`dirac(x,y)`) appear only in
//! kernels, never in single-point bodies.

use std::collections::{BTreeMap, BTreeSet};

use crate::context::Context;
use crate::index::{Index, IndexLabel, Variance};

use super::{Expression, Factor, FreeSig, Term};

pub(crate) fn label_debug(label: &IndexLabel) -> String {
    match label {
        IndexLabel::Named(s) => s.clone(),
        IndexLabel::Dummy(k) => format!("#{k}"),
    }
}

pub(crate) fn sig_string(ctx: &Context, sig: &FreeSig) -> String {
    let parts: Vec<String> = sig
        .iter()
        .map(|(name, (fam, var))| {
            let v = match var {
                Variance::Up => "+",
                Variance::Down => "-",
            };
            format!("{name}[{}{v}]", ctx.family(*fam).name)
        })
        .collect();
    parts.join(",")
}

pub fn render_expression(ctx: &Context, expr: &Expression) -> String {
    if expr.is_zero() {
        return String::from("0");
    }
    let mut out = String::new();
    for (i, (neg, body)) in render_terms(ctx, expr).into_iter().enumerate() {
        if i == 0 {
            if neg {
                out.push_str("- ");
            }
        } else if neg {
            out.push_str(" - ");
        } else {
            out.push_str(" + ");
        }
        out.push_str(&body);
    }
    out
}

/// Signed term fragments, for renderers that wrap long expressions.
pub(crate) fn render_terms(ctx: &Context, expr: &Expression) -> Vec<(bool, String)> {
    let avoid: BTreeSet<String> = named_labels(expr);
    let show_points = needs_points(expr);
    expr.terms()
        .iter()
        .map(|t| render_term(ctx, t, &avoid, show_points))
        .collect()
}

fn named_labels(expr: &Expression) -> BTreeSet<String> {
    let mut set = BTreeSet::new();
    for term in expr.terms() {
        for factor in &term.factors {
            for idx in factor.labels() {
                if let IndexLabel::Named(s) = &idx.label {
                    set.insert(s.clone());
                }
            }
        }
    }
    set
}

fn needs_points(expr: &Expression) -> bool {
    expr.terms().iter().any(|t| {
        let mut points = BTreeSet::new();
        let mut has_dirac = false;
        for f in &t.factors {
            if matches!(f, Factor::DeltaDist { .. }) {
                has_dirac = true;
            }
            for p in f.points() {
                points.insert(p);
            }
        }
        has_dirac || points.len() > 1
    })
}

/// Renders one term as `(is_negative, body)`; the sign joins terms.
fn render_term(
    ctx: &Context,
    term: &Term,
    avoid: &BTreeSet<String>,
    show_points: bool,
) -> (bool, String) {
    let neg = term.coeff.display_negative();
    let coeff = if neg {
        term.coeff.neg()
    } else {
        term.coeff.clone()
    };

    let names = assign_dummy_names(ctx, term, avoid);
    let resolve = |idx: &Index| -> String {
        match &idx.label {
            IndexLabel::Named(s) => s.clone(),
            IndexLabel::Dummy(k) => names
                .get(k)
                .cloned()
                .unwrap_or_else(|| format!("#{k}")),
        }
    };

    let mut atoms: Vec<String> = Vec::new();
    if !(coeff.is_one() && !term.factors.is_empty()) {
        atoms.push(coeff.to_string());
    }
    let multi_eps = ctx.families().filter(|(_, f)| f.has_epsilon).count() > 1;
    for factor in &term.factors {
        let atom = match factor {
            Factor::Field(occ) => {
                let mut s = String::new();
                for d in &occ.derivs {
                    s.push_str("d_");
                    s.push_str(&resolve(d));
                    s.push(' ');
                }
                s.push_str(&ctx.field(occ.field).name);
                if !occ.indices.is_empty() {
                    s.push('(');
                    s.push_str(&join_indices(&occ.indices, &resolve));
                    s.push(')');
                }
                if show_points {
                    s.push('@');
                    s.push_str(&occ.point.to_string());
                }
                s
            }
            Factor::Epsilon { indices } => {
                let fam = ctx.family(indices[0].family).name.clone();
                let head = if multi_eps {
                    format!("eps[{fam}]")
                } else {
                    String::from("eps")
                };
                format!("{head}({})", join_indices(indices, &resolve))
            }
            Factor::Structure { indices } => {
                format!("f({})", join_indices(indices.as_slice(), &resolve))
            }
            Factor::Kron { a, b } => {
                let fam = ctx.family(a.family).name.clone();
                format!("delta[{fam}]({},{})", resolve(a), resolve(b))
            }
            Factor::DeltaDist {
                left,
                right,
                derivs,
            } => {
                let mut s = String::new();
                for d in derivs {
                    s.push_str("d_");
                    s.push_str(&resolve(d));
                    s.push(' ');
                }
                s.push_str(&format!("dirac({left},{right})"));
                s
            }
        };
        atoms.push(atom);
    }
    (neg, atoms.join(" "))
}

fn join_indices(indices: &[Index], resolve: &impl Fn(&Index) -> String) -> String {
    let parts: Vec<String> = indices.iter().map(resolve).collect();
    parts.join(",")
}

/// First-appearance dummy naming from each family's letter pool, skipping
/// names claimed by free indices anywhere in the expression.
fn assign_dummy_names(
    ctx: &Context,
    term: &Term,
    avoid: &BTreeSet<String>,
) -> BTreeMap<u32, String> {
    let mut names: BTreeMap<u32, String> = BTreeMap::new();
    let mut used: BTreeSet<String> = avoid.clone();
    for factor in &term.factors {
        for idx in factor.labels() {
            if let IndexLabel::Dummy(k) = idx.label {
                if names.contains_key(&k) {
                    continue;
                }
                let pool = &ctx.family(idx.family).letters;
                let name = pick_name(pool, &used);
                used.insert(name.clone());
                names.insert(k, name);
            }
        }
    }
    names
}

fn pick_name(pool: &[String], used: &BTreeSet<String>) -> String {
    for round in 0..u32::MAX {
        for letter in pool {
            let candidate = if round == 0 {
                letter.clone()
            } else {
                format!("{letter}{round}")
            };
            if !used.contains(&candidate) {
                return candidate;
            }
        }
    }
    unreachable!("letter pool exhausted");
}
