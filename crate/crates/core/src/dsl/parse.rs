//! Parser and semantic assembly for model files.
//!
//! Parsing happens in two layers. The surface layer turns token streams
//! into raw atoms (coefficients, symbols, parenthesized groups) without
//! consulting any declarations. The resolution layer classifies symbols
//! against the model context built so far, infers the index family of
//! every label (field slots fix their labels, `f` forces the structure
//! family, derivative labels are spatial, unqualified `eps`/`delta`
//! unify with their neighbours), and assembles canonicalized
//! [`Expression`]s. All diagnostics carry 1-based line/column positions.

use std::collections::BTreeMap;

use crate::context::{Context, FieldDecl, FieldId, FieldKind};
use crate::dimpoly::DimPoly;
use crate::expr::{Expression, Factor, FieldOccurrence, PointPolicy, Term};
use crate::index::{FamilyId, Index, IndexFamily, Point, Variance};
use crate::scalar::{ConstSym, ScalarCoeff};

use super::ast::{
    ConstraintDef, Convention, Diagnostic, KineticTerm, ModelDef, Span, SymplecticOverride,
};
use super::lex::{self, Lexed, Tok};

/// Names with fixed meanings inside expressions and sections.
const RESERVED: &[&str] = &[
    "model",
    "constants",
    "indices",
    "field",
    "kinetic",
    "symplectic",
    "convention",
    "constraint",
    "hamiltonian",
    "antisym",
    "letters",
    "dim",
    "epsilon",
    "structure",
    "spatial",
    "coordinate",
    "momentum",
    "multiplier",
    "eps",
    "delta",
    "f",
    "dirac",
    "I",
    "dt",
];

fn reserved_name(name: &str) -> bool {
    RESERVED.contains(&name) || name.starts_with("d_") || ConstSym::from_name(name).is_some()
}

// ---------------------------------------------------------------------------
// Token cursor
// ---------------------------------------------------------------------------

struct Cursor<'a> {
    toks: &'a [Lexed],
    pos: usize,
    end: Span,
}

impl<'a> Cursor<'a> {
    fn new(toks: &'a [Lexed], decl_span: Span) -> Cursor<'a> {
        let end = toks.last().map_or(decl_span, |l| l.span);
        Cursor { toks, pos: 0, end }
    }

    fn peek(&self) -> Option<&'a Tok> {
        self.toks.get(self.pos).map(|l| &l.tok)
    }

    fn span(&self) -> Span {
        self.toks.get(self.pos).map_or(self.end, |l| l.span)
    }

    fn next(&mut self) -> Option<&'a Lexed> {
        let l = self.toks.get(self.pos);
        if l.is_some() {
            self.pos += 1;
        }
        l
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == Some(tok) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<Span, Diagnostic> {
        let span = self.span();
        match self.peek() {
            Some(t) if *t == tok => {
                self.pos += 1;
                Ok(span)
            }
            Some(t) => Err(Diagnostic::new(
                span,
                format!("expected {}, found {}", what, t.describe()),
            )),
            None => Err(Diagnostic::new(span, format!("expected {}", what))),
        }
    }

    fn expect_ident(&mut self, what: &str) -> Result<(String, Span), Diagnostic> {
        let span = self.span();
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok((s, span))
            }
            Some(t) => Err(Diagnostic::new(
                span,
                format!("expected {}, found {}", what, t.describe()),
            )),
            None => Err(Diagnostic::new(span, format!("expected {}", what))),
        }
    }

    fn expect_int(&mut self, what: &str) -> Result<(i64, Span), Diagnostic> {
        let span = self.span();
        match self.peek() {
            Some(Tok::Int(s)) => {
                let n = s.parse::<i64>().map_err(|_| {
                    Diagnostic::new(span, format!("integer `{}` is out of range", s))
                })?;
                self.pos += 1;
                Ok((n, span))
            }
            Some(t) => Err(Diagnostic::new(
                span,
                format!("expected {}, found {}", what, t.describe()),
            )),
            None => Err(Diagnostic::new(span, format!("expected {}", what))),
        }
    }

    fn expect_end(&self) -> Result<(), Diagnostic> {
        match self.peek() {
            None => Ok(()),
            Some(t) => Err(Diagnostic::new(
                self.span(),
                format!("unexpected trailing {}", t.describe()),
            )),
        }
    }
}

// ---------------------------------------------------------------------------
// Surface expression grammar
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct SymbolAtom {
    name: String,
    qual: Option<(String, Span)>,
    labels: Vec<(String, Span)>,
    point: Option<Point>,
    span: Span,
}

#[derive(Debug, Clone)]
enum RawAtom {
    Rational(i64, i64, Span),
    Imag(Span),
    Const(ConstSym, i32, Span),
    Symbol(SymbolAtom),
    Dirac(Point, Point, Span),
    Paren(RawExpr, Span),
}

impl RawAtom {
    fn span(&self) -> Span {
        match self {
            RawAtom::Rational(_, _, s)
            | RawAtom::Imag(s)
            | RawAtom::Const(_, _, s)
            | RawAtom::Dirac(_, _, s)
            | RawAtom::Paren(_, s) => *s,
            RawAtom::Symbol(sym) => sym.span,
        }
    }
}

#[derive(Debug, Clone)]
struct RawFactor {
    derivs: Vec<(String, Span)>,
    atom: RawAtom,
}

#[derive(Debug, Clone)]
struct RawTerm {
    negative: bool,
    factors: Vec<RawFactor>,
    span: Span,
}

#[derive(Debug, Clone)]
struct RawExpr {
    terms: Vec<RawTerm>,
}

fn parse_expr(cur: &mut Cursor) -> Result<RawExpr, Diagnostic> {
    let mut terms = Vec::new();
    let mut negative = false;
    if cur.eat(&Tok::Minus) {
        negative = true;
    } else {
        cur.eat(&Tok::Plus);
    }
    loop {
        terms.push(parse_product(cur, negative)?);
        match cur.peek() {
            Some(Tok::Plus) => {
                cur.next();
                negative = false;
            }
            Some(Tok::Minus) => {
                cur.next();
                negative = true;
            }
            _ => break,
        }
    }
    Ok(RawExpr { terms })
}

fn parse_product(cur: &mut Cursor, negative: bool) -> Result<RawTerm, Diagnostic> {
    let span = cur.span();
    let mut factors = Vec::new();
    loop {
        match cur.peek() {
            None | Some(Tok::Plus) | Some(Tok::Minus) | Some(Tok::RParen) => break,
            _ => {
                factors.push(parse_factor(cur)?);
                cur.eat(&Tok::Star);
            }
        }
    }
    if factors.is_empty() {
        return Err(Diagnostic::new(span, "empty term"));
    }
    Ok(RawTerm {
        negative,
        factors,
        span,
    })
}

fn parse_factor(cur: &mut Cursor) -> Result<RawFactor, Diagnostic> {
    let mut derivs = Vec::new();
    while let Some(Tok::Ident(s)) = cur.peek() {
        if s.len() > 2 && s.starts_with("d_") {
            let span = cur.span();
            derivs.push((s[2..].to_string(), span));
            cur.next();
        } else {
            break;
        }
    }
    let atom = parse_atom(cur)?;
    Ok(RawFactor { derivs, atom })
}

fn parse_point(cur: &mut Cursor) -> Result<Point, Diagnostic> {
    let (name, span) = cur.expect_ident("a point label")?;
    Point::parse(&name)
        .ok_or_else(|| Diagnostic::new(span, format!("`{}` is not a point label", name)))
}

fn parse_atom(cur: &mut Cursor) -> Result<RawAtom, Diagnostic> {
    let span = cur.span();
    match cur.peek() {
        Some(Tok::Int(_)) => {
            let (num, _) = cur.expect_int("a number")?;
            let den = if cur.eat(&Tok::Slash) {
                let (d, dspan) = cur.expect_int("a denominator")?;
                if d == 0 {
                    return Err(Diagnostic::new(dspan, "zero denominator"));
                }
                d
            } else {
                1
            };
            Ok(RawAtom::Rational(num, den, span))
        }
        Some(Tok::LParen) => {
            cur.next();
            let inner = parse_expr(cur)?;
            cur.expect(Tok::RParen, "`)`")?;
            Ok(RawAtom::Paren(inner, span))
        }
        Some(Tok::Ident(name)) => {
            let name = name.clone();
            if name == "I" {
                cur.next();
                return Ok(RawAtom::Imag(span));
            }
            if name == "dirac" {
                cur.next();
                cur.expect(Tok::LParen, "`(`")?;
                let left = parse_point(cur)?;
                cur.expect(Tok::Comma, "`,`")?;
                let right = parse_point(cur)?;
                cur.expect(Tok::RParen, "`)`")?;
                return Ok(RawAtom::Dirac(left, right, span));
            }
            if let Some(sym) = ConstSym::from_name(&name) {
                cur.next();
                let exp = if cur.eat(&Tok::Caret) {
                    let neg = cur.eat(&Tok::Minus);
                    let (n, espan) = cur.expect_int("an exponent")?;
                    let n = i32::try_from(n)
                        .map_err(|_| Diagnostic::new(espan, "exponent out of range"))?;
                    if neg {
                        -n
                    } else {
                        n
                    }
                } else {
                    1
                };
                return Ok(RawAtom::Const(sym, exp, span));
            }
            cur.next();
            let qual = if cur.eat(&Tok::LBrack) {
                let q = cur.expect_ident("a family name")?;
                cur.expect(Tok::RBrack, "`]`")?;
                Some(q)
            } else {
                None
            };
            let mut labels = Vec::new();
            if cur.eat(&Tok::LParen) {
                loop {
                    labels.push(cur.expect_ident("an index label")?);
                    if !cur.eat(&Tok::Comma) {
                        break;
                    }
                }
                cur.expect(Tok::RParen, "`)`")?;
            }
            let point = if cur.eat(&Tok::At) {
                Some(parse_point(cur)?)
            } else {
                None
            };
            Ok(RawAtom::Symbol(SymbolAtom {
                name,
                qual,
                labels,
                point,
                span,
            }))
        }
        Some(t) => Err(Diagnostic::new(
            span,
            format!("expected an expression atom, found {}", t.describe()),
        )),
        None => Err(Diagnostic::new(span, "expected an expression atom")),
    }
}

// ---------------------------------------------------------------------------
// Resolution
// ---------------------------------------------------------------------------

enum Proto {
    Field {
        id: FieldId,
        labels: Vec<(String, Span)>,
        derivs: Vec<(String, Span)>,
        point: Point,
    },
    Eps {
        labels: Vec<(String, Span)>,
        fam: Option<FamilyId>,
        span: Span,
    },
    Kron {
        labels: Vec<(String, Span)>,
        fam: Option<FamilyId>,
        span: Span,
    },
    Struct {
        labels: Vec<(String, Span)>,
        fam: FamilyId,
    },
    Dirac {
        left: Point,
        right: Point,
        derivs: Vec<(String, Span)>,
    },
}

struct Resolver<'a> {
    ctx: &'a Context,
    constraints: &'a [ConstraintDef],
    policy: PointPolicy,
}

impl<'a> Resolver<'a> {
    fn resolve_expr(&self, raw: &RawExpr, span: Span) -> Result<Expression, Diagnostic> {
        let mut terms = Vec::new();
        for t in &raw.terms {
            let e = self.resolve_term(t)?;
            terms.extend(e.terms().iter().cloned());
        }
        Expression::from_terms_policy(self.ctx, terms, self.policy)
            .map_err(|e| Diagnostic::new(span, e.to_string()))
    }

    fn spatial(&self, span: Span) -> Result<FamilyId, Diagnostic> {
        self.ctx.spatial_family().ok_or_else(|| {
            Diagnostic::new(
                span,
                "derivatives require a family marked `spatial` in its indices line",
            )
        })
    }

    fn resolve_term(&self, raw: &RawTerm) -> Result<Expression, Diagnostic> {
        let mut coeff = if raw.negative {
            ScalarCoeff::from_int(-1)
        } else {
            ScalarCoeff::one()
        };
        let mut protos: Vec<Proto> = Vec::new();
        // Parenthesized groups and constraint references, with the
        // derivative prefixes still to apply.
        let mut subs: Vec<(Vec<(String, Span)>, Expression)> = Vec::new();

        for factor in &raw.factors {
            let scalar_with_derivs = |span: Span| {
                Diagnostic::new(span, "a derivative prefix cannot apply to a constant")
            };
            match &factor.atom {
                RawAtom::Rational(num, den, span) => {
                    if !factor.derivs.is_empty() {
                        return Err(scalar_with_derivs(*span));
                    }
                    coeff = coeff.mul(&ScalarCoeff::from_rational(*num, *den));
                }
                RawAtom::Imag(span) => {
                    if !factor.derivs.is_empty() {
                        return Err(scalar_with_derivs(*span));
                    }
                    coeff = coeff.mul(&ScalarCoeff::i());
                }
                RawAtom::Const(sym, exp, span) => {
                    if !factor.derivs.is_empty() {
                        return Err(scalar_with_derivs(*span));
                    }
                    if !self.ctx.has_constant(*sym) {
                        return Err(Diagnostic::new(
                            *span,
                            format!("constant `{}` is not declared", sym.name()),
                        ));
                    }
                    coeff = coeff.mul(&ScalarCoeff::constant(*sym, *exp));
                }
                RawAtom::Dirac(left, right, span) => {
                    if left == right {
                        return Err(Diagnostic::new(*span, "coincident delta distribution"));
                    }
                    protos.push(Proto::Dirac {
                        left: *left,
                        right: *right,
                        derivs: factor.derivs.clone(),
                    });
                }
                RawAtom::Paren(inner, span) => {
                    let e = self.resolve_expr(inner, *span)?;
                    subs.push((factor.derivs.clone(), e));
                }
                RawAtom::Symbol(sym) => {
                    self.resolve_symbol(sym, factor, &mut protos, &mut subs)?;
                }
            }
        }

        let fam_of = self.infer_families(&protos)?;
        let mut factors = Vec::new();
        for proto in &protos {
            factors.push(self.build_factor(proto, &fam_of)?);
        }
        let mut result = Expression::from_terms_policy(
            self.ctx,
            vec![Term::new(coeff, factors)],
            self.policy,
        )
        .map_err(|e| Diagnostic::new(raw.span, e.to_string()))?;
        for (derivs, sub) in subs {
            let mut sub = sub;
            for (label, dspan) in derivs.iter().rev() {
                let fam = self.spatial(*dspan)?;
                sub = sub
                    .spatial_derivative(self.ctx, &Index::named(fam, label), Point::BASE)
                    .map_err(|e| Diagnostic::new(*dspan, e.to_string()))?;
            }
            result = result
                .multiply_policy(&sub, self.ctx, self.policy)
                .map_err(|e| Diagnostic::new(raw.span, e.to_string()))?;
        }
        Ok(result)
    }

    fn resolve_symbol(
        &self,
        sym: &SymbolAtom,
        factor: &RawFactor,
        protos: &mut Vec<Proto>,
        subs: &mut Vec<(Vec<(String, Span)>, Expression)>,
    ) -> Result<(), Diagnostic> {
        let qual_fam = match &sym.qual {
            None => None,
            Some((q, qspan)) => Some(self.ctx.family_id(q).ok_or_else(|| {
                Diagnostic::new(*qspan, format!("unknown index family `{}`", q))
            })?),
        };
        let reject_qual = |ok: bool| -> Result<(), Diagnostic> {
            if !ok {
                if let Some((q, qspan)) = &sym.qual {
                    return Err(Diagnostic::new(
                        *qspan,
                        format!("`{}` does not take a `[{}]` qualifier", sym.name, q),
                    ));
                }
            }
            Ok(())
        };
        let reject_point = || -> Result<(), Diagnostic> {
            if sym.point.is_some() {
                return Err(Diagnostic::new(
                    sym.span,
                    format!("`{}` does not take a point label", sym.name),
                ));
            }
            Ok(())
        };
        let reject_derivs = || -> Result<(), Diagnostic> {
            if !factor.derivs.is_empty() {
                return Err(Diagnostic::new(
                    factor.derivs[0].1,
                    format!("a derivative prefix cannot apply to `{}`", sym.name),
                ));
            }
            Ok(())
        };
        match sym.name.as_str() {
            "eps" => {
                reject_point()?;
                reject_derivs()?;
                protos.push(Proto::Eps {
                    labels: sym.labels.clone(),
                    fam: qual_fam,
                    span: sym.span,
                });
            }
            "delta" => {
                reject_point()?;
                reject_derivs()?;
                if sym.labels.len() != 2 {
                    return Err(Diagnostic::new(
                        sym.span,
                        "`delta` takes exactly two index labels",
                    ));
                }
                protos.push(Proto::Kron {
                    labels: sym.labels.clone(),
                    fam: qual_fam,
                    span: sym.span,
                });
            }
            "f" => {
                reject_qual(false)?;
                reject_point()?;
                reject_derivs()?;
                if sym.labels.len() != 3 {
                    return Err(Diagnostic::new(
                        sym.span,
                        "`f` takes exactly three index labels",
                    ));
                }
                let fam = self.ctx.structure_family().ok_or_else(|| {
                    Diagnostic::new(
                        sym.span,
                        "no family declares structure constants",
                    )
                })?;
                protos.push(Proto::Struct {
                    labels: sym.labels.clone(),
                    fam,
                });
            }
            name => {
                reject_qual(false)?;
                if let Some(id) = self.ctx.field_id(name) {
                    let decl = self.ctx.field(id);
                    if sym.labels.len() != decl.arity() {
                        return Err(Diagnostic::new(
                            sym.span,
                            format!(
                                "field `{}` expects {} indices, found {}",
                                name,
                                decl.arity(),
                                sym.labels.len()
                            ),
                        ));
                    }
                    protos.push(Proto::Field {
                        id,
                        labels: sym.labels.clone(),
                        derivs: factor.derivs.clone(),
                        point: sym.point.unwrap_or(Point::BASE),
                    });
                } else if let Some(c) = self.constraints.iter().find(|c| c.name == name) {
                    reject_point()?;
                    if sym.labels.len() != c.labels.len() {
                        return Err(Diagnostic::new(
                            sym.span,
                            format!(
                                "constraint `{}` expects {} labels, found {}",
                                name,
                                c.labels.len(),
                                sym.labels.len()
                            ),
                        ));
                    }
                    let map: Vec<(String, String)> = c
                        .labels
                        .iter()
                        .cloned()
                        .zip(sym.labels.iter().map(|(l, _)| l.clone()))
                        .collect();
                    let body = c
                        .body
                        .rename_free(self.ctx, &map)
                        .map_err(|e| Diagnostic::new(sym.span, e.to_string()))?;
                    subs.push((factor.derivs.clone(), body));
                } else {
                    return Err(Diagnostic::new(
                        sym.span,
                        format!("unknown symbol `{}`", name),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Determines the family of every label used by bare symbols.
    fn infer_families(
        &self,
        protos: &[Proto],
    ) -> Result<BTreeMap<String, FamilyId>, Diagnostic> {
        let mut fam_of: BTreeMap<String, FamilyId> = BTreeMap::new();
        let bind = |label: &str, fam: FamilyId, span: Span, fam_of: &mut BTreeMap<String, FamilyId>| -> Result<(), Diagnostic> {
            match fam_of.get(label) {
                Some(prev) if *prev != fam => Err(Diagnostic::new(
                    span,
                    format!(
                        "index `{}` used with conflicting families `{}` and `{}`",
                        label,
                        self.ctx.family(*prev).name,
                        self.ctx.family(fam).name
                    ),
                )),
                _ => {
                    fam_of.insert(label.to_string(), fam);
                    Ok(())
                }
            }
        };

        for proto in protos {
            match proto {
                Proto::Field {
                    id,
                    labels,
                    derivs,
                    ..
                } => {
                    let decl = self.ctx.field(*id);
                    for ((label, span), (fam, _)) in labels.iter().zip(&decl.signature) {
                        bind(label, *fam, *span, &mut fam_of)?;
                    }
                    for (label, span) in derivs {
                        let fam = self.spatial(*span)?;
                        bind(label, fam, *span, &mut fam_of)?;
                    }
                }
                Proto::Struct { labels, fam } => {
                    for (label, span) in labels {
                        bind(label, *fam, *span, &mut fam_of)?;
                    }
                }
                Proto::Dirac { derivs, .. } => {
                    for (label, span) in derivs {
                        let fam = self.spatial(*span)?;
                        bind(label, fam, *span, &mut fam_of)?;
                    }
                }
                Proto::Eps { labels, fam, .. } | Proto::Kron { labels, fam, .. } => {
                    if let Some(fam) = fam {
                        for (label, span) in labels {
                            bind(label, *fam, *span, &mut fam_of)?;
                        }
                    }
                }
            }
        }

        // Unqualified eps/delta: unify with any already-bound member.
        loop {
            let mut changed = false;
            for proto in protos {
                let (labels, fam) = match proto {
                    Proto::Eps { labels, fam, .. } | Proto::Kron { labels, fam, .. } => {
                        (labels, fam)
                    }
                    _ => continue,
                };
                if fam.is_some() {
                    continue;
                }
                let known = labels
                    .iter()
                    .find_map(|(l, _)| fam_of.get(l).copied());
                if let Some(k) = known {
                    for (label, span) in labels {
                        if !fam_of.contains_key(label) {
                            bind(label, k, *span, &mut fam_of)?;
                            changed = true;
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }

        for proto in protos {
            if let Proto::Eps { labels, fam, span } | Proto::Kron { labels, fam, span } = proto
            {
                if fam.is_none() {
                    for (label, _) in labels {
                        if !fam_of.contains_key(label) {
                            return Err(Diagnostic::new(
                                *span,
                                format!(
                                    "cannot infer the index family of `{}`; add a `[family]` qualifier",
                                    label
                                ),
                            ));
                        }
                    }
                }
            }
        }
        Ok(fam_of)
    }

    fn build_factor(
        &self,
        proto: &Proto,
        fam_of: &BTreeMap<String, FamilyId>,
    ) -> Result<Factor, Diagnostic> {
        Ok(match proto {
            Proto::Field {
                id,
                labels,
                derivs,
                point,
            } => {
                let decl = self.ctx.field(*id);
                let indices = labels
                    .iter()
                    .zip(&decl.signature)
                    .map(|((l, _), (fam, _))| Index::named(*fam, l))
                    .collect();
                let mut dvs = Vec::new();
                for (l, span) in derivs {
                    dvs.push(Index::named(self.spatial(*span)?, l));
                }
                Factor::Field(FieldOccurrence {
                    field: *id,
                    indices,
                    derivs: dvs,
                    point: *point,
                })
            }
            Proto::Eps { labels, fam, span } => {
                let indices: Vec<Index> = labels
                    .iter()
                    .map(|(l, _)| Index::named(fam.or_else(|| fam_of.get(l).copied()).unwrap(), l))
                    .collect();
                let Some(first) = indices.first() else {
                    return Err(Diagnostic::new(*span, "`eps` needs index labels"));
                };
                let _ = first;
                Factor::Epsilon { indices }
            }
            Proto::Kron { labels, fam, .. } => {
                let get = |l: &str| fam.or_else(|| fam_of.get(l).copied()).unwrap();
                Factor::Kron {
                    a: Index::named(get(&labels[0].0), &labels[0].0),
                    b: Index::named(get(&labels[1].0), &labels[1].0),
                }
            }
            Proto::Struct { labels, fam } => Factor::Structure {
                indices: [
                    Index::named(*fam, &labels[0].0),
                    Index::named(*fam, &labels[1].0),
                    Index::named(*fam, &labels[2].0),
                ],
            },
            Proto::Dirac {
                left,
                right,
                derivs,
            } => {
                let mut dvs = Vec::new();
                for (l, span) in derivs {
                    dvs.push(Index::named(self.spatial(*span)?, l));
                }
                Factor::DeltaDist {
                    left: *left,
                    right: *right,
                    derivs: dvs,
                }
            }
        })
    }
}

/// Evaluates a raw expression consisting purely of scalar atoms; `None` if
/// any factor is non-scalar or the sum is not a single monomial.
fn fold_scalar(ctx: &Context, raw: &RawExpr) -> Option<ScalarCoeff> {
    let mut total = ScalarCoeff::zero();
    for t in &raw.terms {
        let mut c = if t.negative {
            ScalarCoeff::from_int(-1)
        } else {
            ScalarCoeff::one()
        };
        for f in &t.factors {
            if !f.derivs.is_empty() {
                return None;
            }
            match &f.atom {
                RawAtom::Rational(n, d, _) => c = c.mul(&ScalarCoeff::from_rational(*n, *d)),
                RawAtom::Imag(_) => c = c.mul(&ScalarCoeff::i()),
                RawAtom::Const(sym, exp, _) => {
                    if !ctx.has_constant(*sym) {
                        return None;
                    }
                    c = c.mul(&ScalarCoeff::constant(*sym, *exp));
                }
                RawAtom::Paren(inner, _) => c = c.mul(&fold_scalar(ctx, inner)?),
                _ => return None,
            }
        }
        total = total.try_add(&c)?;
    }
    Some(total)
}

/// Parses a standalone expression against an existing context (and optional
/// constraint table, whose names become referenceable atoms).
pub fn parse_expression(
    ctx: &Context,
    constraints: &[ConstraintDef],
    src: &str,
    policy: PointPolicy,
) -> Result<Expression, Diagnostic> {
    let mut toks = Vec::new();
    for (i, line) in src.lines().enumerate() {
        lex::lex_line(line, i as u32 + 1, &mut toks)?;
    }
    let mut cur = Cursor::new(&toks, Span::new(1, 1));
    let raw = parse_expr(&mut cur)?;
    cur.expect_end()?;
    let resolver = Resolver {
        ctx,
        constraints,
        policy,
    };
    resolver.resolve_expr(&raw, Span::new(1, 1))
}

// ---------------------------------------------------------------------------
// Model assembly
// ---------------------------------------------------------------------------

struct Builder {
    name: Option<String>,
    ctx: Context,
    convention: Convention,
    convention_span: Option<Span>,
    kinetic: Vec<KineticTerm>,
    overrides: Vec<SymplecticOverride>,
    constraints: Vec<ConstraintDef>,
    hamiltonian: Option<(Expression, Span)>,
    diags: Vec<Diagnostic>,
}

impl Builder {
    fn new() -> Builder {
        Builder {
            name: None,
            ctx: Context::new(),
            convention: Convention::Kinetic,
            convention_span: None,
            kinetic: Vec::new(),
            overrides: Vec::new(),
            constraints: Vec::new(),
            hamiltonian: None,
            diags: Vec::new(),
        }
    }

    fn fail(&mut self, span: Span, msg: impl Into<String>) {
        self.diags.push(Diagnostic::new(span, msg));
    }

    fn check_fresh_name(&mut self, name: &str, span: Span) -> bool {
        if reserved_name(name) {
            self.fail(span, format!("`{}` is a reserved name", name));
            return false;
        }
        if self.ctx.field_id(name).is_some()
            || self.ctx.family_id(name).is_some()
            || self.constraints.iter().any(|c| c.name == name)
        {
            self.fail(span, format!("the name `{}` is already in use", name));
            return false;
        }
        true
    }

    fn section_model(&mut self, cur: &mut Cursor) -> Result<(), Diagnostic> {
        let (name, span) = cur.expect_ident("a model name")?;
        cur.expect_end()?;
        if self.name.is_some() {
            return Err(Diagnostic::new(span, "duplicate `model` line"));
        }
        self.name = Some(name);
        Ok(())
    }

    fn section_constants(&mut self, cur: &mut Cursor) -> Result<(), Diagnostic> {
        while !cur.at_end() {
            let (name, span) = cur.expect_ident("a constant name")?;
            let sym = ConstSym::from_name(&name).ok_or_else(|| {
                Diagnostic::new(
                    span,
                    format!(
                        "unknown constant `{}`; available: {}",
                        name,
                        ConstSym::all().map(|c| c.name()).join(", ")
                    ),
                )
            })?;
            self.ctx.declare_constant(sym);
        }
        Ok(())
    }

    fn section_indices(&mut self, cur: &mut Cursor, decl_span: Span) -> Result<(), Diagnostic> {
        let (name, name_span) = cur.expect_ident("a family name")?;
        if !self.check_fresh_name(&name, name_span) {
            return Ok(());
        }
        let (dim_kw, _) = cur.expect_ident("`dim`")?;
        if dim_kw != "dim" {
            return Err(Diagnostic::new(name_span, "expected `dim` after the family name"));
        }
        // The dimension is a token run up to the next flag keyword.
        let mut dim_src = String::new();
        let dim_span = cur.span();
        loop {
            match cur.peek() {
                Some(Tok::Ident(s))
                    if matches!(s.as_str(), "epsilon" | "structure" | "spatial" | "letters") =>
                {
                    break;
                }
                Some(Tok::Ident(s)) => {
                    dim_src.push_str(s);
                    cur.next();
                }
                Some(Tok::Int(s)) => {
                    dim_src.push_str(s);
                    cur.next();
                }
                Some(Tok::Caret) => {
                    dim_src.push('^');
                    cur.next();
                }
                Some(Tok::Minus) => {
                    dim_src.push('-');
                    cur.next();
                }
                Some(Tok::Plus) => {
                    dim_src.push('+');
                    cur.next();
                }
                Some(Tok::Star) => {
                    dim_src.push('*');
                    cur.next();
                }
                _ => break,
            }
        }
        let dim = DimPoly::parse(&dim_src)
            .map_err(|e| Diagnostic::new(dim_span, format!("bad dimension: {}", e)))?;
        let mut has_epsilon = false;
        let mut has_structure = false;
        let mut spatial = false;
        let mut letters = Vec::new();
        while !cur.at_end() {
            let (word, wspan) = cur.expect_ident("a family flag")?;
            match word.as_str() {
                "epsilon" => has_epsilon = true,
                "structure" => has_structure = true,
                "spatial" => spatial = true,
                "letters" => {
                    while !cur.at_end() {
                        let (l, lspan) = cur.expect_ident("an index letter")?;
                        if reserved_name(&l) {
                            return Err(Diagnostic::new(
                                lspan,
                                format!("`{}` cannot be used as an index letter", l),
                            ));
                        }
                        letters.push(l);
                    }
                }
                other => {
                    return Err(Diagnostic::new(
                        wspan,
                        format!("unknown family flag `{}`", other),
                    ));
                }
            }
        }
        if letters.is_empty() {
            return Err(Diagnostic::new(decl_span, "family needs a `letters` list"));
        }
        let id = self
            .ctx
            .add_family(IndexFamily {
                name,
                dim,
                has_epsilon,
                has_structure,
                letters,
            })
            .map_err(|e| Diagnostic::new(decl_span, e.to_string()))?;
        if spatial {
            if self.ctx.spatial_family().is_some() {
                return Err(Diagnostic::new(decl_span, "duplicate `spatial` family"));
            }
            self.ctx.set_spatial_family(id);
        }
        Ok(())
    }

    fn section_field(&mut self, cur: &mut Cursor, decl_span: Span) -> Result<(), Diagnostic> {
        let (name, name_span) = cur.expect_ident("a field name")?;
        if !self.check_fresh_name(&name, name_span) {
            return Ok(());
        }
        let (kind_word, kind_span) = cur.expect_ident("a field kind")?;
        let kind = match kind_word.as_str() {
            "coordinate" => FieldKind::Coordinate,
            "momentum" => FieldKind::Momentum,
            "multiplier" => FieldKind::Multiplier,
            other => {
                return Err(Diagnostic::new(
                    kind_span,
                    format!(
                        "unknown field kind `{}`; expected coordinate, momentum or multiplier",
                        other
                    ),
                ));
            }
        };
        let mut signature = Vec::new();
        let mut antisym = None;
        while !cur.at_end() {
            let (word, wspan) = cur.expect_ident("a family name or `antisym`")?;
            if word == "antisym" {
                cur.expect(Tok::LParen, "`(`")?;
                let (p, pspan) = cur.expect_int("a slot position")?;
                cur.expect(Tok::Comma, "`,`")?;
                let (q, _) = cur.expect_int("a slot position")?;
                cur.expect(Tok::RParen, "`)`")?;
                if p < 1 || q < 1 {
                    return Err(Diagnostic::new(pspan, "slot positions are 1-based"));
                }
                antisym = Some((p as usize - 1, q as usize - 1));
                continue;
            }
            let fam = self
                .ctx
                .family_id(&word)
                .ok_or_else(|| Diagnostic::new(wspan, format!("unknown index family `{}`", word)))?;
            let var = if cur.eat(&Tok::Caret) {
                Variance::Up
            } else {
                Variance::Down
            };
            signature.push((fam, var));
        }
        self.ctx
            .add_field(FieldDecl {
                name,
                kind,
                signature,
                antisym,
                weight: 0,
            })
            .map_err(|e| Diagnostic::new(decl_span, e.to_string()))?;
        Ok(())
    }

    fn section_convention(&mut self, cur: &mut Cursor) -> Result<(), Diagnostic> {
        let (word, span) = cur.expect_ident("`paper` or `kinetic`")?;
        cur.expect_end()?;
        if self.convention_span.is_some() {
            return Err(Diagnostic::new(span, "duplicate `convention` line"));
        }
        self.convention = match word.as_str() {
            "paper" => Convention::Paper,
            "kinetic" => Convention::Kinetic,
            other => {
                return Err(Diagnostic::new(
                    span,
                    format!("unknown convention `{}`; expected paper or kinetic", other),
                ));
            }
        };
        self.convention_span = Some(span);
        Ok(())
    }

    /// Parses an optional sign and a run of scalar atoms.
    fn parse_coeff(&self, cur: &mut Cursor, stop_at_dt: bool) -> Result<ScalarCoeff, Diagnostic> {
        let mut coeff = ScalarCoeff::one();
        if cur.eat(&Tok::Minus) {
            coeff = coeff.neg();
        } else {
            cur.eat(&Tok::Plus);
        }
        loop {
            match cur.peek() {
                Some(Tok::Ident(s)) if stop_at_dt && s == "dt" => break,
                None => break,
                _ => {}
            }
            let atom = parse_atom(cur)?;
            cur.eat(&Tok::Star);
            match atom {
                RawAtom::Rational(n, d, _) => {
                    coeff = coeff.mul(&ScalarCoeff::from_rational(n, d));
                }
                RawAtom::Imag(_) => coeff = coeff.mul(&ScalarCoeff::i()),
                RawAtom::Const(sym, exp, span) => {
                    if !self.ctx.has_constant(sym) {
                        return Err(Diagnostic::new(
                            span,
                            format!("constant `{}` is not declared", sym.name()),
                        ));
                    }
                    coeff = coeff.mul(&ScalarCoeff::constant(sym, exp));
                }
                RawAtom::Paren(inner, span) => {
                    let folded = fold_scalar(&self.ctx, &inner).ok_or_else(|| {
                        Diagnostic::new(span, "expected a scalar coefficient")
                    })?;
                    coeff = coeff.mul(&folded);
                }
                other => {
                    return Err(Diagnostic::new(
                        other.span(),
                        "expected a scalar coefficient",
                    ));
                }
            }
        }
        Ok(coeff)
    }

    fn kinetic_symbol(&self, cur: &mut Cursor) -> Result<(String, Vec<String>, Span), Diagnostic> {
        let atom = parse_atom(cur)?;
        match atom {
            RawAtom::Symbol(sym) => {
                if sym.qual.is_some() || sym.point.is_some() {
                    return Err(Diagnostic::new(
                        sym.span,
                        "kinetic pairings take bare field references",
                    ));
                }
                Ok((
                    sym.name,
                    sym.labels.into_iter().map(|(l, _)| l).collect(),
                    sym.span,
                ))
            }
            other => Err(Diagnostic::new(other.span(), "expected a field reference")),
        }
    }

    fn section_kinetic(&mut self, cur: &mut Cursor, decl_span: Span) -> Result<(), Diagnostic> {
        let coeff = self.parse_coeff(cur, true)?;
        if coeff.is_zero() {
            return Err(Diagnostic::new(decl_span, "kinetic coefficient is zero"));
        }
        let (dt, dt_span) = cur.expect_ident("`dt`")?;
        if dt != "dt" {
            return Err(Diagnostic::new(dt_span, "expected `dt`"));
        }
        let (coord_name, coord_labels, coord_span) = self.kinetic_symbol(cur)?;
        let (mom_name, mom_labels, mom_span) = self.kinetic_symbol(cur)?;
        cur.expect_end()?;

        let coord = self
            .ctx
            .field_id(&coord_name)
            .ok_or_else(|| Diagnostic::new(coord_span, format!("unknown field `{}`", coord_name)))?;
        let mom = self
            .ctx
            .field_id(&mom_name)
            .ok_or_else(|| Diagnostic::new(mom_span, format!("unknown field `{}`", mom_name)))?;
        let cdecl = self.ctx.field(coord).clone();
        let mdecl = self.ctx.field(mom).clone();
        if cdecl.kind != FieldKind::Coordinate {
            return Err(Diagnostic::new(
                coord_span,
                format!("`{}` is not a coordinate field", coord_name),
            ));
        }
        if mdecl.kind != FieldKind::Momentum {
            return Err(Diagnostic::new(
                mom_span,
                format!("`{}` is not a momentum field", mom_name),
            ));
        }
        if coord_labels.len() != cdecl.arity() || mom_labels.len() != mdecl.arity() {
            return Err(Diagnostic::new(decl_span, "kinetic slot count mismatch"));
        }
        let mut slot_map = Vec::with_capacity(coord_labels.len());
        for (k, label) in coord_labels.iter().enumerate() {
            if coord_labels.iter().filter(|l| *l == label).count() != 1 {
                return Err(Diagnostic::new(
                    coord_span,
                    format!("kinetic label `{}` repeats on the coordinate", label),
                ));
            }
            let positions: Vec<usize> = mom_labels
                .iter()
                .enumerate()
                .filter(|(_, l)| *l == label)
                .map(|(m, _)| m)
                .collect();
            let [m] = positions.as_slice() else {
                return Err(Diagnostic::new(
                    mom_span,
                    format!(
                        "kinetic label `{}` must appear exactly once on the momentum",
                        label
                    ),
                ));
            };
            if cdecl.signature[k].0 != mdecl.signature[*m].0 {
                return Err(Diagnostic::new(
                    decl_span,
                    format!("kinetic label `{}` pairs slots of different families", label),
                ));
            }
            slot_map.push(*m);
        }
        if self.kinetic.iter().any(|k| k.coord == coord) {
            return Err(Diagnostic::new(
                coord_span,
                format!("coordinate `{}` already has a kinetic pairing", coord_name),
            ));
        }
        if self.kinetic.iter().any(|k| k.mom == mom) {
            return Err(Diagnostic::new(
                mom_span,
                format!("momentum `{}` already has a kinetic pairing", mom_name),
            ));
        }
        // Antisymmetric pairs must agree through the slot map.
        let mapped = cdecl
            .antisym
            .map(|(p, q)| (slot_map[p].min(slot_map[q]), slot_map[p].max(slot_map[q])));
        let mdecl_pair = mdecl.antisym.map(|(p, q)| (p.min(q), p.max(q)));
        if mapped != mdecl_pair {
            return Err(Diagnostic::new(
                decl_span,
                "kinetic pairing mixes antisymmetric and plain slot pairs",
            ));
        }
        self.kinetic.push(KineticTerm {
            coeff,
            coord,
            coord_labels,
            mom,
            mom_labels,
            slot_map,
            span: decl_span,
        });
        Ok(())
    }

    fn section_symplectic(&mut self, cur: &mut Cursor, decl_span: Span) -> Result<(), Diagnostic> {
        let (coord_name, coord_span) = cur.expect_ident("a coordinate field")?;
        let (mom_name, mom_span) = cur.expect_ident("a momentum field")?;
        let coeff = self.parse_coeff(cur, false)?;
        cur.expect_end()?;
        if coeff.is_zero() {
            return Err(Diagnostic::new(decl_span, "symplectic coefficient is zero"));
        }
        let coord = self
            .ctx
            .field_id(&coord_name)
            .ok_or_else(|| Diagnostic::new(coord_span, format!("unknown field `{}`", coord_name)))?;
        let mom = self
            .ctx
            .field_id(&mom_name)
            .ok_or_else(|| Diagnostic::new(mom_span, format!("unknown field `{}`", mom_name)))?;
        if self.overrides.iter().any(|o| o.coord == coord) {
            return Err(Diagnostic::new(
                decl_span,
                format!("duplicate symplectic override for `{}`", coord_name),
            ));
        }
        self.overrides.push(SymplecticOverride {
            coord,
            mom,
            coeff,
            span: decl_span,
        });
        Ok(())
    }

    fn section_constraint(&mut self, cur: &mut Cursor, decl_span: Span) -> Result<(), Diagnostic> {
        let (name, name_span) = cur.expect_ident("a constraint name")?;
        if !self.check_fresh_name(&name, name_span) {
            return Ok(());
        }
        let mut labels: Vec<(String, Span)> = Vec::new();
        if cur.eat(&Tok::LParen) {
            loop {
                labels.push(cur.expect_ident("an index label")?);
                if !cur.eat(&Tok::Comma) {
                    break;
                }
            }
            cur.expect(Tok::RParen, "`)`")?;
        }
        let mut antisym = None;
        if let Some(Tok::Ident(s)) = cur.peek() {
            if s == "antisym" {
                cur.next();
                cur.expect(Tok::LParen, "`(`")?;
                let (p, pspan) = cur.expect_int("a label position")?;
                cur.expect(Tok::Comma, "`,`")?;
                let (q, _) = cur.expect_int("a label position")?;
                cur.expect(Tok::RParen, "`)`")?;
                if p < 1 || q < 1 || p as usize > labels.len() || q as usize > labels.len() || p == q
                {
                    return Err(Diagnostic::new(pspan, "bad antisym label positions"));
                }
                antisym = Some(((p as usize - 1).min(q as usize - 1), (p as usize - 1).max(q as usize - 1)));
            }
        }
        cur.expect(Tok::Assign, "`:=`")?;
        let raw = parse_expr(cur)?;
        cur.expect_end()?;
        let resolver = Resolver {
            ctx: &self.ctx,
            constraints: &self.constraints,
            policy: PointPolicy::Fixed,
        };
        let body = resolver.resolve_expr(&raw, decl_span)?;

        // The free signature must be exactly the declared label list.
        let declared: Vec<&String> = labels.iter().map(|(l, _)| l).collect();
        for key in body.free_sig().keys() {
            if !declared.iter().any(|l| *l == key) {
                return Err(Diagnostic::new(
                    decl_span,
                    format!("uncontracted index `{}` is not a declared label", key),
                ));
            }
        }
        for (l, lspan) in &labels {
            if !body.free_sig().contains_key(l) {
                return Err(Diagnostic::new(
                    *lspan,
                    format!("declared label `{}` does not occur free in the body", l),
                ));
            }
            if declared.iter().filter(|x| **x == l).count() != 1 {
                return Err(Diagnostic::new(*lspan, format!("duplicate label `{}`", l)));
            }
        }
        // Single-point density without distributions.
        for term in body.terms() {
            for factor in &term.factors {
                if let Factor::DeltaDist { .. } = factor {
                    return Err(Diagnostic::new(
                        decl_span,
                        "constraint bodies cannot contain delta distributions",
                    ));
                }
                if let Factor::Field(occ) = factor {
                    if occ.point != Point::BASE {
                        return Err(Diagnostic::new(
                            decl_span,
                            "constraint bodies are single-point densities",
                        ));
                    }
                    if self.ctx.field(occ.field).kind == FieldKind::Multiplier {
                        return Err(Diagnostic::new(
                            decl_span,
                            format!(
                                "constraint body references the multiplier `{}`",
                                self.ctx.field(occ.field).name
                            ),
                        ));
                    }
                }
            }
        }
        if let Some((p, q)) = antisym {
            let (fp, _) = body.free_sig()[&labels[p].0];
            let (fq, _) = body.free_sig()[&labels[q].0];
            if fp != fq {
                return Err(Diagnostic::new(
                    labels[p].1,
                    "antisym label positions must share one family",
                ));
            }
            let swap = vec![
                (labels[p].0.clone(), labels[q].0.clone()),
                (labels[q].0.clone(), labels[p].0.clone()),
            ];
            let swapped = body
                .rename_free(&self.ctx, &swap)
                .map_err(|e| Diagnostic::new(decl_span, e.to_string()))?;
            let sum = body
                .add(&swapped, &self.ctx)
                .map_err(|e| Diagnostic::new(decl_span, e.to_string()))?;
            if !sum.is_zero() {
                return Err(Diagnostic::new(
                    decl_span,
                    "body is not antisymmetric under the declared label pair",
                ));
            }
        }
        self.constraints.push(ConstraintDef {
            name,
            labels: labels.into_iter().map(|(l, _)| l).collect(),
            antisym,
            body,
            span: decl_span,
        });
        Ok(())
    }

    fn section_hamiltonian(&mut self, cur: &mut Cursor, decl_span: Span) -> Result<(), Diagnostic> {
        if self.hamiltonian.is_some() {
            return Err(Diagnostic::new(decl_span, "duplicate `hamiltonian` line"));
        }
        let raw = parse_expr(cur)?;
        cur.expect_end()?;
        let resolver = Resolver {
            ctx: &self.ctx,
            constraints: &self.constraints,
            policy: PointPolicy::Fixed,
        };
        let h = resolver.resolve_expr(&raw, decl_span)?;
        if !h.free_sig().is_empty() {
            return Err(Diagnostic::new(
                decl_span,
                "the Hamiltonian density must be an index scalar",
            ));
        }
        for term in h.terms() {
            for factor in &term.factors {
                match factor {
                    Factor::DeltaDist { .. } => {
                        return Err(Diagnostic::new(
                            decl_span,
                            "the Hamiltonian density cannot contain delta distributions",
                        ));
                    }
                    Factor::Field(occ) if occ.point != Point::BASE => {
                        return Err(Diagnostic::new(
                            decl_span,
                            "the Hamiltonian density is a single-point density",
                        ));
                    }
                    _ => {}
                }
            }
        }
        self.hamiltonian = Some((h, decl_span));
        Ok(())
    }

    fn finalize(mut self) -> Result<ModelDef, Vec<Diagnostic>> {
        let whole = Span::new(1, 1);
        if self.name.is_none() {
            self.diags.push(Diagnostic::new(whole, "missing `model` line"));
        }
        for (id, decl) in self.ctx.fields() {
            match decl.kind {
                FieldKind::Coordinate => {
                    if !self.kinetic.iter().any(|k| k.coord == id) {
                        self.diags.push(Diagnostic::new(
                            whole,
                            format!("coordinate `{}` has no kinetic pairing", decl.name),
                        ));
                    }
                }
                FieldKind::Momentum => {
                    if !self.kinetic.iter().any(|k| k.mom == id) {
                        self.diags.push(Diagnostic::new(
                            whole,
                            format!("momentum `{}` has no conjugate coordinate", decl.name),
                        ));
                    }
                }
                _ => {}
            }
        }
        let mut overrides = std::mem::take(&mut self.overrides);
        for o in &mut overrides {
            if !self
                .kinetic
                .iter()
                .any(|k| k.coord == o.coord && k.mom == o.mom)
            {
                self.diags.push(Diagnostic::new(
                    o.span,
                    "symplectic override does not match any kinetic pairing",
                ));
            }
        }
        self.overrides = overrides;
        if self.hamiltonian.is_none() {
            self.diags
                .push(Diagnostic::new(whole, "missing `hamiltonian` section"));
        }
        if !self.diags.is_empty() {
            return Err(self.diags);
        }
        Ok(ModelDef {
            name: self.name.unwrap(),
            ctx: self.ctx,
            convention: self.convention,
            kinetic: self.kinetic,
            overrides: self.overrides,
            constraints: self.constraints,
            hamiltonian: self.hamiltonian.unwrap().0,
        })
    }
}

/// Parses a complete model file.
pub fn parse_model(src: &str) -> Result<ModelDef, Vec<Diagnostic>> {
    let decls = lex::declarations(src).map_err(|d| vec![d])?;
    let mut b = Builder::new();
    for decl in &decls {
        let mut cur = Cursor::new(&decl.toks, decl.span);
        let result = match decl.keyword.as_str() {
            "model" => b.section_model(&mut cur),
            "constants" => b.section_constants(&mut cur),
            "indices" => b.section_indices(&mut cur, decl.span),
            "field" => b.section_field(&mut cur, decl.span),
            "convention" => b.section_convention(&mut cur),
            "kinetic" => b.section_kinetic(&mut cur, decl.span),
            "symplectic" => b.section_symplectic(&mut cur, decl.span),
            "constraint" => b.section_constraint(&mut cur, decl.span),
            "hamiltonian" => b.section_hamiltonian(&mut cur, decl.span),
            other => Err(Diagnostic::new(
                decl.span,
                format!("unknown section `{}`", other),
            )),
        };
        if let Err(d) = result {
            b.diags.push(d);
        }
    }
    b.finalize()
}
