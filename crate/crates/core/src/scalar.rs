//! Exact scalar coefficients.
//!
//! A coefficient is a Gaussian rational (re + im*I with arbitrary-precision
//! rational parts) times a formal monomial in the model constants Xi, Omega
//! and g. Powers of the imaginary unit are folded into the Gaussian part on
//! construction, so `I^2` never survives as a formal exponent. Two
//! coefficients are "like" (addable) only when their monomials agree; terms
//! with different monomials are kept apart by the expression layer.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

/// Formal model constants that may appear in coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ConstSym {
    Xi,
    Omega,
    Coupling,
}

impl ConstSym {
    pub fn name(self) -> &'static str {
        match self {
            ConstSym::Xi => "Xi",
            ConstSym::Omega => "Omega",
            ConstSym::Coupling => "g",
        }
    }

    pub fn from_name(s: &str) -> Option<ConstSym> {
        match s {
            "Xi" => Some(ConstSym::Xi),
            "Omega" => Some(ConstSym::Omega),
            "g" => Some(ConstSym::Coupling),
            _ => None,
        }
    }

    pub fn all() -> [ConstSym; 3] {
        [ConstSym::Xi, ConstSym::Omega, ConstSym::Coupling]
    }
}

/// Product of constants with integer (possibly negative) exponents.
/// Zero exponents are never stored.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Monomial(BTreeMap<ConstSym, i32>);

impl Monomial {
    pub fn unit() -> Monomial {
        Monomial(BTreeMap::new())
    }

    pub fn of(sym: ConstSym, exp: i32) -> Monomial {
        let mut m = BTreeMap::new();
        if exp != 0 {
            m.insert(sym, exp);
        }
        Monomial(m)
    }

    pub fn is_unit(&self) -> bool {
        self.0.is_empty()
    }

    pub fn exponent(&self, sym: ConstSym) -> i32 {
        self.0.get(&sym).copied().unwrap_or(0)
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        let mut out = self.0.clone();
        for (&sym, &exp) in &other.0 {
            let e = out.entry(sym).or_insert(0);
            *e += exp;
            if *e == 0 {
                out.remove(&sym);
            }
        }
        Monomial(out)
    }

    pub fn inverse(&self) -> Monomial {
        Monomial(self.0.iter().map(|(&s, &e)| (s, -e)).collect())
    }

    pub fn exponents(&self) -> impl Iterator<Item = (ConstSym, i32)> + '_ {
        self.0.iter().map(|(&s, &e)| (s, e))
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (&sym, &exp) in &self.0 {
            if !first {
                write!(f, "*")?;
            }
            first = false;
            if exp == 1 {
                write!(f, "{}", sym.name())?;
            } else {
                write!(f, "{}^{}", sym.name(), exp)?;
            }
        }
        Ok(())
    }
}

/// Exact coefficient: (re + im*I) * monomial.
///
/// Invariant: the zero coefficient is unique, with `re = im = 0` and the unit
/// monomial.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ScalarCoeff {
    re: BigRational,
    im: BigRational,
    mono: Monomial,
}

impl ScalarCoeff {
    pub fn zero() -> ScalarCoeff {
        ScalarCoeff {
            re: BigRational::zero(),
            im: BigRational::zero(),
            mono: Monomial::unit(),
        }
    }

    pub fn one() -> ScalarCoeff {
        ScalarCoeff::from_int(1)
    }

    pub fn from_int(n: i64) -> ScalarCoeff {
        ScalarCoeff::from_rational(n, 1)
    }

    /// Panics if `den == 0`.
    pub fn from_rational(num: i64, den: i64) -> ScalarCoeff {
        assert!(den != 0, "zero denominator");
        ScalarCoeff::new(
            BigRational::new(BigInt::from(num), BigInt::from(den)),
            BigRational::zero(),
            Monomial::unit(),
        )
    }

    /// The imaginary unit.
    pub fn i() -> ScalarCoeff {
        ScalarCoeff::new(BigRational::zero(), BigRational::one(), Monomial::unit())
    }

    pub fn constant(sym: ConstSym, exp: i32) -> ScalarCoeff {
        ScalarCoeff::new(
            BigRational::one(),
            BigRational::zero(),
            Monomial::of(sym, exp),
        )
    }

    pub fn new(re: BigRational, im: BigRational, mono: Monomial) -> ScalarCoeff {
        if re.is_zero() && im.is_zero() {
            ScalarCoeff::zero()
        } else {
            ScalarCoeff { re, im, mono }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.re.is_zero() && self.im.is_zero()
    }

    pub fn is_one(&self) -> bool {
        self.re.is_one() && self.im.is_zero() && self.mono.is_unit()
    }

    pub fn re(&self) -> &BigRational {
        &self.re
    }

    pub fn im(&self) -> &BigRational {
        &self.im
    }

    pub fn monomial(&self) -> &Monomial {
        &self.mono
    }

    pub fn neg(&self) -> ScalarCoeff {
        ScalarCoeff::new(-self.re.clone(), -self.im.clone(), self.mono.clone())
    }

    pub fn mul(&self, other: &ScalarCoeff) -> ScalarCoeff {
        if self.is_zero() || other.is_zero() {
            return ScalarCoeff::zero();
        }
        let re = &self.re * &other.re - &self.im * &other.im;
        let im = &self.re * &other.im + &self.im * &other.re;
        ScalarCoeff::new(re, im, self.mono.mul(&other.mono))
    }

    pub fn mul_int(&self, n: i64) -> ScalarCoeff {
        self.mul(&ScalarCoeff::from_int(n))
    }

    /// Sum of two like coefficients. `None` when the monomials differ (and
    /// neither side is zero), since the result would not be a monomial.
    pub fn try_add(&self, other: &ScalarCoeff) -> Option<ScalarCoeff> {
        if self.is_zero() {
            return Some(other.clone());
        }
        if other.is_zero() {
            return Some(self.clone());
        }
        if self.mono != other.mono {
            return None;
        }
        Some(ScalarCoeff::new(
            &self.re + &other.re,
            &self.im + &other.im,
            self.mono.clone(),
        ))
    }

    /// Multiplicative inverse. `None` for zero.
    pub fn inverse(&self) -> Option<ScalarCoeff> {
        if self.is_zero() {
            return None;
        }
        let n = &self.re * &self.re + &self.im * &self.im;
        Some(ScalarCoeff::new(
            &self.re / &n,
            -(&self.im / &n),
            self.mono.inverse(),
        ))
    }

    /// True when the Gaussian part is a negative rational (used to put a
    /// leading minus in renderings). Purely presentational.
    pub fn display_negative(&self) -> bool {
        if self.re.is_zero() {
            self.im.is_negative()
        } else {
            self.re.is_negative()
        }
    }
}

fn fmt_rational(r: &BigRational, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    if r.denom().is_one() {
        write!(f, "{}", r.numer())
    } else {
        write!(f, "{}/{}", r.numer(), r.denom())
    }
}

impl fmt::Display for ScalarCoeff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let gauss_one = self.re.is_one() && self.im.is_zero();
        let needs_gauss = !gauss_one || self.mono.is_unit();
        if needs_gauss {
            if self.im.is_zero() {
                fmt_rational(&self.re, f)?;
            } else if self.re.is_zero() {
                if self.im.is_one() {
                    write!(f, "I")?;
                } else if (-&self.im).is_one() {
                    write!(f, "-I")?;
                } else {
                    fmt_rational(&self.im, f)?;
                    write!(f, "*I")?;
                }
            } else {
                write!(f, "(")?;
                fmt_rational(&self.re, f)?;
                if self.im.is_negative() {
                    write!(f, "-")?;
                    fmt_rational(&(-&self.im), f)?;
                } else {
                    write!(f, "+")?;
                    fmt_rational(&self.im, f)?;
                }
                write!(f, "*I)")?;
            }
        }
        if !self.mono.is_unit() {
            if needs_gauss {
                write!(f, "*")?;
            }
            write!(f, "{}", self.mono)?;
        }
        Ok(())
    }
}
