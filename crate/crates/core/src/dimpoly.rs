//! Integer polynomials in the group parameter N.
//!
//! Index-family dimensions and everything counted from them (variable counts,
//! constraint multiplicities, degrees of freedom) are polynomials in N so that
//! models over su(N) can be analyzed without fixing N. Coefficients are i64;
//! the degrees involved here are at most 2 and the coefficients tiny.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Polynomial in N with integer coefficients, stored dense from degree 0 up.
/// Invariant: no trailing zero coefficients (the zero polynomial is empty).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DimPoly(Vec<i64>);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DimPolyError {
    #[error("dimension polynomial is not divisible by {0}")]
    NotDivisible(i64),
    #[error("invalid dimension expression `{0}`")]
    Parse(String),
}

impl DimPoly {
    pub fn zero() -> DimPoly {
        DimPoly(Vec::new())
    }

    pub fn constant(c: i64) -> DimPoly {
        if c == 0 {
            DimPoly::zero()
        } else {
            DimPoly(vec![c])
        }
    }

    pub fn n() -> DimPoly {
        DimPoly(vec![0, 1])
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    /// The constant value when the polynomial has degree 0 (or is zero).
    pub fn as_constant(&self) -> Option<i64> {
        match self.0.len() {
            0 => Some(0),
            1 => Some(self.0[0]),
            _ => None,
        }
    }

    pub fn add(&self, other: &DimPoly) -> DimPoly {
        let n = self.0.len().max(other.0.len());
        let mut out = vec![0i64; n];
        for (i, c) in self.0.iter().enumerate() {
            out[i] += c;
        }
        for (i, c) in other.0.iter().enumerate() {
            out[i] += c;
        }
        DimPoly::trimmed(out)
    }

    pub fn sub(&self, other: &DimPoly) -> DimPoly {
        self.add(&other.scale(-1))
    }

    pub fn scale(&self, k: i64) -> DimPoly {
        DimPoly::trimmed(self.0.iter().map(|c| c * k).collect())
    }

    pub fn mul(&self, other: &DimPoly) -> DimPoly {
        if self.is_zero() || other.is_zero() {
            return DimPoly::zero();
        }
        let mut out = vec![0i64; self.0.len() + other.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in other.0.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        DimPoly::trimmed(out)
    }

    /// Exact division by an integer; fails when any coefficient is not
    /// divisible.
    pub fn div_exact(&self, k: i64) -> Result<DimPoly, DimPolyError> {
        let mut out = Vec::with_capacity(self.0.len());
        for c in &self.0 {
            if c % k != 0 {
                return Err(DimPolyError::NotDivisible(k));
            }
            out.push(c / k);
        }
        Ok(DimPoly::trimmed(out))
    }

    pub fn eval(&self, n: i64) -> i64 {
        self.0.iter().rev().fold(0i64, |acc, c| acc * n + c)
    }

    /// Parses expressions of the shape used in model files: sums of terms
    /// `k`, `N`, `k*N^e`, `N^e` with integer k, e >= 0, e.g. `N^2-1`.
    pub fn parse(src: &str) -> Result<DimPoly, DimPolyError> {
        let bad = || DimPolyError::Parse(src.to_string());
        let compact: String = src.chars().filter(|c| !c.is_whitespace()).collect();
        if compact.is_empty() {
            return Err(bad());
        }
        let mut out = DimPoly::zero();
        let mut rest = compact.as_str();
        let mut sign = 1i64;
        if let Some(r) = rest.strip_prefix('-') {
            sign = -1;
            rest = r;
        } else if let Some(r) = rest.strip_prefix('+') {
            rest = r;
        }
        while !rest.is_empty() {
            let split = rest
                .char_indices()
                .skip(1)
                .find(|&(_, c)| c == '+' || c == '-')
                .map(|(i, _)| i)
                .unwrap_or(rest.len());
            let (tok, tail) = rest.split_at(split);
            out = out.add(&DimPoly::parse_term(tok, sign).ok_or_else(bad)?);
            rest = tail;
            if let Some(r) = rest.strip_prefix('-') {
                sign = -1;
                rest = r;
            } else if let Some(r) = rest.strip_prefix('+') {
                sign = 1;
                rest = r;
            } else if !rest.is_empty() {
                return Err(bad());
            }
        }
        Ok(out)
    }

    fn parse_term(tok: &str, sign: i64) -> Option<DimPoly> {
        let (coeff, rest) = match tok.find(|c: char| !c.is_ascii_digit()) {
            Some(0) => (1i64, tok),
            Some(i) => {
                let k: i64 = tok[..i].parse().ok()?;
                let rest = tok[i..].strip_prefix('*').unwrap_or(&tok[i..]);
                (k, rest)
            }
            None => (tok.parse().ok()?, ""),
        };
        let degree = if rest.is_empty() {
            0u32
        } else {
            let rest = rest.strip_prefix('N')?;
            if rest.is_empty() {
                1
            } else {
                rest.strip_prefix('^')?.parse().ok()?
            }
        };
        let mut coeffs = vec![0i64; degree as usize + 1];
        coeffs[degree as usize] = sign * coeff;
        Some(DimPoly::trimmed(coeffs))
    }

    fn trimmed(mut v: Vec<i64>) -> DimPoly {
        while v.last() == Some(&0) {
            v.pop();
        }
        DimPoly(v)
    }
}

impl fmt::Display for DimPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let mut first = true;
        for (deg, &c) in self.0.iter().enumerate().rev() {
            if c == 0 {
                continue;
            }
            if first {
                if c < 0 {
                    write!(f, "-")?;
                }
            } else if c < 0 {
                write!(f, "-")?;
            } else {
                write!(f, "+")?;
            }
            first = false;
            let a = c.abs();
            match deg {
                0 => write!(f, "{}", a)?,
                _ => {
                    if a != 1 {
                        write!(f, "{}*", a)?;
                    }
                    if deg == 1 {
                        write!(f, "N")?;
                    } else {
                        write!(f, "N^{}", deg)?;
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_eval() {
        let p = DimPoly::parse("N^2-1").unwrap();
        assert_eq!(p.eval(2), 3);
        assert_eq!(p.eval(3), 8);
        assert_eq!(DimPoly::parse("3").unwrap(), DimPoly::constant(3));
        assert_eq!(DimPoly::parse("2*N^2 - 2").unwrap().eval(2), 6);
        assert!(DimPoly::parse("N^").is_err());
        assert!(DimPoly::parse("").is_err());
    }

    #[test]
    fn arithmetic() {
        let p = DimPoly::parse("N^2-1").unwrap();
        assert_eq!(p.scale(20).to_string(), "20*N^2-20");
        assert_eq!(p.scale(4).div_exact(2).unwrap(), p.scale(2));
        assert!(p.div_exact(2).is_err());
        assert_eq!(p.mul(&DimPoly::constant(2)).eval(2), 6);
        assert_eq!(p.sub(&p), DimPoly::zero());
    }

    #[test]
    fn display_round_trips_through_parse() {
        for src in ["N^2-1", "3", "2*N^2-2", "N", "-N+4"] {
            let p = DimPoly::parse(src).unwrap();
            assert_eq!(DimPoly::parse(&p.to_string()).unwrap(), p);
        }
    }
}
