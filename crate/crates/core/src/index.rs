//! Index families, index labels, variance, and spatial points.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dimpoly::DimPoly;

/// An index family: a named range of index values shared by field slots,
/// epsilon symbols and structure constants.
///
/// Invariants enforced at registration time:
/// - `has_epsilon` requires a concrete dimension (epsilon arity = dimension;
///   only dimension 3 is used by the built-in models),
/// - `has_structure` marks the family whose triples feed `f(a,b,c)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexFamily {
    pub name: String,
    pub dim: DimPoly,
    pub has_epsilon: bool,
    pub has_structure: bool,
    /// Preferred letters for rendering bound indices, in order.
    pub letters: Vec<String>,
}

/// Handle into a [`crate::context::Context`] family table.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct FamilyId(pub u16);

/// Index label. Parsed sources carry named labels; canonicalization rewrites
/// bound (dummy) labels to numbered ones, scoped per family, while free
/// labels stay named.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum IndexLabel {
    Named(String),
    Dummy(u32),
}

impl IndexLabel {
    pub fn named(s: &str) -> IndexLabel {
        IndexLabel::Named(s.to_string())
    }
}

/// A single index occurrence: which family it ranges over and its label.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Index {
    pub family: FamilyId,
    pub label: IndexLabel,
}

impl Index {
    pub fn named(family: FamilyId, label: &str) -> Index {
        Index {
            family,
            label: IndexLabel::named(label),
        }
    }

    pub fn dummy(family: FamilyId, k: u32) -> Index {
        Index {
            family,
            label: IndexLabel::Dummy(k),
        }
    }
}

/// Slot variance. Raising and lowering is a no-op for the delta-metric
/// families used here, so variance only affects rendering, never matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variance {
    Up,
    Down,
}

impl Variance {
    pub fn flip(self) -> Variance {
        match self {
            Variance::Up => Variance::Down,
            Variance::Down => Variance::Up,
        }
    }
}

/// Spatial point label. Single-point densities live at `Point::BASE`;
/// functional machinery introduces further points and renames them
/// canonically in order of first appearance.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct Point(pub u8);

impl Point {
    pub const BASE: Point = Point(0);
}

const POINT_NAMES: [&str; 4] = ["x", "y", "z", "w"];

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match POINT_NAMES.get(self.0 as usize) {
            Some(n) => write!(f, "{}", n),
            None => write!(f, "p{}", self.0),
        }
    }
}

impl Point {
    pub fn parse(s: &str) -> Option<Point> {
        if let Some(i) = POINT_NAMES.iter().position(|&n| n == s) {
            return Some(Point(i as u8));
        }
        s.strip_prefix('p').and_then(|t| t.parse().ok()).map(Point)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_names_round_trip() {
        for p in [Point(0), Point(1), Point(3), Point(7)] {
            assert_eq!(Point::parse(&p.to_string()), Some(p));
        }
        assert_eq!(Point::BASE.to_string(), "x");
    }
}
