//! Finite groups given by their Cayley table.

use serde::{Deserialize, Serialize};

use super::GroupError;

/// Index of a group element inside its [`FiniteGroup`].
pub type Element = usize;

/// A finite group stored as a composition table.
///
/// Elements are the integers `0..order`; `cayley[g][h]` is `g·h`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FiniteGroup {
    name: String,
    labels: Vec<String>,
    cayley: Vec<Vec<Element>>,
    identity: Element,
    inverse: Vec<Element>,
}

impl FiniteGroup {
    /// Builds a group from a composition table, checking every group axiom.
    pub fn from_cayley(
        name: impl Into<String>,
        labels: Vec<String>,
        cayley: Vec<Vec<Element>>,
    ) -> Result<Self, GroupError> {
        let n = cayley.len();
        if n == 0 {
            return Err(GroupError::Empty);
        }
        if labels.len() != n {
            return Err(GroupError::Shape(format!(
                "{} labels for {} elements",
                labels.len(),
                n
            )));
        }
        for (g, row) in cayley.iter().enumerate() {
            if row.len() != n {
                return Err(GroupError::Shape(format!("row {g} has {} entries", row.len())));
            }
            if let Some(&bad) = row.iter().find(|&&x| x >= n) {
                return Err(GroupError::Closure { g, value: bad });
            }
        }
        let identity = (0..n)
            .find(|&e| (0..n).all(|g| cayley[e][g] == g && cayley[g][e] == g))
            .ok_or(GroupError::NoIdentity)?;
        let mut inverse = Vec::with_capacity(n);
        for (g, row) in cayley.iter().enumerate() {
            let inv = (0..n)
                .find(|&h| row[h] == identity && cayley[h][g] == identity)
                .ok_or(GroupError::NoInverse(g))?;
            inverse.push(inv);
        }
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    if cayley[cayley[a][b]][c] != cayley[a][cayley[b][c]] {
                        return Err(GroupError::NotAssociative(a, b, c));
                    }
                }
            }
        }
        Ok(Self {
            name: name.into(),
            labels,
            cayley,
            identity,
            inverse,
        })
    }

    /// Cyclic group of order `n`; element `k` is the rotation by `k·2π/n`.
    pub fn cyclic(n: usize) -> Self {
        let cayley = (0..n)
            .map(|a| (0..n).map(|b| (a + b) % n).collect())
            .collect();
        let labels = (0..n)
            .map(|k| if k == 0 { "e".to_string() } else { format!("g{k}") })
            .collect();
        Self::from_cayley(format!("C{n}"), labels, cayley).expect("cyclic table is a group")
    }

    /// The group of quarter turns, ordered `(e, g1, g2, g3) = (0°, 90°, 180°, 270°)`.
    pub fn c4() -> Self {
        Self::cyclic(4)
    }

    /// The one-element group. Networks built over it carry no symmetry constraint.
    pub fn trivial() -> Self {
        Self::cyclic(1)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn order(&self) -> usize {
        self.cayley.len()
    }

    pub fn elements(&self) -> std::ops::Range<Element> {
        0..self.order()
    }

    pub fn label(&self, g: Element) -> &str {
        &self.labels[g]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn identity(&self) -> Element {
        self.identity
    }

    pub fn compose(&self, g: Element, h: Element) -> Element {
        self.cayley[g][h]
    }

    pub fn inverse(&self, g: Element) -> Element {
        self.inverse[g]
    }

    pub fn cayley(&self) -> &[Vec<Element>] {
        &self.cayley
    }

    /// `g^k`.
    pub fn power(&self, g: Element, k: usize) -> Element {
        (0..k).fold(self.identity, |acc, _| self.compose(acc, g))
    }

    /// Returns `Some(n)` when the table is addition modulo `n` in the stored
    /// element order, i.e. element `k` is the rotation by `k·2π/n`.
    pub fn cyclic_order(&self) -> Option<usize> {
        let n = self.order();
        let is_cyclic = self.identity == 0
            && (0..n).all(|a| (0..n).all(|b| self.cayley[a][b] == (a + b) % n));
        is_cyclic.then_some(n)
    }

    /// Number of quarter turns represented by `g` when the group is `C4` (or its
    /// trivial subgroup). Used by the image and grid actions.
    pub fn quarter_turns(&self, g: Element) -> Result<usize, GroupError> {
        match self.cyclic_order() {
            Some(1) => Ok(0),
            Some(2) => Ok(2 * g),
            Some(4) => Ok(g),
            _ => Err(GroupError::Unsupported(format!(
                "{} does not act by quarter turns",
                self.name
            ))),
        }
    }
}

/// The cyclic group of order four in canonical element order.
pub fn c4_group() -> FiniteGroup {
    FiniteGroup::c4()
}
