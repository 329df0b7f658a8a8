//! Exact dimension of an equivariant weight space.
//!
//! Solves the stacked linear system `ρ_out(g)·W − W·ρ_in(g) = 0` for every
//! group element with rational Gaussian elimination. This path shares no code
//! with the sampling/SVD construction and serves as its cross-check.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};

use crate::group::Representation;

use super::SymmetrizerError;

/// Dimension of `{W : ρ_out(g)·W = W·ρ_in(g) ∀g}`, computed exactly.
///
/// Representation entries must be integers (true for every permutation and
/// quarter-turn rotation representation).
pub fn exact_constraint_rank(
    rep_in: &Representation,
    rep_out: &Representation,
) -> Result<usize, SymmetrizerError> {
    if **rep_in.group() != **rep_out.group() {
        return Err(SymmetrizerError::GroupMismatch);
    }
    let (din, dout) = (rep_in.dim(), rep_out.dim());
    let unknowns = din * dout;
    let to_int = |v: f64| -> Result<i64, SymmetrizerError> {
        let r = v.round();
        if (v - r).abs() > 1e-12 {
            Err(SymmetrizerError::NonIntegral(v))
        } else {
            Ok(r as i64)
        }
    };
    let mut echelon = Echelon::new(unknowns);
    for g in rep_in.group().elements() {
        let (pin, pout) = (rep_in.matrix(g), rep_out.matrix(g));
        for a in 0..dout {
            for b in 0..din {
                let mut row = vec![0i64; unknowns];
                for c in 0..dout {
                    row[c * din + b] += to_int(pout[[a, c]])?;
                }
                for c in 0..din {
                    row[a * din + c] -= to_int(pin[[c, b]])?;
                }
                echelon.insert(row);
            }
        }
    }
    Ok(unknowns - echelon.rank())
}

/// Incrementally maintained reduced row echelon form over ℚ.
struct Echelon {
    width: usize,
    /// `(pivot column, sparse row normalised so the pivot entry is 1)`.
    rows: Vec<(usize, Vec<(usize, BigRational)>)>,
}

impl Echelon {
    fn new(width: usize) -> Self {
        Self {
            width,
            rows: Vec::new(),
        }
    }

    fn rank(&self) -> usize {
        self.rows.len()
    }

    fn insert(&mut self, row: Vec<i64>) {
        if row.iter().all(|&v| v == 0) {
            return;
        }
        let mut dense: Vec<BigRational> = row
            .into_iter()
            .map(|v| BigRational::from_integer(BigInt::from(v)))
            .collect();
        for (pivot, prow) in &self.rows {
            let factor = dense[*pivot].clone();
            if factor.is_zero() {
                continue;
            }
            for (j, v) in prow {
                dense[*j] -= &factor * v;
            }
        }
        let Some(pivot) = (0..self.width).find(|&j| !dense[j].is_zero()) else {
            return;
        };
        let inv = BigRational::one() / &dense[pivot];
        let new_row: Vec<(usize, BigRational)> = dense
            .into_iter()
            .enumerate()
            .filter(|(_, v)| !v.is_zero())
            .map(|(j, v)| (j, v * &inv))
            .collect();
        // keep the form fully reduced so a single pass suffices on insertion
        for (_, prow) in self.rows.iter_mut() {
            let Some(pos) = prow.iter().position(|(j, _)| *j == pivot) else {
                continue;
            };
            let factor = prow[pos].1.clone();
            let mut merged: std::collections::BTreeMap<usize, BigRational> =
                prow.drain(..).collect();
            for (j, v) in &new_row {
                let entry = merged.entry(*j).or_insert_with(BigRational::zero);
                *entry -= &factor * v;
            }
            *prow = merged.into_iter().filter(|(_, v)| !v.is_zero()).collect();
        }
        self.rows.push((pivot, new_row));
    }
}
