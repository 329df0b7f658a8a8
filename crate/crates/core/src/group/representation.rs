//! Matrix representations of finite groups.
//!
//! Permutation matrices follow the convention `(ρ(g)x)_i = x_{perm_g[i]}`, so a
//! permutation list such as `g1 = [3, 0, 1, 2]` means "entry 1 of the output
//! is entry 0 of the input". With that convention `ρ(gh) = ρ(g)ρ(h)` holds for
//! the regular representation built from `perm_g[i] = g⁻¹·i`.

use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Element, FiniteGroup, GroupError};

/// Tolerance used when validating the homomorphism property.
pub const HOMOMORPHISM_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepKind {
    Permutation,
    Rotation,
    Regular,
    DirectSum,
    Trivial,
    Tensor,
}

/// A homomorphism from a finite group into `GL(dim, ℝ)`, stored densely.
#[derive(Clone, Debug)]
pub struct Representation {
    group: Arc<FiniteGroup>,
    kind: RepKind,
    matrices: Vec<Array2<f64>>,
}

impl Representation {
    /// Wraps explicit matrices, validating identity and homomorphism.
    pub fn from_matrices(
        group: Arc<FiniteGroup>,
        kind: RepKind,
        matrices: Vec<Array2<f64>>,
    ) -> Result<Self, GroupError> {
        if matrices.len() != group.order() {
            return Err(GroupError::Shape(format!(
                "{} matrices for a group of order {}",
                matrices.len(),
                group.order()
            )));
        }
        let dim = matrices[0].nrows();
        if matrices.iter().any(|m| m.nrows() != dim || m.ncols() != dim) {
            return Err(GroupError::Shape("matrices must all be square of one size".into()));
        }
        let rep = Self {
            group,
            kind,
            matrices,
        };
        let id = rep.matrix(rep.group.identity());
        if max_abs_diff(id, &Array2::eye(dim)) > HOMOMORPHISM_TOL {
            return Err(GroupError::Homomorphism("identity element is not mapped to I".into()));
        }
        let residual = rep.homomorphism_residual();
        if residual > HOMOMORPHISM_TOL {
            return Err(GroupError::Homomorphism(format!(
                "max |ρ(gh) - ρ(g)ρ(h)| = {residual:e}"
            )));
        }
        Ok(rep)
    }

    /// Permutation representation from one permutation list per element.
    pub fn permutation(group: Arc<FiniteGroup>, perms: &[Vec<usize>]) -> Result<Self, GroupError> {
        Self::permutation_with_kind(group, perms, RepKind::Permutation)
    }

    fn permutation_with_kind(
        group: Arc<FiniteGroup>,
        perms: &[Vec<usize>],
        kind: RepKind,
    ) -> Result<Self, GroupError> {
        if perms.len() != group.order() {
            return Err(GroupError::Shape(format!(
                "{} permutations for a group of order {}",
                perms.len(),
                group.order()
            )));
        }
        let n = perms[0].len();
        let mut matrices = Vec::with_capacity(perms.len());
        for (g, p) in perms.iter().enumerate() {
            if p.len() != n {
                return Err(GroupError::NotBijective(format!(
                    "permutation for element {g} has length {} (expected {n})",
                    p.len()
                )));
            }
            let mut seen = vec![false; n];
            for &x in p {
                if x >= n || seen[x] {
                    return Err(GroupError::NotBijective(format!(
                        "permutation for element {g} is {p:?}"
                    )));
                }
                seen[x] = true;
            }
            let mut m = Array2::zeros((n, n));
            for (i, &src) in p.iter().enumerate() {
                m[[i, src]] = 1.0;
            }
            matrices.push(m);
        }
        Self::from_matrices(group, kind, matrices)
    }

    /// The regular representation: `G` acting on itself by left multiplication.
    pub fn regular(group: Arc<FiniteGroup>) -> Self {
        let perms: Vec<Vec<usize>> = group
            .elements()
            .map(|g| {
                let inv = group.inverse(g);
                group.elements().map(|i| group.compose(inv, i)).collect()
            })
            .collect();
        Self::permutation_with_kind(group, &perms, RepKind::Regular)
            .expect("left multiplication is a homomorphism")
    }

    /// Every element acts as the `dim`-dimensional identity.
    pub fn trivial(group: Arc<FiniteGroup>, dim: usize) -> Self {
        let matrices = vec![Array2::eye(dim); group.order()];
        Self {
            group,
            kind: RepKind::Trivial,
            matrices,
        }
    }

    /// Planar rotations `R(2πk/n)` for the cyclic group `C_n`.
    pub fn rotation(group: Arc<FiniteGroup>) -> Result<Self, GroupError> {
        let n = group.cyclic_order().ok_or_else(|| {
            GroupError::Unsupported(format!("{} is not a cyclic rotation group", group.name()))
        })?;
        let snap = |v: f64| {
            let r = v.round();
            if (v - r).abs() < 1e-12 {
                r
            } else {
                v
            }
        };
        let matrices = (0..n)
            .map(|k| {
                let theta = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                let (s, c) = theta.sin_cos();
                let (s, c) = (snap(s), snap(c));
                Array2::from_shape_vec((2, 2), vec![c, -s, s, c]).unwrap()
            })
            .collect();
        Self::from_matrices(group, RepKind::Rotation, matrices)
    }

    /// Block-diagonal `ρ₁(g) ⊕ ρ₂(g)`.
    pub fn direct_sum(a: &Self, b: &Self) -> Result<Self, GroupError> {
        if *a.group != *b.group {
            return Err(GroupError::GroupMismatch);
        }
        let (da, db) = (a.dim(), b.dim());
        let matrices = a
            .matrices
            .iter()
            .zip(&b.matrices)
            .map(|(ma, mb)| {
                let mut m = Array2::zeros((da + db, da + db));
                m.slice_mut(ndarray::s![..da, ..da]).assign(ma);
                m.slice_mut(ndarray::s![da.., da..]).assign(mb);
                m
            })
            .collect();
        Self::from_matrices(a.group.clone(), RepKind::DirectSum, matrices)
    }

    /// Kronecker product `ρ₁(g) ⊗ ρ₂(g)`; the first factor indexes the outer blocks.
    pub fn tensor(a: &Self, b: &Self) -> Result<Self, GroupError> {
        if *a.group != *b.group {
            return Err(GroupError::GroupMismatch);
        }
        let matrices = a
            .matrices
            .iter()
            .zip(&b.matrices)
            .map(|(ma, mb)| kron(ma, mb))
            .collect();
        Self::from_matrices(a.group.clone(), RepKind::Tensor, matrices)
    }

    pub fn group(&self) -> &Arc<FiniteGroup> {
        &self.group
    }

    pub fn kind(&self) -> RepKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.matrices[0].nrows()
    }

    pub fn matrix(&self, g: Element) -> &Array2<f64> {
        &self.matrices[g]
    }

    pub fn matrices(&self) -> &[Array2<f64>] {
        &self.matrices
    }

    /// `ρ(g)·x`.
    pub fn apply(&self, g: Element, x: &[f64]) -> Vec<f64> {
        let m = &self.matrices[g];
        (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| m[[i, j]] * x[j]).sum())
            .collect()
    }

    /// `max_{g,h} ‖ρ(gh) − ρ(g)ρ(h)‖∞`.
    pub fn homomorphism_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for g in self.group.elements() {
            for h in self.group.elements() {
                let prod = self.matrices[g].dot(&self.matrices[h]);
                let gh = &self.matrices[self.group.compose(g, h)];
                worst = worst.max(max_abs_diff(&prod, gh));
            }
        }
        worst
    }

    /// True when every matrix has exactly one unit entry per row and column.
    pub fn is_permutation(&self) -> bool {
        self.matrices.iter().all(|m| {
            let rows_ok = m.rows().into_iter().all(|r| is_unit_row(r.iter()));
            let cols_ok = m.columns().into_iter().all(|c| is_unit_row(c.iter()));
            rows_ok && cols_ok
        })
    }

    /// The permutation list of `ρ(g)` if it is a permutation matrix.
    pub fn permutation_of(&self, g: Element) -> Option<Vec<usize>> {
        let m = &self.matrices[g];
        m.rows()
            .into_iter()
            .map(|r| {
                is_unit_row(r.iter()).then(|| r.iter().position(|&v| v == 1.0).unwrap())
            })
            .collect()
    }

    /// Stable textual identity used to cache bases per representation pair.
    pub fn fingerprint(&self) -> String {
        let mut s = format!("{}:{}:", self.group.name(), self.dim());
        for m in &self.matrices {
            for v in m.iter() {
                s.push_str(&format!("{v},"));
            }
            s.push(';');
        }
        s
    }

    pub fn to_doc(&self) -> RepresentationDoc {
        RepresentationDoc {
            group: self.group.name().to_string(),
            elements: self.group.labels().to_vec(),
            kind: self.kind,
            dim: self.dim(),
            matrices: self
                .matrices
                .iter()
                .map(|m| m.rows().into_iter().map(|r| r.to_vec()).collect())
                .collect(),
        }
    }

    pub fn from_doc(group: Arc<FiniteGroup>, doc: &RepresentationDoc) -> Result<Self, GroupError> {
        if doc.elements != group.labels() {
            return Err(GroupError::GroupMismatch);
        }
        let matrices = doc
            .matrices
            .iter()
            .map(|rows| {
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                Array2::from_shape_vec((doc.dim, doc.dim), flat)
                    .map_err(|e| GroupError::Shape(e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_matrices(group, doc.kind, matrices)
    }
}

/// JSON form of a representation: element order plus each matrix as rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepresentationDoc {
    pub group: String,
    pub elements: Vec<String>,
    pub kind: RepKind,
    pub dim: usize,
    pub matrices: Vec<Vec<Vec<f64>>>,
}

pub fn rotation_representation(group: Arc<FiniteGroup>) -> Result<Representation, GroupError> {
    Representation::rotation(group)
}

pub fn permutation_representation(
    group: Arc<FiniteGroup>,
    perms: &[Vec<usize>],
) -> Result<Representation, GroupError> {
    Representation::permutation(group, perms)
}

pub fn direct_sum(a: &Representation, b: &Representation) -> Result<Representation, GroupError> {
    Representation::direct_sum(a, b)
}

pub(crate) fn kron(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let v = a[[i, j]];
            if v != 0.0 {
                out.slice_mut(ndarray::s![i * br..(i + 1) * br, j * bc..(j + 1) * bc])
                    .assign(&(b * v));
            }
        }
    }
    out
}

pub(crate) fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn is_unit_row<'a>(it: impl Iterator<Item = &'a f64>) -> bool {
    let mut ones = 0;
    for &v in it {
        if v == 1.0 {
            ones += 1;
        } else if v != 0.0 {
            return false;
        }
    }
    ones == 1
}
