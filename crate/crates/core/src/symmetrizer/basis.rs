//! Bases of equivariant weight subspaces.
//!
//! Random matrices are projected onto the subspace `{W : ρ_out(g)·W = W·ρ_in(g) ∀g}`
//! by group averaging, and an SVD of the stacked projections yields an
//! orthonormal basis of that subspace.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::group::{max_abs_diff, Representation};

use super::SymmetrizerError;

/// Singular values below this fraction of the largest one are treated as zero.
pub const SINGULAR_VALUE_CUTOFF: f64 = 1e-6;

/// `S(W) = (1/|G|) Σ_g ρ_out(g)⁻¹ · W · ρ_in(g)`.
pub fn symmetrize(
    w: &Array2<f64>,
    rep_in: &Representation,
    rep_out: &Representation,
) -> Result<Array2<f64>, SymmetrizerError> {
    check_pair(rep_in, rep_out)?;
    if w.dim() != (rep_out.dim(), rep_in.dim()) {
        return Err(SymmetrizerError::DimensionMismatch {
            expected: (rep_out.dim(), rep_in.dim()),
            got: w.dim(),
        });
    }
    let group = rep_in.group();
    let mut acc = Array2::zeros(w.dim());
    for g in group.elements() {
        let out_inv = rep_out.matrix(group.inverse(g));
        acc += &out_inv.dot(w).dot(rep_in.matrix(g));
    }
    Ok(acc / group.order() as f64)
}

/// Largest violation of `ρ_out(g)·W = W·ρ_in(g)` over all group elements.
pub fn constraint_residual(w: &Array2<f64>, rep_in: &Representation, rep_out: &Representation) -> f64 {
    rep_in
        .group()
        .elements()
        .map(|g| {
            let lhs = rep_out.matrix(g).dot(w);
            let rhs = w.dot(rep_in.matrix(g));
            max_abs_diff(&lhs, &rhs)
        })
        .fold(0.0, f64::max)
}

fn check_pair(rep_in: &Representation, rep_out: &Representation) -> Result<(), SymmetrizerError> {
    if **rep_in.group() != **rep_out.group() {
        return Err(SymmetrizerError::GroupMismatch);
    }
    Ok(())
}

/// An orthonormal (Frobenius) basis of the equivariant maps `rep_in → rep_out`.
#[derive(Clone, Debug)]
pub struct EquivariantBasis {
    rep_in: Representation,
    rep_out: Representation,
    /// One row per basis element, each the row-major flattening of a `dim_out × dim_in` matrix.
    flat: Array2<f64>,
}

impl EquivariantBasis {
    pub fn rep_in(&self) -> &Representation {
        &self.rep_in
    }

    pub fn rep_out(&self) -> &Representation {
        &self.rep_out
    }

    pub fn rank(&self) -> usize {
        self.flat.nrows()
    }

    pub fn dim_in(&self) -> usize {
        self.rep_in.dim()
    }

    pub fn dim_out(&self) -> usize {
        self.rep_out.dim()
    }

    /// Basis elements flattened row-major, shape `rank × (dim_out·dim_in)`.
    pub fn flat(&self) -> &Array2<f64> {
        &self.flat
    }

    pub fn element(&self, k: usize) -> Array2<f64> {
        self.flat
            .row(k)
            .to_owned()
            .into_shape_with_order((self.dim_out(), self.dim_in()))
            .expect("basis rows have dim_out·dim_in entries")
    }

    pub fn elements(&self) -> Vec<Array2<f64>> {
        (0..self.rank()).map(|k| self.element(k)).collect()
    }

    /// `Σ_k c_k B_k`.
    pub fn combine(&self, coefficients: &[f64]) -> Array2<f64> {
        assert_eq!(coefficients.len(), self.rank());
        let mut flat = ndarray::Array1::zeros(self.flat.ncols());
        for (k, &c) in coefficients.iter().enumerate() {
            flat.scaled_add(c, &self.flat.row(k));
        }
        flat.into_shape_with_order((self.dim_out(), self.dim_in()))
            .expect("flat length matches")
    }

    /// Largest equivariance-constraint violation over all basis elements.
    pub fn max_residual(&self) -> f64 {
        (0..self.rank())
            .map(|k| constraint_residual(&self.element(k), &self.rep_in, &self.rep_out))
            .fold(0.0, f64::max)
    }
}

/// Default number of random samples: twice the number of weight entries.
pub fn default_num_samples(dim_in: usize, dim_out: usize) -> usize {
    2 * dim_in * dim_out
}

/// Finds a basis for the equivariant maps `rep_in → rep_out`.
///
/// Samples `num_samples` standard normal matrices, symmetrizes and stacks
/// them, and keeps the right singular vectors whose singular value exceeds
/// [`SINGULAR_VALUE_CUTOFF`] relative to the largest. Deterministic in `seed`.
pub fn find_basis(
    rep_in: &Representation,
    rep_out: &Representation,
    num_samples: usize,
    seed: u64,
) -> Result<EquivariantBasis, SymmetrizerError> {
    check_pair(rep_in, rep_out)?;
    let (din, dout) = (rep_in.dim(), rep_out.dim());
    let d = din * dout;
    if num_samples < d {
        return Err(SymmetrizerError::TooFewSamples {
            needed: d,
            got: num_samples,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stacked = DMatrix::<f64>::zeros(num_samples, d);
    for s in 0..num_samples {
        let w = Array2::from_shape_fn((dout, din), |_| StandardNormal.sample(&mut rng));
        let sym = symmetrize(&w, rep_in, rep_out)?;
        for (j, v) in sym.iter().enumerate() {
            stacked[(s, j)] = *v;
        }
    }
    let svd = stacked.svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let sigma = &svd.singular_values;
    let max_sigma = sigma.iter().copied().fold(0.0, f64::max);
    let mut keep: Vec<usize> = if max_sigma > 1e-12 {
        (0..sigma.len())
            .filter(|&i| sigma[i] > SINGULAR_VALUE_CUTOFF * max_sigma)
            .collect()
    } else {
        Vec::new()
    };
    keep.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));
    if keep.is_empty() {
        log::warn!(
            "equivariant subspace for {}-dim → {}-dim representations is empty; the layer is identically zero",
            din,
            dout
        );
    }
    let mut flat = Array2::zeros((keep.len(), d));
    for (row, &i) in keep.iter().enumerate() {
        for j in 0..d {
            flat[[row, j]] = v_t[(i, j)];
        }
    }
    Ok(EquivariantBasis {
        rep_in: rep_in.clone(),
        rep_out: rep_out.clone(),
        flat,
    })
}

/// Basis for maps from planar vectors (acted on by rotations) into a
/// permutation representation, i.e. solutions of `W = K_g⁻¹ W R_g`.
pub fn mixed_basis(
    rot_rep: &Representation,
    perm_rep: &Representation,
    seed: u64,
) -> Result<EquivariantBasis, SymmetrizerError> {
    let n = default_num_samples(rot_rep.dim(), perm_rep.dim());
    find_basis(rot_rep, perm_rep, n, seed)
}

/// Basis of the invariant vectors `{v : ρ(g)v = v}`, returned as `dim × 1` maps
/// from the trivial representation. Used for equivariant biases.
pub fn invariant_basis(rep: &Representation, seed: u64) -> Result<EquivariantBasis, SymmetrizerError> {
    let trivial = Representation::trivial(rep.group().clone(), 1);
    find_basis(&trivial, rep, default_num_samples(1, rep.dim()), seed)
}

/// Memoizes bases per representation pair so a network computes each SVD once.
#[derive(Default)]
pub struct BasisCache {
    seed: u64,
    bases: HashMap<(String, String), Arc<EquivariantBasis>>,
}

impl BasisCache {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            bases: HashMap::new(),
        }
    }

    pub fn get(
        &mut self,
        rep_in: &Representation,
        rep_out: &Representation,
    ) -> Result<Arc<EquivariantBasis>, SymmetrizerError> {
        let key = (rep_in.fingerprint(), rep_out.fingerprint());
        if let Some(b) = self.bases.get(&key) {
            return Ok(b.clone());
        }
        let n = default_num_samples(rep_in.dim(), rep_out.dim());
        let basis = Arc::new(find_basis(rep_in, rep_out, n, self.seed)?);
        self.bases.insert(key, basis.clone());
        Ok(basis)
    }

    /// Registers an externally built basis so later lookups reuse it.
    pub fn insert(&mut self, basis: Arc<EquivariantBasis>) {
        let key = (basis.rep_in().fingerprint(), basis.rep_out().fingerprint());
        self.bases.insert(key, basis);
    }

    pub fn len(&self) -> usize {
        self.bases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bases.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::FiniteGroup;

    fn c4() -> Arc<FiniteGroup> {
        Arc::new(FiniteGroup::c4())
    }

    fn random(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn symmetrize_projects_and_is_idempotent() {
        let reg = Representation::regular(c4());
        let w = random(4, 4, 1);
        let s = symmetrize(&w, &reg, &reg).unwrap();
        assert!(constraint_residual(&s, &reg, &reg) < 1e-10);
        let ss = symmetrize(&s, &reg, &reg).unwrap();
        assert!(max_abs_diff(&s, &ss) < 1e-12);
    }

    #[test]
    fn symmetrize_trivial_group_is_identity() {
        let g = Arc::new(FiniteGroup::trivial());
        let a = Representation::trivial(g.clone(), 3);
        let b = Representation::trivial(g, 2);
        let w = random(2, 3, 2);
        assert_eq!(symmetrize(&w, &a, &b).unwrap(), w);
    }

    #[test]
    fn symmetrize_rejects_bad_dims() {
        let reg = Representation::regular(c4());
        assert!(matches!(
            symmetrize(&random(3, 4, 0), &reg, &reg),
            Err(SymmetrizerError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn regular_to_trivial_is_constant_row() {
        let g = c4();
        let reg = Representation::regular(g.clone());
        let triv = Representation::trivial(g, 1);
        let b = find_basis(&reg, &triv, 8, 3).unwrap();
        assert_eq!(b.rank(), 1);
        let row = b.element(0);
        for v in row.iter() {
            assert!((v.abs() - 0.5).abs() < 1e-10);
            assert!((v - row[[0, 0]]).abs() < 1e-10);
        }
    }

    #[test]
    fn basis_is_orthonormal_and_projection_complement_is_orthogonal() {
        let g = c4();
        let reg = Representation::regular(g.clone());
        let rot = Representation::rotation(g).unwrap();
        let b = find_basis(&rot, &reg, 16, 9).unwrap();
        assert_eq!(b.rank(), 2);
        let gram = b.flat().dot(&b.flat().t());
        assert!(max_abs_diff(&gram, &Array2::eye(2)) < 1e-10);
        let w = random(4, 2, 5);
        let resid = &w - &symmetrize(&w, &rot, &reg).unwrap();
        for e in b.elements() {
            let inner: f64 = (&resid * &e).sum();
            assert!(inner.abs() < 1e-10);
        }
    }

    #[test]
    fn too_few_samples_is_an_error() {
        let reg = Representation::regular(c4());
        assert!(matches!(
            find_basis(&reg, &reg, 10, 0),
            Err(SymmetrizerError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn deterministic_given_seed() {
        let reg = Representation::regular(c4());
        let a = find_basis(&reg, &reg, 32, 11).unwrap();
        let b = find_basis(&reg, &reg, 32, 11).unwrap();
        assert_eq!(a.flat(), b.flat());
    }

    #[test]
    fn empty_subspace_is_legal() {
        // the sign representation of C2 has no invariant vectors
        let g = Arc::new(FiniteGroup::cyclic(2));
        let sign = Representation::from_matrices(
            g.clone(),
            crate::group::RepKind::Rotation,
            vec![Array2::eye(1), Array2::from_elem((1, 1), -1.0)],
        )
        .unwrap();
        let b = invariant_basis(&sign, 0).unwrap();
        assert_eq!(b.rank(), 0);
    }
}
