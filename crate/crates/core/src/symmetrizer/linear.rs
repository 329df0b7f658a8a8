//! Linear layers whose weights are linear combinations of equivariant basis matrices.

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::group::Representation;

use super::{BasisCache, EquivariantBasis, Field, FieldType, SymmetrizerError};

#[derive(Clone, Debug)]
struct WeightBlock {
    basis: Arc<EquivariantBasis>,
    coef_offset: usize,
    /// `out_index[co][a]`: absolute output row of component `a` of output copy `co`.
    out_index: Vec<Vec<usize>>,
    in_index: Vec<Vec<usize>>,
}

#[derive(Clone, Debug)]
struct BiasBlock {
    basis: Arc<EquivariantBasis>,
    coef_offset: usize,
    out_index: Vec<Vec<usize>>,
}

/// A linear map between two [`FieldType`]s that commutes with the group action.
///
/// Every (output field, input field) pair contributes one block per pair of
/// copies, each block spanned by the same basis but with its own coefficients.
/// Biases are restricted to vectors fixed by the output representation.
#[derive(Clone, Debug)]
pub struct EquivariantLinear {
    in_type: FieldType,
    out_type: FieldType,
    blocks: Vec<WeightBlock>,
    bias_blocks: Vec<BiasBlock>,
    num_weight_coefficients: usize,
    coefficients: Vec<f64>,
    weight: Array2<f64>,
    bias: Array1<f64>,
}

fn copy_indices(ft: &FieldType, field: usize) -> Vec<Vec<usize>> {
    let f = &ft.fields()[field];
    (0..f.multiplicity)
        .map(|c| (0..f.rep.dim()).map(|a| ft.index(field, c, a)).collect())
        .collect()
}

impl EquivariantLinear {
    /// Builds a layer with all coefficients zero.
    pub fn new(
        in_type: FieldType,
        out_type: FieldType,
        use_bias: bool,
        cache: &mut BasisCache,
    ) -> Result<Self, SymmetrizerError> {
        if let (Some(a), Some(b)) = (in_type.fields().first(), out_type.fields().first()) {
            if **a.rep.group() != **b.rep.group() {
                return Err(SymmetrizerError::GroupMismatch);
            }
        }
        let mut offset = 0;
        let mut blocks = Vec::new();
        for fo in 0..out_type.fields().len() {
            for fi in 0..in_type.fields().len() {
                let (of, inf) = (&out_type.fields()[fo], &in_type.fields()[fi]);
                let basis = cache.get(&inf.rep, &of.rep)?;
                let n = basis.rank() * of.multiplicity * inf.multiplicity;
                blocks.push(WeightBlock {
                    basis,
                    coef_offset: offset,
                    out_index: copy_indices(&out_type, fo),
                    in_index: copy_indices(&in_type, fi),
                });
                offset += n;
            }
        }
        let num_weight_coefficients = offset;
        let mut bias_blocks = Vec::new();
        if use_bias {
            for fo in 0..out_type.fields().len() {
                let of = &out_type.fields()[fo];
                let trivial = Representation::trivial(of.rep.group().clone(), 1);
                let basis = cache.get(&trivial, &of.rep)?;
                let n = basis.rank() * of.multiplicity;
                bias_blocks.push(BiasBlock {
                    basis,
                    coef_offset: offset,
                    out_index: copy_indices(&out_type, fo),
                });
                offset += n;
            }
        }
        let (din, dout) = (in_type.dim(), out_type.dim());
        Ok(Self {
            in_type,
            out_type,
            blocks,
            bias_blocks,
            num_weight_coefficients,
            coefficients: vec![0.0; offset],
            weight: Array2::zeros((dout, din)),
            bias: Array1::zeros(dout),
        })
    }

    /// A single-block layer over an explicit basis, one copy in and one copy out.
    pub fn from_basis(basis: Arc<EquivariantBasis>, use_bias: bool, cache: &mut BasisCache) -> Result<Self, SymmetrizerError> {
        let in_type = FieldType::single(Field::contiguous(basis.rep_in().clone(), 1));
        let out_type = FieldType::single(Field::contiguous(basis.rep_out().clone(), 1));
        cache.insert(basis);
        Self::new(in_type, out_type, use_bias, cache)
    }

    pub fn in_type(&self) -> &FieldType {
        &self.in_type
    }

    pub fn out_type(&self) -> &FieldType {
        &self.out_type
    }

    pub fn dim_in(&self) -> usize {
        self.in_type.dim()
    }

    pub fn dim_out(&self) -> usize {
        self.out_type.dim()
    }

    pub fn num_coefficients(&self) -> usize {
        self.coefficients.len()
    }

    pub fn num_weight_coefficients(&self) -> usize {
        self.num_weight_coefficients
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn set_coefficients(&mut self, coefficients: &[f64]) -> Result<(), SymmetrizerError> {
        if coefficients.len() != self.coefficients.len() {
            return Err(SymmetrizerError::DimensionMismatch {
                expected: (self.coefficients.len(), 1),
                got: (coefficients.len(), 1),
            });
        }
        self.coefficients.copy_from_slice(coefficients);
        self.realize();
        Ok(())
    }

    /// Random weight coefficients scaled so each realized weight entry has
    /// variance about `gain² / fan_in`; biases start at zero.
    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R, gain: f64) {
        let fan_in = self.dim_in().max(1) as f64;
        for block in &self.blocks {
            let rank = block.basis.rank();
            if rank == 0 {
                continue;
            }
            let d_block = (block.basis.dim_in() * block.basis.dim_out()) as f64;
            let sigma = gain * (d_block / (rank as f64 * fan_in)).sqrt();
            let n = rank * block.out_index.len() * block.in_index.len();
            for c in &mut self.coefficients[block.coef_offset..block.coef_offset + n] {
                let z: f64 = StandardNormal.sample(rng);
                *c = sigma * z;
            }
        }
        for c in &mut self.coefficients[self.num_weight_coefficients..] {
            *c = 0.0;
        }
        self.realize();
    }

    /// The realized dense weight `dim_out × dim_in`.
    pub fn weight(&self) -> &Array2<f64> {
        &self.weight
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }

    fn realize(&mut self) {
        self.weight.fill(0.0);
        let din = self.weight.ncols();
        let w = self.weight.as_slice_mut().expect("weight is contiguous");
        for block in &self.blocks {
            let rank = block.basis.rank();
            if rank == 0 {
                continue;
            }
            let db = block.basis.dim_in();
            let mi = block.in_index.len();
            let pairs = block.out_index.len() * mi;
            let coefs = ArrayView2::from_shape((pairs, rank), &self.coefficients[block.coef_offset..block.coef_offset + pairs * rank])
                .expect("coefficient layout");
            // every copy pair shares the basis, so one product realizes the whole block
            let dense = coefs.dot(block.basis.flat());
            for (co, rows) in block.out_index.iter().enumerate() {
                for (ci, cols) in block.in_index.iter().enumerate() {
                    let vals = dense.row(co * mi + ci);
                    let vals = vals.as_slice().expect("rows of a fresh product are contiguous");
                    for (a, &r) in rows.iter().enumerate() {
                        let dst = &mut w[r * din..(r + 1) * din];
                        for (&c, &v) in cols.iter().zip(&vals[a * db..(a + 1) * db]) {
                            dst[c] += v;
                        }
                    }
                }
            }
        }
        self.bias.fill(0.0);
        for block in &self.bias_blocks {
            let rank = block.basis.rank();
            let flat = block.basis.flat();
            for (co, rows) in block.out_index.iter().enumerate() {
                let base = block.coef_offset + co * rank;
                for k in 0..rank {
                    let c = self.coefficients[base + k];
                    for (a, &r) in rows.iter().enumerate() {
                        self.bias[r] += c * flat[[k, a]];
                    }
                }
            }
        }
    }

    /// `W·x + b` with a fixed summation order, so that results are
    /// reproducible bit for bit wherever the same input is evaluated.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim_in(), "input does not match layer");
        let mut out = Vec::with_capacity(self.dim_out());
        for (i, row) in self.weight.outer_iter().enumerate() {
            let mut acc = 0.0;
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            out.push(acc + self.bias[i]);
        }
        out
    }

    /// Row-wise `x·Wᵀ + b` for a batch `n × dim_in`.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight.t());
        y += &self.bias;
        y
    }

    /// Accumulates coefficient gradients into `grad` (length
    /// [`num_coefficients`](Self::num_coefficients)) and returns the input gradient.
    ///
    /// `x` is the batch that was fed to [`forward_batch`](Self::forward_batch)
    /// and `dy` the gradient of the loss with respect to its output.
    pub fn backward_batch(&self, x: ArrayView2<f64>, dy: ArrayView2<f64>, grad: &mut [f64]) -> Array2<f64> {
        assert_eq!(grad.len(), self.num_coefficients());
        let dw = dy.t().dot(&x);
        self.accumulate_weight_grad(&dw, grad);
        if !self.bias_blocks.is_empty() {
            let db = dy.sum_axis(Axis(0));
            self.accumulate_bias_grad(&db, grad);
        }
        dy.dot(&self.weight)
    }

    /// Projects a dense weight gradient onto the coefficients.
    pub fn accumulate_weight_grad(&self, dw: &Array2<f64>, grad: &mut [f64]) {
        let din = dw.ncols();
        let dw = dw.as_standard_layout();
        let dws = dw.as_slice().expect("standard layout");
        for block in &self.blocks {
            let rank = block.basis.rank();
            if rank == 0 {
                continue;
            }
            let (da, db) = (block.basis.dim_out(), block.basis.dim_in());
            let mi = block.in_index.len();
            let pairs = block.out_index.len() * mi;
            let mut sub = Array2::zeros((pairs, da * db));
            for (co, rows) in block.out_index.iter().enumerate() {
                for (ci, cols) in block.in_index.iter().enumerate() {
                    let mut dst = sub.row_mut(co * mi + ci);
                    let dst = dst.as_slice_mut().expect("rows of a fresh array are contiguous");
                    for (a, &r) in rows.iter().enumerate() {
                        let src = &dws[r * din..(r + 1) * din];
                        for (d, &c) in dst[a * db..(a + 1) * db].iter_mut().zip(cols) {
                            *d = src[c];
                        }
                    }
                }
            }
            let proj = sub.dot(&block.basis.flat().t());
            let out = &mut grad[block.coef_offset..block.coef_offset + pairs * rank];
            for (g, p) in out.iter_mut().zip(proj.iter()) {
                *g += p;
            }
        }
    }

    /// Projects a dense bias gradient onto the bias coefficients.
    pub fn accumulate_bias_grad(&self, db: &Array1<f64>, grad: &mut [f64]) {
        for block in &self.bias_blocks {
            let rank = block.basis.rank();
            let flat = block.basis.flat();
            for (co, rows) in block.out_index.iter().enumerate() {
                let base = block.coef_offset + co * rank;
                for k in 0..rank {
                    let mut acc = 0.0;
                    for (a, &r) in rows.iter().enumerate() {
                        acc += flat[[k, a]] * db[r];
                    }
                    grad[base + k] += acc;
                }
            }
        }
    }
}
