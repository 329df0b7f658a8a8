//! Quarter-turn equivariant 2D convolution.
//!
//! A convolution is a shared linear map applied to every image patch. Each
//! patch transforms under the tensor product of the input channel
//! representation and the pixel permutation of a `k × k` window, so the
//! filter bank is an [`EquivariantLinear`] between those field types and the
//! regular output representation.

use std::sync::Arc;

use ndarray::{Array2, Array3, Array4, ArrayView2, ArrayView4};
use rand::Rng;

use crate::group::{FiniteGroup, ImageAction, Representation};

use super::{BasisCache, EquivariantLinear, Field, FieldType, SymmetrizerError};

/// Feature maps are `C × H × W` with channel index `b·channels + c` for group
/// channel `b` and feature `c`. A lifting layer has a single input group channel.
#[derive(Clone, Debug)]
pub struct EquivariantConv {
    in_group_channels: usize,
    out_group_channels: usize,
    channels_in: usize,
    channels_out: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    linear: EquivariantLinear,
}

/// Output spatial size of a convolution, or an error if the input is too small.
pub fn conv_output_size(size: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize, SymmetrizerError> {
    let padded = size + 2 * padding;
    if padded < kernel || stride == 0 {
        return Err(SymmetrizerError::TooSmall {
            size,
            kernel,
        });
    }
    Ok((padded - kernel) / stride + 1)
}

impl EquivariantConv {
    /// `lifting = true` maps plain images (trivial input representation) to
    /// regular group channels; otherwise input and output are both regular.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        group: Arc<FiniteGroup>,
        lifting: bool,
        channels_in: usize,
        channels_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        cache: &mut BasisCache,
    ) -> Result<Self, SymmetrizerError> {
        let in_repr = if lifting {
            Representation::trivial(group.clone(), 1)
        } else {
            Representation::regular(group.clone())
        };
        let patch = ImageAction::new(group.clone(), kernel)?.representation();
        let patch_rep = Representation::tensor(&in_repr, &patch)?;
        let in_type = FieldType::single(Field {
            rep: patch_rep,
            multiplicity: channels_in,
            inner: kernel * kernel,
        });
        let out_repr = Representation::regular(group);
        let out_group_channels = out_repr.dim();
        let out_type = FieldType::single(Field::interleaved(out_repr, channels_out));
        let linear = EquivariantLinear::new(in_type, out_type, true, cache)?;
        Ok(Self {
            in_group_channels: in_repr.dim(),
            out_group_channels,
            channels_in,
            channels_out,
            kernel,
            stride,
            padding,
            linear,
        })
    }

    pub fn linear(&self) -> &EquivariantLinear {
        &self.linear
    }

    pub fn linear_mut(&mut self) -> &mut EquivariantLinear {
        &mut self.linear
    }

    pub fn in_channels_total(&self) -> usize {
        self.in_group_channels * self.channels_in
    }

    pub fn out_channels_total(&self) -> usize {
        self.out_group_channels * self.channels_out
    }

    pub fn out_group_channels(&self) -> usize {
        self.out_group_channels
    }

    pub fn channels_out(&self) -> usize {
        self.channels_out
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn padding(&self) -> usize {
        self.padding
    }

    pub fn num_coefficients(&self) -> usize {
        self.linear.num_coefficients()
    }

    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R, gain: f64) {
        self.linear.init(rng, gain);
    }

    pub fn output_size(&self, size: usize) -> Result<usize, SymmetrizerError> {
        conv_output_size(size, self.kernel, self.stride, self.padding)
    }

    /// Unfolds a batch `N × C × H × W` into rows of patches, one row per
    /// (sample, output pixel), columns ordered `channel·k² + patch pixel`.
    pub fn im2col(&self, x: ArrayView4<f64>) -> Result<Array2<f64>, SymmetrizerError> {
        let (n, c, h, w) = x.dim();
        if c != self.in_channels_total() {
            return Err(SymmetrizerError::DimensionMismatch {
                expected: (self.in_channels_total(), h),
                got: (c, h),
            });
        }
        let (ho, wo) = (self.output_size(h)?, self.output_size(w)?);
        let k = self.kernel;
        let mut cols = Array2::zeros((n * ho * wo, c * k * k));
        for s in 0..n {
            for oy in 0..ho {
                for ox in 0..wo {
                    let row = (s * ho + oy) * wo + ox;
                    let mut out = cols.row_mut(row);
                    for ch in 0..c {
                        for py in 0..k {
                            let iy = (oy * self.stride + py) as isize - self.padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for px in 0..k {
                                let ix = (ox * self.stride + px) as isize - self.padding as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                out[(ch * k + py) * k + px] = x[[s, ch, iy as usize, ix as usize]];
                            }
                        }
                    }
                }
            }
        }
        Ok(cols)
    }

    /// Folds patch gradients back onto an input of spatial size `h × w`.
    pub fn col2im(&self, dcols: ArrayView2<f64>, n: usize, h: usize, w: usize) -> Array4<f64> {
        let c = self.in_channels_total();
        let (ho, wo) = (self.output_size(h).unwrap(), self.output_size(w).unwrap());
        let k = self.kernel;
        let mut dx = Array4::zeros((n, c, h, w));
        for s in 0..n {
            for oy in 0..ho {
                for ox in 0..wo {
                    let row = dcols.row((s * ho + oy) * wo + ox);
                    for ch in 0..c {
                        for py in 0..k {
                            let iy = (oy * self.stride + py) as isize - self.padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for px in 0..k {
                                let ix = (ox * self.stride + px) as isize - self.padding as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                dx[[s, ch, iy as usize, ix as usize]] += row[(ch * k + py) * k + px];
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    fn fold_rows(&self, y: &Array2<f64>, n: usize, ho: usize, wo: usize) -> Array4<f64> {
        let c = self.out_channels_total();
        let mut out = Array4::zeros((n, c, ho, wo));
        for s in 0..n {
            for oy in 0..ho {
                for ox in 0..wo {
                    let row = y.row((s * ho + oy) * wo + ox);
                    for (ch, v) in row.iter().enumerate() {
                        out[[s, ch, oy, ox]] = *v;
                    }
                }
            }
        }
        out
    }

    /// Batched forward; also returns the unfolded patches needed by [`backward`](Self::backward).
    pub fn forward_batch(&self, x: ArrayView4<f64>) -> Result<(Array4<f64>, Array2<f64>), SymmetrizerError> {
        let (n, _, h, w) = x.dim();
        let cols = self.im2col(x)?;
        let y = self.linear.forward_batch(cols.view());
        let out = self.fold_rows(&y, n, self.output_size(h)?, self.output_size(w)?);
        Ok((out, cols))
    }

    /// Single feature map forward using the fixed-order kernel of
    /// [`EquivariantLinear::forward`].
    pub fn forward(&self, x: &Array3<f64>) -> Result<Array3<f64>, SymmetrizerError> {
        let (c, h, w) = x.dim();
        let x4 = x.view().into_shape_with_order((1, c, h, w)).expect("contiguous reshape");
        let cols = self.im2col(x4)?;
        let (ho, wo) = (self.output_size(h)?, self.output_size(w)?);
        let mut y = Array2::zeros((ho * wo, self.out_channels_total()));
        for (r, row) in cols.outer_iter().enumerate() {
            let v = self.linear.forward(row.as_slice().expect("rows are contiguous"));
            for (j, val) in v.into_iter().enumerate() {
                y[[r, j]] = val;
            }
        }
        let out = self.fold_rows(&y, 1, ho, wo);
        Ok(out.into_shape_with_order((self.out_channels_total(), ho, wo)).expect("single sample"))
    }

    /// Given the patches from the forward pass and `dy` (`N × C_out × H' × W'`),
    /// accumulates coefficient gradients and returns the gradient on the patches.
    pub fn backward(&self, cols: &Array2<f64>, dy: ArrayView4<f64>, grad: &mut [f64]) -> Array2<f64> {
        let (n, c, ho, wo) = dy.dim();
        let mut rows = Array2::zeros((n * ho * wo, c));
        for s in 0..n {
            for oy in 0..ho {
                for ox in 0..wo {
                    let r = (s * ho + oy) * wo + ox;
                    for ch in 0..c {
                        rows[[r, ch]] = dy[[s, ch, oy, ox]];
                    }
                }
            }
        }
        self.linear.backward_batch(cols.view(), rows.view(), grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::rot90;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_map(c: usize, h: usize, seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((c, h, h), |_| rng.random_range(-1.0..1.0))
    }

    /// Rotates spatially and cycles group channels by the regular representation.
    fn transform_regular(x: &Array3<f64>, g: usize, channels: usize) -> Array3<f64> {
        let rotated = rot90(x, g).unwrap();
        let mut out = rotated.clone();
        for b in 0..4 {
            let dst = (b + g) % 4;
            for c in 0..channels {
                out.index_axis_mut(ndarray::Axis(0), dst * channels + c)
                    .assign(&rotated.index_axis(ndarray::Axis(0), b * channels + c));
            }
        }
        out
    }

    #[test]
    fn lifting_layer_is_equivariant() {
        let g = Arc::new(FiniteGroup::c4());
        let mut cache = BasisCache::new(1);
        let mut conv = EquivariantConv::new(g, true, 2, 3, 3, 2, 0, &mut cache).unwrap();
        conv.init(&mut ChaCha8Rng::seed_from_u64(2), 1.0);
        let x = random_map(2, 9, 3);
        let y = conv.forward(&x).unwrap();
        for k in 0..4 {
            let lhs = conv.forward(&rot90(&x, k).unwrap()).unwrap();
            let rhs = transform_regular(&y, k, 3);
            let diff = (&lhs - &rhs).mapv(f64::abs).fold(0.0, |a: f64, &b| a.max(b));
            assert!(diff < 1e-10, "g{k}: {diff}");
        }
    }

    #[test]
    fn regular_layer_is_equivariant_and_batched_agrees() {
        let g = Arc::new(FiniteGroup::c4());
        let mut cache = BasisCache::new(1);
        let mut conv = EquivariantConv::new(g, false, 2, 2, 3, 1, 1, &mut cache).unwrap();
        conv.init(&mut ChaCha8Rng::seed_from_u64(4), 1.0);
        let x = random_map(8, 5, 5);
        let y = conv.forward(&x).unwrap();
        for k in 0..4 {
            let lhs = conv.forward(&transform_regular(&x, k, 2)).unwrap();
            let rhs = transform_regular(&y, k, 2);
            let diff = (&lhs - &rhs).mapv(f64::abs).fold(0.0, |a: f64, &b| a.max(b));
            assert!(diff < 1e-10);
        }
        let x4 = x.clone().into_shape_with_order((1, 8, 5, 5)).unwrap();
        let (yb, _) = conv.forward_batch(x4.view()).unwrap();
        let diff = (&yb.index_axis(ndarray::Axis(0), 0) - &y).mapv(f64::abs).fold(0.0, |a: f64, &b| a.max(b));
        assert!(diff < 1e-12);
    }

    #[test]
    fn zero_input_gives_bias_broadcast() {
        let g = Arc::new(FiniteGroup::c4());
        let mut cache = BasisCache::new(1);
        let mut conv = EquivariantConv::new(g, true, 1, 2, 3, 1, 0, &mut cache).unwrap();
        let mut c = vec![0.0; conv.num_coefficients()];
        let nw = conv.linear().num_weight_coefficients();
        c[nw] = 1.5;
        c[nw + 1] = -0.5;
        conv.linear_mut().set_coefficients(&c).unwrap();
        let y = conv.forward(&Array3::zeros((1, 4, 4))).unwrap();
        for ch in 0..8 {
            let expected = conv.linear().bias()[ch];
            assert!(y.index_axis(ndarray::Axis(0), ch).iter().all(|&v| v == expected));
        }
    }

    #[test]
    fn too_small_input_is_an_error() {
        let g = Arc::new(FiniteGroup::c4());
        let mut cache = BasisCache::new(1);
        let conv = EquivariantConv::new(g, true, 1, 1, 5, 1, 0, &mut cache).unwrap();
        assert!(matches!(
            conv.forward(&Array3::zeros((1, 3, 3))),
            Err(SymmetrizerError::TooSmall { .. })
        ));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let g = Arc::new(FiniteGroup::c4());
        let mut cache = BasisCache::new(1);
        let mut conv = EquivariantConv::new(g, false, 1, 1, 3, 2, 0, &mut cache).unwrap();
        conv.init(&mut ChaCha8Rng::seed_from_u64(6), 1.0);
        let x = random_map(4, 5, 7).into_shape_with_order((1, 4, 5, 5)).unwrap();
        let loss = |conv: &EquivariantConv, x: &Array4<f64>| -> f64 {
            let (y, _) = conv.forward_batch(x.view()).unwrap();
            y.mapv(|v| v * v).sum() / 2.0
        };
        let (y, cols) = conv.forward_batch(x.view()).unwrap();
        let mut grad = vec![0.0; conv.num_coefficients()];
        let dcols = conv.backward(&cols, y.view(), &mut grad);
        let dx = conv.col2im(dcols.view(), 1, 5, 5);
        let c0 = conv.linear().coefficients().to_vec();
        let eps = 1e-5;
        for k in 0..c0.len() {
            let mut c = c0.clone();
            c[k] += eps;
            conv.linear_mut().set_coefficients(&c).unwrap();
            let lp = loss(&conv, &x);
            c[k] -= 2.0 * eps;
            conv.linear_mut().set_coefficients(&c).unwrap();
            let lm = loss(&conv, &x);
            let fd = (lp - lm) / (2.0 * eps);
            assert!((fd - grad[k]).abs() <= 1e-6 * (1.0 + fd.abs()));
        }
        conv.linear_mut().set_coefficients(&c0).unwrap();
        let mut xp = x.clone();
        xp[[0, 1, 2, 3]] += eps;
        let mut xm = x.clone();
        xm[[0, 1, 2, 3]] -= eps;
        let fd = (loss(&conv, &xp) - loss(&conv, &xm)) / (2.0 * eps);
        assert!((fd - dx[[0, 1, 2, 3]]).abs() <= 1e-6 * (1.0 + fd.abs()));
    }
}
