//! Batched forward and backward passes over many agents at once, used for training.
//!
//! Because the message map is linear, the weighted sum over neighbours is
//! taken on the message inputs before the map is applied. This equals the
//! per-edge computation up to floating-point reassociation.

use ndarray::{s, Array1, Array2, Array4, ArrayView1, ArrayView2, ArrayView4, Axis};

use super::{GraphBatch, MpnError, MpnPolicy};

/// Activations saved by [`MpnPolicy::forward_batch`] for the backward pass.
pub struct BatchCache {
    /// Per convolution: unfolded patches and pre-activation output.
    convs: Vec<(Array2<f64>, Array4<f64>)>,
    input_sizes: Vec<(usize, usize)>,
    /// Flat index (within the spatial map) of the maximum per sample and channel.
    argmax: Array2<usize>,
    /// Per round: aggregated message input, update input, update pre-activation.
    rounds: Vec<(Array2<f64>, Array2<f64>, Array2<f64>)>,
    features: Array2<f64>,
}

/// Output of a batched forward pass: one row per agent.
pub struct BatchOutput {
    pub logits: Array2<f64>,
    pub values: Array1<f64>,
    pub cache: BatchCache,
}

fn relu(x: &mut Array2<f64>) {
    x.mapv_inplace(|v| v.max(0.0));
}

impl MpnPolicy {
    /// Runs every agent of every graph in `graph` at once. `obs` holds one
    /// observation per agent, in the same global order as the graph batch.
    pub fn forward_batch(&self, obs: ArrayView4<f64>, graph: &GraphBatch) -> Result<BatchOutput, MpnError> {
        let n = obs.dim().0;
        if n != graph.num_agents {
            return Err(MpnError::AgentCount {
                observations: n,
                graph: graph.num_agents,
            });
        }
        let cfg = self.config();
        let (_, c, h, w) = obs.dim();
        if c != cfg.obs_channels || h != cfg.obs_size || w != cfg.obs_size {
            return Err(MpnError::ObservationShape {
                expected: [cfg.obs_channels, cfg.obs_size, cfg.obs_size],
                got: [c, h, w],
            });
        }
        let mut convs = Vec::new();
        let mut input_sizes = Vec::new();
        let mut x = obs.to_owned();
        for conv in self.convs() {
            input_sizes.push((x.dim().2, x.dim().3));
            let (pre, cols) = conv.forward_batch(x.view())?;
            x = pre.mapv(|v| v.max(0.0));
            convs.push((cols, pre));
        }
        let ch = x.dim().1;
        let mut f = Array2::zeros((n, ch));
        let mut argmax = Array2::zeros((n, ch));
        for s in 0..n {
            for k in 0..ch {
                let map = x.slice(s![s, k, .., ..]);
                let mut best = f64::NEG_INFINITY;
                let mut arg = 0;
                for (p, &v) in map.iter().enumerate() {
                    if v > best {
                        best = v;
                        arg = p;
                    }
                }
                f[[s, k]] = best;
                argmax[[s, k]] = arg;
            }
        }
        let mut rounds = Vec::new();
        for r in 0..self.num_rounds() {
            let df = f.ncols();
            let mut agg = Array2::zeros((n, 2 + df));
            for &(dst, src, wgt, e) in &graph.edges {
                let mut row = agg.row_mut(dst);
                row[0] += wgt * e[0];
                row[1] += wgt * e[1];
                let mut tail = row.slice_mut(s![2..]);
                tail.scaled_add(wgt, &f.row(src));
            }
            let m = self.message_layer(r).forward_batch(agg.view());
            let mut u_in = Array2::zeros((n, df + m.ncols()));
            u_in.slice_mut(s![.., ..df]).assign(&f);
            u_in.slice_mut(s![.., df..]).assign(&m);
            let pre = self.update_layer(r).forward_batch(u_in.view());
            f = pre.clone();
            relu(&mut f);
            rounds.push((agg, u_in, pre));
        }
        let logits = self.policy_head().forward_batch(f.view());
        let values = self.value_head().forward_batch(f.view()).column(0).to_owned();
        Ok(BatchOutput {
            logits,
            values,
            cache: BatchCache {
                convs,
                input_sizes,
                argmax,
                rounds,
                features: f,
            },
        })
    }

    /// Gradient of a loss with respect to all parameters, given the loss
    /// gradients on logits and values of a previous [`forward_batch`](Self::forward_batch).
    pub fn backward_batch(
        &self,
        cache: &BatchCache,
        graph: &GraphBatch,
        dlogits: ArrayView2<f64>,
        dvalues: ArrayView1<f64>,
    ) -> Vec<f64> {
        let index = self.param_index();
        let mut grad = vec![0.0; self.num_params()];
        let n = cache.features.nrows();
        let nconv = self.convs().len();
        let ph = &index[nconv + 2 * self.num_rounds()];
        let vh = &index[nconv + 2 * self.num_rounds() + 1];
        let mut df = self.policy_head().backward_batch(
            cache.features.view(),
            dlogits,
            &mut grad[ph.offset..ph.offset + ph.len],
        );
        let dv = dvalues.to_owned().insert_axis(Axis(1));
        df += &self
            .value_head()
            .backward_batch(cache.features.view(), dv.view(), &mut grad[vh.offset..vh.offset + vh.len]);
        for r in (0..self.num_rounds()).rev() {
            let (agg, u_in, pre) = &cache.rounds[r];
            let mut dpre = df;
            dpre.zip_mut_with(pre, |d, &p| {
                if p <= 0.0 {
                    *d = 0.0;
                }
            });
            let us = &index[nconv + 2 * r + 1];
            let du = self
                .update_layer(r)
                .backward_batch(u_in.view(), dpre.view(), &mut grad[us.offset..us.offset + us.len]);
            let d_f = agg.ncols() - 2;
            let mut df_prev = du.slice(s![.., ..d_f]).to_owned();
            let dm = du.slice(s![.., d_f..]).to_owned();
            let ms = &index[nconv + 2 * r];
            let dagg = self
                .message_layer(r)
                .backward_batch(agg.view(), dm.view(), &mut grad[ms.offset..ms.offset + ms.len]);
            for &(dst, src, wgt, _) in &graph.edges {
                let g = dagg.slice(s![dst, 2..]);
                df_prev.row_mut(src).scaled_add(wgt, &g);
            }
            df = df_prev;
        }
        // encoder: route pooled gradients to the arg max pixels, then back through the convolutions
        let (_, last_pre) = &cache.convs[nconv - 1];
        let (_, ch, hh, ww) = last_pre.dim();
        let mut dy = Array4::zeros((n, ch, hh, ww));
        for s in 0..n {
            for k in 0..ch {
                let p = cache.argmax[[s, k]];
                dy[[s, k, p / ww, p % ww]] = df[[s, k]];
            }
        }
        for i in (0..nconv).rev() {
            let (cols, pre) = &cache.convs[i];
            dy.zip_mut_with(pre, |d, &p| {
                if p <= 0.0 {
                    *d = 0.0;
                }
            });
            let cs = &index[i];
            let conv = &self.convs()[i];
            let dcols = conv.backward(cols, dy.view(), &mut grad[cs.offset..cs.offset + cs.len]);
            if i > 0 {
                let (h, w) = cache.input_sizes[i];
                dy = conv.col2im(dcols.view(), n, h, w);
            }
        }
        grad
    }
}
