//! Forward pass of the bidirectional recurrent encoder and its reverse-mode
//! gradient.
//!
//! Per layer, with input rows `x_i`:
//!
//! ```text
//! f_i = tanh(Wf_x x_i + Wf_h f_{i-1} + b_f)      f_{-1} = 0
//! g_i = tanh(Wb_x x_i + Wb_h g_{i+1} + b_b)      g_n    = 0
//! h_i = P [f_i ; g_i] + b_p
//! ```
//!
//! The classifier head gives logits `z_i = W h_i + b` over {drop, keep} and
//! `p_i = softmax(z_i)[keep] = sigmoid(z_i[1] - z_i[0])`.

use ndarray::{s, Array1, Array2, ArrayView1, Axis};

use super::params::{EncoderLayer, GradientBundle, PolicyParameters};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
struct LayerCache {
    input: Array2<f64>,
    fwd: Array2<f64>,
    bwd: Array2<f64>,
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    ids: Vec<usize>,
    layers: Vec<LayerCache>,
    hidden: Array2<f64>,
    /// keep-minus-drop logit difference per token
    margin: Array1<f64>,
    probs: Array1<f64>,
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_finite(a: &Array2<f64>, what: impl FnOnce() -> String) -> Result<()> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical { tensor: what() })
    }
}

fn layer_forward(layer: &EncoderLayer, x: &Array2<f64>) -> (LayerCache, Array2<f64>) {
    let (n, d) = (x.nrows(), layer.fwd_bias.len());
    let mut fwd = Array2::<f64>::zeros((n, d));
    for i in 0..n {
        let mut pre = layer.fwd_input.dot(&x.row(i)) + &layer.fwd_bias;
        if i > 0 {
            pre += &layer.fwd_recurrent.dot(&fwd.row(i - 1));
        }
        fwd.row_mut(i).assign(&pre.mapv(f64::tanh));
    }
    let mut bwd = Array2::<f64>::zeros((n, d));
    for i in (0..n).rev() {
        let mut pre = layer.bwd_input.dot(&x.row(i)) + &layer.bwd_bias;
        if i + 1 < n {
            pre += &layer.bwd_recurrent.dot(&bwd.row(i + 1));
        }
        bwd.row_mut(i).assign(&pre.mapv(f64::tanh));
    }
    let both = ndarray::concatenate(Axis(1), &[fwd.view(), bwd.view()]).expect("equal rows");
    let out = both.dot(&layer.out_proj.t()) + &layer.out_bias;
    (
        LayerCache {
            input: x.clone(),
            fwd,
            bwd,
        },
        out,
    )
}

impl ForwardPass {
    pub fn run(params: &PolicyParameters, ids: &[usize]) -> Result<Self> {
        let dims = params.dims();
        if ids.is_empty() {
            return Err(Error::EmptyInput);
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= dims.vocab) {
            return Err(Error::Vocab {
                id: bad,
                vocab: dims.vocab,
            });
        }
        let mut x = params.embedding.select(Axis(0), ids);
        let mut layers = Vec::with_capacity(params.layers.len());
        for (k, layer) in params.layers.iter().enumerate() {
            let (cache, out) = layer_forward(layer, &x);
            check_finite(&out, || format!("layer{k} output"))?;
            layers.push(cache);
            x = out;
        }
        let logits = x.dot(&params.classifier_w.t()) + &params.classifier_b;
        check_finite(&logits, || "classifier logits".into())?;
        let margin = &logits.column(1) - &logits.column(0);
        let probs = margin.mapv(sigmoid);
        Ok(Self {
            ids: ids.to_vec(),
            layers,
            hidden: x,
            margin,
            probs,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn probs(&self) -> ArrayView1<'_, f64> {
        self.probs.view()
    }

    pub fn margins(&self) -> ArrayView1<'_, f64> {
        self.margin.view()
    }

    /// Σ_i ln P(a_i), computed from logits so saturated probabilities stay finite.
    pub fn log_prob(&self, mask: &[u8]) -> f64 {
        self.margin
            .iter()
            .zip(mask)
            .map(|(&s, &a)| if a == 1 { -softplus(-s) } else { -softplus(s) })
            .sum()
    }

    /// Σ_i binary entropy of p_i (nats), from logits.
    pub fn entropy(&self) -> f64 {
        self.margin
            .iter()
            .zip(&self.probs)
            .map(|(&s, &p)| p * softplus(-s) + (1.0 - p) * softplus(s))
            .sum()
    }

    /// Upstream gradient of `−r·ln P(a) − λ·H(p)` with respect to each margin.
    pub fn reinforce_margin_grads(&self, mask: &[u8], reward: f64, entropy_weight: f64) -> Vec<f64> {
        self.margin
            .iter()
            .zip(&self.probs)
            .zip(mask)
            .map(|((&s, &p), &a)| {
                -reward * (f64::from(a) - p) + entropy_weight * s * p * (1.0 - p)
            })
            .collect()
    }

    /// Back-propagate per-token margin gradients `dL/ds_i` to every tensor.
    pub fn backward(&self, params: &PolicyParameters, margin_grads: &[f64]) -> Result<GradientBundle> {
        assert_eq!(margin_grads.len(), self.len(), "one gradient per token");
        let mut grads = GradientBundle::zeros(params.dims());
        let g = &mut grads.0;
        let n = self.len();

        // classifier: z1 gets +ds, z0 gets -ds
        let ds = Array1::from(margin_grads.to_vec());
        let w_diff = &params.classifier_w.row(1) - &params.classifier_w.row(0);
        let hidden_grad_row = ds.dot(&self.hidden);
        g.classifier_w.row_mut(1).assign(&hidden_grad_row);
        g.classifier_w.row_mut(0).assign(&(-&hidden_grad_row));
        let total = ds.sum();
        g.classifier_b[1] = total;
        g.classifier_b[0] = -total;
        let mut dx = Array2::<f64>::zeros((n, params.dims().hidden));
        for i in 0..n {
            dx.row_mut(i).assign(&(&w_diff * ds[i]));
        }

        for (k, (layer, cache)) in params.layers.iter().zip(&self.layers).enumerate().rev() {
            let lg = &mut g.layers[k];
            let d = layer.fwd_bias.len();
            // h = [f g] P^T + b_p
            let both = ndarray::concatenate(Axis(1), &[cache.fwd.view(), cache.bwd.view()])
                .expect("equal rows");
            lg.out_proj += &dx.t().dot(&both);
            lg.out_bias += &dx.sum_axis(Axis(0));
            let dboth = dx.dot(&layer.out_proj);
            let dfwd = dboth.slice(s![.., ..d]);
            let dbwd = dboth.slice(s![.., d..]);
            let mut dinput = Array2::<f64>::zeros(cache.input.dim());

            let mut carry = Array1::<f64>::zeros(d);
            for i in (0..n).rev() {
                let df = &dfwd.row(i) + &carry;
                let f = cache.fwd.row(i);
                let du = &df * &f.mapv(|v| 1.0 - v * v);
                add_outer(&mut lg.fwd_input, &du, &cache.input.row(i));
                if i > 0 {
                    add_outer(&mut lg.fwd_recurrent, &du, &cache.fwd.row(i - 1));
                }
                lg.fwd_bias += &du;
                dinput.row_mut(i).scaled_add(1.0, &layer.fwd_input.t().dot(&du));
                carry = layer.fwd_recurrent.t().dot(&du);
            }

            let mut carry = Array1::<f64>::zeros(d);
            for i in 0..n {
                let dgi = &dbwd.row(i) + &carry;
                let gi = cache.bwd.row(i);
                let dv = &dgi * &gi.mapv(|v| 1.0 - v * v);
                add_outer(&mut lg.bwd_input, &dv, &cache.input.row(i));
                if i + 1 < n {
                    add_outer(&mut lg.bwd_recurrent, &dv, &cache.bwd.row(i + 1));
                }
                lg.bwd_bias += &dv;
                dinput.row_mut(i).scaled_add(1.0, &layer.bwd_input.t().dot(&dv));
                carry = layer.bwd_recurrent.t().dot(&dv);
            }
            dx = dinput;
        }

        for (i, &id) in self.ids.iter().enumerate() {
            let mut row = g.embedding.row_mut(id);
            row += &dx.row(i);
        }

        match grads.first_non_finite() {
            Some(tensor) => Err(Error::Numerical {
                tensor: format!("gradient of {tensor}"),
            }),
            None => Ok(grads),
        }
    }
}

fn add_outer(dst: &mut Array2<f64>, col: &Array1<f64>, row: &ArrayView1<'_, f64>) {
    for (r, &c) in col.iter().enumerate() {
        if c != 0.0 {
            dst.row_mut(r).scaled_add(c, row);
        }
    }
}
