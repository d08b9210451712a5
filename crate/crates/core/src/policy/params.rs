use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape record of a policy: vocabulary size, hidden width and number of
/// bidirectional encoder layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub vocab: usize,
    pub hidden: usize,
    pub depth: usize,
}

impl Dims {
    pub fn new(vocab: usize, hidden: usize, depth: usize) -> Result<Self> {
        if vocab < 2 {
            return Err(Error::Dim(format!("vocabulary size {vocab} < 2")));
        }
        if hidden < 2 {
            return Err(Error::Dim(format!("hidden width {hidden} < 2")));
        }
        Ok(Self {
            vocab,
            hidden,
            depth,
        })
    }
}

/// One bidirectional recurrent layer. The forward and backward recurrences
/// each produce `d` features per position; `out_proj` maps the concatenation
/// back to width `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub fwd_input: Array2<f64>,
    pub fwd_recurrent: Array2<f64>,
    pub fwd_bias: Array1<f64>,
    pub bwd_input: Array2<f64>,
    pub bwd_recurrent: Array2<f64>,
    pub bwd_bias: Array1<f64>,
    pub out_proj: Array2<f64>,
    pub out_bias: Array1<f64>,
}

impl EncoderLayer {
    fn zeros(d: usize) -> Self {
        Self {
            fwd_input: Array2::zeros((d, d)),
            fwd_recurrent: Array2::zeros((d, d)),
            fwd_bias: Array1::zeros(d),
            bwd_input: Array2::zeros((d, d)),
            bwd_recurrent: Array2::zeros((d, d)),
            bwd_bias: Array1::zeros(d),
            out_proj: Array2::zeros((d, 2 * d)),
            out_bias: Array1::zeros(d),
        }
    }
}

/// All trainable tensors of the keep/drop policy.
///
/// Fixed tensor order (used by checkpoints and every flat traversal):
/// `embedding`, then for each layer `fwd_input, fwd_recurrent, fwd_bias,
/// bwd_input, bwd_recurrent, bwd_bias, out_proj, out_bias`, then
/// `classifier_w`, `classifier_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParameters {
    pub(crate) dims: Dims,
    pub embedding: Array2<f64>,
    pub layers: Vec<EncoderLayer>,
    /// Row 0 scores "drop", row 1 scores "keep".
    pub classifier_w: Array2<f64>,
    pub classifier_b: Array1<f64>,
}

/// Borrowed view of one tensor in the fixed order.
#[derive(Debug)]
pub struct TensorView<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

impl PolicyParameters {
    pub fn zeros(dims: Dims) -> Self {
        let d = dims.hidden;
        Self {
            dims,
            embedding: Array2::zeros((dims.vocab, d)),
            layers: (0..dims.depth).map(|_| EncoderLayer::zeros(d)).collect(),
            classifier_w: Array2::zeros((2, d)),
            classifier_b: Array1::zeros(2),
        }
    }

    /// Glorot-uniform matrices, zero biases.
    pub fn init(seed: u64, dims: Dims) -> Result<Self> {
        let dims = Dims::new(dims.vocab, dims.hidden, dims.depth)?;
        let mut params = Self::zeros(dims);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |m: &mut Array2<f64>| {
            let (rows, cols) = m.dim();
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            m.mapv_inplace(|_| rng.random_range(-bound..=bound));
        };
        fill(&mut params.embedding);
        for layer in &mut params.layers {
            fill(&mut layer.fwd_input);
            fill(&mut layer.fwd_recurrent);
            fill(&mut layer.bwd_input);
            fill(&mut layer.bwd_recurrent);
            fill(&mut layer.out_proj);
        }
        fill(&mut params.classifier_w);
        Ok(params)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn tensors(&self) -> Vec<TensorView<'_>> {
        fn m<'a>(name: String, a: &'a Array2<f64>) -> TensorView<'a> {
            TensorView {
                name,
                shape: a.shape().to_vec(),
                data: a.as_slice().expect("standard layout"),
            }
        }
        fn v<'a>(name: String, a: &'a Array1<f64>) -> TensorView<'a> {
            TensorView {
                name,
                shape: a.shape().to_vec(),
                data: a.as_slice().expect("standard layout"),
            }
        }
        let mut out = vec![m("embedding".into(), &self.embedding)];
        for (k, l) in self.layers.iter().enumerate() {
            out.push(m(format!("layer{k}.fwd_input"), &l.fwd_input));
            out.push(m(format!("layer{k}.fwd_recurrent"), &l.fwd_recurrent));
            out.push(v(format!("layer{k}.fwd_bias"), &l.fwd_bias));
            out.push(m(format!("layer{k}.bwd_input"), &l.bwd_input));
            out.push(m(format!("layer{k}.bwd_recurrent"), &l.bwd_recurrent));
            out.push(v(format!("layer{k}.bwd_bias"), &l.bwd_bias));
            out.push(m(format!("layer{k}.out_proj"), &l.out_proj));
            out.push(v(format!("layer{k}.out_bias"), &l.out_bias));
        }
        out.push(m("classifier_w".into(), &self.classifier_w));
        out.push(v("classifier_b".into(), &self.classifier_b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![self.embedding.as_slice_mut().expect("standard layout")];
        for l in &mut self.layers {
            out.push(l.fwd_input.as_slice_mut().expect("standard layout"));
            out.push(l.fwd_recurrent.as_slice_mut().expect("standard layout"));
            out.push(l.fwd_bias.as_slice_mut().expect("standard layout"));
            out.push(l.bwd_input.as_slice_mut().expect("standard layout"));
            out.push(l.bwd_recurrent.as_slice_mut().expect("standard layout"));
            out.push(l.bwd_bias.as_slice_mut().expect("standard layout"));
            out.push(l.out_proj.as_slice_mut().expect("standard layout"));
            out.push(l.out_bias.as_slice_mut().expect("standard layout"));
        }
        out.push(self.classifier_w.as_slice_mut().expect("standard layout"));
        out.push(self.classifier_b.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    /// Name of the first tensor holding a non-finite entry.
    pub fn first_non_finite(&self) -> Option<String> {
        self.tensors()
            .into_iter()
            .find(|t| t.data.iter().any(|x| !x.is_finite()))
            .map(|t| t.name)
    }

    pub(crate) fn check_congruent(&self, other: &PolicyParameters) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::Dim(format!(
                "shape mismatch: {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }

    /// Rebuild from flat tensors in the fixed order.
    pub(crate) fn from_flat(dims: Dims, flat: Vec<Vec<f64>>) -> Result<Self> {
        let mut params = Self::zeros(dims);
        {
            let slots = params.tensors_mut();
            if slots.len() != flat.len() {
                return Err(Error::Dim(format!(
                    "expected {} tensors, found {}",
                    slots.len(),
                    flat.len()
                )));
            }
            for (k, (slot, data)) in slots.into_iter().zip(flat).enumerate() {
                if slot.len() != data.len() {
                    return Err(Error::Dim(format!(
                        "tensor {k}: expected {} values, found {}",
                        slot.len(),
                        data.len()
                    )));
                }
                slot.copy_from_slice(&data);
            }
        }
        Ok(params)
    }
}

/// Gradient of a scalar with respect to every policy tensor; same shapes and
/// order as [`PolicyParameters`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle(pub(crate) PolicyParameters);

impl GradientBundle {
    pub fn zeros(dims: Dims) -> Self {
        Self(PolicyParameters::zeros(dims))
    }

    pub fn dims(&self) -> Dims {
        self.0.dims
    }

    pub fn as_params(&self) -> &PolicyParameters {
        &self.0
    }

    pub fn tensors(&self) -> Vec<TensorView<'_>> {
        self.0.tensors()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.0.tensors_mut()
    }

    pub fn add_assign(&mut self, other: &GradientBundle) -> Result<()> {
        self.0.check_congruent(&other.0)?;
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            dst.iter_mut().zip(src.data).for_each(|(a, b)| *a += b);
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors()
            .iter()
            .flat_map(|t| t.data.iter().copied())
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.data.iter())
            .fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn first_non_finite(&self) -> Option<String> {
        self.0.first_non_finite()
    }
}

/// θ ← θ − lr·g.
pub fn apply_update(
    params: &PolicyParameters,
    grads: &GradientBundle,
    lr: f64,
) -> Result<PolicyParameters> {
    params.check_congruent(&grads.0)?;
    if lr.is_nan() || lr <= 0.0 || !lr.is_finite() {
        return Err(Error::Config(format!("learning rate {lr} must be positive")));
    }
    let mut next = params.clone();
    for (dst, g) in next.tensors_mut().into_iter().zip(grads.tensors()) {
        dst.iter_mut().zip(g.data).for_each(|(w, d)| *w -= lr * d);
    }
    Ok(next)
}
