//! The trainable keep/drop policy: an embedding plus bidirectional recurrent
//! encoder with a two-class head, Bernoulli action sampling, inference-time
//! selection and the REINFORCE loss with its exact gradient.

mod encoder;
mod params;

pub use encoder::ForwardPass;
pub use params::{apply_update, Dims, EncoderLayer, GradientBundle, PolicyParameters, TensorView};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::TokenSequence;
use crate::error::{Error, Result};
use crate::exec::Exec;

/// Per-token probability of keeping the token. Entries lie in (0, 1) when
/// produced by [`forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct KeepProbabilities(Vec<f64>);

impl KeepProbabilities {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if let Some(bad) = p.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::Config(format!("probability {bad} outside [0, 1]")));
        }
        Ok(Self(p))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.0.iter().sum::<f64>() / self.0.len().max(1) as f64
    }
}

/// Binary keep (1) / drop (0) vector.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ActionMask(Vec<u8>);

impl ActionMask {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::Config("mask entries must be 0 or 1".into()));
        }
        Ok(Self(bits))
    }

    pub fn all(n: usize) -> Self {
        Self(vec![1; n])
    }

    /// The `index`-th of the 2^n masks, bit i of `index` giving a_i.
    pub fn from_index(index: u64, n: usize) -> Self {
        Self((0..n).map(|i| ((index >> i) & 1) as u8).collect())
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn kept(&self) -> usize {
        self.0.iter().map(|&b| b as usize).sum()
    }

    pub fn kept_positions(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| (b == 1).then_some(i))
            .collect()
    }
}

pub fn forward(params: &PolicyParameters, seq: &TokenSequence) -> Result<KeepProbabilities> {
    let pass = ForwardPass::run(params, seq.ids())?;
    Ok(KeepProbabilities(pass.probs().to_vec()))
}

fn argmax_first(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0
}

/// Independent Bernoulli draw per token. An all-drop draw is replaced by
/// keeping only the most probable token.
pub fn sample_actions<R: Rng + ?Sized>(p: &KeepProbabilities, rng: &mut R) -> ActionMask {
    let mut bits: Vec<u8> = p
        .as_slice()
        .iter()
        .map(|&pi| u8::from(rng.random::<f64>() < pi))
        .collect();
    if !bits.is_empty() && bits.iter().all(|&b| b == 0) {
        bits[argmax_first(p.as_slice())] = 1;
    }
    ActionMask(bits)
}

/// `max(1, round(c·n))`, rounding half away from zero, capped at `n`.
pub fn topk_count(c: f64, n: usize) -> usize {
    ((c * n as f64).round() as usize).clamp(1, n.max(1))
}

/// Keep exactly [`topk_count`] tokens with the highest probability; ties go
/// to the smaller index.
pub fn select_topk(p: &KeepProbabilities, c: f64) -> Result<ActionMask> {
    if !(c > 0.0 && c <= 1.0) {
        return Err(Error::Config(format!("keep rate {c} outside (0, 1]")));
    }
    let probs = p.as_slice();
    let k = topk_count(c, probs.len());
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut bits = vec![0u8; probs.len()];
    for &i in &order[..k.min(probs.len())] {
        bits[i] = 1;
    }
    Ok(ActionMask(bits))
}

/// Keep every token with p ≥ 0.5.
pub fn threshold_select(p: &KeepProbabilities) -> ActionMask {
    ActionMask(p.as_slice().iter().map(|&x| u8::from(x >= 0.5)).collect())
}

/// Σ_i [a_i ln p_i + (1 − a_i) ln(1 − p_i)].
pub fn log_prob(p: &KeepProbabilities, a: &ActionMask) -> f64 {
    assert_eq!(p.len(), a.len(), "mask and probabilities differ in length");
    p.as_slice()
        .iter()
        .zip(a.bits())
        .map(|(&pi, &ai)| if ai == 1 { pi.ln() } else { (1.0 - pi).ln() })
        .sum()
}

fn binary_entropy(p: f64) -> f64 {
    let term = |x: f64| if x > 0.0 { -x * x.ln() } else { 0.0 };
    term(p) + term(1.0 - p)
}

/// Sum of per-token binary entropies, in nats.
pub fn entropy(p: &KeepProbabilities) -> f64 {
    p.as_slice().iter().map(|&x| binary_entropy(x)).sum()
}

/// `L = −r·ln P(a) − λ·H(p)` and its gradient with respect to every tensor.
pub fn loss_and_gradient(
    params: &PolicyParameters,
    seq: &TokenSequence,
    a: &ActionMask,
    reward: f64,
    entropy_weight: f64,
) -> Result<(f64, GradientBundle)> {
    if !reward.is_finite() {
        return Err(Error::Numerical {
            tensor: "reward".into(),
        });
    }
    if entropy_weight < 0.0 {
        return Err(Error::Config("entropy weight must be non-negative".into()));
    }
    if a.len() != seq.len() {
        return Err(Error::Dim(format!(
            "mask length {} vs sequence length {}",
            a.len(),
            seq.len()
        )));
    }
    let pass = ForwardPass::run(params, seq.ids())?;
    let loss = -reward * pass.log_prob(a.bits()) - entropy_weight * pass.entropy();
    if !loss.is_finite() {
        return Err(Error::Numerical {
            tensor: "loss".into(),
        });
    }
    let upstream = pass.reinforce_margin_grads(a.bits(), reward, entropy_weight);
    let grads = pass.backward(params, &upstream)?;
    Ok((loss, grads))
}

/// Exact policy-gradient expectation by enumerating all 2^n masks:
/// returns `J = Σ_a P(a)·r(a)` and `Σ_a P(a)·r(a)·∇θ ln P(a)`.
///
/// Only feasible for short sequences; n is capped at 24.
pub fn exact_expected_gradient<F>(
    params: &PolicyParameters,
    seq: &TokenSequence,
    reward: F,
    exec: Exec,
) -> Result<(f64, GradientBundle)>
where
    F: Fn(&ActionMask) -> f64 + Sync + Send,
{
    let n = seq.len();
    if n > 24 {
        return Err(Error::Dim(format!("cannot enumerate 2^{n} masks")));
    }
    let pass = ForwardPass::run(params, seq.ids())?;
    let probs = pass.probs().to_vec();
    // Per mask: P(a)·r(a) and P(a)·r(a)·(a_i − p_i), the latter being the
    // coefficient of ∇θ s_i in ∇θ ln P(a).
    let terms = exec.map_range(1usize << n, |idx| {
        let mask = ActionMask::from_index(idx as u64, n);
        let weight = pass.log_prob(mask.bits()).exp() * reward(&mask);
        let coeffs: Vec<f64> = mask
            .bits()
            .iter()
            .zip(&probs)
            .map(|(&a, &p)| weight * (f64::from(a) - p))
            .collect();
        (weight, coeffs)
    });
    let mut objective = 0.0;
    let mut coeffs = vec![0.0; n];
    for (w, c) in terms {
        objective += w;
        coeffs.iter_mut().zip(c).for_each(|(acc, x)| *acc += x);
    }
    let grads = pass.backward(params, &coeffs)?;
    Ok((objective, grads))
}

/// A token sequence with per-token 0/1 targets for the supervised stage.
#[derive(Debug, Clone)]
pub struct LabeledSequence {
    pub seq: TokenSequence,
    pub labels: Vec<u8>,
}

#[derive(Debug, Clone, Copy)]
pub struct BootstrapConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

/// Mean per-token binary cross-entropy of p against the labels, with its
/// gradient, for one sequence.
pub fn cross_entropy_and_gradient(
    params: &PolicyParameters,
    item: &LabeledSequence,
) -> Result<(f64, GradientBundle)> {
    if item.labels.len() != item.seq.len() {
        return Err(Error::Schema {
            line: 0,
            message: format!(
                "{} labels for {} tokens",
                item.labels.len(),
                item.seq.len()
            ),
        });
    }
    let pass = ForwardPass::run(params, item.seq.ids())?;
    let n = item.seq.len() as f64;
    let loss = -pass.log_prob(&item.labels) / n;
    let upstream: Vec<f64> = pass
        .probs()
        .iter()
        .zip(&item.labels)
        .map(|(&p, &y)| (p - f64::from(y)) / n)
        .collect();
    Ok((loss, pass.backward(params, &upstream)?))
}

/// Supervised first stage: SGD on mean binary cross-entropy, one sequence
/// per step, seeded shuffle each epoch.
pub fn supervised_bootstrap(
    params: &PolicyParameters,
    data: &[LabeledSequence],
    config: BootstrapConfig,
) -> Result<PolicyParameters> {
    if let Some(bad) = data.iter().find(|d| d.labels.len() != d.seq.len()) {
        return Err(Error::Schema {
            line: 0,
            message: format!("{} labels for {} tokens", bad.labels.len(), bad.seq.len()),
        });
    }
    let mut current = params.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let (_, grads) = cross_entropy_and_gradient(&current, &data[i])?;
            current = apply_update(&current, &grads, config.lr)?;
        }
    }
    Ok(current)
}
