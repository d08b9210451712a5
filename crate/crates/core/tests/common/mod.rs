//! Shared oracles for the integration suites.

#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use taco_core::corpus::TokenSequence;
use taco_core::oracle::{Oracle, OracleRequest, OracleResponse};
use taco_core::policy::{Dims, PolicyParameters};
use taco_core::Exec;

pub fn flatten(params: &PolicyParameters) -> Vec<f64> {
    params
        .tensors()
        .iter()
        .flat_map(|t| t.data.iter().copied())
        .collect()
}

/// Copy of `params` with flat entry `index` shifted by `delta`.
pub fn perturbed(params: &PolicyParameters, index: usize, delta: f64) -> PolicyParameters {
    let mut p = params.clone();
    let mut offset = index;
    for t in p.tensors_mut() {
        if offset < t.len() {
            t[offset] += delta;
            return p;
        }
        offset -= t.len();
    }
    panic!("index {index} out of range");
}

/// Central differences of `f` over every parameter.
pub fn finite_difference<F>(params: &PolicyParameters, h: f64, f: F) -> Vec<f64>
where
    F: Fn(&PolicyParameters) -> f64 + Sync + Send,
{
    let n = params.num_parameters();
    Exec::Parallel.map_range(n, |i| {
        (f(&perturbed(params, i, h)) - f(&perturbed(params, i, -h))) / (2.0 * h)
    })
}

/// `|a − b| / max(|a|, |b|)`, or 0 when `|a − b|` is under the absolute floor.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    let diff = (a - b).abs();
    if diff <= floor {
        0.0
    } else {
        diff / a.abs().max(b.abs())
    }
}

/// Glorot init plus small noise on every entry, so biases are exercised too.
pub fn random_params(rng: &mut ChaCha8Rng, dims: Dims) -> PolicyParameters {
    let mut p = PolicyParameters::init(rng.random(), dims).unwrap();
    for t in p.tensors_mut() {
        for x in t.iter_mut() {
            *x += rng.random_range(-0.2..0.2);
        }
    }
    p
}

pub fn random_seq(rng: &mut ChaCha8Rng, vocab: usize, n: usize) -> TokenSequence {
    TokenSequence::from_ids((0..n).map(|_| rng.random_range(0..vocab)).collect()).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Counts the requests that reach the wrapped oracle.
pub struct Counting<O> {
    pub inner: O,
    pub calls: AtomicUsize,
    pub prompts: Mutex<Vec<String>>,
}

impl<O> Counting<O> {
    pub fn new(inner: O) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
            prompts: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Requests whose prompt is one of `prompts`.
    pub fn calls_with_prompt_in(&self, prompts: &std::collections::HashSet<String>) -> usize {
        self.prompts.lock().unwrap().iter().filter(|p| prompts.contains(*p)).count()
    }
}

impl<O: Oracle> Oracle for Counting<O> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn generate(&self, request: &OracleRequest) -> taco_core::Result<OracleResponse> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.prompts.lock().unwrap().push(request.prompt.clone());
        self.inner.generate(request)
    }
}
