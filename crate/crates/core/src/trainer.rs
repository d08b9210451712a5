//! The on-policy fine-tuning loop: sample a mask, compress, query the oracle
//! for original and compressed outputs, shape the reward, and take one
//! REINFORCE step.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::save_checkpoint;
use crate::compressor::compress;
use crate::corpus::{chunk, detokenize, tokenize, Sample, Task, TokenSequence, Vocabulary};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::oracle::{Oracle, OracleRequest};
use crate::policy::{
    apply_update, entropy, forward, loss_and_gradient, sample_actions, ActionMask, GradientBundle,
    PolicyParameters,
};
use crate::rewards::{
    bleu, combine_qa_reward, relevance_reward, rouge_l, rouge_n, shaped_reward, token_f1,
    CorpusStats, RewardConfig, RewardMetric, ToleranceRule,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Constant,
    /// Single cosine annealing from the base rate to 0 over all steps.
    #[default]
    Cosine,
}

impl std::str::FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Self::Constant),
            "cosine" => Ok(Self::Cosine),
            other => Err(Error::Config(format!("unknown schedule {other:?}"))),
        }
    }
}

impl Schedule {
    /// Learning rate at step `t` of `total`.
    pub fn lr(self, base: f64, t: u64, total: u64) -> f64 {
        match self {
            Schedule::Constant => base,
            Schedule::Cosine => {
                let frac = if total == 0 { 0.0 } else { t as f64 / total as f64 };
                base * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub schedule: Schedule,
    pub reward: RewardConfig,
    /// Masks sampled per prompt; their gradients are averaged.
    pub samples_per_prompt: usize,
    pub seed: u64,
    /// Write a checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: u64,
    pub max_seq_len: usize,
    /// Output budget passed to the oracle.
    pub max_output_tokens: usize,
    /// Constant subtracted from the reward in the gradient (0: plain REINFORCE).
    pub baseline: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1,
            lr: 1e-6,
            schedule: Schedule::Cosine,
            reward: RewardConfig::default(),
            samples_per_prompt: 1,
            seed: 0,
            checkpoint_every: 0,
            max_seq_len: crate::corpus::DEFAULT_MAX_LEN,
            max_output_tokens: 64,
            baseline: 0.0,
        }
    }
}

/// Keys accepted by [`TrainConfig::set`].
pub const TRAIN_CONFIG_KEYS: &[&str] = &[
    "epochs",
    "lr",
    "schedule",
    "keep_rate",
    "tolerance",
    "penalty",
    "entropy_weight",
    "relevance_weight",
    "metric",
    "tolerance_rule",
    "samples_per_prompt",
    "seed",
    "checkpoint_every",
    "max_seq_len",
    "max_output_tokens",
    "baseline",
];

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be > 0", self.lr)));
        }
        if self.samples_per_prompt < 1 {
            return Err(Error::Config("samples_per_prompt must be at least 1".into()));
        }
        if self.max_seq_len < 1 || self.max_output_tokens < 1 {
            return Err(Error::Config("max_seq_len and max_output_tokens must be positive".into()));
        }
        if !self.baseline.is_finite() {
            return Err(Error::Config("baseline must be finite".into()));
        }
        self.reward.validate()
    }

    /// Set one field from its config-file key. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "epochs" => self.epochs = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "schedule" => self.schedule = value.parse()?,
            "keep_rate" => self.reward.keep_rate = parse_value(key, value)?,
            "tolerance" => self.reward.tolerance = parse_value(key, value)?,
            "penalty" => self.reward.penalty = parse_value(key, value)?,
            "entropy_weight" => self.reward.entropy_weight = parse_value(key, value)?,
            "relevance_weight" => self.reward.relevance_weight = parse_value(key, value)?,
            "metric" => self.reward.metric = value.parse()?,
            "tolerance_rule" => {
                self.reward.tolerance_rule = match value {
                    "closed" => ToleranceRule::Closed,
                    "half_open" => ToleranceRule::HalfOpen,
                    other => return Err(Error::Config(format!("unknown tolerance rule {other:?}"))),
                }
            }
            "samples_per_prompt" => self.samples_per_prompt = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse_value(key, value)?,
            "max_seq_len" => self.max_seq_len = parse_value(key, value)?,
            "max_output_tokens" => self.max_output_tokens = parse_value(key, value)?,
            "baseline" => self.baseline = parse_value(key, value)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }
}

/// Parse flat `key = value` text. Blank lines and `#` comments are skipped;
/// a repeated key is an error.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", idx + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", idx + 1)));
        }
        if out.iter().any(|(seen, _)| seen == k) {
            return Err(Error::Config(format!("line {}: duplicate key {k:?}", idx + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

/// One record per optimization step. Metric fields are absent for skipped
/// steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub epoch: usize,
    pub step: u64,
    pub sample_id: String,
    pub chunk: usize,
    pub delta: Option<f64>,
    pub reward: Option<f64>,
    pub in_tolerance: Option<bool>,
    pub loss: Option<f64>,
    pub entropy: Option<f64>,
    pub kept_fraction: Option<f64>,
    pub lr: f64,
    pub skipped: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// One chunk of one sample: the unit of a training step.
#[derive(Debug, Clone)]
pub struct TrainUnit {
    pub sample_id: String,
    pub chunk: usize,
    pub task: Task,
    pub question: Option<String>,
    pub seq: TokenSequence,
}

impl TrainUnit {
    fn request(&self, prompt: String, max_output_tokens: usize) -> Result<OracleRequest> {
        OracleRequest::new(prompt, self.question.clone(), self.task, max_output_tokens)
    }

    pub fn original_request(&self, max_output_tokens: usize) -> Result<OracleRequest> {
        self.request(detokenize(&self.seq), max_output_tokens)
    }
}

/// Split every sample into chunk-sized training units, in dataset order.
pub fn build_units(dataset: &[Sample], vocab: &Vocabulary, max_seq_len: usize) -> Result<Vec<TrainUnit>> {
    let mut units = Vec::new();
    for s in dataset {
        let seq = tokenize(&s.context, vocab)?;
        for (k, piece) in chunk(&seq, max_seq_len).into_iter().enumerate() {
            units.push(TrainUnit {
                sample_id: s.id.clone(),
                chunk: k,
                task: s.task,
                question: s.question.clone(),
                seq: piece,
            });
        }
    }
    Ok(units)
}

/// Turns (y_comp, y_orig, mask) into the unshaped metric value.
#[derive(Debug, Clone)]
pub struct Scorer {
    metric: RewardMetric,
    relevance_weight: f64,
    stats: Option<Arc<CorpusStats>>,
}

impl Scorer {
    /// `stats` is required by the relevance metrics.
    pub fn new(reward: &RewardConfig, stats: Option<Arc<CorpusStats>>) -> Result<Self> {
        let needs_stats = matches!(
            reward.metric,
            RewardMetric::Relevance | RewardMetric::F1PlusRelevance
        );
        if needs_stats && stats.is_none() {
            return Err(Error::Config("relevance reward needs corpus statistics".into()));
        }
        Ok(Self {
            metric: reward.metric,
            relevance_weight: reward.relevance_weight,
            stats,
        })
    }

    /// Whether the metric reads oracle outputs at all.
    pub fn uses_oracle(&self) -> bool {
        self.metric != RewardMetric::Relevance
    }

    fn relevance(&self, unit: &TrainUnit, mask: &ActionMask) -> Result<f64> {
        let question = unit
            .question
            .as_deref()
            .ok_or_else(|| Error::Config("relevance reward on a sample without a question".into()))?;
        let stats = self.stats.as_deref().expect("checked in Scorer::new");
        Ok(relevance_reward(&unit.seq, question, mask, stats))
    }

    pub fn score(&self, unit: &TrainUnit, mask: &ActionMask, y_comp: &str, y_orig: &str) -> Result<f64> {
        Ok(match self.metric {
            RewardMetric::Bleu => bleu(y_comp, y_orig),
            RewardMetric::Rouge1 => rouge_n(y_comp, y_orig, 1),
            RewardMetric::RougeL => rouge_l(y_comp, y_orig),
            RewardMetric::F1 => token_f1(y_comp, y_orig),
            RewardMetric::F1PlusRelevance => combine_qa_reward(
                token_f1(y_comp, y_orig),
                self.relevance(unit, mask)?,
                self.relevance_weight,
            ),
            RewardMetric::Relevance => self.relevance(unit, mask)?,
        })
    }
}

/// Per-step RNG: independent of how many steps ran before in this process,
/// so resumed runs replay identically.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step + 1);
    rng
}

fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_e90c);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub params: PolicyParameters,
    pub delta: f64,
    pub reward: f64,
    pub in_tolerance: bool,
    pub loss: f64,
    pub entropy: f64,
    pub kept_fraction: f64,
}

/// One step of the loop body. `y_orig` is the oracle output on the
/// uncompressed unit. An oracle failure on y_comp is returned as an error
/// for the caller to log and skip.
#[allow(clippy::too_many_arguments)]
pub fn train_step<O: Oracle + ?Sized>(
    params: &PolicyParameters,
    unit: &TrainUnit,
    y_orig: &str,
    oracle: &O,
    scorer: &Scorer,
    config: &TrainConfig,
    lr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<StepOutcome> {
    let p = forward(params, &unit.seq)?;
    let k = config.samples_per_prompt;
    let mut total = GradientBundle::zeros(params.dims());
    let (mut delta, mut reward, mut loss, mut kept, mut in_tol) = (0.0, 0.0, 0.0, 0.0, 0usize);
    for _ in 0..k {
        let mask = sample_actions(&p, rng);
        let (compressed, stats) = compress(&unit.seq, &mask)?;
        let y_comp = if scorer.uses_oracle() {
            let req = unit.request(detokenize(&compressed.seq), config.max_output_tokens)?;
            oracle.generate(&req)?.text
        } else {
            String::new()
        };
        let metric = scorer.score(unit, &mask, &y_comp, y_orig)?;
        let shaped = shaped_reward(metric, stats.original_n, stats.compressed_n, &config.reward);
        let (l, g) = loss_and_gradient(
            params,
            &unit.seq,
            &mask,
            shaped.value - config.baseline,
            config.reward.entropy_weight,
        )?;
        total.add_assign(&g)?;
        delta += shaped.delta;
        reward += shaped.value;
        loss += l;
        kept += stats.rate;
        in_tol += usize::from(shaped.in_tolerance);
    }
    let kf = k as f64;
    total.scale(1.0 / kf);
    let updated = apply_update(params, &total, lr)?;
    if let Some(tensor) = updated.first_non_finite() {
        return Err(Error::Numerical { tensor });
    }
    Ok(StepOutcome {
        params: updated,
        delta: delta / kf,
        reward: reward / kf,
        in_tolerance: in_tol == k,
        loss: loss / kf,
        entropy: entropy(&p),
        kept_fraction: kept / kf,
    })
}

/// Where a run persists its artifacts and where it starts.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub checkpoint_path: Option<PathBuf>,
    /// JSON Lines log; appended to, so a resumed run extends it.
    pub log_path: Option<PathBuf>,
    /// Global step to start from (the step counter of a loaded checkpoint).
    pub start_step: u64,
    /// Stop after this many global steps, leaving the run resumable.
    pub stop_at: Option<u64>,
    pub exec: Exec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub steps: usize,
    pub skipped: usize,
    pub mean_reward: f64,
    pub mean_delta: f64,
    pub mean_kept_fraction: f64,
    /// Oracle requests issued for y_orig during this epoch.
    pub y_orig_requests: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: PolicyParameters,
    pub step: u64,
    pub log: Vec<TrainLogRecord>,
    pub epochs: Vec<EpochSummary>,
}

struct LogWriter(Option<BufWriter<File>>);

impl LogWriter {
    fn open(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self(None));
        };
        let f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self(Some(BufWriter::new(f))))
    }

    fn write(&mut self, record: &TrainLogRecord) -> std::io::Result<()> {
        if let Some(w) = &mut self.0 {
            serde_json::to_writer(&mut *w, record)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        match &mut self.0 {
            Some(w) => w.flush(),
            None => Ok(()),
        }
    }
}

fn summarize(epoch: usize, records: &[TrainLogRecord], y_orig_requests: usize) -> EpochSummary {
    let done: Vec<&TrainLogRecord> = records.iter().filter(|r| !r.skipped).collect();
    let mean = |f: fn(&TrainLogRecord) -> Option<f64>| {
        if done.is_empty() {
            0.0
        } else {
            done.iter().filter_map(|r| f(r)).sum::<f64>() / done.len() as f64
        }
    };
    EpochSummary {
        epoch,
        steps: records.len(),
        skipped: records.len() - done.len(),
        mean_reward: mean(|r| r.reward),
        mean_delta: mean(|r| r.delta),
        mean_kept_fraction: mean(|r| r.kept_fraction),
        y_orig_requests,
    }
}

/// Run E epochs over the chunked dataset, one step per chunk, in a seeded
/// shuffled order per epoch. y_orig for each unit is requested once per run
/// (prefetched concurrently at the first epoch that needs it) and reused.
pub fn run_training<O: Oracle + ?Sized>(
    units: &[TrainUnit],
    init: &PolicyParameters,
    oracle: &O,
    scorer: &Scorer,
    config: &TrainConfig,
    options: &RunOptions,
) -> Result<TrainOutput> {
    config.validate()?;
    if units.is_empty() {
        return Err(Error::EmptyInput);
    }
    let per_epoch = units.len() as u64;
    let total = per_epoch * config.epochs as u64;
    if options.start_step > total {
        return Err(Error::Config(format!(
            "start step {} beyond the {total} steps of this run",
            options.start_step
        )));
    }
    let end = options.stop_at.map_or(total, |s| s.min(total));

    let mut params = init.clone();
    let mut step = options.start_step;
    let mut log = Vec::new();
    let mut epochs = Vec::new();
    let mut writer = LogWriter::open(options.log_path.as_deref())?;
    let mut y_orig: HashMap<usize, String> = HashMap::new();

    let checkpoint = |params: &PolicyParameters, step: u64| -> Result<()> {
        match &options.checkpoint_path {
            Some(path) => save_checkpoint(params, step, path),
            None => Ok(()),
        }
    };

    while step < end {
        let epoch = (step / per_epoch) as usize;
        let order = epoch_order(config.seed, epoch, units.len());
        let first = (step % per_epoch) as usize;
        let last = ((end - epoch as u64 * per_epoch).min(per_epoch)) as usize;

        let mut requests = 0usize;
        if scorer.uses_oracle() {
            let missing: Vec<usize> = order[first..last]
                .iter()
                .copied()
                .filter(|i| !y_orig.contains_key(i))
                .collect();
            requests = missing.len();
            let fetched = options.exec.map(&missing, |&i| {
                units[i]
                    .original_request(config.max_output_tokens)
                    .and_then(|req| oracle.generate(&req))
            });
            for (i, res) in missing.into_iter().zip(fetched) {
                match res {
                    Ok(resp) => {
                        y_orig.insert(i, resp.text);
                    }
                    Err(e) => log::warn!("y_orig for {} chunk {}: {e}", units[i].sample_id, units[i].chunk),
                }
            }
        }

        let mut epoch_records = Vec::new();
        for &i in &order[first..last] {
            let unit = &units[i];
            let lr = config.schedule.lr(config.lr, step, total);
            let mut rng = step_rng(config.seed, step);
            let outcome = match (scorer.uses_oracle(), y_orig.get(&i)) {
                (true, None) => Err(Error::OracleUnavailable {
                    attempts: 0,
                    message: "no output for the original prompt".into(),
                }),
                (_, cached) => train_step(
                    &params,
                    unit,
                    cached.map_or("", String::as_str),
                    oracle,
                    scorer,
                    config,
                    lr,
                    &mut rng,
                ),
            };
            let record = match outcome {
                Ok(o) => {
                    params = o.params;
                    TrainLogRecord {
                        epoch: epoch + 1,
                        step,
                        sample_id: unit.sample_id.clone(),
                        chunk: unit.chunk,
                        delta: Some(o.delta),
                        reward: Some(o.reward),
                        in_tolerance: Some(o.in_tolerance),
                        loss: Some(o.loss),
                        entropy: Some(o.entropy),
                        kept_fraction: Some(o.kept_fraction),
                        lr,
                        skipped: false,
                        error: None,
                    }
                }
                Err(e @ Error::OracleUnavailable { .. }) => {
                    log::warn!("step {step} skipped: {e}");
                    TrainLogRecord {
                        epoch: epoch + 1,
                        step,
                        sample_id: unit.sample_id.clone(),
                        chunk: unit.chunk,
                        delta: None,
                        reward: None,
                        in_tolerance: None,
                        loss: None,
                        entropy: None,
                        kept_fraction: None,
                        lr,
                        skipped: true,
                        error: Some(e.to_string()),
                    }
                }
                Err(e) => {
                    if matches!(e, Error::Numerical { .. }) {
                        writer.flush().map_err(|io| Error::io(Path::new("training log"), io))?;
                        checkpoint(&params, step)?;
                    }
                    return Err(e);
                }
            };
            writer
                .write(&record)
                .map_err(|e| Error::io(options.log_path.as_deref().unwrap_or(Path::new("-")), e))?;
            epoch_records.push(record);
            step += 1;
            if config.checkpoint_every > 0 && step.is_multiple_of(config.checkpoint_every) && step < end {
                checkpoint(&params, step)?;
            }
        }
        epochs.push(summarize(epoch + 1, &epoch_records, requests));
        log.extend(epoch_records);
    }
    writer
        .flush()
        .map_err(|e| Error::io(options.log_path.as_deref().unwrap_or(Path::new("-")), e))?;
    checkpoint(&params, step)?;
    Ok(TrainOutput {
        params,
        step,
        log,
        epochs,
    })
}
