//! Applying keep/drop masks and chunk-wise compression of long documents.

use serde::{Deserialize, Serialize};

use crate::corpus::{chunk, TokenSequence, DEFAULT_MAX_LEN};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::policy::{forward, select_topk, threshold_select, ActionMask, PolicyParameters};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompressedPrompt {
    pub seq: TokenSequence,
    /// Original positions of the kept tokens, strictly increasing.
    pub kept_indices: Vec<usize>,
}

/// `rate` is τ = compressed/original; `ratio` is 1/τ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressionStats {
    pub original_n: usize,
    pub compressed_n: usize,
    pub rate: f64,
    pub ratio: f64,
}

impl CompressionStats {
    pub fn new(original_n: usize, compressed_n: usize) -> Self {
        let rate = compressed_n as f64 / original_n as f64;
        Self {
            original_n,
            compressed_n,
            rate,
            ratio: 1.0 / rate,
        }
    }
}

/// Keep the tokens where the mask is 1, in original order.
pub fn compress(
    seq: &TokenSequence,
    mask: &ActionMask,
) -> Result<(CompressedPrompt, CompressionStats)> {
    if mask.len() != seq.len() {
        return Err(Error::Dim(format!(
            "mask length {} vs sequence length {}",
            mask.len(),
            seq.len()
        )));
    }
    let kept_indices = mask.kept_positions();
    if kept_indices.is_empty() {
        return Err(Error::EmptyCompression);
    }
    let stats = CompressionStats::new(seq.len(), kept_indices.len());
    Ok((
        CompressedPrompt {
            seq: seq.select(&kept_indices),
            kept_indices,
        },
        stats,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    /// Exactly `max(1, round(c·n))` highest-probability tokens per chunk.
    #[default]
    Topk,
    /// Every token with p ≥ 0.5.
    Threshold,
}

impl std::str::FromStr for SelectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "topk" => Ok(Self::Topk),
            "threshold" => Ok(Self::Threshold),
            other => Err(Error::Config(format!("unknown selection mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CompressOptions {
    pub keep_rate: f64,
    pub mode: SelectionMode,
    pub chunk_len: usize,
    pub exec: Exec,
}

impl CompressOptions {
    pub fn topk(keep_rate: f64) -> Self {
        Self {
            keep_rate,
            mode: SelectionMode::Topk,
            chunk_len: DEFAULT_MAX_LEN,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DocumentCompression {
    pub prompt: CompressedPrompt,
    pub stats: CompressionStats,
    /// (chunk length, kept count) per chunk, in order.
    pub chunks: Vec<(usize, usize)>,
}

/// Chunk, score each chunk with the policy, select per chunk, and
/// concatenate the kept tokens in order. Stats cover the whole document.
pub fn compress_document(
    seq: &TokenSequence,
    params: &PolicyParameters,
    options: &CompressOptions,
) -> Result<DocumentCompression> {
    if !(options.keep_rate > 0.0 && options.keep_rate <= 1.0) {
        return Err(Error::Config(format!(
            "keep rate {} outside (0, 1]",
            options.keep_rate
        )));
    }
    let pieces = chunk(seq, options.chunk_len);
    let masks = options
        .exec
        .map(&pieces, |piece| -> Result<ActionMask> {
            let p = forward(params, piece)?;
            match options.mode {
                SelectionMode::Topk => select_topk(&p, options.keep_rate),
                SelectionMode::Threshold => Ok(threshold_select(&p)),
            }
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let mut kept_indices = Vec::new();
    let mut chunks = Vec::with_capacity(pieces.len());
    for (k, (piece, mask)) in pieces.iter().zip(&masks).enumerate() {
        let offset = k * options.chunk_len;
        kept_indices.extend(mask.kept_positions().into_iter().map(|i| i + offset));
        chunks.push((piece.len(), mask.kept()));
    }
    if kept_indices.is_empty() {
        return Err(Error::EmptyCompression);
    }
    let stats = CompressionStats::new(seq.len(), kept_indices.len());
    Ok(DocumentCompression {
        prompt: CompressedPrompt {
            seq: seq.select(&kept_indices),
            kept_indices,
        },
        stats,
        chunks,
    })
}
