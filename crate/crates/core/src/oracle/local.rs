use std::collections::HashSet;
use std::sync::Arc;

use super::{Oracle, OracleRequest, OracleResponse};
use crate::corpus::{is_stopword, split_tokens, Task};
use crate::error::{Error, Result};
use crate::rewards::{normalize_answer, sentence_split, CorpusStats};

/// Deterministic offline oracle: extractive summarizer and overlap-window
/// question answerer.
#[derive(Debug, Clone)]
pub struct LocalOracle {
    stats: Arc<CorpusStats>,
}

impl LocalOracle {
    pub fn new(stats: Arc<CorpusStats>) -> Self {
        Self { stats }
    }

    pub fn stats(&self) -> &CorpusStats {
        &self.stats
    }
}

impl Oracle for LocalOracle {
    fn id(&self) -> String {
        format!("local-v1:{}", self.stats.fingerprint())
    }

    fn generate(&self, request: &OracleRequest) -> Result<OracleResponse> {
        request.validate()?;
        match request.task {
            Task::Summarization => Ok(local_summarize(request, &self.stats)),
            Task::Qa => local_answer(request),
        }
    }
}

fn sentence_score(sentence: &str, stats: &CorpusStats) -> f64 {
    split_tokens(sentence)
        .into_iter()
        .filter(|t| t.chars().any(char::is_alphanumeric) && !is_stopword(t))
        .map(|t| stats.idf(&t.to_lowercase()))
        .sum()
}

/// Rank sentences by summed IDF of their content tokens (ties: earlier
/// first). The best sentence is always emitted; further sentences are added
/// in rank order while they fit in `max_output_tokens`. Output keeps the
/// original sentence order.
pub fn local_summarize(request: &OracleRequest, stats: &CorpusStats) -> OracleResponse {
    let sentences = sentence_split(&request.prompt);
    let mut ranked: Vec<(usize, f64)> = sentences
        .iter()
        .enumerate()
        .map(|(i, s)| (i, sentence_score(s, stats)))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut chosen = Vec::new();
    let mut used = 0usize;
    for (i, _) in ranked {
        let len = split_tokens(&sentences[i]).len();
        if !chosen.is_empty() && used + len > request.max_output_tokens {
            break;
        }
        chosen.push(i);
        used += len;
    }
    chosen.sort_unstable();
    let text = chosen
        .iter()
        .map(|&i| sentences[i].as_str())
        .collect::<Vec<_>>()
        .join(" ");
    OracleResponse::local(text)
}

fn normalized_token(token: &str) -> Option<String> {
    normalize_answer(token).into_iter().next()
}

/// The contiguous window of `min(max_output_tokens, n)` tokens with the most
/// tokens whose normalized form occurs in the normalized question; ties go to
/// the earliest window.
pub fn local_answer(request: &OracleRequest) -> Result<OracleResponse> {
    let question = request
        .question
        .as_deref()
        .ok_or_else(|| Error::Config("qa request without a question".into()))?;
    let wanted: HashSet<String> = normalize_answer(question).into_iter().collect();
    let tokens = split_tokens(&request.prompt);
    if tokens.is_empty() {
        return Ok(OracleResponse::local(String::new()));
    }
    let hits: Vec<usize> = tokens
        .iter()
        .map(|t| usize::from(normalized_token(t).is_some_and(|n| wanted.contains(&n))))
        .collect();
    let width = request.max_output_tokens.min(tokens.len());
    let mut current: usize = hits[..width].iter().sum();
    let (mut best, mut best_start) = (current, 0);
    for start in 1..=tokens.len() - width {
        current = current + hits[start + width - 1] - hits[start - 1];
        if current > best {
            best = current;
            best_start = start;
        }
    }
    Ok(OracleResponse::local(
        tokens[best_start..best_start + width].join(" "),
    ))
}
