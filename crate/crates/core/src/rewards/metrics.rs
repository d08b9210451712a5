//! Text-overlap metrics used both as rewards and for evaluation.

use std::collections::HashMap;

use crate::corpus::{is_punctuation_token, split_tokens};

const BLEU_ORDER: usize = 4;

fn ngram_counts<'a, 'b>(tokens: &'a [&'b str], n: usize) -> HashMap<&'a [&'b str], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

fn clipped_overlap(cand: &HashMap<&[&str], usize>, refc: &HashMap<&[&str], usize>) -> usize {
    cand.iter()
        .map(|(g, &c)| c.min(refc.get(g).copied().unwrap_or(0)))
        .sum()
}

/// Modified (clipped) n-gram precision as (matches, candidate n-gram total).
pub fn modified_precision(candidate: &str, reference: &str, n: usize) -> (usize, usize) {
    let c = split_tokens(candidate);
    let r = split_tokens(reference);
    let cc = ngram_counts(&c, n);
    let rc = ngram_counts(&r, n);
    (clipped_overlap(&cc, &rc), c.len().saturating_sub(n - 1))
}

/// Sentence BLEU-4 with uniform weights.
///
/// Orders 2..=4 with zero matches use add-one smoothing, `1 / (total + 1)`,
/// which also makes an order with no candidate n-grams count as 1. Zero
/// unigram overlap scores 0. The brevity penalty `exp(1 − ref/cand)` applies
/// when the candidate is shorter than the reference.
pub fn bleu(candidate: &str, reference: &str) -> f64 {
    let c = split_tokens(candidate);
    let r = split_tokens(reference);
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=BLEU_ORDER {
        let matches = clipped_overlap(&ngram_counts(&c, n), &ngram_counts(&r, n));
        let total = c.len().saturating_sub(n - 1);
        let precision = if matches > 0 {
            matches as f64 / total as f64
        } else if n == 1 {
            return 0.0;
        } else {
            1.0 / (total as f64 + 1.0)
        };
        log_sum += precision.ln();
    }
    let brevity = if c.len() < r.len() {
        (1.0 - r.len() as f64 / c.len() as f64).exp()
    } else {
        1.0
    };
    brevity * (log_sum / BLEU_ORDER as f64).exp()
}

fn f_measure(overlap: usize, cand_total: usize, ref_total: usize) -> f64 {
    if overlap == 0 || cand_total == 0 || ref_total == 0 {
        return 0.0;
    }
    let p = overlap as f64 / cand_total as f64;
    let r = overlap as f64 / ref_total as f64;
    2.0 * p * r / (p + r)
}

/// ROUGE-N F-measure over clipped n-gram overlap. When neither text is
/// long enough to hold an n-gram, the score is 1 for identical non-empty
/// token sequences and 0 otherwise.
pub fn rouge_n(candidate: &str, reference: &str, n: usize) -> f64 {
    assert!(n == 1 || n == 2, "ROUGE-N supports n in {{1, 2}}");
    let c = split_tokens(candidate);
    let r = split_tokens(reference);
    if c.len() < n && r.len() < n {
        return f64::from(u8::from(!c.is_empty() && c == r));
    }
    let cc = ngram_counts(&c, n);
    let rc = ngram_counts(&r, n);
    f_measure(
        clipped_overlap(&cc, &rc),
        c.len().saturating_sub(n - 1),
        r.len().saturating_sub(n - 1),
    )
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F-measure from the longest common subsequence.
pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    let c = split_tokens(candidate);
    let r = split_tokens(reference);
    f_measure(lcs_len(&c, &r), c.len(), r.len())
}

/// Answer normalization: lowercase, drop punctuation tokens and characters,
/// drop the articles a/an/the.
pub fn normalize_answer(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.chars()
                .filter(|c| c.is_alphanumeric() || c.is_whitespace())
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|w| !w.is_empty() && !matches!(w.as_str(), "a" | "an" | "the"))
        .collect()
}

/// Bag-of-tokens F1 between normalized answers. If either side normalizes
/// to nothing the score is 1 when both do and 0 otherwise.
pub fn token_f1(candidate: &str, reference: &str) -> f64 {
    let c = normalize_answer(candidate);
    let r = normalize_answer(reference);
    if c.is_empty() || r.is_empty() {
        return f64::from(u8::from(c.is_empty() && r.is_empty()));
    }
    let mut ref_counts: HashMap<&str, usize> = HashMap::new();
    for t in &r {
        *ref_counts.entry(t).or_insert(0) += 1;
    }
    let mut overlap = 0;
    for t in &c {
        if let Some(n) = ref_counts.get_mut(t.as_str()) {
            if *n > 0 {
                *n -= 1;
                overlap += 1;
            }
        }
    }
    f_measure(overlap, c.len(), r.len())
}

pub fn exact_match(candidate: &str, reference: &str) -> f64 {
    f64::from(u8::from(normalize_answer(candidate) == normalize_answer(reference)))
}

fn contains_span(haystack: &[String], needle: &[String]) -> bool {
    needle.len() <= haystack.len() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// 1 when either normalized answer is a contiguous token span of the other.
/// Two empty answers match; one empty answer never does.
pub fn best_subspan_em(candidate: &str, reference: &str) -> f64 {
    let c = normalize_answer(candidate);
    let r = normalize_answer(reference);
    let hit = match (c.is_empty(), r.is_empty()) {
        (true, true) => true,
        (true, false) | (false, true) => false,
        _ => contains_span(&c, &r) || contains_span(&r, &c),
    };
    f64::from(u8::from(hit))
}

/// Split after '.', '!' or '?' when followed by whitespace; a trailing
/// fragment without terminator is its own sentence.
pub fn sentence_split(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((_, c)) = chars.next() {
        if !matches!(c, '.' | '!' | '?') {
            continue;
        }
        if let Some(&(j, next)) = chars.peek() {
            if next.is_whitespace() {
                let s = text[start..j].trim();
                if !s.is_empty() {
                    out.push(s.to_string());
                }
                start = j;
            }
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail.to_string());
    }
    out
}

/// Sentence boundaries over an already tokenized text: a sentence ends after
/// a token that is exactly ".", "!" or "?". Returns half-open ranges.
pub fn sentence_spans(tokens: &[String]) -> Vec<std::ops::Range<usize>> {
    let mut spans = Vec::new();
    let mut start = 0;
    for (i, t) in tokens.iter().enumerate() {
        if matches!(t.as_str(), "." | "!" | "?") && is_punctuation_token(t) {
            spans.push(start..i + 1);
            start = i + 1;
        }
    }
    if start < tokens.len() {
        spans.push(start..tokens.len());
    }
    spans
}
