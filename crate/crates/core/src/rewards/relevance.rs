use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use super::metrics::sentence_spans;
use crate::corpus::{is_punctuation_token, split_tokens, TokenSequence};
use crate::policy::ActionMask;

/// Lowercased non-punctuation tokens.
pub(crate) fn terms(text: &str) -> Vec<String> {
    split_tokens(text)
        .into_iter()
        .filter(|t| !is_punctuation_token(t))
        .map(str::to_lowercase)
        .collect()
}

/// Document frequencies over a fixed corpus. Immutable after construction.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusStats {
    documents: usize,
    doc_freq: BTreeMap<String, usize>,
}

impl CorpusStats {
    pub fn build<'a>(documents: impl IntoIterator<Item = &'a str>) -> Self {
        let mut stats = Self::default();
        for doc in documents {
            stats.documents += 1;
            let mut seen: Vec<String> = terms(doc);
            seen.sort();
            seen.dedup();
            for t in seen {
                *stats.doc_freq.entry(t).or_insert(0) += 1;
            }
        }
        stats
    }

    pub fn documents(&self) -> usize {
        self.documents
    }

    /// Smoothed inverse document frequency, `ln((1 + N) / (1 + df)) + 1`;
    /// always positive, unseen terms get the largest value.
    pub fn idf(&self, term: &str) -> f64 {
        let df = self.doc_freq.get(term).copied().unwrap_or(0);
        ((1.0 + self.documents as f64) / (1.0 + df as f64)).ln() + 1.0
    }

    /// Short stable fingerprint, used to version oracle cache keys.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.documents as u64).to_le_bytes());
        for (t, df) in &self.doc_freq {
            h.update((t.len() as u64).to_le_bytes());
            h.update(t.as_bytes());
            h.update((*df as u64).to_le_bytes());
        }
        hex::encode(&h.finalize()[..6])
    }
}

/// Sparse L2-normalized term-weight vector.
pub type SparseVector = BTreeMap<String, f64>;

/// TF-IDF embedding, L2-normalized; the zero vector for text without terms.
pub fn embed(text: &str, stats: &CorpusStats) -> SparseVector {
    let mut v = SparseVector::new();
    for t in terms(text) {
        *v.entry(t).or_insert(0.0) += 1.0;
    }
    for (t, w) in v.iter_mut() {
        *w *= stats.idf(t);
    }
    let norm = v.values().map(|w| w * w).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.values_mut().for_each(|w| *w /= norm);
    }
    v
}

pub fn cosine(a: &SparseVector, b: &SparseVector) -> f64 {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    small
        .iter()
        .filter_map(|(t, w)| large.get(t).map(|u| w * u))
        .sum()
}

/// Pluggable sentence similarity for the relevance reward.
pub trait SentenceSimilarity {
    fn similarity(&self, sentence: &str, question: &str) -> f64;
}

impl SentenceSimilarity for CorpusStats {
    fn similarity(&self, sentence: &str, question: &str) -> f64 {
        cosine(&embed(sentence, self), &embed(question, self))
    }
}

/// Each token's score is its sentence's similarity to the question.
pub fn token_similarities<S: SentenceSimilarity + ?Sized>(
    context: &TokenSequence,
    question: &str,
    sim: &S,
) -> Vec<f64> {
    let mut out = vec![0.0; context.len()];
    for span in sentence_spans(context.tokens()) {
        let sentence = context.tokens()[span.clone()].join(" ");
        let score = sim.similarity(&sentence, question);
        out[span].iter_mut().for_each(|x| *x = score);
    }
    out
}

/// Mean token score over kept tokens: `Σ a_j·sim(x_j) / Σ a_j`.
/// Returns 0 for a mask that keeps nothing.
pub fn relevance_reward<S: SentenceSimilarity + ?Sized>(
    context: &TokenSequence,
    question: &str,
    mask: &ActionMask,
    sim: &S,
) -> f64 {
    assert_eq!(mask.len(), context.len(), "mask length must match context");
    let scores = token_similarities(context, question, sim);
    let kept = mask.kept();
    if kept == 0 {
        return 0.0;
    }
    let total: f64 = scores
        .iter()
        .zip(mask.bits())
        .map(|(s, &a)| f64::from(a) * s)
        .sum();
    total / kept as f64
}

/// `r_f1 + α·r_sim`.
pub fn combine_qa_reward(r_f1: f64, r_sim: f64, alpha: f64) -> f64 {
    r_f1 + alpha * r_sim
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{tokenize, Vocabulary};
    use approx::assert_abs_diff_eq;

    fn stats() -> CorpusStats {
        CorpusStats::build([
            "the river flows north",
            "the mountain is tall",
            "bread is baked daily",
        ])
    }

    #[test]
    fn identical_and_disjoint() {
        let s = stats();
        let a = embed("the river flows", &s);
        assert_abs_diff_eq!(cosine(&a, &a), 1.0, epsilon = 1e-12);
        let b = embed("bread baked", &s);
        assert_eq!(cosine(&a, &b), 0.0);
        assert!(embed("...", &s).is_empty());
    }

    #[test]
    fn cosine_symmetric() {
        let s = stats();
        let a = embed("the river is tall", &s);
        let b = embed("mountain river bread", &s);
        assert_eq!(cosine(&a, &b), cosine(&b, &a));
    }

    struct Fixed(Vec<(&'static str, f64)>);

    impl SentenceSimilarity for Fixed {
        fn similarity(&self, sentence: &str, _: &str) -> f64 {
            self.0
                .iter()
                .find(|(s, _)| sentence.starts_with(s))
                .map(|(_, v)| *v)
                .unwrap()
        }
    }

    #[test]
    fn masked_mean_arithmetic() {
        let text = "a b c . d e f .";
        let v = Vocabulary::build([text]);
        let ctx = tokenize(text, &v).unwrap();
        let sim = Fixed(vec![("a", 0.8), ("d", 0.2)]);
        // three tokens of the first sentence, one of the second
        let mask = ActionMask::new(vec![1, 1, 1, 0, 1, 0, 0, 0]).unwrap();
        assert_abs_diff_eq!(relevance_reward(&ctx, "q", &mask, &sim), 0.65, epsilon = 1e-12);
        // only the best sentence's tokens
        let mask = ActionMask::new(vec![1, 0, 1, 1, 0, 0, 0, 0]).unwrap();
        assert_abs_diff_eq!(relevance_reward(&ctx, "q", &mask, &sim), 0.8, epsilon = 1e-12);
    }

    #[test]
    fn identical_sentences_make_mask_irrelevant() {
        let text = "river flows . river flows . river flows .";
        let v = Vocabulary::build([text]);
        let ctx = tokenize(text, &v).unwrap();
        let s = stats();
        let r1 = relevance_reward(&ctx, "river", &ActionMask::from_index(0b1, 9), &s);
        let r2 = relevance_reward(&ctx, "river", &ActionMask::from_index(0b1_0110_0000, 9), &s);
        assert_abs_diff_eq!(r1, r2, epsilon = 1e-12);
    }

    #[test]
    fn combine_examples() {
        assert_eq!(combine_qa_reward(0.3, 0.9, 0.0), 0.3);
        assert_abs_diff_eq!(combine_qa_reward(0.5, 0.6, 0.5), 0.8, epsilon = 1e-15);
    }
}
