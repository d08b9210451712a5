//! Reward signals: task metrics, length-shaped reward, and the token-wise
//! relevance reward for question answering.

mod metrics;
mod relevance;

pub use metrics::{
    best_subspan_em, bleu, exact_match, lcs_len, modified_precision, normalize_answer, rouge_l,
    rouge_n, sentence_spans, sentence_split, token_f1,
};
pub use relevance::{
    combine_qa_reward, cosine, embed, relevance_reward, token_similarities, CorpusStats,
    SentenceSimilarity, SparseVector,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which divergence metric turns (y_comp, y_orig) into a reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMetric {
    Bleu,
    Rouge1,
    RougeL,
    F1,
    F1PlusRelevance,
    Relevance,
}

impl std::str::FromStr for RewardMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "bleu" => Self::Bleu,
            "rouge1" => Self::Rouge1,
            "rougeL" | "rougel" => Self::RougeL,
            "f1" => Self::F1,
            "f1_plus_relevance" => Self::F1PlusRelevance,
            "relevance" => Self::Relevance,
            other => return Err(Error::Config(format!("unknown reward metric {other:?}"))),
        })
    }
}

/// How |δ| is compared against the tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToleranceRule {
    /// `|δ| ≤ L`
    #[default]
    Closed,
    /// `−L ≤ δ < L`
    HalfOpen,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    /// Target keep rate c.
    pub keep_rate: f64,
    /// Tolerance L, in tokens.
    pub tolerance: f64,
    /// Penalty r0 for out-of-range compression.
    pub penalty: f64,
    /// Entropy weight λ.
    pub entropy_weight: f64,
    /// Weight α of the relevance term in `F1 + α·relevance`.
    pub relevance_weight: f64,
    pub metric: RewardMetric,
    pub tolerance_rule: ToleranceRule,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            keep_rate: 0.5,
            tolerance: 30.0,
            penalty: -0.1,
            entropy_weight: 0.01,
            relevance_weight: 0.5,
            metric: RewardMetric::Bleu,
            tolerance_rule: ToleranceRule::Closed,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.keep_rate > 0.0 && self.keep_rate <= 1.0) {
            return Err(Error::Config(format!("c = {} outside (0, 1]", self.keep_rate)));
        }
        if self.tolerance.is_nan() || self.tolerance < 0.0 {
            return Err(Error::Config(format!("L = {} must be >= 0", self.tolerance)));
        }
        if self.penalty.is_nan() || self.penalty >= 0.0 {
            return Err(Error::Config(format!("r0 = {} must be negative", self.penalty)));
        }
        if self.entropy_weight.is_nan() || self.entropy_weight < 0.0 {
            return Err(Error::Config("lambda must be >= 0".into()));
        }
        if self.relevance_weight.is_nan() || self.relevance_weight < 0.0 {
            return Err(Error::Config("alpha must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardOutcome {
    pub delta: f64,
    pub in_tolerance: bool,
    pub value: f64,
    pub metric_value: Option<f64>,
}

/// δ = compressed_n − c·original_n; the metric passes through when δ is
/// within tolerance, otherwise the reward is r0.
pub fn shaped_reward(
    metric_value: f64,
    original_n: usize,
    compressed_n: usize,
    config: &RewardConfig,
) -> RewardOutcome {
    let delta = compressed_n as f64 - config.keep_rate * original_n as f64;
    let in_tolerance = match config.tolerance_rule {
        ToleranceRule::Closed => delta.abs() <= config.tolerance,
        ToleranceRule::HalfOpen => -config.tolerance <= delta && delta < config.tolerance,
    };
    RewardOutcome {
        delta,
        in_tolerance,
        value: if in_tolerance { metric_value } else { config.penalty },
        metric_value: Some(metric_value),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> RewardConfig {
        RewardConfig::default()
    }

    #[test]
    fn defaults_match_reference_hyperparameters() {
        let c = cfg();
        assert_eq!(c.keep_rate, 0.5);
        assert_eq!(c.tolerance, 30.0);
        assert_eq!(c.entropy_weight, 0.01);
        assert_eq!(c.penalty, -0.1);
        c.validate().unwrap();
    }

    #[test]
    fn within_tolerance_passes_metric() {
        let out = shaped_reward(0.42, 512, 260, &cfg());
        assert_eq!(out.delta, 4.0);
        assert!(out.in_tolerance);
        assert_eq!(out.value, 0.42);
    }

    #[test]
    fn outside_tolerance_gives_penalty() {
        let out = shaped_reward(0.42, 512, 300, &cfg());
        assert_eq!(out.delta, 44.0);
        assert!(!out.in_tolerance);
        assert_eq!(out.value, -0.1);
    }

    #[test]
    fn boundary_is_inclusive() {
        // δ = 226 − 256 = −30
        let out = shaped_reward(0.9, 512, 226, &cfg());
        assert_eq!(out.delta, -30.0);
        assert!(out.in_tolerance);
        let out = shaped_reward(0.9, 512, 286, &cfg());
        assert!(out.in_tolerance);
    }

    #[test]
    fn half_open_rule_excludes_upper_edge() {
        let c = RewardConfig {
            tolerance_rule: ToleranceRule::HalfOpen,
            ..cfg()
        };
        assert!(!shaped_reward(0.9, 512, 286, &c).in_tolerance);
        assert!(shaped_reward(0.9, 512, 226, &c).in_tolerance);
    }

    #[test]
    fn invalid_configs() {
        assert!(RewardConfig { keep_rate: 0.0, ..cfg() }.validate().is_err());
        assert!(RewardConfig { penalty: 0.1, ..cfg() }.validate().is_err());
        assert!(RewardConfig { tolerance: -1.0, ..cfg() }.validate().is_err());
    }

    #[test]
    fn metric_names_parse() {
        assert_eq!("rougeL".parse::<RewardMetric>().unwrap(), RewardMetric::RougeL);
        assert!("bertscore".parse::<RewardMetric>().is_err());
    }
}
