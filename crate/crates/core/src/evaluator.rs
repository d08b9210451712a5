//! Policy evaluation across compression rates.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::compressor::{compress_document, CompressOptions, SelectionMode};
use crate::corpus::{detokenize, tokenize, Sample, Vocabulary, DEFAULT_MAX_LEN};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::oracle::{Oracle, OracleRequest};
use crate::policy::PolicyParameters;
use crate::rewards::{best_subspan_em, bleu, exact_match, rouge_l, rouge_n, token_f1};

/// The standard rate grid, 2x to 6x.
pub const DEFAULT_RATES: [f64; 5] = [0.5, 0.33, 0.25, 0.2, 0.166];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMetric {
    Bleu,
    Rouge1,
    Rouge2,
    RougeL,
    F1,
    Em,
    SubspanEm,
}

impl EvalMetric {
    pub const ALL: [EvalMetric; 7] = [
        EvalMetric::Bleu,
        EvalMetric::Rouge1,
        EvalMetric::Rouge2,
        EvalMetric::RougeL,
        EvalMetric::F1,
        EvalMetric::Em,
        EvalMetric::SubspanEm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EvalMetric::Bleu => "bleu",
            EvalMetric::Rouge1 => "rouge1",
            EvalMetric::Rouge2 => "rouge2",
            EvalMetric::RougeL => "rougeL",
            EvalMetric::F1 => "f1",
            EvalMetric::Em => "em",
            EvalMetric::SubspanEm => "subspan_em",
        }
    }

    pub fn score(self, candidate: &str, reference: &str) -> f64 {
        match self {
            EvalMetric::Bleu => bleu(candidate, reference),
            EvalMetric::Rouge1 => rouge_n(candidate, reference, 1),
            EvalMetric::Rouge2 => rouge_n(candidate, reference, 2),
            EvalMetric::RougeL => rouge_l(candidate, reference),
            EvalMetric::F1 => token_f1(candidate, reference),
            EvalMetric::Em => exact_match(candidate, reference),
            EvalMetric::SubspanEm => best_subspan_em(candidate, reference),
        }
    }

    fn is_em(self) -> bool {
        matches!(self, EvalMetric::Em | EvalMetric::SubspanEm)
    }
}

impl std::str::FromStr for EvalMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EvalMetric::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown metric {s:?}")))
    }
}

/// What y_comp is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Versus {
    /// The oracle output on the uncompressed prompt.
    Original,
    /// The gold reference, when the sample has one.
    Reference,
}

/// One (rate, metric, versus) cell. The JSON Lines report is one row per
/// line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub rate: f64,
    pub metric: EvalMetric,
    pub versus: Versus,
    pub mean: f64,
    /// Samples contributing to `mean`.
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub em_count: Option<usize>,
    /// Mean achieved τ over evaluated samples at this rate.
    pub mean_tau: f64,
    pub samples: usize,
    pub evaluated: usize,
}

impl ReportRow {
    pub fn coverage(&self) -> f64 {
        self.evaluated as f64 / self.samples as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    pub fn row(&self, rate: f64, metric: EvalMetric, versus: Versus) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.rate == rate && r.metric == metric && r.versus == versus)
    }

    /// Whether any sample failed at any rate.
    pub fn incomplete(&self) -> bool {
        self.rows.iter().any(|r| r.evaluated < r.samples)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            out.push_str(&serde_json::to_string(r).expect("row serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let rows = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| Error::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { rows })
    }

    /// Aligned table: one line per rate, one column per (metric, versus).
    pub fn to_table(&self) -> String {
        let mut rates: Vec<f64> = Vec::new();
        let mut cols: Vec<(EvalMetric, Versus)> = Vec::new();
        for r in &self.rows {
            if !rates.contains(&r.rate) {
                rates.push(r.rate);
            }
            if !cols.contains(&(r.metric, r.versus)) {
                cols.push((r.metric, r.versus));
            }
        }
        let mut out = String::new();
        let _ = write!(out, "{:>7} {:>6} {:>7} {:>8}", "rate", "C.R.", "tau", "coverage");
        for (m, v) in &cols {
            let suffix = if *v == Versus::Reference { "/ref" } else { "" };
            let _ = write!(out, " {:>14}", format!("{}{suffix}", m.name()));
        }
        out.push('\n');
        for rate in rates {
            let any = self.rows.iter().find(|r| r.rate == rate).expect("rate has rows");
            let _ = write!(
                out,
                "{:>7.3} {:>5.1}x {:>7.4} {:>8.3}",
                rate,
                1.0 / rate,
                any.mean_tau,
                any.coverage()
            );
            for &(m, v) in &cols {
                let cell = match self.row(rate, m, v) {
                    Some(r) if r.count == 0 => "-".to_string(),
                    Some(r) => match r.em_count {
                        Some(n) => format!("{:.4} ({n})", r.mean),
                        None => format!("{:.4}", r.mean),
                    },
                    None => "-".to_string(),
                };
                let _ = write!(out, " {cell:>14}");
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub max_output_tokens: usize,
    pub chunk_len: usize,
    pub exec: Exec,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            max_output_tokens: 64,
            chunk_len: DEFAULT_MAX_LEN,
            exec: Exec::default(),
        }
    }
}

struct SampleResult {
    tau: f64,
    vs_original: Vec<f64>,
    vs_reference: Option<Vec<f64>>,
}

fn evaluate_sample<O: Oracle + ?Sized>(
    sample: &Sample,
    vocab: &Vocabulary,
    params: &PolicyParameters,
    rate: f64,
    oracle: &O,
    metrics: &[EvalMetric],
    options: &EvalOptions,
) -> Result<SampleResult> {
    let seq = tokenize(&sample.context, vocab)?;
    let request = |prompt: String| {
        OracleRequest::new(prompt, sample.question.clone(), sample.task, options.max_output_tokens)
    };
    let y_orig = oracle.generate(&request(detokenize(&seq))?)?.text;
    let compressed = compress_document(
        &seq,
        params,
        &CompressOptions {
            keep_rate: rate,
            mode: SelectionMode::Topk,
            chunk_len: options.chunk_len,
            exec: Exec::Sequential,
        },
    )?;
    let y_comp = oracle.generate(&request(detokenize(&compressed.prompt.seq))?)?.text;
    Ok(SampleResult {
        tau: compressed.stats.rate,
        vs_original: metrics.iter().map(|m| m.score(&y_comp, &y_orig)).collect(),
        vs_reference: sample
            .reference
            .as_ref()
            .map(|r| metrics.iter().map(|m| m.score(&y_comp, r)).collect()),
    })
}

/// Compress every sample at every rate (top-k), query the oracle, and
/// average each metric of y_comp against y_orig and against the reference.
/// Per-sample oracle failures lower the coverage instead of aborting.
pub fn evaluate<O: Oracle + ?Sized>(
    dataset: &[Sample],
    vocab: &Vocabulary,
    params: &PolicyParameters,
    rates: &[f64],
    oracle: &O,
    metrics: &[EvalMetric],
    options: &EvalOptions,
) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput);
    }
    if rates.is_empty() || metrics.is_empty() {
        return Err(Error::Config("need at least one rate and one metric".into()));
    }
    if let Some(bad) = rates.iter().find(|&&r| !(r > 0.0 && r <= 1.0)) {
        return Err(Error::Config(format!("rate {bad} outside (0, 1]")));
    }
    let mut rows = Vec::new();
    for &rate in rates {
        let results = options.exec.map(dataset, |s| {
            evaluate_sample(s, vocab, params, rate, oracle, metrics, options)
        });
        let mut ok = Vec::new();
        for (s, r) in dataset.iter().zip(results) {
            match r {
                Ok(r) => ok.push(r),
                Err(e @ (Error::OracleUnavailable { .. } | Error::Config(_))) => {
                    log::warn!("sample {} at rate {rate}: {e}", s.id)
                }
                Err(e) => return Err(e),
            }
        }
        let evaluated = ok.len();
        let mean_tau = if evaluated == 0 {
            0.0
        } else {
            ok.iter().map(|r| r.tau).sum::<f64>() / evaluated as f64
        };
        for versus in [Versus::Original, Versus::Reference] {
            for (k, &metric) in metrics.iter().enumerate() {
                let values: Vec<f64> = ok
                    .iter()
                    .filter_map(|r| match versus {
                        Versus::Original => Some(r.vs_original[k]),
                        Versus::Reference => r.vs_reference.as_ref().map(|v| v[k]),
                    })
                    .collect();
                if versus == Versus::Reference && values.is_empty() {
                    continue;
                }
                let count = values.len();
                let mean = if count == 0 {
                    0.0
                } else {
                    values.iter().sum::<f64>() / count as f64
                };
                rows.push(ReportRow {
                    rate,
                    metric,
                    versus,
                    mean,
                    count,
                    em_count: metric
                        .is_em()
                        .then(|| values.iter().filter(|&&v| v == 1.0).count()),
                    mean_tau,
                    samples: dataset.len(),
                    evaluated,
                });
            }
        }
    }
    Ok(EvalReport { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub rate: f64,
    pub metric: EvalMetric,
    pub versus: Versus,
    pub a: f64,
    pub b: f64,
    /// `b − a`.
    pub delta: f64,
}

type CellKey = (u64, EvalMetric, Versus);

fn cells(report: &EvalReport) -> BTreeMap<CellKey, f64> {
    report
        .rows
        .iter()
        .map(|r| ((r.rate.to_bits(), r.metric, r.versus), r.mean))
        .collect()
}

/// Per-cell differences `b − a`; the reports must cover the same cells and
/// sample count.
pub fn compare(a: &EvalReport, b: &EvalReport) -> Result<Vec<DeltaRow>> {
    let (ca, cb) = (cells(a), cells(b));
    let same_keys = ca.len() == cb.len() && ca.keys().zip(cb.keys()).all(|(x, y)| x == y);
    if !same_keys || ca.len() != a.rows.len() || cb.len() != b.rows.len() {
        return Err(Error::Schema {
            line: 0,
            message: "reports cover different rates or metrics".into(),
        });
    }
    let samples = |r: &EvalReport| r.rows.first().map(|x| x.samples);
    if samples(a) != samples(b) {
        return Err(Error::Schema {
            line: 0,
            message: "reports cover different datasets".into(),
        });
    }
    Ok(a
        .rows
        .iter()
        .map(|r| {
            let bv = cb[&(r.rate.to_bits(), r.metric, r.versus)];
            DeltaRow {
                rate: r.rate,
                metric: r.metric,
                versus: r.versus,
                a: r.mean,
                b: bv,
                delta: bv - r.mean,
            }
        })
        .collect())
}

pub fn delta_table(rows: &[DeltaRow]) -> String {
    let mut out = format!("{:>7} {:>14} {:>9} {:>9} {:>9} {:>10}\n", "rate", "metric", "versus", "a", "b", "delta");
    for r in rows {
        let versus = match r.versus {
            Versus::Original => "original",
            Versus::Reference => "reference",
        };
        let _ = writeln!(
            out,
            "{:>7.3} {:>14} {:>9} {:>9.4} {:>9.4} {:>+10.4}",
            r.rate,
            r.metric.name(),
            versus,
            r.a,
            r.b,
            r.delta
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Task;
    use crate::oracle::LocalOracle;
    use crate::policy::Dims;
    use crate::rewards::CorpusStats;
    use std::sync::Arc;

    fn fixture() -> (Vec<Sample>, Vocabulary, PolicyParameters, LocalOracle) {
        let data = vec![
            Sample {
                id: "1".into(),
                context: "The bridge opened in 1932 . Rain fell all day in the town .".into(),
                question: Some("When did the bridge open?".into()),
                reference: Some("1932".into()),
                task: Task::Qa,
            },
            Sample {
                id: "2".into(),
                context: "The council met on Monday . Budget talks stalled again .".into(),
                question: None,
                reference: None,
                task: Task::Summarization,
            },
        ];
        let vocab = Vocabulary::build(data.iter().map(|s| s.context.as_str()));
        let params = PolicyParameters::init(3, Dims::new(vocab.len(), 6, 1).unwrap()).unwrap();
        let oracle = LocalOracle::new(Arc::new(CorpusStats::build(data.iter().map(|s| s.context.as_str()))));
        (data, vocab, params, oracle)
    }

    #[test]
    fn identity_rate_scores_one() {
        let (data, vocab, params, oracle) = fixture();
        let opts = EvalOptions {
            max_output_tokens: 4,
            ..EvalOptions::default()
        };
        let rep = evaluate(&data, &vocab, &params, &[1.0], &oracle, &EvalMetric::ALL, &opts).unwrap();
        for m in EvalMetric::ALL {
            assert_eq!(rep.row(1.0, m, Versus::Original).unwrap().mean, 1.0, "{m:?}");
        }
        assert_eq!(rep.row(1.0, EvalMetric::Em, Versus::Original).unwrap().em_count, Some(2));
        assert_eq!(rep.row(1.0, EvalMetric::F1, Versus::Reference).unwrap().count, 1);
    }

    #[test]
    fn jsonl_round_trip_and_compare() {
        let (data, vocab, params, oracle) = fixture();
        let rep = evaluate(&data, &vocab, &params, &DEFAULT_RATES, &oracle, &[EvalMetric::F1, EvalMetric::Bleu], &EvalOptions::default()).unwrap();
        let back = EvalReport::from_jsonl(&rep.to_jsonl()).unwrap();
        assert_eq!(back, rep);
        let deltas = compare(&rep, &rep).unwrap();
        assert_eq!(deltas.len(), rep.rows.len());
        assert!(deltas.iter().all(|d| d.delta == 0.0));

        let mut other = rep.clone();
        other.rows[3].mean += 1.0;
        let deltas = compare(&rep, &other).unwrap();
        assert_eq!(deltas.iter().filter(|d| d.delta != 0.0).count(), 1);
        assert!(rep.to_table().lines().count() == DEFAULT_RATES.len() + 1);

        let mut fewer = rep.clone();
        fewer.rows.pop();
        assert!(matches!(compare(&rep, &fewer), Err(Error::Schema { .. })));
    }

    #[test]
    fn rejects_bad_inputs() {
        let (data, vocab, params, oracle) = fixture();
        let o = EvalOptions::default();
        assert!(matches!(evaluate(&[], &vocab, &params, &[0.5], &oracle, &[EvalMetric::F1], &o), Err(Error::EmptyInput)));
        assert!(evaluate(&data, &vocab, &params, &[1.5], &oracle, &[EvalMetric::F1], &o).is_err());
    }
}
