//! Tokenization, vocabulary, chunking and JSON Lines dataset ingestion.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Default chunk length, matching the fixed input length of the encoder
/// the method was designed around.
pub const DEFAULT_MAX_LEN: usize = 512;

pub const UNK_TOKEN: &str = "<unk>";

/// Function words dropped by the heuristic labeler and ignored when scoring
/// sentence content.
pub const STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "all", "also", "am", "an", "and", "any", "are", "as",
    "at", "be", "because", "been", "before", "being", "below", "between", "both", "but", "by",
    "can", "could", "did", "do", "does", "doing", "down", "during", "each", "few", "for", "from",
    "further", "had", "has", "have", "having", "he", "her", "here", "hers", "him", "his", "how",
    "i", "if", "in", "into", "is", "it", "its", "just", "me", "more", "most", "my", "no", "nor",
    "not", "now", "of", "off", "on", "once", "only", "or", "other", "our", "ours", "out", "over",
    "own", "same", "she", "should", "so", "some", "such", "than", "that", "the", "their",
    "theirs", "them", "then", "there", "these", "they", "this", "those", "through", "to", "too",
    "under", "until", "up", "very", "was", "we", "were", "what", "when", "where", "which",
    "while", "who", "whom", "why", "will", "with", "would", "you", "your", "yours",
];

pub fn is_stopword(token: &str) -> bool {
    let lower = token.to_lowercase();
    STOPWORDS.binary_search(&lower.as_str()).is_ok()
}

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric()
}

pub fn is_punctuation_token(token: &str) -> bool {
    !token.is_empty() && token.chars().all(is_punct)
}

/// Whitespace split, then every leading and trailing punctuation character
/// becomes its own token. Interior punctuation ("don't", "U.S") is kept.
pub fn split_tokens(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut rest = word;
        while let Some(c) = rest.chars().next().filter(|&c| is_punct(c)) {
            let (head, tail) = rest.split_at(c.len_utf8());
            out.push(head);
            rest = tail;
        }
        let mut trailing = Vec::new();
        while let Some(c) = rest.chars().next_back().filter(|&c| is_punct(c)) {
            let (head, tail) = rest.split_at(rest.len() - c.len_utf8());
            trailing.push(tail);
            rest = head;
        }
        if !rest.is_empty() {
            out.push(rest);
        }
        out.extend(trailing.into_iter().rev());
    }
    out
}

/// Token → id map built from a corpus. Lookup is case-insensitive; id 0 is
/// reserved for unknown tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Ids are assigned densely in first-occurrence order.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut tokens = vec![UNK_TOKEN.to_string()];
        let mut index = HashMap::new();
        index.insert(UNK_TOKEN.to_string(), 0);
        for text in texts {
            for tok in split_tokens(text) {
                let key = tok.to_lowercase();
                if !index.contains_key(&key) {
                    index.insert(key.clone(), tokens.len());
                    tokens.push(key);
                }
            }
        }
        Self { tokens, index }
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.first().map(String::as_str) != Some(UNK_TOKEN) {
            return Err(Error::Config(format!(
                "vocabulary must start with {UNK_TOKEN}"
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn unk_id(&self) -> usize {
        0
    }

    pub fn id(&self, token: &str) -> usize {
        self.index
            .get(&token.to_lowercase())
            .copied()
            .unwrap_or(self.unk_id())
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(&self.tokens).expect("string list serializes");
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tokens: Vec<String> = serde_json::from_str(&raw).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        Self::from_tokens(tokens)
    }
}

/// An ordered, non-empty list of tokens with their vocabulary ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    tokens: Vec<String>,
    ids: Vec<usize>,
}

impl TokenSequence {
    pub fn new(tokens: Vec<String>, ids: Vec<usize>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput);
        }
        if tokens.len() != ids.len() {
            return Err(Error::Dim(format!(
                "{} tokens but {} ids",
                tokens.len(),
                ids.len()
            )));
        }
        Ok(Self { tokens, ids })
    }

    /// A sequence whose token strings are the decimal ids. Handy when only
    /// the policy's view of the input matters.
    pub fn from_ids(ids: Vec<usize>) -> Result<Self> {
        let tokens = ids.iter().map(|i| i.to_string()).collect();
        Self::new(tokens, ids)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub(crate) fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            tokens: self.tokens[range.clone()].to_vec(),
            ids: self.ids[range].to_vec(),
        }
    }

    pub(crate) fn select(&self, positions: &[usize]) -> Self {
        Self {
            tokens: positions.iter().map(|&i| self.tokens[i].clone()).collect(),
            ids: positions.iter().map(|&i| self.ids[i]).collect(),
        }
    }
}

pub fn tokenize(text: &str, vocab: &Vocabulary) -> Result<TokenSequence> {
    let pieces = split_tokens(text);
    if pieces.is_empty() {
        return Err(Error::EmptyInput);
    }
    let ids = pieces.iter().map(|t| vocab.id(t)).collect();
    TokenSequence::new(pieces.into_iter().map(str::to_owned).collect(), ids)
}

pub fn detokenize(seq: &TokenSequence) -> String {
    seq.tokens.join(" ")
}

/// Partition `seq` in order into pieces of `max_len` tokens; only the last
/// piece may be shorter.
pub fn chunk(seq: &TokenSequence, max_len: usize) -> Vec<TokenSequence> {
    assert!(max_len >= 1, "chunk length must be at least 1");
    (0..seq.len())
        .step_by(max_len)
        .map(|start| seq.slice(start..(start + max_len).min(seq.len())))
        .collect()
}

/// Heuristic keep labels for the supervised bootstrap: keep everything that
/// is neither a stopword nor pure punctuation.
pub fn heuristic_labels(seq: &TokenSequence) -> Vec<u8> {
    seq.tokens()
        .iter()
        .map(|t| u8::from(!is_stopword(t) && !is_punctuation_token(t)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Summarization,
    Qa,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::Summarization => "summarization",
            Task::Qa => "qa",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub context: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    pub task: Task,
}

fn required_str(obj: &serde_json::Map<String, Value>, key: &str, line: usize) -> Result<String> {
    match obj.get(key) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(Error::Schema {
            line,
            message: format!("field {key:?} must be a string"),
        }),
        None => Err(Error::Schema {
            line,
            message: format!("missing required field {key:?}"),
        }),
    }
}

fn optional_str(
    obj: &serde_json::Map<String, Value>,
    key: &str,
    line: usize,
) -> Result<Option<String>> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(Error::Schema {
            line,
            message: format!("field {key:?} must be a string"),
        }),
    }
}

/// Parse JSON Lines text. Line numbers in errors are 1-based.
pub fn parse_dataset(raw: &str) -> Result<Vec<Sample>> {
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (idx, text) in raw.lines().enumerate() {
        let line = idx + 1;
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let Value::Object(obj) = value else {
            return Err(Error::Schema {
                line,
                message: "expected a JSON object".into(),
            });
        };
        let id = required_str(&obj, "id", line)?;
        let context = required_str(&obj, "context", line)?;
        let task = match required_str(&obj, "task", line)?.as_str() {
            "summarization" => Task::Summarization,
            "qa" => Task::Qa,
            other => {
                return Err(Error::Schema {
                    line,
                    message: format!("unknown task {other:?}"),
                })
            }
        };
        let question = optional_str(&obj, "question", line)?;
        let reference = optional_str(&obj, "reference", line)?;
        if task == Task::Qa && question.is_none() {
            return Err(Error::Schema {
                line,
                message: "qa sample without a question".into(),
            });
        }
        if context.trim().is_empty() {
            return Err(Error::Schema {
                line,
                message: "empty context".into(),
            });
        }
        if !seen.insert(id.clone()) {
            return Err(Error::Schema {
                line,
                message: format!("duplicate id {id:?}"),
            });
        }
        samples.push(Sample {
            id,
            context,
            question,
            reference,
            task,
        });
    }
    Ok(samples)
}

pub fn load_dataset(path: &Path) -> Result<Vec<Sample>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&raw)
}

pub fn write_dataset(path: &Path, samples: &[Sample]) -> Result<()> {
    let mut out = String::new();
    for s in samples {
        out.push_str(&serde_json::to_string(s).expect("sample serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
