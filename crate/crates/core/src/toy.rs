//! Synthetic keyword-retrieval QA corpus.
//!
//! Each prompt is a run of stopword fillers with a contiguous block of
//! content-word keywords; the question lists the keywords. The local QA
//! oracle with an output budget equal to the keyword count answers with
//! exactly that block.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Sample, Task, Vocabulary, STOPWORDS};

pub const KEYWORD_POOL: &[&str] = &[
    "anchor", "basalt", "canyon", "dagger", "ember", "falcon", "glacier", "harbor", "indigo",
    "jasper", "kettle", "lantern", "meadow", "nectar", "orchid", "pepper", "quartz", "raven",
    "saffron", "timber", "umber", "velvet", "walnut", "yarrow", "zephyr", "almond", "beacon",
    "cobalt", "dune", "ferret", "granite", "hazel", "ivory", "juniper", "kiln", "lichen",
    "marble", "nutmeg", "onyx", "pebble", "quill", "rustle", "sparrow", "thistle", "tundra",
    "violet", "willow", "yeoman", "zinnia", "bramble", "cinder", "drizzle", "fjord", "gravel",
    "heron", "island", "jigsaw", "kelp", "lagoon", "mosaic",
];

#[derive(Debug, Clone, Copy)]
pub struct ToyConfig {
    pub prompts: usize,
    pub keywords: usize,
    pub fillers: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            prompts: 200,
            keywords: 5,
            fillers: 45,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyPrompt {
    pub sample: Sample,
    /// Token positions of the keywords in the context.
    pub keyword_positions: Vec<usize>,
}

/// Filler words: single-token stopwords that the answer normalizer keeps.
pub fn filler_pool() -> Vec<&'static str> {
    STOPWORDS
        .iter()
        .copied()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect()
}

pub fn keyword_corpus(config: &ToyConfig) -> Vec<ToyPrompt> {
    assert!(config.keywords <= KEYWORD_POOL.len(), "not enough distinct keywords");
    let fillers = filler_pool();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    (0..config.prompts)
        .map(|i| {
            let mut keywords: Vec<&str> = KEYWORD_POOL.choose_multiple(&mut rng, config.keywords).copied().collect();
            keywords.shuffle(&mut rng);
            let start = rng.random_range(0..=config.fillers);
            let mut tokens: Vec<&str> = (0..config.fillers)
                .map(|_| *fillers.choose(&mut rng).expect("non-empty pool"))
                .collect();
            tokens.splice(start..start, keywords.iter().copied());
            ToyPrompt {
                sample: Sample {
                    id: format!("toy-{}-{i}", config.seed),
                    context: tokens.join(" "),
                    question: Some(format!("{}?", keywords.join(" "))),
                    reference: Some(keywords.join(" ")),
                    task: Task::Qa,
                },
                keyword_positions: (start..start + config.keywords).collect(),
            }
        })
        .collect()
}

/// Vocabulary covering every word the generator can emit.
pub fn toy_vocabulary() -> Vocabulary {
    let words: Vec<&str> = filler_pool().into_iter().chain(KEYWORD_POOL.iter().copied()).collect();
    Vocabulary::build([words.join(" ").as_str()])
}
