use serde_json::Value;
use taco_core::rewards::{
    best_subspan_em, bleu, exact_match, modified_precision, rouge_l, rouge_n, token_f1,
};

// Generated by tests/oracles/metrics.py.
const FIXTURE: &str = include_str!("fixtures/metrics.json");

fn cases() -> Vec<Value> {
    serde_json::from_str::<Vec<Value>>(FIXTURE).unwrap()
}

#[test]
fn metrics_agree_with_reference_implementation() {
    let all = cases();
    assert!(all.len() >= 20);
    for case in &all {
        let c = case["candidate"].as_str().unwrap();
        let r = case["reference"].as_str().unwrap();
        let got = [
            ("bleu", bleu(c, r)),
            ("rouge1", rouge_n(c, r, 1)),
            ("rouge2", rouge_n(c, r, 2)),
            ("rougeL", rouge_l(c, r)),
            ("f1", token_f1(c, r)),
            ("em", exact_match(c, r)),
            ("subspan_em", best_subspan_em(c, r)),
        ];
        for (name, value) in got {
            let want = case[name].as_f64().unwrap();
            assert!((value - want).abs() < 5e-5, "{name}({c:?}, {r:?}) = {value}, want {want}");
        }
    }
}

#[test]
fn clipped_unigram_precision() {
    assert_eq!(modified_precision("the the the", "the cat", 1), (1, 3));
}

#[test]
fn identical_texts_score_one() {
    for text in ["hello", "The cat sat on the mat .", "a b c d e f g"] {
        assert_eq!(bleu(text, text), 1.0, "{text}");
        assert_eq!(rouge_n(text, text, 1), 1.0);
        assert_eq!(rouge_n(text, text, 2), 1.0);
        assert_eq!(rouge_l(text, text), 1.0);
        assert_eq!(token_f1(text, text), 1.0);
        assert_eq!(exact_match(text, text), 1.0);
    }
}

#[test]
fn disjoint_texts_score_near_zero() {
    let a = "one two three four five six seven eight nine ten";
    let b = "red green blue cyan pink gray teal navy gold lime";
    assert!(bleu(a, b) < 0.05);
    assert_eq!(rouge_n(a, b, 1), 0.0);
    assert_eq!(rouge_l(a, b), 0.0);
    assert_eq!(token_f1(a, b), 0.0);
}
