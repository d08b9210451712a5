use taco_core::corpus::{
    chunk, detokenize, heuristic_labels, parse_dataset, split_tokens, tokenize, Task, TokenSequence,
    Vocabulary,
};
use taco_core::Error;

// Count produced by tests/oracles/tokenizer.py for the same file.
const WORDS_1200: &str = include_str!("fixtures/words_1200.txt");
const REFERENCE_TOKEN_COUNT: usize = 2215;

#[test]
fn tokenizer_matches_reference_splitter() {
    assert_eq!(WORDS_1200.split_whitespace().count(), 1200);
    assert_eq!(split_tokens(WORDS_1200).len(), REFERENCE_TOKEN_COUNT);
}

#[test]
fn tokenize_round_trips_known_words() {
    let vocab = Vocabulary::build([WORDS_1200]);
    let seq = tokenize(WORDS_1200, &vocab).unwrap();
    assert_eq!(seq.len(), REFERENCE_TOKEN_COUNT);
    assert!(seq.ids().iter().all(|&id| id != vocab.unk_id()));
    let again = tokenize(&detokenize(&seq), &vocab).unwrap();
    assert_eq!(again.ids(), seq.ids());
}

#[test]
fn unknown_words_map_to_unk() {
    let vocab = Vocabulary::build(["river bank"]);
    let seq = tokenize("river delta", &vocab).unwrap();
    assert_eq!(seq.ids()[1], vocab.unk_id());
    assert!(matches!(tokenize("  \n", &vocab), Err(Error::EmptyInput)));
}

#[test]
fn chunk_lengths() {
    let seq = TokenSequence::from_ids(vec![0; 1030]).unwrap();
    let lens: Vec<usize> = chunk(&seq, 512).iter().map(TokenSequence::len).collect();
    assert_eq!(lens, [512, 512, 6]);
    let short = TokenSequence::from_ids(vec![0; 100]).unwrap();
    assert_eq!(chunk(&short, 512).len(), 1);
}

#[test]
fn heuristic_labels_mark_content_words() {
    let vocab = Vocabulary::build(["The council approved the budget ."]);
    let seq = tokenize("The council approved the budget .", &vocab).unwrap();
    assert_eq!(heuristic_labels(&seq), [0, 1, 1, 0, 1, 0]);
}

#[test]
fn dataset_parses_both_tasks() {
    let raw = concat!(
        r#"{"id":"a","context":"Some text .","task":"summarization","reference":"Text ."}"#,
        "\n",
        r#"{"id":"b","context":"Paris is in France .","question":"Where is Paris ?","task":"qa"}"#,
        "\n"
    );
    let samples = parse_dataset(raw).unwrap();
    assert_eq!(samples.len(), 2);
    assert_eq!(samples[0].task, Task::Summarization);
    assert_eq!(samples[1].question.as_deref(), Some("Where is Paris ?"));
}

#[test]
fn dataset_errors_carry_line_numbers() {
    let good = r#"{"id":"a","context":"x","task":"summarization"}"#;
    let cases = [
        (format!("{good}\nnot json"), 2, true),
        (format!("{good}\n{{\"id\":\"b\",\"task\":\"qa\",\"context\":\"x\"}}"), 2, false),
        (format!("{good}\n{good}"), 2, false),
        ("{\"id\":\"a\",\"context\":\"x\",\"task\":\"poetry\"}".to_string(), 1, false),
        ("{\"id\":\"a\",\"task\":\"qa\"}".to_string(), 1, false),
        ("[1,2]".to_string(), 1, false),
    ];
    for (raw, want_line, is_parse) in cases {
        match parse_dataset(&raw) {
            Err(Error::Parse { line, .. }) if is_parse => assert_eq!(line, want_line, "{raw}"),
            Err(Error::Schema { line, .. }) if !is_parse => assert_eq!(line, want_line, "{raw}"),
            other => panic!("unexpected {other:?} for {raw}"),
        }
    }
}
