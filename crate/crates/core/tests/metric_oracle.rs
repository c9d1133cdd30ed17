//! Corpus metrics compared against values produced by sacrebleu 2.6.0 on the
//! same fixture files.

use termweave_core::eval::{chrf_pp, corpus_bleu, BleuConfig, ChrfAveraging, ChrfConfig, Smoothing, Tokenizer};

fn lines(name: &str) -> Vec<String> {
    let path = format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

fn fixture() -> (Vec<String>, Vec<String>) {
    let (h, r) = (lines("metric_hyps.txt"), lines("metric_refs.txt"));
    assert_eq!(h.len(), 20);
    assert_eq!(r.len(), 20);
    (h, r)
}

fn bleu(h: &[String], r: &[String], cfg: BleuConfig) -> f64 {
    corpus_bleu(h, r, &cfg).unwrap().value
}

fn close(got: f64, want: f64) {
    assert!((got - want).abs() < 1e-9, "got {got}, want {want}");
}

#[test]
fn bleu_matches_reference_tool() {
    let (h, r) = fixture();
    close(bleu(&h, &r, BleuConfig::default()), 47.21307420287183);
    close(
        bleu(&h, &r, BleuConfig { smoothing: Smoothing::Exp, ..Default::default() }),
        47.21307420287183,
    );
    close(
        bleu(&h, &r, BleuConfig { smoothing: Smoothing::AddK { k: 1.0 }, ..Default::default() }),
        47.5471590435982,
    );
    close(
        bleu(&h, &r, BleuConfig { tokenizer: Tokenizer::Whitespace, ..Default::default() }),
        43.48579475998753,
    );
    close(bleu(&h, &r, BleuConfig { lowercase: true, ..Default::default() }), 49.61134453535106);
}

#[test]
fn bleu_smoothing_variants() {
    let h = vec!["the cat sat on a rug".to_string(), "dogs run".to_string()];
    let r = vec!["the cat sat quietly on the mat".to_string(), "dogs run fast today".to_string()];
    close(bleu(&h, &r, BleuConfig::default()), 0.0);
    close(bleu(&h, &r, BleuConfig { smoothing: Smoothing::Exp, ..Default::default() }), 24.299345483495408);
    close(
        bleu(&h, &r, BleuConfig { smoothing: Smoothing::Floor { value: 0.1 }, ..Default::default() }),
        16.249951709360158,
    );
    close(
        bleu(&h, &r, BleuConfig { smoothing: Smoothing::AddK { k: 1.0 }, ..Default::default() }),
        31.271259461293592,
    );
}

#[test]
fn chrf_matches_reference_tool() {
    let (h, r) = fixture();
    close(chrf_pp(&h, &r, &ChrfConfig::default()).unwrap().value, 74.06554016787743);
    let eps = ChrfConfig {
        averaging: ChrfAveraging::FScores,
        ..Default::default()
    };
    close(chrf_pp(&h, &r, &eps).unwrap().value, 74.06546558722641);
    let plain = ChrfConfig {
        word_order: 0,
        ..Default::default()
    };
    let s = chrf_pp(&h, &r, &plain).unwrap();
    assert_eq!(s.name, "chrf");
    close(s.value, 76.65903329960038);
}
