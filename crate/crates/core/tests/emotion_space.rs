mod common;

use common::*;
use emocap_core::emotion_space::build_anchor;
use emocap_core::{Embedder, EmotionAnchorSet, EmotionLexicon, Error};

#[test]
fn emotion_space_properties() {
    assert_ok(emotion_space_suite());
}

#[test]
fn hundred_word_lexicon_matches_mean_oracle() {
    let emb = Embedder::hashed(48, 2).unwrap();
    let words: Vec<String> = (0..100).map(|i| format!("word{i}")).collect();
    let lex = EmotionLexicon::new("big", words.clone()).unwrap();
    let anchor = build_anchor(&lex, &emb).unwrap();
    let vecs: Vec<Vec<f64>> = words
        .iter()
        .map(|w| emb.embed_token(w).unwrap().components().to_vec())
        .collect();
    for d in 0..48 {
        let col: Vec<f64> = vecs.iter().map(|v| v[d]).collect();
        assert!((anchor.components()[d] - oracle::mean(&col)).abs() <= 1e-12);
    }
}

#[test]
fn snapshot_refused_under_other_seed() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("anchors.tsv");
    let a = Embedder::hashed(32, 1).unwrap();
    let b = Embedder::hashed(32, 2).unwrap();
    EmotionAnchorSet::build(&fixture_lexicons(), &a)
        .unwrap()
        .save(&path)
        .unwrap();
    assert!(EmotionAnchorSet::load(&path, &a).is_ok());
    match EmotionAnchorSet::load(&path, &b) {
        Err(Error::FingerprintMismatch { expected, actual }) => {
            assert_eq!(expected, a.fingerprint());
            assert_eq!(actual, b.fingerprint());
        }
        other => panic!("expected fingerprint mismatch, got {other:?}"),
    }
}
