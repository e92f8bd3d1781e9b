//! Emotion anchors and the emotion coordinate space.
//!
//! An anchor is the centroid of the embedded words of one emotion lexicon. A
//! text is mapped to coordinates by taking the cosine between its embedding
//! and every anchor, and the emotion reward is the cosine between the
//! coordinate vectors of a generated and a reference caption.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, Embedder, SemanticVector};
use crate::error::{Error, Result};
use crate::formats;

/// Anchors whose centroid norm falls below this are rejected as degenerate.
pub const MIN_ANCHOR_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmotionLexicon {
    pub name: String,
    pub words: Vec<String>,
}

impl EmotionLexicon {
    pub fn new(name: impl Into<String>, words: Vec<String>) -> Result<Self> {
        let lex = Self {
            name: name.into(),
            words,
        };
        lex.validate()?;
        Ok(lex)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |message: String| Error::Lexicon {
            emotion: self.name.clone(),
            message,
        };
        if self.name.is_empty() || self.name.contains(['\t', '\n', '\r']) {
            return Err(err(
                "emotion name must be non-empty without tabs or newlines".into(),
            ));
        }
        if self.words.is_empty() {
            return Err(err("word list is empty".into()));
        }
        let mut seen = HashSet::new();
        for w in &self.words {
            if !seen.insert(w.as_str()) {
                return Err(err(format!("duplicate word {w:?}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LexiconFile {
    format: String,
    lexicons: Vec<EmotionLexicon>,
}

/// Read a lexicon file: `{"format": "emocap-lexicons/1", "lexicons": [{"name", "words"}, ...]}`.
/// Order of lexicons and of words is preserved.
pub fn load_lexicons(path: &Path) -> Result<Vec<EmotionLexicon>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: LexiconFile =
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
    if file.format != formats::LEXICONS {
        return Err(Error::parse(
            path,
            1,
            format!(
                "expected format {:?}, got {:?}",
                formats::LEXICONS,
                file.format
            ),
        ));
    }
    for lex in &file.lexicons {
        lex.validate()?;
    }
    Ok(file.lexicons)
}

pub fn lexicons_to_string(lexicons: &[EmotionLexicon]) -> String {
    let file = LexiconFile {
        format: formats::LEXICONS.to_string(),
        lexicons: lexicons.to_vec(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("lexicons serialize");
    s.push('\n');
    s
}

/// Centroid of the embedded lexicon words, summed in lexicon order.
pub fn build_anchor(lexicon: &EmotionLexicon, embedder: &Embedder) -> Result<SemanticVector> {
    lexicon.validate()?;
    let mut vectors = Vec::with_capacity(lexicon.words.len());
    for word in &lexicon.words {
        let v = embedder.embed_text(word)?;
        if v.is_zero() {
            return Err(Error::Lexicon {
                emotion: lexicon.name.clone(),
                message: format!("word {word:?} embeds to the zero vector"),
            });
        }
        vectors.push(v);
    }
    let anchor = SemanticVector::mean(embedder.dim(), &vectors);
    if anchor.norm() < MIN_ANCHOR_NORM {
        return Err(Error::Lexicon {
            emotion: lexicon.name.clone(),
            message: "degenerate anchor: centroid has (near-)zero norm".into(),
        });
    }
    Ok(anchor)
}

/// Coordinates of one text: one cosine per anchor, in anchor order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmotionCoordinates(Vec<f64>);

impl EmotionCoordinates {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Labeled anchors tied to the embedder they were built with.
#[derive(Debug, Clone, PartialEq)]
pub struct EmotionAnchorSet {
    labels: Vec<String>,
    anchors: Vec<SemanticVector>,
    fingerprint: String,
}

impl EmotionAnchorSet {
    pub fn build(lexicons: &[EmotionLexicon], embedder: &Embedder) -> Result<Self> {
        let anchors = lexicons
            .iter()
            .map(|lex| build_anchor(lex, embedder))
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(
            lexicons.iter().map(|l| l.name.clone()).collect(),
            anchors,
            embedder.fingerprint().to_string(),
        )
    }

    pub fn from_parts(
        labels: Vec<String>,
        anchors: Vec<SemanticVector>,
        fingerprint: String,
    ) -> Result<Self> {
        if labels.len() != anchors.len() {
            return Err(Error::Config(format!(
                "{} labels for {} anchors",
                labels.len(),
                anchors.len()
            )));
        }
        if labels.len() < 2 {
            return Err(Error::Config(format!(
                "need at least 2 emotion anchors, got {}",
                labels.len()
            )));
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(Error::Config(format!("duplicate emotion label {l:?}")));
            }
        }
        let dim = anchors[0].dim();
        for (label, a) in labels.iter().zip(&anchors) {
            if a.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: a.dim(),
                });
            }
            if a.norm() < MIN_ANCHOR_NORM {
                return Err(Error::Lexicon {
                    emotion: label.clone(),
                    message: "anchor has zero norm".into(),
                });
            }
        }
        Ok(Self {
            labels,
            anchors,
            fingerprint,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.anchors[0].dim()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn anchors(&self) -> &[SemanticVector] {
        &self.anchors
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Reorder anchors; `order[k]` is the old index placed at position `k`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            labels: order.iter().map(|&i| self.labels[i].clone()).collect(),
            anchors: order.iter().map(|&i| self.anchors[i].clone()).collect(),
            fingerprint: self.fingerprint.clone(),
        }
    }

    /// Error unless the set was built under `embedder`.
    pub fn check_embedder(&self, embedder: &Embedder) -> Result<()> {
        if self.fingerprint != embedder.fingerprint() {
            return Err(Error::FingerprintMismatch {
                expected: self.fingerprint.clone(),
                actual: embedder.fingerprint().to_string(),
            });
        }
        Ok(())
    }

    pub fn project(&self, t: &SemanticVector) -> Result<EmotionCoordinates> {
        project(t, self)
    }

    pub fn coordinates_of(&self, text: &str, embedder: &Embedder) -> Result<EmotionCoordinates> {
        project(&embedder.embed_text(text)?, self)
    }

    /// Snapshot text: a header line then one `<label>\t<floats>` row per anchor.
    pub fn to_snapshot_string(&self) -> String {
        let mut s = format!(
            "{} n={} D={} fingerprint={}\n",
            formats::ANCHORS,
            self.len(),
            self.dim(),
            self.fingerprint
        );
        for (label, a) in self.labels.iter().zip(&self.anchors) {
            s.push_str(label);
            s.push('\t');
            for (i, x) in a.components().iter().enumerate() {
                if i > 0 {
                    s.push(' ');
                }
                write!(s, "{x:?}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_snapshot_string()).map_err(|e| Error::io(path, e))
    }

    /// Load a snapshot without checking which embedder built it.
    pub fn load_unchecked(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_snapshot(&text, path)
    }

    /// Load a snapshot and refuse it unless it was built under `embedder`.
    pub fn load(path: &Path, embedder: &Embedder) -> Result<Self> {
        let set = Self::load_unchecked(path)?;
        set.check_embedder(embedder)?;
        if set.dim() != embedder.dim() {
            return Err(Error::DimensionMismatch {
                expected: embedder.dim(),
                actual: set.dim(),
            });
        }
        Ok(set)
    }

    pub fn parse_snapshot(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(origin, 1, "empty anchor snapshot"))?;
        let mut fields = header.split(' ');
        if fields.next() != Some(formats::ANCHORS) {
            return Err(Error::parse(
                origin,
                1,
                format!("malformed header {header:?}"),
            ));
        }
        let mut n = None;
        let mut dim = None;
        let mut fingerprint = None;
        for f in fields {
            match f.split_once('=') {
                Some(("n", v)) => n = v.parse::<usize>().ok(),
                Some(("D", v)) => dim = v.parse::<usize>().ok(),
                Some(("fingerprint", v)) => fingerprint = Some(v.to_string()),
                _ => return Err(Error::parse(origin, 1, format!("bad header field {f:?}"))),
            }
        }
        let (n, dim, fingerprint) = match (n, dim, fingerprint) {
            (Some(n), Some(d), Some(f)) => (n, d, f),
            _ => return Err(Error::parse(origin, 1, "header needs n, D and fingerprint")),
        };

        let mut labels = Vec::with_capacity(n);
        let mut anchors = Vec::with_capacity(n);
        for (lineno, line) in lines {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (label, values) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(origin, lineno, "expected `<label>\\t<values>`"))?;
            let comps = values
                .split_whitespace()
                .map(|v| v.parse::<f64>().ok().filter(|x| x.is_finite()))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| Error::parse(origin, lineno, "bad or non-finite float"))?;
            if comps.len() != dim {
                return Err(Error::parse(
                    origin,
                    lineno,
                    format!("row has {} values, header says D={dim}", comps.len()),
                ));
            }
            labels.push(label.to_string());
            anchors.push(SemanticVector::new(comps).expect("finite"));
        }
        if labels.len() != n {
            return Err(Error::parse(
                origin,
                text.lines().count(),
                format!("header says n={n}, found {} rows", labels.len()),
            ));
        }
        Self::from_parts(labels, anchors, fingerprint)
    }
}

/// `(c_T)_i = t . a_i / (|t| |a_i|)` for each anchor in order.
pub fn project(t: &SemanticVector, anchors: &EmotionAnchorSet) -> Result<EmotionCoordinates> {
    if t.dim() != anchors.dim() {
        return Err(Error::DimensionMismatch {
            expected: anchors.dim(),
            actual: t.dim(),
        });
    }
    let t_norm = t.norm();
    if t_norm == 0.0 {
        return Err(Error::UndefinedProjection);
    }
    let coords = anchors
        .anchors()
        .iter()
        .map(|a| (t.dot(a) / (t_norm * a.norm())).clamp(-1.0, 1.0))
        .collect();
    Ok(EmotionCoordinates(coords))
}

/// Cosine between two coordinate vectors.
pub fn coordinate_similarity(a: &EmotionCoordinates, b: &EmotionCoordinates) -> Result<f64> {
    cosine(a.values(), b.values())
        .ok_or(Error::UndefinedReward("emotion coordinates have zero norm"))
}

/// Emotion reward of a generated caption against a reference.
pub fn emotion_reward(
    generated: &str,
    reference: &str,
    anchors: &EmotionAnchorSet,
    embedder: &Embedder,
) -> Result<f64> {
    let undefined = |e: Error| match e {
        Error::UndefinedProjection => Error::UndefinedReward("caption has no tokens"),
        other => other,
    };
    let g = anchors
        .coordinates_of(generated, embedder)
        .map_err(undefined)?;
    let r = anchors
        .coordinates_of(reference, embedder)
        .map_err(undefined)?;
    coordinate_similarity(&g, &r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::EmbeddingTable;
    use std::path::PathBuf;

    fn sv(xs: &[f64]) -> SemanticVector {
        SemanticVector::new(xs.to_vec()).unwrap()
    }

    fn words(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn unit_axes() -> EmotionAnchorSet {
        EmotionAnchorSet::from_parts(
            words(&["a", "b"]),
            vec![sv(&[1.0, 0.0]), sv(&[0.0, 1.0])],
            "fp".into(),
        )
        .unwrap()
    }

    #[test]
    fn lexicon_validation() {
        assert!(EmotionLexicon::new("x", vec![]).is_err());
        assert!(EmotionLexicon::new("x", words(&["a", "a"])).is_err());
        assert!(EmotionLexicon::new("x", words(&["a", "b"])).is_ok());
    }

    #[test]
    fn single_word_anchor_is_the_word() {
        let e = Embedder::hashed(16, 3).unwrap();
        let lex = EmotionLexicon::new("joy", words(&["cheerful"])).unwrap();
        assert_eq!(
            build_anchor(&lex, &e).unwrap(),
            e.embed_text("cheerful").unwrap()
        );
    }

    #[test]
    fn two_axis_centroid() {
        let table = EmbeddingTable::parse("D=2\nx\t1 0\ny\t0 1\n", &PathBuf::from("t")).unwrap();
        let e = Embedder::with_table(Default::default(), Some(table)).unwrap();
        let lex = EmotionLexicon::new("mix", words(&["x", "y"])).unwrap();
        assert_eq!(build_anchor(&lex, &e).unwrap().components(), &[0.5, 0.5]);
    }

    #[test]
    fn zero_word_and_degenerate_anchor_rejected() {
        let e = Embedder::hashed(8, 3).unwrap();
        let lex = EmotionLexicon::new("odd", words(&["fine", "..."])).unwrap();
        let err = build_anchor(&lex, &e).unwrap_err();
        assert!(err.to_string().contains("\"...\""), "{err}");

        let table =
            EmbeddingTable::parse("D=2\nup\t1 0\ndown\t-1 0\n", &PathBuf::from("t")).unwrap();
        let e = Embedder::with_table(Default::default(), Some(table)).unwrap();
        let lex = EmotionLexicon::new("flat", words(&["up", "down"])).unwrap();
        assert!(matches!(build_anchor(&lex, &e), Err(Error::Lexicon { .. })));
    }

    #[test]
    fn projection_examples() {
        let set = unit_axes();
        assert_eq!(
            project(&sv(&[1.0, 0.0]), &set).unwrap().values(),
            &[1.0, 0.0]
        );
        assert_eq!(
            project(&sv(&[2.0, 0.0]), &set).unwrap(),
            project(&sv(&[1.0, 0.0]), &set).unwrap()
        );
        assert!(matches!(
            project(&SemanticVector::zeros(2), &set),
            Err(Error::UndefinedProjection)
        ));
    }

    #[test]
    fn orthogonal_coordinates_give_zero() {
        let a = EmotionCoordinates(vec![1.0, 0.0]);
        let b = EmotionCoordinates(vec![0.0, 1.0]);
        assert_eq!(coordinate_similarity(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn self_reward_is_one_and_empty_is_undefined() {
        let e = Embedder::hashed(32, 9).unwrap();
        let lexicons = vec![
            EmotionLexicon::new("angry", words(&["loud", "harsh", "forceful"])).unwrap(),
            EmotionLexicon::new("calm", words(&["steady", "soft", "relaxed"])).unwrap(),
        ];
        let set = EmotionAnchorSet::build(&lexicons, &e).unwrap();
        let r = emotion_reward("a loud harsh voice", "a loud harsh voice", &set, &e).unwrap();
        assert!((r - 1.0).abs() < 1e-9);
        assert!(matches!(
            emotion_reward("", "calm", &set, &e),
            Err(Error::UndefinedReward(_))
        ));
    }

    #[test]
    fn needs_two_anchors() {
        let e = Embedder::hashed(8, 1).unwrap();
        let one = vec![EmotionLexicon::new("only", words(&["x"])).unwrap()];
        assert!(EmotionAnchorSet::build(&one, &e).is_err());
    }

    #[test]
    fn snapshot_round_trip_and_fingerprint_check() {
        let e = Embedder::hashed(16, 4).unwrap();
        let lexicons = vec![
            EmotionLexicon::new("happy", words(&["bright", "cheerful"])).unwrap(),
            EmotionLexicon::new("sad", words(&["low", "slow", "heavy"])).unwrap(),
        ];
        let set = EmotionAnchorSet::build(&lexicons, &e).unwrap();
        let text = set.to_snapshot_string();
        let back = EmotionAnchorSet::parse_snapshot(&text, Path::new("s")).unwrap();
        assert_eq!(back, set);
        assert_eq!(back.to_snapshot_string(), text);

        let other = Embedder::hashed(16, 5).unwrap();
        assert!(back.check_embedder(&e).is_ok());
        match back.check_embedder(&other) {
            Err(Error::FingerprintMismatch { expected, actual }) => {
                assert_eq!(expected, e.fingerprint());
                assert_eq!(actual, other.fingerprint());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn snapshot_row_count_checked() {
        let text = format!(
            "{} n=3 D=2 fingerprint=x\na\t1 0\nb\t0 1\n",
            formats::ANCHORS
        );
        assert!(matches!(
            EmotionAnchorSet::parse_snapshot(&text, Path::new("s")),
            Err(Error::Parse { .. })
        ));
    }
}
