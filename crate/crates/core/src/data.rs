//! Dataset files, split manifests and the synthetic emotion-caption corpus.
//!
//! The synthetic generator expands `emotions x speaker attributes x templates x
//! samples_per_combination`, filling template slots with seeded draws. Context
//! ids enumerate `(emotion, speaker attribute)` pairs, emotion-major.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::emotion_space::{lexicons_to_string, EmotionLexicon};
use crate::error::{Error, Result};
use crate::formats;
use crate::rng::{derive_seed, SplitMix64, Stream};
use crate::textproc::tokenize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptionSample {
    pub id: String,
    pub context_id: usize,
    pub emotion_label: String,
    pub reference_caption: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
}

pub fn dataset_to_string(samples: &[CaptionSample]) -> String {
    let mut out = serde_json::to_string(&Header {
        format: formats::DATASET.into(),
    })
    .unwrap();
    out.push('\n');
    for s in samples {
        out.push_str(&serde_json::to_string(s).expect("sample serializes"));
        out.push('\n');
    }
    out
}

pub fn write_dataset(path: &Path, samples: &[CaptionSample]) -> Result<()> {
    std::fs::write(path, dataset_to_string(samples)).map_err(|e| Error::io(path, e))
}

/// Read a dataset file. An empty file is an empty dataset. When `labels` is
/// given, every record's emotion label must be one of them.
pub fn load_dataset(path: &Path, labels: Option<&[String]>) -> Result<Vec<CaptionSample>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, path, labels)
}

pub fn parse_dataset(
    text: &str,
    origin: &Path,
    labels: Option<&[String]>,
) -> Result<Vec<CaptionSample>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());
    let Some((hline, header)) = lines.next() else {
        return Ok(Vec::new());
    };
    match serde_json::from_str::<Header>(header) {
        Ok(h) if h.format == formats::DATASET => {}
        _ => {
            return Err(Error::parse(
                origin,
                hline,
                format!("expected header {{\"format\":\"{}\"}}", formats::DATASET),
            ))
        }
    }
    let known: Option<HashSet<&str>> = labels.map(|ls| ls.iter().map(String::as_str).collect());
    let mut ids = HashSet::new();
    let mut out = Vec::new();
    for (lineno, line) in lines {
        let s: CaptionSample = serde_json::from_str(line)
            .map_err(|e| Error::parse(origin, lineno, format!("malformed record: {e}")))?;
        if tokenize(&s.reference_caption).is_empty() {
            return Err(Error::parse(
                origin,
                lineno,
                format!("sample {:?} has an empty caption", s.id),
            ));
        }
        if let Some(k) = &known {
            if !k.contains(s.emotion_label.as_str()) {
                return Err(Error::parse(
                    origin,
                    lineno,
                    format!("unknown emotion label {:?}", s.emotion_label),
                ));
            }
        }
        if !ids.insert(s.id.clone()) {
            return Err(Error::parse(
                origin,
                lineno,
                format!("duplicate id {:?}", s.id),
            ));
        }
        out.push(s);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct SplitFile {
    format: String,
    #[serde(flatten)]
    split: Split,
}

impl Split {
    /// Dev and test each get `round(n / 10)` (halves rounded up); the rest is train.
    pub fn sizes(n: usize) -> (usize, usize, usize) {
        let tenth = (n + 5) / 10;
        (n - 2 * tenth, tenth, tenth)
    }

    /// Seeded shuffle, then test, dev and train are cut in that order. Ids
    /// inside each split keep dataset order.
    pub fn seeded(samples: &[CaptionSample], seed: u64) -> Self {
        let n = samples.len();
        let mut order: Vec<usize> = (0..n).collect();
        SplitMix64::new(derive_seed(seed, Stream::SynthSplit, &[])).shuffle(&mut order);
        let (_, n_dev, n_test) = Self::sizes(n);
        let mut test: Vec<usize> = order[..n_test].to_vec();
        let mut dev: Vec<usize> = order[n_test..n_test + n_dev].to_vec();
        let mut train: Vec<usize> = order[n_test + n_dev..].to_vec();
        for part in [&mut test, &mut dev, &mut train] {
            part.sort_unstable();
        }
        let ids = |v: Vec<usize>| v.into_iter().map(|i| samples[i].id.clone()).collect();
        Split {
            train: ids(train),
            dev: ids(dev),
            test: ids(test),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&SplitFile {
            format: formats::SPLIT.into(),
            split: self.clone(),
        })
        .unwrap();
        s.push('\n');
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let f: SplitFile =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
        if f.format != formats::SPLIT {
            return Err(Error::parse(
                path,
                1,
                format!("unexpected format {:?}", f.format),
            ));
        }
        Ok(f.split)
    }

    /// Samples whose ids are listed in `ids`, in dataset order.
    pub fn select(samples: &[CaptionSample], ids: &[String]) -> Result<Vec<CaptionSample>> {
        let wanted: HashSet<&str> = ids.iter().map(String::as_str).collect();
        let picked: Vec<CaptionSample> = samples
            .iter()
            .filter(|s| wanted.contains(s.id.as_str()))
            .cloned()
            .collect();
        if picked.len() != wanted.len() {
            return Err(Error::Config(format!(
                "split lists {} ids but only {} are in the dataset",
                wanted.len(),
                picked.len()
            )));
        }
        Ok(picked)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeakerAttr {
    pub name: String,
    #[serde(default)]
    pub slots: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmotionSpec {
    pub label: String,
    /// Words indicative of the emotion; emitted as its anchor lexicon.
    pub lexicon: Vec<String>,
    #[serde(default)]
    pub slots: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub format: String,
    pub seed: u64,
    pub samples_per_combination: usize,
    pub emotions: Vec<EmotionSpec>,
    pub speaker_attrs: Vec<SpeakerAttr>,
    /// Captions with `{slot}` placeholders.
    pub templates: Vec<String>,
    /// Slots shared by every emotion and speaker.
    #[serde(default)]
    pub slots: BTreeMap<String, Vec<String>>,
}

static DEFAULT_SPEC: &str = include_str!("../data/default_synth.json");

/// Placeholders in a template, in order.
fn template_slots(template: &str) -> Result<Vec<String>> {
    let mut slots = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let close = after
            .find('}')
            .ok_or_else(|| Error::Spec(format!("unclosed '{{' in template {template:?}")))?;
        slots.push(after[..close].to_string());
        rest = &after[close + 1..];
    }
    Ok(slots)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub samples: Vec<CaptionSample>,
    pub lexicons: Vec<EmotionLexicon>,
    pub split: Split,
}

impl SynthOutput {
    /// Writes `dataset.jsonl`, `lexicons.json` and `split.json` into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_dataset(&dir.join("dataset.jsonl"), &self.samples)?;
        let lex = dir.join("lexicons.json");
        std::fs::write(&lex, lexicons_to_string(&self.lexicons)).map_err(|e| Error::io(&lex, e))?;
        let split = dir.join("split.json");
        std::fs::write(&split, self.split.to_json()).map_err(|e| Error::io(&split, e))
    }

    pub fn train(&self) -> Vec<CaptionSample> {
        Split::select(&self.samples, &self.split.train).expect("split ids come from samples")
    }

    pub fn dev(&self) -> Vec<CaptionSample> {
        Split::select(&self.samples, &self.split.dev).expect("split ids come from samples")
    }

    pub fn test(&self) -> Vec<CaptionSample> {
        Split::select(&self.samples, &self.split.test).expect("split ids come from samples")
    }
}

impl SynthSpec {
    /// The bundled six-emotion spec.
    pub fn default_spec() -> Self {
        serde_json::from_str(DEFAULT_SPEC).expect("bundled spec parses")
    }

    pub fn default_spec_json() -> &'static str {
        DEFAULT_SPEC
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
    }

    /// Number of context ids the corpus uses.
    pub fn contexts(&self) -> usize {
        self.emotions.len() * self.speaker_attrs.len()
    }

    pub fn labels(&self) -> Vec<String> {
        self.emotions.iter().map(|e| e.label.clone()).collect()
    }

    fn resolve<'a>(
        &'a self,
        slot: &str,
        e: &'a EmotionSpec,
        a: &'a SpeakerAttr,
    ) -> Option<&'a [String]> {
        e.slots
            .get(slot)
            .or_else(|| a.slots.get(slot))
            .or_else(|| self.slots.get(slot))
            .map(Vec::as_slice)
            .filter(|v| !v.is_empty())
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != formats::SYNTH_SPEC {
            return Err(Error::Spec(format!("unexpected format {:?}", self.format)));
        }
        if self.emotions.len() < 2 {
            return Err(Error::Spec(format!(
                "need at least 2 emotions, got {}",
                self.emotions.len()
            )));
        }
        if self.speaker_attrs.is_empty() || self.templates.is_empty() {
            return Err(Error::Spec(
                "need at least one speaker attribute and template".into(),
            ));
        }
        if self.samples_per_combination == 0 {
            return Err(Error::Spec(
                "samples_per_combination must be positive".into(),
            ));
        }
        let mut labels = HashSet::new();
        for e in &self.emotions {
            if !labels.insert(e.label.as_str()) {
                return Err(Error::Spec(format!("duplicate emotion {:?}", e.label)));
            }
            EmotionLexicon::new(e.label.clone(), e.lexicon.clone())?;
        }
        for t in &self.templates {
            let slots = template_slots(t)?;
            for e in &self.emotions {
                for a in &self.speaker_attrs {
                    for s in &slots {
                        if self.resolve(s, e, a).is_none() {
                            return Err(Error::Spec(format!(
                                "slot {{{s}}} in template {t:?} has no values for emotion {:?} / speaker {:?}",
                                e.label, a.name
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<SynthOutput> {
        self.validate()?;
        let mut samples = Vec::new();
        let n_attrs = self.speaker_attrs.len();
        for (ei, e) in self.emotions.iter().enumerate() {
            for (ai, a) in self.speaker_attrs.iter().enumerate() {
                for (ti, t) in self.templates.iter().enumerate() {
                    for k in 0..self.samples_per_combination {
                        let mut rng = SplitMix64::new(derive_seed(
                            self.seed,
                            Stream::SynthSlots,
                            &[ei as u64, ai as u64, ti as u64, k as u64],
                        ));
                        let caption = self.fill(t, e, a, &mut rng)?;
                        samples.push(CaptionSample {
                            id: format!("syn-{:05}", samples.len()),
                            context_id: ei * n_attrs + ai,
                            emotion_label: e.label.clone(),
                            reference_caption: caption,
                        });
                    }
                }
            }
        }
        let lexicons = self
            .emotions
            .iter()
            .map(|e| EmotionLexicon::new(e.label.clone(), e.lexicon.clone()))
            .collect::<Result<Vec<_>>>()?;
        let split = Split::seeded(&samples, self.seed);
        Ok(SynthOutput {
            samples,
            lexicons,
            split,
        })
    }

    fn fill(
        &self,
        template: &str,
        e: &EmotionSpec,
        a: &SpeakerAttr,
        rng: &mut SplitMix64,
    ) -> Result<String> {
        let mut out = String::with_capacity(template.len() * 2);
        let mut rest = template;
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            let close = after
                .find('}')
                .ok_or_else(|| Error::Spec(format!("unclosed '{{' in template {template:?}")))?;
            let slot = &after[..close];
            let values = self.resolve(slot, e, a).ok_or_else(|| {
                Error::Spec(format!(
                    "slot {{{slot}}} unresolvable in template {template:?}"
                ))
            })?;
            out.push_str(&values[rng.below(values.len())]);
            rest = &after[close + 1..];
        }
        out.push_str(rest);
        Ok(out)
    }
}
