//! Shared fixtures for the benchmarks in `benches/`.

use emocap_core::data::SynthOutput;
use emocap_core::textproc::tokenize;
use emocap_core::{
    Embedder, EmotionAnchorSet, GrpoConfig, PolicyParams, RewardModel, RewardWeights, SftConfig,
    SynthSpec, TokenSequence,
};

pub struct Fixture {
    pub synth: SynthOutput,
    pub model: RewardModel,
    pub initial: PolicyParams,
}

impl Fixture {
    /// Bundled synthetic corpus, hashed anchors in `dim` dimensions, and a
    /// uniform policy over the corpus vocabulary.
    pub fn bundled(dim: usize) -> Self {
        let spec = SynthSpec::default_spec();
        let synth = spec.generate().expect("bundled spec generates");
        let emb = Embedder::hashed(dim, 7).expect("hashed embedder");
        let anchors = EmotionAnchorSet::build(&synth.lexicons, &emb).expect("anchors");
        let model = RewardModel::new(anchors, emb, RewardWeights::default()).expect("reward model");
        let toks: Vec<TokenSequence> = synth
            .samples
            .iter()
            .map(|s| tokenize(&s.reference_caption))
            .collect();
        let initial = PolicyParams::for_corpus(toks.iter(), spec.contexts()).expect("policy");
        Fixture {
            synth,
            model,
            initial,
        }
    }

    pub fn sft_config(epochs: usize) -> SftConfig {
        SftConfig {
            learning_rate: 1.0,
            epochs,
            seed: 7,
            ..SftConfig::default()
        }
    }

    pub fn grpo_config(steps: usize) -> GrpoConfig {
        GrpoConfig {
            learning_rate: 5.0,
            steps,
            seed: 7,
            ..GrpoConfig::default()
        }
    }
}
