//! Run configuration merged from flags, a TOML file and defaults, with the
//! source of every field recorded.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use emocap_core::{
    EmbedderBackend, EmbedderConfig, GrpoConfig, OovPolicy, RewardWeights, SftConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub embedder: EmbedderSection,
    pub reward: RewardSection,
    pub sft: SftSection,
    pub grpo: GrpoSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedderSection {
    pub backend: EmbedderBackend,
    pub dimension: usize,
    /// Falls back to the run seed when not set by a flag or the file.
    pub seed: u64,
    pub table: Option<PathBuf>,
    pub oov_policy: OovPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardSection {
    pub alpha: f64,
    pub beta: f64,
    pub emo_floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SftSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_accum: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrpoSection {
    pub group_size: usize,
    pub kl_coeff: f64,
    pub max_response_len: usize,
    pub temperature: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub grad_accum: usize,
    pub warmup_ratio: f64,
    pub clip_eps: f64,
    pub adv_epsilon: f64,
    pub max_grad_norm: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub samples_per_item: usize,
    pub temperature: f64,
    pub max_len: usize,
    /// `train`, `dev`, `test` or `all`.
    pub subset: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            out_dir: PathBuf::from("emocap-out"),
            embedder: EmbedderSection::default(),
            reward: RewardSection::default(),
            sft: SftSection::default(),
            grpo: GrpoSection::default(),
            eval: EvalSection::default(),
        }
    }
}

impl Default for EmbedderSection {
    fn default() -> Self {
        let c = EmbedderConfig::default();
        Self {
            backend: c.backend,
            dimension: c.dimension,
            seed: c.seed,
            table: None,
            oov_policy: c.oov_policy,
        }
    }
}

impl Default for RewardSection {
    fn default() -> Self {
        let w = RewardWeights::default();
        Self {
            alpha: w.alpha,
            beta: w.beta,
            emo_floor: w.emo_floor,
        }
    }
}

impl Default for SftSection {
    fn default() -> Self {
        let c = SftConfig::default();
        Self {
            learning_rate: c.learning_rate,
            epochs: c.epochs,
            batch_size: c.batch_size,
            grad_accum: c.grad_accum,
        }
    }
}

impl Default for GrpoSection {
    fn default() -> Self {
        let c = GrpoConfig::default();
        Self {
            group_size: c.group_size,
            kl_coeff: c.kl_coeff,
            max_response_len: c.max_response_len,
            temperature: c.temperature,
            learning_rate: c.learning_rate,
            batch_size: c.batch_size,
            grad_accum: c.grad_accum,
            warmup_ratio: c.warmup_ratio,
            clip_eps: c.clip_eps,
            adv_epsilon: c.adv_epsilon,
            max_grad_norm: c.max_grad_norm,
            steps: c.steps,
        }
    }
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            samples_per_item: 32,
            temperature: 1.0,
            max_len: 32,
            subset: "test".into(),
        }
    }
}

impl RunConfig {
    pub fn embedder_config(&self) -> EmbedderConfig {
        EmbedderConfig {
            dimension: self.embedder.dimension,
            seed: self.embedder.seed,
            backend: self.embedder.backend,
            table_path: self.embedder.table.clone(),
            oov_policy: self.embedder.oov_policy,
        }
    }

    pub fn weights(&self) -> Result<RewardWeights> {
        let r = &self.reward;
        Ok(RewardWeights::new(r.alpha, r.beta, r.emo_floor)?)
    }

    pub fn sft_config(&self) -> SftConfig {
        SftConfig {
            learning_rate: self.sft.learning_rate,
            epochs: self.sft.epochs,
            batch_size: self.sft.batch_size,
            grad_accum: self.sft.grad_accum,
            seed: self.seed,
        }
    }

    pub fn grpo_config(&self) -> GrpoConfig {
        let g = &self.grpo;
        GrpoConfig {
            group_size: g.group_size,
            kl_coeff: g.kl_coeff,
            max_response_len: g.max_response_len,
            temperature: g.temperature,
            learning_rate: g.learning_rate,
            batch_size: g.batch_size,
            grad_accum: g.grad_accum,
            warmup_ratio: g.warmup_ratio,
            clip_eps: g.clip_eps,
            adv_epsilon: g.adv_epsilon,
            max_grad_norm: g.max_grad_norm,
            steps: g.steps,
            seed: self.seed,
        }
    }
}

/// Flags mirroring every config field. Dotted names are the config keys.
#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct Overrides {
    /// Seed for every random stream of the run
    #[arg(long, global = true)]
    #[serde(rename = "seed", skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Directory receiving every output file
    #[arg(long, global = true)]
    #[serde(rename = "out_dir", skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true, value_parser = ["hashed", "table"])]
    #[serde(rename = "embedder.backend", skip_serializing_if = "Option::is_none")]
    pub embedder_backend: Option<String>,
    #[arg(long, global = true)]
    #[serde(rename = "embedder.dimension", skip_serializing_if = "Option::is_none")]
    pub embedder_dimension: Option<usize>,
    #[arg(long, global = true)]
    #[serde(rename = "embedder.seed", skip_serializing_if = "Option::is_none")]
    pub embedder_seed: Option<u64>,
    /// Embedding table file for the table backend
    #[arg(long, global = true)]
    #[serde(rename = "embedder.table", skip_serializing_if = "Option::is_none")]
    pub embedding_table: Option<PathBuf>,
    #[arg(long, global = true, value_parser = ["fallback_hashed", "error"])]
    #[serde(
        rename = "embedder.oov_policy",
        skip_serializing_if = "Option::is_none"
    )]
    pub oov_policy: Option<String>,
    #[arg(long, global = true)]
    #[serde(rename = "reward.alpha", skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[arg(long, global = true)]
    #[serde(rename = "reward.beta", skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[arg(long, global = true)]
    #[serde(rename = "reward.emo_floor", skip_serializing_if = "Option::is_none")]
    pub emo_floor: Option<f64>,
    #[arg(long, global = true)]
    #[serde(rename = "sft.learning_rate", skip_serializing_if = "Option::is_none")]
    pub sft_learning_rate: Option<f64>,
    #[arg(long, global = true)]
    #[serde(rename = "sft.epochs", skip_serializing_if = "Option::is_none")]
    pub sft_epochs: Option<usize>,
    #[arg(long, global = true)]
    #[serde(rename = "sft.batch_size", skip_serializing_if = "Option::is_none")]
    pub sft_batch_size: Option<usize>,
    #[arg(long, global = true)]
    #[serde(rename = "sft.grad_accum", skip_serializing_if = "Option::is_none")]
    pub sft_grad_accum: Option<usize>,
    #[arg(long, global = true)]
    #[serde(rename = "grpo.group_size", skip_serializing_if = "Option::is_none")]
    pub group_size: Option<usize>,
    #[arg(long, global = true)]
    #[serde(rename = "grpo.kl_coeff", skip_serializing_if = "Option::is_none")]
    pub kl_coeff: Option<f64>,
    #[arg(long, global = true)]
    #[serde(
        rename = "grpo.max_response_len",
        skip_serializing_if = "Option::is_none"
    )]
    pub max_response_len: Option<usize>,
    #[arg(long, global = true)]
    #[serde(rename = "grpo.temperature", skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[arg(long, global = true)]
    #[serde(rename = "grpo.learning_rate", skip_serializing_if = "Option::is_none")]
    pub grpo_learning_rate: Option<f64>,
    #[arg(long, global = true)]
    #[serde(rename = "grpo.batch_size", skip_serializing_if = "Option::is_none")]
    pub grpo_batch_size: Option<usize>,
    #[arg(long, global = true)]
    #[serde(rename = "grpo.grad_accum", skip_serializing_if = "Option::is_none")]
    pub grpo_grad_accum: Option<usize>,
    #[arg(long, global = true)]
    #[serde(rename = "grpo.warmup_ratio", skip_serializing_if = "Option::is_none")]
    pub warmup_ratio: Option<f64>,
    #[arg(long, global = true)]
    #[serde(rename = "grpo.clip_eps", skip_serializing_if = "Option::is_none")]
    pub clip_eps: Option<f64>,
    #[arg(long, global = true)]
    #[serde(rename = "grpo.adv_epsilon", skip_serializing_if = "Option::is_none")]
    pub adv_epsilon: Option<f64>,
    #[arg(long, global = true)]
    #[serde(rename = "grpo.max_grad_norm", skip_serializing_if = "Option::is_none")]
    pub max_grad_norm: Option<f64>,
    #[arg(long, global = true)]
    #[serde(rename = "grpo.steps", skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[arg(long, global = true)]
    #[serde(
        rename = "eval.samples_per_item",
        skip_serializing_if = "Option::is_none"
    )]
    pub eval_samples: Option<usize>,
    #[arg(long, global = true)]
    #[serde(rename = "eval.temperature", skip_serializing_if = "Option::is_none")]
    pub eval_temperature: Option<f64>,
    #[arg(long, global = true)]
    #[serde(rename = "eval.max_len", skip_serializing_if = "Option::is_none")]
    pub eval_max_len: Option<usize>,
    #[arg(long, global = true, value_parser = ["train", "dev", "test", "all"])]
    #[serde(rename = "eval.subset", skip_serializing_if = "Option::is_none")]
    pub eval_subset: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Default,
    File,
    Flag,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Default => "default",
            Source::File => "file",
            Source::Flag => "flag",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Field {
    pub value: Value,
    pub source: Source,
}

#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub fields: BTreeMap<String, Field>,
}

fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, x, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.clone());
        }
    }
}

fn unflatten(flat: &BTreeMap<String, Value>) -> Value {
    let mut root = Map::new();
    for (key, v) in flat {
        if v.is_null() {
            continue;
        }
        let mut node = &mut root;
        let parts: Vec<&str> = key.split('.').collect();
        for p in &parts[..parts.len() - 1] {
            node = node
                .entry(p.to_string())
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .expect("sections are tables");
        }
        node.insert(parts[parts.len() - 1].to_string(), v.clone());
    }
    Value::Object(root)
}

fn file_values(path: &Path) -> Result<BTreeMap<String, Value>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config file {}", path.display()))?;
    let table: toml::Table =
        toml::from_str(&text).with_context(|| format!("parsing config file {}", path.display()))?;
    let mut flat = BTreeMap::new();
    flatten("", &serde_json::to_value(table)?, &mut flat);
    Ok(flat)
}

/// Merge `flag > file > default` field by field.
pub fn resolve(config_file: Option<&Path>, flags: &Overrides) -> Result<Resolved> {
    let mut defaults = BTreeMap::new();
    flatten(
        "",
        &serde_json::to_value(RunConfig::default())?,
        &mut defaults,
    );
    let file = match config_file {
        Some(p) => file_values(p)?,
        None => BTreeMap::new(),
    };
    for key in file.keys() {
        if !defaults.contains_key(key) {
            bail!(
                "unknown key {key:?} in config file {}",
                config_file.unwrap().display()
            );
        }
    }
    let mut flag_values = BTreeMap::new();
    flatten("", &serde_json::to_value(flags)?, &mut flag_values);

    let mut fields = BTreeMap::new();
    for (key, default) in &defaults {
        let field = if let Some(v) = flag_values.get(key) {
            Field {
                value: v.clone(),
                source: Source::Flag,
            }
        } else if let Some(v) = file.get(key) {
            Field {
                value: v.clone(),
                source: Source::File,
            }
        } else {
            Field {
                value: default.clone(),
                source: Source::Default,
            }
        };
        fields.insert(key.clone(), field);
    }
    if fields["embedder.seed"].source == Source::Default {
        let seed = fields["seed"].value.clone();
        fields.get_mut("embedder.seed").unwrap().value = seed;
    }
    let flat: BTreeMap<String, Value> = fields
        .iter()
        .map(|(k, f)| (k.clone(), f.value.clone()))
        .collect();
    let config: RunConfig =
        serde_json::from_value(unflatten(&flat)).context("invalid configuration value")?;
    Ok(Resolved { config, fields })
}

impl Resolved {
    /// Every field except the output directory, which differs between reruns.
    pub fn recorded_fields(&self) -> BTreeMap<&str, &Field> {
        self.fields
            .iter()
            .filter(|(k, _)| k.as_str() != "out_dir")
            .map(|(k, f)| (k.as_str(), f))
            .collect()
    }

    /// The resolved config as TOML, loadable with `--config`.
    pub fn to_toml(&self) -> Result<String> {
        let mut value = serde_json::to_value(&self.config)?;
        value.as_object_mut().unwrap().remove("out_dir");
        let table = unflatten(&{
            let mut flat = BTreeMap::new();
            flatten("", &value, &mut flat);
            flat
        });
        let table: toml::Table = serde_json::from_value(table)?;
        let mut out =
            String::from("# resolved run configuration; sources are listed in manifest.json\n");
        out.push_str(&toml::to_string(&table)?);
        Ok(out)
    }
}
