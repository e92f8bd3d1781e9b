use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use clap::Parser;
use serde::Serialize;

use emocap_core::data::{dataset_to_string, parse_dataset, Split};
use emocap_core::emotion_space::{lexicons_to_string, load_lexicons};
use emocap_core::metrics::{evaluate, MetricReport, VARIANT_NOTES};
use emocap_core::rng::{derive_seed, Stream};
use emocap_core::textproc::tokenize;
use emocap_core::training::{evaluate_policy, run_grpo, run_sft, TrainItem};
use emocap_core::{
    formats, CaptionSample, Embedder, EmbedderBackend, EmotionAnchorSet, PolicyParams, RewardModel,
    SynthSpec, TokenSequence,
};

use crate::config::{resolve, Resolved, Source};
use crate::manifest::{sha256_hex, strip_out_dir, Manifest, OutDir};
use crate::{Cli, Command};

const OPTIMIZER_NOTE: &str =
    "plain gradient descent/ascent with linear warmup (no momentum or adaptive scaling)";

pub fn run(cli: Cli, args: &[String]) -> Result<()> {
    let resolved = resolve(cli.config.as_deref(), &cli.overrides)?;
    let command = cli.command.expect("checked by caller");
    if let Command::Rerun { manifest } = &command {
        return rerun(manifest, &resolved);
    }
    let mut out = OutDir::create(&resolved.config.out_dir)?;
    if let Some(p) = &cli.config {
        out.read_input("config", p)?;
    }
    let name = match &command {
        Command::GenSynth { .. } => "gen-synth",
        Command::BuildAnchors { .. } => "build-anchors",
        Command::Score { .. } => "score",
        Command::Evaluate { .. } => "evaluate",
        Command::TrainSft { .. } => "train-sft",
        Command::TrainGrpo { .. } => "train-grpo",
        Command::Rerun { .. } => unreachable!(),
    };
    match command {
        Command::GenSynth { spec } => gen_synth(&resolved, &mut out, spec.as_deref())?,
        Command::BuildAnchors { lexicons } => build_anchors(&resolved, &mut out, &lexicons)?,
        Command::Score {
            anchors,
            generated,
            references,
        } => score(&resolved, &mut out, &anchors, &generated, &references)?,
        Command::Evaluate {
            hyps,
            checkpoint,
            refs,
            dataset,
            split,
            anchors,
        } => evaluate_cmd(
            &resolved,
            &mut out,
            EvalInputs {
                hyps: hyps.as_deref(),
                checkpoint: checkpoint.as_deref(),
                refs: refs.as_deref(),
                dataset: dataset.as_deref(),
                split: split.as_deref(),
                anchors: anchors.as_deref(),
            },
        )?,
        Command::TrainSft {
            dataset,
            split,
            init,
        } => train_sft(
            &resolved,
            &mut out,
            &dataset,
            split.as_deref(),
            init.as_deref(),
        )?,
        Command::TrainGrpo {
            dataset,
            split,
            checkpoint,
            anchors,
        } => train_grpo(
            &resolved,
            &mut out,
            &dataset,
            split.as_deref(),
            &checkpoint,
            &anchors,
        )?,
        Command::Rerun { .. } => unreachable!(),
    }
    out.finish(name, &strip_out_dir(args), &resolved)?;
    Ok(())
}

fn utf8(bytes: Vec<u8>, path: &Path) -> Result<String> {
    String::from_utf8(bytes).with_context(|| format!("{} is not UTF-8", path.display()))
}

fn gen_synth(r: &Resolved, out: &mut OutDir, spec_path: Option<&Path>) -> Result<()> {
    let mut spec = match spec_path {
        Some(p) => {
            let text = utf8(out.read_input("spec", p)?, p)?;
            serde_json::from_str::<SynthSpec>(&text)
                .with_context(|| format!("parsing synthetic spec {}", p.display()))?
        }
        None => SynthSpec::default_spec(),
    };
    if r.fields["seed"].source != Source::Default {
        spec.seed = r.config.seed;
    }
    let synth = spec.generate()?;
    out.write(
        "dataset.jsonl",
        dataset_to_string(&synth.samples).as_bytes(),
    )?;
    out.write(
        "lexicons.json",
        lexicons_to_string(&synth.lexicons).as_bytes(),
    )?;
    out.write("split.json", synth.split.to_json().as_bytes())?;
    let mut spec_json = serde_json::to_string_pretty(&spec)?;
    spec_json.push('\n');
    out.write("synth_spec.json", spec_json.as_bytes())?;
    out.note("synth_seed", spec.seed);
    println!(
        "{} records ({} train / {} dev / {} test), {} emotions, {} contexts",
        synth.samples.len(),
        synth.split.train.len(),
        synth.split.dev.len(),
        synth.split.test.len(),
        spec.emotions.len(),
        spec.contexts()
    );
    Ok(())
}

fn embedder(r: &Resolved, out: &mut OutDir) -> Result<Embedder> {
    let cfg = r.config.embedder_config();
    if cfg.backend == EmbedderBackend::Table {
        let Some(table) = &cfg.table_path else {
            bail!("the table backend needs --embedding-table");
        };
        out.read_input("embedding_table", table)?;
    }
    let e = Embedder::new(cfg)?;
    out.note("embedder_fingerprint", e.fingerprint());
    Ok(e)
}

fn load_anchors(out: &mut OutDir, path: &Path, emb: &Embedder) -> Result<EmotionAnchorSet> {
    out.read_input("anchors", path)?;
    let set = EmotionAnchorSet::load(path, emb)
        .with_context(|| format!("loading anchor snapshot {}", path.display()))?;
    out.note("anchor_fingerprint", set.fingerprint());
    Ok(set)
}

fn build_anchors(r: &Resolved, out: &mut OutDir, lexicons: &Path) -> Result<()> {
    out.read_input("lexicons", lexicons)?;
    let lex = load_lexicons(lexicons)?;
    let emb = embedder(r, out)?;
    let set = EmotionAnchorSet::build(&lex, &emb)?;
    out.write("anchors.tsv", set.to_snapshot_string().as_bytes())?;
    out.note("anchor_fingerprint", set.fingerprint());
    if emb.oov_fallbacks() > 0 {
        out.note("oov_fallbacks", emb.oov_fallbacks());
    }
    println!(
        "{} anchors ({}) in D={}, fingerprint {}",
        set.len(),
        set.labels().join(", "),
        set.dim(),
        set.fingerprint()
    );
    Ok(())
}

fn lines_of(out: &mut OutDir, role: &str, path: &Path) -> Result<Vec<String>> {
    let text = utf8(out.read_input(role, path)?, path)?;
    Ok(text.lines().map(str::to_string).collect())
}

#[derive(Serialize)]
struct ScoreLine<'a> {
    index: usize,
    #[serde(flatten)]
    breakdown: &'a emocap_core::RewardBreakdown,
}

fn reward_model(r: &Resolved, out: &mut OutDir, anchors: &Path) -> Result<RewardModel> {
    let emb = embedder(r, out)?;
    let set = load_anchors(out, anchors, &emb)?;
    let weights = r.config.weights()?;
    out.note("reward_weights", serde_json::to_value(weights)?);
    Ok(RewardModel::new(set, emb, weights)?)
}

fn score(
    r: &Resolved,
    out: &mut OutDir,
    anchors: &Path,
    generated: &Path,
    references: &Path,
) -> Result<()> {
    let model = reward_model(r, out, anchors)?;
    let gens = lines_of(out, "generated", generated)?;
    let refs = lines_of(out, "references", references)?;
    ensure!(
        gens.len() == refs.len(),
        "{} generated captions but {} references",
        gens.len(),
        refs.len()
    );
    let mut text = format!("{{\"format\":\"{}\"}}\n", formats::SCORE);
    let mut total = 0.0;
    for (i, (g, rf)) in gens.iter().zip(&refs).enumerate() {
        let b = model
            .score_pair(g, rf)
            .with_context(|| format!("line {}", i + 1))?;
        total += b.r_total;
        text.push_str(&serde_json::to_string(&ScoreLine {
            index: i,
            breakdown: &b,
        })?);
        text.push('\n');
    }
    out.write("scores.jsonl", text.as_bytes())?;
    println!(
        "{} pairs, mean r_total {:.6}",
        gens.len(),
        total / gens.len().max(1) as f64
    );
    Ok(())
}

fn load_samples(out: &mut OutDir, path: &Path) -> Result<Vec<CaptionSample>> {
    let text = utf8(out.read_input("dataset", path)?, path)?;
    Ok(parse_dataset(&text, path, None)?)
}

fn subset(
    out: &mut OutDir,
    samples: &[CaptionSample],
    split: Option<&Path>,
    which: &str,
) -> Result<Vec<CaptionSample>> {
    let Some(path) = split else {
        return Ok(samples.to_vec());
    };
    out.read_input("split", path)?;
    let s = Split::load(path)?;
    let ids = match which {
        "train" => &s.train,
        "dev" => &s.dev,
        "test" => &s.test,
        "all" => return Ok(samples.to_vec()),
        other => bail!("unknown subset {other:?}"),
    };
    Ok(Split::select(samples, ids)?)
}

fn contexts_of(samples: &[CaptionSample]) -> usize {
    samples.iter().map(|s| s.context_id + 1).max().unwrap_or(1)
}

fn load_policy(out: &mut OutDir, role: &str, path: &Path) -> Result<PolicyParams> {
    let bytes = out.read_input(role, path)?;
    PolicyParams::from_checkpoint_bytes(&bytes)
        .with_context(|| format!("loading checkpoint {}", path.display()))
}

struct EvalInputs<'a> {
    hyps: Option<&'a Path>,
    checkpoint: Option<&'a Path>,
    refs: Option<&'a Path>,
    dataset: Option<&'a Path>,
    split: Option<&'a Path>,
    anchors: Option<&'a Path>,
}

#[derive(Serialize)]
struct RewardSummary {
    samples_per_item: usize,
    temperature: f64,
    mean_r_total: f64,
    mean_r_emo: f64,
    mean_s_bleu: f64,
    mean_s_spice: f64,
    vocab: usize,
}

#[derive(Serialize)]
struct EvalReport<'a> {
    format: &'a str,
    variant_notes: &'a [&'a str],
    items: usize,
    corpus: &'a MetricReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    reward: Option<RewardSummary>,
}

fn table(report: &MetricReport) -> String {
    let mut s = String::new();
    for note in VARIANT_NOTES {
        let _ = writeln!(s, "# {note}");
    }
    let _ = writeln!(
        s,
        "{:>8} {:>8} {:>8} {:>8} {:>8} {:>11} {:>8} {:>10} {:>8} {:>6}",
        "BLEU1",
        "BLEU2",
        "BLEU3",
        "BLEU4",
        "ROUGE-L",
        "METEOR-lite",
        "CIDEr-D",
        "SPICE-lite",
        "SPIDEr",
        "Vocab"
    );
    let _ = writeln!(
        s,
        "{:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>11.4} {:>8.4} {:>10.4} {:>8.4} {:>6}",
        report.bleu1,
        report.bleu2,
        report.bleu3,
        report.bleu4,
        report.rouge_l,
        report.meteor_lite,
        report.cider_d,
        report.spice_lite,
        report.spider,
        report.vocab
    );
    s
}

fn evaluate_cmd(r: &Resolved, out: &mut OutDir, inp: EvalInputs<'_>) -> Result<()> {
    let ev = &r.config.eval;
    let samples = match inp.dataset {
        Some(d) => {
            let all = load_samples(out, d)?;
            Some(subset(out, &all, inp.split, &ev.subset)?)
        }
        None => None,
    };
    let refs: Vec<String> = match (&samples, inp.refs) {
        (Some(s), _) => s.iter().map(|x| x.reference_caption.clone()).collect(),
        (None, Some(p)) => lines_of(out, "refs", p)?,
        (None, None) => bail!("evaluate needs --refs or --dataset"),
    };
    ensure!(!refs.is_empty(), "no references to evaluate against");

    let mut reward = None;
    let hyps: Vec<String> = if let Some(p) = inp.hyps {
        lines_of(out, "hyps", p)?
    } else {
        let ck = inp
            .checkpoint
            .expect("clap requires --hyps or --checkpoint");
        let Some(samples) = &samples else {
            bail!("decoding a checkpoint needs --dataset for the context ids");
        };
        let policy = load_policy(out, "checkpoint", ck)?;
        let mut decoded = Vec::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            let ctx = policy.context(s.context_id)?;
            let seed = derive_seed(r.config.seed, Stream::Decode, &[i as u64]);
            let draw = policy.sample(ctx, ev.temperature, ev.max_len, seed);
            decoded.push(policy.decode(&draw.ids));
        }
        if let Some(a) = inp.anchors {
            let model = reward_model(r, out, a)?;
            let items = TrainItem::prepare_all(&policy, samples, &model)?;
            let pe = evaluate_policy(
                &policy,
                &items,
                &model,
                ev.temperature,
                ev.max_len,
                ev.samples_per_item,
                r.config.seed,
            )?;
            reward = Some(RewardSummary {
                samples_per_item: ev.samples_per_item,
                temperature: ev.temperature,
                mean_r_total: pe.mean_r_total,
                mean_r_emo: pe.mean_r_emo,
                mean_s_bleu: pe.mean_s_bleu,
                mean_s_spice: pe.mean_s_spice,
                vocab: pe.vocab,
            });
        }
        let mut text = decoded.join("\n");
        text.push('\n');
        out.write("hyps.txt", text.as_bytes())?;
        decoded
    };
    ensure!(
        hyps.len() == refs.len(),
        "{} hypotheses but {} references",
        hyps.len(),
        refs.len()
    );
    let h: Vec<TokenSequence> = hyps.iter().map(|x| tokenize(x)).collect();
    let rf: Vec<TokenSequence> = refs.iter().map(|x| tokenize(x)).collect();
    let e = evaluate(&h, &rf)?;
    let report = EvalReport {
        format: formats::EVAL_REPORT,
        variant_notes: VARIANT_NOTES,
        items: hyps.len(),
        corpus: &e.corpus,
        reward,
    };
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    out.write("eval_report.json", json.as_bytes())?;
    print!("{}", table(&e.corpus));
    if let Some(rw) = &report.reward {
        println!(
            "reward over {} draws/item at T={}: r_total {:.4}  r_emo {:.4}  s_bleu {:.4}  s_spice {:.4}  vocab {}",
            rw.samples_per_item, rw.temperature, rw.mean_r_total, rw.mean_r_emo, rw.mean_s_bleu, rw.mean_s_spice, rw.vocab
        );
    }
    Ok(())
}

fn train_sft(
    r: &Resolved,
    out: &mut OutDir,
    dataset: &Path,
    split: Option<&Path>,
    init: Option<&Path>,
) -> Result<()> {
    let all = load_samples(out, dataset)?;
    ensure!(!all.is_empty(), "dataset {} is empty", dataset.display());
    let train = subset(out, &all, split, "train")?;
    let initial = match init {
        Some(p) => load_policy(out, "init", p)?,
        None => {
            let toks: Vec<TokenSequence> =
                all.iter().map(|s| tokenize(&s.reference_caption)).collect();
            PolicyParams::for_corpus(toks.iter(), contexts_of(&all))?
        }
    };
    let cfg = r.config.sft_config();
    let (params, log) = run_sft(&cfg, &train, &initial)?;
    out.write("policy.ckpt", &params.to_checkpoint_bytes())?;
    out.write("train_log.jsonl", log.to_jsonl().as_bytes())?;
    out.note("optimizer", OPTIMIZER_NOTE);
    out.note("train_samples", train.len());
    let last = log.records().last().map(|x| x.loss).unwrap_or(f64::NAN);
    println!(
        "sft: {} samples, {} steps, V={}, C={}, last batch loss {:.4}",
        train.len(),
        log.len(),
        params.vocab_size(),
        params.contexts(),
        last
    );
    Ok(())
}

fn train_grpo(
    r: &Resolved,
    out: &mut OutDir,
    dataset: &Path,
    split: Option<&Path>,
    checkpoint: &Path,
    anchors: &Path,
) -> Result<()> {
    let all = load_samples(out, dataset)?;
    let train = subset(out, &all, split, "train")?;
    let sft = load_policy(out, "checkpoint", checkpoint)?;
    let model = reward_model(r, out, anchors)?;
    let cfg = r.config.grpo_config();
    let (params, log) = run_grpo(&cfg, &train, &sft, &model)?;
    out.write("policy.ckpt", &params.to_checkpoint_bytes())?;
    out.write("train_log.jsonl", log.to_jsonl().as_bytes())?;
    out.note("optimizer", OPTIMIZER_NOTE);
    out.note("kl_reference", "frozen input checkpoint");
    out.note("inner_epochs", 1);
    out.note("train_samples", train.len());
    match log.records().last() {
        Some(last) => println!(
            "grpo: {} steps, last mean r_total {:.4}, mean kl {:.5}",
            log.len(),
            last.mean_r_total,
            last.mean_kl
        ),
        None => println!("grpo: 0 steps, checkpoint unchanged"),
    }
    Ok(())
}

fn rerun(manifest_path: &Path, resolved: &Resolved) -> Result<()> {
    let m = Manifest::load(manifest_path)?;
    let out_dir = &resolved.config.out_dir;
    ensure!(
        resolved.fields["out_dir"].source == Source::Flag,
        "rerun needs an explicit --out-dir"
    );
    let mut args = vec!["emocap".to_string()];
    args.extend(m.args.iter().cloned());
    args.push("--out-dir".into());
    args.push(out_dir.display().to_string());
    let cli = Cli::try_parse_from(&args).context("manifest arguments no longer parse")?;
    run(cli, &args[1..])?;
    let mut mismatched = Vec::new();
    for (name, sha) in &m.outputs {
        let path = out_dir.join(name);
        let bytes = std::fs::read(&path)
            .with_context(|| format!("reading rerun output {}", path.display()))?;
        if &sha256_hex(&bytes) != sha {
            mismatched.push(name.as_str());
        }
    }
    let produced: HashSet<String> = Manifest::load(&out_dir.join("manifest.json"))?
        .outputs
        .into_keys()
        .collect();
    for name in m.outputs.keys() {
        ensure!(produced.contains(name), "rerun did not produce {name}");
    }
    ensure!(
        mismatched.is_empty(),
        "rerun outputs differ: {}",
        mismatched.join(", ")
    );
    println!(
        "rerun of {}: {} outputs identical",
        m.command,
        m.outputs.len()
    );
    Ok(())
}
