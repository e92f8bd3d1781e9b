//! Shared fixtures, brute-force metric oracles and the acceptance suites.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::time::Instant;

use emocap_core::data::Split;
use emocap_core::emotion_space::{build_anchor, coordinate_similarity, emotion_reward, project};
use emocap_core::metrics::{bleu, cider_d, meteor_lite, rouge_l, spice_lite, Stoplist};
use emocap_core::policy::Gradient;
use emocap_core::rng::SplitMix64;
use emocap_core::textproc::tokenize;
use emocap_core::training::{
    encode_samples, evaluate_policy, group_advantages, k3, kl_penalty, run_grpo, run_sft, sft_loss,
    GrpoConfig, PolicyEval, Rollout, RolloutGroup, SftConfig, Surrogate, TrainItem,
};
use emocap_core::{
    Embedder, EmotionAnchorSet, EmotionLexicon, PolicyParams, RewardModel, RewardWeights,
    SemanticVector, SynthSpec, TokenSequence,
};

pub type Outcome = Result<String, String>;

pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn seq(words: &[&str]) -> TokenSequence {
    TokenSequence::from_tokens(words.iter().copied()).unwrap()
}

const POOL: &[&str] = &[
    "the", "voice", "is", "loud", "and", "clear", "pace", "quick", "tone", "rises", "a", "of",
    "calm", "sad",
];

pub fn random_caption(rng: &mut SplitMix64, max_len: usize) -> TokenSequence {
    let len = 1 + rng.below(max_len);
    TokenSequence::from_tokens((0..len).map(|_| POOL[rng.below(POOL.len())])).unwrap()
}

/// Pairs sharing many tokens: every third pair's hypothesis is a noisy copy.
pub fn random_pairs(n: usize, seed: u64) -> Vec<(TokenSequence, TokenSequence)> {
    let mut rng = SplitMix64::new(seed);
    (0..n)
        .map(|i| {
            let r = random_caption(&mut rng, 8);
            let h = if i % 3 == 0 {
                let toks: Vec<&str> = r
                    .iter()
                    .map(|t| {
                        if rng.below(4) == 0 {
                            POOL[rng.below(POOL.len())]
                        } else {
                            t
                        }
                    })
                    .collect();
                seq(&toks)
            } else {
                random_caption(&mut rng, 8)
            };
            (h, r)
        })
        .collect()
}

pub mod oracle {
    use super::*;

    fn grams(t: &[String], n: usize) -> Vec<Vec<String>> {
        if t.len() < n {
            return Vec::new();
        }
        (0..=t.len() - n).map(|i| t[i..i + n].to_vec()).collect()
    }

    fn count(list: &[Vec<String>], g: &[String]) -> usize {
        list.iter().filter(|x| x.as_slice() == g).count()
    }

    pub fn bleu(h: &TokenSequence, r: &TokenSequence, max_n: usize, smoothed: bool) -> f64 {
        let (h, r) = (h.tokens(), r.tokens());
        if h.is_empty() {
            return 0.0;
        }
        let mut product = 1.0;
        for n in 1..=max_n {
            let hg = grams(h, n);
            let rg = grams(r, n);
            let mut distinct: Vec<&Vec<String>> = Vec::new();
            for g in &hg {
                if !distinct.contains(&g) {
                    distinct.push(g);
                }
            }
            let clipped: usize = distinct
                .iter()
                .map(|g| count(&hg, g).min(count(&rg, g)))
                .sum();
            let p = if clipped > 0 {
                clipped as f64 / hg.len() as f64
            } else if smoothed {
                1.0 / (hg.len() as f64 + 1.0)
            } else {
                0.0
            };
            product *= p;
        }
        let c = h.len() as f64;
        let rl = r.len() as f64;
        let bp = if c < rl { (1.0 - rl / c).exp() } else { 1.0 };
        bp * product.powf(1.0 / max_n as f64)
    }

    fn is_subsequence(s: &[&String], of: &[String]) -> bool {
        let mut it = of.iter();
        s.iter().all(|x| it.any(|y| y == *x))
    }

    /// Longest common subsequence by enumerating every subsequence of `a`.
    pub fn lcs(a: &[String], b: &[String]) -> usize {
        let mut best = 0;
        for mask in 0u32..(1 << a.len()) {
            let s: Vec<&String> = (0..a.len())
                .filter(|i| mask >> i & 1 == 1)
                .map(|i| &a[i])
                .collect();
            if s.len() > best && is_subsequence(&s, b) {
                best = s.len();
            }
        }
        best
    }

    pub fn rouge_l(h: &TokenSequence, r: &TokenSequence) -> f64 {
        let l = lcs(h.tokens(), r.tokens()) as f64;
        if l == 0.0 {
            return 0.0;
        }
        let p = l / h.len() as f64;
        let rec = l / r.len() as f64;
        let b2 = 1.2f64 * 1.2;
        (1.0 + b2) * p * rec / (rec + b2 * p)
    }

    fn chunks_of(pairs: &mut [(usize, usize)]) -> usize {
        pairs.sort();
        let mut chunks = 0;
        for k in 0..pairs.len() {
            if k == 0 || !(pairs[k].0 == pairs[k - 1].0 + 1 && pairs[k].1 == pairs[k - 1].1 + 1) {
                chunks += 1;
            }
        }
        chunks
    }

    /// Every partial matching of equal tokens; keep most matches, then fewest chunks.
    pub fn alignment(h: &[String], r: &[String]) -> (usize, usize) {
        fn go(
            i: usize,
            h: &[String],
            r: &[String],
            used: &mut Vec<bool>,
            cur: &mut Vec<(usize, usize)>,
            best: &mut (usize, usize),
        ) {
            if i == h.len() {
                let m = cur.len();
                let c = chunks_of(&mut cur.clone());
                if m > best.0 || (m == best.0 && c < best.1) {
                    *best = (m, c);
                }
                return;
            }
            go(i + 1, h, r, used, cur, best);
            for j in 0..r.len() {
                if !used[j] && r[j] == h[i] {
                    used[j] = true;
                    cur.push((i, j));
                    go(i + 1, h, r, used, cur, best);
                    cur.pop();
                    used[j] = false;
                }
            }
        }
        let mut best = (0, 0);
        go(
            0,
            h,
            r,
            &mut vec![false; r.len()],
            &mut Vec::new(),
            &mut best,
        );
        best
    }

    pub fn meteor(h: &TokenSequence, r: &TokenSequence) -> f64 {
        let (m, ch) = alignment(h.tokens(), r.tokens());
        if m == 0 {
            return 0.0;
        }
        let m = m as f64;
        let p = m / h.len() as f64;
        let rec = m / r.len() as f64;
        let fmean = 10.0 * p * rec / (rec + 9.0 * p);
        fmean * (1.0 - 0.5 * (ch as f64 / m).powi(3))
    }

    pub fn cider(hyps: &[TokenSequence], refs: &[TokenSequence]) -> Vec<f64> {
        let n_docs = refs.len() as f64;
        let df = |g: &[String]| -> f64 {
            let n = g.len();
            refs.iter()
                .filter(|r| grams(r.tokens(), n).iter().any(|x| x.as_slice() == g))
                .count() as f64
        };
        let vector = |t: &[String], n: usize| -> Vec<(Vec<String>, f64)> {
            let all = grams(t, n);
            let mut out: Vec<(Vec<String>, f64)> = Vec::new();
            for g in &all {
                if out.iter().any(|(x, _)| x == g) {
                    continue;
                }
                let tf = count(&all, g) as f64;
                out.push((g.clone(), tf * (n_docs.ln() - df(g).max(1.0).ln())));
            }
            out
        };
        let norm = |v: &[(Vec<String>, f64)]| v.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        hyps.iter()
            .zip(refs)
            .map(|(h, r)| {
                let delta = h.len() as f64 - r.len() as f64;
                let pen = (-delta * delta / 72.0).exp();
                let mut sum = 0.0;
                for n in 1..=4 {
                    let hv = vector(h.tokens(), n);
                    let rv = vector(r.tokens(), n);
                    let (hn, rn) = (norm(&hv), norm(&rv));
                    if hn == 0.0 || rn == 0.0 {
                        continue;
                    }
                    let mut dot = 0.0;
                    for (g, wh) in &hv {
                        for (g2, wr) in &rv {
                            if g == g2 {
                                dot += wh.min(*wr) * wr;
                            }
                        }
                    }
                    sum += dot / (hn * rn) * pen;
                }
                sum / 4.0 * 10.0
            })
            .collect()
    }

    pub fn stopwords() -> BTreeSet<String> {
        include_str!("../../data/stoplist.txt")
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(String::from)
            .collect()
    }

    pub fn spice(h: &TokenSequence, r: &TokenSequence, stop: &BTreeSet<String>) -> f64 {
        let props = |t: &TokenSequence| -> BTreeSet<String> {
            let content: Vec<&String> = t.tokens().iter().filter(|w| !stop.contains(*w)).collect();
            let mut s: BTreeSet<String> = content.iter().map(|w| format!("o:{w}")).collect();
            for k in 1..content.len() {
                s.insert(format!("r:{} {}", content[k - 1], content[k]));
            }
            s
        };
        let (hp, rp) = (props(h), props(r));
        let common = hp.intersection(&rp).count() as f64;
        if common == 0.0 {
            return 0.0;
        }
        let p = common / hp.len() as f64;
        let rec = common / rp.len() as f64;
        2.0 * p * rec / (p + rec)
    }

    pub fn mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len() as f64
    }

    pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }
}

fn close(label: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    ensure((got - want).abs() <= tol, || {
        format!(
            "{label}: got {got:.15}, oracle {want:.15}, diff {:e}",
            (got - want).abs()
        )
    })
}

pub fn metric_oracle_suite() -> Outcome {
    let pairs = random_pairs(200, 20240601);
    let stop = oracle::stopwords();
    let shipped = Stoplist::shipped();
    let mut worst: f64 = 0.0;
    let mut track = |label: &str, got: f64, want: f64| -> Result<(), String> {
        worst = worst.max((got - want).abs());
        close(label, got, want, 1e-9)
    };
    for (i, (h, r)) in pairs.iter().enumerate() {
        for n in 1..=4 {
            for smoothed in [false, true] {
                track(
                    &format!("pair {i} bleu{n} smoothed={smoothed}"),
                    bleu(h, r, n, smoothed),
                    oracle::bleu(h, r, n, smoothed),
                )?;
            }
        }
        track(
            &format!("pair {i} rouge_l"),
            rouge_l(h, r),
            oracle::rouge_l(h, r),
        )?;
        track(
            &format!("pair {i} meteor_lite"),
            meteor_lite(h, r),
            oracle::meteor(h, r),
        )?;
        track(
            &format!("pair {i} spice_lite"),
            spice_lite(h, r, shipped),
            oracle::spice(h, r, &stop),
        )?;
    }
    let hyps: Vec<TokenSequence> = pairs.iter().map(|p| p.0.clone()).collect();
    let refs: Vec<TokenSequence> = pairs.iter().map(|p| p.1.clone()).collect();
    let got = cider_d(&hyps, &refs).map_err(|e| e.to_string())?;
    let want = oracle::cider(&hyps, &refs);
    for (i, (g, w)) in got.per_sample.iter().zip(&want).enumerate() {
        track(&format!("pair {i} cider_d"), *g, *w)?;
    }
    Ok(format!("200 pairs, max |diff| {worst:.1e}"))
}

pub fn fixture_embedder() -> Embedder {
    Embedder::hashed(32, 11).unwrap()
}

pub fn fixture_lexicons() -> Vec<EmotionLexicon> {
    let lex = |name: &str, words: &[&str]| {
        EmotionLexicon::new(name, words.iter().map(|w| w.to_string()).collect()).unwrap()
    };
    vec![
        lex("angry", &["angry", "furious", "harsh"]),
        lex("happy", &["happy", "bright", "cheerful", "joyful"]),
        lex("sad", &["sad", "low", "gloomy"]),
        lex("calm", &["calm", "steady"]),
    ]
}

const TEXTS: &[&str] = &[
    "the man's voice is loud and harsh, the pace is quick",
    "a bright cheerful tone",
    "slow and gloomy",
    "calm",
    "the woman speaks at a steady pace, suggesting calm",
    "furious! furious!",
];

pub fn emotion_space_suite() -> Outcome {
    let emb = fixture_embedder();
    let lexicons = fixture_lexicons();
    let set = EmotionAnchorSet::build(&lexicons, &emb).map_err(|e| e.to_string())?;

    for (lex, anchor) in lexicons.iter().zip(set.anchors()) {
        let vecs: Vec<Vec<f64>> = lex
            .words
            .iter()
            .map(|w| emb.embed_token(w).unwrap().components().to_vec())
            .collect();
        let direct = build_anchor(lex, &emb).map_err(|e| e.to_string())?;
        for d in 0..emb.dim() {
            let want = vecs.iter().map(|v| v[d]).sum::<f64>() / vecs.len() as f64;
            close(
                &format!("{} anchor[{d}]", lex.name),
                anchor.components()[d],
                want,
                1e-12,
            )?;
            close(
                &format!("{} build_anchor[{d}]", lex.name),
                direct.components()[d],
                want,
                1e-12,
            )?;
        }
    }

    let mut rng = SplitMix64::new(5);
    let mut probes: Vec<SemanticVector> =
        TEXTS.iter().map(|t| emb.embed_text(t).unwrap()).collect();
    for _ in 0..50 {
        probes.push(
            SemanticVector::new((0..emb.dim()).map(|_| rng.next_signed() * 10.0).collect())
                .unwrap(),
        );
    }
    for (i, t) in probes.iter().enumerate() {
        let c = project(t, &set).map_err(|e| e.to_string())?;
        ensure(c.values().iter().all(|x| (-1.0..=1.0).contains(x)), || {
            format!("probe {i}: coordinates outside [-1, 1]: {:?}", c.values())
        })?;
        for (k, a) in set.anchors().iter().enumerate() {
            close(
                &format!("probe {i} coord {k}"),
                c.values()[k],
                oracle::cosine(t.components(), a.components()),
                1e-12,
            )?;
        }
        for lambda in [1e-3, 1.0, 1e3] {
            let s = project(&t.scaled(lambda), &set).map_err(|e| e.to_string())?;
            for (a, b) in s.values().iter().zip(c.values()) {
                close(&format!("probe {i} scale {lambda}"), *a, *b, 1e-12)?;
            }
        }
    }

    let order = [2, 0, 3, 1];
    let permuted = set.permuted(&order);
    for a in TEXTS {
        let r = emotion_reward(a, a, &set, &emb).map_err(|e| e.to_string())?;
        close(&format!("R_emo({a:?}, itself)"), r, 1.0, 1e-9)?;
        let ca = set.coordinates_of(a, &emb).map_err(|e| e.to_string())?;
        let pa = permuted
            .coordinates_of(a, &emb)
            .map_err(|e| e.to_string())?;
        for (k, &src) in order.iter().enumerate() {
            close("permuted coordinate", pa.values()[k], ca.values()[src], 0.0)?;
        }
        for b in TEXTS {
            let r1 = emotion_reward(a, b, &set, &emb).map_err(|e| e.to_string())?;
            let r2 = emotion_reward(a, b, &permuted, &emb).map_err(|e| e.to_string())?;
            let r3 = emotion_reward(b, a, &set, &emb).map_err(|e| e.to_string())?;
            close("R_emo under anchor permutation", r2, r1, 1e-12)?;
            close("R_emo symmetry", r3, r1, 1e-12)?;
            let cb = set.coordinates_of(b, &emb).map_err(|e| e.to_string())?;
            close(
                "R_emo oracle",
                r1,
                oracle::cosine(ca.values(), cb.values()),
                1e-12,
            )?;
            coordinate_similarity(&ca, &cb).map_err(|e| e.to_string())?;
        }
    }
    Ok(format!("{} anchors, {} probes", set.len(), probes.len()))
}

pub fn random_policy(
    content: usize,
    contexts: usize,
    scale: f64,
    rng: &mut SplitMix64,
) -> PolicyParams {
    let tokens: Vec<String> = (0..content).map(|i| format!("t{i}")).collect();
    let mut p = PolicyParams::uniform(tokens, contexts).unwrap();
    p.logits_mut()
        .iter_mut()
        .for_each(|x| *x = scale * rng.next_signed());
    p
}

/// `|a - b| / max(|a|, |b|, 1e-2)`: relative error, absolute near zero.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-2)
}

pub fn central_difference(
    params: &PolicyParams,
    h: f64,
    f: impl Fn(&PolicyParams) -> f64,
) -> Vec<f64> {
    let mut p = params.clone();
    (0..params.logits().len())
        .map(|k| {
            let x = p.logits()[k];
            p.logits_mut()[k] = x + h;
            let up = f(&p);
            p.logits_mut()[k] = x - h;
            let down = f(&p);
            p.logits_mut()[k] = x;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn compare_gradient(
    label: &str,
    analytic: &Gradient,
    numeric: &[f64],
    tol: f64,
) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for (k, (&a, &n)) in analytic.values().iter().zip(numeric).enumerate() {
        let e = rel_err(a, n);
        worst = worst.max(e);
        ensure(e <= tol, || {
            format!("{label}: coordinate {k} analytic {a:e} numeric {n:e} rel {e:e}")
        })?;
    }
    Ok(worst)
}

pub fn random_rollout_groups(
    sampler: &PolicyParams,
    groups: usize,
    group_size: usize,
    rng: &mut SplitMix64,
) -> Vec<RolloutGroup> {
    (0..groups)
        .map(|_| {
            let ctx = sampler.context(0).unwrap();
            let rewards: Vec<f64> = (0..group_size).map(|_| rng.next_f64()).collect();
            let adv = group_advantages(&rewards, 1e-8);
            let rollouts = adv
                .into_iter()
                .map(|advantage| {
                    let s = sampler.sample(ctx, 1.0, 3, rng.next_u64());
                    Rollout {
                        ids: s.ids,
                        terminated: s.terminated,
                        old_log_probs: s.log_probs,
                        advantage,
                    }
                })
                .collect();
            RolloutGroup {
                context: ctx,
                rollouts,
            }
        })
        .collect()
}

pub fn gradient_check_suite() -> Outcome {
    let h = 1e-5;
    let mut rng = SplitMix64::new(99);
    let mut worst_lp: f64 = 0.0;
    for draw in 0..50 {
        let p = random_policy(2, 1, 2.0, &mut rng);
        let ctx = p.context(0).unwrap();
        let len = 1 + rng.below(4);
        let words: Vec<String> = (0..len).map(|_| format!("t{}", rng.below(2))).collect();
        let s = TokenSequence::from_tokens(words).unwrap();
        let g = p.grad_log_prob(ctx, &s).map_err(|e| e.to_string())?;
        let fd = central_difference(&p, h, |q| q.log_prob(ctx, &s).unwrap());
        worst_lp = worst_lp.max(compare_gradient(
            &format!("grad_log_prob draw {draw}"),
            &g,
            &fd,
            1e-6,
        )?);
    }

    let mut worst_s: f64 = 0.0;
    for draw in 0..50 {
        let sampler = random_policy(2, 1, 1.5, &mut rng);
        let groups = random_rollout_groups(&sampler, 2, 4, &mut rng);
        let mut theta = sampler.clone();
        theta
            .logits_mut()
            .iter_mut()
            .for_each(|x| *x += 0.1 * rng.next_signed());
        let reference = random_policy(2, 1, 1.5, &mut rng);
        let sur = Surrogate {
            kl_coeff: 0.5,
            clip_eps: 0.2,
        };
        let g = sur.gradient(&theta, &reference, &groups);
        let fd = central_difference(&theta, h, |q| sur.objective(q, &reference, &groups));
        worst_s = worst_s.max(compare_gradient(
            &format!("surrogate draw {draw}"),
            &g,
            &fd,
            1e-5,
        )?);
    }
    Ok(format!(
        "max rel err: log_prob {worst_lp:.1e}, surrogate {worst_s:.1e}"
    ))
}

pub fn advantage_kl_suite() -> Outcome {
    let a = group_advantages(&[0.2, 0.4, 0.6, 0.8], 1e-8);
    let want = [-1.34164, -0.44721, 0.44721, 1.34164];
    for (x, w) in a.iter().zip(want) {
        close("advantage", *x, w, 1e-5)?;
    }
    let exact = [
        -3.0 / 5f64.sqrt(),
        -1.0 / 5f64.sqrt(),
        1.0 / 5f64.sqrt(),
        3.0 / 5f64.sqrt(),
    ];
    for (x, w) in a.iter().zip(exact) {
        close("advantage (closed form)", *x, w, 1e-6)?;
    }
    ensure(
        group_advantages(&[0.3; 4], 1e-8).iter().all(|&x| x == 0.0),
        || "equal rewards gave non-zero advantages".into(),
    )?;

    let mut rng = SplitMix64::new(4);
    let mut min_k3 = f64::INFINITY;
    for _ in 0..1000 {
        let p = random_policy(3, 2, 3.0, &mut rng);
        let r = random_policy(3, 2, 3.0, &mut rng);
        let ctx = p.context(rng.below(2)).unwrap();
        let len = 1 + rng.below(5);
        let s = TokenSequence::from_tokens((0..len).map(|_| format!("t{}", rng.below(3)))).unwrap();
        let same = kl_penalty(&p, &p, ctx, &s).map_err(|e| e.to_string())?;
        ensure(same == 0.0, || format!("kl_penalty(pi, pi) = {same:e}"))?;
        let kl = kl_penalty(&p, &r, ctx, &s).map_err(|e| e.to_string())?;
        ensure(kl >= 0.0, || format!("kl_penalty negative: {kl:e}"))?;
        let x = 8.0 * rng.next_signed();
        let v = k3(x);
        ensure(v >= 0.0, || format!("k3({x}) = {v:e}"))?;
        min_k3 = min_k3.min(kl.min(v));
    }
    close("k3 at ratio 2", k3(2f64.ln()), 2.0 - 2f64.ln() - 1.0, 1e-15)?;
    Ok(format!("advantages {a:.5?}, min k3 {min_k3:.2e}"))
}

fn five_sample_corpus() -> (PolicyParams, Vec<emocap_core::CaptionSample>) {
    let captions = [
        "the voice is loud",
        "the pace is quick",
        "the tone rises",
        "the voice is calm",
        "a slow pace",
    ];
    let samples: Vec<emocap_core::CaptionSample> = captions
        .iter()
        .enumerate()
        .map(|(i, c)| emocap_core::CaptionSample {
            id: format!("s{i}"),
            context_id: i % 2,
            emotion_label: "x".into(),
            reference_caption: c.to_string(),
        })
        .collect();
    let toks: Vec<TokenSequence> = captions.iter().map(|c| tokenize(c)).collect();
    (PolicyParams::for_corpus(toks.iter(), 2).unwrap(), samples)
}

pub fn sft_suite() -> Outcome {
    let u = PolicyParams::uniform((0..8).map(|i| format!("w{i}")), 1).unwrap();
    let v = u.vocab_size() as f64;
    for len in [1usize, 3, 7] {
        let ex = encode_samples(
            &u,
            &[emocap_core::CaptionSample {
                id: "u".into(),
                context_id: 0,
                emotion_label: "x".into(),
                reference_caption: (0..len)
                    .map(|i| format!("w{}", i % 8))
                    .collect::<Vec<_>>()
                    .join(" "),
            }],
        )
        .map_err(|e| e.to_string())?;
        let (loss, _) = sft_loss(&u, &ex);
        close(
            &format!("uniform loss, L={len}, V={v}"),
            loss,
            (len as f64 + 1.0) * v.ln(),
            1e-9,
        )?;
    }

    let (mut p, samples) = five_sample_corpus();
    let batch = encode_samples(&p, &samples).map_err(|e| e.to_string())?;
    let mut prev = f64::INFINITY;
    let (first, _) = sft_loss(&p, &batch);
    for step in 0..100 {
        let (loss, grad) = sft_loss(&p, &batch);
        ensure(loss < prev, || {
            format!("loss rose at step {step}: {prev} -> {loss}")
        })?;
        prev = loss;
        p.apply(&grad, -0.1);
    }

    let spec = SynthSpec::default_spec();
    let out = spec.generate().map_err(|e| e.to_string())?;
    let init = corpus_policy(&out.samples, spec.contexts());
    let cfg = SftConfig {
        learning_rate: 0.5,
        epochs: 2,
        seed: 3,
        ..SftConfig::default()
    };
    let (a, _) = run_sft(&cfg, &out.train(), &init).map_err(|e| e.to_string())?;
    let (b, _) = run_sft(&cfg, &out.train(), &init).map_err(|e| e.to_string())?;
    ensure(a.to_checkpoint_bytes() == b.to_checkpoint_bytes(), || {
        "seeded SFT runs differ".into()
    })?;
    Ok(format!("descent {first:.4} -> {prev:.4} over 100 steps"))
}

pub fn corpus_policy(samples: &[emocap_core::CaptionSample], contexts: usize) -> PolicyParams {
    let toks: Vec<TokenSequence> = samples
        .iter()
        .map(|s| tokenize(&s.reference_caption))
        .collect();
    PolicyParams::for_corpus(toks.iter(), contexts).unwrap()
}

/// Settings of the desk-scale end-to-end run.
pub struct Desk {
    pub embed_dim: usize,
    pub sft: SftConfig,
    pub grpo: GrpoConfig,
    pub eval_samples: usize,
    pub seed: u64,
}

impl Desk {
    pub fn standard() -> Self {
        Desk {
            embed_dim: 256,
            sft: SftConfig {
                learning_rate: 1.0,
                epochs: 30,
                seed: 7,
                ..SftConfig::default()
            },
            grpo: GrpoConfig {
                learning_rate: 5.0,
                steps: 200,
                seed: 7,
                ..GrpoConfig::default()
            },
            eval_samples: 32,
            seed: 7,
        }
    }
}

pub struct EndToEnd {
    pub sft: PolicyEval,
    pub full: PolicyEval,
    pub no_emo: PolicyEval,
    pub seconds_main: f64,
    pub seconds_ablation: f64,
}

pub fn end_to_end(desk: &Desk) -> Result<EndToEnd, String> {
    let err = |e: emocap_core::Error| e.to_string();
    let start = Instant::now();
    let spec = SynthSpec::default_spec();
    let out = spec.generate().map_err(err)?;
    let emb = Embedder::hashed(desk.embed_dim, desk.seed).map_err(err)?;
    let anchors = EmotionAnchorSet::build(&out.lexicons, &emb).map_err(err)?;
    let full_model =
        RewardModel::new(anchors.clone(), emb.clone(), RewardWeights::default()).map_err(err)?;
    let train = out.train();
    let held_out = out.test();
    let init = corpus_policy(&out.samples, spec.contexts());
    let (sft, _) = run_sft(&desk.sft, &train, &init).map_err(err)?;
    let eval = |p: &PolicyParams, model: &RewardModel| -> Result<PolicyEval, String> {
        let items = TrainItem::prepare_all(p, &held_out, model).map_err(err)?;
        evaluate_policy(
            p,
            &items,
            model,
            desk.grpo.temperature,
            desk.grpo.max_response_len,
            desk.eval_samples,
            desk.seed,
        )
        .map_err(err)
    };
    let sft_eval = eval(&sft, &full_model)?;
    let (full, _) = run_grpo(&desk.grpo, &train, &sft, &full_model).map_err(err)?;
    let full_eval = eval(&full, &full_model)?;
    let seconds_main = start.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let ablated = RewardModel::new(
        anchors,
        emb,
        RewardWeights::ablation(0.0, 1.0, 0.0).map_err(err)?,
    )
    .map_err(err)?;
    let (no_emo, _) = run_grpo(&desk.grpo, &train, &sft, &ablated).map_err(err)?;
    // score both arms with the full reward so R_emo is comparable
    let no_emo_eval = eval(&no_emo, &full_model)?;
    Ok(EndToEnd {
        sft: sft_eval,
        full: full_eval,
        no_emo: no_emo_eval,
        seconds_main,
        seconds_ablation: seconds_main + t1.elapsed().as_secs_f64(),
    })
}

pub fn improvement_check(e: &EndToEnd) -> Outcome {
    let gain = e.full.mean_r_total - e.sft.mean_r_total;
    let vocab_floor = 0.9 * e.sft.vocab as f64;
    let detail = format!(
        "R_total {:.4} -> {:.4} (gain {gain:+.4}), vocab {} -> {}, {:.1}s",
        e.sft.mean_r_total, e.full.mean_r_total, e.sft.vocab, e.full.vocab, e.seconds_main
    );
    ensure(gain >= 0.05, || format!("gain below 0.05: {detail}"))?;
    ensure(e.full.vocab as f64 >= vocab_floor, || {
        format!("vocab fell more than 10%: {detail}")
    })?;
    ensure(e.seconds_main < 300.0, || {
        format!("over 5 minutes: {detail}")
    })?;
    Ok(detail)
}

pub fn ablation_check(e: &EndToEnd) -> Outcome {
    let detail = format!(
        "held-out R_emo alpha=1 {:.4} vs alpha=0 {:.4}, {:.1}s",
        e.full.mean_r_emo, e.no_emo.mean_r_emo, e.seconds_ablation
    );
    ensure(e.no_emo.mean_r_emo < e.full.mean_r_emo, || {
        format!("ablation not lower: {detail}")
    })?;
    ensure(e.seconds_ablation < 600.0, || {
        format!("over 10 minutes: {detail}")
    })?;
    Ok(detail)
}

pub fn determinism_suite() -> Outcome {
    let err = |e: emocap_core::Error| e.to_string();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let spec = SynthSpec::default_spec();
    let out = spec.generate().map_err(err)?;
    out.write_to_dir(dir).map_err(err)?;
    let again = dir.join("again");
    spec.generate()
        .map_err(err)?
        .write_to_dir(&again)
        .map_err(err)?;
    for f in ["dataset.jsonl", "lexicons.json", "split.json"] {
        let a = std::fs::read(dir.join(f)).map_err(|e| e.to_string())?;
        let b = std::fs::read(again.join(f)).map_err(|e| e.to_string())?;
        ensure(a == b, || format!("{f} differs between generations"))?;
    }
    let loaded = emocap_core::data::load_dataset(&dir.join("dataset.jsonl"), Some(&spec.labels()))
        .map_err(err)?;
    ensure(loaded == out.samples, || {
        "dataset write/load is not the identity".into()
    })?;
    let split = Split::load(&dir.join("split.json")).map_err(err)?;
    ensure(split == out.split, || {
        "split write/load is not the identity".into()
    })?;

    let mut rng = SplitMix64::new(12);
    let p = random_policy(6, 3, 4.0, &mut rng);
    let ck = dir.join("policy.ckpt");
    p.save(&ck).map_err(err)?;
    let bytes = std::fs::read(&ck).map_err(|e| e.to_string())?;
    let back = PolicyParams::load(&ck).map_err(err)?;
    ensure(back.to_checkpoint_bytes() == bytes, || {
        "checkpoint reload changes bytes".into()
    })?;
    ensure(back == p, || "checkpoint reload changes parameters".into())?;

    let emb = Embedder::hashed(64, 3).map_err(err)?;
    let anchors = EmotionAnchorSet::build(&out.lexicons, &emb).map_err(err)?;
    let snap = dir.join("anchors.tsv");
    anchors.save(&snap).map_err(err)?;
    let reloaded = EmotionAnchorSet::load(&snap, &emb).map_err(err)?;
    ensure(
        reloaded.to_snapshot_string() == anchors.to_snapshot_string(),
        || "anchor snapshot reload changes bytes".into(),
    )?;

    let model = RewardModel::new(anchors, emb, RewardWeights::default()).map_err(err)?;
    let init = corpus_policy(&out.samples, spec.contexts());
    let sft_cfg = SftConfig {
        learning_rate: 1.0,
        epochs: 2,
        seed: 5,
        ..SftConfig::default()
    };
    let grpo_cfg = GrpoConfig {
        learning_rate: 2.0,
        steps: 6,
        seed: 5,
        ..GrpoConfig::default()
    };
    let run = || -> Result<(Vec<u8>, String, Vec<u8>, String), String> {
        let (s, slog) = run_sft(&sft_cfg, &out.train(), &init).map_err(err)?;
        let (g, glog) = run_grpo(&grpo_cfg, &out.train(), &s, &model).map_err(err)?;
        Ok((
            s.to_checkpoint_bytes(),
            slog.to_jsonl(),
            g.to_checkpoint_bytes(),
            glog.to_jsonl(),
        ))
    };
    ensure(run()? == run()?, || "repeated training runs differ".into())?;
    Ok("synthetic files, dataset, split, checkpoint, anchors and training reruns identical".into())
}

pub fn assert_ok(outcome: Outcome) {
    match outcome {
        Ok(detail) => eprintln!("{detail}"),
        Err(e) => panic!("{e}"),
    }
}
