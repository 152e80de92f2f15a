//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Run with `cargo test -p cmdlm-cli --test acceptance`;
//! pass criterion numbers as arguments to run a subset.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command as Process;
use std::time::Instant;

use cmdlm::corpus::{measured_snr_db, mix_noise, AudioClip};
use cmdlm::eval::{mcnemar_chi2, mcnemar_counts, mcnemar_exact, wer_pair, MCNEMAR_ALPHA};
use cmdlm::experiment::world::{generic_corpus, GroundedCorpus};
use cmdlm::experiment::{run_experiment, ExperimentConfig};
use cmdlm::grammar::{parse_grammar, Automaton, GrammarError, SampleMode};
use cmdlm::multimodal::{attach_encoder, FeatureSource, VisualFeature};
use cmdlm::ngram::{count_ngrams, estimate, interpolate, prune, NGramLm, Smoothing};
use cmdlm::rnnlm::{param_count, Optimizer, RnnLm, RnnLmConfig, TrainConfig};
use cmdlm::util::rng_from_seed;
use cmdlm::Vocab;
use rand::seq::SliceRandom;
use rand::Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data")
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

// 1 ---------------------------------------------------------------------------

fn parameter_count() -> Outcome {
    let n = param_count(&RnnLmConfig::paper());
    ensure(n == 9_328_400, || format!("got {n}"))?;
    let rel = (9_400_000.0 - n as f64).abs() / 9_400_000.0;
    ensure(rel < 0.01, || format!("{:.2}% from 9.4M", 100.0 * rel))?;
    Ok(format!("{n} parameters, {:.2}% from 9.4M", 100.0 * rel))
}

// 2 ---------------------------------------------------------------------------

fn widened(mut m: RnnLm, seed: u64) -> RnnLm {
    let mut rng = rng_from_seed(seed);
    for p in m.params_mut() {
        *p = rng.gen_range(-0.5..0.5);
    }
    m
}

fn gradient_check() -> Outcome {
    let batch: Vec<Vec<String>> = ["go to the red truck", "turn left now", "stop"]
        .iter()
        .map(|s| words(s))
        .collect();
    let vocab = Vocab::from_corpus(&batch, None);
    let mut worst: f64 = 0.0;
    let mut checked = Vec::new();
    for (layers, tied, feat_dim) in [(2, true, 0), (1, false, 0), (0, true, 0), (2, true, 3), (1, false, 2)] {
        let cfg = RnnLmConfig {
            vocab_size: vocab.len(),
            embed_dim: if tied { 8 } else { 6 },
            hidden_dim: 8,
            num_layers: layers,
            dropout: 0.0,
            tie_embeddings: tied,
        };
        ensure(cfg.vocab_size <= 20, || "toy vocabulary too large".into())?;
        let base = RnnLm::init(cfg, vocab.clone(), 1).map_err(|e| e.to_string())?;
        let report = if feat_dim == 0 {
            widened(base, 7).grad_check(&batch, 1e-4).map_err(|e| e.to_string())?
        } else {
            let mut mm = attach_encoder(&base, feat_dim).map_err(|e| e.to_string())?;
            let mut rng = rng_from_seed(11);
            for p in mm.params_mut() {
                *p = rng.gen_range(-0.5..0.5);
            }
            let pairs: Vec<_> = batch
                .iter()
                .map(|s| {
                    let v = (0..feat_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    (s.clone(), VisualFeature::new(v, FeatureSource::Synthetic).unwrap())
                })
                .collect();
            let proj = mm.projection().len();
            let r = mm.grad_check(&pairs, 1e-4).map_err(|e| e.to_string())?;
            ensure(r.coordinates == mm.num_params() && proj > 0, || {
                "projection parameters not covered".into()
            })?;
            r
        };
        worst = worst.max(report.max_rel_error);
        checked.push(report.coordinates);
        ensure(report.max_rel_error < 1e-4, || {
            format!(
                "layers {layers}, tied {tied}, feat {feat_dim}: {:.3e} at {}",
                report.max_rel_error, report.worst
            )
        })?;
    }
    Ok(format!(
        "max relative error {worst:.2e} over {} configs ({} coordinates, two with a visual projection)",
        checked.len(),
        checked.iter().sum::<usize>()
    ))
}

// 3 ---------------------------------------------------------------------------

/// Largest deviation of a next-word distribution sum from 1.
fn sum_error(probs: impl Iterator<Item = f64>) -> f64 {
    (probs.sum::<f64>() - 1.0).abs()
}

fn random_context(rng: &mut impl Rng, vocab: &Vocab, max_len: usize) -> Vec<u32> {
    let len = rng.gen_range(0..=max_len);
    let mut ctx = Vec::with_capacity(len + 1);
    if rng.gen_bool(0.5) {
        ctx.push(Vocab::BOS_ID);
    }
    ctx.extend((0..len).map(|_| rng.gen_range(Vocab::EOS_ID + 1..vocab.len() as u32)));
    ctx
}

fn normalization() -> Outcome {
    let grammar = std::fs::read_to_string(data_dir().join("toy.grammar")).map_err(|e| e.to_string())?;
    let a = Automaton::compile(&parse_grammar(&grammar).map_err(|e| e.to_string())?);
    let domain = a.sample(400, 3, SampleMode::ProductionUniform).map_err(|e| e.to_string())?;
    let domain: Vec<Vec<String>> = domain.iter().map(|c| c.words().to_vec()).collect();
    let words_all: Vec<&str> = a.words();
    let generic: Vec<Vec<String>> = generic_corpus(&words_all, 30, 800, 4)
        .iter()
        .map(|c| c.words().to_vec())
        .collect();
    let vocab = Vocab::from_corpus(domain.iter().chain(&generic), None);
    let dom = estimate(&count_ngrams(&domain, 4, &vocab).unwrap(), Smoothing::WittenBell).unwrap();
    let gen = estimate(&count_ngrams(&generic, 4, &vocab).unwrap(), Smoothing::KneserNey).unwrap();
    let pruned = prune(&dom, dom.total_ngrams() / 3).unwrap();
    let mix = interpolate(dom.clone(), gen.clone(), 0.9).unwrap();

    let mut rng = rng_from_seed(17);
    let mut worst: [f64; 6] = [0.0; 6];
    let predictable: Vec<u32> = (0..vocab.len() as u32).filter(|&w| w != Vocab::BOS_ID).collect();
    for _ in 0..100 {
        let ctx = random_context(&mut rng, &vocab, 3);
        let ngram_sum = |m: &dyn Fn(u32) -> f64| sum_error(predictable.iter().map(|&w| 10f64.powf(m(w))));
        worst[0] = worst[0].max(ngram_sum(&|w| dom.log10_prob(&ctx, w)));
        worst[1] = worst[1].max(ngram_sum(&|w| gen.log10_prob(&ctx, w)));
        worst[2] = worst[2].max(ngram_sum(&|w| mix.log10_prob(&ctx, w)));
        worst[3] = worst[3].max(ngram_sum(&|w| pruned.log10_prob(&ctx, w)));
    }

    let cfg = RnnLmConfig::small(vocab.len(), 16);
    let mut rnn = RnnLm::init(cfg, vocab.clone(), 5).unwrap();
    let tc = TrainConfig {
        epochs: 1,
        learning_rate: 0.01,
        optimizer: Optimizer::Adam,
        ..TrainConfig::default()
    };
    rnn.train(&domain, &tc).unwrap();
    let mut mm = attach_encoder(&rnn, 4).unwrap();
    for p in mm.params_mut() {
        *p += rng.gen_range(-0.2..0.2);
    }
    for _ in 0..100 {
        let mut ctx = random_context(&mut rng, &vocab, 8);
        ctx.retain(|&w| w != Vocab::BOS_ID);
        let p = rnn.next_word_probs(&ctx);
        ensure(p.len() == vocab.len(), || "RNN distribution is not full-vocabulary".into())?;
        worst[4] = worst[4].max(sum_error(p.into_iter()));
        let v: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let v = VisualFeature::new(v, FeatureSource::Synthetic).unwrap();
        worst[5] = worst[5].max(sum_error(mm.next_word_probs(&ctx, &v).unwrap().into_iter()));
    }
    let names = ["witten-bell", "kneser-ney", "interpolated 0.9", "pruned", "RNN", "MM-RNN"];
    for (n, w) in names.iter().zip(&worst) {
        ensure(*w <= 1e-6, || format!("{n}: |sum - 1| = {w:.3e}"))?;
    }
    let max = worst.iter().cloned().fold(0.0, f64::max);
    Ok(format!("6 models x 100 contexts, max |sum - 1| = {max:.2e}"))
}

// 4 ---------------------------------------------------------------------------

/// A grammar expression for the oracle, independent of the library's AST.
#[derive(Debug, Clone)]
enum G {
    Word(&'static str),
    Rule(usize),
    Seq(Vec<G>),
    Alt(Vec<G>),
    Opt(Box<G>),
}

const ALPHABET: [&str; 6] = ["go", "left", "right", "up", "stop", "now"];

fn random_expr(rng: &mut impl Rng, rule: usize, rules: usize, depth: usize) -> G {
    let leaf = |rng: &mut dyn rand::RngCore| {
        if rule + 1 < rules && rng.gen_bool(0.3) {
            G::Rule(rng.gen_range(rule + 1..rules))
        } else {
            G::Word(ALPHABET[rng.gen_range(0..ALPHABET.len())])
        }
    };
    if depth == 0 {
        return leaf(rng);
    }
    match rng.gen_range(0..10) {
        0..=2 => leaf(rng),
        3..=5 => G::Seq((0..rng.gen_range(2..=3)).map(|_| random_expr(rng, rule, rules, depth - 1)).collect()),
        6..=8 => G::Alt((0..rng.gen_range(2..=3)).map(|_| random_expr(rng, rule, rules, depth - 1)).collect()),
        _ => G::Opt(Box::new(random_expr(rng, rule, rules, depth - 1))),
    }
}

fn render(g: &G, names: &[String]) -> String {
    match g {
        G::Word(w) => format!("\"{w}\""),
        G::Rule(i) => names[*i].clone(),
        G::Seq(v) => v.iter().map(|x| format!("({})", render(x, names))).collect::<Vec<_>>().join(" "),
        G::Alt(v) => format!("({})", v.iter().map(|x| render(x, names)).collect::<Vec<_>>().join(" | ")),
        G::Opt(x) => format!("[{}]", render(x, names)),
    }
}

const EXPANSION_CAP: usize = 20_000;

/// Every string an expression derives, or `None` past the cap.
fn expand(g: &G, rules: &[G]) -> Option<BTreeSet<Vec<&'static str>>> {
    let out: BTreeSet<Vec<&'static str>> = match g {
        G::Word(w) => [vec![*w]].into(),
        G::Rule(i) => expand(&rules[*i], rules)?,
        G::Opt(x) => {
            let mut s = expand(x, rules)?;
            s.insert(Vec::new());
            s
        }
        G::Alt(v) => {
            let mut s = BTreeSet::new();
            for x in v {
                s.extend(expand(x, rules)?);
            }
            s
        }
        G::Seq(v) => {
            let mut acc: BTreeSet<Vec<&'static str>> = [Vec::new()].into();
            for x in v {
                let right = expand(x, rules)?;
                if acc.len() * right.len() > EXPANSION_CAP * 4 {
                    return None;
                }
                acc = acc
                    .iter()
                    .flat_map(|l| right.iter().map(move |r| [l.as_slice(), r.as_slice()].concat()))
                    .collect();
            }
            acc
        }
    };
    (out.len() <= EXPANSION_CAP).then_some(out)
}

fn grammar_oracle() -> Outcome {
    let mut rng = rng_from_seed(2024);
    let (mut checked, mut empty_rejected, mut total) = (0, 0, 0u128);
    let mut attempts = 0;
    while checked < 50 {
        attempts += 1;
        ensure(attempts < 10_000, || "could not draw 50 grammars".into())?;
        let n_rules = rng.gen_range(1..=4);
        let rules: Vec<G> = (0..n_rules).map(|r| random_expr(&mut rng, r, n_rules, 3)).collect();
        let mut names = vec!["command".to_string()];
        names.extend((1..n_rules).map(|i| format!("r{i}")));
        let Some(lang) = expand(&rules[0], &rules) else { continue };
        let text: String = rules
            .iter()
            .zip(&names)
            .map(|(g, n)| format!("{n} = {} ;\n", render(g, &names)))
            .collect();
        let parsed = parse_grammar(&text);
        if lang.contains(&Vec::new()) {
            ensure(matches!(parsed, Err(GrammarError::EmptyCommand(_))), || {
                format!("empty command accepted:\n{text}")
            })?;
            empty_rejected += 1;
            continue;
        }
        if lang.len() > 10_000 {
            continue;
        }
        let a = Automaton::compile(&parsed.map_err(|e| format!("{e}\n{text}"))?);
        let count = a.count_language().map_err(|e| e.to_string())?;
        ensure(count == lang.len() as u128, || {
            format!("count {count} vs oracle {}:\n{text}", lang.len())
        })?;
        let listed: BTreeSet<Vec<String>> = a
            .enumerate(10_000)
            .ok_or("enumeration exceeded the limit")?
            .into_iter()
            .collect();
        let expected: BTreeSet<Vec<String>> = lang
            .iter()
            .map(|s| s.iter().map(|w| w.to_string()).collect())
            .collect();
        ensure(listed == expected, || format!("languages differ:\n{text}"))?;
        total += count;
        checked += 1;
    }
    Ok(format!(
        "50 grammars ({total} strings in all) match; {empty_rejected} grammars deriving the empty command rejected"
    ))
}

// 5 ---------------------------------------------------------------------------

/// Edit distance by the textbook full-matrix recurrence.
fn edit_distance(r: &[String], h: &[String]) -> usize {
    let mut d = vec![vec![0usize; h.len() + 1]; r.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=r.len() {
        for j in 1..=h.len() {
            let sub = d[i - 1][j - 1] + usize::from(r[i - 1] != h[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[r.len()][h.len()]
}

fn wer_oracle() -> Outcome {
    let mut rng = rng_from_seed(5);
    let lex = ["a", "b", "c", "d"];
    let mut draw = |min: usize| -> Vec<String> {
        let n = rng.gen_range(min..=6);
        (0..n).map(|_| lex.choose(&mut rng).unwrap().to_string()).collect()
    };
    let mut total = 0;
    for i in 0..10_000 {
        let r = draw(1);
        let h = draw(0);
        let got = wer_pair(&r, &h).map_err(|e| e.to_string())?;
        let want = edit_distance(&r, &h);
        ensure(got.errors() == want, || format!("pair {i}: {r:?} / {h:?}: {} vs {want}", got.errors()))?;
        ensure(got.ref_words == r.len(), || format!("pair {i}: reference length"))?;
        total += want;
    }
    Ok(format!("10000 pairs agree ({total} edits in all)"))
}

// 6 ---------------------------------------------------------------------------

/// Two-sided exact binomial p-value from the probability mass function.
fn binomial_two_sided(b: u64, c: u64) -> f64 {
    let n = b + c;
    let k = b.min(c);
    let mut coef = 1.0f64;
    let mut tail = 0.0;
    for i in 0..=k {
        if i > 0 {
            coef = coef * (n - i + 1) as f64 / i as f64;
        }
        tail += coef;
    }
    (2.0 * tail / 2f64.powi(n as i32)).min(1.0)
}

fn mcnemar_check() -> Outcome {
    let (stat, p_chi) = mcnemar_chi2(15, 5);
    ensure((stat - 4.05).abs() < 1e-12, || format!("statistic {stat}"))?;
    ensure(p_chi < MCNEMAR_ALPHA, || format!("chi-square p {p_chi} not significant"))?;
    let oracle = binomial_two_sided(15, 5);
    ensure((oracle - 0.0414).abs() < 5e-5, || format!("oracle p {oracle}"))?;
    let exact = mcnemar_exact(15, 5);
    ensure((exact - oracle).abs() < 1e-12, || format!("exact p {exact} vs oracle {oracle}"))?;
    ensure((p_chi < MCNEMAR_ALPHA) == (oracle < MCNEMAR_ALPHA), || "decisions differ".into())?;
    let r = mcnemar_counts(15, 5);
    ensure(r.significant && (r.statistic - 4.05).abs() < 1e-12, || format!("{r:?}"))?;
    Ok(format!(
        "statistic {stat:.2}, chi-square p {p_chi:.4}, exact p {exact:.4}; both significant at 0.05"
    ))
}

// 7 ---------------------------------------------------------------------------

fn snr_mixing() -> Outcome {
    let mut rng = rng_from_seed(7);
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let n_clean = rng.gen_range(200..4000);
        let n_noise = rng.gen_range(50..8000);
        let amp = rng.gen_range(0.05..0.8);
        let clean: Vec<f64> = (0..n_clean)
            .map(|t| amp * (t as f64 * rng.gen_range(0.01..0.3)).sin() + rng.gen_range(-0.01..0.01))
            .collect();
        let noise: Vec<f64> = (0..n_noise).map(|_| rng.gen_range(-1.0..1.0) * rng.gen_range(0.0..0.5)).collect();
        let c = AudioClip::new(clean, 16_000).map_err(|e| e.to_string())?;
        let n = AudioClip::new(noise, 16_000).map_err(|e| e.to_string())?;
        let m = mix_noise(&c, &n, 10.0, i).map_err(|e| e.to_string())?;
        let added: Vec<f64> = m.mixed.samples().iter().zip(c.samples()).map(|(x, y)| x - y).collect();
        let snr = measured_snr_db(c.samples(), &added);
        worst = worst.max((snr - 10.0).abs());
        ensure((snr - 10.0).abs() <= 0.01, || format!("pair {i}: {snr:.4} dB"))?;
    }
    Ok(format!("20 pairs within {worst:.2e} dB of 10 dB"))
}

// 8 ---------------------------------------------------------------------------

fn toy_config(seed: u64) -> ExperimentConfig {
    let d = data_dir();
    let mut cfg = ExperimentConfig::new(d.join("toy.grammar"));
    cfg.seed = seed;
    cfg.rows = vec![1, 2, 3, 4];
    cfg.baseline = true;
    cfg.folds.sizes = vec![32, 128, 512];
    cfg.folds.folds_per_size = 3;
    cfg.eval.size = 200;
    cfg.channel.confusion = Some(d.join("toy_confusions.tsv"));
    cfg.generic.sentences = 1000;
    cfg.generic.fillers = 50;
    cfg.ngram.small_budget = 1000;
    cfg.ngram.large_budget = 5000;
    cfg
}

fn adaptation_trend() -> Outcome {
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    for seed in 1..=5 {
        let cfg = toy_config(seed);
        let run = run_experiment(&cfg).map_err(|e| e.to_string())?;
        let r = &run.report;
        let m = |row, n| r.mean_wer(row, n).expect("cell present") * 100.0;
        let fsg: Vec<f64> = cfg.folds.sizes.iter().map(|&n| m(1, n)).collect();
        let largest = *cfg.folds.sizes.last().unwrap();
        let (base, adapted) = (m(0, largest), m(2, largest));
        let (ngram_rescore, rnn_rescore) = (m(3, largest), m(4, largest));
        let a = fsg.windows(2).all(|w| w[1] < w[0]);
        let b = base - adapted > 0.0;
        let c = rnn_rescore <= ngram_rescore;
        lines.push(format!(
            "seed {seed}: FSG {} | generic {base:.2} vs adapted {adapted:.2} | n-gram {ngram_rescore:.2} vs RNN {rnn_rescore:.2}",
            fsg.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(" > ")
        ));
        for (ok, what) in [(a, "a"), (b, "b"), (c, "c")] {
            if !ok {
                failures.push(format!("seed {seed} ({what})"));
            }
        }
    }
    for l in &lines {
        println!("      {l}");
    }
    ensure(failures.is_empty(), || format!("failed: {}", failures.join(", ")))?;
    Ok("(a) FSG decreasing, (b) adapted < generic, (c) RNN <= n-gram rescoring in 5/5 seeds".into())
}

// 9 ---------------------------------------------------------------------------

fn multimodal_benefit() -> Outcome {
    let mut lines = Vec::new();
    let mut fails = Vec::new();
    for seed in 1..=5u64 {
        let g = GroundedCorpus::generate(2000, 300, 8, seed);
        let train_text = g.train_text();
        let vocab = Vocab::from_corpus(&train_text, None);
        let cfg = RnnLmConfig::small(vocab.len(), 16);
        let tc = TrainConfig {
            epochs: 10,
            learning_rate: 0.01,
            batch_size: 16,
            optimizer: Optimizer::Adam,
            seed,
            ..TrainConfig::default()
        };
        let mut base = RnnLm::init(cfg, vocab, seed).unwrap();
        base.train(&train_text, &tc).map_err(|e| e.to_string())?;
        // Both continuations get the same extra budget from the shared base.
        let more = TrainConfig { epochs: 20, ..tc.clone() };
        let mut text_only = base.clone();
        text_only.train(&train_text, &more).map_err(|e| e.to_string())?;
        let mut mm = attach_encoder(&base, g.feat_dim).unwrap();
        mm.train(&g.train, &more).map_err(|e| e.to_string())?;

        let ppl_text = text_only.perplexity(&g.heldout_text());
        let ppl_mm = mm.perplexity(&g.heldout).unwrap();
        let ppl_zero = mm.perplexity(&g.heldout_zeroed()).unwrap();
        let rel = (ppl_zero - ppl_text).abs() / ppl_text;
        lines.push(format!(
            "seed {seed}: text-only {ppl_text:.3}, MM {ppl_mm:.3}, MM zero-feature {ppl_zero:.3} ({:.2}%)",
            100.0 * rel
        ));
        if ppl_mm >= ppl_text {
            fails.push(format!("seed {seed}: MM not better"));
        }
        if rel > 0.02 {
            fails.push(format!("seed {seed}: zero-feature off by {:.2}%", 100.0 * rel));
        }
    }
    for l in &lines {
        println!("      {l}");
    }
    ensure(fails.is_empty(), || fails.join("; "))?;
    Ok("MM-RNN lower held-out perplexity in 5/5 seeds; zero-feature within 2% of text-only".into())
}

// 10 --------------------------------------------------------------------------

fn finetune_claim() -> Outcome {
    let grammar = std::fs::read_to_string(data_dir().join("toy.grammar")).map_err(|e| e.to_string())?;
    let a = Automaton::compile(&parse_grammar(&grammar).map_err(|e| e.to_string())?);
    let mut lines = Vec::new();
    for seed in 1..=5u64 {
        let to_words = |v: Vec<cmdlm::Command>| -> Vec<Vec<String>> { v.iter().map(|c| c.words().to_vec()).collect() };
        let target_train = to_words(a.sample(128, seed, SampleMode::ProductionUniform).unwrap());
        let target_test = to_words(a.sample(200, seed + 100, SampleMode::ProductionUniform).unwrap());
        let source = to_words(generic_corpus(&a.words(), 50, 1000, seed));
        let vocab = Vocab::from_corpus(source.iter().chain(&target_train), None);
        let mut m = RnnLm::init(RnnLmConfig::small(vocab.len(), 16), vocab, seed).unwrap();
        let tc = TrainConfig {
            epochs: 3,
            learning_rate: 0.01,
            batch_size: 16,
            optimizer: Optimizer::Adam,
            seed,
            ..TrainConfig::default()
        };
        m.train(&source, &tc).map_err(|e| e.to_string())?;
        let before = m.perplexity(&target_test);
        m.finetune(&target_train, 25, &tc).map_err(|e| e.to_string())?;
        let after = m.perplexity(&target_test);
        ensure(after < before, || format!("seed {seed}: {before:.3} -> {after:.3}"))?;
        lines.push(format!("{before:.1}->{after:.2}"));
    }
    Ok(format!("target perplexity fell in 5/5 seeds: {}", lines.join(", ")))
}

// 11 --------------------------------------------------------------------------

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = |name: &str| -> Result<(Vec<u8>, PathBuf), String> {
        let out = dir.path().join(name);
        let o = Process::new(env!("CARGO_BIN_EXE_cmdlm"))
            .args(["exp", "run", "--config"])
            .arg(data_dir().join("toy.toml"))
            .args(["--sizes", "32,128", "--folds", "2", "--eval-size", "60", "--out"])
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        ensure(o.status.success(), || String::from_utf8_lossy(&o.stderr).into_owned())?;
        Ok((o.stdout, out))
    };
    let (s1, d1) = run("first")?;
    let (s2, d2) = run("second")?;
    ensure(s1 == s2, || "stdout differs".into())?;
    for f in ["report.txt", "cells.tsv"] {
        let a = std::fs::read(d1.join(f)).map_err(|e| e.to_string())?;
        let b = std::fs::read(d2.join(f)).map_err(|e| e.to_string())?;
        ensure(a == b, || format!("{f} differs"))?;
    }
    Ok(format!("two uncached runs, report.txt and cells.tsv byte-identical ({} bytes)", s1.len()))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 11] = [
        ("parameter count", parameter_count),
        ("gradient check", gradient_check),
        ("normalization", normalization),
        ("grammar oracle", grammar_oracle),
        ("WER oracle", wer_oracle),
        ("McNemar", mcnemar_check),
        ("SNR mixing", snr_mixing),
        ("adaptation trend", adaptation_trend),
        ("multimodal benefit", multimodal_benefit),
        ("fine-tuning", finetune_claim),
        ("determinism", determinism),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS [{n:>2}] {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{n:>2}] {name} ({secs:.1}s): {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
