//! `ngram`, `rnnlm` and `mmrnn` subcommands.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use cmdlm::multimodal::{attach_encoder, read_features, FeatureSource, MmRnnLm, VisualFeature};
use cmdlm::ngram::{count_ngrams, estimate, interpolate, prune, write_arpa, NGramLm, Smoothing};
use cmdlm::rescore::SentenceScorer;
use cmdlm::rnnlm::{save_checkpoint, Optimizer, RnnLm, RnnLmConfig, TrainConfig, MAX_CHECK_HIDDEN, MAX_CHECK_VOCAB};
use cmdlm::util::rng_from_seed;
use cmdlm::Vocab;
use rand::Rng as _;

use crate::error::CliError;
use crate::io::{read_sentences, read_text, read_word_list, write_output};
use crate::models::{load_arpa, load_mm, load_rnn, MixtureComponent, MixtureSpec, Model};

#[derive(Debug, Subcommand)]
pub enum NGramCmd {
    /// Estimate a backoff model and write it as ARPA.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 4)]
        order: usize,
        /// witten-bell or kneser-ney.
        #[arg(long, default_value = "witten-bell")]
        smoothing: String,
        /// Full word list, one per line. Models to be interpolated must share one.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Write a mixture spec that interpolates two ARPA models at query time.
    Interpolate {
        #[arg(long)]
        domain: PathBuf,
        #[arg(long)]
        generic: PathBuf,
        /// Weight of the domain model.
        #[arg(long, default_value_t = 0.9)]
        lambda: f64,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Drop the least useful n-grams until at most `--max-ngrams` remain.
    Prune {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        max_ngrams: usize,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Perplexity of an ARPA model or mixture spec on a text file.
    Ppl(ModelText),
    /// Natural-log probability of each sentence.
    Score(ModelText),
}

#[derive(Debug, Args)]
pub struct ModelText {
    #[arg(long)]
    pub model: PathBuf,
    /// One sentence per line.
    #[arg(long)]
    pub text: PathBuf,
}

/// Optimizer flags shared by every training subcommand.
#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    pub lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    pub batch_size: usize,
    /// Truncated backpropagation length; whole sentences when omitted.
    #[arg(long)]
    pub bptt: Option<usize>,
    #[arg(long, default_value_t = TrainConfig::default().clip_norm)]
    pub clip_norm: f64,
    /// sgd or adam.
    #[arg(long, default_value = "sgd")]
    pub optimizer: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl TrainArgs {
    fn config(&self, epochs: usize) -> Result<TrainConfig, CliError> {
        Ok(TrainConfig {
            learning_rate: self.lr,
            epochs,
            batch_size: self.batch_size,
            bptt: self.bptt,
            clip_norm: self.clip_norm,
            seed: self.seed,
            optimizer: self.optimizer.parse::<Optimizer>()?,
        })
    }
}

#[derive(Debug, Subcommand)]
pub enum RnnCmd {
    /// Train a recurrent LM from scratch and write a checkpoint.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// Fixed word list, one per line; otherwise the most frequent corpus words.
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Vocabulary cap, reserved tokens included.
        #[arg(long, default_value_t = 10_000)]
        max_vocab: usize,
        /// Embedding and hidden size.
        #[arg(long, default_value_t = 512)]
        dim: usize,
        #[arg(long, default_value_t = 2)]
        layers: usize,
        #[arg(long, default_value_t = 0.0)]
        dropout: f64,
        /// Separate output matrix instead of the tied embedding.
        #[arg(long)]
        untied: bool,
        #[arg(long, default_value_t = TrainConfig::default().epochs)]
        epochs: usize,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Continue training a checkpoint on in-domain sentences.
    Finetune {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 25)]
        epochs: usize,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Perplexity of a text-only checkpoint.
    Ppl(ModelText),
    /// Natural-log probability of each sentence.
    Score(ModelText),
    /// Compare analytic gradients with central differences on a toy model.
    Gradcheck {
        /// Check this checkpoint instead of a fresh toy model.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Sentences for the check batch; a built-in batch when omitted.
        #[arg(long)]
        text: Option<PathBuf>,
        #[arg(long, default_value_t = 6)]
        dim: usize,
        #[arg(long, default_value_t = 2)]
        layers: usize,
        #[arg(long)]
        untied: bool,
        /// Attach a visual encoder of this dimension and check it too.
        #[arg(long)]
        feat_dim: Option<usize>,
        #[arg(long, default_value_t = 1e-4)]
        eps: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Subcommand)]
pub enum MmCmd {
    /// Add a zero-initialized visual projection to a text-only checkpoint.
    Attach {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        feat_dim: usize,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Train a multimodal checkpoint on image-sentence pairs.
    Train {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        pairs: PairArgs,
        #[arg(long, default_value_t = TrainConfig::default().epochs)]
        epochs: usize,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Natural-log probability of each pair's sentence given its image.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        pairs: PairArgs,
    },
}

#[derive(Debug, Args)]
pub struct PairArgs {
    /// `image_id<TAB>sentence` lines; `NONE` pairs the sentence with the zero feature.
    #[arg(long)]
    pub pairs: PathBuf,
    /// `id<TAB>d<TAB>v1 .. vd` feature records.
    #[arg(long)]
    pub features: PathBuf,
}

fn vocab_for(sentences: &[Vec<String>], list: Option<&Path>, cap: Option<usize>) -> Result<Vocab, CliError> {
    Ok(match list {
        Some(p) => Vocab::from_words(read_word_list(p)?),
        None => Vocab::from_corpus(sentences, cap),
    })
}

fn write_scores(scorer: &dyn SentenceScorer, text: &Path) -> Result<(), CliError> {
    let mut out = String::new();
    for s in read_sentences(text)? {
        let lp = scorer.score(&s, None)?;
        let _ = writeln!(out, "{lp:.6}\t{}", s.join(" "));
    }
    write_output(None, out.as_bytes())
}

fn write_ppl(ppl: f64, sentences: &[Vec<String>]) -> Result<(), CliError> {
    let tokens: usize = sentences.iter().map(|s| s.len() + 1).sum();
    let line = format!("ppl {ppl:.4}\tsentences {}\ttokens {tokens}\n", sentences.len());
    write_output(None, line.as_bytes())
}

pub fn run_ngram(cmd: NGramCmd) -> Result<(), CliError> {
    match cmd {
        NGramCmd::Train {
            corpus,
            order,
            smoothing,
            vocab,
            out,
        } => {
            let smoothing: Smoothing = smoothing.parse()?;
            let sents = read_sentences(&corpus)?;
            let v = vocab_for(&sents, vocab.as_deref(), None)?;
            let m = estimate(&count_ngrams(&sents, order, &v)?, smoothing)?;
            log::info!("n-grams per order: {:?}", m.sizes());
            write_output(out.as_deref(), write_arpa(&m).as_bytes())
        }
        NGramCmd::Interpolate {
            domain,
            generic,
            lambda,
            out,
        } => {
            // building the mixture checks the weight and the shared vocabulary
            interpolate(load_arpa(&domain)?, load_arpa(&generic)?, lambda)?;
            let abs = |p: &Path| std::path::absolute(p).map_err(|e| CliError::io(p, e));
            let spec = MixtureSpec {
                components: vec![
                    MixtureComponent {
                        model: abs(&domain)?,
                        weight: lambda,
                    },
                    MixtureComponent {
                        model: abs(&generic)?,
                        weight: 1.0 - lambda,
                    },
                ],
            };
            let mut json = serde_json::to_string_pretty(&spec)?;
            json.push('\n');
            write_output(out.as_deref(), json.as_bytes())
        }
        NGramCmd::Prune { model, max_ngrams, out } => {
            let m = load_arpa(&model)?;
            let p = prune(&m, max_ngrams)?;
            log::info!("{} -> {} n-grams", m.total_ngrams(), p.total_ngrams());
            write_output(out.as_deref(), write_arpa(&p).as_bytes())
        }
        NGramCmd::Ppl(a) => {
            let sents = read_sentences(&a.text)?;
            let ppl = match Model::load(&a.model)? {
                Model::NGram(m) => m.perplexity(&sents),
                Model::Mixture(m) => m.perplexity(&sents),
                other => return Err(not_ngram(&a.model, other.kind())),
            };
            write_ppl(ppl, &sents)
        }
        NGramCmd::Score(a) => {
            let m = Model::load(&a.model)?;
            if !matches!(m, Model::NGram(_) | Model::Mixture(_)) {
                return Err(not_ngram(&a.model, m.kind()));
            }
            write_scores(m.scorer(), &a.text)
        }
    }
}

fn not_ngram(path: &Path, kind: &str) -> CliError {
    CliError::Data(format!(
        "{}: expected an ARPA model or mixture spec, found {kind}",
        path.display()
    ))
}

fn save(path: &Path, m: &RnnLm) -> Result<(), CliError> {
    write_output(Some(path), &save_checkpoint(m))
}

fn log_losses(losses: &[f64]) {
    for (i, l) in losses.iter().enumerate() {
        log::info!("epoch {}: loss {l:.4}", i + 1);
    }
}

const GRADCHECK_BATCH: [&str; 3] = ["turn left now", "go to the red truck", "stop"];

pub fn run_rnn(cmd: RnnCmd) -> Result<(), CliError> {
    match cmd {
        RnnCmd::Train {
            corpus,
            vocab,
            max_vocab,
            dim,
            layers,
            dropout,
            untied,
            epochs,
            train,
            out,
        } => {
            let sents = read_sentences(&corpus)?;
            let v = vocab_for(&sents, vocab.as_deref(), Some(max_vocab))?;
            let cfg = RnnLmConfig {
                vocab_size: v.len(),
                embed_dim: dim,
                hidden_dim: dim,
                num_layers: layers,
                dropout,
                tie_embeddings: !untied,
            };
            let tc = train.config(epochs)?;
            let mut m = RnnLm::init(cfg, v, tc.seed)?;
            log_losses(&m.train(&sents, &tc)?);
            save(&out, &m)
        }
        RnnCmd::Finetune {
            model,
            corpus,
            epochs,
            train,
            out,
        } => {
            let sents = read_sentences(&corpus)?;
            let tc = train.config(epochs)?;
            match Model::load(&model)? {
                Model::Rnn(mut m) => {
                    log::info!("before: ppl {:.4}", m.perplexity(&sents));
                    log_losses(&m.finetune(&sents, tc.epochs, &tc)?);
                    log::info!("after: ppl {:.4}", m.perplexity(&sents));
                    save(&out, &m)
                }
                Model::Mm(mut m) => {
                    let zeros: Vec<_> = sents
                        .iter()
                        .map(|s| (s.clone(), VisualFeature::zeros(m.feat_dim())))
                        .collect();
                    log_losses(&m.finetune(&zeros, tc.epochs, &tc)?);
                    save(&out, m.lm())
                }
                other => Err(CliError::Data(format!(
                    "{}: expected a recurrent checkpoint, found {}",
                    model.display(),
                    other.kind()
                ))),
            }
        }
        RnnCmd::Ppl(a) => {
            let sents = read_sentences(&a.text)?;
            let m = load_rnn(&a.model)?;
            write_ppl(m.perplexity(&sents), &sents)
        }
        RnnCmd::Score(a) => write_scores(&load_rnn(&a.model)?, &a.text),
        RnnCmd::Gradcheck {
            model,
            text,
            dim,
            layers,
            untied,
            feat_dim,
            eps,
            tol,
            seed,
        } => {
            let batch: Vec<Vec<String>> = match &text {
                Some(p) => read_sentences(p)?,
                None => GRADCHECK_BATCH
                    .iter()
                    .map(|s| s.split(' ').map(String::from).collect())
                    .collect(),
            };
            let fresh = model.is_none();
            let lm = match &model {
                Some(p) => load_rnn(p)?,
                None => {
                    let v = Vocab::from_corpus(&batch, Some(MAX_CHECK_VOCAB));
                    let cfg = RnnLmConfig {
                        vocab_size: v.len(),
                        embed_dim: dim.min(MAX_CHECK_HIDDEN),
                        hidden_dim: dim.min(MAX_CHECK_HIDDEN),
                        num_layers: layers,
                        dropout: 0.0,
                        tie_embeddings: !untied,
                    };
                    RnnLm::init(cfg, v, seed)?
                }
            };
            // wider than the training init, so gradients stand clear of the
            // finite-difference noise floor
            let mut rng = rng_from_seed(seed);
            let mut widen = |params: &mut [f64]| {
                if fresh {
                    params.iter_mut().for_each(|x| *x = rng.gen_range(-0.5..0.5));
                }
            };
            let report = match feat_dim {
                None => {
                    let mut lm = lm;
                    widen(lm.params_mut());
                    lm.grad_check(&batch, eps)?
                }
                Some(d) => {
                    let mut mm = attach_encoder(&lm, d)?;
                    widen(mm.params_mut());
                    let n = mm.projection().len();
                    let len = mm.params_mut().len();
                    // a zero projection would hide errors in its own gradient
                    if !fresh {
                        for x in &mut mm.params_mut()[len - n..] {
                            *x = rng.gen_range(-0.1..0.1);
                        }
                    }
                    let pairs: Vec<_> = batch
                        .iter()
                        .map(|s| {
                            let v = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                            (s.clone(), VisualFeature::new(v, FeatureSource::Synthetic).expect("finite"))
                        })
                        .collect();
                    mm.grad_check(&pairs, eps)?
                }
            };
            let verdict = if report.max_rel_error < tol { "PASS" } else { "FAIL" };
            let line = format!(
                "max relative error {:.3e} at parameter {} of {} (tolerance {tol:.0e}): {verdict}\n",
                report.max_rel_error, report.worst, report.coordinates
            );
            write_output(None, line.as_bytes())?;
            if report.max_rel_error < tol {
                Ok(())
            } else {
                Err(CliError::Data("gradient check failed".into()))
            }
        }
    }
}

fn read_pairs(a: &PairArgs, feat_dim: usize) -> Result<Vec<(Vec<String>, VisualFeature)>, CliError> {
    let source = a.features.display().to_string();
    let feats: BTreeMap<String, VisualFeature> =
        read_features(&read_text(&a.features)?, &source).map_err(|e| CliError::from(e).in_file(&a.features))?;
    let text = read_text(&a.pairs)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |m: String| CliError::Data(format!("{} line {}: {m}", a.pairs.display(), i + 1));
        let (id, sentence) = line
            .split_once('\t')
            .ok_or_else(|| bad("expected `image_id<TAB>sentence`".into()))?;
        let words = cmdlm::command::normalize_words(sentence);
        if words.is_empty() {
            return Err(bad("empty sentence".into()));
        }
        let f = match id.trim() {
            "NONE" => VisualFeature::zeros(feat_dim),
            id => feats
                .get(id)
                .cloned()
                .ok_or_else(|| bad(format!("no feature for image `{id}`")))?,
        };
        out.push((words, f));
    }
    if out.is_empty() {
        return Err(CliError::Data(format!("{}: no pairs", a.pairs.display())));
    }
    Ok(out)
}

pub fn run_mm(cmd: MmCmd) -> Result<(), CliError> {
    match cmd {
        MmCmd::Attach { model, feat_dim, out } => {
            let mm = attach_encoder(&load_rnn(&model)?, feat_dim)?;
            save(&out, mm.lm())
        }
        MmCmd::Train {
            model,
            pairs,
            epochs,
            train,
            out,
        } => {
            let mut mm: MmRnnLm = load_mm(&model)?;
            let data = read_pairs(&pairs, mm.feat_dim())?;
            let tc = train.config(epochs)?;
            log_losses(&mm.train(&data, &tc)?);
            log::info!("training ppl {:.4}", mm.perplexity(&data)?);
            save(&out, mm.lm())
        }
        MmCmd::Score { model, pairs } => {
            let mm = load_mm(&model)?;
            let data = read_pairs(&pairs, mm.feat_dim())?;
            let mut out = String::new();
            for (s, v) in &data {
                let _ = writeln!(out, "{:.6}\t{}", mm.score(s, v)?, s.join(" "));
            }
            log::info!("ppl {:.4}", mm.perplexity(&data)?);
            write_output(None, out.as_bytes())
        }
    }
}
