//! Stacked LSTM language model with tied input/output embeddings.

mod checkpoint;
mod gradcheck;
pub(crate) mod net;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use gradcheck::{compare_gradients, GradCheckReport, MAX_CHECK_HIDDEN, MAX_CHECK_VOCAB};

use crate::util::rng_from_seed;
use crate::vocab::Vocab;
use net::{Dropout, Layout};

#[derive(Debug, Error, PartialEq)]
pub enum RnnError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("invalid training config: {0}")]
    InvalidTrainConfig(String),
    #[error("vocabulary has {vocab} words but the model expects {config}")]
    VocabMismatch { config: usize, vocab: usize },
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("training diverged in epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("feature has dimension {got}, model expects {expected}")]
    FeatureDim { expected: usize, got: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnLmConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    /// Dropout rate on non-recurrent connections, in `[0, 1)`.
    pub dropout: f64,
    pub tie_embeddings: bool,
}

impl RnnLmConfig {
    /// Two 512-unit layers over a 10,000-word vocabulary, tied.
    pub fn paper() -> Self {
        RnnLmConfig {
            vocab_size: 10_000,
            embed_dim: 512,
            hidden_dim: 512,
            num_layers: 2,
            dropout: 0.0,
            tie_embeddings: true,
        }
    }

    pub fn small(vocab_size: usize, dim: usize) -> Self {
        RnnLmConfig {
            vocab_size,
            embed_dim: dim,
            hidden_dim: dim,
            num_layers: 2,
            dropout: 0.0,
            tie_embeddings: true,
        }
    }

    pub fn validate(&self) -> Result<(), RnnError> {
        let bad = |m: &str| Err(RnnError::InvalidConfig(m.to_string()));
        if self.vocab_size == 0 || self.embed_dim == 0 || self.hidden_dim == 0 {
            return bad("dimensions must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        let top = if self.num_layers == 0 {
            self.embed_dim
        } else {
            self.hidden_dim
        };
        if self.tie_embeddings && top != self.embed_dim {
            return bad("tied embeddings need embed_dim == hidden_dim");
        }
        Ok(())
    }
}

/// Number of parameters of the text-only model:
/// `V·E + Σ_l 4·(H·(in_l + H) + H) + V`, plus `V·H` when untied.
pub fn param_count(cfg: &RnnLmConfig) -> usize {
    let (v, e, h) = (cfg.vocab_size, cfg.embed_dim, cfg.hidden_dim);
    let cells: usize = (0..cfg.num_layers)
        .map(|l| {
            let input = if l == 0 { e } else { h };
            4 * (h * (input + h) + h)
        })
        .sum();
    let top = if cfg.num_layers == 0 { e } else { h };
    let untied = if cfg.tie_embeddings { 0 } else { v * top };
    v * e + cells + untied + v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    #[default]
    Sgd,
    Adam,
}

impl std::str::FromStr for Optimizer {
    type Err = RnnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            _ => Err(RnnError::InvalidTrainConfig(format!("unknown optimizer `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Sentences per update.
    pub batch_size: usize,
    /// Truncation length for backpropagation; `None` means whole sentences.
    pub bptt: Option<usize>,
    pub clip_norm: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1.0,
            epochs: 10,
            batch_size: 8,
            bptt: None,
            clip_norm: 5.0,
            seed: 0,
            optimizer: Optimizer::Sgd,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), RnnError> {
        let bad = |m: &str| Err(RnnError::InvalidTrainConfig(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return bad("clip norm must be positive");
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return bad("learning rate must be finite and nonnegative");
        }
        if self.batch_size == 0 || self.bptt == Some(0) {
            return bad("batch size and truncation length must be positive");
        }
        Ok(())
    }
}

/// One training sequence: `<s> w1 .. wn </s>` ids and an optional feature.
pub(crate) struct Example<'a> {
    pub ids: Vec<u32>,
    pub feature: Option<&'a [f64]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RnnLm {
    config: RnnLmConfig,
    vocab: Vocab,
    params: Vec<f64>,
    /// Visual feature dimension; 0 for a text-only model.
    pub(crate) feat_dim: usize,
}

impl RnnLm {
    /// Uniform `[-0.05, 0.05]` initialization with forget-gate biases at 1.
    pub fn init(config: RnnLmConfig, vocab: Vocab, seed: u64) -> Result<Self, RnnError> {
        let mut m = RnnLm::zeros(config, vocab)?;
        let mut rng = rng_from_seed(seed);
        for x in m.params.iter_mut() {
            *x = rng.gen_range(-0.05..=0.05);
        }
        let lay = m.layout();
        let h = lay.hidden;
        for cell in &lay.cells {
            m.params[cell.b + h..cell.b + 2 * h].fill(1.0);
        }
        Ok(m)
    }

    pub fn zeros(config: RnnLmConfig, vocab: Vocab) -> Result<Self, RnnError> {
        config.validate()?;
        if vocab.len() != config.vocab_size {
            return Err(RnnError::VocabMismatch {
                config: config.vocab_size,
                vocab: vocab.len(),
            });
        }
        let n = param_count(&config);
        Ok(RnnLm {
            config,
            vocab,
            params: vec![0.0; n],
            feat_dim: 0,
        })
    }

    pub(crate) fn from_parts(
        config: RnnLmConfig,
        vocab: Vocab,
        params: Vec<f64>,
        feat_dim: usize,
    ) -> Result<Self, RnnError> {
        let m = RnnLm {
            config,
            vocab,
            params: Vec::new(),
            feat_dim,
        };
        m.config.validate()?;
        let want = m.layout().total;
        if params.len() != want || m.vocab.len() != m.config.vocab_size {
            return Err(RnnError::Checkpoint(format!(
                "expected {want} parameters over {} words, found {} over {}",
                m.config.vocab_size,
                params.len(),
                m.vocab.len()
            )));
        }
        Ok(RnnLm { params, ..m })
    }

    pub(crate) fn layout(&self) -> Layout {
        Layout::new(&self.config, self.feat_dim)
    }

    /// Visual feature dimension; 0 for a text-only model.
    pub fn feat_dim(&self) -> usize {
        self.feat_dim
    }

    pub fn config(&self) -> &RnnLmConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// `V × E`, row per word.
    pub fn embedding(&self) -> &[f64] {
        let lay = self.layout();
        &self.params[lay.emb..lay.emb + lay.vocab * lay.embed]
    }

    pub fn embedding_mut(&mut self) -> &mut [f64] {
        let lay = self.layout();
        &mut self.params[lay.emb..lay.emb + lay.vocab * lay.embed]
    }

    /// Output projection `V × top`. With tied embeddings this is the same
    /// storage as [`RnnLm::embedding`].
    pub fn output_weights(&self) -> &[f64] {
        let lay = self.layout();
        &self.params[lay.out_w..lay.out_w + lay.vocab * lay.top()]
    }

    pub fn forget_bias(&self, layer: usize) -> &[f64] {
        let lay = self.layout();
        let b = lay.cells[layer].b;
        &self.params[b + lay.hidden..b + 2 * lay.hidden]
    }

    pub(crate) fn sentence_ids<S: AsRef<str>>(&self, words: &[S]) -> Vec<u32> {
        let mut ids = Vec::with_capacity(words.len() + 2);
        ids.push(Vocab::BOS_ID);
        ids.extend(self.vocab.encode(words));
        ids.push(Vocab::EOS_ID);
        ids
    }

    pub(crate) fn check_feature(&self, feature: Option<&[f64]>) -> Result<(), RnnError> {
        match feature {
            Some(v) if v.len() != self.feat_dim => Err(RnnError::FeatureDim {
                expected: self.feat_dim,
                got: v.len(),
            }),
            _ => Ok(()),
        }
    }

    pub(crate) fn ids_logprob(&self, ids: &[u32], feature: Option<&[f64]>) -> f64 {
        -net::sequence_loss(&self.layout(), &self.params, ids, feature, None, usize::MAX, None)
    }

    /// Natural-log probability of `<s> words </s>`; unknown words map to `<unk>`.
    pub fn sentence_logprob<S: AsRef<str>>(&self, words: &[S]) -> f64 {
        self.ids_logprob(&self.sentence_ids(words), None)
    }

    /// Next-word distribution over the full vocabulary after `<s>` and `context`.
    pub fn next_word_probs(&self, context: &[u32]) -> Vec<f64> {
        let mut ids = vec![Vocab::BOS_ID];
        ids.extend_from_slice(context);
        net::next_distribution(&self.layout(), &self.params, &ids, None)
    }

    /// `exp(-mean token ln-prob)` with the end token counted.
    pub fn perplexity<S: AsRef<[String]>>(&self, corpus: &[S]) -> f64 {
        let (lp, n) = corpus.iter().fold((0.0, 0usize), |(lp, n), s| {
            (lp + self.sentence_logprob(s.as_ref()), n + s.as_ref().len() + 1)
        });
        (-lp / n as f64).exp()
    }

    /// Trains on whitespace-tokenized sentences. Returns the mean per-token
    /// training loss of each epoch.
    pub fn train<S: AsRef<[String]>>(
        &mut self,
        corpus: &[S],
        tc: &TrainConfig,
    ) -> Result<Vec<f64>, RnnError> {
        let examples: Vec<Example> = corpus
            .iter()
            .map(|s| Example {
                ids: self.sentence_ids(s.as_ref()),
                feature: None,
            })
            .collect();
        self.fit(&examples, tc)
    }

    /// Continues training on a target corpus for a fixed number of epochs.
    /// Zero epochs leaves the model untouched.
    pub fn finetune<S: AsRef<[String]>>(
        &mut self,
        corpus: &[S],
        epochs: usize,
        tc: &TrainConfig,
    ) -> Result<Vec<f64>, RnnError> {
        if epochs == 0 {
            return Ok(Vec::new());
        }
        self.train(corpus, &TrainConfig { epochs, ..tc.clone() })
    }

    pub(crate) fn fit(&mut self, examples: &[Example], tc: &TrainConfig) -> Result<Vec<f64>, RnnError> {
        tc.validate()?;
        if examples.is_empty() {
            return Err(RnnError::EmptyCorpus);
        }
        for ex in examples {
            self.check_feature(ex.feature)?;
        }
        let lay = self.layout();
        let n = self.params.len();
        let bptt = tc.bptt.unwrap_or(usize::MAX);
        let mut rng = rng_from_seed(tc.seed);
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let mut grad = vec![0.0; n];
        let mut opt = OptimizerState::new(tc.optimizer, n);
        let mut history = Vec::with_capacity(tc.epochs);
        for epoch in 1..=tc.epochs {
            order.shuffle(&mut rng);
            let (mut total, mut tokens) = (0.0, 0usize);
            for batch in order.chunks(tc.batch_size) {
                grad.fill(0.0);
                let mut btokens = 0usize;
                let mut bloss = 0.0;
                for &i in batch {
                    let ex = &examples[i];
                    let dropout = (self.config.dropout > 0.0).then_some(Dropout {
                        rate: self.config.dropout,
                        rng: &mut rng,
                    });
                    bloss += net::sequence_loss(
                        &lay,
                        &self.params,
                        &ex.ids,
                        ex.feature,
                        dropout,
                        bptt,
                        Some(&mut grad),
                    );
                    btokens += ex.ids.len() - 1;
                }
                if !bloss.is_finite() {
                    return Err(RnnError::Diverged { epoch, loss: bloss });
                }
                let scale = 1.0 / btokens as f64;
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt() * scale;
                if !norm.is_finite() {
                    return Err(RnnError::Diverged { epoch, loss: norm });
                }
                let clip = if norm > tc.clip_norm { tc.clip_norm / norm } else { 1.0 };
                for g in grad.iter_mut() {
                    *g *= scale * clip;
                }
                opt.step(&mut self.params, &grad, tc.learning_rate);
                total += bloss;
                tokens += btokens;
            }
            let mean = total / tokens as f64;
            log::debug!("epoch {epoch}: loss {mean:.4}");
            if !mean.is_finite() {
                return Err(RnnError::Diverged { epoch, loss: mean });
            }
            history.push(mean);
        }
        Ok(history)
    }

    /// Rounds every parameter to the nearest `f32`, the checkpoint precision.
    pub fn round_to_f32(&mut self) {
        for p in self.params.iter_mut() {
            *p = *p as f32 as f64;
        }
    }
}

enum OptimizerState {
    Sgd,
    Adam { m: Vec<f64>, v: Vec<f64>, t: i32 },
}

impl OptimizerState {
    fn new(kind: Optimizer, n: usize) -> Self {
        match kind {
            Optimizer::Sgd => OptimizerState::Sgd,
            Optimizer::Adam => OptimizerState::Adam {
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
            },
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        match self {
            OptimizerState::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            OptimizerState::Adam { m, v, t } => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                *t += 1;
                let c1 = 1.0 - B1.powi(*t);
                let c2 = 1.0 - B2.powi(*t);
                for i in 0..params.len() {
                    m[i] = B1 * m[i] + (1.0 - B1) * grad[i];
                    v[i] = B2 * v[i] + (1.0 - B2) * grad[i] * grad[i];
                    params[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + 1e-8);
                }
            }
        }
    }
}
