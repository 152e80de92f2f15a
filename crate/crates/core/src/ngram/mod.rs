//! Backoff n-gram language models: counting, Witten-Bell and Kneser-Ney
//! estimation, count-cutoff pruning, query-time interpolation and ARPA I/O.
//!
//! Probabilities are stored as log10 values, as in ARPA files. Scoring uses the
//! usual backoff recursion
//!
//! ```text
//! p(w | h) = p*(h, w)                    if (h, w) is stored
//!          = bow(h) · p(w | h[1..])      otherwise (bow(h) = 1 if h is not stored)
//! ```

mod arpa;
mod counts;
mod estimate;
mod mixture;
mod prune;

use std::collections::HashMap;

use thiserror::Error;

pub use arpa::{read_arpa, write_arpa};
pub use counts::{count_ngrams, NGramCounts};
pub use estimate::{estimate, Smoothing};
pub use mixture::{interpolate, MixtureModel};
pub use prune::prune;

use crate::vocab::Vocab;

/// log10 of the probability assigned to `<s>`, which is never predicted.
pub const LOG10_ZERO: f64 = -99.0;

#[derive(Debug, Error, PartialEq)]
pub enum NGramError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("model order must be at least 1")]
    ZeroOrder,
    #[error(
        "Kneser-Ney discount is undefined at order {order} (n1 = {n1}, n2 = {n2}); \
         use witten-bell smoothing for this corpus"
    )]
    KneserNeyDegenerate { order: usize, n1: u64, n2: u64 },
    #[error("interpolation weight {0} is outside [0, 1]")]
    LambdaOutOfRange(f64),
    #[error("mixture weights must be nonnegative and sum to 1 (got {0:?})")]
    BadWeights(Vec<f64>),
    #[error("mixture components must share one vocabulary")]
    VocabMismatch,
    #[error("pruning budget {budget} is below the {unigrams} unigrams, which are never pruned")]
    InfeasibleBudget { budget: usize, unigrams: usize },
    #[error("ARPA line {line}: {message}")]
    Arpa { line: usize, message: String },
    #[error("unknown smoothing `{0}` (expected witten-bell or kneser-ney)")]
    UnknownSmoothing(String),
}

/// One stored n-gram. `count` is the training count (0 when loaded from ARPA).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub log10_prob: f64,
    pub log10_backoff: f64,
    pub count: u64,
}

/// Anything that assigns next-word probabilities over a [`Vocab`].
pub trait NGramLm {
    fn vocab(&self) -> &Vocab;

    fn order(&self) -> usize;

    /// log10 p(word | context); only the last `order - 1` context ids matter.
    fn log10_prob(&self, context: &[u32], word: u32) -> f64;

    /// Sum of log10 p(w_t | history) over the words and the end token.
    /// Unknown words map to `<unk>`.
    fn sentence_log10prob<S: AsRef<str>>(&self, words: &[S]) -> f64
    where
        Self: Sized,
    {
        token_log10probs(self, words).iter().sum()
    }

    /// `10^(-total log10 prob / tokens)`, with the end token counted.
    fn perplexity<S: AsRef<[String]>>(&self, corpus: &[S]) -> f64
    where
        Self: Sized,
    {
        let mut total = 0.0;
        let mut tokens = 0usize;
        for s in corpus {
            let lp = token_log10probs(self, s.as_ref());
            tokens += lp.len();
            total += lp.iter().sum::<f64>();
        }
        10f64.powf(-total / tokens as f64)
    }
}

/// Per-token log10 probabilities, one per word plus one for `</s>`.
pub fn token_log10probs<M: NGramLm, S: AsRef<str>>(m: &M, words: &[S]) -> Vec<f64> {
    let vocab = m.vocab();
    let mut history = vec![Vocab::BOS_ID];
    let mut out = Vec::with_capacity(words.len() + 1);
    for id in vocab
        .encode(words)
        .into_iter()
        .chain(std::iter::once(Vocab::EOS_ID))
    {
        out.push(m.log10_prob(&history, id));
        history.push(id);
    }
    out
}

/// An order-N backoff model.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    order: usize,
    vocab: Vocab,
    /// `tables[k - 1]` holds the stored k-grams.
    tables: Vec<HashMap<Vec<u32>, Entry>>,
}

impl NGramModel {
    pub(crate) fn from_tables(
        order: usize,
        vocab: Vocab,
        tables: Vec<HashMap<Vec<u32>, Entry>>,
    ) -> Self {
        debug_assert_eq!(tables.len(), order);
        NGramModel {
            order,
            vocab,
            tables,
        }
    }

    pub fn table(&self, k: usize) -> &HashMap<Vec<u32>, Entry> {
        &self.tables[k - 1]
    }

    pub(crate) fn tables_mut(&mut self) -> &mut Vec<HashMap<Vec<u32>, Entry>> {
        &mut self.tables
    }

    pub fn entry(&self, ngram: &[u32]) -> Option<&Entry> {
        self.tables.get(ngram.len().checked_sub(1)?)?.get(ngram)
    }

    /// Number of stored n-grams of each order.
    pub fn sizes(&self) -> Vec<usize> {
        self.tables.iter().map(HashMap::len).collect()
    }

    pub fn total_ngrams(&self) -> usize {
        self.tables.iter().map(HashMap::len).sum()
    }

    /// Ids that can follow a history: every word except `<s>`.
    pub fn predictable(&self) -> impl Iterator<Item = u32> + '_ {
        (0..self.vocab.len() as u32).filter(|&w| w != Vocab::BOS_ID)
    }

    /// Recomputes every backoff weight from the stored probabilities so each
    /// stored context distributes exactly its leftover mass.
    pub(crate) fn renormalize_backoffs(&mut self) {
        for k in 2..=self.order {
            self.set_backoffs(k);
        }
        for e in self.tables[self.order - 1].values_mut() {
            e.log10_backoff = 0.0;
        }
    }

    /// Sets the backoff weights of the (k-1)-gram contexts from the stored
    /// k-grams. Lower-order weights must already be final.
    pub(crate) fn set_backoffs(&mut self, k: usize) {
        let npred = self.vocab.len() - 1;
        let mut groups: HashMap<&[u32], Vec<(u32, f64)>> = HashMap::new();
        for (g, e) in &self.tables[k - 1] {
            groups
                .entry(&g[..k - 1])
                .or_default()
                .push((g[k - 1], e.log10_prob));
        }
        let bows: Vec<(Vec<u32>, f64)> = groups
            .into_iter()
            .map(|(h, succ)| {
                let bow = if succ.len() >= npred {
                    0.0
                } else {
                    let seen: f64 = succ.iter().map(|(_, lp)| 10f64.powf(*lp)).sum();
                    let lower: f64 = succ
                        .iter()
                        .map(|(w, _)| 10f64.powf(self.log10_prob(&h[1..], *w)))
                        .sum();
                    backoff_log10(seen, lower)
                };
                (h.to_vec(), bow)
            })
            .collect();
        // contexts with no stored continuation back off with weight 1
        for e in self.tables[k - 2].values_mut() {
            e.log10_backoff = 0.0;
        }
        for (h, bow) in bows {
            if let Some(e) = self.tables[k - 2].get_mut(&h) {
                e.log10_backoff = bow;
            }
        }
    }
}

/// log10 of `(1 - seen) / (1 - lower)`, guarded against rounding at the edges.
pub(crate) fn backoff_log10(seen: f64, lower: f64) -> f64 {
    let num = (1.0 - seen).max(1e-99);
    let den = (1.0 - lower).max(1e-99);
    (num / den).log10()
}

impl NGramLm for NGramModel {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn order(&self) -> usize {
        self.order
    }

    fn log10_prob(&self, context: &[u32], word: u32) -> f64 {
        let n = context.len().min(self.order - 1);
        let ctx = &context[context.len() - n..];
        let mut backoff = 0.0;
        let mut key = Vec::with_capacity(n + 1);
        for start in 0..=n {
            let h = &ctx[start..];
            key.clear();
            key.extend_from_slice(h);
            key.push(word);
            if let Some(e) = self.tables[h.len()].get(key.as_slice()) {
                return backoff + e.log10_prob;
            }
            if !h.is_empty() {
                if let Some(e) = self.tables[h.len() - 1].get(h) {
                    backoff += e.log10_backoff;
                }
            }
        }
        // unigram entries cover the whole vocabulary; reaching here means an id
        // outside it
        backoff + LOG10_ZERO
    }
}
