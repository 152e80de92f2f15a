//! Word-level stand-in for the acoustic front end: each reference word may be
//! heard as one of its confusable words, and every candidate's log-likelihood
//! is its table penalty plus Gaussian noise.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;

use super::ExpError;
use crate::command::Command;
use crate::rescore::{Hypothesis, NBestList};
use crate::util::{derive_seed, fnv1a, rng_from_seed};

/// Confusable word that stands for "nothing was heard".
pub const DELETION: &str = "<del>";

/// `word -> [(confusable, penalty)]`, penalties as nonnegative natural-log costs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfusionTable {
    map: BTreeMap<String, Vec<(String, f64)>>,
}

impl ConfusionTable {
    pub fn insert(&mut self, word: &str, confusable: &str, penalty: f64) {
        let list = self.map.entry(word.to_string()).or_default();
        match list.iter_mut().find(|(c, _)| c == confusable) {
            Some(e) => e.1 = penalty,
            None => list.push((confusable.to_string(), penalty)),
        }
    }

    pub fn get(&self, word: &str) -> &[(String, f64)] {
        self.map.get(word).map_or(&[], Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.map.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Every word on either side of an entry, deletions excluded.
    pub fn words(&self) -> Vec<&str> {
        let mut w: Vec<&str> = self
            .map
            .iter()
            .flat_map(|(k, v)| std::iter::once(k.as_str()).chain(v.iter().map(|(c, _)| c.as_str())))
            .filter(|w| *w != DELETION)
            .collect();
        w.sort_unstable();
        w.dedup();
        w
    }

    /// TSV lines `word<TAB>confusable<TAB>penalty`; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, ExpError> {
        let mut t = ConfusionTable::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |m: &str| ExpError::Format {
                what: "confusion table".into(),
                line: i + 1,
                message: m.to_string(),
            };
            let f: Vec<&str> = line.split('\t').map(str::trim).collect();
            let [word, conf, pen] = f[..] else {
                return Err(bad("expected word, confusable and penalty"));
            };
            if word.is_empty() || conf.is_empty() || word.contains(' ') || conf.contains(' ') {
                return Err(bad("words must be single non-empty tokens"));
            }
            let penalty: f64 = pen.parse().map_err(|_| bad("penalty is not a number"))?;
            if !penalty.is_finite() || penalty < 0.0 {
                return Err(bad("penalty must be finite and nonnegative"));
            }
            t.insert(&word.to_lowercase(), &conf.to_lowercase(), penalty);
        }
        Ok(t)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (w, list) in &self.map {
            for (c, p) in list {
                let _ = writeln!(out, "{w}\t{c}\t{p}");
            }
        }
        out
    }

    /// Pairs up `words` at random and makes each pair mutually confusable with
    /// a penalty drawn from `[lo, hi)`. An odd word out gets no entry.
    pub fn random_pairs<S: AsRef<str>>(words: &[S], lo: f64, hi: f64, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let mut w: Vec<&str> = words.iter().map(AsRef::as_ref).collect();
        w.sort_unstable();
        w.dedup();
        w.shuffle(&mut rng);
        let mut t = ConfusionTable::default();
        for pair in w.chunks_exact(2) {
            let p = rng.gen_range(lo..hi);
            t.insert(pair[0], pair[1], p);
            t.insert(pair[1], pair[0], p);
        }
        t
    }
}

/// Simulated n-best lists for `(utterance id, reference)` pairs.
///
/// Each position offers the reference word (penalty 0) and its confusables;
/// a candidate's log-likelihood is `-penalty + noise_sd · N(0, 1)`. The `k`
/// best word strings by summed log-likelihood are kept, and the reference is
/// swapped in for the last entry if it did not make the cut. Noise is drawn
/// from a stream keyed by the utterance id, so lists do not depend on order.
pub fn simulate_channel(
    utterances: &[(String, Command)],
    table: &ConfusionTable,
    k: usize,
    noise_sd: f64,
    seed: u64,
) -> Result<Vec<NBestList>, ExpError> {
    if k < 1 {
        return Err(ExpError::Config("n-best size must be at least 1".into()));
    }
    if !noise_sd.is_finite() || noise_sd < 0.0 {
        return Err(ExpError::Config(format!("noise sd must be finite and >= 0, got {noise_sd}")));
    }
    utterances
        .iter()
        .map(|(id, cmd)| {
            let mut rng = rng_from_seed(derive_seed(seed, &[fnv1a(id.as_bytes())]));
            let mut noise = || noise_sd * rng.sample::<f64, _>(StandardNormal);
            let mut beam: Vec<(Vec<&str>, f64)> = vec![(Vec::new(), 0.0)];
            let mut ref_score = 0.0;
            for word in cmd.words() {
                let own = noise();
                ref_score += own;
                let mut cands = vec![(word.as_str(), own)];
                for (c, p) in table.get(word) {
                    cands.push((c.as_str(), -p + noise()));
                }
                let mut next: Vec<(Vec<&str>, f64)> = Vec::with_capacity(beam.len() * cands.len());
                for (prefix, s) in &beam {
                    for &(c, ll) in &cands {
                        let mut p = prefix.clone();
                        if c != DELETION {
                            p.push(c);
                        }
                        next.push((p, s + ll));
                    }
                }
                beam = best_distinct(next, k);
            }
            let mut hyps: Vec<Hypothesis> = beam
                .into_iter()
                .filter_map(|(w, s)| Command::from_words(w).ok().map(|c| Hypothesis::new(c, s, None)))
                .collect();
            if !hyps.iter().any(|h| &h.text == cmd) {
                if hyps.len() == k {
                    hyps.pop();
                }
                hyps.push(Hypothesis::new(cmd.clone(), ref_score, None));
            }
            NBestList {
                utt_id: id.clone(),
                reference: Some(cmd.clone()),
                image_id: None,
                hyps,
            }
            .validated()
            .map_err(Into::into)
        })
        .collect()
}

/// Highest-scoring `k` distinct word strings; equal strings keep their best
/// score and ties keep generation order.
fn best_distinct(mut v: Vec<(Vec<&str>, f64)>, k: usize) -> Vec<(Vec<&str>, f64)> {
    v.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(k);
    for (w, s) in v {
        if out.len() == k {
            break;
        }
        if seen.insert(w.clone()) {
            out.push((w, s));
        }
    }
    out
}
