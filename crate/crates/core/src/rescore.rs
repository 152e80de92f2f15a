//! N-best lists and second-pass rescoring.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::command::Command;
use crate::multimodal::VisualFeature;
use crate::ngram::{token_log10probs, MixtureModel, NGramModel};

#[derive(Debug, Error, PartialEq)]
pub enum RescoreError {
    #[error("n-best list `{0}` has no hypotheses")]
    Empty(String),
    #[error("the scorer is multi-modal but no feature was supplied")]
    MissingFeature,
    #[error("a feature was supplied but the scorer is text-only")]
    UnexpectedFeature,
    #[error("non-finite score for `{text}` in `{utt_id}`")]
    NonFinite { utt_id: String, text: String },
    #[error("invalid rescoring config: {0}")]
    Config(String),
    #[error("scorer failed: {0}")]
    Scorer(String),
    #[error("n-best file line {line}: {message}")]
    Format { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub text: Command,
    /// Natural-log acoustic score.
    #[serde(rename = "ac")]
    pub acoustic: f64,
    /// Natural-log first-pass LM score, when the recognizer reports one.
    #[serde(rename = "lm", default, skip_serializing_if = "Option::is_none")]
    pub firstpass_lm: Option<f64>,
}

impl Hypothesis {
    pub fn new(text: Command, acoustic: f64, firstpass_lm: Option<f64>) -> Self {
        Hypothesis {
            text,
            acoustic,
            firstpass_lm,
        }
    }

    fn firstpass(&self) -> f64 {
        self.acoustic + self.firstpass_lm.unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NBestList {
    pub utt_id: String,
    #[serde(rename = "ref", default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<Command>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_id: Option<String>,
    pub hyps: Vec<Hypothesis>,
}

impl NBestList {
    /// Checks the list is nonempty with finite scores and puts it in
    /// descending first-pass order (stable).
    pub fn validated(mut self) -> Result<Self, RescoreError> {
        if self.hyps.is_empty() {
            return Err(RescoreError::Empty(self.utt_id));
        }
        if let Some(h) = self
            .hyps
            .iter()
            .find(|h| !h.acoustic.is_finite() || !h.firstpass_lm.is_none_or(f64::is_finite))
        {
            return Err(RescoreError::NonFinite {
                utt_id: self.utt_id.clone(),
                text: h.text.to_string(),
            });
        }
        self.hyps
            .sort_by(|a, b| desc(a.firstpass(), b.firstpass()));
        Ok(self)
    }

    /// The first hypothesis.
    pub fn one_best(&self) -> Option<&Command> {
        self.hyps.first().map(|h| &h.text)
    }
}

fn desc(a: f64, b: f64) -> Ordering {
    b.partial_cmp(&a).unwrap_or(Ordering::Equal)
}

/// Reads one JSON n-best record per nonempty line.
pub fn read_nbest_jsonl(text: &str) -> Result<Vec<NBestList>, RescoreError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let nb: NBestList = serde_json::from_str(l).map_err(|e| RescoreError::Format {
                line: i + 1,
                message: e.to_string(),
            })?;
            nb.validated()
        })
        .collect()
}

pub fn write_nbest_jsonl(lists: &[NBestList]) -> String {
    let mut out = String::new();
    for nb in lists {
        out.push_str(&serde_json::to_string(nb).expect("n-best lists serialize"));
        out.push('\n');
    }
    out
}

/// A second-pass language model returning natural-log sentence probabilities.
pub trait SentenceScorer: Sync {
    fn is_multimodal(&self) -> bool {
        false
    }

    fn score(&self, words: &[String], feature: Option<&VisualFeature>) -> Result<f64, RescoreError>;
}

fn ngram_ln<M: crate::ngram::NGramLm>(m: &M, words: &[String]) -> f64 {
    token_log10probs(m, words).iter().sum::<f64>() * std::f64::consts::LN_10
}

impl SentenceScorer for NGramModel {
    fn score(&self, words: &[String], _: Option<&VisualFeature>) -> Result<f64, RescoreError> {
        Ok(ngram_ln(self, words))
    }
}

impl SentenceScorer for MixtureModel {
    fn score(&self, words: &[String], _: Option<&VisualFeature>) -> Result<f64, RescoreError> {
        Ok(ngram_ln(self, words))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RescoreConfig {
    pub lm_weight: f64,
    pub word_insertion_penalty: f64,
    pub replace_firstpass_lm: bool,
}

impl Default for RescoreConfig {
    fn default() -> Self {
        RescoreConfig {
            lm_weight: 1.0,
            word_insertion_penalty: 0.0,
            replace_firstpass_lm: false,
        }
    }
}

impl RescoreConfig {
    pub fn validate(&self) -> Result<(), RescoreError> {
        if !self.lm_weight.is_finite() || self.lm_weight < 0.0 {
            return Err(RescoreError::Config(format!(
                "lm_weight must be finite and >= 0, got {}",
                self.lm_weight
            )));
        }
        if !self.word_insertion_penalty.is_finite() {
            return Err(RescoreError::Config("word insertion penalty must be finite".into()));
        }
        Ok(())
    }
}

/// Second-pass LM scores for every hypothesis, in list order.
pub fn lm_scores(
    nb: &NBestList,
    scorer: &dyn SentenceScorer,
    feature: Option<&VisualFeature>,
) -> Result<Vec<f64>, RescoreError> {
    match (scorer.is_multimodal(), feature.is_some()) {
        (true, false) => return Err(RescoreError::MissingFeature),
        (false, true) => return Err(RescoreError::UnexpectedFeature),
        _ => {}
    }
    nb.hyps
        .iter()
        .map(|h| {
            let s = scorer.score(h.text.words(), feature)?;
            if s.is_finite() {
                Ok(s)
            } else {
                Err(RescoreError::NonFinite {
                    utt_id: nb.utt_id.clone(),
                    text: h.text.to_string(),
                })
            }
        })
        .collect()
}

/// `acoustic [+ first-pass lm] + lm_weight · lm + wip · words`.
pub fn combined_score(h: &Hypothesis, lm: f64, cfg: &RescoreConfig) -> f64 {
    let first = if cfg.replace_firstpass_lm {
        0.0
    } else {
        h.firstpass_lm.unwrap_or(0.0)
    };
    h.acoustic + first + cfg.lm_weight * lm + cfg.word_insertion_penalty * h.text.len() as f64
}

/// Reorders by combined score given precomputed LM scores. The sort is
/// stable, so equal scores keep their input order.
pub fn rerank(nb: &NBestList, lm: &[f64], cfg: &RescoreConfig) -> NBestList {
    assert_eq!(nb.hyps.len(), lm.len(), "one LM score per hypothesis");
    let mut scored: Vec<(f64, &Hypothesis)> = nb
        .hyps
        .iter()
        .zip(lm)
        .map(|(h, &s)| (combined_score(h, s, cfg), h))
        .collect();
    scored.sort_by(|a, b| desc(a.0, b.0));
    NBestList {
        hyps: scored.into_iter().map(|(_, h)| h.clone()).collect(),
        ..nb.clone()
    }
}

pub fn rescore(
    nb: &NBestList,
    scorer: &dyn SentenceScorer,
    cfg: &RescoreConfig,
    feature: Option<&VisualFeature>,
) -> Result<NBestList, RescoreError> {
    cfg.validate()?;
    if nb.hyps.is_empty() {
        return Err(RescoreError::Empty(nb.utt_id.clone()));
    }
    let lm = lm_scores(nb, scorer, feature)?;
    Ok(rerank(nb, &lm, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashMap;

    /// Scores from a fixed table.
    struct Table(HashMap<String, f64>);

    impl SentenceScorer for Table {
        fn score(&self, words: &[String], _: Option<&VisualFeature>) -> Result<f64, RescoreError> {
            Ok(self.0[&words.join(" ")])
        }
    }

    fn list(hyps: &[(&str, f64, Option<f64>)]) -> NBestList {
        NBestList {
            utt_id: "u".into(),
            reference: None,
            image_id: None,
            hyps: hyps
                .iter()
                .map(|(t, a, l)| Hypothesis::new(Command::parse(t).unwrap(), *a, *l))
                .collect(),
        }
    }

    fn texts(nb: &NBestList) -> Vec<String> {
        nb.hyps.iter().map(|h| h.text.to_string()).collect()
    }

    fn table(xs: &[(&str, f64)]) -> Table {
        Table(xs.iter().map(|(k, v)| (k.to_string(), *v)).collect())
    }

    #[test]
    fn zero_weight_keeps_acoustic_order() {
        let nb = list(&[("a", -1.0, Some(-9.0)), ("b", -2.0, None), ("c", -3.0, None)]);
        let lm = table(&[("a", -50.0), ("b", -1.0), ("c", -2.0)]);
        let cfg = RescoreConfig {
            lm_weight: 0.0,
            word_insertion_penalty: 0.0,
            replace_firstpass_lm: true,
        };
        assert_eq!(texts(&rescore(&nb, &lm, &cfg, None).unwrap()), ["a", "b", "c"]);
    }

    #[test]
    fn huge_weight_gives_lm_order() {
        let nb = list(&[("a", -1.0, None), ("b", -2.0, None), ("c", -3.0, None)]);
        let lm = table(&[("a", -5.0), ("b", -1.0), ("c", -2.0)]);
        let cfg = RescoreConfig {
            lm_weight: 1e6,
            ..Default::default()
        };
        assert_eq!(texts(&rescore(&nb, &lm, &cfg, None).unwrap()), ["b", "c", "a"]);
    }

    #[test]
    fn hand_scores_match_exhaustive_sort() {
        let nb = list(&[
            ("go left", -4.0, Some(-2.0)),
            ("go", -3.5, Some(-1.0)),
            ("go left now", -4.5, Some(-3.0)),
        ]);
        let lm = table(&[("go left", -1.0), ("go", -3.0), ("go left now", -0.5)]);
        let cfg = RescoreConfig {
            lm_weight: 2.0,
            word_insertion_penalty: 0.5,
            replace_firstpass_lm: false,
        };
        // combined: -4-2-2+1 = -7, -3.5-1-6+0.5 = -10, -4.5-3-1+1.5 = -7
        let got = texts(&rescore(&nb, &lm, &cfg, None).unwrap());
        // try all 6 orders, keep those that are nonincreasing, take the first in
        // lexicographic order of original indices (stable tie)
        let combined = [-7.0, -10.0, -7.0];
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let best = perms
            .iter()
            .find(|p| p.windows(2).all(|w| combined[w[0]] >= combined[w[1]]))
            .unwrap();
        let want: Vec<String> = best.iter().map(|&i| nb.hyps[i].text.to_string()).collect();
        assert_eq!(got, want);
        assert_eq!(got, ["go left", "go left now", "go"]);
    }

    #[test]
    fn feature_must_match_scorer() {
        let nb = list(&[("a", -1.0, None)]);
        let lm = table(&[("a", -1.0)]);
        let f = VisualFeature::zeros(2);
        assert_eq!(
            rescore(&nb, &lm, &RescoreConfig::default(), Some(&f)),
            Err(RescoreError::UnexpectedFeature)
        );
    }

    #[test]
    fn jsonl_round_trip_and_ordering() {
        let text = r#"{"utt_id":"u1","ref":"turn left","image_id":"img3","hyps":[{"text":"turn lift","ac":-12.0},{"text":"turn left","ac":-10.0,"lm":-1.5}]}
{"utt_id":"u2","hyps":[{"text":"go","ac":-1.0}]}
"#;
        let lists = read_nbest_jsonl(text).unwrap();
        assert_eq!(lists.len(), 2);
        assert_eq!(lists[0].one_best().unwrap().to_string(), "turn left");
        assert_eq!(lists[0].image_id.as_deref(), Some("img3"));
        assert_eq!(read_nbest_jsonl(&write_nbest_jsonl(&lists)).unwrap(), lists);
        let err = read_nbest_jsonl("{\"utt_id\":\"x\",\"hyps\":[]}").unwrap_err();
        assert_eq!(err, RescoreError::Empty("x".into()));
        assert!(matches!(
            read_nbest_jsonl("\n{oops").unwrap_err(),
            RescoreError::Format { line: 2, .. }
        ));
    }

    #[test]
    fn ngram_scorer_is_natural_log() {
        use crate::ngram::{count_ngrams, estimate, NGramLm, Smoothing};
        use crate::vocab::Vocab;
        let c = vec![vec!["go".to_string(), "left".to_string()]];
        let v = Vocab::from_corpus(&c, None);
        let m = estimate(&count_ngrams(&c, 2, &v).unwrap(), Smoothing::WittenBell).unwrap();
        let ln = m.score(&c[0], None).unwrap();
        assert!((ln - m.sentence_log10prob(&c[0]) * std::f64::consts::LN_10).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn rerank_is_a_stable_permutation(
            ac in prop::collection::vec(-20i32..0, 1..8),
            lm in prop::collection::vec(-20i32..0, 8),
            w in 0.0f64..5.0,
        ) {
            let hyps: Vec<(String, f64, Option<f64>)> = ac
                .iter()
                .enumerate()
                .map(|(i, &a)| (format!("w{i}"), a as f64, None))
                .collect();
            let nb = list(&hyps.iter().map(|(t, a, l)| (t.as_str(), *a, *l)).collect::<Vec<_>>());
            let lm: Vec<f64> = lm[..ac.len()].iter().map(|&x| x as f64).collect();
            let cfg = RescoreConfig { lm_weight: w, ..Default::default() };
            let out = rerank(&nb, &lm, &cfg);
            let mut a = texts(&nb);
            let mut b = texts(&out);
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
            // stability: equal combined scores keep input order
            let pos = |t: &str| nb.hyps.iter().position(|h| h.text.to_string() == t).unwrap();
            for pair in out.hyps.windows(2) {
                let (i, j) = (pos(&pair[0].text.to_string()), pos(&pair[1].text.to_string()));
                let (si, sj) = (combined_score(&nb.hyps[i], lm[i], &cfg), combined_score(&nb.hyps[j], lm[j], &cfg));
                prop_assert!(si >= sj);
                if si == sj {
                    prop_assert!(i < j);
                }
            }
        }

        #[test]
        fn raising_lm_weight_never_demotes_the_lm_best(
            ac in prop::collection::vec(-20i32..0, 2..8),
            lm in prop::collection::vec(-20i32..0, 8),
            w1 in 0.0f64..3.0,
            dw in 0.0f64..3.0,
        ) {
            let hyps: Vec<String> = (0..ac.len()).map(|i| format!("w{i}")).collect();
            let nb = list(&hyps.iter().zip(&ac).map(|(t, &a)| (t.as_str(), a as f64, None)).collect::<Vec<_>>());
            let lm: Vec<f64> = lm[..ac.len()].iter().map(|&x| x as f64).collect();
            let top = (0..lm.len()).fold(0, |b, i| if lm[i] > lm[b] { i } else { b });
            let rank = |w: f64| {
                let cfg = RescoreConfig { lm_weight: w, ..Default::default() };
                let out = rerank(&nb, &lm, &cfg);
                out.hyps.iter().position(|h| h.text == nb.hyps[top].text).unwrap()
            };
            prop_assert!(rank(w1 + dw) <= rank(w1));
        }
    }
}
