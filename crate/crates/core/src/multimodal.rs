//! Image-conditioned recurrent LM: a visual feature vector is projected into
//! the first layer's initial hidden and cell states, `h0 = tanh(P_h v + b_h)`,
//! `c0 = tanh(P_c v + b_c)`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rescore::{RescoreError, SentenceScorer};
use crate::rnnlm::{self, Example, RnnError, RnnLm, TrainConfig, GradCheckReport};

#[derive(Debug, Error, PartialEq)]
pub enum MmError {
    #[error(transparent)]
    Rnn(#[from] RnnError),
    #[error("feature dimension must be positive")]
    ZeroDim,
    #[error("model has no recurrent layer to condition")]
    NoLayers,
    #[error("model already has a visual encoder")]
    AlreadyAttached,
    #[error("checkpoint holds a text-only model")]
    NotMultimodal,
    #[error("feature file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("feature `{0}` has a non-finite value")]
    NonFinite(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureSource {
    /// Precomputed by an external extractor, identified by name.
    Extractor(String),
    Synthetic,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualFeature {
    pub values: Vec<f64>,
    pub source: FeatureSource,
}

impl VisualFeature {
    pub fn new(values: Vec<f64>, source: FeatureSource) -> Result<Self, MmError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(MmError::NonFinite(format!("{source:?}")));
        }
        Ok(VisualFeature { values, source })
    }

    pub fn zeros(dim: usize) -> Self {
        VisualFeature {
            values: vec![0.0; dim],
            source: FeatureSource::Zero,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Parses `id<TAB>d<TAB>v1 v2 ... vd` records.
pub fn read_features(text: &str, source: &str) -> Result<BTreeMap<String, VisualFeature>, MmError> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| MmError::Format {
            line: i + 1,
            message: m,
        };
        let mut parts = line.split('\t');
        let (Some(id), Some(d), Some(vals)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(bad("expected `id<TAB>dim<TAB>values`".into()));
        };
        let d: usize = d.trim().parse().map_err(|_| bad(format!("bad dimension `{d}`")))?;
        let values = vals
            .split_whitespace()
            .map(|x| x.parse::<f64>().map_err(|_| bad(format!("bad value `{x}`"))))
            .collect::<Result<Vec<_>, _>>()?;
        if values.len() != d {
            return Err(bad(format!("declared {d} values, found {}", values.len())));
        }
        let f = VisualFeature::new(values, FeatureSource::Extractor(source.to_string()))
            .map_err(|_| bad("non-finite value".into()))?;
        if out.insert(id.to_string(), f).is_some() {
            return Err(bad(format!("duplicate id `{id}`")));
        }
    }
    Ok(out)
}

pub fn write_features(features: &BTreeMap<String, VisualFeature>) -> String {
    let mut out = String::new();
    for (id, f) in features {
        let vals: Vec<String> = f.values.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{id}\t{}\t{}", f.dim(), vals.join(" "));
    }
    out
}

/// A recurrent LM with a visual projection appended to its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MmRnnLm {
    lm: RnnLm,
}

/// Adds a zero-initialized projection, so the attached model scores every
/// sentence exactly like `base` until it is trained.
pub fn attach_encoder(base: &RnnLm, feat_dim: usize) -> Result<MmRnnLm, MmError> {
    if feat_dim == 0 {
        return Err(MmError::ZeroDim);
    }
    if base.feat_dim > 0 {
        return Err(MmError::AlreadyAttached);
    }
    if base.config().num_layers == 0 {
        return Err(MmError::NoLayers);
    }
    let h = base.config().hidden_dim;
    let mut params = base.params().to_vec();
    params.resize(params.len() + 2 * (h * feat_dim + h), 0.0);
    let lm = RnnLm::from_parts(base.config().clone(), base.vocab().clone(), params, feat_dim)?;
    Ok(MmRnnLm { lm })
}

impl MmRnnLm {
    pub fn from_lm(lm: RnnLm) -> Result<Self, MmError> {
        if lm.feat_dim == 0 {
            return Err(MmError::NotMultimodal);
        }
        Ok(MmRnnLm { lm })
    }

    pub fn lm(&self) -> &RnnLm {
        &self.lm
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.lm.params_mut()
    }

    pub fn feat_dim(&self) -> usize {
        self.lm.feat_dim
    }

    pub fn num_params(&self) -> usize {
        self.lm.num_params()
    }

    /// `[P_h, b_h, P_c, b_c]`.
    pub fn projection(&self) -> &[f64] {
        &self.lm.params()[self.lm.layout().proj..]
    }

    fn check(&self, v: &VisualFeature) -> Result<(), MmError> {
        Ok(self.lm.check_feature(Some(&v.values))?)
    }

    /// ln p(`<s> words </s>` | v).
    pub fn score<S: AsRef<str>>(&self, words: &[S], v: &VisualFeature) -> Result<f64, MmError> {
        self.check(v)?;
        Ok(self.lm.ids_logprob(&self.lm.sentence_ids(words), Some(&v.values)))
    }

    pub fn next_word_probs(&self, context: &[u32], v: &VisualFeature) -> Result<Vec<f64>, MmError> {
        self.check(v)?;
        let mut ids = vec![crate::vocab::Vocab::BOS_ID];
        ids.extend_from_slice(context);
        Ok(rnnlm::net::next_distribution(
            &self.lm.layout(),
            self.lm.params(),
            &ids,
            Some(&v.values),
        ))
    }

    pub fn perplexity<S: AsRef<[String]>>(&self, pairs: &[(S, VisualFeature)]) -> Result<f64, MmError> {
        let mut lp = 0.0;
        let mut n = 0usize;
        for (s, v) in pairs {
            lp += self.score(s.as_ref(), v)?;
            n += s.as_ref().len() + 1;
        }
        Ok((-lp / n as f64).exp())
    }

    fn examples<'a, S: AsRef<[String]>>(
        &self,
        pairs: &'a [(S, VisualFeature)],
    ) -> Result<Vec<Example<'a>>, MmError> {
        pairs
            .iter()
            .map(|(s, v)| {
                self.check(v)?;
                Ok(Example {
                    ids: self.lm.sentence_ids(s.as_ref()),
                    feature: Some(&v.values),
                })
            })
            .collect()
    }

    /// Jointly updates the base and projection parameters.
    pub fn train<S: AsRef<[String]>>(
        &mut self,
        pairs: &[(S, VisualFeature)],
        tc: &TrainConfig,
    ) -> Result<Vec<f64>, MmError> {
        let ex = self.examples(pairs)?;
        Ok(self.lm.fit(&ex, tc)?)
    }

    pub fn finetune<S: AsRef<[String]>>(
        &mut self,
        pairs: &[(S, VisualFeature)],
        epochs: usize,
        tc: &TrainConfig,
    ) -> Result<Vec<f64>, MmError> {
        if epochs == 0 {
            return Ok(Vec::new());
        }
        self.train(pairs, &TrainConfig { epochs, ..tc.clone() })
    }

    /// Finite-difference check over all parameters, projection included.
    pub fn grad_check<S: AsRef<[String]>>(
        &self,
        pairs: &[(S, VisualFeature)],
        eps: f64,
    ) -> Result<GradCheckReport, MmError> {
        let ex = self.examples(pairs)?;
        Ok(self.lm.grad_check_examples(&ex, eps)?)
    }
}

impl SentenceScorer for RnnLm {
    fn score(&self, words: &[String], _: Option<&VisualFeature>) -> Result<f64, RescoreError> {
        Ok(self.sentence_logprob(words))
    }
}

impl SentenceScorer for MmRnnLm {
    fn is_multimodal(&self) -> bool {
        true
    }

    fn score(&self, words: &[String], feature: Option<&VisualFeature>) -> Result<f64, RescoreError> {
        let v = feature.ok_or(RescoreError::MissingFeature)?;
        MmRnnLm::score(self, words, v).map_err(|e| RescoreError::Scorer(e.to_string()))
    }
}
