use super::{NGramError, NGramLm, NGramModel};
use crate::vocab::Vocab;

/// Query-time linear interpolation of backoff models over a shared vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel {
    components: Vec<(NGramModel, f64)>,
}

impl MixtureModel {
    pub fn new(components: Vec<(NGramModel, f64)>) -> Result<Self, NGramError> {
        let weights: Vec<f64> = components.iter().map(|(_, w)| *w).collect();
        let sum: f64 = weights.iter().sum();
        if components.is_empty()
            || weights.iter().any(|w| !w.is_finite() || *w < 0.0)
            || (sum - 1.0).abs() > 1e-9
        {
            return Err(NGramError::BadWeights(weights));
        }
        let first = components[0].0.vocab();
        if components.iter().any(|(m, _)| m.vocab() != first) {
            return Err(NGramError::VocabMismatch);
        }
        Ok(MixtureModel { components })
    }

    pub fn components(&self) -> &[(NGramModel, f64)] {
        &self.components
    }
}

/// `p = lambda · p_domain + (1 - lambda) · p_generic`, evaluated per query.
pub fn interpolate(
    domain: NGramModel,
    generic: NGramModel,
    lambda_domain: f64,
) -> Result<MixtureModel, NGramError> {
    if !(0.0..=1.0).contains(&lambda_domain) {
        return Err(NGramError::LambdaOutOfRange(lambda_domain));
    }
    MixtureModel::new(vec![(domain, lambda_domain), (generic, 1.0 - lambda_domain)])
}

impl NGramLm for MixtureModel {
    fn vocab(&self) -> &Vocab {
        self.components[0].0.vocab()
    }

    fn order(&self) -> usize {
        self.components.iter().map(|(m, _)| m.order()).max().unwrap_or(1)
    }

    fn log10_prob(&self, context: &[u32], word: u32) -> f64 {
        // a weight of exactly 1 must reproduce that component bit-for-bit
        if let Some((m, _)) = self.components.iter().find(|(_, w)| *w == 1.0) {
            return m.log10_prob(context, word);
        }
        let p: f64 = self
            .components
            .iter()
            .filter(|(_, w)| *w > 0.0)
            .map(|(m, w)| w * 10f64.powf(m.log10_prob(context, word)))
            .sum();
        p.log10()
    }
}
