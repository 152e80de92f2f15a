use super::{net, Example, RnnError, RnnLm};

/// Largest toy configuration the finite-difference check accepts.
pub const MAX_CHECK_VOCAB: usize = 20;
pub const MAX_CHECK_HIDDEN: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter index with the largest error.
    pub worst: usize,
    pub coordinates: usize,
}

/// Max of `|a - n| / max(|a|, |n|, 1e-8)` over coordinates, with its index.
pub fn compare_gradients(analytic: &[f64], numeric: &[f64]) -> (f64, usize) {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-8))
        .enumerate()
        .fold((0.0, 0), |(best, bi), (i, e)| if e > best { (e, i) } else { (best, bi) })
}

impl RnnLm {
    fn batch_loss(&self, params: &[f64], examples: &[Example]) -> f64 {
        let lay = self.layout();
        examples
            .iter()
            .map(|ex| net::sequence_loss(&lay, params, &ex.ids, ex.feature, None, usize::MAX, None))
            .sum()
    }

    /// Gradient of the summed batch loss, dropout off.
    pub(crate) fn analytic_gradient(&self, examples: &[Example]) -> Vec<f64> {
        let lay = self.layout();
        let mut g = vec![0.0; self.params.len()];
        for ex in examples {
            net::sequence_loss(&lay, &self.params, &ex.ids, ex.feature, None, usize::MAX, Some(&mut g));
        }
        g
    }

    /// Central differences `(L(θ + ε e_i) - L(θ - ε e_i)) / 2ε`.
    pub(crate) fn numeric_gradient(&self, examples: &[Example], eps: f64) -> Vec<f64> {
        let mut p = self.params.clone();
        (0..p.len())
            .map(|i| {
                let x = p[i];
                p[i] = x + eps;
                let up = self.batch_loss(&p, examples);
                p[i] = x - eps;
                let down = self.batch_loss(&p, examples);
                p[i] = x;
                (up - down) / (2.0 * eps)
            })
            .collect()
    }

    pub(crate) fn grad_check_examples(
        &self,
        examples: &[Example],
        eps: f64,
    ) -> Result<GradCheckReport, RnnError> {
        let cfg = self.config();
        if cfg.vocab_size > MAX_CHECK_VOCAB || cfg.hidden_dim > MAX_CHECK_HIDDEN {
            return Err(RnnError::InvalidConfig(format!(
                "gradient check needs vocab <= {MAX_CHECK_VOCAB} and hidden <= {MAX_CHECK_HIDDEN}"
            )));
        }
        for ex in examples {
            self.check_feature(ex.feature)?;
        }
        let a = self.analytic_gradient(examples);
        let n = self.numeric_gradient(examples, eps);
        let (max_rel_error, worst) = compare_gradients(&a, &n);
        Ok(GradCheckReport {
            max_rel_error,
            worst,
            coordinates: a.len(),
        })
    }

    /// Checks every parameter's analytic gradient against central differences.
    pub fn grad_check<S: AsRef<[String]>>(
        &self,
        batch: &[S],
        eps: f64,
    ) -> Result<GradCheckReport, RnnError> {
        let examples: Vec<Example> = batch
            .iter()
            .map(|s| Example {
                ids: self.sentence_ids(s.as_ref()),
                feature: None,
            })
            .collect();
        self.grad_check_examples(&examples, eps)
    }
}
