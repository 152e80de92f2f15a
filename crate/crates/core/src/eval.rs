//! Word error rate, fold aggregation and McNemar's test.

use statrs::distribution::{Binomial, DiscreteCDF};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::command::normalize_words;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("reference is empty")]
    EmptyReference,
    #[error("nothing to score")]
    NoPairs,
    #[error("system outputs differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("utterance `{0}` has a reference but no hypothesis")]
    MissingHypothesis(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditOp {
    Match,
    Sub,
    Del,
    Ins,
}

/// Minimum-edit alignment with unit costs. On equal cost the backtrace prefers
/// substitution (or match), then deletion, then insertion.
pub fn align<S: AsRef<str>>(reference: &[S], hyp: &[S]) -> Result<Vec<EditOp>, EvalError> {
    if reference.is_empty() {
        return Err(EvalError::EmptyReference);
    }
    let (n, m) = (reference.len(), hyp.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = usize::from(reference[i - 1].as_ref() != hyp[j - 1].as_ref());
            d[i][j] = (d[i - 1][j - 1] + sub)
                .min(d[i - 1][j] + 1)
                .min(d[i][j - 1] + 1);
        }
    }
    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let same = reference[i - 1].as_ref() == hyp[j - 1].as_ref();
            if d[i][j] == d[i - 1][j - 1] + usize::from(!same) {
                ops.push(if same { EditOp::Match } else { EditOp::Sub });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            ops.push(EditOp::Del);
            i -= 1;
        } else {
            ops.push(EditOp::Ins);
            j -= 1;
        }
    }
    ops.reverse();
    Ok(ops)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WerResult {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_words: usize,
}

impl WerResult {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    /// `(S + D + I) / N`; can exceed 1.
    pub fn wer(&self) -> f64 {
        self.errors() as f64 / self.ref_words as f64
    }

    fn add(&mut self, other: &WerResult) {
        self.substitutions += other.substitutions;
        self.deletions += other.deletions;
        self.insertions += other.insertions;
        self.ref_words += other.ref_words;
    }
}

pub fn wer_pair<S: AsRef<str>>(reference: &[S], hyp: &[S]) -> Result<WerResult, EvalError> {
    let mut r = WerResult {
        ref_words: reference.len(),
        ..Default::default()
    };
    for op in align(reference, hyp)? {
        match op {
            EditOp::Match => {}
            EditOp::Sub => r.substitutions += 1,
            EditOp::Del => r.deletions += 1,
            EditOp::Ins => r.insertions += 1,
        }
    }
    Ok(r)
}

/// Pooled WER: total edits over total reference words.
pub fn corpus_wer<R, H, S>(pairs: &[(R, H)]) -> Result<WerResult, EvalError>
where
    R: AsRef<[S]>,
    H: AsRef<[S]>,
    S: AsRef<str>,
{
    if pairs.is_empty() {
        return Err(EvalError::NoPairs);
    }
    let mut total = WerResult::default();
    for (r, h) in pairs {
        total.add(&wer_pair(r.as_ref(), h.as_ref())?);
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McNemarResult {
    /// Utterances system A got wrong and B got right.
    pub b: usize,
    /// Utterances system A got right and B got wrong.
    pub c: usize,
    /// `(|b - c| - 1)^2 / (b + c)`, or 0 when there are no discordant pairs.
    pub statistic: f64,
    pub p_value: f64,
    /// Whether the exact binomial branch produced `p_value`.
    pub exact: bool,
    pub significant: bool,
}

pub const MCNEMAR_ALPHA: f64 = 0.05;
/// Below this many discordant pairs the exact binomial test is used.
pub const MCNEMAR_EXACT_BELOW: usize = 25;

/// Continuity-corrected chi-square statistic and its 1-df upper tail.
pub fn mcnemar_chi2(b: usize, c: usize) -> (f64, f64) {
    let n = b + c;
    if n == 0 {
        return (0.0, 1.0);
    }
    let diff = (b as f64 - c as f64).abs() - 1.0;
    let stat = diff.max(0.0).powi(2) / n as f64;
    // P(chi2_1 > x) = erfc(sqrt(x / 2))
    (stat, erfc((stat / 2.0).sqrt()))
}

/// Exact two-sided binomial p-value for `b` successes in `b + c` fair trials.
pub fn mcnemar_exact(b: usize, c: usize) -> f64 {
    let n = b + c;
    if n == 0 {
        return 1.0;
    }
    let dist = Binomial::new(0.5, n as u64).expect("p = 0.5 is valid");
    (2.0 * dist.cdf(b.min(c) as u64)).min(1.0)
}

/// Utterance-level McNemar test on per-utterance correctness flags.
pub fn mcnemar(correct_a: &[bool], correct_b: &[bool]) -> Result<McNemarResult, EvalError> {
    if correct_a.len() != correct_b.len() {
        return Err(EvalError::LengthMismatch(correct_a.len(), correct_b.len()));
    }
    let b = correct_a
        .iter()
        .zip(correct_b)
        .filter(|(a, b)| !**a && **b)
        .count();
    let c = correct_a
        .iter()
        .zip(correct_b)
        .filter(|(a, b)| **a && !**b)
        .count();
    Ok(mcnemar_counts(b, c))
}

pub fn mcnemar_counts(b: usize, c: usize) -> McNemarResult {
    let (statistic, chi2_p) = mcnemar_chi2(b, c);
    let exact = b + c < MCNEMAR_EXACT_BELOW;
    let p_value = if exact { mcnemar_exact(b, c) } else { chi2_p };
    McNemarResult {
        b,
        c,
        statistic,
        p_value,
        exact,
        significant: p_value < MCNEMAR_ALPHA,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldAggregate {
    pub values: Vec<f64>,
    pub mean: f64,
    /// Two standard errors of the mean, with the sample (n - 1) variance.
    pub two_se: f64,
}

pub fn aggregate_folds(values: &[f64]) -> Result<FoldAggregate, EvalError> {
    if values.is_empty() {
        return Err(EvalError::NoPairs);
    }
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let two_se = if values.len() == 1 {
        log::warn!("a single fold has no spread; reporting 0");
        0.0
    } else {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
        2.0 * var.sqrt() / k.sqrt()
    };
    Ok(FoldAggregate {
        values: values.to_vec(),
        mean,
        two_se,
    })
}

/// Reads `utt_id<TAB>text` lines. The text may be empty (an empty hypothesis).
pub fn read_utterances(text: &str) -> Result<Vec<(String, Vec<String>)>, EvalError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let (id, words) = l.split_once('\t').unwrap_or((l, ""));
            let id = id.trim();
            if id.is_empty() {
                return Err(EvalError::Format {
                    line: i + 1,
                    message: "missing utterance id".into(),
                });
            }
            Ok((id.to_string(), normalize_words(words)))
        })
        .collect()
}

/// `(reference words, hypothesis words)` for one utterance.
pub type WordPair = (Vec<String>, Vec<String>);

/// Pairs references with hypotheses by utterance id, in reference order.
pub fn pair_by_id(
    refs: &[(String, Vec<String>)],
    hyps: &[(String, Vec<String>)],
) -> Result<Vec<WordPair>, EvalError> {
    let by_id: std::collections::HashMap<&str, &Vec<String>> =
        hyps.iter().map(|(id, w)| (id.as_str(), w)).collect();
    refs.iter()
        .map(|(id, r)| {
            let h = by_id
                .get(id.as_str())
                .ok_or_else(|| EvalError::MissingHypothesis(id.clone()))?;
            Ok((r.clone(), (*h).clone()))
        })
        .collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    fn w(s: &str) -> Vec<String> {
        normalize_words(s)
    }

    /// Plain Levenshtein distance, written independently of `align`.
    pub(crate) fn levenshtein(a: &[String], b: &[String]) -> usize {
        let mut prev: Vec<usize> = (0..=b.len()).collect();
        for (i, x) in a.iter().enumerate() {
            let mut cur = vec![i + 1];
            for (j, y) in b.iter().enumerate() {
                let v = if x == y { prev[j] } else { 1 + prev[j].min(prev[j + 1]).min(cur[j]) };
                cur.push(v);
            }
            prev = cur;
        }
        prev[b.len()]
    }

    #[test]
    fn identical_has_no_edits() {
        let r = wer_pair(&w("turn right"), &w("turn right")).unwrap();
        assert_eq!(r.errors(), 0);
    }

    #[test]
    fn single_substitution() {
        let r = wer_pair(&w("follow the truck"), &w("follow the track")).unwrap();
        assert_eq!(r.substitutions, 1);
        assert!((r.wer() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_hypothesis_is_all_deletions() {
        let r = wer_pair(&w("go left now"), &[] as &[String]).unwrap();
        assert_eq!((r.deletions, r.wer()), (3, 1.0));
        assert_eq!(wer_pair(&[] as &[String], &w("a")), Err(EvalError::EmptyReference));
    }

    #[test]
    fn tie_break_prefers_substitution_then_deletion() {
        // "a b" vs "c": S+D either way; substitution comes first in the backtrace
        let ops = align(&w("a b"), &w("c")).unwrap();
        assert_eq!(ops.iter().filter(|o| **o == EditOp::Sub).count(), 1);
        assert_eq!(ops.iter().filter(|o| **o == EditOp::Del).count(), 1);
        assert_eq!(ops, [EditOp::Del, EditOp::Sub]);
        let ops = align(&w("a"), &w("b c")).unwrap();
        assert_eq!(ops, [EditOp::Ins, EditOp::Sub]);
    }

    #[test]
    fn wer_can_exceed_one() {
        let r = wer_pair(&w("go"), &w("no no no")).unwrap();
        assert_eq!(r.wer(), 3.0);
    }

    #[test]
    fn pooled_matches_summed_pairs() {
        let pairs = [
            ("turn left", "turn left"),
            ("follow the truck", "follow the track"),
            ("zoom in on the car", "zoom on car"),
            ("go", "go go"),
            ("alert on drowning person", "alert drowning person now"),
        ];
        let pairs: Vec<(Vec<String>, Vec<String>)> =
            pairs.iter().map(|(r, h)| (w(r), w(h))).collect();
        let res = corpus_wer(&pairs).unwrap();
        let edits: usize = pairs.iter().map(|(r, h)| levenshtein(r, h)).sum();
        let words: usize = pairs.iter().map(|(r, _)| r.len()).sum();
        assert_eq!(res.errors(), edits);
        assert_eq!(res.ref_words, words);
        // not the mean of per-utterance rates
        let mean: f64 = pairs
            .iter()
            .map(|(r, h)| levenshtein(r, h) as f64 / r.len() as f64)
            .sum::<f64>()
            / 5.0;
        assert!((res.wer() - mean).abs() > 1e-3);
    }

    #[test]
    fn mcnemar_reference_cases() {
        let (stat, p) = mcnemar_chi2(15, 5);
        assert!((stat - 4.05).abs() < 1e-12);
        assert!(stat > 3.841);
        // exact: 2 · sum_{k<=5} C(20, k) / 2^20 = 2 · 21700 / 1048576
        let exact = mcnemar_exact(15, 5);
        assert!((exact - 2.0 * 21700.0 / 1048576.0).abs() < 1e-12);
        assert!(p < 0.05 && exact < 0.05);
        let r = mcnemar_counts(15, 5);
        assert!(r.exact && r.significant);
        assert!((r.p_value - 0.041_389_465_332_031_25).abs() < 1e-12);
    }

    #[test]
    fn mcnemar_matches_frozen_reference_values() {
        // (b, c, chi-square tail, exact two-sided binomial), computed with an
        // external statistics package
        let cases = [
            (10, 20, 0.10034824646229054, 0.09873714670538905),
            (12, 25, 0.04851973828025081, 0.04703102743951604),
            (7, 18, 0.04550026389635857, 0.043285250663757324),
            (9, 22, 0.031141210595796717, 0.029449373483657837),
            (3, 1, 0.6170750774519739, 0.625),
            (0, 6, 0.041226833337163815, 0.03125),
        ];
        for (b, c, chi, ex) in cases {
            assert!((mcnemar_chi2(b, c).1 - chi).abs() < 1e-9, "{b} {c}");
            assert!((mcnemar_exact(b, c) - ex).abs() < 1e-9, "{b} {c}");
        }
    }

    #[test]
    fn branches_agree_for_25_to_40_discordant() {
        // Boundary band: (b, c) pairs in this range where the two branches reach
        // different decisions at 0.05. Enumerated with an external package: none.
        const BOUNDARY_BAND: &[(usize, usize)] = &[];
        let mut disagree = Vec::new();
        for n in 25..=40 {
            for b in 0..=n {
                let c = n - b;
                let chi = mcnemar_chi2(b, c).1 < MCNEMAR_ALPHA;
                let ex = mcnemar_exact(b, c) < MCNEMAR_ALPHA;
                if chi != ex {
                    disagree.push((b, c));
                }
            }
        }
        assert_eq!(disagree, BOUNDARY_BAND);
    }

    #[test]
    fn mcnemar_conventions() {
        let r = mcnemar(&[true, false], &[true, false]).unwrap();
        assert_eq!((r.b, r.c, r.p_value, r.significant), (0, 0, 1.0, false));
        for b in 1..=50 {
            assert!(!mcnemar_counts(b, b).significant);
        }
        assert_eq!(mcnemar(&[true], &[]), Err(EvalError::LengthMismatch(1, 0)));
        let a = [false, false, true, true, true];
        let bb = [true, true, false, true, true];
        let r = mcnemar(&a, &bb).unwrap();
        assert_eq!((r.b, r.c), (2, 1));
    }

    #[test]
    fn fold_aggregation() {
        let a = aggregate_folds(&[10.0, 12.0]).unwrap();
        assert_eq!(a.mean, 11.0);
        assert!((a.two_se - 2.0).abs() < 1e-12);
        assert_eq!(aggregate_folds(&[5.0, 5.0, 5.0]).unwrap().two_se, 0.0);
        assert_eq!(aggregate_folds(&[7.0]).unwrap().two_se, 0.0);
        assert!(aggregate_folds(&[]).is_err());
    }

    #[test]
    fn utterance_files() {
        let refs = read_utterances("u1\tTurn Left\nu2\tgo\n").unwrap();
        let hyps = read_utterances("u2\t\nu1\tturn  left\n").unwrap();
        let pairs = pair_by_id(&refs, &hyps).unwrap();
        assert_eq!(pairs[0], (w("turn left"), w("turn left")));
        assert!(pairs[1].1.is_empty());
        assert_eq!(
            pair_by_id(&refs, &hyps[..1]),
            Err(EvalError::MissingHypothesis("u1".into()))
        );
    }

    fn word_seq() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d"]), 0..=6)
            .prop_map(|v| v.into_iter().map(String::from).collect())
    }

    proptest! {
        #[test]
        fn alignment_cost_is_levenshtein(r in word_seq(), h in word_seq()) {
            prop_assume!(!r.is_empty());
            let res = wer_pair(&r, &h).unwrap();
            prop_assert_eq!(res.errors(), levenshtein(&r, &h));
            let ops = align(&r, &h).unwrap();
            let consumed_ref = ops.iter().filter(|o| **o != EditOp::Ins).count();
            let consumed_hyp = ops.iter().filter(|o| **o != EditOp::Del).count();
            prop_assert_eq!((consumed_ref, consumed_hyp), (r.len(), h.len()));
        }

        #[test]
        fn corpus_wer_is_permutation_invariant(
            pairs in prop::collection::vec((word_seq(), word_seq()), 1..8),
            rot in 0usize..8,
        ) {
            let pairs: Vec<_> = pairs.into_iter().filter(|(r, _)| !r.is_empty()).collect();
            prop_assume!(!pairs.is_empty());
            let mut shuffled = pairs.clone();
            shuffled.rotate_left(rot % pairs.len());
            shuffled.reverse();
            prop_assert_eq!(corpus_wer(&pairs).unwrap(), corpus_wer(&shuffled).unwrap());
        }
    }
}
