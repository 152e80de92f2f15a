use std::collections::HashMap;

use super::NGramError;
use crate::vocab::Vocab;

/// Raw n-gram counts up to a fixed order over `<s> w1 .. wn </s>` padded sentences.
///
/// Every n-gram ends at a predicted position, so `<s>` is never counted as a
/// unigram, and n-grams never extend to the left of `<s>`.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramCounts {
    pub order: usize,
    pub vocab: Vocab,
    /// `counts[k - 1]` holds k-gram counts.
    pub counts: Vec<HashMap<Vec<u32>, u64>>,
    pub sentences: usize,
}

impl NGramCounts {
    pub fn get(&self, ngram: &[u32]) -> u64 {
        if ngram.is_empty() || ngram.len() > self.order {
            return 0;
        }
        self.counts[ngram.len() - 1].get(ngram).copied().unwrap_or(0)
    }
}

pub fn count_ngrams<S: AsRef<[String]>>(
    corpus: &[S],
    order: usize,
    vocab: &Vocab,
) -> Result<NGramCounts, NGramError> {
    if order == 0 {
        return Err(NGramError::ZeroOrder);
    }
    if corpus.is_empty() {
        return Err(NGramError::EmptyCorpus);
    }
    let mut counts: Vec<HashMap<Vec<u32>, u64>> = vec![HashMap::new(); order];
    for s in corpus {
        let mut ids = Vec::with_capacity(s.as_ref().len() + 2);
        ids.push(Vocab::BOS_ID);
        ids.extend(vocab.encode(s.as_ref()));
        ids.push(Vocab::EOS_ID);
        for end in 1..ids.len() {
            for k in 1..=order.min(end + 1) {
                *counts[k - 1].entry(ids[end + 1 - k..=end].to_vec()).or_default() += 1;
            }
        }
    }
    Ok(NGramCounts {
        order,
        vocab: vocab.clone(),
        counts,
        sentences: corpus.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ngram::tests::sents;
    use rand::{Rng, SeedableRng};

    #[test]
    fn single_sentence_hand_count() {
        let v = Vocab::from_words(["a", "b"]);
        let c = count_ngrams(&sents(&["a b"]), 4, &v).unwrap();
        let (a, b) = (v.id("a"), v.id("b"));
        let (s, e) = (Vocab::BOS_ID, Vocab::EOS_ID);
        assert_eq!(c.get(&[a]), 1);
        assert_eq!(c.get(&[b]), 1);
        assert_eq!(c.get(&[e]), 1);
        assert_eq!(c.get(&[s]), 0);
        assert_eq!(c.get(&[s, a]), 1);
        assert_eq!(c.get(&[a, b]), 1);
        assert_eq!(c.get(&[b, e]), 1);
        assert_eq!(c.get(&[s, a, b]), 1);
        assert_eq!(c.get(&[a, b, e]), 1);
        assert_eq!(c.get(&[s, a, b, e]), 1);
        assert_eq!(c.counts.iter().map(HashMap::len).collect::<Vec<_>>(), [3, 3, 2, 1]);
    }

    #[test]
    fn duplicates_double() {
        let v = Vocab::from_words(["a", "b"]);
        let once = count_ngrams(&sents(&["a b"]), 3, &v).unwrap();
        let twice = count_ngrams(&sents(&["a b", "a b"]), 3, &v).unwrap();
        for (k, table) in once.counts.iter().enumerate() {
            for (g, &n) in table {
                assert_eq!(twice.counts[k][g], 2 * n);
            }
        }
    }

    #[test]
    fn oov_maps_to_unk_and_empty_corpus_fails() {
        let v = Vocab::from_words(["a"]);
        let c = count_ngrams(&sents(&["a zz"]), 2, &v).unwrap();
        assert_eq!(c.get(&[Vocab::UNK_ID]), 1);
        let empty: Vec<Vec<String>> = Vec::new();
        assert_eq!(count_ngrams(&empty, 4, &v), Err(NGramError::EmptyCorpus));
    }

    /// Naive tally: materialize every window as a string key.
    fn naive(corpus: &[Vec<String>], order: usize) -> HashMap<String, u64> {
        let mut out = HashMap::new();
        for s in corpus {
            let mut toks = vec!["<s>".to_string()];
            toks.extend(s.iter().cloned());
            toks.push("</s>".into());
            for k in 1..=order {
                for win in toks.windows(k) {
                    if k == 1 && win[0] == "<s>" {
                        continue;
                    }
                    *out.entry(win.join(" ")).or_default() += 1;
                }
            }
        }
        out
    }

    #[test]
    fn matches_naive_sliding_window() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let words = ["go", "up", "left", "the", "car", "zoom"];
        let corpus: Vec<Vec<String>> = (0..50)
            .map(|_| {
                let n = rng.gen_range(1..7);
                (0..n).map(|_| words[rng.gen_range(0..words.len())].to_string()).collect()
            })
            .collect();
        let v = Vocab::from_corpus(&corpus, None);
        let c = count_ngrams(&corpus, 4, &v).unwrap();
        let mut ours = HashMap::new();
        for table in &c.counts {
            for (g, &n) in table {
                let key: Vec<&str> = g.iter().map(|&id| v.word(id)).collect();
                ours.insert(key.join(" "), n);
            }
        }
        assert_eq!(ours, naive(&corpus, 4));
    }
}
