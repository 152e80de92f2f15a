use std::collections::HashMap;
use std::fmt::Write as _;

use super::{Entry, NGramError, NGramLm, NGramModel, LOG10_ZERO};
use crate::vocab::{Vocab, BOS, EOS, UNK};

/// Writes the standard ARPA layout. Unigrams appear in vocabulary id order so
/// that reading the file back reproduces the same ids.
pub fn write_arpa(m: &NGramModel) -> String {
    let order = m.order();
    let v = m.vocab();
    let mut out = String::from("\n\\data\\\n");
    for k in 1..=order {
        let _ = writeln!(out, "ngram {}={}", k, m.table(k).len());
    }
    for k in 1..=order {
        let _ = write!(out, "\n\\{k}-grams:\n");
        let mut keys: Vec<&Vec<u32>> = m.table(k).keys().collect();
        keys.sort();
        for g in keys {
            let e = &m.table(k)[g];
            let words: Vec<&str> = g.iter().map(|&id| v.word(id)).collect();
            let _ = write!(out, "{:.7}\t{}", e.log10_prob, words.join(" "));
            if k < order {
                let _ = write!(out, "\t{:.7}", e.log10_backoff);
            }
            out.push('\n');
        }
    }
    out.push_str("\n\\end\\\n");
    out
}

fn arpa_err(line: usize, message: impl Into<String>) -> NGramError {
    NGramError::Arpa {
        line,
        message: message.into(),
    }
}

/// Parses an ARPA file. A missing `<s>` or `<unk>` unigram is added with
/// probability 10^-99; `</s>` is required.
pub fn read_arpa(text: &str) -> Result<NGramModel, NGramError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());

    match lines.next() {
        Some((_, "\\data\\")) => {}
        Some((n, _)) => return Err(arpa_err(n, "missing \\data\\ header")),
        None => return Err(arpa_err(1, "missing \\data\\ header")),
    }

    let mut declared: Vec<usize> = Vec::new();
    let mut raw: Vec<Vec<(Vec<String>, f64, f64)>> = Vec::new();
    let mut section: Option<usize> = None;
    let mut ended = false;
    for (n, line) in lines {
        if ended {
            return Err(arpa_err(n, "content after \\end\\"));
        }
        if line == "\\end\\" {
            ended = true;
            continue;
        }
        if let Some(rest) = line.strip_prefix("ngram ") {
            if section.is_some() {
                return Err(arpa_err(n, "ngram count after the data section"));
            }
            let (k, count) = rest
                .split_once('=')
                .ok_or_else(|| arpa_err(n, "expected `ngram K=COUNT`"))?;
            let k: usize = k.trim().parse().map_err(|_| arpa_err(n, "bad order"))?;
            let count: usize = count.trim().parse().map_err(|_| arpa_err(n, "bad count"))?;
            if k != declared.len() + 1 {
                return Err(arpa_err(n, "ngram counts must be listed in order 1, 2, ..."));
            }
            declared.push(count);
            continue;
        }
        if let Some(k) = line
            .strip_prefix('\\')
            .and_then(|l| l.strip_suffix("-grams:"))
        {
            let k: usize = k.parse().map_err(|_| arpa_err(n, "bad section header"))?;
            if k != raw.len() + 1 || k > declared.len() {
                return Err(arpa_err(n, format!("unexpected section \\{k}-grams:")));
            }
            raw.push(Vec::new());
            section = Some(k);
            continue;
        }
        let k = section.ok_or_else(|| arpa_err(n, "entry outside an n-gram section"))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != k + 1 && fields.len() != k + 2 {
            return Err(arpa_err(
                n,
                format!("expected {} or {} fields, found {}", k + 1, k + 2, fields.len()),
            ));
        }
        let prob: f64 = fields[0]
            .parse()
            .map_err(|_| arpa_err(n, format!("bad probability `{}`", fields[0])))?;
        let bow: f64 = match fields.get(k + 1) {
            Some(b) => b.parse().map_err(|_| arpa_err(n, format!("bad backoff `{b}`")))?,
            None => 0.0,
        };
        if !prob.is_finite() || !bow.is_finite() {
            return Err(arpa_err(n, "non-finite value"));
        }
        let words = fields[1..=k].iter().map(|w| w.to_string()).collect();
        raw[k - 1].push((words, prob, bow));
    }
    if !ended {
        return Err(arpa_err(text.lines().count(), "missing \\end\\"));
    }
    if declared.is_empty() {
        return Err(arpa_err(1, "no ngram counts declared"));
    }
    if raw.len() != declared.len() {
        return Err(arpa_err(text.lines().count(), "missing n-gram sections"));
    }
    for (k, (entries, &want)) in raw.iter().zip(&declared).enumerate() {
        if entries.len() != want {
            return Err(arpa_err(
                0,
                format!("{}-grams: declared {want}, found {}", k + 1, entries.len()),
            ));
        }
    }

    let vocab = Vocab::from_words(raw[0].iter().map(|(w, _, _)| w[0].as_str()));
    if !raw[0].iter().any(|(w, _, _)| w[0] == EOS) {
        return Err(arpa_err(0, "no </s> unigram"));
    }
    let order = declared.len();
    let mut tables: Vec<HashMap<Vec<u32>, Entry>> = vec![HashMap::new(); order];
    for (k, entries) in raw.into_iter().enumerate() {
        for (words, prob, bow) in entries {
            let mut ids = Vec::with_capacity(words.len());
            for w in &words {
                ids.push(
                    vocab
                        .get(w)
                        .ok_or_else(|| arpa_err(0, format!("word `{w}` has no unigram")))?,
                );
            }
            tables[k].insert(
                ids,
                Entry {
                    log10_prob: prob,
                    log10_backoff: bow,
                    count: 0,
                },
            );
        }
    }
    for w in [BOS, UNK] {
        tables[0].entry(vec![vocab.id(w)]).or_insert(Entry {
            log10_prob: LOG10_ZERO,
            log10_backoff: 0.0,
            count: 0,
        });
    }
    Ok(NGramModel::from_tables(order, vocab, tables))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ngram::tests::sents;
    use crate::ngram::{count_ngrams, estimate, Smoothing};

    const MINIMAL: &str = "\\data\\
ngram 1=4
ngram 2=2

\\1-grams:
-0.30103 <s> -0.30103
-0.30103 </s>
-0.60206 go -0.1
-0.60206 <unk>

\\2-grams:
-0.1 <s> go
-0.2 go </s>

\\end\\
";

    #[test]
    #[allow(clippy::approx_constant)]
    fn minimal_external_fixture() {
        let m = read_arpa(MINIMAL).unwrap();
        assert_eq!(m.order(), 2);
        // p(go|<s>) = 10^-0.1, p(</s>|go) = 10^-0.2
        assert!((m.sentence_log10prob(&["go"]) - (-0.3)).abs() < 1e-12);
        // p(<unk>|go) backs off through bow(go); <unk> has no backoff weight
        let lp = m.sentence_log10prob(&["go", "fly"]);
        let want = -0.1 + (-0.1 + -0.60206) + -0.30103;
        assert!((lp - want).abs() < 1e-12, "{lp} vs {want}");
    }

    #[test]
    fn round_trip_preserves_model() {
        let c = sents(&["turn left", "turn right now", "zoom on the red car", "turn left"]);
        let v = Vocab::from_corpus(&c, None);
        let m = estimate(&count_ngrams(&c, 4, &v).unwrap(), Smoothing::WittenBell).unwrap();
        let back = read_arpa(&write_arpa(&m)).unwrap();
        assert_eq!(back.vocab(), m.vocab());
        assert_eq!(back.sizes(), m.sizes());
        for k in 1..=4 {
            for (g, e) in m.table(k) {
                let b = back.entry(g).unwrap();
                assert!((b.log10_prob - e.log10_prob).abs() < 1e-4);
                assert!((b.log10_backoff - e.log10_backoff).abs() < 1e-4);
            }
        }
        let test = sents(&["turn on the car", "left"]);
        let (p1, p2) = (m.perplexity(&test), back.perplexity(&test));
        assert!(((p1 - p2) / p1).abs() < 1e-3);
    }

    #[test]
    fn diagnostics() {
        let err = read_arpa("ngram 1=1\n\\1-grams:\n-1 </s>\n\\end\\\n").unwrap_err();
        assert_eq!(err, arpa_err(1, "missing \\data\\ header"));
        let err = read_arpa("\\data\\\nngram 1=1\n\\1-grams:\nx </s>\n\\end\\\n").unwrap_err();
        assert!(matches!(err, NGramError::Arpa { line: 4, .. }), "{err}");
        let err = read_arpa("\\data\\\nngram 1=2\n\\1-grams:\n-1 </s>\n\\end\\\n").unwrap_err();
        assert!(err.to_string().contains("declared 2"), "{err}");
        let err = read_arpa("\\data\\\nngram 1=1\n\\1-grams:\n-1 </s>\n").unwrap_err();
        assert!(err.to_string().contains("\\end\\"), "{err}");
    }
}
