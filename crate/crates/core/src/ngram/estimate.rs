use std::collections::HashMap;
use std::str::FromStr;

use super::{Entry, NGramCounts, NGramError, NGramLm, NGramModel, LOG10_ZERO};
use crate::vocab::Vocab;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Smoothing {
    /// Interpolated Witten-Bell.
    #[default]
    WittenBell,
    /// Interpolated Kneser-Ney with one absolute discount per order,
    /// `D = n1 / (n1 + 2 n2)`, and continuation counts below the top order.
    KneserNey,
}

impl FromStr for Smoothing {
    type Err = NGramError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "witten-bell" | "wb" => Ok(Smoothing::WittenBell),
            "kneser-ney" | "kn" => Ok(Smoothing::KneserNey),
            _ => Err(NGramError::UnknownSmoothing(s.to_string())),
        }
    }
}

/// Counts actually used for estimation at each order: raw counts, or for
/// Kneser-Ney below the top order, the number of distinct left extensions
/// (n-grams starting with `<s>` have none and keep their raw counts).
fn effective_counts(c: &NGramCounts, smoothing: Smoothing) -> Vec<HashMap<Vec<u32>, u64>> {
    match smoothing {
        Smoothing::WittenBell => c.counts.clone(),
        Smoothing::KneserNey => {
            let mut eff = c.counts.clone();
            for k in 1..c.order {
                let mut cont: HashMap<Vec<u32>, u64> = HashMap::new();
                for g in c.counts[k].keys() {
                    *cont.entry(g[1..].to_vec()).or_default() += 1;
                }
                for (g, n) in eff[k - 1].iter_mut() {
                    if g[0] != Vocab::BOS_ID {
                        *n = cont.get(g).copied().unwrap_or(0);
                    }
                }
            }
            eff
        }
    }
}

/// Interpolated estimate `p(w|h) = alpha(h, w) + gamma(h) · p_lower(w|h')`,
/// parameterized by how `alpha` and `gamma` are computed.
trait Discounter {
    fn alpha(&self, count: u64, total: u64, types: u64) -> f64;
    fn gamma(&self, total: u64, types: u64) -> f64;
}

struct WittenBell;

impl Discounter for WittenBell {
    fn alpha(&self, count: u64, total: u64, types: u64) -> f64 {
        count as f64 / (total + types) as f64
    }

    fn gamma(&self, total: u64, types: u64) -> f64 {
        types as f64 / (total + types) as f64
    }
}

struct AbsoluteDiscount(f64);

impl Discounter for AbsoluteDiscount {
    fn alpha(&self, count: u64, total: u64, _types: u64) -> f64 {
        (count as f64 - self.0).max(0.0) / total as f64
    }

    fn gamma(&self, total: u64, types: u64) -> f64 {
        self.0 * types as f64 / total as f64
    }
}

fn kn_discount(order: usize, counts: &HashMap<Vec<u32>, u64>) -> Result<f64, NGramError> {
    let n1 = counts.values().filter(|&&n| n == 1).count() as u64;
    let n2 = counts.values().filter(|&&n| n == 2).count() as u64;
    // n2 = 0 gives D = 1, which is still a proper discount; n1 = 0 gives none
    if n1 == 0 {
        return Err(NGramError::KneserNeyDegenerate { order, n1, n2 });
    }
    Ok(n1 as f64 / (n1 + 2 * n2) as f64)
}

/// Estimates a backoff model from counts.
pub fn estimate(counts: &NGramCounts, smoothing: Smoothing) -> Result<NGramModel, NGramError> {
    let order = counts.order;
    if counts.counts.first().is_none_or(HashMap::is_empty) {
        return Err(NGramError::EmptyCorpus);
    }
    let eff = effective_counts(counts, smoothing);
    let discounters: Vec<Box<dyn Discounter>> = match smoothing {
        Smoothing::WittenBell => (0..order).map(|_| Box::new(WittenBell) as _).collect(),
        Smoothing::KneserNey => (0..order)
            .map(|k| kn_discount(k + 1, &eff[k]).map(|d| Box::new(AbsoluteDiscount(d)) as _))
            .collect::<Result<_, _>>()?,
    };
    let vocab = counts.vocab.clone();
    let npred = (vocab.len() - 1) as f64;
    let mut model = NGramModel::from_tables(order, vocab, vec![HashMap::new(); order]);

    for k in 1..=order {
        let mut groups: HashMap<&[u32], Vec<(u32, u64)>> = HashMap::new();
        for (g, &n) in &eff[k - 1] {
            if n > 0 {
                groups.entry(&g[..k - 1]).or_default().push((g[k - 1], n));
            }
        }
        let d = &discounters[k - 1];
        let mut table: HashMap<Vec<u32>, Entry> = HashMap::new();
        for (h, succ) in &groups {
            let total: u64 = succ.iter().map(|(_, n)| n).sum();
            let types = succ.len() as u64;
            let gamma = d.gamma(total, types);
            let lower = |w: u32| {
                if k == 1 {
                    1.0 / npred
                } else {
                    10f64.powf(model.log10_prob(&h[1..], w))
                }
            };
            let successors: Box<dyn Iterator<Item = (u32, u64)>> = if k == 1 {
                // every predictable word gets a unigram, seen or not
                let seen: HashMap<u32, u64> = succ.iter().copied().collect();
                Box::new(
                    (0..model.vocab().len() as u32)
                        .filter(|&w| w != Vocab::BOS_ID)
                        .map(move |w| (w, seen.get(&w).copied().unwrap_or(0))),
                )
            } else {
                Box::new(succ.iter().copied())
            };
            for (w, n) in successors {
                let p = d.alpha(n, total, types) + gamma * lower(w);
                let mut key = h.to_vec();
                key.push(w);
                let raw = counts.get(&key);
                table.insert(
                    key,
                    Entry {
                        log10_prob: p.log10(),
                        log10_backoff: 0.0,
                        count: raw,
                    },
                );
            }
        }
        if k == 1 {
            table.insert(
                vec![Vocab::BOS_ID],
                Entry {
                    log10_prob: LOG10_ZERO,
                    log10_backoff: 0.0,
                    count: 0,
                },
            );
        }
        model.tables_mut()[k - 1] = table;
        if k >= 2 {
            model.set_backoffs(k);
        }
    }
    Ok(model)
}
