use std::cmp::Ordering;

use super::{NGramError, NGramModel};

/// Count-cutoff pruning to at most `max_ngrams` stored n-grams.
///
/// Unigrams are never removed. Higher-order entries are dropped lowest count
/// first; at equal counts longer n-grams go first, then lower probability.
/// An entry that is still the context of a kept longer n-gram is skipped, so
/// every kept n-gram keeps its backoff path. Backoff weights are then
/// recomputed so each context stays normalized.
pub fn prune(model: &NGramModel, max_ngrams: usize) -> Result<NGramModel, NGramError> {
    let unigrams = model.table(1).len();
    if max_ngrams < unigrams {
        return Err(NGramError::InfeasibleBudget {
            budget: max_ngrams,
            unigrams,
        });
    }
    let total = model.total_ngrams();
    if total <= max_ngrams {
        return Ok(model.clone());
    }
    let order = model.sizes().len();
    let mut candidates: Vec<(&Vec<u32>, u64, f64)> = (2..=order)
        .flat_map(|k| model.table(k).iter())
        .map(|(g, e)| (g, e.count, e.log10_prob))
        .collect();
    candidates.sort_by(|a, b| {
        a.1.cmp(&b.1)
            .then_with(|| b.0.len().cmp(&a.0.len()))
            .then_with(|| a.2.partial_cmp(&b.2).unwrap_or(Ordering::Equal))
            .then_with(|| a.0.cmp(b.0))
    });

    let mut pruned = model.clone();
    let mut remaining = total;
    // number of kept (k+1)-grams that use each k-gram as context
    let mut dependents: std::collections::HashMap<Vec<u32>, usize> = Default::default();
    for k in 3..=order {
        for g in model.table(k).keys() {
            *dependents.entry(g[..k - 1].to_vec()).or_default() += 1;
        }
    }
    let mut skipped = Vec::new();
    let mut queue = candidates.into_iter();
    while remaining > max_ngrams {
        let Some((g, _, _)) = queue.next() else { break };
        if dependents.get(g.as_slice()).copied().unwrap_or(0) > 0 {
            skipped.push(g);
            continue;
        }
        pruned.tables_mut()[g.len() - 1].remove(g.as_slice());
        remaining -= 1;
        if g.len() >= 3 {
            if let Some(n) = dependents.get_mut(&g[..g.len() - 1]) {
                *n -= 1;
            }
        }
    }
    // skipped contexts may have become removable once their dependents went
    while remaining > max_ngrams {
        let before = remaining;
        skipped.retain(|g| {
            if remaining <= max_ngrams || dependents.get(g.as_slice()).copied().unwrap_or(0) > 0 {
                return true;
            }
            pruned.tables_mut()[g.len() - 1].remove(g.as_slice());
            remaining -= 1;
            if g.len() >= 3 {
                if let Some(n) = dependents.get_mut(&g[..g.len() - 1]) {
                    *n -= 1;
                }
            }
            false
        });
        if remaining == before {
            break;
        }
    }
    pruned.renormalize_backoffs();
    Ok(pruned)
}
