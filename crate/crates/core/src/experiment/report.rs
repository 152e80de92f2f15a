use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{row_spec, ExpError};
use crate::eval::{aggregate_folds, mcnemar, FoldAggregate, McNemarResult};

/// Outcome of one system on one training fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellResult {
    pub row: u8,
    pub size: usize,
    pub fold: usize,
    pub errors: usize,
    pub ref_words: usize,
    /// Whole-utterance correctness, in evaluation-set order.
    pub correct: Vec<bool>,
}

impl CellResult {
    pub fn wer(&self) -> f64 {
        self.errors as f64 / self.ref_words as f64
    }
}

/// McNemar's test between two systems at one size, folds pooled.
#[derive(Debug, Clone, PartialEq)]
pub struct Significance {
    pub size: usize,
    pub rows: (u8, u8),
    pub result: McNemarResult,
}

/// All cell results of a run, keyed by `(row, size, fold)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rows: Vec<u8>,
    pub sizes: Vec<usize>,
    pub folds: usize,
    cells: BTreeMap<(u8, usize, usize), CellResult>,
}

/// Pairs compared for significance: the text-only recurrent rescorer against
/// each image-conditioned one.
const COMPARISONS: [(u8, u8); 2] = [(4, 5), (4, 6)];

impl Report {
    pub(crate) fn new(rows: Vec<u8>, sizes: Vec<usize>, folds: usize, results: Vec<CellResult>) -> Self {
        let cells = results
            .into_iter()
            .map(|c| ((c.row, c.size, c.fold), c))
            .collect();
        Report {
            rows,
            sizes,
            folds,
            cells,
        }
    }

    pub fn cell(&self, row: u8, size: usize, fold: usize) -> Option<&CellResult> {
        self.cells.get(&(row, size, fold))
    }

    /// Per-fold WERs as fractions.
    pub fn fold_wers(&self, row: u8, size: usize) -> Vec<f64> {
        (0..self.folds)
            .filter_map(|k| self.cell(row, size, k))
            .map(CellResult::wer)
            .collect()
    }

    pub fn aggregate(&self, row: u8, size: usize) -> Option<FoldAggregate> {
        aggregate_folds(&self.fold_wers(row, size)).ok()
    }

    pub fn mean_wer(&self, row: u8, size: usize) -> Option<f64> {
        self.aggregate(row, size).map(|a| a.mean)
    }

    pub fn significance(&self) -> Result<Vec<Significance>, ExpError> {
        let mut out = Vec::new();
        for &(a, b) in &COMPARISONS {
            if !self.rows.contains(&a) || !self.rows.contains(&b) {
                continue;
            }
            for &size in &self.sizes {
                let pooled = |row| -> Vec<bool> {
                    (0..self.folds)
                        .filter_map(|k| self.cell(row, size, k))
                        .flat_map(|c| c.correct.iter().copied())
                        .collect()
                };
                out.push(Significance {
                    size,
                    rows: (a, b),
                    result: mcnemar(&pooled(a), &pooled(b))?,
                });
            }
        }
        Ok(out)
    }

    /// `system<TAB>n<TAB>fold<TAB>wer`, WER in percent.
    pub fn cells_tsv(&self) -> String {
        let mut out = String::from("system\tn\tfold\twer\n");
        for c in self.cells.values() {
            let _ = writeln!(out, "row{}\t{}\t{}\t{:.4}", c.row, c.size, c.fold, 100.0 * c.wer());
        }
        out
    }

    /// The aggregate table, one line per system, WER % as mean ± 2·SE.
    pub fn table_text(&self) -> Result<String, ExpError> {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "WER (%), mean ± 2·SE over {} fold{} per training size",
            self.folds,
            if self.folds == 1 { "" } else { "s" }
        );
        let _ = write!(out, "{:<4} {:<15} {:<13} {:<11}", "row", "decoding", "rescoring", "img.assoc.");
        for s in &self.sizes {
            let _ = write!(out, " {:>16}", format!("n={s}"));
        }
        out.push('\n');
        for &row in &self.rows {
            let spec = row_spec(row).expect("rows are validated");
            let label = if row == 0 { "base".to_string() } else { row.to_string() };
            let _ = write!(
                out,
                "{label:<4} {:<15} {:<13} {:<11}",
                spec.decoder_label(),
                spec.rescorer_label(),
                spec.assoc_label()
            );
            for &s in &self.sizes {
                let cell = match self.aggregate(row, s) {
                    Some(a) => format!("{:.2} ± {:.2}", 100.0 * a.mean, 100.0 * a.two_se),
                    None => "-".into(),
                };
                let _ = write!(out, " {cell:>16}");
            }
            out.push('\n');
        }
        let sig = self.significance()?;
        if !sig.is_empty() {
            let _ = writeln!(out, "\nMcNemar's test on utterance correctness, folds pooled (alpha 0.05)");
            let _ = writeln!(
                out,
                "{:<8} {:<8} {:>6} {:>6} {:>10} {:>10} {:<6} significant",
                "n", "systems", "b", "c", "statistic", "p", "test"
            );
            for s in sig {
                let r = &s.result;
                let _ = writeln!(
                    out,
                    "{:<8} {:<8} {:>6} {:>6} {:>10.4} {:>10.4} {:<6} {}",
                    s.size,
                    format!("{} vs {}", s.rows.0, s.rows.1),
                    r.b,
                    r.c,
                    r.statistic,
                    r.p_value,
                    if r.exact { "exact" } else { "chi2" },
                    if r.significant { "yes" } else { "no" }
                );
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(row: u8, size: usize, fold: usize, errors: usize, correct: &[bool]) -> CellResult {
        CellResult {
            row,
            size,
            fold,
            errors,
            ref_words: 50,
            correct: correct.to_vec(),
        }
    }

    #[test]
    fn aggregates_and_renders() {
        let r = Report::new(
            vec![1, 2],
            vec![32, 256],
            2,
            vec![
                cell(2, 256, 1, 4, &[true]),
                cell(1, 32, 0, 10, &[true]),
                cell(1, 32, 1, 20, &[false]),
                cell(1, 256, 0, 5, &[true]),
                cell(1, 256, 1, 5, &[true]),
                cell(2, 32, 0, 8, &[true]),
                cell(2, 32, 1, 8, &[true]),
                cell(2, 256, 0, 6, &[true]),
            ],
        );
        let a = r.aggregate(1, 32).unwrap();
        assert!((a.mean - 0.3).abs() < 1e-12);
        assert!((a.two_se - 0.2).abs() < 1e-12);
        assert_eq!(r.fold_wers(2, 256), [0.12, 0.08]);
        let tsv = r.cells_tsv();
        assert_eq!(tsv.lines().count(), 9);
        assert_eq!(tsv.lines().nth(1), Some("row1\t32\t0\t20.0000"));
        let table = r.table_text().unwrap();
        assert!(table.contains("30.00 ± 20.00"), "{table}");
        assert!(table.contains("FSG"));
        assert!(!table.contains("McNemar"));
    }

    #[test]
    fn significance_pools_folds() {
        let mut cells = Vec::new();
        for k in 0..2 {
            cells.push(cell(4, 8, k, 0, &[false; 10]));
            cells.push(cell(5, 8, k, 0, &[true; 10]));
        }
        let r = Report::new(vec![4, 5], vec![8], 2, cells);
        let s = r.significance().unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!((s[0].result.b, s[0].result.c), (20, 0));
        assert!(s[0].result.significant);
        assert!(r.table_text().unwrap().contains("4 vs 5"));
    }
}
