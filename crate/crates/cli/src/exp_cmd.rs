use std::path::{Path, PathBuf};

use clap::Subcommand;
use cmdlm::experiment::{run_experiment, ExperimentConfig};

use crate::error::CliError;
use crate::io::{read_text, write_output};

#[derive(Debug, Subcommand)]
pub enum ExpCmd {
    /// Run the system comparison described by a config file.
    Run {
        /// TOML experiment config.
        #[arg(long)]
        config: PathBuf,
        /// Directory for `report.txt` and `cells.tsv`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `jobs`; 0 uses every core.
        #[arg(long)]
        jobs: Option<usize>,
        /// Overrides `cache_dir`.
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        /// Overrides `rows`.
        #[arg(long, value_delimiter = ',')]
        rows: Option<Vec<u8>>,
        /// Overrides `baseline`.
        #[arg(long)]
        baseline: Option<bool>,
        /// Overrides `folds.sizes`.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        /// Overrides `folds.folds_per_size`.
        #[arg(long)]
        folds: Option<usize>,
        /// Overrides `eval.size`.
        #[arg(long)]
        eval_size: Option<usize>,
        /// Sets any config key, e.g. `--set rnn.dim=64`. Values are TOML.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

/// Applies `a.b.c=value` to a parsed TOML document. Values that do not parse
/// as TOML are taken as strings.
fn apply_set(doc: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{assignment}`")))?;
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, path) = parts.split_last().expect("split yields at least one part");
    let mut table = doc;
    for p in path {
        table = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| CliError::Usage(format!("--set {key}: `{p}` is not a section")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

fn load_config(path: &Path, set: &[String]) -> Result<ExperimentConfig, CliError> {
    let text = read_text(path)?;
    let mut doc: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| CliError::Usage(format!("{}: {e}", path.display())))?;
    for s in set {
        apply_set(&mut doc, s)?;
    }
    let base = path.parent().unwrap_or(Path::new("."));
    ExperimentConfig::from_toml(&doc.to_string(), base).map_err(|e| CliError::from(e).in_file(path))
}

pub fn run(cmd: ExpCmd) -> Result<(), CliError> {
    let ExpCmd::Run {
        config,
        out,
        seed,
        jobs,
        cache_dir,
        rows,
        baseline,
        sizes,
        folds,
        eval_size,
        set,
    } = cmd;
    let mut cfg = load_config(&config, &set)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(j) = jobs {
        cfg.jobs = j;
    }
    if let Some(d) = cache_dir {
        cfg.cache_dir = Some(d);
    }
    if let Some(r) = rows {
        cfg.rows = r;
    }
    if let Some(b) = baseline {
        cfg.baseline = b;
    }
    if let Some(s) = sizes {
        cfg.folds.sizes = s;
    }
    if let Some(f) = folds {
        cfg.folds.folds_per_size = f;
    }
    if let Some(n) = eval_size {
        cfg.eval.size = n;
    }
    let run = run_experiment(&cfg)?;
    log::info!(
        "config {}: {} cells computed, {} from cache",
        run.fingerprint,
        run.computed,
        run.cached
    );
    let table = run.report.table_text()?;
    if let Some(dir) = out {
        write_output(Some(&dir.join("report.txt")), table.as_bytes())?;
        write_output(Some(&dir.join("cells.tsv")), run.report.cells_tsv().as_bytes())?;
    }
    write_output(None, table.as_bytes())
}
