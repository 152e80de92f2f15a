use std::path::PathBuf;

use clap::Subcommand;
use cmdlm::command::{parse_command_lines, write_command_lines};
use cmdlm::corpus::{make_folds, measured_snr_db, mix_noise, stats, stats_tsv, AudioClip, FoldSpec};
use cmdlm::grammar::SampleMode;

use crate::error::CliError;
use crate::grammar_cmd::load_language;
use crate::io::{read_bytes, read_text, write_output};

#[derive(Debug, Subcommand)]
pub enum CorpusCmd {
    /// Sample training folds of each size from a grammar into a directory.
    Folds {
        /// Grammar in the rule DSL, or a serialized automaton.
        language: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = FoldSpec::default().sizes)]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// production-uniform or language-uniform.
        #[arg(long, default_value = "production-uniform")]
        mode: String,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Size, distinct commands and evaluation overlap of training files.
    Stats {
        /// Evaluation command list.
        #[arg(long)]
        eval: PathBuf,
        /// Training command lists.
        #[arg(required = true)]
        train: Vec<PathBuf>,
    },
    /// Add noise to a clean recording at a target signal-to-noise ratio.
    Mixnoise {
        #[arg(long)]
        clean: PathBuf,
        #[arg(long)]
        noise: PathBuf,
        #[arg(long, default_value_t = 10.0, allow_negative_numbers = true)]
        snr_db: f64,
        /// Picks the crop offset into noise longer than the clean clip.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        out: PathBuf,
    },
}

fn read_commands(path: &std::path::Path) -> Result<Vec<cmdlm::Command>, CliError> {
    parse_command_lines(&read_text(path)?).map_err(|e| CliError::from(e).in_file(path))
}

pub fn run(cmd: CorpusCmd) -> Result<(), CliError> {
    match cmd {
        CorpusCmd::Folds {
            language,
            sizes,
            folds,
            seed,
            mode,
            out_dir,
        } => {
            let mode: SampleMode = mode.parse().map_err(CliError::Usage)?;
            let a = load_language(&language)?;
            let spec = FoldSpec {
                sizes,
                folds_per_size: folds,
                seed,
                mode,
            };
            std::fs::create_dir_all(&out_dir).map_err(|e| CliError::io(&out_dir, e))?;
            let mut listing = String::new();
            for f in make_folds(&a, &spec)? {
                let path = out_dir.join(f.file_name());
                write_output(Some(&path), write_command_lines(&f.commands).as_bytes())?;
                listing.push_str(&format!("{}\n", path.display()));
            }
            write_output(None, listing.as_bytes())
        }
        CorpusCmd::Stats { eval, train } => {
            let eval_cmds = read_commands(&eval)?;
            let rows = train
                .iter()
                .map(|p| stats(&read_commands(p)?, &eval_cmds).map_err(|e| CliError::from(e).in_file(p)))
                .collect::<Result<Vec<_>, CliError>>()?;
            write_output(None, stats_tsv(&rows).as_bytes())
        }
        CorpusCmd::Mixnoise {
            clean,
            noise,
            snr_db,
            seed,
            out,
        } => {
            let load = |p: &PathBuf| -> Result<AudioClip, CliError> {
                AudioClip::read_wav(&read_bytes(p)?).map_err(|e| CliError::from(e).in_file(p))
            };
            let c = load(&clean)?;
            let m = mix_noise(&c, &load(&noise)?, snr_db, seed)?;
            write_output(Some(&out), &m.mixed.write_wav()?)?;
            log::info!(
                "gain {:.6}, snr {:.4} dB before quantization",
                m.gain,
                measured_snr_db(c.samples(), &m.scaled_noise)
            );
            Ok(())
        }
    }
}
