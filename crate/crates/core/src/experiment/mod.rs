//! End-to-end experiment runner: sample training folds from a command
//! grammar, simulate recognizer n-best lists, decode and rescore them with
//! each system of the comparison table, and report fold-aggregated WER.

pub mod channel;
mod config;
mod report;
mod run;
pub mod world;

use std::path::PathBuf;

use thiserror::Error;

pub use channel::{simulate_channel, ConfusionTable};
pub use config::{
    ChannelSettings, EvalSettings, ExperimentConfig, FoldSettings, GenericSettings, ImageSettings,
    NGramSettings, RnnSettings,
};
pub use report::{CellResult, Report, Significance};
pub use run::{run_experiment, ExperimentRun};

use crate::associate::AssocError;
use crate::corpus::CorpusError;
use crate::eval::EvalError;
use crate::grammar::GrammarError;
use crate::multimodal::MmError;
use crate::ngram::NGramError;
use crate::rescore::RescoreError;
use crate::rnnlm::RnnError;

#[derive(Debug, Error)]
pub enum ExpError {
    #[error("config: {0}")]
    Config(String),
    #[error("config file: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("{what} line {line}: {message}")]
    Format {
        what: String,
        line: usize,
        message: String,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    NGram(#[from] NGramError),
    #[error(transparent)]
    Rnn(#[from] RnnError),
    #[error(transparent)]
    Mm(#[from] MmError),
    #[error(transparent)]
    Assoc(#[from] AssocError),
    #[error(transparent)]
    Rescore(#[from] RescoreError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("row {row}, n={size}, fold {fold}: {source}")]
    Cell {
        row: u8,
        size: usize,
        fold: usize,
        source: Box<ExpError>,
    },
}

impl ExpError {
    /// True when training stopped on a non-finite loss or gradient.
    pub fn is_divergence(&self) -> bool {
        match self {
            ExpError::Rnn(RnnError::Diverged { .. }) | ExpError::Mm(MmError::Rnn(RnnError::Diverged { .. })) => true,
            ExpError::Cell { source, .. } => source.is_divergence(),
            _ => false,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ExpError::Io {
            path: path.into(),
            source,
        }
    }

    fn in_cell(self, row: u8, size: usize, fold: usize) -> Self {
        match self {
            e @ ExpError::Cell { .. } => e,
            e => ExpError::Cell {
                row,
                size,
                fold,
                source: Box::new(e),
            },
        }
    }
}

/// First-pass decoder of a system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decoder {
    /// Grammar built from the training commands.
    Fsg,
    /// Small interpolated n-gram.
    NGramSmall,
    /// Small generic n-gram with no in-domain data.
    Generic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rescorer {
    None,
    NGramLarge,
    Rnn,
    MmRnn,
}

/// Where the evaluation images for a multimodal rescorer come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageAssoc {
    None,
    Annotated,
    Generated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowSpec {
    pub row: u8,
    pub decoder: Decoder,
    pub rescorer: Rescorer,
    pub assoc: ImageAssoc,
}

/// The unadapted generic n-gram decoder, reported above the numbered rows.
pub const BASELINE_ROW: u8 = 0;

/// The systems of the comparison table, numbered as there, plus the baseline.
pub fn row_spec(row: u8) -> Option<RowSpec> {
    use Decoder::*;
    let (decoder, rescorer, assoc) = match row {
        0 => (Generic, Rescorer::None, ImageAssoc::None),
        1 => (Fsg, Rescorer::None, ImageAssoc::None),
        2 => (NGramSmall, Rescorer::None, ImageAssoc::None),
        3 => (NGramSmall, Rescorer::NGramLarge, ImageAssoc::None),
        4 => (NGramSmall, Rescorer::Rnn, ImageAssoc::None),
        5 => (NGramSmall, Rescorer::MmRnn, ImageAssoc::Annotated),
        6 => (NGramSmall, Rescorer::MmRnn, ImageAssoc::Generated),
        _ => return None,
    };
    Some(RowSpec {
        row,
        decoder,
        rescorer,
        assoc,
    })
}

impl RowSpec {
    pub fn decoder_label(&self) -> &'static str {
        match self.decoder {
            Decoder::Fsg => "FSG",
            Decoder::NGramSmall => "n-gram small",
            Decoder::Generic => "generic n-gram",
        }
    }

    pub fn rescorer_label(&self) -> &'static str {
        match self.rescorer {
            Rescorer::None => "-",
            Rescorer::NGramLarge => "n-gram large",
            Rescorer::Rnn => "RNN",
            Rescorer::MmRnn => "MM-RNN",
        }
    }

    pub fn assoc_label(&self) -> &'static str {
        match self.assoc {
            ImageAssoc::None => "-",
            ImageAssoc::Annotated => "annotated",
            ImageAssoc::Generated => "generated",
        }
    }
}
