use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cmdlm::associate::AssocError;
use cmdlm::command::CommandError;
use cmdlm::corpus::CorpusError;
use cmdlm::eval::EvalError;
use cmdlm::experiment::ExpError;
use cmdlm::grammar::GrammarError;
use cmdlm::multimodal::MmError;
use cmdlm::ngram::NGramError;
use cmdlm::rescore::RescoreError;
use cmdlm::rnnlm::RnnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flag values or an invalid combination of options.
    #[error("{0}")]
    Usage(String),
    /// Unreadable or malformed input, or a failed check.
    #[error("{0}")]
    Data(String),
    /// Training produced a non-finite loss or gradient.
    #[error("{0}")]
    Diverged(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) | CliError::Io { .. } => 2,
            CliError::Diverged(_) => 3,
        })
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Prefixes the message with the file it came from.
    pub fn in_file(self, path: &Path) -> Self {
        let wrap = |m: String| format!("{}: {m}", path.display());
        match self {
            CliError::Usage(m) => CliError::Usage(wrap(m)),
            CliError::Data(m) => CliError::Data(wrap(m)),
            CliError::Diverged(m) => CliError::Diverged(wrap(m)),
            e @ CliError::Io { .. } => e,
        }
    }
}

impl From<RnnError> for CliError {
    fn from(e: RnnError) -> Self {
        match e {
            RnnError::Diverged { .. } => CliError::Diverged(e.to_string()),
            RnnError::InvalidConfig(_) | RnnError::InvalidTrainConfig(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<MmError> for CliError {
    fn from(e: MmError) -> Self {
        match e {
            MmError::Rnn(inner) => inner.into(),
            MmError::ZeroDim => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<NGramError> for CliError {
    fn from(e: NGramError) -> Self {
        match e {
            NGramError::ZeroOrder
            | NGramError::LambdaOutOfRange(_)
            | NGramError::UnknownSmoothing(_)
            | NGramError::InfeasibleBudget { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<RescoreError> for CliError {
    fn from(e: RescoreError) -> Self {
        match e {
            RescoreError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::FoldSpec(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ExpError> for CliError {
    fn from(e: ExpError) -> Self {
        if e.is_divergence() {
            CliError::Diverged(e.to_string())
        } else if matches!(e, ExpError::Config(_) | ExpError::Toml(_)) {
            CliError::Usage(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

macro_rules! data_errors {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        })*
    };
}

data_errors!(GrammarError, EvalError, AssocError, CommandError, serde_json::Error);
