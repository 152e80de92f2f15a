//! Model files the CLI understands: ARPA n-grams, mixture specs naming ARPA
//! components, and recurrent checkpoints (text-only or multimodal).

use std::path::{Path, PathBuf};

use cmdlm::multimodal::MmRnnLm;
use cmdlm::ngram::{read_arpa, MixtureModel, NGramModel};
use cmdlm::rescore::SentenceScorer;
use cmdlm::rnnlm::{load_checkpoint, RnnLm};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::io::{read_bytes, read_text, resolve};

const CHECKPOINT_MAGIC: &[u8] = b"CMDLMRNN";

/// A query-time interpolation of ARPA models, stored as JSON. Relative
/// component paths are resolved against the spec file's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub components: Vec<MixtureComponent>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub model: PathBuf,
    pub weight: f64,
}

pub enum Model {
    NGram(NGramModel),
    Mixture(MixtureModel),
    Rnn(RnnLm),
    Mm(MmRnnLm),
}

impl Model {
    pub fn load(path: &Path) -> Result<Model, CliError> {
        let bytes = read_bytes(path)?;
        if bytes.starts_with(CHECKPOINT_MAGIC) {
            let lm = load_checkpoint(&bytes).map_err(|e| CliError::from(e).in_file(path))?;
            return Ok(if lm.feat_dim() > 0 {
                Model::Mm(MmRnnLm::from_lm(lm)?)
            } else {
                Model::Rnn(lm)
            });
        }
        let text = String::from_utf8(bytes)
            .map_err(|_| CliError::Data(format!("{}: not a model file", path.display())))?;
        if text.trim_start().starts_with('{') {
            let spec: MixtureSpec =
                serde_json::from_str(&text).map_err(|e| CliError::from(e).in_file(path))?;
            let base = path.parent().unwrap_or(Path::new("."));
            let comps = spec
                .components
                .iter()
                .map(|c| Ok((load_arpa(&resolve(base, &c.model))?, c.weight)))
                .collect::<Result<Vec<_>, CliError>>()?;
            return Ok(Model::Mixture(
                MixtureModel::new(comps).map_err(|e| CliError::from(e).in_file(path))?,
            ));
        }
        Ok(Model::NGram(
            read_arpa(&text).map_err(|e| CliError::from(e).in_file(path))?,
        ))
    }

    pub fn scorer(&self) -> &dyn SentenceScorer {
        match self {
            Model::NGram(m) => m,
            Model::Mixture(m) => m,
            Model::Rnn(m) => m,
            Model::Mm(m) => m,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Model::NGram(_) => "an n-gram model",
            Model::Mixture(_) => "an n-gram mixture",
            Model::Rnn(_) => "a text-only recurrent model",
            Model::Mm(_) => "a multimodal recurrent model",
        }
    }
}

pub fn load_arpa(path: &Path) -> Result<NGramModel, CliError> {
    read_arpa(&read_text(path)?).map_err(|e| CliError::from(e).in_file(path))
}

pub fn load_rnn(path: &Path) -> Result<RnnLm, CliError> {
    match Model::load(path)? {
        Model::Rnn(m) => Ok(m),
        other => Err(CliError::Data(format!(
            "{}: expected a text-only recurrent checkpoint, found {}",
            path.display(),
            other.kind()
        ))),
    }
}

pub fn load_mm(path: &Path) -> Result<MmRnnLm, CliError> {
    match Model::load(path)? {
        Model::Mm(m) => Ok(m),
        other => Err(CliError::Data(format!(
            "{}: expected a multimodal checkpoint, found {}",
            path.display(),
            other.kind()
        ))),
    }
}
