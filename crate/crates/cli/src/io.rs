use std::io::Read as _;
use std::path::{Path, PathBuf};

use cmdlm::command::normalize_words;

use crate::error::CliError;

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

/// Reads `path`, or standard input when it is `None` or `-`.
pub fn read_text_or_stdin(path: Option<&Path>) -> Result<String, CliError> {
    match path {
        Some(p) if p != Path::new("-") => read_text(p),
        _ => {
            let mut s = String::new();
            std::io::stdin()
                .read_to_string(&mut s)
                .map_err(|e| CliError::io(Path::new("<stdin>"), e))?;
            Ok(s)
        }
    }
}

/// Writes to `path`, or to standard output when it is `None` or `-`.
pub fn write_output(path: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    use std::io::Write as _;
    match path {
        Some(p) if p != Path::new("-") => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
            }
            std::fs::write(p, bytes).map_err(|e| CliError::io(p, e))
        }
        _ => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)
                .and_then(|_| out.flush())
                .map_err(|e| CliError::io(Path::new("<stdout>"), e))
        }
    }
}

/// Whitespace-tokenized, lowercased sentences, one per nonempty line.
pub fn read_sentences(path: &Path) -> Result<Vec<Vec<String>>, CliError> {
    let text = read_text(path)?;
    let out: Vec<Vec<String>> = text
        .lines()
        .map(normalize_words)
        .filter(|s| !s.is_empty())
        .collect();
    if out.is_empty() {
        return Err(CliError::Data(format!("{}: no sentences", path.display())));
    }
    Ok(out)
}

/// Reads one word per nonempty line.
pub fn read_word_list(path: &Path) -> Result<Vec<String>, CliError> {
    Ok(read_text(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_lowercase)
        .collect())
}

/// Resolves `p` against `base` unless it is absolute.
pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
