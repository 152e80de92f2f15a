use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CommandError {
    #[error("a command must contain at least one word")]
    Empty,
}

/// A nonempty sequence of lowercase words.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Command(Vec<String>);

impl Command {
    /// Lowercases and splits on whitespace.
    pub fn parse(text: &str) -> Result<Self, CommandError> {
        Self::from_words(normalize_words(text))
    }

    pub fn from_words<I, S>(words: I) -> Result<Self, CommandError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let words: Vec<String> = words
            .into_iter()
            .map(Into::into)
            .filter(|w| !w.is_empty())
            .collect();
        if words.is_empty() {
            return Err(CommandError::Empty);
        }
        Ok(Command(words))
    }

    pub fn words(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(" "))
    }
}

impl TryFrom<String> for Command {
    type Error = CommandError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Command::parse(&value)
    }
}

impl From<Command> for String {
    fn from(c: Command) -> String {
        c.to_string()
    }
}

/// Case- and whitespace-normalized word list. Possibly empty.
pub fn normalize_words(text: &str) -> Vec<String> {
    text.split_whitespace().map(|w| w.to_lowercase()).collect()
}

/// Reads one command per nonempty line.
pub fn parse_command_lines(text: &str) -> Result<Vec<Command>, CommandError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(Command::parse)
        .collect()
}

pub fn write_command_lines(commands: &[Command]) -> String {
    let mut out = String::new();
    for c in commands {
        out.push_str(&c.to_string());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_normalizes() {
        let c = Command::parse("  Turn   LEFT ").unwrap();
        assert_eq!(c.words(), ["turn", "left"]);
        assert_eq!(c.to_string(), "turn left");
    }

    #[test]
    fn empty_rejected() {
        assert_eq!(Command::parse("   "), Err(CommandError::Empty));
    }

    #[test]
    fn serde_as_string() {
        let c = Command::parse("go fast").unwrap();
        assert_eq!(serde_json::to_string(&c).unwrap(), "\"go fast\"");
        let back: Command = serde_json::from_str("\"Go  fast\"").unwrap();
        assert_eq!(back, c);
    }
}
