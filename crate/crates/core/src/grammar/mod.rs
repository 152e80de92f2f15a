//! Finite command grammars: the DSL, compilation to acyclic acceptors, and
//! grammar-constrained selection from n-best lists.

mod automaton;
mod parse;

use thiserror::Error;

pub use automaton::{Arc, Automaton, SampleMode};
pub use parse::{parse_grammar, Expr, Grammar, START_RULE};

use crate::command::Command;
use crate::rescore::NBestList;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GrammarError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("undefined rule `{name}` referenced from `{referenced_from}`")]
    UndefinedRule {
        name: String,
        referenced_from: String,
    },
    #[error("recursive rule (language would be infinite): {}", .0.join(" -> "))]
    RecursiveRule(Vec<String>),
    #[error("rule `{0}` defined twice")]
    DuplicateRule(String),
    #[error("grammar has no rules")]
    NoRules,
    #[error("invalid terminal `{word}` in rule `{rule}`")]
    InvalidTerminal { rule: String, word: String },
    #[error("start rule `{0}` can derive the empty command")]
    EmptyCommand(String),
    #[error("language is empty")]
    EmptyLanguage,
    #[error("language size exceeds 2^128")]
    CountOverflow,
    #[error("automaton has a cycle")]
    Cyclic,
    #[error("automaton text, line {line}: {message}")]
    AutomatonFormat { line: usize, message: String },
    #[error("n-best list is empty")]
    EmptyNBest,
}

/// Grammar-constrained decoding over a first-pass n-best list.
///
/// Returns the best-scoring (acoustic) hypothesis the automaton accepts. When
/// none is accepted, falls back to the best acoustic hypothesis overall.
/// Equal scores resolve to the earlier list position.
pub fn fsg_decode(fsg: &Automaton, nbest: &NBestList) -> Result<Command, GrammarError> {
    let best = |accepted_only: bool| {
        nbest
            .hyps
            .iter()
            .filter(|h| !accepted_only || fsg.accepts_command(&h.text))
            .fold(None, |best: Option<&crate::rescore::Hypothesis>, h| match best {
                Some(b) if b.acoustic >= h.acoustic => Some(b),
                _ => Some(h),
            })
    };
    best(true)
        .or_else(|| best(false))
        .map(|h| h.text.clone())
        .ok_or(GrammarError::EmptyNBest)
}
