use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use cmdlm::command::{normalize_words, write_command_lines};
use cmdlm::grammar::{parse_grammar, Automaton, SampleMode};

use crate::error::CliError;
use crate::io::{read_text, read_text_or_stdin, write_output};

#[derive(Debug, Subcommand)]
pub enum GrammarCmd {
    /// Check a grammar and print it in canonical form.
    Parse(GrammarFile),
    /// Compile a grammar to a minimal deterministic automaton.
    Compile {
        #[command(flatten)]
        input: GrammarFile,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Print the number of distinct commands in the language.
    Count(LanguageFile),
    /// Draw commands from the language, with repeats.
    Sample {
        #[command(flatten)]
        input: LanguageFile,
        #[arg(short = 'n', long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// production-uniform or language-uniform.
        #[arg(long, default_value = "production-uniform")]
        mode: String,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Mark each command as `accept` or `reject`.
    Accept {
        #[command(flatten)]
        input: LanguageFile,
        /// One command per line; standard input when omitted.
        #[arg(long)]
        commands: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct GrammarFile {
    /// Grammar in the rule DSL.
    pub grammar: PathBuf,
}

#[derive(Debug, Args)]
pub struct LanguageFile {
    /// Grammar in the rule DSL, or a serialized automaton.
    pub language: PathBuf,
}

/// Compiles a grammar file, or reads an automaton file as is.
pub fn load_language(path: &Path) -> Result<Automaton, CliError> {
    let text = read_text(path)?;
    let first = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .unwrap_or("");
    let a = if first.starts_with("states ") {
        Automaton::from_text(&text)
    } else {
        parse_grammar(&text).map(|g| Automaton::compile(&g))
    };
    a.map_err(|e| CliError::from(e).in_file(path))
}

pub fn run(cmd: GrammarCmd) -> Result<(), CliError> {
    match cmd {
        GrammarCmd::Parse(f) => {
            let g = parse_grammar(&read_text(&f.grammar)?).map_err(|e| CliError::from(e).in_file(&f.grammar))?;
            log::info!("{} rules, start `{}`", g.rules().len(), g.start());
            write_output(None, format!("{g}").as_bytes())
        }
        GrammarCmd::Compile { input, out } => {
            let g = parse_grammar(&read_text(&input.grammar)?)
                .map_err(|e| CliError::from(e).in_file(&input.grammar))?;
            let a = Automaton::compile(&g);
            log::info!("{} states, {} transitions", a.num_states(), a.num_transitions());
            write_output(out.as_deref(), a.to_text().as_bytes())
        }
        GrammarCmd::Count(f) => {
            let n = load_language(&f.language)?.count_language()?;
            write_output(None, format!("{n}\n").as_bytes())
        }
        GrammarCmd::Sample {
            input,
            count,
            seed,
            mode,
            out,
        } => {
            let mode: SampleMode = mode.parse().map_err(CliError::Usage)?;
            let a = load_language(&input.language)?;
            let cmds = a.sample(count, seed, mode)?;
            write_output(out.as_deref(), write_command_lines(&cmds).as_bytes())
        }
        GrammarCmd::Accept { input, commands } => {
            let a = load_language(&input.language)?;
            let text = read_text_or_stdin(commands.as_deref())?;
            let mut out = String::new();
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                let words = normalize_words(line);
                let verdict = if a.accepts(&words) { "accept" } else { "reject" };
                out.push_str(&format!("{verdict}\t{}\n", words.join(" ")));
            }
            write_output(None, out.as_bytes())
        }
    }
}
