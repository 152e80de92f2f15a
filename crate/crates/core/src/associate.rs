//! Command to image association through keyword and image-class tables.
//!
//! Keywords found in a command select an image class from the lexicon, and an
//! image of that class is drawn from the class index. Draws are seeded per
//! command id, so an association does not change when other commands are
//! added, removed or reordered.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::command::{normalize_words, Command};
use crate::util::{derive_seed, fnv1a, rng_from_seed};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AssocError {
    #[error("{file} line {line}: {message}")]
    Format {
        file: &'static str,
        line: usize,
        message: String,
    },
    #[error("lexicon classes missing from the class index: {}", .0.join(", "))]
    MissingClasses(Vec<String>),
    #[error("duplicate command id `{0}`")]
    DuplicateId(String),
}

/// Keyword phrase → candidate image classes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeywordLexicon {
    entries: BTreeMap<Vec<String>, Vec<String>>,
    longest: usize,
}

impl KeywordLexicon {
    pub fn insert<S: AsRef<str>>(&mut self, phrase: &str, classes: &[S]) {
        let key = normalize_words(phrase);
        assert!(!key.is_empty() && !classes.is_empty(), "empty lexicon entry");
        self.longest = self.longest.max(key.len());
        let list = self.entries.entry(key).or_default();
        for c in classes {
            if !list.iter().any(|x| x == c.as_ref()) {
                list.push(c.as_ref().to_string());
            }
        }
    }

    pub fn classes(&self, phrase: &[String]) -> Option<&[String]> {
        self.entries.get(phrase).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Parses `keyword<TAB>class1,class2,...` lines; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self, AssocError> {
        let mut lex = KeywordLexicon::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let bad = |m: &str| AssocError::Format {
                file: "lexicon",
                line: i + 1,
                message: m.to_string(),
            };
            let (kw, classes) = line
                .split_once('\t')
                .ok_or_else(|| bad("expected `keyword<TAB>class,...`"))?;
            if normalize_words(kw).is_empty() {
                return Err(bad("empty keyword"));
            }
            let classes: Vec<&str> = classes
                .split(',')
                .map(str::trim)
                .filter(|c| !c.is_empty())
                .collect();
            if classes.is_empty() {
                return Err(bad("keyword has no classes"));
            }
            lex.insert(kw, &classes);
        }
        Ok(lex)
    }

    fn all_classes(&self) -> BTreeSet<&str> {
        self.entries.values().flatten().map(String::as_str).collect()
    }
}

/// Image class → image ids, in file order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClassIndex {
    classes: BTreeMap<String, Vec<String>>,
}

impl ClassIndex {
    pub fn insert(&mut self, class: &str, image_id: &str) {
        let list = self.classes.entry(class.to_string()).or_default();
        if !list.iter().any(|x| x == image_id) {
            list.push(image_id.to_string());
        }
    }

    pub fn images(&self, class: &str) -> Option<&[String]> {
        self.classes.get(class).map(Vec::as_slice)
    }

    pub fn contains_image(&self, image_id: &str) -> bool {
        self.classes.values().flatten().any(|x| x == image_id)
    }

    /// Parses `class<TAB>image_id` lines, one image per line.
    pub fn parse(text: &str) -> Result<Self, AssocError> {
        let mut idx = ClassIndex::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let (class, image) = line.split_once('\t').ok_or_else(|| AssocError::Format {
                file: "class index",
                line: i + 1,
                message: "expected `class<TAB>image_id`".into(),
            })?;
            let (class, image) = (class.trim(), image.trim());
            if class.is_empty() || image.is_empty() {
                return Err(AssocError::Format {
                    file: "class index",
                    line: i + 1,
                    message: "empty class or image id".into(),
                });
            }
            idx.insert(class, image);
        }
        Ok(idx)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordMatch {
    pub phrase: Vec<String>,
    /// Word span `[start, end)` in the command.
    pub start: usize,
    pub end: usize,
}

/// Non-overlapping matches, scanning left to right and taking the longest
/// phrase at each position.
pub fn find_keywords(words: &[String], lex: &KeywordLexicon) -> Vec<KeywordMatch> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < words.len() {
        let longest = lex.longest.min(words.len() - i);
        let hit = (1..=longest)
            .rev()
            .find(|&n| lex.entries.contains_key(&words[i..i + n]));
        match hit {
            Some(n) => {
                out.push(KeywordMatch {
                    phrase: words[i..i + n].to_vec(),
                    start: i,
                    end: i + n,
                });
                i += n;
            }
            None => i += 1,
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum AssocPolicy {
    /// Use the first (leftmost-longest) keyword.
    #[default]
    FirstMatch,
    /// Draw one of the matched keywords uniformly.
    AnyMatch,
}

impl std::str::FromStr for AssocPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "first-match" => Ok(AssocPolicy::FirstMatch),
            "any-match" => Ok(AssocPolicy::AnyMatch),
            _ => Err(format!("unknown association policy `{s}` (first-match, any-match)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssociationRow {
    pub command_id: String,
    pub image_id: Option<String>,
    pub keyword: Option<String>,
    pub class: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AssociationTable {
    pub rows: Vec<AssociationRow>,
}

impl AssociationTable {
    pub fn matched(&self) -> usize {
        self.rows.iter().filter(|r| r.image_id.is_some()).count()
    }

    /// Fraction of commands that received an image.
    pub fn coverage(&self) -> f64 {
        if self.rows.is_empty() {
            0.0
        } else {
            self.matched() as f64 / self.rows.len() as f64
        }
    }

    pub fn get(&self, command_id: &str) -> Option<&AssociationRow> {
        self.rows.iter().find(|r| r.command_id == command_id)
    }

    /// `command_id<TAB>image_id|NONE<TAB>keyword<TAB>class`, `-` for empty fields.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                r.command_id,
                r.image_id.as_deref().unwrap_or("NONE"),
                r.keyword.as_deref().unwrap_or("-"),
                r.class.as_deref().unwrap_or("-"),
            );
        }
        out
    }
}

/// Reads `id<TAB>command` lines. Lines without a tab use their 0-based line
/// index among nonempty lines as the id.
pub fn read_commands_with_ids(text: &str) -> Result<Vec<(String, Command)>, AssocError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        let (id, cmd) = match line.split_once('\t') {
            Some((id, c)) => (id.trim().to_string(), c),
            None => (i.to_string(), line),
        };
        let cmd = Command::parse(cmd).map_err(|e| AssocError::Format {
            file: "commands",
            line: i + 1,
            message: e.to_string(),
        })?;
        if !seen.insert(id.clone()) {
            return Err(AssocError::DuplicateId(id));
        }
        out.push((id, cmd));
    }
    Ok(out)
}

pub fn associate(
    commands: &[(String, Command)],
    lex: &KeywordLexicon,
    index: &ClassIndex,
    seed: u64,
    policy: AssocPolicy,
) -> Result<AssociationTable, AssocError> {
    let missing: Vec<String> = lex
        .all_classes()
        .into_iter()
        .filter(|c| index.images(c).is_none())
        .map(str::to_string)
        .collect();
    if !missing.is_empty() {
        return Err(AssocError::MissingClasses(missing));
    }
    let rows = commands
        .iter()
        .map(|(id, cmd)| {
            let matches = find_keywords(cmd.words(), lex);
            let mut rng = rng_from_seed(derive_seed(seed, &[fnv1a(id.as_bytes())]));
            let chosen = match policy {
                AssocPolicy::FirstMatch => matches.first(),
                AssocPolicy::AnyMatch => matches.choose(&mut rng),
            };
            let Some(m) = chosen else {
                return AssociationRow {
                    command_id: id.clone(),
                    image_id: None,
                    keyword: None,
                    class: None,
                };
            };
            let classes = lex.classes(&m.phrase).expect("matched phrases are in the lexicon");
            let class = classes.choose(&mut rng).expect("class lists are nonempty");
            let image = index
                .images(class)
                .and_then(|imgs| imgs.choose(&mut rng))
                .expect("classes were checked against the index");
            AssociationRow {
                command_id: id.clone(),
                image_id: Some(image.clone()),
                keyword: Some(m.phrase.join(" ")),
                class: Some(class.clone()),
            }
        })
        .collect();
    Ok(AssociationTable { rows })
}
