use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

/// Word ↔ dense id mapping. Ids 0, 1, 2 are always `<s>`, `</s>`, `<unk>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    pub const BOS_ID: u32 = 0;
    pub const EOS_ID: u32 = 1;
    pub const UNK_ID: u32 = 2;

    /// A vocabulary holding only the reserved tokens.
    pub fn new() -> Self {
        let mut v = Vocab {
            words: Vec::new(),
            index: HashMap::new(),
        };
        for w in [BOS, EOS, UNK] {
            v.insert(w);
        }
        v
    }

    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Vocab::new();
        for w in words {
            v.insert(w.as_ref());
        }
        v
    }

    /// Frequency-ranked vocabulary over whitespace-tokenized sentences. Ties
    /// are broken alphabetically. `max_size` counts the reserved tokens.
    pub fn from_corpus<I, S>(sentences: I, max_size: Option<usize>) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[String]>,
    {
        let mut freq: HashMap<String, u64> = HashMap::new();
        for s in sentences {
            for w in s.as_ref() {
                *freq.entry(w.clone()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, u64)> = freq.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut v = Vocab::new();
        for (w, _) in ranked {
            if let Some(cap) = max_size {
                if v.len() >= cap {
                    break;
                }
            }
            v.insert(&w);
        }
        v
    }

    /// Adds a word if absent and returns its id.
    pub fn insert(&mut self, w: &str) -> u32 {
        if let Some(&id) = self.index.get(w) {
            return id;
        }
        let id = self.words.len() as u32;
        self.words.push(w.to_string());
        self.index.insert(w.to_string(), id);
        id
    }

    /// Union of two vocabularies; `self`'s ids are preserved.
    pub fn merge(&self, other: &Vocab) -> Vocab {
        let mut v = self.clone();
        for w in &other.words {
            v.insert(w);
        }
        v
    }

    pub fn get(&self, w: &str) -> Option<u32> {
        self.index.get(w).copied()
    }

    /// Id of `w`, or the unknown-word id.
    pub fn id(&self, w: &str) -> u32 {
        self.get(w).unwrap_or(Self::UNK_ID)
    }

    pub fn word(&self, id: u32) -> &str {
        &self.words[id as usize]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> Vec<u32> {
        words.iter().map(|w| self.id(w.as_ref())).collect()
    }

    /// Same words, regardless of id assignment.
    pub fn same_words(&self, other: &Vocab) -> bool {
        self.len() == other.len() && self.words.iter().all(|w| other.index.contains_key(w))
    }
}

impl From<Vec<String>> for Vocab {
    fn from(words: Vec<String>) -> Self {
        Vocab::from_words(words)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.words
    }
}
