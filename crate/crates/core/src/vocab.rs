//! Token vocabularies, stored as one token per line (index = line number).

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

/// Caption vocabulary ids 0..=3 are reserved.
pub const START: usize = 0;
pub const END: usize = 1;
pub const PAD: usize = 2;
pub const UNK: usize = 3;

pub const RESERVED: [&str; 4] = ["<s>", "</s>", "<pad>", "<unk>"];

#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let words: Vec<String> = words.into_iter().map(Into::into).collect();
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self { words, index }
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for w in &self.words {
            writeln!(f, "{w}")?;
        }
        f.flush()
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::from_words(text.lines().map(str::to_string)))
    }

    /// Tokenize a whitespace-separated string; unknown words map to `UNK`.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        text.split_whitespace().map(|w| self.id(w).unwrap_or(UNK)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter().map(|&i| self.word(i)).collect::<Vec<_>>().join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_a_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let v = Vocab::from_words(["<s>", "</s>", "<pad>", "<unk>", "a", "man"]);
        v.save(&path).unwrap();
        let loaded = Vocab::load(&path).unwrap();
        assert_eq!(loaded, v);
        assert_eq!(loaded.id("man"), Some(5));
        assert_eq!(loaded.word(4), "a");
    }

    #[test]
    fn encode_maps_unknown_words_to_unk() {
        let v = Vocab::from_words(["<s>", "</s>", "<pad>", "<unk>", "a", "man"]);
        assert_eq!(v.encode("a man zzz"), vec![4, 5, UNK]);
    }
}
