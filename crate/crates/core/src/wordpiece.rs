//! Greedy longest-match-first WordPiece tokenization.

use alloc::string::String;
use alloc::vec::Vec;

use crate::normalize::{normalize, pretokenize};
use crate::vocab::{Vocabulary, CONTINUATION_PREFIX, UNK};

pub const DEFAULT_MAX_CHARS_PER_WORD: usize = 100;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
    pub ids: Vec<u32>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct WordPiece {
    vocab: Vocabulary,
    max_chars_per_word: usize,
}

impl WordPiece {
    pub fn new(vocab: Vocabulary) -> Self {
        Self::with_max_chars(vocab, DEFAULT_MAX_CHARS_PER_WORD)
    }

    pub fn with_max_chars(vocab: Vocabulary, max_chars_per_word: usize) -> Self {
        WordPiece {
            vocab,
            max_chars_per_word,
        }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    /// Pieces of one pre-tokenized word, or `None` when the word is too long
    /// or some position has no vocabulary match.
    pub fn tokenize_word(&self, word: &str) -> Option<Vec<u32>> {
        let n_chars = word.chars().count();
        if n_chars == 0 || n_chars > self.max_chars_per_word {
            return None;
        }
        let bounds: Vec<usize> = word
            .char_indices()
            .map(|(i, _)| i)
            .chain(core::iter::once(word.len()))
            .collect();
        let mut out = Vec::new();
        let mut buf = String::with_capacity(word.len() + CONTINUATION_PREFIX.len());
        let mut start = 0;
        while start < n_chars {
            let mut found = None;
            for end in (start + 1..=n_chars).rev() {
                buf.clear();
                if start > 0 {
                    buf.push_str(CONTINUATION_PREFIX);
                }
                buf.push_str(&word[bounds[start]..bounds[end]]);
                if let Some(id) = self.vocab.id(&buf) {
                    found = Some((id, end));
                    break;
                }
            }
            let (id, end) = found?;
            out.push(id);
            start = end;
        }
        Some(out)
    }

    /// Ids for `text` after normalization and pre-tokenization. Words that
    /// cannot be covered become a single `[UNK]`.
    pub fn encode_ids(&self, text: &str) -> Vec<u32> {
        let norm = normalize(text);
        let unk = self.vocab.special().unk;
        let mut ids = Vec::new();
        for word in pretokenize(&norm) {
            match self.tokenize_word(word) {
                Some(pieces) => ids.extend(pieces),
                None => ids.push(unk),
            }
        }
        ids
    }

    pub fn tokenize(&self, text: &str) -> TokenSequence {
        let ids = self.encode_ids(text);
        let tokens = ids
            .iter()
            .map(|&id| String::from(self.vocab.token(id).unwrap_or(UNK)))
            .collect();
        TokenSequence { tokens, ids }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CoverageRow {
    pub term: String,
    pub in_vocab: bool,
    pub pieces: Vec<String>,
}

/// Whether each term survives as a single token, and its pieces otherwise.
pub fn coverage_report<S: AsRef<str>>(tokenizer: &WordPiece, terms: &[S]) -> Vec<CoverageRow> {
    terms
        .iter()
        .map(|term| {
            let term = term.as_ref();
            let norm = normalize(term);
            let pieces = tokenizer.tokenize(term).tokens;
            CoverageRow {
                term: term.into(),
                in_vocab: tokenizer.vocab().contains(&norm),
                pieces,
            }
        })
        .collect()
}
