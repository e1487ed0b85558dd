//! Subword vocabularies, small-corpus amplification and BPE training.

use alloc::collections::BinaryHeap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;

use hashbrown::HashMap;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::normalize::{normalize, pretokenize};

pub const CONTINUATION_PREFIX: &str = "##";
pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";
pub const SPECIAL_TOKENS: [&str; 5] = [PAD, UNK, CLS, SEP, MASK];

pub const DEFAULT_TARGET_SIZE: usize = 32_000;
pub const DEFAULT_MIN_FREQUENCY: u64 = 2;

/// Ids of the tokens with structural roles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecialIds {
    pub pad: u32,
    pub unk: u32,
    pub cls: u32,
    pub sep: u32,
    pub mask: u32,
}

/// An ordered, duplicate-free subword inventory. Token id = position.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    merges: Vec<(String, String)>,
    special: SpecialIds,
    is_special: Vec<bool>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens && self.merges == other.merges
    }
}

impl Vocabulary {
    /// Builds a vocabulary from an ordered token list. All five BERT special
    /// tokens must be present; merges are optional provenance.
    pub fn from_parts(tokens: Vec<String>, merges: Vec<(String, String)>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::DuplicateToken(t.clone()));
            }
        }
        let id = |t: &'static str| index.get(t).copied().ok_or(Error::MissingToken(t));
        let special = SpecialIds {
            pad: id(PAD)?,
            unk: id(UNK)?,
            cls: id(CLS)?,
            sep: id(SEP)?,
            mask: id(MASK)?,
        };
        let mut is_special = alloc::vec![false; tokens.len()];
        for s in SPECIAL_TOKENS {
            is_special[index[s] as usize] = true;
        }
        Ok(Vocabulary {
            tokens,
            index,
            merges,
            special,
            is_special,
        })
    }

    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::from_parts(tokens.into_iter().map(Into::into).collect(), Vec::new())
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn special(&self) -> SpecialIds {
        self.special
    }

    pub fn is_special(&self, id: u32) -> bool {
        self.is_special.get(id as usize).copied().unwrap_or(false)
    }

    /// Non-special ids, the pool for random replacement during masking.
    pub fn regular_ids(&self) -> Vec<u32> {
        (0..self.tokens.len() as u32).filter(|&i| !self.is_special(i)).collect()
    }
}

/// How many times the small corpus is repeated in the vocabulary stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AmplificationPlan {
    pub small_bytes: u64,
    pub large_bytes: u64,
    pub repeat_factor: u64,
}

impl AmplificationPlan {
    /// `repeat_factor = max(1, floor(large / small))`; the clamp keeps a small
    /// corpus that outgrows the large one in the stream.
    pub fn from_sizes(small_bytes: u64, large_bytes: u64) -> Self {
        let repeat_factor = large_bytes.checked_div(small_bytes).unwrap_or(1).max(1);
        AmplificationPlan {
            small_bytes,
            large_bytes,
            repeat_factor,
        }
    }
}

/// UTF-8 size of the corpus as the trainer sees it: normalized sentences,
/// one newline each.
pub fn normalized_bytes(corpus: &Corpus) -> u64 {
    corpus
        .documents()
        .iter()
        .flat_map(|d| d.sentences())
        .map(|s| normalize(s).len() as u64 + 1)
        .sum()
}

pub fn plan_amplification(small: &Corpus, large: &Corpus) -> AmplificationPlan {
    AmplificationPlan::from_sizes(normalized_bytes(small), normalized_bytes(large))
}

/// Word frequencies of a normalized, pre-tokenized stream.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WordCounts {
    counts: HashMap<String, u64>,
}

impl WordCounts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_text(&mut self, text: &str) {
        let norm = normalize(text);
        for w in pretokenize(&norm) {
            self.add_word(w, 1);
        }
    }

    pub fn add_word(&mut self, word: &str, count: u64) {
        if count == 0 || word.is_empty() {
            return;
        }
        match self.counts.get_mut(word) {
            Some(c) => *c += count,
            None => {
                self.counts.insert(word.to_string(), count);
            }
        }
    }

    pub fn from_corpus(corpus: &Corpus) -> Self {
        let mut wc = Self::new();
        for s in corpus.documents().iter().flat_map(|d| d.sentences()) {
            wc.add_text(s);
        }
        wc
    }

    /// Adds `other` repeated `times` times.
    pub fn merge_scaled(&mut self, other: &WordCounts, times: u64) {
        for (w, &c) in &other.counts {
            self.add_word(w, c * times);
        }
    }

    pub fn merge(&mut self, other: &WordCounts) {
        self.merge_scaled(other, 1);
    }

    pub fn get(&self, word: &str) -> u64 {
        self.counts.get(word).copied().unwrap_or(0)
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Entries sorted by word.
    pub fn sorted(&self) -> Vec<(&str, u64)> {
        let mut v: Vec<(&str, u64)> = self.counts.iter().map(|(w, &c)| (w.as_str(), c)).collect();
        v.sort_unstable();
        v
    }
}

/// Training stream for the vocabulary: `small` repeated by the plan's factor
/// followed by `large` when amplifying, or simply `small + large`.
pub fn vocabulary_stream(small: &WordCounts, large: &WordCounts, plan: Option<&AmplificationPlan>) -> WordCounts {
    let mut out = WordCounts::new();
    out.merge_scaled(small, plan.map_or(1, |p| p.repeat_factor));
    out.merge(large);
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeConfig {
    pub target_size: usize,
    pub min_frequency: u64,
    pub special_tokens: Vec<String>,
}

impl Default for BpeConfig {
    fn default() -> Self {
        BpeConfig {
            target_size: DEFAULT_TARGET_SIZE,
            min_frequency: DEFAULT_MIN_FREQUENCY,
            special_tokens: SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainingReport {
    pub distinct_words: usize,
    pub alphabet_size: usize,
    pub merges_performed: usize,
    pub target_size: usize,
    pub vocab_size: usize,
    pub reached_target: bool,
    #[cfg_attr(feature = "serde", serde(skip_serializing_if = "Option::is_none"))]
    pub warning: Option<String>,
}

/// Symbol text of a merge result: the right side loses its continuation
/// prefix, the left side keeps whatever it had.
pub fn merged_token(left: &str, right: &str) -> String {
    let mut s = String::with_capacity(left.len() + right.len());
    s.push_str(left);
    s.push_str(right.strip_prefix(CONTINUATION_PREFIX).unwrap_or(right));
    s
}

/// Characters of `word` as initial/continuation symbols.
pub fn initial_symbols(word: &str) -> Vec<String> {
    word.chars()
        .enumerate()
        .map(|(i, c)| {
            let mut s = String::new();
            if i > 0 {
                s.push_str(CONTINUATION_PREFIX);
            }
            s.push(c);
            s
        })
        .collect()
}

type Pair = (u32, u32);

#[derive(Debug, PartialEq, Eq)]
struct Candidate {
    count: u64,
    merged: String,
    left: String,
    right: String,
    pair: Pair,
}

// Max-heap order: highest count, then lexicographically smallest merge
// result, then smallest (left, right).
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.count
            .cmp(&other.count)
            .then_with(|| other.merged.cmp(&self.merged))
            .then_with(|| other.left.cmp(&self.left))
            .then_with(|| other.right.cmp(&self.right))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Symbols {
    names: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Symbols {
    fn intern(&mut self, s: &str) -> u32 {
        if let Some(&id) = self.ids.get(s) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(s.to_string());
        self.ids.insert(s.to_string(), id);
        id
    }
}

fn for_each_pair(word: &[u32], mut f: impl FnMut(Pair)) {
    for w in word.windows(2) {
        f((w[0], w[1]));
    }
}

fn merge_word(word: &mut Vec<u32>, pair: Pair, new_id: u32) {
    let mut out = Vec::with_capacity(word.len());
    let mut i = 0;
    while i < word.len() {
        if i + 1 < word.len() && word[i] == pair.0 && word[i + 1] == pair.1 {
            out.push(new_id);
            i += 2;
        } else {
            out.push(word[i]);
            i += 1;
        }
    }
    *word = out;
}

/// Frequency-greedy BPE over a continuation-prefixed character alphabet.
///
/// The vocabulary lists the special tokens, then the sorted alphabet (every
/// observed character in both initial and `##` form), then each newly
/// created merge result in merge order. Training stops at `target_size`
/// tokens or when the best pair occurs fewer than `min_frequency` times.
pub fn train_bpe(counts: &WordCounts, config: &BpeConfig) -> Result<(Vocabulary, TrainingReport)> {
    if counts.is_empty() {
        return Err(Error::EmptyStream);
    }
    let sorted = counts.sorted();

    let mut alphabet: Vec<String> = Vec::new();
    {
        let mut chars: Vec<char> = sorted.iter().flat_map(|(w, _)| w.chars()).collect();
        chars.sort_unstable();
        chars.dedup();
        for c in chars {
            let mut cont = String::from(CONTINUATION_PREFIX);
            cont.push(c);
            alphabet.push(c.to_string());
            alphabet.push(cont);
        }
        alphabet.retain(|t| !config.special_tokens.contains(t));
        alphabet.sort_unstable();
    }
    let base = config.special_tokens.len() + alphabet.len();
    if config.target_size <= base {
        return Err(Error::TargetTooSmall {
            target: config.target_size,
            alphabet: alphabet.len(),
            specials: config.special_tokens.len(),
        });
    }

    let mut tokens: Vec<String> = config.special_tokens.clone();
    tokens.extend(alphabet.iter().cloned());
    let mut in_vocab: hashbrown::HashSet<String> = tokens.iter().cloned().collect();

    let mut symbols = Symbols {
        names: Vec::new(),
        ids: HashMap::new(),
    };
    let mut words: Vec<Vec<u32>> = Vec::with_capacity(sorted.len());
    let mut freqs: Vec<u64> = Vec::with_capacity(sorted.len());
    for (w, c) in &sorted {
        words.push(initial_symbols(w).iter().map(|s| symbols.intern(s)).collect());
        freqs.push(*c);
    }

    let mut pair_counts: HashMap<Pair, u64> = HashMap::new();
    let mut occurs_in: HashMap<Pair, Vec<u32>> = HashMap::new();
    for (wi, word) in words.iter().enumerate() {
        for_each_pair(word, |p| {
            *pair_counts.entry(p).or_insert(0) += freqs[wi];
            let list = occurs_in.entry(p).or_default();
            if list.last() != Some(&(wi as u32)) {
                list.push(wi as u32);
            }
        });
    }

    let candidate = |symbols: &Symbols, pair: Pair, count: u64| {
        let left = symbols.names[pair.0 as usize].clone();
        let right = symbols.names[pair.1 as usize].clone();
        Candidate {
            count,
            merged: merged_token(&left, &right),
            left,
            right,
            pair,
        }
    };
    let mut heap: BinaryHeap<Candidate> = pair_counts.iter().map(|(&p, &c)| candidate(&symbols, p, c)).collect();

    let mut merges: Vec<(String, String)> = Vec::new();
    let mut seen_in_round: Vec<u32> = alloc::vec![u32::MAX; words.len()];
    let mut round = 0u32;

    while tokens.len() < config.target_size {
        let Some(top) = heap.pop() else { break };
        let current = pair_counts.get(&top.pair).copied().unwrap_or(0);
        if current != top.count {
            if current > 0 {
                heap.push(candidate(&symbols, top.pair, current));
            }
            continue;
        }
        if top.count < config.min_frequency.max(1) {
            break;
        }

        let new_id = symbols.intern(&top.merged);
        merges.push((top.left.clone(), top.right.clone()));
        if in_vocab.insert(top.merged.clone()) {
            tokens.push(top.merged.clone());
        }

        let affected = occurs_in.remove(&top.pair).unwrap_or_default();
        let mut touched: Vec<Pair> = Vec::new();
        for wi in affected {
            let wi = wi as usize;
            if seen_in_round[wi] == round {
                continue;
            }
            seen_in_round[wi] = round;
            let word = &mut words[wi];
            if !word.windows(2).any(|w| (w[0], w[1]) == top.pair) {
                continue;
            }
            let f = freqs[wi];
            for_each_pair(word, |p| {
                if let Some(c) = pair_counts.get_mut(&p) {
                    *c -= f;
                }
            });
            merge_word(word, top.pair, new_id);
            for_each_pair(word, |p| {
                *pair_counts.entry(p).or_insert(0) += f;
                let list = occurs_in.entry(p).or_default();
                if list.last() != Some(&(wi as u32)) {
                    list.push(wi as u32);
                }
                touched.push(p);
            });
        }
        pair_counts.retain(|_, c| *c > 0);
        touched.sort_unstable();
        touched.dedup();
        for p in touched {
            if let Some(&c) = pair_counts.get(&p) {
                heap.push(candidate(&symbols, p, c));
            }
        }
        round += 1;
    }

    let reached_target = tokens.len() >= config.target_size;
    let warning = (!reached_target).then(|| {
        alloc::format!(
            "vocabulary stopped at {} of {} tokens: no pair occurs at least {} times",
            tokens.len(),
            config.target_size,
            config.min_frequency
        )
    });
    let report = TrainingReport {
        distinct_words: sorted.len(),
        alphabet_size: alphabet.len(),
        merges_performed: merges.len(),
        target_size: config.target_size,
        vocab_size: tokens.len(),
        reached_target,
        warning,
    };
    let vocab = Vocabulary::from_parts(tokens, merges)?;
    Ok((vocab, report))
}
