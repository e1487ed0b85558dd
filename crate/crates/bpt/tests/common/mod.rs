#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use bpt_core::rng::{Domain, KeyedRng, StreamKey};
use bpt_core::vocab::{BpeConfig, WordCounts, SPECIAL_TOKENS};
use bpt_core::{Corpus, Origin, Vocabulary};

pub fn rng(seed: u64) -> KeyedRng {
    StreamKey::new(seed, 991, 0).rng(Domain::Pairing, 0)
}

/// `n` distinct lowercase words over `letters`.
pub fn word_list(seed: u64, n: usize, letters: &str, len: (usize, usize)) -> Vec<String> {
    let letters: Vec<char> = letters.chars().collect();
    let mut r = rng(seed);
    let mut out = std::collections::BTreeSet::new();
    while out.len() < n {
        let l = r.range_inclusive(len.0, len.1);
        let w: String = (0..l).map(|_| letters[r.index(letters.len())]).collect();
        out.insert(w);
    }
    let mut v: Vec<String> = out.into_iter().collect();
    // shuffle so that the skewed sampler does not favour short prefixes
    for i in (1..v.len()).rev() {
        let j = r.index(i + 1);
        v.swap(i, j);
    }
    v
}

/// Sentence-per-line text of roughly `target_bytes`, documents of 3 to 8
/// sentences, words drawn with a skew towards the head of `words`.
pub fn synth_text(seed: u64, words: &[String], target_bytes: usize) -> String {
    let mut r = rng(seed ^ 0x5eed);
    let mut out = String::new();
    while out.len() < target_bytes {
        let n_sent = r.range_inclusive(3, 8);
        for _ in 0..n_sent {
            let n_words = r.range_inclusive(5, 15);
            for k in 0..n_words {
                let u = r.unit_f64();
                let w = &words[((u * u) * words.len() as f64) as usize];
                if k > 0 {
                    out.push(' ');
                }
                out.push_str(w);
            }
            out.push_str(" .\n");
        }
        out.push('\n');
    }
    out
}

pub fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

pub fn corpus(label: &str, origin: Origin, text: &str) -> Corpus {
    Corpus::parse(label, origin, [text]).unwrap()
}

pub fn specials() -> Vec<String> {
    SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect()
}

pub fn bpe(target_size: usize, min_frequency: u64) -> BpeConfig {
    BpeConfig {
        target_size,
        min_frequency,
        special_tokens: specials(),
    }
}

/// Vocabulary trained on the union of `texts`.
pub fn train_on(texts: &[&str], target: usize) -> Vocabulary {
    let mut wc = WordCounts::new();
    for t in texts {
        for line in t.lines() {
            wc.add_text(line);
        }
    }
    bpt_core::vocab::train_bpe(&wc, &bpe(target, 2)).unwrap().0
}

/// Independent reference trainer: recounts every adjacent pair from scratch
/// before each merge.
pub struct OracleResult {
    pub tokens: Vec<String>,
    pub merges: Vec<(String, String)>,
}

pub fn oracle_bpe(counts: &[(String, u64)], target: usize, min_frequency: u64) -> OracleResult {
    let mut alphabet = std::collections::BTreeSet::new();
    let mut words: Vec<(Vec<String>, u64)> = Vec::new();
    for (w, c) in counts {
        let mut syms = Vec::new();
        for (i, ch) in w.chars().enumerate() {
            alphabet.insert(ch.to_string());
            alphabet.insert(format!("##{ch}"));
            syms.push(if i == 0 { ch.to_string() } else { format!("##{ch}") });
        }
        words.push((syms, *c));
    }
    let mut tokens = specials();
    tokens.extend(alphabet.into_iter().filter(|t| !SPECIAL_TOKENS.contains(&t.as_str())));
    let mut merges = Vec::new();
    while tokens.len() < target {
        let mut pairs: BTreeMap<(String, String), u64> = BTreeMap::new();
        for (syms, c) in &words {
            for w in syms.windows(2) {
                *pairs.entry((w[0].clone(), w[1].clone())).or_default() += c;
            }
        }
        let joined = |l: &str, r: &str| format!("{l}{}", r.strip_prefix("##").unwrap_or(r));
        let best = pairs.iter().max_by(|(a, ca), (b, cb)| {
            ca.cmp(cb)
                .then_with(|| joined(&b.0, &b.1).cmp(&joined(&a.0, &a.1)))
                .then_with(|| b.cmp(a))
        });
        let Some(((l, r), c)) = best else { break };
        if *c < min_frequency.max(1) {
            break;
        }
        let (l, r) = (l.clone(), r.clone());
        let m = joined(&l, &r);
        for (syms, _) in &mut words {
            let mut out = Vec::new();
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == l && syms[i + 1] == r {
                    out.push(m.clone());
                    i += 2;
                } else {
                    out.push(syms[i].clone());
                    i += 1;
                }
            }
            *syms = out;
        }
        if !tokens.contains(&m) {
            tokens.push(m);
        }
        merges.push((l, r));
    }
    OracleResult { tokens, merges }
}

/// Tokens of an instance with masked positions restored to their labels.
pub fn unmasked(inst: &bpt_core::PretrainInstance) -> Vec<u32> {
    let mut t = inst.token_ids.clone();
    for (&p, &l) in inst.masked_positions.iter().zip(&inst.masked_labels) {
        t[p as usize] = l;
    }
    t
}

/// Corpora for the amplified-vocabulary check: ten marker words built from
/// letters that never occur elsewhere, present only in the small corpus, and
/// a large corpus thirty times its size.
pub struct AmpvCase {
    pub small: String,
    pub large: String,
    pub markers: Vec<String>,
}

pub fn ampv_case() -> AmpvCase {
    let markers = word_list(501, 10, "qvxzwy", (7, 7));
    let general = word_list(502, 400, "abcdefghijklmnop", (3, 9));
    let mut small = String::new();
    let mut r = rng(503);
    for round in 0..3 {
        for (i, m) in markers.iter().enumerate() {
            for _ in 0..3 {
                small.push_str(&general[r.index(60)]);
                small.push(' ');
            }
            small.push_str(m);
            small.push_str(" .\n");
            if (i + round) % 4 == 3 {
                small.push('\n');
            }
        }
    }
    small.push('\n');
    small.push_str(&synth_text(504, &general, 2_000));
    let large = synth_text(505, &general, small.len() * 30 + 200);
    AmpvCase { small, large, markers }
}

/// A small generated stream for format tests.
pub fn sample_stream(seed: u64) -> (Vocabulary, Vec<bpt_core::PretrainInstance>) {
    use bpt_core::instances::{Generator, TokenizedDocument};
    let words = word_list(seed, 300, "abcdefghijklmnopqrstuvwxyz", (2, 8));
    let text = synth_text(seed, &words, 20_000);
    let vocab = train_on(&[&text], 500);
    let tok = bpt_core::WordPiece::new(vocab.clone());
    let c = corpus("f", Origin::Small, &text);
    let docs: Vec<TokenizedDocument> = c
        .documents()
        .iter()
        .map(|d| TokenizedDocument::from_document(d, &tok))
        .collect();
    let cfg = bpt_core::InstanceConfig {
        dupe_factor: 2,
        n_splits: 2,
        master_seed: seed,
        ..Default::default()
    };
    let (instances, _) = Generator::new(&cfg, &vocab)
        .unwrap()
        .generate_conventional(&docs)
        .unwrap();
    (vocab, instances)
}
