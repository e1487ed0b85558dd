//! Vocabulary files: one token per line (line number = id) plus an optional
//! merge sidecar with one `left right` pair per line.

use std::fs;
use std::path::Path;

use bpt_core::Vocabulary;
use crc::{Crc, CRC_64_XZ};

use crate::corpus_io::read_utf8;
use crate::error::{Error, Result};

pub(crate) static CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

pub fn vocab_bytes(vocab: &Vocabulary) -> Vec<u8> {
    let mut out = String::new();
    for t in vocab.tokens() {
        out.push_str(t);
        out.push('\n');
    }
    out.into_bytes()
}

/// CRC-64/XZ of the vocabulary file as written by [`write_vocab`].
pub fn vocab_hash(vocab: &Vocabulary) -> u64 {
    CRC64.checksum(&vocab_bytes(vocab))
}

pub fn write_vocab(vocab: &Vocabulary, path: &Path) -> Result<()> {
    fs::write(path, vocab_bytes(vocab)).map_err(|e| Error::io(path, e))
}

pub fn write_merges(vocab: &Vocabulary, path: &Path) -> Result<()> {
    let mut out = String::new();
    for (l, r) in vocab.merges() {
        out.push_str(l);
        out.push(' ');
        out.push_str(r);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn bad(path: &Path, line: usize, what: &str) -> Error {
    Error::Usage(format!("{}:{}: {what}", path.display(), line + 1))
}

pub fn read_vocab(path: &Path, merges: Option<&Path>) -> Result<Vocabulary> {
    let text = read_utf8(path)?;
    let mut tokens = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let tok = line.strip_suffix('\r').unwrap_or(line);
        if tok.is_empty() {
            return Err(bad(path, i, "empty token"));
        }
        tokens.push(tok.to_string());
    }
    let mut pairs = Vec::new();
    if let Some(mp) = merges {
        for (i, line) in read_utf8(mp)?.lines().enumerate() {
            let (l, r) = line
                .split_once(' ')
                .ok_or_else(|| bad(mp, i, "expected `left right`"))?;
            pairs.push((l.to_string(), r.to_string()));
        }
    }
    Ok(Vocabulary::from_parts(tokens, pairs)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use bpt_core::vocab::{train_bpe, BpeConfig, WordCounts};

    #[test]
    fn round_trip_with_merges() {
        let mut wc = WordCounts::new();
        wc.add_text("the hugging bugs hug the pugs; the pug hugs! Déjà vu");
        wc.add_text("東京 hugging hugging");
        let (v, _) = train_bpe(
            &wc,
            &BpeConfig {
                target_size: 60,
                min_frequency: 1,
                ..Default::default()
            },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let vp = dir.path().join("vocab.txt");
        let mp = dir.path().join("merges.txt");
        write_vocab(&v, &vp).unwrap();
        write_merges(&v, &mp).unwrap();
        let back = read_vocab(&vp, Some(&mp)).unwrap();
        assert_eq!(back.tokens(), v.tokens());
        assert_eq!(back.merges(), v.merges());
        assert_eq!(vocab_hash(&back), CRC64.checksum(&fs::read(&vp).unwrap()));
        assert_eq!(fs::read_to_string(&vp).unwrap().lines().count(), v.len());
    }

    #[test]
    fn rejects_missing_specials() {
        let dir = tempfile::tempdir().unwrap();
        let vp = dir.path().join("vocab.txt");
        fs::write(&vp, "[PAD]\n[UNK]\na\n").unwrap();
        assert!(matches!(read_vocab(&vp, None), Err(Error::Core(_))));
    }
}
