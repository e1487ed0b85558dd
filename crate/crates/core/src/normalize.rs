//! Uncased normalization and BERT-style pre-tokenization.

use alloc::string::String;
use alloc::vec::Vec;

use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

fn is_latin(c: char) -> bool {
    c.is_ascii_alphabetic() || matches!(c as u32, 0x00C0..=0x024F | 0x1E00..=0x1EFF | 0x2C60..=0x2C7F | 0xA720..=0xA7FF)
}

/// Lowercases, applies compatibility decomposition, drops combining marks
/// that sit on Latin letters, removes control characters and collapses runs
/// of whitespace to a single space. Marks on non-Latin bases (kana voicing
/// marks, for instance) are kept and recomposed.
pub fn normalize(text: &str) -> String {
    let mut stripped = String::with_capacity(text.len());
    let mut last_base_latin = false;
    for c in text.nfkd().flat_map(char::to_lowercase).nfkd() {
        if (c.is_control() && !c.is_whitespace()) || c == '\u{FFFD}' {
            continue;
        }
        if is_combining_mark(c) {
            if !last_base_latin {
                stripped.push(c);
            }
            continue;
        }
        last_base_latin = is_latin(c);
        stripped.push(c);
    }

    let mut out = String::with_capacity(stripped.len());
    let mut pending_space = false;
    for c in stripped.nfc() {
        if c.is_whitespace() {
            pending_space = !out.is_empty();
        } else {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.push(c);
        }
    }
    out
}

/// Punctuation as BERT treats it: all non-alphanumeric printable ASCII plus
/// the common Unicode punctuation blocks.
pub fn is_punctuation(c: char) -> bool {
    let cp = c as u32;
    matches!(cp, 33..=47 | 58..=64 | 91..=96 | 123..=126)
        || matches!(
            cp,
            0x00A1..=0x00BF
                | 0x2010..=0x2027
                | 0x2030..=0x205E
                | 0x3001..=0x3003
                | 0x3008..=0x3011
                | 0x3014..=0x301F
                | 0xFF01..=0xFF0F
                | 0xFF1A..=0xFF20
                | 0xFF3B..=0xFF40
                | 0xFF5B..=0xFF65
        )
}

pub fn is_cjk(c: char) -> bool {
    matches!(
        c as u32,
        0x4E00..=0x9FFF
            | 0x3400..=0x4DBF
            | 0x20000..=0x2A6DF
            | 0x2A700..=0x2B73F
            | 0x2B740..=0x2B81F
            | 0x2B820..=0x2CEAF
            | 0xF900..=0xFAFF
            | 0x2F800..=0x2FA1F
    )
}

/// Splits already-normalized text into words: whitespace separates words,
/// and each punctuation or CJK ideograph becomes a word of its own.
pub fn pretokenize(text: &str) -> Vec<&str> {
    let mut words = Vec::new();
    for chunk in text.split_whitespace() {
        let mut start = 0;
        for (i, c) in chunk.char_indices() {
            if is_punctuation(c) || is_cjk(c) {
                if start < i {
                    words.push(&chunk[start..i]);
                }
                let end = i + c.len_utf8();
                words.push(&chunk[i..end]);
                start = end;
            }
        }
        if start < chunk.len() {
            words.push(&chunk[start..]);
        }
    }
    words
}
