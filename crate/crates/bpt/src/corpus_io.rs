//! Reading corpora from disk and writing shards back out.

use std::fs;
use std::path::{Path, PathBuf};

use bpt_core::corpus::documents_to_text;
use bpt_core::{Corpus, Origin, Shard};

use crate::error::{Error, Result};

/// Files named by `path`: the file itself, every regular file of a directory,
/// or every match of a glob pattern. Directory and glob results are sorted
/// lexicographically.
pub fn input_files(path: &Path) -> Result<Vec<PathBuf>> {
    let s = path.to_string_lossy();
    if s.contains(['*', '?', '[']) && !path.exists() {
        let paths = glob::glob(&s).map_err(|e| Error::Usage(format!("bad glob {s:?}: {e}")))?;
        let mut files: Vec<PathBuf> = paths.filter_map(|p| p.ok()).filter(|p| p.is_file()).collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::Usage(format!("no files match {s:?}")));
        }
        return Ok(files);
    }
    let meta = fs::metadata(path).map_err(|e| Error::io(path, e))?;
    if meta.is_dir() {
        let mut files = Vec::new();
        for entry in fs::read_dir(path).map_err(|e| Error::io(path, e))? {
            let entry = entry.map_err(|e| Error::io(path, e))?;
            if entry.file_type().map_err(|e| Error::io(entry.path(), e))?.is_file() {
                files.push(entry.path());
            }
        }
        files.sort();
        Ok(files)
    } else {
        Ok(vec![path.to_path_buf()])
    }
}

pub fn read_utf8(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidUtf8 {
        path: path.to_path_buf(),
        offset: e.utf8_error().valid_up_to() as u64,
    })
}

/// Loads a sentence-per-line corpus from a file, directory or glob.
pub fn load_corpus(path: &Path, label: &str, origin: Origin) -> Result<Corpus> {
    let texts = input_files(path)?
        .iter()
        .map(|p| read_utf8(p))
        .collect::<Result<Vec<_>>>()?;
    Corpus::parse(label, origin, texts.iter().map(String::as_str)).map_err(|e| match e {
        bpt_core::Error::EmptyCorpus => Error::Usage(format!("{}: empty corpus", path.display())),
        other => other.into(),
    })
}

pub fn shard_file_name(label: &str, shard_id: usize) -> String {
    format!("{label}_shard_{shard_id:05}.txt")
}

/// Writes one text file per shard into `dir`, creating it if needed.
pub fn write_shards(shards: &[Shard], label: &str, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    shards
        .iter()
        .map(|shard| {
            let path = dir.join(shard_file_name(label, shard.shard_id));
            fs::write(&path, documents_to_text(&shard.documents)).map_err(|e| Error::io(&path, e))?;
            Ok(path)
        })
        .collect()
}

/// Parses sizes such as `10MB`, `512k`, `3GiB` or plain byte counts.
/// Decimal suffixes are powers of 1000, `i` suffixes powers of 1024.
pub fn parse_size(s: &str) -> std::result::Result<u64, String> {
    let t = s.trim();
    let split = t.find(|c: char| !c.is_ascii_digit() && c != '.').unwrap_or(t.len());
    let (num, unit) = t.split_at(split);
    let value: f64 = num.parse().map_err(|_| format!("invalid size {s:?}"))?;
    let mult: u64 = match unit.trim().to_ascii_lowercase().as_str() {
        "" | "b" => 1,
        "k" | "kb" => 1_000,
        "m" | "mb" => 1_000_000,
        "g" | "gb" => 1_000_000_000,
        "ki" | "kib" => 1 << 10,
        "mi" | "mib" => 1 << 20,
        "gi" | "gib" => 1 << 30,
        other => return Err(format!("unknown size unit {other:?}")),
    };
    let bytes = value * mult as f64;
    if bytes.is_nan() || bytes < 1.0 {
        return Err(format!("size must be positive: {s:?}"));
    }
    Ok(bytes.round() as u64)
}
