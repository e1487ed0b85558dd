//! Instance files.
//!
//! Layout (little-endian):
//!
//! ```text
//! header   "BPTI" | u16 version | u16 max_seq_length | u64 vocab_hash | u64 instance_count
//! record*  u16 n_tokens | n_tokens × u32 id | n_tokens × u8 segment
//!          | u16 n_masked | n_masked × (u16 position, u32 label)
//!          | u8 is_next | u32 origin_small_tokens | u32 origin_large_tokens
//! trailer  "BPTE" | u64 CRC-64/XZ of all record bytes
//! ```
//!
//! Source document ids are not part of the record; they go to a `.pairs.tsv`
//! sidecar so pair diversity can be measured after the fact.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use bpt_core::instances::Provenance;
use bpt_core::{PretrainInstance, Vocabulary};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab_io::{vocab_hash, CRC64};

pub const MAGIC: [u8; 4] = *b"BPTI";
pub const TRAILER_MAGIC: [u8; 4] = *b"BPTE";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: u64 = 24;
pub const TRAILER_LEN: u64 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub version: u16,
    pub max_seq_length: u16,
    pub vocab_hash: u64,
    pub instance_count: u64,
}

impl Header {
    fn to_bytes(self) -> [u8; HEADER_LEN as usize] {
        let mut b = [0u8; HEADER_LEN as usize];
        b[0..4].copy_from_slice(&MAGIC);
        b[4..6].copy_from_slice(&self.version.to_le_bytes());
        b[6..8].copy_from_slice(&self.max_seq_length.to_le_bytes());
        b[8..16].copy_from_slice(&self.vocab_hash.to_le_bytes());
        b[16..24].copy_from_slice(&self.instance_count.to_le_bytes());
        b
    }

    fn parse(b: &[u8; HEADER_LEN as usize]) -> Result<Self> {
        if b[0..4] != MAGIC {
            return Err(Error::BadMagic);
        }
        let version = u16::from_le_bytes([b[4], b[5]]);
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        Ok(Header {
            version,
            max_seq_length: u16::from_le_bytes([b[6], b[7]]),
            vocab_hash: u64::from_le_bytes(b[8..16].try_into().unwrap()),
            instance_count: u64::from_le_bytes(b[16..24].try_into().unwrap()),
        })
    }
}

/// Appends one record's bytes to `out`.
pub fn encode_record(inst: &PretrainInstance, out: &mut Vec<u8>) {
    out.extend_from_slice(&(inst.token_ids.len() as u16).to_le_bytes());
    for id in &inst.token_ids {
        out.extend_from_slice(&id.to_le_bytes());
    }
    out.extend_from_slice(&inst.segment_ids);
    out.extend_from_slice(&(inst.masked_positions.len() as u16).to_le_bytes());
    for (p, l) in inst.masked_positions.iter().zip(&inst.masked_labels) {
        out.extend_from_slice(&(*p as u16).to_le_bytes());
        out.extend_from_slice(&l.to_le_bytes());
    }
    out.push(u8::from(inst.is_next));
    out.extend_from_slice(&inst.origin_small_tokens.to_le_bytes());
    out.extend_from_slice(&inst.origin_large_tokens.to_le_bytes());
}

fn eof_as_unexpected(e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::UnexpectedEnd
    } else {
        Error::io("<instance stream>", e)
    }
}

fn read_u8(r: &mut impl Read) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b).map_err(eof_as_unexpected)?;
    Ok(b[0])
}

fn read_u16(r: &mut impl Read) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b).map_err(eof_as_unexpected)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(eof_as_unexpected)?;
    Ok(u32::from_le_bytes(b))
}

pub fn decode_record(r: &mut impl Read) -> Result<PretrainInstance> {
    let n = read_u16(r)? as usize;
    let token_ids = (0..n).map(|_| read_u32(r)).collect::<Result<Vec<_>>>()?;
    let mut segment_ids = vec![0u8; n];
    r.read_exact(&mut segment_ids).map_err(eof_as_unexpected)?;
    let m = read_u16(r)? as usize;
    let mut masked_positions = Vec::with_capacity(m);
    let mut masked_labels = Vec::with_capacity(m);
    for _ in 0..m {
        masked_positions.push(u32::from(read_u16(r)?));
        masked_labels.push(read_u32(r)?);
    }
    let is_next = match read_u8(r)? {
        0 => false,
        1 => true,
        _ => {
            return Err(Error::InvalidInstance {
                index: 0,
                reason: "is_next byte is neither 0 nor 1".into(),
            })
        }
    };
    Ok(PretrainInstance {
        token_ids,
        segment_ids,
        masked_positions,
        masked_labels,
        is_next,
        origin_small_tokens: read_u32(r)?,
        origin_large_tokens: read_u32(r)?,
        provenance: None,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WriteSummary {
    pub instance_count: u64,
    pub checksum: u64,
    pub vocab_hash: u64,
    pub bytes: u64,
}

/// Streaming writer. The instance count in the header is patched on
/// [`InstanceWriter::finish`].
pub struct InstanceWriter<'v> {
    path: PathBuf,
    out: BufWriter<File>,
    digest: crc::Digest<'static, u64>,
    vocab: &'v Vocabulary,
    vocab_hash: u64,
    max_seq_length: usize,
    count: u64,
    bytes: u64,
    buf: Vec<u8>,
}

impl<'v> InstanceWriter<'v> {
    pub fn create(path: &Path, vocab: &'v Vocabulary, max_seq_length: usize) -> Result<Self> {
        if max_seq_length > usize::from(u16::MAX) {
            return Err(Error::Usage(format!(
                "max_seq_length {max_seq_length} exceeds the format limit"
            )));
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let vocab_hash = vocab_hash(vocab);
        let header = Header {
            version: VERSION,
            max_seq_length: max_seq_length as u16,
            vocab_hash,
            instance_count: 0,
        };
        out.write_all(&header.to_bytes()).map_err(|e| Error::io(path, e))?;
        Ok(InstanceWriter {
            path: path.to_path_buf(),
            out,
            digest: CRC64.digest(),
            vocab,
            vocab_hash,
            max_seq_length,
            count: 0,
            bytes: HEADER_LEN,
            buf: Vec::new(),
        })
    }

    pub fn write(&mut self, inst: &PretrainInstance) -> Result<()> {
        if let Err(reason) = inst.check(self.vocab, self.max_seq_length) {
            return Err(Error::InvalidInstance {
                index: self.count,
                reason: reason.into(),
            });
        }
        self.buf.clear();
        encode_record(inst, &mut self.buf);
        self.digest.update(&self.buf);
        self.out.write_all(&self.buf).map_err(|e| Error::io(&self.path, e))?;
        self.count += 1;
        self.bytes += self.buf.len() as u64;
        Ok(())
    }

    pub fn finish(self) -> Result<WriteSummary> {
        let InstanceWriter {
            path,
            mut out,
            digest,
            vocab_hash,
            max_seq_length,
            count,
            bytes,
            ..
        } = self;
        let checksum = digest.finalize();
        let io_err = |e| Error::io(&path, e);
        out.write_all(&TRAILER_MAGIC).map_err(io_err)?;
        out.write_all(&checksum.to_le_bytes()).map_err(io_err)?;
        let header = Header {
            version: VERSION,
            max_seq_length: max_seq_length as u16,
            vocab_hash,
            instance_count: count,
        };
        out.seek(SeekFrom::Start(0)).map_err(io_err)?;
        out.write_all(&header.to_bytes()).map_err(io_err)?;
        out.flush().map_err(io_err)?;
        out.get_ref().sync_all().map_err(io_err)?;
        Ok(WriteSummary {
            instance_count: count,
            checksum,
            vocab_hash,
            bytes: bytes + TRAILER_LEN,
        })
    }
}

/// Lazy reader. Opening validates the header, the vocabulary hash and the
/// body checksum before any record is returned.
pub struct InstanceReader {
    header: Header,
    checksum: u64,
    body: io::Take<BufReader<File>>,
    read: u64,
    failed: bool,
}

impl InstanceReader {
    pub fn open(path: &Path, expected_vocab: Option<&Vocabulary>) -> Result<Self> {
        let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
        let len = file.metadata().map_err(|e| Error::io(path, e))?.len();
        let mut hb = [0u8; HEADER_LEN as usize];
        let got = read_fully(&mut file, &mut hb).map_err(|e| Error::io(path, e))?;
        if got < 4 || hb[0..4] != MAGIC {
            return Err(if got < 4 { Error::UnexpectedEnd } else { Error::BadMagic });
        }
        if got < hb.len() {
            return Err(Error::UnexpectedEnd);
        }
        let header = Header::parse(&hb)?;
        if let Some(v) = expected_vocab {
            let h = vocab_hash(v);
            if h != header.vocab_hash {
                return Err(Error::VocabHashMismatch {
                    file: header.vocab_hash,
                    vocab: h,
                });
            }
        }
        if len < HEADER_LEN + TRAILER_LEN {
            return Err(Error::UnexpectedEnd);
        }
        let body_len = len - HEADER_LEN - TRAILER_LEN;
        let mut trailer = [0u8; TRAILER_LEN as usize];
        file.seek(SeekFrom::Start(HEADER_LEN + body_len))
            .map_err(|e| Error::io(path, e))?;
        file.read_exact(&mut trailer).map_err(|e| Error::io(path, e))?;
        if trailer[0..4] != TRAILER_MAGIC {
            return Err(Error::UnexpectedEnd);
        }
        let stored = u64::from_le_bytes(trailer[4..12].try_into().unwrap());

        file.seek(SeekFrom::Start(HEADER_LEN)).map_err(|e| Error::io(path, e))?;
        let mut digest = CRC64.digest();
        let mut r = BufReader::with_capacity(1 << 16, (&mut file).take(body_len));
        loop {
            let chunk = r.fill_buf().map_err(|e| Error::io(path, e))?;
            if chunk.is_empty() {
                break;
            }
            digest.update(chunk);
            let n = chunk.len();
            r.consume(n);
        }
        let computed = digest.finalize();
        if computed != stored {
            return Err(Error::ChecksumMismatch { stored, computed });
        }

        file.seek(SeekFrom::Start(HEADER_LEN)).map_err(|e| Error::io(path, e))?;
        Ok(InstanceReader {
            header,
            checksum: stored,
            body: BufReader::with_capacity(1 << 16, file).take(body_len),
            read: 0,
            failed: false,
        })
    }

    pub fn header(&self) -> Header {
        self.header
    }

    pub fn checksum(&self) -> u64 {
        self.checksum
    }

    fn next_record(&mut self) -> Result<Option<PretrainInstance>> {
        if self.read == self.header.instance_count {
            if self.body.limit() > 0 {
                return Err(Error::TrailingBytes);
            }
            return Ok(None);
        }
        let index = self.read;
        let inst = decode_record(&mut self.body).map_err(|e| match e {
            Error::InvalidInstance { reason, .. } => Error::InvalidInstance { index, reason },
            other => other,
        })?;
        self.read += 1;
        Ok(Some(inst))
    }
}

impl Iterator for InstanceReader {
    type Item = Result<PretrainInstance>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        match self.next_record() {
            Ok(x) => x.map(Ok),
            Err(e) => {
                self.failed = true;
                Some(Err(e))
            }
        }
    }
}

fn read_fully(r: &mut impl Read, buf: &mut [u8]) -> io::Result<usize> {
    let mut got = 0;
    while got < buf.len() {
        match r.read(&mut buf[got..])? {
            0 => break,
            n => got += n,
        }
    }
    Ok(got)
}

/// Reads a whole instance file into memory.
pub fn read_instances(path: &Path, expected_vocab: Option<&Vocabulary>) -> Result<Vec<PretrainInstance>> {
    InstanceReader::open(path, expected_vocab)?.collect()
}

/// Writes `instances` to `path` and returns the summary.
pub fn write_instances<'a, I>(
    path: &Path,
    vocab: &Vocabulary,
    max_seq_length: usize,
    instances: I,
) -> Result<WriteSummary>
where
    I: IntoIterator<Item = &'a PretrainInstance>,
{
    let mut w = InstanceWriter::create(path, vocab, max_seq_length)?;
    for inst in instances {
        w.write(inst)?;
    }
    w.finish()
}

#[derive(Serialize)]
struct JsonInstance<'a> {
    tokens: Vec<&'a str>,
    segment_ids: &'a [u8],
    masked_positions: &'a [u32],
    masked_labels: Vec<&'a str>,
    is_next: bool,
    origin_small_tokens: u32,
    origin_large_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    doc_a: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    doc_b: Option<&'a str>,
}

/// One JSON object per line with token strings, for inspection and diffing.
pub fn jsonl_line(inst: &PretrainInstance, vocab: &Vocabulary) -> String {
    let tok = |id: &u32| vocab.token(*id).unwrap_or("[UNK]");
    let j = JsonInstance {
        tokens: inst.token_ids.iter().map(tok).collect(),
        segment_ids: &inst.segment_ids,
        masked_positions: &inst.masked_positions,
        masked_labels: inst.masked_labels.iter().map(tok).collect(),
        is_next: inst.is_next,
        origin_small_tokens: inst.origin_small_tokens,
        origin_large_tokens: inst.origin_large_tokens,
        doc_a: inst.provenance.as_ref().map(|p| &*p.doc_a),
        doc_b: inst.provenance.as_ref().map(|p| &*p.doc_b),
    };
    serde_json::to_string(&j).expect("instance serializes")
}

pub fn pairs_path(out: &Path) -> PathBuf {
    sidecar(out, "pairs.tsv")
}

pub fn manifest_path(out: &Path) -> PathBuf {
    sidecar(out, "manifest.json")
}

fn sidecar(out: &Path, ext: &str) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// `doc_a<TAB>doc_b` per instance, in record order.
pub fn write_pairs_line(out: &mut impl Write, inst: &PretrainInstance) -> io::Result<()> {
    match &inst.provenance {
        Some(p) => writeln!(out, "{}\t{}", p.doc_a, p.doc_b),
        None => writeln!(out, "\t"),
    }
}

pub fn read_pairs(path: &Path) -> Result<Vec<Option<Provenance>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            let (a, b) = line
                .split_once('\t')
                .ok_or_else(|| Error::Usage(format!("{}:{}: expected two columns", path.display(), i + 1)))?;
            Ok((!a.is_empty()).then(|| Provenance {
                doc_a: Arc::from(a),
                doc_b: Arc::from(b),
            }))
        })
        .collect()
}

/// Run record written next to every instance file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub format_version: u16,
    pub instance_count: u64,
    pub checksum: String,
    pub vocab_hash: String,
    pub max_seq_length: usize,
    pub master_seed: u64,
    pub config: serde_json::Value,
    pub report: bpt_core::instances::GenerationReport,
}

impl Manifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}

pub fn hex64(x: u64) -> String {
    format!("{x:016x}")
}
