//! Documents, corpora and greedy byte-size sharding.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::ops::Range;

use hashbrown::HashSet;

use crate::error::{Error, Result};

/// Which side of the small/large pair a document came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Origin {
    Small,
    Large,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Small => "small",
            Origin::Large => "large",
        }
    }
}

impl core::str::FromStr for Origin {
    type Err = String;

    fn from_str(s: &str) -> core::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "small" => Ok(Origin::Small),
            "large" => Ok(Origin::Large),
            other => Err(format!("unknown origin {other:?} (expected small or large)")),
        }
    }
}

/// A run of consecutive sentences that belong together.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    doc_id: String,
    origin: Origin,
    sentences: Vec<String>,
    byte_size: u64,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, origin: Origin, sentences: Vec<String>) -> Result<Self> {
        let doc_id = doc_id.into();
        if sentences.is_empty() || sentences.iter().any(|s| s.trim().is_empty()) {
            return Err(Error::EmptyDocument(doc_id));
        }
        let byte_size = sentences.iter().map(|s| s.len() as u64 + 1).sum();
        Ok(Document {
            doc_id,
            origin,
            sentences,
            byte_size,
        })
    }

    pub fn doc_id(&self) -> &str {
        &self.doc_id
    }

    pub fn origin(&self) -> Origin {
        self.origin
    }

    pub fn sentences(&self) -> &[String] {
        &self.sentences
    }

    /// UTF-8 bytes of the sentences plus one newline per sentence.
    pub fn byte_size(&self) -> u64 {
        self.byte_size
    }
}

/// An ordered collection of documents sharing one origin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    label: String,
    origin: Origin,
    documents: Vec<Document>,
    total_bytes: u64,
}

impl Corpus {
    pub fn new(label: impl Into<String>, origin: Origin, documents: Vec<Document>) -> Result<Self> {
        if documents.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        {
            let mut seen = HashSet::with_capacity(documents.len());
            for doc in &documents {
                if doc.origin != origin {
                    return Err(Error::OriginMismatch {
                        doc: doc.doc_id.clone(),
                        expected: origin,
                        found: doc.origin,
                    });
                }
                if !seen.insert(doc.doc_id.as_str()) {
                    return Err(Error::DuplicateDocId(doc.doc_id.clone()));
                }
            }
        }
        let total_bytes = documents.iter().map(Document::byte_size).sum();
        Ok(Corpus {
            label: label.into(),
            origin,
            documents,
            total_bytes,
        })
    }

    /// Parses sentence-per-line text where blank (or whitespace-only) lines
    /// separate documents. Each element of `texts` is treated as a separate
    /// file: a file boundary always closes the current document. Document ids
    /// are `<label>#<ordinal>` counted across all texts.
    pub fn parse<'a, I>(label: &str, origin: Origin, texts: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut documents = Vec::new();
        let mut current: Vec<String> = Vec::new();
        let flush = |current: &mut Vec<String>, documents: &mut Vec<Document>| -> Result<()> {
            if !current.is_empty() {
                let id = format!("{label}#{}", documents.len());
                documents.push(Document::new(id, origin, core::mem::take(current))?);
            }
            Ok(())
        };
        for text in texts {
            for line in text.lines() {
                let line = line.trim();
                if line.is_empty() {
                    flush(&mut current, &mut documents)?;
                } else {
                    current.push(line.to_string());
                }
            }
            flush(&mut current, &mut documents)?;
        }
        Corpus::new(label, origin, documents)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn origin(&self) -> Origin {
        self.origin
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn into_documents(self) -> Vec<Document> {
        self.documents
    }

    pub fn total_bytes(&self) -> u64 {
        self.total_bytes
    }

    /// Renders the corpus back into the sentence-per-line text format.
    pub fn to_text(&self) -> String {
        documents_to_text(&self.documents)
    }
}

/// Sentence-per-line text with a blank line between documents.
pub fn documents_to_text(docs: &[Document]) -> String {
    let mut out = String::new();
    for (i, doc) in docs.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for s in &doc.sentences {
            out.push_str(s);
            out.push('\n');
        }
    }
    out
}

/// A bundle of whole documents of roughly `target_bytes`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shard {
    pub shard_id: usize,
    pub origin: Origin,
    pub documents: Vec<Document>,
    pub byte_size: u64,
    pub target_bytes: u64,
}

/// Document index ranges of the greedy split, without cloning documents.
///
/// Documents are added to the open shard until its size reaches
/// `each_file_size`; the shard is then closed. Only the final range may fall
/// short of the target.
pub fn shard_ranges(docs: &[Document], each_file_size: u64) -> Result<Vec<Range<usize>>> {
    if each_file_size == 0 {
        return Err(Error::ZeroShardSize);
    }
    let mut ranges = Vec::new();
    let mut start = 0;
    let mut acc = 0u64;
    for (i, doc) in docs.iter().enumerate() {
        acc += doc.byte_size;
        if acc >= each_file_size {
            ranges.push(start..i + 1);
            start = i + 1;
            acc = 0;
        }
    }
    if start < docs.len() {
        ranges.push(start..docs.len());
    }
    Ok(ranges)
}

pub fn split_corpus(corpus: &Corpus, each_file_size: u64) -> Result<Vec<Shard>> {
    let ranges = shard_ranges(&corpus.documents, each_file_size)?;
    Ok(ranges
        .into_iter()
        .enumerate()
        .map(|(shard_id, r)| {
            let documents = corpus.documents[r].to_vec();
            let byte_size = documents.iter().map(Document::byte_size).sum();
            Shard {
                shard_id,
                origin: corpus.origin,
                documents,
                byte_size,
                target_bytes: each_file_size,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn doc_of_size(id: usize, bytes: usize) -> Document {
        // one sentence of `bytes - 1` characters plus its newline
        Document::new(format!("t#{id}"), Origin::Small, vec!["x".repeat(bytes - 1)]).unwrap()
    }

    fn corpus_of(sizes: &[usize]) -> Corpus {
        let docs = sizes.iter().enumerate().map(|(i, &b)| doc_of_size(i, b)).collect();
        Corpus::new("t", Origin::Small, docs).unwrap()
    }

    #[test]
    fn parses_documents_and_collapses_blank_lines() {
        let c = Corpus::parse("sP", Origin::Small, ["a b\nc d\n\ne f\n"]).unwrap();
        assert_eq!(c.documents().len(), 2);
        assert_eq!(c.documents()[0].sentences(), ["a b", "c d"]);
        assert_eq!(c.documents()[1].sentences(), ["e f"]);
        assert_eq!(c.documents()[1].doc_id(), "sP#1");

        let c = Corpus::parse("x", Origin::Large, ["\n\na\n \t\n\n\nb\n"]).unwrap();
        assert_eq!(c.documents().len(), 2);
    }

    #[test]
    fn separator_only_input_is_empty_corpus() {
        assert_eq!(
            Corpus::parse("x", Origin::Small, ["\n\n\n"]).unwrap_err(),
            Error::EmptyCorpus
        );
    }

    #[test]
    fn file_boundary_closes_document() {
        let c = Corpus::parse("x", Origin::Small, ["a\nb", "c\n"]).unwrap();
        assert_eq!(c.documents().len(), 2);
        assert_eq!(c.documents()[1].doc_id(), "x#1");
    }

    #[test]
    fn byte_sizes_add_up() {
        let c = corpus_of(&[40, 40, 20]);
        assert_eq!(c.total_bytes(), 100);
        let d = Document::new("d", Origin::Small, vec!["héllo".into(), "a".into()]).unwrap();
        assert_eq!(d.byte_size(), 6 + 1 + 1 + 1);
    }

    #[test]
    fn rejects_duplicate_ids_and_mixed_origins() {
        let a = doc_of_size(0, 3);
        assert!(matches!(
            Corpus::new("t", Origin::Small, vec![a.clone(), a.clone()]),
            Err(Error::DuplicateDocId(_))
        ));
        assert!(matches!(
            Corpus::new("t", Origin::Large, vec![a]),
            Err(Error::OriginMismatch { .. })
        ));
        assert!(Document::new("e", Origin::Small, vec!["  ".into()]).is_err());
    }

    #[test]
    fn greedy_split_examples() {
        // units of MB scaled down to bytes
        let sizes = |shards: &[Shard]| shards.iter().map(|s| s.byte_size).collect::<Vec<_>>();
        // [6, 6, 6, 6, 1] MB against 10 MB, doubled so every document has a character
        let c = corpus_of(&[12, 12, 12, 12, 2]);
        let shards = split_corpus(&c, 20).unwrap();
        assert_eq!(sizes(&shards), [24, 24, 2]);
        assert_eq!(shards.iter().map(|s| s.documents.len()).collect::<Vec<_>>(), [2, 2, 1]);

        let c = corpus_of(&[10, 10, 10]);
        assert_eq!(sizes(&split_corpus(&c, 10).unwrap()), [10, 10, 10]);

        let c = corpus_of(&[1024]);
        let shards = split_corpus(&c, 10 * 1024 * 1024).unwrap();
        assert_eq!(shards.len(), 1);
        assert_eq!(shards[0].shard_id, 0);
    }

    #[test]
    fn oversized_document_sits_alone() {
        let c = corpus_of(&[3, 50, 3]);
        let shards = split_corpus(&c, 10).unwrap();
        assert_eq!(shards.iter().map(|s| s.documents.len()).collect::<Vec<_>>(), [2, 1]);
        assert_eq!(shards[0].byte_size, 53);
    }

    #[test]
    fn zero_shard_size_is_rejected() {
        assert_eq!(split_corpus(&corpus_of(&[5]), 0).unwrap_err(), Error::ZeroShardSize);
    }

    proptest::proptest! {
        #[test]
        fn split_round_trips(sizes in proptest::collection::vec(2usize..40, 1..60), target in 1u64..120) {
            let c = corpus_of(&sizes);
            let shards = split_corpus(&c, target).unwrap();
            let rejoined: Vec<Document> = shards.iter().flat_map(|s| s.documents.clone()).collect();
            proptest::prop_assert_eq!(&rejoined[..], c.documents());
            proptest::prop_assert_eq!(shards.iter().map(|s| s.byte_size).sum::<u64>(), c.total_bytes());
            let short = shards.iter().filter(|s| s.byte_size < target).count();
            proptest::prop_assert!(short <= 1);
            for (i, s) in shards.iter().enumerate() {
                proptest::prop_assert_eq!(s.shard_id, i);
                if i + 1 < shards.len() {
                    proptest::prop_assert!(s.byte_size >= target);
                }
            }
        }
    }
}
