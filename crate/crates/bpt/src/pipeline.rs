//! Parallel execution of the pipeline stages.
//!
//! Work is split into independent units (documents, SimPT rounds,
//! conventional group passes), run on a rayon pool, and consumed in unit
//! order, so output never depends on the number of threads.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use bpt_core::instances::{
    draw_collisions, split_groups, GenerationReport, GenerationStats, Generator, Mode, TokenizedDocument,
    TokenizedShard, UnitOutput,
};
use bpt_core::vocab::{train_bpe, vocabulary_stream, AmplificationPlan, BpeConfig, TrainingReport, WordCounts};
use bpt_core::{split_corpus, Corpus, Document, PretrainInstance, Vocabulary, WordPiece};
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{OutputFormat, RunConfig};
use crate::corpus_io::load_corpus;
use crate::error::{Error, Result};
use crate::format::{hex64, jsonl_line, manifest_path, pairs_path, write_pairs_line, InstanceWriter, Manifest};
use crate::vocab_io::{read_vocab, vocab_hash};

const WORD_COUNT_CHUNK: usize = 256;

/// Thread count from the flag, then `BPT_THREADS`, then available parallelism.
pub fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let n = threads.unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Error::Usage(format!("cannot start thread pool: {e}")))
}

pub fn count_words(docs: &[Document]) -> WordCounts {
    docs.par_chunks(WORD_COUNT_CHUNK)
        .map(|chunk| {
            let mut wc = WordCounts::new();
            for s in chunk.iter().flat_map(|d| d.sentences()) {
                wc.add_text(s);
            }
            wc
        })
        .reduce(WordCounts::new, |mut a, b| {
            a.merge(&b);
            a
        })
}

fn par_normalized_bytes(corpus: &Corpus) -> u64 {
    corpus
        .documents()
        .par_iter()
        .map(|d| {
            d.sentences()
                .iter()
                .map(|s| bpt_core::normalize::normalize(s).len() as u64 + 1)
                .sum::<u64>()
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VocabReport {
    #[serde(flatten)]
    pub training: TrainingReport,
    pub small_bytes: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub large_bytes: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub repeat_factor: Option<u64>,
}

/// Counts words of both corpora, optionally amplifies the small one, and
/// trains the vocabulary.
pub fn build_vocab(
    small: &Corpus,
    large: Option<&Corpus>,
    amplify: bool,
    bpe: &BpeConfig,
) -> Result<(Vocabulary, VocabReport)> {
    let (small_wc, large_wc) = rayon::join(
        || count_words(small.documents()),
        || large.map(|l| count_words(l.documents())).unwrap_or_default(),
    );
    let (small_bytes, large_bytes) = rayon::join(|| par_normalized_bytes(small), || large.map(par_normalized_bytes));
    debug_assert!(large.is_some() || !amplify);
    let plan = match (amplify, large_bytes) {
        (true, Some(lb)) => Some(AmplificationPlan::from_sizes(small_bytes, lb)),
        (true, None) => return Err(Error::Usage("--amplify requires a large corpus".into())),
        _ => None,
    };
    if let Some(p) = &plan {
        info!(
            "amplifying small corpus {}x ({} vs {} normalized bytes)",
            p.repeat_factor, p.small_bytes, p.large_bytes
        );
    }
    let stream = vocabulary_stream(&small_wc, &large_wc, plan.as_ref());
    let (vocab, training) = train_bpe(&stream, bpe)?;
    if let Some(w) = &training.warning {
        warn!("{w}");
    }
    Ok((
        vocab,
        VocabReport {
            training,
            small_bytes,
            large_bytes,
            repeat_factor: plan.map(|p| p.repeat_factor),
        },
    ))
}

pub fn tokenize_documents(docs: &[Document], tokenizer: &WordPiece) -> Vec<TokenizedDocument> {
    docs.par_iter()
        .map(|d| TokenizedDocument::from_document(d, tokenizer))
        .filter(|d| !d.is_empty())
        .collect()
}

/// Generation inputs for one run.
pub enum Plan<'a> {
    Simpt {
        small: &'a [TokenizedShard],
        large: &'a [TokenizedShard],
    },
    Conventional {
        docs: &'a [TokenizedDocument],
        groups: Vec<Range<usize>>,
    },
}

impl<'a> Plan<'a> {
    pub fn simpt(small: &'a [TokenizedShard], large: &'a [TokenizedShard]) -> Result<Self> {
        if small.is_empty() {
            return Err(bpt_core::Error::NoShards("small").into());
        }
        if large.is_empty() {
            return Err(bpt_core::Error::NoShards("large").into());
        }
        Ok(Plan::Simpt { small, large })
    }

    pub fn conventional(docs: &'a [TokenizedDocument], n_splits: u32) -> Result<Self> {
        if docs.is_empty() {
            return Err(bpt_core::Error::NoDocuments.into());
        }
        let sizes: Vec<u64> = docs.iter().map(|d| d.byte_size).collect();
        let groups = split_groups(&sizes, n_splits as usize);
        Ok(Plan::Conventional { docs, groups })
    }

    fn mode(&self) -> Mode {
        match self {
            Plan::Simpt { .. } => Mode::Simpt,
            Plan::Conventional { .. } => Mode::Conventional,
        }
    }

    fn n_units(&self, gen: &Generator) -> u64 {
        let c = gen.config();
        match self {
            Plan::Simpt { .. } => u64::from(c.n_rounds),
            Plan::Conventional { groups, .. } => groups.len() as u64 * u64::from(c.dupe_factor),
        }
    }

    fn run_unit(&self, gen: &Generator, unit: u64) -> Result<UnitOutput> {
        match self {
            Plan::Simpt { small, large } => Ok(gen.simpt_round(small, large, unit)?),
            Plan::Conventional { docs, groups } => {
                let dupe = u64::from(gen.config().dupe_factor);
                Ok(gen.conventional_unit(docs, groups, (unit / dupe) as usize, (unit % dupe) as u32))
            }
        }
    }
}

/// Runs every unit of `plan` on `pool` and feeds instances to `sink` in
/// unit order.
pub fn generate<F>(gen: &Generator, plan: &Plan, pool: &rayon::ThreadPool, mut sink: F) -> Result<GenerationReport>
where
    F: FnMut(&PretrainInstance) -> Result<()>,
{
    let n_units = plan.n_units(gen);
    let batch = pool.current_num_threads().max(1) as u64;
    let mut stats = GenerationStats::default();
    let mut draws = Vec::new();
    let mut pairs: HashSet<(Arc<str>, Arc<str>)> = HashSet::new();
    let mut start = 0;
    while start < n_units {
        let end = (start + batch).min(n_units);
        let outputs: Vec<Result<UnitOutput>> =
            pool.install(|| (start..end).into_par_iter().map(|u| plan.run_unit(gen, u)).collect());
        for out in outputs {
            let out = out?;
            stats.add(&out.stats);
            if let Some(d) = out.draw {
                draws.push(d);
            }
            for inst in &out.instances {
                if let (false, Some(p)) = (inst.is_next, &inst.provenance) {
                    let key = if p.doc_a <= p.doc_b {
                        (p.doc_a.clone(), p.doc_b.clone())
                    } else {
                        (p.doc_b.clone(), p.doc_a.clone())
                    };
                    pairs.insert(key);
                }
                sink(inst)?;
            }
        }
        start = end;
    }
    Ok(GenerationReport::new(
        plan.mode(),
        n_units,
        &stats,
        pairs.len() as u64,
        draw_collisions(&draws),
    ))
}

/// In-memory variant of [`generate`].
pub fn generate_all(
    gen: &Generator,
    plan: &Plan,
    pool: &rayon::ThreadPool,
) -> Result<(Vec<PretrainInstance>, GenerationReport)> {
    let mut out = Vec::new();
    let report = generate(gen, plan, pool, |i| {
        out.push(i.clone());
        Ok(())
    })?;
    Ok((out, report))
}

fn require<'a>(p: &'a Option<std::path::PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::Usage(format!("missing {what}")))
}

/// Loads inputs named in `cfg`, generates instances and writes the output
/// file plus its `.manifest.json` and `.pairs.tsv` sidecars.
pub fn create_instances(cfg: &RunConfig, pool: &rayon::ThreadPool) -> Result<Manifest> {
    cfg.instances.validate()?;
    if cfg.each_file_size == 0 {
        return Err(bpt_core::Error::ZeroShardSize.into());
    }
    let out_path = require(&cfg.output, "output path (--out)")?;
    let vocab_path = require(&cfg.vocab, "vocabulary (--vocab)")?;
    let small_path = require(&cfg.small_corpus, "small corpus (--small)")?;
    if cfg.mode == Mode::Simpt && cfg.large_corpus.is_none() {
        return Err(Error::Usage("simpt requires two corpora".into()));
    }
    let vocab = read_vocab(vocab_path, cfg.merges.as_deref())?;
    let (small, large) = pool.install(|| {
        rayon::join(
            || load_corpus(small_path, &cfg.small_label, bpt_core::Origin::Small),
            || {
                cfg.large_corpus
                    .as_deref()
                    .map(|p| load_corpus(p, &cfg.large_label, bpt_core::Origin::Large))
                    .transpose()
            },
        )
    });
    let (small, large) = (small?, large?);
    let tokenizer = WordPiece::new(vocab.clone());
    let gen = Generator::new(&cfg.instances, &vocab)?;

    let tokenized_small;
    let tokenized_large;
    let tokenized_docs;
    let plan = match cfg.mode {
        Mode::Simpt => {
            let large = large.expect("checked above");
            let (s, l) = (
                split_corpus(&small, cfg.each_file_size)?,
                split_corpus(&large, cfg.each_file_size)?,
            );
            info!("{} small and {} large shards", s.len(), l.len());
            let tok = |shards: &[bpt_core::Shard]| -> Vec<TokenizedShard> {
                pool.install(|| {
                    shards
                        .par_iter()
                        .map(|sh| TokenizedShard::from_shard(sh, &tokenizer))
                        .collect()
                })
            };
            tokenized_small = tok(&s);
            tokenized_large = tok(&l);
            Plan::simpt(&tokenized_small, &tokenized_large)?
        }
        Mode::Conventional => {
            let mut docs = small.into_documents();
            if let Some(l) = large {
                docs.extend(l.into_documents());
            }
            tokenized_docs = pool.install(|| tokenize_documents(&docs, &tokenizer));
            Plan::conventional(&tokenized_docs, cfg.instances.n_splits)?
        }
    };

    let pairs_file = pairs_path(out_path);
    let mut pairs_out = BufWriter::new(File::create(&pairs_file).map_err(|e| Error::io(&pairs_file, e))?);
    let max_seq = cfg.instances.max_seq_length;
    let (report, count, checksum) = match cfg.format {
        OutputFormat::Binary => {
            let mut w = InstanceWriter::create(out_path, &vocab, max_seq)?;
            let report = generate(&gen, &plan, pool, |inst| {
                w.write(inst)?;
                write_pairs_line(&mut pairs_out, inst).map_err(|e| Error::io(&pairs_file, e))
            })?;
            let summary = w.finish()?;
            (report, summary.instance_count, Some(summary.checksum))
        }
        OutputFormat::Jsonl => {
            let mut w = BufWriter::new(File::create(out_path).map_err(|e| Error::io(out_path, e))?);
            let mut digest = crate::vocab_io::CRC64.digest();
            let mut count = 0u64;
            let report = generate(&gen, &plan, pool, |inst| {
                if let Err(reason) = inst.check(&vocab, max_seq) {
                    return Err(Error::InvalidInstance {
                        index: count,
                        reason: reason.into(),
                    });
                }
                let mut line = jsonl_line(inst, &vocab);
                line.push('\n');
                digest.update(line.as_bytes());
                count += 1;
                w.write_all(line.as_bytes()).map_err(|e| Error::io(out_path, e))?;
                write_pairs_line(&mut pairs_out, inst).map_err(|e| Error::io(&pairs_file, e))
            })?;
            w.flush().map_err(|e| Error::io(out_path, e))?;
            (report, count, Some(digest.finalize()))
        }
    };
    pairs_out.flush().map_err(|e| Error::io(&pairs_file, e))?;
    if report.missing_negatives {
        warn!(
            "{} negative pairs could not be formed (single-document pools); positive rate is biased",
            report.skipped_negatives
        );
    }
    let manifest = Manifest {
        format: match cfg.format {
            OutputFormat::Binary => "bpti".into(),
            OutputFormat::Jsonl => "jsonl".into(),
        },
        format_version: crate::format::VERSION,
        instance_count: count,
        checksum: checksum.map(hex64).unwrap_or_default(),
        vocab_hash: hex64(vocab_hash(&vocab)),
        max_seq_length: max_seq,
        master_seed: cfg.instances.master_seed,
        config: cfg.to_json(),
        report,
    };
    manifest.write(&manifest_path(out_path))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use bpt_core::vocab::normalized_bytes;

    #[test]
    fn parallel_word_counts_match_sequential() {
        let text: String = (0..2000)
            .map(|i| format!("w{} common Word{}\n\n", i % 37, i % 5))
            .collect();
        let c = Corpus::parse("t", bpt_core::Origin::Small, [text.as_str()]).unwrap();
        let pool = thread_pool(Some(4)).unwrap();
        let par = pool.install(|| count_words(c.documents()));
        assert_eq!(par, WordCounts::from_corpus(&c));
        assert_eq!(pool.install(|| par_normalized_bytes(&c)), normalized_bytes(&c));
    }
}
