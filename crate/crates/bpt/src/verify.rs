//! Verification and comparison of instance files.

use std::fmt::Write as _;
use std::path::Path;

use bpt_core::instances::{pair_diversity, Mode};
use bpt_core::stats::{Accumulator, CheckStatus, Tolerances, VerificationReport};
use bpt_core::{PretrainInstance, Vocabulary};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::format::{manifest_path, pairs_path, read_pairs, InstanceReader, Manifest};

const BATCH: usize = 8192;

fn observe_batch(
    batch: &[PretrainInstance],
    vocab: &Vocabulary,
    max_seq: usize,
    tol: &Tolerances,
    pool: &rayon::ThreadPool,
) -> Accumulator {
    // each batch is reduced in parallel, then merged in file order
    pool.install(|| {
        batch
            .par_chunks(512)
            .map(|chunk| {
                let mut acc = Accumulator::default();
                for inst in chunk {
                    acc.observe(inst, vocab, max_seq, tol);
                }
                acc
            })
            .collect::<Vec<_>>()
    })
    .into_iter()
    .fold(Accumulator::default(), |mut a, b| {
        a.merge(&b);
        a
    })
}

/// Reads the manifest sidecar when present.
pub fn sidecar_manifest(path: &Path) -> Option<Manifest> {
    let m = manifest_path(path);
    m.exists().then(|| Manifest::read(&m).ok()).flatten()
}

/// Fills unset tolerance fields from the run manifest: SimPT runs expect a
/// 0.5 small-origin fraction, and the prediction cap comes from the config.
pub fn tolerances_from_manifest(mut tol: Tolerances, manifest: Option<&Manifest>) -> Tolerances {
    if let Some(m) = manifest {
        if tol.expected_small_origin.is_none() && m.report.mode == Mode::Simpt {
            tol.expected_small_origin = Some(0.5);
        }
        if tol.max_predictions_per_seq.is_none() {
            tol.max_predictions_per_seq = m
                .config
                .get("max_predictions_per_seq")
                .and_then(|v| v.as_u64())
                .map(|v| v as usize);
        }
    }
    tol
}

/// Distinct negative document pairs from the `.pairs.tsv` sidecar, if any.
pub fn sidecar_pair_diversity(path: &Path, instances_is_next: &[bool]) -> Result<Option<u64>> {
    let p = pairs_path(path);
    if !p.exists() {
        return Ok(None);
    }
    let pairs = read_pairs(&p)?;
    if pairs.len() != instances_is_next.len() {
        log::warn!(
            "{}: {} rows for {} instances, ignoring",
            p.display(),
            pairs.len(),
            instances_is_next.len()
        );
        return Ok(None);
    }
    Ok(Some(pair_diversity(
        pairs
            .iter()
            .zip(instances_is_next)
            .filter_map(|(p, &n)| p.as_ref().map(|p| (n, &*p.doc_a, &*p.doc_b))),
    )))
}

/// Computes every report field over the whole file.
pub fn verify_file(
    path: &Path,
    vocab: &Vocabulary,
    tol: &Tolerances,
    pool: &rayon::ThreadPool,
) -> Result<VerificationReport> {
    let reader = InstanceReader::open(path, Some(vocab))?;
    let max_seq = usize::from(reader.header().max_seq_length);
    let mut acc = Accumulator::default();
    let mut is_next = Vec::new();
    let mut batch = Vec::with_capacity(BATCH);
    for inst in reader {
        let inst = inst?;
        is_next.push(inst.is_next);
        batch.push(inst);
        if batch.len() == BATCH {
            acc.merge(&observe_batch(&batch, vocab, max_seq, tol, pool));
            batch.clear();
        }
    }
    acc.merge(&observe_batch(&batch, vocab, max_seq, tol, pool));
    let diversity = sidecar_pair_diversity(path, &is_next)?;
    Ok(VerificationReport::from_accumulator(&acc, tol, diversity))
}

fn status_str(s: CheckStatus) -> &'static str {
    match s {
        CheckStatus::Pass => "pass",
        CheckStatus::Fail => "FAIL",
        CheckStatus::InsufficientData => "insufficient data",
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.5}"))
}

pub fn render_table(report: &VerificationReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "instances: {}", report.instances);
    let _ = writeln!(
        s,
        "{:<28} {:>10} {:>10} {:>9} {:>10} {:>10}  status",
        "check", "observed", "expected", "tol", "n", "min n"
    );
    for c in &report.checks {
        let _ = writeln!(
            s,
            "{:<28} {:>10} {:>10.4} {:>9.4} {:>10} {:>10}  {}",
            c.name,
            opt(c.observed),
            c.expected,
            c.tolerance,
            c.sample_size,
            c.min_sample_size,
            status_str(c.status)
        );
    }
    if let Some(d) = report.distinct_negative_pairs {
        let _ = writeln!(s, "distinct negative pairs: {d}");
    }
    for (i, why) in &report.first_violations {
        let _ = writeln!(s, "violation at instance {i}: {why}");
    }
    let _ = writeln!(s, "result: {}", if report.pass { "PASS" } else { "FAIL" });
    s
}

/// One row of the side-by-side comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub file: String,
    pub instances: u64,
    pub negatives: u64,
    pub distinct_negative_pairs: Option<u64>,
    pub small_origin_fraction: Option<f64>,
    pub nsp_positive_rate: Option<f64>,
}

pub fn compare_row(path: &Path, vocab: Option<&Vocabulary>) -> Result<CompareRow> {
    let mut instances = 0u64;
    let mut negatives = 0u64;
    let (mut small, mut large) = (0u64, 0u64);
    let mut is_next = Vec::new();
    for inst in InstanceReader::open(path, vocab)? {
        let inst = inst?;
        instances += 1;
        negatives += u64::from(!inst.is_next);
        small += u64::from(inst.origin_small_tokens);
        large += u64::from(inst.origin_large_tokens);
        is_next.push(inst.is_next);
    }
    let diversity = if instances == 0 {
        None
    } else {
        sidecar_pair_diversity(path, &is_next)?
    };
    Ok(CompareRow {
        file: path.display().to_string(),
        instances,
        negatives,
        distinct_negative_pairs: diversity,
        small_origin_fraction: (small + large > 0).then(|| small as f64 / (small + large) as f64),
        nsp_positive_rate: (instances > 0).then(|| (instances - negatives) as f64 / instances as f64),
    })
}

pub fn render_compare(rows: &[CompareRow]) -> String {
    let na = "insufficient data";
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<40} {:>10} {:>10} {:>18} {:>18} {:>18}",
        "file", "instances", "negatives", "distinct pairs", "small fraction", "nsp positive"
    );
    for r in rows {
        let f = |v: Option<f64>| v.map_or_else(|| na.to_string(), |x| format!("{x:.4}"));
        let _ = writeln!(
            s,
            "{:<40} {:>10} {:>10} {:>18} {:>18} {:>18}",
            r.file,
            r.instances,
            r.negatives,
            r.distinct_negative_pairs
                .map_or_else(|| na.to_string(), |d| d.to_string()),
            f(r.small_origin_fraction),
            f(r.nsp_positive_rate)
        );
    }
    s
}
