//! Subcommands of the `bpt` executable.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use bpt_core::instances::Mode;
use bpt_core::mesh::{classify, ArticleRecord, MeshRuleset, SelectionReport, Verdict};
use bpt_core::vocab::{BpeConfig, SPECIAL_TOKENS};
use bpt_core::wordpiece::DEFAULT_MAX_CHARS_PER_WORD;
use bpt_core::{split_corpus, Origin, WordPiece};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use rayon::prelude::*;

use crate::config::{OutputFormat, RunConfig};
use crate::corpus_io::{load_corpus, parse_size, write_shards};
use crate::error::{exit, Error, Result};
use crate::pipeline::{build_vocab, create_instances, thread_pool};
use crate::verify::{
    compare_row, render_compare, render_table, sidecar_manifest, tolerances_from_manifest, verify_file,
};
use crate::vocab_io::{read_vocab, write_merges, write_vocab};

const BUILTIN_RULESETS: [(&str, &str); 2] = [
    ("sP", include_str!("../rulesets/sP.json")),
    ("fP", include_str!("../rulesets/fP.json")),
];

#[derive(Debug, Parser)]
#[command(name = "bpt", version, about = "Balanced pre-training data toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Select articles by MeSH tree-number rules
    Filter(FilterArgs),
    /// Split a corpus into shards of whole documents
    Shard(ShardArgs),
    /// Train a BPE vocabulary, optionally amplifying the small corpus
    BuildVocab(BuildVocabArgs),
    /// WordPiece-tokenize sentence-per-line text
    Tokenize(TokenizeArgs),
    /// Generate MLM/NSP instances
    CreateInstances(CreateArgs),
    /// Check the statistics and structure of an instance file
    Verify(VerifyArgs),
    /// Compare pair diversity and origin balance of instance files
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON run configuration; flags override its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: available parallelism)
    #[arg(long, env = "BPT_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[command(flatten)]
    pub common: Common,
    /// Ruleset file, or the name of a shipped ruleset (sP, fP)
    #[arg(long)]
    pub ruleset: Option<String>,
    /// Article records as JSON Lines
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Filtered corpus (default: standard output)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Selection report (default: standard output, or standard error when
    /// the corpus goes to standard output)
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ShardArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value = "corpus")]
    pub label: String,
    #[arg(long, default_value = "small")]
    pub origin: Origin,
    /// Target shard size, e.g. 10MB
    #[arg(long, value_parser = parse_size)]
    pub each_file_size: Option<u64>,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BuildVocabArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub small: Option<PathBuf>,
    #[arg(long)]
    pub large: Option<PathBuf>,
    /// Repeat the small corpus floor(large/small) times before training
    #[arg(long)]
    pub amplify: bool,
    #[arg(long)]
    pub target_size: Option<usize>,
    #[arg(long)]
    pub min_frequency: Option<u64>,
    /// Vocabulary file
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Merge list (default: <out>.merges)
    #[arg(long)]
    pub merges: Option<PathBuf>,
    /// Training report (default: standard output)
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TokenizeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Input text (default: standard input)
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    /// Output (default: standard output)
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MAX_CHARS_PER_WORD)]
    pub max_chars_per_word: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Simpt,
    Conventional,
}

#[derive(Debug, Args)]
pub struct CreateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub small: Option<PathBuf>,
    #[arg(long)]
    pub large: Option<PathBuf>,
    #[arg(long)]
    pub small_label: Option<String>,
    #[arg(long)]
    pub large_label: Option<String>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// SimPT rounds
    #[arg(long)]
    pub rounds: Option<u32>,
    /// Conventional passes per group
    #[arg(long)]
    pub dupe_factor: Option<u32>,
    /// Conventional groups
    #[arg(long)]
    pub splits: Option<u32>,
    #[arg(long)]
    pub shards_per_corpus: Option<usize>,
    #[arg(long, value_parser = parse_size)]
    pub each_file_size: Option<u64>,
    #[arg(long)]
    pub max_seq_length: Option<usize>,
    #[arg(long)]
    pub masked_lm_prob: Option<f64>,
    #[arg(long)]
    pub max_predictions_per_seq: Option<usize>,
    #[arg(long)]
    pub short_seq_prob: Option<f64>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: Common,
    /// Instance file
    pub file: PathBuf,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Expected small-origin token fraction (default: 0.5 for SimPT files)
    #[arg(long)]
    pub expected_small_origin: Option<f64>,
    #[arg(long)]
    pub masked_lm_prob: Option<f64>,
    #[arg(long)]
    pub max_predictions_per_seq: Option<usize>,
    #[arg(long)]
    pub tol_selection: Option<f64>,
    #[arg(long)]
    pub tol_split: Option<f64>,
    #[arg(long)]
    pub tol_nsp: Option<f64>,
    #[arg(long)]
    pub tol_small_origin: Option<f64>,
    /// Print the report as JSON instead of a table
    #[arg(long)]
    pub json: bool,
    /// Also write the JSON report here
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(required = true, num_args = 1..)]
    pub files: Vec<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, v: Option<T>) {
    if v.is_some() {
        *slot = v;
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load_or_default(common.config.as_deref())?;
    set_opt(&mut cfg.threads, common.threads);
    Ok(cfg)
}

fn require_file(path: &Path) -> Result<()> {
    if path.exists() || path.to_string_lossy().contains(['*', '?', '[']) {
        Ok(())
    } else {
        Err(Error::Usage(format!("{}: no such file or directory", path.display())))
    }
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            let mut o = io::stdout().lock();
            o.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes") + "\n"
}

pub fn load_ruleset(spec: &str) -> Result<MeshRuleset> {
    let path = Path::new(spec);
    let (text, origin) = if path.exists() {
        (
            fs::read_to_string(path).map_err(|e| Error::io(path, e))?,
            path.to_path_buf(),
        )
    } else if let Some((_, t)) = BUILTIN_RULESETS.iter().find(|(n, _)| n.eq_ignore_ascii_case(spec)) {
        (t.to_string(), PathBuf::from(spec))
    } else {
        return Err(Error::Usage(format!("{spec}: no such ruleset file")));
    };
    let rules: MeshRuleset =
        serde_json::from_str(&text).map_err(|e| Error::Usage(format!("invalid ruleset {}: {e}", origin.display())))?;
    rules.validate()?;
    Ok(rules)
}

pub fn read_records(path: &Path) -> Result<Vec<ArticleRecord>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec =
            serde_json::from_str(&line).map_err(|e| Error::Usage(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

fn record_text(rec: &ArticleRecord) -> String {
    let mut s = String::new();
    for line in rec.text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        s.push_str(line);
        s.push('\n');
    }
    s
}

fn cmd_filter(a: FilterArgs) -> Result<i32> {
    let cfg = load_config(&a.common)?;
    let spec = a
        .ruleset
        .or_else(|| cfg.ruleset.as_ref().map(|p| p.display().to_string()))
        .ok_or_else(|| Error::Usage("missing --ruleset".into()))?;
    let rules = load_ruleset(&spec)?;
    require_file(&a.input)?;
    let records = read_records(&a.input)?;
    let pool = thread_pool(cfg.threads)?;
    let verdicts: Vec<Verdict> = pool.install(|| records.par_iter().map(|r| classify(r, &rules)).collect());
    let mut report = SelectionReport::default();
    let mut corpus = String::new();
    for (rec, v) in records.iter().zip(&verdicts) {
        report.record(&rec.article_id, v);
        match v {
            Verdict::Included => {
                let text = record_text(rec);
                if text.is_empty() {
                    warn!("{}: included but has no text", rec.article_id);
                    continue;
                }
                if !corpus.is_empty() {
                    corpus.push('\n');
                }
                corpus.push_str(&text);
            }
            Verdict::Skipped(bad) => warn!("{}: malformed tree number {bad:?}, skipped", rec.article_id),
            _ => {}
        }
    }
    info!(
        "{} of {} records included by {}",
        report.included, report.total, rules.name
    );
    let report_json = json(&report);
    match (&a.out, &a.report) {
        (Some(out), r) => {
            write_out(Some(out), &corpus)?;
            write_out(r.as_deref(), &report_json)?;
        }
        (None, Some(r)) => {
            write_out(None, &corpus)?;
            write_out(Some(r), &report_json)?;
        }
        (None, None) => {
            write_out(None, &corpus)?;
            eprint!("{report_json}");
        }
    }
    Ok(exit::OK)
}

fn cmd_shard(a: ShardArgs) -> Result<i32> {
    let cfg = load_config(&a.common)?;
    require_file(&a.input)?;
    let size = a.each_file_size.unwrap_or(cfg.each_file_size);
    let corpus = load_corpus(&a.input, &a.label, a.origin)?;
    let shards = split_corpus(&corpus, size)?;
    let paths = write_shards(&shards, &a.label, &a.out)?;
    let summary: Vec<serde_json::Value> = shards
        .iter()
        .zip(&paths)
        .map(|(s, p)| {
            serde_json::json!({
                "shard_id": s.shard_id,
                "path": p.display().to_string(),
                "documents": s.documents.len(),
                "byte_size": s.byte_size,
            })
        })
        .collect();
    write_out(
        None,
        &json(&serde_json::json!({
            "label": a.label,
            "origin": a.origin,
            "total_bytes": corpus.total_bytes(),
            "each_file_size": size,
            "shards": summary,
        })),
    )?;
    Ok(exit::OK)
}

fn cmd_build_vocab(a: BuildVocabArgs) -> Result<i32> {
    let mut cfg = load_config(&a.common)?;
    set_opt(&mut cfg.small_corpus, a.small);
    set_opt(&mut cfg.large_corpus, a.large);
    set_opt(&mut cfg.vocab, a.out);
    set_opt(&mut cfg.merges, a.merges);
    set(&mut cfg.target_size, a.target_size);
    set(&mut cfg.min_frequency, a.min_frequency);
    cfg.amplify_vocab |= a.amplify;

    let small_path = cfg
        .small_corpus
        .clone()
        .ok_or_else(|| Error::Usage("missing --small".into()))?;
    let out = cfg.vocab.clone().ok_or_else(|| Error::Usage("missing --out".into()))?;
    require_file(&small_path)?;
    if let Some(l) = &cfg.large_corpus {
        require_file(l)?;
    }
    if cfg.amplify_vocab && cfg.large_corpus.is_none() {
        return Err(Error::Usage("--amplify requires --large".into()));
    }
    let pool = thread_pool(cfg.threads)?;
    let (vocab, report) = pool.install(|| -> Result<_> {
        let (small, large) = rayon::join(
            || load_corpus(&small_path, &cfg.small_label, Origin::Small),
            || {
                cfg.large_corpus
                    .as_deref()
                    .map(|p| load_corpus(p, &cfg.large_label, Origin::Large))
                    .transpose()
            },
        );
        let (small, large) = (small?, large?);
        let bpe = BpeConfig {
            target_size: cfg.target_size,
            min_frequency: cfg.min_frequency,
            special_tokens: SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect(),
        };
        build_vocab(&small, large.as_ref(), cfg.amplify_vocab, &bpe)
    })?;
    write_vocab(&vocab, &out)?;
    let merges = cfg.merges.clone().unwrap_or_else(|| {
        let mut s = out.clone().into_os_string();
        s.push(".merges");
        s.into()
    });
    write_merges(&vocab, &merges)?;
    info!("wrote {} tokens to {}", vocab.len(), out.display());
    write_out(a.report.as_deref(), &json(&report))?;
    Ok(exit::OK)
}

fn cmd_tokenize(a: TokenizeArgs) -> Result<i32> {
    let mut cfg = load_config(&a.common)?;
    set_opt(&mut cfg.vocab, a.vocab);
    let vp = cfg
        .vocab
        .clone()
        .ok_or_else(|| Error::Usage("missing --vocab".into()))?;
    require_file(&vp)?;
    let tokenizer = WordPiece::with_max_chars(read_vocab(&vp, None)?, a.max_chars_per_word);
    let text = match &a.input {
        Some(p) => {
            require_file(p)?;
            crate::corpus_io::read_utf8(p)?
        }
        None => {
            let mut s = String::new();
            io::stdin()
                .read_to_string(&mut s)
                .map_err(|e| Error::io("<stdin>", e))?;
            s
        }
    };
    let pool = thread_pool(cfg.threads)?;
    let lines: Vec<&str> = text.lines().collect();
    let out: Vec<String> = pool.install(|| {
        lines
            .par_iter()
            .map(|l| tokenizer.tokenize(l).tokens.join(" "))
            .collect()
    });
    let mut w: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    let target = a.out.clone().unwrap_or_else(|| "<stdout>".into());
    for l in out {
        writeln!(w, "{l}").map_err(|e| Error::io(&target, e))?;
    }
    w.flush().map_err(|e| Error::io(&target, e))?;
    Ok(exit::OK)
}

/// Applies `create-instances` flags on top of the loaded configuration.
pub fn apply_create_args(cfg: &mut RunConfig, a: &CreateArgs) {
    if let Some(m) = a.mode {
        cfg.mode = match m {
            ModeArg::Simpt => Mode::Simpt,
            ModeArg::Conventional => Mode::Conventional,
        };
    }
    set_opt(&mut cfg.small_corpus, a.small.clone());
    set_opt(&mut cfg.large_corpus, a.large.clone());
    set(&mut cfg.small_label, a.small_label.clone());
    set(&mut cfg.large_label, a.large_label.clone());
    set_opt(&mut cfg.vocab, a.vocab.clone());
    set_opt(&mut cfg.output, a.out.clone());
    set(&mut cfg.format, a.format);
    set(&mut cfg.each_file_size, a.each_file_size);
    let ic = &mut cfg.instances;
    set(&mut ic.master_seed, a.seed);
    set(&mut ic.n_rounds, a.rounds);
    set(&mut ic.dupe_factor, a.dupe_factor);
    set(&mut ic.n_splits, a.splits);
    set(&mut ic.shards_per_corpus, a.shards_per_corpus);
    set(&mut ic.max_seq_length, a.max_seq_length);
    set(&mut ic.masked_lm_prob, a.masked_lm_prob);
    set(&mut ic.max_predictions_per_seq, a.max_predictions_per_seq);
    set(&mut ic.short_seq_prob, a.short_seq_prob);
}

fn cmd_create(a: CreateArgs) -> Result<i32> {
    let mut cfg = load_config(&a.common)?;
    apply_create_args(&mut cfg, &a);
    for p in [&cfg.small_corpus, &cfg.large_corpus, &cfg.vocab].into_iter().flatten() {
        require_file(p)?;
    }
    let pool = thread_pool(cfg.threads)?;
    let manifest = create_instances(&cfg, &pool)?;
    info!("wrote {} instances", manifest.instance_count);
    write_out(None, &json(&manifest.report))?;
    Ok(exit::OK)
}

fn cmd_verify(a: VerifyArgs) -> Result<i32> {
    let mut cfg = load_config(&a.common)?;
    set_opt(&mut cfg.vocab, a.vocab);
    require_file(&a.file)?;
    let vp = cfg
        .vocab
        .clone()
        .ok_or_else(|| Error::Usage("missing --vocab".into()))?;
    require_file(&vp)?;
    let vocab = read_vocab(&vp, None)?;
    let mut tol = cfg.tolerances.clone();
    set_opt(&mut tol.expected_small_origin, a.expected_small_origin);
    set_opt(&mut tol.max_predictions_per_seq, a.max_predictions_per_seq);
    set(&mut tol.masked_lm_prob, a.masked_lm_prob);
    set(&mut tol.mask_selection, a.tol_selection);
    set(&mut tol.mask_split, a.tol_split);
    set(&mut tol.nsp_positive, a.tol_nsp);
    set(&mut tol.small_origin, a.tol_small_origin);
    let tol = tolerances_from_manifest(tol, sidecar_manifest(&a.file).as_ref());
    let pool = thread_pool(cfg.threads)?;
    let report = verify_file(&a.file, &vocab, &tol, &pool)?;
    let report_json = json(&report);
    if let Some(p) = &a.report {
        write_out(Some(p), &report_json)?;
    }
    write_out(None, &if a.json { report_json } else { render_table(&report) })?;
    Ok(if report.pass {
        exit::OK
    } else {
        exit::VERIFICATION_FAILED
    })
}

fn cmd_compare(a: CompareArgs) -> Result<i32> {
    let mut cfg = load_config(&a.common)?;
    set_opt(&mut cfg.vocab, a.vocab);
    for f in &a.files {
        require_file(f)?;
    }
    let vocab = cfg.vocab.as_deref().map(|p| read_vocab(p, None)).transpose()?;
    let rows = a
        .files
        .iter()
        .map(|f| compare_row(f, vocab.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    write_out(None, &if a.json { json(&rows) } else { render_compare(&rows) })?;
    Ok(exit::OK)
}

pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Filter(a) => cmd_filter(a),
        Command::Shard(a) => cmd_shard(a),
        Command::BuildVocab(a) => cmd_build_vocab(a),
        Command::Tokenize(a) => cmd_tokenize(a),
        Command::CreateInstances(a) => cmd_create(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Compare(a) => cmd_compare(a),
    }
}
