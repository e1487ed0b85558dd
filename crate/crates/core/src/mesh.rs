//! Article selection by MeSH tree-number include/exclude rules.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// `true` for one uppercase ASCII letter optionally followed by digits and
/// further dot-separated digit groups (`C`, `C04`, `C04.557.337`).
pub fn is_valid_tree_number(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_uppercase() => {}
        _ => return false,
    }
    let rest = chars.as_str();
    if rest.is_empty() {
        return true;
    }
    rest.split('.')
        .all(|group| !group.is_empty() && group.bytes().all(|b| b.is_ascii_digit()))
}

/// Hierarchical prefix test: `tree_number` equals `prefix` or lies beneath it.
///
/// A bare category letter matches every tree number in that category; any
/// longer prefix must match whole dot-separated components, so `C2` does not
/// match `C22.1`.
pub fn tree_matches(tree_number: &str, prefix: &str) -> bool {
    if prefix.len() == 1 {
        return tree_number.as_bytes().first() == prefix.as_bytes().first();
    }
    match tree_number.strip_prefix(prefix) {
        Some(rest) => rest.is_empty() || rest.starts_with('.'),
        None => false,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ArticleRecord {
    pub article_id: String,
    #[cfg_attr(feature = "serde", serde(default))]
    pub tree_numbers: Vec<String>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub year: Option<i32>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MeshRuleset {
    pub name: String,
    pub included_prefixes: Vec<String>,
    pub excluded_prefixes: Vec<String>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub min_year: Option<i32>,
    /// Free-form remarks carried with shipped rulesets; ignored by matching.
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub notes: Option<String>,
}

impl MeshRuleset {
    pub fn validate(&self) -> Result<()> {
        for p in self.included_prefixes.iter().chain(&self.excluded_prefixes) {
            if !is_valid_tree_number(p) {
                return Err(Error::InvalidRuleset(alloc::format!(
                    "prefix {p:?} is not a tree-number fragment"
                )));
            }
        }
        if let Some(p) = self
            .included_prefixes
            .iter()
            .find(|p| self.excluded_prefixes.contains(p))
        {
            return Err(Error::InvalidRuleset(alloc::format!(
                "prefix {p} is both included and excluded"
            )));
        }
        Ok(())
    }
}

/// Outcome of classifying one record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Included,
    ExcludedByRule,
    ExcludedByYear,
    NoMatch,
    /// The record carried a malformed tree number.
    Skipped(String),
}

/// Checks run in order: malformed input, include match, exclude match, year.
pub fn classify(record: &ArticleRecord, ruleset: &MeshRuleset) -> Verdict {
    if let Some(bad) = record.tree_numbers.iter().find(|t| !is_valid_tree_number(t)) {
        return Verdict::Skipped(bad.clone());
    }
    let any_match = |prefixes: &[String]| {
        record
            .tree_numbers
            .iter()
            .any(|t| prefixes.iter().any(|p| tree_matches(t, p)))
    };
    if !any_match(&ruleset.included_prefixes) {
        return Verdict::NoMatch;
    }
    if any_match(&ruleset.excluded_prefixes) {
        return Verdict::ExcludedByRule;
    }
    match (ruleset.min_year, record.year) {
        (Some(min), Some(y)) if y < min => Verdict::ExcludedByYear,
        (Some(_), None) => Verdict::ExcludedByYear,
        _ => Verdict::Included,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SelectionReport {
    pub total: u64,
    pub included: u64,
    pub excluded_by_rule: u64,
    pub excluded_by_year: u64,
    pub no_match: u64,
    /// Records with no tree numbers at all; also counted in `no_match`.
    pub unannotated: u64,
    pub skipped: u64,
    /// `(article_id, offending tree number)` for every skipped record.
    pub skipped_records: Vec<(String, String)>,
}

impl SelectionReport {
    pub fn record(&mut self, article_id: &str, verdict: &Verdict) {
        self.total += 1;
        match verdict {
            Verdict::Included => self.included += 1,
            Verdict::ExcludedByRule => self.excluded_by_rule += 1,
            Verdict::ExcludedByYear => self.excluded_by_year += 1,
            Verdict::NoMatch => self.no_match += 1,
            Verdict::Skipped(bad) => {
                self.skipped += 1;
                self.skipped_records.push((article_id.into(), bad.clone()));
            }
        }
    }
}

/// Filters `records` in order, keeping those classified as included.
pub fn select_articles<I>(records: I, ruleset: &MeshRuleset) -> Result<(Vec<ArticleRecord>, SelectionReport)>
where
    I: IntoIterator<Item = ArticleRecord>,
{
    ruleset.validate()?;
    let mut report = SelectionReport::default();
    let mut kept = Vec::new();
    for record in records {
        let verdict = classify(&record, ruleset);
        report.record(&record.article_id, &verdict);
        if record.tree_numbers.is_empty() {
            report.unannotated += 1;
        }
        if verdict == Verdict::Included {
            kept.push(record);
        }
    }
    Ok((kept, report))
}
