//! Statistical and structural verification of instance streams.
//!
//! Accumulators are plain commutative counts so they can be reduced in any
//! order. Each statistical check declares a minimum sample size: the number
//! of Bernoulli trials at which its tolerance spans four standard deviations
//! of the estimate. Below that size the check reports insufficient data
//! instead of failing.

use alloc::string::String;
use alloc::vec::Vec;

use crate::instances::PretrainInstance;
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct Tolerances {
    pub masked_lm_prob: f64,
    pub mask_selection: f64,
    pub mask_split: f64,
    pub nsp_positive: f64,
    pub small_origin: f64,
    /// Expected small-origin token fraction; the check is skipped when unset.
    pub expected_small_origin: Option<f64>,
    /// Prediction cap used at generation time, when known. Instances where
    /// the cap binds are left out of the selection-rate check.
    pub max_predictions_per_seq: Option<usize>,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            masked_lm_prob: 0.15,
            mask_selection: 0.003,
            mask_split: 0.005,
            nsp_positive: 0.02,
            small_origin: 0.05,
            expected_small_origin: None,
            max_predictions_per_seq: None,
        }
    }
}

/// Trials needed so that `tolerance` covers four standard deviations of a
/// proportion estimate around `p`.
pub fn min_sample_size(p: f64, tolerance: f64) -> u64 {
    let sd_ratio = 16.0 * (p * (1.0 - p)) / (tolerance * tolerance);
    // ceil without libm
    let n = sd_ratio as u64;
    if (n as f64) < sd_ratio {
        n + 1
    } else {
        n
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Accumulator {
    pub instances: u64,
    pub positives: u64,
    pub candidates: u64,
    pub selected: u64,
    /// Candidates and selections over instances where the cap did not bind.
    pub uncapped_candidates: u64,
    pub uncapped_selected: u64,
    pub masked_as_mask: u64,
    pub masked_as_random: u64,
    pub masked_unchanged: u64,
    pub small_tokens: u64,
    pub large_tokens: u64,
    pub structural_violations: u64,
    pub first_violations: Vec<(u64, String)>,
}

const KEPT_VIOLATIONS: usize = 10;

impl Accumulator {
    pub fn observe(
        &mut self,
        instance: &PretrainInstance,
        vocab: &Vocabulary,
        max_seq_length: usize,
        tol: &Tolerances,
    ) {
        let index = self.instances;
        self.instances += 1;
        if let Err(why) = instance.check(vocab, max_seq_length) {
            self.structural_violations += 1;
            if self.first_violations.len() < KEPT_VIOLATIONS {
                self.first_violations.push((index, String::from(why)));
            }
            return;
        }
        if instance.is_next {
            self.positives += 1;
        }
        let cand = instance.token_ids.len().saturating_sub(3) as u64;
        let sel = instance.masked_positions.len() as u64;
        self.candidates += cand;
        self.selected += sel;
        let uncapped = tol.max_predictions_per_seq.is_none_or(|cap| {
            let rounded = (tol.masked_lm_prob * cand as f64 + 0.5) as usize;
            rounded.max(1) <= cap
        });
        if uncapped {
            self.uncapped_candidates += cand;
            self.uncapped_selected += sel;
        }
        let mask_id = vocab.special().mask;
        for (&p, &label) in instance.masked_positions.iter().zip(&instance.masked_labels) {
            let token = instance.token_ids[p as usize];
            if token == mask_id {
                self.masked_as_mask += 1;
            } else if token == label {
                self.masked_unchanged += 1;
            } else {
                self.masked_as_random += 1;
            }
        }
        self.small_tokens += u64::from(instance.origin_small_tokens);
        self.large_tokens += u64::from(instance.origin_large_tokens);
    }

    pub fn merge(&mut self, o: &Accumulator) {
        self.instances += o.instances;
        self.positives += o.positives;
        self.candidates += o.candidates;
        self.selected += o.selected;
        self.uncapped_candidates += o.uncapped_candidates;
        self.uncapped_selected += o.uncapped_selected;
        self.masked_as_mask += o.masked_as_mask;
        self.masked_as_random += o.masked_as_random;
        self.masked_unchanged += o.masked_unchanged;
        self.small_tokens += o.small_tokens;
        self.large_tokens += o.large_tokens;
        self.structural_violations += o.structural_violations;
        for v in &o.first_violations {
            if self.first_violations.len() < KEPT_VIOLATIONS {
                self.first_violations.push(v.clone());
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum CheckStatus {
    Pass,
    Fail,
    InsufficientData,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Check {
    pub name: String,
    pub status: CheckStatus,
    pub observed: Option<f64>,
    pub expected: f64,
    pub tolerance: f64,
    pub sample_size: u64,
    pub min_sample_size: u64,
}

fn proportion_check(name: &str, hits: u64, trials: u64, expected: f64, tolerance: f64) -> Check {
    let min = min_sample_size(expected, tolerance);
    let observed = (trials > 0).then(|| hits as f64 / trials as f64);
    let status = match observed {
        Some(v) if trials >= min => {
            if (v - expected).abs() <= tolerance {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            }
        }
        _ => CheckStatus::InsufficientData,
    };
    Check {
        name: name.into(),
        status,
        observed,
        expected,
        tolerance,
        sample_size: trials,
        min_sample_size: min,
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VerificationReport {
    pub instances: u64,
    pub mask_selection_rate: Option<f64>,
    /// `(mask, random, unchanged)` fractions over masked positions.
    pub mask_split: Option<(f64, f64, f64)>,
    pub nsp_positive_rate: Option<f64>,
    pub small_origin_fraction: Option<f64>,
    pub structural_violations: u64,
    pub first_violations: Vec<(u64, String)>,
    #[cfg_attr(feature = "serde", serde(skip_serializing_if = "Option::is_none"))]
    pub distinct_negative_pairs: Option<u64>,
    pub checks: Vec<Check>,
    pub pass: bool,
}

impl VerificationReport {
    pub fn from_accumulator(acc: &Accumulator, tol: &Tolerances, distinct_negative_pairs: Option<u64>) -> Self {
        let masked = acc.masked_as_mask + acc.masked_as_random + acc.masked_unchanged;
        let frac = |x: u64| x as f64 / masked as f64;
        let mask_split = (masked > 0).then(|| {
            (
                frac(acc.masked_as_mask),
                frac(acc.masked_as_random),
                frac(acc.masked_unchanged),
            )
        });
        let tokens = acc.small_tokens + acc.large_tokens;

        let mut checks = alloc::vec![
            proportion_check(
                "mask_selection_rate",
                acc.uncapped_selected,
                acc.uncapped_candidates,
                tol.masked_lm_prob,
                tol.mask_selection,
            ),
            proportion_check("mask_replacement_mask", acc.masked_as_mask, masked, 0.8, tol.mask_split),
            proportion_check(
                "mask_replacement_random",
                acc.masked_as_random,
                masked,
                0.1,
                tol.mask_split
            ),
            proportion_check(
                "mask_replacement_unchanged",
                acc.masked_unchanged,
                masked,
                0.1,
                tol.mask_split
            ),
            proportion_check("nsp_positive_rate", acc.positives, acc.instances, 0.5, tol.nsp_positive),
        ];
        if let Some(expected) = tol.expected_small_origin {
            // tokens within an instance share a source; count instances as trials
            let mut c = proportion_check(
                "small_origin_fraction",
                acc.small_tokens,
                tokens,
                expected,
                tol.small_origin,
            );
            c.sample_size = acc.instances;
            if acc.instances < c.min_sample_size || tokens == 0 {
                c.status = CheckStatus::InsufficientData;
            }
            checks.push(c);
        }
        checks.push(Check {
            name: "structural".into(),
            status: if acc.structural_violations == 0 {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            },
            observed: Some(acc.structural_violations as f64),
            expected: 0.0,
            tolerance: 0.0,
            sample_size: acc.instances,
            min_sample_size: 0,
        });
        let pass = checks.iter().all(|c| c.status != CheckStatus::Fail);
        VerificationReport {
            instances: acc.instances,
            mask_selection_rate: (acc.candidates > 0).then(|| acc.selected as f64 / acc.candidates as f64),
            mask_split,
            nsp_positive_rate: (acc.instances > 0).then(|| acc.positives as f64 / acc.instances as f64),
            small_origin_fraction: (tokens > 0).then(|| acc.small_tokens as f64 / tokens as f64),
            structural_violations: acc.structural_violations,
            first_violations: acc.first_violations.clone(),
            distinct_negative_pairs,
            checks,
            pass,
        }
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}
