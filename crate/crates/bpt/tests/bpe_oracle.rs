mod common;

use bpt::pipeline::build_vocab;
use bpt_core::vocab::{train_bpe, vocabulary_stream, AmplificationPlan, WordCounts};
use bpt_core::Origin;

fn tiny_corpus(seed: u64) -> Vec<(String, u64)> {
    let mut r = common::rng(seed);
    let n = r.range_inclusive(1, 20);
    let letters = ["ab", "abc", "abcd", "aeiou", "xyzab"][r.index(5)];
    common::word_list(seed, n, letters, (1, 6))
        .into_iter()
        .map(|w| (w, r.range_inclusive(1, 9) as u64))
        .collect()
}

fn counts(words: &[(String, u64)]) -> WordCounts {
    let mut wc = WordCounts::new();
    for (w, c) in words {
        wc.add_word(w, *c);
    }
    wc
}

#[test]
fn trainer_matches_brute_force_on_tiny_corpora() {
    for seed in 0..40u64 {
        let words = tiny_corpus(seed);
        let min_freq = 1 + seed % 3;
        let oracle = common::oracle_bpe(&words, 400, min_freq);
        let (v, report) = train_bpe(&counts(&words), &common::bpe(400, min_freq)).unwrap();
        assert_eq!(v.merges(), &oracle.merges[..], "seed {seed}");
        assert_eq!(v.tokens(), &oracle.tokens[..], "seed {seed}");
        assert_eq!(report.merges_performed, oracle.merges.len());
    }
}

#[test]
fn trainer_matches_brute_force_when_target_binds() {
    for seed in 100..120u64 {
        let words = tiny_corpus(seed);
        let base = common::oracle_bpe(&words, 0, 1).tokens.len();
        let target = base + 1 + (seed as usize % 7);
        let oracle = common::oracle_bpe(&words, target, 1);
        let (v, _) = train_bpe(&counts(&words), &common::bpe(target, 1)).unwrap();
        assert_eq!(v.merges(), &oracle.merges[..], "seed {seed}");
        assert_eq!(v.tokens(), &oracle.tokens[..], "seed {seed}");
    }
}

#[test]
fn training_is_deterministic() {
    let words = tiny_corpus(7);
    let a = train_bpe(&counts(&words), &common::bpe(200, 1)).unwrap().0;
    let b = train_bpe(&counts(&words), &common::bpe(200, 1)).unwrap().0;
    assert_eq!(a.merges(), b.merges());
}

/// Thresholds frozen from the oracle: at 600 tokens the amplified stream
/// keeps all ten markers whole and the plain stream none.
const AMPV_TARGET: usize = 600;

#[test]
fn amplified_vocabulary_keeps_markers() {
    let case = common::ampv_case();
    let small = common::corpus("s", Origin::Small, &case.small);
    let large = common::corpus("l", Origin::Large, &case.large);
    let (amp, report) = build_vocab(&small, Some(&large), true, &common::bpe(AMPV_TARGET, 2)).unwrap();
    let (plain, plain_report) = build_vocab(&small, Some(&large), false, &common::bpe(AMPV_TARGET, 2)).unwrap();
    assert_eq!(report.repeat_factor, Some(30));
    assert_eq!(plain_report.repeat_factor, None);

    let whole = |v: &bpt_core::Vocabulary| case.markers.iter().filter(|m| v.contains(m)).count();
    assert!(whole(&amp) >= 8, "{}", whole(&amp));
    assert!(whole(&plain) <= 2, "{}", whole(&plain));

    let sw = WordCounts::from_corpus(&small);
    let lw = WordCounts::from_corpus(&large);
    let plan = AmplificationPlan::from_sizes(report.small_bytes, report.large_bytes.unwrap());
    for (stream, vocab) in [
        (vocabulary_stream(&sw, &lw, Some(&plan)), &amp),
        (vocabulary_stream(&sw, &lw, None), &plain),
    ] {
        let sorted: Vec<(String, u64)> = stream.sorted().into_iter().map(|(w, c)| (w.to_string(), c)).collect();
        let oracle = common::oracle_bpe(&sorted, AMPV_TARGET, 2);
        assert_eq!(vocab.tokens(), &oracle.tokens[..]);
    }
    assert_eq!(
        vocabulary_stream(&sw, &lw, Some(&plan)).get(&case.markers[0]),
        30 * sw.get(&case.markers[0])
    );
}
