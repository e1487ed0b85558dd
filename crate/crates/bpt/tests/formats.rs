mod common;

use std::fs;

use bpt::error::Error;
use bpt::format::{read_instances, write_instances, InstanceReader, HEADER_LEN};
use bpt::vocab_io::{read_vocab, write_merges, write_vocab};
use bpt_core::{split_corpus, Origin, PretrainInstance};
use proptest::prelude::*;

fn strip(v: &[PretrainInstance]) -> Vec<PretrainInstance> {
    v.iter()
        .cloned()
        .map(|mut i| {
            i.provenance = None;
            i
        })
        .collect()
}

#[test]
fn instance_file_round_trip() {
    let (vocab, stream) = common::sample_stream(3);
    assert!(stream.len() > 50);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("i.bpti");
    let summary = write_instances(&p, &vocab, 128, &stream).unwrap();
    assert_eq!(summary.instance_count, stream.len() as u64);
    assert_eq!(summary.bytes, fs::metadata(&p).unwrap().len());
    let back = read_instances(&p, Some(&vocab)).unwrap();
    assert_eq!(back, strip(&stream));

    // read then write reproduces the file byte for byte
    let p2 = dir.path().join("j.bpti");
    write_instances(&p2, &vocab, 128, &back).unwrap();
    assert_eq!(fs::read(&p).unwrap(), fs::read(&p2).unwrap());
}

#[test]
fn empty_stream_is_a_valid_file() {
    let (vocab, _) = common::sample_stream(4);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("e.bpti");
    write_instances(&p, &vocab, 128, &[]).unwrap();
    let r = InstanceReader::open(&p, Some(&vocab)).unwrap();
    assert_eq!(r.header().instance_count, 0);
    assert_eq!(r.count(), 0);
    let bytes = fs::read(&p).unwrap();
    assert_eq!(&bytes[..4], b"BPTI");
    assert_eq!(bytes.len() as u64, HEADER_LEN + 12);
}

fn written() -> (tempfile::TempDir, std::path::PathBuf, bpt_core::Vocabulary, Vec<u8>) {
    let (vocab, stream) = common::sample_stream(5);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.bpti");
    write_instances(&p, &vocab, 128, &stream).unwrap();
    let bytes = fs::read(&p).unwrap();
    (dir, p, vocab, bytes)
}

#[test]
fn flipped_body_byte_fails_checksum() {
    let (_d, p, vocab, bytes) = written();
    for offset in [HEADER_LEN as usize, bytes.len() / 2, bytes.len() - 13] {
        let mut b = bytes.clone();
        b[offset] ^= 0x40;
        fs::write(&p, &b).unwrap();
        let err = InstanceReader::open(&p, Some(&vocab)).err().unwrap();
        assert!(matches!(err, Error::ChecksumMismatch { .. }), "{offset}: {err}");
    }
}

#[test]
fn truncated_file_reports_unexpected_end() {
    let (_d, p, vocab, bytes) = written();
    for cut in [bytes.len() - 1, bytes.len() - 12, bytes.len() / 2, 30, 10, 2] {
        fs::write(&p, &bytes[..cut]).unwrap();
        let err = InstanceReader::open(&p, Some(&vocab)).err().unwrap();
        assert_eq!(err.to_string(), "unexpected end of records", "cut {cut}");
    }
}

#[test]
fn header_errors_are_named() {
    let (_d, p, vocab, bytes) = written();

    let mut b = bytes.clone();
    b[0] = b'X';
    fs::write(&p, &b).unwrap();
    assert!(matches!(InstanceReader::open(&p, None), Err(Error::BadMagic)));

    let mut b = bytes.clone();
    b[4] = 9;
    fs::write(&p, &b).unwrap();
    assert!(matches!(
        InstanceReader::open(&p, None),
        Err(Error::UnsupportedVersion(9))
    ));

    fs::write(&p, &bytes).unwrap();
    let (other, _) = common::sample_stream(6);
    let err = InstanceReader::open(&p, Some(&other)).err().unwrap();
    assert!(err.to_string().starts_with("vocabulary hash mismatch"));
    assert!(InstanceReader::open(&p, Some(&vocab)).is_ok());

    // a header claiming fewer records than the body holds
    let mut b = bytes.clone();
    let n = u64::from_le_bytes(b[16..24].try_into().unwrap());
    b[16..24].copy_from_slice(&(n - 1).to_le_bytes());
    fs::write(&p, &b).unwrap();
    let res: Result<Vec<_>, _> = InstanceReader::open(&p, Some(&vocab)).unwrap().collect();
    assert!(matches!(res, Err(Error::TrailingBytes)));

    // and more than it holds
    b[16..24].copy_from_slice(&(n + 1).to_le_bytes());
    fs::write(&p, &b).unwrap();
    let res: Result<Vec<_>, _> = InstanceReader::open(&p, Some(&vocab)).unwrap().collect();
    assert!(matches!(res, Err(Error::UnexpectedEnd)));
}

#[test]
fn writer_rejects_invalid_instances() {
    let (vocab, stream) = common::sample_stream(8);
    let dir = tempfile::tempdir().unwrap();
    let mut bad = stream[..3].to_vec();
    bad[2].segment_ids.pop();
    let err = write_instances(&dir.path().join("x"), &vocab, 128, &bad).unwrap_err();
    assert!(matches!(err, Error::InvalidInstance { index: 2, .. }), "{err}");
    let err = write_instances(&dir.path().join("y"), &vocab, 16, &stream).unwrap_err();
    assert!(matches!(err, Error::InvalidInstance { index: 0, .. }), "{err}");
}

#[test]
fn vocabulary_file_round_trip() {
    let (vocab, _) = common::sample_stream(9);
    let dir = tempfile::tempdir().unwrap();
    let (vp, mp) = (dir.path().join("v.txt"), dir.path().join("m.txt"));
    write_vocab(&vocab, &vp).unwrap();
    write_merges(&vocab, &mp).unwrap();
    let back = read_vocab(&vp, Some(&mp)).unwrap();
    assert_eq!(back, vocab);
}

#[test]
fn shard_files_round_trip() {
    let words = common::word_list(10, 100, "abcdefgh", (2, 6));
    let text = common::synth_text(10, &words, 30_000);
    let dir = tempfile::tempdir().unwrap();
    let src = common::write(dir.path(), "c.txt", &text);
    let c = bpt::corpus_io::load_corpus(&src, "c", Origin::Small).unwrap();
    let shards = split_corpus(&c, 4_000).unwrap();
    let paths = bpt::corpus_io::write_shards(&shards, "c", &dir.path().join("shards")).unwrap();
    assert_eq!(paths.len(), shards.len());
    let back = bpt::corpus_io::load_corpus(&dir.path().join("shards"), "c", Origin::Small).unwrap();
    assert_eq!(back, c);
}

fn arb_instance(n_vocab: u32) -> impl Strategy<Value = PretrainInstance> {
    (1usize..40, 1usize..40, any::<bool>(), any::<u64>()).prop_map(move |(a, b, is_next, seed)| {
        let mut r = common::rng(seed);
        let mut tok = |_| 5 + r.below(u64::from(n_vocab - 5)) as u32;
        let mut ids = vec![2u32];
        let mut seg = vec![0u8];
        ids.extend((0..a).map(&mut tok));
        seg.extend(std::iter::repeat_n(0, a));
        ids.push(3);
        seg.push(0);
        ids.extend((0..b).map(&mut tok));
        seg.extend(std::iter::repeat_n(1, b + 1));
        ids.push(3);
        let cand: Vec<u32> = (1..=a as u32).chain(a as u32 + 2..a as u32 + 2 + b as u32).collect();
        let k = (cand.len() / 7).clamp(1, 20);
        let mut pos: Vec<u32> = cand.iter().step_by(cand.len() / k).copied().take(k).collect();
        pos.sort_unstable();
        let labels: Vec<u32> = pos.iter().map(|&p| ids[p as usize]).collect();
        for &p in &pos {
            ids[p as usize] = 4;
        }
        let small = (seed % (a + b + 1) as u64) as u32;
        PretrainInstance {
            token_ids: ids,
            segment_ids: seg,
            masked_positions: pos,
            masked_labels: labels,
            is_next,
            origin_small_tokens: small,
            origin_large_tokens: (a + b) as u32 - small,
            provenance: None,
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn arbitrary_streams_round_trip(stream in proptest::collection::vec(arb_instance(50), 0..30)) {
        let toks: Vec<String> = common::specials().into_iter().chain((0..45).map(|i| format!("t{i}"))).collect();
        let vocab = bpt_core::Vocabulary::from_tokens(toks).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.bpti");
        write_instances(&p, &vocab, 128, &stream).unwrap();
        prop_assert_eq!(read_instances(&p, Some(&vocab)).unwrap(), stream);
    }
}
