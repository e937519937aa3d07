use std::path::Path;

use proptest::prelude::*;

use dcscene::dcse::{self, DecodeErrorKind, HEADER_LEN};
use dcscene::error::exit;
use dcscene::manifest_file::{self, emit_manifest, read_manifest, verify_manifest};
use dcscene::Error;
use dcscene_core::{EmbeddingTable, Manifest, QualityPoint, SampleId};

fn id(s: &str) -> SampleId {
    SampleId::new(s).unwrap()
}

fn table(n: usize, dim: usize) -> EmbeddingTable {
    let ids = (0..n).map(|i| id(&format!("row{i}"))).collect();
    let rows = (0..n * dim).map(|i| (i as f32 * 0.37).sin()).collect();
    EmbeddingTable::new(dim, ids, rows, false).unwrap()
}

fn point(i: usize) -> QualityPoint {
    QualityPoint {
        sample_id: id(&format!("scene{:04}/cap{}", i / 5, i % 5)),
        scene_id: id(&format!("scene{:04}", i / 5)),
        clip_score: 0.5,
        caption_loss: 1.0,
    }
}

fn kind(bytes: &[u8]) -> DecodeErrorKind {
    dcse::decode(bytes).unwrap_err().kind
}

/// Offset of the first payload byte of an encoded table.
fn payload_start(t: &EmbeddingTable) -> usize {
    HEADER_LEN + t.ids().iter().map(|i| 2 + i.as_str().len()).sum::<usize>()
}

#[test]
fn empty_file_is_header_sized() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.dcse");
    dcse::write_embedding_table(&EmbeddingTable::empty(512).unwrap(), &path).unwrap();
    assert_eq!(std::fs::metadata(&path).unwrap().len(), HEADER_LEN as u64);
    let back = dcse::read_embedding_table(&path).unwrap();
    assert_eq!((back.count(), back.dim()), (0, 512));
}

#[test]
fn normalized_pair_round_trips_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.dcse");
    let t = EmbeddingTable::new(3, vec![id("a"), id("b")], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0], true).unwrap();
    dcse::write_embedding_table(&t, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let back = dcse::read_embedding_table(&path).unwrap();
    assert_eq!(back, t);
    assert_eq!(dcse::encode(&back), bytes);
}

#[test]
fn truncated_rows_report_the_cut() {
    let dim = 7;
    let bytes = dcse::encode(&table(5, dim));
    let cut = &bytes[..bytes.len() - dim * 4];
    let err = dcse::decode(cut).unwrap_err();
    assert_eq!(err.offset, (bytes.len() - dim * 4) as u64);
    assert!(matches!(err.kind, DecodeErrorKind::Truncated { .. }));
    assert!(!err.is_integrity());
}

#[test]
fn every_error_class_has_a_fixture() {
    let t = table(3, 4);
    let good = dcse::encode(&t);
    let payload = payload_start(&t);

    let mut bad = good.clone();
    bad[..4].copy_from_slice(b"DCSX");
    assert_eq!(kind(&bad), DecodeErrorKind::BadMagic);

    let mut bad = good.clone();
    bad[4..8].copy_from_slice(&9u32.to_le_bytes());
    assert_eq!(kind(&bad), DecodeErrorKind::UnsupportedVersion(9));

    let mut bad = good.clone();
    bad[20..24].copy_from_slice(&4u32.to_le_bytes());
    assert_eq!(kind(&bad), DecodeErrorKind::UnknownFlags(4));

    assert!(matches!(kind(&good[..HEADER_LEN - 1]), DecodeErrorKind::Truncated { .. }));
    assert!(matches!(kind(&good[..payload - 1]), DecodeErrorKind::Truncated { .. }));

    // Header claims fewer rows than the payload holds.
    let mut bad = good.clone();
    bad[8..16].copy_from_slice(&2u64.to_le_bytes());
    let err = dcse::decode(&bad).unwrap_err();
    assert!(matches!(err.kind, DecodeErrorKind::CountDimMismatch(_) | DecodeErrorKind::InvalidId(_)), "{err}");
    let mut bad = good.clone();
    bad.extend_from_slice(&[0; 4]);
    assert!(matches!(kind(&bad), DecodeErrorKind::CountDimMismatch(_)));

    let mut bad = good.clone();
    bad[payload + 8..payload + 12].copy_from_slice(&f32::NAN.to_le_bytes());
    let err = dcse::decode(&bad).unwrap_err();
    assert_eq!((err.kind.clone(), err.offset), (DecodeErrorKind::NonFinite, (payload + 8) as u64));
    let mut bad = good.clone();
    bad[payload..payload + 4].copy_from_slice(&f32::INFINITY.to_le_bytes());
    assert_eq!(kind(&bad), DecodeErrorKind::NonFinite);

    // "row1" -> "row0": same length, duplicate id.
    let mut bad = good.clone();
    let second = HEADER_LEN + 2 + 4;
    bad[second + 2 + 3] = b'0';
    let err = dcse::decode(&bad).unwrap_err();
    assert_eq!(err.kind, DecodeErrorKind::DuplicateId("row0".into()));
    assert_eq!(err.offset, second as u64);
    assert!(err.is_integrity());

    let mut bad = good.clone();
    bad[HEADER_LEN + 2] = 0xff;
    assert!(matches!(kind(&bad), DecodeErrorKind::InvalidId(_)));

    let mut bad = good.clone();
    bad[20..24].copy_from_slice(&1u32.to_le_bytes());
    let err = dcse::decode(&bad).unwrap_err();
    assert!(matches!(err.kind, DecodeErrorKind::NotNormalized { row: 0, .. }));
    assert!(err.is_integrity());
}

#[test]
fn decode_errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.dcse");
    std::fs::write(&path, b"nope").unwrap();
    let err = dcse::read_embedding_table(&path).unwrap_err();
    assert_eq!(err.exit_code(), exit::FORMAT);
    assert!(err.to_string().contains("byte 0"), "{err}");

    let missing = dcse::read_embedding_table(Path::new("/no/such/file.dcse")).unwrap_err();
    assert_eq!(missing.exit_code(), exit::MISSING_INPUT);
}

#[test]
fn manifest_emission_ignores_input_order() {
    let dir = tempfile::tempdir().unwrap();
    let pool: Vec<QualityPoint> = (0..10_000).map(point).collect();
    let mut reversed = pool.clone();
    reversed.reverse();
    let a = dir.path().join("a.manifest");
    let b = dir.path().join("b.manifest");
    let m = emit_manifest(&pool, 1, "fraction", 42, &a).unwrap();
    emit_manifest(&reversed, 1, "fraction", 42, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(m.entries.len(), 10_000);
    assert!(verify_manifest(&a, &pool).unwrap().passed());
    assert_eq!(read_manifest(&a).unwrap(), m);
}

#[test]
fn tampered_manifests_fail_each_check() {
    let pool: Vec<QualityPoint> = (0..20).map(point).collect();
    let m = Manifest::from_pool(&pool, 0, "fraction", 7).unwrap();

    let mut dup = m.clone();
    dup.entries[1] = dup.entries[0].clone();
    assert!(dup.check(&pool).failures().contains(&"uniqueness"));

    let mut digest = m.clone();
    digest.pool_digest ^= 1;
    assert_eq!(digest.check(&pool).failures(), ["digest"]);

    let smaller = &pool[..19];
    assert_eq!(m.check(smaller).failures(), ["set-equality"]);

    let text = manifest_file::render(&m);
    let err = manifest_file::parse(&text.replacen("#stage=0", "#stage=zero", 1)).unwrap_err();
    assert_eq!(err.0, 2);
    assert!(manifest_file::parse(text.trim_end()).is_err());
}

#[test]
fn manifest_parse_errors_are_format_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.manifest");
    std::fs::write(&path, "#not-a-manifest\n").unwrap();
    let err = read_manifest(&path).unwrap_err();
    assert!(matches!(err, Error::Line { line: 1, .. }));
    assert_eq!(err.exit_code(), exit::FORMAT);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn dcse_round_trips_bit_exactly(
        n in 0..20usize,
        dim in 1..16usize,
        seed in any::<u32>(),
        names in prop::collection::vec("[a-zA-Z0-9/_.\u{e9}-]{1,12}", 20),
    ) {
        let ids: Vec<SampleId> = (0..n).map(|i| id(&format!("{i}:{}", names[i]))).collect();
        let rows: Vec<f32> = (0..n * dim)
            .map(|i| f32::from_bits((seed ^ (i as u32).wrapping_mul(2_654_435_761)) & 0x7f7f_ffff))
            .map(|v| if v.is_finite() { v } else { 0.0 })
            .collect();
        let t = EmbeddingTable::new(dim, ids, rows, false).unwrap();
        let bytes = dcse::encode(&t);
        let back = dcse::decode(&bytes).unwrap();
        let same_bits = back.rows().iter().zip(t.rows()).all(|(a, b)| a.to_bits() == b.to_bits());
        prop_assert!(same_bits);
        prop_assert_eq!(back.ids(), t.ids());
        prop_assert_eq!(dcse::encode(&back), bytes);
    }

    #[test]
    fn manifests_round_trip_bytes(n in 0..200usize, k in 0..5usize, seed in any::<u64>()) {
        let ids: Vec<SampleId> = (0..n).map(|i| id(&format!("s{i}"))).collect();
        let m = Manifest::from_ids(&ids, k, "threshold", seed).unwrap();
        let text = manifest_file::render(&m);
        let back = manifest_file::parse(&text).unwrap();
        prop_assert_eq!(manifest_file::render(&back), text);
        prop_assert_eq!(back, m);
    }
}
