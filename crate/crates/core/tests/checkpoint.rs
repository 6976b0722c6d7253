mod common;

use grasp_core::model::checkpoint::{decode, digest_hex, encode, ByteWriter, MAGIC, VERSION};
use grasp_core::registry::Registry;
use grasp_core::{load_checkpoint, save_checkpoint, Error};

#[test]
fn every_model_round_trips_bit_exactly() {
    let sets = common::sets(1, 6);
    let registry = Registry::with_defaults();
    for name in registry.names() {
        let c = common::fitted(name, &sets, 4, 1);
        let bytes = encode(c.as_ref());
        let back = decode(&bytes, &registry).unwrap();
        assert_eq!(back.name(), name);
        assert_eq!(back.featurizer(), c.featurizer());
        assert_eq!(encode(back.as_ref()), bytes, "{name}");
        for w in common::windows(&sets[..2], c.as_ref()) {
            let a = c.predict_proba(&w.input).unwrap();
            let b = back.predict_proba(&w.input).unwrap();
            assert!(
                a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()),
                "{name}"
            );
        }
    }
}

#[test]
fn same_seed_same_bytes() {
    let sets = common::sets(2, 4);
    let a = encode(common::fitted("data-stft-lstm", &sets, 4, 2).as_ref());
    let b = encode(common::fitted("data-stft-lstm", &sets, 4, 2).as_ref());
    assert_eq!(digest_hex(&a), digest_hex(&b));
}

#[test]
fn flipped_byte_is_detected() {
    let sets = common::sets(1, 4);
    let bytes = encode(common::fitted("lstm", &sets, 3, 1).as_ref());
    let registry = Registry::with_defaults();
    for pos in [20, bytes.len() / 2, bytes.len() - 40, bytes.len() - 1] {
        let mut bad = bytes.clone();
        bad[pos] ^= 0x10;
        assert!(
            matches!(decode(&bad, &registry), Err(Error::DigestMismatch)),
            "byte {pos}"
        );
    }
    assert!(decode(&bytes[..bytes.len() - 5], &registry).is_err());
    assert!(matches!(
        decode(b"NOTACKPT0000", &registry),
        Err(Error::Corrupt(_))
    ));
}

#[test]
fn other_versions_are_refused_explicitly() {
    let sets = common::sets(1, 4);
    let mut bytes = encode(common::fitted("nb", &sets, 3, 1).as_ref());
    for v in [0u32, VERSION + 1] {
        bytes[8..12].copy_from_slice(&v.to_le_bytes());
        let e = decode(&bytes, &Registry::with_defaults()).unwrap_err();
        assert!(matches!(e, Error::UnsupportedVersion { found, .. } if found == v));
        assert!(e.to_string().contains("unsupported version"));
    }
}

#[test]
fn unknown_model_name_is_reported() {
    let mut w = ByteWriter::new();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.u16(3);
    w.bytes(b"cnn");
    w.u8(b'C');
    w.u32(20);
    w.u32(10);
    w.u32(0);
    w.u64(0);
    let mut bytes = w.into_inner();
    let digest = hex_digest_bytes(&bytes);
    bytes.extend_from_slice(&digest);
    assert!(
        matches!(decode(&bytes, &Registry::with_defaults()), Err(Error::UnknownModel(n)) if n == "cnn")
    );
}

fn hex_digest_bytes(b: &[u8]) -> Vec<u8> {
    let h = digest_hex(b);
    (0..h.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&h[i..i + 2], 16).unwrap())
        .collect()
}

#[test]
fn file_save_and_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let sets = common::sets(3, 4);
    let c = common::fitted("knn", &sets, 3, 1);
    save_checkpoint(c.as_ref(), &path).unwrap();
    let back = load_checkpoint(&path, &Registry::with_defaults()).unwrap();
    assert_eq!(encode(back.as_ref()), encode(c.as_ref()));
    assert!(load_checkpoint(&dir.path().join("missing.ckpt"), &Registry::with_defaults()).is_err());
}
