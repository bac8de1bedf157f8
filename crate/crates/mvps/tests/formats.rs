use std::fs;

use mvps::checkpoint::Checkpoint;
use mvps::embfile::{decode_embeddings, encode_embeddings, load_manifest, write_with_manifest, Manifest};
use mvps::FormatError;
use mvps_core::datamodel::{Dataset, EmbeddingRecord};
use mvps_core::mask::Mask;
use mvps_core::retriever::{Retriever, RetrieverConfig};
use proptest::prelude::*;
use tempfile::tempdir;

fn dataset() -> impl Strategy<Value = Dataset> {
    (1usize..5, 1usize..6, 1usize..6, 1usize..8).prop_flat_map(|(d, h, w, n)| {
        let record = (
            any::<u16>(),
            any::<u16>(),
            prop::collection::vec(-1e3f32..1e3, d),
            prop::collection::vec(any::<bool>(), h * w),
        );
        (prop::collection::btree_set(any::<u64>(), n), prop::collection::vec(record, n)).prop_map(move |(ids, recs)| {
            let mut records = Vec::new();
            let mut masks = Vec::new();
            for (i, (id, (class_label, domain_id, e, bits))) in ids.into_iter().zip(recs).enumerate() {
                records.push(EmbeddingRecord {
                    image_id: id,
                    embedding: e.into_iter().map(f64::from).collect(),
                    class_label,
                    domain_id,
                    mask_id: i,
                });
                masks.push(Mask::from_bools(h, w, &bits).unwrap());
            }
            Dataset::new("p", d, (h, w), records, masks).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn embedding_files_round_trip(ds in dataset()) {
        let bytes = encode_embeddings(&ds).unwrap();
        let back = decode_embeddings("p", &bytes).unwrap();
        prop_assert_eq!(back.records(), ds.records());
        for r in ds.records() {
            prop_assert_eq!(back.mask(r.mask_id), ds.mask(r.mask_id));
        }
        prop_assert_eq!(encode_embeddings(&back).unwrap(), bytes);
    }

    #[test]
    fn truncated_embedding_files_are_rejected(ds in dataset(), cut in 1usize..64) {
        let bytes = encode_embeddings(&ds).unwrap();
        let keep = bytes.len().saturating_sub(cut);
        prop_assert!(decode_embeddings("p", &bytes[..keep]).is_err());
    }

    #[test]
    fn checkpoints_round_trip(seed in any::<u64>(), identity in any::<bool>()) {
        let cfg = RetrieverConfig { d_in: 4, d_model: 4, n_heads: 2, n_encoder: 1, n_decoder: 1, d_ff: 8, identity_init: identity, ..RetrieverConfig::default() };
        let ck = Checkpoint { model: Retriever::new(cfg, seed).unwrap(), step: seed };
        let back = Checkpoint::decode(&ck.encode().unwrap()).unwrap();
        prop_assert_eq!(back.step, seed);
        prop_assert_eq!(back.model.config(), ck.model.config());
        prop_assert_eq!(back.model.params(), ck.model.params());
    }
}

fn sample() -> Dataset {
    let records = (0..3)
        .map(|i| EmbeddingRecord {
            image_id: i,
            embedding: vec![1.0, i as f64],
            class_label: i as u16,
            domain_id: 0,
            mask_id: i as usize,
        })
        .collect();
    Dataset::new("s", 2, (2, 2), records, vec![Mask::full(2, 2); 3]).unwrap()
}

fn rewrite_manifest(path: &std::path::Path, edit: impl FnOnce(&mut Manifest)) {
    let mut m = Manifest::read(path).unwrap();
    edit(&mut m);
    fs::write(path, serde_json::to_string(&m).unwrap()).unwrap();
}

#[test]
fn manifest_mismatches_are_reported() {
    let dir = tempdir().unwrap();
    let path = write_with_manifest(&sample(), dir.path(), "s").unwrap();
    assert_eq!(load_manifest(&path).unwrap().len(), 3);

    rewrite_manifest(&path, |m| m.d = 5);
    assert!(matches!(load_manifest(&path), Err(FormatError::DimensionMismatch { expected: 5, found: 2 })));

    rewrite_manifest(&path, |m| {
        m.d = 2;
        m.records = 4;
    });
    assert!(matches!(load_manifest(&path), Err(FormatError::CountMismatch { manifest: 4, file: 3 })));

    fs::write(&path, r#"{"name":"s","path":"s.emb","records":3,"d":2,"heldout_labels":[],"extra":1}"#).unwrap();
    assert_eq!(load_manifest(&path).unwrap_err().code(), "manifest");

    fs::remove_file(dir.path().join("s.emb")).unwrap();
    fs::write(&path, r#"{"name":"s","path":"s.emb","records":3,"d":2,"heldout_labels":[]}"#).unwrap();
    assert_eq!(load_manifest(&path).unwrap_err().code(), "io");
}

#[test]
fn heldout_labels_from_manifest_are_applied() {
    let dir = tempdir().unwrap();
    let path = write_with_manifest(&sample(), dir.path(), "s").unwrap();
    rewrite_manifest(&path, |m| m.heldout_labels = vec![1]);
    let ds = load_manifest(&path).unwrap();
    assert_eq!(ds.heldout_labels().iter().copied().collect::<Vec<_>>(), vec![1]);
}

#[test]
fn trailing_bytes_are_rejected() {
    let mut bytes = encode_embeddings(&sample()).unwrap();
    bytes.push(0);
    assert!(matches!(decode_embeddings("s", &bytes), Err(FormatError::Trailing(1))));
}
