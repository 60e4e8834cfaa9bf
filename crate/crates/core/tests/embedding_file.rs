use lmkbqa::aspects::{assemble_sequence, AnswerAspects};
use lmkbqa::embeddings::{EmbeddingProvider, EmbeddingStore, LM_EMBEDDING_DIM};
use lmkbqa::Error;
use ndarray::Array2;

fn seq(q: &[&str]) -> lmkbqa::aspects::TokenSequence {
    let q: Vec<String> = q.iter().map(|s| s.to_string()).collect();
    assemble_sequence(&q, &AnswerAspects::default())
}

#[test]
fn three_token_sequence_yields_full_width_matrix() {
    let s = seq(&["who"]);
    assert_eq!(s.tokens, ["<CLS>", "who", "<SEP>"]);
    let mut store = EmbeddingStore::new(LM_EMBEDDING_DIM);
    let m = Array2::from_shape_fn((3, LM_EMBEDDING_DIM), |(i, j)| {
        (i * 7 + j % 13) as f32 * 0.25
    });
    store.insert(s.key(), m.clone()).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lm.lmkb");
    store.write(&path).unwrap();
    let loaded = EmbeddingStore::load(&path).unwrap();
    assert_eq!(loaded, store);
    assert_eq!(std::fs::read(&path).unwrap(), loaded.to_bytes());

    let provider = EmbeddingProvider::from_store(LM_EMBEDDING_DIM, loaded).unwrap();
    let e = provider.embed(&s).unwrap();
    assert_eq!(e.dim(), (3, LM_EMBEDDING_DIM));
    assert_eq!(e, m.mapv(f64::from));
}

#[test]
fn header_layout_is_little_endian() {
    let mut store = EmbeddingStore::new(2);
    store
        .insert("a b".into(), Array2::from_elem((2, 2), 1.5f32))
        .unwrap();
    let bytes = store.to_bytes();
    assert_eq!(&bytes[..4], b"LMKB");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
    assert_eq!(u64::from_le_bytes(bytes[12..20].try_into().unwrap()), 1);
    assert_eq!(u32::from_le_bytes(bytes[20..24].try_into().unwrap()), 3);
    assert_eq!(&bytes[24..27], b"a b");
    assert_eq!(u32::from_le_bytes(bytes[27..31].try_into().unwrap()), 2);
    assert_eq!(f32::from_le_bytes(bytes[31..35].try_into().unwrap()), 1.5);
    assert_eq!(bytes.len(), 31 + 4 * 4);
}

#[test]
fn malformed_files_are_rejected() {
    let mut store = EmbeddingStore::new(2);
    store.insert("k".into(), Array2::zeros((1, 2))).unwrap();
    let good = store.to_bytes();

    let mut bad_magic = good.clone();
    bad_magic[0] = b'X';
    assert!(matches!(
        EmbeddingStore::from_bytes(&bad_magic),
        Err(Error::BadMagic { .. })
    ));
    let mut bad_version = good.clone();
    bad_version[4] = 9;
    assert!(matches!(
        EmbeddingStore::from_bytes(&bad_version),
        Err(Error::UnsupportedVersion(9))
    ));
    assert!(matches!(
        EmbeddingStore::from_bytes(&good[..good.len() - 1]),
        Err(Error::TruncatedFile)
    ));

    let provider = EmbeddingProvider::from_store(2, store.clone()).unwrap();
    assert!(matches!(
        provider.embed(&seq(&["missing"])),
        Err(Error::MissingEmbedding(_))
    ));
    assert!(matches!(
        EmbeddingProvider::from_store(3, store),
        Err(Error::DimensionMismatch {
            expected: 3,
            found: 2
        })
    ));
}
