//! Per-token embeddings for assembled sequences.
//!
//! Two providers share one interface: a store of precomputed language-model
//! features keyed by the joined token sequence, and a hash-seeded stub whose
//! output is reproducible bit for bit in any language.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::aspects::TokenSequence;
use crate::error::{Error, Result};
use crate::io_util::Reader;

/// Row `i` is the embedding of token `i`.
pub type EmbeddingMatrix = Array2<f64>;

pub const EMBEDDING_MAGIC: &[u8; 4] = b"LMKB";
pub const EMBEDDING_VERSION: u32 = 1;

/// Width of twelve concatenated 768-wide encoder layers.
pub const LM_EMBEDDING_DIM: usize = 12 * 768;
pub const DEFAULT_STUB_DIM: usize = 64;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// One splitmix64 output for state `x`: add the golden gamma, then mix.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic pseudo-embedding of `token` at `position`. Every component
/// lies in `[-1, 1)`.
pub fn stub_vector(token: &str, position: usize, dim: usize, seed: u64) -> Vec<f64> {
    let h = fnv1a64(token.as_bytes()) ^ (position as u64).wrapping_mul(GOLDEN_GAMMA) ^ seed;
    (0..dim as u64)
        .map(|j| {
            let bits = splitmix64(h.wrapping_add(j)) >> 11;
            bits as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect()
}

/// Precomputed per-sequence matrices, stored as 32-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    pub dim: usize,
    pub entries: BTreeMap<String, Array2<f32>>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        EmbeddingStore {
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, key: String, matrix: Array2<f32>) -> Result<()> {
        if matrix.ncols() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: matrix.ncols(),
            });
        }
        self.entries.insert(key, matrix);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(EMBEDDING_MAGIC);
        out.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for (key, m) in &self.entries {
            out.extend_from_slice(&(key.len() as u32).to_le_bytes());
            out.extend_from_slice(key.as_bytes());
            out.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
            for v in m.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != EMBEDDING_MAGIC {
            return Err(Error::BadMagic { expected: "LMKB" });
        }
        let version = r.u32()?;
        if version != EMBEDDING_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let dim = r.u32()? as usize;
        let count = r.u64()?;
        let mut store = EmbeddingStore::new(dim);
        for _ in 0..count {
            let klen = r.u32()? as usize;
            let key =
                String::from_utf8(r.take(klen)?.to_vec()).map_err(|_| Error::MalformedRecord {
                    line: 0,
                    reason: "embedding key is not UTF-8".into(),
                })?;
            let rows = r.u32()? as usize;
            let mut data = Vec::with_capacity(rows * dim);
            for _ in 0..rows * dim {
                data.push(r.f32()?);
            }
            let m = Array2::from_shape_vec((rows, dim), data).expect("rows * dim values");
            store.entries.insert(key, m);
        }
        Ok(store)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[derive(Debug, Clone)]
pub enum EmbeddingProvider {
    Stub { dim: usize, seed: u64 },
    File { dim: usize, store: EmbeddingStore },
}

impl EmbeddingProvider {
    pub fn stub(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dim must be positive");
        EmbeddingProvider::Stub { dim, seed }
    }

    pub fn from_store(dim: usize, store: EmbeddingStore) -> Result<Self> {
        if store.dim != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: store.dim,
            });
        }
        Ok(EmbeddingProvider::File { dim, store })
    }

    pub fn dim(&self) -> usize {
        match self {
            EmbeddingProvider::Stub { dim, .. } | EmbeddingProvider::File { dim, .. } => *dim,
        }
    }

    pub fn embed(&self, seq: &TokenSequence) -> Result<EmbeddingMatrix> {
        match self {
            EmbeddingProvider::Stub { dim, seed } => {
                let mut m = Array2::zeros((seq.len(), *dim));
                for (i, tok) in seq.tokens.iter().enumerate() {
                    let v = stub_vector(tok, i, *dim, *seed);
                    m.row_mut(i).assign(&ndarray::ArrayView1::from(&v));
                }
                Ok(m)
            }
            EmbeddingProvider::File { dim, store } => {
                let key = seq.key();
                let stored = store
                    .entries
                    .get(&key)
                    .ok_or_else(|| Error::MissingEmbedding(key.clone()))?;
                if stored.ncols() != *dim {
                    return Err(Error::DimensionMismatch {
                        expected: *dim,
                        found: stored.ncols(),
                    });
                }
                if stored.nrows() != seq.len() {
                    return Err(Error::shape(
                        "embed",
                        format!(
                            "{key:?} has {} rows for {} tokens",
                            stored.nrows(),
                            seq.len()
                        ),
                    ));
                }
                Ok(stored.mapv(f64::from))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aspects::{assemble_sequence, AnswerAspects};

    fn seq(q: &str) -> TokenSequence {
        let q: Vec<String> = q.split_whitespace().map(String::from).collect();
        assemble_sequence(&q, &AnswerAspects::default())
    }

    #[test]
    fn fnv_reference_values() {
        // published FNV-1a 64 test vectors
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn splitmix_reference_values() {
        // first outputs of the reference generator seeded with 0
        assert_eq!(splitmix64(0), 0xe220a8397b1dcdaf);
        assert_eq!(splitmix64(GOLDEN_GAMMA), 0x6e789e6aa1b965f4);
    }

    #[test]
    fn stub_is_deterministic_and_bounded() {
        let a = stub_vector("jamaican", 3, 64, 1);
        assert_eq!(a, stub_vector("jamaican", 3, 64, 1));
        assert!(a.iter().all(|v| (-1.0..1.0).contains(v)));
        assert_ne!(stub_vector("x", 0, 8, 1), stub_vector("x", 1, 8, 1));
        assert_ne!(stub_vector("x", 0, 8, 1), stub_vector("x", 0, 8, 2));
    }

    #[test]
    fn stub_embed_twice_is_bitwise_identical() {
        let p = EmbeddingProvider::stub(16, 9);
        let s = seq("what does jamaican people speak");
        let a = p.embed(&s).unwrap();
        let b = p.embed(&s).unwrap();
        assert_eq!(a.shape(), &[7, 16]);
        assert!(a
            .iter()
            .zip(b.iter())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn file_mode_lookup_and_errors() {
        let s = seq("who");
        let mut store = EmbeddingStore::new(4);
        store
            .insert(
                s.key(),
                Array2::from_shape_fn((3, 4), |(i, j)| (i * 4 + j) as f32),
            )
            .unwrap();
        let p = EmbeddingProvider::from_store(4, store.clone()).unwrap();
        assert_eq!(p.embed(&s).unwrap()[[2, 3]], 11.0);
        assert!(matches!(
            p.embed(&seq("what")),
            Err(Error::MissingEmbedding(_))
        ));
        assert!(matches!(
            EmbeddingProvider::from_store(8, store),
            Err(Error::DimensionMismatch {
                expected: 8,
                found: 4
            })
        ));
    }

    #[test]
    fn file_round_trip_and_errors() {
        let mut store = EmbeddingStore::new(3);
        store
            .insert("a b".into(), Array2::from_elem((2, 3), 0.25))
            .unwrap();
        store
            .insert(
                "<CLS> x <SEP>".into(),
                Array2::from_shape_fn((3, 3), |(i, j)| i as f32 - j as f32 * 1e-3),
            )
            .unwrap();
        let bytes = store.to_bytes();
        let back = EmbeddingStore::from_bytes(&bytes).unwrap();
        assert_eq!(back, store);
        assert_eq!(back.to_bytes(), bytes);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            EmbeddingStore::from_bytes(&bad),
            Err(Error::BadMagic { .. })
        ));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(
            EmbeddingStore::from_bytes(&v2),
            Err(Error::UnsupportedVersion(2))
        ));
        assert!(matches!(
            EmbeddingStore::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::TruncatedFile)
        ));

        let empty = EmbeddingStore::new(9216);
        let back = EmbeddingStore::from_bytes(&empty.to_bytes()).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.dim, 9216);
    }
}
