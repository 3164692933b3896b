//! Clause representations and relative-position embeddings.
//!
//! Two providers produce the `(N, dim)` clause matrix for a document:
//! a store of precomputed vectors read from the `A2NE` binary format, and a
//! trainable token lookup table whose rows are mean-pooled per clause.
//!
//! # Embedding file layout
//!
//! All integers are little-endian `u32`, all values little-endian `f32`:
//!
//! ```text
//! "A2NE" | version=1 | dim | num_docs
//! repeated num_docs times: doc_id | n_clauses | n_clauses * dim values
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;

use crate::autodiff::{AutodiffError, Graph, ParamId, ParamStore, Tensor, Var};
use crate::data::{Document, Vocabulary};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"A2NE";
pub const EMBEDDING_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("no precomputed embeddings for document {0}")]
    MissingDocument(u64),
    #[error("embedding width {got} does not match the configured width {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("document {doc_id}: {rows} embedding rows for {clauses} clauses")]
    ClauseCount { doc_id: u64, rows: usize, clauses: usize },
    #[error("embedding file: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Clause vectors keyed by document id, as read from an `A2NE` file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PrecomputedEmbeddings {
    dim: usize,
    docs: BTreeMap<u64, Tensor>,
}

impl PrecomputedEmbeddings {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            docs: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, doc_id: u64) -> Option<&Tensor> {
        self.docs.get(&doc_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &Tensor)> {
        self.docs.iter().map(|(&id, t)| (id, t))
    }

    /// Inserts a `(n_clauses, dim)` matrix.
    pub fn insert(&mut self, doc_id: u64, rows: Tensor) -> Result<(), EncoderError> {
        if rows.shape().len() != 2 || rows.shape()[1] != self.dim {
            return Err(EncoderError::DimMismatch {
                expected: self.dim,
                got: rows.last_dim(),
            });
        }
        self.docs.insert(doc_id, rows);
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, EncoderError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != EMBEDDING_MAGIC {
            return Err(EncoderError::Format(format!("bad magic {magic:?}")));
        }
        let version = read_u32(&mut r)?;
        if version != EMBEDDING_VERSION {
            return Err(EncoderError::Format(format!("unsupported version {version}")));
        }
        let dim = read_u32(&mut r)? as usize;
        if dim == 0 {
            return Err(EncoderError::Format("dim must be positive".into()));
        }
        let num_docs = read_u32(&mut r)?;
        let mut out = Self::new(dim);
        let mut buf = Vec::new();
        for _ in 0..num_docs {
            let doc_id = u64::from(read_u32(&mut r)?);
            let n = read_u32(&mut r)? as usize;
            buf.resize(n * dim * 4, 0);
            r.read_exact(&mut buf)?;
            let values = buf
                .chunks_exact(4)
                .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
                .collect();
            if out.docs.contains_key(&doc_id) {
                return Err(EncoderError::Format(format!("duplicate doc_id {doc_id}")));
            }
            out.docs.insert(doc_id, Tensor::new(vec![n, dim], values).expect("sized above"));
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(EncoderError::Format("trailing bytes after last document".into()));
        }
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EncoderError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    /// Writes the `A2NE` layout; values are narrowed to `f32`.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), EncoderError> {
        let to_u32 = |v: u64, what: &str| {
            u32::try_from(v).map_err(|_| EncoderError::Format(format!("{what} {v} does not fit in u32")))
        };
        w.write_all(EMBEDDING_MAGIC)?;
        w.write_all(&EMBEDDING_VERSION.to_le_bytes())?;
        w.write_all(&to_u32(self.dim as u64, "dim")?.to_le_bytes())?;
        w.write_all(&to_u32(self.docs.len() as u64, "document count")?.to_le_bytes())?;
        for (&doc_id, rows) in &self.docs {
            w.write_all(&to_u32(doc_id, "doc_id")?.to_le_bytes())?;
            w.write_all(&to_u32(rows.rows() as u64, "clause count")?.to_le_bytes())?;
            for &v in rows.data() {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EncoderError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Source of the clause matrix `X`.
#[derive(Clone, Debug)]
pub enum ClauseEmbeddingProvider {
    /// Rows served verbatim; no gradient flows into them.
    Precomputed(PrecomputedEmbeddings),
    /// Mean of trainable token embeddings per clause.
    TrainableLookup { table: ParamId, vocabulary: Vocabulary },
}

impl ClauseEmbeddingProvider {
    /// Lookup provider with a `(vocab, dim)` table of unit-variance uniform
    /// noise; the padding row starts at zero.
    pub fn trainable<R: Rng>(
        store: &mut ParamStore,
        vocabulary: Vocabulary,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        let bound = 3f64.sqrt();
        let mut data: Vec<f64> = (0..vocabulary.len() * dim)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        data[..dim].fill(0.0);
        let table = store.add(
            "encoder.token_embeddings",
            Tensor::new(vec![vocabulary.len(), dim], data).expect("sized above"),
        )?;
        Ok(Self::TrainableLookup { table, vocabulary })
    }

    pub fn dim(&self, store: &ParamStore) -> usize {
        match self {
            Self::Precomputed(p) => p.dim(),
            Self::TrainableLookup { table, .. } => store.get(*table).value.last_dim(),
        }
    }

    /// `(N, dim)` clause matrix for `doc`, with dropout in training mode.
    pub fn encode_document(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        doc: &Document,
        dropout: f64,
    ) -> Result<Var, EncoderError> {
        let x = match self {
            Self::Precomputed(p) => {
                let rows = p.get(doc.doc_id).ok_or(EncoderError::MissingDocument(doc.doc_id))?;
                if rows.rows() != doc.len() {
                    return Err(EncoderError::ClauseCount {
                        doc_id: doc.doc_id,
                        rows: rows.rows(),
                        clauses: doc.len(),
                    });
                }
                g.constant(rows.clone())
            }
            Self::TrainableLookup { table, vocabulary } => {
                let ids: Vec<usize> = doc
                    .clauses
                    .iter()
                    .flat_map(|c| c.tokens.iter().map(|t| vocabulary.id(t)))
                    .collect();
                let mut pool = vec![0.0; doc.len() * ids.len()];
                let mut offset = 0;
                for (i, c) in doc.clauses.iter().enumerate() {
                    let w = 1.0 / c.tokens.len() as f64;
                    pool[i * ids.len() + offset..i * ids.len() + offset + c.tokens.len()].fill(w);
                    offset += c.tokens.len();
                }
                let table = g.param(store, *table);
                let tokens = g.gather_rows(table, &ids)?;
                let pool = g.constant(Tensor::new(vec![doc.len(), ids.len()], pool).expect("sized above"));
                g.matmul(pool, tokens)?
            }
        };
        Ok(g.dropout(x, dropout)?)
    }
}

/// Trainable embeddings for clipped clause offsets `j - i`.
#[derive(Clone, Copy, Debug)]
pub struct RelativePositionTable {
    pub max_offset: usize,
    pub table: ParamId,
}

impl RelativePositionTable {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        max_offset: usize,
        dim_pos: usize,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        let table = store.add_glorot("encoder.relative_position", 2 * max_offset + 1, dim_pos, rng)?;
        Ok(Self { max_offset, table })
    }

    /// Row for the offset `j - i`, clipped to `[-K, K]`.
    pub fn index(&self, i: usize, j: usize) -> usize {
        let k = self.max_offset as i64;
        ((j as i64 - i as i64).clamp(-k, k) + k) as usize
    }

    /// `e_ij` as a `(dim_pos)` vector.
    pub fn relative_position(&self, g: &mut Graph, store: &ParamStore, i: usize, j: usize) -> Result<Var, AutodiffError> {
        let table = g.param(store, self.table);
        let row = g.gather_rows(table, &[self.index(i, j)])?;
        let width = g.value(row).last_dim();
        g.reshape(row, &[width])
    }

    /// Embeddings for every ordered pair, `(n * n, dim_pos)`, row `i * n + j`.
    pub fn grid(&self, g: &mut Graph, store: &ParamStore, n: usize) -> Result<Var, AutodiffError> {
        let idx: Vec<usize> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| self.index(i, j)).collect();
        let table = g.param(store, self.table);
        g.gather_rows(table, &idx)
    }
}
