//! Corpus model, JSONL ingestion, synthetic corpora and k-fold splits.
//!
//! Clause indices are 0-based everywhere, in files and in memory.

mod folds;
mod synth;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use folds::{split_folds, Fold};
pub use synth::{generate_synthetic, IntRange, SynthConfig, CAUSE_TRIGGER_PREFIX, EMOTION_TRIGGER_PREFIX};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: malformed JSON: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("document {doc_id}: {message}")]
    Validation { doc_id: u64, message: String },
    #[error("duplicate doc_id {0}")]
    DuplicateDocId(u64),
    #[error("invalid synthetic config: {0}")]
    Config(String),
    #[error("cannot split {docs} documents into {k} folds")]
    Folds { docs: usize, k: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Clause {
    pub tokens: Vec<String>,
    pub index: usize,
}

/// One annotated document. Label sets hold 0-based clause indices;
/// pairs are `(emotion_clause, cause_clause)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub doc_id: u64,
    pub clauses: Vec<Clause>,
    pub emotions: BTreeSet<usize>,
    pub causes: BTreeSet<usize>,
    pub pairs: BTreeSet<(usize, usize)>,
}

/// On-disk JSONL record.
#[derive(Debug, Serialize, Deserialize)]
struct DocumentRecord {
    doc_id: u64,
    clauses: Vec<Vec<String>>,
    emotions: Vec<usize>,
    causes: Vec<usize>,
    pairs: Vec<[usize; 2]>,
}

impl Document {
    /// Builds and validates a document from raw token lists and labels.
    pub fn new(
        doc_id: u64,
        clauses: Vec<Vec<String>>,
        emotions: impl IntoIterator<Item = usize>,
        causes: impl IntoIterator<Item = usize>,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, DataError> {
        let doc = Self {
            doc_id,
            clauses: clauses
                .into_iter()
                .enumerate()
                .map(|(index, tokens)| Clause { tokens, index })
                .collect(),
            emotions: emotions.into_iter().collect(),
            causes: causes.into_iter().collect(),
            pairs: pairs.into_iter().collect(),
        };
        doc.validate()?;
        Ok(doc)
    }

    pub fn len(&self) -> usize {
        self.clauses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clauses.is_empty()
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let fail = |message: String| DataError::Validation {
            doc_id: self.doc_id,
            message,
        };
        let n = self.clauses.len();
        if n == 0 {
            return Err(fail("document has no clauses".into()));
        }
        for (i, c) in self.clauses.iter().enumerate() {
            if c.tokens.is_empty() {
                return Err(fail(format!("clause {i} has no tokens")));
            }
            if c.index != i {
                return Err(fail(format!("clause {i} carries index {}", c.index)));
            }
        }
        for &e in &self.emotions {
            if e >= n {
                return Err(fail(format!("emotion index {e} out of range for {n} clauses")));
            }
        }
        for &c in &self.causes {
            if c >= n {
                return Err(fail(format!("cause index {c} out of range for {n} clauses")));
            }
        }
        for &(e, c) in &self.pairs {
            if e >= n || c >= n {
                return Err(fail(format!("pair ({e}, {c}) out of range for {n} clauses")));
            }
            if !self.emotions.contains(&e) {
                return Err(fail(format!("pair ({e}, {c}): emotion {e} not in emotion labels")));
            }
            if !self.causes.contains(&c) {
                return Err(fail(format!("pair ({e}, {c}): cause {c} not in cause labels")));
            }
        }
        Ok(())
    }

    fn from_record(r: DocumentRecord) -> Result<Self, DataError> {
        Self::new(
            r.doc_id,
            r.clauses,
            r.emotions,
            r.causes,
            r.pairs.into_iter().map(|[e, c]| (e, c)),
        )
    }

    fn to_record(&self) -> DocumentRecord {
        DocumentRecord {
            doc_id: self.doc_id,
            clauses: self.clauses.iter().map(|c| c.tokens.clone()).collect(),
            emotions: self.emotions.iter().copied().collect(),
            causes: self.causes.iter().copied().collect(),
            pairs: self.pairs.iter().map(|&(e, c)| [e, c]).collect(),
        }
    }

    /// Single-line JSON encoding used by the corpus files.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&self.to_record()).expect("records always serialize")
    }
}

/// Token to id map. Id 0 is padding and id 1 the unknown token.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: BTreeMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        Self::from_tokens(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    pub const PAD: usize = 0;
    pub const UNK: usize = 1;
    pub const PAD_TOKEN: &'static str = "<pad>";
    pub const UNK_TOKEN: &'static str = "<unk>";

    /// Vocabulary over every token in `docs`, ids assigned in sorted order.
    pub fn build<'a>(docs: impl IntoIterator<Item = &'a Document>) -> Self {
        let seen: BTreeSet<&str> = docs
            .into_iter()
            .flat_map(|d| d.clauses.iter().flat_map(|c| c.tokens.iter().map(String::as_str)))
            .collect();
        let mut tokens = vec![Self::PAD_TOKEN.to_string(), Self::UNK_TOKEN.to_string()];
        tokens.extend(
            seen.into_iter()
                .filter(|t| *t != Self::PAD_TOKEN && *t != Self::UNK_TOKEN)
                .map(str::to_string),
        );
        Self::from_tokens(tokens)
    }

    /// Rebuilds the lookup from an id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, ids }
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(Self::UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub vocabulary: Vocabulary,
}

impl Corpus {
    /// Validates every document, checks id uniqueness and builds the vocabulary.
    pub fn new(documents: Vec<Document>) -> Result<Self, DataError> {
        let mut ids = HashSet::with_capacity(documents.len());
        for d in &documents {
            d.validate()?;
            if !ids.insert(d.doc_id) {
                return Err(DataError::DuplicateDocId(d.doc_id));
            }
        }
        let vocabulary = Vocabulary::build(&documents);
        Ok(Self {
            documents,
            vocabulary,
        })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// Sub-corpus over the given document positions, with its own vocabulary.
    pub fn subset(&self, indices: &[usize]) -> Corpus {
        let documents: Vec<Document> = indices.iter().map(|&i| self.documents[i].clone()).collect();
        let vocabulary = Vocabulary::build(&documents);
        Corpus {
            documents,
            vocabulary,
        }
    }

    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self, DataError> {
        let mut documents = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: DocumentRecord =
                serde_json::from_str(&line).map_err(|source| DataError::Json { line: i + 1, source })?;
            documents.push(Document::from_record(record)?);
        }
        Self::new(documents)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for d in &self.documents {
            writeln!(w, "{}", d.to_json_line())?;
        }
        Ok(())
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> io::Result<()> {
        let mut f = io::BufWriter::new(File::create(path)?);
        self.write_jsonl(&mut f)?;
        f.flush()
    }
}

/// Reads a JSONL corpus file.
pub fn parse_corpus(path: impl AsRef<Path>) -> Result<Corpus, DataError> {
    Corpus::from_reader(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<Corpus, DataError> {
        Corpus::from_reader(s.as_bytes())
    }

    #[test]
    fn parses_minimal_document() {
        let c = parse(r#"{"doc_id":0,"clauses":[["a"],["b"]],"emotions":[1],"causes":[0],"pairs":[[1,0]]}"#)
            .unwrap();
        assert_eq!(c.len(), 1);
        let d = &c.documents[0];
        assert_eq!(d.len(), 2);
        assert_eq!(d.pairs.len(), 1);
        assert!(d.pairs.contains(&(1, 0)));
        assert_eq!(c.vocabulary.id("<pad>"), Vocabulary::PAD);
        assert_eq!(c.vocabulary.id("never-seen"), Vocabulary::UNK);
        assert_eq!(c.vocabulary.len(), 4);
    }

    #[test]
    fn out_of_range_pair_is_rejected() {
        let err = parse(r#"{"doc_id":3,"clauses":[["a"],["b"]],"emotions":[1],"causes":[0],"pairs":[[1,5]]}"#)
            .unwrap_err();
        assert!(matches!(err, DataError::Validation { doc_id: 3, .. }), "{err}");
    }

    #[test]
    fn pair_must_appear_in_label_sets() {
        let err = parse(r#"{"doc_id":4,"clauses":[["a"],["b"]],"emotions":[],"causes":[0],"pairs":[[1,0]]}"#)
            .unwrap_err();
        assert!(matches!(err, DataError::Validation { doc_id: 4, .. }));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "{\"doc_id\":0,\"clauses\":[[\"a\"]],\"emotions\":[],\"causes\":[],\"pairs\":[]}\n{oops\n";
        match parse(text).unwrap_err() {
            DataError::Json { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn duplicate_ids_and_empty_clauses() {
        let line = r#"{"doc_id":1,"clauses":[["a"]],"emotions":[],"causes":[],"pairs":[]}"#;
        assert!(matches!(
            parse(&format!("{line}\n{line}\n")).unwrap_err(),
            DataError::DuplicateDocId(1)
        ));
        let empty = r#"{"doc_id":1,"clauses":[[]],"emotions":[],"causes":[],"pairs":[]}"#;
        assert!(parse(empty).is_err());
        let none = r#"{"doc_id":1,"clauses":[],"emotions":[],"causes":[],"pairs":[]}"#;
        assert!(parse(none).is_err());
    }

    #[test]
    fn case_study_structure_is_valid() {
        // emotion clause c7 caused by c6, written 0-based
        let clauses = (0..7).map(|i| vec![format!("t{i}")]).collect();
        let doc = Document::new(0, clauses, [6], [5], [(6, 5)]).unwrap();
        assert_eq!(doc.pairs.iter().next(), Some(&(6, 5)));
    }

    #[test]
    fn jsonl_round_trip() {
        let cfg = SynthConfig {
            num_docs: 20,
            ..SynthConfig::default()
        };
        let corpus = generate_synthetic(&cfg, 5).unwrap();
        let again = parse(&corpus.to_jsonl_string()).unwrap();
        assert_eq!(corpus, again);
    }
}
