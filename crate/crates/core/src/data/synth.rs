use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, DataError, Document};

/// Emotion trigger tokens are `emo0`, `emo1`, ...
pub const EMOTION_TRIGGER_PREFIX: &str = "emo";
/// Cause trigger tokens are `cau0`, `cau1`, ...; `cau{k}` is the cause of `emo{k}`.
pub const CAUSE_TRIGGER_PREFIX: &str = "cau";
const FILLER_PREFIX: &str = "w";

/// Inclusive integer range, written `min..max` (or a single number).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntRange {
    pub min: usize,
    pub max: usize,
}

impl IntRange {
    pub const fn new(min: usize, max: usize) -> Self {
        Self { min, max }
    }

    pub fn is_empty(&self) -> bool {
        self.min > self.max
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        rng.gen_range(self.min..=self.max)
    }
}

impl fmt::Display for IntRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.min, self.max)
    }
}

impl FromStr for IntRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("bad range `{s}`: {e}"));
        match s.split_once("..") {
            Some((a, b)) => Ok(Self::new(parse(a)?, parse(b.trim_start_matches('='))?)),
            None => {
                let v = parse(s)?;
                Ok(Self::new(v, v))
            }
        }
    }
}

/// Shape of a synthetic corpus. All ranges are inclusive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_docs: usize,
    pub clauses_per_doc: IntRange,
    pub tokens_per_clause: IntRange,
    pub vocab_size: usize,
    /// `|emotion - cause|` for each planted pair.
    pub pair_distance: IntRange,
    pub pairs_per_doc: IntRange,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_docs: 600,
            clauses_per_doc: IntRange::new(4, 10),
            tokens_per_clause: IntRange::new(3, 8),
            vocab_size: 200,
            pair_distance: IntRange::new(0, 2),
            pairs_per_doc: IntRange::new(1, 1),
        }
    }
}

impl SynthConfig {
    /// Number of distinct triggers per kind.
    pub fn num_triggers(&self) -> usize {
        (self.vocab_size / 16).max(1)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let err = |m: String| Err(DataError::Config(m));
        for (name, r) in [
            ("clauses_per_doc", self.clauses_per_doc),
            ("tokens_per_clause", self.tokens_per_clause),
            ("pair_distance", self.pair_distance),
            ("pairs_per_doc", self.pairs_per_doc),
        ] {
            if r.is_empty() {
                return err(format!("{name} range {r} is empty"));
            }
        }
        if self.vocab_size < 16 {
            return err(format!("vocab_size {} must be at least 16", self.vocab_size));
        }
        if self.clauses_per_doc.min == 0 || self.tokens_per_clause.min == 0 {
            return err("documents need at least one clause of at least one token".into());
        }
        if self.clauses_per_doc.max < self.pair_distance.max {
            return err(format!(
                "clauses_per_doc max {} is below pair_distance max {}",
                self.clauses_per_doc.max, self.pair_distance.max
            ));
        }
        if self.pair_distance.min >= self.clauses_per_doc.min && self.pairs_per_doc.max > 0 {
            return err(format!(
                "pair_distance min {} does not fit in a {}-clause document",
                self.pair_distance.min, self.clauses_per_doc.min
            ));
        }
        if self.pairs_per_doc.max > self.clauses_per_doc.min {
            return err(format!(
                "pairs_per_doc max {} exceeds clauses_per_doc min {}",
                self.pairs_per_doc.max, self.clauses_per_doc.min
            ));
        }
        if self.pairs_per_doc.max > self.num_triggers() {
            return err(format!(
                "pairs_per_doc max {} exceeds the {} available triggers",
                self.pairs_per_doc.max,
                self.num_triggers()
            ));
        }
        Ok(())
    }
}

/// Generates a corpus whose labels come exactly from planted trigger tokens.
///
/// Each planted pair `k` puts `emo{t}` into its emotion clause and `cau{t}`
/// into its cause clause for a trigger id `t` unique within the document, so
/// the annotation can be recovered by scanning tokens. Emotion clauses are
/// distinct across a document's pairs, and so are cause clauses. The output
/// depends only on `(cfg, seed)`.
pub fn generate_synthetic(cfg: &SynthConfig, seed: u64) -> Result<Corpus, DataError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_trig = cfg.num_triggers();
    let n_filler = cfg.vocab_size - 2 * n_trig;
    let mut documents = Vec::with_capacity(cfg.num_docs);
    for doc_id in 0..cfg.num_docs as u64 {
        let n = cfg.clauses_per_doc.sample(&mut rng);
        let mut clauses: Vec<Vec<String>> = (0..n)
            .map(|_| {
                let len = cfg.tokens_per_clause.sample(&mut rng);
                (0..len)
                    .map(|_| format!("{FILLER_PREFIX}{}", rng.gen_range(0..n_filler)))
                    .collect()
            })
            .collect();

        let n_pairs = cfg.pairs_per_doc.sample(&mut rng);
        let mut triggers: Vec<usize> = (0..n_trig).collect();
        triggers.shuffle(&mut rng);
        let mut emotions = BTreeSet::new();
        let mut causes = BTreeSet::new();
        let mut pairs = BTreeSet::new();
        for &trigger in triggers.iter().take(n_pairs) {
            let (e, c) = place_pair(cfg, n, &emotions, &causes, &mut rng).ok_or_else(|| {
                DataError::Config(format!("document {doc_id}: no room left to plant a pair"))
            })?;
            for (clause, prefix) in [(e, EMOTION_TRIGGER_PREFIX), (c, CAUSE_TRIGGER_PREFIX)] {
                let pos = rng.gen_range(0..=clauses[clause].len());
                clauses[clause].insert(pos, format!("{prefix}{trigger}"));
            }
            emotions.insert(e);
            causes.insert(c);
            pairs.insert((e, c));
        }
        documents.push(Document::new(doc_id, clauses, emotions, causes, pairs)?);
    }
    Corpus::new(documents)
}

fn place_pair<R: Rng>(
    cfg: &SynthConfig,
    n: usize,
    emotions: &BTreeSet<usize>,
    causes: &BTreeSet<usize>,
    rng: &mut R,
) -> Option<(usize, usize)> {
    let mut distances: Vec<usize> = (cfg.pair_distance.min..=cfg.pair_distance.max.min(n - 1)).collect();
    distances.shuffle(rng);
    for d in distances {
        let mut candidates = Vec::new();
        for e in 0..n {
            if emotions.contains(&e) {
                continue;
            }
            let mut targets = vec![];
            if e >= d {
                targets.push(e - d);
            }
            if d > 0 && e + d < n {
                targets.push(e + d);
            }
            candidates.extend(targets.into_iter().filter(|c| !causes.contains(c)).map(|c| (e, c)));
        }
        if let Some(&pick) = candidates.choose(rng) {
            return Some(pick);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Vocabulary;

    fn fixed(seed: u64) -> Corpus {
        let cfg = SynthConfig {
            num_docs: 1,
            clauses_per_doc: IntRange::new(6, 6),
            pairs_per_doc: IntRange::new(1, 1),
            pair_distance: IntRange::new(1, 1),
            ..SynthConfig::default()
        };
        generate_synthetic(&cfg, seed).unwrap()
    }

    #[test]
    fn forced_config_plants_one_adjacent_pair() {
        let c = fixed(7);
        assert_eq!(c.len(), 1);
        let d = &c.documents[0];
        assert_eq!(d.len(), 6);
        assert_eq!(d.pairs.len(), 1);
        let &(e, k) = d.pairs.iter().next().unwrap();
        assert_eq!(e.abs_diff(k), 1);
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(fixed(7).to_jsonl_string(), fixed(7).to_jsonl_string());
        assert_ne!(fixed(7).to_jsonl_string(), fixed(8).to_jsonl_string());
    }

    #[test]
    fn base_rate_is_one_emotion_per_document() {
        let cfg = SynthConfig {
            num_docs: 500,
            ..SynthConfig::default()
        };
        let c = generate_synthetic(&cfg, 1).unwrap();
        let emotions: usize = c.documents.iter().map(|d| d.emotions.len()).sum();
        let mean = emotions as f64 / c.len() as f64;
        assert!((mean - 1.0).abs() < 1e-12, "mean {mean}");
        for d in &c.documents {
            assert!(d.pairs.iter().all(|&(e, k)| e.abs_diff(k) <= 2));
            assert!((4..=10).contains(&d.len()));
        }
    }

    #[test]
    fn config_errors() {
        let bad = SynthConfig {
            clauses_per_doc: IntRange::new(2, 3),
            pair_distance: IntRange::new(0, 5),
            ..SynthConfig::default()
        };
        assert!(matches!(generate_synthetic(&bad, 0), Err(DataError::Config(_))));
        let small_vocab = SynthConfig {
            vocab_size: 8,
            ..SynthConfig::default()
        };
        assert!(generate_synthetic(&small_vocab, 0).is_err());
        let empty = SynthConfig {
            tokens_per_clause: IntRange::new(5, 2),
            ..SynthConfig::default()
        };
        assert!(generate_synthetic(&empty, 0).is_err());
    }

    #[test]
    fn zero_pair_documents_are_allowed() {
        let cfg = SynthConfig {
            num_docs: 30,
            pairs_per_doc: IntRange::new(0, 2),
            ..SynthConfig::default()
        };
        let c = generate_synthetic(&cfg, 3).unwrap();
        assert!(c.documents.iter().any(|d| d.pairs.is_empty()));
        assert!(c.documents.iter().any(|d| d.pairs.len() == 2));
    }

    /// Rule-based oracle: pairs `emo{t}` with `cau{t}`.
    fn scan(doc: &Document) -> BTreeSet<(usize, usize)> {
        let find = |prefix: &str| {
            doc.clauses
                .iter()
                .flat_map(|c| {
                    c.tokens
                        .iter()
                        .filter_map(move |t| t.strip_prefix(prefix).map(|id| (id.to_string(), c.index)))
                })
                .collect::<Vec<_>>()
        };
        let causes = find(CAUSE_TRIGGER_PREFIX);
        find(EMOTION_TRIGGER_PREFIX)
            .into_iter()
            .flat_map(|(id, e)| {
                causes
                    .iter()
                    .filter(move |(cid, _)| *cid == id)
                    .map(move |&(_, c)| (e, c))
            })
            .collect()
    }

    #[test]
    fn trigger_scan_recovers_labels() {
        let cfg = SynthConfig {
            num_docs: 300,
            pairs_per_doc: IntRange::new(0, 3),
            ..SynthConfig::default()
        };
        let c = generate_synthetic(&cfg, 12).unwrap();
        for d in &c.documents {
            let found = scan(d);
            assert_eq!(found, d.pairs);
            let e: BTreeSet<usize> = found.iter().map(|p| p.0).collect();
            let k: BTreeSet<usize> = found.iter().map(|p| p.1).collect();
            assert_eq!(e, d.emotions);
            assert_eq!(k, d.causes);
        }
        assert!(c.vocabulary.len() <= cfg.vocab_size + 2);
        assert_eq!(c.vocabulary.id("<unk>"), Vocabulary::UNK);
    }

    #[test]
    fn range_parsing() {
        assert_eq!("3..7".parse::<IntRange>().unwrap(), IntRange::new(3, 7));
        assert_eq!("3..=7".parse::<IntRange>().unwrap(), IntRange::new(3, 7));
        assert_eq!("4".parse::<IntRange>().unwrap(), IntRange::new(4, 4));
        assert!("a..b".parse::<IntRange>().is_err());
        assert_eq!(IntRange::new(1, 2).to_string(), "1..2");
    }
}
