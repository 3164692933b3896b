use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Corpus, DataError};

/// One cross-validation split, as positions into `Corpus::documents`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded k-fold partition. Every document lands in exactly one test fold and
/// test-fold sizes differ by at most one (the first `len % k` folds are larger).
pub fn split_folds(corpus: &Corpus, k: usize, seed: u64) -> Result<Vec<Fold>, DataError> {
    let n = corpus.len();
    if k < 2 || k > n {
        return Err(DataError::Folds { docs: n, k });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut test = order[start..start + size].to_vec();
        test.sort_unstable();
        let mut train: Vec<usize> = order[..start].iter().chain(&order[start + size..]).copied().collect();
        train.sort_unstable();
        folds.push(Fold { train, test });
        start += size;
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SynthConfig};
    use std::collections::BTreeSet;

    fn corpus(n: usize) -> Corpus {
        let cfg = SynthConfig {
            num_docs: n,
            ..SynthConfig::default()
        };
        generate_synthetic(&cfg, 0).unwrap()
    }

    #[test]
    fn ten_docs_ten_folds() {
        let folds = split_folds(&corpus(10), 10, 1).unwrap();
        assert_eq!(folds.len(), 10);
        assert!(folds.iter().all(|f| f.train.len() == 9 && f.test.len() == 1));
    }

    #[test]
    fn folds_partition_the_corpus() {
        let c = corpus(37);
        let folds = split_folds(&c, 5, 9).unwrap();
        let mut seen = BTreeSet::new();
        for f in &folds {
            for &t in &f.test {
                assert!(seen.insert(t), "document {t} in two test folds");
            }
            let train: BTreeSet<_> = f.train.iter().collect();
            assert!(f.test.iter().all(|t| !train.contains(t)));
            assert_eq!(f.train.len() + f.test.len(), 37);
        }
        assert_eq!(seen, (0..37).collect());
    }

    #[test]
    fn sizes_differ_by_at_most_one() {
        let folds = split_folds(&corpus(105), 10, 4).unwrap();
        let mut sizes: Vec<usize> = folds.iter().map(|f| f.test.len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![10, 10, 10, 10, 10, 11, 11, 11, 11, 11]);
    }

    #[test]
    fn seeded_and_validated() {
        let c = corpus(12);
        assert_eq!(split_folds(&c, 3, 5).unwrap(), split_folds(&c, 3, 5).unwrap());
        assert_ne!(split_folds(&c, 3, 5).unwrap(), split_folds(&c, 3, 6).unwrap());
        assert!(matches!(split_folds(&c, 13, 0), Err(DataError::Folds { docs: 12, k: 13 })));
        assert!(split_folds(&c, 1, 0).is_err());
    }
}
