//! Task-aligned representations, the three scoring heads and their losses.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Graph, ParamStore, Tensor, Var};
use crate::nn::Ffn;

/// `r_e = [H_e; H_s]` and `r_c = [H_c; H_s]`, each `(N, 2 * hidden)`.
#[derive(Clone, Copy, Debug)]
pub struct TaskRepresentations {
    pub emotion: Var,
    pub cause: Var,
}

/// Scores detached from the graph, for decoding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrices {
    /// `(N)` emotion scores.
    pub y_e: Tensor,
    /// `(N)` cause scores.
    pub y_c: Tensor,
    /// `(N, N)` pair scores, row = emotion clause.
    pub y_p: Tensor,
}

impl ScoreMatrices {
    pub fn num_clauses(&self) -> usize {
        self.y_e.len()
    }
}

pub fn task_representations(g: &mut Graph, h_e: Var, h_c: Var, h_s: Var) -> Result<TaskRepresentations, AutodiffError> {
    Ok(TaskRepresentations {
        emotion: g.concat(&[h_e, h_s])?,
        cause: g.concat(&[h_c, h_s])?,
    })
}

/// `r_ij = [H_e[i] + H_s[i]; H_c[j] + H_s[j]; e_ij]` for one pair.
pub fn pair_representation(
    g: &mut Graph,
    i: usize,
    j: usize,
    h_e: Var,
    h_c: Var,
    h_s: Var,
    e_ij: Var,
) -> Result<Var, AutodiffError> {
    let (ei, si) = (g.gather_rows(h_e, &[i])?, g.gather_rows(h_s, &[i])?);
    let (cj, sj) = (g.gather_rows(h_c, &[j])?, g.gather_rows(h_s, &[j])?);
    let emotion = g.add(ei, si)?;
    let cause = g.add(cj, sj)?;
    let w = g.value(emotion).last_dim();
    let emotion = g.reshape(emotion, &[w])?;
    let cause = g.reshape(cause, &[w])?;
    g.concat(&[emotion, cause, e_ij])
}

/// Every `r_ij` at once: `(N * N, 2 * hidden + dim_pos)`, row `i * N + j`.
/// `positions` is the matching `(N * N, dim_pos)` grid.
pub fn pair_grid(g: &mut Graph, h_e: Var, h_c: Var, h_s: Var, positions: Var) -> Result<Var, AutodiffError> {
    let n = g.shape(h_e)[0];
    let emotion = g.add(h_e, h_s)?;
    let cause = g.add(h_c, h_s)?;
    let rows: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, n)).collect();
    let cols: Vec<usize> = (0..n).flat_map(|_| 0..n).collect();
    let left = g.gather_rows(emotion, &rows)?;
    let right = g.gather_rows(cause, &cols)?;
    g.concat(&[left, right, positions])
}

/// `sigmoid(FFN(r))`, one score per input row.
#[derive(Clone, Copy, Debug)]
pub struct ScoreHead {
    pub ffn: Ffn,
}

impl ScoreHead {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        Ok(Self {
            ffn: Ffn::new(store, name, in_dim, hidden_dim.max(1), 1, rng)?,
        })
    }

    /// `(N, in)` rows to `(N)` scores in `(0, 1)`.
    pub fn predict(&self, g: &mut Graph, store: &ParamStore, r: Var) -> Result<Var, AutodiffError> {
        let n = g.shape(r)[0];
        let logits = self.ffn.forward(g, store, r)?;
        let logits = g.reshape(logits, &[n])?;
        Ok(g.sigmoid(logits))
    }

    /// Scores a pair grid from [`pair_grid`] into an `(N, N)` matrix.
    pub fn predict_grid(&self, g: &mut Graph, store: &ParamStore, grid: Var, n: usize) -> Result<Var, AutodiffError> {
        let flat = self.predict(g, store, grid)?;
        g.reshape(flat, &[n, n])
    }
}

/// 0/1 indicator over `n` clauses.
pub fn clause_indicator(n: usize, positives: &BTreeSet<usize>) -> Tensor {
    Tensor::vector((0..n).map(|i| f64::from(u8::from(positives.contains(&i)))).collect())
}

/// 0/1 indicator over the `(n, n)` grid.
pub fn pair_indicator(n: usize, pairs: &BTreeSet<(usize, usize)>) -> Tensor {
    let data = (0..n * n).map(|k| f64::from(u8::from(pairs.contains(&(k / n, k % n))))).collect();
    Tensor::new(vec![n, n], data).expect("n * n entries")
}

/// Summed cross-entropy of `scores` against the 0/1 `gold` tensor.
///
/// With `literal` only the positive-class term `-sum(y log y_hat)` is kept.
/// Scores are clamped to `[c, 1 - c]` through the graph's log clamp.
pub fn binary_cross_entropy(g: &mut Graph, scores: Var, gold: &Tensor, literal: bool) -> Result<Var, AutodiffError> {
    if g.shape(scores) != gold.shape() {
        return Err(AutodiffError::Shape {
            op: "binary_cross_entropy",
            shapes: vec![g.shape(scores).to_vec(), gold.shape().to_vec()],
        });
    }
    let y = g.constant(gold.clone());
    let log_p = g.log(scores)?;
    let mut ll = g.mul(y, log_p)?;
    if !literal {
        let not_y = g.one_minus(y);
        let q = g.one_minus(scores);
        let log_q = g.log(q)?;
        let neg = g.mul(not_y, log_q)?;
        ll = g.add(ll, neg)?;
    }
    let total = g.sum(ll);
    Ok(g.scale(total, -1.0))
}

/// Emotion plus cause cross-entropy.
pub fn aux_loss(
    g: &mut Graph,
    y_e: Var,
    y_c: Var,
    gold_emotions: &Tensor,
    gold_causes: &Tensor,
    literal: bool,
) -> Result<Var, AutodiffError> {
    let le = binary_cross_entropy(g, y_e, gold_emotions, literal)?;
    let lc = binary_cross_entropy(g, y_c, gold_causes, literal)?;
    g.add(le, lc)
}

pub fn pair_loss(g: &mut Graph, y_p: Var, gold_pairs: &Tensor, literal: bool) -> Result<Var, AutodiffError> {
    binary_cross_entropy(g, y_p, gold_pairs, literal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::LN_2;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn representation_widths_and_zero_interaction() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut g = Graph::new();
        let he = g.constant(random(&mut rng, &[4, 300]));
        let hc = g.constant(random(&mut rng, &[4, 300]));
        let hs = g.constant(Tensor::zeros(&[4, 300]));
        let r = task_representations(&mut g, he, hc, hs).unwrap();
        assert_eq!(g.shape(r.emotion), &[4, 600]);
        for i in 0..4 {
            let row = g.value(r.emotion).row(i);
            assert_eq!(&row[..300], g.value(he).row(i));
            assert!(row[300..].iter().all(|&v| v == 0.0));
        }
        let e = g.constant(random(&mut rng, &[50]));
        let rij = pair_representation(&mut g, 1, 2, he, hc, hs, e).unwrap();
        assert_eq!(g.shape(rij), &[650]);
        assert_eq!(&g.value(rij).data()[..300], g.value(he).row(1));
    }

    #[test]
    fn rows_follow_clause_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, b, c) = (random(&mut rng, &[3, 2]), random(&mut rng, &[3, 2]), random(&mut rng, &[3, 2]));
        let perm = [2, 0, 1];
        let mut g = Graph::new();
        let vars = [a, b, c].map(|t| g.constant(t));
        let base = task_representations(&mut g, vars[0], vars[1], vars[2]).unwrap();
        let permuted = vars.map(|v| g.gather_rows(v, &perm).unwrap());
        let moved = task_representations(&mut g, permuted[0], permuted[1], permuted[2]).unwrap();
        for (k, &p) in perm.iter().enumerate() {
            assert_eq!(g.value(moved.emotion).row(k), g.value(base.emotion).row(p));
            assert_eq!(g.value(moved.cause).row(k), g.value(base.cause).row(p));
        }
    }

    #[test]
    fn grid_rows_match_single_pairs_and_are_asymmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut g = Graph::new();
        let [he, hc, hs] = [0; 3].map(|_| g.constant(random(&mut rng, &[3, 4])));
        let pos = random(&mut rng, &[9, 2]);
        let pv = g.constant(pos.clone());
        let grid = pair_grid(&mut g, he, hc, hs, pv).unwrap();
        assert_eq!(g.shape(grid), &[9, 10]);
        for i in 0..3 {
            for j in 0..3 {
                let e = g.constant(Tensor::vector(pos.row(i * 3 + j).to_vec()));
                let single = pair_representation(&mut g, i, j, he, hc, hs, e).unwrap();
                assert_eq!(g.value(grid).row(i * 3 + j), g.value(single).data());
            }
        }
        assert_ne!(g.value(grid).row(1), g.value(grid).row(3));
    }

    #[test]
    fn zero_output_layer_scores_one_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let head = ScoreHead::new(&mut store, "pair", 5, 3, &mut rng).unwrap();
        head.ffn.output.zero(&mut store);
        let mut g = Graph::new();
        let r = g.constant(random(&mut rng, &[36, 5]));
        let y = head.predict_grid(&mut g, &store, r, 6).unwrap();
        assert_eq!(g.shape(y), &[6, 6]);
        assert!(g.value(y).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn scores_in_open_unit_interval_and_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let head = ScoreHead::new(&mut store, "emotion", 6, 3, &mut rng).unwrap();
        let rv = random(&mut rng, &[4, 6]);
        let gold = clause_indicator(4, &[1].into());
        let mut g = Graph::new();
        let r = g.constant(rv.clone());
        let y = head.predict(&mut g, &store, r).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v > 0.0 && v < 1.0));
        let report = grad_check(
            &mut store,
            |g, s| {
                let r = g.constant(rv.clone());
                let y = head.predict(g, s, r)?;
                binary_cross_entropy(g, y, &gold, false)
            },
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn closed_form_losses() {
        let mut g = Graph::new();
        let half = g.constant(Tensor::full(&[4], 0.5));
        let gold = clause_indicator(4, &[2].into());
        let l = aux_loss(&mut g, half, half, &gold, &gold, false).unwrap();
        assert!((g.value(l).item() - 8.0 * LN_2).abs() < 1e-12);

        let grid = g.constant(Tensor::full(&[3, 3], 0.5));
        let gold = pair_indicator(3, &[(1, 0)].into());
        let l = pair_loss(&mut g, grid, &gold, false).unwrap();
        assert!((g.value(l).item() - 9.0 * LN_2).abs() < 1e-12);
        let l = pair_loss(&mut g, grid, &gold, true).unwrap();
        assert!((g.value(l).item() - LN_2).abs() < 1e-12);
    }

    #[test]
    fn perfect_scores_give_zero_loss() {
        let mut g = Graph::new();
        let gold = pair_indicator(3, &[(0, 2), (1, 1)].into());
        let y = g.constant(gold.clone());
        let l = pair_loss(&mut g, y, &gold, false).unwrap();
        assert!(g.value(l).item().abs() < 1e-10);
    }

    #[test]
    fn literal_loss_ignores_negatives() {
        let gold = clause_indicator(3, &[0].into());
        let loss = |scores: Vec<f64>, literal: bool| {
            let mut g = Graph::new();
            let y = g.constant(Tensor::vector(scores));
            let l = binary_cross_entropy(&mut g, y, &gold, literal).unwrap();
            g.value(l).item()
        };
        assert_eq!(loss(vec![0.7, 0.2, 0.4], true), loss(vec![0.7, 0.9, 0.01], true));
        assert!(loss(vec![0.7, 0.2, 0.4], false) < loss(vec![0.7, 0.9, 0.01], false));
    }

    #[test]
    fn pair_loss_falls_as_gold_score_rises() {
        let gold = pair_indicator(2, &[(0, 1)].into());
        let loss = |s: f64| {
            let mut g = Graph::new();
            let y = g.constant(Tensor::matrix(&[vec![0.3, s], vec![0.2, 0.6]]));
            let l = pair_loss(&mut g, y, &gold, false).unwrap();
            g.value(l).item()
        };
        assert!(loss(0.8) < loss(0.5));
        assert!(loss(0.5) < loss(0.1));
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let mut g = Graph::new();
        let y = g.constant(Tensor::full(&[3], 0.5));
        let gold = clause_indicator(4, &BTreeSet::new());
        assert!(matches!(aux_loss(&mut g, y, y, &gold, &gold, false), Err(AutodiffError::Shape { .. })));
    }
}
