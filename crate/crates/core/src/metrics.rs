//! Decoding and evaluation: P/R/F1 per task and cross-task consistency.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Document;
use crate::heads::ScoreMatrices;

/// Thresholded predictions for one document.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Predictions {
    pub emotions: BTreeSet<usize>,
    pub causes: BTreeSet<usize>,
    pub pairs: BTreeSet<(usize, usize)>,
}

/// Keeps every clause and pair whose score is strictly above `threshold`.
pub fn decode(scores: &ScoreMatrices, threshold: f64) -> Predictions {
    let above = |v: &[f64]| -> BTreeSet<usize> { v.iter().enumerate().filter(|(_, &s)| s > threshold).map(|(i, _)| i).collect() };
    let n = scores.y_p.rows();
    Predictions {
        emotions: above(scores.y_e.data()),
        causes: above(scores.y_c.data()),
        pairs: above(scores.y_p.data()).into_iter().map(|k| (k / n, k % n)).collect(),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf1 {
    fn from_ratios(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self { precision, recall, f1 }
    }
}

/// True positive, false positive and false negative counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn of<T: Ord>(predicted: &BTreeSet<T>, gold: &BTreeSet<T>) -> Self {
        let tp = predicted.intersection(gold).count();
        Self {
            tp,
            fp: predicted.len() - tp,
            fn_: gold.len() - tp,
        }
    }

    pub fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    /// Both sets empty scores a perfect 1; an empty side otherwise scores 0.
    pub fn prf1(&self) -> Prf1 {
        let (pred, gold) = (self.tp + self.fp, self.tp + self.fn_);
        if pred == 0 && gold == 0 {
            return Prf1 {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0,
            };
        }
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        Prf1::from_ratios(ratio(self.tp, pred), ratio(self.tp, gold))
    }
}

pub fn prf1<T: Ord>(predicted: &BTreeSet<T>, gold: &BTreeSet<T>) -> Prf1 {
    Counts::of(predicted, gold).prf1()
}

/// Numerator and denominator of one consistency rate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Agreement {
    pub agreed: usize,
    pub total: usize,
}

impl Agreement {
    pub fn add(&mut self, other: Agreement) {
        self.agreed += other.agreed;
        self.total += other.total;
    }

    /// 1.0 when there is nothing to agree with.
    pub fn rate(&self) -> f64 {
        if self.total == 0 {
            1.0
        } else {
            self.agreed as f64 / self.total as f64
        }
    }
}

/// Distinct emotion (cause) clauses of the predicted pairs, and how many of
/// them the emotion (cause) head also predicts.
pub fn consistency_counts(pred: &Predictions) -> (Agreement, Agreement) {
    let e: BTreeSet<usize> = pred.pairs.iter().map(|p| p.0).collect();
    let c: BTreeSet<usize> = pred.pairs.iter().map(|p| p.1).collect();
    (
        Agreement {
            agreed: e.intersection(&pred.emotions).count(),
            total: e.len(),
        },
        Agreement {
            agreed: c.intersection(&pred.causes).count(),
            total: c.len(),
        },
    )
}

/// `(emotion_rate, cause_rate)` for one document.
pub fn consistency_rates(pred: &Predictions) -> (f64, f64) {
    let (e, c) = consistency_counts(pred);
    (e.rate(), c.rate())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Counts pooled over the corpus, then one P/R/F1.
    #[default]
    Micro,
    /// Per-document scores, then their mean.
    Macro,
}

impl FromStr for Averaging {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "micro" => Ok(Self::Micro),
            "macro" => Ok(Self::Macro),
            _ => Err(format!("unknown averaging `{s}` (expected micro or macro)")),
        }
    }
}

impl fmt::Display for Averaging {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Micro => "micro",
            Self::Macro => "macro",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ee: Prf1,
    pub ce: Prf1,
    pub ecpe: Prf1,
    pub consistency_e: f64,
    pub consistency_c: f64,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain numbers serialize")
    }

    pub fn table(&self) -> String {
        let mut out = String::from("task   precision  recall     f1\n");
        for (name, m) in [("ee", self.ee), ("ce", self.ce), ("ecpe", self.ecpe)] {
            out.push_str(&format!("{name:<6} {:<10.4} {:<10.4} {:.4}\n", m.precision, m.recall, m.f1));
        }
        out.push_str(&format!("consistency  emotion {:.4}  cause {:.4}\n", self.consistency_e, self.consistency_c));
        out
    }
}

/// Accumulates predictions against gold documents.
#[derive(Clone, Debug, Default)]
pub struct Evaluator {
    averaging: Averaging,
    ee: Counts,
    ce: Counts,
    ecpe: Counts,
    consistency_e: Agreement,
    consistency_c: Agreement,
    per_doc: Vec<MetricsReport>,
}

impl Evaluator {
    pub fn new(averaging: Averaging) -> Self {
        Self {
            averaging,
            ..Self::default()
        }
    }

    pub fn add(&mut self, pred: &Predictions, gold: &Document) {
        let (ee, ce, ecpe) = (
            Counts::of(&pred.emotions, &gold.emotions),
            Counts::of(&pred.causes, &gold.causes),
            Counts::of(&pred.pairs, &gold.pairs),
        );
        let (ae, ac) = consistency_counts(pred);
        self.ee.add(ee);
        self.ce.add(ce);
        self.ecpe.add(ecpe);
        self.consistency_e.add(ae);
        self.consistency_c.add(ac);
        if self.averaging == Averaging::Macro {
            self.per_doc.push(MetricsReport {
                ee: ee.prf1(),
                ce: ce.prf1(),
                ecpe: ecpe.prf1(),
                consistency_e: ae.rate(),
                consistency_c: ac.rate(),
            });
        }
    }

    pub fn report(&self) -> MetricsReport {
        match self.averaging {
            Averaging::Micro => MetricsReport {
                ee: self.ee.prf1(),
                ce: self.ce.prf1(),
                ecpe: self.ecpe.prf1(),
                consistency_e: self.consistency_e.rate(),
                consistency_c: self.consistency_c.rate(),
            },
            Averaging::Macro => {
                let n = self.per_doc.len().max(1) as f64;
                let mean = |f: &dyn Fn(&MetricsReport) -> f64| self.per_doc.iter().map(f).sum::<f64>() / n;
                let mean_prf = |f: &dyn Fn(&MetricsReport) -> Prf1| Prf1 {
                    precision: mean(&|r| f(r).precision),
                    recall: mean(&|r| f(r).recall),
                    f1: mean(&|r| f(r).f1),
                };
                MetricsReport {
                    ee: mean_prf(&|r| r.ee),
                    ce: mean_prf(&|r| r.ce),
                    ecpe: mean_prf(&|r| r.ecpe),
                    consistency_e: mean(&|r| r.consistency_e),
                    consistency_c: mean(&|r| r.consistency_c),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use proptest::prelude::*;

    fn scores(n: usize, fill: f64) -> ScoreMatrices {
        ScoreMatrices {
            y_e: Tensor::full(&[n], fill),
            y_c: Tensor::full(&[n], fill),
            y_p: Tensor::full(&[n, n], fill),
        }
    }

    fn set<T: Ord + Clone>(items: &[T]) -> BTreeSet<T> {
        items.iter().cloned().collect()
    }

    #[test]
    fn decode_boundaries() {
        assert_eq!(decode(&scores(3, 0.5), 0.5), Predictions::default());
        let all = decode(&scores(3, 0.5), 0.0);
        assert_eq!(all.emotions.len(), 3);
        assert_eq!(all.pairs.len(), 9);

        let mut s = scores(8, 0.1);
        s.y_p.data_mut()[6 * 8 + 5] = 0.9;
        assert_eq!(decode(&s, 0.5).pairs, set(&[(6, 5)]));
    }

    #[test]
    fn prf1_examples() {
        let m = prf1(&set(&[(6, 5)]), &set(&[(6, 5)]));
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        let m = prf1(&set(&[(4, 3), (4, 5)]), &set(&[(4, 3)]));
        assert_eq!((m.precision, m.recall), (0.5, 1.0));
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
        let m = prf1(&BTreeSet::new(), &set(&[(0, 1)]));
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        let m = prf1::<usize>(&BTreeSet::new(), &BTreeSet::new());
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        let m = prf1(&set(&[2]), &BTreeSet::new());
        assert_eq!(m.f1, 0.0);
    }

    #[test]
    fn consistency_examples() {
        let mut p = Predictions {
            pairs: set(&[(6, 5)]),
            ..Predictions::default()
        };
        assert_eq!(consistency_rates(&p).0, 0.0);
        p.emotions = set(&[6]);
        p.causes = set(&[5]);
        assert_eq!(consistency_rates(&p), (1.0, 1.0));
        assert_eq!(consistency_rates(&Predictions::default()), (1.0, 1.0));
    }

    #[test]
    fn micro_pools_counts_and_macro_averages_documents() {
        let gold_a = Document::new(0, vec![vec!["a".into()]; 3], [0], [1], [(0, 1)]).unwrap();
        let gold_b = Document::new(1, vec![vec!["a".into()]; 3], [2], [2], [(2, 2)]).unwrap();
        let pred_a = Predictions {
            emotions: set(&[0]),
            causes: set(&[1]),
            pairs: set(&[(0, 1), (1, 1), (2, 1)]),
        };
        let pred_b = Predictions::default();

        let mut micro = Evaluator::new(Averaging::Micro);
        micro.add(&pred_a, &gold_a);
        micro.add(&pred_b, &gold_b);
        let r = micro.report();
        assert!((r.ecpe.precision - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.ecpe.recall, 0.5);
        assert!((r.consistency_e - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.consistency_c, 1.0);

        let mut macro_ = Evaluator::new(Averaging::Macro);
        macro_.add(&pred_a, &gold_a);
        macro_.add(&pred_b, &gold_b);
        let r = macro_.report();
        assert!((r.ecpe.recall - 0.5).abs() < 1e-15);
        assert!((r.ecpe.f1 - 0.25).abs() < 1e-15);
        assert!((r.consistency_e - (1.0 / 3.0 + 1.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn report_json_has_the_five_keys() {
        let v: serde_json::Value = serde_json::from_str(&MetricsReport::default().to_json()).unwrap();
        let keys: BTreeSet<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(keys, set(&["ce", "consistency_c", "consistency_e", "ecpe", "ee"]));
        assert!(MetricsReport::default().table().contains("ecpe"));
    }

    fn arb_scores() -> impl Strategy<Value = ScoreMatrices> {
        (1usize..6).prop_flat_map(|n| {
            (
                prop::collection::vec(0.0..1.0f64, n),
                prop::collection::vec(0.0..1.0f64, n),
                prop::collection::vec(0.0..1.0f64, n * n),
            )
                .prop_map(move |(e, c, p)| ScoreMatrices {
                    y_e: Tensor::vector(e),
                    y_c: Tensor::vector(c),
                    y_p: Tensor::new(vec![n, n], p).unwrap(),
                })
        })
    }

    proptest! {
        #[test]
        fn raising_the_threshold_never_adds_predictions(s in arb_scores(), lo in 0.0..1.0f64, gap in 0.0..1.0f64) {
            let (a, b) = (decode(&s, lo), decode(&s, lo + gap));
            prop_assert!(b.emotions.is_subset(&a.emotions));
            prop_assert!(b.causes.is_subset(&a.causes));
            prop_assert!(b.pairs.is_subset(&a.pairs));
        }

        #[test]
        fn prf1_is_invariant_under_relabeling(
            pred in prop::collection::btree_set(0usize..20, 0..10),
            gold in prop::collection::btree_set(0usize..20, 0..10),
            shift in 1usize..50,
        ) {
            let relabel = |s: &BTreeSet<usize>| s.iter().map(|v| (v * 7 + shift) % 140).collect::<BTreeSet<_>>();
            prop_assert_eq!(prf1(&pred, &gold), prf1(&relabel(&pred), &relabel(&gold)));
        }

        #[test]
        fn extra_emotions_never_lower_the_rate(
            pairs in prop::collection::btree_set((0usize..6, 0usize..6), 0..8),
            emotions in prop::collection::btree_set(0usize..6, 0..6),
            extra in 0usize..6,
        ) {
            let base = Predictions { emotions: emotions.clone(), causes: BTreeSet::new(), pairs };
            let mut more = base.clone();
            more.emotions.insert(extra);
            prop_assert!(consistency_rates(&more).0 >= consistency_rates(&base).0);
        }
    }
}
