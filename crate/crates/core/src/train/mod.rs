//! Training configuration, the optimisation loop and corpus evaluation.

mod optimizer;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Graph, ParamStore};
use crate::data::Corpus;
use crate::encoder::{EncoderError, PrecomputedEmbeddings};
use crate::ita::{DetachSide, ItaMode};
use crate::metrics::{decode, Averaging, Evaluator, MetricsReport, Predictions};
use crate::model::{A2Net, EmbeddingSource, Encoding, FeatureEncoder, LossConfig, LossValues, ModelConfig};

pub use optimizer::AdamW;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("training diverged: non-finite loss at epoch {epoch}, step {step}")]
    Divergence { epoch: usize, step: usize },
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("invalid training config: {0}")]
    Config(String),
}

/// Every knob of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: usize,
    pub embed_dim: usize,
    pub dim_pos: usize,
    pub max_offset: usize,
    pub encoding: Encoding,
    pub share_gate_params: bool,
    pub lambda1: f64,
    pub lambda2: f64,
    pub ita: ItaMode,
    pub aux: bool,
    pub literal_loss: bool,
    pub detach_side: DetachSide,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout: f64,
    pub seed: u64,
    pub weight_decay: f64,
    pub threshold: f64,
    pub averaging: Averaging,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let (m, l) = (ModelConfig::default(), LossConfig::default());
        Self {
            hidden: m.hidden,
            embed_dim: m.embed_dim,
            dim_pos: m.dim_pos,
            max_offset: m.max_offset,
            encoding: m.encoding,
            share_gate_params: m.share_gate_params,
            lambda1: l.lambda1,
            lambda2: l.lambda2,
            ita: l.ita,
            aux: l.aux,
            literal_loss: l.literal_loss,
            detach_side: l.detach_side,
            learning_rate: 1e-3,
            batch_size: 4,
            epochs: 30,
            dropout: 0.1,
            seed: 0,
            weight_decay: 0.01,
            threshold: 0.5,
            averaging: Averaging::Micro,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return fail("lambda1 and lambda2 must be nonnegative");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail("weight_decay must be nonnegative");
        }
        if !(0.0..1.0).contains(&self.threshold) {
            return fail("threshold must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if self.hidden == 0 || self.embed_dim == 0 || self.dim_pos == 0 {
            return fail("hidden, embed_dim and dim_pos must be positive");
        }
        Ok(())
    }

    pub fn model_config(&self, embeddings: EmbeddingSource) -> ModelConfig {
        ModelConfig {
            hidden: self.hidden,
            embed_dim: self.embed_dim,
            dim_pos: self.dim_pos,
            max_offset: self.max_offset,
            encoding: self.encoding,
            share_gate_params: self.share_gate_params,
            embeddings,
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            ita: self.ita,
            aux: self.aux,
            literal_loss: self.literal_loss,
            detach_side: self.detach_side,
        }
    }

    /// A freshly initialised model for `corpus`.
    pub fn build_model(&self, corpus: &Corpus, embeddings: Option<PrecomputedEmbeddings>) -> Result<A2Net, TrainError> {
        self.validate()?;
        let source = if embeddings.is_some() {
            EmbeddingSource::Precomputed
        } else {
            EmbeddingSource::Lookup
        };
        Ok(A2Net::new(self.model_config(source), corpus.vocabulary.clone(), embeddings, self.seed)?)
    }
}

/// Feature encoder stack for an ablation flag.
pub fn build_ablation_encoder(
    store: &mut ParamStore,
    config: &ModelConfig,
    rng: &mut ChaCha8Rng,
) -> Result<FeatureEncoder, AutodiffError> {
    FeatureEncoder::new(store, config, rng)
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Per-document means of the training-mode loss components.
    pub loss: LossValues,
    pub dev: Option<MetricsReport>,
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    /// Best model by dev ECPE F1, or the final model without a dev set.
    pub model: A2Net,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
}

impl FitOutcome {
    /// The log as JSON lines.
    pub fn log_jsonl(&self) -> String {
        self.log
            .iter()
            .map(|l| serde_json::to_string(l).expect("plain data serializes") + "\n")
            .collect()
    }
}

/// Runs the configured number of epochs. `on_epoch` sees each log line as it
/// is produced.
pub fn fit(
    mut model: A2Net,
    train: &Corpus,
    dev: Option<&Corpus>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<FitOutcome, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let loss_cfg = cfg.loss_config();
    let mut opt = AdamW::new(cfg.learning_rate, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x05ee_df17);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = LossValues::default();
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            model.params.zero_grad();
            for &i in batch {
                let doc = &train.documents[i];
                let mut g = Graph::training(rng.gen());
                let fwd = model.net.forward(&mut g, &model.params, doc, cfg.dropout)?;
                let terms = model.net.losses(&mut g, &fwd, doc, &loss_cfg)?;
                let v = terms.values(&g);
                if !v.total.is_finite() {
                    return Err(TrainError::Divergence { epoch, step: step + 1 });
                }
                sums.pair += v.pair;
                sums.aux += v.aux;
                sums.kl += v.kl;
                sums.total += v.total;
                g.backward(terms.total, &mut model.params)?;
            }
            opt.step(&mut model.params)?;
        }
        let n = train.len() as f64;
        let loss = LossValues {
            pair: sums.pair / n,
            aux: sums.aux / n,
            kl: sums.kl / n,
            total: sums.total / n,
        };
        let dev_report = dev.map(|d| evaluate(&model, d, cfg.threshold, cfg.averaging)).transpose()?;
        if let Some(r) = &dev_report {
            if best.as_ref().is_none_or(|(f1, _, _)| r.ecpe.f1 > *f1) {
                best = Some((r.ecpe.f1, epoch, model.params.clone()));
            }
        }
        let entry = EpochLog {
            epoch,
            loss,
            dev: dev_report,
        };
        on_epoch(&entry);
        log.push(entry);
    }

    let best_epoch = match best {
        Some((_, epoch, params)) => {
            model.params = params;
            epoch
        }
        None => cfg.epochs,
    };
    Ok(FitOutcome { model, best_epoch, log })
}

/// Decoded predictions for every document, in corpus order.
pub fn predict(model: &A2Net, corpus: &Corpus, threshold: f64) -> Result<Vec<Predictions>, TrainError> {
    corpus
        .documents
        .iter()
        .map(|d| Ok(decode(&model.scores(d)?, threshold)))
        .collect()
}

pub fn evaluate(model: &A2Net, corpus: &Corpus, threshold: f64, averaging: Averaging) -> Result<MetricsReport, TrainError> {
    let mut ev = Evaluator::new(averaging);
    for (pred, doc) in predict(model, corpus, threshold)?.iter().zip(&corpus.documents) {
        ev.add(pred, doc);
    }
    Ok(ev.report())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SynthConfig};

    fn corpus(n: usize, seed: u64) -> Corpus {
        let cfg = SynthConfig {
            num_docs: n,
            vocab_size: 48,
            ..SynthConfig::default()
        };
        generate_synthetic(&cfg, seed).unwrap()
    }

    fn tiny() -> TrainConfig {
        TrainConfig {
            hidden: 8,
            embed_dim: 8,
            dim_pos: 4,
            epochs: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn defaults_and_validation() {
        let d = TrainConfig::default();
        assert_eq!((d.lambda1, d.lambda2, d.batch_size, d.hidden, d.epochs), (0.4, 0.4, 4, 300, 30));
        assert_eq!((d.dropout, d.threshold, d.learning_rate), (0.1, 0.5, 1e-3));
        d.validate().unwrap();
        for bad in [
            TrainConfig { lambda1: -0.1, ..tiny() },
            TrainConfig { dropout: 1.0, ..tiny() },
            TrainConfig { batch_size: 0, ..tiny() },
            TrainConfig { learning_rate: 0.0, ..tiny() },
        ] {
            assert!(matches!(bad.validate(), Err(TrainError::Config(_))));
        }
    }

    #[test]
    fn weighted_sum_arithmetic() {
        let l = LossConfig::default();
        assert!((l.combine(1.0, 1.0, 1.0) - 1.8).abs() < 1e-15);
        let zero = LossConfig {
            lambda1: 0.0,
            lambda2: 0.0,
            ..l
        };
        assert_eq!(zero.combine(2.5, 7.0, 3.0), 2.5);
    }

    #[test]
    fn batch_gradient_is_the_sum_of_document_gradients() {
        let c = corpus(3, 1);
        let cfg = tiny();
        let mut model = cfg.build_model(&c, None).unwrap();
        let loss_cfg = cfg.loss_config();
        let grad_of = |model: &mut A2Net, docs: &[usize]| {
            model.params.zero_grad();
            for &i in docs {
                let mut g = Graph::new();
                let fwd = model.net.forward(&mut g, &model.params, &c.documents[i], 0.0).unwrap();
                let t = model.net.losses(&mut g, &fwd, &c.documents[i], &loss_cfg).unwrap();
                g.backward(t.total, &mut model.params).unwrap();
            }
            model.params.grads()
        };
        let batch = grad_of(&mut model, &[0, 1, 2]);
        let parts: Vec<_> = (0..3).map(|i| grad_of(&mut model, &[i])).collect();
        for (k, b) in batch.iter().enumerate() {
            for (idx, &v) in b.data().iter().enumerate() {
                let s: f64 = parts.iter().map(|p| p[k].data()[idx]).sum();
                assert!((v - s).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn fit_is_deterministic_and_logs_every_epoch() {
        let c = corpus(6, 2);
        let cfg = tiny();
        let run = || {
            let model = cfg.build_model(&c, None).unwrap();
            fit(model, &c, Some(&c), &cfg, |_| {}).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.log.len(), 2);
        assert_eq!(a.log_jsonl(), b.log_jsonl());
        assert!(a.log.iter().all(|l| l.dev.is_some()));
        for l in &a.log {
            assert!((l.loss.total - (l.loss.pair + 0.4 * l.loss.aux + 0.4 * l.loss.kl)).abs() < 1e-12);
        }
    }

    #[test]
    fn best_dev_epoch_is_restored() {
        let c = corpus(6, 3);
        let cfg = TrainConfig { epochs: 4, ..tiny() };
        let out = fit(cfg.build_model(&c, None).unwrap(), &c, Some(&c), &cfg, |_| {}).unwrap();
        let best = out.log.iter().map(|l| l.dev.unwrap().ecpe.f1).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(out.log[out.best_epoch - 1].dev.unwrap().ecpe.f1, best);
        let again = evaluate(&out.model, &c, cfg.threshold, cfg.averaging).unwrap();
        assert_eq!(again.ecpe.f1, best);

        let no_dev = fit(cfg.build_model(&c, None).unwrap(), &c, None, &cfg, |_| {}).unwrap();
        assert_eq!(no_dev.best_epoch, 4);
    }

    #[test]
    fn divergence_aborts_with_location() {
        let c = corpus(4, 4);
        let cfg = tiny();
        let mut model = cfg.build_model(&c, None).unwrap();
        let id = model.params.id("head.pair.output.bias").unwrap();
        model.params.get_mut(id).value.data_mut()[0] = f64::NAN;
        let err = fit(model, &c, None, &cfg, |_| {}).unwrap_err();
        assert!(matches!(err, TrainError::Divergence { epoch: 1, step: 1 }), "{err}");
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let c = corpus(2, 5);
        let model = tiny().build_model(&c, None).unwrap();
        let empty = c.subset(&[]);
        assert!(matches!(fit(model, &empty, None, &tiny(), |_| {}), Err(TrainError::EmptyCorpus)));
    }

    #[test]
    fn first_epoch_lowers_the_loss() {
        let mut improved = 0;
        for seed in 0..5 {
            let c = corpus(16, 10 + seed);
            let cfg = TrainConfig {
                seed,
                epochs: 1,
                hidden: 16,
                embed_dim: 16,
                dropout: 0.0,
                ..TrainConfig::default()
            };
            let model = cfg.build_model(&c, None).unwrap();
            let before: f64 = c.documents.iter().map(|d| model.evaluate_loss(d, &cfg.loss_config()).unwrap().total).sum();
            let out = fit(model, &c, None, &cfg, |_| {}).unwrap();
            let after: f64 = c.documents.iter().map(|d| out.model.evaluate_loss(d, &cfg.loss_config()).unwrap().total).sum();
            improved += usize::from(after < before);
        }
        assert_eq!(improved, 5);
    }
}
