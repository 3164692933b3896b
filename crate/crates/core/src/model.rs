//! The full network: clause encoder, feature encoder, heads and alignment.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Graph, ParamStore, Tensor, Var};
use crate::data::{Document, Vocabulary};
use crate::encoder::{ClauseEmbeddingProvider, EncoderError, PrecomputedEmbeddings, RelativePositionTable};
use crate::heads::{self, clause_indicator, pair_indicator, ScoreHead, ScoreMatrices};
use crate::ita::{self, DetachSide, ItaMode, MaskProjections};
use crate::lstm::LstmCell;
use crate::pfn::PfnCell;

/// Feature encoder variant.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    #[default]
    Pfn,
    /// One LSTM whose states serve as emotion, cause and shared features.
    Shared,
    /// Separate emotion and cause LSTMs; shared features are zero.
    Parallel,
}

impl FromStr for Encoding {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pfn" => Ok(Self::Pfn),
            "shared" => Ok(Self::Shared),
            "parallel" => Ok(Self::Parallel),
            _ => Err(format!("unknown encoding `{s}` (expected pfn, shared or parallel)")),
        }
    }
}

impl fmt::Display for Encoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Pfn => "pfn",
            Self::Shared => "shared",
            Self::Parallel => "parallel",
        })
    }
}

/// Where clause vectors come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingSource {
    #[default]
    Lookup,
    Precomputed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: usize,
    /// Clause vector width. Fixed by the file for precomputed embeddings.
    pub embed_dim: usize,
    pub dim_pos: usize,
    pub max_offset: usize,
    pub encoding: Encoding,
    pub share_gate_params: bool,
    pub embeddings: EmbeddingSource,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 300,
            embed_dim: 100,
            dim_pos: 50,
            max_offset: 10,
            encoding: Encoding::Pfn,
            share_gate_params: false,
            embeddings: EmbeddingSource::Lookup,
        }
    }
}

impl ModelConfig {
    /// Width of the head FFN hidden layer and of the alignment projections.
    pub fn head_width(&self) -> usize {
        (self.hidden / 2).max(1)
    }
}

/// How the per-document objective is assembled.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub ita: ItaMode,
    pub aux: bool,
    pub literal_loss: bool,
    pub detach_side: DetachSide,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.4,
            lambda2: 0.4,
            ita: ItaMode::Both,
            aux: true,
            literal_loss: false,
            detach_side: DetachSide::None,
        }
    }
}

impl LossConfig {
    /// The weighted total for given component values, with the same
    /// inclusion rules as [`Network::losses`].
    pub fn combine(&self, pair: f64, aux: f64, kl: f64) -> f64 {
        let mut total = pair;
        if self.aux {
            total += aux * self.lambda1;
        }
        if self.ita != ItaMode::Off {
            total += kl * self.lambda2;
        }
        total
    }
}

#[derive(Clone, Debug)]
pub enum FeatureEncoder {
    Pfn(PfnCell),
    Shared(LstmCell),
    Parallel { emotion: LstmCell, cause: LstmCell },
}

/// Emotion, cause and shared features, each `(N, hidden)`.
#[derive(Clone, Copy, Debug)]
pub struct Features {
    pub emotion: Var,
    pub cause: Var,
    pub shared: Var,
}

impl FeatureEncoder {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self, AutodiffError> {
        let (d, h) = (cfg.embed_dim, cfg.hidden);
        Ok(match cfg.encoding {
            Encoding::Pfn => Self::Pfn(PfnCell::new(store, "pfn", d, h, cfg.share_gate_params, rng)?),
            Encoding::Shared => Self::Shared(LstmCell::new(store, "lstm", d, h, rng)?),
            Encoding::Parallel => Self::Parallel {
                emotion: LstmCell::new(store, "lstm_emotion", d, h, rng)?,
                cause: LstmCell::new(store, "lstm_cause", d, h, rng)?,
            },
        })
    }

    pub fn encode(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Features, AutodiffError> {
        match self {
            Self::Pfn(cell) => {
                let f = cell.run_sequence(g, store, x)?;
                Ok(Features {
                    emotion: f.emotion,
                    cause: f.cause,
                    shared: f.shared,
                })
            }
            Self::Shared(cell) => {
                let h = cell.run_sequence(g, store, x)?;
                Ok(Features {
                    emotion: h,
                    cause: h,
                    shared: h,
                })
            }
            Self::Parallel { emotion, cause } => {
                let he = emotion.run_sequence(g, store, x)?;
                let hc = cause.run_sequence(g, store, x)?;
                let shape = g.shape(he).to_vec();
                let shared = g.constant(Tensor::zeros(&shape));
                Ok(Features {
                    emotion: he,
                    cause: hc,
                    shared,
                })
            }
        }
    }
}

/// Graph handles for one document's forward pass.
#[derive(Clone, Copy, Debug)]
pub struct DocForward {
    pub features: Features,
    pub y_e: Var,
    pub y_c: Var,
    pub y_p: Var,
    pub alpha: Var,
    pub y_tilde: Var,
}

/// Loss components and their weighted total.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub pair: Var,
    pub aux: Var,
    pub kl: Var,
    pub total: Var,
}

/// Scalar values of [`LossTerms`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub pair: f64,
    pub aux: f64,
    pub kl: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn values(&self, g: &Graph) -> LossValues {
        LossValues {
            pair: g.value(self.pair).item(),
            aux: g.value(self.aux).item(),
            kl: g.value(self.kl).item(),
            total: g.value(self.total).item(),
        }
    }
}

/// Parameter handles; pair with a [`ParamStore`] to run.
#[derive(Clone, Debug)]
pub struct Network {
    pub embeddings: ClauseEmbeddingProvider,
    pub encoder: FeatureEncoder,
    pub positions: RelativePositionTable,
    pub emotion_head: ScoreHead,
    pub cause_head: ScoreHead,
    pub pair_head: ScoreHead,
    pub mask: MaskProjections,
}

impl Network {
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, doc: &Document, dropout: f64) -> Result<DocForward, EncoderError> {
        let n = doc.len();
        let x = self.embeddings.encode_document(g, store, doc, dropout)?;
        let features = self.encoder.encode(g, store, x)?;
        let reps = heads::task_representations(g, features.emotion, features.cause, features.shared)?;
        let r_e = g.dropout(reps.emotion, dropout)?;
        let r_c = g.dropout(reps.cause, dropout)?;
        let y_e = self.emotion_head.predict(g, store, r_e)?;
        let y_c = self.cause_head.predict(g, store, r_c)?;

        let positions = self.positions.grid(g, store, n)?;
        let grid = heads::pair_grid(g, features.emotion, features.cause, features.shared, positions)?;
        let grid = g.dropout(grid, dropout)?;
        let y_p = self.pair_head.predict_grid(g, store, grid, n)?;

        let mask = self.mask.mask_scores(g, store, r_e, r_c)?;
        let y_tilde = ita::pseudo_pair_scores(g, y_e, y_c, mask.alpha)?;
        Ok(DocForward {
            features,
            y_e,
            y_c,
            y_p,
            alpha: mask.alpha,
            y_tilde,
        })
    }

    /// `L = L_pair + lambda1 * L_aux + lambda2 * L_KL`; disabled terms are
    /// left out of the sum entirely rather than added as zero.
    pub fn losses(&self, g: &mut Graph, fwd: &DocForward, doc: &Document, cfg: &LossConfig) -> Result<LossTerms, AutodiffError> {
        let n = doc.len();
        let pair = heads::pair_loss(g, fwd.y_p, &pair_indicator(n, &doc.pairs), cfg.literal_loss)?;
        let aux = heads::aux_loss(
            g,
            fwd.y_e,
            fwd.y_c,
            &clause_indicator(n, &doc.emotions),
            &clause_indicator(n, &doc.causes),
            cfg.literal_loss,
        )?;
        let (pseudo, scores) = match cfg.detach_side {
            DetachSide::None => (fwd.y_tilde, fwd.y_p),
            DetachSide::Pseudo => (g.detach(fwd.y_tilde), fwd.y_p),
            DetachSide::Pair => (fwd.y_tilde, g.detach(fwd.y_p)),
        };
        let kl = ita::kl_loss(g, pseudo, scores, cfg.ita)?;

        let mut total = pair;
        if cfg.aux {
            let weighted = g.scale(aux, cfg.lambda1);
            total = g.add(total, weighted)?;
        }
        if cfg.ita != ItaMode::Off {
            let weighted = g.scale(kl, cfg.lambda2);
            total = g.add(total, weighted)?;
        }
        Ok(LossTerms { pair, aux, kl, total })
    }
}

/// Parameters, architecture and config together.
#[derive(Clone, Debug)]
pub struct A2Net {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub net: Network,
}

impl A2Net {
    /// Seeded initialisation. `precomputed` is required when
    /// `config.embeddings` is `Precomputed`, and its width overrides
    /// `config.embed_dim`.
    pub fn new(
        mut config: ModelConfig,
        vocabulary: Vocabulary,
        precomputed: Option<PrecomputedEmbeddings>,
        seed: u64,
    ) -> Result<Self, EncoderError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let embeddings = match (config.embeddings, precomputed) {
            (EmbeddingSource::Precomputed, Some(p)) => {
                config.embed_dim = p.dim();
                ClauseEmbeddingProvider::Precomputed(p)
            }
            (EmbeddingSource::Precomputed, None) => {
                return Err(EncoderError::Format("precomputed embeddings required but none supplied".into()))
            }
            (EmbeddingSource::Lookup, _) => {
                ClauseEmbeddingProvider::trainable(&mut params, vocabulary, config.embed_dim, &mut rng)?
            }
        };
        let encoder = FeatureEncoder::new(&mut params, &config, &mut rng)?;
        let positions = RelativePositionTable::new(&mut params, config.max_offset, config.dim_pos, &mut rng)?;
        let (h, w) = (config.hidden, config.head_width());
        let emotion_head = ScoreHead::new(&mut params, "head.emotion", 2 * h, w, &mut rng)?;
        let cause_head = ScoreHead::new(&mut params, "head.cause", 2 * h, w, &mut rng)?;
        let pair_head = ScoreHead::new(&mut params, "head.pair", 2 * h + config.dim_pos, w, &mut rng)?;
        let mask = MaskProjections::new(&mut params, 2 * h, w, &mut rng)?;
        Ok(Self {
            config,
            params,
            net: Network {
                embeddings,
                encoder,
                positions,
                emotion_head,
                cause_head,
                pair_head,
                mask,
            },
        })
    }

    pub fn vocabulary(&self) -> Option<&Vocabulary> {
        match &self.net.embeddings {
            ClauseEmbeddingProvider::TrainableLookup { vocabulary, .. } => Some(vocabulary),
            ClauseEmbeddingProvider::Precomputed(_) => None,
        }
    }

    /// Eval-mode scores for one document.
    pub fn scores(&self, doc: &Document) -> Result<ScoreMatrices, EncoderError> {
        let mut g = Graph::new();
        let fwd = self.net.forward(&mut g, &self.params, doc, 0.0)?;
        Ok(ScoreMatrices {
            y_e: g.value(fwd.y_e).clone(),
            y_c: g.value(fwd.y_c).clone(),
            y_p: g.value(fwd.y_p).clone(),
        })
    }

    /// Eval-mode loss components for one document.
    pub fn evaluate_loss(&self, doc: &Document, cfg: &LossConfig) -> Result<LossValues, EncoderError> {
        let mut g = Graph::new();
        let fwd = self.net.forward(&mut g, &self.params, doc, 0.0)?;
        Ok(self.net.losses(&mut g, &fwd, doc, cfg)?.values(&g))
    }
}
