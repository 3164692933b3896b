//! Inter-task alignment.
//!
//! Emotion and cause scores are combined into pseudo pair scores
//! `y~_ij = alpha_ij * sqrt(y_e[i] * y_c[j])`, where `alpha` is a row-softmax
//! soft mask over scaled dot products of projected clause representations.
//! A KL penalty then pulls the pair head and the pseudo scores together.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Graph, ParamStore, Var};
use crate::nn::Ffn;

/// Which alignment terms enter the loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItaMode {
    #[default]
    Both,
    /// Pair scores aligned to the pseudo scores: `y~ log(y~ / y)`.
    P2e,
    /// Pseudo scores aligned to the pair scores: `y log(y / y~)`.
    E2p,
    Off,
}

impl FromStr for ItaMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "both" => Ok(Self::Both),
            "p2e" => Ok(Self::P2e),
            "e2p" => Ok(Self::E2p),
            "off" => Ok(Self::Off),
            _ => Err(format!("unknown ita mode `{s}` (expected both, p2e, e2p or off)")),
        }
    }
}

impl fmt::Display for ItaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Both => "both",
            Self::P2e => "p2e",
            Self::E2p => "e2p",
            Self::Off => "off",
        })
    }
}

/// Blocks gradient through one side of the KL term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetachSide {
    #[default]
    None,
    Pseudo,
    Pair,
}

impl FromStr for DetachSide {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(Self::None),
            "pseudo" => Ok(Self::Pseudo),
            "pair" => Ok(Self::Pair),
            _ => Err(format!("unknown detach side `{s}` (expected none, pseudo or pair)")),
        }
    }
}

impl fmt::Display for DetachSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::Pseudo => "pseudo",
            Self::Pair => "pair",
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MaskProjections {
    pub emotion: Ffn,
    pub cause: Ffn,
    pub dim: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct SoftMask {
    /// `(N, N)` scaled dot products.
    pub logits: Var,
    /// Row-softmax of `logits`.
    pub alpha: Var,
}

impl MaskProjections {
    pub fn new<R: Rng>(store: &mut ParamStore, in_dim: usize, dim: usize, rng: &mut R) -> Result<Self, AutodiffError> {
        Ok(Self {
            emotion: Ffn::new(store, "ita.emotion_projection", in_dim, dim, dim, rng)?,
            cause: Ffn::new(store, "ita.cause_projection", in_dim, dim, dim, rng)?,
            dim,
        })
    }

    /// `t_ij = v_e[i] . v_c[j] / sqrt(d)`, softmax over `j`.
    pub fn mask_scores(&self, g: &mut Graph, store: &ParamStore, r_e: Var, r_c: Var) -> Result<SoftMask, AutodiffError> {
        let ve = self.emotion.forward(g, store, r_e)?;
        let vc = self.cause.forward(g, store, r_c)?;
        soft_mask(g, ve, vc, self.dim)
    }
}

/// Soft mask from already projected `(N, d)` matrices.
pub fn soft_mask(g: &mut Graph, v_e: Var, v_c: Var, dim: usize) -> Result<SoftMask, AutodiffError> {
    let vct = g.transpose(v_c)?;
    let dots = g.matmul(v_e, vct)?;
    let logits = g.scale(dots, 1.0 / (dim as f64).sqrt());
    let alpha = g.softmax(logits);
    Ok(SoftMask { logits, alpha })
}

/// `alpha_ij * sqrt(y_e[i] * y_c[j])`.
pub fn pseudo_pair_scores(g: &mut Graph, y_e: Var, y_c: Var, alpha: Var) -> Result<Var, AutodiffError> {
    let n = g.value(y_e).len();
    let m = g.value(y_c).len();
    let col = g.reshape(y_e, &[n, 1])?;
    let row = g.reshape(y_c, &[1, m])?;
    let outer = g.matmul(col, row)?;
    let root = g.sqrt(outer)?;
    g.mul(alpha, root)
}

/// Cellwise KL terms between the pseudo grid and the pair grid, halved and
/// summed. `Off` yields a constant zero.
pub fn kl_loss(g: &mut Graph, y_tilde: Var, y_p: Var, mode: ItaMode) -> Result<Var, AutodiffError> {
    if g.shape(y_tilde) != g.shape(y_p) {
        return Err(AutodiffError::Shape {
            op: "kl_loss",
            shapes: vec![g.shape(y_tilde).to_vec(), g.shape(y_p).to_vec()],
        });
    }
    if mode == ItaMode::Off {
        return Ok(g.constant(crate::autodiff::Tensor::scalar(0.0)));
    }
    let log_t = g.log(y_tilde)?;
    let log_p = g.log(y_p)?;
    let t_over_p = g.sub(log_t, log_p)?;
    let terms = match mode {
        ItaMode::P2e => g.mul(y_tilde, t_over_p)?,
        ItaMode::E2p => {
            let p_over_t = g.scale(t_over_p, -1.0);
            g.mul(y_p, p_over_t)?
        }
        // y~ log(y~/y) + y log(y/y~) = (y~ - y)(log y~ - log y)
        _ => {
            let diff = g.sub(y_tilde, y_p)?;
            g.mul(diff, t_over_p)?
        }
    };
    let total = g.sum(terms);
    Ok(g.scale(total, 0.5))
}
