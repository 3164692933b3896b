//! Affine layers and two-layer feed-forward blocks.

use rand::Rng;

use crate::autodiff::{AutodiffError, Graph, ParamId, ParamStore, Tensor, Var};

/// `y = x W^T + b` with `W` of shape `(out, in)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Glorot-uniform weight, zero bias. Parameters are named `{name}.weight`
    /// and `{name}.bias`.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        let weight = store.add_glorot(format!("{name}.weight"), out_dim, in_dim, rng)?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]))?;
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, AutodiffError> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.linear(x, w, b)
    }

    /// Sets weight and bias to zero.
    pub fn zero(&self, store: &mut ParamStore) {
        store.get_mut(self.weight).value.data_mut().fill(0.0);
        store.get_mut(self.bias).value.data_mut().fill(0.0);
    }
}

/// `affine -> tanh -> affine`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ffn {
    pub hidden: Linear,
    pub output: Linear,
}

impl Ffn {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        hidden_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        Ok(Self {
            hidden: Linear::new(store, &format!("{name}.hidden"), in_dim, hidden_dim, rng)?,
            output: Linear::new(store, &format!("{name}.output"), hidden_dim, out_dim, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, AutodiffError> {
        let h = self.hidden.forward(g, store, x)?;
        let h = g.tanh(h);
        self.output.forward(g, store, h)
    }
}
