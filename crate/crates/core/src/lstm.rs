//! Plain LSTM, the recurrent baseline for the shared and parallel encodings.

use rand::Rng;

use crate::autodiff::{AutodiffError, Graph, ParamStore, Tensor, Var};
use crate::nn::Linear;
use crate::pfn::stack_rows;

#[derive(Clone, Debug)]
pub struct LstmCell {
    pub input_dim: usize,
    pub hidden: usize,
    input_gate: Linear,
    forget_gate: Linear,
    output_gate: Linear,
    candidate: Linear,
}

impl LstmCell {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        let xh = input_dim + hidden;
        Ok(Self {
            input_dim,
            hidden,
            input_gate: Linear::new(store, &format!("{name}.input_gate"), xh, hidden, rng)?,
            forget_gate: Linear::new(store, &format!("{name}.forget_gate"), xh, hidden, rng)?,
            output_gate: Linear::new(store, &format!("{name}.output_gate"), xh, hidden, rng)?,
            candidate: Linear::new(store, &format!("{name}.candidate"), xh, hidden, rng)?,
        })
    }

    /// Returns `(h_next, c_next)`.
    pub fn step(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        h_prev: Var,
        c_prev: Var,
    ) -> Result<(Var, Var), AutodiffError> {
        let xh = g.concat(&[x, h_prev])?;
        let i = self.input_gate.forward(g, store, xh)?;
        let i = g.sigmoid(i);
        let f = self.forget_gate.forward(g, store, xh)?;
        let f = g.sigmoid(f);
        let o = self.output_gate.forward(g, store, xh)?;
        let o = g.sigmoid(o);
        let cand = self.candidate.forward(g, store, xh)?;
        let cand = g.tanh(cand);

        let keep = g.mul(f, c_prev)?;
        let write = g.mul(i, cand)?;
        let c = g.add(keep, write)?;
        let tc = g.tanh(c);
        let h = g.mul(o, tc)?;
        Ok((h, c))
    }

    /// Hidden states for every row of `x`, stacked to `(N, hidden)`.
    pub fn run_sequence(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, AutodiffError> {
        let n = g.shape(x)[0];
        let mut h = g.constant(Tensor::zeros(&[1, self.hidden]));
        let mut c = g.constant(Tensor::zeros(&[1, self.hidden]));
        let mut out = Vec::with_capacity(n);
        for t in 0..n {
            let xt = g.gather_rows(x, &[t])?;
            (h, c) = self.step(g, store, xt, h, c)?;
            out.push(h);
        }
        stack_rows(g, &out)
    }
}
