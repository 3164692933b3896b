//! Partition filter recurrent cell.
//!
//! Each step splits the cell update into an emotion partition, a cause
//! partition and a shared interaction partition. Two monotone `cummax`
//! gates (a softmax followed by a running sum over the hidden axis) decide
//! how much of each hidden unit belongs to each task; their overlap becomes
//! the shared partition.

use rand::Rng;

use crate::autodiff::{AutodiffError, Graph, ParamStore, Tensor, Var};
use crate::nn::Linear;

/// Which gate family to compute.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GateFamily {
    Forget,
    Input,
}

/// Task-specific and shared partitions of a gate pair.
#[derive(Clone, Copy, Debug)]
pub struct Partition {
    pub emotion: Var,
    pub cause: Var,
    pub shared: Var,
}

/// Every intermediate of one step, for inspection.
#[derive(Clone, Copy, Debug)]
pub struct StepGates {
    pub forget_emotion_gate: Var,
    pub forget_cause_gate: Var,
    pub input_emotion_gate: Var,
    pub input_cause_gate: Var,
    pub forget: Partition,
    pub input: Partition,
}

#[derive(Clone, Copy, Debug)]
pub struct PfnStepOutput {
    pub h_emotion: Var,
    pub h_cause: Var,
    pub h_shared: Var,
    pub h_next: Var,
    pub c_next: Var,
    pub gates: StepGates,
}

/// Stacked per-clause features, each `(N, hidden)`.
#[derive(Clone, Copy, Debug)]
pub struct TaskFeatures {
    pub emotion: Var,
    pub cause: Var,
    pub shared: Var,
}

#[derive(Clone, Debug)]
pub struct PfnCell {
    pub input_dim: usize,
    pub hidden: usize,
    emotion_forget: Linear,
    cause_forget: Linear,
    emotion_input: Linear,
    cause_input: Linear,
    candidate: Linear,
    state: Linear,
}

impl PfnCell {
    /// With `share_gate_params` the input gates reuse the forget-gate maps.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden: usize,
        share_gate_params: bool,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        let xh = input_dim + hidden;
        let emotion_forget = Linear::new(store, &format!("{name}.emotion_forget"), xh, hidden, rng)?;
        let cause_forget = Linear::new(store, &format!("{name}.cause_forget"), xh, hidden, rng)?;
        let (emotion_input, cause_input) = if share_gate_params {
            (emotion_forget, cause_forget)
        } else {
            (
                Linear::new(store, &format!("{name}.emotion_input"), xh, hidden, rng)?,
                Linear::new(store, &format!("{name}.cause_input"), xh, hidden, rng)?,
            )
        };
        Ok(Self {
            input_dim,
            hidden,
            emotion_forget,
            cause_forget,
            emotion_input,
            cause_input,
            candidate: Linear::new(store, &format!("{name}.candidate"), xh, hidden, rng)?,
            state: Linear::new(store, &format!("{name}.state"), 3 * hidden, hidden, rng)?,
        })
    }

    pub fn gate_maps(&self, which: GateFamily) -> (Linear, Linear) {
        match which {
            GateFamily::Forget => (self.emotion_forget, self.cause_forget),
            GateFamily::Input => (self.emotion_input, self.cause_input),
        }
    }

    /// `(g_e, g_c)` with `g_e = cummax(L_e [x; h])` and `g_c = 1 - cummax(L_c [x; h])`.
    pub fn compute_gates(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        h_prev: Var,
        which: GateFamily,
    ) -> Result<(Var, Var), AutodiffError> {
        let xh = g.concat(&[x, h_prev])?;
        self.gates_from(g, store, xh, which)
    }

    fn gates_from(&self, g: &mut Graph, store: &ParamStore, xh: Var, which: GateFamily) -> Result<(Var, Var), AutodiffError> {
        let (emotion, cause) = self.gate_maps(which);
        let le = emotion.forward(g, store, xh)?;
        let ge = cummax(g, le)?;
        let lc = cause.forward(g, store, xh)?;
        let cc = cummax(g, lc)?;
        let gc = g.one_minus(cc);
        Ok((ge, gc))
    }

    pub fn cell_step(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        h_prev: Var,
        c_prev: Var,
    ) -> Result<PfnStepOutput, AutodiffError> {
        let xh = g.concat(&[x, h_prev])?;
        let (fe, fc) = self.gates_from(g, store, xh, GateFamily::Forget)?;
        let (ie, ic) = self.gates_from(g, store, xh, GateFamily::Input)?;
        let forget = partition(g, fe, fc)?;
        let input = partition(g, ie, ic)?;

        let cand = self.candidate.forward(g, store, xh)?;
        let cand = g.tanh(cand);
        let states = partition_states(g, &forget, &input, c_prev, cand)?;
        let (p_emotion, p_cause, p_shared) = (states.emotion, states.cause, states.shared);

        let h_shared = g.tanh(p_shared);
        let h_emotion = g.tanh(p_emotion);
        let h_cause = g.tanh(p_cause);

        let all = g.concat(&[p_emotion, p_shared, p_cause])?;
        let c_next = self.state.forward(g, store, all)?;
        let h_next = g.tanh(c_next);
        Ok(PfnStepOutput {
            h_emotion,
            h_cause,
            h_shared,
            h_next,
            c_next,
            gates: StepGates {
                forget_emotion_gate: fe,
                forget_cause_gate: fc,
                input_emotion_gate: ie,
                input_cause_gate: ic,
                forget,
                input,
            },
        })
    }

    /// Left-to-right recurrence over the rows of `x` (`(N, input_dim)`),
    /// starting from zero state.
    pub fn run_sequence(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<TaskFeatures, AutodiffError> {
        let n = g.shape(x)[0];
        let mut h = g.constant(Tensor::zeros(&[1, self.hidden]));
        let mut c = g.constant(Tensor::zeros(&[1, self.hidden]));
        let (mut he, mut hc, mut hs) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for i in 0..n {
            let xi = g.gather_rows(x, &[i])?;
            let step = self.cell_step(g, store, xi, h, c)?;
            he.push(step.h_emotion);
            hc.push(step.h_cause);
            hs.push(step.h_shared);
            h = step.h_next;
            c = step.c_next;
        }
        Ok(TaskFeatures {
            emotion: stack_rows(g, &he)?,
            cause: stack_rows(g, &hc)?,
            shared: stack_rows(g, &hs)?,
        })
    }
}

/// `cumsum(softmax(x))` over the last axis, clamped to `[0, 1]` so roundoff
/// in the softmax total cannot push the partitions below zero.
pub fn cummax(g: &mut Graph, x: Var) -> Result<Var, AutodiffError> {
    let s = g.softmax(x);
    let c = g.cumsum(s);
    g.clamp(c, 0.0, 1.0)
}

/// `f_s = g_e * g_c`, `f_e = g_e - f_s`, `f_c = g_c - f_s`.
pub fn partition(g: &mut Graph, gate_emotion: Var, gate_cause: Var) -> Result<Partition, AutodiffError> {
    let shared = g.mul(gate_emotion, gate_cause)?;
    let emotion = g.sub(gate_emotion, shared)?;
    let cause = g.sub(gate_cause, shared)?;
    Ok(Partition { emotion, cause, shared })
}

/// `p = f * c_prev + o * candidate` for each of the three partitions.
pub fn partition_states(
    g: &mut Graph,
    forget: &Partition,
    input: &Partition,
    c_prev: Var,
    candidate: Var,
) -> Result<Partition, AutodiffError> {
    let mut mix = |f: Var, o: Var| -> Result<Var, AutodiffError> {
        let history = g.mul(f, c_prev)?;
        let current = g.mul(o, candidate)?;
        g.add(history, current)
    };
    Ok(Partition {
        emotion: mix(forget.emotion, input.emotion)?,
        cause: mix(forget.cause, input.cause)?,
        shared: mix(forget.shared, input.shared)?,
    })
}

/// Stacks `(1, w)` rows into `(n, w)`.
pub(crate) fn stack_rows(g: &mut Graph, rows: &[Var]) -> Result<Var, AutodiffError> {
    let w = g.value(rows[0]).last_dim();
    let flat = g.concat(rows)?;
    g.reshape(flat, &[rows.len(), w])
}
