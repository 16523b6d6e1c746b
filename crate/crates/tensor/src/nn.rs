//! Layers built from tape primitives: affine maps, PReLU, layer norm, LSTM
//! and GRU cells.
//!
//! Layers only hold [`ParamId`]s; values live in a [`ParamStore`] so one
//! store can be checkpointed, optimized and shared read-only. Inputs are
//! batches shaped `batch × features`.

use rand::Rng;

use crate::error::Result;
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Uniform(−1/√fan_in, 1/√fan_in) initialization.
pub fn uniform_init(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product matches")
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Result<Self> {
        let w = store.add(format!("{name}.w"), uniform_init(rng, &[fan_in, fan_out], fan_in))?;
        let b = store.add(format!("{name}.b"), uniform_init(rng, &[fan_out], fan_in))?;
        Ok(Self { w, b, fan_in, fan_out })
    }

    /// Same shapes, all weights zero.
    pub fn zeroed(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize) -> Result<Self> {
        let w = store.add(format!("{name}.w"), Tensor::zeros(&[fan_in, fan_out]))?;
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[fan_out]))?;
        Ok(Self { w, b, fan_in, fan_out })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let y = tape.matmul(x, w)?;
        tape.add_row(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct Prelu {
    pub slope: ParamId,
}

impl Prelu {
    pub fn new(store: &mut ParamStore, name: &str) -> Result<Self> {
        let slope = store.add(format!("{name}.slope"), Tensor::scalar(0.25))?;
        Ok(Self { slope })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let a = tape.param(store, self.slope);
        tape.prelu(x, a)
    }
}

/// Per-sample normalization across features with a learned per-feature
/// gain and offset.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub offset: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        let gain = store.add(format!("{name}.gain"), Tensor::ones(&[dim]))?;
        let offset = store.add(format!("{name}.offset"), Tensor::zeros(&[dim]))?;
        Ok(Self { gain, offset, eps: 1e-5 })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gain);
        let o = tape.param(store, self.offset);
        let n = tape.normalize_rows(x, self.eps)?;
        let y = tape.mul_row(n, g)?;
        tape.add_row(y, o)
    }
}

/// Hidden and cell state of one LSTM layer.
#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

/// Standard four-gate LSTM cell without peepholes. Gate column order in
/// the fused weight matrices is input, forget, cell, output.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        let w_x = store.add(format!("{name}.w_x"), uniform_init(rng, &[input, 4 * hidden], hidden))?;
        let w_h = store.add(format!("{name}.w_h"), uniform_init(rng, &[hidden, 4 * hidden], hidden))?;
        let mut bias = uniform_init(rng, &[4 * hidden], hidden);
        // forget gate starts open
        bias.data_mut()[hidden..2 * hidden].fill(1.0);
        let b = store.add(format!("{name}.b"), bias)?;
        Ok(Self { w_x, w_h, b, input, hidden })
    }

    pub fn zero_state(&self, tape: &mut Tape, batch: usize) -> LstmState {
        let z = tape.constant(Tensor::zeros(&[batch, self.hidden]));
        LstmState { h: z, c: z }
    }

    pub fn step(&self, tape: &mut Tape, store: &ParamStore, x: Var, state: LstmState) -> Result<LstmState> {
        let h = self.hidden;
        let w_x = tape.param(store, self.w_x);
        let w_h = tape.param(store, self.w_h);
        let b = tape.param(store, self.b);
        let gx = tape.matmul(x, w_x)?;
        let gh = tape.matmul(state.h, w_h)?;
        let pre = tape.add(gx, gh)?;
        let pre = tape.add_row(pre, b)?;
        let i = tape.slice(pre, 1, 0, h)?;
        let f = tape.slice(pre, 1, h, h)?;
        let g = tape.slice(pre, 1, 2 * h, h)?;
        let o = tape.slice(pre, 1, 3 * h, h)?;
        let i = tape.sigmoid(i)?;
        let f = tape.sigmoid(f)?;
        let g = tape.tanh(g)?;
        let o = tape.sigmoid(o)?;
        let keep = tape.hadamard(f, state.c)?;
        let write = tape.hadamard(i, g)?;
        let c = tape.add(keep, write)?;
        let tc = tape.tanh(c)?;
        let h = tape.hadamard(o, tc)?;
        Ok(LstmState { h, c })
    }
}

/// Stack of LSTM layers; layer `k+1` consumes the hidden state of layer `k`.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub layers: Vec<LstmCell>,
}

impl Lstm {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        layers: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let layers = (0..layers)
            .map(|l| {
                let inp = if l == 0 { input } else { hidden };
                LstmCell::new(store, &format!("{name}.l{l}"), inp, hidden, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].hidden
    }

    pub fn zero_state(&self, tape: &mut Tape, batch: usize) -> Vec<LstmState> {
        self.layers.iter().map(|l| l.zero_state(tape, batch)).collect()
    }

    /// Advance all layers one step; returns the top layer's output.
    pub fn step(&self, tape: &mut Tape, store: &ParamStore, x: Var, state: &mut [LstmState]) -> Result<Var> {
        let mut inp = x;
        for (cell, s) in self.layers.iter().zip(state.iter_mut()) {
            *s = cell.step(tape, store, inp, *s)?;
            inp = s.h;
        }
        Ok(inp)
    }
}

/// GRU cell: r, z gates and the candidate n with the reset gate applied to
/// the recurrent projection.
#[derive(Clone, Debug)]
pub struct GruCell {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b_x: ParamId,
    pub b_h: ParamId,
    pub hidden: usize,
}

impl GruCell {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        let w_x = store.add(format!("{name}.w_x"), uniform_init(rng, &[input, 3 * hidden], hidden))?;
        let w_h = store.add(format!("{name}.w_h"), uniform_init(rng, &[hidden, 3 * hidden], hidden))?;
        let b_x = store.add(format!("{name}.b_x"), uniform_init(rng, &[3 * hidden], hidden))?;
        let b_h = store.add(format!("{name}.b_h"), uniform_init(rng, &[3 * hidden], hidden))?;
        Ok(Self { w_x, w_h, b_x, b_h, hidden })
    }

    pub fn step(&self, tape: &mut Tape, store: &ParamStore, x: Var, h_prev: Var) -> Result<Var> {
        let h = self.hidden;
        let w_x = tape.param(store, self.w_x);
        let w_h = tape.param(store, self.w_h);
        let b_x = tape.param(store, self.b_x);
        let b_h = tape.param(store, self.b_h);
        let gx = tape.matmul(x, w_x)?;
        let gx = tape.add_row(gx, b_x)?;
        let gh = tape.matmul(h_prev, w_h)?;
        let gh = tape.add_row(gh, b_h)?;
        let rz_x = tape.slice(gx, 1, 0, 2 * h)?;
        let rz_h = tape.slice(gh, 1, 0, 2 * h)?;
        let rz = tape.add(rz_x, rz_h)?;
        let rz = tape.sigmoid(rz)?;
        let r = tape.slice(rz, 1, 0, h)?;
        let z = tape.slice(rz, 1, h, h)?;
        let n_x = tape.slice(gx, 1, 2 * h, h)?;
        let n_h = tape.slice(gh, 1, 2 * h, h)?;
        let n_h = tape.hadamard(r, n_h)?;
        let n = tape.add(n_x, n_h)?;
        let n = tape.tanh(n)?;
        // h' = n + z ⊙ (h − n)
        let d = tape.sub(h_prev, n)?;
        let d = tape.hadamard(z, d)?;
        tape.add(n, d)
    }
}

#[derive(Clone, Debug)]
pub struct Gru {
    pub layers: Vec<GruCell>,
}

impl Gru {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        layers: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let layers = (0..layers)
            .map(|l| {
                let inp = if l == 0 { input } else { hidden };
                GruCell::new(store, &format!("{name}.l{l}"), inp, hidden, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }

    pub fn zero_state(&self, tape: &mut Tape, batch: usize) -> Vec<Var> {
        self.layers
            .iter()
            .map(|l| tape.constant(Tensor::zeros(&[batch, l.hidden])))
            .collect()
    }

    pub fn step(&self, tape: &mut Tape, store: &ParamStore, x: Var, state: &mut [Var]) -> Result<Var> {
        let mut inp = x;
        for (cell, h) in self.layers.iter().zip(state.iter_mut()) {
            *h = cell.step(tape, store, inp, *h)?;
            inp = *h;
        }
        Ok(inp)
    }
}
