//! GRU and LSTM cells and multi-layer sequence unrolling.
//!
//! Gate layouts follow the common convention: GRU rows are `[reset, update,
//! new]`, LSTM rows are `[input, forget, cell, output]`.
//!
//! GRU:  `r = σ(Wx_r + Uh_r)`, `z = σ(Wx_z + Uh_z)`, `n = tanh(Wx_n + r ∘ Uh_n)`,
//! `h' = (1 - z) ∘ n + z ∘ h`.
//!
//! LSTM: `c' = f ∘ c + i ∘ g`, `h' = o ∘ tanh(c')`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamId, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{Builder, Ctx, Init};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RnnKind {
    Gru,
    Lstm,
}

impl RnnKind {
    fn gates(self) -> usize {
        match self {
            RnnKind::Gru => 3,
            RnnKind::Lstm => 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RnnLayer {
    pub kind: RnnKind,
    pub input_size: usize,
    pub hidden_size: usize,
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
}

/// Per-layer recurrent state. `cell` is only present for LSTMs.
#[derive(Debug, Clone, Copy)]
pub struct RnnState {
    pub hidden: Var,
    pub cell: Option<Var>,
}

pub struct RnnOutput {
    /// `[B, T, H]` outputs of the top layer.
    pub outputs: Var,
    /// Final state of every layer, bottom first.
    pub final_states: Vec<RnnState>,
}

fn split(g: &Graph, x: Var, parts: usize, width: usize) -> Result<Vec<Var>> {
    (0..parts).map(|k| g.slice(x, 1, k * width, (k + 1) * width)).collect()
}

/// One GRU step from precomputed projections `gi = W x + b_ih` and `gh = U h + b_hh`, both `[B, 3H]`.
fn gru_update(g: &Graph, gi: Var, gh: Var, h: Var, hidden: usize) -> Result<Var> {
    let i = split(g, gi, 3, hidden)?;
    let hh = split(g, gh, 3, hidden)?;
    let r = g.sigmoid(g.add(i[0], hh[0])?);
    let z = g.sigmoid(g.add(i[1], hh[1])?);
    let n = g.tanh(g.add(i[2], g.mul(r, hh[2])?)?);
    // (1 - z) n + z h = n + z (h - n)
    g.add(n, g.mul(z, g.sub(h, n)?)?)
}

/// One LSTM step from precomputed projections, both `[B, 4H]`.
fn lstm_update(g: &Graph, gi: Var, gh: Var, h: Var, c: Var, hidden: usize) -> Result<(Var, Var)> {
    let _ = h;
    let pre = g.add(gi, gh)?;
    let p = split(g, pre, 4, hidden)?;
    let i = g.sigmoid(p[0]);
    let f = g.sigmoid(p[1]);
    let gg = g.tanh(p[2]);
    let o = g.sigmoid(p[3]);
    let c2 = g.add(g.mul(f, c)?, g.mul(i, gg)?)?;
    let h2 = g.mul(o, g.tanh(c2))?;
    Ok((h2, c2))
}

fn check_step(g: &Graph, layer: &RnnLayer, x: Var, h: Var) -> Result<()> {
    let xs = g.shape(x);
    let hs = g.shape(h);
    if xs.len() != 2 || xs[1] != layer.input_size {
        return Err(Error::shape("rnn_cell", format!("input {xs:?}, cell expects [B, {}]", layer.input_size)));
    }
    if hs != [xs[0], layer.hidden_size] {
        return Err(Error::shape("rnn_cell", format!("state {hs:?}, cell expects [{}, {}]", xs[0], layer.hidden_size)));
    }
    Ok(())
}

/// Single GRU step: `x: [B, in]`, `h: [B, H]` to the next `[B, H]`.
pub fn gru_cell(cx: &mut Ctx<'_>, layer: &RnnLayer, x: Var, h: Var) -> Result<Var> {
    if layer.kind != RnnKind::Gru {
        return Err(Error::invalid("gru_cell called with an LSTM layer"));
    }
    check_step(cx.g, layer, x, h)?;
    let gi = cx.g.linear(x, cx.p(layer.w_ih), Some(cx.p(layer.b_ih)))?;
    let gh = cx.g.linear(h, cx.p(layer.w_hh), Some(cx.p(layer.b_hh)))?;
    gru_update(cx.g, gi, gh, h, layer.hidden_size)
}

/// Single LSTM step returning `(h', c')`.
pub fn lstm_cell(cx: &mut Ctx<'_>, layer: &RnnLayer, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
    if layer.kind != RnnKind::Lstm {
        return Err(Error::invalid("lstm_cell called with a GRU layer"));
    }
    check_step(cx.g, layer, x, h)?;
    if cx.g.shape(c) != cx.g.shape(h) {
        return Err(Error::shape("lstm_cell", format!("cell state {:?} vs hidden {:?}", cx.g.shape(c), cx.g.shape(h))));
    }
    let gi = cx.g.linear(x, cx.p(layer.w_ih), Some(cx.p(layer.b_ih)))?;
    let gh = cx.g.linear(h, cx.p(layer.w_hh), Some(cx.p(layer.b_hh)))?;
    lstm_update(cx.g, gi, gh, h, c, layer.hidden_size)
}

impl RnnLayer {
    /// Xavier-uniform weights, zero biases.
    pub fn new(b: &mut Builder<'_>, name: &str, kind: RnnKind, input_size: usize, hidden_size: usize) -> Result<Self> {
        let gates = kind.gates() * hidden_size;
        let mut s = b.scope(name);
        Ok(RnnLayer {
            kind,
            input_size,
            hidden_size,
            w_ih: s.weight(
                "weight_ih",
                &[gates, input_size],
                Init::XavierUniform {
                    fan_in: input_size,
                    fan_out: gates,
                },
            )?,
            w_hh: s.weight(
                "weight_hh",
                &[gates, hidden_size],
                Init::XavierUniform {
                    fan_in: hidden_size,
                    fan_out: gates,
                },
            )?,
            b_ih: s.weight("bias_ih", &[gates], Init::Constant(0.0))?,
            b_hh: s.weight("bias_hh", &[gates], Init::Constant(0.0))?,
        })
    }

    /// Runs the layer over `x: [B, T, in]`.
    fn unroll(&self, cx: &mut Ctx<'_>, x: Var, init: Option<RnnState>) -> Result<(Var, RnnState)> {
        let s = cx.g.shape(x);
        let (batch, steps) = (s[0], s[1]);
        let h_dim = self.hidden_size;
        let zeros = || cx.g.constant(Tensor::zeros(&[batch, h_dim]));
        let mut state = match init {
            Some(st) => st,
            None => RnnState {
                hidden: zeros(),
                cell: (self.kind == RnnKind::Lstm).then(zeros),
            },
        };
        if cx.g.shape(state.hidden) != [batch, h_dim] {
            return Err(Error::shape(
                "rnn",
                format!("initial state {:?}, layer expects [{}, {}]", cx.g.shape(state.hidden), batch, h_dim),
            ));
        }
        let gw = self.kind.gates() * h_dim;
        // input projections for all steps at once
        let gi_all = cx.g.linear(x, cx.p(self.w_ih), Some(cx.p(self.b_ih)))?;
        let w_hh = cx.p(self.w_hh);
        let b_hh = cx.p(self.b_hh);
        let mut outs = Vec::with_capacity(steps);
        for t in 0..steps {
            let gi = cx.g.reshape(cx.g.slice(gi_all, 1, t, t + 1)?, &[batch, gw])?;
            let gh = cx.g.linear(state.hidden, w_hh, Some(b_hh))?;
            state = match self.kind {
                RnnKind::Gru => RnnState {
                    hidden: gru_update(cx.g, gi, gh, state.hidden, h_dim)?,
                    cell: None,
                },
                RnnKind::Lstm => {
                    let c = state.cell.ok_or_else(|| Error::invalid("LSTM state without a cell"))?;
                    let (h, c) = lstm_update(cx.g, gi, gh, state.hidden, c, h_dim)?;
                    RnnState { hidden: h, cell: Some(c) }
                }
            };
            outs.push(cx.g.reshape(state.hidden, &[batch, 1, h_dim])?);
        }
        Ok((cx.g.concat(&outs, 1)?, state))
    }
}

/// Stack of recurrent layers with a shared hidden size.
#[derive(Debug, Clone)]
pub struct Rnn {
    pub layers: Vec<RnnLayer>,
}

impl Rnn {
    pub fn new(b: &mut Builder<'_>, name: &str, kind: RnnKind, input_size: usize, hidden: &[usize]) -> Result<Self> {
        if hidden.is_empty() {
            return Err(Error::invalid("recurrent stack needs at least one layer"));
        }
        if hidden.iter().any(|&h| h != hidden[0]) {
            return Err(Error::invalid(format!("stacked recurrent layers must share a hidden size, got {hidden:?}")));
        }
        let mut s = b.scope(name);
        let mut layers = Vec::with_capacity(hidden.len());
        let mut input = input_size;
        for (i, &h) in hidden.iter().enumerate() {
            layers.push(RnnLayer::new(&mut s, &format!("l{i}"), kind, input, h)?);
            input = h;
        }
        Self::from_layers(layers)
    }

    /// Validates that each layer consumes the previous layer's hidden state.
    pub fn from_layers(layers: Vec<RnnLayer>) -> Result<Self> {
        for pair in layers.windows(2) {
            if pair[1].input_size != pair[0].hidden_size || pair[1].hidden_size != pair[0].hidden_size {
                return Err(Error::invalid(format!(
                    "stacked layer expects input {} / hidden {}, previous layer has hidden {}",
                    pair[1].input_size, pair[1].hidden_size, pair[0].hidden_size
                )));
            }
            if pair[1].kind != pair[0].kind {
                return Err(Error::invalid("stacked layers mix GRU and LSTM"));
            }
        }
        Ok(Rnn { layers })
    }

    pub fn hidden_size(&self) -> usize {
        self.layers[0].hidden_size
    }

    /// `x: [B, T, in]`. Zero initial states when `init` is `None`.
    pub fn forward(&self, cx: &mut Ctx<'_>, x: Var, init: Option<&[RnnState]>) -> Result<RnnOutput> {
        let s = cx.g.shape(x);
        if s.len() != 3 || s[2] != self.layers[0].input_size {
            return Err(Error::shape("rnn", format!("input {s:?}, expected [B, T, {}]", self.layers[0].input_size)));
        }
        if let Some(init) = init {
            if init.len() != self.layers.len() {
                return Err(Error::invalid(format!("{} initial states for {} layers", init.len(), self.layers.len())));
            }
        }
        let mut h = x;
        let mut finals = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let (out, st) = layer.unroll(cx, h, init.map(|v| v[i]))?;
            finals.push(st);
            h = out;
        }
        Ok(RnnOutput {
            outputs: h,
            final_states: finals,
        })
    }
}
