//! Layers assembled from autodiff primitives.
//!
//! Layers hold only [`ParamId`]s; values live in a [`ParamStore`] and are
//! bound into a [`Graph`] on every forward pass through a [`Ctx`].

mod attention;
mod layers;
mod rnn;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, ParamId, ParamStore, Var};
use crate::error::Result;
use crate::rng;
use crate::tensor::Tensor;

pub use attention::{MultiheadAttention, TransformerEncoderLayer};
pub use layers::{BatchNorm, Conv1d, Conv2d, LayerNorm, Linear, PositionalEmbedding};
pub use rnn::{gru_cell, lstm_cell, Rnn, RnnKind, RnnLayer, RnnOutput, RnnState};

/// Weight initialization schemes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// `U(-b, b)` with `b = sqrt(6 / fan_in)`, for weights feeding ReLU/ELU.
    HeUniform { fan_in: usize },
    /// `U(-b, b)` with `b = sqrt(6 / (fan_in + fan_out))`.
    XavierUniform { fan_in: usize, fan_out: usize },
    /// `U(-b, b)` with `b = std * sqrt(3)`.
    UniformStd(f64),
    Constant(f64),
}

impl Init {
    fn bound(self) -> Option<f64> {
        match self {
            Init::HeUniform { fan_in } => Some((6.0 / fan_in as f64).sqrt()),
            Init::XavierUniform { fan_in, fan_out } => Some((6.0 / (fan_in + fan_out) as f64).sqrt()),
            Init::UniformStd(std) => Some(std * 3f64.sqrt()),
            Init::Constant(_) => None,
        }
    }

    pub fn sample(self, shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        match self.bound() {
            None => {
                let Init::Constant(c) = self else { unreachable!() };
                Tensor::full(shape, c)
            }
            Some(b) => {
                let mut t = Tensor::zeros(shape);
                t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-b..b));
                t
            }
        }
    }
}

/// Registers named parameters under a hierarchical prefix.
///
/// Each parameter draws from its own generator keyed by `(seed, full name)`,
/// so a parameter's initial value does not depend on what else the model contains.
pub struct Builder<'a> {
    store: &'a mut ParamStore,
    seed: u64,
    prefix: String,
}

impl<'a> Builder<'a> {
    pub fn new(store: &'a mut ParamStore, seed: u64) -> Self {
        Builder {
            store,
            seed,
            prefix: String::new(),
        }
    }

    pub fn scope(&mut self, name: &str) -> Builder<'_> {
        let prefix = self.full(name);
        Builder {
            store: self.store,
            seed: self.seed,
            prefix,
        }
    }

    fn full(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    pub fn weight(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId> {
        let full = self.full(name);
        let mut r = rng::substream(self.seed, &full, 0);
        self.store.add(full, init.sample(shape, &mut r))
    }

    pub fn buffer(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        let full = self.full(name);
        self.store.add_buffer(full, value)
    }
}

/// Everything a layer needs during one forward pass.
pub struct Ctx<'a> {
    pub g: &'a Graph,
    pub store: &'a mut ParamStore,
    pub train: bool,
    pub rng: &'a mut ChaCha8Rng,
}

impl Ctx<'_> {
    pub fn p(&self, id: ParamId) -> Var {
        self.g.param(self.store, id)
    }

    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        self.g.dropout(x, p, self.train, self.rng)
    }
}
