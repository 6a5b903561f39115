use crate::autodiff::{Conv2dGeometry, ParamId, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{Builder, Ctx, Init};

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    /// Bias starts at zero; `init` applies to the weight.
    pub fn new(b: &mut Builder<'_>, name: &str, in_features: usize, out_features: usize, bias: bool, init: Init) -> Result<Self> {
        let mut s = b.scope(name);
        let weight = s.weight("weight", &[out_features, in_features], init)?;
        let bias = if bias {
            Some(s.weight("bias", &[out_features], Init::Constant(0.0))?)
        } else {
            None
        };
        Ok(Linear {
            weight,
            bias,
            in_features,
            out_features,
        })
    }

    /// He-uniform weight, for layers followed by ReLU/ELU.
    pub fn he(b: &mut Builder<'_>, name: &str, in_features: usize, out_features: usize) -> Result<Self> {
        Self::new(b, name, in_features, out_features, true, Init::HeUniform { fan_in: in_features })
    }

    /// Xavier-uniform weight.
    pub fn xavier(b: &mut Builder<'_>, name: &str, in_features: usize, out_features: usize) -> Result<Self> {
        Self::new(
            b,
            name,
            in_features,
            out_features,
            true,
            Init::XavierUniform {
                fan_in: in_features,
                fan_out: out_features,
            },
        )
    }

    pub fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let w = cx.p(self.weight);
        let b = self.bias.map(|b| cx.p(b));
        cx.g.linear(x, w, b)
    }
}

#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv1d {
    /// He-uniform weights. `bias = false` for convolutions followed by batchnorm.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        b: &mut Builder<'_>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Result<Self> {
        let mut s = b.scope(name);
        let weight = s.weight("weight", &[cout, cin, kernel], Init::HeUniform { fan_in: cin * kernel })?;
        let bias = if bias {
            Some(s.weight("bias", &[cout], Init::Constant(0.0))?)
        } else {
            None
        };
        Ok(Conv1d {
            weight,
            bias,
            kernel,
            stride,
            padding,
        })
    }

    pub fn out_len(&self, len: usize) -> Option<usize> {
        crate::autodiff::window_len(len, self.kernel, self.stride, self.padding)
    }

    pub fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let w = cx.p(self.weight);
        let b = self.bias.map(|b| cx.p(b));
        cx.g.conv1d(x, w, b, self.stride, self.padding)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub kernel: (usize, usize),
    pub geo: Conv2dGeometry,
}

impl Conv2d {
    pub fn new(
        b: &mut Builder<'_>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        geo: Conv2dGeometry,
        bias: bool,
    ) -> Result<Self> {
        if geo.groups == 0 || cin % geo.groups != 0 || cout % geo.groups != 0 {
            return Err(Error::invalid(format!("{name}: channels {cin}->{cout} not divisible by {} groups", geo.groups)));
        }
        let mut s = b.scope(name);
        let fan_in = cin / geo.groups * kernel.0 * kernel.1;
        let weight = s.weight("weight", &[cout, cin / geo.groups, kernel.0, kernel.1], Init::HeUniform { fan_in })?;
        let bias = if bias {
            Some(s.weight("bias", &[cout], Init::Constant(0.0))?)
        } else {
            None
        };
        Ok(Conv2d {
            weight,
            bias,
            kernel,
            geo,
        })
    }

    pub fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let w = cx.p(self.weight);
        let b = self.bias.map(|b| cx.p(b));
        cx.g.conv2d(x, w, b, self.geo)
    }
}

/// Batch normalization over channels with running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(b: &mut Builder<'_>, name: &str, channels: usize) -> Result<Self> {
        let mut s = b.scope(name);
        Ok(BatchNorm {
            gamma: s.weight("weight", &[channels], Init::Constant(1.0))?,
            beta: s.weight("bias", &[channels], Init::Constant(0.0))?,
            running_mean: s.buffer("running_mean", Tensor::zeros(&[channels]))?,
            running_var: s.buffer("running_var", Tensor::ones(&[channels]))?,
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    /// Batch statistics when training and the layer is not frozen; running
    /// statistics otherwise. Frozen layers never touch their buffers.
    pub fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let gamma = cx.p(self.gamma);
        let beta = cx.p(self.beta);
        let use_batch = cx.train && cx.store.is_trainable(self.gamma);
        if !use_batch {
            let rm = cx.store.value(self.running_mean).clone();
            let rv = cx.store.value(self.running_var).clone();
            return Ok(cx.g.batch_norm(x, gamma, beta, Some((&rm, &rv)), self.eps)?.0);
        }
        let (y, stats) = cx.g.batch_norm(x, gamma, beta, None, self.eps)?;
        let stats = stats.expect("train-mode batch norm returns statistics");
        let m = self.momentum;
        let unbias = if stats.count > 1 {
            stats.count as f64 / (stats.count - 1) as f64
        } else {
            1.0
        };
        let rm = cx.store.get_mut(self.running_mean).value_mut();
        for (r, v) in rm.data_mut().iter_mut().zip(&stats.mean) {
            *r = (1.0 - m) * *r + m * v;
        }
        let rv = cx.store.get_mut(self.running_var).value_mut();
        for (r, v) in rv.data_mut().iter_mut().zip(&stats.var) {
            *r = (1.0 - m) * *r + m * v * unbias;
        }
        Ok(y)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(b: &mut Builder<'_>, name: &str, dim: usize) -> Result<Self> {
        let mut s = b.scope(name);
        Ok(LayerNorm {
            gamma: s.weight("weight", &[dim], Init::Constant(1.0))?,
            beta: s.weight("bias", &[dim], Init::Constant(0.0))?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let gamma = cx.p(self.gamma);
        let beta = cx.p(self.beta);
        cx.g.layer_norm(x, gamma, beta, self.eps)
    }
}

/// Learned additive position embeddings for sequences up to `max_len`.
#[derive(Debug, Clone)]
pub struct PositionalEmbedding {
    pub table: ParamId,
    pub max_len: usize,
}

impl PositionalEmbedding {
    pub fn new(b: &mut Builder<'_>, name: &str, max_len: usize, dim: usize) -> Result<Self> {
        let mut s = b.scope(name);
        Ok(PositionalEmbedding {
            table: s.weight("weight", &[max_len, dim], Init::UniformStd(0.02))?,
            max_len,
        })
    }

    /// `x: [B, T, D]` with `T <= max_len`.
    pub fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let t = cx.g.shape(x)[1];
        if t > self.max_len {
            return Err(Error::shape(
                "positional_embedding",
                format!("sequence length {t} exceeds the {} learned positions", self.max_len),
            ));
        }
        let table = cx.p(self.table);
        let pos = cx.g.slice(table, 0, 0, t)?;
        cx.g.add(x, pos)
    }
}
