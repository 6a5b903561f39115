use crate::autodiff::Var;
use crate::error::Result;
use crate::nn::{Builder, Conv1d, Ctx, Linear, MultiheadAttention, PositionalEmbedding, Rnn, RnnKind, TransformerEncoderLayer};
use crate::signal::LEADS;

use super::resnet::ResNet18Backbone;
use super::{valid_len, HyperParams, Network};

/// Largest `l` with `len(l) <= cap`, assuming `len` is non-decreasing.
fn max_input(len: impl Fn(usize) -> Option<usize>, cap: usize) -> usize {
    let fits = |l: usize| len(l).is_none_or(|t| t <= cap);
    let (mut lo, mut hi) = (1usize, 1usize << 40);
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if fits(mid) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    lo
}

/// ResNet18 feature map read as a sequence by a stacked GRU or LSTM.
#[derive(Debug, Clone)]
pub struct Crnn {
    backbone: ResNet18Backbone,
    rnn: Rnn,
    dropout: f64,
}

impl Crnn {
    pub fn new(b: &mut Builder<'_>, h: &HyperParams, kind: RnnKind, dropout: f64) -> Result<Self> {
        let backbone = ResNet18Backbone::new(b, "backbone", h)?;
        let rnn = Rnn::new(b, "rnn", kind, backbone.channels(), &vec![h.hidden; h.rnn_layers])?;
        Ok(Crnn { backbone, rnn, dropout })
    }

    pub fn out_features(&self) -> usize {
        self.rnn.hidden_size()
    }
}

impl Network for Crnn {
    fn features(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let seq = self.backbone.sequence(cx, x)?;
        let out = self.rnn.forward(cx, seq, None)?;
        let last = out.final_states.last().expect("at least one recurrent layer").hidden;
        cx.dropout(last, self.dropout)
    }

    fn feature_len(&self, l: usize) -> Option<usize> {
        self.backbone.out_len(l)
    }
}

/// Projects backbone channels to `embed` when they differ.
fn projection(b: &mut Builder<'_>, channels: usize, embed: usize) -> Result<Option<Linear>> {
    (channels != embed).then(|| Linear::xavier(b, "proj", channels, embed)).transpose()
}

/// ResNet18 features, one multihead self-attention layer, mean over positions.
#[derive(Debug, Clone)]
pub struct AttResNet {
    backbone: ResNet18Backbone,
    proj: Option<Linear>,
    attn: MultiheadAttention,
    embed: usize,
    dropout: f64,
}

impl AttResNet {
    pub fn new(b: &mut Builder<'_>, h: &HyperParams, dropout: f64) -> Result<Self> {
        let backbone = ResNet18Backbone::new(b, "backbone", h)?;
        let proj = projection(b, backbone.channels(), h.embed)?;
        let attn = MultiheadAttention::new(b, "attn", h.embed, h.heads, dropout)?;
        Ok(AttResNet {
            backbone,
            proj,
            attn,
            embed: h.embed,
            dropout,
        })
    }

    pub fn out_features(&self) -> usize {
        self.embed
    }
}

impl Network for AttResNet {
    fn features(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let mut seq = self.backbone.sequence(cx, x)?;
        if let Some(p) = &self.proj {
            seq = p.forward(cx, seq)?;
        }
        let a = self.attn.forward(cx, seq)?;
        let pooled = cx.g.mean_axis(a, 1)?;
        cx.dropout(pooled, self.dropout)
    }

    fn feature_len(&self, l: usize) -> Option<usize> {
        self.backbone.out_len(l)
    }
}

#[derive(Debug, Clone)]
struct Encoder {
    pos: PositionalEmbedding,
    layers: Vec<TransformerEncoderLayer>,
}

impl Encoder {
    fn new(b: &mut Builder<'_>, h: &HyperParams, dropout: f64) -> Result<Self> {
        let pos = PositionalEmbedding::new(b, "pos_embedding", h.max_positions, h.embed)?;
        let layers = (0..h.encoder_layers)
            .map(|i| TransformerEncoderLayer::new(b, &format!("encoder.{i}"), h.embed, h.heads, h.ff_dim, dropout))
            .collect::<Result<Vec<_>>>()?;
        Ok(Encoder { pos, layers })
    }

    /// `[B, T, E]` to the position-averaged `[B, E]`.
    fn forward(&self, cx: &mut Ctx<'_>, seq: Var) -> Result<Var> {
        let mut h = self.pos.forward(cx, seq)?;
        for layer in &self.layers {
            h = layer.forward(cx, h)?;
        }
        cx.g.mean_axis(h, 1)
    }
}

/// A strided convolution lifts the 12 leads to `embed` channels, then transformer encoder layers.
#[derive(Debug, Clone)]
pub struct TransformerEnc {
    stem: Conv1d,
    encoder: Encoder,
    embed: usize,
    max_len: usize,
}

impl TransformerEnc {
    pub fn new(b: &mut Builder<'_>, h: &HyperParams, dropout: f64) -> Result<Self> {
        let stem = Conv1d::new(b, "stem", LEADS, h.embed, h.patch, h.patch, 0, true)?;
        let encoder = Encoder::new(b, h, dropout)?;
        let max_len = max_input(|l| valid_len(&stem, l), h.max_positions);
        Ok(TransformerEnc {
            stem,
            encoder,
            embed: h.embed,
            max_len,
        })
    }

    pub fn out_features(&self) -> usize {
        self.embed
    }
}

impl Network for TransformerEnc {
    fn features(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let h = self.stem.forward(cx, x)?;
        let seq = cx.g.transpose(h, 1, 2)?;
        self.encoder.forward(cx, seq)
    }

    fn feature_len(&self, l: usize) -> Option<usize> {
        valid_len(&self.stem, l)
    }

    fn max_len(&self) -> Option<usize> {
        Some(self.max_len)
    }
}

/// ResNet18 features fed to a transformer encoder.
#[derive(Debug, Clone)]
pub struct ResTransformer {
    backbone: ResNet18Backbone,
    proj: Option<Linear>,
    encoder: Encoder,
    embed: usize,
    max_len: usize,
}

impl ResTransformer {
    pub fn new(b: &mut Builder<'_>, h: &HyperParams, dropout: f64) -> Result<Self> {
        let backbone = ResNet18Backbone::new(b, "backbone", h)?;
        let proj = projection(b, backbone.channels(), h.embed)?;
        let encoder = Encoder::new(b, h, dropout)?;
        let max_len = max_input(|l| backbone.out_len(l), h.max_positions);
        Ok(ResTransformer {
            backbone,
            proj,
            encoder,
            embed: h.embed,
            max_len,
        })
    }

    pub fn out_features(&self) -> usize {
        self.embed
    }
}

impl Network for ResTransformer {
    fn features(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let mut seq = self.backbone.sequence(cx, x)?;
        if let Some(p) = &self.proj {
            seq = p.forward(cx, seq)?;
        }
        self.encoder.forward(cx, seq)
    }

    fn feature_len(&self, l: usize) -> Option<usize> {
        self.backbone.out_len(l)
    }

    fn max_len(&self) -> Option<usize> {
        Some(self.max_len)
    }
}
