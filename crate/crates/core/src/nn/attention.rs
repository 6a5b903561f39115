use crate::autodiff::Var;
use crate::error::{Error, Result};

use super::{Builder, Ctx, LayerNorm, Linear};

/// Scaled dot-product attention split across `heads` heads.
#[derive(Debug, Clone)]
pub struct MultiheadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub embed: usize,
    pub heads: usize,
    pub dropout: f64,
}

impl MultiheadAttention {
    pub fn new(b: &mut Builder<'_>, name: &str, embed: usize, heads: usize, dropout: f64) -> Result<Self> {
        if heads == 0 || embed % heads != 0 {
            return Err(Error::invalid(format!("embedding size {embed} is not divisible by {heads} heads")));
        }
        let mut s = b.scope(name);
        Ok(MultiheadAttention {
            q: Linear::xavier(&mut s, "q_proj", embed, embed)?,
            k: Linear::xavier(&mut s, "k_proj", embed, embed)?,
            v: Linear::xavier(&mut s, "v_proj", embed, embed)?,
            out: Linear::xavier(&mut s, "out_proj", embed, embed)?,
            embed,
            heads,
            dropout,
        })
    }

    /// `[B, T, E]` to `[B, H, T, E/H]`.
    fn split_heads(&self, cx: &Ctx<'_>, x: Var) -> Result<Var> {
        let s = cx.g.shape(x);
        let x = cx.g.reshape(x, &[s[0], s[1], self.heads, self.embed / self.heads])?;
        cx.g.transpose(x, 1, 2)
    }

    /// Attention of `query: [B, T, E]` over `key`/`value: [B, S, E]`.
    /// Returns the projected output `[B, T, E]` and the weights `[B, H, T, S]`.
    pub fn attend(&self, cx: &mut Ctx<'_>, query: Var, key: Var, value: Var) -> Result<(Var, Var)> {
        let (sq, sk, sv) = (cx.g.shape(query), cx.g.shape(key), cx.g.shape(value));
        if sq.len() != 3 || sq[2] != self.embed {
            return Err(Error::shape("attention", format!("query {sq:?}, expected [B, T, {}]", self.embed)));
        }
        if sk != sv || sk.len() != 3 || sk[0] != sq[0] || sk[2] != self.embed {
            return Err(Error::shape("attention", format!("key {sk:?} / value {sv:?} incompatible with query {sq:?}")));
        }
        let d = self.embed / self.heads;
        let q = self.q.forward(cx, query)?;
        let q = self.split_heads(cx, q)?;
        let k = self.k.forward(cx, key)?;
        let k = self.split_heads(cx, k)?;
        let v = self.v.forward(cx, value)?;
        let v = self.split_heads(cx, v)?;
        let kt = cx.g.transpose(k, 2, 3)?;
        let scores = cx.g.scale(cx.g.matmul(q, kt)?, 1.0 / (d as f64).sqrt());
        let weights = cx.g.softmax(scores);
        let dropped = cx.dropout(weights, self.dropout)?;
        let ctx = cx.g.matmul(dropped, v)?;
        let ctx = cx.g.transpose(ctx, 1, 2)?;
        let ctx = cx.g.reshape(ctx, &[sq[0], sq[1], self.embed])?;
        Ok((self.out.forward(cx, ctx)?, weights))
    }

    /// Self-attention.
    pub fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        Ok(self.attend(cx, x, x, x)?.0)
    }
}

/// Post-norm encoder block: `LN(x + MHA(x))` then `LN(x + FF(x))`.
#[derive(Debug, Clone)]
pub struct TransformerEncoderLayer {
    pub attn: MultiheadAttention,
    pub ff1: Linear,
    pub ff2: Linear,
    pub norm1: LayerNorm,
    pub norm2: LayerNorm,
    pub dropout: f64,
}

impl TransformerEncoderLayer {
    pub fn new(b: &mut Builder<'_>, name: &str, embed: usize, heads: usize, ff_dim: usize, dropout: f64) -> Result<Self> {
        let mut s = b.scope(name);
        Ok(TransformerEncoderLayer {
            attn: MultiheadAttention::new(&mut s, "self_attn", embed, heads, dropout)?,
            ff1: Linear::he(&mut s, "linear1", embed, ff_dim)?,
            ff2: Linear::xavier(&mut s, "linear2", ff_dim, embed)?,
            norm1: LayerNorm::new(&mut s, "norm1", embed)?,
            norm2: LayerNorm::new(&mut s, "norm2", embed)?,
            dropout,
        })
    }

    pub fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let a = self.attn.forward(cx, x)?;
        let a = cx.dropout(a, self.dropout)?;
        let x = self.norm1.forward(cx, cx.g.add(x, a)?)?;
        let h = cx.g.relu(self.ff1.forward(cx, x)?);
        let h = cx.dropout(h, self.dropout)?;
        let h = self.ff2.forward(cx, h)?;
        let h = cx.dropout(h, self.dropout)?;
        self.norm2.forward(cx, cx.g.add(x, h)?)
    }
}
