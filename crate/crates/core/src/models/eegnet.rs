use crate::autodiff::{Conv2dGeometry, Var};
use crate::error::Result;
use crate::nn::{BatchNorm, Builder, Conv2d, Ctx};
use crate::signal::LEADS;

use super::{HyperParams, Network};

const POOL1: usize = 4;
const POOL2: usize = 8;
const SEPARABLE_KERNEL: usize = 16;

/// Compact CNN over the `[12 x l]` plane: temporal filters, depthwise spatial
/// filters across the leads, then a separable convolution.
#[derive(Debug, Clone)]
pub struct EegNet2d {
    temporal: Conv2d,
    bn1: BatchNorm,
    spatial: Conv2d,
    bn2: BatchNorm,
    sep_depth: Conv2d,
    sep_point: Conv2d,
    bn3: BatchNorm,
    kernel: usize,
    f2: usize,
    dropout: f64,
}

impl EegNet2d {
    pub fn new(b: &mut Builder<'_>, h: &HyperParams, dropout: f64) -> Result<Self> {
        let (f1, d, f2, k) = (h.eegnet_f1, h.eegnet_d, h.eegnet_f2, h.temporal_kernel);
        let c = f1 * d;
        let plain = |padding| Conv2dGeometry {
            stride: (1, 1),
            padding,
            groups: 1,
        };
        Ok(EegNet2d {
            temporal: Conv2d::new(b, "temporal", 1, f1, (1, k), plain((0, k / 2)), false)?,
            bn1: BatchNorm::new(b, "bn1", f1)?,
            spatial: Conv2d::new(
                b,
                "spatial",
                f1,
                c,
                (LEADS, 1),
                Conv2dGeometry {
                    stride: (1, 1),
                    padding: (0, 0),
                    groups: f1,
                },
                false,
            )?,
            bn2: BatchNorm::new(b, "bn2", c)?,
            sep_depth: Conv2d::new(
                b,
                "separable.depthwise",
                c,
                c,
                (1, SEPARABLE_KERNEL),
                Conv2dGeometry {
                    stride: (1, 1),
                    padding: (0, SEPARABLE_KERNEL / 2),
                    groups: c,
                },
                false,
            )?,
            sep_point: Conv2d::new(b, "separable.pointwise", c, f2, (1, 1), plain((0, 0)), false)?,
            bn3: BatchNorm::new(b, "bn3", f2)?,
            kernel: k,
            f2,
            dropout,
        })
    }

    pub fn out_features(&self) -> usize {
        self.f2
    }

    /// Average pool along time of a `[B, C, 1, T]` map.
    fn pool(cx: &Ctx<'_>, x: Var, k: usize) -> Result<Var> {
        let s = cx.g.shape(x);
        let flat = cx.g.reshape(x, &[s[0], s[1], s[3]])?;
        let p = cx.g.avg_pool1d(flat, k, k)?;
        let t = cx.g.shape(p)[2];
        cx.g.reshape(p, &[s[0], s[1], 1, t])
    }
}

impl Network for EegNet2d {
    fn features(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let s = cx.g.shape(x);
        let x = cx.g.reshape(x, &[s[0], 1, s[1], s[2]])?;
        let c = self.temporal.forward(cx, x)?;
        let h = self.bn1.forward(cx, c)?;
        let c = self.spatial.forward(cx, h)?;
        let h = self.bn2.forward(cx, c)?;
        let h = Self::pool(cx, cx.g.elu(h), POOL1)?;
        let h = cx.dropout(h, self.dropout)?;
        let c = self.sep_depth.forward(cx, h)?;
        let h = self.sep_point.forward(cx, c)?;
        let h = self.bn3.forward(cx, h)?;
        let h = Self::pool(cx, cx.g.elu(h), POOL2)?;
        let h = cx.dropout(h, self.dropout)?;
        let t = cx.g.shape(h)[3];
        let h = cx.g.reshape(h, &[s[0], self.f2, t])?;
        cx.g.global_avg_pool(h)
    }

    fn feature_len(&self, l: usize) -> Option<usize> {
        if l < self.kernel {
            return None;
        }
        let t = l + 2 * (self.kernel / 2) - self.kernel + 1;
        let t = t / POOL1;
        if t == 0 {
            return None;
        }
        let t = t + 1;
        let t = t / POOL2;
        (t > 0).then_some(t)
    }
}
