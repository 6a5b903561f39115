use crate::autodiff::{PoolGeometry, Var};
use crate::error::Result;
use crate::nn::{BatchNorm, Builder, Ctx, Conv1d};
use crate::signal::LEADS;

use super::{pool_len, valid_len, HyperParams, Network};

const STEM_POOL: PoolGeometry = PoolGeometry {
    kernel: 3,
    stride: 2,
    padding: 1,
};

/// Two 3-tap convolutions with an identity or 1x1 projection shortcut.
#[derive(Debug, Clone)]
pub struct BasicBlock {
    conv1: Conv1d,
    bn1: BatchNorm,
    conv2: Conv1d,
    bn2: BatchNorm,
    down: Option<(Conv1d, BatchNorm)>,
}

impl BasicBlock {
    pub fn new(b: &mut Builder<'_>, name: &str, cin: usize, cout: usize, stride: usize) -> Result<Self> {
        let mut s = b.scope(name);
        let conv1 = Conv1d::new(&mut s, "conv1", cin, cout, 3, stride, 1, false)?;
        let bn1 = BatchNorm::new(&mut s, "bn1", cout)?;
        let conv2 = Conv1d::new(&mut s, "conv2", cout, cout, 3, 1, 1, false)?;
        let bn2 = BatchNorm::new(&mut s, "bn2", cout)?;
        let down = if stride != 1 || cin != cout {
            let mut d = s.scope("downsample");
            Some((Conv1d::new(&mut d, "conv", cin, cout, 1, stride, 0, false)?, BatchNorm::new(&mut d, "bn", cout)?))
        } else {
            None
        };
        Ok(BasicBlock {
            conv1,
            bn1,
            conv2,
            bn2,
            down,
        })
    }

    pub fn out_len(&self, l: usize) -> Option<usize> {
        let t = valid_len(&self.conv1, l)?;
        valid_len(&self.conv2, t)
    }

    pub fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let c = self.conv1.forward(cx, x)?;
        let h = self.bn1.forward(cx, c)?;
        let h = cx.g.relu(h);
        let c = self.conv2.forward(cx, h)?;
        let h = self.bn2.forward(cx, c)?;
        let skip = match &self.down {
            Some((conv, bn)) => {
                let c = conv.forward(cx, x)?;
                bn.forward(cx, c)?
            }
            None => x,
        };
        Ok(cx.g.relu(cx.g.add(h, skip)?))
    }
}

/// ResNet18 up to the last stage, producing `[B, 8w, T']`.
#[derive(Debug, Clone)]
pub struct ResNet18Backbone {
    stem: Conv1d,
    stem_bn: BatchNorm,
    stages: Vec<Vec<BasicBlock>>,
    channels: usize,
}

impl ResNet18Backbone {
    pub fn new(b: &mut Builder<'_>, name: &str, h: &HyperParams) -> Result<Self> {
        let mut s = b.scope(name);
        let w = h.width;
        let stem = Conv1d::new(&mut s, "conv1", LEADS, w, 7, 2, 3, false)?;
        let stem_bn = BatchNorm::new(&mut s, "bn1", w)?;
        let mut stages = Vec::with_capacity(4);
        let mut cin = w;
        for (i, &n) in h.blocks.iter().enumerate() {
            let cout = w << i;
            let mut blocks = Vec::with_capacity(n);
            for j in 0..n {
                let stride = if i > 0 && j == 0 { 2 } else { 1 };
                blocks.push(BasicBlock::new(&mut s, &format!("layer{}.{j}", i + 1), cin, cout, stride)?);
                cin = cout;
            }
            stages.push(blocks);
        }
        Ok(ResNet18Backbone {
            stem,
            stem_bn,
            stages,
            channels: cin,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn out_len(&self, l: usize) -> Option<usize> {
        let mut t = valid_len(&self.stem, l)?;
        t = pool_len(t, STEM_POOL)?;
        for block in self.stages.iter().flatten() {
            t = block.out_len(t)?;
        }
        Some(t)
    }

    pub fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let c = self.stem.forward(cx, x)?;
        let h = self.stem_bn.forward(cx, c)?;
        let mut h = cx.g.max_pool1d(cx.g.relu(h), STEM_POOL)?;
        for block in self.stages.iter().flatten() {
            h = block.forward(cx, h)?;
        }
        Ok(h)
    }

    /// `[B, C, T']` as a sequence `[B, T', C]`.
    pub fn sequence(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let h = self.forward(cx, x)?;
        cx.g.transpose(h, 1, 2)
    }
}

/// ResNet18 with global average pooling.
#[derive(Debug, Clone)]
pub struct ResNet18_1d {
    backbone: ResNet18Backbone,
}

impl ResNet18_1d {
    pub fn new(b: &mut Builder<'_>, h: &HyperParams) -> Result<Self> {
        Ok(ResNet18_1d {
            backbone: ResNet18Backbone::new(b, "backbone", h)?,
        })
    }

    pub fn out_features(&self) -> usize {
        self.backbone.channels()
    }
}

impl Network for ResNet18_1d {
    fn features(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let h = self.backbone.forward(cx, x)?;
        cx.g.global_avg_pool(h)
    }

    fn feature_len(&self, l: usize) -> Option<usize> {
        self.backbone.out_len(l)
    }
}
