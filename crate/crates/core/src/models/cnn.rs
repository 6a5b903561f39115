use crate::autodiff::{PoolGeometry, Var};
use crate::error::Result;
use crate::nn::{BatchNorm, Builder, Conv1d, Ctx, Linear};
use crate::signal::LEADS;

use super::{pool_len, valid_len, HyperParams, Network};

const ALEX_POOL: PoolGeometry = PoolGeometry {
    kernel: 3,
    stride: 2,
    padding: 0,
};

const VGG_POOL: PoolGeometry = PoolGeometry {
    kernel: 2,
    stride: 2,
    padding: 0,
};

/// Two hidden fully connected layers with dropout, as in the 2D originals.
#[derive(Debug, Clone)]
struct Classifier {
    fc1: Linear,
    fc2: Linear,
    dropout: f64,
}

impl Classifier {
    fn new(b: &mut Builder<'_>, cin: usize, hidden: usize, dropout: f64) -> Result<Self> {
        let mut s = b.scope("classifier");
        Ok(Classifier {
            fc1: Linear::he(&mut s, "fc1", cin, hidden)?,
            fc2: Linear::he(&mut s, "fc2", hidden, hidden)?,
            dropout,
        })
    }

    fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let h = cx.dropout(x, self.dropout)?;
        let h = cx.g.relu(self.fc1.forward(cx, h)?);
        let h = cx.dropout(h, self.dropout)?;
        Ok(cx.g.relu(self.fc2.forward(cx, h)?))
    }
}

/// Five convolutions (64-192-384-256-256 at width 64) and three max pools.
#[derive(Debug, Clone)]
pub struct AlexNet1d {
    convs: Vec<Conv1d>,
    /// Pool after conv `i`.
    pool_after: [bool; 5],
    classifier: Classifier,
    hidden: usize,
}

impl AlexNet1d {
    pub fn new(b: &mut Builder<'_>, h: &HyperParams, dropout: f64) -> Result<Self> {
        let w = h.width;
        let mut f = b.scope("features");
        let convs = vec![
            Conv1d::new(&mut f, "conv1", LEADS, w, 11, 4, 2, true)?,
            Conv1d::new(&mut f, "conv2", w, 3 * w, 5, 1, 2, true)?,
            Conv1d::new(&mut f, "conv3", 3 * w, 6 * w, 3, 1, 1, true)?,
            Conv1d::new(&mut f, "conv4", 6 * w, 4 * w, 3, 1, 1, true)?,
            Conv1d::new(&mut f, "conv5", 4 * w, 4 * w, 3, 1, 1, true)?,
        ];
        drop(f);
        Ok(AlexNet1d {
            convs,
            pool_after: [true, true, false, false, true],
            classifier: Classifier::new(b, 4 * w, h.fc_hidden, dropout)?,
            hidden: h.fc_hidden,
        })
    }

    pub fn out_features(&self) -> usize {
        self.hidden
    }
}

impl Network for AlexNet1d {
    fn features(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let mut h = x;
        for (conv, &pool) in self.convs.iter().zip(&self.pool_after) {
            h = cx.g.relu(conv.forward(cx, h)?);
            if pool {
                h = cx.g.max_pool1d(h, ALEX_POOL)?;
            }
        }
        let h = cx.g.global_avg_pool(h)?;
        self.classifier.forward(cx, h)
    }

    fn feature_len(&self, l: usize) -> Option<usize> {
        let mut t = l;
        for (conv, &pool) in self.convs.iter().zip(&self.pool_after) {
            t = valid_len(conv, t)?;
            if pool {
                t = pool_len(t, ALEX_POOL)?;
            }
        }
        Some(t)
    }
}

/// VGG11 configuration `[w, M, 2w, M, 4w, 4w, M, 8w, 8w, M, 8w, 8w, M]` with batchnorm.
#[derive(Debug, Clone)]
pub struct Vgg11Bn1d {
    /// `None` marks a max pool.
    layers: Vec<Option<(Conv1d, BatchNorm)>>,
    classifier: Classifier,
    hidden: usize,
}

impl Vgg11Bn1d {
    pub fn new(b: &mut Builder<'_>, h: &HyperParams, dropout: f64) -> Result<Self> {
        let w = h.width;
        let cfg = [1, 0, 2, 0, 4, 4, 0, 8, 8, 0, 8, 8, 0];
        let mut f = b.scope("features");
        let mut layers = Vec::with_capacity(cfg.len());
        let mut cin = LEADS;
        for (i, &m) in cfg.iter().enumerate() {
            if m == 0 {
                layers.push(None);
                continue;
            }
            let cout = m * w;
            let conv = Conv1d::new(&mut f, &format!("{i}.conv"), cin, cout, 3, 1, 1, true)?;
            let bn = BatchNorm::new(&mut f, &format!("{i}.bn"), cout)?;
            layers.push(Some((conv, bn)));
            cin = cout;
        }
        drop(f);
        Ok(Vgg11Bn1d {
            layers,
            classifier: Classifier::new(b, cin, h.fc_hidden, dropout)?,
            hidden: h.fc_hidden,
        })
    }

    pub fn out_features(&self) -> usize {
        self.hidden
    }
}

impl Network for Vgg11Bn1d {
    fn features(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let mut h = x;
        for layer in &self.layers {
            h = match layer {
                Some((conv, bn)) => {
                    let c = conv.forward(cx, h)?;
                    cx.g.relu(bn.forward(cx, c)?)
                }
                None => cx.g.max_pool1d(h, VGG_POOL)?,
            };
        }
        let h = cx.g.global_avg_pool(h)?;
        self.classifier.forward(cx, h)
    }

    fn feature_len(&self, l: usize) -> Option<usize> {
        self.layers.iter().try_fold(l, |t, layer| match layer {
            Some((conv, _)) => valid_len(conv, t),
            None => pool_len(t, VGG_POOL),
        })
    }
}
