//! Batch and layer normalization.

use crate::error::{Error, Result};
use crate::tensor::{numel, Tensor};

use super::{Graph, Var};

/// Per-channel statistics of one training batch.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance.
    pub var: Vec<f64>,
    /// Elements per channel.
    pub count: usize,
}

impl Graph {
    /// Batch normalization over axis 1 of `[B, C, ...]`.
    ///
    /// With `running = None` the batch statistics are used (train mode) and
    /// returned so the caller can update its running estimates. With
    /// `running = Some((mean, var))` the op is a fixed affine map (eval mode).
    pub fn batch_norm(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: Option<(&Tensor, &Tensor)>,
        eps: f64,
    ) -> Result<(Var, Option<BatchStats>)> {
        let xv = self.value(x);
        let s = xv.shape().to_vec();
        if s.len() < 2 {
            return Err(Error::shape("batch_norm", format!("expected [B,C,...], got {s:?}")));
        }
        let (b, c) = (s[0], s[1]);
        let sp = numel(&s[2..]);
        let gv = self.value(gamma);
        let bv = self.value(beta);
        if gv.shape() != [c] || bv.shape() != [c] {
            return Err(Error::shape(
                "batch_norm",
                format!("affine params {:?}/{:?} vs {} channels", gv.shape(), bv.shape(), c),
            ));
        }
        let n = b * sp;
        let (mean, var, stats) = match running {
            Some((rm, rv)) => {
                if rm.shape() != [c] || rv.shape() != [c] {
                    return Err(Error::shape("batch_norm", format!("running stats {:?} vs {} channels", rm.shape(), c)));
                }
                (rm.data().to_vec(), rv.data().to_vec(), None)
            }
            None => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for bi in 0..b {
                    for ci in 0..c {
                        let chunk = &xv.data()[(bi * c + ci) * sp..(bi * c + ci + 1) * sp];
                        mean[ci] += chunk.iter().sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                for bi in 0..b {
                    for ci in 0..c {
                        let chunk = &xv.data()[(bi * c + ci) * sp..(bi * c + ci + 1) * sp];
                        var[ci] += chunk.iter().map(|v| (v - mean[ci]).powi(2)).sum::<f64>();
                    }
                }
                var.iter_mut().for_each(|v| *v /= n as f64);
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: var.clone(),
                    count: n,
                };
                (mean, var, Some(stats))
            }
        };
        let train = running.is_none();
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; xv.len()];
        let mut out = vec![0.0; xv.len()];
        for bi in 0..b {
            for ci in 0..c {
                let r = (bi * c + ci) * sp..(bi * c + ci + 1) * sp;
                for i in r {
                    let h = (xv.data()[i] - mean[ci]) * inv_std[ci];
                    xhat[i] = h;
                    out[i] = gv.data()[ci] * h + bv.data()[ci];
                }
            }
        }
        let var_out = self.record("batch_norm", &[x, gamma, beta], Tensor::from_parts(s, out), move |g, sink| {
            let gd = g.data();
            let mut sum_g = vec![0.0; c];
            let mut sum_gx = vec![0.0; c];
            for bi in 0..b {
                for ci in 0..c {
                    for i in (bi * c + ci) * sp..(bi * c + ci + 1) * sp {
                        sum_g[ci] += gd[i];
                        sum_gx[ci] += gd[i] * xhat[i];
                    }
                }
            }
            if let Some(gx) = sink.get(0) {
                let gx = gx.data_mut();
                let nf = n as f64;
                for bi in 0..b {
                    for ci in 0..c {
                        let k = gv.data()[ci] * inv_std[ci];
                        for i in (bi * c + ci) * sp..(bi * c + ci + 1) * sp {
                            gx[i] += if train {
                                k * (gd[i] - sum_g[ci] / nf - xhat[i] * sum_gx[ci] / nf)
                            } else {
                                k * gd[i]
                            };
                        }
                    }
                }
            }
            if let Some(gg) = sink.get(1) {
                for (a, v) in gg.data_mut().iter_mut().zip(&sum_gx) {
                    *a += v;
                }
            }
            if let Some(gb) = sink.get(2) {
                for (a, v) in gb.data_mut().iter_mut().zip(&sum_g) {
                    *a += v;
                }
            }
        });
        Ok((var_out, stats))
    }

    /// Layer normalization over the last axis with affine `gamma`/`beta`.
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let s = xv.shape().to_vec();
        let d = *s.last().unwrap();
        let gv = self.value(gamma);
        let bv = self.value(beta);
        if gv.shape() != [d] || bv.shape() != [d] {
            return Err(Error::shape("layer_norm", format!("affine params {:?} vs last dim {}", gv.shape(), d)));
        }
        let rows = xv.len() / d;
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = gv.data()[j] * h + bv.data()[j];
            }
        }
        Ok(self.record("layer_norm", &[x, gamma, beta], Tensor::from_parts(s, out), move |g, sink| {
            let gd = g.data();
            if let Some(gx) = sink.get(0) {
                let gx = gx.data_mut();
                for r in 0..rows {
                    let mut m1 = 0.0;
                    let mut m2 = 0.0;
                    for j in 0..d {
                        let gy = gd[r * d + j] * gv.data()[j];
                        m1 += gy;
                        m2 += gy * xhat[r * d + j];
                    }
                    m1 /= d as f64;
                    m2 /= d as f64;
                    for j in 0..d {
                        let gy = gd[r * d + j] * gv.data()[j];
                        gx[r * d + j] += inv_std[r] * (gy - m1 - xhat[r * d + j] * m2);
                    }
                }
            }
            if let Some(gg) = sink.get(1) {
                let gg = gg.data_mut();
                for r in 0..rows {
                    for j in 0..d {
                        gg[j] += gd[r * d + j] * xhat[r * d + j];
                    }
                }
            }
            if let Some(gb) = sink.get(2) {
                let gb = gb.data_mut();
                for r in 0..rows {
                    for j in 0..d {
                        gb[j] += gd[r * d + j];
                    }
                }
            }
        }))
    }
}
