//! Direct (im2col + GEMM) convolutions and 1D pooling.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::linalg::gemm;
use super::{Graph, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
}

impl Default for Conv2dGeometry {
    fn default() -> Self {
        Conv2dGeometry {
            stride: (1, 1),
            padding: (0, 0),
            groups: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

/// Output length of a sliding window, `None` when the window does not fit.
pub fn window_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = len + 2 * padding;
    if kernel == 0 || stride == 0 || padded < kernel {
        None
    } else {
        Some((padded - kernel) / stride + 1)
    }
}

#[derive(Clone, Copy)]
struct Dims {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    geo: Conv2dGeometry,
}

impl Dims {
    fn cg(&self) -> usize {
        self.cin / self.geo.groups
    }
    fn cog(&self) -> usize {
        self.cout / self.geo.groups
    }
    fn col_rows(&self) -> usize {
        self.cg() * self.kh * self.kw
    }
    fn col_cols(&self) -> usize {
        self.oh * self.ow
    }
    fn x_stride(&self) -> usize {
        self.cin * self.h * self.w
    }
    fn y_stride(&self) -> usize {
        self.cout * self.oh * self.ow
    }
}

fn im2col(x: &[f64], d: &Dims, group: usize, cols: &mut [f64]) {
    let (sh, sw) = d.geo.stride;
    let (ph, pw) = d.geo.padding;
    let cg = d.cg();
    let mut row = 0;
    for c in 0..cg {
        let plane = &x[(group * cg + c) * d.h * d.w..(group * cg + c + 1) * d.h * d.w];
        for i in 0..d.kh {
            for j in 0..d.kw {
                let dst = &mut cols[row * d.col_cols()..(row + 1) * d.col_cols()];
                for oy in 0..d.oh {
                    let y = (oy * sh + i) as isize - ph as isize;
                    let line = &mut dst[oy * d.ow..(oy + 1) * d.ow];
                    if y < 0 || y >= d.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[y as usize * d.w..(y as usize + 1) * d.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let xx = (ox * sw + j) as isize - pw as isize;
                        *v = if xx < 0 || xx >= d.w as isize { 0.0 } else { src[xx as usize] };
                    }
                }
                row += 1;
            }
        }
    }
}

fn col2im(cols: &[f64], d: &Dims, group: usize, dx: &mut [f64]) {
    let (sh, sw) = d.geo.stride;
    let (ph, pw) = d.geo.padding;
    let cg = d.cg();
    let mut row = 0;
    for c in 0..cg {
        let plane = &mut dx[(group * cg + c) * d.h * d.w..(group * cg + c + 1) * d.h * d.w];
        for i in 0..d.kh {
            for j in 0..d.kw {
                let src = &cols[row * d.col_cols()..(row + 1) * d.col_cols()];
                for oy in 0..d.oh {
                    let y = (oy * sh + i) as isize - ph as isize;
                    if y < 0 || y >= d.h as isize {
                        continue;
                    }
                    let line = &src[oy * d.ow..(oy + 1) * d.ow];
                    let dst = &mut plane[y as usize * d.w..(y as usize + 1) * d.w];
                    for (ox, v) in line.iter().enumerate() {
                        let xx = (ox * sw + j) as isize - pw as isize;
                        if xx >= 0 && (xx as usize) < d.w {
                            dst[xx as usize] += v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

impl Graph {
    /// 1D convolution. `x: [B, Cin, L]`, `weight: [Cout, Cin, K]`, `bias: [Cout]`.
    pub fn conv1d(&self, x: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(weight);
        if xs.len() != 3 || ws.len() != 3 {
            return Err(Error::shape("conv1d", format!("expected [B,C,L] and [O,C,K], got {xs:?} and {ws:?}")));
        }
        let geo = Conv2dGeometry {
            stride: (1, stride),
            padding: (0, padding),
            groups: 1,
        };
        self.conv_impl("conv1d", x, weight, bias, [xs[0], xs[1], 1, xs[2]], [ws[0], ws[1], 1, ws[2]], geo, false)
    }

    /// 2D convolution with groups (`groups == Cin` gives a depthwise convolution).
    /// `x: [B, Cin, H, W]`, `weight: [Cout, Cin/groups, KH, KW]`.
    pub fn conv2d(&self, x: Var, weight: Var, bias: Option<Var>, geo: Conv2dGeometry) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(weight);
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::shape("conv2d", format!("expected [B,C,H,W] and [O,C/g,KH,KW], got {xs:?} and {ws:?}")));
        }
        self.conv_impl("conv2d", x, weight, bias, [xs[0], xs[1], xs[2], xs[3]], [ws[0], ws[1], ws[2], ws[3]], geo, true)
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_impl(
        &self,
        op: &'static str,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        xs: [usize; 4],
        ws: [usize; 4],
        geo: Conv2dGeometry,
        four_d: bool,
    ) -> Result<Var> {
        let [batch, cin, h, w] = xs;
        let [cout, cg, kh, kw] = ws;
        let groups = geo.groups;
        if groups == 0 || cin % groups != 0 || cout % groups != 0 || cg != cin / groups {
            return Err(Error::shape(
                op,
                format!("input channels {cin}, weight {ws:?}, groups {groups} are inconsistent"),
            ));
        }
        let oh = window_len(h, kh, geo.stride.0, geo.padding.0);
        let ow = window_len(w, kw, geo.stride.1, geo.padding.1);
        let (Some(oh), Some(ow)) = (oh, ow) else {
            return Err(Error::shape(
                op,
                format!(
                    "kernel {}x{} larger than padded input {}x{}",
                    kh,
                    kw,
                    h + 2 * geo.padding.0,
                    w + 2 * geo.padding.1
                ),
            ));
        };
        if let Some(b) = bias {
            if self.shape(b) != [cout] {
                return Err(Error::shape(op, format!("bias {:?} vs {} output channels", self.shape(b), cout)));
            }
        }
        let d = Dims {
            batch,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            oh,
            ow,
            geo,
        };
        let xv = self.value(x);
        let wv = self.value(weight);
        let bv = bias.map(|b| self.value(b));

        let mut out = vec![0.0; batch * d.y_stride()];
        out.par_chunks_mut(d.y_stride()).enumerate().for_each(|(b, yb)| {
            let xb = &xv.data()[b * d.x_stride()..(b + 1) * d.x_stride()];
            let mut cols = vec![0.0; d.col_rows() * d.col_cols()];
            for gi in 0..groups {
                im2col(xb, &d, gi, &mut cols);
                let wg = &wv.data()[gi * d.cog() * d.col_rows()..];
                let yg = &mut yb[gi * d.cog() * d.col_cols()..(gi + 1) * d.cog() * d.col_cols()];
                gemm(d.cog(), d.col_rows(), d.col_cols(), wg, false, &cols, false, yg, 0.0);
            }
            if let Some(bv) = &bv {
                for (co, chunk) in yb.chunks_mut(d.col_cols()).enumerate() {
                    let bias = bv.data()[co];
                    chunk.iter_mut().for_each(|v| *v += bias);
                }
            }
        });
        let out_shape = if four_d { vec![batch, cout, oh, ow] } else { vec![batch, cout, ow] };
        let mut inputs = vec![x, weight];
        inputs.extend(bias);

        Ok(self.record(op, &inputs, Tensor::from_parts(out_shape, out), move |g, sink| {
            let gd = g.data();
            let want_w = sink.wants(1);
            let want_x = sink.wants(0);
            let wlen = wv.len();
            // per-sample partials, reduced in batch order so results are deterministic
            let partials: Vec<(Option<Vec<f64>>, Option<Vec<f64>>)> = (0..d.batch)
                .into_par_iter()
                .map(|b| {
                    let xb = &xv.data()[b * d.x_stride()..(b + 1) * d.x_stride()];
                    let gb = &gd[b * d.y_stride()..(b + 1) * d.y_stride()];
                    let mut cols = vec![0.0; d.col_rows() * d.col_cols()];
                    let mut dw = want_w.then(|| vec![0.0; wlen]);
                    let mut dx = want_x.then(|| vec![0.0; d.x_stride()]);
                    for gi in 0..groups {
                        let gg = &gb[gi * d.cog() * d.col_cols()..(gi + 1) * d.cog() * d.col_cols()];
                        if let Some(dw) = dw.as_mut() {
                            im2col(xb, &d, gi, &mut cols);
                            let dwg = &mut dw[gi * d.cog() * d.col_rows()..(gi + 1) * d.cog() * d.col_rows()];
                            gemm(d.cog(), d.col_cols(), d.col_rows(), gg, false, &cols, true, dwg, 1.0);
                        }
                        if let Some(dx) = dx.as_mut() {
                            let wg = &wv.data()[gi * d.cog() * d.col_rows()..];
                            gemm(d.col_rows(), d.cog(), d.col_cols(), wg, true, gg, false, &mut cols, 0.0);
                            col2im(&cols, &d, gi, dx);
                        }
                    }
                    (dw, dx)
                })
                .collect();
            if let Some(gx) = sink.get(0) {
                let gx = gx.data_mut();
                for (b, (_, dx)) in partials.iter().enumerate() {
                    if let Some(dx) = dx {
                        for (a, v) in gx[b * d.x_stride()..(b + 1) * d.x_stride()].iter_mut().zip(dx) {
                            *a += v;
                        }
                    }
                }
            }
            if let Some(gw) = sink.get(1) {
                let gw = gw.data_mut();
                for (dw, _) in &partials {
                    if let Some(dw) = dw {
                        for (a, v) in gw.iter_mut().zip(dw) {
                            *a += v;
                        }
                    }
                }
            }
            if sink.inputs.len() > 2 {
                if let Some(gbias) = sink.get(2) {
                    let gbias = gbias.data_mut();
                    for b in 0..d.batch {
                        let gb = &gd[b * d.y_stride()..(b + 1) * d.y_stride()];
                        for (co, chunk) in gb.chunks(d.col_cols()).enumerate() {
                            gbias[co] += chunk.iter().sum::<f64>();
                        }
                    }
                }
            }
        }))
    }

    /// Max pooling over the last axis of `[B, C, L]`; padding acts as `-inf`.
    pub fn max_pool1d(&self, x: Var, geo: PoolGeometry) -> Result<Var> {
        let xv = self.value(x);
        let s = xv.shape().to_vec();
        if s.len() != 3 {
            return Err(Error::shape("max_pool1d", format!("expected [B,C,L], got {s:?}")));
        }
        if geo.padding * 2 > geo.kernel {
            return Err(Error::shape("max_pool1d", format!("padding {} exceeds half the kernel {}", geo.padding, geo.kernel)));
        }
        let len = s[2];
        let out_len = window_len(len, geo.kernel, geo.stride, geo.padding)
            .ok_or_else(|| Error::shape("max_pool1d", format!("kernel {} larger than padded length {}", geo.kernel, len + 2 * geo.padding)))?;
        let rows = s[0] * s[1];
        let mut out = Vec::with_capacity(rows * out_len);
        let mut arg = Vec::with_capacity(rows * out_len);
        for r in 0..rows {
            let src = &xv.data()[r * len..(r + 1) * len];
            for o in 0..out_len {
                let start = (o * geo.stride) as isize - geo.padding as isize;
                let mut best = f64::NEG_INFINITY;
                let mut bi = usize::MAX;
                for k in 0..geo.kernel {
                    let p = start + k as isize;
                    if p >= 0 && (p as usize) < len && (bi == usize::MAX || src[p as usize] > best) {
                        best = src[p as usize];
                        bi = p as usize;
                    }
                }
                out.push(best);
                arg.push(r * len + bi);
            }
        }
        Ok(self.record("max_pool1d", &[x], Tensor::from_parts(vec![s[0], s[1], out_len], out), move |g, sink| {
            if let Some(gx) = sink.get(0) {
                let gx = gx.data_mut();
                for (&i, v) in arg.iter().zip(g.data()) {
                    gx[i] += v;
                }
            }
        }))
    }

    /// Average pooling over the last axis of `[B, C, L]` (no padding).
    pub fn avg_pool1d(&self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let xv = self.value(x);
        let s = xv.shape().to_vec();
        if s.len() != 3 {
            return Err(Error::shape("avg_pool1d", format!("expected [B,C,L], got {s:?}")));
        }
        let len = s[2];
        let out_len = window_len(len, kernel, stride, 0)
            .ok_or_else(|| Error::shape("avg_pool1d", format!("kernel {kernel} larger than length {len}")))?;
        let rows = s[0] * s[1];
        let inv = 1.0 / kernel as f64;
        let mut out = Vec::with_capacity(rows * out_len);
        for r in 0..rows {
            let src = &xv.data()[r * len..(r + 1) * len];
            for o in 0..out_len {
                out.push(src[o * stride..o * stride + kernel].iter().sum::<f64>() * inv);
            }
        }
        Ok(self.record("avg_pool1d", &[x], Tensor::from_parts(vec![s[0], s[1], out_len], out), move |g, sink| {
            if let Some(gx) = sink.get(0) {
                let gx = gx.data_mut();
                for r in 0..rows {
                    for o in 0..out_len {
                        let v = g.data()[r * out_len + o] * inv;
                        for a in &mut gx[r * len + o * stride..r * len + o * stride + kernel] {
                            *a += v;
                        }
                    }
                }
            }
        }))
    }

    /// Mean over the last axis of `[B, C, L]`, giving `[B, C]`.
    pub fn global_avg_pool(&self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 3 {
            return Err(Error::shape("global_avg_pool", format!("expected [B,C,L], got {s:?}")));
        }
        self.mean_axis(x, 2)
    }
}
