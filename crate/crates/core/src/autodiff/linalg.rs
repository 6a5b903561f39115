use crate::error::{Error, Result};
use crate::tensor::{numel, strides_of, Tensor};

use super::{Graph, Var};

/// `c = op(a) * op(b) + beta * c` with row-major buffers.
///
/// `op(a)` is `m x k`: stored `m x k` when `ta` is false, `k x m` otherwise.
/// `op(b)` is `k x n`: stored `k x n` when `tb` is false, `n x k` otherwise.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices cover the strided extents asserted above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Graph {
    /// Matrix product over the last two axes.
    ///
    /// `a: [..., m, k]`, `b: [..., k, n]` with identical leading axes, or
    /// `b: [k, n]` shared across the leading axes of `a`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        let (sa, sb) = (av.shape().to_vec(), bv.shape().to_vec());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::shape("matmul", format!("needs rank >= 2, got {sa:?} x {sb:?}")));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(Error::shape("matmul", format!("inner dims differ: {sa:?} x {sb:?}")));
        }
        let lead_a = &sa[..sa.len() - 2];
        let shared_b = sb.len() == 2;
        if !shared_b && lead_a != &sb[..sb.len() - 2] {
            return Err(Error::shape("matmul", format!("batch dims differ: {sa:?} x {sb:?}")));
        }
        let batch = numel(lead_a);
        let mut out_shape = lead_a.to_vec();
        out_shape.extend([m, n]);
        let mut out = vec![0.0; batch * m * n];

        if shared_b {
            gemm(batch * m, k, n, av.data(), false, bv.data(), false, &mut out, 0.0);
        } else {
            for i in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    &av.data()[i * m * k..],
                    false,
                    &bv.data()[i * k * n..],
                    false,
                    &mut out[i * m * n..],
                    0.0,
                );
            }
        }

        Ok(self.record("matmul", &[a, b], Tensor::from_parts(out_shape, out), move |g, sink| {
            let gd = g.data();
            if let Some(ga) = sink.get(0) {
                let ga = ga.data_mut();
                if shared_b {
                    gemm(batch * m, n, k, gd, false, bv.data(), true, ga, 1.0);
                } else {
                    for i in 0..batch {
                        gemm(m, n, k, &gd[i * m * n..], false, &bv.data()[i * k * n..], true, &mut ga[i * m * k..], 1.0);
                    }
                }
            }
            if let Some(gb) = sink.get(1) {
                let gb = gb.data_mut();
                if shared_b {
                    gemm(k, batch * m, n, av.data(), true, gd, false, gb, 1.0);
                } else {
                    for i in 0..batch {
                        gemm(k, m, n, &av.data()[i * m * k..], true, &gd[i * m * n..], false, &mut gb[i * k * n..], 1.0);
                    }
                }
            }
        }))
    }

    /// Affine map over the last axis: `x: [..., in]`, `weight: [out, in]`, `bias: [out]`.
    pub fn linear(&self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let xv = self.value(x);
        let wv = self.value(weight);
        let sx = xv.shape().to_vec();
        let sw = wv.shape().to_vec();
        if sw.len() != 2 || sx.last() != Some(&sw[1]) {
            return Err(Error::shape("linear", format!("input {sx:?} vs weight {sw:?}")));
        }
        let (out_f, in_f) = (sw[0], sw[1]);
        let rows = xv.len() / in_f;
        let bv = match bias {
            Some(b) => {
                let bv = self.value(b);
                if bv.shape() != [out_f] {
                    return Err(Error::shape("linear", format!("bias {:?} vs {} outputs", bv.shape(), out_f)));
                }
                Some(bv)
            }
            None => None,
        };
        let mut out = vec![0.0; rows * out_f];
        if let Some(bv) = &bv {
            for r in 0..rows {
                out[r * out_f..(r + 1) * out_f].copy_from_slice(bv.data());
            }
        }
        gemm(rows, in_f, out_f, xv.data(), false, wv.data(), true, &mut out, if bv.is_some() { 1.0 } else { 0.0 });
        let mut out_shape = sx[..sx.len() - 1].to_vec();
        out_shape.push(out_f);
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        Ok(self.record("linear", &inputs, Tensor::from_parts(out_shape, out), move |g, sink| {
            let gd = g.data();
            if let Some(gx) = sink.get(0) {
                gemm(rows, out_f, in_f, gd, false, wv.data(), false, gx.data_mut(), 1.0);
            }
            if let Some(gw) = sink.get(1) {
                gemm(out_f, rows, in_f, gd, true, xv.data(), false, gw.data_mut(), 1.0);
            }
            if sink.inputs.len() > 2 {
                if let Some(gb) = sink.get(2) {
                    let gb = gb.data_mut();
                    for r in 0..rows {
                        for (acc, v) in gb.iter_mut().zip(&gd[r * out_f..(r + 1) * out_f]) {
                            *acc += v;
                        }
                    }
                }
            }
        }))
    }

    /// Swaps two axes (materialized copy).
    pub fn transpose(&self, x: Var, d0: usize, d1: usize) -> Result<Var> {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        if d0 >= shape.len() || d1 >= shape.len() {
            return Err(Error::shape("transpose", format!("axes ({d0},{d1}) out of range for {shape:?}")));
        }
        let mut perm: Vec<usize> = (0..shape.len()).collect();
        perm.swap(d0, d1);
        let (out, out_shape) = permute(&xv, &perm);
        Ok(self.record("transpose", &[x], Tensor::from_parts(out_shape, out), move |g, sink| {
            if let Some(gx) = sink.get(0) {
                // a swap is its own inverse
                let (back, _) = permute(g, &perm);
                for (a, b) in gx.data_mut().iter_mut().zip(back) {
                    *a += b;
                }
            }
        }))
    }
}

/// Returns the data of `x` with axes permuted so output axis `i` is input axis `perm[i]`.
fn permute(x: &Tensor, perm: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let in_shape = x.shape();
    let in_strides = strides_of(in_shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = x.len();
    let mut out = Vec::with_capacity(n);
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    let data = x.data();
    for _ in 0..n {
        out.push(data[off]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= src_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    (out, out_shape)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let g = Graph::new();
        let a = g.constant(Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let b = g.constant(Tensor::new(vec![3, 2], vec![7., 8., 9., 10., 11., 12.]).unwrap());
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[58., 64., 139., 154.]);
    }

    #[test]
    fn matmul_rejects_bad_inner_dim() {
        let g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 2]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn transpose_3d() {
        let g = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 2, 3], (0..6).map(f64::from).collect()).unwrap());
        let t = g.transpose(x, 1, 2).unwrap();
        assert_eq!(g.shape(t), vec![1, 3, 2]);
        assert_eq!(g.value(t).data(), &[0., 3., 1., 4., 2., 5.]);
    }

    #[test]
    fn linear_counts() {
        let g = Graph::new();
        let x = g.constant(Tensor::ones(&[4, 10]));
        let w = g.constant(Tensor::full(&[5, 10], 0.5));
        let b = g.constant(Tensor::full(&[5], 1.0));
        let y = g.linear(x, w, Some(b)).unwrap();
        assert_eq!(g.shape(y), vec![4, 5]);
        assert!(g.value(y).data().iter().all(|&v| v == 6.0));
    }
}
