//! Elementwise, reduction and layout primitives.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{numel, strides_of, Tensor};

use super::{Graph, Var};

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every flat index of `out_shape`, the flat index of the broadcast source.
fn source_offsets(out_shape: &[usize], in_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let pad = rank - in_shape.len();
    let in_strides = strides_of(in_shape);
    let strides: Vec<usize> = (0..rank)
        .map(|i| {
            if i < pad || in_shape[i - pad] == 1 {
                0
            } else {
                in_strides[i - pad]
            }
        })
        .collect();
    let n = numel(out_shape);
    let mut offs = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..n {
        offs.push(off);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    offs
}

type Partial = fn(f64, f64) -> f64;

impl Graph {
    fn binary(&self, op: &'static str, a: Var, b: Var, f: fn(f64, f64) -> f64, da: Partial, db: Partial) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        let out_shape = broadcast_shape(av.shape(), bv.shape())
            .ok_or_else(|| Error::shape(op, format!("cannot broadcast {:?} with {:?}", av.shape(), bv.shape())))?;
        if av.shape() == bv.shape() {
            let out: Vec<f64> = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
            return Ok(self.record(op, &[a, b], Tensor::from_parts(out_shape, out), move |g, sink| {
                let (x, y) = (av.data(), bv.data());
                if let Some(ga) = sink.get(0) {
                    for (i, acc) in ga.data_mut().iter_mut().enumerate() {
                        *acc += g.data()[i] * da(x[i], y[i]);
                    }
                }
                if let Some(gb) = sink.get(1) {
                    for (i, acc) in gb.data_mut().iter_mut().enumerate() {
                        *acc += g.data()[i] * db(x[i], y[i]);
                    }
                }
            }));
        }
        let oa = source_offsets(&out_shape, av.shape());
        let ob = source_offsets(&out_shape, bv.shape());
        let out: Vec<f64> = oa
            .iter()
            .zip(&ob)
            .map(|(&i, &j)| f(av.data()[i], bv.data()[j]))
            .collect();
        Ok(self.record(op, &[a, b], Tensor::from_parts(out_shape, out), move |g, sink| {
            let (x, y) = (av.data(), bv.data());
            if let Some(ga) = sink.get(0) {
                let ga = ga.data_mut();
                for (k, (&i, &j)) in oa.iter().zip(&ob).enumerate() {
                    ga[i] += g.data()[k] * da(x[i], y[j]);
                }
            }
            if let Some(gb) = sink.get(1) {
                let gb = gb.data_mut();
                for (k, (&i, &j)) in oa.iter().zip(&ob).enumerate() {
                    gb[j] += g.data()[k] * db(x[i], y[j]);
                }
            }
        }))
    }

    /// Broadcasting `a + b`.
    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, |_, _| 1.0, |_, _| 1.0)
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, |_, _| 1.0, |_, _| -1.0)
    }

    /// Broadcasting elementwise product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, |_, y| y, |x, _| x)
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, |_, y| 1.0 / y, |x, y| -x / (y * y))
    }

    /// `d` gives the derivative from `(input, output)`.
    fn unary(&self, op: &'static str, x: Var, f: impl Fn(f64) -> f64, d: impl Fn(f64, f64) -> f64 + 'static) -> Var {
        let xv = self.value(x);
        let out = xv.map(f);
        let yv = std::sync::Arc::new(out.clone());
        self.record(op, &[x], out, move |g, sink| {
            if let Some(gx) = sink.get(0) {
                for (i, acc) in gx.data_mut().iter_mut().enumerate() {
                    *acc += g.data()[i] * d(xv.data()[i], yv.data()[i]);
                }
            }
        })
    }

    pub fn relu(&self, x: Var) -> Var {
        self.unary("relu", x, |v| v.max(0.0), |v, _| if v > 0.0 { 1.0 } else { 0.0 })
    }

    /// ELU with `alpha = 1`.
    pub fn elu(&self, x: Var) -> Var {
        self.unary(
            "elu",
            x,
            |v| if v > 0.0 { v } else { v.exp_m1() },
            |v, y| if v > 0.0 { 1.0 } else { y + 1.0 },
        )
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        self.unary("sigmoid", x, sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn tanh(&self, x: Var) -> Var {
        self.unary("tanh", x, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn exp(&self, x: Var) -> Var {
        self.unary("exp", x, f64::exp, |_, y| y)
    }

    pub fn neg(&self, x: Var) -> Var {
        self.unary("neg", x, |v| -v, |_, _| -1.0)
    }

    pub fn scale(&self, x: Var, c: f64) -> Var {
        self.unary("scale", x, move |v| v * c, move |_, _| c)
    }

    pub fn add_scalar(&self, x: Var, c: f64) -> Var {
        self.unary("add_scalar", x, move |v| v + c, |_, _| 1.0)
    }

    pub fn square(&self, x: Var) -> Var {
        self.unary("square", x, |v| v * v, |v, _| 2.0 * v)
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&self, x: Var) -> Var {
        let xv = self.value(x);
        let s = xv.sum();
        self.record("sum", &[x], Tensor::scalar(s), move |g, sink| {
            if let Some(gx) = sink.get(0) {
                let v = g.item();
                gx.data_mut().iter_mut().for_each(|a| *a += v);
            }
        })
    }

    pub fn mean(&self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        self.scale(self.sum(x), 1.0 / n)
    }

    /// Mean over one axis; the axis is removed.
    pub fn mean_axis(&self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("mean_axis", format!("axis {axis} out of range for {shape:?}")));
        }
        let outer = numel(&shape[..axis]);
        let len = shape[axis];
        let inner = numel(&shape[axis + 1..]);
        let mut out = vec![0.0; outer * inner];
        let inv = 1.0 / len as f64;
        for o in 0..outer {
            for l in 0..len {
                let src = &xv.data()[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (acc, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *acc += v;
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= inv);
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        Ok(self.record("mean_axis", &[x], Tensor::from_parts(out_shape, out), move |g, sink| {
            if let Some(gx) = sink.get(0) {
                let gx = gx.data_mut();
                for o in 0..outer {
                    let gsrc = &g.data()[o * inner..(o + 1) * inner];
                    for l in 0..len {
                        for (acc, v) in gx[(o * len + l) * inner..(o * len + l + 1) * inner].iter_mut().zip(gsrc) {
                            *acc += v * inv;
                        }
                    }
                }
            }
        }))
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let out = xv.reshape(shape)?;
        Ok(self.record("reshape", &[x], out, |g, sink| {
            if let Some(gx) = sink.get(0) {
                for (a, b) in gx.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
        }))
    }

    /// Concatenates along `axis`; all other axes must agree.
    pub fn concat(&self, xs: &[Var], axis: usize) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::invalid("concat of zero tensors"));
        }
        let vals: Vec<_> = xs.iter().map(|&v| self.value(v)).collect();
        let first = vals[0].shape().to_vec();
        if axis >= first.len() {
            return Err(Error::shape("concat", format!("axis {axis} out of range for {first:?}")));
        }
        for v in &vals[1..] {
            let s = v.shape();
            let ok = s.len() == first.len() && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::shape("concat", format!("{:?} vs {:?} along axis {}", first, s, axis)));
            }
        }
        let outer = numel(&first[..axis]);
        let inner = numel(&first[axis + 1..]);
        let lens: Vec<usize> = vals.iter().map(|v| v.shape()[axis]).collect();
        let total: usize = lens.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &l) in vals.iter().zip(&lens) {
                out.extend_from_slice(&v.data()[o * l * inner..(o + 1) * l * inner]);
            }
        }
        let mut out_shape = first.clone();
        out_shape[axis] = total;
        Ok(self.record("concat", xs, Tensor::from_parts(out_shape, out), move |g, sink| {
            let mut base = 0;
            for (k, &l) in lens.iter().enumerate() {
                if let Some(gx) = sink.get(k) {
                    let gx = gx.data_mut();
                    for o in 0..outer {
                        let src = &g.data()[(o * total + base) * inner..(o * total + base + l) * inner];
                        for (a, b) in gx[o * l * inner..(o + 1) * l * inner].iter_mut().zip(src) {
                            *a += b;
                        }
                    }
                }
                base += l;
            }
        }))
    }

    /// Elements `start..end` along `axis` (axis kept).
    pub fn slice(&self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        if axis >= shape.len() || start >= end || end > shape[axis] {
            return Err(Error::shape(
                "slice",
                format!("range {start}..{end} on axis {axis} invalid for {shape:?}"),
            ));
        }
        let outer = numel(&shape[..axis]);
        let inner = numel(&shape[axis + 1..]);
        let len = shape[axis];
        let w = end - start;
        let mut out = Vec::with_capacity(outer * w * inner);
        for o in 0..outer {
            out.extend_from_slice(&xv.data()[(o * len + start) * inner..(o * len + end) * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = w;
        Ok(self.record("slice", &[x], Tensor::from_parts(out_shape, out), move |g, sink| {
            if let Some(gx) = sink.get(0) {
                let gx = gx.data_mut();
                for o in 0..outer {
                    let src = &g.data()[o * w * inner..(o + 1) * w * inner];
                    for (a, b) in gx[(o * len + start) * inner..(o * len + end) * inner].iter_mut().zip(src) {
                        *a += b;
                    }
                }
            }
        }))
    }

    /// Softmax over the last axis.
    pub fn softmax(&self, x: Var) -> Var {
        let xv = self.value(x);
        let n = *xv.shape().last().unwrap();
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(n) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        let y = std::sync::Arc::new(Tensor::from_parts(xv.shape().to_vec(), out));
        let yc = std::sync::Arc::clone(&y);
        self.record("softmax", &[x], (*y).clone(), move |g, sink| {
            if let Some(gx) = sink.get(0) {
                for ((gxr, yr), gr) in gx.data_mut().chunks_mut(n).zip(yc.data().chunks(n)).zip(g.data().chunks(n)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for i in 0..n {
                        gxr[i] += yr[i] * (gr[i] - dot);
                    }
                }
            }
        })
    }

    /// Inverted dropout: zeroes each element with probability `p` and scales
    /// survivors by `1/(1-p)`. Pass `train = false` (or `p = 0`) for identity.
    pub fn dropout<R: Rng + ?Sized>(&self, x: Var, p: f64, train: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid(format!("dropout probability {p} outside [0, 1)")));
        }
        if !train || p == 0.0 {
            return Ok(x);
        }
        self.mark_stochastic();
        let xv = self.value(x);
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..xv.len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let out: Vec<f64> = xv.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        Ok(self.record("dropout", &[x], Tensor::from_parts(xv.shape().to_vec(), out), move |g, sink| {
            if let Some(gx) = sink.get(0) {
                for ((a, b), m) in gx.data_mut().iter_mut().zip(g.data()).zip(&mask) {
                    *a += b * m;
                }
            }
        }))
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vals(g: &Graph, v: Var) -> Vec<f64> {
        g.value(v).data().to_vec()
    }

    #[test]
    fn relu_definition() {
        let g = Graph::new();
        let x = g.constant(Tensor::from_vec(vec![-1.0, 0.0, 2.0]));
        assert_eq!(vals(&g, g.relu(x)), vec![0.0, 0.0, 2.0]);
    }

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let g = Graph::new();
        let x = g.constant(Tensor::from_vec(vec![0.0, 0.0, 0.0]));
        for v in vals(&g, g.softmax(x)) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn broadcast_bias_add() {
        let g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[2, 3]), true);
        let b = g.leaf(Tensor::from_vec(vec![1.0, 2.0, 3.0]), true);
        let y = g.add(x, b).unwrap();
        assert_eq!(vals(&g, y), vec![1., 2., 3., 1., 2., 3.]);
        let grads = g.backward(g.sum(y)).unwrap();
        assert_eq!(grads.wrt(b).unwrap().data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn broadcast_mismatch_names_dims() {
        let g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[4]));
        let msg = g.add(a, b).unwrap_err().to_string();
        assert!(msg.contains("add") && msg.contains("[2, 3]") && msg.contains("[4]"), "{msg}");
    }

    #[test]
    fn concat_and_slice_are_inverse() {
        let g = Graph::new();
        let a = g.constant(Tensor::new(vec![2, 1, 2], vec![1., 2., 3., 4.]).unwrap());
        let b = g.constant(Tensor::new(vec![2, 2, 2], vec![5., 6., 7., 8., 9., 10., 11., 12.]).unwrap());
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.shape(c), vec![2, 3, 2]);
        assert_eq!(vals(&g, c), vec![1., 2., 5., 6., 7., 8., 3., 4., 9., 10., 11., 12.]);
        let back = g.slice(c, 1, 1, 3).unwrap();
        assert_eq!(vals(&g, back), vals(&g, b));
    }

    #[test]
    fn slice_rejects_out_of_range() {
        let g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        assert!(g.slice(a, 1, 2, 4).is_err());
        assert!(g.slice(a, 2, 0, 1).is_err());
    }

    #[test]
    fn dropout_eval_is_identity_and_train_is_stochastic() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        use rand::SeedableRng;
        let g = Graph::new();
        let x = g.constant(Tensor::ones(&[1000]));
        let y = g.dropout(x, 0.5, false, &mut rng).unwrap();
        assert_eq!(x, y);
        assert!(!g.has_stochastic_ops());
        let y = g.dropout(x, 0.5, true, &mut rng).unwrap();
        assert!(g.has_stochastic_ops());
        let v = vals(&g, y);
        assert!(v.iter().all(|&e| e == 0.0 || e == 2.0));
        let mean = v.iter().sum::<f64>() / 1000.0;
        assert!((mean - 1.0).abs() < 0.15);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert_eq!(sigmoid(0.0), 0.5);
    }
}
