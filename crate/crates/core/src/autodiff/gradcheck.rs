//! Central finite-difference checks of reverse-mode gradients.
//!
//! Relative error per element is `|a - n| / max(|a|, |n|, floor)`, where `a`
//! is the autodiff gradient and `n` the central difference
//! `(f(x + h) - f(x - h)) / 2h`. The floor keeps elements whose true
//! gradient is ~0 from dividing round-off by round-off.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{Graph, ParamStore, Var};

#[derive(Debug, Clone, Copy)]
pub struct GradcheckOptions {
    pub step: f64,
    pub floor: f64,
    /// Elements checked per tensor; larger tensors are sampled.
    pub max_elements: usize,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            step: 1e-5,
            floor: 1e-4,
            max_elements: usize::MAX,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ElementCheck {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradcheckReport {
    pub elements: Vec<ElementCheck>,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.elements.iter().map(|e| e.rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&ElementCheck> {
        self.elements
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error() < tol
    }
}

fn rel_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

fn scalar_output(g: &Graph, out: Var) -> Result<f64> {
    let v = g.value(out);
    if v.len() != 1 {
        return Err(Error::Precondition(format!(
            "gradcheck needs a scalar function, got output shape {:?}; reduce it (sum/mean) first",
            v.shape()
        )));
    }
    if g.has_stochastic_ops() {
        return Err(Error::Precondition(
            "gradcheck: stochastic op (train-mode dropout) in graph; freeze it (eval mode or p = 0) first".into(),
        ));
    }
    Ok(v.item())
}

fn pick(len: usize, max: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        let mut idx = sample(rng, len, max).into_vec();
        idx.sort_unstable();
        idx
    }
}

/// Checks `d f(x) / d x` for a scalar function of one tensor.
pub fn gradcheck<F>(f: F, x: &Tensor, opts: GradcheckOptions) -> Result<GradcheckReport>
where
    F: Fn(&Graph, Var) -> Result<Var>,
{
    if !x.is_finite() {
        return Err(Error::NonFinite("gradcheck input".into()));
    }
    let g = Graph::new();
    let xv = g.leaf(x.clone(), true);
    let out = f(&g, xv)?;
    scalar_output(&g, out)?;
    let grads = g.backward(out)?;
    let zeros = Tensor::zeros(x.shape());
    let analytic = grads.wrt(xv).unwrap_or(&zeros);

    let eval = |t: Tensor| -> Result<f64> {
        let g = Graph::no_grad();
        let v = g.leaf(t, false);
        let out = f(&g, v)?;
        scalar_output(&g, out)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradcheckReport::default();
    for i in pick(x.len(), opts.max_elements, &mut rng) {
        let mut plus = x.clone();
        plus.data_mut()[i] += opts.step;
        let mut minus = x.clone();
        minus.data_mut()[i] -= opts.step;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * opts.step);
        let a = analytic.data()[i];
        report.elements.push(ElementCheck {
            tensor: "input".into(),
            index: i,
            analytic: a,
            numeric,
            rel_error: rel_error(a, numeric, opts.floor),
        });
    }
    Ok(report)
}

/// Checks the gradient of a scalar function with respect to every trainable
/// weight in `store`. `f` must build its graph from the store's current values.
pub fn gradcheck_params<F>(mut f: F, store: &mut ParamStore, opts: GradcheckOptions) -> Result<(GradcheckReport, Vec<(String, Tensor)>)>
where
    F: FnMut(&Graph, &mut ParamStore) -> Result<Var>,
{
    let g = Graph::new();
    let out = f(&g, store)?;
    scalar_output(&g, out)?;
    let grads = g.backward(out)?;
    drop(g);
    store.zero_grad();
    store.accumulate(&grads);
    let ids: Vec<_> = store.iter().filter(|(_, p)| p.trainable()).map(|(id, _)| id).collect();
    let analytic: Vec<(String, Tensor)> = ids
        .iter()
        .map(|&id| {
            let p = store.get(id);
            (p.name().to_string(), p.grad().cloned().unwrap_or_else(|| Tensor::zeros(p.value().shape())))
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradcheckReport::default();
    for (&id, (name, grad)) in ids.iter().zip(&analytic) {
        let base = store.value(id).clone();
        for i in pick(base.len(), opts.max_elements, &mut rng) {
            let mut eval = |delta: f64, store: &mut ParamStore| -> Result<f64> {
                let mut t = base.clone();
                t.data_mut()[i] += delta;
                store.set_value(id, t)?;
                let g = Graph::no_grad();
                let out = f(&g, store)?;
                scalar_output(&g, out)
            };
            let fp = eval(opts.step, store)?;
            let fm = eval(-opts.step, store)?;
            let numeric = (fp - fm) / (2.0 * opts.step);
            let a = grad.data()[i];
            report.elements.push(ElementCheck {
                tensor: name.clone(),
                index: i,
                analytic: a,
                numeric,
                rel_error: rel_error(a, numeric, opts.floor),
            });
        }
        store.set_value(id, base)?;
    }
    Ok((report, analytic))
}
