//! Dense building blocks with explicit forward/backward passes.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

/// Parameter ownership class, which decides trainability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    /// Pre-trained transformer weights; frozen while adapting.
    Base,
    /// LoRA factors.
    Adapter,
    /// Control-signal projection.
    Projection,
}

pub struct ParamRef<'a> {
    pub name: String,
    pub group: ParamGroup,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

pub struct ParamMut<'a> {
    pub name: String,
    pub group: ParamGroup,
    pub shape: Vec<usize>,
    pub data: &'a mut [f64],
}

/// Uniform parameter enumeration; `collect` and `collect_mut` must agree on order.
pub trait Params {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>);
    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>);
}

pub(crate) fn push2<'a>(out: &mut Vec<ParamRef<'a>>, name: String, group: ParamGroup, a: &'a Array2<f64>) {
    out.push(ParamRef {
        name,
        group,
        shape: a.shape().to_vec(),
        data: a.as_slice().expect("standard layout"),
    });
}

pub(crate) fn push1<'a>(out: &mut Vec<ParamRef<'a>>, name: String, group: ParamGroup, a: &'a Array1<f64>) {
    out.push(ParamRef {
        name,
        group,
        shape: a.shape().to_vec(),
        data: a.as_slice().expect("standard layout"),
    });
}

pub(crate) fn push2_mut<'a>(out: &mut Vec<ParamMut<'a>>, name: String, group: ParamGroup, a: &'a mut Array2<f64>) {
    out.push(ParamMut {
        name,
        group,
        shape: a.shape().to_vec(),
        data: a.as_slice_mut().expect("standard layout"),
    });
}

pub(crate) fn push1_mut<'a>(out: &mut Vec<ParamMut<'a>>, name: String, group: ParamGroup, a: &'a mut Array1<f64>) {
    out.push(ParamMut {
        name,
        group,
        shape: a.shape().to_vec(),
        data: a.as_slice_mut().expect("standard layout"),
    });
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// `y = x Wᵀ + b` with `W` stored `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    /// Uniform(±1/√fan_in) weights, zero bias.
    pub fn init(d_in: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (d_in as f64).sqrt();
        Self {
            weight: Array2::from_shape_fn((d_out, d_in), |_| rng.random_range(-bound..bound)),
            bias: Array1::zeros(d_out),
        }
    }

    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Self {
            weight: Array2::zeros((d_out, d_in)),
            bias: Array1::zeros(d_out),
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn d_out(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    /// Returns `dx`; accumulates parameter gradients into `grad` when given.
    pub fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>, grad: Option<&mut Linear>) -> Array2<f64> {
        if let Some(g) = grad {
            g.weight += &dy.t().dot(x);
            g.bias += &dy.sum_axis(Axis(0));
        }
        dy.dot(&self.weight)
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub(crate) fn collect_group<'a>(&'a self, prefix: &str, group: ParamGroup, out: &mut Vec<ParamRef<'a>>) {
        push2(out, join(prefix, "weight"), group, &self.weight);
        push1(out, join(prefix, "bias"), group, &self.bias);
    }

    pub(crate) fn collect_group_mut<'a>(&'a mut self, prefix: &str, group: ParamGroup, out: &mut Vec<ParamMut<'a>>) {
        push2_mut(out, join(prefix, "weight"), group, &mut self.weight);
        push1_mut(out, join(prefix, "bias"), group, &mut self.bias);
    }
}

impl Params for Linear {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.collect_group(prefix, ParamGroup::Base, out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        self.collect_group_mut(prefix, ParamGroup::Base, out);
    }
}

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn new(d: usize) -> Self {
        Self {
            gamma: Array1::ones(d),
            beta: Array1::zeros(d),
        }
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            gamma: Array1::zeros(d),
            beta: Array1::zeros(d),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, LayerNormCache) {
        let d = x.ncols() as f64;
        let mut xhat = x.clone();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, is) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / d;
            row -= mean;
            let var = row.iter().map(|v| v * v).sum::<f64>() / d;
            *is = 1.0 / (var + LN_EPS).sqrt();
            row *= *is;
        }
        let y = &xhat * &self.gamma + &self.beta;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &LayerNormCache, dy: &Array2<f64>, grad: Option<&mut LayerNorm>) -> Array2<f64> {
        if let Some(g) = grad {
            g.gamma += &(dy * &cache.xhat).sum_axis(Axis(0));
            g.beta += &dy.sum_axis(Axis(0));
        }
        let d = dy.ncols() as f64;
        let mut dx = dy * &self.gamma;
        for ((mut row, xh), is) in dx.rows_mut().into_iter().zip(cache.xhat.rows()).zip(&cache.inv_std) {
            let mean_d = row.sum() / d;
            let mean_dx = row.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d;
            row.zip_mut_with(&xh, |v, &h| *v = is * (*v - mean_d - h * mean_dx));
        }
        dx
    }

    pub fn num_params(&self) -> usize {
        self.gamma.len() + self.beta.len()
    }
}

impl Params for LayerNorm {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        push1(out, join(prefix, "gamma"), ParamGroup::Base, &self.gamma);
        push1(out, join(prefix, "beta"), ParamGroup::Base, &self.beta);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        push1_mut(out, join(prefix, "gamma"), ParamGroup::Base, &mut self.gamma);
        push1_mut(out, join(prefix, "beta"), ParamGroup::Base, &mut self.beta);
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh-approximated GELU.
pub fn gelu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| 0.5 * v * (1.0 + (GELU_C * (v + 0.044715 * v * v * v)).tanh()))
}

pub fn gelu_backward(x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = dy.clone();
    dx.zip_mut_with(x, |d, &v| {
        let th = (GELU_C * (v + 0.044715 * v * v * v)).tanh();
        let dinner = GELU_C * (1.0 + 3.0 * 0.044715 * v * v);
        *d *= 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * dinner;
    });
    dx
}

pub fn silu(x: &Array1<f64>) -> Array1<f64> {
    x.mapv(|v| v / (1.0 + (-v).exp()))
}

pub fn silu_backward(x: &Array1<f64>, dy: &Array1<f64>) -> Array1<f64> {
    let mut dx = dy.clone();
    dx.zip_mut_with(x, |d, &v| {
        let s = 1.0 / (1.0 + (-v).exp());
        *d *= s * (1.0 + v * (1.0 - s));
    });
    dx
}

/// Row-wise softmax in place.
pub fn softmax_rows(x: &mut Array2<f64>) {
    for mut row in x.rows_mut() {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn numeric_grad(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn gelu_and_silu_derivatives_match_differences() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let a = Array2::from_elem((1, 1), x);
            let g = gelu_backward(&a, &Array2::ones((1, 1)))[[0, 0]];
            let n = numeric_grad(|v| gelu(&Array2::from_elem((1, 1), v))[[0, 0]], x);
            assert!((g - n).abs() < 1e-7, "gelu {x}: {g} vs {n}");
            let a = Array1::from_elem(1, x);
            let g = silu_backward(&a, &Array1::ones(1))[0];
            let n = numeric_grad(|v| silu(&Array1::from_elem(1, v))[0], x);
            assert!((g - n).abs() < 1e-7, "silu {x}: {g} vs {n}");
        }
    }

    #[test]
    fn layer_norm_backward_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut ln = LayerNorm::new(5);
        ln.gamma.mapv_inplace(|_| rng.random_range(0.5..1.5));
        ln.beta.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        let x = Array2::from_shape_fn((3, 5), |_| rng.random_range(-2.0..2.0));
        let w = Array2::from_shape_fn((3, 5), |_| rng.random_range(-1.0..1.0));
        let loss = |x: &Array2<f64>| (ln.forward(x).0 * &w).sum();
        let (_, cache) = ln.forward(&x);
        let dx = ln.backward(&cache, &w, None);
        for i in 0..3 {
            for j in 0..5 {
                let mut xp = x.clone();
                xp[[i, j]] += 1e-6;
                let mut xm = x.clone();
                xm[[i, j]] -= 1e-6;
                let n = (loss(&xp) - loss(&xm)) / 2e-6;
                assert!((dx[[i, j]] - n).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut x = Array2::from_shape_vec((2, 3), vec![1000.0, 1001.0, 999.0, -5.0, 0.0, 5.0]).unwrap();
        softmax_rows(&mut x);
        for r in x.rows() {
            assert!((r.sum() - 1.0).abs() < 1e-12);
        }
    }
}
