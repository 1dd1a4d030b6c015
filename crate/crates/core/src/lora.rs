//! Low-rank adapters: `W x + (α/r)·B·(A·x)` with `A` Gaussian and `B` zero
//! at initialisation, so a fresh adapter leaves its layer untouched.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::dit::DiTModel;
use crate::error::{Error, Result};
use crate::nn::{join, push2, push2_mut, Linear, ParamGroup, ParamMut, ParamRef, Params};

/// Standard deviation of the Gaussian `A` initialisation.
pub const LORA_INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    /// `(rank, d_in)`.
    pub a: Array2<f64>,
    /// `(d_out, rank)`.
    pub b: Array2<f64>,
    pub alpha: f64,
    merged: bool,
}

impl LoraAdapter {
    /// Gaussian `A`, zero `B`, `alpha = rank`.
    pub fn init(d_in: usize, d_out: usize, rank: usize, rng: &mut impl Rng) -> Result<Self> {
        Self::init_with_alpha(d_in, d_out, rank, rank as f64, rng)
    }

    pub fn init_with_alpha(d_in: usize, d_out: usize, rank: usize, alpha: f64, rng: &mut impl Rng) -> Result<Self> {
        if rank == 0 {
            return Err(Error::InvalidArgument("LoRA rank must be at least 1".into()));
        }
        let normal = Normal::new(0.0, LORA_INIT_STD).expect("valid std");
        Ok(Self {
            a: Array2::from_shape_fn((rank, d_in), |_| normal.sample(rng)),
            b: Array2::zeros((d_out, rank)),
            alpha,
            merged: false,
        })
    }

    pub fn from_factors(a: Array2<f64>, b: Array2<f64>, alpha: f64) -> Result<Self> {
        if a.nrows() == 0 || a.nrows() != b.ncols() {
            return Err(Error::shape("lora factors", format!("rank {}", a.nrows()), b.ncols()));
        }
        Ok(Self {
            a,
            b,
            alpha,
            merged: false,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            a: Array2::zeros(self.a.raw_dim()),
            b: Array2::zeros(self.b.raw_dim()),
            alpha: self.alpha,
            merged: self.merged,
        }
    }

    pub fn rank(&self) -> usize {
        self.a.nrows()
    }

    pub fn d_in(&self) -> usize {
        self.a.ncols()
    }

    pub fn d_out(&self) -> usize {
        self.b.nrows()
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank() as f64
    }

    pub fn is_merged(&self) -> bool {
        self.merged
    }

    pub fn num_params(&self) -> usize {
        self.a.len() + self.b.len()
    }

    /// Dense `(α/r)·B·A`.
    pub fn delta(&self) -> Array2<f64> {
        self.b.dot(&self.a) * self.scale()
    }

    fn check(&self, w: &Array2<f64>) -> Result<()> {
        if w.dim() != (self.d_out(), self.d_in()) {
            return Err(Error::shape(
                "lora base weight",
                format!("{}x{}", self.d_out(), self.d_in()),
                format!("{}x{}", w.nrows(), w.ncols()),
            ));
        }
        Ok(())
    }

    /// `W x + (α/r)·B·(A·x)`.
    pub fn apply(&self, w: &Array2<f64>, x: &Array1<f64>) -> Result<Array1<f64>> {
        self.check(w)?;
        if x.len() != self.d_in() {
            return Err(Error::shape("lora input", self.d_in(), x.len()));
        }
        Ok(w.dot(x) + self.b.dot(&self.a.dot(x)) * self.scale())
    }

    /// Folds the delta into `w`. Fails on a second merge.
    pub fn merge(&mut self, w: &mut Array2<f64>) -> Result<()> {
        self.check(w)?;
        if self.merged {
            return Err(Error::AlreadyMerged);
        }
        *w += &self.delta();
        self.merged = true;
        Ok(())
    }
}

/// A projection with an optional adapter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedLinear {
    pub base: Linear,
    pub adapter: Option<LoraAdapter>,
}

pub struct AdaptedCache {
    /// `x Aᵀ`, present when an adapter is attached.
    low: Option<Array2<f64>>,
}

impl AdaptedLinear {
    pub fn new(base: Linear) -> Self {
        Self { base, adapter: None }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, AdaptedCache) {
        let mut y = self.base.forward(x);
        let low = self.adapter.as_ref().filter(|a| !a.merged).map(|ad| {
            let low = x.dot(&ad.a.t());
            y.scaled_add(ad.scale(), &low.dot(&ad.b.t()));
            low
        });
        (y, AdaptedCache { low })
    }

    pub fn backward(
        &self,
        x: &Array2<f64>,
        cache: &AdaptedCache,
        dy: &Array2<f64>,
        grad: &mut AdaptedLinear,
        base_trainable: bool,
    ) -> Array2<f64> {
        let mut dx = self.base.backward(x, dy, base_trainable.then_some(&mut grad.base));
        if let (Some(ad), Some(low), Some(g)) = (&self.adapter, &cache.low, grad.adapter.as_mut()) {
            let s = ad.scale();
            g.b.scaled_add(s, &dy.t().dot(low));
            let dlow = dy.dot(&ad.b) * s;
            g.a += &dlow.t().dot(x);
            dx += &dlow.dot(&ad.a);
        }
        dx
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            base: Linear::zeros(self.base.d_in(), self.base.d_out()),
            adapter: self.adapter.as_ref().map(LoraAdapter::zeros_like),
        }
    }

    /// Merges and drops the adapter.
    pub fn merge_adapter(&mut self) -> Result<()> {
        if let Some(mut ad) = self.adapter.take() {
            ad.merge(&mut self.base.weight)?;
        }
        Ok(())
    }
}

impl Params for AdaptedLinear {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.base.collect(prefix, out);
        if let Some(ad) = &self.adapter {
            push2(out, join(prefix, "lora_a"), ParamGroup::Adapter, &ad.a);
            push2(out, join(prefix, "lora_b"), ParamGroup::Adapter, &ad.b);
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        self.base.collect_mut(prefix, out);
        if let Some(ad) = &mut self.adapter {
            push2_mut(out, join(prefix, "lora_a"), ParamGroup::Adapter, &mut ad.a);
            push2_mut(out, join(prefix, "lora_b"), ParamGroup::Adapter, &mut ad.b);
        }
    }
}

/// Trainable share of the model: adapters plus the control projection (and
/// the base weights when those are unfrozen).
pub fn trainable_fraction(model: &DiTModel) -> f64 {
    let counts = model.count_params();
    counts.trainable as f64 / counts.total as f64
}
