//! Miniature diffusion transformer that predicts the noise in a latent sequence.
//!
//! Pre-norm blocks of self-attention over latent frames, cross-attention to
//! text tokens and a GELU feed-forward, with a sinusoidal timestep embedding
//! (through a two-layer SiLU MLP) and learned absolute positions added to
//! every token. The backward pass is written out by hand; base weights only
//! receive gradients while [`DiTModel::base_trainable`] is set.

use ndarray::{s, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::codec::LATENT_CHANNELS;
use crate::conditioning::{ProjectionWeights, TextEmbedding, DEFAULT_TEXT_DIM};
use crate::error::{Error, Result};
use crate::lora::{AdaptedCache, AdaptedLinear, LoraAdapter};
use crate::nn::{
    gelu, gelu_backward, join, push2, push2_mut, silu, silu_backward, softmax_rows, LayerNorm, LayerNormCache,
    Linear, Params,
};
pub use crate::nn::{ParamGroup, ParamMut, ParamRef};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiTConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_text: usize,
    pub n_channels: usize,
    pub max_frames: usize,
    /// Number of diffusion timesteps the model accepts.
    pub n_timesteps: usize,
}

impl Default for DiTConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_layers: 4,
            n_heads: 4,
            d_text: DEFAULT_TEXT_DIM,
            n_channels: LATENT_CHANNELS,
            max_frames: 1024,
            n_timesteps: 1000,
        }
    }
}

impl DiTConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            self.d_model,
            self.n_layers,
            self.n_heads,
            self.d_text,
            self.n_channels,
            self.max_frames,
            self.n_timesteps,
        ];
        if sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!("model sizes must be positive: {self:?}")));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.n_heads
            )));
        }
        if self.d_model % 2 != 0 {
            return Err(Error::InvalidArgument("d_model must be even".into()));
        }
        if self.n_channels != LATENT_CHANNELS {
            return Err(Error::InvalidArgument(format!(
                "latent channel count is fixed at {LATENT_CHANNELS}"
            )));
        }
        Ok(())
    }

    pub fn ff_width(&self) -> usize {
        4 * self.d_model
    }
}

/// Multi-head scaled dot-product attention with adapter slots on Q and V.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub q: AdaptedLinear,
    pub k: Linear,
    pub v: AdaptedLinear,
    pub o: Linear,
    pub n_heads: usize,
}

struct AttnCache {
    xq: Array2<f64>,
    xkv: Array2<f64>,
    q_cache: AdaptedCache,
    v_cache: AdaptedCache,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    ctx: Array2<f64>,
}

impl Attention {
    fn init(d_model: usize, d_kv: usize, n_heads: usize, rng: &mut impl Rng) -> Self {
        Self {
            q: AdaptedLinear::new(Linear::init(d_model, d_model, rng)),
            k: Linear::init(d_kv, d_model, rng),
            v: AdaptedLinear::new(Linear::init(d_kv, d_model, rng)),
            o: Linear::init(d_model, d_model, rng),
            n_heads,
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            q: self.q.zeros_like(),
            k: Linear::zeros(self.k.d_in(), self.k.d_out()),
            v: self.v.zeros_like(),
            o: Linear::zeros(self.o.d_in(), self.o.d_out()),
            n_heads: self.n_heads,
        }
    }

    fn head_dim(&self) -> usize {
        self.q.base.d_out() / self.n_heads
    }

    fn check(&self, xq: &Array2<f64>, xkv: &Array2<f64>) -> Result<()> {
        if xq.ncols() != self.q.base.d_in() {
            return Err(Error::shape("attention query width", self.q.base.d_in(), xq.ncols()));
        }
        if xkv.ncols() != self.k.d_in() {
            return Err(Error::shape("attention key/value width", self.k.d_in(), xkv.ncols()));
        }
        if xkv.nrows() == 0 {
            return Err(Error::InvalidArgument("attention needs at least one key".into()));
        }
        if self.q.base.d_out() % self.n_heads != 0 {
            return Err(Error::InvalidArgument("model width not divisible by head count".into()));
        }
        Ok(())
    }

    /// Attends `q_tokens` over `kv_tokens`.
    pub fn forward(&self, q_tokens: &Array2<f64>, kv_tokens: &Array2<f64>) -> Result<Array2<f64>> {
        self.check(q_tokens, kv_tokens)?;
        Ok(self.forward_cached(q_tokens, kv_tokens).0)
    }

    /// Per-head softmax weights, each `(queries, keys)`.
    pub fn weights(&self, q_tokens: &Array2<f64>, kv_tokens: &Array2<f64>) -> Result<Vec<Array2<f64>>> {
        self.check(q_tokens, kv_tokens)?;
        Ok(self.forward_cached(q_tokens, kv_tokens).1.probs)
    }

    fn forward_cached(&self, xq: &Array2<f64>, xkv: &Array2<f64>) -> (Array2<f64>, AttnCache) {
        let (q, q_cache) = self.q.forward(xq);
        let k = self.k.forward(xkv);
        let (v, v_cache) = self.v.forward(xkv);
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut ctx = Array2::zeros((xq.nrows(), self.q.base.d_out()));
        let mut probs = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut p = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            softmax_rows(&mut p);
            ctx.slice_mut(cols).assign(&p.dot(&v.slice(cols)));
            probs.push(p);
        }
        let y = self.o.forward(&ctx);
        let cache = AttnCache {
            xq: xq.clone(),
            xkv: xkv.clone(),
            q_cache,
            v_cache,
            q,
            k,
            v,
            probs,
            ctx,
        };
        (y, cache)
    }

    /// Returns `(d_query_tokens, d_kv_tokens)`.
    fn backward(&self, c: &AttnCache, dy: &Array2<f64>, grad: &mut Attention, base: bool) -> (Array2<f64>, Array2<f64>) {
        let dctx = self.o.backward(&c.ctx, dy, base.then_some(&mut grad.o));
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = Array2::zeros(c.q.raw_dim());
        let mut dk = Array2::zeros(c.k.raw_dim());
        let mut dv = Array2::zeros(c.v.raw_dim());
        for (h, p) in c.probs.iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let dctx_h = dctx.slice(cols);
            let dp = dctx_h.dot(&c.v.slice(cols).t());
            dv.slice_mut(cols).assign(&p.t().dot(&dctx_h));
            let mut ds = &dp * p;
            let row_dot = ds.sum_axis(Axis(1));
            for ((mut row, pr), rd) in ds.rows_mut().into_iter().zip(p.rows()).zip(&row_dot) {
                row.scaled_add(-rd, &pr);
            }
            ds *= scale;
            dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
        }
        let dxq = self.q.backward(&c.xq, &c.q_cache, &dq, &mut grad.q, base);
        let mut dxkv = self.k.backward(&c.xkv, &dk, base.then_some(&mut grad.k));
        dxkv += &self.v.backward(&c.xkv, &c.v_cache, &dv, &mut grad.v, base);
        (dxq, dxkv)
    }

    fn num_params(&self) -> usize {
        self.q.base.num_params() + self.k.num_params() + self.v.base.num_params() + self.o.num_params()
    }
}

impl Params for Attention {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.q.collect(&join(prefix, "q"), out);
        self.k.collect(&join(prefix, "k"), out);
        self.v.collect(&join(prefix, "v"), out);
        self.o.collect(&join(prefix, "o"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        self.q.collect_mut(&join(prefix, "q"), out);
        self.k.collect_mut(&join(prefix, "k"), out);
        self.v.collect_mut(&join(prefix, "v"), out);
        self.o.collect_mut(&join(prefix, "o"), out);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub ln1: LayerNorm,
    pub self_attn: Attention,
    pub ln2: LayerNorm,
    pub cross_attn: Attention,
    pub ln3: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

struct BlockCache {
    ln1: LayerNormCache,
    self_attn: AttnCache,
    ln2: LayerNormCache,
    cross_attn: AttnCache,
    ln3: LayerNormCache,
    a3: Array2<f64>,
    f1: Array2<f64>,
    g: Array2<f64>,
}

impl Block {
    fn init(cfg: &DiTConfig, rng: &mut impl Rng) -> Self {
        Self {
            ln1: LayerNorm::new(cfg.d_model),
            self_attn: Attention::init(cfg.d_model, cfg.d_model, cfg.n_heads, rng),
            ln2: LayerNorm::new(cfg.d_model),
            cross_attn: Attention::init(cfg.d_model, cfg.d_text, cfg.n_heads, rng),
            ln3: LayerNorm::new(cfg.d_model),
            ff1: Linear::init(cfg.d_model, cfg.ff_width(), rng),
            ff2: Linear::init(cfg.ff_width(), cfg.d_model, rng),
        }
    }

    fn zeros_like(&self) -> Self {
        let d = self.ln1.gamma.len();
        Self {
            ln1: LayerNorm::zeros(d),
            self_attn: self.self_attn.zeros_like(),
            ln2: LayerNorm::zeros(d),
            cross_attn: self.cross_attn.zeros_like(),
            ln3: LayerNorm::zeros(d),
            ff1: Linear::zeros(self.ff1.d_in(), self.ff1.d_out()),
            ff2: Linear::zeros(self.ff2.d_in(), self.ff2.d_out()),
        }
    }

    fn forward(&self, mut h: Array2<f64>, text: &Array2<f64>) -> (Array2<f64>, BlockCache) {
        let (a1, ln1) = self.ln1.forward(&h);
        let (sa, self_attn) = self.self_attn.forward_cached(&a1, &a1);
        h += &sa;
        let (a2, ln2) = self.ln2.forward(&h);
        let (ca, cross_attn) = self.cross_attn.forward_cached(&a2, text);
        h += &ca;
        let (a3, ln3) = self.ln3.forward(&h);
        let f1 = self.ff1.forward(&a3);
        let g = gelu(&f1);
        h += &self.ff2.forward(&g);
        let cache = BlockCache {
            ln1,
            self_attn,
            ln2,
            cross_attn,
            ln3,
            a3,
            f1,
            g,
        };
        (h, cache)
    }

    fn backward(&self, c: &BlockCache, mut dh: Array2<f64>, grad: &mut Block, base: bool) -> Array2<f64> {
        let dg = self.ff2.backward(&c.g, &dh, base.then_some(&mut grad.ff2));
        let df1 = gelu_backward(&c.f1, &dg);
        let da3 = self.ff1.backward(&c.a3, &df1, base.then_some(&mut grad.ff1));
        dh += &self.ln3.backward(&c.ln3, &da3, base.then_some(&mut grad.ln3));
        let (da2, _) = self.cross_attn.backward(&c.cross_attn, &dh, &mut grad.cross_attn, base);
        dh += &self.ln2.backward(&c.ln2, &da2, base.then_some(&mut grad.ln2));
        let (dq, dkv) = self.self_attn.backward(&c.self_attn, &dh, &mut grad.self_attn, base);
        dh += &self.ln1.backward(&c.ln1, &(dq + dkv), base.then_some(&mut grad.ln1));
        dh
    }

    fn num_params(&self) -> usize {
        self.ln1.num_params()
            + self.self_attn.num_params()
            + self.ln2.num_params()
            + self.cross_attn.num_params()
            + self.ln3.num_params()
            + self.ff1.num_params()
            + self.ff2.num_params()
    }
}

impl Params for Block {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.ln1.collect(&join(prefix, "ln1"), out);
        self.self_attn.collect(&join(prefix, "self_attn"), out);
        self.ln2.collect(&join(prefix, "ln2"), out);
        self.cross_attn.collect(&join(prefix, "cross_attn"), out);
        self.ln3.collect(&join(prefix, "ln3"), out);
        self.ff1.collect(&join(prefix, "ff1"), out);
        self.ff2.collect(&join(prefix, "ff2"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        self.ln1.collect_mut(&join(prefix, "ln1"), out);
        self.self_attn.collect_mut(&join(prefix, "self_attn"), out);
        self.ln2.collect_mut(&join(prefix, "ln2"), out);
        self.cross_attn.collect_mut(&join(prefix, "cross_attn"), out);
        self.ln3.collect_mut(&join(prefix, "ln3"), out);
        self.ff1.collect_mut(&join(prefix, "ff1"), out);
        self.ff2.collect_mut(&join(prefix, "ff2"), out);
    }
}

/// `[cos(t·ωᵢ), sin(t·ωᵢ)]` with `ωᵢ = 10000^(-i/half)`.
pub fn timestep_embedding(t: usize, dim: usize) -> Array1<f64> {
    let half = dim / 2;
    let mut e = Array1::zeros(dim);
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        e[i] = arg.cos();
        e[half + i] = arg.sin();
    }
    e
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeMlp {
    pub lin1: Linear,
    pub lin2: Linear,
}

struct TimeCache {
    sinusoid: Array2<f64>,
    pre: Array1<f64>,
    act: Array2<f64>,
}

impl TimeMlp {
    fn forward(&self, t: usize) -> (Array1<f64>, TimeCache) {
        let d = self.lin1.d_in();
        let sinusoid = timestep_embedding(t, d).insert_axis(Axis(0));
        let pre = self.lin1.forward(&sinusoid).row(0).to_owned();
        let act = silu(&pre).insert_axis(Axis(0));
        let out = self.lin2.forward(&act).row(0).to_owned();
        (out, TimeCache { sinusoid, pre, act })
    }

    fn backward(&self, c: &TimeCache, dout: &Array1<f64>, grad: &mut TimeMlp) {
        let dact = self.lin2.backward(&c.act, &dout.clone().insert_axis(Axis(0)), Some(&mut grad.lin2));
        let dpre = silu_backward(&c.pre, &dact.row(0).to_owned());
        self.lin1.backward(&c.sinusoid, &dpre.insert_axis(Axis(0)), Some(&mut grad.lin1));
    }
}

/// Trainable/total parameter counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCounts {
    pub total: usize,
    pub trainable: usize,
}

impl ParamCounts {
    pub fn fraction(&self) -> f64 {
        self.trainable as f64 / self.total as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiTModel {
    pub config: DiTConfig,
    pub control_proj: ProjectionWeights,
    pub in_proj: Linear,
    pub pos: Array2<f64>,
    pub time: TimeMlp,
    pub blocks: Vec<Block>,
    pub ln_f: LayerNorm,
    pub head: Linear,
    /// Whether base (non-adapter, non-projection) weights receive gradients.
    pub base_trainable: bool,
}

/// Everything the backward pass needs from one forward call.
pub struct ForwardCache {
    z_in: Array2<f64>,
    offset: usize,
    time: TimeCache,
    blocks: Vec<BlockCache>,
    ln_f: LayerNormCache,
    hf: Array2<f64>,
}

impl DiTModel {
    /// Randomly initialised model with frozen base weights and a random control projection.
    pub fn new(config: DiTConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let in_proj = Linear::init(config.n_channels, d, &mut rng);
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        let pos = Array2::from_shape_fn((config.max_frames, d), |_| normal.sample(&mut rng));
        let time = TimeMlp {
            lin1: Linear::init(d, d, &mut rng),
            lin2: Linear::init(d, d, &mut rng),
        };
        let blocks = (0..config.n_layers).map(|_| Block::init(&config, &mut rng)).collect();
        let head = Linear::init(d, config.n_channels, &mut rng);
        let control_proj = ProjectionWeights::random(&mut rng);
        Ok(Self {
            config,
            control_proj,
            in_proj,
            pos,
            time,
            blocks,
            ln_f: LayerNorm::new(d),
            head,
            base_trainable: false,
        })
    }

    /// Same structure, every parameter zero. Used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let d = self.config.d_model;
        Self {
            config: self.config,
            control_proj: ProjectionWeights::zeros(),
            in_proj: Linear::zeros(self.in_proj.d_in(), d),
            pos: Array2::zeros(self.pos.raw_dim()),
            time: TimeMlp {
                lin1: Linear::zeros(d, d),
                lin2: Linear::zeros(d, d),
            },
            blocks: self.blocks.iter().map(Block::zeros_like).collect(),
            ln_f: LayerNorm::zeros(d),
            head: Linear::zeros(d, self.head.d_out()),
            base_trainable: self.base_trainable,
        }
    }

    /// All Q and V projections (self- and cross-attention), with names.
    pub fn adapter_sites_mut(&mut self) -> Vec<(String, &mut AdaptedLinear)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.push((format!("blocks.{i}.self_attn.q"), &mut b.self_attn.q));
            out.push((format!("blocks.{i}.self_attn.v"), &mut b.self_attn.v));
            out.push((format!("blocks.{i}.cross_attn.q"), &mut b.cross_attn.q));
            out.push((format!("blocks.{i}.cross_attn.v"), &mut b.cross_attn.v));
        }
        out
    }

    pub fn adapter_sites(&self) -> Vec<(String, &AdaptedLinear)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("blocks.{i}.self_attn.q"), &b.self_attn.q));
            out.push((format!("blocks.{i}.self_attn.v"), &b.self_attn.v));
            out.push((format!("blocks.{i}.cross_attn.q"), &b.cross_attn.q));
            out.push((format!("blocks.{i}.cross_attn.v"), &b.cross_attn.v));
        }
        out
    }

    /// Attaches fresh rank-`rank` adapters to every Q/V site.
    pub fn attach_adapters(&mut self, rank: usize, alpha: f64, seed: u64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (_, site) in self.adapter_sites_mut() {
            let (d_in, d_out) = (site.base.d_in(), site.base.d_out());
            site.adapter = Some(LoraAdapter::init_with_alpha(d_in, d_out, rank, alpha, &mut rng)?);
        }
        Ok(())
    }

    /// Folds every adapter into its base weight and removes it.
    pub fn merge_adapters(&mut self) -> Result<()> {
        for (_, site) in self.adapter_sites_mut() {
            site.merge_adapter()?;
        }
        Ok(())
    }

    pub fn remove_adapters(&mut self) {
        for (_, site) in self.adapter_sites_mut() {
            site.adapter = None;
        }
    }

    pub fn has_adapters(&self) -> bool {
        self.adapter_sites().iter().any(|(_, s)| s.adapter.is_some())
    }

    pub fn params(&self) -> Vec<ParamRef<'_>> {
        let mut out = Vec::new();
        self.collect("", &mut out);
        out
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut out = Vec::new();
        self.collect_mut("", &mut out);
        out
    }

    pub fn is_trainable(&self, group: ParamGroup) -> bool {
        group != ParamGroup::Base || self.base_trainable
    }

    pub fn count_params(&self) -> ParamCounts {
        let mut counts = ParamCounts { total: 0, trainable: 0 };
        for p in self.params() {
            counts.total += p.data.len();
            if self.is_trainable(p.group) {
                counts.trainable += p.data.len();
            }
        }
        counts
    }

    /// Base parameter count computed from the layer shapes, independently of [`Params`].
    pub fn base_param_count(&self) -> usize {
        self.in_proj.num_params()
            + self.pos.len()
            + self.time.lin1.num_params()
            + self.time.lin2.num_params()
            + self.blocks.iter().map(Block::num_params).sum::<usize>()
            + self.ln_f.num_params()
            + self.head.num_params()
    }

    fn check_input(&self, z_in: &Array2<f64>, t: usize, text: &TextEmbedding, offset: usize) -> Result<()> {
        if z_in.ncols() != self.config.n_channels {
            return Err(Error::shape("latent channels", self.config.n_channels, z_in.ncols()));
        }
        if z_in.nrows() == 0 || offset + z_in.nrows() > self.config.max_frames {
            return Err(Error::shape(
                "latent frames",
                format!("1..={}", self.config.max_frames),
                offset + z_in.nrows(),
            ));
        }
        if t >= self.config.n_timesteps {
            return Err(Error::InvalidArgument(format!(
                "timestep {t} outside 0..{}",
                self.config.n_timesteps
            )));
        }
        if text.dim() != self.config.d_text {
            return Err(Error::shape("text width", self.config.d_text, text.dim()));
        }
        Ok(())
    }

    /// Noise prediction for fused latents `z_in` (frames x 64) at timestep `t`.
    pub fn forward(&self, z_in: &Array2<f64>, t: usize, text: &TextEmbedding) -> Result<Array2<f64>> {
        self.forward_at(z_in, t, text, 0)
    }

    /// As [`forward`](Self::forward) for a window whose first frame sits at position `offset`.
    pub fn forward_at(&self, z_in: &Array2<f64>, t: usize, text: &TextEmbedding, offset: usize) -> Result<Array2<f64>> {
        Ok(self.forward_train(z_in, t, text, offset)?.0)
    }

    pub fn forward_train(
        &self,
        z_in: &Array2<f64>,
        t: usize,
        text: &TextEmbedding,
        offset: usize,
    ) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(z_in, t, text, offset)?;
        let n = z_in.nrows();
        let (temb, time) = self.time.forward(t);
        let mut h = self.in_proj.forward(z_in);
        h += &self.pos.slice(s![offset..offset + n, ..]);
        h += &temb;
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (next, cache) = b.forward(h, text.tokens());
            h = next;
            blocks.push(cache);
        }
        let (hf, ln_f) = self.ln_f.forward(&h);
        let out = self.head.forward(&hf);
        let cache = ForwardCache {
            z_in: z_in.clone(),
            offset,
            time,
            blocks,
            ln_f,
            hf,
        };
        Ok((out, cache))
    }

    /// Accumulates parameter gradients into `grad` and returns `d z_in`.
    pub fn backward(&self, cache: &ForwardCache, d_out: &Array2<f64>, grad: &mut DiTModel) -> Array2<f64> {
        let base = self.base_trainable;
        let dhf = self.head.backward(&cache.hf, d_out, base.then_some(&mut grad.head));
        let mut dh = self.ln_f.backward(&cache.ln_f, &dhf, base.then_some(&mut grad.ln_f));
        for ((b, c), g) in self.blocks.iter().zip(&cache.blocks).zip(grad.blocks.iter_mut()).rev() {
            dh = b.backward(c, dh, g, base);
        }
        if base {
            let n = dh.nrows();
            let mut pos = grad.pos.slice_mut(s![cache.offset..cache.offset + n, ..]);
            pos += &dh;
            self.time.backward(&cache.time, &dh.sum_axis(Axis(0)), &mut grad.time);
        }
        self.in_proj.backward(&cache.z_in, &dh, base.then_some(&mut grad.in_proj))
    }
}

impl Params for TimeMlp {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.lin1.collect(&join(prefix, "lin1"), out);
        self.lin2.collect(&join(prefix, "lin2"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        self.lin1.collect_mut(&join(prefix, "lin1"), out);
        self.lin2.collect_mut(&join(prefix, "lin2"), out);
    }
}

impl Params for DiTModel {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.control_proj.collect(&join(prefix, "control_proj"), out);
        self.in_proj.collect(&join(prefix, "in_proj"), out);
        push2(out, join(prefix, "pos"), ParamGroup::Base, &self.pos);
        self.time.collect(&join(prefix, "time"), out);
        for (i, b) in self.blocks.iter().enumerate() {
            b.collect(&join(prefix, &format!("blocks.{i}")), out);
        }
        self.ln_f.collect(&join(prefix, "ln_f"), out);
        self.head.collect(&join(prefix, "head"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        self.control_proj.collect_mut(&join(prefix, "control_proj"), out);
        self.in_proj.collect_mut(&join(prefix, "in_proj"), out);
        push2_mut(out, join(prefix, "pos"), ParamGroup::Base, &mut self.pos);
        self.time.collect_mut(&join(prefix, "time"), out);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.collect_mut(&join(prefix, &format!("blocks.{i}")), out);
        }
        self.ln_f.collect_mut(&join(prefix, "ln_f"), out);
        self.head.collect_mut(&join(prefix, "head"), out);
    }
}
