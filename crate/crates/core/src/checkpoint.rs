//! Versioned binary checkpoints for base weights and adapters.
//!
//! Layout, little-endian: magic `APCK`, `u32` version, `u32` kind (0 base,
//! 1 adapters), `u32` metadata length and UTF-8 `key=value` lines, `u32`
//! tensor count, then per tensor a `u32`-prefixed name, `u32` rank, `u32`
//! dims and `f32` values in row-major order.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::conditioning::ProjectionWeights;
use crate::dit::{DiTConfig, DiTModel};
use crate::error::{Error, Result};
use crate::features::{Affine, ControlStats};
use crate::lora::LoraAdapter;
use crate::nn::{Linear, ParamGroup};

const MAGIC: &[u8; 4] = b"APCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const FORMAT: &str = "checkpoint";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointKind {
    Base,
    Adapters,
}

/// Named f32 tensors with string metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub kind: CheckpointKind,
    pub metadata: BTreeMap<String, String>,
    pub tensors: Vec<(String, Vec<usize>, Vec<f32>)>,
}

impl TensorFile {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let kind = match self.kind {
            CheckpointKind::Base => 0u32,
            CheckpointKind::Adapters => 1,
        };
        out.extend_from_slice(&kind.to_le_bytes());
        let meta: String = self.metadata.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        put_bytes(&mut out, meta.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, shape, data) in &self.tensors {
            put_bytes(&mut out, name.as_bytes());
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &d in shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::format(FORMAT, "bad magic"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(FORMAT, format!("unsupported version {version}")));
        }
        let kind = match r.u32()? {
            0 => CheckpointKind::Base,
            1 => CheckpointKind::Adapters,
            k => return Err(Error::format(FORMAT, format!("unknown kind {k}"))),
        };
        let meta_len = r.u32()? as usize;
        let meta = std::str::from_utf8(r.take(meta_len)?).map_err(|_| Error::format(FORMAT, "metadata is not UTF-8"))?;
        let mut metadata = BTreeMap::new();
        for line in meta.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(FORMAT, format!("bad metadata line '{line}'")))?;
            metadata.insert(k.to_string(), v.to_string());
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::format(FORMAT, "tensor name is not UTF-8"))?;
            let rank = r.u32()? as usize;
            if rank > 4 {
                return Err(Error::format(FORMAT, format!("tensor '{name}' has rank {rank}")));
            }
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::format(FORMAT, "tensor too large"))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            tensors.push((name, shape, data));
        }
        if r.pos != bytes.len() {
            return Err(Error::format(FORMAT, "trailing bytes"));
        }
        Ok(Self { kind, metadata, tensors })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    fn meta<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .metadata
            .get(key)
            .ok_or_else(|| Error::format(FORMAT, format!("missing metadata '{key}'")))?;
        raw.parse()
            .map_err(|_| Error::format(FORMAT, format!("bad metadata value {key}={raw}")))
    }

    fn tensor_map(&self) -> BTreeMap<&str, (&[usize], &[f32])> {
        self.tensors
            .iter()
            .map(|(n, s, d)| (n.as_str(), (s.as_slice(), d.as_slice())))
            .collect()
    }
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u32).to_le_bytes());
    out.extend_from_slice(b);
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format(FORMAT, "truncated file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn config_metadata(cfg: &DiTConfig) -> BTreeMap<String, String> {
    [
        ("d_model", cfg.d_model),
        ("n_layers", cfg.n_layers),
        ("n_heads", cfg.n_heads),
        ("d_text", cfg.d_text),
        ("n_channels", cfg.n_channels),
        ("max_frames", cfg.max_frames),
        ("n_timesteps", cfg.n_timesteps),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

fn config_from(file: &TensorFile) -> Result<DiTConfig> {
    let cfg = DiTConfig {
        d_model: file.meta("d_model")?,
        n_layers: file.meta("n_layers")?,
        n_heads: file.meta("n_heads")?,
        d_text: file.meta("d_text")?,
        n_channels: file.meta("n_channels")?,
        max_frames: file.meta("max_frames")?,
        n_timesteps: file.meta("n_timesteps")?,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Frozen base weights (no adapters, no projection).
pub fn base_file(model: &DiTModel) -> TensorFile {
    let tensors = model
        .params()
        .into_iter()
        .filter(|p| p.group == ParamGroup::Base)
        .map(|p| (p.name, p.shape, p.data.iter().map(|&v| v as f32).collect()))
        .collect();
    TensorFile {
        kind: CheckpointKind::Base,
        metadata: config_metadata(&model.config),
        tensors,
    }
}

pub fn save_base(model: &DiTModel, path: impl AsRef<Path>) -> Result<()> {
    base_file(model).write(path)
}

/// Rebuilds a base model; the projection is zero and no adapters are attached.
pub fn base_from_file(file: &TensorFile) -> Result<DiTModel> {
    if file.kind != CheckpointKind::Base {
        return Err(Error::format(FORMAT, "expected a base checkpoint"));
    }
    let mut model = DiTModel::new(config_from(file)?, 0)?;
    let tensors = file.tensor_map();
    let mut used = 0;
    for p in model.params_mut().into_iter().filter(|p| p.group == ParamGroup::Base) {
        let (shape, data) = tensors
            .get(p.name.as_str())
            .ok_or_else(|| Error::Missing(format!("tensor '{}' in base checkpoint", p.name)))?;
        if *shape != p.shape.as_slice() {
            return Err(Error::shape("checkpoint tensor", format!("{:?}", p.shape), format!("{shape:?}")));
        }
        for (dst, &src) in p.data.iter_mut().zip(data.iter()) {
            *dst = src as f64;
        }
        used += 1;
    }
    if used != tensors.len() {
        return Err(Error::format(FORMAT, "base checkpoint holds unexpected tensors"));
    }
    model.control_proj = ProjectionWeights::zeros();
    Ok(model)
}

pub fn load_base(path: impl AsRef<Path>) -> Result<DiTModel> {
    base_from_file(&TensorFile::read(path)?)
}

/// Everything trained during adaptation: adapters, control projection and
/// the control normalisation constants.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterCheckpoint {
    pub rank: usize,
    pub alpha: f64,
    /// Multiplier between codec latents and model latents.
    pub latent_scale: f64,
    pub stats: ControlStats,
    pub projection: ProjectionWeights,
    /// `(site, adapter)` in model order, e.g. `blocks.0.self_attn.q`.
    pub adapters: Vec<(String, LoraAdapter)>,
}

impl AdapterCheckpoint {
    pub fn from_model(model: &DiTModel, stats: ControlStats, rank: usize, alpha: f64, latent_scale: f64) -> Self {
        let adapters = model
            .adapter_sites()
            .into_iter()
            .filter_map(|(name, site)| site.adapter.clone().map(|a| (name, a)))
            .collect();
        Self {
            rank,
            alpha,
            latent_scale,
            stats,
            projection: model.control_proj.clone(),
            adapters,
        }
    }

    /// Installs the projection and attaches the adapters to `model`.
    pub fn apply_to(&self, model: &mut DiTModel) -> Result<()> {
        if self.projection.0.weight.dim() != model.control_proj.0.weight.dim() {
            return Err(Error::shape("projection", "16 -> 64", format!("{:?}", self.projection.0.weight.dim())));
        }
        let mut by_name: BTreeMap<&str, &LoraAdapter> = self.adapters.iter().map(|(n, a)| (n.as_str(), a)).collect();
        for (name, site) in model.adapter_sites_mut() {
            if let Some(a) = by_name.remove(name.as_str()) {
                if a.d_in() != site.base.d_in() || a.d_out() != site.base.d_out() {
                    return Err(Error::shape("adapter", format!("{}x{}", site.base.d_out(), site.base.d_in()), format!("{}x{}", a.d_out(), a.d_in())));
                }
                site.adapter = Some(a.clone());
            }
        }
        if let Some(name) = by_name.keys().next() {
            return Err(Error::format(FORMAT, format!("adapter site '{name}' not in model")));
        }
        model.control_proj = self.projection.clone();
        Ok(())
    }

    pub fn to_file(&self) -> TensorFile {
        let mut metadata = BTreeMap::new();
        metadata.insert("rank".into(), self.rank.to_string());
        metadata.insert("alpha".into(), format!("{:?}", self.alpha));
        metadata.insert("latent_scale".into(), format!("{:?}", self.latent_scale));
        let mut put = |k: String, a: &Affine| {
            metadata.insert(k, format!("{:?},{:?}", a.shift, a.scale));
        };
        put("stats.loudness".into(), &self.stats.loudness);
        put("stats.log_pitch".into(), &self.stats.log_pitch);
        put("stats.centroid".into(), &self.stats.centroid);
        for (k, a) in self.stats.mfcc.iter().enumerate() {
            put(format!("stats.mfcc.{k}"), a);
        }
        let f = |a: &[f64]| a.iter().map(|&v| v as f32).collect::<Vec<f32>>();
        let p = &self.projection.0;
        let mut tensors = vec![
            ("control_proj.weight".to_string(), vec![p.d_out(), p.d_in()], f(p.weight.as_slice().expect("contiguous"))),
            ("control_proj.bias".to_string(), vec![p.d_out()], f(p.bias.as_slice().expect("contiguous"))),
        ];
        for (site, a) in &self.adapters {
            let a_std = a.a.as_standard_layout();
            let b_std = a.b.as_standard_layout();
            tensors.push((format!("{site}.lora_a"), vec![a.rank(), a.d_in()], f(a_std.as_slice().expect("contiguous"))));
            tensors.push((format!("{site}.lora_b"), vec![a.d_out(), a.rank()], f(b_std.as_slice().expect("contiguous"))));
        }
        TensorFile {
            kind: CheckpointKind::Adapters,
            metadata,
            tensors,
        }
    }

    pub fn from_file(file: &TensorFile) -> Result<Self> {
        if file.kind != CheckpointKind::Adapters {
            return Err(Error::format(FORMAT, "expected an adapter checkpoint"));
        }
        let rank: usize = file.meta("rank")?;
        let alpha: f64 = file.meta("alpha")?;
        let latent_scale: f64 = file.meta("latent_scale")?;
        if !(latent_scale > 0.0 && latent_scale.is_finite()) {
            return Err(Error::format(FORMAT, format!("bad latent scale {latent_scale}")));
        }
        let affine = |key: &str| -> Result<Affine> {
            let raw: String = file.meta(key)?;
            let (s, c) = raw
                .split_once(',')
                .ok_or_else(|| Error::format(FORMAT, format!("bad affine '{raw}'")))?;
            let parse = |v: &str| v.parse::<f64>().map_err(|_| Error::format(FORMAT, format!("bad number '{v}'")));
            Ok(Affine::new(parse(s)?, parse(c)?))
        };
        let mut mfcc = [Affine::IDENTITY; crate::features::N_MFCC];
        for (k, m) in mfcc.iter_mut().enumerate() {
            *m = affine(&format!("stats.mfcc.{k}"))?;
        }
        let stats = ControlStats {
            loudness: affine("stats.loudness")?,
            log_pitch: affine("stats.log_pitch")?,
            centroid: affine("stats.centroid")?,
            mfcc,
        };
        stats.validate()?;
        let tensors = file.tensor_map();
        let get2 = |name: &str| -> Result<Array2<f64>> {
            let (shape, data) = tensors
                .get(name)
                .ok_or_else(|| Error::Missing(format!("tensor '{name}' in adapter checkpoint")))?;
            if shape.len() != 2 {
                return Err(Error::shape("tensor rank", 2, shape.len()));
            }
            Array2::from_shape_vec((shape[0], shape[1]), data.iter().map(|&v| v as f64).collect())
                .map_err(|e| Error::format(FORMAT, e.to_string()))
        };
        let weight = get2("control_proj.weight")?;
        let (_, bias) = tensors
            .get("control_proj.bias")
            .ok_or_else(|| Error::Missing("tensor 'control_proj.bias' in adapter checkpoint".into()))?;
        if weight.dim() != (crate::codec::LATENT_CHANNELS, crate::features::CONTROL_CHANNELS) || bias.len() != weight.nrows() {
            return Err(Error::shape("projection", "64x16", format!("{:?}", weight.dim())));
        }
        let projection = ProjectionWeights(Linear {
            weight,
            bias: Array1::from_iter(bias.iter().map(|&v| v as f64)),
        });
        let mut adapters = Vec::new();
        for (name, _, _) in &file.tensors {
            if let Some(site) = name.strip_suffix(".lora_a") {
                let a = get2(name)?;
                let b = get2(&format!("{site}.lora_b"))?;
                let adapter = LoraAdapter::from_factors(a, b, alpha)?;
                if adapter.rank() != rank {
                    return Err(Error::shape("adapter rank", rank, adapter.rank()));
                }
                adapters.push((site.to_string(), adapter));
            }
        }
        let expected = 2 + 2 * adapters.len();
        if file.tensors.len() != expected {
            return Err(Error::format(FORMAT, "adapter checkpoint holds unpaired tensors"));
        }
        Ok(Self {
            rank,
            alpha,
            latent_scale,
            stats,
            projection,
            adapters,
        })
    }
}

pub fn save_adapters(ck: &AdapterCheckpoint, path: impl AsRef<Path>) -> Result<()> {
    ck.to_file().write(path)
}

pub fn load_adapters(path: impl AsRef<Path>) -> Result<AdapterCheckpoint> {
    AdapterCheckpoint::from_file(&TensorFile::read(path)?)
}

/// Base model with the adapter checkpoint applied, plus the checkpoint itself.
pub fn load_model(base: impl AsRef<Path>, adapters: impl AsRef<Path>) -> Result<(DiTModel, AdapterCheckpoint)> {
    let mut model = load_base(base)?;
    let ck = load_adapters(adapters)?;
    ck.apply_to(&mut model)?;
    Ok((model, ck))
}
