//! Command-line front end: `synth-data`, `extract`, `train`, `generate` and
//! `evaluate`.
//!
//! Run parameters come from an optional `key = value` file, then `--set
//! key=value` overrides, then dedicated flags. Unknown keys are rejected and
//! every command writes the resolved configuration next to its outputs.
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::audio_io::{build_dataset_with, read_wav, write_wav, DatasetManifest, DatasetOptions, WavEncoding};
use crate::codec;
use crate::conditioning::embed_text_with_dim;
use crate::diffusion::{
    finetune, prepare_controls, sample, GuidanceMode, GuidanceScales, NoiseSchedule, SampleRequest, Sampler, TrainConfig,
    TrainedModel,
};
use crate::error::Error;
use crate::eval::{report_tsv, run_ablation_from_checkpoints, AblationConfig, EvalOptions};
use crate::features::{extract_controls, read_apcs, write_apcs, FrameGrid};

/// File name of the resolved configuration written into every output directory.
pub const CONFIG_FILE: &str = "config.txt";
/// Environment variable bounding the worker thread count.
pub const THREADS_ENV: &str = "APALETTE_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Every tunable of a run, with the file format used by `--config`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub train: TrainConfig,
    pub grid: FrameGrid,
    pub scales: GuidanceScales,
    pub mode: GuidanceMode,
    pub sampler: Sampler,
    pub sample_steps: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            train: TrainConfig::default(),
            grid: FrameGrid::default(),
            scales: GuidanceScales::default(),
            mode: GuidanceMode::Nested,
            sampler: Sampler::Ddim,
            sample_steps: 50,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> CliResult<T> {
    value
        .parse()
        .map_err(|_| usage(format!("invalid value '{value}' for key '{key}'")))
}

fn parse_bool(key: &str, value: &str) -> CliResult<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(usage(format!("invalid boolean '{value}' for key '{key}'"))),
    }
}

impl RunConfig {
    pub const KEYS: &'static [&'static str] = &[
        "seed",
        "d_model",
        "n_layers",
        "n_heads",
        "d_text",
        "max_frames",
        "n_timesteps",
        "base_steps",
        "base_p_text",
        "base_p_dyn",
        "base_p_timbre",
        "steps",
        "p_text",
        "p_dyn",
        "p_timbre",
        "per_signal_dropout",
        "median_kernels",
        "crop_frames",
        "latent_scale",
        "weight_cap",
        "batch_size",
        "lr",
        "lr_final_ratio",
        "beta1",
        "beta2",
        "weight_decay",
        "grad_clip",
        "lora_rank",
        "lora_alpha",
        "checkpoint_every",
        "win",
        "hop",
        "sample_rate",
        "s_text",
        "s_ctrls",
        "s_timbre",
        "guidance_mode",
        "sampler",
        "sample_steps",
    ];

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let t = &mut self.train;
        match key {
            "seed" if value == "unset" => self.seed = None,
            "seed" => self.seed = Some(parse_value(key, value)?),
            "d_model" => t.model.d_model = parse_value(key, value)?,
            "n_layers" => t.model.n_layers = parse_value(key, value)?,
            "n_heads" => t.model.n_heads = parse_value(key, value)?,
            "d_text" => t.model.d_text = parse_value(key, value)?,
            "max_frames" => t.model.max_frames = parse_value(key, value)?,
            "n_timesteps" => {
                t.model.n_timesteps = parse_value(key, value)?;
                t.schedule_steps = t.model.n_timesteps;
            }
            "base_steps" => t.base_steps = parse_value(key, value)?,
            "base_p_text" => t.base_p_text = parse_value(key, value)?,
            "base_p_dyn" => t.base_p_dyn = parse_value(key, value)?,
            "base_p_timbre" => t.base_p_timbre = parse_value(key, value)?,
            "steps" => t.steps = parse_value(key, value)?,
            "p_text" => t.p_text = parse_value(key, value)?,
            "p_dyn" => t.p_dyn = parse_value(key, value)?,
            "p_timbre" => t.p_timbre = parse_value(key, value)?,
            "per_signal_dropout" => t.per_signal_dropout = parse_bool(key, value)?,
            "median_kernels" => {
                t.median_kernels = value
                    .split(',')
                    .map(|k| parse_value(key, k.trim()))
                    .collect::<CliResult<_>>()?
            }
            "crop_frames" => t.crop_frames = parse_value(key, value)?,
            "latent_scale" => t.latent_scale = parse_value(key, value)?,
            "weight_cap" => t.weight_cap = parse_value(key, value)?,
            "batch_size" => t.batch_size = parse_value(key, value)?,
            "lr" => t.lr = parse_value(key, value)?,
            "lr_final_ratio" => t.lr_final_ratio = parse_value(key, value)?,
            "beta1" => t.beta1 = parse_value(key, value)?,
            "beta2" => t.beta2 = parse_value(key, value)?,
            "weight_decay" => t.weight_decay = parse_value(key, value)?,
            "grad_clip" => t.grad_clip = parse_value(key, value)?,
            "lora_rank" => t.lora_rank = parse_value(key, value)?,
            "lora_alpha" => t.lora_alpha = parse_value(key, value)?,
            "checkpoint_every" => t.checkpoint_every = parse_value(key, value)?,
            "win" => self.grid.win_samples = parse_value(key, value)?,
            "hop" => self.grid.hop_samples = parse_value(key, value)?,
            "sample_rate" => self.grid.sample_rate = parse_value(key, value)?,
            "s_text" => self.scales.s_text = parse_value(key, value)?,
            "s_ctrls" => self.scales.s_ctrls = parse_value(key, value)?,
            "s_timbre" => self.scales.s_timbre = parse_value(key, value)?,
            "guidance_mode" => self.mode = value.parse().map_err(|e: Error| usage(e.to_string()))?,
            "sampler" => self.sampler = value.parse().map_err(|e: Error| usage(e.to_string()))?,
            "sample_steps" => self.sample_steps = parse_value(key, value)?,
            _ => return Err(usage(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut cfg = Self::default();
        cfg.apply_lines(text)?;
        Ok(cfg)
    }

    fn apply_lines(&mut self, text: &str) -> CliResult<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| usage(format!("config line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> CliResult<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| usage(format!("override '{assignment}' is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    /// Checks every section; the seed must be set.
    pub fn validate(&self) -> CliResult<()> {
        if self.seed.is_none() {
            return Err(usage("a seed is required (--seed or `seed = ...` in the config)"));
        }
        self.train.validate().map_err(|e| usage(e.to_string()))?;
        self.grid.validate().map_err(|e| usage(e.to_string()))?;
        self.scales.validate().map_err(|e| usage(e.to_string()))?;
        if self.sample_steps == 0 || self.sample_steps > self.train.model.n_timesteps {
            return Err(usage(format!(
                "sample_steps {} must lie in 1..={}",
                self.sample_steps, self.train.model.n_timesteps
            )));
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// The fully resolved configuration in the `--config` file format.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let m = &t.model;
        let kernels: Vec<String> = t.median_kernels.iter().map(|k| k.to_string()).collect();
        let mode = match self.mode {
            GuidanceMode::Nested => "nested",
            GuidanceMode::Independent => "independent",
        };
        let sampler = match self.sampler {
            Sampler::Ddim => "ddim",
            Sampler::Ddpm => "ddpm",
        };
        let seed = self.seed.map_or_else(|| "unset".to_string(), |s| s.to_string());
        let mut out = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("seed", &seed);
        kv("d_model", &m.d_model);
        kv("n_layers", &m.n_layers);
        kv("n_heads", &m.n_heads);
        kv("d_text", &m.d_text);
        kv("max_frames", &m.max_frames);
        kv("n_timesteps", &m.n_timesteps);
        kv("base_steps", &t.base_steps);
        kv("base_p_text", &t.base_p_text);
        kv("base_p_dyn", &t.base_p_dyn);
        kv("base_p_timbre", &t.base_p_timbre);
        kv("steps", &t.steps);
        kv("p_text", &t.p_text);
        kv("p_dyn", &t.p_dyn);
        kv("p_timbre", &t.p_timbre);
        kv("per_signal_dropout", &t.per_signal_dropout);
        kv("median_kernels", &kernels.join(","));
        kv("crop_frames", &t.crop_frames);
        kv("latent_scale", &t.latent_scale);
        kv("weight_cap", &t.weight_cap);
        kv("batch_size", &t.batch_size);
        kv("lr", &t.lr);
        kv("lr_final_ratio", &t.lr_final_ratio);
        kv("beta1", &t.beta1);
        kv("beta2", &t.beta2);
        kv("weight_decay", &t.weight_decay);
        kv("grad_clip", &t.grad_clip);
        kv("lora_rank", &t.lora_rank);
        kv("lora_alpha", &t.lora_alpha);
        kv("checkpoint_every", &t.checkpoint_every);
        kv("win", &self.grid.win_samples);
        kv("hop", &self.grid.hop_samples);
        kv("sample_rate", &self.grid.sample_rate);
        kv("s_text", &self.scales.s_text);
        kv("s_ctrls", &self.scales.s_ctrls);
        kv("s_timbre", &self.scales.s_timbre);
        kv("guidance_mode", &mode);
        kv("sampler", &sampler);
        kv("sample_steps", &self.sample_steps);
        out
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        write_text(&dir.join(CONFIG_FILE), &self.to_text())
    }
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::Runtime(Error::Io {
        path: path.to_path_buf(),
        source: e,
    }))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(Error::Io {
        path: dir.to_path_buf(),
        source: e,
    }))
}

#[derive(Debug, Parser)]
#[command(name = "apalette", version, about = "Controllable Foley synthesis toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic Foley dataset with a manifest.
    SynthData(SynthDataArgs),
    /// Extract control signals from WAV files into APCS files.
    Extract(ExtractArgs),
    /// Train a base model and control adapters on a manifest.
    Train(TrainArgs),
    /// Generate one clip from a prompt and optional reference controls.
    Generate(GenerateArgs),
    /// Run the conditioning ablation over adapter checkpoints.
    Evaluate(EvaluateArgs),
}

/// Shared configuration flags.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
            cfg.apply_lines(&text)?;
        }
        for o in &self.overrides {
            cfg.apply_override(o)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = Some(seed);
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct SynthDataArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Clip length in seconds.
    #[arg(long, default_value_t = 1.0)]
    pub duration: f64,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Input WAV files.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub hop: usize,
    #[arg(long, default_value_t = 1024)]
    pub win: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset manifest (`manifest.tsv`).
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory for checkpoints, loss log and config.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long)]
    pub adapters: PathBuf,
    #[arg(long)]
    pub prompt: String,
    /// Reference audio whose controls condition generation.
    #[arg(long, conflicts_with = "ref_controls")]
    pub ref_audio: Option<PathBuf>,
    /// Reference APCS control file.
    #[arg(long)]
    pub ref_controls: Option<PathBuf>,
    /// Output length in seconds; defaults to the reference length or 1 s.
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long)]
    pub s_text: Option<f64>,
    #[arg(long)]
    pub s_ctrls: Option<f64>,
    #[arg(long)]
    pub s_timbre: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Output WAV; a `.txt` sidecar with the resolved settings is written beside it.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Evaluation manifest.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub base: PathBuf,
    /// Adapter checkpoint per configuration, as `text=PATH`; repeatable.
    #[arg(long = "checkpoint", value_name = "CONFIG=PATH", required = true)]
    pub checkpoints: Vec<String>,
    /// Output directory for `report.tsv` and the config.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match configure_threads().and_then(|_| dispatch(&cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, CliError::Usage(_)) {
                eprintln!("run `apalette --help` for usage");
            }
            e.exit_code()
        }
    }
}

fn configure_threads() -> CliResult<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| usage(format!("{THREADS_ENV}='{value}' is not a positive integer")))?;
    // A second call in the same process keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn dispatch(command: &Command) -> CliResult<()> {
    match command {
        Command::SynthData(a) => cmd_synth_data(a),
        Command::Extract(a) => cmd_extract(a),
        Command::Train(a) => cmd_train(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
    }
}

pub fn cmd_synth_data(args: &SynthDataArgs) -> CliResult<()> {
    if args.n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    if !(args.duration > 0.0 && args.duration.is_finite()) {
        return Err(usage("--duration must be positive"));
    }
    let opts = DatasetOptions {
        duration: args.duration,
        ..DatasetOptions::default()
    };
    let manifest = build_dataset_with(args.n, args.seed, &args.out, &opts)?;
    let cfg = format!(
        "n = {}\nseed = {}\nduration = {}\nsample_rate = {}\n",
        args.n, args.seed, args.duration, opts.sample_rate
    );
    write_text(&args.out.join(CONFIG_FILE), &cfg)?;
    println!("wrote {} clips to {}", manifest.len(), args.out.display());
    Ok(())
}

pub fn cmd_extract(args: &ExtractArgs) -> CliResult<()> {
    create_dir(&args.out)?;
    let mut written = Vec::new();
    for input in &args.inputs {
        let clip = read_wav(input)?;
        let grid = FrameGrid::new(args.win, args.hop, clip.sample_rate()).map_err(|e| usage(e.to_string()))?;
        let ctrls = extract_controls(&clip, &grid)?;
        let stem = input
            .file_stem()
            .ok_or_else(|| usage(format!("input {} has no file name", input.display())))?;
        let out = args.out.join(stem).with_extension("apcs");
        write_apcs(&ctrls, &out)?;
        written.push(out);
    }
    write_text(&args.out.join(CONFIG_FILE), &format!("win = {}\nhop = {}\n", args.win, args.hop))?;
    println!("wrote {} control files to {}", written.len(), args.out.display());
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> CliResult<()> {
    let mut cfg = args.config.resolve()?;
    cfg.validate()?;
    cfg.train.seed = cfg.seed();
    let manifest = DatasetManifest::read(&args.data)?;
    create_dir(&args.out)?;
    cfg.write(&args.out)?;
    let outcome = finetune(&manifest, &cfg.grid, &cfg.train, Some(&args.out))?;
    let first = outcome.losses.first().copied().unwrap_or(f64::NAN);
    let last = outcome.losses.last().copied().unwrap_or(f64::NAN);
    println!(
        "trained {} steps: loss {first:.4} -> {last:.4}; checkpoints in {}",
        outcome.losses.len(),
        args.out.display()
    );
    Ok(())
}

pub fn cmd_generate(args: &GenerateArgs) -> CliResult<()> {
    let mut cfg = args.config.resolve()?;
    if let Some(v) = args.s_text {
        cfg.scales.s_text = v;
    }
    if let Some(v) = args.s_ctrls {
        cfg.scales.s_ctrls = v;
    }
    if let Some(v) = args.s_timbre {
        cfg.scales.s_timbre = v;
    }
    if let Some(v) = args.steps {
        cfg.sample_steps = v;
    }
    cfg.validate()?;
    let has_ref = args.ref_audio.is_some() || args.ref_controls.is_some();
    if !has_ref && (cfg.scales.s_ctrls != 0.0 || cfg.scales.s_timbre != 0.0) {
        return Err(usage(format!(
            "--s-ctrls {} / --s-timbre {} need reference controls: pass --ref-audio or --ref-controls, \
             or set both scales to 0 for text-only generation",
            cfg.scales.s_ctrls, cfg.scales.s_timbre
        )));
    }
    for p in [&args.base, &args.adapters] {
        if !p.is_file() {
            return Err(Error::Missing(format!("checkpoint {}", p.display())).into());
        }
    }
    let trained = TrainedModel::load(&args.base, &args.adapters)?;
    let sample_rate = cfg.grid.sample_rate;
    let (controls, ref_len) = match (&args.ref_audio, &args.ref_controls) {
        (Some(path), _) => {
            let clip = read_wav(path)?;
            let grid = FrameGrid { sample_rate: clip.sample_rate(), ..cfg.grid };
            (Some(extract_controls(&clip, &grid)?), Some(clip.duration()))
        }
        (None, Some(path)) => {
            let c = read_apcs(path)?;
            let secs = c.n_frames().saturating_sub(1) as f64 / c.frame_rate;
            (Some(c), Some(secs))
        }
        (None, None) => (None, None),
    };
    let duration = args.duration.or(ref_len).unwrap_or(1.0);
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(usage("--duration must be positive"));
    }
    let n_samples = (duration * sample_rate as f64).round().max(1.0) as usize;
    let n_frames = codec::latent_frames_for(n_samples);
    let model = &trained.model;
    if n_frames > model.config.max_frames {
        return Err(usage(format!(
            "{duration} s needs {n_frames} latent frames but the model holds {}",
            model.config.max_frames
        )));
    }
    let prepared = controls
        .as_ref()
        .map(|c| prepare_controls(c, &trained.stats, codec::latent_rate(sample_rate), n_frames))
        .transpose()?;
    let text = embed_text_with_dim(&args.prompt, model.config.d_text);
    let schedule = NoiseSchedule::linear(
        model.config.n_timesteps,
        NoiseSchedule::BETA_START,
        NoiseSchedule::BETA_END,
    )?;
    let mut req = SampleRequest::new(&text, prepared.as_ref(), n_frames, cfg.seed());
    req.scales = cfg.scales;
    req.mode = cfg.mode;
    req.sampler = cfg.sampler;
    req.steps = cfg.sample_steps;
    req.sample_rate = sample_rate;
    req.latent_scale = trained.latent_scale;
    let mut latent = sample(model, &schedule, &req)?;
    latent.set_orig_len(n_samples)?;
    let clip = codec::decode(&latent)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_wav(&clip, &args.out, WavEncoding::Float32)?;
    let mut sidecar = cfg.to_text();
    let _ = writeln!(sidecar, "prompt = {}", args.prompt);
    let reference = args
        .ref_audio
        .as_ref()
        .or(args.ref_controls.as_ref())
        .map_or_else(|| "none".to_string(), |p| p.display().to_string());
    let _ = writeln!(sidecar, "reference = {reference}");
    let _ = writeln!(sidecar, "duration = {duration}");
    write_text(&args.out.with_extension("txt"), &sidecar)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn parse_checkpoint(spec: &str) -> CliResult<(AblationConfig, PathBuf)> {
    let (name, path) = spec
        .split_once('=')
        .ok_or_else(|| usage(format!("--checkpoint '{spec}' is not CONFIG=PATH")))?;
    let cfg = name.parse::<AblationConfig>().map_err(|e| usage(e.to_string()))?;
    Ok((cfg, PathBuf::from(path)))
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> CliResult<()> {
    let cfg = args.config.resolve()?;
    cfg.validate()?;
    let checkpoints = args
        .checkpoints
        .iter()
        .map(|s| parse_checkpoint(s))
        .collect::<CliResult<Vec<_>>>()?;
    let manifest = DatasetManifest::read(&args.data)?;
    let opts = EvalOptions {
        grid: cfg.grid,
        steps: cfg.sample_steps,
        s_text: cfg.scales.s_text,
        mode: cfg.mode,
        seed: cfg.seed(),
    };
    let refs: Vec<(AblationConfig, &Path)> = checkpoints.iter().map(|(c, p)| (*c, p.as_path())).collect();
    let reports = run_ablation_from_checkpoints(&manifest, &args.base, &refs, &opts)?;
    let table = report_tsv(&reports);
    create_dir(&args.out)?;
    cfg.write(&args.out)?;
    write_text(&args.out.join("report.tsv"), &table)?;
    print!("{table}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_roundtrips_through_text() {
        let mut cfg = RunConfig::parse("seed = 3\nlr = 0.002 # faster\n\nmedian_kernels = 1,3\n").unwrap();
        cfg.set("guidance_mode", "independent").unwrap();
        assert_eq!(cfg.seed, Some(3));
        assert_eq!(cfg.train.lr, 0.002);
        assert_eq!(cfg.train.median_kernels, vec![1, 3]);
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_usage_errors() {
        for text in ["colour = red", "lr = fast", "just a line", "per_signal_dropout = maybe"] {
            assert_eq!(RunConfig::parse(text).unwrap_err().exit_code(), 2, "{text}");
        }
    }

    #[test]
    fn every_listed_key_is_accepted_and_dumped() {
        let text = RunConfig::default().to_text();
        for key in RunConfig::KEYS {
            let mut probe = RunConfig::default();
            assert!(probe.set(key, "1").is_ok() || matches!(*key, "guidance_mode" | "sampler"), "{key}");
            assert!(text.lines().any(|l| l.starts_with(&format!("{key} = "))), "{key}");
        }
    }

    #[test]
    fn missing_seed_fails_validation() {
        assert!(RunConfig::default().validate().is_err());
        assert!(RunConfig::parse("seed = 1").unwrap().validate().is_ok());
    }

    #[test]
    fn parse_errors_exit_with_two() {
        assert_eq!(run(["apalette", "synth-data", "--n", "2", "--seed", "1"]), 2);
        assert_eq!(run(["apalette", "frobnicate"]), 2);
    }
}
