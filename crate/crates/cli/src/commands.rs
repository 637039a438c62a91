use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

use teqhdr::baseline::naive_reconstruct_with;
use teqhdr::exec::{set_execution, Execution};
use teqhdr::loss::LossMode;
use teqhdr::network::{load_checkpoint, report_complexity, FrameMode, ModelConfig, Variant};
use teqhdr::pfm;
use teqhdr::scenes::{generate, write_sequence, SceneSpec};
use teqhdr::sensor::Trapezoid;
use teqhdr::simulator::{build_dataset, load_raw, Manifest, SimulationConfig};
use teqhdr::train::{
    cell_config, evaluate, reconstruct_network, run_ablation, train, write_report, AblationSpec, Method, TrainConfig,
};

#[derive(Parser, Debug)]
#[command(name = "teqhdr", version, about = "Tri-exposure quad-bayer HDR simulation, training and reconstruction")]
pub struct Cli {
    /// Log filter, e.g. `info` or `teqhdr=debug`.
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,

    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    pub sequential: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a procedural HDR sequence as PFM frames.
    Scene(SceneArgs),
    /// Simulate TEQ raws and a triplet manifest from HDR sequences.
    Simulate(SimulateArgs),
    /// Train a reconstruction model.
    Train(TrainArgs),
    /// Reconstruct an HDR frame from TEQ raws.
    Reconstruct(ReconstructArgs),
    /// Score a method on a manifest.
    Evaluate(EvaluateArgs),
    /// Train and score the variant × frames × loss matrix.
    Ablate(AblateArgs),
    /// Report parameter and multiply-add counts.
    Complexity(ComplexityArgs),
}

#[derive(Args, Debug)]
pub struct Common {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct SceneArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub speed: Option<f32>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory of PFM frames, or of per-sequence subdirectories.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub bit_depth: Option<u32>,
    /// Blur counts as `S,M,L`.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub blur: Option<Vec<usize>>,
    /// σ_S sampling range as `low,high`.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub sigma: Option<Vec<f64>>,
    #[arg(long)]
    pub ratio: Option<f64>,
}

#[derive(Args, Debug, Default)]
pub struct ModelFlags {
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub frames: Option<FrameMode>,
    /// Feature width C.
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub growth: Option<usize>,
}

impl ModelFlags {
    fn apply(&self, cfg: &mut ModelConfig) {
        if self.variant.is_some() || self.frames.is_some() {
            *cfg = cell_config(cfg, self.variant.unwrap_or(cfg.variant), self.frames.unwrap_or(cfg.frames));
        }
        if let Some(c) = self.channels {
            cfg.width = c;
        }
        if let Some(g) = self.growth {
            cfg.growth = g;
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    pub loss: Option<LossMode>,
    #[command(flatten)]
    pub model: ModelFlags,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum MethodArg {
    Naive,
    Checkpoint,
}

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value = "naive")]
    pub method: MethodArg,
    #[arg(long, required_if_eq("method", "checkpoint"))]
    pub checkpoint: Option<PathBuf>,
    /// Reference raw PFM (sidecar JSON alongside).
    #[arg(long)]
    pub raw: PathBuf,
    /// Previous raw; defaults to the reference.
    #[arg(long)]
    pub prev: Option<PathBuf>,
    /// Next raw; defaults to the reference.
    #[arg(long)]
    pub next: Option<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
    /// Also write the half-resolution network output here.
    #[arg(long)]
    pub lr_output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value = "naive")]
    pub method: MethodArg,
    #[arg(long, required_if_eq("method", "checkpoint"))]
    pub checkpoint: Option<PathBuf>,
    /// Directory for report.json and report.csv.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 5000.0)]
    pub mu: f64,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub eval_manifest: Option<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub variants: Option<Vec<Variant>>,
    #[arg(long = "frame-modes", value_delimiter = ',')]
    pub frame_modes: Option<Vec<FrameMode>>,
    #[arg(long, value_delimiter = ',')]
    pub losses: Option<Vec<LossMode>>,
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub channels: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ComplexityArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub model: ModelFlags,
    /// Raw height in pixels.
    #[arg(long, default_value_t = 256)]
    pub height: usize,
    /// Raw width in pixels.
    #[arg(long, default_value_t = 256)]
    pub width: usize,
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text)
                .map_err(teqhdr::Error::from)
                .with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if cli.sequential {
        set_execution(Execution::Sequential);
    }
    match cli.command {
        Command::Scene(a) => scene(a),
        Command::Simulate(a) => simulate(a),
        Command::Train(a) => train_cmd(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Ablate(a) => ablate(a),
        Command::Complexity(a) => complexity(a),
    }
}

fn scene(a: SceneArgs) -> Result<()> {
    let mut spec: SceneSpec = load_config(a.common.config.as_deref())?;
    set(&mut spec.seed, a.common.seed);
    set(&mut spec.width, a.width);
    set(&mut spec.height, a.height);
    set(&mut spec.frames, a.frames);
    set(&mut spec.speed, a.speed);
    let frames = generate(&spec)?;
    write_sequence(&a.output, &frames)?;
    print_json(&serde_json::json!({ "output": a.output, "frames": frames.len(), "spec": spec }))
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let mut cfg: SimulationConfig = load_config(a.common.config.as_deref())?;
    set(&mut cfg.seed, a.common.seed);
    set(&mut cfg.bit_depth, a.bit_depth);
    set(&mut cfg.exposure.r, a.ratio);
    if let Some(b) = a.blur {
        cfg.blur = [b[0], b[1], b[2]];
    }
    if let Some(s) = a.sigma {
        cfg.sigma_range = [s[0], s[1]];
    }
    let report = build_dataset(&a.input, &a.output, &cfg)?;
    print_json(&report)
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut cfg: TrainConfig = load_config(a.common.config.as_deref())?;
    set(&mut cfg.seed, a.common.seed);
    set(&mut cfg.manifest, a.manifest);
    set(&mut cfg.output_dir, a.output);
    set(&mut cfg.iterations, a.iterations);
    set(&mut cfg.batch, a.batch);
    set(&mut cfg.patch, a.patch);
    set(&mut cfg.stride, a.stride);
    set(&mut cfg.lr, a.lr);
    set(&mut cfg.checkpoint_every, a.checkpoint_every);
    set(&mut cfg.loss.mode, a.loss);
    a.model.apply(&mut cfg.model);
    let outcome = train(&cfg)?;
    let last = outcome.log.last().map(|r| r.loss.total);
    print_json(&serde_json::json!({
        "output_dir": cfg.output_dir,
        "iterations": outcome.log.len(),
        "final_loss": last,
        "checkpoints": outcome.checkpoints,
        "params": outcome.model.num_params(),
    }))
}

fn reconstruct(a: ReconstructArgs) -> Result<()> {
    let reference = load_raw(&a.raw)?;
    let img = match a.method {
        MethodArg::Naive => naive_reconstruct_with(&reference, Trapezoid::default())?,
        MethodArg::Checkpoint => {
            let path = a.checkpoint.as_deref().expect("clap enforces --checkpoint");
            let model = load_checkpoint(path)?;
            let prev = a.prev.as_deref().map(load_raw).transpose()?.unwrap_or_else(|| reference.clone());
            let next = a.next.as_deref().map(load_raw).transpose()?.unwrap_or_else(|| reference.clone());
            let (hr, lr) = reconstruct_network(&model, [&prev, &reference, &next], Trapezoid::default())?;
            if let Some(p) = &a.lr_output {
                pfm::write_rgb(p, &lr)?;
            }
            hr
        }
    };
    pfm::write_rgb(&a.output, &img)?;
    print_json(&serde_json::json!({
        "output": a.output,
        "width": img.width,
        "height": img.height,
        "method": format!("{:?}", a.method).to_lowercase(),
    }))
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let manifest = Manifest::load(&a.manifest)?;
    let model;
    let method = match a.method {
        MethodArg::Naive => Method::Naive,
        MethodArg::Checkpoint => {
            model = load_checkpoint(a.checkpoint.as_deref().expect("clap enforces --checkpoint"))?;
            Method::Network(&model)
        }
    };
    let report = evaluate(&method, &manifest, a.mu, Trapezoid::default())?;
    write_report(&report, &a.output)?;
    print_json(&serde_json::json!({
        "method": method.name(),
        "frames": report.rows.len(),
        "psnr": teqhdr::loss::format_db(report.mean_psnr()),
        "psnr_mu": teqhdr::loss::format_db(report.mean_psnr_mu()),
        "scenes": report.scenes,
        "convention": report.convention,
        "output": a.output,
    }))
}

fn ablate(a: AblateArgs) -> Result<()> {
    let mut spec: AblationSpec = load_config(a.common.config.as_deref())?;
    set(&mut spec.base.seed, a.common.seed);
    set(&mut spec.base.manifest, a.manifest);
    set(&mut spec.base.iterations, a.iterations);
    set(&mut spec.base.patch, a.patch);
    set(&mut spec.base.stride, a.stride);
    set(&mut spec.base.batch, a.batch);
    set(&mut spec.base.lr, a.lr);
    set(&mut spec.base.model.width, a.channels);
    set(&mut spec.variants, a.variants);
    set(&mut spec.frames, a.frame_modes);
    set(&mut spec.losses, a.losses);
    if a.eval_manifest.is_some() {
        spec.eval_manifest = a.eval_manifest;
    }
    if spec.variants.is_empty() {
        bail!("no variants selected");
    }
    let report = run_ablation(&spec, &a.output)?;
    println!("{}", report.markdown());
    Ok(())
}

fn complexity(a: ComplexityArgs) -> Result<()> {
    let mut cfg: ModelConfig = load_config(a.common.config.as_deref())?;
    a.model.apply(&mut cfg);
    if a.common.seed.is_some() {
        log::debug!("--seed has no effect on static counts");
    }
    let r = report_complexity(&cfg, a.height, a.width)?;
    print_json(&serde_json::json!({
        "variant": cfg.variant,
        "frames": cfg.frames,
        "params": r.params,
        "madds": r.madds,
        "flops": r.flops,
        "height": r.height,
        "width": r.width,
    }))
}
