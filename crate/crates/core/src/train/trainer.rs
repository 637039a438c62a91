use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::patches::{extract_patches, Patch};
use crate::autograd::{Graph, Tensor};
use crate::loss::{total_loss, LossBreakdown, LossConfig, PerceptualNet};
use crate::network::{rgb_to_tensor, save_checkpoint, FrameTensors, Hooks, Model, ModelConfig, NetworkInput};
use crate::sensor::{Exposure, ExposureConfig, Trapezoid};
use crate::simulator::Manifest;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub manifest: PathBuf,
    pub output_dir: PathBuf,
    pub iterations: usize,
    pub batch: usize,
    pub patch: usize,
    pub stride: usize,
    pub lr: f64,
    pub seed: u64,
    /// Checkpoint every this many iterations; 0 writes only the final one.
    pub checkpoint_every: usize,
    pub model: ModelConfig,
    pub loss: LossConfig,
    /// Safetensors weights for the perceptual backbone; seeded random
    /// features when absent.
    pub perceptual_weights: Option<PathBuf>,
    pub trapezoid: Trapezoid,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            manifest: PathBuf::from("data/manifest.json"),
            output_dir: PathBuf::from("runs/default"),
            iterations: 1000,
            batch: 12,
            patch: 256,
            stride: 120,
            lr: 1e-4,
            seed: 0,
            checkpoint_every: 0,
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            perceptual_weights: None,
            trapezoid: Trapezoid::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.stride == 0 || self.patch == 0 {
            return Err(Error::invalid("batch, patch and stride must be >= 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("lr must be > 0"));
        }
        self.model.validate()?;
        self.loss.validate()
    }
}

/// One row of the loss log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

pub const LOSS_LOG_HEADER: &str = "iteration,total,l1_hr,perceptual_hr,l1_lr,perceptual_lr";

impl LossRecord {
    pub fn csv_row(&self) -> String {
        let l = &self.loss;
        format!(
            "{},{:e},{:e},{:e},{:e},{:e}",
            self.iteration, l.total, l.l1_hr, l.perceptual_hr, l.l1_lr, l.perceptual_lr
        )
    }
}

pub struct TrainOutcome {
    pub model: Model<f32>,
    pub log: Vec<LossRecord>,
    pub checkpoints: Vec<PathBuf>,
}

/// Training example with its network tensors prepared once.
struct Prepared {
    frames: [FrameTensors<f32>; 3],
    gt: Tensor<f32>,
    exposure: ExposureConfig,
}

fn prepare(p: &Patch, trapezoid: Trapezoid) -> Result<Prepared> {
    Ok(Prepared {
        frames: [
            FrameTensors::from_raw(&p.raws[0], trapezoid)?,
            FrameTensors::from_raw(&p.raws[1], trapezoid)?,
            FrameTensors::from_raw(&p.raws[2], trapezoid)?,
        ],
        gt: rgb_to_tensor(&p.ground_truth),
        exposure: p.raws[1].config,
    })
}

/// Loads every triplet of a manifest and cuts it into patches.
pub fn load_patches(manifest: &Manifest, patch: usize, stride: usize) -> Result<Vec<Patch>> {
    let mut out = Vec::new();
    for rec in &manifest.triplets {
        let (raws, gt) = manifest.load_triplet(rec)?;
        out.extend(extract_patches(&raws, &gt, patch, stride)?);
    }
    if out.is_empty() {
        return Err(Error::invalid("manifest yields no training patches"));
    }
    Ok(out)
}

/// Deterministic stream of batches: a fresh seeded permutation per epoch.
struct Batches {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
}

impl Batches {
    fn new(n: usize, seed: u64) -> Self {
        Batches {
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5348_5546_464c_4521),
            order: (0..n).collect(),
            pos: n,
        }
    }

    fn next(&mut self, batch: usize) -> Vec<usize> {
        (0..batch)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.order.shuffle(&mut self.rng);
                    self.pos = 0;
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

fn perceptual_net(cfg: &TrainConfig) -> Result<Option<PerceptualNet<f32>>> {
    if !(cfg.loss.perceptual && cfg.loss.lambda_p > 0.0) {
        return Ok(None);
    }
    Ok(Some(match &cfg.perceptual_weights {
        Some(p) => PerceptualNet::load(p)?,
        None => PerceptualNet::random(0x7065_7263),
    }))
}

#[derive(Serialize)]
struct NanDump<'a> {
    iteration: usize,
    batch: &'a [usize],
    patches: Vec<(usize, usize)>,
    loss: LossBreakdown,
}

/// Trains on in-memory patches.
///
/// With `out_dir` set, the loss log, checkpoints and any NaN diagnostics are
/// written there. Runs are bit-reproducible for a fixed config: every
/// reduction runs in a fixed order regardless of thread count.
pub fn train_on(patches: &[Patch], cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if patches.is_empty() {
        return Err(Error::invalid("no training patches"));
    }
    let prepared: Vec<Prepared> = patches.iter().map(|p| prepare(p, cfg.trapezoid)).collect::<Result<_>>()?;
    let m_scale = prepared[0].exposure.scale(Exposure::Middle);
    if prepared.iter().any(|p| (p.exposure.scale(Exposure::Middle) - m_scale).abs() > 1e-12 * m_scale) {
        return Err(Error::invalid("training patches must share exposure timing"));
    }
    let perceptual = perceptual_net(cfg)?;
    let mut model = Model::<f32>::new(cfg.model.clone(), cfg.seed)?;
    let mut adam = Adam::new(cfg.lr);
    let mut batches = Batches::new(prepared.len(), cfg.seed);

    let mut log_file = match out_dir {
        Some(d) => {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            let path = d.join("loss_log.csv");
            let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            writeln!(f, "{LOSS_LOG_HEADER}").map_err(|e| Error::io(&path, e))?;
            fs::write(d.join("train_config.json"), serde_json::to_string_pretty(cfg)?)
                .map_err(|e| Error::io(d, e))?;
            Some((f, path))
        }
        None => None,
    };

    let mut log = Vec::with_capacity(cfg.iterations);
    let mut checkpoints = Vec::new();
    for it in 1..=cfg.iterations {
        let idx = batches.next(cfg.batch);
        let pick = |slot: usize| FrameTensors::stack_batch(&idx.iter().map(|&i| prepared[i].frames[slot].clone()).collect::<Vec<_>>());
        let input = NetworkInput {
            frames: [pick(0)?, pick(1)?, pick(2)?],
            m_scale,
        };
        let gt = Tensor::stack(&idx.iter().map(|&i| prepared[i].gt.clone()).collect::<Vec<_>>())?;

        let g = Graph::new();
        let (out, binder) = model.forward(&g, &input, Hooks::default())?;
        let (total, breakdown) = total_loss(
            &g,
            &out.hr,
            &out.lr,
            &gt,
            &prepared[idx[0]].exposure,
            &cfg.loss,
            perceptual.as_ref(),
        )?;
        if !breakdown.total.is_finite() {
            let dump = NanDump {
                iteration: it,
                batch: &idx,
                patches: idx.iter().map(|&i| (patches[i].x, patches[i].y)).collect(),
                loss: breakdown,
            };
            let detail = serde_json::to_string(&dump)?;
            if let Some(d) = out_dir {
                let path = d.join("nan_dump.json");
                fs::write(&path, &detail).map_err(|e| Error::io(&path, e))?;
            }
            return Err(Error::NonFiniteLoss { iteration: it, detail });
        }
        let mut grads = g.backward(&total);
        let by_name: HashMap<String, Tensor<f32>> = binder
            .vars()
            .into_iter()
            .filter_map(|(name, v)| grads.take(&v).map(|t| (name, t)))
            .collect();
        drop(out);
        drop(binder);
        adam.step(&mut model.params, &by_name)?;

        let rec = LossRecord {
            iteration: it,
            loss: breakdown,
        };
        if let Some((f, path)) = log_file.as_mut() {
            writeln!(f, "{}", rec.csv_row()).map_err(|e| Error::io(&*path, e))?;
        }
        if it == 1 || it % 100 == 0 || it == cfg.iterations {
            info!("iteration {it}: loss {:.6}", breakdown.total);
        }
        log.push(rec);
        if let Some(d) = out_dir {
            if cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0 && it != cfg.iterations {
                let p = d.join(format!("checkpoint_{it:06}.safetensors"));
                save_checkpoint(&model, &p)?;
                checkpoints.push(p);
            }
        }
    }
    if let Some(d) = out_dir {
        let p = d.join("final.safetensors");
        save_checkpoint(&model, &p)?;
        checkpoints.push(p);
    }
    Ok(TrainOutcome {
        model,
        log,
        checkpoints,
    })
}

/// Trains from `cfg.manifest`, writing artifacts to `cfg.output_dir`.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let manifest = Manifest::load(&cfg.manifest)?;
    let patches = load_patches(&manifest, cfg.patch, cfg.stride)?;
    info!("training on {} patches from {} triplets", patches.len(), manifest.triplets.len());
    train_on(&patches, cfg, Some(&cfg.output_dir))
}

/// Parses a loss log written by [`train_on`].
pub fn read_loss_log(path: impl AsRef<Path>) -> Result<Vec<LossRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: &str| Error::Format {
        what: "loss log",
        detail: format!("bad row {line:?}"),
    };
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad(line));
            }
            let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad(line));
            Ok(LossRecord {
                iteration: f[0].parse().map_err(|_| bad(line))?,
                loss: LossBreakdown {
                    total: num(1)?,
                    l1_hr: num(2)?,
                    perceptual_hr: num(3)?,
                    l1_lr: num(4)?,
                    perceptual_lr: num(5)?,
                },
            })
        })
        .collect()
}
