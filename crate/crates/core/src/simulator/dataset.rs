//! On-disk dataset layout: per-frame raw PFM + JSON sidecar + ground-truth
//! HDR PFM, and a manifest listing consecutive triplets.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{anchor_scale, frame_seed, simulate_teq_frame_at, SimulatedFrame, SimulationConfig};
use crate::exec;
use crate::image::RgbImage;
use crate::pfm;
use crate::sensor::{ExposureConfig, TeqLayout, TeqRawFrame};
use crate::{Error, Result};

/// JSON metadata stored next to every raw PFM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSidecar {
    pub layout: TeqLayout,
    pub t_s: f64,
    pub r: f64,
    pub gains: [f64; 3],
    pub sigma_s: f64,
    #[serde(rename = "K")]
    pub k: [usize; 3],
    pub bit_depth: u32,
    pub seed: u64,
    pub frame_index: usize,
    #[serde(default)]
    pub scene: String,
    #[serde(default)]
    pub radiance_scale: Option<f64>,
}

impl RawSidecar {
    pub fn new(raw: &TeqRawFrame, k: [usize; 3], bit_depth: u32) -> Self {
        RawSidecar {
            layout: raw.layout,
            t_s: raw.config.t_s,
            r: raw.config.r,
            gains: raw.config.gains,
            sigma_s: raw.config.sigma_s,
            k,
            bit_depth,
            seed: raw.seed,
            frame_index: raw.frame_index,
            scene: String::new(),
            radiance_scale: None,
        }
    }

    pub fn exposure(&self) -> ExposureConfig {
        ExposureConfig {
            t_s: self.t_s,
            r: self.r,
            gains: self.gains,
            sigma_s: self.sigma_s,
        }
    }
}

pub fn sidecar_path(raw_path: &Path) -> PathBuf {
    raw_path.with_extension("json")
}

pub fn read_sidecar(path: impl AsRef<Path>) -> Result<RawSidecar> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes `raw` as a single-channel PFM plus its JSON sidecar.
pub fn write_raw(path: impl AsRef<Path>, raw: &TeqRawFrame, sidecar: &RawSidecar) -> Result<()> {
    let path = path.as_ref();
    pfm::write_gray(path, &raw.mosaic)?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(sidecar)?;
    fs::write(&side, json).map_err(|e| Error::io(&side, e))
}

/// Reads a raw PFM and the sidecar next to it.
pub fn load_raw(path: impl AsRef<Path>) -> Result<TeqRawFrame> {
    let path = path.as_ref();
    let mosaic = pfm::read_gray(path)?;
    let side = read_sidecar(sidecar_path(path))?;
    let raw = TeqRawFrame {
        mosaic,
        layout: side.layout,
        config: side.exposure(),
        frame_index: side.frame_index,
        seed: side.seed,
    };
    raw.validate()?;
    Ok(raw)
}

/// One training/evaluation sample: three consecutive raws around a reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletRecord {
    pub scene: String,
    /// Frame indices (previous, reference, next).
    pub frames: [usize; 3],
    /// Raw PFM paths, relative to the manifest directory.
    pub raws: [String; 3],
    /// Ground-truth HDR PFM of the reference frame.
    pub ground_truth: String,
    pub width: usize,
    pub height: usize,
}

/// Top-level JSON array of [`TripletRecord`]s plus the directory that
/// relative paths resolve against.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub triplets: Vec<TripletRecord>,
    pub base: PathBuf,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let triplets: Vec<TripletRecord> = serde_json::from_str(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Manifest { triplets, base })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(&self.triplets)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.base.join(rel)
    }

    /// Loads the three raws and the reference ground truth of a record.
    pub fn load_triplet(&self, rec: &TripletRecord) -> Result<([TeqRawFrame; 3], RgbImage)> {
        let raws = [
            load_raw(self.resolve(&rec.raws[0]))?,
            load_raw(self.resolve(&rec.raws[1]))?,
            load_raw(self.resolve(&rec.raws[2]))?,
        ];
        let gt = pfm::read_rgb(self.resolve(&rec.ground_truth))?;
        for r in &raws {
            if r.width() != gt.width || r.height() != gt.height {
                return Err(Error::shape((gt.width, gt.height), (r.width(), r.height())));
            }
        }
        Ok((raws, gt))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SequenceReport {
    pub scene: String,
    pub frames: usize,
    pub triplets: usize,
    pub error: Option<String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetReport {
    pub manifest: PathBuf,
    pub triplets: usize,
    pub sequences: Vec<SequenceReport>,
}

fn pfm_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pfm")))
        .collect();
    files.sort();
    Ok(files)
}

/// Sequences under `input`: the directory itself if it holds PFM frames, and
/// every immediate subdirectory that does.
fn discover_sequences(input: &Path) -> Result<Vec<(String, Vec<PathBuf>)>> {
    let mut seqs = Vec::new();
    let top = pfm_files(input)?;
    if !top.is_empty() {
        let name = input
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "sequence".into());
        seqs.push((name, top));
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(input)
        .map_err(|e| Error::io(input, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    for d in dirs {
        let files = pfm_files(&d)?;
        if !files.is_empty() {
            seqs.push((d.file_name().unwrap().to_string_lossy().into_owned(), files));
        }
    }
    Ok(seqs)
}

fn load_sequence(files: &[PathBuf], warnings: &mut Vec<String>) -> Result<Vec<RgbImage>> {
    let mut frames = Vec::with_capacity(files.len());
    for f in files {
        let img = pfm::read_rgb(f)?;
        if !img.is_finite() || img.data.iter().any(|&v| v < 0.0) {
            return Err(Error::invalid(format!(
                "{} holds negative or non-finite radiance",
                f.display()
            )));
        }
        if let Some(first) = frames.first() {
            let first: &RgbImage = first;
            if !img.same_shape(first) {
                return Err(Error::shape((first.width, first.height), (img.width, img.height)));
            }
        }
        frames.push(img);
    }
    let (w, h) = (frames[0].width / 4 * 4, frames[0].height / 4 * 4);
    if w == 0 || h == 0 {
        return Err(Error::invalid("frames smaller than one 4x4 macro pattern"));
    }
    if w != frames[0].width || h != frames[0].height {
        warnings.push(format!(
            "cropped {}x{} frames to {w}x{h}",
            frames[0].width, frames[0].height
        ));
        for f in frames.iter_mut() {
            *f = f.crop(0, 0, w, h)?;
        }
    }
    Ok(frames)
}

fn simulate_sequence(
    scene: &str,
    files: &[PathBuf],
    output: &Path,
    config: &SimulationConfig,
    records: &mut Vec<TripletRecord>,
) -> SequenceReport {
    let mut report = SequenceReport {
        scene: scene.to_string(),
        frames: files.len(),
        triplets: 0,
        error: None,
        warnings: Vec::new(),
    };
    match simulate_sequence_inner(scene, files, output, config, &mut report.warnings) {
        Ok(recs) => {
            report.triplets = recs.len();
            records.extend(recs);
        }
        Err(e) => report.error = Some(e.to_string()),
    }
    report
}

/// Simulates every frame of an in-memory sequence with deterministic
/// per-frame seeds. Returns the effective config (after the short-sequence
/// blur fallback, with the sequence radiance scale filled in).
pub fn simulate_frames(
    scene: &str,
    frames: &[RgbImage],
    config: &SimulationConfig,
    warnings: &mut Vec<String>,
) -> Result<(SimulationConfig, Vec<SimulatedFrame>)> {
    if frames.is_empty() {
        return Err(Error::invalid("empty sequence"));
    }
    let mut cfg = config.clone();
    for (i, k) in cfg.blur.iter_mut().enumerate() {
        if *k > frames.len() {
            let msg = format!(
                "sequence shorter than K[{i}] = {k}; falling back to K = 1 for that exposure"
            );
            log::warn!("{scene}: {msg}");
            warnings.push(msg);
            *k = 1;
        }
    }
    // keep K_S <= K_M <= K_L after the fallback
    cfg.blur[1] = cfg.blur[1].min(cfg.blur[2]);
    cfg.blur[0] = cfg.blur[0].min(cfg.blur[1]);
    let scale = cfg
        .radiance_scale
        .unwrap_or_else(|| anchor_scale(&frames[frames.len() / 2], &cfg.exposure));
    cfg.radiance_scale = Some(scale);

    let reach = cfg.blur[2];
    let sims = exec::map_range(frames.len(), |t| -> Result<SimulatedFrame> {
        let lo = t.saturating_sub(reach);
        let hi = (t + reach + 1).min(frames.len());
        let seed = frame_seed(cfg.seed, scene, t);
        let mut sim = simulate_teq_frame_at(&frames[lo..hi], t - lo, &cfg, seed)?;
        sim.raw.frame_index = t;
        Ok(sim)
    });
    let sims = sims.into_iter().collect::<Result<Vec<_>>>()?;
    Ok((cfg, sims))
}

fn simulate_sequence_inner(
    scene: &str,
    files: &[PathBuf],
    output: &Path,
    config: &SimulationConfig,
    warnings: &mut Vec<String>,
) -> Result<Vec<TripletRecord>> {
    let frames = load_sequence(files, warnings)?;
    if frames.len() < 3 {
        return Err(Error::invalid(format!(
            "sequence has {} frames, triplets need at least 3",
            frames.len()
        )));
    }
    let (cfg, sims) = simulate_frames(scene, &frames, config, warnings)?;
    let dir = output.join(scene);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for (t, sim) in sims.iter().enumerate() {
        let mut side = RawSidecar::new(&sim.raw, cfg.blur, cfg.bit_depth);
        side.scene = scene.to_string();
        side.radiance_scale = cfg.radiance_scale;
        write_raw(dir.join(format!("raw_{t:05}.pfm")), &sim.raw, &side)?;
        pfm::write_rgb(dir.join(format!("gt_{t:05}.pfm")), &sim.ground_truth)?;
    }

    let (w, h) = (frames[0].width, frames[0].height);
    Ok((1..frames.len() - 1)
        .map(|t| TripletRecord {
            scene: scene.to_string(),
            frames: [t - 1, t, t + 1],
            raws: [t - 1, t, t + 1].map(|i| format!("{scene}/raw_{i:05}.pfm")),
            ground_truth: format!("{scene}/gt_{t:05}.pfm"),
            width: w,
            height: h,
        })
        .collect())
}

/// Simulates every HDR sequence under `input` into `output` and writes
/// `output/manifest.json`. Per-sequence failures are reported, not fatal,
/// unless no sequence succeeds.
pub fn build_dataset(
    input: impl AsRef<Path>,
    output: impl AsRef<Path>,
    config: &SimulationConfig,
) -> Result<DatasetReport> {
    let (input, output) = (input.as_ref(), output.as_ref());
    config.validate()?;
    let seqs = discover_sequences(input)?;
    if seqs.is_empty() {
        return Err(Error::invalid(format!(
            "no PFM sequences found in {}",
            input.display()
        )));
    }
    fs::create_dir_all(output).map_err(|e| Error::io(output, e))?;
    let mut records = Vec::new();
    let sequences: Vec<SequenceReport> = seqs
        .iter()
        .map(|(name, files)| simulate_sequence(name, files, output, config, &mut records))
        .collect();
    if records.is_empty() {
        let errs: Vec<String> = sequences
            .iter()
            .map(|s| format!("{}: {}", s.scene, s.error.as_deref().unwrap_or("no triplets")))
            .collect();
        return Err(Error::invalid(format!("no sequence produced triplets ({})", errs.join("; "))));
    }
    let manifest_path = output.join("manifest.json");
    let manifest = Manifest {
        triplets: records,
        base: output.to_path_buf(),
    };
    manifest.save(&manifest_path)?;
    Ok(DatasetReport {
        manifest: manifest_path,
        triplets: manifest.triplets.len(),
        sequences,
    })
}
