use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize, Serializer};

use super::evaluate::{evaluate, fmt_db, Method};
use super::trainer::{load_patches, train_on, TrainConfig};
use crate::loss::LossMode;
use crate::network::{FrameMode, ModelConfig, Variant};
use crate::simulator::Manifest;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationSpec {
    pub variants: Vec<Variant>,
    pub frames: Vec<FrameMode>,
    pub losses: Vec<LossMode>,
    /// Shared training settings; widths come from `base.model`.
    pub base: TrainConfig,
    /// Evaluation manifest; the training manifest when absent.
    pub eval_manifest: Option<PathBuf>,
}

impl Default for AblationSpec {
    fn default() -> Self {
        AblationSpec {
            variants: Variant::ALL.to_vec(),
            frames: vec![FrameMode::Single, FrameMode::Multi],
            losses: vec![LossMode::Tm, LossMode::Ldr],
            base: TrainConfig::default(),
            eval_manifest: None,
        }
    }
}

fn db<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    crate::loss::format_db(*v).serialize(s)
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub frames: FrameMode,
    pub loss: LossMode,
    pub params: usize,
    pub final_loss: f64,
    #[serde(serialize_with = "db")]
    pub psnr: f64,
    #[serde(serialize_with = "db")]
    pub psnr_mu: f64,
    #[serde(serialize_with = "db")]
    pub psnr_mu_dark: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub naive_psnr_mu: f64,
}

impl AblationReport {
    pub fn markdown(&self) -> String {
        let mut s = String::from(
            "| variant | frames | loss | params | final loss | PSNR | PSNR-μ | PSNR-μ (dark 10%) |\n\
             |---|---|---|---:|---:|---:|---:|---:|\n",
        );
        for r in &self.rows {
            s.push_str(&format!(
                "| {} | {:?} | {:?} | {} | {:.5} | {} | {} | {} |\n",
                r.variant.name(),
                r.frames,
                r.loss,
                r.params,
                r.final_loss,
                fmt_db(r.psnr),
                fmt_db(r.psnr_mu),
                fmt_db(r.psnr_mu_dark)
            ));
        }
        s.push_str(&format!("\nnaive baseline PSNR-μ: {}\n", fmt_db(self.naive_psnr_mu)));
        s
    }
}

/// Model config of one ablation cell: variant flags from the preset, widths
/// from `base`.
pub fn cell_config(base: &ModelConfig, variant: Variant, frames: FrameMode) -> ModelConfig {
    let p = ModelConfig::preset(variant, frames);
    ModelConfig {
        variant,
        frames,
        attention: p.attention,
        gate: p.gate,
        sr_input: p.sr_input,
        ..base.clone()
    }
}

/// Trains and evaluates every configuration of the matrix under one seed
/// and dataset; writes `ablation.md` and `ablation.json` into `out_dir`.
pub fn run_ablation(spec: &AblationSpec, out_dir: impl AsRef<Path>) -> Result<AblationReport> {
    let out_dir = out_dir.as_ref();
    if spec.variants.is_empty() || spec.frames.is_empty() || spec.losses.is_empty() {
        return Err(Error::invalid("ablation matrix is empty"));
    }
    let manifest = Manifest::load(&spec.base.manifest)?;
    let eval_manifest = match &spec.eval_manifest {
        Some(p) => Manifest::load(p)?,
        None => manifest.clone(),
    };
    let patches = load_patches(&manifest, spec.base.patch, spec.base.stride)?;
    let mu = spec.base.loss.mu;
    let naive = evaluate(&Method::Naive, &eval_manifest, mu, spec.base.trapezoid)?;
    let mut rows = Vec::new();
    for &variant in &spec.variants {
        for &frames in &spec.frames {
            for &loss in &spec.losses {
                let mut cfg = spec.base.clone();
                cfg.model = cell_config(&spec.base.model, variant, frames);
                cfg.loss.mode = loss;
                let name = format!("{}_{:?}_{:?}", variant.name(), frames, loss).to_lowercase();
                cfg.output_dir = out_dir.join(&name);
                info!("ablation cell {name}");
                let outcome = train_on(&patches, &cfg, Some(&cfg.output_dir))?;
                let report = evaluate(&Method::Network(&outcome.model), &eval_manifest, mu, cfg.trapezoid)?;
                rows.push(AblationRow {
                    variant,
                    frames,
                    loss,
                    params: outcome.model.num_params(),
                    final_loss: outcome.log.last().map_or(f64::NAN, |r| r.loss.total),
                    psnr: report.mean_psnr(),
                    psnr_mu: report.mean_psnr_mu(),
                    psnr_mu_dark: report.mean_psnr_mu_dark(),
                });
            }
        }
    }
    let report = AblationReport {
        rows,
        naive_psnr_mu: naive.mean_psnr_mu(),
    };
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let md = out_dir.join("ablation.md");
    fs::write(&md, report.markdown()).map_err(|e| Error::io(&md, e))?;
    let js = out_dir.join("ablation.json");
    fs::write(&js, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io(&js, e))?;
    Ok(report)
}
