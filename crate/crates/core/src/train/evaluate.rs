use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Serialize, Serializer};

use crate::baseline::naive_reconstruct_with;
use crate::image::RgbImage;
use crate::loss::{psnr, psnr_mu, psnr_mu_darkest};
use crate::network::{tensor_to_rgb, Model, NetworkInput};
use crate::sensor::{TeqRawFrame, Trapezoid};
use crate::simulator::Manifest;
use crate::{Error, Result};

/// Fraction of darkest ground-truth pixels scored by `psnr_mu_dark`.
pub const DARK_FRACTION: f64 = 0.1;

pub const CONVENTION: &str = "scores at half resolution: ground truth is 2x box-downsampled; \
network H_hr is 2x box-downsampled, the naive merge is used as is; \
both images normalized by the ground-truth peak, prediction clipped to [0,1]; \
psnr on linear values, psnr_mu after mu-law; psnr_mu_dark over the darkest 10% of ground-truth luminance";

pub enum Method<'a> {
    Naive,
    Network(&'a Model<f32>),
}

impl Method<'_> {
    pub fn name(&self) -> String {
        match self {
            Method::Naive => "naive".to_string(),
            Method::Network(m) => format!("{}-{:?}", m.config.variant.name(), m.config.frames).to_lowercase(),
        }
    }
}

/// Full-resolution `(H_hr, H_lr)` from a trained model.
pub fn reconstruct_network(model: &Model<f32>, raws: [&TeqRawFrame; 3], trapezoid: Trapezoid) -> Result<(RgbImage, RgbImage)> {
    let input = NetworkInput::from_triplet(raws, trapezoid)?;
    let (hr, lr) = model.infer(&input)?;
    Ok((tensor_to_rgb(&hr, 0)?, tensor_to_rgb(&lr, 0)?))
}

fn db<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    crate::loss::format_db(*v).serialize(s)
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalRow {
    pub scene: String,
    pub frame: usize,
    pub method: String,
    #[serde(serialize_with = "db")]
    pub psnr: f64,
    #[serde(serialize_with = "db")]
    pub psnr_mu: f64,
    #[serde(serialize_with = "db")]
    pub psnr_mu_dark: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SceneSummary {
    pub scene: String,
    pub method: String,
    pub frames: usize,
    #[serde(serialize_with = "db")]
    pub psnr: f64,
    #[serde(serialize_with = "db")]
    pub psnr_mu: f64,
    #[serde(serialize_with = "db")]
    pub psnr_mu_dark: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub convention: &'static str,
    pub mu: f64,
    pub rows: Vec<EvalRow>,
    pub scenes: Vec<SceneSummary>,
}

impl EvalReport {
    /// Mean PSNR-μ over all rows.
    pub fn mean_psnr_mu(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.psnr_mu))
    }

    pub fn mean_psnr_mu_dark(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.psnr_mu_dark))
    }

    pub fn mean_psnr(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.psnr))
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Linear PSNR after normalizing by the ground-truth peak.
pub fn psnr_linear(pred: &RgbImage, gt: &RgbImage) -> Result<f64> {
    if !pred.same_shape(gt) {
        return Err(Error::shape((gt.width, gt.height), (pred.width, pred.height)));
    }
    let peak = gt.max_value();
    let k = if peak > 0.0 { 1.0 / peak } else { 1.0 };
    let a: Vec<f32> = pred.data.iter().map(|v| (v * k).clamp(0.0, 1.0)).collect();
    let b: Vec<f32> = gt.data.iter().map(|v| v * k).collect();
    psnr(&a, &b, 1.0)
}

/// Half-resolution prediction of `method` for one triplet.
pub fn predict_half(method: &Method<'_>, raws: [&TeqRawFrame; 3], trapezoid: Trapezoid) -> Result<RgbImage> {
    match method {
        Method::Naive => naive_reconstruct_with(raws[1], trapezoid),
        Method::Network(m) => reconstruct_network(m, raws, trapezoid)?.0.box_downsample2(),
    }
}

/// Scores one prediction against a full-resolution ground truth.
pub fn score_half(pred_half: &RgbImage, gt: &RgbImage, mu: f64) -> Result<(f64, f64, f64)> {
    let gt_half = gt.box_downsample2()?;
    Ok((
        psnr_linear(pred_half, &gt_half)?,
        psnr_mu(pred_half, &gt_half, mu)?,
        psnr_mu_darkest(pred_half, &gt_half, mu, DARK_FRACTION)?,
    ))
}

/// Scores `method` on every triplet of a manifest.
pub fn evaluate(method: &Method<'_>, manifest: &Manifest, mu: f64, trapezoid: Trapezoid) -> Result<EvalReport> {
    let mut rows = Vec::with_capacity(manifest.triplets.len());
    for rec in &manifest.triplets {
        let (raws, gt) = manifest.load_triplet(rec)?;
        let pred = predict_half(method, [&raws[0], &raws[1], &raws[2]], trapezoid)?;
        let (p, pm, pd) = score_half(&pred, &gt, mu)?;
        rows.push(EvalRow {
            scene: rec.scene.clone(),
            frame: rec.frames[1],
            method: method.name(),
            psnr: p,
            psnr_mu: pm,
            psnr_mu_dark: pd,
        });
    }
    Ok(summarize(rows, mu))
}

pub fn summarize(rows: Vec<EvalRow>, mu: f64) -> EvalReport {
    let mut groups: BTreeMap<(String, String), Vec<&EvalRow>> = BTreeMap::new();
    for r in &rows {
        groups.entry((r.scene.clone(), r.method.clone())).or_default().push(r);
    }
    let scenes = groups
        .into_iter()
        .map(|((scene, method), rs)| SceneSummary {
            scene,
            method,
            frames: rs.len(),
            psnr: mean(rs.iter().map(|r| r.psnr)),
            psnr_mu: mean(rs.iter().map(|r| r.psnr_mu)),
            psnr_mu_dark: mean(rs.iter().map(|r| r.psnr_mu_dark)),
        })
        .collect();
    EvalReport {
        convention: CONVENTION,
        mu,
        rows,
        scenes,
    }
}

fn cell(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.4}")
    } else if v > 0.0 {
        "inf".to_string()
    } else {
        "nan".to_string()
    }
}

/// Writes `report.json` and `report.csv` into `dir`.
pub fn write_report(report: &EvalReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = dir.join("report.json");
    fs::write(&json, serde_json::to_string_pretty(report)?).map_err(|e| Error::io(&json, e))?;
    let mut csv = String::from("scene,frame,method,psnr,psnr_mu,psnr_mu_dark\n");
    for r in &report.rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.scene,
            r.frame,
            r.method,
            cell(r.psnr),
            cell(r.psnr_mu),
            cell(r.psnr_mu_dark)
        ));
    }
    let path = dir.join("report.csv");
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))
}

pub(crate) fn fmt_db(v: f64) -> String {
    cell(v)
}
