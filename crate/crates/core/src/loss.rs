//! Tone mapping, the masked LDR-reconstruction objective and PSNR metrics.
//!
//! Prediction tensors are `[N, 3, H, W]` radiance. Ground truth enters as
//! plain tensors, so masks and targets never carry gradient.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autograd::{ConvSpec, Graph, Scalar, Tensor, Var};
use crate::image::RgbImage;
use crate::network::ParamStore;
use crate::sensor::{Exposure, ExposureConfig, GAMMA};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum LossMode {
    /// ℓ¹ + perceptual on μ-law tone-mapped HDR.
    Tm,
    /// Masked ℓ¹ + perceptual on LDR images re-simulated at each exposure.
    Ldr,
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "TM" => Ok(LossMode::Tm),
            "LDR" => Ok(LossMode::Ldr),
            _ => Err(Error::invalid(format!("unknown loss mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub mu: f64,
    /// Weight of the low-resolution term.
    pub alpha: f64,
    pub eps_low: f64,
    pub eps_high: f64,
    pub lambda_p: f64,
    pub perceptual: bool,
    pub mode: LossMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            mu: 5000.0,
            alpha: 0.6,
            eps_low: 0.05,
            eps_high: 0.95,
            lambda_p: 0.1,
            perceptual: true,
            mode: LossMode::Ldr,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::invalid("mu must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid("alpha must lie in [0, 1]"));
        }
        if !(0.0 <= self.eps_low && self.eps_low < self.eps_high && self.eps_high <= 1.0) {
            return Err(Error::invalid("mask thresholds must satisfy 0 <= low < high <= 1"));
        }
        if !(self.lambda_p >= 0.0 && self.lambda_p.is_finite()) {
            return Err(Error::invalid("lambda_p must be >= 0"));
        }
        Ok(())
    }

    fn uses_perceptual(&self) -> bool {
        self.perceptual && self.lambda_p > 0.0
    }
}

/// `log(1 + μH) / log(1 + μ)`.
pub fn mu_law(h: f64, mu: f64) -> f64 {
    (mu * h).ln_1p() / mu.ln_1p()
}

pub fn mu_law_var<T: Scalar>(g: &Graph<T>, h: &Var<T>, mu: f64) -> Var<T> {
    let y = g.ln(&g.add_scalar(&g.scale(h, mu), 1.0));
    g.scale(&y, 1.0 / mu.ln_1p())
}

/// Unclipped `(H · t · g)^(1/2.2)`.
pub fn simulate_ldr(h: f64, t: f64, gain: f64) -> f64 {
    (h * t * gain).max(0.0).powf(1.0 / GAMMA)
}

pub fn simulate_ldr_var<T: Scalar>(g: &Graph<T>, h: &Var<T>, scale: f64) -> Var<T> {
    g.powf(&g.scale(h, scale), 1.0 / GAMMA)
}

fn simulate_ldr_tensor<T: Scalar>(h: &Tensor<T>, scale: f64) -> Tensor<T> {
    h.map(|v| T::of(simulate_ldr(v.f64(), scale, 1.0)))
}

/// 1 where `low ≤ I ≤ high`, else 0.
pub fn well_exposed_mask<T: Scalar>(ldr: &Tensor<T>, low: f64, high: f64) -> Tensor<T> {
    ldr.map(|v| {
        if (low..=high).contains(&v.f64()) {
            T::one()
        } else {
            T::zero()
        }
    })
}

/// 2× box downsampling of an `[N, C, H, W]` tensor.
pub fn box_downsample<T: Scalar>(t: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = t.dims4();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::invalid(format!("cannot box-downsample {w}x{h}")));
    }
    let g = Graph::inference();
    let v = g.constant(t.clone());
    let out = g.avg_pool2(&v).value().clone();
    debug_assert_eq!(out.shape(), [n, c, h / 2, w / 2]);
    Ok(out)
}

/// Frozen convolutional feature extractor for the perceptual distance.
#[derive(Debug, Clone)]
pub struct PerceptualNet<T: Scalar = f32> {
    params: ParamStore<T>,
}

const PERCEPTUAL_LAYERS: [(usize, usize); 3] = [(3, 16), (16, 16), (16, 32)];

impl<T: Scalar> PerceptualNet<T> {
    fn shapes() -> Vec<(String, Vec<usize>)> {
        PERCEPTUAL_LAYERS
            .iter()
            .enumerate()
            .flat_map(|(i, &(cin, cout))| {
                [
                    (format!("features.{i}.weight"), vec![cout, cin, 3, 3]),
                    (format!("features.{i}.bias"), vec![cout]),
                ]
            })
            .collect()
    }

    /// Fixed random features (seeded Xavier).
    pub fn random(seed: u64) -> Self {
        PerceptualNet {
            params: ParamStore::xavier(&Self::shapes(), seed),
        }
    }

    /// Loads weights from a safetensors file with the `features.{i}` layout.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let st = safetensors::SafeTensors::deserialize(&bytes).map_err(|e| Error::Format {
            what: "perceptual weights",
            detail: e.to_string(),
        })?;
        let mut params = ParamStore::default();
        for (name, shape) in Self::shapes() {
            let view = st.tensor(&name).map_err(|e| Error::Format {
                what: "perceptual weights",
                detail: format!("{name}: {e}"),
            })?;
            if view.shape() != shape || view.dtype() != safetensors::Dtype::F32 {
                return Err(Error::Format {
                    what: "perceptual weights",
                    detail: format!("{name}: expected f32 {shape:?}"),
                });
            }
            let data: Vec<f32> = view
                .data()
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            params.insert(name, Tensor::from_f32(shape, &data)?);
        }
        Ok(PerceptualNet { params })
    }

    pub fn cast<U: Scalar>(&self) -> PerceptualNet<U> {
        PerceptualNet {
            params: self.params.cast(),
        }
    }

    /// Mid-level feature maps (after layers 2 and 3).
    fn features(&self, g: &Graph<T>, x: &Var<T>) -> Vec<Var<T>> {
        let layer = |i: usize, x: &Var<T>| {
            let w = g.constant(self.params.get(&format!("features.{i}.weight")).unwrap().clone());
            let b = g.constant(self.params.get(&format!("features.{i}.bias")).unwrap().clone());
            g.relu(&g.conv2d(x, &w, Some(&b), ConvSpec::same(3, 1)))
        };
        let a = layer(0, x);
        let b = layer(1, &a);
        let (_, _, h, w) = dims(b.shape());
        let pooled = if h % 2 == 0 && w % 2 == 0 { g.avg_pool2(&b) } else { b.clone() };
        let c = layer(2, &pooled);
        vec![b, c]
    }

    /// Mean absolute feature difference summed over layers.
    pub fn distance(&self, g: &Graph<T>, a: &Var<T>, b: &Var<T>) -> Var<T> {
        let fa = self.features(g, a);
        let fb = self.features(g, b);
        let terms: Vec<Var<T>> = fa.iter().zip(&fb).map(|(x, y)| g.mean(&g.abs(&g.sub(x, y)))).collect();
        terms[1..].iter().fold(terms[0].clone(), |acc, t| g.add(&acc, t))
    }
}

fn dims(s: &[usize]) -> (usize, usize, usize, usize) {
    (s[0], s[1], s[2], s[3])
}

/// ℓ¹ and perceptual parts of one resolution's loss.
pub struct LossTerms<T: Scalar> {
    pub l1: Var<T>,
    pub perceptual: Option<Var<T>>,
}

impl<T: Scalar> LossTerms<T> {
    fn total(&self, g: &Graph<T>, lambda_p: f64) -> Var<T> {
        match &self.perceptual {
            Some(p) => g.add(&self.l1, &g.scale(p, lambda_p)),
            None => self.l1.clone(),
        }
    }
}

fn check_pair<T: Scalar>(pred: &Var<T>, gt: &Tensor<T>) -> Result<()> {
    if pred.shape() != gt.shape() || pred.shape().len() != 4 || pred.shape()[1] != 3 {
        return Err(Error::shape(gt.shape(), pred.shape()));
    }
    Ok(())
}

/// Masked per-exposure LDR reconstruction loss.
pub fn ldr_recon_loss<T: Scalar>(
    g: &Graph<T>,
    pred: &Var<T>,
    gt: &Tensor<T>,
    exposure: &ExposureConfig,
    cfg: &LossConfig,
    perceptual: Option<&PerceptualNet<T>>,
) -> Result<LossTerms<T>> {
    check_pair(pred, gt)?;
    let mut l1 = g.full(&[1], 0.0);
    let mut perc = cfg.uses_perceptual().then(|| g.full(&[1], 0.0));
    for e in Exposure::ALL {
        let s = exposure.scale(e);
        let target = simulate_ldr_tensor(gt, s);
        let mask = well_exposed_mask(&target, cfg.eps_low, cfg.eps_high);
        let count = mask.sum_f64();
        if count == 0.0 {
            continue;
        }
        let mask_v = g.constant(mask.clone());
        let masked_target = g.constant(target.zip_map(&mask, |a, m| a * m));
        let masked_pred = g.mul(&simulate_ldr_var(g, pred, s), &mask_v);
        let term = g.scale(&g.sum(&g.abs(&g.sub(&masked_pred, &masked_target))), 1.0 / count);
        l1 = g.add(&l1, &term);
        if let (Some(p), Some(net)) = (perc.as_mut(), perceptual) {
            *p = g.add(p, &net.distance(g, &masked_pred, &masked_target));
        }
    }
    Ok(LossTerms { l1, perceptual: perc })
}

/// ℓ¹ (+ perceptual) between μ-law images, each sample normalized by its
/// ground-truth peak.
pub fn tm_loss<T: Scalar>(
    g: &Graph<T>,
    pred: &Var<T>,
    gt: &Tensor<T>,
    cfg: &LossConfig,
    perceptual: Option<&PerceptualNet<T>>,
) -> Result<LossTerms<T>> {
    check_pair(pred, gt)?;
    let (n, c, h, w) = gt.dims4();
    let per = c * h * w;
    let mut inv = Vec::with_capacity(gt.numel());
    for s in 0..n {
        let peak = gt.data()[s * per..(s + 1) * per].iter().map(|v| v.f64()).fold(0.0, f64::max);
        let k = if peak > 0.0 { 1.0 / peak } else { 1.0 };
        inv.extend(std::iter::repeat(T::of(k)).take(per));
    }
    let inv = Tensor::new(gt.shape().to_vec(), inv)?;
    let gt_tm = gt.zip_map(&inv, |a, k| T::of(mu_law((a * k).f64(), cfg.mu)));
    let gt_v = g.constant(gt_tm);
    let pred_tm = mu_law_var(g, &g.mul(pred, &g.constant(inv)), cfg.mu);
    let l1 = g.mean(&g.abs(&g.sub(&pred_tm, &gt_v)));
    let perceptual = match perceptual {
        Some(net) if cfg.uses_perceptual() => Some(net.distance(g, &pred_tm, &gt_v)),
        _ => None,
    };
    Ok(LossTerms { l1, perceptual })
}

/// Scalar values of the loss components, for logging.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub l1_hr: f64,
    pub perceptual_hr: f64,
    pub l1_lr: f64,
    pub perceptual_lr: f64,
}

/// `L(hr) + α · L(lr)`; the LR target is the 2× box downsample of the HR one.
pub fn total_loss<T: Scalar>(
    g: &Graph<T>,
    hr_pred: &Var<T>,
    lr_pred: &Var<T>,
    hr_gt: &Tensor<T>,
    exposure: &ExposureConfig,
    cfg: &LossConfig,
    perceptual: Option<&PerceptualNet<T>>,
) -> Result<(Var<T>, LossBreakdown)> {
    cfg.validate()?;
    let lr_gt = box_downsample(hr_gt)?;
    let part = |pred: &Var<T>, gt: &Tensor<T>| match cfg.mode {
        LossMode::Ldr => ldr_recon_loss(g, pred, gt, exposure, cfg, perceptual),
        LossMode::Tm => tm_loss(g, pred, gt, cfg, perceptual),
    };
    let hr = part(hr_pred, hr_gt)?;
    let lr = part(lr_pred, &lr_gt)?;
    let total = g.add(&hr.total(g, cfg.lambda_p), &g.scale(&lr.total(g, cfg.lambda_p), cfg.alpha));
    let val = |v: &Option<Var<T>>| v.as_ref().map_or(0.0, |v| v.item().f64());
    let breakdown = LossBreakdown {
        total: total.item().f64(),
        l1_hr: hr.l1.item().f64(),
        perceptual_hr: val(&hr.perceptual),
        l1_lr: lr.l1.item().f64(),
        perceptual_lr: val(&lr.perceptual),
    };
    Ok((total, breakdown))
}

/// PSNR in dB for signals with the given peak; `+∞` for identical inputs.
pub fn psnr(a: &[f32], b: &[f32], peak: f64) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape(a.len(), b.len()));
    }
    let mse = a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>() / a.len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    })
}

fn tone_map_pair(pred: &RgbImage, gt: &RgbImage, mu: f64) -> Result<(Vec<f32>, Vec<f32>)> {
    if !pred.same_shape(gt) {
        return Err(Error::shape((gt.width, gt.height), (pred.width, pred.height)));
    }
    let peak = gt.max_value() as f64;
    let k = if peak > 0.0 { 1.0 / peak } else { 1.0 };
    let tm = |v: f32, clip: bool| {
        let x = v as f64 * k;
        let x = if clip { x.clamp(0.0, 1.0) } else { x };
        mu_law(x, mu) as f32
    };
    Ok((
        pred.data.iter().map(|&v| tm(v, true)).collect(),
        gt.data.iter().map(|&v| tm(v, false)).collect(),
    ))
}

/// PSNR between μ-law images; both are normalized by the ground-truth peak
/// and the prediction is clipped to `[0, 1]`.
pub fn psnr_mu(pred: &RgbImage, gt: &RgbImage, mu: f64) -> Result<f64> {
    let (a, b) = tone_map_pair(pred, gt, mu)?;
    psnr(&a, &b, 1.0)
}

/// [`psnr_mu`] over the pixels whose ground-truth luminance lies in the
/// darkest `fraction` of the frame.
pub fn psnr_mu_darkest(pred: &RgbImage, gt: &RgbImage, mu: f64, fraction: f64) -> Result<f64> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid("fraction must lie in (0, 1]"));
    }
    let (a, b) = tone_map_pair(pred, gt, mu)?;
    let lum = gt.luminance();
    let mut order: Vec<usize> = (0..lum.len()).collect();
    order.sort_by(|&i, &j| lum[i].total_cmp(&lum[j]).then(i.cmp(&j)));
    let keep = ((lum.len() as f64 * fraction).ceil() as usize).max(1);
    let (mut sa, mut sb) = (Vec::with_capacity(3 * keep), Vec::with_capacity(3 * keep));
    for &i in &order[..keep] {
        sa.extend_from_slice(&a[3 * i..3 * i + 3]);
        sb.extend_from_slice(&b[3 * i..3 * i + 3]);
    }
    psnr(&sa, &sb, 1.0)
}

/// JSON-friendly rendering of a dB score (`"inf"` for identical images).
pub fn format_db(v: f64) -> serde_json::Value {
    if v.is_finite() {
        serde_json::json!(v)
    } else if v > 0.0 {
        serde_json::json!("inf")
    } else {
        serde_json::json!("nan")
    }
}
