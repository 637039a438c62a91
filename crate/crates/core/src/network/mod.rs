//! The reconstruction network: per-frame HDR fusion, attention temporal
//! denoising and gated super-resolution.
//!
//! Features live at half the raw resolution through fusion and denoising.
//! The SR branch and the gate work at quarter resolution, and two
//! pixel-shuffle stages bring the HR head back to full resolution. Outputs
//! are radiance in the same units as the simulator's ground truth.

mod checkpoint;
mod config;
mod inputs;
mod model;
mod params;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{FrameMode, ModelConfig, SrInput, Variant};
pub use inputs::{FrameTensors, NetworkInput};
pub use model::{declare, fuse, gate_fuse, run, Hooks, Model, Output, Trace};
pub use params::{Binder, ParamStore};

use crate::autograd::{Graph, Scalar, Tensor};
use crate::image::RgbImage;
use crate::{Error, Result};

/// Static cost of one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub params: u64,
    /// Convolution multiply-accumulates.
    pub madds: u64,
    /// `2 · madds`.
    pub flops: u64,
    pub height: usize,
    pub width: usize,
}

/// Exact parameter and multiply-add counts for a `height × width` raw.
pub fn report_complexity(cfg: &ModelConfig, height: usize, width: usize) -> Result<ComplexityReport> {
    let g = Graph::<f32>::shape_only();
    let binder = Binder::declaring();
    run(&g, &binder, cfg, &NetworkInput::phantom(1, height, width), Hooks::default())?;
    let params = binder
        .declared()
        .iter()
        .map(|(_, s)| s.iter().product::<usize>() as u64)
        .sum();
    Ok(ComplexityReport {
        params,
        madds: g.madds(),
        flops: 2 * g.madds(),
        height,
        width,
    })
}

/// Sample `n` of an `[N, 3, H, W]` tensor as an interleaved image.
pub fn tensor_to_rgb<T: Scalar>(t: &Tensor<T>, n: usize) -> Result<RgbImage> {
    let (batch, c, h, w) = t.dims4();
    if c != 3 || n >= batch {
        return Err(Error::invalid(format!("cannot take sample {n} of {:?} as RGB", t.shape())));
    }
    let d = &t.data()[n * 3 * h * w..(n + 1) * 3 * h * w];
    let plane = h * w;
    Ok(RgbImage::from_fn(w, h, |x, y| {
        let i = y * w + x;
        [d[i].f64() as f32, d[plane + i].f64() as f32, d[2 * plane + i].f64() as f32]
    }))
}

/// `[1, 3, H, W]` tensor of an interleaved image.
pub fn rgb_to_tensor<T: Scalar>(img: &RgbImage) -> Tensor<T> {
    let plane = img.width * img.height;
    let mut data = vec![T::zero(); 3 * plane];
    for (i, px) in img.data.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = T::of(px[c] as f64);
        }
    }
    Tensor::new(vec![1, 3, img.height, img.width], data).unwrap()
}

#[cfg(test)]
mod tests;
