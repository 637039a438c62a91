//! Tri-exposure quad-bayer (TEQ) HDR video toolkit.
//!
//! The crate covers the full loop around TEQ sensors:
//!
//! * [`sensor`]: mosaic geometry, sub-exposure extraction and the engineered
//!   per-pixel maps (trapezoid weight, bounded flow).
//! * [`simulator`]: noisy, motion-blurred TEQ raw sequences from HDR footage.
//! * [`baseline`]: bilinear demosaic plus trapezoid-weighted radiance merge.
//! * [`network`]: HDR fusion, attention temporal denoising and gated
//!   super-resolution, with ablation variants and a complexity reporter.
//! * [`loss`]: mu-law tone mapping, the masked LDR-reconstruction loss and
//!   PSNR metrics.
//! * [`train`]: patching, Adam training, evaluation and ablation sweeps.
//!
//! Differentiation runs on the small reverse-mode engine in [`autograd`].

pub mod autograd;
pub mod baseline;
pub mod error;
pub mod exec;
pub mod image;
pub mod loss;
pub mod network;
pub mod pfm;
pub mod scenes;
pub mod sensor;
pub mod simulator;
pub mod train;

pub use error::{Error, Result};
