use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Architecture variants of the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Variant {
    /// Direct feature estimation, no attention, no super-resolution.
    Baseline,
    /// Weighted fusion plus attention denoising.
    Att,
    /// Adds super-resolution without the gate.
    Nsr,
    /// Gated super-resolution from the subsampled exposure stack.
    GsrSsr,
    /// Gated super-resolution from the original raw.
    GsrOr,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Baseline,
        Variant::Att,
        Variant::Nsr,
        Variant::GsrSsr,
        Variant::GsrOr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "BASELINE",
            Variant::Att => "ATT",
            Variant::Nsr => "NSR",
            Variant::GsrSsr => "GSR_SSR",
            Variant::GsrOr => "GSR_OR",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameMode {
    /// The reference frame is fed three times.
    Single,
    Multi,
}

impl std::str::FromStr for FrameMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "single" => Ok(FrameMode::Single),
            "multi" => Ok(FrameMode::Multi),
            _ => Err(Error::invalid(format!("unknown frame mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SrInput {
    /// 12-channel half-resolution stack of per-exposure, per-bayer-site planes.
    SubsampledStack,
    OriginalRaw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub frames: FrameMode,
    /// Feature width `C` used by every stage.
    pub width: usize,
    pub drdb_blocks: usize,
    pub drdb_convs: usize,
    pub growth: usize,
    pub dilation: usize,
    pub sr_resblocks: usize,
    pub hr_resblocks: usize,
    pub attention: bool,
    pub gate: bool,
    /// `None` disables super-resolution; the HR output is then a bilinear
    /// upsample of the LR output.
    pub sr_input: Option<SrInput>,
    pub leaky_slope: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::preset(Variant::GsrOr, FrameMode::Multi)
    }
}

impl ModelConfig {
    /// Full-width configuration of a variant.
    pub fn preset(variant: Variant, frames: FrameMode) -> Self {
        let (attention, gate, sr_input) = match variant {
            Variant::Baseline => (false, false, None),
            Variant::Att => (true, false, None),
            Variant::Nsr => (true, false, Some(SrInput::OriginalRaw)),
            Variant::GsrSsr => (true, true, Some(SrInput::SubsampledStack)),
            Variant::GsrOr => (true, true, Some(SrInput::OriginalRaw)),
        };
        ModelConfig {
            variant,
            frames,
            width: 64,
            drdb_blocks: 3,
            drdb_convs: 3,
            growth: 32,
            dilation: 2,
            sr_resblocks: 8,
            hr_resblocks: 8,
            attention,
            gate,
            sr_input,
            leaky_slope: 0.1,
        }
    }

    /// Narrow, shallow configuration for quick experiments.
    pub fn tiny(variant: Variant, frames: FrameMode) -> Self {
        ModelConfig {
            width: 16,
            growth: 8,
            drdb_blocks: 2,
            sr_resblocks: 2,
            hr_resblocks: 2,
            ..Self::preset(variant, frames)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let expected = Self::preset(self.variant, self.frames);
        if (self.attention, self.gate, self.sr_input) != (expected.attention, expected.gate, expected.sr_input) {
            return Err(Error::invalid(format!(
                "flags attention={} gate={} sr_input={:?} are inconsistent with variant {}",
                self.attention,
                self.gate,
                self.sr_input,
                self.variant.name()
            )));
        }
        if self.width == 0 || self.growth == 0 || self.dilation == 0 || self.drdb_convs == 0 {
            return Err(Error::invalid("widths, growth, dilation and DRDB depth must be positive"));
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return Err(Error::invalid("leaky_slope must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn has_sr(&self) -> bool {
        self.sr_input.is_some()
    }
}
