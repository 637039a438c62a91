//! TEQ mosaic geometry, exposure bookkeeping and the engineered per-pixel
//! maps shared by the simulator, the baseline and the network.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::image::Plane;
use crate::{Error, Result};

/// Display gamma used for every LDR <-> linear conversion.
pub const GAMMA: f64 = 2.2;

/// Stabiliser in the bounded flow denominator.
pub const FLOW_EPS: f64 = 1e-4;

#[inline]
pub fn linearize(intensity: f64) -> f64 {
    intensity.max(0.0).powf(GAMMA)
}

#[inline]
pub fn gamma_encode(linear: f64) -> f64 {
    linear.max(0.0).powf(1.0 / GAMMA)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CfaColor {
    R,
    G,
    B,
}

impl CfaColor {
    pub fn channel(self) -> usize {
        match self {
            CfaColor::R => 0,
            CfaColor::G => 1,
            CfaColor::B => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Exposure {
    #[serde(rename = "S")]
    Short,
    #[serde(rename = "M")]
    Middle,
    #[serde(rename = "L")]
    Long,
}

impl Exposure {
    pub const ALL: [Exposure; 3] = [Exposure::Short, Exposure::Middle, Exposure::Long];

    /// 0, 1, 2 for S, M, L. Also the power of the ratio in `t_e = r^i · t_S`.
    pub fn index(self) -> usize {
        match self {
            Exposure::Short => 0,
            Exposure::Middle => 1,
            Exposure::Long => 2,
        }
    }

    fn letter(self) -> char {
        match self {
            Exposure::Short => 'S',
            Exposure::Middle => 'M',
            Exposure::Long => 'L',
        }
    }
}

/// One entry of the 4×4 macro pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CfaCell {
    pub color: CfaColor,
    pub exposure: Exposure,
}

impl fmt::Display for CfaCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self.color {
            CfaColor::R => 'R',
            CfaColor::G => 'G',
            CfaColor::B => 'B',
        };
        write!(f, "{c}{}", self.exposure.letter())
    }
}

impl FromStr for CfaCell {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut chars = s.chars();
        let (Some(c), Some(e), None) = (chars.next(), chars.next(), chars.next()) else {
            return Err(Error::invalid(format!("layout cell {s:?} is not <color><exposure>")));
        };
        let color = match c {
            'R' => CfaColor::R,
            'G' => CfaColor::G,
            'B' => CfaColor::B,
            _ => return Err(Error::invalid(format!("unknown color in cell {s:?}"))),
        };
        let exposure = match e {
            'S' => Exposure::Short,
            'M' => Exposure::Middle,
            'L' => Exposure::Long,
            _ => return Err(Error::invalid(format!("unknown exposure in cell {s:?}"))),
        };
        Ok(CfaCell { color, exposure })
    }
}

/// The 4×4 tri-exposure quad-bayer macro pattern, indexed `[row][col]`.
///
/// Same-color 2×2 blocks follow RGGB; each block holds one L, one S and
/// two M pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TeqLayout {
    cells: [[CfaCell; 4]; 4],
}

impl Default for TeqLayout {
    fn default() -> Self {
        use CfaColor::*;
        use Exposure::*;
        let block = [[Long, Middle], [Middle, Short]];
        let colors = [[R, G], [G, B]];
        let mut cells = [[CfaCell {
            color: R,
            exposure: Long,
        }; 4]; 4];
        for (y, row) in cells.iter_mut().enumerate() {
            for (x, cell) in row.iter_mut().enumerate() {
                *cell = CfaCell {
                    color: colors[y / 2][x / 2],
                    exposure: block[y % 2][x % 2],
                };
            }
        }
        TeqLayout { cells }
    }
}

impl TeqLayout {
    pub fn new(cells: [[CfaCell; 4]; 4]) -> Result<Self> {
        let layout = TeqLayout { cells };
        layout.validate()?;
        Ok(layout)
    }

    fn validate(&self) -> Result<()> {
        use CfaColor::*;
        let bayer = [[R, G], [G, B]];
        for by in 0..2 {
            for bx in 0..2 {
                let mut counts = [0usize; 3];
                for dy in 0..2 {
                    for dx in 0..2 {
                        let cell = self.cells[2 * by + dy][2 * bx + dx];
                        if cell.color != bayer[by][bx] {
                            return Err(Error::invalid(format!(
                                "block ({by},{bx}) must be {:?}, found {cell}",
                                bayer[by][bx]
                            )));
                        }
                        counts[cell.exposure.index()] += 1;
                    }
                }
                if counts != [1, 2, 1] {
                    return Err(Error::invalid(format!(
                        "block ({by},{bx}) needs one S, two M and one L, found {counts:?}"
                    )));
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn cell(&self, x: usize, y: usize) -> CfaCell {
        self.cells[y % 4][x % 4]
    }

    /// Offsets inside a 2×2 block (at macro block `(by, bx)` ∈ {0,1}²)
    /// that carry exposure `e`.
    pub fn block_offsets(&self, bx: usize, by: usize, e: Exposure) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(2);
        for dy in 0..2 {
            for dx in 0..2 {
                if self.cells[2 * (by % 2) + dy][2 * (bx % 2) + dx].exposure == e {
                    out.push((dx, dy));
                }
            }
        }
        out
    }

    pub fn to_table(&self) -> [[String; 4]; 4] {
        self.cells.map(|row| row.map(|c| c.to_string()))
    }
}

impl Serialize for TeqLayout {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_table().serialize(s)
    }
}

impl<'de> Deserialize<'de> for TeqLayout {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let table = <[[String; 4]; 4]>::deserialize(d)?;
        let mut cells = TeqLayout::default().cells;
        for (y, row) in table.iter().enumerate() {
            for (x, s) in row.iter().enumerate() {
                cells[y][x] = s.parse().map_err(serde::de::Error::custom)?;
            }
        }
        TeqLayout::new(cells).map_err(serde::de::Error::custom)
    }
}

/// Exposure times, gains and read-noise level for the three exposures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExposureConfig {
    /// Short exposure time in seconds.
    pub t_s: f64,
    /// Ratio between adjacent exposures.
    pub r: f64,
    /// Gains for S, M, L.
    pub gains: [f64; 3],
    /// Gaussian noise std-dev of the short exposure, normalized intensity.
    pub sigma_s: f64,
}

impl Default for ExposureConfig {
    fn default() -> Self {
        ExposureConfig {
            t_s: 1.0 / 256.0,
            r: 4.0,
            gains: [1.0; 3],
            sigma_s: 0.0,
        }
    }
}

impl ExposureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_s > 0.0 && self.t_s.is_finite()) {
            return Err(Error::invalid(format!("t_S must be > 0, got {}", self.t_s)));
        }
        if !(self.r > 1.0 && self.r.is_finite()) {
            return Err(Error::invalid(format!("ratio must be > 1, got {}", self.r)));
        }
        if self.gains.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
            return Err(Error::invalid(format!("gains must be > 0, got {:?}", self.gains)));
        }
        if !(self.sigma_s >= 0.0 && self.sigma_s.is_finite()) {
            return Err(Error::invalid(format!("sigma_S must be >= 0, got {}", self.sigma_s)));
        }
        Ok(())
    }

    pub fn time(&self, e: Exposure) -> f64 {
        self.t_s * self.r.powi(e.index() as i32)
    }

    pub fn gain(&self, e: Exposure) -> f64 {
        self.gains[e.index()]
    }

    /// `t_e · g_e`, the factor mapping radiance to pre-gamma intensity.
    pub fn scale(&self, e: Exposure) -> f64 {
        self.time(e) * self.gain(e)
    }

    /// Noise std-dev of exposure `e`: σ_S · r^i.
    pub fn sigma(&self, e: Exposure) -> f64 {
        self.sigma_s * self.r.powi(e.index() as i32)
    }

    /// Exposure-normalized linear radiance of a gamma-domain intensity.
    #[inline]
    pub fn radiance(&self, e: Exposure, intensity: f64) -> f64 {
        linearize(intensity) / self.scale(e)
    }
}

/// One raw TEQ exposure with layout and capture metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct TeqRawFrame {
    pub mosaic: Plane,
    pub layout: TeqLayout,
    pub config: ExposureConfig,
    pub frame_index: usize,
    pub seed: u64,
}

impl TeqRawFrame {
    pub fn new(mosaic: Plane, layout: TeqLayout, config: ExposureConfig) -> Result<Self> {
        let raw = TeqRawFrame {
            mosaic,
            layout,
            config,
            frame_index: 0,
            seed: 0,
        };
        raw.validate()?;
        Ok(raw)
    }

    pub fn validate(&self) -> Result<()> {
        check_multiple_of_4(self.mosaic.width, self.mosaic.height)?;
        if let Some(v) = self.mosaic.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("raw value {v} outside [0,1]")));
        }
        self.config.validate()
    }

    pub fn width(&self) -> usize {
        self.mosaic.width
    }

    pub fn height(&self) -> usize {
        self.mosaic.height
    }

    /// Crop keeping layout phase; origin and size must be multiples of 4.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        if x0 % 4 != 0 || y0 % 4 != 0 {
            return Err(Error::invalid(format!(
                "raw crop origin ({x0},{y0}) must be a multiple of 4"
            )));
        }
        check_multiple_of_4(width, height)?;
        Ok(TeqRawFrame {
            mosaic: self.mosaic.crop(x0, y0, width, height)?,
            ..self.clone()
        })
    }
}

pub fn check_multiple_of_4(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 || width % 4 != 0 || height % 4 != 0 {
        return Err(Error::invalid(format!(
            "frame {width}x{height} is not a positive multiple of 4"
        )));
    }
    Ok(())
}

/// Half-resolution RGGB bayer mosaics, one per exposure, indexed by
/// [`Exposure::index`].
#[derive(Debug, Clone, PartialEq)]
pub struct SubExposures {
    pub planes: [Plane; 3],
}

impl SubExposures {
    pub fn get(&self, e: Exposure) -> &Plane {
        &self.planes[e.index()]
    }
}

/// Gathers the three sub-exposure bayer mosaics of a raw frame.
///
/// Each output pixel corresponds to one 2×2 same-color block. The S and L
/// outputs copy their block's unique pixel; the M output averages the two M
/// pixels.
pub fn extract_sub_exposures(raw: &TeqRawFrame) -> Result<SubExposures> {
    extract_with_layout(&raw.mosaic, &raw.layout)
}

pub fn extract_with_layout(mosaic: &Plane, layout: &TeqLayout) -> Result<SubExposures> {
    check_multiple_of_4(mosaic.width, mosaic.height)?;
    let (w, h) = (mosaic.width / 2, mosaic.height / 2);
    let offsets: Vec<Vec<Vec<(usize, usize)>>> = (0..4)
        .map(|q| {
            Exposure::ALL
                .iter()
                .map(|&e| layout.block_offsets(q % 2, q / 2, e))
                .collect()
        })
        .collect();
    let planes = Exposure::ALL.map(|e| {
        Plane::from_fn(w, h, |bx, by| {
            let offs = &offsets[(by % 2) * 2 + bx % 2][e.index()];
            let sum: f32 = offs
                .iter()
                .map(|&(dx, dy)| mosaic.get(2 * bx + dx, 2 * by + dy))
                .sum();
            sum / offs.len() as f32
        })
    });
    Ok(SubExposures { planes })
}

/// Breakpoints of the trapezoid intensity weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trapezoid {
    pub low: f64,
    pub high: f64,
}

impl Default for Trapezoid {
    fn default() -> Self {
        Trapezoid {
            low: 0.1,
            high: 0.9,
        }
    }
}

impl Trapezoid {
    pub fn weight(&self, p: f64) -> f64 {
        trapezoid_weight(p, self.low, self.high)
    }
}

/// Piecewise-linear confidence: ramps up on `[0, t_low]`, 1 on the plateau,
/// ramps down on `[t_high, 1]`. The intensity is clamped to `[0, 1]`.
pub fn trapezoid_weight(p: f64, t_low: f64, t_high: f64) -> f64 {
    let p = p.clamp(0.0, 1.0);
    let rise = if t_low > 0.0 { p / t_low } else { 1.0 };
    let fall = if t_high < 1.0 {
        (1.0 - p) / (1.0 - t_high)
    } else {
        1.0
    };
    rise.min(fall).clamp(0.0, 1.0)
}

/// Per-pixel mismatch between the exposure-normalized S and L radiance:
/// `clamp(|L̂ − Ŝ| / (L̂ + Ŝ + ε), 0, 1)`.
pub fn bounded_flow_map(
    sub_short: &Plane,
    sub_long: &Plane,
    config: &ExposureConfig,
) -> Result<Plane> {
    if !sub_short.same_shape(sub_long) {
        return Err(Error::shape(
            (sub_short.width, sub_short.height),
            (sub_long.width, sub_long.height),
        ));
    }
    let data = sub_short
        .data
        .iter()
        .zip(&sub_long.data)
        .map(|(&s, &l)| {
            let s = config.radiance(Exposure::Short, s as f64);
            let l = config.radiance(Exposure::Long, l as f64);
            bounded_flow(s, l) as f32
        })
        .collect();
    Plane::from_vec(sub_short.width, sub_short.height, data)
}

/// Scalar kernel of [`bounded_flow_map`] on normalized radiances.
#[inline]
pub fn bounded_flow(short: f64, long: f64) -> f64 {
    ((long - short).abs() / (long + short + FLOW_EPS)).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn raw_from(mosaic: Plane) -> TeqRawFrame {
        TeqRawFrame::new(mosaic, TeqLayout::default(), ExposureConfig::default()).unwrap()
    }

    #[test]
    fn default_layout_matches_table() {
        let t = TeqLayout::default().to_table();
        assert_eq!(t[0], ["RL", "RM", "GL", "GM"]);
        assert_eq!(t[1], ["RM", "RS", "GM", "GS"]);
        assert_eq!(t[2], ["GL", "GM", "BL", "BM"]);
        assert_eq!(t[3], ["GM", "GS", "BM", "BS"]);
    }

    #[test]
    fn layout_json_roundtrip_and_validation() {
        let l = TeqLayout::default();
        let s = serde_json::to_string(&l).unwrap();
        assert_eq!(serde_json::from_str::<TeqLayout>(&s).unwrap(), l);
        // two L pixels in the R block
        let bad = s.replacen("RM", "RL", 1);
        assert!(serde_json::from_str::<TeqLayout>(&bad).is_err());
        let bad = s.replacen("RS", "GS", 1);
        assert!(serde_json::from_str::<TeqLayout>(&bad).is_err());
    }

    #[test]
    fn constant_raw_gives_constant_subs() {
        let raw = raw_from(Plane::filled(4, 4, 0.5));
        let subs = extract_sub_exposures(&raw).unwrap();
        for p in &subs.planes {
            assert_eq!((p.width, p.height), (2, 2));
            assert!(p.data.iter().all(|&v| v == 0.5));
        }
    }

    #[test]
    fn middle_pixels_are_averaged() {
        let mut m = Plane::filled(4, 4, 0.5);
        m.set(1, 0, 0.2);
        m.set(0, 1, 0.4);
        let subs = extract_sub_exposures(&raw_from(m)).unwrap();
        assert!((subs.get(Exposure::Middle).get(0, 0) - 0.3).abs() < 1e-7);
        assert_eq!(subs.get(Exposure::Long).get(0, 0), 0.5);
    }

    #[test]
    fn rejects_bad_dimensions() {
        let r = TeqRawFrame::new(Plane::new(6, 4), TeqLayout::default(), ExposureConfig::default());
        assert!(r.is_err());
        assert!(extract_with_layout(&Plane::new(4, 10), &TeqLayout::default()).is_err());
    }

    #[test]
    fn random_raw_matches_index_walk() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let raw = raw_from(Plane::from_fn(8, 8, |_, _| rng.gen::<f32>()));
        let subs = extract_sub_exposures(&raw).unwrap();
        let table = raw.layout.to_table();
        // walk every raw pixel, bucket it into its (block, exposure) slot
        let mut sums = vec![[0.0f32; 3]; 16];
        let mut counts = vec![[0usize; 3]; 16];
        for y in 0..8 {
            for x in 0..8 {
                let tag = &table[y % 4][x % 4];
                let e = match tag.as_bytes()[1] {
                    b'S' => 0,
                    b'M' => 1,
                    _ => 2,
                };
                let b = (y / 2) * 4 + x / 2;
                sums[b][e] += raw.mosaic.get(x, y);
                counts[b][e] += 1;
            }
        }
        for b in 0..16 {
            for e in 0..3 {
                let expect = sums[b][e] / counts[b][e] as f32;
                assert!((subs.planes[e].data[b] - expect).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn trapezoid_examples() {
        assert_eq!(trapezoid_weight(0.5, 0.1, 0.9), 1.0);
        assert_eq!(trapezoid_weight(0.0, 0.1, 0.9), 0.0);
        assert_eq!(trapezoid_weight(1.0, 0.1, 0.9), 0.0);
        assert!((trapezoid_weight(0.05, 0.1, 0.9) - 0.5).abs() < 1e-12);
        assert_eq!(trapezoid_weight(-3.0, 0.1, 0.9), 0.0);
        assert_eq!(trapezoid_weight(0.0, 0.0, 0.9), 1.0);
    }

    #[test]
    fn bounded_flow_examples() {
        assert!((bounded_flow(0.1, 0.3) - 0.2 / (0.4 + 1e-4)).abs() < 1e-12);
        assert!((bounded_flow(0.1, 0.3) - 0.4999).abs() < 1e-4);
        assert!(bounded_flow(1.0, 0.0) > 0.9998);
        let cfg = ExposureConfig::default();
        // same radiance seen through both exposures
        let h = 2.0f64;
        let s = gamma_encode(h * cfg.scale(Exposure::Short));
        let l = gamma_encode(h * cfg.scale(Exposure::Long));
        let ps = Plane::filled(2, 2, s as f32);
        let pl = Plane::filled(2, 2, l as f32);
        let m = bounded_flow_map(&ps, &pl, &cfg).unwrap();
        assert!(m.data.iter().all(|&v| v < 1e-6), "{:?}", m.data);
        assert!(bounded_flow_map(&ps, &Plane::new(2, 4), &cfg).is_err());
    }

    #[test]
    fn exposure_bookkeeping() {
        let cfg = ExposureConfig {
            sigma_s: 4e-3,
            ..Default::default()
        };
        let ratio_ms = cfg.time(Exposure::Middle) / cfg.time(Exposure::Short);
        let ratio_lm = cfg.time(Exposure::Long) / cfg.time(Exposure::Middle);
        assert!((ratio_ms - 4.0).abs() < 1e-12 && (ratio_lm - 4.0).abs() < 1e-12);
        assert!((cfg.sigma(Exposure::Long) - 6.4e-2).abs() < 1e-12);
        assert!(ExposureConfig { r: 1.0, ..cfg }.validate().is_err());
        assert!(ExposureConfig { t_s: 0.0, ..cfg }.validate().is_err());
    }

    proptest! {
        #[test]
        fn extraction_is_linear(seed in any::<u64>(), a in -2.0f32..2.0, b in -2.0f32..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Plane::from_fn(8, 12, |_, _| rng.gen());
            let y = Plane::from_fn(8, 12, |_, _| rng.gen());
            let combo = Plane::from_fn(8, 12, |i, j| a * x.get(i, j) + b * y.get(i, j));
            let l = TeqLayout::default();
            let (ex, ey, ec) = (
                extract_with_layout(&x, &l).unwrap(),
                extract_with_layout(&y, &l).unwrap(),
                extract_with_layout(&combo, &l).unwrap(),
            );
            for e in 0..3 {
                for i in 0..ec.planes[e].data.len() {
                    let want = a * ex.planes[e].data[i] + b * ey.planes[e].data[i];
                    prop_assert!((ec.planes[e].data[i] - want).abs() < 1e-5);
                }
            }
        }

        #[test]
        fn trapezoid_shape(lo in 0.01f64..0.45, hi in 0.55f64..0.99, p in 0.0f64..1.0, q in 0.0f64..1.0) {
            let (a, b) = if p <= q { (p, q) } else { (q, p) };
            let (wa, wb) = (trapezoid_weight(a, lo, hi), trapezoid_weight(b, lo, hi));
            prop_assert!((0.0..=1.0).contains(&wa));
            if b <= lo { prop_assert!(wa <= wb + 1e-12); }
            if a >= hi { prop_assert!(wa + 1e-12 >= wb); }
            if a >= lo && b <= hi { prop_assert_eq!(wa, 1.0); prop_assert_eq!(wb, 1.0); }
            // Lipschitz continuity with the steeper ramp slope
            let lip = (1.0 / lo).max(1.0 / (1.0 - hi));
            prop_assert!((wa - wb).abs() <= lip * (b - a) + 1e-12);
        }

        #[test]
        fn flow_symmetric_and_scale_invariant(s in 0.0f64..100.0, l in 0.0f64..100.0, k in 0.1f64..10.0) {
            prop_assert_eq!(bounded_flow(s, l), bounded_flow(l, s));
            let a = s + l;
            if a > 0.0 {
                let diff = (bounded_flow(s, l) - bounded_flow(k * s, k * l)).abs();
                prop_assert!(diff <= FLOW_EPS * (1.0 + k) / (k * a) + 1e-12);
            }
        }
    }
}
