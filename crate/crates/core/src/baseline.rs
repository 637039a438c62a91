//! Engineered naive reconstruction: bilinear demosaic of every sub-exposure
//! followed by a trapezoid-weighted radiance merge. Single frame, no
//! denoising, output at half the raw resolution.

use crate::image::{Plane, RgbImage};
use crate::sensor::{
    extract_sub_exposures, linearize, Exposure, ExposureConfig, TeqRawFrame, Trapezoid,
};
use crate::{exec, Error, Result};

/// Color channel of an RGGB site.
#[inline]
pub fn rggb_channel(x: usize, y: usize) -> usize {
    match (y % 2, x % 2) {
        (0, 0) => 0,
        (1, 1) => 2,
        _ => 1,
    }
}

/// Mirror index without edge repetition (…, 2, 1, 0, 1, 2, …). Keeps parity,
/// so CFA phase is preserved at the borders.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

/// Bilinear CFA interpolation of an RGGB mosaic.
pub fn demosaic_bilinear(bayer: &Plane) -> Result<RgbImage> {
    let (w, h) = (bayer.width, bayer.height);
    if w == 0 || h == 0 || w % 2 != 0 || h % 2 != 0 {
        return Err(Error::invalid(format!(
            "bayer mosaic must have even dimensions, got {w}x{h}"
        )));
    }
    let at = |x: isize, y: isize| bayer.get(reflect(x, w), reflect(y, h));
    let mut out = RgbImage::new(w, h);
    exec::for_each_chunk_mut(&mut out.data, w * 3, |y, row| {
        let yi = y as isize;
        for x in 0..w {
            let xi = x as isize;
            let own = at(xi, yi);
            let cross = 0.25 * (at(xi - 1, yi) + at(xi + 1, yi) + at(xi, yi - 1) + at(xi, yi + 1));
            let diag = 0.25
                * (at(xi - 1, yi - 1) + at(xi + 1, yi - 1) + at(xi - 1, yi + 1) + at(xi + 1, yi + 1));
            let horiz = 0.5 * (at(xi - 1, yi) + at(xi + 1, yi));
            let vert = 0.5 * (at(xi, yi - 1) + at(xi, yi + 1));
            let px = match (y % 2, x % 2) {
                (0, 0) => [own, cross, diag],
                (1, 1) => [diag, cross, own],
                // green on a red row: red left/right, blue above/below
                (0, 1) => [horiz, own, vert],
                _ => [vert, own, horiz],
            };
            row[x * 3..x * 3 + 3].copy_from_slice(&px);
        }
    });
    Ok(out)
}

/// Index of the exposure used when every weight at a pixel is zero: the
/// longest exposure that is not saturated, else the short one.
fn fallback_exposure(intensities: [f64; 3]) -> usize {
    (0..3)
        .rev()
        .find(|&i| intensities[i] < 1.0)
        .unwrap_or(Exposure::Short.index())
}

/// Trapezoid-weighted merge of three demosaiced exposures into radiance.
///
/// Weights are evaluated on the gamma-domain intensities, per channel.
pub fn merge_hdr_trapezoid(
    rgb: [&RgbImage; 3],
    config: &ExposureConfig,
    trapezoid: Trapezoid,
) -> Result<RgbImage> {
    let [s, m, l] = rgb;
    if !s.same_shape(m) || !s.same_shape(l) {
        return Err(Error::shape((s.width, s.height), ((m.width, m.height), (l.width, l.height))));
    }
    let scales = Exposure::ALL.map(|e| config.scale(e));
    let mut out = RgbImage::new(s.width, s.height);
    for (i, o) in out.data.iter_mut().enumerate() {
        let iv = [s.data[i] as f64, m.data[i] as f64, l.data[i] as f64];
        let mut num = 0.0;
        let mut den = 0.0;
        for k in 0..3 {
            let w = trapezoid.weight(iv[k]);
            num += w * linearize(iv[k]) / scales[k];
            den += w;
        }
        *o = if den > 0.0 {
            (num / den) as f32
        } else {
            let k = fallback_exposure(iv);
            (linearize(iv[k]) / scales[k]) as f32
        };
    }
    Ok(out)
}

/// Full naive pipeline for one raw frame; returns a half-resolution HDR image.
pub fn naive_reconstruct(raw: &TeqRawFrame) -> Result<RgbImage> {
    naive_reconstruct_with(raw, Trapezoid::default())
}

pub fn naive_reconstruct_with(raw: &TeqRawFrame, trapezoid: Trapezoid) -> Result<RgbImage> {
    let subs = extract_sub_exposures(raw)?;
    let rgb = [
        demosaic_bilinear(&subs.planes[0])?,
        demosaic_bilinear(&subs.planes[1])?,
        demosaic_bilinear(&subs.planes[2])?,
    ];
    merge_hdr_trapezoid([&rgb[0], &rgb[1], &rgb[2]], &raw.config, trapezoid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensor::gamma_encode;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reflect_keeps_parity() {
        assert_eq!(reflect(-1, 6), 1);
        assert_eq!(reflect(6, 6), 4);
        assert_eq!(reflect(-2, 6), 2);
        assert_eq!(reflect(3, 6), 3);
    }

    #[test]
    fn constant_mosaic_is_constant() {
        let out = demosaic_bilinear(&Plane::filled(6, 4, 0.3)).unwrap();
        assert!(out.data.iter().all(|&v| (v - 0.3).abs() < 1e-7));
        assert!(demosaic_bilinear(&Plane::new(5, 4)).is_err());
    }

    #[test]
    fn linear_ramp_is_reproduced() {
        let ramp = Plane::from_fn(10, 8, |x, _| 0.1 * x as f32);
        let out = demosaic_bilinear(&ramp).unwrap();
        for y in 1..7 {
            for x in 1..9 {
                for c in 0..3 {
                    assert!((out.get(x, y, c) - 0.1 * x as f32).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn matches_neighbour_average_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Plane::from_fn(8, 8, |_, _| rng.gen());
        let out = demosaic_bilinear(&m).unwrap();
        for y in 0..8isize {
            for x in 0..8isize {
                for c in 0..3 {
                    // mean of same-color samples in the reflected 3x3 window
                    let (mut sum, mut n) = (0.0f32, 0);
                    for dy in -1..=1 {
                        for dx in -1..=1 {
                            let (sx, sy) = (reflect(x + dx, 8), reflect(y + dy, 8));
                            if rggb_channel(sx, sy) == c {
                                sum += m.get(sx, sy);
                                n += 1;
                            }
                        }
                    }
                    let want = if rggb_channel(x as usize, y as usize) == c {
                        m.get(x as usize, y as usize)
                    } else {
                        sum / n as f32
                    };
                    assert!((out.get(x as usize, y as usize, c) - want).abs() < 1e-6);
                }
            }
        }
    }

    fn single(v: f32) -> RgbImage {
        RgbImage::filled(1, 1, v)
    }

    #[test]
    fn only_middle_well_exposed() {
        let cfg = ExposureConfig::default();
        let out = merge_hdr_trapezoid([&single(0.0), &single(0.5), &single(1.0)], &cfg, Trapezoid::default()).unwrap();
        let want = linearize(0.5) / cfg.scale(Exposure::Middle);
        assert!((out.data[0] as f64 / want - 1.0).abs() < 1e-6);
    }

    #[test]
    fn all_clipped_falls_back_to_short() {
        let cfg = ExposureConfig::default();
        let one = single(1.0);
        let out = merge_hdr_trapezoid([&one, &one, &one], &cfg, Trapezoid::default()).unwrap();
        let want = 1.0 / cfg.scale(Exposure::Short);
        assert!((out.data[0] as f64 / want - 1.0).abs() < 1e-6);
        let zero = single(0.0);
        let out = merge_hdr_trapezoid([&zero, &zero, &zero], &cfg, Trapezoid::default()).unwrap();
        assert_eq!(out.data[0], 0.0);
    }

    #[test]
    fn noiseless_pixel_recovers_radiance() {
        let cfg = ExposureConfig::default();
        let h: f64 = 3.7;
        let enc = |e: Exposure| {
            let v = gamma_encode(h * cfg.scale(e)).min(1.0);
            single(crate::simulator::quantize(v, 10) as f32)
        };
        let imgs = Exposure::ALL.map(enc);
        let out = merge_hdr_trapezoid([&imgs[0], &imgs[1], &imgs[2]], &cfg, Trapezoid::default()).unwrap();
        assert!((out.data[0] as f64 / h - 1.0).abs() < 0.01, "{}", out.data[0]);
    }

    proptest! {
        #[test]
        fn merge_is_convex_combination(a in 0.0f32..1.0, b in 0.0f32..1.0, c in 0.0f32..1.0) {
            let cfg = ExposureConfig::default();
            let out = merge_hdr_trapezoid([&single(a), &single(b), &single(c)], &cfg, Trapezoid::default()).unwrap();
            let rads: Vec<f64> = [a, b, c].iter().zip(Exposure::ALL)
                .map(|(&v, e)| cfg.radiance(e, v as f64)).collect();
            let ws: Vec<f64> = [a, b, c].iter().map(|&v| Trapezoid::default().weight(v as f64)).collect();
            if ws.iter().sum::<f64>() > 0.0 {
                let lo = rads.iter().zip(&ws).filter(|(_, &w)| w > 0.0).map(|(r, _)| *r).fold(f64::MAX, f64::min);
                let hi = rads.iter().zip(&ws).filter(|(_, &w)| w > 0.0).map(|(r, _)| *r).fold(0.0, f64::max);
                let o = out.data[0] as f64;
                prop_assert!(o >= lo * (1.0 - 1e-5) - 1e-9 && o <= hi * (1.0 + 1e-5) + 1e-9);
            }
        }

        #[test]
        fn weight_rescaling_does_not_change_merge(a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0, k in 0.1f64..10.0) {
            // same normalized merge written with scaled weights
            let cfg = ExposureConfig::default();
            // the merge sees f32 pixels; so does the oracle
            let iv = [a, b, c].map(|v| v as f32 as f64);
            let t = Trapezoid::default();
            let merge = |k: f64| {
                let (mut num, mut den) = (0.0, 0.0);
                for (i, e) in Exposure::ALL.iter().enumerate() {
                    let w = k * t.weight(iv[i]);
                    num += w * cfg.radiance(*e, iv[i]);
                    den += w;
                }
                num / den
            };
            let out = merge_hdr_trapezoid(
                [&single(a as f32), &single(b as f32), &single(c as f32)], &cfg, t).unwrap().data[0] as f64;
            if iv.iter().any(|&v| t.weight(v) > 0.0) {
                let base = merge(1.0);
                prop_assert!((merge(k) - base).abs() <= 1e-9 * base.abs().max(1.0));
                prop_assert!((out - base).abs() <= 1e-5 * base.abs().max(1e-3));
            }
        }
    }
}
