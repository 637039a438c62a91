use crate::image::RgbImage;
use crate::sensor::TeqRawFrame;
use crate::{Error, Result};

/// Top-left anchors `0, stride, 2·stride, …` plus one flush with the far edge.
pub fn patch_anchors(extent: usize, patch: usize, stride: usize) -> Result<Vec<usize>> {
    if patch == 0 || stride == 0 {
        return Err(Error::invalid("patch and stride must be positive"));
    }
    if patch > extent {
        return Err(Error::invalid(format!("patch {patch} larger than frame extent {extent}")));
    }
    let last = extent - patch;
    let mut anchors: Vec<usize> = (0..=last).step_by(stride).collect();
    if *anchors.last().unwrap() != last {
        anchors.push(last);
    }
    Ok(anchors)
}

/// One aligned training example: raw triplet and full-resolution ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub raws: [TeqRawFrame; 3],
    pub ground_truth: RgbImage,
    pub x: usize,
    pub y: usize,
}

/// Cuts a raw triplet and its ground truth into overlapping patches.
///
/// `patch` and `stride` must be multiples of 4 so that every crop starts on
/// a mosaic period.
pub fn extract_patches(
    raws: &[TeqRawFrame; 3],
    ground_truth: &RgbImage,
    patch: usize,
    stride: usize,
) -> Result<Vec<Patch>> {
    if patch % 4 != 0 || stride % 4 != 0 {
        return Err(Error::invalid(format!(
            "patch ({patch}) and stride ({stride}) must be multiples of 4"
        )));
    }
    let (w, h) = (raws[1].width(), raws[1].height());
    for r in raws {
        if (r.width(), r.height()) != (w, h) {
            return Err(Error::shape((w, h), (r.width(), r.height())));
        }
    }
    if (ground_truth.width, ground_truth.height) != (w, h) {
        return Err(Error::shape((w, h), (ground_truth.width, ground_truth.height)));
    }
    let xs = patch_anchors(w, patch, stride)?;
    let ys = patch_anchors(h, patch, stride)?;
    let mut out = Vec::with_capacity(xs.len() * ys.len());
    for &y in &ys {
        for &x in &xs {
            let crop = |r: &TeqRawFrame| r.crop(x, y, patch, patch);
            out.push(Patch {
                raws: [crop(&raws[0])?, crop(&raws[1])?, crop(&raws[2])?],
                ground_truth: ground_truth.crop(x, y, patch, patch)?,
                x,
                y,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Plane;
    use crate::sensor::{ExposureConfig, TeqLayout};
    use proptest::prelude::*;

    /// Enumerates anchors by scanning every offset.
    fn oracle(extent: usize, patch: usize, stride: usize) -> Vec<usize> {
        let mut v: Vec<usize> = (0..=extent - patch).filter(|a| a % stride == 0).collect();
        if !v.contains(&(extent - patch)) {
            v.push(extent - patch);
        }
        v
    }

    #[test]
    fn anchor_examples() {
        assert_eq!(patch_anchors(256, 256, 120).unwrap(), vec![0]);
        assert_eq!(patch_anchors(496, 256, 120).unwrap(), vec![0, 120, 240]);
        assert_eq!(patch_anchors(256, 256, 1000).unwrap(), vec![0]);
        assert_eq!(patch_anchors(300, 256, 120).unwrap(), vec![0, 44]);
        assert!(patch_anchors(100, 256, 120).is_err());
    }

    fn raw(w: usize, h: usize) -> TeqRawFrame {
        let m = Plane::from_fn(w, h, |x, y| ((x + 3 * y) % 11) as f32 / 11.0);
        TeqRawFrame::new(m, TeqLayout::default(), ExposureConfig::default()).unwrap()
    }

    #[test]
    fn patches_are_aligned_crops() {
        let r = raw(496, 256);
        let gt = RgbImage::from_fn(496, 256, |x, y| [x as f32, y as f32, 0.0]);
        let p = extract_patches(&[r.clone(), r.clone(), r.clone()], &gt, 256, 120).unwrap();
        assert_eq!(p.len(), 3);
        for q in &p {
            assert_eq!(q.x % 4, 0);
            assert_eq!(q.ground_truth.get(0, 0, 0), q.x as f32);
            assert_eq!(q.raws[1].mosaic.get(5, 7), r.mosaic.get(q.x + 5, q.y + 7));
        }
    }

    #[test]
    fn rejects_misaligned_and_oversized() {
        let r = raw(64, 64);
        let gt = RgbImage::new(64, 64);
        let t = [r.clone(), r.clone(), r];
        assert!(extract_patches(&t, &gt, 30, 8).is_err());
        assert!(extract_patches(&t, &gt, 32, 6).is_err());
        assert!(extract_patches(&t, &gt, 128, 8).is_err());
    }

    proptest! {
        #[test]
        fn anchors_match_oracle_and_cover(
            (extent, patch) in (1usize..600).prop_flat_map(|e| (Just(e), 1..=e.min(300))),
            stride in 1usize..200,
        ) {
            let a = patch_anchors(extent, patch, stride).unwrap();
            prop_assert_eq!(&a, &oracle(extent, patch, stride));
            // gap-free when patches overlap or abut; both edges always covered
            let mut covered = vec![false; extent];
            for &s in &a {
                for c in &mut covered[s..s + patch] {
                    *c = true;
                }
            }
            if stride <= patch {
                prop_assert!(covered.iter().all(|&c| c));
            } else {
                prop_assert!(covered[0] && covered[extent - 1]);
            }
        }
    }
}
