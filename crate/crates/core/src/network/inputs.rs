use crate::autograd::{Scalar, Tensor};
use crate::sensor::{bounded_flow_map, extract_sub_exposures, linearize, Exposure, TeqRawFrame, Trapezoid};
use crate::{Error, Result};

/// Network-ready tensors of one raw frame, batched along N.
#[derive(Debug, Clone)]
pub struct FrameTensors<T: Scalar> {
    /// `[N, 6, H/2, W/2]`: per exposure S, M, L a gamma-domain plane and a
    /// linear plane in M-exposure units.
    pub exposures: Tensor<T>,
    /// `[N, 4, H/2, W/2]`: trapezoid weights of S, M, L and the bounded flow.
    pub maps: Tensor<T>,
    /// `[N, 1, H, W]`: the raw mosaic.
    pub raw: Tensor<T>,
    /// `[N, 12, H/2, W/2]`: channel `4·e + site` holds exposure `e` at bayer
    /// site `site` (R, G, G, B in raster order), zero elsewhere.
    pub stack: Tensor<T>,
}

impl<T: Scalar> FrameTensors<T> {
    pub fn from_raw(raw: &TeqRawFrame, trapezoid: Trapezoid) -> Result<Self> {
        let subs = extract_sub_exposures(raw)?;
        let cfg = &raw.config;
        let (w, h) = (raw.width() / 2, raw.height() / 2);
        let plane = w * h;
        let m_unit = cfg.scale(Exposure::Middle);
        let mut exposures = Vec::with_capacity(6 * plane);
        let mut maps = Vec::with_capacity(4 * plane);
        let mut stack = vec![T::zero(); 12 * plane];
        for e in Exposure::ALL {
            let p = subs.get(e);
            let k = m_unit / cfg.scale(e);
            exposures.extend(p.data.iter().map(|&v| T::of(v as f64)));
            exposures.extend(p.data.iter().map(|&v| T::of(linearize(v as f64) * k)));
            maps.extend(p.data.iter().map(|&v| T::of(trapezoid.weight(v as f64))));
            for y in 0..h {
                for x in 0..w {
                    let site = (y % 2) * 2 + x % 2;
                    stack[(4 * e.index() + site) * plane + y * w + x] = T::of(p.get(x, y) as f64);
                }
            }
        }
        let flow = bounded_flow_map(subs.get(Exposure::Short), subs.get(Exposure::Long), cfg)?;
        maps.extend(flow.data.iter().map(|&v| T::of(v as f64)));
        Ok(FrameTensors {
            exposures: Tensor::new(vec![1, 6, h, w], exposures)?,
            maps: Tensor::new(vec![1, 4, h, w], maps)?,
            raw: Tensor::from_f32(vec![1, 1, 2 * h, 2 * w], &raw.mosaic.data)?,
            stack: Tensor::new(vec![1, 12, h, w], stack)?,
        })
    }

    /// Shape-only placeholder for an `n × 1 × height × width` raw batch.
    pub fn phantom(n: usize, height: usize, width: usize) -> Self {
        let (h, w) = (height / 2, width / 2);
        FrameTensors {
            exposures: Tensor::phantom(vec![n, 6, h, w]),
            maps: Tensor::phantom(vec![n, 4, h, w]),
            raw: Tensor::phantom(vec![n, 1, height, width]),
            stack: Tensor::phantom(vec![n, 12, h, w]),
        }
    }

    pub fn stack_batch(items: &[FrameTensors<T>]) -> Result<Self> {
        let pick = |f: fn(&FrameTensors<T>) -> &Tensor<T>| Tensor::stack(&items.iter().map(|i| f(i).clone()).collect::<Vec<_>>());
        Ok(FrameTensors {
            exposures: pick(|i| &i.exposures)?,
            maps: pick(|i| &i.maps)?,
            raw: pick(|i| &i.raw)?,
            stack: pick(|i| &i.stack)?,
        })
    }

    pub fn batch(&self) -> usize {
        self.raw.shape()[0]
    }

    /// Raw extent `(height, width)`.
    pub fn raw_size(&self) -> (usize, usize) {
        (self.raw.shape()[2], self.raw.shape()[3])
    }
}

/// Inputs for one forward pass: frames `(X_1, X_r, X_3)` and the radiance unit.
#[derive(Debug, Clone)]
pub struct NetworkInput<T: Scalar> {
    pub frames: [FrameTensors<T>; 3],
    /// `t_M · g_M`; network outputs are produced in units of `1 / (t_M · g_M)`.
    pub m_scale: f64,
}

impl<T: Scalar> NetworkInput<T> {
    pub fn from_triplet(raws: [&TeqRawFrame; 3], trapezoid: Trapezoid) -> Result<Self> {
        Self::from_batch(&[raws], trapezoid)
    }

    /// Stacks several triplets; all raws must share size and exposure timing.
    pub fn from_batch(items: &[[&TeqRawFrame; 3]], trapezoid: Trapezoid) -> Result<Self> {
        let first = items.first().ok_or_else(|| Error::invalid("empty batch"))?[1];
        let m_scale = first.config.scale(Exposure::Middle);
        let mut per_frame: [Vec<FrameTensors<T>>; 3] = Default::default();
        for triplet in items {
            for (slot, raw) in triplet.iter().enumerate() {
                if (raw.config.scale(Exposure::Middle) - m_scale).abs() > 1e-12 * m_scale {
                    return Err(Error::invalid("all frames of a batch must share exposure timing"));
                }
                if (raw.width(), raw.height()) != (first.width(), first.height()) {
                    return Err(Error::shape((first.width(), first.height()), (raw.width(), raw.height())));
                }
                per_frame[slot].push(FrameTensors::from_raw(raw, trapezoid)?);
            }
        }
        let [a, b, c] = per_frame;
        Ok(NetworkInput {
            frames: [
                FrameTensors::stack_batch(&a)?,
                FrameTensors::stack_batch(&b)?,
                FrameTensors::stack_batch(&c)?,
            ],
            m_scale,
        })
    }

    pub fn phantom(n: usize, height: usize, width: usize) -> Self {
        let f = FrameTensors::phantom(n, height, width);
        NetworkInput {
            frames: [f.clone(), f.clone(), f],
            m_scale: 1.0,
        }
    }

    pub fn batch(&self) -> usize {
        self.frames[1].batch()
    }

    pub fn raw_size(&self) -> (usize, usize) {
        self.frames[1].raw_size()
    }
}
