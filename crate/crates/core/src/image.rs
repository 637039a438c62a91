//! Plain row-major image buffers.

use crate::{Error, Result};

/// Single-channel image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Plane {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape(width * height, data.len()));
        }
        Ok(Plane {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Plane {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn same_shape(&self, other: &Plane) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Plane> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::invalid(format!(
                "crop {width}x{height}@({x0},{y0}) outside {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(width * height);
        for y in y0..y0 + height {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + width]);
        }
        Ok(Plane {
            width,
            height,
            data,
        })
    }
}

/// Interleaved RGB image, row-major, `data[(y * width + x) * 3 + c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        RgbImage {
            width,
            height,
            data: vec![value; width * height * 3],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::shape(width * height * 3, data.len()));
        }
        Ok(RgbImage {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [f32; 3],
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        RgbImage {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * 3 + c] = v;
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn same_shape(&self, other: &RgbImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_value(&self) -> f32 {
        self.data.iter().copied().fold(0.0, f32::max)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> RgbImage {
        RgbImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, s: f32) -> RgbImage {
        self.map(|v| v * s)
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<RgbImage> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::invalid(format!(
                "crop {width}x{height}@({x0},{y0}) outside {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(width * height * 3);
        for y in y0..y0 + height {
            let row = (y * self.width + x0) * 3;
            data.extend_from_slice(&self.data[row..row + width * 3]);
        }
        Ok(RgbImage {
            width,
            height,
            data,
        })
    }

    /// 2×2 box average. Width and height must be even.
    pub fn box_downsample2(&self) -> Result<RgbImage> {
        if self.width % 2 != 0 || self.height % 2 != 0 {
            return Err(Error::invalid(format!(
                "box downsample needs even dimensions, got {}x{}",
                self.width, self.height
            )));
        }
        let (w, h) = (self.width / 2, self.height / 2);
        Ok(RgbImage::from_fn(w, h, |x, y| {
            let mut p = [0.0f32; 3];
            for c in 0..3 {
                p[c] = 0.25
                    * (self.get(2 * x, 2 * y, c)
                        + self.get(2 * x + 1, 2 * y, c)
                        + self.get(2 * x, 2 * y + 1, c)
                        + self.get(2 * x + 1, 2 * y + 1, c));
            }
            p
        }))
    }

    /// Bilinear 2× upsampling with half-pixel centres and edge clamping.
    pub fn bilinear_upsample2(&self) -> RgbImage {
        let (w, h) = (self.width, self.height);
        RgbImage::from_fn(w * 2, h * 2, |x, y| {
            let (x0, x1, fx) = upsample_taps(x, w);
            let (y0, y1, fy) = upsample_taps(y, h);
            let mut p = [0.0f32; 3];
            for (c, out) in p.iter_mut().enumerate() {
                let top = self.get(x0, y0, c) * (1.0 - fx) + self.get(x1, y0, c) * fx;
                let bot = self.get(x0, y1, c) * (1.0 - fx) + self.get(x1, y1, c) * fx;
                *out = top * (1.0 - fy) + bot * fy;
            }
            p
        })
    }

    /// Rec. 709 luminance per pixel.
    pub fn luminance(&self) -> Vec<f32> {
        self.data
            .chunks_exact(3)
            .map(|p| 0.2126 * p[0] + 0.7152 * p[1] + 0.0722 * p[2])
            .collect()
    }
}

/// Source taps and weight for output index `o` of a 2× bilinear upsample of
/// a signal of length `n` (align-corners = false, clamped at the edges).
pub fn upsample_taps(o: usize, n: usize) -> (usize, usize, f32) {
    let src = (o as f32 + 0.5) / 2.0 - 0.5;
    if src <= 0.0 {
        return (0, 0, 0.0);
    }
    let i0 = src.floor() as usize;
    if i0 + 1 >= n {
        return (n - 1, n - 1, 0.0);
    }
    (i0, i0 + 1, src - i0 as f32)
}
