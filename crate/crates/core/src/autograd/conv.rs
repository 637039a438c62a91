//! 2-D convolution kernels: im2col over blocks of output rows plus GEMM.
//!
//! Work is split into `(sample, row block)` items that run through
//! [`exec::map_range`]; partial weight gradients and input scatters are
//! reduced in item order, so results do not depend on the execution mode.

use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::exec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
}

impl ConvSpec {
    /// Stride 1, "same" padding for an odd kernel with the given dilation.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        ConvSpec {
            stride: 1,
            pad: dilation * (kernel - 1) / 2,
            dilation,
        }
    }

    pub fn strided(kernel: usize, stride: usize) -> Self {
        ConvSpec {
            stride,
            pad: (kernel - 1) / 2,
            dilation: 1,
        }
    }

    pub fn out_size(&self, n: usize, k: usize) -> usize {
        let span = self.dilation * (k - 1) + 1;
        assert!(
            n + 2 * self.pad >= span,
            "input extent {n} too small for kernel {k} (dilation {}, pad {})",
            self.dilation,
            self.pad
        );
        (n + 2 * self.pad - span) / self.stride + 1
    }
}

/// Column budget per work item, in elements.
const COL_BUDGET: usize = 1 << 19;

struct Geometry {
    n: usize,
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    spec: ConvSpec,
    rows_per_block: usize,
}

impl Geometry {
    fn new(x: &[usize], weight: &[usize], spec: ConvSpec) -> Self {
        let [n, ci, h, w] = x[..] else {
            panic!("conv input must be 4-D, got {x:?}")
        };
        let [co, wci, kh, kw] = weight[..] else {
            panic!("conv weight must be 4-D, got {weight:?}")
        };
        assert_eq!(ci, wci, "conv input has {ci} channels, weight expects {wci}");
        let ho = spec.out_size(h, kh);
        let wo = spec.out_size(w, kw);
        let k = ci * kh * kw;
        let rows_per_block = (COL_BUDGET / (k * wo).max(1)).clamp(1, ho);
        Geometry {
            n,
            ci,
            h,
            w,
            co,
            kh,
            kw,
            ho,
            wo,
            spec,
            rows_per_block,
        }
    }

    fn k(&self) -> usize {
        self.ci * self.kh * self.kw
    }

    fn blocks(&self) -> usize {
        self.ho.div_ceil(self.rows_per_block)
    }

    fn items(&self) -> usize {
        self.n * self.blocks()
    }

    /// `(sample, first output row, row count)` of a work item.
    fn item(&self, i: usize) -> (usize, usize, usize) {
        let b = self.blocks();
        let (s, blk) = (i / b, i % b);
        let r0 = blk * self.rows_per_block;
        (s, r0, self.rows_per_block.min(self.ho - r0))
    }

    /// Valid output-column range `[lo, hi)` for kernel column offset `off`.
    fn col_range(&self, off: isize) -> (usize, usize) {
        let s = self.spec.stride as isize;
        let (w, wo) = (self.w as isize, self.wo as isize);
        // need 0 <= ox*s + off < w
        let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
        let hi = if w - off <= 0 { 0 } else { ((w - off + s - 1) / s).min(wo) };
        (lo.max(0) as usize, hi.max(lo).max(0) as usize)
    }
}

fn im2col<T: Scalar>(g: &Geometry, x: &[T], r0: usize, rows: usize, cols: &mut [T]) {
    let nb = rows * g.wo;
    let (s, d, p) = (g.spec.stride, g.spec.dilation as isize, g.spec.pad as isize);
    for ci in 0..g.ci {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * nb..(row + 1) * nb];
                let off_x = kx as isize * d - p;
                let (lo, hi) = g.col_range(off_x);
                for r in 0..rows {
                    let oy = r0 + r;
                    let iy = (oy * s) as isize + ky as isize * d - p;
                    let drow = &mut dst[r * g.wo..(r + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize || lo >= hi {
                        drow.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    drow[..lo].fill(T::zero());
                    drow[hi..].fill(T::zero());
                    if s == 1 {
                        let start = (lo as isize + off_x) as usize;
                        drow[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                    } else {
                        for ox in lo..hi {
                            drow[ox] = src[(ox as isize * s as isize + off_x) as usize];
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(g: &Geometry, cols: &[T], r0: usize, rows: usize, dx: &mut [T]) {
    let nb = rows * g.wo;
    let (s, d, p) = (g.spec.stride, g.spec.dilation as isize, g.spec.pad as isize);
    for ci in 0..g.ci {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &cols[row * nb..(row + 1) * nb];
                let off_x = kx as isize * d - p;
                let (lo, hi) = g.col_range(off_x);
                if lo >= hi {
                    continue;
                }
                for r in 0..rows {
                    let iy = ((r0 + r) * s) as isize + ky as isize * d - p;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let srow = &src[r * g.wo..(r + 1) * g.wo];
                    for ox in lo..hi {
                        dst[(ox as isize * s as isize + off_x) as usize] += srow[ox];
                    }
                }
            }
        }
    }
}

pub fn output_shape(x: &[usize], weight: &[usize], spec: ConvSpec) -> Vec<usize> {
    let [n, _, h, w] = x[..] else {
        panic!("conv input must be 4-D, got {x:?}")
    };
    vec![n, weight[0], spec.out_size(h, weight[2]), spec.out_size(w, weight[3])]
}

pub fn forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: ConvSpec,
) -> Tensor<T> {
    let g = Geometry::new(x.shape(), weight.shape(), spec);
    if let Some(b) = bias {
        assert_eq!(b.numel(), g.co, "bias length must equal output channels");
    }
    let k = g.k();
    let (xd, wd) = (x.data(), weight.data());
    let sample_in = g.ci * g.h * g.w;
    let blocks = exec::map_range(g.items(), |i| {
        let (s, r0, rows) = g.item(i);
        let nb = rows * g.wo;
        let mut cols = vec![T::zero(); k * nb];
        im2col(&g, &xd[s * sample_in..(s + 1) * sample_in], r0, rows, &mut cols);
        let mut out = vec![T::zero(); g.co * nb];
        unsafe {
            T::gemm(
                g.co, k, nb, T::one(),
                wd.as_ptr(), k as isize, 1,
                cols.as_ptr(), nb as isize, 1,
                T::zero(),
                out.as_mut_ptr(), nb as isize, 1,
            );
        }
        out
    });
    let plane = g.ho * g.wo;
    let mut out = vec![T::zero(); g.n * g.co * plane];
    for (i, block) in blocks.into_iter().enumerate() {
        let (s, r0, rows) = g.item(i);
        let nb = rows * g.wo;
        for c in 0..g.co {
            let dst = (s * g.co + c) * plane + r0 * g.wo;
            let b = bias.map_or(T::zero(), |b| b.data()[c]);
            for (o, &v) in out[dst..dst + nb].iter_mut().zip(&block[c * nb..(c + 1) * nb]) {
                *o = v + b;
            }
        }
    }
    Tensor::new(vec![g.n, g.co, g.ho, g.wo], out).expect("conv output shape")
}

pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    spec: ConvSpec,
    need_input: bool,
) -> ConvGrads<T> {
    let g = Geometry::new(x.shape(), weight.shape(), spec);
    let k = g.k();
    let plane = g.ho * g.wo;
    let sample_in = g.ci * g.h * g.w;
    let (xd, wd, gy) = (x.data(), weight.data(), grad_out.data());
    let parts = exec::map_range(g.items(), |i| {
        let (s, r0, rows) = g.item(i);
        let nb = rows * g.wo;
        let gy_block = &gy[s * g.co * plane + r0 * g.wo..];
        let mut cols = vec![T::zero(); k * nb];
        im2col(&g, &xd[s * sample_in..(s + 1) * sample_in], r0, rows, &mut cols);
        let mut gw = vec![T::zero(); g.co * k];
        let mut gb = vec![T::zero(); g.co];
        unsafe {
            T::gemm(
                g.co, nb, k, T::one(),
                gy_block.as_ptr(), plane as isize, 1,
                cols.as_ptr(), 1, nb as isize,
                T::zero(),
                gw.as_mut_ptr(), k as isize, 1,
            );
        }
        for (c, b) in gb.iter_mut().enumerate() {
            *b = gy_block[c * plane..c * plane + nb].iter().copied().sum();
        }
        let dcols = need_input.then(|| {
            // reuse the column buffer for the input gradient
            unsafe {
                T::gemm(
                    k, g.co, nb, T::one(),
                    wd.as_ptr(), 1, k as isize,
                    gy_block.as_ptr(), plane as isize, 1,
                    T::zero(),
                    cols.as_mut_ptr(), nb as isize, 1,
                );
            }
            cols
        });
        (gw, gb, dcols)
    });
    let mut gw = vec![T::zero(); g.co * k];
    let mut gb = vec![T::zero(); g.co];
    let mut gx = need_input.then(|| vec![T::zero(); g.n * sample_in]);
    for (i, (pw, pb, dcols)) in parts.into_iter().enumerate() {
        gw.iter_mut().zip(&pw).for_each(|(a, &b)| *a += b);
        gb.iter_mut().zip(&pb).for_each(|(a, &b)| *a += b);
        if let (Some(gx), Some(dcols)) = (gx.as_mut(), dcols) {
            let (s, r0, rows) = g.item(i);
            col2im(&g, &dcols, r0, rows, &mut gx[s * sample_in..(s + 1) * sample_in]);
        }
    }
    ConvGrads {
        input: gx.map(|d| Tensor::new(x.shape().to_vec(), d).unwrap()),
        weight: Tensor::new(weight.shape().to_vec(), gw).unwrap(),
        bias: Tensor::new(vec![g.co], gb).unwrap(),
    }
}

/// Multiply-accumulate count of one forward convolution.
pub fn madds(x: &[usize], weight: &[usize], spec: ConvSpec) -> u64 {
    let out = output_shape(x, weight, spec);
    (out.iter().product::<usize>() * weight[1] * weight[2] * weight[3]) as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Direct seven-loop convolution.
    fn naive(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, spec: ConvSpec) -> Tensor<f64> {
        let (n, ci, h, wd) = x.dims4();
        let (co, _, kh, kw) = w.dims4();
        let (ho, wo) = (spec.out_size(h, kh), spec.out_size(wd, kw));
        let mut out = vec![0.0; n * co * ho * wo];
        for s in 0..n {
            for o in 0..co {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = b.data()[o];
                        for c in 0..ci {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * spec.stride + ky * spec.dilation) as isize - spec.pad as isize;
                                    let ix = (ox * spec.stride + kx * spec.dilation) as isize - spec.pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += x.data()[((s * ci + c) * h + iy as usize) * wd + ix as usize]
                                        * w.data()[((o * ci + c) * kh + ky) * kw + kx];
                                }
                            }
                        }
                        out[((s * co + o) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        Tensor::new(vec![n, co, ho, wo], out).unwrap()
    }

    #[test]
    fn matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cases = [
            ([2, 3, 7, 9], [4, 3, 3, 3], ConvSpec::same(3, 1)),
            ([1, 2, 8, 8], [3, 2, 3, 3], ConvSpec::same(3, 2)),
            ([2, 2, 9, 8], [5, 2, 3, 3], ConvSpec::strided(3, 2)),
            ([1, 4, 5, 6], [2, 4, 1, 1], ConvSpec::same(1, 1)),
            ([1, 1, 6, 6], [2, 1, 3, 3], ConvSpec { stride: 1, pad: 0, dilation: 1 }),
        ];
        for (xs, ws, spec) in cases {
            let x = rand_tensor(&xs, &mut rng);
            let w = rand_tensor(&ws, &mut rng);
            let b = rand_tensor(&[ws[0]], &mut rng);
            let fast = forward(&x, &w, Some(&b), spec);
            let slow = naive(&x, &w, &b, spec);
            assert_eq!(fast.shape(), slow.shape());
            assert!(fast.max_abs_diff(&slow) < 1e-12, "{spec:?}");
        }
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <conv(x), gy> must equal <x, gx> + <w, gw> + <b, gb> by bilinearity
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for spec in [ConvSpec::same(3, 1), ConvSpec::same(3, 2), ConvSpec::strided(3, 2)] {
            let x = rand_tensor(&[2, 3, 8, 7], &mut rng);
            let w = rand_tensor(&[4, 3, 3, 3], &mut rng);
            let zero_b = Tensor::zeros(vec![4]);
            let y = forward(&x, &w, Some(&zero_b), spec);
            let gy = rand_tensor(y.shape(), &mut rng);
            let grads = backward(&x, &w, &gy, spec, true);
            let dot = |a: &Tensor<f64>, b: &Tensor<f64>| -> f64 {
                a.data().iter().zip(b.data()).map(|(p, q)| p * q).sum()
            };
            let lhs = dot(&y, &gy);
            assert!((lhs - dot(&x, grads.input.as_ref().unwrap())).abs() < 1e-9);
            assert!((lhs - dot(&w, &grads.weight)).abs() < 1e-9);
            let gb_expect: Vec<f64> = (0..4)
                .map(|c| (0..2).map(|s| gy.sample(s).data()[c * y.shape()[2] * y.shape()[3]..(c + 1) * y.shape()[2] * y.shape()[3]].iter().sum::<f64>()).sum())
                .collect();
            for (a, b) in grads.bias.data().iter().zip(&gb_expect) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn blocking_does_not_change_results() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // wide enough that COL_BUDGET forces several row blocks
        let x = rand_tensor(&[1, 16, 80, 512], &mut rng);
        let w = rand_tensor(&[2, 16, 3, 3], &mut rng);
        let b = Tensor::zeros(vec![2]);
        let g = Geometry::new(x.shape(), w.shape(), ConvSpec::same(3, 1));
        assert!(g.blocks() > 1);
        let fast = forward(&x, &w, Some(&b), ConvSpec::same(3, 1));
        let slow = naive(&x, &w, &b, ConvSpec::same(3, 1));
        assert!(fast.max_abs_diff(&slow) < 1e-11);
    }

    #[test]
    fn madd_count() {
        assert_eq!(madds(&[1, 4, 10, 10], &[8, 4, 3, 3], ConvSpec::same(3, 1)), 100 * 8 * 36);
        assert_eq!(madds(&[1, 4, 10, 10], &[8, 4, 3, 3], ConvSpec::strided(3, 2)), 25 * 8 * 36);
    }
}
