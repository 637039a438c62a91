use super::config::{FrameMode, ModelConfig, SrInput, Variant};
use super::inputs::{FrameTensors, NetworkInput};
use super::params::{Binder, ParamStore};
use crate::autograd::{ConvSpec, Graph, Scalar, Var};
use crate::{Error, Result};

/// Constants substituted for learned maps, for probing the wiring.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Hooks {
    /// Per-pixel fusion weights for (S, M, L).
    pub fusion_weights: Option<[f64; 3]>,
    /// Value of both attention maps.
    pub attention: Option<f64>,
    /// Value of the SR gate.
    pub gate: Option<f64>,
}

/// Intermediate feature maps of a forward pass.
pub struct Trace<T: Scalar> {
    /// Per-exposure features `f_S, f_M, f_L` of the reference frame.
    pub features: Option<[Var<T>; 3]>,
    /// Fusion weights `[N, 3, h, w]` of the reference frame.
    pub weights: Option<Var<T>>,
    /// Fused features `F_1, F_r, F_3`.
    pub fused: [Var<T>; 3],
    /// Refined features `F̄_1, F̄_r, F̄_3`.
    pub refined: [Var<T>; 3],
    /// Attention maps `A_1, A_3`.
    pub attention: Option<[Var<T>; 2]>,
    /// `Z_t = concat(Z_1, F̄_r, Z_3)`.
    pub stacked: Var<T>,
    pub denoised: Var<T>,
    pub denoised_down: Option<Var<T>>,
    pub sr: Option<Var<T>>,
    pub gate: Option<Var<T>>,
    pub gated: Option<Var<T>>,
}

pub struct Output<T: Scalar> {
    /// `[N, 3, H, W]` radiance.
    pub hr: Var<T>,
    /// `[N, 3, H/2, W/2]` radiance.
    pub lr: Var<T>,
    pub trace: Trace<T>,
}

struct Net<'g, 'b, T: Scalar> {
    g: &'g Graph<T>,
    params: &'g Binder<'b, T>,
    cfg: &'g ModelConfig,
    hooks: Hooks,
}

impl<T: Scalar> Net<'_, '_, T> {
    fn conv(&self, name: &str, x: &Var<T>, cout: usize, k: usize, spec: ConvSpec) -> Var<T> {
        let cin = x.shape()[1];
        let w = self.params.get(self.g, &format!("{name}.weight"), &[cout, cin, k, k]);
        let b = self.params.get(self.g, &format!("{name}.bias"), &[cout]);
        self.g.conv2d(x, &w, Some(&b), spec)
    }

    fn conv3(&self, name: &str, x: &Var<T>, cout: usize) -> Var<T> {
        self.conv(name, x, cout, 3, ConvSpec::same(3, 1))
    }

    fn act(&self, x: &Var<T>) -> Var<T> {
        self.g.leaky_relu(x, self.cfg.leaky_slope)
    }

    fn resblock(&self, name: &str, x: &Var<T>) -> Var<T> {
        let c = x.shape()[1];
        let y = self.act(&self.conv3(&format!("{name}.0"), x, c));
        let y = self.conv3(&format!("{name}.1"), &y, c);
        self.g.add(x, &y)
    }

    fn drdb(&self, name: &str, x: &Var<T>) -> Var<T> {
        let mut feats = vec![x.clone()];
        let spec = ConvSpec::same(3, self.cfg.dilation);
        for j in 0..self.cfg.drdb_convs {
            let refs: Vec<&Var<T>> = feats.iter().collect();
            let inp = self.g.concat(&refs);
            let y = self.act(&self.conv(&format!("{name}.conv{j}"), &inp, self.cfg.growth, 3, spec));
            feats.push(y);
        }
        let refs: Vec<&Var<T>> = feats.iter().collect();
        let fused = self.conv(&format!("{name}.fuse"), &self.g.concat(&refs), self.cfg.width, 1, ConvSpec::same(1, 1));
        self.g.add(x, &fused)
    }

    fn fusion(&self, frame: &FrameTensors<T>) -> (Var<T>, Option<[Var<T>; 3]>, Option<Var<T>>) {
        let c = self.cfg.width;
        let exposures = self.g.constant(frame.exposures.clone());
        if self.cfg.variant == Variant::Baseline {
            let y = self.act(&self.conv3("fusion.direct.0", &exposures, c));
            return (self.act(&self.conv3("fusion.direct.1", &y, c)), None, None);
        }
        let features = [0, 1, 2].map(|e| {
            let x = self.g.narrow(&exposures, 2 * e, 2);
            let y = self.act(&self.conv3("fusion.encoder.0", &x, c));
            self.act(&self.conv3("fusion.encoder.1", &y, c))
        });
        let weights = match self.hooks.fusion_weights {
            Some(w) => {
                let (n, _, h, wd) = dims(features[0].shape());
                let planes: Vec<Var<T>> = w.iter().map(|&v| self.g.full(&[n, 1, h, wd], v)).collect();
                self.g.concat(&[&planes[0], &planes[1], &planes[2]])
            }
            None => {
                let maps = self.g.constant(frame.maps.clone());
                let y = self.act(&self.conv3("fusion.weights.0", &maps, c));
                let y = self.act(&self.conv3("fusion.weights.1", &y, c));
                self.g.softmax_channels(&self.conv3("fusion.weights.2", &y, 3))
            }
        };
        let fused = fuse(self.g, [&features[0], &features[1], &features[2]], &weights);
        (fused, Some(features), Some(weights))
    }

    fn attention(&self, fj: &Var<T>, fr: &Var<T>) -> Var<T> {
        if let Some(a) = self.hooks.attention {
            return self.g.full(fj.shape(), a);
        }
        let c = self.cfg.width;
        let y = self.act(&self.conv3("denoise.attention.0", &self.g.concat(&[fj, fr]), c));
        self.g.sigmoid(&self.conv3("denoise.attention.1", &y, c))
    }

    fn gate(&self, sr: &Var<T>, down: &Var<T>, raw: &Var<T>) -> Var<T> {
        if let Some(v) = self.hooks.gate {
            return self.g.full(down.shape(), v);
        }
        let c = self.cfg.width;
        let raw_down = self.g.space_to_depth(raw, 4);
        let y = self.act(&self.conv3("gate.0", &self.g.concat(&[sr, down, &raw_down]), c));
        self.g.sigmoid(&self.conv3("gate.1", &y, c))
    }

    fn forward(&self, input: &NetworkInput<T>) -> Output<T> {
        let g = self.g;
        let c = self.cfg.width;
        let unit = 1.0 / input.m_scale;

        let (fr, features, weights) = self.fusion(&input.frames[1]);
        let (f1, f3) = match self.cfg.frames {
            FrameMode::Single => (fr.clone(), fr.clone()),
            FrameMode::Multi => (self.fusion(&input.frames[0]).0, self.fusion(&input.frames[2]).0),
        };

        let refine = |x: &Var<T>| self.act(&self.conv3("denoise.extract", x, c));
        let rr = refine(&fr);
        let (r1, r3) = match self.cfg.frames {
            FrameMode::Single => (rr.clone(), rr.clone()),
            FrameMode::Multi => (refine(&f1), refine(&f3)),
        };
        let (z1, z3, attention) = if self.cfg.attention {
            let a1 = self.attention(&f1, &fr);
            let a3 = self.attention(&f3, &fr);
            (g.mul(&a1, &r1), g.mul(&a3, &r3), Some([a1, a3]))
        } else {
            (r1.clone(), r3.clone(), None)
        };
        let stacked = g.concat(&[&z1, &rr, &z3]);
        let mut x = self.conv3("denoise.merge", &stacked, c);
        for i in 0..self.cfg.drdb_blocks {
            x = self.drdb(&format!("denoise.drdb{i}"), &x);
        }
        let x = g.add(&self.conv3("denoise.post", &x, c), &rr);
        let x = self.act(&self.conv3("denoise.out.0", &x, c));
        let denoised = self.conv3("denoise.out.1", &x, c);

        let y = self.act(&self.conv3("lr.0", &denoised, c));
        let y = self.act(&self.conv3("lr.1", &y, c));
        let lr = g.scale(&g.softplus(&self.conv3("lr.2", &y, 3)), unit);

        let mut trace = Trace {
            features,
            weights,
            fused: [f1, fr, f3],
            refined: [r1, rr, r3],
            attention,
            stacked,
            denoised: denoised.clone(),
            denoised_down: None,
            sr: None,
            gate: None,
            gated: None,
        };

        let Some(mode) = self.cfg.sr_input else {
            let hr = g.upsample2(&lr);
            return Output { hr, lr, trace };
        };

        let raw = g.constant(input.frames[1].raw.clone());
        let mut s = match mode {
            SrInput::OriginalRaw => {
                let y = self.act(&self.conv("sr.head.0", &raw, c, 3, ConvSpec::strided(3, 2)));
                self.act(&self.conv("sr.head.1", &y, c, 3, ConvSpec::strided(3, 2)))
            }
            SrInput::SubsampledStack => {
                let stack = g.constant(input.frames[1].stack.clone());
                self.act(&self.conv("sr.head.0", &stack, c, 3, ConvSpec::strided(3, 2)))
            }
        };
        for i in 0..self.cfg.sr_resblocks {
            s = self.resblock(&format!("sr.body.{i}"), &s);
        }
        let down = self.act(&self.conv("sr.down", &denoised, c, 3, ConvSpec::strided(3, 2)));
        let gated = if self.cfg.gate {
            let gt = self.gate(&s, &down, &raw);
            let out = gate_fuse(g, &gt, &down, &s);
            trace.gate = Some(gt);
            out
        } else {
            g.add(&down, &s)
        };

        let mut h = gated.clone();
        for i in 0..self.cfg.hr_resblocks {
            h = self.resblock(&format!("hr.body.{i}"), &h);
        }
        let h = self.act(&g.pixel_shuffle(&self.conv3("hr.up.0", &h, 4 * c), 2));
        let h = self.act(&g.pixel_shuffle(&self.conv3("hr.up.1", &h, 4 * c), 2));
        let h = self.act(&self.conv3("hr.refine", &h, c));
        let hr = g.scale(&g.softplus(&self.conv3("hr.out", &h, 3)), unit);

        trace.denoised_down = Some(down);
        trace.sr = Some(s);
        trace.gated = Some(gated);
        Output { hr, lr, trace }
    }
}

fn dims(s: &[usize]) -> (usize, usize, usize, usize) {
    (s[0], s[1], s[2], s[3])
}

/// `F = Σ_e f_e ∘ w_e` with one weight plane per exposure broadcast over channels.
pub fn fuse<T: Scalar>(g: &Graph<T>, features: [&Var<T>; 3], weights: &Var<T>) -> Var<T> {
    let terms: Vec<Var<T>> = (0..3)
        .map(|e| g.mul_channels(features[e], &g.narrow(weights, e, 1)))
        .collect();
    g.add(&g.add(&terms[0], &terms[1]), &terms[2])
}

/// `φ_F = G ∘ φ_DN↓ + φ_SR`.
pub fn gate_fuse<T: Scalar>(g: &Graph<T>, gate: &Var<T>, denoised_down: &Var<T>, sr: &Var<T>) -> Var<T> {
    g.add(&g.mul(gate, denoised_down), sr)
}

fn check_input<T: Scalar>(input: &NetworkInput<T>) -> Result<()> {
    let (h, w) = input.raw_size();
    if h == 0 || w == 0 || h % 4 != 0 || w % 4 != 0 {
        return Err(Error::invalid(format!("raw size {w}x{h} must be positive multiples of 4")));
    }
    for f in &input.frames {
        if f.raw.shape() != input.frames[1].raw.shape() {
            return Err(Error::shape(input.frames[1].raw.shape(), f.raw.shape()));
        }
    }
    if !(input.m_scale > 0.0 && input.m_scale.is_finite()) {
        return Err(Error::invalid("m_scale must be positive"));
    }
    Ok(())
}

/// Runs the architecture of `cfg` with parameters from `params`.
pub fn run<T: Scalar>(
    g: &Graph<T>,
    params: &Binder<'_, T>,
    cfg: &ModelConfig,
    input: &NetworkInput<T>,
    hooks: Hooks,
) -> Result<Output<T>> {
    cfg.validate()?;
    check_input(input)?;
    let out = Net { g, params, cfg, hooks }.forward(input);
    params.check()?;
    Ok(out)
}

/// Parameter shapes of `cfg` in declaration order.
pub fn declare(cfg: &ModelConfig) -> Result<Vec<(String, Vec<usize>)>> {
    let g = Graph::<f32>::shape_only();
    let binder = Binder::declaring();
    run(&g, &binder, cfg, &NetworkInput::phantom(1, 16, 16), Hooks::default())?;
    Ok(binder.declared())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Scalar = f32> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
}

impl<T: Scalar> Model<T> {
    /// Xavier-initialized model.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let shapes = declare(&config)?;
        Ok(Model {
            params: ParamStore::xavier(&shapes, seed),
            config,
        })
    }

    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        let shapes = declare(&config)?;
        for (name, shape) in &shapes {
            match params.get(name) {
                Some(t) if t.shape() == &shape[..] => {}
                Some(t) => {
                    return Err(Error::Format {
                        what: "parameters",
                        detail: format!("{name}: shape {:?}, expected {shape:?}", t.shape()),
                    })
                }
                None => {
                    return Err(Error::Format {
                        what: "parameters",
                        detail: format!("missing {name}"),
                    })
                }
            }
        }
        if params.len() != shapes.len() {
            return Err(Error::Format {
                what: "parameters",
                detail: format!("{} tensors, architecture declares {}", params.len(), shapes.len()),
            });
        }
        Ok(Model { config, params })
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    /// Forward pass; the returned binder maps parameter names to graph leaves.
    pub fn forward<'a>(
        &'a self,
        g: &Graph<T>,
        input: &NetworkInput<T>,
        hooks: Hooks,
    ) -> Result<(Output<T>, Binder<'a, T>)> {
        let binder = Binder::new(&self.params);
        let out = run(g, &binder, &self.config, input, hooks)?;
        Ok((out, binder))
    }

    /// Inference-only forward returning `(H_hr, H_lr)` values.
    pub fn infer(&self, input: &NetworkInput<T>) -> Result<(crate::autograd::Tensor<T>, crate::autograd::Tensor<T>)> {
        let g = Graph::inference();
        let (out, _) = self.forward(&g, input, Hooks::default())?;
        Ok((out.hr.value().clone(), out.lr.value().clone()))
    }
}
