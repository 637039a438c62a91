use super::*;
use crate::image::Plane;
use crate::sensor::{ExposureConfig, TeqLayout, TeqRawFrame, Trapezoid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn raw(size: usize, seed: u64) -> TeqRawFrame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mosaic = Plane::from_fn(size, size, |_, _| rng.gen_range(0.0..1.0));
    TeqRawFrame::new(mosaic, TeqLayout::default(), ExposureConfig::default()).unwrap()
}

fn input(size: usize, seeds: [u64; 3]) -> NetworkInput<f64> {
    let r = seeds.map(|s| raw(size, s));
    NetworkInput::from_triplet([&r[0], &r[1], &r[2]], Trapezoid::default()).unwrap()
}

fn tiny(v: Variant) -> Model<f64> {
    Model::new(ModelConfig::tiny(v, FrameMode::Multi), 7).unwrap()
}

fn run_with(model: &Model<f64>, x: &NetworkInput<f64>, hooks: Hooks) -> Output<f64> {
    let g = Graph::inference();
    model.forward(&g, x, hooks).unwrap().0
}

fn max_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.max_abs_diff(b)
}

#[test]
fn fusion_weights_sum_to_one() {
    let m = tiny(Variant::GsrOr);
    let out = run_with(&m, &input(16, [1, 2, 3]), Hooks::default());
    let w = out.trace.weights.unwrap();
    let d = w.value().data();
    let plane = 64;
    for i in 0..plane {
        let s: f64 = (0..3).map(|e| d[e * plane + i]).sum();
        assert!((s - 1.0).abs() < 1e-9);
    }
}

#[test]
fn forced_one_hot_fusion_selects_middle_features() {
    let m = tiny(Variant::Att);
    let out = run_with(
        &m,
        &input(16, [1, 2, 3]),
        Hooks {
            fusion_weights: Some([0.0, 1.0, 0.0]),
            ..Hooks::default()
        },
    );
    let f = out.trace.features.unwrap();
    assert_eq!(max_diff(out.trace.fused[1].value(), f[1].value()), 0.0);
}

#[test]
fn forced_equal_fusion_is_mean() {
    let m = tiny(Variant::Att);
    let third = 1.0 / 3.0;
    let out = run_with(
        &m,
        &input(16, [1, 2, 3]),
        Hooks {
            fusion_weights: Some([third; 3]),
            ..Hooks::default()
        },
    );
    let f = out.trace.features.unwrap();
    let (a, b, c) = (f[0].value().data(), f[1].value().data(), f[2].value().data());
    let fused = out.trace.fused[1].value().data();
    for i in 0..fused.len() {
        assert!((fused[i] - (a[i] + b[i] + c[i]) / 3.0).abs() < 1e-12);
    }
}

#[test]
fn learned_fusion_matches_weighted_sum() {
    let m = tiny(Variant::GsrOr);
    let out = run_with(&m, &input(16, [4, 5, 6]), Hooks::default());
    let f = out.trace.features.unwrap();
    let w = out.trace.weights.unwrap();
    let (_, c, h, wd) = f[0].value().dims4();
    let plane = h * wd;
    let fused = out.trace.fused[1].value().data();
    for ch in 0..c {
        for i in 0..plane {
            let expect: f64 = (0..3)
                .map(|e| f[e].value().data()[ch * plane + i] * w.value().data()[e * plane + i])
                .sum();
            assert!((fused[ch * plane + i] - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn attention_forced_to_one_replicates_reference() {
    let m = tiny(Variant::GsrOr);
    let out = run_with(
        &m,
        &input(16, [2, 2, 2]),
        Hooks {
            attention: Some(1.0),
            ..Hooks::default()
        },
    );
    let z = out.trace.stacked.value();
    let c = m.config.width;
    let (_, _, h, w) = z.dims4();
    let block = c * h * w;
    let d = z.data();
    assert_eq!(&d[..block], &d[block..2 * block]);
    assert_eq!(&d[2 * block..], &d[block..2 * block]);
    assert_eq!(&d[block..2 * block], out.trace.refined[1].value().data());
}

#[test]
fn attention_forced_to_zero_annihilates_neighbours() {
    let m = tiny(Variant::GsrOr);
    let out = run_with(
        &m,
        &input(16, [1, 2, 3]),
        Hooks {
            attention: Some(0.0),
            ..Hooks::default()
        },
    );
    let d = out.trace.stacked.value().data();
    let block = d.len() / 3;
    assert!(d[..block].iter().all(|&v| v == 0.0));
    assert!(d[2 * block..].iter().all(|&v| v == 0.0));
}

#[test]
fn attention_and_gate_lie_in_open_unit_interval() {
    let m = tiny(Variant::GsrOr);
    let out = run_with(&m, &input(16, [1, 2, 3]), Hooks::default());
    for a in out.trace.attention.unwrap() {
        assert!(a.value().data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
    assert!(out.trace.gate.unwrap().value().data().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn shared_branches_agree_on_identical_inputs() {
    let m = tiny(Variant::GsrOr);
    let out = run_with(&m, &input(16, [9, 8, 9]), Hooks::default());
    let [a1, a3] = out.trace.attention.unwrap();
    assert_eq!(a1.value(), a3.value());
    let d = out.trace.stacked.value().data();
    let block = d.len() / 3;
    assert_eq!(&d[..block], &d[2 * block..]);
}

#[test]
fn gate_extremes() {
    let m = tiny(Variant::GsrSsr);
    let x = input(16, [1, 2, 3]);
    let zero = run_with(&m, &x, Hooks { gate: Some(0.0), ..Hooks::default() }).trace;
    assert_eq!(zero.gated.unwrap().value(), zero.sr.unwrap().value());
    let one = run_with(&m, &x, Hooks { gate: Some(1.0), ..Hooks::default() }).trace;
    let expect = one.denoised_down.unwrap().value().zip_map(one.sr.unwrap().value(), |a, b| a + b);
    assert_eq!(one.gated.unwrap().value(), &expect);
}

#[test]
fn gate_fuse_matches_elementwise_oracle() {
    let g = Graph::<f64>::inference();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut t = || g.constant(Tensor::new(vec![1, 2, 3, 3], (0..18).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap());
    let (gt, a, b) = (t(), t(), t());
    let out = gate_fuse(&g, &gt, &a, &b);
    for i in 0..18 {
        let expect = gt.value().data()[i] * a.value().data()[i] + b.value().data()[i];
        assert_eq!(out.value().data()[i], expect);
    }
}

#[test]
fn shapes_nonnegative_and_deterministic() {
    for v in Variant::ALL {
        for f in [FrameMode::Single, FrameMode::Multi] {
            let m: Model<f64> = Model::new(ModelConfig::tiny(v, f), 1).unwrap();
            let x = input(16, [1, 2, 3]);
            let (hr, lr) = m.infer(&x).unwrap();
            assert_eq!(hr.shape(), [1, 3, 16, 16], "{v:?} {f:?}");
            assert_eq!(lr.shape(), [1, 3, 8, 8]);
            assert!(hr.data().iter().chain(lr.data()).all(|&v| v >= 0.0 && v.is_finite()));
            assert_eq!(m.infer(&x).unwrap().0, hr);
        }
    }
}

#[test]
fn rejects_bad_inputs() {
    let m = tiny(Variant::GsrOr);
    let mut x = input(16, [1, 2, 3]);
    x.frames[0] = input(8, [1, 1, 1]).frames[0].clone();
    let g = Graph::inference();
    assert!(m.forward(&g, &x, Hooks::default()).is_err());
}

#[test]
fn single_conv_parameter_count() {
    let shapes = vec![("c.weight".to_string(), vec![8, 4, 3, 3]), ("c.bias".to_string(), vec![8])];
    assert_eq!(ParamStore::<f32>::xavier(&shapes, 0).num_scalars(), 296);
}

#[test]
fn parameter_ordering_follows_module_containment() {
    let p = |v| report_complexity(&ModelConfig::preset(v, FrameMode::Multi), 64, 64).unwrap().params;
    assert!(p(Variant::Baseline) < p(Variant::Att));
    assert!(p(Variant::Att) < p(Variant::Nsr));
    let gsr = p(Variant::GsrOr);
    assert!((1_200_000..=3_600_000).contains(&gsr), "{gsr}");
    let m: Model<f32> = Model::new(ModelConfig::default(), 0).unwrap();
    assert_eq!(m.num_params() as u64, gsr);
}

#[test]
fn complexity_scales_with_area() {
    let cfg = ModelConfig::default();
    let a = report_complexity(&cfg, 64, 64).unwrap();
    let b = report_complexity(&cfg, 128, 128).unwrap();
    assert_eq!(b.madds, 4 * a.madds);
    assert_eq!(a.flops, 2 * a.madds);
}

#[test]
fn checkpoint_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let m: Model<f32> = Model::new(ModelConfig::tiny(Variant::GsrSsr, FrameMode::Single), 5).unwrap();
    let path = dir.path().join("m.safetensors");
    save_checkpoint(&m, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, m);
    std::fs::write(&path, b"junk").unwrap();
    assert!(load_checkpoint(&path).is_err());
}

#[test]
fn rgb_tensor_roundtrip() {
    let img = RgbImage::from_fn(3, 2, |x, y| [x as f32, y as f32, (x + y) as f32 * 0.5]);
    let t = rgb_to_tensor::<f32>(&img);
    assert_eq!(tensor_to_rgb(&t, 0).unwrap(), img);
}
