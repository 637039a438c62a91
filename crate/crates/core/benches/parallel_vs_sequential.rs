//! Parallel vs sequential execution of the hot paths.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use teqhdr::autograd::{conv, ConvSpec, Tensor};
use teqhdr::exec::{set_execution, Execution};
use teqhdr::network::{FrameMode, Model, ModelConfig, NetworkInput, Variant};
use teqhdr::scenes::{generate, SceneSpec};
use teqhdr::sensor::Trapezoid;
use teqhdr::simulator::{simulate_frames, SimulationConfig};

const MODES: [(Execution, &str); 2] = [(Execution::Sequential, "sequential"), (Execution::Parallel, "parallel")];

fn ramp(shape: &[usize]) -> Tensor<f32> {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|i| ((i * 7919) % 1000) as f32 / 1000.0 - 0.5).collect()).unwrap()
}

fn bench_conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv3x3_64ch_128px");
    let x = ramp(&[2, 64, 128, 128]);
    let w = ramp(&[64, 64, 3, 3]);
    let b = ramp(&[64]);
    for (mode, name) in MODES {
        set_execution(mode);
        group.bench_function(BenchmarkId::from_parameter(name), |bench| {
            bench.iter(|| conv::forward(&x, &w, Some(&b), ConvSpec::same(3, 1)))
        });
    }
    group.finish();
}

fn bench_simulation(c: &mut Criterion) {
    let mut group = c.benchmark_group("simulate_8x128px");
    group.sample_size(10);
    let frames = generate(&SceneSpec {
        width: 128,
        height: 128,
        frames: 8,
        ..SceneSpec::default()
    })
    .unwrap();
    let cfg = SimulationConfig::default();
    for (mode, name) in MODES {
        set_execution(mode);
        group.bench_function(BenchmarkId::from_parameter(name), |bench| {
            bench.iter(|| simulate_frames("bench", &frames, &cfg, &mut Vec::new()).unwrap())
        });
    }
    group.finish();
}

fn bench_forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward_tiny_gsr_or_64px");
    group.sample_size(10);
    let frames = generate(&SceneSpec::default()).unwrap();
    let (_, sims) = simulate_frames("bench", &frames, &SimulationConfig::default(), &mut Vec::new()).unwrap();
    let input =
        NetworkInput::<f32>::from_triplet([&sims[2].raw, &sims[3].raw, &sims[4].raw], Trapezoid::default()).unwrap();
    let model = Model::<f32>::new(ModelConfig::tiny(Variant::GsrOr, FrameMode::Multi), 0).unwrap();
    for (mode, name) in MODES {
        set_execution(mode);
        group.bench_function(BenchmarkId::from_parameter(name), |bench| bench.iter(|| model.infer(&input).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, bench_conv, bench_simulation, bench_forward);
criterion_main!(benches);
