use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Central-difference check of `f` with respect to every input element.
fn check_grad(inputs: &[Tensor<f64>], f: impl Fn(&Graph<f64>, &[Var<f64>]) -> Var<f64>) {
    let g = Graph::new();
    let vars: Vec<_> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&g, &vars);
    let grads = g.backward(&out);
    let eval = |ts: &[Tensor<f64>]| {
        let g = Graph::inference();
        let vs: Vec<_> = ts.iter().map(|t| g.constant(t.clone())).collect();
        f(&g, &vs).item()
    };
    let h = 1e-6;
    for (k, t) in inputs.iter().enumerate() {
        let analytic = grads.get(&vars[k]).cloned().unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()));
        for i in 0..t.numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic.data()[i];
            let err = (a - numeric).abs() / (1e-4 + a.abs().max(numeric.abs()));
            assert!(err < 1e-5, "input {k} element {i}: analytic {a} numeric {numeric}");
        }
    }
}

/// Weighted sum so every output element has a distinct upstream gradient.
fn probe(g: &Graph<f64>, y: &Var<f64>, seed: u64) -> Var<f64> {
    let w = g.constant(rand_tensor(y.shape(), seed, -1.0, 1.0));
    g.sum(&g.mul(y, &w))
}

#[test]
fn conv_gradients() {
    for (spec, k) in [
        (ConvSpec::same(3, 1), 3),
        (ConvSpec::same(3, 2), 3),
        (ConvSpec::strided(3, 2), 3),
        (ConvSpec::same(1, 1), 1),
    ] {
        let x = rand_tensor(&[2, 3, 6, 6], 1, -1.0, 1.0);
        let w = rand_tensor(&[2, 3, k, k], 2, -1.0, 1.0);
        let b = rand_tensor(&[2], 3, -1.0, 1.0);
        check_grad(&[x, w, b], |g, v| {
            let y = g.conv2d(&v[0], &v[1], Some(&v[2]), spec);
            probe(g, &y, 9)
        });
    }
}

#[test]
fn elementwise_gradients() {
    let a = rand_tensor(&[1, 2, 3, 3], 4, 0.2, 1.5);
    let b = rand_tensor(&[1, 2, 3, 3], 5, -1.0, 1.0);
    check_grad(&[a.clone(), b.clone()], |g, v| {
        let s = g.add(&g.mul(&v[0], &v[1]), &g.sub(&v[1], &v[0]));
        let t = g.add_scalar(&g.scale(&s, 1.7), 0.3);
        probe(g, &t, 10)
    });
    check_grad(&[a.clone()], |g, v| probe(g, &g.ln(&v[0]), 11));
    check_grad(&[a.clone()], |g, v| probe(g, &g.powf(&v[0], 1.0 / 2.2), 12));
    check_grad(&[b.clone()], |g, v| probe(g, &g.sigmoid(&v[0]), 13));
    check_grad(&[b.clone()], |g, v| probe(g, &g.softplus(&v[0]), 14));
    check_grad(&[b.clone()], |g, v| probe(g, &g.leaky_relu(&v[0], 0.1), 15));
    check_grad(&[b.clone()], |g, v| probe(g, &g.abs(&v[0]), 16));
    check_grad(&[b], |g, v| g.mean(&g.mul(&v[0], &v[0])));
}

#[test]
fn layout_gradients() {
    let x = rand_tensor(&[2, 8, 4, 4], 6, -1.0, 1.0);
    let y = rand_tensor(&[2, 3, 4, 4], 7, -1.0, 1.0);
    check_grad(&[x.clone(), y.clone()], |g, v| {
        let c = g.concat(&[&v[0], &v[1], &v[0]]);
        probe(g, &g.narrow(&c, 5, 9), 17)
    });
    check_grad(&[x.clone()], |g, v| probe(g, &g.pixel_shuffle(&v[0], 2), 18));
    check_grad(&[x.clone()], |g, v| probe(g, &g.space_to_depth(&v[0], 2), 19));
    check_grad(&[x.clone()], |g, v| probe(g, &g.upsample2(&v[0]), 20));
    check_grad(&[x.clone()], |g, v| probe(g, &g.avg_pool2(&v[0]), 21));
    check_grad(&[y.clone()], |g, v| probe(g, &g.softmax_channels(&v[0]), 22));
    let m = rand_tensor(&[2, 1, 4, 4], 8, -1.0, 1.0);
    check_grad(&[y, m], |g, v| probe(g, &g.mul_channels(&v[0], &v[1]), 23));
}

#[test]
fn pixel_shuffle_inverts_space_to_depth() {
    let g = Graph::<f64>::inference();
    let x = g.constant(rand_tensor(&[1, 2, 8, 4], 30, -1.0, 1.0));
    let back = g.pixel_shuffle(&g.space_to_depth(&x, 4), 4);
    assert_eq!(back.value(), x.value());
}

#[test]
fn pixel_shuffle_places_channels_in_blocks() {
    let g = Graph::<f64>::inference();
    let x = g.constant(Tensor::new(vec![1, 4, 1, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let y = g.pixel_shuffle(&x, 2);
    assert_eq!(y.shape(), [1, 1, 2, 2]);
    assert_eq!(y.value().data(), [1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn softmax_is_normalized() {
    let g = Graph::<f64>::inference();
    let x = g.constant(rand_tensor(&[1, 3, 2, 2], 31, -20.0, 20.0));
    let y = g.softmax_channels(&x);
    for i in 0..4 {
        let s: f64 = (0..3).map(|c| y.value().data()[c * 4 + i]).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}

#[test]
fn upsample_of_constant_is_constant() {
    let g = Graph::<f64>::inference();
    let x = g.full(&[1, 1, 3, 5], 0.7);
    let y = g.upsample2(&x);
    assert!(y.value().data().iter().all(|&v| (v - 0.7).abs() < 1e-12));
}

#[test]
fn softplus_is_stable() {
    let g = Graph::<f32>::inference();
    let x = g.constant(Tensor::new(vec![3], vec![-200.0, 0.0, 200.0]).unwrap());
    let y = g.softplus(&x);
    let d = y.value().data();
    assert!(d[0] >= 0.0 && d[0] < 1e-30);
    assert!((d[1] - 2f32.ln()).abs() < 1e-6);
    assert_eq!(d[2], 200.0);
}

#[test]
fn shared_subexpressions_accumulate() {
    let g = Graph::<f64>::new();
    let x = g.param(Tensor::scalar(3.0));
    let y = g.mul(&x, &x);
    let z = g.add(&y, &x);
    let grads = g.backward(&z);
    assert_eq!(grads.get(&x).unwrap().data(), [7.0]);
}

#[test]
fn constants_get_no_gradient() {
    let g = Graph::<f64>::new();
    let x = g.param(Tensor::scalar(2.0));
    let c = g.constant(Tensor::scalar(5.0));
    let z = g.mul(&x, &c);
    let grads = g.backward(&z);
    assert!(grads.get(&c).is_none());
    assert_eq!(grads.get(&x).unwrap().data(), [5.0]);
}

#[test]
fn inference_graph_does_not_record() {
    let g = Graph::<f32>::inference();
    let x = g.param(Tensor::scalar(2.0));
    assert!(!g.mul(&x, &x).requires_grad());
}

#[test]
fn shape_only_counts_madds_without_data() {
    let g = Graph::<f32>::shape_only();
    let x = g.constant(Tensor::zeros(vec![1, 4, 256, 256]));
    let w = g.param(Tensor::zeros(vec![8, 4, 3, 3]));
    let y = g.conv2d(&x, &w, None, ConvSpec::strided(3, 2));
    assert_eq!(y.shape(), [1, 8, 128, 128]);
    assert!(y.value().is_phantom());
    assert_eq!(g.madds(), 8 * 4 * 9 * 128 * 128);
    let z = g.pixel_shuffle(&g.concat(&[&y, &y]), 2);
    assert_eq!(z.shape(), [1, 4, 256, 256]);
}
