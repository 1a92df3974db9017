//! Central-difference checks of every differentiable graph op.

use std::sync::Arc;

use ggdgan::nn::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Builds `L = Σ r ⊙ f(inputs)` and compares dL/dinput with central
/// differences (h = 1e-2, f64 accumulation of L).
fn check<F>(inputs: Vec<Tensor>, f: F, tol: f64)
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let eval = |ins: &[Tensor]| -> (Graph, Vec<Var>, Var) {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.leaf(Arc::new(t.clone()))).collect();
        let out = f(&mut g, &vars);
        (g, vars, out)
    };
    let (g, vars, out) = eval(&inputs);
    let weights = random(g.value(out).shape(), &mut rng);
    let loss = |g: &Graph, out: Var| -> f64 {
        g.value(out)
            .data()
            .iter()
            .zip(weights.data())
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum()
    };
    let mut grads = g.backward(vec![(out, weights.clone())]);
    let h = 1e-2f32;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.take(*v).expect("gradient reaches every input");
        let mut num = vec![0.0f64; analytic.len()];
        for i in 0..analytic.len() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += h;
            let (gp, _, op) = eval(&plus);
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= h;
            let (gm, _, om) = eval(&minus);
            num[i] = (loss(&gp, op) - loss(&gm, om)) / (2.0 * h as f64);
        }
        let diff: f64 = analytic
            .data()
            .iter()
            .zip(&num)
            .map(|(&a, &n)| (a as f64 - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale: f64 = num.iter().map(|n| n * n).sum::<f64>().sqrt().max(1e-3);
        assert!(
            diff / scale < tol,
            "input {k}: relative error {}",
            diff / scale
        );
    }
}

#[test]
fn conv2d_stride1_pad1() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random([2, 3, 5, 5], &mut rng);
    let w = random([4, 3, 3, 3], &mut rng);
    let b = random([4, 1, 1, 1], &mut rng);
    check(vec![x, w, b], |g, v| g.conv2d(v[0], v[1], v[2], 1, 1), 1e-3);
}

#[test]
fn conv2d_stride2_kernel4() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random([2, 2, 8, 6], &mut rng);
    let w = random([3, 2, 4, 4], &mut rng);
    let b = random([3, 1, 1, 1], &mut rng);
    check(vec![x, w, b], |g, v| g.conv2d(v[0], v[1], v[2], 2, 1), 1e-3);
}

#[test]
fn conv_transpose() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random([2, 3, 3, 4], &mut rng);
    let w = random([3, 2, 2, 2], &mut rng);
    let b = random([2, 1, 1, 1], &mut rng);
    check(
        vec![x, w, b],
        |g, v| g.conv_transpose2(v[0], v[1], v[2]),
        1e-3,
    );
}

#[test]
fn max_pool() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    check(
        vec![random([2, 2, 4, 6], &mut rng)],
        |g, v| g.max_pool2(v[0]),
        1e-3,
    );
}

#[test]
fn instance_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    check(
        vec![random([2, 3, 4, 4], &mut rng)],
        |g, v| g.instance_norm(v[0]),
        2e-3,
    );
}

#[test]
fn batch_norm_training_mode() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random([3, 2, 3, 3], &mut rng);
    let gamma = random([2, 1, 1, 1], &mut rng);
    let beta = random([2, 1, 1, 1], &mut rng);
    check(
        vec![x, gamma, beta],
        |g, v| g.batch_norm(v[0], v[1], v[2], None).0,
        2e-3,
    );
}

#[test]
fn pointwise_chain() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random([1, 2, 3, 3], &mut rng);
    check(
        vec![x],
        |g, v| {
            let a = g.leaky_relu(v[0], 0.2);
            let b = g.sigmoid(a);
            let c = g.add_scalar(b, 0.5);
            g.reciprocal(c)
        },
        1e-3,
    );
}

#[test]
fn concat_pool_dropout() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = random([2, 1, 2, 2], &mut rng);
    let b = random([2, 2, 2, 2], &mut rng);
    let mask: Vec<f32> = (0..24)
        .map(|i| if i % 3 == 0 { 0.0 } else { 1.25 })
        .collect();
    check(
        vec![a, b],
        move |g, v| {
            let c = g.concat(v[0], v[1]);
            let d = g.dropout(c, mask.clone());
            g.global_avg_pool(d)
        },
        1e-3,
    );
}

#[test]
fn shared_input_accumulates() {
    // Entries kept away from the ReLU kink.
    let x = Tensor::from_vec(
        [1, 2, 2, 2],
        vec![0.5, -0.3, 0.8, -0.9, 0.2, 0.7, -0.6, 0.4],
    )
    .unwrap();
    check(
        vec![x],
        |g, v| {
            let r = g.relu(v[0]);
            g.concat(v[0], r)
        },
        1e-3,
    );
}

#[test]
fn constants_receive_no_gradient() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::full([1, 1, 2, 2], 1.0));
    let y = g.add_scalar(x, 1.0);
    let mut grads = g.backward(vec![(y, Tensor::full([1, 1, 2, 2], 1.0))]);
    assert!(grads.take(y).is_some());
    assert!(grads.take(x).is_none());
}
