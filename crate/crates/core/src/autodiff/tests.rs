use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{adjoint_pair, run_suite, DEFAULT_STEP};
use super::*;

fn laplacian_weight() -> Tensor {
    Tensor::new(vec![1, 1, 3, 3], vec![0.0, -1.0, 0.0, -1.0, 4.0, -1.0, 0.0, -1.0, 0.0]).unwrap()
}

#[test]
fn conv_of_square_field_is_minus_two() {
    let x = Tensor::from_fn(&[1, 1, 5, 5], |k| ((k / 5) * (k / 5)) as f32);
    let mut g = Graph::new();
    let xv = g.constant(x);
    let w = g.constant(laplacian_weight());
    let y = g.conv2d(xv, w, None, 1, 0).unwrap();
    assert_eq!(g.shape(y), &[1, 1, 3, 3]);
    assert!(g.value(y).data().iter().all(|&v| v == -2.0));
}

#[test]
fn concat_shape() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[1, 8, 4, 4]));
    let b = g.constant(Tensor::zeros(&[1, 8, 4, 4]));
    let c = g.concat(&[a, b]).unwrap();
    assert_eq!(g.shape(c), &[1, 16, 4, 4]);
    let d = g.constant(Tensor::zeros(&[1, 8, 2, 4]));
    assert!(g.concat(&[a, d]).is_err());
}

#[test]
fn transposed_conv_shape() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[1, 3, 2, 2]));
    let w = g.constant(Tensor::zeros(&[3, 5, 4, 4]));
    let y = g.conv2d_transposed(x, w, None, 2, 1).unwrap();
    assert_eq!(g.shape(y), &[1, 5, 4, 4]);
}

#[test]
fn shape_errors_name_the_op() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[3, 2]));
    let msg = g.add(a, b).unwrap_err().to_string();
    assert!(msg.contains("add") && msg.contains("[2, 3]") && msg.contains("[3, 2]"), "{msg}");
    let x = g.constant(Tensor::zeros(&[1, 2, 5, 5]));
    let w = g.constant(Tensor::zeros(&[1, 3, 3, 3]));
    let msg = g.conv2d(x, w, None, 1, 0).unwrap_err().to_string();
    assert!(msg.contains("conv2d"), "{msg}");
}

#[test]
fn sum_of_squares_gradient() {
    let mut g = Graph::new();
    let x = g.param(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
    let sq = g.mul(x, x).unwrap();
    let loss = g.sum(sq);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0, 6.0]);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[4.0, 8.0, 12.0]);
    g.zero_grad();
    assert!(g.grad(x).is_none());
}

#[test]
fn backward_requires_scalar() {
    let mut g = Graph::new();
    let x = g.param(Tensor::zeros(&[3]));
    let y = g.square(x);
    assert!(g.backward(y).is_err());
}

#[test]
fn constants_get_no_gradient() {
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(2.0));
    let c = g.constant(Tensor::scalar(3.0));
    let y = g.mul(x, c).unwrap();
    g.backward(y).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[3.0]);
    assert!(g.grad(c).is_none());
}

#[test]
fn strided_slice_selects_every_nth() {
    let mut g = Graph::new();
    let x = g.param(Tensor::from_fn(&[1, 1, 8, 8], |k| k as f32));
    let axes = [AxisSlice::full(1), AxisSlice::full(1), AxisSlice::strided(8, 4), AxisSlice::strided(8, 4)];
    let y = g.slice(x, &axes).unwrap();
    assert_eq!(g.value(y).data(), &[0.0, 4.0, 32.0, 36.0]);
    let s = g.sum(y);
    g.backward(s).unwrap();
    let grad = g.grad(x).unwrap();
    assert_eq!(grad.iter().sum::<f32>(), 4.0);
    assert_eq!(grad[36], 1.0);
}

#[test]
fn randomized_gradient_checks() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for report in run_suite(39, DEFAULT_STEP, &mut rng).unwrap() {
        assert!(
            report.max_relative_error < 1e-3,
            "{:?} {:?}: {}",
            report.op,
            report.shapes,
            report.max_relative_error
        );
    }
}

#[test]
fn transposed_conv_is_adjoint() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let (lhs, rhs) = adjoint_pair(&mut rng).unwrap();
        assert!((lhs - rhs).abs() <= 1e-4 * lhs.abs().max(rhs.abs()).max(1.0), "{lhs} vs {rhs}");
    }
}

#[test]
fn backward_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::from_fn(&[2, 2, 6, 6], |_| rand::Rng::gen_range(&mut rng, -1.0f32..1.0));
        let w = Tensor::from_fn(&[3, 2, 4, 4], |_| rand::Rng::gen_range(&mut rng, -1.0f32..1.0));
        let mut g = Graph::new();
        let xv = g.constant(x);
        let wv = g.param(w);
        let y = g.conv2d(xv, wv, None, 2, 1).unwrap();
        let y = g.leaky_relu(y, 0.2);
        let y = g.square(y);
        let l = g.mean(y);
        g.backward(l).unwrap();
        g.grad(wv).unwrap().to_vec()
    };
    assert_eq!(run(), run());
}
