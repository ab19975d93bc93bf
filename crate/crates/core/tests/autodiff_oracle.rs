mod common;

use common::check_op;
use macam_core::rng;
use macam_core::tensor::{Tape, Tensor};
use macam_core::Error;

const INSTANCES: u64 = 20;
const GRAD_RTOL: f64 = 1e-4;

fn run(name: &str) {
    for i in 0..INSTANCES {
        let mut r = rng::seeded(rng::derive_seed(0xad, i));
        let check = check_op(name, &mut r);
        assert!(
            check.forward_err < 1e-5,
            "{name} #{i}: forward differs from reference by {:e}",
            check.forward_err
        );
        assert!(
            check.grad_err < GRAD_RTOL,
            "{name} #{i}: gradient relative error {:e}",
            check.grad_err
        );
    }
}

#[test]
fn add() {
    run("add");
}

#[test]
fn mul() {
    run("mul");
}

#[test]
fn scale() {
    run("scale");
}

#[test]
fn sum() {
    run("sum");
}

#[test]
fn reshape() {
    run("reshape");
}

#[test]
fn flatten() {
    run("flatten");
}

#[test]
fn matmul() {
    run("matmul");
}

#[test]
fn bias_add() {
    run("bias_add");
}

#[test]
fn conv2d() {
    run("conv2d");
}

#[test]
fn conv2d_padded() {
    run("conv2d_pad");
}

#[test]
fn avgpool2d() {
    run("avgpool2d");
}

#[test]
fn softmax_cross_entropy() {
    run("softmax_cross_entropy");
}

#[test]
fn gumbel_softmax() {
    run("gumbel_softmax");
}

#[test]
fn mixed_activation_path_weights() {
    run("mixed_act_weights");
}

#[test]
fn soft_energy() {
    run("soft_energy");
}

#[test]
fn energy_penalty() {
    run("energy_penalty");
}

#[test]
fn fan_out_accumulates() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::from_vec(vec![1.0, -2.0, 3.0]), true);
    let y = t.mul(x, x).unwrap();
    let z = t.add(y, x).unwrap();
    let s = t.sum(z);
    t.backward(s).unwrap();
    assert_eq!(t.grad(x).unwrap().data(), &[3.0, -3.0, 7.0]);
}

#[test]
fn constants_get_no_gradient() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::from_vec(vec![1.0, 2.0]), true);
    let c = t.constant(Tensor::from_vec(vec![5.0, 6.0]));
    let y = t.mul(x, c).unwrap();
    let s = t.sum(y);
    t.backward(s).unwrap();
    assert!(t.grad(c).is_none());
    assert_eq!(t.grad(x).unwrap().data(), &[5.0, 6.0]);
}

#[test]
fn backward_rejects_reuse_and_non_scalar_loss() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::from_vec(vec![1.0, 2.0]), true);
    assert!(matches!(t.backward(x), Err(Error::NonScalarLoss(_))));
    let s = t.sum(x);
    t.backward(s).unwrap();
    assert!(matches!(t.backward(s), Err(Error::BackwardTwice)));
}

#[test]
fn shape_errors_are_reported() {
    let mut t = Tape::new();
    let a = t.leaf(Tensor::zeros(&[2, 3]), true);
    let b = t.leaf(Tensor::zeros(&[3, 2]), true);
    assert!(matches!(t.add(a, b), Err(Error::ShapeMismatch { op: "add", .. })));
    assert!(t.matmul(a, a).is_err());
    assert!(t.matmul(a, b).is_ok());
}
