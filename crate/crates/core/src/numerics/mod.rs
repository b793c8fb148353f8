//! Dense `f64` tensors, a reverse-mode tape, finite-difference checking, and
//! the Adam optimizer.

mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport, FD_STEP};
pub use optim::{Adam, AdamConfig};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{argmax, kl_divergence, Tensor, PROB_FLOOR};

use rand::Rng;

/// Glorot-uniform initialization for a tensor of the given shape. Vectors use
/// fan-in 1 and fan-out equal to their length.
pub fn glorot<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let (fan_in, fan_out) = match shape {
        [n] => (1, *n),
        [r, c] => (*r, *c),
        _ => panic!("glorot: unsupported shape {shape:?}"),
    };
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("glorot shape")
}
