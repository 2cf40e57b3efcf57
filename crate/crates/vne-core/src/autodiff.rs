//! Minimal dense-tensor engine with reverse-mode differentiation: 64-bit
//! floats, a tape rebuilt per forward pass, named parameter sets with Adam
//! moments, a length-prefixed binary checkpoint format, and a central
//! finite-difference gradient checker.

pub mod params;
pub mod tape;
pub mod tensor;

pub use params::{AdamConfig, ParameterSet};
pub use tape::{Tape, TensorId};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: lhs {lhs:?}, rhs {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("{op}: {detail}")]
    BadInput { op: &'static str, detail: String },
    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

/// Central finite-difference check of reverse-mode gradients.
///
/// `build` constructs a scalar loss from the leaf ids it is given; the same
/// construction runs once for the analytic pass and twice per perturbed
/// element. Relative error uses a unit floor so near-zero gradients are
/// compared absolutely.
pub fn grad_check<F>(build: F, inputs: &[Tensor], eps: f64) -> f64
where
    F: Fn(&mut Tape, &[TensorId]) -> TensorId,
{
    let forward = |tensors: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let ids: Vec<TensorId> = tensors.iter().map(|t| tape.input(t.clone())).collect();
        let loss = build(&mut tape, &ids);
        let v = tape.value(loss);
        assert!(v.numel() == 1, "grad_check requires a scalar loss, got {:?}", v.shape());
        v.data()[0]
    };

    let mut tape = Tape::new();
    let ids: Vec<TensorId> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let loss = build(&mut tape, &ids);
    let grads = tape.backward(loss);

    let mut max_err: f64 = 0.0;
    for (which, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(ids[which])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(input.shape().to_vec()));
        for elem in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[which].data_mut()[elem] += eps;
            let mut minus = inputs.to_vec();
            minus[which].data_mut()[elem] -= eps;
            let numeric = (forward(&plus) - forward(&minus)) / (2.0 * eps);
            let a = analytic.data()[elem];
            let denom = a.abs().max(numeric.abs()).max(1.0);
            max_err = max_err.max((a - numeric).abs() / denom);
        }
    }
    max_err
}
