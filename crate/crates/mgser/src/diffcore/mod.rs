//! Minimal differentiable dense-tensor compute layer: forward ops,
//! reverse-mode gradients, and a finite-difference verifier.

mod check;
mod ops;
mod tensor;
mod var;

pub use check::{backward_and_check, GradCheck};
pub use ops::{
    add, add_key_mask, add_many, affine, concat, cross_entropy, dropout, layer_mix, layer_norm,
    masked_mean, matmul_nn, matmul_nt, mean_pair, relu, scale, slice_cols, softmax, stack_rows,
    Mode, MASK_BIAS,
};
pub use tensor::{Mask, Scalar, Tensor};
pub use var::{Param, ParamStore, Var};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("dimension error in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: String,
        expected: String,
        got: String,
    },
    #[error("empty sequence in {context}: at least one unmasked position required")]
    EmptySequence { context: String },
    #[error("dropout probability {0} outside [0, 1)")]
    InvalidProbability(f64),
    #[error("target label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("backward requires a scalar output, got shape {shape:?}")]
    NonScalarOutput { shape: Vec<usize> },
    #[error("degenerate layer weights: |sum| = {sum:e} below 1e-8")]
    DegenerateWeights { sum: f64 },
}
