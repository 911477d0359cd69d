//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Every trainable component in this crate is written against [`Var`]
//! handles recorded on a [`Tape`]. A tape lives for one forward/backward
//! pass and is confined to the thread that created it; independent tapes
//! can run in parallel.
//!
//! ```
//! use mjae_core::autodiff::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.leaf(Tensor::vector(vec![1.0, -2.0, 3.0]));
//! let loss = x.square().sum();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.wrt(x).data(), &[2.0, -4.0, 6.0]);
//! ```

mod tape;
mod tensor;

pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,
}
