//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! ```
//! use llens::autodiff::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.param(Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap());
//! let loss = x.square().unwrap().sum().unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
//! ```

mod gradcheck;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{gradient_check, max_relative_error};
pub use optim::{Adam, AdamConfig, LrDecay, Optimizer, Sgd};
pub use params::{Bound, ParamGrads, ParamSet};
pub use tape::{concat, Gradients, NodeId, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::{sigmoid, softplus};
