//! Minimal dense-tensor core with reverse-mode automatic differentiation.
//!
//! Values are `f64` throughout. A [`Tape`] records each forward op; calling
//! [`Tape::backward`] accumulates gradients into a [`ParamStore`], and
//! [`AdamState::step`] applies them.
//!
//! ```
//! use mogen_tensor::{ParamStore, Tape, Tensor};
//!
//! let mut store = ParamStore::new();
//! let x = store.add("x", Tensor::scalar(3.0)).unwrap();
//! let mut tape = Tape::new();
//! let xv = tape.param(&store, x);
//! let y = tape.square(xv).unwrap();
//! tape.backward(y, &mut store).unwrap();
//! assert_eq!(store.get(x).grad.item(), 6.0);
//! ```

pub mod adam;
pub mod error;
pub mod gradcheck;
pub mod nn;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::AdamState;
pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{Grads, Tape, Var};
pub use tensor::Tensor;
