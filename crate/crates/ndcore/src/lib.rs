//! `ndcore`: dense `f64` matrices, a define-by-run reverse-mode tape, LSTM
//! layers, and the Adam optimizer with exponential-moving-average shadows.
//!
//! ```
//! use ndcore::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::scalar(3.0));
//! let y = tape.mul(x, x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.wrt(x).unwrap().item(), 6.0);
//! ```

pub mod error;
pub mod nn;
pub mod optim;
pub mod param;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use nn::{lstm_cell, softmax, BiLstm, BiLstmOutput, LstmCell};
pub use optim::{Adam, AdamConfig};
pub use param::{ParamId, ParamKind, ParamStore, Parameter};
pub use tape::{sigmoid, Gradients, Tape, Var};
pub use tensor::Tensor;
