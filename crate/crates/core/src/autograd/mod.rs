//! Dense f64 tensors with define-by-run reverse-mode differentiation.
//!
//! ```
//! use singgraph::autograd::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.param(Tensor::from_vec(vec![1.0, -2.0, 3.0]));
//! let loss = x.mul(x).unwrap().sum_all().unwrap();
//! tape.backward(loss).unwrap();
//! assert_eq!(x.grad().unwrap().data(), &[2.0, -4.0, 6.0]);
//! ```

mod adam;
mod gradcheck;
mod ops;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{
    grad_check, grad_check_seeded, relative_error, GradCheckReport, FULL_CHECK_LIMIT,
};
pub use ops::{concat, BatchNormMode, ChannelStats, BN_EPS};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
