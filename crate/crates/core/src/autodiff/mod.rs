//! Reverse-mode differentiation over real tensors, plus the optimizer.

mod optim;
mod params;
mod tape;
mod tensor;

pub use optim::{project_unit_moduli, RmsProp};
pub use params::{Constraint, Gradients, ParamId, ParamStore, Parameter};
pub(crate) use tape::softmax_in_place;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
