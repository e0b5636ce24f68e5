//! f64 tensors, a record-and-replay autodiff tape, optimizers, and the
//! seeded random source. Everything downstream builds on these.

pub mod gradcheck;
pub mod optim;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use optim::{clip_weights, OptKind, OptimizerState};
pub use rng::SeededRng;
pub use tape::{Gradients, NodeId, Tape, LOG_FLOOR};
pub use tensor::Tensor;
