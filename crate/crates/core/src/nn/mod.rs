//! Minimal neural-network toolkit: a reverse-mode tape, parameter storage,
//! convolution / recurrent / dense layers and the Adam optimiser.

mod batch;
mod layers;
mod optim;
mod params;
mod tape;

pub use batch::{accumulate_gradients, Forward};
pub use layers::{dropout, glorot, Conv1d, Dense, Lstm};
pub use optim::Adam;
pub use params::{Grads, ParamId, ParamStore, TensorRecord};
pub use tape::{sigmoid, Mat, Tape, Var};
