//! Dense networks with hand-written reverse mode.

mod checkpoint;
mod mlp;
mod optim;

pub use checkpoint::Checkpoint;
pub use mlp::{Backward, Dense, ForwardCache, Gradients, Mlp, MlpSpec, OutputActivation};
pub use optim::{OptimizerKind, OptimizerState};
