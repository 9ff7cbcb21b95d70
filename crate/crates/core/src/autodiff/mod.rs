//! Tanh networks and the reverse-mode machinery used to differentiate
//! losses that contain first input-derivatives of networks.

pub mod gradcheck;
mod mlp;
mod tape;

pub use mlp::{
    loss_gradient, pinned_line, pinned_line_vars, FlatParams, GradVector, MlpParams, NetVars,
    PinnedLine,
};
pub use tape::{Gradients, Mat, Tape, Var};
