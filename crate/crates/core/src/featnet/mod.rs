//! Correspondence embedding network with a hand-written backward pass.

mod attention;
mod checkpoint;
mod net;
mod params;

pub use attention::{attention_backward, attention_forward, AttentionTape, SparseBeta};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use net::{backward, embed, forward, forward_input, input_matrix, Gradients, Tape, NORM_EPS};
pub use params::{BlockParams, NetConfig, NetParams, INPUT_DIM};
