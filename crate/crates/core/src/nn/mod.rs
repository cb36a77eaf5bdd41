//! A small differentiable-compute core: tape-based reverse mode over dense
//! matrices, parameter blocks, message-passing layers and optimizers.

mod gradcheck;
mod layers;
mod optim;
mod params;
mod tape;

pub use gradcheck::{check_gradients, GradCheck};
pub use layers::{
    split_by_ratio, top_ratio, Batch, EdgeScorer, EncoderConfig, GinEncoder, Linear, MaskSplit, Mlp, Pooling,
    INPUT_SCALE, POOL_EPS,
};
pub use optim::{Method, Optimizer};
pub use params::{Checkpoint, CheckpointError, Group, Param, ParamId, ParamStore, CHECKPOINT_VERSION};
pub use tape::{log_sum_exp, sigmoid, Anchor, ContrastSets, Grads, Tape, Var, NORM_EPS};
