//! Gradients, optimizer and the toy training loop.

mod backward;
pub mod gradcheck;
mod optim;
mod toy;

pub use backward::{
    backward_from_logits, block_backward, block_forward_taped, bottleneck_backward, bottleneck_forward_taped,
    dense_backward, layer_norm_backward, layer_norm_forward_taped, network_backward, network_forward_taped,
    softmax_cross_entropy, BlockTape, BottleneckTape, GradientSet, NetworkTape, NormTape,
};
pub use gradcheck::{run_gradcheck, GradCheckEntry, GradCheckReport};
pub use optim::{lr_at, sgd_step, TrainConfig};
pub use toy::{evaluate, separable_toy, train_toy, Dataset, EpochRecord};
