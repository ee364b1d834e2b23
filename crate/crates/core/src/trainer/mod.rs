//! A small metric-learning encoder trained by hand-written backprop on
//! synthetic clustered data, with an annealed FLOPs or ℓ1 penalty on the
//! embeddings.

mod config;
mod data;
mod loss;
mod model;
mod train;

pub use config::{anneal_lambda, OutputActivation, RegularizerKind, RunConfig};
pub use data::{DatasetConfig, Split, SyntheticDataset};
pub use loss::{
    batch_triplet_loss, flops_reg_grad, l1_reg_grad, mine_triplets, triplet_loss, TripletOutput,
};
pub use model::{
    relu, relu_grad, sthresh, sthresh_grad, sthresh_vec, Dense, EncoderModel, ForwardPass,
    Gradients, STHRESH_KNEE,
};
pub use train::{evaluate, train, LogRow, TrainingLog};
