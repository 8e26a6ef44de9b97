//! Dense and convolutional autoencoders with hand-written backpropagation.
//!
//! Batches are row-major with one sample per row; image features are laid
//! out channel-major (`[C, H, W]`).

mod adam;
mod layers;
mod loss;
mod network;
mod train;

pub use adam::Adam;
pub use layers::{Activation, ConvShape, LayerSpec};
pub use loss::{mse_loss, sinkhorn_batch_loss, BatchSinkhorn};
pub use network::{
    build_conv_autoencoder, build_ff_autoencoder, conv_autoencoder_specs, ff_autoencoder_specs, ArchOptions, Autoencoder, Batch,
    Gradients, Layer, Network, Tape,
};
pub use train::{train_autoencoder, train_decoder, History, LossKind, TrainConfig};
