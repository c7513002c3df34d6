//! Convolutional and dense building blocks, losses, initialisation and Adam.

pub mod activation;
pub mod adam;
pub mod conv;
pub mod dense;
pub mod dropout;
pub mod init;
pub mod loss;
pub mod pool;

pub use activation::{activation, relu, sigmoid, Activation};
pub use adam::{AdamConfig, AdamState};
pub use conv::{conv2d, conv2d_values, ConvGeometry, ConvSpec, Padding};
pub use dense::dense;
pub use dropout::dropout;
pub use init::{xavier_init, xavier_uniform, Fans};
pub use loss::{check_one_hot, one_hot, softmax_cross_entropy};
pub use pool::maxpool2d;
