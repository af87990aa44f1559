//! Minimal CPU neural-network substrate used by the poisoning toolkit.
//!
//! Everything is `f64`, single-threaded, and deterministic: the same seed and
//! the same call sequence produce bit-identical results. Feature maps are laid
//! out NHWC; the input stage consumes images in `[0,1]` pixel space and every
//! layer implements an explicit backward pass, so gradients with respect to
//! the *input* are first-class (perturbation crafting and attacks need them
//! as much as parameter gradients).

pub mod blocks;
pub mod conv;
pub mod head;
pub mod init;
pub mod layer;
pub mod loss;
pub mod net;
pub mod norm;
pub mod optim;
pub mod pool;

pub use blocks::{BasicBlock, DenseBlock, Transition};
pub use conv::{conv1x1, conv3x3, Conv2d};
pub use head::{DenseOp, FlattenKind, Head, Linear};
pub use layer::{Layer, Mode, Param, Relu};
pub use loss::{accuracy, argmax_row, one_hot, softmax_cross_entropy, Targets};
pub use net::Network;
pub use norm::{BatchNorm2d, Normalize};
pub use optim::{LrSchedule, Sgd};
pub use pool::{AvgPool2, MaxPool2};
