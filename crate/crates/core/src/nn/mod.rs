//! From-scratch convolutional segmentation network.
//!
//! Tensors are `ndarray` arrays ([C, H, W] activations, [O, C, K, K]
//! kernels) in f32 or f64. Every forward op in [`ops`] has a matching
//! gradient checked against central finite differences.

pub mod loss;
pub mod model_io;
pub mod ops;
pub mod train;
pub mod unet;

pub use loss::weighted_bce;
pub use model_io::{load_model, save_model};
pub use train::{train, TrainConfig};
pub use unet::{unet_forward, write_mask_file, SegmentationMask, UNet, UNetConfig};
