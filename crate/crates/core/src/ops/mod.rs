//! Differentiable primitive operations over `Tensor`, plus the dihedral
//! data transforms used by augmentation and self-ensembling.

mod conv;
pub(crate) mod kernels;
mod elementwise;
mod layout;
mod reduce;
mod resize;

pub use conv::conv2d;
pub use elementwise::{
    abs, add, depthwise_conv1x1, leaky_relu, mul, mul_channelwise, relu, scale, sigmoid, sub,
};
pub use layout::{
    concat_channels, concat_channels_n, dihedral, dihedral_inverse, flip_h, flip_w, pixel_shuffle,
    pixel_unshuffle, rot90, slice_channels,
};
pub use reduce::{global_avg_pool, mean_all, sum_all};
pub use resize::{bicubic_resize, cubic_kernel};
