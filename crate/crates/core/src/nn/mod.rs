//! Minimal CPU training engine: NCHW tensors, layers with explicit backward
//! passes, and Adam. Everything runs single-threaded in a fixed order, so a
//! given seed reproduces parameters bit-for-bit.

mod conv;
mod gemm;
mod layers;
mod norm;
mod optim;
mod param;
mod tensor;

pub use conv::Conv2d;
pub use gemm::sgemm;
pub use layers::{
    global_avg_pool, global_avg_pool_backward, upsample_nearest2, upsample_nearest2_backward,
    ConvTranspose2x2, Linear, MaxPool2d, Relu,
};
pub use norm::BatchNorm2d;
pub use optim::{exponential_lr, Adam};
pub use param::{Module, Param};
pub use tensor::Tensor;

/// Numerically safe logistic function.
pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
