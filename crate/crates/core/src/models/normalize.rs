//! Input normalisation for both networks.
//!
//! The networks only accept these wrapper types, so an unnormalised frame
//! cannot reach a forward pass.

use crate::grid::{Grid, Image};
use crate::nn::Tensor;

/// Classifier normalisation constants: the mean of the three RGB channel
/// statistics used for ImageNet-style inputs.
pub const CLASSIFIER_MEAN: f32 = 0.449;
pub const CLASSIFIER_STD: f32 = 0.226;

/// Variance guard for per-image standardisation.
pub const STANDARDIZE_EPS: f64 = 1e-8;

/// Zero-mean, unit-variance frame for the segmenter.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmenterInput(Grid<f32>);

/// Resized and channel-normalised frame for the classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierInput(Grid<f32>);

/// Which network a frame is being prepared for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormalizePath {
    Segmenter,
    Classifier { size: usize },
}

/// Output of [`normalize_frame`].
#[derive(Clone, Debug, PartialEq)]
pub enum Normalized {
    Segmenter(SegmenterInput),
    Classifier(ClassifierInput),
}

pub fn normalize_frame(image: &Image, path: NormalizePath) -> Normalized {
    match path {
        NormalizePath::Segmenter => Normalized::Segmenter(SegmenterInput::new(image)),
        NormalizePath::Classifier { size } => Normalized::Classifier(ClassifierInput::new(image, size)),
    }
}

impl SegmenterInput {
    pub fn new(image: &Image) -> Self {
        let n = image.len().max(1) as f64;
        let mean = image.as_slice().iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = image.as_slice().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let inv = 1.0 / (var + STANDARDIZE_EPS).sqrt();
        Self(image.map(|&v| ((v as f64 - mean) * inv) as f32))
    }

    pub fn grid(&self) -> &Grid<f32> {
        &self.0
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(1, 1, self.0.height(), self.0.width(), self.0.as_slice().to_vec())
    }
}

impl ClassifierInput {
    pub fn new(image: &Image, size: usize) -> Self {
        Self::with_constants(image, size, CLASSIFIER_MEAN, CLASSIFIER_STD)
    }

    pub fn with_constants(image: &Image, size: usize, mean: f32, std: f32) -> Self {
        let resized = image.resize_bilinear(size, size);
        Self(resized.map(|&v| (v - mean) / std))
    }

    pub fn grid(&self) -> &Grid<f32> {
        &self.0
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(1, 1, self.0.height(), self.0.width(), self.0.as_slice().to_vec())
    }
}
