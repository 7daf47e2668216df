//! Network architectures: the residual encoder-decoder segmenter and the
//! grouped-residual frame classifier.

mod blocks;
mod checkpoint;
mod classifier;
mod segmenter;
mod normalize;

pub use blocks::{Bottleneck, ConvBn, ResBlock};
pub use checkpoint::{
    load_classifier, load_pretrained, load_segmenter, param_checksum, read_meta, save_classifier, save_segmenter,
    CheckpointMeta, ModelKind, ParamEntry, PARAMS_FILE, SIDECAR_FILE,
};
pub use classifier::{build_classifier, Classifier, ClassifierSpec, StageSpec};
pub use normalize::{
    normalize_frame, ClassifierInput, NormalizePath, Normalized, SegmenterInput, CLASSIFIER_MEAN, CLASSIFIER_STD,
};
pub use segmenter::{build_segmenter, probability, SegNetSpec, Segmenter, Upsampling};
