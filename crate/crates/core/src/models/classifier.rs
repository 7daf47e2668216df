use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::blocks::{Bottleneck, ConvBn};
use super::normalize::{ClassifierInput, CLASSIFIER_MEAN, CLASSIFIER_STD};
use crate::grid::Image;
use crate::error::{Error, Result};
use crate::nn::{global_avg_pool, global_avg_pool_backward, Linear, MaxPool2d, Module, Param, Relu, Tensor};

/// One stage of grouped bottleneck blocks. The first block of every stage
/// after the first downsamples by 2.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub blocks: usize,
    /// Channels inside the grouped 3x3 convolution.
    pub width: usize,
    pub out_channels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSpec {
    /// Frames are resized to `input_size x input_size`.
    pub input_size: usize,
    pub stem_channels: usize,
    pub cardinality: usize,
    pub stages: Vec<StageSpec>,
    pub norm_mean: f32,
    pub norm_std: f32,
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        Self::desk()
    }
}

impl ClassifierSpec {
    /// The 50-layer, 32x4d grouped-residual layout.
    pub fn full() -> Self {
        Self {
            input_size: 224,
            stem_channels: 64,
            cardinality: 32,
            stages: vec![
                StageSpec { blocks: 3, width: 128, out_channels: 256 },
                StageSpec { blocks: 4, width: 256, out_channels: 512 },
                StageSpec { blocks: 6, width: 512, out_channels: 1024 },
                StageSpec { blocks: 3, width: 1024, out_channels: 2048 },
            ],
            norm_mean: CLASSIFIER_MEAN,
            norm_std: CLASSIFIER_STD,
        }
    }

    /// Two-stage reduced variant for CPU-scale experiments.
    pub fn desk() -> Self {
        Self {
            input_size: 224,
            stem_channels: 16,
            cardinality: 8,
            stages: vec![
                StageSpec { blocks: 1, width: 32, out_channels: 64 },
                StageSpec { blocks: 1, width: 64, out_channels: 128 },
            ],
            norm_mean: CLASSIFIER_MEAN,
            norm_std: CLASSIFIER_STD,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size < 32 {
            return Err(Error::ModelSpec(format!("input_size {} < 32", self.input_size)));
        }
        if self.stem_channels == 0 || self.cardinality == 0 || self.stages.is_empty() {
            return Err(Error::ModelSpec("stem_channels, cardinality and stages must be non-empty".into()));
        }
        for (i, st) in self.stages.iter().enumerate() {
            if st.blocks == 0 || st.width == 0 || st.out_channels == 0 {
                return Err(Error::ModelSpec(format!("stage {i} has a zero dimension")));
            }
            if st.width % self.cardinality != 0 {
                return Err(Error::ModelSpec(format!(
                    "stage {i} width {} not divisible by cardinality {}",
                    st.width, self.cardinality
                )));
            }
        }
        if self.norm_std.is_nan() || self.norm_std <= 0.0 {
            return Err(Error::ModelSpec("norm_std must be positive".into()));
        }
        Ok(())
    }
}

/// Grouped-residual frame classifier producing one logit per frame.
#[derive(Clone, Debug)]
pub struct Classifier {
    spec: ClassifierSpec,
    seed: u64,
    stem: ConvBn,
    stem_relu: Relu,
    stem_pool: MaxPool2d,
    blocks: Vec<Bottleneck>,
    fc: Linear,
    pooled_hw: Option<(usize, usize)>,
}

/// Build a classifier with seeded random weights, optionally overwritten by a
/// pretrained checkpoint directory (see [`super::load_pretrained`]).
pub fn build_classifier(spec: &ClassifierSpec, seed: u64, pretrained: Option<&Path>) -> Result<Classifier> {
    let mut model = init_classifier(spec, seed)?;
    if let Some(dir) = pretrained {
        super::checkpoint::load_pretrained(&mut model, dir)?;
    }
    Ok(model)
}

fn init_classifier(spec: &ClassifierSpec, seed: u64) -> Result<Classifier> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stem = ConvBn::new("stem", 1, spec.stem_channels, 7, 2, 3, 1, &mut rng);
    let mut blocks = Vec::new();
    let mut cin = spec.stem_channels;
    for (si, st) in spec.stages.iter().enumerate() {
        for bi in 0..st.blocks {
            let stride = if si > 0 && bi == 0 { 2 } else { 1 };
            blocks.push(Bottleneck::new(
                &format!("stage{si}.block{bi}"),
                cin,
                st.width,
                st.out_channels,
                spec.cardinality,
                stride,
                &mut rng,
            ));
            cin = st.out_channels;
        }
    }
    let fc = Linear::new("fc", cin, 1, &mut rng);
    Ok(Classifier {
        spec: spec.clone(),
        seed,
        stem,
        stem_relu: Relu::default(),
        stem_pool: MaxPool2d::new(3, 2, 1),
        blocks,
        fc,
        pooled_hw: None,
    })
}

impl Classifier {
    pub fn spec(&self) -> &ClassifierSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Logits `[n, 1, 1, 1]`.
    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let h = self.stem.forward(x, train);
        let h = self.stem_relu.forward(&h, train);
        let mut h = self.stem_pool.forward(&h, train);
        for b in &mut self.blocks {
            h = b.forward(&h, train);
        }
        self.pooled_hw = Some((h.h, h.w));
        let g = global_avg_pool(&h);
        self.fc.forward(&g, train)
    }

    pub fn backward(&mut self, dlogits: &Tensor) {
        let (h, w) = self.pooled_hw.expect("classifier backward without forward");
        let d = self.fc.backward(dlogits);
        let mut d = global_avg_pool_backward(&d, h, w);
        for b in self.blocks.iter_mut().rev() {
            d = b.backward(&d);
        }
        let d = self.stem_pool.backward(&d);
        let d = self.stem_relu.backward(&d);
        let _ = self.stem.backward(&d);
    }

    pub fn logits(&mut self, inputs: &[ClassifierInput]) -> Result<Vec<f32>> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        for i in inputs {
            let (h, w) = i.grid().shape();
            if h != self.spec.input_size || w != self.spec.input_size {
                return Err(Error::ShapeMismatch {
                    expected: (self.spec.input_size, self.spec.input_size),
                    found: (h, w),
                });
            }
        }
        let x = Tensor::stack(&inputs.iter().map(ClassifierInput::to_tensor).collect::<Vec<_>>());
        Ok(self.forward(&x, false).data)
    }

    pub fn logit(&mut self, input: &ClassifierInput) -> Result<f32> {
        Ok(self.logits(std::slice::from_ref(input))?[0])
    }

    pub fn input_for(&self, image: &Image) -> ClassifierInput {
        ClassifierInput::with_constants(image, self.spec.input_size, self.spec.norm_mean, self.spec.norm_std)
    }
}

impl Module for Classifier {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.stem.visit(f);
        for b in &self.blocks {
            b.visit(f);
        }
        self.fc.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.stem.visit_mut(f);
        for b in &mut self.blocks {
            b.visit_mut(f);
        }
        self.fc.visit_mut(f);
    }
}
