use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::blocks::ResBlock;
use super::normalize::SegmenterInput;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::nn::{
    sigmoid, upsample_nearest2, upsample_nearest2_backward, Conv2d, ConvTranspose2x2, MaxPool2d, Module, Param,
    Tensor,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Upsampling {
    #[default]
    TransposedConv,
    NearestConv,
}

/// Residual encoder-decoder with one skip connection per resolution level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegNetSpec {
    /// Resolution levels (`depth - 1` downsamplings).
    pub depth: usize,
    pub base_channels: usize,
    pub upsampling: Upsampling,
    pub preactivation: bool,
}

impl Default for SegNetSpec {
    fn default() -> Self {
        Self { depth: 5, base_channels: 16, upsampling: Upsampling::TransposedConv, preactivation: false }
    }
}

impl SegNetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::ModelSpec(format!("depth must be >= 2, got {}", self.depth)));
        }
        if self.base_channels < 1 {
            return Err(Error::ModelSpec("base_channels must be >= 1".into()));
        }
        if self.depth > 12 {
            return Err(Error::ModelSpec(format!("depth {} is unreasonably deep", self.depth)));
        }
        Ok(())
    }

    /// Spatial sizes must be multiples of this.
    pub fn divisor(&self) -> usize {
        1 << (self.depth - 1)
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn check_input(&self, height: usize, width: usize) -> Result<()> {
        let d = self.divisor();
        if height == 0 || width == 0 || !height.is_multiple_of(d) || !width.is_multiple_of(d) {
            return Err(Error::Divisibility { height, width, divisor: d });
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
enum Up {
    Transposed(ConvTranspose2x2),
    Nearest(Conv2d),
}

#[derive(Clone, Debug)]
pub struct Segmenter {
    spec: SegNetSpec,
    seed: u64,
    encoders: Vec<ResBlock>,
    pools: Vec<MaxPool2d>,
    ups: Vec<Up>,
    decoders: Vec<ResBlock>,
    head: Conv2d,
}

/// Build a segmenter with deterministic initialisation.
pub fn build_segmenter(spec: &SegNetSpec, seed: u64) -> Result<Segmenter> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = spec.depth;
    let mut encoders = Vec::with_capacity(depth);
    let mut cin = 1;
    for level in 0..depth {
        let c = spec.channels(level);
        encoders.push(ResBlock::new(&format!("enc{level}"), cin, c, spec.preactivation, &mut rng));
        cin = c;
    }
    let pools = (0..depth - 1).map(|_| MaxPool2d::new(2, 2, 0)).collect();
    let mut ups = Vec::with_capacity(depth - 1);
    let mut decoders = Vec::with_capacity(depth - 1);
    for level in 0..depth - 1 {
        let (c, c_below) = (spec.channels(level), spec.channels(level + 1));
        ups.push(match spec.upsampling {
            Upsampling::TransposedConv => {
                Up::Transposed(ConvTranspose2x2::new(&format!("up{level}"), c_below, c, &mut rng))
            }
            Upsampling::NearestConv => {
                Up::Nearest(Conv2d::new(&format!("up{level}"), c_below, c, 3, 1, 1, 1, true, &mut rng))
            }
        });
        decoders.push(ResBlock::new(&format!("dec{level}"), 2 * c, c, spec.preactivation, &mut rng));
    }
    let head = Conv2d::new("head", spec.base_channels, 1, 1, 1, 0, 1, true, &mut rng);
    Ok(Segmenter { spec: spec.clone(), seed, encoders, pools, ups, decoders, head })
}

impl Segmenter {
    pub fn spec(&self) -> &SegNetSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Per-pixel logits `[n, 1, h, w]`.
    pub fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        if x.c != 1 {
            return Err(Error::ModelSpec(format!("segmenter expects 1 input channel, got {}", x.c)));
        }
        self.spec.check_input(x.h, x.w)?;
        let depth = self.spec.depth;
        let mut skips = Vec::with_capacity(depth - 1);
        let mut h = x.clone();
        for level in 0..depth {
            h = self.encoders[level].forward(&h, train);
            if level < depth - 1 {
                let pooled = self.pools[level].forward(&h, train);
                skips.push(std::mem::replace(&mut h, pooled));
            }
        }
        for level in (0..depth - 1).rev() {
            let u = match &mut self.ups[level] {
                Up::Transposed(t) => t.forward(&h, train),
                Up::Nearest(c) => c.forward(&upsample_nearest2(&h), train),
            };
            let cat = Tensor::concat_channels(&u, &skips[level]);
            h = self.decoders[level].forward(&cat, train);
        }
        Ok(self.head.forward(&h, train))
    }

    /// Back-propagate `d loss / d logits`; parameter gradients accumulate.
    pub fn backward(&mut self, dlogits: &Tensor) {
        let depth = self.spec.depth;
        let mut d = self.head.backward(dlogits);
        let mut dskips = Vec::with_capacity(depth - 1);
        for level in 0..depth - 1 {
            d = self.decoders[level].backward(&d);
            let (du, dskip) = d.split_channels(self.spec.channels(level));
            dskips.push(dskip);
            d = match &mut self.ups[level] {
                Up::Transposed(t) => t.backward(&du),
                Up::Nearest(c) => upsample_nearest2_backward(&c.backward(&du)),
            };
        }
        for level in (0..depth).rev() {
            if level < depth - 1 {
                d = self.pools[level].backward(&d);
                d.add_assign(&dskips[level]);
            }
            d = self.encoders[level].backward(&d);
        }
    }

    /// Inference on a single standardised frame: per-pixel probabilities.
    pub fn predict(&mut self, input: &SegmenterInput) -> Result<Grid<f32>> {
        let maps = self.predict_batch(std::slice::from_ref(input))?;
        Ok(maps.into_iter().next().expect("one output per input"))
    }

    pub fn predict_batch(&mut self, inputs: &[SegmenterInput]) -> Result<Vec<Grid<f32>>> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let x = Tensor::stack(&inputs.iter().map(SegmenterInput::to_tensor).collect::<Vec<_>>());
        let logits = self.forward(&x, false)?;
        let (h, w) = (x.h, x.w);
        Ok(logits
            .data
            .chunks(h * w)
            .map(|c| Grid::from_vec(h, w, c.iter().map(|&v| probability(v)).collect()).expect("shape"))
            .collect())
    }
}

/// Sigmoid kept strictly inside (0, 1) so saturated logits stay valid probabilities.
pub fn probability(logit: f32) -> f32 {
    let eps = crate::losses::CLAMP_EPS as f32;
    sigmoid(logit).clamp(eps, 1.0 - eps)
}

impl Module for Segmenter {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        for e in &self.encoders {
            e.visit(f);
        }
        for (u, d) in self.ups.iter().zip(&self.decoders) {
            match u {
                Up::Transposed(t) => t.visit(f),
                Up::Nearest(c) => c.visit(f),
            }
            d.visit(f);
        }
        self.head.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for e in &mut self.encoders {
            e.visit_mut(f);
        }
        for (u, d) in self.ups.iter_mut().zip(&mut self.decoders) {
            match u {
                Up::Transposed(t) => t.visit_mut(f),
                Up::Nearest(c) => c.visit_mut(f),
            }
            d.visit_mut(f);
        }
        self.head.visit_mut(f);
    }
}
