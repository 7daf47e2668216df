use rand::Rng;
use rand_distr::{Distribution, Normal};

/// A named parameter tensor with its gradient accumulator.
///
/// Non-trainable entries (batch-norm running statistics) live in the same list
/// so that checkpoints and checksums cover the full model state.
#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
    pub trainable: bool,
}

impl Param {
    pub fn new(name: impl Into<String>, shape: &[usize], value: Vec<f32>, trainable: bool) -> Self {
        let len: usize = shape.iter().product();
        assert_eq!(value.len(), len);
        let grad = if trainable { vec![0.0; len] } else { Vec::new() };
        Self { name: name.into(), shape: shape.to_vec(), value, grad, trainable }
    }

    pub fn filled(name: impl Into<String>, shape: &[usize], fill: f32, trainable: bool) -> Self {
        let len: usize = shape.iter().product();
        Self::new(name, shape, vec![fill; len], trainable)
    }

    /// He-normal initialisation for weights feeding a ReLU.
    pub fn kaiming<R: Rng + ?Sized>(name: impl Into<String>, shape: &[usize], fan_in: usize, rng: &mut R) -> Self {
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let len: usize = shape.iter().product();
        let value = (0..len).map(|_| normal.sample(rng) as f32).collect();
        Self::new(name, shape, value, true)
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Anything that owns parameters, visited in a fixed order.
pub trait Module {
    fn visit(&self, f: &mut dyn FnMut(&Param));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param));

    fn zero_grad(&mut self) {
        self.visit_mut(&mut |p| p.zero_grad());
    }

    fn num_trainable(&self) -> usize {
        let mut total = 0;
        self.visit(&mut |p| {
            if p.trainable {
                total += p.len();
            }
        });
        total
    }
}
