use rand::Rng;

use crate::nn::{BatchNorm2d, Conv2d, Module, Param, Relu, Tensor};

/// Convolution followed by batch normalisation (no bias on the conv).
#[derive(Clone, Debug)]
pub struct ConvBn {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            conv: Conv2d::new(&format!("{name}.conv"), cin, cout, kernel, stride, padding, groups, false, rng),
            bn: BatchNorm2d::new(&format!("{name}.bn"), cout),
        }
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let h = self.conv.forward(x, train);
        self.bn.forward(&h, train)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let d = self.bn.backward(dy);
        self.conv.backward(&d)
    }
}

impl Module for ConvBn {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.conv.visit(f);
        self.bn.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.conv.visit_mut(f);
        self.bn.visit_mut(f);
    }
}

/// Two 3x3 convolutions with an identity (or 1x1 projection) shortcut.
///
/// Post-activation: `relu(bn(conv(relu(bn(conv(x))))) + s(x))`.
/// Pre-activation:  `conv(relu(bn(conv(relu(bn(x)))))) + s(x)`.
#[derive(Clone, Debug)]
pub struct ResBlock {
    preactivation: bool,
    conv1: Conv2d,
    bn1: BatchNorm2d,
    relu1: Relu,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    relu2: Relu,
    projection: Option<Conv2d>,
    projection_bn: Option<BatchNorm2d>,
}

impl ResBlock {
    pub fn new<R: Rng + ?Sized>(name: &str, cin: usize, cout: usize, preactivation: bool, rng: &mut R) -> Self {
        let conv1 = Conv2d::new(&format!("{name}.conv1"), cin, cout, 3, 1, 1, 1, false, rng);
        let conv2 = Conv2d::new(&format!("{name}.conv2"), cout, cout, 3, 1, 1, 1, false, rng);
        let bn1 = BatchNorm2d::new(&format!("{name}.bn1"), if preactivation { cin } else { cout });
        let bn2 = BatchNorm2d::new(&format!("{name}.bn2"), cout);
        let projection =
            (cin != cout).then(|| Conv2d::new(&format!("{name}.proj"), cin, cout, 1, 1, 0, 1, false, rng));
        let projection_bn = (cin != cout && !preactivation).then(|| BatchNorm2d::new(&format!("{name}.proj_bn"), cout));
        Self {
            preactivation,
            conv1,
            bn1,
            relu1: Relu::default(),
            conv2,
            bn2,
            relu2: Relu::default(),
            projection,
            projection_bn,
        }
    }

    fn shortcut(&mut self, x: &Tensor, train: bool) -> Tensor {
        match (&mut self.projection, &mut self.projection_bn) {
            (Some(p), Some(bn)) => {
                let h = p.forward(x, train);
                bn.forward(&h, train)
            }
            (Some(p), None) => p.forward(x, train),
            _ => x.clone(),
        }
    }

    fn shortcut_backward(&mut self, d: &Tensor) -> Tensor {
        match (&mut self.projection, &mut self.projection_bn) {
            (Some(p), Some(bn)) => {
                let g = bn.backward(d);
                p.backward(&g)
            }
            (Some(p), None) => p.backward(d),
            _ => d.clone(),
        }
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let mut s = self.shortcut(x, train);
        if self.preactivation {
            let a = self.bn1.forward(x, train);
            let a = self.relu1.forward(&a, train);
            let h = self.conv1.forward(&a, train);
            let a = self.bn2.forward(&h, train);
            let a = self.relu2.forward(&a, train);
            let h = self.conv2.forward(&a, train);
            s.add_assign(&h);
            s
        } else {
            let h = self.conv1.forward(x, train);
            let h = self.bn1.forward(&h, train);
            let h = self.relu1.forward(&h, train);
            let h = self.conv2.forward(&h, train);
            let h = self.bn2.forward(&h, train);
            s.add_assign(&h);
            self.relu2.forward(&s, train)
        }
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        if self.preactivation {
            let d = self.conv2.backward(dy);
            let d = self.relu2.backward(&d);
            let d = self.bn2.backward(&d);
            let d = self.conv1.backward(&d);
            let d = self.relu1.backward(&d);
            let mut dx = self.bn1.backward(&d);
            dx.add_assign(&self.shortcut_backward(dy));
            dx
        } else {
            let d = self.relu2.backward(dy);
            let ds = self.shortcut_backward(&d);
            let d = self.bn2.backward(&d);
            let d = self.conv2.backward(&d);
            let d = self.relu1.backward(&d);
            let d = self.bn1.backward(&d);
            let mut dx = self.conv1.backward(&d);
            dx.add_assign(&ds);
            dx
        }
    }
}

impl Module for ResBlock {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.conv1.visit(f);
        self.bn1.visit(f);
        self.conv2.visit(f);
        self.bn2.visit(f);
        if let Some(p) = &self.projection {
            p.visit(f);
        }
        if let Some(bn) = &self.projection_bn {
            bn.visit(f);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.conv1.visit_mut(f);
        self.bn1.visit_mut(f);
        self.conv2.visit_mut(f);
        self.bn2.visit_mut(f);
        if let Some(p) = &mut self.projection {
            p.visit_mut(f);
        }
        if let Some(bn) = &mut self.projection_bn {
            bn.visit_mut(f);
        }
    }
}

/// Grouped-convolution bottleneck (1x1 reduce, grouped 3x3, 1x1 expand).
#[derive(Clone, Debug)]
pub struct Bottleneck {
    reduce: ConvBn,
    relu1: Relu,
    grouped: ConvBn,
    relu2: Relu,
    expand: ConvBn,
    projection: Option<ConvBn>,
    relu_out: Relu,
}

impl Bottleneck {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        cin: usize,
        width: usize,
        cout: usize,
        cardinality: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let projection = (cin != cout || stride != 1)
            .then(|| ConvBn::new(&format!("{name}.proj"), cin, cout, 1, stride, 0, 1, rng));
        Self {
            reduce: ConvBn::new(&format!("{name}.reduce"), cin, width, 1, 1, 0, 1, rng),
            relu1: Relu::default(),
            grouped: ConvBn::new(&format!("{name}.grouped"), width, width, 3, stride, 1, cardinality, rng),
            relu2: Relu::default(),
            expand: ConvBn::new(&format!("{name}.expand"), width, cout, 1, 1, 0, 1, rng),
            projection,
            relu_out: Relu::default(),
        }
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let h = self.reduce.forward(x, train);
        let h = self.relu1.forward(&h, train);
        let h = self.grouped.forward(&h, train);
        let h = self.relu2.forward(&h, train);
        let mut h = self.expand.forward(&h, train);
        match &mut self.projection {
            Some(p) => h.add_assign(&p.forward(x, train)),
            None => h.add_assign(x),
        }
        self.relu_out.forward(&h, train)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let d = self.relu_out.backward(dy);
        let ds = match &mut self.projection {
            Some(p) => p.backward(&d),
            None => d.clone(),
        };
        let d = self.expand.backward(&d);
        let d = self.relu2.backward(&d);
        let d = self.grouped.backward(&d);
        let d = self.relu1.backward(&d);
        let mut dx = self.reduce.backward(&d);
        dx.add_assign(&ds);
        dx
    }
}

impl Module for Bottleneck {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.reduce.visit(f);
        self.grouped.visit(f);
        self.expand.visit(f);
        if let Some(p) = &self.projection {
            p.visit(f);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.reduce.visit_mut(f);
        self.grouped.visit_mut(f);
        self.expand.visit_mut(f);
        if let Some(p) = &mut self.projection {
            p.visit_mut(f);
        }
    }
}
