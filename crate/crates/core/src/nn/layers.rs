use rand::Rng;

use super::gemm::sgemm;
use super::param::{Module, Param};
use super::tensor::Tensor;

#[derive(Clone, Debug, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let mut out = x.clone();
        out.data.iter_mut().for_each(|v| *v = v.max(0.0));
        self.mask = train.then(|| x.data.iter().map(|&v| v > 0.0).collect());
        out
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let mask = self.mask.take().expect("relu backward without cached forward");
        let mut dx = dy.clone();
        for (d, m) in dx.data.iter_mut().zip(mask) {
            if !m {
                *d = 0.0;
            }
        }
        dx
    }
}

/// Max pooling; padded positions never win.
#[derive(Clone, Debug)]
pub struct MaxPool2d {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    argmax: Option<(Vec<u32>, [usize; 4])>,
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self { kernel, stride, padding, argmax: None }
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.padding - self.kernel) / self.stride + 1,
            (w + 2 * self.padding - self.kernel) / self.stride + 1,
        )
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let (oh, ow) = self.output_size(x.h, x.w);
        let mut out = Tensor::zeros(x.n, x.c, oh, ow);
        let mut idx = vec![0u32; out.data.len()];
        let plane = x.plane();
        for sc in 0..x.n * x.c {
            let src = &x.data[sc * plane..(sc + 1) * plane];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_i = 0usize;
                    for ki in 0..self.kernel {
                        let iy = (oy * self.stride + ki) as isize - self.padding as isize;
                        if iy < 0 || iy >= x.h as isize {
                            continue;
                        }
                        for kj in 0..self.kernel {
                            let ix = (ox * self.stride + kj) as isize - self.padding as isize;
                            if ix < 0 || ix >= x.w as isize {
                                continue;
                            }
                            let i = iy as usize * x.w + ix as usize;
                            if src[i] > best {
                                best = src[i];
                                best_i = i;
                            }
                        }
                    }
                    let o = (sc * oh + oy) * ow + ox;
                    out.data[o] = best;
                    idx[o] = best_i as u32;
                }
            }
        }
        self.argmax = train.then_some((idx, x.shape()));
        out
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (idx, [n, c, h, w]) = self.argmax.take().expect("max-pool backward without cached forward");
        let mut dx = Tensor::zeros(n, c, h, w);
        let (plane_in, plane_out) = (h * w, dy.plane());
        for sc in 0..n * c {
            for o in 0..plane_out {
                let k = sc * plane_out + o;
                dx.data[sc * plane_in + idx[k] as usize] += dy.data[k];
            }
        }
        dx
    }
}

/// Transposed convolution with kernel 2 and stride 2 (exact 2x upsampling).
#[derive(Clone, Debug)]
pub struct ConvTranspose2x2 {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `[in, out, 2, 2]`
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl ConvTranspose2x2 {
    pub fn new<R: Rng + ?Sized>(name: &str, in_channels: usize, out_channels: usize, rng: &mut R) -> Self {
        Self {
            in_channels,
            out_channels,
            weight: Param::kaiming(format!("{name}.weight"), &[in_channels, out_channels, 2, 2], in_channels, rng),
            bias: Param::filled(format!("{name}.bias"), &[out_channels], 0.0, true),
            input: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        assert_eq!(x.c, self.in_channels);
        let (h, w, p) = (x.h, x.w, x.plane());
        let oc4 = self.out_channels * 4;
        let mut out = Tensor::zeros(x.n, self.out_channels, 2 * h, 2 * w);
        let mut tmp = vec![0.0f32; oc4 * p];
        for s in 0..x.n {
            sgemm(oc4, self.in_channels, p, &self.weight.value, true, x.sample(s), false, &mut tmp, false);
            let ys = out.sample_mut(s);
            for oc in 0..self.out_channels {
                let b = self.bias.value[oc];
                for d in 0..4 {
                    let (di, dj) = (d / 2, d % 2);
                    let row = &tmp[(oc * 4 + d) * p..(oc * 4 + d + 1) * p];
                    for i in 0..h {
                        let dst = &mut ys[(oc * 2 * h + 2 * i + di) * 2 * w..];
                        for j in 0..w {
                            dst[2 * j + dj] = row[i * w + j] + b;
                        }
                    }
                }
            }
        }
        self.input = train.then(|| x.clone());
        out
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let x = self.input.take().expect("transposed-conv backward without cached forward");
        let (h, w, p) = (x.h, x.w, x.plane());
        let oc4 = self.out_channels * 4;
        let mut dx = x.zeros_like();
        let mut dtmp = vec![0.0f32; oc4 * p];
        for s in 0..x.n {
            let dys = dy.sample(s);
            for oc in 0..self.out_channels {
                let mut bsum = 0.0f32;
                for d in 0..4 {
                    let (di, dj) = (d / 2, d % 2);
                    let row = &mut dtmp[(oc * 4 + d) * p..(oc * 4 + d + 1) * p];
                    for i in 0..h {
                        let src = &dys[(oc * 2 * h + 2 * i + di) * 2 * w..];
                        for j in 0..w {
                            row[i * w + j] = src[2 * j + dj];
                        }
                    }
                    bsum += row.iter().sum::<f32>();
                }
                self.bias.grad[oc] += bsum;
            }
            sgemm(self.in_channels, p, oc4, x.sample(s), false, &dtmp, true, &mut self.weight.grad, true);
            sgemm(self.in_channels, oc4, p, &self.weight.value, false, &dtmp, false, dx.sample_mut(s), false);
        }
        dx
    }
}

impl Module for ConvTranspose2x2 {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample_nearest2(x: &Tensor) -> Tensor {
    let (h, w) = (x.h, x.w);
    let mut out = Tensor::zeros(x.n, x.c, 2 * h, 2 * w);
    for sc in 0..x.n * x.c {
        let src = &x.data[sc * h * w..(sc + 1) * h * w];
        let dst = &mut out.data[sc * 4 * h * w..(sc + 1) * 4 * h * w];
        for y in 0..2 * h {
            for xx in 0..2 * w {
                dst[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
            }
        }
    }
    out
}

pub fn upsample_nearest2_backward(dy: &Tensor) -> Tensor {
    let (h, w) = (dy.h / 2, dy.w / 2);
    let mut dx = Tensor::zeros(dy.n, dy.c, h, w);
    for sc in 0..dy.n * dy.c {
        let src = &dy.data[sc * 4 * h * w..(sc + 1) * 4 * h * w];
        let dst = &mut dx.data[sc * h * w..(sc + 1) * h * w];
        for y in 0..2 * h {
            for xx in 0..2 * w {
                dst[(y / 2) * w + xx / 2] += src[y * 2 * w + xx];
            }
        }
    }
    dx
}

/// Spatial mean per channel, producing `[n, c, 1, 1]`.
pub fn global_avg_pool(x: &Tensor) -> Tensor {
    let p = x.plane();
    let data = x.data.chunks(p).map(|c| c.iter().sum::<f32>() / p as f32).collect();
    Tensor::from_vec(x.n, x.c, 1, 1, data)
}

pub fn global_avg_pool_backward(dy: &Tensor, h: usize, w: usize) -> Tensor {
    let p = h * w;
    let mut dx = Tensor::zeros(dy.n, dy.c, h, w);
    for (chunk, &g) in dx.data.chunks_mut(p).zip(&dy.data) {
        chunk.iter_mut().for_each(|v| *v = g / p as f32);
    }
    dx
}

/// Fully-connected layer on `[n, c, 1, 1]` features.
#[derive(Clone, Debug)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(name: &str, in_features: usize, out_features: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_features as f32).sqrt();
        let value = (0..in_features * out_features).map(|_| rng.random_range(-bound..bound)).collect();
        Self {
            in_features,
            out_features,
            weight: Param::new(format!("{name}.weight"), &[out_features, in_features], value, true),
            bias: Param::filled(format!("{name}.bias"), &[out_features], 0.0, true),
            input: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        assert_eq!(x.sample_len(), self.in_features);
        let mut out = Tensor::zeros(x.n, self.out_features, 1, 1);
        sgemm(x.n, self.in_features, self.out_features, &x.data, false, &self.weight.value, true, &mut out.data, false);
        for row in out.data.chunks_mut(self.out_features) {
            row.iter_mut().zip(&self.bias.value).for_each(|(v, b)| *v += b);
        }
        self.input = train.then(|| x.clone());
        out
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let x = self.input.take().expect("linear backward without cached forward");
        for row in dy.data.chunks(self.out_features) {
            self.bias.grad.iter_mut().zip(row).for_each(|(g, d)| *g += d);
        }
        sgemm(self.out_features, x.n, self.in_features, &dy.data, true, &x.data, false, &mut self.weight.grad, true);
        let mut dx = x.zeros_like();
        sgemm(x.n, self.out_features, self.in_features, &dy.data, false, &self.weight.value, false, &mut dx.data, false);
        dx
    }
}

impl Module for Linear {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}
