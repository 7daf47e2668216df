use super::param::{Module, Param};
use super::tensor::Tensor;

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f32 = 0.1;

/// Batch normalisation over `(N, H, W)` per channel.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub channels: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    cache: Option<(Tensor, Vec<f32>)>,
}

impl BatchNorm2d {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            channels,
            gamma: Param::filled(format!("{name}.gamma"), &[channels], 1.0, true),
            beta: Param::filled(format!("{name}.beta"), &[channels], 0.0, true),
            running_mean: Param::filled(format!("{name}.running_mean"), &[channels], 0.0, false),
            running_var: Param::filled(format!("{name}.running_var"), &[channels], 1.0, false),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        assert_eq!(x.c, self.channels, "batch-norm channel mismatch");
        let plane = x.plane();
        let count = x.n * plane;
        let mut out = x.zeros_like();
        if !train {
            for c in 0..x.c {
                let inv = 1.0 / (self.running_var.value[c] as f64 + BN_EPS).sqrt();
                let scale = (self.gamma.value[c] as f64 * inv) as f32;
                let shift = self.beta.value[c] - self.running_mean.value[c] * scale;
                for s in 0..x.n {
                    let off = (s * x.c + c) * plane;
                    for (o, &v) in out.data[off..off + plane].iter_mut().zip(&x.data[off..off + plane]) {
                        *o = v * scale + shift;
                    }
                }
            }
            self.cache = None;
            return out;
        }
        let mut xhat = x.zeros_like();
        let mut inv_std = vec![0.0f32; x.c];
        for c in 0..x.c {
            let mut sum = 0.0f64;
            for s in 0..x.n {
                let off = (s * x.c + c) * plane;
                sum += x.data[off..off + plane].iter().sum::<f32>() as f64;
            }
            let mean = sum / count as f64;
            let mut sq = 0.0f64;
            for s in 0..x.n {
                let off = (s * x.c + c) * plane;
                let m = mean as f32;
                sq += x.data[off..off + plane].iter().map(|&v| (v - m) * (v - m)).sum::<f32>() as f64;
            }
            let var = sq / count as f64;
            let inv = 1.0 / (var + BN_EPS).sqrt();
            inv_std[c] = inv as f32;
            let (g, b) = (self.gamma.value[c], self.beta.value[c]);
            let (mean32, inv32) = (mean as f32, inv as f32);
            for s in 0..x.n {
                let off = (s * x.c + c) * plane;
                for i in off..off + plane {
                    let h = (x.data[i] - mean32) * inv32;
                    xhat.data[i] = h;
                    out.data[i] = h * g + b;
                }
            }
            let unbiased = if count > 1 { sq / (count - 1) as f64 } else { var };
            let rm = &mut self.running_mean.value[c];
            *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * mean as f32;
            let rv = &mut self.running_var.value[c];
            *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * unbiased as f32;
        }
        self.cache = Some((xhat, inv_std));
        out
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (xhat, inv_std) = self.cache.take().expect("batch-norm backward without cached forward");
        assert_eq!(dy.shape(), xhat.shape());
        let plane = dy.plane();
        let count = (dy.n * plane) as f64;
        let mut dx = dy.zeros_like();
        for c in 0..dy.c {
            let mut sum_dy = 0.0f64;
            let mut sum_dy_xhat = 0.0f64;
            for s in 0..dy.n {
                let off = (s * dy.c + c) * plane;
                let (d, xh) = (&dy.data[off..off + plane], &xhat.data[off..off + plane]);
                sum_dy += d.iter().sum::<f32>() as f64;
                sum_dy_xhat += d.iter().zip(xh).map(|(a, b)| a * b).sum::<f32>() as f64;
            }
            self.gamma.grad[c] += sum_dy_xhat as f32;
            self.beta.grad[c] += sum_dy as f32;
            let g = self.gamma.value[c] as f64;
            let k = g * inv_std[c] as f64 / count;
            let (mean_dy, mean_dyx) = ((sum_dy) as f32, (sum_dy_xhat) as f32);
            for s in 0..dy.n {
                let off = (s * dy.c + c) * plane;
                for i in off..off + plane {
                    let v = count as f32 * dy.data[i] - mean_dy - xhat.data[i] * mean_dyx;
                    dx.data[i] = (k as f32) * v;
                }
            }
        }
        dx
    }
}

impl Module for BatchNorm2d {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.gamma);
        f(&self.beta);
        f(&self.running_mean);
        f(&self.running_var);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.gamma);
        f(&mut self.beta);
        f(&mut self.running_mean);
        f(&mut self.running_var);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_output_has_zero_mean_unit_variance_per_channel() {
        let x = Tensor::from_vec(2, 2, 2, 2, (0..16).map(|v| (v * v) as f32 * 0.1).collect());
        let mut bn = BatchNorm2d::new("bn", 2);
        let y = bn.forward(&x, true);
        for c in 0..2 {
            let vals: Vec<f32> = (0..2).flat_map(|s| y.data[(s * 2 + c) * 4..(s * 2 + c + 1) * 4].to_vec()).collect();
            let mean: f32 = vals.iter().sum::<f32>() / 8.0;
            let var: f32 = vals.iter().map(|v| (v - mean).powi(2)).sum::<f32>() / 8.0;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-3);
        }
        assert!(bn.running_mean.value[0] > 0.0);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let x = Tensor::from_vec(2, 2, 2, 3, (0..24).map(|v| ((v * 7 % 11) as f32 - 5.0) * 0.3).collect());
        let r: Vec<f32> = (0..24).map(|v| ((v * 5 % 13) as f32 - 6.0) * 0.1).collect();
        let mut bn = BatchNorm2d::new("bn", 2);
        bn.gamma.value = vec![1.5, 0.7];
        bn.beta.value = vec![0.2, -0.1];
        let _ = bn.forward(&x, true);
        let dx = bn.backward(&Tensor::from_vec(2, 2, 2, 3, r.clone()));
        let loss = |bn: &mut BatchNorm2d, x: &Tensor| -> f64 {
            let y = bn.forward(x, true);
            y.data.iter().zip(&r).map(|(a, b)| *a as f64 * *b as f64).sum()
        };
        let eps = 1e-3;
        for idx in 0..24 {
            let mut xp = x.clone();
            xp.data[idx] += eps;
            let mut xm = x.clone();
            xm.data[idx] -= eps;
            let fd = (loss(&mut bn, &xp) - loss(&mut bn, &xm)) / (2.0 * eps as f64);
            assert!((fd - dx.data[idx] as f64).abs() < 2e-3, "{idx}: {fd} vs {}", dx.data[idx]);
        }
    }
}
