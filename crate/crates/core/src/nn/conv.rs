use rand::Rng;

use super::gemm::{sgemm, sgemm_ld};

/// Target size (in floats) of one im2col chunk.
const COL_BUDGET: usize = 131_072;
use super::param::{Module, Param};
use super::tensor::Tensor;

/// 2-D convolution with square kernels, optional grouping and bias.
///
/// Weights are stored `[out, in / groups, k, k]`. The forward pass lowers each
/// group to a single matrix multiply over an im2col buffer; the buffer is
/// rebuilt in the backward pass rather than cached.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub weight: Param,
    pub bias: Option<Param>,
    input: Option<Tensor>,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        assert!(groups >= 1 && in_channels.is_multiple_of(groups) && out_channels.is_multiple_of(groups));
        assert!(kernel >= 1 && stride >= 1);
        let cin_g = in_channels / groups;
        let fan_in = cin_g * kernel * kernel;
        let weight = Param::kaiming(
            format!("{name}.weight"),
            &[out_channels, cin_g, kernel, kernel],
            fan_in,
            rng,
        );
        let bias = bias.then(|| Param::filled(format!("{name}.bias"), &[out_channels], 0.0, true));
        Self { in_channels, out_channels, kernel, stride, padding, groups, weight, bias, input: None }
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let oh = (h + 2 * self.padding - self.kernel) / self.stride + 1;
        let ow = (w + 2 * self.padding - self.kernel) / self.stride + 1;
        (oh, ow)
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    /// Output rows per im2col chunk, sized so the column buffer stays cache resident.
    fn rows_per_chunk(&self, oh: usize, ow: usize) -> usize {
        let kg = self.in_channels / self.groups * self.kernel * self.kernel;
        (COL_BUDGET / (kg * ow).max(1)).clamp(1, oh)
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        assert_eq!(x.c, self.in_channels, "conv input channel mismatch");
        let (oh, ow) = self.output_size(x.h, x.w);
        let p = oh * ow;
        let cin_g = self.in_channels / self.groups;
        let cout_g = self.out_channels / self.groups;
        let kg = cin_g * self.kernel * self.kernel;
        let mut out = Tensor::zeros(x.n, self.out_channels, oh, ow);
        let pointwise = self.is_pointwise();
        let chunk = self.rows_per_chunk(oh, ow);
        let mut cols = vec![0.0f32; if pointwise { 0 } else { kg * chunk * ow }];
        for s in 0..x.n {
            let xs = x.sample(s);
            let ys = out.sample_mut(s);
            for g in 0..self.groups {
                let w_g = &self.weight.value[g * cout_g * kg..(g + 1) * cout_g * kg];
                let y_g = &mut ys[g * cout_g * p..(g + 1) * cout_g * p];
                if pointwise {
                    let x_g = &xs[g * cin_g * p..(g + 1) * cin_g * p];
                    sgemm(cout_g, kg, p, w_g, false, x_g, false, y_g, false);
                    continue;
                }
                for oy0 in (0..oh).step_by(chunk) {
                    let rows = chunk.min(oh - oy0);
                    let pc = rows * ow;
                    self.im2col(xs, x.h, x.w, g * cin_g, cin_g, oy0, rows, ow, &mut cols[..kg * pc]);
                    sgemm_ld(cout_g, kg, pc, w_g, kg, false, &cols, pc, false, &mut y_g[oy0 * ow..], p, false);
                }
            }
            if let Some(b) = &self.bias {
                for (oc, plane) in ys.chunks_mut(p).enumerate() {
                    let bv = b.value[oc];
                    plane.iter_mut().for_each(|v| *v += bv);
                }
            }
        }
        self.input = train.then(|| x.clone());
        out
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let x = self.input.take().expect("conv backward without cached forward");
        let (oh, ow) = self.output_size(x.h, x.w);
        assert_eq!(dy.shape(), [x.n, self.out_channels, oh, ow]);
        let p = oh * ow;
        let cin_g = self.in_channels / self.groups;
        let cout_g = self.out_channels / self.groups;
        let kg = cin_g * self.kernel * self.kernel;
        let mut dx = x.zeros_like();
        let pointwise = self.is_pointwise();
        let chunk = self.rows_per_chunk(oh, ow);
        let buf = if pointwise { 0 } else { kg * chunk * ow };
        let mut cols = vec![0.0f32; buf];
        let mut dcols = vec![0.0f32; buf];
        for s in 0..x.n {
            let xs = x.sample(s);
            let dys = dy.sample(s);
            if let Some(b) = &mut self.bias {
                for (oc, plane) in dys.chunks(p).enumerate() {
                    b.grad[oc] += plane.iter().sum::<f32>();
                }
            }
            let dxs = dx.sample_mut(s);
            for g in 0..self.groups {
                let w_range = g * cout_g * kg..(g + 1) * cout_g * kg;
                let dy_g = &dys[g * cout_g * p..(g + 1) * cout_g * p];
                if pointwise {
                    let x_g = &xs[g * cin_g * p..(g + 1) * cin_g * p];
                    sgemm(cout_g, p, kg, dy_g, false, x_g, true, &mut self.weight.grad[w_range.clone()], true);
                    let dx_g = &mut dxs[g * cin_g * p..(g + 1) * cin_g * p];
                    sgemm(kg, cout_g, p, &self.weight.value[w_range], true, dy_g, false, dx_g, false);
                    continue;
                }
                for oy0 in (0..oh).step_by(chunk) {
                    let rows = chunk.min(oh - oy0);
                    let pc = rows * ow;
                    let dy_c = &dy_g[oy0 * ow..];
                    self.im2col(xs, x.h, x.w, g * cin_g, cin_g, oy0, rows, ow, &mut cols[..kg * pc]);
                    sgemm_ld(
                        cout_g,
                        pc,
                        kg,
                        dy_c,
                        p,
                        false,
                        &cols,
                        pc,
                        true,
                        &mut self.weight.grad[w_range.clone()],
                        kg,
                        true,
                    );
                    sgemm_ld(
                        kg,
                        cout_g,
                        pc,
                        &self.weight.value[w_range.clone()],
                        kg,
                        true,
                        dy_c,
                        p,
                        false,
                        &mut dcols,
                        pc,
                        false,
                    );
                    self.col2im(&dcols[..kg * pc], x.h, x.w, g * cin_g, cin_g, oy0, rows, ow, dxs);
                }
            }
        }
        dx
    }

    /// Fill `cols` (`[cin * k * k, rows * ow]`) for output rows `oy0..oy0 + rows`.
    #[allow(clippy::too_many_arguments)]
    fn im2col(
        &self,
        xs: &[f32],
        h: usize,
        w: usize,
        c0: usize,
        nc: usize,
        oy0: usize,
        rows: usize,
        ow: usize,
        cols: &mut [f32],
    ) {
        let k = self.kernel;
        let (stride, pad) = (self.stride as isize, self.padding as isize);
        let pc = rows * ow;
        for c in 0..nc {
            let plane = &xs[(c0 + c) * h * w..(c0 + c + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = &mut cols[((c * k + ki) * k + kj) * pc..((c * k + ki) * k + kj + 1) * pc];
                    for r in 0..rows {
                        let oy = oy0 + r;
                        let iy = oy as isize * stride + ki as isize - pad;
                        let dst = &mut row[r * ow..(r + 1) * ow];
                        if iy < 0 || iy >= h as isize {
                            dst.iter_mut().for_each(|v| *v = 0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        if stride == 1 {
                            let (lo, hi) = valid_run(ow, w, kj, self.padding);
                            dst[..lo].iter_mut().for_each(|v| *v = 0.0);
                            if lo < hi {
                                let start = lo + kj - self.padding;
                                dst[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                            }
                            dst[hi.max(lo)..].iter_mut().for_each(|v| *v = 0.0);
                        } else {
                            for (ox, d) in dst.iter_mut().enumerate() {
                                let ix = ox as isize * stride + kj as isize - pad;
                                *d = if ix >= 0 && ix < w as isize { src[ix as usize] } else { 0.0 };
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatter-add a column buffer produced for rows `oy0..oy0 + rows` back to image layout.
    #[allow(clippy::too_many_arguments)]
    fn col2im(
        &self,
        cols: &[f32],
        h: usize,
        w: usize,
        c0: usize,
        nc: usize,
        oy0: usize,
        rows: usize,
        ow: usize,
        dxs: &mut [f32],
    ) {
        let k = self.kernel;
        let (stride, pad) = (self.stride as isize, self.padding as isize);
        let pc = rows * ow;
        for c in 0..nc {
            let plane = &mut dxs[(c0 + c) * h * w..(c0 + c + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = &cols[((c * k + ki) * k + kj) * pc..((c * k + ki) * k + kj + 1) * pc];
                    for r in 0..rows {
                        let iy = (oy0 + r) as isize * stride + ki as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        let src = &row[r * ow..(r + 1) * ow];
                        if stride == 1 {
                            let (lo, hi) = valid_run(ow, w, kj, self.padding);
                            if lo < hi {
                                let start = lo + kj - self.padding;
                                for (d, &v) in dst[start..start + hi - lo].iter_mut().zip(&src[lo..hi]) {
                                    *d += v;
                                }
                            }
                            continue;
                        }
                        for (ox, &v) in src.iter().enumerate() {
                            let ix = ox as isize * stride + kj as isize - pad;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Output columns `[lo, hi)` whose stride-1 input column `ox + kj - pad` is in bounds.
fn valid_run(ow: usize, w: usize, kj: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(kj).min(ow);
    let hi = (w + pad).saturating_sub(kj).min(ow);
    (lo, hi)
}

impl Module for Conv2d {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
        if let Some(b) = &self.bias {
            f(b);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        if let Some(b) = &mut self.bias {
            f(b);
        }
    }
}
