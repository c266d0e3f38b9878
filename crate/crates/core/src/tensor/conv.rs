use serde::{Deserialize, Serialize};

use super::gemm::{gemm, Mat};
use super::{record_macs, Tensor};
use crate::error::{Error, Result};

/// Geometry of a 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub has_bias: bool,
}

impl ConvSpec {
    /// Square kernel, one group, with bias.
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        ConvSpec {
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            padding,
            groups: 1,
            has_bias: true,
        }
    }

    pub fn pointwise() -> Self {
        Self::new(1, 1, 0)
    }

    pub fn with_groups(self, groups: usize) -> Self {
        ConvSpec { groups, ..self }
    }

    pub fn without_bias(self) -> Self {
        ConvSpec { has_bias: false, ..self }
    }

    /// Output extent along one axis, or `None` when the kernel does not fit.
    pub fn output_len(&self, input: usize, kernel: usize) -> Option<usize> {
        let padded = input + 2 * self.padding;
        (padded >= kernel && self.stride > 0).then(|| (padded - kernel) / self.stride + 1)
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        Some((self.output_len(h, self.kernel_h)?, self.output_len(w, self.kernel_w)?))
    }

    /// Weight shape `[out, in / groups, kh, kw]`.
    pub fn weight_shape(&self, in_channels: usize, out_channels: usize) -> [usize; 4] {
        [out_channels, in_channels / self.groups, self.kernel_h, self.kernel_w]
    }

    /// Learnable scalars of a convolution with these channel counts.
    pub fn param_count(&self, in_channels: usize, out_channels: usize) -> usize {
        let w: usize = self.weight_shape(in_channels, out_channels).iter().product();
        w + if self.has_bias { out_channels } else { 0 }
    }

    /// Multiply-accumulates for one image of the given input size.
    pub fn macs(&self, in_channels: usize, out_channels: usize, h: usize, w: usize) -> u64 {
        let (ho, wo) = self.output_hw(h, w).unwrap_or((0, 0));
        let per_out = (in_channels / self.groups * self.kernel_h * self.kernel_w) as u64;
        per_out * (out_channels * ho * wo) as u64
    }

    pub fn validate(&self, in_channels: usize, out_channels: usize) -> Result<()> {
        if self.kernel_h == 0 || self.kernel_w == 0 || self.stride == 0 || self.groups == 0 {
            return Err(Error::config(format!("degenerate convolution spec {self:?}")));
        }
        if in_channels % self.groups != 0 || out_channels % self.groups != 0 {
            return Err(Error::config(format!(
                "groups {} must divide both {in_channels} input and {out_channels} output channels",
                self.groups
            )));
        }
        Ok(())
    }
}

struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    ho: usize,
    wo: usize,
    spec: ConvSpec,
}

impl Geometry {
    fn cin_g(&self) -> usize {
        self.cin / self.spec.groups
    }
    fn cout_g(&self) -> usize {
        self.cout / self.spec.groups
    }
    fn k(&self) -> usize {
        self.cin_g() * self.spec.kernel_h * self.spec.kernel_w
    }
    fn is_pointwise(&self) -> bool {
        let s = &self.spec;
        s.kernel_h == 1 && s.kernel_w == 1 && s.stride == 1 && s.padding == 0
    }
    fn is_depthwise(&self) -> bool {
        self.spec.groups == self.cin && self.cin == self.cout
    }

    /// Range of output columns `ox` whose input column `ox*stride + k - pad`
    /// lies inside `[0, len)`.
    fn valid_range(&self, k: usize, len: usize, out_len: usize) -> (usize, usize) {
        let s = self.spec.stride as isize;
        let off = k as isize - self.spec.padding as isize;
        // ox*s + off >= 0  and  ox*s + off <= len-1
        let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
        let hi_num = len as isize - 1 - off;
        let hi = if hi_num < 0 { -1 } else { hi_num / s };
        let lo = lo.max(0) as usize;
        let hi = (hi + 1).clamp(0, out_len as isize) as usize;
        (lo.min(hi), hi)
    }

    /// Unfold the input channels of group `g` of image `n` into a
    /// `[cin_g*kh*kw, ho*wo]` matrix.
    fn im2col(&self, x: &[f64], n: usize, g: usize, col: &mut [f64]) {
        let (kh, kw) = (self.spec.kernel_h, self.spec.kernel_w);
        let (s, p) = (self.spec.stride, self.spec.padding);
        let plane = self.h * self.w;
        let opl = self.ho * self.wo;
        col.iter_mut().for_each(|v| *v = 0.0);
        for ci in 0..self.cin_g() {
            let src = &x[(n * self.cin + g * self.cin_g() + ci) * plane..][..plane];
            for ky in 0..kh {
                let (oy_lo, oy_hi) = self.valid_range(ky, self.h, self.ho);
                for kx in 0..kw {
                    let (ox_lo, ox_hi) = self.valid_range(kx, self.w, self.wo);
                    let row = &mut col[((ci * kh + ky) * kw + kx) * opl..][..opl];
                    for oy in oy_lo..oy_hi {
                        let iy = oy * s + ky - p;
                        let dst = &mut row[oy * self.wo..][..self.wo];
                        let srow = &src[iy * self.w..][..self.w];
                        for ox in ox_lo..ox_hi {
                            dst[ox] = srow[ox * s + kx - p];
                        }
                    }
                }
            }
        }
    }

    /// Fold a column matrix back, adding into the gradient of group `g`.
    fn col2im(&self, col: &[f64], n: usize, g: usize, dx: &mut [f64]) {
        let (kh, kw) = (self.spec.kernel_h, self.spec.kernel_w);
        let (s, p) = (self.spec.stride, self.spec.padding);
        let plane = self.h * self.w;
        let opl = self.ho * self.wo;
        for ci in 0..self.cin_g() {
            let dst = &mut dx[(n * self.cin + g * self.cin_g() + ci) * plane..][..plane];
            for ky in 0..kh {
                let (oy_lo, oy_hi) = self.valid_range(ky, self.h, self.ho);
                for kx in 0..kw {
                    let (ox_lo, ox_hi) = self.valid_range(kx, self.w, self.wo);
                    let row = &col[((ci * kh + ky) * kw + kx) * opl..][..opl];
                    for oy in oy_lo..oy_hi {
                        let iy = oy * s + ky - p;
                        let src = &row[oy * self.wo..][..self.wo];
                        let drow = &mut dst[iy * self.w..][..self.w];
                        for ox in ox_lo..ox_hi {
                            drow[ox * s + kx - p] += src[ox];
                        }
                    }
                }
            }
        }
    }

    fn forward_general(&self, x: &[f64], w: &[f64], out: &mut [f64]) {
        let opl = self.ho * self.wo;
        let plane = self.h * self.w;
        let k = self.k();
        let mut col = if self.is_pointwise() { Vec::new() } else { vec![0.0; k * opl] };
        for n in 0..self.n {
            for g in 0..self.spec.groups {
                let wg = &w[g * self.cout_g() * k..][..self.cout_g() * k];
                let dst = &mut out[(n * self.cout + g * self.cout_g()) * opl..][..self.cout_g() * opl];
                if self.is_pointwise() {
                    let src = &x[(n * self.cin + g * self.cin_g()) * plane..][..k * plane];
                    gemm(Mat::new(wg, self.cout_g(), k), Mat::new(src, k, opl), dst, 0.0);
                } else {
                    self.im2col(x, n, g, &mut col);
                    gemm(Mat::new(wg, self.cout_g(), k), Mat::new(&col, k, opl), dst, 0.0);
                }
            }
        }
    }

    fn backward_general(&self, x: &[f64], w: &[f64], gy: &[f64], dx: Option<&mut Vec<f64>>, dw: Option<&mut Vec<f64>>) {
        let opl = self.ho * self.wo;
        let plane = self.h * self.w;
        let k = self.k();
        let cg = self.cout_g();
        let mut col = if self.is_pointwise() { Vec::new() } else { vec![0.0; k * opl] };
        let mut dcol = if self.is_pointwise() { Vec::new() } else { vec![0.0; k * opl] };
        let mut dx = dx;
        let mut dw = dw;
        for n in 0..self.n {
            for g in 0..self.spec.groups {
                let wg = &w[g * cg * k..][..cg * k];
                let gyg = &gy[(n * self.cout + g * cg) * opl..][..cg * opl];
                if let Some(dw) = dw.as_deref_mut() {
                    let dwg = &mut dw[g * cg * k..][..cg * k];
                    if self.is_pointwise() {
                        let src = &x[(n * self.cin + g * self.cin_g()) * plane..][..k * plane];
                        gemm(Mat::new(gyg, cg, opl), Mat::new(src, k, opl).t(), dwg, 1.0);
                    } else {
                        self.im2col(x, n, g, &mut col);
                        gemm(Mat::new(gyg, cg, opl), Mat::new(&col, k, opl).t(), dwg, 1.0);
                    }
                }
                if let Some(dx) = dx.as_deref_mut() {
                    if self.is_pointwise() {
                        let dst = &mut dx[(n * self.cin + g * self.cin_g()) * plane..][..k * plane];
                        gemm(Mat::new(wg, cg, k).t(), Mat::new(gyg, cg, opl), dst, 1.0);
                    } else {
                        gemm(Mat::new(wg, cg, k).t(), Mat::new(gyg, cg, opl), &mut dcol, 0.0);
                        self.col2im(&dcol, n, g, dx);
                    }
                }
            }
        }
    }

    fn forward_depthwise(&self, x: &[f64], w: &[f64], out: &mut [f64]) {
        let (kh, kw) = (self.spec.kernel_h, self.spec.kernel_w);
        let (s, p) = (self.spec.stride, self.spec.padding);
        let plane = self.h * self.w;
        let opl = self.ho * self.wo;
        for n in 0..self.n {
            for c in 0..self.cin {
                let src = &x[(n * self.cin + c) * plane..][..plane];
                let dst = &mut out[(n * self.cin + c) * opl..][..opl];
                let wc = &w[c * kh * kw..][..kh * kw];
                for ky in 0..kh {
                    let (oy_lo, oy_hi) = self.valid_range(ky, self.h, self.ho);
                    for kx in 0..kw {
                        let wv = wc[ky * kw + kx];
                        let (ox_lo, ox_hi) = self.valid_range(kx, self.w, self.wo);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        for oy in oy_lo..oy_hi {
                            let iy = oy * s + ky - p;
                            let drow = &mut dst[oy * self.wo..][..self.wo];
                            let srow = &src[iy * self.w..][..self.w];
                            if s == 1 {
                                let off = ox_lo + kx - p;
                                let len = ox_hi - ox_lo;
                                for (d, v) in drow[ox_lo..ox_hi].iter_mut().zip(&srow[off..off + len]) {
                                    *d += wv * v;
                                }
                            } else {
                                for ox in ox_lo..ox_hi {
                                    drow[ox] += wv * srow[ox * s + kx - p];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn backward_depthwise(&self, x: &[f64], w: &[f64], gy: &[f64], mut dx: Option<&mut Vec<f64>>, mut dw: Option<&mut Vec<f64>>) {
        let (kh, kw) = (self.spec.kernel_h, self.spec.kernel_w);
        let (s, p) = (self.spec.stride, self.spec.padding);
        let plane = self.h * self.w;
        let opl = self.ho * self.wo;
        for n in 0..self.n {
            for c in 0..self.cin {
                let src = &x[(n * self.cin + c) * plane..][..plane];
                let g = &gy[(n * self.cin + c) * opl..][..opl];
                for ky in 0..kh {
                    let (oy_lo, oy_hi) = self.valid_range(ky, self.h, self.ho);
                    for kx in 0..kw {
                        let wi = c * kh * kw + ky * kw + kx;
                        let wv = w[wi];
                        let (ox_lo, ox_hi) = self.valid_range(kx, self.w, self.wo);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        let mut acc = 0.0;
                        for oy in oy_lo..oy_hi {
                            let iy = oy * s + ky - p;
                            let grow = &g[oy * self.wo..][..self.wo];
                            let srow = &src[iy * self.w..][..self.w];
                            if dw.is_some() {
                                acc += (ox_lo..ox_hi).map(|ox| grow[ox] * srow[ox * s + kx - p]).sum::<f64>();
                            }
                            if let Some(dx) = dx.as_deref_mut() {
                                let drow = &mut dx[(n * self.cin + c) * plane + iy * self.w..][..self.w];
                                if s == 1 {
                                    let off = ox_lo + kx - p;
                                    let len = ox_hi - ox_lo;
                                    for (d, v) in drow[off..off + len].iter_mut().zip(&grow[ox_lo..ox_hi]) {
                                        *d += wv * v;
                                    }
                                } else {
                                    for ox in ox_lo..ox_hi {
                                        drow[ox * s + kx - p] += wv * grow[ox];
                                    }
                                }
                            }
                        }
                        if let Some(dw) = dw.as_deref_mut() {
                            dw[wi] += acc;
                        }
                    }
                }
            }
        }
    }
}

/// 2-D cross-correlation over an NCHW tensor with zero padding.
///
/// `weight` is `[out, in / groups, kh, kw]`; `bias`, when given,
/// is `[out]`. Differentiable with respect to all three tensors.
pub fn conv2d(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, spec: ConvSpec) -> Result<Tensor> {
    let (n, cin, h, w) = x.dims4("conv2d")?;
    let [cout, wcin, kh, kw] = match *weight.shape() {
        [a, b, c, d] => [a, b, c, d],
        _ => return Err(Error::dims("conv2d weight", x.shape(), weight.shape())),
    };
    spec.validate(cin, cout)?;
    if wcin != cin / spec.groups || kh != spec.kernel_h || kw != spec.kernel_w {
        return Err(Error::config(format!(
            "conv2d weight {:?} inconsistent with input {:?} and spec {spec:?}",
            weight.shape(),
            x.shape()
        )));
    }
    match (spec.has_bias, bias) {
        (true, Some(b)) if b.shape() == [cout] => {}
        (false, None) => {}
        (true, Some(b)) => return Err(Error::dims("conv2d bias", &[cout], b.shape())),
        (true, None) => return Err(Error::config("conv2d spec requires a bias tensor")),
        (false, Some(_)) => return Err(Error::config("conv2d spec declares no bias but one was given")),
    }
    let (ho, wo) = spec.output_hw(h, w).ok_or_else(|| {
        Error::config(format!("kernel {kh}x{kw} with padding {} does not fit {h}x{w}", spec.padding))
    })?;
    let geo = Geometry { n, cin, h, w, cout, ho, wo, spec };
    let opl = ho * wo;
    let mut out = vec![0.0; n * cout * opl];
    if geo.is_depthwise() {
        geo.forward_depthwise(x.data(), weight.data(), &mut out);
    } else {
        geo.forward_general(x.data(), weight.data(), &mut out);
    }
    if let Some(b) = bias {
        for ni in 0..n {
            for (c, &bv) in b.data().iter().enumerate() {
                out[(ni * cout + c) * opl..][..opl].iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    record_macs(n as u64 * spec.macs(cin, cout, h, w));

    let (xc, wc) = (x.clone(), weight.clone());
    let has_bias = bias.is_some();
    let bias_grad = bias.map(|b| b.requires_grad()).unwrap_or(false);
    let mut inputs = vec![x, weight];
    if let Some(b) = bias {
        inputs.push(b);
    }
    Ok(Tensor::from_op(out, vec![n, cout, ho, wo], &inputs, move |gy, _| {
        let mut dx = xc.requires_grad().then(|| vec![0.0; xc.numel()]);
        let mut dw = wc.requires_grad().then(|| vec![0.0; wc.numel()]);
        if geo.is_depthwise() {
            geo.backward_depthwise(xc.data(), wc.data(), gy, dx.as_mut(), dw.as_mut());
        } else {
            geo.backward_general(xc.data(), wc.data(), gy, dx.as_mut(), dw.as_mut());
        }
        let mut grads = vec![dx, dw];
        if has_bias {
            let db = bias_grad.then(|| {
                let mut db = vec![0.0; geo.cout];
                for ni in 0..geo.n {
                    for (c, acc) in db.iter_mut().enumerate() {
                        *acc += gy[(ni * geo.cout + c) * opl..][..opl].iter().sum::<f64>();
                    }
                }
                db
            });
            grads.push(db);
        }
        grads
    }))
}
