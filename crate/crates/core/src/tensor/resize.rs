use super::Tensor;
use crate::error::{Error, Result};

/// Source taps for one output coordinate: `(i0, i1, weight0, weight1)`.
///
/// Half-pixel centres (`align_corners = false`): the source coordinate is
/// `(dst + 0.5) * in/out - 0.5`, clamped at zero, and the upper tap is
/// clamped to the last row.
fn taps(out_len: usize, in_len: usize) -> Vec<(usize, usize, f64, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            let l1 = src - i0 as f64;
            (i0, i1, 1.0 - l1, l1)
        })
        .collect()
}

/// Bilinear resampling of an NCHW tensor to `out_h × out_w`.
pub fn bilinear_resize(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4("bilinear_resize")?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::config(format!("bilinear_resize to {out_h}x{out_w}")));
    }
    if (out_h, out_w) == (h, w) {
        return x.reshape(x.shape());
    }
    let ty = taps(out_h, h);
    let tx = taps(out_w, w);
    let planes = n * c;
    let mut out = vec![0.0; planes * out_h * out_w];
    for p in 0..planes {
        let src = &x.data()[p * h * w..][..h * w];
        let dst = &mut out[p * out_h * out_w..][..out_h * out_w];
        for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
            let r0 = &src[y0 * w..][..w];
            let r1 = &src[y1 * w..][..w];
            for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                dst[oy * out_w + ox] =
                    wy0 * (wx0 * r0[x0] + wx1 * r0[x1]) + wy1 * (wx0 * r1[x0] + wx1 * r1[x1]);
            }
        }
    }
    Ok(Tensor::from_op(out, vec![n, c, out_h, out_w], &[x], move |g, _| {
        let mut dx = vec![0.0; planes * h * w];
        for p in 0..planes {
            let gsrc = &g[p * out_h * out_w..][..out_h * out_w];
            let dst = &mut dx[p * h * w..][..h * w];
            for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                    let gv = gsrc[oy * out_w + ox];
                    dst[y0 * w + x0] += gv * wy0 * wx0;
                    dst[y0 * w + x1] += gv * wy0 * wx1;
                    dst[y1 * w + x0] += gv * wy1 * wx0;
                    dst[y1 * w + x1] += gv * wy1 * wx1;
                }
            }
        }
        vec![Some(dx)]
    }))
}
