use super::Tensor;
use crate::error::{Error, Result};

/// Elementwise operation selector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ElementwiseKind {
    Add,
    Sub,
    Mul,
    Sigmoid,
    Gelu,
    Relu,
    Scale(f64),
}

/// Dispatch for the elementwise family. Binary kinds need `b` with the same
/// shape as `a`; unary kinds ignore it.
pub fn elementwise(kind: ElementwiseKind, a: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let need_b = || b.ok_or_else(|| Error::usage(format!("{kind:?} needs a second operand")));
    match kind {
        ElementwiseKind::Add => add(a, need_b()?),
        ElementwiseKind::Sub => sub(a, need_b()?),
        ElementwiseKind::Mul => mul(a, need_b()?),
        ElementwiseKind::Sigmoid => Ok(sigmoid(a)),
        ElementwiseKind::Gelu => Ok(gelu(a)),
        ElementwiseKind::Relu => Ok(relu(a)),
        ElementwiseKind::Scale(s) => Ok(scale(a, s)),
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dims(op, a.shape(), b.shape()));
    }
    Ok(())
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("add", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Ok(Tensor::from_op(data, a.shape().to_vec(), &[a, b], |g, _| {
        vec![Some(g.to_vec()), Some(g.to_vec())]
    }))
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("sub", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    Ok(Tensor::from_op(data, a.shape().to_vec(), &[a, b], |g, _| {
        vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())]
    }))
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("mul", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    let (ac, bc) = (a.clone(), b.clone());
    Ok(Tensor::from_op(data, a.shape().to_vec(), &[a, b], move |g, _| {
        let ga = ac
            .requires_grad()
            .then(|| g.iter().zip(bc.data()).map(|(g, y)| g * y).collect());
        let gb = bc
            .requires_grad()
            .then(|| g.iter().zip(ac.data()).map(|(g, x)| g * x).collect());
        vec![ga, gb]
    }))
}

pub fn scale(a: &Tensor, s: f64) -> Tensor {
    let data = a.data().iter().map(|x| x * s).collect();
    Tensor::from_op(data, a.shape().to_vec(), &[a], move |g, _| {
        vec![Some(g.iter().map(|v| v * s).collect())]
    })
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(a: &Tensor) -> Tensor {
    let data = a.data().iter().map(|&x| sigmoid_scalar(x)).collect();
    Tensor::from_op(data, a.shape().to_vec(), &[a], |g, y| {
        vec![Some(g.iter().zip(y).map(|(g, s)| g * s * (1.0 - s)).collect())]
    })
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact (erf-based) GELU.
pub fn gelu(a: &Tensor) -> Tensor {
    let data = a
        .data()
        .iter()
        .map(|&x| 0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2)))
        .collect();
    let ac = a.clone();
    Tensor::from_op(data, a.shape().to_vec(), &[a], move |g, _| {
        let dx = g
            .iter()
            .zip(ac.data())
            .map(|(g, &x)| {
                let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
                let pdf = FRAC_1_SQRT_2PI * (-0.5 * x * x).exp();
                g * (cdf + x * pdf)
            })
            .collect();
        vec![Some(dx)]
    })
}

pub fn relu(a: &Tensor) -> Tensor {
    let data = a.data().iter().map(|&x| x.max(0.0)).collect();
    let ac = a.clone();
    Tensor::from_op(data, a.shape().to_vec(), &[a], move |g, _| {
        let dx = g
            .iter()
            .zip(ac.data())
            .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
            .collect();
        vec![Some(dx)]
    })
}

/// Neumaier-compensated sum; error stays near one ulp of the result
/// regardless of length.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let t = s + v;
        c += if s.abs() >= v.abs() { (s - t) + v } else { (v - t) + s };
        s = t;
    }
    s + c
}

/// Sum of all elements as a one-element tensor.
pub fn sum(a: &Tensor) -> Tensor {
    let total = compensated_sum(a.data().iter().copied());
    let n = a.numel();
    Tensor::from_op(vec![total], vec![1], &[a], move |g, _| vec![Some(vec![g[0]; n])])
}

pub fn mean(a: &Tensor) -> Tensor {
    let n = a.numel();
    let total = compensated_sum(a.data().iter().copied());
    Tensor::from_op(vec![total / n as f64], vec![1], &[a], move |g, _| {
        vec![Some(vec![g[0] / n as f64; n])]
    })
}

/// Average of an NCHW tensor over batch and channels, shaped `[1, 1, H, W]`.
pub fn plane_mean(a: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = a.dims4("plane_mean")?;
    let plane = h * w;
    let k = 1.0 / (n * c) as f64;
    let mut out = vec![0.0; plane];
    for chunk in a.data().chunks(plane) {
        out.iter_mut().zip(chunk).for_each(|(o, v)| *o += v);
    }
    out.iter_mut().for_each(|o| *o *= k);
    Ok(Tensor::from_op(out, vec![1, 1, h, w], &[a], move |g, _| {
        let mut ga = Vec::with_capacity(n * c * plane);
        for _ in 0..n * c {
            ga.extend(g.iter().map(|v| v * k));
        }
        vec![Some(ga)]
    }))
}

/// Outer/axis/inner decomposition of a shape around `axis`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Concatenate along `axis`. All other dimensions must agree.
pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::usage("concat of an empty list"))?;
    let rank = first.shape().len();
    if axis >= rank {
        return Err(Error::usage(format!("concat axis {axis} on rank {rank}")));
    }
    for p in parts.iter().skip(1) {
        let ok = p.shape().len() == rank
            && p
                .shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !ok {
            return Err(Error::dims("concat", first.shape(), p.shape()));
        }
    }
    let sizes: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
    let total: usize = sizes.iter().sum();
    let (outer, _, inner) = axis_split(first.shape(), axis);
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (p, &s) in parts.iter().zip(&sizes) {
            data.extend_from_slice(&p.data()[o * s * inner..(o + 1) * s * inner]);
        }
    }
    Ok(Tensor::from_op(data, shape, parts, move |g, _| {
        let mut grads: Vec<Vec<f64>> = sizes
            .iter()
            .map(|&s| Vec::with_capacity(outer * s * inner))
            .collect();
        let mut off = 0;
        for _ in 0..outer {
            for (gp, &s) in grads.iter_mut().zip(&sizes) {
                gp.extend_from_slice(&g[off..off + s * inner]);
                off += s * inner;
            }
        }
        grads.into_iter().map(Some).collect()
    }))
}

/// Split along `axis` into consecutive pieces of the given sizes.
pub fn split(a: &Tensor, sizes: &[usize], axis: usize) -> Result<Vec<Tensor>> {
    let rank = a.shape().len();
    if axis >= rank {
        return Err(Error::usage(format!("split axis {axis} on rank {rank}")));
    }
    if sizes.iter().sum::<usize>() != a.shape()[axis] || sizes.iter().any(|&s| s == 0) {
        return Err(Error::usage(format!(
            "split sizes {sizes:?} do not partition axis of length {}",
            a.shape()[axis]
        )));
    }
    let (outer, len, inner) = axis_split(a.shape(), axis);
    let mut start = 0;
    let mut out = Vec::with_capacity(sizes.len());
    for &s in sizes {
        let mut data = Vec::with_capacity(outer * s * inner);
        for o in 0..outer {
            let base = (o * len + start) * inner;
            data.extend_from_slice(&a.data()[base..base + s * inner]);
        }
        let mut shape = a.shape().to_vec();
        shape[axis] = s;
        let begin = start;
        let total = a.numel();
        out.push(Tensor::from_op(data, shape, &[a], move |g, _| {
            let mut full = vec![0.0; total];
            for o in 0..outer {
                let base = (o * len + begin) * inner;
                full[base..base + s * inner].copy_from_slice(&g[o * s * inner..(o + 1) * s * inner]);
            }
            vec![Some(full)]
        }));
        start += s;
    }
    Ok(out)
}

/// Multiply every channel `c` of an NCHW tensor by `w[c]`.
pub fn mul_channel(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    let (n, c, h, wd) = x.dims4("mul_channel")?;
    if w.numel() != c {
        return Err(Error::dims("mul_channel", x.shape(), w.shape()));
    }
    let plane = h * wd;
    let mut data = x.data().to_vec();
    for ni in 0..n {
        for ci in 0..c {
            let s = w.data()[ci];
            let base = (ni * c + ci) * plane;
            data[base..base + plane].iter_mut().for_each(|v| *v *= s);
        }
    }
    let (xc, wc) = (x.clone(), w.clone());
    Ok(Tensor::from_op(data, x.shape().to_vec(), &[x, w], move |g, _| {
        let gx = xc.requires_grad().then(|| {
            let mut gx = g.to_vec();
            for ni in 0..n {
                for ci in 0..c {
                    let s = wc.data()[ci];
                    let base = (ni * c + ci) * plane;
                    gx[base..base + plane].iter_mut().for_each(|v| *v *= s);
                }
            }
            gx
        });
        let gw = wc.requires_grad().then(|| {
            let mut gw = vec![0.0; c];
            for ni in 0..n {
                for (ci, acc) in gw.iter_mut().enumerate() {
                    let base = (ni * c + ci) * plane;
                    *acc += g[base..base + plane]
                        .iter()
                        .zip(&xc.data()[base..base + plane])
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
                }
            }
            gw
        });
        vec![gx, gw]
    }))
}

/// Gather flat elements of `a` at `indices` into a 1-D tensor.
pub fn index_select(a: &Tensor, indices: &[usize]) -> Result<Tensor> {
    if let Some(&bad) = indices.iter().find(|&&i| i >= a.numel()) {
        return Err(Error::usage(format!(
            "index {bad} out of range for {} elements",
            a.numel()
        )));
    }
    if indices.is_empty() {
        return Err(Error::usage("index_select with no indices"));
    }
    let data = indices.iter().map(|&i| a.data()[i]).collect();
    let idx = indices.to_vec();
    let n = a.numel();
    Ok(Tensor::from_op(data, vec![indices.len()], &[a], move |g, _| {
        let mut ga = vec![0.0; n];
        for (gi, &i) in g.iter().zip(&idx) {
            ga[i] += gi;
        }
        vec![Some(ga)]
    }))
}
