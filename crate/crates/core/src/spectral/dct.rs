use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Orthonormal DCT-II scale for frequency `k` of an `n`-point transform.
pub fn alpha(k: usize, n: usize) -> f64 {
    if k == 0 {
        (1.0 / n as f64).sqrt()
    } else {
        (2.0 / n as f64).sqrt()
    }
}

/// `n × n` row-major DCT-II matrix: `D[k][x] = α_k cos(π(2x+1)k / 2n)`.
pub fn dct_matrix(n: usize) -> Vec<f64> {
    let mut d = vec![0.0; n * n];
    for k in 0..n {
        let a = alpha(k, n);
        for x in 0..n {
            d[k * n + x] = a * (PI * (2 * x + 1) as f64 * k as f64 / (2 * n) as f64).cos();
        }
    }
    d
}

/// One `p × p` basis function of the 2-D DCT, indexed by frequency `(u, v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DctBasis {
    pub p: usize,
    pub u: usize,
    pub v: usize,
    /// Row-major `p × p` values; entry `(x, y)` pairs `u` with rows `x`.
    pub kernel: Vec<f64>,
}

impl DctBasis {
    pub fn new(p: usize, u: usize, v: usize) -> Result<Self> {
        Ok(DctBasis { p, u, v, kernel: dct_basis(p, u, v)? })
    }
}

/// `B[x][y] = α_u α_v cos(π(2x+1)u / 2p) cos(π(2y+1)v / 2p)`.
pub fn dct_basis(p: usize, u: usize, v: usize) -> Result<Vec<f64>> {
    if p == 0 || u >= p || v >= p {
        return Err(Error::config(format!(
            "frequency ({u}, {v}) outside the {p}x{p} DCT grid"
        )));
    }
    let d = dct_matrix(p);
    let mut k = vec![0.0; p * p];
    for x in 0..p {
        for y in 0..p {
            k[x * p + y] = d[u * p + x] * d[v * p + y];
        }
    }
    Ok(k)
}

/// `left · m · right` for row-major operands (`left` is `r × h`, `m` is
/// `h × w`, `right` is `w × c`).
fn sandwich(left: &[f64], r: usize, m: &[f64], h: usize, w: usize, right: &[f64], c: usize) -> Vec<f64> {
    let mut tmp = vec![0.0; r * w];
    for i in 0..r {
        for k in 0..h {
            let l = left[i * h + k];
            if l == 0.0 {
                continue;
            }
            for j in 0..w {
                tmp[i * w + j] += l * m[k * w + j];
            }
        }
    }
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for k in 0..w {
            let t = tmp[i * w + k];
            for j in 0..c {
                out[i * c + j] += t * right[k * c + j];
            }
        }
    }
    out
}

fn transpose(m: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = m[i * cols + j];
        }
    }
    t
}

/// Forward transform of a plain `h × w` grid: `f = D_h · A · D_wᵀ`.
pub fn dct2_grid(a: &[f64], h: usize, w: usize) -> Vec<f64> {
    let dh = dct_matrix(h);
    let dwt = transpose(&dct_matrix(w), w, w);
    sandwich(&dh, h, a, h, w, &dwt, w)
}

/// Inverse transform of a plain `h × w` spectrum: `A = D_hᵀ · f · D_w`.
pub fn idct2_grid(f: &[f64], h: usize, w: usize) -> Vec<f64> {
    let dht = transpose(&dct_matrix(h), h, h);
    let dw = dct_matrix(w);
    sandwich(&dht, h, f, h, w, &dw, w)
}

fn grid_dims(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match *t.shape() {
        [h, w] => Ok((h, w)),
        _ => Err(Error::Usage(format!("{op} expects an H×W tensor, got {:?}", t.shape()))),
    }
}

/// 2-D DCT of an `H × W` tensor. Differentiable; the transform is
/// orthonormal so its adjoint is [`idct2`].
pub fn dct2(a: &Tensor) -> Result<Tensor> {
    let (h, w) = grid_dims(a, "dct2")?;
    let f = dct2_grid(a.data(), h, w);
    Ok(Tensor::from_op(f, vec![h, w], &[a], move |g, _| {
        vec![Some(idct2_grid(g, h, w))]
    }))
}

/// Inverse 2-D DCT of an `H × W` spectrum.
pub fn idct2(f: &Tensor) -> Result<Tensor> {
    let (h, w) = grid_dims(f, "idct2")?;
    let a = idct2_grid(f.data(), h, w);
    Ok(Tensor::from_op(a, vec![h, w], &[f], move |g, _| {
        vec![Some(dct2_grid(g, h, w))]
    }))
}

/// Worst-case errors of the orthonormality, inversion and energy checks.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct DctCheck {
    pub p: usize,
    pub sizes: Vec<usize>,
    /// `max |⟨B_uv, B_u'v'⟩ − δ|` over all basis pairs of the `p × p` grid.
    pub gram_error: f64,
    /// `max |idct2(dct2(A)) − A|` over random grids of every size pair.
    pub round_trip_error: f64,
    /// `max |‖dct2(A)‖² − ‖A‖²| / ‖A‖²`.
    pub parseval_error: f64,
}

impl DctCheck {
    pub fn passed(&self, tol: f64) -> bool {
        self.gram_error <= tol && self.round_trip_error <= tol && self.parseval_error <= tol
    }
}

/// Numerically verify the transform on the `p × p` basis and on random
/// `h × w` grids for every `h, w` in `sizes`.
pub fn self_check(p: usize, sizes: &[usize], seed: u64) -> Result<DctCheck> {
    use rand::{Rng, SeedableRng};
    if p == 0 || sizes.contains(&0) {
        return Err(Error::config("DCT sizes must be positive"));
    }
    let bases: Vec<Vec<f64>> = (0..p * p).map(|i| dct_basis(p, i / p, i % p)).collect::<Result<_>>()?;
    let mut gram_error: f64 = 0.0;
    for (i, a) in bases.iter().enumerate() {
        for (j, b) in bases.iter().enumerate() {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            gram_error = gram_error.max((dot - (i == j) as u8 as f64).abs());
        }
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (mut round_trip_error, mut parseval_error): (f64, f64) = (0.0, 0.0);
    for &h in sizes {
        for &w in sizes {
            let a: Vec<f64> = (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let f = dct2_grid(&a, h, w);
            let back = idct2_grid(&f, h, w);
            for (x, y) in a.iter().zip(&back) {
                round_trip_error = round_trip_error.max((x - y).abs());
            }
            let ea: f64 = a.iter().map(|v| v * v).sum();
            let ef: f64 = f.iter().map(|v| v * v).sum();
            parseval_error = parseval_error.max((ea - ef).abs() / ea);
        }
    }
    Ok(DctCheck { p, sizes: sizes.to_vec(), gram_error, round_trip_error, parseval_error })
}
