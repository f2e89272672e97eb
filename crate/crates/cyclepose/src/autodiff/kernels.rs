//! Sequential CPU kernels behind the graph ops. Accumulation order is fixed,
//! so results are bitwise reproducible run to run.

use super::{real, Real};

/// `out += A[m,k] * B[k,n]`, row-major. The i-k-j loop order keeps the inner
/// loop over contiguous slices of `B` and `out`.
pub fn matmul_nn<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut out[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for j in 0..n {
                c_row[j] = c_row[j] + a_ip * b_row[j];
            }
        }
    }
}

/// `out += A[m,k] * B[n,k]^T`: rows of A dotted with rows of B.
pub fn matmul_nt<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut out[i * n..(i + 1) * n];
        for j in 0..n {
            c_row[j] = c_row[j] + dot(a_row, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `out += A[m,k]^T * G[m,n]`, accumulated as rank-1 updates so the inner
/// loop stays contiguous.
pub fn matmul_tn<T: Real>(a: &[T], g: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &a_ip) in a_row.iter().enumerate() {
            let c_row = &mut out[p * n..(p + 1) * n];
            for j in 0..n {
                c_row[j] = c_row[j] + a_ip * g_row[j];
            }
        }
    }
}

/// Four-way unrolled dot product; fixed summation order.
#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let n = a.len();
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (T::zero(), T::zero(), T::zero(), T::zero());
    for c in 0..chunks {
        let i = c * 4;
        s0 = s0 + a[i] * b[i];
        s1 = s1 + a[i + 1] * b[i + 1];
        s2 = s2 + a[i + 2] * b[i + 2];
        s3 = s3 + a[i + 3] * b[i + 3];
    }
    let mut s = (s0 + s1) + (s2 + s3);
    for i in chunks * 4..n {
        s = s + a[i] * b[i];
    }
    s
}

/// Transpose the last two axes of `g` matrices of shape `[m, n]`.
pub fn transpose_batched<T: Real>(x: &[T], g: usize, m: usize, n: usize, out: &mut [T]) {
    for b in 0..g {
        let src = &x[b * m * n..(b + 1) * m * n];
        let dst = &mut out[b * m * n..(b + 1) * m * n];
        for i in 0..m {
            for j in 0..n {
                dst[j * m + i] = src[i * n + j];
            }
        }
    }
}

/// `[a0, a1, a2, a3] -> [a0, a2, a1, a3]` copy.
pub fn swap_axes_1_2<T: Real>(x: &[T], a0: usize, a1: usize, a2: usize, a3: usize, out: &mut [T]) {
    for i0 in 0..a0 {
        for i1 in 0..a1 {
            for i2 in 0..a2 {
                let src = ((i0 * a1 + i1) * a2 + i2) * a3;
                let dst = ((i0 * a2 + i2) * a1 + i1) * a3;
                out[dst..dst + a3].copy_from_slice(&x[src..src + a3]);
            }
        }
    }
}

/// In-place stabilized softmax over rows of width `d`.
pub fn softmax_rows<T: Real>(x: &mut [T], rows: usize, d: usize) {
    for r in 0..rows {
        let row = &mut x[r * d..(r + 1) * d];
        let mut max = row[0];
        for &v in row.iter() {
            if v > max {
                max = v;
            }
        }
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn layer_norm_fwd<T: Real>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    eps: T,
    rows: usize,
    d: usize,
    out: &mut [T],
    mean: &mut [T],
    rstd: &mut [T],
) {
    let inv_d = T::one() / real::<T>(d as f64);
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mut mu = T::zero();
        for &v in row {
            mu = mu + v;
        }
        mu = mu * inv_d;
        let mut var = T::zero();
        for &v in row {
            let c = v - mu;
            var = var + c * c;
        }
        var = var * inv_d;
        let rs = T::one() / (var + eps).sqrt();
        mean[r] = mu;
        rstd[r] = rs;
        let o = &mut out[r * d..(r + 1) * d];
        for j in 0..d {
            o[j] = (row[j] - mu) * rs * gamma[j] + beta[j];
        }
    }
}

/// Standard layer-norm backward: with `xhat = (x - mean) * rstd`,
/// `dx = rstd * gamma_scaled_grad - mean terms` per row, and `dgamma`/`dbeta`
/// reduce over rows.
#[allow(clippy::too_many_arguments)]
pub fn layer_norm_bwd<T: Real>(
    x: &[T],
    gamma: &[T],
    mean: &[T],
    rstd: &[T],
    g: &[T],
    rows: usize,
    d: usize,
    dx: &mut [T],
    dgamma: &mut [T],
    dbeta: &mut [T],
) {
    let inv_d = T::one() / real::<T>(d as f64);
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let g_row = &g[r * d..(r + 1) * d];
        let (mu, rs) = (mean[r], rstd[r]);
        let mut sum_dy = T::zero();
        let mut sum_dy_xhat = T::zero();
        for j in 0..d {
            let xhat = (row[j] - mu) * rs;
            let dy = g_row[j] * gamma[j];
            sum_dy = sum_dy + dy;
            sum_dy_xhat = sum_dy_xhat + dy * xhat;
            dgamma[j] = dgamma[j] + g_row[j] * xhat;
            dbeta[j] = dbeta[j] + g_row[j];
        }
        let dx_row = &mut dx[r * d..(r + 1) * d];
        for j in 0..d {
            let xhat = (row[j] - mu) * rs;
            let dy = g_row[j] * gamma[j];
            dx_row[j] = rs * (dy - inv_d * sum_dy - xhat * inv_d * sum_dy_xhat);
        }
    }
}

const GELU_C0: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C1: f64 = 0.044_715;

#[inline]
pub fn gelu<T: Real>(x: T) -> T {
    let c0 = real::<T>(GELU_C0);
    let c1 = real::<T>(GELU_C1);
    let half = real::<T>(0.5);
    let u = c0 * (x + c1 * x * x * x);
    half * x * (T::one() + u.tanh())
}

#[inline]
pub fn gelu_grad<T: Real>(x: T) -> T {
    let c0 = real::<T>(GELU_C0);
    let c1 = real::<T>(GELU_C1);
    let half = real::<T>(0.5);
    let three = real::<T>(3.0);
    let u = c0 * (x + c1 * x * x * x);
    let t = u.tanh();
    let sech2 = T::one() - t * t;
    half * (T::one() + t) + half * x * sech2 * c0 * (T::one() + three * c1 * x * x)
}
