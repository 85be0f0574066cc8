//! Slice-level numeric kernels shared by the tape operations.

use super::Scalar;

/// Row index meaning "emit zeros" in [`gather_rows`].
pub const PAD: usize = usize::MAX;

/// `c (+)= op(a) · op(b)` for row-major `a`, `b`, `c`.
///
/// `op(a)` is `m×k` (stored `k×m` when `trans_a`), `op(b)` is `k×n` (stored
/// `n×k` when `trans_b`). With `accumulate` the product is added to `c`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    trans_a: bool,
    b: &[T],
    trans_b: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if trans_a {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if trans_b {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: extents checked above; `c` is uniquely borrowed.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Splits a shape around `axis` into (outer, len, inner) extents.
pub fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn softmax_forward<T: Scalar>(x: &[T], outer: usize, len: usize, inner: usize) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    if inner == 1 {
        for (xs, ys) in x.chunks_exact(len).zip(y.chunks_exact_mut(len)) {
            softmax_row(xs, ys);
        }
        return y;
    }
    let mut buf_x = vec![T::zero(); len];
    let mut buf_y = vec![T::zero(); len];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            for j in 0..len {
                buf_x[j] = x[base + j * inner];
            }
            softmax_row(&buf_x, &mut buf_y);
            for j in 0..len {
                y[base + j * inner] = buf_y[j];
            }
        }
    }
    y
}

pub fn softmax_row<T: Scalar>(x: &[T], y: &mut [T]) {
    let max = x.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut sum = T::zero();
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv = (xv - max).exp();
        sum += *yv;
    }
    let inv = T::one() / sum;
    for yv in y.iter_mut() {
        *yv *= inv;
    }
}

pub fn softmax_in_place<T: Scalar>(x: &mut [T]) {
    let max = x.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut sum = T::zero();
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = T::one() / sum;
    for v in x.iter_mut() {
        *v *= inv;
    }
}

/// `dx = y ⊙ (dy − Σ dy⊙y)` along the softmax axis.
pub fn softmax_backward<T: Scalar>(
    y: &[T],
    dy: &[T],
    outer: usize,
    len: usize,
    inner: usize,
) -> Vec<T> {
    let mut dx = vec![T::zero(); y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut dot = T::zero();
            for j in 0..len {
                let at = base + j * inner;
                dot += dy[at] * y[at];
            }
            for j in 0..len {
                let at = base + j * inner;
                dx[at] = y[at] * (dy[at] - dot);
            }
        }
    }
    dx
}

pub struct LayerNormCache<T> {
    pub xhat: Vec<T>,
    pub rstd: Vec<T>,
}

/// Normalizes each contiguous row of length `c` with the biased variance.
pub fn layer_norm_forward<T: Scalar>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    c: usize,
    eps: T,
) -> (Vec<T>, LayerNormCache<T>) {
    let rows = x.len() / c;
    let inv_c = T::one() / T::from_f64(c as f64);
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); rows];
    for r in 0..rows {
        let xs = &x[r * c..(r + 1) * c];
        let mean = xs.iter().copied().sum::<T>() * inv_c;
        let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_c;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        let hs = &mut xhat[r * c..(r + 1) * c];
        let ys = &mut y[r * c..(r + 1) * c];
        for j in 0..c {
            hs[j] = (xs[j] - mean) * rs;
            ys[j] = gamma[j] * hs[j] + beta[j];
        }
    }
    (y, LayerNormCache { xhat, rstd })
}

/// Returns (dx, dgamma, dbeta).
pub fn layer_norm_backward<T: Scalar>(
    dy: &[T],
    gamma: &[T],
    cache: &LayerNormCache<T>,
    c: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let rows = dy.len() / c;
    let inv_c = T::one() / T::from_f64(c as f64);
    let mut dx = vec![T::zero(); dy.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    let mut dxhat = vec![T::zero(); c];
    for r in 0..rows {
        let dys = &dy[r * c..(r + 1) * c];
        let hs = &cache.xhat[r * c..(r + 1) * c];
        let mut mean_d = T::zero();
        let mut mean_dh = T::zero();
        for j in 0..c {
            dgamma[j] += dys[j] * hs[j];
            dbeta[j] += dys[j];
            dxhat[j] = dys[j] * gamma[j];
            mean_d += dxhat[j];
            mean_dh += dxhat[j] * hs[j];
        }
        mean_d *= inv_c;
        mean_dh *= inv_c;
        let rs = cache.rstd[r];
        for j in 0..c {
            dx[r * c + j] = rs * (dxhat[j] - mean_d - hs[j] * mean_dh);
        }
    }
    (dx, dgamma, dbeta)
}

/// Standard normal CDF via the exact erf form.
pub fn normal_cdf<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    half * (T::one() + (x * T::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

pub fn gelu<T: Scalar>(x: T) -> T {
    x * normal_cdf(x)
}

/// d/dx [x·Φ(x)] = Φ(x) + x·φ(x).
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let inv_sqrt_2pi = T::from_f64(0.398_942_280_401_432_7);
    let pdf = (-(x * x) * T::from_f64(0.5)).exp() * inv_sqrt_2pi;
    normal_cdf(x) + x * pdf
}

/// Gathers rows of length `row_len`; index [`PAD`] yields a zero row.
pub fn gather_rows<T: Scalar>(x: &[T], row_len: usize, index: &[usize]) -> Vec<T> {
    let mut out = vec![T::zero(); index.len() * row_len];
    for (dst, &src) in out.chunks_exact_mut(row_len).zip(index) {
        if src != PAD {
            dst.copy_from_slice(&x[src * row_len..(src + 1) * row_len]);
        }
    }
    out
}

/// Adjoint of [`gather_rows`]: adds each output row back to its source row.
pub fn scatter_add_rows<T: Scalar>(
    dy: &[T],
    row_len: usize,
    index: &[usize],
    source_rows: usize,
) -> Vec<T> {
    let mut dx = vec![T::zero(); source_rows * row_len];
    for (src, &dst) in dy.chunks_exact(row_len).zip(index) {
        if dst != PAD {
            for (d, &s) in dx[dst * row_len..(dst + 1) * row_len].iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    dx
}

/// Source flat indices for permuting the axes of `shape`: output element `i`
/// (row-major over the permuted shape) reads input element `index[i]`.
pub fn permute_index(shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let rank = shape.len();
    let mut strides = vec![1usize; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let out_strides: Vec<usize> = axes.iter().map(|&a| strides[a]).collect();
    let total: usize = shape.iter().product();
    let mut index = Vec::with_capacity(total);
    let mut counter = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..total {
        index.push(src);
        for d in (0..rank).rev() {
            counter[d] += 1;
            src += out_strides[d];
            if counter[d] < out_shape[d] {
                break;
            }
            src -= out_strides[d] * out_shape[d];
            counter[d] = 0;
        }
    }
    (index, out_shape)
}
