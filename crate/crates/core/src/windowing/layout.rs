//! Token-grid rearrangements: padding, cyclic shift, window partition.
//!
//! All of them are row gathers over the channel axis, so each is one
//! [`Tape::gather_rows`] call with a precomputed index map and gets its
//! gradient (a scatter-add) for free.

use std::sync::Arc;

use crate::tensor::kernels::PAD;
use crate::tensor::{Scalar, Tape, Tensor};
use crate::{Error, Result};

/// Geometry of one (shifted) window attention layer over an `h × w` grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowGrid {
    pub h: usize,
    pub w: usize,
    /// Window side `M` in tokens.
    pub window: usize,
    /// 0 for W-MSA, typically `M / 2` for SW-MSA.
    pub shift: usize,
}

impl WindowGrid {
    pub fn new(h: usize, w: usize, window: usize, shift: usize) -> Result<Self> {
        if h == 0 || w == 0 || window == 0 {
            return Err(Error::invalid(format!(
                "window grid extents must be positive (h={h}, w={w}, M={window})"
            )));
        }
        if shift >= window {
            return Err(Error::invalid(format!(
                "shift {shift} must be smaller than the window {window}"
            )));
        }
        Ok(WindowGrid {
            h,
            w,
            window,
            shift,
        })
    }

    /// Height after zero-padding to a multiple of the window.
    pub fn padded_h(&self) -> usize {
        self.h.div_ceil(self.window) * self.window
    }

    pub fn padded_w(&self) -> usize {
        self.w.div_ceil(self.window) * self.window
    }

    pub fn needs_padding(&self) -> bool {
        self.padded_h() != self.h || self.padded_w() != self.w
    }

    pub fn num_windows(&self) -> usize {
        (self.padded_h() / self.window) * (self.padded_w() / self.window)
    }

    pub fn tokens_per_window(&self) -> usize {
        self.window * self.window
    }
}

fn bhwc(x: &Tensor<impl Scalar>, op: &str) -> Result<(usize, usize, usize, usize)> {
    match *x.shape() {
        [b, h, w, c] => Ok((b, h, w, c)),
        _ => Err(Error::invalid(format!(
            "{op} expects a [B, H, W, C] tensor, got {:?}",
            x.shape()
        ))),
    }
}

/// Output row `(b, i, j)` reads input row `src(i, j)` of batch `b`.
fn grid_index(
    batch: usize,
    out_h: usize,
    out_w: usize,
    in_hw: usize,
    src: impl Fn(usize, usize) -> usize,
) -> Vec<usize> {
    let mut index = Vec::with_capacity(batch * out_h * out_w);
    for b in 0..batch {
        for i in 0..out_h {
            for j in 0..out_w {
                let s = src(i, j);
                index.push(if s == PAD { PAD } else { b * in_hw + s });
            }
        }
    }
    index
}

/// `y[i, j] = x[(i − dy) mod H, (j − dx) mod W]` on a `[B, H, W, C]` map.
pub fn cyclic_shift<T: Scalar>(
    tape: &Tape<T>,
    x: &Tensor<T>,
    dy: isize,
    dx: isize,
) -> Result<Tensor<T>> {
    let (b, h, w, _) = bhwc(x, "cyclic_shift")?;
    let (hi, wi) = (h as isize, w as isize);
    let index = grid_index(b, h, w, h * w, |i, j| {
        let si = (i as isize - dy).rem_euclid(hi) as usize;
        let sj = (j as isize - dx).rem_euclid(wi) as usize;
        si * w + sj
    });
    tape.gather_rows(x, Arc::new(index), &[b, h, w])
}

/// Splits `[B, H, W, C]` into `[B·(H/M)·(W/M), M², C]` windows, window-major
/// in row-major window order, tokens row-major within each window.
pub fn window_partition<T: Scalar>(tape: &Tape<T>, x: &Tensor<T>, m: usize) -> Result<Tensor<T>> {
    let (b, h, w, _) = bhwc(x, "window_partition")?;
    if m == 0 || h % m != 0 || w % m != 0 {
        return Err(Error::invalid(format!(
            "feature map {h}x{w} is not divisible by window {m}"
        )));
    }
    let (nh, nw) = (h / m, w / m);
    let mut index = Vec::with_capacity(b * h * w);
    for bi in 0..b {
        for wy in 0..nh {
            for wx in 0..nw {
                for ty in 0..m {
                    for tx in 0..m {
                        index.push(bi * h * w + (wy * m + ty) * w + wx * m + tx);
                    }
                }
            }
        }
    }
    tape.gather_rows(x, Arc::new(index), &[b * nh * nw, m * m])
}

/// Inverse of [`window_partition`].
pub fn window_reverse<T: Scalar>(
    tape: &Tape<T>,
    windows: &Tensor<T>,
    m: usize,
    h: usize,
    w: usize,
) -> Result<Tensor<T>> {
    let [nwb, n, _] = *windows.shape() else {
        return Err(Error::invalid(format!(
            "window_reverse expects [nW, M², C], got {:?}",
            windows.shape()
        )));
    };
    if m == 0
        || !h.is_multiple_of(m)
        || !w.is_multiple_of(m)
        || n != m * m
        || nwb % ((h / m) * (w / m)) != 0
    {
        return Err(Error::invalid(format!(
            "{nwb} windows of {n} tokens are inconsistent with a {h}x{w} map and window {m}"
        )));
    }
    let (nh, nw) = (h / m, w / m);
    let b = nwb / (nh * nw);
    let index: Vec<usize> = (0..b * h * w)
        .map(|flat| {
            let bi = flat / (h * w);
            let (i, j) = ((flat / w) % h, flat % w);
            let win = bi * nh * nw + (i / m) * nw + j / m;
            win * n + (i % m) * m + j % m
        })
        .collect();
    tape.gather_rows(windows, Arc::new(index), &[b, h, w])
}

/// Zero-pads `[B, H, W, C]` at the bottom and right to `[B, ph, pw, C]`.
pub fn pad_bottom_right<T: Scalar>(
    tape: &Tape<T>,
    x: &Tensor<T>,
    ph: usize,
    pw: usize,
) -> Result<Tensor<T>> {
    let (b, h, w, _) = bhwc(x, "pad")?;
    if ph < h || pw < w {
        return Err(Error::invalid(format!("cannot pad {h}x{w} to {ph}x{pw}")));
    }
    let index = grid_index(b, ph, pw, h * w, |i, j| {
        if i < h && j < w {
            i * w + j
        } else {
            PAD
        }
    });
    tape.gather_rows(x, Arc::new(index), &[b, ph, pw])
}

/// Keeps the top-left `h × w` region of `[B, H', W', C]`.
pub fn crop_top_left<T: Scalar>(
    tape: &Tape<T>,
    x: &Tensor<T>,
    h: usize,
    w: usize,
) -> Result<Tensor<T>> {
    let (b, ph, pw, _) = bhwc(x, "crop")?;
    if h > ph || w > pw || h == 0 || w == 0 {
        return Err(Error::invalid(format!("cannot crop {ph}x{pw} to {h}x{w}")));
    }
    let index = grid_index(b, h, w, ph * pw, |i, j| i * pw + j);
    tape.gather_rows(x, Arc::new(index), &[b, h, w])
}
