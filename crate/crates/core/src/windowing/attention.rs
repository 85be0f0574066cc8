use super::layout::{
    crop_top_left, cyclic_shift, pad_bottom_right, window_partition, window_reverse,
};
use super::mask::{shift_attention_mask, AttentionMask};
use super::WindowGrid;
use crate::tensor::{kernels, Scalar, Tape, Tensor};
use crate::{Error, Result};

/// Projection weights of one multi-head attention layer. Heads split the
/// channel axis into contiguous groups of `C / heads`.
#[derive(Clone, Copy)]
pub struct AttentionWeights<'a, T: Scalar> {
    pub wq: &'a Tensor<T>,
    pub bq: &'a Tensor<T>,
    pub wk: &'a Tensor<T>,
    pub bk: &'a Tensor<T>,
    pub wv: &'a Tensor<T>,
    pub bv: &'a Tensor<T>,
    pub wo: &'a Tensor<T>,
    pub bo: &'a Tensor<T>,
}

impl<T: Scalar> AttentionWeights<'_, T> {
    fn check(&self, c: usize, heads: usize) -> Result<()> {
        if heads == 0 || !c.is_multiple_of(heads) {
            return Err(Error::invalid(format!(
                "channels {c} are not divisible by {heads} heads"
            )));
        }
        for w in [self.wq, self.wk, self.wv, self.wo] {
            if w.shape() != [c, c] {
                return Err(Error::ShapeMismatch {
                    op: "attention weight",
                    lhs: vec![c, c],
                    rhs: w.shape().to_vec(),
                });
            }
        }
        for b in [self.bq, self.bk, self.bv, self.bo] {
            if b.shape() != [c] {
                return Err(Error::ShapeMismatch {
                    op: "attention bias",
                    lhs: vec![c],
                    rhs: b.shape().to_vec(),
                });
            }
        }
        Ok(())
    }
}

/// Output of [`window_attention_with_probs`].
pub struct AttentionOutput<T: Scalar> {
    /// `[nW, M², C]`
    pub output: Tensor<T>,
    /// Post-softmax weights, `[B, heads, nW_per_image, M², M²]`.
    pub probs: Tensor<T>,
}

/// Multi-head self-attention inside each window.
///
/// `xw` is `[B·nW, M², C]`. `mask`, when present, is an additive
/// `[nW, M², M²]` tensor applied to every image of the batch.
pub fn window_attention<T: Scalar>(
    tape: &Tape<T>,
    xw: &Tensor<T>,
    weights: &AttentionWeights<'_, T>,
    heads: usize,
    mask: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    window_attention_with_probs(tape, xw, weights, heads, mask).map(|o| o.output)
}

pub fn window_attention_with_probs<T: Scalar>(
    tape: &Tape<T>,
    xw: &Tensor<T>,
    weights: &AttentionWeights<'_, T>,
    heads: usize,
    mask: Option<&Tensor<T>>,
) -> Result<AttentionOutput<T>> {
    let [nwb, n, c] = *xw.shape() else {
        return Err(Error::invalid(format!(
            "window_attention expects [nW, M², C], got {:?}",
            xw.shape()
        )));
    };
    weights.check(c, heads)?;
    let windows = match mask {
        Some(m) => {
            if m.rank() != 3 || m.shape()[1..] != [n, n] || nwb % m.shape()[0] != 0 {
                return Err(Error::ShapeMismatch {
                    op: "attention mask",
                    lhs: vec![nwb, n, n],
                    rhs: m.shape().to_vec(),
                });
            }
            m.shape()[0]
        }
        None => nwb,
    };
    let batch = nwb / windows;
    let d = c / heads;

    // [B·nW, n, C] → [B, heads, nW, n, d] → [B·heads·nW, n, d]
    let split = |t: &Tensor<T>| -> Result<Tensor<T>> {
        let t = tape.reshape(t, [batch, windows, n, heads, d])?;
        let t = tape.permute(&t, &[0, 3, 1, 2, 4])?;
        tape.reshape(&t, [batch * heads * windows, n, d])
    };
    let q = split(&tape.linear(xw, weights.wq, Some(weights.bq))?)?;
    let k = split(&tape.linear(xw, weights.wk, Some(weights.bk))?)?;
    let v = split(&tape.linear(xw, weights.wv, Some(weights.bv))?)?;

    let scores = tape.matmul_nt(&q, &k)?;
    let scores = tape.scale(&scores, T::one() / T::from_f64(d as f64).sqrt())?;
    let scores = tape.reshape(&scores, [batch * heads, windows, n, n])?;
    let scores = match mask {
        Some(m) => tape.add(&scores, m)?,
        None => scores,
    };
    let probs = tape.softmax(&scores, 3)?;
    let flat = tape.reshape(&probs, [batch * heads * windows, n, n])?;
    let ctx = tape.matmul(&flat, &v)?;
    let ctx = tape.reshape(&ctx, [batch, heads, windows, n, d])?;
    let ctx = tape.permute(&ctx, &[0, 2, 3, 1, 4])?;
    let ctx = tape.reshape(&ctx, [nwb, n, c])?;
    let output = tape.linear(&ctx, weights.wo, Some(weights.bo))?;
    let probs = tape.reshape(&probs, [batch, heads, windows, n, n])?;
    Ok(AttentionOutput { output, probs })
}

/// W-MSA (`grid.shift == 0`) or SW-MSA over a `[B, H, W, C]` map: pad to
/// whole windows, roll by `−shift`, attend within windows under the region
/// mask, then undo the roll and the padding.
pub fn shifted_window_attention<T: Scalar>(
    tape: &Tape<T>,
    x: &Tensor<T>,
    weights: &AttentionWeights<'_, T>,
    heads: usize,
    grid: &WindowGrid,
) -> Result<Tensor<T>> {
    let [_, h, w, _] = *x.shape() else {
        return Err(Error::invalid(format!(
            "shifted_window_attention expects [B, H, W, C], got {:?}",
            x.shape()
        )));
    };
    if (h, w) != (grid.h, grid.w) {
        return Err(Error::ShapeMismatch {
            op: "shifted_window_attention",
            lhs: vec![grid.h, grid.w],
            rhs: vec![h, w],
        });
    }
    let (ph, pw) = (grid.padded_h(), grid.padded_w());
    let s = grid.shift as isize;
    let mut y = if grid.needs_padding() {
        pad_bottom_right(tape, x, ph, pw)?
    } else {
        x.clone()
    };
    if s > 0 {
        y = cyclic_shift(tape, &y, -s, -s)?;
    }
    let windows = window_partition(tape, &y, grid.window)?;
    let mask = shift_attention_mask(grid);
    let additive = (!mask.is_all_zero()).then(|| mask.to_additive::<T>());
    let attended = window_attention(tape, &windows, weights, heads, additive.as_ref())?;
    let mut y = window_reverse(tape, &attended, grid.window, ph, pw)?;
    if s > 0 {
        y = cyclic_shift(tape, &y, s, s)?;
    }
    if grid.needs_padding() {
        y = crop_top_left(tape, &y, h, w)?;
    }
    Ok(y)
}

/// Gradient-free attention over `[nW, n, C]` windows that never
/// materializes more than a block of score rows at a time, so a single
/// window may hold the whole token grid. Used for timing global versus
/// windowed attention.
pub fn attention_inference<T: Scalar>(
    xw: &Tensor<T>,
    weights: &AttentionWeights<'_, T>,
    heads: usize,
    mask: Option<&AttentionMask>,
) -> Result<Tensor<T>> {
    let [nw, n, c] = *xw.shape() else {
        return Err(Error::invalid(format!(
            "attention_inference expects [nW, n, C], got {:?}",
            xw.shape()
        )));
    };
    weights.check(c, heads)?;
    if let Some(m) = mask {
        if m.tokens() != n || nw % m.num_windows() != 0 {
            return Err(Error::invalid("mask does not fit the windows"));
        }
    }
    let rows = nw * n;
    let project = |w: &Tensor<T>, b: &Tensor<T>| {
        let mut out = vec![T::zero(); rows * c];
        kernels::gemm(
            rows,
            c,
            c,
            xw.data(),
            false,
            w.data(),
            false,
            &mut out,
            false,
        );
        for r in out.chunks_exact_mut(c) {
            for (o, &bv) in r.iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        out
    };
    let (q, k, v) = (
        project(weights.wq, weights.bq),
        project(weights.wk, weights.bk),
        project(weights.wv, weights.bv),
    );
    let d = c / heads;
    let scale = T::one() / T::from_f64(d as f64).sqrt();
    let neg = T::from_f64(super::MASK_NEG);
    let block = (1usize << 20).div_ceil(n).clamp(1, n);

    // Per-head contiguous copies so the block products are plain GEMMs.
    let head_slice = |src: &[T], win: usize, h: usize| -> Vec<T> {
        let mut out = Vec::with_capacity(n * d);
        for t in 0..n {
            let row = (win * n + t) * c + h * d;
            out.extend_from_slice(&src[row..row + d]);
        }
        out
    };
    let mut ctx = vec![T::zero(); rows * c];
    let mut scores = vec![T::zero(); block * n];
    let mut row_out = vec![T::zero(); block * d];
    for win in 0..nw {
        for h in 0..heads {
            let (qh, kh, vh) = (
                head_slice(&q, win, h),
                head_slice(&k, win, h),
                head_slice(&v, win, h),
            );
            for start in (0..n).step_by(block) {
                let r = block.min(n - start);
                let s = &mut scores[..r * n];
                kernels::gemm(r, d, n, &qh[start * d..], false, &kh, true, s, false);
                for (i, row) in s.chunks_exact_mut(n).enumerate() {
                    for (j, val) in row.iter_mut().enumerate() {
                        *val *= scale;
                        if let Some(m) = mask {
                            if m.is_forbidden(win % m.num_windows(), start + i, j) {
                                *val += neg;
                            }
                        }
                    }
                    kernels::softmax_in_place(row);
                }
                let o = &mut row_out[..r * d];
                kernels::gemm(r, n, d, s, false, &vh, false, o, false);
                for i in 0..r {
                    let dst = (win * n + start + i) * c + h * d;
                    ctx[dst..dst + d].copy_from_slice(&o[i * d..(i + 1) * d]);
                }
            }
        }
    }
    let mut out = vec![T::zero(); rows * c];
    kernels::gemm(
        rows,
        c,
        c,
        &ctx,
        false,
        weights.wo.data(),
        false,
        &mut out,
        false,
    );
    for r in out.chunks_exact_mut(c) {
        for (o, &bv) in r.iter_mut().zip(weights.bo.data()) {
            *o += bv;
        }
    }
    Tensor::from_vec([nw, n, c], out)
}
