use std::sync::Arc;

use super::{check_schema, InputNorm, ModelConfig, StageDims};
use crate::tensor::{Mode, Scalar, Tape, Tensor};
use crate::windowing::{shifted_window_attention, AttentionWeights, WindowGrid};
use crate::{Error, Params, Result};

/// Applies `norm` to a `[B, H, W, C]` batch. Per-image statistics use the
/// population variance; the deviation is floored at 0.01 so flat images map
/// to zeros instead of blowing up.
pub fn normalize_images<T: Scalar>(images: &Tensor<T>, norm: InputNorm) -> Result<Tensor<T>> {
    let [b, h, w, c] = *images.shape() else {
        return Err(Error::invalid(format!(
            "expected [B, H, W, C] images, got {:?}",
            images.shape()
        )));
    };
    if norm == InputNorm::Unit {
        return Ok(images.detach());
    }
    let per = h * w * c;
    let n = (h * w) as f64;
    let mut out = Vec::with_capacity(images.len());
    for img in images.data().chunks_exact(per.max(1)).take(b) {
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for (i, v) in img.iter().enumerate() {
            mean[i % c] += v.as_f64() / n;
        }
        for (i, v) in img.iter().enumerate() {
            var[i % c] += (v.as_f64() - mean[i % c]).powi(2) / n;
        }
        let inv: Vec<f64> = var.iter().map(|v| 1.0 / v.sqrt().max(0.01)).collect();
        out.extend(
            img.iter()
                .enumerate()
                .map(|(i, v)| T::from_f64((v.as_f64() - mean[i % c]) * inv[i % c])),
        );
    }
    Tensor::from_vec([b, h, w, c], out)
}

/// Splits `[B, H, W, Cin]` images into non-overlapping `p × p` patches:
/// `[B, H/p, W/p, p²·Cin]`, patches row-major, each flattened row-major
/// over pixels then channels.
pub fn patch_extract<T: Scalar>(tape: &Tape<T>, images: &Tensor<T>, p: usize) -> Result<Tensor<T>> {
    let [b, h, w, cin] = *images.shape() else {
        return Err(Error::invalid(format!(
            "patch_extract expects [B, H, W, C] images, got {:?}",
            images.shape()
        )));
    };
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(Error::invalid(format!(
            "a {h}x{w} image is not divisible into {p}x{p} patches"
        )));
    }
    let (th, tw) = (h / p, w / p);
    let mut index = Vec::with_capacity(b * h * w);
    for bi in 0..b {
        for ti in 0..th {
            for tj in 0..tw {
                for py in 0..p {
                    for px in 0..p {
                        index.push((bi * h + ti * p + py) * w + tj * p + px);
                    }
                }
            }
        }
    }
    let patches = tape.gather_rows(images, Arc::new(index), &[b, th, tw, p * p])?;
    tape.reshape(&patches, [b, th, tw, p * p * cin])
}

/// `patches · We (+ pos)`; `pos` is `[N, C]` with `N = h·w`.
pub fn patch_embed<T: Scalar>(
    tape: &Tape<T>,
    patches: &Tensor<T>,
    we: &Tensor<T>,
    pos: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let y = tape.matmul(patches, we)?;
    let Some(pos) = pos else {
        return Ok(y);
    };
    let [b, h, w, c] = *y.shape() else {
        return Err(Error::invalid(format!(
            "patch_embed expects [B, h, w, d] patches, got {:?}",
            patches.shape()
        )));
    };
    if pos.shape() != [h * w, c] {
        return Err(Error::ShapeMismatch {
            op: "positional embedding",
            lhs: vec![h * w, c],
            rhs: pos.shape().to_vec(),
        });
    }
    let flat = tape.reshape(&y, [b, h * w, c])?;
    tape.reshape(&tape.add(&flat, pos)?, [b, h, w, c])
}

/// Per-block settings that do not live in the parameter map.
#[derive(Debug, Clone, Copy)]
pub struct BlockOptions {
    pub heads: usize,
    pub dropout_rate: f64,
    pub eps: f64,
}

fn attention_weights<'a, T: Scalar>(
    params: &'a Params<T>,
    prefix: &str,
) -> Result<AttentionWeights<'a, T>> {
    let g = |name: &str| params.require(&format!("{prefix}.attn.{name}"));
    Ok(AttentionWeights {
        wq: g("Wq")?,
        bq: g("bq")?,
        wk: g("Wk")?,
        bk: g("bk")?,
        wv: g("Wv")?,
        bv: g("bv")?,
        wo: g("Wo")?,
        bo: g("bo")?,
    })
}

fn norm<T: Scalar>(
    tape: &Tape<T>,
    x: &Tensor<T>,
    params: &Params<T>,
    prefix: &str,
    eps: f64,
) -> Result<Tensor<T>> {
    tape.layer_norm(
        x,
        params.require(&format!("{prefix}.gamma"))?,
        params.require(&format!("{prefix}.beta"))?,
        T::from_f64(eps),
    )
}

/// `Linear(C → rC) → GELU → dropout → Linear(rC → C) → dropout`.
pub fn mlp<T: Scalar>(
    tape: &Tape<T>,
    x: &Tensor<T>,
    params: &Params<T>,
    prefix: &str,
    dropout_rate: f64,
    mode: &mut Mode,
) -> Result<Tensor<T>> {
    let g = |name: &str| params.require(&format!("{prefix}.{name}"));
    let h = tape.gelu(&tape.linear(x, g("W1")?, Some(g("b1")?))?)?;
    let h = tape.dropout(&h, dropout_rate, mode)?;
    let y = tape.linear(&h, g("W2")?, Some(g("b2")?))?;
    tape.dropout(&y, dropout_rate, mode)
}

/// One pre-norm transformer block on `[B, h, w, C]`:
///
/// ```text
/// ẑ = (S)W-MSA(LN(z)) + z
/// z' = MLP(LN(ẑ)) + ẑ
/// ```
pub fn swin_block<T: Scalar>(
    tape: &Tape<T>,
    z: &Tensor<T>,
    params: &Params<T>,
    prefix: &str,
    grid: &WindowGrid,
    opts: &BlockOptions,
    mode: &mut Mode,
) -> Result<Tensor<T>> {
    let weights = attention_weights(params, prefix)?;
    let a = shifted_window_attention(
        tape,
        &norm(tape, z, params, &format!("{prefix}.norm1"), opts.eps)?,
        &weights,
        opts.heads,
        grid,
    )?;
    let z_hat = tape.add(&a, z)?;
    let m = mlp(
        tape,
        &norm(tape, &z_hat, params, &format!("{prefix}.norm2"), opts.eps)?,
        params,
        &format!("{prefix}.mlp"),
        opts.dropout_rate,
        mode,
    )?;
    tape.add(&m, &z_hat)
}

/// A W-MSA block followed by an SW-MSA block: the four residual updates of
/// one block pair, using blocks `2·pair` and `2·pair + 1` of `stage`.
#[allow(clippy::too_many_arguments)]
pub fn swin_block_pair<T: Scalar>(
    tape: &Tape<T>,
    z: &Tensor<T>,
    params: &Params<T>,
    stage: usize,
    pair: usize,
    dims: &StageDims,
    opts: &BlockOptions,
    mode: &mut Mode,
) -> Result<Tensor<T>> {
    let z = swin_block(
        tape,
        z,
        params,
        &format!("stage{stage}.block{}", 2 * pair),
        &dims.grid_w_msa,
        opts,
        mode,
    )?;
    swin_block(
        tape,
        &z,
        params,
        &format!("stage{stage}.block{}", 2 * pair + 1),
        &dims.grid_sw_msa,
        opts,
        mode,
    )
}

/// Concatenates each 2×2 neighbourhood's channels in the order (0,0), (0,1),
/// (1,0), (1,1), layer-normalizes the 4C vector and projects it to 2C.
pub fn patch_merging<T: Scalar>(
    tape: &Tape<T>,
    z: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    wm: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    let [b, h, w, c] = *z.shape() else {
        return Err(Error::invalid(format!(
            "patch_merging expects [B, h, w, C], got {:?}",
            z.shape()
        )));
    };
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::invalid(format!(
            "cannot merge an odd {h}x{w} token grid"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut index = Vec::with_capacity(b * h * w);
    for bi in 0..b {
        for i in 0..oh {
            for j in 0..ow {
                for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    index.push((bi * h + 2 * i + di) * w + 2 * j + dj);
                }
            }
        }
    }
    let cat = tape.gather_rows(z, Arc::new(index), &[b, oh, ow, 4])?;
    let cat = tape.reshape(&cat, [b, oh, ow, 4 * c])?;
    let normed = tape.layer_norm(&cat, gamma, beta, T::from_f64(eps))?;
    tape.matmul(&normed, wm)
}

/// Global average pooling over tokens, then a dense softmax layer: `[B, K]`.
pub fn classify<T: Scalar>(
    tape: &Tape<T>,
    z: &Tensor<T>,
    wc: &Tensor<T>,
    bc: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [b, h, w, c] = *z.shape() else {
        return Err(Error::invalid(format!(
            "classify expects [B, h, w, C], got {:?}",
            z.shape()
        )));
    };
    let pooled = tape.mean_axis(&tape.reshape(z, [b, h * w, c])?, 1)?;
    let logits = tape.linear(&pooled, wc, Some(bc))?;
    tape.softmax(&logits, 1)
}

/// Stage stack applied to `[B, h, w, C]` patch embeddings; returns the
/// pre-pooling features of the last stage.
pub fn encode<T: Scalar>(
    tape: &Tape<T>,
    tokens: &Tensor<T>,
    config: &ModelConfig,
    params: &Params<T>,
    mode: &mut Mode,
) -> Result<Tensor<T>> {
    let stages = config.stages()?;
    let mut z = tokens.clone();
    for (s, (dims, &depth)) in stages.iter().zip(&config.depths).enumerate() {
        let opts = BlockOptions {
            heads: dims.heads,
            dropout_rate: config.dropout_rate,
            eps: config.layer_norm_eps,
        };
        for pair in 0..depth {
            z = swin_block_pair(tape, &z, params, s, pair, dims, &opts, mode)?;
        }
        if s + 1 < stages.len() {
            z = patch_merging(
                tape,
                &z,
                params.require(&format!("stage{s}.merge.norm.gamma"))?,
                params.require(&format!("stage{s}.merge.norm.beta"))?,
                params.require(&format!("stage{s}.merge.W"))?,
                config.layer_norm_eps,
            )?;
        }
    }
    Ok(z)
}

/// Images `[B, S, S, Cin]` to last-stage features `[B, h, w, C_last]`.
pub fn forward_features<T: Scalar>(
    tape: &Tape<T>,
    images: &Tensor<T>,
    config: &ModelConfig,
    params: &Params<T>,
    mode: &mut Mode,
) -> Result<Tensor<T>> {
    check_schema(config, params)?;
    let s = config.image_size;
    if images.rank() != 4 || images.shape()[1..] != [s, s, config.in_channels] {
        return Err(Error::ShapeMismatch {
            op: "model input",
            lhs: vec![
                images.shape().first().copied().unwrap_or(0),
                s,
                s,
                config.in_channels,
            ],
            rhs: images.shape().to_vec(),
        });
    }
    let patches = patch_extract(tape, images, config.patch_size)?;
    let pos = if config.use_pos_embed {
        Some(params.require("patch_embed.pos")?)
    } else {
        None
    };
    let tokens = patch_embed(tape, &patches, params.require("patch_embed.W")?, pos)?;
    encode(tape, &tokens, config, params, mode)
}

/// Class probabilities `[B, num_classes]`.
pub fn model_forward<T: Scalar>(
    tape: &Tape<T>,
    images: &Tensor<T>,
    config: &ModelConfig,
    params: &Params<T>,
    mode: &mut Mode,
) -> Result<Tensor<T>> {
    let z = forward_features(tape, images, config, params, mode)?;
    classify(
        tape,
        &z,
        params.require("head.W")?,
        params.require("head.b")?,
    )
}
