//! Brute-force window attention that never shifts, wraps or partitions.
//!
//! A token at `(i, j)` belongs to window `(⌊(i−s)/M⌋, ⌊(j−s)/M⌋)` of the
//! shifted layout; it attends to every other real token of the same window.

#![allow(dead_code)]

pub struct DenseWeights {
    /// Row-major `[C, C]` projections and `[C]` biases.
    pub wq: Vec<f64>,
    pub bq: Vec<f64>,
    pub wk: Vec<f64>,
    pub bk: Vec<f64>,
    pub wv: Vec<f64>,
    pub bv: Vec<f64>,
    pub wo: Vec<f64>,
    pub bo: Vec<f64>,
}

fn project(x: &[f64], w: &[f64], b: &[f64], c: usize) -> Vec<f64> {
    let rows = x.len() / c;
    let mut out = vec![0.0; rows * c];
    for r in 0..rows {
        for o in 0..c {
            let mut acc = b[o];
            for k in 0..c {
                acc += x[r * c + k] * w[k * c + o];
            }
            out[r * c + o] = acc;
        }
    }
    out
}

fn group(i: usize, s: usize, m: usize) -> i64 {
    (i as i64 - s as i64).div_euclid(m as i64)
}

/// `x` is `[B, H, W, C]` row-major; returns the same layout.
#[allow(clippy::too_many_arguments)]
pub fn region_attention(
    x: &[f64],
    b: usize,
    h: usize,
    w: usize,
    c: usize,
    heads: usize,
    m: usize,
    s: usize,
    p: &DenseWeights,
) -> Vec<f64> {
    let d = c / heads;
    let hw = h * w;
    let q = project(x, &p.wq, &p.bq, c);
    let k = project(x, &p.wk, &p.bk, c);
    let v = project(x, &p.wv, &p.bv, c);
    let mut ctx = vec![0.0; x.len()];
    for bi in 0..b {
        for t in 0..hw {
            let (ti, tj) = (t / w, t % w);
            let peers: Vec<usize> = (0..hw)
                .filter(|&u| {
                    group(u / w, s, m) == group(ti, s, m) && group(u % w, s, m) == group(tj, s, m)
                })
                .collect();
            for hd in 0..heads {
                let qrow = &q[(bi * hw + t) * c + hd * d..][..d];
                let logits: Vec<f64> = peers
                    .iter()
                    .map(|&u| {
                        let krow = &k[(bi * hw + u) * c + hd * d..][..d];
                        qrow.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt()
                    })
                    .collect();
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                for (&u, e) in peers.iter().zip(&exps) {
                    for dd in 0..d {
                        ctx[(bi * hw + t) * c + hd * d + dd] +=
                            e / z * v[(bi * hw + u) * c + hd * d + dd];
                    }
                }
            }
        }
    }
    project(&ctx, &p.wo, &p.bo, c)
}

/// Ordered forbidden pairs per window of the shifted, padded layout,
/// enumerated from original coordinates. Padding tokens form one extra region.
pub fn forbidden_counts(h: usize, w: usize, m: usize, s: usize) -> Vec<usize> {
    let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    let region = |qi: usize, qj: usize| -> Option<(i64, i64)> {
        // Shifted position (qi, qj) holds original position (qi+s, qj+s) mod P.
        let (oi, oj) = ((qi + s) % ph, (qj + s) % pw);
        (oi < h && oj < w).then(|| (group(oi, s, m), group(oj, s, m)))
    };
    let mut counts = Vec::new();
    for wy in 0..ph / m {
        for wx in 0..pw / m {
            let ids: Vec<_> = (0..m * m)
                .map(|t| region(wy * m + t / m, wx * m + t % m))
                .collect();
            counts.push(
                ids.iter()
                    .flat_map(|a| ids.iter().map(move |b| a != b))
                    .filter(|&f| f)
                    .count(),
            );
        }
    }
    counts
}

/// Plain global histogram equalization in integer arithmetic:
/// `round(255·(cdf(v) − cdf_min) / (N − cdf_min))`, with `cdf_min` the
/// cumulative count of the darkest occupied level. Flat images map to
/// themselves.
pub fn global_equalize(pixels: &[u8]) -> Vec<u8> {
    let mut hist = [0u64; 256];
    for &p in pixels {
        hist[p as usize] += 1;
    }
    let n = pixels.len() as u64;
    let mut cdf = [0u64; 256];
    let mut acc = 0;
    for v in 0..256 {
        acc += hist[v];
        cdf[v] = acc;
    }
    let cdf_min = cdf[hist.iter().position(|&h| h > 0).unwrap()];
    if n == cdf_min {
        return pixels.to_vec();
    }
    let den = n - cdf_min;
    pixels
        .iter()
        .map(|&p| {
            let num = 255 * (cdf[p as usize] - cdf_min);
            ((2 * num + den) / (2 * den)) as u8
        })
        .collect()
}
