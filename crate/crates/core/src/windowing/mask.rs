use super::WindowGrid;
use crate::tensor::{Scalar, Tensor};

/// Finite stand-in for −∞ in additive attention masks.
pub const MASK_NEG: f64 = -1e9;

/// Per-window token pairs that may not attend to each other.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    windows: usize,
    tokens: usize,
    forbidden: Vec<bool>,
}

impl AttentionMask {
    pub fn num_windows(&self) -> usize {
        self.windows
    }

    /// Tokens per window (`M²`).
    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn is_forbidden(&self, window: usize, i: usize, j: usize) -> bool {
        self.forbidden[(window * self.tokens + i) * self.tokens + j]
    }

    /// Ordered forbidden pairs in one window.
    pub fn forbidden_count(&self, window: usize) -> usize {
        let n2 = self.tokens * self.tokens;
        self.forbidden[window * n2..(window + 1) * n2]
            .iter()
            .filter(|&&f| f)
            .count()
    }

    pub fn is_all_zero(&self) -> bool {
        !self.forbidden.iter().any(|&f| f)
    }

    /// `[nW, M², M²]` additive mask: 0 where allowed, [`MASK_NEG`] where
    /// forbidden.
    pub fn to_additive<T: Scalar>(&self) -> Tensor<T> {
        let neg = T::from_f64(MASK_NEG);
        Tensor::from_fn([self.windows, self.tokens, self.tokens], |i| {
            if self.forbidden[i] {
                neg
            } else {
                T::zero()
            }
        })
    }
}

const PAD_REGION: u8 = u8::MAX;

/// Region id of every position of the cyclically shifted, padded map.
///
/// Along each axis the shifted frame splits into `[0, P−M)`, `[P−M, P−s)`
/// and `[P−s, P)`; tokens that came from the zero padding form their own
/// region.
fn shifted_regions(grid: &WindowGrid) -> Vec<u8> {
    let (ph, pw, m, s) = (grid.padded_h(), grid.padded_w(), grid.window, grid.shift);
    let band = |q: usize, p: usize| -> u8 {
        if q < p - m {
            0
        } else if q < p - s {
            1
        } else {
            2
        }
    };
    let mut regions = Vec::with_capacity(ph * pw);
    for qi in 0..ph {
        for qj in 0..pw {
            // Position in the unshifted padded map.
            let (oi, oj) = ((qi + s) % ph, (qj + s) % pw);
            regions.push(if oi >= grid.h || oj >= grid.w {
                PAD_REGION
            } else {
                band(qi, ph) * 3 + band(qj, pw)
            });
        }
    }
    regions
}

/// Mask for (shifted) window attention over `grid`: within each window of
/// the shifted map, token pairs from different regions are forbidden.
///
/// With `shift == 0` and no padding every window is a single region and the
/// mask is all zeros.
pub fn shift_attention_mask(grid: &WindowGrid) -> AttentionMask {
    let regions = shifted_regions(grid);
    let (pw, m) = (grid.padded_w(), grid.window);
    let (nh, nw) = (grid.padded_h() / m, pw / m);
    let n = m * m;
    let mut forbidden = Vec::with_capacity(nh * nw * n * n);
    let mut ids = vec![0u8; n];
    for wy in 0..nh {
        for wx in 0..nw {
            for t in 0..n {
                ids[t] = regions[(wy * m + t / m) * pw + wx * m + t % m];
            }
            for i in 0..n {
                for j in 0..n {
                    forbidden.push(ids[i] != ids[j]);
                }
            }
        }
    }
    AttentionMask {
        windows: nh * nw,
        tokens: n,
        forbidden,
    }
}
