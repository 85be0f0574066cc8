//! Contrast-limited adaptive histogram equalization.
//!
//! Each tile's histogram is clipped at `clip_limit × tile_pixels / bins`,
//! the clipped mass is spread evenly over all bins, and the cumulative
//! histogram becomes a lookup table onto `[0, 255]`. Every pixel blends the
//! tables of the (up to four) nearest tile centers bilinearly.

use serde::{Deserialize, Serialize};

use super::RasterImage;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClaheParams {
    /// Multiple of the uniform bin height at which bins are clipped.
    pub clip_limit: f64,
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub bins: usize,
    /// Equalize R, G and B independently instead of luminance only.
    pub per_channel: bool,
}

impl Default for ClaheParams {
    fn default() -> Self {
        ClaheParams {
            clip_limit: 2.0,
            tiles_x: 8,
            tiles_y: 8,
            bins: 256,
            per_channel: false,
        }
    }
}

impl ClaheParams {
    pub fn validate(&self) -> Result<()> {
        if self.clip_limit.is_nan() || self.clip_limit <= 0.0 {
            return Err(Error::invalid(format!(
                "clip_limit must be positive, got {}",
                self.clip_limit
            )));
        }
        if self.tiles_x == 0 || self.tiles_y == 0 {
            return Err(Error::invalid("CLAHE needs at least one tile per axis"));
        }
        if !(2..=256).contains(&self.bins) {
            return Err(Error::invalid(format!(
                "bins must lie in 2..=256, got {}",
                self.bins
            )));
        }
        Ok(())
    }
}

/// Bin of gray level `v` when 256 levels share `bins` bins.
pub fn bin_of(v: u8, bins: usize) -> usize {
    usize::from(v) * bins / 256
}

/// Clips every bin at `limit` and adds the removed mass back uniformly.
pub fn clip_histogram(hist: &[u32], limit: f64) -> Vec<f64> {
    let mut excess = 0.0;
    let mut out: Vec<f64> = hist
        .iter()
        .map(|&h| {
            let h = f64::from(h);
            if h > limit {
                excess += h - limit;
                limit
            } else {
                h
            }
        })
        .collect();
    let share = excess / hist.len() as f64;
    for v in &mut out {
        *v += share;
    }
    out
}

/// Lookup table (one entry per gray level) for one tile's histogram.
///
/// `round(255·(cdf − cdf_min)/(N − cdf_min))` over the clipped histogram,
/// where `cdf_min` is the cumulative mass of the first occupied bin. A tile
/// with a single occupied gray level maps to the identity so flat regions
/// are left alone.
pub fn tile_lut(hist: &[u32], clip_limit: f64) -> [u8; 256] {
    let bins = hist.len();
    let total: u64 = hist.iter().map(|&h| u64::from(h)).sum();
    let mut lut = [0u8; 256];
    let occupied = hist.iter().filter(|&&h| h > 0).count();
    if total == 0 || occupied <= 1 {
        for (v, l) in lut.iter_mut().enumerate() {
            *l = v as u8;
        }
        return lut;
    }
    let limit = clip_limit * total as f64 / bins as f64;
    let clipped = clip_histogram(hist, limit);
    let mut cdf = Vec::with_capacity(bins);
    let mut acc = 0.0;
    for &h in &clipped {
        acc += h;
        cdf.push(acc);
    }
    let first = clipped.iter().position(|&h| h > 0.0).unwrap_or(0);
    let cdf_min = cdf[first];
    let span = total as f64 - cdf_min;
    let bin_lut: Vec<u8> = cdf
        .iter()
        .map(|&c| {
            if span <= 0.0 {
                0
            } else {
                ((255.0 * (c - cdf_min).max(0.0)) / span)
                    .round()
                    .clamp(0.0, 255.0) as u8
            }
        })
        .collect();
    for (v, l) in lut.iter_mut().enumerate() {
        *l = bin_lut[bin_of(v as u8, bins)];
    }
    lut
}

/// Tile `i` of `n` along an axis of length `len` covers `[i·len/n, (i+1)·len/n)`.
fn tile_bounds(len: usize, n: usize) -> Vec<(usize, usize)> {
    (0..n).map(|i| (i * len / n, (i + 1) * len / n)).collect()
}

/// For each coordinate along an axis: the two neighbouring tile indices and
/// the weight of the second.
fn axis_weights(len: usize, n: usize) -> Vec<(usize, usize, f64)> {
    let centers: Vec<f64> = tile_bounds(len, n)
        .iter()
        .map(|&(a, b)| (a + b - 1) as f64 / 2.0)
        .collect();
    (0..len)
        .map(|p| {
            let p = p as f64;
            if p <= centers[0] {
                (0, 0, 0.0)
            } else if p >= centers[n - 1] {
                (n - 1, n - 1, 0.0)
            } else {
                let i = centers.iter().rposition(|&c| c <= p).unwrap_or(0);
                (i, i + 1, (p - centers[i]) / (centers[i + 1] - centers[i]))
            }
        })
        .collect()
}

/// Equalizes one 8-bit plane.
fn clahe_plane(plane: &[u8], width: usize, height: usize, params: &ClaheParams) -> Vec<u8> {
    let (tx, ty) = (params.tiles_x, params.tiles_y);
    let xs = tile_bounds(width, tx);
    let ys = tile_bounds(height, ty);
    let mut luts = Vec::with_capacity(tx * ty);
    for &(y0, y1) in &ys {
        for &(x0, x1) in &xs {
            let mut hist = vec![0u32; params.bins];
            for y in y0..y1 {
                for &v in &plane[y * width + x0..y * width + x1] {
                    hist[bin_of(v, params.bins)] += 1;
                }
            }
            luts.push(tile_lut(&hist, params.clip_limit));
        }
    }
    let wx = axis_weights(width, tx);
    let wy = axis_weights(height, ty);
    let mut out = vec![0u8; plane.len()];
    for (y, &(i0, i1, fy)) in wy.iter().enumerate() {
        for (x, &(j0, j1, fx)) in wx.iter().enumerate() {
            let v = usize::from(plane[y * width + x]);
            let l = |i: usize, j: usize| f64::from(luts[i * tx + j][v]);
            let top = l(i0, j0) * (1.0 - fx) + l(i0, j1) * fx;
            let bottom = l(i1, j0) * (1.0 - fx) + l(i1, j1) * fx;
            out[y * width + x] = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

/// BT.601 luma, rounded to 8 bits.
pub fn luma(rgb: &[u8]) -> u8 {
    let y = 0.299 * f64::from(rgb[0]) + 0.587 * f64::from(rgb[1]) + 0.114 * f64::from(rgb[2]);
    y.round().clamp(0.0, 255.0) as u8
}

/// CLAHE on gray images; on color images either per channel or on luma only.
///
/// Luma-only mode shifts R, G and B by the same amount as the luma change,
/// which leaves the BT.601 chroma components unchanged (up to clamping).
pub fn clahe(img: &RasterImage, params: &ClaheParams) -> Result<RasterImage> {
    params.validate()?;
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    if w < params.tiles_x || h < params.tiles_y {
        return Err(Error::invalid(format!(
            "a {w}x{h} image is smaller than the {}x{} tile grid",
            params.tiles_x, params.tiles_y
        )));
    }
    if ch == 1 {
        return RasterImage::new(w, h, 1, clahe_plane(img.data(), w, h, params));
    }
    if params.per_channel {
        let planes: Vec<Vec<u8>> = (0..ch)
            .map(|c| {
                let plane: Vec<u8> = img.data().iter().skip(c).step_by(ch).copied().collect();
                clahe_plane(&plane, w, h, params)
            })
            .collect();
        return RasterImage::from_fn(w, h, ch, |x, y, c| planes[c][y * w + x]);
    }
    let y_in: Vec<u8> = img.data().chunks_exact(ch).map(luma).collect();
    let y_out = clahe_plane(&y_in, w, h, params);
    let mut data = img.data().to_vec();
    for (p, px) in data.chunks_exact_mut(ch).enumerate() {
        let delta = i32::from(y_out[p]) - i32::from(y_in[p]);
        for v in px {
            *v = (i32::from(*v) + delta).clamp(0, 255) as u8;
        }
    }
    RasterImage::new(w, h, ch, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clipping_conserves_mass() {
        let hist = [10, 0, 3, 7];
        let c = clip_histogram(&hist, 4.0);
        assert!((c.iter().sum::<f64>() - 20.0).abs() < 1e-12);
        // excess 6 + 3 = 9 spread over 4 bins
        assert_eq!(c, vec![6.25, 2.25, 5.25, 6.25]);
    }

    #[test]
    fn single_level_tile_maps_to_identity() {
        let mut hist = vec![0u32; 256];
        hist[77] = 50;
        let lut = tile_lut(&hist, 2.0);
        assert!(lut.iter().enumerate().all(|(v, &l)| usize::from(l) == v));
    }

    #[test]
    fn axis_weights_clamp_at_edges() {
        let w = axis_weights(8, 2);
        // centres at 1.5 and 5.5
        assert_eq!(w[0], (0, 0, 0.0));
        assert_eq!(w[7], (1, 1, 0.0));
        assert_eq!(w[2].0, 0);
        assert!((w[2].2 - 0.125).abs() < 1e-12);
        assert!(axis_weights(5, 1)
            .iter()
            .all(|&(a, b, f)| a == 0 && b == 0 && f == 0.0));
    }

    #[test]
    fn invalid_parameters() {
        let img = RasterImage::filled(4, 4, 1, 3).unwrap();
        for p in [
            ClaheParams {
                clip_limit: 0.0,
                ..Default::default()
            },
            ClaheParams {
                tiles_x: 0,
                ..Default::default()
            },
            ClaheParams {
                bins: 1,
                ..Default::default()
            },
        ] {
            assert!(clahe(&img, &p).is_err());
        }
        assert!(clahe(&img, &ClaheParams::default()).is_err());
    }
}
