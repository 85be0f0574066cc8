use super::RasterImage;
use crate::{Error, Result};

pub const DEFAULT_CROP_THRESHOLD: u8 = 10;

/// Crops to the bounding box of pixels whose brightest channel exceeds
/// `threshold`, then pads the shorter side symmetrically with black to make
/// the result square.
pub fn circular_crop(img: &RasterImage, threshold: u8) -> Result<RasterImage> {
    if img.is_empty() {
        return Err(Error::invalid("cannot crop an empty image"));
    }
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..h {
        for x in 0..w {
            if img.pixel(x, y).iter().any(|&v| v > threshold) {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    if x0 == usize::MAX {
        return Err(Error::invalid(format!(
            "no pixel is brighter than the crop threshold {threshold}"
        )));
    }
    let (bw, bh) = (x1 - x0 + 1, y1 - y0 + 1);
    let side = bw.max(bh);
    let (ox, oy) = ((side - bw) / 2, (side - bh) / 2);
    RasterImage::from_fn(side, side, ch, |x, y, c| {
        if x >= ox && x < ox + bw && y >= oy && y < oy + bh {
            img.get(x0 + x - ox, y0 + y - oy, c)
        } else {
            0
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disc(size: usize, cx: f64, cy: f64, r: f64) -> RasterImage {
        RasterImage::from_fn(size, size, 3, |x, y, c| {
            let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            if d <= r {
                [180, 90, 40][c]
            } else {
                0
            }
        })
        .unwrap()
    }

    #[test]
    fn disc_crops_to_its_bounding_square() {
        let r = 10.0;
        let img = disc(64, 25.0, 30.0, r);
        let out = circular_crop(&img, DEFAULT_CROP_THRESHOLD).unwrap();
        assert!(
            (out.width() as f64 - 2.0 * r).abs() <= 1.0,
            "{}",
            out.width()
        );
        assert_eq!(out.width(), out.height());
        assert_eq!(circular_crop(&out, DEFAULT_CROP_THRESHOLD).unwrap(), out);
    }

    #[test]
    fn tight_image_is_unchanged() {
        let img = RasterImage::from_fn(5, 5, 1, |x, y, _| (x + y * 5 + 20) as u8).unwrap();
        assert_eq!(circular_crop(&img, 10).unwrap(), img);
    }

    #[test]
    fn non_square_box_is_padded_centrally() {
        let img = RasterImage::from_fn(8, 8, 1, |x, y, _| {
            if (2..6).contains(&x) && y == 3 {
                100
            } else {
                0
            }
        })
        .unwrap();
        let out = circular_crop(&img, 10).unwrap();
        assert_eq!((out.width(), out.height()), (4, 4));
        assert_eq!(out.data().iter().filter(|&&v| v == 100).count(), 4);
        assert!((0..4).all(|x| out.get(x, 1, 0) == 100));
    }

    #[test]
    fn dark_image_is_rejected() {
        let img = RasterImage::filled(4, 4, 3, 10).unwrap();
        assert!(circular_crop(&img, 10).is_err());
    }
}
