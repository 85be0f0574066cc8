use rand::Rng;
use serde::{Deserialize, Serialize};

use super::RasterImage;
use crate::{Error, Result};

/// Which random transforms [`sample_augment`] draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentPolicy {
    /// Rotate by an angle uniform in `[0°, 360°)`.
    pub rotate: bool,
    /// Restrict rotations to multiples of 90°, which are exact pixel
    /// permutations.
    pub right_angles_only: bool,
    pub flip_probability: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            rotate: true,
            right_angles_only: false,
            flip_probability: 0.5,
        }
    }
}

/// One concrete draw: counter-clockwise rotation in degrees, then an
/// optional horizontal flip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Augmentation {
    pub angle_deg: f64,
    pub flip: bool,
}

impl Augmentation {
    pub const IDENTITY: Augmentation = Augmentation {
        angle_deg: 0.0,
        flip: false,
    };
}

pub fn sample_augment(rng: &mut impl Rng, policy: &AugmentPolicy) -> Augmentation {
    let angle_deg = match (policy.rotate, policy.right_angles_only) {
        (false, _) => 0.0,
        (true, true) => f64::from(rng.random_range(0..4u8)) * 90.0,
        (true, false) => rng.random::<f64>() * 360.0,
    };
    let flip = rng.random::<f64>() < policy.flip_probability;
    Augmentation { angle_deg, flip }
}

pub fn hflip(img: &RasterImage) -> RasterImage {
    let w = img.width();
    RasterImage::from_fn(w, img.height(), img.channels(), |x, y, c| {
        img.get(w - 1 - x, y, c)
    })
    .expect("same geometry")
}

/// Counter-clockwise rotation about the image centre. Multiples of 90° are
/// exact permutations; other angles resample bilinearly with black fill.
pub fn rotate(img: &RasterImage, angle_deg: f64) -> Result<RasterImage> {
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    if w != h {
        return Err(Error::invalid(format!(
            "rotation needs a square image, got {w}x{h}"
        )));
    }
    let n = w;
    let turns = angle_deg / 90.0;
    if turns == turns.round() {
        let q = (turns.round() as i64).rem_euclid(4);
        // Output (x, y) reads the source pixel that lands there.
        return RasterImage::from_fn(n, n, ch, |x, y, c| match q {
            0 => img.get(x, y, c),
            1 => img.get(n - 1 - y, x, c),
            2 => img.get(n - 1 - x, n - 1 - y, c),
            _ => img.get(y, n - 1 - x, c),
        });
    }
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let centre = (n as f64 - 1.0) / 2.0;
    RasterImage::from_fn(n, n, ch, |x, y, c| {
        // Inverse map: rotate the output position clockwise back into the
        // source (y grows downwards, so counter-clockwise on screen).
        let (dx, dy) = (x as f64 - centre, y as f64 - centre);
        let sx = cos * dx - sin * dy + centre;
        let sy = sin * dx + cos * dy + centre;
        bilinear(img, sx, sy, c)
    })
}

fn bilinear(img: &RasterImage, x: f64, y: f64, c: usize) -> u8 {
    let (w, h) = (img.width() as f64, img.height() as f64);
    if x < -0.5 || y < -0.5 || x > w - 0.5 || y > h - 0.5 {
        return 0;
    }
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let sample = |xi: f64, yi: f64| -> f64 {
        if xi < 0.0 || yi < 0.0 || xi >= w || yi >= h {
            0.0
        } else {
            f64::from(img.get(xi as usize, yi as usize, c))
        }
    };
    let top = sample(x0, y0) * (1.0 - fx) + sample(x0 + 1.0, y0) * fx;
    let bottom = sample(x0, y0 + 1.0) * (1.0 - fx) + sample(x0 + 1.0, y0 + 1.0) * fx;
    (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8
}

pub fn apply_augment(img: &RasterImage, aug: &Augmentation) -> Result<RasterImage> {
    let rotated = rotate(img, aug.angle_deg)?;
    Ok(if aug.flip { hflip(&rotated) } else { rotated })
}

/// Draws and applies one augmentation.
pub fn augment(
    img: &RasterImage,
    rng: &mut impl Rng,
    policy: &AugmentPolicy,
) -> Result<RasterImage> {
    apply_augment(img, &sample_augment(rng, policy))
}
