//! Procedural fundus-like images with grade-dependent lesions.
//!
//! A dark field holds a reddish disc with radial fall-off, a dimmer optic
//! disc, sensor noise, and `k` bright lesion blobs: none for grade 0 and
//! `k ∈ [2g−1, 2g+1]` for grade `g ≥ 1`. Lesion brightness rises with the
//! grade. Lesion cores are the only pixels whose green channel exceeds
//! [`LESION_GREEN_THRESHOLD`], so blobs can be re-counted from the pixels.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::split::{split_dataset, DatasetManifest, Split, NUM_GRADES};
use super::RasterImage;
use crate::{Error, Result};

/// Green level separating lesion cores from everything else in clean images.
pub const LESION_GREEN_THRESHOLD: u8 = 150;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthOptions {
    pub n_per_class: usize,
    pub image_size: usize,
    pub seed: u64,
    /// Multiply each image by a steep linear luminance ramp in a random
    /// direction.
    pub corrupt_illumination: bool,
    pub ratios: [f64; 3],
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            n_per_class: 300,
            image_size: 128,
            seed: 42,
            corrupt_illumination: false,
            ratios: [4.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0],
        }
    }
}

/// What the generator drew for one image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LesionRecord {
    pub path: String,
    pub grade: u8,
    pub blobs: usize,
}

/// SplitMix64 finalizer; gives every image an independent stream.
pub fn image_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn lesion_count_range(grade: u8) -> (usize, usize) {
    match grade {
        0 => (0, 0),
        g => (2 * usize::from(g) - 1, 2 * usize::from(g) + 1),
    }
}

fn lesion_color(grade: u8) -> [f64; 3] {
    // Green and blue climb with the grade: deep orange at grade 1, nearly
    // white at grade 4. Blue survives luminance-only CLAHE even when red
    // saturates.
    let g = f64::from(grade) - 1.0;
    [255.0, 165.0 + 30.0 * g, 40.0 + 60.0 * g]
}

struct Blob {
    x: f64,
    y: f64,
    r: f64,
}

/// Renders one image; returns it with its lesion count.
pub fn render_fundus(
    grade: u8,
    size: usize,
    corrupt: bool,
    rng: &mut impl Rng,
) -> Result<(RasterImage, usize)> {
    if usize::from(grade) >= NUM_GRADES {
        return Err(Error::invalid(format!("grade {grade} is outside 0..=4")));
    }
    if size < 32 {
        return Err(Error::invalid(format!(
            "synthetic images need at least 32 pixels, got {size}"
        )));
    }
    let s = size as f64;
    let jitter = |rng: &mut dyn rand::RngCore, amp: f64| (rng.random::<f64>() * 2.0 - 1.0) * amp;
    let (cx, cy) = (
        s / 2.0 + jitter(rng, 0.08 * s),
        s / 2.0 + jitter(rng, 0.08 * s),
    );
    let radius = s * (0.36 + 0.08 * rng.random::<f64>());
    let brightness = 0.85 + 0.3 * rng.random::<f64>();
    let tint = [
        1.0 + jitter(rng, 0.08),
        1.0 + jitter(rng, 0.12),
        1.0 + jitter(rng, 0.2),
    ];

    let disc_angle = rng.random::<f64>() * std::f64::consts::TAU;
    let disc_dist = radius * (0.45 + 0.15 * rng.random::<f64>());
    let disc = Blob {
        x: cx + disc_angle.cos() * disc_dist,
        y: cy + disc_angle.sin() * disc_dist,
        r: radius * 0.16,
    };

    let (lo, hi) = lesion_count_range(grade);
    let count = rng.random_range(lo..=hi);
    let (r_min, r_max) = (0.035 * s, 0.045 * s);
    let blobs = 'placement: loop {
        let mut placed: Vec<Blob> = Vec::with_capacity(count);
        for _ in 0..count {
            let mut ok = None;
            for _ in 0..200 {
                let a = rng.random::<f64>() * std::f64::consts::TAU;
                let d = radius * 0.8 * rng.random::<f64>().sqrt();
                let b = Blob {
                    x: cx + a.cos() * d,
                    y: cy + a.sin() * d,
                    r: r_min + (r_max - r_min) * rng.random::<f64>(),
                };
                let clear = |o: &Blob, gap: f64| {
                    ((b.x - o.x).powi(2) + (b.y - o.y).powi(2)).sqrt() > b.r + o.r + gap
                };
                if clear(&disc, 3.0) && placed.iter().all(|o| clear(o, 4.0)) {
                    ok = Some(b);
                    break;
                }
            }
            match ok {
                Some(b) => placed.push(b),
                None => continue 'placement,
            }
        }
        break placed;
    };

    let color = lesion_color(grade);
    let ramp = corrupt.then(|| {
        let a = rng.random::<f64>() * std::f64::consts::TAU;
        (a.cos(), a.sin())
    });
    let mut data = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let d = ((px - cx).powi(2) + (py - cy).powi(2)).sqrt();
            let mut rgb = [0.0f64; 3];
            if d <= radius {
                let fall = (1.0 - 0.35 * (d / radius).powi(2)) * brightness;
                let base = [170.0, 80.0, 35.0];
                for c in 0..3 {
                    rgb[c] = base[c] * tint[c] * fall + jitter(rng, 3.0);
                }
                let dd = ((px - disc.x).powi(2) + (py - disc.y).powi(2)).sqrt();
                let disc_a = (1.0 - (dd - disc.r).max(0.0) / 2.0).clamp(0.0, 1.0);
                let disc_rgb = [225.0, 115.0, 70.0];
                for c in 0..3 {
                    rgb[c] = rgb[c] * (1.0 - disc_a) + disc_rgb[c] * disc_a;
                }
                for b in &blobs {
                    let db = ((px - b.x).powi(2) + (py - b.y).powi(2)).sqrt();
                    // Solid core, one-pixel soft rim.
                    let a = (1.0 - (db - b.r).max(0.0)).clamp(0.0, 1.0);
                    for c in 0..3 {
                        rgb[c] = rgb[c] * (1.0 - a) + color[c] * a;
                    }
                }
            } else {
                for v in &mut rgb {
                    *v = rng.random::<f64>() * 4.0;
                }
            }
            if let Some((ux, uy)) = ramp {
                let t =
                    ((px / s - 0.5) * ux + (py / s - 0.5) * uy) / std::f64::consts::SQRT_2 + 0.5;
                let gain = 0.3 + 1.3 * t;
                for v in &mut rgb {
                    *v *= gain;
                }
            }
            data.extend(rgb.iter().map(|v| v.round().clamp(0.0, 255.0) as u8));
        }
    }
    Ok((RasterImage::new(size, size, 3, data)?, blobs.len()))
}

/// Counts 4-connected components of pixels whose green channel exceeds
/// `threshold`.
pub fn count_bright_blobs(img: &RasterImage, threshold: u8) -> usize {
    let (w, h) = (img.width(), img.height());
    let green = img.channels().min(2) - 1;
    let mut seen = vec![false; w * h];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if seen[start] || img.get(start % w, start / w, green) <= threshold {
            continue;
        }
        count += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(p) = stack.pop() {
            let (x, y) = (p % w, p / w);
            let neighbours = [
                (x > 0).then(|| p - 1),
                (x + 1 < w).then(|| p + 1),
                (y > 0).then(|| p - w),
                (y + 1 < h).then(|| p + w),
            ];
            for q in neighbours.into_iter().flatten() {
                if !seen[q] && img.get(q % w, q / w, green) > threshold {
                    seen[q] = true;
                    stack.push(q);
                }
            }
        }
    }
    count
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LESION_LOG_FILE: &str = "lesions.json";

/// Renders `n_per_class` images per grade, splits them stratified by grade
/// and writes `<root>/<split>/<grade>/<name>.png`, `manifest.json` and the
/// lesion log `lesions.json`.
pub fn gen_synthetic(root: impl AsRef<Path>, opts: &SynthOptions) -> Result<DatasetManifest> {
    let root = root.as_ref();
    if opts.n_per_class == 0 {
        return Err(Error::invalid("n_per_class must be at least 1"));
    }
    let mut rendered = Vec::with_capacity(opts.n_per_class * NUM_GRADES);
    let mut names = Vec::with_capacity(rendered.capacity());
    for grade in 0..NUM_GRADES as u8 {
        for i in 0..opts.n_per_class {
            let index = (usize::from(grade) * opts.n_per_class + i) as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(image_seed(opts.seed, index));
            let (img, blobs) =
                render_fundus(grade, opts.image_size, opts.corrupt_illumination, &mut rng)?;
            let name = format!("g{grade}_{i:05}.png");
            names.push((name.clone(), grade));
            rendered.push((name, grade, img, blobs));
        }
    }
    let split = split_dataset(&names, opts.ratios, opts.seed)?;
    let mut entries = Vec::with_capacity(rendered.len());
    let mut log = Vec::with_capacity(rendered.len());
    let lookup: std::collections::HashMap<&str, Split> = split
        .entries
        .iter()
        .map(|e| (e.path.as_str(), e.split))
        .collect();
    for (name, grade, img, blobs) in &rendered {
        let s = lookup[name.as_str()];
        let rel = format!("{s}/{grade}/{name}");
        img.save_png(root.join(&rel))?;
        entries.push(super::ManifestEntry {
            path: rel.clone(),
            grade: *grade,
            split: s,
        });
        log.push(LesionRecord {
            path: rel,
            grade: *grade,
            blobs: *blobs,
        });
    }
    let manifest = DatasetManifest {
        seed: opts.seed,
        ratios: opts.ratios,
        entries,
    };
    manifest.save(root.join(MANIFEST_FILE))?;
    let log_path = root.join(LESION_LOG_FILE);
    std::fs::write(&log_path, serde_json::to_string_pretty(&log)? + "\n")
        .map_err(|e| Error::io(&log_path, e))?;
    Ok(manifest)
}

pub fn load_lesion_log(root: impl AsRef<Path>) -> Result<Vec<LesionRecord>> {
    let path = root.as_ref().join(LESION_LOG_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}
