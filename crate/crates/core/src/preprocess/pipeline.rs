use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    circular_crop, clahe, ClaheParams, DatasetManifest, RasterImage, Split, DEFAULT_CROP_THRESHOLD,
};
use crate::Result;

/// Deterministic per-image preparation applied before training or
/// evaluation. Random augmentation is applied later, per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub crop: bool,
    pub crop_threshold: u8,
    pub clahe: bool,
    pub clahe_params: ClaheParams,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            crop: true,
            crop_threshold: DEFAULT_CROP_THRESHOLD,
            clahe: true,
            clahe_params: ClaheParams::default(),
        }
    }
}

/// Crop → CLAHE at source resolution → square resize to `size` → RGB.
pub fn prepare(img: &RasterImage, cfg: &PreprocessConfig, size: usize) -> Result<RasterImage> {
    let mut out = if cfg.crop {
        circular_crop(img, cfg.crop_threshold)?
    } else {
        img.clone()
    };
    if cfg.clahe {
        out = clahe(&out, &cfg.clahe_params)?;
    }
    Ok(out.resize(size, size)?.to_rgb())
}

/// Prepared images of one split with their grades.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub paths: Vec<String>,
    pub images: Vec<RasterImage>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Loads and prepares every image of `split`; paths in the manifest are
/// relative to `root`.
pub fn load_split(
    root: impl AsRef<Path>,
    manifest: &DatasetManifest,
    split: Split,
    cfg: &PreprocessConfig,
    size: usize,
) -> Result<Dataset> {
    let root = root.as_ref();
    let mut ds = Dataset::default();
    for e in manifest.split(split) {
        let img = RasterImage::load(root.join(&e.path))?;
        ds.images.push(prepare(&img, cfg, size)?);
        ds.labels.push(usize::from(e.grade));
        ds.paths.push(e.path.clone());
    }
    Ok(ds)
}
