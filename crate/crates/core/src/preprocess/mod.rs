//! Image preparation: circular crop, CLAHE, augmentation, dataset splits and
//! the synthetic grading dataset.

mod augment;
mod clahe;
mod crop;
mod pipeline;
mod raster;
mod split;
mod synth;

pub use augment::{
    apply_augment, augment, hflip, rotate, sample_augment, AugmentPolicy, Augmentation,
};
pub use clahe::{bin_of, clahe, clip_histogram, luma, tile_lut, ClaheParams};
pub use crop::{circular_crop, DEFAULT_CROP_THRESHOLD};
pub use pipeline::{load_split, prepare, Dataset, PreprocessConfig};
pub use raster::{images_to_tensor, RasterImage};
pub use split::{oversample, split_dataset, DatasetManifest, ManifestEntry, Split, NUM_GRADES};
pub use synth::{
    count_bright_blobs, gen_synthetic, image_seed, lesion_count_range, load_lesion_log,
    render_fundus, LesionRecord, SynthOptions, LESION_GREEN_THRESHOLD, LESION_LOG_FILE,
    MANIFEST_FILE,
};
