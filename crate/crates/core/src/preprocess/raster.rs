use std::path::Path;

use image::imageops::FilterType;
use image::{ImageBuffer, ImageReader};

use crate::tensor::{Scalar, Tensor};
use crate::{Error, Result};

/// 8-bit image, row-major, channels interleaved.
#[derive(Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for RasterImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "RasterImage({}x{}x{})",
            self.width, self.height, self.channels
        )
    }
}

impl RasterImage {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::invalid(format!(
                "{width}x{height}x{channels} image needs {} samples, got {}",
                width * height * channels,
                data.len()
            )));
        }
        Ok(RasterImage {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(
            width,
            height,
            channels,
            vec![value; width * height * channels],
        )
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> u8,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let at = (y * self.width + x) * self.channels;
        &self.data[at..at + self.channels]
    }

    pub fn to_rgb(&self) -> RasterImage {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        RasterImage::new(self.width, self.height, 3, data).expect("consistent size")
    }

    /// Bilinear (triangle filter) resize.
    pub fn resize(&self, width: usize, height: usize) -> Result<RasterImage> {
        if width == 0 || height == 0 || self.is_empty() {
            return Err(Error::invalid("cannot resize to or from an empty image"));
        }
        if (width, height) == (self.width, self.height) {
            return Ok(self.clone());
        }
        let (w, h) = (self.width as u32, self.height as u32);
        let data = match self.channels {
            1 => {
                let buf: ImageBuffer<image::Luma<u8>, _> =
                    ImageBuffer::from_raw(w, h, self.data.clone()).expect("size checked");
                image::imageops::resize(&buf, width as u32, height as u32, FilterType::Triangle)
                    .into_raw()
            }
            _ => {
                let buf: ImageBuffer<image::Rgb<u8>, _> =
                    ImageBuffer::from_raw(w, h, self.data.clone()).expect("size checked");
                image::imageops::resize(&buf, width as u32, height as u32, FilterType::Triangle)
                    .into_raw()
            }
        };
        RasterImage::new(width, height, self.channels, data)
    }

    /// Reads a PNG (or any format the `image` crate decodes), keeping gray
    /// images single-channel and converting everything else to RGB.
    pub fn load(path: impl AsRef<Path>) -> Result<RasterImage> {
        let path = path.as_ref();
        let img_err = |source| Error::Image {
            path: path.to_path_buf(),
            source,
        };
        let img = ImageReader::open(path)
            .map_err(|e| Error::io(path, e))?
            .decode()
            .map_err(img_err)?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        if img.color().channel_count() == 1 {
            RasterImage::new(w, h, 1, img.to_luma8().into_raw())
        } else {
            RasterImage::new(w, h, 3, img.to_rgb8().into_raw())
        }
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let color = if self.channels == 1 {
            image::ExtendedColorType::L8
        } else {
            image::ExtendedColorType::Rgb8
        };
        image::save_buffer_with_format(
            path,
            &self.data,
            self.width as u32,
            self.height as u32,
            color,
            image::ImageFormat::Png,
        )
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Stacks equally sized images into `[B, H, W, C]` with samples scaled to
/// `[0, 1]`.
pub fn images_to_tensor<T: Scalar>(images: &[&RasterImage]) -> Result<Tensor<T>> {
    let first = images
        .first()
        .ok_or_else(|| Error::invalid("cannot batch zero images"))?;
    let (w, h, c) = (first.width, first.height, first.channels);
    let mut data = Vec::with_capacity(images.len() * w * h * c);
    let scale = 1.0 / 255.0;
    for img in images {
        if (img.width, img.height, img.channels) != (w, h, c) {
            return Err(Error::ShapeMismatch {
                op: "image batch",
                lhs: vec![h, w, c],
                rhs: vec![img.height, img.width, img.channels],
            });
        }
        data.extend(img.data.iter().map(|&v| T::from_f64(f64::from(v) * scale)));
    }
    Tensor::from_vec([images.len(), h, w, c], data)
}
