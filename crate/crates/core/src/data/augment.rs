//! Per-image augmentation and normalization.
//!
//! Training path: scale to `[0, 1]` -> brightness / flip -> random crop ->
//! standardize. Evaluation path: scale -> center crop -> standardize. The
//! unstandardized crop doubles as the reconstruction target.

use rand::Rng;

use super::{DataError, DatasetId, Result};

pub const CROP_SIZE: usize = 24;
/// Half-open range of the additive brightness shift.
pub const BRIGHTNESS_RANGE: (f32, f32) = (-0.25, 0.25);
/// Lower bound on the standard deviation used by [`standardize`].
pub const STD_FLOOR: f32 = 1e-6;

/// `H x W x C` image in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Self {
        assert_eq!(height * width * channels, data.len(), "image extents");
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn at(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub crop: usize,
    /// Additive brightness shift range, when enabled.
    pub brightness: Option<(f32, f32)>,
    /// Horizontal flip probability, when enabled.
    pub flip_probability: Option<f64>,
}

impl AugmentConfig {
    pub fn for_dataset(id: DatasetId) -> Self {
        let (brightness, flip_probability) = match id {
            DatasetId::Mnist => (None, None),
            DatasetId::Fashion => (None, Some(0.5)),
            DatasetId::Svhn | DatasetId::Norb => (Some(BRIGHTNESS_RANGE), None),
        };
        Self {
            crop: CROP_SIZE,
            brightness,
            flip_probability,
        }
    }

    pub fn none(crop: usize) -> Self {
        Self {
            crop,
            brightness: None,
            flip_probability: None,
        }
    }

    /// Training sample from an image already scaled to `[0, 1]`.
    pub fn train_sample(&self, image: &Image, rng: &mut impl Rng) -> Result<Sample> {
        let mut img = image.clone();
        if let Some(range) = self.brightness {
            img = random_brightness(&img, range, rng);
        }
        if let Some(p) = self.flip_probability {
            img = random_hflip(&img, p, rng);
        }
        let target = random_crop(&img, self.crop, rng)?;
        Ok(Sample::from_target(target))
    }

    /// Evaluation sample: center crop, no randomness.
    pub fn eval_sample(&self, image: &Image) -> Result<Sample> {
        Ok(Sample::from_target(center_crop(image, self.crop)?))
    }
}

/// A network input and its reconstruction target.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Standardized crop fed to the network.
    pub input: Image,
    /// The same crop in `[0, 1]`, before standardization.
    pub target: Image,
}

impl Sample {
    fn from_target(target: Image) -> Self {
        Self {
            input: standardize(&target),
            target,
        }
    }
}

/// `size x size` window at offset `(top, left)`.
pub fn crop(image: &Image, size: usize, top: usize, left: usize) -> Result<Image> {
    if image.height < size || image.width < size {
        return Err(DataError::TooSmall {
            height: image.height,
            width: image.width,
            size,
        });
    }
    assert!(top + size <= image.height && left + size <= image.width, "crop window");
    let c = image.channels;
    let mut data = Vec::with_capacity(size * size * c);
    for y in top..top + size {
        let from = (y * image.width + left) * c;
        data.extend_from_slice(&image.data[from..from + size * c]);
    }
    Ok(Image::new(size, size, c, data))
}

/// Crop at an offset drawn uniformly from `[0, H - size] x [0, W - size]`.
pub fn random_crop(image: &Image, size: usize, rng: &mut impl Rng) -> Result<Image> {
    if image.height < size || image.width < size {
        return Err(DataError::TooSmall {
            height: image.height,
            width: image.width,
            size,
        });
    }
    let top = rng.gen_range(0..=image.height - size);
    let left = rng.gen_range(0..=image.width - size);
    crop(image, size, top, left)
}

/// Crop at offset `floor((H - size) / 2), floor((W - size) / 2)`.
pub fn center_crop(image: &Image, size: usize) -> Result<Image> {
    if image.height < size || image.width < size {
        return Err(DataError::TooSmall {
            height: image.height,
            width: image.width,
            size,
        });
    }
    crop(image, size, (image.height - size) / 2, (image.width - size) / 2)
}

/// Adds `delta` to every pixel and clamps to `[0, 1]`.
pub fn brightness(image: &Image, delta: f32) -> Image {
    Image {
        data: image.data.iter().map(|&v| (v + delta).clamp(0.0, 1.0)).collect(),
        ..image.clone()
    }
}

pub fn random_brightness(image: &Image, range: (f32, f32), rng: &mut impl Rng) -> Image {
    brightness(image, rng.gen_range(range.0..range.1))
}

/// Mirrors the width axis.
pub fn hflip(image: &Image) -> Image {
    let (w, c) = (image.width, image.channels);
    let mut data = Vec::with_capacity(image.data.len());
    for y in 0..image.height {
        for x in (0..w).rev() {
            let from = (y * w + x) * c;
            data.extend_from_slice(&image.data[from..from + c]);
        }
    }
    Image { data, ..image.clone() }
}

pub fn random_hflip(image: &Image, probability: f64, rng: &mut impl Rng) -> Image {
    if rng.gen_bool(probability) {
        hflip(image)
    } else {
        image.clone()
    }
}

/// Zero mean, unit population variance over all pixels and channels.
pub fn standardize(image: &Image) -> Image {
    let n = image.data.len() as f64;
    let mean = image.data.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = image.data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(STD_FLOOR as f64);
    Image {
        data: image.data.iter().map(|&v| ((v as f64 - mean) / std) as f32).collect(),
        ..image.clone()
    }
}
