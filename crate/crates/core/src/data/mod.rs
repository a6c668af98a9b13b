//! Datasets, file formats, augmentation and batching.
//!
//! MNIST and Fashion-MNIST are read from their native IDX files; SVHN and
//! Small-NORB are read from the canonical `CAPS` tensor container written
//! by the offline converters.

mod augment;
mod batch;
mod canonical;
mod idx;
pub mod synthetic;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub use augment::{
    brightness, center_crop, crop, hflip, random_brightness, random_crop, random_hflip, standardize,
    AugmentConfig, Image, Sample, BRIGHTNESS_RANGE, CROP_SIZE, STD_FLOOR,
};
pub use batch::{batch_count, epoch_batches, epoch_rng};
pub use canonical::{read_canonical, write_canonical, CanonicalTensor, Dtype, CANONICAL_MAGIC, CANONICAL_VERSION};
pub use idx::{parse_idx, read_idx, IdxArray, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("missing data file {path}")]
    Missing { path: PathBuf },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic {found:#010x}, expected {expected:#010x}")]
    BadMagic { path: PathBuf, found: u32, expected: u32 },
    #[error("{path}: truncated at byte offset {offset}: needed {needed} more bytes, {available} available")]
    Truncated {
        path: PathBuf,
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("{path}: unsupported container version {version}")]
    UnknownVersion { path: PathBuf, version: u32 },
    #[error("{path}: unknown dtype code {code}")]
    UnknownDtype { path: PathBuf, code: u8 },
    #[error("{path}: payload is {found} bytes, header declares {expected}")]
    LengthMismatch {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {label} of sample {index} outside [0, {classes})")]
    LabelOutOfRange { index: usize, label: usize, classes: usize },
    #[error("image {height}x{width} is smaller than the {size}x{size} crop")]
    TooSmall { height: usize, width: usize, size: usize },
    #[error("{0}")]
    Format(String),
}

impl DataError {
    pub fn is_missing(&self) -> bool {
        matches!(self, DataError::Missing { .. })
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::NotFound {
            DataError::Missing {
                path: path.to_path_buf(),
            }
        } else {
            DataError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetId {
    Mnist,
    Fashion,
    Svhn,
    Norb,
}

impl DatasetId {
    pub const ALL: [DatasetId; 4] = [DatasetId::Mnist, DatasetId::Fashion, DatasetId::Svhn, DatasetId::Norb];

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetId::Mnist => "mnist",
            DatasetId::Fashion => "fashion",
            DatasetId::Svhn => "svhn",
            DatasetId::Norb => "norb",
        }
    }

    pub fn classes(self) -> usize {
        match self {
            DatasetId::Norb => 5,
            _ => 10,
        }
    }

    pub fn channels(self) -> usize {
        match self {
            DatasetId::Svhn => 3,
            _ => 1,
        }
    }

    /// Files for a split, relative to the data directory. IDX datasets also
    /// accept a `.gz` suffix.
    pub fn files(self, split: Split) -> (PathBuf, PathBuf) {
        let dir = PathBuf::from(self.as_str());
        match self {
            DatasetId::Mnist | DatasetId::Fashion => {
                let prefix = match split {
                    Split::Train => "train",
                    Split::Test => "t10k",
                };
                (
                    dir.join(format!("{prefix}-images-idx3-ubyte")),
                    dir.join(format!("{prefix}-labels-idx1-ubyte")),
                )
            }
            DatasetId::Svhn | DatasetId::Norb => (
                dir.join(format!("{}-images.caps", split.as_str())),
                dir.join(format!("{}-labels.caps", split.as_str())),
            ),
        }
    }
}

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetId {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mnist" => Ok(DatasetId::Mnist),
            "fashion" | "fashion-mnist" | "fashion_mnist" => Ok(DatasetId::Fashion),
            "svhn" => Ok(DatasetId::Svhn),
            "norb" | "smallnorb" | "small-norb" => Ok(DatasetId::Norb),
            other => Err(format!("unknown dataset `{other}` (expected mnist, fashion, svhn or norb)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Pixel storage. 8-bit pixels map to `[0, 1]` by `/255`; real-valued
/// pixels are taken to already lie in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub enum Pixels {
    U8(Vec<u8>),
    F32(Vec<f32>),
}

impl Pixels {
    fn len(&self) -> usize {
        match self {
            Pixels::U8(v) => v.len(),
            Pixels::F32(v) => v.len(),
        }
    }
}

/// `N x H x W x C` images with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pixels: Pixels,
    dims: [usize; 4],
    labels: Vec<usize>,
    pub split: Split,
    pub classes: usize,
}

impl Dataset {
    pub fn new(pixels: Pixels, dims: [usize; 4], labels: Vec<usize>, split: Split, classes: usize) -> Result<Self> {
        if dims.iter().product::<usize>() != pixels.len() {
            return Err(DataError::Format(format!(
                "{} pixels cannot fill dims {dims:?}",
                pixels.len()
            )));
        }
        if dims[0] != labels.len() {
            return Err(DataError::CountMismatch {
                images: dims[0],
                labels: labels.len(),
            });
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(DataError::LabelOutOfRange { index, label, classes });
        }
        Ok(Self {
            pixels,
            dims,
            labels,
            split,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.dims[0]
    }

    pub fn is_empty(&self) -> bool {
        self.dims[0] == 0
    }

    /// `[N, H, W, C]`.
    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn pixels(&self) -> &Pixels {
        &self.pixels
    }

    /// Image `index` scaled to `[0, 1]`.
    pub fn image(&self, index: usize) -> Image {
        let [_, h, w, c] = self.dims;
        let n = h * w * c;
        let data = match &self.pixels {
            Pixels::U8(p) => p[index * n..(index + 1) * n].iter().map(|&v| v as f32 / 255.0).collect(),
            Pixels::F32(p) => p[index * n..(index + 1) * n].to_vec(),
        };
        Image::new(h, w, c, data)
    }

    /// First `count` samples (all if `count` exceeds the size).
    pub fn truncate(mut self, count: usize) -> Self {
        let count = count.min(self.len());
        let per = self.dims[1] * self.dims[2] * self.dims[3];
        match &mut self.pixels {
            Pixels::U8(p) => p.truncate(count * per),
            Pixels::F32(p) => p.truncate(count * per),
        }
        self.labels.truncate(count);
        self.dims[0] = count;
        self
    }

    /// Loads a split of a dataset from `data_dir`.
    pub fn load(data_dir: &Path, id: DatasetId, split: Split) -> Result<Self> {
        let (images, labels) = id.files(split);
        let (images, labels) = (data_dir.join(images), data_dir.join(labels));
        match id {
            DatasetId::Mnist | DatasetId::Fashion => {
                load_idx(&with_gz_fallback(&images), &with_gz_fallback(&labels), split, id.classes())
            }
            DatasetId::Svhn | DatasetId::Norb => load_canonical(&images, &labels, split, id.classes()),
        }
    }
}

fn with_gz_fallback(path: &Path) -> PathBuf {
    if path.exists() {
        return path.to_path_buf();
    }
    let mut gz = path.as_os_str().to_owned();
    gz.push(".gz");
    let gz = PathBuf::from(gz);
    if gz.exists() {
        gz
    } else {
        path.to_path_buf()
    }
}

/// Reads an IDX image file (`0x00000803`) and label file (`0x00000801`).
pub fn load_idx(images: &Path, labels: &Path, split: Split, classes: usize) -> Result<Dataset> {
    let img = read_idx(images, IDX_IMAGES_MAGIC)?;
    let lab = read_idx(labels, IDX_LABELS_MAGIC)?;
    let (n, h, w) = (img.dims[0], img.dims[1], img.dims[2]);
    let labels: Vec<usize> = lab.data.iter().map(|&l| l as usize).collect();
    if labels.len() != n {
        return Err(DataError::CountMismatch {
            images: n,
            labels: labels.len(),
        });
    }
    Dataset::new(Pixels::U8(img.data), [n, h, w, 1], labels, split, classes)
}

/// Reads a canonical-container image tensor (`N x H x W x C`) and a
/// rank-1 label tensor.
pub fn load_canonical(images: &Path, labels: &Path, split: Split, classes: usize) -> Result<Dataset> {
    let img = read_canonical(images)?;
    let lab = read_canonical(labels)?;
    let dims: [usize; 4] = img
        .dims
        .clone()
        .try_into()
        .map_err(|d: Vec<usize>| DataError::Format(format!("{}: expected rank-4 images, got dims {d:?}", images.display())))?;
    if lab.dims.len() != 1 {
        return Err(DataError::Format(format!(
            "{}: expected rank-1 labels, got dims {:?}",
            labels.display(),
            lab.dims
        )));
    }
    let labels = match lab.dtype {
        Dtype::U8 => lab.payload.iter().map(|&l| l as usize).collect(),
        Dtype::F32 => lab.as_f32().iter().map(|&l| l as usize).collect(),
    };
    let pixels = match img.dtype {
        Dtype::U8 => Pixels::U8(img.payload),
        Dtype::F32 => Pixels::F32(img.as_f32()),
    };
    Dataset::new(pixels, dims, labels, split, classes)
}
