//! IDX ingestion, booleanization and per-client dataset materialization.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use crate::error::{Error, Result};
use crate::partition::PartitionPlan;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;

/// Default strictly-greater booleanization threshold.
pub const DEFAULT_THRESHOLD: u8 = 75;

/// Decoded image/label pairs. Pixels are stored flat, `IMAGE_PIXELS` per image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawDataset {
    pixels: Vec<u8>,
    labels: Vec<u8>,
    class_count: usize,
}

impl RawDataset {
    pub fn new(pixels: Vec<u8>, labels: Vec<u8>, class_count: usize) -> Result<Self> {
        if pixels.len() != labels.len() * IMAGE_PIXELS {
            return Err(Error::Length(format!(
                "{} pixel bytes do not hold {} images of {IMAGE_PIXELS} pixels",
                pixels.len(),
                labels.len()
            )));
        }
        if class_count == 0 {
            return Err(Error::param("class_count", "must be positive"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| usize::from(l) >= class_count) {
            return Err(Error::param(
                "class_count",
                format!("label {bad} is out of range for {class_count} classes"),
            ));
        }
        Ok(RawDataset {
            pixels,
            labels,
            class_count,
        })
    }

    /// Re-declares the class count, e.g. 62 for EMNIST-by-class regardless of
    /// which labels happen to occur in a subsample.
    pub fn with_class_count(self, class_count: usize) -> Result<Self> {
        RawDataset::new(self.pixels, self.labels, class_count)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn image(&self, index: usize) -> &[u8] {
        &self.pixels[index * IMAGE_PIXELS..(index + 1) * IMAGE_PIXELS]
    }

    pub fn label(&self, index: usize) -> usize {
        usize::from(self.labels[index])
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Binarized sample `index`.
    pub fn sample(&self, index: usize, threshold: u8) -> BinarySample {
        BinarySample {
            literals: binarize(self.image(index), threshold),
            label: self.label(index),
        }
    }

    /// Appends `other`, keeping the larger class count.
    pub fn concat(mut self, other: RawDataset) -> RawDataset {
        self.pixels.extend_from_slice(&other.pixels);
        self.labels.extend_from_slice(&other.labels);
        self.class_count = self.class_count.max(other.class_count);
        self
    }

    /// The first `count` samples.
    pub fn truncated(&self, count: usize) -> RawDataset {
        let count = count.min(self.len());
        RawDataset {
            pixels: self.pixels[..count * IMAGE_PIXELS].to_vec(),
            labels: self.labels[..count].to_vec(),
            class_count: self.class_count,
        }
    }
}

/// Literal vector `[x_1..x_o, !x_1..!x_o]` packed into 64-bit words.
///
/// Bits past `len` are always zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Literals {
    words: Vec<u64>,
    features: usize,
}

impl Literals {
    pub fn from_features(features: &[bool]) -> Self {
        let o = features.len();
        let mut words = vec![0u64; words_for(2 * o)];
        for (k, &x) in features.iter().enumerate() {
            let bit = if x { k } else { o + k };
            words[bit / 64] |= 1 << (bit % 64);
        }
        Literals { words, features: o }
    }

    /// Feature count `o`.
    pub fn feature_count(&self) -> usize {
        self.features
    }

    /// Literal count `2o`.
    pub fn len(&self) -> usize {
        2 * self.features
    }

    pub fn is_empty(&self) -> bool {
        self.features == 0
    }

    #[inline]
    pub fn get(&self, literal: usize) -> bool {
        debug_assert!(literal < self.len());
        self.words[literal / 64] >> (literal % 64) & 1 == 1
    }

    #[inline]
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// Number of positive features set, i.e. popcount of the first `o` bits.
    pub fn feature_popcount(&self) -> usize {
        (0..self.features).filter(|&k| self.get(k)).count()
    }
}

pub(crate) fn words_for(bits: usize) -> usize {
    bits.div_ceil(64)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinarySample {
    pub literals: Literals,
    pub label: usize,
}

impl BinarySample {
    pub fn new(features: &[bool], label: usize) -> Self {
        BinarySample {
            literals: Literals::from_features(features),
            label,
        }
    }
}

/// One client's local train, test and confidence sets.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClientData {
    pub train: Vec<BinarySample>,
    pub test: Vec<BinarySample>,
    pub conf: Vec<BinarySample>,
}

/// `pixel > threshold` for every pixel, followed by the negations.
pub fn binarize(image: &[u8], threshold: u8) -> Literals {
    let features: Vec<bool> = image.iter().map(|&p| p > threshold).collect();
    Literals::from_features(&features)
}

pub fn build_client_data(
    dataset: &RawDataset,
    plan: &PartitionPlan,
    client_id: usize,
    threshold: u8,
) -> Result<ClientData> {
    let assignment = plan.client(client_id)?;
    let materialize = |indices: &[usize]| -> Result<Vec<BinarySample>> {
        indices
            .iter()
            .map(|&i| {
                if i >= dataset.len() {
                    Err(Error::Shape(format!(
                        "plan references sample {i} but the dataset has {}",
                        dataset.len()
                    )))
                } else {
                    Ok(dataset.sample(i, threshold))
                }
            })
            .collect()
    };
    Ok(ClientData {
        train: materialize(&assignment.train)?,
        test: materialize(&assignment.test)?,
        conf: materialize(&assignment.conf)?,
    })
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Length(format!("header truncated at byte {offset}")))
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let found = be_u32(bytes, 0)?;
    if found != expected {
        return Err(Error::BadMagic { expected, found });
    }
    Ok(())
}

/// Parses an uncompressed IDX image file, returning the flat pixel buffer.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, IMAGE_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)?;
    let cols = be_u32(bytes, 12)?;
    if rows as usize != IMAGE_SIDE || cols as usize != IMAGE_SIDE {
        return Err(Error::UnsupportedShape { rows, cols });
    }
    let payload = &bytes[16..];
    let expected = count * IMAGE_PIXELS;
    if payload.len() != expected {
        return Err(Error::Length(format!(
            "image payload has {} bytes, header declares {count} images ({expected} bytes)",
            payload.len()
        )));
    }
    Ok(payload.to_vec())
}

/// Parses an uncompressed IDX label file.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABEL_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let payload = &bytes[8..];
    if payload.len() != count {
        return Err(Error::Length(format!(
            "label payload has {} bytes, header declares {count} labels",
            payload.len()
        )));
    }
    Ok(payload.to_vec())
}

/// Loads an IDX image/label pair; gzip input is detected by its magic bytes.
/// The class count is inferred as `max label + 1`.
pub fn load_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<RawDataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let pixels = parse_idx_images(&read_maybe_gz(images_path)?)?;
    let labels = parse_idx_labels(&read_maybe_gz(labels_path)?)?;
    let image_count = pixels.len() / IMAGE_PIXELS;
    if image_count != labels.len() {
        return Err(Error::Length(format!(
            "{} holds {image_count} images but {} holds {} labels",
            images_path.display(),
            labels_path.display(),
            labels.len()
        )));
    }
    let class_count = labels.iter().max().map_or(1, |&m| usize::from(m) + 1);
    RawDataset::new(pixels, labels, class_count)
}

/// Finds every `<prefix>images-idx3-ubyte[.gz]` file in `dir` with a matching
/// `<prefix>labels-idx1-ubyte[.gz]`, sorted by file name.
pub fn find_idx_pairs(dir: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if let Some(name) = entry.file_name().to_str() {
            names.push(name.to_owned());
        }
    }
    names.sort();
    let mut pairs = Vec::new();
    for name in &names {
        let stem = name.strip_suffix(".gz").unwrap_or(name);
        let Some(prefix) = stem.strip_suffix("images-idx3-ubyte") else {
            continue;
        };
        let labels = [".gz", ""]
            .iter()
            .map(|ext| format!("{prefix}labels-idx1-ubyte{ext}"))
            .find(|candidate| names.contains(candidate));
        if let Some(labels) = labels {
            pairs.push((dir.join(name), dir.join(labels)));
        }
    }
    Ok(pairs)
}

/// Loads and concatenates every IDX pair in `dir`.
pub fn load_dir(dir: &Path) -> Result<RawDataset> {
    let pairs = find_idx_pairs(dir)?;
    let mut pairs = pairs.into_iter();
    let Some((images, labels)) = pairs.next() else {
        return Err(Error::io(
            dir,
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "no IDX image/label pairs found",
            ),
        ));
    };
    let mut dataset = load_idx(&images, &labels)?;
    for (images, labels) in pairs {
        dataset = dataset.concat(load_idx(&images, &labels)?);
    }
    Ok(dataset)
}
