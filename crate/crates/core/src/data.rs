//! Dataset ingestion: IDX (MNIST / Fashion-MNIST) parsing, deterministic
//! subsetting with per-class stratification, validation splits, and an
//! explicit fetch with SHA-256 manifest verification.
//!
//! The library never touches the network implicitly; only
//! [`fetch`] downloads, and only when asked.

use std::collections::BTreeMap;
use std::io::{self, Cursor, Read};
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ReadBytesExt};
use ndarray::Array2;
use rand::seq::SliceRandom;
use sha2::{Digest, Sha256};

use crate::rng::substream;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;
const NUM_CLASSES: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("bad IDX magic {got:#010x} (expected {expected:#010x})")]
    BadMagic { got: u32, expected: u32 },
    #[error("truncated IDX file: {0}")]
    TruncatedFile(String),
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {0} outside the 10-class range")]
    InvalidLabel(u8),
    #[error("requested subset of {requested} from a dataset of {available}")]
    TooLarge { requested: usize, available: usize },
    #[error("validation fraction must lie in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("fetch failed: {0}")]
    Fetch(String),
    #[error("checksum mismatch for {file}: manifest says {expected}, got {actual} (file removed)")]
    ChecksumMismatch { file: String, expected: String, actual: String },
}

/// An in-memory dataset: one image per row, pixels scaled to `[0, 1]`,
/// labels in `[0, 10)`. Immutable after construction.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub images: Array2<f64>,
    pub labels: Vec<u8>,
    pub name: String,
}

impl Dataset {
    /// Validates and wraps raw rows.
    pub fn new(images: Array2<f64>, labels: Vec<u8>, name: impl Into<String>) -> Result<Self, DataError> {
        if images.nrows() != labels.len() {
            return Err(DataError::CountMismatch { images: images.nrows(), labels: labels.len() });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(DataError::InvalidLabel(bad));
        }
        if images.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(DataError::InvalidDataset("pixel outside [0, 1]".into()));
        }
        Ok(Self { images, labels, name: name.into() })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> usize {
        self.images.ncols()
    }

    pub fn num_classes(&self) -> usize {
        NUM_CLASSES
    }

    /// Extracts the given rows, in order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut images = Array2::zeros((indices.len(), self.features()));
        let mut labels = Vec::with_capacity(indices.len());
        for (row, &idx) in indices.iter().enumerate() {
            images.row_mut(row).assign(&self.images.row(idx));
            labels.push(self.labels[idx]);
        }
        Dataset { images, labels, name: self.name.clone() }
    }
}

fn read_all(path: &Path) -> Result<Vec<u8>, DataError> {
    let raw = std::fs::read(path)?;
    // Transparently inflate gzip payloads.
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| DataError::TruncatedFile(format!("{}: {e}", path.display())))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn truncated(path: &Path) -> impl Fn(io::Error) -> DataError + '_ {
    move |e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            DataError::TruncatedFile(path.display().to_string())
        } else {
            DataError::Io(e)
        }
    }
}

/// Parses an IDX image/label file pair into a dataset. Raw and gzipped
/// files are both accepted; pixels are divided by 255.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset, DataError> {
    let img_bytes = read_all(images_path)?;
    let mut cur = Cursor::new(img_bytes.as_slice());
    let magic = cur.read_u32::<BigEndian>().map_err(truncated(images_path))?;
    if magic != IMAGES_MAGIC {
        return Err(DataError::BadMagic { got: magic, expected: IMAGES_MAGIC });
    }
    let count = cur.read_u32::<BigEndian>().map_err(truncated(images_path))? as usize;
    let rows = cur.read_u32::<BigEndian>().map_err(truncated(images_path))? as usize;
    let cols = cur.read_u32::<BigEndian>().map_err(truncated(images_path))? as usize;
    let features = rows * cols;
    let mut pixels = vec![0u8; count * features];
    cur.read_exact(&mut pixels).map_err(truncated(images_path))?;

    let lab_bytes = read_all(labels_path)?;
    let mut cur = Cursor::new(lab_bytes.as_slice());
    let magic = cur.read_u32::<BigEndian>().map_err(truncated(labels_path))?;
    if magic != LABELS_MAGIC {
        return Err(DataError::BadMagic { got: magic, expected: LABELS_MAGIC });
    }
    let label_count = cur.read_u32::<BigEndian>().map_err(truncated(labels_path))? as usize;
    if label_count != count {
        return Err(DataError::CountMismatch { images: count, labels: label_count });
    }
    let mut labels = vec![0u8; label_count];
    cur.read_exact(&mut labels).map_err(truncated(labels_path))?;

    let images = Array2::from_shape_vec(
        (count, features),
        pixels.into_iter().map(|p| p as f64 / 255.0).collect(),
    )
    .expect("shape matches buffer");
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
        return Err(DataError::InvalidLabel(bad));
    }
    let name = images_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".into());
    Ok(Dataset { images, labels, name })
}

/// Deterministic sample of `n` rows without replacement. Stratified
/// per class when `n >= 10 * classes` (equal per-class quotas, remainder
/// drawn from the leftovers); plain uniform otherwise. The returned row
/// order is shuffled.
pub fn subset(dataset: &Dataset, n: usize, seed: u64) -> Result<Dataset, DataError> {
    if n > dataset.len() {
        return Err(DataError::TooLarge { requested: n, available: dataset.len() });
    }
    let mut rng = substream(seed, 0);
    let mut chosen: Vec<usize>;
    if n >= 10 * NUM_CLASSES {
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); NUM_CLASSES];
        for (idx, &label) in dataset.labels.iter().enumerate() {
            by_class[label as usize].push(idx);
        }
        for pool in by_class.iter_mut() {
            pool.shuffle(&mut rng);
        }
        let quota = n / NUM_CLASSES;
        chosen = Vec::with_capacity(n);
        let mut leftovers = Vec::new();
        for pool in &by_class {
            let take = quota.min(pool.len());
            chosen.extend_from_slice(&pool[..take]);
            leftovers.extend_from_slice(&pool[take..]);
        }
        leftovers.shuffle(&mut rng);
        let missing = n - chosen.len();
        chosen.extend_from_slice(&leftovers[..missing]);
    } else {
        let mut all: Vec<usize> = (0..dataset.len()).collect();
        all.shuffle(&mut rng);
        chosen = all[..n].to_vec();
    }
    chosen.shuffle(&mut rng);
    Ok(dataset.select(&chosen))
}

/// Seeded shuffle-then-split into disjoint, exhaustive train/validation
/// parts; the validation part gets `round(len * fraction)` rows.
pub fn split_validation(
    dataset: &Dataset,
    fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), DataError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DataError::InvalidFraction(fraction));
    }
    let n = dataset.len();
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = substream(seed, 1);
    indices.shuffle(&mut rng);
    let mut val_n = ((n as f64) * fraction).round() as usize;
    val_n = val_n.clamp(usize::from(n > 1), n.saturating_sub(1));
    let (val_idx, train_idx) = indices.split_at(val_n);
    Ok((dataset.select(train_idx), dataset.select(val_idx)))
}

/// Which corpus to fetch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    Fmnist,
}

impl DatasetKind {
    pub fn default_mirror(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "https://ossci-datasets.s3.amazonaws.com/mnist",
            DatasetKind::Fmnist => {
                "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com"
            }
        }
    }

    pub fn files(self) -> [&'static str; 4] {
        [
            "train-images-idx3-ubyte.gz",
            "train-labels-idx1-ubyte.gz",
            "t10k-images-idx3-ubyte.gz",
            "t10k-labels-idx1-ubyte.gz",
        ]
    }

    pub fn dir_name(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Fmnist => "fmnist",
        }
    }
}

const MANIFEST_NAME: &str = "checksums.json";

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn load_manifest(dir: &Path) -> Result<BTreeMap<String, String>, DataError> {
    let path = dir.join(MANIFEST_NAME);
    if !path.exists() {
        return Ok(BTreeMap::new());
    }
    let text = std::fs::read_to_string(&path)?;
    serde_json::from_str(&text)
        .map_err(|e| DataError::Fetch(format!("unreadable manifest {}: {e}", path.display())))
}

fn save_manifest(dir: &Path, manifest: &BTreeMap<String, String>) -> Result<(), DataError> {
    let text = serde_json::to_string_pretty(manifest)
        .map_err(|e| DataError::Fetch(format!("manifest encode: {e}")))?;
    std::fs::write(dir.join(MANIFEST_NAME), text)?;
    Ok(())
}

/// Downloads the four IDX files of a corpus into `dir`, verifying each
/// against the SHA-256 manifest (`checksums.json`) in that directory.
/// Files absent from the manifest are recorded on first fetch; mismatches
/// remove the offending file and abort. Files already present and
/// matching are not re-downloaded.
pub fn fetch(kind: DatasetKind, dir: &Path, mirror: Option<&str>) -> Result<Vec<PathBuf>, DataError> {
    std::fs::create_dir_all(dir)?;
    let base = mirror.unwrap_or_else(|| kind.default_mirror());
    let base = base.trim_end_matches('/');
    let mut manifest = load_manifest(dir)?;
    let mut manifest_dirty = false;

    let client = reqwest::blocking::Client::builder()
        .timeout(std::time::Duration::from_secs(300))
        .build()
        .map_err(|e| DataError::Fetch(e.to_string()))?;

    let mut out = Vec::new();
    for name in kind.files() {
        let path = dir.join(name);
        let bytes: Vec<u8> = if path.exists() {
            std::fs::read(&path)?
        } else {
            let url = format!("{base}/{name}");
            let resp = client
                .get(&url)
                .send()
                .and_then(|r| r.error_for_status())
                .map_err(|e| DataError::Fetch(format!("{url}: {e}")))?;
            let body = resp.bytes().map_err(|e| DataError::Fetch(format!("{url}: {e}")))?;
            std::fs::write(&path, &body)?;
            body.to_vec()
        };
        let actual = sha256_hex(&bytes);
        match manifest.get(name) {
            Some(expected) if *expected != actual => {
                std::fs::remove_file(&path)?;
                return Err(DataError::ChecksumMismatch {
                    file: name.to_string(),
                    expected: expected.clone(),
                    actual,
                });
            }
            Some(_) => {}
            None => {
                manifest.insert(name.to_string(), actual);
                manifest_dirty = true;
            }
        }
        out.push(path);
    }
    if manifest_dirty {
        save_manifest(dir, &manifest)?;
    }
    Ok(out)
}

/// Loads the train split of a fetched corpus from `dir`.
pub fn load_train(kind: DatasetKind, dir: &Path) -> Result<Dataset, DataError> {
    let files = kind.files();
    let mut ds = load_idx(&locate(dir, files[0])?, &locate(dir, files[1])?)?;
    ds.name = kind.dir_name().to_string();
    Ok(ds)
}

/// Loads the test split of a fetched corpus from `dir`.
pub fn load_test(kind: DatasetKind, dir: &Path) -> Result<Dataset, DataError> {
    let files = kind.files();
    let mut ds = load_idx(&locate(dir, files[2])?, &locate(dir, files[3])?)?;
    ds.name = format!("{}-test", kind.dir_name());
    Ok(ds)
}

/// Accepts both gzipped and already-inflated file names.
fn locate(dir: &Path, gz_name: &str) -> Result<PathBuf, DataError> {
    let gz = dir.join(gz_name);
    if gz.exists() {
        return Ok(gz);
    }
    let raw = dir.join(gz_name.trim_end_matches(".gz"));
    if raw.exists() {
        return Ok(raw);
    }
    Err(DataError::Io(io::Error::new(
        io::ErrorKind::NotFound,
        format!("{} not found in {}", gz_name, dir.display()),
    )))
}
