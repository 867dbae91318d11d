//! Datasets: MNIST (IDX), CIFAR-10 (binary batches), synthetic Gaussians,
//! and deterministic minibatch iteration.

use std::fs;
use std::path::Path;

use crate::error::{CopiError, Result};
use crate::rng::{hash2, Rng};
use crate::tensor::{matmul, matmul_nt, Matrix};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const CIFAR_RECORD: usize = 1 + 3072;
const NUM_CLASSES: usize = 10;

/// Features (`D x N`) and one-hot labels (`C x N`), one sample per column.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Matrix,
    pub name: String,
}

impl Dataset {
    pub fn new(name: impl Into<String>, features: Matrix, labels: Matrix) -> Result<Self> {
        if labels.rows() > 0 && labels.cols() != features.cols() {
            return Err(CopiError::InvalidArgument(format!(
                "{} label columns for {} samples",
                labels.cols(),
                features.cols()
            )));
        }
        Ok(Self {
            features,
            labels,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.features.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.features.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.rows()
    }

    pub fn has_labels(&self) -> bool {
        self.labels.rows() > 0
    }

    /// Class index per sample (argmax of each label column).
    pub fn class_indices(&self) -> Vec<usize> {
        self.labels.argmax_columns()
    }

    /// The first `n` samples (or all of them if `n >= len`).
    pub fn subset(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            features: self.features.column_range(0, n),
            labels: if self.has_labels() {
                self.labels.column_range(0, n)
            } else {
                Matrix::zeros(0, n)
            },
            name: format!("{}[..{n}]", self.name),
        }
    }

    /// True when every label column is one-hot.
    pub fn labels_are_one_hot(&self) -> bool {
        is_one_hot(&self.labels)
    }
}

pub(crate) fn is_one_hot(labels: &Matrix) -> bool {
    (0..labels.cols()).all(|j| {
        let mut ones = 0;
        for i in 0..labels.rows() {
            match labels.get(i, j) {
                1.0 => ones += 1,
                0.0 => {}
                _ => return false,
            }
        }
        ones == 1
    })
}

/// One-hot encodes class bytes into a `classes x N` matrix.
pub fn one_hot(labels: &[u8], classes: usize) -> Result<Matrix> {
    let mut m = Matrix::zeros(classes, labels.len());
    for (j, &l) in labels.iter().enumerate() {
        if l as usize >= classes {
            return Err(CopiError::InvalidArgument(format!(
                "label {l} at sample {j} exceeds {classes} classes"
            )));
        }
        m.set(l as usize, j, 1.0);
    }
    Ok(m)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| CopiError::Read {
        path: path.display().to_string(),
        source,
    })
}

fn format_err(path: &Path, field: &'static str, detail: impl Into<String>) -> CopiError {
    CopiError::Format {
        path: path.display().to_string(),
        field,
        detail: detail.into(),
    }
}

fn read_be_u32(bytes: &[u8], offset: usize, path: &Path, field: &'static str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_err(path, field, "file truncated in header"))
}

/// Pixel bytes laid out sample-major (`n` records of `dim` bytes) into a
/// `dim x n` feature matrix scaled by 1/255.
fn pixels_to_features(pixels: &[u8], dim: usize, n: usize) -> Matrix {
    let mut data = vec![0.0; dim * n];
    for s in 0..n {
        let rec = &pixels[s * dim..(s + 1) * dim];
        for (d, &p) in rec.iter().enumerate() {
            data[d * n + s] = p as f64 / 255.0;
        }
    }
    Matrix::new(dim, n, data).expect("sized by construction")
}

/// Reads an IDX image file and its matching label file.
pub fn load_mnist(image_path: impl AsRef<Path>, label_path: impl AsRef<Path>) -> Result<Dataset> {
    let image_path = image_path.as_ref();
    let label_path = label_path.as_ref();
    let images = read_file(image_path)?;
    let labels = read_file(label_path)?;

    let magic = read_be_u32(&images, 0, image_path, "magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(format_err(
            image_path,
            "magic",
            format!("expected 0x{IDX_IMAGES_MAGIC:08x}, found 0x{magic:08x}"),
        ));
    }
    let n = read_be_u32(&images, 4, image_path, "image count")? as usize;
    let rows = read_be_u32(&images, 8, image_path, "rows")? as usize;
    let cols = read_be_u32(&images, 12, image_path, "cols")? as usize;
    let dim = rows * cols;
    let expected = 16 + n * dim;
    if images.len() < expected {
        return Err(format_err(
            image_path,
            "pixel data",
            format!(
                "truncated: {} bytes, header implies {expected}",
                images.len()
            ),
        ));
    }

    let lmagic = read_be_u32(&labels, 0, label_path, "magic")?;
    if lmagic != IDX_LABELS_MAGIC {
        return Err(format_err(
            label_path,
            "magic",
            format!("expected 0x{IDX_LABELS_MAGIC:08x}, found 0x{lmagic:08x}"),
        ));
    }
    let ln = read_be_u32(&labels, 4, label_path, "label count")? as usize;
    if ln != n {
        return Err(format_err(
            label_path,
            "label count",
            format!("{ln} labels for {n} images in {}", image_path.display()),
        ));
    }
    if labels.len() < 8 + n {
        return Err(format_err(
            label_path,
            "label data",
            format!(
                "truncated: {} bytes, header implies {}",
                labels.len(),
                8 + n
            ),
        ));
    }

    let features = pixels_to_features(&images[16..expected], dim, n);
    let onehot = one_hot(&labels[8..8 + n], NUM_CLASSES)
        .map_err(|e| format_err(label_path, "label value", e.to_string()))?;
    Dataset::new("mnist", features, onehot)
}

/// Loads MNIST from a directory holding the four canonical IDX files.
pub fn load_mnist_dir(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset)> {
    let dir = dir.as_ref();
    let train = load_mnist(
        dir.join("train-images-idx3-ubyte"),
        dir.join("train-labels-idx1-ubyte"),
    )?;
    let test = load_mnist(
        dir.join("t10k-images-idx3-ubyte"),
        dir.join("t10k-labels-idx1-ubyte"),
    )?;
    Ok((train, test))
}

/// Reads one or more CIFAR-10 binary batch files (3073-byte records).
pub fn load_cifar10<P: AsRef<Path>>(batch_paths: &[P]) -> Result<Dataset> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for path in batch_paths {
        let path = path.as_ref();
        let bytes = read_file(path)?;
        if bytes.len() % CIFAR_RECORD != 0 {
            return Err(format_err(
                path,
                "record length",
                format!("{} bytes is not a multiple of {CIFAR_RECORD}", bytes.len()),
            ));
        }
        for rec in bytes.chunks_exact(CIFAR_RECORD) {
            if rec[0] as usize >= NUM_CLASSES {
                return Err(format_err(path, "label value", format!("label {}", rec[0])));
            }
            labels.push(rec[0]);
            pixels.extend_from_slice(&rec[1..]);
        }
    }
    let n = labels.len();
    let features = pixels_to_features(&pixels, 3072, n);
    Dataset::new("cifar10", features, one_hot(&labels, NUM_CLASSES)?)
}

/// Loads the five training batches and the test batch from
/// `cifar-10-batches-bin`.
pub fn load_cifar10_dir(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset)> {
    let dir = dir.as_ref();
    let train: Vec<_> = (1..=5)
        .map(|i| dir.join(format!("data_batch_{i}.bin")))
        .collect();
    Ok((
        load_cifar10(&train)?,
        load_cifar10(&[dir.join("test_batch.bin")])?,
    ))
}

/// Covariance for [`synth_gaussian`].
#[derive(Debug, Clone, PartialEq)]
pub enum CovSpec {
    Identity,
    /// `A Aᵀ + ridge I` with square `A` uniform on `[-1, 1]`.
    RandomFactor {
        ridge: f64,
    },
    Explicit(Matrix),
}

/// Materialises the covariance described by `spec`, drawing from `rng` when
/// the spec is random.
pub fn build_covariance(rng: &mut Rng, dim: usize, spec: &CovSpec) -> Result<Matrix> {
    match spec {
        CovSpec::Identity => Ok(Matrix::identity(dim)),
        CovSpec::RandomFactor { ridge } => {
            let a = Matrix::from_fn(dim, dim, |_, _| rng.uniform(-1.0, 1.0));
            let mut cov = matmul_nt(&a, &a)?;
            for i in 0..dim {
                cov.set(i, i, cov.get(i, i) + ridge);
            }
            Ok(cov)
        }
        CovSpec::Explicit(m) => {
            if m.shape() != (dim, dim) {
                return Err(CopiError::InvalidArgument(format!(
                    "covariance is {}x{}, expected {dim}x{dim}",
                    m.rows(),
                    m.cols()
                )));
            }
            Ok(m.clone())
        }
    }
}

/// Lower-triangular `L` with `L Lᵀ = a`.
pub fn cholesky(a: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if a.cols() != n {
        return Err(CopiError::InvalidArgument(
            "cholesky of a non-square matrix".into(),
        ));
    }
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        if !(d > 0.0) {
            return Err(CopiError::InvalidArgument(format!(
                "matrix is not positive definite (pivot {j} = {d})"
            )));
        }
        let d = d.sqrt();
        l.set(j, j, d);
        for i in j + 1..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / d);
        }
    }
    Ok(l)
}

/// `n` draws from `N(0, Σ)` as a `dim x n` feature matrix with no labels.
pub fn synth_gaussian(rng: &mut Rng, dim: usize, n: usize, cov: &CovSpec) -> Result<Dataset> {
    if dim == 0 || n == 0 {
        return Err(CopiError::InvalidArgument(
            "synthetic data needs dim >= 1 and n >= 1".into(),
        ));
    }
    let sigma = build_covariance(rng, dim, cov)?;
    let chol = cholesky(&sigma)?;
    let noise = Matrix::from_fn(dim, n, |_, _| rng.normal());
    let features = matmul(&chol, &noise)?;
    Dataset::new("gaussian", features, Matrix::zeros(0, n))
}

/// Sample order for one epoch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub order: Vec<usize>,
    pub epoch_seed: u64,
}

impl BatchPlan {
    /// Shuffled order for `epoch`, seeded by `hash(seed, epoch)`.
    pub fn shuffled(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Result<Self> {
        Self::check(n, batch_size)?;
        let epoch_seed = hash2(seed, epoch);
        let mut order: Vec<usize> = (0..n).collect();
        Rng::new(epoch_seed).shuffle(&mut order);
        Ok(Self {
            batch_size,
            order,
            epoch_seed,
        })
    }

    /// Natural order, for evaluation passes.
    pub fn sequential(n: usize, batch_size: usize) -> Result<Self> {
        Self::check(n, batch_size)?;
        Ok(Self {
            batch_size,
            order: (0..n).collect(),
            epoch_seed: 0,
        })
    }

    fn check(n: usize, batch_size: usize) -> Result<()> {
        if batch_size == 0 {
            return Err(CopiError::InvalidArgument(
                "batch size must be positive".into(),
            ));
        }
        if batch_size > n {
            return Err(CopiError::InvalidArgument(format!(
                "batch size {batch_size} exceeds {n} samples"
            )));
        }
        Ok(())
    }

    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }
}

/// Iterates `(features, labels)` minibatches in plan order; the final batch
/// may be short.
pub fn batches<'a>(
    dataset: &'a Dataset,
    plan: &'a BatchPlan,
) -> impl Iterator<Item = (Matrix, Matrix)> + 'a {
    plan.order.chunks(plan.batch_size).map(move |idx| {
        (
            dataset.features.select_columns(idx),
            dataset.labels.select_columns(idx),
        )
    })
}
