//! Dataset ingestion: IDX files (big-endian, the MNIST distribution format)
//! and seeded synthetic class blobs.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use fstl_core::protocols::LabeledData;
use fstl_core::rng::{derive_seed, SeedStream};
use fstl_core::scalar::Scalar;
use fstl_core::tensor::Tensor;

use crate::error::{Error, Result};

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Test,
}

/// Labeled samples plus class metadata.
#[derive(Debug, Clone)]
pub struct Dataset<T> {
    pub features: Tensor<T>,
    pub labels: Tensor<T>,
    pub class_count: usize,
    pub split: SplitTag,
}

impl<T: Scalar> Dataset<T> {
    pub fn n(&self) -> usize {
        self.features.rows()
    }

    /// Per-sample feature shape.
    pub fn sample_shape(&self) -> Vec<usize> {
        self.features.shape()[1..].to_vec()
    }

    pub fn to_labeled(&self) -> LabeledData<T> {
        LabeledData::new(self.features.clone(), self.labels.clone())
            .expect("row counts validated at construction")
    }

    /// A new dataset restricted to the given sample indices.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.gather_rows(indices),
            labels: self.labels.gather_rows(indices),
            class_count: self.class_count,
            split: self.split,
        }
    }
}

struct IdxReader {
    file: File,
    path: std::path::PathBuf,
}

impl IdxReader {
    fn open(path: &Path) -> Result<Self> {
        Ok(Self {
            file: File::open(path).map_err(|e| Error::io(path, e))?,
            path: path.to_path_buf(),
        })
    }

    fn u32_be(&mut self) -> Result<u32> {
        let mut buf = [0u8; 4];
        self.file
            .read_exact(&mut buf)
            .map_err(|_| Error::dataset(format!("{}: truncated header", self.path.display())))?;
        Ok(u32::from_be_bytes(buf))
    }

    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.file.read_exact(&mut buf).map_err(|_| {
            Error::dataset(format!(
                "{}: truncated data (expected {} bytes)",
                self.path.display(),
                n
            ))
        })?;
        Ok(buf)
    }
}

/// Loads an IDX image/label file pair. Pixels are scaled to [0, 1]; sample
/// counts are cross-checked between the two files.
pub fn load_idx<T: Scalar>(images: &Path, labels: &Path, split: SplitTag) -> Result<Dataset<T>> {
    let mut img = IdxReader::open(images)?;
    let magic = img.u32_be()?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::dataset(format!(
            "{}: bad magic number {magic} (expected {IDX_IMAGE_MAGIC} for images)",
            images.display()
        )));
    }
    let n_images = img.u32_be()? as usize;
    let rows = img.u32_be()? as usize;
    let cols = img.u32_be()? as usize;
    let pixels = img.bytes(n_images * rows * cols)?;

    let mut lab = IdxReader::open(labels)?;
    let magic = lab.u32_be()?;
    if magic != IDX_LABEL_MAGIC {
        return Err(Error::dataset(format!(
            "{}: bad magic number {magic} (expected {IDX_LABEL_MAGIC} for labels)",
            labels.display()
        )));
    }
    let n_labels = lab.u32_be()? as usize;
    if n_labels != n_images {
        return Err(Error::dataset(format!(
            "count mismatch: {n_images} images vs {n_labels} labels"
        )));
    }
    let raw_labels = lab.bytes(n_labels)?;

    let scale = 1.0 / 255.0;
    let features = Tensor::new(
        vec![n_images, 1, rows, cols],
        pixels
            .into_iter()
            .map(|b| T::from_acc(b as f64 * scale))
            .collect(),
    )?;
    let class_count = raw_labels.iter().copied().max().unwrap_or(0) as usize + 1;
    let labels = Tensor::new(
        vec![n_labels],
        raw_labels.into_iter().map(|b| T::from_acc(b as f64)).collect(),
    )?;
    Ok(Dataset {
        features,
        labels,
        class_count,
        split,
    })
}

/// Generates Gaussian class blobs. The seed keys the dataset *family*:
/// class means (seeded random directions scaled to `separation`, the
/// vertices of a random simplex for small class counts) depend only on the
/// seed, while the per-sample noise stream additionally depends on the
/// split tag, so train and test sets built from one seed share a
/// distribution but no samples. Classes are interleaved sample-by-sample.
#[allow(clippy::too_many_arguments)]
pub fn synth_dataset<T: Scalar>(
    seed: u64,
    n_per_class: usize,
    classes: usize,
    dims: &[usize],
    separation: f64,
    noise: f64,
    split: SplitTag,
) -> Result<Dataset<T>> {
    if n_per_class == 0 {
        return Err(Error::dataset("empty class: n_per_class must be >= 1"));
    }
    if classes < 2 {
        return Err(Error::dataset("need at least 2 classes"));
    }
    let dim: usize = dims.iter().product();
    if dim == 0 {
        return Err(Error::dataset("empty input dims"));
    }
    let mut mean_stream = SeedStream::new(derive_seed(seed, &[0x73796e7468]));
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| mean_stream.normal()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
            v.into_iter().map(|x| x / norm * separation).collect()
        })
        .collect();

    let split_tag = match split {
        SplitTag::Train => 0u64,
        SplitTag::Test => 1,
    };
    let mut stream = SeedStream::new(derive_seed(seed, &[0x006e_6f69_7365, split_tag]));
    let n = n_per_class * classes;
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        for &m in &means[c] {
            features.push(T::from_acc(m + noise * stream.normal()));
        }
        labels.push(T::from_acc(c as f64));
    }
    let mut shape = vec![n];
    shape.extend_from_slice(dims);
    Ok(Dataset {
        features: Tensor::new(shape, features)?,
        labels: Tensor::new(vec![n], labels)?,
        class_count: classes,
        split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use fstl_core::arch::mlp_classifier;
    use fstl_core::latency::CostParams;
    use fstl_core::protocols::{train, ProtocolKind, RoundConfig, StopRule};
    use std::io::Write;

    fn write_idx_images(path: &Path, n: usize, rows: usize, cols: usize, magic: u32) {
        let mut f = File::create(path).unwrap();
        f.write_all(&magic.to_be_bytes()).unwrap();
        f.write_all(&(n as u32).to_be_bytes()).unwrap();
        f.write_all(&(rows as u32).to_be_bytes()).unwrap();
        f.write_all(&(cols as u32).to_be_bytes()).unwrap();
        let data: Vec<u8> = (0..n * rows * cols).map(|i| (i % 256) as u8).collect();
        f.write_all(&data).unwrap();
    }

    fn write_idx_labels(path: &Path, labels: &[u8], magic: u32) {
        let mut f = File::create(path).unwrap();
        f.write_all(&magic.to_be_bytes()).unwrap();
        f.write_all(&(labels.len() as u32).to_be_bytes()).unwrap();
        f.write_all(labels).unwrap();
    }

    #[test]
    fn idx_round_trip_and_value_range() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lab = dir.path().join("lab");
        write_idx_images(&img, 4, 3, 3, IDX_IMAGE_MAGIC);
        write_idx_labels(&lab, &[0, 1, 2, 1], IDX_LABEL_MAGIC);
        let ds: Dataset<f32> = load_idx(&img, &lab, SplitTag::Train).unwrap();
        assert_eq!(ds.n(), 4);
        assert_eq!(ds.sample_shape(), vec![1, 3, 3]);
        assert_eq!(ds.class_count, 3);
        assert!(ds.features.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(ds.labels.data(), &[0.0, 1.0, 2.0, 1.0]);
    }

    #[test]
    fn idx_bad_magic_is_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lab = dir.path().join("lab");
        write_idx_images(&img, 2, 2, 2, 0xDEAD);
        write_idx_labels(&lab, &[0, 1], IDX_LABEL_MAGIC);
        let err = load_idx::<f32>(&img, &lab, SplitTag::Train).unwrap_err();
        assert!(err.to_string().contains("bad magic number"), "{err}");
    }

    #[test]
    fn idx_count_mismatch_is_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lab = dir.path().join("lab");
        write_idx_images(&img, 3, 2, 2, IDX_IMAGE_MAGIC);
        write_idx_labels(&lab, &[0, 1], IDX_LABEL_MAGIC);
        let err = load_idx::<f32>(&img, &lab, SplitTag::Train).unwrap_err();
        assert!(err.to_string().contains("count mismatch"), "{err}");
    }

    #[test]
    fn idx_truncation_is_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lab = dir.path().join("lab");
        write_idx_images(&img, 4, 3, 3, IDX_IMAGE_MAGIC);
        // Chop off the tail of the image data.
        let bytes = std::fs::read(&img).unwrap();
        std::fs::write(&img, &bytes[..bytes.len() - 5]).unwrap();
        write_idx_labels(&lab, &[0, 1, 2, 1], IDX_LABEL_MAGIC);
        let err = load_idx::<f32>(&img, &lab, SplitTag::Train).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn reference_mnist_files_load_with_documented_counts() {
        // Exercises the full-size path when the real IDX files are around
        // (FSTL_MNIST_DIR or ./data); skipped otherwise.
        let dir = std::env::var("FSTL_MNIST_DIR")
            .map(std::path::PathBuf::from)
            .unwrap_or_else(|_| {
                Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
            });
        let train_images = dir.join("train-images-idx3-ubyte");
        if !train_images.exists() {
            eprintln!("reference MNIST files not present; skipping");
            return;
        }
        let train: Dataset<f32> = load_idx(
            &train_images,
            &dir.join("train-labels-idx1-ubyte"),
            SplitTag::Train,
        )
        .unwrap();
        assert_eq!(train.n(), 60_000);
        assert_eq!(train.sample_shape(), vec![1, 28, 28]);
        assert_eq!(train.class_count, 10);
        assert!(train.features.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let test: Dataset<f32> = load_idx(
            &dir.join("t10k-images-idx3-ubyte"),
            &dir.join("t10k-labels-idx1-ubyte"),
            SplitTag::Test,
        )
        .unwrap();
        assert_eq!(test.n(), 10_000);
    }

    #[test]
    fn synthetic_is_deterministic_per_seed() {
        let a: Dataset<f32> = synth_dataset(9, 20, 3, &[8], 2.5, 1.0, SplitTag::Train).unwrap();
        let b: Dataset<f32> = synth_dataset(9, 20, 3, &[8], 2.5, 1.0, SplitTag::Train).unwrap();
        assert!(a.features.bit_eq(&b.features));
        assert!(a.labels.bit_eq(&b.labels));
        let c: Dataset<f32> = synth_dataset(10, 20, 3, &[8], 2.5, 1.0, SplitTag::Train).unwrap();
        assert!(!a.features.bit_eq(&c.features));
    }

    #[test]
    fn empty_class_is_rejected() {
        let err = synth_dataset::<f32>(9, 0, 3, &[8], 2.5, 1.0, SplitTag::Train).unwrap_err();
        assert!(err.to_string().contains("empty class"), "{err}");
    }

    #[test]
    fn train_and_test_splits_share_means_but_not_samples() {
        let train_ds: Dataset<f32> =
            synth_dataset(11, 10, 2, &[4], 3.0, 1.0, SplitTag::Train).unwrap();
        let test_ds: Dataset<f32> =
            synth_dataset(11, 10, 2, &[4], 3.0, 1.0, SplitTag::Test).unwrap();
        assert!(!train_ds.features.bit_eq(&test_ds.features));
        // Per-class empirical means agree across splits (same blob centers).
        for c in 0..2 {
            for d in 0..4 {
                let mean_of = |ds: &Dataset<f32>| {
                    let mut acc = 0.0f64;
                    let mut count = 0;
                    for i in 0..ds.n() {
                        if ds.labels.data()[i] as usize == c {
                            acc += ds.features.row(i)[d] as f64;
                            count += 1;
                        }
                    }
                    acc / count as f64
                };
                let diff = (mean_of(&train_ds) - mean_of(&test_ds)).abs();
                assert!(diff < 1.5, "class {c} dim {d}: split means differ by {diff}");
            }
        }
    }

    #[test]
    fn well_separated_blobs_train_past_95_percent() {
        let train_ds: Dataset<f32> =
            synth_dataset(11, 100, 2, &[8], 4.0, 1.0, SplitTag::Train).unwrap();
        let test_ds: Dataset<f32> =
            synth_dataset(11, 50, 2, &[8], 4.0, 1.0, SplitTag::Test).unwrap();
        // A linear classifier (dense + head is linear; the hidden relu layer
        // only helps) trained briefly must exceed 95% accuracy.
        let cfg = RoundConfig {
            protocol: ProtocolKind::Fl,
            max_rounds: 10,
            local_epochs: 1,
            batch_size: 16,
            eta: 0.1,
            alpha: 1.0,
            cut: None,
            seed: 5,
            stop: StopRule::MaxRounds,
        };
        let spec = mlp_classifier(8, 16, 2);
        let (records, _) = train(
            &cfg,
            &spec,
            &[train_ds.to_labeled()],
            &test_ds.to_labeled(),
            None,
            &CostParams::default(),
        )
        .unwrap();
        let final_acc = records.last().unwrap().test_accuracy;
        assert!(final_acc > 0.95, "final accuracy {final_acc}");
    }
}
