//! Datasets: a synthetic Gaussian-cluster generator, IDX (MNIST) ingestion,
//! and seeded label corruption with pristine/corrupt bookkeeping.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, IdxError, Result};
use crate::nn::Batch;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Pairwise distance between synthetic class means.
pub const CLASS_SEPARATION: f64 = 4.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: u64,
    pub features: Vec<f64>,
    pub true_label: usize,
    pub observed_label: usize,
    pub corrupt: bool,
}

impl LabeledExample {
    pub fn clean(id: u64, features: Vec<f64>, label: usize) -> Self {
        LabeledExample {
            id,
            features,
            true_label: label,
            observed_label: label,
            corrupt: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisyDataset {
    pub num_classes: usize,
    pub input_dim: usize,
    pub train: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    pub noise_fraction: f64,
    pub noise_seed: u64,
    /// Fixed sample of pristine train ids used for per-epoch metrics.
    pub eval_pristine: Vec<u64>,
    /// Fixed sample of corrupt train ids used for per-epoch metrics.
    pub eval_corrupt: Vec<u64>,
}

/// Parameters of [`gen_synthetic`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticParams {
    pub classes: usize,
    pub per_class: usize,
    pub input_dim: usize,
    pub cluster_spread: f64,
    pub seed: u64,
}

impl SyntheticParams {
    /// The desk-scale dataset used by the experiment suite: 10 classes,
    /// 7500 examples (6000 train / 1500 test) in 32 dimensions.
    pub fn canonical() -> Self {
        SyntheticParams {
            classes: 10,
            per_class: 750,
            input_dim: 32,
            cluster_spread: 0.85,
            seed: 20_200_101,
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Orthonormal directions via Gram-Schmidt on Gaussian draws.
fn random_orthonormal(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    basis
}

/// Gaussian clusters around the vertices of a regular simplex.
///
/// Class means are `CLASS_SEPARATION / √2` times random orthonormal
/// directions, so every pair of means is `CLASS_SEPARATION` apart. Each
/// example is its class mean plus isotropic noise of standard deviation
/// `cluster_spread`. Examples get ids `0..C·per_class` in generation
/// order; the 80% of ids with the smallest seeded hash form the training
/// split.
pub fn gen_synthetic(params: &SyntheticParams) -> Result<NoisyDataset> {
    let SyntheticParams {
        classes,
        per_class,
        input_dim,
        cluster_spread,
        seed,
    } = *params;
    if classes < 2 || input_dim < classes {
        return Err(Error::Config(format!(
            "synthetic data needs C ≥ 2 and input_dim ≥ C (C={classes}, input_dim={input_dim})"
        )));
    }
    if !(cluster_spread >= 0.0) || 4.0 * cluster_spread > CLASS_SEPARATION {
        return Err(Error::Config(format!(
            "cluster_spread must lie in [0, {}], got {cluster_spread}",
            CLASS_SEPARATION / 4.0
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = CLASS_SEPARATION / std::f64::consts::SQRT_2;
    let means: Vec<Vec<f64>> = random_orthonormal(&mut rng, classes, input_dim)
        .into_iter()
        .map(|v| v.into_iter().map(|x| x * scale).collect())
        .collect();

    let mut all = Vec::with_capacity(classes * per_class);
    for i in 0..per_class {
        for (label, mean) in means.iter().enumerate() {
            let id = (i * classes + label) as u64;
            let features = mean
                .iter()
                .map(|&m| m + cluster_spread * rng.sample::<f64, _>(StandardNormal))
                .collect();
            all.push(LabeledExample::clean(id, features, label));
        }
    }

    let mut order: Vec<(u64, usize)> = all
        .iter()
        .enumerate()
        .map(|(i, ex)| (splitmix64(ex.id ^ seed.rotate_left(17)), i))
        .collect();
    order.sort_unstable();
    let n_train = (all.len() * 4) / 5;
    let mut is_train = vec![false; all.len()];
    for &(_, i) in &order[..n_train] {
        is_train[i] = true;
    }
    let (train, test): (Vec<_>, Vec<_>) = all
        .into_iter()
        .zip(is_train)
        .partition(|(_, t)| *t);
    Ok(NoisyDataset {
        num_classes: classes,
        input_dim,
        train: train.into_iter().map(|(e, _)| e).collect(),
        test: test.into_iter().map(|(e, _)| e).collect(),
        noise_fraction: 0.0,
        noise_seed: 0,
        eval_pristine: Vec::new(),
        eval_corrupt: Vec::new(),
    })
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

fn read_file(path: &Path) -> std::result::Result<Vec<u8>, IdxError> {
    fs::read(path).map_err(|source| IdxError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn check_len(path: &Path, bytes: &[u8], needed: usize) -> std::result::Result<(), IdxError> {
    if bytes.len() < needed {
        return Err(IdxError::Truncated {
            path: path.to_path_buf(),
            needed,
            actual: bytes.len(),
        });
    }
    Ok(())
}

fn check_magic(path: &Path, bytes: &[u8], expected: u32) -> std::result::Result<(), IdxError> {
    check_len(path, bytes, 4)?;
    let found = read_u32(bytes, 0);
    if found != expected {
        return Err(IdxError::BadMagic {
            path: path.to_path_buf(),
            found,
            expected,
        });
    }
    Ok(())
}

/// IDX label file: magic 0x00000801, count, then one byte per label.
pub fn read_idx_labels(path: &Path) -> std::result::Result<Vec<u8>, IdxError> {
    let bytes = read_file(path)?;
    check_magic(path, &bytes, IDX_LABELS_MAGIC)?;
    check_len(path, &bytes, 8)?;
    let n = read_u32(&bytes, 4) as usize;
    check_len(path, &bytes, 8 + n)?;
    Ok(bytes[8..8 + n].to_vec())
}

/// IDX image file: magic 0x00000803, count, rows, cols, then unsigned
/// bytes. Pixels are returned scaled to [0, 1], one row per image.
pub fn read_idx_images(path: &Path) -> std::result::Result<(usize, Vec<f64>, usize), IdxError> {
    let bytes = read_file(path)?;
    check_magic(path, &bytes, IDX_IMAGES_MAGIC)?;
    check_len(path, &bytes, 16)?;
    let n = read_u32(&bytes, 4) as usize;
    let rows = read_u32(&bytes, 8) as usize;
    let cols = read_u32(&bytes, 12) as usize;
    let pixels = rows * cols;
    check_len(path, &bytes, 16 + n * pixels)?;
    let data = bytes[16..16 + n * pixels]
        .iter()
        .map(|&b| b as f64 / 255.0)
        .collect();
    Ok((n, data, pixels))
}

/// Reads a matching image/label file pair. Example ids are
/// `id_offset + index in file`.
pub fn load_idx(images_path: &Path, labels_path: &Path, id_offset: u64) -> Result<Vec<LabeledExample>> {
    let labels = read_idx_labels(labels_path)?;
    let (n, pixels, dim) = read_idx_images(images_path)?;
    if n != labels.len() {
        return Err(IdxError::CountMismatch {
            images: n,
            labels: labels.len(),
        }
        .into());
    }
    Ok(labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            LabeledExample::clean(
                id_offset + i as u64,
                pixels[i * dim..(i + 1) * dim].to_vec(),
                y as usize,
            )
        })
        .collect())
}

/// MNIST-style dataset from four IDX files. Test ids follow train ids.
pub fn load_mnist(
    train_images: &Path,
    train_labels: &Path,
    test_images: &Path,
    test_labels: &Path,
) -> Result<NoisyDataset> {
    let train = load_idx(train_images, train_labels, 0)?;
    let test = load_idx(test_images, test_labels, train.len() as u64)?;
    let input_dim = train
        .first()
        .or(test.first())
        .map(|e| e.features.len())
        .unwrap_or(0);
    if test.iter().any(|e| e.features.len() != input_dim) {
        return Err(Error::Data("train and test images differ in size".into()));
    }
    let num_classes = train
        .iter()
        .chain(&test)
        .map(|e| e.true_label + 1)
        .max()
        .unwrap_or(0)
        .max(10);
    Ok(NoisyDataset {
        num_classes,
        input_dim,
        train,
        test,
        noise_fraction: 0.0,
        noise_seed: 0,
        eval_pristine: Vec::new(),
        eval_corrupt: Vec::new(),
    })
}

/// Re-draws the labels of `round(p · |train|)` seeded-uniformly selected
/// training examples uniformly over all classes and flags them corrupt.
///
/// Starts from the true labels, so corrupting an already corrupted copy
/// does not compound. Evaluation subsets are cleared.
pub fn corrupt_labels(ds: &NoisyDataset, p: f64, seed: u64) -> Result<NoisyDataset> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("noise fraction must lie in [0, 1], got {p}")));
    }
    let mut out = ds.clone();
    for ex in &mut out.train {
        ex.observed_label = ex.true_label;
        ex.corrupt = false;
    }
    let n = out.train.len();
    let count = (p * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = sample(&mut rng, n, count).into_vec();
    chosen.sort_unstable();
    for i in chosen {
        let ex = &mut out.train[i];
        ex.corrupt = true;
        ex.observed_label = rng.random_range(0..out.num_classes);
    }
    out.noise_fraction = p;
    out.noise_seed = seed;
    out.eval_pristine.clear();
    out.eval_corrupt.clear();
    Ok(out)
}

/// Samples up to `cap` pristine and up to `cap` corrupt train ids.
pub fn fix_eval_subsets(ds: &NoisyDataset, cap: usize, seed: u64) -> Result<NoisyDataset> {
    if cap == 0 {
        return Err(Error::Config("evaluation cap must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pick = |corrupt: bool| {
        let pool: Vec<u64> = ds
            .train
            .iter()
            .filter(|e| e.corrupt == corrupt)
            .map(|e| e.id)
            .collect();
        let k = cap.min(pool.len());
        let mut ids: Vec<u64> = sample(&mut rng, pool.len(), k)
            .into_iter()
            .map(|i| pool[i])
            .collect();
        ids.sort_unstable();
        ids
    };
    let mut out = ds.clone();
    out.eval_pristine = pick(false);
    out.eval_corrupt = pick(true);
    Ok(out)
}

/// Rows of `examples` stacked into a matrix.
pub fn feature_matrix<'a, I>(examples: I, dim: usize) -> Array2<f64>
where
    I: IntoIterator<Item = &'a LabeledExample>,
{
    let mut flat = Vec::new();
    let mut rows = 0;
    for e in examples {
        flat.extend_from_slice(&e.features);
        rows += 1;
    }
    Array2::from_shape_vec((rows, dim), flat).expect("feature rows share the input dimension")
}

/// Mini-batch of the given examples, using their observed labels.
pub fn make_batch(examples: &[&LabeledExample], dim: usize) -> Result<Batch> {
    Batch::new(
        feature_matrix(examples.iter().copied(), dim),
        examples.iter().map(|e| e.observed_label).collect(),
        examples.iter().map(|e| e.id).collect(),
    )
}

impl NoisyDataset {
    pub fn corrupt_count(&self) -> usize {
        self.train.iter().filter(|e| e.corrupt).count()
    }

    pub fn corrupt_ids(&self) -> Vec<u64> {
        self.train.iter().filter(|e| e.corrupt).map(|e| e.id).collect()
    }

    /// Copy holding only the given train and test examples (by id), with
    /// evaluation subsets cleared.
    pub fn subset(&self, train_ids: &[u64], test_ids: &[u64]) -> NoisyDataset {
        let lookup: std::collections::HashMap<u64, &LabeledExample> = self
            .train
            .iter()
            .chain(&self.test)
            .map(|e| (e.id, e))
            .collect();
        let take = |ids: &[u64]| ids.iter().map(|id| lookup[id].clone()).collect();
        NoisyDataset {
            num_classes: self.num_classes,
            input_dim: self.input_dim,
            train: take(train_ids),
            test: take(test_ids),
            noise_fraction: self.noise_fraction,
            noise_seed: self.noise_seed,
            eval_pristine: Vec::new(),
            eval_corrupt: Vec::new(),
        }
    }

    /// SHA-256 over every example's id, labels, corrupt flag and feature
    /// bits, train then test.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.num_classes as u64).to_le_bytes());
        h.update((self.input_dim as u64).to_le_bytes());
        for e in self.train.iter().chain(&self.test) {
            h.update(e.id.to_le_bytes());
            h.update((e.true_label as u64).to_le_bytes());
            h.update((e.observed_label as u64).to_le_bytes());
            h.update([e.corrupt as u8]);
            for f in &e.features {
                h.update(f.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn manifest(&self, source: DatasetSource) -> DatasetManifest {
        let mut h = Sha256::new();
        for id in self.corrupt_ids() {
            h.update(id.to_le_bytes());
        }
        DatasetManifest {
            source,
            noise_fraction: self.noise_fraction,
            noise_seed: self.noise_seed,
            num_classes: self.num_classes,
            input_dim: self.input_dim,
            train_size: self.train.len(),
            test_size: self.test.len(),
            corrupt_count: self.corrupt_count(),
            corrupt_ids_digest: hex::encode(h.finalize()),
            eval_pristine_size: self.eval_pristine.len(),
            eval_corrupt_size: self.eval_corrupt.len(),
            dataset_digest: self.digest(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic(SyntheticParams),
    Idx {
        train_images: String,
        train_labels: String,
        test_images: String,
        test_labels: String,
    },
}

/// Everything needed to rebuild and check a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub source: DatasetSource,
    pub noise_fraction: f64,
    pub noise_seed: u64,
    pub num_classes: usize,
    pub input_dim: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub corrupt_count: usize,
    pub corrupt_ids_digest: String,
    pub eval_pristine_size: usize,
    pub eval_corrupt_size: usize,
    pub dataset_digest: String,
}
