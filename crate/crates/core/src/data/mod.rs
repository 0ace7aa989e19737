//! Datasets, loaders, synthetic blobs, splitting and batching.

mod blobs;
mod csv;
mod idx;

pub use self::blobs::make_blobs;
pub use self::csv::load_csv;
pub use self::idx::{load_idx, parse_idx, IdxArray};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Labeled samples. Sample `i` has id `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Tensor,
    labels: Vec<usize>,
    class_count: usize,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Input(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Index {
                index: bad,
                bound: class_count,
            });
        }
        if features.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("features must be finite".into()));
        }
        Ok(Dataset {
            features,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn ids(&self) -> std::ops::Range<usize> {
        0..self.len()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Extents of one sample (`[d]` or `[c, h, w]`).
    pub fn sample_shape(&self) -> &[usize] {
        &self.features.shape()[1..]
    }

    pub fn feature_width(&self) -> usize {
        self.features.row_width()
    }

    /// `[channels, height, width]` used when the teacher views a sample as
    /// an image. Flat samples of width `d` become `d/h² × h × h` with `h`
    /// the largest integer whose square divides `d`.
    pub fn image_shape(&self) -> [usize; 3] {
        match *self.sample_shape() {
            [c, h, w] => [c, h, w],
            [h, w] => [1, h, w],
            _ => {
                let d = self.feature_width();
                let h = (1..=d)
                    .rev()
                    .find(|h| h * h <= d && d.is_multiple_of(h * h))
                    .unwrap_or(1);
                [d / (h * h), h, h]
            }
        }
    }

    /// Rows `ids` flattened to `k × d`.
    pub fn flat_rows(&self, ids: &[usize]) -> Result<Tensor> {
        let t = self.features.select_rows(ids)?;
        let w = self.feature_width();
        t.reshape(vec![ids.len(), w])
    }

    pub fn labels_of(&self, ids: &[usize]) -> Vec<usize> {
        ids.iter().map(|&i| self.labels[i]).collect()
    }
}

/// Disjoint train/test id lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
}

/// Seeded shuffle of `0..n`, with `round(n·test_fraction)` ids held out.
pub fn split(n: usize, test_fraction: f64, seed: u64) -> Result<Split> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let n_test = (n as f64 * test_fraction).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(Error::Config(format!(
            "splitting {n} samples at {test_fraction} leaves one side empty"
        )));
    }
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test_ids = ids.split_off(n - n_test);
    Ok(Split {
        train_ids: ids,
        test_ids,
    })
}

/// One epoch of shuffled batches. The order depends only on
/// `(seed, epoch)`; a trailing batch with fewer than 2 ids is dropped.
pub fn batches(ids: &[usize], batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 {
        return Err(Error::Config(format!(
            "batch size must be at least 2, got {batch_size}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order = ids.to_vec();
    order.shuffle(&mut rng);
    Ok(order
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect())
}
