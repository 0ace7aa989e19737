use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Isotropic Gaussian clusters. Class `k` is centred on the unit basis
/// vector `e_{k mod d}`; sample `i` has label `i mod classes`.
pub fn make_blobs(n: usize, classes: usize, d: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if classes < 2 || n < classes {
        return Err(Error::Parameter(format!(
            "need n ≥ classes ≥ 2, got n={n}, classes={classes}"
        )));
    }
    if d == 0 || spread.is_nan() || spread < 0.0 {
        return Err(Error::Parameter(format!(
            "need d ≥ 1 and spread ≥ 0, got d={d}, spread={spread}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * d);
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    for &y in &labels {
        for j in 0..d {
            let mean = if j == y % d { 1.0 } else { 0.0 };
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push(mean + spread * z);
        }
    }
    Dataset::new(Tensor::new(vec![n, d], data)?, labels, classes)
}
