//! Independent solver for the ℓ2-regularized neighbor assignment
//!
//! ```text
//! min_{p ∈ Δ}  Σ_j p_j d_j + γ ‖p − π‖²
//! ```
//!
//! with `π` uniform over the candidates. Completing the square turns it
//! into the Euclidean projection of `π − d/(2γ)` onto the simplex, solved
//! exactly by sort-and-threshold. Choosing
//! `γ = (s·d(s+1) − Σ_{k≤s} d(k)) / 2` yields exactly `s` nonzeros.

use super::sparse::DistanceRow;
use crate::error::{Error, Result};

/// Euclidean projection of `v` onto `{p ≥ 0, Σp = 1}`.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    assert!(!v.is_empty(), "cannot project an empty vector");
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Solves the regularized problem for an explicit `gamma` over the
/// given candidate distances.
pub fn solve_with_gamma(distances: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if gamma.is_nan() || gamma <= 0.0 {
        return Err(Error::Parameter(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    let n = distances.len() as f64;
    let shifted: Vec<f64> = distances
        .iter()
        .map(|&d| 1.0 / n - d / (2.0 * gamma))
        .collect();
    Ok(project_simplex(&shifted))
}

/// The trade-off `γ` that makes the solution exactly `s`-sparse.
pub fn sparsity_gamma(distances: &[f64], s: usize) -> Result<f64> {
    if s == 0 || s + 1 > distances.len() {
        return Err(Error::Parameter(format!(
            "sparsity s={s} needs 1 ≤ s ≤ {}",
            distances.len().saturating_sub(1)
        )));
    }
    let mut sorted = distances.to_vec();
    sorted.sort_by(f64::total_cmp);
    let head: f64 = sorted[..s].iter().sum();
    Ok((s as f64 * sorted[s] - head) / 2.0)
}

/// Oracle counterpart of [`super::sparse::sparse_row`]: solves the
/// regularized program directly. Returns a dense row aligned with
/// `row.values` (the excluded self entry stays zero).
pub fn oracle_sparse_row(row: &DistanceRow, s: usize) -> Result<Vec<f64>> {
    if row.values.len() != row.candidate_ids.len() {
        return Err(Error::Dimension {
            op: "oracle_sparse_row",
            left: vec![row.values.len()],
            right: vec![row.candidate_ids.len()],
        });
    }
    let keep: Vec<usize> = (0..row.values.len())
        .filter(|&p| row.self_id != Some(row.candidate_ids[p]))
        .collect();
    let d: Vec<f64> = keep.iter().map(|&p| row.values[p]).collect();
    if d.iter().any(|v| v.is_nan()) || d.iter().all(|v| !v.is_finite()) {
        return Err(Error::Input("oracle needs finite distances".into()));
    }
    let gamma = sparsity_gamma(&d, s)?;
    if gamma <= 0.0 || !gamma.is_finite() {
        return Err(Error::Parameter(
            "degenerate row: the s nearest distances equal the (s+1)-th".into(),
        ));
    }
    let p = solve_with_gamma(&d, gamma)?;
    let mut out = vec![0.0; row.values.len()];
    for (&pos, v) in keep.iter().zip(p) {
        out[pos] = v;
    }
    Ok(out)
}
