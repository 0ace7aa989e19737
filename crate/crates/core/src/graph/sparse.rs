//! Closed-form s-sparse neighbor distribution.
//!
//! For a row of distances sorted ascending as `d(1) ≤ d(2) ≤ …`, the `s`
//! nearest candidates receive
//!
//! ```text
//! p_j = (d(s+1) − d_j)₊ / Σ_{k≤s} (d(s+1) − d(k))
//! ```
//!
//! and every other candidate receives zero.

use crate::error::{Error, Result};

/// Distances from one node to a list of candidate nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceRow {
    pub values: Vec<f64>,
    pub candidate_ids: Vec<usize>,
    /// Candidate to exclude from ranking (treated as +∞).
    pub self_id: Option<usize>,
}

impl DistanceRow {
    /// Row whose candidate ids are simply the positions `0..values.len()`.
    pub fn new(values: Vec<f64>) -> Self {
        let candidate_ids = (0..values.len()).collect();
        DistanceRow {
            values,
            candidate_ids,
            self_id: None,
        }
    }

    pub fn with_self(mut self, id: usize) -> Self {
        self.self_id = Some(id);
        self
    }
}

/// How a row's probabilities were produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RowMode {
    /// The closed form with denominator `z > 0`.
    ClosedForm { z: f64 },
    /// Uniform fallback over the selected candidates (zero denominator or
    /// an infinite pivot). Carries no gradient.
    Uniform,
}

/// The ranked outcome of one sparse row, in terms of positions into the
/// input slice.
#[derive(Debug, Clone, PartialEq)]
pub struct RowSelection {
    /// Positions of the `s` nearest candidates, nearest first.
    pub selected: Vec<usize>,
    /// Probabilities aligned with `selected` (may contain zeros on
    /// boundary ties).
    pub probs: Vec<f64>,
    /// Position of the `(s+1)`-th nearest candidate, absent when every
    /// candidate is selected.
    pub pivot: Option<usize>,
    pub mode: RowMode,
}

/// Ranks candidates and evaluates the closed form.
///
/// `excluded(pos)` removes a position from the candidate set entirely;
/// `tie_id(pos)` gives the id used to break distance ties (ascending).
pub fn select_row(
    values: &[f64],
    s: usize,
    excluded: impl Fn(usize) -> bool,
    tie_id: impl Fn(usize) -> usize,
) -> Result<RowSelection> {
    let mut order: Vec<usize> = (0..values.len()).filter(|&p| !excluded(p)).collect();
    if s == 0 || s + 1 > order.len() {
        return Err(Error::Parameter(format!(
            "sparsity s={s} needs 1 ≤ s ≤ {} (candidates after exclusion minus one)",
            order.len().saturating_sub(1)
        )));
    }
    if order.iter().any(|&p| values[p].is_nan()) {
        return Err(Error::Input("distance row contains NaN".into()));
    }
    if order.iter().all(|&p| !values[p].is_finite()) {
        return Err(Error::Input(
            "all candidate distances are non-finite".into(),
        ));
    }
    order.sort_by(|&a, &b| {
        values[a]
            .total_cmp(&values[b])
            .then_with(|| tie_id(a).cmp(&tie_id(b)))
    });

    let selected = order[..s].to_vec();
    let pivot = order[s];
    let pivot_val = values[pivot];

    let finite_sel = selected.iter().filter(|&&p| values[p].is_finite()).count();
    if pivot_val.is_finite() {
        let z: f64 = selected.iter().map(|&p| pivot_val - values[p]).sum();
        if z > 0.0 && z.is_finite() {
            let probs = selected
                .iter()
                .map(|&p| (pivot_val - values[p]).max(0.0) / z)
                .collect();
            return Ok(RowSelection {
                selected,
                probs,
                pivot: Some(pivot),
                mode: RowMode::ClosedForm { z },
            });
        }
    }

    // Degenerate denominator or infinite pivot: uniform over the lowest-index
    // nearest candidates (finite ones only when some selected are infinite).
    let probs = selected
        .iter()
        .map(|&p| {
            if values[p].is_finite() {
                1.0 / finite_sel as f64
            } else {
                0.0
            }
        })
        .collect();
    Ok(RowSelection {
        selected,
        probs,
        pivot: Some(pivot),
        mode: RowMode::Uniform,
    })
}

/// Like [`select_row`], but a row with `s` or fewer candidates gets the
/// uniform distribution over all of them (the limit of the closed form as
/// the missing pivot distance goes to +∞). Rows without candidates yield
/// `None`.
pub fn select_row_lenient(
    values: &[f64],
    s: usize,
    excluded: impl Fn(usize) -> bool,
    tie_id: impl Fn(usize) -> usize,
) -> Result<Option<RowSelection>> {
    let candidates = (0..values.len()).filter(|&p| !excluded(p)).count();
    if candidates == 0 {
        return Ok(None);
    }
    if s == 0 || candidates > s {
        return select_row(values, s, excluded, tie_id).map(Some);
    }
    let mut order: Vec<usize> = (0..values.len()).filter(|&p| !excluded(p)).collect();
    order.sort_by(|&a, &b| {
        values[a]
            .total_cmp(&values[b])
            .then_with(|| tie_id(a).cmp(&tie_id(b)))
    });
    let probs = vec![1.0 / candidates as f64; candidates];
    Ok(Some(RowSelection {
        selected: order,
        probs,
        pivot: None,
        mode: RowMode::Uniform,
    }))
}

/// Sparse probability row as `(candidate_id, probability)` pairs with
/// strictly positive probabilities, nearest first.
pub fn sparse_row(row: &DistanceRow, s: usize) -> Result<Vec<(usize, f64)>> {
    if row.values.len() != row.candidate_ids.len() {
        return Err(Error::Dimension {
            op: "sparse_row",
            left: vec![row.values.len()],
            right: vec![row.candidate_ids.len()],
        });
    }
    let ids = &row.candidate_ids;
    let sel = select_row(&row.values, s, |p| row.self_id == Some(ids[p]), |p| ids[p])?;
    Ok(sel
        .selected
        .iter()
        .zip(&sel.probs)
        .filter(|(_, &p)| p > 0.0)
        .map(|(&pos, &p)| (ids[pos], p))
        .collect())
}

/// Dense form of [`sparse_row`] aligned with `row.values`.
pub fn sparse_row_dense(row: &DistanceRow, s: usize) -> Result<Vec<f64>> {
    let entries = sparse_row(row, s)?;
    let mut out = vec![0.0; row.values.len()];
    for (id, p) in entries {
        let pos = row.candidate_ids.iter().position(|&c| c == id).unwrap();
        out[pos] = p;
    }
    Ok(out)
}

/// Vector-Jacobian product of the closed form with the selection frozen.
///
/// `upstream[k]` is the gradient with respect to `probs[k]`; the result is
/// scattered into `grad_values` at the selected and pivot positions.
pub fn select_row_backward(sel: &RowSelection, upstream: &[f64], grad_values: &mut [f64]) {
    let (RowMode::ClosedForm { z }, Some(pivot)) = (sel.mode, sel.pivot) else {
        return;
    };
    let s = sel.selected.len() as f64;
    let total: f64 = upstream.iter().sum();
    let c: f64 = upstream.iter().zip(&sel.probs).map(|(g, p)| g * p).sum();
    for (k, &pos) in sel.selected.iter().enumerate() {
        // Entries tied with the pivot sit on the kink of (·)₊; the
        // unclamped branch is used for them.
        grad_values[pos] += (c - upstream[k]) / z;
    }
    grad_values[pivot] += (total - s * c) / z;
}
