use std::io::Write;

use super::head::GraphHead;
use crate::error::{Error, Result};
use crate::params::Bound;
use crate::tensor::{Tape, Tensor, Var};

/// Which training nodes a batch row may pick neighbors from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GraphColumns {
    /// Only the batch's own nodes.
    #[default]
    Batch,
    /// Every training node; the resulting rows are then cut down to the
    /// batch's columns without renormalizing.
    Full,
}

/// A batch's node features together with its propagation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBatch {
    pub features: Tensor,
    pub propagation: Tensor,
    pub node_ids: Vec<usize>,
}

impl GraphBatch {
    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }
}

/// Directed s-sparse neighbor probabilities, one sparse row per node.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseAffinity {
    pub n_rows: usize,
    pub n_cols: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl SparseAffinity {
    /// Collects the positive entries of a dense row-major matrix.
    pub fn from_dense(t: &Tensor) -> Self {
        let (n_rows, n_cols) = (t.rows(), t.row_width());
        let rows = (0..n_rows)
            .map(|i| {
                t.row(i)
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| p > 0.0)
                    .map(|(j, &p)| (j, p))
                    .collect()
            })
            .collect();
        SparseAffinity {
            n_rows,
            n_cols,
            rows,
        }
    }

    /// Writes `row_id,col_id,weight` edges, mapping positions through
    /// `row_ids` and `col_ids`.
    pub fn write_csv(&self, mut w: impl Write, row_ids: &[usize], col_ids: &[usize]) -> Result<()> {
        writeln!(w, "row_id,col_id,weight")?;
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, p) in row {
                writeln!(w, "{},{},{}", row_ids[i], col_ids[j], p)?;
            }
        }
        Ok(())
    }
}

/// Symmetrizes a directed probability matrix, adds self-loops and
/// applies `D^{-1/2} Â D^{-1/2}`.
pub fn normalize_affinity(tape: &mut Tape, directed: Var) -> Result<Var> {
    let t = tape.transpose(directed)?;
    let sum = tape.add(directed, t)?;
    let sym = tape.scale(sum, 0.5);
    let looped = tape.add_identity(sym)?;
    tape.sym_normalize(looped)
}

/// Sparse rows over a square distance matrix with the diagonal masked.
pub fn propagation_from_distances(tape: &mut Tape, dist: Var, s: usize) -> Result<(Var, Var)> {
    let n = tape.value(dist).rows();
    let mask: Vec<bool> = (0..n * n).map(|k| k / n == k % n).collect();
    let directed = tape.sparse_rows(dist, &mask, s)?;
    let p = normalize_affinity(tape, directed)?;
    Ok((directed, p))
}

/// Differentiable batch graph: head distances restricted to the batch,
/// per-row sparse distribution, symmetrization, self-loops and
/// normalization. Returns `(directed, propagation)`.
pub fn build_batch_graph<H: GraphHead + ?Sized>(
    tape: &mut Tape,
    head: &H,
    bound: &Bound,
    x: Var,
    batch_ids: &[usize],
    s: usize,
    columns: GraphColumns,
) -> Result<(Var, Var)> {
    let b = batch_ids.len();
    if b < 2 {
        return Err(Error::Batch(format!(
            "a graph needs at least 2 nodes, got {b}"
        )));
    }
    if tape.value(x).rows() != b {
        return Err(Error::Dimension {
            op: "build_batch_graph",
            left: tape.value(x).shape().to_vec(),
            right: vec![b],
        });
    }
    if s == 0 || s > b - 1 {
        return Err(Error::Parameter(format!(
            "sparsity s={s} must lie in [1, {}]",
            b - 1
        )));
    }
    match columns {
        GraphColumns::Batch => {
            let dist = head.distances(tape, bound, x, Some(batch_ids))?;
            propagation_from_distances(tape, dist, s)
        }
        GraphColumns::Full => {
            let n = head.n_train();
            let dist = head.distances(tape, bound, x, None)?;
            let mut mask = vec![false; b * n];
            for (i, &id) in batch_ids.iter().enumerate() {
                if id >= n {
                    return Err(Error::Index {
                        index: id,
                        bound: n,
                    });
                }
                mask[i * n + id] = true;
            }
            let full = tape.sparse_rows(dist, &mask, s)?;
            let directed = tape.gather_cols(full, batch_ids)?;
            let p = normalize_affinity(tape, directed)?;
            Ok((directed, p))
        }
    }
}

/// Forward-only [`build_batch_graph`].
pub fn batch_graph<H: GraphHead + ?Sized>(
    head: &H,
    features: &Tensor,
    batch_ids: &[usize],
    s: usize,
    columns: GraphColumns,
) -> Result<(SparseAffinity, GraphBatch)> {
    let mut tape = Tape::new();
    let bound = head.params().bind(&mut tape, false);
    let n = features.rows();
    let flat = features.clone().reshape(vec![n, features.row_width()])?;
    let x = tape.constant(flat.clone());
    let (directed, p) = build_batch_graph(&mut tape, head, &bound, x, batch_ids, s, columns)?;
    Ok((
        SparseAffinity::from_dense(tape.value(directed)),
        GraphBatch {
            features: flat,
            propagation: tape.value(p).clone(),
            node_ids: batch_ids.to_vec(),
        },
    ))
}

/// Fixed affinity used by the non-learned comparison graphs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    /// `v_iᵀ v_j`
    InnerProduct,
    /// `exp(−‖v_i − v_j‖₂)`
    Euclidean,
}

fn affinity(kind: BaselineKind, u: &[f64], v: &[f64]) -> f64 {
    match kind {
        BaselineKind::InnerProduct => u.iter().zip(v).map(|(x, y)| x * y).sum::<f64>(),
        BaselineKind::Euclidean => {
            let d2: f64 = u.iter().zip(v).map(|(x, y)| (x - y).powi(2)).sum();
            (-d2.sqrt()).exp()
        }
    }
}

/// Cutoff that keeps, on average, `s` of the other `b − 1` nodes in a
/// batch: the matching upper quantile of all off-diagonal affinities among
/// `features`.
pub fn calibrate_threshold(
    features: &Tensor,
    kind: BaselineKind,
    s: usize,
    b: usize,
) -> Result<f64> {
    let n = features.rows();
    if n < 2 || b < 2 {
        return Err(Error::Batch(format!(
            "calibration needs at least 2 nodes, got n={n}, b={b}"
        )));
    }
    if s == 0 || s > b - 1 {
        return Err(Error::Parameter(format!(
            "sparsity s={s} must lie in [1, {}]",
            b - 1
        )));
    }
    let mut values = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            values.push(affinity(kind, features.row(i), features.row(j)));
        }
    }
    values.sort_by(|a, b| b.total_cmp(a));
    let keep = ((values.len() as f64) * s as f64 / (b - 1) as f64).round() as usize;
    Ok(values[keep.clamp(1, values.len()) - 1])
}

/// Thresholded feature-similarity graph, symmetrized and normalized like
/// the learned graph. Off-diagonal affinities below `threshold` (or not
/// positive) are dropped. Built outside any tape.
pub fn baseline_graph(features: &Tensor, kind: BaselineKind, threshold: f64) -> Result<Tensor> {
    let b = features.rows();
    if b < 2 {
        return Err(Error::Batch(format!(
            "a graph needs at least 2 nodes, got {b}"
        )));
    }
    let mut a = vec![0.0; b * b];
    for i in 0..b {
        for j in 0..b {
            if i == j {
                continue;
            }
            let w = affinity(kind, features.row(i), features.row(j));
            if w >= threshold && w > 0.0 {
                a[i * b + j] = w;
            }
        }
    }
    let mut tape = Tape::new();
    let directed = tape.constant(Tensor::new(vec![b, b], a)?);
    let p = normalize_affinity(&mut tape, directed)?;
    Ok(tape.value(p).clone())
}
