//! Randomized checks shared by the module suites and the acceptance run.
//! Each returns the worst observed deviation so callers choose the
//! tolerance.

use cnn2gnn::graph::{
    batch_graph, build_batch_graph, oracle_sparse_row, sparse_row, sparse_row_dense,
};
use cnn2gnn::graph::{DistanceHead, DistanceRow, GraphColumns, GraphHead};
use cnn2gnn::nn::im2col;
use cnn2gnn::tensor::kernels::{self, ConvGeometry};
use cnn2gnn::{Tape, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{direct_conv, eigenvalues, grad_check, max_asymmetry, random_tensor, rel_err, rng};

fn random_row(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-5.0..5.0)).collect()
}

/// Largest |closed form − oracle| over `rows` random rows and every valid `s`.
pub fn oracle_gap(rows: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..rows {
        let n = r.random_range(2..=32);
        let row = DistanceRow::new(random_row(&mut r, n));
        for s in 1..n {
            let fast = sparse_row_dense(&row, s).unwrap();
            let oracle = oracle_sparse_row(&row, s).unwrap();
            for (a, b) in fast.iter().zip(&oracle) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    worst
}

/// Runs `cases` randomized sparse-row property cases and returns the
/// descriptions of any violations.
pub fn sparse_row_violations(cases: usize, seed: u64) -> Vec<String> {
    let mut r = rng(seed);
    let mut bad = Vec::new();
    for case in 0..cases {
        let n = r.random_range(2..=32);
        let mut values = random_row(&mut r, n);
        // A share of rows on a coarse grid to exercise ties.
        if r.random_bool(0.3) {
            for v in &mut values {
                *v = (*v * 2.0).round() / 2.0;
            }
        }
        let s = r.random_range(1..n);
        let p = sparse_row_dense(&DistanceRow::new(values.clone()), s).unwrap();
        let positive = p.iter().filter(|&&v| v > 0.0).count();
        if positive > s {
            bad.push(format!(
                "case {case}: {positive} positive entries for s={s}"
            ));
        }
        if p.iter().any(|&v| v < 0.0) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            bad.push(format!("case {case}: row leaves the simplex"));
        }
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted[s - 1] < sorted[s] && positive != s {
            bad.push(format!(
                "case {case}: {positive} positive entries with a strict gap at s={s}"
            ));
        }

        let lambda: f64 = r.random_range(0.01..100.0);
        let c: f64 = r.random_range(-100.0..100.0);
        // Affine maps can only be compared exactly where float rounding
        // cannot reorder near-ties.
        if sorted
            .windows(2)
            .all(|w| w[0] == w[1] || w[1] - w[0] > 1e-6)
        {
            let moved = DistanceRow::new(values.iter().map(|v| lambda * v + c).collect());
            let q = sparse_row_dense(&moved, s).unwrap();
            if p.iter().zip(&q).any(|(a, b)| (a - b).abs() > 1e-9) {
                bad.push(format!("case {case}: not invariant under {lambda}·d + {c}"));
            }
        }

        // Ties resolve by candidate id regardless of input order.
        let mut ids: Vec<usize> = (0..n).map(|k| k * 3 + 1).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, r.random_range(0..=i));
        }
        let shuffled = DistanceRow {
            values: perm.iter().map(|&k| values[k]).collect(),
            candidate_ids: perm.iter().map(|&k| ids[k]).collect(),
            self_id: None,
        };
        let plain = DistanceRow {
            values,
            candidate_ids: std::mem::take(&mut ids),
            self_id: None,
        };
        let mut a = sparse_row(&plain, s).unwrap();
        let mut b = sparse_row(&shuffled, s).unwrap();
        a.sort_by_key(|e| e.0);
        b.sort_by_key(|e| e.0);
        if a != b {
            bad.push(format!("case {case}: tie-breaking depends on input order"));
        }
    }
    bad
}

fn dims(r: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (
        r.random_range(1..5),
        r.random_range(1..5),
        r.random_range(1..5),
    )
}

fn signed_away_from_zero(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let mut t = random_tensor(r, shape, 0.1, 1.0);
    for v in t.data_mut() {
        if r.random_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

/// Distance rows whose values are pairwise separated by at least `gap / 2`.
fn separated_distances(r: &mut ChaCha8Rng, m: usize, n: usize, gap: f64) -> Tensor {
    let mut data = Vec::with_capacity(m * n);
    for _ in 0..m {
        let mut row: Vec<f64> = (0..n)
            .map(|k| k as f64 * gap + r.random_range(0.0..gap / 2.0))
            .collect();
        for i in (1..n).rev() {
            row.swap(i, r.random_range(0..=i));
        }
        data.extend(row);
    }
    Tensor::new(vec![m, n], data).unwrap()
}

fn ones(m: usize, n: usize) -> Tensor {
    Tensor::new(vec![m, n], vec![1.0; m * n]).unwrap()
}

/// Broadcasts a scalar var to `m × n`.
fn broadcast(t: &mut Tape, scalar: Var, m: usize, n: usize) -> Var {
    let s = t.reshape(scalar, vec![1, 1]).unwrap();
    let row = t.constant(ones(1, n));
    let col = t.constant(ones(m, 1));
    let wide = t.matmul(s, row).unwrap();
    t.matmul(col, wide).unwrap()
}

type Case = fn(&mut ChaCha8Rng) -> f64;

fn case_matmul(r: &mut ChaCha8Rng) -> f64 {
    let (m, k, n) = dims(r);
    let a = random_tensor(r, &[m, k], -1.0, 1.0);
    let b = random_tensor(r, &[k, n], -1.0, 1.0);
    grad_check(&[a, b], |t, v| t.matmul(v[0], v[1]).unwrap(), r, 1e-5)
}

fn case_add_mul(r: &mut ChaCha8Rng) -> f64 {
    let (m, n, _) = dims(r);
    let a = random_tensor(r, &[m, n], -1.0, 1.0);
    let b = random_tensor(r, &[m, n], -1.0, 1.0);
    grad_check(
        &[a, b],
        |t, v| {
            let s = t.add(v[0], v[1]).unwrap();
            t.mul(s, v[1]).unwrap()
        },
        r,
        1e-5,
    )
}

fn case_bias_scale(r: &mut ChaCha8Rng) -> f64 {
    let (m, n, _) = dims(r);
    let x = random_tensor(r, &[m, n], -1.0, 1.0);
    let b = random_tensor(r, &[1, n], -1.0, 1.0);
    let c: f64 = r.random_range(-2.0..2.0);
    grad_check(
        &[x, b],
        move |t, v| {
            let y = t.add_row_bias(v[0], v[1]).unwrap();
            let y = t.scale(y, c);
            t.add_scalar(y, 0.5)
        },
        r,
        1e-5,
    )
}

fn case_relu(r: &mut ChaCha8Rng) -> f64 {
    let (m, n, _) = dims(r);
    let x = signed_away_from_zero(r, &[m, n]);
    grad_check(&[x], |t, v| t.relu(v[0]), r, 1e-5)
}

fn case_shape_ops(r: &mut ChaCha8Rng) -> f64 {
    let (m, n, _) = dims(r);
    let x = random_tensor(r, &[m, n], -1.0, 1.0);
    let cols: Vec<usize> = (0..r.random_range(1..4))
        .map(|_| r.random_range(0..n))
        .collect();
    grad_check(
        &[x],
        move |t, v| {
            let tr = t.transpose(v[0]).unwrap();
            let flat = t.reshape(tr, vec![n, m]).unwrap();
            let back = t.transpose(flat).unwrap();
            let picked = t.gather_cols(back, &cols).unwrap();
            let total = t.sum(v[0]);
            let spread = broadcast(t, total, m, cols.len());
            t.add(picked, spread).unwrap()
        },
        r,
        1e-5,
    )
}

fn case_softmax(r: &mut ChaCha8Rng) -> f64 {
    let (m, n, _) = dims(r);
    let n = n + 1;
    let x = random_tensor(r, &[m, n], -3.0, 3.0);
    let tau: f64 = r.random_range(0.5..5.0);
    let labels: Vec<usize> = (0..m).map(|_| r.random_range(0..n)).collect();
    grad_check(
        &[x],
        move |t, v| {
            let a = t.softmax(v[0], tau).unwrap();
            let b = t.log_softmax(v[0], tau).unwrap();
            let ce = t.cross_entropy(v[0], &labels).unwrap();
            let ce = broadcast(t, ce, m, n);
            let ab = t.add(a, b).unwrap();
            t.add(ab, ce).unwrap()
        },
        r,
        1e-5,
    )
}

fn case_conv(r: &mut ChaCha8Rng) -> f64 {
    let geom = ConvGeometry {
        batch: r.random_range(1..3),
        channels: r.random_range(1..3),
        height: r.random_range(2..5),
        width: r.random_range(2..5),
        kernel_h: r.random_range(1..3),
        kernel_w: r.random_range(1..3),
        stride: r.random_range(1..3),
        padding: r.random_range(0..2),
    };
    let x = random_tensor(
        r,
        &[geom.batch, geom.channels, geom.height, geom.width],
        -1.0,
        1.0,
    );
    let out_c = r.random_range(1..3);
    let k = random_tensor(r, &[geom.patch_len(), out_c], -1.0, 1.0);
    grad_check(
        &[x, k],
        move |t, v| {
            let cols = t.im2col(v[0], geom).unwrap();
            let y = t.matmul(cols, v[1]).unwrap();
            t.nhwc_to_nchw(y, geom.batch, geom.out_h(), geom.out_w())
                .unwrap()
        },
        r,
        1e-5,
    )
}

fn case_sparse_rows(r: &mut ChaCha8Rng) -> f64 {
    let n = r.random_range(3..8);
    let m = r.random_range(1..5);
    let s = r.random_range(1..n - 1);
    let d = separated_distances(r, m, n, 0.1);
    let mask: Vec<bool> = (0..m * n).map(|k| k % n == (k / n) % n).collect();
    grad_check(
        &[d],
        move |t, v| t.sparse_rows(v[0], &mask, s).unwrap(),
        r,
        1e-5,
    )
}

fn case_normalize(r: &mut ChaCha8Rng) -> f64 {
    let n = r.random_range(1..6);
    let a = random_tensor(r, &[n, n], 0.0, 1.0);
    grad_check(
        &[a],
        |t, v| {
            let looped = t.add_identity(v[0]).unwrap();
            t.sym_normalize(looped).unwrap()
        },
        r,
        1e-5,
    )
}

fn case_composite(r: &mut ChaCha8Rng) -> f64 {
    loop {
        let (b, d, hdim) = dims(r);
        let c = r.random_range(2..4);
        let x = random_tensor(r, &[b, d], -1.0, 1.0);
        let w1 = random_tensor(r, &[d, hdim], -1.0, 1.0);
        let w2 = random_tensor(r, &[hdim, c], -1.0, 1.0);
        let labels: Vec<usize> = (0..b).map(|_| r.random_range(0..c)).collect();
        let pre = kernels::matmul(b, d, hdim, x.data(), w1.data());
        if pre.iter().any(|v| v.abs() < 1e-3) {
            continue;
        }
        return grad_check(
            &[x, w1, w2],
            move |t, v| {
                let hid = t.matmul(v[0], v[1]).unwrap();
                let hid = t.relu(hid);
                let logits = t.matmul(hid, v[2]).unwrap();
                let probs = t.softmax(logits, 1.0).unwrap();
                let ce = t.cross_entropy(logits, &labels).unwrap();
                let ce = broadcast(t, ce, b, c);
                t.add(probs, ce).unwrap()
            },
            r,
            1e-5,
        );
    }
}

pub const OP_CASES: [(&str, Case); 10] = [
    ("matmul", case_matmul),
    ("add+mul", case_add_mul),
    ("add_row_bias+scale+add_scalar", case_bias_scale),
    ("relu", case_relu),
    ("sum+transpose+reshape+gather_cols", case_shape_ops),
    ("softmax+log_softmax+cross_entropy", case_softmax),
    ("im2col+nhwc_to_nchw", case_conv),
    ("sparse_rows", case_sparse_rows),
    ("add_identity+sym_normalize", case_normalize),
    ("matmul+relu+softmax composite", case_composite),
];

/// Worst relative error per op family over `trials` random inputs each.
pub fn op_gradient_errors(trials: usize, seed: u64) -> Vec<(&'static str, f64)> {
    OP_CASES
        .iter()
        .enumerate()
        .map(|(k, (name, case))| {
            let mut r = rng(seed.wrapping_add(k as u64 * 7919));
            let worst = (0..trials).map(|_| case(&mut r)).fold(0.0f64, f64::max);
            (*name, worst)
        })
        .collect()
}

fn ranking_margin(dist: &Tensor, s: usize) -> f64 {
    let n = dist.rows();
    let mut margin = f64::INFINITY;
    for i in 0..n {
        let mut v: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| dist.at(i, j)).collect();
        v.sort_by(f64::total_cmp);
        for k in 0..s.min(v.len() - 1) {
            margin = margin.min(v[k + 1] - v[k]);
        }
    }
    margin
}

/// Relative error of the loss gradient with respect to all distance-head
/// parameters, taken through `build_batch_graph` and a two-layer GNN,
/// against central differences. Batches whose rankings have a near-tie
/// within `1e-3` are skipped. Returns the worst error over `cases`.
pub fn end_to_end_gradient_error(cases: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let (n_train, b, d) = (10, 6, 3);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    let mut attempt = 0;
    while done < cases {
        attempt += 1;
        let mut head = DistanceHead::new(d, &[6, 5], n_train, seed.wrapping_add(attempt));
        let feats = random_tensor(&mut r, &[n_train, d], -1.0, 1.0);
        let ids: Vec<usize> = (0..b)
            .map(|i| (i * 7 + attempt as usize) % n_train)
            .collect();
        let mut uniq = ids.clone();
        uniq.sort();
        uniq.dedup();
        if uniq.len() != b {
            continue;
        }
        // s = 1 rows are constant one-hots and carry no gradient.
        let s = r.random_range(2..b - 1);
        let x = feats.select_rows(&ids).unwrap();
        let full = head.forward(&x).unwrap();
        let within: Vec<f64> = (0..b)
            .flat_map(|i| ids.iter().map(|&j| full.at(i, j)).collect::<Vec<_>>())
            .collect();
        if ranking_margin(&Tensor::new(vec![b, b], within).unwrap(), s) < 1e-3 {
            continue;
        }
        let w1 = random_tensor(&mut r, &[d, 4], -1.0, 1.0);
        let w2 = random_tensor(&mut r, &[4, 3], -1.0, 1.0);
        let labels: Vec<usize> = (0..b).map(|_| r.random_range(0..3)).collect();

        let loss_at = |head: &mut DistanceHead, grads: bool| -> f64 {
            let mut tape = Tape::new();
            let bound = head.params().bind(&mut tape, grads);
            let xv = tape.constant(x.clone());
            let (_, p) =
                build_batch_graph(&mut tape, &*head, &bound, xv, &ids, s, GraphColumns::Batch)
                    .unwrap();
            let (w1v, w2v) = (tape.constant(w1.clone()), tape.constant(w2.clone()));
            let xw = tape.matmul(xv, w1v).unwrap();
            let hid = tape.matmul(p, xw).unwrap();
            let hid = tape.relu(hid);
            let hw = tape.matmul(hid, w2v).unwrap();
            let logits = tape.matmul(p, hw).unwrap();
            let loss = tape.cross_entropy(logits, &labels).unwrap();
            if grads {
                tape.backward(loss).unwrap();
                head.params_mut().pull_grads(&tape, &bound);
            }
            tape.value(loss).item()
        };
        loss_at(&mut head, true);
        let names: Vec<String> = head.params().iter().map(|(n, _)| n.to_string()).collect();
        let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
        let h = 1e-6;
        for name in &names {
            analytic.extend_from_slice(head.params().get(name).unwrap().grad().unwrap());
            for k in 0..head.params().get(name).unwrap().len() {
                head.params_mut().get_mut(name).unwrap().data_mut()[k] += h;
                let up = loss_at(&mut head, false);
                head.params_mut().get_mut(name).unwrap().data_mut()[k] -= 2.0 * h;
                let down = loss_at(&mut head, false);
                head.params_mut().get_mut(name).unwrap().data_mut()[k] += h;
                numeric.push((up - down) / (2.0 * h));
            }
        }
        if analytic.iter().all(|&g| g == 0.0) {
            // A zero gradient everywhere would make the comparison vacuous.
            worst = worst.max(1.0);
        }
        worst = worst.max(rel_err(&analytic, &numeric));
        done += 1;
    }
    worst
}

pub struct SpectralReport {
    pub asymmetry: f64,
    pub radius: f64,
    /// Affinity rows with a self-loop, a non-positive weight, more than `s`
    /// entries, or (batch columns only) a sum away from one.
    pub bad_rows: usize,
}

/// Worst-case symmetry and spectrum of `P` over random batches through
/// untrained heads, alternating batch-only and full columns.
pub fn spectral_extremes(batches: usize, seed: u64) -> SpectralReport {
    let mut r = rng(seed);
    let mut report = SpectralReport {
        asymmetry: 0.0,
        radius: 0.0,
        bad_rows: 0,
    };
    for trial in 0..batches as u64 {
        let n_train = 40;
        let head = DistanceHead::new(6, &[16, 8], n_train, seed ^ trial);
        let feats = random_tensor(&mut r, &[n_train, 6], -1.0, 1.0);
        let b = r.random_range(2..16);
        let mut ids: Vec<usize> = (0..n_train).collect();
        for i in (1..n_train).rev() {
            ids.swap(i, r.random_range(0..=i));
        }
        ids.truncate(b);
        let s = r.random_range(1..b);
        let columns = if trial % 2 == 0 {
            GraphColumns::Batch
        } else {
            GraphColumns::Full
        };
        let x = feats.select_rows(&ids).unwrap();
        let (aff, g) = batch_graph(&head, &x, &ids, s, columns).unwrap();
        report.asymmetry = report.asymmetry.max(max_asymmetry(&g.propagation));
        let radius = eigenvalues(&g.propagation)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        report.radius = report.radius.max(radius);
        for (i, row) in aff.rows.iter().enumerate() {
            let sum: f64 = row.iter().map(|e| e.1).sum();
            if row.iter().any(|&(j, w)| j == i || w <= 0.0)
                || row.len() > s
                || (columns == GraphColumns::Batch && (sum - 1.0).abs() > 1e-9)
            {
                report.bad_rows += 1;
            }
        }
    }
    report
}

/// Convolution through the patch matrix, in NCHW order.
pub fn conv_via_im2col(x: &Tensor, k: &Tensor, stride: usize, padding: usize) -> Vec<f64> {
    let b = x.shape()[0];
    let [o, c, kh, kw] = <[usize; 4]>::try_from(k.shape()).unwrap();
    let cols = im2col(x, (kh, kw), stride, padding).unwrap();
    let bank = kernels::transpose(o, c * kh * kw, k.data());
    let y = kernels::matmul(cols.rows(), c * kh * kw, o, cols.data(), &bank);
    let spatial = cols.rows() / b;
    let mut out = vec![0.0; y.len()];
    for bi in 0..b {
        for p in 0..spatial {
            for oc in 0..o {
                out[(bi * o + oc) * spatial + p] = y[(bi * spatial + p) * o + oc];
            }
        }
    }
    out
}

/// Largest |im2col conv − direct conv| over random configurations.
pub fn conv_gap(configs: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..configs {
        let (c, h, w) = (
            r.random_range(1..4),
            r.random_range(1..8),
            r.random_range(1..8),
        );
        let padding = r.random_range(0..3);
        let kh = r.random_range(1..=(h + 2 * padding).min(4));
        let kw = r.random_range(1..=(w + 2 * padding).min(4));
        let stride = r.random_range(1..4);
        let (b, o) = (r.random_range(1..3), r.random_range(1..4));
        let x = random_tensor(&mut r, &[b, c, h, w], -1.0, 1.0);
        let k = random_tensor(&mut r, &[o, c, kh, kw], -1.0, 1.0);
        let (expect, _) = direct_conv(&x, &k, stride, padding);
        let got = conv_via_im2col(&x, &k, stride, padding);
        assert_eq!(got.len(), expect.len());
        for (a, e) in got.iter().zip(&expect) {
            worst = worst.max((a - e).abs());
        }
    }
    worst
}
