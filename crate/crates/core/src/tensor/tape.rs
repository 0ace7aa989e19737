use super::kernels::{self, ConvGeometry};
use super::Tensor;
use crate::error::{Error, Result};
use crate::graph::sparse::{select_row_backward, select_row_lenient, RowSelection};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRowBias(Var, Var),
    Relu(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sum(Var),
    Transpose(Var),
    Reshape(Var),
    GatherCols(Var, Vec<usize>),
    Softmax(Var, f64),
    LogSoftmax(Var, f64),
    CrossEntropy(Var, Vec<usize>),
    Im2col(Var, ConvGeometry),
    NhwcToNchw(Var, [usize; 4]),
    SparseRows(Var, Vec<Option<RowSelection>>),
    AddIdentity(Var),
    SymNormalize(Var, Vec<f64>),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            MatMul(a, b) | Add(a, b) | Mul(a, b) | AddRowBias(a, b) => vec![*a, *b],
            Relu(x)
            | Scale(x, _)
            | AddScalar(x)
            | Sum(x)
            | Transpose(x)
            | Reshape(x)
            | GatherCols(x, _)
            | Softmax(x, _)
            | LogSoftmax(x, _)
            | CrossEntropy(x, _)
            | Im2col(x, _)
            | NhwcToNchw(x, _)
            | SparseRows(x, _)
            | AddIdentity(x)
            | SymNormalize(x, _) => vec![*x],
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// An append-only computation record.
///
/// Nodes are stored in execution order, so the arena order is already a
/// topological order and backward is a single reverse sweep.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn dims2(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.row_width())
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Gradients are accumulated into it on backward when
    /// `tensor.requires_grad()` is set.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let needs_grad = tensor.requires_grad();
        self.push(tensor, Op::Leaf, needs_grad)
    }

    /// Records a leaf that never receives gradients.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a leaf.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op) -> Var {
        let needs_grad = op.inputs().iter().any(|v| self.nodes[v.0].needs_grad);
        let value = Tensor::new(shape, data).expect("op produced inconsistent shape");
        self.push(value, op, needs_grad)
    }

    fn check_2d(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let t = self.value(v);
        if t.rank() != 2 {
            return Err(Error::Shape(format!(
                "{op} expects a 2-d tensor, got {:?}",
                t.shape()
            )));
        }
        Ok(dims2(t))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.check_2d(a, "matmul")?;
        let (k2, n) = self.check_2d(b, "matmul")?;
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul",
                left: self.value(a).shape().to_vec(),
                right: self.value(b).shape().to_vec(),
            });
        }
        let data = kernels::matmul(m, k, n, self.value(a).data(), self.value(b).data());
        Ok(self.record(vec![m, n], data, Op::MatMul(a, b)))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Dimension {
                op,
                left: self.value(a).shape().to_vec(),
                right: self.value(b).shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.record(shape, data, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.record(shape, data, Op::Mul(a, b)))
    }

    /// Adds a length-`n` bias to every row of an `m×n` matrix.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.check_2d(x, "add_row_bias")?;
        if self.value(bias).len() != n {
            return Err(Error::Dimension {
                op: "add_row_bias",
                left: self.value(x).shape().to_vec(),
                right: self.value(bias).shape().to_vec(),
            });
        }
        let b = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        for i in 0..m {
            data[i * n..(i + 1) * n]
                .iter_mut()
                .zip(b)
                .for_each(|(v, bj)| *v += bj);
        }
        Ok(self.record(vec![m, n], data, Op::AddRowBias(x, bias)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| v.max(0.0)).collect();
        let shape = t.shape().to_vec();
        self.record(shape, data, Op::Relu(x))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| v * factor).collect();
        let shape = t.shape().to_vec();
        self.record(shape, data, Op::Scale(x, factor))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| v + c).collect();
        let shape = t.shape().to_vec();
        self.record(shape, data, Op::AddScalar(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.record(vec![1], vec![s], Op::Sum(x))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.check_2d(x, "transpose")?;
        let data = kernels::transpose(m, n, self.value(x).data());
        Ok(self.record(vec![n, m], data, Op::Transpose(x)))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x);
        if shape.iter().product::<usize>() != t.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                t.shape()
            )));
        }
        let data = t.data().to_vec();
        Ok(self.record(shape, data, Op::Reshape(x)))
    }

    /// Selects columns of an `m×n` matrix (repeats allowed).
    pub fn gather_cols(&mut self, x: Var, cols: &[usize]) -> Result<Var> {
        let (m, n) = self.check_2d(x, "gather_cols")?;
        if let Some(&bad) = cols.iter().find(|&&c| c >= n) {
            return Err(Error::Index {
                index: bad,
                bound: n,
            });
        }
        let src = self.value(x).data();
        let k = cols.len();
        let mut data = Vec::with_capacity(m * k);
        for i in 0..m {
            data.extend(cols.iter().map(|&c| src[i * n + c]));
        }
        Ok(self.record(vec![m, k], data, Op::GatherCols(x, cols.to_vec())))
    }

    fn check_tau(tau: f64) -> Result<()> {
        if tau <= 0.0 || !tau.is_finite() {
            return Err(Error::Parameter(format!(
                "temperature must be positive, got {tau}"
            )));
        }
        Ok(())
    }

    /// Row-wise softmax of `x / tau` over the last axis.
    pub fn softmax(&mut self, x: Var, tau: f64) -> Result<Var> {
        Self::check_tau(tau)?;
        let t = self.value(x);
        let w = *t.shape().last().unwrap();
        let mut data = vec![0.0; t.len()];
        for (src, dst) in t.data().chunks(w).zip(data.chunks_mut(w)) {
            kernels::softmax_into(src, tau, dst);
        }
        let shape = t.shape().to_vec();
        Ok(self.record(shape, data, Op::Softmax(x, tau)))
    }

    /// Row-wise log-softmax of `x / tau` over the last axis.
    pub fn log_softmax(&mut self, x: Var, tau: f64) -> Result<Var> {
        Self::check_tau(tau)?;
        let t = self.value(x);
        let w = *t.shape().last().unwrap();
        let mut data = vec![0.0; t.len()];
        for (src, dst) in t.data().chunks(w).zip(data.chunks_mut(w)) {
            kernels::log_softmax_into(src, tau, dst);
        }
        let shape = t.shape().to_vec();
        Ok(self.record(shape, data, Op::LogSoftmax(x, tau)))
    }

    /// Mean over rows of `−log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (b, c) = self.check_2d(logits, "cross_entropy")?;
        if labels.len() != b {
            return Err(Error::Dimension {
                op: "cross_entropy",
                left: vec![b, c],
                right: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Index {
                index: bad,
                bound: c,
            });
        }
        let mut logp = vec![0.0; c];
        let mut loss = 0.0;
        for (row, &y) in self.value(logits).data().chunks(c).zip(labels) {
            kernels::log_softmax_into(row, 1.0, &mut logp);
            loss -= logp[y];
        }
        Ok(self.record(
            vec![1],
            vec![loss / b as f64],
            Op::CrossEntropy(logits, labels.to_vec()),
        ))
    }

    /// Unfolds an NCHW tensor into its patch matrix.
    pub fn im2col(&mut self, x: Var, geom: ConvGeometry) -> Result<Var> {
        let t = self.value(x);
        let expect = [geom.batch, geom.channels, geom.height, geom.width];
        if t.shape() != expect {
            return Err(Error::Dimension {
                op: "im2col",
                left: t.shape().to_vec(),
                right: expect.to_vec(),
            });
        }
        if !geom.fits() {
            return Err(Error::Shape(format!(
                "kernel {}×{} does not fit input {}×{} with padding {}",
                geom.kernel_h, geom.kernel_w, geom.height, geom.width, geom.padding
            )));
        }
        let data = kernels::im2col(&geom, t.data());
        Ok(self.record(
            vec![geom.patch_count(), geom.patch_len()],
            data,
            Op::Im2col(x, geom),
        ))
    }

    /// Reorders a `(b·h·w) × c` matrix into a `b×c×h×w` tensor.
    pub fn nhwc_to_nchw(&mut self, x: Var, b: usize, h: usize, w: usize) -> Result<Var> {
        let (rows, c) = self.check_2d(x, "nhwc_to_nchw")?;
        if rows != b * h * w {
            return Err(Error::Shape(format!(
                "{rows} rows cannot be split into {b}×{h}×{w}"
            )));
        }
        let src = self.value(x).data();
        let mut data = vec![0.0; src.len()];
        for bi in 0..b {
            for p in 0..h * w {
                for ci in 0..c {
                    data[(bi * c + ci) * h * w + p] = src[(bi * h * w + p) * c + ci];
                }
            }
        }
        Ok(self.record(vec![b, c, h, w], data, Op::NhwcToNchw(x, [b, h, w, c])))
    }

    /// Applies the closed-form sparse distribution to every row of a
    /// distance matrix. `excluded[i*n+j]` removes candidate `j` from row
    /// `i`. Rows with at most `s` candidates are uniform over them; rows
    /// with none are all-zero.
    ///
    /// The ranking is frozen during backward, so gradients flow through
    /// the distance values only.
    pub fn sparse_rows(&mut self, dist: Var, excluded: &[bool], s: usize) -> Result<Var> {
        let (m, n) = self.check_2d(dist, "sparse_rows")?;
        assert_eq!(excluded.len(), m * n, "exclusion mask must match distances");
        let d = self.value(dist).data();
        let mut data = vec![0.0; m * n];
        let mut selections = Vec::with_capacity(m);
        for i in 0..m {
            let row = &d[i * n..(i + 1) * n];
            let mask = &excluded[i * n..(i + 1) * n];
            let sel = select_row_lenient(row, s, |p| mask[p], |p| p)?;
            if let Some(sel) = &sel {
                for (&pos, &p) in sel.selected.iter().zip(&sel.probs) {
                    data[i * n + pos] = p;
                }
            }
            selections.push(sel);
        }
        Ok(self.record(vec![m, n], data, Op::SparseRows(dist, selections)))
    }

    /// `x + I` for a square matrix.
    pub fn add_identity(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.check_2d(x, "add_identity")?;
        if m != n {
            return Err(Error::Shape(format!(
                "add_identity needs a square matrix, got {m}×{n}"
            )));
        }
        let mut data = self.value(x).data().to_vec();
        for i in 0..n {
            data[i * n + i] += 1.0;
        }
        Ok(self.record(vec![n, n], data, Op::AddIdentity(x)))
    }

    /// `D^{-1/2} A D^{-1/2}` with `D` the diagonal of row sums of `A`.
    /// Rows summing to zero are left at zero.
    pub fn sym_normalize(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.check_2d(a, "sym_normalize")?;
        if m != n {
            return Err(Error::Shape(format!(
                "sym_normalize needs a square matrix, got {m}×{n}"
            )));
        }
        let src = self.value(a).data();
        let deg: Vec<f64> = src.chunks(n).map(|r| r.iter().sum()).collect();
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if deg[i] > 0.0 && deg[j] > 0.0 {
                    data[i * n + j] = src[i * n + j] / (deg[i] * deg[j]).sqrt();
                }
            }
        }
        Ok(self.record(vec![n, n], data, Op::SymNormalize(a, deg)))
    }

    /// Reverse sweep from a scalar `loss`. Gradients accumulate into every
    /// `requires_grad` leaf; returns the number of ops visited.
    pub fn backward(&mut self, loss: Var) -> Result<usize> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut visited = 0;
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            visited += 1;
            if let Op::Leaf = self.nodes[idx].op {
                self.nodes[idx].value.accumulate_grad(&g);
                continue;
            }
            for (input, gin) in self.vjp(idx, &g) {
                if !self.nodes[input.0].needs_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&gin).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(gin),
                }
            }
        }
        Ok(visited)
    }

    /// Input gradients of node `idx` given its output gradient `g`.
    fn vjp(&self, idx: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[idx];
        let out = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let (m, k) = dims2(val(*a));
                let n = val(*b).row_width();
                let mut res = Vec::new();
                if wants(*a) {
                    let mut ga = vec![0.0; m * k];
                    kernels::gemm(m, n, k, g, false, val(*b).data(), true, 0.0, &mut ga);
                    res.push((*a, ga));
                }
                if wants(*b) {
                    let mut gb = vec![0.0; k * n];
                    kernels::gemm(k, m, n, val(*a).data(), true, g, false, 0.0, &mut gb);
                    res.push((*b, gb));
                }
                res
            }
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Mul(a, b) => {
                let ga = g.iter().zip(val(*b).data()).map(|(g, y)| g * y).collect();
                let gb = g.iter().zip(val(*a).data()).map(|(g, x)| g * x).collect();
                vec![(*a, ga), (*b, gb)]
            }
            Op::AddRowBias(x, bias) => {
                let n = val(*bias).len();
                let mut gb = vec![0.0; n];
                for row in g.chunks(n) {
                    gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                }
                vec![(*x, g.to_vec()), (*bias, gb)]
            }
            Op::Relu(x) => {
                let gx = g
                    .iter()
                    .zip(val(*x).data())
                    .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                    .collect();
                vec![(*x, gx)]
            }
            Op::Scale(x, f) => vec![(*x, g.iter().map(|v| v * f).collect())],
            Op::AddScalar(x) | Op::Reshape(x) => vec![(*x, g.to_vec())],
            Op::Sum(x) => vec![(*x, vec![g[0]; val(*x).len()])],
            Op::Transpose(x) => {
                let (m, n) = dims2(val(*x));
                vec![(*x, kernels::transpose(n, m, g))]
            }
            Op::GatherCols(x, cols) => {
                let (m, n) = dims2(val(*x));
                let k = cols.len();
                let mut gx = vec![0.0; m * n];
                for i in 0..m {
                    for (j, &c) in cols.iter().enumerate() {
                        gx[i * n + c] += g[i * k + j];
                    }
                }
                vec![(*x, gx)]
            }
            Op::Softmax(x, tau) => {
                let w = *out.shape().last().unwrap();
                let mut gx = vec![0.0; out.len()];
                for ((y, gr), dst) in out.data().chunks(w).zip(g.chunks(w)).zip(gx.chunks_mut(w)) {
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((d, yi), gi) in dst.iter_mut().zip(y).zip(gr) {
                        *d = yi * (gi - dot) / tau;
                    }
                }
                vec![(*x, gx)]
            }
            Op::LogSoftmax(x, tau) => {
                let w = *out.shape().last().unwrap();
                let mut gx = vec![0.0; out.len()];
                for ((ls, gr), dst) in out.data().chunks(w).zip(g.chunks(w)).zip(gx.chunks_mut(w)) {
                    let total: f64 = gr.iter().sum();
                    for ((d, l), gi) in dst.iter_mut().zip(ls).zip(gr) {
                        *d = (gi - l.exp() * total) / tau;
                    }
                }
                vec![(*x, gx)]
            }
            Op::CrossEntropy(x, labels) => {
                let (b, c) = dims2(val(*x));
                let mut gx = vec![0.0; b * c];
                let scale = g[0] / b as f64;
                for ((row, dst), &y) in val(*x).data().chunks(c).zip(gx.chunks_mut(c)).zip(labels) {
                    kernels::softmax_into(row, 1.0, dst);
                    dst[y] -= 1.0;
                    dst.iter_mut().for_each(|v| *v *= scale);
                }
                vec![(*x, gx)]
            }
            Op::Im2col(x, geom) => vec![(*x, kernels::col2im(geom, g))],
            Op::NhwcToNchw(x, [b, h, w, c]) => {
                let mut gx = vec![0.0; g.len()];
                for bi in 0..*b {
                    for p in 0..h * w {
                        for ci in 0..*c {
                            gx[(bi * h * w + p) * c + ci] = g[(bi * c + ci) * h * w + p];
                        }
                    }
                }
                vec![(*x, gx)]
            }
            Op::SparseRows(x, selections) => {
                let n = out.row_width();
                let mut gx = vec![0.0; out.len()];
                for (i, sel) in selections.iter().enumerate() {
                    let Some(sel) = sel else { continue };
                    let up: Vec<f64> = sel.selected.iter().map(|&p| g[i * n + p]).collect();
                    select_row_backward(sel, &up, &mut gx[i * n..(i + 1) * n]);
                }
                vec![(*x, gx)]
            }
            Op::AddIdentity(x) => vec![(*x, g.to_vec())],
            Op::SymNormalize(a, deg) => {
                let n = deg.len();
                // dP_ij/dd_i = -P_ij / (2 d_i), and d_i = Σ_j A_ij.
                let mut g_deg = vec![0.0; n];
                for i in 0..n {
                    for j in 0..n {
                        let gp = g[i * n + j] * out.data()[i * n + j];
                        if deg[i] > 0.0 {
                            g_deg[i] -= 0.5 * gp / deg[i];
                        }
                        if deg[j] > 0.0 {
                            g_deg[j] -= 0.5 * gp / deg[j];
                        }
                    }
                }
                let mut ga = vec![0.0; n * n];
                for i in 0..n {
                    for j in 0..n {
                        let scale = if deg[i] > 0.0 && deg[j] > 0.0 {
                            (deg[i] * deg[j]).sqrt().recip()
                        } else {
                            0.0
                        };
                        ga[i * n + j] = g[i * n + j] * scale + g_deg[i];
                    }
                }
                vec![(*a, ga)]
            }
        }
    }
}
