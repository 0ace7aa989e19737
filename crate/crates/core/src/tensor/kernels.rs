//! Raw slice kernels shared by the tape and by tape-free inference paths.

/// `c = beta * c + op(a) * op(b)` where `op(a)` is `m×k` and `op(b)` is `k×n`.
///
/// `a` is stored row-major as `m×k` (or `k×m` when `ta`), likewise `b`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above describe exactly the m×k, k×n and m×n
    // row-major buffers whose lengths are checked in debug builds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn matmul(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    gemm(m, k, n, a, false, b, false, 0.0, &mut c);
    c
}

pub fn transpose(rows: usize, cols: usize, a: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// Max-subtracted softmax of `row / tau`, written into `out`.
pub fn softmax_into(row: &[f64], tau: f64, out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = ((v - max) / tau).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

/// Max-subtracted log-softmax of `row / tau`, written into `out`.
pub fn log_softmax_into(row: &[f64], tau: f64, out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = row
        .iter()
        .map(|&v| ((v - max) / tau).exp())
        .sum::<f64>()
        .ln();
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max) / tau - lse;
    }
}

/// Patch geometry for a 2-d convolution over NCHW input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel_h) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel_w) / self.stride + 1
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel_h * self.kernel_w
    }

    pub fn patch_count(&self) -> usize {
        self.batch * self.out_h() * self.out_w()
    }

    pub fn fits(&self) -> bool {
        self.stride > 0
            && self.kernel_h > 0
            && self.kernel_w > 0
            && self.kernel_h <= self.height + 2 * self.padding
            && self.kernel_w <= self.width + 2 * self.padding
    }

    /// Calls `f(col_index, input_index)` for every in-bounds patch element.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let (oh, ow) = (self.out_h(), self.out_w());
        let plen = self.patch_len();
        let (h, w) = (self.height as isize, self.width as isize);
        for b in 0..self.batch {
            for oy in 0..oh {
                for ox in 0..ow {
                    let row = (b * oh + oy) * ow + ox;
                    for c in 0..self.channels {
                        for ky in 0..self.kernel_h {
                            let y = (oy * self.stride + ky) as isize - self.padding as isize;
                            if y < 0 || y >= h {
                                continue;
                            }
                            for kx in 0..self.kernel_w {
                                let x = (ox * self.stride + kx) as isize - self.padding as isize;
                                if x < 0 || x >= w {
                                    continue;
                                }
                                let col = (c * self.kernel_h + ky) * self.kernel_w + kx;
                                let src = ((b * self.channels + c) * self.height + y as usize)
                                    * self.width
                                    + x as usize;
                                f(row * plen + col, src);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Unfolds NCHW input into a `(b·oh·ow) × (c·kh·kw)` patch matrix.
pub fn im2col(g: &ConvGeometry, input: &[f64]) -> Vec<f64> {
    let mut cols = vec![0.0; g.patch_count() * g.patch_len()];
    g.for_each_tap(|dst, src| cols[dst] = input[src]);
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input.
pub fn col2im(g: &ConvGeometry, cols: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; g.batch * g.channels * g.height * g.width];
    g.for_each_tap(|src, dst| out[dst] += cols[src]);
    out
}
