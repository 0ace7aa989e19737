#![allow(dead_code)]

pub mod checks;

use cnn2gnn::data::{make_blobs, split, Dataset, Split};
use cnn2gnn::distill::DistillConfig;
use cnn2gnn::graph::DistanceHead;
use cnn2gnn::nn::GnnStudent;
use cnn2gnn::{Tape, Tensor, Var};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Gradient check for a tape program `build(tape, inputs) -> out`, reduced
/// to a scalar through a fixed random projection. Returns the worst
/// norm-relative error over all inputs.
pub fn grad_check(
    inputs: &[Tensor],
    build: impl Fn(&mut Tape, &[Var]) -> Var,
    rng: &mut ChaCha8Rng,
    h: f64,
) -> f64 {
    let mut probe = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| probe.constant(t.clone())).collect();
    let out = build(&mut probe, &vars);
    let shape = probe.value(out).shape().to_vec();
    let w = random_tensor(rng, &shape, -1.0, 1.0);

    let eval = |xs: &[Tensor], grads: bool| -> (f64, Vec<Vec<f64>>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs
            .iter()
            .map(|t| tape.leaf(t.clone().with_requires_grad(grads)))
            .collect();
        let out = build(&mut tape, &vars);
        let wv = tape.constant(w.clone());
        let prod = tape.mul(out, wv).unwrap();
        let loss = tape.sum(prod);
        let value = tape.value(loss).item();
        if !grads {
            return (value, vec![]);
        }
        tape.backward(loss).unwrap();
        let g = vars
            .iter()
            .zip(xs)
            .map(|(&v, t)| tape.grad(v).map_or(vec![0.0; t.len()], |g| g.to_vec()))
            .collect();
        (value, g)
    };

    let (_, analytic) = eval(inputs, true);
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let numeric: Vec<f64> = (0..input.len())
            .map(|i| {
                let mut xs = inputs.to_vec();
                xs[k].data_mut()[i] += h;
                let up = eval(&xs, false).0;
                xs[k].data_mut()[i] -= 2.0 * h;
                let down = eval(&xs, false).0;
                (up - down) / (2.0 * h)
            })
            .collect();
        worst = worst.max(rel_err(&analytic[k], &numeric));
    }
    worst
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Direct sliding-window convolution, NCHW input and `[out, c, kh, kw]`
/// kernels, returning `[b, out, oh, ow]`.
pub fn direct_conv(
    x: &Tensor,
    k: &Tensor,
    stride: usize,
    padding: usize,
) -> (Vec<f64>, [usize; 4]) {
    let [b, c, h, w] = <[usize; 4]>::try_from(x.shape()).unwrap();
    let [o, _, kh, kw] = <[usize; 4]>::try_from(k.shape()).unwrap();
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (w + 2 * padding - kw) / stride + 1;
    let mut out = vec![0.0; b * o * oh * ow];
    for bi in 0..b {
        for oc in 0..o {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let iy = (y * stride + dy) as isize - padding as isize;
                                let ix = (xo * stride + dx) as isize - padding as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv =
                                    x.data()[((bi * c + ci) * h + iy as usize) * w + ix as usize];
                                let kv = k.data()[((oc * c + ci) * kh + dy) * kw + dx];
                                acc += xv * kv;
                            }
                        }
                    }
                    out[((bi * o + oc) * oh + y) * ow + xo] = acc;
                }
            }
        }
    }
    (out, [b, o, oh, ow])
}

pub fn eigenvalues(p: &Tensor) -> Vec<f64> {
    let n = p.rows();
    let m = DMatrix::from_row_slice(n, n, p.data());
    SymmetricEigen::new(m).eigenvalues.iter().copied().collect()
}

pub fn max_asymmetry(p: &Tensor) -> f64 {
    let n = p.rows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            worst = worst.max((p.at(i, j) - p.at(j, i)).abs());
        }
    }
    worst
}

/// The seeded 3-class toy problem: 32-d blobs with spread 0.6.
pub const TOY_SPREAD: f64 = 0.6;

pub fn toy_data(n: usize, seed: u64) -> Dataset {
    make_blobs(n, 3, 32, TOY_SPREAD, seed).unwrap()
}

pub fn toy_split(data: &Dataset, test_fraction: f64, seed: u64) -> Split {
    split(data.len(), test_fraction, seed).unwrap()
}

pub fn toy_config(seed: u64, epochs: usize) -> DistillConfig {
    DistillConfig {
        s: 10,
        tau: 48.0,
        kd_alpha: 1.0,
        lr: 0.01,
        batch_size: 50,
        epochs,
        seed,
        ..Default::default()
    }
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> f64 {
    preds.iter().zip(labels).filter(|(p, y)| p == y).count() as f64 / labels.len() as f64
}

pub const STUDENT_HIDDEN: usize = 256;
pub const HEAD_HIDDEN: [usize; 2] = [512, 256];

/// Fresh student and head sized for `data`.
pub fn toy_models(data: &Dataset, seed: u64) -> (GnnStudent, DistanceHead) {
    let d = data.feature_width();
    let student = GnnStudent::new(d, STUDENT_HIDDEN, data.class_count(), seed + 1);
    let head = DistanceHead::new(d, &HEAD_HIDDEN, data.len(), seed + 2);
    (student, head)
}
