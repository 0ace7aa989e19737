use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::{glorot, Bound, ModelParams};
use crate::tensor::{Tape, Tensor, Var};

/// Anything that can predict distances from samples to training nodes.
///
/// Implementations record their computation on the tape so that the
/// graph built from the distances can pass gradients back into the head.
pub trait GraphHead {
    fn params(&self) -> &ModelParams;
    fn params_mut(&mut self) -> &mut ModelParams;
    /// Number of training nodes (output neurons).
    fn n_train(&self) -> usize;
    /// Distances from each row of `x` to the training nodes in `cols`
    /// (all training nodes when `None`). `bound` must come from
    /// `self.params().bind(..)` on the same tape.
    fn distances(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x: Var,
        cols: Option<&[usize]>,
    ) -> Result<Var>;
}

/// MLP whose decision layer has one neuron per training sample; neuron
/// `j` predicts the distance to training sample `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceHead {
    params: ModelParams,
    input_width: usize,
    hidden: Vec<usize>,
    n_train: usize,
}

impl DistanceHead {
    pub const DEFAULT_HIDDEN: [usize; 2] = [512, 256];

    pub fn new(input_width: usize, hidden: &[usize], n_train: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::new();
        let mut widths = vec![input_width];
        widths.extend_from_slice(hidden);
        widths.push(n_train);
        for (l, w) in widths.windows(2).enumerate() {
            params.insert(format!("w{l}"), glorot(&mut rng, w[0], w[1]));
            params.insert(format!("b{l}"), Tensor::zeros(&[1, w[1]]));
        }
        DistanceHead {
            params,
            input_width,
            hidden: hidden.to_vec(),
            n_train,
        }
    }

    /// Rebuilds a head from stored parameters, inferring widths.
    pub fn from_params(params: ModelParams) -> Result<Self> {
        let mut widths = Vec::new();
        let mut l = 0;
        while let Some(w) = params.get(&format!("w{l}")) {
            if params.get(&format!("b{l}")).is_none() || w.rank() != 2 {
                return Err(Error::Shape(format!("malformed head layer {l}")));
            }
            if l == 0 {
                widths.push(w.shape()[0]);
            } else if w.shape()[0] != widths[l] {
                return Err(Error::Shape(format!("head layer {l} does not chain")));
            }
            widths.push(w.shape()[1]);
            l += 1;
        }
        if l == 0 {
            return Err(Error::Shape("no head layers found".into()));
        }
        Ok(DistanceHead {
            input_width: widths[0],
            hidden: widths[1..widths.len() - 1].to_vec(),
            n_train: *widths.last().unwrap(),
            params,
        })
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    /// Distances to every training node, outside any training tape.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let out = self.distances(&mut tape, &bound, xv, None)?;
        Ok(tape.value(out).clone())
    }
}

impl GraphHead for DistanceHead {
    fn params(&self) -> &ModelParams {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    fn n_train(&self) -> usize {
        self.n_train
    }

    fn distances(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x: Var,
        cols: Option<&[usize]>,
    ) -> Result<Var> {
        let width = tape.value(x).row_width();
        if tape.value(x).rank() != 2 || width != self.input_width {
            return Err(Error::Dimension {
                op: "distance_head_forward",
                left: tape.value(x).shape().to_vec(),
                right: vec![self.input_width],
            });
        }
        let layers = self.hidden.len() + 1;
        let mut h = x;
        for l in 0..layers {
            let (mut w, mut b) = (bound.var(2 * l), bound.var(2 * l + 1));
            let last = l + 1 == layers;
            if last {
                // Only the requested neurons are evaluated.
                if let Some(cols) = cols {
                    w = tape.gather_cols(w, cols)?;
                    b = tape.gather_cols(b, cols)?;
                }
            }
            h = tape.matmul(h, w)?;
            h = tape.add_row_bias(h, b)?;
            if !last {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }
}

/// Parameter-free head returning exact Euclidean distances to a fixed
/// set of training features. Useful as a reference for the learned head.
#[derive(Debug, Clone, PartialEq)]
pub struct EuclideanHead {
    train: Tensor,
    empty: ModelParams,
}

impl EuclideanHead {
    pub fn new(train_features: Tensor) -> Self {
        let n = train_features.rows();
        let w = train_features.row_width();
        EuclideanHead {
            train: train_features.reshape(vec![n, w]).unwrap(),
            empty: ModelParams::new(),
        }
    }
}

impl GraphHead for EuclideanHead {
    fn params(&self) -> &ModelParams {
        &self.empty
    }

    fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.empty
    }

    fn n_train(&self) -> usize {
        self.train.rows()
    }

    fn distances(
        &self,
        tape: &mut Tape,
        _bound: &Bound,
        x: Var,
        cols: Option<&[usize]>,
    ) -> Result<Var> {
        let xs = tape.value(x);
        if xs.row_width() != self.train.row_width() {
            return Err(Error::Dimension {
                op: "euclidean_head",
                left: xs.shape().to_vec(),
                right: self.train.shape().to_vec(),
            });
        }
        let all: Vec<usize>;
        let cols = match cols {
            Some(c) => c,
            None => {
                all = (0..self.train.rows()).collect();
                &all
            }
        };
        let mut data = Vec::with_capacity(xs.rows() * cols.len());
        for i in 0..xs.rows() {
            let xi = xs.row(i);
            for &c in cols {
                let d2: f64 = xi
                    .iter()
                    .zip(self.train.row(c))
                    .map(|(a, b)| (a - b).powi(2))
                    .sum();
                data.push(d2.sqrt());
            }
        }
        let t = Tensor::new(vec![xs.rows(), cols.len()], data)?;
        Ok(tape.constant(t))
    }
}
