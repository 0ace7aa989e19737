use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::GraphBatch;
use crate::params::{glorot, Bound, ModelParams};
use crate::tensor::{Tape, Tensor, Var};

/// `Z = φ(P X W)`, with `φ` = ReLU when `activate` is set. No bias.
pub fn gnn_layer(tape: &mut Tape, p: Var, x: Var, w: Var, activate: bool) -> Result<Var> {
    let (b, b2) = (tape.value(p).rows(), tape.value(p).row_width());
    if b != b2 || tape.value(x).rows() != b {
        return Err(Error::Dimension {
            op: "gnn_layer",
            left: tape.value(p).shape().to_vec(),
            right: tape.value(x).shape().to_vec(),
        });
    }
    let xw = tape.matmul(x, w)?;
    let z = tape.matmul(p, xw)?;
    Ok(if activate { tape.relu(z) } else { z })
}

/// Two graph layers: `logits = P · relu(P X W₁) · W₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnStudent {
    params: ModelParams,
    widths: [usize; 3],
}

impl GnnStudent {
    pub const DEFAULT_HIDDEN: usize = 256;

    pub fn new(input: usize, hidden: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::new();
        params.insert("w1", glorot(&mut rng, input, hidden));
        params.insert("w2", glorot(&mut rng, hidden, classes));
        GnnStudent {
            params,
            widths: [input, hidden, classes],
        }
    }

    pub fn from_params(params: ModelParams) -> Result<Self> {
        let (Some(w1), Some(w2)) = (params.get("w1"), params.get("w2")) else {
            return Err(Error::Input("student parameters need `w1` and `w2`".into()));
        };
        if w1.rank() != 2 || w2.rank() != 2 || w1.shape()[1] != w2.shape()[0] {
            return Err(Error::Shape("student layer widths do not chain".into()));
        }
        let widths = [w1.shape()[0], w1.shape()[1], w2.shape()[1]];
        Ok(GnnStudent { params, widths })
    }

    pub fn widths(&self) -> [usize; 3] {
        self.widths
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    pub fn record(&self, tape: &mut Tape, bound: &Bound, p: Var, x: Var) -> Result<Var> {
        if tape.value(x).row_width() != self.widths[0] {
            return Err(Error::Dimension {
                op: "student_forward",
                left: tape.value(x).shape().to_vec(),
                right: vec![self.widths[0]],
            });
        }
        let h = gnn_layer(tape, p, x, bound.var(0), true)?;
        gnn_layer(tape, p, h, bound.var(1), false)
    }

    /// Logits for a materialized batch, outside any training tape.
    pub fn forward(&self, batch: &GraphBatch) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let p = tape.constant(batch.propagation.clone());
        let x = tape.constant(batch.features.clone());
        let out = self.record(&mut tape, &bound, p, x)?;
        Ok(tape.value(out).clone())
    }
}
