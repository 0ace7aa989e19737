//! Inductive test-time prediction.
//!
//! The head only measures distances to training nodes, so test graphs are
//! formed either by cascading one test sample with a training batch
//! ([`infer_one_by_one`]) or by approximating test–test distances through
//! each test sample's most probable training neighbor ([`infer_batch`]).

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::distill::{DistillConfig, Mechanism};
use crate::error::{Error, Result};
use crate::graph::{
    baseline_graph, normalize_affinity, propagation_from_distances, BaselineKind, GraphHead,
};
use crate::nn::GnnStudent;
use crate::tensor::{Tape, Tensor};

/// A fixed batch of training samples that test graphs are built against.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReference {
    /// `m × d` flattened features.
    pub features: Tensor,
    /// Dataset ids (= head output neurons) of the rows.
    pub ids: Vec<usize>,
}

impl TrainReference {
    /// A seeded random batch of `size` training ids.
    pub fn sample(
        data: &crate::data::Dataset,
        train_ids: &[usize],
        size: usize,
        seed: u64,
    ) -> Result<Self> {
        if train_ids.is_empty() || size == 0 {
            return Err(Error::Input("empty training reference".into()));
        }
        let mut ids = train_ids.to_vec();
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_7e57));
        ids.truncate(size.min(train_ids.len()));
        Ok(TrainReference {
            features: data.flat_rows(&ids)?,
            ids,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

fn check_width(x: &Tensor, reference: &TrainReference) -> Result<()> {
    if x.row_width() != reference.features.row_width() {
        return Err(Error::Dimension {
            op: "inference",
            left: x.shape().to_vec(),
            right: reference.features.shape().to_vec(),
        });
    }
    Ok(())
}

/// Mechanism 1: logits of one test sample cascaded with the reference
/// batch. Node 0 is the test sample; training rows cannot measure distance
/// to it, so that column is excluded for them.
pub fn infer_one_by_one(
    student: &GnnStudent,
    head: &dyn GraphHead,
    test_sample: &[f64],
    reference: &TrainReference,
    s: usize,
) -> Result<Vec<f64>> {
    let (p, nodes) = cascade_graph(head, test_sample, reference, s)?;
    let mut tape = Tape::new();
    let bound = student.params().bind(&mut tape, false);
    let pv = tape.constant(p);
    let xv = tape.constant(nodes);
    let out = student.record(&mut tape, &bound, pv, xv)?;
    Ok(tape.value(out).row(0).to_vec())
}

/// Propagation matrix and stacked features of the `(m+1)`-node cascade.
pub fn cascade_graph(
    head: &dyn GraphHead,
    test_sample: &[f64],
    reference: &TrainReference,
    s: usize,
) -> Result<(Tensor, Tensor)> {
    let m = reference.len();
    if s == 0 || m < s + 1 {
        return Err(Error::Parameter(format!(
            "cascade needs a training batch of at least s+1 = {} samples, got {m}",
            s + 1
        )));
    }
    let d = reference.features.row_width();
    if test_sample.len() != d {
        return Err(Error::Dimension {
            op: "infer_one_by_one",
            left: vec![test_sample.len()],
            right: vec![d],
        });
    }
    let mut stacked = test_sample.to_vec();
    stacked.extend_from_slice(reference.features.data());
    let nodes = Tensor::new(vec![m + 1, d], stacked)?;

    let mut tape = Tape::new();
    let bound = head.params().bind(&mut tape, false);
    let xv = tape.constant(nodes.clone());
    let to_train = head.distances(&mut tape, &bound, xv, Some(&reference.ids))?;
    let to_train = tape.value(to_train);

    let n = m + 1;
    let mut dist = vec![f64::INFINITY; n * n];
    let mut mask = vec![false; n * n];
    for i in 0..n {
        // column 0 is the test node: unmeasurable from any row
        mask[i * n] = true;
        mask[i * n + i] = true;
        for j in 0..m {
            dist[i * n + j + 1] = to_train.at(i, j);
        }
    }
    let dv = tape.constant(Tensor::new(vec![n, n], dist)?);
    let directed = tape.sparse_rows(dv, &mask, s)?;
    let p = normalize_affinity(&mut tape, directed)?;
    Ok((tape.value(p).clone(), nodes))
}

/// For each test row, the reference id with the highest conditional
/// probability (ties go to the lowest training id).
pub fn surrogates(
    head: &dyn GraphHead,
    test_x: &Tensor,
    reference: &TrainReference,
    s: usize,
) -> Result<Vec<usize>> {
    check_width(test_x, reference)?;
    let mut tape = Tape::new();
    let bound = head.params().bind(&mut tape, false);
    let xv = tape.constant(test_x.clone());
    let dist = head.distances(&mut tape, &bound, xv, Some(&reference.ids))?;
    let m = reference.len();
    let mask = vec![false; test_x.rows() * m];
    let probs = tape.sparse_rows(dist, &mask, s)?;
    let probs = tape.value(probs);
    Ok((0..test_x.rows())
        .map(|i| {
            let row = probs.row(i);
            let mut best = 0;
            for j in 1..m {
                let better = row[j] > row[best]
                    || (row[j] == row[best] && reference.ids[j] < reference.ids[best]);
                if better {
                    best = j;
                }
            }
            best
        })
        .collect())
}

/// Mechanism 2: logits for a whole test batch. Test–test distances are
/// approximated by the head's distance between the rows' surrogates,
/// `d(i, j) = head(x_sim(i))[sim(j)]`, and the test features are then
/// propagated over the resulting sparse graph.
pub fn infer_batch(
    student: &GnnStudent,
    head: &dyn GraphHead,
    test_x: &Tensor,
    reference: &TrainReference,
    s: usize,
) -> Result<Tensor> {
    let p = surrogate_graph(head, test_x, reference, s)?;
    let mut tape = Tape::new();
    let bound = student.params().bind(&mut tape, false);
    let pv = tape.constant(p);
    let xv = tape.constant(test_x.clone());
    let out = student.record(&mut tape, &bound, pv, xv)?;
    Ok(tape.value(out).clone())
}

/// The approximated propagation matrix used by [`infer_batch`].
pub fn surrogate_graph(
    head: &dyn GraphHead,
    test_x: &Tensor,
    reference: &TrainReference,
    s: usize,
) -> Result<Tensor> {
    if s == 0 {
        return Err(Error::Parameter("sparsity must be positive".into()));
    }
    let sims = surrogates(head, test_x, reference, s)?;
    let sim_ids: Vec<usize> = sims.iter().map(|&k| reference.ids[k]).collect();
    let mut tape = Tape::new();
    let bound = head.params().bind(&mut tape, false);
    let sim_x = tape.constant(reference.features.select_rows(&sims)?);
    let dist = head.distances(&mut tape, &bound, sim_x, Some(&sim_ids))?;
    let (_, p) = propagation_from_distances(&mut tape, dist, s)?;
    Ok(tape.value(p).clone())
}

/// Test-time graph for students trained on a fixed feature graph.
#[derive(Clone, Copy)]
pub enum TestGraph<'a> {
    Learned {
        head: &'a dyn GraphHead,
        reference: &'a TrainReference,
        mechanism: Mechanism,
    },
    Baseline {
        kind: BaselineKind,
        threshold: f64,
    },
}

/// Predictions for every test row, and the wall time spent producing them.
/// Labels are deliberately not an input.
pub fn predict(
    student: &GnnStudent,
    graph: TestGraph<'_>,
    test_x: &Tensor,
    batch_size: usize,
    s: usize,
) -> Result<(Vec<usize>, f64)> {
    let n = test_x.rows();
    if test_x.is_empty() || n == 0 {
        return Err(Error::Input("empty test set".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let start = Instant::now();
    let mut preds = Vec::with_capacity(n);
    match graph {
        TestGraph::Learned {
            head,
            reference,
            mechanism: Mechanism::OneByOne,
        } => {
            check_width(test_x, reference)?;
            for i in 0..n {
                let logits = infer_one_by_one(student, head, test_x.row(i), reference, s)?;
                let t = Tensor::new(vec![1, logits.len()], logits)?;
                preds.push(t.argmax_rows()[0]);
            }
        }
        TestGraph::Learned {
            head,
            reference,
            mechanism: Mechanism::BatchByBatch,
        } => {
            for chunk in (0..n).collect::<Vec<_>>().chunks(batch_size) {
                let xb = test_x.select_rows(chunk)?;
                preds.extend(infer_batch(student, head, &xb, reference, s)?.argmax_rows());
            }
        }
        TestGraph::Baseline { kind, threshold } => {
            for chunk in (0..n).collect::<Vec<_>>().chunks(batch_size) {
                let xb = test_x.select_rows(chunk)?;
                let p = if chunk.len() >= 2 {
                    baseline_graph(&xb, kind, threshold)?
                } else {
                    Tensor::identity(1)
                };
                let mut tape = Tape::new();
                let bound = student.params().bind(&mut tape, false);
                let pv = tape.constant(p);
                let xv = tape.constant(xb);
                let out = student.record(&mut tape, &bound, pv, xv)?;
                preds.extend(tape.value(out).argmax_rows());
            }
        }
    }
    Ok((preds, start.elapsed().as_secs_f64() * 1e3))
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceReport {
    pub predictions: Vec<usize>,
    pub accuracy: f64,
    pub wall_ms: f64,
    pub mechanism: Mechanism,
    /// Fraction of predictions shared with the other mechanism, if compared.
    pub agreement: Option<f64>,
}

impl InferenceReport {
    pub fn score(
        predictions: Vec<usize>,
        labels: &[usize],
        wall_ms: f64,
        mechanism: Mechanism,
    ) -> Result<Self> {
        if predictions.len() != labels.len() {
            return Err(Error::Dimension {
                op: "score",
                left: vec![predictions.len()],
                right: vec![labels.len()],
            });
        }
        let hits = predictions
            .iter()
            .zip(labels)
            .filter(|(p, y)| p == y)
            .count();
        Ok(InferenceReport {
            accuracy: hits as f64 / labels.len().max(1) as f64,
            predictions,
            wall_ms,
            mechanism,
            agreement: None,
        })
    }

    /// Sets `agreement` on both reports.
    pub fn compare(a: &mut InferenceReport, b: &mut InferenceReport) {
        let same = a
            .predictions
            .iter()
            .zip(&b.predictions)
            .filter(|(x, y)| x == y)
            .count();
        let frac = same as f64 / a.predictions.len().max(1) as f64;
        a.agreement = Some(frac);
        b.agreement = Some(frac);
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "mechanism,n_test,accuracy,wall_ms")?;
        writeln!(
            w,
            "{},{},{},{:.3}",
            self.mechanism.as_str(),
            self.predictions.len(),
            self.accuracy,
            self.wall_ms
        )?;
        Ok(())
    }

    pub fn write_predictions(
        &self,
        mut w: impl Write,
        test_ids: &[usize],
        labels: &[usize],
    ) -> Result<()> {
        writeln!(w, "test_id,pred,label")?;
        for ((id, p), y) in test_ids.iter().zip(&self.predictions).zip(labels) {
            writeln!(w, "{id},{p},{y}")?;
        }
        Ok(())
    }
}

/// Runs `cfg.mechanism` over the test set and scores it. Test batches have
/// `cfg.batch_size` rows and every node keeps `cfg.s` neighbors.
pub fn evaluate(
    student: &GnnStudent,
    head: &dyn GraphHead,
    test_x: &Tensor,
    test_labels: &[usize],
    reference: &TrainReference,
    cfg: &DistillConfig,
) -> Result<InferenceReport> {
    let mechanism = cfg.mechanism;
    let graph = TestGraph::Learned {
        head,
        reference,
        mechanism,
    };
    let (preds, wall_ms) = predict(student, graph, test_x, cfg.batch_size, cfg.s)?;
    InferenceReport::score(preds, test_labels, wall_ms, mechanism)
}
