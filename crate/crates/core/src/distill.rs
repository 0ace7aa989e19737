//! Teacher pretraining and joint graph-head + GNN-student distillation.

use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use crate::data::{batches, Dataset};
use crate::error::{Error, Result};
use crate::graph::{baseline_graph, build_batch_graph, BaselineKind, GraphColumns, GraphHead};
use crate::nn::{CnnTeacher, GnnStudent};
use crate::params::Bound;
use crate::tensor::kernels;
use crate::tensor::{Tape, Tensor, Var};

/// Test-time graph construction strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mechanism {
    /// Each test sample is cascaded with a training batch.
    OneByOne,
    /// Test batches use a graph approximated through nearest training
    /// surrogates.
    #[default]
    BatchByBatch,
}

impl Mechanism {
    pub fn as_str(self) -> &'static str {
        match self {
            Mechanism::OneByOne => "one",
            Mechanism::BatchByBatch => "batch",
        }
    }
}

impl FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one" => Ok(Mechanism::OneByOne),
            "batch" => Ok(Mechanism::BatchByBatch),
            other => Err(Error::Config(format!(
                "mechanism must be `one` or `batch`, got `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillConfig {
    /// Neighbors per node.
    pub s: usize,
    /// Softmax temperature of the KD term.
    pub tau: f64,
    /// Weight of the KD term.
    pub kd_alpha: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub mechanism: Mechanism,
    pub columns: GraphColumns,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            s: 50,
            tau: 48.0,
            kd_alpha: 1.0,
            lr: 0.01,
            batch_size: 100,
            epochs: 200,
            seed: 0,
            mechanism: Mechanism::BatchByBatch,
            columns: GraphColumns::Batch,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau <= 0.0 || !self.tau.is_finite() {
            return Err(Error::Config(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if self.kd_alpha < 0.0 || !self.kd_alpha.is_finite() {
            return Err(Error::Config(format!(
                "kd_alpha must be non-negative, got {}",
                self.kd_alpha
            )));
        }
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(Error::Config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be at least 2 (a graph needs 2 nodes), got {}",
                self.batch_size
            )));
        }
        if self.s == 0 || self.s > self.batch_size - 1 {
            return Err(Error::Config(format!(
                "s must lie in [1, batch_size-1] = [1, {}], got {}",
                self.batch_size - 1,
                self.s
            )));
        }
        Ok(())
    }

    /// Copy with `s` clipped to `batch_size − 1`.
    pub fn clipped(mut self) -> Self {
        self.s = self.s.min(self.batch_size.saturating_sub(1)).max(1);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub ce_loss: f64,
    pub kd_loss: f64,
    pub total_loss: f64,
    pub train_acc: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "epoch,ce_loss,kd_loss,total_loss,train_acc,wall_ms")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{:.3}",
                r.epoch, r.ce_loss, r.kd_loss, r.total_loss, r.train_acc, r.wall_ms
            )?;
        }
        Ok(())
    }

    /// Records with `wall_ms` zeroed, for comparing runs.
    pub fn without_timing(&self) -> TrainLog {
        TrainLog {
            records: self
                .records
                .iter()
                .map(|r| EpochRecord {
                    wall_ms: 0.0,
                    ..r.clone()
                })
                .collect(),
        }
    }
}

/// `mean_b KL(q(teacher/τ) ‖ q(student/τ))` recorded on the tape. The
/// teacher logits enter as constants so no gradient reaches the teacher.
pub fn kd_loss(
    tape: &mut Tape,
    teacher_logits: &Tensor,
    student_logits: Var,
    tau: f64,
) -> Result<Var> {
    if tau <= 0.0 || !tau.is_finite() {
        return Err(Error::Parameter(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    let s_shape = tape.value(student_logits).shape().to_vec();
    if teacher_logits.shape() != s_shape.as_slice() {
        return Err(Error::Dimension {
            op: "kd_loss",
            left: teacher_logits.shape().to_vec(),
            right: s_shape,
        });
    }
    let c = *s_shape.last().unwrap();
    let b = teacher_logits.len() / c;
    let mut q = vec![0.0; teacher_logits.len()];
    let mut log_q = vec![0.0; teacher_logits.len()];
    for ((src, qd), ld) in teacher_logits
        .data()
        .chunks(c)
        .zip(q.chunks_mut(c))
        .zip(log_q.chunks_mut(c))
    {
        kernels::softmax_into(src, tau, qd);
        kernels::log_softmax_into(src, tau, ld);
    }
    let q_var = tape.constant(Tensor::new(s_shape.clone(), q)?);
    let log_q_var = tape.constant(Tensor::new(s_shape, log_q)?);
    let log_p = tape.log_softmax(student_logits, tau)?;
    let neg_log_p = tape.scale(log_p, -1.0);
    let ratio = tape.add(log_q_var, neg_log_p)?;
    let terms = tape.mul(q_var, ratio)?;
    let total = tape.sum(terms);
    Ok(tape.scale(total, 1.0 / b as f64))
}

/// Forward-only [`kd_loss`].
pub fn kd_loss_value(teacher_logits: &Tensor, student_logits: &Tensor, tau: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let s = tape.constant(student_logits.clone());
    let l = kd_loss(&mut tape, teacher_logits, s, tau)?;
    Ok(tape.value(l).item())
}

/// Handles to the pieces of the student objective.
#[derive(Debug, Clone, Copy)]
pub struct Objective {
    pub total: Var,
    pub ce: Var,
    pub kd: Option<Var>,
}

/// `cross_entropy(logits, labels) + α · kd_loss(teacher, logits, τ)`.
/// Without teacher logits the objective is cross-entropy alone.
pub fn student_objective(
    tape: &mut Tape,
    logits: Var,
    labels: &[usize],
    teacher_logits: Option<&Tensor>,
    cfg: &DistillConfig,
) -> Result<Objective> {
    let ce = tape.cross_entropy(logits, labels)?;
    let Some(t) = teacher_logits else {
        return Ok(Objective {
            total: ce,
            ce,
            kd: None,
        });
    };
    let kd = kd_loss(tape, t, logits, cfg.tau)?;
    let weighted = tape.scale(kd, cfg.kd_alpha);
    let total = tape.add(ce, weighted)?;
    Ok(Objective {
        total,
        ce,
        kd: Some(kd),
    })
}

fn correct(logits: &Tensor, labels: &[usize]) -> usize {
    logits
        .argmax_rows()
        .iter()
        .zip(labels)
        .filter(|(p, y)| p == y)
        .count()
}

/// Trains the teacher with cross-entropy and plain SGD.
pub fn pretrain_teacher(
    teacher: &mut CnnTeacher,
    data: &Dataset,
    train_ids: &[usize],
    cfg: &DistillConfig,
) -> Result<TrainLog> {
    if train_ids.is_empty() || data.is_empty() {
        return Err(Error::Input("cannot train on an empty dataset".into()));
    }
    if cfg.batch_size < 1 || cfg.lr.is_nan() || cfg.lr <= 0.0 {
        return Err(Error::Config(
            "teacher training needs batch_size ≥ 1 and lr > 0".into(),
        ));
    }
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let (mut ce_sum, mut hits, mut seen, mut steps) = (0.0, 0, 0, 0);
        for batch in batches(train_ids, cfg.batch_size.max(2), cfg.seed, epoch as u64)? {
            let mut tape = Tape::new();
            let bound = teacher.params().bind(&mut tape, true);
            let x = tape.constant(data.features().select_rows(&batch)?);
            let logits = teacher.record(&mut tape, &bound, x)?;
            let labels = data.labels_of(&batch);
            let ce = tape.cross_entropy(logits, &labels)?;
            tape.backward(ce)?;
            teacher.params_mut().pull_grads(&tape, &bound);
            teacher.params_mut().sgd_step(cfg.lr)?;
            ce_sum += tape.value(ce).item();
            hits += correct(tape.value(logits), &labels);
            seen += batch.len();
            steps += 1;
        }
        let ce = ce_sum / steps.max(1) as f64;
        log.records.push(EpochRecord {
            epoch: epoch + 1,
            ce_loss: ce,
            kd_loss: 0.0,
            total_loss: ce,
            train_acc: hits as f64 / seen.max(1) as f64,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok(log)
}

/// Where each training batch's propagation matrix comes from.
pub enum GraphSource<'a> {
    /// Learned head, optimized jointly with the student.
    Head(&'a mut dyn GraphHead),
    /// Fixed thresholded feature graph (not optimized).
    Baseline { kind: BaselineKind, threshold: f64 },
}

/// Joint optimization of the graph head and the GNN student. Each batch:
/// build the graph, run the student, evaluate the frozen teacher without a
/// tape, combine cross-entropy with the weighted KD term, backpropagate and
/// take one SGD step on student and head together.
///
/// Passing `teacher = None` trains the GNN-only baseline.
pub fn distill_train(
    teacher: Option<&CnnTeacher>,
    student: &mut GnnStudent,
    head: &mut dyn GraphHead,
    data: &Dataset,
    train_ids: &[usize],
    cfg: &DistillConfig,
) -> Result<TrainLog> {
    train_student(
        teacher,
        student,
        GraphSource::Head(head),
        data,
        train_ids,
        cfg,
    )
}

/// [`distill_train`] with an arbitrary [`GraphSource`].
pub fn train_student(
    teacher: Option<&CnnTeacher>,
    student: &mut GnnStudent,
    mut graph: GraphSource<'_>,
    data: &Dataset,
    train_ids: &[usize],
    cfg: &DistillConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    if train_ids.is_empty() {
        return Err(Error::Input("cannot train on an empty dataset".into()));
    }
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let (mut ce_sum, mut kd_sum, mut total_sum) = (0.0, 0.0, 0.0);
        let (mut hits, mut seen, mut steps) = (0, 0, 0);
        for batch in batches(train_ids, cfg.batch_size, cfg.seed, epoch as u64)? {
            let mut tape = Tape::new();
            let sb = student.params().bind(&mut tape, true);
            let features = data.flat_rows(&batch)?;
            let x = tape.constant(features.clone());
            let mut head_bound: Option<Bound> = None;
            let p = match &mut graph {
                GraphSource::Head(h) => {
                    let hb = h.params().bind(&mut tape, true);
                    let s = cfg.s.min(batch.len() - 1);
                    let (_, p) =
                        build_batch_graph(&mut tape, &**h, &hb, x, &batch, s, cfg.columns)?;
                    head_bound = Some(hb);
                    p
                }
                GraphSource::Baseline { kind, threshold } => {
                    tape.constant(baseline_graph(&features, *kind, *threshold)?)
                }
            };
            let logits = student.record(&mut tape, &sb, p, x)?;
            let labels = data.labels_of(&batch);
            let teacher_logits = match teacher {
                Some(t) => Some(t.forward(&data.features().select_rows(&batch)?)?),
                None => None,
            };
            let obj = student_objective(&mut tape, logits, &labels, teacher_logits.as_ref(), cfg)?;
            tape.backward(obj.total)?;

            student.params_mut().pull_grads(&tape, &sb);
            student.params_mut().sgd_step(cfg.lr)?;
            if let (GraphSource::Head(h), Some(hb)) = (&mut graph, &head_bound) {
                if !h.params().is_empty() {
                    h.params_mut().pull_grads(&tape, hb);
                    h.params_mut().sgd_step(cfg.lr)?;
                }
            }

            ce_sum += tape.value(obj.ce).item();
            kd_sum += obj.kd.map_or(0.0, |k| tape.value(k).item());
            total_sum += tape.value(obj.total).item();
            hits += correct(tape.value(logits), &labels);
            seen += batch.len();
            steps += 1;
        }
        let steps = steps.max(1) as f64;
        log.records.push(EpochRecord {
            epoch: epoch + 1,
            ce_loss: ce_sum / steps,
            kd_loss: kd_sum / steps,
            total_loss: total_sum / steps,
            train_acc: hits as f64 / seen.max(1) as f64,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok(log)
}
