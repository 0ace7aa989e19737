use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use cnn2gnn::data::{load_csv, load_idx, make_blobs, split, Dataset, Split};
use cnn2gnn::distill::{distill_train, pretrain_teacher, DistillConfig, Mechanism, TrainLog};
use cnn2gnn::graph::{batch_graph, DistanceHead, GraphHead};
use cnn2gnn::inference::{evaluate, TrainReference};
use cnn2gnn::nn::{CnnTeacher, GnnStudent, TeacherArch};
use cnn2gnn::ModelParams;
use rayon::prelude::*;

use crate::config::{ConfigError, DataSpec, RunConfig};

pub const TEACHER_FILE: &str = "teacher.c2g";
pub const STUDENT_FILE: &str = "student.c2g";

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    MissingCheckpoint {
        path: PathBuf,
        producer: &'static str,
    },
    Run(cnn2gnn::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::MissingCheckpoint { .. } => 2,
            CliError::Config(_) | CliError::Run(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => e.fmt(f),
            CliError::MissingCheckpoint { path, producer } => {
                write!(
                    f,
                    "missing checkpoint {} (run `c2g {producer}` first)",
                    path.display()
                )
            }
            CliError::Run(e) => e.fmt(f),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<cnn2gnn::Error> for CliError {
    fn from(e: cnn2gnn::Error) -> Self {
        CliError::Run(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Run(e.into())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Resolved inputs shared by every subcommand.
pub struct Run {
    pub cfg: RunConfig,
    pub out: PathBuf,
    data: Dataset,
    split: Split,
}

impl Run {
    pub fn new(cfg: RunConfig, out: PathBuf) -> Result<Self> {
        let data = match &cfg.data {
            DataSpec::Blobs {
                n,
                classes,
                dim,
                spread,
            } => make_blobs(*n, *classes, *dim, *spread, cfg.train.seed)?,
            DataSpec::Csv { path, label } => load_csv(path, label)?,
            DataSpec::Idx { images, labels } => load_idx(images, labels)?,
        };
        let split = split(data.len(), cfg.test_fraction, cfg.train.seed)?;
        std::fs::create_dir_all(&out)?;
        Ok(Run {
            cfg,
            out,
            data,
            split,
        })
    }

    fn train_cfg(&self) -> &DistillConfig {
        &self.cfg.train
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.out.join(name))?))
    }

    fn checkpoint(&self, name: &str, producer: &'static str) -> Result<ModelParams> {
        let path = self.out.join(name);
        if !path.is_file() {
            return Err(CliError::MissingCheckpoint { path, producer });
        }
        Ok(ModelParams::load(path)?)
    }

    fn write_log(&self, name: &str, log: &TrainLog) -> Result<()> {
        let mut w = self.create(name)?;
        log.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// The teacher, or `None` when the KD term is switched off.
    fn teacher(&self) -> Result<Option<CnnTeacher>> {
        if self.cfg.train.kd_alpha == 0.0 {
            return Ok(None);
        }
        let rec = self.checkpoint(TEACHER_FILE, "train-teacher")?;
        Ok(Some(CnnTeacher::from_records(&rec)?))
    }

    fn fresh_student(&self) -> (GnnStudent, DistanceHead) {
        let (d, seed) = (self.data.feature_width(), self.cfg.train.seed);
        let student = GnnStudent::new(
            d,
            self.cfg.student_hidden,
            self.data.class_count(),
            seed + 1,
        );
        let head = DistanceHead::new(d, &self.cfg.head_hidden, self.data.len(), seed + 2);
        (student, head)
    }

    fn load_student(&self) -> Result<(GnnStudent, DistanceHead)> {
        let rec = self.checkpoint(STUDENT_FILE, "distill")?;
        let student = GnnStudent::from_params(rec.strip_prefix("student."))?;
        let head = DistanceHead::from_params(rec.strip_prefix("head."))?;
        Ok((student, head))
    }

    fn reference(&self) -> Result<TrainReference> {
        let cfg = self.train_cfg();
        Ok(TrainReference::sample(
            &self.data,
            &self.split.train_ids,
            cfg.batch_size,
            cfg.seed,
        )?)
    }

    fn test_accuracy(
        &self,
        student: &GnnStudent,
        head: &DistanceHead,
        cfg: &DistillConfig,
    ) -> Result<f64> {
        let x = self.data.flat_rows(&self.split.test_ids)?;
        let labels = self.data.labels_of(&self.split.test_ids);
        let reference = self.reference()?;
        let report = evaluate(student, head, &x, &labels, &reference, cfg)?;
        Ok(report.accuracy)
    }
}

pub fn train_teacher(run: &Run) -> Result<()> {
    let cfg = run.train_cfg();
    let arch = TeacherArch::small(run.data.image_shape(), run.data.class_count());
    let mut teacher = CnnTeacher::new(arch, cfg.seed)?;
    let log = pretrain_teacher(&mut teacher, &run.data, &run.split.train_ids, cfg)?;
    teacher.to_records().save(run.out.join(TEACHER_FILE))?;
    run.write_log("teacher_log.csv", &log)?;
    let x = run.data.features().select_rows(&run.split.test_ids)?;
    let preds = teacher.forward(&x)?.argmax_rows();
    let labels = run.data.labels_of(&run.split.test_ids);
    let hits = preds.iter().zip(&labels).filter(|(p, y)| p == y).count();
    println!(
        "teacher: {} epochs, test accuracy {:.4} -> {}",
        cfg.epochs,
        hits as f64 / labels.len() as f64,
        run.out.join(TEACHER_FILE).display()
    );
    Ok(())
}

pub fn distill(run: &Run) -> Result<()> {
    let teacher = run.teacher()?;
    let (mut student, mut head) = run.fresh_student();
    let log = distill_train(
        teacher.as_ref(),
        &mut student,
        &mut head,
        &run.data,
        &run.split.train_ids,
        run.train_cfg(),
    )?;
    let mut rec = ModelParams::new();
    rec.extend_prefixed("student.", student.params());
    rec.extend_prefixed("head.", head.params());
    rec.save(run.out.join(STUDENT_FILE))?;
    run.write_log("train_log.csv", &log)?;
    if let Some(last) = log.records.last() {
        println!(
            "distill: {} epochs, train accuracy {:.4}, kd {:.6} -> {}",
            log.records.len(),
            last.train_acc,
            last.kd_loss,
            run.out.join(STUDENT_FILE).display()
        );
    }
    Ok(())
}

pub fn eval(run: &Run) -> Result<()> {
    let (student, head) = run.load_student()?;
    let cfg = run.train_cfg();
    let x = run.data.flat_rows(&run.split.test_ids)?;
    let labels = run.data.labels_of(&run.split.test_ids);
    let reference = run.reference()?;
    let report = evaluate(&student, &head, &x, &labels, &reference, cfg)?;
    let mut w = run.create("eval.csv")?;
    report.write_csv(&mut w)?;
    w.flush()?;
    let mut w = run.create("predictions.csv")?;
    report.write_predictions(&mut w, &run.split.test_ids, &labels)?;
    w.flush()?;
    println!(
        "eval: mechanism {} on {} test samples, accuracy {:.4} in {:.1} ms",
        report.mechanism.as_str(),
        labels.len(),
        report.accuracy,
        report.wall_ms
    );
    Ok(())
}

/// Writes the learned affinities of the seeded reference training batch.
pub fn graph(run: &Run) -> Result<()> {
    let (_, head) = run.load_student()?;
    let cfg = run.train_cfg();
    let reference = run.reference()?;
    let (affinity, _) = batch_graph(
        &head,
        &reference.features,
        &reference.ids,
        cfg.s,
        cfg.columns,
    )?;
    let mut w = run.create("graph_edges.csv")?;
    affinity.write_csv(&mut w, &reference.ids, &reference.ids)?;
    w.flush()?;
    let edges: usize = affinity.rows.iter().map(Vec::len).sum();
    println!(
        "graph: {edges} edges over {} nodes -> {}",
        reference.ids.len(),
        run.out.join("graph_edges.csv").display()
    );
    Ok(())
}

/// Trains and scores one student per `(τ, s)` cell; cells are independent
/// and run in parallel.
pub fn sweep(run: &Run) -> Result<()> {
    let teacher = run.teacher()?;
    let cells: Vec<(f64, usize)> = run
        .cfg
        .tau_list
        .iter()
        .flat_map(|&tau| run.cfg.s_list.iter().map(move |&s| (tau, s)))
        .collect();
    let scores: Vec<Result<f64>> = cells
        .par_iter()
        .map(|&(tau, s)| {
            let cfg = DistillConfig {
                tau,
                s,
                ..run.train_cfg().clone()
            };
            let (mut student, mut head) = run.fresh_student();
            distill_train(
                teacher.as_ref(),
                &mut student,
                &mut head,
                &run.data,
                &run.split.train_ids,
                &cfg,
            )?;
            run.test_accuracy(&student, &head, &cfg)
        })
        .collect();
    let mut w = run.create("sweep.csv")?;
    writeln!(w, "tau,s,accuracy")?;
    for (&(tau, s), score) in cells.iter().zip(scores) {
        writeln!(w, "{tau},{s},{}", score?)?;
    }
    w.flush()?;
    println!(
        "sweep: {} cells -> {}",
        cells.len(),
        run.out.join("sweep.csv").display()
    );
    Ok(())
}

/// The mechanism flag wins over the config file.
pub fn apply_overrides(cfg: &mut RunConfig, seed: Option<u64>, mechanism: Option<Mechanism>) {
    if let Some(seed) = seed {
        cfg.train.seed = seed;
    }
    if let Some(m) = mechanism {
        cfg.train.mechanism = m;
    }
}

pub fn output_dir(cfg: &RunConfig, flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("."))
}
