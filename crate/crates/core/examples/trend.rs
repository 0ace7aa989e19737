//! Teacher, GNN-only student and distilled student on seeded Gaussian blobs.
//!
//! cargo run --release -p cnn2gnn --example trend -- [spread] [seeds] [epochs]

use cnn2gnn::data::{make_blobs, split};
use cnn2gnn::distill::{
    distill_train, pretrain_teacher, train_student, DistillConfig, GraphSource, Mechanism,
};
use cnn2gnn::graph::{calibrate_threshold, BaselineKind, DistanceHead};
use cnn2gnn::inference::{evaluate, predict, InferenceReport, TestGraph, TrainReference};
use cnn2gnn::nn::{CnnTeacher, GnnStudent, TeacherArch};

fn main() -> cnn2gnn::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let spread: f64 = args.get(1).map_or(0.6, |s| s.parse().unwrap());
    let seeds: u64 = args.get(2).map_or(1, |s| s.parse().unwrap());
    let epochs: usize = args.get(3).map_or(200, |s| s.parse().unwrap());
    for seed in 0..seeds {
        let data = make_blobs(600, 3, 32, spread, seed)?;
        let sp = split(data.len(), 0.3, seed)?;
        let cfg = DistillConfig {
            s: 10,
            tau: 48.0,
            kd_alpha: 1.0,
            lr: 0.01,
            batch_size: 50,
            epochs,
            seed,
            ..Default::default()
        };
        let t0 = std::time::Instant::now();
        let mut teacher = CnnTeacher::new(TeacherArch::small(data.image_shape(), 3), seed)?;
        let tlog = pretrain_teacher(&mut teacher, &data, &sp.train_ids, &cfg)?;
        let tx = data.features().select_rows(&sp.test_ids)?;
        let tacc = teacher
            .forward(&tx)?
            .argmax_rows()
            .iter()
            .zip(data.labels_of(&sp.test_ids))
            .filter(|(p, y)| **p == *y)
            .count() as f64
            / sp.test_ids.len() as f64;
        println!(
            "seed {seed}: teacher train {:.3} test {tacc:.3} ({:?})",
            tlog.records.last().unwrap().train_acc,
            t0.elapsed()
        );
        let test_x = data.flat_rows(&sp.test_ids)?;
        let test_y = data.labels_of(&sp.test_ids);
        let reference = TrainReference::sample(&data, &sp.train_ids, cfg.batch_size, seed)?;
        for (name, t) in [("gnn", None), ("cnn2gnn", Some(&teacher))] {
            let t0 = std::time::Instant::now();
            let mut student = GnnStudent::new(32, 256, 3, seed + 1);
            let mut head = DistanceHead::new(32, &[512, 256], data.len(), seed + 2);
            let log = distill_train(t, &mut student, &mut head, &data, &sp.train_ids, &cfg)?;
            let r2 = evaluate(
                &student,
                &head,
                &test_x,
                &test_y,
                &reference,
                &DistillConfig {
                    mechanism: Mechanism::BatchByBatch,
                    ..cfg.clone()
                },
            )?;
            let r1 = evaluate(
                &student,
                &head,
                &test_x,
                &test_y,
                &reference,
                &DistillConfig {
                    mechanism: Mechanism::OneByOne,
                    ..cfg.clone()
                },
            )?;
            let last = log.records.last().unwrap();
            println!("  {name:8} train_acc {:.3} ce {:.4} kd {:.5} | M2 {:.3} ({:.0} ms) M1 {:.3} ({:.0} ms) [{:?}]", last.train_acc, last.ce_loss, last.kd_loss, r2.accuracy, r2.wall_ms, r1.accuracy, r1.wall_ms, t0.elapsed());
        }
        let train_x = data.flat_rows(&sp.train_ids)?;
        for (name, kind) in [
            ("ingnn", BaselineKind::InnerProduct),
            ("eucgnn", BaselineKind::Euclidean),
        ] {
            let threshold = calibrate_threshold(&train_x, kind, cfg.s, cfg.batch_size)?;
            let t0 = std::time::Instant::now();
            let mut student = GnnStudent::new(32, 256, 3, seed + 1);
            train_student(
                Some(&teacher),
                &mut student,
                GraphSource::Baseline { kind, threshold },
                &data,
                &sp.train_ids,
                &cfg,
            )?;
            let (preds, ms) = predict(
                &student,
                TestGraph::Baseline { kind, threshold },
                &test_x,
                cfg.batch_size,
                cfg.s,
            )?;
            let r = InferenceReport::score(preds, &test_y, ms, Mechanism::BatchByBatch)?;
            println!(
                "  {name:8} cut {threshold:.4} test {:.3} ({ms:.0} ms) [{:?}]",
                r.accuracy,
                t0.elapsed()
            );
        }
    }
    Ok(())
}
