use std::collections::HashSet;
use std::io::Write;

use cnn2gnn::data::{batches, load_csv, load_idx, make_blobs, parse_idx, split};
use cnn2gnn::Error;

fn idx_bytes(rank_magic: u8, dims: &[u32], body: &[u8]) -> Vec<u8> {
    let mut out = vec![0, 0, 0x08, rank_magic];
    for d in dims {
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(body);
    out
}

fn write(dir: &tempfile::TempDir, name: &str, bytes: &[u8]) -> std::path::PathBuf {
    let path = dir.path().join(name);
    std::fs::File::create(&path)
        .unwrap()
        .write_all(bytes)
        .unwrap();
    path
}

#[test]
fn idx_images_and_labels() {
    let dir = tempfile::tempdir().unwrap();
    let images = write(
        &dir,
        "img",
        &idx_bytes(3, &[2, 2, 2], &[0, 255, 51, 102, 255, 0, 0, 0]),
    );
    let labels = write(&dir, "lbl", &idx_bytes(1, &[2], &[1, 0]));
    let ds = load_idx(&images, &labels).unwrap();
    assert_eq!(ds.features().shape(), &[2, 1, 2, 2]);
    assert_eq!(ds.features().data()[1], 1.0);
    assert_eq!(ds.features().data()[2], 0.2);
    assert_eq!(ds.labels(), &[1, 0]);
    assert_eq!(ds, load_idx(&images, &labels).unwrap());

    assert_eq!(
        parse_idx(&idx_bytes(3, &[2, 2, 2], &[0; 8])).unwrap().dims,
        vec![2, 2, 2]
    );
}

#[test]
fn idx_errors() {
    let err = parse_idx(&[0, 1, 8, 3]).unwrap_err();
    assert!(matches!(err, Error::Format { offset: 0, .. }));
    assert!(matches!(
        parse_idx(&idx_bytes(3, &[2, 2, 2], &[0; 7])),
        Err(Error::Length(_))
    ));
    assert!(matches!(parse_idx(&[0, 0, 8]), Err(Error::Length(_))));

    let dir = tempfile::tempdir().unwrap();
    let images = write(&dir, "img", &idx_bytes(3, &[3, 1, 1], &[1, 2, 3]));
    let labels = write(&dir, "lbl", &idx_bytes(1, &[2], &[0, 1]));
    let msg = load_idx(&images, &labels).unwrap_err().to_string();
    assert!(msg.contains('3') && msg.contains('2'), "{msg}");
}

#[test]
fn csv_standardization() {
    let dir = tempfile::NamedTempFile::new().unwrap();
    std::fs::write(
        dir.path(),
        "a, b, c, label\n1, 5, 2, 3\n2, 5, 4, 7\n3, 5, 9, 3\n",
    )
    .unwrap();
    let ds = load_csv(dir.path(), "label").unwrap();
    assert_eq!(ds.len(), 3);
    assert_eq!(ds.feature_width(), 3);
    assert_eq!(ds.labels(), &[0, 1, 0]);
    assert_eq!(ds.class_count(), 2);
    let x = ds.features();
    for j in 0..3 {
        let col: Vec<f64> = (0..3).map(|i| x.at(i, j)).collect();
        if j == 1 {
            assert!(col.iter().all(|&v| v == 0.0));
            continue;
        }
        let mean = col.iter().sum::<f64>() / 3.0;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-9);
    }
    assert_eq!(ds, load_csv(dir.path(), "label").unwrap());
}

#[test]
fn csv_errors_report_lines() {
    let f = tempfile::NamedTempFile::new().unwrap();
    std::fs::write(f.path(), "x,label\n1,0\n2,1,9\n").unwrap();
    assert!(matches!(
        load_csv(f.path(), "label"),
        Err(Error::Parse { row: 3, .. })
    ));
    std::fs::write(f.path(), "x,label\n1,0\nabc,1\n").unwrap();
    assert!(matches!(
        load_csv(f.path(), "label"),
        Err(Error::Parse { row: 3, .. })
    ));
}

#[test]
fn zero_spread_blobs_are_one_nn_separable() {
    let ds = make_blobs(30, 3, 4, 0.0, 0).unwrap();
    let x = ds.features();
    for i in 0..30 {
        let nn = (0..30)
            .filter(|&j| j != i)
            .min_by(|&a, &b| {
                let da: f64 = x
                    .row(i)
                    .iter()
                    .zip(x.row(a))
                    .map(|(u, v)| (u - v).powi(2))
                    .sum();
                let db: f64 = x
                    .row(i)
                    .iter()
                    .zip(x.row(b))
                    .map(|(u, v)| (u - v).powi(2))
                    .sum();
                da.total_cmp(&db)
            })
            .unwrap();
        assert_eq!(ds.labels()[nn], ds.labels()[i]);
    }
}

#[test]
fn tight_blobs_are_linearly_separable() {
    // Nearest class mean is a linear rule: argmax_k (μ_k·x − ‖μ_k‖²/2).
    let ds = make_blobs(600, 3, 32, 0.1, 0).unwrap();
    let sp = split(ds.len(), 0.3, 0).unwrap();
    let x = ds.features();
    let d = ds.feature_width();
    let mut means = vec![vec![0.0; d]; 3];
    let mut counts = [0usize; 3];
    for &i in &sp.train_ids {
        let y = ds.labels()[i];
        counts[y] += 1;
        for (j, m) in means[y].iter_mut().enumerate() {
            *m += x.at(i, j);
        }
    }
    for k in 0..3 {
        means[k].iter_mut().for_each(|v| *v /= counts[k] as f64);
    }
    let score = |k: usize, row: &[f64]| -> f64 {
        let dot: f64 = means[k].iter().zip(row).map(|(m, v)| m * v).sum();
        dot - means[k].iter().map(|m| m * m).sum::<f64>() / 2.0
    };
    let hits = sp
        .test_ids
        .iter()
        .filter(|&&i| {
            (0..3)
                .max_by(|&a, &b| score(a, x.row(i)).total_cmp(&score(b, x.row(i))))
                .unwrap()
                == ds.labels()[i]
        })
        .count();
    assert!(hits as f64 / sp.test_ids.len() as f64 > 0.99);
}

#[test]
fn splits_are_disjoint_for_every_seed() {
    for n in 2..12 {
        for seed in 0..20 {
            for f in [0.1, 0.3, 0.5, 0.8] {
                let Ok(sp) = split(n, f, seed) else { continue };
                let train: HashSet<_> = sp.train_ids.iter().collect();
                assert!(sp.test_ids.iter().all(|i| !train.contains(i)));
                assert_eq!(sp.train_ids.len() + sp.test_ids.len(), n);
                assert_eq!(sp, split(n, f, seed).unwrap());
            }
        }
    }
    let sp = split(10, 0.5, 1).unwrap();
    assert_eq!((sp.train_ids.len(), sp.test_ids.len()), (5, 5));
    assert!(matches!(split(3, 0.01, 0), Err(Error::Config(_))));
}

#[test]
fn batches_partition_training_ids() {
    let sp = split(103, 0.3, 4).unwrap();
    let test: HashSet<_> = sp.test_ids.iter().copied().collect();
    for epoch in 0..5 {
        let bs = batches(&sp.train_ids, 10, 4, epoch).unwrap();
        assert_eq!(bs, batches(&sp.train_ids, 10, 4, epoch).unwrap());
        let seen: Vec<usize> = bs.iter().flatten().copied().collect();
        let uniq: HashSet<_> = seen.iter().copied().collect();
        assert_eq!(uniq.len(), seen.len());
        assert!(seen.iter().all(|i| !test.contains(i)));
        let dropped = sp.train_ids.len() - seen.len();
        assert!(dropped < 2);
        assert!(bs.iter().all(|b| b.len() >= 2));
    }
    assert_ne!(
        batches(&sp.train_ids, 10, 4, 0).unwrap(),
        batches(&sp.train_ids, 10, 4, 1).unwrap()
    );
}
