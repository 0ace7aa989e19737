use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const UNSIGNED_BYTE: u8 = 0x08;

/// A parsed IDX file of unsigned bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

/// Parses a big-endian IDX buffer holding unsigned bytes.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(Error::Length(format!(
            "IDX header needs 4 bytes, file has {}",
            bytes.len()
        )));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad IDX magic {:02x} {:02x}", bytes[0], bytes[1]),
        });
    }
    if bytes[2] != UNSIGNED_BYTE {
        return Err(Error::Format {
            offset: 2,
            message: format!("unsupported IDX element type 0x{:02x}", bytes[2]),
        });
    }
    let rank = bytes[3] as usize;
    if rank == 0 {
        return Err(Error::Format {
            offset: 3,
            message: "IDX rank must be positive".into(),
        });
    }
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(Error::Length(format!(
            "IDX header needs {header} bytes, file has {}",
            bytes.len()
        )));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks(4)
        .map(|c| u32::from_be_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let n: usize = dims.iter().product();
    let body = &bytes[header..];
    if body.len() != n {
        return Err(Error::Length(format!(
            "IDX dims {dims:?} need {n} data bytes, file has {}",
            body.len()
        )));
    }
    Ok(IdxArray {
        dims,
        data: body.to_vec(),
    })
}

/// Loads an image file (magic `0x00000803`) and a label file (magic
/// `0x00000801`). Pixels are scaled to `[0, 1]`; features are `n×1×h×w`.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images = parse_idx(&std::fs::read(images_path)?)?;
    let labels = parse_idx(&std::fs::read(labels_path)?)?;
    if images.dims.len() != 3 {
        return Err(Error::Format {
            offset: 3,
            message: format!(
                "image file must be rank 3 (magic 0x00000803), got rank {}",
                images.dims.len()
            ),
        });
    }
    if labels.dims.len() != 1 {
        return Err(Error::Format {
            offset: 3,
            message: format!(
                "label file must be rank 1 (magic 0x00000801), got rank {}",
                labels.dims.len()
            ),
        });
    }
    let (n, h, w) = (images.dims[0], images.dims[1], images.dims[2]);
    if labels.dims[0] != n {
        return Err(Error::Input(format!(
            "image count {n} does not match label count {}",
            labels.dims[0]
        )));
    }
    if n == 0 || h == 0 || w == 0 {
        return Err(Error::Input("IDX image file is empty".into()));
    }
    let features = Tensor::new(
        vec![n, 1, h, w],
        images.data.iter().map(|&b| f64::from(b) / 255.0).collect(),
    )?;
    let labels: Vec<usize> = labels.data.iter().map(|&b| b as usize).collect();
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(features, labels, classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx(rank_dims: &[u32], body: &[u8]) -> Vec<u8> {
        let mut b = vec![0, 0, 8, rank_dims.len() as u8];
        for d in rank_dims {
            b.extend_from_slice(&d.to_be_bytes());
        }
        b.extend_from_slice(body);
        b
    }

    #[test]
    fn rank3_header() {
        let bytes = idx(&[2, 2, 2], &[0, 1, 2, 3, 4, 5, 6, 255]);
        assert_eq!(&bytes[..4], &[0x00, 0x00, 0x08, 0x03]);
        let a = parse_idx(&bytes).unwrap();
        assert_eq!(a.dims, vec![2, 2, 2]);
        assert_eq!(a.data[7], 255);
    }

    #[test]
    fn bad_magic_and_truncation() {
        let mut bytes = idx(&[2], &[0, 1]);
        bytes[1] = 7;
        assert!(matches!(
            parse_idx(&bytes),
            Err(Error::Format { offset: 0, .. })
        ));
        let bytes = idx(&[3], &[0, 1]);
        assert!(matches!(parse_idx(&bytes), Err(Error::Length(_))));
        assert!(matches!(parse_idx(&[0, 0, 8]), Err(Error::Length(_))));
    }

    #[test]
    fn load_scales_and_checks_counts() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lab = dir.path().join("lab");
        std::fs::write(&img, idx(&[2, 1, 2], &[255, 0, 51, 102])).unwrap();
        std::fs::write(&lab, idx(&[2], &[1, 0])).unwrap();
        let ds = load_idx(&img, &lab).unwrap();
        assert_eq!(ds.features().shape(), &[2, 1, 1, 2]);
        assert_eq!(ds.features().data()[0], 1.0);
        assert!((ds.features().data()[2] - 0.2).abs() < 1e-15);
        assert_eq!(ds.labels(), &[1, 0]);
        assert_eq!(ds.class_count(), 2);

        std::fs::write(&lab, idx(&[3], &[1, 0, 1])).unwrap();
        let err = load_idx(&img, &lab).unwrap_err().to_string();
        assert!(err.contains('2') && err.contains('3'), "{err}");
    }
}
