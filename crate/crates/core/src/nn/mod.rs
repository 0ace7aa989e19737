//! The CNN teacher, the two-layer GNN student and their building blocks.

mod student;
mod teacher;

pub use student::{gnn_layer, GnnStudent};
pub use teacher::{CnnTeacher, ConvSpec, TeacherArch};

use crate::error::{Error, Result};
use crate::tensor::kernels::{self, ConvGeometry};
use crate::tensor::Tensor;

/// Unfolds an NCHW tensor into `(b·oh·ow) × (c·kh·kw)` patches.
pub fn im2col(x: &Tensor, kernel: (usize, usize), stride: usize, padding: usize) -> Result<Tensor> {
    let &[batch, channels, height, width] = x.shape() else {
        return Err(Error::Shape(format!(
            "im2col expects NCHW input, got {:?}",
            x.shape()
        )));
    };
    let geom = ConvGeometry {
        batch,
        channels,
        height,
        width,
        kernel_h: kernel.0,
        kernel_w: kernel.1,
        stride,
        padding,
    };
    if !geom.fits() {
        return Err(Error::Shape(format!(
            "kernel {}×{} larger than padded input {}×{}",
            kernel.0,
            kernel.1,
            height + 2 * padding,
            width + 2 * padding
        )));
    }
    Tensor::new(
        vec![geom.patch_count(), geom.patch_len()],
        kernels::im2col(&geom, x.data()),
    )
}
