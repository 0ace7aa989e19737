use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::{glorot, Bound, ModelParams};
use crate::tensor::kernels::ConvGeometry;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TeacherArch {
    /// `[channels, height, width]` of one input sample.
    pub input: [usize; 3],
    pub convs: Vec<ConvSpec>,
    /// Hidden fully connected widths; a final layer to `classes` is implied.
    pub fc_hidden: Vec<usize>,
    pub classes: usize,
}

impl TeacherArch {
    /// Two 3×3 conv layers and two fully connected layers. The second conv
    /// downsamples only when the image is at least 8 pixels on a side.
    pub fn small(input: [usize; 3], classes: usize) -> Self {
        let stride2 = if input[1].min(input[2]) >= 8 { 2 } else { 1 };
        TeacherArch {
            input,
            convs: vec![
                ConvSpec {
                    kernel: 3,
                    out_channels: 8,
                    stride: 1,
                    padding: 1,
                },
                ConvSpec {
                    kernel: 3,
                    out_channels: 16,
                    stride: stride2,
                    padding: 1,
                },
            ],
            fc_hidden: vec![64],
            classes,
        }
    }

    /// `(channels, height, width)` after each conv layer.
    fn conv_shapes(&self) -> Result<Vec<[usize; 3]>> {
        let mut cur = self.input;
        let mut out = vec![cur];
        for (l, c) in self.convs.iter().enumerate() {
            let g = self.geometry(1, cur, c);
            if !g.fits() {
                return Err(Error::Shape(format!(
                    "conv layer {l} kernel does not fit {cur:?}"
                )));
            }
            cur = [c.out_channels, g.out_h(), g.out_w()];
            out.push(cur);
        }
        Ok(out)
    }

    fn geometry(&self, batch: usize, input: [usize; 3], c: &ConvSpec) -> ConvGeometry {
        ConvGeometry {
            batch,
            channels: input[0],
            height: input[1],
            width: input[2],
            kernel_h: c.kernel,
            kernel_w: c.kernel,
            stride: c.stride,
            padding: c.padding,
        }
    }
}

/// Small convolutional classifier; convolutions run as im2col + matmul.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnTeacher {
    arch: TeacherArch,
    params: ModelParams,
}

impl CnnTeacher {
    pub fn new(arch: TeacherArch, seed: u64) -> Result<Self> {
        let shapes = arch.conv_shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::new();
        for (l, c) in arch.convs.iter().enumerate() {
            let fan_in = shapes[l][0] * c.kernel * c.kernel;
            params.insert(
                format!("conv{l}.w"),
                glorot(&mut rng, fan_in, c.out_channels),
            );
            params.insert(format!("conv{l}.b"), Tensor::zeros(&[1, c.out_channels]));
        }
        let last = shapes.last().unwrap();
        let mut widths = vec![last.iter().product::<usize>()];
        widths.extend_from_slice(&arch.fc_hidden);
        widths.push(arch.classes);
        for (l, w) in widths.windows(2).enumerate() {
            params.insert(format!("fc{l}.w"), glorot(&mut rng, w[0], w[1]));
            params.insert(format!("fc{l}.b"), Tensor::zeros(&[1, w[1]]));
        }
        Ok(CnnTeacher { arch, params })
    }

    pub fn arch(&self) -> &TeacherArch {
        &self.arch
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    /// Records the forward pass; `x` is `b×c×h×w` (or `b×(c·h·w)`, which is
    /// viewed as images).
    pub fn record(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let shape = tape.value(x).shape().to_vec();
        let per: usize = self.arch.input.iter().product();
        let b = shape[0];
        if shape[1..].iter().product::<usize>() != per
            || (shape.len() == 4 && shape[1..] != self.arch.input[..])
        {
            return Err(Error::Dimension {
                op: "teacher_forward",
                left: shape,
                right: self.arch.input.to_vec(),
            });
        }
        let [c, h, w] = self.arch.input;
        let mut cur = [c, h, w];
        let mut hv = tape.reshape(x, vec![b, c, h, w])?;
        let mut k = 0;
        for spec in &self.arch.convs {
            let g = self.arch.geometry(b, cur, spec);
            let cols = tape.im2col(hv, g)?;
            let y = tape.matmul(cols, bound.var(k))?;
            let y = tape.add_row_bias(y, bound.var(k + 1))?;
            let y = tape.relu(y);
            hv = tape.nhwc_to_nchw(y, b, g.out_h(), g.out_w())?;
            cur = [spec.out_channels, g.out_h(), g.out_w()];
            k += 2;
        }
        let mut z = tape.reshape(hv, vec![b, cur.iter().product()])?;
        let n_fc = self.arch.fc_hidden.len() + 1;
        for l in 0..n_fc {
            z = tape.matmul(z, bound.var(k))?;
            z = tape.add_row_bias(z, bound.var(k + 1))?;
            if l + 1 < n_fc {
                z = tape.relu(z);
            }
            k += 2;
        }
        Ok(z)
    }

    /// Logits without recording gradients.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let out = self.record(&mut tape, &bound, xv)?;
        Ok(tape.value(out).clone())
    }

    /// Parameters plus the architecture, for checkpointing.
    pub fn to_records(&self) -> ModelParams {
        let mut rec = ModelParams::new();
        let a = &self.arch;
        let meta = |v: Vec<usize>| {
            Tensor::new(vec![v.len()], v.into_iter().map(|x| x as f64).collect()).unwrap()
        };
        rec.insert("meta.input", meta(a.input.to_vec()));
        rec.insert("meta.classes", meta(vec![a.classes]));
        for (l, c) in a.convs.iter().enumerate() {
            rec.insert(
                format!("meta.conv{l}"),
                meta(vec![c.kernel, c.out_channels, c.stride, c.padding]),
            );
        }
        if !a.fc_hidden.is_empty() {
            rec.insert("meta.fc_hidden", meta(a.fc_hidden.clone()));
        }
        rec.extend_prefixed("", &self.params);
        rec
    }

    pub fn from_records(rec: &ModelParams) -> Result<Self> {
        let ints = |name: &str| -> Result<Vec<usize>> {
            let t = rec
                .get(name)
                .ok_or_else(|| Error::Input(format!("teacher checkpoint lacks `{name}`")))?;
            Ok(t.data().iter().map(|&v| v as usize).collect())
        };
        let input = ints("meta.input")?;
        if input.len() != 3 {
            return Err(Error::Input("meta.input must hold 3 extents".into()));
        }
        let mut convs = Vec::new();
        while rec.get(&format!("meta.conv{}", convs.len())).is_some() {
            let v = ints(&format!("meta.conv{}", convs.len()))?;
            convs.push(ConvSpec {
                kernel: v[0],
                out_channels: v[1],
                stride: v[2],
                padding: v[3],
            });
        }
        let fc_hidden = if rec.get("meta.fc_hidden").is_some() {
            ints("meta.fc_hidden")?
        } else {
            vec![]
        };
        let arch = TeacherArch {
            input: [input[0], input[1], input[2]],
            convs,
            fc_hidden,
            classes: ints("meta.classes")?[0],
        };
        let mut teacher = CnnTeacher::new(arch, 0)?;
        let names: Vec<String> = teacher.params.iter().map(|(n, _)| n.to_string()).collect();
        for name in names {
            let stored = rec
                .get(&name)
                .ok_or_else(|| Error::Input(format!("teacher checkpoint lacks `{name}`")))?;
            if stored.shape() != teacher.params.get(&name).unwrap().shape() {
                return Err(Error::Shape(format!(
                    "checkpoint tensor `{name}` has the wrong shape"
                )));
            }
            teacher.params.insert(name, stored.clone());
        }
        Ok(teacher)
    }
}
