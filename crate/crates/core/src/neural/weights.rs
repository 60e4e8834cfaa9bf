//! Learnable parameters of the scorer and a flat, named view over them.

use ndarray::{Array, Array2, Dimension};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kernels::{Mat, Vector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub emb_dim: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
}

impl ModelDims {
    pub const DEFAULT_MODEL_DIM: usize = 128;
    pub const DEFAULT_HEADS: usize = 4;
    pub const DEFAULT_FF_DIM: usize = 256;

    pub fn new(emb_dim: usize, model_dim: usize, heads: usize, ff_dim: usize) -> Result<Self> {
        let dims = ModelDims {
            emb_dim,
            model_dim,
            heads,
            ff_dim,
        };
        dims.validate()?;
        Ok(dims)
    }

    pub fn with_defaults(emb_dim: usize) -> Self {
        ModelDims {
            emb_dim,
            model_dim: Self::DEFAULT_MODEL_DIM,
            heads: Self::DEFAULT_HEADS,
            ff_dim: Self::DEFAULT_FF_DIM,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.emb_dim == 0 || self.model_dim < 2 || self.ff_dim == 0 || self.heads == 0 {
            return Err(Error::Config(format!(
                "all model dimensions must be positive: {self:?}"
            )));
        }
        if !self.model_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "model_dim {} is not divisible by heads {}",
                self.model_dim, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gain: Vector,
    pub bias: Vector,
}

/// One `[conv + self-attention + feed-forward]` block, each sub-layer pre-normed.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub conv_norm: LayerNormParams,
    pub conv_taps: [Mat; 3],
    pub conv_bias: Vector,
    pub attn_norm: LayerNormParams,
    pub w_query: Mat,
    pub w_key: Mat,
    pub w_value: Mat,
    pub w_out: Mat,
    pub ffn_norm: LayerNormParams,
    pub ffn_in: Mat,
    pub ffn_in_bias: Vector,
    pub ffn_out: Mat,
    pub ffn_out_bias: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub dims: ModelDims,
    pub input_proj: Mat,
    pub input_bias: Vector,
    pub question_encoder: EncoderParams,
    pub context_encoder: EncoderParams,
    /// Runs over the fused context representation.
    pub fused_encoder: EncoderParams,
    /// `w0` of the trilinear similarity, length `3d`.
    pub trilinear: Vector,
    pub fusion_proj: Mat,
    pub fusion_bias: Vector,
}

/// Read-only view of one parameter tensor.
pub struct TensorRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

fn flat<D: Dimension>(a: &Array<f64, D>) -> &[f64] {
    a.as_slice().expect("parameters are contiguous")
}

fn flat_mut<D: Dimension>(a: &mut Array<f64, D>) -> &mut [f64] {
    a.as_slice_mut().expect("parameters are contiguous")
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-limit..limit))
}

impl LayerNormParams {
    fn identity(d: usize) -> Self {
        LayerNormParams {
            gain: Vector::ones(d),
            bias: Vector::zeros(d),
        }
    }
}

impl EncoderParams {
    fn zeros(d: usize, ff: usize) -> Self {
        let z = |r, c| Mat::zeros((r, c));
        EncoderParams {
            conv_norm: LayerNormParams::identity(d),
            conv_taps: [z(d, d), z(d, d), z(d, d)],
            conv_bias: Vector::zeros(d),
            attn_norm: LayerNormParams::identity(d),
            w_query: z(d, d),
            w_key: z(d, d),
            w_value: z(d, d),
            w_out: z(d, d),
            ffn_norm: LayerNormParams::identity(d),
            ffn_in: z(d, ff),
            ffn_in_bias: Vector::zeros(ff),
            ffn_out: z(ff, d),
            ffn_out_bias: Vector::zeros(d),
        }
    }

    fn random(d: usize, ff: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut p = Self::zeros(d, ff);
        for tap in &mut p.conv_taps {
            // three taps share the fan-in
            *tap = xavier(rng, d, d) / 3f64.sqrt();
        }
        p.w_query = xavier(rng, d, d);
        p.w_key = xavier(rng, d, d);
        p.w_value = xavier(rng, d, d);
        p.w_out = xavier(rng, d, d);
        p.ffn_in = xavier(rng, d, ff);
        p.ffn_out = xavier(rng, ff, d);
        p
    }

    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a>>) {
        let mut push = |name: &str, shape: &[usize], data: &'a [f64]| {
            out.push(TensorRef {
                name: format!("{prefix}.{name}"),
                shape: shape.to_vec(),
                data,
            })
        };
        push(
            "conv_norm.gain",
            self.conv_norm.gain.shape(),
            flat(&self.conv_norm.gain),
        );
        push(
            "conv_norm.bias",
            self.conv_norm.bias.shape(),
            flat(&self.conv_norm.bias),
        );
        for (i, tap) in self.conv_taps.iter().enumerate() {
            push(&format!("conv_tap{i}"), tap.shape(), flat(tap));
        }
        push("conv_bias", self.conv_bias.shape(), flat(&self.conv_bias));
        push(
            "attn_norm.gain",
            self.attn_norm.gain.shape(),
            flat(&self.attn_norm.gain),
        );
        push(
            "attn_norm.bias",
            self.attn_norm.bias.shape(),
            flat(&self.attn_norm.bias),
        );
        push("w_query", self.w_query.shape(), flat(&self.w_query));
        push("w_key", self.w_key.shape(), flat(&self.w_key));
        push("w_value", self.w_value.shape(), flat(&self.w_value));
        push("w_out", self.w_out.shape(), flat(&self.w_out));
        push(
            "ffn_norm.gain",
            self.ffn_norm.gain.shape(),
            flat(&self.ffn_norm.gain),
        );
        push(
            "ffn_norm.bias",
            self.ffn_norm.bias.shape(),
            flat(&self.ffn_norm.bias),
        );
        push("ffn_in", self.ffn_in.shape(), flat(&self.ffn_in));
        push(
            "ffn_in_bias",
            self.ffn_in_bias.shape(),
            flat(&self.ffn_in_bias),
        );
        push("ffn_out", self.ffn_out.shape(), flat(&self.ffn_out));
        push(
            "ffn_out_bias",
            self.ffn_out_bias.shape(),
            flat(&self.ffn_out_bias),
        );
    }

    // Same order as `visit`.
    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        out.push(flat_mut(&mut self.conv_norm.gain));
        out.push(flat_mut(&mut self.conv_norm.bias));
        for tap in &mut self.conv_taps {
            out.push(flat_mut(tap));
        }
        out.push(flat_mut(&mut self.conv_bias));
        out.push(flat_mut(&mut self.attn_norm.gain));
        out.push(flat_mut(&mut self.attn_norm.bias));
        out.push(flat_mut(&mut self.w_query));
        out.push(flat_mut(&mut self.w_key));
        out.push(flat_mut(&mut self.w_value));
        out.push(flat_mut(&mut self.w_out));
        out.push(flat_mut(&mut self.ffn_norm.gain));
        out.push(flat_mut(&mut self.ffn_norm.bias));
        out.push(flat_mut(&mut self.ffn_in));
        out.push(flat_mut(&mut self.ffn_in_bias));
        out.push(flat_mut(&mut self.ffn_out));
        out.push(flat_mut(&mut self.ffn_out_bias));
    }
}

impl ModelWeights {
    /// All weight matrices zero, layer norms identity.
    pub fn zeros(dims: ModelDims) -> Self {
        let (e, d, ff) = (dims.emb_dim, dims.model_dim, dims.ff_dim);
        ModelWeights {
            dims,
            input_proj: Mat::zeros((e, d)),
            input_bias: Vector::zeros(d),
            question_encoder: EncoderParams::zeros(d, ff),
            context_encoder: EncoderParams::zeros(d, ff),
            fused_encoder: EncoderParams::zeros(d, ff),
            trilinear: Vector::zeros(3 * d),
            fusion_proj: Mat::zeros((4 * d, d)),
            fusion_bias: Vector::zeros(d),
        }
    }

    /// Xavier-uniform matrices, zero biases, unit layer-norm gains.
    pub fn random(dims: ModelDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (e, d, ff) = (dims.emb_dim, dims.model_dim, dims.ff_dim);
        let mut w = Self::zeros(dims);
        w.input_proj = xavier(&mut rng, e, d);
        w.question_encoder = EncoderParams::random(d, ff, &mut rng);
        w.context_encoder = EncoderParams::random(d, ff, &mut rng);
        w.fused_encoder = EncoderParams::random(d, ff, &mut rng);
        let limit = (3.0 / (3 * d) as f64).sqrt();
        w.trilinear = Vector::from_shape_simple_fn(3 * d, || rng.gen_range(-limit..limit));
        w.fusion_proj = xavier(&mut rng, 4 * d, d);
        w
    }

    /// Every entry zero, layer-norm gains included. Gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut w = Self::zeros(self.dims);
        for t in w.tensors_mut() {
            t.fill(0.0);
        }
        w
    }

    /// Every tensor in a fixed order with a dotted name.
    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = Vec::new();
        out.push(TensorRef {
            name: "input_proj".into(),
            shape: self.input_proj.shape().to_vec(),
            data: flat(&self.input_proj),
        });
        out.push(TensorRef {
            name: "input_bias".into(),
            shape: self.input_bias.shape().to_vec(),
            data: flat(&self.input_bias),
        });
        self.question_encoder.visit("question_encoder", &mut out);
        self.context_encoder.visit("context_encoder", &mut out);
        self.fused_encoder.visit("fused_encoder", &mut out);
        out.push(TensorRef {
            name: "trilinear".into(),
            shape: self.trilinear.shape().to_vec(),
            data: flat(&self.trilinear),
        });
        out.push(TensorRef {
            name: "fusion_proj".into(),
            shape: self.fusion_proj.shape().to_vec(),
            data: flat(&self.fusion_proj),
        });
        out.push(TensorRef {
            name: "fusion_bias".into(),
            shape: self.fusion_bias.shape().to_vec(),
            data: flat(&self.fusion_bias),
        });
        out
    }

    /// Mutable slices in the same order as [`ModelWeights::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        out.push(flat_mut(&mut self.input_proj));
        out.push(flat_mut(&mut self.input_bias));
        self.question_encoder.visit_mut(&mut out);
        self.context_encoder.visit_mut(&mut out);
        self.fused_encoder.visit_mut(&mut out);
        out.push(flat_mut(&mut self.trilinear));
        out.push(flat_mut(&mut self.fusion_proj));
        out.push(flat_mut(&mut self.fusion_bias));
        out
    }

    pub fn tensor_names(&self) -> Vec<String> {
        self.tensors().into_iter().map(|t| t.name).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// `self += alpha * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ModelWeights, alpha: f64) {
        let src: Vec<&[f64]> = other.tensors().into_iter().map(|t| t.data).collect();
        for (dst, src) in self.tensors_mut().into_iter().zip(src) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += alpha * s;
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= alpha);
        }
    }

    /// Rebuilds weights from named tensors. Widths are read off the tensor
    /// shapes; `heads` is not recoverable from shapes and must be supplied.
    pub fn from_named(tensors: &[(String, Vec<usize>, Vec<f64>)], heads: usize) -> Result<Self> {
        let find = |name: &str| {
            tensors
                .iter()
                .find(|(n, _, _)| n == name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
        };
        let proj = &find("input_proj")?.1;
        let ffn = &find("question_encoder.ffn_in")?.1;
        if proj.len() != 2 || ffn.len() != 2 {
            return Err(Error::Checkpoint(
                "projection tensors must be rank 2".into(),
            ));
        }
        let dims = ModelDims::new(proj[0], proj[1], heads, ffn[1])?;
        let mut w = ModelWeights::zeros(dims);
        let layout: Vec<(String, Vec<usize>)> =
            w.tensors().into_iter().map(|t| (t.name, t.shape)).collect();
        if layout.len() != tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                layout.len(),
                tensors.len()
            )));
        }
        for ((name, shape), dst) in layout.iter().zip(w.tensors_mut()) {
            let (_, got_shape, data) = find(name)?;
            if got_shape != shape {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {got_shape:?}, expected {shape:?}"
                )));
            }
            dst.copy_from_slice(data);
        }
        Ok(w)
    }
}
