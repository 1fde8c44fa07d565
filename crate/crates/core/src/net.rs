//! Feed-forward networks for the visual encoder, the visual mapping module
//! and the semantic mapping module, with hand-written backpropagation.
//!
//! Layers are affine maps `y = x W + b` with `W` of shape `(in, out)`,
//! a ReLU between consecutive layers and no activation after the last one.
//! Inputs are batched row-wise.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_dims: Vec<usize>,
}

impl MlpSpec {
    pub fn new(layer_dims: Vec<usize>) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "a network needs at least an input and an output width, got {layer_dims:?}"
            )));
        }
        if layer_dims.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "layer widths must be positive, got {layer_dims:?}"
            )));
        }
        Ok(Self { layer_dims })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.layer_dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub spec: MlpSpec,
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Per-layer activations cached by the forward pass.
#[derive(Debug, Clone)]
pub struct MlpTape {
    /// Input of every layer; entry 0 is the network input.
    pub layer_inputs: Vec<Array2<f64>>,
    /// Pre-activation of every hidden layer.
    pub pre_activations: Vec<Array2<f64>>,
}

/// Parameter gradients, shaped like [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl MlpGrads {
    pub fn zeros(spec: &MlpSpec) -> Self {
        Self {
            weights: spec
                .layer_dims
                .windows(2)
                .map(|w| Array2::zeros((w[0], w[1])))
                .collect(),
            biases: spec.layer_dims[1..].iter().map(|&n| Array1::zeros(n)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.weights.iter_mut().for_each(|w| *w *= factor);
        self.biases.iter_mut().for_each(|b| *b *= factor);
    }

    /// Gradient tensors in declared layer order: `W0, b0, W1, b1, ...`.
    pub fn tensors(&self) -> Vec<&[f64]> {
        interleave(&self.weights, &self.biases)
    }
}

fn interleave<'a>(weights: &'a [Array2<f64>], biases: &'a [Array1<f64>]) -> Vec<&'a [f64]> {
    weights
        .iter()
        .zip(biases)
        .flat_map(|(w, b)| {
            [
                w.as_slice().expect("standard layout"),
                b.as_slice().expect("standard layout"),
            ]
        })
        .collect()
}

impl MlpParams {
    /// Uniform weights in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, zero biases.
    pub fn init(spec: &MlpSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = spec
            .layer_dims
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                Array2::from_shape_simple_fn((w[0], w[1]), || dist.sample(&mut rng))
            })
            .collect();
        let biases = spec.layer_dims[1..].iter().map(|&n| Array1::zeros(n)).collect();
        Self {
            spec: spec.clone(),
            weights,
            biases,
        }
    }

    pub fn zeros(spec: &MlpSpec) -> Self {
        let g = MlpGrads::zeros(spec);
        Self {
            spec: spec.clone(),
            weights: g.weights,
            biases: g.biases,
        }
    }

    /// Checks shapes against the spec and that every entry is finite.
    pub fn validate(&self) -> Result<()> {
        let n = self.spec.num_layers();
        if self.weights.len() != n || self.biases.len() != n {
            return Err(Error::mismatch("layer count", n, self.weights.len()));
        }
        for (l, w) in self.spec.layer_dims.windows(2).enumerate() {
            if self.weights[l].dim() != (w[0], w[1]) {
                return Err(Error::mismatch(
                    format!("weight matrix {l} rows"),
                    w[0],
                    self.weights[l].nrows(),
                ));
            }
            if self.biases[l].len() != w[1] {
                return Err(Error::mismatch(format!("bias {l}"), w[1], self.biases[l].len()));
            }
        }
        if self.tensors().iter().any(|t| t.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFinite("network parameters".into()));
        }
        Ok(())
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        interleave(&self.weights, &self.biases)
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| {
                [
                    w.as_slice_mut().expect("standard layout"),
                    b.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.spec.input_dim() {
            return Err(Error::mismatch("network input", self.spec.input_dim(), cols));
        }
        Ok(())
    }

    /// Batched forward pass; rows of `x` are independent inputs.
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, MlpTape)> {
        self.check_input(x.ncols())?;
        let last = self.spec.num_layers() - 1;
        let mut layer_inputs = Vec::with_capacity(last + 1);
        let mut pre_activations = Vec::with_capacity(last);
        let mut h = x.to_owned();
        for l in 0..=last {
            let z = h.dot(&self.weights[l]) + &self.biases[l];
            layer_inputs.push(h);
            if l == last {
                return Ok((
                    z,
                    MlpTape {
                        layer_inputs,
                        pre_activations,
                    },
                ));
            }
            h = z.mapv(relu);
            pre_activations.push(z);
        }
        unreachable!("spec has at least one layer")
    }

    /// Forward pass without keeping a tape.
    pub fn infer(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let last = self.spec.num_layers() - 1;
        let mut h = x.to_owned();
        for l in 0..=last {
            let z = h.dot(&self.weights[l]) + &self.biases[l];
            h = if l == last { z } else { z.mapv(relu) };
        }
        Ok(h)
    }

    /// Single-vector forward pass.
    pub fn forward_vec(&self, x: ArrayView1<'_, f64>) -> Result<(Array1<f64>, MlpTape)> {
        let batch = x.insert_axis(Axis(0));
        let (out, tape) = self.forward(batch)?;
        Ok((out.row(0).to_owned(), tape))
    }

    /// Backpropagates `grad_out` (gradient of a scalar w.r.t. the output
    /// rows) through the tape. Returns parameter gradients summed over the
    /// batch and the gradient w.r.t. each input row.
    pub fn backward(
        &self,
        tape: &MlpTape,
        grad_out: ArrayView2<'_, f64>,
    ) -> Result<(MlpGrads, Array2<f64>)> {
        let n = self.spec.num_layers();
        if tape.layer_inputs.len() != n || tape.pre_activations.len() + 1 != n {
            return Err(Error::mismatch("tape layers", n, tape.layer_inputs.len()));
        }
        let rows = tape.layer_inputs[0].nrows();
        if grad_out.dim() != (rows, self.spec.output_dim()) {
            return Err(Error::mismatch(
                "output gradient columns",
                self.spec.output_dim(),
                grad_out.ncols(),
            ));
        }
        let mut weights = vec![Array2::zeros((0, 0)); n];
        let mut biases = vec![Array1::zeros(0); n];
        let mut g = grad_out.to_owned();
        for l in (0..n).rev() {
            weights[l] = tape.layer_inputs[l].t().dot(&g);
            biases[l] = g.sum_axis(Axis(0));
            let mut g_in = g.dot(&self.weights[l].t());
            if l > 0 {
                // ReLU subgradient is 0 at the kink
                ndarray::Zip::from(&mut g_in)
                    .and(&tape.pre_activations[l - 1])
                    .for_each(|gi, &z| {
                        if z <= 0.0 {
                            *gi = 0.0;
                        }
                    });
            }
            g = g_in;
        }
        Ok((MlpGrads { weights, biases }, g))
    }
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Cosine of the angle between `a` and `b`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::mismatch("cosine similarity operands", a.len(), b.len()));
    }
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateVector("cosine similarity operand".into()));
    }
    Ok((a.dot(&b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Whether the visual encoder is trained jointly or kept at its initial weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EncoderMode {
    #[default]
    EndToEnd,
    Frozen,
}

/// Widths of the three networks, excluding the data-determined input widths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Encoder layer widths after the feature input; `None` passes features through.
    pub encoder_widths: Option<Vec<usize>>,
    /// Hidden widths shared by the visual and semantic mapping modules.
    pub map_hidden: Vec<usize>,
    pub latent_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder_widths: None,
            map_hidden: vec![512, 256],
            latent_dim: 128,
        }
    }
}

impl ModelConfig {
    /// Network specs `(encoder, visual map, semantic map)` for feature width
    /// `v` and semantic width `d`.
    pub fn specs(&self, v: usize, d: usize) -> Result<(Option<MlpSpec>, MlpSpec, MlpSpec)> {
        let encoder = match &self.encoder_widths {
            Some(widths) if !widths.is_empty() => {
                let mut dims = vec![v];
                dims.extend(widths);
                Some(MlpSpec::new(dims)?)
            }
            Some(_) => {
                return Err(Error::InvalidConfig(
                    "encoder widths must be non-empty when an encoder is requested".into(),
                ))
            }
            None => None,
        };
        let map_in = encoder.as_ref().map_or(v, |e| e.output_dim());
        let branch = |input: usize| {
            let mut dims = vec![input];
            dims.extend(&self.map_hidden);
            dims.push(self.latent_dim);
            MlpSpec::new(dims)
        };
        Ok((encoder, branch(map_in)?, branch(d)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder: Option<MlpParams>,
    pub visual_map: MlpParams,
    pub semantic_map: MlpParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub encoder: Option<MlpGrads>,
    pub visual_map: MlpGrads,
    pub semantic_map: MlpGrads,
}

impl ModelGrads {
    /// Named gradient tensors in the same order as [`ModelParams::named_tensors`].
    pub fn named_tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        if let Some(e) = &self.encoder {
            push_named(&mut out, "encoder", e.tensors());
        }
        push_named(&mut out, "visual_map", self.visual_map.tensors());
        push_named(&mut out, "semantic_map", self.semantic_map.tensors());
        out
    }
}

fn push_named<'a, T>(out: &mut Vec<(String, T)>, net: &str, tensors: Vec<T>) {
    for (i, t) in tensors.into_iter().enumerate() {
        let kind = if i % 2 == 0 { "weight" } else { "bias" };
        out.push((format!("{net}.{kind}{}", i / 2), t));
    }
}

impl ModelParams {
    pub fn new(
        encoder: Option<MlpParams>,
        visual_map: MlpParams,
        semantic_map: MlpParams,
    ) -> Result<Self> {
        let p = Self {
            encoder,
            visual_map,
            semantic_map,
        };
        p.validate()?;
        Ok(p)
    }

    /// Freshly initialised networks for feature width `v` and semantic width `d`.
    pub fn init(cfg: &ModelConfig, v: usize, d: usize, seed: u64) -> Result<Self> {
        let (enc, vis, sem) = cfg.specs(v, d)?;
        Self::new(
            enc.map(|s| MlpParams::init(&s, sub_seed(seed, 0))),
            MlpParams::init(&vis, sub_seed(seed, 1)),
            MlpParams::init(&sem, sub_seed(seed, 2)),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(e) = &self.encoder {
            e.validate()?;
            if e.spec.output_dim() != self.visual_map.spec.input_dim() {
                return Err(Error::mismatch(
                    "encoder output vs visual map input",
                    self.visual_map.spec.input_dim(),
                    e.spec.output_dim(),
                ));
            }
        }
        self.visual_map.validate()?;
        self.semantic_map.validate()?;
        if self.visual_map.spec.output_dim() != self.semantic_map.spec.output_dim() {
            return Err(Error::mismatch(
                "latent width of semantic map vs visual map",
                self.visual_map.spec.output_dim(),
                self.semantic_map.spec.output_dim(),
            ));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.encoder
            .as_ref()
            .map_or(self.visual_map.spec.input_dim(), |e| e.spec.input_dim())
    }

    pub fn semantic_dim(&self) -> usize {
        self.semantic_map.spec.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.visual_map.spec.output_dim()
    }

    /// Latent visual vectors for a batch of feature rows.
    pub fn latent_visual(&self, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        match &self.encoder {
            Some(e) => self.visual_map.infer(e.infer(features)?.view()),
            None => self.visual_map.infer(features),
        }
    }

    /// Latent semantic vectors for a batch of embedding rows.
    pub fn latent_semantic(&self, embeddings: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.semantic_map.infer(embeddings)
    }

    pub fn zero_grads(&self) -> ModelGrads {
        ModelGrads {
            encoder: self.encoder.as_ref().map(|e| MlpGrads::zeros(&e.spec)),
            visual_map: MlpGrads::zeros(&self.visual_map.spec),
            semantic_map: MlpGrads::zeros(&self.semantic_map.spec),
        }
    }

    /// Parameter tensors with stable names, in declared layer order:
    /// encoder, visual map, semantic map; within a network `W0, b0, W1, ...`.
    pub fn named_tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        if let Some(e) = &self.encoder {
            push_named(&mut out, "encoder", e.tensors());
        }
        push_named(&mut out, "visual_map", self.visual_map.tensors());
        push_named(&mut out, "semantic_map", self.semantic_map.tensors());
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        if let Some(e) = &mut self.encoder {
            push_named(&mut out, "encoder", e.tensors_mut());
        }
        push_named(&mut out, "visual_map", self.visual_map.tensors_mut());
        push_named(&mut out, "semantic_map", self.semantic_map.tensors_mut());
        out
    }

    pub fn num_params(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

fn sub_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
}
