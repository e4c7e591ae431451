use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::block::{BlockScratch, BuildingBlock, InvertedResidualBottleneck, Mode};
use super::config::{NetworkConfig, StageShape};
use crate::error::Result;
use crate::numerics::{extract_patch, DenseLayer, FeatureMap, LayerNormParams};
use crate::scalar::Scalar;

/// One stage: a building block applied independently to every patch.
#[derive(Clone, Debug, PartialEq)]
pub struct Stage<T> {
    pub(crate) shape: StageShape,
    pub(crate) block: BuildingBlock<T>,
}

impl<T: Scalar> Stage<T> {
    pub fn shape(&self) -> &StageShape {
        &self.shape
    }

    pub fn block(&self) -> &BuildingBlock<T> {
        &self.block
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        (self.shape.in_side, self.shape.in_side, self.shape.in_channels)
    }

    pub fn output_shape(&self) -> (usize, usize, usize) {
        let n = self.shape.patches_per_side;
        (n, n, self.shape.out_dim)
    }

    /// Recomputes output pixel `p` (patch `p` of `input`) into `out`.
    #[inline]
    pub(crate) fn forward_patch(
        &self,
        input: &FeatureMap<T>,
        p: usize,
        out: &mut [T],
        mode: Mode,
        stage_index: usize,
        scratch: &mut BlockScratch<T>,
    ) {
        let mut patch = std::mem::take(&mut scratch.patch);
        patch.resize(self.shape.patch_dim, T::zero());
        extract_patch(input, self.shape.patch_side, p, &mut patch);
        self.block.forward_into(&patch, out, mode, stage_index, p, scratch);
        scratch.patch = patch;
    }

    pub(crate) fn forward_indexed(&self, input: &FeatureMap<T>, mode: Mode, stage_index: usize) -> Result<FeatureMap<T>> {
        input.ensure_shape("stage input", self.input_shape())?;
        let (n, _, c_out) = self.output_shape();
        let mut out = FeatureMap::zeros(n, n, c_out);
        out.data_mut()
            .par_chunks_mut(c_out)
            .enumerate()
            .for_each_init(BlockScratch::default, |scratch, (p, dst)| {
                self.forward_patch(input, p, dst, mode, stage_index, scratch)
            });
        Ok(out)
    }

    pub fn forward(&self, input: &FeatureMap<T>, mode: Mode) -> Result<FeatureMap<T>> {
        self.forward_indexed(input, mode, 0)
    }
}

/// Per-stage and total parameter counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamCount {
    pub per_stage: Vec<u64>,
    pub head: u64,
    pub total: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Gamma,
    Beta,
}

impl ParamKind {
    /// Whether weight decay applies to tensors of this kind.
    pub fn decays(self) -> bool {
        matches!(self, ParamKind::Weight)
    }
}

/// A named parameter tensor, borrowed from a network.
#[derive(Debug)]
pub struct ParamRef<'a, T> {
    pub name: String,
    pub kind: ParamKind,
    pub dims: Vec<usize>,
    pub data: &'a [T],
}

#[derive(Debug)]
pub struct ParamMut<'a, T> {
    pub name: String,
    pub kind: ParamKind,
    pub dims: Vec<usize>,
    pub data: &'a mut [T],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    pub(crate) config: NetworkConfig,
    pub(crate) stages: Vec<Stage<T>>,
    pub(crate) head: DenseLayer<T>,
}

fn uniform_layer<T: Scalar>(rng: &mut ChaCha8Rng, in_dim: usize, out_dim: usize) -> DenseLayer<T> {
    let bound = (1.0 / in_dim as f64).sqrt();
    let mut draw = |len: usize| -> Vec<T> {
        (0..len)
            .map(|_| T::lit(bound * (2.0 * rng.gen::<f64>() - 1.0)))
            .collect()
    };
    let weights = draw(in_dim * out_dim);
    let bias = draw(out_dim);
    DenseLayer::new(in_dim, out_dim, weights, bias).expect("sizes computed from shapes")
}

impl<T: Scalar> Network<T> {
    /// Allocates every layer with seeded uniform `±sqrt(1/in_dim)` weights and
    /// biases, `gamma = 1`, `beta = 0`. Values are drawn in `f64` and cast, so
    /// an `f32` and an `f64` build from the same seed agree after rounding.
    pub fn build(config: &NetworkConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build_with(config, |i, o| uniform_layer(&mut rng, i, o))
    }

    /// Same architecture with every parameter set to zero.
    pub fn zeros_like(config: &NetworkConfig) -> Result<Self> {
        let mut net = Self::build_with(config, DenseLayer::zeros)?;
        for p in net.params_mut() {
            p.data.fill(T::zero());
        }
        Ok(net)
    }

    fn build_with(config: &NetworkConfig, mut dense: impl FnMut(usize, usize) -> DenseLayer<T>) -> Result<Self> {
        let shapes = config.stage_shapes()?;
        let eps = T::lit(config.layer_norm_eps);
        let mut stages = Vec::with_capacity(shapes.len());
        for (shape, sc) in shapes.iter().zip(&config.stages) {
            let mixer = dense(shape.patch_dim, shape.out_dim);
            let mut bottlenecks = Vec::with_capacity(shape.bottlenecks);
            for _ in 0..shape.bottlenecks {
                let expand = dense(shape.out_dim, shape.hidden_dim);
                let project = dense(shape.hidden_dim, shape.out_dim);
                let norm = LayerNormParams::identity(shape.out_dim, eps);
                bottlenecks.push(InvertedResidualBottleneck::new(expand, project, norm, sc.dropout)?);
            }
            stages.push(Stage {
                shape: *shape,
                block: BuildingBlock::new(mixer, bottlenecks)?,
            });
        }
        let head = dense(config.final_dim(), config.num_classes);
        Ok(Self {
            config: config.clone(),
            stages,
            head,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn stages(&self) -> &[Stage<T>] {
        &self.stages
    }

    pub fn head(&self) -> &DenseLayer<T> {
        &self.head
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        (self.config.input_side, self.config.input_side, self.config.input_channels)
    }

    pub fn num_classes(&self) -> usize {
        self.head.out_dim()
    }

    /// Applies the optional per-channel normalization to a raw `[0, 1]` image.
    pub fn prepare_input(&self, image: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        image.ensure_shape("network input", self.input_shape())?;
        let mut out = image.clone();
        if let Some(norm) = &self.config.normalization {
            let c = self.config.input_channels;
            let mean: Vec<T> = norm.mean.iter().map(|v| T::lit(*v)).collect();
            let inv_std: Vec<T> = norm.std.iter().map(|v| T::lit(1.0 / *v)).collect();
            for (i, v) in out.data_mut().iter_mut().enumerate() {
                *v = (*v - mean[i % c]) * inv_std[i % c];
            }
        }
        Ok(out)
    }

    /// Runs every stage, returning each stage's output map and the logits.
    pub fn forward_all(&self, image: &FeatureMap<T>, mode: Mode) -> Result<(Vec<FeatureMap<T>>, Vec<T>)> {
        let input = self.prepare_input(image)?;
        let mut outputs: Vec<FeatureMap<T>> = Vec::with_capacity(self.stages.len());
        for (l, stage) in self.stages.iter().enumerate() {
            let next = stage.forward_indexed(outputs.last().unwrap_or(&input), mode, l)?;
            outputs.push(next);
        }
        let logits = self.head_forward(outputs.last().unwrap_or(&input));
        Ok((outputs, logits))
    }

    pub fn forward(&self, image: &FeatureMap<T>, mode: Mode) -> Result<Vec<T>> {
        let mut current = self.prepare_input(image)?;
        for (l, stage) in self.stages.iter().enumerate() {
            current = stage.forward_indexed(&current, mode, l)?;
        }
        Ok(self.head_forward(&current))
    }

    pub(crate) fn head_forward(&self, last: &FeatureMap<T>) -> Vec<T> {
        let mut logits = vec![T::zero(); self.head.out_dim()];
        self.head.forward_into(last.data(), &mut logits);
        logits
    }

    /// Dense MACs of one full forward pass, measured from the layers.
    pub fn full_macs(&self) -> u64 {
        self.stages
            .iter()
            .map(|s| s.shape.patch_count() as u64 * s.block.macs_per_patch())
            .sum::<u64>()
            + self.head.macs()
    }

    pub fn count_params(&self) -> ParamCount {
        let per_stage: Vec<u64> = self.stages.iter().map(|s| s.block.param_count()).collect();
        let head = self.head.param_count();
        ParamCount {
            total: per_stage.iter().sum::<u64>() + head,
            per_stage,
            head,
        }
    }

    /// Every parameter tensor in canonical order with its container name.
    pub fn params(&self) -> Vec<ParamRef<'_, T>> {
        let mut out = Vec::new();
        for (l, stage) in self.stages.iter().enumerate() {
            let prefix = format!("stage{}", l + 1);
            push_dense(&mut out, format!("{prefix}.mixer"), &stage.block.mixer);
            for (i, b) in stage.block.bottlenecks.iter().enumerate() {
                let bp = format!("{prefix}.bn{}", i + 1);
                push_dense(&mut out, format!("{bp}.expand"), &b.expand);
                push_dense(&mut out, format!("{bp}.project"), &b.project);
                let d = b.norm.dim();
                out.push(ParamRef {
                    name: format!("{bp}.norm.gamma"),
                    kind: ParamKind::Gamma,
                    dims: vec![d],
                    data: &b.norm.gamma,
                });
                out.push(ParamRef {
                    name: format!("{bp}.norm.beta"),
                    kind: ParamKind::Beta,
                    dims: vec![d],
                    data: &b.norm.beta,
                });
            }
        }
        push_dense(&mut out, "head".into(), &self.head);
        out
    }

    /// Mutable counterpart of [`Network::params`], same order.
    pub fn params_mut(&mut self) -> Vec<ParamMut<'_, T>> {
        let mut out = Vec::new();
        for (l, stage) in self.stages.iter_mut().enumerate() {
            let prefix = format!("stage{}", l + 1);
            push_dense_mut(&mut out, format!("{prefix}.mixer"), &mut stage.block.mixer);
            for (i, b) in stage.block.bottlenecks.iter_mut().enumerate() {
                let bp = format!("{prefix}.bn{}", i + 1);
                push_dense_mut(&mut out, format!("{bp}.expand"), &mut b.expand);
                push_dense_mut(&mut out, format!("{bp}.project"), &mut b.project);
                let d = b.norm.dim();
                out.push(ParamMut {
                    name: format!("{bp}.norm.gamma"),
                    kind: ParamKind::Gamma,
                    dims: vec![d],
                    data: &mut b.norm.gamma,
                });
                out.push(ParamMut {
                    name: format!("{bp}.norm.beta"),
                    kind: ParamKind::Beta,
                    dims: vec![d],
                    data: &mut b.norm.beta,
                });
            }
        }
        push_dense_mut(&mut out, "head".into(), &mut self.head);
        out
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            config: self.config.clone(),
            stages: self
                .stages
                .iter()
                .map(|s| Stage {
                    shape: s.shape,
                    block: s.block.cast(),
                })
                .collect(),
            head: self.head.cast(),
        }
    }
}

fn push_dense<'a, T: Scalar>(out: &mut Vec<ParamRef<'a, T>>, prefix: String, layer: &'a DenseLayer<T>) {
    out.push(ParamRef {
        name: format!("{prefix}.weight"),
        kind: ParamKind::Weight,
        dims: vec![layer.out_dim(), layer.in_dim()],
        data: &layer.weights,
    });
    out.push(ParamRef {
        name: format!("{prefix}.bias"),
        kind: ParamKind::Bias,
        dims: vec![layer.out_dim()],
        data: &layer.bias,
    });
}

fn push_dense_mut<'a, T: Scalar>(out: &mut Vec<ParamMut<'a, T>>, prefix: String, layer: &'a mut DenseLayer<T>) {
    let dims = vec![layer.out_dim(), layer.in_dim()];
    let bias_dims = vec![layer.out_dim()];
    out.push(ParamMut {
        name: format!("{prefix}.weight"),
        kind: ParamKind::Weight,
        dims,
        data: &mut layer.weights,
    });
    out.push(ParamMut {
        name: format!("{prefix}.bias"),
        kind: ParamKind::Bias,
        dims: bias_dims,
        data: &mut layer.bias,
    });
}

pub fn build_network<T: Scalar>(config: &NetworkConfig, seed: u64) -> Result<Network<T>> {
    Network::build(config, seed)
}

pub fn stage_forward<T: Scalar>(stage: &Stage<T>, map: &FeatureMap<T>, mode: Mode) -> Result<FeatureMap<T>> {
    stage.forward(map, mode)
}

pub fn network_forward<T: Scalar>(net: &Network<T>, image: &FeatureMap<T>, mode: Mode) -> Result<Vec<T>> {
    net.forward(image, mode)
}

pub fn count_params<T: Scalar>(net: &Network<T>) -> ParamCount {
    net.count_params()
}

/// Index of the largest logit; ties resolve to the lowest index.
pub fn argmax<T: Scalar>(logits: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in logits.iter().enumerate() {
        if *v > logits[best] {
            best = i;
        }
    }
    best
}

/// Indices of the `k` largest logits, descending; ties keep index order.
pub fn top_k<T: Scalar>(logits: &[T], k: usize) -> Vec<(usize, T)> {
    let mut idx: Vec<usize> = (0..logits.len()).collect();
    idx.sort_by(|a, b| logits[*b].partial_cmp(&logits[*a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(b)));
    idx.into_iter().take(k).map(|i| (i, logits[i])).collect()
}
