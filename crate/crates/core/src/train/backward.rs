//! Reverse-mode gradients for every layer of the network.
//!
//! The forward functions here mirror the inference path exactly (same
//! kernels, same dropout masks) and additionally record a tape that the
//! matching backward function consumes.

use crate::error::{Error, Result};
use crate::model::{dropout_mask, BuildingBlock, InvertedResidualBottleneck, Mode, Network, SiteKey};
use crate::numerics::{dot, extract_patch, gelu, gelu_derivative, moments, DenseLayer, FeatureMap, LayerNormParams};
use crate::scalar::Scalar;

/// Gradients shaped exactly like a network's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet<T> {
    pub(crate) net: Network<T>,
}

impl<T: Scalar> GradientSet<T> {
    pub fn zeros_for(net: &Network<T>) -> Result<Self> {
        Ok(Self {
            net: Network::zeros_like(net.config())?,
        })
    }

    /// The gradient tensors, named and ordered like [`Network::params`].
    pub fn tensors(&self) -> Vec<crate::model::ParamRef<'_, T>> {
        self.net.params()
    }

    pub fn tensors_mut(&mut self) -> Vec<crate::model::ParamMut<'_, T>> {
        self.net.params_mut()
    }

    /// `self += scale · other`, tensor by tensor in canonical order.
    pub fn add_scaled(&mut self, other: &GradientSet<T>, scale: T) {
        for (dst, src) in self.net.params_mut().into_iter().zip(other.net.params()) {
            for (d, s) in dst.data.iter_mut().zip(src.data) {
                *d = *d + scale * *s;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for p in self.net.params_mut() {
            for v in p.data.iter_mut() {
                *v = *v * s;
            }
        }
    }

    pub fn max_abs(&self) -> T {
        self.net
            .params()
            .iter()
            .flat_map(|p| p.data.iter())
            .fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

/// Accumulates gradients of `y = W x + b` and returns `dx`.
pub fn dense_backward<T: Scalar>(layer: &DenseLayer<T>, x: &[T], dy: &[T], grad: &mut DenseLayer<T>) -> Vec<T> {
    let (in_dim, out_dim) = (layer.in_dim(), layer.out_dim());
    debug_assert_eq!(x.len(), in_dim);
    debug_assert_eq!(dy.len(), out_dim);
    let mut dx = vec![T::zero(); in_dim];
    for (i, g) in dy.iter().enumerate() {
        grad.bias[i] = grad.bias[i] + *g;
        let row = &mut grad.weights[i * in_dim..(i + 1) * in_dim];
        for (w, xv) in row.iter_mut().zip(x) {
            *w = *w + *g * *xv;
        }
        for (d, w) in dx.iter_mut().zip(layer.row(i)) {
            *d = *d + *g * *w;
        }
    }
    dx
}

/// Tape of one LayerNorm application.
#[derive(Clone, Debug)]
pub struct NormTape<T> {
    pub xhat: Vec<T>,
    pub inv_std: T,
}

pub fn layer_norm_forward_taped<T: Scalar>(p: &LayerNormParams<T>, x: &[T]) -> (Vec<T>, NormTape<T>) {
    let (mean, inv_std) = moments(x, p.epsilon());
    let xhat: Vec<T> = x.iter().map(|v| (*v - mean) * inv_std).collect();
    let y = xhat
        .iter()
        .zip(p.gamma())
        .zip(p.beta())
        .map(|((h, g), b)| *g * *h + *b)
        .collect();
    (y, NormTape { xhat, inv_std })
}

/// Accumulates `dγ`, `dβ` and returns `dx`.
pub fn layer_norm_backward<T: Scalar>(
    p: &LayerNormParams<T>,
    tape: &NormTape<T>,
    dy: &[T],
    grad: &mut LayerNormParams<T>,
) -> Vec<T> {
    let n = T::lit(dy.len() as f64);
    let mut dxhat = Vec::with_capacity(dy.len());
    for (i, g) in dy.iter().enumerate() {
        grad.gamma[i] = grad.gamma[i] + *g * tape.xhat[i];
        grad.beta[i] = grad.beta[i] + *g;
        dxhat.push(*g * p.gamma()[i]);
    }
    let mean_d = dxhat.iter().copied().sum::<T>() / n;
    let mean_dx = dxhat.iter().zip(&tape.xhat).map(|(d, h)| *d * *h).sum::<T>() / n;
    dxhat
        .iter()
        .zip(&tape.xhat)
        .map(|(d, h)| tape.inv_std * (*d - mean_d - *h * mean_dx))
        .collect()
}

#[derive(Clone, Debug)]
pub struct BottleneckTape<T> {
    input: Vec<T>,
    pre_activation: Vec<T>,
    keep: Option<Vec<bool>>,
    activation: Vec<T>,
    norm: NormTape<T>,
}

pub fn bottleneck_forward_taped<T: Scalar>(
    b: &InvertedResidualBottleneck<T>,
    x: &[T],
    mode: Mode,
    site: SiteKey,
) -> (Vec<T>, BottleneckTape<T>) {
    let mut pre = vec![T::zero(); b.d_hidden()];
    b.expand().forward_into(x, &mut pre);
    let mut act: Vec<T> = pre.iter().map(|v| gelu(*v)).collect();
    let keep = match mode {
        Mode::Training { seed } if b.dropout_p() > 0.0 => {
            let keep = dropout_mask(seed, site, b.d_hidden(), b.dropout_p());
            let scale = T::lit(1.0 / (1.0 - b.dropout_p()));
            for (a, k) in act.iter_mut().zip(&keep) {
                *a = if *k { *a * scale } else { T::zero() };
            }
            Some(keep)
        }
        _ => None,
    };
    let mut residual = vec![T::zero(); b.d_in()];
    b.project().forward_into(&act, &mut residual);
    for (r, xv) in residual.iter_mut().zip(x) {
        *r = *xv + *r;
    }
    let (y, norm) = layer_norm_forward_taped(b.norm(), &residual);
    let tape = BottleneckTape {
        input: x.to_vec(),
        pre_activation: pre,
        keep,
        activation: act,
        norm,
    };
    (y, tape)
}

pub fn bottleneck_backward<T: Scalar>(
    b: &InvertedResidualBottleneck<T>,
    tape: &BottleneckTape<T>,
    dy: &[T],
    grad: &mut InvertedResidualBottleneck<T>,
) -> Vec<T> {
    let dres = layer_norm_backward(b.norm(), &tape.norm, dy, &mut grad.norm);
    let mut dact = dense_backward(b.project(), &tape.activation, &dres, &mut grad.project);
    if let Some(keep) = &tape.keep {
        let scale = T::lit(1.0 / (1.0 - b.dropout_p()));
        for (d, k) in dact.iter_mut().zip(keep) {
            *d = if *k { *d * scale } else { T::zero() };
        }
    }
    let dpre: Vec<T> = dact
        .iter()
        .zip(&tape.pre_activation)
        .map(|(d, h)| *d * gelu_derivative(*h))
        .collect();
    let mut dx = dense_backward(b.expand(), &tape.input, &dpre, &mut grad.expand);
    for (d, r) in dx.iter_mut().zip(&dres) {
        *d = *d + *r;
    }
    dx
}

#[derive(Clone, Debug)]
pub struct BlockTape<T> {
    patch: Vec<T>,
    bottlenecks: Vec<BottleneckTape<T>>,
}

pub fn block_forward_taped<T: Scalar>(
    blk: &BuildingBlock<T>,
    patch: &[T],
    mode: Mode,
    stage: usize,
    patch_index: usize,
) -> (Vec<T>, BlockTape<T>) {
    let mut y = vec![T::zero(); blk.out_dim()];
    blk.mixer().forward_into(patch, &mut y);
    let mut tapes = Vec::with_capacity(blk.bottlenecks().len());
    for (i, b) in blk.bottlenecks().iter().enumerate() {
        let site = SiteKey {
            stage,
            patch: patch_index,
            bottleneck: i,
        };
        let (next, tape) = bottleneck_forward_taped(b, &y, mode, site);
        y = next;
        tapes.push(tape);
    }
    (
        y,
        BlockTape {
            patch: patch.to_vec(),
            bottlenecks: tapes,
        },
    )
}

pub fn block_backward<T: Scalar>(
    blk: &BuildingBlock<T>,
    tape: &BlockTape<T>,
    dy: &[T],
    grad: &mut BuildingBlock<T>,
) -> Vec<T> {
    let mut d = dy.to_vec();
    for ((b, t), g) in blk
        .bottlenecks()
        .iter()
        .zip(&tape.bottlenecks)
        .zip(grad.bottlenecks.iter_mut())
        .rev()
    {
        d = bottleneck_backward(b, t, &d, g);
    }
    dense_backward(blk.mixer(), &tape.patch, &d, &mut grad.mixer)
}

/// Numerically stable softmax cross-entropy; returns `(loss, dL/dlogits)`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &[T], target: usize) -> (T, Vec<T>) {
    let max = logits.iter().fold(T::neg_infinity(), |m, v| m.max(*v));
    let exps: Vec<T> = logits.iter().map(|v| (*v - max).exp()).collect();
    let sum = exps.iter().copied().sum::<T>();
    let loss = sum.ln() + max - logits[target];
    let mut grad: Vec<T> = exps.iter().map(|e| *e / sum).collect();
    grad[target] = grad[target] - T::one();
    (loss, grad)
}

#[derive(Clone, Debug)]
pub struct NetworkTape<T> {
    stage_inputs: Vec<FeatureMap<T>>,
    blocks: Vec<Vec<BlockTape<T>>>,
    last: Vec<T>,
}

/// Forward pass that records everything needed for [`backward_from_logits`].
pub fn network_forward_taped<T: Scalar>(
    net: &Network<T>,
    image: &FeatureMap<T>,
    mode: Mode,
) -> Result<(Vec<T>, NetworkTape<T>)> {
    let mut current = net.prepare_input(image)?;
    let mut stage_inputs = Vec::with_capacity(net.stages().len());
    let mut blocks = Vec::with_capacity(net.stages().len());
    for (l, stage) in net.stages().iter().enumerate() {
        let shape = stage.shape();
        let n = shape.patches_per_side;
        let mut out = FeatureMap::zeros(n, n, shape.out_dim);
        let mut tapes = Vec::with_capacity(shape.patch_count());
        let mut patch = vec![T::zero(); shape.patch_dim];
        for p in 0..shape.patch_count() {
            extract_patch(&current, shape.patch_side, p, &mut patch);
            let (y, tape) = block_forward_taped(stage.block(), &patch, mode, l, p);
            out.data_mut()[p * shape.out_dim..(p + 1) * shape.out_dim].copy_from_slice(&y);
            tapes.push(tape);
        }
        stage_inputs.push(std::mem::replace(&mut current, out));
        blocks.push(tapes);
    }
    let last = current.into_data();
    let logits = (0..net.head().out_dim())
        .map(|i| dot(net.head().row(i), &last) + net.head().bias()[i])
        .collect();
    Ok((
        logits,
        NetworkTape {
            stage_inputs,
            blocks,
            last,
        },
    ))
}

/// Accumulates parameter gradients for `dL/dlogits` into `grads`.
pub fn backward_from_logits<T: Scalar>(
    net: &Network<T>,
    tape: &NetworkTape<T>,
    dlogits: &[T],
    grads: &mut GradientSet<T>,
) {
    let mut d_map = dense_backward(net.head(), &tape.last, dlogits, &mut grads.net.head);
    for (l, stage) in net.stages().iter().enumerate().rev() {
        let shape = stage.shape();
        let input = &tape.stage_inputs[l];
        let mut d_input = vec![T::zero(); input.data().len()];
        let n = shape.patches_per_side;
        let row_len = shape.patch_side * shape.in_channels;
        for p in 0..shape.patch_count() {
            let dy = &d_map[p * shape.out_dim..(p + 1) * shape.out_dim];
            let dpatch = block_backward(stage.block(), &tape.blocks[l][p], dy, &mut grads.net.stages[l].block);
            // inverse of the patch gather
            let (pr, pc) = (p / n, p % n);
            for (dr, src) in dpatch.chunks_exact(row_len).enumerate() {
                let start = input.index(pr * shape.patch_side + dr, pc * shape.patch_side, 0);
                for (d, s) in d_input[start..start + row_len].iter_mut().zip(src) {
                    *d = *d + *s;
                }
            }
        }
        d_map = d_input;
    }
}

/// Softmax cross-entropy loss of one sample and its parameter gradients.
pub fn network_backward<T: Scalar>(
    net: &Network<T>,
    image: &FeatureMap<T>,
    target: usize,
    mode: Mode,
) -> Result<(T, GradientSet<T>)> {
    if target >= net.num_classes() {
        return Err(Error::InvalidArgument(format!(
            "target class {target} out of range for {} classes",
            net.num_classes()
        )));
    }
    let (logits, tape) = network_forward_taped(net, image, mode)?;
    let (loss, dlogits) = softmax_cross_entropy(&logits, target);
    let mut grads = GradientSet::zeros_for(net)?;
    backward_from_logits(net, &tape, &dlogits, &mut grads);
    Ok((loss, grads))
}
