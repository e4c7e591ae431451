//! Event-driven local update.
//!
//! For each new frame the engine takes the per-pixel absolute difference to
//! the previously processed frame (max over channels), zeroes entries below
//! the event threshold `τ`, and average-pools the result with each stage's
//! patch side in turn. A stage-`l` patch is recomputed iff its pooled cell is
//! nonzero; every other output pixel is taken unchanged from the cache of the
//! previous frame. The cached maps are updated in place, so after a call they
//! hold exactly this frame's stage outputs.
//!
//! At `τ = 0` any change is an event and the result is bit-identical to a
//! full forward pass.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{BlockScratch, Mode, Network, StageConfig};
use crate::numerics::{avg_pool_2d, FeatureMap};
use crate::scalar::Scalar;

/// Single-channel difference `max_c |a − b|`.
pub fn diff_map<T: Scalar>(a: &FeatureMap<T>, b: &FeatureMap<T>) -> Result<FeatureMap<T>> {
    b.ensure_shape("diff_map", a.shape())?;
    let c = a.channels();
    let data = a
        .data()
        .chunks_exact(c.max(1))
        .zip(b.data().chunks_exact(c.max(1)))
        .map(|(pa, pb)| {
            pa.iter()
                .zip(pb)
                .map(|(x, y)| (*x - *y).abs())
                .fold(T::zero(), |m, v| if v > m { v } else { m })
        })
        .collect();
    FeatureMap::new(a.height(), a.width(), 1, data)
}

/// `c⁰ = d · 1{d ≥ τ}`; the comparison is inclusive.
pub fn threshold_events<T: Scalar>(d: &FeatureMap<T>, tau: T) -> Result<FeatureMap<T>> {
    if !(tau >= T::zero()) {
        return Err(Error::InvalidArgument(format!("event threshold must be >= 0, got {tau}")));
    }
    if d.channels() != 1 {
        return Err(Error::ShapeMismatch {
            context: "threshold_events",
            expected: "single-channel map".into(),
            actual: format!("{} channels", d.channels()),
        });
    }
    let data = d.data().iter().map(|v| if *v >= tau { *v } else { T::zero() }).collect();
    FeatureMap::new(d.height(), d.width(), 1, data)
}

/// `cˡ = AvgPool2D(cˡ⁻¹, Pˡ)` for every stage; entry `l` has one cell per
/// stage-`l` patch.
pub fn build_cascade<T: Scalar>(c0: &FeatureMap<T>, stages: &[StageConfig]) -> Result<Vec<FeatureMap<T>>> {
    let mut out: Vec<FeatureMap<T>> = Vec::with_capacity(stages.len());
    for s in stages {
        let next = avg_pool_2d(out.last().unwrap_or(c0), s.patch_side)?;
        out.push(next);
    }
    Ok(out)
}

/// Single-level event map at patch side `patch`: the thresholded difference
/// average-pooled once. Nonzero cells mark patches with an event.
pub fn event_map<T: Scalar>(current: &FeatureMap<T>, previous: &FeatureMap<T>, tau: T, patch: usize) -> Result<FeatureMap<T>> {
    let c0 = threshold_events(&diff_map(current, previous)?, tau)?;
    avg_pool_2d(&c0, patch)
}

/// Intermediate maps of one event computation.
#[derive(Clone, Debug, PartialEq)]
pub struct EventState<T> {
    pub tau: T,
    pub diff: FeatureMap<T>,
    pub c0: FeatureMap<T>,
    pub cascade: Vec<FeatureMap<T>>,
}

impl<T: Scalar> EventState<T> {
    pub fn compute(current: &FeatureMap<T>, previous: &FeatureMap<T>, stages: &[StageConfig], tau: T) -> Result<Self> {
        let diff = diff_map(current, previous)?;
        let c0 = threshold_events(&diff, tau)?;
        let cascade = build_cascade(&c0, stages)?;
        Ok(Self { tau, diff, c0, cascade })
    }

    /// Nonzero cells per cascade level.
    pub fn event_counts(&self) -> Vec<usize> {
        self.cascade.iter().map(nonzero_cells).collect()
    }

    /// Scalar operations spent building the event maps for a frame with
    /// `channels` channels (informational; never part of MAC totals).
    pub fn overhead_ops(&self, channels: usize) -> u64 {
        let pixels = (self.diff.height() * self.diff.width()) as u64;
        let pooled: u64 = std::iter::once(&self.c0)
            .chain(self.cascade.iter())
            .take(self.cascade.len())
            .map(|m| (m.height() * m.width()) as u64)
            .sum();
        pixels * channels as u64 + pixels + pooled
    }
}

pub fn nonzero_cells<T: Scalar>(map: &FeatureMap<T>) -> usize {
    map.data().iter().filter(|v| **v != T::zero()).count()
}

/// Stage outputs of the previously processed frame, plus that frame and its
/// logits. Only a cache produced by [`init_cache`] is valid.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureCache<T> {
    frame: Option<FeatureMap<T>>,
    stage_outputs: Vec<FeatureMap<T>>,
    logits: Vec<T>,
}

impl<T: Scalar> FeatureCache<T> {
    pub fn empty() -> Self {
        Self {
            frame: None,
            stage_outputs: Vec::new(),
            logits: Vec::new(),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.frame.is_some()
    }

    pub fn invalidate(&mut self) {
        *self = Self::empty();
    }

    /// The previously processed raw frame.
    pub fn frame(&self) -> Option<&FeatureMap<T>> {
        self.frame.as_ref()
    }

    /// Output map of each stage for the previous frame.
    pub fn stage_outputs(&self) -> &[FeatureMap<T>] {
        &self.stage_outputs
    }

    pub fn logits(&self) -> &[T] {
        &self.logits
    }
}

/// Work done for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameStats<T> {
    pub events_per_stage: Vec<usize>,
    pub patches_per_stage: Vec<usize>,
    pub macs_per_stage: Vec<u64>,
    pub head_recomputed: bool,
    pub head_macs: u64,
    pub total_macs: u64,
    /// Cost of building the event maps; not part of `total_macs`.
    pub event_map_ops: u64,
    pub logits: Vec<T>,
}

impl<T: Scalar> FrameStats<T> {
    pub fn top1(&self) -> usize {
        crate::model::argmax(&self.logits)
    }
}

/// Full pass over the first frame; every patch counts as an event.
pub fn init_cache<T: Scalar>(net: &Network<T>, frame: &FeatureMap<T>) -> Result<(FeatureCache<T>, FrameStats<T>)> {
    let (stage_outputs, logits) = net.forward_all(frame, Mode::Inference)?;
    let patches: Vec<usize> = net.stages().iter().map(|s| s.shape().patch_count()).collect();
    let macs_per_stage: Vec<u64> = net
        .stages()
        .iter()
        .map(|s| s.shape().patch_count() as u64 * s.block().macs_per_patch())
        .collect();
    let head_macs = net.head().macs();
    let stats = FrameStats {
        events_per_stage: patches.clone(),
        patches_per_stage: patches,
        total_macs: macs_per_stage.iter().sum::<u64>() + head_macs,
        macs_per_stage,
        head_recomputed: true,
        head_macs,
        event_map_ops: 0,
        logits: logits.clone(),
    };
    let cache = FeatureCache {
        frame: Some(frame.clone()),
        stage_outputs,
        logits,
    };
    Ok((cache, stats))
}

/// Processes `frame` against a valid cache, recomputing only event patches.
pub fn event_forward<T: Scalar>(
    net: &Network<T>,
    frame: &FeatureMap<T>,
    cache: &mut FeatureCache<T>,
    tau: T,
) -> Result<(Vec<T>, FrameStats<T>)> {
    let previous = cache.frame.as_ref().ok_or(Error::InvalidCache)?;
    frame.ensure_shape("event_forward frame", net.input_shape())?;
    if cache.stage_outputs.len() != net.stages().len()
        || cache.stage_outputs.iter().zip(net.stages()).any(|(m, s)| m.shape() != s.output_shape())
    {
        return Err(Error::InvalidCache);
    }
    let state = EventState::compute(frame, previous, &net.config().stages, tau)?;
    let input = net.prepare_input(frame)?;

    let n_stages = net.stages().len();
    let mut events_per_stage = Vec::with_capacity(n_stages);
    let mut macs_per_stage = Vec::with_capacity(n_stages);
    for (l, stage) in net.stages().iter().enumerate() {
        let cells = &state.cascade[l];
        let (before, rest) = cache.stage_outputs.split_at_mut(l);
        let source = if l == 0 { &input } else { &before[l - 1] };
        let target = &mut rest[0];

        let events = nonzero_cells(cells);
        if events > 0 {
            let c_out = stage.shape().out_dim;
            target
                .data_mut()
                .par_chunks_mut(c_out)
                .enumerate()
                .filter(|(p, _)| cells.data()[*p] != T::zero())
                .for_each_init(BlockScratch::default, |scratch, (p, dst)| {
                    stage.forward_patch(source, p, dst, Mode::Inference, l, scratch)
                });
        }
        events_per_stage.push(events);
        macs_per_stage.push(events as u64 * stage.block().macs_per_patch());
    }

    let head_recomputed = events_per_stage.last().is_some_and(|e| *e > 0);
    if head_recomputed {
        let last = cache.stage_outputs.last().expect("at least one stage");
        cache.logits = net.head_forward(last);
    }
    cache.frame = Some(frame.clone());

    let head_macs = if head_recomputed { net.head().macs() } else { 0 };
    let stats = FrameStats {
        patches_per_stage: net.stages().iter().map(|s| s.shape().patch_count()).collect(),
        total_macs: macs_per_stage.iter().sum::<u64>() + head_macs,
        events_per_stage,
        macs_per_stage,
        head_recomputed,
        head_macs,
        event_map_ops: state.overhead_ops(frame.channels()),
        logits: cache.logits.clone(),
    };
    Ok((cache.logits.clone(), stats))
}

/// Owns a cache and applies the first-frame policy: the first frame gets a
/// full pass, later frames go through [`event_forward`].
#[derive(Debug)]
pub struct EventProcessor<'a, T> {
    net: &'a Network<T>,
    cache: FeatureCache<T>,
    tau: T,
}

impl<'a, T: Scalar> EventProcessor<'a, T> {
    pub fn new(net: &'a Network<T>, tau: T) -> Result<Self> {
        if !(tau >= T::zero()) {
            return Err(Error::InvalidArgument(format!("event threshold must be >= 0, got {tau}")));
        }
        Ok(Self {
            net,
            cache: FeatureCache::empty(),
            tau,
        })
    }

    pub fn process(&mut self, frame: &FeatureMap<T>) -> Result<FrameStats<T>> {
        if self.cache.is_valid() {
            event_forward(self.net, frame, &mut self.cache, self.tau).map(|(_, stats)| stats)
        } else {
            let (cache, stats) = init_cache(self.net, frame)?;
            self.cache = cache;
            Ok(stats)
        }
    }

    pub fn cache(&self) -> &FeatureCache<T> {
        &self.cache
    }

    pub fn reset(&mut self) {
        self.cache.invalidate();
    }
}
