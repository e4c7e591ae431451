//! Closed-form MAC/parameter accounting and per-sequence cost reports.
//!
//! Only dense-layer multiply-accumulates are counted (`in_dim · out_dim` per
//! application); bias adds, GELU, LayerNorm, pooling and event-map
//! construction are excluded. All counts are exact `u64`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::FrameStats;
use crate::model::{NetworkConfig, ParamCount};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageMacs {
    pub patches: u64,
    /// Mixer MACs summed over all patches.
    pub mixer_macs: u64,
    /// Bottleneck MACs summed over all patches.
    pub bottleneck_macs: u64,
    pub macs_per_patch: u64,
    pub total: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacBreakdown {
    pub stages: Vec<StageMacs>,
    pub head_macs: u64,
    pub total: u64,
}

pub fn analytic_macs(config: &NetworkConfig) -> Result<MacBreakdown> {
    let shapes = config.stage_shapes()?;
    let stages: Vec<StageMacs> = shapes
        .iter()
        .map(|s| {
            let patches = s.patch_count() as u64;
            StageMacs {
                patches,
                mixer_macs: patches * s.mixer_macs_per_patch(),
                bottleneck_macs: patches * s.bottleneck_macs_per_patch(),
                macs_per_patch: s.macs_per_patch(),
                total: patches * s.macs_per_patch(),
            }
        })
        .collect();
    let head_macs = (config.final_dim() * config.num_classes) as u64;
    Ok(MacBreakdown {
        total: stages.iter().map(|s| s.total).sum::<u64>() + head_macs,
        stages,
        head_macs,
    })
}

/// Parameter count from the config alone (weights, biases, gamma, beta).
pub fn analytic_params(config: &NetworkConfig) -> Result<ParamCount> {
    let shapes = config.stage_shapes()?;
    let dense = |i: usize, o: usize| (i * o + o) as u64;
    let per_stage: Vec<u64> = shapes
        .iter()
        .map(|s| {
            let bottleneck = dense(s.out_dim, s.hidden_dim) + dense(s.hidden_dim, s.out_dim) + 2 * s.out_dim as u64;
            dense(s.patch_dim, s.out_dim) + s.bottlenecks as u64 * bottleneck
        })
        .collect();
    let head = dense(config.final_dim(), config.num_classes);
    Ok(ParamCount {
        total: per_stage.iter().sum::<u64>() + head,
        per_stage,
        head,
    })
}

/// MACs of an event-driven frame with the given per-stage event counts; the
/// head is charged iff the final stage has an event.
pub fn predict_event_macs(config: &NetworkConfig, event_counts: &[usize]) -> Result<u64> {
    let breakdown = analytic_macs(config)?;
    if event_counts.len() != breakdown.stages.len() {
        return Err(Error::DimensionMismatch {
            context: "event counts per stage",
            expected: breakdown.stages.len(),
            actual: event_counts.len(),
        });
    }
    let mut total = 0u64;
    for (i, (stage, &events)) in breakdown.stages.iter().zip(event_counts).enumerate() {
        if events as u64 > stage.patches {
            return Err(Error::stage(
                i + 1,
                format!("{events} events exceed the {} patches of the stage", stage.patches),
            ));
        }
        total += events as u64 * stage.macs_per_patch;
    }
    if event_counts.last().is_some_and(|e| *e > 0) {
        total += breakdown.head_macs;
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub index: usize,
    pub macs: u64,
    pub events_per_stage: Vec<usize>,
    pub top1: usize,
    /// FNV-1a fingerprint of the logits' `f32` bit patterns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits_digest: Option<String>,
}

pub const INIT_FRAME_POLICY: &str = "first frame is a full pass, reported as init_macs and excluded from the mean";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub config_id: String,
    /// `None` for the full-recompute baseline.
    pub tau: Option<f64>,
    pub frames: usize,
    pub init_macs: u64,
    /// Exact MAC sum over frames after the first.
    pub macs_after_init: u64,
    pub mean_macs_per_frame: f64,
    pub baseline_macs_per_frame: u64,
    pub reduction: f64,
    pub match_rate: Option<f64>,
    pub init_frame_policy: String,
    pub per_frame: Vec<FrameRecord>,
}

impl SequenceReport {
    pub fn top1(&self) -> Vec<usize> {
        self.per_frame.iter().map(|f| f.top1).collect()
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn logits_digest<T: Scalar>(logits: &[T]) -> String {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for v in logits {
        for byte in v.as_f32().to_bits().to_le_bytes() {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(0x0100_0000_01b3);
        }
    }
    format!("{hash:016x}")
}

/// Folds per-frame stats into a report. The mean excludes the first frame
/// unless it is the only one.
pub fn aggregate_sequence<T: Scalar>(
    config_id: &str,
    tau: Option<f64>,
    stats: &[FrameStats<T>],
    baseline: &MacBreakdown,
    ground_truth_top1: Option<&[usize]>,
) -> Result<SequenceReport> {
    let first = stats
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot aggregate an empty sequence".into()))?;
    if let Some(gt) = ground_truth_top1 {
        if gt.len() != stats.len() {
            return Err(Error::DimensionMismatch {
                context: "ground truth frames",
                expected: stats.len(),
                actual: gt.len(),
            });
        }
    }
    let per_frame: Vec<FrameRecord> = stats
        .iter()
        .enumerate()
        .map(|(index, s)| FrameRecord {
            index,
            macs: s.total_macs,
            events_per_stage: s.events_per_stage.clone(),
            top1: s.top1(),
            logits_digest: Some(logits_digest(&s.logits)),
        })
        .collect();
    let macs_after_init: u64 = stats.iter().skip(1).map(|s| s.total_macs).sum();
    let mean = if stats.len() > 1 {
        macs_after_init as f64 / (stats.len() - 1) as f64
    } else {
        first.total_macs as f64
    };
    let match_rate = ground_truth_top1.map(|gt| {
        let hits = per_frame.iter().zip(gt).filter(|(f, g)| f.top1 == **g).count();
        hits as f64 / stats.len() as f64
    });
    Ok(SequenceReport {
        config_id: config_id.to_string(),
        tau,
        frames: stats.len(),
        init_macs: first.total_macs,
        macs_after_init,
        mean_macs_per_frame: mean,
        baseline_macs_per_frame: baseline.total,
        reduction: 1.0 - mean / baseline.total as f64,
        match_rate,
        init_frame_policy: INIT_FRAME_POLICY.to_string(),
        per_frame,
    })
}
