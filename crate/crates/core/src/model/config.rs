use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::DEFAULT_EPSILON;

/// One row of the network table: a building block applied per patch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    /// Patch side `P` in pixels of the incoming map.
    pub patch_side: usize,
    /// Bottleneck expansion factor `α`.
    pub expansion: f64,
    /// Output channels `C_out`.
    pub out_dim: usize,
    /// Number of inverted residual bottlenecks `n`.
    pub bottlenecks: usize,
    /// Dropout probability after each GELU (training only).
    #[serde(default)]
    pub dropout: f64,
}

impl StageConfig {
    pub fn new(patch_side: usize, expansion: f64, out_dim: usize, bottlenecks: usize, dropout: f64) -> Self {
        Self {
            patch_side,
            expansion,
            out_dim,
            bottlenecks,
            dropout,
        }
    }
}

/// Per-channel input normalization applied to network inputs only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub input_side: usize,
    pub input_channels: usize,
    pub num_classes: usize,
    pub stages: Vec<StageConfig>,
    #[serde(default = "default_epsilon")]
    pub layer_norm_eps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<Normalization>,
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

/// Resolved geometry of one stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageShape {
    /// Side of the incoming map.
    pub in_side: usize,
    pub in_channels: usize,
    pub patch_side: usize,
    /// Patches per side `N = in_side / P`; also the output map side.
    pub patches_per_side: usize,
    /// Flattened patch length `C_in = P·P·in_channels`.
    pub patch_dim: usize,
    pub out_dim: usize,
    /// Bottleneck hidden width `C_out·α`.
    pub hidden_dim: usize,
    pub bottlenecks: usize,
}

impl StageShape {
    pub fn patch_count(&self) -> usize {
        self.patches_per_side * self.patches_per_side
    }

    pub fn mixer_macs_per_patch(&self) -> u64 {
        (self.patch_dim * self.out_dim) as u64
    }

    pub fn bottleneck_macs_per_patch(&self) -> u64 {
        (self.bottlenecks * 2 * self.out_dim * self.hidden_dim) as u64
    }

    pub fn macs_per_patch(&self) -> u64 {
        self.mixer_macs_per_patch() + self.bottleneck_macs_per_patch()
    }
}

impl NetworkConfig {
    /// The six-stage ImageNet configuration (224² RGB input).
    pub fn table1(num_classes: usize) -> Self {
        let mut stages = vec![StageConfig::new(7, 4.0, 64, 5, 0.0), StageConfig::new(2, 4.0, 128, 5, 0.0)];
        stages.extend((0..3).map(|_| StageConfig::new(2, 4.0, 512, 5, 0.0)));
        stages.push(StageConfig::new(2, 4.0, 512, 5, 0.2));
        Self {
            id: Some("evmlp-t1".into()),
            input_side: 224,
            input_channels: 3,
            num_classes,
            stages,
            layer_norm_eps: DEFAULT_EPSILON,
            normalization: None,
        }
    }

    /// Two-stage 8×8 RGB network used for gradient checks and toy training.
    pub fn tiny() -> Self {
        Self {
            id: Some("evmlp-tiny".into()),
            input_side: 8,
            input_channels: 3,
            num_classes: 2,
            stages: vec![StageConfig::new(4, 2.0, 6, 1, 0.0), StageConfig::new(2, 2.0, 8, 1, 0.25)],
            layer_norm_eps: DEFAULT_EPSILON,
            normalization: None,
        }
    }

    pub fn id_or_default(&self) -> &str {
        self.id.as_deref().unwrap_or("custom")
    }

    /// Validates every invariant and resolves the shape chain.
    pub fn stage_shapes(&self) -> Result<Vec<StageShape>> {
        let field = |f: &str, reason: String| Error::InvalidConfig {
            field: f.to_string(),
            reason,
        };
        if self.input_side == 0 {
            return Err(field("input_side", "must be >= 1".into()));
        }
        if self.input_channels == 0 {
            return Err(field("input_channels", "must be >= 1".into()));
        }
        if self.num_classes == 0 {
            return Err(field("num_classes", "must be >= 1".into()));
        }
        if self.stages.is_empty() {
            return Err(field("stages", "at least one stage is required".into()));
        }
        if !(self.layer_norm_eps > 0.0) {
            return Err(field("layer_norm_eps", "must be positive".into()));
        }
        if let Some(norm) = &self.normalization {
            if norm.mean.len() != self.input_channels || norm.std.len() != self.input_channels {
                return Err(field(
                    "normalization",
                    format!("mean/std must have {} entries", self.input_channels),
                ));
            }
            if norm.std.iter().any(|s| !(*s > 0.0)) {
                return Err(field("normalization.std", "entries must be positive".into()));
            }
        }

        let mut shapes = Vec::with_capacity(self.stages.len());
        let (mut side, mut channels) = (self.input_side, self.input_channels);
        for (i, s) in self.stages.iter().enumerate() {
            let stage = i + 1;
            let path = |f: &str| format!("stages[{i}].{f}");
            if s.patch_side == 0 {
                return Err(field(&path("patch_side"), "must be >= 1".into()));
            }
            if !(s.expansion >= 1.0) || !s.expansion.is_finite() {
                return Err(field(&path("expansion"), format!("must be >= 1, got {}", s.expansion)));
            }
            if s.out_dim == 0 {
                return Err(field(&path("out_dim"), "must be >= 1".into()));
            }
            if !(0.0..1.0).contains(&s.dropout) {
                return Err(field(&path("dropout"), format!("must lie in [0, 1), got {}", s.dropout)));
            }
            let hidden = s.out_dim as f64 * s.expansion;
            if hidden.fract() != 0.0 {
                return Err(field(
                    &path("expansion"),
                    format!("out_dim * expansion = {hidden} is not an integer"),
                ));
            }
            if side % s.patch_side != 0 {
                return Err(Error::stage(
                    stage,
                    format!("patch side {} does not divide incoming map side {side}", s.patch_side),
                ));
            }
            let shape = StageShape {
                in_side: side,
                in_channels: channels,
                patch_side: s.patch_side,
                patches_per_side: side / s.patch_side,
                patch_dim: s.patch_side * s.patch_side * channels,
                out_dim: s.out_dim,
                hidden_dim: hidden as usize,
                bottlenecks: s.bottlenecks,
            };
            side = shape.patches_per_side;
            channels = s.out_dim;
            shapes.push(shape);
        }
        if side != 1 {
            return Err(Error::stage(
                self.stages.len(),
                format!("final stage emits a {side}x{side} map; the classifier head needs 1x1"),
            ));
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        self.stage_shapes().map(|_| ())
    }

    /// Channels of the final 1×1 map.
    pub fn final_dim(&self) -> usize {
        self.stages.last().map_or(self.input_channels, |s| s.out_dim)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: Self = serde_path_to_error::deserialize(de).map_err(|e| Error::InvalidConfig {
            field: e.path().to_string(),
            reason: e.inner().to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
