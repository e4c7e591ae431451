use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{gelu, DenseLayer, LayerNormParams};
use crate::scalar::Scalar;

/// Forward-pass mode. Dropout is active only in training mode, where masks are
/// a pure function of the seed and the (stage, patch, bottleneck) position.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Inference,
    Training { seed: u64 },
}

/// Position of a bottleneck application; keys the dropout stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct SiteKey {
    pub stage: usize,
    pub patch: usize,
    pub bottleneck: usize,
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Keep-mask for one dropout site: `true` where the feature survives.
pub fn dropout_mask(seed: u64, site: SiteKey, len: usize, p: f64) -> Vec<bool> {
    let key = mix(mix(mix(seed) ^ site.stage as u64) ^ site.patch as u64) ^ site.bottleneck as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(mix(key));
    (0..len).map(|_| rng.gen::<f64>() >= p).collect()
}

/// Expand by `α`, GELU, (dropout), project back, residual add, LayerNorm.
#[derive(Clone, Debug, PartialEq)]
pub struct InvertedResidualBottleneck<T> {
    pub(crate) expand: DenseLayer<T>,
    pub(crate) project: DenseLayer<T>,
    pub(crate) norm: LayerNormParams<T>,
    pub(crate) dropout_p: f64,
}

impl<T: Scalar> InvertedResidualBottleneck<T> {
    pub fn new(
        expand: DenseLayer<T>,
        project: DenseLayer<T>,
        norm: LayerNormParams<T>,
        dropout_p: f64,
    ) -> Result<Self> {
        let d_in = expand.in_dim();
        if project.in_dim() != expand.out_dim() || project.out_dim() != d_in || norm.dim() != d_in {
            return Err(Error::ShapeMismatch {
                context: "bottleneck",
                expected: format!("{d_in} -> {} -> {d_in}, norm {d_in}", expand.out_dim()),
                actual: format!(
                    "{} -> {} / {} -> {}, norm {}",
                    expand.in_dim(),
                    expand.out_dim(),
                    project.in_dim(),
                    project.out_dim(),
                    norm.dim()
                ),
            });
        }
        if !(0.0..1.0).contains(&dropout_p) {
            return Err(Error::InvalidArgument(format!("dropout {dropout_p} outside [0, 1)")));
        }
        Ok(Self {
            expand,
            project,
            norm,
            dropout_p,
        })
    }

    pub fn d_in(&self) -> usize {
        self.expand.in_dim()
    }

    pub fn d_hidden(&self) -> usize {
        self.expand.out_dim()
    }

    pub fn expand(&self) -> &DenseLayer<T> {
        &self.expand
    }

    pub fn project(&self) -> &DenseLayer<T> {
        &self.project
    }

    pub fn norm(&self) -> &LayerNormParams<T> {
        &self.norm
    }

    pub fn dropout_p(&self) -> f64 {
        self.dropout_p
    }

    pub fn macs(&self) -> u64 {
        self.expand.macs() + self.project.macs()
    }

    pub fn param_count(&self) -> u64 {
        self.expand.param_count() + self.project.param_count() + self.norm.param_count()
    }

    pub fn forward(&self, x: &[T], mode: Mode) -> Result<Vec<T>> {
        self.expand.check_input("bottleneck input", x.len())?;
        let mut y = x.to_vec();
        let mut scratch = BlockScratch::default();
        self.forward_in_place(&mut y, mode, SiteKey::default(), &mut scratch);
        Ok(y)
    }

    pub(crate) fn forward_in_place(&self, x: &mut [T], mode: Mode, site: SiteKey, s: &mut BlockScratch<T>) {
        s.hidden.resize(self.d_hidden(), T::zero());
        s.residual.resize(self.d_in(), T::zero());
        self.expand.forward_into(x, &mut s.hidden);
        for h in s.hidden.iter_mut() {
            *h = gelu(*h);
        }
        if let Mode::Training { seed } = mode {
            if self.dropout_p > 0.0 {
                let keep = dropout_mask(seed, site, self.d_hidden(), self.dropout_p);
                let scale = T::lit(1.0 / (1.0 - self.dropout_p));
                for (h, k) in s.hidden.iter_mut().zip(keep) {
                    *h = if k { *h * scale } else { T::zero() };
                }
            }
        }
        self.project.forward_into(&s.hidden, &mut s.residual);
        for (v, r) in x.iter_mut().zip(&s.residual) {
            *v = *v + *r;
        }
        self.norm.forward_in_place(x);
    }

    pub fn cast<U: Scalar>(&self) -> InvertedResidualBottleneck<U> {
        InvertedResidualBottleneck {
            expand: self.expand.cast(),
            project: self.project.cast(),
            norm: self.norm.cast(),
            dropout_p: self.dropout_p,
        }
    }
}

/// Reusable buffers for evaluating a block on many patches.
#[derive(Clone, Debug, Default)]
pub struct BlockScratch<T> {
    pub(crate) patch: Vec<T>,
    hidden: Vec<T>,
    residual: Vec<T>,
}

/// Mixing dense layer `C_in → C_out` followed by `n` bottlenecks.
#[derive(Clone, Debug, PartialEq)]
pub struct BuildingBlock<T> {
    pub(crate) mixer: DenseLayer<T>,
    pub(crate) bottlenecks: Vec<InvertedResidualBottleneck<T>>,
}

impl<T: Scalar> BuildingBlock<T> {
    pub fn new(mixer: DenseLayer<T>, bottlenecks: Vec<InvertedResidualBottleneck<T>>) -> Result<Self> {
        if let Some(i) = bottlenecks.iter().position(|b| b.d_in() != mixer.out_dim()) {
            return Err(Error::DimensionMismatch {
                context: "bottleneck width vs mixer output",
                expected: mixer.out_dim(),
                actual: bottlenecks[i].d_in(),
            });
        }
        Ok(Self { mixer, bottlenecks })
    }

    pub fn in_dim(&self) -> usize {
        self.mixer.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.mixer.out_dim()
    }

    pub fn mixer(&self) -> &DenseLayer<T> {
        &self.mixer
    }

    pub fn bottlenecks(&self) -> &[InvertedResidualBottleneck<T>] {
        &self.bottlenecks
    }

    /// Dense MACs for one patch, measured from the instantiated layers.
    pub fn macs_per_patch(&self) -> u64 {
        self.mixer.macs() + self.bottlenecks.iter().map(|b| b.macs()).sum::<u64>()
    }

    pub fn param_count(&self) -> u64 {
        self.mixer.param_count() + self.bottlenecks.iter().map(|b| b.param_count()).sum::<u64>()
    }

    pub fn forward(&self, patch: &[T], mode: Mode) -> Result<Vec<T>> {
        self.mixer.check_input("block input", patch.len())?;
        let mut out = vec![T::zero(); self.out_dim()];
        self.forward_into(patch, &mut out, mode, 0, 0, &mut BlockScratch::default());
        Ok(out)
    }

    pub(crate) fn forward_into(
        &self,
        patch: &[T],
        out: &mut [T],
        mode: Mode,
        stage: usize,
        patch_index: usize,
        scratch: &mut BlockScratch<T>,
    ) {
        self.mixer.forward_into(patch, out);
        for (i, b) in self.bottlenecks.iter().enumerate() {
            let site = SiteKey {
                stage,
                patch: patch_index,
                bottleneck: i,
            };
            b.forward_in_place(out, mode, site, scratch);
        }
    }

    pub fn cast<U: Scalar>(&self) -> BuildingBlock<U> {
        BuildingBlock {
            mixer: self.mixer.cast(),
            bottlenecks: self.bottlenecks.iter().map(|b| b.cast()).collect(),
        }
    }
}

pub fn bottleneck_forward<T: Scalar>(b: &InvertedResidualBottleneck<T>, x: &[T], mode: Mode) -> Result<Vec<T>> {
    b.forward(x, mode)
}

pub fn block_forward<T: Scalar>(blk: &BuildingBlock<T>, patch: &[T], mode: Mode) -> Result<Vec<T>> {
    blk.forward(patch, mode)
}
