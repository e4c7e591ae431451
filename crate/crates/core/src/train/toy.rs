use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::backward::{network_backward, softmax_cross_entropy, GradientSet};
use super::optim::{lr_at, sgd_step, TrainConfig};
use crate::error::{Error, Result};
use crate::io::FrameSource;
use crate::model::{argmax, Mode, Network, NetworkConfig};
use crate::numerics::FeatureMap;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub samples: Vec<(FeatureMap<T>, usize)>,
}

impl<T: Scalar> Dataset<T> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.samples.iter().map(|(_, y)| y + 1).max().unwrap_or(0)
    }

    /// Loads `root/<class>/<image>` trees; classes are subdirectories in
    /// bytewise name order.
    pub fn from_directory(root: &Path, side: usize) -> Result<Self> {
        let mut classes: Vec<_> = std::fs::read_dir(root)
            .map_err(|e| Error::io(root, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        classes.sort_by(|a, b| a.as_os_str().as_encoded_bytes().cmp(b.as_os_str().as_encoded_bytes()));
        let mut samples = Vec::new();
        for (label, dir) in classes.iter().enumerate() {
            let source = FrameSource::directory(dir)?;
            for i in 0..source.len() {
                samples.push((source.load_frame(i, side)?, label));
            }
        }
        Ok(Self { samples })
    }
}

/// Linearly separable images: the image is cut into `num_classes` vertical
/// bands and class `c` is brighter in band `c`. Background is uniform noise
/// in `[0, 0.4)`; the class band adds 0.5.
pub fn separable_toy<T: Scalar>(config: &NetworkConfig, per_class: usize, seed: u64) -> Result<Dataset<T>> {
    let (side, ch, k) = (config.input_side, config.input_channels, config.num_classes);
    if side < k {
        return Err(Error::InvalidArgument(format!(
            "input side {side} too small for {k} class bands"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(per_class * k);
    for i in 0..per_class * k {
        let label = i % k;
        let img = FeatureMap::from_fn(side, side, ch, |_, c, _| {
            let band = c * k / side;
            let bump = if band == label { 0.5 } else { 0.0 };
            T::lit(rng.gen::<f64>() * 0.4 + bump)
        });
        samples.push((img, label));
    }
    Ok(Dataset { samples })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub accuracy: f64,
}

/// Mean inference-mode loss and accuracy over a dataset.
pub fn evaluate<T: Scalar>(net: &Network<T>, data: &Dataset<T>) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (img, label) in &data.samples {
        let logits = net.forward(img, Mode::Inference)?;
        loss += softmax_cross_entropy(&logits, *label).0.as_f64();
        correct += usize::from(argmax(&logits) == *label);
    }
    let n = data.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

fn sample_seed(seed: u64, step: usize, index: usize) -> u64 {
    seed ^ (step as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (index as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f)
}

/// Mini-batch SGD over `data`. Each epoch shuffles from the seed, steps with
/// the scheduled learning rate, then records inference-mode loss and
/// accuracy over the whole set.
pub fn train_toy<T: Scalar>(net: &mut Network<T>, data: &Dataset<T>, config: &TrainConfig) -> Result<Vec<EpochRecord>> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("training dataset is empty".into()));
    }
    if data.num_classes() > net.num_classes() {
        return Err(Error::InvalidArgument(format!(
            "dataset has {} classes but the network outputs {}",
            data.num_classes(),
            net.num_classes()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut velocity = GradientSet::zeros_for(net)?;
    let steps_per_epoch = data.len().div_ceil(config.batch_size);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut lr = 0.0;
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            lr = lr_at(config, epoch, step, steps_per_epoch)?;
            let global = epoch * steps_per_epoch + step;
            let net_ref = &*net;
            let per_sample = batch
                .par_iter()
                .map(|&i| {
                    let (img, label) = &data.samples[i];
                    let mode = Mode::Training {
                        seed: sample_seed(config.seed, global, i),
                    };
                    network_backward(net_ref, img, *label, mode)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut grads = GradientSet::zeros_for(net)?;
            let scale = T::lit(1.0 / batch.len() as f64);
            for (loss, g) in &per_sample {
                if !loss.is_finite() {
                    return Err(Error::Diverged { epoch });
                }
                grads.add_scaled(g, scale);
            }
            sgd_step(net, &grads, &mut velocity, lr, config.momentum, config.weight_decay);
        }
        let (loss, accuracy) = evaluate(net, data)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        log.push(EpochRecord {
            epoch,
            lr,
            loss,
            accuracy,
        });
    }
    Ok(log)
}
