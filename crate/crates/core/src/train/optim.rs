use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::backward::GradientSet;
use crate::error::{Error, Result};
use crate::model::Network;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub warmup_epochs: usize,
    pub epochs: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            warmup_epochs: 5,
            epochs: 50,
            momentum: 0.9,
            weight_decay: 1e-5,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| {
            Err(Error::InvalidConfig {
                field: field.into(),
                reason: reason.into(),
            })
        };
        if !(self.lr >= 0.0) {
            return bad("lr", "must be >= 0");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", "must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay", "must be >= 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be >= 1");
        }
        Ok(())
    }
}

/// Linear warm-up `(s + 1) / W · lr` over the first `warmup_epochs`, then
/// half-cosine decay to zero over the remaining epochs.
pub fn lr_at(config: &TrainConfig, epoch: usize, step: usize, steps_per_epoch: usize) -> Result<f64> {
    if epoch >= config.epochs {
        return Err(Error::InvalidArgument(format!(
            "epoch {epoch} out of range for {} epochs",
            config.epochs
        )));
    }
    if steps_per_epoch == 0 || step >= steps_per_epoch {
        return Err(Error::InvalidArgument(format!(
            "step {step} out of range for {steps_per_epoch} steps per epoch"
        )));
    }
    let global = epoch * steps_per_epoch + step;
    let warmup = config.warmup_epochs.min(config.epochs) * steps_per_epoch;
    let total = config.epochs * steps_per_epoch;
    if global < warmup {
        return Ok(config.lr * (global + 1) as f64 / warmup as f64);
    }
    let progress = (global - warmup) as f64 / (total - warmup) as f64;
    Ok(config.lr * 0.5 * (1.0 + (PI * progress).cos()))
}

/// One SGD step with momentum: `v ← μ·v + g + λ·p`, `p ← p − lr·v`.
/// Weight decay applies to dense weights only.
pub fn sgd_step<T: Scalar>(
    net: &mut Network<T>,
    grads: &GradientSet<T>,
    velocity: &mut GradientSet<T>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    let (lr, mu, wd) = (T::lit(lr), T::lit(momentum), T::lit(weight_decay));
    let params = net.params_mut();
    let grads = grads.tensors();
    let velocity = velocity.tensors_mut();
    for ((p, g), v) in params.into_iter().zip(grads).zip(velocity) {
        debug_assert_eq!(p.name, g.name);
        let decay = if p.kind.decays() { wd } else { T::zero() };
        for ((pv, gv), vv) in p.data.iter_mut().zip(g.data).zip(v.data.iter_mut()) {
            *vv = mu * *vv + *gv + decay * *pv;
            *pv = *pv - lr * *vv;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NetworkConfig;

    fn sched(warmup: usize, epochs: usize) -> TrainConfig {
        TrainConfig {
            lr: 0.4,
            warmup_epochs: warmup,
            epochs,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn warmup_ramp_and_cosine_tail() {
        let c = sched(2, 10);
        assert_eq!(lr_at(&c, 0, 0, 4).unwrap(), 0.4 / 8.0);
        assert!((lr_at(&c, 1, 3, 4).unwrap() - 0.4).abs() < 1e-15);
        assert!((lr_at(&c, 2, 0, 4).unwrap() - 0.4).abs() < 1e-15);
        let last = lr_at(&c, 9, 3, 4).unwrap();
        assert!(last < 0.4 * 1e-2 && last > 0.0);
        assert!(lr_at(&c, 10, 0, 4).is_err());
        assert!(lr_at(&c, 0, 4, 4).is_err());
    }

    #[test]
    fn schedule_is_monotone_after_warmup() {
        let c = sched(1, 6);
        let values: Vec<f64> = (1..6).flat_map(|e| (0..3).map(move |s| (e, s))).map(|(e, s)| lr_at(&c, e, s, 3).unwrap()).collect();
        assert!(values.windows(2).all(|w| w[1] <= w[0]));
    }

    fn setup() -> (Network<f64>, GradientSet<f64>, GradientSet<f64>) {
        let net = Network::<f64>::build(&NetworkConfig::tiny(), 3).unwrap();
        let mut g = GradientSet::zeros_for(&net).unwrap();
        for (i, t) in g.tensors_mut().into_iter().enumerate() {
            for (j, v) in t.data.iter_mut().enumerate() {
                *v = ((i * 7 + j) % 5) as f64 * 0.01 - 0.02;
            }
        }
        let v = GradientSet::zeros_for(&net).unwrap();
        (net, g, v)
    }

    #[test]
    fn plain_gradient_descent() {
        let (mut net, g, mut v) = setup();
        let before = net.clone();
        sgd_step(&mut net, &g, &mut v, 0.5, 0.0, 0.0);
        for ((p, b), gr) in net.params().iter().zip(before.params()).zip(g.tensors()) {
            for ((x, y), z) in p.data.iter().zip(b.data).zip(gr.data) {
                assert_eq!(*x, y - 0.5 * z);
            }
        }
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let (mut net, _, mut v) = setup();
        let before = net.clone();
        let zero = GradientSet::zeros_for(&net).unwrap();
        sgd_step(&mut net, &zero, &mut v, 0.5, 0.9, 0.0);
        assert_eq!(net, before);
    }

    #[test]
    fn momentum_unrolls() {
        let (mut net, g, mut v) = setup();
        let before = net.clone();
        sgd_step(&mut net, &g, &mut v, 0.1, 0.9, 0.0);
        sgd_step(&mut net, &g, &mut v, 0.1, 0.9, 0.0);
        for ((p, b), gr) in net.params().iter().zip(before.params()).zip(g.tensors()) {
            for ((x, y), z) in p.data.iter().zip(b.data).zip(gr.data) {
                assert!((y - x - 0.1 * z * 2.9).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn weight_decay_skips_biases_and_norms() {
        let (mut net, _, mut v) = setup();
        let before = net.clone();
        let zero = GradientSet::zeros_for(&net).unwrap();
        sgd_step(&mut net, &zero, &mut v, 1.0, 0.0, 0.1);
        for (p, b) in net.params().iter().zip(before.params()) {
            let changed = p.data != b.data;
            assert_eq!(changed, p.kind.decays() && b.data.iter().any(|x| *x != 0.0), "{}", p.name);
        }
    }
}
