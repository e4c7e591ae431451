//! Finite-difference checks of the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backward::{
    bottleneck_backward, bottleneck_forward_taped, dense_backward, layer_norm_backward, layer_norm_forward_taped,
    network_backward, softmax_cross_entropy,
};
use crate::error::Result;
use crate::model::{InvertedResidualBottleneck, Mode, Network, NetworkConfig, SiteKey};
use crate::numerics::{gelu, gelu_derivative, DenseLayer, FeatureMap, LayerNormParams};

pub const STEP: f64 = 1e-5;
pub const THRESHOLD: f64 = 1e-4;
/// Below this magnitude both values are compared absolutely.
pub const ABS_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckEntry {
    pub layer: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub step: f64,
    pub threshold: f64,
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < ABS_FLOOR {
        (analytic - numeric).abs()
    } else {
        (analytic - numeric).abs() / scale
    }
}

#[derive(Default)]
struct Tracker {
    checked: usize,
    worst: f64,
}

impl Tracker {
    fn add(&mut self, analytic: f64, numeric: f64) {
        self.checked += 1;
        self.worst = self.worst.max(relative_error(analytic, numeric));
    }

    fn entry(self, layer: &str) -> GradCheckEntry {
        GradCheckEntry {
            layer: layer.into(),
            checked: self.checked,
            max_rel_error: self.worst,
            passed: self.worst < THRESHOLD,
        }
    }
}

fn central<F: FnMut(f64) -> f64>(x: f64, mut f: F) -> f64 {
    (f(x + STEP) - f(x - STEP)) / (2.0 * STEP)
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn weighted(y: &[f64], w: &[f64]) -> f64 {
    y.iter().zip(w).map(|(a, b)| a * b).sum()
}

fn random_dense(rng: &mut ChaCha8Rng, inp: usize, out: usize) -> DenseLayer<f64> {
    DenseLayer::new(inp, out, random_vec(rng, inp * out), random_vec(rng, out)).expect("valid shape")
}

fn check_dense(rng: &mut ChaCha8Rng) -> GradCheckEntry {
    let (inp, out) = (5, 4);
    let mut layer = random_dense(rng, inp, out);
    let x = random_vec(rng, inp);
    let w = random_vec(rng, out);
    let mut grad = DenseLayer::zeros(inp, out);
    let dx = dense_backward(&layer, &x, &w, &mut grad);
    let loss = |l: &DenseLayer<f64>, x: &[f64]| weighted(&l.forward(x).expect("shape"), &w);
    let mut t = Tracker::default();
    for i in 0..x.len() {
        let mut xp = x.clone();
        let n = central(x[i], |v| {
            xp[i] = v;
            loss(&layer, &xp)
        });
        t.add(dx[i], n);
    }
    for i in 0..inp * out {
        let orig = layer.weights[i];
        let n = central(orig, |v| {
            layer.weights[i] = v;
            loss(&layer, &x)
        });
        layer.weights[i] = orig;
        t.add(grad.weights[i], n);
    }
    for i in 0..out {
        let orig = layer.bias[i];
        let n = central(orig, |v| {
            layer.bias[i] = v;
            loss(&layer, &x)
        });
        layer.bias[i] = orig;
        t.add(grad.bias[i], n);
    }
    t.entry("dense")
}

fn check_gelu(rng: &mut ChaCha8Rng) -> GradCheckEntry {
    let mut t = Tracker::default();
    for _ in 0..64 {
        let x = rng.gen_range(-4.0..4.0);
        t.add(gelu_derivative(x), central(x, gelu));
    }
    t.entry("gelu")
}

fn check_layer_norm(rng: &mut ChaCha8Rng) -> GradCheckEntry {
    let d = 6;
    let mut p = LayerNormParams::new(random_vec(rng, d), random_vec(rng, d), 1e-5).expect("valid");
    let x = random_vec(rng, d);
    let w = random_vec(rng, d);
    let mut grad = LayerNormParams::new(vec![0.0; d], vec![0.0; d], 1e-5).expect("valid");
    let (_, tape) = layer_norm_forward_taped(&p, &x);
    let dx = layer_norm_backward(&p, &tape, &w, &mut grad);
    let loss = |p: &LayerNormParams<f64>, x: &[f64]| weighted(&layer_norm_forward_taped(p, x).0, &w);
    let mut t = Tracker::default();
    for i in 0..d {
        let mut xp = x.clone();
        let n = central(x[i], |v| {
            xp[i] = v;
            loss(&p, &xp)
        });
        t.add(dx[i], n);
    }
    for i in 0..d {
        let orig = p.gamma[i];
        let n = central(orig, |v| {
            p.gamma[i] = v;
            loss(&p, &x)
        });
        p.gamma[i] = orig;
        t.add(grad.gamma[i], n);
        let orig = p.beta[i];
        let n = central(orig, |v| {
            p.beta[i] = v;
            loss(&p, &x)
        });
        p.beta[i] = orig;
        t.add(grad.beta[i], n);
    }
    t.entry("layernorm")
}

fn bottleneck_slot(b: &mut InvertedResidualBottleneck<f64>, tensor: usize, i: usize) -> &mut f64 {
    match tensor {
        0 => &mut b.expand.weights[i],
        1 => &mut b.expand.bias[i],
        2 => &mut b.project.weights[i],
        3 => &mut b.project.bias[i],
        4 => &mut b.norm.gamma[i],
        _ => &mut b.norm.beta[i],
    }
}

fn check_bottleneck(rng: &mut ChaCha8Rng, dropout: f64, mode: Mode, label: &str) -> GradCheckEntry {
    let (d, h) = (4, 8);
    let norm = LayerNormParams::new(random_vec(rng, d), random_vec(rng, d), 1e-5).expect("valid");
    let mut b = InvertedResidualBottleneck::new(random_dense(rng, d, h), random_dense(rng, h, d), norm, dropout)
        .expect("valid bottleneck");
    let site = SiteKey {
        stage: 1,
        patch: 3,
        bottleneck: 0,
    };
    let x = random_vec(rng, d);
    let w = random_vec(rng, d);
    let mut grad = InvertedResidualBottleneck::new(
        DenseLayer::zeros(d, h),
        DenseLayer::zeros(h, d),
        LayerNormParams::new(vec![0.0; d], vec![0.0; d], 1e-5).expect("valid"),
        dropout,
    )
    .expect("valid bottleneck");
    let (_, tape) = bottleneck_forward_taped(&b, &x, mode, site);
    let dx = bottleneck_backward(&b, &tape, &w, &mut grad);
    let loss = |b: &InvertedResidualBottleneck<f64>, x: &[f64]| weighted(&bottleneck_forward_taped(b, x, mode, site).0, &w);
    let mut t = Tracker::default();
    for i in 0..d {
        let mut xp = x.clone();
        let n = central(x[i], |v| {
            xp[i] = v;
            loss(&b, &xp)
        });
        t.add(dx[i], n);
    }
    let sizes = [d * h, h, h * d, d, d, d];
    for (k, &len) in sizes.iter().enumerate() {
        for i in 0..len {
            let analytic = *bottleneck_slot(&mut grad, k, i);
            let orig = *bottleneck_slot(&mut b, k, i);
            let n = central(orig, |v| {
                *bottleneck_slot(&mut b, k, i) = v;
                loss(&b, &x)
            });
            *bottleneck_slot(&mut b, k, i) = orig;
            t.add(analytic, n);
        }
    }
    t.entry(label)
}

fn check_network(config: &NetworkConfig, seed: u64) -> Result<GradCheckEntry> {
    let mut net = Network::<f64>::build(config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let (side, ch) = (config.input_side, config.input_channels);
    let image = FeatureMap::from_fn(side, side, ch, |_, _, _| rng.gen_range(0.0..1.0));
    let target = seed as usize % config.num_classes;
    let mode = Mode::Training { seed };
    let (_, grads) = network_backward(&net, &image, target, mode)?;
    let analytic: Vec<f64> = grads.tensors().iter().flat_map(|p| p.data.iter().copied()).collect();
    let loss = |net: &Network<f64>| -> f64 {
        let logits = net.forward(&image, mode).expect("valid input");
        softmax_cross_entropy(&logits, target).0
    };
    let mut t = Tracker::default();
    let mut flat = 0;
    let tensor_count = net.params().len();
    for k in 0..tensor_count {
        let len = net.params()[k].data.len();
        for i in 0..len {
            let orig = net.params()[k].data[i];
            let mut at = |v: f64| {
                net.params_mut()[k].data[i] = v;
                loss(&net)
            };
            let n = (at(orig + STEP) - at(orig - STEP)) / (2.0 * STEP);
            net.params_mut()[k].data[i] = orig;
            t.add(analytic[flat], n);
            flat += 1;
        }
    }
    Ok(t.entry("network"))
}

/// Compares analytic and central-difference gradients for each layer type
/// and for every parameter of the network described by `config`, in f64.
/// The full-network check perturbs every parameter, so keep `config` small.
pub fn run_gradcheck(config: &NetworkConfig, seed: u64) -> Result<GradCheckReport> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = vec![
        check_dense(&mut rng),
        check_gelu(&mut rng),
        check_layer_norm(&mut rng),
        check_bottleneck(&mut rng, 0.0, Mode::Inference, "bottleneck"),
        check_bottleneck(&mut rng, 0.3, Mode::Training { seed }, "dropout"),
        check_network(config, seed)?,
    ];
    Ok(GradCheckReport {
        step: STEP,
        threshold: THRESHOLD,
        entries,
    })
}
