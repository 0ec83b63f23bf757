//! Small from-scratch trainer: valid stride-1 convolutions with max
//! pooling, dense layers, softmax output, categorical cross-entropy and
//! plain mini-batch SGD.

use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::{Dataset, Split};
use super::{build_topology, train_hyper, Activation, EvaluationResult, Evaluator, TrainHyper};
use crate::cost_model::Topology;
use crate::design_space::{CandidateConfig, DesignSpace};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
enum Layer {
    Conv {
        offset: usize,
        in_c: usize,
        in_h: usize,
        in_w: usize,
        filters: usize,
        k: usize,
        pool: usize,
        out_h: usize,
        out_w: usize,
        pooled_h: usize,
        pooled_w: usize,
    },
    Dense {
        offset: usize,
        inputs: usize,
        outputs: usize,
        activate: bool,
    },
}

#[derive(Debug, Clone, Default)]
struct Trace {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    argmax: Vec<Vec<usize>>,
    logits: Vec<f64>,
    probs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Network {
    activation: Activation,
    layers: Vec<Layer>,
    params: Vec<f64>,
}

fn act(a: Activation, z: f64) -> f64 {
    match a {
        Activation::Relu => z.max(0.0),
        Activation::Tanh => z.tanh(),
        Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
    }
}

/// Derivative expressed through the pre-activation `z` and output `y`.
fn act_grad(a: Activation, z: f64, y: f64) -> f64 {
    match a {
        Activation::Relu => {
            if z > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Tanh => 1.0 - y * y,
        Activation::Sigmoid => y * (1.0 - y),
    }
}

/// Numerically stable softmax; returns `(probabilities, log-sum-exp)`.
pub fn softmax(logits: &[f64]) -> (Vec<f64>, f64) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    (exps.iter().map(|e| e / sum).collect(), m + sum.ln())
}

impl Network {
    /// Weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, zero biases.
    pub fn new<R: Rng + ?Sized>(topology: &Topology, activation: Activation, rng: &mut R) -> Result<Self> {
        let shapes = topology.conv_shapes()?;
        let mut layers = Vec::new();
        let mut offset = 0;
        let mut ranges = Vec::new();
        for (layer, s) in topology.conv_layers.iter().zip(&shapes) {
            let fan_in = s.in_channels * layer.kernel * layer.kernel;
            let n = layer.filters * fan_in;
            ranges.push((offset, offset + n, fan_in));
            layers.push(Layer::Conv {
                offset,
                in_c: s.in_channels,
                in_h: s.in_h,
                in_w: s.in_w,
                filters: layer.filters,
                k: layer.kernel,
                pool: layer.pool,
                out_h: s.out_h,
                out_w: s.out_w,
                pooled_h: s.pooled_h,
                pooled_w: s.pooled_w,
            });
            offset += n + layer.filters;
        }
        let sizes = topology.fc_sizes()?;
        for (i, pair) in sizes.windows(2).enumerate() {
            let (inputs, outputs) = (pair[0], pair[1]);
            ranges.push((offset, offset + inputs * outputs, inputs));
            layers.push(Layer::Dense {
                offset,
                inputs,
                outputs,
                activate: i + 2 < sizes.len(),
            });
            offset += inputs * outputs + outputs;
        }
        let mut params = vec![0.0; offset];
        for (start, end, fan_in) in ranges {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut params[start..end] {
                *p = rng.random_range(-bound..=bound);
            }
        }
        Ok(Network {
            activation,
            layers,
            params,
        })
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn forward(&self, x: &[f64]) -> Trace {
        let mut t = Trace::default();
        let mut cur = x.to_vec();
        let p = &self.params;
        for layer in &self.layers {
            match *layer {
                Layer::Conv {
                    offset,
                    in_c,
                    in_h,
                    in_w,
                    filters,
                    k,
                    pool,
                    out_h,
                    out_w,
                    pooled_h,
                    pooled_w,
                } => {
                    let wsize = in_c * k * k;
                    let bias = offset + filters * wsize;
                    let mut z = vec![0.0; filters * out_h * out_w];
                    for f in 0..filters {
                        let w = &p[offset + f * wsize..offset + (f + 1) * wsize];
                        for y in 0..out_h {
                            for xo in 0..out_w {
                                let mut s = p[bias + f];
                                for c in 0..in_c {
                                    for ky in 0..k {
                                        let row = c * in_h * in_w + (y + ky) * in_w + xo;
                                        let wrow = c * k * k + ky * k;
                                        for kx in 0..k {
                                            s += w[wrow + kx] * cur[row + kx];
                                        }
                                    }
                                }
                                z[f * out_h * out_w + y * out_w + xo] = s;
                            }
                        }
                    }
                    let a: Vec<f64> = z.iter().map(|&v| act(self.activation, v)).collect();
                    let mut pooled = vec![0.0; filters * pooled_h * pooled_w];
                    let mut arg = vec![0; pooled.len()];
                    for f in 0..filters {
                        for py in 0..pooled_h {
                            for px in 0..pooled_w {
                                let mut best = f * out_h * out_w + py * pool * out_w + px * pool;
                                for dy in 0..pool {
                                    for dx in 0..pool {
                                        let i = f * out_h * out_w + (py * pool + dy) * out_w + px * pool + dx;
                                        if a[i] > a[best] {
                                            best = i;
                                        }
                                    }
                                }
                                let o = f * pooled_h * pooled_w + py * pooled_w + px;
                                pooled[o] = a[best];
                                arg[o] = best;
                            }
                        }
                    }
                    t.inputs.push(std::mem::replace(&mut cur, pooled));
                    t.pre.push(z);
                    t.post.push(a);
                    t.argmax.push(arg);
                }
                Layer::Dense {
                    offset,
                    inputs,
                    outputs,
                    activate,
                } => {
                    let bias = offset + inputs * outputs;
                    let z: Vec<f64> = (0..outputs)
                        .map(|o| {
                            let w = &p[offset + o * inputs..offset + (o + 1) * inputs];
                            p[bias + o] + w.iter().zip(&cur).map(|(a, b)| a * b).sum::<f64>()
                        })
                        .collect();
                    let a: Vec<f64> = if activate {
                        z.iter().map(|&v| act(self.activation, v)).collect()
                    } else {
                        z.clone()
                    };
                    t.inputs.push(std::mem::replace(&mut cur, a.clone()));
                    t.pre.push(z);
                    t.post.push(a);
                    t.argmax.push(Vec::new());
                }
            }
        }
        let (probs, _) = softmax(&cur);
        t.logits = cur;
        t.probs = probs;
        t
    }

    /// Class probabilities for one example.
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).probs
    }

    /// Cross-entropy `-ln p_label`, computed as `logsumexp - logit_label`.
    pub fn loss(&self, x: &[f64], label: usize) -> f64 {
        let t = self.forward(x);
        let (_, lse) = softmax(&t.logits);
        lse - t.logits[label]
    }

    /// Adds the gradient of the cross-entropy on one example to `grad` and
    /// returns the trace of the forward pass.
    fn accumulate(&self, x: &[f64], label: usize, grad: &mut [f64]) -> Trace {
        let t = self.forward(x);
        let p = &self.params;
        let mut d: Vec<f64> = t.probs.clone();
        d[label] -= 1.0;
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let input = &t.inputs[li];
            match *layer {
                Layer::Dense {
                    offset,
                    inputs,
                    outputs,
                    activate,
                } => {
                    if activate {
                        for o in 0..outputs {
                            d[o] *= act_grad(self.activation, t.pre[li][o], t.post[li][o]);
                        }
                    }
                    let bias = offset + inputs * outputs;
                    let mut d_in = if li > 0 { vec![0.0; inputs] } else { Vec::new() };
                    for o in 0..outputs {
                        let g = d[o];
                        if g == 0.0 {
                            continue;
                        }
                        grad[bias + o] += g;
                        let row = offset + o * inputs;
                        for i in 0..inputs {
                            grad[row + i] += g * input[i];
                        }
                        if li > 0 {
                            for i in 0..inputs {
                                d_in[i] += p[row + i] * g;
                            }
                        }
                    }
                    d = d_in;
                }
                Layer::Conv {
                    offset,
                    in_c,
                    in_h,
                    in_w,
                    filters,
                    k,
                    out_h,
                    out_w,
                    ..
                } => {
                    let mut dz = vec![0.0; filters * out_h * out_w];
                    for (o, &g) in d.iter().enumerate() {
                        dz[t.argmax[li][o]] += g;
                    }
                    for (i, v) in dz.iter_mut().enumerate() {
                        *v *= act_grad(self.activation, t.pre[li][i], t.post[li][i]);
                    }
                    let wsize = in_c * k * k;
                    let bias = offset + filters * wsize;
                    let mut d_in = if li > 0 { vec![0.0; in_c * in_h * in_w] } else { Vec::new() };
                    for f in 0..filters {
                        let wbase = offset + f * wsize;
                        for y in 0..out_h {
                            for xo in 0..out_w {
                                let g = dz[f * out_h * out_w + y * out_w + xo];
                                if g == 0.0 {
                                    continue;
                                }
                                grad[bias + f] += g;
                                for c in 0..in_c {
                                    for ky in 0..k {
                                        let row = c * in_h * in_w + (y + ky) * in_w + xo;
                                        let wrow = wbase + c * k * k + ky * k;
                                        for kx in 0..k {
                                            grad[wrow + kx] += g * input[row + kx];
                                            if li > 0 {
                                                d_in[row + kx] += p[wrow + kx] * g;
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                    d = d_in;
                }
            }
        }
        t
    }

    /// Gradient of [`loss`](Self::loss) for one example.
    pub fn gradient(&self, x: &[f64], label: usize) -> Vec<f64> {
        let mut g = vec![0.0; self.params.len()];
        self.accumulate(x, label, &mut g);
        g
    }

    fn kink_pattern(&self, x: &[f64]) -> (Vec<bool>, Vec<usize>) {
        let t = self.forward(x);
        let signs = if self.activation == Activation::Relu {
            t.pre.iter().flatten().map(|&z| z > 0.0).collect()
        } else {
            Vec::new()
        };
        (signs, t.argmax.concat())
    }

    /// Worst relative difference between analytic and central-difference
    /// (step 1e-5) gradients, skipping parameters whose perturbation moves a
    /// rectifier or pooling argmax across a kink.
    pub fn gradient_check(&self, x: &[f64], label: usize) -> f64 {
        const STEP: f64 = 1e-5;
        let analytic = self.gradient(x, label);
        let base = self.kink_pattern(x);
        let mut probe = self.clone();
        let mut worst = 0.0f64;
        for (k, &a) in analytic.iter().enumerate() {
            let orig = probe.params[k];
            probe.params[k] = orig + STEP;
            let plus = probe.loss(x, label);
            let crossed = probe.kink_pattern(x) != base;
            probe.params[k] = orig - STEP;
            let minus = probe.loss(x, label);
            let crossed = crossed || probe.kink_pattern(x) != base;
            probe.params[k] = orig;
            if crossed {
                continue;
            }
            let numeric = (plus - minus) / (2.0 * STEP);
            worst = worst.max((a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6));
        }
        worst
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub test_error: f64,
    /// Mean training cross-entropy per epoch, measured during the sweep.
    pub epoch_losses: Vec<f64>,
    /// Largest `|sum(p) - 1|` over every forward pass.
    pub max_softmax_deviation: f64,
}

fn example_f64(split: &Split, i: usize, buf: &mut Vec<f64>) {
    buf.clear();
    buf.extend(split.example(i).iter().map(|&v| v as f64));
}

/// Trains `topology` on `dataset.train` and reports the error on
/// `dataset.test`. Non-finite training loss aborts with a divergence error.
pub fn train<R: Rng + ?Sized>(
    topology: &Topology,
    hyper: &TrainHyper,
    dataset: &Dataset,
    rng: &mut R,
) -> Result<TrainReport> {
    hyper.validate()?;
    // Dense-only networks flatten their input, so only the length must agree.
    let shape_ok = if topology.conv_layers.is_empty() {
        topology.input_len() == dataset.input_shape.iter().product::<usize>()
    } else {
        topology.input_shape == dataset.input_shape
    };
    if !shape_ok || topology.output_nodes != dataset.num_classes {
        return Err(Error::validation(format!(
            "topology {:?} -> {} does not match dataset {:?} -> {}",
            topology.input_shape, topology.output_nodes, dataset.input_shape, dataset.num_classes
        )));
    }
    if dataset.train.is_empty() || dataset.test.is_empty() {
        return Err(Error::validation("dataset splits must be non-empty"));
    }
    let mut net = Network::new(topology, hyper.activation, rng)?;
    let mut order: Vec<usize> = (0..dataset.train.len()).collect();
    let mut grad = vec![0.0; net.params.len()];
    let mut x = Vec::new();
    let mut max_dev = 0.0f64;
    let mut epoch_losses = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for batch in order.chunks(hyper.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                example_f64(&dataset.train, i, &mut x);
                let label = dataset.train.labels[i];
                let t = net.accumulate(&x, label, &mut grad);
                max_dev = max_dev.max((t.probs.iter().sum::<f64>() - 1.0).abs());
                let (_, lse) = softmax(&t.logits);
                total += lse - t.logits[label];
            }
            if !total.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            let step = hyper.learning_rate / batch.len() as f64;
            for (w, g) in net.params.iter_mut().zip(&grad) {
                *w -= step * g;
            }
        }
        epoch_losses.push(total / order.len() as f64);
    }
    if net.params.iter().any(|w| !w.is_finite()) {
        return Err(Error::Divergence { epoch: hyper.epochs });
    }
    let mut wrong = 0usize;
    for i in 0..dataset.test.len() {
        example_f64(&dataset.test, i, &mut x);
        let probs = net.predict(&x);
        max_dev = max_dev.max((probs.iter().sum::<f64>() - 1.0).abs());
        let guess = probs
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (c, &p)| if p > best.1 { (c, p) } else { best })
            .0;
        if guess != dataset.test.labels[i] {
            wrong += 1;
        }
    }
    Ok(TrainReport {
        test_error: wrong as f64 / dataset.test.len() as f64,
        epoch_losses,
        max_softmax_deviation: max_dev,
    })
}

/// Trains and tests one network, returning `1 - accuracy`.
pub fn train_and_test<R: Rng + ?Sized>(
    topology: &Topology,
    hyper: &TrainHyper,
    dataset: &Dataset,
    rng: &mut R,
) -> Result<EvaluationResult> {
    let start = Instant::now();
    let report = train(topology, hyper, dataset, rng)?;
    let mut r = EvaluationResult::new(report.test_error)?
        .with_meta("final_loss", report.epoch_losses.last().copied().unwrap_or(f64::NAN));
    r.wall_time = start.elapsed();
    Ok(r)
}

/// FNV-1a, used to derive a stable per-config seed.
fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Evaluator backed by [`train_and_test`]. Each config trains from its own
/// seed, derived from `seed` and its canonical key, so results do not depend
/// on evaluation order. Divergent training scores an error of 1.
#[derive(Debug, Clone)]
pub struct ToyEvaluator {
    dataset: Arc<Dataset>,
    seed: u64,
}

impl ToyEvaluator {
    pub fn new(dataset: Arc<Dataset>, seed: u64) -> Self {
        ToyEvaluator { dataset, seed }
    }
}

impl Evaluator for ToyEvaluator {
    fn evaluate(&self, space: &DesignSpace, config: &CandidateConfig) -> Result<EvaluationResult> {
        let task = space.task();
        if task.input_shape != self.dataset.input_shape || task.num_classes != self.dataset.num_classes {
            return Err(Error::Evaluator(format!(
                "space `{}` expects {:?} -> {}, dataset is {:?} -> {}",
                space.name(),
                task.input_shape,
                task.num_classes,
                self.dataset.input_shape,
                self.dataset.num_classes
            )));
        }
        let topology = build_topology(config, space)?;
        let hyper = train_hyper(config, space)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(&space.canonical_key(config)));
        let start = Instant::now();
        let mut r = match train_and_test(&topology, &hyper, &self.dataset, &mut rng) {
            Ok(r) => r,
            Err(Error::Divergence { epoch }) => EvaluationResult::new(1.0)?.with_meta("diverged_at_epoch", epoch),
            Err(e) => return Err(e),
        };
        if space.fixed().algorithm != "sgd" {
            r = r.with_meta("deviation", format!("trained with sgd instead of {}", space.fixed().algorithm));
        }
        r.wall_time = start.elapsed();
        Ok(r)
    }
}
