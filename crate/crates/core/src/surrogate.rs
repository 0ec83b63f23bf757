//! Response-surface regressor predicting a candidate's error from its
//! encoded hyper-parameters.
//!
//! Architecture: `input -> hidden (ReLU) -> hidden (ReLU) -> 1 (linear)`,
//! hidden width `hidden_multiple * input_dim`. Trained with per-sample SGD
//! on `0.5 * (prediction - target)^2`, warm-started across refits.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::design_space::EncodedVector;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateTrainConfig {
    pub learning_rate: f64,
    pub epochs_per_update: usize,
    pub hidden_multiple: usize,
}

impl Default for SurrogateTrainConfig {
    fn default() -> Self {
        SurrogateTrainConfig {
            learning_rate: 0.1,
            epochs_per_update: 100,
            hidden_multiple: 25,
        }
    }
}

impl SurrogateTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::validation("surrogate learning rate must be > 0"));
        }
        if self.epochs_per_update == 0 || self.hidden_multiple == 0 {
            return Err(Error::validation("surrogate epochs and hidden multiple must be >= 1"));
        }
        Ok(())
    }
}

/// Explored points and their measured errors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    inputs: Vec<EncodedVector>,
    targets: Vec<f64>,
}

impl TrainingSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: EncodedVector, target: f64) -> Result<()> {
        if let Some(first) = self.inputs.first() {
            if first.len() != x.len() {
                return Err(Error::validation(format!(
                    "training vector length {} differs from {}",
                    x.len(),
                    first.len()
                )));
            }
        }
        if !(0.0..=1.0).contains(&target) {
            return Err(Error::validation(format!("target {target} outside [0, 1]")));
        }
        self.inputs.push(x);
        self.targets.push(target);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&EncodedVector, f64)> {
        self.inputs.iter().zip(self.targets.iter().copied())
    }
}

/// Parameters live in one flat buffer laid out as
/// `[w1 (h x d) | b1 (h) | w2 (h x h) | b2 (h) | w3 (h) | b3 (1)]`, weight
/// matrices row-major with one row per output unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorModel {
    input_dim: usize,
    hidden: usize,
    params: Vec<f64>,
}

struct Offsets {
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    end: usize,
}

struct Activations {
    z1: Vec<f64>,
    h1: Vec<f64>,
    z2: Vec<f64>,
    h2: Vec<f64>,
    y: f64,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators let the compiler vectorize without reassociation.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

impl RegressorModel {
    fn offsets(input_dim: usize, hidden: usize) -> Offsets {
        let b1 = hidden * input_dim;
        let w2 = b1 + hidden;
        let b2 = w2 + hidden * hidden;
        let w3 = b2 + hidden;
        let b3 = w3 + hidden;
        Offsets {
            b1,
            w2,
            b2,
            w3,
            b3,
            end: b3 + 1,
        }
    }

    /// All-zero model; predicts 0 everywhere.
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        let n = Self::offsets(input_dim, hidden).end;
        RegressorModel {
            input_dim,
            hidden,
            params: vec![0.0; n],
        }
    }

    /// Rebuilds a model from its shape header and flat parameter buffer.
    pub fn from_flat(input_dim: usize, hidden: usize, params: Vec<f64>) -> Result<Self> {
        let n = Self::offsets(input_dim, hidden).end;
        if params.len() != n {
            return Err(Error::validation(format!(
                "expected {n} parameters for {input_dim}x{hidden}, got {}",
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::validation("non-finite surrogate parameter"));
        }
        Ok(RegressorModel {
            input_dim,
            hidden,
            params,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn forward(&self, x: &[f64]) -> Activations {
        let (d, h) = (self.input_dim, self.hidden);
        let o = Self::offsets(d, h);
        let p = &self.params;
        let mut z1 = vec![0.0; h];
        let mut h1 = vec![0.0; h];
        for i in 0..h {
            z1[i] = dot(&p[i * d..(i + 1) * d], x) + p[o.b1 + i];
            h1[i] = z1[i].max(0.0);
        }
        let mut z2 = vec![0.0; h];
        let mut h2 = vec![0.0; h];
        for i in 0..h {
            z2[i] = dot(&p[o.w2 + i * h..o.w2 + (i + 1) * h], &h1) + p[o.b2 + i];
            h2[i] = z2[i].max(0.0);
        }
        let y = dot(&p[o.w3..o.b3], &h2) + p[o.b3];
        Activations { z1, h1, z2, h2, y }
    }

    pub fn predict(&self, x: &EncodedVector) -> Result<f64> {
        if x.len() != self.input_dim {
            return Err(Error::validation(format!(
                "surrogate expects {} inputs, got {}",
                self.input_dim,
                x.len()
            )));
        }
        Ok(self.forward(x.as_slice()).y)
    }

    /// Loss `0.5 * (f(x) - target)^2`.
    pub fn loss(&self, x: &[f64], target: f64) -> f64 {
        let r = self.forward(x).y - target;
        0.5 * r * r
    }

    /// Analytic gradient of [`loss`](Self::loss), laid out like the parameters.
    pub fn gradient(&self, x: &[f64], target: f64) -> Vec<f64> {
        let (d, h) = (self.input_dim, self.hidden);
        let o = Self::offsets(d, h);
        let p = &self.params;
        let a = self.forward(x);
        let dy = a.y - target;
        let mut g = vec![0.0; o.end];
        g[o.b3] = dy;
        let mut dz2 = vec![0.0; h];
        for i in 0..h {
            g[o.w3 + i] = dy * a.h2[i];
            if a.z2[i] > 0.0 {
                dz2[i] = dy * p[o.w3 + i];
            }
        }
        let mut dh1 = vec![0.0; h];
        for i in 0..h {
            g[o.b2 + i] = dz2[i];
            for j in 0..h {
                g[o.w2 + i * h + j] = dz2[i] * a.h1[j];
                dh1[j] += p[o.w2 + i * h + j] * dz2[i];
            }
        }
        for i in 0..h {
            let dz1 = if a.z1[i] > 0.0 { dh1[i] } else { 0.0 };
            g[o.b1 + i] = dz1;
            for j in 0..d {
                g[i * d + j] = dz1 * x[j];
            }
        }
        g
    }

    /// One in-place SGD step on a single sample. Returns the pre-update loss.
    fn sgd_step(&mut self, x: &[f64], target: f64, lr: f64, dh1: &mut [f64]) -> f64 {
        let (d, h) = (self.input_dim, self.hidden);
        let o = Self::offsets(d, h);
        let a = self.forward(x);
        let dy = a.y - target;
        let p = &mut self.params;

        dh1.iter_mut().for_each(|v| *v = 0.0);
        // Second hidden layer: accumulate the backward signal from the old
        // weights and update each row in the same pass.
        for i in 0..h {
            let w3i = p[o.w3 + i];
            p[o.w3 + i] -= lr * dy * a.h2[i];
            if a.z2[i] <= 0.0 {
                continue;
            }
            let dz2 = dy * w3i;
            p[o.b2 + i] -= lr * dz2;
            let step = lr * dz2;
            let row = &mut p[o.w2 + i * h..o.w2 + (i + 1) * h];
            for ((w, acc), hj) in row.iter_mut().zip(dh1.iter_mut()).zip(&a.h1) {
                *acc += *w * dz2;
                *w -= step * hj;
            }
        }
        p[o.b3] -= lr * dy;
        for i in 0..h {
            if a.z1[i] <= 0.0 {
                continue;
            }
            let dz1 = dh1[i];
            p[o.b1 + i] -= lr * dz1;
            let step = lr * dz1;
            for (w, xj) in p[i * d..(i + 1) * d].iter_mut().zip(x) {
                *w -= step * xj;
            }
        }
        0.5 * dy * dy
    }

    /// Runs `epochs_per_update` shuffled sweeps of per-sample SGD starting
    /// from the current parameters. Returns the mean pre-update loss of the
    /// last sweep.
    pub fn fit<R: Rng + ?Sized>(
        &mut self,
        data: &TrainingSet,
        config: &SurrogateTrainConfig,
        rng: &mut R,
    ) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::validation("cannot fit the surrogate on an empty training set"));
        }
        if data.inputs[0].len() != self.input_dim {
            return Err(Error::validation("training vectors do not match the surrogate input"));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut dh1 = vec![0.0; self.hidden];
        let mut mean_loss = 0.0;
        for epoch in 0..config.epochs_per_update {
            order.shuffle(rng);
            let mut total = 0.0;
            for &k in &order {
                total += self.sgd_step(
                    data.inputs[k].as_slice(),
                    data.targets[k],
                    config.learning_rate,
                    &mut dh1,
                );
            }
            mean_loss = total / data.len() as f64;
            if !mean_loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence {
                epoch: config.epochs_per_update,
            });
        }
        Ok(mean_loss)
    }

    fn relu_pattern(&self, x: &[f64]) -> Vec<bool> {
        let a = self.forward(x);
        a.z1.iter().chain(&a.z2).map(|&z| z > 0.0).collect()
    }
}

/// Uniform weights in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, zero biases.
pub fn init_regressor<R: Rng + ?Sized>(
    input_dim: usize,
    config: &SurrogateTrainConfig,
    rng: &mut R,
) -> Result<RegressorModel> {
    if input_dim == 0 {
        return Err(Error::validation("surrogate input dimension must be >= 1"));
    }
    let hidden = config.hidden_multiple * input_dim;
    let mut m = RegressorModel::zeros(input_dim, hidden);
    let o = RegressorModel::offsets(input_dim, hidden);
    let mut fill = |range: std::ops::Range<usize>, fan_in: usize| {
        let bound = 1.0 / (fan_in as f64).sqrt();
        for p in &mut m.params[range] {
            *p = rng.random_range(-bound..=bound);
        }
    };
    fill(0..o.b1, input_dim);
    fill(o.w2..o.b2, hidden);
    fill(o.w3..o.b3, hidden);
    Ok(m)
}

/// Worst relative difference between analytic gradients and central finite
/// differences (step 1e-5) over all parameters. Parameters whose
/// perturbation flips any rectifier are skipped, since the loss is not
/// differentiable across a kink.
pub fn gradient_check(model: &RegressorModel, x: &EncodedVector, target: f64) -> f64 {
    const STEP: f64 = 1e-5;
    let x = x.as_slice();
    let analytic = model.gradient(x, target);
    let base_pattern = model.relu_pattern(x);
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for (k, &a) in analytic.iter().enumerate() {
        let orig = probe.params[k];
        probe.params[k] = orig + STEP;
        let plus = probe.loss(x, target);
        let crosses_plus = probe.relu_pattern(x) != base_pattern;
        probe.params[k] = orig - STEP;
        let minus = probe.loss(x, target);
        let crosses_minus = probe.relu_pattern(x) != base_pattern;
        probe.params[k] = orig;
        if crosses_plus || crosses_minus {
            continue;
        }
        let numeric = (plus - minus) / (2.0 * STEP);
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn ev(v: &[f64]) -> EncodedVector {
        EncodedVector(v.to_vec())
    }

    #[test]
    fn hidden_width_follows_multiple() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = init_regressor(5, &SurrogateTrainConfig::default(), &mut rng).unwrap();
        assert_eq!(m.hidden(), 125);
        assert_eq!(m.params().len(), 5 * 125 + 125 + 125 * 125 + 125 + 125 + 1);
        assert!(init_regressor(0, &SurrogateTrainConfig::default(), &mut rng).is_err());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let cfg = SurrogateTrainConfig::default();
        let a = init_regressor(4, &cfg, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = init_regressor(4, &cfg, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
        let o = RegressorModel::offsets(4, 100);
        assert!(a.params()[..o.b1].iter().all(|w| w.abs() <= (3.0f64 / 4.0).sqrt()));
        assert!(a.params()[o.w2..o.b2].iter().all(|w| w.abs() <= (3.0f64 / 100.0).sqrt()));
        assert!(a.params()[o.b1..o.w2].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn zero_model_predicts_zero() {
        let m = RegressorModel::zeros(3, 6);
        assert_eq!(m.predict(&ev(&[0.3, 0.9, -1.0])).unwrap(), 0.0);
        assert!(m.predict(&ev(&[0.3])).is_err());
    }

    #[test]
    fn hand_built_forward_pass() {
        // 1-1-1-1: y = w3 * relu(w2 * relu(w1 x + b1) + b2) + b3
        let m = RegressorModel::from_flat(1, 1, vec![2.0, 0.5, -3.0, 4.0, 1.5, 0.25]).unwrap();
        // x = 1: z1 = 2.5, z2 = -7.5 + 4 = -3.5 -> 0, y = 0.25
        assert_eq!(m.predict(&ev(&[1.0])).unwrap(), 0.25);
        // x = -1: z1 = -1.5 -> 0, z2 = 4, y = 1.5 * 4 + 0.25 = 6.25
        assert_eq!(m.predict(&ev(&[-1.0])).unwrap(), 6.25);
        let m = RegressorModel::from_flat(1, 1, vec![2.0, 0.5, 3.0, -1.0, 1.5, 0.25]).unwrap();
        // x = 0.5: z1 = 1.5, z2 = 3.5, y = 5.25 + 0.25
        assert_eq!(m.predict(&ev(&[0.5])).unwrap(), 5.5);
    }

    #[test]
    fn flat_roundtrip_validates_shape() {
        assert!(RegressorModel::from_flat(2, 3, vec![0.0; 5]).is_err());
        let n = RegressorModel::zeros(2, 3).params().len();
        assert!(RegressorModel::from_flat(2, 3, vec![f64::NAN; n]).is_err());
    }

    #[test]
    fn fit_single_sample_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = SurrogateTrainConfig::default();
        let mut m = init_regressor(4, &cfg, &mut rng).unwrap();
        let mut data = TrainingSet::new();
        let x = ev(&[0.2, 0.5, 1.0, -1.0]);
        data.push(x.clone(), 0.07).unwrap();
        m.fit(&data, &cfg, &mut rng).unwrap();
        assert!((m.predict(&x).unwrap() - 0.07).abs() < 1e-3);
    }

    #[test]
    fn fit_rejects_empty_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = SurrogateTrainConfig::default();
        let mut m = init_regressor(2, &cfg, &mut rng).unwrap();
        assert!(m.fit(&TrainingSet::new(), &cfg, &mut rng).is_err());
    }

    #[test]
    fn conflicting_targets_converge_to_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = SurrogateTrainConfig {
            learning_rate: 0.01,
            epochs_per_update: 400,
            ..Default::default()
        };
        let mut m = init_regressor(3, &cfg, &mut rng).unwrap();
        let x = ev(&[0.4, 0.1, 1.0]);
        let mut data = TrainingSet::new();
        data.push(x.clone(), 0.1).unwrap();
        data.push(x.clone(), 0.3).unwrap();
        m.fit(&data, &cfg, &mut rng).unwrap();
        assert!((m.predict(&x).unwrap() - 0.2).abs() < 0.01);
    }

    #[test]
    fn training_set_rejects_bad_samples() {
        let mut data = TrainingSet::new();
        data.push(ev(&[0.1, 0.2]), 0.5).unwrap();
        assert!(data.push(ev(&[0.1]), 0.5).is_err());
        assert!(data.push(ev(&[0.1, 0.2]), 1.5).is_err());
        assert!(data.push(ev(&[0.1, 0.2]), -0.1).is_err());
    }

    #[test]
    fn tiny_learning_rate_leaves_parameters_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = SurrogateTrainConfig {
            learning_rate: 1e-15,
            epochs_per_update: 5,
            hidden_multiple: 4,
        };
        let m0 = init_regressor(3, &cfg, &mut rng).unwrap();
        let mut m = m0.clone();
        let mut data = TrainingSet::new();
        data.push(ev(&[0.3, 0.6, 1.0]), 0.4).unwrap();
        data.push(ev(&[0.9, 0.1, -1.0]), 0.1).unwrap();
        m.fit(&data, &cfg, &mut rng).unwrap();
        for (a, b) in m.params().iter().zip(m0.params()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sgd_step_matches_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = SurrogateTrainConfig {
            hidden_multiple: 3,
            ..Default::default()
        };
        let m0 = init_regressor(4, &cfg, &mut rng).unwrap();
        let x = [0.1, 0.7, 0.3, 1.0];
        let g = m0.gradient(&x, 0.2);
        let mut m = m0.clone();
        let mut scratch = vec![0.0; m.hidden()];
        m.sgd_step(&x, 0.2, 0.05, &mut scratch);
        for k in 0..g.len() {
            let expected = m0.params()[k] - 0.05 * g[k];
            assert!((m.params()[k] - expected).abs() < 1e-14, "param {k}");
        }
    }

    #[test]
    fn rescaling_layers_preserves_predictions() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = SurrogateTrainConfig {
            hidden_multiple: 2,
            ..Default::default()
        };
        let d = 3;
        let mut m = init_regressor(d, &cfg, &mut rng).unwrap();
        let h = m.hidden();
        let o = RegressorModel::offsets(d, h);
        // Positive first layer and biases keep every rectifier active.
        for p in &mut m.params_mut()[..o.w2] {
            *p = p.abs() + 0.1;
        }
        for p in &mut m.params_mut()[o.w2..o.w3] {
            *p = p.abs() + 0.1;
        }
        let x = ev(&[0.3, 0.5, 0.9]);
        let before = m.predict(&x).unwrap();
        let mut scaled = m.clone();
        for p in &mut scaled.params_mut()[..o.w2] {
            *p *= 2.0;
        }
        for p in &mut scaled.params_mut()[o.b2..o.w3] {
            *p *= 2.0;
        }
        for p in &mut scaled.params_mut()[o.w3..o.b3] {
            *p *= 0.5;
        }
        let after = scaled.predict(&x).unwrap();
        assert!((before - after).abs() < 1e-12);
    }

    #[test]
    fn gradient_check_small_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10 {
            let d = rng.random_range(1..5);
            let cfg = SurrogateTrainConfig {
                hidden_multiple: rng.random_range(1..4),
                ..Default::default()
            };
            let mut m = init_regressor(d, &cfg, &mut rng).unwrap();
            for p in m.params_mut() {
                *p += rng.random_range(-0.1..0.1);
            }
            let x = ev(&(0..d).map(|_| rng.random_range(0.0..1.0)).collect::<Vec<_>>());
            let worst = gradient_check(&m, &x, rng.random_range(0.0..1.0));
            assert!(worst < 1e-4, "{worst}");
        }
    }

    #[test]
    fn gradient_check_zero_model() {
        let m = RegressorModel::zeros(3, 4);
        assert_eq!(m.gradient(&[0.1, 0.2, 0.3], 0.0).iter().sum::<f64>(), 0.0);
        assert_eq!(gradient_check(&m, &ev(&[0.1, 0.2, 0.3]), 0.0), 0.0);
    }
}
