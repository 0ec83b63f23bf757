//! Closed-form response surface standing in for real training.
//!
//! For each layer group, with `u_i` the width-like value of layer `i`
//! (`fc_width` or `conv_filters`) divided by its grid maximum and `s_i` a
//! kernel factor (`0.5 + 0.5 * kernel / kernel_max` for convolutional layers
//! that choose a kernel, 1 otherwise):
//!
//! ```text
//! C     = sum over groups of  s_1 * sqrt(u_1) + 0.3 * sum_{i>=2} s_i * sqrt(min(u_i, u_{i-1}))
//! rho   = position of the learning rate in its range (log position on a log grid), in [0, 1]
//! error = min(1, (0.015 + 0.30 * exp(-2.5 * C)) * (1 + 1.5 * (rho - 0.65)^2) * (1 + 0.05 * a))
//! ```
//!
//! where `a` is the option index of the activation slot (0 when absent).
//! Spaces without a learning-rate slot, or with a single-valued one, take
//! `rho = 0.65`.

use super::{EvaluationResult, Evaluator};
use crate::design_space::{CandidateConfig, DesignSpace, ParamKind, ParamValue, Role, Scale};
use crate::error::Result;

const FLOOR: f64 = 0.015;
const AMPLITUDE: f64 = 0.30;
const DECAY: f64 = 2.5;
const DEEPER_WEIGHT: f64 = 0.3;
const LR_CURVATURE: f64 = 1.5;
const LR_OPTIMUM: f64 = 0.65;
const ACTIVATION_PENALTY: f64 = 0.05;

fn capacity(config: &CandidateConfig, space: &DesignSpace) -> f64 {
    let mut total = 0.0;
    for g in 0..space.groups().len() {
        let depth = space.depth(config, g);
        let mut prev: Option<f64> = None;
        for layer in 1..=depth {
            let mut width = None;
            let mut kernel_factor = 1.0;
            for (i, slot) in space.slots().iter().enumerate() {
                let Some((sg, sl, _)) = slot.layer else { continue };
                if sg != g || sl != layer {
                    continue;
                }
                let (ParamValue::Numeric(v), Some(max)) = (space.value(config, i), slot.spec.max_value()) else {
                    continue;
                };
                match slot.spec.role {
                    Role::FcWidth | Role::ConvFilters => width = Some(v / max),
                    Role::KernelSize => kernel_factor = 0.5 + 0.5 * v / max,
                    _ => {}
                }
            }
            let Some(u) = width else { continue };
            total += match prev {
                None => kernel_factor * u.sqrt(),
                Some(p) => DEEPER_WEIGHT * kernel_factor * u.min(p).sqrt(),
            };
            prev = Some(u);
        }
    }
    total
}

fn lr_position(config: &CandidateConfig, space: &DesignSpace) -> f64 {
    for (i, slot) in space.slots().iter().enumerate() {
        if slot.spec.role != Role::LearningRate {
            continue;
        }
        let (ParamKind::Numeric { min, max, scale, .. }, ParamValue::Numeric(v)) =
            (&slot.spec.kind, space.value(config, i))
        else {
            continue;
        };
        if max <= min {
            return LR_OPTIMUM;
        }
        return match scale {
            Scale::Log => (v.ln() - min.ln()) / (max.ln() - min.ln()),
            Scale::Linear => (v - min) / (max - min),
        };
    }
    LR_OPTIMUM
}

fn activation_index(config: &CandidateConfig, space: &DesignSpace) -> usize {
    space
        .slots()
        .iter()
        .enumerate()
        .find(|(_, s)| s.spec.role == Role::Activation && !s.spec.is_numeric())
        .and_then(|(i, _)| config.0[i])
        .unwrap_or(0)
}

/// The documented surface; pure arithmetic on grid values.
pub fn synthetic_error(config: &CandidateConfig, space: &DesignSpace) -> f64 {
    let c = capacity(config, space);
    let rho = lr_position(config, space);
    let a = activation_index(config, space) as f64;
    let e = (FLOOR + AMPLITUDE * (-DECAY * c).exp())
        * (1.0 + LR_CURVATURE * (rho - LR_OPTIMUM).powi(2))
        * (1.0 + ACTIVATION_PENALTY * a);
    e.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SyntheticEvaluator;

impl Evaluator for SyntheticEvaluator {
    fn evaluate(&self, space: &DesignSpace, config: &CandidateConfig) -> Result<EvaluationResult> {
        space.validate(config)?;
        EvaluationResult::new(synthetic_error(config, space))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn restricted(depth: usize, nodes: &[usize], lr: usize) -> (DesignSpace, CandidateConfig) {
        let space = presets::restricted_mnist();
        let mut c = CandidateConfig(vec![None; space.slots().len()]);
        c.0[space.slot_index("fc_layers").unwrap()] = Some(depth - 1);
        for (i, &n) in nodes.iter().enumerate() {
            c.0[space.slot_index(&format!("nodes_{}", i + 1)).unwrap()] = Some(n);
        }
        c.0[space.slot_index("learning_rate").unwrap()] = Some(lr);
        c.0[space.slot_index("activation").unwrap()] = Some(0);
        (space, c)
    }

    #[test]
    fn hand_computed_value() {
        // one layer of 200 nodes: C = 1; lr index 4 of 8 on a log grid: rho = 0.5
        let (space, c) = restricted(1, &[9], 4);
        let expected = (0.015 + 0.30 * (-2.5f64).exp()) * (1.0 + 1.5 * 0.15f64.powi(2));
        assert!((synthetic_error(&c, &space) - expected).abs() < 1e-15);
    }

    #[test]
    fn bottleneck_limits_deeper_layers() {
        // 200 -> 10 -> 200: second term uses 10/200, third term min(1, 0.05)
        let (space, c) = restricted(3, &[9, 0, 9], 5);
        let u = 10.0f64 / 200.0;
        let cap = 1.0 + 0.3 * u.sqrt() + 0.3 * u.sqrt();
        let rho = 5.0 / 8.0;
        let expected = (0.015 + 0.30 * (-2.5 * cap).exp()) * (1.0 + 1.5 * (rho - 0.65f64).powi(2));
        assert!((synthetic_error(&c, &space) - expected).abs() < 1e-12);
    }

    #[test]
    fn max_capacity_is_the_minimum() {
        let space = presets::restricted_mnist();
        let (best, best_cfg) = space
            .enumerate()
            .map(|c| (synthetic_error(&c, &space), c))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .unwrap();
        let (_, max_cap) = restricted(3, &[9, 9, 9], 5);
        assert_eq!(best_cfg, max_cap);
        assert_eq!(best, synthetic_error(&max_cap, &space));
    }

    #[test]
    fn values_are_rates_and_repeatable() {
        let space = presets::restricted_mnist();
        for c in space.enumerate() {
            let e = synthetic_error(&c, &space);
            assert!((0.0..=1.0).contains(&e));
            assert_eq!(e.to_bits(), synthetic_error(&c, &space).to_bits());
        }
    }

    #[test]
    fn defined_on_every_preset() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        for name in presets::names() {
            let space = presets::load(name).unwrap();
            for _ in 0..50 {
                let c = space.sample_uniform(&mut rng);
                let r = SyntheticEvaluator.evaluate(&space, &c).unwrap();
                assert!(r.error > 0.0 && r.error <= 1.0);
            }
        }
    }
}
