//! Measures the true error of candidate configurations.
//!
//! Backends share the [`Evaluator`] trait: the built-in [`trainer`], the
//! closed-form [`synthetic`] surface, and an [`external`] process. Any of
//! them can be wrapped in a [`cache::CachedEvaluator`].

pub mod cache;
pub mod dataset;
pub mod external;
pub mod synthetic;
pub mod trainer;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::cost_model::{ConvLayer, Topology};
use crate::design_space::{CandidateConfig, DesignSpace, ParamValue, Role};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationResult {
    /// `1 - test accuracy`, in `[0, 1]`.
    pub error: f64,
    pub wall_time: Duration,
    pub metadata: BTreeMap<String, String>,
}

impl EvaluationResult {
    pub fn new(error: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&error) {
            return Err(Error::validation(format!("evaluated error {error} outside [0, 1]")));
        }
        Ok(EvaluationResult {
            error,
            wall_time: Duration::ZERO,
            metadata: BTreeMap::new(),
        })
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.insert(key.to_owned(), value.to_string());
        self
    }
}

pub trait Evaluator: Send + Sync {
    fn evaluate(&self, space: &DesignSpace, config: &CandidateConfig) -> Result<EvaluationResult>;
}

impl<E: Evaluator + ?Sized> Evaluator for &E {
    fn evaluate(&self, space: &DesignSpace, config: &CandidateConfig) -> Result<EvaluationResult> {
        (**self).evaluate(space, config)
    }
}

impl<E: Evaluator + ?Sized> Evaluator for Box<E> {
    fn evaluate(&self, space: &DesignSpace, config: &CandidateConfig) -> Result<EvaluationResult> {
        (**self).evaluate(space, config)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::validation(format!("unknown activation `{other}`"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub activation: Activation,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            learning_rate: 0.1,
            batch_size: 200,
            epochs: 10,
            activation: Activation::Relu,
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::validation("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch size must be positive"));
        }
        Ok(())
    }
}

fn slots_with_role(space: &DesignSpace, role: Role) -> impl Iterator<Item = usize> + '_ {
    space
        .slots()
        .iter()
        .enumerate()
        .filter(move |(_, s)| s.spec.role == role)
        .map(|(i, _)| i)
}

fn numeric_in_layer(
    space: &DesignSpace,
    config: &CandidateConfig,
    group: usize,
    layer: usize,
    role: Role,
) -> Option<f64> {
    space.slots().iter().enumerate().find_map(|(i, s)| match s.layer {
        Some((g, l, _)) if g == group && l == layer && s.spec.role == role => {
            match space.value(config, i) {
                ParamValue::Numeric(v) => Some(v),
                _ => None,
            }
        }
        _ => None,
    })
}

fn group_has_role(space: &DesignSpace, group: usize, role: Role) -> bool {
    space.groups()[group].templates.iter().any(|t| t.role == role)
}

fn to_size(v: f64) -> usize {
    v.round().max(1.0) as usize
}

/// Concrete network for `config`. Layer widths are rounded to the nearest
/// integer; groups holding a `conv_filters` template become convolutional
/// layers, groups holding `fc_width` become dense layers, in declared order
/// within each kind.
pub fn build_topology(config: &CandidateConfig, space: &DesignSpace) -> Result<Topology> {
    space.validate(config)?;
    let task = space.task();
    let mut conv_layers = Vec::new();
    let mut fc_layers = Vec::new();
    for g in 0..space.groups().len() {
        let depth = space.depth(config, g);
        if group_has_role(space, g, Role::ConvFilters) {
            for layer in 1..=depth {
                let filters = numeric_in_layer(space, config, g, layer, Role::ConvFilters)
                    .map(to_size)
                    .unwrap_or(1);
                let kernel = numeric_in_layer(space, config, g, layer, Role::KernelSize)
                    .map(to_size)
                    .unwrap_or(1);
                let pool = numeric_in_layer(space, config, g, layer, Role::PoolSize)
                    .map(to_size)
                    .unwrap_or(1);
                conv_layers.push(ConvLayer {
                    filters,
                    kernel,
                    pool,
                });
            }
        } else if group_has_role(space, g, Role::FcWidth) {
            for layer in 1..=depth {
                if let Some(w) = numeric_in_layer(space, config, g, layer, Role::FcWidth) {
                    fc_layers.push(to_size(w));
                }
            }
        }
    }
    let topology = Topology {
        input_shape: task.input_shape,
        conv_layers,
        fc_layers,
        output_nodes: task.num_classes,
    };
    topology.conv_shapes()?;
    Ok(topology)
}

/// Training hyper-parameters for `config`: the learning rate and activation
/// come from slots with those roles, batch size and epochs from the space's
/// fixed settings.
pub fn train_hyper(config: &CandidateConfig, space: &DesignSpace) -> Result<TrainHyper> {
    let lr = slots_with_role(space, Role::LearningRate)
        .find_map(|i| match space.value(config, i) {
            ParamValue::Numeric(v) => Some(v),
            _ => None,
        })
        .ok_or_else(|| Error::validation("space has no learning_rate parameter"))?;
    let activation = match slots_with_role(space, Role::Activation)
        .map(|i| space.value(config, i))
        .next()
    {
        Some(ParamValue::Categorical(label)) => label.parse()?,
        _ => Activation::Relu,
    };
    let hyper = TrainHyper {
        learning_rate: lr,
        batch_size: space.fixed().batch_size,
        epochs: space.fixed().epochs,
        activation,
    };
    hyper.validate()?;
    Ok(hyper)
}
