//! Discretized hyper-parameter spaces.
//!
//! A [`DesignSpace`] is an ordered list of parameters plus optional layer
//! groups. A layer group is a set of per-layer templates (nodes, filters,
//! kernel size, ...) that is instantiated once per possible layer and gated
//! by a numeric depth parameter. The flattened list of instantiated
//! parameters is the space's *slots*; a [`CandidateConfig`] assigns one grid
//! or option index to every active slot and leaves inactive slots empty.
//!
//! Slot order is the declared parameter order, with each group's slots
//! placed immediately after its depth parameter, layer-major. Enumeration,
//! encoding and canonical keys all follow this order.

use std::collections::HashMap;
use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    #[default]
    Linear,
    Log,
}

/// What a parameter means to the network builder and the synthetic surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    FcDepth,
    ConvDepth,
    FcWidth,
    ConvFilters,
    KernelSize,
    PoolSize,
    LearningRate,
    Activation,
    #[default]
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParamKind {
    Numeric {
        min: f64,
        max: f64,
        steps: usize,
        #[serde(default)]
        scale: Scale,
    },
    Categorical {
        options: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(default)]
    pub role: Role,
    #[serde(flatten)]
    pub kind: ParamKind,
}

impl ParamSpec {
    pub fn numeric(name: &str, min: f64, max: f64, steps: usize, scale: Scale) -> Self {
        ParamSpec {
            name: name.to_owned(),
            role: Role::Other,
            kind: ParamKind::Numeric {
                min,
                max,
                steps,
                scale,
            },
        }
    }

    pub fn categorical<S: AsRef<str>>(name: &str, options: &[S]) -> Self {
        ParamSpec {
            name: name.to_owned(),
            role: Role::Other,
            kind: ParamKind::Categorical {
                options: options.iter().map(|o| o.as_ref().to_owned()).collect(),
            },
        }
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    /// Number of distinct values: grid steps or option count.
    pub fn size(&self) -> usize {
        match &self.kind {
            ParamKind::Numeric { steps, .. } => *steps,
            ParamKind::Categorical { options } => options.len(),
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self.kind, ParamKind::Numeric { .. })
    }

    /// Upper end of a numeric range; `None` for categorical parameters.
    pub fn max_value(&self) -> Option<f64> {
        match self.kind {
            ParamKind::Numeric { max, .. } => Some(max),
            ParamKind::Categorical { .. } => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::validation("parameter with empty name"));
        }
        match &self.kind {
            ParamKind::Numeric {
                min,
                max,
                steps,
                scale,
            } => {
                if !min.is_finite() || !max.is_finite() {
                    return Err(Error::validation(format!("`{}`: non-finite range", self.name)));
                }
                if *steps == 0 {
                    return Err(Error::validation(format!("`{}`: steps must be >= 1", self.name)));
                }
                if min > max {
                    return Err(Error::validation(format!("`{}`: min > max", self.name)));
                }
                // Encoded values are value / max and must land in [0, 1].
                if *min < 0.0 || *max <= 0.0 {
                    return Err(Error::validation(format!(
                        "`{}`: range must satisfy 0 <= min and max > 0",
                        self.name
                    )));
                }
                if *scale == Scale::Log && *min <= 0.0 {
                    return Err(Error::validation(format!(
                        "`{}`: log scale requires min > 0",
                        self.name
                    )));
                }
            }
            ParamKind::Categorical { options } => {
                if options.is_empty() {
                    return Err(Error::validation(format!("`{}`: no options", self.name)));
                }
                for (i, o) in options.iter().enumerate() {
                    if options[..i].contains(o) {
                        return Err(Error::validation(format!(
                            "`{}`: duplicate option `{o}`",
                            self.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Concrete value of step `index` on a numeric parameter's grid.
pub fn grid_value(spec: &ParamSpec, index: usize) -> Result<f64> {
    let ParamKind::Numeric {
        min,
        max,
        steps,
        scale,
    } = spec.kind
    else {
        return Err(Error::validation(format!("`{}` is not numeric", spec.name)));
    };
    if index >= steps {
        return Err(Error::Bounds {
            param: spec.name.clone(),
            index,
            steps,
        });
    }
    if steps == 1 || index == 0 {
        return Ok(min);
    }
    if index == steps - 1 {
        return Ok(max);
    }
    let t = index as f64 / (steps - 1) as f64;
    Ok(match scale {
        Scale::Linear => min + index as f64 * (max - min) / (steps - 1) as f64,
        Scale::Log => (min.ln() + t * (max.ln() - min.ln())).exp(),
    })
}

/// Per-layer templates instantiated up to the maximum of `depth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGroup {
    pub name: String,
    /// Name of the numeric parameter holding the number of active layers.
    pub depth: String,
    #[serde(rename = "param")]
    pub templates: Vec<ParamSpec>,
}

/// Input and output shape of the task the candidate networks solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub input_shape: [usize; 3],
    pub num_classes: usize,
}

/// Table-level constants that are not explored but still shape training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedSettings {
    #[serde(default = "default_algorithm")]
    pub algorithm: String,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
}

fn default_algorithm() -> String {
    "sgd".to_owned()
}
fn default_batch() -> usize {
    200
}
fn default_epochs() -> usize {
    10
}

impl Default for FixedSettings {
    fn default() -> Self {
        FixedSettings {
            algorithm: default_algorithm(),
            batch_size: default_batch(),
            epochs: default_epochs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Slot {
    pub name: String,
    pub spec: ParamSpec,
    /// `(group index, 1-based layer, template index)` for group slots.
    pub layer: Option<(usize, usize, usize)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SpaceFile {
    name: String,
    task: Task,
    #[serde(default)]
    fixed: FixedSettings,
    #[serde(default, rename = "param")]
    params: Vec<ParamSpec>,
    #[serde(default, rename = "group")]
    groups: Vec<LayerGroup>,
}

impl TryFrom<SpaceFile> for DesignSpace {
    type Error = Error;

    fn try_from(f: SpaceFile) -> Result<Self> {
        DesignSpace::new(&f.name, f.task, f.fixed, f.params, f.groups)
    }
}

impl From<DesignSpace> for SpaceFile {
    fn from(s: DesignSpace) -> Self {
        SpaceFile {
            name: s.name,
            task: s.task,
            fixed: s.fixed,
            params: s.params,
            groups: s.groups,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpaceFile", into = "SpaceFile")]
pub struct DesignSpace {
    name: String,
    task: Task,
    fixed: FixedSettings,
    params: Vec<ParamSpec>,
    groups: Vec<LayerGroup>,
    slots: Vec<Slot>,
    group_depth_slot: Vec<usize>,
    encoded_len: usize,
}

/// One point of a [`DesignSpace`]: a grid or option index per slot, `None`
/// for slots of inactive layers.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CandidateConfig(pub Vec<Option<usize>>);

impl CandidateConfig {
    pub fn indices(&self) -> &[Option<usize>] {
        &self.0
    }
}

/// Surrogate input: numeric slots scaled by their maximum, categorical
/// slots one-hot in {-1, +1}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EncodedVector(pub Vec<f64>);

impl EncodedVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParamValue<'a> {
    Numeric(f64),
    Categorical(&'a str),
    Absent,
}

impl fmt::Display for ParamValue<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Numeric(v) => write!(f, "{v}"),
            ParamValue::Categorical(s) => f.write_str(s),
            ParamValue::Absent => f.write_str("-"),
        }
    }
}

/// Random-walk proposal settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Proposal {
    /// Standard deviation as a fraction of each numeric parameter's index range.
    pub sigma: f64,
    /// Probability of resampling each categorical parameter.
    pub p_cat: f64,
}

impl Default for Proposal {
    fn default() -> Self {
        Proposal {
            sigma: 0.15,
            p_cat: 0.2,
        }
    }
}

impl DesignSpace {
    pub fn new(
        name: &str,
        task: Task,
        fixed: FixedSettings,
        params: Vec<ParamSpec>,
        groups: Vec<LayerGroup>,
    ) -> Result<Self> {
        if task.input_shape.contains(&0) || task.num_classes == 0 {
            return Err(Error::validation("task dimensions must be positive"));
        }
        for p in params.iter().chain(groups.iter().flat_map(|g| &g.templates)) {
            p.validate()?;
        }

        let mut slots = Vec::new();
        let mut group_depth_slot = vec![usize::MAX; groups.len()];
        for p in &params {
            let depth_slot = slots.len();
            slots.push(Slot {
                name: p.name.clone(),
                spec: p.clone(),
                layer: None,
            });
            let owners: Vec<usize> = (0..groups.len())
                .filter(|&g| groups[g].depth == p.name)
                .collect();
            if owners.len() > 1 {
                return Err(Error::validation(format!(
                    "`{}` gates more than one layer group",
                    p.name
                )));
            }
            let Some(&g) = owners.first() else { continue };
            let max_depth = depth_values(p)?.into_iter().max().unwrap_or(0);
            group_depth_slot[g] = depth_slot;
            for layer in 1..=max_depth {
                for (t, template) in groups[g].templates.iter().enumerate() {
                    slots.push(Slot {
                        name: format!("{}_{layer}", template.name),
                        spec: template.clone(),
                        layer: Some((g, layer, t)),
                    });
                }
            }
        }
        if let Some(g) = group_depth_slot.iter().position(|&s| s == usize::MAX) {
            return Err(Error::validation(format!(
                "group `{}` refers to unknown depth parameter `{}`",
                groups[g].name, groups[g].depth
            )));
        }
        let mut seen = HashMap::new();
        for (i, s) in slots.iter().enumerate() {
            if seen.insert(s.name.as_str(), i).is_some() {
                return Err(Error::validation(format!("duplicate slot name `{}`", s.name)));
            }
        }
        let encoded_len = slots
            .iter()
            .map(|s| match &s.spec.kind {
                ParamKind::Numeric { .. } => 1,
                ParamKind::Categorical { options } => options.len(),
            })
            .sum();
        Ok(DesignSpace {
            name: name.to_owned(),
            task,
            fixed,
            params,
            groups,
            slots,
            group_depth_slot,
            encoded_len,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::validation(format!("design space file: {e}")))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("design space serializes to toml")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn task(&self) -> &Task {
        &self.task
    }

    pub fn fixed(&self) -> &FixedSettings {
        &self.fixed
    }

    pub fn params(&self) -> &[ParamSpec] {
        &self.params
    }

    pub fn groups(&self) -> &[LayerGroup] {
        &self.groups
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn slot_index(&self, name: &str) -> Option<usize> {
        self.slots.iter().position(|s| s.name == name)
    }

    pub fn encoded_len(&self) -> usize {
        self.encoded_len
    }

    /// Number of active layers of group `g` in `config`.
    pub fn depth(&self, config: &CandidateConfig, g: usize) -> usize {
        let slot = self.group_depth_slot[g];
        match config.0.get(slot).copied().flatten() {
            Some(idx) => grid_value(&self.slots[slot].spec, idx)
                .map(|v| v.round() as usize)
                .unwrap_or(0),
            None => 0,
        }
    }

    fn slot_active(&self, partial: &[Option<usize>], j: usize) -> bool {
        match self.slots[j].layer {
            None => true,
            Some((g, layer, _)) => {
                let depth_slot = self.group_depth_slot[g];
                let Some(idx) = partial[depth_slot] else {
                    return false;
                };
                let depth = grid_value(&self.slots[depth_slot].spec, idx)
                    .map(|v| v.round() as usize)
                    .unwrap_or(0);
                layer <= depth
            }
        }
    }

    /// Checks that every active slot carries an in-range index and every
    /// inactive slot is empty.
    pub fn validate(&self, config: &CandidateConfig) -> Result<()> {
        if config.0.len() != self.slots.len() {
            return Err(Error::validation(format!(
                "config has {} slots, space `{}` has {}",
                config.0.len(),
                self.name,
                self.slots.len()
            )));
        }
        for (j, slot) in self.slots.iter().enumerate() {
            match (self.slot_active(&config.0, j), config.0[j]) {
                (true, Some(idx)) if idx < slot.spec.size() => {}
                (true, Some(idx)) => {
                    return Err(Error::Bounds {
                        param: slot.name.clone(),
                        index: idx,
                        steps: slot.spec.size(),
                    })
                }
                (true, None) => {
                    return Err(Error::validation(format!("active slot `{}` unassigned", slot.name)))
                }
                (false, Some(_)) => {
                    return Err(Error::validation(format!(
                        "inactive slot `{}` carries a value",
                        slot.name
                    )))
                }
                (false, None) => {}
            }
        }
        Ok(())
    }

    pub fn value(&self, config: &CandidateConfig, slot: usize) -> ParamValue<'_> {
        let spec = &self.slots[slot].spec;
        match (config.0.get(slot).copied().flatten(), &spec.kind) {
            (None, _) => ParamValue::Absent,
            (Some(i), ParamKind::Numeric { .. }) => {
                ParamValue::Numeric(grid_value(spec, i).unwrap_or(f64::NAN))
            }
            (Some(i), ParamKind::Categorical { options }) => {
                ParamValue::Categorical(options.get(i).map(String::as_str).unwrap_or("?"))
            }
        }
    }

    pub fn value_by_name(&self, config: &CandidateConfig, name: &str) -> Option<ParamValue<'_>> {
        self.slot_index(name).map(|i| self.value(config, i))
    }

    /// Stable textual identity of a config: `name=index` for numeric slots,
    /// `name=label` for categorical ones, `;`-separated, inactive slots
    /// omitted.
    pub fn canonical_key(&self, config: &CandidateConfig) -> String {
        let mut parts = Vec::with_capacity(self.slots.len());
        for (j, slot) in self.slots.iter().enumerate() {
            let Some(idx) = config.0.get(j).copied().flatten() else {
                continue;
            };
            match &slot.spec.kind {
                ParamKind::Numeric { .. } => parts.push(format!("{}={idx}", slot.name)),
                ParamKind::Categorical { options } => {
                    parts.push(format!("{}={}", slot.name, options[idx]))
                }
            }
        }
        parts.join(";")
    }

    /// Inverse of [`canonical_key`](Self::canonical_key).
    pub fn parse_key(&self, key: &str) -> Result<CandidateConfig> {
        let mut slots = vec![None; self.slots.len()];
        for part in key.split(';').filter(|p| !p.is_empty()) {
            let (name, value) = part
                .split_once('=')
                .ok_or_else(|| Error::validation(format!("bad key component `{part}`")))?;
            let j = self
                .slot_index(name)
                .ok_or_else(|| Error::validation(format!("unknown slot `{name}`")))?;
            let idx = match &self.slots[j].spec.kind {
                ParamKind::Numeric { .. } => value
                    .parse::<usize>()
                    .map_err(|_| Error::validation(format!("bad index in `{part}`")))?,
                ParamKind::Categorical { options } => options
                    .iter()
                    .position(|o| o == value)
                    .ok_or_else(|| Error::validation(format!("unknown option in `{part}`")))?,
            };
            slots[j] = Some(idx);
        }
        let config = CandidateConfig(slots);
        self.validate(&config)?;
        Ok(config)
    }

    pub fn encode(&self, config: &CandidateConfig) -> Result<EncodedVector> {
        self.validate(config)?;
        let mut out = Vec::with_capacity(self.encoded_len);
        for (j, slot) in self.slots.iter().enumerate() {
            match (&slot.spec.kind, config.0[j]) {
                (ParamKind::Numeric { max, .. }, Some(idx)) => {
                    out.push(grid_value(&slot.spec, idx)? / max)
                }
                (ParamKind::Numeric { .. }, None) => out.push(0.0),
                (ParamKind::Categorical { options }, chosen) => {
                    out.extend((0..options.len()).map(|o| if Some(o) == chosen { 1.0 } else { -1.0 }))
                }
            }
        }
        debug_assert_eq!(out.len(), self.encoded_len);
        Ok(EncodedVector(out))
    }

    /// Exact number of distinct configurations, summing over active depths.
    pub fn space_size(&self) -> u128 {
        let mut total: u128 = 1;
        for p in &self.params {
            let factor = match self.groups.iter().position(|g| g.depth == p.name) {
                None => p.size() as u128,
                Some(g) => {
                    let per_layer: u128 = self.groups[g]
                        .templates
                        .iter()
                        .map(|t| t.size() as u128)
                        .product();
                    depth_values(p)
                        .unwrap_or_default()
                        .into_iter()
                        .map(|d| per_layer.saturating_pow(d as u32))
                        .fold(0u128, u128::saturating_add)
                }
            };
            total = total.saturating_mul(factor);
        }
        total
    }

    /// Every configuration exactly once, in a fixed lexicographic order
    /// (first slot varies slowest).
    pub fn enumerate(&self) -> Enumerate<'_> {
        let mut first = vec![None; self.slots.len()];
        self.reset_tail(&mut first, 0);
        Enumerate {
            space: self,
            next: Some(first),
        }
    }

    fn reset_tail(&self, cfg: &mut [Option<usize>], from: usize) {
        for j in from..self.slots.len() {
            cfg[j] = self.slot_active(cfg, j).then_some(0);
        }
    }

    /// Draws each active slot uniformly, depth parameters first, so every
    /// configuration has nonzero probability.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> CandidateConfig {
        let mut cfg = vec![None; self.slots.len()];
        for j in 0..self.slots.len() {
            if self.slot_active(&cfg, j) {
                cfg[j] = Some(rng.random_range(0..self.slots[j].spec.size()));
            }
        }
        CandidateConfig(cfg)
    }

    /// Gaussian random-walk step around `current`.
    ///
    /// Numeric slots move by a rounded normal offset with standard deviation
    /// `sigma * (steps - 1)` grid indices, clamped to the grid. Categorical
    /// slots are resampled uniformly with probability `p_cat`. A layer that
    /// becomes active because the depth grew starts from the values of the
    /// layer before it and is then perturbed like any other slot.
    pub fn propose<R: Rng + ?Sized>(
        &self,
        current: &CandidateConfig,
        proposal: &Proposal,
        rng: &mut R,
    ) -> CandidateConfig {
        let mut cfg: Vec<Option<usize>> = vec![None; self.slots.len()];
        for j in 0..self.slots.len() {
            if !self.slot_active(&cfg, j) {
                continue;
            }
            let slot = &self.slots[j];
            let base = match current.0.get(j).copied().flatten() {
                Some(i) => i,
                None => match slot.layer {
                    Some((g, layer, _)) if layer > 1 => {
                        let per_layer = self.groups[g].templates.len();
                        cfg[j - per_layer].unwrap_or(0)
                    }
                    _ => 0,
                },
            };
            let size = slot.spec.size();
            let idx = match slot.spec.kind {
                ParamKind::Numeric { .. } if size > 1 => {
                    let sd = proposal.sigma * (size - 1) as f64;
                    let offset = Normal::new(0.0, sd)
                        .map(|n| n.sample(rng))
                        .unwrap_or(0.0);
                    (base as f64 + offset).round().clamp(0.0, (size - 1) as f64) as usize
                }
                ParamKind::Categorical { .. } if size > 1 => {
                    if rng.random::<f64>() < proposal.p_cat {
                        rng.random_range(0..size)
                    } else {
                        base
                    }
                }
                _ => 0,
            };
            cfg[j] = Some(idx);
        }
        CandidateConfig(cfg)
    }
}

fn depth_values(p: &ParamSpec) -> Result<Vec<usize>> {
    if !p.is_numeric() {
        return Err(Error::validation(format!("depth parameter `{}` must be numeric", p.name)));
    }
    (0..p.size())
        .map(|i| {
            let v = grid_value(p, i)?;
            if v < 1.0 || (v - v.round()).abs() > 1e-9 {
                Err(Error::validation(format!(
                    "depth parameter `{}` has non-integer or zero grid value {v}",
                    p.name
                )))
            } else {
                Ok(v.round() as usize)
            }
        })
        .collect()
}

pub struct Enumerate<'a> {
    space: &'a DesignSpace,
    next: Option<Vec<Option<usize>>>,
}

impl Iterator for Enumerate<'_> {
    type Item = CandidateConfig;

    fn next(&mut self) -> Option<CandidateConfig> {
        let current = self.next.take()?;
        let mut cfg = current.clone();
        for i in (0..cfg.len()).rev() {
            let Some(idx) = cfg[i] else { continue };
            if idx + 1 < self.space.slots[i].spec.size() {
                cfg[i] = Some(idx + 1);
                self.space.reset_tail(&mut cfg, i + 1);
                self.next = Some(cfg);
                break;
            }
        }
        Some(CandidateConfig(current))
    }
}
