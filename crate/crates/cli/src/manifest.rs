//! Run manifest: everything needed to start or resume an exploration.
//!
//! Example:
//!
//! ```toml
//! preset = "restricted-mnist"
//! out = "runs/seed7"
//! reference = "runs/exhaustive/front.csv"
//!
//! [evaluator]
//! kind = "synthetic"
//!
//! [dse]
//! seed = 7
//! max_iterations = 200
//! alpha = 0.0001
//!
//! [dse.proposal]
//! sigma = 0.15
//! ```
//!
//! `space` (a space file path) may replace `preset`. Relative paths are
//! resolved against the manifest's directory. Every `[dse]` field is
//! optional and defaults to the library defaults.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use nndse::design_space::DesignSpace;
use nndse::evaluator::dataset::Dataset;
use nndse::evaluator::external::ExternalEvaluator;
use nndse::evaluator::synthetic::SyntheticEvaluator;
use nndse::evaluator::trainer::ToyEvaluator;
use nndse::evaluator::Evaluator;
use nndse::explorer::DseConfig;
use nndse::presets;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EvaluatorKind {
    #[default]
    Synthetic,
    Toy,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluatorSpec {
    pub kind: EvaluatorKind,
    /// Directory with the four MNIST IDX files (toy evaluator).
    pub mnist_dir: Option<PathBuf>,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    /// Seed of the toy trainer's weight initialization and shuffling.
    pub seed: u64,
    /// External evaluator program and arguments.
    pub program: Option<PathBuf>,
    pub args: Vec<String>,
    pub timeout_secs: f64,
}

impl Default for EvaluatorSpec {
    fn default() -> Self {
        EvaluatorSpec {
            kind: EvaluatorKind::Synthetic,
            mnist_dir: None,
            train_limit: None,
            test_limit: None,
            seed: 0,
            program: None,
            args: Vec::new(),
            timeout_secs: 3600.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunManifest {
    pub preset: Option<String>,
    pub space: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub evaluator: EvaluatorSpec,
    pub dse: DseConfig,
}

impl RunManifest {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        let mut m: RunManifest = toml::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut m.space,
            &mut m.out,
            &mut m.reference,
            &mut m.evaluator.mnist_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(m)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Checks the fields that do not need any file to be opened.
    pub fn validate(&self) -> Result<()> {
        match (&self.preset, &self.space) {
            (None, None) => bail!("no design space: give a preset or a space file"),
            (Some(_), Some(_)) => bail!("give either a preset or a space file, not both"),
            (Some(name), None) if presets::source(name).is_none() => bail!(
                "unknown preset `{name}` (available: {})",
                presets::names().collect::<Vec<_>>().join(", ")
            ),
            _ => {}
        }
        for p in [&self.space, &self.reference, &self.evaluator.mnist_dir].into_iter().flatten() {
            if !p.exists() {
                bail!("{} does not exist", p.display());
            }
        }
        match self.evaluator.kind {
            EvaluatorKind::Toy if self.evaluator.mnist_dir.is_none() => {
                bail!("the toy evaluator needs an MNIST directory (--mnist-dir)")
            }
            EvaluatorKind::External if self.evaluator.program.is_none() => {
                bail!("the external evaluator needs a program (--program)")
            }
            _ => {}
        }
        if !(self.evaluator.timeout_secs > 0.0) || !self.evaluator.timeout_secs.is_finite() {
            bail!("evaluator timeout must be a positive number of seconds");
        }
        self.dse.validate()?;
        Ok(())
    }

    pub fn load_space(&self) -> Result<DesignSpace> {
        if let Some(name) = &self.preset {
            return Ok(presets::load(name)?);
        }
        let path = self.space.as_ref().context("no design space given")?;
        let text = std::fs::read_to_string(path).with_context(|| format!("reading space file {}", path.display()))?;
        DesignSpace::from_toml_str(&text).with_context(|| format!("in space file {}", path.display()))
    }

    pub fn build_evaluator(&self) -> Result<Box<dyn Evaluator>> {
        let e = &self.evaluator;
        Ok(match e.kind {
            EvaluatorKind::Synthetic => Box::new(SyntheticEvaluator),
            EvaluatorKind::Toy => {
                let dir = e.mnist_dir.as_ref().context("no MNIST directory")?;
                let data = Dataset::mnist(dir, e.train_limit, e.test_limit)?;
                Box::new(ToyEvaluator::new(Arc::new(data), e.seed))
            }
            EvaluatorKind::External => Box::new(ExternalEvaluator::new(
                e.program.clone().context("no external program")?,
                e.args.clone(),
                Duration::from_secs_f64(e.timeout_secs),
            )),
        })
    }
}
