//! Surrogate-guided design space exploration.
//!
//! Each iteration proposes candidates around the last evaluated
//! configuration, predicts their error with the surrogate, pairs it with the
//! analytic cost and keeps a candidate with probability `alpha` if the
//! current front of measured points dominates it, `1 - alpha` otherwise.
//! The accepted candidate is evaluated, added to the training set and the
//! front, and the surrogate is refit.
//!
//! # Log format
//!
//! A run log is line-delimited JSON, appended as the run progresses. The
//! first line is a `header`; every other line is an `iteration` or a
//! `skipped` record:
//!
//! * `header`: `schema` (currently 1), `space` (the design space as TOML),
//!   `settings` (every [`DseConfig`] field except `max_iterations`, so a run
//!   can be extended).
//! * `iteration`: `iteration` (1-based), `key` (canonical config key),
//!   `config` (slot indices, `null` when inactive), `encoded`,
//!   `predicted_error` (clamped surrogate output before evaluation),
//!   `measured_error`, `cost`, `proposals` (proposals drawn during the
//!   iteration, including rejected ones), `front` (iteration numbers of the
//!   front members after this iteration), `rng_word_pos` (generator position
//!   after the surrogate refit) and an optional `note`.
//! * `skipped`: `key`, `config`, `reason` for a candidate the evaluator
//!   failed on.
//!
//! Resuming replays the log through the same deterministic loop, using the
//! logged measurements instead of calling the evaluator, and checks every
//! replayed record against the log.

use std::collections::{HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost_model::{cnn_counts, total_cost, CostParams};
use crate::design_space::{CandidateConfig, DesignSpace, EncodedVector, Proposal};
use crate::error::{Error, Result};
use crate::evaluator::{build_topology, EvaluationResult, Evaluator};
use crate::pareto::{adrs, ObjectivePoint, ParetoFront};
use crate::surrogate::{init_regressor, RegressorModel, SurrogateTrainConfig, TrainingSet};

pub const LOG_SCHEMA_VERSION: u32 = 1;

/// Consecutive evaluator failures tolerated before the run aborts.
const MAX_CONSECUTIVE_FAILURES: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DseConfig {
    pub alpha: f64,
    pub max_iterations: usize,
    pub proposal: Proposal,
    pub seed: u64,
    pub surrogate: SurrogateTrainConfig,
    pub costs: CostParams,
    pub proposal_cap: usize,
}

impl Default for DseConfig {
    fn default() -> Self {
        DseConfig {
            alpha: 1e-4,
            max_iterations: 200,
            proposal: Proposal::default(),
            seed: 0,
            surrogate: SurrogateTrainConfig::default(),
            costs: CostParams::default(),
            proposal_cap: 100_000,
        }
    }
}

impl DseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::validation(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if self.max_iterations == 0 {
            return Err(Error::validation("max_iterations must be >= 1"));
        }
        if !(self.proposal.sigma >= 0.0) || !self.proposal.sigma.is_finite() {
            return Err(Error::validation("sigma must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.proposal.p_cat) {
            return Err(Error::validation("categorical resampling probability outside [0, 1]"));
        }
        if self.proposal_cap == 0 {
            return Err(Error::validation("proposal cap must be >= 1"));
        }
        self.surrogate.validate()?;
        self.costs.validate()
    }

}

/// The settings that determine a run's trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub alpha: f64,
    pub proposal: Proposal,
    pub seed: u64,
    pub surrogate: SurrogateTrainConfig,
    pub costs: CostParams,
    pub proposal_cap: usize,
}

impl From<&DseConfig> for RunSettings {
    fn from(c: &DseConfig) -> Self {
        RunSettings {
            alpha: c.alpha,
            proposal: c.proposal,
            seed: c.seed,
            surrogate: c.surrogate,
            costs: c.costs,
            proposal_cap: c.proposal_cap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub key: String,
    pub config: CandidateConfig,
    pub encoded: EncodedVector,
    pub predicted_error: f64,
    pub measured_error: f64,
    pub cost: f64,
    pub proposals: usize,
    pub front: Vec<usize>,
    #[serde(with = "u128_string")]
    pub rng_word_pos: u128,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl IterationRecord {
    pub fn prediction_error(&self) -> f64 {
        (self.predicted_error - self.measured_error).abs()
    }

    pub fn point(&self) -> ObjectivePoint {
        ObjectivePoint::new(self.measured_error, self.cost, self.key.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedRecord {
    pub key: String,
    pub config: CandidateConfig,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub schema: u32,
    pub space: String,
    pub settings: RunSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Header(LogHeader),
    Iteration(IterationRecord),
    Skipped(SkippedRecord),
}

/// Tagged records are buffered during deserialization, which loses u128
/// support; the generator position travels as a decimal string instead.
mod u128_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u128, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(v)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u128, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Analytic cost of `config` under `costs`.
pub fn candidate_cost(space: &DesignSpace, config: &CandidateConfig, costs: &CostParams) -> Result<f64> {
    let topology = build_topology(config, space)?;
    Ok(total_cost(cnn_counts(&topology)?, costs))
}

/// Acceptance rule: a candidate dominated by `front` is kept with
/// probability `alpha`, any other with probability `1 - alpha`. Draws
/// exactly one uniform number.
pub fn decide<R: Rng + ?Sized>(predicted: &ObjectivePoint, front: &ParetoFront, alpha: f64, rng: &mut R) -> bool {
    let u: f64 = rng.random();
    if front.dominates_point(predicted) {
        u < alpha
    } else {
        u < 1.0 - alpha
    }
}

struct LogWriter {
    out: BufWriter<File>,
}

impl LogWriter {
    fn append(&mut self, record: &LogRecord) -> Result<()> {
        serde_json::to_writer(&mut self.out, record).map_err(std::io::Error::other)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

/// Mutable state of a run.
#[derive(Debug, Clone)]
pub struct ExplorationState {
    /// Walk centre: the last evaluated configuration.
    pub current: Option<CandidateConfig>,
    pub explored: TrainingSet,
    pub records: Vec<IterationRecord>,
    pub skipped: Vec<SkippedRecord>,
    pub front: ParetoFront,
    pub model: RegressorModel,
    evaluated: HashMap<String, usize>,
    rng: ChaCha8Rng,
}

impl ExplorationState {
    fn fresh(space: &DesignSpace, config: &DseConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = init_regressor(space.encoded_len(), &config.surrogate, &mut rng)?;
        Ok(ExplorationState {
            current: None,
            explored: TrainingSet::new(),
            records: Vec::new(),
            skipped: Vec::new(),
            front: ParetoFront::new(),
            model,
            evaluated: HashMap::new(),
            rng,
        })
    }

    /// Number of evaluated candidates.
    pub fn iteration(&self) -> usize {
        self.records.len()
    }

    pub fn rng_word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }
}

enum Measurement {
    /// Error, note, and the logged record when replaying.
    Measured(f64, Option<String>, Option<Box<IterationRecord>>),
    Skipped(String),
}

pub struct Explorer {
    space: DesignSpace,
    config: DseConfig,
    state: ExplorationState,
    log: Option<LogWriter>,
    replay: VecDeque<LogRecord>,
    log_path: Option<PathBuf>,
}

impl Explorer {
    /// Fresh run without a log file.
    pub fn new(space: DesignSpace, config: DseConfig) -> Result<Self> {
        config.validate()?;
        let state = ExplorationState::fresh(&space, &config)?;
        Ok(Explorer {
            space,
            config,
            state,
            log: None,
            replay: VecDeque::new(),
            log_path: None,
        })
    }

    /// Fresh run logging to `path`, which is created or overwritten.
    pub fn with_log(space: DesignSpace, config: DseConfig, path: &Path) -> Result<Self> {
        let mut e = Explorer::new(space, config)?;
        let file = File::create(path)?;
        e.log = Some(LogWriter {
            out: BufWriter::new(file),
        });
        e.log_path = Some(path.to_path_buf());
        e.write(&LogRecord::Header(e.header()))?;
        Ok(e)
    }

    /// Continues the run logged at `path`. A missing or empty log starts a
    /// fresh run; a final record cut short by an interruption is dropped.
    /// `config` must match the logged one except for `max_iterations`.
    pub fn resume(space: DesignSpace, config: DseConfig, path: &Path) -> Result<Self> {
        let (header, records, complete_len) = match read_log_prefix(path)? {
            None => return Explorer::with_log(space, config, path),
            Some(parsed) => parsed,
        };
        let resume_err = |reason: String, last_valid: Option<usize>| Error::Resume {
            path: path.to_path_buf(),
            reason,
            last_valid,
        };
        if header.schema != LOG_SCHEMA_VERSION {
            return Err(resume_err(format!("unsupported schema {}", header.schema), None));
        }
        if header.space != space.to_toml_string() {
            return Err(resume_err("design space differs from the logged one".into(), None));
        }
        if header.settings != RunSettings::from(&config) {
            return Err(resume_err("exploration settings differ from the logged ones".into(), None));
        }
        let file = OpenOptions::new().write(true).open(path)?;
        file.set_len(complete_len)?;
        let mut e = Explorer::new(space, config)?;
        e.log_path = Some(path.to_path_buf());
        e.replay = records.into();
        while e
            .replay
            .iter()
            .any(|r| matches!(r, LogRecord::Iteration(_)))
        {
            e.step(&NoEvaluator)?;
        }
        let out = OpenOptions::new().append(true).open(path)?;
        e.log = Some(LogWriter {
            out: BufWriter::new(out),
        });
        Ok(e)
    }

    fn header(&self) -> LogHeader {
        LogHeader {
            schema: LOG_SCHEMA_VERSION,
            space: self.space.to_toml_string(),
            settings: RunSettings::from(&self.config),
        }
    }

    fn write(&mut self, record: &LogRecord) -> Result<()> {
        match &mut self.log {
            Some(w) => w.append(record),
            None => Ok(()),
        }
    }

    pub fn space(&self) -> &DesignSpace {
        &self.space
    }

    pub fn config(&self) -> &DseConfig {
        &self.config
    }

    pub fn state(&self) -> &ExplorationState {
        &self.state
    }

    pub fn records(&self) -> &[IterationRecord] {
        &self.state.records
    }

    pub fn front(&self) -> &ParetoFront {
        &self.state.front
    }

    pub fn log_path(&self) -> Option<&Path> {
        self.log_path.as_deref()
    }

    /// Changes the iteration budget, e.g. to extend a resumed run.
    pub fn set_max_iterations(&mut self, n: usize) {
        self.config.max_iterations = n.max(1);
    }

    fn measure(&mut self, evaluator: &dyn Evaluator, config: &CandidateConfig, key: &str) -> Result<Measurement> {
        if let Some(next) = self.replay.pop_front() {
            let (logged_key, m) = match next {
                LogRecord::Iteration(r) => (
                    r.key.clone(),
                    Measurement::Measured(r.measured_error, r.note.clone(), Some(Box::new(r))),
                ),
                LogRecord::Skipped(s) => (s.key.clone(), Measurement::Skipped(s.reason.clone())),
                LogRecord::Header(_) => {
                    return Err(self.replay_error("second header in log".into()));
                }
            };
            if logged_key != key {
                return Err(self.replay_error(format!("replay proposed `{key}` but the log holds `{logged_key}`")));
            }
            if let Measurement::Skipped(reason) = &m {
                self.state.skipped.push(SkippedRecord {
                    key: key.to_owned(),
                    config: config.clone(),
                    reason: reason.clone(),
                });
            }
            return Ok(m);
        }
        match evaluator.evaluate(&self.space, config) {
            Ok(r) => Ok(Measurement::Measured(r.error, None, None)),
            Err(Error::Divergence { epoch }) => Ok(Measurement::Measured(
                1.0,
                Some(format!("diverged at epoch {epoch}")),
                None,
            )),
            Err(e) => {
                let skipped = SkippedRecord {
                    key: key.to_owned(),
                    config: config.clone(),
                    reason: e.to_string(),
                };
                self.write(&LogRecord::Skipped(skipped.clone()))?;
                self.state.skipped.push(skipped);
                Ok(Measurement::Skipped(e.to_string()))
            }
        }
    }

    fn replay_error(&self, reason: String) -> Error {
        Error::Resume {
            path: self.log_path.clone().unwrap_or_default(),
            reason,
            last_valid: self.state.records.last().map(|r| r.iteration),
        }
    }

    fn refit(&mut self) -> Result<()> {
        let s = &mut self.state;
        match s.model.fit(&s.explored, &self.config.surrogate, &mut s.rng) {
            Ok(_) => Ok(()),
            Err(Error::Divergence { .. }) => {
                // Restart from fresh weights once before giving up.
                s.model = init_regressor(self.space.encoded_len(), &self.config.surrogate, &mut s.rng)?;
                s.model.fit(&s.explored, &self.config.surrogate, &mut s.rng).map(|_| ())
            }
            Err(e) => Err(e),
        }
    }

    /// Draws candidates until one is accepted and evaluated, then updates the
    /// front and refits the surrogate.
    pub fn step(&mut self, evaluator: &dyn Evaluator) -> Result<IterationRecord> {
        let mut proposals = 0usize;
        let mut failures = 0usize;
        let mut last_prediction = f64::NAN;
        let (candidate, key, encoded, predicted, cost, measured, note, logged) = loop {
            if proposals >= self.config.proposal_cap {
                return Err(Error::Stall {
                    iteration: self.state.iteration() + 1,
                    proposals,
                    front_size: self.state.front.len(),
                    last_prediction,
                });
            }
            proposals += 1;
            let s = &mut self.state;
            let candidate = match &s.current {
                None => self.space.sample_uniform(&mut s.rng),
                Some(c) => self.space.propose(c, &self.config.proposal, &mut s.rng),
            };
            let cost = match candidate_cost(&self.space, &candidate, &self.config.costs) {
                Ok(c) => c,
                Err(Error::InfeasibleTopology { .. }) => continue,
                Err(e) => return Err(e),
            };
            let encoded = self.space.encode(&candidate)?;
            let predicted = s.model.predict(&encoded)?.clamp(0.0, 1.0);
            last_prediction = predicted;
            let forced = s.records.is_empty();
            if !forced && !decide(&ObjectivePoint::new(predicted, cost, ""), &s.front, self.config.alpha, &mut s.rng) {
                continue;
            }
            let key = self.space.canonical_key(&candidate);
            if s.evaluated.contains_key(&key) {
                continue;
            }
            match self.measure(evaluator, &candidate, &key)? {
                Measurement::Measured(e, note, logged) => {
                    break (candidate, key, encoded, predicted, cost, e, note, logged)
                }
                Measurement::Skipped(reason) => {
                    failures += 1;
                    if failures >= MAX_CONSECUTIVE_FAILURES {
                        return Err(Error::Evaluator(format!(
                            "{failures} consecutive evaluation failures, last: {reason}"
                        )));
                    }
                }
            }
        };

        let iteration = self.state.iteration() + 1;
        let s = &mut self.state;
        s.explored.push(encoded.clone(), measured)?;
        s.front.insert(ObjectivePoint::new(measured, cost, key.clone()));
        s.evaluated.insert(key.clone(), iteration);
        s.current = Some(candidate.clone());
        self.refit()?;
        let s = &self.state;
        let mut front: Vec<usize> = s.front.points().iter().map(|p| s.evaluated[&p.config_id]).collect();
        front.sort_unstable();
        let record = IterationRecord {
            iteration,
            key,
            config: candidate,
            encoded,
            predicted_error: predicted,
            measured_error: measured,
            cost,
            proposals,
            front,
            rng_word_pos: s.rng.get_word_pos(),
            note,
        };
        match logged {
            Some(logged) if *logged != record => {
                return Err(self.replay_error(format!(
                    "replayed iteration {iteration} does not match the logged record"
                )));
            }
            Some(_) => {}
            None => self.write(&LogRecord::Iteration(record.clone()))?,
        }
        self.state.records.push(record.clone());
        Ok(record)
    }

    /// Runs until `max_iterations` candidates have been evaluated.
    pub fn run(&mut self, evaluator: &dyn Evaluator) -> Result<()> {
        while self.state.iteration() < self.config.max_iterations {
            self.step(evaluator)?;
        }
        Ok(())
    }
}

struct NoEvaluator;

impl Evaluator for NoEvaluator {
    fn evaluate(&self, _: &DesignSpace, _: &CandidateConfig) -> Result<EvaluationResult> {
        Err(Error::Evaluator("no evaluator available while replaying a log".into()))
    }
}

type LogPrefix = (LogHeader, Vec<LogRecord>, u64);

/// Parses the complete records of a log. Returns `None` for a missing or
/// empty log, otherwise the header, the records after it and the byte length
/// of the complete prefix. A final line without a newline is ignored.
fn read_log_prefix(path: &Path) -> Result<Option<LogPrefix>> {
    if !path.exists() {
        return Ok(None);
    }
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    if complete == 0 {
        return Ok(None);
    }
    let text = std::str::from_utf8(&bytes[..complete]).map_err(|e| Error::Resume {
        path: path.to_path_buf(),
        reason: format!("log is not UTF-8: {e}"),
        last_valid: None,
    })?;
    let mut header = None;
    let mut records = Vec::new();
    let mut last_valid = None;
    for (n, line) in text.lines().enumerate() {
        let record: LogRecord = serde_json::from_str(line).map_err(|e| Error::Resume {
            path: path.to_path_buf(),
            reason: format!("line {}: {e}", n + 1),
            last_valid,
        })?;
        match (n, record) {
            (0, LogRecord::Header(h)) => header = Some(h),
            (0, _) => {
                return Err(Error::Resume {
                    path: path.to_path_buf(),
                    reason: "first record is not a header".into(),
                    last_valid: None,
                })
            }
            (_, LogRecord::Header(_)) => {
                return Err(Error::Resume {
                    path: path.to_path_buf(),
                    reason: format!("line {}: unexpected second header", n + 1),
                    last_valid,
                })
            }
            (_, LogRecord::Iteration(r)) => {
                if r.iteration != last_valid.unwrap_or(0) + 1 {
                    return Err(Error::Resume {
                        path: path.to_path_buf(),
                        reason: format!("line {}: iteration {} out of sequence", n + 1, r.iteration),
                        last_valid,
                    });
                }
                last_valid = Some(r.iteration);
                records.push(LogRecord::Iteration(r));
            }
            (_, r) => records.push(r),
        }
    }
    Ok(header.map(|h| (h, records, complete as u64)))
}

/// Records of a finished or interrupted run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplorationLog {
    pub header: LogHeader,
    pub records: Vec<IterationRecord>,
    pub skipped: Vec<SkippedRecord>,
}

pub fn read_log(path: &Path) -> Result<ExplorationLog> {
    let (header, all, _) = read_log_prefix(path)?.ok_or_else(|| Error::Resume {
        path: path.to_path_buf(),
        reason: "log is empty".into(),
        last_valid: None,
    })?;
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for r in all {
        match r {
            LogRecord::Iteration(r) => records.push(r),
            LogRecord::Skipped(s) => skipped.push(s),
            LogRecord::Header(_) => {}
        }
    }
    Ok(ExplorationLog {
        header,
        records,
        skipped,
    })
}

/// ADRS of the explored front against `reference` after every iteration.
pub fn adrs_curve(records: &[IterationRecord], reference: &ParetoFront) -> Result<Vec<(usize, f64)>> {
    if reference.is_empty() {
        return Err(Error::validation("reference front is empty"));
    }
    let mut front = ParetoFront::new();
    let mut curve = Vec::with_capacity(records.len());
    for r in records {
        front.insert(r.point());
        curve.push((r.iteration, adrs(reference, &front)?));
    }
    Ok(curve)
}

const CURVE_HEADER: &str = "iteration,adrs";

/// Writes an `iteration,adrs` CSV.
pub fn write_curve_csv<W: Write>(mut w: W, curve: &[(usize, f64)]) -> std::io::Result<()> {
    writeln!(w, "{CURVE_HEADER}")?;
    for (i, a) in curve {
        writeln!(w, "{i},{a}")?;
    }
    Ok(())
}

pub fn read_curve_csv(path: &Path) -> Result<Vec<(usize, f64)>> {
    let text = std::fs::read_to_string(path)?;
    let bad = |line: usize, reason: &str| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason: reason.to_owned(),
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == CURVE_HEADER => {}
        _ => return Err(bad(1, "expected header `iteration,adrs`")),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (it, a) = line.split_once(',').ok_or_else(|| bad(i + 1, "expected two columns"))?;
        let it = it.trim().parse().map_err(|_| bad(i + 1, "bad iteration"))?;
        let a: f64 = a.trim().parse().map_err(|_| bad(i + 1, "bad adrs value"))?;
        out.push((it, a));
    }
    Ok(out)
}

pub const DEFAULT_EXHAUSTIVE_CEILING: u128 = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct ExhaustiveResult {
    /// One point per feasible configuration, in enumeration order.
    pub points: Vec<ObjectivePoint>,
    pub front: ParetoFront,
    /// Configurations skipped because their topology is infeasible.
    pub infeasible: usize,
}

/// Evaluates every configuration of `space`, fanning out over `workers`
/// threads. Results do not depend on the number of workers.
pub fn exhaustive(
    space: &DesignSpace,
    evaluator: &dyn Evaluator,
    costs: &CostParams,
    ceiling: u128,
    workers: usize,
) -> Result<ExhaustiveResult> {
    let size = space.space_size();
    if size > ceiling {
        return Err(Error::SpaceTooLarge { size, ceiling });
    }
    let configs: Vec<CandidateConfig> = space.enumerate().collect();
    let workers = workers.clamp(1, configs.len().max(1));
    let chunk = configs.len().div_ceil(workers).max(1);
    let eval_one = |c: &CandidateConfig| -> Result<Option<ObjectivePoint>> {
        let cost = match candidate_cost(space, c, costs) {
            Ok(cost) => cost,
            Err(Error::InfeasibleTopology { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        let error = match evaluator.evaluate(space, c) {
            Ok(r) => r.error,
            Err(Error::Divergence { .. }) => 1.0,
            Err(e) => return Err(e),
        };
        Ok(Some(ObjectivePoint::new(error, cost, space.canonical_key(c))))
    };
    let outcomes: Vec<Result<Option<ObjectivePoint>>> = if workers == 1 {
        configs.iter().map(eval_one).collect()
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = configs
                .chunks(chunk)
                .map(|part| s.spawn(move || part.iter().map(eval_one).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("exhaustive worker panicked"))
                .collect()
        })
    };
    let mut points = Vec::with_capacity(outcomes.len());
    let mut infeasible = 0;
    for o in outcomes {
        match o? {
            Some(p) => points.push(p),
            None => infeasible += 1,
        }
    }
    let mut front = ParetoFront::new();
    for p in &points {
        front.insert(p.clone());
    }
    Ok(ExhaustiveResult {
        points,
        front,
        infeasible,
    })
}
