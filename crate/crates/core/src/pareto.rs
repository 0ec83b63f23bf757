//! Two-objective Pareto fronts (error, cost; both minimized) and the ADRS
//! distance between an approximate front and a reference one.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectivePoint {
    pub error: f64,
    pub cost: f64,
    pub config_id: String,
}

impl ObjectivePoint {
    pub fn new(error: f64, cost: f64, config_id: impl Into<String>) -> Self {
        ObjectivePoint {
            error,
            cost,
            config_id: config_id.into(),
        }
    }

    fn same_objectives(&self, other: &ObjectivePoint) -> bool {
        self.error == other.error && self.cost == other.cost
    }
}

/// `a` dominates `b` if it is strictly better in one objective and no worse
/// in the other.
pub fn dominates(a: &ObjectivePoint, b: &ObjectivePoint) -> bool {
    (a.error < b.error && a.cost <= b.cost) || (a.cost < b.cost && a.error <= b.error)
}

/// Non-dominated set, sorted by ascending cost with strictly descending
/// error. Points with identical objectives are collapsed onto the one with
/// the smallest `config_id`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParetoFront {
    points: Vec<ObjectivePoint>,
}

impl ParetoFront {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn points(&self) -> &[ObjectivePoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// True if any member dominates `p`.
    pub fn dominates_point(&self, p: &ObjectivePoint) -> bool {
        self.points.iter().any(|q| dominates(q, p))
    }

    /// Adds `p` unless a member dominates it, evicting every member `p`
    /// dominates. Returns whether the front changed.
    pub fn insert(&mut self, p: ObjectivePoint) -> bool {
        if self.dominates_point(&p) {
            return false;
        }
        if let Some(twin) = self.points.iter_mut().find(|q| q.same_objectives(&p)) {
            if p.config_id < twin.config_id {
                *twin = p;
                return true;
            }
            return false;
        }
        self.points.retain(|q| !dominates(&p, q));
        let at = self
            .points
            .partition_point(|q| q.cost < p.cost || (q.cost == p.cost && q.error < p.error));
        self.points.insert(at, p);
        true
    }

    pub fn check_invariant(&self) -> bool {
        self.points.windows(2).all(|w| w[0].cost < w[1].cost && w[0].error > w[1].error)
    }
}

/// Brute-force O(n^2) non-dominated filter.
pub fn front_of(points: &[ObjectivePoint]) -> ParetoFront {
    let mut kept: Vec<ObjectivePoint> = points
        .iter()
        .filter(|p| !points.iter().any(|q| dominates(q, p)))
        .cloned()
        .collect();
    kept.sort_by(|a, b| {
        a.cost
            .total_cmp(&b.cost)
            .then(a.error.total_cmp(&b.error))
            .then(a.config_id.cmp(&b.config_id))
    });
    kept.dedup_by(|later, earlier| later.same_objectives(earlier));
    ParetoFront { points: kept }
}

/// Worst relative excess of `approx` over `reference` across both
/// objectives, clamped at zero.
pub fn delta(reference: &ObjectivePoint, approx: &ObjectivePoint) -> Result<f64> {
    for v in [reference.error, reference.cost] {
        if !(v > 0.0) {
            return Err(Error::Normalization(v));
        }
    }
    let de = (approx.error - reference.error) / reference.error;
    let dc = (approx.cost - reference.cost) / reference.cost;
    Ok(de.max(dc).max(0.0))
}

/// Average over `exact` of the distance to the closest member of `approx`.
pub fn adrs(exact: &ParetoFront, approx: &ParetoFront) -> Result<f64> {
    adrs_points(exact.points(), approx.points())
}

pub fn adrs_points(exact: &[ObjectivePoint], approx: &[ObjectivePoint]) -> Result<f64> {
    if exact.is_empty() || approx.is_empty() {
        return Err(Error::validation("ADRS needs two non-empty fronts"));
    }
    let mut sum = 0.0;
    for r in exact {
        let mut best = f64::INFINITY;
        for a in approx {
            best = best.min(delta(r, a)?);
        }
        sum += best;
    }
    Ok(sum / exact.len() as f64)
}

const CSV_HEADER: &str = "config_id,error,cost";

/// Writes `config_id,error,cost` rows in front order (ascending cost).
pub fn write_csv<W: Write>(mut w: W, points: &[ObjectivePoint]) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for p in points {
        writeln!(w, "{},{},{}", p.config_id, p.error, p.cost)?;
    }
    Ok(())
}

/// Reads rows written by [`write_csv`]. Extra trailing columns are ignored,
/// so all-points exports load as well.
pub fn read_csv<R: BufRead>(r: R, path: &Path) -> Result<Vec<ObjectivePoint>> {
    let parse_err = |line: usize, reason: String| Error::Parse {
        path: path.to_owned(),
        line,
        reason,
    };
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if i == 0 {
            if !line.starts_with(CSV_HEADER) {
                return Err(parse_err(lineno, format!("expected header `{CSV_HEADER}`")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.split(',');
        let (Some(id), Some(err), Some(cost)) = (cols.next(), cols.next(), cols.next()) else {
            return Err(parse_err(lineno, "expected at least 3 columns".into()));
        };
        let error: f64 = err
            .trim()
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad error value `{err}`")))?;
        let cost: f64 = cost
            .trim()
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad cost value `{cost}`")))?;
        if !error.is_finite() || !cost.is_finite() {
            return Err(parse_err(lineno, "non-finite objective".into()));
        }
        out.push(ObjectivePoint::new(error, cost, id));
    }
    Ok(out)
}

pub fn read_csv_file(path: &Path) -> Result<Vec<ObjectivePoint>> {
    let f = std::fs::File::open(path)?;
    read_csv(std::io::BufReader::new(f), path)
}
