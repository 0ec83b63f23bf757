use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::ValueEnum;
use nndse::cost_model::{breakdown, ConvLayer, CostParams, Topology};
use nndse::evaluator::cache::{default_cache_path, CachedEvaluator};
use nndse::explorer::{
    adrs_curve, exhaustive as run_exhaustive, read_log, write_curve_csv, Explorer, IterationRecord,
};
use nndse::pareto::{adrs_points, front_of, read_csv_file, write_csv, ParetoFront};

use crate::manifest::RunManifest;
use crate::{
    AdrsArgs, CostArgs, EvaluatorArgs, ExhaustiveArgs, ExploreArgs, Failure, SpaceArgs, OUT_DIR_ENV,
};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const LOG_FILE: &str = "log.jsonl";

/// Iterations reported in the ADRS checkpoint table.
const CHECKPOINTS: [usize; 8] = [10, 20, 30, 50, 70, 100, 150, 200];

type CmdResult = Result<(), Failure>;

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn load_manifest(path: Option<&Path>) -> Result<RunManifest, Failure> {
    match path {
        Some(p) => RunManifest::from_file(p).map_err(usage),
        None => Ok(RunManifest::default()),
    }
}

fn apply_space(m: &mut RunManifest, a: &SpaceArgs) {
    if let Some(p) = &a.preset {
        m.preset = Some(p.clone());
        m.space = None;
    }
    if let Some(s) = &a.space {
        m.space = Some(s.clone());
        m.preset = None;
    }
}

fn apply_evaluator(m: &mut RunManifest, a: &EvaluatorArgs) {
    let e = &mut m.evaluator;
    if let Some(k) = a.evaluator {
        e.kind = k;
    }
    if a.mnist_dir.is_some() {
        e.mnist_dir.clone_from(&a.mnist_dir);
    }
    if a.train_limit.is_some() {
        e.train_limit = a.train_limit;
    }
    if a.test_limit.is_some() {
        e.test_limit = a.test_limit;
    }
    if let Some(s) = a.eval_seed {
        e.seed = s;
    }
    if a.program.is_some() {
        e.program.clone_from(&a.program);
    }
    if !a.program_args.is_empty() {
        e.args.clone_from(&a.program_args);
    }
    if let Some(t) = a.timeout {
        e.timeout_secs = t;
    }
}

fn apply_costs(costs: &mut CostParams, weight: Option<f64>, mac: Option<f64>) {
    if let Some(w) = weight {
        costs.weight_unit_cost = w;
    }
    if let Some(m) = mac {
        costs.mac_unit_cost = m;
    }
}

fn out_dir(cli: Option<&PathBuf>, manifest: Option<&PathBuf>) -> Result<PathBuf, Failure> {
    let dir = cli
        .or(manifest)
        .cloned()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("nndse-out"));
    std::path::absolute(&dir).map_err(usage)
}

fn load_reference(path: &Path) -> anyhow::Result<ParetoFront> {
    let front = front_of(&read_csv_file(path)?);
    if front.is_empty() {
        return Err(anyhow!("reference front {} is empty", path.display()));
    }
    Ok(front)
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

pub fn explore(a: ExploreArgs) -> CmdResult {
    let (mut m, resuming) = match &a.resume {
        Some(dir) => {
            let path = dir.join(MANIFEST_FILE);
            if !path.exists() {
                return Err(usage(anyhow!("{} is not a run directory (no {MANIFEST_FILE})", dir.display())));
            }
            let mut m = load_manifest(Some(&path))?;
            m.out = Some(dir.clone());
            (m, true)
        }
        None => (load_manifest(a.manifest.as_deref())?, false),
    };
    apply_space(&mut m, &a.space);
    apply_evaluator(&mut m, &a.eval);
    let dse = &mut m.dse;
    if let Some(n) = a.iters {
        dse.max_iterations = n;
    }
    if let Some(s) = a.seed {
        dse.seed = s;
    }
    if let Some(s) = a.sigma {
        dse.proposal.sigma = s;
    }
    if let Some(p) = a.p_cat {
        dse.proposal.p_cat = p;
    }
    if let Some(x) = a.alpha {
        dse.alpha = x;
    }
    if let Some(c) = a.proposal_cap {
        dse.proposal_cap = c;
    }
    apply_costs(&mut dse.costs, a.weight_cost, a.mac_cost);
    if a.reference.is_some() {
        m.reference.clone_from(&a.reference);
    }
    let out = out_dir(a.out.as_ref(), m.out.as_ref())?;
    m.out = Some(out.clone());
    m.validate().map_err(usage)?;
    for p in [&mut m.space, &mut m.reference, &mut m.evaluator.mnist_dir].into_iter().flatten() {
        *p = std::path::absolute(&*p).map_err(usage)?;
    }
    let space = m.load_space().map_err(usage)?;
    let reference = m.reference.as_deref().map(load_reference).transpose().map_err(usage)?;

    let log = out.join(LOG_FILE);
    if !resuming && fs::metadata(&log).is_ok_and(|md| md.len() > 0) {
        return Err(usage(anyhow!(
            "{} already holds a run; use --resume {} to continue it",
            out.display(),
            out.display()
        )));
    }
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join(MANIFEST_FILE), m.to_toml()?)?;
    let evaluator = CachedEvaluator::with_file(m.build_evaluator()?, &default_cache_path(&out))?;
    let mut explorer = if resuming {
        Explorer::resume(space, m.dse.clone(), &log)?
    } else {
        Explorer::with_log(space, m.dse.clone(), &log)?
    };
    if resuming && !a.quiet {
        eprintln!("resumed after iteration {}", explorer.state().iteration());
    }

    let target = m.dse.max_iterations;
    let outcome = loop {
        if explorer.state().iteration() >= target {
            break Ok(());
        }
        match explorer.step(&evaluator) {
            Ok(r) => {
                if !a.quiet {
                    eprintln!(
                        "iteration {}/{target}  error {:.4}  predicted {:.4}  cost {}  proposals {}  front {}",
                        r.iteration,
                        r.measured_error,
                        r.predicted_error,
                        r.cost,
                        r.proposals,
                        explorer.front().len()
                    );
                }
            }
            Err(e) => break Err(e),
        }
    };
    write_run_outputs(&out, &m, &explorer, reference.as_ref(), outcome.as_ref().err())?;
    outcome.map_err(|e| {
        Failure::Runtime(anyhow::Error::new(e).context(format!(
            "exploration stopped after {} iterations; partial results are in {}",
            explorer.state().iteration(),
            out.display()
        )))
    })
}

fn mean_abs_prediction_error(records: &[IterationRecord]) -> Option<f64> {
    let q = records.len() / 4;
    if q == 0 {
        return None;
    }
    let tail = &records[records.len() - q..];
    Some(tail.iter().map(IterationRecord::prediction_error).sum::<f64>() / q as f64)
}

fn write_run_outputs(
    out: &Path,
    m: &RunManifest,
    explorer: &Explorer,
    reference: Option<&ParetoFront>,
    failure: Option<&nndse::Error>,
) -> anyhow::Result<()> {
    let records = explorer.records();
    write_csv(create(&out.join("front.csv"))?, explorer.front().points())?;

    let mut w = create(&out.join("iterations.csv"))?;
    writeln!(w, "config_id,error,cost,iteration,predicted_error,abs_prediction_error,proposals")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.key,
            r.measured_error,
            r.cost,
            r.iteration,
            r.predicted_error,
            r.prediction_error(),
            r.proposals
        )?;
    }
    w.flush()?;

    let curve = match reference {
        Some(reference) if !records.is_empty() => {
            let curve = adrs_curve(records, reference)?;
            write_curve_csv(create(&out.join("adrs.csv"))?, &curve)?;
            Some(curve)
        }
        _ => None,
    };

    let mut s = create(&out.join("summary.txt"))?;
    let space = explorer.space();
    writeln!(s, "space: {}", space.name())?;
    writeln!(s, "space_size: {}", space.space_size())?;
    if let Some(kind) = m.evaluator.kind.to_possible_value() {
        writeln!(s, "evaluator: {}", kind.get_name())?;
    }
    writeln!(s, "seed: {}", m.dse.seed)?;
    match failure {
        None => writeln!(s, "status: complete")?,
        Some(e) => writeln!(s, "status: stopped: {e}")?,
    }
    writeln!(s, "iterations: {}", records.len())?;
    writeln!(s, "skipped_evaluations: {}", explorer.state().skipped.len())?;
    writeln!(s, "proposals: {}", records.iter().map(|r| r.proposals).sum::<usize>())?;
    writeln!(s, "front_size: {}", explorer.front().len())?;
    if let Some(best) = explorer.front().points().iter().min_by(|a, b| a.error.total_cmp(&b.error)) {
        writeln!(s, "lowest_error: {} ({}, cost {})", best.error, best.config_id, best.cost)?;
    }
    if let Some(e) = mean_abs_prediction_error(records) {
        writeln!(s, "mean_abs_prediction_error_last_quarter: {e}")?;
    }
    if let Some(curve) = &curve {
        for (i, a) in curve.iter().filter(|(i, _)| CHECKPOINTS.contains(i)) {
            writeln!(s, "adrs_at_{i}: {a}")?;
        }
        if let Some((_, a)) = curve.last() {
            writeln!(s, "final_adrs: {a}")?;
        }
    }
    s.flush()?;
    Ok(())
}

pub fn exhaustive(a: ExhaustiveArgs) -> CmdResult {
    let mut m = load_manifest(a.manifest.as_deref())?;
    apply_space(&mut m, &a.space);
    apply_evaluator(&mut m, &a.eval);
    apply_costs(&mut m.dse.costs, a.weight_cost, a.mac_cost);
    let out = out_dir(a.out.as_ref(), m.out.as_ref())?;
    if a.workers == 0 {
        return Err(usage(anyhow!("--workers must be at least 1")));
    }
    m.validate().map_err(usage)?;
    let space = m.load_space().map_err(usage)?;
    let evaluator = m.build_evaluator()?;
    let result = run_exhaustive(&space, evaluator.as_ref(), &m.dse.costs, a.ceiling, a.workers)?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write_csv(create(&out.join("points.csv"))?, &result.points)?;
    write_csv(create(&out.join("front.csv"))?, result.front.points())?;
    println!(
        "evaluated {} configurations ({} infeasible skipped); front of {} points written to {}",
        result.points.len(),
        result.infeasible,
        result.front.len(),
        out.join("front.csv").display()
    );
    Ok(())
}

pub fn adrs(a: AdrsArgs) -> CmdResult {
    let reference = load_reference(&a.reference)?;
    if let Some(front) = &a.front {
        let approx = read_csv_file(front)?;
        println!("{:?}", adrs_points(reference.points(), &approx)?);
        return Ok(());
    }
    let log_path = a.log.as_ref().expect("clap requires --front or --log");
    let log = read_log(log_path)?;
    let curve = adrs_curve(&log.records, &reference)?;
    let Some(&(_, last)) = curve.last() else {
        return Err(Failure::Runtime(anyhow!("{} has no iterations", log_path.display())));
    };
    let curve_path = a
        .curve
        .clone()
        .unwrap_or_else(|| log_path.parent().unwrap_or(Path::new(".")).join("adrs.csv"));
    write_curve_csv(create(&curve_path)?, &curve)?;
    println!("{last:?}");
    for (i, v) in curve.iter().filter(|(i, _)| CHECKPOINTS.contains(i)) {
        println!("{i}\t{v}");
    }
    Ok(())
}

fn parse_input_shape(s: &str) -> anyhow::Result<[usize; 3]> {
    let dims: Vec<usize> = s
        .split('x')
        .map(|d| d.trim().parse())
        .collect::<Result<_, _>>()
        .with_context(|| format!("bad input shape `{s}`, expected CxHxW"))?;
    <[usize; 3]>::try_from(dims).map_err(|_| anyhow!("bad input shape `{s}`, expected CxHxW"))
}

fn parse_conv(s: &str) -> anyhow::Result<ConvLayer> {
    let parts: Vec<usize> = s
        .split(':')
        .map(|d| d.trim().parse())
        .collect::<Result<_, _>>()
        .with_context(|| format!("bad convolution `{s}`, expected filters:kernel:pool"))?;
    match parts[..] {
        [filters, kernel, pool] => Ok(ConvLayer { filters, kernel, pool }),
        _ => Err(anyhow!("bad convolution `{s}`, expected filters:kernel:pool")),
    }
}

pub fn cost(a: CostArgs) -> CmdResult {
    let mut costs = CostParams::default();
    apply_costs(&mut costs, a.weight_cost, a.mac_cost);
    costs.validate().map_err(usage)?;
    let topology = match (&a.mlp, &a.input) {
        (Some(sizes), _) => Topology::mlp(sizes).map_err(usage)?,
        (None, Some(input)) => Topology {
            input_shape: parse_input_shape(input).map_err(usage)?,
            conv_layers: a.conv.iter().map(|c| parse_conv(c)).collect::<Result<_, _>>().map_err(usage)?,
            fc_layers: a.fc.clone(),
            output_nodes: a.outputs.expect("clap requires --outputs with --input"),
        },
        (None, None) => return Err(usage(anyhow!("describe a topology with --mlp or --input/--conv/--fc/--outputs"))),
    };
    let b = breakdown(&topology, &costs)?;
    println!("weights {}", b.num_weights);
    println!("macs {}", b.num_macs);
    println!("total {}", b.total);
    Ok(())
}
