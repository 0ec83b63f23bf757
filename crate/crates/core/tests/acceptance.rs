//! Acceptance suite. Runs every criterion at its pinned tolerance, prints one
//! PASS/FAIL line per criterion and exits non-zero if any failed.
//!
//! Criterion 9 needs the MNIST IDX files in `$MNIST_DIR` or
//! `<workspace>/data/mnist` (see `scripts/fetch_mnist.sh`).

use std::collections::HashSet;
use std::io::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use nndse::cost_model::{cnn_counts, mlp_counts, total_cost, ConvLayer, CostParams, Counts, Topology};
use nndse::design_space::{CandidateConfig, DesignSpace};
use nndse::evaluator::cache::CachedEvaluator;
use nndse::evaluator::dataset::Dataset;
use nndse::evaluator::synthetic::SyntheticEvaluator;
use nndse::evaluator::trainer::{train, Network};
use nndse::evaluator::{Activation, EvaluationResult, Evaluator, TrainHyper};
use nndse::explorer::{
    adrs_curve, decide, exhaustive, read_log, DseConfig, Explorer, IterationRecord, DEFAULT_EXHAUSTIVE_CEILING,
};
use nndse::pareto::{adrs, adrs_points, front_of, ObjectivePoint, ParetoFront};
use nndse::presets;
use nndse::surrogate::{gradient_check, init_regressor, SurrogateTrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const ITERATIONS: usize = 200;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

struct Run {
    seed: u64,
    records: Vec<IterationRecord>,
    /// Error that ended the run early.
    stopped: Option<String>,
    log: PathBuf,
    elapsed: Duration,
}

struct Ctx {
    dir: tempfile::TempDir,
    space: DesignSpace,
    reference: Option<ParetoFront>,
    runs: Option<Vec<Run>>,
}

impl Ctx {
    fn reference(&mut self) -> &ParetoFront {
        if self.reference.is_none() {
            let r = exhaustive(
                &self.space,
                &SyntheticEvaluator,
                &CostParams::default(),
                DEFAULT_EXHAUSTIVE_CEILING,
                1,
            )
            .expect("exhaustive search of the restricted space");
            self.reference = Some(r.front);
        }
        self.reference.as_ref().unwrap()
    }

    /// The seeded explorations shared by several criteria, run once.
    fn runs(&mut self) -> &[Run] {
        if self.runs.is_none() {
            let mut runs = Vec::new();
            for seed in SEEDS {
                let log = self.dir.path().join(format!("seed{seed}.jsonl"));
                let config = DseConfig {
                    seed,
                    max_iterations: ITERATIONS,
                    ..DseConfig::default()
                };
                let start = Instant::now();
                let mut e = Explorer::with_log(self.space.clone(), config, &log).expect("explorer");
                let stopped = e.run(&SyntheticEvaluator).err().map(|e| e.to_string());
                runs.push(Run {
                    seed,
                    records: e.records().to_vec(),
                    stopped,
                    log,
                    elapsed: start.elapsed(),
                });
            }
            self.runs = Some(runs);
        }
        self.runs.as_deref().unwrap()
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn encoding_golden(_: &mut Ctx) -> Outcome {
    let space = DesignSpace::from_toml_str(
        r#"
name = "encoding-example"
[task]
input_shape = [1, 28, 28]
num_classes = 10
[[param]]
name = "nodes_1"
kind = "numeric"
min = 10
max = 100
steps = 10
[[param]]
name = "nodes_2"
kind = "numeric"
min = 10
max = 100
steps = 10
[[param]]
name = "activation"
role = "activation"
kind = "categorical"
options = ["relu", "sigmoid"]
[[param]]
name = "learning_rate"
role = "learning_rate"
kind = "numeric"
min = 0.5
max = 1.0
steps = 2
"#,
    )
    .map_err(|e| e.to_string())?;
    let config = space
        .parse_key("nodes_1=1;nodes_2=1;activation=relu;learning_rate=0")
        .map_err(|e| e.to_string())?;
    let got = space.encode(&config).map_err(|e| e.to_string())?.0;
    let want: [f64; 5] = [0.2, 0.2, 1.0, -1.0, 0.5];
    let exact = got.len() == want.len() && got.iter().zip(want).all(|(a, b)| a.to_bits() == b.to_bits());
    check(exact, format!("two layers of 20/100 nodes, relu, lr 0.5 -> {got:?}"))
}

/// Weight and MAC counts by walking every connection.
fn product_sum_oracle(t: &Topology) -> Counts {
    let [mut c, mut h, mut w] = t.input_shape;
    let mut counts = Counts::default();
    for l in &t.conv_layers {
        let (oh, ow) = (h - l.kernel + 1, w - l.kernel + 1);
        let mut weights = 0u64;
        for _f in 0..l.filters {
            for _ch in 0..c {
                for _ky in 0..l.kernel {
                    for _kx in 0..l.kernel {
                        weights += 1;
                    }
                }
            }
        }
        counts.weights += weights;
        for _y in 0..oh {
            for _x in 0..ow {
                counts.macs += weights;
            }
        }
        (c, h, w) = (l.filters, oh / l.pool, ow / l.pool);
    }
    let mut prev = c * h * w;
    for &n in t.fc_layers.iter().chain([&t.output_nodes]) {
        for _ in 0..prev {
            counts.weights += n as u64;
            counts.macs += n as u64;
        }
        prev = n;
    }
    counts
}

fn cost_golden(_: &mut Ctx) -> Outcome {
    let mlp = mlp_counts(&[784, 20, 10]).map_err(|e| e.to_string())?;
    let mlp_total = total_cost(mlp, &CostParams::default());
    let hand = Topology {
        input_shape: [1, 6, 6],
        conv_layers: vec![ConvLayer {
            filters: 5,
            kernel: 3,
            pool: 2,
        }],
        fc_layers: vec![],
        output_nodes: 10,
    };
    let cnn = cnn_counts(&hand).map_err(|e| e.to_string())?;
    let mut ok = mlp == Counts { weights: 15880, macs: 15880 } && mlp_total == 2_223_200.0;
    ok &= cnn == Counts { weights: 245, macs: 920 };

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut random_ok = 0;
    while random_ok < 5 {
        let size = rng.random_range(8..=20);
        let convs = rng.random_range(0..=2);
        let t = Topology {
            input_shape: [rng.random_range(1..=3), size, size],
            conv_layers: (0..convs)
                .map(|_| ConvLayer {
                    filters: rng.random_range(1..=6),
                    kernel: rng.random_range(1..=3),
                    pool: rng.random_range(1..=2),
                })
                .collect(),
            fc_layers: (0..rng.random_range(0..=2)).map(|_| rng.random_range(1..=30)).collect(),
            output_nodes: rng.random_range(2..=10),
        };
        let Ok(counts) = cnn_counts(&t) else { continue };
        ok &= counts == product_sum_oracle(&t);
        random_ok += 1;
    }
    check(
        ok,
        format!(
            "mlp 784,20,10 -> ({}, {}, {mlp_total}); cnn example -> ({}, {}); 5 random topologies vs product-sum oracle",
            mlp.weights, mlp.macs, cnn.weights, cnn.macs
        ),
    )
}

fn space_size(ctx: &mut Ctx) -> Outcome {
    let keys: HashSet<String> = ctx.space.enumerate().map(|c| ctx.space.canonical_key(&c)).collect();
    let enumerated = ctx.space.enumerate().count();
    check(
        enumerated == 9990 && keys.len() == 9990 && ctx.space.space_size() == 9990,
        format!("restricted MNIST: {enumerated} enumerated, {} distinct, size {}", keys.len(), ctx.space.space_size()),
    )
}

fn pareto_oracle(_: &mut Ctx) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = 0;
    for set in 0..100 {
        // a coarse grid on every other set forces ties
        let coarse = set % 2 == 0;
        let points: Vec<ObjectivePoint> = (0..1000)
            .map(|i| {
                let (mut e, mut c) = (rng.random::<f64>(), rng.random::<f64>() * 1e6);
                if coarse {
                    e = (e * 20.0).round() / 20.0;
                    c = (c / 5e4).round() * 5e4;
                }
                ObjectivePoint::new(e, c, format!("p{i:04}"))
            })
            .collect();
        let mut incremental = ParetoFront::new();
        for p in &points {
            incremental.insert(p.clone());
        }
        let as_set = |f: &ParetoFront| -> HashSet<(u64, u64, String)> {
            f.points()
                .iter()
                .map(|p| (p.error.to_bits(), p.cost.to_bits(), p.config_id.clone()))
                .collect()
        };
        if as_set(&incremental) != as_set(&front_of(&points)) || !incremental.check_invariant() {
            mismatches += 1;
        }
    }
    check(mismatches == 0, format!("100 sets of 1000 points, {mismatches} mismatches"))
}

fn adrs_properties(ctx: &mut Ctx) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let random_points = |rng: &mut ChaCha8Rng, n: usize, tag: &str| -> Vec<ObjectivePoint> {
        (0..n)
            .map(|i| ObjectivePoint::new(rng.random_range(0.01..1.0), rng.random_range(1.0..1e6), format!("{tag}{i}")))
            .collect()
    };
    let mut self_zero = true;
    let mut superset = true;
    for _ in 0..200 {
        let f = front_of(&random_points(&mut rng, 50, "f"));
        self_zero &= adrs(&f, &f).map_err(|e| e.to_string())? == 0.0;
        let r = front_of(&random_points(&mut rng, 40, "r"));
        let a = random_points(&mut rng, 20, "a");
        let mut b = a.clone();
        b.extend(random_points(&mut rng, 20, "b"));
        superset &= adrs_points(r.points(), &b).map_err(|e| e.to_string())?
            <= adrs_points(r.points(), &a).map_err(|e| e.to_string())?;
    }
    let reference = ctx.reference().clone();
    let mut logs = 0;
    let mut monotone = true;
    for run in ctx.runs() {
        let log = read_log(&run.log).map_err(|e| e.to_string())?;
        let curve = adrs_curve(&log.records, &reference).map_err(|e| e.to_string())?;
        monotone &= curve.windows(2).all(|w| w[1].1 <= w[0].1);
        logs += 1;
    }
    check(
        self_zero && superset && monotone,
        format!(
            "adrs(F,F)=0 on 200 fronts: {self_zero}; superset inequality on 200 triples: {superset}; \
             non-increasing curve on {logs} exploration logs: {monotone}"
        ),
    )
}

fn exploration_quality(ctx: &mut Ctx) -> Outcome {
    let reference = ctx.reference().clone();
    let start = Instant::now();
    let runs = ctx.runs();
    let mut at50 = Vec::new();
    let mut at200 = Vec::new();
    let mut per_seed = Vec::new();
    for run in runs {
        let curve = adrs_curve(&run.records, &reference).map_err(|e| e.to_string())?;
        // a run that stopped early did not reach the checkpoint: worst score
        let at = |n: usize| curve.get(n - 1).map_or(f64::INFINITY, |c| c.1);
        let (a50, a200) = if run.stopped.is_some() {
            (f64::INFINITY, f64::INFINITY)
        } else {
            (at(50), at(ITERATIONS))
        };
        at50.push(a50);
        at200.push(a200);
        per_seed.push(match &run.stopped {
            None => format!("seed {} {a50:.4}->{a200:.4} ({:.0}s)", run.seed, run.elapsed.as_secs_f64()),
            Some(e) => format!("seed {} stopped after {} iterations: {e}", run.seed, run.records.len()),
        });
    }
    let (m50, m200) = (median(at50), median(at200));
    let total: Duration = runs.iter().map(|r| r.elapsed).sum::<Duration>().max(start.elapsed());
    check(
        m200 <= 0.10 && m50 > m200,
        format!(
            "median ADRS at 50 = {m50:.4}, at 200 = {m200:.4} (need <= 0.10 and decreasing); {}; {:.0}s",
            per_seed.join("; "),
            total.as_secs_f64()
        ),
    )
}

fn surrogate_gradient(_: &mut Ctx) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let dim = rng.random_range(1..=6);
        let cfg = SurrogateTrainConfig {
            hidden_multiple: rng.random_range(1..=3),
            ..SurrogateTrainConfig::default()
        };
        let model = init_regressor(dim, &cfg, &mut rng).map_err(|e| e.to_string())?;
        let x = nndse::design_space::EncodedVector((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect());
        worst = worst.max(gradient_check(&model, &x, rng.random()));
    }
    check(worst < 1e-4, format!("50 random regressors, max relative error {worst:.2e}"))
}

fn prediction_quality(ctx: &mut Ctx) -> Outcome {
    let mut ok = true;
    let mut per_seed = Vec::new();
    for run in ctx.runs() {
        let q = run.records.len() / 4;
        if q == 0 {
            ok = false;
            per_seed.push(format!("seed {}: too few iterations", run.seed));
            continue;
        }
        let pe: Vec<f64> = run.records.iter().map(IterationRecord::prediction_error).collect();
        let last = &pe[pe.len() - q..];
        let mean_last = last.iter().sum::<f64>() / q as f64;
        let max_last = last.iter().copied().fold(0.0, f64::max);
        let max_first = pe[..q].iter().copied().fold(0.0, f64::max);
        ok &= mean_last <= 0.02 && max_last < max_first;
        per_seed.push(format!(
            "seed {} mean {mean_last:.4} max {max_last:.4} < first-quarter max {max_first:.4}{}",
            run.seed,
            if run.stopped.is_some() { " (partial run)" } else { "" }
        ));
    }
    check(ok, format!("final-quarter |predicted - measured|: {}", per_seed.join("; ")))
}

fn mnist_dir() -> PathBuf {
    std::env::var_os("MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn toy_trainer(_: &mut Ctx) -> Outcome {
    let dir = mnist_dir();
    let data = Dataset::mnist(&dir, Some(10_000), Some(2_000)).map_err(|e| {
        format!(
            "cannot load MNIST from {} ({e}); run scripts/fetch_mnist.sh or set MNIST_DIR",
            dir.display()
        )
    })?;
    let hyper = TrainHyper {
        learning_rate: 0.1,
        batch_size: 200,
        epochs: 10,
        activation: Activation::Relu,
    };
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let topology = Topology::mlp(&[784, 64, 10]).map_err(|e| e.to_string())?;
    let report = train(&topology, &hyper, &data, &mut rng).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();

    let mut worst_grad = 0.0f64;
    let small_mlp = Topology::mlp(&[784, 6, 10]).map_err(|e| e.to_string())?;
    let small_cnn = Topology {
        input_shape: [1, 28, 28],
        conv_layers: vec![ConvLayer {
            filters: 2,
            kernel: 5,
            pool: 4,
        }],
        fc_layers: vec![8],
        output_nodes: 10,
    };
    for t in [&small_mlp, &small_cnn] {
        let net = Network::new(t, Activation::Relu, &mut rng).map_err(|e| e.to_string())?;
        for i in 0..3 {
            let x: Vec<f64> = data.train.example(i).iter().map(|&v| v as f64).collect();
            worst_grad = worst_grad.max(net.gradient_check(&x, data.train.labels[i]));
        }
    }
    check(
        report.test_error < 0.10
            && report.max_softmax_deviation <= 1e-6
            && worst_grad < 1e-4
            && elapsed < Duration::from_secs(120),
        format!(
            "[784, 64, 10] on 10k/2k MNIST: test error {:.4} (need < 0.10), softmax deviation {:.1e}, \
             gradient check {worst_grad:.2e}, {:.1}s",
            report.test_error,
            report.max_softmax_deviation,
            elapsed.as_secs_f64()
        ),
    )
}

struct Recording<E> {
    inner: E,
    keys: Mutex<Vec<String>>,
}

impl<E: Evaluator> Evaluator for Recording<E> {
    fn evaluate(&self, space: &DesignSpace, config: &CandidateConfig) -> nndse::Result<EvaluationResult> {
        self.keys.lock().unwrap().push(space.canonical_key(config));
        self.inner.evaluate(space, config)
    }
}

fn determinism(ctx: &mut Ctx) -> Outcome {
    let space = ctx.space.clone();
    let dir = ctx.dir.path().to_path_buf();
    let run = &ctx.runs()[0];
    let single = std::fs::read(&run.log).map_err(|e| e.to_string())?;
    let config = |n| DseConfig {
        seed: run.seed,
        max_iterations: n,
        ..DseConfig::default()
    };

    let split = dir.join("split.jsonl");
    let cache = dir.join("cache.tsv");
    let mut trained = Vec::new();
    for (n, resume) in [(ITERATIONS / 2, false), (ITERATIONS, true)] {
        let recording = Recording {
            inner: SyntheticEvaluator,
            keys: Mutex::new(Vec::new()),
        };
        let cached = CachedEvaluator::with_file(&recording, &cache).map_err(|e| e.to_string())?;
        let mut e = if resume {
            Explorer::resume(space.clone(), config(n), &split)
        } else {
            Explorer::with_log(space.clone(), config(n), &split)
        }
        .map_err(|e| e.to_string())?;
        e.run(&cached).map_err(|e| e.to_string())?;
        trained.extend(recording.keys.into_inner().unwrap());
    }
    let split_bytes = std::fs::read(&split).map_err(|e| e.to_string())?;
    let distinct: HashSet<&String> = trained.iter().collect();

    let twice: Vec<Vec<u8>> = (0..2)
        .map(|i| {
            let path = dir.join(format!("repeat{i}.jsonl"));
            let mut e = Explorer::with_log(space.clone(), config(50), &path).expect("explorer");
            e.run(&SyntheticEvaluator).expect("run");
            std::fs::read(path).expect("log")
        })
        .collect();
    check(
        run.stopped.is_none()
            && split_bytes == single
            && twice[0] == twice[1]
            && distinct.len() == trained.len()
            && trained.len() == ITERATIONS,
        format!(
            "repeat runs identical: {}; 100+100 split log equals 200-iteration log: {} ({} bytes); \
             {} trainings for {} distinct configs",
            twice[0] == twice[1],
            split_bytes == single,
            single.len(),
            trained.len(),
            distinct.len()
        ),
    )
}

fn alpha_statistics(_: &mut Ctx) -> Outcome {
    let alpha = 1e-4;
    let n = 100_000u32;
    let mut front = ParetoFront::new();
    front.insert(ObjectivePoint::new(0.1, 100.0, "a"));
    front.insert(ObjectivePoint::new(0.05, 1000.0, "b"));
    let dominated = ObjectivePoint::new(0.2, 500.0, "c");
    let free = ObjectivePoint::new(0.01, 50.0, "d");
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let accepted = (0..n).filter(|_| decide(&dominated, &front, alpha, &mut rng)).count() as f64;
    let rejected = (0..n).filter(|_| !decide(&free, &front, alpha, &mut rng)).count() as f64;
    let mean = n as f64 * alpha;
    let sd = (n as f64 * alpha * (1.0 - alpha)).sqrt();
    check(
        (accepted - mean).abs() <= 3.0 * sd && (rejected - mean).abs() <= 3.0 * sd,
        format!(
            "dominated accepted {accepted} / {n}, non-dominated rejected {rejected} / {n} (expected {mean} +/- {:.2})",
            3.0 * sd
        ),
    )
}

fn main() {
    let criteria: [(&str, fn(&mut Ctx) -> Outcome); 11] = [
        ("encoding golden vector", encoding_golden),
        ("cost golden counts", cost_golden),
        ("restricted space size", space_size),
        ("incremental front equals brute force", pareto_oracle),
        ("ADRS properties", adrs_properties),
        ("exploration reaches the exact front", exploration_quality),
        ("surrogate gradient check", surrogate_gradient),
        ("surrogate prediction quality", prediction_quality),
        ("toy trainer on MNIST", toy_trainer),
        ("determinism and resume", determinism),
        ("alpha acceptance statistics", alpha_statistics),
    ];
    let mut ctx = Ctx {
        dir: tempfile::tempdir().expect("temp dir"),
        space: presets::restricted_mnist(),
        reference: None,
        runs: None,
    };
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| f(&mut ctx)))
            .unwrap_or_else(|p| {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Err(format!("panicked: {msg}"))
            });
        let (status, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("criterion {:>2} {status}  {name} [{:.1}s]: {detail}", i + 1, start.elapsed().as_secs_f64());
        std::io::stdout().flush().ok();
        if outcome.is_err() {
            failed.push(i + 1);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", criteria.len());
    } else {
        println!("acceptance: {} of {} criteria failed: {failed:?}", failed.len(), criteria.len());
        std::process::exit(1);
    }
}
