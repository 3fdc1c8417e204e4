//! Subcommand implementations.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use cts_core::budget::ElementBudget;
use cts_core::inference::{forward, Distribution, RootOutput};
use cts_core::learn::{
    evaluate_argmax, make_dataset, train as train_loop, write_metrics_csv, ModelKind,
    OptimizerKind, PerceptualModel, SyntheticFeatures, TrainConfig, SYNTHETIC_DIM,
};
use cts_core::pipeline::{build_summaries, program_usage};
use cts_core::program::{build_summary, BuildMode, OutputKind, ProgramGraph, Wire};
use cts_core::sketch::SketchConfig;
use cts_core::verify::{
    check_thm31, check_thm32, grad_check, wmc_exact, WmcQuery, WmcSubject, WmcResult,
};
use cts_core::{tt_svd, Error, LossKind, Rank, Result, TaskConfig};

use crate::artifacts::{
    load_sketches_for, BuildManifest, SketchIndex, SketchReport, SketchReportEntry, SummaryEntry,
};

pub fn build(task_path: &Path, out: &Path) -> Result<()> {
    let cfg = TaskConfig::load(task_path)?;
    let graph = cfg.resolve()?;
    let budget = ElementBudget::from_env();
    let summaries = build_summaries(&graph, &BuildMode::Enumerate, budget)?;
    std::fs::create_dir_all(out)?;
    let mut entries = Vec::new();
    let mut total = 0u64;
    for built in &summaries {
        let file = format!("{}.cts", built.id);
        built.tensor.save_cts1(&out.join(&file))?;
        let elements = built.tensor.len() as u64;
        total += elements;
        println!(
            "{}: dims {:?}, {} elements, used by {} node(s)",
            built.id,
            built.tensor.dims(),
            elements,
            built.node_count
        );
        entries.push(SummaryEntry {
            id: built.id.clone(),
            dims: built.tensor.dims().to_vec(),
            elements,
            node_count: built.node_count,
            file,
        });
    }
    println!("total summary elements: {total}");
    BuildManifest { task: cfg.name.clone(), programs: entries, total_elements: total }.save(out)?;
    Ok(())
}

pub fn sketch(summaries: &Path, rank: &str, seed: u64, out: &Path) -> Result<()> {
    let rank: Rank = rank.parse()?;
    let manifest = BuildManifest::load(summaries)?;
    let budget = ElementBudget::from_env();
    std::fs::create_dir_all(out)?;
    let mut report = SketchReport { entries: Vec::new() };
    let mut ids = Vec::new();
    for entry in &manifest.programs {
        let phi = cts_core::DenseTensor::load_cts1(&summaries.join(&entry.file))?;
        let sketch = tt_svd(&phi, &SketchConfig::new(rank, seed))?;
        sketch.save(out, &entry.id)?;
        let bound = sketch.reconstruction_error_bound();
        let (frob, max_dev) = match sketch.reconstruct(budget) {
            Ok(recon) => {
                let mut err_sq = 0.0;
                let mut max_dev = 0.0f64;
                for (a, b) in phi.data().iter().zip(recon.data()) {
                    let d = (a - b).abs();
                    err_sq += d * d;
                    max_dev = max_dev.max(d);
                }
                (Some(err_sq.sqrt()), Some(max_dev))
            }
            Err(Error::Resource(_)) => (None, None),
            Err(e) => return Err(e),
        };
        println!(
            "{}: ranks {:?}, {} parameters, bound {:.3e}, |phi - T|_F {}, max dev {}",
            entry.id,
            sketch.ranks(),
            sketch.parameter_count(),
            bound,
            frob.map_or("(over budget)".into(), |v| format!("{v:.3e}")),
            max_dev.map_or("(over budget)".into(), |v| format!("{v:.3e}")),
        );
        report.entries.push(SketchReportEntry {
            id: entry.id.clone(),
            ranks: sketch.ranks().to_vec(),
            parameter_count: sketch.parameter_count(),
            error_bound: bound,
            frobenius_error: frob,
            max_abs_deviation: max_dev,
        });
        ids.push(entry.id.clone());
    }
    report.save(out)?;
    SketchIndex { task: manifest.task, rank: rank.to_string(), seed, ids }.save(out)?;
    Ok(())
}

#[derive(Deserialize)]
struct LeavesFile {
    leaves: Vec<LeafSpec>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum LeafSpec {
    Probs(Vec<f64>),
    OneHot { one_hot: usize, n: usize },
}

#[derive(Serialize)]
#[serde(rename_all = "snake_case")]
enum InferOutput {
    Value(f64),
    Distribution { probs: Vec<f64>, argmax: usize },
    Tuple(Vec<f64>),
}

pub fn infer(task_path: &Path, sketches_dir: &Path, leaves_path: &Path, sigma: Option<f64>) -> Result<()> {
    let cfg = TaskConfig::load(task_path)?;
    let graph = cfg.resolve()?;
    let sketches = load_sketches_for(&graph, sketches_dir)?;
    let text = std::fs::read_to_string(leaves_path)?;
    let parsed: LeavesFile = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", leaves_path.display())))?;
    let mut leaves = Vec::with_capacity(parsed.leaves.len());
    for (i, spec) in parsed.leaves.into_iter().enumerate() {
        let dist = match spec {
            LeafSpec::Probs(p) => Distribution::new(p)
                .map_err(|e| Error::Config(format!("leaf {i}: {e}")))?,
            LeafSpec::OneHot { one_hot, n } => {
                if one_hot >= n {
                    return Err(Error::Config(format!("leaf {i}: one_hot {one_hot} >= n {n}")));
                }
                Distribution::one_hot(n, one_hot)
            }
        };
        leaves.push(dist);
    }
    let mut icfg = cfg.inference_config();
    if let Some(s) = sigma {
        if !(s > 0.0) {
            return Err(Error::Config(format!("sigma must be positive, got {s}")));
        }
        icfg.sigma = s;
    }
    let (out, _) = forward(&graph, &sketches, &leaves, &icfg)?;
    let rendered = match out {
        RootOutput::Value(v) => InferOutput::Value(v),
        RootOutput::Distribution(d) => {
            let argmax = d.argmax();
            InferOutput::Distribution { probs: d.probs().to_vec(), argmax }
        }
        RootOutput::Tuple(vs) => InferOutput::Tuple(vs),
    };
    println!(
        "{}",
        serde_json::to_string(&rendered).map_err(|e| Error::Internal(e.to_string()))?
    );
    Ok(())
}

pub struct TrainArgs {
    pub task: PathBuf,
    pub sketches: PathBuf,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub loss: String,
    pub seed: u64,
    pub data_seed: u64,
    pub train_count: usize,
    pub test_count: usize,
    pub sigma: Option<f64>,
    pub out: PathBuf,
}

pub fn train(args: TrainArgs) -> Result<()> {
    let cfg = TaskConfig::load(&args.task)?;
    let graph = cfg.resolve()?;
    let sketches = load_sketches_for(&graph, &args.sketches)?;
    let loss: LossKind = args.loss.parse()?;
    let classes = graph.leaf_domains[0];
    if graph.leaf_domains.iter().any(|&d| d != classes) {
        return Err(Error::Config(
            "synthetic training needs uniform leaf domains".into(),
        ));
    }
    let gen = SyntheticFeatures::new(classes, args.data_seed);
    let train_set = make_dataset(&graph, &gen, args.train_count, args.data_seed.wrapping_add(1))?;
    let test_set = make_dataset(&graph, &gen, args.test_count, args.data_seed.wrapping_add(2))?;
    let model = PerceptualModel::random(ModelKind::LinearSoftmax, SYNTHETIC_DIM, classes, args.seed);
    let tcfg = TrainConfig {
        loss,
        optimizer: OptimizerKind::adam(args.lr),
        epochs: args.epochs,
        batch_size: args.batch_size,
        seed: args.seed,
    };
    let mut icfg = cfg.inference_config();
    if let Some(s) = args.sigma {
        icfg.sigma = s;
    }
    let (trained, history) =
        train_loop(&graph, &sketches, &model, &train_set, &test_set, &tcfg, &icfg)?;
    std::fs::create_dir_all(&args.out)?;
    write_metrics_csv(&args.out.join("metrics.csv"), &history)?;
    let model_json =
        serde_json::to_string(&trained).map_err(|e| Error::Internal(e.to_string()))?;
    std::fs::write(args.out.join("model.json"), model_json)?;
    if let Some(last) = history.last() {
        println!(
            "epoch {}: train_loss {:.6}, task_acc {:.4}, symbol_acc {:.4}",
            last.epoch, last.train_loss, last.task_acc, last.symbol_acc
        );
    } else {
        let acc = evaluate_argmax(&graph, &trained, &test_set)?;
        println!("no training epochs; initial task_acc {:.4}", acc.task);
    }
    Ok(())
}

/// Total full-support grid size of the graph's leaves.
fn leaf_grid(graph: &ProgramGraph) -> u64 {
    graph
        .leaf_domains
        .iter()
        .map(|&d| d as u64)
        .try_fold(1u64, |acc, d| acc.checked_mul(d))
        .unwrap_or(u64::MAX)
}

fn has_consumed_value_nodes(graph: &ProgramGraph) -> bool {
    for layer in &graph.layers {
        for node in layer {
            for wire in &node.inputs {
                if let Wire::Node(l, i) = wire {
                    if matches!(
                        graph.program_of(graph.node(*l, *i)).output_kind(),
                        OutputKind::Value
                    ) {
                        return true;
                    }
                }
            }
        }
    }
    false
}

fn random_dist(n: usize, rng: &mut ChaCha8Rng) -> Distribution {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let sum: f64 = raw.iter().sum();
    Distribution::new_unchecked(raw.into_iter().map(|v| v / sum).collect())
}

pub fn verify(task_path: &Path, sketches_dir: &Path, seed: u64) -> Result<()> {
    let cfg = TaskConfig::load(task_path)?;
    let graph = cfg.resolve()?;
    let sketches = load_sketches_for(&graph, sketches_dir)?;
    let budget = ElementBudget::from_env();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures: Vec<String> = Vec::new();
    let row = |name: &str, status: &str, detail: String, failures: &mut Vec<String>| {
        println!("{status:<4} {name:<28} {detail}");
        if status == "FAIL" {
            failures.push(name.to_string());
        }
    };

    // reconstruction bound per sub-program
    for (sp, _) in program_usage(&graph) {
        let id = sp.id();
        let name = format!("thm31/{id}");
        let sketch = sketches.get(&id).expect("loaded for this graph");
        match build_summary(sp, &BuildMode::Enumerate, budget) {
            Ok(phi) => match check_thm31(&phi, sketch, budget) {
                Ok(r) => {
                    let status = if r.ok { "PASS" } else { "FAIL" };
                    row(
                        &name,
                        status,
                        format!("|phi - T|_F {:.3e} <= bound {:.3e} + 1e-8", r.error, r.bound),
                        &mut failures,
                    );
                }
                Err(Error::Resource(_)) => {
                    row(&name, "SKIP", "reconstruction over the element budget".into(), &mut failures)
                }
                Err(e) => return Err(e),
            },
            Err(Error::Resource(_)) => {
                row(&name, "SKIP", "summary over the element budget".into(), &mut failures)
            }
            Err(e) => return Err(e),
        }
    }

    // one-hot output error bound for integer-valued value summaries
    for (sp, _) in program_usage(&graph) {
        if !matches!(sp.output_kind(), OutputKind::Value) {
            continue;
        }
        let Some(classes) = sp.integer_output_symbols() else { continue };
        let grid: u64 = sp.input_domains().iter().map(|&d| d as u64).product();
        if grid > 100_000 {
            continue;
        }
        let id = sp.id();
        let name = format!("thm32/{id}");
        let phi = build_summary(sp, &BuildMode::Enumerate, budget)?;
        let sketch = sketches.get(&id).expect("loaded for this graph");
        let inputs: Vec<Distribution> =
            sp.input_domains().iter().map(|&d| random_dist(d, &mut rng)).collect();
        match check_thm32(&phi, classes, sketch, &inputs, budget) {
            Ok(r) => {
                let status = if r.ok { "PASS" } else { "FAIL" };
                row(
                    &name,
                    status,
                    format!(
                        "lhs {:.3e} <= rhs {:.3e}; cells {} <= cap {}",
                        r.lhs, r.rhs, r.mismatch_cells, r.cell_cap
                    ),
                    &mut failures,
                );
            }
            Err(Error::Resource(_)) => {
                row(&name, "SKIP", "over the element budget".into(), &mut failures)
            }
            Err(e) => return Err(e),
        }
    }

    // analytic gradients against finite differences
    for trial in 0..3 {
        let leaves: Vec<Distribution> = graph
            .leaf_domains
            .iter()
            .map(|&d| random_dist(d, &mut rng))
            .collect();
        let name = format!("grad_check/{trial}");
        let r = grad_check(&graph, &sketches, &leaves, &cfg.inference_config())?;
        let status = if r.ok { "PASS" } else { "FAIL" };
        row(
            &name,
            status,
            format!("relative deviation {:.3e} <= 1e-4", r.relative_deviation),
            &mut failures,
        );
    }

    // forward against exact counting, where the graph shape allows it
    let bounds_sum: f64 = graph
        .programs
        .iter()
        .map(|sp| sketches.get(&sp.id()).map_or(0.0, |s| s.reconstruction_error_bound()))
        .sum();
    if leaf_grid(&graph) <= 100_000 && !has_consumed_value_nodes(&graph) && bounds_sum <= 1e-6 {
        let leaves: Vec<Distribution> = graph
            .leaf_domains
            .iter()
            .map(|&d| random_dist(d, &mut rng))
            .collect();
        let (out, _) = forward(&graph, &sketches, &leaves, &cfg.inference_config())?;
        let q = WmcQuery { subject: WmcSubject::Graph(&graph), leaves: &leaves, target: None };
        let oracle = wmc_exact(&q)?;
        let tol = 1e-6 + 10.0 * bounds_sum;
        match (out, oracle) {
            (RootOutput::Value(v), WmcResult::Expectation(e)) => {
                let ok = (v - e).abs() <= tol;
                row(
                    "oracle/forward",
                    if ok { "PASS" } else { "FAIL" },
                    format!("|{v:.6} - {e:.6}| <= {tol:.1e}"),
                    &mut failures,
                );
            }
            (RootOutput::Distribution(d), WmcResult::Distribution(w)) => {
                let sum: f64 = w.iter().sum();
                let tv: f64 = if sum > 0.0 {
                    d.probs()
                        .iter()
                        .zip(&w)
                        .map(|(a, b)| (a - b / sum).abs())
                        .sum::<f64>()
                        / 2.0
                } else {
                    1.0
                };
                let ok = tv <= tol;
                row(
                    "oracle/forward",
                    if ok { "PASS" } else { "FAIL" },
                    format!("total variation {tv:.3e} <= {tol:.1e}"),
                    &mut failures,
                );
            }
            _ => row("oracle/forward", "SKIP", "root shapes differ".into(), &mut failures),
        }
    } else {
        row(
            "oracle/forward",
            "SKIP",
            "needs a small grid, exact sketches, and no mid-graph RBF".into(),
            &mut failures,
        );
    }

    if failures.is_empty() {
        println!("all checks passed");
        Ok(())
    } else {
        Err(Error::Verification(format!("failing checks: {}", failures.join(", "))))
    }
}
