//! Perceptual models, losses, optimizers, and the end-to-end training
//! loop: model outputs feed the sketched forward pass, the loss on the
//! final output alone drives gradients back through contractions and
//! the softmax into the model parameters. Sketches stay frozen.

use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{
    backward, forward, Distribution, InferenceConfig, RootGradient, RootOutput, SketchSet,
};
use crate::program::{execute_symbols, ProgramGraph, SymbolicOutput};

/// Classifier family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LinearSoftmax,
    Mlp { hidden: usize },
}

/// Trainable classifier mapping a feature vector to a symbol
/// distribution. Parameters live in one flat vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceptualModel {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub class_count: usize,
    weights: Vec<f64>,
}

impl PerceptualModel {
    pub fn zeros(kind: ModelKind, input_dim: usize, class_count: usize) -> PerceptualModel {
        let n = Self::param_count(kind, input_dim, class_count);
        PerceptualModel { kind, input_dim, class_count, weights: vec![0.0; n] }
    }

    pub fn random(kind: ModelKind, input_dim: usize, class_count: usize, seed: u64) -> PerceptualModel {
        let mut m = Self::zeros(kind, input_dim, class_count);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (input_dim as f64).sqrt();
        for w in &mut m.weights {
            *w = rng.gen_range(-scale..scale);
        }
        m
    }

    fn param_count(kind: ModelKind, input_dim: usize, class_count: usize) -> usize {
        match kind {
            ModelKind::LinearSoftmax => class_count * input_dim + class_count,
            ModelKind::Mlp { hidden } => {
                hidden * input_dim + hidden + class_count * hidden + class_count
            }
        }
    }

    pub fn parameters(&self) -> &[f64] {
        &self.weights
    }

    pub fn parameters_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    fn logits(&self, x: &[f64]) -> (Vec<f64>, Option<Vec<f64>>) {
        match self.kind {
            ModelKind::LinearSoftmax => {
                let (w, b) = self.weights.split_at(self.class_count * self.input_dim);
                let mut z = b.to_vec();
                for (i, zi) in z.iter_mut().enumerate() {
                    let row = &w[i * self.input_dim..(i + 1) * self.input_dim];
                    *zi += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                }
                (z, None)
            }
            ModelKind::Mlp { hidden } => {
                let (w1, rest) = self.weights.split_at(hidden * self.input_dim);
                let (b1, rest) = rest.split_at(hidden);
                let (w2, b2) = rest.split_at(self.class_count * hidden);
                let mut h = b1.to_vec();
                for (i, hi) in h.iter_mut().enumerate() {
                    let row = &w1[i * self.input_dim..(i + 1) * self.input_dim];
                    *hi = (*hi + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()).tanh();
                }
                let mut z = b2.to_vec();
                for (i, zi) in z.iter_mut().enumerate() {
                    let row = &w2[i * hidden..(i + 1) * hidden];
                    *zi += row.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>();
                }
                (z, Some(h))
            }
        }
    }

    /// Softmax distribution over the symbol classes; entries are
    /// strictly positive.
    pub fn apply(&self, x: &[f64]) -> Result<Distribution> {
        if x.len() != self.input_dim {
            return Err(Error::Argument(format!(
                "feature dim {} != model input dim {}",
                x.len(),
                self.input_dim
            )));
        }
        let (z, _) = self.logits(x);
        Ok(softmax(&z))
    }

    /// Accumulates d(loss)/d(theta) into `grad` given the gradient on
    /// the output distribution, scaled by `scale`.
    fn accumulate_gradient(&self, x: &[f64], grad_p: &[f64], scale: f64, grad: &mut [f64]) {
        let (z, hidden) = self.logits(x);
        let p = softmax(&z);
        let dot: f64 = grad_p.iter().zip(p.probs()).map(|(g, pi)| g * pi).sum();
        let dz: Vec<f64> = p
            .probs()
            .iter()
            .zip(grad_p)
            .map(|(&pi, &g)| scale * pi * (g - dot))
            .collect();
        match self.kind {
            ModelKind::LinearSoftmax => {
                let wlen = self.class_count * self.input_dim;
                for (i, &dzi) in dz.iter().enumerate() {
                    if dzi == 0.0 {
                        continue;
                    }
                    let row = &mut grad[i * self.input_dim..(i + 1) * self.input_dim];
                    for (gw, &xv) in row.iter_mut().zip(x) {
                        *gw += dzi * xv;
                    }
                    grad[wlen + i] += dzi;
                }
            }
            ModelKind::Mlp { hidden: nh } => {
                let h = hidden.expect("mlp forward stores activations");
                let w1len = nh * self.input_dim;
                let w2off = w1len + nh;
                let w2len = self.class_count * nh;
                let w2 = &self.weights[w2off..w2off + w2len];
                let mut dh = vec![0.0; nh];
                for (i, &dzi) in dz.iter().enumerate() {
                    if dzi == 0.0 {
                        continue;
                    }
                    let row = &mut grad[w2off + i * nh..w2off + (i + 1) * nh];
                    for (gw, &hv) in row.iter_mut().zip(&h) {
                        *gw += dzi * hv;
                    }
                    for (dhj, &wv) in dh.iter_mut().zip(&w2[i * nh..(i + 1) * nh]) {
                        *dhj += dzi * wv;
                    }
                    grad[w2off + w2len + i] += dzi;
                }
                for j in 0..nh {
                    let dz1 = dh[j] * (1.0 - h[j] * h[j]);
                    if dz1 == 0.0 {
                        continue;
                    }
                    let row = &mut grad[j * self.input_dim..(j + 1) * self.input_dim];
                    for (gw, &xv) in row.iter_mut().zip(x) {
                        *gw += dz1 * xv;
                    }
                    grad[w1len + j] += dz1;
                }
            }
        }
    }
}

fn softmax(z: &[f64]) -> Distribution {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Distribution::new_unchecked(exps.into_iter().map(|e| e / sum).collect())
}

// ---------------------------------------------------------------------------
// labels, losses
// ---------------------------------------------------------------------------

/// Final-output label of one training example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Scalar(f64),
    Class(usize),
    /// Per-place digits, least-significant first.
    Digits(Vec<usize>),
}

/// One weakly supervised example: raw feature vectors per leaf plus the
/// final-output label. Ground-truth symbols, when known, feed the
/// per-symbol accuracy metric only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub inputs: Vec<Vec<f64>>,
    pub label: Label,
    pub true_symbols: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    L1,
    CrossEntropy,
}

impl std::str::FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<LossKind> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(LossKind::L1),
            "ce" | "cross_entropy" => Ok(LossKind::CrossEntropy),
            other => Err(Error::Argument(format!("unknown loss {other:?}"))),
        }
    }
}

const PROB_FLOOR: f64 = 1e-12;

/// Loss value and the matching root cotangent.
pub fn loss_with_gradient(
    output: &RootOutput,
    label: &Label,
    kind: LossKind,
) -> Result<(f64, RootGradient)> {
    match (kind, output, label) {
        (LossKind::L1, RootOutput::Value(v), Label::Scalar(y)) => {
            let d = v - y;
            Ok((d.abs(), RootGradient::Value(sign(d))))
        }
        (LossKind::L1, RootOutput::Tuple(vs), Label::Digits(ys)) => {
            if vs.len() != ys.len() {
                return Err(Error::Argument(format!(
                    "{} root places vs {} label digits",
                    vs.len(),
                    ys.len()
                )));
            }
            let mut total = 0.0;
            let mut grads = Vec::with_capacity(vs.len());
            for (v, &y) in vs.iter().zip(ys) {
                let d = v - y as f64;
                total += d.abs();
                grads.push(sign(d));
            }
            Ok((total, RootGradient::Tuple(grads)))
        }
        (LossKind::CrossEntropy, RootOutput::Distribution(p), Label::Class(y)) => {
            if *y >= p.len() {
                return Err(Error::Argument(format!("class {y} outside {} outputs", p.len())));
            }
            let py = p.probs()[*y].max(PROB_FLOOR);
            let mut g = vec![0.0; p.len()];
            g[*y] = -1.0 / py;
            Ok((-py.ln(), RootGradient::Distribution(g)))
        }
        _ => Err(Error::Argument("loss kind incompatible with root output".into())),
    }
}

/// Loss value alone.
pub fn loss(output: &RootOutput, label: &Label, kind: LossKind) -> Result<f64> {
    loss_with_gradient(output, label, kind).map(|(l, _)| l)
}

fn sign(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}

// ---------------------------------------------------------------------------
// optimizers and training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd { lr: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, epsilon: f64 },
}

impl OptimizerKind {
    pub fn adam(lr: f64) -> OptimizerKind {
        OptimizerKind::Adam { lr, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub optimizer: OptimizerKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let lr = match self.optimizer {
            OptimizerKind::Sgd { lr } => lr,
            OptimizerKind::Adam { lr, .. } => lr,
        };
        if !(lr >= 0.0) {
            return Err(Error::Argument(format!("learning rate {lr} must be nonnegative")));
        }
        if self.batch_size == 0 {
            return Err(Error::Argument("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

struct Optimizer {
    kind: OptimizerKind,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Optimizer {
    fn new(kind: OptimizerKind, dim: usize) -> Optimizer {
        Optimizer { kind, m: vec![0.0; dim], v: vec![0.0; dim], t: 0 }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        match self.kind {
            OptimizerKind::Sgd { lr } => {
                for (w, &g) in theta.iter_mut().zip(grad) {
                    *w -= lr * g;
                }
            }
            OptimizerKind::Adam { lr, beta1, beta2, epsilon } => {
                self.t += 1;
                let bc1 = 1.0 - beta1.powi(self.t as i32);
                let bc2 = 1.0 - beta2.powi(self.t as i32);
                for i in 0..theta.len() {
                    let g = grad[i];
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    let mhat = self.m[i] / bc1;
                    let vhat = self.v[i] / bc2;
                    theta[i] -= lr * mhat / (vhat.sqrt() + epsilon);
                }
            }
        }
    }
}

/// Per-epoch record behind the metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub wall_seconds: f64,
    pub train_loss: f64,
    pub task_acc: f64,
    pub symbol_acc: f64,
}

/// Accuracy pair from argmax evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Accuracy {
    pub task: f64,
    pub symbol: f64,
}

/// Test-time evaluation: run the exact symbolic program on each leaf's
/// most probable symbol. No sketches involved.
pub fn evaluate_argmax(
    graph: &ProgramGraph,
    model: &PerceptualModel,
    examples: &[TrainingExample],
) -> Result<Accuracy> {
    if examples.is_empty() {
        return Ok(Accuracy { task: f64::NAN, symbol: f64::NAN });
    }
    let mut task_hits = 0usize;
    let mut sym_hits = 0usize;
    let mut sym_total = 0usize;
    for ex in examples {
        let mut symbols = Vec::with_capacity(ex.inputs.len());
        for x in &ex.inputs {
            symbols.push(model.apply(x)?.argmax());
        }
        if let Some(truth) = &ex.true_symbols {
            sym_total += truth.len();
            sym_hits += truth.iter().zip(&symbols).filter(|(a, b)| a == b).count();
        }
        let out = execute_symbols(graph, &symbols)?;
        let hit = match (&out, &ex.label) {
            (SymbolicOutput::Real(v), Label::Scalar(y)) => (v - y).abs() <= 1e-9 * y.abs().max(1.0),
            (SymbolicOutput::Classes(set), Label::Class(y)) => set.as_slice() == [*y],
            (SymbolicOutput::Tuple(vs), Label::Digits(ys)) => {
                vs.len() == ys.len() && vs.iter().zip(ys).all(|(v, &y)| *v == y as f64)
            }
            _ => false,
        };
        task_hits += usize::from(hit);
    }
    Ok(Accuracy {
        task: task_hits as f64 / examples.len() as f64,
        symbol: if sym_total > 0 { sym_hits as f64 / sym_total as f64 } else { f64::NAN },
    })
}

/// Mini-batch weak-supervision training. Deterministic for a fixed
/// seed and data order; returns the trained model plus per-epoch
/// metrics (test accuracy evaluated with `evaluate_argmax`).
pub fn train(
    graph: &ProgramGraph,
    sketches: &SketchSet,
    model: &PerceptualModel,
    train_data: &[TrainingExample],
    test_data: &[TrainingExample],
    cfg: &TrainConfig,
    infer_cfg: &InferenceConfig,
) -> Result<(PerceptualModel, Vec<EpochMetrics>)> {
    cfg.validate()?;
    if train_data.is_empty() {
        return Err(Error::Argument("empty training set".into()));
    }
    for ex in train_data.iter().chain(test_data) {
        if ex.inputs.len() != graph.leaf_domains.len() {
            return Err(Error::Argument(format!(
                "example has {} inputs, graph has {} leaves",
                ex.inputs.len(),
                graph.leaf_domains.len()
            )));
        }
    }
    let mut model = model.clone();
    let mut optimizer = Optimizer::new(cfg.optimizer, model.parameters().len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let started = Instant::now();
    for epoch in 0..cfg.epochs {
        // Fisher-Yates with the run's own stream keeps runs replayable
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        let mut grad = vec![0.0; model.parameters().len()];
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &ix in batch {
                let ex = &train_data[ix];
                let leaves: Vec<Distribution> = ex
                    .inputs
                    .iter()
                    .map(|x| model.apply(x))
                    .collect::<Result<_>>()?;
                let (out, tape) = forward(graph, sketches, &leaves, infer_cfg)?;
                let (l, upstream) = loss_with_gradient(&out, &ex.label, cfg.loss)?;
                epoch_loss += l;
                let leaf_grads = backward(graph, sketches, &tape, &upstream)?;
                for (x, g) in ex.inputs.iter().zip(&leaf_grads) {
                    model.accumulate_gradient(x, g, scale, &mut grad);
                }
            }
            optimizer.step(model.parameters_mut(), &grad);
        }
        let acc = evaluate_argmax(graph, &model, test_data)?;
        history.push(EpochMetrics {
            epoch: epoch + 1,
            wall_seconds: started.elapsed().as_secs_f64(),
            train_loss: epoch_loss / train_data.len() as f64,
            task_acc: acc.task,
            symbol_acc: acc.symbol,
        });
    }
    Ok((model, history))
}

/// Plain supervised cross-entropy fit on (feature, symbol) pairs. The
/// reference row: what the same model reaches with full per-symbol
/// supervision.
pub fn train_supervised(
    model: &PerceptualModel,
    data: &[(Vec<f64>, usize)],
    epochs: usize,
    optimizer: OptimizerKind,
    seed: u64,
) -> Result<PerceptualModel> {
    let mut model = model.clone();
    let mut opt = Optimizer::new(optimizer, model.parameters().len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..epochs {
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for batch in order.chunks(32) {
            let mut grad = vec![0.0; model.parameters().len()];
            let scale = 1.0 / batch.len() as f64;
            for &ix in batch {
                let (x, y) = &data[ix];
                let p = model.apply(x)?;
                let mut g = vec![0.0; p.len()];
                g[*y] = -1.0 / p.probs()[*y].max(PROB_FLOOR);
                model.accumulate_gradient(x, &g, scale, &mut grad);
            }
            opt.step(model.parameters_mut(), &grad);
        }
    }
    Ok(model)
}

// ---------------------------------------------------------------------------
// synthetic perceptual data
// ---------------------------------------------------------------------------

/// Class-conditional Gaussian feature generator: unit-variance clusters
/// around means kept at pairwise distance >= 4.
#[derive(Debug, Clone)]
pub struct SyntheticFeatures {
    pub dim: usize,
    pub class_count: usize,
    means: Vec<Vec<f64>>,
}

pub const SYNTHETIC_DIM: usize = 16;
const MEAN_MIN_DISTANCE: f64 = 4.0;

impl SyntheticFeatures {
    pub fn new(class_count: usize, seed: u64) -> SyntheticFeatures {
        let dim = SYNTHETIC_DIM;
        let mean_std: f64 = std::env::var("CTS_MEAN_STD").ok().and_then(|v| v.parse().ok()).unwrap_or(2.5);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut means: Vec<Vec<f64>> = Vec::with_capacity(class_count);
        while means.len() < class_count {
            let cand: Vec<f64> = (0..dim).map(|_| mean_std * normal(&mut rng)).collect();
            let ok = means.iter().all(|m| {
                let d2: f64 = m.iter().zip(&cand).map(|(a, b)| (a - b) * (a - b)).sum();
                d2.sqrt() >= MEAN_MIN_DISTANCE
            });
            if ok {
                means.push(cand);
            }
        }
        SyntheticFeatures { dim, class_count, means }
    }

    pub fn sample(&self, class: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.means[class].iter().map(|&m| m + normal(rng)).collect()
    }

    /// Labeled (feature, class) pairs, classes cycling uniformly.
    pub fn labeled_set(&self, count: usize, seed: u64) -> Vec<(Vec<f64>, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|i| {
                let class = i % self.class_count;
                (self.sample(class, &mut rng), class)
            })
            .collect()
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u: f64 = rng.gen::<f64>();
        let v: f64 = rng.gen::<f64>();
        if u > f64::MIN_POSITIVE {
            return (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos();
        }
    }
}

/// Weakly supervised dataset for a graph: uniform random leaf symbols,
/// features from the generator, labels from exact symbolic execution.
pub fn make_dataset(
    graph: &ProgramGraph,
    gen: &SyntheticFeatures,
    count: usize,
    seed: u64,
) -> Result<Vec<TrainingExample>> {
    for (i, &d) in graph.leaf_domains.iter().enumerate() {
        if d != gen.class_count {
            return Err(Error::Argument(format!(
                "leaf {i} domain {d} != generator class count {}",
                gen.class_count
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let symbols: Vec<usize> = graph
            .leaf_domains
            .iter()
            .map(|&d| rng.gen_range(0..d))
            .collect();
        let label = match execute_symbols(graph, &symbols)? {
            SymbolicOutput::Real(v) => Label::Scalar(v),
            SymbolicOutput::Classes(set) if set.len() == 1 => Label::Class(set[0]),
            SymbolicOutput::Classes(_) => {
                return Err(Error::Argument(
                    "one-to-many outputs cannot label a dataset".into(),
                ))
            }
            SymbolicOutput::Tuple(vs) => Label::Digits(vs.iter().map(|&v| v as usize).collect()),
        };
        let inputs: Vec<Vec<f64>> = symbols.iter().map(|&s| gen.sample(s, &mut rng)).collect();
        out.push(TrainingExample { inputs, label, true_symbols: Some(symbols) });
    }
    Ok(out)
}

/// Writes the per-epoch metrics CSV: epoch, wall_seconds, train_loss,
/// task_acc, symbol_acc. Every column except wall_seconds is
/// deterministic for a fixed seed.
pub fn write_metrics_csv(path: &Path, history: &[EpochMetrics]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "epoch,wall_seconds,train_loss,task_acc,symbol_acc")?;
    for m in history {
        writeln!(
            f,
            "{},{:.3},{},{},{}",
            m.epoch,
            m.wall_seconds,
            fmt_metric(m.train_loss),
            fmt_metric(m.task_acc),
            fmt_metric(m.symbol_acc)
        )?;
    }
    Ok(())
}

fn fmt_metric(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:.6}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::budget::ElementBudget;
    use crate::pipeline::build_sketch_set;
    use crate::program::{builtin_sum_tree, SummaryMode};
    use crate::sketch::Rank;

    #[test]
    fn zero_weights_give_uniform_distribution() {
        let m = PerceptualModel::zeros(ModelKind::LinearSoftmax, 16, 10);
        let p = m.apply(&vec![0.3; 16]).unwrap();
        for &pi in p.probs() {
            assert!((pi - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_ratio_of_unit_logit_is_e() {
        let mut m = PerceptualModel::zeros(ModelKind::LinearSoftmax, 1, 3);
        // logits (1, 0, 0) for x = [1]
        m.parameters_mut()[0] = 1.0;
        let p = m.apply(&[1.0]).unwrap();
        let ratio = p.probs()[0] / p.probs()[1];
        assert!((ratio - std::f64::consts::E).abs() < 1e-12, "{ratio}");
    }

    #[test]
    fn loss_examples() {
        let (l, _) = loss_with_gradient(&RootOutput::Value(7.0), &Label::Scalar(7.0), LossKind::L1)
            .unwrap();
        assert_eq!(l, 0.0);
        let uniform = Distribution::uniform(10);
        let l = loss(
            &RootOutput::Distribution(uniform),
            &Label::Class(3),
            LossKind::CrossEntropy,
        )
        .unwrap();
        assert!((l - 10f64.ln()).abs() < 1e-12);
        // batch mean over three singles equals mean of the sums
        let outs = [1.0, 2.0, 4.0];
        let labels = [0.0, 0.0, 0.0];
        let singles: f64 = outs
            .iter()
            .zip(&labels)
            .map(|(&v, &y)| loss(&RootOutput::Value(v), &Label::Scalar(y), LossKind::L1).unwrap())
            .sum::<f64>()
            / 3.0;
        assert!((singles - 7.0 / 3.0).abs() < 1e-12);
        // incompatible pairing
        assert!(loss(&RootOutput::Value(1.0), &Label::Class(0), LossKind::CrossEntropy).is_err());
    }

    #[test]
    fn zero_learning_rate_leaves_model_unchanged() {
        let g = builtin_sum_tree(2, SummaryMode::Value).unwrap();
        let sketches = build_sketch_set(&g, Rank::Fixed(2), 0, ElementBudget::DEFAULT).unwrap();
        let gen = SyntheticFeatures::new(10, 0);
        let data = make_dataset(&g, &gen, 20, 1).unwrap();
        let model = PerceptualModel::random(ModelKind::LinearSoftmax, SYNTHETIC_DIM, 10, 7);
        let cfg = TrainConfig {
            loss: LossKind::L1,
            optimizer: OptimizerKind::Sgd { lr: 0.0 },
            epochs: 2,
            batch_size: 4,
            seed: 3,
        };
        let (trained, history) =
            train(&g, &sketches, &model, &data, &[], &cfg, &InferenceConfig::default()).unwrap();
        assert_eq!(history.len(), 2);
        for (a, b) in trained.parameters().iter().zip(model.parameters()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn training_is_deterministic_for_a_fixed_seed() {
        let g = builtin_sum_tree(2, SummaryMode::Value).unwrap();
        let sketches = build_sketch_set(&g, Rank::Fixed(2), 0, ElementBudget::DEFAULT).unwrap();
        let gen = SyntheticFeatures::new(10, 0);
        let data = make_dataset(&g, &gen, 40, 1).unwrap();
        let model = PerceptualModel::random(ModelKind::LinearSoftmax, SYNTHETIC_DIM, 10, 7);
        let cfg = TrainConfig {
            loss: LossKind::L1,
            optimizer: OptimizerKind::adam(1e-3),
            epochs: 3,
            batch_size: 8,
            seed: 11,
        };
        let icfg = InferenceConfig::default();
        let (a, _) = train(&g, &sketches, &model, &data, &[], &cfg, &icfg).unwrap();
        let (b, _) = train(&g, &sketches, &model, &data, &[], &cfg, &icfg).unwrap();
        for (x, y) in a.parameters().iter().zip(b.parameters()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn single_step_gradient_matches_finite_differences_on_theta() {
        // one SGD step on a one-example batch equals theta - lr * dL/dtheta,
        // so the step displacement exposes the analytic gradient
        let g = builtin_sum_tree(2, SummaryMode::Value).unwrap();
        let sketches = build_sketch_set(&g, Rank::Fixed(2), 0, ElementBudget::DEFAULT).unwrap();
        let gen = SyntheticFeatures::new(10, 0);
        let data = make_dataset(&g, &gen, 1, 5).unwrap();
        let icfg = InferenceConfig::default();
        let lr = 1.0;
        for draw in 0..10u64 {
            let model = PerceptualModel::random(ModelKind::LinearSoftmax, SYNTHETIC_DIM, 10, draw);
            let cfg = TrainConfig {
                loss: LossKind::L1,
                optimizer: OptimizerKind::Sgd { lr },
                epochs: 1,
                batch_size: 1,
                seed: 0,
            };
            let (stepped, _) = train(&g, &sketches, &model, &data, &[], &cfg, &icfg).unwrap();
            let analytic: Vec<f64> = model
                .parameters()
                .iter()
                .zip(stepped.parameters())
                .map(|(w0, w1)| (w0 - w1) / lr)
                .collect();
            let loss_of = |m: &PerceptualModel| -> f64 {
                let leaves: Vec<Distribution> =
                    data[0].inputs.iter().map(|x| m.apply(x).unwrap()).collect();
                let (out, _) = forward(&g, &sketches, &leaves, &icfg).unwrap();
                loss(&out, &data[0].label, LossKind::L1).unwrap()
            };
            let h = 1e-6;
            let mut num = 0.0;
            let mut den = 0.0;
            for i in (0..model.parameters().len()).step_by(7) {
                let mut hi = model.clone();
                hi.parameters_mut()[i] += h;
                let mut lo = model.clone();
                lo.parameters_mut()[i] -= h;
                let fd = (loss_of(&hi) - loss_of(&lo)) / (2.0 * h);
                num += (analytic[i] - fd) * (analytic[i] - fd);
                den += fd * fd;
            }
            let rel = (num.sqrt()) / den.sqrt().max(1e-12);
            assert!(rel < 1e-4, "draw {draw}: relative deviation {rel}");
        }
    }

    #[test]
    fn supervised_baseline_separates_synthetic_digits() {
        let gen = SyntheticFeatures::new(10, 42);
        let train_set = gen.labeled_set(600, 1);
        let test_set = gen.labeled_set(300, 2);
        let model = PerceptualModel::random(ModelKind::LinearSoftmax, SYNTHETIC_DIM, 10, 0);
        let fit = train_supervised(&model, &train_set, 40, OptimizerKind::adam(5e-3), 3).unwrap();
        let hits = test_set
            .iter()
            .filter(|(x, y)| fit.apply(x).unwrap().argmax() == *y)
            .count();
        let acc = hits as f64 / test_set.len() as f64;
        assert!(acc >= 0.99, "supervised baseline accuracy {acc}");
    }

    #[test]
    fn short_weak_run_reduces_training_loss() {
        let g = builtin_sum_tree(4, SummaryMode::Value).unwrap();
        let sketches = build_sketch_set(&g, Rank::Fixed(2), 0, ElementBudget::DEFAULT).unwrap();
        let gen = SyntheticFeatures::new(10, 42);
        let data = make_dataset(&g, &gen, 300, 9).unwrap();
        let model = PerceptualModel::random(ModelKind::LinearSoftmax, SYNTHETIC_DIM, 10, 1);
        let cfg = TrainConfig {
            loss: LossKind::L1,
            optimizer: OptimizerKind::adam(2e-3),
            epochs: 10,
            batch_size: 16,
            seed: 4,
        };
        let (_, history) =
            train(&g, &sketches, &model, &data, &[], &cfg, &InferenceConfig::default()).unwrap();
        assert!(
            history.last().unwrap().train_loss < history[0].train_loss,
            "loss went {} -> {}",
            history[0].train_loss,
            history.last().unwrap().train_loss
        );
    }

    #[test]
    fn evaluate_argmax_on_a_perfect_model_is_exact() {
        let g = builtin_sum_tree(4, SummaryMode::Value).unwrap();
        let gen = SyntheticFeatures::new(10, 42);
        let data = make_dataset(&g, &gen, 50, 3).unwrap();
        let model = PerceptualModel::random(ModelKind::LinearSoftmax, SYNTHETIC_DIM, 10, 0);
        let sup: Vec<(Vec<f64>, usize)> = gen.labeled_set(600, 5);
        let fit = train_supervised(&model, &sup, 40, OptimizerKind::adam(5e-3), 6).unwrap();
        let acc = evaluate_argmax(&g, &fit, &data).unwrap();
        assert!(acc.task >= 0.9, "task accuracy {}", acc.task);
        assert!(acc.symbol >= 0.97, "symbol accuracy {}", acc.symbol);
    }

    #[test]
    fn metrics_csv_has_the_fixed_header_and_rows(){
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let history = vec![EpochMetrics {
            epoch: 1,
            wall_seconds: 0.5,
            train_loss: 1.25,
            task_acc: 0.5,
            symbol_acc: f64::NAN,
        }];
        write_metrics_csv(&path, &history).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "epoch,wall_seconds,train_loss,task_acc,symbol_acc");
        assert_eq!(lines.next().unwrap(), "1,0.500,1.250000,0.500000,");
    }
}
