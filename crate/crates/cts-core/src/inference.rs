//! Layered forward inference through sketched summaries and the
//! matching analytic backward pass.
//!
//! Every step is a plain contraction of tensor-train cores with input
//! distributions: value summaries produce a scalar expectation (turned
//! into a distribution by the RBF kernel when a later layer consumes
//! it), one-hot summaries produce a distribution directly. The full
//! tensors are never rebuilt. All contractions are multilinear, so
//! gradients are the same contractions with one input swapped for a
//! cotangent vector.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::program::{OutputKind, ProgramGraph, RootSpec, SubProgram, Wire};
use crate::sketch::TTSketch;

/// Nonnegative weights over a finite symbol set, summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution(Vec<f64>);

impl Distribution {
    pub fn new(probs: Vec<f64>) -> Result<Distribution> {
        if probs.is_empty() {
            return Err(Error::Argument("empty distribution".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Argument("distribution entries must be finite and nonnegative".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Argument(format!("distribution sums to {sum}, not 1")));
        }
        Ok(Distribution(probs))
    }

    /// Skips validation. For perturbation analysis (finite differences)
    /// where entries intentionally stray off the simplex.
    pub fn new_unchecked(probs: Vec<f64>) -> Distribution {
        Distribution(probs)
    }

    pub fn uniform(n: usize) -> Distribution {
        Distribution(vec![1.0 / n as f64; n])
    }

    pub fn one_hot(n: usize, at: usize) -> Distribution {
        let mut p = vec![0.0; n];
        p[at] = 1.0;
        Distribution(p)
    }

    /// Clamps negatives to zero and L1-normalizes; an all-zero vector
    /// becomes uniform. Returns the distribution and whether the
    /// uniform fallback fired.
    pub fn normalized_from_weights(weights: &[f64]) -> (Distribution, bool) {
        let clamped: Vec<f64> = weights.iter().map(|&w| w.max(0.0)).collect();
        let sum: f64 = clamped.iter().sum();
        if sum <= 0.0 {
            (Distribution::uniform(weights.len()), true)
        } else {
            (Distribution(clamped.iter().map(|&w| w / sum).collect()), false)
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// First-maximum argmax (ties resolve to the lower index).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }

    pub fn expectation(&self) -> f64 {
        self.0.iter().enumerate().map(|(i, &p)| i as f64 * p).sum()
    }

    /// Zero-extends to `n` symbols.
    pub fn padded(&self, n: usize) -> Distribution {
        debug_assert!(n >= self.0.len());
        let mut p = self.0.clone();
        p.resize(n, 0.0);
        Distribution(p)
    }
}

/// RBF conversion parameters: kernel width and the size of the integer
/// output set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RbfConfig {
    pub sigma: f64,
    pub support: usize,
    /// Square the distance inside the exponent (the conventional
    /// Gaussian kernel). Off by default; the unsquared form is primary.
    pub squared: bool,
}

impl RbfConfig {
    pub fn new(sigma: f64, support: usize) -> Result<RbfConfig> {
        if !(sigma > 0.0) {
            return Err(Error::Argument(format!("sigma must be positive, got {sigma}")));
        }
        if support == 0 {
            return Err(Error::Argument("rbf support must be nonempty".into()));
        }
        Ok(RbfConfig { sigma, support, squared: false })
    }

    pub fn with_squared(mut self, squared: bool) -> RbfConfig {
        self.squared = squared;
        self
    }

    fn weight(&self, v: f64, j: usize) -> f64 {
        let d = v - j as f64;
        let inv = 1.0 / (2.0 * self.sigma * self.sigma);
        if self.squared {
            (-d * d * inv).exp()
        } else {
            (-d.abs() * inv).exp()
        }
    }

    fn weight_derivative(&self, v: f64, j: usize, w: f64) -> f64 {
        let d = v - j as f64;
        let inv = 1.0 / (2.0 * self.sigma * self.sigma);
        if self.squared {
            w * (-2.0 * d * inv)
        } else {
            // subgradient 0 at the kink, matching central differences
            w * (-d.signum() * inv) * f64::from(d != 0.0)
        }
    }
}

/// Converts a scalar into a distribution over `0..support` by RBF
/// weighting and L1 normalization.
pub fn rbf_normalize(v: f64, cfg: &RbfConfig) -> Result<Distribution> {
    if !v.is_finite() {
        return Err(Error::Numeric(format!("rbf input {v} is not finite")));
    }
    let weights: Vec<f64> = (0..cfg.support).map(|j| cfg.weight(v, j)).collect();
    let sum: f64 = weights.iter().sum();
    Ok(Distribution(weights.iter().map(|w| w / sum).collect()))
}

/// d(loss)/dv given the gradient on the normalized output.
fn rbf_backward(v: f64, cfg: &RbfConfig, grad_out: &[f64]) -> f64 {
    let weights: Vec<f64> = (0..cfg.support).map(|j| cfg.weight(v, j)).collect();
    let sum: f64 = weights.iter().sum();
    let dsum: f64 = (0..cfg.support)
        .map(|j| cfg.weight_derivative(v, j, weights[j]))
        .sum();
    let mut grad = 0.0;
    for (j, &g) in grad_out.iter().enumerate() {
        let dw = cfg.weight_derivative(v, j, weights[j]);
        grad += g * (dw * sum - weights[j] * dsum) / (sum * sum);
    }
    grad
}

// ---------------------------------------------------------------------------
// contractions
// ---------------------------------------------------------------------------

fn check_inputs(s: &TTSketch, inputs: &[&Distribution], axes: usize) -> Result<()> {
    if inputs.len() != axes {
        return Err(Error::Argument(format!(
            "{} input distributions for {} contraction axes",
            inputs.len(),
            axes
        )));
    }
    for (j, d) in inputs.iter().enumerate() {
        if d.len() != s.source_dims()[j] {
            return Err(Error::Argument(format!(
                "input {j}: {} symbols, axis expects {}",
                d.len(),
                s.source_dims()[j]
            )));
        }
    }
    Ok(())
}

/// Carries the bond-space vector through one core contracted with one
/// input distribution.
fn carry_through(core: &crate::tensor::DenseTensor, probs: &[f64], w: &[f64]) -> Vec<f64> {
    let (rl, n, rr) = (core.dims()[0], core.dims()[1], core.dims()[2]);
    debug_assert_eq!(w.len(), rl);
    let cd = core.data();
    let mut out = vec![0.0; rr];
    for (a, &wa) in w.iter().enumerate() {
        if wa == 0.0 {
            continue;
        }
        for (x, &px) in probs.iter().enumerate() {
            if px == 0.0 {
                continue;
            }
            let c = wa * px;
            let row = &cd[(a * n + x) * rr..(a * n + x + 1) * rr];
            for (o, &cv) in out.iter_mut().zip(row) {
                *o += c * cv;
            }
        }
    }
    out
}

/// Same as `carry_through` but moving right-to-left.
fn carry_back(core: &crate::tensor::DenseTensor, probs: &[f64], w: &[f64]) -> Vec<f64> {
    let (rl, n, rr) = (core.dims()[0], core.dims()[1], core.dims()[2]);
    debug_assert_eq!(w.len(), rr);
    let cd = core.data();
    let mut out = vec![0.0; rl];
    for a in 0..rl {
        let mut acc = 0.0;
        for (x, &px) in probs.iter().enumerate() {
            if px == 0.0 {
                continue;
            }
            let row = &cd[(a * n + x) * rr..(a * n + x + 1) * rr];
            let mut dot = 0.0;
            for (&cv, &wb) in row.iter().zip(w) {
                dot += cv * wb;
            }
            acc += px * dot;
        }
        out[a] = acc;
    }
    out
}

/// Expected value of a value-summary under the input distributions,
/// chained through bond dimensions without rebuilding the tensor.
pub fn contract_value(s: &TTSketch, inputs: &[&Distribution]) -> Result<f64> {
    check_inputs(s, inputs, s.cores().len())?;
    let mut w = vec![1.0];
    for (core, dist) in s.cores().iter().zip(inputs) {
        w = carry_through(core, dist.probs(), &w);
    }
    debug_assert_eq!(w.len(), 1);
    Ok(w[0])
}

/// Output distribution of a one-hot summary sketch: input axes are
/// contracted first, the trailing class axis last. Negative weights
/// from truncation clamp to zero before normalization; an all-zero
/// vector falls back to uniform (flagged).
pub fn contract_onehot(s: &TTSketch, inputs: &[&Distribution]) -> Result<(Distribution, OneHotTrace)> {
    let cores = s.cores();
    if cores.len() < 2 {
        return Err(Error::Argument("one-hot sketch needs an output axis".into()));
    }
    check_inputs(s, inputs, cores.len() - 1)?;
    let mut w = vec![1.0];
    for (core, dist) in cores[..cores.len() - 1].iter().zip(inputs) {
        w = carry_through(core, dist.probs(), &w);
    }
    let last = &cores[cores.len() - 1];
    let (rl, classes, _) = (last.dims()[0], last.dims()[1], last.dims()[2]);
    let cd = last.data();
    let mut raw = vec![0.0; classes];
    for (a, &wa) in w.iter().enumerate().take(rl) {
        if wa == 0.0 {
            continue;
        }
        for (y, r) in raw.iter_mut().enumerate() {
            *r += wa * cd[a * classes + y];
        }
    }
    let (dist, uniform_fallback) = Distribution::normalized_from_weights(&raw);
    Ok((dist, OneHotTrace { raw, uniform_fallback }))
}

/// Pre-normalization record of a one-hot contraction.
#[derive(Debug, Clone, PartialEq)]
pub struct OneHotTrace {
    pub raw: Vec<f64>,
    pub uniform_fallback: bool,
}

/// Gradients of a chained contraction with respect to every input
/// distribution, given a seed vector on the trailing bond space.
fn chain_gradients(
    cores: &[crate::tensor::DenseTensor],
    inputs: &[&Distribution],
    seed: &[f64],
) -> Vec<Vec<f64>> {
    let d = cores.len();
    // prefixes[j]: bond vector before core j
    let mut prefixes: Vec<Vec<f64>> = Vec::with_capacity(d + 1);
    prefixes.push(vec![1.0]);
    for j in 0..d {
        let next = carry_through(&cores[j], inputs[j].probs(), &prefixes[j]);
        prefixes.push(next);
    }
    // suffixes[j]: cotangent bond vector after core j
    let mut suffixes: Vec<Vec<f64>> = vec![Vec::new(); d + 1];
    suffixes[d] = seed.to_vec();
    for j in (0..d).rev() {
        suffixes[j] = carry_back(&cores[j], inputs[j].probs(), &suffixes[j + 1]);
    }
    let mut grads = Vec::with_capacity(d);
    for j in 0..d {
        let core = &cores[j];
        let (rl, n, rr) = (core.dims()[0], core.dims()[1], core.dims()[2]);
        let cd = core.data();
        let left = &prefixes[j];
        let right = &suffixes[j + 1];
        let mut g = vec![0.0; n];
        for (a, &la) in left.iter().enumerate().take(rl) {
            if la == 0.0 {
                continue;
            }
            for (x, gx) in g.iter_mut().enumerate() {
                let row = &cd[(a * n + x) * rr..(a * n + x + 1) * rr];
                let mut dot = 0.0;
                for (&cv, &rb) in row.iter().zip(right) {
                    dot += cv * rb;
                }
                *gx += la * dot;
            }
        }
        grads.push(g);
    }
    grads
}

/// Gradients of `contract_value` w.r.t. each input distribution.
pub fn contract_value_gradients(
    s: &TTSketch,
    inputs: &[&Distribution],
    upstream: f64,
) -> Result<Vec<Vec<f64>>> {
    check_inputs(s, inputs, s.cores().len())?;
    Ok(chain_gradients(s.cores(), inputs, &[upstream]))
}

/// Gradients of `contract_onehot` w.r.t. each input distribution, given
/// the gradient on the normalized output and the forward trace.
pub fn contract_onehot_gradients(
    s: &TTSketch,
    inputs: &[&Distribution],
    trace: &OneHotTrace,
    grad_out: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let cores = s.cores();
    check_inputs(s, inputs, cores.len() - 1)?;
    if trace.uniform_fallback {
        // the uniform fallback is constant in the inputs
        return Ok(inputs.iter().map(|d| vec![0.0; d.len()]).collect());
    }
    let clamped: Vec<f64> = trace.raw.iter().map(|&w| w.max(0.0)).collect();
    let sum: f64 = clamped.iter().sum();
    let weighted: f64 = grad_out
        .iter()
        .zip(&clamped)
        .map(|(&g, &c)| g * c)
        .sum::<f64>()
        / (sum * sum);
    let grad_raw: Vec<f64> = trace
        .raw
        .iter()
        .zip(grad_out)
        .map(|(&r, &g)| if r > 0.0 { g / sum - weighted } else { 0.0 })
        .collect();
    // fold the class axis into a bond-space seed
    let last = &cores[cores.len() - 1];
    let (rl, classes, _) = (last.dims()[0], last.dims()[1], last.dims()[2]);
    let cd = last.data();
    let mut seed = vec![0.0; rl];
    for (a, s_a) in seed.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (y, &g) in grad_raw.iter().enumerate().take(classes) {
            acc += cd[a * classes + y] * g;
        }
        *s_a = acc;
    }
    Ok(chain_gradients(&cores[..cores.len() - 1], inputs, &seed))
}

// ---------------------------------------------------------------------------
// graph-level forward / backward
// ---------------------------------------------------------------------------

/// Sketches keyed by sub-program id; nodes sharing a sub-program share
/// one sketch.
#[derive(Debug, Clone, Default)]
pub struct SketchSet {
    map: BTreeMap<String, TTSketch>,
}

impl SketchSet {
    pub fn new() -> SketchSet {
        SketchSet { map: BTreeMap::new() }
    }

    pub fn insert(&mut self, id: String, sketch: TTSketch) {
        self.map.insert(id, sketch);
    }

    pub fn get(&self, id: &str) -> Option<&TTSketch> {
        self.map.get(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &TTSketch)> {
        self.map.iter()
    }

    fn for_program(&self, sp: &SubProgram) -> Result<&TTSketch> {
        let id = sp.id();
        let sketch = self
            .map
            .get(&id)
            .ok_or_else(|| Error::Config(format!("no sketch for sub-program {id}")))?;
        let mut want = sp.input_domains();
        if let OutputKind::OneHot { classes } = sp.output_kind() {
            want.push(classes);
        }
        if sketch.source_dims() != want.as_slice() {
            return Err(Error::Config(format!(
                "sketch for {id} has dims {:?}, summary needs {want:?}",
                sketch.source_dims()
            )));
        }
        Ok(sketch)
    }
}

/// Inference-wide knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferenceConfig {
    /// RBF kernel width for value-node conversions.
    pub sigma: f64,
    /// Use the squared-distance kernel variant.
    pub squared_rbf: bool,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig { sigma: 0.5, squared_rbf: false }
    }
}

/// Root output of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub enum RootOutput {
    Value(f64),
    Distribution(Distribution),
    /// Per-member scalars of a tuple root.
    Tuple(Vec<f64>),
}

/// Cotangent matching the root output shape.
#[derive(Debug, Clone, PartialEq)]
pub enum RootGradient {
    Value(f64),
    Distribution(Vec<f64>),
    Tuple(Vec<f64>),
}

#[derive(Debug, Clone)]
enum NodeTrace {
    Value {
        inputs: Vec<Distribution>,
        v: f64,
        /// Present when a later layer consumes this node.
        rbf: Option<Distribution>,
    },
    OneHot {
        inputs: Vec<Distribution>,
        trace: OneHotTrace,
        out: Distribution,
    },
}

/// Recorded forward intermediates for one example.
#[derive(Debug, Clone)]
pub struct TraceTape {
    records: Vec<Vec<NodeTrace>>,
    root: RootOutput,
    cfg: InferenceConfig,
    /// Any one-hot contraction hit the all-zero uniform fallback.
    pub saw_uniform_fallback: bool,
}

impl TraceTape {
    pub fn root(&self) -> &RootOutput {
        &self.root
    }

    pub fn node_count(&self) -> usize {
        self.records.iter().map(|l| l.len()).sum()
    }
}

fn consumers_mask(graph: &ProgramGraph) -> Vec<Vec<bool>> {
    let mut mask: Vec<Vec<bool>> = graph.layers.iter().map(|l| vec![false; l.len()]).collect();
    for layer in &graph.layers {
        for node in layer {
            for wire in &node.inputs {
                if let Wire::Node(l, i) = wire {
                    mask[*l][*i] = true;
                }
            }
        }
    }
    mask
}

fn padded_input(dist: &Distribution, want: usize, what: &str) -> Result<Distribution> {
    if dist.len() > want {
        return Err(Error::Config(format!(
            "{what}: distribution carries {} symbols into a domain of {want}",
            dist.len()
        )));
    }
    Ok(if dist.len() == want { dist.clone() } else { dist.padded(want) })
}

/// Executes the graph layer by layer on the given leaf distributions.
///
/// Value nodes consumed by later layers pass through the RBF
/// conversion; the root (or every tuple member) stays a raw scalar.
pub fn forward(
    graph: &ProgramGraph,
    sketches: &SketchSet,
    leaves: &[Distribution],
    cfg: &InferenceConfig,
) -> Result<(RootOutput, TraceTape)> {
    if leaves.len() != graph.leaf_domains.len() {
        return Err(Error::Config(format!(
            "graph has {} leaves, got {} distributions",
            graph.leaf_domains.len(),
            leaves.len()
        )));
    }
    for (i, (d, &dom)) in leaves.iter().zip(&graph.leaf_domains).enumerate() {
        if d.len() > dom {
            return Err(Error::Config(format!(
                "leaf {i}: {} symbols exceed domain {dom}",
                d.len()
            )));
        }
    }
    let consumed = consumers_mask(graph);
    let mut records: Vec<Vec<NodeTrace>> = Vec::with_capacity(graph.layers.len());
    let mut outputs: Vec<Vec<Option<Distribution>>> =
        graph.layers.iter().map(|l| vec![None; l.len()]).collect();
    let mut scalars: Vec<Vec<Option<f64>>> =
        graph.layers.iter().map(|l| vec![None; l.len()]).collect();
    let mut saw_fallback = false;
    for (l, layer) in graph.layers.iter().enumerate() {
        let mut layer_records = Vec::with_capacity(layer.len());
        for (i, node) in layer.iter().enumerate() {
            let sp = graph.program_of(node);
            let sketch = sketches.for_program(sp)?;
            let domains = sp.input_domains();
            let mut inputs = Vec::with_capacity(node.inputs.len());
            for (slot, wire) in node.inputs.iter().enumerate() {
                let raw = match wire {
                    Wire::Leaf(ix) => &leaves[*ix],
                    Wire::Node(wl, wi) => outputs[*wl][*wi].as_ref().ok_or_else(|| {
                        Error::Config(format!("node ({l},{i}) reads a node with no distribution output"))
                    })?,
                };
                inputs.push(padded_input(raw, domains[slot], &format!("node ({l},{i}) slot {slot}"))?);
            }
            let input_refs: Vec<&Distribution> = inputs.iter().collect();
            match sp.output_kind() {
                OutputKind::Value => {
                    let v = contract_value(sketch, &input_refs)?;
                    let rbf = if consumed[l][i] {
                        let support = sp.output_symbols().ok_or_else(|| {
                            Error::Config(format!(
                                "node ({l},{i}) [{}] feeds later layers but has no integer output set",
                                sp.id()
                            ))
                        })?;
                        let rcfg = RbfConfig::new(cfg.sigma, support)?.with_squared(cfg.squared_rbf);
                        let d = rbf_normalize(v, &rcfg)?;
                        outputs[l][i] = Some(d.clone());
                        Some(d)
                    } else {
                        None
                    };
                    scalars[l][i] = Some(v);
                    layer_records.push(NodeTrace::Value { inputs, v, rbf });
                }
                OutputKind::OneHot { .. } => {
                    let (d, trace) = contract_onehot(sketch, &input_refs)?;
                    saw_fallback |= trace.uniform_fallback;
                    outputs[l][i] = Some(d.clone());
                    layer_records.push(NodeTrace::OneHot { inputs, trace, out: d });
                }
            }
        }
        records.push(layer_records);
    }
    let root = match &graph.root {
        RootSpec::Node(l, i) => match graph.program_of(graph.node(*l, *i)).output_kind() {
            OutputKind::Value => RootOutput::Value(scalars[*l][*i].unwrap()),
            OutputKind::OneHot { .. } => RootOutput::Distribution(outputs[*l][*i].clone().unwrap()),
        },
        RootSpec::Tuple(members) => {
            let mut vals = Vec::with_capacity(members.len());
            for &(l, i) in members {
                let v = scalars[l][i].ok_or_else(|| {
                    Error::Config(format!("tuple root member ({l},{i}) is not a value node"))
                })?;
                vals.push(v);
            }
            RootOutput::Tuple(vals)
        }
    };
    let tape = TraceTape { records, root: root.clone(), cfg: *cfg, saw_uniform_fallback: saw_fallback };
    Ok((root, tape))
}

/// Propagates a root cotangent back to every leaf distribution.
/// Sketch cores are constants; only input gradients flow.
pub fn backward(
    graph: &ProgramGraph,
    sketches: &SketchSet,
    tape: &TraceTape,
    upstream: &RootGradient,
) -> Result<Vec<Vec<f64>>> {
    if tape.records.len() != graph.layers.len()
        || tape
            .records
            .iter()
            .zip(&graph.layers)
            .any(|(r, l)| r.len() != l.len())
    {
        return Err(Error::Internal("tape does not match the graph".into()));
    }
    // accumulated cotangents per node
    let mut dist_grads: Vec<Vec<Option<Vec<f64>>>> =
        graph.layers.iter().map(|l| vec![None; l.len()]).collect();
    let mut scalar_grads: Vec<Vec<f64>> = graph.layers.iter().map(|l| vec![0.0; l.len()]).collect();
    match (&graph.root, upstream) {
        (RootSpec::Node(l, i), RootGradient::Value(g)) => scalar_grads[*l][*i] = *g,
        (RootSpec::Node(l, i), RootGradient::Distribution(g)) => {
            dist_grads[*l][*i] = Some(g.clone());
        }
        (RootSpec::Tuple(members), RootGradient::Tuple(gs)) => {
            if members.len() != gs.len() {
                return Err(Error::Internal("tuple gradient length mismatch".into()));
            }
            for (&(l, i), &g) in members.iter().zip(gs) {
                scalar_grads[l][i] = g;
            }
        }
        _ => return Err(Error::Internal("root gradient shape mismatch".into())),
    }
    let mut leaf_grads: Vec<Vec<f64>> =
        graph.leaf_domains.iter().map(|&d| vec![0.0; d]).collect();
    for l in (0..graph.layers.len()).rev() {
        for i in (0..graph.layers[l].len()).rev() {
            let node = &graph.layers[l][i];
            let sp = graph.program_of(node);
            let sketch = sketches.for_program(sp)?;
            let record = &tape.records[l][i];
            let input_grads = match record {
                NodeTrace::Value { inputs, v, rbf } => {
                    let mut total = scalar_grads[l][i];
                    if let (Some(_), Some(g)) = (rbf, dist_grads[l][i].as_ref()) {
                        let support = sp.output_symbols().unwrap();
                        let rcfg = RbfConfig::new(tape.cfg.sigma, support)?
                            .with_squared(tape.cfg.squared_rbf);
                        total += rbf_backward(*v, &rcfg, g);
                    }
                    let refs: Vec<&Distribution> = inputs.iter().collect();
                    if total != 0.0 {
                        contract_value_gradients(sketch, &refs, total)?
                    } else {
                        inputs.iter().map(|d| vec![0.0; d.len()]).collect()
                    }
                }
                NodeTrace::OneHot { inputs, trace, out } => {
                    let refs: Vec<&Distribution> = inputs.iter().collect();
                    match dist_grads[l][i].as_ref() {
                        Some(g) if g.len() == out.len() => {
                            contract_onehot_gradients(sketch, &refs, trace, g)?
                        }
                        Some(_) => {
                            return Err(Error::Internal("distribution gradient length mismatch".into()))
                        }
                        None => inputs.iter().map(|d| vec![0.0; d.len()]).collect(),
                    }
                }
            };
            scatter_input_grads(graph, l, i, &input_grads, &mut dist_grads, &mut leaf_grads);
        }
    }
    Ok(leaf_grads)
}

fn scatter_input_grads(
    graph: &ProgramGraph,
    l: usize,
    i: usize,
    input_grads: &[Vec<f64>],
    dist_grads: &mut [Vec<Option<Vec<f64>>>],
    leaf_grads: &mut [Vec<f64>],
) {
    let node = &graph.layers[l][i];
    for (wire, g) in node.inputs.iter().zip(input_grads) {
        match wire {
            Wire::Leaf(ix) => {
                let dst = &mut leaf_grads[*ix];
                for (d, &gv) in dst.iter_mut().zip(g) {
                    *d += gv;
                }
            }
            Wire::Node(wl, wi) => {
                let want = graph
                    .program_of(&graph.layers[*wl][*wi])
                    .output_symbols()
                    .expect("validated upstream");
                let slot = &mut dist_grads[*wl][*wi];
                let acc = slot.get_or_insert_with(|| vec![0.0; want]);
                for (d, &gv) in acc.iter_mut().zip(g) {
                    *d += gv;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::budget::ElementBudget;
    use crate::pipeline::build_sketch_set;
    use crate::program::{
        builtin_sum_monolithic, builtin_sum_tree, builtin_visudo, partial_apply, BuildMode,
        SummaryMode,
    };
    use crate::sketch::{tt_svd, Rank, SketchConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pair_sum_sketch(rank: Rank) -> TTSketch {
        let sp = SubProgram::Sum { arity: 2, input_size: 10 };
        let phi = crate::program::build_summary(&sp, &BuildMode::Enumerate, ElementBudget::DEFAULT)
            .unwrap();
        tt_svd(&phi, &SketchConfig::new(rank, 0)).unwrap()
    }

    fn random_dist(n: usize, rng: &mut ChaCha8Rng) -> Distribution {
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        Distribution::new(raw.into_iter().map(|v| v / sum).collect()).unwrap()
    }

    #[test]
    fn one_hot_inputs_index_the_summary() {
        let s = pair_sum_sketch(Rank::Full);
        for (a, b) in [(0usize, 0usize), (3, 4), (9, 9), (7, 2)] {
            let pa = Distribution::one_hot(10, a);
            let pb = Distribution::one_hot(10, b);
            let v = contract_value(&s, &[&pa, &pb]).unwrap();
            assert!((v - (a + b) as f64).abs() < 1e-9, "({a},{b}) -> {v}");
        }
    }

    #[test]
    fn uniform_inputs_give_mean_sum() {
        let s = pair_sum_sketch(Rank::Fixed(2));
        let u = Distribution::uniform(10);
        let v = contract_value(&s, &[&u, &u]).unwrap();
        assert!((v - 9.0).abs() < 1e-9, "{v}");
    }

    #[test]
    fn monolithic_sum4_matches_enumeration_oracle() {
        let g = builtin_sum_monolithic(4, SummaryMode::Value).unwrap();
        let sketches = build_sketch_set(&g, Rank::Full, 0, ElementBudget::DEFAULT).unwrap();
        let s = sketches.get("sum_a4_d10").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let dists: Vec<Distribution> = (0..4).map(|_| random_dist(10, &mut rng)).collect();
            let refs: Vec<&Distribution> = dists.iter().collect();
            let got = contract_value(s, &refs).unwrap();
            // independent loop-based expectation
            let mut want = 0.0;
            for a in 0..10 {
                for b in 0..10 {
                    for c in 0..10 {
                        for d in 0..10 {
                            let p = dists[0].probs()[a]
                                * dists[1].probs()[b]
                                * dists[2].probs()[c]
                                * dists[3].probs()[d];
                            want += p * (a + b + c + d) as f64;
                        }
                    }
                }
            }
            assert!((got - want).abs() < 1e-6, "got {got}, oracle {want}");
        }
    }

    #[test]
    fn onehot_contraction_on_point_masses_is_exact() {
        let sp = SubProgram::OneHotOf(Box::new(SubProgram::Sum { arity: 2, input_size: 10 }));
        let phi = crate::program::build_summary(&sp, &BuildMode::Enumerate, ElementBudget::DEFAULT)
            .unwrap();
        let s = tt_svd(&phi, &SketchConfig::full(0)).unwrap();
        let pa = Distribution::one_hot(10, 6);
        let pb = Distribution::one_hot(10, 5);
        let (d, trace) = contract_onehot(&s, &[&pa, &pb]).unwrap();
        assert!(!trace.uniform_fallback);
        assert_eq!(d.argmax(), 11);
        assert!((d.probs()[11] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn uniform_pair_sum_onehot_is_triangular() {
        let sp = SubProgram::OneHotOf(Box::new(SubProgram::Sum { arity: 2, input_size: 10 }));
        let phi = crate::program::build_summary(&sp, &BuildMode::Enumerate, ElementBudget::DEFAULT)
            .unwrap();
        let s = tt_svd(&phi, &SketchConfig::full(0)).unwrap();
        let u = Distribution::uniform(10);
        let (d, _) = contract_onehot(&s, &[&u, &u]).unwrap();
        assert!((d.probs()[0] - 0.01).abs() < 1e-9);
        assert!((d.probs()[9] - 0.10).abs() < 1e-9);
        assert!((d.probs()[18] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn conditioned_cell_constraint_forces_the_missing_value() {
        let cell = crate::program::builtin_sudoku_cell();
        let restricted = partial_apply(&cell, &[1, 2, 3, 4, 5], "cell_test").unwrap();
        let phi =
            crate::program::build_summary(&restricted, &BuildMode::Enumerate, ElementBudget::DEFAULT)
                .unwrap();
        let s = tt_svd(&phi, &SketchConfig::full(0)).unwrap();
        let inputs = [
            Distribution::one_hot(10, 6),
            Distribution::one_hot(10, 7),
            Distribution::one_hot(10, 8),
        ];
        let refs: Vec<&Distribution> = inputs.iter().collect();
        let (d, trace) = contract_onehot(&s, &refs).unwrap();
        assert!(!trace.uniform_fallback);
        assert_eq!(d.argmax(), 8); // value 9 forced
        assert!((d.probs()[8] - 1.0).abs() < 1e-9);
        // contradictory: a duplicate of a fixed value falls back to uniform
        let clash = [
            Distribution::one_hot(10, 1),
            Distribution::one_hot(10, 7),
            Distribution::one_hot(10, 8),
        ];
        let refs: Vec<&Distribution> = clash.iter().collect();
        let (d, trace) = contract_onehot(&s, &refs).unwrap();
        assert!(trace.uniform_fallback);
        for &p in d.probs() {
            assert!((p - 1.0 / 9.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rbf_weights_and_argmax() {
        let cfg = RbfConfig::new(0.5, 19).unwrap();
        let d = rbf_normalize(5.0, &cfg).unwrap();
        // pre-normalization weight at j=5 is exp(0)=1, so neighbours sit
        // at exp(-2) of it
        let ratio = d.probs()[6] / d.probs()[5];
        assert!((ratio - (-2.0f64).exp()).abs() < 1e-12, "{ratio}");
        assert!((d.probs()[4] / d.probs()[5] - (-2.0f64).exp()).abs() < 1e-12);
        // argmax tracks rounding, ties at .5 resolve downward
        let mut v = 0.0;
        while v <= 18.0 {
            let d = rbf_normalize(v, &cfg).unwrap();
            let want = if v.fract() == 0.5 { v.floor() } else { v.round() };
            assert_eq!(d.argmax(), want as usize, "v={v}");
            v += 0.25;
        }
    }

    #[test]
    fn squared_variant_narrows_the_kernel() {
        let cfg = RbfConfig::new(0.5, 19).unwrap().with_squared(true);
        let d = rbf_normalize(5.0, &cfg).unwrap();
        let ratio = d.probs()[6] / d.probs()[5];
        assert!((ratio - (-2.0f64).exp()).abs() < 1e-12);
        let far = d.probs()[8] / d.probs()[5];
        assert!((far - (-18.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn value_gradients_match_finite_differences() {
        let s = pair_sum_sketch(Rank::Fixed(2));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let pa = random_dist(10, &mut rng);
            let pb = random_dist(10, &mut rng);
            let grads = contract_value_gradients(&s, &[&pa, &pb], 1.0).unwrap();
            let h = 1e-5;
            for (which, base) in [(0usize, &pa), (1usize, &pb)] {
                for x in 0..10 {
                    let mut lo = base.probs().to_vec();
                    let mut hi = lo.clone();
                    lo[x] -= h;
                    hi[x] += h;
                    let (dlo, dhi) =
                        (Distribution::new_unchecked(lo), Distribution::new_unchecked(hi));
                    let args_hi: [&Distribution; 2] =
                        if which == 0 { [&dhi, &pb] } else { [&pa, &dhi] };
                    let args_lo: [&Distribution; 2] =
                        if which == 0 { [&dlo, &pb] } else { [&pa, &dlo] };
                    let fd = (contract_value(&s, &args_hi).unwrap()
                        - contract_value(&s, &args_lo).unwrap())
                        / (2.0 * h);
                    let an = grads[which][x];
                    let denom = fd.abs().max(1e-9);
                    assert!(
                        ((an - fd) / denom).abs() < 1e-6,
                        "input {which} slot {x}: analytic {an}, fd {fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn rbf_gradient_matches_central_differences_at_integer() {
        let cfg = RbfConfig::new(0.5, 19).unwrap();
        let g_out: Vec<f64> = (0..19).map(|j| (j as f64 * 0.3).sin()).collect();
        for v in [5.0, 5.3, 0.2, 17.9] {
            let an = rbf_backward(v, &cfg, &g_out);
            let h = 1e-6;
            let lo = rbf_normalize(v - h, &cfg).unwrap();
            let hi = rbf_normalize(v + h, &cfg).unwrap();
            let fd: f64 = g_out
                .iter()
                .enumerate()
                .map(|(j, &g)| g * (hi.probs()[j] - lo.probs()[j]) / (2.0 * h))
                .sum();
            let denom = fd.abs().max(1e-6);
            assert!(((an - fd) / denom).abs() < 1e-4, "v={v}: analytic {an}, fd {fd}");
        }
    }

    #[test]
    fn onehot_forward_sum4_is_exact_on_point_masses() {
        let g = builtin_sum_tree(4, SummaryMode::OneHot).unwrap();
        let sketches = build_sketch_set(&g, Rank::Full, 0, ElementBudget::DEFAULT).unwrap();
        let leaves: Vec<Distribution> =
            [1, 2, 3, 4].iter().map(|&d| Distribution::one_hot(10, d)).collect();
        let cfg = InferenceConfig::default();
        let (out, tape) = forward(&g, &sketches, &leaves, &cfg).unwrap();
        match out {
            RootOutput::Distribution(d) => {
                assert_eq!(d.argmax(), 10);
                assert!((d.expectation() - 10.0).abs() < 1e-9);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(!tape.saw_uniform_fallback);
    }

    #[test]
    fn value_forward_sum4_tracks_digit_expectations() {
        let g = builtin_sum_tree(4, SummaryMode::Value).unwrap();
        let sketches = build_sketch_set(&g, Rank::Fixed(2), 0, ElementBudget::DEFAULT).unwrap();
        // The unsquared kernel carries a discretization ripple of up to
        // ~5e-2 per layer at sigma 0.5; the squared kernel's ripple is
        // exponentially small, so linearity of the sum is tight there.
        let tight = InferenceConfig { sigma: 1.0, squared_rbf: true };
        let default_cfg = InferenceConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let leaves: Vec<Distribution> = (0..4).map(|_| random_dist(10, &mut rng)).collect();
            let want: f64 = leaves.iter().map(|d| d.expectation()).sum();
            let (out, _) = forward(&g, &sketches, &leaves, &tight).unwrap();
            match out {
                RootOutput::Value(v) => {
                    assert!((v - want).abs() < 1e-4, "root {v}, digit expectation sum {want}")
                }
                other => panic!("unexpected {other:?}"),
            }
            let (out, _) = forward(&g, &sketches, &leaves, &default_cfg).unwrap();
            match out {
                RootOutput::Value(v) => {
                    assert!((v - want).abs() < 0.25, "default kernel drifted: {v} vs {want}")
                }
                other => panic!("unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn visudo4_point_mass_boards_classify_exactly() {
        let g = builtin_visudo(4).unwrap();
        let sketches = build_sketch_set(&g, Rank::Full, 0, ElementBudget::DEFAULT).unwrap();
        let cfg = InferenceConfig::default();
        let valid = [0, 1, 2, 3, 2, 3, 0, 1, 1, 0, 3, 2, 3, 2, 1, 0];
        let leaves: Vec<Distribution> = valid.iter().map(|&v| Distribution::one_hot(4, v)).collect();
        let (out, _) = forward(&g, &sketches, &leaves, &cfg).unwrap();
        match out {
            RootOutput::Distribution(d) => assert!(d.probs()[1] >= 0.99, "{:?}", d.probs()),
            other => panic!("unexpected {other:?}"),
        }
        let mut bad = valid;
        bad[1] = 0;
        let leaves: Vec<Distribution> = bad.iter().map(|&v| Distribution::one_hot(4, v)).collect();
        let (out, _) = forward(&g, &sketches, &leaves, &cfg).unwrap();
        match out {
            RootOutput::Distribution(d) => assert!(d.probs()[0] >= 0.99, "{:?}", d.probs()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_upstream_gradient_zeroes_leaf_gradients() {
        let g = builtin_sum_tree(4, SummaryMode::Value).unwrap();
        let sketches = build_sketch_set(&g, Rank::Fixed(2), 0, ElementBudget::DEFAULT).unwrap();
        let cfg = InferenceConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let leaves: Vec<Distribution> = (0..4).map(|_| random_dist(10, &mut rng)).collect();
        let (_, tape) = forward(&g, &sketches, &leaves, &cfg).unwrap();
        let grads = backward(&g, &sketches, &tape, &RootGradient::Value(0.0)).unwrap();
        for g in grads {
            assert!(g.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn end_to_end_leaf_gradients_match_finite_differences() {
        let g = builtin_sum_tree(4, SummaryMode::Value).unwrap();
        let sketches = build_sketch_set(&g, Rank::Fixed(2), 0, ElementBudget::DEFAULT).unwrap();
        let cfg = InferenceConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let leaves: Vec<Distribution> = (0..4).map(|_| random_dist(10, &mut rng)).collect();
            let (_, tape) = forward(&g, &sketches, &leaves, &cfg).unwrap();
            let grads = backward(&g, &sketches, &tape, &RootGradient::Value(1.0)).unwrap();
            let h = 1e-5;
            let root_of = |ls: &[Distribution]| -> f64 {
                match forward(&g, &sketches, ls, &cfg).unwrap().0 {
                    RootOutput::Value(v) => v,
                    _ => unreachable!(),
                }
            };
            let mut an_norm = 0.0;
            let mut diff_norm = 0.0;
            for leaf in 0..4 {
                for x in 0..10 {
                    let mut hi = leaves.to_vec();
                    let mut lo = leaves.to_vec();
                    let mut pv = hi[leaf].probs().to_vec();
                    pv[x] += h;
                    hi[leaf] = Distribution::new_unchecked(pv);
                    let mut pv = lo[leaf].probs().to_vec();
                    pv[x] -= h;
                    lo[leaf] = Distribution::new_unchecked(pv);
                    let fd = (root_of(&hi) - root_of(&lo)) / (2.0 * h);
                    let an = grads[leaf][x];
                    an_norm += an * an;
                    diff_norm += (an - fd) * (an - fd);
                }
            }
            let rel = (diff_norm.sqrt()) / an_norm.sqrt().max(1e-12);
            assert!(rel < 1e-4, "relative gradient deviation {rel}");
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let g = builtin_sum_tree(4, SummaryMode::Value).unwrap();
        let sketches = build_sketch_set(&g, Rank::Fixed(2), 0, ElementBudget::DEFAULT).unwrap();
        let cfg = InferenceConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let leaves: Vec<Distribution> = (0..4).map(|_| random_dist(10, &mut rng)).collect();
        let (a, ta) = forward(&g, &sketches, &leaves, &cfg).unwrap();
        let (b, tb) = forward(&g, &sketches, &leaves, &cfg).unwrap();
        match (a, b) {
            (RootOutput::Value(x), RootOutput::Value(y)) => assert_eq!(x.to_bits(), y.to_bits()),
            _ => panic!("unexpected root kinds"),
        }
        assert_eq!(ta.node_count(), tb.node_count());
        assert_eq!(ta.node_count(), g.node_count());
    }

    #[test]
    fn size_mismatch_is_an_argument_error() {
        let s = pair_sum_sketch(Rank::Full);
        let bad = Distribution::uniform(9);
        let good = Distribution::uniform(10);
        assert!(matches!(
            contract_value(&s, &[&bad, &good]),
            Err(Error::Argument(_))
        ));
        assert!(matches!(contract_value(&s, &[&good]), Err(Error::Argument(_))));
    }

    #[test]
    fn missing_sketch_is_a_config_error() {
        let g = builtin_sum_tree(4, SummaryMode::Value).unwrap();
        let sketches = SketchSet::new();
        let leaves: Vec<Distribution> = (0..4).map(|_| Distribution::uniform(10)).collect();
        assert!(matches!(
            forward(&g, &sketches, &leaves, &InferenceConfig::default()),
            Err(Error::Config(_))
        ));
    }
}
