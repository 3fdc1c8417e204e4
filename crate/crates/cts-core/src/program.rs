//! Sub-program catalog, summary-tensor construction, and the layered
//! program graph.
//!
//! A graph node references one entry of a shared sub-program catalog;
//! nodes with identical behavior share a single summary tensor (and
//! later a single sketch), which is what keeps decomposed programs
//! small.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::budget::ElementBudget;
use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

pub const HWF_SYMBOLS: usize = 14; // digits 0..9 then + - * /

/// What a sub-program emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputKind {
    /// A real scalar per input tuple.
    Value,
    /// A (possibly empty) subset of a finite class set per input tuple.
    OneHot { classes: usize },
}

/// Behavior of one sub-program. Variants are data, not closures, so
/// task configs can name them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubProgram {
    /// Sum of `arity` symbols, each in `0..input_size`.
    Sum { arity: usize, input_size: usize },
    /// Carry-chain step over (place sum s in 0..19, chain value c in
    /// 0..chain_size): s plus one when c carries past 9.
    CarrySum { chain_size: usize },
    /// x mod 10 over `0..input_size`.
    ModTen { input_size: usize },
    /// 1 when x >= 10, else 0.
    CarryDigit { input_size: usize },
    /// Equality indicator of two symbols in `0..domain`.
    Equality { domain: usize },
    /// Boolean OR of two {0,1} symbols.
    OrPair,
    /// Boolean negation of one {0,1} symbol.
    NotGate,
    /// One empty cell forced by eight peers (0 = unfilled, 1..=9 values);
    /// emits every value not present, or nothing on a duplicate.
    SudokuCell,
    /// Formula over `length` symbols (10 digits, 4 operators) with
    /// standard precedence; malformed input evaluates to 0.
    Hwf { length: usize },
    /// Explicit lookup table.
    Table(TableSpec),
    /// One-hot view of an integer-valued VALUE sub-program.
    OneHotOf(Box<SubProgram>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSpec {
    pub name: String,
    pub input_domains: Vec<usize>,
    pub output: TableOutput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableOutput {
    /// Row-major scalar per grid cell.
    Value(Vec<f64>),
    /// Row-major set of class indices per grid cell.
    OneHot { classes: usize, rows: Vec<Vec<usize>> },
}

impl SubProgram {
    pub fn arity(&self) -> usize {
        match self {
            SubProgram::Sum { arity, .. } => *arity,
            SubProgram::CarrySum { .. } | SubProgram::Equality { .. } | SubProgram::OrPair => 2,
            SubProgram::ModTen { .. } | SubProgram::CarryDigit { .. } | SubProgram::NotGate => 1,
            SubProgram::SudokuCell => 8,
            SubProgram::Hwf { length } => *length,
            SubProgram::Table(t) => t.input_domains.len(),
            SubProgram::OneHotOf(inner) => inner.arity(),
        }
    }

    pub fn input_domains(&self) -> Vec<usize> {
        match self {
            SubProgram::Sum { arity, input_size } => vec![*input_size; *arity],
            SubProgram::CarrySum { chain_size } => vec![19, *chain_size],
            SubProgram::ModTen { input_size } | SubProgram::CarryDigit { input_size } => {
                vec![*input_size]
            }
            SubProgram::Equality { domain } => vec![*domain; 2],
            SubProgram::OrPair => vec![2, 2],
            SubProgram::NotGate => vec![2],
            SubProgram::SudokuCell => vec![10; 8],
            SubProgram::Hwf { length } => vec![HWF_SYMBOLS; *length],
            SubProgram::Table(t) => t.input_domains.clone(),
            SubProgram::OneHotOf(inner) => inner.input_domains(),
        }
    }

    pub fn output_kind(&self) -> OutputKind {
        match self {
            SubProgram::Equality { .. } | SubProgram::OrPair | SubProgram::NotGate => {
                OutputKind::OneHot { classes: 2 }
            }
            SubProgram::SudokuCell => OutputKind::OneHot { classes: 9 },
            SubProgram::Table(t) => match &t.output {
                TableOutput::Value(_) => OutputKind::Value,
                TableOutput::OneHot { classes, .. } => OutputKind::OneHot { classes: *classes },
            },
            SubProgram::OneHotOf(inner) => OutputKind::OneHot {
                classes: inner
                    .integer_output_symbols()
                    .expect("OneHotOf requires an integer-valued inner sub-program"),
            },
            _ => OutputKind::Value,
        }
    }

    /// Size of the integer symbol set a VALUE output ranges over, when
    /// it has one. Needed whenever the output feeds a later layer.
    pub fn integer_output_symbols(&self) -> Option<usize> {
        match self {
            SubProgram::Sum { arity, input_size } => Some(arity * (input_size - 1) + 1),
            SubProgram::CarrySum { .. } => Some(20),
            SubProgram::ModTen { .. } => Some(10),
            SubProgram::CarryDigit { .. } => Some(2),
            SubProgram::Hwf { .. } => None,
            SubProgram::Table(t) => match &t.output {
                TableOutput::Value(_) => None,
                TableOutput::OneHot { classes, .. } => Some(*classes),
            },
            SubProgram::Equality { .. } | SubProgram::OrPair | SubProgram::NotGate => Some(2),
            SubProgram::SudokuCell => Some(9),
            SubProgram::OneHotOf(inner) => inner.integer_output_symbols(),
        }
    }

    /// Number of symbols the node output carries when wired onward:
    /// the class count for ONEHOT, the integer range for VALUE.
    pub fn output_symbols(&self) -> Option<usize> {
        match self.output_kind() {
            OutputKind::OneHot { classes } => Some(classes),
            OutputKind::Value => self.integer_output_symbols(),
        }
    }

    /// Stable identifier used for summary/sketch file names and sharing.
    pub fn id(&self) -> String {
        match self {
            SubProgram::Sum { arity, input_size } => format!("sum_a{arity}_d{input_size}"),
            SubProgram::CarrySum { chain_size } => format!("carry_sum_c{chain_size}"),
            SubProgram::ModTen { input_size } => format!("mod_ten_d{input_size}"),
            SubProgram::CarryDigit { input_size } => format!("carry_digit_d{input_size}"),
            SubProgram::Equality { domain } => format!("eq_d{domain}"),
            SubProgram::OrPair => "or_pair".into(),
            SubProgram::NotGate => "not_gate".into(),
            SubProgram::SudokuCell => "sudoku_cell".into(),
            SubProgram::Hwf { length } => format!("hwf_{length}"),
            SubProgram::Table(t) => format!("table_{}", t.name),
            SubProgram::OneHotOf(inner) => format!("{}_oh", inner.id()),
        }
    }

    /// Scalar evaluation for VALUE sub-programs.
    pub fn eval_value(&self, inputs: &[usize]) -> f64 {
        debug_assert_eq!(inputs.len(), self.arity());
        match self {
            SubProgram::Sum { .. } => inputs.iter().sum::<usize>() as f64,
            SubProgram::CarrySum { .. } => (inputs[0] + usize::from(inputs[1] >= 10)) as f64,
            SubProgram::ModTen { .. } => (inputs[0] % 10) as f64,
            SubProgram::CarryDigit { .. } => f64::from(inputs[0] >= 10),
            SubProgram::Hwf { .. } => eval_hwf(inputs),
            SubProgram::Table(t) => match &t.output {
                TableOutput::Value(vals) => vals[grid_offset(&t.input_domains, inputs)],
                TableOutput::OneHot { .. } => panic!("table {} is one-hot", t.name),
            },
            other => panic!("{} has no scalar output", other.id()),
        }
    }

    /// Set-valued evaluation for ONEHOT sub-programs. An empty result
    /// encodes an all-zero summary row.
    pub fn eval_onehot(&self, inputs: &[usize]) -> Vec<usize> {
        debug_assert_eq!(inputs.len(), self.arity());
        match self {
            SubProgram::Equality { .. } => vec![usize::from(inputs[0] == inputs[1])],
            SubProgram::OrPair => vec![usize::from(inputs[0] != 0 || inputs[1] != 0)],
            SubProgram::NotGate => vec![usize::from(inputs[0] == 0)],
            SubProgram::SudokuCell => eval_sudoku_cell(inputs),
            SubProgram::Table(t) => match &t.output {
                TableOutput::OneHot { rows, .. } => {
                    rows[grid_offset(&t.input_domains, inputs)].clone()
                }
                TableOutput::Value(_) => panic!("table {} is value-kind", t.name),
            },
            SubProgram::OneHotOf(inner) => {
                let v = inner.eval_value(inputs);
                debug_assert!(v.fract() == 0.0 && v >= 0.0);
                vec![v as usize]
            }
            other => panic!("{} has no one-hot output", other.id()),
        }
    }
}

fn grid_offset(dims: &[usize], idx: &[usize]) -> usize {
    let mut off = 0;
    for (d, &i) in dims.iter().zip(idx) {
        debug_assert!(i < *d);
        off = off * d + i;
    }
    off
}

fn eval_sudoku_cell(inputs: &[usize]) -> Vec<usize> {
    let mut seen = [false; 10];
    for &v in inputs {
        if v != 0 {
            if seen[v] {
                return Vec::new(); // contradictory peers
            }
            seen[v] = true;
        }
    }
    (1..=9).filter(|&v| !seen[v]).map(|v| v - 1).collect()
}

/// Evaluates a digit/operator symbol string with standard precedence.
/// Any malformed shape (operator in a digit slot or vice versa) and any
/// division by zero yields 0.
fn eval_hwf(symbols: &[usize]) -> f64 {
    // validity: digits at even positions, operators at odd ones
    for (i, &s) in symbols.iter().enumerate() {
        let is_digit = s < 10;
        if (i % 2 == 0) != is_digit {
            return 0.0;
        }
    }
    if symbols.len() % 2 == 0 {
        return 0.0;
    }
    // first pass: fold * and / into terms
    let mut terms: [f64; 4] = [0.0; 4];
    let mut signs: [f64; 4] = [1.0; 4];
    let mut n_terms = 0usize;
    let mut current = symbols[0] as f64;
    let mut pending_sign = 1.0;
    let mut i = 1;
    while i < symbols.len() {
        let op = symbols[i];
        let rhs = symbols[i + 1] as f64;
        match op {
            12 => current *= rhs,
            13 => {
                if rhs == 0.0 {
                    return 0.0;
                }
                current /= rhs;
            }
            10 | 11 => {
                terms[n_terms] = current;
                signs[n_terms] = pending_sign;
                n_terms += 1;
                pending_sign = if op == 11 { -1.0 } else { 1.0 };
                current = rhs;
            }
            _ => return 0.0,
        }
        i += 2;
    }
    terms[n_terms] = current;
    signs[n_terms] = pending_sign;
    n_terms += 1;
    let mut acc = 0.0;
    for t in 0..n_terms {
        acc += signs[t] * terms[t];
    }
    acc
}

// ---------------------------------------------------------------------------
// summaries
// ---------------------------------------------------------------------------

/// How to populate a summary tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuildMode {
    /// Visit every input tuple.
    Enumerate,
    /// Visit `count` seeded random tuples; unvisited cells stay zero.
    Sample { count: usize, seed: u64 },
}

/// Total stored elements of the summary for budget checks and reports.
pub fn summary_elements(sp: &SubProgram) -> u64 {
    let grid: u64 = sp.input_domains().iter().map(|&d| d as u64).product();
    match sp.output_kind() {
        OutputKind::Value => grid,
        OutputKind::OneHot { classes } => grid * classes as u64,
    }
}

/// Materializes the summary tensor of one sub-program: the scalar
/// output per input tuple (VALUE), or indicator entries over an extra
/// trailing class axis (ONEHOT).
pub fn build_summary(sp: &SubProgram, mode: &BuildMode, budget: ElementBudget) -> Result<DenseTensor> {
    let domains = sp.input_domains();
    budget.check(summary_elements(sp), &format!("summary of {}", sp.id()))?;
    let grid: usize = domains.iter().product();
    match sp.output_kind() {
        OutputKind::Value => {
            let mut data = vec![0.0; grid];
            match mode {
                BuildMode::Enumerate => {
                    let mut idx = vec![0usize; domains.len()];
                    for cell in data.iter_mut() {
                        *cell = sp.eval_value(&idx);
                        increment(&mut idx, &domains);
                    }
                }
                BuildMode::Sample { count, seed } => {
                    let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                    let mut idx = vec![0usize; domains.len()];
                    for _ in 0..*count {
                        for (slot, &d) in idx.iter_mut().zip(&domains) {
                            *slot = rng.gen_range(0..d);
                        }
                        data[grid_offset(&domains, &idx)] = sp.eval_value(&idx);
                    }
                }
            }
            DenseTensor::new(domains, data)
        }
        OutputKind::OneHot { classes } => {
            let mut data = vec![0.0; grid * classes];
            let mut fill = |idx: &[usize]| {
                let base = grid_offset(&domains, idx) * classes;
                for y in sp.eval_onehot(idx) {
                    debug_assert!(y < classes);
                    data[base + y] = 1.0;
                }
            };
            match mode {
                BuildMode::Enumerate => {
                    let mut idx = vec![0usize; domains.len()];
                    for _ in 0..grid {
                        fill(&idx);
                        increment(&mut idx, &domains);
                    }
                }
                BuildMode::Sample { count, seed } => {
                    let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                    let mut idx = vec![0usize; domains.len()];
                    for _ in 0..*count {
                        for (slot, &d) in idx.iter_mut().zip(&domains) {
                            *slot = rng.gen_range(0..d);
                        }
                        fill(&idx);
                    }
                }
            }
            let mut dims = domains;
            dims.push(classes);
            DenseTensor::new(dims, data)
        }
    }
}

fn increment(idx: &mut [usize], dims: &[usize]) {
    for axis in (0..dims.len()).rev() {
        idx[axis] += 1;
        if idx[axis] < dims[axis] {
            return;
        }
        idx[axis] = 0;
    }
}

// ---------------------------------------------------------------------------
// program graph
// ---------------------------------------------------------------------------

/// Reference to a node output or a perceptual leaf.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Wire {
    Leaf(usize),
    /// (layer, index) of an earlier node.
    Node(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    /// Index into the shared sub-program catalog.
    pub program: usize,
    pub inputs: Vec<Wire>,
}

/// The final output: one node, or an ordered tuple of nodes (multi-digit
/// results).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RootSpec {
    Node(usize, usize),
    Tuple(Vec<(usize, usize)>),
}

impl RootSpec {
    pub fn members(&self) -> Vec<(usize, usize)> {
        match self {
            RootSpec::Node(l, i) => vec![(*l, *i)],
            RootSpec::Tuple(v) => v.clone(),
        }
    }
}

/// Layered DAG of sub-program nodes over perceptual leaves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramGraph {
    pub programs: Vec<SubProgram>,
    pub leaf_domains: Vec<usize>,
    pub layers: Vec<Vec<Node>>,
    pub root: RootSpec,
}

impl ProgramGraph {
    pub fn node(&self, layer: usize, index: usize) -> &Node {
        &self.layers[layer][index]
    }

    pub fn program_of(&self, node: &Node) -> &SubProgram {
        &self.programs[node.program]
    }

    pub fn node_count(&self) -> usize {
        self.layers.iter().map(|l| l.len()).sum()
    }

    /// Symbol count carried by a wire.
    pub fn wire_symbols(&self, wire: &Wire) -> Result<usize> {
        match wire {
            Wire::Leaf(i) => self
                .leaf_domains
                .get(*i)
                .copied()
                .ok_or_else(|| Error::Config(format!("leaf {i} out of range"))),
            Wire::Node(l, i) => {
                let node = self
                    .layers
                    .get(*l)
                    .and_then(|layer| layer.get(*i))
                    .ok_or_else(|| Error::Config(format!("node ({l},{i}) out of range")))?;
                self.program_of(node).output_symbols().ok_or_else(|| {
                    Error::Config(format!(
                        "node ({l},{i}) [{}] has a real-valued output and cannot feed later layers",
                        self.program_of(node).id()
                    ))
                })
            }
        }
    }

    /// Checks wiring, arity, domain fit, root, and reachability.
    ///
    /// A wire may carry fewer symbols than the consuming input domain
    /// (the distribution is zero-padded); carrying more is an error.
    pub fn validate(&self) -> Result<()> {
        if self.leaf_domains.is_empty() {
            return Err(Error::Config("graph has no perceptual leaves".into()));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            for (i, node) in layer.iter().enumerate() {
                let sp = self.programs.get(node.program).ok_or_else(|| {
                    Error::Config(format!("node ({l},{i}): program index {} out of range", node.program))
                })?;
                if node.inputs.len() != sp.arity() {
                    return Err(Error::Config(format!(
                        "arity mismatch at node ({l},{i}): {} wires into {} of arity {}",
                        node.inputs.len(),
                        sp.id(),
                        sp.arity()
                    )));
                }
                let domains = sp.input_domains();
                for (slot, wire) in node.inputs.iter().enumerate() {
                    if let Wire::Node(wl, _) = wire {
                        if *wl >= l {
                            return Err(Error::Config(format!(
                                "forward wire at node ({l},{i}) slot {slot}: references layer {wl}"
                            )));
                        }
                    }
                    let symbols = self.wire_symbols(wire)?;
                    if symbols > domains[slot] {
                        return Err(Error::Config(format!(
                            "domain mismatch at node ({l},{i}) slot {slot}: wire carries {symbols} \
                             symbols into a domain of {}",
                            domains[slot]
                        )));
                    }
                }
            }
        }
        let members = self.root.members();
        if members.is_empty() {
            return Err(Error::Config("root tuple is empty".into()));
        }
        for &(l, i) in &members {
            if self.layers.get(l).and_then(|layer| layer.get(i)).is_none() {
                return Err(Error::Config(format!("root references missing node ({l},{i})")));
            }
        }
        // reachability from the root members
        let mut reach: Vec<Vec<bool>> = self.layers.iter().map(|l| vec![false; l.len()]).collect();
        let mut stack = members;
        while let Some((l, i)) = stack.pop() {
            if reach[l][i] {
                continue;
            }
            reach[l][i] = true;
            for wire in &self.layers[l][i].inputs {
                if let Wire::Node(wl, wi) = wire {
                    stack.push((*wl, *wi));
                }
            }
        }
        for (l, layer) in reach.iter().enumerate() {
            for (i, seen) in layer.iter().enumerate() {
                if !seen {
                    return Err(Error::Config(format!("unreachable node ({l},{i})")));
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// symbolic execution
// ---------------------------------------------------------------------------

/// Concrete execution result at the root.
#[derive(Debug, Clone, PartialEq)]
pub enum SymbolicOutput {
    Real(f64),
    /// Class set of a one-hot root (singleton when deterministic).
    Classes(Vec<usize>),
    /// Per-member scalar outputs of a tuple root.
    Tuple(Vec<f64>),
}

/// Runs the exact program on concrete leaf symbols, no tensors involved.
pub fn execute_symbols(graph: &ProgramGraph, leaves: &[usize]) -> Result<SymbolicOutput> {
    if leaves.len() != graph.leaf_domains.len() {
        return Err(Error::Argument(format!(
            "expected {} leaf symbols, got {}",
            graph.leaf_domains.len(),
            leaves.len()
        )));
    }
    for (i, (&s, &d)) in leaves.iter().zip(&graph.leaf_domains).enumerate() {
        if s >= d {
            return Err(Error::Argument(format!("leaf {i}: symbol {s} outside domain {d}")));
        }
    }
    enum Out {
        Real(f64),
        Classes(Vec<usize>),
    }
    let mut outputs: Vec<Vec<Out>> = Vec::with_capacity(graph.layers.len());
    for (l, layer) in graph.layers.iter().enumerate() {
        let mut row = Vec::with_capacity(layer.len());
        for node in layer {
            let sp = graph.program_of(node);
            let mut args = Vec::with_capacity(node.inputs.len());
            for wire in &node.inputs {
                let sym = match wire {
                    Wire::Leaf(i) => leaves[*i],
                    Wire::Node(wl, wi) => match &outputs[*wl][*wi] {
                        Out::Real(v) => {
                            if v.fract() != 0.0 || *v < 0.0 {
                                return Err(Error::Internal(format!(
                                    "non-integer intermediate {v} at layer {l}"
                                )));
                            }
                            *v as usize
                        }
                        Out::Classes(set) => {
                            if set.len() != 1 {
                                return Err(Error::Config(
                                    "one-to-many node output cannot feed a later layer".into(),
                                ));
                            }
                            set[0]
                        }
                    },
                };
                args.push(sym);
            }
            let out = match sp.output_kind() {
                OutputKind::Value => Out::Real(sp.eval_value(&args)),
                OutputKind::OneHot { .. } => Out::Classes(sp.eval_onehot(&args)),
            };
            row.push(out);
        }
        outputs.push(row);
    }
    match &graph.root {
        RootSpec::Node(l, i) => Ok(match &outputs[*l][*i] {
            Out::Real(v) => SymbolicOutput::Real(*v),
            Out::Classes(set) => SymbolicOutput::Classes(set.clone()),
        }),
        RootSpec::Tuple(members) => {
            let mut vals = Vec::with_capacity(members.len());
            for &(l, i) in members {
                match &outputs[l][i] {
                    Out::Real(v) => vals.push(*v),
                    Out::Classes(set) if set.len() == 1 => vals.push(set[0] as f64),
                    Out::Classes(_) => {
                        return Err(Error::Config(
                            "tuple root members must be deterministic".into(),
                        ))
                    }
                }
            }
            Ok(SymbolicOutput::Tuple(vals))
        }
    }
}

// ---------------------------------------------------------------------------
// builders
// ---------------------------------------------------------------------------

/// Which summary family the arithmetic builders emit: plain value
/// tensors (paired with the RBF conversion downstream) or one-hot
/// tensors whose contractions carry exact distributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SummaryMode {
    #[default]
    Value,
    OneHot,
}

fn sum_program(arity: usize, input_size: usize, mode: SummaryMode) -> SubProgram {
    let value = SubProgram::Sum { arity, input_size };
    match mode {
        SummaryMode::Value => value,
        SummaryMode::OneHot => SubProgram::OneHotOf(Box::new(value)),
    }
}

/// Balanced binary tree of pairwise sums over `n = 2^k` digits.
pub fn builtin_sum_tree(n: usize, mode: SummaryMode) -> Result<ProgramGraph> {
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::Argument(format!("sum tree needs a power of two >= 2, got {n}")));
    }
    let depth = n.trailing_zeros() as usize;
    builtin_sum_split(&vec![2; depth], mode)
}

/// Layered sum tree with arbitrary per-layer arity, e.g. `[8, 2]` sums
/// sixteen digits as two eight-way sums plus one pairwise sum.
pub fn builtin_sum_split(profile: &[usize], mode: SummaryMode) -> Result<ProgramGraph> {
    if profile.is_empty() || profile.iter().any(|&a| a < 2) {
        return Err(Error::Argument(format!("bad split profile {profile:?}")));
    }
    let n: usize = profile.iter().product();
    let mut programs = Vec::new();
    let mut layers = Vec::new();
    let mut prev_width = n; // wires entering the current layer
    let mut input_size = 10usize;
    for (l, &arity) in profile.iter().enumerate() {
        if prev_width % arity != 0 {
            return Err(Error::Argument(format!(
                "layer {l}: {prev_width} inputs not divisible by arity {arity}"
            )));
        }
        let sp = sum_program(arity, input_size, mode);
        programs.push(sp);
        let nodes = prev_width / arity;
        let mut layer = Vec::with_capacity(nodes);
        for j in 0..nodes {
            let inputs = (0..arity)
                .map(|t| {
                    if l == 0 {
                        Wire::Leaf(j * arity + t)
                    } else {
                        Wire::Node(l - 1, j * arity + t)
                    }
                })
                .collect();
            layer.push(Node { program: l, inputs });
        }
        layers.push(layer);
        input_size = arity * (input_size - 1) + 1;
        prev_width = nodes;
    }
    if prev_width != 1 {
        return Err(Error::Argument(format!(
            "split profile {profile:?} leaves {prev_width} outputs instead of one root"
        )));
    }
    let root = RootSpec::Node(profile.len() - 1, 0);
    let graph = ProgramGraph { programs, leaf_domains: vec![10; n], layers, root };
    graph.validate()?;
    Ok(graph)
}

/// Single sum node over all `n` digits, no decomposition.
pub fn builtin_sum_monolithic(n: usize, mode: SummaryMode) -> Result<ProgramGraph> {
    if n < 2 {
        return Err(Error::Argument("monolithic sum needs at least 2 digits".into()));
    }
    let graph = ProgramGraph {
        programs: vec![sum_program(n, 10, mode)],
        leaf_domains: vec![10; n],
        layers: vec![vec![Node { program: 0, inputs: (0..n).map(Wire::Leaf).collect() }]],
        root: RootSpec::Node(0, 0),
    };
    graph.validate()?;
    Ok(graph)
}

/// Adds two n-digit numbers through a chain of place sums and carries.
///
/// Leaves are the 2n digit images ordered least-significant first:
/// a_0..a_{n-1} then b_0..b_{n-1}. The root is the (n+1)-digit result
/// tuple, least-significant first.
pub fn builtin_carry_add(n_digits: usize, mode: SummaryMode) -> Result<ProgramGraph> {
    if n_digits < 1 {
        return Err(Error::Argument("carry add needs at least one digit place".into()));
    }
    let n = n_digits;
    let mut programs: Vec<SubProgram> = Vec::new();
    let program_index = |programs: &mut Vec<SubProgram>, sp: SubProgram| -> usize {
        if let Some(pos) = programs.iter().position(|p| *p == sp) {
            pos
        } else {
            programs.push(sp);
            programs.len() - 1
        }
    };
    let place_sum = program_index(&mut programs, sum_program(2, 10, mode));
    let mut layers: Vec<Vec<Node>> = Vec::new();
    // layer 0: one place sum per digit position
    layers.push(
        (0..n)
            .map(|i| Node { program: place_sum, inputs: vec![Wire::Leaf(i), Wire::Leaf(n + i)] })
            .collect(),
    );
    // carry chain, one layer per remaining place
    let mut chain: Vec<Wire> = vec![Wire::Node(0, 0)]; // c_0 = s_0
    let mut chain_symbols = 19usize;
    for place in 1..n {
        let carry = match mode {
            SummaryMode::Value => SubProgram::CarrySum { chain_size: 20 },
            SummaryMode::OneHot => {
                SubProgram::OneHotOf(Box::new(SubProgram::CarrySum { chain_size: 20 }))
            }
        };
        let carry_ix = program_index(&mut programs, carry);
        let l = layers.len();
        layers.push(vec![Node {
            program: carry_ix,
            inputs: vec![Wire::Node(0, place), *chain.last().unwrap()],
        }]);
        chain.push(Wire::Node(l, 0));
        chain_symbols = 20;
    }
    // digit extraction: place digits plus the final carry digit
    let digit_layer = layers.len();
    let mut digit_nodes = Vec::with_capacity(n + 1);
    for (place, wire) in chain.iter().enumerate() {
        let in_size = if place == 0 { 19 } else { 20 };
        let ix = program_index(&mut programs, SubProgram::ModTen { input_size: in_size });
        digit_nodes.push(Node { program: ix, inputs: vec![*wire] });
    }
    let carry_in = if n == 1 { 19 } else { chain_symbols };
    let carry_digit = program_index(&mut programs, SubProgram::CarryDigit { input_size: carry_in });
    digit_nodes.push(Node { program: carry_digit, inputs: vec![*chain.last().unwrap()] });
    layers.push(digit_nodes);
    let root = RootSpec::Tuple((0..=n).map(|i| (digit_layer, i)).collect());
    let graph = ProgramGraph { programs, leaf_domains: vec![10; 2 * n], layers, root };
    graph.validate()?;
    Ok(graph)
}

/// Board-validity program: one equality node per constrained cell pair,
/// a balanced OR tree over the comparisons, and a final negation. The
/// root emits class 1 for a valid board.
pub fn builtin_visudo(n: usize) -> Result<ProgramGraph> {
    if n != 4 && n != 9 {
        return Err(Error::Argument(format!("visudo board side must be 4 or 9, got {n}")));
    }
    let block = (n as f64).sqrt() as usize;
    let cells = n * n;
    let same_unit = |a: usize, b: usize| -> bool {
        let (ra, ca) = (a / n, a % n);
        let (rb, cb) = (b / n, b % n);
        ra == rb
            || ca == cb
            || (ra / block == rb / block && ca / block == cb / block)
    };
    let mut pairs = Vec::new();
    for a in 0..cells {
        for b in (a + 1)..cells {
            if same_unit(a, b) {
                pairs.push((a, b));
            }
        }
    }
    let programs = vec![
        SubProgram::Equality { domain: n },
        SubProgram::OrPair,
        SubProgram::NotGate,
    ];
    let mut layers: Vec<Vec<Node>> = Vec::new();
    layers.push(
        pairs
            .iter()
            .map(|&(a, b)| Node { program: 0, inputs: vec![Wire::Leaf(a), Wire::Leaf(b)] })
            .collect(),
    );
    // balanced OR reduction; odd element carries to the next level
    let mut frontier: Vec<Wire> = (0..pairs.len()).map(|i| Wire::Node(0, i)).collect();
    while frontier.len() > 1 {
        let l = layers.len();
        let mut level = Vec::new();
        let mut next = Vec::new();
        let mut it = frontier.chunks_exact(2);
        for pair in &mut it {
            next.push(Wire::Node(l, level.len()));
            level.push(Node { program: 1, inputs: vec![pair[0], pair[1]] });
        }
        if let [odd] = it.remainder() {
            next.push(*odd);
        }
        layers.push(level);
        frontier = next;
    }
    let l = layers.len();
    layers.push(vec![Node { program: 2, inputs: vec![frontier[0]] }]);
    let graph = ProgramGraph {
        programs,
        leaf_domains: vec![n; cells],
        layers,
        root: RootSpec::Node(l, 0),
    };
    graph.validate()?;
    Ok(graph)
}

/// The cell-constraint sub-program of board solving.
pub fn builtin_sudoku_cell() -> SubProgram {
    SubProgram::SudokuCell
}

/// Single-node graph around the cell constraint (eight peer leaves).
pub fn builtin_sudoku_cell_graph() -> ProgramGraph {
    let graph = ProgramGraph {
        programs: vec![SubProgram::SudokuCell],
        leaf_domains: vec![10; 8],
        layers: vec![vec![Node { program: 0, inputs: (0..8).map(Wire::Leaf).collect() }]],
        root: RootSpec::Node(0, 0),
    };
    debug_assert!(graph.validate().is_ok());
    graph
}

/// Formula-evaluation sub-program for a fixed formula length.
pub fn builtin_hwf(length: usize) -> Result<SubProgram> {
    if length % 2 == 0 || length > 7 {
        return Err(Error::Argument(format!("formula length must be odd and <= 7, got {length}")));
    }
    Ok(SubProgram::Hwf { length })
}

/// Single-node graph around a formula evaluator.
pub fn builtin_hwf_graph(length: usize) -> Result<ProgramGraph> {
    let sp = builtin_hwf(length)?;
    let graph = ProgramGraph {
        programs: vec![sp],
        leaf_domains: vec![HWF_SYMBOLS; length],
        layers: vec![vec![Node { program: 0, inputs: (0..length).map(Wire::Leaf).collect() }]],
        root: RootSpec::Node(0, 0),
    };
    graph.validate()?;
    Ok(graph)
}

/// Lookup-backed sub-program for black-box programs.
pub fn builtin_table(spec: TableSpec) -> Result<SubProgram> {
    let grid: usize = spec.input_domains.iter().product();
    if spec.input_domains.is_empty() || grid == 0 {
        return Err(Error::Argument("table needs nonempty input domains".into()));
    }
    match &spec.output {
        TableOutput::Value(vals) => {
            if vals.len() != grid {
                return Err(Error::Argument(format!(
                    "table {} covers {} of {grid} tuples",
                    spec.name,
                    vals.len()
                )));
            }
        }
        TableOutput::OneHot { classes, rows } => {
            if rows.len() != grid {
                return Err(Error::Argument(format!(
                    "table {} covers {} of {grid} tuples",
                    spec.name,
                    rows.len()
                )));
            }
            if rows.iter().flatten().any(|&y| y >= *classes) {
                return Err(Error::Argument(format!(
                    "table {}: class index out of range",
                    spec.name
                )));
            }
            for row in rows {
                for (i, y) in row.iter().enumerate() {
                    if row[..i].contains(y) {
                        return Err(Error::Argument(format!(
                            "table {}: duplicate class {y} in an output set",
                            spec.name
                        )));
                    }
                }
            }
        }
    }
    Ok(SubProgram::Table(spec))
}

/// Restriction of a sub-program with its leading inputs pinned to
/// concrete symbols, materialized as a lookup table over the rest.
pub fn partial_apply(sp: &SubProgram, fixed: &[usize], name: &str) -> Result<SubProgram> {
    let domains = sp.input_domains();
    if fixed.len() >= domains.len() {
        return Err(Error::Argument("partial application must leave at least one free input".into()));
    }
    for (i, (&v, &d)) in fixed.iter().zip(&domains).enumerate() {
        if v >= d {
            return Err(Error::Argument(format!("fixed input {i}: symbol {v} outside domain {d}")));
        }
    }
    let free = domains[fixed.len()..].to_vec();
    let grid: usize = free.iter().product();
    let mut args = fixed.to_vec();
    args.extend(std::iter::repeat(0).take(free.len()));
    let output = match sp.output_kind() {
        OutputKind::Value => {
            let mut vals = Vec::with_capacity(grid);
            let mut idx = vec![0usize; free.len()];
            for _ in 0..grid {
                args[fixed.len()..].copy_from_slice(&idx);
                vals.push(sp.eval_value(&args));
                increment(&mut idx, &free);
            }
            TableOutput::Value(vals)
        }
        OutputKind::OneHot { classes } => {
            let mut rows = Vec::with_capacity(grid);
            let mut idx = vec![0usize; free.len()];
            for _ in 0..grid {
                args[fixed.len()..].copy_from_slice(&idx);
                rows.push(sp.eval_onehot(&args));
                increment(&mut idx, &free);
            }
            TableOutput::OneHot { classes, rows }
        }
    };
    builtin_table(TableSpec { name: name.to_string(), input_domains: free, output })
}
