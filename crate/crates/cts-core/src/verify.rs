//! Independent oracles: brute-force weighted model counting by loop
//! enumeration, bound checkers for the sketch error guarantees, and a
//! finite-difference gradient check. Nothing here shares contraction
//! code with the inference path.

use crate::budget::ElementBudget;
use crate::error::{Error, Result};
use crate::inference::{
    backward, forward, Distribution, InferenceConfig, RootGradient, RootOutput, SketchSet,
};
use crate::program::{
    execute_symbols, OutputKind, ProgramGraph, RootSpec, SubProgram, SymbolicOutput,
};
use crate::sketch::{tt_svd, SketchConfig, TTSketch};
use crate::tensor::DenseTensor;

/// Largest leaf-support grid the exact counter will walk.
pub const WMC_GRID_LIMIT: u64 = 10_000_000;

/// What to count over.
#[derive(Debug, Clone, Copy)]
pub enum WmcSubject<'a> {
    Graph(&'a ProgramGraph),
    SubProgram(&'a SubProgram),
}

/// An exact counting query: a program, leaf distributions, and an
/// optional target class.
pub struct WmcQuery<'a> {
    pub subject: WmcSubject<'a>,
    pub leaves: &'a [Distribution],
    pub target: Option<usize>,
}

/// Result of [`wmc_exact`].
#[derive(Debug, Clone, PartialEq)]
pub enum WmcResult {
    /// Probability of the requested target class.
    Probability(f64),
    /// Raw per-class mass (can exceed 1 in total for one-to-many
    /// programs, or fall short when some rows are empty).
    Distribution(Vec<f64>),
    /// Expected value of a real-valued output.
    Expectation(f64),
    /// Per-place marginal distributions of a tuple root.
    TupleDistributions(Vec<Vec<f64>>),
}

impl WmcResult {
    pub fn expectation(&self) -> Option<f64> {
        match self {
            WmcResult::Expectation(v) => Some(*v),
            WmcResult::Distribution(d) => {
                Some(d.iter().enumerate().map(|(i, &p)| i as f64 * p).sum())
            }
            _ => None,
        }
    }
}

/// Sums product weights over every leaf assignment, per Eq. 1 semantics,
/// by plain nested enumeration over the distributions' supports.
pub fn wmc_exact(q: &WmcQuery) -> Result<WmcResult> {
    let domains: Vec<usize> = match q.subject {
        WmcSubject::Graph(g) => g.leaf_domains.clone(),
        WmcSubject::SubProgram(sp) => sp.input_domains(),
    };
    if q.leaves.len() != domains.len() {
        return Err(Error::Argument(format!(
            "{} leaf distributions for {} inputs",
            q.leaves.len(),
            domains.len()
        )));
    }
    let mut supports: Vec<Vec<usize>> = Vec::with_capacity(domains.len());
    for (i, (dist, &dom)) in q.leaves.iter().zip(&domains).enumerate() {
        if dist.len() > dom {
            return Err(Error::Argument(format!(
                "leaf {i}: {} symbols exceed domain {dom}",
                dist.len()
            )));
        }
        let sup: Vec<usize> = (0..dist.len()).filter(|&s| dist.probs()[s] > 0.0).collect();
        if sup.is_empty() {
            return Err(Error::Argument(format!("leaf {i} has empty support")));
        }
        supports.push(sup);
    }
    let grid: u64 = supports.iter().map(|s| s.len() as u64).product();
    if grid > WMC_GRID_LIMIT {
        return Err(Error::Resource(format!(
            "support grid of {grid} tuples exceeds the exact-counting limit {WMC_GRID_LIMIT}"
        )));
    }
    // accumulators, shaped by the subject's root
    enum Acc {
        Expect(f64),
        Classes(Vec<f64>),
        Tuple(Vec<Vec<f64>>),
    }
    let mut acc = match q.subject {
        WmcSubject::Graph(g) => match &g.root {
            RootSpec::Node(l, i) => match g.program_of(g.node(*l, *i)).output_kind() {
                OutputKind::Value => Acc::Expect(0.0),
                OutputKind::OneHot { classes } => Acc::Classes(vec![0.0; classes]),
            },
            RootSpec::Tuple(members) => Acc::Tuple(
                members
                    .iter()
                    .map(|&(l, i)| {
                        let n = g
                            .program_of(g.node(l, i))
                            .output_symbols()
                            .unwrap_or(0)
                            .max(1);
                        vec![0.0; n]
                    })
                    .collect(),
            ),
        },
        WmcSubject::SubProgram(sp) => match sp.output_kind() {
            OutputKind::Value => Acc::Expect(0.0),
            OutputKind::OneHot { classes } => Acc::Classes(vec![0.0; classes]),
        },
    };
    if let (Some(t), Acc::Expect(_) | Acc::Tuple(_)) = (q.target, &acc) {
        return Err(Error::Argument(format!(
            "target class {t} makes no sense for a real or tuple output"
        )));
    }
    let mut idx = vec![0usize; supports.len()];
    let mut symbols = vec![0usize; supports.len()];
    loop {
        let mut weight = 1.0;
        for (i, (&pos, sup)) in idx.iter().zip(&supports).enumerate() {
            let s = sup[pos];
            symbols[i] = s;
            weight *= q.leaves[i].probs()[s];
        }
        if weight > 0.0 {
            match q.subject {
                WmcSubject::Graph(g) => match (execute_symbols(g, &symbols)?, &mut acc) {
                    (SymbolicOutput::Real(v), Acc::Expect(e)) => *e += weight * v,
                    (SymbolicOutput::Classes(set), Acc::Classes(d)) => {
                        for y in set {
                            d[y] += weight;
                        }
                    }
                    (SymbolicOutput::Tuple(vs), Acc::Tuple(places)) => {
                        for (v, place) in vs.iter().zip(places.iter_mut()) {
                            place[*v as usize] += weight;
                        }
                    }
                    _ => return Err(Error::Internal("root shape drifted mid-count".into())),
                },
                WmcSubject::SubProgram(sp) => match (&mut acc, sp.output_kind()) {
                    (Acc::Expect(e), OutputKind::Value) => *e += weight * sp.eval_value(&symbols),
                    (Acc::Classes(d), OutputKind::OneHot { .. }) => {
                        for y in sp.eval_onehot(&symbols) {
                            d[y] += weight;
                        }
                    }
                    _ => unreachable!("accumulator matches the subject"),
                },
            }
        }
        // odometer over the supports
        let mut axis = supports.len();
        loop {
            if axis == 0 {
                return Ok(match (acc, q.target) {
                    (Acc::Expect(e), _) => WmcResult::Expectation(e),
                    (Acc::Classes(d), Some(t)) => {
                        WmcResult::Probability(d.get(t).copied().ok_or_else(|| {
                            Error::Argument(format!("target {t} outside {} classes", d.len()))
                        })?)
                    }
                    (Acc::Classes(d), None) => WmcResult::Distribution(d),
                    (Acc::Tuple(places), _) => WmcResult::TupleDistributions(places),
                });
            }
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] < supports[axis].len() {
                break;
            }
            idx[axis] = 0;
        }
    }
}

// ---------------------------------------------------------------------------
// bound checkers
// ---------------------------------------------------------------------------

const BOUND_SLACK: f64 = 1e-8;

/// Measured reconstruction error against the accumulated truncation
/// bound.
#[derive(Debug, Clone, PartialEq)]
pub struct Thm31Report {
    pub error: f64,
    pub bound: f64,
    pub ok: bool,
}

/// Dense-reconstruction check of the sketch error bound.
pub fn check_thm31(phi: &DenseTensor, sketch: &TTSketch, budget: ElementBudget) -> Result<Thm31Report> {
    let recon = sketch.reconstruct(budget)?;
    if recon.dims() != phi.dims() {
        return Err(Error::Argument("sketch dims do not match the summary".into()));
    }
    let mut err_sq = 0.0;
    for (a, b) in phi.data().iter().zip(recon.data()) {
        err_sq += (a - b) * (a - b);
    }
    let error = err_sq.sqrt();
    let bound = sketch.reconstruction_error_bound();
    Ok(Thm31Report { error, bound, ok: error <= bound + BOUND_SLACK })
}

/// Output-distribution error of a rounded reconstruction against the
/// counting bound, plus the intermediate cell count it rests on.
#[derive(Debug, Clone, PartialEq)]
pub struct Thm32Report {
    pub lhs: f64,
    pub rhs: f64,
    pub mismatch_cells: u64,
    pub cell_cap: u64,
    pub reconstruction_error: f64,
    pub ok: bool,
}

/// Checks the one-hot output error bound for an integer-valued summary:
/// the reconstruction is rounded back onto the class set, both one-hot
/// forms are contracted exactly with the input product distribution,
/// and the L2 gap is compared against sqrt(2)*|p|_F*floor(4*err^2)^0.5.
pub fn check_thm32(
    phi: &DenseTensor,
    classes: usize,
    sketch: &TTSketch,
    inputs: &[Distribution],
    budget: ElementBudget,
) -> Result<Thm32Report> {
    if inputs.len() != phi.rank() {
        return Err(Error::Argument(format!(
            "{} inputs for a {}-way summary",
            inputs.len(),
            phi.rank()
        )));
    }
    for (i, (d, &dom)) in inputs.iter().zip(phi.dims()).enumerate() {
        if d.len() != dom {
            return Err(Error::Argument(format!("input {i}: {} symbols vs axis {dom}", d.len())));
        }
    }
    let recon = sketch.reconstruct(budget)?;
    let mut err_sq = 0.0;
    let mut mismatch_cells = 0u64;
    let mut vec_phi = vec![0.0; classes];
    let mut vec_t = vec![0.0; classes];
    let dims = phi.dims().to_vec();
    let mut idx = vec![0usize; dims.len()];
    for off in 0..phi.len() {
        let a = phi.data()[off];
        let b = recon.data()[off];
        err_sq += (a - b) * (a - b);
        if (a - b).abs() >= 0.5 {
            mismatch_cells += 1;
        }
        let mut weight = 1.0;
        for (i, &pos) in idx.iter().enumerate() {
            weight *= inputs[i].probs()[pos];
        }
        let ya = a.round() as i64;
        debug_assert!(ya >= 0 && (ya as usize) < classes, "summary must be class-valued");
        vec_phi[ya as usize] += weight;
        let yb = (b.round() as i64).clamp(0, classes as i64 - 1) as usize;
        vec_t[yb] += weight;
        // row-major odometer
        for axis in (0..dims.len()).rev() {
            idx[axis] += 1;
            if idx[axis] < dims[axis] {
                break;
            }
            idx[axis] = 0;
        }
    }
    let reconstruction_error = err_sq.sqrt();
    let lhs = vec_phi
        .iter()
        .zip(&vec_t)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let p_norm: f64 = inputs
        .iter()
        .map(|d| d.probs().iter().map(|p| p * p).sum::<f64>().sqrt())
        .product();
    let cell_cap = (4.0 * err_sq).floor() as u64;
    let rhs = std::f64::consts::SQRT_2 * p_norm * (cell_cap as f64).sqrt();
    Ok(Thm32Report {
        lhs,
        rhs,
        mismatch_cells,
        cell_cap,
        reconstruction_error,
        ok: lhs <= rhs + BOUND_SLACK && mismatch_cells <= cell_cap,
    })
}

/// Worst relative deviation between analytic and central-difference
/// leaf gradients over one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub relative_deviation: f64,
    pub ok: bool,
}

const GRAD_TOL: f64 = 1e-4;
const GRAD_STEP: f64 = 1e-5;

/// Compares the analytic backward pass against central finite
/// differences of the loss through the full forward, perturbing every
/// leaf probability.
pub fn grad_check(
    graph: &ProgramGraph,
    sketches: &SketchSet,
    leaves: &[Distribution],
    cfg: &InferenceConfig,
) -> Result<GradCheckReport> {
    let (out, tape) = forward(graph, sketches, leaves, cfg)?;
    // a fixed linear functional over the root makes the check loss-agnostic
    let upstream = match &out {
        RootOutput::Value(_) => RootGradient::Value(1.0),
        RootOutput::Tuple(vs) => {
            RootGradient::Tuple((0..vs.len()).map(|i| 1.0 + 0.25 * i as f64).collect())
        }
        RootOutput::Distribution(d) => RootGradient::Distribution(
            (0..d.len()).map(|j| ((j as f64) * 0.37).sin()).collect(),
        ),
    };
    let scalarize = |o: &RootOutput| -> f64 {
        match (o, &upstream) {
            (RootOutput::Value(v), RootGradient::Value(g)) => v * g,
            (RootOutput::Tuple(vs), RootGradient::Tuple(gs)) => {
                vs.iter().zip(gs).map(|(v, g)| v * g).sum()
            }
            (RootOutput::Distribution(d), RootGradient::Distribution(gs)) => {
                d.probs().iter().zip(gs).map(|(p, g)| p * g).sum()
            }
            _ => unreachable!(),
        }
    };
    let analytic = backward(graph, sketches, &tape, &upstream)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for leaf in 0..leaves.len() {
        for slot in 0..leaves[leaf].len() {
            let mut hi = leaves.to_vec();
            let mut lo = leaves.to_vec();
            let mut p = hi[leaf].probs().to_vec();
            p[slot] += GRAD_STEP;
            hi[leaf] = Distribution::new_unchecked(p);
            let mut p = lo[leaf].probs().to_vec();
            p[slot] -= GRAD_STEP;
            lo[leaf] = Distribution::new_unchecked(p);
            let f_hi = scalarize(&forward(graph, sketches, &hi, cfg)?.0);
            let f_lo = scalarize(&forward(graph, sketches, &lo, cfg)?.0);
            let fd = (f_hi - f_lo) / (2.0 * GRAD_STEP);
            let an = analytic[leaf][slot];
            num += (an - fd) * (an - fd);
            den += fd * fd;
        }
    }
    let relative_deviation = num.sqrt() / den.sqrt().max(1e-12);
    Ok(GradCheckReport { relative_deviation, ok: relative_deviation <= GRAD_TOL })
}

/// Randomly sketches an integer summary and replays the full theorem
/// 3.1 + 3.2 pair; convenience for the property suites.
pub fn random_thm32_trial(
    phi: &DenseTensor,
    classes: usize,
    rank: usize,
    seed: u64,
    inputs: &[Distribution],
) -> Result<Thm32Report> {
    let sketch = tt_svd(phi, &SketchConfig::fixed(rank, seed))?;
    check_thm32(phi, classes, &sketch, inputs, ElementBudget::DEFAULT)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::build_sketch_set;
    use crate::program::{
        builtin_carry_add, builtin_sum_monolithic, builtin_sum_tree, builtin_visudo, BuildMode,
        SummaryMode,
    };
    use crate::sketch::Rank;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dist(n: usize, rng: &mut ChaCha8Rng) -> Distribution {
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        Distribution::new(raw.into_iter().map(|v| v / sum).collect()).unwrap()
    }

    #[test]
    fn point_mass_leaves_give_point_mass_output() {
        let g = builtin_sum_tree(4, SummaryMode::OneHot).unwrap();
        let leaves: Vec<Distribution> =
            [2, 3, 4, 5].iter().map(|&s| Distribution::one_hot(10, s)).collect();
        let q = WmcQuery { subject: WmcSubject::Graph(&g), leaves: &leaves, target: None };
        match wmc_exact(&q).unwrap() {
            WmcResult::Distribution(d) => {
                assert_eq!(d[14], 1.0);
                assert_eq!(d.iter().sum::<f64>(), 1.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn uniform_two_digit_sum_probability() {
        let sp = SubProgram::OneHotOf(Box::new(SubProgram::Sum { arity: 2, input_size: 10 }));
        let leaves = vec![Distribution::uniform(10), Distribution::uniform(10)];
        let q = WmcQuery { subject: WmcSubject::SubProgram(&sp), leaves: &leaves, target: Some(0) };
        match wmc_exact(&q).unwrap() {
            WmcResult::Probability(p) => assert!((p - 0.01).abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn counting_matches_the_tensor_form_on_random_programs() {
        // Eq. 2: the one-hot summary contracted with the leaf product
        // must equal direct counting
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for trial in 0..50 {
            let arity = rng.gen_range(1..=3);
            let domain: usize = rng.gen_range(2..=5);
            let classes = rng.gen_range(2..=6);
            let grid: usize = domain.pow(arity as u32);
            let rows: Vec<Vec<usize>> = (0..grid)
                .map(|_| {
                    let k = rng.gen_range(0..=2.min(classes));
                    let mut row = Vec::new();
                    while row.len() < k {
                        let y = rng.gen_range(0..classes);
                        if !row.contains(&y) {
                            row.push(y);
                        }
                    }
                    row
                })
                .collect();
            let sp = crate::program::builtin_table(crate::program::TableSpec {
                name: format!("rand{trial}"),
                input_domains: vec![domain; arity],
                output: crate::program::TableOutput::OneHot { classes, rows: rows.clone() },
            })
            .unwrap();
            let leaves: Vec<Distribution> =
                (0..arity).map(|_| random_dist(domain, &mut rng)).collect();
            let q = WmcQuery { subject: WmcSubject::SubProgram(&sp), leaves: &leaves, target: None };
            let counted = match wmc_exact(&q).unwrap() {
                WmcResult::Distribution(d) => d,
                other => panic!("unexpected {other:?}"),
            };
            // direct tensor contraction of the one-hot summary
            let phi =
                crate::program::build_summary(&sp, &BuildMode::Enumerate, ElementBudget::DEFAULT)
                    .unwrap();
            let mut want = vec![0.0; classes];
            let dims = phi.dims().to_vec();
            let mut idx = vec![0usize; dims.len()];
            for off in 0..phi.len() {
                if phi.data()[off] != 0.0 {
                    let mut w = 1.0;
                    for (i, &pos) in idx.iter().take(arity).enumerate() {
                        w *= leaves[i].probs()[pos];
                    }
                    want[idx[arity]] += w * phi.data()[off];
                }
                for axis in (0..dims.len()).rev() {
                    idx[axis] += 1;
                    if idx[axis] < dims[axis] {
                        break;
                    }
                    idx[axis] = 0;
                }
            }
            for (a, b) in counted.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "trial {trial}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn decomposition_is_sound_for_sum4() {
        let tree = builtin_sum_tree(4, SummaryMode::OneHot).unwrap();
        let mono = builtin_sum_monolithic(4, SummaryMode::OneHot).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let leaves: Vec<Distribution> = (0..4).map(|_| random_dist(10, &mut rng)).collect();
            let qt = WmcQuery { subject: WmcSubject::Graph(&tree), leaves: &leaves, target: None };
            let qm = WmcQuery { subject: WmcSubject::Graph(&mono), leaves: &leaves, target: None };
            let (dt, dm) = match (wmc_exact(&qt).unwrap(), wmc_exact(&qm).unwrap()) {
                (WmcResult::Distribution(a), WmcResult::Distribution(b)) => (a, b),
                other => panic!("unexpected {other:?}"),
            };
            let tv: f64 =
                dt.iter().zip(&dm).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0;
            assert!(tv < 1e-9, "total variation {tv}");
        }
    }

    #[test]
    fn decomposition_is_sound_for_add2_per_place() {
        let g = builtin_carry_add(2, SummaryMode::Value).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let leaves: Vec<Distribution> = (0..4).map(|_| random_dist(10, &mut rng)).collect();
        let q = WmcQuery { subject: WmcSubject::Graph(&g), leaves: &leaves, target: None };
        let places = match wmc_exact(&q).unwrap() {
            WmcResult::TupleDistributions(p) => p,
            other => panic!("unexpected {other:?}"),
        };
        // monolithic per-place tables over the same four digits
        for (place, got) in places.iter().enumerate() {
            let grid = 10usize.pow(4);
            let classes = got.len();
            let rows: Vec<Vec<usize>> = (0..grid)
                .map(|off| {
                    let digits = [off / 1000 % 10, off / 100 % 10, off / 10 % 10, off % 10];
                    // leaves are (a0, a1, b0, b1): numbers least-significant first
                    let a = digits[0] + 10 * digits[1];
                    let b = digits[2] + 10 * digits[3];
                    let total = a + b;
                    vec![(total / 10usize.pow(place as u32)) % 10]
                })
                .collect();
            let sp = crate::program::builtin_table(crate::program::TableSpec {
                name: format!("place{place}"),
                input_domains: vec![10; 4],
                output: crate::program::TableOutput::OneHot { classes, rows },
            })
            .unwrap();
            let q = WmcQuery { subject: WmcSubject::SubProgram(&sp), leaves: &leaves, target: None };
            let want = match wmc_exact(&q).unwrap() {
                WmcResult::Distribution(d) => d,
                other => panic!("unexpected {other:?}"),
            };
            let tv: f64 = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0;
            assert!(tv < 1e-9, "place {place}: total variation {tv}");
        }
    }

    #[test]
    fn decomposition_is_sound_for_visudo4_on_boards() {
        let g = builtin_visudo(4).unwrap();
        // monolithic validity check over a subset of cells is too large to
        // enumerate with full supports; use boards (point masses) plus a
        // couple of soft cells so the support grid stays tiny
        let valid = [0usize, 1, 2, 3, 2, 3, 0, 1, 1, 0, 3, 2, 3, 2, 1, 0];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let mut leaves: Vec<Distribution> =
                valid.iter().map(|&v| Distribution::one_hot(4, v)).collect();
            // soften two cells
            for _ in 0..2 {
                let at = rng.gen_range(0..16);
                leaves[at] = random_dist(4, &mut rng);
            }
            let q = WmcQuery { subject: WmcSubject::Graph(&g), leaves: &leaves, target: None };
            let via_graph = match wmc_exact(&q).unwrap() {
                WmcResult::Distribution(d) => d,
                other => panic!("unexpected {other:?}"),
            };
            // independent direct loop over the two soft cells
            let mut want = vec![0.0; 2];
            let soft: Vec<usize> =
                (0..16).filter(|&i| leaves[i].probs().iter().filter(|p| **p > 0.0).count() > 1).collect();
            let mut assign = valid;
            let mut walk = |want: &mut Vec<f64>| {
                let opts: Vec<Vec<usize>> = soft.iter().map(|_| (0..4).collect()).collect();
                let mut cursor = vec![0usize; soft.len()];
                loop {
                    let mut w = 1.0;
                    for (k, &cell) in soft.iter().enumerate() {
                        let s = opts[k][cursor[k]];
                        assign[cell] = s;
                        w *= leaves[cell].probs()[s];
                    }
                    if w > 0.0 {
                        let ok = board_is_valid(&assign);
                        want[usize::from(ok)] += w;
                    }
                    let mut axis = soft.len();
                    loop {
                        if axis == 0 {
                            return;
                        }
                        axis -= 1;
                        cursor[axis] += 1;
                        if cursor[axis] < 4 {
                            break;
                        }
                        cursor[axis] = 0;
                    }
                }
            };
            walk(&mut want);
            let tv: f64 =
                via_graph.iter().zip(&want).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0;
            assert!(tv < 1e-9, "total variation {tv}");
        }
    }

    fn board_is_valid(cells: &[usize; 16]) -> bool {
        let n = 4;
        for a in 0..16 {
            for b in (a + 1)..16 {
                let (ra, ca) = (a / n, a % n);
                let (rb, cb) = (b / n, b % n);
                let share =
                    ra == rb || ca == cb || (ra / 2 == rb / 2 && ca / 2 == cb / 2);
                if share && cells[a] == cells[b] {
                    return false;
                }
            }
        }
        true
    }

    #[test]
    fn grid_limit_is_enforced() {
        let g = builtin_visudo(4).unwrap();
        let leaves: Vec<Distribution> = (0..16).map(|_| Distribution::uniform(4)).collect();
        let q = WmcQuery { subject: WmcSubject::Graph(&g), leaves: &leaves, target: None };
        assert!(matches!(wmc_exact(&q), Err(Error::Resource(_))));
    }

    #[test]
    fn thm31_report_on_a_random_cube() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let data: Vec<f64> = (0..512).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let phi = DenseTensor::new(vec![8, 8, 8], data).unwrap();
        let sketch = tt_svd(&phi, &SketchConfig::fixed(2, 0)).unwrap();
        let report = check_thm31(&phi, &sketch, ElementBudget::DEFAULT).unwrap();
        assert!(report.ok, "error {} vs bound {}", report.error, report.bound);
        assert!(report.error > 0.0);
    }

    #[test]
    fn thm32_bound_holds_across_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        for trial in 0..100u64 {
            let axes = rng.gen_range(2..=3);
            let dims: Vec<usize> = (0..axes).map(|_| rng.gen_range(2..=6)).collect();
            let classes = rng.gen_range(3..=8);
            let n: usize = dims.iter().product();
            let data: Vec<f64> =
                (0..n).map(|_| rng.gen_range(0..classes) as f64).collect();
            let phi = DenseTensor::new(dims.clone(), data).unwrap();
            let rank = rng.gen_range(1..=4);
            let inputs: Vec<Distribution> =
                dims.iter().map(|&d| random_dist(d, &mut rng)).collect();
            let report = random_thm32_trial(&phi, classes, rank, trial, &inputs).unwrap();
            assert!(
                report.ok,
                "trial {trial}: lhs {} rhs {} cells {} cap {}",
                report.lhs, report.rhs, report.mismatch_cells, report.cell_cap
            );
        }
    }

    #[test]
    fn grad_check_passes_on_trees_and_fails_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let g = builtin_sum_tree(4, SummaryMode::Value).unwrap();
        let sketches = build_sketch_set(&g, Rank::Fixed(2), 0, ElementBudget::DEFAULT).unwrap();
        let leaves: Vec<Distribution> = (0..4).map(|_| random_dist(10, &mut rng)).collect();
        let report = grad_check(&g, &sketches, &leaves, &InferenceConfig::default()).unwrap();
        assert!(report.ok, "relative deviation {}", report.relative_deviation);
        let g = builtin_carry_add(2, SummaryMode::OneHot).unwrap();
        let sketches = build_sketch_set(&g, Rank::Full, 0, ElementBudget::DEFAULT).unwrap();
        let leaves: Vec<Distribution> = (0..4).map(|_| random_dist(10, &mut rng)).collect();
        let report = grad_check(&g, &sketches, &leaves, &InferenceConfig::default()).unwrap();
        assert!(report.ok, "relative deviation {}", report.relative_deviation);
    }
}
