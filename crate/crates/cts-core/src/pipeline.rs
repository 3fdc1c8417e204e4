//! Glue between program graphs, summaries, and sketch sets: nodes that
//! share a sub-program share one summary and one sketch.

use crate::budget::ElementBudget;
use crate::error::Result;
use crate::inference::SketchSet;
use crate::program::{build_summary, summary_elements, BuildMode, ProgramGraph, SubProgram};
use crate::sketch::{tt_svd, Rank, SketchConfig};
use crate::tensor::DenseTensor;

/// Distinct sub-programs of a graph in catalog order, with how many
/// nodes use each.
pub fn program_usage(graph: &ProgramGraph) -> Vec<(&SubProgram, usize)> {
    let mut counts = vec![0usize; graph.programs.len()];
    for layer in &graph.layers {
        for node in layer {
            counts[node.program] += 1;
        }
    }
    graph.programs.iter().zip(counts).collect()
}

/// A built summary with its bookkeeping.
pub struct BuiltSummary {
    pub id: String,
    pub tensor: DenseTensor,
    pub node_count: usize,
}

/// Materializes one summary per distinct sub-program.
pub fn build_summaries(
    graph: &ProgramGraph,
    mode: &BuildMode,
    budget: ElementBudget,
) -> Result<Vec<BuiltSummary>> {
    let mut out = Vec::new();
    for (sp, node_count) in program_usage(graph) {
        let tensor = build_summary(sp, mode, budget)?;
        out.push(BuiltSummary { id: sp.id(), tensor, node_count });
    }
    Ok(out)
}

/// Total stored elements across the distinct summaries of a graph.
pub fn total_summary_elements(graph: &ProgramGraph) -> u64 {
    program_usage(graph).iter().map(|(sp, _)| summary_elements(sp)).sum()
}

/// Builds and sketches every distinct summary of the graph.
/// `rank_for` picks the bond rank per sub-program id.
pub fn build_sketch_set_with(
    graph: &ProgramGraph,
    rank_for: impl Fn(&str) -> Rank,
    seed: u64,
    budget: ElementBudget,
) -> Result<SketchSet> {
    let mut set = SketchSet::new();
    for (sp, _) in program_usage(graph) {
        let id = sp.id();
        let phi = build_summary(sp, &BuildMode::Enumerate, budget)?;
        let sketch = tt_svd(&phi, &SketchConfig::new(rank_for(&id), seed))?;
        set.insert(id, sketch);
    }
    Ok(set)
}

/// Uniform-rank convenience wrapper around [`build_sketch_set_with`].
pub fn build_sketch_set(
    graph: &ProgramGraph,
    rank: Rank,
    seed: u64,
    budget: ElementBudget,
) -> Result<SketchSet> {
    build_sketch_set_with(graph, |_| rank, seed, budget)
}
