//! Shared fixtures for the criterion benchmarks.

use cts_core::budget::ElementBudget;
use cts_core::inference::{Distribution, SketchSet};
use cts_core::pipeline::build_sketch_set;
use cts_core::program::{builtin_sum_tree, ProgramGraph, SummaryMode};
use cts_core::sketch::Rank;
use cts_core::tensor::DenseTensor;

/// Pairwise-sum layer tensor of the given side.
pub fn pair_sum_tensor(side: usize) -> DenseTensor {
    let mut data = vec![0.0; side * side];
    for a in 0..side {
        for b in 0..side {
            data[a * side + b] = (a + b) as f64;
        }
    }
    DenseTensor::new(vec![side, side], data).expect("valid shape")
}

/// Sum tree plus sketches at the given rank, with smooth leaf inputs.
pub fn sum_tree_fixture(n: usize, rank: Rank) -> (ProgramGraph, SketchSet, Vec<Distribution>) {
    let graph = builtin_sum_tree(n, SummaryMode::Value).expect("power of two");
    let sketches =
        build_sketch_set(&graph, rank, 0, ElementBudget::DEFAULT).expect("within budget");
    let leaves = (0..n)
        .map(|i| {
            let raw: Vec<f64> = (0..10).map(|j| 1.0 + ((i * 10 + j) as f64 * 0.7).sin().abs()).collect();
            let sum: f64 = raw.iter().sum();
            Distribution::new(raw.into_iter().map(|v| v / sum).collect()).expect("normalized")
        })
        .collect();
    (graph, sketches, leaves)
}
