//! Core engine: dense tensors, tensor-train sketches of program
//! summaries, contraction-based inference, weak-supervision training,
//! and independent verification oracles.

pub mod budget;
pub mod error;
pub mod inference;
pub mod learn;
pub mod pipeline;
pub mod program;
pub mod sketch;
pub mod svd;
pub mod task;
pub mod tensor;
pub mod verify;

pub use budget::ElementBudget;
pub use error::{Error, Result};
pub use inference::{
    backward, contract_onehot, contract_value, forward, rbf_normalize, Distribution,
    InferenceConfig, RbfConfig, RootGradient, RootOutput, SketchSet, TraceTape,
};
pub use learn::{
    evaluate_argmax, loss, train, Label, LossKind, ModelKind, OptimizerKind, PerceptualModel,
    TrainConfig, TrainingExample,
};
pub use program::{BuildMode, OutputKind, ProgramGraph, SubProgram, SummaryMode};
pub use sketch::{tt_svd, Rank, SketchConfig, TTSketch};
pub use svd::{truncated_svd, SvdResult};
pub use task::{BuiltinTask, TaskConfig, TaskSpec};
pub use tensor::DenseTensor;
pub use verify::{check_thm31, check_thm32, grad_check, wmc_exact, WmcQuery, WmcResult, WmcSubject};
