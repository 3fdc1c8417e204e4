//! Task configuration: the JSON control plane the CLI consumes. A task
//! names either a builtin program family or an explicit layered graph,
//! plus the inference and sketching knobs.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::InferenceConfig;
use crate::program::{
    builtin_carry_add, builtin_hwf_graph, builtin_sudoku_cell_graph, builtin_sum_monolithic,
    builtin_sum_split, builtin_sum_tree, builtin_visudo, ProgramGraph, SummaryMode,
};
use crate::sketch::Rank;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum BuiltinTask {
    SumTree {
        n: usize,
        #[serde(default)]
        mode: SummaryMode,
    },
    SumSplit {
        profile: Vec<usize>,
        #[serde(default)]
        mode: SummaryMode,
    },
    SumMonolithic {
        n: usize,
        #[serde(default)]
        mode: SummaryMode,
    },
    CarryAdd {
        n_digits: usize,
        #[serde(default)]
        mode: SummaryMode,
    },
    Visudo {
        n: usize,
    },
    SudokuCell,
    Hwf {
        length: usize,
    },
}

impl BuiltinTask {
    pub fn build(&self) -> Result<ProgramGraph> {
        match self {
            BuiltinTask::SumTree { n, mode } => builtin_sum_tree(*n, *mode),
            BuiltinTask::SumSplit { profile, mode } => builtin_sum_split(profile, *mode),
            BuiltinTask::SumMonolithic { n, mode } => builtin_sum_monolithic(*n, *mode),
            BuiltinTask::CarryAdd { n_digits, mode } => builtin_carry_add(*n_digits, *mode),
            BuiltinTask::Visudo { n } => builtin_visudo(*n),
            BuiltinTask::SudokuCell => Ok(builtin_sudoku_cell_graph()),
            BuiltinTask::Hwf { length } => builtin_hwf_graph(*length),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskSpec {
    Builtin(BuiltinTask),
    Graph(ProgramGraph),
}

fn default_sigma() -> f64 {
    0.5
}

fn default_rank() -> Rank {
    Rank::Full
}

/// One task file: program plus inference and sketch parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub name: String,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default)]
    pub squared_rbf: bool,
    /// Default bond rank for every sub-program sketch.
    #[serde(default = "default_rank")]
    pub rank: Rank,
    /// Per-sub-program rank overrides, keyed by sub-program id. Nodes
    /// sharing a sub-program share its sketch, so rank is set here
    /// rather than per node.
    #[serde(default)]
    pub rank_overrides: BTreeMap<String, Rank>,
    #[serde(flatten)]
    pub spec: TaskSpec,
}

impl TaskConfig {
    pub fn builtin(name: &str, task: BuiltinTask) -> TaskConfig {
        TaskConfig {
            name: name.to_string(),
            sigma: default_sigma(),
            squared_rbf: false,
            rank: default_rank(),
            rank_overrides: BTreeMap::new(),
            spec: TaskSpec::Builtin(task),
        }
    }

    pub fn resolve(&self) -> Result<ProgramGraph> {
        let graph = match &self.spec {
            TaskSpec::Builtin(b) => b.build()?,
            TaskSpec::Graph(g) => g.clone(),
        };
        graph.validate()?;
        Ok(graph)
    }

    pub fn rank_for(&self, program_id: &str) -> Rank {
        self.rank_overrides.get(program_id).copied().unwrap_or(self.rank)
    }

    pub fn inference_config(&self) -> InferenceConfig {
        InferenceConfig { sigma: self.sigma, squared_rbf: self.squared_rbf }
    }

    pub fn load(path: &Path) -> Result<TaskConfig> {
        let text = std::fs::read_to_string(path)?;
        let cfg: TaskConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if !(cfg.sigma > 0.0) {
            return Err(Error::Config(format!("sigma must be positive, got {}", cfg.sigma)));
        }
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Internal(format!("task encode: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }
}
