//! Fixed workloads shared by the benchmarks.

use dualgrad_core::dmpc::{build_problem, random_system};
use dualgrad_core::gen::generate;
use dualgrad_core::{BlockProblem, DualPoint, Result, StepData};

/// A generated instance with its step data and a starting multiplier.
pub struct Workload {
    pub problem: BlockProblem,
    pub steps: StepData,
    pub start: DualPoint,
}

impl Workload {
    fn from_problem(problem: BlockProblem) -> Result<Self> {
        let steps = StepData::compute(&problem)?;
        let start = DualPoint::zeros(problem.graph());
        Ok(Self { problem, steps, start })
    }

    /// `M` blocks of size 5 with sparsity `omega`, optionally with the softplus term.
    pub fn random(blocks: usize, omega: usize, gamma: bool) -> Result<Self> {
        Self::from_problem(generate(blocks, 5, omega, gamma, 0)?)
    }

    /// A ring of `m` two-state subsystems over `horizon` steps.
    pub fn dmpc(m: usize, horizon: usize) -> Result<Self> {
        Self::from_problem(build_problem(&random_system(m, 2, 1, 3, horizon, 11)?)?)
    }
}
