//! Distributed dual gradient methods for separable convex problems coupled
//! through sparse linear constraints.

pub mod dmpc;
pub mod dual;
pub mod error;
pub mod errorbound;
pub mod gen;
pub mod io;
pub mod model;
pub mod oracles;
pub mod reference;
pub mod sim;
pub mod stepsize;

pub use dual::{Algorithm, CompareReport, RunConfig, RunStatus, RunTrace, StopMode, StopRule, TraceRow};
pub use error::{Error, Result};
pub use model::{BipartiteGraph, BlockProblem, DualPoint, PrimalPoint};
pub use oracles::BlockObjective;
pub use reference::RefSolution;
pub use stepsize::{StepData, Weights};
