//! Message-passing execution of the weighted dual gradient method.
//!
//! Primal nodes (one per block `i`) and constraint nodes (one per block `j`)
//! hold only their own data. Every exchange goes through [`Network`], which
//! refuses to deliver along a pair that is not an edge of the coupling graph.
//! Reductions run in the same order as the monolithic driver, so the two
//! produce bitwise identical iterates.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dual::{trace_row, update_dual_block, DualEval, RunStatus, RunTrace, StopRule};
use crate::dual::Algorithm;
use crate::error::{Error, Result};
use crate::model::{adjoint_accumulate, block_product, BipartiteGraph, BlockProblem, DualPoint, PrimalPoint};
use crate::oracles::{solve_block, BlockObjective};
use crate::reference::RefSolution;
use crate::stepsize::Weights;

const F64_BYTES: usize = std::mem::size_of::<f64>();

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// Constraint node to primal node, carrying `(ν_j, μ_j)`.
    Down,
    /// Primal node to constraint node, carrying `(A_ji z_i, C_ji z_i)`.
    Up,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Down => "v2_to_v1",
            Direction::Up => "v1_to_v2",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub round: usize,
    pub direction: Direction,
    /// Sender index (in V2 for `Down`, in V1 for `Up`).
    pub from: usize,
    pub to: usize,
    pub bytes: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MessageLog {
    pub records: Vec<MessageRecord>,
}

impl MessageLog {
    pub fn round_count(&self, round: usize) -> usize {
        self.records.iter().filter(|r| r.round == round).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,direction,from,to,bytes\n");
        for r in &self.records {
            out.push_str(&format!("{},{},{},{},{}\n", r.round, r.direction, r.from, r.to, r.bytes));
        }
        out
    }
}

/// `(ν_j, μ_j)` or `(A_ji z_i, C_ji z_i)`.
#[derive(Debug, Clone)]
pub struct Payload {
    pub eq: DVector<f64>,
    pub ineq: DVector<f64>,
}

impl Payload {
    fn bytes(&self) -> usize {
        (self.eq.len() + self.ineq.len()) * F64_BYTES
    }
}

/// Delivery layer: checks each message against the edge set and logs it.
#[derive(Debug)]
pub struct Network<'g> {
    graph: &'g BipartiteGraph,
    log: MessageLog,
}

impl<'g> Network<'g> {
    pub fn new(graph: &'g BipartiteGraph) -> Self {
        Self { graph, log: MessageLog::default() }
    }

    pub fn send(&mut self, round: usize, direction: Direction, from: usize, to: usize, payload: Payload) -> Result<Payload> {
        let (j, i) = match direction {
            Direction::Down => (from, to),
            Direction::Up => (to, from),
        };
        if !self.graph.has_edge(j, i) {
            let (src, dst) = match direction {
                Direction::Down => (format!("v2:{from}"), format!("v1:{to}")),
                Direction::Up => (format!("v1:{from}"), format!("v2:{to}")),
            };
            return Err(Error::Locality { from: src, to: dst });
        }
        self.log.records.push(MessageRecord { round, direction, from, to, bytes: payload.bytes() });
        Ok(payload)
    }

    pub fn into_log(self) -> MessageLog {
        self.log
    }
}

/// `(j, A_ji, C_ji)`; a missing matrix is a zero block.
type LocalBlocks = (usize, Option<DMatrix<f64>>, Option<DMatrix<f64>>);

/// Primal node `i`: its objective, `A_ji, C_ji` for `j ∈ N̄_i`, the latest
/// `λ_j` received from those neighbors, and `z_i`.
#[derive(Debug, Clone)]
pub struct PrimalNode {
    pub index: usize,
    objective: BlockObjective,
    /// `(j, A_ji, C_ji)`, ascending in `j`.
    blocks: Vec<LocalBlocks>,
    /// Latest `(ν_j, μ_j)` per entry of `blocks`.
    inbox: Vec<Option<Payload>>,
    pub z: DVector<f64>,
    /// `f_i(z_i)` and `f_i(z_i) + ⟨w_i, z_i⟩`, reported to the observer.
    pub local_objective: f64,
    pub local_dual: f64,
}

impl PrimalNode {
    fn slot(&self, j: usize) -> Option<usize> {
        self.blocks.iter().position(|(jj, _, _)| *jj == j)
    }

    fn receive(&mut self, j: usize, payload: Payload) -> Result<()> {
        let s = self.slot(j).ok_or_else(|| Error::Locality { from: format!("v2:{j}"), to: format!("v1:{}", self.index) })?;
        self.inbox[s] = Some(payload);
        Ok(())
    }

    fn solve(&mut self) -> Result<()> {
        let mut terms = Vec::with_capacity(2 * self.blocks.len());
        for ((_, a, c), msg) in self.blocks.iter().zip(&self.inbox) {
            let msg = msg.as_ref().ok_or_else(|| Error::Invariant(format!("node {} missing a multiplier", self.index)))?;
            terms.push((a.as_ref(), &msg.eq));
            terms.push((c.as_ref(), &msg.ineq));
        }
        let w = adjoint_accumulate(self.objective.dim(), terms);
        let z = solve_block(&self.objective, &w)?;
        self.local_objective = self.objective.value(&z);
        self.local_dual = self.local_objective + w.dot(&z);
        self.z = z;
        Ok(())
    }

    fn outgoing(&self) -> Vec<(usize, Payload)> {
        self.blocks
            .iter()
            .map(|(j, a, c)| {
                let part = |m: &Option<DMatrix<f64>>, rows: usize| match m {
                    Some(m) => block_product(m, &self.z),
                    None => DVector::zeros(rows),
                };
                let p_rows = a.as_ref().map_or(0, |m| m.nrows());
                let q_rows = c.as_ref().map_or(0, |m| m.nrows());
                (*j, Payload { eq: part(a, p_rows), ineq: part(c, q_rows) })
            })
            .collect()
    }
}

/// Constraint node `j`: `λ_j`, `b_j`, `c_j`, its weight, and the partial
/// sums received from `i ∈ N_j`.
#[derive(Debug, Clone)]
pub struct DualNode {
    pub index: usize,
    pub nu: DVector<f64>,
    pub mu: DVector<f64>,
    b: DVector<f64>,
    c: DVector<f64>,
    weight: f64,
    /// Primal neighbors, ascending.
    neighbors: Vec<usize>,
    inbox: Vec<Option<Payload>>,
    /// Zero-block flags per neighbor; a missing block contributes nothing to the sum.
    has_eq: Vec<bool>,
    has_ineq: Vec<bool>,
}

impl DualNode {
    fn receive(&mut self, i: usize, payload: Payload) -> Result<()> {
        let s = self
            .neighbors
            .iter()
            .position(|&ii| ii == i)
            .ok_or_else(|| Error::Locality { from: format!("v1:{i}"), to: format!("v2:{}", self.index) })?;
        self.inbox[s] = Some(payload);
        Ok(())
    }

    /// `(A_j z − b_j, C_j z − c_j)` reduced in ascending `i`.
    fn local_gradient(&self) -> Result<(DVector<f64>, DVector<f64>)> {
        let mut eq = DVector::zeros(self.b.len());
        let mut ineq = DVector::zeros(self.c.len());
        for (s, msg) in self.inbox.iter().enumerate() {
            let msg = msg.as_ref().ok_or_else(|| Error::Invariant(format!("node {} missing a partial sum", self.index)))?;
            if self.has_eq[s] {
                eq += &msg.eq;
            }
            if self.has_ineq[s] {
                ineq += &msg.ineq;
            }
        }
        Ok((eq - &self.b, ineq - &self.c))
    }
}

/// Splits a problem into node-local states.
pub fn build_nodes(problem: &BlockProblem, weights: &Weights, lambda0: &DualPoint) -> (Vec<PrimalNode>, Vec<DualNode>) {
    let g = problem.graph();
    let primal = (0..g.primal_count())
        .map(|i| {
            let blocks: Vec<_> = g
                .primal_edges(i)
                .iter()
                .map(|&e| {
                    let j = g.edges()[e].0;
                    let blk = &problem.couplings()[e];
                    (j, blk.eq.clone(), blk.ineq.clone())
                })
                .collect();
            let inbox = vec![None; blocks.len()];
            PrimalNode {
                index: i,
                objective: problem.objective(i).clone(),
                blocks,
                inbox,
                z: DVector::zeros(g.n(i)),
                local_objective: 0.0,
                local_dual: 0.0,
            }
        })
        .collect();
    let dual = (0..g.dual_count())
        .map(|j| {
            let edges = g.dual_edges(j);
            DualNode {
                index: j,
                nu: lambda0.nu[j].clone(),
                mu: lambda0.mu[j].clone(),
                b: problem.b_block(j).clone(),
                c: problem.c_block(j).clone(),
                weight: weights.block(j),
                neighbors: edges.iter().map(|&e| g.edges()[e].1).collect(),
                inbox: vec![None; edges.len()],
                has_eq: edges.iter().map(|&e| problem.couplings()[e].eq.is_some()).collect(),
                has_ineq: edges.iter().map(|&e| problem.couplings()[e].ineq.is_some()).collect(),
            }
        })
        .collect();
    (primal, dual)
}

/// Runs `rounds` weighted dual gradient rounds as message passing from `λ⁰`.
///
/// Round `k` broadcasts `λ^k`, solves the primal blocks, reduces the partial
/// sums and forms `λ^{k+1}`. One extra exchange at the end evaluates `λ^K`
/// so the trace has the same rows `0..=K` as a capped monolithic run; its
/// update is not applied.
pub fn run_distributed(
    problem: &BlockProblem,
    weights: &Weights,
    lambda0: &DualPoint,
    rounds: usize,
    reference: Option<&RefSolution>,
) -> Result<(RunTrace, MessageLog)> {
    let graph = problem.graph();
    if !lambda0.matches(graph) || !lambda0.in_domain() {
        return Err(Error::Dimension("initial multiplier must have the problem's shape and lie in D".into()));
    }
    let (mut primal, mut dual) = build_nodes(problem, weights, lambda0);
    let mut net = Network::new(graph);
    let mut rows = Vec::with_capacity(rounds + 1);

    for k in 0..=rounds {
        // constraint nodes broadcast their multipliers
        for node in &dual {
            for &i in &node.neighbors {
                let msg = net.send(k, Direction::Down, node.index, i, Payload { eq: node.nu.clone(), ineq: node.mu.clone() })?;
                primal[i].receive(node.index, msg)?;
            }
        }
        primal.par_iter_mut().try_for_each(PrimalNode::solve)?;
        for node in &primal {
            for (j, payload) in node.outgoing() {
                let msg = net.send(k, Direction::Up, node.index, j, payload)?;
                dual[j].receive(node.index, msg)?;
            }
        }

        let mut grad = DualPoint { nu: Vec::with_capacity(dual.len()), mu: Vec::with_capacity(dual.len()) };
        let mut next = DualPoint { nu: Vec::with_capacity(dual.len()), mu: Vec::with_capacity(dual.len()) };
        for node in &dual {
            let (g_nu, g_mu) = node.local_gradient()?;
            let (nu, mu) = update_dual_block(&node.nu, &node.mu, &g_nu, &g_mu, node.weight);
            grad.nu.push(g_nu);
            grad.mu.push(g_mu);
            next.nu.push(nu);
            next.mu.push(mu);
        }

        // observer: assembles the row from node-local quantities
        let lambda = current_lambda(&dual);
        let mut value = 0.0;
        let mut objective = 0.0;
        for node in &primal {
            value += node.local_dual;
            objective += node.local_objective;
        }
        for node in &dual {
            value -= node.nu.dot(&node.b) + node.mu.dot(&node.c);
        }
        let eval = DualEval { value, objective, grad, z: PrimalPoint(primal.iter().map(|n| n.z.clone()).collect()) };
        let step_w = next.distance_w(&lambda, weights);
        rows.push(trace_row(weights, reference, k, &lambda, &eval, step_w, step_w));

        if k == rounds {
            let trace = RunTrace {
                algorithm: Algorithm::Dg,
                stop: StopRule::cap(rounds.max(1)),
                seed: problem.seed(),
                rows,
                status: RunStatus::CapReached,
                iterations: rounds,
                lambda,
                z: eval.z,
                iterates: Vec::new(),
                ascent_violations: 0,
                distance_violations: 0,
            };
            return Ok((trace, net.into_log()));
        }
        for (node, (nu, mu)) in dual.iter_mut().zip(next.nu.into_iter().zip(next.mu)) {
            node.nu = nu;
            node.mu = mu;
        }
    }
    unreachable!("the loop returns on its last round")
}

fn current_lambda(dual: &[DualNode]) -> DualPoint {
    DualPoint { nu: dual.iter().map(|n| n.nu.clone()).collect(), mu: dual.iter().map(|n| n.mu.clone()).collect() }
}

/// Every logged message travels along an edge, in a direction consistent
/// with its round structure.
pub fn verify_locality(log: &MessageLog, graph: &BipartiteGraph) -> bool {
    log.records.iter().all(|r| match r.direction {
        Direction::Down => graph.has_edge(r.from, r.to),
        Direction::Up => graph.has_edge(r.to, r.from),
    })
}
