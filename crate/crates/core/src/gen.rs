//! Seeded random instances with a prescribed sparsity degree.
//!
//! All randomness comes from a ChaCha8 stream keyed by the seed, so an
//! instance is reproducible on any platform.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, Uniform};

use crate::error::{Error, Result};
use crate::model::{numerical_rank, BipartiteGraph, BlockProblem, RANK_TOLERANCE};
use crate::oracles::BlockObjective;

/// Attempts after the first one when `A` comes out rank deficient.
pub const RANK_RETRIES: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenConfig {
    /// Number of primal blocks `M` (and of constraint blocks).
    pub blocks: usize,
    /// Size `n_i` of every primal block.
    pub block_dim: usize,
    pub omega: usize,
    /// Adds the softplus term with `γ_i = 1`.
    pub gamma: bool,
    pub seed: u64,
    /// Rows per equality block; defaults to `⌈3n/4⌉`.
    pub eq_rows: Option<usize>,
    /// Rows per inequality block; defaults to `⌈3n/2⌉`.
    pub ineq_rows: Option<usize>,
}

impl GenConfig {
    pub fn new(blocks: usize, block_dim: usize, omega: usize, gamma: bool, seed: u64) -> Self {
        Self { blocks, block_dim, omega, gamma, seed, eq_rows: None, ineq_rows: None }
    }

    /// Small row blocks (`⌈n/4⌉` each) so that `G` has full row rank.
    pub fn full_row_rank(mut self) -> Self {
        let r = self.block_dim.div_ceil(4);
        self.eq_rows = Some(r);
        self.ineq_rows = Some(r);
        self
    }

    pub fn p_rows(&self) -> usize {
        self.eq_rows.unwrap_or((3 * self.block_dim).div_ceil(4))
    }

    pub fn q_rows(&self) -> usize {
        self.ineq_rows.unwrap_or((3 * self.block_dim).div_ceil(2))
    }
}

pub fn generate(blocks: usize, block_dim: usize, omega: usize, gamma: bool, seed: u64) -> Result<BlockProblem> {
    generate_with(&GenConfig::new(blocks, block_dim, omega, gamma, seed))
}

pub fn generate_with(cfg: &GenConfig) -> Result<BlockProblem> {
    if cfg.blocks == 0 || cfg.block_dim == 0 {
        return Err(Error::Generation("need at least one block of positive dimension".into()));
    }
    if cfg.omega == 0 || cfg.omega > cfg.blocks {
        return Err(Error::Generation(format!("omega must lie in [1, {}], got {}", cfg.blocks, cfg.omega)));
    }
    for attempt in 0..=RANK_RETRIES {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(attempt);
        let problem = draw(cfg, &mut rng)?;
        let a = problem.dense_eq();
        if a.nrows() == 0 || numerical_rank(&a, RANK_TOLERANCE) == a.nrows() {
            return Ok(problem.with_seed(Some(cfg.seed)));
        }
    }
    Err(Error::Generation(format!("A stayed rank deficient after {} retries", RANK_RETRIES)))
}

/// Incidence with `E_ji = 1` iff `(i − j) mod M < ω`, rows and columns then
/// shuffled. Every row and column has exactly `ω` ones.
pub fn sparsity_pattern(blocks: usize, omega: usize, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let mut rows: Vec<usize> = (0..blocks).collect();
    let mut cols: Vec<usize> = (0..blocks).collect();
    rows.shuffle(rng);
    cols.shuffle(rng);
    let mut edges = Vec::with_capacity(blocks * omega);
    for (j, &row) in rows.iter().enumerate() {
        for s in 0..omega {
            edges.push((row, cols[(j + s) % blocks]));
        }
    }
    edges
}

fn normal_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    // column-major fill
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn draw(cfg: &GenConfig, rng: &mut ChaCha8Rng) -> Result<BlockProblem> {
    let m = cfg.blocks;
    let n = cfg.block_dim;
    let (p, q) = (cfg.p_rows(), cfg.q_rows());
    let graph = BipartiteGraph::new(sparsity_pattern(m, cfg.omega, rng), vec![n; m], vec![p; m], vec![q; m])?;

    let sigma_dist = Uniform::new_inclusive(1.0, 10.0).map_err(|e| Error::Generation(e.to_string()))?;
    let unit = Uniform::new_inclusive(-1.0, 1.0).map_err(|e| Error::Generation(e.to_string()))?;
    let gamma = if cfg.gamma { 1.0 } else { 0.0 };
    let mut objectives = Vec::with_capacity(m);
    for i in 0..m {
        let raw = normal_matrix(n, n, rng);
        let sigma = rng.sample(sigma_dist);
        let mut hessian = raw.transpose() * &raw;
        for k in 0..n {
            hessian[(k, k)] += sigma;
        }
        // symmetrize exactly so the eigen check sees a symmetric matrix
        let hessian = (&hessian + hessian.transpose()) * 0.5;
        let linear = DVector::from_fn(n, |_, _| rng.sample(unit));
        let direction = DVector::from_fn(n, |_, _| rng.sample(unit));
        let obj = BlockObjective::new(hessian, linear, gamma, direction).map_err(|e| match e {
            Error::InvalidObjective { msg, .. } => Error::InvalidObjective { i, msg },
            other => other,
        })?;
        objectives.push(obj);
    }

    let mut a_blocks = Vec::with_capacity(graph.edges().len());
    let mut c_blocks = Vec::with_capacity(graph.edges().len());
    for &(j, i) in graph.edges() {
        a_blocks.push(((j, i), normal_matrix(p, n, rng)));
        c_blocks.push(((j, i), normal_matrix(q, n, rng)));
    }

    let witness = DVector::from_fn(m * n, |_, _| rng.sample(StandardNormal));
    let slack_dist = Uniform::new_inclusive(0.1, 1.1).map_err(|e| Error::Generation(e.to_string()))?;
    let slack = DVector::from_fn(m * q, |_, _| rng.sample(slack_dist));

    let mut b = DVector::zeros(m * p);
    let mut c = DVector::zeros(m * q);
    for (((j, i), a), (_, cm)) in a_blocks.iter().zip(c_blocks.iter()) {
        let zi = witness.rows(graph.n_offset(*i), n);
        let mut bj = b.rows_mut(graph.p_offset(*j), p);
        bj.gemv(1.0, a, &zi, 1.0);
        let mut cj = c.rows_mut(graph.q_offset(*j), q);
        cj.gemv(1.0, cm, &zi, 1.0);
    }
    c += slack;

    BlockProblem::new(graph, objectives, a_blocks, c_blocks, b, c, Some(witness))
}
