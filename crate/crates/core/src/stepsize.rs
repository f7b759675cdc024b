//! Dual Lipschitz constants and the block-diagonal step-size matrix `W`.
//!
//! `W` carries one scalar per constraint block `j`,
//! `w_j = Σ_{i ∈ N_j} L_{d_i}`, applied to both `ν_j` and `μ_j`. The step
//! `λ + W⁻¹∇d(λ)` therefore needs nothing beyond the neighborhood of `j`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::model::{assemble_dense, BipartiteGraph, BlockProblem, DualPoint};
use crate::oracles::{BlockObjective, ConvexityConstants};

pub const POWER_TOLERANCE: f64 = 1e-10;
pub const POWER_MAX_ITER: usize = 10_000;
/// Largest Gram dimension for which a stalled power iteration falls back to a dense eigensolve.
pub const DENSE_FALLBACK_DIM: usize = 512;

fn dense_top_eigenvalue(gram: DMatrix<f64>) -> f64 {
    SymmetricEigen::new(gram).eigenvalues.max().max(0.0)
}

fn power_iteration(m: &DMatrix<f64>, start: DVector<f64>) -> Option<f64> {
    let mut x = start;
    let mut prev = f64::NAN;
    for _ in 0..POWER_MAX_ITER {
        let v = m * &x;
        let rho = v.norm_squared();
        let y = m.tr_mul(&v);
        let ny = y.norm();
        if ny == 0.0 {
            return Some(0.0);
        }
        if (rho - prev).abs() <= POWER_TOLERANCE * rho {
            return Some(rho);
        }
        prev = rho;
        x = y / ny;
    }
    None
}

/// `‖M‖²`, the largest eigenvalue of `MᵀM`, by power iteration from the
/// normalized all-ones vector. Zero for an all-zero matrix.
pub fn spectral_norm_sq(m: &DMatrix<f64>) -> Result<f64> {
    let n = m.ncols();
    if n == 0 || m.nrows() == 0 || m.amax() == 0.0 {
        return Ok(0.0);
    }
    let start = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut estimate = power_iteration(m, start.clone());
    if estimate == Some(0.0) {
        // start vector was in the null space of M
        let mut s = start;
        s[0] += 1e-3;
        let s = s.normalize();
        estimate = power_iteration(m, s);
    }
    match estimate {
        Some(v) if v > 0.0 => Ok(v),
        _ if n <= DENSE_FALLBACK_DIM => Ok(dense_top_eigenvalue(m.tr_mul(m))),
        Some(_) => Err(Error::Numeric("power iteration found no dominant direction".into())),
        None => Err(Error::Numeric(format!(
            "power iteration did not converge in {POWER_MAX_ITER} iterations"
        ))),
    }
}

/// Rows `[A_ji; C_ji]` for all `j ∈ N̄_i`, ascending in `j`.
pub fn stacked_columns(problem: &BlockProblem, i: usize) -> DMatrix<f64> {
    let g = problem.graph();
    let edges = g.primal_edges(i);
    let rows: usize = edges
        .iter()
        .map(|&e| {
            let j = g.edges()[e].0;
            g.p(j) + g.q(j)
        })
        .sum();
    let mut out = DMatrix::zeros(rows, g.n(i));
    let mut at = 0;
    for &e in edges {
        let j = g.edges()[e].0;
        let blk = &problem.couplings()[e];
        if let Some(a) = &blk.eq {
            out.rows_mut(at, g.p(j)).copy_from(a);
        }
        at += g.p(j);
        if let Some(c) = &blk.ineq {
            out.rows_mut(at, g.q(j)).copy_from(c);
        }
        at += g.q(j);
    }
    out
}

/// `L_{d_i} = ‖[A_ji; C_ji]_{j ∈ N̄_i}‖² / σ_i`.
pub fn block_dual_lipschitz(problem: &BlockProblem, i: usize) -> Result<f64> {
    if problem.graph().primal_edges(i).is_empty() {
        return Err(Error::EmptyNeighborhood { i });
    }
    Ok(spectral_norm_sq(&stacked_columns(problem, i))? / problem.objective(i).sigma())
}

pub fn block_dual_lipschitz_all(problem: &BlockProblem) -> Result<Vec<f64>> {
    (0..problem.graph().primal_count())
        .map(|i| block_dual_lipschitz(problem, i))
        .collect()
}

/// `L_d = ‖G‖² / σ_f`. Builds `G` densely.
pub fn global_dual_lipschitz(problem: &BlockProblem) -> Result<f64> {
    let (g, _) = assemble_dense(problem);
    let sigma_f = problem
        .objectives()
        .iter()
        .map(BlockObjective::sigma)
        .fold(f64::INFINITY, f64::min);
    Ok(spectral_norm_sq(&g)? / sigma_f)
}

/// Diagonal step-size matrix, one scalar per constraint block.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    per_block: Vec<f64>,
    min: f64,
    max: f64,
}

impl Weights {
    fn from_blocks(graph: &BipartiteGraph, per_block: Vec<f64>) -> Self {
        let mut min = f64::INFINITY;
        let mut max = 0.0f64;
        for (j, &w) in per_block.iter().enumerate() {
            if graph.p(j) + graph.q(j) > 0 {
                min = min.min(w);
                max = max.max(w);
            }
        }
        Self { per_block, min, max }
    }

    /// `W = value · I`, the centralized step.
    pub fn uniform(graph: &BipartiteGraph, value: f64) -> Self {
        Self::from_blocks(graph, vec![value; graph.dual_count()])
    }

    /// Weight shared by `ν_j` and `μ_j`.
    pub fn block(&self, j: usize) -> f64 {
        self.per_block[j]
    }

    pub fn blocks(&self) -> &[f64] {
        &self.per_block
    }

    /// `λ_min(W)`.
    pub fn min(&self) -> f64 {
        self.min
    }

    /// `λ_max(W)`.
    pub fn max(&self) -> f64 {
        self.max
    }

    /// Diagonal of `W` in the flat `[ν; μ]` order.
    pub fn dense_diagonal(&self, graph: &BipartiteGraph) -> DVector<f64> {
        let mut d = Vec::with_capacity(graph.total_p() + graph.total_q());
        for j in 0..graph.dual_count() {
            d.extend(std::iter::repeat_n(self.per_block[j], graph.p(j)));
        }
        for j in 0..graph.dual_count() {
            d.extend(std::iter::repeat_n(self.per_block[j], graph.q(j)));
        }
        DVector::from_vec(d)
    }
}

/// `w_j = Σ_{i ∈ N_j} L_{d_i}`, summed in ascending `i`.
pub fn assemble_weights(problem: &BlockProblem, block_lipschitz: &[f64]) -> Result<Weights> {
    let g = problem.graph();
    if block_lipschitz.len() != g.primal_count() {
        return Err(Error::Dimension(format!(
            "{} dual Lipschitz constants for {} primal blocks",
            block_lipschitz.len(),
            g.primal_count()
        )));
    }
    let mut per_block = Vec::with_capacity(g.dual_count());
    for j in 0..g.dual_count() {
        let mut w = 0.0;
        for &e in g.dual_edges(j) {
            w += block_lipschitz[g.edges()[e].1];
        }
        if g.p(j) + g.q(j) == 0 {
            // block carries no multipliers
            w = 1.0;
        } else if w.is_nan() || w <= 0.0 {
            return Err(Error::DegenerateWeight { j });
        }
        per_block.push(w);
    }
    Ok(Weights::from_blocks(g, per_block))
}

/// Everything the drivers need about step sizes, computed once per problem.
#[derive(Debug, Clone)]
pub struct StepData {
    pub block_lipschitz: Vec<f64>,
    pub weights: Weights,
    pub global_lipschitz: f64,
    pub convexity: ConvexityConstants,
    /// `‖G‖`.
    pub g_norm: f64,
}

impl StepData {
    pub fn compute(problem: &BlockProblem) -> Result<Self> {
        let block_lipschitz = block_dual_lipschitz_all(problem)?;
        let weights = assemble_weights(problem, &block_lipschitz)?;
        let (g, _) = assemble_dense(problem);
        let g_norm_sq = spectral_norm_sq(&g)?;
        let convexity = crate::oracles::conjugate_strong_convexity(problem);
        Ok(Self {
            block_lipschitz,
            weights,
            global_lipschitz: g_norm_sq / convexity.sigma_f,
            convexity,
            g_norm: g_norm_sq.sqrt(),
        })
    }
}

/// `G Q⁻¹ Gᵀ` for a problem whose objectives are all quadratic. The dual is
/// then `d(λ) = const − ½ λᵀ(GQ⁻¹Gᵀ)λ + linear`.
pub fn dual_curvature(problem: &BlockProblem) -> Result<DMatrix<f64>> {
    if !problem.is_quadratic() {
        return Err(Error::Unsupported("dual curvature needs quadratic objectives".into()));
    }
    let graph = problem.graph();
    let (g, _) = assemble_dense(problem);
    let mut q_inv_gt = DMatrix::zeros(g.ncols(), g.nrows());
    for i in 0..graph.primal_count() {
        let off = graph.n_offset(i);
        let n = graph.n(i);
        let gi_t = g.columns(off, n).transpose();
        let obj = problem.objective(i);
        for col in 0..gi_t.ncols() {
            let x = obj.solve_hessian(&gi_t.column(col).into_owned());
            q_inv_gt.view_mut((off, col), (n, 1)).copy_from(&x);
        }
    }
    Ok(&g * q_inv_gt)
}

/// A problem on which the descent lemma holds with equality along `direction`.
#[derive(Debug, Clone)]
pub struct TightnessInstance {
    pub problem: BlockProblem,
    pub direction: DualPoint,
}

/// Scalar blocks `f_i = (σ_i/2) z_i²` coupled by an `m × m` circulant
/// equality pattern with `omega` nonzeros per row and column; column `i`
/// has entries `√σ_i`. The direction is the all-ones vector.
pub fn tightness_instance(omega: usize, sigmas: &[f64]) -> Result<TightnessInstance> {
    let m = sigmas.len();
    if omega == 0 || omega > m {
        return Err(Error::Dimension(format!("need 1 <= omega <= m, got omega={omega}, m={m}")));
    }
    let edges: Vec<(usize, usize)> =
        (0..m).flat_map(|j| (0..omega).map(move |k| (j, (j + k) % m))).collect();
    let graph = BipartiteGraph::new(edges.iter().copied(), vec![1; m], vec![1; m], vec![0; m])?;
    let objectives = sigmas
        .iter()
        .map(|&s| BlockObjective::quadratic(DMatrix::from_element(1, 1, s), DVector::zeros(1)))
        .collect::<Result<Vec<_>>>()?;
    let a_blocks = edges
        .iter()
        .map(|&(j, i)| ((j, i), DMatrix::from_element(1, 1, sigmas[i].sqrt())))
        .collect();
    let problem = BlockProblem::new(graph, objectives, a_blocks, vec![], DVector::zeros(m), DVector::zeros(0), None)?;
    let direction = DualPoint::from_flat(problem.graph(), &DVector::from_element(m, 1.0))?;
    Ok(TightnessInstance { problem, direction })
}

/// `(‖h‖²_{GQ⁻¹Gᵀ}, ‖h‖²_W)` for a quadratic problem and direction `h`.
pub fn quadratic_forms(problem: &BlockProblem, weights: &Weights, h: &DualPoint) -> Result<(f64, f64)> {
    let hess = dual_curvature(problem)?;
    let hf = h.to_flat();
    Ok((hf.dot(&(&hess * &hf)), h.norm_w(weights).powi(2)))
}
