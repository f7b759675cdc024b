//! Block-structured problem data.
//!
//! A problem couples `M` primal blocks `z_i` through `M̄` constraint blocks.
//! Constraint block `j` owns `p_j` equality rows and `q_j` inequality rows;
//! the coupling matrices `A_ji`, `C_ji` are stored only for pairs that are
//! edges of the bipartite graph. Global ordering is fixed everywhere: all
//! equality rows by ascending `j`, then all inequality rows by ascending `j`;
//! columns by ascending `i`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::oracles::BlockObjective;
use crate::stepsize::Weights;

/// Tolerance for the rank test, relative to the spectral norm of `A`.
pub const RANK_TOLERANCE: f64 = 1e-10;
/// Equality residual allowed for a strict-feasibility witness (infinity norm).
pub const STRICT_EQ_TOLERANCE: f64 = 1e-9;
/// Required slack of a strict-feasibility witness on every inequality row.
pub const STRICT_INEQ_MARGIN: f64 = 1e-6;

/// The coupling graph between primal blocks (`V1`) and constraint blocks (`V2`).
#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteGraph {
    primal_count: usize,
    dual_count: usize,
    /// `(j, i)` pairs, sorted.
    edges: Vec<(usize, usize)>,
    n: Vec<usize>,
    p: Vec<usize>,
    q: Vec<usize>,
    /// Per `i`: edge indices in ascending `j`.
    primal_edges: Vec<Vec<usize>>,
    /// Per `j`: edge indices in ascending `i`.
    dual_edges: Vec<Vec<usize>>,
    n_offsets: Vec<usize>,
    p_offsets: Vec<usize>,
    q_offsets: Vec<usize>,
}

fn offsets(sizes: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(sizes.len() + 1);
    let mut acc = 0;
    out.push(0);
    for s in sizes {
        acc += s;
        out.push(acc);
    }
    out
}

impl BipartiteGraph {
    /// Builds a graph from `(j, i)` edge pairs and the per-block sizes.
    /// `n` has one entry per primal block, `p` and `q` one per constraint block.
    pub fn new(
        edges: impl IntoIterator<Item = (usize, usize)>,
        n: Vec<usize>,
        p: Vec<usize>,
        q: Vec<usize>,
    ) -> Result<Self> {
        let primal_count = n.len();
        let dual_count = p.len();
        if q.len() != dual_count {
            return Err(Error::Dimension(format!(
                "p has {} entries but q has {}",
                dual_count,
                q.len()
            )));
        }
        let mut edges: Vec<(usize, usize)> = edges.into_iter().collect();
        edges.sort_unstable();
        for w in edges.windows(2) {
            if w[0] == w[1] {
                return Err(Error::Structural {
                    j: w[0].0,
                    i: w[0].1,
                    msg: "duplicate edge".into(),
                });
            }
        }
        let mut primal_edges = vec![Vec::new(); primal_count];
        let mut dual_edges = vec![Vec::new(); dual_count];
        for (e, &(j, i)) in edges.iter().enumerate() {
            if j >= dual_count || i >= primal_count {
                return Err(Error::Structural {
                    j,
                    i,
                    msg: format!("edge outside a {dual_count}x{primal_count} incidence"),
                });
            }
            // edges are sorted by (j, i): pushes keep j ascending per i and i ascending per j
            primal_edges[i].push(e);
            dual_edges[j].push(e);
        }
        Ok(Self {
            primal_count,
            dual_count,
            n_offsets: offsets(&n),
            p_offsets: offsets(&p),
            q_offsets: offsets(&q),
            edges,
            n,
            p,
            q,
            primal_edges,
            dual_edges,
        })
    }

    /// Builds a graph from a dense `M̄ × M` 0/1 incidence matrix.
    pub fn from_incidence(
        incidence: &[Vec<u8>],
        n: Vec<usize>,
        p: Vec<usize>,
        q: Vec<usize>,
    ) -> Result<Self> {
        let mut edges = Vec::new();
        for (j, row) in incidence.iter().enumerate() {
            if row.len() != n.len() {
                return Err(Error::Dimension(format!(
                    "incidence row {j} has {} entries, expected {}",
                    row.len(),
                    n.len()
                )));
            }
            for (i, &e) in row.iter().enumerate() {
                match e {
                    0 => {}
                    1 => edges.push((j, i)),
                    other => {
                        return Err(Error::Structural {
                            j,
                            i,
                            msg: format!("incidence entry {other} is not 0/1"),
                        })
                    }
                }
            }
        }
        if incidence.len() != p.len() {
            return Err(Error::Dimension(format!(
                "incidence has {} rows, expected {}",
                incidence.len(),
                p.len()
            )));
        }
        Self::new(edges, n, p, q)
    }

    pub fn primal_count(&self) -> usize {
        self.primal_count
    }

    pub fn dual_count(&self) -> usize {
        self.dual_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_index(&self, j: usize, i: usize) -> Option<usize> {
        self.edges.binary_search(&(j, i)).ok()
    }

    pub fn has_edge(&self, j: usize, i: usize) -> bool {
        self.edge_index(j, i).is_some()
    }

    /// Edge indices touching primal block `i`, ascending in `j`.
    pub fn primal_edges(&self, i: usize) -> &[usize] {
        &self.primal_edges[i]
    }

    /// Edge indices touching constraint block `j`, ascending in `i`.
    pub fn dual_edges(&self, j: usize) -> &[usize] {
        &self.dual_edges[j]
    }

    /// `N̄_i`: constraint blocks that involve primal block `i`.
    pub fn primal_neighbors(&self, i: usize) -> Vec<usize> {
        self.primal_edges[i].iter().map(|&e| self.edges[e].0).collect()
    }

    /// `N_j`: primal blocks that appear in constraint block `j`.
    pub fn dual_neighbors(&self, j: usize) -> Vec<usize> {
        self.dual_edges[j].iter().map(|&e| self.edges[e].1).collect()
    }

    pub fn n(&self, i: usize) -> usize {
        self.n[i]
    }

    pub fn p(&self, j: usize) -> usize {
        self.p[j]
    }

    pub fn q(&self, j: usize) -> usize {
        self.q[j]
    }

    pub fn n_sizes(&self) -> &[usize] {
        &self.n
    }

    pub fn p_sizes(&self) -> &[usize] {
        &self.p
    }

    pub fn q_sizes(&self) -> &[usize] {
        &self.q
    }

    pub fn total_n(&self) -> usize {
        self.n_offsets[self.primal_count]
    }

    pub fn total_p(&self) -> usize {
        self.p_offsets[self.dual_count]
    }

    pub fn total_q(&self) -> usize {
        self.q_offsets[self.dual_count]
    }

    pub fn n_offset(&self, i: usize) -> usize {
        self.n_offsets[i]
    }

    pub fn p_offset(&self, j: usize) -> usize {
        self.p_offsets[j]
    }

    pub fn q_offset(&self, j: usize) -> usize {
        self.q_offsets[j]
    }

    /// Sparsity measure `ω`: the largest neighborhood on either side.
    pub fn sparsity(&self) -> usize {
        let a = self.primal_edges.iter().map(Vec::len).max().unwrap_or(0);
        let b = self.dual_edges.iter().map(Vec::len).max().unwrap_or(0);
        a.max(b)
    }

    /// Dense `M̄ × M` incidence matrix.
    pub fn incidence(&self) -> Vec<Vec<u8>> {
        let mut e = vec![vec![0u8; self.primal_count]; self.dual_count];
        for &(j, i) in &self.edges {
            e[j][i] = 1;
        }
        e
    }
}

/// Neighborhood sets of a graph and its sparsity measure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighborhoods {
    /// `N̄_i` for every primal block.
    pub primal: Vec<Vec<usize>>,
    /// `N_j` for every constraint block.
    pub dual: Vec<Vec<usize>>,
    pub omega: usize,
}

pub fn neighborhoods(graph: &BipartiteGraph) -> Neighborhoods {
    Neighborhoods {
        primal: (0..graph.primal_count()).map(|i| graph.primal_neighbors(i)).collect(),
        dual: (0..graph.dual_count()).map(|j| graph.dual_neighbors(j)).collect(),
        omega: graph.sparsity(),
    }
}

/// Coupling data of one edge `(j, i)`. `None` stands for a zero block.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingBlock {
    pub eq: Option<DMatrix<f64>>,
    pub ineq: Option<DMatrix<f64>>,
}

/// The separable problem `min Σ f_i(z_i)  s.t.  Az = b, Cz ≤ c`.
///
/// Immutable once built.
#[derive(Debug, Clone)]
pub struct BlockProblem {
    graph: BipartiteGraph,
    objectives: Vec<BlockObjective>,
    /// Aligned with `graph.edges()`.
    couplings: Vec<CouplingBlock>,
    b: Vec<DVector<f64>>,
    c: Vec<DVector<f64>>,
    strict_point: Option<PrimalPoint>,
    seed: Option<u64>,
}

impl BlockProblem {
    /// Assembles a problem. `a_blocks` and `c_blocks` hold `((j, i), block)`
    /// entries; a pair that is not an edge of the graph is rejected.
    /// `b` and `c` are the flat right-hand sides.
    pub fn new(
        graph: BipartiteGraph,
        objectives: Vec<BlockObjective>,
        a_blocks: Vec<((usize, usize), DMatrix<f64>)>,
        c_blocks: Vec<((usize, usize), DMatrix<f64>)>,
        b: DVector<f64>,
        c: DVector<f64>,
        strict_point: Option<DVector<f64>>,
    ) -> Result<Self> {
        if objectives.len() != graph.primal_count() {
            return Err(Error::Dimension(format!(
                "{} objectives for {} primal blocks",
                objectives.len(),
                graph.primal_count()
            )));
        }
        for (i, obj) in objectives.iter().enumerate() {
            if obj.dim() != graph.n(i) {
                return Err(Error::InvalidObjective {
                    i,
                    msg: format!("dimension {} but n_i = {}", obj.dim(), graph.n(i)),
                });
            }
        }
        let mut couplings = vec![CouplingBlock { eq: None, ineq: None }; graph.edges().len()];
        for (blocks, is_eq) in [(a_blocks, true), (c_blocks, false)] {
            for ((j, i), m) in blocks {
                let e = graph.edge_index(j, i).ok_or_else(|| Error::Structural {
                    j,
                    i,
                    msg: "block stored for a pair with E_ji = 0".into(),
                })?;
                let rows = if is_eq { graph.p(j) } else { graph.q(j) };
                if m.nrows() != rows || m.ncols() != graph.n(i) {
                    return Err(Error::Structural {
                        j,
                        i,
                        msg: format!(
                            "{} block is {}x{}, expected {}x{}",
                            if is_eq { "A" } else { "C" },
                            m.nrows(),
                            m.ncols(),
                            rows,
                            graph.n(i)
                        ),
                    });
                }
                let slot = if is_eq { &mut couplings[e].eq } else { &mut couplings[e].ineq };
                if slot.is_some() {
                    return Err(Error::Structural { j, i, msg: "block given twice".into() });
                }
                *slot = Some(m);
            }
        }
        if b.len() != graph.total_p() {
            return Err(Error::Dimension(format!("b has length {}, expected {}", b.len(), graph.total_p())));
        }
        if c.len() != graph.total_q() {
            return Err(Error::Dimension(format!("c has length {}, expected {}", c.len(), graph.total_q())));
        }
        let b = (0..graph.dual_count())
            .map(|j| b.rows(graph.p_offset(j), graph.p(j)).into_owned())
            .collect();
        let c = (0..graph.dual_count())
            .map(|j| c.rows(graph.q_offset(j), graph.q(j)).into_owned())
            .collect();
        let strict_point = match strict_point {
            Some(z) => Some(PrimalPoint::from_flat(&graph, &z)?),
            None => None,
        };
        Ok(Self { graph, objectives, couplings, b, c, strict_point, seed: None })
    }

    /// Records the generator seed the instance came from.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    pub fn graph(&self) -> &BipartiteGraph {
        &self.graph
    }

    pub fn objectives(&self) -> &[BlockObjective] {
        &self.objectives
    }

    pub fn objective(&self, i: usize) -> &BlockObjective {
        &self.objectives[i]
    }

    /// Coupling blocks aligned with `graph().edges()`.
    pub fn couplings(&self) -> &[CouplingBlock] {
        &self.couplings
    }

    pub fn coupling(&self, j: usize, i: usize) -> Option<&CouplingBlock> {
        self.graph.edge_index(j, i).map(|e| &self.couplings[e])
    }

    pub fn b_block(&self, j: usize) -> &DVector<f64> {
        &self.b[j]
    }

    pub fn c_block(&self, j: usize) -> &DVector<f64> {
        &self.c[j]
    }

    pub fn b_flat(&self) -> DVector<f64> {
        concat(&self.b)
    }

    pub fn c_flat(&self) -> DVector<f64> {
        concat(&self.c)
    }

    pub fn strict_point(&self) -> Option<&PrimalPoint> {
        self.strict_point.as_ref()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// True when every block objective is purely quadratic (`γ_i = 0`).
    pub fn is_quadratic(&self) -> bool {
        self.objectives.iter().all(|o| o.gamma() == 0.0)
    }

    pub fn has_inequalities(&self) -> bool {
        self.graph.total_q() > 0
    }

    /// Dense equality matrix `A` (`p × n`).
    pub fn dense_eq(&self) -> DMatrix<f64> {
        let g = &self.graph;
        let mut a = DMatrix::zeros(g.total_p(), g.total_n());
        for (e, &(j, i)) in g.edges().iter().enumerate() {
            if let Some(m) = &self.couplings[e].eq {
                a.view_mut((g.p_offset(j), g.n_offset(i)), (m.nrows(), m.ncols())).copy_from(m);
            }
        }
        a
    }

    /// Dense inequality matrix `C` (`q × n`).
    pub fn dense_ineq(&self) -> DMatrix<f64> {
        let g = &self.graph;
        let mut c = DMatrix::zeros(g.total_q(), g.total_n());
        for (e, &(j, i)) in g.edges().iter().enumerate() {
            if let Some(m) = &self.couplings[e].ineq {
                c.view_mut((g.q_offset(j), g.n_offset(i)), (m.nrows(), m.ncols())).copy_from(m);
            }
        }
        c
    }
}

fn concat(blocks: &[DVector<f64>]) -> DVector<f64> {
    let len = blocks.iter().map(|v| v.len()).sum();
    let mut out = DVector::zeros(len);
    let mut at = 0;
    for v in blocks {
        out.rows_mut(at, v.len()).copy_from(v);
        at += v.len();
    }
    out
}

/// `Σ_k M_k x_k` over the given terms in iteration order, skipping zero blocks.
///
/// Every code path that forms a constraint-row sum goes through here so the
/// floating-point result does not depend on which driver computed it.
pub fn forward_accumulate<'a>(
    rows: usize,
    terms: impl IntoIterator<Item = (Option<&'a DMatrix<f64>>, &'a DVector<f64>)>,
) -> DVector<f64> {
    let mut acc = DVector::zeros(rows);
    let mut part = DVector::zeros(rows);
    for (m, x) in terms {
        if let Some(m) = m {
            // same arithmetic as `block_product` followed by an add
            part.gemv(1.0, m, x, 0.0);
            acc += &part;
        }
    }
    acc
}

/// `M x` for a single coupling block. Partial sums sent between nodes are
/// formed with this and then added in order, matching [`forward_accumulate`].
pub fn block_product(m: &DMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(m.nrows());
    out.gemv(1.0, m, x, 0.0);
    out
}

fn squared_distance(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `Σ_k M_kᵀ y_k` over the given terms in iteration order, skipping zero blocks.
pub fn adjoint_accumulate<'a>(
    cols: usize,
    terms: impl IntoIterator<Item = (Option<&'a DMatrix<f64>>, &'a DVector<f64>)>,
) -> DVector<f64> {
    let mut acc = DVector::zeros(cols);
    for (m, y) in terms {
        if let Some(m) = m {
            acc.gemv_tr(1.0, m, y, 1.0);
        }
    }
    acc
}

impl BlockProblem {
    /// `w_i = Σ_{j ∈ N̄_i} (A_jiᵀ ν_j + C_jiᵀ μ_j)`, summed in ascending `j`.
    pub fn coupling_term(&self, i: usize, lambda: &DualPoint) -> DVector<f64> {
        let edges = self.graph.primal_edges(i);
        adjoint_accumulate(
            self.graph.n(i),
            edges.iter().flat_map(|&e| {
                let j = self.graph.edges()[e].0;
                let blk = &self.couplings[e];
                [(blk.eq.as_ref(), &lambda.nu[j]), (blk.ineq.as_ref(), &lambda.mu[j])]
            }),
        )
    }

    /// Constraint residual `Gz − g` in block form, summed in ascending `i`.
    pub fn residual(&self, z: &PrimalPoint) -> DualPoint {
        let g = &self.graph;
        let mut nu = Vec::with_capacity(g.dual_count());
        let mut mu = Vec::with_capacity(g.dual_count());
        for j in 0..g.dual_count() {
            let edges = g.dual_edges(j);
            let eq = forward_accumulate(
                g.p(j),
                edges.iter().map(|&e| (self.couplings[e].eq.as_ref(), &z.0[g.edges()[e].1])),
            );
            let ineq = forward_accumulate(
                g.q(j),
                edges.iter().map(|&e| (self.couplings[e].ineq.as_ref(), &z.0[g.edges()[e].1])),
            );
            nu.push(eq - &self.b[j]);
            mu.push(ineq - &self.c[j]);
        }
        DualPoint { nu, mu }
    }
}

/// `G = [A; C]` and `g = [b; c]`. Only for testing and desk-scale reference
/// computations; the solvers never materialize these.
pub fn assemble_dense(problem: &BlockProblem) -> (DMatrix<f64>, DVector<f64>) {
    let a = problem.dense_eq();
    let c = problem.dense_ineq();
    let n = problem.graph().total_n();
    let mut g = DMatrix::zeros(a.nrows() + c.nrows(), n);
    g.rows_mut(0, a.nrows()).copy_from(&a);
    g.rows_mut(a.nrows(), c.nrows()).copy_from(&c);
    let mut rhs = DVector::zeros(a.nrows() + c.nrows());
    rhs.rows_mut(0, a.nrows()).copy_from(&problem.b_flat());
    rhs.rows_mut(a.nrows(), c.nrows()).copy_from(&problem.c_flat());
    (g, rhs)
}

/// Numerical rank with a tolerance relative to the largest singular value.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let top = sv.iter().cloned().fold(0.0, f64::max);
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * top).count()
}

/// Outcome of checking the standing assumptions on a problem.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ValidationReport {
    pub rank_a: usize,
    pub p: usize,
    pub full_row_rank: bool,
    /// `None` when the problem carries no witness point.
    pub strict_feasible: Option<bool>,
    pub strongly_convex: bool,
    pub sigma_min: f64,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.full_row_rank && self.strongly_convex && self.strict_feasible != Some(false)
    }
}

/// Checks full row rank of `A`, the strict-feasibility witness (if any),
/// and positivity of every `σ_i`.
pub fn validate(problem: &BlockProblem) -> ValidationReport {
    let a = problem.dense_eq();
    let p = a.nrows();
    let rank_a = numerical_rank(&a, RANK_TOLERANCE);
    let strict_feasible = problem.strict_point().map(|z| {
        let zf = z.to_flat();
        let eq_ok = p == 0 || (&a * &zf - problem.b_flat()).amax() <= STRICT_EQ_TOLERANCE;
        let c = problem.dense_ineq();
        let ineq_ok = c.nrows() == 0
            || (&c * &zf - problem.c_flat()).iter().all(|&r| r <= -STRICT_INEQ_MARGIN);
        eq_ok && ineq_ok
    });
    let sigma_min = problem
        .objectives()
        .iter()
        .map(|o| o.sigma())
        .fold(f64::INFINITY, f64::min);
    ValidationReport {
        rank_a,
        p,
        full_row_rank: rank_a == p,
        strict_feasible,
        strongly_convex: sigma_min > 0.0,
        sigma_min,
    }
}

/// A primal point, one vector per primal block.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalPoint(pub Vec<DVector<f64>>);

impl PrimalPoint {
    pub fn zeros(graph: &BipartiteGraph) -> Self {
        Self(graph.n_sizes().iter().map(|&n| DVector::zeros(n)).collect())
    }

    pub fn from_flat(graph: &BipartiteGraph, z: &DVector<f64>) -> Result<Self> {
        if z.len() != graph.total_n() {
            return Err(Error::Dimension(format!(
                "primal vector has length {}, expected {}",
                z.len(),
                graph.total_n()
            )));
        }
        Ok(Self(
            (0..graph.primal_count())
                .map(|i| z.rows(graph.n_offset(i), graph.n(i)).into_owned())
                .collect(),
        ))
    }

    pub fn to_flat(&self) -> DVector<f64> {
        concat(&self.0)
    }

    pub fn block(&self, i: usize) -> &DVector<f64> {
        &self.0[i]
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    pub fn matches(&self, graph: &BipartiteGraph) -> bool {
        self.0.len() == graph.primal_count()
            && self.0.iter().enumerate().all(|(i, v)| v.len() == graph.n(i))
    }
}

/// Multipliers `λ = (ν, μ)`, one `(ν_j, μ_j)` pair per constraint block.
///
/// The same shape is used for dual gradients, which need not lie in `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPoint {
    pub nu: Vec<DVector<f64>>,
    pub mu: Vec<DVector<f64>>,
}

impl DualPoint {
    pub fn zeros(graph: &BipartiteGraph) -> Self {
        Self {
            nu: graph.p_sizes().iter().map(|&p| DVector::zeros(p)).collect(),
            mu: graph.q_sizes().iter().map(|&q| DVector::zeros(q)).collect(),
        }
    }

    /// Splits a flat `[ν; μ]` vector.
    pub fn from_flat(graph: &BipartiteGraph, v: &DVector<f64>) -> Result<Self> {
        let p = graph.total_p();
        if v.len() != p + graph.total_q() {
            return Err(Error::Dimension(format!(
                "dual vector has length {}, expected {}",
                v.len(),
                p + graph.total_q()
            )));
        }
        Ok(Self {
            nu: (0..graph.dual_count())
                .map(|j| v.rows(graph.p_offset(j), graph.p(j)).into_owned())
                .collect(),
            mu: (0..graph.dual_count())
                .map(|j| v.rows(p + graph.q_offset(j), graph.q(j)).into_owned())
                .collect(),
        })
    }

    /// Flat `[ν; μ]`, matching the row order of [`assemble_dense`].
    pub fn to_flat(&self) -> DVector<f64> {
        let p: usize = self.nu.iter().map(|v| v.len()).sum();
        let mut out = DVector::zeros(p + self.mu.iter().map(|v| v.len()).sum::<usize>());
        out.rows_mut(0, p).copy_from(&concat(&self.nu));
        let rest = out.len() - p;
        out.rows_mut(p, rest).copy_from(&concat(&self.mu));
        out
    }

    pub fn block_count(&self) -> usize {
        self.nu.len()
    }

    pub fn matches(&self, graph: &BipartiteGraph) -> bool {
        self.nu.len() == graph.dual_count()
            && self.mu.len() == graph.dual_count()
            && (0..graph.dual_count())
                .all(|j| self.nu[j].len() == graph.p(j) && self.mu[j].len() == graph.q(j))
    }

    /// Membership in `D = R^p × R^q_+`.
    pub fn in_domain(&self) -> bool {
        self.mu.iter().all(|m| m.iter().all(|&x| x >= 0.0))
    }

    fn zip_with(&self, other: &Self, f: impl Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64>) -> Self {
        Self {
            nu: self.nu.iter().zip(&other.nu).map(|(a, b)| f(a, b)).collect(),
            mu: self.mu.iter().zip(&other.mu).map(|(a, b)| f(a, b)).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            nu: self.nu.iter().map(|v| v * s).collect(),
            mu: self.mu.iter().map(|v| v * s).collect(),
        }
    }

    pub fn dot(&self, other: &Self) -> f64 {
        let a: f64 = self.nu.iter().zip(&other.nu).map(|(a, b)| a.dot(b)).sum();
        let b: f64 = self.mu.iter().zip(&other.mu).map(|(a, b)| a.dot(b)).sum();
        a + b
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// `‖λ‖_W`.
    pub fn norm_w(&self, w: &Weights) -> f64 {
        let mut s = 0.0;
        for j in 0..self.nu.len() {
            s += w.block(j) * (self.nu[j].norm_squared() + self.mu[j].norm_squared());
        }
        s.sqrt()
    }

    /// `‖λ − other‖_W` without forming the difference.
    pub fn distance_w(&self, other: &Self, w: &Weights) -> f64 {
        let mut s = 0.0;
        for j in 0..self.nu.len() {
            s += w.block(j) * (squared_distance(&self.nu[j], &other.nu[j]) + squared_distance(&self.mu[j], &other.mu[j]));
        }
        s.sqrt()
    }

    /// `‖λ‖_{W⁻¹}`.
    pub fn norm_w_inv(&self, w: &Weights) -> f64 {
        let mut s = 0.0;
        for j in 0..self.nu.len() {
            s += (self.nu[j].norm_squared() + self.mu[j].norm_squared()) / w.block(j);
        }
        s.sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.nu
            .iter()
            .chain(&self.mu)
            .map(|v| v.amax())
            .fold(0.0, f64::max)
    }
}
