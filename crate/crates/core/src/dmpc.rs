//! Finite-horizon control of coupled linear subsystems as a block problem.
//!
//! Subsystem `j` follows `x_j(t+1) = Σ_{i ∈ N_j} Ā_ji x_i(t) + B̄_ji u_i(t)`
//! and must satisfy `Σ_{i ∈ N_j} C̄_ji x_i(t) + C̃_ji u_i(t) ≤ c_j` for
//! `t = 0, …, N−1`. The decision vector of subsystem `i` interleaves inputs
//! and states: `z_i = [u_i(0), x_i(1), u_i(1), x_i(2), …, u_i(N−1), x_i(N)]`.
//! Terms involving the known initial state are moved to the right-hand side.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Uniform;

use crate::error::{Error, Result};
use crate::model::{BipartiteGraph, BlockProblem, DualPoint, PrimalPoint};
use crate::oracles::BlockObjective;

/// Dynamics contribution of subsystem `from` to the owner's next state.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsCoupling {
    pub from: usize,
    /// `Ā` (`n_x,owner × n_x,from`).
    pub state: DMatrix<f64>,
    /// `B̄` (`n_x,owner × n_u,from`).
    pub input: DMatrix<f64>,
}

/// Contribution of subsystem `from` to the owner's constraint rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintCoupling {
    pub from: usize,
    /// `C̄` (`r_owner × n_x,from`).
    pub state: DMatrix<f64>,
    /// `C̃` (`r_owner × n_u,from`).
    pub input: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerminalBox {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subsystem {
    pub nx: usize,
    pub nu: usize,
    pub dynamics: Vec<DynamicsCoupling>,
    pub constraints: Vec<ConstraintCoupling>,
    /// `c_j`, one entry per constraint row.
    pub bound: DVector<f64>,
    pub state_weight: DMatrix<f64>,
    pub input_weight: DMatrix<f64>,
    pub terminal_weight: DMatrix<f64>,
    pub terminal: Option<TerminalBox>,
}

impl Subsystem {
    pub fn constraint_rows(&self) -> usize {
        self.bound.len()
    }

    fn stage_dim(&self) -> usize {
        self.nx + self.nu
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkedSystem {
    pub subsystems: Vec<Subsystem>,
    /// `adjacency[j][i] = 1` when subsystem `i` affects subsystem `j`.
    pub adjacency: Vec<Vec<u8>>,
    pub horizon: usize,
    pub initial_state: Vec<DVector<f64>>,
}

fn structural(j: usize, i: usize, t: Option<usize>, msg: impl Into<String>) -> Error {
    let msg = msg.into();
    Error::Structural {
        j,
        i,
        msg: match t {
            Some(t) => format!("t={t}: {msg}"),
            None => msg,
        },
    }
}

fn check_shape(m: &DMatrix<f64>, rows: usize, cols: usize, j: usize, i: usize, what: &str) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(structural(
            j,
            i,
            Some(0),
            format!("{what} is {}x{}, expected {rows}x{cols}", m.nrows(), m.ncols()),
        ));
    }
    Ok(())
}

impl NetworkedSystem {
    pub fn validate(&self) -> Result<()> {
        let m = self.subsystems.len();
        if m == 0 || self.horizon == 0 {
            return Err(Error::Dimension("need at least one subsystem and horizon >= 1".into()));
        }
        if self.adjacency.len() != m || self.adjacency.iter().any(|r| r.len() != m) {
            return Err(Error::Dimension(format!("adjacency must be {m}x{m}")));
        }
        if self.initial_state.len() != m {
            return Err(Error::Dimension(format!("{} initial states for {m} subsystems", self.initial_state.len())));
        }
        for (j, s) in self.subsystems.iter().enumerate() {
            if self.adjacency[j][j] == 0 {
                return Err(structural(j, j, None, "a subsystem must be its own neighbor"));
            }
            if self.initial_state[j].len() != s.nx {
                return Err(structural(j, j, Some(0), "initial state has the wrong length"));
            }
            for d in &s.dynamics {
                if d.from >= m || self.adjacency[j][d.from] == 0 {
                    return Err(structural(j, d.from, None, "dynamics coupling outside the neighborhood"));
                }
                let f = &self.subsystems[d.from];
                check_shape(&d.state, s.nx, f.nx, j, d.from, "state dynamics block")?;
                check_shape(&d.input, s.nx, f.nu, j, d.from, "input dynamics block")?;
            }
            for c in &s.constraints {
                if c.from >= m || self.adjacency[j][c.from] == 0 {
                    return Err(structural(j, c.from, None, "constraint coupling outside the neighborhood"));
                }
                let f = &self.subsystems[c.from];
                check_shape(&c.state, s.constraint_rows(), f.nx, j, c.from, "state constraint block")?;
                check_shape(&c.input, s.constraint_rows(), f.nu, j, c.from, "input constraint block")?;
            }
            for (w, dim, name) in [
                (&s.state_weight, s.nx, "state weight"),
                (&s.input_weight, s.nu, "input weight"),
                (&s.terminal_weight, s.nx, "terminal weight"),
            ] {
                check_shape(w, dim, dim, j, j, name)?;
            }
            if let Some(tb) = &s.terminal {
                if tb.lower.len() != s.nx || tb.upper.len() != s.nx {
                    return Err(structural(j, j, Some(self.horizon), "terminal box has the wrong length"));
                }
            }
        }
        Ok(())
    }
}

/// Column offset of `u_i(t)` inside `z_i`.
fn input_col(s: &Subsystem, t: usize) -> usize {
    t * s.stage_dim()
}

/// Column offset of `x_i(t)`, `t ≥ 1`, inside `z_i`.
fn state_col(s: &Subsystem, t: usize) -> usize {
    (t - 1) * s.stage_dim() + s.nu
}

/// Builds the block problem. Rows of block `j` are ordered by time step;
/// dynamics give the equality rows, the coupled constraints (and an optional
/// terminal box) the inequality rows.
pub fn build_problem(system: &NetworkedSystem) -> Result<BlockProblem> {
    system.validate()?;
    let subs = &system.subsystems;
    let m = subs.len();
    let horizon = system.horizon;

    let mut edges = Vec::new();
    for j in 0..m {
        for i in 0..m {
            if system.adjacency[j][i] != 0 {
                edges.push((j, i));
            }
        }
    }
    let n_sizes: Vec<usize> = subs.iter().map(|s| horizon * s.stage_dim()).collect();
    let p_sizes: Vec<usize> = subs.iter().map(|s| horizon * s.nx).collect();
    let q_sizes: Vec<usize> = subs
        .iter()
        .map(|s| horizon * s.constraint_rows() + if s.terminal.is_some() { 2 * s.nx } else { 0 })
        .collect();
    let graph = BipartiteGraph::new(edges.iter().copied(), n_sizes.clone(), p_sizes.clone(), q_sizes.clone())?;

    let mut objectives = Vec::with_capacity(m);
    for (i, s) in subs.iter().enumerate() {
        let mut hess = DMatrix::zeros(n_sizes[i], n_sizes[i]);
        for t in 0..horizon {
            let u = input_col(s, t);
            hess.view_mut((u, u), (s.nu, s.nu)).copy_from(&s.input_weight);
            let x = state_col(s, t + 1);
            let w = if t + 1 == horizon { &s.terminal_weight } else { &s.state_weight };
            hess.view_mut((x, x), (s.nx, s.nx)).copy_from(w);
        }
        let obj = BlockObjective::quadratic(hess, DVector::zeros(n_sizes[i])).map_err(|e| match e {
            Error::InvalidObjective { msg, .. } => Error::InvalidObjective { i, msg },
            other => other,
        })?;
        objectives.push(obj);
    }

    let mut a_blocks = Vec::with_capacity(edges.len());
    let mut c_blocks = Vec::with_capacity(edges.len());
    let mut b = DVector::zeros(graph.total_p());
    let mut c = DVector::zeros(graph.total_q());
    for (j, s) in subs.iter().enumerate() {
        let r = s.constraint_rows();
        for t in 0..horizon {
            let rows = graph.p_offset(j) + t * s.nx;
            let mut target = b.rows_mut(rows, s.nx);
            for d in s.dynamics.iter().filter(|_| t == 0) {
                target.gemv(1.0, &d.state, &system.initial_state[d.from], 1.0);
            }
            let crow = graph.q_offset(j) + t * r;
            let mut bound = c.rows_mut(crow, r);
            bound.copy_from(&s.bound);
            for k in s.constraints.iter().filter(|_| t == 0) {
                bound.gemv(-1.0, &k.state, &system.initial_state[k.from], 1.0);
            }
        }
        if let Some(tb) = &s.terminal {
            let off = graph.q_offset(j) + horizon * r;
            c.rows_mut(off, s.nx).copy_from(&tb.upper);
            c.rows_mut(off + s.nx, s.nx).copy_from(&(-&tb.lower));
        }
    }

    for &(j, i) in &edges {
        let (sj, si) = (&subs[j], &subs[i]);
        let mut a = DMatrix::zeros(p_sizes[j], n_sizes[i]);
        let mut cm = DMatrix::zeros(q_sizes[j], n_sizes[i]);
        let dyn_terms: Vec<&DynamicsCoupling> = sj.dynamics.iter().filter(|d| d.from == i).collect();
        let con_terms: Vec<&ConstraintCoupling> = sj.constraints.iter().filter(|k| k.from == i).collect();
        let r = sj.constraint_rows();
        for t in 0..horizon {
            let row = t * sj.nx;
            if i == j {
                let x = state_col(si, t + 1);
                for k in 0..sj.nx {
                    a[(row + k, x + k)] += 1.0;
                }
            }
            for d in &dyn_terms {
                let u = input_col(si, t);
                let mut blk = a.view_mut((row, u), (sj.nx, si.nu));
                blk -= &d.input;
                if t > 0 {
                    let x = state_col(si, t);
                    let mut blk = a.view_mut((row, x), (sj.nx, si.nx));
                    blk -= &d.state;
                }
            }
            let crow = t * r;
            for k in &con_terms {
                let u = input_col(si, t);
                let mut blk = cm.view_mut((crow, u), (r, si.nu));
                blk += &k.input;
                if t > 0 {
                    let x = state_col(si, t);
                    let mut blk = cm.view_mut((crow, x), (r, si.nx));
                    blk += &k.state;
                }
            }
        }
        if i == j && sj.terminal.is_some() {
            let off = horizon * r;
            let x = state_col(si, horizon);
            for k in 0..sj.nx {
                cm[(off + k, x + k)] = 1.0;
                cm[(off + sj.nx + k, x + k)] = -1.0;
            }
        }
        a_blocks.push(((j, i), a));
        if q_sizes[j] > 0 {
            c_blocks.push(((j, i), cm));
        }
    }

    BlockProblem::new(graph, objectives, a_blocks, c_blocks, b, c, None)
}

/// `z_i = −Q_i⁻¹ (q_i + Σ_{j ∈ N̄_i} A_jiᵀ ν_j + C_jiᵀ μ_j)` for every block.
pub fn closed_form_check(problem: &BlockProblem, lambda: &DualPoint) -> Result<PrimalPoint> {
    if !problem.is_quadratic() {
        return Err(Error::Unsupported("closed form needs gamma = 0".into()));
    }
    let z = (0..problem.graph().primal_count())
        .map(|i| {
            let obj = problem.objective(i);
            let w = problem.coupling_term(i, lambda);
            -obj.solve_hessian(&(obj.linear() + w))
        })
        .collect();
    Ok(PrimalPoint(z))
}

/// A seeded ring of `m` subsystems; subsystem `j` is driven by itself and the
/// next `omega − 1` subsystems around the ring. Every subsystem has `r = n_u`
/// coupled constraint rows with a generous bound, so the origin trajectory
/// neighborhood stays feasible.
pub fn random_system(m: usize, nx: usize, nu: usize, omega: usize, horizon: usize, seed: u64) -> Result<NetworkedSystem> {
    if omega == 0 || omega > m {
        return Err(Error::Generation(format!("omega must lie in [1, {m}], got {omega}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let small = Uniform::new_inclusive(-0.3, 0.3).map_err(|e| Error::Generation(e.to_string()))?;
    let unit = Uniform::new_inclusive(-1.0, 1.0).map_err(|e| Error::Generation(e.to_string()))?;
    let mut adjacency = vec![vec![0u8; m]; m];
    let mut subsystems = Vec::with_capacity(m);
    for (j, links) in adjacency.iter_mut().enumerate() {
        let mut dynamics = Vec::new();
        let mut constraints = Vec::new();
        for s in 0..omega {
            let i = (j + s) % m;
            links[i] = 1;
            let mut state = DMatrix::from_fn(nx, nx, |_, _| rng.sample(small));
            if i == j {
                for k in 0..nx {
                    state[(k, k)] += 0.9;
                }
            }
            dynamics.push(DynamicsCoupling {
                from: i,
                state,
                input: DMatrix::from_fn(nx, nu, |_, _| rng.sample(unit)),
            });
            constraints.push(ConstraintCoupling {
                from: i,
                state: DMatrix::from_fn(nu, nx, |_, _| rng.sample(small)),
                input: DMatrix::from_fn(nu, nu, |_, _| rng.sample(small)),
            });
        }
        subsystems.push(Subsystem {
            nx,
            nu,
            dynamics,
            constraints,
            bound: DVector::from_element(nu, 5.0),
            state_weight: DMatrix::identity(nx, nx),
            input_weight: DMatrix::identity(nu, nu) * 0.5,
            terminal_weight: DMatrix::identity(nx, nx) * 2.0,
            terminal: None,
        });
    }
    let initial_state = (0..m).map(|_| DVector::from_fn(nx, |_, _| rng.sample(unit))).collect();
    Ok(NetworkedSystem { subsystems, adjacency, horizon, initial_state })
}
