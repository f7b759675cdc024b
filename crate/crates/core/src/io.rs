//! JSON file formats for problems, reference solutions and networked systems,
//! plus the trace CSV. Matrices are stored as arrays of rows; all indices are
//! zero-based.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dmpc::{ConstraintCoupling, DynamicsCoupling, NetworkedSystem, Subsystem, TerminalBox};
use crate::dual::TraceRow;
use crate::error::{Error, Result};
use crate::model::{BipartiteGraph, BlockProblem, DualPoint, PrimalPoint};
use crate::oracles::BlockObjective;
use crate::reference::{RefQuality, RefSolution};

pub const PROBLEM_FORMAT: &str = "dualgrad-problem/1";
pub const REFERENCE_FORMAT: &str = "dualgrad-reference/1";
pub const TRACE_HEADER: &str = "k,dual,f,dual_subopt,primal_subopt,infeas_w,dist_z,step_w,prox_w";

type Rows = Vec<Vec<f64>>;

fn mat_to_rows(m: &DMatrix<f64>) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn rows_to_mat(rows: &Rows, expect_cols: Option<usize>, what: &str) -> Result<DMatrix<f64>> {
    let cols = rows.first().map_or(expect_cols.unwrap_or(0), Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Format(format!("{what}: ragged matrix rows")));
    }
    if let Some(c) = expect_cols {
        if !rows.is_empty() && c != cols {
            return Err(Error::Format(format!("{what}: {cols} columns, expected {c}")));
        }
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |r, c| rows[r][c]))
}

fn vec_of(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockFile {
    pub hessian: Rows,
    pub linear: Vec<f64>,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default)]
    pub direction: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstraintFile {
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CouplingFile {
    pub j: usize,
    pub i: usize,
    #[serde(default)]
    pub eq: Option<Rows>,
    #[serde(default)]
    pub ineq: Option<Rows>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemFile {
    pub format: String,
    #[serde(default)]
    pub seed: Option<u64>,
    pub blocks: Vec<BlockFile>,
    pub constraints: Vec<ConstraintFile>,
    pub couplings: Vec<CouplingFile>,
    #[serde(default)]
    pub strict_point: Option<Vec<f64>>,
}

impl ProblemFile {
    pub fn from_problem(problem: &BlockProblem) -> Self {
        let g = problem.graph();
        let blocks = problem
            .objectives()
            .iter()
            .map(|o| BlockFile {
                hessian: mat_to_rows(o.hessian()),
                linear: vec_of(o.linear()),
                gamma: o.gamma(),
                direction: (o.gamma() != 0.0).then(|| vec_of(o.direction())),
            })
            .collect();
        let constraints = (0..g.dual_count())
            .map(|j| ConstraintFile { b: vec_of(problem.b_block(j)), c: vec_of(problem.c_block(j)) })
            .collect();
        let couplings = g
            .edges()
            .iter()
            .zip(problem.couplings())
            .map(|(&(j, i), blk)| CouplingFile {
                j,
                i,
                eq: blk.eq.as_ref().map(mat_to_rows),
                ineq: blk.ineq.as_ref().map(mat_to_rows),
            })
            .collect();
        Self {
            format: PROBLEM_FORMAT.into(),
            seed: problem.seed(),
            blocks,
            constraints,
            couplings,
            strict_point: problem.strict_point().map(|z| vec_of(&z.to_flat())),
        }
    }

    pub fn into_problem(self) -> Result<BlockProblem> {
        if self.format != PROBLEM_FORMAT {
            return Err(Error::Format(format!("unknown problem format {:?}", self.format)));
        }
        let n_sizes: Vec<usize> = self.blocks.iter().map(|b| b.linear.len()).collect();
        let p_sizes: Vec<usize> = self.constraints.iter().map(|c| c.b.len()).collect();
        let q_sizes: Vec<usize> = self.constraints.iter().map(|c| c.c.len()).collect();
        let graph = BipartiteGraph::new(
            self.couplings.iter().map(|c| (c.j, c.i)),
            n_sizes.clone(),
            p_sizes,
            q_sizes,
        )?;
        let mut objectives = Vec::with_capacity(self.blocks.len());
        for (i, b) in self.blocks.into_iter().enumerate() {
            let n = n_sizes[i];
            let hess = rows_to_mat(&b.hessian, Some(n), &format!("block {i} hessian"))?;
            let dir = DVector::from_vec(b.direction.unwrap_or_else(|| vec![0.0; n]));
            let obj = BlockObjective::new(hess, DVector::from_vec(b.linear), b.gamma, dir).map_err(|e| match e {
                Error::InvalidObjective { msg, .. } => Error::InvalidObjective { i, msg },
                other => other,
            })?;
            objectives.push(obj);
        }
        let mut a_blocks = Vec::new();
        let mut c_blocks = Vec::new();
        for cp in &self.couplings {
            let cols = n_sizes.get(cp.i).copied();
            if let Some(eq) = &cp.eq {
                a_blocks.push(((cp.j, cp.i), rows_to_mat(eq, cols, &format!("A[{}][{}]", cp.j, cp.i))?));
            }
            if let Some(ineq) = &cp.ineq {
                c_blocks.push(((cp.j, cp.i), rows_to_mat(ineq, cols, &format!("C[{}][{}]", cp.j, cp.i))?));
            }
        }
        let b = DVector::from_iterator(graph.total_p(), self.constraints.iter().flat_map(|c| c.b.iter().copied()));
        let c = DVector::from_iterator(graph.total_q(), self.constraints.iter().flat_map(|c| c.c.iter().copied()));
        let strict = self.strict_point.map(DVector::from_vec);
        Ok(BlockProblem::new(graph, objectives, a_blocks, c_blocks, b, c, strict)?.with_seed(self.seed))
    }
}

pub fn problem_to_json(problem: &BlockProblem) -> Result<String> {
    Ok(serde_json::to_string_pretty(&ProblemFile::from_problem(problem))?)
}

pub fn problem_from_json(text: &str) -> Result<BlockProblem> {
    serde_json::from_str::<ProblemFile>(text)?.into_problem()
}

pub fn save_problem(problem: &BlockProblem, path: &Path) -> Result<()> {
    let mut text = problem_to_json(problem)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn load_problem(path: &Path) -> Result<BlockProblem> {
    problem_from_json(&fs::read_to_string(path)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DualFile {
    pub nu: Rows,
    pub mu: Rows,
}

impl DualFile {
    pub fn from_point(l: &DualPoint) -> Self {
        Self { nu: l.nu.iter().map(vec_of).collect(), mu: l.mu.iter().map(vec_of).collect() }
    }

    pub fn into_point(self) -> DualPoint {
        DualPoint {
            nu: self.nu.into_iter().map(DVector::from_vec).collect(),
            mu: self.mu.into_iter().map(DVector::from_vec).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceFile {
    pub format: String,
    /// SHA-256 of the problem file the reference was computed for.
    #[serde(default)]
    pub problem_sha256: Option<String>,
    pub z_star: Rows,
    pub f_star: f64,
    pub lambda_ref: DualFile,
    pub quality: RefQuality,
}

impl ReferenceFile {
    pub fn from_solution(r: &RefSolution, problem_sha256: Option<String>) -> Self {
        Self {
            format: REFERENCE_FORMAT.into(),
            problem_sha256,
            z_star: r.z_star.0.iter().map(vec_of).collect(),
            f_star: r.f_star,
            lambda_ref: DualFile::from_point(&r.lambda_ref),
            quality: r.quality,
        }
    }

    /// Converts back, checking the shapes against `problem`.
    pub fn into_solution(self, problem: &BlockProblem) -> Result<RefSolution> {
        if self.format != REFERENCE_FORMAT {
            return Err(Error::Format(format!("unknown reference format {:?}", self.format)));
        }
        let z = PrimalPoint(self.z_star.into_iter().map(DVector::from_vec).collect());
        let l = self.lambda_ref.into_point();
        if !z.matches(problem.graph()) || !l.matches(problem.graph()) {
            return Err(Error::Format("reference does not match the problem dimensions".into()));
        }
        Ok(RefSolution { z_star: z, f_star: self.f_star, lambda_ref: l, quality: self.quality })
    }
}

pub fn save_reference(r: &RefSolution, problem_sha256: Option<String>, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(&ReferenceFile::from_solution(r, problem_sha256))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn load_reference(path: &Path, problem: &BlockProblem) -> Result<RefSolution> {
    serde_json::from_str::<ReferenceFile>(&fs::read_to_string(path)?)?.into_solution(problem)
}

/// Cache location for the reference of a problem file with the given content hash.
pub fn reference_cache_path(problem_path: &Path, sha256_hex: &str) -> PathBuf {
    let mut name = problem_path.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(format!(".ref-{}.json", &sha256_hex[..sha256_hex.len().min(16)]));
    problem_path.with_file_name(name)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DynamicsFile {
    pub from: usize,
    pub state: Rows,
    pub input: Rows,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TerminalFile {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubsystemFile {
    pub nx: usize,
    pub nu: usize,
    #[serde(default)]
    pub dynamics: Vec<DynamicsFile>,
    #[serde(default)]
    pub constraints: Vec<DynamicsFile>,
    #[serde(default)]
    pub bound: Vec<f64>,
    pub state_weight: Rows,
    pub input_weight: Rows,
    pub terminal_weight: Rows,
    #[serde(default)]
    pub terminal: Option<TerminalFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemFile {
    #[serde(default)]
    pub horizon: Option<usize>,
    pub adjacency: Vec<Vec<u8>>,
    pub initial_state: Rows,
    pub subsystems: Vec<SubsystemFile>,
}

impl SystemFile {
    pub fn from_system(sys: &NetworkedSystem) -> Self {
        let coup = |from: usize, s: &DMatrix<f64>, u: &DMatrix<f64>| DynamicsFile {
            from,
            state: mat_to_rows(s),
            input: mat_to_rows(u),
        };
        Self {
            horizon: Some(sys.horizon),
            adjacency: sys.adjacency.clone(),
            initial_state: sys.initial_state.iter().map(vec_of).collect(),
            subsystems: sys
                .subsystems
                .iter()
                .map(|s| SubsystemFile {
                    nx: s.nx,
                    nu: s.nu,
                    dynamics: s.dynamics.iter().map(|d| coup(d.from, &d.state, &d.input)).collect(),
                    constraints: s.constraints.iter().map(|c| coup(c.from, &c.state, &c.input)).collect(),
                    bound: vec_of(&s.bound),
                    state_weight: mat_to_rows(&s.state_weight),
                    input_weight: mat_to_rows(&s.input_weight),
                    terminal_weight: mat_to_rows(&s.terminal_weight),
                    terminal: s.terminal.as_ref().map(|t| TerminalFile { lower: vec_of(&t.lower), upper: vec_of(&t.upper) }),
                })
                .collect(),
        }
    }

    /// `horizon` overrides the value stored in the file.
    pub fn into_system(self, horizon: Option<usize>) -> Result<NetworkedSystem> {
        let horizon = horizon
            .or(self.horizon)
            .ok_or_else(|| Error::Format("no horizon given in the file or on the command line".into()))?;
        let dims: Vec<(usize, usize)> = self.subsystems.iter().map(|s| (s.nx, s.nu)).collect();
        let cols = |from: usize, pick: fn((usize, usize)) -> usize| dims.get(from).map(|&d| pick(d));
        let mut subsystems = Vec::with_capacity(self.subsystems.len());
        for (j, s) in self.subsystems.into_iter().enumerate() {
            let mat = |rows: &Rows, c: Option<usize>, what: &str| rows_to_mat(rows, c, &format!("subsystem {j} {what}"));
            let mut dynamics = Vec::new();
            for d in &s.dynamics {
                dynamics.push(DynamicsCoupling {
                    from: d.from,
                    state: mat(&d.state, cols(d.from, |d| d.0), "A")?,
                    input: mat(&d.input, cols(d.from, |d| d.1), "B")?,
                });
            }
            let mut constraints = Vec::new();
            for c in &s.constraints {
                constraints.push(ConstraintCoupling {
                    from: c.from,
                    state: mat(&c.state, cols(c.from, |d| d.0), "Cx")?,
                    input: mat(&c.input, cols(c.from, |d| d.1), "Cu")?,
                });
            }
            subsystems.push(Subsystem {
                nx: s.nx,
                nu: s.nu,
                dynamics,
                constraints,
                bound: DVector::from_vec(s.bound),
                state_weight: mat(&s.state_weight, Some(s.nx), "Q")?,
                input_weight: mat(&s.input_weight, Some(s.nu), "R")?,
                terminal_weight: mat(&s.terminal_weight, Some(s.nx), "P")?,
                terminal: s.terminal.map(|t| TerminalBox { lower: DVector::from_vec(t.lower), upper: DVector::from_vec(t.upper) }),
            });
        }
        Ok(NetworkedSystem {
            subsystems,
            adjacency: self.adjacency,
            horizon,
            initial_state: self.initial_state.into_iter().map(DVector::from_vec).collect(),
        })
    }
}

pub fn load_system(path: &Path, horizon: Option<usize>) -> Result<NetworkedSystem> {
    serde_json::from_str::<SystemFile>(&fs::read_to_string(path)?)?.into_system(horizon)
}

pub fn system_to_json(sys: &NetworkedSystem) -> Result<String> {
    Ok(serde_json::to_string_pretty(&SystemFile::from_system(sys))?)
}

/// Trace rows as CSV with [`TRACE_HEADER`]; floats use shortest round-trip
/// scientific notation, and missing reference metrics are written as `NaN`.
pub fn trace_to_csv(rows: &[TraceRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}\n",
            r.k, r.dual, r.f, r.dual_subopt, r.primal_subopt, r.infeas_w, r.dist_z, r.step_w, r.prox_w
        ));
    }
    out
}

/// Parses a trace CSV. The reference distance is not part of the file and
/// comes back as NaN.
pub fn trace_from_csv(text: &str) -> Result<Vec<TraceRow>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(TRACE_HEADER) {
        return Err(Error::Format("trace CSV header mismatch".into()));
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(Error::Format(format!("trace line {}: expected 9 fields", n + 2)));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::Format(format!("trace line {}: {e}", n + 2)));
        rows.push(TraceRow {
            k: fields[0].trim().parse().map_err(|e| Error::Format(format!("trace line {}: {e}", n + 2)))?,
            dual: num(fields[1])?,
            f: num(fields[2])?,
            dual_subopt: num(fields[3])?,
            primal_subopt: num(fields[4])?,
            infeas_w: num(fields[5])?,
            dist_z: num(fields[6])?,
            step_w: num(fields[7])?,
            prox_w: num(fields[8])?,
            dist_lambda_w: f64::NAN,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen::generate;

    #[test]
    fn problem_round_trip_is_exact() {
        let p = generate(5, 3, 2, true, 4).unwrap();
        let text = problem_to_json(&p).unwrap();
        let q = problem_from_json(&text).unwrap();
        assert_eq!(p.dense_eq(), q.dense_eq());
        assert_eq!(p.dense_ineq(), q.dense_ineq());
        assert_eq!(p.b_flat(), q.b_flat());
        assert_eq!(p.c_flat(), q.c_flat());
        assert_eq!(p.seed(), q.seed());
        for (a, b) in p.objectives().iter().zip(q.objectives()) {
            assert_eq!(a.hessian(), b.hessian());
            assert_eq!(a.direction(), b.direction());
            assert_eq!(a.gamma(), b.gamma());
        }
        assert_eq!(problem_to_json(&q).unwrap(), text);
    }

    #[test]
    fn wrong_format_tag_is_rejected() {
        let p = generate(2, 1, 1, false, 0).unwrap();
        let text = problem_to_json(&p).unwrap().replace(PROBLEM_FORMAT, "other/9");
        assert!(matches!(problem_from_json(&text), Err(Error::Format(_))));
    }

    #[test]
    fn trace_csv_round_trip() {
        let rows = vec![TraceRow {
            k: 3,
            dual: -0.1,
            f: 1e-20,
            dual_subopt: f64::NAN,
            primal_subopt: 2.5,
            infeas_w: 0.0,
            dist_z: 1.0 / 3.0,
            step_w: 7.0,
            prox_w: 7.0,
            dist_lambda_w: f64::NAN,
        }];
        let text = trace_to_csv(&rows);
        assert!(text.starts_with("k,dual,f,dual_subopt,primal_subopt,infeas_w,dist_z,step_w,prox_w\n3,"));
        let back = trace_from_csv(&text).unwrap();
        assert_eq!(back[0].dist_z, rows[0].dist_z);
        assert_eq!(back[0].f, 1e-20);
        assert!(back[0].dual_subopt.is_nan());
    }

    #[test]
    fn cache_path_sits_beside_problem() {
        let p = reference_cache_path(Path::new("/tmp/x/p.json"), "abcdef0123456789ffff");
        assert_eq!(p, PathBuf::from("/tmp/x/p.json.ref-abcdef0123456789.json"));
    }

    #[test]
    fn system_round_trip() {
        let sys = crate::dmpc::random_system(3, 2, 1, 2, 4, 5).unwrap();
        let text = system_to_json(&sys).unwrap();
        let back = serde_json::from_str::<SystemFile>(&text).unwrap().into_system(None).unwrap();
        assert_eq!(back, sys);
    }
}
