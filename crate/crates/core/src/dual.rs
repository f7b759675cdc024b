//! Dual function, projected gradient steps, and the iteration drivers.
//!
//! The weighted step `λ⁺ = [λ + W⁻¹∇d(λ)]_D` with diagonal `W` is computed
//! one constraint block at a time by [`update_dual_block`]; the centralized
//! baseline is the same step with `W = L_d I`.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BlockProblem, DualPoint, PrimalPoint};
use crate::oracles::{eval_objective, solve_block};
use crate::reference::RefSolution;
use crate::stepsize::{StepData, Weights};

pub const DEFAULT_ITERATION_CAP: usize = 1_000_000;
/// Relative slack for the ascent and monotonicity checks.
pub const ASCENT_SLACK: f64 = 1e-9;

/// Inner solution, dual value and gradient at one multiplier.
#[derive(Debug, Clone)]
pub struct DualEval {
    pub value: f64,
    /// `f(z(λ))`.
    pub objective: f64,
    pub grad: DualPoint,
    pub z: PrimalPoint,
}

/// `(z_i, f_i(z_i), d_i)` with `d_i = f_i(z_i) + ⟨w_i, z_i⟩`.
pub fn inner_block(problem: &BlockProblem, lambda: &DualPoint, i: usize) -> Result<(DVector<f64>, f64, f64)> {
    let w = problem.coupling_term(i, lambda);
    let obj = problem.objective(i);
    let z = solve_block(obj, &w)?;
    let f = obj.value(&z);
    let d = f + w.dot(&z);
    Ok((z, f, d))
}

/// Evaluates `d(λ)`, `∇d(λ) = Gz(λ) − g` and `z(λ)`. With `parallel` the
/// inner solves run on the rayon pool; results are identical either way.
pub fn evaluate_with(problem: &BlockProblem, lambda: &DualPoint, parallel: bool) -> Result<DualEval> {
    let m = problem.graph().primal_count();
    let solved: Vec<(DVector<f64>, f64, f64)> = if parallel {
        (0..m).into_par_iter().map(|i| inner_block(problem, lambda, i)).collect::<Result<_>>()?
    } else {
        (0..m).map(|i| inner_block(problem, lambda, i)).collect::<Result<_>>()?
    };
    let mut value = 0.0;
    let mut objective = 0.0;
    let mut z = Vec::with_capacity(m);
    for (zi, fi, di) in solved {
        value += di;
        objective += fi;
        z.push(zi);
    }
    for j in 0..problem.graph().dual_count() {
        value -= lambda.nu[j].dot(problem.b_block(j)) + lambda.mu[j].dot(problem.c_block(j));
    }
    let z = PrimalPoint(z);
    let grad = problem.residual(&z);
    Ok(DualEval { value, objective, grad, z })
}

pub fn evaluate(problem: &BlockProblem, lambda: &DualPoint) -> Result<DualEval> {
    evaluate_with(problem, lambda, false)
}

/// `(∇d(λ), z(λ))`.
pub fn dual_gradient(problem: &BlockProblem, lambda: &DualPoint) -> Result<(DualPoint, PrimalPoint)> {
    let e = evaluate(problem, lambda)?;
    Ok((e.grad, e.z))
}

/// `d(λ)` through the separable form `Σ d_i − ⟨ν, b⟩ − ⟨μ, c⟩`.
pub fn dual_value(problem: &BlockProblem, lambda: &DualPoint) -> Result<f64> {
    Ok(evaluate(problem, lambda)?.value)
}

/// `d(λ)` as the Lagrangian `L(z(λ), λ)`; a second route to the same value.
pub fn dual_value_lagrangian(problem: &BlockProblem, lambda: &DualPoint) -> Result<f64> {
    let e = evaluate(problem, lambda)?;
    Ok(crate::oracles::eval_lagrangian(problem, &e.z, lambda))
}

/// Euclidean projection onto `D = R^p × R^q_+`. For diagonal positive `W`
/// it is also the `W`-weighted projection, since the problem separates by
/// coordinate.
pub fn project_onto_domain(lambda: &DualPoint) -> DualPoint {
    DualPoint {
        nu: lambda.nu.clone(),
        mu: lambda.mu.iter().map(|m| m.map(|x| x.max(0.0))).collect(),
    }
}

/// One block of the weighted projected step:
/// `ν_j + g_ν / w`, `max(μ_j + g_μ / w, 0)`.
pub fn update_dual_block(
    nu: &DVector<f64>,
    mu: &DVector<f64>,
    grad_nu: &DVector<f64>,
    grad_mu: &DVector<f64>,
    weight: f64,
) -> (DVector<f64>, DVector<f64>) {
    let nu_next = nu.zip_map(grad_nu, |l, g| l + g / weight);
    let mu_next = mu.zip_map(grad_mu, |l, g| (l + g / weight).max(0.0));
    (nu_next, mu_next)
}

/// `[λ + W⁻¹ g]_D`.
pub fn weighted_step(lambda: &DualPoint, grad: &DualPoint, weights: &Weights) -> DualPoint {
    let mut nu = Vec::with_capacity(lambda.nu.len());
    let mut mu = Vec::with_capacity(lambda.mu.len());
    for j in 0..lambda.nu.len() {
        let (a, b) = update_dual_block(&lambda.nu[j], &lambda.mu[j], &grad.nu[j], &grad.mu[j], weights.block(j));
        nu.push(a);
        mu.push(b);
    }
    DualPoint { nu, mu }
}

/// Proximal residual `∇⁺d(λ) = [λ + W⁻¹∇d(λ)]_D − λ` and its `W`-norm.
pub fn prox_residual(problem: &BlockProblem, lambda: &DualPoint, weights: &Weights) -> Result<(DualPoint, f64)> {
    let e = evaluate(problem, lambda)?;
    Ok(prox_residual_from_grad(lambda, &e.grad, weights))
}

pub fn prox_residual_from_grad(lambda: &DualPoint, grad: &DualPoint, weights: &Weights) -> (DualPoint, f64) {
    let next = weighted_step(lambda, grad, weights);
    let norm = next.distance_w(lambda, weights);
    (next.sub(lambda), norm)
}

/// Result of one dual step: the new multiplier and the evaluation at the old one.
#[derive(Debug, Clone)]
pub struct Step {
    pub next: DualPoint,
    pub eval: DualEval,
}

/// Distributed step `λ⁺ = [λ + W⁻¹∇d(λ)]_D`.
pub fn dg_step(problem: &BlockProblem, weights: &Weights, lambda: &DualPoint) -> Result<Step> {
    let eval = evaluate(problem, lambda)?;
    let next = weighted_step(lambda, &eval.grad, weights);
    Ok(Step { next, eval })
}

/// Centralized step `λ⁺ = [λ + L_d⁻¹∇d(λ)]_D`.
pub fn cg_step(problem: &BlockProblem, global_lipschitz: f64, lambda: &DualPoint) -> Result<Step> {
    dg_step(problem, &Weights::uniform(problem.graph(), global_lipschitz), lambda)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// Weighted (distributed) step sizes.
    Dg,
    /// Centralized step `1/L_d`.
    Cg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopMode {
    /// `|f(z^k) − f*| / |f*| ≤ ε`.
    RelativePrimal,
    /// `‖∇⁺d(λ^k)‖_W ≤ ε`.
    ProxResidual,
    /// Run exactly `cap` iterations.
    IterationCap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    pub mode: StopMode,
    pub eps: f64,
    pub cap: usize,
}

impl StopRule {
    pub fn new(mode: StopMode, eps: f64, cap: usize) -> Result<Self> {
        if eps.is_nan() || eps <= 0.0 || cap == 0 {
            return Err(Error::Dimension(format!("stop rule needs eps > 0 and cap >= 1 (eps={eps}, cap={cap})")));
        }
        Ok(Self { mode, eps, cap })
    }

    pub fn relative(eps: f64) -> Self {
        Self { mode: StopMode::RelativePrimal, eps, cap: DEFAULT_ITERATION_CAP }
    }

    pub fn prox(eps: f64) -> Self {
        Self { mode: StopMode::ProxResidual, eps, cap: DEFAULT_ITERATION_CAP }
    }

    pub fn cap(cap: usize) -> Self {
        Self { mode: StopMode::IterationCap, eps: 1.0, cap }
    }

    pub fn with_cap(mut self, cap: usize) -> Self {
        self.cap = cap;
        self
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub stop: StopRule,
    /// Fail the run on an ascent or monotone-distance violation.
    pub check_invariants: bool,
    /// Keep `λ^k` in the trace for every `k` divisible by `iterate_stride`.
    pub keep_iterates: bool,
    pub iterate_stride: usize,
    pub parallel: bool,
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn new(algorithm: Algorithm, stop: StopRule) -> Self {
        Self { algorithm, stop, check_invariants: true, keep_iterates: false, iterate_stride: 1, parallel: false, seed: None }
    }
}

/// One iteration of a run. Reference-dependent fields are NaN without a reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    pub dual: f64,
    pub f: f64,
    pub dual_subopt: f64,
    pub primal_subopt: f64,
    pub infeas_w: f64,
    pub dist_z: f64,
    pub step_w: f64,
    pub prox_w: f64,
    /// `‖λ^k − λ*_ref‖_W`.
    pub dist_lambda_w: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    CapReached,
}

#[derive(Debug, Clone)]
pub struct RunTrace {
    pub algorithm: Algorithm,
    pub stop: StopRule,
    pub seed: Option<u64>,
    pub rows: Vec<TraceRow>,
    pub status: RunStatus,
    /// Index `k` of the last row.
    pub iterations: usize,
    /// `λ^k` and `z^k` of the last row.
    pub lambda: DualPoint,
    pub z: PrimalPoint,
    /// `λ^0, …, λ^k` when requested.
    pub iterates: Vec<DualPoint>,
    pub ascent_violations: usize,
    pub distance_violations: usize,
}

impl RunTrace {
    pub fn converged(&self) -> bool {
        self.status == RunStatus::Converged
    }

    /// `d(λ^k)` nondecreasing up to `slack · max(1, |d|)`.
    pub fn dual_monotone(&self, slack: f64) -> bool {
        self.rows
            .windows(2)
            .all(|w| w[1].dual >= w[0].dual - slack * w[0].dual.abs().max(1.0))
    }
}

/// Metrics of one primal-dual pair against a reference solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRow {
    pub dual_subopt: f64,
    pub primal_subopt: f64,
    /// `‖[Gz − g]_D‖_{W⁻¹}`.
    pub infeas_w: f64,
    pub dist_z: f64,
    pub dist_lambda_w: f64,
}

/// `‖[r]_D‖_{W⁻¹}` of a constraint residual `r = Gz − g`.
pub fn projected_infeasibility(residual: &DualPoint, weights: &Weights) -> f64 {
    let mut s = 0.0;
    for j in 0..residual.nu.len() {
        let pos: f64 = residual.mu[j].iter().map(|&r| r.max(0.0).powi(2)).sum();
        s += (residual.nu[j].norm_squared() + pos) / weights.block(j);
    }
    s.sqrt()
}

pub fn metrics(
    problem: &BlockProblem,
    weights: &Weights,
    reference: &RefSolution,
    z: &PrimalPoint,
    lambda: &DualPoint,
) -> Result<MetricRow> {
    let d = dual_value(problem, lambda)?;
    let f = eval_objective(problem, z);
    Ok(metrics_from(weights, Some(reference), z, lambda, &problem.residual(z), d, f))
}

#[allow(clippy::too_many_arguments)]
fn metrics_from(
    weights: &Weights,
    reference: Option<&RefSolution>,
    z: &PrimalPoint,
    lambda: &DualPoint,
    residual: &DualPoint,
    dual: f64,
    f: f64,
) -> MetricRow {
    let infeas_w = projected_infeasibility(residual, weights);
    match reference {
        Some(r) => MetricRow {
            dual_subopt: r.f_star - dual,
            primal_subopt: f - r.f_star,
            infeas_w,
            dist_z: z.distance(&r.z_star),
            dist_lambda_w: lambda.distance_w(&r.lambda_ref, weights),
        },
        None => MetricRow {
            dual_subopt: f64::NAN,
            primal_subopt: f64::NAN,
            infeas_w,
            dist_z: f64::NAN,
            dist_lambda_w: f64::NAN,
        },
    }
}

/// Row `k` of a trace from the evaluation at `λ^k` and the measured step.
#[allow(clippy::too_many_arguments)]
pub fn trace_row(
    weights: &Weights,
    reference: Option<&RefSolution>,
    k: usize,
    lambda: &DualPoint,
    eval: &DualEval,
    step_w: f64,
    prox_w: f64,
) -> TraceRow {
    let f = eval.objective;
    let m = metrics_from(weights, reference, &eval.z, lambda, &eval.grad, eval.value, f);
    TraceRow {
        k,
        dual: eval.value,
        f,
        dual_subopt: m.dual_subopt,
        primal_subopt: m.primal_subopt,
        infeas_w: m.infeas_w,
        dist_z: m.dist_z,
        step_w,
        prox_w,
        dist_lambda_w: m.dist_lambda_w,
    }
}

/// Runs DG or CG from `λ⁰` until the stop rule fires or the cap is reached.
///
/// Row `k` describes `λ^k`, `z^k = z(λ^k)` and the step to `λ^{k+1}`.
pub fn run(
    problem: &BlockProblem,
    steps: &StepData,
    lambda0: &DualPoint,
    config: &RunConfig,
    reference: Option<&RefSolution>,
) -> Result<RunTrace> {
    if !lambda0.matches(problem.graph()) || !lambda0.in_domain() {
        return Err(Error::Dimension("initial multiplier must have the problem's shape and lie in D".into()));
    }
    if config.stop.mode == StopMode::RelativePrimal && reference.is_none() {
        return Err(Error::MissingReference("the relative primal stop rule needs f*".into()));
    }
    let weights = &steps.weights;
    let central;
    let step_weights = match config.algorithm {
        Algorithm::Dg => weights,
        Algorithm::Cg => {
            central = Weights::uniform(problem.graph(), steps.global_lipschitz);
            &central
        }
    };

    let mut rows = Vec::new();
    let mut iterates = Vec::new();
    let mut lambda = lambda0.clone();
    let mut prev: Option<(f64, f64, f64)> = None; // (dual, ½‖Δ‖²_step, dist_lambda)
    let mut ascent_violations = 0;
    let mut distance_violations = 0;
    let mut k = 0;
    loop {
        let eval = evaluate_with(problem, &lambda, config.parallel)?;
        let next = weighted_step(&lambda, &eval.grad, step_weights);
        let step_w = next.distance_w(&lambda, weights);
        let prox_w = match config.algorithm {
            Algorithm::Dg => step_w,
            Algorithm::Cg => prox_residual_from_grad(&lambda, &eval.grad, weights).1,
        };
        let row = trace_row(weights, reference, k, &lambda, &eval, step_w, prox_w);

        if let Some((d_prev, half_step_sq, dist_prev)) = prev {
            let slack = ASCENT_SLACK * d_prev.abs().max(1.0);
            if eval.value < d_prev + half_step_sq - slack {
                ascent_violations += 1;
                if config.check_invariants {
                    return Err(Error::Invariant(format!(
                        "ascent violated at k={k}: d went {d_prev:e} -> {:e}",
                        eval.value
                    )));
                }
            }
            if config.algorithm == Algorithm::Dg && row.dist_lambda_w > dist_prev + ASCENT_SLACK * dist_prev.max(1.0) {
                distance_violations += 1;
            }
        }

        rows.push(row);
        if config.keep_iterates && k % config.iterate_stride.max(1) == 0 {
            iterates.push(lambda.clone());
        }

        let done = match config.stop.mode {
            StopMode::RelativePrimal => {
                let f_star = reference.map(|r| r.f_star).unwrap_or(f64::NAN);
                let denom = if f_star == 0.0 { 1.0 } else { f_star.abs() };
                (row.f - f_star).abs() / denom <= config.stop.eps
            }
            StopMode::ProxResidual => prox_w <= config.stop.eps,
            StopMode::IterationCap => false,
        };
        if done || k >= config.stop.cap {
            let status = if done { RunStatus::Converged } else { RunStatus::CapReached };
            return Ok(RunTrace {
                algorithm: config.algorithm,
                stop: config.stop,
                seed: config.seed.or(problem.seed()),
                rows,
                status,
                iterations: k,
                lambda,
                z: eval.z,
                iterates,
                ascent_violations,
                distance_violations,
            });
        }
        let half_step_sq = 0.5 * next.distance_w(&lambda, step_weights).powi(2);
        prev = Some((eval.value, half_step_sq, row.dist_lambda_w));
        lambda = next;
        k += 1;
    }
}

/// Iteration counts of DG and CG run to the same relative accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub k_dg: usize,
    pub k_cg: usize,
    /// `k_DG / k_CG`.
    pub ratio: f64,
    pub omega: usize,
    pub global_lipschitz: f64,
    pub w_max: f64,
    pub w_min: f64,
    pub dg_converged: bool,
    pub cg_converged: bool,
    pub eps: f64,
}

/// Runs both methods from `λ = 0` with the relative primal stop rule against
/// the same `f*`.
pub fn compare(
    problem: &BlockProblem,
    steps: &StepData,
    reference: &RefSolution,
    eps: f64,
    cap: usize,
    parallel: bool,
) -> Result<CompareReport> {
    let lambda0 = DualPoint::zeros(problem.graph());
    let mut counts = [(0, false); 2];
    for (slot, algorithm) in [Algorithm::Dg, Algorithm::Cg].into_iter().enumerate() {
        let mut cfg = RunConfig::new(algorithm, StopRule::relative(eps).with_cap(cap));
        cfg.parallel = parallel;
        let t = run(problem, steps, &lambda0, &cfg, Some(reference))?;
        counts[slot] = (t.iterations, t.converged());
    }
    let [(k_dg, dg_converged), (k_cg, cg_converged)] = counts;
    Ok(CompareReport {
        k_dg,
        k_cg,
        ratio: if k_cg == 0 { if k_dg == 0 { 1.0 } else { f64::INFINITY } } else { k_dg as f64 / k_cg as f64 },
        omega: problem.graph().sparsity(),
        global_lipschitz: steps.global_lipschitz,
        w_max: steps.weights.max(),
        w_min: steps.weights.min(),
        dg_converged,
        cg_converged,
        eps,
    })
}
