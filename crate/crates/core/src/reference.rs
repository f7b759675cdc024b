//! High-accuracy reference solutions used for metrics and test oracles.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dual::{evaluate, project_onto_domain, prox_residual_from_grad, weighted_step};
use crate::error::{Error, Result};
use crate::model::{assemble_dense, BlockProblem, DualPoint, PrimalPoint};
use crate::oracles::eval_objective;
use crate::stepsize::StepData;

pub const REFERENCE_PROX_TOLERANCE: f64 = 1e-10;
pub const REFERENCE_INFEASIBILITY_TOLERANCE: f64 = 1e-8;
pub const REFERENCE_MAX_ITER: usize = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefQuality {
    /// `‖∇⁺d(λ_ref)‖_W`.
    pub prox_w: f64,
    /// Euclidean `‖[Gz* − g]_D‖`.
    pub infeasibility: f64,
    pub iterations: usize,
    /// Set when either tolerance was missed.
    pub low_quality: bool,
    /// Set when `f*` was taken from the dual value because `z*` is not feasible enough.
    pub f_from_dual: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefSolution {
    pub z_star: PrimalPoint,
    pub f_star: f64,
    pub lambda_ref: DualPoint,
    pub quality: RefQuality,
}

#[derive(Debug, Clone, Copy)]
pub struct ReferenceOptions {
    pub prox_tolerance: f64,
    pub max_iter: usize,
}

impl Default for ReferenceOptions {
    fn default() -> Self {
        Self { prox_tolerance: REFERENCE_PROX_TOLERANCE, max_iter: REFERENCE_MAX_ITER }
    }
}

pub fn solve_reference(problem: &BlockProblem) -> Result<RefSolution> {
    solve_reference_with(problem, &StepData::compute(problem)?, ReferenceOptions::default())
}

/// Reference solve from `λ = 0`.
///
/// An accelerated projected gradient phase in the `W` metric (momentum reset
/// whenever the dual value drops) brings the iterate close to the optimal
/// set. Plain weighted steps then continue until the proximal residual at the
/// returned multiplier is below the tolerance, so the quality figures always
/// describe a point reached by the unaccelerated map.
pub fn solve_reference_with(problem: &BlockProblem, steps: &StepData, opts: ReferenceOptions) -> Result<RefSolution> {
    let weights = &steps.weights;
    let mut iterations = 0;
    let mut lambda = accelerated_phase(problem, steps, opts, &mut iterations)?;
    loop {
        let eval = evaluate(problem, &lambda)?;
        let (_, prox_w) = prox_residual_from_grad(&lambda, &eval.grad, weights);
        if !prox_w.is_finite() {
            return Err(Error::Numeric(format!("reference iteration diverged at k={iterations}")));
        }
        if prox_w <= opts.prox_tolerance || iterations >= opts.max_iter {
            let infeasibility = project_onto_domain(&eval.grad).norm();
            let feasible = infeasibility <= REFERENCE_INFEASIBILITY_TOLERANCE;
            let f_star = if feasible { eval_objective(problem, &eval.z) } else { eval.value };
            return Ok(RefSolution {
                z_star: eval.z,
                f_star,
                lambda_ref: lambda,
                quality: RefQuality {
                    prox_w,
                    infeasibility,
                    iterations,
                    low_quality: prox_w > opts.prox_tolerance || !feasible,
                    f_from_dual: !feasible,
                },
            });
        }
        lambda = weighted_step(&lambda, &eval.grad, weights);
        iterations += 1;
    }
}

/// Fraction of the target residual the accelerated phase aims for before
/// handing over to plain steps.
const ACCELERATED_TARGET: f64 = 0.1;

fn accelerated_phase(
    problem: &BlockProblem,
    steps: &StepData,
    opts: ReferenceOptions,
    iterations: &mut usize,
) -> Result<DualPoint> {
    let weights = &steps.weights;
    let mut lambda = DualPoint::zeros(problem.graph());
    let mut prev = lambda.clone();
    let mut t = 1.0_f64;
    while *iterations < opts.max_iter {
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        let y = lambda.add(&lambda.sub(&prev).scale(beta));
        let ey = evaluate(problem, &y)?;
        let next = weighted_step(&y, &ey.grad, weights);
        let step = next.sub(&y);
        let prox_y = step.norm_w(weights);
        if !prox_y.is_finite() {
            return Err(Error::Numeric(format!("accelerated reference phase diverged at k={iterations}")));
        }
        *iterations += 1;
        // momentum points against the ascent step: drop it
        if step.dot(&next.sub(&lambda)) < 0.0 {
            t = 1.0;
        } else {
            t = t_next;
        }
        prev = lambda;
        lambda = next;
        if prox_y <= ACCELERATED_TARGET * opts.prox_tolerance {
            break;
        }
    }
    Ok(lambda)
}

/// Solves `[Q Aᵀ; A 0] [z; ν] = [−q; b]` densely for quadratic problems
/// without inequality rows.
pub fn kkt_solve_equality(problem: &BlockProblem) -> Result<(PrimalPoint, DualPoint)> {
    if !problem.is_quadratic() || problem.has_inequalities() {
        return Err(Error::Unsupported("KKT solve needs gamma = 0 and no inequality rows".into()));
    }
    let graph = problem.graph();
    let n = graph.total_n();
    let p = graph.total_p();
    let (a, _) = assemble_dense(problem);
    let a = a.rows(0, p).into_owned();
    let mut kkt = DMatrix::zeros(n + p, n + p);
    let mut rhs = DVector::zeros(n + p);
    for i in 0..graph.primal_count() {
        let o = graph.n_offset(i);
        let obj = problem.objective(i);
        let d = obj.dim();
        kkt.view_mut((o, o), (d, d)).copy_from(obj.hessian());
        rhs.rows_mut(o, d).copy_from(&(-obj.linear()));
    }
    kkt.view_mut((n, 0), (p, n)).copy_from(&a);
    kkt.view_mut((0, n), (n, p)).copy_from(&a.transpose());
    rhs.rows_mut(n, p).copy_from(&problem.b_flat());

    let lu = kkt.clone().lu();
    let sol = lu.solve(&rhs).ok_or_else(|| Error::Rank("KKT system is singular".into()))?;
    let residual = (&kkt * &sol - &rhs).amax();
    let scale = kkt.amax().max(1.0) * sol.amax().max(1.0);
    if !residual.is_finite() || residual > 1e-6 * scale {
        return Err(Error::Rank("KKT system is numerically singular".into()));
    }
    let z = PrimalPoint::from_flat(graph, &sol.rows(0, n).into_owned())?;
    let mut flat = DVector::zeros(p + graph.total_q());
    flat.rows_mut(0, p).copy_from(&sol.rows(n, p));
    let nu = DualPoint::from_flat(graph, &flat)?;
    Ok((z, nu))
}
