//! Numerical checks of the inequalities behind the convergence analysis and an
//! empirical probe of the error-bound constant.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dual::{evaluate, prox_residual_from_grad, RunTrace};
use crate::error::{Error, Result};
use crate::model::{assemble_dense, numerical_rank, BlockProblem, DualPoint, RANK_TOLERANCE};
use crate::reference::RefSolution;
use crate::stepsize::{dual_curvature, Weights};

/// Relative slack for the Lipschitz-3 and descent checks.
pub const CHECK_SLACK: f64 = 1e-9;
/// Relative slack for the gradient/residual inequality.
pub const LEMMA4_SLACK: f64 = 1e-8;
/// Probe samples with a smaller residual are skipped.
pub const PROBE_DENOMINATOR_FLOOR: f64 = 1e-9;
pub const SAMPLE_RADII: [f64; 3] = [0.1, 1.0, 10.0];

/// A signed margin (nonnegative when the inequality holds) and the magnitude
/// of the terms it was formed from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Margin {
    pub margin: f64,
    pub scale: f64,
}

impl Margin {
    fn new(rhs: f64, lhs: f64, terms: &[f64]) -> Self {
        let scale = terms.iter().fold(1.0_f64, |acc, t| acc.max(t.abs()));
        Self { margin: rhs - lhs, scale }
    }

    pub fn holds(&self, slack: f64) -> bool {
        self.margin >= -slack * self.scale
    }
}

fn require_domain(points: &[&DualPoint]) -> Result<()> {
    if points.iter().all(|p| p.in_domain()) {
        Ok(())
    } else {
        Err(Error::Dimension("check points must lie in D".into()))
    }
}

/// `2‖∇⁺d(λ) − ∇⁺d(ω)‖_W ‖λ − ω‖_W − ⟨∇d(ω) − ∇d(λ), λ − ω⟩`.
pub fn check_lemma4(problem: &BlockProblem, weights: &Weights, lambda: &DualPoint, omega: &DualPoint) -> Result<Margin> {
    require_domain(&[lambda, omega])?;
    let el = evaluate(problem, lambda)?;
    let eo = evaluate(problem, omega)?;
    let (rl, _) = prox_residual_from_grad(lambda, &el.grad, weights);
    let (ro, _) = prox_residual_from_grad(omega, &eo.grad, weights);
    let diff = lambda.sub(omega);
    let lhs = eo.grad.sub(&el.grad).dot(&diff);
    let rhs = 2.0 * rl.sub(&ro).norm_w(weights) * diff.norm_w(weights);
    Ok(Margin::new(rhs, lhs, &[lhs, rhs]))
}

/// `3‖λ − λ̃‖_W − ‖∇⁺d(λ) − ∇⁺d(λ̃)‖_W`.
pub fn check_prox_lipschitz3(
    problem: &BlockProblem,
    weights: &Weights,
    lambda: &DualPoint,
    other: &DualPoint,
) -> Result<Margin> {
    require_domain(&[lambda, other])?;
    let el = evaluate(problem, lambda)?;
    let eo = evaluate(problem, other)?;
    let (rl, _) = prox_residual_from_grad(lambda, &el.grad, weights);
    let (ro, _) = prox_residual_from_grad(other, &eo.grad, weights);
    let lhs = rl.sub(&ro).norm_w(weights);
    let rhs = 3.0 * lambda.sub(other).norm_w(weights);
    Ok(Margin::new(rhs, lhs, &[lhs, rhs]))
}

/// `d(λ) − [d(λ̄) + ⟨∇d(λ̄), λ − λ̄⟩ − ½‖λ − λ̄‖²_W]`.
pub fn check_descent_lemma(
    problem: &BlockProblem,
    weights: &Weights,
    lambda: &DualPoint,
    anchor: &DualPoint,
) -> Result<Margin> {
    require_domain(&[lambda, anchor])?;
    let el = evaluate(problem, lambda)?;
    let ea = evaluate(problem, anchor)?;
    let diff = lambda.sub(anchor);
    let lin = ea.grad.dot(&diff);
    let quad = 0.5 * diff.norm_w(weights).powi(2);
    let model = ea.value + lin - quad;
    Ok(Margin::new(el.value, model, &[el.value, ea.value, lin, quad]))
}

/// `λ_min(W^{-1/2} G Q⁻¹ Gᵀ W^{-1/2})` for quadratic problems.
pub fn sigma_dw(problem: &BlockProblem, weights: &Weights) -> Result<f64> {
    let h = dual_curvature(problem)?;
    let inv_sqrt = weights.dense_diagonal(problem.graph()).map(|w| 1.0 / w.sqrt());
    let scaled = DMatrix::from_fn(h.nrows(), h.ncols(), |r, c| h[(r, c)] * inv_sqrt[r] * inv_sqrt[c]);
    let eig = scaled.symmetric_eigenvalues();
    Ok(eig.iter().copied().fold(f64::INFINITY, f64::min))
}

pub fn has_full_row_rank(problem: &BlockProblem) -> bool {
    let (g, _) = assemble_dense(problem);
    g.nrows() == 0 || numerical_rank(&g, RANK_TOLERANCE) == g.nrows()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    /// Iteration index of each retained sample.
    pub indices: Vec<usize>,
    /// `‖λ^k − λ*_ref‖_W / ‖∇⁺d(λ^k)‖_W`.
    pub ratios: Vec<f64>,
    pub excluded: usize,
    pub max: f64,
    pub median: f64,
    /// Non-finite ratios.
    pub violations: usize,
    pub kappa_hat: f64,
}

impl ProbeReport {
    fn from_samples(indices: Vec<usize>, ratios: Vec<f64>, excluded: usize) -> Self {
        let violations = ratios.iter().filter(|r| !r.is_finite()).count();
        let mut finite: Vec<f64> = ratios.iter().copied().filter(|r| r.is_finite()).collect();
        finite.sort_by(f64::total_cmp);
        let max = finite.last().copied().unwrap_or(f64::NAN);
        let median = match finite.len() {
            0 => f64::NAN,
            n if n % 2 == 1 => finite[n / 2],
            n => 0.5 * (finite[n / 2 - 1] + finite[n / 2]),
        };
        Self { indices, ratios, excluded, max, median, violations, kappa_hat: max }
    }

    /// Finite ratios with `max / median` below `limit`.
    pub fn bounded(&self, limit: f64) -> bool {
        self.violations == 0 && self.max.is_finite() && self.max <= limit * self.median
    }
}

/// Distance-to-residual ratios along a DG trace. The trace must carry every
/// iterate or the reference distances; `G` must have full row rank so the
/// optimal multiplier is unique.
pub fn probe_error_bound(
    problem: &BlockProblem,
    weights: &Weights,
    trace: &RunTrace,
    reference: &RefSolution,
) -> Result<ProbeReport> {
    if !has_full_row_rank(problem) {
        return Err(Error::Unsupported("error-bound probe needs G with full row rank".into()));
    }
    let mut indices = Vec::new();
    let mut ratios = Vec::new();
    let mut excluded = 0;
    // strided iterates do not line up with the rows
    let iterates: &[DualPoint] = if trace.iterates.len() == trace.rows.len() { &trace.iterates } else { &[] };
    for (pos, row) in trace.rows.iter().enumerate() {
        let dist = match iterates.get(pos) {
            Some(l) => l.sub(&reference.lambda_ref).norm_w(weights),
            None if row.dist_lambda_w.is_finite() => row.dist_lambda_w,
            None => {
                return Err(Error::MissingReference("trace has neither iterates nor reference distances".into()))
            }
        };
        if row.prox_w <= PROBE_DENOMINATOR_FLOOR {
            excluded += 1;
            continue;
        }
        indices.push(row.k);
        ratios.push(dist / row.prox_w);
    }
    Ok(ProbeReport::from_samples(indices, ratios, excluded))
}

/// `λ*_ref + r u` with `u` uniform in the unit ball, projected onto `D`.
pub fn sample_around(center: &DualPoint, radius: f64, rng: &mut impl Rng) -> DualPoint {
    let flat = center.to_flat();
    let dim = flat.len();
    let dir = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let norm = dir.norm();
    let r = radius * rng.random::<f64>().powf(1.0 / dim.max(1) as f64);
    let shifted = if norm > 0.0 { &flat + dir * (r / norm) } else { flat };
    let point = DualPoint {
        nu: center.nu.clone(),
        mu: center.mu.clone(),
    };
    let mut out = point;
    let mut pos = 0;
    for v in out.nu.iter_mut() {
        let len = v.len();
        v.copy_from(&shifted.rows(pos, len));
        pos += len;
    }
    for v in out.mu.iter_mut() {
        let len = v.len();
        v.copy_from(&shifted.rows(pos, len).map(|x| x.max(0.0)));
        pos += len;
    }
    out
}

/// Worst margins and violation counts of a sampling campaign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub samples: usize,
    pub lemma4_violations: usize,
    pub prox3_violations: usize,
    pub descent_violations: usize,
    pub worst_lemma4: f64,
    pub worst_prox3: f64,
    pub worst_descent: f64,
}

impl CampaignReport {
    pub fn clean(&self) -> bool {
        self.lemma4_violations == 0 && self.prox3_violations == 0 && self.descent_violations == 0
    }
}

/// Evaluates all three pairwise checks on `samples` random pairs drawn around
/// `center`, cycling through the radii in [`SAMPLE_RADII`]. The default
/// slacks are [`LEMMA4_SLACK`] and [`CHECK_SLACK`].
pub fn check_campaign(
    problem: &BlockProblem,
    weights: &Weights,
    center: &DualPoint,
    samples: usize,
    seed: u64,
) -> Result<CampaignReport> {
    check_campaign_with(problem, weights, center, samples, seed, [LEMMA4_SLACK, CHECK_SLACK, CHECK_SLACK])
}

/// [`check_campaign`] with explicit relative slacks for the gradient/residual,
/// Lipschitz-3 and descent checks, in that order.
pub fn check_campaign_with(
    problem: &BlockProblem,
    weights: &Weights,
    center: &DualPoint,
    samples: usize,
    seed: u64,
    slacks: [f64; 3],
) -> Result<CampaignReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = CampaignReport {
        samples,
        lemma4_violations: 0,
        prox3_violations: 0,
        descent_violations: 0,
        worst_lemma4: f64::INFINITY,
        worst_prox3: f64::INFINITY,
        worst_descent: f64::INFINITY,
    };
    for s in 0..samples {
        let radius = SAMPLE_RADII[s % SAMPLE_RADII.len()];
        let a = sample_around(center, radius, &mut rng);
        let b = sample_around(center, radius, &mut rng);
        let l4 = check_lemma4(problem, weights, &a, &b)?;
        let p3 = check_prox_lipschitz3(problem, weights, &a, &b)?;
        let dl = check_descent_lemma(problem, weights, &a, &b)?;
        report.lemma4_violations += usize::from(!l4.holds(slacks[0]));
        report.prox3_violations += usize::from(!p3.holds(slacks[1]));
        report.descent_violations += usize::from(!dl.holds(slacks[2]));
        report.worst_lemma4 = report.worst_lemma4.min(l4.margin / l4.scale);
        report.worst_prox3 = report.worst_prox3.min(p3.margin / p3.scale);
        report.worst_descent = report.worst_descent.min(dl.margin / dl.scale);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual::{run, Algorithm, RunConfig, StopRule};
    use crate::model::BipartiteGraph;
    use crate::oracles::BlockObjective;
    use crate::reference::solve_reference;
    use crate::stepsize::{quadratic_forms, tightness_instance, StepData};

    fn scalar() -> BlockProblem {
        let graph = BipartiteGraph::new([(0, 0)], vec![1], vec![1], vec![0]).unwrap();
        BlockProblem::new(
            graph,
            vec![BlockObjective::quadratic(DMatrix::identity(1, 1), DVector::zeros(1)).unwrap()],
            vec![((0, 0), DMatrix::identity(1, 1))],
            vec![],
            DVector::from_vec(vec![1.0]),
            DVector::zeros(0),
            None,
        )
        .unwrap()
    }

    fn nu(v: f64) -> DualPoint {
        DualPoint { nu: vec![DVector::from_vec(vec![v])], mu: vec![DVector::zeros(0)] }
    }

    #[test]
    fn equal_points_give_zero_margins() {
        let p = scalar();
        let w = StepData::compute(&p).unwrap().weights;
        for l in [nu(0.3), nu(-1.0)] {
            assert_eq!(check_lemma4(&p, &w, &l, &l).unwrap().margin, 0.0);
            assert_eq!(check_prox_lipschitz3(&p, &w, &l, &l).unwrap().margin, 0.0);
            assert_eq!(check_descent_lemma(&p, &w, &l, &l).unwrap().margin, 0.0);
        }
    }

    #[test]
    fn descent_margin_matches_quadratic_forms() {
        // one block, two rows: W exceeds the curvature in some directions
        let graph = BipartiteGraph::new([(0, 0)], vec![2], vec![2], vec![0]).unwrap();
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.2, 1.0]);
        let p = BlockProblem::new(
            graph,
            vec![BlockObjective::quadratic(q, DVector::from_vec(vec![0.1, -0.4])).unwrap()],
            vec![((0, 0), a)],
            vec![],
            DVector::from_vec(vec![0.5, 1.5]),
            DVector::zeros(0),
            None,
        )
        .unwrap();
        let w = StepData::compute(&p).unwrap().weights;
        let l = DualPoint { nu: vec![DVector::from_vec(vec![0.7, -1.2])], mu: vec![DVector::zeros(0)] };
        let bar = DualPoint { nu: vec![DVector::from_vec(vec![-0.4, 0.9])], mu: vec![DVector::zeros(0)] };
        let m = check_descent_lemma(&p, &w, &l, &bar).unwrap();
        let (hq, wq) = quadratic_forms(&p, &w, &l.sub(&bar)).unwrap();
        assert!((m.margin - 0.5 * (wq - hq)).abs() < 1e-12);
        assert!(m.margin >= 0.0);
    }

    #[test]
    fn descent_is_tight_on_tightness_instance() {
        let t = tightness_instance(2, &[1.0, 3.0, 5.0]).unwrap();
        let w = StepData::compute(&t.problem).unwrap().weights;
        let base = DualPoint::zeros(t.problem.graph());
        let m = check_descent_lemma(&t.problem, &w, &t.direction, &base).unwrap();
        assert!(m.margin.abs() < 1e-10, "margin {}", m.margin);
    }

    #[test]
    fn scalar_probe_ratio() {
        let p = scalar();
        let steps = StepData::compute(&p).unwrap();
        let r = solve_reference(&p).unwrap();
        let mut cfg = RunConfig::new(Algorithm::Dg, StopRule::cap(2));
        cfg.keep_iterates = true;
        let trace = run(&p, &steps, &nu(0.0), &cfg, Some(&r)).unwrap();
        let report = probe_error_bound(&p, &steps.weights, &trace, &r).unwrap();
        assert_eq!(report.ratios, vec![1.0]);
        assert_eq!(report.excluded, 2);
        assert_eq!(report.kappa_hat, 1.0);
    }

    #[test]
    fn probe_rejects_rank_deficient_g() {
        let graph = BipartiteGraph::new([(0, 0)], vec![1], vec![2], vec![0]).unwrap();
        let p = BlockProblem::new(
            graph,
            vec![BlockObjective::quadratic(DMatrix::identity(1, 1), DVector::zeros(1)).unwrap()],
            vec![((0, 0), DMatrix::from_column_slice(2, 1, &[1.0, 2.0]))],
            vec![],
            DVector::from_vec(vec![1.0, 2.0]),
            DVector::zeros(0),
            None,
        )
        .unwrap();
        let steps = StepData::compute(&p).unwrap();
        let lam = DualPoint::zeros(p.graph());
        let trace = run(&p, &steps, &lam, &RunConfig::new(Algorithm::Dg, StopRule::cap(1)), None).unwrap();
        let fake = RefSolution {
            z_star: trace.z.clone(),
            f_star: 0.0,
            lambda_ref: lam,
            quality: crate::reference::RefQuality {
                prox_w: 0.0,
                infeasibility: 0.0,
                iterations: 0,
                low_quality: false,
                f_from_dual: false,
            },
        };
        assert!(matches!(probe_error_bound(&p, &steps.weights, &trace, &fake), Err(Error::Unsupported(_))));
    }

    #[test]
    fn sigma_dw_scalar() {
        let p = scalar();
        let w = StepData::compute(&p).unwrap().weights;
        assert!((sigma_dw(&p, &w).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn samples_stay_in_domain_and_ball() {
        let center = DualPoint { nu: vec![DVector::from_vec(vec![1.0, 2.0])], mu: vec![DVector::from_vec(vec![0.0, 0.5])] };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let s = sample_around(&center, 0.1, &mut rng);
            assert!(s.in_domain());
            assert!(s.sub(&center).norm() <= 0.1 + 1e-15);
        }
    }
}
