//! Acceptance suite. Prints one line per criterion and exits nonzero if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use dualgrad_core::dmpc::{build_problem, random_system};
use dualgrad_core::dual::{compare, dual_value, evaluate, prox_residual, run};
use dualgrad_core::errorbound::{check_campaign_with, probe_error_bound, sigma_dw};
use dualgrad_core::gen::{generate, generate_with, GenConfig};
use dualgrad_core::model::{BipartiteGraph, BlockProblem, DualPoint};
use dualgrad_core::reference::solve_reference;
use dualgrad_core::sim::{run_distributed, verify_locality, Direction, MessageLog, MessageRecord, Network, Payload};
use dualgrad_core::stepsize::{quadratic_forms, tightness_instance};
use dualgrad_core::{Algorithm, BlockObjective, Error, RefSolution, RunConfig, RunTrace, StepData, StopRule};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const STRIDE: usize = 50;

type Metric = fn(&dualgrad_core::TraceRow) -> f64;

struct Outcome {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

struct Desk {
    label: String,
    problem: BlockProblem,
    steps: StepData,
    reference: RefSolution,
    trace: RunTrace,
}

fn outcome(id: u32, name: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome { id, name, pass, detail }
}

fn failed(id: u32, name: &'static str, err: Error) -> Outcome {
    outcome(id, name, false, format!("error: {err}"))
}

/// The ten desk instances, solved by DG to relative accuracy 1e-4.
fn desk_runs() -> Result<(Vec<Desk>, Duration), Error> {
    let start = Instant::now();
    let mut out = Vec::new();
    for gamma in [false, true] {
        for seed in 0..5 {
            let problem = generate(20, 5, 3, gamma, seed)?;
            let steps = StepData::compute(&problem)?;
            let reference = solve_reference(&problem)?;
            let mut cfg = RunConfig::new(Algorithm::Dg, StopRule::relative(1e-4).with_cap(100_000));
            cfg.check_invariants = false;
            cfg.keep_iterates = true;
            cfg.iterate_stride = STRIDE;
            let trace = run(&problem, &steps, &DualPoint::zeros(problem.graph()), &cfg, Some(&reference))?;
            out.push(Desk { label: format!("gamma={} seed={seed}", u8::from(gamma)), problem, steps, reference, trace });
        }
    }
    Ok((out, start.elapsed()))
}

fn c1(desk: &[Desk], elapsed: Duration) -> Outcome {
    let violations: usize = desk.iter().map(|d| d.trace.ascent_violations).sum();
    let iterations: usize = desk.iter().map(|d| d.trace.iterations).sum();
    let secs = elapsed.as_secs_f64();
    outcome(
        1,
        "ascent suite",
        violations == 0 && secs < 60.0,
        format!("{violations} violations over {iterations} iterations, {secs:.1} s total"),
    )
}

fn c2(desk: &[Desk]) -> Outcome {
    let violations: usize = desk.iter().map(|d| d.trace.distance_violations).sum();
    outcome(2, "monotone distance", violations == 0, format!("{violations} violations"))
}

fn random_dual(problem: &BlockProblem, rng: &mut ChaCha8Rng) -> Result<DualPoint, Error> {
    let mut l = DualPoint::zeros(problem.graph());
    for v in l.nu.iter_mut() {
        v.iter_mut().for_each(|x| *x = rng.sample::<f64, _>(StandardNormal));
    }
    for v in l.mu.iter_mut() {
        v.iter_mut().for_each(|x| *x = rng.sample::<f64, _>(StandardNormal).abs());
    }
    Ok(l)
}

fn c3(desk: &[Desk]) -> Outcome {
    let h = 1e-6;
    let mut worst = 0.0_f64;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for d in desk {
        let graph = d.problem.graph();
        for _ in 0..20 {
            let result = (|| -> Result<f64, Error> {
                let l = random_dual(&d.problem, &mut rng)?;
                let grad = evaluate(&d.problem, &l)?.grad.to_flat();
                let flat = l.to_flat();
                let mut fd = DVector::zeros(flat.len());
                for k in 0..flat.len() {
                    let mut up = flat.clone();
                    up[k] += h;
                    let mut down = flat.clone();
                    down[k] -= h;
                    let up = DualPoint::from_flat(graph, &up)?;
                    let down = DualPoint::from_flat(graph, &down)?;
                    fd[k] = (dual_value(&d.problem, &up)? - dual_value(&d.problem, &down)?) / (2.0 * h);
                }
                Ok((&fd - &grad).norm() / grad.norm().max(1.0))
            })();
            match result {
                Ok(e) => worst = worst.max(e),
                Err(e) => return failed(3, "gradient vs finite differences", e),
            }
        }
    }
    outcome(3, "gradient vs finite differences", worst <= 1e-6, format!("max relative error {worst:.2e} over 200 points"))
}

fn c4(desk: &[Desk]) -> Outcome {
    let mut worst = 0.0_f64;
    let mut checked = 0;
    for d in desk {
        let w = &d.steps.weights;
        // strided iterates of the full runs against the recorded step lengths
        for (s, lambda) in d.trace.iterates.iter().enumerate() {
            let row = &d.trace.rows[s * STRIDE];
            match prox_residual(&d.problem, lambda, w) {
                Ok((_, norm)) => worst = worst.max((norm - row.step_w).abs() / row.step_w.max(1.0)),
                Err(e) => return failed(4, "residual identity", e),
            }
            checked += 1;
        }
        // every iterate of a prefix, with the step taken from consecutive iterates
        let mut cfg = RunConfig::new(Algorithm::Dg, StopRule::cap(300));
        cfg.keep_iterates = true;
        let prefix = match run(&d.problem, &d.steps, &DualPoint::zeros(d.problem.graph()), &cfg, None) {
            Ok(t) => t,
            Err(e) => return failed(4, "residual identity", e),
        };
        for pair in prefix.iterates.windows(2) {
            let step = pair[1].distance_w(&pair[0], w);
            match prox_residual(&d.problem, &pair[0], w) {
                Ok((_, norm)) => worst = worst.max((norm - step).abs() / step.max(1.0)),
                Err(e) => return failed(4, "residual identity", e),
            }
            checked += 1;
        }
    }
    outcome(4, "residual identity", worst <= 1e-12, format!("max deviation {worst:.2e} over {checked} iterates"))
}

/// `(slope, R²)` of the least-squares line through `(x, y)`.
fn fit(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 0.0 } else { sxy * sxy / (sxx * syy) };
    (slope, r2)
}

fn c5(desk: &[Desk]) -> Outcome {
    let mut failures = Vec::new();
    let mut worst_r2 = f64::INFINITY;
    for d in desk {
        let rows = &d.trace.rows;
        let tail = &rows[rows.len() / 2..];
        let series: [(&str, Metric); 3] =
            [("dual gap", |r| r.dual_subopt), ("infeasibility", |r| r.infeas_w), ("primal distance", |r| r.dist_z)];
        for (name, get) in series {
            let pts: Vec<(f64, f64)> =
                tail.iter().filter(|r| get(r) >= 1e-12).map(|r| (r.k as f64, get(r).log10())).collect();
            let (slope, r2) = if pts.len() >= 2 { fit(&pts) } else { (f64::NAN, f64::NAN) };
            worst_r2 = worst_r2.min(r2);
            if !(slope < 0.0 && r2 >= 0.95) {
                failures.push(format!("{} {name} slope={slope:.2e} R2={r2:.3}", d.label));
            }
        }
        if !d.trace.converged() {
            failures.push(format!("{} not converged within 1e5 iterations", d.label));
        }
    }
    let ks: Vec<String> = desk.iter().map(|d| d.trace.iterations.to_string()).collect();
    let mut detail = format!("min R2 {worst_r2:.3}; iterations [{}]", ks.join(", "));
    if !failures.is_empty() {
        detail.push_str(&format!("; {}", failures.join("; ")));
    }
    outcome(5, "linear-rate evidence", failures.is_empty(), detail)
}

fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut s = 0;
        while s < idx.len() {
            let mut e = s;
            while e + 1 < idx.len() && v[idx[e + 1]] == v[idx[s]] {
                e += 1;
            }
            let avg = (s + e) as f64 / 2.0 + 1.0;
            for &i in &idx[s..=e] {
                r[i] = avg;
            }
            s = e + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

fn ratio_at(omega: usize, seed: u64) -> Result<(f64, bool), Error> {
    let problem = generate(20, 5, omega, true, seed)?;
    let steps = StepData::compute(&problem)?;
    let reference = solve_reference(&problem)?;
    let report = compare(&problem, &steps, &reference, 1e-2, 100_000, false)?;
    Ok((report.ratio, report.dg_converged && report.cg_converged && report.k_dg < report.k_cg))
}

fn c6() -> Outcome {
    let name = "DG vs CG";
    let omega = (0.15_f64 * 20.0).ceil() as usize;
    let mut wins = 0;
    let mut ratios = Vec::new();
    for seed in 0..10 {
        match ratio_at(omega, seed) {
            Ok((r, win)) => {
                wins += usize::from(win);
                ratios.push(format!("{r:.2}"));
            }
            Err(e) => return failed(6, name, e),
        }
    }
    let sweep = [2usize, 4, 8, 12];
    let mut medians = Vec::new();
    for &om in &sweep {
        let mut rs = Vec::new();
        for seed in 0..5 {
            match ratio_at(om, seed) {
                Ok((r, _)) => rs.push(r),
                Err(e) => return failed(6, name, e),
            }
        }
        rs.sort_by(f64::total_cmp);
        medians.push(rs[rs.len() / 2]);
    }
    let x: Vec<f64> = sweep.iter().map(|&o| o as f64).collect();
    let rho = spearman(&x, &medians);
    let monotone = medians.windows(2).all(|w| w[1] >= w[0]);
    let med: Vec<String> = medians.iter().map(|m| format!("{m:.2}")).collect();
    outcome(
        6,
        name,
        wins >= 9 && rho >= 0.0,
        format!(
            "k_DG < k_CG in {wins}/10 at omega={omega} (ratios [{}]); medians over omega {{2,4,8,12}} = [{}], rank correlation {rho:.2}, strictly ordered: {monotone}",
            ratios.join(", "),
            med.join(", ")
        ),
    )
}

fn c7() -> Outcome {
    let mut worst = 0.0_f64;
    for (omega, m) in [(1usize, 3usize), (2, 4), (3, 5)] {
        let sigmas: Vec<f64> = (0..m).map(|i| 1.0 + 2.5 * i as f64).collect();
        let res = (|| -> Result<f64, Error> {
            let t = tightness_instance(omega, &sigmas)?;
            let steps = StepData::compute(&t.problem)?;
            let (hq, wq) = quadratic_forms(&t.problem, &steps.weights, &t.direction)?;
            Ok((hq - wq).abs())
        })();
        match res {
            Ok(gap) => worst = worst.max(gap),
            Err(e) => return failed(7, "descent lemma tightness", e),
        }
    }
    outcome(7, "descent lemma tightness", worst <= 1e-10, format!("max |hHh - |h|_W^2| = {worst:.2e}"))
}

fn c8(desk: &[Desk]) -> Outcome {
    let mut totals = [0usize; 3];
    for (s, d) in desk.iter().enumerate() {
        match check_campaign_with(&d.problem, &d.steps.weights, &d.reference.lambda_ref, 200, 800 + s as u64, [1e-8; 3]) {
            Ok(r) => {
                totals[0] += r.lemma4_violations;
                totals[1] += r.prox3_violations;
                totals[2] += r.descent_violations;
            }
            Err(e) => return failed(8, "inequality suite", e),
        }
    }
    outcome(
        8,
        "inequality suite",
        totals.iter().all(|&t| t == 0),
        format!(
            "violations over 2000 pairs: gradient/residual {}, Lipschitz-3 {}, descent {}",
            totals[0], totals[1], totals[2]
        ),
    )
}

fn c9() -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    for seed in 0..5 {
        let res = (|| -> Result<(usize, f64, f64, usize), Error> {
            let problem = generate_with(&GenConfig::new(20, 5, 3, false, seed).full_row_rank())?;
            let steps = StepData::compute(&problem)?;
            let reference = solve_reference(&problem)?;
            let trace = run(
                &problem,
                &steps,
                &DualPoint::zeros(problem.graph()),
                &RunConfig::new(Algorithm::Dg, StopRule::prox(1e-6)),
                Some(&reference),
            )?;
            let report = probe_error_bound(&problem, &steps.weights, &trace, &reference)?;
            let bound = 2.0 / sigma_dw(&problem, &steps.weights)?;
            Ok((report.violations, report.kappa_hat, bound, report.ratios.len()))
        })();
        match res {
            Ok((violations, kappa, bound, n)) => {
                let ok = violations == 0 && kappa.is_finite() && kappa <= 1.01 * bound;
                pass &= ok;
                lines.push(format!("seed {seed}: kappa {kappa:.3} vs {bound:.3} ({n} ratios)"));
            }
            Err(e) => return failed(9, "error-bound probe", e),
        }
    }
    outcome(9, "error-bound probe", pass, lines.join("; "))
}

fn bits(v: &DVector<f64>) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn c10() -> Outcome {
    let name = "distributed equivalence";
    let mut equal = 0;
    let mut local = 0;
    for seed in 0..5 {
        let res = (|| -> Result<(bool, bool), Error> {
            let problem = generate(20, 5, 3, seed % 2 == 1, seed)?;
            let steps = StepData::compute(&problem)?;
            let l0 = DualPoint::zeros(problem.graph());
            let mono = run(&problem, &steps, &l0, &RunConfig::new(Algorithm::Dg, StopRule::cap(50)), None)?;
            let (dist, log) = run_distributed(&problem, &steps.weights, &l0, 50, None)?;
            let same_rows = mono.rows.len() == dist.rows.len()
                && mono.rows.iter().zip(&dist.rows).all(|(a, b)| {
                    a.dual.to_bits() == b.dual.to_bits()
                        && a.f.to_bits() == b.f.to_bits()
                        && a.step_w.to_bits() == b.step_w.to_bits()
                });
            let same = same_rows
                && bits(&mono.lambda.to_flat()) == bits(&dist.lambda.to_flat())
                && bits(&mono.z.to_flat()) == bits(&dist.z.to_flat());
            Ok((same, verify_locality(&log, problem.graph())))
        })();
        match res {
            Ok((same, loc)) => {
                equal += usize::from(same);
                local += usize::from(loc);
            }
            Err(e) => return failed(10, name, e),
        }
    }
    // injected messages along a missing edge
    let graph = match BipartiteGraph::new([(0, 0), (1, 1)], vec![1, 1], vec![1, 1], vec![0, 0]) {
        Ok(g) => g,
        Err(e) => return failed(10, name, e),
    };
    let mut net = Network::new(&graph);
    let payload = Payload { eq: DVector::zeros(1), ineq: DVector::zeros(0) };
    let send_caught = matches!(net.send(0, Direction::Down, 0, 1, payload), Err(Error::Locality { .. }));
    let forged = MessageLog { records: vec![MessageRecord { round: 0, direction: Direction::Up, from: 1, to: 0, bytes: 8 }] };
    let log_caught = !verify_locality(&forged, &graph);
    outcome(
        10,
        name,
        equal == 5 && local == 5 && send_caught && log_caught,
        format!(
            "bitwise equal {equal}/5, locality {local}/5, off-edge send rejected: {send_caught}, forged log flagged: {log_caught}"
        ),
    )
}

fn c11() -> Outcome {
    let name = "DMPC per-iteration scaling";
    let iters = 400;
    let mut alphas = Vec::new();
    let mut lines = Vec::new();
    for (m, horizon) in [(8usize, 4usize), (16, 4), (16, 8)] {
        let res = (|| -> Result<f64, Error> {
            let problem = build_problem(&random_system(m, 2, 1, 3, horizon, 11)?)?;
            let steps = StepData::compute(&problem)?;
            let l0 = DualPoint::zeros(problem.graph());
            let mut cfg = RunConfig::new(Algorithm::Dg, StopRule::cap(iters));
            cfg.check_invariants = false;
            let mut times = Vec::new();
            for _ in 0..7 {
                let start = Instant::now();
                run(&problem, &steps, &l0, &cfg, None)?;
                times.push(start.elapsed().as_secs_f64() / (iters + 1) as f64);
            }
            times.sort_by(f64::total_cmp);
            Ok(times[times.len() / 2])
        })();
        match res {
            Ok(t) => {
                let alpha = t / (m * horizon) as f64;
                alphas.push(alpha);
                lines.push(format!("(M={m},N={horizon}) {:.1} us", t * 1e6));
            }
            Err(e) => return failed(11, name, e),
        }
    }
    let max = alphas.iter().copied().fold(f64::MIN, f64::max);
    let min = alphas.iter().copied().fold(f64::MAX, f64::min);
    outcome(11, name, max / min <= 2.0, format!("{}; spread of t/(MN) {:.2}", lines.join(", "), max / min))
}

fn c12() -> Outcome {
    let name = "scalar problem";
    let res = (|| -> Result<(f64, f64, f64), Error> {
        let graph = BipartiteGraph::new([(0, 0)], vec![1], vec![1], vec![0])?;
        let problem = BlockProblem::new(
            graph,
            vec![BlockObjective::quadratic(DMatrix::identity(1, 1), DVector::zeros(1))?],
            vec![((0, 0), DMatrix::identity(1, 1))],
            vec![],
            DVector::from_vec(vec![1.0]),
            DVector::zeros(0),
            None,
        )?;
        let steps = StepData::compute(&problem)?;
        let reference = solve_reference(&problem)?;
        let trace = run(
            &problem,
            &steps,
            &DualPoint::zeros(problem.graph()),
            &RunConfig::new(Algorithm::Dg, StopRule::cap(1)),
            None,
        )?;
        Ok((trace.lambda.nu[0][0], trace.z.0[0][0], reference.f_star))
    })();
    match res {
        Ok((nu, z, f)) => outcome(12, name, nu == -1.0 && z == 1.0 && f == 0.5, format!("nu={nu}, z={z}, f*={f}")),
        Err(e) => failed(12, name, e),
    }
}

fn main() -> ExitCode {
    let mut results = Vec::new();
    match desk_runs() {
        Ok((desk, elapsed)) => {
            results.push(c1(&desk, elapsed));
            results.push(c2(&desk));
            results.push(c3(&desk));
            results.push(c4(&desk));
            results.push(c5(&desk));
            results.push(c6());
            results.push(c7());
            results.push(c8(&desk));
        }
        Err(e) => {
            for (id, name) in [(1, "ascent suite"), (2, "monotone distance"), (3, "gradient vs finite differences"), (4, "residual identity"), (5, "linear-rate evidence"), (8, "inequality suite")] {
                results.push(outcome(id, name, false, format!("desk runs failed: {e}")));
            }
            results.push(c6());
            results.push(c7());
        }
    }
    results.push(c9());
    results.push(c10());
    results.push(c11());
    results.push(c12());
    results.sort_by_key(|r| r.id);

    for r in &results {
        println!("[{}] C{} {}: {}", if r.pass { "PASS" } else { "FAIL" }, r.id, r.name, r.detail);
    }
    let failures = results.iter().filter(|r| !r.pass).count();
    println!("acceptance: {} passed, {failures} failed", results.len() - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
