use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use dualgrad_core::dmpc::build_problem;
use dualgrad_core::dual::{compare, run};
use dualgrad_core::errorbound::{check_campaign, probe_error_bound, sigma_dw, CampaignReport, ProbeReport};
use dualgrad_core::gen::{generate_with, GenConfig};
use dualgrad_core::io::{
    load_problem, load_reference, load_system, reference_cache_path, save_problem, save_reference, trace_from_csv,
    trace_to_csv,
};
use dualgrad_core::model::validate;
use dualgrad_core::reference::solve_reference;
use dualgrad_core::{
    Algorithm, BlockProblem, CompareReport, DualPoint, RefSolution, RunConfig, StepData, StopMode, StopRule, TraceRow,
};

use crate::args::{AlgoArg, Cli, Command, CompareArgs, DmpcArgs, GenerateArgs, ProbeArgs, SolveArgs, StopArg, ValidateArgs};

/// Bad flags or inconsistent inputs; reported with exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    let parallel = cli.jobs.is_some_and(|j| j > 1);
    match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Solve(a) => cmd_solve(a, parallel),
        Command::Compare(a) => cmd_compare(a, parallel),
        Command::Dmpc(a) => cmd_dmpc(a),
        Command::Probe(a) => cmd_probe(a),
    }
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    if let Some(path) = out {
        fs::write(path, format!("{text}\n")).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("{text}");
    Ok(())
}

fn read_problem(path: &Path) -> Result<BlockProblem> {
    load_problem(path).with_context(|| format!("loading problem {}", path.display()))
}

/// Loads a reference file, or with `auto` reuses the cache entry keyed by
/// the problem file's SHA-256 and fills it on a miss.
fn obtain_reference(spec: &str, problem_path: &Path, problem: &BlockProblem) -> Result<RefSolution> {
    if spec != "auto" {
        let path = Path::new(spec);
        return load_reference(path, problem).with_context(|| format!("loading reference {}", path.display()));
    }
    let bytes = fs::read(problem_path).with_context(|| format!("reading {}", problem_path.display()))?;
    let sha = hex::encode(Sha256::digest(&bytes));
    let cache = reference_cache_path(problem_path, &sha);
    if cache.exists() {
        if let Ok(r) = load_reference(&cache, problem) {
            return Ok(r);
        }
    }
    let r = solve_reference(problem)?;
    if r.quality.low_quality {
        eprintln!("warning: reference did not reach the target accuracy (prox {:e})", r.quality.prox_w);
    }
    save_reference(&r, Some(sha), &cache).with_context(|| format!("writing {}", cache.display()))?;
    Ok(r)
}

#[derive(Serialize)]
struct GenerateSummary {
    n: usize,
    p: usize,
    q: usize,
    omega: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    if a.m == 0 || a.n == 0 {
        return Err(usage("--m and --n must be positive"));
    }
    if a.omega == 0 || a.omega > a.m {
        return Err(usage(format!("--omega must lie in [1, {}], got {}", a.m, a.omega)));
    }
    let mut cfg = GenConfig::new(a.m, a.n, a.omega, a.gamma, a.seed);
    if a.full_row_rank {
        cfg = cfg.full_row_rank();
    }
    let problem = generate_with(&cfg)?;
    save_problem(&problem, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let g = problem.graph();
    emit(&GenerateSummary { n: g.total_n(), p: g.total_p(), q: g.total_q(), omega: g.sparsity(), seed: Some(a.seed) }, None)
}

fn cmd_validate(a: &ValidateArgs) -> Result<()> {
    let problem = read_problem(&a.problem)?;
    let report = validate(&problem);
    #[derive(Serialize)]
    struct Out<'a> {
        valid: bool,
        #[serde(flatten)]
        report: &'a dualgrad_core::model::ValidationReport,
    }
    emit(&Out { valid: report.is_valid(), report: &report }, None)
}

#[derive(Serialize)]
struct SolveSummary {
    algorithm: Algorithm,
    status: dualgrad_core::RunStatus,
    iterations: usize,
    f_star: Option<f64>,
    last: TraceRow,
    global_lipschitz: f64,
    w_max: f64,
    w_min: f64,
    ascent_violations: usize,
    dual_monotone: bool,
}

fn cmd_solve(a: &SolveArgs, parallel: bool) -> Result<()> {
    let problem = read_problem(&a.problem)?;
    let mode = match a.stop {
        StopArg::Rel => StopMode::RelativePrimal,
        StopArg::Prox => StopMode::ProxResidual,
        StopArg::Cap => StopMode::IterationCap,
    };
    let stop = StopRule::new(mode, a.eps, a.cap).map_err(|e| usage(e.to_string()))?;
    if mode == StopMode::RelativePrimal && a.reference.is_none() {
        return Err(usage("--stop rel needs a reference (--ref FILE or --ref auto)"));
    }
    let reference = match &a.reference {
        Some(spec) => Some(obtain_reference(spec, &a.problem, &problem)?),
        None => None,
    };
    let steps = StepData::compute(&problem)?;
    let algorithm = match a.algo {
        AlgoArg::Dg => Algorithm::Dg,
        AlgoArg::Cg => Algorithm::Cg,
    };
    let mut cfg = RunConfig::new(algorithm, stop);
    cfg.parallel = parallel;
    let trace = run(&problem, &steps, &DualPoint::zeros(problem.graph()), &cfg, reference.as_ref())?;
    if let Some(path) = &a.trace {
        fs::write(path, trace_to_csv(&trace.rows)).with_context(|| format!("writing {}", path.display()))?;
    }
    let last = *trace.rows.last().context("run produced no rows")?;
    emit(
        &SolveSummary {
            algorithm,
            status: trace.status,
            iterations: trace.iterations,
            f_star: reference.as_ref().map(|r| r.f_star),
            last,
            global_lipschitz: steps.global_lipschitz,
            w_max: steps.weights.max(),
            w_min: steps.weights.min(),
            ascent_violations: trace.ascent_violations,
            dual_monotone: trace.dual_monotone(dualgrad_core::dual::ASCENT_SLACK),
        },
        a.out.as_deref(),
    )
}

#[derive(Serialize)]
struct CompareOut {
    #[serde(flatten)]
    report: CompareReport,
    f_star: f64,
    /// Set when either run stopped at the cap before reaching the tolerance.
    non_converged: bool,
}

fn cmd_compare(a: &CompareArgs, parallel: bool) -> Result<()> {
    if a.eps.is_nan() || a.eps <= 0.0 {
        return Err(usage("--eps must be positive"));
    }
    let problem = read_problem(&a.problem)?;
    let reference = obtain_reference(&a.reference, &a.problem, &problem)?;
    let steps = StepData::compute(&problem)?;
    let report = compare(&problem, &steps, &reference, a.eps, a.cap, parallel)?;
    let non_converged = !(report.dg_converged && report.cg_converged);
    if non_converged {
        eprintln!("warning: a run reached the iteration cap before the tolerance");
    }
    emit(&CompareOut { report, f_star: reference.f_star, non_converged }, a.out.as_deref())
}

fn cmd_dmpc(a: &DmpcArgs) -> Result<()> {
    let system = load_system(&a.system, a.horizon).with_context(|| format!("loading system {}", a.system.display()))?;
    let problem = build_problem(&system)?;
    save_problem(&problem, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let g = problem.graph();
    emit(
        &GenerateSummary { n: g.total_n(), p: g.total_p(), q: g.total_q(), omega: g.sparsity(), seed: None },
        None,
    )
}

#[derive(Serialize)]
struct ProbeOut {
    rows: usize,
    probe: Option<ProbeReport>,
    /// Why the probe was skipped, if it was.
    probe_skipped: Option<String>,
    sigma_dw: Option<f64>,
    kappa_bound: Option<f64>,
    within_bound: Option<bool>,
    campaign: CampaignReport,
}

fn same_value(a: f64, b: f64) -> bool {
    (a.is_nan() && b.is_nan()) || (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

fn cmd_probe(a: &ProbeArgs) -> Result<()> {
    let problem = read_problem(&a.problem)?;
    let text = fs::read_to_string(&a.trace).with_context(|| format!("reading {}", a.trace.display()))?;
    let recorded = trace_from_csv(&text)?;
    let rounds = recorded.len().checked_sub(1).ok_or_else(|| usage("trace has no rows"))?;
    let reference = obtain_reference(&a.reference, &a.problem, &problem)?;
    let steps = StepData::compute(&problem)?;

    // the CSV has no multipliers, so replay the run that produced it
    let mut cfg = RunConfig::new(Algorithm::Dg, StopRule::cap(rounds.max(1)));
    cfg.check_invariants = false;
    let replay = run(&problem, &steps, &DualPoint::zeros(problem.graph()), &cfg, Some(&reference))?;
    let matches = recorded.iter().zip(&replay.rows).all(|(r, p)| same_value(r.dual, p.dual) && same_value(r.step_w, p.step_w));
    if !matches {
        return Err(usage("trace does not match a DG run from zero on this problem"));
    }
    let mut replay = replay;
    replay.rows.truncate(recorded.len());

    let (probe, probe_skipped) = match probe_error_bound(&problem, &steps.weights, &replay, &reference) {
        Ok(p) => (Some(p), None),
        Err(dualgrad_core::Error::Unsupported(msg)) => (None, Some(msg)),
        Err(e) => return Err(e.into()),
    };
    let sigma = match sigma_dw(&problem, &steps.weights) {
        Ok(s) if probe.is_some() => Some(s),
        Ok(_) | Err(dualgrad_core::Error::Unsupported(_)) => None,
        Err(e) => return Err(e.into()),
    };
    let kappa_bound = sigma.map(|s| 2.0 / s);
    let within_bound = match (&probe, kappa_bound) {
        (Some(p), Some(b)) => Some(p.violations == 0 && p.kappa_hat <= 1.01 * b),
        _ => None,
    };
    let campaign = check_campaign(&problem, &steps.weights, &reference.lambda_ref, a.samples, a.seed)?;
    emit(
        &ProbeOut { rows: recorded.len(), probe, probe_skipped, sigma_dw: sigma, kappa_bound, within_bound, campaign },
        a.out.as_deref(),
    )
}
