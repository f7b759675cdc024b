use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "dualgrad", version, about = "Weighted dual gradient experiments")]
pub struct Cli {
    /// Worker threads for the per-block solves. Results do not depend on it.
    #[arg(long, global = true, value_parser = clap::value_parser!(usize))]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded random instance.
    Generate(GenerateArgs),
    /// Check rank, strict feasibility and strong convexity of a problem file.
    Validate(ValidateArgs),
    /// Run DG or CG and write the iteration trace.
    Solve(SolveArgs),
    /// Run DG and CG to the same accuracy and report the iteration counts.
    Compare(CompareArgs),
    /// Build the block problem of a networked control system.
    Dmpc(DmpcArgs),
    /// Error-bound ratios and inequality checks for a DG trace.
    Probe(ProbeArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub m: usize,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub omega: usize,
    /// Include the softplus term (`--gamma`, `--gamma 1` or `--gamma 0`).
    #[arg(long, num_args = 0..=1, default_value = "0", default_missing_value = "1", value_parser = parse_switch)]
    pub gamma: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Use small row blocks so that the full constraint matrix has full row rank.
    #[arg(long)]
    pub full_row_rank: bool,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_switch(s: &str) -> Result<bool, String> {
    match s {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        other => Err(format!("expected 0 or 1, got {other:?}")),
    }
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub problem: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlgoArg {
    Dg,
    Cg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StopArg {
    Rel,
    Prox,
    Cap,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub problem: PathBuf,
    #[arg(long, value_enum, default_value = "dg")]
    pub algo: AlgoArg,
    #[arg(long, default_value_t = 1e-4)]
    pub eps: f64,
    #[arg(long, value_enum, default_value = "rel")]
    pub stop: StopArg,
    #[arg(long, default_value_t = dualgrad_core::dual::DEFAULT_ITERATION_CAP)]
    pub cap: usize,
    /// Trace CSV output.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Reference file, or `auto` to compute and cache it beside the problem.
    #[arg(long = "ref")]
    pub reference: Option<String>,
    /// Summary JSON output (also printed to stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub problem: PathBuf,
    #[arg(long, default_value_t = 1e-2)]
    pub eps: f64,
    #[arg(long, default_value_t = dualgrad_core::dual::DEFAULT_ITERATION_CAP)]
    pub cap: usize,
    /// Reference file, or `auto` (the default).
    #[arg(long = "ref", default_value = "auto")]
    pub reference: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DmpcArgs {
    #[arg(long)]
    pub system: PathBuf,
    /// Overrides the horizon stored in the system file.
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub problem: PathBuf,
    /// DG trace written by `solve`; it is replayed to recover the multipliers.
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long = "ref", default_value = "auto")]
    pub reference: String,
    /// Point pairs for the inequality checks.
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_switch_forms() {
        let parse = |extra: &[&str]| {
            let mut argv = vec!["dualgrad", "generate", "--m", "2", "--n", "1", "--omega", "1", "--out", "x"];
            argv.extend_from_slice(extra);
            match Cli::try_parse_from(argv).unwrap().command {
                Command::Generate(g) => g.gamma,
                _ => unreachable!(),
            }
        };
        assert!(!parse(&[]));
        assert!(parse(&["--gamma"]));
        assert!(parse(&["--gamma", "1"]));
        assert!(!parse(&["--gamma", "0"]));
    }

    #[test]
    fn jobs_is_global() {
        let cli = Cli::try_parse_from(["dualgrad", "validate", "--problem", "p.json", "--jobs", "4"]).unwrap();
        assert_eq!(cli.jobs, Some(4));
    }
}
