use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use kr_agcg::agcg::Termination;
use kr_agcg::config::ExperimentConfig;
use kr_agcg::experiment::{certify_result, check_result, kr_norm_json, run_experiment, ResultFile, RunOptions};
use kr_agcg::measures::KrParams;

/// Sparse measure reconstruction with unbalanced Kantorovich-Rubinstein regularization.
#[derive(Debug, Parser)]
#[command(name = "kr-agcg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the solver on an experiment config and write its outputs.
    Solve {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Output directory (default: `output_dir` of the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Zero the wall-clock column so reruns give byte-identical histories.
        #[arg(long)]
        deterministic: bool,
    },
    /// Rerun the first-order and assumption diagnostics on a stored result.
    Check { result: PathBuf },
    /// Evaluate the dual certificate of a stored result on grids (q.csv, psi.csv).
    Certify {
        result: PathBuf,
        /// Output directory (default: next to the result file).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// KR norm of a measure given as a JSON list of `{"x": [..], "w": ..}` atoms.
    KrNorm {
        measure: PathBuf,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = 1.0)]
        p: f64,
    },
}

#[derive(Debug, Args)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            cfg.solver.seed = s;
        }
        if let Some(e) = self.epsilon {
            cfg.solver.epsilon = e;
        }
        if let Some(m) = self.max_iter {
            cfg.solver.max_outer_iterations = m;
        }
    }
}

// exit codes: 0 ok, 1 error, 2 iteration cap reached, 3 diagnostics failed
fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> kr_agcg::Result<u8> {
    match cli.command {
        Command::Solve { config, overrides, out, deterministic } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            overrides.apply(&mut cfg);
            cfg.validate()?;
            let outcome = run_experiment(&cfg, &RunOptions { out_dir: out, deterministic })?;
            println!("{}", outcome.summary());
            Ok(if outcome.result.termination == Termination::MaxIter {
                2
            } else if !outcome.reports.optimality.pass {
                3
            } else {
                0
            })
        }
        Command::Check { result } => {
            let file = ResultFile::load(&result)?;
            let (_, reports) = check_result(&file)?;
            println!("{}", serde_json::to_string_pretty(&reports)?);
            Ok(if reports.optimality.pass { 0 } else { 3 })
        }
        Command::Certify { result, out } => {
            let file = ResultFile::load(&result)?;
            let dir = out.unwrap_or_else(|| result.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf));
            certify_result(&file, &dir)?;
            println!("wrote certificate grids to {}", dir.display());
            Ok(0)
        }
        Command::KrNorm { measure, alpha, beta, p } => {
            let params = KrParams::new(alpha, beta, p)?;
            println!("{}", kr_norm_json(&std::fs::read_to_string(measure)?, &params)?);
            Ok(0)
        }
    }
}
