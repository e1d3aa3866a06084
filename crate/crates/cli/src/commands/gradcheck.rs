use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use tofflow_core::optim::{gradcheck_all, FD_STEP};

use crate::error::{CliError, CliResult};
use crate::manifest::{Run, RunManifest};

#[derive(Clone, Debug, Args, Serialize)]
pub struct GradcheckArgs {
    /// Accepted trials per op.
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output prefix.
    #[arg(short = 'o', long = "output")]
    pub output: PathBuf,
}

#[derive(Serialize)]
struct Row {
    op: &'static str,
    trials: usize,
    rejected: usize,
    max_rel_error: f64,
    threshold: f64,
    passed: bool,
}

pub fn run(args: &GradcheckArgs, argv: &[String]) -> CliResult<RunManifest> {
    if args.trials == 0 {
        return Err(CliError::Input("--trials must be >= 1".into()));
    }
    let rows: Vec<Row> = gradcheck_all(args.trials, args.seed)
        .into_iter()
        .map(|r| Row {
            op: r.op.name(),
            trials: r.trials,
            rejected: r.rejected,
            max_rel_error: r.max_rel_error,
            threshold: r.threshold,
            passed: r.passed,
        })
        .collect();
    println!("central differences, step {FD_STEP:e}");
    println!("{:<14} {:>7} {:>9} {:>13} {:>9}  status", "op", "trials", "rejected", "max rel err", "limit");
    for r in &rows {
        println!(
            "{:<14} {:>7} {:>9} {:>13.3e} {:>9.0e}  {}",
            r.op,
            r.trials,
            r.rejected,
            r.max_rel_error,
            r.threshold,
            if r.passed { "ok" } else { "FAIL" }
        );
    }
    let mut run = Run::new("gradcheck", argv, &args.output)?;
    run.write_csv("report.csv", &rows)?;
    let manifest = run.finish(args, Some(args.seed))?;
    let failed: Vec<&str> = rows.iter().filter(|r| !r.passed).map(|r| r.op).collect();
    if failed.is_empty() {
        Ok(manifest)
    } else {
        Err(CliError::Verification(format!(
            "gradient check failed for {}",
            failed.join(", ")
        )))
    }
}
