use std::path::PathBuf;

use clap::Args;

use crate::error::{CliError, CliResult};
use crate::manifest::{hash_file, RunManifest};

#[derive(Clone, Debug, Args)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run.
    pub manifest: PathBuf,
    /// Write the outputs under this path instead of the recorded one.
    #[arg(short = 'o', long = "output")]
    pub output: Option<PathBuf>,
}

/// Replaces the value of `-o` / `--output` in an argument list.
pub fn override_output(args: &[String], output: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(args.len());
    let mut replace_next = false;
    for a in args {
        if replace_next {
            out.push(output.to_string());
            replace_next = false;
        } else if a == "-o" || a == "--output" {
            out.push(a.clone());
            replace_next = true;
        } else if a.starts_with("--output=") {
            out.push(format!("--output={output}"));
        } else if a.starts_with("-o") && a.len() > 2 && !a.starts_with("--") {
            out.push(format!("-o{output}"));
        } else {
            out.push(a.clone());
        }
    }
    out
}

pub fn run(args: &ReplayArgs) -> CliResult<RunManifest> {
    let old = RunManifest::read(&args.manifest)?;
    if old.tool != crate::manifest::TOOL {
        return Err(CliError::Input(format!("not a {} manifest", crate::manifest::TOOL)));
    }
    for input in &old.inputs {
        let now = hash_file(&input.path)?;
        if now != input.sha256 {
            return Err(CliError::Verification(format!(
                "input {} ({}) changed since the recorded run",
                input.role,
                input.path.display()
            )));
        }
    }
    let argv = match &args.output {
        Some(o) => override_output(&old.args, &o.to_string_lossy()),
        None => old.args.clone(),
    };
    let new = crate::run(argv)?
        .ok_or_else(|| CliError::Input("recorded arguments did not run a command".into()))?;
    let mut mismatched = Vec::new();
    for a in &old.outputs {
        match new.output(&a.role) {
            Some(b) if b.sha256 == a.sha256 => {}
            _ => mismatched.push(a.role.clone()),
        }
    }
    if new.outputs.len() != old.outputs.len() {
        mismatched.push("<output set>".into());
    }
    if mismatched.is_empty() {
        println!("replay reproduced {} outputs byte for byte", old.outputs.len());
        Ok(new)
    } else {
        Err(CliError::Verification(format!(
            "replay differs in {}",
            mismatched.join(", ")
        )))
    }
}
