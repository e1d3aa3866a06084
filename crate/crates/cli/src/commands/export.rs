use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use super::strip_extension;
use crate::error::{CliError, CliResult};
use crate::format::RasterFile;
use crate::manifest::{Run, RunManifest};

#[derive(Clone, Debug, Args, Serialize)]
pub struct ExportArgs {
    /// Raster file (`.raw` with a `.json` sidecar).
    pub input: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub frame: usize,
    /// Output `.pfm` file.
    #[arg(short = 'o', long = "output")]
    pub output: PathBuf,
}

/// Single-channel little-endian PFM; rows run bottom to top.
pub fn pfm_bytes(raster: &tofflow_core::Raster) -> Vec<u8> {
    let (w, h) = raster.shape();
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    for y in (0..h).rev() {
        for x in 0..w {
            out.extend_from_slice(&(raster.get(x, y) as f32).to_le_bytes());
        }
    }
    out
}

pub fn run(args: &ExportArgs, argv: &[String]) -> CliResult<RunManifest> {
    let file = RasterFile::read(&args.input)?;
    let frame = file.frames.get(args.frame).ok_or_else(|| {
        CliError::Input(format!(
            "frame {} out of range ({} frames)",
            args.frame,
            file.frames.len()
        ))
    })?;
    let mut run = Run::new("export-pfm", argv, &strip_extension(&args.output, "pfm"))?;
    run.input("raster.raw", &args.input)?;
    run.write("pfm", &pfm_bytes(frame))?;
    run.finish(args, None)
}
