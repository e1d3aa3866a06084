use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use tofflow_core::itof::{reconstruct_stack, DEFAULT_EPSILON};

use super::strip_extension;
use crate::error::{CliError, CliResult};
use crate::format::{RasterFile, RasterKind};
use crate::image::grayscale_png;
use crate::manifest::{Run, RunManifest};

#[derive(Clone, Debug, Args, Serialize)]
pub struct ReconstructArgs {
    /// Measurement stack (`.raw` with a `.json` sidecar).
    pub input: PathBuf,
    /// Denominator stabilizer.
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    /// Ground-truth depth raster to report errors against.
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,
    /// Output depth raster (`.raw`).
    #[arg(short = 'o', long = "output")]
    pub output: PathBuf,
}

#[derive(Debug, Serialize)]
struct FrequencyStats {
    frequency_hz: f64,
    mean_abs_error_m: f64,
}

pub fn run(args: &ReconstructArgs, argv: &[String]) -> CliResult<RunManifest> {
    let file = RasterFile::read(&args.input)?;
    file.expect_kind(RasterKind::Measurements, &args.input)?;
    let config = file.sensor_config()?;
    let stack = file.stack()?;
    let depth = reconstruct_stack(&stack, &config.frequencies_hz, config.taps, args.epsilon, None)?;

    let mut run = Run::new("reconstruct", argv, &strip_extension(&args.output, "raw"))?;
    run.input("stack.raw", &args.input)?;
    run.input("stack.json", &crate::format::sidecar_path(&args.input))?;
    let out = RasterFile::depth(&config, &depth)?;
    run.write("raw", &out.to_bytes())?;
    run.write("json", out.sidecar_json().as_bytes())?;
    for (k, d) in depth.iter().enumerate() {
        run.write(&format!("f{k}.png"), &grayscale_png(&d.values, 0.0, d.d_max()))?;
    }

    if let Some(gt_path) = &args.ground_truth {
        let gt = RasterFile::read(gt_path)?;
        gt.expect_kind(RasterKind::Depth, gt_path)?;
        run.input("ground_truth.raw", gt_path)?;
        let labels = gt.depth_images()?;
        if labels.len() != depth.len() {
            return Err(CliError::Input(format!(
                "ground truth has {} frequencies, stack has {}",
                labels.len(),
                depth.len()
            )));
        }
        let mut stats = Vec::new();
        for (d, l) in depth.iter().zip(&labels) {
            if d.values.shape() != l.values.shape() {
                return Err(CliError::Input("ground truth shape differs from the stack".into()));
            }
            let dmax = d.d_max();
            let sum: f64 = d
                .values
                .data()
                .iter()
                .zip(l.values.data())
                .map(|(a, b)| {
                    let e = (a - b).abs();
                    e.min(dmax - e)
                })
                .sum();
            let mean = sum / d.values.len() as f64;
            println!("{:.0} Hz: mean |d - d_gt| = {mean:.3e} m", d.frequency_hz);
            stats.push(FrequencyStats {
                frequency_hz: d.frequency_hz,
                mean_abs_error_m: mean,
            });
        }
        run.write_json("stats.json", &stats)?;
    } else {
        println!("reconstructed {} depth image(s)", depth.len());
    }
    run.finish(args, None)
}
