use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::Serialize;
use tofflow_core::itof::{SensorConfig, Taps, DEFAULT_EPSILON};
use tofflow_core::optim::{
    converged_mask, depth_error, iou, same_branch_mask, toy_problem, toy_reconstruct_m3, ToyConfig,
};
use tofflow_core::Raster;

use crate::error::CliResult;
use crate::format::{RasterFile, RasterKind};
use crate::image::{grayscale_png, side_by_side};
use crate::manifest::{Run, RunManifest};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum UnwrapMode {
    On,
    Off,
    Both,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct ToyArgs {
    #[arg(long, default_value_t = 128)]
    pub width: usize,
    #[arg(long, default_value_t = 128)]
    pub height: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = UnwrapMode::Both)]
    pub unwrap: UnwrapMode,
    /// Gradient-descent steps.
    #[arg(long, default_value_t = 2000)]
    pub iters: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub step: f64,
    /// Output prefix.
    #[arg(short = 'o', long = "output")]
    pub output: PathBuf,
}

#[derive(Debug, Serialize)]
pub struct ModeSummary {
    pub unwrap: bool,
    pub converged_fraction: f64,
    pub same_branch_fraction: f64,
    pub same_branch_iou: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
}

pub fn run(args: &ToyArgs, argv: &[String]) -> CliResult<RunManifest> {
    let p = toy_problem(args.width, args.height, args.seed)?;
    let config = SensorConfig::new(vec![p.frequency_hz], Taps::One)?;
    let dmax = p.label.d_max();
    let mut run = Run::new("toy", argv, &args.output)?;
    let field = RasterFile::new(
        &config,
        RasterKind::Scalar,
        vec![p.m0.clone(), p.m1.clone(), p.m2.clone(), p.m3.clone(), p.label.values.clone()],
    )?;
    run.write_raster("field", &field)?;

    let same = same_branch_mask(&p.m0, &p.m1, &p.m2, &p.m3)?;
    let n = (args.width * args.height) as f64;
    let modes: &[bool] = match args.unwrap {
        UnwrapMode::On => &[true],
        UnwrapMode::Off => &[false],
        UnwrapMode::Both => &[true, false],
    };
    let mut summaries = Vec::new();
    let mut errors: Vec<Raster> = Vec::new();
    for &unwrap in modes {
        let cfg = ToyConfig {
            step: args.step,
            iterations: args.iters,
            unwrap,
            epsilon: DEFAULT_EPSILON,
            tolerance: 0.0,
        };
        let (m3, trace) = toy_reconstruct_m3(&p.m0, &p.m1, &p.m2, &p.label, p.frequency_hz, &cfg)?;
        let err = depth_error(&p.m0, &p.m1, &p.m2, &m3, &p.label, cfg.epsilon)?;
        let conv = converged_mask(&err, dmax);
        let tag = if unwrap { "unwrap" } else { "wrapped" };
        run.write_raster(&format!("{tag}.m3"), &RasterFile::new(&config, RasterKind::Scalar, vec![m3])?)?;
        run.write_raster(
            &format!("{tag}.error"),
            &RasterFile::new(&config, RasterKind::Error, vec![err.clone()])?,
        )?;
        run.write(&format!("{tag}.error.png"), &grayscale_png(&err, 0.0, dmax))?;
        run.write_csv(&format!("{tag}.trace.csv"), &trace.reports)?;
        let s = ModeSummary {
            unwrap,
            converged_fraction: conv.count_valid() as f64 / n,
            same_branch_fraction: same.count_valid() as f64 / n,
            same_branch_iou: iou(&conv, &same)?,
            initial_loss: trace.reports[0].tof,
            final_loss: trace.reports.last().map_or(f64::NAN, |r| r.tof),
        };
        println!(
            "unwrap {:<3}  converged {:.4}  IoU vs same-branch mask {:.4}  loss {:.4e} -> {:.4e}",
            if unwrap { "on" } else { "off" },
            s.converged_fraction,
            s.same_branch_iou,
            s.initial_loss,
            s.final_loss
        );
        summaries.push(s);
        errors.push(err);
    }
    if errors.len() == 2 {
        let both = side_by_side(&[&errors[0], &errors[1]]);
        run.write("error.png", &grayscale_png(&both, 0.0, dmax))?;
    }
    run.write_json("summary.json", &summaries)?;
    run.finish(args, Some(args.seed))
}
