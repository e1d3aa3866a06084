use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;
use tofflow_core::itof::{reconstruct_stack, MeasurementStack, DEFAULT_EPSILON};
use tofflow_core::losses::{evaluate, FlowProblem, LossReport, LossWeights, SimilarityMeasure};
use tofflow_core::optim::{optimize_problem, Method, OptimConfig, OptimError, Trace};
use tofflow_core::warp::warp;
use tofflow_core::FlowField;

use super::OnOff;
use crate::error::{CliError, CliResult};
use crate::format::{RasterFile, RasterKind};
use crate::image::grayscale_png;
use crate::manifest::{Run, RunManifest};

#[derive(Clone, Debug, Args, Serialize)]
pub struct OptimizeArgs {
    /// Prefix of a simulated bundle (`PREFIX.moving.raw`, `PREFIX.static.raw`,
    /// `PREFIX.depth_gt.raw`).
    #[arg(long)]
    pub bundle: PathBuf,
    /// Number of updates; 0 only evaluates the zero flow.
    #[arg(long, default_value_t = 500)]
    pub iters: usize,
    #[arg(long, default_value_t = 0.1)]
    pub step: f64,
    #[arg(long, default_value = "adam")]
    pub method: String,
    /// Stop when the total loss changes by less than this; 0 disables.
    #[arg(long, default_value_t = 0.0)]
    pub tolerance: f64,
    /// Coarse-to-fine over three resolutions.
    #[arg(long)]
    pub pyramid: bool,
    #[arg(long, value_enum, default_value_t = OnOff::On)]
    pub unwrap: OnOff,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_smooth: f64,
    #[arg(long, default_value_t = 0.1)]
    pub lambda_edge: f64,
    #[arg(long, default_value_t = 0.01)]
    pub lambda_sim: f64,
    /// Edge weighting inside the smoothness loss.
    #[arg(long, default_value_t = 10.0)]
    pub smooth_edge_weight: f64,
    /// Shift bounding the edge-loss gradient.
    #[arg(long, default_value_t = 100.0)]
    pub edge_shift: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub edge_epsilon: f64,
    #[arg(long, default_value = "cosine")]
    pub similarity: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output prefix.
    #[arg(short = 'o', long = "output")]
    pub output: PathBuf,
}

#[derive(Debug, Serialize)]
struct Parameters<'a> {
    args: &'a OptimizeArgs,
    weights: &'a LossWeights,
    optimizer: Option<&'a OptimConfig>,
}

#[derive(Debug, Serialize)]
struct Metrics {
    initial: Headline,
    r#final: Headline,
    best_iteration: usize,
    converged: bool,
}

#[derive(Debug, Serialize)]
struct Headline {
    #[serde(rename = "L_photo")]
    photo: f64,
    #[serde(rename = "L_ToF")]
    tof: f64,
    mask: f64,
}

impl From<&LossReport> for Headline {
    fn from(r: &LossReport) -> Self {
        Self {
            photo: r.photo,
            tof: r.tof,
            mask: r.masked_fraction,
        }
    }
}

fn bundle_file(prefix: &Path, name: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(format!(".{name}.raw"));
    PathBuf::from(s)
}

fn warp_stack(stack: &MeasurementStack, flows: &[FlowField], reference: usize) -> CliResult<MeasurementStack> {
    let frames = stack
        .frames
        .iter()
        .zip(&stack.meta)
        .map(|(f, m)| {
            if m.timestep == reference {
                Ok(f.clone())
            } else {
                Ok(warp(f, &flows[m.timestep])?.warped)
            }
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(MeasurementStack::new(frames, stack.meta.clone())?)
}

pub fn run(args: &OptimizeArgs, argv: &[String]) -> CliResult<RunManifest> {
    let weights = LossWeights {
        smooth: args.lambda_smooth,
        edge: args.lambda_edge,
        sim: args.lambda_sim,
        smooth_edge_weight: args.smooth_edge_weight,
        edge_shift: args.edge_shift,
        edge_epsilon: args.edge_epsilon,
        similarity: args.similarity.parse::<SimilarityMeasure>()?,
    };
    weights.validate()?;
    let method: Method = args.method.parse()?;

    let paths = ["moving", "static", "depth_gt"].map(|n| bundle_file(&args.bundle, n));
    let moving_file = RasterFile::read(&paths[0])?;
    moving_file.expect_kind(RasterKind::Measurements, &paths[0])?;
    let static_file = RasterFile::read(&paths[1])?;
    static_file.expect_kind(RasterKind::Measurements, &paths[1])?;
    let depth_file = RasterFile::read(&paths[2])?;
    depth_file.expect_kind(RasterKind::Depth, &paths[2])?;
    let config = moving_file.sensor_config()?;
    if static_file.sensor_config()? != config || depth_file.sensor_config()? != config {
        return Err(CliError::Input("bundle files disagree on the capture configuration".into()));
    }
    let moving = moving_file.stack()?;
    let static_gt = static_file.stack()?;
    let problem = FlowProblem::new(
        config.clone(),
        &moving,
        &static_gt,
        depth_file.depth_images()?,
        args.epsilon,
        args.unwrap.enabled(),
    )?;

    let mut run = Run::new("optimize", argv, &args.output)?;
    for (name, p) in ["moving", "static", "depth_gt"].iter().zip(&paths) {
        run.input(&format!("{name}.raw"), p)?;
        run.input(&format!("{name}.json"), &crate::format::sidecar_path(p))?;
    }

    let optim = (args.iters > 0).then(|| OptimConfig {
        method,
        step: args.step,
        iterations: args.iters,
        tolerance: args.tolerance,
        seed: args.seed,
        unwrap: args.unwrap.enabled(),
        epsilon: args.epsilon,
        pyramid: args.pyramid,
    });
    let parameters = Parameters {
        args,
        weights: &weights,
        optimizer: optim.as_ref(),
    };

    let (flows, trace) = match &optim {
        None => {
            let zeros: Vec<FlowField> = (0..config.num_timesteps())
                .map(|_| FlowField::zeros(problem.width(), problem.height()))
                .collect();
            let motion = LossWeights { sim: 0.0, ..weights.clone() };
            let report = evaluate(&problem, &zeros, &motion, false)?.report;
            let trace = Trace {
                reports: vec![report],
                converged: false,
                best_iteration: 0,
            };
            (zeros, trace)
        }
        Some(cfg) => match optimize_problem(&problem, &weights, cfg) {
            Ok(r) => r,
            Err(OptimError::Diverged { iteration, trace }) => {
                run.write_csv("trace.csv", &trace.reports)?;
                run.finish(&parameters, Some(args.seed))?;
                return Err(CliError::Diverged(format!(
                    "loss became non-finite at iteration {iteration}; trace written"
                )));
            }
            Err(e) => return Err(e.into()),
        },
    };

    run.write_csv("trace.csv", &trace.reports)?;
    run.write_raster("flows", &RasterFile::flows(&config, &flows)?)?;
    let warped = warp_stack(&moving, &flows, config.reference_timestep)?;
    run.write_raster("warped", &RasterFile::measurements(&config, &warped)?)?;
    let depth = reconstruct_stack(&warped, &config.frequencies_hz, config.taps, args.epsilon, None)?;
    run.write_raster("depth", &RasterFile::depth(&config, &depth)?)?;
    for (k, d) in depth.iter().enumerate() {
        run.write(&format!("depth.f{k}.png"), &grayscale_png(&d.values, 0.0, d.d_max()))?;
    }
    let first = &trace.reports[0];
    let best = trace.best().unwrap_or(first);
    let metrics = Metrics {
        initial: first.into(),
        r#final: best.into(),
        best_iteration: trace.best_iteration,
        converged: trace.converged,
    };
    run.write_json("metrics.json", &metrics)?;
    println!(
        "initial  L_photo {:.6}  L_ToF {:.6}  mask {:.4}",
        first.photo, first.tof, first.masked_fraction
    );
    println!(
        "final    L_photo {:.6}  L_ToF {:.6}  mask {:.4}  (iteration {})",
        best.photo, best.tof, best.masked_fraction, trace.best_iteration
    );
    run.finish(&parameters, Some(args.seed))
}
