use std::fs;
use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use tofflow_core::itof::{SensorConfig, Taps};
use tofflow_core::sim::{simulate_bundle, SceneSpec};

use crate::error::{CliError, CliResult};
use crate::format::RasterFile;
use crate::manifest::{Run, RunManifest};

#[derive(Clone, Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// Scene description (JSON).
    #[arg(long)]
    pub scene: PathBuf,
    /// Modulation frequencies in Hz, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "20e6")]
    pub frequencies: Vec<f64>,
    /// Taps per pixel: 1, 2 or 4.
    #[arg(long, default_value_t = 1)]
    pub taps: u8,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Shot-noise scale; 0 disables noise.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Output prefix.
    #[arg(short = 'o', long = "output")]
    pub output: PathBuf,
}

pub fn read_scene(path: &std::path::Path) -> CliResult<SceneSpec> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        CliError::Input(format!("{}: field {field}: {}", path.display(), e.inner()))
    })
}

pub fn run(args: &SimulateArgs, argv: &[String]) -> CliResult<RunManifest> {
    if !(args.noise >= 0.0) {
        return Err(CliError::Input(format!("--noise must be >= 0, got {}", args.noise)));
    }
    let scene = read_scene(&args.scene)?;
    let config = SensorConfig::new(args.frequencies.clone(), Taps::try_from(args.taps)?)?;
    let bundle = simulate_bundle(&scene, &config, args.noise, args.seed)?;

    let mut run = Run::new("simulate", argv, &args.output)?;
    run.input("scene", &args.scene)?;
    run.write_raster("moving", &RasterFile::measurements(&config, &bundle.moving)?)?;
    run.write_raster("static", &RasterFile::measurements(&config, &bundle.static_gt)?)?;
    run.write_raster("depth_gt", &RasterFile::depth(&config, &bundle.depth_gt)?)?;
    run.write_raster("flows_gt", &RasterFile::flows(&config, &bundle.true_flows)?)?;
    run.write_raster("consistency", &RasterFile::masks(&config, &bundle.consistency)?)?;
    println!(
        "simulated {}×{}: {} frames over {} timesteps ({} tap, {} frequencies)",
        scene.width,
        scene.height,
        config.num_frames(),
        config.num_timesteps(),
        config.taps.count(),
        config.num_frequencies()
    );
    run.finish(args, Some(args.seed))
}
