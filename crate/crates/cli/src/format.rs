//! Raw little-endian `f32` rasters with a JSON sidecar.
//!
//! `name.raw` holds `frames × height × width` floats, frame-major then
//! row-major. `name.json` carries the shape and the capture configuration
//! the frames belong to.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tofflow_core::itof::{DepthImage, MeasurementStack, SensorConfig, Taps};
use tofflow_core::{FlowField, Mask, Raster};

use crate::error::{CliError, CliResult};

pub const DTYPE: &str = "f32";
pub const ENDIANNESS: &str = "LE";

/// What the frames of a raster file hold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RasterKind {
    /// One frame per correlation sample, in capture order.
    Measurements,
    /// Wrapped depth in meters, one frame per frequency.
    Depth,
    /// `u` and `v` per timestep.
    Flow,
    /// 1 for valid, 0 for invalid, one frame per timestep.
    Mask,
    /// Per-pixel error in meters.
    Error,
    /// Unitless values.
    Scalar,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub frequencies_hz: Vec<f64>,
    pub phase_shifts: Vec<f64>,
    pub taps: u8,
    pub timestep_layout: Vec<usize>,
    pub reference_timestep: usize,
    pub dtype: String,
    pub endianness: String,
    pub kind: RasterKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RasterFile {
    pub sidecar: Sidecar,
    pub frames: Vec<Raster>,
}

pub fn sidecar_path(raw: &Path) -> PathBuf {
    raw.with_extension("json")
}

impl RasterFile {
    pub fn new(config: &SensorConfig, kind: RasterKind, frames: Vec<Raster>) -> CliResult<Self> {
        let first = frames
            .first()
            .ok_or_else(|| CliError::Input("raster file needs at least one frame".into()))?;
        let (width, height) = first.shape();
        if frames.iter().any(|f| f.shape() != (width, height)) {
            return Err(CliError::Input("frames differ in shape".into()));
        }
        Ok(Self {
            sidecar: Sidecar {
                width,
                height,
                frames: frames.len(),
                frequencies_hz: config.frequencies_hz.clone(),
                phase_shifts: config.phase_shifts.clone(),
                taps: config.taps.into(),
                timestep_layout: config.timestep_layout.clone(),
                reference_timestep: config.reference_timestep,
                dtype: DTYPE.into(),
                endianness: ENDIANNESS.into(),
                kind,
            },
            frames,
        })
    }

    pub fn measurements(config: &SensorConfig, stack: &MeasurementStack) -> CliResult<Self> {
        Self::new(config, RasterKind::Measurements, stack.frames.clone())
    }

    pub fn depth(config: &SensorConfig, depth: &[DepthImage]) -> CliResult<Self> {
        Self::new(
            config,
            RasterKind::Depth,
            depth.iter().map(|d| d.values.clone()).collect(),
        )
    }

    pub fn flows(config: &SensorConfig, flows: &[FlowField]) -> CliResult<Self> {
        let frames = flows
            .iter()
            .flat_map(|f| [f.u.clone(), f.v.clone()])
            .collect();
        Self::new(config, RasterKind::Flow, frames)
    }

    pub fn masks(config: &SensorConfig, masks: &[Mask]) -> CliResult<Self> {
        let frames = masks
            .iter()
            .map(|m| {
                let (w, h) = m.shape();
                Raster::from_fn(w, h, |x, y| if m.get(x, y) { 1.0 } else { 0.0 })
            })
            .collect();
        Self::new(config, RasterKind::Mask, frames)
    }

    /// Capture configuration recorded in the sidecar, checked for
    /// consistency.
    pub fn sensor_config(&self) -> CliResult<SensorConfig> {
        let s = &self.sidecar;
        let taps = Taps::try_from(s.taps)?;
        let config = SensorConfig {
            frequencies_hz: s.frequencies_hz.clone(),
            taps,
            phase_shifts: s.phase_shifts.clone(),
            timestep_layout: s.timestep_layout.clone(),
            reference_timestep: s.reference_timestep,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn expect_kind(&self, kind: RasterKind, path: &Path) -> CliResult<()> {
        if self.sidecar.kind != kind {
            return Err(CliError::Input(format!(
                "{}: expected a {kind:?} raster, found {:?}",
                path.display(),
                self.sidecar.kind
            )));
        }
        Ok(())
    }

    pub fn stack(&self) -> CliResult<MeasurementStack> {
        let config = self.sensor_config()?;
        if self.frames.len() != config.num_frames() {
            return Err(CliError::Input(format!(
                "stack has {} frames but {} frequencies need {}",
                self.frames.len(),
                config.num_frequencies(),
                config.num_frames()
            )));
        }
        Ok(MeasurementStack::from_config(&config, self.frames.clone())?)
    }

    pub fn depth_images(&self) -> CliResult<Vec<DepthImage>> {
        let s = &self.sidecar;
        if self.frames.len() != s.frequencies_hz.len() {
            return Err(CliError::Input(format!(
                "depth raster has {} frames for {} frequencies",
                self.frames.len(),
                s.frequencies_hz.len()
            )));
        }
        Ok(self
            .frames
            .iter()
            .zip(&s.frequencies_hz)
            .map(|(f, &hz)| DepthImage {
                values: f.clone(),
                valid: Mask::all_valid(s.width, s.height),
                frequency_hz: hz,
            })
            .collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 * self.sidecar.width * self.sidecar.height * self.frames.len());
        for f in &self.frames {
            for &v in f.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn sidecar_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.sidecar).expect("sidecar serializes");
        s.push('\n');
        s
    }

    /// Writes `raw` and its sidecar; returns both paths.
    pub fn write(&self, raw: &Path) -> CliResult<[PathBuf; 2]> {
        let json = sidecar_path(raw);
        fs::write(raw, self.to_bytes()).map_err(|e| CliError::io(raw, e))?;
        fs::write(&json, self.sidecar_json()).map_err(|e| CliError::io(&json, e))?;
        Ok([raw.to_path_buf(), json])
    }

    pub fn read(raw: &Path) -> CliResult<Self> {
        let json = sidecar_path(raw);
        let text = fs::read_to_string(&json)
            .map_err(|e| CliError::Input(format!("missing or unreadable sidecar {}: {e}", json.display())))?;
        let sidecar: Sidecar = serde_json::from_str(&text)
            .map_err(|e| CliError::Input(format!("{}: {e}", json.display())))?;
        if sidecar.dtype != DTYPE || sidecar.endianness != ENDIANNESS {
            return Err(CliError::Input(format!(
                "{}: unsupported dtype {:?} / endianness {:?}",
                json.display(),
                sidecar.dtype,
                sidecar.endianness
            )));
        }
        let bytes = fs::read(raw).map_err(|e| CliError::io(raw, e))?;
        let plane = sidecar.width * sidecar.height;
        if bytes.len() != 4 * plane * sidecar.frames {
            return Err(CliError::Input(format!(
                "{}: {} bytes, expected 4·{}·{}·{} = {}",
                raw.display(),
                bytes.len(),
                sidecar.width,
                sidecar.height,
                sidecar.frames,
                4 * plane * sidecar.frames
            )));
        }
        if plane == 0 {
            return Err(CliError::Input(format!("{}: empty raster", raw.display())));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let frames = values
            .chunks(plane)
            .map(|c| Raster::from_vec(sidecar.width, sidecar.height, c.to_vec()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { sidecar, frames })
    }
}
