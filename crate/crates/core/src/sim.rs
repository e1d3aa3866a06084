//! Synthetic iToF captures of front-parallel sprites over a background.
//!
//! Every surface has a constant depth, an amplitude `A`, an ambient offset
//! `O` and an optional multiplicative amplitude texture. The correlation
//! sample for phase shift `θ` is `m = O + A·cos(Δφ + θ)` with
//! `Δφ = 4πf·d / c`. Sprites translate with constant image-space velocity
//! and the camera adds a global translation; nearer sprites occlude farther
//! ones and disoccluded regions show the background.

use std::f64::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::itof::{d_max, wrap_to_range, DepthImage, MeasurementStack, SensorConfig};
use crate::raster::{FlowField, Mask, Raster};

/// Variance floor (in measurement units) of the shot-noise model.
pub const NOISE_FLOOR: f64 = 1e-3;

/// Amplitude modulation `1 + contrast·sin(2πx/px)·sin(2πy/py)` in the
/// surface's own coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Texture {
    pub contrast: f64,
    pub period: [f64; 2],
}

impl Texture {
    fn factor(&self, lx: f64, ly: f64) -> f64 {
        1.0 + self.contrast * (TAU * lx / self.period[0]).sin() * (TAU * ly / self.period[1]).sin()
    }

    fn validate(&self, field: &str) -> Result<()> {
        if !(0.0..1.0).contains(&self.contrast) {
            return Err(Error::InvalidConfig(format!(
                "{field}.contrast must lie in [0, 1), got {}",
                self.contrast
            )));
        }
        if !(self.period[0] > 0.0 && self.period[1] > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "{field}.period must be positive"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Background {
    pub depth: f64,
    pub amplitude: f64,
    pub offset: f64,
    #[serde(default)]
    pub texture: Option<Texture>,
}

/// Sprite outline. Rectangles are anchored at their top-left corner, disks
/// at their center.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Shape {
    Rectangle { width: f64, height: f64 },
    Disk { radius: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sprite {
    pub shape: Shape,
    pub depth: f64,
    pub amplitude: f64,
    pub offset: f64,
    /// Anchor position at timestep 0, pixels.
    pub position: [f64; 2],
    /// Pixels per timestep.
    #[serde(default)]
    pub velocity: [f64; 2],
    #[serde(default)]
    pub texture: Option<Texture>,
}

/// Scene description, read from JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub background: Background,
    /// Global image translation per timestep, pixels.
    #[serde(default)]
    pub camera_velocity: [f64; 2],
    #[serde(default)]
    pub sprites: Vec<Sprite>,
}

/// What the camera sees at one pixel. `label` is 0 for the background and
/// `i + 1` for sprite `i`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceSample {
    pub depth: f64,
    pub amplitude: f64,
    pub offset: f64,
    pub label: usize,
}

fn check_surface(field: &str, depth: f64, amplitude: f64, offset: f64, max_depth: f64) -> Result<()> {
    if !(depth > 0.0 && depth < max_depth) {
        return Err(Error::InvalidConfig(format!(
            "{field}.depth must lie in (0, {max_depth}), got {depth}"
        )));
    }
    if !(amplitude > 0.0) || !amplitude.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "{field}.amplitude must be > 0, got {amplitude}"
        )));
    }
    if !(offset >= 0.0) || !offset.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "{field}.offset must be >= 0, got {offset}"
        )));
    }
    Ok(())
}

impl SceneSpec {
    /// Checks the scene against the sensor's lowest frequency: every depth
    /// must lie in `(0, 2·d_max)`.
    pub fn validate(&self, min_frequency_hz: f64) -> Result<()> {
        if self.width < 2 || self.height < 2 {
            return Err(Error::InvalidConfig(
                "width and height must both be at least 2".into(),
            ));
        }
        let max_depth = 2.0 * d_max(min_frequency_hz)?;
        let bg = &self.background;
        check_surface("background", bg.depth, bg.amplitude, bg.offset, max_depth)?;
        if let Some(t) = &bg.texture {
            t.validate("background.texture")?;
        }
        if !self.camera_velocity.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidConfig("camera_velocity must be finite".into()));
        }
        for (i, s) in self.sprites.iter().enumerate() {
            let field = format!("sprites[{i}]");
            check_surface(&field, s.depth, s.amplitude, s.offset, max_depth)?;
            match s.shape {
                Shape::Rectangle { width, height } if !(width > 0.0 && height > 0.0) => {
                    return Err(Error::InvalidConfig(format!(
                        "{field}.shape must have positive width and height"
                    )))
                }
                Shape::Disk { radius } if !(radius > 0.0) => {
                    return Err(Error::InvalidConfig(format!(
                        "{field}.shape.radius must be > 0"
                    )))
                }
                _ => {}
            }
            if !s.position.iter().chain(&s.velocity).all(|v| v.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "{field}.position and velocity must be finite"
                )));
            }
            if let Some(t) = &s.texture {
                t.validate(&format!("{field}.texture"))?;
            }
        }
        Ok(())
    }

    /// Image-space displacement of surface `label` between timesteps `from`
    /// and `to`.
    pub fn displacement(&self, label: usize, from: f64, to: f64) -> [f64; 2] {
        let own = if label == 0 {
            [0.0, 0.0]
        } else {
            self.sprites[label - 1].velocity
        };
        let dt = to - from;
        [
            (own[0] + self.camera_velocity[0]) * dt,
            (own[1] + self.camera_velocity[1]) * dt,
        ]
    }

    /// Surface visible at pixel `(x, y)` at timestep `t`.
    pub fn sample(&self, x: f64, y: f64, t: f64) -> SurfaceSample {
        let cam = [self.camera_velocity[0] * t, self.camera_velocity[1] * t];
        let bg = &self.background;
        let mut best = SurfaceSample {
            depth: bg.depth,
            amplitude: bg.amplitude
                * bg.texture.map_or(1.0, |tx| tx.factor(x - cam[0], y - cam[1])),
            offset: bg.offset,
            label: 0,
        };
        for (i, s) in self.sprites.iter().enumerate() {
            if s.depth >= best.depth {
                continue;
            }
            let lx = x - (s.position[0] + (s.velocity[0] * t + cam[0]));
            let ly = y - (s.position[1] + (s.velocity[1] * t + cam[1]));
            let inside = match s.shape {
                Shape::Rectangle { width, height } => {
                    lx >= 0.0 && lx < width && ly >= 0.0 && ly < height
                }
                Shape::Disk { radius } => lx * lx + ly * ly <= radius * radius,
            };
            if inside {
                best = SurfaceSample {
                    depth: s.depth,
                    amplitude: s.amplitude * s.texture.map_or(1.0, |tx| tx.factor(lx, ly)),
                    offset: s.offset,
                    label: i + 1,
                };
            }
        }
        best
    }

    fn samples(&self, t: f64) -> Vec<SurfaceSample> {
        let mut out = Vec::with_capacity(self.width * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                out.push(self.sample(x as f64, y as f64, t));
            }
        }
        out
    }

    /// True (unwrapped) depth at timestep `t`.
    pub fn render_depth(&self, t: f64) -> Raster {
        Raster::from_fn(self.width, self.height, |x, y| {
            self.sample(x as f64, y as f64, t).depth
        })
    }

    /// Surface labels at timestep `t`, row-major.
    pub fn render_labels(&self, t: f64) -> Vec<usize> {
        self.samples(t).into_iter().map(|s| s.label).collect()
    }
}

/// Correlation sample `O + A·cos(4πf·d/c + θ)` of the scene at timestep `t`.
pub fn render_measurement(
    scene: &SceneSpec,
    t: f64,
    frequency_hz: f64,
    phase_shift: f64,
) -> Result<Raster> {
    let dmax = d_max(frequency_hz)?;
    let samples = scene.samples(t);
    let data = samples
        .iter()
        .map(|s| s.offset + s.amplitude * (TAU * s.depth / dmax + phase_shift).cos())
        .collect();
    Raster::from_vec(scene.width, scene.height, data)
}

/// Simulated capture with matched motion-free supervision.
#[derive(Clone, Debug)]
pub struct CaptureBundle {
    pub config: SensorConfig,
    /// Frames rendered at their own timestep.
    pub moving: MeasurementStack,
    /// Every frame rendered at the reference timestep.
    pub static_gt: MeasurementStack,
    /// Wrapped motion-free depth, one image per frequency.
    pub depth_gt: Vec<DepthImage>,
    /// Backward flow per timestep on the reference grid; zero at the
    /// reference timestep.
    pub true_flows: Vec<FlowField>,
    /// Per timestep, `true` where warping by the true flow samples the same
    /// surface that the reference sees (in bounds and not disoccluded).
    pub consistency: Vec<Mask>,
}

impl CaptureBundle {
    pub fn width(&self) -> usize {
        self.moving.width()
    }

    pub fn height(&self) -> usize {
        self.moving.height()
    }
}

/// Forward displacement of each source pixel at timestep `t` towards the
/// reference timestep `reference`, on the source grid.
pub fn forward_displacement(scene: &SceneSpec, t: usize, reference: usize) -> FlowField {
    let labels = scene.render_labels(t as f64);
    let mut u = Raster::zeros(scene.width, scene.height);
    let mut v = Raster::zeros(scene.width, scene.height);
    for (i, &l) in labels.iter().enumerate() {
        let d = scene.displacement(l, t as f64, reference as f64);
        u.data_mut()[i] = d[0];
        v.data_mut()[i] = d[1];
    }
    FlowField { u, v }
}

/// Backward flow on the reference grid that aligns timestep `t` to the
/// reference: the negated displacement of whatever the reference sees.
pub fn true_flow(scene: &SceneSpec, t: usize, reference: usize) -> FlowField {
    let labels = scene.render_labels(reference as f64);
    let mut u = Raster::zeros(scene.width, scene.height);
    let mut v = Raster::zeros(scene.width, scene.height);
    for (i, &l) in labels.iter().enumerate() {
        let d = scene.displacement(l, t as f64, reference as f64);
        u.data_mut()[i] = -d[0];
        v.data_mut()[i] = -d[1];
    }
    FlowField { u, v }
}

fn consistency_mask(
    scene: &SceneSpec,
    flow: &FlowField,
    source_labels: &[usize],
    reference_labels: &[usize],
) -> Mask {
    let (w, h) = (scene.width, scene.height);
    Mask::from_fn(w, h, |x, y| {
        let i = y * w + x;
        let sx = x as f64 + flow.u.data()[i];
        let sy = y as f64 + flow.v.data()[i];
        if !(sx >= 0.0 && sx <= (w - 1) as f64 && sy >= 0.0 && sy <= (h - 1) as f64) {
            return false;
        }
        let x0 = sx.floor() as usize;
        let y0 = sy.floor() as usize;
        let fx = sx - x0 as f64;
        let fy = sy - y0 as f64;
        let mut corners = vec![(x0, y0)];
        if fx > 0.0 {
            corners.push((x0 + 1, y0));
        }
        if fy > 0.0 {
            corners.push((x0, y0 + 1));
        }
        if fx > 0.0 && fy > 0.0 {
            corners.push((x0 + 1, y0 + 1));
        }
        corners
            .into_iter()
            .all(|(cx, cy)| source_labels[cy * w + cx] == reference_labels[i])
    })
}

/// Renders the moving capture, its static ground truth, wrapped depth
/// labels and exact flows. Shot noise of the given scale is added to the
/// moving stack only.
pub fn simulate_bundle(
    scene: &SceneSpec,
    config: &SensorConfig,
    noise_scale: f64,
    seed: u64,
) -> Result<CaptureBundle> {
    config.validate()?;
    scene.validate(config.min_frequency())?;
    let reference = config.reference_timestep;
    let mut moving = Vec::with_capacity(config.num_frames());
    let mut static_frames = Vec::with_capacity(config.num_frames());
    for i in 0..config.num_frames() {
        let meta = config.frame_meta(i);
        moving.push(render_measurement(
            scene,
            meta.timestep as f64,
            meta.frequency_hz,
            meta.phase_shift,
        )?);
        static_frames.push(render_measurement(
            scene,
            reference as f64,
            meta.frequency_hz,
            meta.phase_shift,
        )?);
    }
    let mut moving = MeasurementStack::from_config(config, moving)?;
    if noise_scale > 0.0 {
        moving = apply_shot_noise(&moving, noise_scale, seed)?;
    }
    let static_gt = MeasurementStack::from_config(config, static_frames)?;

    let true_depth = scene.render_depth(reference as f64);
    let depth_gt = config
        .frequencies_hz
        .iter()
        .map(|&f| {
            let dmax = d_max(f)?;
            Ok(DepthImage {
                values: true_depth.map(|d| wrap_to_range(d, dmax)),
                valid: Mask::all_valid(scene.width, scene.height),
                frequency_hz: f,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let reference_labels = scene.render_labels(reference as f64);
    let mut true_flows = Vec::with_capacity(config.num_timesteps());
    let mut consistency = Vec::with_capacity(config.num_timesteps());
    for t in 0..config.num_timesteps() {
        let flow = true_flow(scene, t, reference);
        let labels = scene.render_labels(t as f64);
        consistency.push(consistency_mask(scene, &flow, &labels, &reference_labels));
        true_flows.push(flow);
    }

    Ok(CaptureBundle {
        config: config.clone(),
        moving,
        static_gt,
        depth_gt,
        true_flows,
        consistency,
    })
}

/// Adds zero-mean Gaussian noise with variance `scale·max(|m|, NOISE_FLOOR)`
/// to every sample, a Gaussian stand-in for Poisson shot noise.
///
/// Frame `i` draws from its own ChaCha stream `i` of `seed`, so the result
/// does not depend on the order in which frames are processed.
pub fn apply_shot_noise(stack: &MeasurementStack, scale: f64, seed: u64) -> Result<MeasurementStack> {
    if !(scale >= 0.0) || !scale.is_finite() {
        return Err(Error::Domain(format!(
            "noise scale must be >= 0, got {scale}"
        )));
    }
    if scale == 0.0 {
        return Ok(stack.clone());
    }
    let frames = stack
        .frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            f.map(|m| {
                let z: f64 = StandardNormal.sample(&mut rng);
                m + z * (scale * m.abs().max(NOISE_FLOOR)).sqrt()
            })
        })
        .collect();
    MeasurementStack::new(frames, stack.meta.clone())
}

/// A square sprite translating horizontally in front of a flat background.
///
/// With `textured`, both the square and the background carry an amplitude
/// texture; otherwise both are uniform.
pub fn translating_square(size: usize, side: f64, velocity: f64, textured: bool) -> SceneSpec {
    let tex = |px: f64, py: f64| {
        textured.then_some(Texture {
            contrast: 0.5,
            period: [px, py],
        })
    };
    let start = ((size as f64 - side) / 2.0 - 1.5 * velocity).round();
    SceneSpec {
        width: size,
        height: size,
        background: Background {
            depth: 5.0,
            amplitude: 0.5,
            offset: 0.3,
            texture: tex(11.0, 13.0),
        },
        camera_velocity: [0.0, 0.0],
        sprites: vec![Sprite {
            shape: Shape::Rectangle {
                width: side,
                height: side,
            },
            depth: 2.0,
            amplitude: 1.0,
            offset: 0.5,
            position: [start, ((size as f64 - side) / 2.0).round()],
            velocity: [velocity, 0.0],
            texture: tex(9.0, 7.0),
        }],
    }
}
