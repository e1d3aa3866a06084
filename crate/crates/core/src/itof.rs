//! Sensor model, measurement stacks and depth reconstruction.
//!
//! A four-phase capture correlates the returned light with the emitted
//! signal at phase shifts `{0, π/2, π, 3π/2}`. With the sinusoidal model
//! `m_θ = O + A·cos(Δφ + θ)` the differences `m3 − m1 = 2A·sin Δφ` and
//! `m0 − m2 = 2A·cos Δφ` recover the phase offset, and the depth follows as
//! `d = c·Δφ / (4πf)`, unambiguous on `[0, c / 2f)`.

use std::f64::consts::{FRAC_PI_2, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{check_shape, Mask, Raster};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Default denominator stabilizer, in normalized measurement units.
pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Number of phase samples per modulation frequency.
pub const PHASES_PER_FREQUENCY: usize = 4;

/// Physical constants used by the reconstruction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    pub c: f64,
    pub epsilon: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            c: SPEED_OF_LIGHT,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl PhysicalConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Domain(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Unambiguous range `c / 2f` in meters.
pub fn d_max(frequency_hz: f64) -> Result<f64> {
    if !(frequency_hz > 0.0) || !frequency_hz.is_finite() {
        return Err(Error::Domain(format!(
            "modulation frequency must be positive, got {frequency_hz}"
        )));
    }
    Ok(SPEED_OF_LIGHT / (2.0 * frequency_hz))
}

/// Meters per radian of phase offset, `c / 4πf`.
pub fn depth_per_radian(frequency_hz: f64) -> Result<f64> {
    d_max(frequency_hz).map(|d| d / TAU)
}

/// Wraps a depth into `[0, d_max)`.
pub fn wrap_to_range(depth: f64, d_max: f64) -> f64 {
    let w = depth.rem_euclid(d_max);
    if w >= d_max {
        0.0
    } else {
        w
    }
}

/// `d mod d_max(f)` with the result in `[0, d_max)`.
pub fn wrap_depth(depth: f64, frequency_hz: f64) -> Result<f64> {
    Ok(wrap_to_range(depth, d_max(frequency_hz)?))
}

/// Sign with `sign(0) = +1`, so the stabilized denominator never vanishes.
#[inline]
pub fn stabilizer_sign(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Phase in `[0, 2π)` from the numerator `y = m3 − m1` and the stabilized
/// denominator `x = m0 − m2 + sign(m0 − m2)·ε`.
#[inline]
pub fn phase_from_components(y: f64, x_stabilized: f64) -> f64 {
    let p = y.atan2(x_stabilized);
    let p = if p < 0.0 { p + TAU } else { p };
    if p >= TAU {
        0.0
    } else {
        p
    }
}

/// Depth of one pixel from its four phase samples.
#[inline]
pub fn pixel_depth(m: [f64; 4], meters_per_radian: f64, d_max: f64, epsilon: f64) -> f64 {
    let x = m[0] - m[2];
    let y = m[3] - m[1];
    let xs = x + stabilizer_sign(x) * epsilon;
    let d = meters_per_radian * phase_from_components(y, xs);
    if d >= d_max {
        0.0
    } else {
        d
    }
}

/// Sensor tap count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Taps {
    One,
    Two,
    Four,
}

impl Taps {
    pub fn count(self) -> usize {
        match self {
            Taps::One => 1,
            Taps::Two => 2,
            Taps::Four => 4,
        }
    }
}

impl TryFrom<u8> for Taps {
    type Error = Error;

    fn try_from(value: u8) -> Result<Self> {
        match value {
            1 => Ok(Taps::One),
            2 => Ok(Taps::Two),
            4 => Ok(Taps::Four),
            other => Err(Error::InvalidConfig(format!(
                "taps must be 1, 2 or 4, got {other}"
            ))),
        }
    }
}

impl From<Taps> for u8 {
    fn from(t: Taps) -> u8 {
        t.count() as u8
    }
}

/// Frequencies, tap count and the capture → timestep layout.
///
/// Frames are ordered frequency-major, phase-minor: frame `4·k + j` is the
/// sample at phase shift `j·π/2` of frequency `k`. Timesteps are assigned per
/// tap grouping:
///
/// * 1 tap: every frame gets its own timestep,
/// * 2 taps: `(m0, m2)` share one timestep and `(m1, m3)` the next,
/// * 4 taps: all four samples of a frequency share a timestep.
///
/// The reference timestep is always the last one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    pub frequencies_hz: Vec<f64>,
    pub taps: Taps,
    pub phase_shifts: Vec<f64>,
    pub timestep_layout: Vec<usize>,
    pub reference_timestep: usize,
}

impl SensorConfig {
    pub fn new(frequencies_hz: Vec<f64>, taps: Taps) -> Result<Self> {
        if frequencies_hz.is_empty() {
            return Err(Error::InvalidConfig(
                "at least one modulation frequency is required".into(),
            ));
        }
        for &f in &frequencies_hz {
            d_max(f)?;
        }
        let n = frequencies_hz.len();
        let mut phase_shifts = Vec::with_capacity(PHASES_PER_FREQUENCY * n);
        let mut timestep_layout = Vec::with_capacity(PHASES_PER_FREQUENCY * n);
        for k in 0..n {
            for j in 0..PHASES_PER_FREQUENCY {
                phase_shifts.push(j as f64 * FRAC_PI_2);
                timestep_layout.push(match taps {
                    Taps::One => PHASES_PER_FREQUENCY * k + j,
                    Taps::Two => 2 * k + j % 2,
                    Taps::Four => k,
                });
            }
        }
        let timesteps = PHASES_PER_FREQUENCY / taps.count() * n;
        Ok(Self {
            frequencies_hz,
            taps,
            phase_shifts,
            timestep_layout,
            reference_timestep: timesteps - 1,
        })
    }

    /// Checks that the stored layout is the canonical one for the
    /// frequencies and tap count.
    pub fn validate(&self) -> Result<()> {
        let canonical = SensorConfig::new(self.frequencies_hz.clone(), self.taps)?;
        if self.phase_shifts != canonical.phase_shifts {
            return Err(Error::InvalidConfig(
                "phase_shifts must be {0, π/2, π, 3π/2} per frequency".into(),
            ));
        }
        if self.timestep_layout != canonical.timestep_layout {
            return Err(Error::InvalidConfig(format!(
                "timestep_layout {:?} inconsistent with {} tap(s)",
                self.timestep_layout,
                self.taps.count()
            )));
        }
        if self.reference_timestep != canonical.reference_timestep {
            return Err(Error::InvalidConfig(
                "reference_timestep must be the last timestep".into(),
            ));
        }
        Ok(())
    }

    pub fn num_frames(&self) -> usize {
        self.phase_shifts.len()
    }

    pub fn num_timesteps(&self) -> usize {
        self.reference_timestep + 1
    }

    pub fn num_frequencies(&self) -> usize {
        self.frequencies_hz.len()
    }

    pub fn min_frequency(&self) -> f64 {
        self.frequencies_hz
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Tap id of a frame: 0 for tap A, 1 for tap B on two-tap sensors, the
    /// phase index on four-tap sensors.
    pub fn tap_of(&self, frame: usize) -> u8 {
        let j = frame % PHASES_PER_FREQUENCY;
        match self.taps {
            Taps::One => 0,
            Taps::Two => (j / 2) as u8,
            Taps::Four => j as u8,
        }
    }

    pub fn frame_meta(&self, frame: usize) -> FrameMeta {
        FrameMeta {
            frequency_hz: self.frequencies_hz[frame / PHASES_PER_FREQUENCY],
            phase_shift: self.phase_shifts[frame],
            tap: self.tap_of(frame),
            timestep: self.timestep_layout[frame],
        }
    }

    /// Frame indices captured at timestep `t`, in frame order.
    pub fn frames_at(&self, timestep: usize) -> Vec<usize> {
        self.timestep_layout
            .iter()
            .enumerate()
            .filter(|(_, &t)| t == timestep)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Per-frame capture metadata.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub frequency_hz: f64,
    pub phase_shift: f64,
    pub tap: u8,
    pub timestep: usize,
}

/// Ordered raw correlation images sharing one resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementStack {
    width: usize,
    height: usize,
    pub frames: Vec<Raster>,
    pub meta: Vec<FrameMeta>,
}

impl MeasurementStack {
    pub fn new(frames: Vec<Raster>, meta: Vec<FrameMeta>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::EmptyInput("measurement stack has no frames".into()))?;
        let shape = first.shape();
        for f in &frames {
            check_shape(shape, f.shape())?;
        }
        if frames.len() != meta.len() {
            return Err(Error::InvalidConfig(format!(
                "{} frames but {} metadata entries",
                frames.len(),
                meta.len()
            )));
        }
        Ok(Self {
            width: shape.0,
            height: shape.1,
            frames,
            meta,
        })
    }

    /// Builds a stack whose metadata follows `config`'s capture order.
    pub fn from_config(config: &SensorConfig, frames: Vec<Raster>) -> Result<Self> {
        if frames.len() != config.num_frames() {
            return Err(Error::InvalidConfig(format!(
                "config expects {} frames, got {}",
                config.num_frames(),
                frames.len()
            )));
        }
        let meta = (0..frames.len()).map(|i| config.frame_meta(i)).collect();
        Self::new(frames, meta)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// The four phase samples of frequency group `k`.
    pub fn phase_group(&self, k: usize) -> Result<[&Raster; 4]> {
        let base = PHASES_PER_FREQUENCY * k;
        if base + PHASES_PER_FREQUENCY > self.frames.len() {
            return Err(Error::InvalidConfig(format!(
                "stack has no frequency group {k}"
            )));
        }
        Ok([
            &self.frames[base],
            &self.frames[base + 1],
            &self.frames[base + 2],
            &self.frames[base + 3],
        ])
    }
}

/// Wrapped depth in meters with a validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage {
    pub values: Raster,
    pub valid: Mask,
    pub frequency_hz: f64,
}

impl DepthImage {
    pub fn d_max(&self) -> f64 {
        SPEED_OF_LIGHT / (2.0 * self.frequency_hz)
    }
}

/// Reconstructs the wrapped depth from four phase samples.
///
/// The denominator is stabilized as `m0 − m2 + s·ε` with `s = sign(m0 − m2)`
/// and `sign(0) = +1`; the result lies in `[0, d_max)`.
pub fn reconstruct_depth(
    m: [&Raster; 4],
    frequency_hz: f64,
    epsilon: f64,
) -> Result<DepthImage> {
    if !(epsilon >= 0.0) {
        return Err(Error::Domain(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let shape = m[0].shape();
    for r in &m[1..] {
        check_shape(shape, r.shape())?;
    }
    let dmax = d_max(frequency_hz)?;
    let scale = dmax / TAU;
    let data = (0..m[0].len())
        .map(|i| {
            pixel_depth(
                [m[0].data()[i], m[1].data()[i], m[2].data()[i], m[3].data()[i]],
                scale,
                dmax,
                epsilon,
            )
        })
        .collect();
    Ok(DepthImage {
        values: Raster::from_vec(shape.0, shape.1, data)?,
        valid: Mask::all_valid(shape.0, shape.1),
        frequency_hz,
    })
}

/// Per-pixel linear response `r(m) = gain·m + offset` mapping tap-B samples
/// onto the tap-A response.
#[derive(Clone, Debug, PartialEq)]
pub struct TapCalibration {
    pub gain: Raster,
    pub offset: Raster,
}

impl TapCalibration {
    pub fn identity(width: usize, height: usize) -> Self {
        Self {
            gain: Raster::filled(width, height, 1.0),
            offset: Raster::zeros(width, height),
        }
    }

    pub fn apply(&self, m_b: &Raster) -> Result<Raster> {
        self.gain.check_shape(m_b)?;
        let data = m_b
            .data()
            .iter()
            .zip(self.gain.data().iter().zip(self.offset.data()))
            .map(|(&m, (&g, &o))| g * m + o)
            .collect();
        Raster::from_vec(m_b.width(), m_b.height(), data)
    }
}

/// Two-tap difference `m_A − r(m_B)`.
pub fn combine_taps(m_a: &Raster, m_b: &Raster, calib: &TapCalibration) -> Result<Raster> {
    m_a.check_shape(m_b)?;
    let mapped = calib.apply(m_b)?;
    m_a.zip_map(&mapped, |a, b| a - b)
}

/// Per-pixel least-squares fit of `m_A ≈ gain·m_B + offset` over static
/// capture pairs.
///
/// Pixels where `m_B` has (numerically) zero variance, or where the fit
/// yields a non-positive gain, fall back to gain 1 and offset
/// `mean(m_A − m_B)`.
pub fn fit_tap_calibration(pairs: &[(Raster, Raster)]) -> Result<TapCalibration> {
    if pairs.len() < 2 {
        return Err(Error::EmptyInput(format!(
            "tap calibration needs at least 2 static pairs, got {}",
            pairs.len()
        )));
    }
    let shape = pairs[0].0.shape();
    for (a, b) in pairs {
        check_shape(shape, a.shape())?;
        check_shape(shape, b.shape())?;
    }
    let n = pairs.len() as f64;
    let mut gain = Raster::zeros(shape.0, shape.1);
    let mut offset = Raster::zeros(shape.0, shape.1);
    for i in 0..shape.0 * shape.1 {
        let mean_a = pairs.iter().map(|(a, _)| a.data()[i]).sum::<f64>() / n;
        let mean_b = pairs.iter().map(|(_, b)| b.data()[i]).sum::<f64>() / n;
        let mut cov = 0.0;
        let mut var = 0.0;
        for (a, b) in pairs {
            let db = b.data()[i] - mean_b;
            cov += db * (a.data()[i] - mean_a);
            var += db * db;
        }
        let scale = mean_b.abs().max(1.0);
        let g = cov / var;
        let (g, o) = if var <= 1e-24 * scale * scale * n || !(g > 0.0) || !g.is_finite() {
            (1.0, mean_a - mean_b)
        } else {
            (g, mean_a - g * mean_b)
        };
        gain.data_mut()[i] = g;
        offset.data_mut()[i] = o;
    }
    Ok(TapCalibration { gain, offset })
}

/// Affine map `(m − mean) / scale` applied to every frame of a stack.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: f64,
    pub scale: f64,
}

impl Normalization {
    /// Joint mean and standard deviation over all frames; a standard
    /// deviation below `1e-12` is replaced by 1.
    pub fn of_stack(stack: &MeasurementStack) -> Self {
        let count = (stack.len() * stack.width() * stack.height()) as f64;
        let mean = stack
            .frames
            .iter()
            .flat_map(|f| f.data())
            .sum::<f64>()
            / count;
        let var = stack
            .frames
            .iter()
            .flat_map(|f| f.data())
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / count;
        let std = var.sqrt();
        Self {
            mean,
            scale: if std < 1e-12 { 1.0 } else { std },
        }
    }

    pub fn apply(&self, stack: &MeasurementStack) -> MeasurementStack {
        let frames = stack
            .frames
            .iter()
            .map(|f| f.map(|v| (v - self.mean) / self.scale))
            .collect();
        MeasurementStack {
            width: stack.width,
            height: stack.height,
            frames,
            meta: stack.meta.clone(),
        }
    }
}

/// Zero-mean, unit-variance normalization computed jointly over the stack.
pub fn instance_normalize(stack: &MeasurementStack) -> MeasurementStack {
    Normalization::of_stack(stack).apply(stack)
}

/// Reconstructs one wrapped depth image per frequency group.
///
/// Two-tap stacks are first combined per tap pair, `(m0, m2)` and
/// `(m1, m3)`, as `m_A − r(m_B)`; the combined samples are antisymmetric so
/// the phase is unchanged for an ideal sensor while tap response mismatch is
/// calibrated out.
pub fn reconstruct_stack(
    stack: &MeasurementStack,
    frequencies_hz: &[f64],
    taps: Taps,
    epsilon: f64,
    calibration: Option<&TapCalibration>,
) -> Result<Vec<DepthImage>> {
    if stack.len() != PHASES_PER_FREQUENCY * frequencies_hz.len() {
        return Err(Error::InvalidConfig(format!(
            "expected {} frames for {} frequencies, got {}",
            PHASES_PER_FREQUENCY * frequencies_hz.len(),
            frequencies_hz.len(),
            stack.len()
        )));
    }
    let identity;
    let calib = match calibration {
        Some(c) => c,
        None => {
            identity = TapCalibration::identity(stack.width(), stack.height());
            &identity
        }
    };
    frequencies_hz
        .iter()
        .enumerate()
        .map(|(k, &f)| {
            let g = stack.phase_group(k)?;
            if taps == Taps::Two {
                let c0 = combine_taps(g[0], g[2], calib)?;
                let c1 = combine_taps(g[1], g[3], calib)?;
                let c2 = c0.map(|v| -v);
                let c3 = c1.map(|v| -v);
                reconstruct_depth([&c0, &c1, &c2, &c3], f, epsilon)
            } else {
                reconstruct_depth(g, f, epsilon)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn sinusoid(a: f64, o: f64, dphi: f64) -> [f64; 4] {
        [0.0, 1.0, 2.0, 3.0].map(|j| o + a * (dphi + j * FRAC_PI_2).cos())
    }

    fn constant_rasters(m: [f64; 4]) -> [Raster; 4] {
        m.map(|v| Raster::filled(3, 2, v))
    }

    #[test]
    fn d_max_values() {
        assert_abs_diff_eq!(d_max(20e6).unwrap(), 7.49481145, epsilon = 1e-12);
        assert_abs_diff_eq!(d_max(50e6).unwrap(), 2.99792458, epsilon = 1e-12);
        assert!(d_max(70e6).unwrap() < d_max(50e6).unwrap());
        assert!(d_max(1e15).unwrap() < 1e-6);
        assert!(matches!(d_max(0.0), Err(Error::Domain(_))));
        assert!(matches!(d_max(-1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn reconstruct_eighth_of_range() {
        let m = sinusoid(1.0, 0.5, PI / 4.0);
        assert_abs_diff_eq!(m[0], 1.2071067811865475, epsilon = 1e-12);
        assert_abs_diff_eq!(m[1], -0.20710678118654746, epsilon = 1e-12);
        let r = constant_rasters(m);
        let d = reconstruct_depth([&r[0], &r[1], &r[2], &r[3]], 20e6, 0.0).unwrap();
        for &v in d.values.data() {
            assert_abs_diff_eq!(v, 0.936851431, epsilon = 1e-8);
            assert_abs_diff_eq!(v, d_max(20e6).unwrap() / 8.0, epsilon = 1e-12);
        }
        assert_eq!(d.valid.count_valid(), 6);
    }

    #[test]
    fn reconstruct_zero_phase() {
        let r = constant_rasters([1.5, 0.5, -0.5, 0.5]);
        let d = reconstruct_depth([&r[0], &r[1], &r[2], &r[3]], 20e6, 0.0).unwrap();
        assert!(d.values.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reconstruct_shape_mismatch() {
        let a = Raster::zeros(3, 2);
        let b = Raster::zeros(2, 3);
        assert!(matches!(
            reconstruct_depth([&a, &a, &b, &a], 20e6, 0.0),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn zero_denominator_uses_positive_sign() {
        // m0 == m2, m3 > m1: stabilized denominator +ε keeps the phase at π/2.
        let r = constant_rasters([0.2, 0.0, 0.2, 1.0]);
        let d = reconstruct_depth([&r[0], &r[1], &r[2], &r[3]], 20e6, 1e-6).unwrap();
        assert_abs_diff_eq!(d.values.get(0, 0), d_max(20e6).unwrap() / 4.0, epsilon = 1e-5);
    }

    #[test]
    fn wrap_examples() {
        let f = 20e6;
        assert_abs_diff_eq!(wrap_depth(9.0, f).unwrap(), 1.50518855, epsilon = 1e-8);
        assert_eq!(wrap_depth(0.0, f).unwrap(), 0.0);
        assert_eq!(wrap_depth(d_max(f).unwrap(), f).unwrap(), 0.0);
        let w = wrap_depth(-0.5, f).unwrap();
        assert_abs_diff_eq!(w, d_max(f).unwrap() - 0.5, epsilon = 1e-12);
    }

    #[test]
    fn combine_examples() {
        let id = TapCalibration::identity(4, 4);
        let a = Raster::filled(4, 4, 2.0);
        let b = Raster::filled(4, 4, 0.5);
        assert!(combine_taps(&a, &a, &id).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(combine_taps(&a, &b, &id).unwrap().data().iter().all(|&v| v == 1.5));
        assert!(combine_taps(&a, &Raster::zeros(3, 4), &id).is_err());
    }

    fn ramp(seed: f64) -> Raster {
        Raster::from_fn(5, 4, |x, y| (seed * 0.37 + x as f64 * 0.11 + y as f64 * 0.07).sin())
    }

    #[test]
    fn fit_recovers_gain_and_offset() {
        let pairs: Vec<_> = (0..4)
            .map(|s| {
                let b = ramp(s as f64);
                let a = b.map(|v| 1.2 * v + 0.05);
                (a, b)
            })
            .collect();
        let cal = fit_tap_calibration(&pairs).unwrap();
        for i in 0..cal.gain.len() {
            assert_abs_diff_eq!(cal.gain.data()[i], 1.2, epsilon = 1e-9);
            assert_abs_diff_eq!(cal.offset.data()[i], 0.05, epsilon = 1e-9);
        }
    }

    #[test]
    fn fit_identity_and_gain_mismatch_residual() {
        let pairs: Vec<_> = (0..3).map(|s| (ramp(s as f64), ramp(s as f64))).collect();
        let cal = fit_tap_calibration(&pairs).unwrap();
        assert!(cal.gain.data().iter().all(|g| (g - 1.0).abs() < 1e-12));
        assert!(cal.offset.data().iter().all(|o| o.abs() < 1e-12));

        // tap B responds with gain 1.1 to the same light as tap A
        let pairs: Vec<_> = (0..3)
            .map(|s| {
                let a = ramp(s as f64);
                let b = a.map(|v| v / 1.1);
                (a, b)
            })
            .collect();
        let cal = fit_tap_calibration(&pairs).unwrap();
        for (a, b) in &pairs {
            let r = combine_taps(a, b, &cal).unwrap();
            assert!(r.data().iter().all(|v| v.abs() < 1e-6));
        }
    }

    #[test]
    fn fit_fallback_on_constant_tap_b() {
        let b = Raster::filled(2, 2, 0.3);
        let pairs = vec![
            (Raster::filled(2, 2, 1.0), b.clone()),
            (Raster::filled(2, 2, 2.0), b.clone()),
        ];
        let cal = fit_tap_calibration(&pairs).unwrap();
        assert!(cal.gain.data().iter().all(|&g| g == 1.0));
        for &o in cal.offset.data() {
            assert_abs_diff_eq!(o, 1.5 - 0.3, epsilon = 1e-12);
        }
        assert!(fit_tap_calibration(&pairs[..1]).is_err());
    }

    fn stack_from(m: [f64; 4]) -> MeasurementStack {
        let cfg = SensorConfig::new(vec![20e6], Taps::One).unwrap();
        let frames = (0..4)
            .map(|j| Raster::from_fn(4, 3, |x, y| m[j] * (1.0 + 0.1 * x as f64) + 0.05 * y as f64))
            .collect();
        MeasurementStack::from_config(&cfg, frames).unwrap()
    }

    #[test]
    fn instance_normalize_moments() {
        let s = instance_normalize(&stack_from(sinusoid(0.8, 0.4, 1.0)));
        let all: Vec<f64> = s.frames.iter().flat_map(|f| f.data().to_vec()).collect();
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        let std = (all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(std, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn instance_normalize_constant_stack() {
        let cfg = SensorConfig::new(vec![20e6], Taps::One).unwrap();
        let c = MeasurementStack::from_config(&cfg, vec![Raster::filled(3, 3, 0.7); 4]).unwrap();
        let n = instance_normalize(&c);
        assert!(n.frames.iter().flat_map(|f| f.data()).all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn instance_normalize_preserves_depth() {
        let raw = stack_from(sinusoid(0.8, 0.4, 2.2));
        let norm = instance_normalize(&raw);
        let d0 = reconstruct_depth(raw.phase_group(0).unwrap(), 20e6, 0.0).unwrap();
        let d1 = reconstruct_depth(norm.phase_group(0).unwrap(), 20e6, 0.0).unwrap();
        for (a, b) in d0.values.data().iter().zip(d1.values.data()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn layouts() {
        let cases = [
            (1, Taps::One, 4),
            (1, Taps::Two, 2),
            (3, Taps::One, 12),
            (3, Taps::Two, 6),
            (3, Taps::Four, 3),
            (1, Taps::Four, 1),
        ];
        for (nf, taps, steps) in cases {
            let freqs = [20e6, 50e6, 70e6][..nf].to_vec();
            let cfg = SensorConfig::new(freqs, taps).unwrap();
            assert_eq!(cfg.num_timesteps(), steps);
            assert_eq!(cfg.num_frames(), 4 * nf);
            assert_eq!(cfg.reference_timestep, steps - 1);
            assert_eq!(*cfg.timestep_layout.iter().max().unwrap(), steps - 1);
            cfg.validate().unwrap();
        }
        let two = SensorConfig::new(vec![20e6], Taps::Two).unwrap();
        assert_eq!(two.timestep_layout, vec![0, 1, 0, 1]);
        assert_eq!(two.frames_at(0), vec![0, 2]);
        assert_eq!((0..4).map(|i| two.tap_of(i)).collect::<Vec<_>>(), vec![0, 0, 1, 1]);
        assert_eq!(two.phase_shifts, vec![0.0, FRAC_PI_2, PI, 3.0 * FRAC_PI_2]);

        let mut bad = two.clone();
        bad.timestep_layout = vec![0, 0, 1, 1];
        assert!(bad.validate().is_err());
        assert!(Taps::try_from(3).is_err());
    }

    #[test]
    fn two_tap_stack_reconstruction_matches_single_tap() {
        let m = sinusoid(0.9, 0.6, 4.0);
        let frames: Vec<Raster> = m.iter().map(|&v| Raster::filled(2, 2, v)).collect();
        let cfg = SensorConfig::new(vec![20e6], Taps::Two).unwrap();
        let stack = MeasurementStack::from_config(&cfg, frames).unwrap();
        let two = reconstruct_stack(&stack, &cfg.frequencies_hz, Taps::Two, 0.0, None).unwrap();
        let one = reconstruct_stack(&stack, &cfg.frequencies_hz, Taps::One, 0.0, None).unwrap();
        assert_abs_diff_eq!(two[0].values.get(1, 1), one[0].values.get(1, 1), epsilon = 1e-12);
        assert_abs_diff_eq!(
            one[0].values.get(0, 0),
            4.0 * depth_per_radian(20e6).unwrap(),
            epsilon = 1e-9
        );
    }
}
