//! Recovering the fourth correlation sample from the other three and a
//! depth label, by gradient descent on the ToF loss.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::flows::Trace;
use super::OptimError;
use crate::error::{Error, Result};
use crate::itof::{d_max, pixel_depth, wrap_to_range, DepthImage, DEFAULT_EPSILON};
use crate::losses::{tof_pixel, LossReport};
use crate::raster::{check_shape, Mask, Raster};

/// Modulation frequency of the toy field.
pub const TOY_FREQUENCY_HZ: f64 = 20e6;
/// Per-pixel depth error below which a pixel counts as reconstructed, as a
/// fraction of `d_max`.
pub const TOY_CONVERGENCE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct ToyConfig {
    pub step: f64,
    pub iterations: usize,
    pub unwrap: bool,
    pub epsilon: f64,
    /// Stop once the mean loss changes by less than this; 0 disables.
    pub tolerance: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            step: 1e-2,
            iterations: 2000,
            unwrap: true,
            epsilon: DEFAULT_EPSILON,
            tolerance: 0.0,
        }
    }
}

/// Noiseless samples of a smooth phase field crossing the wrap.
#[derive(Clone, Debug)]
pub struct ToyProblem {
    pub m0: Raster,
    pub m1: Raster,
    pub m2: Raster,
    /// Ground-truth fourth sample.
    pub m3: Raster,
    pub label: DepthImage,
    pub frequency_hz: f64,
}

/// Phase offset rising linearly from `−0.4π` to `0.4π` across the image
/// with a gentle vertical ripple and a small seeded perturbation. Negative
/// phases wrap to just below `d_max`, so the field covers both sides of the
/// `arctan2` cut.
pub fn toy_problem(width: usize, height: usize, seed: u64) -> Result<ToyProblem> {
    if width < 2 || height < 2 {
        return Err(Error::InvalidConfig(format!(
            "toy field needs at least 2×2 pixels, got {width}×{height}"
        )));
    }
    let dmax = d_max(TOY_FREQUENCY_HZ)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (wf, hf) = ((width - 1) as f64, (height - 1) as f64);
    let mut phase = Raster::zeros(width, height);
    let mut offset = Raster::zeros(width, height);
    for y in 0..height {
        for x in 0..width {
            let (u, v) = (x as f64 / wf, y as f64 / hf);
            let jitter: f64 = rng.random_range(-0.01..0.01);
            phase.set(x, y, 0.4 * PI * (2.0 * u - 1.0) + 0.15 * (TAU * v).sin() + jitter);
            offset.set(x, y, 0.65 + 0.55 * (PI * u).cos() * (PI * v).cos());
        }
    }
    let sample = |j: f64| {
        phase
            .zip_map(&offset, |p, o| o + (p + j * FRAC_PI_2).cos())
            .expect("same shape")
    };
    Ok(ToyProblem {
        m0: sample(0.0),
        m1: sample(1.0),
        m2: sample(2.0),
        m3: sample(3.0),
        label: DepthImage {
            values: phase.map(|p| wrap_to_range(p * dmax / TAU, dmax)),
            valid: Mask::all_valid(width, height),
            frequency_hz: TOY_FREQUENCY_HZ,
        },
        frequency_hz: TOY_FREQUENCY_HZ,
    })
}

/// Gradient descent on the summed per-pixel ToF loss with respect to `m̂3`,
/// starting from `m̂3 = 0`.
pub fn toy_reconstruct_m3(
    m0: &Raster,
    m1: &Raster,
    m2: &Raster,
    label: &DepthImage,
    frequency_hz: f64,
    config: &ToyConfig,
) -> std::result::Result<(Raster, Trace), OptimError> {
    let init = Raster::zeros(m0.width(), m0.height());
    toy_reconstruct_m3_from(m0, m1, m2, label, frequency_hz, init, config)
}

/// [`toy_reconstruct_m3`] from a given starting `m̂3`.
pub fn toy_reconstruct_m3_from(
    m0: &Raster,
    m1: &Raster,
    m2: &Raster,
    label: &DepthImage,
    frequency_hz: f64,
    init: Raster,
    config: &ToyConfig,
) -> std::result::Result<(Raster, Trace), OptimError> {
    if !(config.step > 0.0) {
        return Err(Error::InvalidConfig(format!("step must be > 0, got {}", config.step)).into());
    }
    let shape = m0.shape();
    for r in [m1, m2, &label.values, &init] {
        check_shape(shape, r.shape())?;
    }
    let dmax = d_max(frequency_hz)?;
    let scale = dmax / TAU;
    let n = m0.len();
    let mut m3 = init;
    let mut trace = Trace {
        reports: Vec::with_capacity(config.iterations + 1),
        converged: false,
        best_iteration: 0,
    };
    let mut grad = vec![0.0; n];
    for it in 0..=config.iterations {
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..n {
            grad[i] = 0.0;
            if !label.valid.data()[i] {
                continue;
            }
            let m = [m0.data()[i], m1.data()[i], m2.data()[i], m3.data()[i]];
            let (v, g) = tof_pixel(
                m,
                label.values.data()[i],
                scale,
                dmax,
                config.epsilon,
                config.unwrap,
            );
            sum += v;
            count += 1;
            grad[i] = g[3];
        }
        let mean = if count == 0 { 0.0 } else { sum / count as f64 };
        let previous = trace.reports.last().map(|r| r.total);
        trace.reports.push(toy_report(it, mean));
        trace.best_iteration = it;
        if !mean.is_finite() {
            return Err(OptimError::Diverged {
                iteration: it,
                trace,
            });
        }
        if let Some(p) = previous {
            if config.tolerance > 0.0 && (p - mean).abs() < config.tolerance {
                trace.converged = true;
                break;
            }
        }
        if it == config.iterations {
            break;
        }
        for (m, g) in m3.data_mut().iter_mut().zip(&grad) {
            *m -= config.step * g;
        }
    }
    Ok((m3, trace))
}

fn toy_report(iteration: usize, loss: f64) -> LossReport {
    LossReport {
        iteration,
        tof: loss,
        photo: 0.0,
        smooth: 0.0,
        edge: 0.0,
        sim: 0.0,
        total: loss,
        masked_fraction: 0.0,
        fully_masked: false,
    }
}

/// Circular depth error `min(e, d_max − e)` of the reconstruction from
/// `(m0, m1, m2, m̂3)` against the label.
pub fn depth_error(
    m0: &Raster,
    m1: &Raster,
    m2: &Raster,
    m3: &Raster,
    label: &DepthImage,
    epsilon: f64,
) -> Result<Raster> {
    let shape = m0.shape();
    for r in [m1, m2, m3, &label.values] {
        check_shape(shape, r.shape())?;
    }
    let dmax = label.d_max();
    let scale = dmax / TAU;
    let data = (0..m0.len())
        .map(|i| {
            let d = pixel_depth(
                [m0.data()[i], m1.data()[i], m2.data()[i], m3.data()[i]],
                scale,
                dmax,
                epsilon,
            );
            let e = (d - label.values.data()[i]).abs();
            e.min(dmax - e)
        })
        .collect();
    Raster::from_vec(shape.0, shape.1, data)
}

/// Pixels whose depth error is below `TOY_CONVERGENCE·d_max`.
pub fn converged_mask(error: &Raster, d_max: f64) -> Mask {
    let limit = TOY_CONVERGENCE * d_max;
    Mask::from_fn(error.width(), error.height(), |x, y| error.get(x, y) < limit)
}

/// Pixels where the wrapped loss can be descended from `m̂3 = 0` without
/// crossing the `arctan2` cut: the cut only exists where `m0 − m2 > 0`, and
/// there the initial and the true `m3 − m1` must share a sign.
pub fn same_branch_mask(m0: &Raster, m1: &Raster, m2: &Raster, m3: &Raster) -> Result<Mask> {
    let shape = m0.shape();
    for r in [m1, m2, m3] {
        check_shape(shape, r.shape())?;
    }
    let data = (0..m0.len())
        .map(|i| {
            let x = m0.data()[i] - m2.data()[i];
            let y_init = -m1.data()[i];
            let y_true = m3.data()[i] - m1.data()[i];
            x < 0.0 || (y_init >= 0.0) == (y_true >= 0.0)
        })
        .collect();
    Mask::from_vec(shape.0, shape.1, data)
}

/// Intersection over union of the `true` sets; 1 when both are empty.
pub fn iou(a: &Mask, b: &Mask) -> Result<f64> {
    check_shape(a.shape(), b.shape())?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &q) in a.data().iter().zip(b.data()) {
        inter += (p && q) as usize;
        union += (p || q) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}
