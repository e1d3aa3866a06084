//! Depth-supervised loss on the reconstructed ToF depth.
//!
//! Both the prediction and the label live in `[0, d_max)`, so their
//! difference lies in `(−d_max, d_max)` and the closest phase-unwrapped
//! candidate `d̂ + k·d_max` needs only `k ∈ {−1, 0, 1}`. In gradient form
//! the unwrapping flips the sign of the plain L1 gradient wherever the
//! wrapped error reaches `d_max / 2`.

use std::f64::consts::TAU;

use super::{sign0, LossValue};
use crate::error::{Error, Result};
use crate::itof::{d_max, phase_from_components, stabilizer_sign, DepthImage};
use crate::raster::{check_shape, Mask, Raster};

/// `|diff + k·d_max|`.
#[inline]
pub fn candidate_error(diff: f64, k: i32, d_max: f64) -> f64 {
    (diff + k as f64 * d_max).abs()
}

/// Closest candidate by explicit search over `k ∈ {−1, 0, 1}`.
pub fn min_candidate_error(diff: f64, d_max: f64) -> f64 {
    [-1, 0, 1]
        .into_iter()
        .map(|k| candidate_error(diff, k, d_max))
        .fold(f64::INFINITY, f64::min)
}

/// Closest candidate via the interval lookup on `diff = d̂ − d_label`:
/// `(−d_max, −d_max/2] → k = +1`, `(−d_max/2, d_max/2] → k = 0`,
/// `(d_max/2, d_max) → k = −1`.
pub fn lookup_error(diff: f64, d_max: f64) -> f64 {
    let half = 0.5 * d_max;
    let k = if diff <= -half {
        1
    } else if diff <= half {
        0
    } else {
        -1
    };
    candidate_error(diff, k, d_max)
}

/// Gradient multiplier of the unwrapped loss: `+1` below `d_max / 2`,
/// `−1` from `d_max / 2` on.
#[inline]
pub fn unwrap_sign(abs_error: f64, d_max: f64) -> f64 {
    if abs_error >= 0.5 * d_max {
        -1.0
    } else {
        1.0
    }
}

/// Loss and gradient with respect to `(m0, m1, m2, m3)` of one pixel.
///
/// `meters_per_radian = d_max / 2π`.
#[inline]
pub fn tof_pixel(
    m: [f64; 4],
    label: f64,
    meters_per_radian: f64,
    d_max: f64,
    epsilon: f64,
    unwrap: bool,
) -> (f64, [f64; 4]) {
    let x = m[0] - m[2];
    let y = m[3] - m[1];
    let xs = x + stabilizer_sign(x) * epsilon;
    let mut d = meters_per_radian * phase_from_components(y, xs);
    if d >= d_max {
        d = 0.0;
    }
    let diff = d - label;
    let e = diff.abs();
    let (value, mut g) = if unwrap {
        let s = unwrap_sign(e, d_max);
        (if s < 0.0 { d_max - e } else { e }, s * sign0(diff))
    } else {
        (e, sign0(diff))
    };
    if g == 0.0 {
        return (value, [0.0; 4]);
    }
    let r2 = xs * xs + y * y;
    g *= meters_per_radian / r2;
    let dd_dx = -y * g;
    let dd_dy = xs * g;
    (value, [dd_dx, -dd_dy, -dd_dx, dd_dy])
}

/// Mean L1 error between the depth reconstructed from `pred` and `label`
/// over pixels valid in both `mask` and the label, with gradients for the
/// four predicted phase samples.
pub fn loss_tof(
    pred: [&Raster; 4],
    label: &DepthImage,
    frequency_hz: f64,
    epsilon: f64,
    mask: &Mask,
    unwrap: bool,
) -> Result<LossValue> {
    let dmax = d_max(frequency_hz)?;
    let shape = pred[0].shape();
    for p in &pred[1..] {
        check_shape(shape, p.shape())?;
    }
    check_shape(shape, label.values.shape())?;
    check_shape(shape, label.valid.shape())?;
    check_shape(shape, mask.shape())?;
    let scale = dmax / TAU;
    let n = shape.0 * shape.1;
    let mut grads = [(); 4].map(|_| vec![0.0; n]);
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..n {
        if !(mask.data()[i] && label.valid.data()[i]) {
            continue;
        }
        let l = label.values.data()[i];
        if !(0.0..dmax).contains(&l) {
            return Err(Error::Domain(format!(
                "depth label {l} outside [0, {dmax})"
            )));
        }
        let m = [
            pred[0].data()[i],
            pred[1].data()[i],
            pred[2].data()[i],
            pred[3].data()[i],
        ];
        let (v, g) = tof_pixel(m, l, scale, dmax, epsilon, unwrap);
        sum += v;
        count += 1;
        for k in 0..4 {
            grads[k][i] = g[k];
        }
    }
    let inv = if count > 0 { 1.0 / count as f64 } else { 0.0 };
    let gradients = grads
        .into_iter()
        .map(|mut g| {
            g.iter_mut().for_each(|v| *v *= inv);
            Raster::from_vec(shape.0, shape.1, g)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LossValue {
        value: sum * inv,
        gradients,
        count,
    })
}
