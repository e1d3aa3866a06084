use super::{sign0, LossValue};
use crate::error::{Error, Result};
use crate::raster::{check_shape, Mask, Raster};

/// Edge-alignment loss of a warped image against the reference image.
///
/// Each forward-difference position contributes
/// `exp(−1/(ε + |∂m_ref|)) / (|∂m̂| + s)`: large reference gradients switch
/// the weight on and the term rewards matching gradients in `m̂`. Positions
/// touching a masked pixel are skipped. The result is the mean over
/// positions, averaged over the two axes; the gradient is with respect to
/// `m̂` only.
pub fn loss_edge(
    warped: &Raster,
    reference: &Raster,
    mask: Option<&Mask>,
    epsilon: f64,
    shift: f64,
) -> Result<LossValue> {
    check_shape(warped.shape(), reference.shape())?;
    if let Some(m) = mask {
        check_shape(warped.shape(), m.shape())?;
    }
    if !(shift > 0.0) {
        return Err(Error::Domain(format!("edge shift must be > 0, got {shift}")));
    }
    let (w, h) = warped.shape();
    let valid = |i: usize| mask.map_or(true, |m| m.data()[i]);
    let mut grad = Raster::zeros(w, h);
    let mut value = 0.0;
    let mut axes = 0usize;
    let mut total_count = 0usize;
    for (sx, sy) in [(1usize, 0usize), (0, 1)] {
        if w <= sx || h <= sy {
            continue;
        }
        let mut terms: Vec<(usize, usize, f64, f64)> = Vec::new();
        for y in 0..h - sy {
            for x in 0..w - sx {
                let a = y * w + x;
                let b = (y + sy) * w + x + sx;
                if !(valid(a) && valid(b)) {
                    continue;
                }
                let weight = (-1.0 / (epsilon + (reference.data()[b] - reference.data()[a]).abs())).exp();
                terms.push((a, b, weight, warped.data()[b] - warped.data()[a]));
            }
        }
        if terms.is_empty() {
            continue;
        }
        let inv = 1.0 / terms.len() as f64;
        let mut sum = 0.0;
        for &(a, b, weight, diff) in &terms {
            let denom = diff.abs() + shift;
            sum += weight / denom;
            let g = -weight * sign0(diff) / (denom * denom) * inv;
            grad.data_mut()[b] += g;
            grad.data_mut()[a] -= g;
        }
        value += sum * inv;
        axes += 1;
        total_count += terms.len();
    }
    if axes > 1 {
        let norm = 1.0 / axes as f64;
        value *= norm;
        grad.scale(norm);
    }
    Ok(LossValue {
        value,
        gradients: vec![grad],
        count: total_count,
    })
}
