use super::{sign0, LossValue};
use crate::error::{Error, Result};
use crate::raster::{check_shape, Mask, Raster};

/// Mean absolute residual over unmasked pixels of all frames.
///
/// The subgradient at a zero residual is 0. When every pixel is masked the
/// loss is 0 with zero gradients and `count == 0`.
pub fn loss_photo(warped: &[Raster], targets: &[Raster], masks: &[Mask]) -> Result<LossValue> {
    if warped.len() != targets.len() || warped.len() != masks.len() {
        return Err(Error::InvalidConfig(format!(
            "loss_photo: {} predictions, {} targets, {} masks",
            warped.len(),
            targets.len(),
            masks.len()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for ((p, t), m) in warped.iter().zip(targets).zip(masks) {
        check_shape(p.shape(), t.shape())?;
        check_shape(p.shape(), m.shape())?;
        for i in 0..p.len() {
            if m.data()[i] {
                sum += (p.data()[i] - t.data()[i]).abs();
                count += 1;
            }
        }
    }
    if count == 0 {
        return Ok(LossValue {
            value: 0.0,
            gradients: warped.iter().map(|p| Raster::zeros(p.width(), p.height())).collect(),
            count: 0,
        });
    }
    let inv = 1.0 / count as f64;
    let gradients = warped
        .iter()
        .zip(targets)
        .zip(masks)
        .map(|((p, t), m)| {
            let data = (0..p.len())
                .map(|i| {
                    if m.data()[i] {
                        sign0(p.data()[i] - t.data()[i]) * inv
                    } else {
                        0.0
                    }
                })
                .collect();
            Raster::from_vec(p.width(), p.height(), data)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LossValue {
        value: sum * inv,
        gradients,
        count,
    })
}
