use super::{sign0, LossValue};
use crate::error::Result;
use crate::raster::{check_shape, FlowField, Raster};

/// Edge-aware first-order smoothness of a flow field.
///
/// For each flow component and each image axis, takes the mean over
/// forward-difference positions of `exp(−λ|∂m|)·|∂V|`, then averages the
/// (up to) four terms. The guide image `m` is treated as constant; the two
/// returned gradients are with respect to `u` and `v`.
pub fn loss_smooth(flow: &FlowField, guide: &Raster, edge_weight: f64) -> Result<LossValue> {
    check_shape(flow.shape(), guide.shape())?;
    let (w, h) = guide.shape();
    let mut du = Raster::zeros(w, h);
    let mut dv = Raster::zeros(w, h);
    let mut value = 0.0;
    let mut terms = 0usize;
    // (step in x, step in y)
    for (sx, sy) in [(1usize, 0usize), (0, 1)] {
        let positions = (w - sx) * (h - sy);
        if positions == 0 {
            continue;
        }
        let inv = 1.0 / positions as f64;
        for (comp, grad) in [(&flow.u, &mut du), (&flow.v, &mut dv)] {
            let mut sum = 0.0;
            for y in 0..h - sy {
                for x in 0..w - sx {
                    let a = y * w + x;
                    let b = (y + sy) * w + x + sx;
                    let weight = (-edge_weight * (guide.data()[b] - guide.data()[a]).abs()).exp();
                    let diff = comp.data()[b] - comp.data()[a];
                    sum += weight * diff.abs();
                    let g = weight * sign0(diff) * inv;
                    grad.data_mut()[b] += g;
                    grad.data_mut()[a] -= g;
                }
            }
            value += sum * inv;
            terms += 1;
        }
    }
    if terms == 0 {
        return Ok(LossValue {
            value: 0.0,
            gradients: vec![du, dv],
            count: 0,
        });
    }
    let norm = 1.0 / terms as f64;
    du.scale(norm);
    dv.scale(norm);
    Ok(LossValue {
        value: value * norm,
        gradients: vec![du, dv],
        count: terms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_flow_is_free() {
        let guide = Raster::from_fn(6, 5, |x, y| (x * y) as f64);
        let l = loss_smooth(&FlowField::constant(6, 5, 1.5, -2.0), &guide, 10.0).unwrap();
        assert_eq!(l.value, 0.0);
    }

    #[test]
    fn unit_ramp_on_flat_guide() {
        let ramp = Raster::from_fn(7, 4, |x, _| x as f64);
        let flow = FlowField::new(ramp.clone(), ramp).unwrap();
        let l = loss_smooth(&flow, &Raster::filled(7, 4, 0.3), 10.0).unwrap();
        assert!((l.value - 0.5).abs() < 1e-15);
    }

    #[test]
    fn strong_edges_switch_the_penalty_off() {
        let guide = Raster::from_fn(6, 6, |x, y| 3.0 * x as f64 + 5.0 * y as f64);
        let flow = FlowField::new(
            Raster::from_fn(6, 6, |x, y| ((x * 3 + y) % 4) as f64),
            Raster::from_fn(6, 6, |x, _| x as f64),
        )
        .unwrap();
        let weak = loss_smooth(&flow, &guide, 0.1).unwrap().value;
        let strong = loss_smooth(&flow, &guide, 50.0).unwrap().value;
        assert!(weak > 0.1);
        assert!(strong < 1e-60);
    }

    #[test]
    fn shape_mismatch() {
        assert!(loss_smooth(&FlowField::zeros(3, 3), &Raster::zeros(3, 2), 1.0).is_err());
    }
}
