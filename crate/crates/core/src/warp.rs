//! Backward bilinear warping with validity masks and vector-Jacobian
//! products with respect to the source image and the flow.
//!
//! The reference pixel `(x, y)` takes the bilinear sample of the source at
//! `(x + u, y + v)`. A sample point outside `[0, W−1] × [0, H−1]` yields the
//! value 0 and a `false` mask entry; corners that carry zero weight are
//! never read, so a zero flow leaves every pixel valid. A sprite that moves
//! by `+δ` between the source and the reference frame therefore has flow
//! `−δ` on its reference footprint.

use crate::error::{Error, Result};
use crate::raster::{check_shape, FlowField, Mask, Raster};

/// Warped raster plus what is needed to backpropagate through the warp.
#[derive(Clone, Debug)]
pub struct WarpResult {
    pub warped: Raster,
    pub mask: Mask,
    sample_x: Vec<f64>,
    sample_y: Vec<f64>,
    grad_x: Vec<f64>,
    grad_y: Vec<f64>,
}

#[derive(Clone, Copy)]
struct Cell {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    fx: f64,
    fy: f64,
}

#[inline]
fn cell(sx: f64, sy: f64, width: usize, height: usize) -> Option<Cell> {
    let max_x = (width - 1) as f64;
    let max_y = (height - 1) as f64;
    if !(sx >= 0.0 && sx <= max_x && sy >= 0.0 && sy <= max_y) {
        return None;
    }
    let x0 = (sx.floor() as usize).min(width - 1);
    let y0 = (sy.floor() as usize).min(height - 1);
    Some(Cell {
        x0,
        x1: (x0 + 1).min(width - 1),
        y0,
        y1: (y0 + 1).min(height - 1),
        fx: sx - x0 as f64,
        fy: sy - y0 as f64,
    })
}

/// Backward-warps `source` by `flow`.
pub fn warp(source: &Raster, flow: &FlowField) -> Result<WarpResult> {
    check_shape(source.shape(), flow.shape())?;
    let (w, h) = source.shape();
    let n = w * h;
    let mut warped = Vec::with_capacity(n);
    let mut mask = Vec::with_capacity(n);
    let mut sample_x = Vec::with_capacity(n);
    let mut sample_y = Vec::with_capacity(n);
    let mut grad_x = Vec::with_capacity(n);
    let mut grad_y = Vec::with_capacity(n);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let sx = x as f64 + flow.u.data()[i];
            let sy = y as f64 + flow.v.data()[i];
            sample_x.push(sx);
            sample_y.push(sy);
            match cell(sx, sy, w, h) {
                Some(c) => {
                    let a = source.get(c.x0, c.y0);
                    let b = source.get(c.x1, c.y0);
                    let cc = source.get(c.x0, c.y1);
                    let d = source.get(c.x1, c.y1);
                    let (fx, fy) = (c.fx, c.fy);
                    warped.push(
                        (1.0 - fx) * (1.0 - fy) * a
                            + fx * (1.0 - fy) * b
                            + (1.0 - fx) * fy * cc
                            + fx * fy * d,
                    );
                    grad_x.push((1.0 - fy) * (b - a) + fy * (d - cc));
                    grad_y.push((1.0 - fx) * (cc - a) + fx * (d - b));
                    mask.push(true);
                }
                None => {
                    warped.push(0.0);
                    grad_x.push(0.0);
                    grad_y.push(0.0);
                    mask.push(false);
                }
            }
        }
    }
    Ok(WarpResult {
        warped: Raster::from_vec(w, h, warped)?,
        mask: Mask::from_vec(w, h, mask)?,
        sample_x,
        sample_y,
        grad_x,
        grad_y,
    })
}

impl WarpResult {
    /// Pulls a cotangent on the warped raster back onto the source raster
    /// (transpose of the bilinear resampling).
    pub fn vjp_image(&self, cotangent: &Raster) -> Result<Raster> {
        check_shape(self.warped.shape(), cotangent.shape())?;
        let (w, h) = self.warped.shape();
        let mut out = Raster::zeros(w, h);
        let acc = out.data_mut();
        for (i, &g) in cotangent.data().iter().enumerate() {
            if !self.mask.data()[i] || g == 0.0 {
                continue;
            }
            let c = cell(self.sample_x[i], self.sample_y[i], w, h)
                .expect("valid pixel has an in-bounds cell");
            let (fx, fy) = (c.fx, c.fy);
            acc[c.y0 * w + c.x0] += g * (1.0 - fx) * (1.0 - fy);
            acc[c.y0 * w + c.x1] += g * fx * (1.0 - fy);
            acc[c.y1 * w + c.x0] += g * (1.0 - fx) * fy;
            acc[c.y1 * w + c.x1] += g * fx * fy;
        }
        Ok(out)
    }

    /// Pulls a cotangent on the warped raster back onto the flow.
    pub fn vjp_flow(&self, cotangent: &Raster) -> Result<FlowField> {
        check_shape(self.warped.shape(), cotangent.shape())?;
        let (w, h) = self.warped.shape();
        let du = cotangent
            .data()
            .iter()
            .zip(&self.grad_x)
            .map(|(g, d)| g * d)
            .collect();
        let dv = cotangent
            .data()
            .iter()
            .zip(&self.grad_y)
            .map(|(g, d)| g * d)
            .collect();
        FlowField::new(Raster::from_vec(w, h, du)?, Raster::from_vec(w, h, dv)?)
    }

    /// Source-space sample coordinates, `(x + u, y + v)` per pixel.
    pub fn sample_points(&self) -> (&[f64], &[f64]) {
        (&self.sample_x, &self.sample_y)
    }
}

/// Fraction of pixels invalid in at least one of the masks (union over
/// masks, not the per-mask average).
pub fn masked_fraction(masks: &[Mask]) -> Result<f64> {
    let first = masks
        .first()
        .ok_or_else(|| Error::EmptyInput("masked_fraction needs at least one mask".into()))?;
    for m in masks {
        check_shape(first.shape(), m.shape())?;
    }
    let n = first.data().len();
    if n == 0 {
        return Ok(0.0);
    }
    let invalid = (0..n)
        .filter(|&i| masks.iter().any(|m| !m.data()[i]))
        .count();
    Ok(invalid as f64 / n as f64)
}
