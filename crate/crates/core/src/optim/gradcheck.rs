//! Central finite-difference oracle for every hand-written gradient.
//!
//! Each trial draws random inputs, rejecting draws that fall within a
//! margin of the op's non-smooth set (L1 kinks, the `arctan2` cut, the
//! unwrap boundary, integer bilinear sample coordinates, mask boundaries),
//! then compares the analytic gradient with central differences. The error
//! of one trial is `‖g_analytic − g_fd‖ / max(‖g_analytic‖, ‖g_fd‖)`.

use std::f64::consts::{FRAC_PI_2, TAU};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::Error;
use crate::itof::{d_max, pixel_depth, stabilizer_sign, DepthImage, MeasurementStack, SensorConfig, Taps};
use crate::losses::{
    evaluate, loss_edge, loss_photo, loss_sim, loss_smooth, loss_tof, FeatureStack, FlowProblem,
    LossWeights, SimilarityMeasure,
};
use crate::raster::{FlowField, Mask, Raster};
use crate::warp::warp;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-4;

const MAX_ATTEMPTS_PER_TRIAL: usize = 1000;
const W: usize = 5;
const H: usize = 4;
const FREQUENCY_HZ: f64 = 20e6;
const EPSILON: f64 = 1e-6;

/// Registered differentiable operations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GradOp {
    Photo,
    TofWrapped,
    TofUnwrapped,
    Smooth,
    Edge,
    SimL1,
    SimL2,
    SimCost,
    SimCosine,
    WarpImage,
    WarpFlow,
    TotalFlow,
}

impl GradOp {
    pub const ALL: [GradOp; 12] = [
        GradOp::Photo,
        GradOp::TofWrapped,
        GradOp::TofUnwrapped,
        GradOp::Smooth,
        GradOp::Edge,
        GradOp::SimL1,
        GradOp::SimL2,
        GradOp::SimCost,
        GradOp::SimCosine,
        GradOp::WarpImage,
        GradOp::WarpFlow,
        GradOp::TotalFlow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GradOp::Photo => "photo",
            GradOp::TofWrapped => "tof_wrapped",
            GradOp::TofUnwrapped => "tof_unwrapped",
            GradOp::Smooth => "smooth",
            GradOp::Edge => "edge",
            GradOp::SimL1 => "sim_l1",
            GradOp::SimL2 => "sim_l2",
            GradOp::SimCost => "sim_cost",
            GradOp::SimCosine => "sim_cosine",
            GradOp::WarpImage => "warp_image",
            GradOp::WarpFlow => "warp_flow",
            GradOp::TotalFlow => "total_flow",
        }
    }

    /// Piecewise-linear ops are held to `1e−6`, the rest to `1e−4`.
    pub fn threshold(self) -> f64 {
        match self {
            GradOp::Photo | GradOp::Smooth | GradOp::SimL1 => 1e-6,
            _ => 1e-4,
        }
    }

    fn sample(self, rng: &mut ChaCha8Rng) -> Option<Trial> {
        match self {
            GradOp::Photo => photo_trial(rng),
            GradOp::TofWrapped => tof_trial(rng, false),
            GradOp::TofUnwrapped => tof_trial(rng, true),
            GradOp::Smooth => smooth_trial(rng),
            GradOp::Edge => edge_trial(rng),
            GradOp::SimL1 => sim_trial(rng, SimilarityMeasure::L1),
            GradOp::SimL2 => sim_trial(rng, SimilarityMeasure::L2),
            GradOp::SimCost => sim_trial(rng, SimilarityMeasure::Cost),
            GradOp::SimCosine => sim_trial(rng, SimilarityMeasure::Cosine),
            GradOp::WarpImage => warp_image_trial(rng),
            GradOp::WarpFlow => warp_flow_trial(rng),
            GradOp::TotalFlow => total_flow_trial(rng),
        }
    }
}

impl fmt::Display for GradOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GradOp {
    type Err = Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        GradOp::ALL
            .into_iter()
            .find(|op| op.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown gradient op {s:?}")))
    }
}

/// Outcome for one op.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckRow {
    pub op: GradOp,
    pub trials: usize,
    /// Draws discarded for lying too close to a non-smooth point.
    pub rejected: usize,
    pub max_rel_error: f64,
    pub threshold: f64,
    pub passed: bool,
}

struct Trial {
    x: Vec<f64>,
    grad: Vec<f64>,
    f: Box<dyn Fn(&[f64]) -> f64>,
}

/// Runs `trials` accepted trials of one op. Op `k` of [`GradOp::ALL`] draws
/// from ChaCha stream `k` of `seed`.
pub fn gradcheck(op: GradOp, trials: usize, seed: u64) -> GradcheckRow {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stream = GradOp::ALL.iter().position(|&o| o == op).unwrap_or(0);
    rng.set_stream(stream as u64);
    let mut max_err: f64 = 0.0;
    let mut rejected = 0;
    let mut done = 0;
    let mut attempts = 0;
    while done < trials && attempts < MAX_ATTEMPTS_PER_TRIAL * trials.max(1) {
        attempts += 1;
        let Some(trial) = op.sample(&mut rng) else {
            rejected += 1;
            continue;
        };
        let err = relative_error(&trial);
        max_err = if err.is_nan() { f64::NAN } else { max_err.max(err) };
        done += 1;
    }
    let passed = done == trials && max_err < op.threshold();
    GradcheckRow {
        op,
        trials: done,
        rejected,
        max_rel_error: max_err,
        threshold: op.threshold(),
        passed,
    }
}

/// [`gradcheck`] over every registered op, in registry order.
pub fn gradcheck_all(trials: usize, seed: u64) -> Vec<GradcheckRow> {
    GradOp::ALL
        .into_iter()
        .map(|op| gradcheck(op, trials, seed))
        .collect()
}

fn relative_error(trial: &Trial) -> f64 {
    let mut x = trial.x.clone();
    let mut diff2 = 0.0;
    let mut a2 = 0.0;
    let mut n2 = 0.0;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + FD_STEP;
        let plus = (trial.f)(&x);
        x[i] = orig - FD_STEP;
        let minus = (trial.f)(&x);
        x[i] = orig;
        let fd = (plus - minus) / (2.0 * FD_STEP);
        let g = trial.grad[i];
        diff2 += (g - fd) * (g - fd);
        a2 += g * g;
        n2 += fd * fd;
    }
    let scale = a2.max(n2).sqrt();
    if scale < 1e-300 {
        0.0
    } else {
        diff2.sqrt() / scale
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn random_raster(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Raster {
    Raster::from_fn(w, h, |_, _| normal(rng))
}

fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize, p_valid: f64) -> Mask {
    let mut m = Mask::from_fn(w, h, |_, _| rng.random_bool(p_valid));
    m.set(0, 0, true);
    m
}

fn split(x: &[f64], w: usize, h: usize) -> Vec<Raster> {
    x.chunks(w * h)
        .map(|c| Raster::from_vec(w, h, c.to_vec()).expect("chunk size"))
        .collect()
}

fn concat(rasters: &[Raster]) -> Vec<f64> {
    rasters.iter().flat_map(|r| r.data().iter().copied()).collect()
}

fn forward_diffs(r: &Raster) -> impl Iterator<Item = f64> + '_ {
    let (w, h) = r.shape();
    let horiz = (0..h).flat_map(move |y| (0..w - 1).map(move |x| r.get(x + 1, y) - r.get(x, y)));
    let vert = (0..h - 1).flat_map(move |y| (0..w).map(move |x| r.get(x, y + 1) - r.get(x, y)));
    horiz.chain(vert)
}

fn photo_trial(rng: &mut ChaCha8Rng) -> Option<Trial> {
    let targets: Vec<Raster> = (0..2).map(|_| random_raster(rng, W, H)).collect();
    let masks: Vec<Mask> = (0..2).map(|_| random_mask(rng, W, H, 0.8)).collect();
    let warped: Vec<Raster> = targets
        .iter()
        .map(|t| {
            t.map(|v| {
                let r: f64 = rng.random_range(0.05..1.0);
                if rng.random_bool(0.5) {
                    v + r
                } else {
                    v - r
                }
            })
        })
        .collect();
    let grad = concat(&loss_photo(&warped, &targets, &masks).ok()?.gradients);
    Some(Trial {
        x: concat(&warped),
        grad,
        f: Box::new(move |x| loss_photo(&split(x, W, H), &targets, &masks).unwrap().value),
    })
}

fn tof_trial(rng: &mut ChaCha8Rng, unwrap: bool) -> Option<Trial> {
    let dmax = d_max(FREQUENCY_HZ).ok()?;
    let scale = dmax / TAU;
    let n = W * H;
    let mut m = [(); 4].map(|_| vec![0.0; n]);
    let mut labels = vec![0.0; n];
    for i in 0..n {
        loop {
            let phi: f64 = rng.random_range(0.0..TAU);
            let a: f64 = rng.random_range(0.5..1.5);
            let o: f64 = rng.random_range(-0.5..1.5);
            let px = [0.0, 1.0, 2.0, 3.0].map(|j| o + a * (phi + j * FRAC_PI_2).cos());
            let x = px[0] - px[2];
            let y = px[3] - px[1];
            let xs = x + stabilizer_sign(x) * EPSILON;
            let d = pixel_depth(px, scale, dmax, EPSILON);
            let cut = (y.atan2(xs)).abs().min(TAU - y.atan2(xs).abs());
            let label: f64 = rng.random_range(0.0..dmax);
            let e = (d - label).abs();
            if x.abs() < 0.05 || cut < 0.05 || e < 0.01 * dmax || (e - 0.5 * dmax).abs() < 0.01 * dmax {
                continue;
            }
            for j in 0..4 {
                m[j][i] = px[j];
            }
            labels[i] = label;
            break;
        }
    }
    let label = DepthImage {
        values: Raster::from_vec(W, H, labels).ok()?,
        valid: Mask::all_valid(W, H),
        frequency_hz: FREQUENCY_HZ,
    };
    let mask = random_mask(rng, W, H, 0.9);
    let rasters: Vec<Raster> = m.iter().map(|v| Raster::from_vec(W, H, v.clone()).unwrap()).collect();
    let eval = move |r: &[Raster]| {
        loss_tof(
            [&r[0], &r[1], &r[2], &r[3]],
            &label,
            FREQUENCY_HZ,
            EPSILON,
            &mask,
            unwrap,
        )
        .unwrap()
    };
    let grad = concat(&eval(&rasters).gradients);
    Some(Trial {
        x: concat(&rasters),
        grad,
        f: Box::new(move |x| eval(&split(x, W, H)).value),
    })
}

fn smooth_trial(rng: &mut ChaCha8Rng) -> Option<Trial> {
    let u = random_raster(rng, W, H);
    let v = random_raster(rng, W, H);
    if forward_diffs(&u).chain(forward_diffs(&v)).any(|d| d.abs() < 0.01) {
        return None;
    }
    let guide = Raster::from_fn(W, H, |_, _| rng.random_range(0.0..0.3));
    let flow = FlowField::new(u.clone(), v.clone()).ok()?;
    let grad = concat(&loss_smooth(&flow, &guide, 10.0).ok()?.gradients);
    Some(Trial {
        x: concat(&[u, v]),
        grad,
        f: Box::new(move |x| {
            let mut r = split(x, W, H);
            let v = r.pop().unwrap();
            let u = r.pop().unwrap();
            loss_smooth(&FlowField { u, v }, &guide, 10.0).unwrap().value
        }),
    })
}

fn edge_trial(rng: &mut ChaCha8Rng) -> Option<Trial> {
    let warped = random_raster(rng, W, H);
    let reference = random_raster(rng, W, H);
    let mask = random_mask(rng, W, H, 0.85);
    if forward_diffs(&warped).any(|d| d.abs() < 0.01) {
        return None;
    }
    let grad = loss_edge(&warped, &reference, Some(&mask), 1e-3, 1.0)
        .ok()?
        .gradients
        .remove(0);
    Some(Trial {
        x: warped.into_vec(),
        grad: grad.into_vec(),
        f: Box::new(move |x| {
            let m = Raster::from_vec(W, H, x.to_vec()).unwrap();
            loss_edge(&m, &reference, Some(&mask), 1e-3, 1.0).unwrap().value
        }),
    })
}

fn sim_trial(rng: &mut ChaCha8Rng, measure: SimilarityMeasure) -> Option<Trial> {
    const STACKS: usize = 3;
    const CH: usize = 3;
    let (w, h) = (4, 3);
    let stacks: Vec<FeatureStack> = (0..STACKS)
        .map(|_| FeatureStack {
            channels: (0..CH).map(|_| random_raster(rng, w, h)).collect(),
        })
        .collect();
    for i in 0..STACKS {
        for p in 0..w * h {
            let a: Vec<f64> = stacks[i].channels.iter().map(|c| c.data()[p]).collect();
            if measure == SimilarityMeasure::Cosine && a.iter().map(|v| v * v).sum::<f64>() < 0.01 {
                return None;
            }
            for j in i + 1..STACKS {
                for (c, &va) in a.iter().enumerate() {
                    let vb = stacks[j].channels[c].data()[p];
                    if measure == SimilarityMeasure::L1 && (va - vb).abs() < 0.01 {
                        return None;
                    }
                }
            }
        }
    }
    let rebuild = move |x: &[f64]| -> Vec<FeatureStack> {
        split(x, w, h)
            .chunks(CH)
            .map(|c| FeatureStack {
                channels: c.to_vec(),
            })
            .collect()
    };
    let x: Vec<f64> = stacks.iter().flat_map(|s| concat(&s.channels)).collect();
    let grad = concat(&loss_sim(&stacks, measure).ok()?.gradients);
    Some(Trial {
        x,
        grad,
        f: Box::new(move |x| loss_sim(&rebuild(x), measure).unwrap().value),
    })
}

/// Flow whose sample points lie inside the image and at least `margin`
/// away from integer coordinates.
fn interior_flow(rng: &mut ChaCha8Rng, w: usize, h: usize, margin: f64) -> FlowField {
    let mut coord = |x: usize, n: usize| {
        let cell = rng.random_range(0..n - 1) as f64;
        cell + rng.random_range(margin..1.0 - margin) - x as f64
    };
    let u = Raster::from_fn(w, h, |x, _| coord(x, w));
    let v = Raster::from_fn(w, h, |_, y| coord(y, h));
    FlowField { u, v }
}

fn warp_image_trial(rng: &mut ChaCha8Rng) -> Option<Trial> {
    let source = random_raster(rng, W, H);
    let flow = interior_flow(rng, W, H, 0.0);
    let cot = random_raster(rng, W, H);
    let grad = warp(&source, &flow).ok()?.vjp_image(&cot).ok()?;
    Some(Trial {
        x: source.into_vec(),
        grad: grad.into_vec(),
        f: Box::new(move |x| {
            let s = Raster::from_vec(W, H, x.to_vec()).unwrap();
            let r = warp(&s, &flow).unwrap();
            r.warped.data().iter().zip(cot.data()).map(|(a, b)| a * b).sum()
        }),
    })
}

fn warp_flow_trial(rng: &mut ChaCha8Rng) -> Option<Trial> {
    let source = random_raster(rng, W, H);
    let flow = interior_flow(rng, W, H, 0.05);
    let cot = random_raster(rng, W, H);
    let g = warp(&source, &flow).ok()?.vjp_flow(&cot).ok()?;
    Some(Trial {
        x: concat(&[flow.u, flow.v]),
        grad: concat(&[g.u, g.v]),
        f: Box::new(move |x| {
            let mut r = split(x, W, H);
            let v = r.pop().unwrap();
            let u = r.pop().unwrap();
            let res = warp(&source, &FlowField { u, v }).unwrap();
            res.warped.data().iter().zip(cot.data()).map(|(a, b)| a * b).sum()
        }),
    })
}

fn total_flow_trial(rng: &mut ChaCha8Rng) -> Option<Trial> {
    let (w, h) = (8, 6);
    let config = SensorConfig::new(vec![FREQUENCY_HZ], Taps::One).ok()?;
    let dmax = d_max(FREQUENCY_HZ).ok()?;
    let n = config.num_frames();
    let frames = |rng: &mut ChaCha8Rng| {
        (0..n)
            .map(|_| Raster::from_fn(w, h, |_, _| rng.random_range(-1.0..1.0)))
            .collect::<Vec<_>>()
    };
    let moving = MeasurementStack::from_config(&config, frames(rng)).ok()?;
    let static_gt = MeasurementStack::from_config(&config, frames(rng)).ok()?;
    let label = DepthImage {
        values: Raster::from_fn(w, h, |_, _| rng.random_range(0.0..dmax)),
        valid: Mask::all_valid(w, h),
        frequency_hz: FREQUENCY_HZ,
    };
    let problem = FlowProblem {
        config: config.clone(),
        moving,
        static_gt,
        labels: vec![label],
        epsilon: EPSILON,
        unwrap: true,
    };
    let weights = LossWeights {
        edge: 0.5,
        edge_shift: 1.0,
        sim: 0.0,
        ..LossWeights::default()
    };
    let reference = config.reference_timestep;
    let flows: Vec<FlowField> = (0..config.num_timesteps())
        .map(|t| {
            if t == reference {
                FlowField::zeros(w, h)
            } else {
                interior_flow(rng, w, h, 0.05)
            }
        })
        .collect();
    for (t, f) in flows.iter().enumerate() {
        if t != reference && forward_diffs(&f.u).chain(forward_diffs(&f.v)).any(|d| d.abs() < 1e-3) {
            return None;
        }
    }
    let eval = evaluate(&problem, &flows, &weights, true).ok()?;
    for i in 0..n {
        if config.timestep_layout[i] == reference {
            continue;
        }
        if forward_diffs(&eval.warped[i]).any(|d| d.abs() < 1e-3) {
            return None;
        }
    }
    let scale = dmax / TAU;
    for p in 0..w * h {
        let m = [0, 1, 2, 3].map(|j| eval.warped[j].data()[p]);
        let x = m[0] - m[2];
        let y = m[3] - m[1];
        let phi = y.atan2(x);
        let d = pixel_depth(m, scale, dmax, EPSILON);
        let e = (d - problem.labels[0].values.data()[p]).abs();
        if x.hypot(y) < 0.2
            || phi.abs().min(TAU - phi.abs()) < 1e-2
            || x.abs() < 1e-2
            || e < 1e-2
            || (e - 0.5 * dmax).abs() < 1e-2
        {
            return None;
        }
    }
    let x: Vec<f64> = flows.iter().flat_map(|f| concat(&[f.u.clone(), f.v.clone()])).collect();
    let grad: Vec<f64> = eval
        .flow_gradients
        .iter()
        .flat_map(|f| concat(&[f.u.clone(), f.v.clone()]))
        .collect();
    Some(Trial {
        x,
        grad,
        f: Box::new(move |x| {
            let flows: Vec<FlowField> = split(x, w, h)
                .chunks(2)
                .map(|c| FlowField {
                    u: c[0].clone(),
                    v: c[1].clone(),
                })
                .collect();
            evaluate(&problem, &flows, &weights, false).unwrap().report.total
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip_and_are_unique() {
        let mut names: Vec<_> = GradOp::ALL.iter().map(|o| o.name()).collect();
        for op in GradOp::ALL {
            assert_eq!(op.name().parse::<GradOp>().unwrap(), op);
        }
        names.sort();
        names.dedup();
        assert_eq!(names.len(), GradOp::ALL.len());
    }

    #[test]
    fn single_trial_of_every_op() {
        for row in gradcheck_all(1, 11) {
            assert_eq!(row.trials, 1, "{}", row.op);
            assert!(row.passed, "{row:?}");
        }
    }
}
