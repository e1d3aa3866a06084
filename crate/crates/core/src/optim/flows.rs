use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::OptimError;
use crate::error::{Error, Result};
use crate::itof::{DepthImage, MeasurementStack, DEFAULT_EPSILON};
use crate::losses::{evaluate, FlowProblem, LossReport, LossWeights};
use crate::raster::{FlowField, Mask, Raster};
use crate::sim::CaptureBundle;

/// Update rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Gd,
    Adam,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Gd => "gd",
            Self::Adam => "adam",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gd" => Ok(Self::Gd),
            "adam" => Ok(Self::Adam),
            other => Err(Error::InvalidConfig(format!(
                "unknown optimizer {other:?} (expected gd or adam)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub method: Method,
    pub step: f64,
    /// Number of updates; the trace holds one more entry for the start.
    pub iterations: usize,
    /// Stop once `|ΔL_total|` between consecutive iterates drops below
    /// this; 0 disables the check.
    pub tolerance: f64,
    /// Recorded for reproducibility; the optimizers are deterministic.
    pub seed: u64,
    pub unwrap: bool,
    pub epsilon: f64,
    pub pyramid: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            method: Method::Adam,
            step: 0.1,
            iterations: 500,
            tolerance: 0.0,
            seed: 0,
            unwrap: true,
            epsilon: DEFAULT_EPSILON,
            pyramid: false,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "step must be finite and > 0, got {}",
                self.step
            )));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be >= 1".into()));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "tolerance must be >= 0, got {}",
                self.tolerance
            )));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Loss history of one optimizer run.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub reports: Vec<LossReport>,
    pub converged: bool,
    /// Iteration index of the returned iterate.
    pub best_iteration: usize,
}

impl Trace {
    pub fn initial(&self) -> Option<&LossReport> {
        self.reports.first()
    }

    pub fn best(&self) -> Option<&LossReport> {
        self.reports.iter().find(|r| r.iteration == self.best_iteration)
    }
}

/// Fits one flow field per timestep to a simulated capture, starting from
/// zero flow. `λ_sim` is ignored: it only constrains static scenes.
pub fn optimize_flows(
    bundle: &CaptureBundle,
    weights: &LossWeights,
    config: &OptimConfig,
) -> std::result::Result<(Vec<FlowField>, Trace), OptimError> {
    let problem = FlowProblem::from_bundle(bundle, config.epsilon, config.unwrap)?;
    optimize_problem(&problem, weights, config)
}

/// [`optimize_flows`] on an already prepared problem.
pub fn optimize_problem(
    problem: &FlowProblem,
    weights: &LossWeights,
    config: &OptimConfig,
) -> std::result::Result<(Vec<FlowField>, Trace), OptimError> {
    config.validate()?;
    let zeros = zero_flows(problem);
    if !config.pyramid {
        return descend(problem, zeros, weights, config);
    }
    let weights = motion_weights(weights);

    let mid = downsample_problem(problem)?;
    let coarse = downsample_problem(&mid)?;
    let share = config.iterations / 4;
    let mut flows = zero_flows(&coarse);
    for (level, target) in [(&coarse, &mid), (&mid, problem)] {
        if share > 0 {
            let cfg = OptimConfig {
                iterations: share,
                pyramid: false,
                ..config.clone()
            };
            flows = descend(level, flows, &weights, &cfg)?.0;
        }
        flows = flows
            .iter()
            .map(|f| upsample_flow(f, target.width(), target.height()))
            .collect();
    }

    let start = evaluate(problem, &zeros, &weights, false)?.report;
    let fine_iters = config.iterations.saturating_sub(2 * share + 1);
    let (fine_flows, fine_trace) = if fine_iters > 0 {
        let cfg = OptimConfig {
            iterations: fine_iters,
            pyramid: false,
            ..config.clone()
        };
        match descend(problem, flows, &weights, &cfg) {
            Ok(r) => r,
            Err(OptimError::Diverged { iteration, trace }) => {
                return Err(OptimError::Diverged {
                    iteration: iteration + 1,
                    trace: prepend(start, trace),
                })
            }
            Err(e) => return Err(e),
        }
    } else {
        let mut report = evaluate(problem, &flows, &weights, false)?.report;
        report.iteration = 0;
        let trace = Trace {
            reports: vec![report],
            converged: false,
            best_iteration: 0,
        };
        (flows, trace)
    };
    let trace = prepend(start, fine_trace);
    if trace.best_iteration == 0 {
        Ok((zeros, trace))
    } else {
        Ok((fine_flows, trace))
    }
}

fn prepend(start: LossReport, fine: Trace) -> Trace {
    let mut reports = Vec::with_capacity(fine.reports.len() + 1);
    reports.push(LossReport {
        iteration: 0,
        ..start
    });
    for r in fine.reports {
        reports.push(LossReport {
            iteration: r.iteration + 1,
            ..r
        });
    }
    let best_fine = fine.best_iteration + 1;
    let best_iteration = if reports[0].total <= reports[best_fine].total {
        0
    } else {
        best_fine
    };
    Trace {
        reports,
        converged: fine.converged,
        best_iteration,
    }
}

/// Optimizes from a given initialization without the pyramid.
pub fn optimize_flows_from(
    problem: &FlowProblem,
    init: Vec<FlowField>,
    weights: &LossWeights,
    config: &OptimConfig,
) -> std::result::Result<(Vec<FlowField>, Trace), OptimError> {
    config.validate()?;
    descend(problem, init, weights, config)
}

fn motion_weights(weights: &LossWeights) -> LossWeights {
    LossWeights {
        sim: 0.0,
        ..weights.clone()
    }
}

fn zero_flows(problem: &FlowProblem) -> Vec<FlowField> {
    (0..problem.config.num_timesteps())
        .map(|_| FlowField::zeros(problem.width(), problem.height()))
        .collect()
}

fn descend(
    problem: &FlowProblem,
    init: Vec<FlowField>,
    weights: &LossWeights,
    config: &OptimConfig,
) -> std::result::Result<(Vec<FlowField>, Trace), OptimError> {
    let weights = motion_weights(weights);
    let (w, h) = (problem.width(), problem.height());
    let plane = w * h;
    let mut params = flatten(&init);
    let mut adam = Adam::new(config.step, params.len());
    let mut flows = init;
    let mut best = flows.clone();
    let mut trace = Trace {
        reports: Vec::with_capacity(config.iterations + 1),
        converged: false,
        best_iteration: 0,
    };
    let mut best_total = f64::INFINITY;
    for it in 0..=config.iterations {
        let eval = evaluate(problem, &flows, &weights, true)?;
        let mut report = eval.report;
        report.iteration = it;
        let finite = report.is_finite();
        let total = report.total;
        let previous = trace.reports.last().map(|r| r.total);
        trace.reports.push(report);
        if !finite {
            return Err(OptimError::Diverged {
                iteration: it,
                trace,
            });
        }
        if total < best_total {
            best_total = total;
            best.clone_from(&flows);
            trace.best_iteration = it;
        }
        if let Some(p) = previous {
            if config.tolerance > 0.0 && (p - total).abs() < config.tolerance {
                trace.converged = true;
                break;
            }
        }
        if it == config.iterations {
            break;
        }
        let grads = flatten(&eval.flow_gradients);
        match config.method {
            Method::Adam => adam.update(&mut params, &grads),
            Method::Gd => {
                for (p, g) in params.iter_mut().zip(&grads) {
                    *p -= config.step * g;
                }
            }
        }
        for (t, f) in flows.iter_mut().enumerate() {
            let base = 2 * t * plane;
            f.u.data_mut().copy_from_slice(&params[base..base + plane]);
            f.v.data_mut().copy_from_slice(&params[base + plane..base + 2 * plane]);
        }
    }
    Ok((best, trace))
}

fn flatten(flows: &[FlowField]) -> Vec<f64> {
    let mut out = Vec::new();
    for f in flows {
        out.extend_from_slice(f.u.data());
        out.extend_from_slice(f.v.data());
    }
    out
}

/// 2×2 box average; a trailing odd row or column averages what exists.
pub fn downsample(image: &Raster) -> Raster {
    let (w, h) = image.shape();
    let (cw, ch) = (w.div_ceil(2), h.div_ceil(2));
    Raster::from_fn(cw, ch, |x, y| {
        let mut sum = 0.0;
        let mut n = 0.0;
        for yy in 2 * y..(2 * y + 2).min(h) {
            for xx in 2 * x..(2 * x + 2).min(w) {
                sum += image.get(xx, yy);
                n += 1.0;
            }
        }
        sum / n
    })
}

/// Circular mean of wrapped depth over 2×2 blocks.
fn downsample_depth(depth: &DepthImage) -> DepthImage {
    let dmax = depth.d_max();
    let (w, h) = depth.values.shape();
    let (cw, ch) = (w.div_ceil(2), h.div_ceil(2));
    let values = Raster::from_fn(cw, ch, |x, y| {
        let (mut s, mut c) = (0.0, 0.0);
        for yy in 2 * y..(2 * y + 2).min(h) {
            for xx in 2 * x..(2 * x + 2).min(w) {
                let a = TAU * depth.values.get(xx, yy) / dmax;
                s += a.sin();
                c += a.cos();
            }
        }
        let mut d = s.atan2(c).rem_euclid(TAU) * dmax / TAU;
        if d >= dmax {
            d = 0.0;
        }
        d
    });
    let valid = Mask::from_fn(cw, ch, |x, y| {
        (2 * y..(2 * y + 2).min(h))
            .all(|yy| (2 * x..(2 * x + 2).min(w)).all(|xx| depth.valid.get(xx, yy)))
    });
    DepthImage {
        values,
        valid,
        frequency_hz: depth.frequency_hz,
    }
}

fn downsample_stack(stack: &MeasurementStack) -> Result<MeasurementStack> {
    MeasurementStack::new(
        stack.frames.iter().map(downsample).collect(),
        stack.meta.clone(),
    )
}

fn downsample_problem(problem: &FlowProblem) -> Result<FlowProblem> {
    Ok(FlowProblem {
        config: problem.config.clone(),
        moving: downsample_stack(&problem.moving)?,
        static_gt: downsample_stack(&problem.static_gt)?,
        labels: problem.labels.iter().map(downsample_depth).collect(),
        epsilon: problem.epsilon,
        unwrap: problem.unwrap,
    })
}

/// Bilinear upsampling to `width × height` with the vectors scaled by the
/// resolution ratio.
pub fn upsample_flow(flow: &FlowField, width: usize, height: usize) -> FlowField {
    let (cw, ch) = flow.shape();
    let sx = cw as f64 / width as f64;
    let sy = ch as f64 / height as f64;
    let resample = |r: &Raster, gain: f64| {
        Raster::from_fn(width, height, |x, y| {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (cw - 1) as f64);
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (ch - 1) as f64);
            let x0 = fx.floor() as usize;
            let y0 = fy.floor() as usize;
            let x1 = (x0 + 1).min(cw - 1);
            let y1 = (y0 + 1).min(ch - 1);
            let (ax, ay) = (fx - x0 as f64, fy - y0 as f64);
            let top = r.get(x0, y0) * (1.0 - ax) + r.get(x1, y0) * ax;
            let bottom = r.get(x0, y1) * (1.0 - ax) + r.get(x1, y1) * ax;
            gain * (top * (1.0 - ay) + bottom * ay)
        })
    };
    FlowField {
        u: resample(&flow.u, 1.0 / sx),
        v: resample(&flow.v, 1.0 / sy),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn downsample_averages_blocks() {
        let r = Raster::from_fn(5, 4, |x, y| (x + 10 * y) as f64);
        let d = downsample(&r);
        assert_eq!(d.shape(), (3, 2));
        assert_eq!(d.get(0, 0), 5.5);
        assert_eq!(d.get(2, 1), (24.0 + 34.0) / 2.0);
    }

    #[test]
    fn upsampling_constant_flow_doubles_it() {
        let f = upsample_flow(&FlowField::constant(4, 3, 1.5, -0.5), 8, 6);
        assert!(f.u.data().iter().all(|&v| (v - 3.0).abs() < 1e-12));
        assert!(f.v.data().iter().all(|&v| (v + 1.0).abs() < 1e-12));
    }

    #[test]
    fn circular_label_mean_straddles_the_wrap() {
        let dmax = crate::itof::d_max(20e6).unwrap();
        let values = Raster::from_fn(2, 2, |x, _| if x == 0 { 0.01 } else { dmax - 0.01 });
        let d = downsample_depth(&DepthImage {
            values,
            valid: Mask::all_valid(2, 2),
            frequency_hz: 20e6,
        });
        let v = d.values.get(0, 0);
        assert!(v < 1e-9 || dmax - v < 1e-9, "{v}");
    }

    #[test]
    fn config_validation() {
        assert!(OptimConfig::default().validate().is_ok());
        let bad = OptimConfig {
            step: 0.0,
            ..OptimConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = OptimConfig {
            iterations: 0,
            ..OptimConfig::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!("Adam".parse::<Method>().unwrap(), Method::Adam);
        assert!("sgd".parse::<Method>().is_err());
    }
}
