use super::{
    extract_features, loss_edge, loss_photo, loss_sim, loss_smooth, loss_tof, LossReport,
    LossWeights,
};
use crate::error::{Error, Result};
use crate::itof::{DepthImage, MeasurementStack, Normalization, SensorConfig, PHASES_PER_FREQUENCY};
use crate::raster::{check_shape, FlowField, Mask, Raster};
use crate::sim::CaptureBundle;
use crate::warp::{masked_fraction, warp, WarpResult};

/// Everything the flow objective needs besides the flows themselves.
#[derive(Clone, Debug)]
pub struct FlowProblem {
    pub config: SensorConfig,
    /// Captured frames, instance-normalized.
    pub moving: MeasurementStack,
    /// Motion-free frames, normalized with the statistics of `moving`.
    pub static_gt: MeasurementStack,
    /// Wrapped depth labels, one per frequency.
    pub labels: Vec<DepthImage>,
    pub epsilon: f64,
    pub unwrap: bool,
}

impl FlowProblem {
    /// Normalizes both stacks with the statistics of `moving`.
    pub fn new(
        config: SensorConfig,
        moving: &MeasurementStack,
        static_gt: &MeasurementStack,
        labels: Vec<DepthImage>,
        epsilon: f64,
        unwrap: bool,
    ) -> Result<Self> {
        let norm = Normalization::of_stack(moving);
        let problem = Self {
            config,
            moving: norm.apply(moving),
            static_gt: norm.apply(static_gt),
            labels,
            epsilon,
            unwrap,
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn from_bundle(bundle: &CaptureBundle, epsilon: f64, unwrap: bool) -> Result<Self> {
        Self::new(
            bundle.config.clone(),
            &bundle.moving,
            &bundle.static_gt,
            bundle.depth_gt.clone(),
            epsilon,
            unwrap,
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let n = self.config.num_frames();
        if self.moving.len() != n || self.static_gt.len() != n {
            return Err(Error::InvalidConfig(format!(
                "expected {n} frames in both stacks, got {} and {}",
                self.moving.len(),
                self.static_gt.len()
            )));
        }
        let shape = (self.moving.width(), self.moving.height());
        check_shape(shape, (self.static_gt.width(), self.static_gt.height()))?;
        if self.labels.len() != self.config.num_frequencies() {
            return Err(Error::InvalidConfig(format!(
                "expected {} depth labels, got {}",
                self.config.num_frequencies(),
                self.labels.len()
            )));
        }
        for l in &self.labels {
            check_shape(shape, l.values.shape())?;
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::Domain(format!(
                "epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.moving.width()
    }

    pub fn height(&self) -> usize {
        self.moving.height()
    }

    /// Frame that every other frame is aligned to.
    pub fn reference_frame(&self) -> &Raster {
        let i = self.config.frames_at(self.config.reference_timestep)[0];
        &self.moving.frames[i]
    }
}

/// Result of one objective evaluation.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: LossReport,
    /// Gradient of the total with respect to each timestep's flow; empty
    /// when gradients were not requested.
    pub flow_gradients: Vec<FlowField>,
    pub warped: Vec<Raster>,
    pub masks: Vec<Mask>,
}

/// Warps every frame by the flow of its timestep and evaluates the
/// weighted objective `L_ToF + λ_smooth·L_smooth + λ_edge·L_edge +
/// λ_sim·L_sim`. `L_photo` is reported but not part of the total.
pub fn evaluate(
    problem: &FlowProblem,
    flows: &[FlowField],
    weights: &LossWeights,
    with_gradients: bool,
) -> Result<Evaluation> {
    weights.validate()?;
    let config = &problem.config;
    let timesteps = config.num_timesteps();
    if flows.len() != timesteps {
        return Err(Error::InvalidConfig(format!(
            "expected {timesteps} flow fields, got {}",
            flows.len()
        )));
    }
    let (w, h) = (problem.width(), problem.height());
    for f in flows {
        check_shape((w, h), f.shape())?;
    }
    let reference = config.reference_timestep;
    let n = config.num_frames();

    let mut warps: Vec<Option<WarpResult>> = Vec::with_capacity(n);
    let mut warped = Vec::with_capacity(n);
    let mut masks = Vec::with_capacity(n);
    for i in 0..n {
        let frame = &problem.moving.frames[i];
        let t = config.timestep_layout[i];
        if t == reference {
            warped.push(frame.clone());
            masks.push(Mask::all_valid(w, h));
            warps.push(None);
        } else {
            let r = warp(frame, &flows[t])?;
            warped.push(r.warped.clone());
            masks.push(r.mask.clone());
            warps.push(Some(r));
        }
    }

    let photo = loss_photo(&warped, &problem.static_gt.frames, &masks)?;
    let mut fully_masked = photo.count == 0;

    let mut cot: Vec<Raster> = (0..n).map(|_| Raster::zeros(w, h)).collect();

    let groups = config.num_frequencies();
    let mut tof = 0.0;
    for k in 0..groups {
        let base = PHASES_PER_FREQUENCY * k;
        let mut mask = masks[base].clone();
        for m in &masks[base + 1..base + PHASES_PER_FREQUENCY] {
            mask = mask.and(m)?;
        }
        let l = loss_tof(
            [
                &warped[base],
                &warped[base + 1],
                &warped[base + 2],
                &warped[base + 3],
            ],
            &problem.labels[k],
            config.frequencies_hz[k],
            problem.epsilon,
            &mask,
            problem.unwrap,
        )?;
        fully_masked |= l.count == 0;
        tof += l.value / groups as f64;
        for (j, g) in l.gradients.iter().enumerate() {
            cot[base + j].add_scaled(g, 1.0 / groups as f64)?;
        }
    }

    let moving_steps: Vec<usize> = (0..timesteps).filter(|&t| t != reference).collect();
    let mut flow_grads: Vec<FlowField> = (0..timesteps).map(|_| FlowField::zeros(w, h)).collect();

    let mut smooth = 0.0;
    for &t in &moving_steps {
        let guide = &problem.moving.frames[config.frames_at(t)[0]];
        let l = loss_smooth(&flows[t], guide, weights.smooth_edge_weight)?;
        let share = 1.0 / moving_steps.len() as f64;
        smooth += l.value * share;
        if with_gradients {
            flow_grads[t].u.add_scaled(&l.gradients[0], weights.smooth * share)?;
            flow_grads[t].v.add_scaled(&l.gradients[1], weights.smooth * share)?;
        }
    }

    let moving_frames: Vec<usize> = (0..n)
        .filter(|&i| config.timestep_layout[i] != reference)
        .collect();
    let mut edge = 0.0;
    let target = problem.reference_frame();
    for &i in &moving_frames {
        let l = loss_edge(
            &warped[i],
            target,
            Some(&masks[i]),
            weights.edge_epsilon,
            weights.edge_shift,
        )?;
        let share = 1.0 / moving_frames.len() as f64;
        edge += l.value * share;
        cot[i].add_scaled(&l.gradients[0], weights.edge * share)?;
    }

    let sim = if weights.sim > 0.0 && n >= 2 {
        let feats: Vec<_> = problem.static_gt.frames.iter().map(extract_features).collect();
        loss_sim(&feats, weights.similarity)?.value
    } else {
        0.0
    };

    let total = tof + weights.smooth * smooth + weights.edge * edge + weights.sim * sim;

    if with_gradients {
        for (i, r) in warps.iter().enumerate() {
            if let Some(r) = r {
                let g = r.vjp_flow(&cot[i])?;
                let t = config.timestep_layout[i];
                flow_grads[t].u.add_scaled(&g.u, 1.0)?;
                flow_grads[t].v.add_scaled(&g.v, 1.0)?;
            }
        }
    } else {
        flow_grads.clear();
    }

    let report = LossReport {
        iteration: 0,
        tof,
        photo: photo.value,
        smooth,
        edge,
        sim,
        total,
        masked_fraction: masked_fraction(&masks)?,
        fully_masked,
    };
    Ok(Evaluation {
        report,
        flow_gradients: flow_grads,
        warped,
        masks,
    })
}

/// Loss report and flow gradients in one call.
pub fn total_loss(
    problem: &FlowProblem,
    flows: &[FlowField],
    weights: &LossWeights,
) -> Result<(LossReport, Vec<FlowField>)> {
    let e = evaluate(problem, flows, weights, true)?;
    Ok((e.report, e.flow_gradients))
}
