//! Loss functions with hand-written gradients.
//!
//! All losses are means rather than sums so that weights do not depend on
//! the image resolution; multiply by the number of contributing terms to
//! recover the summed form.

mod edge;
mod photo;
mod similarity;
mod smooth;
mod tof;
mod total;

use serde::{Deserialize, Serialize};

pub use edge::loss_edge;
pub use photo::loss_photo;
pub use similarity::{extract_features, loss_sim, FeatureStack, SimilarityMeasure, FEATURE_CHANNELS};
pub use smooth::loss_smooth;
pub use tof::{
    candidate_error, loss_tof, lookup_error, min_candidate_error, tof_pixel, unwrap_sign,
};
pub use total::{evaluate, total_loss, Evaluation, FlowProblem};

use crate::raster::Raster;

/// Scalar loss value with one gradient raster per differentiable input.
#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub gradients: Vec<Raster>,
    /// Number of terms that entered the mean; 0 means every pixel was
    /// masked and the value is defined as 0.
    pub count: usize,
}

/// Weights of the combined objective and the parameters of the
/// regularizers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub smooth: f64,
    pub edge: f64,
    pub sim: f64,
    /// Edge weighting `λ` inside the smoothness loss.
    pub smooth_edge_weight: f64,
    /// Shift `s` bounding the edge-loss gradient.
    pub edge_shift: f64,
    /// Stabilizer inside the edge-loss weight.
    pub edge_epsilon: f64,
    pub similarity: SimilarityMeasure,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            smooth: 1.0,
            edge: 0.1,
            sim: 0.01,
            smooth_edge_weight: 10.0,
            edge_shift: 100.0,
            edge_epsilon: 1e-3,
            similarity: SimilarityMeasure::Cosine,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> crate::Result<()> {
        let all = [
            ("smooth", self.smooth),
            ("edge", self.edge),
            ("sim", self.sim),
            ("smooth_edge_weight", self.smooth_edge_weight),
            ("edge_epsilon", self.edge_epsilon),
        ];
        for (name, v) in all {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(crate::Error::InvalidConfig(format!(
                    "loss weight {name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if !(self.edge_shift > 0.0) {
            return Err(crate::Error::InvalidConfig(format!(
                "edge_shift must be > 0, got {}",
                self.edge_shift
            )));
        }
        Ok(())
    }
}

/// Per-iteration loss summary; serializes to one CSV row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub iteration: usize,
    #[serde(rename = "L_ToF")]
    pub tof: f64,
    #[serde(rename = "L_photo")]
    pub photo: f64,
    #[serde(rename = "L_smooth")]
    pub smooth: f64,
    #[serde(rename = "L_edge")]
    pub edge: f64,
    #[serde(rename = "L_sim")]
    pub sim: f64,
    pub total: f64,
    pub masked_fraction: f64,
    /// Set when every pixel of some loss was masked.
    #[serde(skip)]
    pub fully_masked: bool,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [
            self.tof,
            self.photo,
            self.smooth,
            self.edge,
            self.sim,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

#[inline]
pub(crate) fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
