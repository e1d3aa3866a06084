use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{sign0, LossValue};
use crate::error::{Error, Result};
use crate::raster::{check_shape, Raster};

/// Channels produced by [`extract_features`].
pub const FEATURE_CHANNELS: usize = 6;

const SCALES: [usize; 2] = [1, 2];
const COSINE_MIN_NORM: f64 = 1e-12;

/// Per-pixel feature vectors of one image, stored channel by channel.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStack {
    pub channels: Vec<Raster>,
}

impl FeatureStack {
    pub fn shape(&self) -> (usize, usize) {
        self.channels.first().map_or((0, 0), Raster::shape)
    }

    fn column(&self, i: usize, out: &mut [f64]) {
        for (c, ch) in self.channels.iter().enumerate() {
            out[c] = ch.data()[i];
        }
    }
}

/// Hand-crafted multi-scale features: at each scale a locally normalized
/// intensity followed by the horizontal and vertical forward differences.
pub fn extract_features(image: &Raster) -> FeatureStack {
    let mut channels = Vec::with_capacity(FEATURE_CHANNELS);
    for s in SCALES {
        channels.push(local_normalize(image, 2 * s));
        channels.push(forward_diff(image, s, 0));
        channels.push(forward_diff(image, 0, s));
    }
    FeatureStack { channels }
}

fn box_mean(image: &Raster, radius: usize) -> Raster {
    let (w, h) = image.shape();
    let mut rows = Raster::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(radius);
            let hi = (x + radius).min(w - 1);
            let s: f64 = (lo..=hi).map(|xx| image.get(xx, y)).sum();
            rows.set(x, y, s / (hi - lo + 1) as f64);
        }
    }
    Raster::from_fn(w, h, |x, y| {
        let lo = y.saturating_sub(radius);
        let hi = (y + radius).min(h - 1);
        let s: f64 = (lo..=hi).map(|yy| rows.get(x, yy)).sum();
        s / (hi - lo + 1) as f64
    })
}

fn local_normalize(image: &Raster, radius: usize) -> Raster {
    let mean = box_mean(image, radius);
    let sq = box_mean(&image.map(|v| v * v), radius);
    Raster::from_fn(image.width(), image.height(), |x, y| {
        let mu = mean.get(x, y);
        let sigma = (sq.get(x, y) - mu * mu).max(0.0).sqrt();
        if sigma < 1e-6 {
            0.0
        } else {
            (image.get(x, y) - mu) / sigma
        }
    })
}

fn forward_diff(image: &Raster, sx: usize, sy: usize) -> Raster {
    let (w, h) = image.shape();
    Raster::from_fn(w, h, |x, y| {
        if x + sx < w && y + sy < h {
            image.get(x + sx, y + sy) - image.get(x, y)
        } else {
            0.0
        }
    })
}

/// Distance between two feature vectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityMeasure {
    L1,
    /// Squared Euclidean distance.
    L2,
    /// Negated inner product.
    Cost,
    /// Negated cosine similarity.
    Cosine,
}

impl fmt::Display for SimilarityMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::L1 => "l1",
            Self::L2 => "l2",
            Self::Cost => "cost",
            Self::Cosine => "cosine",
        })
    }
}

impl FromStr for SimilarityMeasure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Self::L1),
            "l2" => Ok(Self::L2),
            "cost" => Ok(Self::Cost),
            "cosine" => Ok(Self::Cosine),
            other => Err(Error::InvalidConfig(format!(
                "unknown similarity measure {other:?} (expected l1, l2, cost or cosine)"
            ))),
        }
    }
}

impl SimilarityMeasure {
    /// Value and gradient with respect to `a`.
    fn eval(self, a: &[f64], b: &[f64], grad_a: &mut [f64]) -> f64 {
        match self {
            Self::L1 => a
                .iter()
                .zip(b)
                .zip(grad_a.iter_mut())
                .map(|((x, y), g)| {
                    *g = sign0(x - y);
                    (x - y).abs()
                })
                .sum(),
            Self::L2 => a
                .iter()
                .zip(b)
                .zip(grad_a.iter_mut())
                .map(|((x, y), g)| {
                    *g = 2.0 * (x - y);
                    (x - y) * (x - y)
                })
                .sum(),
            Self::Cost => a
                .iter()
                .zip(b)
                .zip(grad_a.iter_mut())
                .map(|((x, y), g)| {
                    *g = -y;
                    -x * y
                })
                .sum(),
            Self::Cosine => {
                let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
                let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
                if na < COSINE_MIN_NORM || nb < COSINE_MIN_NORM {
                    grad_a.iter_mut().for_each(|g| *g = 0.0);
                    return 0.0;
                }
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let cos = dot / (na * nb);
                for ((g, x), y) in grad_a.iter_mut().zip(a).zip(b) {
                    *g = -(y / (na * nb) - cos * x / (na * na));
                }
                -cos
            }
        }
    }

    fn skips(self, a: &[f64], b: &[f64]) -> bool {
        self == Self::Cosine
            && (a.iter().map(|v| v * v).sum::<f64>().sqrt() < COSINE_MIN_NORM
                || b.iter().map(|v| v * v).sum::<f64>().sqrt() < COSINE_MIN_NORM)
    }
}

/// Feature similarity between every ordered pair of distinct stacks,
/// averaged over pairs and pixel positions.
///
/// Gradients are returned stack-major: entry `i * C + c` is the gradient
/// with respect to channel `c` of stack `i`.
pub fn loss_sim(stacks: &[FeatureStack], measure: SimilarityMeasure) -> Result<LossValue> {
    if stacks.len() < 2 {
        return Err(Error::EmptyInput(format!(
            "similarity loss needs at least 2 feature stacks, got {}",
            stacks.len()
        )));
    }
    let c = stacks[0].channels.len();
    if c == 0 {
        return Err(Error::EmptyInput("feature stack has no channels".into()));
    }
    let (w, h) = stacks[0].shape();
    for s in stacks {
        if s.channels.len() != c {
            return Err(Error::InvalidConfig(format!(
                "feature stacks disagree on channel count: {} vs {c}",
                s.channels.len()
            )));
        }
        for ch in &s.channels {
            check_shape((w, h), ch.shape())?;
        }
    }
    let n = stacks.len();
    let mut grads: Vec<Raster> = (0..n * c).map(|_| Raster::zeros(w, h)).collect();
    let mut a = vec![0.0; c];
    let mut b = vec![0.0; c];
    let mut ga = vec![0.0; c];
    let mut gb = vec![0.0; c];
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            for p in 0..w * h {
                stacks[i].column(p, &mut a);
                stacks[j].column(p, &mut b);
                if measure.skips(&a, &b) {
                    continue;
                }
                sum += measure.eval(&a, &b, &mut ga);
                measure.eval(&b, &a, &mut gb);
                if measure == SimilarityMeasure::L1 || measure == SimilarityMeasure::L2 {
                    // distance is symmetric; d/db = −d/da
                    for (g, x) in gb.iter_mut().zip(&ga) {
                        *g = -x;
                    }
                }
                for k in 0..c {
                    grads[i * c + k].data_mut()[p] += ga[k];
                    grads[j * c + k].data_mut()[p] += gb[k];
                }
                count += 1;
            }
        }
    }
    if count == 0 {
        return Ok(LossValue {
            value: 0.0,
            gradients: grads,
            count: 0,
        });
    }
    let inv = 1.0 / count as f64;
    for g in &mut grads {
        g.scale(inv);
    }
    Ok(LossValue {
        value: sum * inv,
        gradients: grads,
        count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stack(vals: &[[f64; 2]]) -> FeatureStack {
        FeatureStack {
            channels: (0..2)
                .map(|c| Raster::from_vec(vals.len(), 1, vals.iter().map(|v| v[c]).collect()).unwrap())
                .collect(),
        }
    }

    #[test]
    fn identical_stacks() {
        let s = stack(&[[1.0, 2.0], [0.5, -1.0]]);
        let pair = [s.clone(), s];
        assert_eq!(loss_sim(&pair, SimilarityMeasure::L1).unwrap().value, 0.0);
        assert_eq!(loss_sim(&pair, SimilarityMeasure::L2).unwrap().value, 0.0);
        assert!((loss_sim(&pair, SimilarityMeasure::Cosine).unwrap().value + 1.0).abs() < 1e-15);
    }

    #[test]
    fn hand_values() {
        let pair = [stack(&[[1.0, 0.0]]), stack(&[[0.0, 2.0]])];
        assert_eq!(loss_sim(&pair, SimilarityMeasure::L1).unwrap().value, 3.0);
        assert_eq!(loss_sim(&pair, SimilarityMeasure::L2).unwrap().value, 5.0);
        assert_eq!(loss_sim(&pair, SimilarityMeasure::Cost).unwrap().value, 0.0);
        assert_eq!(loss_sim(&pair, SimilarityMeasure::Cosine).unwrap().value, 0.0);
    }

    #[test]
    fn cosine_skips_zero_columns() {
        let pair = [stack(&[[0.0, 0.0], [1.0, 1.0]]), stack(&[[1.0, 0.0], [2.0, 2.0]])];
        let l = loss_sim(&pair, SimilarityMeasure::Cosine).unwrap();
        assert_eq!(l.count, 2);
        assert!((l.value + 1.0).abs() < 1e-15);
    }

    #[test]
    fn needs_two_stacks() {
        assert!(loss_sim(&[stack(&[[1.0, 1.0]])], SimilarityMeasure::L1).is_err());
    }

    #[test]
    fn measure_round_trip() {
        for m in [
            SimilarityMeasure::L1,
            SimilarityMeasure::L2,
            SimilarityMeasure::Cost,
            SimilarityMeasure::Cosine,
        ] {
            assert_eq!(m.to_string().parse::<SimilarityMeasure>().unwrap(), m);
        }
        assert!("hamming".parse::<SimilarityMeasure>().is_err());
    }

    #[test]
    fn features_shape_and_flat_image() {
        let f = extract_features(&Raster::filled(9, 7, 0.7));
        assert_eq!(f.channels.len(), FEATURE_CHANNELS);
        assert!(f.channels.iter().all(|c| c.shape() == (9, 7)));
        assert!(f.channels.iter().all(|c| c.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn local_normalization_is_offset_and_gain_invariant() {
        let img = Raster::from_fn(10, 8, |x, y| ((x * 7 + y * 3) % 5) as f64);
        let a = extract_features(&img);
        let b = extract_features(&img.map(|v| 3.0 * v + 2.0));
        for (ca, cb) in [(0, 0), (3, 3)] {
            for (u, v) in a.channels[ca].data().iter().zip(b.channels[cb].data()) {
                assert!((u - v).abs() < 1e-9);
            }
        }
    }
}
