//! Parzen-window bag histograms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SPACING_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParzenConfig {
    pub p: usize,
    pub centers: Vec<f64>,
    pub gamma: f64,
}

impl ParzenConfig {
    pub fn new(centers: Vec<f64>, gamma: f64) -> Result<Self> {
        let cfg = ParzenConfig {
            p: centers.len(),
            centers,
            gamma,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 2 || self.centers.len() != self.p {
            return Err(Error::param(format!(
                "need at least 2 centers and p = centers ({} vs {})",
                self.p,
                self.centers.len()
            )));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::param("gamma must be finite and positive"));
        }
        if self.centers.iter().any(|c| !c.is_finite()) {
            return Err(Error::param("centers must be finite"));
        }
        let delta = self.spacing();
        if !(delta > 0.0) {
            return Err(Error::param("centers must be strictly increasing"));
        }
        let magnitude = self.centers[0].abs().max(self.centers[self.p - 1].abs());
        let tol = SPACING_RTOL * delta + 4.0 * f64::EPSILON * magnitude;
        for w in self.centers.windows(2) {
            let d = w[1] - w[0];
            if !(d > 0.0) || (d - delta).abs() > tol {
                return Err(Error::param("centers must be equally spaced"));
            }
        }
        Ok(())
    }

    /// Spacing between adjacent centers.
    pub fn spacing(&self) -> f64 {
        (self.centers[self.p - 1] - self.centers[0]) / (self.p - 1) as f64
    }
}

/// Centers spanning `[min, max]` of the training scores with kernel
/// standard deviation equal to the spacing.
pub fn fit_parzen_config(training_scores: &[f64], p: usize) -> Result<ParzenConfig> {
    fit_parzen_config_scaled(training_scores, p, 1.0)
}

/// As [`fit_parzen_config`] with kernel standard deviation `width` times
/// the spacing, i.e. `gamma = 1 / (2 (width * spacing)^2)`.
pub fn fit_parzen_config_scaled(
    training_scores: &[f64],
    p: usize,
    width: f64,
) -> Result<ParzenConfig> {
    if p < 2 {
        return Err(Error::param("p must be at least 2"));
    }
    if !(width > 0.0) || !width.is_finite() {
        return Err(Error::param("kernel width must be finite and positive"));
    }
    if training_scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::param("scores must be finite"));
    }
    let lo = training_scores
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let hi = training_scores
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if training_scores.is_empty() || !(hi > lo) {
        return Err(Error::DegenerateRange {
            count: training_scores.len(),
            value: if training_scores.is_empty() {
                f64::NAN
            } else {
                lo
            },
        });
    }
    let delta = (hi - lo) / (p - 1) as f64;
    let mut centers: Vec<f64> = (0..p).map(|j| lo + j as f64 * delta).collect();
    centers[p - 1] = hi;
    let s = width * delta;
    ParzenConfig::new(centers, 1.0 / (2.0 * s * s))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub h: Vec<f64>,
}

impl Histogram {
    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }
}

/// `h[j] = (1/b) sum_i exp(-gamma (f_i - c_j)^2)`.
///
/// Scores are summed in sorted order so the result does not depend on the
/// order they are given in.
pub fn parzen_histogram(scores: &[f64], config: &ParzenConfig) -> Result<Histogram> {
    if scores.is_empty() {
        return Err(Error::param("cannot featurize an empty bag"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::param("scores must be finite"));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let b = sorted.len() as f64;
    let h = config
        .centers
        .iter()
        .map(|&c| {
            let sum: f64 = sorted
                .iter()
                .map(|&f| {
                    let d = f - c;
                    (-config.gamma * d * d).exp()
                })
                .sum();
            sum / b
        })
        .collect();
    Ok(Histogram { h })
}
