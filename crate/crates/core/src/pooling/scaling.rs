//! Per-bin feature scaling for SVM training.
//!
//! Histogram bins live on very different scales: central bins take values
//! near 1 while tail bins stay close to 0. Each bin is mapped affinely so
//! its training range becomes [0, 1] before the SVM sees it, and the
//! learnt model is folded back so it applies to unscaled histograms.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::parzen::Histogram;
use super::svm::LinearModel;
use crate::error::{Error, Result};

/// Bins whose training range is below this fraction of the widest bin's
/// range are stretched by at most its inverse.
pub const MIN_RANGE_RATIO: f64 = 1e-3;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scaling {
    /// Train on the raw histograms.
    None,
    /// Map each bin's training range onto [0, 1].
    #[default]
    MinMax,
}

impl fmt::Display for Scaling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scaling::None => "none",
            Scaling::MinMax => "minmax",
        })
    }
}

impl FromStr for Scaling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Scaling::None),
            "minmax" => Ok(Scaling::MinMax),
            _ => Err(Error::param(format!(
                "unknown scaling {s:?} (none, minmax)"
            ))),
        }
    }
}

/// `x'[j] = (x[j] - offset[j]) / scale[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinScaler {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl BinScaler {
    pub fn identity(p: usize) -> Self {
        BinScaler {
            offset: vec![0.0; p],
            scale: vec![1.0; p],
        }
    }

    pub fn fit(kind: Scaling, feats: &[Histogram]) -> Result<Self> {
        let p = feats
            .first()
            .map(Histogram::len)
            .ok_or_else(|| Error::param("no features to fit scaling on"))?;
        if feats.iter().any(|h| h.len() != p) {
            return Err(Error::Mismatch("features differ in dimension".into()));
        }
        match kind {
            Scaling::None => Ok(Self::identity(p)),
            Scaling::MinMax => {
                let mut lo = vec![f64::INFINITY; p];
                let mut hi = vec![f64::NEG_INFINITY; p];
                for h in feats {
                    for (j, &v) in h.h.iter().enumerate() {
                        lo[j] = lo[j].min(v);
                        hi[j] = hi[j].max(v);
                    }
                }
                let widest = lo.iter().zip(&hi).map(|(l, h)| h - l).fold(0.0, f64::max);
                let floor = if widest > 0.0 {
                    MIN_RANGE_RATIO * widest
                } else {
                    1.0
                };
                let scale = lo
                    .iter()
                    .zip(&hi)
                    .map(|(l, h)| (h - l).max(floor))
                    .collect();
                Ok(BinScaler { offset: lo, scale })
            }
        }
    }

    pub fn apply(&self, h: &Histogram) -> Histogram {
        Histogram {
            h: h.h
                .iter()
                .zip(self.offset.iter().zip(&self.scale))
                .map(|(v, (o, s))| (v - o) / s)
                .collect(),
        }
    }

    /// A model trained on scaled features, rewritten for raw features.
    pub fn fold(&self, model: &LinearModel) -> LinearModel {
        let weights: Vec<f64> = model
            .weights
            .iter()
            .zip(&self.scale)
            .map(|(w, s)| w / s)
            .collect();
        let shift: f64 = weights.iter().zip(&self.offset).map(|(w, o)| w * o).sum();
        LinearModel {
            weights,
            intercept: model.intercept - shift,
            delta: model.delta,
        }
    }
}
