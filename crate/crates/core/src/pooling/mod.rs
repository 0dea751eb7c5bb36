//! Bag featurization and the four pooling rules.

pub mod parzen;
pub mod scaling;
pub mod svm;
pub mod threshold;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use parzen::{
    fit_parzen_config, fit_parzen_config_scaled, parzen_histogram, Histogram, ParzenConfig,
};
pub use scaling::{BinScaler, Scaling};
pub use svm::{
    svm_margin, train_linear_svm, train_linear_svm_with, LinearModel, SvmOptions, Training,
};
pub use threshold::{error_at, optimize_threshold, Threshold};

/// Serializes an `f64` that may be infinite: finite values as numbers,
/// infinities as the strings `"inf"` and `"-inf"`.
pub(crate) mod extended_f64 {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v == f64::INFINITY {
            s.serialize_str("inf")
        } else if *v == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            Err(serde::ser::Error::custom("NaN cannot be serialized"))
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(D::Error::custom(format!(
                    "expected a number, \"inf\" or \"-inf\", got {other:?}"
                ))),
            },
        }
    }
}

/// What the mean and max rules are applied to.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolDomain {
    /// The bag's raw detector scores.
    #[default]
    Scores,
    /// The bins of the bag's Parzen histogram.
    Histogram,
}

impl fmt::Display for PoolDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PoolDomain::Scores => "scores",
            PoolDomain::Histogram => "histogram",
        })
    }
}

impl FromStr for PoolDomain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scores" => Ok(PoolDomain::Scores),
            "histogram" => Ok(PoolDomain::Histogram),
            _ => Err(Error::param(format!(
                "unknown pool domain {s:?} (scores, histogram)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarKind {
    Mean,
    Max,
}

/// Mean or maximum of a non-empty sequence, independent of its order.
pub fn scalar_pool(values: &[f64], kind: ScalarKind) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::param("cannot pool an empty bag"));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::param("cannot pool NaN values"));
    }
    Ok(match kind {
        ScalarKind::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ScalarKind::Mean => {
            let mut sorted = values.to_vec();
            sorted.sort_by(f64::total_cmp);
            sorted.iter().sum::<f64>() / sorted.len() as f64
        }
    })
}

/// The statistic the mean/max rules threshold, taken in `domain`.
pub fn pooled_statistic(
    scores: &[f64],
    hist: &Histogram,
    kind: ScalarKind,
    domain: PoolDomain,
) -> Result<f64> {
    match domain {
        PoolDomain::Scores => scalar_pool(scores, kind),
        PoolDomain::Histogram => scalar_pool(&hist.h, kind),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// SVM trained on all strategies.
    Disc,
    /// SVM trained on the strategy under test.
    Clair,
    Mean,
    Max,
}

impl Pooling {
    pub const ALL: [Pooling; 4] = [Pooling::Disc, Pooling::Clair, Pooling::Mean, Pooling::Max];

    pub fn name(self) -> &'static str {
        match self {
            Pooling::Disc => "disc",
            Pooling::Clair => "clair",
            Pooling::Mean => "mean",
            Pooling::Max => "max",
        }
    }
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Pooling::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::param(format!("unknown pooling {s:?} (disc, clair, mean, max)")))
    }
}

/// On-disk form of one trained SVM pooler with its featurization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub p: usize,
    pub centers: Vec<f64>,
    pub gamma: f64,
    pub weights: Vec<f64>,
    pub intercept: f64,
    #[serde(with = "extended_f64")]
    pub delta: f64,
    pub pool_domain: PoolDomain,
}

impl ModelFile {
    pub fn new(
        parzen: &ParzenConfig,
        model: &LinearModel,
        pool_domain: PoolDomain,
    ) -> Result<Self> {
        if model.weights.len() != parzen.p {
            return Err(Error::Mismatch(format!(
                "model has {} weights but featurization has p = {}",
                model.weights.len(),
                parzen.p
            )));
        }
        Ok(ModelFile {
            p: parzen.p,
            centers: parzen.centers.clone(),
            gamma: parzen.gamma,
            weights: model.weights.clone(),
            intercept: model.intercept,
            delta: model.delta,
            pool_domain,
        })
    }

    /// Splits into featurization and model, checking that the parts agree.
    pub fn into_parts(self) -> Result<(ParzenConfig, LinearModel, PoolDomain)> {
        if self.centers.len() != self.p || self.weights.len() != self.p {
            return Err(Error::Mismatch(format!(
                "model file declares p = {} but has {} centers and {} weights",
                self.p,
                self.centers.len(),
                self.weights.len()
            )));
        }
        let parzen = ParzenConfig {
            p: self.p,
            centers: self.centers,
            gamma: self.gamma,
        };
        parzen.validate()?;
        let model = LinearModel {
            weights: self.weights,
            intercept: self.intercept,
            delta: self.delta,
        };
        Ok((parzen, model, self.pool_domain))
    }
}
