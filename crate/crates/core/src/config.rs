//! Experiment configuration: JSON file plus `dotted.key=value` overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::cover::CoverParams;
use crate::error::{Error, Result};
use crate::pooling::{PoolDomain, Scaling};
use crate::sid::SidParams;
use crate::spreading::{Strategy, DEFAULT_USES_BETA};

pub const DEFAULT_BAG_SIZES: [usize; 8] = [2, 4, 6, 10, 20, 50, 100, 200];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub bag_sizes: Vec<usize>,
    /// Message length in bits per total coefficient of the bag.
    pub bptc: f64,
    pub strategies: Vec<Strategy>,
    /// Fraction of a bag's images used by the uses-beta strategy.
    pub uses_beta: f64,
    /// Bags per class in each training split.
    pub n_train_pairs: usize,
    /// Bags per class in each test split.
    pub n_test_pairs: usize,
    pub runs: usize,
    /// Histogram bins.
    pub p: usize,
    pub svm_c: f64,
    /// Kernel standard deviation in units of the center spacing.
    pub kernel_width: f64,
    /// Per-bin rescaling of histograms before SVM training.
    pub feature_scaling: Scaling,
    /// Re-fit each SVM's decision cut on its training margins.
    pub calibrate_delta: bool,
    pub pool_domain: PoolDomain,
    /// Largest tolerated fraction of infeasible bags per split.
    pub max_skip_fraction: f64,
    pub seed: u64,
    pub cover_params: CoverParams,
    pub sid_params: SidParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            bag_sizes: DEFAULT_BAG_SIZES.to_vec(),
            bptc: 0.1,
            strategies: Strategy::ALL.to_vec(),
            uses_beta: DEFAULT_USES_BETA,
            n_train_pairs: 500,
            n_test_pairs: 500,
            runs: 10,
            p: 100,
            svm_c: 1.0,
            kernel_width: 1.0,
            feature_scaling: Scaling::MinMax,
            calibrate_delta: false,
            pool_domain: PoolDomain::Scores,
            max_skip_fraction: 0.001,
            seed: 1,
            cover_params: CoverParams::default(),
            sid_params: SidParams::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.bag_sizes.is_empty() || self.bag_sizes.contains(&0) {
            return bad("bag_sizes must be non-empty and every size at least 1".into());
        }
        let mut sizes = self.bag_sizes.clone();
        sizes.sort_unstable();
        sizes.dedup();
        if sizes.len() != self.bag_sizes.len() {
            return bad("bag_sizes must not repeat".into());
        }
        if !(self.bptc > 0.0) || !self.bptc.is_finite() {
            return bad(format!("bptc must be positive, got {}", self.bptc));
        }
        if self.strategies.is_empty() {
            return bad("strategies must not be empty".into());
        }
        for (i, s) in self.strategies.iter().enumerate() {
            if self.strategies[..i].contains(s) {
                return bad(format!("strategy {s} listed twice"));
            }
        }
        if !(self.uses_beta > 0.0 && self.uses_beta <= 1.0) {
            return bad(format!(
                "uses_beta must lie in (0, 1], got {}",
                self.uses_beta
            ));
        }
        for (name, v) in [
            ("n_train_pairs", self.n_train_pairs),
            ("n_test_pairs", self.n_test_pairs),
            ("runs", self.runs),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.p < 2 {
            return bad(format!("p must be at least 2, got {}", self.p));
        }
        if !(self.svm_c > 0.0) || !self.svm_c.is_finite() {
            return bad(format!("svm_c must be positive, got {}", self.svm_c));
        }
        if !(self.kernel_width > 0.0) || !self.kernel_width.is_finite() {
            return bad(format!(
                "kernel_width must be positive, got {}",
                self.kernel_width
            ));
        }
        if !(0.0..=1.0).contains(&self.max_skip_fraction) {
            return bad(format!(
                "max_skip_fraction must lie in [0, 1], got {}",
                self.max_skip_fraction
            ));
        }
        self.cover_params
            .validate()
            .map_err(|e| Error::Config(format!("cover_params: {e}")))?;
        self.sid_params
            .validate()
            .map_err(|e| Error::Config(format!("sid_params: {e}")))?;
        Ok(())
    }

    /// Builds a config from an optional JSON document and overrides.
    pub fn from_json_str(text: Option<&str>, overrides: &[String]) -> Result<Self> {
        let mut value = match text {
            Some(t) => serde_json::from_str::<Value>(t)
                .map_err(|e| Error::Config(format!("line {}: {e}", e.line())))?,
            None => Value::Object(Default::default()),
        };
        if !value.is_object() {
            return Err(Error::Config("top level must be a JSON object".into()));
        }
        // Overrides are resolved against the fully defaulted document so
        // that any known key can be set even when the file omits it.
        let given: ExperimentConfig =
            serde_json::from_value(value.clone()).map_err(|e| Error::Config(e.to_string()))?;
        if !overrides.is_empty() {
            value = serde_json::to_value(&given)?;
            for o in overrides {
                apply_override(&mut value, o)?;
            }
        }
        let cfg: ExperimentConfig =
            serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        match path {
            None => Self::from_json_str(None, overrides),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Self::from_json_str(Some(&text), overrides).map_err(|e| match e {
                    Error::Config(m) => Error::Config(format!("{}: {m}", p.display())),
                    other => other,
                })
            }
        }
    }
}

/// Applies one `dotted.key=value` override to a JSON document. The key
/// must already exist. The value is read as JSON when it parses as such,
/// otherwise as a string; a non-JSON value for a list key is split on
/// commas.
pub fn apply_override(doc: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::Config(format!("override {spec:?} has an empty key")));
    }
    let mut slot = &mut *doc;
    for part in key.split('.') {
        slot = slot
            .as_object_mut()
            .and_then(|m| m.get_mut(part))
            .ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
    }
    let parse = |s: &str| {
        serde_json::from_str::<Value>(s.trim())
            .unwrap_or_else(|_| Value::String(s.trim().to_string()))
    };
    *slot = match serde_json::from_str::<Value>(raw.trim()) {
        Ok(v) => v,
        Err(_) if slot.is_array() => Value::Array(raw.split(',').map(parse).collect()),
        Err(_) => Value::String(raw.trim().to_string()),
    };
    Ok(())
}
