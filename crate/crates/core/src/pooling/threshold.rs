//! Error-minimizing decision thresholds.
//!
//! The decision is always "positive iff statistic > tau". `tau = +inf`
//! declares everything negative, so the optimum never exceeds 0.5.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    #[serde(with = "super::extended_f64")]
    pub tau: f64,
    pub pe: f64,
}

/// `0.5 * (P_fa + P_md)` for the rule `x > tau`.
pub fn error_at(neg: &[f64], pos: &[f64], tau: f64) -> f64 {
    let fa = neg.iter().filter(|&&x| x > tau).count();
    let md = pos.iter().filter(|&&x| !(x > tau)).count();
    pe_from_counts(fa, neg.len(), md, pos.len())
}

pub(crate) fn pe_from_counts(fa: usize, n_neg: usize, md: usize, n_pos: usize) -> f64 {
    0.5 * (fa as f64 / n_neg as f64 + md as f64 / n_pos as f64)
}

/// Scans `-inf`, every midpoint of adjacent sorted pooled values and `+inf`,
/// returning the cut with the smallest error; ties go to the smaller cut.
pub fn optimize_threshold(neg_stats: &[f64], pos_stats: &[f64]) -> Result<Threshold> {
    if neg_stats.is_empty() || pos_stats.is_empty() {
        return Err(Error::param(
            "threshold search needs samples of both classes",
        ));
    }
    if neg_stats.iter().chain(pos_stats).any(|x| x.is_nan()) {
        return Err(Error::param("statistics must not be NaN"));
    }
    let mut neg = neg_stats.to_vec();
    let mut pos = pos_stats.to_vec();
    neg.sort_by(f64::total_cmp);
    pos.sort_by(f64::total_cmp);
    let mut pooled: Vec<f64> = neg.iter().chain(&pos).copied().collect();
    pooled.sort_by(f64::total_cmp);

    let candidates = std::iter::once(f64::NEG_INFINITY)
        .chain(pooled.windows(2).map(|w| 0.5 * (w[0] + w[1])))
        .chain(std::iter::once(f64::INFINITY));
    let mut best = Threshold {
        tau: f64::NAN,
        pe: f64::INFINITY,
    };
    for tau in candidates {
        let fa = neg.len() - neg.partition_point(|&x| x <= tau);
        let md = pos.partition_point(|&x| x <= tau);
        let pe = pe_from_counts(fa, neg.len(), md, pos.len());
        if pe < best.pe {
            best = Threshold { tau, pe };
        }
    }
    Ok(best)
}
