//! Batch spreading strategies: how one message is split across a bag.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::cover::{Bag, BagPlan, BagShape, ImageModel};
use crate::embed::{self, Target};
use crate::error::{Error, Result};
use crate::seed;

/// Per-image ceiling used by the greedy sender, in bits per coefficient.
pub const GREEDY_BPC_CAP: f64 = 1.0;
/// Ternary capacity in bits per coefficient.
pub const TERNARY_BPC_CAP: f64 = 1.584_962_500_721_156_3;
pub const DEFAULT_USES_BETA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Greedy,
    Linear,
    #[serde(rename = "usesbeta")]
    UsesBeta,
    Ims,
    Dels,
    Dils,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Greedy,
        Strategy::Linear,
        Strategy::UsesBeta,
        Strategy::Ims,
        Strategy::Dels,
        Strategy::Dils,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Greedy => "greedy",
            Strategy::Linear => "linear",
            Strategy::UsesBeta => "usesbeta",
            Strategy::Ims => "ims",
            Strategy::Dels => "dels",
            Strategy::Dils => "dils",
        }
    }

    /// Whether the strategy looks at cost or variance maps.
    pub fn is_adaptive(self) -> bool {
        matches!(self, Strategy::Ims | Strategy::Dels | Strategy::Dils)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::param(format!("unknown strategy {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub bits_per_image: Vec<f64>,
    pub strategy: Strategy,
    pub total_bits: f64,
}

impl Allocation {
    fn zeros(b: usize, strategy: Strategy) -> Self {
        Allocation {
            bits_per_image: vec![0.0; b],
            strategy,
            total_bits: 0.0,
        }
    }

    /// Embedding rate of each image in bits per coefficient.
    pub fn rates(&self, bag: &impl BagShape) -> Vec<f64> {
        self.bits_per_image
            .iter()
            .enumerate()
            .map(|(i, &bits)| bits / bag.n_coeffs(i) as f64)
            .collect()
    }
}

fn check_total(total_bits: f64) -> Result<()> {
    if !total_bits.is_finite() || total_bits < 0.0 {
        return Err(Error::param(format!(
            "message length must be finite and non-negative, got {total_bits}"
        )));
    }
    Ok(())
}

/// Message length for a bag at `bptc` bits per total coefficient.
pub fn total_bits_for(bag: &impl BagShape, bptc: f64) -> Result<f64> {
    if !bptc.is_finite() || bptc < 0.0 {
        return Err(Error::param(format!(
            "bptc must be finite and non-negative, got {bptc}"
        )));
    }
    Ok(bptc * bag.total_coeffs() as f64)
}

/// Fills randomly ordered images up to one bit per coefficient each.
pub fn spread_greedy(bag: &impl BagShape, total_bits: f64, seed: u64) -> Result<Allocation> {
    check_total(total_bits)?;
    let b = bag.len();
    let cap: f64 = (0..b)
        .map(|i| bag.n_coeffs(i) as f64 * GREEDY_BPC_CAP)
        .sum();
    if total_bits > cap * (1.0 + 1e-12) {
        return Err(Error::infeasible(format!(
            "greedy: {total_bits} bits exceed the {cap}-bit cap of the bag"
        )));
    }
    let mut order: Vec<usize> = (0..b).collect();
    order.shuffle(&mut seed::rng(seed));
    let mut alloc = Allocation::zeros(b, Strategy::Greedy);
    alloc.total_bits = total_bits;
    let mut remaining = total_bits;
    for i in order {
        if remaining <= 0.0 {
            break;
        }
        let give = remaining.min(bag.n_coeffs(i) as f64 * GREEDY_BPC_CAP);
        alloc.bits_per_image[i] = give;
        remaining -= give;
    }
    Ok(alloc)
}

fn even_share(
    bag: &impl BagShape,
    carriers: &[usize],
    total_bits: f64,
    strategy: Strategy,
) -> Result<Allocation> {
    let k = carriers.len();
    let share = total_bits / k as f64;
    let mut alloc = Allocation::zeros(bag.len(), strategy);
    alloc.total_bits = total_bits;
    for &i in carriers {
        let cap = bag.n_coeffs(i) as f64 * TERNARY_BPC_CAP;
        if share > cap {
            return Err(Error::infeasible(format!(
                "{strategy}: share of {share} bits exceeds the {cap}-bit capacity of image {i}"
            )));
        }
        alloc.bits_per_image[i] = share;
    }
    Ok(alloc)
}

/// Splits the message evenly over all images.
pub fn spread_linear(bag: &impl BagShape, total_bits: f64) -> Result<Allocation> {
    check_total(total_bits)?;
    let all: Vec<usize> = (0..bag.len()).collect();
    even_share(bag, &all, total_bits, Strategy::Linear)
}

/// Number of carriers the uses-beta sender picks in a bag of `b`.
pub fn uses_beta_carriers(b: usize, beta: f64) -> usize {
    ((beta * b as f64).ceil() as usize).clamp(1, b)
}

/// Splits the message evenly over `ceil(beta * b)` randomly chosen images.
pub fn spread_uses_beta(
    bag: &impl BagShape,
    total_bits: f64,
    beta: f64,
    seed: u64,
) -> Result<Allocation> {
    check_total(total_bits)?;
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::param(format!("beta must lie in (0, 1], got {beta}")));
    }
    let b = bag.len();
    let k = uses_beta_carriers(b, beta);
    let mut carriers = if k == b {
        (0..b).collect()
    } else {
        rand::seq::index::sample(&mut seed::rng(seed), b, k).into_vec()
    };
    carriers.sort_unstable();
    even_share(bag, &carriers, total_bits, Strategy::UsesBeta)
}

/// Image-merging sender: one multiplier over the concatenated cost maps.
///
/// Also returns that multiplier.
pub fn spread_ims_detailed(bag: &Bag, total_bits: f64) -> Result<(Allocation, f64)> {
    check_total(total_bits)?;
    let refs: Vec<&ImageModel> = bag.images.iter().collect();
    let merged = embed::solve_merged(&refs, total_bits)?;
    Ok((
        Allocation {
            bits_per_image: merged.payloads,
            strategy: Strategy::Ims,
            total_bits,
        },
        merged.lambda,
    ))
}

pub fn spread_ims(bag: &Bag, total_bits: f64) -> Result<Allocation> {
    spread_ims_detailed(bag, total_bits).map(|(a, _)| a)
}

/// Allocation that equalizes `target` across the images of a bag.
#[derive(Debug, Clone, PartialEq)]
pub struct EqualizedAllocation {
    pub allocation: Allocation,
    pub level: f64,
    pub lambdas: Vec<f64>,
}

fn equalized(
    bag: &Bag,
    total_bits: f64,
    target: Target,
    strategy: Strategy,
) -> Result<EqualizedAllocation> {
    check_total(total_bits)?;
    let refs: Vec<&ImageModel> = bag.images.iter().collect();
    let sol = embed::solve_equal_level(&refs, target, total_bits)?;
    Ok(EqualizedAllocation {
        allocation: Allocation {
            bits_per_image: sol.payloads,
            strategy,
            total_bits,
        },
        level: sol.level,
        lambdas: sol.lambdas,
    })
}

/// Detectability-limited sender: every image gets the same deflection.
pub fn spread_dels_detailed(bag: &Bag, total_bits: f64) -> Result<EqualizedAllocation> {
    equalized(bag, total_bits, Target::Deflection, Strategy::Dels)
}

pub fn spread_dels(bag: &Bag, total_bits: f64) -> Result<Allocation> {
    spread_dels_detailed(bag, total_bits).map(|e| e.allocation)
}

/// Distortion-limited sender: every image gets the same expected distortion.
pub fn spread_dils_detailed(bag: &Bag, total_bits: f64) -> Result<EqualizedAllocation> {
    equalized(bag, total_bits, Target::Distortion, Strategy::Dils)
}

pub fn spread_dils(bag: &Bag, total_bits: f64) -> Result<Allocation> {
    spread_dils_detailed(bag, total_bits).map(|e| e.allocation)
}

/// Runs `strategy` on a planned bag, sampling cost maps only when the
/// strategy needs them.
pub fn spread(
    strategy: Strategy,
    plan: &BagPlan,
    total_bits: f64,
    beta: f64,
    seed: u64,
) -> Result<Allocation> {
    match strategy {
        Strategy::Greedy => spread_greedy(plan, total_bits, seed),
        Strategy::Linear => spread_linear(plan, total_bits),
        Strategy::UsesBeta => spread_uses_beta(plan, total_bits, beta, seed),
        Strategy::Ims => spread_ims(&plan.materialize(), total_bits),
        Strategy::Dels => spread_dels(&plan.materialize(), total_bits),
        Strategy::Dils => spread_dils(&plan.materialize(), total_bits),
    }
}

/// Writes allocations as `bag_id,image_id,bits,strategy` rows.
pub fn write_allocations_csv<W: Write>(out: W, rows: &[(u64, &Allocation)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bag_id", "image_id", "bits", "strategy"])?;
    for (bag_id, alloc) in rows {
        for (i, bits) in alloc.bits_per_image.iter().enumerate() {
            w.write_record([
                bag_id.to_string(),
                i.to_string(),
                bits.to_string(),
                alloc.strategy.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
