//! Payload-limited sender simulation.
//!
//! Each coefficient is changed by +1 or -1 with probability `beta` each,
//! where `beta = e^(-lambda*rho) / (1 + 2 e^(-lambda*rho))`. For a fixed
//! multiplier `lambda` an image then carries three aggregate quantities:
//!
//! * payload: sum of ternary entropies, in bits;
//! * distortion: expected additive cost `sum 2 beta rho`;
//! * deflection: `2 sum beta^2 / sigma^4` under the Gaussian residual model.
//!
//! All three decrease strictly in `lambda`. The solvers here invert them.
//! Internally everything is written in `x = lambda * rho` and differentiated
//! with respect to `ln lambda`, which keeps Newton steps well scaled over the
//! many decades `lambda` can span.

use serde::{Deserialize, Serialize};

use crate::cover::ImageModel;
use crate::error::{Error, Result};

/// Smallest multiplier the solvers consider; stands in for `lambda -> 0`.
pub const LAMBDA_LO: f64 = 1e-12;
/// Largest multiplier tried while bracketing.
const LAMBDA_HI_CAP: f64 = 1e300;
/// Relative tolerance on the targeted functional.
pub const SOLVE_REL_TOL: f64 = 1e-10;
/// Absolute tolerance used near zero.
pub const SOLVE_ABS_TOL: f64 = 1e-12;
const MAX_STEPS: usize = 200;

const LOG2_3: f64 = 1.584_962_500_721_156_3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Payload,
    Distortion,
    Deflection,
}

impl std::fmt::Display for Target {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Target::Payload => "payload",
            Target::Distortion => "distortion",
            Target::Deflection => "deflection",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedSolution {
    pub lambda: f64,
    /// Per-coefficient probability of a +1 change (equal to that of -1).
    pub change_rates: Vec<f64>,
    pub payload_bits: f64,
    pub distortion: f64,
    pub deflection: f64,
}

impl EmbedSolution {
    pub fn get(&self, target: Target) -> f64 {
        match target {
            Target::Payload => self.payload_bits,
            Target::Distortion => self.distortion,
            Target::Deflection => self.deflection,
        }
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || lambda.is_nan() {
        return Err(Error::param(format!(
            "lambda must be non-negative, got {lambda}"
        )));
    }
    Ok(())
}

/// Ternary change rate at multiplier `lambda` for a coefficient of cost `cost`.
pub fn change_rate(lambda: f64, cost: f64) -> Result<f64> {
    check_lambda(lambda)?;
    if !(cost >= 0.0) {
        return Err(Error::param(format!(
            "cost must be non-negative, got {cost}"
        )));
    }
    let e = (-lambda * cost).exp();
    Ok(e / (1.0 + 2.0 * e))
}

/// Ternary entropy `-2 b log2 b - (1 - 2b) log2 (1 - 2b)` in bits.
pub fn ternary_entropy(beta: f64) -> Result<f64> {
    if !(0.0..=1.0 / 3.0 + 1e-15).contains(&beta) {
        return Err(Error::param(format!(
            "change rate must lie in [0, 1/3], got {beta}"
        )));
    }
    let xlog2x = |p: f64| if p > 0.0 { p * p.log2() } else { 0.0 };
    Ok(-2.0 * xlog2x(beta) - xlog2x(1.0 - 2.0 * beta))
}

/// Aggregates of one image at one multiplier, with derivatives in `ln lambda`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct Sums {
    pub payload: f64,
    pub d_payload: f64,
    pub distortion: f64,
    pub d_distortion: f64,
    pub deflection: f64,
    pub d_deflection: f64,
}

impl Sums {
    pub fn get(&self, target: Target) -> (f64, f64) {
        match target {
            Target::Payload => (self.payload, self.d_payload),
            Target::Distortion => (self.distortion, self.d_distortion),
            Target::Deflection => (self.deflection, self.d_deflection),
        }
    }
}

/// All three functionals and their `ln lambda` derivatives in one pass.
pub(crate) fn sums(image: &ImageModel, lambda: f64) -> Sums {
    let mut s = Sums::default();
    for (&rho, &var) in image.costs.iter().zip(&image.variances) {
        let x = lambda * rho;
        let e = (-x).exp();
        let q = 1.0 + 2.0 * e;
        let beta = e / q;
        let w = beta / q; // beta * (1 - 2 beta)
        let inv_s4 = 1.0 / (var * var);
        s.payload += q.ln() + 2.0 * x * beta;
        s.d_payload -= 2.0 * x * x * w;
        s.distortion += 2.0 * rho * beta;
        s.d_distortion -= 2.0 * rho * x * w;
        s.deflection += 2.0 * beta * beta * inv_s4;
        s.d_deflection -= 4.0 * x * beta * w * inv_s4;
    }
    s.payload /= std::f64::consts::LN_2;
    s.d_payload /= std::f64::consts::LN_2;
    s
}

/// One functional and its `ln lambda` derivative.
pub(crate) fn target_sum(image: &ImageModel, target: Target, lambda: f64) -> (f64, f64) {
    let mut f = 0.0;
    let mut df = 0.0;
    match target {
        Target::Payload => {
            for &rho in &image.costs {
                let x = lambda * rho;
                let e = (-x).exp();
                let q = 1.0 + 2.0 * e;
                let beta = e / q;
                f += q.ln() + 2.0 * x * beta;
                df -= 2.0 * x * x * beta / q;
            }
            f /= std::f64::consts::LN_2;
            df /= std::f64::consts::LN_2;
        }
        Target::Distortion => {
            for &rho in &image.costs {
                let x = lambda * rho;
                let e = (-x).exp();
                let q = 1.0 + 2.0 * e;
                let beta = e / q;
                f += 2.0 * rho * beta;
                df -= 2.0 * rho * x * beta / q;
            }
        }
        Target::Deflection => {
            for (&rho, &var) in image.costs.iter().zip(&image.variances) {
                let x = lambda * rho;
                let e = (-x).exp();
                let q = 1.0 + 2.0 * e;
                let beta = e / q;
                let inv_s4 = 1.0 / (var * var);
                f += 2.0 * beta * beta * inv_s4;
                df -= 4.0 * x * beta * beta * inv_s4 / q;
            }
        }
    }
    (f, df)
}

/// Supremum of a functional over `lambda > 0` (its limit as `lambda -> 0`).
pub fn supremum(image: &ImageModel, target: Target) -> f64 {
    match target {
        Target::Payload => image.n_coeffs() as f64 * LOG2_3,
        Target::Distortion => image.costs.iter().map(|&r| 2.0 * r / 3.0).sum(),
        Target::Deflection => image.variances.iter().map(|&v| 2.0 / (9.0 * v * v)).sum(),
    }
}

/// Infimum of a functional (its limit as `lambda -> infinity`): only
/// zero-cost coefficients keep changing.
pub fn floor(image: &ImageModel, target: Target) -> f64 {
    let free = image
        .costs
        .iter()
        .zip(&image.variances)
        .filter(|(&r, _)| r == 0.0);
    match target {
        Target::Payload => free.count() as f64 * LOG2_3,
        Target::Distortion => 0.0,
        Target::Deflection => free.map(|(_, &v)| 2.0 / (9.0 * v * v)).sum(),
    }
}

/// Evaluates the embedding at a fixed multiplier.
pub fn evaluate(image: &ImageModel, lambda: f64) -> Result<EmbedSolution> {
    check_lambda(lambda)?;
    let s = sums(image, lambda);
    let change_rates = image
        .costs
        .iter()
        .map(|&rho| {
            let e = (-lambda * rho).exp();
            e / (1.0 + 2.0 * e)
        })
        .collect();
    Ok(EmbedSolution {
        lambda,
        change_rates,
        payload_bits: s.payload,
        distortion: s.distortion,
        deflection: s.deflection,
    })
}

fn tolerance(value: f64) -> f64 {
    (SOLVE_REL_TOL * value).max(SOLVE_ABS_TOL)
}

/// Finds the multiplier at which the functional summed over `images` equals
/// `value`, starting the bracket search at `guess`.
///
/// The bracket is grown geometrically from `guess` (doubling upward, halving
/// downward) and then refined by Newton steps in `ln lambda`, falling back to
/// bisection whenever a step leaves the bracket or stalls.
pub(crate) fn solve_level(
    images: &[&ImageModel],
    target: Target,
    value: f64,
    guess: f64,
) -> Result<f64> {
    if !value.is_finite() || value < 0.0 {
        return Err(Error::param(format!(
            "{target} target must be finite and non-negative, got {value}"
        )));
    }
    let eval = |lambda: f64| -> (f64, f64) {
        images.iter().fold((0.0, 0.0), |(f, df), im| {
            let (a, b) = target_sum(im, target, lambda);
            (f + a, df + b)
        })
    };
    let sup: f64 = images.iter().map(|im| supremum(im, target)).sum();
    let inf: f64 = images.iter().map(|im| floor(im, target)).sum();
    let tol = tolerance(value);
    if value > sup + (sup * 1e-12).max(SOLVE_ABS_TOL) {
        return Err(Error::infeasible(format!(
            "{target} {value} exceeds the supremum {sup}"
        )));
    }
    if value < inf - tol {
        return Err(Error::infeasible(format!(
            "{target} {value} is below the floor {inf}"
        )));
    }

    let (f_min_lambda, _) = eval(LAMBDA_LO);
    if f_min_lambda <= value + tol {
        return Ok(LAMBDA_LO);
    }

    // Bracket [lo, hi] with f(lo) > value > f(hi).
    let g = if guess.is_finite() {
        guess.clamp(LAMBDA_LO, LAMBDA_HI_CAP)
    } else {
        1.0
    };
    let (fg, dfg) = eval(g);
    if (fg - value).abs() <= tol {
        return Ok(g);
    }
    let (mut lo, mut f_lo, mut df_lo, mut hi, mut f_hi, mut df_hi);
    if fg > value {
        lo = g;
        f_lo = fg;
        df_lo = dfg;
        hi = g;
        loop {
            hi *= 2.0;
            let (f, df) = eval(hi);
            if (f - value).abs() <= tol {
                return Ok(hi);
            }
            if f < value {
                f_hi = f;
                df_hi = df;
                break;
            }
            if hi >= LAMBDA_HI_CAP {
                return Err(Error::infeasible(format!(
                    "{target} {value} not reached as lambda grows"
                )));
            }
            lo = hi;
            f_lo = f;
            df_lo = df;
        }
    } else {
        hi = g;
        f_hi = fg;
        df_hi = dfg;
        lo = g;
        loop {
            lo = (lo / 2.0).max(LAMBDA_LO);
            let (f, df) = eval(lo);
            if (f - value).abs() <= tol {
                return Ok(lo);
            }
            if f > value {
                f_lo = f;
                df_lo = df;
                break;
            }
            hi = lo;
            f_hi = f;
            df_hi = df;
        }
    }

    let mut ul = lo.ln();
    let mut uh = hi.ln();
    // Start Newton from the endpoint closer to the target.
    let (mut u, mut f, mut df) = if (f_lo - value).abs() < (f_hi - value).abs() {
        (ul, f_lo, df_lo)
    } else {
        (uh, f_hi, df_hi)
    };
    let mut last_resid = (f - value).abs();
    let mut force_bisect = false;
    for _ in 0..MAX_STEPS {
        let newton = if !force_bisect && df < 0.0 && df.is_finite() {
            let cand = u - (f - value) / df;
            (cand > ul && cand < uh).then_some(cand)
        } else {
            None
        };
        let next = newton.unwrap_or(0.5 * (ul + uh));
        if next <= ul || next >= uh {
            // Bracket exhausted at machine precision.
            break;
        }
        let (fn_, dfn) = eval(next.exp());
        let resid = (fn_ - value).abs();
        if resid <= tol {
            return Ok(next.exp());
        }
        if fn_ > value {
            ul = next;
        } else {
            uh = next;
        }
        force_bisect = newton.is_some() && resid > 0.5 * last_resid;
        last_resid = resid;
        u = next;
        f = fn_;
        df = dfn;
    }
    Ok(u.exp())
}

/// Finds the multiplier at which one image's functional equals `value`.
///
/// The upper bracket end starts at 1 and doubles until the functional drops
/// below `value`. Fails with [`Error::Infeasible`] when `value` exceeds the
/// functional's supremum.
pub fn solve_lambda(image: &ImageModel, target: Target, value: f64) -> Result<EmbedSolution> {
    let lambda = solve_level(&[image], target, value, 1.0)?;
    evaluate(image, lambda)
}

/// Copies every `stride`-th coefficient; used for cheap starting points.
fn subsample(image: &ImageModel, stride: usize) -> ImageModel {
    ImageModel {
        id: image.id,
        key: image.key,
        costs: image.costs.iter().step_by(stride).copied().collect(),
        variances: image.variances.iter().step_by(stride).copied().collect(),
    }
}

/// Approximate multiplier that makes the merged bag carry `payload` bits,
/// computed on a coarse subsample of every image.
fn merged_guess(images: &[&ImageModel], payload: f64) -> f64 {
    const SAMPLE: usize = 256;
    let total: usize = images.iter().map(|im| im.n_coeffs()).sum();
    let coarse: Vec<ImageModel> = images
        .iter()
        .map(|im| subsample(im, (im.n_coeffs() / SAMPLE).max(1)))
        .collect();
    let coarse_total: usize = coarse.iter().map(|im| im.n_coeffs()).sum();
    let refs: Vec<&ImageModel> = coarse.iter().collect();
    let scaled = payload * coarse_total as f64 / total as f64;
    solve_level(&refs, Target::Payload, scaled, 1.0).unwrap_or(1.0)
}

/// One multiplier shared by all images of a bag.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedSolution {
    pub lambda: f64,
    pub payloads: Vec<f64>,
}

/// Treats the images as one large image and solves for the payload.
pub fn solve_merged(images: &[&ImageModel], payload: f64) -> Result<MergedSolution> {
    if payload == 0.0 {
        return Ok(MergedSolution {
            lambda: f64::INFINITY,
            payloads: vec![0.0; images.len()],
        });
    }
    let guess = merged_guess(images, payload);
    let lambda = solve_level(images, Target::Payload, payload, guess)?;
    let payloads = images
        .iter()
        .map(|im| target_sum(im, Target::Payload, lambda).0)
        .collect();
    Ok(MergedSolution { lambda, payloads })
}

/// Per-image multipliers that equalize one functional across images while
/// the total payload meets a target.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSolution {
    /// Common value of the equalized functional.
    pub level: f64,
    pub lambdas: Vec<f64>,
    pub payloads: Vec<f64>,
}

/// Solves for a common level `d` of `target` such that the images, each
/// embedded at its own multiplier with `target == d`, carry `payload` bits
/// in total.
pub fn solve_equal_level(
    images: &[&ImageModel],
    target: Target,
    payload: f64,
) -> Result<LevelSolution> {
    if target == Target::Payload {
        return Err(Error::param(
            "equalized functional must be distortion or deflection",
        ));
    }
    if !payload.is_finite() || payload < 0.0 {
        return Err(Error::param(format!(
            "payload must be finite and non-negative, got {payload}"
        )));
    }
    if images.is_empty() {
        return Err(Error::param("no images to spread over"));
    }
    if payload == 0.0 {
        return Ok(LevelSolution {
            level: 0.0,
            lambdas: vec![f64::INFINITY; images.len()],
            payloads: vec![0.0; images.len()],
        });
    }
    let capacity: f64 = images.iter().map(|im| supremum(im, Target::Payload)).sum();
    if payload > capacity {
        return Err(Error::infeasible(format!(
            "payload {payload} exceeds ternary capacity {capacity}"
        )));
    }
    if let Some(sol) = equal_level_newton(images, target, payload) {
        return Ok(sol);
    }
    equal_level_bisection(images, target, payload)
}

/// Joint Newton iteration on `(ln lambda_1, ..., ln lambda_b, ln d)`.
///
/// The system is `ln F_i(lambda_i) = ln d` for every image plus
/// `sum P_i(lambda_i) = payload`; its Jacobian is an arrow matrix, so each
/// step costs one pass over the coefficients. Returns `None` if it does not
/// converge quickly, leaving the bracketing solver to take over.
fn equal_level_newton(
    images: &[&ImageModel],
    target: Target,
    payload: f64,
) -> Option<LevelSolution> {
    const MAX_ITERS: usize = 60;
    const MAX_STEP: f64 = 2.0;
    let ln_lo = LAMBDA_LO.ln();
    let b = images.len();
    let mut u = vec![merged_guess(images, payload).ln(); b];
    let mut t = f64::NAN;
    let mut state: Vec<Sums> = vec![Sums::default(); b];
    for _ in 0..MAX_ITERS {
        for (s, (im, &ui)) in state.iter_mut().zip(images.iter().zip(&u)) {
            *s = sums(im, ui.exp());
        }
        let mut ln_f = Vec::with_capacity(b);
        for s in &state {
            let (f, df) = s.get(target);
            if !(f > 0.0) || !(df < 0.0) || !f.is_finite() {
                return None;
            }
            ln_f.push(f.ln());
        }
        if t.is_nan() {
            t = ln_f.iter().sum::<f64>() / b as f64;
        }
        let total: f64 = state.iter().map(|s| s.payload).sum();
        let big_r = total - payload;
        let r: Vec<f64> = ln_f.iter().map(|&lf| lf - t).collect();
        let max_r = r.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
        if max_r <= 1e-12 && big_r.abs() <= 1e-11 * payload {
            return Some(LevelSolution {
                level: t.exp(),
                lambdas: u.iter().map(|x| x.exp()).collect(),
                payloads: state.iter().map(|s| s.payload).collect(),
            });
        }
        let mut num = -big_r;
        let mut den = 0.0;
        let mut a = Vec::with_capacity(b);
        for (s, &ri) in state.iter().zip(&r) {
            let (f, df) = s.get(target);
            let ai = df / f;
            let qi = s.d_payload;
            num += qi * ri / ai;
            den += qi / ai;
            a.push(ai);
        }
        if !(den > 0.0) {
            return None;
        }
        let dt = num / den;
        let du: Vec<f64> = a.iter().zip(&r).map(|(&ai, &ri)| (dt - ri) / ai).collect();
        let biggest = du.iter().fold(dt.abs(), |m, &x| m.max(x.abs()));
        let scale = if biggest > MAX_STEP {
            MAX_STEP / biggest
        } else {
            1.0
        };
        t += scale * dt;
        for (ui, dui) in u.iter_mut().zip(&du) {
            *ui += scale * dui;
            if *ui < ln_lo {
                // Saturated image: the level would exceed its supremum.
                return None;
            }
        }
    }
    None
}

/// Bisection on the common level with inner per-image solves.
fn equal_level_bisection(
    images: &[&ImageModel],
    target: Target,
    payload: f64,
) -> Result<LevelSolution> {
    let d_max = images
        .iter()
        .map(|im| supremum(im, target))
        .fold(f64::INFINITY, f64::min);
    let mut lambdas = vec![1.0; images.len()];
    let at_level = |d: f64, lambdas: &mut Vec<f64>| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(images.len());
        for (im, l) in images.iter().zip(lambdas.iter_mut()) {
            *l = solve_level(&[im], target, d, *l)?;
            out.push(target_sum(im, Target::Payload, *l).0);
        }
        Ok(out)
    };
    let top = at_level(d_max, &mut lambdas)?;
    let top_total: f64 = top.iter().sum();
    if top_total < payload * (1.0 - 1e-12) {
        return Err(Error::infeasible(format!(
            "payload {payload} exceeds the {target}-equalized capacity {top_total}"
        )));
    }
    let tol = 1e-11 * payload;
    let (mut lo, mut hi) = (0.0, d_max);
    let mut best = (d_max, lambdas.clone(), top);
    let mut best_err = (top_total - payload).abs();
    for _ in 0..MAX_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let p = at_level(mid, &mut lambdas)?;
        let total: f64 = p.iter().sum();
        let err = (total - payload).abs();
        if err < best_err {
            best_err = err;
            best = (mid, lambdas.clone(), p);
        }
        if err <= tol {
            break;
        }
        if total < payload {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(LevelSolution {
        level: best.0,
        lambdas: best.1,
        payloads: best.2,
    })
}
