//! Soft-margin linear SVM.
//!
//! Minimizes `0.5 |w|^2 + C sum_i max(0, 1 - y_i (w.x_i + b))` with an
//! unregularized intercept, through its dual
//! `min 0.5 a'Qa - sum a  s.t.  0 <= a <= C, y'a = 0`
//! solved by SMO with second-order working-set selection.

use serde::{Deserialize, Serialize};

use super::parzen::Histogram;
use crate::error::{Error, Result};

const TAU: f64 = 1e-12;
/// Above this many examples kernel rows are recomputed instead of cached.
const FULL_GRAM_MAX: usize = 4000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    /// Decision cut on the margin: positive iff margin > delta.
    #[serde(with = "super::extended_f64")]
    pub delta: f64,
}

impl LinearModel {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Predicts `true` (positive class) iff the margin exceeds `delta`.
    pub fn decide(&self, h: &Histogram) -> Result<bool> {
        Ok(svm_margin(self, h)? > self.delta)
    }
}

/// `w.h + intercept`.
pub fn svm_margin(model: &LinearModel, h: &Histogram) -> Result<f64> {
    if model.weights.len() != h.len() {
        return Err(Error::Mismatch(format!(
            "model has {} weights but histogram has {} bins",
            model.weights.len(),
            h.len()
        )));
    }
    Ok(dot(&model.weights, &h.h) + model.intercept)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmOptions {
    pub c: f64,
    /// Stop once the maximal KKT violation falls below this.
    pub tol: f64,
    /// Or once the duality gap, relative to the primal objective, does.
    pub gap_tol: f64,
    pub max_iter: usize,
    /// Record the dual objective after every step.
    pub trace: bool,
}

impl Default for SvmOptions {
    fn default() -> Self {
        SvmOptions {
            c: 1.0,
            tol: 1e-6,
            gap_tol: 1e-6,
            max_iter: 20_000_000,
            trace: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Training {
    pub model: LinearModel,
    pub iterations: usize,
    /// Dual objective (minimization form) after each step, when requested.
    pub objective_trace: Vec<f64>,
    /// Maximal KKT violation at exit.
    pub kkt_violation: f64,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub alphas: Vec<f64>,
}

impl Training {
    /// `(primal - (-dual)) / max(1, |primal|)`.
    pub fn relative_gap(&self) -> f64 {
        (self.primal_objective + self.dual_objective) / self.primal_objective.abs().max(1.0)
    }
}

struct Kernel<'a> {
    x: &'a [f64],
    n: usize,
    p: usize,
    gram: Option<Vec<f64>>,
}

impl<'a> Kernel<'a> {
    fn new(x: &'a [f64], n: usize, p: usize) -> Self {
        let mut k = Kernel {
            x,
            n,
            p,
            gram: None,
        };
        if n <= FULL_GRAM_MAX {
            let mut g = vec![0.0; n * n];
            for i in 0..n {
                for j in i..n {
                    let v = dot(k.point(i), k.point(j));
                    g[i * n + j] = v;
                    g[j * n + i] = v;
                }
            }
            k.gram = Some(g);
        }
        k
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    fn row(&self, i: usize, out: &mut [f64]) {
        match &self.gram {
            Some(g) => out.copy_from_slice(&g[i * self.n..(i + 1) * self.n]),
            None => {
                let xi = self.point(i);
                for (k, o) in out.iter_mut().enumerate() {
                    *o = dot(xi, self.point(k));
                }
            }
        }
    }

    fn diag(&self, i: usize) -> f64 {
        match &self.gram {
            Some(g) => g[i * self.n + i],
            None => dot(self.point(i), self.point(i)),
        }
    }
}

/// Trains with default options and penalty `c`; labels are `+1` / `-1`.
pub fn train_linear_svm(features: &[Histogram], labels: &[f64], c: f64) -> Result<LinearModel> {
    let opts = SvmOptions {
        c,
        ..SvmOptions::default()
    };
    Ok(train_linear_svm_with(features, labels, &opts)?.model)
}

pub fn train_linear_svm_with(
    features: &[Histogram],
    labels: &[f64],
    opts: &SvmOptions,
) -> Result<Training> {
    if features.len() != labels.len() {
        return Err(Error::Training(format!(
            "{} examples but {} labels",
            features.len(),
            labels.len()
        )));
    }
    if !(opts.c > 0.0) || !opts.c.is_finite() {
        return Err(Error::param("C must be finite and positive"));
    }
    if !(opts.tol > 0.0) || !(opts.gap_tol >= 0.0) {
        return Err(Error::param("tolerances must be positive"));
    }
    if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
        return Err(Error::Training("labels must be +1 or -1".into()));
    }
    let n_pos = labels.iter().filter(|&&y| y > 0.0).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::Training(
            "training needs examples of both classes".into(),
        ));
    }
    let p = features[0].len();
    if p == 0 || features.iter().any(|h| h.len() != p) {
        return Err(Error::Training(
            "features must share one non-zero dimension".into(),
        ));
    }
    if features.iter().any(|h| h.h.iter().any(|v| !v.is_finite())) {
        return Err(Error::Training("features must be finite".into()));
    }

    let n = features.len();
    let x: Vec<f64> = features.iter().flat_map(|h| h.h.iter().copied()).collect();
    let kernel = Kernel::new(&x, n, p);
    let y = labels;
    let c = opts.c;
    let qd: Vec<f64> = (0..n).map(|i| kernel.diag(i)).collect();

    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let mut ki = vec![0.0; n];
    let mut kj = vec![0.0; n];
    let mut objective = 0.0;
    let mut trace = Vec::new();
    let mut iterations = 0;

    let is_up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let is_low = |a: f64, yt: f64| (yt > 0.0 && a > 0.0) || (yt < 0.0 && a < c);

    let kkt_violation = loop {
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if is_up(alpha[t], y[t]) {
                let v = -y[t] * grad[t];
                if v > gmax {
                    gmax = v;
                    i = t;
                }
            }
        }
        if i == usize::MAX {
            break 0.0;
        }
        kernel.row(i, &mut ki);

        let mut gmin = f64::INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if is_low(alpha[t], y[t]) {
                let v = -y[t] * grad[t];
                gmin = gmin.min(v);
                let b = gmax - v;
                if b > 0.0 {
                    let mut a = qd[i] + qd[t] - 2.0 * ki[t];
                    if a <= 0.0 {
                        a = TAU;
                    }
                    let o = -b * b / a;
                    if o < best {
                        best = o;
                        j = t;
                    }
                }
            }
        }
        let violation = gmax - gmin;
        if violation < opts.tol || j == usize::MAX {
            break violation.max(0.0);
        }
        if iterations > 0
            && iterations % n == 0
            && summarize(&kernel, y, c, &alpha, &grad).relative_gap() <= opts.gap_tol
        {
            break violation;
        }
        if iterations >= opts.max_iter {
            return Err(Error::Training(format!(
                "no convergence after {iterations} iterations (KKT violation {violation:.3e})"
            )));
        }
        iterations += 1;
        kernel.row(j, &mut kj);

        let (old_i, old_j) = (alpha[i], alpha[j]);
        let mut a = qd[i] + qd[j] - 2.0 * ki[j];
        if a <= 0.0 {
            a = TAU;
        }
        let (mut ai, mut aj);
        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / a;
            let diff = old_i - old_j;
            ai = old_i + delta;
            aj = old_j + delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / a;
            let sum = old_i + old_j;
            ai = old_i - delta;
            aj = old_j + delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        alpha[i] = ai;
        alpha[j] = aj;
        let di = ai - old_i;
        let dj = aj - old_j;

        if opts.trace {
            let qij = y[i] * y[j] * ki[j];
            objective += grad[i] * di
                + grad[j] * dj
                + 0.5 * (qd[i] * di * di + qd[j] * dj * dj)
                + qij * di * dj;
            trace.push(objective);
        }
        let (si, sj) = (y[i] * di, y[j] * dj);
        for k in 0..n {
            grad[k] += y[k] * (si * ki[k] + sj * kj[k]);
        }
    };

    let summary = summarize(&kernel, y, c, &alpha, &grad);
    Ok(Training {
        model: LinearModel {
            weights: summary.weights,
            intercept: summary.intercept,
            delta: 0.0,
        },
        iterations,
        objective_trace: trace,
        kkt_violation,
        primal_objective: summary.primal,
        dual_objective: summary.dual,
        alphas: alpha,
    })
}

struct Summary {
    weights: Vec<f64>,
    intercept: f64,
    primal: f64,
    /// Dual objective in minimization form.
    dual: f64,
}

impl Summary {
    fn relative_gap(&self) -> f64 {
        (self.primal + self.dual) / self.primal.abs().max(1.0)
    }
}

/// Primal solution and both objectives at the current multipliers.
fn summarize(kernel: &Kernel, y: &[f64], c: f64, alpha: &[f64], grad: &[f64]) -> Summary {
    let n = alpha.len();
    // Intercept from the free multipliers, or the middle of the feasible
    // interval when every multiplier sits at a bound.
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum_free, mut n_free) = (0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 {
        sum_free / n_free as f64
    } else {
        0.5 * (ub + lb)
    };

    let mut weights = vec![0.0; kernel.p];
    for t in 0..n {
        if alpha[t] != 0.0 {
            let s = alpha[t] * y[t];
            for (w, xv) in weights.iter_mut().zip(kernel.point(t)) {
                *w += s * xv;
            }
        }
    }
    let intercept = -rho;
    let hinge: f64 = (0..n)
        .map(|t| (1.0 - y[t] * (dot(&weights, kernel.point(t)) + intercept)).max(0.0))
        .sum();
    Summary {
        primal: 0.5 * dot(&weights, &weights) + c * hinge,
        dual: 0.5
            * alpha
                .iter()
                .zip(grad)
                .map(|(a, g)| a * (g - 1.0))
                .sum::<f64>(),
        weights,
        intercept,
    }
}
