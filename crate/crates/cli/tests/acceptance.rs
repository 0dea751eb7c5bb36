//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Criteria 6 to 9 share one desk-scale experiment in which every
//! bag is embedded once and scored under three detector settings.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use poolsteg::config::ExperimentConfig;
use poolsteg::cover::{gen_bag, gen_image, CoverParams, ImageModel};
use poolsteg::embed::{evaluate, solve_lambda, Target};
use poolsteg::harness::run_experiment_shared;
use poolsteg::pooling::{
    fit_parzen_config, optimize_threshold, parzen_histogram, svm_margin, train_linear_svm_with,
    Histogram, Pooling, SvmOptions,
};
use poolsteg::report::Report;
use poolsteg::seed;
use poolsteg::sid::SidParams;
use poolsteg::spreading::{
    spread_dels_detailed, spread_dils_detailed, spread_greedy, spread_ims_detailed, spread_linear,
    spread_uses_beta, total_bits_for, Strategy, GREEDY_BPC_CAP,
};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

const MASTER: u64 = 0x5eed_acce;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

// Criterion 1 -------------------------------------------------------------

/// Payload (bits), distortion and deflection at one multiplier, written
/// directly from the change-rate formula.
fn functionals(image: &ImageModel, lambda: f64) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (&rho, &v) in image.costs.iter().zip(&image.variances) {
        let e = (-lambda * rho).exp();
        let beta = e / (1.0 + 2.0 * e);
        let keep = 1.0 - 2.0 * beta;
        let mut h = 0.0;
        if beta > 0.0 {
            h -= 2.0 * beta * beta.log2();
        }
        if keep > 0.0 {
            h -= keep * keep.log2();
        }
        out[0] += h;
        out[1] += 2.0 * beta * rho;
        out[2] += 2.0 * beta * beta / (v * v);
    }
    out
}

fn criterion_1() -> Outcome {
    const GRID: usize = 1_000_000;
    let (lo, hi) = (1e-4f64.ln(), 1e4f64.ln());
    let targets = [Target::Payload, Target::Distortion, Target::Deflection];
    let mut rng = seed::rng(seed::derive(MASTER, 1));
    let (mut worst_f, mut worst_l) = (0.0f64, 0.0f64);
    let mut problems = Vec::new();
    for k in 0..50 {
        let params = CoverParams {
            n_coeffs: rng.gen_range(1..=32),
            ..CoverParams::default()
        };
        let image = gen_image(seed::derive(MASTER, 100 + k), k as usize, &params).unwrap();
        // Targets are random fractions of each functional's supremum.
        let sup = functionals(&image, 0.0);
        let goal: Vec<f64> = sup.iter().map(|s| s * rng.gen_range(0.02..0.98)).collect();
        let mut prev = functionals(&image, lo.exp());
        let mut oracle = [f64::NAN; 3];
        for g in 1..GRID {
            let u = lo + (hi - lo) * g as f64 / (GRID - 1) as f64;
            let cur = functionals(&image, u.exp());
            for t in 0..3 {
                if oracle[t].is_nan() && prev[t] >= goal[t] && cur[t] < goal[t] {
                    // Interpolate in ln(lambda) between the bracketing points.
                    let du = (hi - lo) / (GRID - 1) as f64;
                    let frac = (prev[t] - goal[t]) / (prev[t] - cur[t]);
                    oracle[t] = (u - du + frac * du).exp();
                }
            }
            prev = cur;
        }
        for (t, &target) in targets.iter().enumerate() {
            match solve_lambda(&image, target, goal[t]) {
                Ok(sol) => {
                    let ef = rel(sol.get(target), goal[t]);
                    let el = rel(sol.lambda, oracle[t]);
                    worst_f = worst_f.max(ef);
                    worst_l = worst_l.max(el);
                    if !(ef <= 1e-6 && el <= 1e-4) {
                        problems.push(format!(
                            "image {k} {target}: functional err {ef:.2e}, lambda err {el:.2e}"
                        ));
                    }
                }
                Err(e) => problems.push(format!("image {k} {target}: {e}")),
            }
        }
    }
    outcome(
        problems.is_empty(),
        format!(
            "150 solves; worst functional error {worst_f:.2e}, worst multiplier error {worst_l:.2e}{}",
            problems.first().map(|p| format!("; first problem: {p}")).unwrap_or_default()
        ),
    )
}

// Criterion 2 -------------------------------------------------------------

fn cv(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    var.sqrt() / mean
}

fn criterion_2() -> Outcome {
    let mut rng = seed::rng(seed::derive(MASTER, 2));
    let mut worst = [0.0f64; 4];
    let mut problems = Vec::new();
    for i in 0..1000u64 {
        let params = CoverParams {
            n_coeffs: rng.gen_range(64..=512),
            heterogeneity: rng.gen_range(0.0..=1.0),
            ..CoverParams::default()
        };
        let b = rng.gen_range(1..=20);
        let bptc = rng.gen_range(0.02..0.5);
        let bag = gen_bag(seed::derive(MASTER, 2000 + i), i, b, &params).unwrap();
        let total = total_bits_for(&bag, bptc).unwrap();
        let spread_seed = seed::derive(MASTER, 9000 + i);

        let greedy = spread_greedy(&bag, total, spread_seed).unwrap();
        let linear = spread_linear(&bag, total).unwrap();
        let uses = spread_uses_beta(&bag, total, 0.5, spread_seed).unwrap();
        let (ims, _) = spread_ims_detailed(&bag, total).unwrap();
        let dels = spread_dels_detailed(&bag, total).unwrap();
        let dils = spread_dils_detailed(&bag, total).unwrap();

        for a in [
            &greedy,
            &linear,
            &uses,
            &ims,
            &dels.allocation,
            &dils.allocation,
        ] {
            let e = rel(a.bits_per_image.iter().sum(), total);
            worst[0] = worst[0].max(e);
            if e > 1e-6 {
                problems.push(format!("bag {i} {}: total bits off by {e:.2e}", a.strategy));
            }
        }
        for (k, &bits) in greedy.bits_per_image.iter().enumerate() {
            if bits / bag.images[k].n_coeffs() as f64 > GREEDY_BPC_CAP {
                problems.push(format!("bag {i}: greedy image {k} above the cap"));
            }
        }
        let defl: Vec<f64> = bag
            .images
            .iter()
            .zip(&dels.lambdas)
            .map(|(im, &l)| evaluate(im, l).unwrap().deflection)
            .collect();
        let dist: Vec<f64> = bag
            .images
            .iter()
            .zip(&dils.lambdas)
            .map(|(im, &l)| evaluate(im, l).unwrap().distortion)
            .collect();
        worst[1] = worst[1].max(cv(&defl));
        worst[2] = worst[2].max(cv(&dist));
        if cv(&defl) >= 1e-3 || cv(&dist) >= 1e-3 {
            problems.push(format!(
                "bag {i}: deflection cv {:.2e}, distortion cv {:.2e}",
                cv(&defl),
                cv(&dist)
            ));
        }
        let lambdas: Vec<f64> = bag
            .images
            .iter()
            .zip(&ims.bits_per_image)
            .map(|(im, &bits)| solve_lambda(im, Target::Payload, bits).unwrap().lambda)
            .collect();
        let (mn, mx) = lambdas
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(a, c), &l| (a.min(l), c.max(l)));
        let spread = (mx - mn) / mx;
        worst[3] = worst[3].max(spread);
        if spread >= 1e-6 {
            problems.push(format!(
                "bag {i}: merged-image multipliers spread {spread:.2e}"
            ));
        }
        if spread_uses_beta(&bag, total, 1.0, spread_seed)
            .unwrap()
            .bits_per_image
            != linear.bits_per_image
        {
            problems.push(format!(
                "bag {i}: uses-beta with beta = 1 differs from linear"
            ));
        }
    }
    outcome(
        problems.is_empty(),
        format!(
            "6000 allocations; worst conservation {:.1e}, deflection cv {:.1e}, distortion cv {:.1e}, multiplier spread {:.1e}{}",
            worst[0],
            worst[1],
            worst[2],
            worst[3],
            problems.first().map(|p| format!("; first problem: {p}")).unwrap_or_default()
        ),
    )
}

// Criterion 3 -------------------------------------------------------------

fn criterion_3() -> Outcome {
    let mut rng = seed::rng(seed::derive(MASTER, 3));
    let mut worst = 0.0f64;
    let mut problems = Vec::new();
    for trial in 0..60 {
        let b = [1, 10, 200][trial % 3];
        let p = rng.gen_range(2..=100);
        let train: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..2.0)).collect();
        let cfg = fit_parzen_config(&train, p).unwrap();
        let scores: Vec<f64> = (0..b).map(|_| rng.gen_range(-1.5..2.5)).collect();
        let h = parzen_histogram(&scores, &cfg).unwrap();
        if h.len() != p {
            problems.push(format!("trial {trial}: dimension {} for p = {p}", h.len()));
            continue;
        }
        for j in 0..p {
            let mut direct = 0.0;
            for &s in &scores {
                direct += (-cfg.gamma * (s - cfg.centers[j]).powi(2)).exp();
            }
            direct /= b as f64;
            worst = worst.max((h.h[j] - direct).abs());
        }
        let mut shuffled = scores.clone();
        shuffled.shuffle(&mut rng);
        if parzen_histogram(&shuffled, &cfg).unwrap() != h {
            problems.push(format!("trial {trial}: permutation changed the histogram"));
        }
    }
    if worst > 1e-12 {
        problems.push(format!("deviation {worst:.2e} from the direct sum"));
    }
    outcome(
        problems.is_empty(),
        format!(
            "60 bags with b in {{1, 10, 200}}; worst deviation {worst:.1e}{}",
            problems
                .first()
                .map(|p| format!("; first problem: {p}"))
                .unwrap_or_default()
        ),
    )
}

// Criterion 4 -------------------------------------------------------------

fn criterion_4() -> Outcome {
    let mut rng = seed::rng(seed::derive(MASTER, 4));
    let p = 10;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for k in 0..200 {
        let y = if k % 2 == 0 { 1.0 } else { -1.0 };
        let center = if y > 0.0 { 0.7 } else { 0.3 };
        let h: Vec<f64> = (0..p)
            .map(|_| center + 0.05 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        xs.push(Histogram { h });
        ys.push(y);
    }
    let opts = SvmOptions {
        trace: true,
        ..SvmOptions::default()
    };
    let fit = train_linear_svm_with(&xs, &ys, &opts).unwrap();
    let correct = xs
        .iter()
        .zip(&ys)
        .filter(|(x, &y)| (svm_margin(&fit.model, x).unwrap() > fit.model.delta) == (y > 0.0))
        .count();
    let accuracy = correct as f64 / xs.len() as f64;
    let rises = fit
        .objective_trace
        .windows(2)
        .filter(|w| w[1] > w[0] + 1e-12 * w[0].abs().max(1.0))
        .count();

    let flipped: Vec<f64> = ys.iter().map(|y| -y).collect();
    let back = train_linear_svm_with(&xs, &flipped, &SvmOptions::default()).unwrap();
    let scale = fit.model.weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    let flip_err = fit
        .model
        .weights
        .iter()
        .zip(&back.model.weights)
        .map(|(a, b)| (a + b).abs())
        .fold((fit.model.intercept + back.model.intercept).abs(), f64::max)
        / scale;

    let pass =
        accuracy >= 0.99 && rises == 0 && !fit.objective_trace.is_empty() && flip_err <= 1e-4;
    outcome(
        pass,
        format!(
            "accuracy {accuracy:.3}; {} objective steps, {rises} increases; relative duality gap {:.1e}; label flip deviation {flip_err:.1e}",
            fit.objective_trace.len(),
            fit.relative_gap()
        ),
    )
}

// Criterion 5 -------------------------------------------------------------

fn brute_force_pe(neg: &[f64], pos: &[f64]) -> f64 {
    let mut cuts = vec![f64::NEG_INFINITY, f64::INFINITY];
    let mut all: Vec<f64> = neg.iter().chain(pos).copied().collect();
    all.sort_by(f64::total_cmp);
    cuts.extend(&all);
    cuts.extend(all.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    cuts.iter()
        .map(|&t| {
            let fa = neg.iter().filter(|&&x| x > t).count() as f64 / neg.len() as f64;
            let md = pos.iter().filter(|&&x| x <= t).count() as f64 / pos.len() as f64;
            0.5 * (fa + md)
        })
        .fold(f64::INFINITY, f64::min)
}

fn criterion_5() -> Outcome {
    let mut rng = seed::rng(seed::derive(MASTER, 5));
    let mut mismatches = 0;
    for k in 0..100 {
        let (nn, np) = (rng.gen_range(1..=20), rng.gen_range(1..=20));
        // Half the instances draw from a coarse grid to force ties.
        let mut draw = |shift: f64| -> f64 {
            if k % 2 == 0 {
                rng.gen_range(-4i32..=4) as f64 * 0.25 + shift
            } else {
                rng.gen_range(-1.0..1.0) + shift
            }
        };
        let neg: Vec<f64> = (0..nn).map(|_| draw(0.0)).collect();
        let pos: Vec<f64> = (0..np).map(|_| draw(0.3)).collect();
        if optimize_threshold(&neg, &pos).unwrap().pe != brute_force_pe(&neg, &pos) {
            mismatches += 1;
        }
    }
    outcome(
        mismatches == 0,
        format!("100 instances, {mismatches} mismatches"),
    )
}

// Criteria 6 to 9 -----------------------------------------------------------

fn desk_config() -> ExperimentConfig {
    ExperimentConfig {
        bag_sizes: vec![2, 10, 50],
        runs: 5,
        ..ExperimentConfig::default()
    }
}

fn criterion_6(chance: &Report, perfect: &Report) -> Outcome {
    let cfg = &chance.config;
    let sigma = (0.125 / (cfg.n_test_pairs * cfg.runs) as f64).sqrt();
    let off: Vec<String> = chance
        .cells
        .iter()
        .filter(|c| (c.pe_mean - 0.5).abs() > 3.0 * sigma)
        .map(|c| {
            format!(
                "{}/{}/b={} at {:.4}",
                c.pooling, c.strategy, c.bag_size, c.pe_mean
            )
        })
        .collect();
    let worst = chance
        .cells
        .iter()
        .map(|c| (c.pe_mean - 0.5).abs())
        .fold(0.0, f64::max);
    let imperfect: Vec<String> = perfect
        .cells
        .iter()
        .filter(|c| c.pe_mean != 0.0)
        .map(|c| {
            format!(
                "{}/{}/b={} at {:.4}",
                c.pooling, c.strategy, c.bag_size, c.pe_mean
            )
        })
        .collect();
    outcome(
        off.is_empty() && imperfect.is_empty(),
        format!(
            "zero gain: worst |P_e - 0.5| = {worst:.4} against 3 sigma = {:.4} over {} cells{}; noiseless: {} of {} cells non-zero{}",
            3.0 * sigma,
            chance.cells.len(),
            off.first().map(|p| format!(" (first outlier {p})")).unwrap_or_default(),
            imperfect.len(),
            perfect.cells.len(),
            imperfect.first().map(|p| format!(" (first {p})")).unwrap_or_default()
        ),
    )
}

fn criterion_7(r: &Report) -> Outcome {
    let pe = |s| r.pe(Pooling::Clair, s, 10).unwrap();
    let (g, u, l) = (
        pe(Strategy::Greedy),
        pe(Strategy::UsesBeta),
        pe(Strategy::Linear),
    );
    let adaptive = pe(Strategy::Dils)
        .max(pe(Strategy::Ims))
        .max(pe(Strategy::Dels));
    let d = pe(Strategy::Dels);
    let pass = g <= u + 0.02 && u <= l + 0.02 && l <= adaptive + 0.02 && d >= g + 0.05;
    outcome(
        pass,
        format!(
            "b=10 clairvoyant: greedy {g:.4}, uses-beta {u:.4}, linear {l:.4}, worst adaptive {adaptive:.4}, dels {d:.4} (dels - greedy = {:.4})",
            d - g
        ),
    )
}

fn criterion_8(r: &Report) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for b in [2, 10, 50] {
        let m = |p| r.mean_over_strategies(p, b).unwrap();
        let (clair, disc, mean, max) = (
            m(Pooling::Clair),
            m(Pooling::Disc),
            m(Pooling::Mean),
            m(Pooling::Max),
        );
        let ok = clair <= disc && disc <= mean.min(max) + 0.01;
        pass &= ok;
        parts.push(format!(
            "b={b}: clair {clair:.4} disc {disc:.4} mean {mean:.4} max {max:.4}{}",
            if ok { "" } else { " (violated)" }
        ));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_9(r: &Report) -> Outcome {
    let mut bad = Vec::new();
    let mut worst = f64::NEG_INFINITY;
    for &s in &r.config.strategies {
        let (small, large) = (
            r.pe(Pooling::Clair, s, 2).unwrap(),
            r.pe(Pooling::Clair, s, 50).unwrap(),
        );
        worst = worst.max(large - small);
        if large > small + 0.01 {
            bad.push(format!("{s}: {small:.4} -> {large:.4}"));
        }
    }
    outcome(
        bad.is_empty(),
        format!(
            "largest increase from b=2 to b=50 under clairvoyant pooling {worst:+.4}{}",
            if bad.is_empty() {
                String::new()
            } else {
                format!("; {}", bad.join(", "))
            }
        ),
    )
}

// Criterion 10 --------------------------------------------------------------

fn run_all(config: &Path, out: &Path, workers: &str) -> Result<Vec<u8>, String> {
    let o = Command::new(env!("CARGO_BIN_EXE_poolsteg"))
        .args(["run-all", "--seed", "7", "--workers", workers, "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    if !o.status.success() {
        return Err(String::from_utf8_lossy(&o.stderr).into_owned());
    }
    let mut bytes = std::fs::read(out.join("report.json")).map_err(|e| e.to_string())?;
    bytes.extend(std::fs::read(out.join("report.csv")).map_err(|e| e.to_string())?);
    Ok(bytes)
}

/// The full protocol with fewer bags and runs than the desk setting; the
/// property under test does not depend on scale.
fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    let cfg = ExperimentConfig {
        bag_sizes: vec![2, 10, 50],
        n_train_pairs: 40,
        n_test_pairs: 40,
        runs: 2,
        ..ExperimentConfig::default()
    };
    std::fs::write(&config, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    let runs: Result<Vec<Vec<u8>>, String> = [("a", "8"), ("b", "8"), ("c", "1")]
        .iter()
        .map(|(name, workers)| run_all(&config, &dir.path().join(name), workers))
        .collect();
    match runs {
        Err(e) => outcome(false, format!("run-all failed: {e}")),
        Ok(r) => outcome(
            r[0] == r[1] && r[1] == r[2],
            format!(
                "3 run-all invocations (8, 8 and 1 workers) on {} bag sizes x {} runs x {} pairs: reports {}",
                cfg.bag_sizes.len(),
                cfg.runs,
                cfg.n_train_pairs,
                if r[0] == r[1] && r[1] == r[2] { "byte-identical" } else { "differ" }
            ),
        ),
    }
}

fn main() {
    // Optional criterion numbers select a subset, e.g. `-- 1 10`.
    let only: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let wanted = |k: usize| only.is_empty() || only.contains(&k);
    let names = [
        "single-image solver against grid oracle",
        "allocation invariants",
        "histogram exactness and invariance",
        "classifier sanity",
        "threshold optimality",
        "chance and perfection anchors",
        "strategy ordering at b=10",
        "pooling ordering",
        "error decreases with bag size",
        "run-all determinism",
    ];
    let mut results: Vec<Option<Outcome>> = (0..10).map(|_| None).collect();
    let timed = |f: &dyn Fn() -> Outcome| {
        let t = Instant::now();
        let mut o = f();
        o.detail = format!("{} [{:.0?}]", o.detail, t.elapsed());
        Some(o)
    };
    let unit: [&dyn Fn() -> Outcome; 5] = [
        &criterion_1,
        &criterion_2,
        &criterion_3,
        &criterion_4,
        &criterion_5,
    ];
    for (k, f) in unit.iter().enumerate() {
        if wanted(k + 1) {
            results[k] = timed(*f);
        }
    }

    if (6..=9).any(wanted) {
        let t = Instant::now();
        let cfg = desk_config();
        let sids = [
            SidParams::default(),
            SidParams {
                gain: 0.0,
                ..SidParams::default()
            },
            SidParams::noiseless(),
        ];
        match run_experiment_shared(&cfg, &sids) {
            Ok(reports) => {
                let elapsed = format!(" [shared desk run {:.0?}]", t.elapsed());
                results[5] = Some(criterion_6(&reports[1], &reports[2]));
                results[6] = Some(criterion_7(&reports[0]));
                results[7] = Some(criterion_8(&reports[0]));
                results[8] = Some(criterion_9(&reports[0]));
                for r in &mut results[5..9] {
                    r.as_mut().unwrap().detail.push_str(&elapsed);
                }
                println!(
                    "desk-scale report at default settings:\n{}",
                    reports[0].render_text()
                );
            }
            Err(e) => {
                for r in &mut results[5..9] {
                    *r = Some(outcome(false, format!("experiment failed: {e}")));
                }
            }
        }
    }
    if wanted(10) {
        results[9] = timed(&criterion_10);
    }

    let (mut run, mut passed) = (0, 0);
    for (k, (name, r)) in names.iter().zip(&results).enumerate() {
        if let Some(r) = r {
            run += 1;
            passed += r.pass as usize;
            println!(
                "{} criterion {:>2} {name}: {}",
                if r.pass { "PASS" } else { "FAIL" },
                k + 1,
                r.detail
            );
        }
    }
    println!("acceptance: {passed}/{run} criteria passed");
    if passed != run {
        std::process::exit(1);
    }
}
