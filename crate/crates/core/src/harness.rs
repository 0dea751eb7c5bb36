//! Experiment pipeline: build cover/stego bag sets, train the poolers on one
//! split, measure their error on the other, repeat over bag sizes and runs.
//!
//! Embedding (the expensive part) is separated from scoring so several
//! detector settings can be evaluated on the same embedded bags.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::cover::BagPlan;
use crate::error::{Error, Result};
use crate::pooling::{
    error_at, fit_parzen_config_scaled, optimize_threshold, parzen_histogram, pooled_statistic,
    svm_margin, train_linear_svm_with, BinScaler, Histogram, LinearModel, ParzenConfig, PoolDomain,
    Pooling, ScalarKind, Scaling, SvmOptions, Threshold,
};
use crate::report::{Cell, Report, SkipRecord};
use crate::seed;
use crate::sid::{score_rates, Label, ScoredBag, SidParams};
use crate::spreading::{spread, total_bits_for, Strategy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn tag(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// An embedded bag before scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct RatedBag {
    pub bag_id: u64,
    pub keys: Vec<u64>,
    pub rates: Vec<f64>,
    pub label: Label,
    pub strategy: Option<Strategy>,
    pub score_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatedSet {
    pub bags: Vec<RatedBag>,
    /// Infeasible stego bags per strategy, in config order.
    pub skipped: Vec<(Strategy, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub bags: Vec<ScoredBag>,
    pub skipped: Vec<(Strategy, usize)>,
}

fn bag_seed(
    cfg: &ExperimentConfig,
    run: usize,
    bag_size: usize,
    split: Split,
    pair: usize,
    slot: usize,
) -> u64 {
    seed::derive_path(
        cfg.seed,
        &[
            seed::TAG_RUN,
            run as u64,
            seed::TAG_BAG_SIZE,
            bag_size as u64,
            seed::TAG_SPLIT,
            split.tag(),
            seed::TAG_BAG,
            pair as u64,
            seed::TAG_STRATEGY,
            slot as u64,
        ],
    )
}

/// Embeds one split: for each pair index a cover bag and one stego bag per
/// enabled strategy, each from its own fresh covers. Bag ids are
/// `pair * (strategies + 1) + slot`, slot 0 being the cover.
pub fn build_rated(
    cfg: &ExperimentConfig,
    bag_size: usize,
    run: usize,
    split: Split,
) -> Result<RatedSet> {
    cfg.validate()?;
    let n = match split {
        Split::Train => cfg.n_train_pairs,
        Split::Test => cfg.n_test_pairs,
    };
    let slots = cfg.strategies.len() + 1;
    let jobs: Vec<Option<RatedBag>> = (0..n * slots)
        .into_par_iter()
        .map(|idx| {
            let (pair, slot) = (idx / slots, idx % slots);
            let seed = bag_seed(cfg, run, bag_size, split, pair, slot);
            let plan = BagPlan::new(seed, idx as u64, bag_size, &cfg.cover_params)?;
            let (rates, label, strategy) = if slot == 0 {
                (vec![0.0; bag_size], Label::Cover, None)
            } else {
                let strategy = cfg.strategies[slot - 1];
                let total = total_bits_for(&plan, cfg.bptc)?;
                match spread(
                    strategy,
                    &plan,
                    total,
                    cfg.uses_beta,
                    seed::derive(seed, seed::TAG_SPREAD),
                ) {
                    Ok(a) => (a.rates(&plan), Label::Stego, Some(strategy)),
                    Err(Error::Infeasible(_)) => return Ok(None),
                    Err(e) => return Err(e),
                }
            };
            Ok(Some(RatedBag {
                bag_id: idx as u64,
                keys: plan.keys,
                rates,
                label,
                strategy,
                score_seed: seed::derive(seed, seed::TAG_SCORE),
            }))
        })
        .collect::<Result<_>>()?;

    let mut skipped: Vec<(Strategy, usize)> = cfg.strategies.iter().map(|&s| (s, 0)).collect();
    for (idx, job) in jobs.iter().enumerate() {
        if job.is_none() {
            skipped[idx % slots - 1].1 += 1;
        }
    }
    let total_skipped: usize = skipped.iter().map(|s| s.1).sum();
    if total_skipped as f64 > cfg.max_skip_fraction * (n * slots) as f64 {
        return Err(Error::infeasible(format!(
            "{total_skipped} of {} bags infeasible at bag size {bag_size}, run {run}, {split} split",
            n * slots
        )));
    }
    Ok(RatedSet {
        bags: jobs.into_iter().flatten().collect(),
        skipped,
    })
}

/// Applies a detector to every bag of a rated set.
pub fn score_rated(set: &RatedSet, sid: &SidParams) -> Result<Vec<ScoredBag>> {
    sid.validate()?;
    set.bags
        .par_iter()
        .map(|bag| {
            Ok(ScoredBag {
                bag_id: bag.bag_id,
                scores: score_rates(bag.score_seed, &bag.keys, &bag.rates, sid)?,
                label: bag.label,
                strategy: bag.strategy,
                true_rates: bag.rates.clone(),
            })
        })
        .collect()
}

pub fn build_dataset(
    cfg: &ExperimentConfig,
    bag_size: usize,
    run: usize,
    split: Split,
) -> Result<Dataset> {
    let rated = build_rated(cfg, bag_size, run, split)?;
    Ok(Dataset {
        bags: score_rated(&rated, &cfg.sid_params)?,
        skipped: rated.skipped,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolerOptions {
    pub p: usize,
    pub svm_c: f64,
    pub kernel_width: f64,
    pub feature_scaling: Scaling,
    pub calibrate_delta: bool,
    pub pool_domain: PoolDomain,
}

impl From<&ExperimentConfig> for PoolerOptions {
    fn from(cfg: &ExperimentConfig) -> Self {
        PoolerOptions {
            p: cfg.p,
            svm_c: cfg.svm_c,
            kernel_width: cfg.kernel_width,
            feature_scaling: cfg.feature_scaling,
            calibrate_delta: cfg.calibrate_delta,
            pool_domain: cfg.pool_domain,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClairModel {
    pub strategy: Strategy,
    pub model: LinearModel,
}

/// Everything learnt from one training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainedPoolers {
    pub bag_size: usize,
    pub parzen: ParzenConfig,
    pub pool_domain: PoolDomain,
    pub disc: LinearModel,
    pub clair: Vec<ClairModel>,
    pub tau_mean: Threshold,
    pub tau_max: Threshold,
}

impl TrainedPoolers {
    pub fn clair_for(&self, strategy: Strategy) -> Option<&LinearModel> {
        self.clair
            .iter()
            .find(|c| c.strategy == strategy)
            .map(|c| &c.model)
    }
}

fn bag_size_of(bags: &[ScoredBag]) -> Result<usize> {
    let b = bags.first().map_or(0, |bag| bag.scores.len());
    if b == 0 {
        return Err(Error::Training("no bags, or an empty bag".into()));
    }
    if let Some(bad) = bags.iter().find(|bag| bag.scores.len() != b) {
        return Err(Error::Mismatch(format!(
            "bag {} has {} scores but bag {} has {b}",
            bad.bag_id,
            bad.scores.len(),
            bags[0].bag_id
        )));
    }
    Ok(b)
}

/// Cover bags and, per strategy in `strategies` order, that strategy's
/// stego bags. Stego bags of any other strategy are an error.
fn partition(bags: &[ScoredBag], strategies: &[Strategy]) -> Result<(Vec<usize>, Vec<Vec<usize>>)> {
    let mut covers = Vec::new();
    let mut stegos = vec![Vec::new(); strategies.len()];
    for (i, bag) in bags.iter().enumerate() {
        match (bag.label, bag.strategy) {
            (Label::Cover, _) => covers.push(i),
            (Label::Stego, Some(s)) => match strategies.iter().position(|&t| t == s) {
                Some(k) => stegos[k].push(i),
                None => {
                    return Err(Error::Mismatch(format!(
                        "bag {} uses unexpected strategy {s}",
                        bag.bag_id
                    )))
                }
            },
            (Label::Stego, None) => {
                return Err(Error::Mismatch(format!(
                    "stego bag {} has no strategy",
                    bag.bag_id
                )));
            }
        }
    }
    if covers.is_empty() {
        return Err(Error::Training("no cover bags".into()));
    }
    for (k, s) in stegos.iter().enumerate() {
        if s.is_empty() {
            return Err(Error::Training(format!(
                "no stego bags for strategy {}",
                strategies[k]
            )));
        }
    }
    Ok((covers, stegos))
}

fn featurize(bags: &[ScoredBag], parzen: &ParzenConfig) -> Result<Vec<Histogram>> {
    bags.par_iter()
        .map(|b| parzen_histogram(&b.scores, parzen))
        .collect()
}

fn statistics(
    bags: &[ScoredBag],
    feats: &[Histogram],
    idx: &[usize],
    kind: ScalarKind,
    domain: PoolDomain,
) -> Result<Vec<f64>> {
    idx.iter()
        .map(|&i| pooled_statistic(&bags[i].scores, &feats[i], kind, domain))
        .collect()
}

fn margins(model: &LinearModel, feats: &[Histogram], idx: &[usize]) -> Result<Vec<f64>> {
    idx.iter().map(|&i| svm_margin(model, &feats[i])).collect()
}

/// Trains every pooler on one split.
///
/// The discriminative SVM and the mean/max thresholds see all covers
/// against an equal number of stego bags drawn in rotation from the
/// strategies; each clairvoyant SVM sees all covers against its own
/// strategy's stego bags. SVMs train on histograms rescaled per bin over
/// the whole split and are stored folded back onto raw histograms.
pub fn train_poolers(
    train: &[ScoredBag],
    strategies: &[Strategy],
    opts: &PoolerOptions,
) -> Result<TrainedPoolers> {
    if strategies.is_empty() {
        return Err(Error::Training("no strategies to train for".into()));
    }
    let bag_size = bag_size_of(train)?;
    let (covers, stegos) = partition(train, strategies)?;
    let all_scores: Vec<f64> = train
        .iter()
        .flat_map(|b| b.scores.iter().copied())
        .collect();
    let parzen = fit_parzen_config_scaled(&all_scores, opts.p, opts.kernel_width)?;
    let feats = featurize(train, &parzen)?;
    let scaler = BinScaler::fit(opts.feature_scaling, &feats)?;
    let scaled: Vec<Histogram> = feats.iter().map(|h| scaler.apply(h)).collect();

    let s = strategies.len();
    let mixed: Vec<usize> = stegos
        .iter()
        .enumerate()
        .flat_map(|(k, list)| {
            list.iter()
                .enumerate()
                .filter(move |(r, _)| r % s == k)
                .map(|(_, &i)| i)
        })
        .collect();
    if mixed.is_empty() {
        return Err(Error::Training("rotation picked no stego bags".into()));
    }

    let svm_opts = SvmOptions {
        c: opts.svm_c,
        ..SvmOptions::default()
    };
    let mut jobs: Vec<&[usize]> = vec![&mixed];
    jobs.extend(stegos.iter().map(Vec::as_slice));
    let models: Vec<LinearModel> = jobs
        .par_iter()
        .map(|pos| {
            let mut xs = Vec::with_capacity(covers.len() + pos.len());
            let mut ys = Vec::with_capacity(covers.len() + pos.len());
            for &i in &covers {
                xs.push(scaled[i].clone());
                ys.push(-1.0);
            }
            for &i in pos.iter() {
                xs.push(scaled[i].clone());
                ys.push(1.0);
            }
            let mut model = scaler.fold(&train_linear_svm_with(&xs, &ys, &svm_opts)?.model);
            if opts.calibrate_delta {
                let neg = margins(&model, &feats, &covers)?;
                let pos = margins(&model, &feats, pos)?;
                model.delta = optimize_threshold(&neg, &pos)?.tau;
            }
            Ok(model)
        })
        .collect::<Result<_>>()?;
    let mut models = models.into_iter();
    let disc = models.next().expect("one model per job");
    let clair = strategies
        .iter()
        .zip(models)
        .map(|(&strategy, model)| ClairModel { strategy, model })
        .collect();

    let threshold = |kind| -> Result<Threshold> {
        let neg = statistics(train, &feats, &covers, kind, opts.pool_domain)?;
        let pos = statistics(train, &feats, &mixed, kind, opts.pool_domain)?;
        optimize_threshold(&neg, &pos)
    };
    Ok(TrainedPoolers {
        bag_size,
        tau_mean: threshold(ScalarKind::Mean)?,
        tau_max: threshold(ScalarKind::Max)?,
        parzen,
        pool_domain: opts.pool_domain,
        disc,
        clair,
    })
}

/// Test error of each pooling rule against one strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub strategy: Strategy,
    /// Indexed like [`Pooling::ALL`].
    pub pe: [f64; 4],
}

impl Evaluation {
    pub fn get(&self, pooling: Pooling) -> f64 {
        self.pe[Pooling::ALL
            .iter()
            .position(|&p| p == pooling)
            .expect("listed")]
    }
}

/// Error of every pooling rule on test covers against each strategy the
/// poolers were trained for.
pub fn evaluate_all(test: &[ScoredBag], poolers: &TrainedPoolers) -> Result<Vec<Evaluation>> {
    let bag_size = bag_size_of(test)?;
    if bag_size != poolers.bag_size {
        return Err(Error::Mismatch(format!(
            "poolers were trained on bags of {} images, test bags have {bag_size}",
            poolers.bag_size
        )));
    }
    poolers.parzen.validate()?;
    let check_dim = |what: &str, m: &LinearModel| {
        if m.dim() == poolers.parzen.p {
            Ok(())
        } else {
            Err(Error::Mismatch(format!(
                "{what} model has {} weights but p = {}",
                m.dim(),
                poolers.parzen.p
            )))
        }
    };
    check_dim("disc", &poolers.disc)?;
    for c in &poolers.clair {
        check_dim(c.strategy.name(), &c.model)?;
    }

    let strategies: Vec<Strategy> = poolers.clair.iter().map(|c| c.strategy).collect();
    let (covers, stegos) = partition(test, &strategies)?;
    let feats = featurize(test, &poolers.parzen)?;
    let domain = poolers.pool_domain;
    let disc_neg = margins(&poolers.disc, &feats, &covers)?;
    let mean_neg = statistics(test, &feats, &covers, ScalarKind::Mean, domain)?;
    let max_neg = statistics(test, &feats, &covers, ScalarKind::Max, domain)?;

    strategies
        .iter()
        .zip(&poolers.clair)
        .zip(&stegos)
        .map(|((&strategy, clair), pos)| {
            let disc = error_at(
                &disc_neg,
                &margins(&poolers.disc, &feats, pos)?,
                poolers.disc.delta,
            );
            let clair_pe = error_at(
                &margins(&clair.model, &feats, &covers)?,
                &margins(&clair.model, &feats, pos)?,
                clair.model.delta,
            );
            let mean = error_at(
                &mean_neg,
                &statistics(test, &feats, pos, ScalarKind::Mean, domain)?,
                poolers.tau_mean.tau,
            );
            let max = error_at(
                &max_neg,
                &statistics(test, &feats, pos, ScalarKind::Max, domain)?,
                poolers.tau_max.tau,
            );
            Ok(Evaluation {
                strategy,
                pe: [disc, clair_pe, mean, max],
            })
        })
        .collect()
}

pub fn evaluate(
    test: &[ScoredBag],
    poolers: &TrainedPoolers,
    strategy: Strategy,
) -> Result<Evaluation> {
    evaluate_all(test, poolers)?
        .into_iter()
        .find(|e| e.strategy == strategy)
        .ok_or_else(|| Error::Mismatch(format!("no poolers trained for strategy {strategy}")))
}

struct UnitResult {
    skips: Vec<SkipRecord>,
    /// One entry per detector setting.
    evaluations: Vec<Vec<Evaluation>>,
}

fn run_unit(
    cfg: &ExperimentConfig,
    sids: &[SidParams],
    run: usize,
    bag_size: usize,
) -> Result<UnitResult> {
    let train = build_rated(cfg, bag_size, run, Split::Train)?;
    let test = build_rated(cfg, bag_size, run, Split::Test)?;
    let mut skips = Vec::new();
    for (split, set) in [(Split::Train, &train), (Split::Test, &test)] {
        for &(strategy, skipped) in &set.skipped {
            if skipped > 0 {
                skips.push(SkipRecord {
                    run,
                    bag_size,
                    split,
                    strategy,
                    skipped,
                });
            }
        }
    }
    let opts = PoolerOptions::from(cfg);
    let evaluations = sids
        .iter()
        .map(|sid| {
            let train_bags = score_rated(&train, sid)?;
            let test_bags = score_rated(&test, sid)?;
            let poolers = train_poolers(&train_bags, &cfg.strategies, &opts)?;
            evaluate_all(&test_bags, &poolers)
        })
        .collect::<Result<_>>()?;
    Ok(UnitResult { skips, evaluations })
}

/// Runs the full protocol once per detector setting, embedding each bag
/// only once. `cfg.sid_params` is ignored; each report echoes its own.
pub fn run_experiment_shared(cfg: &ExperimentConfig, sids: &[SidParams]) -> Result<Vec<Report>> {
    cfg.validate()?;
    for sid in sids {
        sid.validate()?;
    }
    let units: Vec<(usize, usize)> = (0..cfg.runs)
        .flat_map(|r| cfg.bag_sizes.iter().map(move |&b| (r, b)))
        .collect();
    let results: Vec<UnitResult> = units
        .par_iter()
        .map(|&(run, b)| run_unit(cfg, sids, run, b))
        .collect::<Result<_>>()?;

    let skips: Vec<SkipRecord> = results
        .iter()
        .flat_map(|r| r.skips.iter().cloned())
        .collect();
    let nb = cfg.bag_sizes.len();
    Ok(sids
        .iter()
        .enumerate()
        .map(|(k, sid)| {
            let mut cells = Vec::new();
            for (pi, &pooling) in Pooling::ALL.iter().enumerate() {
                for (si, &strategy) in cfg.strategies.iter().enumerate() {
                    for (bi, &bag_size) in cfg.bag_sizes.iter().enumerate() {
                        let pe_runs: Vec<f64> = (0..cfg.runs)
                            .map(|r| {
                                let e = &results[r * nb + bi].evaluations[k][si];
                                debug_assert_eq!(e.strategy, strategy);
                                e.pe[pi]
                            })
                            .collect();
                        cells.push(Cell::new(pooling, strategy, bag_size, pe_runs));
                    }
                }
            }
            let mut config = cfg.clone();
            config.sid_params = sid.clone();
            Report::new(config, skips.clone(), cells)
        })
        .collect())
}

/// Runs the full protocol on the current thread pool.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    let mut reports = run_experiment_shared(cfg, std::slice::from_ref(&cfg.sid_params))?;
    Ok(reports.pop().expect("one report per detector setting"))
}

/// Runs `f` on a dedicated pool of `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Err(Error::param("workers must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

pub fn run_experiment_with_workers(cfg: &ExperimentConfig, workers: usize) -> Result<Report> {
    with_workers(workers, || run_experiment(cfg))?
}
