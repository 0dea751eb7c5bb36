use std::fmt;
use std::path::Path;

use poolsteg::config::ExperimentConfig;
use poolsteg::cover::{gen_bag, BagPlan};
use poolsteg::harness::{
    build_dataset, evaluate_all, run_experiment, train_poolers, with_workers, PoolerOptions, Split,
    TrainedPoolers,
};
use poolsteg::pooling::{
    fit_parzen_config_scaled, parzen_histogram, ModelFile, ParzenConfig, Pooling,
};
use poolsteg::report::Report;
use poolsteg::sid::{load_scores, write_scores_csv, ScoredBag};
use poolsteg::spreading::{spread, total_bits_for, write_allocations_csv};
use poolsteg::{seed, Error};
use serde::de::DeserializeOwned;

use crate::args::{
    Cli, Command, EvaluateArgs, FeaturizeArgs, GenBags, ReportArgs, ScoreArgs, SpreadArgs,
    TrainArgs,
};
use crate::output::Outputs;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or flag combinations.
    Usage(String),
    Core(Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

/// 1 for problems with what the user handed in, 2 for failures while running.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Ingest { .. } | Error::Io { .. } => 1,
        _ => 2,
    }
}

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = ExperimentConfig::load(cli.common.config.as_deref(), &cli.common.overrides)?;
    if let Some(s) = cli.common.seed {
        cfg.seed = s;
    }
    let out = cli.common.out.clone();
    let command = cli.command;
    let go = move || -> Result<Outputs> {
        match command {
            Command::GenBags(a) => gen_bags(&cfg, &a),
            Command::Spread(a) => spread_cmd(&cfg, &a),
            Command::Score(a) => score(&cfg, &a),
            Command::Featurize(a) => featurize(&cfg, &a),
            Command::Train(a) => train(&cfg, &a),
            Command::Evaluate(a) => evaluate(&cfg, &a),
            Command::RunAll => run_all(&cfg),
            Command::Report(a) => report(&a),
        }
    };
    let outputs = match cli.common.workers {
        Some(0) => return Err(CliError::Usage("--workers must be at least 1".into())),
        Some(n) => with_workers(n, go)??,
        None => go()?,
    };
    // Write failures are runtime errors, not input errors.
    let written = outputs
        .commit(&out)
        .map_err(|e| CliError::Core(Error::Training(format!("writing outputs: {e}"))))?;
    for path in written {
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn bag_size(b: usize) -> Result<usize> {
    if b == 0 {
        return Err(CliError::Usage("--b must be at least 1".into()));
    }
    Ok(b)
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> poolsteg::Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| {
        CliError::Core(Error::Ingest {
            path: path.to_path_buf(),
            line: e.line() as u64,
            message: e.to_string(),
        })
    })
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v).map_err(Error::from)?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn gen_bags(cfg: &ExperimentConfig, a: &GenBags) -> Result<Outputs> {
    let b = bag_size(a.b)?;
    let mut summary = csv::Writer::from_writer(Vec::new());
    let mut maps = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Core(e.into());
    summary
        .write_record([
            "bag_id",
            "image_id",
            "key",
            "n_coeffs",
            "mean_cost",
            "mean_variance",
        ])
        .map_err(csv_err)?;
    maps.write_record(["bag_id", "image_id", "coeff", "cost", "variance"])
        .map_err(csv_err)?;
    for bag_id in 0..a.bags {
        let bag = gen_bag(cfg.seed, bag_id, b, &cfg.cover_params)?;
        for img in &bag.images {
            let n = img.n_coeffs() as f64;
            summary
                .write_record([
                    bag_id.to_string(),
                    img.id.to_string(),
                    img.key.to_string(),
                    img.n_coeffs().to_string(),
                    (img.costs.iter().sum::<f64>() / n).to_string(),
                    (img.variances.iter().sum::<f64>() / n).to_string(),
                ])
                .map_err(csv_err)?;
            if a.maps {
                for (k, (c, v)) in img.costs.iter().zip(&img.variances).enumerate() {
                    maps.write_record([
                        bag_id.to_string(),
                        img.id.to_string(),
                        k.to_string(),
                        c.to_string(),
                        v.to_string(),
                    ])
                    .map_err(csv_err)?;
                }
            }
        }
    }
    let mut out = Outputs::default();
    out.add(
        "bags.csv",
        summary
            .into_inner()
            .map_err(|e| csv_err(e.into_error().into()))?,
    );
    if a.maps {
        out.add(
            "maps.csv",
            maps.into_inner()
                .map_err(|e| csv_err(e.into_error().into()))?,
        );
    }
    Ok(out)
}

fn spread_cmd(cfg: &ExperimentConfig, a: &SpreadArgs) -> Result<Outputs> {
    let b = bag_size(a.b)?;
    let bptc = a.bptc.unwrap_or(cfg.bptc);
    let mut allocations = Vec::new();
    for bag_id in 0..a.bags {
        let plan = BagPlan::new(cfg.seed, bag_id, b, &cfg.cover_params)?;
        let total = total_bits_for(&plan, bptc)?;
        let spread_seed = seed::derive(seed::derive(cfg.seed, bag_id), seed::TAG_SPREAD);
        allocations.push((
            bag_id,
            spread(a.strategy, &plan, total, cfg.uses_beta, spread_seed)?,
        ));
    }
    let rows: Vec<(u64, &_)> = allocations.iter().map(|(id, al)| (*id, al)).collect();
    let mut out = Outputs::default();
    out.add(
        "allocations.csv",
        csv_bytes(|buf| write_allocations_csv(buf, &rows))?,
    );
    Ok(out)
}

fn score(cfg: &ExperimentConfig, a: &ScoreArgs) -> Result<Outputs> {
    let b = bag_size(a.b)?;
    let split = Split::from(a.split);
    let ds = build_dataset(cfg, b, a.run, split)?;
    for (strategy, n) in &ds.skipped {
        if *n > 0 {
            eprintln!("skipped {n} infeasible {strategy} bags");
        }
    }
    let mut out = Outputs::default();
    out.add(
        format!("scores-{split}-b{b}-r{}.csv", a.run),
        csv_bytes(|buf| write_scores_csv(buf, &ds.bags))?,
    );
    Ok(out)
}

fn featurize(cfg: &ExperimentConfig, a: &FeaturizeArgs) -> Result<Outputs> {
    let bags = load_scores(&a.scores)?;
    let parzen: ParzenConfig = match &a.models {
        Some(path) => read_json::<TrainedPoolers>(path)?.parzen,
        None => {
            let all: Vec<f64> = bags.iter().flat_map(|b| b.scores.iter().copied()).collect();
            fit_parzen_config_scaled(&all, cfg.p, cfg.kernel_width)?
        }
    };
    parzen.validate()?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["bag_id".to_string(), "label".into(), "strategy".into()];
    header.extend((0..parzen.p).map(|j| format!("h{j}")));
    w.write_record(&header).map_err(Error::from)?;
    for bag in &bags {
        let h = parzen_histogram(&bag.scores, &parzen)?;
        let mut row = vec![
            bag.bag_id.to_string(),
            bag.label.to_string(),
            strategy_name(bag),
        ];
        row.extend(h.h.iter().map(f64::to_string));
        w.write_record(&row).map_err(Error::from)?;
    }
    let mut out = Outputs::default();
    out.add(
        "features.csv",
        w.into_inner()
            .map_err(|e| Error::from(csv::Error::from(e.into_error())))?,
    );
    out.add("parzen.json", to_json(&parzen)?);
    Ok(out)
}

fn strategy_name(bag: &ScoredBag) -> String {
    bag.strategy
        .map_or_else(|| "none".to_string(), |s| s.to_string())
}

fn train(cfg: &ExperimentConfig, a: &TrainArgs) -> Result<Outputs> {
    let bags = load_scores(&a.scores)?;
    let poolers = train_poolers(&bags, &cfg.strategies, &PoolerOptions::from(cfg))?;
    let mut out = Outputs::default();
    out.add("poolers.json", to_json(&poolers)?);
    out.add(
        "disc.json",
        to_json(&ModelFile::new(
            &poolers.parzen,
            &poolers.disc,
            poolers.pool_domain,
        )?)?,
    );
    for c in &poolers.clair {
        out.add(
            format!("clair-{}.json", c.strategy),
            to_json(&ModelFile::new(
                &poolers.parzen,
                &c.model,
                poolers.pool_domain,
            )?)?,
        );
    }
    Ok(out)
}

fn evaluate(cfg: &ExperimentConfig, a: &EvaluateArgs) -> Result<Outputs> {
    let poolers: TrainedPoolers = read_json(&a.models)?;
    if poolers.parzen.p != cfg.p {
        return Err(Error::Mismatch(format!(
            "{} was trained with p = {} but the config has p = {}",
            a.models.display(),
            poolers.parzen.p,
            cfg.p
        ))
        .into());
    }
    let bags = load_scores(&a.scores)?;
    let evals = evaluate_all(&bags, &poolers)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["strategy", "pooling", "pe"])
        .map_err(Error::from)?;
    for e in &evals {
        for p in Pooling::ALL {
            w.write_record([e.strategy.to_string(), p.to_string(), e.get(p).to_string()])
                .map_err(Error::from)?;
        }
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::from(csv::Error::from(e.into_error())))?;
    print!("{}", String::from_utf8_lossy(&bytes));
    let mut out = Outputs::default();
    out.add("evaluation.csv", bytes);
    Ok(out)
}

fn run_all(cfg: &ExperimentConfig) -> Result<Outputs> {
    let report = run_experiment(cfg)?;
    print!("{}", report.render_text());
    let mut out = Outputs::default();
    out.add("report.json", report.to_json()?);
    out.add("report.csv", report.to_csv()?);
    Ok(out)
}

fn report(a: &ReportArgs) -> Result<Outputs> {
    let report = Report::load(&a.report)?;
    let text = report.render_text();
    print!("{text}");
    let mut out = Outputs::default();
    out.add("report.txt", text);
    for p in Pooling::ALL {
        if report.cells.iter().any(|c| c.pooling == p) {
            out.add(format!("table-{p}.csv"), report.table_csv(p));
        }
    }
    Ok(out)
}
