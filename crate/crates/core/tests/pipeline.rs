use std::path::Path;

use poolsteg::config::ExperimentConfig;
use poolsteg::cover::CoverParams;
use poolsteg::harness::{
    build_dataset, evaluate_all, run_experiment, run_experiment_shared,
    run_experiment_with_workers, train_poolers, PoolerOptions, Split,
};
use poolsteg::pooling::Pooling;
use poolsteg::report::Report;
use poolsteg::sid::{read_scores, write_scores_csv, SidParams};

fn small() -> ExperimentConfig {
    ExperimentConfig {
        bag_sizes: vec![2, 5],
        n_train_pairs: 30,
        n_test_pairs: 30,
        runs: 2,
        cover_params: CoverParams {
            n_coeffs: 256,
            ..CoverParams::default()
        },
        ..ExperimentConfig::default()
    }
}

#[test]
fn report_is_independent_of_worker_count() {
    let cfg = small();
    let one = run_experiment_with_workers(&cfg, 1).unwrap();
    let three = run_experiment_with_workers(&cfg, 3).unwrap();
    assert_eq!(one.to_json().unwrap(), three.to_json().unwrap());
}

#[test]
fn shared_run_matches_separate_runs() {
    let cfg = small();
    let other = SidParams {
        gain: 2.0,
        ..SidParams::default()
    };
    let shared = run_experiment_shared(&cfg, &[cfg.sid_params.clone(), other.clone()]).unwrap();
    assert_eq!(shared[0], run_experiment(&cfg).unwrap());
    let alone = ExperimentConfig {
        sid_params: other,
        ..cfg
    };
    assert_eq!(shared[1], run_experiment(&alone).unwrap());
}

#[test]
fn noiseless_detector_separates_every_cell() {
    let cfg = ExperimentConfig {
        sid_params: SidParams::noiseless(),
        ..small()
    };
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(
        report.cells.len(),
        Pooling::ALL.len() * cfg.strategies.len() * cfg.bag_sizes.len()
    );
    assert!(
        report.cells.iter().all(|c| c.pe_mean == 0.0),
        "{}",
        report.render_text()
    );
}

#[test]
fn staged_pipeline_reproduces_the_report() {
    let cfg = small();
    let report = run_experiment(&cfg).unwrap();
    for &b in &cfg.bag_sizes {
        let train = build_dataset(&cfg, b, 1, Split::Train).unwrap().bags;
        let test = build_dataset(&cfg, b, 1, Split::Test).unwrap().bags;
        let poolers = train_poolers(&train, &cfg.strategies, &PoolerOptions::from(&cfg)).unwrap();
        for e in evaluate_all(&test, &poolers).unwrap() {
            for pooling in Pooling::ALL {
                let cell = report.cell(pooling, e.strategy, b).unwrap();
                assert_eq!(
                    cell.pe_runs[1],
                    e.get(pooling),
                    "{pooling} {} b={b}",
                    e.strategy
                );
            }
        }
    }
}

#[test]
fn scores_and_reports_round_trip() {
    let cfg = small();
    let bags = build_dataset(&cfg, 5, 0, Split::Test).unwrap().bags;
    let mut buf = Vec::new();
    write_scores_csv(&mut buf, &bags).unwrap();
    assert_eq!(
        read_scores(buf.as_slice(), Path::new("scores.csv")).unwrap(),
        bags
    );

    let report = run_experiment(&cfg).unwrap();
    assert_eq!(
        Report::from_json(&report.to_json().unwrap()).unwrap(),
        report
    );
}
