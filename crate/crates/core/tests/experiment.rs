//! Sweeps, resumption, divergence handling, evaluation and determinism on
//! synthetic data.

use std::path::Path;

use rescaps::data::{synthetic, Dataset, DatasetId, Split};
use rescaps::experiment::{
    evaluate, plotdata, read_results, run_sweep_with, summarize, train, Settings, SkipAxis, SweepOutcome, SweepSpec,
    TrainOptions,
};
use rescaps::layers::{Architecture, CapsNet, ModelConfig, ParamStore};
use rescaps::routing::RoutingKind;

fn bars() -> rescaps::Result<(Dataset, Dataset)> {
    Ok((synthetic::bars(120, 6, 10, Split::Train, 0)?, synthetic::bars(60, 6, 10, Split::Test, 0)?))
}

fn spec(depths: Vec<usize>, skips: SkipAxis, lr: f64) -> SweepSpec {
    SweepSpec {
        datasets: vec![DatasetId::Mnist],
        routings: vec![RoutingKind::Rba],
        depths,
        skips,
        seeds: vec![0],
        template: Settings {
            epochs: Some(2),
            batch_size: Some(20),
            learning_rate: Some(lr),
            ..Settings::default()
        },
        train_limit: None,
        test_limit: None,
    }
}

fn sweep(spec: &SweepSpec, out: &Path) -> SweepOutcome {
    let tiny = |_| Architecture::tiny(10, 1);
    run_sweep_with(spec, out, &TrainOptions::default(), Some(&tiny), |_| bars()).unwrap()
}

fn tiny_config(routing: RoutingKind, depth: usize) -> ModelConfig {
    let mut cfg = ModelConfig::new(DatasetId::Mnist, routing, depth, false);
    cfg.architecture = Architecture::tiny(10, 1);
    cfg.epochs = 2;
    cfg.batch_size = Some(20);
    cfg.learning_rate = 1e-2;
    cfg
}

#[test]
fn depth_sweep_fills_results_summary_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let spec = spec((3..=8).collect(), SkipAxis::Both, 1e-2);
    let first = sweep(&spec, dir.path());
    assert!(first.failed.is_empty(), "{:?}", first.failed);
    assert_eq!(first.completed.len() + first.diverged.len(), 12);

    let rows = read_results(&first.results).unwrap();
    assert_eq!(rows.iter().filter(|r| r.epoch == 1).count(), 12);
    for id in &first.completed {
        assert!(dir.path().join("runs").join(format!("{id}.json")).exists());
    }

    let summary = std::fs::read_to_string(&first.summary).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], "dataset,routing,skip,d3,d4,d5,d6,d7,d8");
    assert_eq!(lines.len(), 3);
    // every cell equals the final-epoch accuracy of its single run
    let cells = summarize(&rows);
    for (key, value) in &cells {
        let last = rows
            .iter()
            .filter(|r| (r.dataset, r.routing, r.skip, r.depth) == *key)
            .max_by_key(|r| r.epoch)
            .unwrap();
        match value {
            Some(v) => assert_eq!(*v, last.test_acc),
            None => assert!(last.test_acc.is_nan()),
        }
    }

    let again = sweep(&spec, dir.path());
    assert_eq!(again.resumed.len(), 12);
    assert!(again.completed.is_empty());
    assert_eq!(format!("{:?}", read_results(&again.results).unwrap()), format!("{rows:?}"));

    let series = plotdata(&first.results, &dir.path().join("plots")).unwrap();
    assert_eq!(series.len(), 1);
    assert_eq!(series[0].points.len(), 12);
    let csv = std::fs::read_to_string(&series[0].file).unwrap();
    assert!(csv.starts_with("series,depth,test_acc\nskip,3,"));
    let index = std::fs::read_to_string(dir.path().join("plots/index.csv")).unwrap();
    assert_eq!(index.lines().count(), 2);
}

#[test]
fn a_partial_sweep_resumes_only_missing_runs() {
    let dir = tempfile::tempdir().unwrap();
    let first = sweep(&spec(vec![3], SkipAxis::Off, 1e-2), dir.path());
    assert_eq!(first.completed, vec!["mnist-rba-d3-noskip-s0".to_string()]);
    let second = sweep(&spec(vec![3, 4], SkipAxis::Off, 1e-2), dir.path());
    assert_eq!(second.resumed, vec!["mnist-rba-d3-noskip-s0".to_string()]);
    assert_eq!(second.completed, vec!["mnist-rba-d4-noskip-s0".to_string()]);
    let rows = read_results(&second.results).unwrap();
    assert_eq!(rows.iter().filter(|r| r.depth == 3).count(), 2);
}

#[test]
fn diverged_runs_are_recorded_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let out = sweep(&spec(vec![3], SkipAxis::Off, 1e30), dir.path());
    assert!(out.failed.is_empty(), "{:?}", out.failed);
    assert_eq!(out.diverged, vec!["mnist-rba-d3-noskip-s0".to_string()]);
    let rows = read_results(&out.results).unwrap();
    let last = rows.last().unwrap();
    assert!(last.test_acc.is_nan() && last.train_loss.is_nan());
    let summary = std::fs::read_to_string(&out.summary).unwrap();
    assert!(summary.lines().nth(1).unwrap().ends_with(",diverged"), "{summary}");
}

#[test]
fn an_untrained_network_is_at_chance() {
    let test_set = synthetic::bars(1000, 6, 10, Split::Test, 3).unwrap();
    for routing in RoutingKind::ALL {
        let cfg = tiny_config(routing, 3);
        let params = ParamStore::<f32>::init(&cfg).unwrap();
        let acc = evaluate(&CapsNet::new(cfg).unwrap(), &params, &test_set, 100).unwrap();
        assert!((acc - 0.1).abs() <= 0.05, "{routing}: {acc}");
    }
}

#[test]
fn training_is_bit_reproducible() {
    let (train_set, test_set) = bars().unwrap();
    for routing in RoutingKind::ALL {
        let cfg = tiny_config(routing, 4);
        let a = train(&cfg, &train_set, &test_set, &TrainOptions::default(), |_| {}).unwrap();
        let b = train(&cfg, &train_set, &test_set, &TrainOptions::default(), |_| {}).unwrap();
        assert_eq!(a.record.epochs, b.record.epochs, "{routing}");
        assert_eq!(a.params, b.params, "{routing}");
        let mut other = cfg.clone();
        other.seed = 1;
        let c = train(&other, &train_set, &test_set, &TrainOptions::default(), |_| {}).unwrap();
        assert_ne!(a.params, c.params, "{routing}");
    }
}

#[test]
fn mismatched_data_is_a_configuration_error() {
    let cfg = tiny_config(RoutingKind::Rba, 3);
    let four = synthetic::bars(20, 6, 4, Split::Train, 0).unwrap();
    let err = train(&cfg, &four, &four, &TrainOptions::default(), |_| {}).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}
