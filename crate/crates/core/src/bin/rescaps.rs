use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rescaps::data::{synthetic, CanonicalTensor, Dataset, DatasetId, Split};
use rescaps::experiment::{
    evaluate, gradcheck, gradcheck_config, plotdata, run_id, run_sweep, train, GradcheckReport, RunRecord,
    RunStatus, Settings, SkipAxis, TrainOptions, GRADCHECK_TOLERANCE,
};
use rescaps::layers::{
    load_checkpoint, routed_layer_count, save_checkpoint, Architecture, CapsNet, Checkpoint, ModelConfig, MAX_DEPTH,
    MIN_DEPTH,
};
use rescaps::routing::RoutingKind;
use rescaps::{Error, Result};

const DATA_DIR_ENV: &str = "RESCAPS_DATA_DIR";

#[derive(Parser)]
#[command(name = "rescaps", version, about = "Deep capsule networks with residual connections")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write its record, metrics and checkpoint.
    Train(RunArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Train every combination of the sweep axes.
    Sweep(SweepArgs),
    /// Finite-difference gradient check of a tiny network per router.
    Gradcheck(GradcheckArgs),
    /// Turn a sweep's results.csv into accuracy-versus-depth series.
    Plotdata(PlotArgs),
    /// Quick end-to-end check that needs no dataset files.
    Selftest,
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    /// Flat key = value file; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<DatasetId>,
    #[arg(long)]
    routing: Option<RoutingKind>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long, overrides_with = "no_skip")]
    skip: bool,
    #[arg(long, overrides_with = "skip")]
    no_skip: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset directory (default: $RESCAPS_DATA_DIR, then ./data).
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    recon_weight: Option<f64>,
    /// Use only the first N training samples.
    #[arg(long)]
    train_limit: Option<usize>,
    /// Use only the first N test samples.
    #[arg(long)]
    test_limit: Option<usize>,
    /// No per-epoch progress on stderr.
    #[arg(long)]
    quiet: bool,
}

impl RunArgs {
    fn settings(&self) -> Result<Settings> {
        let file = match &self.config {
            Some(path) => Settings::from_file(path)?,
            None => Settings::default(),
        };
        let flags = Settings {
            dataset: self.dataset,
            routing: self.routing,
            depth: self.depth,
            skip: match (self.skip, self.no_skip) {
                (true, _) => Some(true),
                (_, true) => Some(false),
                _ => None,
            },
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            data_dir: self.data_dir.clone(),
            out: self.out.clone(),
            learning_rate: self.lr,
            recon_weight: self.recon_weight,
            train_limit: self.train_limit,
            test_limit: self.test_limit,
            ..Settings::default()
        };
        Ok(file.merge(flags))
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset to evaluate on (default: the one the model was trained on).
    #[arg(long)]
    dataset: Option<DatasetId>,
    #[arg(long, default_value = "test", value_parser = ["train", "test"])]
    split: String,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value_t = 100)]
    batch_size: usize,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated datasets.
    #[arg(long)]
    datasets: Option<String>,
    /// Comma-separated routers.
    #[arg(long)]
    routings: Option<String>,
    /// Inclusive range `a-b` or a comma-separated list.
    #[arg(long)]
    depths: Option<String>,
    /// on, off or both.
    #[arg(long)]
    skips: Option<SkipAxis>,
    /// Comma-separated seeds.
    #[arg(long)]
    seeds: Option<String>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Check one router only.
    #[arg(long)]
    routing: Option<RoutingKind>,
    #[arg(long, default_value_t = 3)]
    depth: usize,
    #[arg(long)]
    skip: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PlotArgs {
    /// A sweep's results.csv.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "plots")]
    out: PathBuf,
}

fn data_dir(explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data"))
}

fn load_split(dir: &Path, id: DatasetId, split: Split, limit: Option<usize>) -> Result<Dataset> {
    let data = Dataset::load(dir, id, split)?;
    Ok(match limit {
        Some(n) => data.truncate(n),
        None => data,
    })
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let json = serde_json::to_vec_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

fn write_metrics(path: &Path, record: &RunRecord) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["epoch", "train_loss", "train_acc", "test_acc"]).map_err(csv_err)?;
    for e in &record.epochs {
        w.write_record([
            e.epoch.to_string(),
            e.train_loss.to_string(),
            e.train_accuracy.to_string(),
            e.test_accuracy.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn cmd_train(args: &RunArgs) -> Result<ExitCode> {
    let settings = args.settings()?;
    let config = settings.model_config()?;
    let dir = data_dir(settings.data_dir.as_deref());
    let train_set = load_split(&dir, config.dataset, Split::Train, settings.train_limit)?;
    let test_set = load_split(&dir, config.dataset, Split::Test, settings.test_limit)?;
    let out = settings.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(run_id(&config)));
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let opts = TrainOptions {
        verbose: !args.quiet,
        ..TrainOptions::default()
    };
    let outcome = train(&config, &train_set, &test_set, &opts, |_| {})?;
    let record = &outcome.record;
    write_json(&out.join("record.json"), record)?;
    write_metrics(&out.join("metrics.csv"), record)?;
    save_checkpoint(
        &out.join("model.ckpt"),
        &Checkpoint {
            config: config.clone(),
            params: outcome.params,
            epoch: record.epochs.len(),
        },
    )?;
    match record.status {
        RunStatus::Completed => {
            println!(
                "{}: final test accuracy {:.4} (best {:.4} at epoch {}), {:.0}s",
                record.run_id,
                record.final_test_accuracy.unwrap_or(f64::NAN),
                record.best_test_accuracy.unwrap_or(f64::NAN),
                record.best_epoch.unwrap_or(0),
                record.wall_time_secs
            );
            Ok(ExitCode::SUCCESS)
        }
        RunStatus::Diverged => {
            eprintln!(
                "{}: diverged ({})",
                record.run_id,
                record.failure.as_deref().unwrap_or("non-finite loss")
            );
            Ok(ExitCode::from(3))
        }
    }
}

fn cmd_eval(args: &EvalArgs) -> Result<ExitCode> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let id = args.dataset.unwrap_or(ckpt.config.dataset);
    let split = if args.split == "train" { Split::Train } else { Split::Test };
    let data = load_split(&data_dir(args.data_dir.as_deref()), id, split, args.limit)?;
    let net = CapsNet::new(ckpt.config.clone())?;
    let accuracy = evaluate(&net, &ckpt.params, &data, args.batch_size)?;
    println!("{id} {}: accuracy {accuracy:.4} over {} images", split.as_str(), data.len());
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(args: &SweepArgs) -> Result<ExitCode> {
    use rescaps::experiment::{parse_list, parse_range};
    let mut settings = args.run.settings()?;
    let axes = Settings {
        datasets: args.datasets.as_deref().map(|s| parse_list("datasets", s)).transpose()?,
        routings: args.routings.as_deref().map(|s| parse_list("routings", s)).transpose()?,
        depths: args.depths.as_deref().map(|s| parse_range("depths", s)).transpose()?,
        skips: args.skips,
        seeds: args.seeds.as_deref().map(|s| parse_list("seeds", s)).transpose()?,
        ..Settings::default()
    };
    settings = settings.merge(axes);
    let spec = settings.sweep_spec()?;
    let out = settings.out.clone().unwrap_or_else(|| PathBuf::from("sweep"));
    let opts = TrainOptions {
        verbose: !args.run.quiet,
        ..TrainOptions::default()
    };
    let outcome = run_sweep(&spec, &data_dir(settings.data_dir.as_deref()), &out, &opts)?;
    println!(
        "{} completed, {} diverged, {} already done, {} failed; results in {}",
        outcome.completed.len(),
        outcome.diverged.len(),
        outcome.resumed.len(),
        outcome.failed.len(),
        outcome.results.display()
    );
    for (id, err) in &outcome.failed {
        eprintln!("{id}: {err}");
    }
    Ok(match outcome.failed.first() {
        Some((_, err)) => ExitCode::from(err.exit_code() as u8),
        None => ExitCode::SUCCESS,
    })
}

fn print_gradcheck(report: &GradcheckReport) {
    println!(
        "{} depth {}{}: max relative error {:.3e} ({}, {:.1}s)",
        report.routing,
        report.depth,
        if report.use_skip { " skip" } else { "" },
        report.max_rel,
        if report.passed { "pass" } else { "FAIL" },
        report.elapsed.as_secs_f64()
    );
    for g in &report.groups {
        println!("  {:<16} {:>6} elements  rel {:.3e}  abs {:.3e}", g.name, g.elements, g.max_rel, g.max_abs);
    }
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<ExitCode> {
    let routers = args.routing.map_or(RoutingKind::ALL.to_vec(), |r| vec![r]);
    let mut ok = true;
    for routing in routers {
        let mut cfg = gradcheck_config(routing, args.depth, args.skip);
        cfg.seed = args.seed;
        cfg.validate()?;
        let report = gradcheck(&cfg, None)?;
        print_gradcheck(&report);
        ok &= report.passed;
    }
    println!("tolerance {GRADCHECK_TOLERANCE:e}: {}", if ok { "all passed" } else { "FAILED" });
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn cmd_plotdata(args: &PlotArgs) -> Result<ExitCode> {
    let series = plotdata(&args.input, &args.out)?;
    for s in &series {
        println!("{}", s.file.display());
    }
    println!("{} series files, index in {}", series.len(), args.out.join("index.csv").display());
    Ok(ExitCode::SUCCESS)
}

fn check(name: &str, result: Result<bool>) -> bool {
    match result {
        Ok(true) => {
            println!("PASS {name}");
            true
        }
        Ok(false) => {
            println!("FAIL {name}");
            false
        }
        Err(e) => {
            println!("FAIL {name}: {e}");
            false
        }
    }
}

fn cmd_selftest() -> Result<ExitCode> {
    let mut ok = true;
    for routing in RoutingKind::ALL {
        ok &= check(&format!("gradcheck {routing}"), gradcheck(&gradcheck_config(routing, 3, false), None).map(|r| r.passed));
    }
    ok &= check(
        "gradcheck rba depth 5 with skip",
        gradcheck(&gradcheck_config(RoutingKind::Rba, 5, true), None).map(|r| r.passed),
    );
    ok &= check("layer plans", (|| {
        for routing in RoutingKind::ALL {
            for depth in MIN_DEPTH..=MAX_DEPTH {
                for skip in [false, true] {
                    let plan = ModelConfig::new(DatasetId::Mnist, routing, depth, skip).plan()?;
                    if routed_layer_count(&plan) != depth {
                        return Ok(false);
                    }
                }
            }
        }
        Ok(true)
    })());
    ok &= check("tiny training run", (|| {
        let mut cfg = ModelConfig::new(DatasetId::Mnist, RoutingKind::Rba, 4, true);
        cfg.architecture = Architecture::tiny(10, 1);
        cfg.batch_size = Some(16);
        cfg.epochs = 2;
        cfg.learning_rate = 1e-2;
        let train_set = synthetic::bars(64, 6, 10, Split::Train, 0)?;
        let test_set = synthetic::bars(32, 6, 10, Split::Test, 0)?;
        let record = train(&cfg, &train_set, &test_set, &TrainOptions::default(), |_| {})?.record;
        Ok(record.is_completed() && record.epochs.len() == 2 && record.epochs.iter().all(|e| e.train_loss.is_finite()))
    })());
    ok &= check("canonical container round trip", (|| {
        let t = CanonicalTensor::from_f32(vec![2, 3], &[0.0, 1.5, -2.0, 3.25, 1e-3, 7.0]);
        let path = std::env::temp_dir().join(format!("rescaps-selftest-{}.caps", std::process::id()));
        rescaps::data::write_canonical(&path, &t)?;
        let back = rescaps::data::read_canonical(&path);
        let _ = std::fs::remove_file(&path);
        Ok(back? == t)
    })());
    println!("{}", if ok { "selftest passed" } else { "selftest FAILED" });
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Plotdata(a) => cmd_plotdata(a),
        Command::Selftest => cmd_selftest(),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
