//! Scaled MNIST run: the full architecture on a training subset.
//!
//!     cargo run --release --example train_mnist -- [data-dir] [routing] [depth] [skip|noskip] [epochs] [train-limit]
//!
//! Defaults: data, rba, 3, noskip, 1, 2000.

use std::path::PathBuf;

use rescaps::data::{Dataset, DatasetId, Split};
use rescaps::experiment::{train, TrainOptions};
use rescaps::layers::ModelConfig;
use rescaps::routing::RoutingKind;
use rescaps::Error;

fn arg<T: std::str::FromStr>(args: &[String], i: usize, default: T) -> rescaps::Result<T> {
    match args.get(i) {
        Some(s) => s.parse().map_err(|_| Error::Config(format!("cannot parse argument {i}: `{s}`"))),
        None => Ok(default),
    }
}

fn main() -> rescaps::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let dir: PathBuf = arg(&args, 0, PathBuf::from("data"))?;
    let routing: RoutingKind = arg(&args, 1, RoutingKind::Rba)?;
    let depth = arg(&args, 2, 3)?;
    let skip = args.get(3).map_or(false, |s| s == "skip");
    let mut cfg = ModelConfig::new(DatasetId::Mnist, routing, depth, skip);
    cfg.epochs = arg(&args, 4, 1)?;
    let train_set = Dataset::load(&dir, DatasetId::Mnist, Split::Train)?.truncate(arg(&args, 5, 2000)?);
    let test_set = Dataset::load(&dir, DatasetId::Mnist, Split::Test)?.truncate(1000);
    let opts = TrainOptions { verbose: true, ..TrainOptions::default() };
    let record = train(&cfg, &train_set, &test_set, &opts, |_| {})?.record;
    println!("{}", serde_json::to_string_pretty(&record.epochs).unwrap_or_default());
    Ok(())
}
