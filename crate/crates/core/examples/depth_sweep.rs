//! A miniature depth sweep on synthetic data: results.csv, summary.csv and
//! plot series, resumed on a second call.
//!
//!     cargo run --release --example depth_sweep -- [out-dir]

use std::path::PathBuf;

use rescaps::data::{synthetic, DatasetId, Split};
use rescaps::experiment::{plotdata, run_sweep_with, Settings, SkipAxis, SweepSpec, TrainOptions};
use rescaps::layers::Architecture;
use rescaps::routing::RoutingKind;

fn main() -> rescaps::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("rescaps-sweep"));
    let spec = SweepSpec {
        datasets: vec![DatasetId::Mnist],
        routings: vec![RoutingKind::Rba, RoutingKind::Sda],
        depths: vec![3, 5, 7],
        skips: SkipAxis::Both,
        seeds: vec![0],
        template: Settings { epochs: Some(3), batch_size: Some(32), learning_rate: Some(1e-2), ..Settings::default() },
        train_limit: None,
        test_limit: None,
    };
    let tiny = |_| Architecture::tiny(4, 1);
    let load = |_| Ok((synthetic::bars(400, 8, 4, Split::Train, 0)?, synthetic::bars(100, 8, 4, Split::Test, 0)?));
    let first = run_sweep_with(&spec, &out, &TrainOptions::default(), Some(&tiny), load)?;
    println!("ran {} runs ({} diverged)", first.completed.len() + first.diverged.len(), first.diverged.len());
    let again = run_sweep_with(&spec, &out, &TrainOptions::default(), Some(&tiny), load)?;
    println!("second call resumed {} runs", again.resumed.len());
    print!("{}", std::fs::read_to_string(&first.summary).map_err(|e| rescaps::Error::io(&first.summary, e))?);
    for s in plotdata(&first.results, &out.join("plots"))? {
        println!("{}: {:?}", s.file.display(), s.points);
    }
    Ok(())
}
