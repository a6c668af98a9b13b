//! Trains a tiny network on synthetic bar images with each router. Runs in
//! seconds and needs no dataset files.
//!
//!     cargo run --release --example train_synthetic

use rescaps::data::{synthetic, DatasetId, Split};
use rescaps::experiment::{train, TrainOptions};
use rescaps::layers::{Architecture, ModelConfig};
use rescaps::routing::RoutingKind;

fn main() -> rescaps::Result<()> {
    let train_set = synthetic::bars(600, 8, 4, Split::Train, 0)?;
    let test_set = synthetic::bars(200, 8, 4, Split::Test, 0)?;
    for routing in RoutingKind::ALL {
        let mut cfg = ModelConfig::new(DatasetId::Mnist, routing, 4, true);
        cfg.architecture = Architecture::tiny(4, 1);
        cfg.batch_size = Some(32);
        cfg.epochs = 5;
        cfg.learning_rate = 1e-2;
        let record = train(&cfg, &train_set, &test_set, &TrainOptions::default(), |m| {
            println!("  {routing} epoch {}: loss {:.4} test acc {:.3}", m.epoch, m.train_loss, m.test_accuracy);
        })?
        .record;
        println!("{}: final {:.3} in {:.1}s", record.run_id, record.final_test_accuracy.unwrap_or(f64::NAN), record.wall_time_secs);
    }
    Ok(())
}
