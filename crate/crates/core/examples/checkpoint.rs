//! Saves a freshly initialized model, loads it back and evaluates it: an
//! untrained network sits near chance.
//!
//!     cargo run --release --example checkpoint

use rescaps::data::{synthetic, DatasetId, Split};
use rescaps::experiment::evaluate;
use rescaps::layers::{load_checkpoint, save_checkpoint, Architecture, CapsNet, Checkpoint, ModelConfig, ParamStore};
use rescaps::routing::RoutingKind;

fn main() -> rescaps::Result<()> {
    let mut config = ModelConfig::new(DatasetId::Mnist, RoutingKind::Em, 4, true);
    config.architecture = Architecture::tiny(10, 1);
    let params = ParamStore::init(&config)?;
    let path = std::env::temp_dir().join(format!("rescaps-example-{}.ckpt", std::process::id()));
    save_checkpoint(&path, &Checkpoint { config: config.clone(), params, epoch: 0 })?;
    let loaded = load_checkpoint(&path)?;
    println!(
        "{}: {} parameter tensors, {} values, {} bytes",
        path.display(),
        loaded.params.len(),
        loaded.params.size(),
        std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0)
    );
    let test = synthetic::bars(500, 6, 10, Split::Test, 2)?;
    let acc = evaluate(&CapsNet::new(loaded.config)?, &loaded.params, &test, 100)?;
    println!("untrained accuracy on 500 synthetic images: {acc:.3}");
    std::fs::remove_file(&path).ok();
    Ok(())
}
