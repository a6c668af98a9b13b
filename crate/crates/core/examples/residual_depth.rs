//! Prints the layer plan of a deep network and compares class-capsule
//! lengths of freshly initialized networks with and without skips as the
//! depth grows.
//!
//!     cargo run --release --example residual_depth

use rescaps::data::{synthetic, DatasetId, Split};
use rescaps::experiment::make_batch;
use rescaps::data::AugmentConfig;
use rescaps::layers::{Architecture, CapsNet, Mask, ModelConfig, ParamStore};
use rescaps::routing::RoutingKind;
use rescaps::tensor::Graph;

fn mean_class_length(depth: usize, skip: bool) -> rescaps::Result<f32> {
    let mut cfg = ModelConfig::new(DatasetId::Mnist, RoutingKind::Rba, depth, skip);
    cfg.architecture = Architecture::tiny(10, 1);
    let net = CapsNet::new(cfg.clone())?;
    let params = ParamStore::<f32>::init(&cfg)?;
    let data = synthetic::bars(8, 6, 10, Split::Test, 0)?;
    let batch = make_batch(&data, &(0..8).collect::<Vec<_>>(), &AugmentConfig::none(6), None)?;
    let mut g = Graph::new();
    let p = params.bind(&mut g, false)?;
    let x = g.constant(batch.inputs)?;
    let out = net.forward(&mut g, &p, x, &Mask::None)?;
    let a = g.value(out.activations);
    Ok(a.sum() / a.len() as f32)
}

fn main() -> rescaps::Result<()> {
    let cfg = ModelConfig::new(DatasetId::Mnist, RoutingKind::Rba, 7, true);
    for layer in cfg.plan()? {
        let inner = if layer.inner.is_empty() { String::new() } else { format!(" wraps {:?}", layer.inner) };
        println!(
            "{:<16} {:?}: {}x{} -> {}x{}{inner}",
            layer.name, layer.kind, layer.in_count, layer.in_dim, layer.out_count, layer.out_dim
        );
    }
    println!("\ndepth  mean class length (no skip / skip)");
    for depth in [3, 5, 7, 9, 11, 13] {
        println!("{depth:>5}  {:.4} / {:.4}", mean_class_length(depth, false)?, mean_class_length(depth, true)?);
    }
    Ok(())
}
