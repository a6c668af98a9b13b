//! Layer-plan audit and residual identity for every depth and router.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rescaps::data::DatasetId;
use rescaps::layers::{
    fc_capsule_layer, residual_block, routed_layer_count, Architecture, CapsNet, CapsuleLayerParams, LayerKind, Mask,
    ModelConfig, ParamStore, MAX_DEPTH, MIN_DEPTH,
};
use rescaps::routing::{Capsules, EmParams, LambdaSchedule, RoutingKind, ROUTING_ITERATIONS};
use rescaps::tensor::{Graph, Tensor};

fn tiny(routing: RoutingKind, depth: usize, skip: bool) -> ModelConfig {
    let mut cfg = ModelConfig::new(DatasetId::Mnist, routing, depth, skip);
    cfg.architecture = Architecture::tiny(10, 1);
    cfg
}

#[test]
fn plans_have_the_requested_depth_and_blocks() {
    for routing in RoutingKind::ALL {
        for depth in MIN_DEPTH..=MAX_DEPTH {
            for skip in [false, true] {
                let cfg = ModelConfig::new(DatasetId::Mnist, routing, depth, skip);
                let plan = cfg.plan().unwrap();
                let what = format!("{routing} d{depth} skip={skip}");
                assert_eq!(routed_layer_count(&plan), depth, "{what}");
                assert_eq!(plan.first().unwrap().kind, LayerKind::ConvStem, "{what}");
                assert_eq!(plan.last().unwrap().kind, LayerKind::Decoder, "{what}");
                assert!(plan.iter().filter(|l| l.is_routed()).all(|l| l.routing == Some(routing)
                    && l.iterations == ROUTING_ITERATIONS));
                let blocks: Vec<_> = plan.iter().filter(|l| l.kind == LayerKind::ResidualBlock).collect();
                let expected = if skip { (depth - 3) / 2 } else { 0 };
                assert_eq!(blocks.len(), expected, "{what}");
                for block in blocks {
                    // both inner layers exist, follow the block, and keep the shape
                    assert_eq!(block.inner.len(), 2);
                    let at = plan.iter().position(|l| l.name == block.name).unwrap();
                    assert_eq!(plan[at + 1].name, block.inner[0], "{what}");
                    assert_eq!(plan[at + 2].name, block.inner[1], "{what}");
                    for l in &plan[at + 1..at + 3] {
                        assert_eq!((l.in_count, l.in_dim), (l.out_count, l.out_dim));
                        assert_eq!((l.in_count, l.in_dim), (block.in_count, block.in_dim));
                    }
                }
                // consecutive layers chain
                let chain: Vec<_> = plan.iter().filter(|l| l.kind != LayerKind::ResidualBlock).collect();
                for pair in chain.windows(2).skip(1).take_while(|p| p[1].kind != LayerKind::Decoder) {
                    assert_eq!((pair[0].out_count, pair[0].out_dim), (pair[1].in_count, pair[1].in_dim), "{what}");
                }
            }
        }
    }
}

#[test]
fn parameter_layout_follows_the_plan() {
    for routing in RoutingKind::ALL {
        for depth in MIN_DEPTH..=MAX_DEPTH {
            let with = ParamStore::<f32>::init(&tiny(routing, depth, true)).unwrap();
            let without = ParamStore::<f32>::init(&tiny(routing, depth, false)).unwrap();
            // shortcuts add no parameters and do not change initialization
            assert_eq!(with, without, "{routing} d{depth}");
            let per_layer = if routing == RoutingKind::Em { 4 } else { 2 };
            assert_eq!(with.len(), 4 + per_layer * depth + 6, "{routing} d{depth}");
        }
    }
}

fn random_caps(g: &mut Graph<f64>, rng: &mut ChaCha8Rng, n: usize, d: usize) -> Capsules {
    let data = (0..2 * n * d).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let poses = g.constant(Tensor::new(vec![2, n, d], data).unwrap()).unwrap();
    Capsules::from_poses(g, poses).unwrap()
}

#[test]
fn zero_blocks_are_identity_maps() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for routing in RoutingKind::ALL {
        for depth in MIN_DEPTH..=MAX_DEPTH {
            let cfg = ModelConfig::new(DatasetId::Mnist, routing, depth, true);
            for block in cfg.plan().unwrap().iter().filter(|l| l.kind == LayerKind::ResidualBlock) {
                let (n, d) = (block.in_count, block.in_dim);
                let mut g = Graph::<f64>::new();
                let x = random_caps(&mut g, &mut rng, n, d);
                let params = CapsuleLayerParams {
                    weights: g.constant(Tensor::zeros(vec![n, n, d, d])).unwrap(),
                    bias: g.constant(Tensor::zeros(vec![n, d])).unwrap(),
                    em: Some(EmParams {
                        beta_a: g.constant(Tensor::zeros(vec![n])).unwrap(),
                        beta_u: g.constant(Tensor::zeros(vec![n])).unwrap(),
                        lambda: LambdaSchedule::default(),
                    }),
                };
                let h = fc_capsule_layer(&mut g, x, &params, routing, ROUTING_ITERATIONS).unwrap();
                let inner = fc_capsule_layer(&mut g, h, &params, routing, ROUTING_ITERATIONS).unwrap();
                let y = residual_block(&mut g, x, inner, routing).unwrap();
                assert_eq!(g.value(y.poses), g.value(x.poses), "{routing} d{depth} {}", block.name);
                if routing.length_activations() {
                    assert_eq!(g.value(y.activations), g.value(x.activations));
                }
            }
        }
    }
}

#[test]
fn zeroed_blocks_reduce_a_deep_network_to_the_shallow_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let input: Vec<f32> = (0..3 * 36).map(|_| rng.gen_range(-1.0..1.0)).collect();
    for routing in [RoutingKind::Rba, RoutingKind::Sda] {
        let shallow_cfg = tiny(routing, 3, true);
        let shallow_params = ParamStore::<f32>::init(&shallow_cfg).unwrap();
        for depth in [5, 7, 9] {
            let deep_cfg = tiny(routing, depth, true);
            let mut deep_params = ParamStore::<f32>::init(&deep_cfg).unwrap();
            for name in deep_params.names().to_vec() {
                let t = deep_params.get_mut(&name).unwrap();
                match shallow_params.get(&name) {
                    Some(src) => *t = src.clone(),
                    None => t.data_mut().iter_mut().for_each(|v| *v = 0.0),
                }
            }
            let run = |cfg: &ModelConfig, params: &ParamStore<f32>| {
                let net = CapsNet::new(cfg.clone()).unwrap();
                let mut g = Graph::new();
                let p = params.bind(&mut g, false).unwrap();
                let x = g.constant(Tensor::new(vec![3, 6, 6, 1], input.clone()).unwrap()).unwrap();
                let out = net.forward(&mut g, &p, x, &Mask::Predicted).unwrap();
                (g.value(out.activations).clone(), g.value(out.reconstruction.unwrap()).clone())
            };
            assert_eq!(run(&deep_cfg, &deep_params), run(&shallow_cfg, &shallow_params), "{routing} d{depth}");
        }
    }
}

#[allow(dead_code)]
pub const ALL: &[(&str, fn())] = &[
    ("plans", plans_have_the_requested_depth_and_blocks),
    ("parameters", parameter_layout_follows_the_plan),
    ("identity blocks", zero_blocks_are_identity_maps),
    ("deep reduces to shallow", zeroed_blocks_reduce_a_deep_network_to_the_shallow_one),
];
