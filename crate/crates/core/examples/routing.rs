//! Routes one batch of random votes with each router and prints the final
//! couplings and parent capsule lengths.
//!
//!     cargo run --release --example routing

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use rescaps::routing::{em_route, rba_route, sda_route, EmParams, LambdaSchedule, RoutingKind, RoutingTrace};
use rescaps::tensor::{Graph, Tensor};

const CHILDREN: usize = 6;
const PARENTS: usize = 3;
const DIM: usize = 4;

fn main() -> rescaps::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let normal = Normal::new(0.0, 0.5).unwrap();
    let votes: Vec<f64> = (0..CHILDREN * PARENTS * DIM).map(|_| normal.sample(&mut rng)).collect();
    for routing in RoutingKind::ALL {
        let mut g = Graph::<f64>::new();
        let u = g.constant(Tensor::new(vec![1, CHILDREN, PARENTS, DIM], votes.clone())?)?;
        let bias = g.constant(Tensor::full(vec![PARENTS, DIM], 0.1))?;
        let acts = g.constant(Tensor::full(vec![1, CHILDREN, 1], 0.8))?;
        let mut trace = RoutingTrace::default();
        let caps = match routing {
            RoutingKind::Rba => rba_route(&mut g, u, bias, 3, Some(&mut trace))?,
            RoutingKind::Sda => sda_route(&mut g, acts, u, bias, 3, Some(&mut trace))?,
            RoutingKind::Em => {
                let params = EmParams {
                    beta_a: g.constant(Tensor::zeros(vec![PARENTS]))?,
                    beta_u: g.constant(Tensor::zeros(vec![PARENTS]))?,
                    lambda: LambdaSchedule::default(),
                };
                em_route(&mut g, acts, u, bias, &params, 3, Some(&mut trace))?
            }
        };
        println!("{routing}: parent activations {:.3?}", g.value(caps.activations).data());
        let last = trace.couplings.last().expect("three iterations");
        for i in 0..CHILDREN {
            let row = &last.data()[i * PARENTS..(i + 1) * PARENTS];
            println!("  child {i}: couplings {row:.3?} (sum {:.6})", row.iter().sum::<f64>());
        }
    }
    Ok(())
}
