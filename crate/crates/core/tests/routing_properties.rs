//! Routing invariants over random instances.

use proptest::prelude::*;

use rescaps::routing::{
    em_route, rba_route, sda_route, Capsules, EmParams, LambdaSchedule, RoutingKind, RoutingTrace, EM_VARIANCE_FLOOR,
};
use rescaps::tensor::{Graph, Tensor};

const CASES: u32 = 1000;

#[derive(Debug, Clone)]
struct Case {
    n: usize,
    m: usize,
    d: usize,
    iters: usize,
    votes: Vec<f64>,
    bias: Vec<f64>,
    acts: Vec<f64>,
    betas: Vec<f64>,
}

fn case(min_parents: usize) -> impl Strategy<Value = Case> {
    (1usize..=5, min_parents..=4usize, 1usize..=4, 1usize..=3).prop_flat_map(|(n, m, d, iters)| {
        (
            prop::collection::vec(-2.0f64..2.0, n * m * d),
            prop::collection::vec(-0.3f64..0.3, m * d),
            prop::collection::vec(0.01f64..1.0, n),
            prop::collection::vec(-1.0f64..1.0, 2 * m),
        )
            .prop_map(move |(votes, bias, acts, betas)| Case {
                n,
                m,
                d,
                iters,
                votes,
                bias,
                acts,
                betas,
            })
    })
}

/// Runs `kind` on `case`, returning poses, activations and the trace.
fn route(kind: RoutingKind, c: &Case) -> (Vec<f64>, Vec<f64>, RoutingTrace<f64>) {
    let mut g = Graph::new();
    let votes = g.constant(Tensor::new(vec![1, c.n, c.m, c.d], c.votes.clone()).unwrap()).unwrap();
    let bias = g.constant(Tensor::new(vec![c.m, c.d], c.bias.clone()).unwrap()).unwrap();
    let acts = g.constant(Tensor::new(vec![1, c.n, 1], c.acts.clone()).unwrap()).unwrap();
    let mut trace = RoutingTrace::default();
    let caps: Capsules = match kind {
        RoutingKind::Rba => rba_route(&mut g, votes, bias, c.iters, Some(&mut trace)),
        RoutingKind::Sda => sda_route(&mut g, acts, votes, bias, c.iters, Some(&mut trace)),
        RoutingKind::Em => {
            let params = EmParams {
                beta_a: g.constant(Tensor::new(vec![c.m], c.betas[..c.m].to_vec()).unwrap()).unwrap(),
                beta_u: g.constant(Tensor::new(vec![c.m], c.betas[c.m..].to_vec()).unwrap()).unwrap(),
                lambda: LambdaSchedule::default(),
            };
            em_route(&mut g, acts, votes, bias, &params, c.iters, Some(&mut trace))
        }
    }
    .unwrap();
    (g.value(caps.poses).data().to_vec(), g.value(caps.activations).data().to_vec(), trace)
}

fn permute_parents(c: &Case, perm: &[usize]) -> Case {
    let mut p = c.clone();
    for i in 0..c.n {
        for (j_new, &j_old) in perm.iter().enumerate() {
            for k in 0..c.d {
                p.votes[(i * c.m + j_new) * c.d + k] = c.votes[(i * c.m + j_old) * c.d + k];
            }
        }
    }
    for (j_new, &j_old) in perm.iter().enumerate() {
        for k in 0..c.d {
            p.bias[j_new * c.d + k] = c.bias[j_old * c.d + k];
        }
        p.betas[j_new] = c.betas[j_old];
        p.betas[c.m + j_new] = c.betas[c.m + j_old];
    }
    p
}

fn reverse_children(c: &Case) -> Case {
    let mut p = c.clone();
    let row = c.m * c.d;
    for i in 0..c.n {
        let src = c.n - 1 - i;
        p.votes[i * row..(i + 1) * row].copy_from_slice(&c.votes[src * row..(src + 1) * row]);
        p.acts[i] = c.acts[src];
    }
    p
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(CASES))]

    #[test]
    fn couplings_are_normalized_over_parents(c in case(2)) {
        for kind in RoutingKind::ALL {
            let (_, _, trace) = route(kind, &c);
            for couplings in &trace.couplings {
                for row in couplings.data().chunks(c.m) {
                    let s: f64 = row.iter().sum();
                    prop_assert!((s - 1.0).abs() < 1e-5, "{kind}: sum {s}");
                    prop_assert!(row.iter().all(|&v| v >= 0.0));
                }
            }
        }
    }

    #[test]
    fn squashed_parents_are_shorter_than_one(c in case(2), scale in 0.0f64..1e3) {
        let big = Case { votes: c.votes.iter().map(|v| v * scale).collect(), ..c.clone() };
        for kind in [RoutingKind::Rba, RoutingKind::Sda] {
            let (poses, _, _) = route(kind, &big);
            for v in poses.chunks(c.d) {
                let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                prop_assert!(len < 1.0, "{kind}: |v| = {len}");
            }
        }
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::new(vec![c.n * c.m, c.d], big.votes.clone()).unwrap()).unwrap();
        let s = g.squash(x, 1).unwrap();
        for v in g.value(s).data().chunks(c.d) {
            prop_assert!(v.iter().map(|x| x * x).sum::<f64>().sqrt() < 1.0);
        }
    }

    #[test]
    fn sda_caps_votes_and_prefers_near_parents(c in case(2)) {
        let (poses, _, trace) = route(RoutingKind::Sda, &c);
        let capped = trace.capped_votes.as_ref().unwrap().data().to_vec();
        for i in 0..c.n {
            for j in 0..c.m {
                let at = (i * c.m + j) * c.d;
                let u = &c.votes[at..at + c.d];
                let v = &capped[at..at + c.d];
                let len = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
                prop_assert!(len(v) <= c.acts[i] + 1e-6);
                prop_assert!(len(v) <= len(u) + 1e-9);
                // same direction
                let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
                prop_assert!(dot >= -1e-12);
            }
        }
        prop_assert!(trace.scales.iter().all(|t| t.data().iter().all(|&s| s < 0.0)));
        let logits = trace.logits.last().unwrap().data();
        for i in 0..c.n {
            let dist: Vec<f64> = (0..c.m)
                .map(|j| {
                    let at = (i * c.m + j) * c.d;
                    let diff: f64 = (0..c.d).map(|k| (capped[at + k] - poses[j * c.d + k]).powi(2)).sum();
                    (diff + 1e-7).sqrt()
                })
                .collect();
            for a in 0..c.m {
                for b in 0..c.m {
                    if dist[a] + 1e-9 < dist[b] {
                        prop_assert!(logits[i * c.m + a] > logits[i * c.m + b]);
                    }
                }
            }
        }
    }

    #[test]
    fn em_variances_respect_the_floor(c in case(1)) {
        let (_, acts, trace) = route(RoutingKind::Em, &c);
        for var in &trace.variances {
            prop_assert!(var.data().iter().all(|&v| v >= EM_VARIANCE_FLOOR));
        }
        prop_assert!(acts.iter().all(|&a| (0.0..=1.0).contains(&a)));
    }

    #[test]
    fn routing_is_permutation_equivariant(c in case(2), rot in 1usize..4) {
        let perm: Vec<usize> = (0..c.m).map(|j| (j + rot) % c.m).collect();
        let permuted = permute_parents(&c, &perm);
        let reversed = reverse_children(&c);
        for kind in RoutingKind::ALL {
            let (poses, acts, _) = route(kind, &c);
            let (p_poses, p_acts, _) = route(kind, &permuted);
            for (j_new, &j_old) in perm.iter().enumerate() {
                prop_assert!(close(&p_poses[j_new * c.d..(j_new + 1) * c.d], &poses[j_old * c.d..(j_old + 1) * c.d], 1e-9));
                prop_assert!((p_acts[j_new] - acts[j_old]).abs() < 1e-9);
            }
            let (r_poses, r_acts, _) = route(kind, &reversed);
            prop_assert!(close(&r_poses, &poses, 1e-9), "{kind}: child order changed the output");
            prop_assert!(close(&r_acts, &acts, 1e-9));
        }
    }

    #[test]
    fn single_iteration_rba_couples_uniformly(c in case(1)) {
        let one = Case { iters: 1, ..c.clone() };
        let (poses, _, trace) = route(RoutingKind::Rba, &one);
        prop_assert_eq!(trace.couplings.len(), 1);
        prop_assert!(trace.couplings[0].data().iter().all(|&v| (v - 1.0 / c.m as f64).abs() < 1e-12));
        // parent j = squash(mean vote + bias)
        for j in 0..c.m {
            let s: Vec<f64> = (0..c.d)
                .map(|k| (0..c.n).map(|i| c.votes[(i * c.m + j) * c.d + k]).sum::<f64>() / c.m as f64 + c.bias[j * c.d + k])
                .collect();
            let n2: f64 = s.iter().map(|v| v * v).sum();
            let f = (n2 + 1e-7).sqrt() / (1.0 + n2);
            let want: Vec<f64> = s.iter().map(|v| v * f).collect();
            prop_assert!(close(&poses[j * c.d..(j + 1) * c.d], &want, 1e-9));
        }
    }
}

/// Every property, for the acceptance suite.
#[allow(dead_code)]
pub const ALL: &[(&str, fn())] = &[
    ("normalization", couplings_are_normalized_over_parents),
    ("squash bound", squashed_parents_are_shorter_than_one),
    ("SDA capping", sda_caps_votes_and_prefers_near_parents),
    ("EM variance floor", em_variances_respect_the_floor),
    ("equivariance", routing_is_permutation_equivariant),
    ("RBA r=1", single_iteration_rba_couples_uniformly),
];
