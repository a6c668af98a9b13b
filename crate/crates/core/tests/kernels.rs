//! Fast kernels against naive loop oracles.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rescaps::tensor::{kernels, Tensor};

fn random(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor<f64> {
    let n = dims.iter().product();
    Tensor::new(dims.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Six nested loops over batch, output rows/columns, kernel rows/columns
/// and input channels.
fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, stride: usize) -> Vec<f64> {
    let [n, h, wd, cin] = x.dims().try_into().unwrap();
    let [k, _, _, cout] = w.dims().try_into().unwrap();
    let (oh, ow) = ((h - k) / stride + 1, (wd - k) / stride + 1);
    let mut out = vec![0.0; n * oh * ow * cout];
    for s in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for co in 0..cout {
                    let mut acc = b.data()[co];
                    for ky in 0..k {
                        for kx in 0..k {
                            for ci in 0..cin {
                                acc += x.at(&[s, oy * stride + ky, ox * stride + kx, ci]) * w.at(&[ky, kx, ci, co]);
                            }
                        }
                    }
                    out[((s * oh + oy) * ow + ox) * cout + co] = acc;
                }
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv2d_matches_naive_loops(
        seed in any::<u64>(),
        n in 1usize..3,
        h in 3usize..10,
        w in 3usize..10,
        cin in 1usize..4,
        cout in 1usize..4,
        k in 1usize..4,
        stride in 1usize..3,
    ) {
        prop_assume!(k <= h && k <= w);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[n, h, w, cin]);
        let wt = random(&mut rng, &[k, k, cin, cout]);
        let b = random(&mut rng, &[cout]);
        let (out, _) = kernels::conv2d_forward(&x, &wt, &b, stride).unwrap();
        prop_assert!(max_diff(out.data(), &naive_conv(&x, &wt, &b, stride)) < 1e-5);
    }

    #[test]
    fn votes_match_triple_loop(seed in any::<u64>(), b in 1usize..3, n in 1usize..5, m in 1usize..4, din in 1usize..5, dout in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random(&mut rng, &[b, n, din]);
        let w = random(&mut rng, &[n, m, dout, din]);
        let votes = kernels::capsule_votes(&u, &w).unwrap();
        prop_assert_eq!(votes.dims(), &[b, n, m, dout]);
        for s in 0..b {
            for i in 0..n {
                for j in 0..m {
                    for r in 0..dout {
                        let want: f64 = (0..din).map(|c| w.at(&[i, j, r, c]) * u.at(&[s, i, c])).sum();
                        prop_assert!((votes.at(&[s, i, j, r]) - want).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn fused_routing_kernels_match_loops(seed in any::<u64>(), b in 1usize..3, n in 1usize..5, m in 1usize..4, d in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random(&mut rng, &[b, n, m, 1]);
        let u = random(&mut rng, &[b, n, m, d]);
        let v = random(&mut rng, &[b, 1, m, d]);
        let s = kernels::weighted_sum(&c, &u).unwrap();
        let a = kernels::agreement(&u, &v).unwrap();
        let dist = kernels::pair_distance(&u, &v, 1e-7).unwrap();
        for q in 0..b {
            for j in 0..m {
                for k in 0..d {
                    let want: f64 = (0..n).map(|i| c.at(&[q, i, j, 0]) * u.at(&[q, i, j, k])).sum();
                    prop_assert!((s.at(&[q, 0, j, k]) - want).abs() < 1e-12);
                }
                for i in 0..n {
                    let dot: f64 = (0..d).map(|k| u.at(&[q, i, j, k]) * v.at(&[q, 0, j, k])).sum();
                    let sq: f64 = (0..d).map(|k| (u.at(&[q, i, j, k]) - v.at(&[q, 0, j, k])).powi(2)).sum();
                    prop_assert!((a.at(&[q, i, j, 0]) - dot).abs() < 1e-12);
                    prop_assert!((dist.at(&[q, i, j, 0]) - (sq + 1e-7).sqrt()).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn matmul_matches_loops_with_transposes(seed in any::<u64>(), p in 1usize..6, q in 1usize..6, r in 1usize..6, ta: bool, tb: bool) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&mut rng, &if ta { [q, p] } else { [p, q] });
        let b = random(&mut rng, &if tb { [r, q] } else { [q, r] });
        let out = kernels::matmul(&a, &b, ta, tb).unwrap();
        for i in 0..p {
            for j in 0..r {
                let want: f64 = (0..q)
                    .map(|k| {
                        let x = if ta { a.at(&[k, i]) } else { a.at(&[i, k]) };
                        let y = if tb { b.at(&[j, k]) } else { b.at(&[k, j]) };
                        x * y
                    })
                    .sum();
                prop_assert!((out.at(&[i, j]) - want).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn f32_conv_agrees_with_f64_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&mut rng, &[2, 12, 12, 3]);
    let w = random(&mut rng, &[5, 5, 3, 8]);
    let b = random(&mut rng, &[8]);
    let (out, _) = kernels::conv2d_forward(&x.cast::<f32>(), &w.cast::<f32>(), &b.cast::<f32>(), 2).unwrap();
    let want = naive_conv(&x, &w, &b, 2);
    let got: Vec<f64> = out.data().iter().map(|&v| v as f64).collect();
    assert!(max_diff(&got, &want) < 1e-5);
}
