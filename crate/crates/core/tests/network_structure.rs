//! Graph, observation-structure and certificate checks against independent
//! oracles.

#![allow(clippy::needless_range_loop)]

use fleet_observer::dynamics::ncv_block;
use fleet_observer::gain::{certify, closed_loop, gain_from_params, GainFamily};
use fleet_observer::harness::presets::preset;
use fleet_observer::harness::run::prepare_structure;
use fleet_observer::harness::validate_scenario;
use fleet_observer::matstat::linalg::{kronecker, spectral_radius, two_norm, Matrix, Vector};
use fleet_observer::matstat::rng::RngStream;
use fleet_observer::observer::innovate;
use fleet_observer::topology::{
    build_consensus_matrix, build_shared_observation, check_distributed_observability,
    check_observability_decomposed, diameter, erdos_renyi, is_strongly_connected, ConsensusRule,
};
use proptest::prelude::*;

/// Reachability by repeated boolean squaring of `I + A`.
fn closure(adj: &[Vec<bool>]) -> Vec<Vec<bool>> {
    let n = adj.len();
    let mut r: Vec<Vec<bool>> = (0..n).map(|i| (0..n).map(|j| i == j || adj[i][j]).collect()).collect();
    let mut len = 1;
    while len < n {
        let prev = r.clone();
        for i in 0..n {
            for j in 0..n {
                r[i][j] = (0..n).any(|k| prev[i][k] && prev[k][j]);
            }
        }
        len *= 2;
    }
    r
}

/// All-pairs shortest hops by Floyd–Warshall.
fn floyd_diameter(adj: &[Vec<bool>]) -> Option<usize> {
    let n = adj.len();
    let inf = usize::MAX / 4;
    let mut d: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 0 } else if adj[i][j] { 1 } else { inf }).collect())
        .collect();
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                d[i][j] = d[i][j].min(d[i][k] + d[k][j]);
            }
        }
    }
    let max = d.iter().flatten().copied().max().unwrap();
    (max < inf).then_some(max)
}

fn random_adj(n: usize, p: f64, seed: u64) -> Vec<Vec<bool>> {
    let mut rng = RngStream::new(seed);
    (0..n).map(|i| (0..n).map(|j| i != j && rng.bernoulli(p)).collect()).collect()
}

#[test]
fn erdos_renyi_connectivity_matches_closure() {
    let mut strong = 0;
    for seed in 0..40 {
        let adj = random_adj(25, 0.15, seed);
        let c = closure(&adj);
        let oracle = c.iter().all(|row| row.iter().all(|&b| b));
        assert_eq!(is_strongly_connected(&adj), oracle, "seed {seed}");
        assert_eq!(diameter(&adj), floyd_diameter(&adj), "seed {seed}");
        strong += oracle as usize;
    }
    // p = 0.15 on 25 nodes sits near the connectivity threshold: both
    // outcomes must be exercised.
    assert!(strong > 0 && strong < 40, "{strong}");
}

#[test]
fn erdos_renyi_with_required_strength() {
    let mut rng = RngStream::new(15);
    let net = erdos_renyi(25, 0.15, &mut rng, true, &ConsensusRule::Uniform).unwrap();
    let c = closure(&net.adjacency);
    assert!(c.iter().all(|row| row.iter().all(|&b| b)));
    assert!(floyd_diameter(&net.adjacency).is_some());
    let mut rng = RngStream::new(15);
    assert!(erdos_renyi(25, 0.0, &mut rng, true, &ConsensusRule::Uniform).is_err());
}

#[test]
fn dense_and_decomposed_certificates_agree() {
    let s = validate_scenario(&preset("fig1_4x4").unwrap()).unwrap();
    let (net, model, shared, report) = prepare_structure(&s).unwrap();
    let dense = check_distributed_observability(&net.w, &model.a(), &shared.d_c()).unwrap();
    let split = check_observability_decomposed(&net.w, &model.block, &shared).unwrap();
    assert_eq!(dense.rank, 32);
    assert_eq!(dense, split);
    assert_eq!(dense, report);

    // Remove the second HDV's sensors: both routes lose its 8 states.
    let sel: Vec<Vec<usize>> = shared.selectors.iter().map(|s| s.iter().copied().filter(|&c| c / 2 != 1).collect()).collect();
    let cut = build_shared_observation(&sel, &net.neighborhoods, shared.nm).unwrap();
    let dense = check_distributed_observability(&net.w, &model.a(), &cut.d_c()).unwrap();
    let split = check_observability_decomposed(&net.w, &model.block, &cut).unwrap();
    assert_eq!(dense, split);
    assert_eq!(dense.rank, 24);
    assert!(!dense.observable);
}

#[test]
fn d_matrices_from_c_blocks() {
    let s = validate_scenario(&preset("fault_cav2").unwrap()).unwrap();
    let (net, _, shared, _) = prepare_structure(&s).unwrap();
    let n = shared.n();
    let nm = shared.nm;
    let d_c = shared.d_c();
    let dbar = shared.dbar();
    let off = shared.row_offsets();
    for i in 0..n {
        let mut block = Matrix::zeros(nm, nm);
        for &j in &net.neighborhoods[i] {
            let c = shared.c_matrix(j);
            block += c.transpose() * &c;
        }
        assert_eq!(d_c.view((i * nm, i * nm), (nm, nm)), block);
        for j in 0..n {
            let rows = shared.selectors[j].len();
            let want = if net.neighborhoods[i].contains(&j) {
                shared.c_matrix(j).transpose()
            } else {
                Matrix::zeros(nm, rows)
            };
            assert_eq!(dbar.view((i * nm, off[j]), (nm, rows)), want);
        }
    }
    let mu: Vec<Vec<f64>> = shared
        .selectors
        .iter()
        .enumerate()
        .map(|(j, s)| (0..s.len()).map(|r| (j * 10 + r) as f64 * 0.5 - 3.0).collect())
        .collect();
    let stacked = Vector::from_iterator(off[n], mu.iter().flatten().copied());
    let dense = &dbar * stacked;
    for (i, v) in shared.apply_dbar(&mu).iter().enumerate() {
        assert_eq!(dense.rows(i * nm, nm).into_owned(), *v);
    }
}

#[test]
fn block_certificates_match_dense_closed_loop() {
    let s = validate_scenario(&preset("fig1_4x4").unwrap()).unwrap();
    let (net, model, shared, _) = prepare_structure(&s).unwrap();
    for g in [0.2, 0.5, 0.9] {
        let k = gain_from_params(GainFamily::Shared, &[g], &shared.counts, model.m());
        let (rho, beta) = certify(&net.w, &model.block, &k, &shared.counts).unwrap();
        let n = shared.n();
        let mut k_dense = Matrix::zeros(n * shared.nm, n * shared.nm);
        for i in 0..n {
            for c in 0..shared.nm {
                k_dense[(i * shared.nm + c, i * shared.nm + c)] = k[i][c];
            }
        }
        let a_hat = closed_loop(&net.w, &model.a(), &k_dense, &shared.d_c()).unwrap();
        // NCV closed loops carry near-defective eigenvalue pairs, whose
        // computed moduli move by about sqrt(machine eps).
        assert!((spectral_radius(&a_hat).unwrap() - rho).abs() < 1e-7);
        assert!((two_norm(&a_hat) - beta).abs() < 1e-9);
    }
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-2.0f64..2.0, rows * cols).prop_map(move |v| Matrix::from_row_slice(rows, cols, &v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn consensus_rows_sum_to_one(n in 2usize..12, p in 0.0f64..1.0, seed in any::<u64>(), mh in any::<bool>()) {
        let adj = random_adj(n, p, seed);
        let rule = if mh { ConsensusRule::MetropolisHastings } else { ConsensusRule::Uniform };
        let w = build_consensus_matrix(&adj, &rule).unwrap();
        for i in 0..n {
            prop_assert!((w.row(i).sum() - 1.0).abs() < 1e-12);
            prop_assert!(w[(i, i)] > 0.0);
            for j in 0..n {
                prop_assert!(w[(i, j)] >= 0.0);
                if i != j && !adj[i][j] {
                    prop_assert_eq!(w[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn spectral_radius_below_two_norm(m in matrix(5, 5)) {
        prop_assert!(spectral_radius(&m).unwrap() <= two_norm(&m) + 1e-9);
    }

    #[test]
    fn kronecker_mixed_product(a in matrix(2, 3), b in matrix(3, 2), c in matrix(3, 2), d in matrix(2, 3)) {
        let lhs = kronecker(&a, &b) * kronecker(&c, &d);
        let rhs = kronecker(&(&a * &c), &(&b * &d));
        prop_assert!((lhs - rhs).amax() < 1e-9);
    }

    #[test]
    fn innovation_is_affine_in_gain(g1 in 0.0f64..1.0, g2 in 0.0f64..1.0, t in 0.0f64..1.0, seed in any::<u64>()) {
        let adj = vec![vec![false, true, false], vec![false, false, true], vec![true, false, false]];
        let net = fleet_observer::topology::CavNetwork::from_adjacency(&adj, &ConsensusRule::Uniform).unwrap();
        let sel = vec![vec![0, 1], vec![2, 3], vec![0, 1, 2]];
        let shared = build_shared_observation(&sel, &net.neighborhoods, 4).unwrap();
        let mut rng = RngStream::new(seed);
        let priors: Vec<Vector> = (0..3).map(|_| Vector::from_fn(4, |_, _| rng.standard_normal())).collect();
        let ys: Vec<Vec<f64>> = sel.iter().map(|s| s.iter().map(|_| rng.standard_normal()).collect()).collect();
        let k = |g: f64| gain_from_params(GainFamily::Shared, &[g], &shared.counts, 2);
        let mix: Vec<Vec<f64>> = k(g1).iter().zip(k(g2)).map(|(a, b)| a.iter().zip(b).map(|(x, y)| t * x + (1.0 - t) * y).collect()).collect();
        let p1 = innovate(&priors, &ys, &shared, &k(g1)).unwrap();
        let p2 = innovate(&priors, &ys, &shared, &k(g2)).unwrap();
        let pm = innovate(&priors, &ys, &shared, &mix).unwrap();
        for i in 0..3 {
            let want = &p1[i] * t + &p2[i] * (1.0 - t);
            prop_assert!((&pm[i] - want).amax() < 1e-12);
        }
    }

    #[test]
    fn ncv_block_is_unit_upper_triangular(dt in 1e-3f64..1.0) {
        let a = ncv_block(dt).unwrap();
        prop_assert_eq!(a[(0, 0)], 1.0);
        prop_assert_eq!(a[(1, 1)], 1.0);
        prop_assert_eq!(a[(1, 0)], 0.0);
        prop_assert_eq!(a[(0, 1)], dt);
    }
}
