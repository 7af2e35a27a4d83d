mod common;

use common::*;
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::Rng;
use sobl::ordinal_weights::{
    anova_f_test, group_mean_tau, kendall_tau, rank_correlation_weights, spearman_rho, tau_statistics,
    trend_test_weights, two_step_weights, RankCorrelation, TTestKind,
};
use sobl::simbench::{class_labels, generate_dataset, toy35_model};
use sobl::ordinal_weights::compute_weights;
use sobl::{compute_group_statistics, LabeledDataset, WeightMethod};

fn labeled(rng: &mut impl Rng, counts: &[usize], p: usize, shift: f64) -> LabeledDataset {
    let y = class_labels(counts);
    let mut x = normal_matrix(rng, y.len(), p);
    for (i, &g) in y.iter().enumerate() {
        for j in 0..p {
            // alternate monotone and non-monotone signals
            let s = if j % 2 == 0 { g as f64 } else { ((g % 2) as f64) * 2.0 };
            x[[i, j]] += shift * s;
        }
    }
    LabeledDataset::new(x, y).unwrap()
}

fn permuted(data: &LabeledDataset, perm: &[usize]) -> LabeledDataset {
    data.subset(perm).unwrap()
}

#[test]
fn f_pvalue_matches_density_quadrature() {
    let oracle = f_upper_tail_quadrature(4.0, 2.0, 27.0);
    assert!((oracle - 0.0301).abs() < 5e-5, "oracle {oracle}");
    assert!((sobl::special::f_sf(4.0, 2.0, 27.0) - oracle).abs() < 1e-9);
    for (f, d1, d2) in [(0.5, 3.0, 10.0), (2.2, 4.0, 40.0), (7.5, 1.0, 12.0), (1.0, 6.0, 100.0)] {
        let q = f_upper_tail_quadrature(f, d1, d2);
        assert!((sobl::special::f_sf(f, d1, d2) - q).abs() < 1e-9, "F={f} ({d1},{d2})");
    }
}

#[test]
fn two_class_f_is_squared_pooled_t() {
    for seed in 0..30 {
        let mut r = rng(seed);
        let (n1, n2) = (r.random_range(2..12), r.random_range(2..12));
        let a: Vec<f64> = (0..n1).map(|_| r.random::<f64>() * 3.0).collect();
        let b: Vec<f64> = (0..n2).map(|_| r.random::<f64>() * 3.0 + 0.5).collect();
        let x: Array1<f64> = a.iter().chain(&b).copied().collect();
        let y = class_labels(&[n1, n2]);
        let test = anova_f_test(x.view(), &y).unwrap();
        let (t, df) = pooled_t(&a, &b);
        assert!((test.f - t * t).abs() < 1e-10 * (1.0 + t * t));
        let p_t = t_two_sided_quadrature(t, df);
        assert!((test.pvalue - p_t).abs() < 1e-10, "seed {seed}: {} vs {p_t}", test.pvalue);
    }
}

#[test]
fn tau_matches_pair_enumeration() {
    for seed in 0..40 {
        let mut r = rng(100 + seed);
        let counts: Vec<usize> = (0..r.random_range(2..5)).map(|_| r.random_range(1..8)).collect();
        let y = class_labels(&counts);
        // rounding creates ties in x
        let x: Vec<f64> = y.iter().map(|_| (r.random::<f64>() * 6.0).round()).collect();
        let tau = kendall_tau(Array1::from(x.clone()).view(), &y, false).unwrap();
        assert!((tau - kendall_pairs(&x, &y)).abs() < 1e-14);
    }
}

#[test]
fn group_mean_tau_equals_direct_recomputation() {
    for seed in 0..20 {
        let mut r = rng(200 + seed);
        let k = r.random_range(2..6);
        let counts = vec![4; k];
        let data = labeled(&mut r, &counts, 6, 0.5);
        let stats = compute_group_statistics(&data).unwrap();
        for j in 0..6 {
            let means: Vec<f64> = (1..=k)
                .map(|g| {
                    let v: Vec<f64> = (0..data.n()).filter(|&i| data.y()[i] == g).map(|i| data.x()[[i, j]]).collect();
                    v.iter().sum::<f64>() / v.len() as f64
                })
                .collect();
            let mut s = 0.0;
            for a in 0..k {
                for b in (a + 1)..k {
                    s += (means[b] - means[a]).signum();
                }
            }
            let direct = 2.0 * s / (k * (k - 1)) as f64;
            assert!((group_mean_tau(&stats, j) - direct).abs() < 1e-12);
        }
    }
}

#[test]
fn rank_weights_small_under_independence() {
    let mut hits = 0;
    for seed in 0..200 {
        let mut r = rng(300 + seed);
        let y = class_labels(&[50, 50, 50, 50]);
        let x = normal_matrix(&mut r, 200, 1);
        let data = LabeledDataset::new(x, y).unwrap();
        let w = rank_correlation_weights(&data, RankCorrelation::Kendall).unwrap();
        if w.values()[0] < 0.2 {
            hits += 1;
        }
    }
    assert!(hits >= 198, "{hits} of 200");
}

#[test]
fn trend_weights_near_one_for_clean_increasing_means() {
    let y = class_labels(&[5, 5, 5]);
    let mut r = rng(7);
    let x = Array2::from_shape_fn((15, 1), |(i, _)| y[i] as f64 + 1e-3 * r.random::<f64>());
    let data = LabeledDataset::new(x, y).unwrap();
    for kind in [TTestKind::Welch, TTestKind::Pooled] {
        let w = trend_test_weights(&data, kind).unwrap();
        assert!(w.values()[0] > 1.0 - 1e-10);
    }
}

#[test]
fn constant_column_gets_zero_weight_everywhere() {
    let mut r = rng(8);
    let mut data = labeled(&mut r, &[6, 6, 6], 3, 2.0);
    let mut x = data.x().to_owned();
    x.column_mut(1).fill(3.5);
    data = LabeledDataset::new(x, data.y().to_vec()).unwrap();
    for m in [WeightMethod::TwoStep, WeightMethod::AbsKendall, WeightMethod::AbsSpearman, WeightMethod::TrendTest] {
        let w = compute_weights(&data, m).unwrap();
        assert_eq!(w.values()[1], 0.0, "{m}");
        assert_eq!(w.diagnostics().constant, vec![1]);
    }
}

#[test]
fn toy_model_weights_recover_ordinal_block_on_average() {
    let model = toy35_model(60).unwrap();
    let reps = 40;
    let mut mean = Array1::<f64>::zeros(60);
    for seed in 0..reps {
        let data = generate_dataset(&model, &[50; 4], seed).unwrap();
        mean = mean + two_step_weights(&data, true).unwrap().values();
    }
    mean /= reps as f64;
    for j in 0..5 {
        assert!(mean[j] > 0.8, "variable {j}: {}", mean[j]);
    }
    for j in 5..60 {
        assert!(mean[j] < 0.2, "variable {j}: {}", mean[j]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kendall_invariant_under_increasing_maps(seed in 0u64..100_000, n in 2usize..40, tie in any::<bool>()) {
        let mut r = rng(seed);
        let y: Vec<usize> = (0..n).map(|_| r.random_range(1..5)).collect();
        prop_assume!(y.iter().any(|&v| v != y[0]));
        let x: Array1<f64> = (0..n).map(|_| r.random::<f64>() * 4.0 - 2.0).collect();
        let base = kendall_tau(x.view(), &y, tie).unwrap();
        for g in [|v: f64| v.exp(), |v: f64| 3.0 * v + 1.0, |v: f64| v * v * v] {
            let t = kendall_tau(x.mapv(g).view(), &y, tie).unwrap();
            prop_assert_eq!(t.to_bits(), base.to_bits());
        }
    }

    #[test]
    fn weights_invariant_under_observation_permutation(seed in 0u64..100_000) {
        let mut r = rng(seed);
        let data = labeled(&mut r, &[6, 7, 5], 5, 0.6);
        let mut perm: Vec<usize> = (0..data.n()).collect();
        for i in (1..perm.len()).rev() {
            perm.swap(i, r.random_range(0..=i));
        }
        let shuffled = permuted(&data, &perm);
        for m in [WeightMethod::TwoStep, WeightMethod::AbsKendall, WeightMethod::AbsSpearman, WeightMethod::TrendTest] {
            let a = compute_weights(&data, m).unwrap();
            let b = compute_weights(&shuffled, m).unwrap();
            for (u, v) in a.values().iter().zip(b.values()) {
                prop_assert!((u - v).abs() < 1e-12, "{} {} {}", m, u, v);
            }
        }
    }

    #[test]
    fn tau_indicators_invariant_under_positive_affine_maps(seed in 0u64..100_000, a in 0.01f64..100.0, b in -50.0f64..50.0) {
        let mut r = rng(seed);
        let data = labeled(&mut r, &[8, 8, 8], 4, 0.4);
        let mapped = LabeledDataset::new(data.x().mapv(|v| a * v + b), data.y().to_vec()).unwrap();
        let s0 = tau_statistics(&data, &compute_group_statistics(&data).unwrap(), true).unwrap();
        let s1 = tau_statistics(&mapped, &compute_group_statistics(&mapped).unwrap(), true).unwrap();
        prop_assert_eq!(&s0.tau_hat, &s1.tau_hat);
        prop_assert_eq!(&s0.tau_tilde, &s1.tau_tilde);
    }

    #[test]
    fn spearman_and_weights_stay_in_range(seed in 0u64..100_000) {
        let mut r = rng(seed);
        let data = labeled(&mut r, &[4, 4, 4, 4], 3, 1.0);
        for j in 0..3 {
            let rho = spearman_rho(data.column(j), data.y()).unwrap();
            prop_assert!((-1.0..=1.0).contains(&rho));
        }
        let w = two_step_weights(&data, true).unwrap();
        prop_assert!(w.values().iter().all(|&v| v == 0.0 || v == 1.0));
    }
}
