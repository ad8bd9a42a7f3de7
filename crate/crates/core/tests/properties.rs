//! Property tests of the numerical building blocks.

use fxam::categorical::{
    closed_form_ridge, gram_assemble, nga_ridge_solve_detailed, power_iteration_max_eig,
};
use fxam::data_model::{build_homogeneous_encoding, compress_time_points, partition_phases, Dataset};
use fxam::smoothers::{
    fast_kernel_smooth, naive_kernel_smooth, smoother_matrix, Backend, SmoothRequest,
};
use fxam::synthgen::{generate, Difficulty, SynthConfig};
use proptest::prelude::*;

fn sorted_knots(max_len: usize, distinct: bool) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0u32..2000, 3..max_len).prop_map(move |mut v| {
        v.sort_unstable();
        if distinct {
            v.dedup();
        }
        v.into_iter().map(|a| a as f64 / 100.0).collect()
    })
}

fn categorical_rows() -> impl Strategy<Value = Vec<Vec<u8>>> {
    (1usize..4, 5usize..80).prop_flat_map(|(q, n)| {
        prop::collection::vec(prop::collection::vec(0u8..6, n), q)
    })
}

fn dataset_from(cols: &[Vec<u8>]) -> Dataset {
    let n = cols[0].len();
    let y: Vec<f64> = (0..n).map(|l| (l as f64 * 0.37).sin()).collect();
    let mut b = Dataset::builder("y", y);
    for (m, col) in cols.iter().enumerate() {
        b = b.categorical(format!("z{m}"), col.iter().map(|v| v.to_string()).collect());
    }
    b.build().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fast_kernel_matches_naive(
        x in sorted_knots(300, false),
        seed in 0u64..1000,
        h in 0.01f64..5.0,
    ) {
        let y: Vec<f64> = (0..x.len()).map(|i| ((i as u64 * 7919 + seed) % 101) as f64 - 50.0).collect();
        let w: Vec<f64> = (0..x.len()).map(|i| 1.0 + ((i as u64 + seed) % 3) as f64).collect();
        let req = SmoothRequest::weighted(&x, &y, &w, h);
        let fast = fast_kernel_smooth(&req).unwrap();
        let naive = naive_kernel_smooth(&req).unwrap();
        let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        for (a, b) in fast.iter().zip(&naive) {
            prop_assert!((a - b).abs() <= 1e-9 * scale, "{a} vs {b}");
        }
    }

    #[test]
    fn penalized_smoother_is_symmetric_and_shrinking(
        x in sorted_knots(120, true),
        lambda in prop::sample::select(vec![0.01, 1.0, 100.0]),
    ) {
        prop_assume!(x.len() >= 3);
        let s = smoother_matrix(Backend::Penalized, &x, None, lambda).unwrap();
        let asym = (&s - s.transpose()).amax();
        prop_assert!(asym < 1e-10, "asymmetry {asym:e}");
        let sym = (&s + s.transpose()) * 0.5;
        for ev in sym.symmetric_eigenvalues().iter() {
            prop_assert!(*ev >= -1e-9 && *ev <= 1.0 + 1e-9, "eigenvalue {ev}");
        }
    }

    #[test]
    fn every_record_is_q_hot(cols in categorical_rows()) {
        let ds = dataset_from(&cols);
        let enc = build_homogeneous_encoding(&ds);
        prop_assert_eq!(enc.num_features(), cols.len());
        for l in 0..ds.len() {
            let row = enc.row(l);
            prop_assert_eq!(row.len(), cols.len());
            for (m, &j) in row.iter().enumerate() {
                prop_assert!(enc.feature_range(m).contains(&j));
                prop_assert_eq!(&enc.labels()[j], &format!("z{m}={}", cols[m][l]));
            }
        }
        let total: f64 = enc.counts().iter().sum();
        prop_assert_eq!(total, (ds.len() * cols.len()) as f64);
    }

    #[test]
    fn phases_partition_the_points(
        steps in prop::collection::vec(-40i64..40, 1..100),
        tau in 1i64..4,
        period in 2usize..9,
    ) {
        let times: Vec<i64> = steps.iter().map(|s| s * tau).collect();
        let series = compress_time_points(&times, &vec![0.0; times.len()]).unwrap();
        let part = partition_phases(&series, tau, period).unwrap();
        let mut seen = vec![false; series.len()];
        for (phi, set) in part.phase_sets.iter().enumerate() {
            for w in set.windows(2) {
                prop_assert!(series.times[w[0]] < series.times[w[1]]);
            }
            for &k in set {
                prop_assert!(!seen[k]);
                seen[k] = true;
                prop_assert_eq!((series.times[k] / tau).rem_euclid(period as i64) as usize, phi);
            }
        }
        prop_assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn compression_preserves_mass(
        pairs in prop::collection::vec((0i64..30, -100.0f64..100.0), 1..200),
    ) {
        let (times, values): (Vec<i64>, Vec<f64>) = pairs.into_iter().unzip();
        let s = compress_time_points(&times, &values).unwrap();
        prop_assert_eq!(s.weights.iter().sum::<usize>(), times.len());
        prop_assert!(s.times.windows(2).all(|w| w[0] < w[1]));
        let raw: f64 = values.iter().sum();
        let packed: f64 = s.values.iter().zip(&s.weights).map(|(v, &w)| v * w as f64).sum();
        prop_assert!((raw - packed).abs() < 1e-9 * (1.0 + raw.abs()));
        for (l, &k) in s.back_map.iter().enumerate() {
            prop_assert_eq!(s.times[k], times[l]);
        }
    }

    #[test]
    fn nga_agrees_with_cholesky(cols in categorical_rows(), lambda in 0.5f64..20.0) {
        let ds = dataset_from(&cols);
        let enc = build_homogeneous_encoding(&ds);
        let sys = gram_assemble(&enc, ds.response(), lambda).unwrap();
        let exact = closed_form_ridge(&sys).unwrap();
        let out = nga_ridge_solve_detailed(&sys, 1e-12, 100_000).unwrap();
        for (a, b) in out.beta.iter().zip(&exact) {
            prop_assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn power_iteration_finds_the_top_eigenvalue(cols in categorical_rows(), lambda in 0.0f64..5.0) {
        let ds = dataset_from(&cols);
        let enc = build_homogeneous_encoding(&ds);
        let sys = gram_assemble(&enc, ds.response(), lambda).unwrap();
        let top = sys.gram.to_dense().symmetric_eigenvalues().max();
        let est = power_iteration_max_eig(&sys.gram).unwrap();
        prop_assert!(est >= (1.0 - 1e-6) * top && est <= top * (1.0 + 1e-12), "{est} vs {top}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn generated_response_is_the_sum_of_its_parts(
        seed in 0u64..10_000,
        hard in any::<bool>(),
        ratio in 0.0f64..=1.0,
    ) {
        let cfg = SynthConfig {
            n_records: 500,
            n_features: 8,
            numerical_ratio: ratio,
            has_temporal: ratio < 0.8,
            seasonality_ratio: if ratio < 0.8 { 0.05 } else { 0.0 },
            difficulty: if hard { Difficulty::Hard } else { Difficulty::Easy },
            desk_scale: true,
            seed,
            ..Default::default()
        };
        let (ds, truth) = generate(&cfg).unwrap();
        for l in 0..ds.len() {
            prop_assert_eq!(ds.response()[l] - truth.signal(l) - truth.noise[l], 0.0);
        }
    }
}
