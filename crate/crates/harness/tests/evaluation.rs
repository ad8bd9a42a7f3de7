use fxam::smoothers::Backend;
use fxam::synthgen::{generate, SynthConfig};
use fxam::trainer::TrainConfig;
use fxam_harness::{kfold_split, run_experiment, Ablation, EvalOptions};
use proptest::prelude::*;

proptest! {
    #[test]
    fn folds_partition_the_records(n in 2usize..400, k in 2usize..12, seed in any::<u64>()) {
        prop_assume!(n >= k);
        let folds = kfold_split(n, k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        let (lo, hi) = (*sizes.iter().min().unwrap(), *sizes.iter().max().unwrap());
        prop_assert!(hi - lo <= 1);
        let mut seen = vec![false; n];
        for f in &folds {
            for &i in f {
                prop_assert!(!seen[i]);
                seen[i] = true;
            }
        }
        prop_assert!(seen.into_iter().all(|s| s));
    }
}

fn sd(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

#[test]
fn noiseless_additive_data_is_predicted_closely() {
    let (data, _) = generate(&SynthConfig {
        n_records: 4000,
        n_features: 6,
        numerical_ratio: 0.5,
        noise_ratio: Some(0.0),
        desk_scale: true,
        seed: 11,
        ..Default::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        backend: Backend::Penalized,
        lambda_num: 1e-4,
        lambda_cat: 1e-6,
        stage_tol: 1e-7,
        ..Default::default()
    };
    let report = run_experiment(&data, &cfg, &EvalOptions::default()).unwrap();
    assert_eq!(report.folds.len(), 5);
    assert!(report.unconverged_folds.is_empty());
    let s = sd(data.response());
    assert!(report.mean_rmse < 1e-2 * s, "rmse {} sd {s}", report.mean_rmse);
}

#[test]
fn sampling_does_not_change_the_error() {
    let (data, _) = generate(&SynthConfig {
        n_records: 6000,
        n_features: 8,
        numerical_ratio: 1.0,
        desk_scale: true,
        seed: 2,
        ..Default::default()
    })
    .unwrap();
    let mut cfg = TrainConfig {
        stage_tol: 1e-7,
        ..Default::default()
    };
    cfg.sampling.min_records = 1000;
    cfg.sampling.pilot_size = 500;
    cfg.sampling.gamma = 1e-3;
    let full = run_experiment(&data, &cfg, &EvalOptions::default()).unwrap();
    let off = run_experiment(
        &data,
        &cfg,
        &EvalOptions {
            ablation: Ablation::NoSampling,
            ..Default::default()
        },
    )
    .unwrap();
    let rel = (full.mean_rmse - off.mean_rmse).abs() / off.mean_rmse;
    assert!(rel < 1e-3, "relative difference {rel}");
}

#[test]
fn ablations_change_only_their_fields() {
    let (data, _) = generate(&SynthConfig {
        n_records: 200,
        n_features: 4,
        has_temporal: true,
        desk_scale: true,
        ..Default::default()
    })
    .unwrap();
    let cfg = TrainConfig::default();
    let (d, c) = Ablation::NoSamplingNoDfi.apply(&data, &cfg);
    assert_eq!(d, data);
    assert!(!c.sampling.enabled && !c.dfi);
    let (d, c) = Ablation::NoTemporalStage.apply(&data, &cfg);
    assert!(d.temporal().is_empty());
    assert_eq!(d.numerical().len(), data.numerical().len() + 1);
    assert!(c.temporal.is_empty());
}
