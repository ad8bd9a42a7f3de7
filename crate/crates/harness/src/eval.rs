//! Cross-validated evaluation and experiment sweeps.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use fxam::data_model::Dataset;
use fxam::synthgen::{appendix_config, generate, Difficulty};
use fxam::trainer::{tsi_train, TrainConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SchemaFile;
use crate::error::{HarnessError, Result};

/// Shuffled partition of `0..n` into `k` folds whose sizes differ by at most one.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(HarnessError::Usage(format!("need at least 2 folds, got {k}")));
    }
    if n < k {
        return Err(HarnessError::Data(format!("{n} records cannot fill {k} folds")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        folds.push(perm[start..start + len].to_vec());
        start += len;
    }
    Ok(folds)
}

pub fn rmse(pred: &[f64], actual: &[f64]) -> Result<f64> {
    if pred.len() != actual.len() || pred.is_empty() {
        return Err(HarnessError::Data(format!(
            "rmse needs equal nonzero lengths, got {} and {}",
            pred.len(),
            actual.len()
        )));
    }
    let ss: f64 = pred.iter().zip(actual).map(|(p, a)| (p - a) * (p - a)).sum();
    Ok((ss / pred.len() as f64).sqrt())
}

/// Training variants compared in the ablation experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    #[default]
    None,
    NoSampling,
    NoDfi,
    NoSamplingNoDfi,
    /// Temporal columns are treated as ordinary numerical features.
    NoTemporalStage,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::None,
        Ablation::NoSampling,
        Ablation::NoDfi,
        Ablation::NoSamplingNoDfi,
        Ablation::NoTemporalStage,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoSampling => "no-sampling",
            Ablation::NoDfi => "no-dfi",
            Ablation::NoSamplingNoDfi => "no-sampling-no-dfi",
            Ablation::NoTemporalStage => "no-temporal-stage",
        }
    }

    /// Applies the variant to a data set and configuration.
    pub fn apply(self, data: &Dataset, config: &TrainConfig) -> (Dataset, TrainConfig) {
        let mut cfg = config.clone();
        match self {
            Ablation::None => {}
            Ablation::NoSampling => cfg.sampling.enabled = false,
            Ablation::NoDfi => cfg.dfi = false,
            Ablation::NoSamplingNoDfi => {
                cfg.sampling.enabled = false;
                cfg.dfi = false;
            }
            Ablation::NoTemporalStage => {
                cfg.temporal.clear();
                return (data.temporal_as_numerical(), cfg);
            }
        }
        (data.clone(), cfg)
    }
}

impl FromStr for Ablation {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| HarnessError::Usage(format!("unknown ablation `{s}`")))
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub folds: usize,
    /// Seed of the fold assignment.
    pub seed: u64,
    pub ablation: Ablation,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            folds: 5,
            seed: 0,
            ablation: Ablation::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub rmse: f64,
    pub train_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub folds: Vec<FoldResult>,
    pub mean_rmse: f64,
    pub mean_train_seconds: f64,
    /// Folds whose training stopped at `max_cycles`.
    pub unconverged_folds: Vec<usize>,
    pub ablation: Ablation,
    pub seed: u64,
    pub config: TrainConfig,
}

impl EvalReport {
    /// Human-readable summary of the report.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "ablation: {}  seed: {}  folds: {}", self.ablation, self.seed, self.folds.len());
        for f in &self.folds {
            let _ = writeln!(s, "  fold {}: rmse {:.6e}  train {:.3}s", f.fold, f.rmse, f.train_seconds);
        }
        let _ = writeln!(s, "mean rmse {:.6e}  mean train {:.3}s", self.mean_rmse, self.mean_train_seconds);
        if !self.unconverged_folds.is_empty() {
            let _ = writeln!(s, "warning: folds {:?} did not converge", self.unconverged_folds);
        }
        s
    }
}

/// Maximum number of folds trained concurrently, from `FXAM_THREADS`.
pub fn fold_threads() -> Result<Option<usize>> {
    match std::env::var("FXAM_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(HarnessError::Usage(format!("FXAM_THREADS must be a positive integer, got `{v}`"))),
        },
    }
}

/// k-fold cross-validation. Only the call to `tsi_train` is timed.
pub fn run_experiment(data: &Dataset, config: &TrainConfig, opts: &EvalOptions) -> Result<EvalReport> {
    let (data, cfg) = opts.ablation.apply(data, config);
    cfg.validate()?;
    let folds = kfold_split(data.len(), opts.folds, opts.seed)?;

    let run_fold = |f: usize| -> Result<(FoldResult, bool)> {
        let mut in_test = vec![false; data.len()];
        for &i in &folds[f] {
            in_test[i] = true;
        }
        let train_idx: Vec<usize> = (0..data.len()).filter(|&i| !in_test[i]).collect();
        let train = data.subset(&train_idx);
        let test = data.subset(&folds[f]);
        let start = Instant::now();
        let model = tsi_train(&train, &cfg)?;
        let train_seconds = start.elapsed().as_secs_f64();
        let pred = model.predict_dataset(&test)?;
        let result = FoldResult {
            fold: f,
            rmse: rmse(&pred, test.response())?,
            train_seconds,
        };
        Ok((result, model.diagnostics.converged))
    };

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = fold_threads()? {
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| HarnessError::Usage(format!("thread pool: {e}")))?;
    let results: Vec<Result<(FoldResult, bool)>> =
        pool.install(|| (0..folds.len()).into_par_iter().map(run_fold).collect());

    let mut fold_results = Vec::with_capacity(folds.len());
    let mut unconverged = Vec::new();
    for r in results {
        let (fr, converged) = r?;
        if !converged {
            unconverged.push(fr.fold);
        }
        fold_results.push(fr);
    }
    let k = fold_results.len() as f64;
    Ok(EvalReport {
        mean_rmse: fold_results.iter().map(|f| f.rmse).sum::<f64>() / k,
        mean_train_seconds: fold_results.iter().map(|f| f.train_seconds).sum::<f64>() / k,
        folds: fold_results,
        unconverged_folds: unconverged,
        ablation: opts.ablation,
        seed: opts.seed,
        config: cfg,
    })
}

/// One point of a sweep: one generated data set under one variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub experiment: String,
    pub setting: usize,
    pub n_records: usize,
    pub n_features: usize,
    pub numerical_ratio: f64,
    pub seasonality_ratio: f64,
    pub difficulty: Difficulty,
    pub ablation: Ablation,
    pub mean_rmse: f64,
    pub mean_train_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepOptions {
    pub experiment: String,
    pub difficulty: Difficulty,
    /// Multiplies every record count; values below 1 give desk-scale runs.
    pub record_scale: f64,
    pub ablations: Vec<Ablation>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            experiment: "varyRecords".into(),
            difficulty: Difficulty::Easy,
            record_scale: 1.0,
            ablations: vec![Ablation::None],
        }
    }
}

/// Generates every data set of a named experiment and evaluates each variant.
/// Generated temporal columns are decomposed with the generator's season length.
pub fn sweep(config: &TrainConfig, opts: &SweepOptions, eval: &EvalOptions) -> Result<Vec<SweepRow>> {
    let settings = appendix_config(&opts.experiment, opts.difficulty, opts.record_scale)?;
    let mut rows = Vec::new();
    for (setting, synth) in settings.iter().enumerate() {
        let (data, _) = generate(synth)?;
        let cfg = with_schema_temporals(config, &SchemaFile::for_dataset(&data));
        for &ablation in &opts.ablations {
            let report = run_experiment(
                &data,
                &cfg,
                &EvalOptions {
                    ablation,
                    ..eval.clone()
                },
            )?;
            rows.push(SweepRow {
                experiment: opts.experiment.clone(),
                setting,
                n_records: synth.n_records,
                n_features: synth.n_features,
                numerical_ratio: synth.numerical_ratio,
                seasonality_ratio: synth.seasonality_ratio,
                difficulty: synth.difficulty,
                ablation,
                mean_rmse: report.mean_rmse,
                mean_train_seconds: report.mean_train_seconds,
            });
        }
    }
    Ok(rows)
}

/// Replaces the config's temporal settings with the schema's for every
/// temporal column the schema declares.
pub fn with_schema_temporals(config: &TrainConfig, schema: &SchemaFile) -> TrainConfig {
    let mut cfg = config.clone();
    for spec in schema.temporal_specs() {
        cfg.temporal.retain(|s| s.name != spec.name);
        cfg.temporal.push(spec);
    }
    cfg
}
