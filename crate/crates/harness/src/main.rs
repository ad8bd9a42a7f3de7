use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fxam::model::{deserialize, serialize, FxamModel};
use fxam::smoothers::Backend;
use fxam::synthgen::{generate, Difficulty, SynthConfig};
use fxam::trainer::{tsi_train, TrainConfig};
use fxam_harness::{
    decompose, ingest_csv, ingest_csv_unlabeled, run_experiment, sweep, with_schema_temporals, write_columns,
    write_dataset_csv, write_rows, write_truth_csv, Ablation, EvalOptions, HarnessError, Result, SchemaFile,
    SweepOptions,
};
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "fxam", version, about = "Train and evaluate additive models on CSV data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic data set, its schema and its ground truth
    Generate(GenerateArgs),
    /// Train a model and write it as JSON
    Train(TrainArgs),
    /// Predict the response of every row
    Predict(ModelDataArgs),
    /// k-fold cross-validation with timing
    Evaluate(EvaluateArgs),
    /// Per-row contribution of every component
    Decompose(ModelDataArgs),
    /// Shape functions, category weights and temporal curves as rows
    ExportContributions(ExportArgs),
    /// Evaluate every data set of a named synthetic experiment
    Sweep(SweepArgs),
}

/// Settings read with `--config`; flags given on the command line win.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ConfigFile {
    train: TrainConfig,
    synth: SynthConfig,
    eval: EvalOptions,
    sweep: SweepOptions,
}

impl ConfigFile {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Usage(format!("{}: {e}", path.display())))
    }
}

fn parse_backend(s: &str) -> std::result::Result<Backend, String> {
    s.parse().map_err(|e: fxam::FxamError| e.to_string())
}

fn parse_difficulty(s: &str) -> std::result::Result<Difficulty, String> {
    s.parse().map_err(|e: fxam::FxamError| e.to_string())
}

fn parse_ablation(s: &str) -> std::result::Result<Ablation, String> {
    s.parse().map_err(|e: HarnessError| e.to_string())
}

#[derive(Args)]
struct TrainFlags {
    /// penalized or kernel
    #[arg(long, value_parser = parse_backend)]
    backend: Option<Backend>,
    #[arg(long)]
    lambda_num: Option<f64>,
    #[arg(long)]
    lambda_cat: Option<f64>,
    #[arg(long)]
    lambda_trend: Option<f64>,
    #[arg(long)]
    lambda_seasonal: Option<f64>,
    #[arg(long)]
    bandwidth_factor: Option<f64>,
    #[arg(long)]
    stage_tol: Option<f64>,
    #[arg(long)]
    outer_tol: Option<f64>,
    #[arg(long)]
    max_cycles: Option<usize>,
    #[arg(long)]
    no_sampling: bool,
    #[arg(long)]
    no_dfi: bool,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    pilot_size: Option<usize>,
    /// Smallest training set for which sampled initialization is used
    #[arg(long)]
    sampling_min_records: Option<usize>,
    #[arg(long)]
    train_seed: Option<u64>,
}

impl TrainFlags {
    fn apply(&self, cfg: &mut TrainConfig) {
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),*) => {
                $(if let Some(v) = self.$flag { cfg.$($field).+ = v; })*
            };
        }
        set!(backend => backend, lambda_num => lambda_num, lambda_cat => lambda_cat,
            lambda_trend => lambda_trend, lambda_seasonal => lambda_seasonal,
            bandwidth_factor => bandwidth_factor, stage_tol => stage_tol, outer_tol => outer_tol,
            max_cycles => max_cycles, gamma => sampling.gamma, pilot_size => sampling.pilot_size,
            sampling_min_records => sampling.min_records, train_seed => seed);
        if self.no_sampling {
            cfg.sampling.enabled = false;
        }
        if self.no_dfi {
            cfg.dfi = false;
        }
    }
}

#[derive(Args)]
struct SynthFlags {
    #[arg(long)]
    records: Option<usize>,
    #[arg(long)]
    features: Option<usize>,
    #[arg(long)]
    max_cardinality: Option<usize>,
    #[arg(long)]
    numerical_ratio: Option<f64>,
    /// Add the temporal feature `t`
    #[arg(long)]
    temporal: bool,
    #[arg(long)]
    seasonality_ratio: Option<f64>,
    /// easy or hard
    #[arg(long, value_parser = parse_difficulty)]
    difficulty: Option<Difficulty>,
    #[arg(long)]
    noise_ratio: Option<f64>,
    /// Allow record and feature counts below the experiment ranges
    #[arg(long)]
    desk_scale: bool,
    #[arg(long)]
    data_seed: Option<u64>,
}

impl SynthFlags {
    fn apply(&self, cfg: &mut SynthConfig) {
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = self.$flag { cfg.$field = v; })*
            };
        }
        set!(records => n_records, features => n_features, max_cardinality => max_cardinality,
            numerical_ratio => numerical_ratio, seasonality_ratio => seasonality_ratio,
            difficulty => difficulty, data_seed => seed);
        if self.noise_ratio.is_some() {
            cfg.noise_ratio = self.noise_ratio;
        }
        cfg.has_temporal |= self.temporal;
        cfg.desk_scale |= self.desk_scale;
    }
}

#[derive(Args)]
struct EvalFlags {
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    fold_seed: Option<u64>,
}

impl EvalFlags {
    fn apply(&self, opts: &mut EvalOptions) {
        if let Some(k) = self.folds {
            opts.folds = k;
        }
        if let Some(s) = self.fold_seed {
            opts.seed = s;
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    /// Data CSV to write
    #[arg(long)]
    out: PathBuf,
    /// Schema JSON to write; defaults to `<out>.schema.json`
    #[arg(long)]
    schema_out: Option<PathBuf>,
    /// Ground-truth component CSV to write
    #[arg(long)]
    truth_out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    synth: SynthFlags,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    model_out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args)]
struct ModelDataArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Data CSV; omit to evaluate on a generated data set
    #[arg(long, requires = "schema")]
    data: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Report CSV with columns fold, rmse, train_seconds
    #[arg(long)]
    report: Option<PathBuf>,
    /// Full report as JSON
    #[arg(long)]
    json_out: Option<PathBuf>,
    #[arg(long, value_parser = parse_ablation)]
    ablation: Option<Ablation>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    eval: EvalFlags,
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    synth: SynthFlags,
}

#[derive(Args)]
struct SweepArgs {
    /// varyRecords, varyFeatures, varyNumRatio, varySeasonality, ablation1 or ablation2
    #[arg(long)]
    experiment: Option<String>,
    #[arg(long, value_parser = parse_difficulty)]
    difficulty: Option<Difficulty>,
    #[arg(long)]
    record_scale: Option<f64>,
    /// Repeat to compare several variants
    #[arg(long, value_parser = parse_ablation)]
    ablation: Vec<Ablation>,
    /// Plot-ready CSV to write
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    eval: EvalFlags,
    #[command(flatten)]
    train: TrainFlags,
}

fn read_model(path: &Path) -> Result<FxamModel> {
    let bytes = std::fs::read(path).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(deserialize(&bytes)?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => {
            let mut cfg = ConfigFile::load(a.config.as_deref())?.synth;
            a.synth.apply(&mut cfg);
            let (data, truth) = generate(&cfg)?;
            write_dataset_csv(&a.out, &data)?;
            let schema_out = a.schema_out.unwrap_or_else(|| {
                let mut p = a.out.clone().into_os_string();
                p.push(".schema.json");
                p.into()
            });
            SchemaFile::for_dataset(&data).save(&schema_out)?;
            if let Some(p) = &a.truth_out {
                write_truth_csv(p, &truth)?;
            }
            println!(
                "wrote {} records, {} features to {}",
                data.len(),
                data.numerical().len() + data.categorical().len() + data.temporal().len(),
                a.out.display()
            );
        }
        Command::Train(a) => {
            let mut cfg = ConfigFile::load(a.config.as_deref())?.train;
            a.train.apply(&mut cfg);
            let schema = SchemaFile::load(&a.schema)?;
            let data = ingest_csv(&a.data, &schema)?;
            let cfg = with_schema_temporals(&cfg, &schema);
            let model = tsi_train(&data, &cfg)?;
            std::fs::write(&a.model_out, serialize(&model)?).map_err(|source| HarnessError::Io {
                path: a.model_out.display().to_string(),
                source,
            })?;
            let d = &model.diagnostics;
            println!(
                "cycles {}  converged {}  objective {:e}",
                d.cycles,
                d.converged,
                d.objective_history.last().copied().unwrap_or(f64::NAN)
            );
            if !d.converged {
                return Err(HarnessError::NotConverged);
            }
        }
        Command::Predict(a) => {
            let model = read_model(&a.model)?;
            let data = ingest_csv_unlabeled(&a.data, &SchemaFile::load(&a.schema)?)?;
            let pred = model.predict_dataset(&data)?;
            write_columns(&a.out, &[("prediction".to_string(), pred)])?;
        }
        Command::Decompose(a) => {
            let model = read_model(&a.model)?;
            let data = ingest_csv_unlabeled(&a.data, &SchemaFile::load(&a.schema)?)?;
            write_columns(&a.out, &decompose(&model, &data)?)?;
        }
        Command::ExportContributions(a) => {
            let model = read_model(&a.model)?;
            write_rows(&a.out, &model.export_contributions())?;
        }
        Command::Evaluate(a) => {
            let file = ConfigFile::load(a.config.as_deref())?;
            let (mut cfg, mut opts) = (file.train, file.eval);
            a.train.apply(&mut cfg);
            a.eval.apply(&mut opts);
            if let Some(ab) = a.ablation {
                opts.ablation = ab;
            }
            let (data, schema) = match (&a.data, &a.schema) {
                (Some(d), Some(s)) => {
                    let schema = SchemaFile::load(s)?;
                    (ingest_csv(d, &schema)?, schema)
                }
                _ => {
                    let mut synth = file.synth;
                    a.synth.apply(&mut synth);
                    let (data, _) = generate(&synth)?;
                    let schema = SchemaFile::for_dataset(&data);
                    (data, schema)
                }
            };
            let cfg = with_schema_temporals(&cfg, &schema);
            let report = run_experiment(&data, &cfg, &opts)?;
            if let Some(p) = &a.report {
                write_rows(p, &report.folds)?;
            }
            if let Some(p) = &a.json_out {
                let text = serde_json::to_string_pretty(&report).expect("report serializes");
                std::fs::write(p, text + "\n").map_err(|source| HarnessError::Io {
                    path: p.display().to_string(),
                    source,
                })?;
            }
            print!("{}", report.summary());
        }
        Command::Sweep(a) => {
            let file = ConfigFile::load(a.config.as_deref())?;
            let (mut cfg, mut eval, mut opts) = (file.train, file.eval, file.sweep);
            a.train.apply(&mut cfg);
            a.eval.apply(&mut eval);
            if let Some(e) = a.experiment {
                opts.experiment = e;
            }
            if let Some(d) = a.difficulty {
                opts.difficulty = d;
            }
            if let Some(s) = a.record_scale {
                opts.record_scale = s;
            }
            if !a.ablation.is_empty() {
                opts.ablations = a.ablation;
            }
            let rows = sweep(&cfg, &opts, &eval)?;
            write_rows(&a.out, &rows)?;
            for r in &rows {
                println!(
                    "setting {}  {}  rmse {:.6e}  train {:.3}s",
                    r.setting, r.ablation, r.mean_rmse, r.mean_train_seconds
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
