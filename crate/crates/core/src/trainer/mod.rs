//! Three-stage iterative training.
//!
//! Every cycle runs
//!
//! 1. backfitting passes over the numerical shape functions until they stop
//!    moving (optionally in order of estimated predictive power),
//! 2. one joint ridge solve for all categorical weights,
//! 3. a seasonal-trend decomposition of the partial residual for each
//!    temporal feature,
//!
//! and cycles until the objective stalls. Each block update also re-solves
//! the intercept, so with the penalized backend every stage is an exact
//! block minimization and the objective never increases.

mod normal;
mod sampling;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::categorical::{
    default_max_iter, gram_matrix, nga_solve, power_iteration_max_eig, CenteredGram, Gram,
    SymmetricOperator,
};
use crate::data_model::{
    build_homogeneous_encoding, compress_time_points, partition_phases, CategoricalEncoding,
    CompressedSeries, Dataset, KnotGrid, PhasePartition,
};
use crate::error::{FxamError, Result};
use crate::model::FxamModel;
use crate::smoothers::{default_bandwidth, penalty_value, smooth, Backend, SmoothRequest};
use crate::temporal::{decompose, DecomposeConfig, TemporalComponents};

pub use normal::{
    normal_equation_direct_solve, normal_equation_residuals, objective_value, BlockResidual,
    DIRECT_SOLVE_BOUND, NORMAL_RESIDUAL_BOUND,
};
pub use sampling::{
    estimate_sample_size, order_features, pilot_estimates, predictive_power, PilotEstimates,
};

/// Period and time unit of one temporal column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemporalSpec {
    pub name: String,
    #[serde(default = "one_i64")]
    pub tau: i64,
    pub period: usize,
}

fn one_i64() -> i64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub enabled: bool,
    pub gamma: f64,
    pub pilot_size: usize,
    /// Sampling only starts above this many records.
    pub min_records: usize,
    /// The subsample backfit stops once no shape moves more than
    /// `init_tol · sd(y)`; it only has to beat its own sampling error.
    pub init_tol: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            gamma: 1.0,
            pilot_size: 10_000,
            min_records: 100_000,
            init_tol: 3e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_num: f64,
    pub lambda_cat: f64,
    pub lambda_trend: f64,
    pub lambda_seasonal: f64,
    pub backend: Backend,
    /// Kernel bandwidth is `bandwidth_factor · range · n^(-1/5)`.
    pub bandwidth_factor: f64,
    pub temporal: Vec<TemporalSpec>,
    /// Stage 1 stops once no shape moves more than `stage_tol · sd(y)`.
    pub stage_tol: f64,
    /// Relative objective decrease per cycle below which training stops.
    pub outer_tol: f64,
    pub max_cycles: usize,
    pub max_stage1_passes: usize,
    /// Decomposition tolerance relative to the residual's spread.
    pub temporal_tol: f64,
    pub temporal_max_iter: usize,
    pub nga_tol: f64,
    /// Defaults to `max(1000, 10c)`.
    pub nga_max_iter: Option<usize>,
    pub sampling: SamplingConfig,
    pub dfi: bool,
    /// Records used to estimate predictive power for feature ordering.
    pub dfi_subset: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_num: 1.0,
            lambda_cat: 1.0,
            lambda_trend: 1.0,
            lambda_seasonal: 1.0,
            backend: Backend::Kernel,
            bandwidth_factor: 0.5,
            temporal: Vec::new(),
            stage_tol: 1e-4,
            outer_tol: 1e-6,
            max_cycles: 50,
            max_stage1_passes: 100,
            temporal_tol: 1e-6,
            temporal_max_iter: 50,
            nga_tol: 1e-8,
            nga_max_iter: None,
            sampling: SamplingConfig::default(),
            dfi: true,
            dfi_subset: 4096,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(FxamError::InconsistentConfig(msg));
        for (name, v) in [
            ("lambda_num", self.lambda_num),
            ("lambda_cat", self.lambda_cat),
            ("lambda_trend", self.lambda_trend),
            ("lambda_seasonal", self.lambda_seasonal),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be nonnegative, got {v}"));
            }
        }
        for (name, v) in [
            ("stage_tol", self.stage_tol),
            ("outer_tol", self.outer_tol),
            ("temporal_tol", self.temporal_tol),
            ("nga_tol", self.nga_tol),
            ("bandwidth_factor", self.bandwidth_factor),
            ("sampling.gamma", self.sampling.gamma),
            ("sampling.init_tol", self.sampling.init_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.max_cycles == 0 || self.max_stage1_passes == 0 || self.temporal_max_iter == 0 {
            return bad("iteration limits must be positive".into());
        }
        if self.sampling.pilot_size < 10 {
            return bad("sampling.pilot_size must be at least 10".into());
        }
        for spec in &self.temporal {
            if spec.period <= 1 {
                return Err(FxamError::InvalidPeriod(spec.period));
            }
            if spec.tau <= 0 {
                return bad(format!("tau of `{}` must be positive", spec.name));
            }
        }
        Ok(())
    }

    pub fn temporal_spec(&self, name: &str) -> Option<&TemporalSpec> {
        self.temporal.iter().find(|s| s.name == name)
    }

    fn decompose_config(&self) -> DecomposeConfig {
        DecomposeConfig {
            backend: self.backend,
            lambda_trend: self.lambda_trend,
            lambda_seasonal: self.lambda_seasonal,
            bandwidth_factor: self.bandwidth_factor,
            tol: self.temporal_tol,
            max_iter: self.temporal_max_iter,
        }
    }
}

/// Fixed structure of one numerical feature.
#[derive(Debug, Clone)]
pub(crate) struct NumericLayout {
    pub name: String,
    pub grid: KnotGrid,
    /// Smoothing parameter: bandwidth (kernel) or penalty (penalized).
    pub param: f64,
    pub bandwidth: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct CategoricalLayout {
    pub encoding: CategoricalEncoding,
    pub gram: Gram,
    pub counts: Vec<f64>,
    pub lambda_max: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct TemporalLayout {
    pub name: String,
    pub series: CompressedSeries,
    pub partition: PhasePartition,
}

/// Everything about a training problem that does not change while fitting.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub y: Vec<f64>,
    pub numeric: Vec<NumericLayout>,
    pub categorical: Option<CategoricalLayout>,
    pub temporal: Vec<TemporalLayout>,
}

impl Layout {
    /// Numerical-only layout of the records `rows`. Kernel bandwidths are
    /// carried over from the full data.
    fn numeric_subsample(&self, rows: &[usize], config: &TrainConfig) -> Result<Self> {
        let mut scratch = Vec::new();
        let numeric = self
            .numeric
            .iter()
            .map(|nl| {
                let grid = nl.grid.restrict_with(rows, &mut scratch)?;
                let bandwidth = match config.backend {
                    Backend::Kernel => nl.bandwidth,
                    Backend::Penalized => default_bandwidth(&grid.knots, config.bandwidth_factor),
                };
                Ok(NumericLayout {
                    name: nl.name.clone(),
                    grid,
                    param: nl.param,
                    bandwidth,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            y: rows.iter().map(|&l| self.y[l]).collect(),
            numeric,
            categorical: None,
            temporal: Vec::new(),
        })
    }

    pub fn build(dataset: &Dataset, config: &TrainConfig, params: Option<&[f64]>) -> Result<Self> {
        config.validate()?;
        let mut numeric = Vec::with_capacity(dataset.numerical().len());
        for (i, col) in dataset.numerical().iter().enumerate() {
            let grid = KnotGrid::from_values(&col.values)?;
            let bandwidth = match params {
                Some(p) if config.backend == Backend::Kernel => p[i],
                _ => default_bandwidth(&grid.knots, config.bandwidth_factor),
            };
            let param = match config.backend {
                Backend::Kernel => bandwidth,
                Backend::Penalized => config.lambda_num,
            };
            numeric.push(NumericLayout {
                name: col.name.clone(),
                grid,
                param,
                bandwidth,
            });
        }
        let categorical = if dataset.categorical().is_empty() {
            None
        } else {
            if !(config.lambda_cat > 0.0) {
                return Err(FxamError::InconsistentConfig(
                    "lambda_cat must be positive when categorical features are present".into(),
                ));
            }
            let encoding = build_homogeneous_encoding(dataset);
            let gram = gram_matrix(&encoding, config.lambda_cat)?;
            let counts = encoding.counts();
            let lambda_max = power_iteration_max_eig(&CenteredGram {
                gram: &gram,
                counts: &counts,
                n_records: dataset.len() as f64,
            })?;
            Some(CategoricalLayout {
                encoding,
                gram,
                counts,
                lambda_max,
            })
        };
        let mut temporal = Vec::new();
        for col in dataset.temporal() {
            let spec = config.temporal_spec(&col.name).ok_or_else(|| {
                FxamError::InconsistentConfig(format!(
                    "temporal column `{}` has no period configured",
                    col.name
                ))
            })?;
            let series = compress_time_points(&col.values, &vec![0.0; col.values.len()])?;
            let partition = partition_phases(&series, spec.tau, spec.period)?;
            temporal.push(TemporalLayout {
                name: col.name.clone(),
                series,
                partition,
            });
        }
        Ok(Self {
            y: dataset.response().to_vec(),
            numeric,
            categorical,
            temporal,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Record-space `α + Σf_i + Zβ + Σ(f_T + f_S)`.
    pub fn fitted(&self, comp: &Components) -> Vec<f64> {
        let mut out = vec![comp.alpha; self.n()];
        for (nl, f) in self.numeric.iter().zip(&comp.numeric) {
            for (o, &k) in out.iter_mut().zip(&nl.grid.back_map) {
                *o += f[k];
            }
        }
        if let Some(cl) = &self.categorical {
            for (l, o) in out.iter_mut().enumerate() {
                *o += cl.encoding.row(l).iter().map(|&j| comp.beta[j]).sum::<f64>();
            }
        }
        for (tl, tc) in self.temporal.iter().zip(&comp.temporal) {
            let total = tc.total();
            for (o, &k) in out.iter_mut().zip(&tl.series.back_map) {
                *o += total[k];
            }
        }
        out
    }

    /// Penalty terms of the objective (penalized backend semantics).
    pub fn penalty(&self, comp: &Components, config: &TrainConfig) -> f64 {
        let mut p = 0.0;
        for (nl, f) in self.numeric.iter().zip(&comp.numeric) {
            p += config.lambda_num * penalty_value(&nl.grid.knots, f);
        }
        p += config.lambda_cat * comp.beta.iter().map(|b| b * b).sum::<f64>();
        for (tl, tc) in self.temporal.iter().zip(&comp.temporal) {
            p += tc.penalty(&tl.partition, config.lambda_trend, config.lambda_seasonal);
        }
        p
    }
}

/// Fitted parameters in their compact form: numerical shapes at their
/// knots, categorical weights, temporal curves at the compressed points.
#[derive(Debug, Clone, PartialEq)]
pub struct Components {
    pub alpha: f64,
    pub numeric: Vec<Vec<f64>>,
    pub beta: Vec<f64>,
    pub temporal: Vec<TemporalComponents>,
}

impl Components {
    /// Largest absolute difference over all parameters.
    pub fn max_abs_diff(&self, other: &Components) -> f64 {
        let mut m = (self.alpha - other.alpha).abs();
        let mut upd = |a: &[f64], b: &[f64]| {
            for (x, y) in a.iter().zip(b) {
                m = m.max((x - y).abs());
            }
        };
        for (a, b) in self.numeric.iter().zip(&other.numeric) {
            upd(a, b);
        }
        upd(&self.beta, &other.beta);
        for (a, b) in self.temporal.iter().zip(&other.temporal) {
            upd(&a.trend, &b.trend);
            upd(&a.seasonal, &b.seasonal);
        }
        m
    }
}

/// Point in the training loop at which an observer is called.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Init,
    Stage1Pass,
    Numerical,
    Categorical,
    Temporal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageObjective {
    pub cycle: usize,
    pub stage: Stage,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingReport {
    pub pilot_size: usize,
    pub sample_size: usize,
}

/// Bookkeeping produced by a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainDiagnostics {
    pub cycles: usize,
    pub converged: bool,
    /// `"penalized"` for the full objective, `"rss"` when only the residual
    /// sum of squares is meaningful (kernel backend).
    pub objective_kind: String,
    /// Objective at the end of every cycle, starting with the initial state.
    pub objective_history: Vec<f64>,
    pub stage_objectives: Vec<StageObjective>,
    pub stage1_passes: Vec<usize>,
    /// Seconds spent in stages 1, 2 and 3 over the whole run.
    pub stage_seconds: [f64; 3],
    pub init_seconds: f64,
    pub sampling: Option<SamplingReport>,
}

/// Mutable state of one training run.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub(crate) layout: Layout,
    pub(crate) comp: Components,
    /// `y - fitted`, record space.
    pub(crate) residual: Vec<f64>,
    pub(crate) sd_y: f64,
    pub(crate) pilot_slopes: Option<Vec<f64>>,
    pub(crate) dfi_rows: Vec<usize>,
    pub cycle: usize,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / v.len() as f64).sqrt()
}

impl TrainState {
    /// Intercept at `mean(y)`, every component zero.
    pub fn new(dataset: &Dataset, config: &TrainConfig) -> Result<Self> {
        let layout = Layout::build(dataset, config, None)?;
        Ok(Self::from_layout(layout, config))
    }

    fn from_layout(layout: Layout, config: &TrainConfig) -> Self {
        let n = layout.n();
        let comp = Components {
            alpha: mean(&layout.y),
            numeric: layout.numeric.iter().map(|nl| vec![0.0; nl.grid.len()]).collect(),
            beta: vec![
                0.0;
                layout
                    .categorical
                    .as_ref()
                    .map_or(0, |c| c.encoding.cardinality())
            ],
            temporal: layout
                .temporal
                .iter()
                .map(|tl| TemporalComponents::zeros(&tl.series, &tl.partition))
                .collect(),
        };
        let sd_y = sd(&layout.y);
        let dfi_rows = if n <= config.dfi_subset {
            (0..n).collect()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_df1);
            let mut rows = rand::seq::index::sample(&mut rng, n, config.dfi_subset).into_vec();
            rows.sort_unstable();
            rows
        };
        let mut state = Self {
            layout,
            comp,
            residual: Vec::new(),
            sd_y,
            pilot_slopes: None,
            dfi_rows,
            cycle: 0,
        };
        state.refresh_residual();
        state
    }

    pub fn components(&self) -> &Components {
        &self.comp
    }

    pub fn set_components(&mut self, comp: Components) {
        self.comp = comp;
        self.refresh_residual();
    }

    pub fn alpha(&self) -> f64 {
        self.comp.alpha
    }

    pub fn residual(&self) -> &[f64] {
        &self.residual
    }

    pub fn response(&self) -> &[f64] {
        &self.layout.y
    }

    /// Record-space value of numerical shape `i`.
    pub fn numeric_record(&self, i: usize) -> Vec<f64> {
        self.layout.numeric[i].grid.expand(&self.comp.numeric[i])
    }

    pub fn numeric_knots(&self, i: usize) -> &[f64] {
        &self.layout.numeric[i].grid.knots
    }

    pub fn numeric_bandwidths(&self) -> Vec<f64> {
        self.layout.numeric.iter().map(|n| n.bandwidth).collect()
    }

    /// Record-space `Zβ`.
    pub fn categorical_record(&self) -> Vec<f64> {
        match &self.layout.categorical {
            Some(cl) => cl.encoding.expand(&self.comp.beta, self.layout.n()),
            None => vec![0.0; self.layout.n()],
        }
    }

    /// Record-space trend and seasonal parts of temporal feature `k`.
    pub fn temporal_record(&self, k: usize) -> (Vec<f64>, Vec<f64>) {
        let tl = &self.layout.temporal[k];
        let tc = &self.comp.temporal[k];
        (tl.series.expand(&tc.trend), tl.series.expand(&tc.seasonal))
    }

    pub fn fitted(&self) -> Vec<f64> {
        self.layout.fitted(&self.comp)
    }

    fn refresh_residual(&mut self) {
        let fit = self.layout.fitted(&self.comp);
        self.residual = self.layout.y.iter().zip(&fit).map(|(y, f)| y - f).collect();
    }

    /// `tol · sd(y)`, with a floor so that a constant response still
    /// terminates on rounding-level changes.
    fn threshold(&self, tol: f64) -> f64 {
        let floor = 1e-13 * self.comp.alpha.abs().max(self.sd_y);
        (tol * self.sd_y).max(floor)
    }
}

/// Per-pass order of the numerical features.
fn stage1_order(state: &TrainState, config: &TrainConfig) -> Vec<usize> {
    let p = state.layout.numeric.len();
    if !config.dfi || p <= 1 {
        return (0..p).collect();
    }
    let rows = &state.dfi_rows;
    let powers: Vec<f64> = (0..p)
        .map(|i| {
            let nl = &state.layout.numeric[i];
            let f = &state.comp.numeric[i];
            let x: Vec<f64> = rows.iter().map(|&l| nl.grid.knots[nl.grid.back_map[l]]).collect();
            let partial: Vec<f64> = rows
                .iter()
                .map(|&l| state.residual[l] + f[nl.grid.back_map[l]])
                .collect();
            let u = match &state.pilot_slopes {
                Some(s) => s[i],
                None => sampling::max_slope(&nl.grid.knots, f),
            };
            predictive_power(&x, &partial, u, 1.0, nl.bandwidth)
        })
        .collect();
    order_features(&powers)
}

/// Updates numerical shape `i` and the intercept jointly; returns the
/// largest change of the shape values.
fn update_numeric(state: &mut TrainState, i: usize, config: &TrainConfig) -> Result<f64> {
    let n = state.layout.n() as f64;
    let nl = &state.layout.numeric[i];
    let old = &state.comp.numeric[i];
    // partial residual including the intercept
    let mut target = nl.grid.means(&state.residual);
    for (t, o) in target.iter_mut().zip(old) {
        *t += o + state.comp.alpha;
    }
    let mut fit = smooth(
        config.backend,
        &SmoothRequest::weighted(&nl.grid.knots, &target, &nl.grid.counts, nl.param),
    )?;
    // The intercept takes the target's mean and the shape is centered. With a
    // mean-preserving smoother this is the joint minimizer; with the kernel
    // smoother it keeps α from drifting with the update order.
    let weighted_mean = |v: &[f64]| v.iter().zip(&nl.grid.counts).map(|(f, c)| f * c).sum::<f64>() / n;
    let new_alpha = weighted_mean(&target);
    let m = weighted_mean(&fit);
    fit.iter_mut().for_each(|f| *f -= m);
    let delta: Vec<f64> = fit.iter().zip(old).map(|(a, b)| a - b).collect();
    let change = delta.iter().fold(0.0f64, |acc, d| acc.max(d.abs()));
    let dalpha = new_alpha - state.comp.alpha;
    for (r, &k) in state.residual.iter_mut().zip(&nl.grid.back_map) {
        *r -= delta[k] + dalpha;
    }
    state.comp.numeric[i] = fit;
    state.comp.alpha = new_alpha;
    Ok(change)
}

type Observer<'a> = dyn FnMut(&TrainState, Stage) + 'a;

/// Backfitting passes over the numerical features until the largest change
/// in a pass drops below `stage_tol · sd(y)`. Returns the largest change of
/// the first pass and the number of passes.
pub fn stage1_backfit(state: &mut TrainState, config: &TrainConfig) -> Result<(f64, usize)> {
    stage1_observed(state, config, &mut |_, _| {})
}

fn stage1_observed(
    state: &mut TrainState,
    config: &TrainConfig,
    observer: &mut Observer,
) -> Result<(f64, usize)> {
    let p = state.layout.numeric.len();
    if p == 0 {
        return Ok((0.0, 0));
    }
    let order = stage1_order(state, config);
    let threshold = state.threshold(config.stage_tol);
    let mut first = None;
    let mut passes = 0;
    for _ in 0..config.max_stage1_passes {
        passes += 1;
        let alpha_before = state.comp.alpha;
        let mut change = 0.0f64;
        for &i in &order {
            change = change.max(update_numeric(state, i, config)?);
        }
        change = change.max((state.comp.alpha - alpha_before).abs());
        if !change.is_finite() {
            return Err(FxamError::Diverged { cycle: state.cycle });
        }
        observer(state, Stage::Stage1Pass);
        first.get_or_insert(change);
        if change <= threshold {
            break;
        }
    }
    Ok((first.unwrap_or(0.0), passes))
}

/// Joint ridge solve for all categorical weights with the intercept
/// profiled out. Returns the largest change of `β` and `α`.
pub fn stage2_categorical(state: &mut TrainState, config: &TrainConfig) -> Result<f64> {
    let Some(cl) = &state.layout.categorical else {
        return Ok(0.0);
    };
    let n = state.layout.n();
    let nf = n as f64;
    let old_beta = state.comp.beta.clone();
    let zb_old = cl.encoding.expand(&old_beta, n);
    let target: Vec<f64> = state
        .residual
        .iter()
        .zip(&zb_old)
        .map(|(r, z)| r + z + state.comp.alpha)
        .collect();
    let tbar = mean(&target);
    let mut b = cl.encoding.transpose_apply(&target);
    for (bj, c) in b.iter_mut().zip(&cl.counts) {
        *bj -= c * tbar;
    }
    let op = CenteredGram {
        gram: &cl.gram,
        counts: &cl.counts,
        n_records: nf,
    };
    let c = cl.encoding.cardinality();
    let max_iter = config.nga_max_iter.unwrap_or_else(|| default_max_iter(c));
    let out = nga_solve(&op, &b, &old_beta, cl.lambda_max, config.nga_tol, max_iter)?;

    // keep the previous weights unless the new ones lower the objective
    let quad = |beta: &[f64]| {
        let mut g = vec![0.0; c];
        op.apply(beta, &mut g);
        beta.iter().zip(&g).map(|(x, y)| 0.5 * x * y).sum::<f64>()
            - beta.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>()
    };
    let beta = if quad(&out.beta) <= quad(&old_beta) {
        out.beta
    } else {
        old_beta.clone()
    };
    let zb = cl.encoding.expand(&beta, n);
    let alpha = target.iter().zip(&zb).map(|(t, z)| t - z).sum::<f64>() / nf;
    let mut change = (alpha - state.comp.alpha).abs();
    for (a, o) in beta.iter().zip(&old_beta) {
        change = change.max((a - o).abs());
    }
    for ((r, t), z) in state.residual.iter_mut().zip(&target).zip(&zb) {
        *r = t - z - alpha;
    }
    state.comp.beta = beta;
    state.comp.alpha = alpha;
    Ok(change)
}

/// Seasonal-trend decomposition of the partial residual of every temporal
/// feature, in declaration order. Returns the largest change.
pub fn stage3_temporal(state: &mut TrainState, config: &TrainConfig) -> Result<f64> {
    let cfg = config.decompose_config();
    let nf = state.layout.n() as f64;
    let mut change = 0.0f64;
    for k in 0..state.layout.temporal.len() {
        let tl = &state.layout.temporal[k];
        let old = &state.comp.temporal[k];
        let old_total = tl.series.expand(&old.total());
        let target: Vec<f64> = state
            .residual
            .iter()
            .zip(&old_total)
            .map(|(r, o)| r + o + state.comp.alpha)
            .collect();
        let points = tl.series.recompress(&target);
        let mut comp = decompose(&tl.series, &tl.partition, &points, &cfg, Some(old))?;
        let shift = comp
            .total()
            .iter()
            .zip(&tl.series.weights)
            .map(|(t, &w)| t * w as f64)
            .sum::<f64>()
            / nf;
        comp.trend.iter_mut().for_each(|t| *t -= shift);
        let alpha = mean(&target);
        for (a, b) in comp.trend.iter().zip(&old.trend) {
            change = change.max((a - b).abs());
        }
        for (a, b) in comp.seasonal.iter().zip(&old.seasonal) {
            change = change.max((a - b).abs());
        }
        change = change.max((alpha - state.comp.alpha).abs());
        let total = comp.total();
        for ((r, t), &p) in state.residual.iter_mut().zip(&target).zip(&tl.series.back_map) {
            *r = t - total[p] - alpha;
        }
        state.comp.alpha = alpha;
        state.comp.temporal[k] = comp;
    }
    Ok(change)
}

/// Initializes the shapes from a subsample whose size comes from pilot
/// estimates. No-op unless sampling is enabled and the data is large.
fn sampling_init(
    state: &mut TrainState,
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<Option<SamplingReport>> {
    let n = dataset.len();
    let p = dataset.numerical().len();
    if !config.sampling.enabled || n <= config.sampling.min_records || p == 0 {
        return Ok(None);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n0 = config.sampling.pilot_size.min(n);
    let pilot_rows = rand::seq::index::sample(&mut rng, n, n0).into_vec();
    let y = dataset.response();
    let y_sub: Vec<f64> = pilot_rows.iter().map(|&l| y[l]).collect();
    let pilots = dataset
        .numerical()
        .iter()
        .map(|col| {
            let x_sub: Vec<f64> = pilot_rows.iter().map(|&l| col.values[l]).collect();
            sampling::pilot_on_rows(&x_sub, &y_sub, config)
        })
        .collect::<Result<Vec<_>>>()?;
    state.pilot_slopes = Some(pilots.iter().map(|p| p.u_max).collect());
    let n_star = estimate_sample_size(&pilots, config.sampling.gamma, n0);
    let report = SamplingReport {
        pilot_size: n0,
        sample_size: n_star.min(n),
    };
    if n_star >= n {
        return Ok(Some(report));
    }

    let mut rows = rand::seq::index::sample(&mut rng, n, n_star).into_vec();
    rows.sort_unstable();
    let sub_cfg = TrainConfig {
        temporal: Vec::new(),
        stage_tol: config.sampling.init_tol.max(config.stage_tol),
        sampling: SamplingConfig {
            enabled: false,
            ..config.sampling.clone()
        },
        ..config.clone()
    };
    let sub_layout = state.layout.numeric_subsample(&rows, &sub_cfg)?;
    let mut sub = TrainState::from_layout(sub_layout, &sub_cfg);
    sub.pilot_slopes = state.pilot_slopes.clone();
    stage1_backfit(&mut sub, &sub_cfg)?;

    let nf = n as f64;
    for i in 0..p {
        let sub_knots = &sub.layout.numeric[i].grid.knots;
        let sub_vals = &sub.comp.numeric[i];
        let grid = &state.layout.numeric[i].grid;
        let mut f = interpolate_sorted(sub_knots, sub_vals, &grid.knots);
        let m = f.iter().zip(&grid.counts).map(|(a, c)| a * c).sum::<f64>() / nf;
        f.iter_mut().for_each(|a| *a -= m);
        state.comp.numeric[i] = f;
    }
    state.comp.alpha = mean(y);
    state.refresh_residual();
    Ok(Some(report))
}

/// Clamped linear interpolation at ascending points `xs`, walking both grids once.
fn interpolate_sorted(knots: &[f64], values: &[f64], xs: &[f64]) -> Vec<f64> {
    let m = knots.len();
    let mut hi = 0;
    xs.iter()
        .map(|&x| {
            while hi < m && knots[hi] <= x {
                hi += 1;
            }
            if hi == 0 {
                values[0]
            } else if hi == m {
                values[m - 1]
            } else {
                let lo = hi - 1;
                let s = (x - knots[lo]) / (knots[hi] - knots[lo]);
                values[lo] + s * (values[hi] - values[lo])
            }
        })
        .collect()
}

/// Trains a model with the three-stage iteration.
pub fn tsi_train(dataset: &Dataset, config: &TrainConfig) -> Result<FxamModel> {
    tsi_train_observed(dataset, config, &mut |_, _| {})
}

/// [`tsi_train`] with a callback after initialization, after every Stage 1
/// pass and after every stage.
pub fn tsi_train_observed(
    dataset: &Dataset,
    config: &TrainConfig,
    observer: &mut Observer,
) -> Result<FxamModel> {
    let (state, diag) = fit_state(dataset, config, observer)?;
    Ok(FxamModel::from_state(dataset, &state, diag))
}

/// Runs training and returns the final state together with diagnostics.
pub fn fit_state(
    dataset: &Dataset,
    config: &TrainConfig,
    observer: &mut Observer,
) -> Result<(TrainState, TrainDiagnostics)> {
    let start = Instant::now();
    let mut state = TrainState::new(dataset, config)?;
    let mut diag = TrainDiagnostics {
        objective_kind: match config.backend {
            Backend::Penalized => "penalized".into(),
            Backend::Kernel => "rss".into(),
        },
        ..Default::default()
    };
    diag.sampling = sampling_init(&mut state, dataset, config)?;
    diag.init_seconds = start.elapsed().as_secs_f64();
    observer(&state, Stage::Init);

    let mut obj_prev = objective_value(&state, config);
    diag.objective_history.push(obj_prev);
    diag.stage_objectives.push(StageObjective {
        cycle: 0,
        stage: Stage::Init,
        value: obj_prev,
    });
    let threshold = state.threshold(config.stage_tol);
    for cycle in 1..=config.max_cycles {
        state.cycle = cycle;
        state.refresh_residual();
        let mut change = 0.0f64;

        let t = Instant::now();
        let (c1, passes) = stage1_observed(&mut state, config, observer)?;
        diag.stage_seconds[0] += t.elapsed().as_secs_f64();
        diag.stage1_passes.push(passes);
        change = change.max(c1);
        record(&mut diag, &state, config, cycle, Stage::Numerical)?;
        observer(&state, Stage::Numerical);

        let t = Instant::now();
        change = change.max(stage2_categorical(&mut state, config)?);
        diag.stage_seconds[1] += t.elapsed().as_secs_f64();
        record(&mut diag, &state, config, cycle, Stage::Categorical)?;
        observer(&state, Stage::Categorical);

        let t = Instant::now();
        change = change.max(stage3_temporal(&mut state, config)?);
        diag.stage_seconds[2] += t.elapsed().as_secs_f64();
        record(&mut diag, &state, config, cycle, Stage::Temporal)?;
        observer(&state, Stage::Temporal);

        let obj = diag.stage_objectives.last().map(|s| s.value).unwrap_or(f64::NAN);
        diag.objective_history.push(obj);
        diag.cycles = cycle;
        let rel = (obj_prev - obj) / obj_prev.abs().max(f64::MIN_POSITIVE);
        if rel < config.outer_tol && change <= threshold {
            diag.converged = true;
            break;
        }
        obj_prev = obj;
    }
    Ok((state, diag))
}

fn record(
    diag: &mut TrainDiagnostics,
    state: &TrainState,
    config: &TrainConfig,
    cycle: usize,
    stage: Stage,
) -> Result<()> {
    let value = objective_value(state, config);
    if !value.is_finite() {
        return Err(FxamError::Diverged { cycle });
    }
    diag.stage_objectives.push(StageObjective { cycle, stage, value });
    Ok(())
}
