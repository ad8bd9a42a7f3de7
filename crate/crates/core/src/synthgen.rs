//! Synthetic additive data with known ground truth.
//!
//! Numerical features are drawn from `U[0, 10]` and pass through one of three
//! univariate shapes (linear, quadratic, sinusoid). Hard mode also draws
//! pairwise interaction terms, which consume two numerical slots each.
//! Categorical features carry uniform random weights and an optional temporal
//! feature carries a period-10 sinusoid. Interaction, seasonal and noise
//! scales are set after the fact so each hits its fraction of the response's
//! total sum of squares.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data_model::Dataset;
use crate::error::{FxamError, Result};

/// Aggregate interaction share of the response in hard mode.
pub const INTERACTION_FVE: f64 = 0.65;
/// Period of the injected seasonal component.
pub const SEASON_PERIOD: usize = 10;
/// Temporal values are integers in `1..=TIME_MAX`.
pub const TIME_MAX: i64 = 200;

/// Shape difficulty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    #[default]
    Easy,
    Hard,
}

impl Difficulty {
    /// Target `SS(ε)/TSS`.
    pub fn noise_ratio(self) -> f64 {
        match self {
            Difficulty::Easy => 0.001,
            Difficulty::Hard => 0.005,
        }
    }
}

impl std::str::FromStr for Difficulty {
    type Err = FxamError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "easy" => Ok(Difficulty::Easy),
            "hard" => Ok(Difficulty::Hard),
            other => Err(FxamError::UnknownConfig(other.to_string())),
        }
    }
}

/// Generator factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_records: usize,
    pub n_features: usize,
    /// Each categorical feature has cardinality drawn from `2..=max_cardinality`.
    pub max_cardinality: usize,
    pub numerical_ratio: f64,
    pub has_temporal: bool,
    pub seasonality_ratio: f64,
    pub difficulty: Difficulty,
    /// Overrides the difficulty's noise share; `Some(0.0)` gives a noiseless response.
    pub noise_ratio: Option<f64>,
    /// Skips the record and feature range checks.
    pub desk_scale: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_records: 10_000,
            n_features: 20,
            max_cardinality: 10,
            numerical_ratio: 0.8,
            has_temporal: false,
            seasonality_ratio: 0.0,
            difficulty: Difficulty::Easy,
            noise_ratio: None,
            desk_scale: false,
            seed: 0,
        }
    }
}

/// Feature counts implied by a config.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureCounts {
    pub numerical: usize,
    pub categorical: usize,
    pub temporal: usize,
}

impl SynthConfig {
    pub fn feature_counts(&self) -> Result<FeatureCounts> {
        let numerical = (self.numerical_ratio * self.n_features as f64).round() as usize;
        let temporal = usize::from(self.has_temporal);
        if numerical + temporal > self.n_features {
            return Err(FxamError::InconsistentConfig(format!(
                "{numerical} numerical and {temporal} temporal features exceed {} features",
                self.n_features
            )));
        }
        Ok(FeatureCounts {
            numerical,
            categorical: self.n_features - numerical - temporal,
            temporal,
        })
    }

    pub fn target_noise_ratio(&self) -> f64 {
        self.noise_ratio.unwrap_or(self.difficulty.noise_ratio())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(FxamError::InconsistentConfig(msg));
        if !(0.0..=1.0).contains(&self.numerical_ratio) {
            return bad(format!("numerical ratio {} outside [0, 1]", self.numerical_ratio));
        }
        if !(0.0..=0.1).contains(&self.seasonality_ratio) {
            return bad(format!("seasonality ratio {} outside [0, 0.1]", self.seasonality_ratio));
        }
        if self.seasonality_ratio > 0.0 && !self.has_temporal {
            return bad("seasonality ratio needs a temporal feature".into());
        }
        let noise = self.target_noise_ratio();
        if !(0.0..1.0).contains(&noise) {
            return bad(format!("noise ratio {noise} outside [0, 1)"));
        }
        if self.n_records < 2 {
            return bad("at least two records are needed".into());
        }
        if self.n_features == 0 {
            return bad("at least one feature is needed".into());
        }
        if !self.desk_scale {
            if !(10_000..=500_000).contains(&self.n_records) {
                return bad(format!("{} records outside [10000, 500000]", self.n_records));
            }
            if !(20..=200).contains(&self.n_features) {
                return bad(format!("{} features outside [20, 200]", self.n_features));
            }
        }
        let counts = self.feature_counts()?;
        if counts.categorical > 0 && self.max_cardinality < 2 {
            return bad("max cardinality must be at least 2".into());
        }
        Ok(())
    }
}

/// Shape of one ground-truth term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapeKind {
    /// `a1·x`
    Linear { a1: f64 },
    /// `a2·x² + a3·x`
    Quadratic { a2: f64, a3: f64 },
    /// `a4·sin(a5·x + a6)`
    Sine { a4: f64, a5: f64, a6: f64 },
    /// `s·(b1·x1·x2 + b2·x1 + b3·x2)`
    Bilinear { b1: f64, b2: f64, b3: f64, scale: f64 },
    /// `s·b4·cos(b5·x1·x2 + b6·x1 + b7·x2 + b8)`
    Cosine { b4: f64, b5: f64, b6: f64, b7: f64, b8: f64, scale: f64 },
}

impl ShapeKind {
    fn univariate(&self, x: f64) -> f64 {
        match *self {
            ShapeKind::Linear { a1 } => a1 * x,
            ShapeKind::Quadratic { a2, a3 } => a2 * x * x + a3 * x,
            ShapeKind::Sine { a4, a5, a6 } => a4 * (a5 * x + a6).sin(),
            _ => unreachable!("interaction evaluated as univariate"),
        }
    }

    // unscaled
    fn bivariate(&self, x1: f64, x2: f64) -> f64 {
        match *self {
            ShapeKind::Bilinear { b1, b2, b3, .. } => b1 * x1 * x2 + b2 * x1 + b3 * x2,
            ShapeKind::Cosine { b4, b5, b6, b7, b8, .. } => {
                b4 * (b5 * x1 * x2 + b6 * x1 + b7 * x2 + b8).cos()
            }
            _ => unreachable!("univariate evaluated as interaction"),
        }
    }

    fn set_scale(&mut self, s: f64) {
        match self {
            ShapeKind::Bilinear { scale, .. } | ShapeKind::Cosine { scale, .. } => *scale = s,
            _ => {}
        }
    }

    pub fn is_interaction(&self) -> bool {
        matches!(self, ShapeKind::Bilinear { .. } | ShapeKind::Cosine { .. })
    }
}

/// Contribution of one univariate numerical feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericTruth {
    pub name: String,
    pub shape: ShapeKind,
    pub contribution: Vec<f64>,
}

/// Contribution of one interaction between two numerical columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionTruth {
    pub features: [String; 2],
    pub shape: ShapeKind,
    pub contribution: Vec<f64>,
}

/// Contribution of one categorical feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalTruth {
    pub name: String,
    /// Weight of value `v{k}` at position `k`.
    pub weights: Vec<f64>,
    pub contribution: Vec<f64>,
}

/// Seasonal term `v1·sin(2πt/10 + v2)`; the trend is identically zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalTruth {
    pub name: String,
    pub v1: f64,
    pub v2: f64,
    pub trend: Vec<f64>,
    pub seasonal: Vec<f64>,
}

/// Everything that went into the response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub numerical: Vec<NumericTruth>,
    pub interactions: Vec<InteractionTruth>,
    pub categorical: Vec<CategoricalTruth>,
    pub temporal: Option<TemporalTruth>,
    pub noise: Vec<f64>,
    /// `SS(ε)/TSS`, sums of squares taken around the mean.
    pub noise_ratio: f64,
    pub interaction_fve: f64,
    pub seasonality_fve: f64,
}

impl GroundTruth {
    /// Noiseless signal of record `l`. `response[l] - signal(l) - noise[l]` is
    /// exactly zero.
    pub fn signal(&self, l: usize) -> f64 {
        let mut s = 0.0;
        for f in &self.numerical {
            s += f.contribution[l];
        }
        for f in &self.interactions {
            s += f.contribution[l];
        }
        for f in &self.categorical {
            s += f.contribution[l];
        }
        if let Some(t) = &self.temporal {
            s += t.trend[l];
            s += t.seasonal[l];
        }
        s
    }

    /// Named component columns, for writing a sidecar file.
    pub fn columns(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        for f in &self.numerical {
            out.push((f.name.clone(), &f.contribution));
        }
        for f in &self.interactions {
            out.push((format!("{}*{}", f.features[0], f.features[1]), &f.contribution));
        }
        for f in &self.categorical {
            out.push((f.name.clone(), &f.contribution));
        }
        if let Some(t) = &self.temporal {
            out.push((format!("{}.trend", t.name), &t.trend));
            out.push((format!("{}.seasonal", t.name), &t.seasonal));
        }
        out.push(("noise".into(), &self.noise));
        out
    }
}

/// Sum of squares around the mean.
pub fn centered_ss(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|a| (a - m) * (a - m)).sum()
}

fn centered_dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum()
}

/// Draws one univariate shape with probabilities 0.3 / 0.3 / 0.4.
pub fn draw_univariate<R: Rng>(rng: &mut R) -> ShapeKind {
    univariate_split(rng, 0.3)
}

// Linear and quadratic each with probability `p`, the sinusoid otherwise.
fn univariate_split<R: Rng>(rng: &mut R, p: f64) -> ShapeKind {
    let u: f64 = rng.random();
    if u < p {
        ShapeKind::Linear {
            a1: rng.random_range(-2.0..=2.0),
        }
    } else if u < 2.0 * p {
        ShapeKind::Quadratic {
            a2: rng.random_range(-1.0..=1.0),
            a3: rng.random_range(-2.0..=2.0),
        }
    } else {
        ShapeKind::Sine {
            a4: rng.random_range(-2.0..=2.0),
            a5: rng.random_range(0.0..=6.0 * PI),
            a6: rng.random_range(-0.5..=0.5),
        }
    }
}

/// Hard-mode draw with probabilities 0.1 / 0.1 / 0.2 / 0.2 / 0.4 over the three
/// univariate shapes and the two interactions. With a single slot left the
/// interactions are excluded and the univariate weights renormalised.
pub fn draw_hard<R: Rng>(rng: &mut R, slots_left: usize) -> ShapeKind {
    let u: f64 = rng.random();
    if slots_left < 2 || u < 0.4 {
        return univariate_split(rng, 0.25);
    }
    if u < 0.6 {
        ShapeKind::Bilinear {
            b1: rng.random_range(-2.0..=2.0),
            b2: rng.random_range(-2.0..=2.0),
            b3: rng.random_range(-2.0..=2.0),
            scale: 1.0,
        }
    } else {
        ShapeKind::Cosine {
            b4: rng.random_range(-2.0..=2.0),
            b5: rng.random_range(0.0..=4.0 * PI),
            b6: rng.random_range(0.0..=4.0 * PI),
            b7: rng.random_range(0.0..=4.0 * PI),
            b8: rng.random_range(-0.5..=0.5),
            scale: 1.0,
        }
    }
}

// Finds k with SS(u + k·w) = k², the common factor that turns the unit-share
// directions in `w` into components of the right size. None when infeasible.
fn response_scale(u: &[f64], w: &[f64]) -> Option<f64> {
    let suu = centered_ss(u);
    let suw = centered_dot(u, w);
    let sww = centered_ss(w);
    let a = 1.0 - sww;
    if a <= 0.0 {
        return None;
    }
    let disc = suw * suw + a * suu;
    let k = (suw + disc.max(0.0).sqrt()) / a;
    (k.is_finite() && k > 0.0).then_some(k)
}

/// Draws a dataset and its ground truth.
pub fn generate(config: &SynthConfig) -> Result<(Dataset, GroundTruth)> {
    config.validate()?;
    let counts = config.feature_counts()?;
    let n = config.n_records;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    // Shape draws first so that the assignment depends only on the seed.
    let mut shapes = Vec::new();
    let mut left = counts.numerical;
    while left > 0 {
        let s = match config.difficulty {
            Difficulty::Easy => draw_univariate(&mut rng),
            Difficulty::Hard => draw_hard(&mut rng, left),
        };
        left -= if s.is_interaction() { 2 } else { 1 };
        shapes.push(s);
    }

    let x: Vec<Vec<f64>> = (0..counts.numerical)
        .map(|_| (0..n).map(|_| rng.random_range(0.0..=10.0)).collect())
        .collect();
    let names: Vec<String> = (0..counts.numerical).map(|i| format!("x{i}")).collect();

    let mut numerical = Vec::new();
    let mut interactions = Vec::new();
    let mut col = 0;
    for shape in shapes {
        if shape.is_interaction() {
            let (a, b) = (&x[col], &x[col + 1]);
            let contribution = (0..n).map(|l| shape.bivariate(a[l], b[l])).collect();
            interactions.push(InteractionTruth {
                features: [names[col].clone(), names[col + 1].clone()],
                shape,
                contribution,
            });
            col += 2;
        } else {
            let contribution = x[col].iter().map(|&v| shape.univariate(v)).collect();
            numerical.push(NumericTruth {
                name: names[col].clone(),
                shape,
                contribution,
            });
            col += 1;
        }
    }

    let mut categorical = Vec::new();
    let mut cat_values = Vec::new();
    for m in 0..counts.categorical {
        let card = rng.random_range(2..=config.max_cardinality);
        let weights: Vec<f64> = (0..card).map(|_| rng.random_range(0.0..=15.0)).collect();
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..card)).collect();
        categorical.push(CategoricalTruth {
            name: format!("z{m}"),
            contribution: idx.iter().map(|&k| weights[k]).collect(),
            weights,
        });
        cat_values.push(idx.iter().map(|k| format!("v{k}")).collect::<Vec<_>>());
    }

    let mut temporal = None;
    let mut times = Vec::new();
    let mut season = vec![0.0; n];
    if counts.temporal == 1 {
        times = (0..n).map(|_| rng.random_range(1..=TIME_MAX)).collect::<Vec<i64>>();
        let v2: f64 = rng.random_range(-5.0..=5.0);
        season = times
            .iter()
            .map(|&t| (2.0 * PI * t as f64 / SEASON_PERIOD as f64 + v2).sin())
            .collect();
        temporal = Some(TemporalTruth {
            name: "t".into(),
            v1: 1.0,
            v2,
            trend: vec![0.0; n],
            seasonal: Vec::new(),
        });
    }
    let eps: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();

    // Fixed part and unit-share directions of the scaled parts.
    let mut fixed = vec![0.0; n];
    for f in &numerical {
        fixed.iter_mut().zip(&f.contribution).for_each(|(a, b)| *a += b);
    }
    for f in &categorical {
        fixed.iter_mut().zip(&f.contribution).for_each(|(a, b)| *a += b);
    }
    let mut inter = vec![0.0; n];
    for f in &interactions {
        inter.iter_mut().zip(&f.contribution).for_each(|(a, b)| *a += b);
    }
    let unit = |v: &[f64], share: f64| -> f64 {
        let ss = centered_ss(v);
        if share > 0.0 && ss > 0.0 {
            (share / ss).sqrt()
        } else {
            0.0
        }
    };
    let inter_share = if config.difficulty == Difficulty::Hard {
        INTERACTION_FVE
    } else {
        0.0
    };
    let ui = unit(&inter, inter_share);
    let us = unit(&season, config.seasonality_ratio);
    let ue = unit(&eps, config.target_noise_ratio());
    let w: Vec<f64> = (0..n)
        .map(|l| ui * inter[l] + us * season[l] + ue * eps[l])
        .collect();
    let k = response_scale(&fixed, &w).ok_or_else(|| {
        FxamError::InconsistentConfig("variance shares cannot be met on this draw".into())
    })?;

    for f in &mut interactions {
        let s = ui * k;
        f.shape.set_scale(s);
        f.contribution.iter_mut().for_each(|v| *v *= s);
    }
    if let Some(t) = &mut temporal {
        t.v1 = us * k;
        t.seasonal = season.iter().map(|v| v * t.v1).collect();
    }
    let noise: Vec<f64> = eps.iter().map(|v| v * ue * k).collect();

    let mut truth = GroundTruth {
        numerical,
        interactions,
        categorical,
        temporal,
        noise,
        noise_ratio: 0.0,
        interaction_fve: 0.0,
        seasonality_fve: 0.0,
    };
    let y: Vec<f64> = (0..n).map(|l| truth.signal(l) + truth.noise[l]).collect();
    // Store the noise as the exact difference so the identity holds without rounding.
    for l in 0..n {
        truth.noise[l] = y[l] - truth.signal(l);
    }
    let tss = centered_ss(&y);
    let mut inter_total = vec![0.0; n];
    for f in &truth.interactions {
        inter_total.iter_mut().zip(&f.contribution).for_each(|(a, b)| *a += b);
    }
    truth.noise_ratio = centered_ss(&truth.noise) / tss;
    truth.interaction_fve = centered_ss(&inter_total) / tss;
    truth.seasonality_fve = truth
        .temporal
        .as_ref()
        .map_or(0.0, |t| centered_ss(&t.seasonal) / tss);

    let mut builder = Dataset::builder("y", y);
    for (name, values) in names.into_iter().zip(x) {
        builder = builder.numerical(name, values);
    }
    for (f, values) in truth.categorical.iter().zip(cat_values) {
        builder = builder.categorical(f.name.clone(), values);
    }
    if let Some(t) = &truth.temporal {
        builder = builder.temporal(t.name.clone(), times);
    }
    Ok((builder.build()?, truth))
}

/// The sweep of one experiment family. Ablation families are always hard;
/// `record_scale` multiplies every record count and marks the configs as desk
/// scale when it is not 1.
pub fn appendix_config(name: &str, difficulty: Difficulty, record_scale: f64) -> Result<Vec<SynthConfig>> {
    if !(record_scale > 0.0 && record_scale.is_finite()) {
        return Err(FxamError::InconsistentConfig(format!(
            "record scale {record_scale} must be positive"
        )));
    }
    let base = SynthConfig {
        n_records: 100_000,
        n_features: 100,
        max_cardinality: 10,
        numerical_ratio: 0.8,
        difficulty,
        ..Default::default()
    };
    let sweep: Vec<SynthConfig> = match name {
        "varyRecords" => [10_000, 50_000, 100_000, 200_000, 500_000]
            .into_iter()
            .map(|r| SynthConfig { n_records: r, ..base.clone() })
            .collect(),
        "varyFeatures" => [20, 50, 100, 150, 200]
            .into_iter()
            .map(|f| SynthConfig { n_features: f, ..base.clone() })
            .collect(),
        "varyNumRatio" => [0.0, 0.25, 0.5, 0.75, 1.0]
            .into_iter()
            .map(|r| SynthConfig {
                numerical_ratio: r,
                max_cardinality: 38,
                ..base.clone()
            })
            .collect(),
        "varySeasonality" => [0.0, 0.025, 0.05, 0.075, 0.1]
            .into_iter()
            .map(|s| SynthConfig {
                n_features: 51,
                numerical_ratio: 40.0 / 51.0,
                has_temporal: true,
                seasonality_ratio: s,
                ..base.clone()
            })
            .collect(),
        "ablation1" => [50_000, 100_000, 500_000]
            .into_iter()
            .map(|r| SynthConfig {
                n_records: r,
                numerical_ratio: 1.0,
                difficulty: Difficulty::Hard,
                ..base.clone()
            })
            .collect(),
        "ablation2" => [50, 100, 200]
            .into_iter()
            .map(|f| SynthConfig {
                n_features: f,
                numerical_ratio: 1.0,
                difficulty: Difficulty::Hard,
                ..base.clone()
            })
            .collect(),
        other => return Err(FxamError::UnknownConfig(other.to_string())),
    };
    Ok(sweep
        .into_iter()
        .map(|mut c| {
            if record_scale != 1.0 {
                c.n_records = ((c.n_records as f64 * record_scale).round() as usize).max(2);
                c.desk_scale = true;
            }
            c
        })
        .collect())
}

/// Names accepted by [`appendix_config`].
pub const APPENDIX_CONFIGS: [&str; 6] = [
    "varyRecords",
    "varyFeatures",
    "varyNumRatio",
    "varySeasonality",
    "ablation1",
    "ablation2",
];

/// Period of the temporal feature in [`toy_problem`].
pub const TOY_PERIOD: usize = 4;

/// Small mixed problem: 200 records, two numerical features on a 0.01 grid,
/// two categorical features with three values each, and one temporal feature
/// cycling through 50 time points with a period-4 pattern and a mild trend.
pub fn toy_problem(seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 200;
    let mut grid = || (rng.random::<f64>() * 100.0).round() / 100.0;
    let x1: Vec<f64> = (0..n).map(|_| grid()).collect();
    let x2: Vec<f64> = (0..n).map(|_| grid()).collect();
    let z1: Vec<String> = (0..n).map(|_| format!("a{}", rng.random_range(0..3))).collect();
    let z2: Vec<String> = (0..n).map(|_| format!("b{}", rng.random_range(0..3))).collect();
    let t: Vec<i64> = (0..n as i64).map(|l| l % 50).collect();
    let pattern = [0.5, -0.2, 0.1, -0.4];
    let y: Vec<f64> = (0..n)
        .map(|l| {
            (6.28 * x1[l]).sin()
                + x2[l] * x2[l]
                + if z1[l] == "a0" { 1.0 } else { 0.0 }
                + 0.03 * t[l] as f64
                + pattern[t[l] as usize % TOY_PERIOD]
                + 0.2 * (rng.random::<f64>() - 0.5)
        })
        .collect();
    Dataset::builder("y", y)
        .numerical("x1", x1)
        .numerical("x2", x2)
        .categorical("z1", z1)
        .categorical("z2", z2)
        .temporal("t", t)
        .build()
}
