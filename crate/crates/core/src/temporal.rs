//! Seasonal-trend decomposition of one temporal feature.
//!
//! The residual at the compressed time points is split into a trend curve
//! over all points and one seasonal curve per phase set, by alternating a
//! de-seasonalized trend smooth with per-phase (cycle-subseries) smooths of
//! the de-trended residual until the components stop moving.
//!
//! With the penalized backend the limit of that alternation is the
//! minimizer of a quadratic in the trend and seasonal values. Storing the two
//! values of each point next to each other makes its normal equations banded,
//! so they are solved directly when the band is narrow enough; alternation
//! can take thousands of sweeps when a smooth curve costs about the same in
//! the trend as in the phase curves.
//!
//! The objective does not determine how constants and straight lines are
//! split between trend and season, so after each sweep the seasonal part is
//! put in canonical form: weighted mean zero and weighted-orthogonal to
//! `t - t̄`, with the removed part added to the trend. The fitted total is
//! unchanged by this.

use crate::data_model::{phase_of, CompressedSeries, PhasePartition};
use crate::error::{FxamError, Result};
use crate::smoothers::{
    default_bandwidth, penalty_value, second_difference_row, smooth, Backend, SmoothRequest,
};

/// Largest `points · band²` handled by the banded solve.
const JOINT_SOLVE_BUDGET: usize = 400_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct DecomposeConfig {
    pub backend: Backend,
    pub lambda_trend: f64,
    pub lambda_seasonal: f64,
    pub bandwidth_factor: f64,
    /// Relative to the weighted standard deviation of the residual.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for DecomposeConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Kernel,
            lambda_trend: 1.0,
            lambda_seasonal: 1.0,
            bandwidth_factor: 0.5,
            tol: 1e-6,
            max_iter: 50,
        }
    }
}

/// Trend and seasonal curves over the compressed time points.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalComponents {
    pub times: Vec<i64>,
    pub trend: Vec<f64>,
    /// Merged seasonal component, one value per compressed point.
    pub seasonal: Vec<f64>,
    /// Seasonal values of each phase, aligned with the partition's sets.
    pub seasonal_by_phase: Vec<Vec<f64>>,
    pub iterations: usize,
}

impl TemporalComponents {
    pub fn zeros(series: &CompressedSeries, partition: &PhasePartition) -> Self {
        Self {
            times: series.times.clone(),
            trend: vec![0.0; series.len()],
            seasonal: vec![0.0; series.len()],
            seasonal_by_phase: partition
                .phase_sets
                .iter()
                .map(|s| vec![0.0; s.len()])
                .collect(),
            iterations: 0,
        }
    }

    /// Trend plus seasonal at every compressed point.
    pub fn total(&self) -> Vec<f64> {
        self.trend.iter().zip(&self.seasonal).map(|(a, b)| a + b).collect()
    }

    /// `λ_T‖D₂f_T‖² + λ_S Σ_φ ‖D₂f_{S_φ}‖²` on the respective time knots.
    pub fn penalty(&self, partition: &PhasePartition, lambda_trend: f64, lambda_seasonal: f64) -> f64 {
        let t: Vec<f64> = self.times.iter().map(|&v| v as f64).collect();
        let mut p = lambda_trend * penalty_value(&t, &self.trend);
        for (set, vals) in partition.phase_sets.iter().zip(&self.seasonal_by_phase) {
            let pt: Vec<f64> = set.iter().map(|&k| t[k]).collect();
            p += lambda_seasonal * penalty_value(&pt, vals);
        }
        p
    }
}

fn weighted_mean(v: &[f64], w: &[f64]) -> f64 {
    let sw: f64 = w.iter().sum();
    v.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw
}

pub(crate) fn weighted_sd(v: &[f64], w: &[f64]) -> f64 {
    let m = weighted_mean(v, w);
    let sw: f64 = w.iter().sum();
    (v.iter().zip(w).map(|(a, b)| b * (a - m) * (a - m)).sum::<f64>() / sw).sqrt()
}

fn smoothing_param(backend: Backend, knots: &[f64], lambda: f64, factor: f64) -> f64 {
    match backend {
        Backend::Penalized => lambda,
        Backend::Kernel => default_bandwidth(knots, factor),
    }
}

/// Moves the weighted mean and the weighted linear-in-time part of the
/// seasonal component into the trend.
fn canonicalize(t: &[f64], w: &[f64], trend: &mut [f64], seasonal: &mut [f64]) {
    let tbar = weighted_mean(t, w);
    let m = weighted_mean(seasonal, w);
    let stt: f64 = t.iter().zip(w).map(|(a, b)| b * (a - tbar) * (a - tbar)).sum();
    let slope = if stt > 0.0 {
        t.iter()
            .zip(w)
            .zip(seasonal.iter())
            .map(|((a, b), s)| b * (a - tbar) * (s - m))
            .sum::<f64>()
            / stt
    } else {
        0.0
    };
    for k in 0..t.len() {
        let shift = m + slope * (t[k] - tbar);
        seasonal[k] -= shift;
        trend[k] += shift;
    }
}

/// Cholesky factorization of a symmetric band matrix given by its lower band:
/// `a[i][b - (i - j)]` holds entry `(i, j)` for `i - b <= j <= i`.
/// Returns `None` unless the matrix is numerically positive definite.
fn band_cholesky(a: &mut [Vec<f64>], b: usize) -> Option<()> {
    let n = a.len();
    for i in 0..n {
        for j in i.saturating_sub(b)..=i {
            let mut s = a[i][b + j - i];
            for k in i.saturating_sub(b)..j {
                s -= a[i][b + k - i] * a[j][b + k - j];
            }
            if i == j {
                let scale = a[i][b].abs().max(f64::MIN_POSITIVE);
                if !(s > 1e-13 * scale) {
                    return None;
                }
                a[i][b] = s.sqrt();
            } else {
                a[i][b + j - i] = s / a[j][b];
            }
        }
    }
    Some(())
}

fn band_solve(l: &[Vec<f64>], b: usize, rhs: &mut [f64]) {
    let n = l.len();
    for i in 0..n {
        let mut s = rhs[i];
        for k in i.saturating_sub(b)..i {
            s -= l[i][b + k - i] * rhs[k];
        }
        rhs[i] = s / l[i][b];
    }
    for i in (0..n).rev() {
        let mut s = rhs[i];
        for k in i + 1..n.min(i + b + 1) {
            s -= l[k][b + i - k] * rhs[k];
        }
        rhs[i] = s / l[i][b];
    }
}

/// Minimizes `Σ w(r - T - S)² + λ_T‖D₂T‖² + λ_S Σ_φ‖D₂S_φ‖²` directly.
/// Unknowns are ordered `T_0, S_0, T_1, S_1, ..`. Straight lines can move
/// freely between trend and season, so the season is pinned to zero at the
/// first and last point; the minimizer set contains exactly one such member.
/// Returns `None` when the band is too wide or the system is singular.
fn joint_penalized(
    t: &[f64],
    w: &[f64],
    partition: &PhasePartition,
    residual: &[f64],
    lambda_trend: f64,
    lambda_seasonal: f64,
) -> Option<(Vec<f64>, Vec<f64>)> {
    let m = t.len();
    if m < 3 {
        return None;
    }
    let mut b = 4;
    for set in &partition.phase_sets {
        for q in set.windows(3) {
            b = b.max(2 * (q[2] - q[0]));
        }
    }
    if m.saturating_mul(b).saturating_mul(b) > JOINT_SOLVE_BUDGET {
        return None;
    }
    let n = 2 * m;
    let mut a = vec![vec![0.0f64; b + 1]; n];
    let mut add = |i: usize, j: usize, v: f64| {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        a[i][b + j - i] += v;
    };
    let mut rhs = vec![0.0; n];
    for k in 0..m {
        add(2 * k, 2 * k, w[k]);
        add(2 * k + 1, 2 * k + 1, w[k]);
        add(2 * k + 1, 2 * k, w[k]);
        rhs[2 * k] = w[k] * residual[k];
        rhs[2 * k + 1] = w[k] * residual[k];
    }
    let mut add_rows = |cols: [usize; 3], d: [f64; 3], lambda: f64| {
        for x in 0..3 {
            for y in 0..=x {
                add(cols[x], cols[y], lambda * d[x] * d[y]);
            }
        }
    };
    for k in 0..m - 2 {
        add_rows([2 * k, 2 * k + 2, 2 * k + 4], second_difference_row(t, k), lambda_trend);
    }
    for set in &partition.phase_sets {
        if set.len() < 3 {
            continue;
        }
        let pt: Vec<f64> = set.iter().map(|&q| t[q]).collect();
        for (j, q) in set.windows(3).enumerate() {
            add_rows(
                [2 * q[0] + 1, 2 * q[1] + 1, 2 * q[2] + 1],
                second_difference_row(&pt, j),
                lambda_seasonal,
            );
        }
    }
    let pin = w.iter().cloned().fold(0.0, f64::max);
    add(1, 1, pin);
    add(n - 1, n - 1, pin);
    let original = a.clone();
    band_cholesky(&mut a, b)?;
    let mut x = rhs.clone();
    band_solve(&a, b, &mut x);
    // one step of iterative refinement
    let mut r = rhs;
    for i in 0..n {
        for j in i.saturating_sub(b)..=i {
            let v = original[i][b + j - i];
            r[i] -= v * x[j];
            if j != i {
                r[j] -= v * x[i];
            }
        }
    }
    band_solve(&a, b, &mut r);
    x.iter_mut().zip(&r).for_each(|(v, d)| *v += d);
    if x.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let trend = (0..m).map(|k| x[2 * k]).collect();
    let seasonal = (0..m).map(|k| x[2 * k + 1]).collect();
    Some((trend, seasonal))
}

/// Decomposes `residual` (aligned with the compressed points of `series`)
/// into trend and per-phase seasonal curves. `init` warm-starts the seasonal
/// part.
pub fn decompose(
    series: &CompressedSeries,
    partition: &PhasePartition,
    residual: &[f64],
    config: &DecomposeConfig,
    init: Option<&TemporalComponents>,
) -> Result<TemporalComponents> {
    let m = series.len();
    if m == 0 || partition.phase_sets.iter().all(|s| s.is_empty()) {
        return Err(FxamError::EmptySeries);
    }
    if residual.len() != m {
        return Err(FxamError::LengthMismatch {
            what: "residual".into(),
            found: residual.len(),
            expected: m,
        });
    }
    let t = series.times_f64();
    let w = series.weights_f64();
    let phase_knots: Vec<Vec<f64>> = partition
        .phase_sets
        .iter()
        .map(|s| s.iter().map(|&k| t[k]).collect())
        .collect();
    let phase_weights: Vec<Vec<f64>> = partition
        .phase_sets
        .iter()
        .map(|s| s.iter().map(|&k| w[k]).collect())
        .collect();
    let trend_param = smoothing_param(config.backend, &t, config.lambda_trend, config.bandwidth_factor);
    let phase_params: Vec<f64> = phase_knots
        .iter()
        .map(|k| smoothing_param(config.backend, k, config.lambda_seasonal, config.bandwidth_factor))
        .collect();

    let mut comp = match init {
        Some(c) if c.times == series.times => c.clone(),
        _ => TemporalComponents::zeros(series, partition),
    };
    let direct = match config.backend {
        Backend::Penalized => {
            joint_penalized(&t, &w, partition, residual, config.lambda_trend, config.lambda_seasonal)
        }
        Backend::Kernel => None,
    };
    let sweeps = match direct {
        Some((trend, seasonal)) => {
            comp.trend = trend;
            comp.seasonal = seasonal;
            canonicalize(&t, &w, &mut comp.trend, &mut comp.seasonal);
            comp.iterations = 1;
            0
        }
        None => config.max_iter.max(1),
    };
    let threshold = config.tol * weighted_sd(residual, &w);
    let mut target = vec![0.0; m];
    for it in 1..=sweeps {
        let prev_trend = comp.trend.clone();
        let prev_seasonal = comp.seasonal.clone();

        for k in 0..m {
            target[k] = residual[k] - comp.seasonal[k];
        }
        comp.trend = smooth(config.backend, &SmoothRequest::weighted(&t, &target, &w, trend_param))?;

        for (phi, set) in partition.phase_sets.iter().enumerate() {
            if set.is_empty() {
                continue;
            }
            let y: Vec<f64> = set.iter().map(|&k| residual[k] - comp.trend[k]).collect();
            let fit = smooth(
                config.backend,
                &SmoothRequest::weighted(&phase_knots[phi], &y, &phase_weights[phi], phase_params[phi]),
            )?;
            for (&k, v) in set.iter().zip(fit) {
                comp.seasonal[k] = v;
            }
        }
        canonicalize(&t, &w, &mut comp.trend, &mut comp.seasonal);

        comp.iterations = it;
        let change = comp
            .trend
            .iter()
            .zip(&prev_trend)
            .chain(comp.seasonal.iter().zip(&prev_seasonal))
            .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
        if !change.is_finite() {
            return Err(FxamError::InvalidInput("non-finite temporal component".into()));
        }
        if change <= threshold {
            break;
        }
    }
    comp.seasonal_by_phase = partition
        .phase_sets
        .iter()
        .map(|s| s.iter().map(|&k| comp.seasonal[k]).collect())
        .collect();
    Ok(comp)
}

/// Piecewise-linear interpolation on sorted knots, clamped outside.
pub fn interpolate_clamped(knots: &[f64], values: &[f64], x: f64) -> f64 {
    let n = knots.len();
    if n == 0 {
        return 0.0;
    }
    if x <= knots[0] {
        return values[0];
    }
    if x >= knots[n - 1] {
        return values[n - 1];
    }
    let hi = knots.partition_point(|&k| k <= x);
    let lo = hi - 1;
    if knots[lo] == x {
        return values[lo];
    }
    let s = (x - knots[lo]) / (knots[hi] - knots[lo]);
    values[lo] + s * (values[hi] - values[lo])
}

/// Trend and seasonal value at time `t`. Empty phases contribute zero.
pub fn evaluate_temporal(
    components: &TemporalComponents,
    partition: &PhasePartition,
    t: i64,
) -> Result<(f64, f64)> {
    let phi = phase_of(t, partition.tau, partition.period)?;
    let times: Vec<f64> = components.times.iter().map(|&v| v as f64).collect();
    let trend = interpolate_clamped(&times, &components.trend, t as f64);
    let set = &partition.phase_sets[phi];
    let phase_times: Vec<f64> = set.iter().map(|&k| times[k]).collect();
    let seasonal = interpolate_clamped(&phase_times, &components.seasonal_by_phase[phi], t as f64);
    Ok((trend, seasonal))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::{compress_time_points, partition_phases};

    fn setup(times: &[i64], values: &[f64], d: usize) -> (CompressedSeries, PhasePartition) {
        let s = compress_time_points(times, values).unwrap();
        let p = partition_phases(&s, 1, d).unwrap();
        (s, p)
    }

    #[test]
    fn constant_residual_goes_to_trend() {
        let times: Vec<i64> = (0..40).collect();
        let (s, p) = setup(&times, &[3.0; 40], 4);
        for backend in [Backend::Kernel, Backend::Penalized] {
            let cfg = DecomposeConfig {
                backend,
                ..Default::default()
            };
            let c = decompose(&s, &p, &s.values, &cfg, None).unwrap();
            for k in 0..40 {
                assert!((c.trend[k] - 3.0).abs() < 1e-12, "{backend:?} {:e}", c.trend[k] - 3.0);
                assert!(c.seasonal[k].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn direct_solution_is_a_fixed_point_of_the_alternation() {
        // irregular times with repeats, so weights and gaps vary
        let times: Vec<i64> = (0..150).map(|i| (i * 7 % 97) as i64 + (i % 3) as i64 * 40).collect();
        let values: Vec<f64> = times
            .iter()
            .enumerate()
            .map(|(i, &t)| (t as f64 * 0.05).sin() * 3.0 + (t % 5) as f64 + ((i * 31 % 17) as f64 - 8.0) * 0.1)
            .collect();
        let (s, p) = setup(&times, &values, 5);
        let w = s.weights_f64();
        let t = s.times_f64();
        let cfg = DecomposeConfig {
            backend: Backend::Penalized,
            lambda_trend: 2.0,
            lambda_seasonal: 0.5,
            ..Default::default()
        };
        let c = decompose(&s, &p, &s.values, &cfg, None).unwrap();
        assert_eq!(c.iterations, 1);
        let scale = s.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));

        let target: Vec<f64> = s.values.iter().zip(&c.seasonal).map(|(r, v)| r - v).collect();
        let trend = smooth(Backend::Penalized, &SmoothRequest::weighted(&t, &target, &w, 2.0)).unwrap();
        for (a, b) in trend.iter().zip(&c.trend) {
            assert!((a - b).abs() < 1e-9 * scale, "trend {a} vs {b}");
        }
        for set in &p.phase_sets {
            let pt: Vec<f64> = set.iter().map(|&k| t[k]).collect();
            let pw: Vec<f64> = set.iter().map(|&k| w[k]).collect();
            let y: Vec<f64> = set.iter().map(|&k| s.values[k] - c.trend[k]).collect();
            let fit = smooth(Backend::Penalized, &SmoothRequest::weighted(&pt, &y, &pw, 0.5)).unwrap();
            for (&k, f) in set.iter().zip(&fit) {
                assert!((f - c.seasonal[k]).abs() < 1e-9 * scale, "season {f} vs {}", c.seasonal[k]);
            }
        }
    }

    #[test]
    fn linear_ramp_has_no_seasonal_part() {
        let times: Vec<i64> = (0..60).collect();
        let ramp: Vec<f64> = times.iter().map(|&t| 0.5 * t as f64 - 3.0).collect();
        let (s, p) = setup(&times, &ramp, 5);
        let cfg = DecomposeConfig {
            backend: Backend::Penalized,
            lambda_trend: 10.0,
            lambda_seasonal: 10.0,
            ..Default::default()
        };
        let c = decompose(&s, &p, &s.values, &cfg, None).unwrap();
        let range = 0.5 * 59.0;
        for k in 0..60 {
            assert!(c.seasonal[k].abs() <= 1e-3 * range);
            assert!((c.trend[k] - ramp[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn recentring_keeps_total() {
        let t = [0.0, 1.0, 2.0, 3.0];
        let w = [1.0, 2.0, 1.0, 3.0];
        let mut trend = vec![0.5, 0.1, -0.2, 0.3];
        let mut seasonal = vec![1.0, -2.0, 4.0, 0.5];
        let before: Vec<f64> = trend.iter().zip(&seasonal).map(|(a, b)| a + b).collect();
        canonicalize(&t, &w, &mut trend, &mut seasonal);
        for k in 0..4 {
            assert!((trend[k] + seasonal[k] - before[k]).abs() < 1e-12);
        }
        assert!(weighted_mean(&seasonal, &w).abs() < 1e-12);
    }

    #[test]
    fn empty_phase_and_errors() {
        let (s, p) = setup(&[0, 1, 3, 4, 5, 7], &[1.0, 2.0, 0.0, 1.5, 2.5, 0.5], 4);
        let c = decompose(&s, &p, &s.values, &DecomposeConfig::default(), None).unwrap();
        assert!(c.seasonal_by_phase[2].is_empty());
        let (_, seas) = evaluate_temporal(&c, &p, 6).unwrap();
        assert_eq!(seas, 0.0);
        let bad = PhasePartition {
            period: 2,
            tau: 1,
            phase_sets: vec![vec![], vec![]],
        };
        assert!(decompose(&s, &bad, &s.values, &DecomposeConfig::default(), None).is_err());
    }

    #[test]
    fn evaluation_rules() {
        let (s, p) = setup(&[0, 1, 2, 3, 4, 5, 6, 7], &[0.0; 8], 2);
        let c = TemporalComponents {
            times: s.times.clone(),
            trend: (0..8).map(|v| v as f64).collect(),
            seasonal: vec![1.0, -1.0, 3.0, -3.0, 1.0, -1.0, 3.0, -3.0],
            seasonal_by_phase: vec![vec![1.0, 3.0, 1.0, 3.0], vec![-1.0, -3.0, -1.0, -3.0]],
            iterations: 0,
        };
        assert_eq!(evaluate_temporal(&c, &p, 2).unwrap(), (2.0, 3.0));
        assert_eq!(evaluate_temporal(&c, &p, 20).unwrap(), (7.0, 3.0));
        assert_eq!(evaluate_temporal(&c, &p, -4).unwrap(), (0.0, 1.0));
        let p2 = PhasePartition { tau: 2, ..p.clone() };
        assert!(evaluate_temporal(&c, &p2, 3).is_err());
    }

    #[test]
    fn interpolation_between_phase_points() {
        // phase 0 observed at 0 and 4 only
        let (s, p) = setup(&[0, 1, 3, 4], &[0.0; 4], 2);
        let c = TemporalComponents {
            times: s.times.clone(),
            trend: vec![0.0; 4],
            seasonal: vec![2.0, 0.0, 0.0, 4.0],
            seasonal_by_phase: vec![vec![2.0, 4.0], vec![0.0, 0.0]],
            iterations: 0,
        };
        assert_eq!(evaluate_temporal(&c, &p, 2).unwrap().1, 3.0);
    }
}
