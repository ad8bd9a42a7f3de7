//! Pilot estimates for sample-size selection, and the predictive-power score
//! used to order numerical features.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::data_model::KnotGrid;
use crate::error::{FxamError, Result};
use crate::smoothers::{default_bandwidth, smooth, Backend, SmoothRequest};

/// Pilot statistics of one numerical feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PilotEstimates {
    /// Mean squared residual around the pilot curve.
    pub sigma2: f64,
    /// Largest squared pilot-curve value.
    pub sup_f2: f64,
    /// Largest absolute slope between consecutive pilot knots.
    pub u_max: f64,
}

/// Largest `|Δf/Δx|` between consecutive knots.
pub(crate) fn max_slope(knots: &[f64], f: &[f64]) -> f64 {
    knots
        .windows(2)
        .zip(f.windows(2))
        .map(|(x, v)| ((v[1] - v[0]) / (x[1] - x[0])).abs())
        .fold(0.0, f64::max)
}

pub(crate) fn pilot_on_rows(x: &[f64], y: &[f64], config: &TrainConfig) -> Result<PilotEstimates> {
    let grid = KnotGrid::from_values(x)?;
    let means = grid.means(y);
    let param = match config.backend {
        Backend::Kernel => default_bandwidth(&grid.knots, config.bandwidth_factor),
        Backend::Penalized => config.lambda_num,
    };
    let curve = smooth(
        config.backend,
        &SmoothRequest::weighted(&grid.knots, &means, &grid.counts, param),
    )?;
    let sigma2 = y
        .iter()
        .zip(&grid.back_map)
        .map(|(v, &k)| (v - curve[k]) * (v - curve[k]))
        .sum::<f64>()
        / y.len() as f64;
    let sup_f2 = curve.iter().map(|v| v * v).fold(0.0, f64::max);
    Ok(PilotEstimates {
        sigma2,
        sup_f2,
        u_max: max_slope(&grid.knots, &curve),
    })
}

/// Pilot estimates from a uniform subsample of `min(n0, N)` records.
pub fn pilot_estimates(
    x: &[f64],
    y: &[f64],
    n0: usize,
    seed: u64,
    config: &TrainConfig,
) -> Result<PilotEstimates> {
    if x.len() != y.len() {
        return Err(FxamError::LengthMismatch {
            what: "y".into(),
            found: y.len(),
            expected: x.len(),
        });
    }
    if n0 < 10 {
        return Err(FxamError::InvalidInput("pilot size must be at least 10".into()));
    }
    let n = x.len();
    if n0 >= n {
        return pilot_on_rows(x, y, config);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = rand::seq::index::sample(&mut rng, n, n0).into_vec();
    let xs: Vec<f64> = rows.iter().map(|&l| x[l]).collect();
    let ys: Vec<f64> = rows.iter().map(|&l| y[l]).collect();
    pilot_on_rows(&xs, &ys, config)
}

/// `max(n0, ceil(max_i γ (σ̂ᵢ² + sup F̂ᵢ²) Ûᵢ))`.
pub fn estimate_sample_size(pilots: &[PilotEstimates], gamma: f64, n0: usize) -> usize {
    let raw = pilots
        .iter()
        .map(|p| gamma * (p.sigma2 + p.sup_f2) * p.u_max)
        .fold(0.0, f64::max);
    let n = raw.ceil();
    if n >= usize::MAX as f64 {
        usize::MAX
    } else {
        (n as usize).max(n0)
    }
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// `2·TSS·r²/(N-2) - (2·U·B·h)²` with `r` the correlation between the feature
/// and the partial residual, and `TSS` the residual's total sum of squares.
pub fn predictive_power(x: &[f64], residual: &[f64], u: f64, b: f64, h: f64) -> f64 {
    let n = x.len();
    let penalty = (2.0 * u * b * h).powi(2);
    if n < 3 {
        return -penalty;
    }
    let m = residual.iter().sum::<f64>() / n as f64;
    let tss: f64 = residual.iter().map(|v| (v - m) * (v - m)).sum();
    let r = pearson(x, residual);
    2.0 * tss * r * r / (n as f64 - 2.0) - penalty
}

/// Indices sorted by descending power; ties keep their original order.
pub fn order_features(powers: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..powers.len()).collect();
    idx.sort_by(|&a, &b| powers[b].total_cmp(&powers[a]));
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_size_rule() {
        let one = PilotEstimates {
            sigma2: 1.0,
            sup_f2: 4.0,
            u_max: 2.0,
        };
        assert_eq!(estimate_sample_size(&[one], 1.0, 3), 10);
        assert_eq!(estimate_sample_size(&[one], 1.0, 100), 100);
        let a = PilotEstimates {
            sigma2: 0.0,
            sup_f2: 10.0,
            u_max: 1.0,
        };
        let b = PilotEstimates {
            sigma2: 0.0,
            sup_f2: 10.0,
            u_max: 3.0,
        };
        assert_eq!(estimate_sample_size(&[a, b], 1.0, 1), 30);
        assert_eq!(estimate_sample_size(&[a, b], 0.5, 1), 15);
    }

    #[test]
    fn ordering() {
        assert_eq!(order_features(&[1.0, 3.0, 2.0]), vec![1, 2, 0]);
        assert_eq!(order_features(&[2.0, 2.0, 2.0]), vec![0, 1, 2]);
        assert_eq!(order_features(&[5.0]), vec![0]);
    }

    #[test]
    fn power_conventions() {
        let x: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let p = predictive_power(&x, &[3.0; 50], 0.5, 1.0, 2.0);
        assert_eq!(p, -(2.0f64 * 0.5 * 2.0).powi(2));
        let lin: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let m = lin.iter().sum::<f64>() / 50.0;
        let tss: f64 = lin.iter().map(|v| (v - m) * (v - m)).sum();
        let p = predictive_power(&x, &lin, 0.0, 1.0, 2.0);
        assert!((p - 2.0 * tss / 48.0).abs() < 1e-9 * p);
    }

    #[test]
    fn pilot_on_constant_response() {
        let x: Vec<f64> = (0..100).map(|i| i as f64 / 10.0).collect();
        let cfg = TrainConfig::default();
        let p = pilot_estimates(&x, &[5.0; 100], 1000, 1, &cfg).unwrap();
        assert!((p.sup_f2 - 25.0).abs() < 1e-9);
        assert!(p.u_max < 1e-9);
        assert!(p.sigma2 < 1e-18);
    }

    #[test]
    fn pilot_on_linear_response_penalized() {
        let x: Vec<f64> = (0..400).map(|i| i as f64 / 40.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let cfg = TrainConfig {
            backend: Backend::Penalized,
            ..Default::default()
        };
        let p = pilot_estimates(&x, &y, 100, 7, &cfg).unwrap();
        assert!((p.u_max - 2.0).abs() < 1e-6);
        assert!(p.sigma2 < 1e-12);
    }

    #[test]
    fn constant_feature_has_no_slope() {
        let cfg = TrainConfig::default();
        let p = pilot_estimates(&[1.0; 20], &(0..20).map(|i| i as f64).collect::<Vec<_>>(), 20, 0, &cfg)
            .unwrap();
        assert_eq!(p.u_max, 0.0);
    }
}
