//! Objective evaluation and the normal-equation oracles.
//!
//! At a stationary point every block satisfies `f_j = M_j (y - α - Σ_{i≠j} f_i)`
//! with `M_j` the block's linear smoother. The helpers here build those
//! smoothers as explicit dense matrices, so they are only meant for small
//! problems.

use nalgebra::{DMatrix, DVector};

use super::{Components, Layout, TrainConfig, TrainState};
use crate::data_model::Dataset;
use crate::error::{FxamError, Result};
use crate::smoothers::{default_bandwidth, smoother_matrix_bounded, Backend};
use crate::temporal::TemporalComponents;

/// Record bound for [`normal_equation_residuals`].
pub const NORMAL_RESIDUAL_BOUND: usize = 500;
/// Bound on the stacked dimension for [`normal_equation_direct_solve`].
pub const DIRECT_SOLVE_BOUND: usize = 5000;

/// `‖y - fitted‖² + penalties`. With the kernel backend only the residual
/// sum of squares is returned (see `TrainDiagnostics::objective_kind`).
pub fn objective_value(state: &TrainState, config: &TrainConfig) -> f64 {
    let fit = state.layout.fitted(&state.comp);
    let rss: f64 = state
        .layout
        .y
        .iter()
        .zip(&fit)
        .map(|(y, f)| (y - f) * (y - f))
        .sum();
    match config.backend {
        Backend::Penalized => rss + state.layout.penalty(&state.comp, config),
        Backend::Kernel => rss,
    }
}

/// Normal-equation residual of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockResidual {
    pub block: String,
    pub value: f64,
}

fn temporal_params(backend: Backend, knots: &[f64], lambda: f64, factor: f64) -> f64 {
    match backend {
        Backend::Penalized => lambda,
        Backend::Kernel => default_bandwidth(knots, factor),
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// `‖f_j - M_j(y - α - Σ_{i≠j} f_i)‖∞` for every block, in record space,
/// plus `|mean(residual)|` for the intercept.
pub fn normal_equation_residuals(state: &TrainState, config: &TrainConfig) -> Result<Vec<BlockResidual>> {
    let layout = &state.layout;
    let n = layout.n();
    if n > NORMAL_RESIDUAL_BOUND {
        return Err(FxamError::TestSupportOnly {
            dim: n,
            bound: NORMAL_RESIDUAL_BOUND,
        });
    }
    let fit = layout.fitted(&state.comp);
    let resid: Vec<f64> = layout.y.iter().zip(&fit).map(|(y, f)| y - f).collect();
    let mut out = vec![BlockResidual {
        block: "intercept".into(),
        value: (resid.iter().sum::<f64>() / n as f64).abs(),
    }];

    for (i, nl) in layout.numeric.iter().enumerate() {
        let own = nl.grid.expand(&state.comp.numeric[i]);
        let t: Vec<f64> = resid.iter().zip(&own).map(|(r, o)| r + o).collect();
        let s = smoother_matrix_bounded(
            config.backend,
            &nl.grid.knots,
            Some(&nl.grid.counts),
            nl.param,
            NORMAL_RESIDUAL_BOUND,
        )?;
        let pred = &s * DVector::from_vec(nl.grid.means(&t));
        let pred = nl.grid.expand(pred.as_slice());
        out.push(BlockResidual {
            block: nl.name.clone(),
            value: max_abs_diff(&own, &pred),
        });
    }

    if let Some(cl) = &layout.categorical {
        let own = cl.encoding.expand(&state.comp.beta, n);
        let t: Vec<f64> = resid.iter().zip(&own).map(|(r, o)| r + o).collect();
        let g = cl.gram.to_dense();
        let chol = g.cholesky().ok_or(FxamError::Singular)?;
        let beta = chol.solve(&DVector::from_vec(cl.encoding.transpose_apply(&t)));
        let pred = cl.encoding.expand(beta.as_slice(), n);
        out.push(BlockResidual {
            block: "categorical".into(),
            value: max_abs_diff(&own, &pred),
        });
    }

    for (k, tl) in layout.temporal.iter().enumerate() {
        let tc = &state.comp.temporal[k];
        let times = tl.series.times_f64();
        let w = tl.series.weights_f64();

        let own = tl.series.expand(&tc.trend);
        let t: Vec<f64> = resid.iter().zip(&own).map(|(r, o)| r + o).collect();
        let param = temporal_params(config.backend, &times, config.lambda_trend, config.bandwidth_factor);
        let s = smoother_matrix_bounded(config.backend, &times, Some(&w), param, NORMAL_RESIDUAL_BOUND)?;
        let pred = &s * DVector::from_vec(tl.series.recompress(&t));
        out.push(BlockResidual {
            block: format!("{}.trend", tl.name),
            value: max_abs_diff(&own, &tl.series.expand(pred.as_slice())),
        });

        let own = tl.series.expand(&tc.seasonal);
        let t: Vec<f64> = resid.iter().zip(&own).map(|(r, o)| r + o).collect();
        let points = tl.series.recompress(&t);
        let mut pred = vec![0.0; tl.series.len()];
        for set in &tl.partition.phase_sets {
            if set.is_empty() {
                continue;
            }
            let pk: Vec<f64> = set.iter().map(|&p| times[p]).collect();
            let pw: Vec<f64> = set.iter().map(|&p| w[p]).collect();
            let param = temporal_params(config.backend, &pk, config.lambda_seasonal, config.bandwidth_factor);
            let s = smoother_matrix_bounded(config.backend, &pk, Some(&pw), param, NORMAL_RESIDUAL_BOUND)?;
            let v = &s * DVector::from_iterator(set.len(), set.iter().map(|&p| points[p]));
            for (&p, val) in set.iter().zip(v.iter()) {
                pred[p] = *val;
            }
        }
        out.push(BlockResidual {
            block: format!("{}.seasonal", tl.name),
            value: max_abs_diff(&own, &tl.series.expand(&pred)),
        });
    }
    Ok(out)
}

/// `(W + λK)⁻¹` on weighted knots, from the smoother applied to unit
/// vectors: the smoother matrix is `(W + λK)⁻¹W`.
fn inverse_system(knots: &[f64], weights: &[f64], lambda: f64) -> Result<DMatrix<f64>> {
    let mut s = smoother_matrix_bounded(Backend::Penalized, knots, Some(weights), lambda, DIRECT_SOLVE_BOUND)?;
    for (j, w) in weights.iter().enumerate() {
        s.column_mut(j).scale_mut(1.0 / w);
    }
    Ok(s)
}

/// Solves the stationarity system of the penalized objective directly.
///
/// Unknowns are the compact parameters `[α, f_1.., β, (f_T, f_S)..]`. Each
/// block contributes the rows `θ_j + S_j Σ_{i≠j} A_i θ_i = S_j y` with
/// `S_j = (A_jᵀA_j + P_j)⁻¹A_jᵀ`. Constants and straight lines that can move
/// freely between blocks are pinned by the same centering conventions the
/// trainer uses, and the stacked system is solved in the least-squares
/// sense.
pub fn normal_equation_direct_solve(dataset: &Dataset, config: &TrainConfig) -> Result<Components> {
    if config.backend != Backend::Penalized {
        return Err(FxamError::InconsistentConfig(
            "the direct solve needs the penalized backend".into(),
        ));
    }
    let layout = Layout::build(dataset, config, None)?;
    let n = layout.n();

    // coordinate ranges
    let mut offsets = vec![0usize, 1];
    for nl in &layout.numeric {
        offsets.push(offsets.last().unwrap() + nl.grid.len());
    }
    let c = layout.categorical.as_ref().map_or(0, |cl| cl.encoding.cardinality());
    offsets.push(offsets.last().unwrap() + c);
    for tl in &layout.temporal {
        let m = tl.series.len();
        offsets.push(offsets.last().unwrap() + m);
        offsets.push(offsets.last().unwrap() + m);
    }
    let dim = *offsets.last().unwrap();
    if dim > DIRECT_SOLVE_BOUND {
        return Err(FxamError::TestSupportOnly {
            dim,
            bound: DIRECT_SOLVE_BOUND,
        });
    }
    let p = layout.numeric.len();
    let cat_block = 1 + p;
    let blocks = offsets.len() - 1;

    // active columns of every record
    let record_cols = |l: usize| -> Vec<usize> {
        let mut cols = vec![0];
        for (i, nl) in layout.numeric.iter().enumerate() {
            cols.push(offsets[1 + i] + nl.grid.back_map[l]);
        }
        if let Some(cl) = &layout.categorical {
            cols.extend(cl.encoding.row(l).iter().map(|&j| offsets[cat_block] + j));
        }
        for (k, tl) in layout.temporal.iter().enumerate() {
            let pt = tl.series.back_map[l];
            cols.push(offsets[cat_block + 1 + 2 * k] + pt);
            cols.push(offsets[cat_block + 2 + 2 * k] + pt);
        }
        cols
    };
    let mut ata = DMatrix::<f64>::zeros(dim, dim);
    let mut aty = DVector::<f64>::zeros(dim);
    for l in 0..n {
        let cols = record_cols(l);
        for &a in &cols {
            aty[a] += layout.y[l];
            for &b in &cols {
                ata[(a, b)] += 1.0;
            }
        }
    }

    // (A_jᵀA_j + P_j)⁻¹ per block
    let mut inverses: Vec<DMatrix<f64>> = Vec::with_capacity(blocks);
    inverses.push(DMatrix::from_element(1, 1, 1.0 / n as f64));
    for nl in &layout.numeric {
        inverses.push(inverse_system(&nl.grid.knots, &nl.grid.counts, config.lambda_num)?);
    }
    if let Some(cl) = &layout.categorical {
        let g = cl.gram.to_dense();
        inverses.push(g.cholesky().ok_or(FxamError::Singular)?.inverse());
    } else {
        inverses.push(DMatrix::zeros(0, 0));
    }
    for tl in &layout.temporal {
        let times = tl.series.times_f64();
        let w = tl.series.weights_f64();
        inverses.push(inverse_system(&times, &w, config.lambda_trend)?);
        let m = tl.series.len();
        let mut inv = DMatrix::zeros(m, m);
        for set in &tl.partition.phase_sets {
            if set.is_empty() {
                continue;
            }
            let pk: Vec<f64> = set.iter().map(|&q| times[q]).collect();
            let pw: Vec<f64> = set.iter().map(|&q| w[q]).collect();
            let local = inverse_system(&pk, &pw, config.lambda_seasonal)?;
            for (a, &qa) in set.iter().enumerate() {
                for (b, &qb) in set.iter().enumerate() {
                    inv[(qa, qb)] = local[(a, b)];
                }
            }
        }
        inverses.push(inv);
    }

    // constraint rows
    let mut constraints: Vec<Vec<(usize, f64)>> = Vec::new();
    let nf = n as f64;
    for (i, nl) in layout.numeric.iter().enumerate() {
        constraints.push(
            nl.grid
                .counts
                .iter()
                .enumerate()
                .map(|(k, c)| (offsets[1 + i] + k, c / nf))
                .collect(),
        );
    }
    for (k, tl) in layout.temporal.iter().enumerate() {
        let w = tl.series.weights_f64();
        let t = tl.series.times_f64();
        let tbar = t.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / nf;
        let scale = t.iter().map(|a| (a - tbar).abs()).fold(0.0, f64::max).max(1.0);
        let (ot, os) = (offsets[cat_block + 1 + 2 * k], offsets[cat_block + 2 + 2 * k]);
        constraints.push(w.iter().enumerate().map(|(q, wq)| (ot + q, wq / nf)).collect());
        constraints.push(w.iter().enumerate().map(|(q, wq)| (os + q, wq / nf)).collect());
        constraints.push(
            w.iter()
                .zip(&t)
                .enumerate()
                .map(|(q, (wq, tq))| (os + q, wq * (tq - tbar) / (nf * scale)))
                .collect(),
        );
    }

    let rows = dim + constraints.len();
    let mut sys = DMatrix::<f64>::zeros(rows, dim);
    let mut rhs = DVector::<f64>::zeros(rows);
    for j in 0..blocks {
        let (lo, hi) = (offsets[j], offsets[j + 1]);
        if hi == lo {
            continue;
        }
        let mut coupling = ata.rows(lo, hi - lo).into_owned();
        coupling.columns_mut(lo, hi - lo).fill(0.0);
        let block_rows = &inverses[j] * coupling;
        sys.view_mut((lo, 0), (hi - lo, dim)).copy_from(&block_rows);
        for d in lo..hi {
            sys[(d, d)] += 1.0;
        }
        let r = &inverses[j] * aty.rows(lo, hi - lo);
        rhs.rows_mut(lo, hi - lo).copy_from(&r);
    }
    for (r, row) in constraints.iter().enumerate() {
        for &(col, v) in row {
            sys[(dim + r, col)] = v;
        }
    }
    let theta = sys
        .svd(true, true)
        .solve(&rhs, 1e-13)
        .map_err(|e| FxamError::InvalidInput(e.to_string()))?;

    let mut comp = Components {
        alpha: theta[0],
        numeric: (0..p)
            .map(|i| theta.rows(offsets[1 + i], offsets[2 + i] - offsets[1 + i]).iter().copied().collect())
            .collect(),
        beta: theta.rows(offsets[cat_block], c).iter().copied().collect(),
        temporal: Vec::new(),
    };
    for (k, tl) in layout.temporal.iter().enumerate() {
        let m = tl.series.len();
        let trend: Vec<f64> = theta.rows(offsets[cat_block + 1 + 2 * k], m).iter().copied().collect();
        let seasonal: Vec<f64> = theta.rows(offsets[cat_block + 2 + 2 * k], m).iter().copied().collect();
        let seasonal_by_phase = tl
            .partition
            .phase_sets
            .iter()
            .map(|s| s.iter().map(|&q| seasonal[q]).collect())
            .collect();
        comp.temporal.push(TemporalComponents {
            times: tl.series.times.clone(),
            trend,
            seasonal,
            seasonal_by_phase,
            iterations: 0,
        });
    }
    Ok(comp)
}
