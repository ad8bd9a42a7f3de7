//! Joint ridge solve for all categorical weights.
//!
//! The Gram matrix `G = ZᵀZ + λ_Z I` of the q-hot design is assembled once
//! from the active indices of every record (never forming `Z` densely) and
//! the quadratic `½βᵀGβ - bᵀβ` is minimized by Nesterov-accelerated gradient
//! descent with step `1/λ_max(G)`, the dominant eigenvalue coming from power
//! iteration.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::data_model::CategoricalEncoding;
use crate::error::{FxamError, Result};

/// Below this cardinality the Gram matrix is stored densely.
pub const DENSE_GRAM_LIMIT: usize = 64;
/// Largest cardinality accepted by [`closed_form_ridge`].
pub const CLOSED_FORM_BOUND: usize = 1000;

pub const DEFAULT_NGA_TOL: f64 = 1e-8;

pub fn default_max_iter(c: usize) -> usize {
    1000.max(10 * c)
}

/// Symmetric linear map `v ↦ Av`.
pub trait SymmetricOperator {
    fn dim(&self) -> usize;
    fn apply(&self, v: &[f64], out: &mut [f64]);
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn nnz(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Gram {
    Dense(DMatrix<f64>),
    Sparse(CsrMatrix),
}

impl Gram {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self {
            Gram::Dense(m) => m[(i, j)],
            Gram::Sparse(s) => {
                let cols = &s.col_idx[s.row_ptr[i]..s.row_ptr[i + 1]];
                cols.binary_search(&j)
                    .map(|k| s.values[s.row_ptr[i] + k])
                    .unwrap_or(0.0)
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Gram::Dense(m) => m.clone(),
            Gram::Sparse(s) => {
                let mut m = DMatrix::zeros(s.n, s.n);
                for i in 0..s.n {
                    for k in s.row_ptr[i]..s.row_ptr[i + 1] {
                        m[(i, s.col_idx[k])] = s.values[k];
                    }
                }
                m
            }
        }
    }
}

impl SymmetricOperator for Gram {
    fn dim(&self) -> usize {
        match self {
            Gram::Dense(m) => m.nrows(),
            Gram::Sparse(s) => s.n,
        }
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        match self {
            Gram::Dense(m) => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = m.row(i).iter().zip(v).map(|(a, b)| a * b).sum();
                }
            }
            Gram::Sparse(s) => {
                for (i, o) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for k in s.row_ptr[i]..s.row_ptr[i + 1] {
                        acc += s.values[k] * v[s.col_idx[k]];
                    }
                    *o = acc;
                }
            }
        }
    }
}

impl SymmetricOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.row(i).iter().zip(v).map(|(a, b)| a * b).sum();
        }
    }
}

/// `G - n nᵀ / N`: the Gram matrix of the column-centered design, which
/// profiles an unpenalized intercept out of the ridge problem.
pub struct CenteredGram<'a> {
    pub gram: &'a Gram,
    pub counts: &'a [f64],
    pub n_records: f64,
}

impl SymmetricOperator for CenteredGram<'_> {
    fn dim(&self) -> usize {
        self.gram.dim()
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        self.gram.apply(v, out);
        let s: f64 = self.counts.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / self.n_records;
        for (o, c) in out.iter_mut().zip(self.counts) {
            *o -= c * s;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeSystem {
    pub gram: Gram,
    pub rhs: Vec<f64>,
    pub lambda: f64,
}

/// `ZᵀZ + λ_Z I` from the active indices of each record.
pub fn gram_matrix(encoding: &CategoricalEncoding, lambda: f64) -> Result<Gram> {
    let c = encoding.cardinality();
    if c == 0 {
        return Err(FxamError::NoCategorical);
    }
    let n = encoding.num_records();
    if c < DENSE_GRAM_LIMIT {
        let mut g = DMatrix::zeros(c, c);
        for l in 0..n {
            let row = encoding.row(l);
            for &a in row {
                for &b in row {
                    g[(a, b)] += 1.0;
                }
            }
        }
        for j in 0..c {
            g[(j, j)] += lambda;
        }
        return Ok(Gram::Dense(g));
    }
    let mut rows: Vec<HashMap<usize, f64>> = vec![HashMap::new(); c];
    for l in 0..n {
        let row = encoding.row(l);
        for &a in row {
            for &b in row {
                *rows[a].entry(b).or_insert(0.0) += 1.0;
            }
        }
    }
    let mut row_ptr = Vec::with_capacity(c + 1);
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    row_ptr.push(0);
    for (j, r) in rows.into_iter().enumerate() {
        let mut entries: Vec<(usize, f64)> = r.into_iter().collect();
        if !entries.iter().any(|e| e.0 == j) {
            entries.push((j, 0.0));
        }
        entries.sort_by_key(|e| e.0);
        for (k, mut v) in entries {
            if k == j {
                v += lambda;
            }
            col_idx.push(k);
            values.push(v);
        }
        row_ptr.push(col_idx.len());
    }
    Ok(Gram::Sparse(CsrMatrix {
        n: c,
        row_ptr,
        col_idx,
        values,
    }))
}

pub fn gram_assemble(encoding: &CategoricalEncoding, y_z: &[f64], lambda: f64) -> Result<RidgeSystem> {
    if encoding.cardinality() == 0 {
        return Err(FxamError::NoCategorical);
    }
    if y_z.len() != encoding.num_records() {
        return Err(FxamError::LengthMismatch {
            what: "y_Z".into(),
            found: y_z.len(),
            expected: encoding.num_records(),
        });
    }
    let gram = gram_matrix(encoding, lambda)?;
    Ok(RidgeSystem {
        gram,
        rhs: encoding.transpose_apply(y_z),
        lambda,
    })
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, a| m.max(a.abs()))
}

/// Dominant eigenvalue of a symmetric operator by power iteration, returned
/// as the Rayleigh quotient of the final iterate.
pub fn power_iteration_max_eig(op: &dyn SymmetricOperator) -> Result<f64> {
    let c = op.dim();
    if c == 0 {
        return Err(FxamError::ZeroMatrix);
    }
    // a slightly uneven start avoids being orthogonal to the top eigenvector
    let mut v: Vec<f64> = (0..c)
        .map(|i| 1.0 + 1e-3 * ((i as f64 * 0.618_033_988_75).fract() - 0.5))
        .collect();
    let nv = norm2(&v);
    v.iter_mut().for_each(|a| *a /= nv);
    let mut av = vec![0.0; c];
    let mut rq = f64::NAN;
    for _ in 0..1000 {
        op.apply(&v, &mut av);
        let next = dot(&v, &av);
        let na = norm2(&av);
        if na == 0.0 {
            return Err(FxamError::ZeroMatrix);
        }
        let done = rq.is_finite() && (next - rq).abs() < 1e-9 * next.abs();
        rq = next;
        if done {
            break;
        }
        for (a, b) in v.iter_mut().zip(&av) {
            *a = b / na;
        }
    }
    Ok(rq)
}

/// Result of an accelerated gradient run.
#[derive(Debug, Clone, PartialEq)]
pub struct NgaOutcome {
    pub beta: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Minimizes `½xᵀAx - bᵀx` from `x0` with Nesterov momentum and step
/// `1/lambda_max`. Momentum is reset whenever the gradient points against
/// the last step (adaptive restart), which keeps the iteration monotone in
/// practice on ill-conditioned systems. Stops when
/// `‖Ax - b‖∞ < tol · max(1, ‖b‖∞)`.
pub fn nga_solve(
    op: &dyn SymmetricOperator,
    b: &[f64],
    x0: &[f64],
    lambda_max: f64,
    tol: f64,
    max_iter: usize,
) -> Result<NgaOutcome> {
    let c = op.dim();
    let step = 1.0 / lambda_max;
    let threshold = tol * inf_norm(b).max(1.0);

    let mut x = x0.to_vec();
    let mut gx = vec![0.0; c];
    op.apply(&x, &mut gx);
    let mut y = x.clone();
    let mut gy = gx.clone();
    let mut theta = 1.0f64;
    let mut x_next = vec![0.0; c];
    let mut gx_next = vec![0.0; c];
    let mut grad = vec![0.0; c];

    let residual_of = |gx: &[f64]| {
        gx.iter()
            .zip(b)
            .fold(0.0f64, |m, (g, bb)| m.max((g - bb).abs()))
    };
    let mut residual = residual_of(&gx);
    if residual < threshold {
        return Ok(NgaOutcome {
            beta: x,
            iterations: 0,
            residual,
        });
    }
    for it in 1..=max_iter {
        for j in 0..c {
            grad[j] = gy[j] - b[j];
            x_next[j] = y[j] - step * grad[j];
        }
        op.apply(&x_next, &mut gx_next);
        residual = residual_of(&gx_next);
        if !residual.is_finite() {
            return Err(FxamError::NotConverged {
                iterations: it,
                residual,
                last: x_next,
            });
        }
        if residual < threshold {
            return Ok(NgaOutcome {
                beta: x_next,
                iterations: it,
                residual,
            });
        }
        let restart = grad
            .iter()
            .zip(x_next.iter().zip(&x))
            .map(|(g, (a, b))| g * (a - b))
            .sum::<f64>()
            > 0.0;
        let theta_next = if restart {
            1.0
        } else {
            (1.0 + (1.0 + 4.0 * theta * theta).sqrt()) / 2.0
        };
        let mom = if restart { 0.0 } else { (theta - 1.0) / theta_next };
        for j in 0..c {
            y[j] = x_next[j] + mom * (x_next[j] - x[j]);
            gy[j] = gx_next[j] + mom * (gx_next[j] - gx[j]);
        }
        std::mem::swap(&mut x, &mut x_next);
        std::mem::swap(&mut gx, &mut gx_next);
        theta = theta_next;
    }
    Err(FxamError::NotConverged {
        iterations: max_iter,
        residual,
        last: x,
    })
}

pub fn nga_ridge_solve(sys: &RidgeSystem, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    nga_ridge_solve_detailed(sys, tol, max_iter).map(|o| o.beta)
}

pub fn nga_ridge_solve_detailed(sys: &RidgeSystem, tol: f64, max_iter: usize) -> Result<NgaOutcome> {
    let c = sys.gram.dim();
    if c == 0 {
        return Err(FxamError::NoCategorical);
    }
    let lambda_max = power_iteration_max_eig(&sys.gram)?;
    nga_solve(&sys.gram, &sys.rhs, &vec![0.0; c], lambda_max, tol, max_iter)
}

/// Dense Cholesky solve of `Gβ = b`. Test support for moderate `c`.
pub fn closed_form_ridge(sys: &RidgeSystem) -> Result<Vec<f64>> {
    let c = sys.gram.dim();
    if c > CLOSED_FORM_BOUND {
        return Err(FxamError::TestSupportOnly {
            dim: c,
            bound: CLOSED_FORM_BOUND,
        });
    }
    let g = sys.gram.to_dense();
    let b = DVector::from_column_slice(&sys.rhs);
    let chol = g.cholesky().ok_or(FxamError::Singular)?;
    Ok(chol.solve(&b).iter().copied().collect())
}
