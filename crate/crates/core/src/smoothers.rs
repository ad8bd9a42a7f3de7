//! One-dimensional scatterplot smoothers on sorted, weighted knots.
//!
//! * [`fast_kernel_smooth`] is the production Nadaraya-Watson smoother with an
//!   Epanechnikov kernel, evaluated in a single sweep with sliding-window
//!   polynomial sums.
//! * [`naive_kernel_smooth`] is the quadratic-time reference for it.
//! * [`penalized_smooth`] minimizes `Σ w (y - f)² + λ ‖D₂ f‖²` with `D₂` the
//!   second divided difference operator. Its smoother matrix is symmetric (for
//!   unit weights) with spectrum in `[0, 1]`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{FxamError, Result};

/// Largest knot count for which dense smoother matrices are built.
pub const SMOOTHER_MATRIX_BOUND: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    /// Second-difference penalized least squares.
    Penalized,
    /// Epanechnikov kernel with fast-sum updating.
    #[default]
    Kernel,
}

impl std::str::FromStr for Backend {
    type Err = FxamError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "penalized" => Ok(Backend::Penalized),
            "kernel" => Ok(Backend::Kernel),
            other => Err(FxamError::UnknownConfig(format!("backend `{other}`"))),
        }
    }
}

/// Knots `x` (sorted ascending), values `y`, optional positive weights and
/// the smoothing parameter: bandwidth `h` for the kernel backend, penalty
/// `λ` for the penalized one.
#[derive(Debug, Clone, Copy)]
pub struct SmoothRequest<'a> {
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub w: Option<&'a [f64]>,
    pub param: f64,
}

impl<'a> SmoothRequest<'a> {
    pub fn new(x: &'a [f64], y: &'a [f64], param: f64) -> Self {
        Self {
            x,
            y,
            w: None,
            param,
        }
    }

    pub fn weighted(x: &'a [f64], y: &'a [f64], w: &'a [f64], param: f64) -> Self {
        Self {
            x,
            y,
            w: Some(w),
            param,
        }
    }

    fn weight(&self, i: usize) -> f64 {
        self.w.map_or(1.0, |w| w[i])
    }

    fn validate(&self, backend: Backend) -> Result<()> {
        let n = self.x.len();
        if n == 0 {
            return Err(FxamError::EmptyInput);
        }
        if self.y.len() != n {
            return Err(FxamError::LengthMismatch {
                what: "y".into(),
                found: self.y.len(),
                expected: n,
            });
        }
        if let Some(w) = self.w {
            if w.len() != n {
                return Err(FxamError::LengthMismatch {
                    what: "weights".into(),
                    found: w.len(),
                    expected: n,
                });
            }
            if w.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(FxamError::InvalidInput("weights must be positive".into()));
            }
        }
        if self.x.windows(2).any(|p| !(p[0] <= p[1])) {
            return Err(FxamError::InvalidInput("knots must be sorted ascending".into()));
        }
        match backend {
            Backend::Kernel if !(self.param > 0.0 && self.param.is_finite()) => Err(
                FxamError::InvalidInput(format!("bandwidth must be positive, got {}", self.param)),
            ),
            Backend::Penalized if !(self.param >= 0.0 && self.param.is_finite()) => Err(
                FxamError::InvalidInput(format!("penalty must be nonnegative, got {}", self.param)),
            ),
            _ => Ok(()),
        }
    }
}

pub fn epanechnikov(u: f64) -> f64 {
    if u.abs() <= 1.0 {
        0.75 * (1.0 - u * u)
    } else {
        0.0
    }
}

/// Dispatches to the backend's smoother.
pub fn smooth(backend: Backend, req: &SmoothRequest) -> Result<Vec<f64>> {
    match backend {
        Backend::Kernel => fast_kernel_smooth(req),
        Backend::Penalized => penalized_smooth(req),
    }
}

/// Default kernel bandwidth: `factor · range(x) · n^(-1/5)` over the distinct
/// knots. Falls back to 1 when all knots coincide.
pub fn default_bandwidth(knots: &[f64], factor: f64) -> f64 {
    let n = knots.len().max(1) as f64;
    let range = match (knots.first(), knots.last()) {
        (Some(a), Some(b)) => b - a,
        _ => 0.0,
    };
    let h = factor * range * n.powf(-0.2);
    if h > 0.0 && h.is_finite() {
        h
    } else {
        1.0
    }
}

pub fn naive_kernel_smooth(req: &SmoothRequest) -> Result<Vec<f64>> {
    req.validate(Backend::Kernel)?;
    let h = req.param;
    let n = req.x.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let (mut num, mut den) = (0.0, 0.0);
        for j in 0..n {
            let k = req.weight(j) * epanechnikov((req.x[i] - req.x[j]) / h);
            num += k * req.y[j];
            den += k;
        }
        out.push(num / den);
    }
    Ok(out)
}

pub fn fast_kernel_smooth(req: &SmoothRequest) -> Result<Vec<f64>> {
    fast_kernel_smooth_counted(req).map(|(fit, _)| fit)
}

/// Fast kernel smoother that also returns the number of elementary window
/// updates performed (points added, removed or visited while rebuilding).
///
/// For points in the window of `x_i` write `u_j = (x_j - c)/h` relative to a
/// block center `c` and `v = (x_i - c)/h`. Then
/// `1 - ((x_i - x_j)/h)² = (1 - v²) + 2v u_j - u_j²`, so numerator and
/// denominator need only the six sums `Σ w y u^k`, `Σ w u^k`, `k = 0..2`.
/// The center is moved (and the sums rebuilt) once `x_i` drifts more than `h`
/// past it, which keeps `|u|` small and the sums well conditioned.
pub fn fast_kernel_smooth_counted(req: &SmoothRequest) -> Result<(Vec<f64>, usize)> {
    req.validate(Backend::Kernel)?;
    let (x, y, h) = (req.x, req.y, req.param);
    let n = x.len();
    let mut out = Vec::with_capacity(n);
    let mut ops = 0usize;

    // window is [lo, hi)
    let (mut lo, mut hi) = (0usize, 0usize);
    let mut center = f64::NEG_INFINITY;
    let mut a = [0.0f64; 3];
    let mut b = [0.0f64; 3];

    let add = |a: &mut [f64; 3], b: &mut [f64; 3], j: usize, c: f64, sign: f64| {
        let u = (x[j] - c) / h;
        let w = sign * req.weight(j);
        let wy = w * y[j];
        a[0] += wy;
        a[1] += wy * u;
        a[2] += wy * u * u;
        b[0] += w;
        b[1] += w * u;
        b[2] += w * u * u;
    };

    for i in 0..n {
        let xi = x[i];
        if xi - center > h {
            center = xi;
            while lo < n && x[lo] < xi - h {
                lo += 1;
            }
            hi = hi.max(lo);
            while hi < n && x[hi] <= xi + h {
                hi += 1;
            }
            a = [0.0; 3];
            b = [0.0; 3];
            for j in lo..hi {
                add(&mut a, &mut b, j, center, 1.0);
            }
            ops += hi - lo;
        } else {
            while hi < n && x[hi] <= xi + h {
                add(&mut a, &mut b, hi, center, 1.0);
                hi += 1;
                ops += 1;
            }
            while x[lo] < xi - h {
                add(&mut a, &mut b, lo, center, -1.0);
                lo += 1;
                ops += 1;
            }
        }
        let v = (xi - center) / h;
        let c0 = 1.0 - v * v;
        let num = c0 * a[0] + 2.0 * v * a[1] - a[2];
        let den = c0 * b[0] + 2.0 * v * b[1] - b[2];
        out.push(num / den);
    }
    Ok((out, ops))
}

/// Coefficients of the scaled second divided difference at knots
/// `k, k+1, k+2`; the combination approximates `f''`.
pub(crate) fn second_difference_row(x: &[f64], k: usize) -> [f64; 3] {
    let h0 = x[k + 1] - x[k];
    let h1 = x[k + 2] - x[k + 1];
    [
        2.0 / (h0 * (h0 + h1)),
        -2.0 / (h0 * h1),
        2.0 / (h1 * (h0 + h1)),
    ]
}

fn check_distinct(x: &[f64]) -> Result<()> {
    if x.windows(2).any(|p| !(p[0] < p[1])) {
        return Err(FxamError::InvalidInput(
            "penalized smoothing needs strictly increasing knots".into(),
        ));
    }
    Ok(())
}

/// Rotates `row` (nonzeros at columns `start..start+3`) into the banded
/// upper-triangular factor.
fn givens_insert(
    r: &mut [[f64; 3]],
    rhs: &mut [f64],
    filled: &mut [bool],
    mut row: [f64; 3],
    mut start: usize,
    mut val: f64,
) {
    let m = r.len();
    while start < m {
        if row[0] == 0.0 {
            row = [row[1], row[2], 0.0];
            start += 1;
            continue;
        }
        if !filled[start] {
            r[start] = row;
            rhs[start] = val;
            filled[start] = true;
            return;
        }
        let rr = &mut r[start];
        let (p, q) = (rr[0], row[0]);
        let d = p.hypot(q);
        let (c, s) = (p / d, q / d);
        let mut next = [0.0; 3];
        for k in 0..3 {
            let top = rr[k];
            rr[k] = c * top + s * row[k];
            next[k] = -s * top + c * row[k];
        }
        let top = rhs[start];
        rhs[start] = c * top + s * val;
        val = -s * top + c * val;
        row = [next[1], next[2], 0.0];
        start += 1;
    }
}

/// Penalized smoother `argmin Σ wᵢ(yᵢ - fᵢ)² + λ ‖D₂f‖²`, solved by a banded
/// QR factorization of the stacked system `[√W; √λ D₂] f ≈ [√W y; 0]`.
pub fn penalized_smooth(req: &SmoothRequest) -> Result<Vec<f64>> {
    req.validate(Backend::Penalized)?;
    let (x, y, lambda) = (req.x, req.y, req.param);
    let m = x.len();
    if m <= 2 || lambda == 0.0 {
        return Ok(y.to_vec());
    }
    check_distinct(x)?;
    let sl = lambda.sqrt();
    let mut r = vec![[0.0f64; 3]; m];
    let mut rhs = vec![0.0f64; m];
    let mut filled = vec![false; m];
    for k in 0..m {
        let sw = req.weight(k).sqrt();
        givens_insert(&mut r, &mut rhs, &mut filled, [sw, 0.0, 0.0], k, sw * y[k]);
        if k + 2 < m {
            let d = second_difference_row(x, k);
            givens_insert(
                &mut r,
                &mut rhs,
                &mut filled,
                [sl * d[0], sl * d[1], sl * d[2]],
                k,
                0.0,
            );
        }
    }
    let mut f = vec![0.0; m];
    for j in (0..m).rev() {
        let mut s = rhs[j];
        if j + 1 < m {
            s -= r[j][1] * f[j + 1];
        }
        if j + 2 < m {
            s -= r[j][2] * f[j + 2];
        }
        f[j] = s / r[j][0];
    }
    Ok(f)
}

/// `‖D₂ f‖²` on knots `x`; zero for fewer than three knots.
pub fn penalty_value(x: &[f64], f: &[f64]) -> f64 {
    if x.len() < 3 {
        return 0.0;
    }
    (0..x.len() - 2)
        .map(|k| {
            let d = second_difference_row(x, k);
            let v = d[0] * f[k] + d[1] * f[k + 1] + d[2] * f[k + 2];
            v * v
        })
        .sum()
}

/// Dense `K = D₂ᵀD₂` on knots `x`.
pub fn penalty_matrix(x: &[f64]) -> DMatrix<f64> {
    let m = x.len();
    let mut k = DMatrix::zeros(m, m);
    if m < 3 {
        return k;
    }
    for r in 0..m - 2 {
        let d = second_difference_row(x, r);
        for a in 0..3 {
            for b in 0..3 {
                k[(r + a, r + b)] += d[a] * d[b];
            }
        }
    }
    k
}

/// Dense matrix of the linear smoother: column `j` is the smoother applied to
/// the `j`-th unit vector. Test support only.
pub fn smoother_matrix(
    backend: Backend,
    knots: &[f64],
    weights: Option<&[f64]>,
    param: f64,
) -> Result<DMatrix<f64>> {
    smoother_matrix_bounded(backend, knots, weights, param, SMOOTHER_MATRIX_BOUND)
}

pub fn smoother_matrix_bounded(
    backend: Backend,
    knots: &[f64],
    weights: Option<&[f64]>,
    param: f64,
    bound: usize,
) -> Result<DMatrix<f64>> {
    let m = knots.len();
    if m > bound {
        return Err(FxamError::TestSupportOnly { dim: m, bound });
    }
    let mut s = DMatrix::zeros(m, m);
    let mut e = vec![0.0; m];
    for j in 0..m {
        e[j] = 1.0;
        let req = SmoothRequest {
            x: knots,
            y: &e,
            w: weights,
            param,
        };
        let col = smooth(backend, &req)?;
        s.set_column(j, &nalgebra::DVector::from_vec(col));
        e[j] = 0.0;
    }
    Ok(s)
}
