//! Forward operators.
//!
//! * [`SvdOperator`]: a compact linear operator given by its singular system.
//! * [`AutoconvGrid`]: the discretized autoconvolution `[F(x)](s) = int_0^s x(s-t) x(t) dt`
//!   with its derivative and the derivative's adjoint.
//! * the orthonormal Haar transform and level-wise Besov weights.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{dot, norm2, Real};

#[derive(Debug, Clone, PartialEq)]
enum Bases<T> {
    /// Both bases are the identity.
    Diagonal,
    /// Orthonormal columns `u_n` (length `rows`) and `v_n` (length `cols`).
    Dense { left: Vec<Vec<T>>, right: Vec<Vec<T>> },
}

/// `A x = sum_n sigma_n <x, v_n> u_n` with `sigma_1 >= sigma_2 >= ... >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdOperator<T> {
    sigma: Vec<T>,
    rows: usize,
    cols: usize,
    bases: Bases<T>,
}

fn check_singular_values<T: Real>(sigma: &[T]) -> Result<()> {
    if sigma.is_empty() {
        return Err(Error::InvalidParameter("operator needs at least one singular value".into()));
    }
    for w in sigma.windows(2) {
        if w[1] > w[0] {
            return Err(Error::InvalidParameter(format!(
                "singular values must be non-increasing ({} < {})",
                w[0], w[1]
            )));
        }
    }
    if let Some(bad) = sigma.iter().find(|s| !(**s >= T::zero()) || !s.is_finite()) {
        return Err(Error::InvalidParameter(format!("singular value {bad} is negative or not finite")));
    }
    Ok(())
}

fn check_orthonormal<T: Real>(columns: &[Vec<T>], len: usize, which: &str) -> Result<()> {
    let tol = T::lit(1e-10).max(T::lit(1e3) * T::epsilon());
    for (i, ci) in columns.iter().enumerate() {
        Error::check_len(len, ci.len())?;
        for (j, cj) in columns.iter().enumerate().take(i + 1) {
            let target = if i == j { T::one() } else { T::zero() };
            if (dot(ci, cj) - target).abs() > tol {
                return Err(Error::InvalidParameter(format!(
                    "{which} basis columns {j} and {i} are not orthonormal"
                )));
            }
        }
    }
    Ok(())
}

impl<T: Real> SvdOperator<T> {
    /// Square diagonal operator `diag(sigma)`.
    pub fn diagonal(sigma: Vec<T>) -> Result<Self> {
        check_singular_values(&sigma)?;
        let n = sigma.len();
        Ok(Self {
            sigma,
            rows: n,
            cols: n,
            bases: Bases::Diagonal,
        })
    }

    /// Operator from an explicit singular system; `left[n]` is `u_n`, `right[n]` is `v_n`.
    pub fn new(sigma: Vec<T>, left: Vec<Vec<T>>, right: Vec<Vec<T>>, rows: usize, cols: usize) -> Result<Self> {
        check_singular_values(&sigma)?;
        Error::check_len(sigma.len(), left.len())?;
        Error::check_len(sigma.len(), right.len())?;
        check_orthonormal(&left, rows, "left")?;
        check_orthonormal(&right, cols, "right")?;
        Ok(Self {
            sigma,
            rows,
            cols,
            bases: Bases::Dense { left, right },
        })
    }

    /// Factorizes a dense `rows x cols` matrix given as rows.
    pub fn from_dense(matrix: &[Vec<f64>]) -> Result<Self> {
        let rows = matrix.len();
        let cols = matrix.first().map_or(0, Vec::len);
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidParameter("matrix is empty".into()));
        }
        for row in matrix {
            Error::check_len(cols, row.len())?;
        }
        let dense = nalgebra::DMatrix::from_fn(rows, cols, |i, j| matrix[i][j]);
        let svd = dense.svd(true, true);
        let u = svd.u.expect("left vectors requested");
        let v_t = svd.v_t.expect("right vectors requested");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| {
            svd.singular_values[b]
                .partial_cmp(&svd.singular_values[a])
                .expect("finite singular values")
        });
        let sigma = order.iter().map(|&k| T::lit(svd.singular_values[k])).collect();
        let left = order
            .iter()
            .map(|&k| (0..rows).map(|i| T::lit(u[(i, k)])).collect())
            .collect();
        let right = order
            .iter()
            .map(|&k| (0..cols).map(|j| T::lit(v_t[(k, j)])).collect())
            .collect();
        Self::new(sigma, left, right, rows, cols)
    }

    /// Reads a dense matrix from CSV: one row per line, no header.
    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|source| Error::Csv {
                path: path.display().to_string(),
                source,
            })?;
        let mut matrix = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|source| Error::Csv {
                path: path.display().to_string(),
                source,
            })?;
            let row = record
                .iter()
                .map(|field| {
                    field.parse::<f64>().map_err(|e| {
                        Error::Config(format!("{}: bad matrix entry {field:?}: {e}", path.display()))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            matrix.push(row);
        }
        Self::from_dense(&matrix)
    }

    pub fn singular_values(&self) -> &[T] {
        &self.sigma
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_diagonal(&self) -> bool {
        matches!(self.bases, Bases::Diagonal)
    }

    /// Largest singular value.
    pub fn norm(&self) -> T {
        self.sigma[0]
    }

    /// `<x, v_n>` for every singular direction.
    pub fn right_coefficients(&self, x: &[T]) -> Result<Vec<T>> {
        Error::check_len(self.cols, x.len())?;
        Ok(match &self.bases {
            Bases::Diagonal => x.to_vec(),
            Bases::Dense { right, .. } => right.iter().map(|v| dot(v, x)).collect(),
        })
    }

    /// `<y, u_n>` for every singular direction.
    pub fn left_coefficients(&self, y: &[T]) -> Result<Vec<T>> {
        Error::check_len(self.rows, y.len())?;
        Ok(match &self.bases {
            Bases::Diagonal => y.to_vec(),
            Bases::Dense { left, .. } => left.iter().map(|u| dot(u, y)).collect(),
        })
    }

    /// `sum_n c_n v_n`.
    pub fn synthesize_right(&self, coeffs: &[T]) -> Vec<T> {
        match &self.bases {
            Bases::Diagonal => coeffs.to_vec(),
            Bases::Dense { right, .. } => combine(right, coeffs, self.cols),
        }
    }

    /// `sum_n c_n u_n`.
    pub fn synthesize_left(&self, coeffs: &[T]) -> Vec<T> {
        match &self.bases {
            Bases::Diagonal => coeffs.to_vec(),
            Bases::Dense { left, .. } => combine(left, coeffs, self.rows),
        }
    }

    /// Squared norm of the part of `y` orthogonal to the span of the left basis.
    pub fn left_complement_sq(&self, y: &[T]) -> Result<T> {
        let coeffs = self.left_coefficients(y)?;
        Ok(match self.bases {
            Bases::Diagonal => T::zero(),
            Bases::Dense { .. } => (dot(y, y) - dot(&coeffs, &coeffs)).max(T::zero()),
        })
    }

    pub fn apply(&self, x: &[T]) -> Result<Vec<T>> {
        let c = self.right_coefficients(x)?;
        let scaled: Vec<T> = c.iter().zip(&self.sigma).map(|(&c, &s)| c * s).collect();
        Ok(self.synthesize_left(&scaled))
    }

    pub fn apply_adjoint(&self, y: &[T]) -> Result<Vec<T>> {
        let c = self.left_coefficients(y)?;
        let scaled: Vec<T> = c.iter().zip(&self.sigma).map(|(&c, &s)| c * s).collect();
        Ok(self.synthesize_right(&scaled))
    }

    /// `A^dagger y = sum_{sigma_n > 0} sigma_n^{-1} <y, u_n> v_n`.
    pub fn generalized_inverse_apply(&self, y: &[T]) -> Result<Vec<T>> {
        let c = self.left_coefficients(y)?;
        let scaled: Vec<T> = c
            .iter()
            .zip(&self.sigma)
            .map(|(&c, &s)| if s > T::zero() { c / s } else { T::zero() })
            .collect();
        Ok(self.synthesize_right(&scaled))
    }

    /// `(A^* A)^exponent w`, i.e. the spectral multiplier `sigma_n^{2 exponent}`.
    ///
    /// With `exponent == 0` the element is returned unchanged, including any
    /// component in the null space.
    pub fn source_element(&self, exponent: T, w: &[T]) -> Result<Vec<T>> {
        Error::check_len(self.cols, w.len())?;
        if exponent < T::zero() {
            return Err(Error::InvalidParameter(format!("source exponent {exponent} is negative")));
        }
        if exponent == T::zero() {
            return Ok(w.to_vec());
        }
        let two = T::lit(2.0);
        let c = self.right_coefficients(w)?;
        let scaled: Vec<T> = c
            .iter()
            .zip(&self.sigma)
            .map(|(&c, &s)| c * s.powf(two * exponent))
            .collect();
        Ok(self.synthesize_right(&scaled))
    }
}

fn combine<T: Real>(columns: &[Vec<T>], coeffs: &[T], len: usize) -> Vec<T> {
    let mut out = vec![T::zero(); len];
    for (col, &c) in columns.iter().zip(coeffs) {
        if c == T::zero() {
            continue;
        }
        for (o, &v) in out.iter_mut().zip(col) {
            *o = *o + c * v;
        }
    }
    out
}

/// Uniform grid `s_k = k h`, `h = 1/m`, for the autoconvolution on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AutoconvGrid<T> {
    m: usize,
    h: T,
}

impl<T: Real> AutoconvGrid<T> {
    pub fn new(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidParameter("autoconvolution grid needs m >= 1".into()));
        }
        Ok(Self {
            m,
            h: T::one() / T::lit(m as f64),
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn h(&self) -> T {
        self.h
    }

    /// Grid nodes `s_k = k h`.
    pub fn nodes(&self) -> Vec<T> {
        (0..self.m).map(|k| T::lit(k as f64) * self.h).collect()
    }

    /// `y_k = h sum_{j <= k} x_j x_{k-j}` (left rectangle rule).
    pub fn apply(&self, x: &[T]) -> Result<Vec<T>> {
        Error::check_len(self.m, x.len())?;
        Ok(self.truncated_convolution(x, x, self.h))
    }

    /// `F'(x) v = 2 h sum_{j <= k} x_j v_{k-j}`.
    pub fn derivative_apply(&self, x: &[T], v: &[T]) -> Result<Vec<T>> {
        Error::check_len(self.m, x.len())?;
        Error::check_len(self.m, v.len())?;
        Ok(self.truncated_convolution(x, v, T::lit(2.0) * self.h))
    }

    /// `F'(x)^* r`, `(F'(x)^* r)_j = 2 h sum_{k >= j} x_{k-j} r_k`.
    ///
    /// The same transpose is the adjoint for the plain Euclidean product and
    /// for the `h`-weighted one, since the weight appears on both sides.
    pub fn derivative_adjoint_apply(&self, x: &[T], r: &[T]) -> Result<Vec<T>> {
        Error::check_len(self.m, x.len())?;
        Error::check_len(self.m, r.len())?;
        let scale = T::lit(2.0) * self.h;
        let m = self.m;
        let mut out = vec![T::zero(); m];
        for (j, o) in out.iter_mut().enumerate() {
            let mut acc = T::zero();
            for k in j..m {
                acc = acc + x[k - j] * r[k];
            }
            *o = scale * acc;
        }
        Ok(out)
    }

    fn truncated_convolution(&self, a: &[T], b: &[T], scale: T) -> Vec<T> {
        let m = self.m;
        let mut out = vec![T::zero(); m];
        for (k, o) in out.iter_mut().enumerate() {
            let mut acc = T::zero();
            for j in 0..=k {
                acc = acc + a[j] * b[k - j];
            }
            *o = scale * acc;
        }
        out
    }
}

fn check_power_of_two(len: usize) -> Result<()> {
    if len.is_power_of_two() {
        Ok(())
    } else {
        Err(Error::NotPowerOfTwo(len))
    }
}

/// Orthonormal discrete Haar transform.
///
/// Coefficient layout: `c[0]` is the scaling coefficient, followed by the detail
/// blocks from coarsest to finest; detail level `j` occupies `c[2^j .. 2^{j+1}]`.
pub fn haar_forward<T: Real>(x: &[T]) -> Result<Vec<T>> {
    check_power_of_two(x.len())?;
    let scale = T::lit(std::f64::consts::FRAC_1_SQRT_2);
    let mut out = x.to_vec();
    let mut work = x.to_vec();
    let mut len = x.len();
    while len > 1 {
        let half = len / 2;
        for i in 0..half {
            let (a, b) = (work[2 * i], work[2 * i + 1]);
            out[i] = (a + b) * scale;
            out[half + i] = (a - b) * scale;
        }
        work[..half].copy_from_slice(&out[..half]);
        len = half;
    }
    Ok(out)
}

/// Inverse of [`haar_forward`].
pub fn haar_inverse<T: Real>(c: &[T]) -> Result<Vec<T>> {
    check_power_of_two(c.len())?;
    let scale = T::lit(std::f64::consts::FRAC_1_SQRT_2);
    let n = c.len();
    let mut out = c.to_vec();
    let mut work = vec![T::zero(); n];
    let mut len = 1;
    while len < n {
        for i in 0..len {
            let (s, d) = (out[i], out[len + i]);
            work[2 * i] = (s + d) * scale;
            work[2 * i + 1] = (s - d) * scale;
        }
        out[..2 * len].copy_from_slice(&work[..2 * len]);
        len *= 2;
    }
    Ok(out)
}

/// Haar level `|lambda|` of a coefficient index (the scaling coefficient is level 0).
pub fn haar_level(index: usize) -> usize {
    if index == 0 {
        0
    } else {
        index.ilog2() as usize
    }
}

/// Level-wise weights `w_lambda = 2^{zeta |lambda| p}`, `zeta = s - d (1/2 - 1/p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BesovWeights<T> {
    s: T,
    p: T,
    d: usize,
    levels: usize,
    weights: Vec<T>,
}

impl<T: Real> BesovWeights<T> {
    /// Weights for the `2^levels` Haar coefficients of a signal of that length.
    pub fn new(s: T, p: T, d: usize, levels: usize) -> Result<Self> {
        if !(p >= T::one() && p <= T::lit(2.0)) {
            return Err(Error::InvalidParameter(format!("Besov exponent p = {p} outside [1, 2]")));
        }
        if d == 0 {
            return Err(Error::InvalidParameter("domain dimension d must be positive".into()));
        }
        let zeta = besov_zeta(s, p, d);
        if !(zeta > T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "zeta = s - d(1/2 - 1/p) = {zeta} must be positive"
            )));
        }
        let n = 1usize << levels;
        let two = T::lit(2.0);
        let weights = (0..n)
            .map(|i| two.powf(zeta * T::lit(haar_level(i) as f64) * p))
            .collect();
        Ok(Self {
            s,
            p,
            d,
            levels,
            weights,
        })
    }

    pub fn zeta(&self) -> T {
        besov_zeta(self.s, self.p, self.d)
    }

    pub fn p(&self) -> T {
        self.p
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    /// Weighted penalty `sum_lambda w_lambda |c_lambda|^p`.
    pub fn penalty(&self, coeffs: &[T]) -> T {
        self.weights
            .iter()
            .zip(coeffs)
            .map(|(&w, &c)| w * c.abs().powf(self.p))
            .sum()
    }
}

pub fn besov_zeta<T: Real>(s: T, p: T, d: usize) -> T {
    s - T::lit(d as f64) * (T::lit(0.5) - T::one() / p)
}

/// Power-iteration estimate of `||J||` from `J` and `J^*` (deterministic start vector).
pub fn operator_norm_estimate<T: Real>(
    apply: impl Fn(&[T]) -> Vec<T>,
    apply_adjoint: impl Fn(&[T]) -> Vec<T>,
    n: usize,
    iterations: usize,
) -> T {
    let mut v: Vec<T> = (0..n)
        .map(|i| T::one() + T::lit(0.1) * T::lit(((i * 7919) % 13) as f64))
        .collect();
    let nv = norm2(&v);
    v.iter_mut().for_each(|x| *x = *x / nv);
    let mut estimate = T::zero();
    for _ in 0..iterations.max(1) {
        let w = apply_adjoint(&apply(&v));
        let nw = norm2(&w);
        if nw == T::zero() {
            return T::zero();
        }
        estimate = nw.sqrt();
        v = w.into_iter().map(|x| x / nw).collect();
    }
    estimate
}
