//! Solvers: spectral filters, nonlinear Landweber and proximal gradient.
//!
//! Penalized problems use one scaling convention throughout:
//!
//! ```text
//! J(c) = ||F(c) - y||^2 + alpha * sum_l w_l |c_l|^p
//! ```
//!
//! One proximal-gradient step is a gradient step of length `step` on
//! `||F(c) - y||^2 / 2` followed by the proximal map of `t_l |.|^p` with
//! `t_l = step * alpha * w_l / 2`.

use crate::error::{Error, Result};
use crate::operators::SvdOperator;
use crate::scalar::{dist2, dot, norm2, Real};

/// Spectral filter `F_alpha(sigma)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FilterKind<T> {
    /// `sigma^2 / (sigma^2 + alpha)`.
    Tikhonov { alpha: T },
    /// `1` if `sigma^2 >= alpha`, else `0`.
    Tsvd { alpha: T },
    /// `1 - (1 - gamma sigma^2)^k`; needs `gamma sigma_1^2 <= 1`.
    LandweberFilter { k: u32, gamma: T },
}

impl<T: Real> FilterKind<T> {
    pub fn validate(&self) -> Result<()> {
        match *self {
            FilterKind::Tikhonov { alpha } | FilterKind::Tsvd { alpha } => {
                if !(alpha > T::zero()) {
                    return Err(Error::InvalidParameter(format!("filter alpha {alpha} must be positive")));
                }
            }
            FilterKind::LandweberFilter { k, gamma } => {
                if k == 0 || !(gamma > T::zero()) {
                    return Err(Error::InvalidParameter(format!(
                        "Landweber filter needs k >= 1 and gamma > 0 (k = {k}, gamma = {gamma})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Regularization strength, or the iteration count for the Landweber filter.
    pub fn strength(&self) -> f64 {
        match *self {
            FilterKind::Tikhonov { alpha } | FilterKind::Tsvd { alpha } => alpha.to_f64_lossy(),
            FilterKind::LandweberFilter { k, .. } => f64::from(k),
        }
    }
}

pub fn filter_value<T: Real>(kind: &FilterKind<T>, sigma: T) -> T {
    let s2 = sigma * sigma;
    match *kind {
        FilterKind::Tikhonov { alpha } => s2 / (s2 + alpha),
        FilterKind::Tsvd { alpha } => {
            if s2 >= alpha {
                T::one()
            } else {
                T::zero()
            }
        }
        FilterKind::LandweberFilter { k, gamma } => T::one() - (T::one() - gamma * s2).powi(k as i32),
    }
}

fn check_filter_for<T: Real>(op: &SvdOperator<T>, kind: &FilterKind<T>) -> Result<()> {
    kind.validate()?;
    if let FilterKind::LandweberFilter { gamma, .. } = *kind {
        let s1 = op.norm();
        if gamma * s1 * s1 > T::one() + T::lit(1e3) * T::epsilon() {
            return Err(Error::InvalidParameter(format!(
                "Landweber filter is not a contraction: gamma * sigma_1^2 = {}",
                gamma * s1 * s1
            )));
        }
    }
    Ok(())
}

/// `sum_{sigma_n > 0} F(sigma_n) sigma_n^{-1} <y, u_n> v_n`.
pub fn filter_reconstruct<T: Real>(op: &SvdOperator<T>, y: &[T], kind: &FilterKind<T>) -> Result<Vec<T>> {
    check_filter_for(op, kind)?;
    let c = op.left_coefficients(y)?;
    let scaled: Vec<T> = c
        .iter()
        .zip(op.singular_values())
        .map(|(&c, &s)| {
            if s > T::zero() {
                filter_value(kind, s) / s * c
            } else {
                T::zero()
            }
        })
        .collect();
    Ok(op.synthesize_right(&scaled))
}

/// `||A x - y||` for the filtered reconstruction `x`, computed in the singular basis.
pub fn filter_residual<T: Real>(op: &SvdOperator<T>, y: &[T], kind: &FilterKind<T>) -> Result<T> {
    check_filter_for(op, kind)?;
    let c = op.left_coefficients(y)?;
    let in_range: T = c
        .iter()
        .zip(op.singular_values())
        .map(|(&c, &s)| {
            let keep = if s > T::zero() { filter_value(kind, s) } else { T::zero() };
            let r = (T::one() - keep) * c;
            r * r
        })
        .sum();
    Ok((in_range + op.left_complement_sq(y)?).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport<T> {
    pub solution: Vec<T>,
    pub iterations: usize,
    /// `||F(solution) - y||`.
    pub final_residual: T,
    /// Objective values per iterate (proximal gradient) or residual norms per
    /// iterate (Landweber), starting with the initial guess.
    pub objective_trace: Option<Vec<T>>,
}

fn non_convergence<T: Real>(iterations: usize, residual: T, solution: &[T]) -> Error {
    Error::NonConvergence {
        iterations,
        final_residual: residual.to_f64_lossy(),
        solution: solution.iter().map(|v| v.to_f64_lossy()).collect(),
    }
}

/// Settings for [`landweber_nonlinear`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandweberParams<T> {
    pub gamma: T,
    /// Must exceed 2.
    pub tau_hat: T,
    pub delta_eff: T,
    pub max_iter: usize,
}

/// `x_{k+1} = x_k - gamma F'(x_k)^* (F(x_k) - y)`, stopped at the first `k`
/// with `||F(x_k) - y|| <= tau_hat * delta_eff`.
///
/// `derivative_adjoint(x, r)` must return `F'(x)^* r`. The residual trace is
/// returned in `objective_trace`.
pub fn landweber_nonlinear<T, F, G>(
    forward: F,
    derivative_adjoint: G,
    y: &[T],
    x0: &[T],
    params: &LandweberParams<T>,
) -> Result<SolveReport<T>>
where
    T: Real,
    F: Fn(&[T]) -> Vec<T>,
    G: Fn(&[T], &[T]) -> Vec<T>,
{
    if !(params.tau_hat > T::lit(2.0)) {
        return Err(Error::InvalidParameter(format!("tau_hat = {} must exceed 2", params.tau_hat)));
    }
    if !(params.gamma > T::zero()) || !(params.delta_eff > T::zero()) {
        return Err(Error::InvalidParameter("gamma and delta_eff must be positive".into()));
    }
    let threshold = params.tau_hat * params.delta_eff;
    let mut x = x0.to_vec();
    let mut trace = Vec::new();
    for k in 0..=params.max_iter {
        let fx = forward(&x);
        Error::check_len(y.len(), fx.len())?;
        let r: Vec<T> = fx.iter().zip(y).map(|(&a, &b)| a - b).collect();
        let res = norm2(&r);
        trace.push(res);
        if res <= threshold {
            return Ok(SolveReport {
                solution: x,
                iterations: k,
                final_residual: res,
                objective_trace: Some(trace),
            });
        }
        if !res.is_finite() {
            return Err(non_convergence(k, res, &x));
        }
        if k == params.max_iter {
            return Err(non_convergence(k, res, &x));
        }
        let g = derivative_adjoint(&x, &r);
        Error::check_len(x.len(), g.len())?;
        for (xi, gi) in x.iter_mut().zip(&g) {
            *xi = *xi - params.gamma * *gi;
        }
    }
    unreachable!("loop returns on its last pass")
}

/// `0.9 / ||F'(x0)||^2`, the norm estimated by power iteration.
pub fn landweber_step_size<T, D, G>(derivative: D, derivative_adjoint: G, x0: &[T]) -> T
where
    T: Real,
    D: Fn(&[T], &[T]) -> Vec<T>,
    G: Fn(&[T], &[T]) -> Vec<T>,
{
    let norm = crate::operators::operator_norm_estimate(
        |v| derivative(x0, v),
        |r| derivative_adjoint(x0, r),
        x0.len(),
        100,
    );
    T::lit(0.9) / (norm * norm)
}

/// First `k` at which the linear Landweber iterate from `x_0 = 0` has
/// `||A x_k - y|| <= threshold`, evaluated through the closed-form filter.
///
/// Relies on the residual being non-increasing in `k` (`gamma sigma_1^2 <= 1`).
pub fn landweber_filter_stop<T: Real>(op: &SvdOperator<T>, y: &[T], gamma: T, threshold: T, max_k: u32) -> Result<u32> {
    let residual = |k: u32| -> Result<T> {
        if k == 0 {
            Ok(norm2(y))
        } else {
            filter_residual(op, y, &FilterKind::LandweberFilter { k, gamma })
        }
    };
    if residual(0)? <= threshold {
        return Ok(0);
    }
    let mut hi = 1u32;
    let mut lo = 0u32;
    loop {
        if residual(hi)? <= threshold {
            break;
        }
        if hi >= max_k {
            return Err(Error::NotReached {
                threshold: threshold.to_f64_lossy(),
                min_residual: residual(max_k)?.to_f64_lossy(),
            });
        }
        lo = hi;
        hi = hi.saturating_mul(2).min(max_k);
    }
    // residual(lo) > threshold >= residual(hi)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if residual(mid)? <= threshold {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// `sign(v) max(|v| - t, 0)`.
pub fn soft_threshold<T: Real>(v: T, t: T) -> T {
    let mag = (v.abs() - t).max(T::zero());
    if v < T::zero() {
        -mag
    } else {
        mag
    }
}

/// Minimizer of `(x - v)^2 / 2 + t |x|^p` for `p in [1, 2]`.
///
/// For `1 < p < 2` the magnitude solves `x + t p x^{p-1} = |v|`, found by
/// Newton steps kept inside a shrinking bracket.
pub fn prox_weighted_lp<T: Real>(v: T, t: T, p: T) -> T {
    debug_assert!(t >= T::zero() && p >= T::one() && p <= T::lit(2.0));
    if t == T::zero() || v == T::zero() {
        return v;
    }
    if p == T::one() {
        return soft_threshold(v, t);
    }
    let two = T::lit(2.0);
    if p == two {
        return v / (T::one() + two * t);
    }
    let target = v.abs();
    let g = |x: T| x + t * p * x.powf(p - T::one()) - target;
    let tol = T::lit(4.0) * T::epsilon() * target.max(T::one());
    // g(0) = -|v| < 0 and g(|v|) > 0
    let (mut lo, mut hi) = (T::zero(), target);
    let mut x = target / (T::one() + t * p);
    for _ in 0..200 {
        let gx = g(x);
        if gx.abs() <= tol {
            break;
        }
        if gx > T::zero() {
            hi = x;
        } else {
            lo = x;
        }
        let slope = T::one() + t * p * (p - T::one()) * x.powf(p - two);
        let newton = x - gx / slope;
        x = if newton > lo && newton < hi && newton.is_finite() {
            newton
        } else {
            (lo + hi) / two
        };
        if hi - lo <= T::epsilon() * hi {
            break;
        }
    }
    if v < T::zero() {
        -x
    } else {
        x
    }
}

/// Settings for [`prox_gradient_solve`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxGradientParams<T> {
    pub alpha: T,
    pub p: T,
    /// Initial step; at most `1 / ||F'||^2` unless `backtracking` is set.
    pub step: T,
    pub tol: T,
    pub max_iter: usize,
    /// Halve the step until the quadratic upper bound holds (nonlinear forward maps).
    pub backtracking: bool,
    /// Nesterov momentum, restarted whenever the objective would increase.
    pub accelerated: bool,
    pub track_objective: bool,
}

impl<T: Real> ProxGradientParams<T> {
    fn validate(&self) -> Result<()> {
        if !(self.alpha > T::zero()) || !(self.step > T::zero()) || !(self.tol >= T::zero()) {
            return Err(Error::InvalidParameter("alpha and step must be positive, tol nonnegative".into()));
        }
        if !(self.p >= T::one() && self.p <= T::lit(2.0)) {
            return Err(Error::InvalidParameter(format!("penalty exponent p = {} outside [1, 2]", self.p)));
        }
        Ok(())
    }
}

/// `||F(c) - y||^2 + alpha sum w |c|^p` together with the residual vector.
fn objective<T: Real>(fc: &[T], y: &[T], c: &[T], weights: &[T], alpha: T, p: T) -> (T, Vec<T>) {
    let r: Vec<T> = fc.iter().zip(y).map(|(&a, &b)| a - b).collect();
    let penalty: T = weights.iter().zip(c).map(|(&w, &x)| w * x.abs().powf(p)).sum();
    (dot(&r, &r) + alpha * penalty, r)
}

/// Proximal gradient minimization of `||F(c) - y||^2 + alpha sum w |c|^p`.
///
/// Converged when successive iterates are within `tol`. Uniform weights are
/// passed as a slice of ones.
pub fn prox_gradient_solve<T, F, G>(
    forward: F,
    derivative_adjoint: G,
    y: &[T],
    weights: &[T],
    x0: &[T],
    params: &ProxGradientParams<T>,
) -> Result<SolveReport<T>>
where
    T: Real,
    F: Fn(&[T]) -> Vec<T>,
    G: Fn(&[T], &[T]) -> Vec<T>,
{
    params.validate()?;
    Error::check_len(x0.len(), weights.len())?;
    let half = T::lit(0.5);
    let mut step = params.step;
    let mut x = x0.to_vec();
    let fx = forward(&x);
    Error::check_len(y.len(), fx.len())?;
    let (mut obj, mut r) = objective(&fx, y, &x, weights, params.alpha, params.p);
    let mut trace = params.track_objective.then(|| vec![obj]);
    // momentum state: previous iterate and the sequence t_k
    let mut prev = x.clone();
    let mut t = T::one();

    // one forward-backward step from `base`, whose residual is `base_r`
    let fb_step = |base: &[T], base_r: &[T], step: &mut T| -> Result<(Vec<T>, Vec<T>)> {
        let grad = derivative_adjoint(base, base_r);
        Error::check_len(base.len(), grad.len())?;
        let misfit = half * dot(base_r, base_r);
        loop {
            let cand: Vec<T> = base
                .iter()
                .zip(&grad)
                .zip(weights)
                .map(|((&xi, &gi), &w)| prox_weighted_lp(xi - *step * gi, *step * params.alpha * w * half, params.p))
                .collect();
            let f_cand = forward(&cand);
            if !params.backtracking {
                return Ok((cand, f_cand));
            }
            let diff: Vec<T> = cand.iter().zip(base).map(|(&a, &b)| a - b).collect();
            let r_cand: T = f_cand.iter().zip(y).map(|(&a, &b)| (a - b) * (a - b)).sum();
            let model = misfit + dot(&grad, &diff) + dot(&diff, &diff) / (T::lit(2.0) * *step);
            if half * r_cand <= model * (T::one() + T::lit(1e-12)) || *step < T::lit(1e-30) {
                return Ok((cand, f_cand));
            }
            *step = *step * half;
        }
    };

    for k in 1..=params.max_iter {
        let mut attempt = None;
        if params.accelerated && k > 1 {
            let t_next = (T::one() + (T::one() + T::lit(4.0) * t * t).sqrt()) * half;
            let beta = (t - T::one()) / t_next;
            let extrapolated: Vec<T> = x.iter().zip(&prev).map(|(&a, &b)| a + beta * (a - b)).collect();
            let fe = forward(&extrapolated);
            let re: Vec<T> = fe.iter().zip(y).map(|(&a, &b)| a - b).collect();
            let (cand, f_cand) = fb_step(&extrapolated, &re, &mut step)?;
            let (o, res) = objective(&f_cand, y, &cand, weights, params.alpha, params.p);
            if o <= obj {
                t = t_next;
                attempt = Some((cand, o, res));
            } else {
                t = T::one();
            }
        }
        let (next, o, res) = match attempt {
            Some(a) => a,
            None => {
                let (cand, f_cand) = fb_step(&x, &r, &mut step)?;
                let (o, res) = objective(&f_cand, y, &cand, weights, params.alpha, params.p);
                (cand, o, res)
            }
        };
        let moved = dist2(&next, &x);
        prev = std::mem::replace(&mut x, next);
        obj = o;
        r = res;
        if let Some(tr) = trace.as_mut() {
            tr.push(obj);
        }
        if !obj.is_finite() {
            return Err(non_convergence(k, norm2(&r), &x));
        }
        if moved <= params.tol {
            return Ok(SolveReport {
                solution: x,
                iterations: k,
                final_residual: norm2(&r),
                objective_trace: trace,
            });
        }
    }
    Err(non_convergence(params.max_iter, norm2(&r), &x))
}

/// Exact minimizer of `||diag(sigma) c - y||^2 + alpha sum w |c|^p`, one coordinate at a time.
pub fn separable_diagonal_solve<T: Real>(sigma: &[T], y: &[T], alpha: T, weights: &[T], p: T) -> Result<Vec<T>> {
    Error::check_len(sigma.len(), y.len())?;
    Error::check_len(sigma.len(), weights.len())?;
    let two = T::lit(2.0);
    Ok(sigma
        .iter()
        .zip(y)
        .zip(weights)
        .map(|((&s, &yi), &w)| {
            if s > T::zero() {
                prox_weighted_lp(yi / s, alpha * w / (two * s * s), p)
            } else {
                T::zero()
            }
        })
        .collect())
}
