//! Parameter-choice rules and rate predictors.

use std::fmt;

use crate::error::{Error, Result};
use crate::noise::{gaussian_log_term, NoiseSpec};
use crate::operators::SvdOperator;
use crate::regularization::{filter_reconstruct, filter_residual, FilterKind, SolveReport};
use crate::scalar::{dist2, norm2, Real};
use crate::special::{lambert_w0, reg_gamma_q};

/// How the regularization parameter (or stopping index) is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamRule<T> {
    /// `alpha = c (delta / rho)^{1 / (beta (nu + 1))}`.
    AprioriFilter { beta: T, nu: T, rho: T, c: T },
    /// `tau1 delta <= ||F(x_alpha) - y|| <= tau2 delta`, `1 < tau1 <= tau2`.
    Discrepancy { tau1: T, tau2: T },
    /// First iterate with `||F(x_k) - y|| <= tau_hat delta`, `tau_hat > 2`.
    DiscrepancyStop { tau_hat: T },
    /// Balance the two terms of the Besov Ky Fan bound.
    BesovBalance(BesovBalanceParams<T>),
    /// `alpha = scale * delta^2 / varrho^p`.
    NoiseSquared { scale: T, varrho: T, p: T },
    Fixed { alpha: T },
}

impl<T: Real> ParamRule<T> {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: T| {
            if v > T::zero() && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} = {v} must be positive")))
            }
        };
        match *self {
            ParamRule::AprioriFilter { beta, nu, rho, c } => {
                positive("beta", beta)?;
                positive("rho", rho)?;
                positive("c", c)?;
                if !(nu >= T::zero()) {
                    return Err(Error::InvalidParameter(format!("nu = {nu} must be nonnegative")));
                }
            }
            ParamRule::Discrepancy { tau1, tau2 } => check_taus(tau1, tau2)?,
            ParamRule::DiscrepancyStop { tau_hat } => {
                if !(tau_hat > T::lit(2.0)) {
                    return Err(Error::InvalidParameter(format!("tau_hat = {tau_hat} must exceed 2")));
                }
            }
            ParamRule::BesovBalance(params) => params.validate()?,
            ParamRule::NoiseSquared { scale, varrho, p } => {
                positive("scale", scale)?;
                positive("varrho", varrho)?;
                positive("p", p)?;
            }
            ParamRule::Fixed { alpha } => positive("alpha", alpha)?,
        }
        Ok(())
    }
}

fn check_taus<T: Real>(tau1: T, tau2: T) -> Result<()> {
    if tau1 > T::one() && tau2 >= tau1 && tau2.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "discrepancy needs 1 < tau1 <= tau2 (tau1 = {tau1}, tau2 = {tau2})"
        )))
    }
}

/// `c (delta / rho)^{1 / (beta (nu + 1))}`.
pub fn apriori_filter_alpha<T: Real>(delta_eff: T, beta: T, nu: T, rho: T, c: T) -> T {
    c * (delta_eff / rho).powf(T::one() / (beta * (nu + T::one())))
}

/// `scale * delta^2 / varrho^p`.
pub fn noise_squared_alpha<T: Real>(delta_eff: T, scale: T, varrho: T, p: T) -> T {
    scale * delta_eff * delta_eff / varrho.powf(p)
}

fn in_band<T: Real>(r: T, lo: T, hi: T) -> bool {
    let slack = T::lit(1e-12);
    r >= lo * (T::one() - slack) && r <= hi * (T::one() + slack)
}

/// Tikhonov parameter meeting the discrepancy band, found by bisection in `log alpha`.
///
/// The Tikhonov residual is continuous and non-decreasing in `alpha`, running
/// from the residual floor at `alpha -> 0` up to `||y||`.
pub fn discrepancy_alpha<T: Real>(
    op: &SvdOperator<T>,
    y: &[T],
    delta_eff: T,
    tau1: T,
    tau2: T,
) -> Result<(T, SolveReport<T>)> {
    check_taus(tau1, tau2)?;
    if !(delta_eff > T::zero()) {
        return Err(Error::InvalidParameter(format!("delta_eff = {delta_eff} must be positive")));
    }
    let (lo_t, hi_t) = (tau1 * delta_eff, tau2 * delta_eff);
    let y_norm = norm2(y);
    if y_norm <= lo_t {
        return Err(Error::TrivialData {
            data_norm: y_norm.to_f64_lossy(),
            threshold: lo_t.to_f64_lossy(),
        });
    }
    let c = op.left_coefficients(y)?;
    let floor_sq: T = c
        .iter()
        .zip(op.singular_values())
        .filter(|(_, &s)| s == T::zero())
        .map(|(&c, _)| c * c)
        .sum::<T>()
        + op.left_complement_sq(y)?;
    let floor = floor_sq.sqrt();
    if floor > hi_t {
        return Err(Error::NoFeasibleAlpha {
            floor: floor.to_f64_lossy(),
            threshold: hi_t.to_f64_lossy(),
        });
    }
    let residual = |alpha: T| filter_residual(op, y, &FilterKind::Tikhonov { alpha });
    let s_max = op.norm();
    let s_min = op
        .singular_values()
        .iter()
        .copied()
        .filter(|&s| s > T::zero())
        .fold(s_max, T::min);
    let wide = T::lit(1e16).min(T::max_value().sqrt());
    let mut log_hi = (s_max * s_max * wide).ln();
    let mut log_lo = (s_min * s_min / wide).max(T::min_positive_value()).ln();
    let two = T::lit(2.0);
    let mut chosen = None;
    let mut steps = 0;
    for (i, &la) in [log_hi, log_lo].iter().enumerate() {
        let r = residual(la.exp())?;
        if in_band(r, lo_t, hi_t) {
            chosen = Some(la);
            break;
        }
        if i == 0 && r < lo_t {
            // the band sits in the last sliver below ||y||
            return Err(Error::TrivialData {
                data_norm: y_norm.to_f64_lossy(),
                threshold: lo_t.to_f64_lossy(),
            });
        }
    }
    let target = (lo_t + hi_t) / two;
    let mut best = (T::infinity(), log_hi);
    if chosen.is_none() {
        for _ in 0..300 {
            steps += 1;
            let mid = (log_lo + log_hi) / two;
            let r = residual(mid.exp())?;
            if (r - target).abs() < best.0 {
                best = ((r - target).abs(), mid);
            }
            if in_band(r, lo_t, hi_t) && (tau1 < tau2 || (r - target).abs() <= T::lit(1e-12) * target) {
                chosen = Some(mid);
                break;
            }
            if r > target {
                log_hi = mid;
            } else {
                log_lo = mid;
            }
            if log_hi - log_lo <= T::epsilon() * log_hi.abs().max(T::one()) {
                break;
            }
        }
    }
    let log_alpha = chosen.unwrap_or(best.1);
    let alpha = log_alpha.exp();
    let solution = filter_reconstruct(op, y, &FilterKind::Tikhonov { alpha })?;
    let final_residual = dist2(&op.apply(&solution)?, y);
    if !in_band(final_residual, lo_t, hi_t) && (final_residual - target).abs() > T::lit(1e-8) * target {
        return Err(Error::NotReached {
            threshold: target.to_f64_lossy(),
            min_residual: final_residual.to_f64_lossy(),
        });
    }
    Ok((
        alpha,
        SolveReport {
            solution,
            iterations: steps,
            final_residual,
            objective_trace: None,
        },
    ))
}

/// Outcome of [`discrepancy_search`].
#[derive(Debug, Clone, PartialEq)]
pub struct DiscrepancyOutcome<T> {
    pub alpha: T,
    pub solution: Vec<T>,
    pub residual: T,
    /// True when the residual ended inside `[tau1 delta, tau2 delta]`.
    pub in_band: bool,
    pub evaluations: usize,
}

/// Discrepancy principle over an arbitrary solver `alpha -> (solution, residual)`.
///
/// Steps `alpha` by decades from `alpha_start` until the band is bracketed,
/// then bisects in `log alpha`. The residual is assumed to grow with `alpha`.
/// When the budget runs out the evaluated parameter closest to the band is returned.
pub fn discrepancy_search<T, S>(
    mut solve: S,
    delta_eff: T,
    tau1: T,
    tau2: T,
    alpha_start: T,
    max_evaluations: usize,
) -> Result<DiscrepancyOutcome<T>>
where
    T: Real,
    S: FnMut(T) -> Result<(Vec<T>, T)>,
{
    check_taus(tau1, tau2)?;
    if !(alpha_start > T::zero()) || !(delta_eff > T::zero()) {
        return Err(Error::InvalidParameter("alpha_start and delta_eff must be positive".into()));
    }
    let (lo_t, hi_t) = (tau1 * delta_eff, tau2 * delta_eff);
    let two = T::lit(2.0);
    let decade = T::lit(10.0).ln();
    let mut evaluations = 0;
    let mut best: Option<(T, DiscrepancyOutcome<T>)> = None;
    let mut eval = |log_alpha: T, evaluations: &mut usize| -> Result<(T, DiscrepancyOutcome<T>)> {
        *evaluations += 1;
        let alpha = log_alpha.exp();
        let (solution, residual) = solve(alpha)?;
        let gap = if residual < lo_t {
            lo_t / residual
        } else if residual > hi_t {
            residual / hi_t
        } else {
            T::one()
        };
        Ok((
            gap.ln(),
            DiscrepancyOutcome {
                alpha,
                solution,
                residual,
                in_band: in_band(residual, lo_t, hi_t),
                evaluations: *evaluations,
            },
        ))
    };
    let keep = |cand: (T, DiscrepancyOutcome<T>), best: &mut Option<(T, DiscrepancyOutcome<T>)>| {
        let better = best.as_ref().map_or(true, |b| cand.0 < b.0);
        if better {
            *best = Some(cand);
        }
    };

    let mut log_a = alpha_start.ln();
    let (mut log_lo, mut log_hi): (Option<T>, Option<T>) = (None, None);
    while log_lo.is_none() || log_hi.is_none() {
        if evaluations >= max_evaluations {
            break;
        }
        let cand = eval(log_a, &mut evaluations)?;
        let r = cand.1.residual;
        let hit = cand.1.in_band;
        keep(cand, &mut best);
        if hit {
            let mut out = best.expect("just stored").1;
            out.evaluations = evaluations;
            return Ok(out);
        }
        if r > hi_t {
            log_hi = Some(log_a);
            if log_lo.is_none() {
                log_a = log_a - decade;
            }
        } else {
            log_lo = Some(log_a);
            if log_hi.is_none() {
                log_a = log_a + decade;
            }
        }
    }
    if let (Some(mut lo), Some(mut hi)) = (log_lo, log_hi) {
        while evaluations < max_evaluations {
            let mid = (lo + hi) / two;
            let cand = eval(mid, &mut evaluations)?;
            let r = cand.1.residual;
            let hit = cand.1.in_band;
            keep(cand, &mut best);
            if hit {
                break;
            }
            if r > hi_t {
                hi = mid;
            } else {
                lo = mid;
            }
        }
    }
    let mut out = best
        .ok_or_else(|| Error::InvalidParameter("discrepancy search needs at least one evaluation".into()))?
        .1;
    out.evaluations = evaluations;
    Ok(out)
}

/// Smallest `k` with `residuals[k] <= tau_hat * delta_eff`.
pub fn discrepancy_stop_index<T: Real>(residuals: &[T], tau_hat: T, delta_eff: T) -> Result<usize> {
    let threshold = tau_hat * delta_eff;
    residuals
        .iter()
        .position(|&r| r <= threshold)
        .ok_or_else(|| Error::NotReached {
            threshold: threshold.to_f64_lossy(),
            min_residual: residuals
                .iter()
                .map(|r| r.to_f64_lossy())
                .fold(f64::INFINITY, f64::min),
        })
}

/// Inputs of the Besov balancing equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BesovBalanceParams<T> {
    pub eta: T,
    /// Number of data points.
    pub m: usize,
    /// Number of retained basis functions.
    pub n: usize,
    pub p: T,
    /// Bound on the Besov norm of the truth.
    pub rho: T,
    pub zeta: T,
    pub beta: T,
    /// Rate constant.
    pub c: T,
}

impl<T: Real> BesovBalanceParams<T> {
    pub fn validate(&self) -> Result<()> {
        let all_positive = [self.eta, self.p, self.rho, self.zeta, self.beta, self.c]
            .iter()
            .all(|v| *v > T::zero() && v.is_finite());
        if !all_positive || self.m == 0 || self.n == 0 {
            return Err(Error::InvalidParameter("Besov balancing parameters must all be positive".into()));
        }
        if !(self.p >= T::one() && self.p <= T::lit(2.0)) {
            return Err(Error::InvalidParameter(format!("p = {} outside [1, 2]", self.p)));
        }
        Ok(())
    }

    /// `L_m(eta) = min(0, ln(eta^2 2 pi m^2 (e/2)^m))`.
    pub fn log_term(&self) -> T {
        let spec = NoiseSpec::new(self.eta, self.m).expect("validated");
        gaussian_log_term(&spec).min(T::zero())
    }

    /// Deterministic-rate side `C E^{zeta/(zeta+beta)} rho~^{beta/(zeta+beta)}`.
    pub fn lhs(&self, alpha_tilde: T) -> T {
        let two = T::lit(2.0);
        let m = T::lit(self.m as f64);
        let l = self.log_term();
        let rp = self.rho.powf(self.p);
        let e = self.eta * ((m - l).sqrt() + (m - l + alpha_tilde * rp / two).sqrt());
        let rho_tilde = self.rho + (rp + (two * m - l) / alpha_tilde).powf(T::one() / self.p);
        let total = self.zeta + self.beta;
        self.c * e.powf(self.zeta / total) * rho_tilde.powf(self.beta / total)
    }

    /// Probability side `Q(m/2, m - L_m) + Q(n/p, alpha~ rho^p / 2)`.
    pub fn rhs(&self, alpha_tilde: T) -> Result<T> {
        let two = T::lit(2.0);
        let m = T::lit(self.m as f64);
        let noise = reg_gamma_q(m / two, m - self.log_term())?;
        let prior = reg_gamma_q(T::lit(self.n as f64) / self.p, alpha_tilde * self.rho.powf(self.p) / two)?;
        Ok(noise + prior)
    }
}

/// Diagnostics returned with the balanced parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct BesovBalanceDiagnostics<T> {
    pub lhs: T,
    pub rhs: T,
    /// Every root found on the scan, as `alpha~`.
    pub roots: Vec<T>,
    /// `(log10 alpha~, lhs, rhs)` at the scan points.
    pub scan: Vec<(f64, f64, f64)>,
}

/// Solves `lhs(alpha~) = rhs(alpha~)`.
///
/// Scans `log10 alpha~` over `[-12, 12]`, bisects every sign change, and
/// returns the root with the smallest balanced value.
pub fn besov_balance_alpha<T: Real>(params: &BesovBalanceParams<T>) -> Result<(T, BesovBalanceDiagnostics<T>)> {
    params.validate()?;
    let ten = T::lit(10.0);
    let diff = |la: T| -> Result<(T, T, T)> {
        let a = ten.powf(la);
        let l = params.lhs(a);
        let r = params.rhs(a)?;
        Ok((l - r, l, r))
    };
    let points = 241;
    let mut scan = Vec::with_capacity(points);
    let mut grid = Vec::with_capacity(points);
    for i in 0..points {
        let la = T::lit(-12.0 + 24.0 * i as f64 / (points - 1) as f64);
        let (d, l, r) = diff(la)?;
        scan.push((la.to_f64_lossy(), l.to_f64_lossy(), r.to_f64_lossy()));
        grid.push((la, d));
    }
    let two = T::lit(2.0);
    let mut roots = Vec::new();
    for w in grid.windows(2) {
        let ((mut a, mut fa), (mut b, fb)) = (w[0], w[1]);
        if fa == T::zero() {
            roots.push(a);
            continue;
        }
        if fa.signum() == fb.signum() || fb == T::zero() {
            continue;
        }
        for _ in 0..200 {
            let mid = (a + b) / two;
            let (fm, l, r) = diff(mid)?;
            if fm == T::zero() || (fm.abs() <= T::lit(1e-13) * l.max(r)) {
                a = mid;
                b = mid;
                break;
            }
            if fm.signum() == fa.signum() {
                a = mid;
                fa = fm;
            } else {
                b = mid;
            }
            if b - a <= T::epsilon() {
                break;
            }
        }
        roots.push((a + b) / two);
    }
    if let Some(&(la, d)) = grid.last() {
        if d == T::zero() {
            roots.push(la);
        }
    }
    let mut best: Option<(T, T, T)> = None;
    for &la in &roots {
        let (_, l, r) = diff(la)?;
        let level = l.max(r);
        if best.map_or(true, |(_, bl, br)| level < bl.max(br)) {
            best = Some((la, l, r));
        }
    }
    match best {
        Some((la, lhs, rhs)) => Ok((
            ten.powf(la),
            BesovBalanceDiagnostics {
                lhs,
                rhs,
                roots: roots.iter().map(|&r| ten.powf(r)).collect(),
                scan,
            },
        )),
        None => Err(Error::NoBracket { scan }),
    }
}

type TailFn<T> = Box<dyn Fn(T) -> T + Send + Sync>;

/// Tail functions and constants of the stochastic Tikhonov rate bound.
///
/// With `alpha = kappa rho^q` the bound evaluated at `(xi, tau)` is
/// `max(rho + phi_cl(xi) + phi_de(tau), c (rho + alpha tau) / (sqrt(alpha) sqrt(1 - xi)))`.
pub struct TikhonovRateModel<T> {
    /// Closedness tail, `xi in (0, 1)`.
    pub phi_cl: TailFn<T>,
    /// Decay tail, `tau > 0`.
    pub phi_de: TailFn<T>,
    pub rate_constant: T,
    /// `kappa` in `alpha = kappa rho^q`.
    pub alpha_scale: T,
    /// `q` in `alpha = kappa rho^q`.
    pub alpha_exponent: T,
}

impl<T> fmt::Debug for TikhonovRateModel<T>
where
    T: fmt::Debug,
{
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TikhonovRateModel")
            .field("rate_constant", &self.rate_constant)
            .field("alpha_scale", &self.alpha_scale)
            .field("alpha_exponent", &self.alpha_exponent)
            .finish_non_exhaustive()
    }
}

impl<T: Real> TikhonovRateModel<T> {
    /// `||v||` uniform on `[0, 1]`: `phi_cl = 1 - xi`, `phi_de = max(0, 1 - tau)`, `alpha ~ rho`.
    pub fn uniform() -> Self {
        Self {
            phi_cl: Box::new(|xi: T| T::one() - xi),
            phi_de: Box::new(|tau: T| (T::one() - tau).max(T::zero())),
            rate_constant: T::one(),
            alpha_scale: T::one(),
            alpha_exponent: T::one(),
        }
    }

    /// `phi_cl = c`, `phi_de = c tau^{-e}`, `alpha ~ rho`.
    pub fn heavy_tail(c: T, e: T) -> Self {
        Self {
            phi_cl: Box::new(move |_| c),
            phi_de: Box::new(move |tau: T| (c * tau.powf(-e)).min(T::one())),
            rate_constant: T::one(),
            alpha_scale: T::one(),
            alpha_exponent: T::one(),
        }
    }

    /// `phi_cl = 1 - xi`, `phi_de = c / (1 + tau)`, `alpha ~ rho^{5/4}`.
    pub fn combined(c: T) -> Self {
        Self {
            phi_cl: Box::new(|xi: T| T::one() - xi),
            phi_de: Box::new(move |tau: T| c / (T::one() + tau)),
            rate_constant: T::one(),
            alpha_scale: T::one(),
            alpha_exponent: T::lit(1.25),
        }
    }

    pub fn with_rate_constant(mut self, c: T) -> Self {
        self.rate_constant = c;
        self
    }

    pub fn with_alpha_scale(mut self, kappa: T) -> Self {
        self.alpha_scale = kappa;
        self
    }

    /// The bound at a fixed `(xi, tau)`.
    pub fn bound_at(&self, rho: T, xi: T, tau: T) -> T {
        let alpha = self.alpha_scale * rho.powf(self.alpha_exponent);
        let first = rho + (self.phi_cl)(xi) + (self.phi_de)(tau);
        let second = self.rate_constant * (rho + alpha * tau) / (alpha.sqrt() * (T::one() - xi).sqrt());
        first.max(second)
    }
}

/// Minimizer of the inf-max bound over the supplied grids.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatePrediction<T> {
    pub bound: T,
    pub xi: T,
    pub tau: T,
}

/// 200 log-spaced `tau` in `[1e-3, 1e3]`.
pub fn default_tau_grid<T: Real>() -> Vec<T> {
    log_spaced(1e-3, 1e3, 200).into_iter().map(T::lit).collect()
}

/// 200 `xi` in `[1e-3, 1 - 1e-3]` with `1 - xi` log-spaced, so the grid is dense near `xi = 1`.
pub fn default_xi_grid<T: Real>() -> Vec<T> {
    log_spaced(1e-3, 1.0 - 1e-3, 200)
        .into_iter()
        .rev()
        .map(|g| T::lit(1.0 - g))
        .collect()
}

fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Exhaustive inf-max over `xi_grid x tau_grid`; ties go to the smallest grid index.
pub fn tikhonov_rate_predict<T: Real>(
    rho_k: T,
    model: &TikhonovRateModel<T>,
    xi_grid: &[T],
    tau_grid: &[T],
) -> Result<RatePrediction<T>> {
    if !(rho_k > T::zero() && rho_k <= T::one()) {
        return Err(Error::InvalidParameter(format!("rho_K = {rho_k} outside (0, 1]")));
    }
    if xi_grid.is_empty() || tau_grid.is_empty() {
        return Err(Error::InvalidParameter("rate grids must be non-empty".into()));
    }
    if xi_grid.iter().any(|&x| !(x > T::zero() && x < T::one())) || tau_grid.iter().any(|&t| !(t > T::zero())) {
        return Err(Error::InvalidParameter("need xi in (0, 1) and tau > 0".into()));
    }
    let mut best = RatePrediction {
        bound: T::infinity(),
        xi: xi_grid[0],
        tau: tau_grid[0],
    };
    for &xi in xi_grid {
        for &tau in tau_grid {
            let b = model.bound_at(rho_k, xi, tau);
            if b < best.bound {
                best = RatePrediction { bound: b, xi, tau };
            }
        }
    }
    Ok(best)
}

/// Solution of `rho^{2 nu/(2 nu + 1)} = 2 nu` on `(0, 1/2]` by bisection, and
/// the closed-form approximation `W(-ln rho) / (-2 ln rho)`.
pub fn nu_effective<T: Real>(rho_k: T) -> Result<(T, T)> {
    if !(rho_k > T::zero() && rho_k < T::one()) {
        return Err(Error::domain("nu_effective", format!("rho_K = {rho_k} outside (0, 1)")));
    }
    let two = T::lit(2.0);
    let g = |nu: T| rho_k.powf(two * nu / (two * nu + T::one())) - two * nu;
    let (mut lo, mut hi) = (T::zero(), T::lit(0.5));
    for _ in 0..200 {
        let mid = (lo + hi) / two;
        if g(mid) > T::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= T::epsilon() * hi {
            break;
        }
    }
    let exact = (lo + hi) / two;
    let l = -rho_k.ln();
    let approx = lambert_w0(l)? / (two * l);
    Ok((exact, approx))
}

/// Predicted reconstruction rate `W(-ln rho) / (-ln rho)`.
pub fn nu_rate_predict<T: Real>(rho_k: T) -> Result<T> {
    if !(rho_k > T::zero() && rho_k < T::one()) {
        return Err(Error::domain("nu_rate_predict", format!("rho_K = {rho_k} outside (0, 1)")));
    }
    let l = -rho_k.ln();
    Ok(lambert_w0(l)? / l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn slope(xs: &[f64], ys: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        sxy / sxx
    }

    fn rho_grid() -> Vec<f64> {
        (2..=12).map(|k| 10f64.powf(-(k as f64) / 2.0)).collect()
    }

    fn predicted_slope(model: &TikhonovRateModel<f64>) -> f64 {
        let (xi, tau) = (default_xi_grid(), default_tau_grid());
        let rhos = rho_grid();
        let bounds: Vec<f64> = rhos
            .iter()
            .map(|&r| tikhonov_rate_predict(r, model, &xi, &tau).unwrap().bound.ln())
            .collect();
        let logs: Vec<f64> = rhos.iter().map(|r| r.ln()).collect();
        slope(&logs, &bounds)
    }

    #[test]
    fn apriori_examples() {
        assert_eq!(apriori_filter_alpha(0.3, 0.5, 1.0, 0.3, 1.0), 1.0);
        assert!((apriori_filter_alpha(0.01f64, 0.5, 1.0, 1.0, 1.0) - 0.01).abs() < 1e-15);
        assert!((apriori_filter_alpha(0.01f64, 0.5, 0.0, 1.0, 1.0) - 1e-4).abs() < 1e-18);
        let a: f64 = apriori_filter_alpha(0.02, 0.5, 1.0, 1.0, 1.0);
        assert!((apriori_filter_alpha(0.02, 0.5, 1.0, 1.0, 2.0) - 2.0 * a).abs() < 1e-15);
        assert!(apriori_filter_alpha(0.03, 0.5, 1.0, 1.0, 1.0) > a);
    }

    #[test]
    fn rule_validation() {
        assert!(ParamRule::Discrepancy { tau1: 1.0, tau2: 1.5 }.validate().is_err());
        assert!(ParamRule::Discrepancy { tau1: 1.6, tau2: 1.5 }.validate().is_err());
        assert!(ParamRule::Discrepancy { tau1: 1.1, tau2: 1.5 }.validate().is_ok());
        assert!(ParamRule::DiscrepancyStop { tau_hat: 2.0 }.validate().is_err());
        assert!(ParamRule::AprioriFilter { beta: 0.5, nu: -1.0, rho: 1.0, c: 1.0 }.validate().is_err());
        assert!(ParamRule::Fixed { alpha: 0.0 }.validate().is_err());
    }

    #[test]
    fn discrepancy_closed_form_example() {
        // residual alpha / (1 + alpha) = 0.5 at alpha = 1
        let op = SvdOperator::diagonal(vec![1.0]).unwrap();
        let (alpha, rep) = discrepancy_alpha(&op, &[1.0f64], 0.5 / 1.2, 1.2, 1.2).unwrap();
        assert!((alpha - 1.0).abs() < 1e-9);
        assert!((rep.final_residual - 0.5).abs() < 1e-10);
    }

    #[test]
    fn discrepancy_errors() {
        let op = SvdOperator::diagonal(vec![1.0, 0.5]).unwrap();
        assert!(matches!(discrepancy_alpha(&op, &[0.0, 0.0], 0.1, 1.1, 1.5), Err(Error::TrivialData { .. })));
        let op = SvdOperator::diagonal(vec![1.0, 0.0]).unwrap();
        assert!(matches!(discrepancy_alpha(&op, &[0.1, 1.0], 0.1, 1.1, 1.5), Err(Error::NoFeasibleAlpha { .. })));
    }

    #[test]
    fn discrepancy_exact_data_recovers_generalized_inverse() {
        let op = SvdOperator::diagonal(vec![1.0, 0.5, 0.25]).unwrap();
        let x = [1.0, -1.0, 0.5];
        let y = op.apply(&x).unwrap();
        let (alpha, rep) = discrepancy_alpha(&op, &y, 1e-10, 1.1, 1.5).unwrap();
        assert!(alpha < 1e-8);
        assert!(dist2(&rep.solution, &x) < 1e-7);
    }

    #[test]
    fn tikhonov_residual_is_monotone_in_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let mut sigma: Vec<f64> = (0..10).map(|_| rng.random_range(0.0..1.0)).collect();
            sigma.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let op = SvdOperator::diagonal(sigma).unwrap();
            let y: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut prev = 0.0;
            for k in -80..=40 {
                let r = filter_residual(&op, &y, &FilterKind::Tikhonov { alpha: 10f64.powf(k as f64 / 10.0) }).unwrap();
                assert!(r >= prev - 1e-15);
                prev = r;
            }
        }
    }

    #[test]
    fn discrepancy_search_matches_tikhonov_bisection() {
        let op = SvdOperator::diagonal(vec![1.0, 0.5, 0.2, 0.1]).unwrap();
        let y = [0.8, -0.4, 0.3, 0.2];
        let solve = |alpha: f64| {
            let x = filter_reconstruct(&op, &y, &FilterKind::Tikhonov { alpha })?;
            let r = dist2(&op.apply(&x)?, &y);
            Ok((x, r))
        };
        let out = discrepancy_search(solve, 0.1, 1.1, 1.5, 1.0, 60).unwrap();
        assert!(out.in_band);
        assert!(out.residual >= 0.11 && out.residual <= 0.15);
    }

    #[test]
    fn stop_index_examples() {
        assert_eq!(discrepancy_stop_index(&[0.5], 0.6, 1.0).unwrap(), 0);
        assert_eq!(discrepancy_stop_index(&[3.0, 2.0, 1.0, 0.5], 1.0, 1.0).unwrap(), 2);
        assert!(matches!(discrepancy_stop_index(&[3.0, 0.5], 0.1, 1.0), Err(Error::NotReached { .. })));
    }

    fn besov_params(eta: f64) -> BesovBalanceParams<f64> {
        BesovBalanceParams { eta, m: 256, n: 256, p: 1.0, rho: 1.0, zeta: 1.5, beta: 1.0, c: 1.0 }
    }

    #[test]
    fn besov_balance_self_residual() {
        for eta in [1e-2, 1e-3, 1e-4] {
            let params = besov_params(eta);
            let (a, diag) = besov_balance_alpha(&params).unwrap();
            let (l, r) = (params.lhs(a), params.rhs(a).unwrap());
            assert!((l - r).abs() <= 1e-8 * l.max(r), "eta {eta}: {l} vs {r}");
            assert!((diag.lhs - l).abs() <= 1e-12 * l);
        }
    }

    #[test]
    fn besov_rhs_limits() {
        let p = besov_params(1e-2);
        let noise = p.rhs(1e300).unwrap();
        assert!((p.rhs(1e-300).unwrap() - noise - 1.0).abs() < 1e-12);
        assert_eq!(reg_gamma_q(256.0f64, 1e300).unwrap(), 0.0);
    }

    #[test]
    fn besov_no_bracket_is_reported() {
        // a huge rate constant keeps lhs above rhs everywhere
        let params = BesovBalanceParams { c: 1e6, ..besov_params(1e-2) };
        match besov_balance_alpha(&params) {
            Err(Error::NoBracket { scan }) => assert_eq!(scan.len(), 241),
            other => panic!("expected NoBracket, got {other:?}"),
        }
    }

    #[test]
    fn rate_prediction_slopes() {
        let s = predicted_slope(&TikhonovRateModel::uniform());
        assert!((s - 1.0 / 3.0).abs() <= 0.02, "uniform slope {s}");
        let s = predicted_slope(&TikhonovRateModel::combined(0.5));
        assert!((s - 0.25).abs() <= 0.02, "combined slope {s}");
        let c = 0.1;
        let model = TikhonovRateModel::heavy_tail(c, 1.0);
        for r in rho_grid() {
            let b = tikhonov_rate_predict(r, &model, &default_xi_grid(), &default_tau_grid()).unwrap();
            assert!(b.bound >= c);
        }
    }

    #[test]
    fn rate_prediction_is_monotone_in_tails() {
        let base = TikhonovRateModel::<f64>::combined(0.5);
        let lowered = TikhonovRateModel {
            phi_cl: Box::new(|xi: f64| 0.5 * (1.0 - xi)),
            ..TikhonovRateModel::combined(0.5)
        };
        for r in rho_grid() {
            let a = tikhonov_rate_predict(r, &base, &default_xi_grid(), &default_tau_grid()).unwrap();
            let b = tikhonov_rate_predict(r, &lowered, &default_xi_grid(), &default_tau_grid()).unwrap();
            assert!(b.bound <= a.bound);
        }
    }

    #[test]
    fn default_grids() {
        let xi: Vec<f64> = default_xi_grid();
        assert_eq!(xi.len(), 200);
        assert!((xi[0] - 1e-3).abs() < 1e-12 && (xi[199] - (1.0 - 1e-3)).abs() < 1e-12);
        assert!(xi.windows(2).all(|w| w[0] < w[1]));
        let tau: Vec<f64> = default_tau_grid();
        assert!((tau[0] - 1e-3).abs() < 1e-15 && (tau[199] - 1e3).abs() < 1e-9);
    }

    #[test]
    fn nu_effective_examples() {
        let (exact, _) = nu_effective(1.0f64 - 1e-9).unwrap();
        assert!((exact - 0.5).abs() < 1e-8);
        let err = |rho: f64| {
            let (e, a) = nu_effective(rho).unwrap();
            assert!((rho.powf(2.0 * e / (2.0 * e + 1.0)) - 2.0 * e).abs() <= 1e-12);
            (a - e).abs() / e
        };
        assert!(err(1e-4) < err(1e-2));
        assert!(err(1e-6) < err(1e-2));
        let rates: Vec<f64> = (1..=30).map(|k| nu_rate_predict(10f64.powf(-(k as f64) / 2.0)).unwrap()).collect();
        assert!(rates.windows(2).all(|w| w[1] < w[0]));
        assert!(nu_effective(0.0f64).is_err() && nu_effective(1.0f64).is_err());
    }

    proptest! {
        #[test]
        fn discrepancy_postcondition_holds(seed in any::<u64>(), delta in 1e-4f64..1e-1) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sigma: Vec<f64> = (1..=20).map(|n| 1.0 / n as f64).collect();
            let op = SvdOperator::diagonal(sigma).unwrap();
            let y: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
            prop_assume!(norm2(&y) > 1.1 * delta);
            let (_, rep) = discrepancy_alpha(&op, &y, delta, 1.1, 1.5).unwrap();
            let r = dist2(&op.apply(&rep.solution).unwrap(), &y);
            prop_assert!(r >= 1.1 * delta * (1.0 - 1e-10) && r <= 1.5 * delta * (1.0 + 1e-10));
        }

        #[test]
        fn nu_exact_self_residual(rho in 1e-12f64..0.999) {
            let (e, _) = nu_effective(rho).unwrap();
            prop_assert!((rho.powf(2.0 * e / (2.0 * e + 1.0)) - 2.0 * e).abs() <= 1e-12);
        }
    }
}
