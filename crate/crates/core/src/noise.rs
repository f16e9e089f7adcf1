//! Gaussian noise and the stochastic noise-level quantities built on it.
//!
//! The noise is `eps ~ N(0, eta^2 I_m)`. Besides sampling, this module
//! provides the closed-form expectation of `||eps||_2`, the analytic Ky Fan
//! bound for Gaussian noise, the moment bound, the tail probability of the
//! inflated expectation, the inflation schedules `tau(eta)` and the empirical
//! Ky Fan estimator used on Monte Carlo output.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::scalar::{dist2, norm2, Real};
use crate::special::{ln_gamma, reg_gamma_q};

/// Gaussian noise with covariance `eta^2 * I_m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec<T> {
    eta: T,
    m: usize,
}

impl<T: Real> NoiseSpec<T> {
    pub fn new(eta: T, m: usize) -> Result<Self> {
        if !(eta > T::zero()) || !eta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "noise level eta = {eta} must be positive and finite"
            )));
        }
        if m == 0 {
            return Err(Error::InvalidParameter("data dimension m must be at least 1".into()));
        }
        Ok(Self { eta, m })
    }

    pub fn eta(&self) -> T {
        self.eta
    }

    pub fn m(&self) -> usize {
        self.m
    }

    fn m_real(&self) -> T {
        T::lit(self.m as f64)
    }
}

/// Realized distances `d(X1, X2)` across trials.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalSample<T> {
    distances: Vec<T>,
}

impl<T: Real> EmpiricalSample<T> {
    pub fn new(distances: Vec<T>) -> Result<Self> {
        if distances.is_empty() {
            return Err(Error::InvalidParameter("empirical sample is empty".into()));
        }
        if let Some(bad) = distances.iter().find(|d| !(**d >= T::zero()) || !d.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "distance {bad} is negative or not finite"
            )));
        }
        Ok(Self { distances })
    }

    pub fn distances(&self) -> &[T] {
        &self.distances
    }

    pub fn count(&self) -> usize {
        self.distances.len()
    }
}

/// One noise realization for stream `id`; component `j` is the `j`-th draw of that stream.
pub fn noise_vector<T: Real>(spec: &NoiseSpec<T>, seed: u64, id: u64) -> Vec<T> {
    rng::standard_normals(seed, Purpose::Noise, id, spec.m)
        .into_iter()
        .map(|z| spec.eta * T::lit(z))
        .collect()
}

/// `trials x m` i.i.d. `N(0, eta^2)` draws. Row `i` only depends on `(seed, i)`.
pub fn sample_noise<T: Real>(spec: &NoiseSpec<T>, seed: u64, trials: usize) -> Result<Vec<Vec<T>>> {
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be at least 1".into()));
    }
    Ok((0..trials)
        .into_par_iter()
        .map(|i| noise_vector(spec, seed, i as u64))
        .collect())
}

/// `E||eps||_2 = eta * sqrt(2) * Gamma((m+1)/2) / Gamma(m/2)`, the scaled chi mean.
pub fn expected_norm<T: Real>(spec: &NoiseSpec<T>) -> T {
    spec.eta * T::lit(2.0).sqrt() * chi_mean_ratio::<T>(spec.m)
}

/// `Gamma((m+1)/2) / Gamma(m/2)`.
fn chi_mean_ratio<T: Real>(m: usize) -> T {
    let half_m = T::lit(m as f64 * 0.5);
    let hi = ln_gamma(half_m + T::lit(0.5)).expect("positive argument");
    let lo = ln_gamma(half_m).expect("positive argument");
    (hi - lo).exp()
}

/// The Jensen bound `eta * sqrt(m) >= E||eps||_2`.
pub fn expected_norm_upper<T: Real>(spec: &NoiseSpec<T>) -> T {
    spec.eta * spec.m_real().sqrt()
}

/// `ln(eta^2 * 2 pi * m^2 * (e/2)^m)`, evaluated in log space so large `m` cannot overflow.
pub fn gaussian_log_term<T: Real>(spec: &NoiseSpec<T>) -> T {
    let m = spec.m_real();
    let two = T::lit(2.0);
    two * spec.eta.ln()
        + T::lit(2.0 * std::f64::consts::PI).ln()
        + two * m.ln()
        + m * (T::one() - two.ln())
}

/// `sqrt(2) * eta * sqrt(m - min(ln(...), 0))` without the cap at 1.
pub fn kyfan_bound_uncapped<T: Real>(spec: &NoiseSpec<T>) -> T {
    let log_term = gaussian_log_term(spec).min(T::zero());
    T::lit(2.0).sqrt() * spec.eta * (spec.m_real() - log_term).sqrt()
}

/// Analytic upper bound on `rho_K(eps, 0)` for Gaussian noise.
pub fn kyfan_bound_gaussian<T: Real>(spec: &NoiseSpec<T>) -> T {
    kyfan_bound_uncapped(spec).min(T::one())
}

/// `(E d^s)^{1/(s+1)}`, a Ky Fan bound from the `s`-th moment of the distance.
pub fn kyfan_bound_moment<T: Real>(moment: T, s: u32) -> Result<T> {
    if !(moment >= T::zero()) {
        return Err(Error::InvalidParameter(format!("moment {moment} must be nonnegative")));
    }
    if s == 0 {
        return Err(Error::InvalidParameter("moment order s must be at least 1".into()));
    }
    Ok(moment.powf(T::one() / T::lit(f64::from(s) + 1.0)))
}

/// `P(||eps||_2 >= tau * E||eps||_2)`; independent of the noise level.
pub fn tail_prob_tau<T: Real>(tau: T, m: usize) -> Result<T> {
    if !(tau > T::zero()) {
        return Err(Error::InvalidParameter(format!("tau = {tau} must be positive")));
    }
    if m == 0 {
        return Err(Error::InvalidParameter("data dimension m must be at least 1".into()));
    }
    let z = tau * chi_mean_ratio::<T>(m);
    reg_gamma_q(T::lit(m as f64 * 0.5), z * z)
}

/// Empirical Ky Fan distance `inf{eps > 0 : #{d_i > eps} / n < eps}`.
///
/// The exceedance fraction is a right-continuous step function, so the
/// infimum is found exactly by scanning the sorted sample once.
pub fn empirical_kyfan<T: Real>(sample: &EmpiricalSample<T>) -> T {
    let mut d = sample.distances.clone();
    d.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let n = d.len();
    let n_real = T::lit(n as f64);

    // On [left, right) the exceedance fraction is constant.
    let mut left = T::zero();
    let mut i = 0;
    // skip exact zeros: they never exceed any eps > 0
    while i < n && d[i] == T::zero() {
        i += 1;
    }
    loop {
        let fraction = T::lit((n - i) as f64) / n_real;
        let right = if i < n { d[i] } else { T::infinity() };
        let candidate = left.max(fraction);
        if candidate < right {
            return candidate;
        }
        // advance past the tie block at d[i]
        left = d[i];
        let value = d[i];
        while i < n && d[i] == value {
            i += 1;
        }
    }
}

/// Inflation schedule for the expectation-based noise proxy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TauSchedule<T> {
    /// Fixed inflation factor, must exceed 1.
    Constant(T),
    /// `max(1, sqrt(1 - ln(eta^2 2 pi m^2 (e/2)^m)))`, growing without bound as `eta -> 0`.
    LogInflating,
}

pub fn tau_schedule<T: Real>(spec: &NoiseSpec<T>, kind: TauSchedule<T>) -> Result<T> {
    match kind {
        TauSchedule::Constant(c) => {
            if c > T::one() && c.is_finite() {
                Ok(c)
            } else {
                Err(Error::InvalidParameter(format!(
                    "constant inflation tau = {c} must exceed 1"
                )))
            }
        }
        TauSchedule::LogInflating => {
            let inner = T::one() - gaussian_log_term(spec);
            Ok(if inner > T::one() { inner.sqrt() } else { T::one() })
        }
    }
}

/// How the deterministic noise level is replaced in a parameter-choice rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeltaMode<T> {
    /// The analytic Gaussian Ky Fan bound.
    KyFanBound,
    /// `tau(eta) * eta * sqrt(m)`.
    InflatedExpectation(TauSchedule<T>),
}

pub fn delta_eff<T: Real>(spec: &NoiseSpec<T>, mode: DeltaMode<T>) -> Result<T> {
    match mode {
        DeltaMode::KyFanBound => Ok(kyfan_bound_gaussian(spec)),
        DeltaMode::InflatedExpectation(kind) => {
            Ok(tau_schedule(spec, kind)? * expected_norm_upper(spec))
        }
    }
}

/// Caps enforcing uniform integrability of a family of reconstructions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationCaps<T> {
    pub norm_cap: T,
    pub sup_cap: T,
}

impl<T: Real> TruncationCaps<T> {
    pub fn new(norm_cap: T, sup_cap: T) -> Result<Self> {
        if !(norm_cap > T::zero()) || !(sup_cap > T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "truncation caps must be positive (norm {norm_cap}, sup {sup_cap})"
            )));
        }
        Ok(Self { norm_cap, sup_cap })
    }

    pub fn admits(&self, x: &[T]) -> bool {
        let sup = x.iter().fold(T::zero(), |acc, v| acc.max(v.abs()));
        norm2(x) <= self.norm_cap && sup <= self.sup_cap
    }
}

/// Returns `x` when it respects both caps and the zero vector otherwise.
pub fn truncate_solution<T: Real>(x: &[T], caps: &TruncationCaps<T>) -> Vec<T> {
    if caps.admits(x) {
        x.to_vec()
    } else {
        vec![T::zero(); x.len()]
    }
}

/// Empirical Ky Fan distance of per-trial vectors to a solution set.
pub fn distance_to_set_kyfan<T: Real>(per_trial: &[Vec<T>], solution_set: &[Vec<T>]) -> Result<T> {
    if solution_set.is_empty() {
        return Err(Error::InvalidParameter("solution set is empty".into()));
    }
    let distances = per_trial
        .iter()
        .map(|x| {
            solution_set.iter().try_fold(T::infinity(), |best, s| {
                Error::check_len(s.len(), x.len())?;
                Ok(best.min(dist2(x, s)))
            })
        })
        .collect::<Result<Vec<T>>>()?;
    Ok(empirical_kyfan(&EmpiricalSample::new(distances)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(eta: f64, m: usize) -> NoiseSpec<f64> {
        NoiseSpec::new(eta, m).unwrap()
    }

    fn kyfan(d: &[f64]) -> f64 {
        empirical_kyfan(&EmpiricalSample::new(d.to_vec()).unwrap())
    }

    // Brute-force oracle: scan a fine eps grid for the first eps satisfying the definition.
    fn kyfan_brute(d: &[f64], step: f64) -> f64 {
        let n = d.len() as f64;
        let mut eps = step;
        loop {
            let frac = d.iter().filter(|&&v| v > eps).count() as f64 / n;
            if frac < eps {
                return eps;
            }
            eps += step;
        }
    }

    #[test]
    fn spec_validation() {
        assert!(NoiseSpec::new(0.0, 4).is_err());
        assert!(NoiseSpec::new(-1.0, 4).is_err());
        assert!(NoiseSpec::new(1.0, 0).is_err());
        assert!(NoiseSpec::new(f64::NAN, 1).is_err());
    }

    #[test]
    fn sampled_component_means_vanish() {
        let trials = 200_000;
        let draws = sample_noise(&spec(1.0, 4), 11, trials).unwrap();
        let tol = 3.0 / (trials as f64).sqrt();
        for j in 0..4 {
            let mean = draws.iter().map(|r| r[j]).sum::<f64>() / trials as f64;
            assert!(mean.abs() < tol, "component {j}: mean {mean}");
        }
        let var = draws.iter().map(|r| r[0] * r[0]).sum::<f64>() / trials as f64;
        assert!((var - 1.0).abs() < 0.02);
    }

    #[test]
    fn sampled_norm_matches_chi_mean() {
        let s = spec(0.5, 2);
        let draws = sample_noise(&s, 3, 100_000).unwrap();
        let mean = draws.iter().map(|r| norm2(r)).sum::<f64>() / draws.len() as f64;
        let expected = expected_norm(&s);
        assert!((mean / expected - 1.0).abs() < 0.01, "{mean} vs {expected}");
    }

    #[test]
    fn zero_trials_rejected() {
        assert!(sample_noise(&spec(1.0, 2), 0, 0).is_err());
    }

    #[test]
    fn expected_norm_closed_forms() {
        let e1 = expected_norm(&spec(1.0, 1));
        assert!((e1 - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-14);
        let e2 = expected_norm(&spec(1.0, 2));
        assert!((e2 - (std::f64::consts::PI / 2.0).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn expected_norm_against_monte_carlo() {
        // Monte Carlo oracle, 10^6 samples, 3 standard errors
        for m in [1usize, 2] {
            let s = spec(1.0, m);
            let n = 1_000_000;
            let norms: Vec<f64> = (0..n as u64).map(|i| norm2(&noise_vector(&s, 99, i))).collect();
            let mean = norms.iter().sum::<f64>() / n as f64;
            let var = norms.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
            let se = (var / n as f64).sqrt();
            assert!((mean - expected_norm(&s)).abs() < 3.0 * se, "m={m}");
        }
    }

    #[test]
    fn expectation_ordering_on_grid() {
        for m in 1..=64 {
            for eta in [1e-4, 0.1, 1.0, 10.0] {
                let s = spec(eta, m);
                let e = expected_norm(&s);
                let upper = expected_norm_upper(&s);
                assert!(e <= upper * (1.0 + 1e-14));
                assert!(upper <= kyfan_bound_uncapped(&s) * (1.0 + 1e-14));
            }
        }
        assert!((expected_norm_upper(&spec(0.1, 4)) - 0.2).abs() < 1e-15);
        assert_eq!(expected_norm_upper(&spec(1.0, 1)), 1.0);
    }

    #[test]
    fn kyfan_bound_examples() {
        let s = spec(0.1, 4);
        assert!((gaussian_log_term(&s) - 1.233).abs() < 1e-3);
        assert!((kyfan_bound_gaussian(&s) - 2.0f64.sqrt() * 0.2).abs() < 1e-12);

        let s = spec(1e-4, 1);
        let log_term = gaussian_log_term(&s);
        assert!((log_term + 16.27).abs() < 0.01);
        let expected = 2.0f64.sqrt() * 1e-4 * (1.0 - log_term).sqrt();
        assert!((kyfan_bound_gaussian(&s) - expected).abs() < 1e-15);
        assert!((kyfan_bound_gaussian(&s) - 5.88e-4).abs() < 1e-6);

        assert_eq!(kyfan_bound_gaussian(&spec(10.0, 10)), 1.0);
    }

    #[test]
    fn moment_bound_examples() {
        assert_eq!(kyfan_bound_moment(0.0, 3).unwrap(), 0.0);
        assert!((kyfan_bound_moment(0.04f64, 1).unwrap() - 0.2).abs() < 1e-15);
        assert!((kyfan_bound_moment(0.008f64, 2).unwrap() - 0.2).abs() < 1e-15);
        assert!(kyfan_bound_moment(-1.0, 1).is_err());
    }

    #[test]
    fn moment_bound_dominates_empirical_kyfan() {
        let s = spec(0.05, 3);
        let draws = sample_noise(&s, 5, 20_000).unwrap();
        let d: Vec<f64> = draws.iter().map(|r| norm2(r)).collect();
        let est = kyfan(&d);
        for order in 1..4 {
            let moment = d.iter().map(|v| v.powi(order as i32)).sum::<f64>() / d.len() as f64;
            assert!(est <= kyfan_bound_moment(moment, order).unwrap() + 0.01);
        }
    }

    #[test]
    fn tail_probability_examples() {
        assert!((tail_prob_tau(1e-9f64, 3).unwrap() - 1.0).abs() < 1e-12);
        let p = tail_prob_tau(1.0, 2).unwrap();
        assert!((p - (-std::f64::consts::FRAC_PI_4).exp()).abs() < 1e-14);
        assert!((p - 0.45594).abs() < 1e-5);
    }

    #[test]
    fn tail_probability_against_monte_carlo() {
        let m = 4;
        let tau = 1.5;
        let s = spec(0.3, m);
        let n = 200_000;
        let threshold = tau * expected_norm(&s);
        let hits = sample_noise(&s, 21, n)
            .unwrap()
            .iter()
            .filter(|r| norm2(r) >= threshold)
            .count();
        let freq = hits as f64 / n as f64;
        let p = tail_prob_tau(tau, m).unwrap();
        let sd = (p * (1.0 - p) / n as f64).sqrt();
        assert!((freq - p).abs() < 3.0 * sd, "{freq} vs {p}");
    }

    #[test]
    fn empirical_kyfan_examples() {
        assert_eq!(kyfan(&[0.0, 0.0, 0.0]), 0.0);
        assert_eq!(kyfan(&[0.5]), 0.5);
        assert!((kyfan(&[0.2, 0.2, 0.2, 0.9]) - 0.25).abs() < 1e-15);
        assert_eq!(kyfan(&[5.0, 7.0]), 1.0);
        assert!(EmpiricalSample::new(vec![0.1, -0.1]).is_err());
        assert!(EmpiricalSample::new(vec![f64::INFINITY]).is_err());
        assert!(EmpiricalSample::<f64>::new(vec![]).is_err());
    }

    #[test]
    fn empirical_kyfan_against_brute_force() {
        let samples: [&[f64]; 5] = [
            &[0.03, 0.5, 0.5, 0.07, 0.2],
            &[0.9, 0.8, 0.7],
            &[0.0, 0.01, 0.02, 0.3],
            &[0.25, 0.25, 0.25, 0.25],
            &[0.11, 0.42, 0.33, 0.05, 0.61, 0.2, 0.15, 0.09],
        ];
        for d in samples {
            let exact = kyfan(d);
            let brute = kyfan_brute(d, 1e-5);
            assert!((exact - brute).abs() <= 1.1e-5, "{d:?}: {exact} vs {brute}");
        }
    }

    #[test]
    fn tau_schedule_examples() {
        assert_eq!(tau_schedule(&spec(0.1, 4), TauSchedule::Constant(1.3)).unwrap(), 1.3);
        assert!(tau_schedule(&spec(0.1, 4), TauSchedule::Constant(1.0)).is_err());
        let t = tau_schedule(&spec(0.01, 8), TauSchedule::LogInflating).unwrap();
        assert!((t - 1.3262).abs() < 1e-4, "{t}");
        assert_eq!(tau_schedule(&spec(1.0, 8), TauSchedule::LogInflating).unwrap(), 1.0);
    }

    #[test]
    fn delta_eff_examples_and_limits() {
        let s = spec(0.1, 4);
        assert!((delta_eff(&s, DeltaMode::KyFanBound).unwrap() - 0.282_842_712).abs() < 1e-8);
        let d = delta_eff(&s, DeltaMode::InflatedExpectation(TauSchedule::Constant(1.3))).unwrap();
        assert!((d - 0.26).abs() < 1e-14);

        let mut prev_tau = 0.0;
        let mut prev_delta = f64::INFINITY;
        for k in 1..=6 {
            let s = spec(10f64.powi(-k), 4);
            let tau = tau_schedule(&s, TauSchedule::LogInflating).unwrap();
            let d = delta_eff(&s, DeltaMode::InflatedExpectation(TauSchedule::LogInflating)).unwrap();
            assert!(tau >= prev_tau);
            assert!(d < prev_delta);
            prev_tau = tau;
            prev_delta = d;
        }
        assert!(prev_tau > 3.0);
        assert!(prev_delta < 1e-4);
    }

    #[test]
    fn truncation() {
        let caps = TruncationCaps::new(1.0, 0.8).unwrap();
        assert_eq!(truncate_solution(&[0.0, 0.0], &caps), vec![0.0, 0.0]);
        assert_eq!(truncate_solution(&[0.5, -0.5], &caps), vec![0.5, -0.5]);
        assert_eq!(truncate_solution(&[2.0, 0.0], &caps), vec![0.0, 0.0]);
        assert_eq!(truncate_solution(&[0.9, 0.0], &caps), vec![0.0, 0.0]);
        assert!(TruncationCaps::new(0.0, 1.0).is_err());
    }

    #[test]
    fn distance_to_set() {
        let a = vec![1.0, 0.0];
        let b = vec![-1.0, 0.0];
        assert!(distance_to_set_kyfan(&[a.clone()], &[]).is_err());
        assert_eq!(distance_to_set_kyfan(&[a.clone(), b.clone()], &[a.clone(), b.clone()]).unwrap(), 0.0);

        let trials: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                let dev = 0.1 * ((i % 7) as f64 / 6.0);
                if i % 2 == 0 {
                    vec![1.0 + dev, 0.0]
                } else {
                    vec![-1.0, dev]
                }
            })
            .collect();
        let to_set = distance_to_set_kyfan(&trials, &[a.clone(), b.clone()]).unwrap();
        assert!(to_set <= 0.1 + 1e-15);
        let to_a = distance_to_set_kyfan(&trials, &[a.clone()]).unwrap();
        assert!(to_a >= 0.5);

        let plain: Vec<f64> = trials.iter().map(|x| dist2(x, &a)).collect();
        assert_eq!(to_a, kyfan(&plain));
    }

    proptest! {
        #[test]
        fn empirical_kyfan_bounds(d in proptest::collection::vec(0.0f64..3.0, 1..60)) {
            let est = kyfan(&d);
            let max = d.iter().cloned().fold(0.0, f64::max);
            prop_assert!(est >= 0.0 && est <= 1.0 && est <= max);
            let mut more = d.clone();
            more.push(0.0);
            prop_assert!(kyfan(&more) <= est);
        }

        #[test]
        fn tail_probability_is_eta_free(tau in 0.2f64..3.0, m in 1usize..40) {
            // the function takes no eta; rescaling the sampled noise cannot change it either
            let p = tail_prob_tau(tau, m).unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
            let a = expected_norm(&spec(1.0, m));
            let b = expected_norm(&spec(0.01, m));
            prop_assert!((a * 0.01 - b).abs() <= 1e-15 * a);
        }
    }
}
