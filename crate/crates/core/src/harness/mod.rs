//! Monte Carlo experiment harness.
//!
//! A study runs `trials_per_eta` independent noise draws at every `eta` of the
//! grid. Trial `t` at grid position `g` draws from the stream
//! [`stream_id(g, t)`](crate::rng::stream_id), and results are collected in
//! trial order, so the output depends only on the configuration and its seed.

mod config;
mod export;
mod stats;

use std::cell::RefCell;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{
    CapsConfig, DeltaConfig, ExperimentConfig, FilterChoice, OperatorConfig, RuleConfig, StudyConfig, TruthConfig,
    SCHEMA_VERSION,
};
pub use export::{read_json, read_summaries_csv, write_json, write_summaries_csv, write_table_csv, CSV_HEADER};
pub use stats::{fit_rate, spearman, RateFit};

use crate::error::{Error, Result};
use crate::noise::{
    delta_eff, empirical_kyfan, noise_vector, truncate_solution, EmpiricalSample, NoiseSpec,
    TruncationCaps,
};
use crate::operators::{haar_forward, haar_inverse, operator_norm_estimate, AutoconvGrid, BesovWeights, SvdOperator};
use crate::param_choice::{
    apriori_filter_alpha, besov_balance_alpha, discrepancy_alpha, discrepancy_search, noise_squared_alpha, ParamRule,
};
use crate::regularization::{
    filter_reconstruct, landweber_filter_stop, prox_gradient_solve, separable_diagonal_solve, FilterKind,
    ProxGradientParams,
};
use crate::rng::{stream_id, uniform01, Purpose};
use crate::scalar::{dist2, norm2};

/// Outcome of one noise draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub eta: f64,
    pub trial: usize,
    pub delta_eff: f64,
    /// Regularization parameter, or the stopping index for iterative rules.
    /// `None` when the rule returned the zero solution.
    pub alpha_or_kstar: Option<f64>,
    /// Distance of the reconstruction to the solution set.
    pub error: f64,
    /// Same distance after truncation.
    pub error_truncated: f64,
    pub residual: f64,
    pub truncated: bool,
    /// The solver or rule reported a numerical failure; the row holds its fallback.
    pub flagged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Per-eta aggregate; its fields are the CSV columns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaSummary {
    pub eta: f64,
    pub delta_eff: f64,
    /// Mean over trials with a finite parameter (NaN when there are none).
    #[serde(with = "export::nan_as_null")]
    pub alpha_or_kstar: f64,
    /// Mean error of the truncated reconstructions.
    pub err_mean: f64,
    /// Empirical Ky Fan distance of the untruncated reconstructions.
    pub err_kyfan: f64,
    pub residual_mean: f64,
    pub trials: usize,
    pub truncated_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyOutput {
    pub summaries: Vec<EtaSummary>,
    pub trials: Vec<TrialResult>,
}

impl StudyOutput {
    pub fn flagged_count(&self) -> usize {
        self.trials.iter().filter(|t| t.flagged).count()
    }

    /// More than half of all trials were flagged.
    pub fn numerically_failed(&self) -> bool {
        2 * self.flagged_count() > self.trials.len()
    }

    /// `(eta, mean delta^2 / alpha, mean error)` per grid point.
    pub fn ratio_rows(&self) -> Vec<(f64, f64, f64)> {
        self.summaries
            .iter()
            .map(|s| {
                let ratios: Vec<f64> = self
                    .trials
                    .iter()
                    .filter(|t| t.eta == s.eta)
                    .filter_map(|t| t.alpha_or_kstar.map(|a| t.delta_eff * t.delta_eff / a))
                    .collect();
                (s.eta, mean(&ratios), s.err_mean)
            })
            .collect()
    }

    /// `(delta_eff, err_kyfan)` pairs for rate fitting.
    pub fn kyfan_points(&self) -> Vec<(f64, f64)> {
        self.summaries.iter().map(|s| (s.delta_eff, s.err_kyfan)).collect()
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// What a trial hands back before truncation and scoring.
struct Reconstruction {
    solution: Vec<f64>,
    alpha_or_kstar: Option<f64>,
    residual: f64,
    flagged: bool,
    note: Option<String>,
}

impl Reconstruction {
    /// Zero solution in place of a failed rule.
    fn fallback(n: usize, data: &[f64], err: &Error) -> Self {
        Self {
            solution: vec![0.0; n],
            alpha_or_kstar: None,
            residual: norm2(data),
            flagged: !matches!(err, Error::TrivialData { .. }),
            note: Some(err.to_string()),
        }
    }
}

/// A study with everything that does not depend on the noise draw precomputed.
enum Prepared {
    Filter {
        op: SvdOperator<f64>,
        truth: Vec<f64>,
        exact: Vec<f64>,
        filter: FilterChoice,
        gamma: f64,
        max_iter: usize,
    },
    Autoconv {
        grid: AutoconvGrid<f64>,
        truth: Vec<f64>,
        exact: Vec<f64>,
        x0_coeffs: Vec<f64>,
        step: f64,
        inner_tol: f64,
        inner_max_iter: usize,
        alpha_evaluations: usize,
    },
    Besov {
        sigma: Vec<f64>,
        weights: BesovWeights<f64>,
        truth: Vec<f64>,
        exact: Vec<f64>,
    },
    NuRandom {
        op: SvdOperator<f64>,
        v: Vec<f64>,
        nu_max: f64,
        gamma: f64,
        max_iter: usize,
    },
}

fn build_operator(cfg: &OperatorConfig) -> Result<SvdOperator<f64>> {
    match cfg {
        OperatorConfig::DiagonalPower { n, exponent } => {
            SvdOperator::diagonal((1..=*n).map(|k| (k as f64).powf(-exponent)).collect())
        }
        OperatorConfig::Diagonal { sigma } => SvdOperator::diagonal(sigma.clone()),
        OperatorConfig::Csv { path } => SvdOperator::from_csv(path),
    }
}

/// `w_n` proportional to `n^{-decay}`, scaled to norm `norm`.
fn power_decay(n: usize, decay: f64, norm: f64) -> Vec<f64> {
    let raw: Vec<f64> = (1..=n).map(|k| (k as f64).powf(-decay)).collect();
    let scale = norm / norm2(&raw);
    raw.into_iter().map(|v| v * scale).collect()
}

/// Two dyadic plateaus on `[0, 1]`: height `a` on `[1/8, 3/8)`, `a/2` on `[5/8, 3/4)`.
pub fn two_bump_truth(m: usize, amplitude: f64) -> Vec<f64> {
    (0..m)
        .map(|k| {
            let s = k as f64 / m as f64;
            if (0.125..0.375).contains(&s) {
                amplitude
            } else if (0.625..0.75).contains(&s) {
                0.5 * amplitude
            } else {
                0.0
            }
        })
        .collect()
}

/// One spike per Haar level, `c = a 2^{-zeta j}`, with weighted penalty `varrho^p`.
pub fn besov_spike_truth(weights: &BesovWeights<f64>, varrho: f64) -> Vec<f64> {
    let levels = weights.levels();
    let n = 1usize << levels;
    let p = weights.p();
    let a = (varrho.powf(p) / (levels + 1) as f64).powf(1.0 / p);
    let zeta = weights.zeta();
    let mut c = vec![0.0; n];
    c[0] = a;
    for j in 0..levels {
        c[1 << j] = a * 2f64.powf(-zeta * j as f64);
    }
    c
}

fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    match &config.study {
        StudyConfig::Filter { filter, operator, truth, gamma, max_iter, .. } => {
            let op = build_operator(operator).map_err(|e| Error::Config(e.to_string()))?;
            let truth = match truth {
                TruthConfig::Source { nu, decay, norm } => {
                    op.source_element(nu / 2.0, &power_decay(op.cols(), *decay, *norm))?
                }
                TruthConfig::Explicit { values } => values.clone(),
            };
            Error::check_len(op.cols(), truth.len()).map_err(|e| Error::Config(e.to_string()))?;
            let exact = op.apply(&truth)?;
            let gamma = gamma.unwrap_or(0.9 / (op.norm() * op.norm()));
            Ok(Prepared::Filter {
                op,
                truth,
                exact,
                filter: *filter,
                gamma,
                max_iter: *max_iter,
            })
        }
        StudyConfig::Autoconv { m, x0, inner_tol, inner_max_iter, alpha_evaluations, amplitude, .. } => {
            let grid = AutoconvGrid::new(*m)?;
            let truth = two_bump_truth(*m, *amplitude);
            let exact = grid.apply(&truth)?;
            let x0_values = vec![*x0; *m];
            let x0_coeffs = haar_forward(&x0_values)?;
            let lipschitz = operator_norm_estimate(
                |v| grid.derivative_apply(&x0_values, v).expect("grid length"),
                |r| grid.derivative_adjoint_apply(&x0_values, r).expect("grid length"),
                *m,
                100,
            );
            Ok(Prepared::Autoconv {
                grid,
                truth,
                exact,
                x0_coeffs,
                step: 1.0 / (lipschitz * lipschitz),
                inner_tol: *inner_tol,
                inner_max_iter: *inner_max_iter,
                alpha_evaluations: *alpha_evaluations,
            })
        }
        StudyConfig::Besov { levels, beta, s, p, d, varrho, .. } => {
            let weights = BesovWeights::new(*s, *p, *d, *levels).map_err(|e| Error::Config(e.to_string()))?;
            let n = 1usize << levels;
            let sigma: Vec<f64> = (0..n)
                .map(|i| 2f64.powf(-beta * crate::operators::haar_level(i) as f64))
                .collect();
            let truth = besov_spike_truth(&weights, *varrho);
            let exact: Vec<f64> = truth.iter().zip(&sigma).map(|(c, s)| c * s).collect();
            Ok(Prepared::Besov { sigma, weights, truth, exact })
        }
        StudyConfig::NuRandom { operator, nu_max, decay, norm, max_iter, .. } => {
            let op = build_operator(operator).map_err(|e| Error::Config(e.to_string()))?;
            let v = power_decay(op.cols(), *decay, *norm);
            let gamma = 0.9 / (op.norm() * op.norm());
            Ok(Prepared::NuRandom {
                op,
                v,
                nu_max: *nu_max,
                gamma,
                max_iter: *max_iter,
            })
        }
    }
}

fn study_parts(study: &StudyConfig) -> (DeltaConfig, RuleConfig) {
    match study {
        StudyConfig::Filter { delta, rule, .. }
        | StudyConfig::Autoconv { delta, rule, .. }
        | StudyConfig::Besov { delta, rule, .. }
        | StudyConfig::NuRandom { delta, rule, .. } => (*delta, *rule),
    }
}

fn filter_kind(choice: FilterChoice, alpha: f64, gamma: f64) -> FilterKind<f64> {
    match choice {
        FilterChoice::Tikhonov => FilterKind::Tikhonov { alpha },
        FilterChoice::Tsvd => FilterKind::Tsvd { alpha },
        // a priori strength alpha corresponds to k = 1/alpha iterations
        FilterChoice::Landweber => FilterKind::LandweberFilter {
            k: (1.0 / alpha).ceil().clamp(1.0, u32::MAX as f64) as u32,
            gamma,
        },
    }
}

struct TrialContext<'a> {
    config: &'a ExperimentConfig,
    prepared: &'a Prepared,
    caps: TruncationCaps<f64>,
}

impl TrialContext<'_> {
    fn run(&self, grid_index: usize, eta: f64, trial: usize) -> Result<TrialResult> {
        let (delta_cfg, rule_cfg) = study_parts(&self.config.study);
        let id = stream_id(grid_index, trial);
        let seed = self.config.seed;
        let rule = config::rule_to_param(&rule_cfg, &self.config.study, eta);

        let (truth_set, recon, delta): (Vec<Vec<f64>>, Reconstruction, f64) = match self.prepared {
            Prepared::Filter { op, truth, exact, filter, gamma, max_iter } => {
                let spec = NoiseSpec::new(eta, op.rows())?;
                let y = add(exact, &noise_vector(&spec, seed, id));
                let delta = delta_eff(&spec, delta_cfg.mode())?;
                let recon = filter_trial(op, &y, delta, &rule, *filter, *gamma, *max_iter);
                (vec![truth.clone()], recon, delta)
            }
            Prepared::NuRandom { op, v, nu_max, gamma, max_iter } => {
                let nu = nu_max * uniform01(seed, Purpose::Smoothness, id);
                let truth = op.source_element(nu, v)?;
                let spec = NoiseSpec::new(eta, op.rows())?;
                let y = add(&op.apply(&truth)?, &noise_vector(&spec, seed, id));
                let delta = delta_eff(&spec, delta_cfg.mode())?;
                let recon = filter_trial(op, &y, delta, &rule, FilterChoice::Landweber, *gamma, *max_iter);
                (vec![truth], recon, delta)
            }
            Prepared::Besov { sigma, weights, truth, exact } => {
                let spec = NoiseSpec::new(eta, sigma.len())?;
                let y = add(exact, &noise_vector(&spec, seed, id));
                let delta = delta_eff(&spec, delta_cfg.mode())?;
                let recon = besov_trial(sigma, weights, &y, delta, &rule);
                (vec![truth.clone()], recon, delta)
            }
            Prepared::Autoconv { grid, truth, exact, x0_coeffs, step, inner_tol, inner_max_iter, alpha_evaluations } => {
                let spec = NoiseSpec::new(eta, grid.m())?;
                let y = add(exact, &noise_vector(&spec, seed, id));
                let delta = delta_eff(&spec, delta_cfg.mode())?;
                let setup = AutoconvSolve {
                    grid,
                    x0: x0_coeffs,
                    step: *step,
                    tol: inner_tol * norm2(x0_coeffs),
                    max_iter: *inner_max_iter,
                    alpha_evaluations: *alpha_evaluations,
                };
                let recon = setup.trial(&y, delta, &rule);
                let negated: Vec<f64> = truth.iter().map(|v| -v).collect();
                (vec![truth.clone(), negated], recon, delta)
            }
        };

        let distance = |x: &[f64]| {
            truth_set
                .iter()
                .map(|t| dist2(x, t))
                .fold(f64::INFINITY, f64::min)
        };
        let truncated = !self.caps.admits(&recon.solution);
        let kept = truncate_solution(&recon.solution, &self.caps);
        Ok(TrialResult {
            eta,
            trial,
            delta_eff: delta,
            alpha_or_kstar: recon.alpha_or_kstar,
            error: distance(&recon.solution),
            error_truncated: distance(&kept),
            residual: recon.residual,
            truncated,
            flagged: recon.flagged,
            note: recon.note,
        })
    }
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn filter_trial(
    op: &SvdOperator<f64>,
    y: &[f64],
    delta: f64,
    rule: &ParamRule<f64>,
    filter: FilterChoice,
    gamma: f64,
    max_iter: usize,
) -> Reconstruction {
    let finish = |kind: FilterKind<f64>, flagged: bool, note: Option<String>| -> Result<Reconstruction> {
        let x = filter_reconstruct(op, y, &kind)?;
        let residual = dist2(&op.apply(&x)?, y);
        Ok(Reconstruction {
            solution: x,
            alpha_or_kstar: Some(kind.strength()),
            residual,
            flagged,
            note,
        })
    };
    let outcome = match *rule {
        ParamRule::AprioriFilter { beta, nu, rho, c } => {
            finish(filter_kind(filter, apriori_filter_alpha(delta, beta, nu, rho, c), gamma), false, None)
        }
        ParamRule::Fixed { alpha } => finish(filter_kind(filter, alpha, gamma), false, None),
        ParamRule::Discrepancy { tau1, tau2 } => discrepancy_alpha(op, y, delta, tau1, tau2).map(|(alpha, rep)| {
            Reconstruction {
                solution: rep.solution,
                alpha_or_kstar: Some(alpha),
                residual: rep.final_residual,
                flagged: false,
                note: None,
            }
        }),
        ParamRule::DiscrepancyStop { tau_hat } => {
            let cap = u32::try_from(max_iter).unwrap_or(u32::MAX);
            match landweber_filter_stop(op, y, gamma, tau_hat * delta, cap) {
                Ok(0) => Ok(Reconstruction {
                    solution: vec![0.0; op.cols()],
                    alpha_or_kstar: Some(0.0),
                    residual: norm2(y),
                    flagged: false,
                    note: None,
                }),
                Ok(k) => finish(FilterKind::LandweberFilter { k, gamma }, false, None),
                Err(e) => finish(FilterKind::LandweberFilter { k: cap.max(1), gamma }, true, Some(e.to_string())),
            }
        }
        ParamRule::BesovBalance(_) | ParamRule::NoiseSquared { .. } => {
            Err(Error::Config("rule is not available for filter studies".into()))
        }
    };
    outcome.unwrap_or_else(|e| Reconstruction::fallback(op.cols(), y, &e))
}

fn besov_trial(sigma: &[f64], weights: &BesovWeights<f64>, y: &[f64], delta: f64, rule: &ParamRule<f64>) -> Reconstruction {
    let alpha = match *rule {
        ParamRule::NoiseSquared { scale, varrho, p } => Ok(noise_squared_alpha(delta, scale, varrho, p)),
        ParamRule::Fixed { alpha } => Ok(alpha),
        // MAP functional scaled by 2 eta^2
        ParamRule::BesovBalance(params) => besov_balance_alpha(&params).map(|(a, _)| a * params.eta * params.eta),
        _ => Err(Error::Config("rule is not available for the Besov study".into())),
    };
    let outcome = alpha.and_then(|alpha| {
        let c = separable_diagonal_solve(sigma, y, alpha, weights.weights(), weights.p())?;
        let fit: Vec<f64> = c.iter().zip(sigma).map(|(c, s)| c * s).collect();
        Ok(Reconstruction {
            residual: dist2(&fit, y),
            solution: c,
            alpha_or_kstar: Some(alpha),
            flagged: false,
            note: None,
        })
    });
    outcome.unwrap_or_else(|e| Reconstruction::fallback(sigma.len(), y, &e))
}

/// l1-penalized Haar coefficients `c` of the autoconvolution, `x = H^{-1} c`.
struct AutoconvSolve<'a> {
    grid: &'a AutoconvGrid<f64>,
    x0: &'a [f64],
    step: f64,
    tol: f64,
    max_iter: usize,
    alpha_evaluations: usize,
}

impl AutoconvSolve<'_> {
    fn forward(&self, c: &[f64]) -> Vec<f64> {
        let x = haar_inverse(c).expect("power-of-two grid");
        self.grid.apply(&x).expect("grid length")
    }

    fn adjoint(&self, c: &[f64], r: &[f64]) -> Vec<f64> {
        let x = haar_inverse(c).expect("power-of-two grid");
        let g = self.grid.derivative_adjoint_apply(&x, r).expect("grid length");
        haar_forward(&g).expect("power-of-two grid")
    }

    /// Regularized solve from `start`; a non-converged solve keeps its last iterate.
    fn solve(&self, y: &[f64], alpha: f64, start: &[f64]) -> (Vec<f64>, f64, bool) {
        let weights = vec![1.0; start.len()];
        let params = ProxGradientParams {
            alpha,
            p: 1.0,
            step: self.step,
            tol: self.tol,
            max_iter: self.max_iter,
            backtracking: true,
            accelerated: true,
            track_objective: false,
        };
        match prox_gradient_solve(|c| self.forward(c), |c, r| self.adjoint(c, r), y, &weights, start, &params) {
            Ok(rep) => (rep.solution, rep.final_residual, true),
            Err(Error::NonConvergence { solution, final_residual, .. }) => (solution, final_residual, false),
            Err(_) => (start.to_vec(), dist2(&self.forward(start), y), false),
        }
    }

    fn trial(&self, y: &[f64], delta: f64, rule: &ParamRule<f64>) -> Reconstruction {
        let to_values = |c: &[f64]| haar_inverse(c).expect("power-of-two grid");
        match *rule {
            ParamRule::Fixed { alpha } => {
                let (c, residual, converged) = self.solve(y, alpha, self.x0);
                Reconstruction {
                    solution: to_values(&c),
                    alpha_or_kstar: Some(alpha),
                    residual,
                    flagged: !converged,
                    note: None,
                }
            }
            ParamRule::Discrepancy { tau1, tau2 } => {
                let data_norm = norm2(y);
                if data_norm <= tau1 * delta {
                    let trivial = Error::TrivialData { data_norm, threshold: tau1 * delta };
                    return Reconstruction::fallback(y.len(), y, &trivial);
                }
                let warm = RefCell::new(self.x0.to_vec());
                let all_converged = RefCell::new(true);
                let search = discrepancy_search(
                    |alpha| {
                        let (c, residual, converged) = self.solve(y, alpha, &warm.borrow());
                        *all_converged.borrow_mut() &= converged;
                        // F'(0) = 0, so a collapsed iterate is a stationary trap for warm starts
                        if c.iter().any(|&v| v != 0.0) {
                            warm.replace(c.clone());
                        } else {
                            warm.replace(self.x0.to_vec());
                        }
                        Ok((c, residual))
                    },
                    delta,
                    tau1,
                    tau2,
                    delta,
                    self.alpha_evaluations,
                );
                match search {
                    Ok(out) => Reconstruction {
                        solution: to_values(&out.solution),
                        alpha_or_kstar: Some(out.alpha),
                        residual: out.residual,
                        flagged: !out.in_band,
                        note: (!all_converged.into_inner()).then(|| "inner solver hit its iteration cap".into()),
                    },
                    Err(e) => Reconstruction::fallback(y.len(), y, &e),
                }
            }
            _ => Reconstruction::fallback(
                y.len(),
                y,
                &Error::Config("rule is not available for the autoconvolution study".into()),
            ),
        }
    }
}

fn summarize(eta: f64, rows: &[TrialResult]) -> Result<EtaSummary> {
    let alphas: Vec<f64> = rows
        .iter()
        .filter_map(|r| r.alpha_or_kstar)
        .filter(|a| a.is_finite())
        .collect();
    // each error is already the distance to the solution set
    let errors: Vec<f64> = rows.iter().map(|r| r.error).collect();
    let err_kyfan = empirical_kyfan(&EmpiricalSample::new(errors)?);
    Ok(EtaSummary {
        eta,
        delta_eff: mean(&rows.iter().map(|r| r.delta_eff).collect::<Vec<_>>()),
        alpha_or_kstar: mean(&alphas),
        err_mean: mean(&rows.iter().map(|r| r.error_truncated).collect::<Vec<_>>()),
        err_kyfan,
        residual_mean: mean(&rows.iter().map(|r| r.residual).collect::<Vec<_>>()),
        trials: rows.len(),
        truncated_count: rows.iter().filter(|r| r.truncated).count(),
    })
}

/// Runs every trial of the study and aggregates per `eta`.
///
/// Numerical failures of individual trials are recorded as flagged rows;
/// only invalid configurations abort the study.
pub fn run_study(config: &ExperimentConfig) -> Result<StudyOutput> {
    config.validate()?;
    let prepared = prepare(config)?;
    let ctx = TrialContext {
        config,
        prepared: &prepared,
        caps: config.caps()?,
    };
    let body = || -> Result<StudyOutput> {
        let mut summaries = Vec::with_capacity(config.eta_grid.len());
        let mut trials = Vec::with_capacity(config.eta_grid.len() * config.trials_per_eta);
        for (g, &eta) in config.eta_grid.iter().enumerate() {
            let rows = (0..config.trials_per_eta)
                .into_par_iter()
                .map(|t| ctx.run(g, eta, t))
                .collect::<Result<Vec<_>>>()?;
            summaries.push(summarize(eta, &rows)?);
            trials.extend(rows);
        }
        Ok(StudyOutput { summaries, trials })
    };
    match config.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {n} workers: {e}")))?
            .install(body),
        None => body(),
    }
}
