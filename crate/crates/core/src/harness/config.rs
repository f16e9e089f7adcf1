//! Study configuration, read from TOML.
//!
//! Every table rejects unknown keys. A minimal filter study:
//!
//! ```toml
//! schema_version = 1
//! seed = 7
//! eta_grid = [1e-1, 1e-2, 1e-3]
//! trials_per_eta = 200
//!
//! [caps]
//! norm_cap = 100.0
//! sup_cap = 100.0
//!
//! [study]
//! kind = "filter"
//! filter = "tikhonov"
//! delta = { mode = "kyfan-bound" }
//! rule = { rule = "apriori", beta = 0.5, nu = 1.0, rho = 1.0, c = 1.0 }
//! operator = { kind = "diagonal-power", n = 200, exponent = 1.0 }
//! truth = { kind = "source", nu = 1.0, decay = 0.75, norm = 1.0 }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{DeltaMode, TauSchedule, TruncationCaps};
use crate::param_choice::{BesovBalanceParams, ParamRule};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    /// Strictly decreasing noise levels.
    pub eta_grid: Vec<f64>,
    pub trials_per_eta: usize,
    /// Worker threads; `None` uses the global pool. Results do not depend on it.
    #[serde(default)]
    pub workers: Option<usize>,
    pub caps: CapsConfig,
    pub study: StudyConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapsConfig {
    pub norm_cap: f64,
    pub sup_cap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StudyConfig {
    /// Spectral filter on a linear operator.
    Filter {
        filter: FilterChoice,
        delta: DeltaConfig,
        rule: RuleConfig,
        operator: OperatorConfig,
        truth: TruthConfig,
        /// Step size for the Landweber filter (defaults to `0.9 / sigma_1^2`).
        #[serde(default)]
        gamma: Option<f64>,
        /// Largest Landweber iteration count searched by the stopping rule.
        #[serde(default = "default_max_iter")]
        max_iter: usize,
    },
    /// l1-penalized Haar coefficients of the autoconvolution.
    Autoconv {
        m: usize,
        delta: DeltaConfig,
        rule: RuleConfig,
        /// Initial constant function value.
        #[serde(default = "default_x0")]
        x0: f64,
        /// Relative iterate-change tolerance of the inner solver.
        #[serde(default = "default_inner_tol")]
        inner_tol: f64,
        #[serde(default = "default_inner_iter")]
        inner_max_iter: usize,
        /// Budget of regularized solves per discrepancy search.
        #[serde(default = "default_alpha_evals")]
        alpha_evaluations: usize,
        /// Peak height of the two-bump truth.
        #[serde(default = "default_amplitude")]
        amplitude: f64,
    },
    /// Weighted lp penalty on a wavelet-diagonal operator `sigma_l = 2^{-beta |l|}`.
    Besov {
        levels: usize,
        beta: f64,
        s: f64,
        p: f64,
        #[serde(default = "default_dim")]
        d: usize,
        /// Bound on the Besov norm of the truth.
        varrho: f64,
        delta: DeltaConfig,
        rule: RuleConfig,
    },
    /// Random smoothness `nu ~ U[0, nu_max]` on a diagonal operator.
    NuRandom {
        operator: OperatorConfig,
        delta: DeltaConfig,
        rule: RuleConfig,
        #[serde(default = "default_nu_max")]
        nu_max: f64,
        /// Decay and norm of the source element `v`.
        decay: f64,
        norm: f64,
        #[serde(default = "default_max_iter")]
        max_iter: usize,
    },
}

fn default_max_iter() -> usize {
    1_000_000
}
fn default_x0() -> f64 {
    0.5
}
fn default_inner_tol() -> f64 {
    1e-5
}
fn default_inner_iter() -> usize {
    2_000
}
fn default_alpha_evals() -> usize {
    20
}
fn default_amplitude() -> f64 {
    1.0
}
fn default_dim() -> usize {
    1
}
fn default_nu_max() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterChoice {
    Tikhonov,
    Tsvd,
    Landweber,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DeltaConfig {
    KyfanBound,
    InflatedConstant { tau: f64 },
    InflatedLog,
}

impl DeltaConfig {
    pub fn mode(&self) -> DeltaMode<f64> {
        match *self {
            DeltaConfig::KyfanBound => DeltaMode::KyFanBound,
            DeltaConfig::InflatedConstant { tau } => DeltaMode::InflatedExpectation(TauSchedule::Constant(tau)),
            DeltaConfig::InflatedLog => DeltaMode::InflatedExpectation(TauSchedule::LogInflating),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RuleConfig {
    Apriori { beta: f64, nu: f64, rho: f64, c: f64 },
    Discrepancy { tau1: f64, tau2: f64 },
    DiscrepancyStop { tau_hat: f64 },
    /// Balancing rule; `alpha = alpha~ eta^2`.
    BesovBalance { c: f64 },
    /// `alpha = scale * delta^2 / varrho^p`.
    NoiseSquared { scale: f64 },
    Fixed { alpha: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OperatorConfig {
    /// `sigma_n = n^{-exponent}`, `n = 1..=n`.
    DiagonalPower { n: usize, exponent: f64 },
    Diagonal { sigma: Vec<f64> },
    /// Dense matrix in a headerless CSV file.
    Csv { path: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TruthConfig {
    /// `x = (A^* A)^{nu/2} w`, `w_n` proportional to `n^{-decay}` with `||w|| = norm`.
    Source { nu: f64, decay: f64, norm: f64 },
    Explicit { values: Vec<f64> },
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            context: format!("reading {}", path.display()),
            source,
        })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.eta_grid.is_empty() {
            return bad("eta_grid is empty".into());
        }
        if self.eta_grid.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return bad("eta_grid entries must be positive".into());
        }
        if self.eta_grid.windows(2).any(|w| w[1] >= w[0]) {
            return bad("eta_grid must be strictly decreasing".into());
        }
        if self.trials_per_eta < 30 {
            return bad(format!("trials_per_eta = {} is below 30", self.trials_per_eta));
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1".into());
        }
        self.caps()?;
        let (delta, rule) = match &self.study {
            StudyConfig::Filter { delta, rule, filter, .. } => {
                let ok = matches!(
                    (filter, rule),
                    (_, RuleConfig::Apriori { .. } | RuleConfig::Fixed { .. })
                        | (FilterChoice::Tikhonov, RuleConfig::Discrepancy { .. })
                        | (FilterChoice::Landweber, RuleConfig::DiscrepancyStop { .. })
                );
                if !ok {
                    return bad(format!("rule {rule:?} is not available for the {filter:?} filter"));
                }
                (delta, rule)
            }
            StudyConfig::Autoconv { delta, rule, m, .. } => {
                if *m < 2 || !m.is_power_of_two() {
                    return bad(format!("autoconvolution grid m = {m} must be a power of two >= 2"));
                }
                if !matches!(rule, RuleConfig::Discrepancy { .. } | RuleConfig::Fixed { .. }) {
                    return bad(format!("rule {rule:?} is not available for the autoconvolution study"));
                }
                (delta, rule)
            }
            StudyConfig::Besov { delta, rule, .. } => {
                if !matches!(
                    rule,
                    RuleConfig::BesovBalance { .. } | RuleConfig::NoiseSquared { .. } | RuleConfig::Fixed { .. }
                ) {
                    return bad(format!("rule {rule:?} is not available for the Besov study"));
                }
                (delta, rule)
            }
            StudyConfig::NuRandom { delta, rule, nu_max, .. } => {
                if !(*nu_max > 0.0 && *nu_max <= 0.5) {
                    return bad(format!("nu_max = {nu_max} must lie in (0, 1/2]"));
                }
                if !matches!(rule, RuleConfig::DiscrepancyStop { .. }) {
                    return bad(format!("rule {rule:?} is not available for the random-smoothness study"));
                }
                (delta, rule)
            }
        };
        if let DeltaConfig::InflatedConstant { tau } = delta {
            if !(*tau > 1.0) {
                return bad(format!("constant inflation tau = {tau} must exceed 1"));
            }
        }
        self.param_rule_template(rule)
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn caps(&self) -> Result<TruncationCaps<f64>> {
        TruncationCaps::new(self.caps.norm_cap, self.caps.sup_cap).map_err(|e| Error::Config(e.to_string()))
    }

    /// The rule with placeholders for quantities that depend on the noise draw.
    fn param_rule_template(&self, rule: &RuleConfig) -> ParamRule<f64> {
        rule_to_param(rule, &self.study, 1.0)
    }
}

/// Converts a configured rule; `eta` only enters the Besov balancing parameters.
pub(crate) fn rule_to_param(rule: &RuleConfig, study: &StudyConfig, eta: f64) -> ParamRule<f64> {
    match *rule {
        RuleConfig::Apriori { beta, nu, rho, c } => ParamRule::AprioriFilter { beta, nu, rho, c },
        RuleConfig::Discrepancy { tau1, tau2 } => ParamRule::Discrepancy { tau1, tau2 },
        RuleConfig::DiscrepancyStop { tau_hat } => ParamRule::DiscrepancyStop { tau_hat },
        RuleConfig::Fixed { alpha } => ParamRule::Fixed { alpha },
        RuleConfig::NoiseSquared { scale } => {
            let (varrho, p) = match *study {
                StudyConfig::Besov { varrho, p, .. } => (varrho, p),
                _ => (1.0, 1.0),
            };
            ParamRule::NoiseSquared { scale, varrho, p }
        }
        RuleConfig::BesovBalance { c } => {
            let params = match *study {
                StudyConfig::Besov { levels, beta, s, p, d, varrho, .. } => BesovBalanceParams {
                    eta,
                    m: 1 << levels,
                    n: 1 << levels,
                    p,
                    rho: varrho,
                    zeta: crate::operators::besov_zeta(s, p, d),
                    beta,
                    c,
                },
                _ => BesovBalanceParams { eta, m: 1, n: 1, p: 1.0, rho: 1.0, zeta: 1.0, beta: 1.0, c },
            };
            ParamRule::BesovBalance(params)
        }
    }
}
