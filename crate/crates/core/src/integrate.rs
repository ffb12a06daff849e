//! Per-encoder gradient integration: plain sum, conventional Pareto, and
//! MMPareto (Pareto direction under conflict, uniform-sum magnitude, gamma boost).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::numerics::{cosine, l2_norm, RealVec};
use crate::pareto::solve_closed_form;

pub const DEFAULT_GAMMA: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseTag {
    Stationary,
    NonConflict,
    Conflict,
}

impl CaseTag {
    pub fn as_str(self) -> &'static str {
        match self {
            CaseTag::Stationary => "stationary",
            CaseTag::NonConflict => "non_conflict",
            CaseTag::Conflict => "conflict",
        }
    }
}

impl fmt::Display for CaseTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntegrationOutcome {
    pub final_grad: RealVec,
    pub case_tag: CaseTag,
    pub cos_beta: f64,
    /// Weights before the factor of two (0.5 / 0.5 means plain sum).
    pub alpha_m: f64,
    pub alpha_u: f64,
    pub lambda: f64,
    pub gamma_applied: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "uniform")]
    UniformSum,
    #[serde(rename = "pareto")]
    ConventionalPareto,
    #[serde(rename = "mmpareto")]
    MMPareto,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [
        Strategy::UniformSum,
        Strategy::ConventionalPareto,
        Strategy::MMPareto,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::UniformSum => "uniform",
            Strategy::ConventionalPareto => "pareto",
            Strategy::MMPareto => "mmpareto",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "uniform" => Ok(Strategy::UniformSum),
            "pareto" => Ok(Strategy::ConventionalPareto),
            "mmpareto" => Ok(Strategy::MMPareto),
            other => Err(Error::Config(format!(
                "unknown strategy {other:?} (expected uniform, pareto or mmpareto)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

fn default_strategy() -> Strategy {
    Strategy::MMPareto
}

fn default_gamma() -> f64 {
    DEFAULT_GAMMA
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::MMPareto,
            gamma: DEFAULT_GAMMA,
        }
    }
}

impl StrategyConfig {
    pub fn new(strategy: Strategy, gamma: f64) -> Self {
        Self { strategy, gamma }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::Config(format!("gamma must be positive, got {}", self.gamma)));
        }
        if self.strategy == Strategy::MMPareto && self.gamma < 1.0 {
            return Err(Error::Config(format!(
                "mmpareto requires gamma >= 1, got {}",
                self.gamma
            )));
        }
        Ok(())
    }

    pub fn integrate(&self, g_m: &RealVec, g_u: &RealVec) -> Result<IntegrationOutcome> {
        match self.strategy {
            Strategy::UniformSum => integrate_uniform(g_m, g_u),
            Strategy::ConventionalPareto => integrate_conventional_pareto(g_m, g_u),
            Strategy::MMPareto => integrate_mmpareto(g_m, g_u, self.gamma),
        }
    }
}

fn conflict_tag(cos_beta: f64) -> CaseTag {
    if cos_beta >= 0.0 {
        CaseTag::NonConflict
    } else {
        CaseTag::Conflict
    }
}

pub fn integrate_uniform(g_m: &RealVec, g_u: &RealVec) -> Result<IntegrationOutcome> {
    check_len(g_m.len(), g_u.len())?;
    let cos_beta = cosine(g_m, g_u)?;
    Ok(IntegrationOutcome {
        final_grad: g_m.add(g_u)?,
        case_tag: conflict_tag(cos_beta),
        cos_beta,
        alpha_m: 0.5,
        alpha_u: 0.5,
        lambda: 1.0,
        gamma_applied: 1.0,
    })
}

/// `2 alpha_m g_m + 2 alpha_u g_u` with the min-norm weights, no rescaling.
pub fn integrate_conventional_pareto(g_m: &RealVec, g_u: &RealVec) -> Result<IntegrationOutcome> {
    check_len(g_m.len(), g_u.len())?;
    let cos_beta = cosine(g_m, g_u)?;
    let sol = solve_closed_form(g_m, g_u)?;
    let (final_grad, case_tag) = if sol.is_stationary {
        (RealVec::zeros(g_m.len()), CaseTag::Stationary)
    } else {
        (sol.min_norm_vec.scale(2.0), conflict_tag(cos_beta))
    };
    Ok(IntegrationOutcome {
        final_grad,
        case_tag,
        cos_beta,
        alpha_m: sol.alpha_m,
        alpha_u: sol.alpha_u,
        lambda: 1.0,
        gamma_applied: 1.0,
    })
}

pub fn integrate_mmpareto(g_m: &RealVec, g_u: &RealVec, gamma: f64) -> Result<IntegrationOutcome> {
    check_len(g_m.len(), g_u.len())?;
    if !(gamma >= 1.0) || !gamma.is_finite() {
        return Err(Error::Domain(format!("mmpareto requires gamma >= 1, got {gamma}")));
    }
    let cos_beta = cosine(g_m, g_u)?;
    let sol = solve_closed_form(g_m, g_u)?;
    if sol.is_stationary {
        return Ok(IntegrationOutcome {
            final_grad: RealVec::zeros(g_m.len()),
            case_tag: CaseTag::Stationary,
            cos_beta,
            alpha_m: sol.alpha_m,
            alpha_u: sol.alpha_u,
            lambda: 0.0,
            gamma_applied: gamma,
        });
    }

    let sum = g_m.add(g_u)?;
    let sum_norm = l2_norm(&sum)?;

    if cos_beta >= 0.0 {
        if sum_norm == 0.0 {
            return Err(Error::DegenerateSum);
        }
        return Ok(IntegrationOutcome {
            final_grad: sum.scale(gamma),
            case_tag: CaseTag::NonConflict,
            cos_beta,
            alpha_m: 0.5,
            alpha_u: 0.5,
            lambda: 1.0,
            gamma_applied: gamma,
        });
    }

    let direction = sol.min_norm_vec.scale(2.0);
    let direction_norm = l2_norm(&direction)?;
    if direction_norm == 0.0 || sum_norm == 0.0 {
        return Err(Error::DegenerateSum);
    }
    let lambda = sum_norm / direction_norm;
    Ok(IntegrationOutcome {
        final_grad: direction.scale(gamma * sum_norm / direction_norm),
        case_tag: CaseTag::Conflict,
        cos_beta,
        alpha_m: sol.alpha_m,
        alpha_u: sol.alpha_u,
        lambda,
        gamma_applied: gamma,
    })
}
