//! Sparse recovery methods: centralized basis pursuit, per-cache
//! (non-collaborative) recovery and its two fusion baselines, and
//! collaborative recovery by anchor alignment (CoSR-AA).

mod admm;
mod baselines;

pub use admm::{
    cosr_aa_step, residuals, solve_cosr_aa, solve_cosr_aa_with, write_trace_csv, AdmmState,
    CacheProblem, CacheState, ConvergenceReport, CosrSolution, Exchange, Link, Problem, Residuals,
    SolveOptions, TraceRow, ZUpdateFactor,
};
pub use baselines::{
    baseline_average, baseline_partition, basis_pursuit, solve_centralized, solve_noncollaborative,
    unvec, Recovery,
};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Initial penalty `ρ⁰`.
    pub rho0: f64,
    /// Penalty scale `τ`.
    pub tau: f64,
    /// Residual ratio `η` that triggers a penalty change.
    pub eta_ratio: f64,
    /// Threshold on the squared primal residual norm.
    pub eps_pri: f64,
    /// Threshold on the squared dual residual norm.
    pub eps_dual: f64,
    pub max_iterations: usize,
    /// Adapt `ρ` every iteration; off keeps `ρ = ρ⁰`.
    pub adapt_penalty: bool,
    /// Adaptation stops after this many changes of `ρ`. Switching `ρ`
    /// indefinitely can make the iterates spiral outward.
    pub max_penalty_changes: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rho0: 10.0,
            tau: 2.0,
            eta_ratio: 10.0,
            eps_pri: 0.004,
            eps_dual: 1.5,
            max_iterations: 3000,
            adapt_penalty: true,
            max_penalty_changes: 20,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho0 > 0.0) {
            return Err(invalid(format!("rho0 must be positive, got {}", self.rho0)));
        }
        if !(self.tau > 1.0) {
            return Err(invalid(format!("tau must exceed 1, got {}", self.tau)));
        }
        if !(self.eta_ratio > 1.0) {
            return Err(invalid(format!(
                "eta_ratio must exceed 1, got {}",
                self.eta_ratio
            )));
        }
        if !(self.eps_pri > 0.0 && self.eps_dual > 0.0) {
            return Err(invalid("convergence thresholds must be positive"));
        }
        Ok(())
    }
}

/// `S_κ(a)`: shrink `a` toward zero by `κ`.
pub fn soft_threshold(a: f64, kappa: f64) -> f64 {
    if a > kappa {
        a - kappa
    } else if a < -kappa {
        a + kappa
    } else {
        0.0
    }
}

/// Residual-balancing penalty update on residual norms (not squares).
pub fn adapt_penalty(rho: f64, primal: f64, dual: f64, tau: f64, eta_ratio: f64) -> f64 {
    if primal > eta_ratio * dual {
        tau * rho
    } else if dual > eta_ratio * primal {
        rho / tau
    } else {
        rho
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_threshold_branches() {
        assert_eq!(soft_threshold(2.0, 1.0), 1.0);
        assert_eq!(soft_threshold(-2.0, 1.0), -1.0);
        assert_eq!(soft_threshold(0.5, 1.0), 0.0);
        assert_eq!(soft_threshold(-1.0, 1.0), 0.0);
        assert_eq!(soft_threshold(3.0, 0.0), 3.0);
    }

    #[test]
    fn penalty_branches() {
        assert_eq!(adapt_penalty(10.0, 100.0, 1.0, 2.0, 10.0), 20.0);
        assert_eq!(adapt_penalty(10.0, 1.0, 100.0, 2.0, 10.0), 5.0);
        assert_eq!(adapt_penalty(10.0, 3.0, 3.0, 2.0, 10.0), 10.0);
        // Ratio exactly η does not trigger.
        assert_eq!(adapt_penalty(10.0, 10.0, 1.0, 2.0, 10.0), 10.0);
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = SolverConfig::default();
        assert_eq!(
            (
                c.rho0,
                c.tau,
                c.eta_ratio,
                c.eps_pri,
                c.eps_dual,
                c.max_iterations
            ),
            (10.0, 2.0, 10.0, 0.004, 1.5, 3000)
        );
        assert!(c.validate().is_ok());
        assert!(SolverConfig {
            tau: 1.0,
            ..c.clone()
        }
        .validate()
        .is_err());
        assert!(SolverConfig {
            rho0: 0.0,
            ..c.clone()
        }
        .validate()
        .is_err());
        assert!(SolverConfig {
            eta_ratio: 0.5,
            ..c.clone()
        }
        .validate()
        .is_err());
        assert!(SolverConfig { eps_dual: 0.0, ..c }.validate().is_err());
    }
}
