//! Nonlinear conjugate-gradient descent on the schedule coefficients with
//! Armijo backtracking.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{ControlProblem, DriftDiagnostics};
use crate::schedule::ControlSchedule;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaRule {
    /// `β = ‖g⁺‖ / ‖g‖`.
    #[default]
    NormRatio,
    /// `β = ‖g⁺‖² / ‖g‖²`.
    FletcherReeves,
}

impl BetaRule {
    fn beta(self, g_new: f64, g_old: f64) -> f64 {
        if g_old == 0.0 {
            return 0.0;
        }
        let r = g_new / g_old;
        match self {
            BetaRule::NormRatio => r,
            BetaRule::FletcherReeves => r * r,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Armijo sufficient-decrease constant.
    pub c: f64,
    /// Backtracking factor.
    pub shrink: f64,
    /// First trial step; `None` means `1/‖g⁰‖`.
    pub alpha0: Option<f64>,
    /// Factor applied to the previously accepted step before the next search.
    /// `1.0` is a plain warm start.
    pub alpha_growth: f64,
    pub eps_stop: f64,
    pub max_outer: usize,
    pub max_backtracks: usize,
    pub beta_rule: BetaRule,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            c: 1e-4,
            shrink: 0.5,
            alpha0: None,
            alpha_growth: 1.0,
            eps_stop: 1e-4,
            max_outer: 50,
            max_backtracks: 30,
            beta_rule: BetaRule::NormRatio,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("optimizer: {what}")));
        if !(self.c > 0.0 && self.c < 1.0) {
            return bad("c must lie in (0, 1)");
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return bad("shrink must lie in (0, 1)");
        }
        if !(self.eps_stop > 0.0) {
            return bad("eps_stop must be positive");
        }
        if let Some(a) = self.alpha0 {
            if !(a > 0.0 && a.is_finite()) {
                return bad("alpha0 must be positive");
            }
        }
        if !(self.alpha_growth >= 1.0 && self.alpha_growth.is_finite()) {
            return bad("alpha_growth must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Relative objective change fell below `eps_stop`.
    Converged,
    MaxIterations,
    /// No sufficient decrease even along steepest descent.
    Stalled,
    /// Gradient vanished exactly.
    Stationary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub mix_norm: f64,
    pub penalty: f64,
    pub grad_norm: f64,
    /// Step accepted to reach this iterate (0 for the initial guess).
    pub alpha: f64,
    pub backtracks: usize,
    /// Whether the search direction leading here was reset to `-g`.
    pub restarted: bool,
    /// Directional derivative `⟨g, d⟩` along the accepted direction.
    pub slope: f64,
    pub drift: DriftDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationReport {
    pub iterations: Vec<IterationRecord>,
    pub termination: Termination,
    pub final_schedule: ControlSchedule,
}

impl OptimizationReport {
    pub fn objectives(&self) -> Vec<f64> {
        self.iterations.iter().map(|r| r.objective).collect()
    }

    pub fn is_monotone(&self) -> bool {
        self.iterations.windows(2).all(|w| w[1].objective <= w[0].objective)
    }

    pub fn final_objective(&self) -> f64 {
        self.iterations.last().map_or(f64::NAN, |r| r.objective)
    }
}

/// Runs the descent; `observer` sees each accepted iterate as it is recorded.
pub fn optimize_with<F: FnMut(&IterationRecord)>(
    problem: &ControlProblem,
    schedule0: &ControlSchedule,
    config: &OptimizerConfig,
    mut observer: F,
) -> Result<(ControlSchedule, OptimizationReport)> {
    config.validate()?;
    if !schedule0.coeffs.is_finite() {
        return Err(Error::InvalidArgument("initial schedule has non-finite coefficients".into()));
    }
    let mut v = schedule0.clone();
    let mut eval = problem.gradient(&v)?;
    let mut g = eval.gradient.clone();
    let mut g_norm = g.norm();
    let mut records = vec![IterationRecord {
        iteration: 0,
        objective: eval.objective.total,
        mix_norm: eval.objective.mix_norm,
        penalty: eval.objective.penalty,
        grad_norm: g_norm,
        alpha: 0.0,
        backtracks: 0,
        restarted: false,
        slope: 0.0,
        drift: eval.drift,
    }];
    observer(&records[0]);

    let mut d = g.scaled(-1.0);
    let mut alpha_prev = match config.alpha0 {
        Some(a) => a,
        None if g_norm > 0.0 => 1.0 / g_norm,
        None => 1.0,
    };
    let mut termination = Termination::MaxIterations;

    for k in 1..=config.max_outer {
        if g_norm == 0.0 {
            termination = Termination::Stationary;
            break;
        }
        let j = eval.objective.total;
        let mut restarted = false;
        let mut slope = g.dot(&d);
        if !(slope < 0.0) {
            d = g.scaled(-1.0);
            slope = -g_norm * g_norm;
            restarted = true;
        }

        let mut accepted = None;
        loop {
            let mut alpha = alpha_prev * config.alpha_growth;
            for b in 0..=config.max_backtracks {
                let trial = v.with_coeffs(v.coeffs.added(alpha, &d));
                let jt = problem.objective(&trial)?.total;
                if jt <= j + config.c * alpha * slope {
                    accepted = Some((trial, alpha, b));
                    break;
                }
                alpha *= config.shrink;
            }
            if accepted.is_some() || restarted {
                break;
            }
            // retry once along steepest descent
            d = g.scaled(-1.0);
            slope = -g_norm * g_norm;
            restarted = true;
        }
        let Some((trial, alpha, backtracks)) = accepted else {
            termination = Termination::Stalled;
            break;
        };

        let new_eval = problem.gradient(&trial)?;
        let g_new = new_eval.gradient.clone();
        let g_new_norm = g_new.norm();
        let rel = (new_eval.objective.total - j).abs() / j;
        let record = IterationRecord {
            iteration: k,
            objective: new_eval.objective.total,
            mix_norm: new_eval.objective.mix_norm,
            penalty: new_eval.objective.penalty,
            grad_norm: g_new_norm,
            alpha,
            backtracks,
            restarted,
            slope,
            drift: new_eval.drift,
        };
        observer(&record);
        records.push(record);

        let beta = config.beta_rule.beta(g_new_norm, g_norm);
        d = g_new.scaled(-1.0).added(beta, &d);
        v = trial;
        g = g_new;
        g_norm = g_new_norm;
        eval = new_eval;
        alpha_prev = alpha;

        if !(rel >= config.eps_stop) {
            termination = Termination::Converged;
            break;
        }
    }

    let report = OptimizationReport { iterations: records, termination, final_schedule: v.clone() };
    Ok((v, report))
}

pub fn optimize(problem: &ControlProblem, schedule0: &ControlSchedule, config: &OptimizerConfig) -> Result<(ControlSchedule, OptimizationReport)> {
    optimize_with(problem, schedule0, config, |_| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::BasisFlow;
    use crate::mesh::{project_initial_data, Mesh};
    use crate::state::StateVector;
    use crate::transport::TransportBasis;
    use std::sync::Arc;

    fn problem(n: usize, gamma: f64) -> ControlProblem {
        let mesh = Arc::new(Mesh::cartesian(n, n).unwrap());
        let basis = Arc::new(TransportBasis::from_flows(mesh.clone(), &[BasisFlow::cellular(1).unwrap(), BasisFlow::cellular(2).unwrap()]).unwrap());
        let theta0 = project_initial_data(&mesh, |_, y| (2.0 * std::f64::consts::PI * y).sin());
        ControlProblem::new(basis, theta0, gamma, 1e-12).unwrap()
    }

    #[test]
    fn constant_state_drives_coefficients_to_zero() {
        let p = problem(6, 1.0);
        let p = ControlProblem::new(p.basis().clone(), StateVector::constant(p.theta0().mesh().clone(), 1.0), 1.0, 1e-12).unwrap();
        let s0 = ControlSchedule::constant(0.1, 4, &[1.0, -2.0]).unwrap();
        let cfg = OptimizerConfig { eps_stop: 1e-12, max_outer: 40, ..Default::default() };
        let (v, report) = optimize(&p, &s0, &cfg).unwrap();
        assert!(report.is_monotone());
        assert!(v.coeffs.max_abs() < 1e-6, "{}", v.coeffs.max_abs());
        assert!(report.final_objective() < 1e-12);
    }

    #[test]
    fn objective_decreases_monotonically_and_restarts_are_descent() {
        let p = problem(12, 1e-6);
        let s0 = ControlSchedule::constant(0.05, 10, &[1.0, 1.0]).unwrap();
        for rule in [BetaRule::NormRatio, BetaRule::FletcherReeves] {
            let cfg = OptimizerConfig { max_outer: 8, beta_rule: rule, ..Default::default() };
            let (_, report) = optimize(&p, &s0, &cfg).unwrap();
            assert!(report.is_monotone());
            assert!(report.iterations.len() > 2);
            assert!(report.final_objective() < report.iterations[0].objective);
            for r in &report.iterations[1..] {
                assert!(r.slope < 0.0);
            }
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let p = problem(8, 1e-6);
        let s0 = ControlSchedule::trig(0.1, 5, 2).unwrap();
        let cfg = OptimizerConfig { max_outer: 4, ..Default::default() };
        let a = optimize(&p, &s0, &cfg).unwrap().1;
        let b = optimize(&p, &s0, &cfg).unwrap().1;
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation() {
        assert!(OptimizerConfig { c: 1.5, ..Default::default() }.validate().is_err());
        assert!(OptimizerConfig { shrink: 0.0, ..Default::default() }.validate().is_err());
        assert!(OptimizerConfig { eps_stop: 0.0, ..Default::default() }.validate().is_err());
        assert!(OptimizerConfig::default().validate().is_ok());
    }

    #[test]
    fn zero_gradient_is_stationary() {
        let p = problem(6, 0.0);
        let p = ControlProblem::new(p.basis().clone(), StateVector::constant(p.theta0().mesh().clone(), 1.0), 0.0, 1e-12).unwrap();
        let s0 = ControlSchedule::constant(0.1, 3, &[1.0, 1.0]).unwrap();
        let (_, report) = optimize(&p, &s0, &OptimizerConfig::default()).unwrap();
        assert_eq!(report.termination, Termination::Stationary);
    }
}
