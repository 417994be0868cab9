//! Discrete cost `J = ½⟨θ^N, η⟩ + (γ/2) Δt Σ |v|²` and its adjoint gradient.
//!
//! With `η = L⁻¹θ^N` and the adjoint recursion `(I - S_n) ρ^n = (I + S_n) ρ^{n+1}`,
//! `ρ^N = η`, the exact derivative of `J` with respect to `v_i^{(n)}` is
//!
//! ```text
//! Δt (γ v_i^{(n)} + ⟨(θ^n + θ^{n+1})/2, D_{b_i} (ρ^n + ρ^{n+1})/2⟩)
//! ```
//!
//! The averaged adjoint appears because `(I - S_n)⁻¹ ρ^{n+1} = (ρ^n + ρ^{n+1})/2`.
//! Sampling the adjoint at the node `ρ^n` instead is available as
//! [`AdjointSampling::Nodal`]; it differs from the true gradient by `O(Δt)`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::elliptic::NeumannLaplacian;
use crate::error::{Error, Result};
use crate::flows::FluxTable;
use crate::krylov::{KrylovConfig, Weights};
use crate::schedule::{CoefficientArray, ControlSchedule, GradientArray};
use crate::state::{same_mesh, StateVector};
use crate::transport::{cn_step_values, Direction, StoragePolicy, Trajectory, TransportBasis};

/// Where the adjoint is sampled on each interval.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjointSampling {
    /// `(ρ^n + ρ^{n+1})/2`: the exact gradient of the discrete cost.
    #[default]
    Midpoint,
    /// `ρ^n`: first-order accurate in `Δt`.
    Nodal,
}

/// Largest invariant drifts seen along one state/adjoint pair of solves.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DriftDiagnostics {
    pub mass: f64,
    pub energy_rel: f64,
    pub pairing_rel: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValue {
    pub total: f64,
    pub mix_norm: f64,
    pub penalty: f64,
}

#[derive(Debug, Clone)]
pub struct GradientEvaluation {
    pub objective: ObjectiveValue,
    pub gradient: GradientArray,
    pub drift: DriftDiagnostics,
}

/// Everything that stays fixed while the schedule varies.
#[derive(Debug, Clone)]
pub struct ControlProblem {
    basis: Arc<TransportBasis>,
    laplacian: Arc<NeumannLaplacian>,
    theta0: StateVector,
    gamma: f64,
    transport: KrylovConfig,
    poisson: KrylovConfig,
    storage: StoragePolicy,
    sampling: AdjointSampling,
}

impl ControlProblem {
    /// Uses `tol` for both the transport and the Poisson solves.
    pub fn new(basis: Arc<TransportBasis>, theta0: StateVector, gamma: f64, tol: f64) -> Result<Self> {
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidArgument(format!("penalty weight must be non-negative, got {gamma}")));
        }
        if !(tol > 0.0) {
            return Err(Error::InvalidArgument(format!("solver tolerance must be positive, got {tol}")));
        }
        if !same_mesh(basis.mesh(), theta0.mesh()) {
            return Err(Error::MeshMismatch);
        }
        let laplacian = Arc::new(NeumannLaplacian::new(basis.mesh().clone()));
        let poisson = laplacian.default_config(tol);
        let transport = KrylovConfig { tol, ..KrylovConfig::default() };
        Ok(Self { basis, laplacian, theta0, gamma, transport, poisson, storage: StoragePolicy::full(), sampling: AdjointSampling::Midpoint })
    }

    pub fn with_storage(mut self, storage: StoragePolicy) -> Self {
        self.storage = storage;
        self
    }

    pub fn with_sampling(mut self, sampling: AdjointSampling) -> Self {
        self.sampling = sampling;
        self
    }

    pub fn with_transport_config(mut self, cfg: KrylovConfig) -> Self {
        self.transport = cfg;
        self
    }

    pub fn basis(&self) -> &Arc<TransportBasis> {
        &self.basis
    }

    pub fn laplacian(&self) -> &Arc<NeumannLaplacian> {
        &self.laplacian
    }

    pub fn theta0(&self) -> &StateVector {
        &self.theta0
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn transport_config(&self) -> &KrylovConfig {
        &self.transport
    }

    pub fn poisson_config(&self) -> &KrylovConfig {
        &self.poisson
    }

    fn check(&self, schedule: &ControlSchedule) -> Result<()> {
        if schedule.num_modes() != self.basis.num_modes() {
            return Err(Error::SizeMismatch { what: "schedule modes", expected: self.basis.num_modes(), found: schedule.num_modes() });
        }
        if !schedule.coeffs.is_finite() {
            return Err(Error::InvalidArgument("schedule has non-finite coefficients".into()));
        }
        Ok(())
    }

    fn penalty(&self, schedule: &ControlSchedule) -> f64 {
        0.5 * self.gamma * schedule.dt * schedule.coeffs.dot(&schedule.coeffs)
    }

    fn terminal(&self, theta_n: &[f64], schedule: &ControlSchedule) -> Result<(ObjectiveValue, Vec<f64>)> {
        let (mix, eta) = self.laplacian.mix_norm_values(theta_n, &self.poisson)?;
        let penalty = self.penalty(schedule);
        Ok((ObjectiveValue { total: 0.5 * mix * mix + penalty, mix_norm: mix, penalty }, eta))
    }

    /// Objective value from a forward sweep that keeps only the current state.
    pub fn objective(&self, schedule: &ControlSchedule) -> Result<ObjectiveValue> {
        self.check(schedule)?;
        let mut cur = self.theta0.values().to_vec();
        for n in 0..schedule.num_steps() {
            cur = cn_step_values(&self.basis, &cur, schedule.coeffs.step(n), schedule.dt, Direction::Forward, &self.transport)?;
        }
        Ok(self.terminal(&cur, schedule)?.0)
    }

    /// Objective and adjoint gradient: forward solve, Poisson solve, adjoint solve.
    pub fn gradient(&self, schedule: &ControlSchedule) -> Result<GradientEvaluation> {
        self.check(schedule)?;
        let basis = &*self.basis;
        let w = Weights(basis.volumes());
        let traj = Trajectory::compute(basis, &self.theta0, schedule, &self.transport, self.storage)?;
        let (objective, eta) = self.terminal(traj.final_state(), schedule)?;

        let m = basis.num_modes();
        let n_cells = basis.num_cells();
        let dt = schedule.dt;
        let mut grad = CoefficientArray::zeros(m, schedule.num_steps());
        let mut rho = eta;
        let mass0 = w.dot(traj.initial_state(), &vec![1.0; n_cells]);
        let energy0 = w.dot(traj.initial_state(), traj.initial_state());
        let pair_end = w.dot(traj.final_state(), &rho);
        let pair_scale = energy0.sqrt() * w.norm(&rho);
        let mut drift = DriftDiagnostics::default();
        let mut theta_bar = vec![0.0; n_cells];
        let mut rho_bar = vec![0.0; n_cells];
        let mut d_rho = vec![0.0; n_cells];

        traj.visit_reverse(basis, schedule, &self.transport, |n, th0, th1| {
            let coeffs = schedule.coeffs.step(n);
            let rho_prev = cn_step_values(basis, &rho, coeffs, dt, Direction::Backward, &self.transport)?;
            for k in 0..n_cells {
                theta_bar[k] = 0.5 * (th0[k] + th1[k]);
                rho_bar[k] = match self.sampling {
                    AdjointSampling::Midpoint => 0.5 * (rho_prev[k] + rho[k]),
                    AdjointSampling::Nodal => rho_prev[k],
                };
            }
            for (i, g) in grad.step_mut(n).iter_mut().enumerate() {
                basis.apply_mode(i, &rho_bar, &mut d_rho);
                *g = dt * self.gamma * coeffs[i] + dt * w.dot(&theta_bar, &d_rho);
            }
            let mass = w.dot(th0, &vec![1.0; n_cells]);
            drift.mass = drift.mass.max((mass - mass0).abs());
            if energy0 > 0.0 {
                drift.energy_rel = drift.energy_rel.max((w.dot(th0, th0) - energy0).abs() / energy0);
            }
            if pair_scale > 0.0 {
                drift.pairing_rel = drift.pairing_rel.max((w.dot(th0, &rho_prev) - pair_end).abs() / pair_scale);
            }
            rho = rho_prev;
            Ok(())
        })?;
        Ok(GradientEvaluation { objective, gradient: grad, drift })
    }

    /// Central differences of [`ControlProblem::objective`], one entry at a
    /// time: `2·m·N_t` forward solves. Entries are probed on scoped threads.
    pub fn finite_difference_gradient(&self, schedule: &ControlSchedule, eps: f64) -> Result<GradientArray> {
        if !(eps > 0.0) {
            return Err(Error::InvalidArgument(format!("probe size must be positive, got {eps}")));
        }
        self.check(schedule)?;
        let len = schedule.coeffs.as_slice().len();
        let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(len.max(1));
        let chunk = len.div_ceil(threads.max(1)).max(1);
        let probe = |j: usize| -> Result<f64> {
            let mut plus = schedule.clone();
            let mut minus = schedule.clone();
            plus.coeffs.as_mut_slice()[j] += eps;
            minus.coeffs.as_mut_slice()[j] -= eps;
            Ok((self.objective(&plus)?.total - self.objective(&minus)?.total) / (2.0 * eps))
        };
        let mut out = vec![0.0; len];
        std::thread::scope(|s| -> Result<()> {
            let handles: Vec<_> = out
                .chunks_mut(chunk)
                .enumerate()
                .map(|(c, slot)| {
                    let probe = &probe;
                    s.spawn(move || -> Result<()> {
                        for (o, v) in slot.iter_mut().enumerate() {
                            *v = probe(c * chunk + o)?;
                        }
                        Ok(())
                    })
                })
                .collect();
            for h in handles {
                h.join().expect("probe thread panicked")?;
            }
            Ok(())
        })?;
        CoefficientArray::from_step_major(schedule.num_modes(), schedule.num_steps(), out)
    }
}

fn problem_from_tables(theta0: &StateVector, tables: &[FluxTable], gamma: f64, tol: f64) -> Result<ControlProblem> {
    let basis = Arc::new(TransportBasis::new(theta0.mesh().clone(), tables)?);
    ControlProblem::new(basis, theta0.clone(), gamma, tol)
}

pub fn evaluate_objective(theta0: &StateVector, schedule: &ControlSchedule, tables: &[FluxTable], gamma: f64, tol: f64) -> Result<f64> {
    Ok(problem_from_tables(theta0, tables, gamma, tol)?.objective(schedule)?.total)
}

pub fn evaluate_gradient(theta0: &StateVector, schedule: &ControlSchedule, tables: &[FluxTable], gamma: f64, tol: f64) -> Result<GradientArray> {
    Ok(problem_from_tables(theta0, tables, gamma, tol)?.gradient(schedule)?.gradient)
}

pub fn finite_difference_gradient(theta0: &StateVector, schedule: &ControlSchedule, tables: &[FluxTable], gamma: f64, tol: f64, eps: f64) -> Result<GradientArray> {
    problem_from_tables(theta0, tables, gamma, tol)?.finite_difference_gradient(schedule, eps)
}

/// `max |a - b| / max |b|`.
pub fn max_relative_error(a: &GradientArray, b: &GradientArray) -> f64 {
    let diff = a.as_slice().iter().zip(b.as_slice()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let scale = b.max_abs();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::{assemble_flux_table, BasisFlow};
    use crate::mesh::{project_initial_data, Mesh};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(n: usize) -> (StateVector, Vec<FluxTable>) {
        let mesh = Arc::new(Mesh::cartesian(n, n).unwrap());
        let tables = vec![
            assemble_flux_table(&mesh, &BasisFlow::cellular(1).unwrap()).unwrap(),
            assemble_flux_table(&mesh, &BasisFlow::cellular(2).unwrap()).unwrap(),
        ];
        let theta0 = project_initial_data(&mesh, |_, y| (2.0 * std::f64::consts::PI * y).sin());
        (theta0, tables)
    }

    fn random_schedule(seed: u64, dt: f64, n: usize) -> ControlSchedule {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ControlSchedule::from_profile(dt, n, 2, |_, _| rng.random_range(-2.0..2.0)).unwrap()
    }

    #[test]
    fn zero_schedule_gives_half_squared_mix_norm() {
        let (theta0, tables) = setup(12);
        let schedule = ControlSchedule::zeros(0.1, 4, 2).unwrap();
        let j = evaluate_objective(&theta0, &schedule, &tables, 1e-6, 1e-12).unwrap();
        let mix = crate::elliptic::mix_norm(&theta0, 1e-12).unwrap();
        assert_eq!(j, 0.5 * mix * mix);
    }

    #[test]
    fn constant_state_gradient_is_pure_penalty() {
        let (theta0, tables) = setup(8);
        let theta0 = StateVector::constant(theta0.mesh().clone(), 2.0);
        let schedule = random_schedule(1, 0.1, 5);
        let g = evaluate_gradient(&theta0, &schedule, &tables, 0.3, 1e-12).unwrap();
        for n in 0..5 {
            for i in 0..2 {
                assert!((g.get(i, n) - 0.3 * 0.1 * schedule.coeffs.get(i, n)).abs() < 1e-15);
            }
        }
        let fd = finite_difference_gradient(&theta0, &ControlSchedule::zeros(0.1, 5, 2).unwrap(), &tables, 0.3, 1e-12, 1e-4).unwrap();
        assert!(fd.max_abs() < 1e-12);
    }

    #[test]
    fn penalty_decouples_from_advection() {
        let (theta0, tables) = setup(10);
        let schedule = random_schedule(2, 0.05, 6);
        let g1 = evaluate_gradient(&theta0, &schedule, &tables, 1e-2, 1e-12).unwrap();
        let g0 = evaluate_gradient(&theta0, &schedule, &tables, 0.0, 1e-12).unwrap();
        for n in 0..6 {
            for i in 0..2 {
                let expected = 1e-2 * 0.05 * schedule.coeffs.get(i, n);
                let scale = g1.get(i, n).abs().max(g0.get(i, n).abs());
                assert!((g1.get(i, n) - g0.get(i, n) - expected).abs() <= 4.0 * f64::EPSILON * scale);
            }
        }
    }

    #[test]
    fn adjoint_gradient_matches_central_differences() {
        let (theta0, tables) = setup(12);
        let schedule = random_schedule(3, 0.05, 6);
        let g = evaluate_gradient(&theta0, &schedule, &tables, 1e-6, 1e-12).unwrap();
        let fd = finite_difference_gradient(&theta0, &schedule, &tables, 1e-6, 1e-12, 1e-5).unwrap();
        let err = max_relative_error(&g, &fd);
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn directional_derivative_matches() {
        let (theta0, tables) = setup(10);
        let schedule = random_schedule(4, 0.05, 5);
        let dir = random_schedule(5, 0.05, 5).coeffs;
        let g = evaluate_gradient(&theta0, &schedule, &tables, 1e-6, 1e-12).unwrap();
        let eps = 1e-5;
        let jp = evaluate_objective(&theta0, &schedule.with_coeffs(schedule.coeffs.added(eps, &dir)), &tables, 1e-6, 1e-12).unwrap();
        let jm = evaluate_objective(&theta0, &schedule.with_coeffs(schedule.coeffs.added(-eps, &dir)), &tables, 1e-6, 1e-12).unwrap();
        let fd = (jp - jm) / (2.0 * eps);
        assert!((g.dot(&dir) - fd).abs() <= 1e-6 * fd.abs());
    }

    #[test]
    fn nodal_sampling_is_only_first_order_accurate() {
        let (theta0, tables) = setup(12);
        let mut errors = Vec::new();
        for steps in [4, 8] {
            let dt = 0.4 / steps as f64;
            let schedule = ControlSchedule::constant(dt, steps, &[1.5, -1.0]).unwrap();
            let basis = Arc::new(TransportBasis::new(theta0.mesh().clone(), &tables).unwrap());
            let problem = ControlProblem::new(basis, theta0.clone(), 0.0, 1e-12).unwrap();
            let exact = problem.gradient(&schedule).unwrap().gradient;
            let nodal = problem.clone().with_sampling(AdjointSampling::Nodal).gradient(&schedule).unwrap().gradient;
            errors.push(max_relative_error(&nodal, &exact));
        }
        // visibly wrong at coarse steps, and shrinking roughly like Δt
        assert!(errors[0] > 1e-3, "{errors:?}");
        assert!(errors[1] < 0.75 * errors[0], "{errors:?}");
    }

    #[test]
    fn checkpointed_gradient_is_bitwise_identical() {
        let (theta0, tables) = setup(10);
        let schedule = random_schedule(6, 0.02, 17);
        let basis = Arc::new(TransportBasis::new(theta0.mesh().clone(), &tables).unwrap());
        let full = ControlProblem::new(basis.clone(), theta0.clone(), 1e-6, 1e-12).unwrap();
        let lean = full.clone().with_storage(StoragePolicy::with_budget(9 * 100 * 8));
        let a = full.gradient(&schedule).unwrap();
        let b = lean.gradient(&schedule).unwrap();
        assert_eq!(a.gradient, b.gradient);
        assert_eq!(a.objective, b.objective);
    }

    #[test]
    fn drift_diagnostics_are_small() {
        let (theta0, tables) = setup(16);
        let schedule = random_schedule(7, 0.01, 20);
        let basis = Arc::new(TransportBasis::new(theta0.mesh().clone(), &tables).unwrap());
        let problem = ControlProblem::new(basis, theta0, 1e-6, 1e-12).unwrap();
        let d = problem.gradient(&schedule).unwrap().drift;
        assert!(d.mass < 1e-13 && d.energy_rel < 1e-10 && d.pairing_rel < 1e-10, "{d:?}");
    }

    #[test]
    fn invalid_inputs() {
        let (theta0, tables) = setup(4);
        let schedule = ControlSchedule::zeros(0.1, 2, 2).unwrap();
        assert!(evaluate_objective(&theta0, &schedule, &tables, -1.0, 1e-12).is_err());
        assert!(finite_difference_gradient(&theta0, &schedule, &tables, 0.0, 1e-12, 0.0).is_err());
        let wrong = ControlSchedule::zeros(0.1, 2, 3).unwrap();
        assert!(matches!(evaluate_objective(&theta0, &wrong, &tables, 0.0, 1e-12), Err(Error::SizeMismatch { .. })));
    }
}
