//! Central-flux advection operators and Crank–Nicolson time stepping.
//!
//! For coefficients `c` the discrete divergence is
//! `(D y)_K = (1/|K|) Σ_Γ φ_Γ (y_K + y_L) / 2` over interior faces, with
//! `φ_Γ = Σ_i c_i φ_{i,Γ}` the outward flux. Because every cell's fluxes sum
//! to zero, `D` is skew-adjoint in `⟨·,·⟩` and a Crank–Nicolson step is an
//! isometry. The adjoint recursion runs the same scheme with `Δt → -Δt`, which
//! is also the exact inverse of the forward step.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::flows::{assemble_flux_table, BasisFlow, FluxTable};
use crate::krylov::{gmres, skew_minres, KrylovConfig, KrylovMethod, LinearOperator, Weights};
use crate::mesh::Mesh;
use crate::schedule::ControlSchedule;
use crate::state::{same_mesh, StateVector};

/// Interior-face connectivity and per-mode fluxes of a set of basis flows.
///
/// Each mode is a sparse operator stored face-wise; a step operator is the
/// coefficient-weighted sum of the mode fluxes, applied matrix-free.
#[derive(Debug, Clone)]
pub struct TransportBasis {
    mesh: Arc<Mesh>,
    names: Vec<String>,
    left: Vec<usize>,
    right: Vec<usize>,
    volumes: Vec<f64>,
    inv_volumes: Vec<f64>,
    /// `fluxes[i][f]` for mode `i` and interior face `f`.
    fluxes: Vec<Vec<f64>>,
}

impl TransportBasis {
    pub fn new(mesh: Arc<Mesh>, tables: &[FluxTable]) -> Result<Self> {
        let faces = mesh.faces();
        let interior: Vec<usize> = faces.iter().filter(|f| f.is_interior()).map(|f| f.id).collect();
        let mut fluxes = Vec::with_capacity(tables.len());
        for t in tables {
            if t.fluxes.len() != faces.len() {
                return Err(Error::SizeMismatch { what: "flux table", expected: faces.len(), found: t.fluxes.len() });
            }
            fluxes.push(interior.iter().map(|&f| t.fluxes[f]).collect());
        }
        let volumes: Vec<f64> = mesh.volumes().collect();
        Ok(Self {
            names: tables.iter().map(|t| t.basis.clone()).collect(),
            left: interior.iter().map(|&f| faces[f].left).collect(),
            right: interior.iter().map(|&f| faces[f].right.expect("interior face")).collect(),
            inv_volumes: volumes.iter().map(|v| 1.0 / v).collect(),
            volumes,
            fluxes,
            mesh,
        })
    }

    /// Assembles flux tables for `flows` and builds the basis.
    pub fn from_flows(mesh: Arc<Mesh>, flows: &[BasisFlow]) -> Result<Self> {
        let tables = flows.iter().map(|b| assemble_flux_table(&mesh, b)).collect::<Result<Vec<_>>>()?;
        Self::new(mesh, &tables)
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn num_modes(&self) -> usize {
        self.fluxes.len()
    }

    pub fn num_cells(&self) -> usize {
        self.volumes.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    pub(crate) fn weights(&self) -> Weights<'_> {
        Weights(&self.volumes)
    }

    /// `D = Σ_i c_i D_{b_i}`.
    pub fn operator(&self, coeffs: &[f64]) -> Result<AdvectionOperator<'_>> {
        if coeffs.len() != self.num_modes() {
            return Err(Error::SizeMismatch { what: "coefficient vector", expected: self.num_modes(), found: coeffs.len() });
        }
        let mut flux = vec![0.0; self.left.len()];
        for (c, phi) in coeffs.iter().zip(&self.fluxes) {
            if *c != 0.0 {
                flux.iter_mut().zip(phi).for_each(|(f, p)| *f += c * p);
            }
        }
        Ok(AdvectionOperator { basis: self, flux, is_zero: coeffs.iter().all(|&c| c == 0.0) })
    }

    /// `out = D_{b_i} y` for a single mode.
    pub fn apply_mode(&self, i: usize, y: &[f64], out: &mut [f64]) {
        divergence(self, &self.fluxes[i], y, out);
    }

    fn check_state(&self, theta: &StateVector) -> Result<()> {
        if !same_mesh(&self.mesh, theta.mesh()) {
            return Err(Error::MeshMismatch);
        }
        Ok(())
    }
}

fn divergence(basis: &TransportBasis, flux: &[f64], y: &[f64], out: &mut [f64]) {
    assert_eq!(y.len(), basis.num_cells());
    assert_eq!(out.len(), basis.num_cells());
    out.iter_mut().for_each(|v| *v = 0.0);
    for ((&l, &r), &phi) in basis.left.iter().zip(&basis.right).zip(flux) {
        let f = 0.5 * phi * (y[l] + y[r]);
        out[l] += f;
        out[r] -= f;
    }
    out.iter_mut().zip(&basis.inv_volumes).for_each(|(v, iv)| *v *= iv);
}

/// A step operator `D = Σ_i c_i D_{b_i}` with the coefficients folded in.
#[derive(Debug, Clone)]
pub struct AdvectionOperator<'a> {
    basis: &'a TransportBasis,
    flux: Vec<f64>,
    is_zero: bool,
}

impl AdvectionOperator<'_> {
    pub fn apply(&self, y: &[f64], out: &mut [f64]) {
        divergence(self.basis, &self.flux, y, out);
    }

    pub fn apply_state(&self, y: &StateVector) -> Result<StateVector> {
        self.basis.check_state(y)?;
        let mut out = vec![0.0; y.len()];
        self.apply(y.values(), &mut out);
        Ok(y.with_values(out))
    }

    /// True when every coefficient is zero.
    pub fn is_zero(&self) -> bool {
        self.is_zero
    }
}

/// `x ↦ x + s D x`.
struct Shifted<'a, 'b> {
    op: &'a AdvectionOperator<'b>,
    s: f64,
}

impl LinearOperator for Shifted<'_, '_> {
    fn dim(&self) -> usize {
        self.op.basis.num_cells()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.op.apply(x, y);
        y.iter_mut().zip(x).for_each(|(yi, xi)| *yi = xi + self.s * *yi);
    }
}

/// `Σ_i c_i D_{b_i} y` assembled from flux tables.
pub fn apply_divergence(tables: &[FluxTable], coeffs: &[f64], y: &StateVector) -> Result<StateVector> {
    let basis = TransportBasis::new(y.mesh().clone(), tables)?;
    basis.operator(coeffs)?.apply_state(y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// `(I + S) x = (I - S) θ` with `S = Δt/2 · D`.
    Forward,
    /// `(I - S) x = (I + S) θ`: the adjoint step, and the inverse of `Forward`.
    Backward,
}

/// One Crank–Nicolson step on raw cell values.
pub fn cn_step_values(basis: &TransportBasis, theta: &[f64], coeffs: &[f64], dt: f64, direction: Direction, cfg: &KrylovConfig) -> Result<Vec<f64>> {
    if !(cfg.tol > 0.0) {
        return Err(Error::InvalidArgument(format!("solver tolerance must be positive, got {}", cfg.tol)));
    }
    let op = basis.operator(coeffs)?;
    if op.is_zero() {
        return Ok(theta.to_vec());
    }
    let s = match direction {
        Direction::Forward => 0.5 * dt,
        Direction::Backward => -0.5 * dt,
    };
    let mut rhs = vec![0.0; theta.len()];
    op.apply(theta, &mut rhs);
    rhs.iter_mut().zip(theta).for_each(|(r, t)| *r = t - s * *r);
    let mut x = theta.to_vec();
    let shifted = Shifted { op: &op, s };
    match cfg.method {
        KrylovMethod::SkewMinres => skew_minres(&shifted, basis.weights(), &rhs, &mut x, cfg)?,
        KrylovMethod::Gmres => gmres(&shifted, basis.weights(), &rhs, &mut x, cfg)?,
    };
    Ok(x)
}

pub fn cn_step(basis: &TransportBasis, theta: &StateVector, coeffs: &[f64], dt: f64, direction: Direction, cfg: &KrylovConfig) -> Result<StateVector> {
    basis.check_state(theta)?;
    Ok(theta.with_values(cn_step_values(basis, theta.values(), coeffs, dt, direction, cfg)?))
}

fn check_schedule(basis: &TransportBasis, schedule: &ControlSchedule) -> Result<()> {
    if schedule.num_modes() != basis.num_modes() {
        return Err(Error::SizeMismatch { what: "schedule modes", expected: basis.num_modes(), found: schedule.num_modes() });
    }
    Ok(())
}

/// Full forward trajectory `θ^0, …, θ^{N_t}`.
pub fn solve_forward(basis: &TransportBasis, theta0: &StateVector, schedule: &ControlSchedule, cfg: &KrylovConfig) -> Result<Vec<StateVector>> {
    basis.check_state(theta0)?;
    check_schedule(basis, schedule)?;
    let mut out = Vec::with_capacity(schedule.num_steps() + 1);
    out.push(theta0.clone());
    for n in 0..schedule.num_steps() {
        let next = cn_step_values(basis, out[n].values(), schedule.coeffs.step(n), schedule.dt, Direction::Forward, cfg)?;
        out.push(theta0.with_values(next));
    }
    Ok(out)
}

/// Full adjoint trajectory `ρ^0, …, ρ^{N_t}` with `ρ^{N_t} = η`.
pub fn solve_adjoint(basis: &TransportBasis, eta: &StateVector, schedule: &ControlSchedule, cfg: &KrylovConfig) -> Result<Vec<StateVector>> {
    basis.check_state(eta)?;
    check_schedule(basis, schedule)?;
    let n_steps = schedule.num_steps();
    let mut rev = Vec::with_capacity(n_steps + 1);
    rev.push(eta.clone());
    for n in (0..n_steps).rev() {
        let prev = cn_step_values(basis, rev.last().unwrap().values(), schedule.coeffs.step(n), schedule.dt, Direction::Backward, cfg)?;
        rev.push(eta.with_values(prev));
    }
    rev.reverse();
    Ok(rev)
}

/// Memory policy for stored forward trajectories.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StoragePolicy {
    /// Bytes available for stored states; `None` stores every state.
    pub memory_budget: Option<usize>,
}

impl StoragePolicy {
    pub fn full() -> Self {
        Self { memory_budget: None }
    }

    pub fn with_budget(bytes: usize) -> Self {
        Self { memory_budget: Some(bytes) }
    }

    /// Checkpoint spacing for `n_steps` steps of `n_cells` values.
    pub fn stride(&self, n_steps: usize, n_cells: usize) -> usize {
        let Some(budget) = self.memory_budget else { return 1 };
        let state = n_cells.max(1) * std::mem::size_of::<f64>();
        if (n_steps + 1) * state <= budget || n_steps < 2 {
            return 1;
        }
        // checkpoints plus one recomputed segment
        let cost = |k: usize| (n_steps.div_ceil(k) + 2 + k) * state;
        (2..=n_steps).find(|&k| cost(k) <= budget).unwrap_or_else(|| ((n_steps as f64).sqrt().ceil() as usize).max(2))
    }
}

/// A forward trajectory that stores every `stride`-th state and recomputes
/// the rest on demand. Recomputed states are bitwise identical to the
/// originals because the step is deterministic.
#[derive(Debug, Clone)]
pub struct Trajectory {
    stride: usize,
    n_steps: usize,
    /// States at `n = 0, stride, 2·stride, …` (all states when `stride == 1`).
    checkpoints: Vec<Vec<f64>>,
    last: Vec<f64>,
}

impl Trajectory {
    pub fn compute(basis: &TransportBasis, theta0: &StateVector, schedule: &ControlSchedule, cfg: &KrylovConfig, policy: StoragePolicy) -> Result<Self> {
        basis.check_state(theta0)?;
        check_schedule(basis, schedule)?;
        let n_steps = schedule.num_steps();
        let stride = policy.stride(n_steps, basis.num_cells());
        let mut checkpoints = vec![theta0.values().to_vec()];
        let mut cur = theta0.values().to_vec();
        for n in 0..n_steps {
            cur = cn_step_values(basis, &cur, schedule.coeffs.step(n), schedule.dt, Direction::Forward, cfg)?;
            if (n + 1) % stride == 0 {
                checkpoints.push(cur.clone());
            }
        }
        Ok(Self { stride, n_steps, checkpoints, last: cur })
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn num_steps(&self) -> usize {
        self.n_steps
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.checkpoints[0]
    }

    pub fn final_state(&self) -> &[f64] {
        &self.last
    }

    /// Number of states held in memory, excluding recomputation buffers.
    pub fn stored_states(&self) -> usize {
        self.checkpoints.len()
    }

    /// Calls `f(n, θ^n, θ^{n+1})` for `n = N_t - 1` down to `0`.
    pub fn visit_reverse<F>(&self, basis: &TransportBasis, schedule: &ControlSchedule, cfg: &KrylovConfig, mut f: F) -> Result<()>
    where
        F: FnMut(usize, &[f64], &[f64]) -> Result<()>,
    {
        if self.stride == 1 {
            for n in (0..self.n_steps).rev() {
                f(n, &self.checkpoints[n], &self.checkpoints[n + 1])?;
            }
            return Ok(());
        }
        let segments = self.n_steps.div_ceil(self.stride);
        for seg in (0..segments).rev() {
            let start = seg * self.stride;
            let end = ((seg + 1) * self.stride).min(self.n_steps);
            let mut states = Vec::with_capacity(end - start + 1);
            states.push(self.checkpoints[seg].clone());
            for n in start..end {
                let next = cn_step_values(basis, states.last().unwrap(), schedule.coeffs.step(n), schedule.dt, Direction::Forward, cfg)?;
                states.push(next);
            }
            for n in (start..end).rev() {
                f(n, &states[n - start], &states[n - start + 1])?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::BasisFlow;
    use crate::mesh::project_initial_data;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cellular_basis(n: usize) -> TransportBasis {
        let mesh = Arc::new(Mesh::cartesian(n, n).unwrap());
        TransportBasis::from_flows(mesh, &[BasisFlow::cellular(1).unwrap(), BasisFlow::cellular(2).unwrap()]).unwrap()
    }

    fn polar_basis(n: usize) -> TransportBasis {
        let mesh = Arc::new(Mesh::polar(n, n, [0.0, 0.0], 1.0).unwrap());
        let flows = [BasisFlow::doswell([0.0, 0.0], crate::flows::DOSWELL_VBAR).unwrap(), BasisFlow::rigid_rotation([0.0, 0.0], 1.0)];
        TransportBasis::from_flows(mesh, &flows).unwrap()
    }

    /// Dense `D` built cell by cell from the face lists.
    fn dense_divergence(mesh: &Mesh, tables: &[FluxTable], coeffs: &[f64]) -> DMatrix<f64> {
        let n = mesh.num_cells();
        let mut d = DMatrix::zeros(n, n);
        for k in 0..n {
            let vol = mesh.cells()[k].volume;
            for cf in mesh.cell_faces(k) {
                let Some(l) = cf.neighbor else { continue };
                let phi: f64 = tables.iter().zip(coeffs).map(|(t, c)| c * t.fluxes[cf.face]).sum::<f64>() * cf.sign;
                d[(k, k)] += 0.5 * phi / vol;
                d[(k, l)] += 0.5 * phi / vol;
            }
        }
        d
    }

    fn random_values(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn constants_are_in_the_kernel() {
        for basis in [cellular_basis(16), polar_basis(12)] {
            let op = basis.operator(&[0.7, -1.3]).unwrap();
            let ones = vec![1.0; basis.num_cells()];
            let mut out = vec![0.0; ones.len()];
            op.apply(&ones, &mut out);
            let scale = basis.fluxes.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
            let vmin = basis.volumes.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(out.iter().all(|v| v.abs() <= 1e-13 * scale / vmin), "{:?}", out.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        }
    }

    #[test]
    fn zero_coefficients_give_exact_zero() {
        let basis = cellular_basis(8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = random_values(&mut rng, basis.num_cells());
        let mut out = vec![1.0; y.len()];
        basis.operator(&[0.0, 0.0]).unwrap().apply(&y, &mut out);
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_by_two_matches_hand_sum_and_dense_oracle() {
        let mesh = Arc::new(Mesh::cartesian(2, 2).unwrap());
        let table = assemble_flux_table(&mesh, &BasisFlow::cellular(1).unwrap()).unwrap();
        let y = StateVector::new(mesh.clone(), vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let out = apply_divergence(std::slice::from_ref(&table), &[1.0], &y).unwrap();
        let d = dense_divergence(&mesh, std::slice::from_ref(&table), &[1.0]);
        let expected = &d * DVector::from_vec(y.values().to_vec());
        for (a, b) in out.values().iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
        // By hand: cell 0 has two interior faces with outward fluxes ±1 that
        // cancel, so (Dy)_0 = 0; cells 1 and 2 each see half of y_0 through
        // one face of flux ∓1, scaled by 1/|K| = 4; cell 3 touches no mass.
        let v = out.values();
        assert!(v[0].abs() < 1e-14);
        assert!((v[1].abs() - 2.0).abs() < 1e-14);
        assert!((v[1] + v[2]).abs() < 1e-14);
        assert_eq!(v[3], 0.0);
    }

    #[test]
    fn matches_dense_oracle_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for basis in [cellular_basis(6), polar_basis(5)] {
            let tables: Vec<FluxTable> = match basis.mesh.kind() {
                crate::MeshKind::Cartesian { .. } => vec![
                    assemble_flux_table(&basis.mesh, &BasisFlow::cellular(1).unwrap()).unwrap(),
                    assemble_flux_table(&basis.mesh, &BasisFlow::cellular(2).unwrap()).unwrap(),
                ],
                crate::MeshKind::Polar { .. } => vec![
                    assemble_flux_table(&basis.mesh, &BasisFlow::doswell([0.0, 0.0], crate::flows::DOSWELL_VBAR).unwrap()).unwrap(),
                    assemble_flux_table(&basis.mesh, &BasisFlow::rigid_rotation([0.0, 0.0], 1.0)).unwrap(),
                ],
            };
            let c = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let d = dense_divergence(&basis.mesh, &tables, &c);
            let y = random_values(&mut rng, basis.num_cells());
            let mut out = vec![0.0; y.len()];
            basis.operator(&c).unwrap().apply(&y, &mut out);
            let expected = &d * DVector::from_vec(y);
            for (a, b) in out.iter().zip(expected.iter()) {
                assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()));
            }
        }
    }

    fn skew_defect(basis: &TransportBasis, c: &[f64], y: &[f64], z: &[f64]) -> f64 {
        let op = basis.operator(c).unwrap();
        let (mut dy, mut dz) = (vec![0.0; y.len()], vec![0.0; z.len()]);
        op.apply(y, &mut dy);
        op.apply(z, &mut dz);
        let w = basis.weights();
        (w.dot(&dy, z) + w.dot(y, &dz)).abs() / (w.norm(y) * w.norm(z))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn skew_symmetry_cartesian(seed in any::<u64>(), c0 in -2.0f64..2.0, c1 in -2.0f64..2.0) {
            let basis = cellular_basis(12);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y = random_values(&mut rng, basis.num_cells());
            let z = random_values(&mut rng, basis.num_cells());
            prop_assert!(skew_defect(&basis, &[c0, c1], &y, &z) <= 1e-13);
        }

        #[test]
        fn skew_symmetry_polar(seed in any::<u64>(), c0 in -2.0f64..2.0, c1 in -2.0f64..2.0) {
            let basis = polar_basis(10);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y = random_values(&mut rng, basis.num_cells());
            let z = random_values(&mut rng, basis.num_cells());
            prop_assert!(skew_defect(&basis, &[c0, c1], &y, &z) <= 1e-13);
        }
    }

    #[test]
    fn zero_step_is_identity() {
        let basis = cellular_basis(8);
        let theta = project_initial_data(basis.mesh(), |x, y| x * y);
        let next = cn_step(&basis, &theta, &[0.0, 0.0], 0.1, Direction::Forward, &KrylovConfig::default()).unwrap();
        assert_eq!(next.values(), theta.values());
    }

    #[test]
    fn step_is_an_isometry_and_matches_dense_lu() {
        let mesh = Arc::new(Mesh::cartesian(4, 4).unwrap());
        let tables = vec![
            assemble_flux_table(&mesh, &BasisFlow::cellular(1).unwrap()).unwrap(),
            assemble_flux_table(&mesh, &BasisFlow::cellular(2).unwrap()).unwrap(),
        ];
        let basis = TransportBasis::new(mesh.clone(), &tables).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = KrylovConfig::default();
        for _ in 0..5 {
            let c = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let dt = 0.05;
            let theta = StateVector::new(mesh.clone(), random_values(&mut rng, 16)).unwrap();
            for dir in [Direction::Forward, Direction::Backward] {
                let x = cn_step(&basis, &theta, &c, dt, dir, &cfg).unwrap();
                assert!((x.norm() - theta.norm()).abs() <= cfg.tol * theta.norm());
                let s = if dir == Direction::Forward { 0.5 * dt } else { -0.5 * dt };
                let d = dense_divergence(&mesh, &tables, &c) * s;
                let id = DMatrix::<f64>::identity(16, 16);
                let rhs = (&id - &d) * DVector::from_vec(theta.values().to_vec());
                let exact = (&id + &d).lu().solve(&rhs).unwrap();
                for (a, b) in x.values().iter().zip(exact.iter()) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    fn random_schedule(rng: &mut ChaCha8Rng, dt: f64, n: usize, m: usize) -> ControlSchedule {
        ControlSchedule::from_profile(dt, n, m, |_, _| rng.random_range(-2.0..2.0)).unwrap()
    }

    #[test]
    fn forward_and_adjoint_conserve_pairing_and_mass() {
        let basis = cellular_basis(16);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = KrylovConfig::default();
        let schedule = {
            let mut vals = Vec::new();
            for _ in 0..30 {
                vals.push(rng.random_range(-2.0..2.0));
                vals.push(rng.random_range(-2.0..2.0));
            }
            ControlSchedule::new(0.01, crate::schedule::CoefficientArray::from_step_major(2, 30, vals).unwrap()).unwrap()
        };
        let theta0 = StateVector::new(basis.mesh().clone(), random_values(&mut rng, 256)).unwrap();
        let eta = StateVector::new(basis.mesh().clone(), random_values(&mut rng, 256)).unwrap();
        let fwd = solve_forward(&basis, &theta0, &schedule, &cfg).unwrap();
        let adj = solve_adjoint(&basis, &eta, &schedule, &cfg).unwrap();
        assert_eq!(adj[30].values(), eta.values());
        let p_end = fwd[30].pairing(&adj[30]).unwrap();
        let scale = theta0.norm() * eta.norm();
        for n in 0..=30 {
            assert!((fwd[n].pairing(&adj[n]).unwrap() - p_end).abs() <= 10.0 * cfg.tol * scale);
            assert!((fwd[n].mass() - theta0.mass()).abs() <= 1e-12 * theta0.norm());
            assert!((fwd[n].energy() - theta0.energy()).abs() <= 1e-9 * theta0.energy());
        }
    }

    #[test]
    fn backward_steps_undo_forward_steps() {
        let basis = polar_basis(12);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = KrylovConfig::default();
        let schedule = random_schedule(&mut rng, 0.02, 40, 2);
        let theta0 = StateVector::new(basis.mesh().clone(), random_values(&mut rng, basis.num_cells())).unwrap();
        let fwd = solve_forward(&basis, &theta0, &schedule, &cfg).unwrap();
        let back = solve_adjoint(&basis, &fwd[40], &schedule, &cfg).unwrap();
        let diff: Vec<f64> = back[0].values().iter().zip(theta0.values()).map(|(a, b)| a - b).collect();
        let err = basis.weights().norm(&diff) / theta0.norm();
        assert!(err <= 1e-10, "{err}");
    }

    #[test]
    fn zero_schedule_freezes_both_trajectories() {
        let basis = cellular_basis(6);
        let schedule = ControlSchedule::zeros(0.1, 5, 2).unwrap();
        let theta0 = project_initial_data(basis.mesh(), |x, _| x);
        let cfg = KrylovConfig::default();
        for s in solve_forward(&basis, &theta0, &schedule, &cfg).unwrap() {
            assert_eq!(s.values(), theta0.values());
        }
        for s in solve_adjoint(&basis, &theta0, &schedule, &cfg).unwrap() {
            assert_eq!(s.values(), theta0.values());
        }
    }

    #[test]
    fn checkpointed_trajectory_replays_bitwise() {
        let basis = cellular_basis(10);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = KrylovConfig::default();
        let schedule = random_schedule(&mut rng, 0.01, 23, 2);
        let theta0 = StateVector::new(basis.mesh().clone(), random_values(&mut rng, 100)).unwrap();
        let full = Trajectory::compute(&basis, &theta0, &schedule, &cfg, StoragePolicy::full()).unwrap();
        let budget = 12 * 100 * 8;
        let lean = Trajectory::compute(&basis, &theta0, &schedule, &cfg, StoragePolicy::with_budget(budget)).unwrap();
        assert_eq!(full.stride(), 1);
        assert!(lean.stride() > 1);
        assert!(lean.stored_states() < full.stored_states());
        assert_eq!(full.final_state(), lean.final_state());
        let mut a = Vec::new();
        let mut b = Vec::new();
        full.visit_reverse(&basis, &schedule, &cfg, |n, x, y| {
            a.push((n, x.to_vec(), y.to_vec()));
            Ok(())
        })
        .unwrap();
        lean.visit_reverse(&basis, &schedule, &cfg, |n, x, y| {
            b.push((n, x.to_vec(), y.to_vec()));
            Ok(())
        })
        .unwrap();
        assert_eq!(a.len(), 23);
        assert_eq!(a, b);
        assert_eq!(a[0].0, 22);
    }

    #[test]
    fn mesh_and_shape_mismatches_are_errors() {
        let basis = cellular_basis(4);
        let other = StateVector::zeros(Arc::new(Mesh::cartesian(5, 5).unwrap()));
        assert!(matches!(cn_step(&basis, &other, &[1.0, 0.0], 0.1, Direction::Forward, &KrylovConfig::default()), Err(Error::MeshMismatch)));
        let theta = StateVector::zeros(basis.mesh().clone());
        assert!(matches!(cn_step(&basis, &theta, &[1.0], 0.1, Direction::Forward, &KrylovConfig::default()), Err(Error::SizeMismatch { .. })));
    }
}
