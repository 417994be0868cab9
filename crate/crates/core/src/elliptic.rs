//! Two-point-flux Neumann Laplacian and the `Ḣ⁻¹` mix-norm.
//!
//! `(L y)_K = (1/|K|) Σ_Γ (|Γ| / d_{K,L}) (y_K - y_L)` over interior faces,
//! with `d_{K,L}` the distance between the centroids of the two cells. `L` is
//! self-adjoint and positive semidefinite in `⟨·,·⟩` with the constants as its
//! kernel, so it is inverted on the zero-mean subspace by projected CG.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::krylov::{cg_zero_mean, KrylovConfig, LinearOperator, SolveStats, Weights};
use crate::mesh::Mesh;
use crate::state::{same_mesh, StateVector};

#[derive(Debug, Clone)]
pub struct NeumannLaplacian {
    mesh: Arc<Mesh>,
    left: Vec<usize>,
    right: Vec<usize>,
    transmissibility: Vec<f64>,
    volumes: Vec<f64>,
    inv_volumes: Vec<f64>,
}

impl NeumannLaplacian {
    pub fn new(mesh: Arc<Mesh>) -> Self {
        let (mut left, mut right, mut transmissibility) = (Vec::new(), Vec::new(), Vec::new());
        for f in mesh.interior_faces() {
            left.push(f.left);
            right.push(f.right.expect("interior face"));
            transmissibility.push(f.area / f.center_distance.expect("interior face has a centre distance"));
        }
        let volumes: Vec<f64> = mesh.volumes().collect();
        Self { inv_volumes: volumes.iter().map(|v| 1.0 / v).collect(), volumes, left, right, transmissibility, mesh }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    /// Solver settings used by the free functions: the iteration cap grows
    /// with the grid diameter, as does the CG iteration count.
    pub fn default_config(&self, tol: f64) -> KrylovConfig {
        let n = (self.volumes.len() as f64).sqrt().ceil() as usize;
        KrylovConfig { tol, max_iter: (40 * n).max(1000), restart: 0, ..Default::default() }
    }

    /// Solves `L η = rhs - mean(rhs)` for the zero-mean `η`.
    pub fn solve_zero_mean(&self, rhs: &[f64], cfg: &KrylovConfig) -> Result<(Vec<f64>, SolveStats)> {
        if !(cfg.tol > 0.0) {
            return Err(Error::InvalidArgument(format!("solver tolerance must be positive, got {}", cfg.tol)));
        }
        if rhs.len() != self.volumes.len() {
            return Err(Error::SizeMismatch { what: "Poisson right-hand side", expected: self.volumes.len(), found: rhs.len() });
        }
        let mut x = vec![0.0; rhs.len()];
        let stats = cg_zero_mean(self, Weights(&self.volumes), rhs, &mut x, cfg)?;
        Ok((x, stats))
    }

    pub fn solve_poisson_zero_mean(&self, rhs: &StateVector, tol: f64) -> Result<StateVector> {
        self.check(rhs)?;
        let (x, _) = self.solve_zero_mean(rhs.values(), &self.default_config(tol))?;
        Ok(rhs.with_values(x))
    }

    /// `sqrt(⟨θ, L⁻¹θ⟩)` after removing the mean of `θ`.
    pub fn mix_norm(&self, theta: &StateVector, tol: f64) -> Result<f64> {
        self.check(theta)?;
        Ok(self.mix_norm_values(theta.values(), &self.default_config(tol))?.0)
    }

    /// Mix-norm and the zero-mean potential `η = L⁻¹θ` on raw values.
    pub fn mix_norm_values(&self, theta: &[f64], cfg: &KrylovConfig) -> Result<(f64, Vec<f64>)> {
        let (eta, _) = self.solve_zero_mean(theta, cfg)?;
        let w = Weights(&self.volumes);
        let mut centred = theta.to_vec();
        w.project_zero_mean(&mut centred);
        let inner = w.dot(&centred, &eta);
        let scale = w.dot(&centred, &centred);
        let value = if inner >= 0.0 {
            inner.sqrt()
        } else if inner >= -10.0 * cfg.tol * scale {
            0.0
        } else {
            return Err(Error::InvalidArgument(format!("negative mix-norm square {inner:.3e}; the Laplacian solve is inaccurate")));
        };
        Ok((value, eta))
    }

    fn check(&self, theta: &StateVector) -> Result<()> {
        if !same_mesh(&self.mesh, theta.mesh()) {
            return Err(Error::MeshMismatch);
        }
        Ok(())
    }
}

impl LinearOperator for NeumannLaplacian {
    fn dim(&self) -> usize {
        self.volumes.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for ((&l, &r), &t) in self.left.iter().zip(&self.right).zip(&self.transmissibility) {
            let f = t * (x[l] - x[r]);
            y[l] += f;
            y[r] -= f;
        }
        y.iter_mut().zip(&self.inv_volumes).for_each(|(v, iv)| *v *= iv);
    }
}

/// Zero-mean solution of `L η = rhs - mean(rhs)` on the mesh of `rhs`.
pub fn solve_poisson_zero_mean(rhs: &StateVector, tol: f64) -> Result<StateVector> {
    NeumannLaplacian::new(rhs.mesh().clone()).solve_poisson_zero_mean(rhs, tol)
}

/// Discrete `Ḣ⁻¹` norm of `θ`.
pub fn mix_norm(theta: &StateVector, tol: f64) -> Result<f64> {
    NeumannLaplacian::new(theta.mesh().clone()).mix_norm(theta, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::project_initial_data;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    /// Dense `L` assembled cell by cell from the face lists.
    fn dense(mesh: &Mesh) -> DMatrix<f64> {
        let n = mesh.num_cells();
        let mut a = DMatrix::zeros(n, n);
        for k in 0..n {
            let vol = mesh.cells()[k].volume;
            for cf in mesh.cell_faces(k) {
                let Some(l) = cf.neighbor else { continue };
                let face = &mesh.faces()[cf.face];
                let c = mesh.cells();
                let d = (c[k].centroid[0] - c[l].centroid[0]).hypot(c[k].centroid[1] - c[l].centroid[1]);
                a[(k, k)] += face.area / d / vol;
                a[(k, l)] -= face.area / d / vol;
            }
        }
        a
    }

    fn meshes() -> Vec<Arc<Mesh>> {
        vec![
            Arc::new(Mesh::cartesian(12, 9).unwrap()),
            Arc::new(Mesh::cartesian(16, 16).unwrap()),
            Arc::new(Mesh::polar(8, 12, [0.5, 0.5], 0.5).unwrap()),
        ]
    }

    #[test]
    fn self_adjoint_semidefinite_with_constant_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for mesh in meshes() {
            let lap = NeumannLaplacian::new(mesh.clone());
            let w = Weights(lap.volumes());
            let n = mesh.num_cells();
            let mut out = vec![0.0; n];
            lap.apply(&vec![1.0; n], &mut out);
            assert!(out.iter().all(|&v| v == 0.0));
            for _ in 0..20 {
                let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let z: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let (mut ly, mut lz) = (vec![0.0; n], vec![0.0; n]);
                lap.apply(&y, &mut ly);
                lap.apply(&z, &mut lz);
                let scale = w.norm(&ly) * w.norm(&z) + w.norm(&y) * w.norm(&lz);
                assert!((w.dot(&ly, &z) - w.dot(&y, &lz)).abs() <= 1e-13 * scale);
                assert!(w.dot(&ly, &y) >= 0.0);
            }
        }
    }

    #[test]
    fn matches_dense_pseudo_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for mesh in meshes() {
            let lap = NeumannLaplacian::new(mesh.clone());
            let w = Weights(lap.volumes());
            let n = mesh.num_cells();
            let mut rhs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            w.project_zero_mean(&mut rhs);
            let pinv = dense(&mesh).pseudo_inverse(1e-12).unwrap();
            let mut exact: Vec<f64> = (pinv * DVector::from_vec(rhs.clone())).iter().copied().collect();
            w.project_zero_mean(&mut exact);
            let (eta, _) = lap.solve_zero_mean(&rhs, &KrylovConfig { tol: 1e-14, max_iter: 5000, restart: 0, ..Default::default() }).unwrap();
            let scale = exact.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (a, b) in eta.iter().zip(&exact) {
                assert!((a - b).abs() <= 1e-10 * scale.max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn zero_rhs_and_constant_shift() {
        let mesh = Arc::new(Mesh::cartesian(10, 10).unwrap());
        let zero = StateVector::zeros(mesh.clone());
        assert!(solve_poisson_zero_mean(&zero, 1e-12).unwrap().values().iter().all(|&v| v == 0.0));
        assert_eq!(mix_norm(&zero, 1e-12).unwrap(), 0.0);
        let f = project_initial_data(&mesh, |x, y| (3.0 * x).sin() + y * y);
        let g = f.with_values(f.values().iter().map(|v| v + 2.5).collect());
        let a = solve_poisson_zero_mean(&f, 1e-12).unwrap();
        let b = solve_poisson_zero_mean(&g, 1e-12).unwrap();
        let diff: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect();
        assert!(Weights(&mesh.volumes().collect::<Vec<_>>()).norm(&diff) <= 1e-11 * a.norm());
        assert!(a.mass().abs() <= 1e-13);
    }

    #[test]
    fn mix_norm_is_absolutely_homogeneous() {
        let mesh = Arc::new(Mesh::cartesian(24, 24).unwrap());
        let f = project_initial_data(&mesh, |x, y| (PI * x).cos() * (2.0 * y - 1.0));
        let base = mix_norm(&f, 1e-12).unwrap();
        for alpha in [-3.0, 0.5, 7.0] {
            let scaled = f.with_values(f.values().iter().map(|v| alpha * v).collect());
            let m = mix_norm(&scaled, 1e-12).unwrap();
            assert!((m - alpha.abs() * base).abs() <= 1e-10 * m);
        }
    }

    #[test]
    fn cosine_mode_converges_to_neumann_eigenfunction() {
        let mut errors = Vec::new();
        for n in [16, 32, 64] {
            let mesh = Arc::new(Mesh::cartesian(n, n).unwrap());
            let rhs = project_initial_data(&mesh, |x, _| (PI * x).cos());
            let eta = solve_poisson_zero_mean(&rhs, 1e-12).unwrap();
            let exact = project_initial_data(&mesh, |x, _| (PI * x).cos() / (PI * PI));
            let diff: Vec<f64> = eta.values().iter().zip(exact.values()).map(|(a, b)| a - b).collect();
            errors.push(Weights(&mesh.volumes().collect::<Vec<_>>()).norm(&diff));
        }
        for pair in errors.windows(2) {
            assert!((pair[0] / pair[1]).log2() >= 1.0, "{errors:?}");
        }
    }

    #[test]
    fn mesh_mismatch_is_rejected() {
        let lap = NeumannLaplacian::new(Arc::new(Mesh::cartesian(4, 4).unwrap()));
        let other = StateVector::zeros(Arc::new(Mesh::cartesian(4, 6).unwrap()));
        assert!(matches!(lap.mix_norm(&other, 1e-12), Err(Error::MeshMismatch)));
    }
}
