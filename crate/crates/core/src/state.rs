//! Cell-average fields and the weighted inner product `⟨a,b⟩ = Σ a_K b_K |K|`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::Mesh;

/// A scalar field with one value per cell of a mesh.
#[derive(Debug, Clone)]
pub struct StateVector {
    mesh: Arc<Mesh>,
    values: Vec<f64>,
}

impl StateVector {
    pub fn new(mesh: Arc<Mesh>, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.num_cells() {
            return Err(Error::SizeMismatch { what: "state vector", expected: mesh.num_cells(), found: values.len() });
        }
        Ok(Self { mesh, values })
    }

    pub fn zeros(mesh: Arc<Mesh>) -> Self {
        let n = mesh.num_cells();
        Self { mesh, values: vec![0.0; n] }
    }

    pub fn constant(mesh: Arc<Mesh>, value: f64) -> Self {
        let n = mesh.num_cells();
        Self { mesh, values: vec![value; n] }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub(crate) fn with_values(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Self { mesh: self.mesh.clone(), values }
    }

    pub fn same_mesh(&self, other: &StateVector) -> bool {
        same_mesh(&self.mesh, &other.mesh)
    }

    /// Discrete mass `M_h = Σ θ_K |K|`.
    pub fn mass(&self) -> f64 {
        weighted_sum(&self.mesh, &self.values)
    }

    /// Discrete energy `E_h = ‖θ‖²`.
    pub fn energy(&self) -> f64 {
        weighted_dot(&self.mesh, &self.values, &self.values)
    }

    pub fn norm(&self) -> f64 {
        self.energy().sqrt()
    }

    /// `⟨self, other⟩_{X_h}`.
    pub fn pairing(&self, other: &StateVector) -> Result<f64> {
        if !self.same_mesh(other) {
            return Err(Error::MeshMismatch);
        }
        Ok(weighted_dot(&self.mesh, &self.values, &other.values))
    }
}

pub fn mass(theta: &StateVector) -> f64 {
    theta.mass()
}

pub fn energy(theta: &StateVector) -> f64 {
    theta.energy()
}

pub fn pairing(a: &StateVector, b: &StateVector) -> Result<f64> {
    a.pairing(b)
}

pub(crate) fn same_mesh(a: &Arc<Mesh>, b: &Arc<Mesh>) -> bool {
    Arc::ptr_eq(a, b) || (a.kind() == b.kind() && a.num_cells() == b.num_cells())
}

pub(crate) fn weighted_dot(mesh: &Mesh, a: &[f64], b: &[f64]) -> f64 {
    mesh.cells().iter().zip(a.iter().zip(b)).map(|(c, (x, y))| x * y * c.volume).sum()
}

pub(crate) fn weighted_sum(mesh: &Mesh, a: &[f64]) -> f64 {
    mesh.cells().iter().zip(a).map(|(c, x)| x * c.volume).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_constant_on_square() {
        let mesh = Arc::new(Mesh::cartesian(8, 8).unwrap());
        let one = StateVector::constant(mesh, 1.0);
        assert!((one.mass() - 1.0).abs() < 1e-15);
        assert!((one.energy() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mismatched_meshes_are_rejected() {
        let a = StateVector::zeros(Arc::new(Mesh::cartesian(4, 4).unwrap()));
        let b = StateVector::zeros(Arc::new(Mesh::cartesian(4, 5).unwrap()));
        assert!(matches!(a.pairing(&b), Err(Error::MeshMismatch)));
        let c = StateVector::zeros(Arc::new(Mesh::cartesian(4, 4).unwrap()));
        assert!(a.pairing(&c).is_ok());
    }

    #[test]
    fn wrong_length_is_rejected() {
        let mesh = Arc::new(Mesh::cartesian(3, 3).unwrap());
        assert!(matches!(StateVector::new(mesh, vec![0.0; 8]), Err(Error::SizeMismatch { .. })));
    }

    #[test]
    fn energy_of_sine_approaches_one_half() {
        let mut previous = f64::INFINITY;
        for n in [8, 16, 32, 64] {
            let mesh = Arc::new(Mesh::cartesian(n, n).unwrap());
            let theta = crate::mesh::project_initial_data(&mesh, |_, y| (2.0 * std::f64::consts::PI * y).sin());
            let err = (theta.energy() - 0.5).abs();
            assert!(err < previous);
            previous = err;
        }
        assert!(previous < 2e-3);
    }
}
