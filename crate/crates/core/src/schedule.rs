//! Piecewise-constant control coefficients `v_i^{(n)}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An `m × N_t` array stored step-major: the `m` coefficients of step `n` are
/// contiguous.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientArray {
    m: usize,
    n_steps: usize,
    data: Vec<f64>,
}

/// Gradient of the discrete objective; same shape as the schedule it belongs to.
pub type GradientArray = CoefficientArray;

impl CoefficientArray {
    pub fn zeros(m: usize, n_steps: usize) -> Self {
        Self { m, n_steps, data: vec![0.0; m * n_steps] }
    }

    pub fn from_step_major(m: usize, n_steps: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != m * n_steps {
            return Err(Error::SizeMismatch { what: "coefficient array", expected: m * n_steps, found: data.len() });
        }
        Ok(Self { m, n_steps, data })
    }

    pub fn num_modes(&self) -> usize {
        self.m
    }

    pub fn num_steps(&self) -> usize {
        self.n_steps
    }

    pub fn get(&self, i: usize, n: usize) -> f64 {
        self.data[n * self.m + i]
    }

    pub fn set(&mut self, i: usize, n: usize, value: f64) {
        self.data[n * self.m + i] = value;
    }

    /// Coefficients of step `n`.
    pub fn step(&self, n: usize) -> &[f64] {
        &self.data[n * self.m..(n + 1) * self.m]
    }

    pub fn step_mut(&mut self, n: usize) -> &mut [f64] {
        &mut self.data[n * self.m..(n + 1) * self.m]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.m == other.m && self.n_steps == other.n_steps
    }

    /// Frobenius inner product.
    pub fn dot(&self, other: &Self) -> f64 {
        debug_assert!(self.same_shape(other));
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self + alpha * direction`.
    pub fn added(&self, alpha: f64, direction: &Self) -> Self {
        debug_assert!(self.same_shape(direction));
        let data = self.data.iter().zip(&direction.data).map(|(a, d)| a + alpha * d).collect();
        Self { m: self.m, n_steps: self.n_steps, data }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { m: self.m, n_steps: self.n_steps, data: self.data.iter().map(|v| v * factor).collect() }
    }
}

/// Time step, number of steps, and one coefficient vector per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSchedule {
    pub dt: f64,
    pub coeffs: CoefficientArray,
}

impl ControlSchedule {
    pub fn new(dt: f64, coeffs: CoefficientArray) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
        }
        Ok(Self { dt, coeffs })
    }

    pub fn zeros(dt: f64, n_steps: usize, m: usize) -> Result<Self> {
        Self::new(dt, CoefficientArray::zeros(m, n_steps))
    }

    /// Samples `profile(i, t)` at the midpoint of each step.
    pub fn from_profile<F: FnMut(usize, f64) -> f64>(dt: f64, n_steps: usize, m: usize, mut profile: F) -> Result<Self> {
        let mut coeffs = CoefficientArray::zeros(m, n_steps);
        for n in 0..n_steps {
            let t = (n as f64 + 0.5) * dt;
            for i in 0..m {
                coeffs.set(i, n, profile(i, t));
            }
        }
        Self::new(dt, coeffs)
    }

    /// Same constant coefficients on every step.
    pub fn constant(dt: f64, n_steps: usize, values: &[f64]) -> Result<Self> {
        Self::from_profile(dt, n_steps, values.len(), |i, _| values[i])
    }

    /// `v_1 = cos(πt/2)`, `v_2 = sin(πt/2)`; further modes are zero.
    pub fn trig(dt: f64, n_steps: usize, m: usize) -> Result<Self> {
        let half_pi = 0.5 * std::f64::consts::PI;
        Self::from_profile(dt, n_steps, m, |i, t| match i {
            0 => (half_pi * t).cos(),
            1 => (half_pi * t).sin(),
            _ => 0.0,
        })
    }

    pub fn num_steps(&self) -> usize {
        self.coeffs.num_steps()
    }

    pub fn num_modes(&self) -> usize {
        self.coeffs.num_modes()
    }

    pub fn final_time(&self) -> f64 {
        self.dt * self.num_steps() as f64
    }

    pub fn time(&self, n: usize) -> f64 {
        self.dt * n as f64
    }

    pub fn with_coeffs(&self, coeffs: CoefficientArray) -> Self {
        Self { dt: self.dt, coeffs }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_accessors() {
        let mut a = CoefficientArray::zeros(2, 3);
        a.set(1, 2, 5.0);
        assert_eq!(a.step(2), &[0.0, 5.0]);
        assert_eq!(a.get(1, 2), 5.0);
        assert_eq!(a.norm(), 5.0);
        let b = a.added(2.0, &a);
        assert_eq!(b.get(1, 2), 15.0);
        assert!(CoefficientArray::from_step_major(2, 3, vec![0.0; 5]).is_err());
    }

    #[test]
    fn final_time_and_profiles() {
        let s = ControlSchedule::trig(0.25, 4, 2).unwrap();
        assert_eq!(s.final_time(), 1.0);
        let t0 = 0.125 * std::f64::consts::PI / 2.0;
        assert!((s.coeffs.get(0, 0) - t0.cos()).abs() < 1e-15);
        assert!((s.coeffs.get(1, 0) - t0.sin()).abs() < 1e-15);
        let ones = ControlSchedule::constant(0.1, 3, &[1.0, 1.0]).unwrap();
        assert!(ones.coeffs.as_slice().iter().all(|&v| v == 1.0));
        assert!(ControlSchedule::zeros(0.0, 3, 1).is_err());
    }
}
