//! Exponential decay rates of the mix-norm.

use serde::{Deserialize, Serialize};

use super::series::TimeSeries;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// Least-squares slope of `-ln(mix_norm)` against `t`.
    pub rate: f64,
    pub r_squared: f64,
    pub samples: usize,
}

/// Fits `mix_norm ≈ C exp(-rate · t)` on the sampled rows with `t ∈ [t_a, t_b]`.
pub fn fit_decay_rate(series: &TimeSeries, window: [f64; 2]) -> Result<DecayFit> {
    let [a, b] = window;
    let pts: Vec<(f64, f64)> = series.mix_samples().into_iter().filter(|&(t, _)| t >= a && t <= b).collect();
    if pts.len() < 3 {
        return Err(Error::InvalidArgument(format!("decay fit needs at least 3 mix-norm samples in [{a}, {b}], found {}", pts.len())));
    }
    if let Some(&(t, m)) = pts.iter().find(|&&(_, m)| !(m > 0.0)) {
        return Err(Error::InvalidArgument(format!("mix-norm {m} at t = {t} is not positive")));
    }
    let n = pts.len() as f64;
    let ys: Vec<f64> = pts.iter().map(|&(_, m)| -m.ln()).collect();
    let t_mean = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let y_mean = ys.iter().sum::<f64>() / n;
    let (mut stt, mut sty) = (0.0, 0.0);
    for (&(t, _), &y) in pts.iter().zip(&ys) {
        stt += (t - t_mean) * (t - t_mean);
        sty += (t - t_mean) * (y - y_mean);
    }
    let rate = sty / stt;
    let intercept = y_mean - rate * t_mean;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for (&(t, _), &y) in pts.iter().zip(&ys) {
        let r = y - (intercept + rate * t);
        ss_res += r * r;
        ss_tot += (y - y_mean) * (y - y_mean);
    }
    // a flat series is fitted exactly by a zero slope
    let r_squared = if ss_tot <= f64::EPSILON * y_mean.abs().max(1.0) * n { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(DecayFit { rate, r_squared, samples: pts.len() })
}
