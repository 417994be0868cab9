//! Krylov solvers in a weighted inner product `⟨a,b⟩ = Σ w_k a_k b_k`.
//!
//! The Crank–Nicolson systems have the form `(I + K) x = b` with `K`
//! skew-adjoint, so the Arnoldi process collapses to a three-term recurrence
//! and the minimal-residual iterates of full GMRES come at constant cost per
//! iteration. Restarted GMRES is kept as the general-purpose fallback.
//! Conjugate gradients with mean projection handles the singular Neumann
//! Laplacian on its zero-mean subspace.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Matrix-free linear operator on `R^n`.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

/// Diagonal weights of the inner product.
#[derive(Debug, Clone, Copy)]
pub struct Weights<'a>(pub &'a [f64]);

impl Weights<'_> {
    pub fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        self.0.iter().zip(a.iter().zip(b)).map(|(w, (x, y))| w * x * y).sum()
    }

    pub fn norm(&self, a: &[f64]) -> f64 {
        self.dot(a, a).sqrt()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Removes the weighted mean of `v`.
    pub fn project_zero_mean(&self, v: &mut [f64]) {
        let mean = self.0.iter().zip(v.iter()).map(|(w, x)| w * x).sum::<f64>() / self.total();
        v.iter_mut().for_each(|x| *x -= mean);
    }
}

/// Solver for the transport steps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KrylovMethod {
    /// [`skew_minres`]: unrestarted minimal residual via the skew recurrence.
    #[default]
    SkewMinres,
    /// [`gmres`] with the configured restart length.
    Gmres,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrylovConfig {
    /// Relative residual target `‖b - Ax‖ / ‖b‖`.
    pub tol: f64,
    pub max_iter: usize,
    /// GMRES restart length (ignored by the other solvers).
    pub restart: usize,
    pub method: KrylovMethod,
}

impl Default for KrylovConfig {
    fn default() -> Self {
        Self { tol: 1e-12, max_iter: 2000, restart: 50, method: KrylovMethod::SkewMinres }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Restarted GMRES with modified Gram–Schmidt and Givens rotations.
///
/// `x` holds the initial guess on entry and the solution on exit.
pub fn gmres<A: LinearOperator + ?Sized>(op: &A, w: Weights, b: &[f64], x: &mut [f64], cfg: &KrylovConfig) -> Result<SolveStats> {
    let n = op.dim();
    assert_eq!(b.len(), n);
    assert_eq!(x.len(), n);
    let bnorm = w.norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats { iterations: 0, residual: 0.0 });
    }
    let restart = cfg.restart.max(1);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(restart + 1);
    let mut hess = vec![vec![0.0; restart]; restart + 1];
    let mut cs = vec![0.0; restart];
    let mut sn = vec![0.0; restart];
    let mut g = vec![0.0; restart + 1];
    let mut r = vec![0.0; n];
    let mut total = 0usize;

    loop {
        op.apply(x, &mut r);
        r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
        let beta = w.norm(&r);
        let rel = beta / bnorm;
        if rel <= cfg.tol {
            return Ok(SolveStats { iterations: total, residual: rel });
        }
        if total >= cfg.max_iter {
            return Err(Error::NotConverged { solver: "GMRES", iterations: total, residual: rel, target: cfg.tol });
        }

        basis.clear();
        basis.push(r.iter().map(|v| v / beta).collect());
        g.iter_mut().for_each(|v| *v = 0.0);
        g[0] = beta;
        let mut k = 0;
        for j in 0..restart {
            let mut v = vec![0.0; n];
            op.apply(&basis[j], &mut v);
            // Two passes of modified Gram–Schmidt keep the basis orthogonal at tight tolerances.
            for row in hess.iter_mut().take(j + 1) {
                row[j] = 0.0;
            }
            for _ in 0..2 {
                for (i, q) in basis.iter().enumerate() {
                    let h = w.dot(&v, q);
                    hess[i][j] += h;
                    v.iter_mut().zip(q).for_each(|(vi, qi)| *vi -= h * qi);
                }
            }
            let hnext = w.norm(&v);
            hess[j + 1][j] = hnext;

            for i in 0..j {
                let (a, c) = (hess[i][j], hess[i + 1][j]);
                hess[i][j] = cs[i] * a + sn[i] * c;
                hess[i + 1][j] = -sn[i] * a + cs[i] * c;
            }
            let (a, c) = (hess[j][j], hess[j + 1][j]);
            let denom = a.hypot(c);
            cs[j] = a / denom;
            sn[j] = c / denom;
            hess[j][j] = denom;
            hess[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];

            total += 1;
            k = j + 1;
            let est = g[j + 1].abs() / bnorm;
            if hnext == 0.0 || est <= cfg.tol || total >= cfg.max_iter {
                break;
            }
            basis.push(v.into_iter().map(|vi| vi / hnext).collect());
        }

        // Back substitution for the k × k upper-triangular system.
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let s: f64 = (i + 1..k).map(|l| hess[i][l] * y[l]).sum();
            y[i] = (g[i] - s) / hess[i][i];
        }
        for (yi, q) in y.iter().zip(&basis) {
            x.iter_mut().zip(q).for_each(|(xv, qv)| *xv += yi * qv);
        }
    }
}

/// Minimal residual solver for `A = I + K` with `K` skew-adjoint in `w`.
///
/// Lanczos on `K` gives `K q_j = β_{j+1} q_{j+1} - β_j q_{j-1}`, so the
/// projected matrix is tridiagonal and MINRES-style updates apply: three
/// stored directions, one operator application per iteration. The true
/// residual is checked when the recurrence claims convergence and the
/// recurrence restarts from the current iterate if it is not met.
///
/// `x` holds the initial guess on entry and the solution on exit.
pub fn skew_minres<A: LinearOperator + ?Sized>(op: &A, w: Weights, b: &[f64], x: &mut [f64], cfg: &KrylovConfig) -> Result<SolveStats> {
    let n = op.dim();
    assert_eq!(b.len(), n);
    assert_eq!(x.len(), n);
    let bnorm = w.norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats { iterations: 0, residual: 0.0 });
    }
    let mut r = vec![0.0; n];
    let mut q_prev = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut d_prev = vec![0.0; n];
    let mut d_prev2 = vec![0.0; n];
    let mut total = 0usize;

    loop {
        op.apply(x, &mut r);
        r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
        let beta0 = w.norm(&r);
        let rel = beta0 / bnorm;
        if rel <= cfg.tol {
            return Ok(SolveStats { iterations: total, residual: rel });
        }
        if total >= cfg.max_iter {
            return Err(Error::NotConverged { solver: "skew MINRES", iterations: total, residual: rel, target: cfg.tol });
        }

        q.iter_mut().zip(&r).for_each(|(qi, ri)| *qi = ri / beta0);
        q_prev.iter_mut().for_each(|v| *v = 0.0);
        d_prev.iter_mut().for_each(|v| *v = 0.0);
        d_prev2.iter_mut().for_each(|v| *v = 0.0);
        let (mut beta, mut g) = (0.0, beta0);
        // rotations of the previous two columns, as (cos, sin)
        let (mut rot1, mut rot2) = ((1.0, 0.0), (1.0, 0.0));
        loop {
            op.apply(&q, &mut v);
            v.iter_mut().zip(&q).zip(&q_prev).for_each(|((vi, qi), pi)| *vi += beta * pi - qi);
            // K is skew, so this vanishes up to rounding; keeping it is cheap
            let alpha = w.dot(&v, &q);
            v.iter_mut().zip(&q).for_each(|(vi, qi)| *vi -= alpha * qi);
            let beta_next = w.norm(&v);

            // column of the tridiagonal matrix: (-β, 1 + α, β_next)
            let (c2, s2) = rot2;
            let (c1, s1) = rot1;
            let r_far = s2 * -beta;
            let t = c2 * -beta;
            let r_near = c1 * t + s1 * (1.0 + alpha);
            let u = -s1 * t + c1 * (1.0 + alpha);
            let r_diag = u.hypot(beta_next);
            let (c, s) = (u / r_diag, beta_next / r_diag);
            let step = c * g;
            g *= -s;

            for i in 0..n {
                let di = (q[i] - r_near * d_prev[i] - r_far * d_prev2[i]) / r_diag;
                d[i] = di;
                x[i] += step * di;
            }
            std::mem::swap(&mut d_prev2, &mut d_prev);
            std::mem::swap(&mut d_prev, &mut d);
            rot2 = rot1;
            rot1 = (c, s);
            total += 1;

            if g.abs() <= cfg.tol * bnorm || beta_next == 0.0 || total >= cfg.max_iter {
                break;
            }
            std::mem::swap(&mut q_prev, &mut q);
            q.iter_mut().zip(&v).for_each(|(qi, vi)| *qi = vi / beta_next);
            beta = beta_next;
        }
    }
}

/// Conjugate gradients for an operator that is self-adjoint and positive
/// definite on the zero-mean subspace. Right-hand side, iterates and
/// residuals are all projected onto that subspace.
pub fn cg_zero_mean<A: LinearOperator + ?Sized>(op: &A, w: Weights, b: &[f64], x: &mut [f64], cfg: &KrylovConfig) -> Result<SolveStats> {
    let n = op.dim();
    assert_eq!(b.len(), n);
    assert_eq!(x.len(), n);
    let mut rhs = b.to_vec();
    w.project_zero_mean(&mut rhs);
    w.project_zero_mean(x);
    let bnorm = w.norm(&rhs);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats { iterations: 0, residual: 0.0 });
    }
    let mut r = vec![0.0; n];
    op.apply(x, &mut r);
    r.iter_mut().zip(&rhs).for_each(|(ri, bi)| *ri = bi - *ri);
    w.project_zero_mean(&mut r);
    let mut p = r.clone();
    let mut q = vec![0.0; n];
    let mut rr = w.dot(&r, &r);
    let mut it = 0;
    loop {
        let rel = rr.sqrt() / bnorm;
        if rel <= cfg.tol {
            return Ok(SolveStats { iterations: it, residual: rel });
        }
        if it >= cfg.max_iter {
            return Err(Error::NotConverged { solver: "CG", iterations: it, residual: rel, target: cfg.tol });
        }
        op.apply(&p, &mut q);
        let pq = w.dot(&p, &q);
        if !(pq > 0.0) {
            return Err(Error::NotConverged { solver: "CG", iterations: it, residual: rel, target: cfg.tol });
        }
        let alpha = rr / pq;
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
        r.iter_mut().zip(&q).for_each(|(ri, qi)| *ri -= alpha * qi);
        w.project_zero_mean(x);
        w.project_zero_mean(&mut r);
        let rr_new = w.dot(&r, &r);
        let beta = rr_new / rr;
        p.iter_mut().zip(&r).for_each(|(pi, ri)| *pi = ri + beta * *pi);
        rr = rr_new;
        it += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Dense {
        n: usize,
        a: Vec<f64>,
    }

    impl LinearOperator for Dense {
        fn dim(&self) -> usize {
            self.n
        }
        fn apply(&self, x: &[f64], y: &mut [f64]) {
            for i in 0..self.n {
                y[i] = (0..self.n).map(|j| self.a[i * self.n + j] * x[j]).sum();
            }
        }
    }

    #[test]
    fn gmres_solves_nonsymmetric_system() {
        let n = 30;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + i] = 2.0 + i as f64 * 0.1;
            if i + 1 < n {
                a[i * n + i + 1] = 0.7;
                a[(i + 1) * n + i] = -0.3;
            }
        }
        let op = Dense { n, a };
        let weights: Vec<f64> = (0..n).map(|i| 1.0 + (i % 3) as f64).collect();
        let exact: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut b = vec![0.0; n];
        op.apply(&exact, &mut b);
        let mut x = vec![0.0; n];
        let cfg = KrylovConfig { tol: 1e-13, max_iter: 500, restart: 7, ..Default::default() };
        let stats = gmres(&op, Weights(&weights), &b, &mut x, &cfg).unwrap();
        assert!(stats.residual <= 1e-13);
        for (xi, ei) in x.iter().zip(&exact) {
            assert!((xi - ei).abs() < 1e-11);
        }
    }

    #[test]
    fn gmres_reports_non_convergence() {
        let n = 40;
        // cyclic shift: GMRES stalls until the full dimension is reached
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + (i + 1) % n] = 1.0;
        }
        let op = Dense { n, a };
        let ones = vec![1.0; n];
        let mut b = vec![0.0; n];
        b[0] = 1.0;
        let mut x = vec![0.0; n];
        let cfg = KrylovConfig { tol: 1e-12, max_iter: 10, restart: 5, ..Default::default() };
        let err = gmres(&op, Weights(&ones), &b, &mut x, &cfg).unwrap_err();
        assert!(matches!(err, Error::NotConverged { solver: "GMRES", .. }));
    }

    /// `I + W⁻¹M` with `M` antisymmetric, skew in the `W` inner product.
    fn shifted_skew(n: usize, weights: &[f64], scale: f64, seed: u64) -> Dense {
        let mut state = seed;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let m = scale * next();
                a[i * n + j] = m / weights[i];
                a[j * n + i] = -m / weights[j];
            }
            a[i * n + i] = 1.0;
        }
        Dense { n, a }
    }

    #[test]
    fn skew_minres_matches_exact_solution_and_gmres() {
        let n = 60;
        let weights: Vec<f64> = (0..n).map(|i| 0.5 + (i % 4) as f64).collect();
        for scale in [0.05, 0.5, 2.0] {
            let op = shifted_skew(n, &weights, scale, 7);
            let exact: Vec<f64> = (0..n).map(|i| (0.3 * i as f64).cos()).collect();
            let mut b = vec![0.0; n];
            op.apply(&exact, &mut b);
            let cfg = KrylovConfig { tol: 1e-13, max_iter: 2000, ..Default::default() };
            let mut x = vec![0.0; n];
            let stats = skew_minres(&op, Weights(&weights), &b, &mut x, &cfg).unwrap();
            assert!(stats.residual <= 1e-13);
            let mut y = vec![0.0; n];
            gmres(&op, Weights(&weights), &b, &mut y, &KrylovConfig { restart: n, ..cfg }).unwrap();
            for ((xi, yi), ei) in x.iter().zip(&y).zip(&exact) {
                assert!((xi - ei).abs() < 1e-10 && (yi - ei).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn skew_minres_takes_as_many_steps_as_full_gmres() {
        let n = 80;
        let weights = vec![1.0; n];
        let op = shifted_skew(n, &weights, 0.3, 11);
        let b: Vec<f64> = (0..n).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let cfg = KrylovConfig { tol: 1e-10, max_iter: 500, ..Default::default() };
        let a = skew_minres(&op, Weights(&weights), &b, &mut vec![0.0; n], &cfg).unwrap();
        let g = gmres(&op, Weights(&weights), &b, &mut vec![0.0; n], &KrylovConfig { restart: n, ..cfg }).unwrap();
        // same Krylov minimiser in exact arithmetic
        assert!(a.iterations.abs_diff(g.iterations) <= 1, "{a:?} {g:?}");
    }

    #[test]
    fn skew_minres_reports_non_convergence_and_zero_rhs() {
        let n = 40;
        let weights = vec![1.0; n];
        let op = shifted_skew(n, &weights, 5.0, 3);
        let b = vec![1.0; n];
        let cfg = KrylovConfig { tol: 1e-12, max_iter: 3, ..Default::default() };
        let err = skew_minres(&op, Weights(&weights), &b, &mut vec![0.0; n], &cfg).unwrap_err();
        assert!(matches!(err, Error::NotConverged { solver: "skew MINRES", .. }));
        let mut x = vec![1.0; n];
        skew_minres(&op, Weights(&weights), &vec![0.0; n], &mut x, &KrylovConfig::default()).unwrap();
        assert!(x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gmres_zero_rhs() {
        let op = Dense { n: 2, a: vec![1.0, 0.0, 0.0, 1.0] };
        let mut x = vec![3.0, 4.0];
        gmres(&op, Weights(&[1.0, 1.0]), &[0.0, 0.0], &mut x, &KrylovConfig::default()).unwrap();
        assert_eq!(x, vec![0.0, 0.0]);
    }

    #[test]
    fn cg_on_path_graph_laplacian() {
        let n = 25;
        let mut a = vec![0.0; n * n];
        for i in 0..n - 1 {
            a[i * n + i] += 1.0;
            a[(i + 1) * n + i + 1] += 1.0;
            a[i * n + i + 1] -= 1.0;
            a[(i + 1) * n + i] -= 1.0;
        }
        let op = Dense { n, a };
        let ones = vec![1.0; n];
        let w = Weights(&ones);
        let mut exact: Vec<f64> = (0..n).map(|i| (0.3 * i as f64).cos()).collect();
        w.project_zero_mean(&mut exact);
        let mut b = vec![0.0; n];
        op.apply(&exact, &mut b);
        // a constant shift of the right-hand side must not matter
        b.iter_mut().for_each(|v| *v += 5.0);
        let mut x = vec![0.0; n];
        cg_zero_mean(&op, w, &b, &mut x, &KrylovConfig { tol: 1e-13, max_iter: 200, restart: 0, ..Default::default() }).unwrap();
        for (xi, ei) in x.iter().zip(&exact) {
            assert!((xi - ei).abs() < 1e-10);
        }
        assert!(x.iter().sum::<f64>().abs() < 1e-12);
    }
}
