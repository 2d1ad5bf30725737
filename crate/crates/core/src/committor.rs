//! Reference capacities for one and two sites from a finite-volume
//! discretisation of `∇·(e^{−G/ε}∇h) = 0` with `h = 1` on `B_−`, `h = 0` on
//! `B_+` and reflecting walls on the box `[−L, L]^N`.
//!
//! Edge conductances are `e^{−G/ε}` at edge midpoints, so the discrete
//! energy `ε Σ_edges w (Δh)² h^{N−2}` is a consistent approximation of the
//! capacity. Weights are shifted by the minimum `G = −1/4` to stay in range.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::quad::{integrate_with_breaks, Tolerance};
use crate::numerics::NeumaierSum;
use crate::potential::ChainParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Half-width `L` of the box.
    pub half_width: f64,
    pub step: f64,
}

impl GridSpec {
    pub fn new(half_width: f64, step: f64) -> Result<Self> {
        if !(half_width >= 2.0) {
            return Err(Error::domain(format!("box half-width must be >= 2 (got {half_width})")));
        }
        if !(step > 0.0 && step < half_width) {
            return Err(Error::domain(format!("grid step must lie in (0, L) (got {step})")));
        }
        Ok(Self { half_width, step })
    }

    /// Defaults per dimension: step `1e-3` for one site, `0.02` for two.
    pub fn default_for(n: usize) -> Self {
        Self { half_width: 2.0, step: if n == 1 { 1e-3 } else { 0.02 } }
    }

    fn points(&self) -> (usize, f64) {
        let cells = (2.0 * self.half_width / self.step).round().max(1.0) as usize;
        (cells + 1, 2.0 * self.half_width / cells as f64)
    }
}

/// Exact one-site capacity `ε / ∫_{−1+ρ}^{1−ρ} e^{G(s)/ε} ds`, as a log.
pub fn capacity_exact_1d(epsilon: f64, rho: f64) -> Result<f64> {
    if !(epsilon > 0.0) || !(rho > 0.0 && rho < 1.0) {
        return Err(Error::domain("need epsilon > 0 and 0 < rho < 1"));
    }
    let edge = 1.0 - rho;
    let g = |s: f64| s.powi(4) / 4.0 - s * s / 2.0;
    let i = integrate_with_breaks(|s| (g(s) / epsilon).exp(), &[-edge, 0.0, edge], Tolerance::relative(1e-12))?;
    Ok(epsilon.ln() - i.value.ln())
}

/// Log capacity of `B_± = {‖x − I_±‖ ≤ ρ√N}` from the grid problem.
pub fn capacity_oracle_small_n(p: &ChainParams, rho: f64, grid: &GridSpec) -> Result<f64> {
    let n = p.n;
    if n > 2 {
        return Err(Error::domain(format!("grid oracle supports N in {{1, 2}} (got {n})")));
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::domain(format!("rho must lie in (0, 1) (got {rho})")));
    }
    let (m, h) = grid.points();
    let lo = -grid.half_width;
    let eps = p.epsilon;
    let coord = |i: usize| lo + i as f64 * h;
    let weight = |x: &[f64]| (-(p.f_unchecked(x) / n as f64 + 0.25) / eps).max(-700.0).exp();
    let r2 = rho * rho * n as f64 * (1.0 + 1e-12);
    let ball = |x: &[f64], c: f64| x.iter().map(|v| (v - c).powi(2)).sum::<f64>() <= r2;
    // Dirichlet data: Some(1) in B_−, Some(0) in B_+
    let fixed = |x: &[f64]| {
        if ball(x, -1.0) {
            Some(1.0)
        } else if ball(x, 1.0) {
            Some(0.0)
        } else {
            None
        }
    };

    let mut energy = NeumaierSum::new();
    if n == 1 {
        let xs: Vec<f64> = (0..m).map(coord).collect();
        let w: Vec<f64> = (0..m - 1).map(|i| weight(&[0.5 * (xs[i] + xs[i + 1])])).collect();
        let bc: Vec<Option<f64>> = xs.iter().map(|&x| fixed(&[x])).collect();
        let u = solve_chain(&w, &bc);
        for i in 0..m - 1 {
            energy.add(w[i] * (u[i + 1] - u[i]).powi(2));
        }
        let e = energy.value() / h;
        return Ok((eps * e).ln() + 0.25 / eps);
    }

    let idx = |i: usize, j: usize| i * m + j;
    let mut bc = vec![None; m * m];
    for i in 0..m {
        for j in 0..m {
            bc[idx(i, j)] = fixed(&[coord(i), coord(j)]);
        }
    }
    // wx[i*m + j]: edge (i,j)-(i+1,j); wy: edge (i,j)-(i,j+1)
    let mut wx = vec![0.0; m * m];
    let mut wy = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            if i + 1 < m {
                wx[idx(i, j)] = weight(&[coord(i) + 0.5 * h, coord(j)]);
            }
            if j + 1 < m {
                wy[idx(i, j)] = weight(&[coord(i), coord(j) + 0.5 * h]);
            }
        }
    }
    let u = solve_grid(m, &wx, &wy, &bc)?;
    for i in 0..m {
        for j in 0..m {
            let k = idx(i, j);
            if i + 1 < m {
                energy.add(wx[k] * (u[idx(i + 1, j)] - u[k]).powi(2));
            }
            if j + 1 < m {
                energy.add(wy[k] * (u[idx(i, j + 1)] - u[k]).powi(2));
            }
        }
    }
    Ok((eps * energy.value()).ln() + 0.25 / eps)
}

/// Tridiagonal (Thomas) solve of the weighted path Laplacian with Dirichlet
/// nodes.
fn solve_chain(w: &[f64], bc: &[Option<f64>]) -> Vec<f64> {
    let m = bc.len();
    let (mut a, mut b, mut c, mut d) = (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    for i in 0..m {
        if let Some(v) = bc[i] {
            b[i] = 1.0;
            d[i] = v;
            continue;
        }
        if i > 0 {
            a[i] = -w[i - 1];
            b[i] += w[i - 1];
        }
        if i + 1 < m {
            c[i] = -w[i];
            b[i] += w[i];
        }
    }
    for i in 1..m {
        let f = a[i] / b[i - 1];
        b[i] -= f * c[i - 1];
        d[i] -= f * d[i - 1];
    }
    let mut u = vec![0.0; m];
    u[m - 1] = d[m - 1] / b[m - 1];
    for i in (0..m - 1).rev() {
        u[i] = (d[i] - c[i] * u[i + 1]) / b[i];
    }
    u
}

/// Jacobi-preconditioned conjugate gradients on the free nodes of the
/// weighted grid Laplacian.
fn solve_grid(m: usize, wx: &[f64], wy: &[f64], bc: &[Option<f64>]) -> Result<Vec<f64>> {
    let total = m * m;
    let neighbours = |k: usize| {
        let (i, j) = (k / m, k % m);
        let mut out = [(usize::MAX, 0.0); 4];
        if i + 1 < m {
            out[0] = (k + m, wx[k]);
        }
        if i > 0 {
            out[1] = (k - m, wx[k - m]);
        }
        if j + 1 < m {
            out[2] = (k + 1, wy[k]);
        }
        if j > 0 {
            out[3] = (k - 1, wy[k - 1]);
        }
        out
    };
    let free: Vec<usize> = (0..total).filter(|&k| bc[k].is_none()).collect();
    let mut slot = vec![usize::MAX; total];
    for (s, &k) in free.iter().enumerate() {
        slot[k] = s;
    }
    let nf = free.len();
    let mut diag = vec![0.0; nf];
    let mut rhs = vec![0.0; nf];
    for (s, &k) in free.iter().enumerate() {
        for (nb, w) in neighbours(k) {
            if nb == usize::MAX {
                continue;
            }
            diag[s] += w;
            if let Some(v) = bc[nb] {
                rhs[s] += w * v;
            }
        }
    }
    let apply = |x: &[f64], out: &mut [f64]| {
        for (s, &k) in free.iter().enumerate() {
            let mut acc = diag[s] * x[s];
            for (nb, w) in neighbours(k) {
                if nb != usize::MAX && slot[nb] != usize::MAX {
                    acc -= w * x[slot[nb]];
                }
            }
            out[s] = acc;
        }
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    let mut x: Vec<f64> = vec![0.5; nf];
    let mut r = vec![0.0; nf];
    apply(&x, &mut r);
    for s in 0..nf {
        r[s] = rhs[s] - r[s];
    }
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
    let mut pdir = z.clone();
    let mut ap = vec![0.0; nf];
    let mut rz = dot(&r, &z);
    // the preconditioned residual is scale free: it measures the local
    // imbalance of h relative to its neighbours
    let tol = 1e-11;
    let max_iter = 50 * m + 10_000;
    let mut resid = f64::INFINITY;
    for _ in 0..max_iter {
        resid = z.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if resid <= tol {
            let mut u = vec![0.0; total];
            for k in 0..total {
                u[k] = bc[k].unwrap_or_else(|| x[slot[k]]);
            }
            return Ok(u);
        }
        apply(&pdir, &mut ap);
        let alpha = rz / dot(&pdir, &ap);
        for s in 0..nf {
            x[s] += alpha * pdir[s];
            r[s] -= alpha * ap[s];
            z[s] = r[s] / diag[s];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for s in 0..nf {
            pdir[s] = z[s] + beta * pdir[s];
        }
    }
    Err(Error::Solver { iterations: max_iter, residual: resid })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_site_matches_exact() {
        let p = ChainParams::single_site(0.08).unwrap();
        let grid = GridSpec::new(2.0, 1e-3).unwrap();
        let oracle = capacity_oracle_small_n(&p, 0.2, &grid).unwrap();
        let exact = capacity_exact_1d(0.08, 0.2).unwrap();
        assert!((oracle - exact).abs() < 0.01, "{oracle} vs {exact}");
    }

    #[test]
    fn two_site_self_convergence() {
        let p = ChainParams::new(2, 2.0, 0.1).unwrap();
        let coarse = capacity_oracle_small_n(&p, 0.2, &GridSpec::new(2.0, 0.04).unwrap()).unwrap();
        let fine = capacity_oracle_small_n(&p, 0.2, &GridSpec::new(2.0, 0.02).unwrap()).unwrap();
        assert!(((fine - coarse) / fine).abs() < 0.005, "{coarse} vs {fine}");
        assert!((fine.exp() - 0.0772).abs() < 5e-4, "{}", fine.exp());
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(GridSpec::new(1.5, 0.1).is_err());
        let p = ChainParams::new(3, 2.0, 0.1).unwrap();
        assert!(capacity_oracle_small_n(&p, 0.2, &GridSpec::default_for(3)).is_err());
    }
}
