//! The coupled double-well chain on `Z/NZ`: potential, rescaled potential,
//! gradient, Hessian and the three stationary points of the
//! synchronization regime.
//!
//! ```text
//! F(x) = Σ_i (x_i⁴/4 − x_i²/2) + (γ/4) Σ_i (x_i − x_{i+1})²     (cyclic)
//! G(x) = F(x) / N
//! ```

use std::f64::consts::PI;
use std::ops::Deref;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coupling threshold `γ_1^N = 1 / (2 sin²(π/N))` of the synchronization
/// regime. Infinite for `n = 1`, where there is no coupling.
pub fn gamma_threshold(n: usize) -> f64 {
    if n <= 1 {
        return f64::INFINITY;
    }
    let s = (PI / n as f64).sin();
    1.0 / (2.0 * s * s)
}

/// Problem instance.
///
/// The canonical constructor derives `γ = μ·γ_1^N`. [`ChainParams::with_gamma`]
/// takes a raw coupling for exploration and marks the instance non-canonical.
/// A single uncoupled site (`n = 1`) is available as the 1D reference
/// problem via [`ChainParams::single_site`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainParams {
    pub n: usize,
    pub mu: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub canonical: bool,
}

impl ChainParams {
    pub fn new(n: usize, mu: f64, epsilon: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::domain(format!("n must be >= 2 (got {n}); use single_site for n = 1")));
        }
        check_epsilon(epsilon)?;
        if !mu.is_finite() {
            return Err(Error::domain(format!("mu must be finite (got {mu})")));
        }
        let threshold = gamma_threshold(n);
        let gamma = mu * threshold;
        if mu <= 1.0 {
            return Err(Error::Regime { n, gamma, threshold });
        }
        Ok(Self { n, mu, gamma, epsilon, canonical: true })
    }

    /// Raw-γ constructor; the instance may lie outside the synchronization
    /// regime, in which case regime-dependent operations return an error.
    pub fn with_gamma(n: usize, gamma: f64, epsilon: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::domain(format!("n must be >= 2 (got {n})")));
        }
        check_epsilon(epsilon)?;
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::domain(format!("gamma must be positive and finite (got {gamma})")));
        }
        Ok(Self { n, mu: gamma / gamma_threshold(n), gamma, epsilon, canonical: false })
    }

    /// One uncoupled double well, `G(x) = x⁴/4 − x²/2`.
    pub fn single_site(epsilon: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        Ok(Self { n: 1, mu: 0.0, gamma: 0.0, epsilon, canonical: true })
    }

    pub fn with_epsilon(self, epsilon: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        Ok(Self { epsilon, ..self })
    }

    pub fn threshold(&self) -> f64 {
        gamma_threshold(self.n)
    }

    pub fn in_sync_regime(&self) -> bool {
        self.n == 1 || self.gamma > self.threshold()
    }

    pub fn require_sync_regime(&self) -> Result<()> {
        if self.in_sync_regime() {
            Ok(())
        } else {
            Err(Error::Regime { n: self.n, gamma: self.gamma, threshold: self.threshold() })
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: x.len() });
        }
        Ok(())
    }

    pub fn eval_f(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.f_unchecked(x))
    }

    pub fn eval_g(&self, x: &[f64]) -> Result<f64> {
        Ok(self.eval_f(x)? / self.n as f64)
    }

    pub fn grad_f(&self, x: &[f64]) -> Result<StateVector> {
        self.check_dim(x)?;
        let mut g = vec![0.0; self.n];
        self.grad_f_into(x, &mut g);
        Ok(StateVector(g))
    }

    pub fn hessian_f(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_dim(x)?;
        let n = self.n;
        let half = 0.5 * self.gamma;
        let mut h = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            h[(i, i)] += 3.0 * x[i] * x[i] - 1.0;
            if n > 1 {
                // each cyclic bond (i, i+1) contributes γ/2 to both diagonals and
                // −γ/2 to the off-diagonal pair; for N = 2 the two bonds land on
                // the same entries and accumulate.
                let j = (i + 1) % n;
                h[(i, i)] += half;
                h[(j, j)] += half;
                h[(i, j)] -= half;
                h[(j, i)] -= half;
            }
        }
        Ok(h)
    }

    pub fn stationary_points(&self) -> Result<StationaryPoints> {
        self.require_sync_regime()?;
        Ok(StationaryPoints {
            minus: StateVector(vec![-1.0; self.n]),
            plus: StateVector(vec![1.0; self.n]),
            saddle: StateVector(vec![0.0; self.n]),
        })
    }

    pub(crate) fn f_unchecked(&self, x: &[f64]) -> f64 {
        let n = x.len();
        let mut site = 0.0;
        let mut bond = 0.0;
        for i in 0..n {
            let xi = x[i];
            let x2 = xi * xi;
            site += 0.25 * x2 * x2 - 0.5 * x2;
            let d = xi - x[(i + 1) % n];
            bond += d * d;
        }
        site + 0.25 * self.gamma * bond
    }

    /// `∇F` written into `out`; the Laplacian term is `(γ/2)(2x_i − x_{i−1} − x_{i+1})`.
    #[inline]
    pub(crate) fn grad_f_into(&self, x: &[f64], out: &mut [f64]) {
        let n = x.len();
        let half = 0.5 * self.gamma;
        if n == 1 {
            out[0] = x[0] * x[0] * x[0] - x[0];
            return;
        }
        for i in 0..n {
            let left = x[(i + n - 1) % n];
            let right = x[(i + 1) % n];
            let xi = x[i];
            out[i] = xi * xi * xi - xi + half * (2.0 * xi - left - right);
        }
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::domain(format!("epsilon must be positive and finite (got {epsilon})")));
    }
    Ok(())
}

/// Particle positions, one coordinate per lattice site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector(pub Vec<f64>);

impl StateVector {
    pub fn constant(n: usize, value: f64) -> Self {
        Self(vec![value; n])
    }
}

impl Deref for StateVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for StateVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationaryPoints {
    /// `I_− = −(1, …, 1)`
    pub minus: StateVector,
    /// `I_+ = (1, …, 1)`
    pub plus: StateVector,
    /// `O`, the 1-saddle
    pub saddle: StateVector,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(n: usize, mu: f64) -> ChainParams {
        ChainParams::new(n, mu, 0.1).unwrap()
    }

    #[test]
    fn threshold_values() {
        assert!((gamma_threshold(2) - 0.5).abs() < 1e-15);
        assert!((gamma_threshold(4) - 1.0).abs() < 1e-15);
        assert!((gamma_threshold(6) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn potential_at_stationary_points() {
        for n in [2, 3, 7, 32] {
            let p = params(n, 2.0);
            assert_eq!(p.eval_f(&vec![0.0; n]).unwrap(), 0.0);
            for s in [1.0, -1.0] {
                let v = p.eval_f(&vec![s; n]).unwrap();
                assert!((v + n as f64 / 4.0).abs() < 1e-14);
                assert!((p.eval_g(&vec![s; n]).unwrap() + 0.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn two_site_hand_value() {
        // γ = 1 for N = 2 needs μ = 2
        let p = params(2, 2.0);
        assert_eq!(p.gamma, 1.0);
        // site terms −1/2, cyclic coupling (1/4)(4 + 4) = 2
        assert!((p.eval_f(&[1.0, -1.0]).unwrap() - 1.5).abs() < 1e-15);
        assert!((p.eval_g(&[1.0, -1.0]).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let p = params(4, 2.0);
        assert!(matches!(p.eval_f(&[0.0; 3]), Err(Error::DimensionMismatch { expected: 4, got: 3 })));
        assert!(p.grad_f(&[0.0; 5]).is_err());
        assert!(p.hessian_f(&[0.0; 2]).is_err());
    }

    #[test]
    fn regime_enforced() {
        assert!(matches!(ChainParams::new(4, 0.5, 0.1), Err(Error::Regime { .. })));
        let raw = ChainParams::with_gamma(4, 0.5, 0.1).unwrap();
        assert!(!raw.canonical);
        assert!(matches!(raw.stationary_points(), Err(Error::Regime { .. })));
        assert!(ChainParams::new(1, 2.0, 0.1).is_err());
        assert!(ChainParams::new(3, 2.0, 0.0).is_err());
    }

    #[test]
    fn gradient_vanishes_at_stationary_points() {
        let p = params(3, 2.0);
        let sp = p.stationary_points().unwrap();
        assert_eq!(sp.plus.0, vec![1.0, 1.0, 1.0]);
        assert_eq!(sp.minus.0, vec![-1.0, -1.0, -1.0]);
        assert_eq!(sp.saddle.0, vec![0.0, 0.0, 0.0]);
        for x in [&sp.plus, &sp.minus, &sp.saddle] {
            let g = p.grad_f(x).unwrap();
            assert!(g.iter().all(|v| v.abs() < 1e-14));
        }
    }

    #[test]
    fn newton_refinement_keeps_stationary_points() {
        for n in [2, 3, 8] {
            let p = params(n, 2.0);
            let sp = p.stationary_points().unwrap();
            for x in [&sp.plus, &sp.minus, &sp.saddle] {
                let h = p.hessian_f(x).unwrap();
                let g = nalgebra::DVector::from_vec(p.grad_f(x).unwrap().0);
                let step = h.lu().solve(&g).unwrap();
                assert!(step.amax() <= 1e-12);
            }
        }
    }

    #[test]
    fn hessian_saddle_n4() {
        let p = ChainParams::with_gamma(4, 2.0, 0.1).unwrap();
        let h = p.hessian_f(&[0.0; 4]).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let d = (i as i32 - j as i32).rem_euclid(4);
                let expected = match d {
                    0 => 1.0,
                    1 | 3 => -1.0,
                    _ => 0.0,
                };
                assert_eq!(h[(i, j)], expected, "entry ({i},{j})");
            }
        }
    }

    #[test]
    fn hessian_two_sites_accumulates_both_bonds() {
        let p = params(2, 2.0); // γ = 1
        let h = p.hessian_f(&[0.0, 0.0]).unwrap();
        assert_eq!(h[(0, 1)], -1.0);
        assert_eq!(h[(0, 0)], 0.0);
    }

    #[test]
    fn hessian_shift_between_minima_and_saddle() {
        let p = params(6, 1.7);
        let ho = p.hessian_f(&[0.0; 6]).unwrap();
        let hi = p.hessian_f(&[-1.0; 6]).unwrap();
        let diff = hi - ho - DMatrix::<f64>::identity(6, 6) * 3.0;
        assert!(diff.amax() < 1e-14);
    }

    #[test]
    fn saddle_hessian_acts_diagonally_on_fourier_modes() {
        for n in [5, 8] {
            let p = params(n, 2.0);
            let h = p.hessian_f(&vec![0.0; n]).unwrap();
            for k in 0..n {
                let lambda = -1.0 + 2.0 * p.gamma * (PI * k as f64 / n as f64).sin().powi(2);
                for trig in [f64::cos, f64::sin] {
                    let v = nalgebra::DVector::from_iterator(
                        n,
                        (0..n).map(|j| trig(2.0 * PI * (j * k) as f64 / n as f64)),
                    );
                    let r = &h * &v - &v * lambda;
                    assert!(r.amax() < 1e-10, "n={n} k={k}");
                }
            }
        }
    }

    fn random_point(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = 1e-5;
        for n in [2, 4, 8, 32] {
            let p = params(n, 2.0);
            for _ in 0..25 {
                let x = random_point(&mut rng, n, 1.5);
                let g = p.grad_f(&x).unwrap();
                let mut fd = vec![0.0; n];
                for i in 0..n {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[i] += h;
                    xm[i] -= h;
                    fd[i] = (p.eval_f(&xp).unwrap() - p.eval_f(&xm).unwrap()) / (2.0 * h);
                }
                let num: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let den: f64 = g.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-3);
                assert!(num / den < 1e-6, "n={n}: rel err {}", num / den);
            }
        }
    }

    #[test]
    fn hessian_matches_differences_of_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-5;
        for _ in 0..20 {
            let n = 6;
            let p = params(n, 2.5);
            let x = random_point(&mut rng, n, 1.5);
            let hess = p.hessian_f(&x).unwrap();
            for j in 0..n {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                let gp = p.grad_f(&xp).unwrap();
                let gm = p.grad_f(&xm).unwrap();
                for i in 0..n {
                    let fd = (gp[i] - gm[i]) / (2.0 * h);
                    assert!((fd - hess[(i, j)]).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn quartic_growth_lower_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..10_000 {
            let n = [2, 3, 8, 17][i % 4];
            let p = params(n, 1.5);
            let x = random_point(&mut rng, n, 3.0);
            let site: f64 = x.iter().map(|v| 0.25 * v.powi(4) - 0.5 * v * v).sum();
            assert!(p.eval_f(&x).unwrap() >= site - 1e-12);
        }
    }

    proptest! {
        #[test]
        fn rescaling_is_exact(x in proptest::collection::vec(-3.0f64..3.0, 2..40)) {
            let p = ChainParams::new(x.len(), 2.0, 0.1).unwrap();
            let f = p.eval_f(&x).unwrap();
            let g = p.eval_g(&x).unwrap();
            prop_assert!((f / x.len() as f64 - g).abs() <= 1e-15 * g.abs().max(1e-300));
        }

        #[test]
        fn shift_and_reflection_invariance(x in proptest::collection::vec(-3.0f64..3.0, 2..40), shift in 0usize..40) {
            let n = x.len();
            let p = ChainParams::new(n, 3.0, 0.1).unwrap();
            let f = p.eval_f(&x).unwrap();
            let shifted: Vec<f64> = (0..n).map(|i| x[(i + shift) % n]).collect();
            let reflected: Vec<f64> = x.iter().map(|v| -v).collect();
            prop_assert!((p.eval_f(&shifted).unwrap() - f).abs() <= 1e-12 * f.abs().max(1.0));
            prop_assert_eq!(p.eval_f(&reflected).unwrap(), f);
        }
    }
}
