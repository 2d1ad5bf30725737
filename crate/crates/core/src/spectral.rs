//! Closed-form Hessian spectra, the prefactor `c_N`, its limit `V(μ)`, and
//! the assembled Eyring–Kramers mean-time predictions.
//!
//! All determinant work happens in log-space with compensated summation:
//! raw products of `N` eigenvalues overflow or underflow long before
//! `N = 1024`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::NeumaierSum;
use crate::potential::ChainParams;

/// Eigenvalues of `∇²F` at the saddle `O` (`lambda`) and at the minima
/// `I_±` (`nu`), indexed by Fourier mode `k = 0..N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub lambda: Vec<f64>,
    pub nu: Vec<f64>,
    /// Thresholds `γ_k^N = 1/(2 sin²(kπ/N))`; entry `k − 1` holds mode `k`.
    pub gamma_k: Vec<f64>,
}

impl Spectrum {
    pub fn n(&self) -> usize {
        self.lambda.len()
    }

    /// `Σ_k log|λ_k|`, compensated.
    pub fn logdet_saddle(&self) -> f64 {
        let mut acc = NeumaierSum::new();
        acc.extend(self.lambda.iter().map(|l| l.abs().ln()));
        acc.value()
    }

    /// `Σ_k log ν_k`, compensated.
    pub fn logdet_minimum(&self) -> f64 {
        let mut acc = NeumaierSum::new();
        acc.extend(self.nu.iter().map(|v| v.ln()));
        acc.value()
    }
}

pub fn spectrum(p: &ChainParams) -> Spectrum {
    let n = p.n;
    let mut lambda = Vec::with_capacity(n);
    let mut gamma_k = Vec::with_capacity(n.saturating_sub(1));
    lambda.push(-1.0);
    for k in 1..n {
        // fold onto k <= N/2 so that λ_k = λ_{N−k} holds bit for bit
        let m = k.min(n - k);
        let s = (PI * m as f64 / n as f64).sin();
        let s2 = s * s;
        gamma_k.push(1.0 / (2.0 * s2));
        lambda.push(-1.0 + 2.0 * p.gamma * s2);
    }
    let nu = lambda.iter().map(|l| l + 3.0).collect();
    Spectrum { lambda, nu, gamma_k }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefactorReport {
    /// `c_N` from the explicit product over half the modes.
    pub c_n_product: f64,
    /// `½·log|det ∇²F(O)|`
    pub half_logdet_o: f64,
    /// `½·log det ∇²F(I_−)`
    pub half_logdet_imin: f64,
    /// `√(|det ∇²F(O)| / det ∇²F(I_−))`
    pub det_ratio: f64,
    /// Partial product for `V(μ)`; `None` for non-canonical or single-site
    /// instances.
    pub v_mu: Option<f64>,
    /// `V(μ) ∈ [v_mu − v_mu_tail_bound, v_mu]`.
    pub v_mu_tail_bound: Option<f64>,
}

/// Relative tolerance used for the `V(μ)` entry of [`prefactor`].
pub const DEFAULT_V_MU_REL_TOL: f64 = 1e-7;

pub fn prefactor(p: &ChainParams) -> Result<PrefactorReport> {
    p.require_sync_regime()?;
    let n = p.n;
    let s = spectrum(p);

    let mut log_c = NeumaierSum::new();
    if n % 2 == 0 {
        log_c.add(0.5 * (-3.0 / (2.0 + 2.0 * p.gamma)).ln_1p());
    }
    for k in 1..=(n.saturating_sub(1) / 2) {
        log_c.add((-3.0 / (2.0 + p.gamma / s.gamma_k[k - 1])).ln_1p());
    }
    let half_logdet_o = 0.5 * s.logdet_saddle();
    let half_logdet_imin = 0.5 * s.logdet_minimum();

    let (v, tail) = if p.canonical && p.mu > 1.0 {
        let (v, t) = v_mu_cached(p.mu, DEFAULT_V_MU_REL_TOL)?;
        (Some(v), Some(t))
    } else {
        (None, None)
    };

    Ok(PrefactorReport {
        c_n_product: log_c.value().exp(),
        half_logdet_o,
        half_logdet_imin,
        det_ratio: (half_logdet_o - half_logdet_imin).exp(),
        v_mu: v,
        v_mu_tail_bound: tail,
    })
}

/// Truncated infinite product `V(μ) = Π_k (μk² − 1)/(μk² + 2)`.
///
/// Returns `(value, tail_bound)` with `V(μ) ∈ [value − tail_bound, value]`.
/// Every factor is below one, so the partial product bounds `V` from above;
/// the lower end uses `log(1 − v) ≥ −v/(1 − v)` and the integral comparison
/// `Σ_{k>K} 3/(μk² − 1) ≤ ∫_K^∞ 3/(μx² − 1) dx`.
pub fn v_mu(mu: f64, rel_tol: f64) -> Result<(f64, f64)> {
    if !(mu > 1.0) || !mu.is_finite() {
        return Err(Error::domain(format!("V(mu) requires finite mu > 1 (got {mu})")));
    }
    if !(rel_tol > 0.0) {
        return Err(Error::domain(format!("rel_tol must be positive (got {rel_tol})")));
    }
    let mut k_max = 10_000u64.max((3.0 / (mu * rel_tol)).ceil() as u64 + 1);
    let mut acc = NeumaierSum::new();
    let mut k_done = 0u64;
    loop {
        for k in (k_done + 1)..=k_max {
            let kk = (k as f64) * (k as f64);
            acc.add((-3.0 / (mu * kk + 2.0)).ln_1p());
        }
        k_done = k_max;
        let value = acc.value().exp();
        let tail_sum = tail_integral(mu, k_max as f64);
        let tail_bound = value * -(-tail_sum).exp_m1();
        if tail_bound <= rel_tol * value {
            return Ok((value, tail_bound));
        }
        k_max *= 2;
    }
}

// ∫_K^∞ 3/(μx² − 1) dx
fn tail_integral(mu: f64, k: f64) -> f64 {
    let a = mu.sqrt() * k;
    1.5 / mu.sqrt() * ((a + 1.0) / (a - 1.0)).ln()
}

fn v_mu_cached(mu: f64, rel_tol: f64) -> Result<(f64, f64)> {
    static CACHE: OnceLock<Mutex<HashMap<(u64, u64), (f64, f64)>>> = OnceLock::new();
    let key = (mu.to_bits(), rel_tol.to_bits());
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(hit) = cache.lock().expect("v_mu cache poisoned").get(&key) {
        return Ok(*hit);
    }
    let value = v_mu(mu, rel_tol)?;
    cache.lock().expect("v_mu cache poisoned").insert(key, value);
    Ok(value)
}

/// A positive quantity carried by its logarithm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogValue {
    pub log: f64,
}

impl LogValue {
    pub fn new(log: f64) -> Self {
        Self { log }
    }

    /// Linear value, or `None` when it overflows `f64`.
    pub fn linear(&self) -> Option<f64> {
        let v = self.log.exp();
        (v.is_finite() && v > 0.0).then_some(v)
    }
}

/// Both readings of the Eyring–Kramers constant.
///
/// `determinant_form` uses `2π·√(|det ∇²F(O)| / det ∇²F(I_−))`; `literal_cn`
/// uses `2π·c_N` with `c_N` from the explicit product. The two differ by the
/// exact factor `√2` (`c_N = √2 · det_ratio`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanTimePrediction {
    pub determinant_form: LogValue,
    pub literal_cn: LogValue,
}

/// Mean transition time for the unrescaled dynamics driven by `F`.
pub fn predict_mean_time_fixed_n(p: &ChainParams) -> Result<MeanTimePrediction> {
    let r = prefactor(p)?;
    let barrier = p.n as f64 / (4.0 * p.epsilon);
    let two_pi = (2.0 * PI).ln();
    Ok(MeanTimePrediction {
        determinant_form: LogValue::new(two_pi + (r.half_logdet_o - r.half_logdet_imin) + barrier),
        literal_cn: LogValue::new(two_pi + r.c_n_product.ln() + barrier),
    })
}

/// Mean transition time for the dynamics driven by `G = F/N`.
pub fn predict_mean_time_rescaled(p: &ChainParams) -> Result<MeanTimePrediction> {
    let r = prefactor(p)?;
    let barrier = 1.0 / (4.0 * p.epsilon);
    let base = (p.n as f64).ln() + (2.0 * PI).ln();
    Ok(MeanTimePrediction {
        determinant_form: LogValue::new(base + (r.half_logdet_o - r.half_logdet_imin) + barrier),
        literal_cn: LogValue::new(base + r.c_n_product.ln() + barrier),
    })
}

/// Log of the asymptotic mass `∫ h e^{−G/ε} dx ≈ N^{N/2} √(2πε)^N e^{1/4ε} / √det ∇²F(I_−)`.
pub fn mass_asymptotic(p: &ChainParams) -> Result<f64> {
    p.require_sync_regime()?;
    let s = spectrum(p);
    let n = p.n as f64;
    let mut acc = NeumaierSum::new();
    acc.add(0.5 * n * n.ln());
    acc.add(0.5 * n * (2.0 * PI * p.epsilon).ln());
    acc.add(1.0 / (4.0 * p.epsilon));
    acc.add(-0.5 * s.logdet_minimum());
    Ok(acc.value())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;

    fn sorted(mut v: Vec<f64>) -> Vec<f64> {
        v.sort_by(|a, b| a.total_cmp(b));
        v
    }

    fn dense_eigs(p: &ChainParams, x: f64) -> Vec<f64> {
        let h = p.hessian_f(&vec![x; p.n]).unwrap();
        sorted(SymmetricEigen::new(h).eigenvalues.iter().copied().collect())
    }

    #[test]
    fn n4_mu2_spectrum() {
        let p = ChainParams::new(4, 2.0, 0.1).unwrap();
        assert!((p.gamma - 2.0).abs() < 1e-14);
        let s = spectrum(&p);
        let expected = [-1.0, 1.0, 3.0, 1.0];
        for (a, b) in s.lambda.iter().zip(expected) {
            assert!((a - b).abs() < 1e-14);
        }
        assert_eq!(sorted(s.lambda.clone()).len(), 4);
        let dense = dense_eigs(&p, 0.0);
        for (a, b) in dense.iter().zip(sorted(s.lambda.clone())) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn n2_mu2_spectrum() {
        let p = ChainParams::new(2, 2.0, 0.1).unwrap();
        let s = spectrum(&p);
        assert!((s.lambda[0] + 1.0).abs() < 1e-15 && (s.lambda[1] - 1.0).abs() < 1e-14);
        assert!((s.nu[0] - 2.0).abs() < 1e-15 && (s.nu[1] - 4.0).abs() < 1e-14);
        let dense = dense_eigs(&p, -1.0);
        assert!((dense[0] - 2.0).abs() < 1e-12 && (dense[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn spectrum_symmetry_and_positivity() {
        for n in [2, 3, 10, 31, 64] {
            let p = ChainParams::new(n, 1.2, 0.1).unwrap();
            let s = spectrum(&p);
            assert_eq!(s.lambda[0], -1.0);
            for k in 1..n {
                assert_eq!(s.lambda[k], s.lambda[n - k]);
                assert!(s.lambda[k] > 0.0);
                assert_eq!(s.nu[k], s.lambda[k] + 3.0);
            }
        }
    }

    #[test]
    fn eigenvalue_sandwich() {
        for mu in [1.5, 2.0, 5.0] {
            for n in (2..=1024).step_by(7) {
                let p = ChainParams::new(n, mu, 0.1).unwrap();
                let s = spectrum(&p);
                let nf = n as f64;
                for k in 1..=(n / 2) {
                    let kk = (k * k) as f64;
                    let lo = mu * (1.0 - PI * PI / 12.0) * kk - 1.0;
                    let hi = mu * kk / (1.0 - PI * PI / (3.0 * nf * nf)) - 1.0;
                    let l = s.lambda[k];
                    assert!(lo <= l + 1e-9 * l.abs() && l <= hi + 1e-9 * hi.abs(), "n={n} k={k}");
                }
            }
        }
    }

    #[test]
    fn prefactor_hand_values() {
        let r2 = prefactor(&ChainParams::new(2, 2.0, 0.1).unwrap()).unwrap();
        assert!((r2.c_n_product - 0.5).abs() < 1e-14);
        let r3 = prefactor(&ChainParams::new(3, 2.0, 0.1).unwrap()).unwrap();
        assert!((r3.c_n_product - 0.25).abs() < 1e-14);
        assert!((r3.det_ratio - (1.0f64 / 32.0).sqrt()).abs() < 1e-14);
        assert!((r3.c_n_product / r3.det_ratio - 2f64.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn det_ratio_matches_dense_log_determinants() {
        let p = ChainParams::new(3, 2.0, 0.1).unwrap();
        let o: f64 = dense_eigs(&p, 0.0).iter().map(|l| l.abs().ln()).sum();
        let i: f64 = dense_eigs(&p, -1.0).iter().map(|l| l.ln()).sum();
        let r = prefactor(&p).unwrap();
        assert!((r.det_ratio - (0.5 * (o - i)).exp()).abs() < 1e-12);
    }

    #[test]
    fn sqrt_two_identity_across_n() {
        for n in 2..=512 {
            let r = prefactor(&ChainParams::new(n, 2.0, 0.1).unwrap()).unwrap();
            let rel = (r.c_n_product - 2f64.sqrt() * r.det_ratio).abs() / r.c_n_product;
            assert!(rel < 1e-10, "n={n}: {rel}");
        }
    }

    #[test]
    fn log_determinants_order_independent() {
        let p = ChainParams::new(257, 3.0, 0.1).unwrap();
        let s = spectrum(&p);
        let reversed = Spectrum {
            lambda: s.lambda.iter().rev().copied().collect(),
            nu: s.nu.iter().rev().copied().collect(),
            gamma_k: s.gamma_k.clone(),
        };
        assert!((s.logdet_saddle() - reversed.logdet_saddle()).abs() < 1e-12);
        assert!((s.logdet_minimum() - reversed.logdet_minimum()).abs() < 1e-12);
    }

    #[test]
    fn large_n_stays_finite() {
        let r = prefactor(&ChainParams::new(4096, 2.0, 0.1).unwrap()).unwrap();
        assert!(r.half_logdet_imin > 700.0, "raw determinant would overflow");
        assert!(r.det_ratio.is_finite() && r.det_ratio > 0.0);
        assert!(r.c_n_product > 0.0 && r.c_n_product < 1.0);
    }

    #[test]
    fn regime_error_outside_sync() {
        let p = ChainParams::with_gamma(4, 0.9, 0.1).unwrap();
        assert!(matches!(prefactor(&p), Err(Error::Regime { .. })));
    }

    // V(μ) = [sin(π/√μ)/(π/√μ)] / [sinh(π√(2/μ))/(π√(2/μ))] via the Euler
    // product formulas for sin and sinh.
    fn v_mu_closed_form(mu: f64) -> f64 {
        let x = PI / mu.sqrt();
        let y = PI * (2.0 / mu).sqrt();
        (x.sin() / x) / (y.sinh() / y)
    }

    #[test]
    fn v_mu_limits() {
        let (v, t) = v_mu(1e6, 1e-6).unwrap();
        assert!((1.0 - v).abs() < 5e-6);
        assert!((v - v_mu_closed_form(1e6)).abs() <= t + 1e-12);
        assert!(t <= 1e-6 * v);
        assert!(matches!(v_mu(1.0, 1e-6), Err(Error::Domain(_))));
        assert!(v_mu(0.5, 1e-6).is_err());
    }

    #[test]
    fn v_mu_two_against_long_partial_product() {
        // independent oracle: plain product to 1e5 and the same-order tail
        let mut prod = 1.0f64;
        for k in 1..=100_000u64 {
            let kk = (k * k) as f64;
            prod *= (2.0 * kk - 1.0) / (2.0 * kk + 2.0);
        }
        // tail Σ_{k>1e5} 3/(2k²) ≈ 1.5e−5
        let oracle_hi = prod;
        let oracle_lo = prod * (-1.5e-5f64 * 1.0001).exp();
        let (v, t) = v_mu(2.0, 1e-7).unwrap();
        assert!(v - t <= oracle_hi + 1e-12 && v >= oracle_lo - 1e-12);
        let exact = v_mu_closed_form(2.0);
        assert!((exact - 0.097_437_484_935_325_3).abs() < 1e-15);
        assert!(v - t <= exact && exact <= v, "V(2) = {v} ± {t}");
        for mu in [1.5, 3.0, 5.0, 40.0] {
            let (v, t) = v_mu(mu, 1e-6).unwrap();
            let exact = v_mu_closed_form(mu);
            assert!(v - t <= exact + 1e-14 && exact <= v + 1e-14, "mu={mu}");
        }
    }

    #[test]
    fn predictions_n3() {
        let p = ChainParams::new(3, 2.0, 0.05).unwrap();
        let r = predict_mean_time_rescaled(&p).unwrap();
        let det = r.determinant_form.linear().unwrap();
        let lit = r.literal_cn.linear().unwrap();
        let e5 = 5f64.exp();
        assert!((det - 3.0 * 2.0 * PI * (1.0f64 / 32.0).sqrt() * e5).abs() < 1e-9 * det);
        assert!((det - 494.5).abs() < 0.1);
        assert!((lit - 699.3).abs() < 0.1);
        assert!((lit / det - 2f64.sqrt()).abs() < 1e-12);

        let fixed = predict_mean_time_fixed_n(&p).unwrap();
        let expected = (2.0 * PI * (1.0f64 / 32.0).sqrt()).ln() + 3.0 / (4.0 * 0.05);
        assert!((fixed.determinant_form.log - expected).abs() < 1e-12);
    }

    #[test]
    fn single_site_reference_prefactor() {
        let p = ChainParams::single_site(0.1).unwrap();
        let r = predict_mean_time_fixed_n(&p).unwrap();
        let pref = (r.determinant_form.log - 1.0 / (4.0 * 0.1)).exp();
        assert!((pref - 2.0 * PI * 0.5f64.sqrt()).abs() < 1e-12);
        assert!((pref - 4.44288).abs() < 1e-5);
    }

    #[test]
    fn fixed_n_log_time_dominated_by_barrier() {
        let n = 5;
        for eps in [1e-2, 1e-3, 1e-4] {
            let p = ChainParams::new(n, 2.0, eps).unwrap();
            let l = predict_mean_time_fixed_n(&p).unwrap().determinant_form.log;
            assert!((l * eps - n as f64 / 4.0).abs() < 5.0 * eps);
        }
        let huge = predict_mean_time_fixed_n(&ChainParams::new(64, 2.0, 1e-3).unwrap()).unwrap();
        assert!(huge.determinant_form.linear().is_none(), "overflow is flagged");
    }

    #[test]
    fn mass_n2_hand_value() {
        let p = ChainParams::new(2, 2.0, 0.1).unwrap();
        let expected = 2f64.ln() + (2.0 * PI * 0.1).ln() + 2.5 - 0.5 * 8f64.ln();
        assert!((mass_asymptotic(&p).unwrap() - expected).abs() < 1e-13);
    }

    #[test]
    fn mass_dominated_by_barrier_as_eps_shrinks() {
        let p = ChainParams::new(4, 2.0, 0.02).unwrap();
        let half = p.with_epsilon(0.01).unwrap();
        let d = mass_asymptotic(&half).unwrap() - mass_asymptotic(&p).unwrap();
        let barrier = 1.0 / (4.0 * 0.01) - 1.0 / (4.0 * 0.02);
        assert!((d - barrier).abs() < 0.2 * barrier);
    }
}
