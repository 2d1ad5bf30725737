//! Capacity `cap(B_−, B_+)` of the balls of radius `ρ√N` around `I_±`:
//! asymptotic value, and numeric upper/lower bounds obtained by evaluating
//! the Dirichlet form on explicit test functions.
//!
//! Both bounds are written in the scaled Fourier coordinates `z` (see
//! [`crate::fourier`]). The transverse modes `z_⊥` are integrated against
//! their Gaussian weight `exp(−½ Σ κ_j s_j²/ε)`, where `s` is the real
//! storage of `z_⊥` and `κ_j = λ_k` for self-conjugate modes and `2λ_k` for
//! each real/imaginary component of a conjugate pair. The coordinate change
//! contributes `dx = N^{N/2} 2^P ds` with `P` the number of pairs.
//!
//! * Upper bound: `h⁺(z) = f(z_0)` with the Gaussian profile [`f_profile`].
//!   This is admissible on all of `R^N` once `δ + ρ < 1`.
//! * Lower bound: restrict the Dirichlet form to the corridor
//!   `Ĉ_δ = {|z_0| < 1 − ρ, |z_k| ≤ δ r_k/√λ_k}` and keep only the
//!   `∂/∂z_0` part of the gradient. The resulting one-dimensional problems
//!   are solved exactly for each `z_⊥`.
//!
//! For `N ≤ 4` the transverse integral uses tensor quadrature, otherwise
//! Monte Carlo with inverse-CDF sampling. All values are logarithms.

use std::f64::consts::PI;

use rand::distributions::Open01;
use rand::Rng;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erf, erf_inv};

use crate::error::{Error, Result};
use crate::fourier::{x_of_z, ModeVector, NeighborhoodSpec};
use crate::numerics::quad::{gauss_legendre, integrate_with_breaks, Tolerance};
use crate::numerics::neumaier_sum;
use crate::potential::ChainParams;
use crate::rng::{stream_rng, Domain};
use crate::spectral::spectrum;

/// `log[N^{N/2−1} ε (2πε)^{(N−2)/2} / √|det ∇²F(O)|]`.
pub fn capacity_asymptotic(p: &ChainParams) -> Result<f64> {
    p.require_sync_regime()?;
    let n = p.n as f64;
    let eps = p.epsilon;
    let half_logdet_o = 0.5 * spectrum(p).logdet_saddle();
    Ok((0.5 * n - 1.0) * n.ln() + eps.ln() + 0.5 * (n - 2.0) * (2.0 * PI * eps).ln() - half_logdet_o)
}

/// Profile `f(z_0) = ∫_{z_0}^{δ} e^{−t²/2ε} dt / ∫_{−δ}^{δ} e^{−t²/2ε} dt`,
/// equal to one for `z_0 ≤ −δ` and zero for `z_0 ≥ δ`.
pub fn f_profile(z0: f64, delta: f64, epsilon: f64) -> f64 {
    if z0 <= -delta {
        return 1.0;
    }
    if z0 >= delta {
        return 0.0;
    }
    let scale = (2.0 * epsilon).sqrt();
    let full = erf(delta / scale);
    0.5 * (full - erf(z0 / scale)) / full
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacityBudget {
    /// Monte Carlo sample count.
    pub samples: usize,
    pub seed: u64,
    /// Largest acceptable relative standard error (or relative quadrature
    /// error estimate for the tensor path).
    pub max_rel_se: f64,
    /// Gauss–Legendre nodes per `2σ` panel on the tensor path.
    pub tensor_nodes: usize,
    /// Use Monte Carlo even when tensor quadrature is available.
    pub force_monte_carlo: bool,
}

impl Default for CapacityBudget {
    fn default() -> Self {
        Self { samples: 20_000, seed: 0, max_rel_se: 0.05, tensor_nodes: 10, force_monte_carlo: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Method {
    Exact,
    Tensor { nodes: usize },
    MonteCarlo { samples: usize, seed: u64 },
}

/// A logarithm with its standard error (relative error of the linear
/// value, which is the standard error of the log to first order).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogEstimate {
    pub log: f64,
    pub log_se: f64,
    pub method: Method,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityBracket {
    pub lower: LogEstimate,
    pub upper: LogEstimate,
    pub asymptotic: f64,
    pub params: ChainParams,
    pub spec: NeighborhoodSpec,
}

pub fn capacity_bracket(p: &ChainParams, spec: &NeighborhoodSpec, budget: &CapacityBudget) -> Result<CapacityBracket> {
    Ok(CapacityBracket {
        lower: capacity_lower(p, spec, budget)?,
        upper: capacity_upper(p, spec, budget)?,
        asymptotic: capacity_asymptotic(p)?,
        params: *p,
        spec: spec.clone(),
    })
}

/// Dirichlet form of the profile test function: an upper bound on the
/// capacity (in expectation, for the Monte Carlo path).
pub fn capacity_upper(p: &ChainParams, spec: &NeighborhoodSpec, budget: &CapacityBudget) -> Result<LogEstimate> {
    let setup = Setup::new(p, spec, budget, false)?;
    let eps = p.epsilon;
    let delta = spec.delta;
    let z_norm = (2.0 * PI * eps).sqrt() * erf(delta / (2.0 * eps).sqrt());
    let kernel = |m: &Moments| -> Result<f64> {
        let f = |z0: f64| (-(0.5 * z0 * z0 + m.quartic(z0)) / eps).exp();
        Ok(integrate_with_breaks(f, &[-delta, 0.0, delta], INNER_TOL)?.value)
    };
    let est = setup.expectation(kernel, Domain::CapacityUpper)?;
    Ok(LogEstimate { log: setup.log_front + est.log - 2.0 * z_norm.ln(), ..est })
}

/// Corridor lower bound.
pub fn capacity_lower(p: &ChainParams, spec: &NeighborhoodSpec, budget: &CapacityBudget) -> Result<LogEstimate> {
    let setup = Setup::new(p, spec, budget, true)?;
    let eps = p.epsilon;
    let edge = 1.0 - spec.rho;
    let kernel = |m: &Moments| -> Result<f64> {
        let exponent = |z0: f64| (m.quartic(z0) - 0.5 * z0 * z0) / eps;
        // factor out the peak so that far transverse points cannot overflow
        let shift = (0..=64).map(|i| exponent(-edge + edge * i as f64 / 32.0)).fold(f64::NEG_INFINITY, f64::max);
        let h = integrate_with_breaks(|z0| (exponent(z0) - shift).exp(), &[-edge, 0.0, edge], INNER_TOL)?;
        Ok((-shift).exp() / h.value)
    };
    let est = setup.expectation(kernel, Domain::CapacityLower)?;
    Ok(LogEstimate { log: setup.log_front + est.log, ..est })
}

const INNER_TOL: Tolerance = Tolerance { abs: 0.0, rel: 1e-11, max_intervals: 500 };

/// Transverse moments `S_m = Σ_j a_j^m` of `a = x(N(0, z_⊥))`.
struct Moments {
    n: f64,
    s2: f64,
    s3: f64,
    s4: f64,
}

impl Moments {
    fn of(z_perp: &ModeVector) -> Self {
        let a = x_of_z(z_perp);
        let (mut s2, mut s3, mut s4) = (0.0, 0.0, 0.0);
        for v in a.iter() {
            let v2 = v * v;
            s2 += v2;
            s3 += v2 * v;
            s4 += v2 * v2;
        }
        Self { n: a.len() as f64, s2, s3, s4 }
    }

    /// `(1/4N) Σ_j (z_0 + a_j)⁴`, using `Σ_j a_j = 0`.
    fn quartic(&self, z0: f64) -> f64 {
        let z2 = z0 * z0;
        (self.n * z2 * z2 + 6.0 * z2 * self.s2 + 4.0 * z0 * self.s3 + self.s4) / (4.0 * self.n)
    }
}

#[derive(Debug, Clone, Copy)]
struct TransverseMode {
    /// Storage index of the (first) real component.
    index: usize,
    paired: bool,
    /// Standard deviation of each real component under the Gaussian weight.
    sigma: f64,
    /// Box half-width, or `UNTRUNCATED_SIGMAS·σ` without a box.
    reach: f64,
    /// Probability mass of the box (1 when untruncated).
    mass: f64,
}

// Gaussian mass beyond 12σ is below 1e-32.
const UNTRUNCATED_SIGMAS: f64 = 12.0;

impl TransverseMode {
    /// Composite Gauss–Legendre rule `(r, θ, weight)` for the normalised
    /// (truncated) Gaussian: panels of width about `2σ`, `m` nodes each;
    /// pairs use polar coordinates with `4m + 1` equispaced angles.
    fn rule(&self, m: usize) -> Vec<(f64, f64, f64)> {
        let gl = gauss_legendre(m);
        let s2 = self.sigma * self.sigma;
        let (lo, hi) = if self.paired { (0.0, self.reach) } else { (-self.reach, self.reach) };
        let panels = ((hi - lo) / (2.0 * self.sigma)).ceil().max(1.0) as usize;
        let width = (hi - lo) / panels as f64;
        let mut radial = Vec::with_capacity(panels * m);
        for j in 0..panels {
            let a = lo + j as f64 * width;
            let rule = gl.mapped(a, a + width);
            for (r, w) in rule.nodes.iter().zip(&rule.weights) {
                let density = if self.paired {
                    r * (-0.5 * r * r / s2).exp() / s2
                } else {
                    (-0.5 * r * r / s2).exp() / ((2.0 * PI).sqrt() * self.sigma)
                };
                radial.push((*r, w * density / self.mass));
            }
        }
        if !self.paired {
            return radial.into_iter().map(|(r, w)| (r, 0.0, w)).collect();
        }
        // odd, so that no harmonic of the N-fold symmetric integrand aliases onto the mean
        let n_theta = 4 * m + 1;
        let mut out = Vec::with_capacity(radial.len() * n_theta);
        for (r, w) in radial {
            for j in 0..n_theta {
                let theta = 2.0 * PI * (j as f64 + 0.5) / n_theta as f64;
                out.push((r, theta, w / n_theta as f64));
            }
        }
        out
    }

    /// Maps `v ∈ (−1, 1)` (self-conjugate) or `v ∈ (0, 1)` (pairs, radial)
    /// to a coordinate distributed as the (truncated) Gaussian.
    fn radial(&self, v: f64) -> f64 {
        if self.paired {
            self.sigma * (-2.0 * (-v * self.mass).ln_1p()).sqrt()
        } else {
            self.sigma * std::f64::consts::SQRT_2 * erf_inv(v * self.mass)
        }
    }

    fn place(&self, z: &mut ModeVector, v: f64, theta: f64) {
        self.set(z, self.radial(v), theta);
    }

    fn set(&self, z: &mut ModeVector, r: f64, theta: f64) {
        let data = z.storage_mut();
        if self.paired {
            let c = Complex64::from_polar(r, theta);
            data[self.index] = c.re;
            data[self.index + 1] = c.im;
        } else {
            data[self.index] = r;
        }
    }
}

struct Setup {
    n: usize,
    modes: Vec<TransverseMode>,
    /// Log of every factor outside the transverse expectation.
    log_front: f64,
    budget: CapacityBudget,
}

impl Setup {
    fn new(p: &ChainParams, spec: &NeighborhoodSpec, budget: &CapacityBudget, truncate: bool) -> Result<Self> {
        p.require_sync_regime()?;
        if spec.n() != p.n {
            return Err(Error::DimensionMismatch { expected: p.n, got: spec.n() });
        }
        spec.check_geometry()?;
        if budget.samples < 2 || budget.tensor_nodes < 2 || !(budget.max_rel_se > 0.0) {
            return Err(Error::domain("capacity budget must have >= 2 samples, >= 2 nodes and max_rel_se > 0"));
        }
        let n = p.n;
        let eps = p.epsilon;
        let s = spectrum(p);
        let mut modes = Vec::new();
        let mut log_front = (0.5 * n as f64 - 1.0) * (n as f64).ln() + eps.ln();
        for k in 1..=n / 2 {
            let paired = 2 * k != n;
            let kappa = if paired { 2.0 * s.lambda[k] } else { s.lambda[k] };
            let sigma = (eps / kappa).sqrt();
            let t = spec.half_width(k, &s);
            let mass = match (truncate, paired) {
                (false, _) => 1.0,
                (true, true) => -(-0.5 * (t / sigma).powi(2)).exp_m1(),
                (true, false) => erf(t / (sigma * std::f64::consts::SQRT_2)),
            };
            let components = if paired { 2.0 } else { 1.0 };
            // Gaussian normalisation, box mass and the 2^P Jacobian
            log_front += components * (2.0 * PI).sqrt().ln() + components * sigma.ln() + mass.ln();
            if paired {
                log_front += std::f64::consts::LN_2;
            }
            let reach = if truncate { t } else { UNTRUNCATED_SIGMAS * sigma };
            modes.push(TransverseMode { index: if paired { 2 * k - 1 } else { n - 1 }, paired, sigma, reach, mass });
        }
        Ok(Self { n, modes, log_front, budget: *budget })
    }

    /// `log E[kernel(moments(z_⊥))]` under the (truncated) Gaussian.
    fn expectation<K>(&self, kernel: K, domain: Domain) -> Result<LogEstimate>
    where
        K: Fn(&Moments) -> Result<f64> + Sync,
    {
        if self.modes.is_empty() {
            let v = kernel(&Moments::of(&ModeVector::zeros(self.n)))?;
            return Ok(LogEstimate { log: v.ln(), log_se: 0.0, method: Method::Exact });
        }
        if self.n <= 4 && !self.budget.force_monte_carlo {
            self.tensor(&kernel)
        } else {
            self.monte_carlo(&kernel, domain)
        }
    }

    fn tensor<K>(&self, kernel: &K) -> Result<LogEstimate>
    where
        K: Fn(&Moments) -> Result<f64> + Sync,
    {
        let m = self.budget.tensor_nodes;
        let fine = self.tensor_at(kernel, m)?;
        let coarse = self.tensor_at(kernel, (2 * m).div_ceil(3).max(2))?;
        let rel_err = ((fine - coarse) / fine).abs();
        if rel_err > self.budget.max_rel_se {
            return Err(Error::Quadrature { value: fine, error: rel_err * fine });
        }
        Ok(LogEstimate { log: fine.ln(), log_se: rel_err, method: Method::Tensor { nodes: m } })
    }

    fn tensor_at<K>(&self, kernel: &K, m: usize) -> Result<f64>
    where
        K: Fn(&Moments) -> Result<f64> + Sync,
    {
        let rules: Vec<Vec<(f64, f64, f64)>> = self.modes.iter().map(|mode| mode.rule(m)).collect();
        let total: usize = rules.iter().map(Vec::len).product();
        let terms: Vec<f64> = (0..total)
            .into_par_iter()
            .map(|flat| {
                let mut z = ModeVector::zeros(self.n);
                let mut rem = flat;
                let mut weight = 1.0;
                for (mode, rule) in self.modes.iter().zip(&rules) {
                    let (r, theta, w) = rule[rem % rule.len()];
                    rem /= rule.len();
                    mode.set(&mut z, r, theta);
                    weight *= w;
                }
                kernel(&Moments::of(&z)).map(|k| weight * k)
            })
            .collect::<Result<_>>()?;
        Ok(neumaier_sum(terms))
    }

    fn monte_carlo<K>(&self, kernel: &K, domain: Domain) -> Result<LogEstimate>
    where
        K: Fn(&Moments) -> Result<f64> + Sync,
    {
        let samples = self.budget.samples;
        let seed = self.budget.seed;
        let values: Vec<f64> = (0..samples)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream_rng(seed, domain, i as u64);
                let mut z = ModeVector::zeros(self.n);
                for mode in &self.modes {
                    let u: f64 = rng.sample(Open01);
                    let v = if mode.paired { u } else { 2.0 * u - 1.0 };
                    let theta = if mode.paired { 2.0 * PI * rng.gen::<f64>() } else { 0.0 };
                    mode.place(&mut z, v, theta);
                }
                kernel(&Moments::of(&z))
            })
            .collect::<Result<_>>()?;
        let n = samples as f64;
        let mean = neumaier_sum(values.iter().copied()) / n;
        let var = neumaier_sum(values.iter().map(|v| (v - mean).powi(2))) / (n - 1.0);
        let rel_se = (var / n).sqrt() / mean;
        if !(rel_se <= self.budget.max_rel_se) {
            return Err(Error::StatisticalTolerance { rel_se, tol: self.budget.max_rel_se });
        }
        Ok(LogEstimate { log: mean.ln(), log_se: rel_se, method: Method::MonteCarlo { samples, seed } })
    }
}
