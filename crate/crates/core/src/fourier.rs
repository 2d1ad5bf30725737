//! Fourier coordinates of the ring, weighted norms, and the neighbourhood
//! geometry around the saddle.
//!
//! Conventions: `x̂_j = Σ_k ω^{−jk} x_k` with `ω = e^{2πi/N}`, and the scaled
//! coordinates `z = x̂/N`, in which `I_± = ±(1, 0, …, 0)` and
//! `G(x) = G̃(z) = ½ Σ_k λ_k |z_k|² + (1/4N) ‖x‖_4⁴`.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::neumaier_sum;
use crate::potential::{ChainParams, StateVector};
use crate::spectral::{spectrum, Spectrum};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

/// A Hermitian-symmetric complex vector (`z_k = conj(z_{N−k})`) stored as
/// `N` reals: `z_0`, then `(Re z_k, Im z_k)` for `k = 1..=⌊(N−1)/2⌋`, then
/// `z_{N/2}` when `N` is even.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeVector {
    n: usize,
    data: Vec<f64>,
}

impl ModeVector {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n] }
    }

    pub fn from_storage(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: data.len() });
        }
        Ok(Self { n, data })
    }

    /// Builds the storage from a full complex vector, rejecting inputs whose
    /// Hermitian residue exceeds `1e-12` relative to their largest entry.
    pub fn from_complex(values: &[Complex64]) -> Result<Self> {
        let n = values.len();
        let scale = values.iter().map(|c| c.norm()).fold(1.0, f64::max);
        let mut residue = 0.0f64;
        for k in 0..n {
            let partner = values[(n - k) % n].conj();
            residue = residue.max((values[k] - partner).norm());
        }
        if residue > 1e-12 * scale {
            return Err(Error::Symmetry { residue });
        }
        let mut out = Self::zeros(n);
        out.data[0] = values[0].re;
        for k in 1..=out.pairs() {
            out.data[2 * k - 1] = values[k].re;
            out.data[2 * k] = values[k].im;
        }
        if n % 2 == 0 && n > 0 {
            out.data[n - 1] = values[n / 2].re;
        }
        Ok(out)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of conjugate pairs `⌊(N−1)/2⌋`.
    pub fn pairs(&self) -> usize {
        self.n.saturating_sub(1) / 2
    }

    pub fn storage(&self) -> &[f64] {
        &self.data
    }

    pub fn storage_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Mode `k ∈ 0..N`, with the conjugate filled in for `k > N/2`.
    pub fn get(&self, k: usize) -> Complex64 {
        assert!(k < self.n, "mode {k} out of range for N = {}", self.n);
        let p = self.pairs();
        if k == 0 {
            Complex64::new(self.data[0], 0.0)
        } else if k <= p {
            Complex64::new(self.data[2 * k - 1], self.data[2 * k])
        } else if 2 * k == self.n {
            Complex64::new(self.data[self.n - 1], 0.0)
        } else {
            self.get(self.n - k).conj()
        }
    }

    /// Sets mode `k` (and implicitly its conjugate partner). Self-conjugate
    /// modes only accept real values.
    pub fn set(&mut self, k: usize, value: Complex64) -> Result<()> {
        assert!(k < self.n, "mode {k} out of range for N = {}", self.n);
        let p = self.pairs();
        if k == 0 || 2 * k == self.n {
            if value.im != 0.0 {
                return Err(Error::Symmetry { residue: value.im.abs() });
            }
            let idx = if k == 0 { 0 } else { self.n - 1 };
            self.data[idx] = value.re;
        } else if k <= p {
            self.data[2 * k - 1] = value.re;
            self.data[2 * k] = value.im;
        } else {
            return self.set(self.n - k, value.conj());
        }
        Ok(())
    }

    pub fn to_complex(&self) -> Vec<Complex64> {
        (0..self.n).map(|k| self.get(k)).collect()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { n: self.n, data: self.data.iter().map(|v| v * factor).collect() }
    }

    /// `|z_k|²`
    pub fn mode_norm_sqr(&self, k: usize) -> f64 {
        self.get(k).norm_sqr()
    }

    /// `Σ_{k=1}^{N−1} |z_k|²`, each conjugate pair counted twice.
    pub fn perp_norm_sqr(&self) -> f64 {
        let p = self.pairs();
        let mut acc = 2.0 * self.data[1..=2 * p].iter().map(|v| v * v).sum::<f64>();
        if self.n % 2 == 0 && self.n > 1 {
            acc += self.data[self.n - 1].powi(2);
        }
        acc
    }
}

/// `x̂_j = Σ_k ω^{−jk} x_k`.
pub fn to_fourier(x: &[f64]) -> ModeVector {
    let n = x.len();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    if n > 0 {
        plan(n, false).process(&mut buf);
    }
    let mut out = ModeVector::zeros(n);
    if n == 0 {
        return out;
    }
    out.data[0] = buf[0].re;
    for k in 1..=out.pairs() {
        out.data[2 * k - 1] = buf[k].re;
        out.data[2 * k] = buf[k].im;
    }
    if n % 2 == 0 {
        out.data[n - 1] = buf[n / 2].re;
    }
    out
}

/// `Σ_j ω^{jk} ẑ_j` without the `1/N` normalisation.
fn synthesize(zhat: &ModeVector) -> Vec<f64> {
    let n = zhat.n;
    if n == 0 {
        return Vec::new();
    }
    let mut buf = zhat.to_complex();
    plan(n, true).process(&mut buf);
    buf.into_iter().map(|c| c.re).collect()
}

/// `x_k = (1/N) Σ_j ω^{jk} x̂_j`.
pub fn from_fourier(zhat: &ModeVector) -> StateVector {
    let inv = 1.0 / zhat.n as f64;
    StateVector(synthesize(zhat).into_iter().map(|v| v * inv).collect())
}

/// Inverse transform of an arbitrary complex vector. The result must be real:
/// an imaginary residue above `1e-12` (relative to the largest component) is
/// a symmetry error, smaller residues are truncated.
pub fn from_fourier_complex(values: &[Complex64]) -> Result<StateVector> {
    let n = values.len();
    if n == 0 {
        return Ok(StateVector(Vec::new()));
    }
    let mut buf = values.to_vec();
    plan(n, true).process(&mut buf);
    let inv = 1.0 / n as f64;
    let scale = buf.iter().map(|c| c.re.abs() * inv).fold(1.0, f64::max);
    let residue = buf.iter().map(|c| c.im.abs() * inv).fold(0.0, f64::max);
    if residue > 1e-12 * scale {
        return Err(Error::Symmetry { residue });
    }
    Ok(StateVector(buf.into_iter().map(|c| c.re * inv).collect()))
}

/// `z = x̂/N`.
pub fn z_of_x(x: &[f64]) -> ModeVector {
    to_fourier(x).scaled(1.0 / x.len() as f64)
}

/// `x(Nz) = Σ_k ω^{jk} z_k`.
pub fn x_of_z(z: &ModeVector) -> StateVector {
    StateVector(synthesize(z))
}

/// `‖x̂‖_{p,F} = ((1/N) Σ |x̂_i|^p)^{1/p}`; `p = ∞` gives the max modulus.
pub fn norm_pf(zhat: &ModeVector, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::domain(format!("norm exponent must be >= 1 (got {p})")));
    }
    let n = zhat.n;
    if p.is_infinite() {
        return Ok((0..n).map(|k| zhat.get(k).norm()).fold(0.0, f64::max));
    }
    let sum = neumaier_sum((0..n).map(|k| zhat.get(k).norm().powf(p)));
    Ok((sum / n as f64).powf(1.0 / p))
}

fn check_len(z: &ModeVector, s: &Spectrum) -> Result<()> {
    if z.n != s.n() {
        return Err(Error::DimensionMismatch { expected: s.n(), got: z.n });
    }
    Ok(())
}

/// `½ Σ_{k≥1} λ_k |z_k|²` over all `N − 1` transverse modes.
fn transverse_quadratic(z: &ModeVector, s: &Spectrum) -> f64 {
    let n = z.n;
    let mut acc = 0.0;
    for k in 1..=z.pairs() {
        acc += s.lambda[k] * (z.data[2 * k - 1].powi(2) + z.data[2 * k].powi(2));
    }
    if n % 2 == 0 && n > 1 {
        acc += 0.5 * s.lambda[n / 2] * z.data[n - 1].powi(2);
    }
    acc
}

/// `F_0(z) = −z_0²/2 + ½ Σ_{k≥1} λ_k |z_k|²`.
pub fn quadratic_f0(z: &ModeVector, s: &Spectrum) -> Result<f64> {
    check_len(z, s)?;
    Ok(-0.5 * z.data[0].powi(2) + transverse_quadratic(z, s))
}

/// `G̃(z) = F_0(z) + (1/4N) ‖x(Nz)‖_4⁴`.
pub fn g_tilde(z: &ModeVector, p: &ChainParams) -> Result<f64> {
    let s = spectrum(p);
    Ok(quadratic_f0(z, &s)? + quartic_part(z))
}

fn quartic_part(z: &ModeVector) -> f64 {
    let x = synthesize(z);
    x.iter().map(|v| v.powi(4)).sum::<f64>() / (4.0 * z.n as f64)
}

/// `G̃(z) − F_0(z) = (1/4N)‖x(Nz)‖_4⁴ ≥ 0`.
pub fn remainder_quartic(z: &ModeVector, p: &ChainParams) -> Result<f64> {
    if z.n != p.n {
        return Err(Error::DimensionMismatch { expected: p.n, got: z.n });
    }
    Ok(quartic_part(z))
}

/// `−z_0²/2 + z_0⁴/4 + ½ Σ_{k≥1} λ_k |z_k|² + (3/2) z_0² Σ_{k≥1} |z_k|²`.
pub fn lower_corridor_approx(z: &ModeVector, s: &Spectrum) -> Result<f64> {
    check_len(z, s)?;
    let z0 = z.data[0];
    let z0sq = z0 * z0;
    Ok(-0.5 * z0sq + 0.25 * z0sq * z0sq + transverse_quadratic(z, s) + 1.5 * z0sq * z.perp_norm_sqr())
}

/// `F_0(z) + z_0⁴/4`, a lower bound for `G̃` everywhere (Jensen on the
/// quartic part, since `z_0` is the mean of `x(Nz)`).
pub fn tube_lower_bound(z: &ModeVector, s: &Spectrum) -> Result<f64> {
    Ok(quadratic_f0(z, s)? + 0.25 * z.data[0].powi(4))
}

/// Neighbourhood `C_δ = {|z_k| ≤ δ r_k / √|λ_k|}` of the saddle, together
/// with the ball radius `ρ` around `I_±`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodSpec {
    pub delta: f64,
    pub k_const: f64,
    pub alpha: f64,
    pub rho: f64,
    /// `r_0 = 1`, `r_k = r_{N−k} = 4 k^α`.
    pub r: Vec<f64>,
}

impl NeighborhoodSpec {
    pub const DEFAULT_ALPHA: f64 = 0.125;
    pub const DEFAULT_RHO: f64 = 0.2;
    pub const DEFAULT_K: f64 = 1.0;
    /// Upper cap on `δ = √(Kε|ln ε|)`.
    pub const DELTA_CAP: f64 = 0.5;

    /// Defaults: `K = 1`, `α = 1/8`, `ρ = 0.2`.
    pub fn new(n: usize, epsilon: f64) -> Result<Self> {
        Self::with_params(n, epsilon, Self::DEFAULT_K, Self::DEFAULT_ALPHA, Self::DEFAULT_RHO)
    }

    pub fn with_params(n: usize, epsilon: f64, k_const: f64, alpha: f64, rho: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::domain(format!("delta = sqrt(K eps |ln eps|) needs 0 < eps < 1 (got {epsilon})")));
        }
        if !(k_const > 0.0) {
            return Err(Error::domain(format!("K must be positive (got {k_const})")));
        }
        let delta = (k_const * epsilon * epsilon.ln().abs()).sqrt().min(Self::DELTA_CAP);
        let mut spec = Self::with_delta(n, delta, alpha, rho)?;
        spec.k_const = k_const;
        Ok(spec)
    }

    /// Explicit `δ`; `k_const` is then only nominal.
    pub fn with_delta(n: usize, delta: f64, alpha: f64, rho: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::domain("N must be at least 1"));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::domain(format!("delta must be positive (got {delta})")));
        }
        if !(alpha > 0.0 && alpha < 0.25) {
            return Err(Error::domain(format!("alpha must lie in (0, 1/4) (got {alpha})")));
        }
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::domain(format!("rho must lie in (0, 1) (got {rho})")));
        }
        let r = (0..n)
            .map(|k| {
                let m = k.min(n - k);
                if m == 0 {
                    1.0
                } else {
                    4.0 * (m as f64).powf(alpha)
                }
            })
            .collect();
        Ok(Self { delta, k_const: Self::DEFAULT_K, alpha, rho, r })
    }

    pub fn n(&self) -> usize {
        self.r.len()
    }

    /// `B_±` must stay clear of the strip `|z_0| ≤ δ`.
    pub fn check_geometry(&self) -> Result<()> {
        if self.delta + self.rho >= 1.0 {
            return Err(Error::Geometry { delta: self.delta, rho: self.rho });
        }
        Ok(())
    }

    /// Half-width `δ r_k / √|λ_k|` of `C_δ` in mode `k`.
    pub fn half_width(&self, k: usize, s: &Spectrum) -> f64 {
        self.delta * self.r[k] / s.lambda[k].abs().sqrt()
    }
}

/// Closed membership test for `C_δ`.
pub fn in_c_delta(z: &ModeVector, spec: &NeighborhoodSpec, s: &Spectrum) -> Result<bool> {
    check_len(z, s)?;
    if spec.n() != s.n() {
        return Err(Error::DimensionMismatch { expected: s.n(), got: spec.n() });
    }
    Ok((0..=z.n / 2).all(|k| z.get(k).norm() <= spec.half_width(k, s)))
}

/// `D_q = (Σ_{k=0}^{N−1} (r_k / √|λ_k|)^q)^{1/q}`: the `ℓ^q` norm of the
/// `C_δ` half-widths at `δ = 1`.
pub fn d_q(spec: &NeighborhoodSpec, s: &Spectrum, q: f64) -> f64 {
    let sum = neumaier_sum((0..s.n()).map(|k| (spec.r[k] / s.lambda[k].abs().sqrt()).powf(q)));
    sum.powf(1.0 / q)
}

/// `B_p = D_q^p` with `q = p/(p − 1)`, so that `‖x(Nz)‖_p^p ≤ N δ^p B_p` on
/// `C_δ` (Hausdorff–Young with constant one).
pub fn b_p(spec: &NeighborhoodSpec, s: &Spectrum, p: f64) -> f64 {
    let q = p / (p - 1.0);
    d_q(spec, s, q).powf(p)
}

/// `A_1 = B_4/4`: bound on `(G̃ − F_0)/δ⁴` over `C_δ`.
pub fn a1(spec: &NeighborhoodSpec, s: &Spectrum) -> f64 {
    b_p(spec, s, 4.0) / 4.0
}

/// `A_5 = 4 B_3 + B_4 δ`: bound on `|G̃ − corridor approximation|/δ³`.
pub fn a5(spec: &NeighborhoodSpec, s: &Spectrum) -> f64 {
    4.0 * b_p(spec, s, 3.0) + b_p(spec, s, 4.0) * spec.delta
}

/// `K_q = (Σ_{k≥1} (4k^α / k)^q)^{1/q}`, finite iff `q(1 − α) > 1`.
/// Partial sum to `10⁶` plus a midpoint-shifted integral tail.
pub fn k_q(alpha: f64, q: f64) -> Result<f64> {
    let s = q * (1.0 - alpha);
    if !(s > 1.0) {
        return Err(Error::domain(format!("K_q diverges for q(1 - alpha) = {s} <= 1")));
    }
    const M: u64 = 1_000_000;
    let c = 4f64.powf(q);
    let head = neumaier_sum((1..=M).map(|k| c * (k as f64).powf(-s)));
    let tail = c * (M as f64 + 0.5).powf(1.0 - s) / (s - 1.0);
    Ok((head + tail).powf(1.0 / q))
}
