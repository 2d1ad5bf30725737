//! Euler–Maruyama simulation of `dX = −∇G(X) dt + √(2ε) dB` and first
//! hitting times of `B_+ = {‖x − I_+‖ ≤ ρ√N}`.
//!
//! Trajectory `i` draws all of its noise from the stream
//! `(seed, Domain::Trajectory, i)`; batches are assembled in trajectory order
//! with compensated sums, so results are identical for any worker count.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::quad::{integrate_with_breaks, Tolerance};
use crate::numerics::neumaier_sum;
use crate::potential::ChainParams;
use crate::rng::{stream_rng, Domain};
use crate::spectral::{predict_mean_time_rescaled, spectrum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StartPoint {
    /// Exactly at `I_−`.
    Minimum,
    /// Uniform in `B_−`.
    UniformInBall,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub rho: f64,
    pub n_traj: usize,
    pub seed: u64,
    /// Per-trajectory cap; trajectories reaching it are censored.
    pub max_time: f64,
    pub start: StartPoint,
}

impl SimConfig {
    /// Defaults: `dt = 1e-3·min(1, N/ν_max)`, `ρ = 0.2`, start at `I_−`, and
    /// `max_time` fifty times the determinant-form prediction.
    pub fn defaults(p: &ChainParams, n_traj: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            dt: default_dt(p),
            rho: 0.2,
            n_traj,
            seed,
            max_time: default_max_time(p)?,
            start: StartPoint::Minimum,
        })
    }

    fn validate(&self, p: &ChainParams) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::domain(format!("dt must be positive (got {})", self.dt)));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::domain(format!("rho must lie in (0, 1) (got {})", self.rho)));
        }
        if self.n_traj == 0 {
            return Err(Error::domain("n_traj must be at least 1"));
        }
        if !(self.max_time > 0.0) {
            return Err(Error::domain(format!("max_time must be positive (got {})", self.max_time)));
        }
        let stiff = self.dt * stiffest(p) / p.n as f64;
        if stiff >= 0.5 {
            return Err(Error::domain(format!("dt too large: dt * max nu / N = {stiff:.3} >= 0.5")));
        }
        Ok(())
    }
}

fn stiffest(p: &ChainParams) -> f64 {
    spectrum(p).nu.iter().copied().fold(0.0, f64::max)
}

/// `1e-3·min(1, N/ν_max)`: the largest curvature of `G` is `ν_max/N`.
pub fn default_dt(p: &ChainParams) -> f64 {
    1e-3 * (p.n as f64 / stiffest(p)).min(1.0)
}

pub fn default_max_time(p: &ChainParams) -> Result<f64> {
    let log = predict_mean_time_rescaled(p)?.determinant_form.log + 50f64.ln();
    Ok(log.exp().min(f64::MAX))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HittingBatch {
    /// Hitting times of the uncensored trajectories, in trajectory order.
    pub times: Vec<f64>,
    pub mean: f64,
    pub variance: f64,
    pub std_error: f64,
    pub ci95_low: f64,
    pub ci95_high: f64,
    pub censored_count: usize,
    pub params: ChainParams,
    pub config: SimConfig,
}

impl HittingBatch {
    fn from_outcomes(outcomes: &[Option<f64>], p: &ChainParams, c: &SimConfig) -> Result<Self> {
        let times: Vec<f64> = outcomes.iter().flatten().copied().collect();
        let censored_count = outcomes.len() - times.len();
        if times.is_empty() {
            return Err(Error::Inconclusive { total: outcomes.len() });
        }
        let n = times.len() as f64;
        let mean = neumaier_sum(times.iter().copied()) / n;
        let variance =
            if times.len() > 1 { neumaier_sum(times.iter().map(|t| (t - mean).powi(2))) / (n - 1.0) } else { 0.0 };
        let std_error = (variance / n).sqrt();
        Ok(Self {
            times,
            mean,
            variance,
            std_error,
            ci95_low: mean - 1.96 * std_error,
            ci95_high: mean + 1.96 * std_error,
            censored_count,
            params: *p,
            config: *c,
        })
    }

    /// Coefficient of variation of the hitting times.
    pub fn cv(&self) -> f64 {
        self.variance.sqrt() / self.mean
    }
}

/// Single trajectory state with reusable buffers.
struct Walker<'a> {
    p: &'a ChainParams,
    x: Vec<f64>,
    grad: Vec<f64>,
    hit_r2: f64,
}

impl<'a> Walker<'a> {
    fn new(p: &'a ChainParams, start: Vec<f64>, rho: f64) -> Self {
        let n = p.n;
        Self { p, x: start, grad: vec![0.0; n], hit_r2: rho * rho * n as f64 }
    }

    #[inline]
    fn step(&mut self, dt: f64, noise: f64, xi: &[f64]) {
        self.p.grad_f_into(&self.x, &mut self.grad);
        let drift = dt / self.p.n as f64;
        for ((x, g), e) in self.x.iter_mut().zip(&self.grad).zip(xi) {
            *x += -drift * g + noise * e;
        }
    }

    #[inline]
    fn hit(&self) -> bool {
        self.x.iter().map(|v| (v - 1.0) * (v - 1.0)).sum::<f64>() <= self.hit_r2
    }

    fn finite(&self) -> bool {
        self.x.iter().all(|v| v.is_finite() && v.abs() < 1e8)
    }
}

fn start_point(p: &ChainParams, c: &SimConfig, index: usize) -> Vec<f64> {
    let n = p.n;
    match c.start {
        StartPoint::Minimum => vec![-1.0; n],
        StartPoint::UniformInBall => {
            let mut rng = stream_rng(c.seed, Domain::StartPoint, index as u64);
            let dir: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            let radius = c.rho * (n as f64).sqrt() * rng.gen::<f64>().powf(1.0 / n as f64);
            dir.iter().map(|d| -1.0 + radius * d / norm).collect()
        }
    }
}

fn fill_normal(rng: &mut ChaCha8Rng, buf: &mut [f64]) {
    for v in buf.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
}

fn max_steps(max_time: f64, dt: f64) -> u64 {
    (max_time / dt).ceil().min(u64::MAX as f64 / 2.0) as u64
}

fn run_trajectory(p: &ChainParams, c: &SimConfig, index: usize) -> Result<Option<f64>> {
    let mut rng = stream_rng(c.seed, Domain::Trajectory, index as u64);
    let mut w = Walker::new(p, start_point(p, c, index), c.rho);
    let noise = (2.0 * p.epsilon * c.dt).sqrt();
    let mut xi = vec![0.0; p.n];
    let limit = max_steps(c.max_time, c.dt);
    for step in 1..=limit {
        fill_normal(&mut rng, &mut xi);
        w.step(c.dt, noise, &xi);
        if w.hit() {
            return Ok(Some(step as f64 * c.dt));
        }
        if step % 1024 == 0 && !w.finite() {
            return Err(Error::Blowup { trajectory: index, step });
        }
    }
    if !w.finite() {
        return Err(Error::Blowup { trajectory: index, step: limit });
    }
    Ok(None)
}

/// Runs `c.n_traj` independent trajectories and collects their hitting times.
pub fn simulate_hitting(p: &ChainParams, c: &SimConfig) -> Result<HittingBatch> {
    p.require_sync_regime()?;
    c.validate(p)?;
    let outcomes: Vec<Option<f64>> =
        (0..c.n_traj).into_par_iter().map(|i| run_trajectory(p, c, i)).collect::<Result<_>>()?;
    HittingBatch::from_outcomes(&outcomes, p, c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementReport {
    pub coarse: HittingBatch,
    pub fine: HittingBatch,
    /// `(mean_fine − mean_coarse) / mean_coarse`
    pub rel_shift: f64,
    /// Standard error of `rel_shift` from the paired per-trajectory
    /// differences.
    pub rel_shift_se: f64,
    /// `|rel_shift| < rel_shift_se + 0.03`
    pub passed: bool,
}

/// Runs the same trajectories at `dt` and `dt/2`. The two paths share their
/// Brownian increments: each coarse step uses `(ξ_1 + ξ_2)/√2`, where `ξ_1`
/// and `ξ_2` drive the two fine half steps.
pub fn dt_refinement_check(p: &ChainParams, c: &SimConfig) -> Result<RefinementReport> {
    p.require_sync_regime()?;
    c.validate(p)?;
    let fine_cfg = SimConfig { dt: 0.5 * c.dt, ..*c };
    let pairs: Vec<(Option<f64>, Option<f64>)> =
        (0..c.n_traj).into_par_iter().map(|i| run_coupled(p, c, i)).collect::<Result<_>>()?;
    let coarse_out: Vec<Option<f64>> = pairs.iter().map(|p| p.0).collect();
    let fine_out: Vec<Option<f64>> = pairs.iter().map(|p| p.1).collect();
    let coarse = HittingBatch::from_outcomes(&coarse_out, p, c)?;
    let fine = HittingBatch::from_outcomes(&fine_out, p, &fine_cfg)?;

    let diffs: Vec<f64> = pairs.iter().filter_map(|&(a, b)| Some(b? - a?)).collect();
    let m = diffs.len() as f64;
    let rel_shift = (fine.mean - coarse.mean) / coarse.mean;
    let rel_shift_se = if diffs.len() > 1 {
        let mean = neumaier_sum(diffs.iter().copied()) / m;
        let var = neumaier_sum(diffs.iter().map(|d| (d - mean).powi(2))) / (m - 1.0);
        (var / m).sqrt() / coarse.mean
    } else {
        f64::INFINITY
    };
    Ok(RefinementReport { passed: rel_shift.abs() < rel_shift_se + 0.03, coarse, fine, rel_shift, rel_shift_se })
}

fn run_coupled(p: &ChainParams, c: &SimConfig, index: usize) -> Result<(Option<f64>, Option<f64>)> {
    let n = p.n;
    let mut rng = stream_rng(c.seed, Domain::Trajectory, index as u64);
    let start = start_point(p, c, index);
    let mut coarse = Walker::new(p, start.clone(), c.rho);
    let mut fine = Walker::new(p, start, c.rho);
    let half = 0.5 * c.dt;
    let noise_coarse = (2.0 * p.epsilon * c.dt).sqrt();
    let noise_fine = (2.0 * p.epsilon * half).sqrt();
    let (mut xi1, mut xi2, mut xi) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let (mut t_coarse, mut t_fine) = (None, None);
    let limit = max_steps(c.max_time, c.dt);
    for step in 1..=limit {
        fill_normal(&mut rng, &mut xi1);
        fill_normal(&mut rng, &mut xi2);
        if t_fine.is_none() {
            fine.step(half, noise_fine, &xi1);
            if fine.hit() {
                t_fine = Some((2 * step - 1) as f64 * half);
            } else {
                fine.step(half, noise_fine, &xi2);
                if fine.hit() {
                    t_fine = Some(step as f64 * c.dt);
                }
            }
        }
        if t_coarse.is_none() {
            for ((e, a), b) in xi.iter_mut().zip(&xi1).zip(&xi2) {
                *e = (a + b) * std::f64::consts::FRAC_1_SQRT_2;
            }
            coarse.step(c.dt, noise_coarse, &xi);
            if coarse.hit() {
                t_coarse = Some(step as f64 * c.dt);
            }
        }
        if t_coarse.is_some() && t_fine.is_some() {
            break;
        }
        if step % 1024 == 0 && !(coarse.finite() && fine.finite()) {
            return Err(Error::Blowup { trajectory: index, step });
        }
    }
    Ok((t_coarse, t_fine))
}

/// Exact mean first-passage time from `a` to `b > a` for the one-site
/// dynamics `dX = −G′(X) dt + √(2ε) dB` with `G(x) = x⁴/4 − x²/2`:
///
/// `(1/ε) ∫_a^b e^{G(y)/ε} ∫_{−∞}^y e^{−G(u)/ε} du dy`,
///
/// evaluated by nested adaptive quadrature (outer relative tolerance 1e-8).
/// The inner lower limit is cut where `(G + 1/4)/ε ≥ 60`.
pub fn mean_hitting_1d(epsilon: f64, a: f64, b: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::domain(format!("epsilon must be positive (got {epsilon})")));
    }
    if !(a < b) {
        return Err(Error::domain(format!("need a < b (got a = {a}, b = {b})")));
    }
    // G + 1/4 = (u² − 1)²/4
    let lifted = |u: f64| 0.25 * (u * u - 1.0).powi(2);
    let cut = -(1.0 + (240.0 * epsilon).sqrt()).sqrt();
    let lower = cut.min(a - 1.0);
    let inner_tol = Tolerance { abs: 0.0, rel: 1e-11, max_intervals: 2000 };
    let inner = |y: f64| -> Result<f64> {
        let mut pts = vec![lower];
        pts.extend([-1.0, 0.0, 1.0].into_iter().filter(|&v| v > lower && v < y));
        pts.push(y);
        Ok(integrate_with_breaks(|u| (-lifted(u) / epsilon).exp(), &pts, inner_tol)?.value)
    };
    let mut failure = None;
    let mut pts = vec![a];
    pts.extend([-1.0, 0.0, 1.0].into_iter().filter(|&v| v > a && v < b));
    pts.push(b);
    let outer = integrate_with_breaks(
        |y| match inner(y) {
            Ok(v) => (lifted(y) / epsilon).exp() * v,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        },
        &pts,
        Tolerance { abs: 0.0, rel: 1e-8, max_intervals: 2000 },
    );
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(outer?.value / epsilon)
}
