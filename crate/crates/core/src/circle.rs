//! Exponent and fundamental-solution profile of a general planar operator.
//!
//! A function `u = r^{−α}·φ(θ)` (or `−log r + φ(θ)` when `α = 0`) satisfies
//! `F(D²u) = μ·u·r^{−2}` exactly when the angular profile solves the periodic
//! problem `F(H[φ]) = μ·φ` (respectively `F(H[φ]) = μ`). The principal pair
//! is found with a monotone explicit flow `φ ← φ − dt·F(H[φ])`.
//!
//! The flow map is order preserving and positively (respectively additively)
//! homogeneous, so for any admissible `φ` the principal eigenvalue lies in
//!
//! ```text
//! [min_k g_k/φ_k, max_k g_k/φ_k]      (power branch)
//! [min_k g_k,     max_k g_k]          (log branch)
//! ```
//!
//! with `g = F(H[φ])`. Those enclosures serve both as the convergence test
//! and as a certificate for the sign of `μ` during bisection.

use std::f64::consts::PI;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::operator::{OperatorSpec, SymMatrix};
use crate::radial::{Branch, ExponentResult, Method};
use crate::sampling;

#[derive(Clone, Debug, Serialize)]
pub struct CircleConfig {
    /// Number of grid points on the circle.
    pub n_theta: usize,
    pub dt_safety: f64,
    /// Relative width of the eigenvalue enclosure accepted as converged.
    pub tol: f64,
    pub max_iter: usize,
    /// Final bracket width of the exponent bisection.
    pub alpha_tol: f64,
    /// Half-width of the window around 0 inside which the root is reported
    /// as the logarithmic branch.
    pub log_window: f64,
    /// Random positive initial profile instead of the constant one.
    pub seed: Option<u64>,
}

impl Default for CircleConfig {
    fn default() -> Self {
        CircleConfig {
            n_theta: 256,
            dt_safety: 0.5,
            tol: 1e-8,
            max_iter: 20_000_000,
            alpha_tol: 1e-5,
            log_window: 5e-4,
            seed: None,
        }
    }
}

/// Samples of a homogeneous profile on `θ_k = 2πk/n_theta`.
#[derive(Clone, Debug, Serialize)]
pub struct CircleProfile {
    pub n_theta: usize,
    pub values: Vec<f64>,
    pub alpha: f64,
    pub branch: Branch,
}

impl CircleProfile {
    pub fn theta(&self, k: usize) -> f64 {
        2.0 * PI * k as f64 / self.n_theta as f64
    }

    /// Periodic linear interpolation at angle `theta`.
    pub fn sample(&self, theta: f64) -> f64 {
        let n = self.n_theta;
        let t = theta.rem_euclid(2.0 * PI) / (2.0 * PI) * n as f64;
        let k = (t.floor() as usize) % n;
        let w = t - t.floor();
        (1.0 - w) * self.values[k] + w * self.values[(k + 1) % n]
    }

    /// The homogeneous function `|x|^{−α}φ(θ)` or `−log|x| + φ(θ)`.
    pub fn eval(&self, x: [f64; 2]) -> f64 {
        let r = x[0].hypot(x[1]);
        let phi = self.sample(x[1].atan2(x[0]));
        match self.branch {
            Branch::Power => r.powf(-self.alpha) * phi,
            Branch::Log => -r.ln() + phi,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EigenEstimate {
    pub alpha: f64,
    pub mu: f64,
    /// `μ/α` on the power branch, `μ` on the log branch.
    pub eta: f64,
    /// Enclosure of `μ` at the final profile.
    pub mu_bounds: (f64, f64),
    pub profile: CircleProfile,
    pub iterations: usize,
    pub converged: bool,
}

/// Cartesian `D²u` at the unit point of angle `theta` for `u = r^{−α}φ(θ)`
/// (power branch) or `u = −log r + φ(θ)` (log branch; `alpha` ignored).
pub fn hessian_homogeneous_2d(phi: f64, dphi: f64, ddphi: f64, alpha: f64, theta: f64, branch: Branch) -> SymMatrix {
    let (c, s) = (theta.cos(), theta.sin());
    let [a, b, d] = polar_to_cartesian(polar_hessian(phi, dphi, ddphi, alpha, branch), c, s);
    SymMatrix::new2(a, b, d)
}

#[inline]
fn polar_hessian(phi: f64, dphi: f64, ddphi: f64, alpha: f64, branch: Branch) -> [f64; 3] {
    match branch {
        Branch::Power => [alpha * (alpha + 1.0) * phi, -(alpha + 1.0) * dphi, ddphi - alpha * phi],
        Branch::Log => [1.0, -dphi, ddphi - 1.0],
    }
}

/// `R·H·Rᵀ` with `R = [[c, −s], [s, c]]`.
#[inline]
fn polar_to_cartesian(h: [f64; 3], c: f64, s: f64) -> [f64; 3] {
    let [hrr, hrt, htt] = h;
    let cs = c * s;
    [
        c * c * hrr - 2.0 * cs * hrt + s * s * htt,
        cs * hrr + (c * c - s * s) * hrt - cs * htt,
        s * s * hrr + 2.0 * cs * hrt + c * c * htt,
    ]
}

struct Flow<'a> {
    f: &'a OperatorSpec,
    alpha: f64,
    branch: Branch,
    h: f64,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl<'a> Flow<'a> {
    fn new(f: &'a OperatorSpec, alpha: f64, branch: Branch, n_theta: usize) -> Self {
        let h = 2.0 * PI / n_theta as f64;
        let (sin, cos) = (0..n_theta).map(|k| (k as f64 * h).sin_cos()).unzip();
        Flow { f, alpha, branch, h, cos, sin }
    }

    fn apply(&self, phi: &[f64], g: &mut [f64]) {
        let n = phi.len();
        let (inv2h, invh2) = (0.5 / self.h, 1.0 / (self.h * self.h));
        for k in 0..n {
            let prev = phi[(k + n - 1) % n];
            let next = phi[(k + 1) % n];
            let dphi = (next - prev) * inv2h;
            let ddphi = (next - 2.0 * phi[k] + prev) * invh2;
            let polar = polar_hessian(phi[k], dphi, ddphi, self.alpha, self.branch);
            g[k] = self.f.eval2(polar_to_cartesian(polar, self.cos[k], self.sin[k]));
        }
    }

    fn sign(&self) -> f64 {
        if self.alpha < 0.0 {
            -1.0
        } else {
            1.0
        }
    }

    /// Rescales (power) or recenters (log) in place.
    fn normalize(&self, phi: &mut [f64]) {
        match self.branch {
            Branch::Power => {
                let s = self.sign();
                let m = phi.iter().map(|v| s * v).fold(f64::INFINITY, f64::min);
                phi.iter_mut().for_each(|v| *v /= m);
            }
            Branch::Log => {
                let mean = phi.iter().sum::<f64>() / phi.len() as f64;
                phi.iter_mut().for_each(|v| *v -= mean);
            }
        }
    }

    fn bounds(&self, phi: &[f64], g: &[f64]) -> (f64, f64) {
        let ratio = |k: usize| match self.branch {
            Branch::Power => g[k] / phi[k],
            Branch::Log => g[k],
        };
        (0..phi.len()).map(ratio).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r), hi.max(r)))
    }

    /// Scale that converts an enclosure of `μ` into one of `η`.
    fn eta_scale(&self) -> f64 {
        match self.branch {
            Branch::Power => self.alpha.abs(),
            Branch::Log => 1.0,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum StopRule {
    Converged,
    SignKnown,
}

struct FlowOutcome {
    phi: Vec<f64>,
    mu_lo: f64,
    mu_hi: f64,
    iterations: usize,
    converged: bool,
}

fn check_config(f: &OperatorSpec, cfg: &CircleConfig) -> Result<()> {
    if f.dim() != 2 {
        return Err(Error::InvalidInput(format!("circle solver needs a planar operator (dim = {})", f.dim())));
    }
    if cfg.n_theta < 8 || !cfg.n_theta.is_power_of_two() {
        return Err(Error::InvalidInput(format!("n_theta must be a power of two >= 8 (got {})", cfg.n_theta)));
    }
    if !(cfg.dt_safety > 0.0 && cfg.dt_safety <= 1.0) || !(cfg.tol > 0.0) {
        return Err(Error::InvalidInput("dt_safety must lie in (0, 1] and tol must be positive".into()));
    }
    Ok(())
}

fn run_flow(flow: &Flow, cfg: &CircleConfig, mut phi: Vec<f64>, stop: StopRule) -> Result<FlowOutcome> {
    const MAX_RETRIES: usize = 5;
    let big_lambda = flow.f.pair().big_lambda;
    let alpha = match flow.branch {
        Branch::Power => flow.alpha,
        Branch::Log => 0.0,
    };
    let mut dt = cfg.dt_safety * flow.h * flow.h / (4.0 * big_lambda * (1.0 + alpha * alpha));
    let mut retries = 0;
    let n = phi.len();
    let mut g = vec![0.0; n];
    let mut next = vec![0.0; n];
    flow.normalize(&mut phi);
    let scale = flow.eta_scale();
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for it in 0..cfg.max_iter {
        flow.apply(&phi, &mut g);
        (lo, hi) = flow.bounds(&phi, &g);
        let mid_eta = 0.5 * (lo + hi) / scale;
        if (hi - lo) / scale <= cfg.tol * (1.0 + mid_eta.abs()) {
            return Ok(FlowOutcome { phi, mu_lo: lo, mu_hi: hi, iterations: it, converged: true });
        }
        if stop == StopRule::SignKnown && (lo > 0.0 || hi < 0.0) {
            return Ok(FlowOutcome { phi, mu_lo: lo, mu_hi: hi, iterations: it, converged: false });
        }
        for k in 0..n {
            next[k] = phi[k] - dt * g[k];
        }
        let positive = match flow.branch {
            Branch::Power => next.iter().all(|v| flow.sign() * v > 0.0 && v.is_finite()),
            Branch::Log => next.iter().all(|v| v.is_finite()),
        };
        if !positive {
            retries += 1;
            if retries > MAX_RETRIES {
                return Err(Error::StepSize { alpha: flow.alpha, retries: MAX_RETRIES });
            }
            dt *= 0.5;
            continue;
        }
        std::mem::swap(&mut phi, &mut next);
        flow.normalize(&mut phi);
    }
    Err(Error::Convergence { what: "circle eigenpair flow", iterations: cfg.max_iter, residual: (hi - lo) / scale })
}

fn initial_profile(cfg: &CircleConfig) -> Vec<f64> {
    match cfg.seed {
        None => vec![1.0; cfg.n_theta],
        Some(seed) => {
            let mut rng = sampling::rng(seed);
            (0..cfg.n_theta).map(|_| rng.random_range(1.0..2.0)).collect()
        }
    }
}

/// Oriented initial profile from an unsigned positive shape.
fn oriented(shape: &[f64], alpha: f64, branch: Branch) -> Vec<f64> {
    match branch {
        Branch::Log => shape.iter().map(|v| v - 1.0).collect(),
        Branch::Power if alpha < 0.0 => shape.iter().map(|v| -v).collect(),
        Branch::Power => shape.to_vec(),
    }
}

fn estimate_from(flow: &Flow, out: FlowOutcome, n_theta: usize) -> EigenEstimate {
    let mu = 0.5 * (out.mu_lo + out.mu_hi);
    let (alpha, eta) = match flow.branch {
        Branch::Power => (flow.alpha, mu / flow.alpha),
        Branch::Log => (0.0, mu),
    };
    EigenEstimate {
        alpha,
        mu,
        eta,
        mu_bounds: (out.mu_lo, out.mu_hi),
        profile: CircleProfile { n_theta, values: out.phi, alpha, branch: flow.branch },
        iterations: out.iterations,
        converged: out.converged,
    }
}

/// Principal pair of `F(H[φ]) = μφ` at a fixed `α ≠ 0`, or of
/// `F(H[φ]) = μ` when `branch` is [`Branch::Log`].
pub fn eigenpair_at_alpha(f: &OperatorSpec, alpha: f64, branch: Branch, cfg: &CircleConfig) -> Result<EigenEstimate> {
    eigenpair_warm(f, alpha, branch, cfg, &initial_profile(cfg))
}

fn eigenpair_warm(f: &OperatorSpec, alpha: f64, branch: Branch, cfg: &CircleConfig, shape: &[f64]) -> Result<EigenEstimate> {
    check_config(f, cfg)?;
    if branch == Branch::Power && !(alpha > -1.0 + 1e-3 && alpha != 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidInput(format!("power branch needs alpha > -1 + 1e-3 and alpha != 0 (got {alpha})")));
    }
    let flow = Flow::new(f, alpha, branch, cfg.n_theta);
    let out = run_flow(&flow, cfg, oriented(shape, alpha, branch), StopRule::Converged)?;
    Ok(estimate_from(&flow, out, cfg.n_theta))
}

/// Unsigned shape `sign(α)·φ` of a power-branch profile, for warm starts.
fn shape_of(est: &EigenEstimate) -> Vec<f64> {
    match est.profile.branch {
        Branch::Power => est.profile.values.iter().map(|v| v.abs()).collect(),
        Branch::Log => vec![1.0; est.profile.n_theta],
    }
}

/// Sign of `η(α)`, certified by the eigenvalue enclosure. Zero means the
/// enclosure converged around 0.
fn eta_sign(f: &OperatorSpec, alpha: f64, cfg: &CircleConfig, shape: &mut Vec<f64>) -> Result<f64> {
    let branch = if alpha == 0.0 { Branch::Log } else { Branch::Power };
    let flow = Flow::new(f, alpha, branch, cfg.n_theta);
    let out = run_flow(&flow, cfg, oriented(shape, alpha, branch), StopRule::SignKnown)?;
    if branch == Branch::Power {
        *shape = out.phi.iter().map(|v| v.abs()).collect();
    }
    let mu_sign = if out.mu_lo > 0.0 {
        1.0
    } else if out.mu_hi < 0.0 {
        -1.0
    } else {
        0.0
    };
    Ok(if alpha < 0.0 { -mu_sign } else { mu_sign })
}

/// Exponent of a planar operator by bisection on `η(α) = μ(α)/α`, which is
/// positive exactly below the exponent.
pub fn exponent_2d(f: &OperatorSpec, cfg: &CircleConfig) -> Result<ExponentResult> {
    check_config(f, cfg)?;
    let pair = f.pair();
    let lo = (pair.lambda / pair.big_lambda - 1.0 - 0.05).max(-1.0 + 1e-3);
    let hi = pair.ratio() - 1.0 + 0.05;

    // audit η on nine equispaced points, warm-starting from the top
    const N_AUDIT: usize = 9;
    let grid: Vec<f64> = (0..N_AUDIT).map(|i| lo + (hi - lo) * i as f64 / (N_AUDIT - 1) as f64).collect();
    let mut samples = vec![(0.0, 0.0); N_AUDIT];
    let mut shape = initial_profile(cfg);
    for i in (0..N_AUDIT).rev() {
        let alpha = grid[i];
        let branch = if alpha == 0.0 { Branch::Log } else { Branch::Power };
        let est = eigenpair_warm(f, alpha, branch, cfg, &shape)?;
        if branch == Branch::Power {
            shape = shape_of(&est);
        }
        samples[i] = (alpha, est.eta);
    }
    if samples.windows(2).any(|w| w[1].1 > w[0].1 + 1e-6) {
        return Err(Error::MonotonicityAudit { samples });
    }
    if !(samples[0].1 > 0.0 && samples[N_AUDIT - 1].1 < 0.0) {
        return Err(Error::Bracket { samples });
    }
    let i = samples.windows(2).position(|w| w[0].1 > 0.0 && w[1].1 <= 0.0).expect("sign change located");
    let (mut a, mut b) = (samples[i].0, samples[i + 1].0);
    if samples[i + 1].1 == 0.0 {
        return finish_power(f, cfg, b, 0.0, &shape);
    }

    if a < 0.0 && b > 0.0 {
        let d = cfg.log_window;
        let left = if -d > a { eta_sign(f, -d, cfg, &mut shape)? } else { 1.0 };
        let right = if d < b { eta_sign(f, d, cfg, &mut shape)? } else { -1.0 };
        let log = eigenpair_warm(f, 0.0, Branch::Log, cfg, &shape)?;
        if left >= 0.0 && right <= 0.0 {
            return Ok(ExponentResult {
                alpha_star: 0.0,
                branch: Branch::Log,
                a_tilde: None,
                method: Method::CircleBisection,
                residual: log.mu.abs(),
                bracket_width: 2.0 * d,
            });
        }
        if log.mu > 0.0 {
            a = 0.0;
        } else {
            b = 0.0;
        }
    }

    while b - a > cfg.alpha_tol {
        let mid = 0.5 * (a + b);
        let s = eta_sign(f, mid, cfg, &mut shape)?;
        if s == 0.0 {
            return finish_power(f, cfg, mid, 0.0, &shape);
        }
        if s > 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    finish_power(f, cfg, 0.5 * (a + b), b - a, &shape)
}

fn finish_power(f: &OperatorSpec, cfg: &CircleConfig, alpha: f64, width: f64, shape: &[f64]) -> Result<ExponentResult> {
    if alpha == 0.0 {
        let log = eigenpair_warm(f, 0.0, Branch::Log, cfg, shape)?;
        return Ok(ExponentResult {
            alpha_star: 0.0,
            branch: Branch::Log,
            a_tilde: None,
            method: Method::CircleBisection,
            residual: log.mu.abs(),
            bracket_width: width.max(2.0 * cfg.log_window),
        });
    }
    let est = eigenpair_warm(f, alpha, Branch::Power, cfg, shape)?;
    Ok(ExponentResult {
        alpha_star: alpha,
        branch: Branch::Power,
        a_tilde: None,
        method: Method::CircleBisection,
        residual: est.mu.abs(),
        bracket_width: width,
    })
}

/// Profile of the fundamental solution at a computed exponent, normalized so
/// that `min sign(α*)φ = 1` (power) or `mean φ = 0` (log).
pub fn fundamental_profile_2d(f: &OperatorSpec, result: &ExponentResult, cfg: &CircleConfig) -> Result<CircleProfile> {
    let est = eigenpair_at_alpha(f, result.alpha_star, result.branch, cfg)?;
    Ok(est.profile)
}

/// Pointwise residual `F(H[φ]) − μφ` (power) or `F(H[φ]) − μ` (log) on the grid.
pub fn profile_residual(f: &OperatorSpec, profile: &CircleProfile, mu: f64) -> Result<Vec<f64>> {
    check_config(f, &CircleConfig { n_theta: profile.n_theta, ..CircleConfig::default() })?;
    let flow = Flow::new(f, profile.alpha, profile.branch, profile.n_theta);
    let mut g = vec![0.0; profile.n_theta];
    flow.apply(&profile.values, &mut g);
    Ok(match profile.branch {
        Branch::Power => g.iter().zip(&profile.values).map(|(g, p)| g - mu * p).collect(),
        Branch::Log => g.iter().map(|g| g - mu).collect(),
    })
}
