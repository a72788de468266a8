//! Classification of isolated singularities at `0` and behaviour at `∞`.
//!
//! Both classifiers sample `u` on a dyadic ladder of circles and compare it
//! with the fundamental solutions `Φ` of `F` and `Φ̃` of the dual operator.
//! A case is accepted when `u ≈ aΨ + b` on the rings nearest the singular
//! end, with `Ψ ∈ {Φ, −Φ̃}` allowed by the sign of the exponent and `a > 0`.

use serde::Serialize;

use crate::circle::CircleProfile;
use crate::error::{Error, Result};
use crate::radial::xi_radial;

use super::stats::{radial_stats, ring_points, RadialRow, RING_SAMPLES};

/// A fundamental solution in the plane.
#[derive(Clone, Debug)]
pub enum Fundamental {
    /// `ξ_α(|x|)`.
    Radial { alpha: f64 },
    /// Homogeneous extension of a computed angular profile.
    Profile(CircleProfile),
}

impl Fundamental {
    pub fn eval(&self, x: [f64; 2]) -> f64 {
        match self {
            Fundamental::Radial { alpha } => xi_radial(*alpha, x[0].hypot(x[1])),
            Fundamental::Profile(p) => p.eval(x),
        }
    }

    pub fn alpha(&self) -> f64 {
        match self {
            Fundamental::Radial { alpha } => *alpha,
            Fundamental::Profile(p) => p.alpha,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SingularityCase {
    /// `u` extends continuously to `0`.
    Removable,
    /// `u ≈ aΦ` near `0`, possible when `α* ≥ 0`.
    PlusPhi,
    /// `u ≈ −aΦ̃` near `0`, possible when `α̃* ≥ 0`.
    MinusPhiTilde,
    /// `u − u(0) ∼ aΦ` near `0`, when `α* < 0`.
    NegInteriorPhi,
    /// `u − u(0) ∼ −aΦ̃` near `0`, when `α̃* < 0`.
    NegInteriorPhiTilde,
    /// `u → u_∞` at `∞` faster than any fundamental solution.
    FiniteLimit,
    /// `u − u_∞ ∼ aΦ` at `∞`, when `α* > 0`.
    DecayPhi,
    /// `u − u_∞ ∼ −aΦ̃` at `∞`, when `α̃* > 0`.
    DecayPhiTilde,
    /// `u ≈ aΦ` at `∞`, when `α* ≤ 0`.
    GrowPhi,
    /// `u ≈ −aΦ̃` at `∞`, when `α̃* ≤ 0`.
    GrowPhiTilde,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Confidence {
    Clear,
    /// The decisive statistic was within a factor 2 of its threshold.
    Marginal,
}

#[derive(Clone, Debug, Serialize)]
pub struct SingularityReport {
    pub case: SingularityCase,
    /// Coefficient `a` of the matched fundamental solution.
    pub a_est: Option<f64>,
    /// Limit of `u` at the singular end, when it is finite.
    pub u_limit: Option<f64>,
    pub confidence: Confidence,
    /// `1 − R²` of the accepted fit (0 for the limit cases).
    pub misfit: f64,
    /// Ring statistics against `Φ` over the whole ladder.
    pub curves: Vec<RadialRow>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ClassifierConfig {
    /// Ladder `r_k = 2^{∓k}` for `k = 2..=depth`.
    pub depth: usize,
    /// Rings nearest the singular end used in the fits.
    pub fit_rings: usize,
    /// Largest accepted `1 − R²`.
    pub max_misfit: f64,
    /// Oscillation `M − m`, relative to `1 + max|u|`, below which `u` is
    /// treated as having a limit.
    pub limit_tol: f64,
    /// Rings below this radius are dropped (e.g. `4h` for grid functions).
    pub min_radius: f64,
    /// Rings above this radius are dropped.
    pub max_radius: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            depth: 8,
            fit_rings: 4,
            max_misfit: 0.02,
            limit_tol: 0.02,
            min_radius: 0.0,
            max_radius: f64::INFINITY,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum End {
    Origin,
    Infinity,
}

/// `2^{−k}` (origin) or `2^k` (infinity) for `k = 2..=depth`, ordered
/// towards the singular end and filtered by the configured radius bounds.
fn ladder(end: End, cfg: &ClassifierConfig) -> Vec<f64> {
    (2..=cfg.depth as i32)
        .map(|k| if end == End::Origin { 0.5f64.powi(k) } else { 2f64.powi(k) })
        .filter(|&r| r >= cfg.min_radius && r <= cfg.max_radius)
        .collect()
}

/// Classifies `u` near the origin among the five alternatives
/// (removable, `Φ`, `−Φ̃`, and the two interior-value cases).
pub fn classify_origin(
    u: &dyn Fn([f64; 2]) -> f64,
    phi: &Fundamental,
    phi_tilde: &Fundamental,
    cfg: &ClassifierConfig,
) -> Result<SingularityReport> {
    classify(End::Origin, u, phi, phi_tilde, cfg)
}

/// Classifies `u` near infinity among the five alternatives (finite limit,
/// decay like `Φ` or `−Φ̃`, growth like `Φ` or `−Φ̃`).
pub fn classify_infinity(
    u: &dyn Fn([f64; 2]) -> f64,
    phi: &Fundamental,
    phi_tilde: &Fundamental,
    cfg: &ClassifierConfig,
) -> Result<SingularityReport> {
    classify(End::Infinity, u, phi, phi_tilde, cfg)
}

/// Least-squares fit `u ≈ aΨ + b`: `(a, b, 1 − R²)`, or `None` when `Ψ` is
/// constant over the samples.
fn fit(psi: &[f64], u: &[f64]) -> Option<(f64, f64, f64)> {
    let n = psi.len() as f64;
    let (mp, mu) = (psi.iter().sum::<f64>() / n, u.iter().sum::<f64>() / n);
    let (mut spp, mut spu, mut suu) = (0.0, 0.0, 0.0);
    for (p, v) in psi.iter().zip(u) {
        spp += (p - mp) * (p - mp);
        spu += (p - mp) * (v - mu);
        suu += (v - mu) * (v - mu);
    }
    if spp <= 1e-24 * (mp * mp * n).max(1e-300) || suu == 0.0 {
        return None;
    }
    let a = spu / spp;
    let misfit = (1.0 - spu * spu / (spp * suu)).max(0.0);
    Some((a, mu - a * mp, misfit))
}

fn classify(
    end: End,
    u: &dyn Fn([f64; 2]) -> f64,
    phi: &Fundamental,
    phi_tilde: &Fundamental,
    cfg: &ClassifierConfig,
) -> Result<SingularityReport> {
    if cfg.fit_rings < 2 || !(cfg.max_misfit > 0.0) || !(cfg.limit_tol > 0.0) {
        return Err(Error::InvalidInput("classifier needs fit_rings >= 2 and positive thresholds".into()));
    }
    let radii = ladder(end, cfg);
    if radii.len() < cfg.fit_rings.max(3) {
        return Err(Error::InvalidInput(format!(
            "only {} ladder rings within the radius bounds; need at least {}",
            radii.len(),
            cfg.fit_rings.max(3)
        )));
    }
    let phi_fn = |x: [f64; 2]| phi.eval(x);
    let curves = radial_stats(u, Some(&phi_fn), &radii)?;
    let report = |case, a_est, u_limit, misfit: f64, marginal: bool| SingularityReport {
        case,
        a_est,
        u_limit,
        confidence: if marginal { Confidence::Marginal } else { Confidence::Clear },
        misfit,
        curves: curves.clone(),
    };
    let limit_case = if end == End::Origin { SingularityCase::Removable } else { SingularityCase::FiniteLimit };

    // constants
    let scale = 1.0 + curves.iter().map(|c| c.m.abs().max(c.big_m.abs())).fold(0.0, f64::max);
    let (lo, hi) = curves.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| (lo.min(c.m), hi.max(c.big_m)));
    if hi - lo <= 1e-12 * scale {
        return Ok(report(limit_case, None, Some(0.5 * (lo + hi)), 0.0, false));
    }

    // unbounded on both sides towards the singular end
    let tail = &curves[curves.len() - 3..];
    let osc: Vec<f64> = tail.iter().map(|c| c.big_m - c.m).collect();
    let widening = tail.windows(2).all(|w| w[1].m < w[0].m && w[1].big_m > w[0].big_m)
        && osc.windows(2).all(|w| w[1] >= 1.5 * w[0]);
    let last = &tail[2];
    if widening && last.m < 0.0 && last.big_m > 0.0 {
        return Err(Error::InvalidInput(format!(
            "u is unbounded above and below towards the singular end (min {:.3e}, max {:.3e} at r = {})",
            last.m, last.big_m, last.r
        )));
    }

    // fits against the admissible fundamental solutions
    let fit_radii = &radii[radii.len() - cfg.fit_rings..];
    let points: Vec<[f64; 2]> = fit_radii.iter().flat_map(|&r| ring_points(r, RING_SAMPLES)).collect();
    let values: Vec<f64> = points.iter().map(|&x| u(x)).collect();
    let (alpha, alpha_tilde) = (phi.alpha(), phi_tilde.alpha());
    type Candidate<'a> = (SingularityCase, bool, &'a Fundamental, f64, bool);
    let candidates: [Candidate; 4] = match end {
        // (case, admissible, fundamental, sign of Ψ, Ψ → 0 at the singular end)
        End::Origin => [
            (SingularityCase::PlusPhi, alpha >= 0.0, phi, 1.0, false),
            (SingularityCase::MinusPhiTilde, alpha_tilde >= 0.0, phi_tilde, -1.0, false),
            (SingularityCase::NegInteriorPhi, alpha < 0.0, phi, 1.0, true),
            (SingularityCase::NegInteriorPhiTilde, alpha_tilde < 0.0, phi_tilde, -1.0, true),
        ],
        End::Infinity => [
            (SingularityCase::DecayPhi, alpha > 0.0, phi, 1.0, true),
            (SingularityCase::DecayPhiTilde, alpha_tilde > 0.0, phi_tilde, -1.0, true),
            (SingularityCase::GrowPhi, alpha <= 0.0, phi, 1.0, false),
            (SingularityCase::GrowPhiTilde, alpha_tilde <= 0.0, phi_tilde, -1.0, false),
        ],
    };
    for (case, admissible, fundamental, sign, vanishing) in candidates {
        if !admissible {
            continue;
        }
        let psi: Vec<f64> = points.iter().map(|&x| sign * fundamental.eval(x)).collect();
        if let Some((a, b, misfit)) = fit(&psi, &values) {
            if a > 0.0 && misfit <= cfg.max_misfit {
                let u_limit = vanishing.then_some(b);
                return Ok(report(case, Some(a), u_limit, misfit, misfit > 0.5 * cfg.max_misfit));
            }
        }
    }

    // limit: oscillation small, or shrinking geometrically with settling means
    let last_scale = 1.0 + last.m.abs().max(last.big_m.abs());
    let rel_osc = osc[2] / last_scale;
    let means: Vec<f64> = tail.iter().map(|c| 0.5 * (c.m + c.big_m)).collect();
    let settling = osc.windows(2).all(|w| w[1] <= 0.75 * w[0])
        && (means[2] - means[1]).abs() <= (means[1] - means[0]).abs() + 1e-12 * last_scale;
    if rel_osc <= cfg.limit_tol || settling {
        let marginal = rel_osc > 0.5 * cfg.limit_tol && !settling;
        return Ok(report(limit_case, None, Some(means[2]), 0.0, marginal));
    }
    Err(Error::Inconclusive(format!(
        "no alternative matched: oscillation {:.3e} at r = {} and no admissible fit within misfit {}",
        osc[2], last.r, cfg.max_misfit
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pucci_plus() -> (Fundamental, Fundamental) {
        (Fundamental::Radial { alpha: 1.0 }, Fundamental::Radial { alpha: -0.5 })
    }

    #[test]
    fn two_phi_plus_five_is_plus_phi() {
        let (phi, tilde) = pucci_plus();
        let u = |x: [f64; 2]| 2.0 * phi.eval(x) + 5.0;
        let rep = classify_origin(&u, &phi, &tilde, &ClassifierConfig::default()).unwrap();
        assert_eq!(rep.case, SingularityCase::PlusPhi);
        assert!((rep.a_est.unwrap() - 2.0).abs() <= 0.05 * 2.0);
        assert_eq!(rep.confidence, Confidence::Clear);
        assert_eq!(rep.curves.len(), 7);
    }

    #[test]
    fn saddle_is_removable() {
        let (phi, tilde) = pucci_plus();
        let u = |x: [f64; 2]| x[0] * x[0] - x[1] * x[1];
        let rep = classify_origin(&u, &phi, &tilde, &ClassifierConfig::default()).unwrap();
        assert_eq!(rep.case, SingularityCase::Removable);
        assert!(rep.u_limit.unwrap().abs() < 1e-3);
    }

    #[test]
    fn saddle_at_infinity_is_outside_the_hypotheses() {
        let (phi, tilde) = pucci_plus();
        let u = |x: [f64; 2]| x[0] * x[0] - x[1] * x[1];
        assert!(matches!(
            classify_infinity(&u, &phi, &tilde, &ClassifierConfig::default()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn phi_decays_at_infinity() {
        let (phi, tilde) = pucci_plus();
        let u = |x: [f64; 2]| phi.eval(x);
        let rep = classify_infinity(&u, &phi, &tilde, &ClassifierConfig::default()).unwrap();
        assert_eq!(rep.case, SingularityCase::DecayPhi);
        assert!((rep.a_est.unwrap() - 1.0).abs() < 1e-9);
        assert!(rep.u_limit.unwrap().abs() < 1e-9);
    }

    #[test]
    fn constants_have_a_limit() {
        let (phi, tilde) = pucci_plus();
        let c = |_: [f64; 2]| -4.5;
        let rep = classify_infinity(&c, &phi, &tilde, &ClassifierConfig::default()).unwrap();
        assert_eq!((rep.case, rep.u_limit), (SingularityCase::FiniteLimit, Some(-4.5)));
        let rep = classify_origin(&c, &phi, &tilde, &ClassifierConfig::default()).unwrap();
        assert_eq!(rep.case, SingularityCase::Removable);
    }

    #[test]
    fn growth_without_a_matching_fundamental_is_inconclusive() {
        let (phi, tilde) = pucci_plus();
        // u = r^{-3} grows faster than any admissible Ψ
        let u = |x: [f64; 2]| x[0].hypot(x[1]).powi(-3) * (2.0 + x[0] / x[0].hypot(x[1]));
        assert!(matches!(
            classify_origin(&u, &phi, &tilde, &ClassifierConfig::default()),
            Err(Error::Inconclusive(_))
        ));
    }
}
