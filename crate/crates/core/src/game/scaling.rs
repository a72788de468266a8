//! Exponent recovery from the decay `P(τ_r < τ_R) ∼ r^{α*}` and the
//! recurrence classification by the sign of `α*`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{estimate_hit_prob, FeedbackPolicy, GameSpec, SimConfig};

/// One rung of a ladder run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LadderPoint {
    pub r: f64,
    pub p_hat: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    /// Weighted least-squares slope of `log p̂` against `log r`.
    pub slope: f64,
    pub stderr: f64,
    pub points: Vec<LadderPoint>,
    /// Reduced χ² of the power law `log p = s·log r + c`.
    pub power_chi2: f64,
    /// Reduced χ² of the logarithmic law `1/p = s·log r + c`.
    pub log_chi2: f64,
}

struct LineFit {
    slope: f64,
    slope_var: f64,
    chi2: f64,
}

/// Weighted straight-line fit with known variances.
fn weighted_line(x: &[f64], y: &[f64], var: &[f64]) -> LineFit {
    let w: Vec<f64> = var.iter().map(|v| 1.0 / v).collect();
    let sw: f64 = w.iter().sum();
    let xm = w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() / sw;
    let ym = w.iter().zip(y).map(|(w, y)| w * y).sum::<f64>() / sw;
    let sxx: f64 = w.iter().zip(x).map(|(w, x)| w * (x - xm).powi(2)).sum();
    let sxy: f64 = w.iter().zip(x).zip(y).map(|((w, x), y)| w * (x - xm) * (y - ym)).sum();
    let slope = sxy / sxx;
    let chi2 = w
        .iter()
        .zip(x)
        .zip(y)
        .map(|((w, x), y)| w * (y - ym - slope * (x - xm)).powi(2))
        .sum::<f64>()
        / (x.len() as f64 - 2.0).max(1.0);
    LineFit { slope, slope_var: 1.0 / sxx, chi2 }
}

/// Estimates `P(τ_r < τ_R)` at every `r` in the ladder and fits
/// `log p̂ = α·log r + c`.
///
/// `template` supplies `dt_base`, `n_paths`, `max_time` and the seed; rung
/// `k` uses seed `master_seed + k`. The fit is rejected with
/// [`Error::NotPowerLaw`] when `1/p̂` is better explained as linear in
/// `log r`, which is the decay of the `α* = 0` case. The slope error is
/// inflated by `√χ²` when the power-law misfit exceeds the noise.
#[allow(clippy::too_many_arguments)]
pub fn recover_exponent_scaling(
    game: &GameSpec,
    pol_i: &FeedbackPolicy,
    pol_ii: &FeedbackPolicy,
    r_ladder: &[f64],
    big_r: f64,
    x0: &[f64],
    template: &SimConfig,
) -> Result<ScalingFit> {
    if r_ladder.len() < 3 {
        return Err(Error::InvalidInput(format!("need at least 3 rungs (got {})", r_ladder.len())));
    }
    if r_ladder.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidInput("r ladder must be strictly decreasing".into()));
    }
    let mut points = Vec::with_capacity(r_ladder.len());
    let mut counts = Vec::with_capacity(r_ladder.len());
    for (k, &r) in r_ladder.iter().enumerate() {
        let cfg = SimConfig {
            r,
            big_r,
            x0: x0.to_vec(),
            master_seed: template.master_seed.wrapping_add(k as u64),
            ..template.clone()
        };
        let stats = estimate_hit_prob(game, pol_i, pol_ii, &cfg)?;
        if stats.n_inner == 0 {
            return Err(Error::LadderTooDeep { radius: r });
        }
        counts.push((stats.n_inner + stats.n_outer) as f64);
        points.push(LadderPoint { r, p_hat: stats.p_hat, stderr: stats.stderr });
    }
    let x: Vec<f64> = points.iter().map(|p| p.r.ln()).collect();
    // delta-method variances of log p̂ and 1/p̂; p̂ = 1 would give zero
    let q = |p: f64| (1.0 - p).max(0.5 / counts.iter().copied().fold(f64::INFINITY, f64::min));
    let log_var: Vec<f64> = points.iter().zip(&counts).map(|(p, n)| q(p.p_hat) / (p.p_hat * n)).collect();
    let inv_var: Vec<f64> = points.iter().zip(&counts).map(|(p, n)| q(p.p_hat) / (p.p_hat.powi(3) * n)).collect();
    let power = weighted_line(&x, &points.iter().map(|p| p.p_hat.ln()).collect::<Vec<_>>(), &log_var);
    let log = weighted_line(&x, &points.iter().map(|p| 1.0 / p.p_hat).collect::<Vec<_>>(), &inv_var);
    if log.chi2 < power.chi2 {
        return Err(Error::NotPowerLaw(format!(
            "1/p is linear in log r (reduced chi2 {:.3e}) better than log p (reduced chi2 {:.3e})",
            log.chi2, power.chi2
        )));
    }
    Ok(ScalingFit {
        slope: power.slope,
        stderr: (power.slope_var * power.chi2.max(1.0)).sqrt(),
        points,
        power_chi2: power.chi2,
        log_chi2: log.chi2,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recurrence {
    /// `α* > 0`: the process eventually leaves every bounded set.
    Transient,
    /// `α* < 0`: Player I can force a return to the origin.
    StronglyRecurrent,
    /// `α* = 0`: every neighbourhood of the origin is visited infinitely
    /// often, the origin itself never.
    NeighborhoodRecurrent,
}

pub fn classify_recurrence(alpha_star: f64, tol: f64) -> Recurrence {
    if alpha_star.abs() <= tol {
        Recurrence::NeighborhoodRecurrent
    } else if alpha_star > 0.0 {
        Recurrence::Transient
    } else {
        Recurrence::StronglyRecurrent
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recurrence_by_sign() {
        assert_eq!(classify_recurrence(3.0, 1e-9), Recurrence::Transient);
        assert_eq!(classify_recurrence(-0.5, 1e-9), Recurrence::StronglyRecurrent);
        assert_eq!(classify_recurrence(0.0, 1e-9), Recurrence::NeighborhoodRecurrent);
        assert_eq!(classify_recurrence(5e-10, 1e-9), Recurrence::NeighborhoodRecurrent);
    }

    #[test]
    fn line_fit_recovers_exact_slope() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|x| 2.5 * x - 1.0).collect();
        let fit = weighted_line(&x, &y, &[1.0, 2.0, 0.5, 1.0]);
        assert!((fit.slope - 2.5).abs() < 1e-14);
        assert!(fit.chi2 < 1e-25);
    }

    #[test]
    fn ladder_must_decrease() {
        let game = GameSpec::brownian(3).unwrap();
        let p = FeedbackPolicy::fixed(super::super::Player::One, 0);
        let q = FeedbackPolicy::fixed(super::super::Player::Two, 0);
        let cfg = SimConfig::new(&game, 0.2, 1.0, vec![0.5, 0.0, 0.0], 100, 0).unwrap();
        let err = recover_exponent_scaling(&game, &p, &q, &[0.1, 0.2, 0.05], 1.0, &[0.5, 0.0, 0.0], &cfg);
        assert!(matches!(err, Err(Error::InvalidInput(_))));
    }
}
