//! Ring statistics: `m(r) = min u`, `M(r) = max u` and the ratios
//! `ρ(r) = min u/Φ`, `ρ̄(r) = max u/Φ` on circles of radius `r`.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};

/// Sample angles per circle.
pub const RING_SAMPLES: usize = 720;

/// One circle's statistics. Ratios are `None` where they are undefined.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RadialRow {
    pub r: f64,
    pub m: f64,
    #[serde(rename = "M")]
    pub big_m: f64,
    pub rho: Option<f64>,
    #[serde(rename = "rhobar")]
    pub rho_bar: Option<f64>,
    /// `M/m`, when `m ≠ 0`.
    pub ratio: Option<f64>,
}

impl RadialRow {
    /// `(ρ, ρ̄)`, or an error when `Φ` vanishes on the circle.
    pub fn rho_pair(&self) -> Result<(f64, f64)> {
        match (self.rho, self.rho_bar) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => Err(Error::UndefinedRatio { radius: self.r }),
        }
    }
}

/// `x = r(cos θ_k, sin θ_k)` with `θ_k = 2πk/samples`.
pub fn ring_points(r: f64, samples: usize) -> impl Iterator<Item = [f64; 2]> {
    (0..samples).map(move |k| {
        let t = 2.0 * PI * k as f64 / samples as f64;
        [r * t.cos(), r * t.sin()]
    })
}

/// Statistics of `u` on each circle in `radii`, with ratios against `phi`
/// when given. `Φ` counts as vanishing on a circle if it changes sign there
/// or some sample is within `1e−12·max|Φ|` of zero.
pub fn radial_stats(
    u: &dyn Fn([f64; 2]) -> f64,
    phi: Option<&dyn Fn([f64; 2]) -> f64>,
    radii: &[f64],
) -> Result<Vec<RadialRow>> {
    radii
        .iter()
        .map(|&r| {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::InvalidInput(format!("ring radius must be positive and finite (got {r})")));
            }
            let values: Vec<f64> = ring_points(r, RING_SAMPLES).map(u).collect();
            if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("u is not finite on the circle r = {r} (sample {bad})")));
            }
            let m = values.iter().copied().fold(f64::INFINITY, f64::min);
            let big_m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let (rho, rho_bar) = match phi {
                Some(phi) => ratios(&values, &ring_points(r, RING_SAMPLES).map(phi).collect::<Vec<_>>()),
                None => (None, None),
            };
            let ratio = (m != 0.0).then(|| big_m / m);
            Ok(RadialRow { r, m, big_m, rho, rho_bar, ratio })
        })
        .collect()
}

fn ratios(u: &[f64], phi: &[f64]) -> (Option<f64>, Option<f64>) {
    let scale = phi.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let positive = phi.iter().all(|&v| v > 1e-12 * scale);
    let negative = phi.iter().all(|&v| v < -1e-12 * scale);
    if !(positive || negative) || !scale.is_finite() {
        return (None, None);
    }
    let q = u.iter().zip(phi).map(|(a, b)| a / b);
    let (lo, hi) = q.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    (Some(lo), Some(hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radial::xi_radial;

    fn norm(x: [f64; 2]) -> f64 {
        x[0].hypot(x[1])
    }

    #[test]
    fn radial_phi_has_equal_extremes() {
        let phi = |x: [f64; 2]| xi_radial(1.0, norm(x));
        let rows = radial_stats(&phi, Some(&phi), &[0.5, 0.25, 0.125]).unwrap();
        for row in rows {
            assert!((row.m - 1.0 / row.r).abs() < 1e-12);
            assert!((row.big_m - 1.0 / row.r).abs() < 1e-12);
            assert_eq!(row.rho_pair().unwrap(), (1.0, 1.0));
        }
    }

    #[test]
    fn rho_tends_to_the_coefficient() {
        let phi = |x: [f64; 2]| xi_radial(1.0, norm(x));
        let u = |x: [f64; 2]| 3.0 * phi(x) + 7.0;
        let radii: Vec<f64> = (2..=8).map(|k| 0.5f64.powi(k)).collect();
        let rows = radial_stats(&u, Some(&phi), &radii).unwrap();
        let gaps: Vec<f64> = rows.iter().map(|r| (r.rho.unwrap() - 3.0).abs()).collect();
        assert!(gaps.windows(2).all(|w| w[1] < w[0]));
        assert!(gaps.last().unwrap() < &0.03);
    }

    #[test]
    fn vanishing_phi_gives_undefined_ratio() {
        // −log|x| vanishes on the unit circle
        let phi = |x: [f64; 2]| -norm(x).ln();
        let rows = radial_stats(&|_| 1.0, Some(&phi), &[1.0, 0.5]).unwrap();
        assert!(matches!(rows[0].rho_pair(), Err(Error::UndefinedRatio { radius }) if radius == 1.0));
        assert!(rows[1].rho_pair().is_ok());
        // and so does an angular profile with a sign change
        let rows = radial_stats(&|_| 1.0, Some(&|x: [f64; 2]| x[0]), &[0.5]).unwrap();
        assert!(rows[0].rho.is_none());
    }
}
