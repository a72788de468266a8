//! Radial calculus of `ξ_α` and the exponent of rotationally invariant
//! operators.
//!
//! For a rotationally invariant `F` the fundamental solution is radial, so the
//! exponent follows from a scalar root: `F(ã·e₁⊗e₁ − I) = 0` and `α* = ã − 2`.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::operator::{EllipticityPair, OperatorKind, OperatorSpec, SymMatrix};
use crate::sampling;

/// Smallest admissible `|x|`.
pub const MIN_RADIUS: f64 = 1e-12;
/// `|α*|` at or below this is reported as the logarithmic branch.
pub const LOG_BRANCH_CUTOFF: f64 = 1e-9;
/// Gap above which an operator is declared not rotationally invariant.
pub const SYMMETRY_TOL: f64 = 1e-9;

const ROOT_TOL: f64 = 1e-12;
const ROOT_MAX_ITER: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Power,
    Log,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    RotinvRoot,
    CircleBisection,
}

/// A computed scaling exponent.
#[derive(Clone, Debug, Serialize)]
pub struct ExponentResult {
    pub alpha_star: f64,
    pub branch: Branch,
    /// Root `ã` of the rotationally invariant map (`α* = ã − 2`).
    pub a_tilde: Option<f64>,
    pub method: Method,
    pub residual: f64,
    pub bracket_width: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PucciSign {
    Plus,
    Minus,
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `ξ_α` as a function of the radius.
#[inline]
pub fn xi_radial(alpha: f64, r: f64) -> f64 {
    if alpha > 0.0 {
        r.powf(-alpha)
    } else if alpha == 0.0 {
        -r.ln()
    } else {
        -r.powf(-alpha)
    }
}

/// `ξ_α(x)`: `|x|^{−α}`, `−log|x|` or `−|x|^{−α}` according to the sign of `α`.
pub fn xi_eval(alpha: f64, x: &[f64]) -> Result<f64> {
    let r = checked_radius(x)?;
    Ok(xi_radial(alpha, r))
}

fn checked_radius(x: &[f64]) -> Result<f64> {
    let r = norm(x);
    if !(r >= MIN_RADIUS) {
        return Err(Error::InvalidInput(format!("|x| = {r} is below {MIN_RADIUS:e}")));
    }
    Ok(r)
}

/// `D²ξ_α(x)`.
pub fn xi_hessian(alpha: f64, x: &[f64]) -> Result<SymMatrix> {
    let r = checked_radius(x)?;
    let n = x.len();
    let (radial, tangential) = if alpha == 0.0 {
        (2.0 * r.powi(-4), -r.powi(-2))
    } else {
        let a = alpha.abs();
        let p = r.powf(-alpha - 2.0);
        (a * (alpha + 2.0) * p / (r * r), -a * p)
    };
    Ok(SymMatrix::from_fn(n, |i, j| {
        radial * x[i] * x[j] + if i == j { tangential } else { 0.0 }
    }))
}

/// Closed form of `P^±_{λ,Λ}(D²ξ_α)` at `|x| = r` in dimension `n`.
pub fn pucci_of_xi(sign: PucciSign, pair: &EllipticityPair, n: usize, alpha: f64, r: f64) -> f64 {
    let (l, u) = (pair.lambda, pair.big_lambda);
    let nm1 = (n as f64) - 1.0;
    let (scale, bracket) = if alpha == 0.0 {
        let b = match sign {
            PucciSign::Minus => l * nm1 - u,
            PucciSign::Plus => u * nm1 - l,
        };
        (r.powi(-2), b)
    } else {
        let b = match sign {
            PucciSign::Minus => l * nm1 - u * (alpha + 1.0),
            PucciSign::Plus => u * nm1 - l * (alpha + 1.0),
        };
        (alpha.abs() * r.powf(-alpha - 2.0), b)
    };
    scale * bracket
}

/// The rescaling `T^α_σ u(x) = σ^α u(σx)` (`u(σx) + log σ` when `α = 0`).
pub fn rescale_apply<U>(alpha: f64, sigma: f64, u: U) -> Result<impl Fn(&[f64]) -> f64>
where
    U: Fn(&[f64]) -> f64,
{
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidInput(format!("rescaling factor must be positive (got {sigma})")));
    }
    Ok(move |x: &[f64]| {
        let y: Vec<f64> = x.iter().map(|v| sigma * v).collect();
        if alpha == 0.0 {
            u(&y) + sigma.ln()
        } else {
            sigma.powf(alpha) * u(&y)
        }
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SymmetryReport {
    pub symmetric: bool,
    pub worst_gap: f64,
}

/// Samples `|F(a·y⊗y − I) − F(a·z⊗z − I)|` over `a ∈ [1, Λ/λ(n−1)+2]` and unit
/// `y`, `z`. The first probe is always `a = 3`, `y = e₁`, `z = e₂`.
pub fn is_rotationally_symmetric(f: &OperatorSpec, n_samples: usize, seed: u64) -> SymmetryReport {
    let n = f.dim();
    let pair = f.pair();
    let a_max = pair.ratio() * (n as f64 - 1.0) + 2.0;
    let mut rng = sampling::rng(seed);
    let eye = SymMatrix::identity(n);
    let probe = |a: f64, y: &[f64], z: &[f64]| {
        let fy = f.eval_unchecked(&SymMatrix::outer(y).scale(a).sub(&eye));
        let fz = f.eval_unchecked(&SymMatrix::outer(z).scale(a).sub(&eye));
        (fy - fz).abs()
    };
    let mut e1 = vec![0.0; n];
    let mut e2 = vec![0.0; n];
    e1[0] = 1.0;
    e2[1] = 1.0;
    let mut worst = probe(3.0, &e1, &e2);
    for _ in 0..n_samples.max(1) {
        let a = rng.random_range(1.0..a_max);
        let y = sampling::unit_vector(&mut rng, n);
        let z = sampling::unit_vector(&mut rng, n);
        worst = worst.max(probe(a, &y, &z));
    }
    SymmetryReport { symmetric: worst <= SYMMETRY_TOL, worst_gap: worst }
}

/// Exponent of a rotationally invariant operator by bisection on
/// `a ↦ F(a·e₁⊗e₁ − I)`, which decreases with slope in `[−Λ, −λ]`.
pub fn exponent_rotinv(f: &OperatorSpec) -> Result<ExponentResult> {
    let sym = is_rotationally_symmetric(f, 64, 0x5eed);
    if !sym.symmetric {
        return Err(Error::InvalidInput(format!(
            "operator is not rotationally invariant (gap {:e})",
            sym.worst_gap
        )));
    }
    let n = f.dim();
    let pair = f.pair();
    let eye = SymMatrix::identity(n);
    let mut e1 = vec![0.0; n];
    e1[0] = 1.0;
    let e11 = SymMatrix::outer(&e1);
    let g = |a: f64| f.eval_unchecked(&e11.scale(a).sub(&eye));

    let (mut lo, mut hi) = (0.0, pair.ratio() * (n as f64 - 1.0) + 2.0);
    let (g_lo, g_hi) = (g(lo), g(hi));
    if !(g_lo > 0.0 && g_hi < 0.0) {
        return Err(Error::Internal(format!(
            "root map not bracketed: F at a={lo} is {g_lo}, at a={hi} is {g_hi}"
        )));
    }
    let mut iterations = 0;
    while hi - lo > ROOT_TOL && iterations < ROOT_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    let a_tilde = 0.5 * (lo + hi);
    let raw = a_tilde - 2.0;
    let branch = if raw.abs() <= LOG_BRANCH_CUTOFF { Branch::Log } else { Branch::Power };
    Ok(ExponentResult {
        alpha_star: if branch == Branch::Log { 0.0 } else { raw },
        branch,
        a_tilde: Some(a_tilde),
        method: Method::RotinvRoot,
        residual: g(a_tilde).abs(),
        bracket_width: hi - lo,
    })
}

/// Closed-form exponent when one is known: Pucci operators, multiples of
/// the identity, and spectral operators.
pub fn known_exponent(f: &OperatorSpec) -> Option<f64> {
    let n = f.dim() as f64;
    match &f.kind {
        OperatorKind::PucciMinus(p) => Some(p.lambda * (n - 1.0) / p.big_lambda - 1.0),
        OperatorKind::PucciPlus(p) => Some(p.big_lambda * (n - 1.0) / p.lambda - 1.0),
        OperatorKind::Linear(a) => {
            // −tr(A·D²u) with A = cI is a multiple of the Laplacian
            let c = a.get(0, 0);
            let scalar = (0..f.dim()).all(|i| (0..f.dim()).all(|j| a.get(i, j) == if i == j { c } else { 0.0 }));
            scalar.then_some(n - 2.0)
        }
        OperatorKind::EigenSymmetric(c) => {
            // a·e₁⊗e₁ − I has eigenvalues −1 (n−1 times) below a − 1
            let (top, rest) = c.split_last()?;
            Some(rest.iter().sum::<f64>() / top - 1.0)
        }
        OperatorKind::SupInf(_) | OperatorKind::InfSup(_) => None,
    }
}
