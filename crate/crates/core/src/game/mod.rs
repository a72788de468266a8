//! The two-player stochastic differential game `dX = σ(a, b) dW` on an
//! annulus, in which Player I wants `X` to reach the inner sphere first and
//! Player II wants it to reach the outer one.
//!
//! [`build_isaacs_from_controls`] returns the upper and lower Isaacs
//! operators `F⁺(M) = −min_a max_b ½tr(σσᵀM)` and
//! `F⁻(M) = −max_b min_a ½tr(σσᵀM)`. The hitting probability under optimal
//! feedback play solves the dual equation, which [`value_operator`] returns.
//! For a single-controller game that is the familiar Bellman operator, e.g.
//! `P⁺` when Player II picks from `{λI ⪯ D ⪯ ΛI}`.

mod scaling;
mod sim;

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{eigen_decomposition, EllipticityPair, OperatorSpec, SymMatrix, FAMILY_TOL};
use crate::radial::{xi_hessian, PucciSign};

pub use scaling::{classify_recurrence, recover_exponent_scaling, LadderPoint, Recurrence, ScalingFit};
pub use sim::{estimate_hit_prob, simulate_exit, ExitKind, ExitOutcome, HitStats, SimConfig, TIMEOUT_WARN_FRACTION};

/// Default number of rank-one directions in [`GameSpec::pucci`].
pub const DEFAULT_CONTROL_ANGLES: usize = 64;

/// Controls and volatilities of a game.
#[derive(Clone, Debug)]
pub struct GameSpec {
    dim: usize,
    noise_dim: usize,
    pair: EllipticityPair,
    /// `σ(a, b)` as a row-major `n × d` block, indexed `[a][b]`.
    sigma: Vec<Vec<Vec<f64>>>,
    diffusion: Vec<Vec<SymMatrix>>,
    /// `w` with `tr(D(a,b)·H) = w·packed(H)`.
    drift_weights: Vec<Vec<Vec<f64>>>,
}

impl GameSpec {
    /// Builds a game from `σ(a, b)`, indexed `[a][b]`. Every `D = ½σσᵀ` must
    /// satisfy `λI ⪯ D ⪯ ΛI`.
    pub fn new(sigma: Vec<Vec<DMatrix<f64>>>, pair: EllipticityPair) -> Result<Self> {
        let first = sigma
            .first()
            .and_then(|row| row.first())
            .ok_or_else(|| Error::InvalidInput("controls_A and controls_B must be nonempty".into()))?;
        let (dim, noise_dim) = first.shape();
        if !(crate::operator::MIN_DIM..=crate::operator::MAX_DIM).contains(&dim) {
            return Err(Error::InvalidInput(format!("game dimension {dim} out of range")));
        }
        if noise_dim == 0 || noise_dim > dim {
            return Err(Error::InvalidInput(format!("noise dimension {noise_dim} must be in 1..={dim}")));
        }
        let n_b = sigma[0].len();
        let mut flat = Vec::with_capacity(sigma.len());
        let mut diffusion = Vec::with_capacity(sigma.len());
        for (a, row) in sigma.iter().enumerate() {
            if row.len() != n_b {
                return Err(Error::InvalidInput(format!("sigma[{a}] has {} entries, expected {n_b}", row.len())));
            }
            let mut flat_row = Vec::with_capacity(n_b);
            let mut d_row = Vec::with_capacity(n_b);
            for (b, s) in row.iter().enumerate() {
                if s.shape() != (dim, noise_dim) {
                    return Err(Error::InvalidInput(format!(
                        "sigma[{a}][{b}] is {:?}, expected ({dim}, {noise_dim})",
                        s.shape()
                    )));
                }
                if s.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidInput(format!("sigma[{a}][{b}] has non-finite entries")));
                }
                let dd = s * s.transpose() * 0.5;
                let d = SymMatrix::from_fn(dim, |i, j| 0.5 * (dd[(i, j)] + dd[(j, i)]));
                check_ellipticity(&d, &pair, a, b)?;
                flat_row.push((0..dim).flat_map(|i| (0..noise_dim).map(move |j| (i, j))).map(|ij| s[ij]).collect());
                d_row.push(d);
            }
            flat.push(flat_row);
            diffusion.push(d_row);
        }
        let drift_weights = diffusion
            .iter()
            .map(|row| row.iter().map(|d| trace_weights(d)).collect())
            .collect();
        Ok(GameSpec { dim, noise_dim, pair, sigma: flat, diffusion, drift_weights })
    }

    /// Builds a game from diffusion matrices, with `σ = √(2D)`.
    pub fn from_diffusions(diffusion: Vec<Vec<SymMatrix>>, pair: EllipticityPair) -> Result<Self> {
        let sigma = diffusion
            .iter()
            .map(|row| row.iter().map(sqrt_two_d).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Self::new(sigma, pair)
    }

    /// Singleton controls with `σ = √2·I`, i.e. `D = I` and generator `Δ`.
    pub fn brownian(dim: usize) -> Result<Self> {
        let pair = EllipticityPair::new(1.0, 1.0)?;
        Self::from_diffusions(vec![vec![SymMatrix::identity(dim)]], pair)
    }

    /// A single controller choosing `D` from
    /// `{λI, ΛI} ∪ {λI + (Λ−λ)eeᵀ}`, whose hitting probability solves
    /// `P^±(D²v) = 0`. For `P⁺` the controller is the minimizer (Player II,
    /// escaping to the outer sphere); for `P⁻` it is the maximizer.
    ///
    /// In the plane `e` runs over `angles` equispaced directions in `[0, π)`;
    /// in higher dimensions over the axes and the diagonals `(eᵢ ± eⱼ)/√2`.
    pub fn pucci(sign: PucciSign, pair: EllipticityPair, dim: usize, angles: usize) -> Result<Self> {
        if dim == 2 && angles == 0 {
            return Err(Error::InvalidInput("need at least one control angle".into()));
        }
        let mut family = vec![SymMatrix::identity(dim).scale(pair.lambda), SymMatrix::identity(dim).scale(pair.big_lambda)];
        for e in control_directions(dim, angles) {
            family.push(SymMatrix::identity(dim).scale(pair.lambda).add(&SymMatrix::outer(&e).scale(pair.big_lambda - pair.lambda)));
        }
        let diffusion = match sign {
            PucciSign::Plus => vec![family],
            PucciSign::Minus => family.into_iter().map(|d| vec![d]).collect(),
        };
        Self::from_diffusions(diffusion, pair)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn pair(&self) -> EllipticityPair {
        self.pair
    }

    /// `|A|`.
    pub fn n_a(&self) -> usize {
        self.diffusion.len()
    }

    /// `|B|`.
    pub fn n_b(&self) -> usize {
        self.diffusion[0].len()
    }

    /// `D(a, b) = ½σσᵀ`.
    pub fn diffusion(&self, a: usize, b: usize) -> &SymMatrix {
        &self.diffusion[a][b]
    }

    /// `σ(a, b)`, row-major `n × d`.
    pub fn sigma(&self, a: usize, b: usize) -> &[f64] {
        &self.sigma[a][b]
    }
}

fn trace_weights(d: &SymMatrix) -> Vec<f64> {
    let n = d.dim();
    let mut w = Vec::with_capacity(d.packed().len());
    for i in 0..n {
        for j in i..n {
            w.push(if i == j { d.get(i, i) } else { 2.0 * d.get(i, j) });
        }
    }
    w
}

fn check_ellipticity(d: &SymMatrix, pair: &EllipticityPair, a: usize, b: usize) -> Result<()> {
    let eig = crate::operator::eigenvalues_sym(d);
    let tol = FAMILY_TOL * (1.0 + pair.big_lambda);
    let (lo, hi) = (eig[0], eig[eig.len() - 1]);
    if lo < pair.lambda - tol || hi > pair.big_lambda + tol {
        return Err(Error::InvalidInput(format!(
            "D({a},{b}) has eigenvalues [{lo}, {hi}] outside [{}, {}]",
            pair.lambda, pair.big_lambda
        )));
    }
    Ok(())
}

/// Symmetric square root of `2D`.
fn sqrt_two_d(d: &SymMatrix) -> Result<DMatrix<f64>> {
    let n = d.dim();
    let (values, vectors) = eigen_decomposition(d);
    if values.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::InvalidInput(format!("diffusion matrix is not positive semidefinite: {d:?}")));
    }
    let mut s = DMatrix::zeros(n, n);
    for (v, e) in values.iter().zip(&vectors) {
        let w = (2.0 * v).sqrt();
        for i in 0..n {
            for j in 0..n {
                s[(i, j)] += w * e[i] * e[j];
            }
        }
    }
    Ok(s)
}

fn control_directions(dim: usize, angles: usize) -> Vec<Vec<f64>> {
    if dim == 2 {
        return (0..angles)
            .map(|k| {
                let t = PI * k as f64 / angles as f64;
                vec![t.cos(), t.sin()]
            })
            .collect();
    }
    let mut dirs = Vec::new();
    for i in 0..dim {
        dirs.push((0..dim).map(|k| if k == i { 1.0 } else { 0.0 }).collect());
    }
    let s = 0.5f64.sqrt();
    for i in 0..dim {
        for j in (i + 1)..dim {
            for sign in [1.0, -1.0] {
                dirs.push(
                    (0..dim)
                        .map(|k| if k == i { s } else if k == j { sign * s } else { 0.0 })
                        .collect(),
                );
            }
        }
    }
    dirs
}

/// Which Isaacs operator to build.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    /// `F⁺(M) = −min_a max_b ½tr(σσᵀM)`.
    Upper,
    /// `F⁻(M) = −max_b min_a ½tr(σσᵀM)`.
    Lower,
}

/// The Isaacs operator of `game`: `F⁺` is a SupInf over families indexed by
/// `a`, `F⁻` an InfSup over families indexed by `b`.
pub fn build_isaacs_from_controls(game: &GameSpec, convention: Convention) -> Result<OperatorSpec> {
    match convention {
        Convention::Upper => OperatorSpec::sup_inf(game.diffusion.clone(), game.pair),
        Convention::Lower => {
            let families = (0..game.n_b())
                .map(|b| (0..game.n_a()).map(|a| game.diffusion[a][b]).collect())
                .collect();
            OperatorSpec::inf_sup(families, game.pair)
        }
    }
}

/// The operator whose Dirichlet problem (`1` inside, `0` outside) the
/// hitting probability solves when Player I maximizes and Player II
/// minimizes: the dual of [`build_isaacs_from_controls`].
pub fn value_operator(game: &GameSpec, convention: Convention) -> Result<OperatorSpec> {
    Ok(build_isaacs_from_controls(game, convention)?.dual())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Player {
    /// Chooses `a`; wants the inner sphere.
    #[serde(rename = "I")]
    One,
    /// Chooses `b`; wants the outer sphere.
    #[serde(rename = "II")]
    Two,
}

/// How a feedback policy picks its control.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyRule {
    /// `argmax_a min_b tr(D(a,b)·D²Φ(x))`.
    ArgmaxDrift,
    /// `argmin_b max_a tr(D(a,b)·D²Φ(x))`.
    ArgminDrift,
    /// Always the same control.
    Fixed(usize),
}

/// `x ↦ D²Φ(x)`.
pub type HessianFn = Arc<dyn Fn(&[f64]) -> SymMatrix + Send + Sync>;

/// A stationary feedback rule `x ↦ control index`.
#[derive(Clone)]
pub struct FeedbackPolicy {
    pub player: Player,
    pub rule: PolicyRule,
    hessian: Option<HessianFn>,
}

impl std::fmt::Debug for FeedbackPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FeedbackPolicy").field("player", &self.player).field("rule", &self.rule).finish()
    }
}

impl FeedbackPolicy {
    pub fn fixed(player: Player, index: usize) -> Self {
        FeedbackPolicy { player, rule: PolicyRule::Fixed(index), hessian: None }
    }

    /// The control chosen at `x`. Ties go to the lowest index.
    pub fn choose(&self, game: &GameSpec, x: &[f64]) -> usize {
        let hess = match (self.rule, &self.hessian) {
            (PolicyRule::Fixed(i), _) => return i,
            (_, Some(h)) => h(x),
            (_, None) => return 0,
        };
        let own = match self.player {
            Player::One => game.n_a(),
            Player::Two => game.n_b(),
        };
        let other = match self.player {
            Player::One => game.n_b(),
            Player::Two => game.n_a(),
        };
        if own == 1 {
            return 0;
        }
        let h = hess.packed();
        let drift = |mine: usize, theirs: usize| {
            let (a, b) = match self.player {
                Player::One => (mine, theirs),
                Player::Two => (theirs, mine),
            };
            game.drift_weights[a][b].iter().zip(h).map(|(w, h)| w * h).sum::<f64>()
        };
        let maximize = self.rule == PolicyRule::ArgmaxDrift;
        let mut best = 0;
        let mut best_value = if maximize { f64::NEG_INFINITY } else { f64::INFINITY };
        for mine in 0..own {
            let worst = (0..other).map(|t| drift(mine, t));
            let value = if maximize {
                worst.fold(f64::INFINITY, f64::min)
            } else {
                worst.fold(f64::NEG_INFINITY, f64::max)
            };
            if (maximize && value > best_value) || (!maximize && value < best_value) {
                best = mine;
                best_value = value;
            }
        }
        best
    }
}

/// Player I maximizes `min_b tr(D·D²Φ)`, pushing `Φ(X)` up towards the
/// inner sphere; Player II minimizes `max_a tr(D·D²Φ)`.
/// The game only fixes which controls exist; the choice happens in
/// [`FeedbackPolicy::choose`].
pub fn optimal_feedback_policy(_game: &GameSpec, phi_hessian: HessianFn, player: Player) -> FeedbackPolicy {
    let rule = match player {
        Player::One => PolicyRule::ArgmaxDrift,
        Player::Two => PolicyRule::ArgminDrift,
    };
    FeedbackPolicy { player, rule, hessian: Some(phi_hessian) }
}

/// `D²ξ_α` as a [`HessianFn`]; zero where it is undefined (the origin).
pub fn radial_hessian(alpha: f64, dim: usize) -> HessianFn {
    Arc::new(move |x: &[f64]| xi_hessian(alpha, x).unwrap_or_else(|_| SymMatrix::zeros(dim)))
}
