//! Monotone wide-stencil scheme for `F(D²u) = 0` with Dirichlet data.
//!
//! Every operator is written as an Isaacs family of linear controls. Each
//! control is discretized by [`direction_decomposition`], which yields
//! `F_h(u)(x) = sup_i inf_j Σ_k w_ijk (2u(x) − u(x+hd_k) − u(x−hd_k))`.
//! For fixed neighbours `F_h` is increasing in `u(x)`, and the local
//! equation `F_h = 0` has the closed form `u(x) = min_i max_j b_ij/s_ij`.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::operator::{OperatorKind, OperatorSpec, SymMatrix};

use super::grid::{AnnulusGrid, Field, NodeKind};
use super::stencil::direction_decomposition;

/// How unknowns are updated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Relaxation {
    /// Nested policy iteration with a Krylov solve per policy.
    Policy,
    /// Sequential over-relaxed local solves in lattice order.
    Sor,
    /// Simultaneous pseudo-time step `u ← u − τ F_h(u)`.
    Jacobi,
}

/// How second differences reach the boundary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryTreatment {
    /// Stencil arms that leave the annulus are cut at the circle and use
    /// the boundary value there (unequal-arm second differences).
    Fitted,
    /// Band nodes carry the boundary value at their radial projection and
    /// are used as ordinary neighbours.
    Projected,
}

#[derive(Clone, Debug, Serialize)]
pub struct SolverConfig {
    pub relaxation: Relaxation,
    pub boundary: BoundaryTreatment,
    /// Pseudo-time safety factor (Jacobi).
    pub pseudo_dt_safety: f64,
    /// Over-relaxation factor (SOR); `None` picks one from the grid.
    pub omega: Option<f64>,
    /// Converged when `‖F_h(u)‖_∞ ≤ tol/h`.
    pub tol: f64,
    pub max_iter: usize,
    /// Smallest stencil width tried by the direction decomposition.
    pub stencil_width: usize,
    /// Angles used to sample the rank-one controls of Pucci and spectral
    /// operators.
    pub control_angles: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            relaxation: Relaxation::Policy,
            boundary: BoundaryTreatment::Fitted,
            pseudo_dt_safety: 0.9,
            omega: None,
            tol: 1e-8,
            max_iter: 200_000,
            stencil_width: 2,
            control_angles: 64,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub residual: f64,
    pub relaxation: Relaxation,
    pub boundary: BoundaryTreatment,
    pub omega: f64,
    pub n_controls: usize,
    pub n_directions: usize,
    /// Largest stencil width any control needed.
    pub width_used: usize,
}

/// One linear control: second differences along direction slots
/// `terms[start..end]`; `diag` is the interior coefficient of `u(x)`.
#[derive(Clone, Copy, Debug)]
struct Control {
    start: usize,
    end: usize,
    diag: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Outer {
    /// `sup_i inf_j`.
    SupInf,
    /// `inf_i sup_j`.
    InfSup,
}

/// Unequal-arm second difference `β₊u(plus) + β₋u(minus) − γu(x)`, scaled so
/// that equal unit arms give `β = 1`, `γ = 2`.
#[derive(Clone, Copy, Debug)]
struct Arm {
    plus: usize,
    minus: usize,
    beta_plus: f64,
    beta_minus: f64,
    gamma: f64,
}

struct Local {
    value: f64,
    root: f64,
    policy: usize,
    max_diag: f64,
}

/// Discrete Isaacs operator on a fixed lattice.
struct DiscreteOperator {
    outer: Outer,
    /// `families[i]` is a range of indices into `controls`.
    families: Vec<std::ops::Range<usize>>,
    controls: Vec<Control>,
    terms: Vec<(usize, f64)>,
    dirs: Vec<[i32; 2]>,
    offsets: Vec<isize>,
    width: usize,
    big_lambda: f64,
    /// Per active slot: start of its arms in `arms`, or `None` when every
    /// arm is a full lattice step to an active or band node.
    near: Vec<Option<usize>>,
    arms: Vec<Arm>,
    /// Per active slot: factor bringing rows with cut arms (whose
    /// diagonal grows like `1/t`) back to the interior scale, so that
    /// residuals are comparable across the grid.
    row_scale: Vec<f64>,
}

fn rank_one_family(a_along: f64, a_across: f64, angles: usize) -> Vec<SymMatrix> {
    (0..angles)
        .map(|k| {
            let t = PI * k as f64 / angles as f64;
            let (c, s) = (t.cos(), t.sin());
            SymMatrix::new2(
                a_along * c * c + a_across * s * s,
                (a_along - a_across) * c * s,
                a_along * s * s + a_across * c * c,
            )
        })
        .collect()
}

/// The operator as `(outer, families)` of linear controls.
fn isaacs_form(f: &OperatorSpec, angles: usize) -> (Outer, Vec<Vec<SymMatrix>>) {
    let singletons = |ms: Vec<SymMatrix>| ms.into_iter().map(|m| vec![m]).collect::<Vec<_>>();
    match &f.kind {
        OperatorKind::Linear(a) => (Outer::SupInf, vec![vec![*a]]),
        OperatorKind::SupInf(fams) => (Outer::SupInf, fams.clone()),
        OperatorKind::InfSup(fams) => (Outer::InfSup, fams.clone()),
        OperatorKind::PucciPlus(p) | OperatorKind::PucciMinus(p) => {
            let mut members = vec![SymMatrix::identity(2).scale(p.lambda), SymMatrix::identity(2).scale(p.big_lambda)];
            members.extend(rank_one_family(p.lambda, p.big_lambda, angles));
            let outer = if matches!(f.kind, OperatorKind::PucciPlus(_)) { Outer::SupInf } else { Outer::InfSup };
            (outer, singletons(members))
        }
        OperatorKind::EigenSymmetric(c) => {
            // −(c₁μ₁ + c₂μ₂) is the sup (c₁ ≥ c₂) or inf (c₁ < c₂) of −tr(AM)
            // over A with eigenvalues {c₁, c₂}
            let members = rank_one_family(c[0], c[1], angles);
            let outer = if c[0] >= c[1] { Outer::SupInf } else { Outer::InfSup };
            (outer, singletons(members))
        }
    }
}

/// Smallest `s ∈ (0, 1]` with `|x + s·v| = rho`, for `x` strictly inside the
/// annulus and `x + v` outside it.
fn crossing(x: [f64; 2], v: [f64; 2], rho: f64) -> f64 {
    let a = v[0] * v[0] + v[1] * v[1];
    let b = x[0] * v[0] + x[1] * v[1];
    let c = x[0] * x[0] + x[1] * x[1] - rho * rho;
    let disc = (b * b - a * c).max(0.0).sqrt();
    let s = if c < 0.0 {
        // leaving the outer disk: the positive root
        if b >= 0.0 { -c / (b + disc) } else { (disc - b) / a }
    } else {
        // entering the inner disk: the nearer root
        if b < 0.0 { c / (disc - b) } else { 1.0 }
    };
    s.clamp(1e-12, 1.0)
}

impl DiscreteOperator {
    fn new(f: &OperatorSpec, grid: &AnnulusGrid, cfg: &SolverConfig) -> Result<Self> {
        if f.dim() != 2 {
            return Err(Error::InvalidInput(format!("annulus solver is planar (dim = {})", f.dim())));
        }
        let (outer, matrices) = isaacs_form(f, cfg.control_angles.max(4));
        let h2 = grid.h * grid.h;
        let mut dirs: Vec<[i32; 2]> = Vec::new();
        let mut width = 1;
        let mut families = Vec::with_capacity(matrices.len());
        let mut controls = Vec::new();
        let mut terms = Vec::new();
        for fam in &matrices {
            let first = controls.len();
            for a in fam {
                let start = terms.len();
                let mut diag = 0.0;
                for t in direction_decomposition(a, cfg.stencil_width)? {
                    let d = t.direction;
                    width = width.max(d[0].unsigned_abs().max(d[1].unsigned_abs()) as usize);
                    let slot = dirs.iter().position(|x| *x == d).unwrap_or_else(|| {
                        dirs.push(d);
                        dirs.len() - 1
                    });
                    let w = t.weight / (h2 * (d[0] * d[0] + d[1] * d[1]) as f64);
                    terms.push((slot, w));
                    diag += 2.0 * w;
                }
                controls.push(Control { start, end: terms.len(), diag });
            }
            families.push(first..controls.len());
        }
        if width > grid.width {
            return Err(Error::InvalidInput(format!(
                "operator needs stencil width {width} but the grid bands were built for width {}",
                grid.width
            )));
        }
        Ok(DiscreteOperator {
            outer,
            families,
            controls,
            terms,
            offsets: dirs.iter().map(|d| grid.offset(*d)).collect(),
            dirs,
            width,
            big_lambda: f.pair().big_lambda,
            near: vec![None; grid.active.len()],
            arms: Vec::new(),
            row_scale: vec![1.0; grid.active.len()],
        })
    }

    /// Cuts arms at the circles. Boundary values at the cut points are
    /// appended to `u` past the lattice nodes.
    fn fit_boundary(
        &mut self,
        grid: &AnnulusGrid,
        u: &mut Vec<f64>,
        g_inner: &dyn Fn([f64; 2]) -> f64,
        g_outer: &dyn Fn([f64; 2]) -> f64,
    ) -> Result<()> {
        for (slot, &k) in grid.active.iter().enumerate() {
            let x = grid.coords(k);
            let mut arms = Vec::with_capacity(self.dirs.len());
            let mut cut = false;
            for (d, &off) in self.dirs.iter().zip(&self.offsets) {
                let mut ends = [(0usize, 1.0f64); 2];
                for (e, sign) in [(0, 1.0), (1, -1.0)] {
                    let nb = (k as isize + if sign > 0.0 { off } else { -off }) as usize;
                    if grid.kinds[nb] == NodeKind::Active {
                        ends[e] = (nb, 1.0);
                        continue;
                    }
                    let v = [sign * grid.h * d[0] as f64, sign * grid.h * d[1] as f64];
                    let inner = grid.radius(nb) <= grid.r_inner;
                    let rho = if inner { grid.r_inner } else { grid.r_outer };
                    let s = crossing(x, v, rho);
                    let p = [x[0] + s * v[0], x[1] + s * v[1]];
                    let value = if inner { g_inner(p) } else { g_outer(p) };
                    if !value.is_finite() {
                        return Err(Error::InvalidInput(format!("boundary data is not finite at ({}, {})", p[0], p[1])));
                    }
                    u.push(value);
                    ends[e] = (u.len() - 1, s);
                    cut |= s < 1.0;
                }
                let (tp, tm) = (ends[0].1, ends[1].1);
                arms.push(Arm {
                    plus: ends[0].0,
                    minus: ends[1].0,
                    beta_plus: 2.0 / (tp * (tp + tm)),
                    beta_minus: 2.0 / (tm * (tp + tm)),
                    gamma: 2.0 / (tp * tm),
                });
            }
            if cut {
                let gammas: Vec<f64> = arms.iter().map(|a| a.gamma).collect();
                let (interior, fitted) = self.controls.iter().fold((0.0f64, 0.0f64), |(i, f), c| {
                    let d = self.terms[c.start..c.end].iter().map(|&(q, w)| w * gammas[q]).sum::<f64>();
                    (i.max(c.diag), f.max(d))
                });
                self.row_scale[slot] = (interior / fitted).min(1.0);
                self.near[slot] = Some(self.arms.len());
                self.arms.extend(arms);
            }
        }
        Ok(())
    }

    fn n_controls(&self) -> usize {
        self.controls.len()
    }

    /// Neighbour sums per direction slot, and whether the node's arms
    /// were cut.
    #[inline]
    fn gather(&self, u: &[f64], slot: usize, k: usize, sums: &mut [f64], gammas: &mut [f64]) -> bool {
        match self.near[slot] {
            None => {
                for (q, off) in self.offsets.iter().enumerate() {
                    sums[q] = u[(k as isize + off) as usize] + u[(k as isize - off) as usize];
                }
                false
            }
            Some(start) => {
                for (q, arm) in self.arms[start..start + self.offsets.len()].iter().enumerate() {
                    sums[q] = arm.beta_plus * u[arm.plus] + arm.beta_minus * u[arm.minus];
                    gammas[q] = arm.gamma;
                }
                true
            }
        }
    }

    /// `(b, diag)` of control `c`: its value at the node is `diag·u(x) − b`.
    #[inline]
    fn control(&self, c: usize, cut: bool, sums: &[f64], gammas: &[f64]) -> (f64, f64) {
        let ctl = self.controls[c];
        let terms = &self.terms[ctl.start..ctl.end];
        if cut {
            terms.iter().fold((0.0, 0.0), |(b, s), &(q, w)| (b + w * sums[q], s + w * gammas[q]))
        } else {
            (terms.iter().map(|&(q, w)| w * sums[q]).sum(), ctl.diag)
        }
    }

    /// `F_h(u)(x)`, the local solution, the control attaining it and the
    /// largest diagonal coefficient, at the active node `k` in slot `slot`.
    #[inline]
    fn local(&self, u: &[f64], slot: usize, k: usize, sums: &mut [f64], gammas: &mut [f64]) -> Local {
        let cut = self.gather(u, slot, k, sums, gammas);
        let u0 = u[k];
        let sup_inf = self.outer == Outer::SupInf;
        let mut out = Local {
            value: if sup_inf { f64::NEG_INFINITY } else { f64::INFINITY },
            root: if sup_inf { f64::INFINITY } else { f64::NEG_INFINITY },
            policy: 0,
            max_diag: 0.0,
        };
        for fam in &self.families {
            let (mut inner_value, mut inner_root, mut inner_policy) =
                if sup_inf { (f64::INFINITY, f64::NEG_INFINITY, 0) } else { (f64::NEG_INFINITY, f64::INFINITY, 0) };
            for c in fam.clone() {
                let (b, diag) = self.control(c, cut, sums, gammas);
                out.max_diag = out.max_diag.max(diag);
                let v = diag * u0 - b;
                let z = b / diag;
                if sup_inf {
                    inner_value = inner_value.min(v);
                    if z > inner_root {
                        inner_root = z;
                        inner_policy = c;
                    }
                } else {
                    inner_value = inner_value.max(v);
                    if z < inner_root {
                        inner_root = z;
                        inner_policy = c;
                    }
                }
            }
            if sup_inf {
                out.value = out.value.max(inner_value);
                if inner_root < out.root {
                    out.root = inner_root;
                    out.policy = inner_policy;
                }
            } else {
                out.value = out.value.min(inner_value);
                if inner_root > out.root {
                    out.root = inner_root;
                    out.policy = inner_policy;
                }
            }
        }
        out.value *= self.row_scale[slot];
        out
    }

    fn residual(&self, u: &[f64], grid: &AnnulusGrid) -> f64 {
        let mut sums = vec![0.0; self.offsets.len()];
        let mut gammas = vec![0.0; self.offsets.len()];
        grid.active
            .iter()
            .enumerate()
            .map(|(slot, &k)| self.local(u, slot, k, &mut sums, &mut gammas).value.abs())
            .fold(0.0, f64::max)
    }
}

/// Solves `F(D²u) = 0` in the annulus with `u = g_inner` on the inner circle
/// and `u = g_outer` on the outer one. Band nodes hold the boundary value at
/// their radial projection.
pub fn solve_dirichlet_2d(
    f: &OperatorSpec,
    grid: &AnnulusGrid,
    g_inner: &dyn Fn([f64; 2]) -> f64,
    g_outer: &dyn Fn([f64; 2]) -> f64,
    cfg: &SolverConfig,
) -> Result<(Field, SolveReport)> {
    let mut op = DiscreteOperator::new(f, grid, cfg)?;
    let mut u = vec![f64::NAN; grid.node_count()];
    for k in grid.band_nodes() {
        let [x, y] = grid.coords(k);
        let theta = y.atan2(x);
        let v = match grid.kinds[k] {
            NodeKind::InnerBand => g_inner([grid.r_inner * theta.cos(), grid.r_inner * theta.sin()]),
            _ => g_outer([grid.r_outer * theta.cos(), grid.r_outer * theta.sin()]),
        };
        if !v.is_finite() {
            return Err(Error::InvalidInput(format!("boundary data is not finite at ({x}, {y})")));
        }
        u[k] = v;
    }
    if cfg.boundary == BoundaryTreatment::Fitted {
        op.fit_boundary(grid, &mut u, g_inner, g_outer)?;
    }
    let (g_min, g_max) = u
        .iter()
        .filter(|v| !v.is_nan())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    // radial interpolation of the boundary data's ring means as a start
    let mean = |g: &dyn Fn([f64; 2]) -> f64, r: f64| {
        (0..64).map(|k| g([r * (PI * k as f64 / 32.0).cos(), r * (PI * k as f64 / 32.0).sin()])).sum::<f64>() / 64.0
    };
    let (mi, mo) = (mean(g_inner, grid.r_inner), mean(g_outer, grid.r_outer));
    for &k in &grid.active {
        let t = (grid.radius(k) - grid.r_inner) / (grid.r_outer - grid.r_inner);
        u[k] = ((1.0 - t) * mi + t * mo).clamp(g_min, g_max);
    }

    let target = cfg.tol / grid.h;
    let (iterations, residual, omega) = match cfg.relaxation {
        Relaxation::Policy => {
            let (solves, residual) = policy_iteration(&op, grid, &mut u, cfg, target)?;
            (solves, residual, 1.0)
        }
        Relaxation::Sor => sor(&op, grid, &mut u, cfg, target, g_min, g_max)?,
        Relaxation::Jacobi => jacobi(&op, grid, &mut u, cfg, target)?,
    };
    u.truncate(grid.node_count());
    // the discrete solution obeys the maximum principle; clamping the
    // iterate to the data range can only move it closer
    for &k in &grid.active {
        u[k] = u[k].clamp(g_min, g_max);
    }
    let report = SolveReport {
        iterations,
        residual,
        relaxation: cfg.relaxation,
        boundary: cfg.boundary,
        omega,
        n_controls: op.n_controls(),
        n_directions: op.offsets.len(),
        width_used: op.width,
    };
    Ok((Field { grid: grid.clone(), values: u }, report))
}

fn sor(
    op: &DiscreteOperator,
    grid: &AnnulusGrid,
    u: &mut [f64],
    cfg: &SolverConfig,
    target: f64,
    g_min: f64,
    g_max: f64,
) -> Result<(usize, f64, f64)> {
    let mut omega = cfg
        .omega
        .unwrap_or_else(|| 2.0 / (1.0 + PI * grid.h / (grid.r_outer - grid.r_inner)))
        .clamp(1.0, 1.99);
    let n = op.offsets.len();
    let (mut sums, mut gammas) = (vec![0.0; n], vec![0.0; n]);
    let mut checkpoint = f64::INFINITY;
    let mut residual = f64::INFINITY;
    for sweep in 0..cfg.max_iter {
        let mut sweep_residual: f64 = 0.0;
        for (slot, &k) in grid.active.iter().enumerate() {
            let loc = op.local(u, slot, k, &mut sums, &mut gammas);
            sweep_residual = sweep_residual.max(loc.value.abs());
            u[k] = (u[k] + omega * (loc.root - u[k])).clamp(g_min, g_max);
        }
        if !sweep_residual.is_finite() {
            return Err(Error::Internal("non-finite residual in relaxation sweep".into()));
        }
        residual = sweep_residual;
        if sweep_residual <= target {
            residual = op.residual(u, grid);
            if residual <= target {
                return Ok((sweep + 1, residual, omega));
            }
        }
        // safeguard: back off towards Gauss–Seidel if the residual stalls
        if sweep % STALL_WINDOW == STALL_WINDOW - 1 {
            if sweep_residual > 0.5 * checkpoint && omega > 1.0 {
                omega = 1.0 + 0.5 * (omega - 1.0);
            }
            checkpoint = sweep_residual;
        }
    }
    Err(Error::Convergence { what: "annulus relaxation", iterations: cfg.max_iter, residual })
}

/// Sweeps between stall checks in [`Relaxation::Sor`].
const STALL_WINDOW: usize = 100;
/// Policy switches must gain at least this fraction of the target residual.
const SWITCH_MARGIN: f64 = 1e-3;
/// Cap on policy rounds at either level.
const MAX_POLICY_ROUNDS: usize = 200;

/// Nested policy iteration. The outer player's family choice is held fixed
/// while the inner player's one-sided problem is solved by Howard's
/// algorithm; then the outer player improves against the result.
fn policy_iteration(
    op: &DiscreteOperator,
    grid: &AnnulusGrid,
    u: &mut [f64],
    cfg: &SolverConfig,
    target: f64,
) -> Result<(usize, f64)> {
    let n = op.offsets.len();
    let (mut sums, mut gammas) = (vec![0.0; n], vec![0.0; n]);
    let sup_inf = op.outer == Outer::SupInf;
    let slots = grid.active.len();
    let margin = SWITCH_MARGIN * target;
    // start from the controls attaining the local solution
    let mut outer = vec![0usize; slots];
    let mut inner = vec![0usize; slots];
    for (slot, &k) in grid.active.iter().enumerate() {
        let loc = op.local(u, slot, k, &mut sums, &mut gammas);
        inner[slot] = loc.policy;
        outer[slot] = op.families.iter().position(|f| f.contains(&loc.policy)).unwrap_or(0);
    }
    let mut solves = 0;
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_POLICY_ROUNDS {
        for _ in 0..MAX_POLICY_ROUNDS {
            solve_linear(op, grid, u, &inner, 0.25 * target, cfg.max_iter)?;
            solves += 1;
            // inner player: inf over the family for sup-inf, sup for inf-sup
            let mut changed = false;
            for (slot, &k) in grid.active.iter().enumerate() {
                let cut = op.gather(u, slot, k, &mut sums, &mut gammas);
                let value = |c: usize| {
                    let (b, diag) = op.control(c, cut, &sums, &gammas);
                    (diag * u[k] - b) * op.row_scale[slot]
                };
                let current = value(inner[slot]);
                let mut best = (current, inner[slot]);
                for c in op.families[outer[slot]].clone() {
                    let v = value(c);
                    let better = if sup_inf { v < best.0 - margin } else { v > best.0 + margin };
                    if better {
                        best = (v, c);
                    }
                }
                if best.1 != inner[slot] {
                    inner[slot] = best.1;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        residual = op.residual(u, grid);
        if residual <= target {
            return Ok((solves, residual));
        }
        // outer player: sup over families for sup-inf, inf for inf-sup
        let mut changed = false;
        for (slot, &k) in grid.active.iter().enumerate() {
            let cut = op.gather(u, slot, k, &mut sums, &mut gammas);
            // each family's inner optimum: (value, control)
            let inner_best = |fam: &std::ops::Range<usize>| {
                fam.clone()
                    .map(|c| {
                        let (b, diag) = op.control(c, cut, &sums, &gammas);
                        ((diag * u[k] - b) * op.row_scale[slot], c)
                    })
                    .fold((if sup_inf { f64::INFINITY } else { f64::NEG_INFINITY }, fam.start), |acc, (v, c)| {
                        if (sup_inf && v < acc.0) || (!sup_inf && v > acc.0) { (v, c) } else { acc }
                    })
            };
            let current = inner_best(&op.families[outer[slot]]);
            let mut best = (current.0, outer[slot], current.1);
            for (i, fam) in op.families.iter().enumerate() {
                let (v, c) = inner_best(fam);
                let better = if sup_inf { v > best.0 + margin } else { v < best.0 - margin };
                if better {
                    best = (v, i, c);
                }
            }
            if best.1 != outer[slot] {
                outer[slot] = best.1;
                inner[slot] = best.2;
                changed = true;
            }
        }
        if !changed {
            // policies are stable but the linear solves stalled short of the target
            break;
        }
    }
    Err(Error::Convergence { what: "annulus policy iteration", iterations: solves, residual })
}

/// Solves the linear equations of the fixed controls `policy` for the active
/// values of `u` by BiCGSTAB on the diagonally scaled system, starting from
/// the current values. Stops when the scaled residual, measured like
/// [`DiscreteOperator::residual`], is below `tol`.
fn solve_linear(op: &DiscreteOperator, grid: &AnnulusGrid, u: &mut [f64], policy: &[usize], tol: f64, max_iter: usize) -> Result<()> {
    let slots = grid.active.len();
    let n = op.offsets.len();
    let (mut sums, mut gammas) = (vec![0.0; n], vec![0.0; n]);
    let mut diag = vec![0.0; slots];
    for (slot, &k) in grid.active.iter().enumerate() {
        let cut = op.gather(u, slot, k, &mut sums, &mut gammas);
        diag[slot] = op.control(policy[slot], cut, &sums, &gammas).1;
    }
    // residual scale of a unit-diagonal row, per slot
    let unit: Vec<f64> = (0..slots).map(|a| diag[a] * op.row_scale[a]).collect();
    let mut work = u.to_vec();
    // y = D⁻¹(A x) with boundary entries set to `bnd` (0 for the operator,
    // the data for the affine part)
    let mut apply = |x: &[f64], with_boundary: bool, out: &mut [f64]| {
        if !with_boundary {
            for v in work.iter_mut() {
                *v = 0.0;
            }
        } else {
            work.copy_from_slice(u);
        }
        for (slot, &k) in grid.active.iter().enumerate() {
            work[k] = x[slot];
        }
        for (slot, &k) in grid.active.iter().enumerate() {
            let cut = op.gather(&work, slot, k, &mut sums, &mut gammas);
            let (b, d) = op.control(policy[slot], cut, &sums, &gammas);
            out[slot] = (d * work[k] - b) / diag[slot];
        }
    };
    let mut x: Vec<f64> = grid.active.iter().map(|&k| u[k]).collect();
    // scaled residual r = D⁻¹(rhs − A x) = −D⁻¹ F_π(u)
    let mut r = vec![0.0; slots];
    apply(&x, true, &mut r);
    r.iter_mut().for_each(|v| *v = -*v);
    let done = |r: &[f64]| r.iter().zip(&unit).map(|(v, s)| (v * s).abs()).fold(0.0, f64::max) <= tol;
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut converged = done(&r);
    let mut r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let (mut v, mut p) = (vec![0.0; slots], vec![0.0; slots]);
    let (mut s, mut t) = (vec![0.0; slots], vec![0.0; slots]);
    let mut it = 0;
    while !converged && it < max_iter {
        it += 1;
        let rho_new = dot(&r_hat, &r);
        if rho_new.abs() < 1e-300 || !rho_new.is_finite() || omega == 0.0 {
            // breakdown: restart the shadow residual from the current one
            r_hat.copy_from_slice(&r);
            rho = 1.0;
            alpha = 1.0;
            omega = 1.0;
            v.iter_mut().for_each(|e| *e = 0.0);
            p.iter_mut().for_each(|e| *e = 0.0);
            continue;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for a in 0..slots {
            p[a] = r[a] + beta * (p[a] - omega * v[a]);
        }
        apply(&p, false, &mut v);
        alpha = rho / dot(&r_hat, &v);
        for a in 0..slots {
            s[a] = r[a] - alpha * v[a];
        }
        if done(&s) {
            for a in 0..slots {
                x[a] += alpha * p[a];
            }
            break;
        }
        apply(&s, false, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for a in 0..slots {
            x[a] += alpha * p[a] + omega * s[a];
            r[a] = s[a] - omega * t[a];
        }
        if it % 50 == 0 {
            // refresh the recursive residual against drift
            apply(&x, true, &mut r);
            r.iter_mut().for_each(|e| *e = -*e);
        }
        converged = done(&r);
    }
    for (slot, &k) in grid.active.iter().enumerate() {
        u[k] = x[slot];
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::Internal("non-finite values in linear solve".into()));
    }
    Ok(())
}

/// Pseudo-time iteration. Nodes whose arms were cut use the smaller step
/// `safety/γ_max` where the nominal step would overshoot.
fn jacobi(op: &DiscreteOperator, grid: &AnnulusGrid, u: &mut [f64], cfg: &SolverConfig, target: f64) -> Result<(usize, f64, f64)> {
    let n = op.offsets.len();
    let tau = cfg.pseudo_dt_safety * grid.h * grid.h / (4.0 * n as f64 * op.big_lambda);
    let (mut sums, mut gammas) = (vec![0.0; n], vec![0.0; n]);
    let mut update = vec![0.0; grid.active.len()];
    let mut residual = f64::INFINITY;
    for it in 0..cfg.max_iter {
        residual = 0.0;
        for (slot, &k) in grid.active.iter().enumerate() {
            let loc = op.local(u, slot, k, &mut sums, &mut gammas);
            residual = residual.max(loc.value.abs());
            update[slot] = loc.value / op.row_scale[slot] * tau.min(cfg.pseudo_dt_safety / loc.max_diag);
        }
        if residual <= target {
            return Ok((it, residual, 1.0));
        }
        for (slot, &k) in grid.active.iter().enumerate() {
            u[k] -= update[slot];
        }
    }
    Err(Error::Convergence { what: "annulus pseudo-time iteration", iterations: cfg.max_iter, residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::EllipticityPair;

    fn pair(l: f64, u: f64) -> EllipticityPair {
        EllipticityPair::new(l, u).unwrap()
    }

    #[test]
    fn constants_are_reproduced() {
        let grid = AnnulusGrid::new(0.25, 1.0, 1.0 / 32.0, 2).unwrap();
        let seven = |_: [f64; 2]| 7.0;
        for f in [
            OperatorSpec::pucci_plus(pair(1.0, 2.0), 2).unwrap(),
            OperatorSpec::laplacian(2).unwrap(),
            OperatorSpec::f1(pair(1.0, 3.0), 2).unwrap(),
        ] {
            let (field, _) = solve_dirichlet_2d(&f, &grid, &seven, &seven, &SolverConfig::default()).unwrap();
            for &k in &grid.active {
                assert!((field.value(k) - 7.0).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn iterations_agree() {
        let grid = AnnulusGrid::new(0.5, 1.0, 1.0 / 32.0, 2).unwrap();
        let f = OperatorSpec::pucci_minus(pair(1.0, 2.0), 2).unwrap();
        let gi = |p: [f64; 2]| 1.0 + 0.3 * p[0];
        let go = |_: [f64; 2]| 0.0;
        let base = SolverConfig { tol: 1e-10, control_angles: 8, ..SolverConfig::default() };
        let (a, _) = solve_dirichlet_2d(&f, &grid, &gi, &go, &base).unwrap();
        for relaxation in [Relaxation::Sor, Relaxation::Jacobi] {
            let cfg = SolverConfig { relaxation, max_iter: 2_000_000, ..base.clone() };
            let (b, rep) = solve_dirichlet_2d(&f, &grid, &gi, &go, &cfg).unwrap();
            assert_eq!(rep.relaxation, relaxation);
            let gap = grid.active.iter().map(|&k| (a.value(k) - b.value(k)).abs()).fold(0.0, f64::max);
            assert!(gap <= 1e-8, "{relaxation:?}: gap {gap}");
        }
    }

    #[test]
    fn rejects_width_beyond_bands() {
        let grid = AnnulusGrid::new(0.25, 1.0, 1.0 / 32.0, 1).unwrap();
        let a = SymMatrix::new2(1.0, 1.8, 4.0);
        let f = OperatorSpec::linear(a, pair(0.15, 5.0)).unwrap();
        let zero = |_: [f64; 2]| 0.0;
        assert!(solve_dirichlet_2d(&f, &grid, &zero, &zero, &SolverConfig::default()).is_err());
    }
}
