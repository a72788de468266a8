//! Nonnegative decomposition of a coefficient matrix onto lattice directions.
//!
//! `tr(A·D²u) = Σ c_k ∂²_{d_k} u` with `c_k ≥ 0` turns every linear control
//! into a monotone combination of second differences along `d_k`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::operator::SymMatrix;

/// Largest stencil width tried before giving up.
pub const MAX_WIDTH: usize = 3;
/// Accepted `‖Σ c_k d_k d_kᵀ − A‖_∞`.
pub const DECOMPOSITION_TOL: f64 = 1e-8;

/// Coprime integer directions with max coordinate `≤ width`, one per `±`
/// pair, ordered by width and then as listed: `(1,0), (0,1), (1,1), (1,−1)`,
/// then `(1,2), (2,1), (1,−2), (2,−1)`, and so on.
pub fn directions(width: usize) -> Vec<[i32; 2]> {
    let mut dirs = vec![[1, 0], [0, 1], [1, 1], [1, -1]];
    for w in 2..=width as i32 {
        for k in 1..w {
            if gcd(k, w) == 1 {
                dirs.extend([[k, w], [w, k], [k, -w], [w, -k]]);
            }
        }
    }
    dirs
}

fn gcd(a: i32, b: i32) -> i32 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// One term `c·d⊗d` of a decomposition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DirectionWeight {
    pub direction: [i32; 2],
    pub weight: f64,
}

/// Symmetric 2×2 matrix as a vector whose Euclidean inner product is the
/// Frobenius one.
fn frobenius_coords(m: [f64; 3]) -> [f64; 3] {
    [m[0], std::f64::consts::SQRT_2 * m[1], m[2]]
}

/// Writes `A` as `Σ c_k d_k d_kᵀ` with `c_k ≥ 0`, starting at `width` and
/// widening up to [`MAX_WIDTH`] until the residual is below
/// [`DECOMPOSITION_TOL`]. Zero weights are dropped.
pub fn direction_decomposition(a: &SymMatrix, width: usize) -> Result<Vec<DirectionWeight>> {
    if a.dim() != 2 {
        return Err(Error::InvalidInput(format!("direction decomposition is planar (dim = {})", a.dim())));
    }
    if !(1..=MAX_WIDTH).contains(&width) {
        return Err(Error::InvalidInput(format!("stencil width must be in 1..={MAX_WIDTH} (got {width})")));
    }
    let target = a.entries2();
    let mut residual = f64::INFINITY;
    for w in width..=MAX_WIDTH {
        let dirs = directions(w);
        let weights = decompose_on(&dirs, target);
        residual = reconstruction_error(&dirs, &weights, target);
        if residual <= DECOMPOSITION_TOL {
            return Ok(dirs
                .iter()
                .zip(weights)
                .filter(|(_, c)| *c > 0.0)
                .map(|(d, c)| DirectionWeight { direction: *d, weight: c })
                .collect());
        }
    }
    Err(Error::Decomposition { matrix: target, residual })
}

fn reconstruction_error(dirs: &[[i32; 2]], weights: &[f64], target: [f64; 3]) -> f64 {
    let mut sum = [0.0; 3];
    for (d, c) in dirs.iter().zip(weights) {
        let (x, y) = (d[0] as f64, d[1] as f64);
        sum[0] += c * x * x;
        sum[1] += c * x * y;
        sum[2] += c * y * y;
    }
    (0..3).map(|k| (sum[k] - target[k]).abs()).fold(0.0, f64::max)
}

/// NNLS in the normalized basis `d̂d̂ᵀ`; returns weights for the raw `d dᵀ`.
fn decompose_on(dirs: &[[i32; 2]], target: [f64; 3]) -> Vec<f64> {
    let columns: Vec<[f64; 3]> = dirs
        .iter()
        .map(|d| {
            let (x, y) = (d[0] as f64, d[1] as f64);
            let n2 = x * x + y * y;
            frobenius_coords([x * x / n2, x * y / n2, y * y / n2])
        })
        .collect();
    let e = DMatrix::from_fn(3, dirs.len(), |i, j| columns[j][i]);
    let b = DVector::from_column_slice(&frobenius_coords(target));
    let x = nnls(&e, &b);
    dirs.iter()
        .zip(x.iter())
        .map(|(d, xk)| xk / ((d[0] * d[0] + d[1] * d[1]) as f64))
        .collect()
}

/// Lawson–Hanson active-set NNLS: `min ‖E x − b‖` subject to `x ≥ 0`.
/// Ties in the entering variable go to the lowest index.
pub fn nnls(e: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = e.ncols();
    let scale = 1.0 + b.amax();
    let eps = 1e-13 * scale;
    let mut x = DVector::<f64>::zeros(n);
    let mut passive = vec![false; n];
    for _outer in 0..(3 * n + 10) {
        let w = e.transpose() * (b - e * &x);
        let mut best: Option<usize> = None;
        for j in 0..n {
            if !passive[j] && w[j] > eps && best.is_none_or(|k| w[j] > w[k]) {
                best = Some(j);
            }
        }
        let Some(j) = best else { break };
        passive[j] = true;
        for _inner in 0..(3 * n + 10) {
            let z = passive_least_squares(e, b, &passive);
            let infeasible: Vec<usize> = (0..n).filter(|&k| passive[k] && z[k] <= eps).collect();
            if infeasible.is_empty() {
                x = z;
                break;
            }
            let step = infeasible
                .iter()
                .map(|&k| x[k] / (x[k] - z[k]))
                .fold(f64::INFINITY, f64::min)
                .clamp(0.0, 1.0);
            x += (z - &x) * step;
            for k in 0..n {
                if passive[k] && x[k] <= eps {
                    passive[k] = false;
                    x[k] = 0.0;
                }
            }
        }
    }
    x
}

fn passive_least_squares(e: &DMatrix<f64>, b: &DVector<f64>, passive: &[bool]) -> DVector<f64> {
    let idx: Vec<usize> = (0..passive.len()).filter(|&k| passive[k]).collect();
    let sub = DMatrix::from_fn(e.nrows(), idx.len(), |i, j| e[(i, idx[j])]);
    let sol = sub
        .svd(true, true)
        .solve(b, 1e-14)
        .unwrap_or_else(|_| DVector::zeros(idx.len()));
    let mut z = DVector::zeros(passive.len());
    for (j, &k) in idx.iter().enumerate() {
        z[k] = sol[j];
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling;
    use rand::Rng;

    fn rebuild(terms: &[DirectionWeight]) -> SymMatrix {
        let mut m = SymMatrix::zeros(2);
        for t in terms {
            let d = [t.direction[0] as f64, t.direction[1] as f64];
            m = m.add(&SymMatrix::outer(&d).scale(t.weight));
        }
        m
    }

    #[test]
    fn direction_counts() {
        assert_eq!(directions(1).len(), 4);
        assert_eq!(directions(2).len(), 8);
        assert_eq!(directions(3).len(), 16);
    }

    #[test]
    fn identity_uses_axes() {
        let terms = direction_decomposition(&SymMatrix::identity(2), 1).unwrap();
        assert_eq!(terms.len(), 2);
        assert_eq!((terms[0].direction, terms[1].direction), ([1, 0], [0, 1]));
        assert!(terms.iter().all(|t| (t.weight - 1.0).abs() <= 1e-12));
    }

    #[test]
    fn off_diagonal_matrix_is_feasible_on_the_small_set() {
        let a = SymMatrix::new2(1.0, 0.5, 1.0);
        let terms = direction_decomposition(&a, 1).unwrap();
        assert!(rebuild(&terms).sub(&a).max_abs() <= 1e-8);
        assert!(terms.iter().all(|t| t.weight > 0.0));
    }

    #[test]
    fn widens_when_needed() {
        // strongly anisotropic and rotated: not diagonally dominant
        let a = SymMatrix::new2(1.0, 0.9, 1.0);
        assert!(direction_decomposition(&a, 1).is_ok());
        let b = SymMatrix::new2(1.0, 1.8, 4.0);
        let terms = direction_decomposition(&b, 1).unwrap();
        assert!(terms.iter().any(|t| t.direction[0].abs().max(t.direction[1].abs()) >= 2));
        assert!(rebuild(&terms).sub(&b).max_abs() <= 1e-8);
    }

    #[test]
    fn infeasible_reports_matrix() {
        // nearly rank one along (1, 0.37), between the lattice rays (3,1) and (2,1)
        let a = SymMatrix::new2(1.001, 0.37, 0.1379);
        match direction_decomposition(&a, 1) {
            Err(Error::Decomposition { matrix, .. }) => assert_eq!(matrix, [1.001, 0.37, 0.1379]),
            other => panic!("expected a decomposition error, got {other:?}"),
        }
    }

    #[test]
    fn random_matrices_with_bounded_ratio() {
        let mut rng = sampling::rng(17);
        for _ in 0..100 {
            let t: f64 = rng.random_range(0.0..std::f64::consts::PI);
            let (l1, l2): (f64, f64) = (rng.random_range(1.0..=2.0), rng.random_range(1.0..=2.0));
            let (c, s) = (t.cos(), t.sin());
            let a = SymMatrix::new2(l1 * c * c + l2 * s * s, (l1 - l2) * c * s, l1 * s * s + l2 * c * c);
            let terms = direction_decomposition(&a, 2).unwrap();
            assert!(rebuild(&terms).sub(&a).max_abs() <= 1e-8);
            assert!(terms.iter().all(|t| t.weight >= 0.0));
        }
    }
}
