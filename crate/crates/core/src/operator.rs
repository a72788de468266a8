//! Positively homogeneous, uniformly elliptic operators `F(D²u)`.
//!
//! An [`OperatorSpec`] is one of the Pucci extremal operators, a constant
//! coefficient linear operator, a sup-inf / inf-sup (Isaacs) family of linear
//! operators, or an operator acting on the sorted spectrum. All of them satisfy
//!
//! ```text
//! λ·tr N ≤ F(M − N) − F(M) ≤ Λ·tr N      for N ⪰ 0          (ellipticity)
//! F(tM) = t·F(M)                          for t ≥ 0          (homogeneity)
//! ```
//!
//! with the declared pair `(λ, Λ)`, and are sandwiched between `P⁻` and `P⁺`.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling;

pub const MIN_DIM: usize = 2;
pub const MAX_DIM: usize = 8;
const PACKED: usize = MAX_DIM * (MAX_DIM + 1) / 2;

/// Tolerance used when checking `λI ⪯ A ⪯ ΛI` for family members.
pub const FAMILY_TOL: f64 = 1e-12;
/// Largest asymmetry accepted when loading a full matrix.
pub const ASYMMETRY_TOL: f64 = 1e-8;

/// Dense real symmetric matrix of dimension 2..=8, stored as the packed upper
/// triangle (row-major).
#[derive(Clone, Copy, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: [f64; PACKED],
}

impl std::fmt::Debug for SymMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.to_rows()).finish()
    }
}

#[inline]
fn packed_index(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * n - i * i.saturating_sub(1) / 2 + (j - i)
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(
            (MIN_DIM..=MAX_DIM).contains(&dim),
            "SymMatrix dimension {dim} outside [{MIN_DIM}, {MAX_DIM}]"
        );
        SymMatrix { dim, data: [0.0; PACKED] }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_diag(&vec![1.0; dim])
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m.set(i, i, d);
        }
        m
    }

    /// Builds a matrix from `f(i, j)` evaluated on the upper triangle.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// 2×2 matrix `[[a, b], [b, c]]`.
    pub fn new2(a: f64, b: f64, c: f64) -> Self {
        let mut m = Self::zeros(2);
        m.data[0] = a;
        m.data[1] = b;
        m.data[2] = c;
        m
    }

    /// Loads a full row-major matrix, averaging with its transpose.
    ///
    /// Rejects non-square input, non-finite entries and asymmetry above
    /// [`ASYMMETRY_TOL`].
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if !(MIN_DIM..=MAX_DIM).contains(&n) {
            return Err(Error::InvalidInput(format!(
                "matrix dimension {n} outside [{MIN_DIM}, {MAX_DIM}]"
            )));
        }
        if let Some(bad) = rows.iter().position(|r| r.len() != n) {
            return Err(Error::InvalidInput(format!("row {bad} has length {} (expected {n})", rows[bad].len())));
        }
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in i..n {
                let (a, b) = (rows[i][j], rows[j][i]);
                if !a.is_finite() || !b.is_finite() {
                    return Err(Error::InvalidInput(format!("non-finite entry at ({i}, {j})")));
                }
                if (a - b).abs() > ASYMMETRY_TOL {
                    return Err(Error::InvalidInput(format!(
                        "asymmetry {:e} at ({i}, {j}) exceeds {ASYMMETRY_TOL:e}",
                        (a - b).abs()
                    )));
                }
                m.set(i, j, 0.5 * (a + b));
            }
        }
        Ok(m)
    }

    /// Rank-one matrix `v ⊗ v`.
    pub fn outer(v: &[f64]) -> Self {
        Self::from_fn(v.len(), |i, j| v[i] * v[j])
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[packed_index(self.dim, i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[packed_index(self.dim, i, j)] = value;
    }

    /// Entries `(m11, m12, m22)` of a 2×2 matrix.
    #[inline]
    pub fn entries2(&self) -> [f64; 3] {
        debug_assert_eq!(self.dim, 2);
        [self.data[0], self.data[1], self.data[2]]
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    /// `tr(A·B)` for symmetric `A = self`, `B = other`.
    pub fn trace_product(&self, other: &SymMatrix) -> f64 {
        debug_assert_eq!(self.dim, other.dim);
        let n = self.dim;
        let mut s = 0.0;
        for i in 0..n {
            s += self.get(i, i) * other.get(i, i);
            for j in (i + 1)..n {
                s += 2.0 * self.get(i, j) * other.get(i, j);
            }
        }
        s
    }

    pub fn scale(&self, t: f64) -> Self {
        let mut m = *self;
        let len = self.packed_len();
        m.data[..len].iter_mut().for_each(|x| *x *= t);
        m
    }

    pub fn add(&self, other: &SymMatrix) -> Self {
        assert_eq!(self.dim, other.dim);
        let mut m = *self;
        for k in 0..self.packed_len() {
            m.data[k] += other.data[k];
        }
        m
    }

    pub fn sub(&self, other: &SymMatrix) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn max_abs(&self) -> f64 {
        self.data[..self.packed_len()].iter().fold(0.0, |acc: f64, x| acc.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data[..self.packed_len()].iter().all(|x| x.is_finite())
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim).map(|i| (0..self.dim).map(|j| self.get(i, j)).collect()).collect()
    }

    pub fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.get(i, j))
    }

    /// `Q·M·Qᵀ` for an orthogonal (or any) square `Q` given row-major.
    pub fn conjugate(&self, q: &[Vec<f64>]) -> Self {
        let m = self.to_nalgebra();
        let qm = DMatrix::from_fn(self.dim, self.dim, |i, j| q[i][j]);
        let r = &qm * m * qm.transpose();
        Self::from_fn(self.dim, |i, j| 0.5 * (r[(i, j)] + r[(j, i)]))
    }

    /// The upper triangle, row by row.
    pub fn packed(&self) -> &[f64] {
        &self.data[..self.packed_len()]
    }

    fn packed_len(&self) -> usize {
        self.dim * (self.dim + 1) / 2
    }
}

/// Eigenvalues of a 2×2 symmetric matrix `[[a, b], [b, c]]`, ascending.
#[inline]
pub fn eigenvalues2(m: [f64; 3]) -> (f64, f64) {
    let [a, b, c] = m;
    let mean = 0.5 * (a + c);
    let half_diff = 0.5 * (a - c);
    let rad = half_diff.hypot(b);
    (mean - rad, mean + rad)
}

/// Eigenvalues of `m`, sorted ascending.
///
/// Closed form for n = 2, symmetric QR (nalgebra) for n ≥ 3.
pub fn eigenvalues_sym(m: &SymMatrix) -> Vec<f64> {
    if m.dim() == 2 {
        let (lo, hi) = eigenvalues2(m.entries2());
        return vec![lo, hi];
    }
    let mut values: Vec<f64> = m.to_nalgebra().symmetric_eigenvalues().iter().copied().collect();
    values.sort_by(|a, b| a.total_cmp(b));
    values
}

/// Full eigendecomposition: ascending eigenvalues and the matching unit
/// eigenvectors (one `Vec` per eigenvalue).
pub fn eigen_decomposition(m: &SymMatrix) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = m.dim();
    if n == 2 {
        let [a, b, c] = m.entries2();
        let (lo, hi) = eigenvalues2([a, b, c]);
        // eigenvector of `hi`; pick the better conditioned of the two row forms
        let (vx, vy) = if b.abs() < 1e-300 && a >= c {
            (1.0, 0.0)
        } else if b.abs() < 1e-300 {
            (0.0, 1.0)
        } else if (hi - a).abs() > (hi - c).abs() {
            (b, hi - a)
        } else {
            (hi - c, b)
        };
        let norm = vx.hypot(vy);
        let (vx, vy) = (vx / norm, vy / norm);
        return (vec![lo, hi], vec![vec![-vy, vx], vec![vx, vy]]);
    }
    let eig = m.to_nalgebra().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = order
        .iter()
        .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
        .collect();
    (values, vectors)
}

/// Ellipticity constants `0 < λ ≤ Λ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EllipticityPair {
    pub lambda: f64,
    #[serde(rename = "Lambda")]
    pub big_lambda: f64,
}

impl EllipticityPair {
    pub fn new(lambda: f64, big_lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && big_lambda.is_finite()) || lambda <= 0.0 || big_lambda < lambda {
            return Err(Error::InvalidInput(format!(
                "ellipticity pair must satisfy 0 < lambda <= Lambda (got {lambda}, {big_lambda})"
            )));
        }
        Ok(EllipticityPair { lambda, big_lambda })
    }

    /// `Λ/λ`.
    pub fn ratio(&self) -> f64 {
        self.big_lambda / self.lambda
    }
}

/// Which operator family an [`OperatorSpec`] belongs to.
#[derive(Clone, Debug, PartialEq)]
pub enum OperatorKind {
    /// `P⁺(M) = −λ Σ_{μ>0} μ − Λ Σ_{μ<0} μ`.
    PucciPlus(EllipticityPair),
    /// `P⁻(M) = −Λ Σ_{μ>0} μ − λ Σ_{μ<0} μ`.
    PucciMinus(EllipticityPair),
    /// `−tr(A·M)`.
    Linear(SymMatrix),
    /// `sup_i inf_j −tr(A_ij·M)`.
    SupInf(Vec<Vec<SymMatrix>>),
    /// `inf_i sup_j −tr(A_ij·M)`.
    InfSup(Vec<Vec<SymMatrix>>),
    /// `−Σ c_i μ_i(M)` with the eigenvalues sorted ascending.
    EigenSymmetric(Vec<f64>),
}

/// A homogeneous uniformly elliptic operator together with its declared
/// ellipticity constants.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorSpec {
    pub kind: OperatorKind,
    pub declared: EllipticityPair,
    pub dim: usize,
}

fn check_dim(dim: usize) -> Result<()> {
    if !(MIN_DIM..=MAX_DIM).contains(&dim) {
        return Err(Error::InvalidInput(format!("dimension {dim} outside [{MIN_DIM}, {MAX_DIM}]")));
    }
    Ok(())
}

fn check_member(a: &SymMatrix, pair: &EllipticityPair, dim: usize, path: &str) -> Result<()> {
    if a.dim() != dim {
        return Err(Error::InvalidInput(format!("{path}: matrix dim {} != operator dim {dim}", a.dim())));
    }
    if !a.is_finite() {
        return Err(Error::InvalidInput(format!("{path}: non-finite entries")));
    }
    let eig = eigenvalues_sym(a);
    let (lo, hi) = (eig[0], eig[dim - 1]);
    let tol = FAMILY_TOL * (1.0 + pair.big_lambda);
    if lo < pair.lambda - tol || hi > pair.big_lambda + tol {
        return Err(Error::InvalidInput(format!(
            "{path}: eigenvalues [{lo}, {hi}] outside [{}, {}]",
            pair.lambda, pair.big_lambda
        )));
    }
    Ok(())
}

fn check_families(families: &[Vec<SymMatrix>], pair: &EllipticityPair, dim: usize) -> Result<()> {
    if families.is_empty() {
        return Err(Error::InvalidInput("families: empty family list".into()));
    }
    for (i, fam) in families.iter().enumerate() {
        if fam.is_empty() {
            return Err(Error::InvalidInput(format!("families[{i}]: empty family")));
        }
        for (j, a) in fam.iter().enumerate() {
            check_member(a, pair, dim, &format!("families[{i}][{j}]"))?;
        }
    }
    Ok(())
}

impl OperatorSpec {
    pub fn pucci_plus(pair: EllipticityPair, dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(OperatorSpec { kind: OperatorKind::PucciPlus(pair), declared: pair, dim })
    }

    pub fn pucci_minus(pair: EllipticityPair, dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(OperatorSpec { kind: OperatorKind::PucciMinus(pair), declared: pair, dim })
    }

    /// `−tr(A·M)`; the eigenvalues of `A` must lie in `[λ, Λ]`.
    pub fn linear(a: SymMatrix, pair: EllipticityPair) -> Result<Self> {
        let dim = a.dim();
        check_dim(dim)?;
        check_member(&a, &pair, dim, "A")?;
        Ok(OperatorSpec { kind: OperatorKind::Linear(a), declared: pair, dim })
    }

    /// `−Δ` in dimension `dim`, declared with `(1, 1)`.
    pub fn laplacian(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Self::linear(SymMatrix::identity(dim), EllipticityPair { lambda: 1.0, big_lambda: 1.0 })
    }

    pub fn sup_inf(families: Vec<Vec<SymMatrix>>, pair: EllipticityPair) -> Result<Self> {
        let dim = families.first().and_then(|f| f.first()).map(|a| a.dim()).unwrap_or(0);
        check_dim(dim)?;
        check_families(&families, &pair, dim)?;
        Ok(OperatorSpec { kind: OperatorKind::SupInf(families), declared: pair, dim })
    }

    pub fn inf_sup(families: Vec<Vec<SymMatrix>>, pair: EllipticityPair) -> Result<Self> {
        let dim = families.first().and_then(|f| f.first()).map(|a| a.dim()).unwrap_or(0);
        check_dim(dim)?;
        check_families(&families, &pair, dim)?;
        Ok(OperatorSpec { kind: OperatorKind::InfSup(families), declared: pair, dim })
    }

    /// `−Σ c_i μ_i(M)`, each `c_i ∈ [λ, Λ]`.
    pub fn eigen_symmetric(coeffs: Vec<f64>, pair: EllipticityPair) -> Result<Self> {
        let dim = coeffs.len();
        check_dim(dim)?;
        for (i, &c) in coeffs.iter().enumerate() {
            let tol = FAMILY_TOL * (1.0 + pair.big_lambda);
            if !c.is_finite() || c < pair.lambda - tol || c > pair.big_lambda + tol {
                return Err(Error::InvalidInput(format!(
                    "coeffs[{i}] = {c} outside [{}, {}]",
                    pair.lambda, pair.big_lambda
                )));
            }
        }
        Ok(OperatorSpec { kind: OperatorKind::EigenSymmetric(coeffs), declared: pair, dim })
    }

    /// `F₁(M) = −Λ(μ₁ + μₙ) − λ Σ_{i=2}^{n−1} μ_i`.
    pub fn f1(pair: EllipticityPair, dim: usize) -> Result<Self> {
        check_dim(dim)?;
        let coeffs = (0..dim)
            .map(|i| if i == 0 || i == dim - 1 { pair.big_lambda } else { pair.lambda })
            .collect();
        Self::eigen_symmetric(coeffs, pair)
    }

    /// `F₂(M) = −λ(μ₁ + μₙ) − Λ Σ_{i=2}^{n−1} μ_i`.
    pub fn f2(pair: EllipticityPair, dim: usize) -> Result<Self> {
        check_dim(dim)?;
        let coeffs = (0..dim)
            .map(|i| if i == 0 || i == dim - 1 { pair.lambda } else { pair.big_lambda })
            .collect();
        Self::eigen_symmetric(coeffs, pair)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn pair(&self) -> EllipticityPair {
        self.declared
    }

    /// `F(M)`.
    pub fn eval(&self, m: &SymMatrix) -> Result<f64> {
        if m.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: m.dim() });
        }
        Ok(self.eval_unchecked(m))
    }

    /// `F(M)` without the dimension check.
    pub fn eval_unchecked(&self, m: &SymMatrix) -> f64 {
        if self.dim == 2 {
            return self.eval2(m.entries2());
        }
        match &self.kind {
            OperatorKind::PucciPlus(p) => pucci_plus_from_eigs(p, &eigenvalues_sym(m)),
            OperatorKind::PucciMinus(p) => pucci_minus_from_eigs(p, &eigenvalues_sym(m)),
            OperatorKind::Linear(a) => -a.trace_product(m),
            OperatorKind::SupInf(families) => families
                .iter()
                .map(|fam| fam.iter().map(|a| -a.trace_product(m)).fold(f64::INFINITY, f64::min))
                .fold(f64::NEG_INFINITY, f64::max),
            OperatorKind::InfSup(families) => families
                .iter()
                .map(|fam| fam.iter().map(|a| -a.trace_product(m)).fold(f64::NEG_INFINITY, f64::max))
                .fold(f64::INFINITY, f64::min),
            OperatorKind::EigenSymmetric(c) => {
                -eigenvalues_sym(m).iter().zip(c).map(|(mu, c)| c * mu).sum::<f64>()
            }
        }
    }

    /// Fast path for dimension 2 with `m = (m11, m12, m22)`.
    #[inline]
    pub fn eval2(&self, m: [f64; 3]) -> f64 {
        debug_assert_eq!(self.dim, 2);
        #[inline]
        fn lin(a: &SymMatrix, m: &[f64; 3]) -> f64 {
            let [a11, a12, a22] = a.entries2();
            -(a11 * m[0] + 2.0 * a12 * m[1] + a22 * m[2])
        }
        match &self.kind {
            OperatorKind::PucciPlus(p) => {
                let (lo, hi) = eigenvalues2(m);
                pucci_plus_from_eigs(p, &[lo, hi])
            }
            OperatorKind::PucciMinus(p) => {
                let (lo, hi) = eigenvalues2(m);
                pucci_minus_from_eigs(p, &[lo, hi])
            }
            OperatorKind::Linear(a) => lin(a, &m),
            OperatorKind::SupInf(families) => {
                let mut best = f64::NEG_INFINITY;
                for fam in families {
                    let mut inner = f64::INFINITY;
                    for a in fam {
                        inner = inner.min(lin(a, &m));
                    }
                    best = best.max(inner);
                }
                best
            }
            OperatorKind::InfSup(families) => {
                let mut best = f64::INFINITY;
                for fam in families {
                    let mut inner = f64::NEG_INFINITY;
                    for a in fam {
                        inner = inner.max(lin(a, &m));
                    }
                    best = best.min(inner);
                }
                best
            }
            OperatorKind::EigenSymmetric(c) => {
                let (lo, hi) = eigenvalues2(m);
                -(c[0] * lo + c[1] * hi)
            }
        }
    }

    /// The dual operator `F̃(M) = −F(−M)`.
    pub fn dual(&self) -> OperatorSpec {
        let kind = match &self.kind {
            OperatorKind::PucciPlus(p) => OperatorKind::PucciMinus(*p),
            OperatorKind::PucciMinus(p) => OperatorKind::PucciPlus(*p),
            OperatorKind::Linear(a) => OperatorKind::Linear(*a),
            OperatorKind::SupInf(f) => OperatorKind::InfSup(f.clone()),
            OperatorKind::InfSup(f) => OperatorKind::SupInf(f.clone()),
            OperatorKind::EigenSymmetric(c) => OperatorKind::EigenSymmetric(c.iter().rev().copied().collect()),
        };
        OperatorSpec { kind, declared: self.declared, dim: self.dim }
    }

    /// Short lowercase name of the operator family, as used in the JSON schema.
    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            OperatorKind::PucciPlus(_) => "pucci+",
            OperatorKind::PucciMinus(_) => "pucci-",
            OperatorKind::Linear(_) => "linear",
            OperatorKind::SupInf(_) => "supinf",
            OperatorKind::InfSup(_) => "infsup",
            OperatorKind::EigenSymmetric(_) => "eigen_sym",
        }
    }

    /// Parses the JSON operator schema
    /// `{"kind", "dim", "lambda", "Lambda", "A"?, "families"?, "coeffs"?}`.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: RawOperatorSpec =
            serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("operator spec: {e}")))?;
        raw.into_spec()
    }

    /// Serializes to the JSON operator schema (full row-major matrices).
    pub fn to_json_value(&self) -> serde_json::Value {
        let mut raw = RawOperatorSpec {
            kind: self.kind_name().to_string(),
            dim: self.dim,
            lambda: self.declared.lambda,
            big_lambda: self.declared.big_lambda,
            a: None,
            families: None,
            coeffs: None,
        };
        match &self.kind {
            OperatorKind::Linear(a) => raw.a = Some(a.to_rows()),
            OperatorKind::SupInf(f) | OperatorKind::InfSup(f) => {
                raw.families = Some(f.iter().map(|fam| fam.iter().map(|a| a.to_rows()).collect()).collect())
            }
            OperatorKind::EigenSymmetric(c) => raw.coeffs = Some(c.clone()),
            OperatorKind::PucciPlus(_) | OperatorKind::PucciMinus(_) => {}
        }
        serde_json::to_value(raw).expect("operator spec serializes")
    }
}

#[inline]
fn pucci_plus_from_eigs(p: &EllipticityPair, eigs: &[f64]) -> f64 {
    eigs.iter().map(|&mu| if mu > 0.0 { -p.lambda * mu } else { -p.big_lambda * mu }).sum()
}

#[inline]
fn pucci_minus_from_eigs(p: &EllipticityPair, eigs: &[f64]) -> f64 {
    eigs.iter().map(|&mu| if mu > 0.0 { -p.big_lambda * mu } else { -p.lambda * mu }).sum()
}

/// `P⁺_{λ,Λ}(M)`.
pub fn pucci_plus(pair: &EllipticityPair, m: &SymMatrix) -> f64 {
    pucci_plus_from_eigs(pair, &eigenvalues_sym(m))
}

/// `P⁻_{λ,Λ}(M)`.
pub fn pucci_minus(pair: &EllipticityPair, m: &SymMatrix) -> f64 {
    pucci_minus_from_eigs(pair, &eigenvalues_sym(m))
}

#[derive(Serialize, Deserialize)]
struct RawOperatorSpec {
    kind: String,
    dim: usize,
    lambda: f64,
    #[serde(rename = "Lambda")]
    big_lambda: f64,
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    a: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    families: Option<Vec<Vec<Vec<Vec<f64>>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    coeffs: Option<Vec<f64>>,
}

impl RawOperatorSpec {
    fn into_spec(self) -> Result<OperatorSpec> {
        let pair = EllipticityPair::new(self.lambda, self.big_lambda)?;
        check_dim(self.dim)?;
        let with_path = |path: String| move |e: Error| match e {
            Error::InvalidInput(msg) => Error::InvalidInput(format!("{path}: {msg}")),
            other => other,
        };
        let spec = match self.kind.as_str() {
            "pucci+" => OperatorSpec::pucci_plus(pair, self.dim)?,
            "pucci-" => OperatorSpec::pucci_minus(pair, self.dim)?,
            "linear" => {
                let rows = self.a.ok_or_else(|| Error::InvalidInput("A: required for kind linear".into()))?;
                let a = SymMatrix::from_rows(&rows).map_err(with_path("A".into()))?;
                OperatorSpec::linear(a, pair)?
            }
            "supinf" | "infsup" => {
                let raw = self
                    .families
                    .ok_or_else(|| Error::InvalidInput(format!("families: required for kind {}", self.kind)))?;
                let mut families = Vec::with_capacity(raw.len());
                for (i, fam) in raw.iter().enumerate() {
                    let mut members = Vec::with_capacity(fam.len());
                    for (j, rows) in fam.iter().enumerate() {
                        members.push(SymMatrix::from_rows(rows).map_err(with_path(format!("families[{i}][{j}]")))?);
                    }
                    families.push(members);
                }
                if self.kind == "supinf" {
                    OperatorSpec::sup_inf(families, pair)?
                } else {
                    OperatorSpec::inf_sup(families, pair)?
                }
            }
            "eigen_sym" => {
                let coeffs = self.coeffs.ok_or_else(|| Error::InvalidInput("coeffs: required for kind eigen_sym".into()))?;
                OperatorSpec::eigen_symmetric(coeffs, pair)?
            }
            other => return Err(Error::InvalidInput(format!("kind: unknown operator kind {other:?}"))),
        };
        if spec.dim != self.dim {
            return Err(Error::InvalidInput(format!("dim: declared {} but matrices have dim {}", self.dim, spec.dim)));
        }
        Ok(spec)
    }
}

/// Outcome of [`verify_h1_h2`]. Violations are normalized: the ellipticity
/// violation is measured per unit `tr N`.
#[derive(Clone, Debug, Serialize)]
pub struct StructureReport {
    pub h1_pass: bool,
    pub h2_pass: bool,
    pub worst_h1_violation: f64,
    pub worst_h2_violation: f64,
    pub worst_violation: f64,
    pub n_samples: usize,
}

/// Audits uniform ellipticity and positive homogeneity on random samples.
///
/// The first `n` samples use the coordinate projections `N = e_i ⊗ e_i`, the
/// rest draw `N = B·Bᵀ` at random.
pub fn verify_h1_h2(f: &OperatorSpec, pair: &EllipticityPair, n_samples: usize, seed: u64) -> StructureReport {
    let n = f.dim;
    let mut rng = sampling::rng(seed);
    let mut worst_h1 = f64::NEG_INFINITY;
    let mut worst_h2 = f64::NEG_INFINITY;
    let mut h1_pass = true;
    let mut h2_pass = true;
    for s in 0..n_samples.max(1) {
        let m = sampling::random_sym(&mut rng, n);
        let big_n = if s < n {
            let mut e = vec![0.0; n];
            e[s] = 1.0;
            SymMatrix::outer(&e).scale(rng.random_range(0.1..3.0))
        } else {
            sampling::random_psd(&mut rng, n)
        };
        let tr_n = big_n.trace();
        let fm = f.eval_unchecked(&m);
        let fmn = f.eval_unchecked(&m.sub(&big_n));
        let diff = fmn - fm;
        if tr_n > 0.0 {
            let excess = (pair.lambda * tr_n - diff).max(diff - pair.big_lambda * tr_n);
            worst_h1 = worst_h1.max(excess / tr_n);
            if excess > 1e-9 * (1.0 + fm.abs() + fmn.abs()) {
                h1_pass = false;
            }
        }
        let t: f64 = rng.random_range(0.0..10.0);
        let ftm = f.eval_unchecked(&m.scale(t));
        let gap = (ftm - t * fm).abs();
        let allowed = 1e-9 * (1.0 + t * fm.abs());
        worst_h2 = worst_h2.max(gap - allowed);
        if gap > allowed {
            h2_pass = false;
        }
    }
    StructureReport {
        h1_pass,
        h2_pass,
        worst_h1_violation: worst_h1,
        worst_h2_violation: worst_h2,
        worst_violation: worst_h1.max(worst_h2),
        n_samples: n_samples.max(1),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SandwichReport {
    pub pass: bool,
    /// `max(P⁻(M) − F(M), F(M) − P⁺(M))` over the samples.
    pub worst_violation: f64,
    /// Smallest gap `min(F − P⁻, P⁺ − F)` observed.
    pub min_gap: f64,
    pub n_samples: usize,
}

/// Checks `P⁻(M) ≤ F(M) ≤ P⁺(M)` with the declared pair on random `M`.
pub fn pucci_sandwich_check(f: &OperatorSpec, n_samples: usize, seed: u64) -> SandwichReport {
    let pair = f.declared;
    let mut rng = sampling::rng(seed);
    let mut worst = f64::NEG_INFINITY;
    let mut min_gap = f64::INFINITY;
    let mut pass = true;
    for _ in 0..n_samples.max(1) {
        let m = sampling::random_sym(&mut rng, f.dim);
        let eigs = eigenvalues_sym(&m);
        let lo = pucci_minus_from_eigs(&pair, &eigs);
        let hi = pucci_plus_from_eigs(&pair, &eigs);
        let v = f.eval_unchecked(&m);
        let violation = (lo - v).max(v - hi);
        worst = worst.max(violation);
        min_gap = min_gap.min((v - lo).min(hi - v));
        if violation > 1e-10 * (1.0 + v.abs()) {
            pass = false;
        }
    }
    SandwichReport { pass, worst_violation: worst, min_gap, n_samples: n_samples.max(1) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pair(l: f64, u: f64) -> EllipticityPair {
        EllipticityPair::new(l, u).unwrap()
    }

    #[test]
    fn packed_layout_roundtrip() {
        let m = SymMatrix::from_fn(4, |i, j| (10 * i + j) as f64);
        for i in 0..4 {
            for j in 0..4 {
                let (a, b) = if i <= j { (i, j) } else { (j, i) };
                assert_eq!(m.get(i, j), (10 * a + b) as f64);
            }
        }
    }

    #[test]
    fn pucci_on_reflection() {
        let m = SymMatrix::from_diag(&[1.0, -1.0]);
        let p = OperatorSpec::pucci_plus(pair(1.0, 2.0), 2).unwrap();
        let q = OperatorSpec::pucci_minus(pair(1.0, 2.0), 2).unwrap();
        assert_abs_diff_eq!(p.eval(&m).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q.eval(&m).unwrap(), -1.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_matrix_maps_to_zero() {
        let ops = [
            OperatorSpec::pucci_plus(pair(1.0, 2.0), 3).unwrap(),
            OperatorSpec::pucci_minus(pair(1.0, 2.0), 3).unwrap(),
            OperatorSpec::laplacian(3).unwrap(),
            OperatorSpec::f1(pair(1.0, 2.0), 3).unwrap(),
        ];
        for op in &ops {
            assert_eq!(op.eval(&SymMatrix::zeros(3)).unwrap(), 0.0);
        }
    }

    #[test]
    fn linear_is_negative_trace() {
        let op = OperatorSpec::laplacian(2).unwrap();
        assert_eq!(op.eval(&SymMatrix::from_diag(&[3.0, 4.0])).unwrap(), -7.0);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let op = OperatorSpec::laplacian(2).unwrap();
        assert!(matches!(
            op.eval(&SymMatrix::identity(3)),
            Err(Error::DimensionMismatch { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn eigenvalues_small_cases() {
        let m = SymMatrix::new2(0.0, 1.0, 0.0);
        assert_eq!(eigenvalues_sym(&m), vec![-1.0, 1.0]);
        let d = SymMatrix::from_diag(&[2.0, -1.0, -1.0]);
        let e = eigenvalues_sym(&d);
        for (got, want) in e.iter().zip([-1.0, -1.0, 2.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-14);
        }
    }

    #[test]
    fn eigen_reconstruction() {
        let mut rng = sampling::rng(3);
        for n in 2..=6 {
            for _ in 0..20 {
                let m = sampling::random_sym(&mut rng, n).scale(5.0);
                let (vals, vecs) = eigen_decomposition(&m);
                let mut rec = SymMatrix::zeros(n);
                for (mu, v) in vals.iter().zip(&vecs) {
                    rec = rec.add(&SymMatrix::outer(v).scale(*mu));
                }
                let err = rec.sub(&m).max_abs();
                assert!(err <= 1e-10 * (1.0 + m.max_abs()), "n={n} err={err}");
                assert!(vals.windows(2).all(|w| w[0] <= w[1]));
            }
        }
    }

    #[test]
    fn eigen_trace_and_determinant_4x4() {
        let mut rng = sampling::rng(11);
        for _ in 0..50 {
            let m = sampling::random_sym(&mut rng, 4);
            let e = eigenvalues_sym(&m);
            let det = m.to_nalgebra().determinant();
            assert_abs_diff_eq!(e.iter().sum::<f64>(), m.trace(), epsilon = 1e-9);
            assert_abs_diff_eq!(e.iter().product::<f64>(), det, epsilon = 1e-9);
        }
    }

    #[test]
    fn duals_evaluate_pointwise() {
        let p = pair(1.0, 2.0);
        let mut rng = sampling::rng(5);
        let fam = vec![
            vec![SymMatrix::new2(1.3, 0.2, 1.5), SymMatrix::new2(2.0, 0.0, 1.0)],
            vec![SymMatrix::new2(1.2, -0.3, 1.8)],
        ];
        let ops = vec![
            OperatorSpec::pucci_plus(p, 2).unwrap(),
            OperatorSpec::linear(SymMatrix::new2(1.5, 0.25, 1.2), p).unwrap(),
            OperatorSpec::sup_inf(fam, p).unwrap(),
            OperatorSpec::eigen_symmetric(vec![1.0, 1.7], p).unwrap(),
        ];
        for op in &ops {
            let d = op.dual();
            let dd = d.dual();
            for _ in 0..100 {
                let m = sampling::random_sym(&mut rng, 2).scale(3.0);
                let expected = -op.eval_unchecked(&m.scale(-1.0));
                assert_abs_diff_eq!(d.eval_unchecked(&m), expected, epsilon = 1e-12);
                assert_abs_diff_eq!(dd.eval_unchecked(&m), op.eval_unchecked(&m), epsilon = 1e-12);
            }
        }
        assert_eq!(
            OperatorSpec::pucci_plus(p, 2).unwrap().dual(),
            OperatorSpec::pucci_minus(p, 2).unwrap()
        );
        let lin = OperatorSpec::linear(SymMatrix::new2(1.5, 0.25, 1.2), p).unwrap();
        assert_eq!(lin.dual(), lin);
    }

    #[test]
    fn h1_h2_audit() {
        let p12 = pair(1.0, 2.0);
        let pp = OperatorSpec::pucci_plus(p12, 2).unwrap();
        let r = verify_h1_h2(&pp, &p12, 1000, 0);
        assert!(r.h1_pass && r.h2_pass, "{r:?}");

        let lin = OperatorSpec::linear(SymMatrix::from_diag(&[1.0, 3.0]), pair(1.0, 3.0)).unwrap();
        let r = verify_h1_h2(&lin, &pair(1.0, 3.0), 500, 1);
        assert!(r.h1_pass && r.h2_pass, "{r:?}");

        // F(M − e₂⊗e₂) − F(M) = 3 per unit trace, one more than Λ = 2 allows.
        let r = verify_h1_h2(&lin, &p12, 500, 1);
        assert!(!r.h1_pass);
        assert!(r.h2_pass);
        assert_abs_diff_eq!(r.worst_h1_violation, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn sandwich_holds() {
        let p12 = pair(1.0, 2.0);
        let f1 = OperatorSpec::f1(p12, 4).unwrap();
        assert!(pucci_sandwich_check(&f1, 500, 2).pass);

        let pm = OperatorSpec::pucci_minus(p12, 3).unwrap();
        let r = pucci_sandwich_check(&pm, 500, 2);
        assert!(r.pass);
        assert!(r.min_gap.abs() <= 1e-12);

        // singleton sup-inf family is the linear operator, strictly inside the envelope
        let a = SymMatrix::new2(1.4, 0.3, 1.6);
        let s = OperatorSpec::sup_inf(vec![vec![a]], p12).unwrap();
        let l = OperatorSpec::linear(a, p12).unwrap();
        let mut rng = sampling::rng(9);
        for _ in 0..200 {
            let m = sampling::random_sym(&mut rng, 2);
            assert_eq!(s.eval_unchecked(&m), l.eval_unchecked(&m));
            let (lo, hi) = (pucci_minus(&p12, &m), pucci_plus(&p12, &m));
            let v = l.eval_unchecked(&m);
            assert!(lo < v && v < hi);
        }
    }

    #[test]
    fn f1_coefficients() {
        let f = OperatorSpec::f1(pair(1.0, 2.0), 4).unwrap();
        assert_eq!(f.kind, OperatorKind::EigenSymmetric(vec![2.0, 1.0, 1.0, 2.0]));
        let g = OperatorSpec::f2(pair(1.0, 2.0), 4).unwrap();
        assert_eq!(g.kind, OperatorKind::EigenSymmetric(vec![1.0, 2.0, 2.0, 1.0]));
        assert_eq!(f.dual(), f);
    }

    #[test]
    fn json_schema_roundtrip_and_validation() {
        let text = r#"{"kind":"supinf","dim":2,"lambda":1,"Lambda":2,
            "families":[[[[1,0],[0,2]],[[1.5,0.1],[0.1,1.5]]],[[[2,0],[0,1]]]]}"#;
        let op = OperatorSpec::from_json_str(text).unwrap();
        let back = OperatorSpec::from_json_str(&op.to_json_value().to_string()).unwrap();
        assert_eq!(op, back);

        let asym = r#"{"kind":"linear","dim":2,"lambda":1,"Lambda":2,"A":[[1.5,0.001],[0,1.5]]}"#;
        let err = OperatorSpec::from_json_str(asym).unwrap_err().to_string();
        assert!(err.contains("A:") && err.contains("asymmetry"), "{err}");

        let out_of_range = r#"{"kind":"linear","dim":2,"lambda":1,"Lambda":2,"A":[[3,0],[0,1]]}"#;
        assert!(OperatorSpec::from_json_str(out_of_range).is_err());

        let tiny = r#"{"kind":"linear","dim":2,"lambda":1,"Lambda":2,"A":[[1.5,1e-9],[0,1.5]]}"#;
        let op = OperatorSpec::from_json_str(tiny).unwrap();
        match op.kind {
            OperatorKind::Linear(a) => assert_eq!(a.get(0, 1), 5e-10),
            _ => unreachable!(),
        }
    }

    proptest::proptest! {
        #[test]
        fn homogeneity_and_ellipticity(seed in 0u64..2000, t in proptest::sample::select(vec![0.0, 0.5, 1.0, 2.0, 10.0])) {
            let p = pair(1.0, 2.5);
            let mut rng = sampling::rng(seed);
            let ops = [
                OperatorSpec::pucci_plus(p, 3).unwrap(),
                OperatorSpec::pucci_minus(p, 3).unwrap(),
                OperatorSpec::f2(p, 3).unwrap(),
                OperatorSpec::eigen_symmetric(vec![1.3, 2.5, 1.0], p).unwrap(),
            ];
            let m = sampling::random_sym(&mut rng, 3);
            let n = sampling::random_psd(&mut rng, 3);
            for op in &ops {
                let fm = op.eval_unchecked(&m);
                proptest::prop_assert!((op.eval_unchecked(&m.scale(t)) - t * fm).abs() <= 1e-9 * (1.0 + t * fm.abs()));
                proptest::prop_assert!(op.eval_unchecked(&m.sub(&n)) >= fm - 1e-12);
                let lo = pucci_minus(&p, &m);
                let hi = pucci_plus(&p, &m);
                proptest::prop_assert!(lo - 1e-10 <= fm && fm <= hi + 1e-10);
            }
            let pp = OperatorSpec::pucci_plus(p, 3).unwrap();
            let pm = OperatorSpec::pucci_minus(p, 3).unwrap();
            proptest::prop_assert!((pp.eval_unchecked(&m) + pm.eval_unchecked(&m.scale(-1.0))).abs() <= 1e-13);
        }
    }
}
