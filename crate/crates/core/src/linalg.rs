//! Dense complex linear algebra over small Hilbert spaces.
//!
//! States, operators, projectors, projector families and spectral
//! decompositions. Every constructor validates its invariants against the
//! tolerances below, so downstream code can rely on them.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use thiserror::Error;

/// Max-abs entry deviation allowed in operator identities.
pub const TAU_OP: f64 = 1e-9;
/// Allowed deviation of a normalized state's norm from 1.
pub const TAU_NORM: f64 = 1e-9;
/// Eigenvalues closer than this are merged into one spectral projector.
pub const TAU_EIG: f64 = 1e-8;
/// Largest Hilbert-space dimension accepted anywhere.
pub const MAX_DIM: usize = 4096;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("operator is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension {0} exceeds the cap of {MAX_DIM}")]
    DimensionTooLarge(usize),
    #[error("dimension must be positive")]
    EmptyDimension,
    #[error("non-finite entry at index {0}")]
    NonFinite(usize),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("operator is not Hermitian (max deviation {max_dev:e})")]
    NotHermitian { max_dev: f64 },
    #[error("operator is not idempotent (max deviation {max_dev:e})")]
    NotIdempotent { max_dev: f64 },
    #[error("operator is not unitary (max deviation of U^dagger U from I {max_dev:e})")]
    NotUnitary { max_dev: f64 },
    #[error("state is not normalized (norm {norm})")]
    NotNormalized { norm: f64 },
    #[error("zero vector cannot be normalized")]
    ZeroVector,
    #[error("invalid projector family: {}", describe_defects(.0))]
    InvalidFamily(Vec<FamilyDefect>),
}

/// One reason a list of projectors fails to be a complete orthogonal family.
#[derive(Debug, Clone, PartialEq)]
pub enum FamilyDefect {
    Empty,
    Incomplete { max_dev: f64 },
    NotOrthogonal { a: usize, b: usize, max_dev: f64 },
}

fn describe_defects(defects: &[FamilyDefect]) -> String {
    defects
        .iter()
        .map(|d| match d {
            FamilyDefect::Empty => "empty family".to_string(),
            FamilyDefect::Incomplete { max_dev } => {
                format!("members do not sum to identity (max deviation {max_dev:e})")
            }
            FamilyDefect::NotOrthogonal { a, b, max_dev } => {
                format!("members {a} and {b} are not orthogonal (max |PaPb| {max_dev:e})")
            }
        })
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T> = std::result::Result<T, LinalgError>;

fn check_dim(n: usize) -> Result<()> {
    if n == 0 {
        Err(LinalgError::EmptyDimension)
    } else if n > MAX_DIM {
        Err(LinalgError::DimensionTooLarge(n))
    } else {
        Ok(())
    }
}

fn check_finite<'a>(values: impl Iterator<Item = &'a C64>) -> Result<()> {
    for (i, z) in values.enumerate() {
        if !z.re.is_finite() || !z.im.is_finite() {
            return Err(LinalgError::NonFinite(i));
        }
    }
    Ok(())
}

/// A ket in an `n`-dimensional Hilbert space.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector(DVector<C64>);

impl StateVector {
    pub fn new(entries: Vec<C64>) -> Result<Self> {
        check_dim(entries.len())?;
        check_finite(entries.iter())?;
        Ok(Self(DVector::from_vec(entries)))
    }

    /// Builds the state and rescales it to unit norm.
    pub fn normalized(entries: Vec<C64>) -> Result<Self> {
        let v = Self::new(entries)?;
        let norm = v.norm();
        if norm == 0.0 {
            return Err(LinalgError::ZeroVector);
        }
        Ok(Self(v.0.unscale(norm)))
    }

    /// Computational basis vector `|index⟩`.
    pub fn basis(dim: usize, index: usize) -> Result<Self> {
        check_dim(dim)?;
        if index >= dim {
            return Err(LinalgError::DimensionMismatch { expected: dim, found: index + 1 });
        }
        let mut v = DVector::zeros(dim);
        v[index] = C64::new(1.0, 0.0);
        Ok(Self(v))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn entries(&self) -> &[C64] {
        self.0.as_slice()
    }

    pub fn vector(&self) -> &DVector<C64> {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm() - 1.0).abs() < TAU_NORM
    }

    pub fn require_normalized(&self) -> Result<()> {
        if self.is_normalized() {
            Ok(())
        } else {
            Err(LinalgError::NotNormalized { norm: self.norm() })
        }
    }

    /// `⟨self|other⟩`, antilinear in `self`.
    pub fn inner(&self, other: &StateVector) -> C64 {
        self.0.dotc(&other.0)
    }
}

/// A square complex matrix acting on the system Hilbert space.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator(DMatrix<C64>);

impl Operator {
    /// Builds an operator from rows; `rows[i][j]` is the `(i, j)` entry.
    pub fn from_rows(rows: &[Vec<C64>]) -> Result<Self> {
        let n = rows.len();
        check_dim(n)?;
        for r in rows {
            if r.len() != n {
                return Err(LinalgError::NotSquare { rows: n, cols: r.len() });
            }
        }
        check_finite(rows.iter().flatten())?;
        Ok(Self(DMatrix::from_fn(n, n, |i, j| rows[i][j])))
    }

    /// Real-entry convenience constructor.
    pub fn from_real_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let rows: Vec<Vec<C64>> = rows
            .iter()
            .map(|r| r.iter().map(|&x| C64::new(x, 0.0)).collect())
            .collect();
        Self::from_rows(&rows)
    }

    pub fn from_matrix(m: DMatrix<C64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(LinalgError::NotSquare { rows: m.nrows(), cols: m.ncols() });
        }
        check_dim(m.nrows())?;
        check_finite(m.iter())?;
        Ok(Self(m))
    }

    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(DMatrix::zeros(dim, dim))
    }

    /// `|ket⟩⟨bra|`.
    pub fn outer(ket: &StateVector, bra: &StateVector) -> Self {
        Self(ket.vector() * bra.vector().adjoint())
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.0[(row, col)]
    }

    pub fn adjoint(&self) -> Self {
        Self(self.0.adjoint())
    }

    pub fn mul(&self, rhs: &Operator) -> Self {
        Self(&self.0 * &rhs.0)
    }

    pub fn add(&self, rhs: &Operator) -> Self {
        Self(&self.0 + &rhs.0)
    }

    pub fn scale(&self, s: C64) -> Self {
        Self(&self.0 * s)
    }

    pub fn apply(&self, v: &StateVector) -> StateVector {
        StateVector(&self.0 * v.vector())
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }

    /// Largest `|self_ij - other_ij|`.
    pub fn max_abs_diff(&self, other: &Operator) -> f64 {
        (&self.0 - &other.0).iter().fold(0.0_f64, |m, z| m.max(z.norm()))
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, z| m.max(z.norm()))
    }

    pub fn hermiticity_deviation(&self) -> f64 {
        self.max_abs_diff(&self.adjoint())
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermiticity_deviation() < TAU_OP
    }

    pub fn require_dim(&self, dim: usize) -> Result<()> {
        if self.dim() == dim {
            Ok(())
        } else {
            Err(LinalgError::DimensionMismatch { expected: dim, found: self.dim() })
        }
    }
}

/// A Hermitian idempotent operator together with its rank.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    op: Operator,
    rank: usize,
}

impl Projector {
    /// Rank-1 projector `|v⟩⟨v|` onto the normalized direction of `v`.
    pub fn onto(v: &StateVector) -> Result<Self> {
        let norm = v.norm();
        if norm == 0.0 {
            return Err(LinalgError::ZeroVector);
        }
        let u = StateVector(v.vector().unscale(norm));
        Ok(Self { op: Operator::outer(&u, &u), rank: 1 })
    }

    /// Projector onto the computational basis vector `|index⟩`.
    pub fn basis(dim: usize, index: usize) -> Result<Self> {
        Self::onto(&StateVector::basis(dim, index)?)
    }

    pub fn identity(dim: usize) -> Self {
        Self { op: Operator::identity(dim), rank: dim }
    }

    pub fn operator(&self) -> &Operator {
        &self.op
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    /// Unit vector spanning the range of a rank-1 projector, with an
    /// arbitrary global phase. `None` for higher ranks.
    pub fn rank_one_vector(&self) -> Option<StateVector> {
        if self.rank != 1 {
            return None;
        }
        let m = self.op.matrix();
        let best = (0..m.ncols())
            .max_by(|&a, &b| m.column(a).norm().total_cmp(&m.column(b).norm()))?;
        let col = m.column(best).into_owned();
        let norm = col.norm();
        Some(StateVector(col.unscale(norm)))
    }
}

/// Accepts `op` as a projector if it is Hermitian and idempotent within
/// [`TAU_OP`]; the rank is the rounded trace.
pub fn validate_projector(op: Operator) -> Result<Projector> {
    let herm = op.hermiticity_deviation();
    if herm >= TAU_OP {
        return Err(LinalgError::NotHermitian { max_dev: herm });
    }
    let idem = op.mul(&op).max_abs_diff(&op);
    if idem >= TAU_OP {
        return Err(LinalgError::NotIdempotent { max_dev: idem });
    }
    let rank = op.trace().re.round().max(0.0) as usize;
    Ok(Projector { op, rank })
}

/// A complete set of mutually orthogonal projectors on one time slice.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorFamily {
    members: Vec<Projector>,
}

impl ProjectorFamily {
    pub fn members(&self) -> &[Projector] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.members[0].dim()
    }

    /// Rank-1 projectors onto the computational basis.
    pub fn computational(dim: usize) -> Result<Self> {
        let members = (0..dim).map(|i| Projector::basis(dim, i)).collect::<Result<Vec<_>>>()?;
        validate_family(members)
    }
}

/// Checks that `ps` sum to the identity and are pairwise orthogonal.
/// All defects found are reported together.
pub fn validate_family(ps: Vec<Projector>) -> Result<ProjectorFamily> {
    let Some(first) = ps.first() else {
        return Err(LinalgError::InvalidFamily(vec![FamilyDefect::Empty]));
    };
    let dim = first.dim();
    for p in &ps {
        p.op.require_dim(dim)?;
    }
    let mut defects = Vec::new();
    let mut total = Operator::zeros(dim);
    for p in &ps {
        total = total.add(&p.op);
    }
    let completeness = total.max_abs_diff(&Operator::identity(dim));
    if completeness >= TAU_OP {
        defects.push(FamilyDefect::Incomplete { max_dev: completeness });
    }
    for a in 0..ps.len() {
        for b in (a + 1)..ps.len() {
            let overlap = ps[a].op.mul(&ps[b].op).max_abs();
            if overlap >= TAU_OP {
                defects.push(FamilyDefect::NotOrthogonal { a, b, max_dev: overlap });
            }
        }
    }
    if defects.is_empty() {
        Ok(ProjectorFamily { members: ps })
    } else {
        Err(LinalgError::InvalidFamily(defects))
    }
}

/// Distinct eigenvalues of a Hermitian operator with their eigenprojectors,
/// sorted by ascending eigenvalue.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    pairs: Vec<(f64, Projector)>,
}

impl SpectralDecomposition {
    pub fn pairs(&self) -> &[(f64, Projector)] {
        &self.pairs
    }

    pub fn eigenvalues(&self) -> impl Iterator<Item = f64> + '_ {
        self.pairs.iter().map(|(l, _)| *l)
    }

    pub fn family(&self) -> Result<ProjectorFamily> {
        validate_family(self.pairs.iter().map(|(_, p)| p.clone()).collect())
    }

    /// `Σ λ P`.
    pub fn reconstruct(&self) -> Operator {
        let dim = self.pairs[0].1.dim();
        self.pairs.iter().fold(Operator::zeros(dim), |acc, (l, p)| {
            acc.add(&p.operator().scale(C64::new(*l, 0.0)))
        })
    }

    /// `Σ f(λ) P`.
    pub fn map(&self, f: impl Fn(f64) -> C64) -> Operator {
        let dim = self.pairs[0].1.dim();
        self.pairs
            .iter()
            .fold(Operator::zeros(dim), |acc, (l, p)| acc.add(&p.operator().scale(f(*l))))
    }

    pub fn max_abs_eigenvalue(&self) -> f64 {
        self.eigenvalues().fold(0.0, |m, l| m.max(l.abs()))
    }
}

pub fn spectral_decompose(a: &Operator) -> Result<SpectralDecomposition> {
    let herm = a.hermiticity_deviation();
    if herm >= TAU_OP {
        return Err(LinalgError::NotHermitian { max_dev: herm });
    }
    // Symmetrize so the solver sees an exactly Hermitian input.
    let h = (a.matrix() + a.matrix().adjoint()).unscale(2.0);
    let dim = h.nrows();
    let eig = nalgebra::SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));

    // Group consecutive eigenvalues within TAU_EIG of the group's first member.
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for &i in &order {
        match groups.last_mut() {
            Some(g) if (eig.eigenvalues[i] - eig.eigenvalues[g[0]]).abs() < TAU_EIG => g.push(i),
            _ => groups.push(vec![i]),
        }
    }

    let pairs = groups
        .into_iter()
        .map(|g| {
            let lambda = g.iter().map(|&i| eig.eigenvalues[i]).sum::<f64>() / g.len() as f64;
            let mut p = DMatrix::<C64>::zeros(dim, dim);
            for &i in &g {
                let v = eig.eigenvectors.column(i);
                p += &v * v.adjoint();
            }
            (lambda, Projector { op: Operator(p), rank: g.len() })
        })
        .collect();
    Ok(SpectralDecomposition { pairs })
}

/// Accepts `u` if `U†U = I` within [`TAU_OP`].
pub fn validate_unitary(u: Operator) -> Result<Operator> {
    validate_unitary_with(u, TAU_OP)
}

pub fn validate_unitary_with(u: Operator, tol: f64) -> Result<Operator> {
    let dev = u.adjoint().mul(&u).max_abs_diff(&Operator::identity(u.dim()));
    if dev >= tol {
        return Err(LinalgError::NotUnitary { max_dev: dev });
    }
    Ok(u)
}

/// Frequently used single-qubit operators.
pub mod qubit {
    use super::*;

    pub fn pauli_x() -> Operator {
        Operator::from_real_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).expect("static")
    }

    pub fn pauli_y() -> Operator {
        let i = C64::new(0.0, 1.0);
        let z = C64::new(0.0, 0.0);
        Operator::from_rows(&[vec![z, -i], vec![i, z]]).expect("static")
    }

    pub fn pauli_z() -> Operator {
        Operator::from_real_rows(&[vec![1.0, 0.0], vec![0.0, -1.0]]).expect("static")
    }

    pub fn hadamard() -> Operator {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        Operator::from_real_rows(&[vec![s, s], vec![s, -s]]).expect("static")
    }

    pub fn ket0() -> StateVector {
        StateVector::basis(2, 0).expect("static")
    }

    pub fn ket1() -> StateVector {
        StateVector::basis(2, 1).expect("static")
    }

    pub fn ket_plus() -> StateVector {
        StateVector::normalized(vec![C64::new(1.0, 0.0), C64::new(1.0, 0.0)]).expect("static")
    }

    pub fn ket_minus() -> StateVector {
        StateVector::normalized(vec![C64::new(1.0, 0.0), C64::new(-1.0, 0.0)]).expect("static")
    }
}
