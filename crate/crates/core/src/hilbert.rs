//! Dense complex linear algebra over `2^n`-dimensional qubit registers.
//!
//! Basis index convention: qubit 1 is the most significant bit, so the ket
//! `|q1 q2 ... qn⟩` sits at index `q1·2^(n-1) + ... + qn`. Pair codes lay their
//! qubits out as `1, 1', 2, 2', ...`.

use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen, SVD};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Default tolerance for eigenvalue clustering, ranks and membership tests.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Largest register handled with dense operators unless `QCAV_MAX_QUBITS` says otherwise.
pub const DEFAULT_MAX_QUBITS: usize = 12;

const ORTHONORMAL_TOL: f64 = 1e-10;

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn max_qubits() -> usize {
    std::env::var("QCAV_MAX_QUBITS")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(DEFAULT_MAX_QUBITS)
}

pub fn check_qubits(n_qubits: usize) -> Result<()> {
    let cap = max_qubits();
    if n_qubits > cap {
        return Err(Error::ResourceLimit { qubits: n_qubits, cap });
    }
    Ok(())
}

fn dim_of(n_qubits: usize) -> usize {
    1usize << n_qubits
}

/// Amplitudes of an `n`-qubit pure state in the computational basis.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amplitudes: CVector,
}

impl StateVector {
    pub fn new(n_qubits: usize, amplitudes: Vec<C64>) -> Result<Self> {
        Self::from_vector(n_qubits, CVector::from_vec(amplitudes))
    }

    pub fn from_vector(n_qubits: usize, amplitudes: CVector) -> Result<Self> {
        if n_qubits == 0 {
            return Err(Error::InvalidArgument("a state needs at least one qubit".into()));
        }
        check_qubits(n_qubits)?;
        if amplitudes.len() != dim_of(n_qubits) {
            return Err(Error::DimensionMismatch {
                expected: dim_of(n_qubits),
                found: amplitudes.len(),
            });
        }
        Ok(Self { n_qubits, amplitudes })
    }

    pub fn zeros(n_qubits: usize) -> Result<Self> {
        check_qubits(n_qubits)?;
        Self::from_vector(n_qubits, CVector::zeros(dim_of(n_qubits)))
    }

    /// The computational basis ket with the given index.
    pub fn basis(n_qubits: usize, index: usize) -> Result<Self> {
        let mut v = Self::zeros(n_qubits)?;
        if index >= v.dim() {
            return Err(Error::InvalidArgument(format!(
                "basis index {index} out of range for {n_qubits} qubits"
            )));
        }
        v.amplitudes[index] = C64::new(1.0, 0.0);
        Ok(v)
    }

    /// Parses a bitstring such as `"0101"` (qubit 1 leftmost).
    pub fn from_bits(bits: &str) -> Result<Self> {
        let index = bits_to_index(bits)?;
        Self::basis(bits.len(), index)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }

    pub fn into_vector(self) -> CVector {
        self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        (self.norm() - 1.0).abs() <= tol
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n <= f64::MIN_POSITIVE {
            return Err(Error::InvalidArgument("cannot normalize the zero vector".into()));
        }
        Ok(Self {
            n_qubits: self.n_qubits,
            amplitudes: self.amplitudes.unscale(n),
        })
    }

    /// `⟨self|other⟩`
    pub fn inner(&self, other: &StateVector) -> C64 {
        self.amplitudes.dotc(&other.amplitudes)
    }

    pub fn max_abs_diff(&self, other: &StateVector) -> f64 {
        max_abs_diff_vec(&self.amplitudes, &other.amplitudes)
    }

    /// Removes the global phase: the first non-negligible amplitude becomes real positive.
    pub fn with_canonical_phase(&self) -> Self {
        let mut out = self.clone();
        let scale = self.amplitudes.iter().map(|a| a.norm()).fold(0.0, f64::max);
        if let Some(first) = self.amplitudes.iter().find(|a| a.norm() > 1e-12 * scale) {
            let phase = first.conj() / first.norm();
            out.amplitudes *= phase;
        }
        out
    }

    /// Nonzero amplitudes keyed by bitstring, in index order.
    pub fn sparse_terms(&self, threshold: f64) -> Vec<(String, C64)> {
        self.amplitudes
            .iter()
            .enumerate()
            .filter(|(_, a)| a.norm() > threshold)
            .map(|(i, a)| (index_to_bits(i, self.n_qubits), *a))
            .collect()
    }
}

impl Add for &StateVector {
    type Output = StateVector;
    fn add(self, rhs: &StateVector) -> StateVector {
        assert_eq!(self.n_qubits, rhs.n_qubits, "qubit count mismatch");
        StateVector {
            n_qubits: self.n_qubits,
            amplitudes: &self.amplitudes + &rhs.amplitudes,
        }
    }
}

impl Sub for &StateVector {
    type Output = StateVector;
    fn sub(self, rhs: &StateVector) -> StateVector {
        assert_eq!(self.n_qubits, rhs.n_qubits, "qubit count mismatch");
        StateVector {
            n_qubits: self.n_qubits,
            amplitudes: &self.amplitudes - &rhs.amplitudes,
        }
    }
}

impl Mul<C64> for &StateVector {
    type Output = StateVector;
    fn mul(self, rhs: C64) -> StateVector {
        StateVector {
            n_qubits: self.n_qubits,
            amplitudes: &self.amplitudes * rhs,
        }
    }
}

pub fn bits_to_index(bits: &str) -> Result<usize> {
    if bits.is_empty() {
        return Err(Error::InvalidArgument("empty bitstring".into()));
    }
    bits.chars().try_fold(0usize, |acc, ch| match ch {
        '0' => Ok(acc << 1),
        '1' => Ok((acc << 1) | 1),
        other => Err(Error::InvalidArgument(format!(
            "bitstring {bits:?} contains {other:?}"
        ))),
    })
}

pub fn index_to_bits(index: usize, n_qubits: usize) -> String {
    (0..n_qubits)
        .map(|q| if (index >> (n_qubits - 1 - q)) & 1 == 1 { '1' } else { '0' })
        .collect()
}

/// Bit mask selecting (1-based) `qubit` in an `n`-qubit basis index.
pub fn qubit_mask(qubit: usize, n_qubits: usize) -> usize {
    1usize << (n_qubits - qubit)
}

/// A dense linear operator on `n` qubits.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorMatrix {
    n_qubits: usize,
    entries: CMatrix,
}

impl OperatorMatrix {
    pub fn new(n_qubits: usize, entries: CMatrix) -> Result<Self> {
        check_qubits(n_qubits)?;
        let d = dim_of(n_qubits);
        if entries.nrows() != d || entries.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: entries.nrows().max(entries.ncols()),
            });
        }
        Ok(Self { n_qubits, entries })
    }

    pub fn identity(n_qubits: usize) -> Result<Self> {
        check_qubits(n_qubits)?;
        let d = dim_of(n_qubits);
        Ok(Self { n_qubits, entries: CMatrix::identity(d, d) })
    }

    pub fn zeros(n_qubits: usize) -> Result<Self> {
        check_qubits(n_qubits)?;
        let d = dim_of(n_qubits);
        Ok(Self { n_qubits, entries: CMatrix::zeros(d, d) })
    }

    pub fn from_diagonal(n_qubits: usize, diagonal: &[C64]) -> Result<Self> {
        Self::new(
            n_qubits,
            CMatrix::from_diagonal(&CVector::from_column_slice(diagonal)),
        )
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn into_matrix(self) -> CMatrix {
        self.entries
    }

    pub fn apply(&self, state: &StateVector) -> StateVector {
        assert_eq!(self.n_qubits, state.n_qubits, "qubit count mismatch");
        StateVector {
            n_qubits: self.n_qubits,
            amplitudes: &self.entries * &state.amplitudes,
        }
    }

    pub fn adjoint(&self) -> Self {
        Self { n_qubits: self.n_qubits, entries: self.entries.adjoint() }
    }

    pub fn scaled(&self, factor: C64) -> Self {
        Self { n_qubits: self.n_qubits, entries: &self.entries * factor }
    }

    /// Cheap upper bound on the spectral norm: `sqrt(‖A‖₁ ‖A‖∞)`.
    pub fn norm_bound(&self) -> f64 {
        norm_bound(&self.entries)
    }

    pub fn max_abs_diff(&self, other: &OperatorMatrix) -> f64 {
        max_abs_diff(&self.entries, &other.entries)
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        max_abs_diff(&self.entries, &self.entries.adjoint()) <= tol
    }
}

impl Add for &OperatorMatrix {
    type Output = OperatorMatrix;
    fn add(self, rhs: &OperatorMatrix) -> OperatorMatrix {
        assert_eq!(self.n_qubits, rhs.n_qubits, "qubit count mismatch");
        OperatorMatrix { n_qubits: self.n_qubits, entries: &self.entries + &rhs.entries }
    }
}

impl Sub for &OperatorMatrix {
    type Output = OperatorMatrix;
    fn sub(self, rhs: &OperatorMatrix) -> OperatorMatrix {
        assert_eq!(self.n_qubits, rhs.n_qubits, "qubit count mismatch");
        OperatorMatrix { n_qubits: self.n_qubits, entries: &self.entries - &rhs.entries }
    }
}

impl Mul for &OperatorMatrix {
    type Output = OperatorMatrix;
    fn mul(self, rhs: &OperatorMatrix) -> OperatorMatrix {
        assert_eq!(self.n_qubits, rhs.n_qubits, "qubit count mismatch");
        OperatorMatrix { n_qubits: self.n_qubits, entries: &self.entries * &rhs.entries }
    }
}

/// An orthonormal frame spanning a subspace of the `n`-qubit space.
#[derive(Clone, Debug, PartialEq)]
pub struct Subspace {
    n_qubits: usize,
    basis: Vec<StateVector>,
}

impl Subspace {
    /// Wraps an already orthonormal basis; rejects frames that are not orthonormal within 1e-10.
    pub fn new(n_qubits: usize, basis: Vec<StateVector>) -> Result<Self> {
        check_qubits(n_qubits)?;
        for v in &basis {
            if v.n_qubits != n_qubits {
                return Err(Error::DimensionMismatch { expected: n_qubits, found: v.n_qubits });
            }
        }
        let space = Self { n_qubits, basis };
        let gram = space.matrix().adjoint() * space.matrix();
        let dev = max_abs_diff(&gram, &CMatrix::identity(space.dim(), space.dim()));
        if dev > ORTHONORMAL_TOL {
            return Err(Error::InvalidArgument(format!(
                "basis is not orthonormal (Gram deviation {dev:e})"
            )));
        }
        Ok(space)
    }

    pub fn empty(n_qubits: usize) -> Self {
        Self { n_qubits, basis: Vec::new() }
    }

    pub fn whole(n_qubits: usize) -> Result<Self> {
        check_qubits(n_qubits)?;
        let basis = (0..dim_of(n_qubits))
            .map(|i| StateVector::basis(n_qubits, i))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { n_qubits, basis })
    }

    /// Columns of `frame` must already be orthonormal.
    pub(crate) fn from_frame(n_qubits: usize, frame: &CMatrix) -> Self {
        let basis = frame
            .column_iter()
            .map(|col| StateVector { n_qubits, amplitudes: col.into_owned() })
            .collect();
        Self { n_qubits, basis }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    pub fn basis(&self) -> &[StateVector] {
        &self.basis
    }

    /// Basis vectors as the columns of a `2^n × dim` matrix.
    pub fn matrix(&self) -> CMatrix {
        let d = dim_of(self.n_qubits);
        let mut m = CMatrix::zeros(d, self.basis.len());
        for (j, v) in self.basis.iter().enumerate() {
            m.set_column(j, &v.amplitudes);
        }
        m
    }

    pub fn projector(&self) -> CMatrix {
        let b = self.matrix();
        &b * b.adjoint()
    }

    /// `‖P v − v‖` for the orthogonal projector `P` onto this subspace.
    pub fn distance(&self, v: &StateVector) -> f64 {
        let b = self.matrix();
        let proj = &b * (b.adjoint() * &v.amplitudes);
        (proj - &v.amplitudes).norm()
    }

    pub fn contains(&self, v: &StateVector, tol: f64) -> bool {
        self.distance(v) <= tol
    }
}

/// Something that can be Kronecker-multiplied, with qubit counts adding up.
pub trait TensorFactor: Sized {
    fn qubits(&self) -> usize;
    fn kron_unchecked(&self, rhs: &Self) -> Self;
}

impl TensorFactor for StateVector {
    fn qubits(&self) -> usize {
        self.n_qubits
    }
    fn kron_unchecked(&self, rhs: &Self) -> Self {
        StateVector {
            n_qubits: self.n_qubits + rhs.n_qubits,
            amplitudes: self.amplitudes.kronecker(&rhs.amplitudes),
        }
    }
}

impl TensorFactor for OperatorMatrix {
    fn qubits(&self) -> usize {
        self.n_qubits
    }
    fn kron_unchecked(&self, rhs: &Self) -> Self {
        OperatorMatrix {
            n_qubits: self.n_qubits + rhs.n_qubits,
            entries: self.entries.kronecker(&rhs.entries),
        }
    }
}

/// Kronecker product with the first factor on the most significant qubits.
pub fn tensor_product<T: TensorFactor + Clone>(factors: &[T]) -> Result<T> {
    let (first, rest) = factors
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("tensor product of no factors".into()))?;
    let total: usize = factors.iter().map(TensorFactor::qubits).sum();
    check_qubits(total)?;
    Ok(rest.iter().fold(first.clone(), |acc, f| acc.kron_unchecked(f)))
}

/// Geometric eigenspaces `ker(A − λI)` of an arbitrary square operator.
///
/// Eigenvalues closer than `tol·max(1, ‖A‖)` are merged. Defective operators
/// yield fewer eigenvectors than their dimension; generalized eigenvectors are
/// never returned.
pub fn eigs_general(op: &OperatorMatrix, tol: f64) -> Result<Vec<(C64, Subspace)>> {
    check_tol(tol)?;
    let d = op.dim();
    let frame = CMatrix::identity(d, d);
    let spaces = restricted_eigenspaces(&op.entries, &frame, tol)?;
    Ok(spaces
        .into_iter()
        .map(|(lambda, vecs)| (lambda, Subspace::from_frame(op.n_qubits, &vecs)))
        .collect())
}

/// Orthonormal basis of the null space; singular values below `tol·σ_max` count as zero.
pub fn kernel(op: &OperatorMatrix, tol: f64) -> Result<Subspace> {
    check_tol(tol)?;
    let smax = singular_values(&op.entries).first().copied().unwrap_or(0.0);
    let frame = null_space(&op.entries, tol * smax);
    Ok(Subspace::from_frame(op.n_qubits, &frame))
}

/// Unique positive semidefinite square root; eigenvalues in `[-tol, 0)` are clamped to zero.
pub fn principal_sqrt_psd(op: &OperatorMatrix, tol: f64) -> Result<OperatorMatrix> {
    check_tol(tol)?;
    let scale = op.norm_bound().max(1.0);
    let skew = max_abs_diff(&op.entries, &op.entries.adjoint());
    if skew > tol * scale {
        return Err(Error::InvalidArgument(format!(
            "operator is not Hermitian (skew {skew:e})"
        )));
    }
    let (values, vectors) = hermitian_eigen(&op.entries);
    if let Some(&min) = values.last() {
        if min < -tol {
            return Err(Error::NotPsd { min_eigenvalue: min });
        }
    }
    let roots: Vec<C64> = values.iter().map(|&v| C64::new(v.max(0.0).sqrt(), 0.0)).collect();
    let root = &vectors * CMatrix::from_diagonal(&CVector::from_vec(roots)) * vectors.adjoint();
    OperatorMatrix::new(op.n_qubits, root)
}

/// A unitary whose first row is `first_row`, completed by Gram-Schmidt on the standard basis.
pub fn unitary_completion(first_row: &[C64]) -> Result<CMatrix> {
    let n = first_row.len();
    let norm = first_row.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if n == 0 || norm <= f64::MIN_POSITIVE {
        return Err(Error::InvalidArgument("first row has zero norm".into()));
    }
    if (norm - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidArgument(format!(
            "first row must have unit norm (found {norm})"
        )));
    }
    // Columns of W are orthonormal with W[:,0] = conj(first_row); U = W†.
    let mut candidates = CMatrix::zeros(n, n + 1);
    for (i, z) in first_row.iter().enumerate() {
        candidates[(i, 0)] = z.conj();
    }
    for i in 0..n {
        candidates[(i, i + 1)] = C64::new(1.0, 0.0);
    }
    let w = orthonormal_columns(&candidates, 1e-8);
    if w.ncols() != n {
        return Err(Error::Numerical(format!(
            "unitary completion produced {} of {n} columns",
            w.ncols()
        )));
    }
    Ok(w.adjoint())
}

/// Orthonormal basis of `a ∩ b`: the vectors `v = A c` of `a` with `‖(I − P_b) v‖ ≤ tol`.
pub fn subspace_intersect(a: &Subspace, b: &Subspace, tol: f64) -> Result<Subspace> {
    check_tol(tol)?;
    if a.n_qubits != b.n_qubits {
        return Err(Error::DimensionMismatch { expected: a.n_qubits, found: b.n_qubits });
    }
    if a.is_empty() || b.is_empty() {
        return Ok(Subspace::empty(a.n_qubits));
    }
    let fa = a.matrix();
    let fb = b.matrix();
    let leak = &fa - &fb * (fb.adjoint() * &fa);
    let coords = null_space(&leak, tol);
    let frame = orthonormal_columns(&(&fa * coords), tol);
    Ok(Subspace::from_frame(a.n_qubits, &frame))
}

/// Modified Gram-Schmidt; vectors whose residual norm falls below `tol` are dropped.
pub fn orthonormalize(n_qubits: usize, vectors: &[StateVector], tol: f64) -> Result<Subspace> {
    check_qubits(n_qubits)?;
    let d = dim_of(n_qubits);
    let mut m = CMatrix::zeros(d, vectors.len());
    for (j, v) in vectors.iter().enumerate() {
        if v.n_qubits != n_qubits {
            return Err(Error::DimensionMismatch { expected: n_qubits, found: v.n_qubits });
        }
        m.set_column(j, &v.amplitudes);
    }
    Ok(Subspace::from_frame(n_qubits, &orthonormal_columns(&m, tol)))
}

fn check_tol(tol: f64) -> Result<()> {
    if tol.is_finite() && tol > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")))
    }
}

// ---------------------------------------------------------------------------
// matrix helpers shared across modules

pub(crate) fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

pub(crate) fn max_abs_diff_vec(a: &CVector, b: &CVector) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

pub(crate) fn norm_bound(m: &CMatrix) -> f64 {
    let col = m
        .column_iter()
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max);
    let row = m
        .row_iter()
        .map(|r| r.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max);
    (col * row).sqrt()
}

/// Singular values in descending order.
pub(crate) fn singular_values(m: &CMatrix) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Orthonormal columns spanning `{x : ‖M x‖ ≈ 0}`; singular values `≤ threshold` count as zero.
pub(crate) fn null_space(m: &CMatrix, threshold: f64) -> CMatrix {
    let cols = m.ncols();
    if cols == 0 {
        return CMatrix::zeros(0, 0);
    }
    // Pad to at least square so the SVD exposes all right singular vectors.
    let padded = if m.nrows() < cols {
        let mut p = CMatrix::zeros(cols, cols);
        p.view_mut((0, 0), (m.nrows(), cols)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = SVD::new(padded, false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let picked: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] <= threshold)
        .collect();
    let mut out = CMatrix::zeros(cols, picked.len());
    for (j, &i) in picked.iter().enumerate() {
        out.set_column(j, &v_t.row(i).adjoint());
    }
    // SVD vectors are orthonormal already; a second pass guards against round-off.
    orthonormal_columns(&out, 1e-8)
}

/// Modified Gram-Schmidt with one re-orthogonalization pass.
pub(crate) fn orthonormal_columns(m: &CMatrix, tol: f64) -> CMatrix {
    let mut kept: Vec<CVector> = Vec::new();
    for col in m.column_iter() {
        let mut v: CVector = col.into_owned();
        for _ in 0..2 {
            for q in &kept {
                let proj = q.dotc(&v);
                v -= q * proj;
            }
        }
        let n = v.norm();
        if n >= tol && n > 0.0 {
            kept.push(v.unscale(n));
        }
    }
    let mut out = CMatrix::zeros(m.nrows(), kept.len());
    for (j, v) in kept.iter().enumerate() {
        out.set_column(j, v);
    }
    out
}

/// Basis-independent orthonormal frame of the span of `frame`: Gram-Schmidt
/// of the projected computational basis vectors in index order.
pub(crate) fn canonical_frame(frame: &CMatrix) -> CMatrix {
    let k = frame.ncols();
    if k == 0 {
        return frame.clone();
    }
    let projector = frame * frame.adjoint();
    let out = orthonormal_columns(&projector, 1e-6);
    if out.ncols() == k {
        out
    } else {
        frame.clone()
    }
}

/// Eigenpairs of a Hermitian matrix (Hermitian part taken), eigenvalues descending.
pub(crate) fn hermitian_eigen(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let n = m.nrows();
    if n == 0 {
        return (Vec::new(), CMatrix::zeros(0, 0));
    }
    let herm = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(herm);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMatrix::zeros(n, n);
    for (j, &i) in order.iter().enumerate() {
        vectors.set_column(j, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

fn schur_eigenvalues(m: &CMatrix) -> Result<Vec<C64>> {
    let n = m.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let scale = norm_bound(m);
    if scale < 1e-300 {
        return Ok(vec![C64::new(0.0, 0.0); n]);
    }
    let unit = m.unscale(scale);
    // the shifted QR iteration occasionally stalls on nilpotent input; a
    // perturbation far below the clustering radii gets it going again
    for jitter in [0.0, 1e-14, 1e-12] {
        let mut trial = unit.clone();
        for i in 0..n {
            trial[(i, i)] += C64::new(jitter * (i + 1) as f64 / n as f64, 0.0);
        }
        if let Some(schur) = Schur::try_new(trial, f64::EPSILON, 1000 * n.max(10)) {
            let (_, t) = schur.unpack();
            return Ok((0..n).map(|i| t[(i, i)] * scale).collect());
        }
    }
    Err(Error::Numerical(format!(
        "Schur iteration did not converge for a {n}x{n} matrix (norm bound {scale:e})"
    )))
}

/// Relative clustering radii, coarse to fine. Nilpotent collective operators
/// have Jordan blocks whose computed eigenvalues scatter by roughly
/// `eps^(1/k)`; the cluster mean is accurate even when the members are not.
const CLUSTER_RADII: [f64; 10] = [1e-1, 3e-2, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9];

/// Single-linkage clusters of `values` at `radius`, as index groups.
fn clusters(values: &[C64], radius: f64) -> Vec<Vec<usize>> {
    let n = values.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if (values[i] - values[j]).norm() <= radius {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[rj] = ri;
                }
            }
        }
    }
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        match groups.iter_mut().find(|(root, _)| *root == r) {
            Some(entry) => entry.1.push(i),
            None => groups.push((r, vec![i])),
        }
    }
    groups.into_iter().map(|(_, g)| g).collect()
}

/// Geometric eigenspaces of `a` inside the span of the orthonormal columns of `frame`.
///
/// Candidate eigenvalues come from the compression `F† A F`; each candidate is
/// accepted only when `(A − λI) F c = 0` has solutions at `tol·max(1, ‖A‖)`, so
/// the returned vectors are eigenvectors of the full operator whether or not
/// the span is invariant.
pub(crate) fn restricted_eigenspaces(
    a: &CMatrix,
    frame: &CMatrix,
    tol: f64,
) -> Result<Vec<(C64, CMatrix)>> {
    let k = frame.ncols();
    if k == 0 {
        return Ok(Vec::new());
    }
    let scale = norm_bound(a).max(1.0);
    let threshold = tol * scale;
    let compressed = frame.adjoint() * a * frame;
    let raw = schur_eigenvalues(&compressed)?;

    // Near a defective eigenvalue, (A − λ) is nearly singular for every λ in a
    // pseudospectral disc, so a cluster whose mean is accepted consumes all of
    // its members; otherwise its scattered members would be accepted as well.
    let mut remaining = raw;
    let mut tried: Vec<C64> = Vec::new();
    let mut accepted: Vec<(C64, CMatrix)> = Vec::new();
    let mut covered = CMatrix::zeros(a.nrows(), 0);
    let applied = a * frame;
    let radii = CLUSTER_RADII.iter().map(|r| r * scale).chain(std::iter::once(threshold));
    for radius in radii {
        let mut consumed = vec![false; remaining.len()];
        for group in clusters(&remaining, radius) {
            let lambda = group.iter().map(|&i| remaining[i]).sum::<C64>() / group.len() as f64;
            if tried.iter().any(|t| (t - lambda).norm() <= threshold) {
                continue;
            }
            tried.push(lambda);
            let shifted = &applied - frame * lambda;
            let coords = null_space(&shifted, threshold);
            if coords.ncols() == 0 {
                continue;
            }
            for &i in &group {
                consumed[i] = true;
            }
            let vecs = frame * coords;
            let mut stacked = CMatrix::zeros(a.nrows(), covered.ncols() + vecs.ncols());
            stacked.view_mut((0, 0), (a.nrows(), covered.ncols())).copy_from(&covered);
            stacked
                .view_mut((0, covered.ncols()), (a.nrows(), vecs.ncols()))
                .copy_from(&vecs);
            let grown = orthonormal_columns(&stacked, 1e-6);
            if grown.ncols() > covered.ncols() {
                covered = grown;
                accepted.push((lambda, vecs));
            }
        }
        remaining = remaining
            .into_iter()
            .zip(consumed)
            .filter_map(|(v, used)| (!used).then_some(v))
            .collect();
        if covered.ncols() == k || remaining.is_empty() {
            break;
        }
    }

    // merge eigenvalues equal within the clustering tolerance
    let mut merged: Vec<(C64, CMatrix)> = Vec::new();
    for (lambda, vecs) in accepted {
        if let Some(entry) = merged.iter_mut().find(|(l, _)| (l - lambda).norm() <= threshold) {
            let mut stacked = CMatrix::zeros(vecs.nrows(), entry.1.ncols() + vecs.ncols());
            stacked.view_mut((0, 0), (vecs.nrows(), entry.1.ncols())).copy_from(&entry.1);
            stacked
                .view_mut((0, entry.1.ncols()), (vecs.nrows(), vecs.ncols()))
                .copy_from(&vecs);
            entry.1 = orthonormal_columns(&stacked, 1e-8);
        } else {
            merged.push((lambda, vecs));
        }
    }
    merged.sort_by(|(x, _), (y, _)| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sz() -> OperatorMatrix {
        OperatorMatrix::from_diagonal(1, &[c(-1.0, 0.0), c(1.0, 0.0)]).unwrap()
    }

    fn splus() -> OperatorMatrix {
        // |0⟩ → |1⟩
        let mut m = CMatrix::zeros(2, 2);
        m[(1, 0)] = c(1.0, 0.0);
        OperatorMatrix::new(1, m).unwrap()
    }

    fn id(n: usize) -> OperatorMatrix {
        OperatorMatrix::identity(n).unwrap()
    }

    fn ket(bits: &str) -> StateVector {
        StateVector::from_bits(bits).unwrap()
    }

    #[test]
    fn tensor_of_operators_and_states() {
        let z1 = tensor_product(&[sz(), id(1)]).unwrap();
        let diag: Vec<f64> = (0..4).map(|i| z1.entries()[(i, i)].re).collect();
        assert_eq!(diag, vec![-1.0, -1.0, 1.0, 1.0]);

        let k = tensor_product(&[ket("0"), ket("1")]).unwrap();
        assert_eq!(k, ket("01"));
        assert_eq!(k.amplitudes()[1], c(1.0, 0.0));

        let i8 = tensor_product(&[id(1), id(1), id(1)]).unwrap();
        assert_eq!(i8, id(3));
    }

    #[test]
    fn tensor_respects_cap() {
        let factors: Vec<StateVector> = (0..(max_qubits() + 1)).map(|_| ket("0")).collect();
        assert!(matches!(tensor_product(&factors), Err(Error::ResourceLimit { .. })));
        assert!(tensor_product::<StateVector>(&[]).is_err());
    }

    #[test]
    fn eigs_of_simple_operators() {
        let e = eigs_general(&id(2), DEFAULT_TOL).unwrap();
        assert_eq!(e.len(), 1);
        assert!((e[0].0 - c(1.0, 0.0)).norm() < 1e-12);
        assert_eq!(e[0].1.dim(), 4);

        let e = eigs_general(&sz(), DEFAULT_TOL).unwrap();
        assert_eq!(e.len(), 2);
        assert!(e.iter().all(|(_, s)| s.dim() == 1));

        // Jordan block: algebraic multiplicity 2, geometric 1
        let e = eigs_general(&splus(), DEFAULT_TOL).unwrap();
        assert_eq!(e.len(), 1);
        assert!(e[0].0.norm() < 1e-12);
        assert_eq!(e[0].1.dim(), 1);
        assert!(e[0].1.contains(&ket("1"), 1e-12));
    }

    #[test]
    fn kernels() {
        let s1 = tensor_product(&[splus(), id(1)]).unwrap();
        let s2 = tensor_product(&[id(1), splus()]).unwrap();
        let k = kernel(&(&s1 + &s2), DEFAULT_TOL).unwrap();
        assert_eq!(k.dim(), 2);
        assert!(k.contains(&ket("11"), 1e-10));
        let singlet = &(&ket("01") - &ket("10")) * c(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        assert!(k.contains(&singlet, 1e-10));

        assert_eq!(kernel(&id(2), DEFAULT_TOL).unwrap().dim(), 0);

        let hop = &s1 * &tensor_product(&[id(1), splus().adjoint()]).unwrap();
        let k = kernel(&hop, DEFAULT_TOL).unwrap();
        assert_eq!(k.dim(), 3);
        for b in ["00", "10", "11"] {
            assert!(k.contains(&ket(b), 1e-10));
        }
    }

    #[test]
    fn psd_square_roots() {
        let d = |v: &[f64]| {
            let n = v.len().trailing_zeros() as usize;
            OperatorMatrix::from_diagonal(n, &v.iter().map(|&x| c(x, 0.0)).collect::<Vec<_>>())
                .unwrap()
        };
        let r = principal_sqrt_psd(&d(&[1.0, 0.64]), DEFAULT_TOL).unwrap();
        assert!(r.max_abs_diff(&d(&[1.0, 0.8])) < 1e-12);
        let r = principal_sqrt_psd(&id(2), DEFAULT_TOL).unwrap();
        assert!(r.max_abs_diff(&id(2)) < 1e-12);
        let r = principal_sqrt_psd(&d(&[0.64, 1.0, 1.0, 0.64]), DEFAULT_TOL).unwrap();
        assert!(r.max_abs_diff(&d(&[0.8, 1.0, 1.0, 0.8])) < 1e-12);

        assert!(matches!(
            principal_sqrt_psd(&d(&[1.0, -0.1]), DEFAULT_TOL),
            Err(Error::NotPsd { .. })
        ));
        // tiny negative eigenvalues are clamped
        let r = principal_sqrt_psd(&d(&[1.0, -1e-12]), DEFAULT_TOL).unwrap();
        assert!(r.entries()[(1, 1)].norm() < 1e-12);
    }

    #[test]
    fn unitary_completions() {
        let u = unitary_completion(&[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]).unwrap();
        assert!(max_abs_diff(&u, &CMatrix::identity(3, 3)) < 1e-15);

        let h = std::f64::consts::FRAC_1_SQRT_2;
        let u = unitary_completion(&[c(h, 0.0), c(h, 0.0)]).unwrap();
        assert!(max_abs_diff(&(&u * u.adjoint()), &CMatrix::identity(2, 2)) < 1e-12);
        assert!((u[(0, 0)] - c(h, 0.0)).norm() < 1e-15 && (u[(0, 1)] - c(h, 0.0)).norm() < 1e-15);

        let u = unitary_completion(&[c(0.0, 0.0), c(1.0, 0.0)]).unwrap();
        assert_eq!(u[(0, 1)], c(1.0, 0.0));
        assert!(max_abs_diff(&(&u * u.adjoint()), &CMatrix::identity(2, 2)) < 1e-15);

        assert!(unitary_completion(&[c(0.0, 0.0), c(0.0, 0.0)]).is_err());
        assert!(unitary_completion(&[]).is_err());
    }

    #[test]
    fn intersections() {
        let hop12 = &tensor_product(&[splus(), id(1)]).unwrap()
            * &tensor_product(&[id(1), splus().adjoint()]).unwrap();
        let hop21 = hop12.adjoint();
        let k1 = kernel(&hop12, DEFAULT_TOL).unwrap();
        let k2 = kernel(&hop21, DEFAULT_TOL).unwrap();
        let both = subspace_intersect(&k1, &k2, DEFAULT_TOL).unwrap();
        assert_eq!(both.dim(), 2);
        assert!(both.contains(&ket("00"), 1e-10) && both.contains(&ket("11"), 1e-10));

        let same = subspace_intersect(&k1, &k1, DEFAULT_TOL).unwrap();
        assert_eq!(same.dim(), 3);

        let a = Subspace::new(1, vec![ket("0")]).unwrap();
        let b = Subspace::new(1, vec![ket("1")]).unwrap();
        assert_eq!(subspace_intersect(&a, &b, DEFAULT_TOL).unwrap().dim(), 0);
    }

    #[test]
    fn gram_schmidt() {
        let s = orthonormalize(2, &[ket("00"), &ket("00") + &ket("11")], 1e-10).unwrap();
        assert_eq!(s.dim(), 2);
        assert!(s.basis()[0].max_abs_diff(&ket("00")) < 1e-15);
        assert!(s.basis()[1].max_abs_diff(&ket("11")) < 1e-15);

        let v = StateVector::new(1, vec![c(0.6, 0.0), c(0.0, 0.8)]).unwrap();
        let s = orthonormalize(1, &[v.clone(), &v * c(2.0, 0.0)], 1e-10).unwrap();
        assert_eq!(s.dim(), 1);
        assert!(s.basis()[0].max_abs_diff(&v) < 1e-15);
    }

    #[test]
    fn subspace_rejects_non_orthonormal_frames() {
        assert!(Subspace::new(1, vec![ket("0"), ket("0")]).is_err());
    }

    #[test]
    fn bit_helpers() {
        assert_eq!(bits_to_index("0101").unwrap(), 5);
        assert_eq!(index_to_bits(5, 4), "0101");
        assert!(bits_to_index("01x").is_err());
        assert_eq!(qubit_mask(1, 4), 0b1000);
    }
}
