//! Error-operator families for collective, pairwise-collective and
//! correlated-swap decoherence, and the Kraus-family manipulations that leave
//! the induced channel unchanged.
//!
//! Single-qubit conventions: `σ⁺|0⟩ = |1⟩`, `σ⁻|1⟩ = |0⟩` and
//! `σᶻ = diag(−1, +1)`, so `σ⁺` raises the `σᶻ` eigenvalue and a pair driven to
//! `|11⟩` by `σ⁺_l + σ⁺_l'` reads `+2` on `σᶻ_l + σᶻ_l'`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{
    c, check_qubits, hermitian_eigen, max_abs_diff, principal_sqrt_psd, tensor_product,
    unitary_completion, CMatrix, CVector, OperatorMatrix, C64,
};

/// A family is complete when `‖Σ A†A − I‖` (max entry) is at most this.
pub const COMPLETENESS_TOL: f64 = 1e-10;

/// Threshold for dropping Gram eigenvalues in [`minimal_family`].
pub const MINIMAL_FAMILY_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PauliKind {
    #[serde(alias = "+")]
    Plus,
    #[serde(alias = "-")]
    Minus,
    Z,
    X,
    Y,
}

impl PauliKind {
    pub fn matrix(self) -> CMatrix {
        let z = c(0.0, 0.0);
        let one = c(1.0, 0.0);
        let i = c(0.0, 1.0);
        let entries = match self {
            PauliKind::Plus => [z, z, one, z],
            PauliKind::Minus => [z, one, z, z],
            PauliKind::Z => [-one, z, z, one],
            PauliKind::X => [z, one, one, z],
            // σʸ = −i(σ⁺ − σ⁻), consistent with σˣσʸ = iσᶻ under the σᶻ above
            PauliKind::Y => [z, i, -i, z],
        };
        CMatrix::from_row_slice(2, 2, &entries)
    }

    pub fn symbol(self) -> &'static str {
        match self {
            PauliKind::Plus => "+",
            PauliKind::Minus => "-",
            PauliKind::Z => "z",
            PauliKind::X => "x",
            PauliKind::Y => "y",
        }
    }
}

/// `coefficient · ⊗_q σ_q^{kind}` with identities on unlisted qubits.
#[derive(Clone, Debug, PartialEq)]
pub struct PauliTerm {
    pub coefficient: C64,
    pub factors: BTreeMap<usize, PauliKind>,
}

impl PauliTerm {
    pub fn new(coefficient: C64, factors: impl IntoIterator<Item = (usize, PauliKind)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (q, kind) in factors {
            if map.insert(q, kind).is_some() {
                return Err(Error::InvalidArgument(format!("qubit {q} has two factors")));
            }
        }
        Ok(Self { coefficient, factors: map })
    }

    pub fn to_operator(&self, n_qubits: usize) -> Result<OperatorMatrix> {
        if let Some((&q, _)) = self.factors.iter().find(|(&q, _)| q == 0 || q > n_qubits) {
            return Err(Error::InvalidArgument(format!(
                "qubit {q} outside 1..={n_qubits}"
            )));
        }
        let factors = (1..=n_qubits)
            .map(|q| match self.factors.get(&q) {
                Some(kind) => OperatorMatrix::new(1, kind.matrix()),
                None => OperatorMatrix::identity(1),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(tensor_product(&factors)?.scaled(self.coefficient))
    }
}

/// Single-qubit `σ^kind` on `qubit` (1-based) of an `n`-qubit register.
pub fn sigma(kind: PauliKind, qubit: usize, n_qubits: usize) -> Result<OperatorMatrix> {
    if qubit == 0 || qubit > n_qubits {
        return Err(Error::InvalidArgument(format!(
            "qubit {qubit} outside 1..={n_qubits}"
        )));
    }
    PauliTerm::new(c(1.0, 0.0), [(qubit, kind)])?.to_operator(n_qubits)
}

/// Ordered interaction operators `{A_a}`; operator 0 is by convention the no-error one.
#[derive(Clone, Debug, PartialEq)]
pub struct KrausFamily {
    n_qubits: usize,
    operators: Vec<OperatorMatrix>,
    labels: Vec<String>,
    completeness_residual: f64,
}

impl KrausFamily {
    pub fn new(n_qubits: usize, entries: Vec<(String, OperatorMatrix)>) -> Result<Self> {
        check_qubits(n_qubits)?;
        for (label, op) in &entries {
            if op.n_qubits() != n_qubits {
                return Err(Error::InvalidArgument(format!(
                    "operator {label} acts on {} qubits, family on {n_qubits}",
                    op.n_qubits()
                )));
            }
        }
        let (labels, operators): (Vec<_>, Vec<_>) = entries.into_iter().unzip();
        let mut family = Self { n_qubits, operators, labels, completeness_residual: 0.0 };
        family.completeness_residual = family.compute_completeness_residual();
        Ok(family)
    }

    pub fn empty(n_qubits: usize) -> Result<Self> {
        Self::new(n_qubits, Vec::new())
    }

    /// The single-operator family `{I}`.
    pub fn identity(n_qubits: usize) -> Result<Self> {
        Self::new(n_qubits, vec![("I".into(), OperatorMatrix::identity(n_qubits)?)])
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn len(&self) -> usize {
        self.operators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.operators.is_empty()
    }

    pub fn operators(&self) -> &[OperatorMatrix] {
        &self.operators
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn get(&self, label: &str) -> Option<&OperatorMatrix> {
        self.labels.iter().position(|l| l == label).map(|i| &self.operators[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &OperatorMatrix)> {
        self.labels.iter().map(String::as_str).zip(self.operators.iter())
    }

    pub fn completeness_residual(&self) -> f64 {
        self.completeness_residual
    }

    pub fn is_complete(&self) -> bool {
        self.completeness_residual <= COMPLETENESS_TOL
    }

    /// Prepends an operator (e.g. the no-error operator `γ₀ I`).
    pub fn with_leading(mut self, label: impl Into<String>, op: OperatorMatrix) -> Result<Self> {
        if op.n_qubits() != self.n_qubits {
            return Err(Error::DimensionMismatch { expected: self.n_qubits, found: op.n_qubits() });
        }
        self.operators.insert(0, op);
        self.labels.insert(0, label.into());
        self.completeness_residual = self.compute_completeness_residual();
        Ok(self)
    }

    /// Drops operators proportional to the identity, keeping only the error operators.
    pub fn errors_only(&self, tol: f64) -> Self {
        let entries = self
            .iter()
            .filter(|(_, op)| !is_scalar_multiple_of_identity(op, tol))
            .map(|(l, op)| (l.to_string(), op.clone()))
            .collect();
        Self::new(self.n_qubits, entries).expect("operators already validated")
    }

    /// `Σ_a A_a† A_a`
    pub fn effect_sum(&self) -> CMatrix {
        let d = 1usize << self.n_qubits;
        self.operators
            .iter()
            .fold(CMatrix::zeros(d, d), |acc, op| acc + op.entries().adjoint() * op.entries())
    }

    fn compute_completeness_residual(&self) -> f64 {
        let d = 1usize << self.n_qubits;
        max_abs_diff(&self.effect_sum(), &CMatrix::identity(d, d))
    }
}

fn is_scalar_multiple_of_identity(op: &OperatorMatrix, tol: f64) -> bool {
    let m = op.entries();
    let d = m.nrows();
    let mean = m.trace() / d as f64;
    max_abs_diff(m, &(CMatrix::identity(d, d) * mean)) <= tol * op.max_abs().max(1.0)
}

/// Unitary `X = [x_ba]` relating two realizations of the same channel.
#[derive(Clone, Debug, PartialEq)]
pub struct MixingUnitary {
    entries: CMatrix,
}

impl MixingUnitary {
    pub const TOL: f64 = 1e-10;

    pub fn new(entries: CMatrix) -> Result<Self> {
        let n = entries.nrows();
        if entries.ncols() != n {
            return Err(Error::InvalidArgument("mixing matrix must be square".into()));
        }
        let residual = max_abs_diff(&(&entries * entries.adjoint()), &CMatrix::identity(n, n));
        if residual > Self::TOL {
            return Err(Error::InvalidArgument(format!(
                "mixing matrix is not unitary (residual {residual:e})"
            )));
        }
        Ok(Self { entries })
    }

    pub fn identity(n: usize) -> Self {
        Self { entries: CMatrix::identity(n, n) }
    }

    pub fn with_first_row(first_row: &[C64]) -> Result<Self> {
        Self::new(unitary_completion(first_row)?)
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }
}

/// `A^+ = γ⁺ Σ σ⁺_l`, `A^- = γ⁻ Σ σ⁻_l`, `A^z = γᶻ Σ σᶻ_l` over all qubits.
pub fn build_collective_model(
    n_qubits: usize,
    gamma_plus: C64,
    gamma_minus: C64,
    gamma_z: C64,
) -> Result<KrausFamily> {
    if n_qubits == 0 {
        return Err(Error::InvalidArgument("collective model needs at least one qubit".into()));
    }
    check_qubits(n_qubits)?;
    let collective = |kind: PauliKind, gamma: C64| -> Result<OperatorMatrix> {
        let mut sum = OperatorMatrix::zeros(n_qubits)?;
        for q in 1..=n_qubits {
            sum = &sum + &sigma(kind, q, n_qubits)?;
        }
        Ok(sum.scaled(gamma))
    };
    KrausFamily::new(
        n_qubits,
        vec![
            ("A+".into(), collective(PauliKind::Plus, gamma_plus)?),
            ("A-".into(), collective(PauliKind::Minus, gamma_minus)?),
            ("Az".into(), collective(PauliKind::Z, gamma_z)?),
        ],
    )
}

/// Per-pair couplings `(γ⁺, γ⁻, γᶻ)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairCouplings {
    pub plus: C64,
    pub minus: C64,
    pub z: C64,
}

impl PairCouplings {
    pub fn uniform(gamma: C64) -> Self {
        Self { plus: gamma, minus: gamma, z: gamma }
    }
}

/// `A_l^α = γ_l^α (σ_l^α + σ_l'^α)` on `2L` qubits laid out `1, 1', 2, 2', ...`,
/// ordered `A1+, A1-, A1z, A2+, ...`.
pub fn build_pairwise_model(pairs: usize, gammas: &[PairCouplings]) -> Result<KrausFamily> {
    if pairs == 0 {
        return Err(Error::InvalidArgument("pairwise model needs at least one pair".into()));
    }
    if gammas.len() != pairs {
        return Err(Error::DimensionMismatch { expected: pairs, found: gammas.len() });
    }
    let n = 2 * pairs;
    check_qubits(n)?;
    let mut entries = Vec::with_capacity(3 * pairs);
    for (l, g) in (1..=pairs).zip(gammas) {
        let (q, qp) = (2 * l - 1, 2 * l);
        for (kind, gamma) in [(PauliKind::Plus, g.plus), (PauliKind::Minus, g.minus), (PauliKind::Z, g.z)] {
            let op = (&sigma(kind, q, n)? + &sigma(kind, qp, n)?).scaled(gamma);
            entries.push((format!("A{l}{}", kind.symbol()), op));
        }
    }
    KrausFamily::new(n, entries)
}

pub fn build_uniform_pairwise_model(pairs: usize, gamma: C64) -> Result<KrausFamily> {
    build_pairwise_model(pairs, &vec![PairCouplings::uniform(gamma); pairs])
}

/// `A_1 = γ σ⁺_1 σ⁻_2`, `A_2 = γ σ⁺_2 σ⁻_1` on two qubits.
pub fn build_correlated_swap_model(gamma: C64) -> Result<KrausFamily> {
    let a1 = PauliTerm::new(gamma, [(1, PauliKind::Plus), (2, PauliKind::Minus)])?.to_operator(2)?;
    let a2 = PauliTerm::new(gamma, [(2, PauliKind::Plus), (1, PauliKind::Minus)])?.to_operator(2)?;
    KrausFamily::new(2, vec![("A1".into(), a1), ("A2".into(), a2)])
}

/// Prepends `A0 = sqrt(I − Σ A_a† A_a)` so the family satisfies completeness exactly.
pub fn complete_family(errors: &KrausFamily) -> Result<KrausFamily> {
    let n = errors.n_qubits;
    let d = 1usize << n;
    let deficit = OperatorMatrix::new(n, CMatrix::identity(d, d) - errors.effect_sum())?;
    let a0 = principal_sqrt_psd(&deficit, COMPLETENESS_TOL).map_err(|e| match e {
        Error::NotPsd { min_eigenvalue } => Error::CompletionImpossible { min_eigenvalue },
        other => other,
    })?;
    errors.clone().with_leading("A0", a0)
}

/// Recomputes `‖Σ A†A − I‖` (max entry), stores it on the family and returns it.
pub fn check_completeness(family: &mut KrausFamily) -> f64 {
    family.completeness_residual = family.compute_completeness_residual();
    family.completeness_residual
}

/// `B_b = Σ_a x_ba A_a`
pub fn transform_family(family: &KrausFamily, x: &MixingUnitary) -> Result<KrausFamily> {
    if x.dim() != family.len() {
        return Err(Error::DimensionMismatch { expected: family.len(), found: x.dim() });
    }
    let n = family.n_qubits;
    let mut entries = Vec::with_capacity(family.len());
    for b in 0..x.dim() {
        let row = x.entries.row(b);
        let mut op = OperatorMatrix::zeros(n)?;
        for (a, xa) in row.iter().enumerate() {
            if *xa != c(0.0, 0.0) {
                op = &op + &family.operators[a].scaled(*xa);
            }
        }
        entries.push((mixed_label(&family.labels, row.iter().copied(), b, "B"), op));
    }
    KrausFamily::new(n, entries)
}

/// Keeps the original label when a row just selects one operator.
fn mixed_label(labels: &[String], row: impl Iterator<Item = C64>, index: usize, prefix: &str) -> String {
    let nonzero: Vec<(usize, C64)> = row.enumerate().filter(|(_, x)| x.norm() > 1e-12).collect();
    match nonzero.as_slice() {
        [(a, x)] if (x - c(1.0, 0.0)).norm() <= 1e-12 => labels[*a].clone(),
        _ => format!("{prefix}{index}"),
    }
}

/// Rewrites the family so that operator 0 is `γ₀ I` with `γ₀ > 0`.
///
/// Solves `Σ c_a A_a = I` in the least-squares sense, then mixes with the
/// unitary whose first row is `c/‖c‖`, giving `B_0 = I/‖c‖`.
pub fn canonicalize_family(family: &KrausFamily, tol: f64) -> Result<KrausFamily> {
    let coeffs = identity_coefficients(family)?;
    let residual = identity_fit_residual(family, &coeffs);
    if residual > tol {
        return Err(Error::CanonicalizationImpossible { residual });
    }
    let norm = coeffs.norm();
    let row: Vec<C64> = coeffs.iter().map(|z| z / norm).collect();
    let x = MixingUnitary::with_first_row(&row)?;
    let mut out = transform_family(family, &x)?;
    if out.labels[0].starts_with('B') {
        out.labels[0] = "A0".into();
    }
    Ok(out)
}

/// Minimum-norm `c` with `Σ c_a A_a ≈ I`.
fn identity_coefficients(family: &KrausFamily) -> Result<CVector> {
    if family.is_empty() {
        return Err(Error::CanonicalizationImpossible { residual: 1.0 });
    }
    let d = 1usize << family.n_qubits;
    let mut design = CMatrix::zeros(d * d, family.len());
    for (a, op) in family.operators.iter().enumerate() {
        design.set_column(a, &CVector::from_column_slice(op.entries().as_slice()));
    }
    let target = CVector::from_column_slice(CMatrix::identity(d, d).as_slice());
    let svd = design.svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    svd.solve(&target, 1e-12 * smax.max(1e-300))
        .map_err(|e| Error::Numerical(format!("least squares failed: {e}")))
}

/// `‖Σ c_a A_a − I‖_F / ‖I‖_F`
fn identity_fit_residual(family: &KrausFamily, coeffs: &CVector) -> f64 {
    let d = 1usize << family.n_qubits;
    let fit = family
        .operators
        .iter()
        .zip(coeffs.iter())
        .fold(CMatrix::zeros(d, d), |acc, (op, ca)| acc + op.entries() * *ca);
    (fit - CMatrix::identity(d, d)).norm() / (d as f64).sqrt()
}

/// Whether `I` lies in the linear span of the family's operators.
pub fn identity_in_span(family: &KrausFamily, tol: f64) -> bool {
    identity_coefficients(family)
        .map(|coeffs| identity_fit_residual(family, &coeffs) <= tol)
        .unwrap_or(false)
}

/// Smallest equivalent family: diagonalize the Hilbert-Schmidt Gram matrix
/// `G_ab = tr(A_a† A_b)` and keep the recombinations with eigenvalue above `tol`.
/// A family whose Gram matrix is already diagonal is only pruned of zero operators.
pub fn minimal_family(family: &KrausFamily, tol: f64) -> KrausFamily {
    let m = family.len();
    let gram = CMatrix::from_fn(m, m, |a, b| {
        family.operators[a].entries().dotc(family.operators[b].entries())
    });
    let scale = (0..m).map(|a| gram[(a, a)].re).fold(0.0, f64::max).max(1.0);
    let off_diag = (0..m)
        .flat_map(|a| (0..m).filter(move |&b| b != a).map(move |b| (a, b)))
        .map(|(a, b)| gram[(a, b)].norm())
        .fold(0.0, f64::max);

    let entries: Vec<(String, OperatorMatrix)> = if off_diag <= tol * scale {
        family
            .iter()
            .zip(0..m)
            .filter(|(_, a)| gram[(*a, *a)].re > tol * scale)
            .map(|((l, op), _)| (l.to_string(), op.clone()))
            .collect()
    } else {
        let (values, vectors) = hermitian_eigen(&gram);
        values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > tol * scale)
            .map(|(k, _)| {
                let weights = vectors.column(k);
                let op = family
                    .operators
                    .iter()
                    .zip(weights.iter())
                    .fold(CMatrix::zeros(1 << family.n_qubits, 1 << family.n_qubits), |acc, (op, w)| {
                        acc + op.entries() * *w
                    });
                let label = mixed_label(&family.labels, weights.iter().copied(), k, "K");
                (label, OperatorMatrix::new(family.n_qubits, op).expect("same dimension"))
            })
            .collect()
    };
    KrausFamily::new(family.n_qubits, entries).expect("operators already validated")
}
