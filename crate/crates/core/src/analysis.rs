//! Knill-Laflamme coefficient matrices, degeneracy classification, error
//! avoiding (co-eigenspace) checks and searches for codes.
//!
//! A code is correctable when `⟨i|A_a†A_b|j⟩ = γ_ab δ_ij` for every pair of
//! basis vectors and operators. The rank of `Γ = [γ_ab]` separates
//! non-degenerate codes (full rank) from degenerate ones; rank at most one
//! with every operator acting as a scalar on the code is an error avoiding
//! code.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hilbert::{
    canonical_frame, check_qubits, hermitian_eigen, orthonormal_columns, restricted_eigenspaces, CMatrix,
    OperatorMatrix, StateVector, Subspace, C64,
};
use crate::noise::{identity_in_span, KrausFamily};
use crate::sampling::{derived_rng, random_frame};

/// Orthonormal logical basis `{|i_L⟩}` of a code.
#[derive(Clone, Debug, PartialEq)]
pub struct CodeSubspace {
    space: Subspace,
}

impl CodeSubspace {
    pub fn new(n_qubits: usize, logical_basis: Vec<StateVector>) -> Result<Self> {
        if logical_basis.is_empty() {
            return Err(Error::InvalidArgument("a code needs at least one basis vector".into()));
        }
        Ok(Self { space: Subspace::new(n_qubits, logical_basis)? })
    }

    pub fn from_subspace(space: Subspace) -> Result<Self> {
        if space.is_empty() {
            return Err(Error::InvalidArgument("a code needs at least one basis vector".into()));
        }
        Ok(Self { space })
    }

    pub fn n_qubits(&self) -> usize {
        self.space.n_qubits()
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn basis(&self) -> &[StateVector] {
        self.space.basis()
    }

    pub fn subspace(&self) -> &Subspace {
        &self.space
    }

    pub fn matrix(&self) -> CMatrix {
        self.space.matrix()
    }
}

fn check_dims(code: &CodeSubspace, family: &KrausFamily) -> Result<()> {
    if code.n_qubits() != family.n_qubits() {
        return Err(Error::DimensionMismatch {
            expected: family.n_qubits(),
            found: code.n_qubits(),
        });
    }
    Ok(())
}

/// Worst violation of the correctability condition.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KlViolation {
    pub i: usize,
    pub j: usize,
    pub a: usize,
    pub b: usize,
    pub magnitude: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GammaMatrix {
    pub entries: CMatrix,
    /// Eigenvalues of `Γ`, descending, tiny negatives clamped to zero.
    pub eigenvalues: Vec<f64>,
    pub rank: usize,
    pub kl_satisfied: bool,
    pub violation: Option<KlViolation>,
}

/// All blocks `M_ab = B† A_a† A_b B` for the code frame `B`.
struct GramBlocks {
    k: usize,
    m: usize,
    blocks: Vec<CMatrix>,
}

impl GramBlocks {
    fn new(frame: &CMatrix, operators: &[&CMatrix]) -> Self {
        let images: Vec<CMatrix> = operators.iter().map(|a| *a * frame).collect();
        let m = operators.len();
        let mut blocks = Vec::with_capacity(m * m);
        for a in 0..m {
            for b in 0..m {
                blocks.push(images[a].adjoint() * &images[b]);
            }
        }
        Self { k: frame.ncols(), m, blocks }
    }

    fn block(&self, a: usize, b: usize) -> &CMatrix {
        &self.blocks[a * self.m + b]
    }

    /// Common diagonal value per `(a, b)` and the worst deviation from the condition.
    fn analyse(&self) -> (CMatrix, Option<KlViolation>) {
        let mut gamma = CMatrix::zeros(self.m, self.m);
        let mut worst: Option<KlViolation> = None;
        let mut note = |i, j, a, b, magnitude: f64| {
            if worst.as_ref().map_or(true, |w| magnitude > w.magnitude) {
                worst = Some(KlViolation { i, j, a, b, magnitude });
            }
        };
        for a in 0..self.m {
            for b in 0..self.m {
                let blk = self.block(a, b);
                let mean = blk.trace() / self.k as f64;
                gamma[(a, b)] = mean;
                for i in 0..self.k {
                    for j in 0..self.k {
                        let dev = if i == j { (blk[(i, i)] - mean).norm() } else { blk[(i, j)].norm() };
                        note(i, j, a, b, dev);
                    }
                }
            }
        }
        (gamma, worst)
    }
}

fn operator_refs(family: &KrausFamily) -> Vec<&CMatrix> {
    family.operators().iter().map(OperatorMatrix::entries).collect()
}

/// `Γ` from `⟨i|A_a†A_b|j⟩`, with the correctability verdict and the rank at `tol`.
pub fn gamma_matrix(code: &CodeSubspace, family: &KrausFamily, tol: f64) -> Result<GammaMatrix> {
    check_dims(code, family)?;
    let blocks = GramBlocks::new(&code.matrix(), &operator_refs(family));
    let (entries, worst) = blocks.analyse();
    let scale = entries.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let kl_satisfied = worst.as_ref().map_or(true, |w| w.magnitude <= tol * scale);
    let (mut eigenvalues, _) = hermitian_eigen(&entries);
    for v in &mut eigenvalues {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let top = eigenvalues.first().copied().unwrap_or(0.0);
    let rank = eigenvalues.iter().filter(|&&v| v >= tol * top.max(1.0)).count();
    Ok(GammaMatrix {
        entries,
        eigenvalues,
        rank,
        kl_satisfied,
        violation: worst.filter(|w| w.magnitude > tol * scale),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum CodeKind {
    #[serde(rename = "not-correctable")]
    NotCorrectable,
    #[serde(rename = "non-degenerate-QECC")]
    NonDegenerateQecc,
    #[serde(rename = "degenerate-QECC")]
    DegenerateQecc,
    #[serde(rename = "QEAC")]
    Qeac,
}

impl CodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CodeKind::NotCorrectable => "not-correctable",
            CodeKind::NonDegenerateQecc => "non-degenerate-QECC",
            CodeKind::DegenerateQecc => "degenerate-QECC",
            CodeKind::Qeac => "QEAC",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CodeClassification {
    pub kind: CodeKind,
    pub gamma: GammaMatrix,
    /// `γ_a` with `A_a |ψ⟩ = γ_a |ψ⟩` on the code, when the code avoids the errors.
    pub qeac_eigenvalues: Option<Vec<C64>>,
}

/// Correctability, then: rank ≤ 1 with scalar action → error avoiding;
/// full rank → non-degenerate; otherwise degenerate.
pub fn classify(code: &CodeSubspace, family: &KrausFamily, tol: f64) -> Result<CodeClassification> {
    let gamma = gamma_matrix(code, family, tol)?;
    if !gamma.kl_satisfied {
        return Ok(CodeClassification { kind: CodeKind::NotCorrectable, gamma, qeac_eigenvalues: None });
    }
    let eigen = if gamma.rank <= 1 { scalar_action(code, family, tol) } else { None };
    let kind = match &eigen {
        Some(_) => CodeKind::Qeac,
        None if gamma.rank == family.len() => CodeKind::NonDegenerateQecc,
        None => CodeKind::DegenerateQecc,
    };
    Ok(CodeClassification { kind, gamma, qeac_eigenvalues: eigen })
}

/// `γ_a = ⟨b_0|A_a|b_0⟩` when every operator acts on the whole code as that scalar.
fn scalar_action(code: &CodeSubspace, family: &KrausFamily, tol: f64) -> Option<Vec<C64>> {
    let first = &code.basis()[0];
    let mut gammas = Vec::with_capacity(family.len());
    for op in family.operators() {
        let gamma = first.inner(&op.apply(first));
        let bound = tol * op.norm_bound().max(1.0);
        let ok = code
            .basis()
            .iter()
            .all(|v| (&op.apply(v) - &(v * gamma)).norm() <= bound);
        if !ok {
            return None;
        }
        gammas.push(gamma);
    }
    Some(gammas)
}

/// Co-eigenspace test: the code avoids the errors iff every `A_a` acts on it as a
/// scalar `γ_a`. For complete families `Σ|γ_a|² = 1` is checked as well.
pub fn check_qeac_coeigen(code: &CodeSubspace, family: &KrausFamily, tol: f64) -> Option<Vec<C64>> {
    if code.n_qubits() != family.n_qubits() {
        return None;
    }
    let gammas = scalar_action(code, family, tol)?;
    if family.is_complete() {
        let total: f64 = gammas.iter().map(|g| g.norm_sqr()).sum();
        if (total - 1.0).abs() > tol {
            return None;
        }
    }
    Some(gammas)
}

/// Rank-one factorization test `γ_ab = γ_a* γ_b` on the correctability matrix.
///
/// The factorization characterizes error avoidance only for families whose span
/// contains the identity; other families are tested with `I` appended.
pub fn check_qeac_factorized(code: &CodeSubspace, family: &KrausFamily, tol: f64) -> bool {
    qeac_factorization(code, family, tol).is_some()
}

/// The factors `γ_a`, one per operator of `family`.
pub fn qeac_factorization(code: &CodeSubspace, family: &KrausFamily, tol: f64) -> Option<Vec<C64>> {
    if code.n_qubits() != family.n_qubits() {
        return None;
    }
    let augmented;
    let appended = !identity_in_span(family, tol);
    let family = if !appended {
        family
    } else {
        let id = OperatorMatrix::identity(family.n_qubits()).ok()?;
        augmented = family.clone().with_leading("I", id).ok()?;
        &augmented
    };
    let gamma = gamma_matrix(code, family, tol).ok()?;
    if !gamma.kl_satisfied {
        return None;
    }
    let (values, vectors) = hermitian_eigen(&gamma.entries);
    let top = values.first().copied().unwrap_or(0.0).max(0.0);
    let factors: Vec<C64> = vectors.column(0).iter().map(|u| u.conj() * top.sqrt()).collect();
    let scale = gamma.entries.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let m = factors.len();
    for a in 0..m {
        for b in 0..m {
            let model = factors[a].conj() * factors[b];
            if (gamma.entries[(a, b)] - model).norm() > tol * scale {
                return None;
            }
        }
    }
    let mut factors = fix_phase(factors);
    if appended {
        factors.remove(0);
    }
    Some(factors)
}

fn fix_phase(mut v: Vec<C64>) -> Vec<C64> {
    if let Some(first) = v.iter().find(|z| z.norm() > 1e-12).copied() {
        let phase = first.conj() / first.norm();
        for z in &mut v {
            *z *= phase;
        }
    }
    v
}

/// A simultaneous eigenspace and the eigenvalue of each operator on it.
#[derive(Clone, Debug, PartialEq)]
pub struct JointEigenspaceResult {
    pub eigenvalues: Vec<C64>,
    pub subspace: Subspace,
}

/// All maximal joint eigenspaces of `operators`, largest first.
///
/// Branch and intersect: the eigenspaces of the first operator seed the
/// branches; every later operator is solved inside each branch for vectors
/// that are eigenvectors of the full operator, so subspaces the operator does
/// not preserve are handled without leakage.
pub fn find_joint_eigenspace(operators: &[OperatorMatrix], tol: f64) -> Result<Vec<JointEigenspaceResult>> {
    let first = operators
        .first()
        .ok_or_else(|| Error::InvalidArgument("no operators given".into()))?;
    let n = first.n_qubits();
    if let Some(bad) = operators.iter().find(|op| op.n_qubits() != n) {
        return Err(Error::DimensionMismatch { expected: n, found: bad.n_qubits() });
    }
    let d = first.dim();
    let mut branches: Vec<(Vec<C64>, CMatrix)> = vec![(Vec::new(), CMatrix::identity(d, d))];
    for op in operators {
        let mut next = Vec::new();
        for (tuple, frame) in &branches {
            for (lambda, vecs) in restricted_eigenspaces(op.entries(), frame, tol)? {
                let mut t = tuple.clone();
                t.push(lambda);
                next.push((t, vecs));
            }
        }
        branches = next;
        if branches.is_empty() {
            break;
        }
    }

    let scales: Vec<f64> = operators.iter().map(|op| op.norm_bound().max(1.0)).collect();
    let mut merged: Vec<(Vec<C64>, CMatrix)> = Vec::new();
    for (tuple, frame) in branches {
        let same = |other: &Vec<C64>| {
            other.iter().zip(&tuple).zip(&scales).all(|((x, y), s)| (x - y).norm() <= tol * s)
        };
        if let Some(entry) = merged.iter_mut().find(|(t, _)| same(t)) {
            let mut stacked = CMatrix::zeros(d, entry.1.ncols() + frame.ncols());
            stacked.view_mut((0, 0), (d, entry.1.ncols())).copy_from(&entry.1);
            stacked.view_mut((0, entry.1.ncols()), (d, frame.ncols())).copy_from(&frame);
            entry.1 = orthonormal_columns(&stacked, 1e-8);
        } else {
            merged.push((tuple, frame));
        }
    }

    let mut results: Vec<JointEigenspaceResult> = merged
        .into_iter()
        .map(|(eigenvalues, frame)| JointEigenspaceResult {
            eigenvalues,
            subspace: Subspace::from_frame(n, &canonical_frame(&frame)),
        })
        .collect();
    results.sort_by(|x, y| {
        y.subspace.dim().cmp(&x.subspace.dim()).then_with(|| {
            x.eigenvalues
                .iter()
                .zip(&y.eigenvalues)
                .map(|(p, q)| p.re.total_cmp(&q.re).then(p.im.total_cmp(&q.im)))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    Ok(results)
}

/// Outcome of a randomized search for a correctable code.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchReport {
    pub found: Option<CodeSubspace>,
    /// Index of the successful trial.
    pub trial: Option<usize>,
    pub trials_run: usize,
    pub best_residual: f64,
    pub seed: u64,
    pub code_dim: usize,
    pub tol: f64,
}

/// Tuning for the per-trial descent in [`search_random_code`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchOptions {
    pub max_iterations: usize,
    /// Trials run concurrently between checks for success; does not affect results.
    pub batch: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self { max_iterations: 300, batch: 4 * rayon::current_num_threads() }
    }
}

/// Haar-random `code_dim`-frames refined by descent on the summed squared
/// correctability violation; the first trial (lowest index) whose max-entry
/// violation is within `tol` wins. Evidence of absence, never proof.
pub fn search_random_code(
    family: &KrausFamily,
    code_dim: usize,
    trials: usize,
    seed: u64,
    tol: f64,
) -> Result<SearchReport> {
    search_random_code_with(family, code_dim, trials, seed, tol, SearchOptions::default())
}

pub fn search_random_code_with(
    family: &KrausFamily,
    code_dim: usize,
    trials: usize,
    seed: u64,
    tol: f64,
    opts: SearchOptions,
) -> Result<SearchReport> {
    let n = family.n_qubits();
    check_qubits(n)?;
    let d = 1usize << n;
    if code_dim == 0 || code_dim > d {
        return Err(Error::InvalidArgument(format!(
            "code dimension {code_dim} outside 1..={d}"
        )));
    }
    if trials == 0 {
        return Err(Error::InvalidArgument("at least one trial is needed".into()));
    }
    let objective = KlObjective::new(family);
    let mut best_residual = f64::INFINITY;
    let mut trials_run = 0;
    let batch = opts.batch.max(1);
    let mut start = 0;
    while start < trials {
        let end = (start + batch).min(trials);
        let outcomes: Vec<(usize, f64, CMatrix)> = (start..end)
            .into_par_iter()
            .map(|t| {
                let mut rng = derived_rng(seed, t as u64);
                let frame = random_frame(d, code_dim, &mut rng);
                let refined = objective.minimize(frame, tol, opts.max_iterations);
                let residual = objective.max_violation(&refined);
                (t, residual, refined)
            })
            .collect();
        trials_run = end;
        // only trials up to the winner count, so the report does not depend on the batch size
        let winner = outcomes.iter().position(|(_, r, _)| *r <= tol);
        let counted = winner.map_or(outcomes.len(), |w| w + 1);
        for (_, residual, _) in &outcomes[..counted] {
            best_residual = best_residual.min(*residual);
        }
        if let Some(w) = winner {
            let (t, _, frame) = outcomes.into_iter().nth(w).expect("winner index");
            let code = CodeSubspace::from_subspace(Subspace::from_frame(n, &canonical_frame(&frame)))?;
            return Ok(SearchReport {
                found: Some(code),
                trial: Some(t),
                trials_run: t + 1,
                best_residual,
                seed,
                code_dim,
                tol,
            });
        }
        start = end;
    }
    Ok(SearchReport { found: None, trial: None, trials_run, best_residual, seed, code_dim, tol })
}

/// `R(V) = Σ_ab ‖V†A_a†A_bV − (tr/k) I‖²_F` over orthonormal frames `V`.
pub(crate) struct KlObjective {
    ops: Vec<CMatrix>,
    adjoints: Vec<CMatrix>,
}

impl KlObjective {
    pub(crate) fn new(family: &KrausFamily) -> Self {
        let ops: Vec<CMatrix> = family.operators().iter().map(|op| op.entries().clone()).collect();
        let adjoints = ops.iter().map(|a| a.adjoint()).collect();
        Self { ops, adjoints }
    }

    fn deviations(&self, frame: &CMatrix) -> (Vec<CMatrix>, Vec<CMatrix>) {
        let k = frame.ncols();
        let images: Vec<CMatrix> = self.ops.iter().map(|a| a * frame).collect();
        let m = images.len();
        let mut devs = Vec::with_capacity(m * m);
        for a in 0..m {
            for b in 0..m {
                let mut blk = images[a].adjoint() * &images[b];
                let mean = blk.trace() / k as f64;
                for i in 0..k {
                    blk[(i, i)] -= mean;
                }
                devs.push(blk);
            }
        }
        (images, devs)
    }

    pub(crate) fn value(&self, frame: &CMatrix) -> f64 {
        self.deviations(frame).1.iter().map(|d| d.norm_squared()).sum()
    }

    pub(crate) fn max_violation(&self, frame: &CMatrix) -> f64 {
        self.deviations(frame)
            .1
            .iter()
            .flat_map(|d| d.iter().map(|z| z.norm()))
            .fold(0.0, f64::max)
    }

    /// Residuals `[Re D, Im D]` over every block entry, with their Jacobian
    /// along tangent perturbations of the frame (real and imaginary part of
    /// each frame entry as parameters).
    pub(crate) fn residual_and_jacobian(&self, frame: &CMatrix) -> (DVector<f64>, DMatrix<f64>) {
        let (d, k) = frame.shape();
        let m = self.ops.len();
        let (images, devs) = self.deviations(frame);
        let mut pulled = Vec::with_capacity(m * m);
        for a in 0..m {
            for b in 0..m {
                pulled.push(&self.adjoints[a] * &images[b]);
            }
        }
        let residual = flatten(&devs, k);
        let mut jacobian = DMatrix::zeros(residual.len(), 2 * d * k);
        let mut delta = CMatrix::zeros(d, k);
        for p in 0..2 * d * k {
            let (entry, imag) = (p / 2, p % 2 == 1);
            let (i, j) = (entry % d, entry / d);
            delta.fill(C64::new(0.0, 0.0));
            delta[(i, j)] = if imag { C64::new(0.0, 1.0) } else { C64::new(1.0, 0.0) };
            let dt = stiefel_tangent(frame, &delta);
            let dt_adj = dt.adjoint();
            let mut blocks = Vec::with_capacity(m * m);
            for a in 0..m {
                for b in 0..m {
                    let mut blk = &dt_adj * &pulled[a * m + b] + pulled[b * m + a].adjoint() * &dt;
                    let mean = blk.trace() / k as f64;
                    for q in 0..k {
                        blk[(q, q)] -= mean;
                    }
                    blocks.push(blk);
                }
            }
            jacobian.set_column(p, &flatten(&blocks, k));
        }
        (residual, jacobian)
    }

    /// Levenberg-Marquardt on the residual blocks, retracting onto orthonormal
    /// frames after every step. Plain gradient descent crawls here: near most
    /// solutions the residual vanishes to second order along some directions.
    pub(crate) fn minimize(&self, frame: CMatrix, tol: f64, max_iterations: usize) -> CMatrix {
        let target = 0.01 * tol;
        let (d, k) = frame.shape();
        let mut x = frame;
        let (mut r, mut jac) = self.residual_and_jacobian(&x);
        let mut f = r.norm_squared();
        let mut mu = 1e-3;
        let mut history = vec![f];
        for _ in 0..max_iterations {
            if r.amax() <= target {
                break;
            }
            let jtj = jac.tr_mul(&jac);
            let grad = jac.tr_mul(&r);
            // stationary (e.g. every frame is equally bad for a unitary basis)
            if grad.amax() <= 1e-14 * (1.0 + f) {
                break;
            }
            let top = jtj.diagonal().max().max(1e-300);
            let mut stepped = None;
            for _ in 0..40 {
                let mut h = jtj.clone();
                for i in 0..h.nrows() {
                    h[(i, i)] += mu * top;
                }
                let Some(chol) = h.cholesky() else {
                    mu *= 4.0;
                    continue;
                };
                let step = chol.solve(&grad);
                let delta = CMatrix::from_fn(d, k, |i, j| {
                    let p = 2 * (j * d + i);
                    C64::new(step[p], step[p + 1])
                });
                let candidate = retract(&x, &stiefel_tangent(&x, &delta), 1.0);
                let fc = self.value(&candidate);
                if fc < f {
                    mu = (mu / 3.0).max(1e-15);
                    stepped = Some((candidate, fc));
                    break;
                }
                mu *= 4.0;
                if mu > 1e12 {
                    break;
                }
            }
            let Some((x_new, f_new)) = stepped else { break };
            x = x_new;
            f = f_new;
            (r, jac) = self.residual_and_jacobian(&x);
            history.push(f);
            if history.len() > 25 && f > history[history.len() - 25] * (1.0 - 1e-6) {
                break;
            }
        }
        x
    }
}

fn flatten(blocks: &[CMatrix], k: usize) -> DVector<f64> {
    let mut out = DVector::zeros(2 * blocks.len() * k * k);
    for (n, blk) in blocks.iter().enumerate() {
        for i in 0..k {
            for j in 0..k {
                let z = blk[(i, j)];
                let p = 2 * ((n * k + i) * k + j);
                out[p] = z.re;
                out[p + 1] = z.im;
            }
        }
    }
    out
}

fn stiefel_tangent(x: &CMatrix, g: &CMatrix) -> CMatrix {
    let xg = x.adjoint() * g;
    let sym = (&xg + xg.adjoint()) * C64::new(0.5, 0.0);
    g - x * sym
}

fn retract(x: &CMatrix, direction: &CMatrix, t: f64) -> CMatrix {
    let moved = x - direction * C64::new(t, 0.0);
    let q = orthonormal_columns(&moved, 1e-12);
    if q.ncols() == x.ncols() {
        q
    } else {
        x.clone()
    }
}
