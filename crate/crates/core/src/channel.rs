//! Density matrices, channel application and worst-case code fidelity.

use rand::Rng;
use rayon::prelude::*;

use crate::analysis::CodeSubspace;
use crate::error::{Error, Result};
use crate::hilbert::{check_qubits, hermitian_eigen, max_abs_diff, CMatrix, CVector, StateVector, C64};
use crate::noise::KrausFamily;
use crate::sampling::{random_unit_vector, rng_from_seed};

/// Families further than this from completeness are refused by [`apply_channel`].
pub const CHANNEL_COMPLETENESS_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    n_qubits: usize,
    entries: CMatrix,
}

impl DensityMatrix {
    /// Validates Hermiticity and unit trace within `1e-10` and positivity within `1e-8`.
    pub fn new(n_qubits: usize, entries: CMatrix) -> Result<Self> {
        check_qubits(n_qubits)?;
        let d = 1usize << n_qubits;
        if entries.nrows() != d || entries.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, found: entries.nrows() });
        }
        let herm = max_abs_diff(&entries, &entries.adjoint());
        if herm > 1e-10 {
            return Err(Error::InvalidArgument(format!("density matrix is not Hermitian ({herm:e})")));
        }
        let trace = entries.trace();
        if (trace - C64::new(1.0, 0.0)).norm() > 1e-10 {
            return Err(Error::InvalidArgument(format!("density matrix has trace {trace}")));
        }
        let (values, _) = hermitian_eigen(&entries);
        let min = values.last().copied().unwrap_or(0.0);
        if min < -1e-8 {
            return Err(Error::NotPsd { min_eigenvalue: min });
        }
        Ok(Self { n_qubits, entries })
    }

    pub fn from_pure(state: &StateVector) -> Result<Self> {
        let psi = state.normalized()?;
        let v = psi.amplitudes();
        Ok(Self { n_qubits: psi.n_qubits(), entries: v * v.adjoint() })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn trace(&self) -> C64 {
        self.entries.trace()
    }

    /// `⟨ψ|ρ|ψ⟩`.
    pub fn expectation(&self, state: &StateVector) -> Result<f64> {
        if state.n_qubits() != self.n_qubits {
            return Err(Error::DimensionMismatch { expected: self.n_qubits, found: state.n_qubits() });
        }
        let v = state.amplitudes();
        Ok((v.adjoint() * &self.entries * v)[(0, 0)].re)
    }

    pub fn max_abs_diff(&self, other: &DensityMatrix) -> f64 {
        max_abs_diff(&self.entries, &other.entries)
    }
}

/// `ρ ↦ Σ_a A_a ρ A_a†`.
pub fn apply_channel(family: &KrausFamily, rho: &DensityMatrix) -> Result<DensityMatrix> {
    if family.n_qubits() != rho.n_qubits {
        return Err(Error::DimensionMismatch { expected: family.n_qubits(), found: rho.n_qubits });
    }
    let residual = family.completeness_residual();
    if residual > CHANNEL_COMPLETENESS_TOL {
        return Err(Error::IncompleteFamily { residual });
    }
    let d = rho.entries.nrows();
    let mut out = CMatrix::zeros(d, d);
    for op in family.operators() {
        let a = op.entries();
        out += a * &rho.entries * a.adjoint();
    }
    Ok(DensityMatrix { n_qubits: rho.n_qubits, entries: out })
}

/// `⟨ψ|ℰ(|ψ⟩⟨ψ|)|ψ⟩ = Σ_a |⟨ψ|A_a|ψ⟩|²` for a normalized copy of `ψ`.
pub fn state_fidelity(family: &KrausFamily, psi: &StateVector) -> Result<f64> {
    if family.n_qubits() != psi.n_qubits() {
        return Err(Error::DimensionMismatch { expected: family.n_qubits(), found: psi.n_qubits() });
    }
    let psi = psi.normalized()?;
    Ok(family
        .operators()
        .iter()
        .map(|op| psi.inner(&op.apply(&psi)).norm_sqr())
        .sum())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FidelityOptions {
    pub random_starts: usize,
    /// Resolution of the Bloch-sphere prescan for two-dimensional codes.
    pub grid: usize,
    pub max_iterations: usize,
    pub gradient_tol: f64,
    pub seed: u64,
}

impl Default for FidelityOptions {
    fn default() -> Self {
        Self { random_starts: 32, grid: 64, max_iterations: 500, gradient_tol: 1e-10, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FidelityResult {
    pub value: f64,
    /// The minimizing code state, in the physical basis.
    pub argmin: StateVector,
    /// Iterations spent by the winning start.
    pub iterations: usize,
    pub converged: bool,
}

/// Worst-case fidelity over the code, `min_ψ Σ_a |⟨ψ|A_a|ψ⟩|²`.
///
/// Optimized in code coordinates with projected gradient descent from the
/// logical basis vectors and seeded random starts (plus a grid prescan when
/// the code is a qubit). Multistart descent is a heuristic; the result is an
/// upper bound on the true minimum that is exact for constant landscapes.
pub fn code_fidelity(family: &KrausFamily, code: &CodeSubspace, opts: &FidelityOptions) -> Result<FidelityResult> {
    if family.n_qubits() != code.n_qubits() {
        return Err(Error::DimensionMismatch { expected: family.n_qubits(), found: code.n_qubits() });
    }
    let frame = code.matrix();
    let compressed: Vec<CMatrix> = family
        .operators()
        .iter()
        .map(|op| frame.adjoint() * op.entries() * &frame)
        .collect();
    let objective = Quartic { blocks: compressed };
    let k = code.dim();

    let mut starts: Vec<CVector> = (0..k)
        .map(|i| {
            let mut e = CVector::zeros(k);
            e[i] = C64::new(1.0, 0.0);
            e
        })
        .collect();
    let mut rng = rng_from_seed(opts.seed);
    for _ in 0..opts.random_starts {
        starts.push(random_unit_vector(k, &mut rng));
    }
    if k == 2 && opts.grid > 0 {
        starts.extend(grid_starts(&objective, opts.grid, 4));
    }
    // staggered initial step sizes, so identical landscapes do not march in lockstep
    let jitter: Vec<f64> = (0..starts.len()).map(|_| rng.random::<f64>()).collect();

    let runs: Vec<(f64, CVector, usize, bool)> = starts
        .into_par_iter()
        .zip(jitter)
        .map(|(x, j)| objective.descend(x, j, opts))
        .collect();
    let (value, x, iterations, converged) = runs
        .into_iter()
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .ok_or_else(|| Error::Numerical("no optimization starts".into()))?;
    let argmin = StateVector::from_vector(code.n_qubits(), &frame * x)?.with_canonical_phase();
    Ok(FidelityResult { value: value.clamp(0.0, 1.0), argmin, iterations, converged })
}

/// `f(x) = Σ_a |x† M_a x|²` on the unit sphere of the code coordinates.
struct Quartic {
    blocks: Vec<CMatrix>,
}

impl Quartic {
    fn value(&self, x: &CVector) -> f64 {
        self.blocks.iter().map(|m| x.dotc(&(m * x)).norm_sqr()).sum()
    }

    /// Gradient w.r.t. the real inner product `Re(u†v)`, projected onto the sphere's tangent space.
    fn tangent_gradient(&self, x: &CVector) -> CVector {
        let mut g = CVector::zeros(x.len());
        for m in &self.blocks {
            let mx = m * x;
            let mdx = m.adjoint() * x;
            let e = x.dotc(&mx);
            g += mx * e.conj() + mdx * e;
        }
        g *= C64::new(2.0, 0.0);
        let radial = x.dotc(&g).re;
        g - x * C64::new(radial, 0.0)
    }

    fn descend(&self, x0: CVector, jitter: f64, opts: &FidelityOptions) -> (f64, CVector, usize, bool) {
        let mut x = x0.normalize();
        let mut f = self.value(&x);
        let mut step = 0.5 + 0.5 * jitter;
        for it in 0..opts.max_iterations {
            let g = self.tangent_gradient(&x);
            let gnorm = g.norm();
            if gnorm <= opts.gradient_tol {
                return (f, x, it, true);
            }
            let mut t = step;
            let mut moved = false;
            for _ in 0..60 {
                let candidate = (&x - &g * C64::new(t, 0.0)).normalize();
                let fc = self.value(&candidate);
                if fc <= f - 1e-4 * t * gnorm * gnorm {
                    x = candidate;
                    f = fc;
                    moved = true;
                    break;
                }
                t *= 0.5;
            }
            if !moved {
                // no representable descent left: a minimum to machine precision
                return (f, x, it, true);
            }
            step = (t * 2.0).min(1e3);
        }
        (f, x, opts.max_iterations, false)
    }
}

fn grid_starts(objective: &Quartic, grid: usize, keep: usize) -> Vec<CVector> {
    let mut scored: Vec<(f64, CVector)> = Vec::with_capacity(grid * grid);
    for a in 0..grid {
        let theta = std::f64::consts::PI * (a as f64 + 0.5) / grid as f64;
        for b in 0..grid {
            let phi = 2.0 * std::f64::consts::PI * b as f64 / grid as f64;
            let x = CVector::from_vec(vec![
                C64::new((theta / 2.0).cos(), 0.0),
                C64::from_polar((theta / 2.0).sin(), phi),
            ]);
            scored.push((objective.value(&x), x));
        }
    }
    scored.sort_by(|p, q| p.0.total_cmp(&q.0));
    scored.into_iter().take(keep).map(|(_, x)| x).collect()
}

/// `log2(code_dim) / n_qubits`.
pub fn efficiency(code_dim: usize, n_qubits: usize) -> Result<f64> {
    if code_dim == 0 || n_qubits == 0 {
        return Err(Error::InvalidArgument("efficiency needs a nonempty code on at least one qubit".into()));
    }
    Ok((code_dim as f64).log2() / n_qubits as f64)
}
