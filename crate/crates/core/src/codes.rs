//! The pair-parity codes, the two-qubit swap-avoiding code, pair syndrome
//! measurement and CNOT recovery.
//!
//! Qubits are laid out pairwise `1, 1', 2, 2', ...`; pair `l` occupies qubits
//! `2l-1` and `2l`. Code words keep every pair in `{|01⟩, |10⟩}`, so the pair
//! observable `σ_l^z + σ_l'^z` reads 0 on the code, `+2` after `A_l^+` (pair
//! driven to `|11⟩`) and `−2` after `A_l^-` (pair driven to `|00⟩`).

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::CodeSubspace;
use crate::error::{Error, Result};
use crate::hilbert::{
    check_qubits, qubit_mask, CMatrix, CVector, OperatorMatrix, StateVector, C64,
};
use crate::noise::KrausFamily;
use crate::sampling::{derived_rng, rng_from_seed, SeededRng};

const NORM_TOL: f64 = 1e-10;
/// States further than this from the code are refused by the decoders.
pub const DECODE_TOL: f64 = 1e-8;
/// Injected errors whose image on the code is shorter than this are reported as avoided.
pub const ZERO_AMPLITUDE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "gate", rename_all = "lowercase")]
pub enum Gate {
    Cnot { control: usize, target: usize },
    X { target: usize },
}

impl fmt::Display for Gate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gate::Cnot { control, target } => write!(f, "CNOT({control}->{target})"),
            Gate::X { target } => write!(f, "X({target})"),
        }
    }
}

/// A reversible classical circuit; gates act in order on 1-based qubits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Circuit {
    pub n_qubits: usize,
    pub gates: Vec<Gate>,
}

impl Circuit {
    pub fn new(n_qubits: usize, gates: Vec<Gate>) -> Result<Self> {
        check_qubits(n_qubits)?;
        let in_range = |q: usize| (1..=n_qubits).contains(&q);
        for g in &gates {
            let ok = match *g {
                Gate::Cnot { control, target } => in_range(control) && in_range(target) && control != target,
                Gate::X { target } => in_range(target),
            };
            if !ok {
                return Err(Error::InvalidArgument(format!("gate {g} invalid on {n_qubits} qubits")));
            }
        }
        Ok(Self { n_qubits, gates })
    }

    pub fn empty(n_qubits: usize) -> Self {
        Self { n_qubits, gates: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }

    /// Image of a basis index.
    pub fn permute(&self, mut index: usize) -> usize {
        for g in &self.gates {
            match *g {
                Gate::Cnot { control, target } => {
                    if index & qubit_mask(control, self.n_qubits) != 0 {
                        index ^= qubit_mask(target, self.n_qubits);
                    }
                }
                Gate::X { target } => index ^= qubit_mask(target, self.n_qubits),
            }
        }
        index
    }

    pub fn apply(&self, state: &StateVector) -> Result<StateVector> {
        if state.n_qubits() != self.n_qubits {
            return Err(Error::DimensionMismatch { expected: self.n_qubits, found: state.n_qubits() });
        }
        let amps = state.amplitudes();
        let mut out = CVector::zeros(amps.len());
        for (i, a) in amps.iter().enumerate() {
            out[self.permute(i)] = *a;
        }
        StateVector::from_vector(self.n_qubits, out)
    }

    /// `U ρ U†` for the permutation `U`.
    pub fn conjugate(&self, rho: &CMatrix) -> CMatrix {
        let perm: Vec<usize> = (0..rho.nrows()).map(|i| self.permute(i)).collect();
        let mut out = CMatrix::zeros(rho.nrows(), rho.ncols());
        for i in 0..rho.nrows() {
            for j in 0..rho.ncols() {
                out[(perm[i], perm[j])] = rho[(i, j)];
            }
        }
        out
    }

    pub fn to_operator(&self) -> Result<OperatorMatrix> {
        let d = 1usize << self.n_qubits;
        let mut m = CMatrix::zeros(d, d);
        for i in 0..d {
            m[(self.permute(i), i)] = C64::new(1.0, 0.0);
        }
        OperatorMatrix::new(self.n_qubits, m)
    }
}

impl fmt::Display for Circuit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.gates.iter().map(Gate::to_string).collect();
        write!(f, "[{}]", parts.join(", "))
    }
}

/// `C_{control,target}` as a matrix.
pub fn cnot(control: usize, target: usize, n_qubits: usize) -> Result<OperatorMatrix> {
    Circuit::new(n_qubits, vec![Gate::Cnot { control, target }])?.to_operator()
}

fn check_normalized(c0: C64, c1: C64) -> Result<()> {
    let norm = c0.norm_sqr() + c1.norm_sqr();
    if (norm - 1.0).abs() > NORM_TOL {
        return Err(Error::InvalidArgument(format!("logical amplitudes have squared norm {norm}")));
    }
    Ok(())
}

/// Four-qubit encoder: `C_{11'} C_{12} C_{12'}` on `(c0|0⟩ + c1|1⟩) ⊗ |101⟩`.
pub fn encoder4() -> Circuit {
    Circuit {
        n_qubits: 4,
        gates: vec![
            Gate::Cnot { control: 1, target: 4 },
            Gate::Cnot { control: 1, target: 3 },
            Gate::Cnot { control: 1, target: 2 },
        ],
    }
}

/// `c0|0101⟩ + c1|1010⟩`, produced by running [`encoder4`].
pub fn encode4(c0: C64, c1: C64) -> Result<StateVector> {
    check_normalized(c0, c1)?;
    let mut amps = vec![C64::new(0.0, 0.0); 16];
    amps[0b0101] = c0;
    amps[0b1101] = c1;
    encoder4().apply(&StateVector::new(4, amps)?)
}

/// Norm of the amplitudes outside `inside`; summed directly, since
/// `‖ψ‖² − ‖kept‖²` loses everything below `sqrt(ε)`.
fn leaked_norm(amps: &CVector, inside: impl Fn(usize) -> bool) -> f64 {
    amps.iter()
        .enumerate()
        .filter(|(i, _)| !inside(*i))
        .map(|(_, z)| z.norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// Runs the encoder backwards and reads qubit 1 once `1'22'` is back in `|101⟩`.
pub fn decode4(state: &StateVector) -> Result<StateVector> {
    if state.n_qubits() != 4 {
        return Err(Error::DimensionMismatch { expected: 4, found: state.n_qubits() });
    }
    let mut inverse = encoder4();
    inverse.gates.reverse();
    let unwound = inverse.apply(state)?;
    let a = unwound.amplitudes();
    let (c0, c1) = (a[0b0101], a[0b1101]);
    let residual = leaked_norm(a, |i| i == 0b0101 || i == 0b1101);
    if residual > DECODE_TOL {
        return Err(Error::OutsideCodeSpace { residual });
    }
    StateVector::new(1, vec![c0, c1])
}

/// Physical basis index of logical bits `bits` (qubit 1 first) in the `2L+2` parity code.
fn parity_codeword(bits: usize, logical: usize) -> usize {
    let mut out = 0usize;
    let mut parity = 0usize;
    for l in 0..logical {
        let bit = (bits >> (logical - 1 - l)) & 1;
        parity ^= bit;
        out = (out << 2) | (bit << 1) | (1 - bit);
    }
    (out << 2) | (parity << 1) | (1 - parity)
}

/// Every basis ket `|i_1 … i_L⟩` ↦ `|i_1, 1−i_1, …, i_L, 1−i_L, p, 1−p⟩` with `p = Σ i_l mod 2`.
pub fn encode_general(input: &StateVector) -> Result<StateVector> {
    let l = input.n_qubits();
    if l == 0 {
        return Err(Error::InvalidArgument("need at least one logical qubit".into()));
    }
    let n = 2 * l + 2;
    check_qubits(n)?;
    let mut out = CVector::zeros(1 << n);
    for (bits, a) in input.amplitudes().iter().enumerate() {
        out[parity_codeword(bits, l)] = *a;
    }
    StateVector::from_vector(n, out)
}

/// Logical amplitudes of a `2L+2` parity code state.
pub fn decode_general(state: &StateVector) -> Result<StateVector> {
    let n = state.n_qubits();
    if n < 4 || n % 2 != 0 {
        return Err(Error::InvalidArgument(format!("{n} qubits is not a 2L+2 parity code")));
    }
    let l = n / 2 - 1;
    let amps = state.amplitudes();
    let words: Vec<usize> = (0..1usize << l).map(|bits| parity_codeword(bits, l)).collect();
    let logical: Vec<C64> = words.iter().map(|&w| amps[w]).collect();
    let residual = leaked_norm(amps, |i| words.binary_search(&i).is_ok());
    if residual > DECODE_TOL {
        return Err(Error::OutsideCodeSpace { residual });
    }
    StateVector::new(l, logical)
}

/// `c0|00⟩ + c1|11⟩`.
pub fn encode_correlated(c0: C64, c1: C64) -> Result<StateVector> {
    check_normalized(c0, c1)?;
    StateVector::new(2, vec![c0, C64::new(0.0, 0.0), C64::new(0.0, 0.0), c1])
}

pub fn four_qubit_code() -> CodeSubspace {
    general_parity_code(1).expect("four-qubit code")
}

/// The `2L+2` qubit code with logical basis in binary order.
pub fn general_parity_code(logical: usize) -> Result<CodeSubspace> {
    if logical == 0 {
        return Err(Error::InvalidArgument("need at least one logical qubit".into()));
    }
    let n = 2 * logical + 2;
    check_qubits(n)?;
    let basis = (0..1usize << logical)
        .map(|bits| StateVector::basis(n, parity_codeword(bits, logical)))
        .collect::<Result<Vec<_>>>()?;
    CodeSubspace::new(n, basis)
}

pub fn correlated_code() -> CodeSubspace {
    CodeSubspace::new(
        2,
        vec![StateVector::from_bits("00").expect("ket"), StateVector::from_bits("11").expect("ket")],
    )
    .expect("correlated code")
}

/// Outcome of `σ_l^z + σ_l'^z` for a basis index: `+2` for `|11⟩`, `−2` for `|00⟩`, else 0.
fn pair_value(index: usize, pair: usize, n_qubits: usize) -> i8 {
    let a = index & qubit_mask(2 * pair - 1, n_qubits) != 0;
    let b = index & qubit_mask(2 * pair, n_qubits) != 0;
    match (a, b) {
        (true, true) => 2,
        (false, false) => -2,
        _ => 0,
    }
}

fn syndrome_pattern(index: usize, pairs: usize, n_qubits: usize) -> Vec<i8> {
    (1..=pairs).map(|l| pair_value(index, l, n_qubits)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Syndrome {
    pub outcomes: Vec<i8>,
    pub post_state: StateVector,
}

fn check_pairs(state: &StateVector, pairs: usize) -> Result<()> {
    if pairs == 0 || state.n_qubits() != 2 * pairs {
        return Err(Error::DimensionMismatch { expected: 2 * pairs, found: state.n_qubits() });
    }
    Ok(())
}

/// QND measurement of every pair observable, sampled with `seed`.
pub fn measure_syndrome(state: &StateVector, pairs: usize, seed: u64) -> Result<Syndrome> {
    measure_syndrome_with(state, pairs, &mut rng_from_seed(seed))
}

pub fn measure_syndrome_with<R: Rng + ?Sized>(state: &StateVector, pairs: usize, rng: &mut R) -> Result<Syndrome> {
    check_pairs(state, pairs)?;
    let n = state.n_qubits();
    let mut amps = state.normalized()?.into_vector();
    let mut outcomes = Vec::with_capacity(pairs);
    for l in 1..=pairs {
        let mut probs = [0.0f64; 3];
        for (i, a) in amps.iter().enumerate() {
            probs[((pair_value(i, l, n) + 2) / 2) as usize] += a.norm_sqr();
        }
        // outcomes in the order +2, 0, −2
        let order = [(2i8, probs[2]), (0, probs[1]), (-2, probs[0])];
        let u: f64 = rng.random();
        let mut cumulative = 0.0;
        let mut chosen = None;
        for &(value, p) in &order {
            cumulative += p;
            if p > 0.0 && u < cumulative {
                chosen = Some((value, p));
                break;
            }
        }
        let (value, p) = match chosen {
            Some(c) => c,
            None => *order
                .iter()
                .rev()
                .find(|(_, p)| *p > 0.0)
                .ok_or_else(|| Error::Numerical("syndrome measurement on a zero state".into()))?,
        };
        if p <= 1e-300 {
            return Err(Error::Numerical(format!("pair {l} projection has zero norm")));
        }
        let scale = 1.0 / p.sqrt();
        for (i, a) in amps.iter_mut().enumerate() {
            if pair_value(i, l, n) == value {
                *a *= scale;
            } else {
                *a = C64::new(0.0, 0.0);
            }
        }
        outcomes.push(value);
    }
    Ok(Syndrome { outcomes, post_state: StateVector::from_vector(n, amps)? })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    FourQubit,
    GeneralParity,
}

/// CNOT recovery for a single-pair syndrome.
///
/// Four-qubit scheme: the damaged pair is rebuilt by copying the other pair
/// (its first qubit carries `i`, its second `1−i`). General-parity scheme: the
/// damaged pair's first qubit is the XOR of every other pair's first qubit.
pub fn recovery_circuit(outcomes: &[i8], scheme: Scheme) -> Result<Circuit> {
    let pairs = outcomes.len();
    if let Some(bad) = outcomes.iter().find(|v| ![-2, 0, 2].contains(*v)) {
        return Err(Error::InvalidArgument(format!("syndrome value {bad} is not one of -2, 0, +2")));
    }
    let n = 2 * pairs;
    let flagged: Vec<usize> = (0..pairs).filter(|&l| outcomes[l] != 0).collect();
    if flagged.len() > 1 {
        return Err(Error::UncorrectablePattern(outcomes.to_vec()));
    }
    let Some(&idx) = flagged.first() else {
        return Ok(Circuit::empty(n));
    };
    let plus = outcomes[idx] == 2;
    let l = idx + 1;
    let (q, qp) = (2 * l - 1, 2 * l);
    let gates = match scheme {
        Scheme::FourQubit => {
            if pairs != 2 {
                return Err(Error::InvalidArgument("the four-qubit scheme needs exactly two pairs".into()));
            }
            let other = 3 - l;
            let (o, op) = (2 * other - 1, 2 * other);
            if plus {
                // |11⟩: 1 ⊕ (1−i) = i and 1 ⊕ i = 1−i
                vec![Gate::Cnot { control: op, target: q }, Gate::Cnot { control: o, target: qp }]
            } else {
                vec![Gate::Cnot { control: o, target: q }, Gate::Cnot { control: op, target: qp }]
            }
        }
        Scheme::GeneralParity => {
            let mut gates = Vec::new();
            if plus {
                gates.push(Gate::X { target: q });
            }
            for m in (1..=pairs).filter(|&m| m != l) {
                gates.push(Gate::Cnot { control: 2 * m - 1, target: q });
            }
            // after |11⟩ the second qubit already holds 1; after |00⟩ it needs flipping
            if !plus {
                gates.push(Gate::X { target: qp });
            }
            gates.push(Gate::Cnot { control: q, target: qp });
            gates
        }
    };
    Circuit::new(n, gates)
}

/// A parity code together with its recovery scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairCode {
    logical_qubits: usize,
    scheme: Scheme,
}

impl PairCode {
    pub fn four_qubit() -> Self {
        Self { logical_qubits: 1, scheme: Scheme::FourQubit }
    }

    pub fn general_parity(logical_qubits: usize) -> Result<Self> {
        if logical_qubits == 0 {
            return Err(Error::InvalidArgument("need at least one logical qubit".into()));
        }
        check_qubits(2 * logical_qubits + 2)?;
        Ok(Self { logical_qubits, scheme: Scheme::GeneralParity })
    }

    pub fn logical_qubits(&self) -> usize {
        self.logical_qubits
    }

    pub fn pairs(&self) -> usize {
        self.logical_qubits + 1
    }

    pub fn n_qubits(&self) -> usize {
        2 * self.pairs()
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn subspace(&self) -> Result<CodeSubspace> {
        general_parity_code(self.logical_qubits)
    }

    pub fn encode(&self, input: &StateVector) -> Result<StateVector> {
        if input.n_qubits() != self.logical_qubits {
            return Err(Error::DimensionMismatch { expected: self.logical_qubits, found: input.n_qubits() });
        }
        match self.scheme {
            Scheme::FourQubit => {
                let a = input.amplitudes();
                encode4(a[0], a[1])
            }
            Scheme::GeneralParity => encode_general(input),
        }
    }

    pub fn decode(&self, state: &StateVector) -> Result<StateVector> {
        match self.scheme {
            Scheme::FourQubit => decode4(state),
            Scheme::GeneralParity => decode_general(state),
        }
    }

    pub fn recovery(&self, outcomes: &[i8]) -> Result<Circuit> {
        recovery_circuit(outcomes, self.scheme)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundTripReport {
    pub injected_error: String,
    pub syndrome: Syndrome,
    pub recovery: Circuit,
    pub logical_fidelity: f64,
    pub success: bool,
    /// The error annihilates the encoded state, so it never occurs on this input.
    pub zero_amplitude: bool,
}

/// Fidelity threshold used for the `success` flag.
pub const RECOVERY_TOL: f64 = 1e-10;

fn overlap(a: &StateVector, b: &StateVector) -> f64 {
    a.inner(b).norm_sqr().min(1.0 + 1e-12)
}

/// Encode, apply the normalized `error`, measure, recover and compare with the input.
pub fn roundtrip_inject(
    code: &PairCode,
    input: &StateVector,
    label: &str,
    error: Option<&OperatorMatrix>,
    seed: u64,
) -> Result<RoundTripReport> {
    let input = input.normalized()?;
    let encoded = code.encode(&input)?;
    let hit = match error {
        None => None,
        Some(op) => {
            if op.n_qubits() != code.n_qubits() {
                return Err(Error::DimensionMismatch { expected: code.n_qubits(), found: op.n_qubits() });
            }
            Some(op.apply(&encoded))
        }
    };
    let zero_amplitude = hit.as_ref().is_some_and(|s| s.norm() <= ZERO_AMPLITUDE);
    let corrupted = match hit {
        Some(s) if !zero_amplitude => s.normalized()?,
        _ => encoded.clone(),
    };
    let syndrome = measure_syndrome(&corrupted, code.pairs(), seed)?;
    let recovery = code.recovery(&syndrome.outcomes)?;
    let recovered = recovery.apply(&syndrome.post_state)?;
    let logical_fidelity = match code.decode(&recovered) {
        Ok(decoded) => overlap(&input, &decoded),
        Err(Error::OutsideCodeSpace { .. }) => overlap(&encoded, &recovered),
        Err(e) => return Err(e),
    };
    Ok(RoundTripReport {
        injected_error: label.to_string(),
        syndrome,
        recovery,
        logical_fidelity,
        success: logical_fidelity >= 1.0 - RECOVERY_TOL,
        zero_amplitude,
    })
}

/// Per-Kraus-outcome statistics of a Monte Carlo run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OutcomeStats {
    pub count: usize,
    pub mean_fidelity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonteCarloReport {
    pub trials: usize,
    pub seed: u64,
    pub mean_fidelity: f64,
    pub standard_error: f64,
    pub uncorrectable: usize,
    pub per_outcome: BTreeMap<String, OutcomeStats>,
    /// Trial counts per syndrome pattern.
    pub syndromes: BTreeMap<Vec<i8>, usize>,
}

/// Samples one Kraus outcome per trial with probability `‖A_a ψ‖²`, then
/// measures, recovers and scores `|⟨enc ψ|recovered⟩|²`.
pub fn roundtrip_monte_carlo(
    code: &PairCode,
    input: &StateVector,
    family: &KrausFamily,
    trials: usize,
    seed: u64,
) -> Result<MonteCarloReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("at least one trial is needed".into()));
    }
    if family.n_qubits() != code.n_qubits() {
        return Err(Error::DimensionMismatch { expected: code.n_qubits(), found: family.n_qubits() });
    }
    let residual = family.completeness_residual();
    if residual > crate::channel::CHANNEL_COMPLETENESS_TOL {
        return Err(Error::IncompleteFamily { residual });
    }
    let encoded = code.encode(&input.normalized()?)?;
    let branches: Vec<StateVector> = family.operators().iter().map(|op| op.apply(&encoded)).collect();
    let weights: Vec<f64> = branches.iter().map(|b| b.norm().powi(2)).collect();
    let total: f64 = weights.iter().sum();

    let run_trial = |t: usize| -> Result<(usize, f64, bool, Vec<i8>)> {
        let mut rng: SeededRng = derived_rng(seed, t as u64);
        let a = sample_index(&weights, total, &mut rng);
        let state = branches[a].normalized()?;
        let syndrome = measure_syndrome_with(&state, code.pairs(), &mut rng)?;
        let (fidelity, bad) = match code.recovery(&syndrome.outcomes) {
            Ok(circuit) => (overlap(&encoded, &circuit.apply(&syndrome.post_state)?), false),
            Err(Error::UncorrectablePattern(_)) => (overlap(&encoded, &syndrome.post_state), true),
            Err(e) => return Err(e),
        };
        Ok((a, fidelity, bad, syndrome.outcomes))
    };
    let results: Vec<(usize, f64, bool, Vec<i8>)> = (0..trials)
        .into_par_iter()
        .map(run_trial)
        .collect::<Result<Vec<_>>>()?;

    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut uncorrectable = 0;
    let mut per: Vec<(usize, f64)> = vec![(0, 0.0); family.len()];
    let mut syndromes: BTreeMap<Vec<i8>, usize> = BTreeMap::new();
    for (a, f, bad, pattern) in results {
        *syndromes.entry(pattern).or_default() += 1;
        sum += f;
        sum_sq += f * f;
        uncorrectable += usize::from(bad);
        per[a].0 += 1;
        per[a].1 += f;
    }
    let n = trials as f64;
    let mean = sum / n;
    let variance = if trials > 1 { ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
    let per_outcome = family
        .labels()
        .iter()
        .zip(per)
        .filter(|(_, (count, _))| *count > 0)
        .map(|(label, (count, s))| (label.clone(), OutcomeStats { count, mean_fidelity: s / count as f64 }))
        .collect();
    Ok(MonteCarloReport {
        trials,
        seed,
        mean_fidelity: mean,
        standard_error: (variance / n).sqrt(),
        uncorrectable,
        per_outcome,
        syndromes,
    })
}

fn sample_index<R: Rng + ?Sized>(weights: &[f64], total: f64, rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>() * total;
    let mut cumulative = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        cumulative += w;
        if w > 0.0 && u < cumulative {
            return i;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// The exact expectation of the Monte Carlo score: channel, syndrome
/// projection, recovery per pattern (uncorrectable patterns left alone),
/// then `⟨enc ψ|ρ|enc ψ⟩`, summed term by term as
/// `Σ_a Σ_s |⟨enc ψ| R_s P_s A_a |enc ψ⟩|²`.
pub fn exact_recovered_fidelity(code: &PairCode, input: &StateVector, family: &KrausFamily) -> Result<f64> {
    if family.n_qubits() != code.n_qubits() {
        return Err(Error::DimensionMismatch { expected: code.n_qubits(), found: family.n_qubits() });
    }
    let residual = family.completeness_residual();
    if residual > crate::channel::CHANNEL_COMPLETENESS_TOL {
        return Err(Error::IncompleteFamily { residual });
    }
    let encoded = code.encode(&input.normalized()?)?;
    let n = code.n_qubits();
    let mut sectors: BTreeMap<Vec<i8>, Vec<usize>> = BTreeMap::new();
    for i in 0..1usize << n {
        sectors.entry(syndrome_pattern(i, code.pairs(), n)).or_default().push(i);
    }
    let mut routes: Vec<(Vec<usize>, Vec<usize>)> = Vec::with_capacity(sectors.len());
    for (pattern, members) in sectors {
        let image = match code.recovery(&pattern) {
            Ok(circuit) => members.iter().map(|&i| circuit.permute(i)).collect(),
            Err(Error::UncorrectablePattern(_)) => members.clone(),
            Err(e) => return Err(e),
        };
        routes.push((members, image));
    }
    let v = encoded.amplitudes();
    let mut fidelity = 0.0;
    for op in family.operators() {
        let branch = op.apply(&encoded);
        let w = branch.amplitudes();
        for (members, image) in &routes {
            let amp: C64 = members.iter().zip(image).map(|(&i, &ri)| v[ri].conj() * w[i]).sum();
            fidelity += amp.norm_sqr();
        }
    }
    Ok(fidelity)
}
