//! Command-line front end: model and code files, presets, dispatch and JSON reports.
//!
//! Complex numbers are `[re, im]`; kets are objects mapping bitstrings
//! (qubit 1 leftmost) to complex numbers.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::analysis::{
    classify, find_joint_eigenspace, qeac_factorization, search_random_code, CodeSubspace,
};
use crate::channel::{code_fidelity, efficiency, state_fidelity, FidelityOptions};
use crate::codes::{
    correlated_code, exact_recovered_fidelity, general_parity_code, roundtrip_inject, roundtrip_monte_carlo,
    PairCode,
};
use crate::error::Error;
use crate::hilbert::{bits_to_index, check_qubits, orthonormalize, CMatrix, OperatorMatrix, StateVector, C64, DEFAULT_TOL};
use crate::noise::{
    build_collective_model, build_correlated_swap_model, build_pairwise_model, complete_family, KrausFamily,
    PairCouplings, PauliKind, PauliTerm,
};
use crate::sampling::{random_unit_vector, rng_from_seed};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_PRECONDITION: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

/// Coupling used by the presets for every error operator.
pub const PRESET_GAMMA: f64 = 0.1;
/// Identity component `γ₀` included by the collective and pairwise presets.
pub const PRESET_GAMMA0: f64 = 0.9;
/// Coupling of the correlated-swap preset.
pub const PRESET_SWAP_GAMMA: f64 = 0.5;

/// Amplitudes below this are left out of printed kets.
const KET_THRESHOLD: f64 = 1e-12;

pub type Complex = [f64; 2];

fn cx(z: Complex) -> C64 {
    C64::new(z[0], z[1])
}

fn to_pair(z: C64) -> Complex {
    [z.re, z.im]
}

/// Rounding noise below `1e-14` printed as exact zero.
fn chopped(z: C64) -> Complex {
    let chop = |x: f64| if x.abs() < 1e-14 { 0.0 } else { x };
    [chop(z.re), chop(z.im)]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingSpec {
    pub plus: Complex,
    pub minus: Complex,
    pub z: Complex,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorSpec {
    pub qubit: usize,
    pub kind: PauliKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermSpec {
    pub coeff: Complex,
    pub ops: Vec<FactorSpec>,
}

/// One operator, given either as a sum of Pauli terms or as a dense matrix (rows).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSpec {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terms: Option<Vec<TermSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<Complex>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Collective {
        qubits: usize,
        gamma_plus: Complex,
        gamma_minus: Complex,
        gamma_z: Complex,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gamma0: Option<Complex>,
    },
    PairwiseCollective {
        pairs: usize,
        /// Per-pair couplings; `gamma` applies to every pair and operator when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gamma: Option<Complex>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        couplings: Option<Vec<CouplingSpec>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gamma0: Option<Complex>,
    },
    CorrelatedSwap {
        gamma: Complex,
    },
    Custom {
        qubits: usize,
        operators: Vec<OperatorSpec>,
    },
}

fn parse_preset_param(name: &str, rest: &str, key: &str) -> Result<usize, CliError> {
    rest.strip_prefix(key)
        .and_then(|v| v.strip_prefix('='))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| CliError::Input(format!("preset `{name}` expects `{key}=<count>`")))
}

impl ModelSpec {
    /// `pairwise:L=<n>`, `collective:n=<n>` or `correlated`.
    pub fn preset(name: &str) -> Option<Result<Self, CliError>> {
        let (head, rest) = name.split_once(':').unwrap_or((name, ""));
        let g = [PRESET_GAMMA, 0.0];
        let g0 = Some([PRESET_GAMMA0, 0.0]);
        match head {
            "pairwise" => Some(parse_preset_param(name, rest, "L").map(|pairs| ModelSpec::PairwiseCollective {
                pairs,
                gamma: Some(g),
                couplings: None,
                gamma0: g0,
            })),
            "collective" => Some(parse_preset_param(name, rest, "n").map(|qubits| ModelSpec::Collective {
                qubits,
                gamma_plus: g,
                gamma_minus: g,
                gamma_z: g,
                gamma0: g0,
            })),
            "correlated" if rest.is_empty() => Some(Ok(ModelSpec::CorrelatedSwap { gamma: [PRESET_SWAP_GAMMA, 0.0] })),
            _ => None,
        }
    }

    pub fn build(&self) -> Result<KrausFamily, CliError> {
        let with_identity = |family: KrausFamily, gamma0: &Option<Complex>| -> Result<KrausFamily, CliError> {
            match gamma0 {
                Some(g) => {
                    let id = OperatorMatrix::identity(family.n_qubits())?.scaled(cx(*g));
                    Ok(family.with_leading("A0", id)?)
                }
                None => Ok(family),
            }
        };
        match self {
            ModelSpec::Collective { qubits, gamma_plus, gamma_minus, gamma_z, gamma0 } => {
                let fam = build_collective_model(*qubits, cx(*gamma_plus), cx(*gamma_minus), cx(*gamma_z))?;
                with_identity(fam, gamma0)
            }
            ModelSpec::PairwiseCollective { pairs, gamma, couplings, gamma0 } => {
                let couplings: Vec<PairCouplings> = match (couplings, gamma) {
                    (Some(list), _) => list
                        .iter()
                        .map(|c| PairCouplings { plus: cx(c.plus), minus: cx(c.minus), z: cx(c.z) })
                        .collect(),
                    (None, Some(g)) => vec![PairCouplings::uniform(cx(*g)); *pairs],
                    (None, None) => {
                        return Err(CliError::Input("pairwise_collective needs `gamma` or `couplings`".into()))
                    }
                };
                with_identity(build_pairwise_model(*pairs, &couplings)?, gamma0)
            }
            ModelSpec::CorrelatedSwap { gamma } => Ok(build_correlated_swap_model(cx(*gamma))?),
            ModelSpec::Custom { qubits, operators } => {
                if operators.is_empty() {
                    return Err(CliError::Input("custom model has no operators".into()));
                }
                check_qubits(*qubits)?;
                let mut entries = Vec::with_capacity(operators.len());
                for spec in operators {
                    entries.push(build_operator(spec, *qubits)?);
                }
                Ok(KrausFamily::new(*qubits, entries)?)
            }
        }
    }
}

fn build_operator(spec: &OperatorSpec, n: usize) -> Result<(String, OperatorMatrix), CliError> {
    let label = &spec.label;
    match (&spec.terms, &spec.matrix) {
        (Some(terms), None) => {
            let mut sum = OperatorMatrix::zeros(n)?;
            for t in terms {
                let term = PauliTerm::new(cx(t.coeff), t.ops.iter().map(|f| (f.qubit, f.kind)))?;
                sum = &sum + &term.to_operator(n)?;
            }
            Ok((label.clone(), sum))
        }
        (None, Some(matrix)) => {
            let d = 1usize << n;
            if matrix.len() != d || matrix.iter().any(|row| row.len() != d) {
                return Err(CliError::Input(format!("operator `{label}` must be {d}x{d}")));
            }
            let m = CMatrix::from_fn(d, d, |i, j| cx(matrix[i][j]));
            Ok((label.clone(), OperatorMatrix::new(n, m)?))
        }
        _ => Err(CliError::Input(format!("operator `{label}` needs exactly one of `terms` or `matrix`"))),
    }
}

pub type KetSpec = BTreeMap<String, Complex>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BasisSpec {
    Builtin(String),
    Kets(Vec<KetSpec>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodeSpecFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qubits: Option<usize>,
    pub basis: BasisSpec,
}

/// A resolved code plus the notes produced while resolving it.
pub struct ResolvedCode {
    pub code: CodeSubspace,
    pub warnings: Vec<String>,
}

fn builtin_code(name: &str) -> Option<Result<CodeSubspace, CliError>> {
    let (head, rest) = name.split_once(':').unwrap_or((name, ""));
    match head {
        "four-qubit" if rest.is_empty() => Some(Ok(PairCode::four_qubit().subspace().expect("four-qubit code"))),
        "general-parity" => Some(
            parse_preset_param(name, rest, "L").and_then(|l| general_parity_code(l).map_err(CliError::from)),
        ),
        "correlated" if rest.is_empty() => Some(Ok(correlated_code())),
        _ => None,
    }
}

fn pair_code(name: &str) -> Result<PairCode, CliError> {
    let (head, rest) = name.split_once(':').unwrap_or((name, ""));
    match head {
        "four-qubit" if rest.is_empty() => Ok(PairCode::four_qubit()),
        "general-parity" => Ok(PairCode::general_parity(parse_preset_param(name, rest, "L")?)?),
        _ => Err(CliError::Input(format!(
            "simulate needs `four-qubit` or `general-parity:L=<n>`, got `{name}`"
        ))),
    }
}

pub fn parse_ket(spec: &KetSpec, n_qubits: usize) -> Result<StateVector, CliError> {
    let mut amps = vec![C64::new(0.0, 0.0); 1usize << n_qubits];
    for (bits, z) in spec {
        if bits.len() != n_qubits {
            return Err(CliError::Input(format!("ket label `{bits}` does not have {n_qubits} bits")));
        }
        amps[bits_to_index(bits)?] += cx(*z);
    }
    Ok(StateVector::new(n_qubits, amps)?)
}

pub fn ket_json(state: &StateVector) -> Value {
    let map: serde_json::Map<String, Value> = state
        .sparse_terms(KET_THRESHOLD)
        .into_iter()
        .map(|(bits, z)| (bits, json!(chopped(z))))
        .collect();
    Value::Object(map)
}

impl CodeSpecFile {
    pub fn preset(name: &str) -> Option<Self> {
        builtin_code(name).map(|_| Self { qubits: None, basis: BasisSpec::Builtin(name.to_string()) })
    }

    pub fn resolve(&self) -> Result<ResolvedCode, CliError> {
        match &self.basis {
            BasisSpec::Builtin(name) => {
                let code = builtin_code(name)
                    .ok_or_else(|| CliError::Input(format!("unknown built-in code `{name}`")))??;
                if let Some(q) = self.qubits {
                    if q != code.n_qubits() {
                        return Err(CliError::Input(format!(
                            "built-in code `{name}` has {} qubits, file declares {q}",
                            code.n_qubits()
                        )));
                    }
                }
                Ok(ResolvedCode { code, warnings: Vec::new() })
            }
            BasisSpec::Kets(kets) => {
                let n = self
                    .qubits
                    .ok_or_else(|| CliError::Input("`qubits` is required with an explicit basis".into()))?;
                if kets.is_empty() {
                    return Err(CliError::Input("code basis is empty".into()));
                }
                let raw = kets.iter().map(|k| parse_ket(k, n)).collect::<Result<Vec<_>, _>>()?;
                let space = orthonormalize(n, &raw, 1e-10)?;
                if space.dim() != raw.len() {
                    return Err(CliError::Input(format!(
                        "code basis is linearly dependent ({} vectors span dimension {})",
                        raw.len(),
                        space.dim()
                    )));
                }
                let adjustment = raw
                    .iter()
                    .zip(space.basis())
                    .map(|(r, b)| r.max_abs_diff(b))
                    .fold(0.0, f64::max);
                let mut warnings = Vec::new();
                if adjustment > 1e-8 {
                    warnings.push(format!("code basis orthonormalized (max entry change {adjustment:.3e})"));
                }
                Ok(ResolvedCode { code: CodeSubspace::from_subspace(space)?, warnings })
            }
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Core(e) => match e {
                Error::InvalidArgument(_) | Error::DimensionMismatch { .. } | Error::ResourceLimit { .. } => EXIT_INPUT,
                Error::NotPsd { .. }
                | Error::CompletionImpossible { .. }
                | Error::CanonicalizationImpossible { .. }
                | Error::IncompleteFamily { .. }
                | Error::OutsideCodeSpace { .. }
                | Error::UncorrectablePattern(_) => EXIT_PRECONDITION,
                Error::Numerical(_) => EXIT_NUMERICAL,
            },
        }
    }

    pub fn message(&self) -> String {
        match self {
            CliError::Input(m) => m.clone(),
            CliError::Core(e) => e.to_string(),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "qcav", version, about = "Verify, classify and simulate quantum error correcting and avoiding codes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Human-readable tables instead of JSON.
    #[arg(long, global = true)]
    pub pretty: bool,
    /// Omit the generation timestamp, for byte-reproducible reports.
    #[arg(long, global = true)]
    pub no_timestamp: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Correctability, Γ matrix and degeneracy class of a code under a model.
    Classify(ClassifyArgs),
    /// Maximal joint eigenspaces (error-avoiding subspaces) of a model.
    FindDfs(FindDfsArgs),
    /// Worst-case code fidelity, or the fidelity of a single state.
    Fidelity(FidelityArgs),
    /// Encode, inject or sample errors, measure syndromes and recover.
    Simulate(SimulateArgs),
    /// Randomized search for a correctable code of a given dimension.
    SearchCode(SearchArgs),
}

#[derive(Args, Debug)]
pub struct ClassifyArgs {
    /// Drop identity-proportional operators and append sqrt(I - Σ A†A).
    #[arg(long)]
    pub complete: bool,
    /// Model file or preset (pairwise:L=<n>, collective:n=<n>, correlated).
    #[arg(long)]
    pub model: String,
    /// Code file or built-in (four-qubit, general-parity:L=<n>, correlated).
    #[arg(long)]
    pub code: String,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    pub tol: f64,
}

#[derive(Args, Debug)]
pub struct FindDfsArgs {
    /// Drop identity-proportional operators and append sqrt(I - Σ A†A).
    #[arg(long)]
    pub complete: bool,
    #[arg(long)]
    pub model: String,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    pub tol: f64,
}

#[derive(Args, Debug)]
pub struct FidelityArgs {
    #[arg(long)]
    pub model: String,
    #[arg(long, conflicts_with = "state", required_unless_present = "state")]
    pub code: Option<String>,
    /// A ket: a bitstring, or a JSON object mapping bitstrings to [re, im].
    #[arg(long)]
    pub state: Option<String>,
    /// Drop identity-proportional operators and append sqrt(I - Σ A†A).
    #[arg(long)]
    pub complete: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 32)]
    pub starts: usize,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    pub tol: f64,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// four-qubit or general-parity:L=<n>.
    #[arg(long)]
    pub code: String,
    /// Defaults to the pairwise preset on the code's pairs.
    #[arg(long)]
    pub model: Option<String>,
    /// Error label to inject, e.g. A1+.
    #[arg(long, conflicts_with = "trials", required_unless_present = "trials")]
    pub inject: Option<String>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Logical input ket; a seeded random state when absent.
    #[arg(long)]
    pub input: Option<String>,
}

#[derive(Args, Debug)]
pub struct SearchArgs {
    /// Drop identity-proportional operators and append sqrt(I - Σ A†A).
    #[arg(long)]
    pub complete: bool,
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub dim: usize,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    pub tol: f64,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &str, what: &str) -> Result<T, CliError> {
    let text = std::fs::read_to_string(Path::new(path))
        .map_err(|e| CliError::Input(format!("cannot read {what} file `{path}`: {e}")))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{what} file `{path}`: {e}")))
}

pub fn load_model(arg: &str) -> Result<(ModelSpec, KrausFamily), CliError> {
    let spec = match ModelSpec::preset(arg) {
        Some(p) => p?,
        None => read_json(arg, "model")?,
    };
    let family = spec.build()?;
    Ok((spec, family))
}

pub fn load_code(arg: &str) -> Result<(CodeSpecFile, ResolvedCode), CliError> {
    let spec = match CodeSpecFile::preset(arg) {
        Some(p) => p,
        None => read_json(arg, "code")?,
    };
    let resolved = spec.resolve()?;
    Ok((spec, resolved))
}

fn parse_state_arg(arg: &str, n_qubits: usize) -> Result<StateVector, CliError> {
    let trimmed = arg.trim();
    if trimmed.starts_with('{') {
        let spec: KetSpec =
            serde_json::from_str(trimmed).map_err(|e| CliError::Input(format!("state: {e}")))?;
        parse_ket(&spec, n_qubits)
    } else {
        if trimmed.len() != n_qubits {
            return Err(CliError::Input(format!("state `{trimmed}` does not have {n_qubits} bits")));
        }
        Ok(StateVector::from_bits(trimmed)?)
    }
}

fn check_same_qubits(family: &KrausFamily, n: usize) -> Result<(), CliError> {
    if family.n_qubits() != n {
        return Err(CliError::Input(format!(
            "model acts on {} qubits but the code lives on {n}",
            family.n_qubits()
        )));
    }
    Ok(())
}

/// Identity-proportional operators are dropped before completing: the
/// completion must absorb them anyway.
fn completed(family: &KrausFamily, tol: f64) -> Result<KrausFamily, CliError> {
    Ok(complete_family(&family.errors_only(tol))?)
}

fn labelled(labels: &[String], values: &[C64]) -> Value {
    let map: serde_json::Map<String, Value> =
        labels.iter().zip(values).map(|(l, z)| (l.clone(), json!(chopped(*z)))).collect();
    Value::Object(map)
}

fn matrix_json(m: &CMatrix) -> Value {
    Value::Array(
        (0..m.nrows())
            .map(|i| Value::Array((0..m.ncols()).map(|j| json!(to_pair(m[(i, j)]))).collect()))
            .collect(),
    )
}

fn pattern_string(p: &[i8]) -> String {
    p.iter()
        .map(|v| if *v > 0 { format!("+{v}") } else { v.to_string() })
        .collect::<Vec<_>>()
        .join(",")
}

fn maybe_completed(family: KrausFamily, complete: bool, tol: f64) -> Result<KrausFamily, CliError> {
    if complete {
        completed(&family, tol)
    } else {
        Ok(family)
    }
}

fn cmd_classify(a: &ClassifyArgs) -> Result<(Value, Value), CliError> {
    let (model, family) = load_model(&a.model)?;
    let family = maybe_completed(family, a.complete, a.tol)?;
    let (code_spec, resolved) = load_code(&a.code)?;
    check_same_qubits(&family, resolved.code.n_qubits())?;
    let cls = classify(&resolved.code, &family, a.tol)?;
    let factorized = qeac_factorization(&resolved.code, &family, a.tol).is_some();
    let config = json!({ "model": model, "code": code_spec, "complete": a.complete, "tol": a.tol });
    let result = json!({
        "qubits": family.n_qubits(),
        "code_dim": resolved.code.dim(),
        "labels": family.labels(),
        "kl_satisfied": cls.gamma.kl_satisfied,
        "violation": cls.gamma.violation,
        "gamma": matrix_json(&cls.gamma.entries),
        "eigenvalues": cls.gamma.eigenvalues,
        "rank": cls.gamma.rank,
        "classification": cls.kind.as_str(),
        "qeac_eigenvalues": cls.qeac_eigenvalues.as_ref().map(|g| labelled(family.labels(), g)),
        "factorized_gamma": factorized,
        "warnings": resolved.warnings,
    });
    Ok((config, result))
}

fn cmd_find_dfs(a: &FindDfsArgs) -> Result<(Value, Value), CliError> {
    let (model, family) = load_model(&a.model)?;
    let family = maybe_completed(family, a.complete, a.tol)?;
    let n = family.n_qubits();
    let spaces = find_joint_eigenspace(family.operators(), a.tol)?;
    let listed: Vec<Value> = spaces
        .iter()
        .map(|s| {
            json!({
                "dim": s.subspace.dim(),
                "eigenvalues": labelled(family.labels(), &s.eigenvalues),
                "efficiency": efficiency(s.subspace.dim(), n).ok(),
                "basis": s.subspace.basis().iter().map(|v| ket_json(&v.with_canonical_phase())).collect::<Vec<_>>(),
            })
        })
        .collect();
    let max_dim = spaces.first().map_or(0, |s| s.subspace.dim());
    let config = json!({ "model": model, "complete": a.complete, "tol": a.tol });
    let result = json!({
        "qubits": n,
        "max_dim": max_dim,
        "efficiency": efficiency(max_dim, n).ok(),
        "spaces": listed,
    });
    Ok((config, result))
}

fn cmd_fidelity(a: &FidelityArgs) -> Result<(Value, Value), CliError> {
    let (model, raw) = load_model(&a.model)?;
    let family = if a.complete { completed(&raw, a.tol)? } else { raw };
    if !family.is_complete() {
        return Err(Error::IncompleteFamily { residual: family.completeness_residual() }.into());
    }
    let n = family.n_qubits();
    let mut config = json!({ "model": model, "complete": a.complete, "tol": a.tol, "seed": a.seed, "starts": a.starts });
    let result = match (&a.code, &a.state) {
        (Some(code_arg), _) => {
            let (code_spec, resolved) = load_code(code_arg)?;
            check_same_qubits(&family, resolved.code.n_qubits())?;
            config["code"] = json!(code_spec);
            let opts = FidelityOptions { random_starts: a.starts, seed: a.seed, ..FidelityOptions::default() };
            let res = code_fidelity(&family, &resolved.code, &opts)?;
            json!({
                "mode": "code",
                "labels": family.labels(),
                "fidelity": res.value,
                "argmin": ket_json(&res.argmin),
                "iterations": res.iterations,
                "converged": res.converged,
                "warnings": resolved.warnings,
            })
        }
        (None, Some(state_arg)) => {
            let psi = parse_state_arg(state_arg, n)?;
            config["state"] = json!(state_arg);
            json!({
                "mode": "state",
                "labels": family.labels(),
                "fidelity": state_fidelity(&family, &psi)?,
                "state": ket_json(&psi.normalized()?),
            })
        }
        (None, None) => return Err(CliError::Input("give --code or --state".into())),
    };
    Ok((config, result))
}

fn cmd_simulate(a: &SimulateArgs) -> Result<(Value, Value), CliError> {
    let code = pair_code(&a.code)?;
    let model_arg = a.model.clone().unwrap_or_else(|| format!("pairwise:L={}", code.pairs()));
    let (model, raw) = load_model(&model_arg)?;
    check_same_qubits(&raw, code.n_qubits())?;
    let input = match &a.input {
        Some(s) => parse_state_arg(s, code.logical_qubits())?.normalized()?,
        None => {
            let v = random_unit_vector(1usize << code.logical_qubits(), &mut rng_from_seed(a.seed));
            StateVector::from_vector(code.logical_qubits(), v)?
        }
    };
    let mut config = json!({
        "code": a.code,
        "model": model,
        "seed": a.seed,
        "input": ket_json(&input),
    });
    let result = if let Some(label) = &a.inject {
        config["inject"] = json!(label);
        let op = raw
            .get(label)
            .ok_or_else(|| CliError::Input(format!("model has no operator `{label}` (have {:?})", raw.labels())))?;
        let rep = roundtrip_inject(&code, &input, label, Some(op), a.seed)?;
        json!({
            "mode": "inject",
            "injected_error": rep.injected_error,
            "zero_amplitude": rep.zero_amplitude,
            "note": rep.zero_amplitude.then_some("error has zero amplitude on code"),
            "syndrome": rep.syndrome.outcomes,
            "recovery": rep.recovery.gates.iter().map(ToString::to_string).collect::<Vec<_>>(),
            "logical_fidelity": rep.logical_fidelity,
            "success": rep.success,
        })
    } else {
        let trials = a.trials.unwrap_or(0);
        config["trials"] = json!(trials);
        let tol = DEFAULT_TOL;
        let family = completed(&raw, tol)?;
        let mc = roundtrip_monte_carlo(&code, &input, &family, trials, a.seed)?;
        let exact = exact_recovered_fidelity(&code, &input, &family)?;
        let mut circuits = serde_json::Map::new();
        let mut distribution = serde_json::Map::new();
        for (pattern, count) in &mc.syndromes {
            let key = pattern_string(pattern);
            distribution.insert(key.clone(), json!(count));
            let gates = match code.recovery(pattern) {
                Ok(c) => json!(c.gates.iter().map(ToString::to_string).collect::<Vec<_>>()),
                Err(_) => json!("uncorrectable"),
            };
            circuits.insert(key, gates);
        }
        let deviation = if mc.standard_error > 0.0 { (mc.mean_fidelity - exact) / mc.standard_error } else { 0.0 };
        json!({
            "mode": "monte-carlo",
            "labels": family.labels(),
            "trials": mc.trials,
            "mean_fidelity": mc.mean_fidelity,
            "standard_error": mc.standard_error,
            "exact_fidelity": exact,
            "deviation_in_standard_errors": deviation,
            "uncorrectable": mc.uncorrectable,
            "syndrome_distribution": distribution,
            "recovery_circuits": circuits,
            "per_outcome": mc.per_outcome,
        })
    };
    Ok((config, result))
}

fn cmd_search(a: &SearchArgs) -> Result<(Value, Value), CliError> {
    let (model, family) = load_model(&a.model)?;
    let family = maybe_completed(family, a.complete, a.tol)?;
    let rep = search_random_code(&family, a.dim, a.trials, a.seed, a.tol)?;
    let config = json!({
        "model": model,
        "complete": a.complete,
        "dim": a.dim,
        "trials": a.trials,
        "seed": a.seed,
        "tol": a.tol,
    });
    let basis = rep
        .found
        .as_ref()
        .map(|c| c.basis().iter().map(|v| ket_json(&v.with_canonical_phase())).collect::<Vec<_>>());
    let kind = match &rep.found {
        Some(code) => Some(classify(code, &family, a.tol.max(1e-8))?.kind.as_str()),
        None => None,
    };
    let result = json!({
        "found": rep.found.is_some(),
        "trial": rep.trial,
        "trials_run": rep.trials_run,
        "best_residual": rep.best_residual,
        "classification": kind,
        "basis": basis,
    });
    Ok((config, result))
}

/// Runs the CLI on `args`, writing the report to `out` and diagnostics to `err`; returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = if code == EXIT_OK { write!(out, "{e}") } else { write!(err, "{e}") };
            return code;
        }
    };
    let (name, outcome) = match &cli.command {
        Command::Classify(a) => ("classify", cmd_classify(a)),
        Command::FindDfs(a) => ("find-dfs", cmd_find_dfs(a)),
        Command::Fidelity(a) => ("fidelity", cmd_fidelity(a)),
        Command::Simulate(a) => ("simulate", cmd_simulate(a)),
        Command::SearchCode(a) => ("search-code", cmd_search(a)),
    };
    match outcome {
        Ok((config, result)) => {
            let mut report = json!({ "command": name, "config": config, "result": result });
            if !cli.no_timestamp {
                let secs = std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0);
                report["generated_unix"] = json!(secs);
            }
            let text = if cli.pretty {
                render_pretty(&report)
            } else {
                serde_json::to_string(&report).expect("report serializes") + "\n"
            };
            if out.write_all(text.as_bytes()).is_err() {
                return EXIT_NUMERICAL;
            }
            EXIT_OK
        }
        Err(e) => {
            let _ = writeln!(err, "qcav {name}: {}", e.message());
            e.exit_code()
        }
    }
}

fn is_complex(v: &Value) -> bool {
    matches!(v, Value::Array(a) if a.len() == 2 && a.iter().all(Value::is_f64))
}

fn scalar(v: &Value) -> String {
    match v {
        Value::Null => "-".into(),
        Value::String(s) => s.clone(),
        Value::Array(a) if is_complex(v) => {
            let (re, im) = (a[0].as_f64().unwrap_or(0.0), a[1].as_f64().unwrap_or(0.0));
            if im == 0.0 {
                format!("{re:.6}")
            } else {
                format!("{re:.6}{:+.6}i", im)
            }
        }
        Value::Array(a) => a.iter().map(scalar).collect::<Vec<_>>().join("  "),
        Value::Object(m) => m
            .iter()
            .map(|(k, v)| format!("{k}: {}", scalar(v)))
            .collect::<Vec<_>>()
            .join(", "),
        other => other.to_string(),
    }
}

fn is_flat(v: &Value) -> bool {
    match v {
        Value::Array(a) => is_complex(v) || a.iter().all(|x| !x.is_array() && !x.is_object() || is_complex(x)),
        Value::Object(m) => m.values().all(|x| !x.is_array() && !x.is_object() || is_complex(x)),
        _ => true,
    }
}

fn render_into(buf: &mut String, key: &str, v: &Value, depth: usize) {
    let pad = "  ".repeat(depth);
    if is_flat(v) {
        let _ = writeln!(buf, "{pad}{key}: {}", scalar(v));
        return;
    }
    let _ = writeln!(buf, "{pad}{key}:");
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                render_into(buf, k, x, depth + 1);
            }
        }
        Value::Array(rows) => {
            for (i, x) in rows.iter().enumerate() {
                if is_flat(x) {
                    let _ = writeln!(buf, "{pad}  {}", scalar(x));
                } else {
                    render_into(buf, &format!("[{i}]"), x, depth + 1);
                }
            }
        }
        _ => {}
    }
}

fn render_pretty(report: &Value) -> String {
    let mut buf = String::new();
    if let Value::Object(m) = report {
        for (k, v) in m {
            render_into(&mut buf, k, v, 0);
        }
    }
    buf
}
