//! Reproducible experiment drivers behind the command-line tool.
//!
//! Every driver takes a serializable configuration plus the shared
//! [`RunSettings`], writes its artifacts into an output directory and
//! returns a report. CSV files start with `# key=value` metadata lines and
//! JSON files carry a `header` object; both record the tool version, a
//! SHA-256 hash of the configuration and the seed. Nothing that depends on
//! wall-clock time is written to disk.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coefficients::{
    learn_coefficients_with, select_probes_with, CoefficientEstimate, CoefficientOptions,
    ParameterIndex, SelectionOptions,
};
use crate::error::{Error, Result};
use crate::evolution::{Accuracy, Backend, ChannelOracle, ProbeInput, QueryCounts};
use crate::lowerbound::{
    min_anticommuting, mixing_certificate, n_anticommuting_closed_form, n_star, t0_kappa,
    BalancedPauliSet, MixingCertificate, ProductState, Variant,
};
use crate::model::Lindbladian;
use crate::pauli::PauliString;
use crate::spam::{wrap_oracle, SpamParams};
use crate::structure::{
    learn_dissipator_with, learn_hamiltonian_with, LambdaSource, StructureResult,
};

pub const TOOL_NAME: &str = "lindblad-learn";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Settings shared by every command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub seed: u64,
    /// `exact`, `noise`, `noise:EPS` or `sampled:SHOTS`.
    pub backend: String,
    /// Known SPAM retentions `rP,rM`.
    pub spam: Option<String>,
    pub out: PathBuf,
}

impl RunSettings {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        RunSettings {
            seed: 0,
            backend: "exact".into(),
            spam: None,
            out: out.into(),
        }
    }

    pub fn backend(&self) -> Result<Backend> {
        Backend::parse(&self.backend, self.seed)
    }

    pub fn spam(&self) -> Result<Option<SpamParams>> {
        self.spam.as_deref().map(SpamParams::parse).transpose()
    }

    /// Oracle over `model` with the configured backend and SPAM.
    pub fn oracle(&self, model: Lindbladian) -> Result<ChannelOracle> {
        let base = ChannelOracle::new(model, self.backend()?);
        Ok(match self.spam()? {
            Some(s) => wrap_oracle(&base, s),
            None => base,
        })
    }
}

/// Metadata written at the top of every artifact.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Header {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Serialize)]
struct HashInput<'a, C: Serialize> {
    command: &'a str,
    backend: &'a str,
    spam: &'a Option<String>,
    seed: u64,
    config: &'a C,
}

/// SHA-256 of the canonical JSON form of a command configuration.
pub fn config_hash<C: Serialize>(
    command: &str,
    settings: &RunSettings,
    config: &C,
) -> Result<String> {
    let json = serde_json::to_vec(&HashInput {
        command,
        backend: &settings.backend,
        spam: &settings.spam,
        seed: settings.seed,
        config,
    })?;
    Ok(Sha256::digest(&json)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

fn header<C: Serialize>(
    command: &'static str,
    settings: &RunSettings,
    config: &C,
) -> Result<Header> {
    Ok(Header {
        tool: TOOL_NAME,
        version: VERSION,
        command,
        config_hash: config_hash(command, settings, config)?,
        seed: settings.seed,
    })
}

#[derive(Serialize)]
struct JsonArtifact<'a, C: Serialize, R: Serialize> {
    header: &'a Header,
    config: &'a C,
    result: &'a R,
}

fn write_json<C: Serialize, R: Serialize>(
    path: &Path,
    header: &Header,
    config: &C,
    result: &R,
) -> Result<()> {
    let mut text = serde_json::to_string_pretty(&JsonArtifact {
        header,
        config,
        result,
    })?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_csv<R: Serialize>(path: &Path, header: &Header, rows: &[R]) -> Result<()> {
    let mut buf = format!(
        "# tool={}\n# version={}\n# command={}\n# config_hash={}\n# seed={}\n",
        header.tool, header.version, header.command, header.config_hash, header.seed
    )
    .into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    fs::write(path, buf)?;
    Ok(())
}

fn prepare_out(settings: &RunSettings) -> Result<()> {
    fs::create_dir_all(&settings.out)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Lindbladian> {
    Lindbladian::from_json(&fs::read_to_string(path)?)
}

fn paulis_from_strings(v: &[String]) -> Result<Vec<PauliString>> {
    v.iter().map(|s| s.parse()).collect()
}

fn counts_sum(a: QueryCounts, b: QueryCounts) -> QueryCounts {
    QueryCounts {
        chi_queries: a.chi_queries + b.chi_queries,
        expectation_queries: a.expectation_queries + b.expectation_queries,
        shots: a.shots + b.shots,
    }
}

// ---------------------------------------------------------------- simulate

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub model: PathBuf,
    pub times: Vec<f64>,
    /// Probes as `(input, observable)`; inputs are `P:<pauli>` for a Pauli
    /// input or `+<pauli>` / `-<pauli>` for an eigenstate.
    #[serde(default)]
    pub probes: Vec<(String, String)>,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_eps() -> f64 {
    0.01
}

fn default_delta() -> f64 {
    0.05
}

/// Parse `P:<pauli>`, `+<pauli>` or `-<pauli>`.
pub fn parse_probe_input(s: &str) -> Result<ProbeInput> {
    if let Some(rest) = s.strip_prefix("P:") {
        Ok(ProbeInput::pauli(rest.parse()?))
    } else if let Some(rest) = s.strip_prefix('+') {
        Ok(ProbeInput::eigenstate(rest.parse()?, 1))
    } else if let Some(rest) = s.strip_prefix('-') {
        Ok(ProbeInput::eigenstate(rest.parse()?, -1))
    } else {
        Err(Error::InvalidArgument(format!(
            "probe input {s:?} must look like P:XZ, +XZ or -XZ"
        )))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SimulateRow {
    pub t: f64,
    pub kind: &'static str,
    pub input: String,
    pub observable: String,
    pub value: f64,
}

pub fn cmd_simulate(cfg: &SimulateConfig, settings: &RunSettings) -> Result<Vec<SimulateRow>> {
    prepare_out(settings)?;
    let oracle = settings.oracle(load_model(&cfg.model)?)?;
    let acc = Accuracy::new(cfg.eps, cfg.delta)?;
    let probes: Vec<(ProbeInput, PauliString)> = cfg
        .probes
        .iter()
        .map(|(i, o)| Ok((parse_probe_input(i)?, o.parse()?)))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for &t in &cfg.times {
        let chi = oracle.chi_rates(t, acc)?;
        for (p, v) in &chi.entries {
            rows.push(SimulateRow {
                t,
                kind: "chi",
                input: String::new(),
                observable: p.to_string(),
                value: *v,
            });
        }
        for (input, o) in &probes {
            let value = oracle.expectation(input, o, t, acc)?;
            rows.push(SimulateRow {
                t,
                kind: "expectation",
                input: describe_input(input),
                observable: o.to_string(),
                value,
            });
        }
    }
    let h = header("simulate", settings, cfg)?;
    write_csv(&settings.out.join("simulate.csv"), &h, &rows)?;
    Ok(rows)
}

fn describe_input(input: &ProbeInput) -> String {
    match input {
        ProbeInput::PauliInput { q } => format!("P:{q}"),
        ProbeInput::Eigenstate { q, sign } => format!("{}{q}", if *sign > 0 { '+' } else { '-' }),
    }
}

// ---------------------------------------------------------------- structure

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureConfig {
    pub model: PathBuf,
    pub eta: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Sparsity bound `M`; defaults to the model's own sparsity.
    #[serde(default)]
    pub m: Option<usize>,
    /// Smoothness scale; defaults to the bound computed from the model.
    #[serde(default)]
    pub lambda: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct StructureReport {
    pub s_d_hat: Vec<PauliString>,
    pub s_h_hat: Vec<PauliString>,
    pub s_d_true: Vec<PauliString>,
    pub s_h_true: Vec<PauliString>,
    pub dissipator_exact: bool,
    pub hamiltonian_covered: bool,
    pub lambda: f64,
    pub nodes: usize,
    pub eps_s: f64,
    pub queries: QueryCounts,
}

fn lambda_source(v: Option<f64>) -> LambdaSource {
    v.map_or(LambdaSource::Model, LambdaSource::Value)
}

fn run_structure(oracle: &ChannelOracle, cfg: &StructureConfig) -> Result<StructureResult> {
    let m = cfg.m.unwrap_or_else(|| oracle.model().sparsity().m.max(1));
    learn_hamiltonian_with(oracle, m, cfg.eta, cfg.delta, lambda_source(cfg.lambda))
}

fn structure_report(model: &Lindbladian, r: &StructureResult) -> StructureReport {
    let s_d_true = model.dissipator_structure();
    let s_h_true = model.hamiltonian_structure();
    let hat: BTreeSet<PauliString> = r.s_h_hat.iter().copied().collect();
    StructureReport {
        dissipator_exact: r.s_d_hat == s_d_true,
        hamiltonian_covered: s_h_true.iter().all(|p| hat.contains(p)),
        s_d_hat: r.s_d_hat.clone(),
        s_h_hat: r.s_h_hat.clone(),
        s_d_true,
        s_h_true,
        lambda: r.lambda,
        nodes: r.schedule.nodes.len(),
        eps_s: r.schedule.eps_s,
        queries: r.queries_used,
    }
}

pub fn cmd_learn_structure(
    cfg: &StructureConfig,
    settings: &RunSettings,
) -> Result<StructureReport> {
    prepare_out(settings)?;
    let model = load_model(&cfg.model)?;
    let oracle = settings.oracle(model.clone())?;
    let result = run_structure(&oracle, cfg)?;
    let report = structure_report(&model, &result);
    write_json(
        &settings.out.join("structure.json"),
        &header("learn-structure", settings, cfg)?,
        cfg,
        &report,
    )?;
    Ok(report)
}

/// Dissipator-only structure learning.
pub fn learn_dissipator_report(
    model: &Lindbladian,
    settings: &RunSettings,
    eta: f64,
    delta: f64,
) -> Result<StructureReport> {
    let oracle = settings.oracle(model.clone())?;
    let r = learn_dissipator_with(
        &oracle,
        model.sparsity().m.max(1),
        eta,
        delta,
        LambdaSource::Model,
    )?;
    Ok(structure_report(model, &r))
}

// ------------------------------------------------------------ coefficients

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientConfig {
    pub model: PathBuf,
    /// Candidate Hamiltonian terms; defaults to the model's true structure.
    #[serde(default)]
    pub s_h: Option<Vec<String>>,
    /// Candidate dissipator terms; defaults to the model's true structure.
    #[serde(default)]
    pub s_d: Option<Vec<String>>,
    pub eps: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_mode")]
    pub mode: String,
}

fn default_mode() -> String {
    "probe".into()
}

#[derive(Clone, Debug, Serialize)]
pub struct CoefficientReport {
    pub estimate: CoefficientEstimate,
    pub max_error: f64,
    pub m_hat: usize,
}

fn coefficient_options(
    eps: f64,
    delta: f64,
    mode: &str,
    settings: &RunSettings,
) -> Result<CoefficientOptions> {
    let mut o = CoefficientOptions::new(eps, delta);
    o.mode = mode.parse()?;
    o.spam = settings.spam()?;
    o.selection.seed = settings.seed;
    Ok(o)
}

pub fn cmd_learn_coefficients(
    cfg: &CoefficientConfig,
    settings: &RunSettings,
) -> Result<CoefficientReport> {
    prepare_out(settings)?;
    let model = load_model(&cfg.model)?;
    let s_h = match &cfg.s_h {
        Some(v) => paulis_from_strings(v)?,
        None => model.hamiltonian_structure(),
    };
    let s_d = match &cfg.s_d {
        Some(v) => paulis_from_strings(v)?,
        None => model.dissipator_structure(),
    };
    let oracle = settings.oracle(model.clone())?;
    let index = ParameterIndex::full(&s_h, &s_d)?;
    let estimate = learn_coefficients_with(
        &oracle,
        &index,
        &coefficient_options(cfg.eps, cfg.delta, &cfg.mode, settings)?,
    )?;
    let report = CoefficientReport {
        max_error: estimate.max_error(&model),
        m_hat: index.dim(),
        estimate,
    };
    write_json(
        &settings.out.join("coefficients.json"),
        &header("learn-coefficients", settings, cfg)?,
        cfg,
        &report,
    )?;
    Ok(report)
}

// -------------------------------------------------------------- end to end

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndToEndConfig {
    pub model: PathBuf,
    pub eta: f64,
    pub eps: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub m: Option<usize>,
    #[serde(default = "default_mode")]
    pub mode: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct EndToEndReport {
    pub structure: StructureReport,
    pub m_hat: usize,
    pub nu: f64,
    /// Largest coefficient error before and after pruning at `η/2`.
    pub max_error_raw: f64,
    pub max_error: f64,
    pub false_positives_raw: usize,
    pub false_positives: usize,
    pub h_hat: BTreeMap<PauliString, f64>,
    pub a_diag_hat: BTreeMap<PauliString, f64>,
    pub structure_queries: QueryCounts,
    pub coefficient_queries: QueryCounts,
    pub total_queries: QueryCounts,
}

/// Structure learning followed by coefficient learning on the learned
/// candidates, then pruning of every coefficient below `η/2`.
pub fn end_to_end(
    model: &Lindbladian,
    cfg: &EndToEndConfig,
    settings: &RunSettings,
) -> Result<EndToEndReport> {
    let oracle = settings.oracle(model.clone())?;
    let scfg = StructureConfig {
        model: cfg.model.clone(),
        eta: cfg.eta,
        delta: cfg.delta / 2.0,
        m: cfg.m,
        lambda: None,
    };
    let sres = run_structure(&oracle, &scfg)?;
    let structure = structure_report(model, &sres);
    let index = ParameterIndex::full(&sres.s_h_hat, &sres.s_d_hat)?;
    let opts = coefficient_options(cfg.eps, cfg.delta / 2.0, &cfg.mode, settings)?;
    let est = learn_coefficients_with(&oracle, &index, &opts)?;
    let max_error_raw = est.max_error(model);

    let threshold = cfg.eta / 2.0;
    let true_h: BTreeSet<PauliString> = model.hamiltonian_structure().into_iter().collect();
    let true_d: BTreeSet<PauliString> = model.dissipator_structure().into_iter().collect();
    let is_fp_h = |p: &PauliString, v: f64, cut: f64| v.abs() >= cut && !true_h.contains(p);
    let diag: Vec<(PauliString, f64)> = est
        .diss_support
        .iter()
        .map(|p| (*p, est.a(p, p).re))
        .collect();
    let is_fp_d = |p: &PauliString, v: f64, cut: f64| v.abs() >= cut && !true_d.contains(p);
    let fp = |cut: f64| {
        est.h_hat
            .iter()
            .filter(|(p, v)| is_fp_h(p, **v, cut))
            .count()
            + diag.iter().filter(|(p, v)| is_fp_d(p, *v, cut)).count()
    };
    let false_positives_raw = fp(f64::MIN_POSITIVE);
    let false_positives = fp(threshold);

    let h_hat: BTreeMap<PauliString, f64> = est
        .h_hat
        .iter()
        .filter(|(_, v)| v.abs() >= threshold)
        .map(|(p, v)| (*p, *v))
        .collect();
    let keep: Vec<usize> = (0..diag.len())
        .filter(|&i| diag[i].1 >= threshold)
        .collect();
    let support: Vec<PauliString> = keep.iter().map(|&i| est.diss_support[i]).collect();
    let a_diag_hat: BTreeMap<PauliString, f64> = keep.iter().map(|&i| diag[i]).collect();
    let mut max_error = 0.0f64;
    let mut all_h: BTreeSet<PauliString> = h_hat.keys().copied().collect();
    all_h.extend(model.hamiltonian().keys().copied());
    for p in &all_h {
        max_error = max_error.max((h_hat.get(p).copied().unwrap_or(0.0) - model.h(p)).abs());
    }
    let mut all_d: BTreeSet<PauliString> = support.iter().copied().collect();
    all_d.extend(model.diss_support().iter().copied());
    let pruned_a = |p: &PauliString, q: &PauliString| {
        if support.contains(p) && support.contains(q) {
            est.a(p, q)
        } else {
            num_complex::Complex64::new(0.0, 0.0)
        }
    };
    for p in &all_d {
        for q in &all_d {
            max_error = max_error.max((pruned_a(p, q) - model.a(p, q)).norm());
        }
    }
    Ok(EndToEndReport {
        m_hat: index.dim(),
        nu: est.nu,
        max_error_raw,
        max_error,
        false_positives_raw,
        false_positives,
        h_hat,
        a_diag_hat,
        structure_queries: structure.queries,
        coefficient_queries: est.queries_used,
        total_queries: counts_sum(structure.queries, est.queries_used),
        structure,
    })
}

pub fn cmd_end_to_end(cfg: &EndToEndConfig, settings: &RunSettings) -> Result<EndToEndReport> {
    prepare_out(settings)?;
    let model = load_model(&cfg.model)?;
    let report = end_to_end(&model, cfg, settings)?;
    write_json(
        &settings.out.join("end_to_end.json"),
        &header("end-to-end", settings, cfg)?,
        cfg,
        &report,
    )?;
    Ok(report)
}

// ----------------------------------------------------------------- lattice

/// Candidate structures on a periodic `lx × ly` lattice.
#[derive(Clone, Debug)]
pub struct LatticeFamily {
    pub lx: usize,
    pub ly: usize,
    /// Unordered site pairs at distance one, diagonal neighbours and
    /// distance two along an axis.
    pub pairs: Vec<(usize, usize)>,
    pub s_h: Vec<PauliString>,
    pub s_d: Vec<PauliString>,
    /// Off-diagonal dissipator pairs among the single-qubit candidates.
    pub diss_pairs: Vec<(PauliString, PauliString)>,
}

impl LatticeFamily {
    pub fn n(&self) -> usize {
        self.lx * self.ly
    }

    pub fn index(&self) -> Result<ParameterIndex> {
        ParameterIndex::with_pairs(&self.s_h, &self.s_d, &self.diss_pairs)
    }
}

/// Lattice shape used for `n` sites in the sweep.
pub fn lattice_dims(n: usize) -> Result<(usize, usize)> {
    match n {
        4 => Ok((2, 2)),
        6 => Ok((2, 3)),
        9 => Ok((3, 3)),
        12 => Ok((3, 4)),
        _ => {
            // Most square factorization with both sides at least 2.
            let lx = (2..=((n as f64).sqrt() as usize))
                .rev()
                .find(|d| n.is_multiple_of(*d));
            lx.map(|lx| (lx, n / lx)).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "{n} sites do not form an lx × ly lattice with lx, ly ≥ 2"
                ))
            })
        }
    }
}

fn lattice_pairs(lx: usize, ly: usize) -> Vec<(usize, usize)> {
    let site = |x: usize, y: usize| (y % ly) * lx + (x % lx);
    let offsets: [(usize, usize); 6] = [(1, 0), (0, 1), (1, 1), (1, ly - 1), (2, 0), (0, 2)];
    let mut set = BTreeSet::new();
    for y in 0..ly {
        for x in 0..lx {
            let a = site(x, y);
            for &(dx, dy) in &offsets {
                let b = site(x + dx, y + dy);
                if a != b {
                    set.insert((a.min(b), a.max(b)));
                }
            }
        }
    }
    set.into_iter().collect()
}

fn random_local<R: Rng>(n: usize, k: usize, rng: &mut R) -> Result<PauliString> {
    let mut sites: Vec<usize> = (0..n).collect();
    sites.shuffle(rng);
    let (mut x, mut z) = (0u64, 0u64);
    for &q in &sites[..k] {
        match rng.random_range(0..3u8) {
            0 => x |= 1 << q,
            1 => {
                x |= 1 << q;
                z |= 1 << q;
            }
            _ => z |= 1 << q,
        }
    }
    PauliString::new(n, x, z)
}

const LETTERS: [char; 3] = ['X', 'Y', 'Z'];

/// Build the lattice candidate family for `n` sites. Random 3- and 4-local
/// Hamiltonian terms (about `50 n / 42` and `10 n / 42` of them) depend on `seed`.
pub fn lattice_family(n: usize, seed: u64) -> Result<LatticeFamily> {
    let (lx, ly) = lattice_dims(n)?;
    let pairs = lattice_pairs(lx, ly);
    let singles: Vec<PauliString> = (0..n)
        .flat_map(|q| LETTERS.iter().map(move |&c| (q, c)))
        .map(|(q, c)| PauliString::single(n, q, c))
        .collect::<Result<_>>()?;
    let mut two = Vec::new();
    for &(a, b) in &pairs {
        for &ca in &LETTERS {
            for &cb in &LETTERS {
                let pa = PauliString::single(n, a, ca)?;
                let pb = PauliString::single(n, b, cb)?;
                two.push(PauliString::new(
                    n,
                    pa.x_bits() | pb.x_bits(),
                    pa.z_bits() | pb.z_bits(),
                )?);
            }
        }
    }
    let mut s_d: BTreeSet<PauliString> = singles.iter().copied().collect();
    s_d.extend(two.iter().copied());
    let mut s_h = s_d.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (k, count) in [
        (3usize, (50.0 * n as f64 / 42.0).round() as usize),
        (4, (10.0 * n as f64 / 42.0).round() as usize),
    ] {
        if k > n {
            continue;
        }
        let mut added = 0;
        while added < count {
            if s_h.insert(random_local(n, k, &mut rng)?) {
                added += 1;
            }
        }
    }
    let mut diss_pairs = Vec::new();
    for (i, a) in singles.iter().enumerate() {
        for b in &singles[..i] {
            diss_pairs.push((*a, *b));
        }
    }
    Ok(LatticeFamily {
        lx,
        ly,
        pairs,
        s_h: s_h.into_iter().collect(),
        s_d: s_d.into_iter().collect(),
        diss_pairs,
    })
}

// ----------------------------------------------------------- condition sweep

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    #[serde(default = "default_sizes")]
    pub sizes: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
}

fn default_sizes() -> Vec<usize> {
    vec![4, 6, 9, 12]
}

fn default_seeds() -> usize {
    16
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            sizes: default_sizes(),
            seeds: default_seeds(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub n: usize,
    pub lx: usize,
    pub ly: usize,
    pub seed: u64,
    pub m_hat: usize,
    pub patches: usize,
    pub dual_degree: usize,
    pub probes: usize,
    pub attempts: usize,
    pub prepass_rank: usize,
    pub full_rank: bool,
    pub nu: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub n: usize,
    pub seed: u64,
    pub attempts: usize,
    pub rank: usize,
}

/// Probe-selection statistics for one lattice size and seed.
pub fn sweep_one(n: usize, seed: u64) -> Result<(SweepRow, Vec<TraceRow>)> {
    let fam = lattice_family(n, seed)?;
    let index = fam.index()?;
    let design = select_probes_with(
        &index,
        SelectionOptions {
            seed,
            ..SelectionOptions::default()
        },
    )?;
    let row = SweepRow {
        n,
        lx: fam.lx,
        ly: fam.ly,
        seed,
        m_hat: index.dim(),
        patches: index.patch_family().len(),
        dual_degree: index.dual_degree(),
        probes: design.probes.len(),
        attempts: design.attempts,
        prepass_rank: design.prepass_rank_gain,
        full_rank: design.probes.len() == index.dim(),
        nu: design.nu,
    };
    let trace = design
        .rank_trace
        .iter()
        .map(|&(attempts, rank)| TraceRow {
            n,
            seed,
            attempts,
            rank,
        })
        .collect();
    Ok((row, trace))
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepSummary {
    pub n: usize,
    pub runs: usize,
    pub nu_min: f64,
    pub nu_median: f64,
    pub nu_max: f64,
}

pub fn sweep_summary(rows: &[SweepRow]) -> Vec<SweepSummary> {
    let mut by_n: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in rows {
        by_n.entry(r.n).or_default().push(r.nu);
    }
    by_n.into_iter()
        .map(|(n, mut v)| {
            v.sort_by(f64::total_cmp);
            let k = v.len();
            let median = if k % 2 == 1 {
                v[k / 2]
            } else {
                0.5 * (v[k / 2 - 1] + v[k / 2])
            };
            SweepSummary {
                n,
                runs: k,
                nu_min: v[0],
                nu_median: median,
                nu_max: v[k - 1],
            }
        })
        .collect()
}

/// Seed offsets of a sweep are `settings.seed + 0 .. seeds`.
pub fn cmd_condition_sweep(cfg: &SweepConfig, settings: &RunSettings) -> Result<Vec<SweepRow>> {
    prepare_out(settings)?;
    let jobs: Vec<(usize, u64)> = cfg
        .sizes
        .iter()
        .flat_map(|&n| (0..cfg.seeds as u64).map(move |s| (n, settings.seed.wrapping_add(s))))
        .collect();
    let mut results: Vec<(SweepRow, Vec<TraceRow>)> = jobs
        .par_iter()
        .map(|&(n, s)| sweep_one(n, s))
        .collect::<Result<_>>()?;
    results.sort_by_key(|a| (a.0.n, a.0.seed));
    let h = header("condition-sweep", settings, cfg)?;
    let rows: Vec<SweepRow> = results.iter().map(|r| r.0.clone()).collect();
    let traces: Vec<TraceRow> = results.into_iter().flat_map(|r| r.1).collect();
    write_csv(&settings.out.join("nu_sweep.csv"), &h, &rows)?;
    write_csv(&settings.out.join("rank_traces.csv"), &h, &traces)?;
    write_json(
        &settings.out.join("nu_summary.json"),
        &h,
        cfg,
        &sweep_summary(&rows),
    )?;
    Ok(rows)
}

// -------------------------------------------------------- chi spectroscopy

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiConfig {
    pub model: PathBuf,
    pub eta: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub m: Option<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ChiRow {
    pub node: usize,
    pub t: f64,
    pub pauli: String,
    pub chi: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ChiDerivRow {
    pub pauli: String,
    pub d1: f64,
    pub d2: f64,
    pub dissipator: bool,
    pub hamiltonian: bool,
}

pub fn cmd_chi_spectroscopy(
    cfg: &ChiConfig,
    settings: &RunSettings,
) -> Result<(Vec<ChiRow>, Vec<ChiDerivRow>)> {
    prepare_out(settings)?;
    let model = load_model(&cfg.model)?;
    let oracle = settings.oracle(model)?;
    let scfg = StructureConfig {
        model: cfg.model.clone(),
        eta: cfg.eta,
        delta: cfg.delta,
        m: cfg.m,
        lambda: None,
    };
    let r = run_structure(&oracle, &scfg)?;
    let mut rows = Vec::new();
    // Nodes are stored in descending order; emit them as a time series.
    let mut order: Vec<usize> = (0..r.schedule.nodes.len()).collect();
    order.sort_by(|&a, &b| r.schedule.nodes[a].total_cmp(&r.schedule.nodes[b]));
    for (node, &k) in order.iter().enumerate() {
        for (p, v) in &r.node_data[k].entries {
            rows.push(ChiRow {
                node,
                t: r.schedule.nodes[k],
                pauli: p.to_string(),
                chi: *v,
            });
        }
    }
    let s_d: BTreeSet<PauliString> = r.s_d_hat.iter().copied().collect();
    let s_h: BTreeSet<PauliString> = r.s_h_hat.iter().copied().collect();
    let derivs = r
        .chi_deriv1
        .iter()
        .map(|(p, d1)| ChiDerivRow {
            pauli: p.to_string(),
            d1: *d1,
            d2: r.chi_deriv2[p],
            dissipator: s_d.contains(p),
            hamiltonian: s_h.contains(p),
        })
        .collect::<Vec<_>>();
    let h = header("chi-spectroscopy", settings, cfg)?;
    write_csv(&settings.out.join("chi_series.csv"), &h, &rows)?;
    write_csv(&settings.out.join("chi_derivatives.csv"), &h, &derivs)?;
    Ok((rows, derivs))
}

// -------------------------------------------------------------- lower bound

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerboundConfig {
    pub n: usize,
    pub kappa: usize,
    /// Evolution times; defaults to multiples of `t0` from 0 to 2.
    #[serde(default)]
    pub times: Option<Vec<f64>>,
    /// Random product inputs used for the mixing distances.
    #[serde(default = "default_states")]
    pub states: usize,
}

fn default_states() -> usize {
    4
}

#[derive(Clone, Debug, Serialize)]
pub struct WeightCount {
    pub weight: usize,
    pub count: u128,
}

#[derive(Clone, Debug, Serialize)]
pub struct MixingRow {
    pub state: usize,
    pub variant: &'static str,
    pub certificate: MixingCertificate,
}

#[derive(Clone, Debug, Serialize)]
pub struct LowerboundReport {
    pub n: usize,
    pub kappa: usize,
    pub m_kappa: usize,
    pub n_star: f64,
    pub t0: f64,
    pub min_count_null: u128,
    pub min_count_alternative: u128,
    pub excluded: PauliString,
    pub counts_by_weight: Vec<WeightCount>,
    pub mixing: Vec<MixingRow>,
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayRow {
    pub t: f64,
    pub weight: usize,
    pub pauli: String,
    pub decay_null: f64,
    pub decay_alternative: f64,
}

pub fn lowerbound_report(
    cfg: &LowerboundConfig,
    seed: u64,
) -> Result<(LowerboundReport, Vec<DecayRow>)> {
    let null = BalancedPauliSet::new(cfg.n, cfg.kappa, Variant::Null)?;
    let alt = BalancedPauliSet::new(cfg.n, cfg.kappa, Variant::Alternative(None))?;
    let excluded = alt
        .excluded()
        .expect("alternative set has an excluded member");
    let t0 = t0_kappa(cfg.n, cfg.kappa)?;
    let times = cfg
        .times
        .clone()
        .unwrap_or_else(|| (0..=8).map(|k| t0 * k as f64 / 4.0).collect());
    let mut counts_by_weight = Vec::new();
    let mut decay = Vec::new();
    for w in 1..=cfg.n {
        // Representative Z-string on the first w sites.
        let q = PauliString::new(cfg.n, 0, (1u64 << w) - 1)?;
        counts_by_weight.push(WeightCount {
            weight: w,
            count: n_anticommuting_closed_form(&q, &null)?,
        });
        for &t in &times {
            decay.push(DecayRow {
                t,
                weight: w,
                pauli: q.to_string(),
                decay_null: crate::lowerbound::pauli_decay(&null, &q, t)?,
                decay_alternative: crate::lowerbound::pauli_decay(&alt, &q, t)?,
            });
        }
    }
    let mut mixing = Vec::new();
    if cfg.n <= crate::lowerbound::MIXING_MAX_QUBITS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut states = vec![ProductState::zero(cfg.n)];
        states.extend((1..cfg.states.max(1)).map(|_| ProductState::random_pure(cfg.n, &mut rng)));
        for (k, s) in states.iter().enumerate() {
            for &t in &times {
                mixing.push(MixingRow {
                    state: k,
                    variant: "null",
                    certificate: mixing_certificate(&null, s, t)?,
                });
                mixing.push(MixingRow {
                    state: k,
                    variant: "alternative",
                    certificate: mixing_certificate(&alt, s, t)?,
                });
            }
        }
    }
    let report = LowerboundReport {
        n: cfg.n,
        kappa: cfg.kappa,
        m_kappa: null.len(),
        n_star: n_star(cfg.n, cfg.kappa)?,
        t0,
        min_count_null: min_anticommuting(&null),
        min_count_alternative: min_anticommuting(&alt),
        excluded,
        counts_by_weight,
        mixing,
    };
    Ok((report, decay))
}

pub fn cmd_lowerbound(cfg: &LowerboundConfig, settings: &RunSettings) -> Result<LowerboundReport> {
    prepare_out(settings)?;
    let (report, decay) = lowerbound_report(cfg, settings.seed)?;
    let h = header("lowerbound", settings, cfg)?;
    write_json(
        &settings.out.join("lowerbound_report.json"),
        &h,
        cfg,
        &report,
    )?;
    write_csv(&settings.out.join("decay_curves.csv"), &h, &decay)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_shapes() {
        assert_eq!(lattice_dims(12).unwrap(), (3, 4));
        assert_eq!(lattice_dims(8).unwrap(), (2, 4));
        assert!(lattice_dims(7).is_err());
        // 2x2 torus: the four edges, and the two diagonals.
        assert_eq!(lattice_pairs(2, 2).len(), 6);
    }

    #[test]
    fn family_sizes() {
        let fam = lattice_family(4, 3).unwrap();
        assert_eq!(fam.s_d.len(), 12 + 9 * 6);
        assert_eq!(fam.s_h.len(), 12 + 54 + 5 + 1);
        assert_eq!(fam.diss_pairs.len(), 66);
        assert_eq!(
            fam.index().unwrap().dim(),
            fam.s_h.len() + fam.s_d.len() + 132
        );
        let again = lattice_family(4, 3).unwrap();
        assert_eq!(fam.s_h, again.s_h);
    }

    #[test]
    fn probe_input_syntax() {
        assert_eq!(
            parse_probe_input("P:XZ").unwrap(),
            ProbeInput::pauli("XZ".parse().unwrap())
        );
        assert_eq!(
            parse_probe_input("-Y").unwrap(),
            ProbeInput::eigenstate("Y".parse().unwrap(), -1)
        );
        assert!(parse_probe_input("XZ").is_err());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let s = RunSettings::new("/tmp/x");
        let cfg = SweepConfig::default();
        let a = config_hash("condition-sweep", &s, &cfg).unwrap();
        assert_eq!(a.len(), 64);
        assert_eq!(a, config_hash("condition-sweep", &s, &cfg).unwrap());
        let mut s2 = s.clone();
        s2.seed = 1;
        assert_ne!(a, config_hash("condition-sweep", &s2, &cfg).unwrap());
    }
}
