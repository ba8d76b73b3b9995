//! Heisenberg-picture evolution in the Pauli basis and the black-box channel
//! oracle built on top of it.
//!
//! The adjoint generator acts on an observable `O` as
//! `L†(O) = i sum_k h_k [P_k, O] + sum_ij a_ij (P_j O P_i - 1/2 {P_j P_i, O})`.
//! Every term maps a Pauli string to at most one other Pauli string, so
//! `L†` is stored column by column as a sparse real matrix and exponentiated
//! by a scaled truncated Taylor series.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, HashMap};
use std::hash::BuildHasherDefault;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Lindbladian, ZERO_THRESHOLD};
use crate::pauli::{i_power, PauliString};
use crate::spam::SpamParams;

/// Default largest qubit count for exhaustive fidelity and χ enumeration.
pub const DEFAULT_EXHAUSTIVE_CAP: usize = 7;
/// Target remainder of the whole Taylor evolution, split evenly across steps.
pub const TAYLOR_TOLERANCE: f64 = 1e-12;
/// Largest number of scaling steps before evolution is declared non-convergent.
pub const MAX_TAYLOR_STEPS: usize = 200_000;
/// Largest number of series terms per scaling step.
pub const MAX_TAYLOR_TERMS: usize = 80;
/// Largest number of Pauli terms an evolved observable may carry.
pub const MAX_VECTOR_TERMS: usize = 1 << 22;
/// Coefficients of evolved observables below this magnitude are dropped.
const PRUNE_THRESHOLD: f64 = 1e-18;
/// Evolution results kept per operator before the cache is flushed.
const EVOLUTION_CACHE_LIMIT: usize = 50_000;

pub(crate) type DetMap<K, V> = HashMap<K, V, BuildHasherDefault<DefaultHasher>>;

/// Sparse real combination of Pauli strings.
pub type PauliVector = BTreeMap<PauliString, f64>;

/// Coefficient of `p` in `v`, zero when absent.
pub fn coefficient(v: &PauliVector, p: &PauliString) -> f64 {
    v.get(p).copied().unwrap_or(0.0)
}

/// Sparse adjoint Pauli transfer matrix of a Lindbladian.
pub struct AdjointPTM {
    n: usize,
    hamiltonian: Vec<(PauliString, f64)>,
    dissipative: Vec<(PauliString, PauliString, Complex64)>,
    norm_bound: f64,
    columns: RwLock<DetMap<PauliString, Arc<[(PauliString, f64)]>>>,
    evolutions: RwLock<DetMap<(PauliString, u64), Arc<PauliVector>>>,
}

impl std::fmt::Debug for AdjointPTM {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AdjointPTM")
            .field("n", &self.n)
            .field("hamiltonian_terms", &self.hamiltonian.len())
            .field("dissipative_terms", &self.dissipative.len())
            .field("norm_bound", &self.norm_bound)
            .finish()
    }
}

fn phased_product(a: (PauliString, u8), b: (PauliString, u8)) -> (PauliString, u8) {
    let p = a.0.mul_unchecked(&b.0);
    (p.pauli, (a.1 + b.1 + p.phase) % 4)
}

impl AdjointPTM {
    pub fn new(model: &Lindbladian) -> Self {
        let hamiltonian: Vec<(PauliString, f64)> = model
            .hamiltonian()
            .iter()
            .filter(|(_, h)| h.abs() > ZERO_THRESHOLD)
            .map(|(p, h)| (*p, *h))
            .collect();
        let support = model.diss_support();
        let a = model.kossakowski();
        let mut dissipative = Vec::new();
        for (i, pi) in support.iter().enumerate() {
            for (j, pj) in support.iter().enumerate() {
                let v = a[(i, j)];
                if v.norm() > ZERO_THRESHOLD {
                    dissipative.push((*pi, *pj, v));
                }
            }
        }
        let norm_bound = hamiltonian.iter().map(|(_, h)| 2.0 * h.abs()).sum::<f64>()
            + dissipative
                .iter()
                .map(|(_, _, a)| 2.0 * a.norm())
                .sum::<f64>();
        AdjointPTM {
            n: model.n(),
            hamiltonian,
            dissipative,
            norm_bound,
            columns: RwLock::new(DetMap::default()),
            evolutions: RwLock::new(DetMap::default()),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Bound on the induced l1 norm of `L†` acting on Pauli coefficient vectors.
    pub fn norm_bound(&self) -> f64 {
        self.norm_bound
    }

    /// Number of Hamiltonian terms plus nonzero Kossakowski entries.
    pub fn component_count(&self) -> usize {
        self.hamiltonian.len() + self.dissipative.len()
    }

    /// `L†(O)` with complex coefficients, before the imaginary parts cancel.
    pub fn column_complex(&self, o: &PauliString) -> Vec<(PauliString, Complex64)> {
        let mut acc: BTreeMap<PauliString, Complex64> = BTreeMap::new();
        for (p, h) in &self.hamiltonian {
            if p.commutes_unchecked(o) {
                continue;
            }
            // Anticommuting P and O give i[P, O] = 2i P O.
            let (q, phase) = phased_product((*p, 1), (*o, 0));
            *acc.entry(q).or_default() += i_power(phase) * (2.0 * h);
        }
        for (pi, pj, a) in &self.dissipative {
            let ci = pi.commutes_unchecked(o);
            let cj = pj.commutes_unchecked(o);
            if ci && cj {
                continue;
            }
            let (q, phase) = phased_product(phased_product((*pj, 0), (*o, 0)), (*pi, 0));
            *acc.entry(q).or_default() += i_power(phase) * a;
            if ci == cj {
                // P_j P_i commutes with O, so the anticommutator is 2 P_j P_i O.
                let (q, phase) = phased_product(phased_product((*pj, 0), (*pi, 0)), (*o, 0));
                *acc.entry(q).or_default() -= i_power(phase) * a;
            }
        }
        acc.into_iter()
            .filter(|(_, v)| v.norm() > ZERO_THRESHOLD)
            .collect()
    }

    /// Real column `L†(O)` in the Hermitian Pauli basis, cached.
    pub fn column(&self, o: &PauliString) -> Arc<[(PauliString, f64)]> {
        if let Some(c) = self.columns.read().expect("column cache poisoned").get(o) {
            return c.clone();
        }
        let col: Arc<[(PauliString, f64)]> = self
            .column_complex(o)
            .into_iter()
            .filter(|(_, v)| v.re.abs() > ZERO_THRESHOLD)
            .map(|(p, v)| (p, v.re))
            .collect();
        self.columns
            .write()
            .expect("column cache poisoned")
            .insert(*o, col.clone());
        col
    }

    fn apply(&self, v: &DetMap<PauliString, f64>, scale: f64) -> DetMap<PauliString, f64> {
        let mut out: DetMap<PauliString, f64> = DetMap::default();
        let mut keys: Vec<&PauliString> = v.keys().collect();
        keys.sort_unstable();
        for p in keys {
            let c = v[p] * scale;
            for (q, w) in self.column(p).iter() {
                *out.entry(*q).or_default() += c * w;
            }
        }
        out
    }

    /// Sparse `e^{t L†}(O)` by truncated Taylor series with scaling.
    pub fn evolve(&self, t: f64, o: &PauliString) -> Result<PauliVector> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "evolution time must be finite and >= 0, got {t}"
            )));
        }
        if o.n() != self.n {
            return Err(Error::SizeMismatch {
                left: self.n,
                right: o.n(),
            });
        }
        let mut v: DetMap<PauliString, f64> = DetMap::default();
        v.insert(*o, 1.0);
        let total = self.norm_bound * t;
        if total == 0.0 {
            return Ok(v.into_iter().collect());
        }
        let steps = total.ceil().max(1.0);
        if steps > MAX_TAYLOR_STEPS as f64 {
            return Err(Error::NonConvergent(format!(
                "norm bound times t = {total:.3e} needs more than {MAX_TAYLOR_STEPS} scaling steps"
            )));
        }
        let steps = steps as usize;
        let h = t / steps as f64;
        let tol = TAYLOR_TOLERANCE / steps as f64;
        for _ in 0..steps {
            let norm_v: f64 = v.values().map(|c| c.abs()).sum();
            let mut next = v.clone();
            let mut term = v;
            let mut converged = false;
            for k in 1..=MAX_TAYLOR_TERMS {
                term = self.apply(&term, h / k as f64);
                let norm_term: f64 = term.values().map(|c| c.abs()).sum();
                for (p, c) in &term {
                    *next.entry(*p).or_default() += c;
                }
                if next.len() > MAX_VECTOR_TERMS {
                    return Err(Error::CapExceeded {
                        what: "evolved observable terms",
                        value: next.len(),
                        cap: MAX_VECTOR_TERMS,
                    });
                }
                if norm_term <= tol * norm_v.max(1.0) {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::NonConvergent(format!(
                    "Taylor series did not reach tolerance within {MAX_TAYLOR_TERMS} terms"
                )));
            }
            next.retain(|_, c| c.abs() > PRUNE_THRESHOLD);
            v = next;
        }
        Ok(v.into_iter().collect())
    }

    /// Cached variant of [`AdjointPTM::evolve`].
    pub fn evolve_cached(&self, t: f64, o: &PauliString) -> Result<Arc<PauliVector>> {
        let key = (*o, t.to_bits());
        if let Some(v) = self
            .evolutions
            .read()
            .expect("evolution cache poisoned")
            .get(&key)
        {
            return Ok(v.clone());
        }
        let v = Arc::new(self.evolve(t, o)?);
        let mut cache = self.evolutions.write().expect("evolution cache poisoned");
        if cache.len() >= EVOLUTION_CACHE_LIMIT {
            cache.clear();
        }
        cache.insert(key, v.clone());
        Ok(v)
    }

    /// For every Pauli `Q` in index order: the identity and `Q` coefficients
    /// of `e^{t L†}(Q)`.
    fn diagonal_data(&self, t: f64, cap: usize) -> Result<Vec<(f64, f64)>> {
        if self.n > cap {
            return Err(Error::CapExceeded {
                what: "qubits for exhaustive enumeration",
                value: self.n,
                cap,
            });
        }
        let paulis = PauliString::all(self.n)?;
        let identity = PauliString::identity(self.n)?;
        paulis
            .par_iter()
            .map(|q| {
                if q.is_identity() {
                    return Ok((1.0, 1.0));
                }
                let v = self.evolve(t, q)?;
                Ok((coefficient(&v, &identity), coefficient(&v, q)))
            })
            .collect()
    }

    /// Pauli fidelities `λ_Q(t)` in index order.
    pub fn fidelity_vector(&self, t: f64, cap: usize) -> Result<Vec<f64>> {
        Ok(self
            .diagonal_data(t, cap)?
            .into_iter()
            .map(|(_, l)| l)
            .collect())
    }
}

/// Build the adjoint transfer matrix of `model`.
pub fn build_adjoint_ptm(model: &Lindbladian) -> AdjointPTM {
    AdjointPTM::new(model)
}

/// Sparse coefficient vector of `e^{t L†}(O)`.
pub fn evolve_observable(ptm: &AdjointPTM, t: f64, o: &PauliString) -> Result<PauliVector> {
    ptm.evolve(t, o)
}

/// Pauli fidelities keyed by Pauli string, with the default exhaustive cap.
pub fn pauli_fidelities(ptm: &AdjointPTM, t: f64) -> Result<BTreeMap<PauliString, f64>> {
    let lambda = ptm.fidelity_vector(t, DEFAULT_EXHAUSTIVE_CAP)?;
    lambda
        .into_iter()
        .enumerate()
        .map(|(i, l)| Ok((PauliString::from_index(ptm.n(), i)?, l)))
        .collect()
}

/// In-place transform by the per-qubit symplectic sign kernel, unnormalized.
fn symplectic_transform(v: &mut [f64]) {
    let len = v.len();
    let mut stride = 1;
    while stride < len {
        for block in (0..len).step_by(4 * stride) {
            for off in 0..stride {
                let i = block + off;
                let (a, b, c, d) = (v[i], v[i + stride], v[i + 2 * stride], v[i + 3 * stride]);
                // Codes I, X, Z, Y; the sign is -1 when the single-qubit letters anticommute.
                v[i] = a + b + c + d;
                v[i + stride] = a + b - c - d;
                v[i + 2 * stride] = a - b + c - d;
                v[i + 3 * stride] = a - b - c + d;
            }
        }
        stride *= 4;
    }
}

fn check_power_of_four(len: usize) -> Result<()> {
    if len == 0 || len & (len - 1) != 0 || !len.trailing_zeros().is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "length {len} is not a power of four"
        )));
    }
    Ok(())
}

/// Pauli error rates from fidelities, both in index order.
pub fn chi_from_fidelities(lambda: &[f64]) -> Result<Vec<f64>> {
    check_power_of_four(lambda.len())?;
    let mut v = lambda.to_vec();
    symplectic_transform(&mut v);
    let norm = 1.0 / lambda.len() as f64;
    v.iter_mut().for_each(|x| *x *= norm);
    Ok(v)
}

/// Pauli fidelities from error rates, both in index order.
pub fn fidelities_from_chi(chi: &[f64]) -> Result<Vec<f64>> {
    check_power_of_four(chi.len())?;
    let mut v = chi.to_vec();
    symplectic_transform(&mut v);
    Ok(v)
}

/// Diagonal of the χ matrix at one time, stored sparsely.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChiDiagonal {
    pub t: f64,
    pub entries: BTreeMap<PauliString, f64>,
}

impl ChiDiagonal {
    fn from_dense(n: usize, t: f64, chi: &[f64], threshold: f64) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, &c) in chi.iter().enumerate() {
            if c.abs() > threshold {
                entries.insert(PauliString::from_index(n, i)?, c);
            }
        }
        Ok(ChiDiagonal { t, entries })
    }

    pub fn get(&self, p: &PauliString) -> f64 {
        self.entries.get(p).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.entries.values().sum()
    }
}

/// Exact χ diagonal of `e^{tL}`.
pub fn chi_diagonal_exact(ptm: &AdjointPTM, t: f64) -> Result<ChiDiagonal> {
    let chi = chi_from_fidelities(&ptm.fidelity_vector(t, DEFAULT_EXHAUSTIVE_CAP)?)?;
    ChiDiagonal::from_dense(ptm.n(), t, &chi, ZERO_THRESHOLD)
}

/// Zero entries below `threshold` and keep at most `keep` of the largest.
fn sparsify(chi: &mut [f64], threshold: f64, keep: usize) {
    for c in chi.iter_mut() {
        if *c < threshold {
            *c = 0.0;
        }
    }
    let mut nonzero: Vec<usize> = (0..chi.len()).filter(|&i| chi[i] != 0.0).collect();
    if nonzero.len() > keep {
        nonzero.sort_by(|&a, &b| chi[b].total_cmp(&chi[a]).then(a.cmp(&b)));
        for &i in &nonzero[keep..] {
            chi[i] = 0.0;
        }
    }
}

/// How oracle answers are produced from the exact dynamics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Backend {
    /// Exact values.
    Exact,
    /// Exact values plus bounded uniform noise. Without an explicit `eps`
    /// the accuracy requested by each query is used.
    ExactPlusNoise { eps: Option<f64>, seed: u64 },
    /// Monte Carlo estimates from binary measurement outcomes; `shots` caps
    /// the number of shots any single estimate may request.
    Sampled { shots: u64, seed: u64 },
}

impl Backend {
    /// Parse `exact`, `noise`, `noise:EPS` or `sampled:SHOTS`.
    pub fn parse(spec: &str, seed: u64) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unrecognized backend {spec:?}"));
        match spec.split_once(':') {
            None if spec == "exact" => Ok(Backend::Exact),
            None if spec == "noise" => Ok(Backend::ExactPlusNoise { eps: None, seed }),
            Some(("noise", eps)) => {
                let eps: f64 = eps.parse().map_err(|_| bad())?;
                if !(eps > 0.0) {
                    return Err(bad());
                }
                Ok(Backend::ExactPlusNoise {
                    eps: Some(eps),
                    seed,
                })
            }
            Some(("sampled", shots)) => {
                let shots: u64 = shots.parse().map_err(|_| bad())?;
                Ok(Backend::Sampled { shots, seed })
            }
            _ => Err(bad()),
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Backend::Exact => 0,
            Backend::ExactPlusNoise { seed, .. } | Backend::Sampled { seed, .. } => *seed,
        }
    }
}

/// Input state of an expectation-value probe.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProbeInput {
    /// Pauli operator input: the answer is the coefficient of `Q` in the
    /// evolved observable, realized as half the difference of the two
    /// eigenstate experiments. `Q = I` is the maximally mixed state.
    PauliInput { q: PauliString },
    /// The state `(I + sign Q) / 2^n`.
    Eigenstate { q: PauliString, sign: i8 },
}

impl ProbeInput {
    pub fn pauli(q: PauliString) -> Self {
        ProbeInput::PauliInput { q }
    }

    pub fn eigenstate(q: PauliString, sign: i8) -> Self {
        ProbeInput::Eigenstate { q, sign }
    }

    pub fn q(&self) -> PauliString {
        match self {
            ProbeInput::PauliInput { q } | ProbeInput::Eigenstate { q, .. } => *q,
        }
    }

    fn key(&self) -> u64 {
        match self {
            ProbeInput::PauliInput { q } => mix(mix(q.x_bits()) ^ q.z_bits().rotate_left(17)),
            ProbeInput::Eigenstate { q, sign } => {
                mix(mix(q.x_bits() ^ 0x5555) ^ q.z_bits().rotate_left(29) ^ (*sign as i64 as u64))
            }
        }
    }
}

/// Requested accuracy and failure probability of one oracle query.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Accuracy {
    pub eps_s: f64,
    pub delta_s: f64,
}

impl Accuracy {
    pub fn new(eps_s: f64, delta_s: f64) -> Result<Self> {
        if !(eps_s > 0.0) || !(delta_s > 0.0 && delta_s < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "accuracy needs eps_s > 0 and 0 < delta_s < 1, got ({eps_s}, {delta_s})"
            )));
        }
        Ok(Accuracy { eps_s, delta_s })
    }
}

/// Query counts accumulated by an oracle.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct QueryCounts {
    pub chi_queries: u64,
    pub expectation_queries: u64,
    pub shots: u128,
}

#[derive(Debug, Default)]
struct Counters {
    chi: AtomicU64,
    expectation: AtomicU64,
    shots: Mutex<u128>,
}

/// SplitMix64 finalizer.
pub(crate) fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const TAG_CHI: u64 = 0x6368_69;
const TAG_EXPECTATION: u64 = 0x6578_70;

/// Query access to `e^{tL}` through a chosen backend, optionally wrapped in
/// depolarizing state preparation and measurement noise.
#[derive(Debug)]
pub struct ChannelOracle {
    model: Arc<Lindbladian>,
    ptm: Arc<AdjointPTM>,
    backend: Backend,
    spam: Option<SpamParams>,
    exhaustive_cap: usize,
    counters: Counters,
}

impl ChannelOracle {
    pub fn new(model: Lindbladian, backend: Backend) -> Self {
        let ptm = Arc::new(AdjointPTM::new(&model));
        ChannelOracle {
            model: Arc::new(model),
            ptm,
            backend,
            spam: None,
            exhaustive_cap: DEFAULT_EXHAUSTIVE_CAP,
            counters: Counters::default(),
        }
    }

    /// Same dynamics and cache, different backend, fresh counters.
    pub fn with_backend(&self, backend: Backend) -> Self {
        ChannelOracle {
            model: self.model.clone(),
            ptm: self.ptm.clone(),
            backend,
            spam: self.spam,
            exhaustive_cap: self.exhaustive_cap,
            counters: Counters::default(),
        }
    }

    /// Same oracle with the SPAM layer replaced, fresh counters.
    pub fn with_spam(&self, spam: Option<SpamParams>) -> Self {
        let mut o = self.with_backend(self.backend);
        o.spam = spam;
        o
    }

    pub fn with_exhaustive_cap(mut self, cap: usize) -> Self {
        self.exhaustive_cap = cap;
        self
    }

    pub fn model(&self) -> &Lindbladian {
        &self.model
    }

    pub fn ptm(&self) -> &AdjointPTM {
        &self.ptm
    }

    pub fn n(&self) -> usize {
        self.model.n()
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn spam(&self) -> Option<SpamParams> {
        self.spam
    }

    pub fn counts(&self) -> QueryCounts {
        QueryCounts {
            chi_queries: self.counters.chi.load(Ordering::Relaxed),
            expectation_queries: self.counters.expectation.load(Ordering::Relaxed),
            shots: *self.counters.shots.lock().expect("shot counter poisoned"),
        }
    }

    pub(crate) fn rng(&self, tag: u64, t: f64, key: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.backend.seed() ^ mix(tag)));
        rng.set_stream(mix(t.to_bits() ^ mix(key)));
        rng
    }

    pub(crate) fn add_shots(&self, m: u128) {
        *self.counters.shots.lock().expect("shot counter poisoned") += m;
    }

    pub(crate) fn retention(&self) -> SpamParams {
        self.spam.unwrap_or_else(SpamParams::ideal)
    }

    /// Sparse estimate of the χ diagonal at time `t`.
    pub fn chi_rates(&self, t: f64, acc: Accuracy) -> Result<ChiDiagonal> {
        self.counters.chi.fetch_add(1, Ordering::Relaxed);
        let n = self.n();
        let data = self.ptm.diagonal_data(t, self.exhaustive_cap)?;
        let spam = self.retention();
        let paulis = PauliString::all(n)?;
        let damp: Vec<(f64, f64)> = paulis
            .iter()
            .map(|q| (spam.meas_factor(q), spam.prep_factor(q)))
            .collect();
        match self.backend {
            Backend::Exact => {
                let lambda: Vec<f64> = data
                    .iter()
                    .zip(&damp)
                    .map(|((_, l), (m, p))| l * m * p)
                    .collect();
                ChiDiagonal::from_dense(n, t, &chi_from_fidelities(&lambda)?, ZERO_THRESHOLD)
            }
            Backend::ExactPlusNoise { eps, .. } => {
                let eps = eps.unwrap_or(acc.eps_s);
                let lambda: Vec<f64> = data
                    .iter()
                    .zip(&damp)
                    .map(|((_, l), (m, p))| l * m * p)
                    .collect();
                let mut chi = chi_from_fidelities(&lambda)?;
                let mut rng = self.rng(TAG_CHI, t, 0);
                for c in chi.iter_mut() {
                    *c += rng.random_range(-eps / 3.0..=eps / 3.0);
                }
                sparsify(&mut chi, 2.0 * eps / 3.0, (4.0 / eps).ceil() as usize);
                ChiDiagonal::from_dense(n, t, &chi, 0.0)
            }
            Backend::Sampled { shots, .. } => {
                let eps = acc.eps_s;
                let others = (paulis.len() - 1) as f64;
                let m = (2.0 / (eps / 3.0).powi(2) * (2.0 * others / acc.delta_s).ln()).ceil();
                if m > shots as f64 {
                    return Err(Error::ShotBudgetOverflow {
                        required: m,
                        budget: shots,
                    });
                }
                let m = m as u64;
                let mut rng = self.rng(TAG_CHI, t, 0);
                let mut lambda = vec![1.0; paulis.len()];
                for (i, ((c_i, l), (rm, rp))) in data.iter().zip(&damp).enumerate().skip(1) {
                    let plus = rm * (c_i + rp * l);
                    let minus = rm * (c_i - rp * l);
                    lambda[i] =
                        0.5 * (sample_mean(&mut rng, plus, m)? - sample_mean(&mut rng, minus, m)?);
                }
                self.add_shots(2 * m as u128 * (paulis.len() as u128 - 1));
                let mut chi = chi_from_fidelities(&lambda)?;
                sparsify(&mut chi, 2.0 * eps / 3.0, (4.0 / eps).ceil() as usize);
                ChiDiagonal::from_dense(n, t, &chi, 0.0)
            }
        }
    }

    /// Exact (noiseless) value of an expectation probe, including SPAM damping.
    pub fn exact_expectation(&self, input: &ProbeInput, o: &PauliString, t: f64) -> Result<f64> {
        let (c_i, c_q, rm, rp) = self.components(input, o, t)?;
        Ok(match input {
            ProbeInput::PauliInput { q } if q.is_identity() => rm * c_i,
            ProbeInput::PauliInput { .. } => rm * rp * c_q,
            ProbeInput::Eigenstate { sign, .. } => rm * (c_i + *sign as f64 * rp * c_q),
        })
    }

    fn components(
        &self,
        input: &ProbeInput,
        o: &PauliString,
        t: f64,
    ) -> Result<(f64, f64, f64, f64)> {
        let q = input.q();
        let n = self.n();
        if o.n() != n || q.n() != n {
            return Err(Error::SizeMismatch {
                left: n,
                right: if o.n() != n { o.n() } else { q.n() },
            });
        }
        if let ProbeInput::Eigenstate { sign, .. } = input {
            if q.is_identity() {
                return Err(Error::IdentityInput);
            }
            if *sign != 1 && *sign != -1 {
                return Err(Error::InvalidArgument(format!(
                    "eigenstate sign must be +1 or -1, got {sign}"
                )));
            }
        }
        let v = self.ptm.evolve_cached(t, o)?;
        let spam = self.retention();
        Ok((
            coefficient(&v, &PauliString::identity(n)?),
            coefficient(&v, &q),
            spam.meas_factor(o),
            spam.prep_factor(&q),
        ))
    }

    /// Expectation of `O` after evolving `input` for time `t`.
    pub fn expectation(
        &self,
        input: &ProbeInput,
        o: &PauliString,
        t: f64,
        acc: Accuracy,
    ) -> Result<f64> {
        self.counters.expectation.fetch_add(1, Ordering::Relaxed);
        let (c_i, c_q, rm, rp) = self.components(input, o, t)?;
        let exact = match input {
            ProbeInput::PauliInput { q } if q.is_identity() => rm * c_i,
            ProbeInput::PauliInput { .. } => rm * rp * c_q,
            ProbeInput::Eigenstate { sign, .. } => rm * (c_i + *sign as f64 * rp * c_q),
        };
        match self.backend {
            Backend::Exact => Ok(exact),
            Backend::ExactPlusNoise { eps, .. } => {
                let eps = eps.unwrap_or(acc.eps_s);
                let mut rng = self.rng(
                    TAG_EXPECTATION,
                    t,
                    input.key() ^ mix(o.x_bits() ^ o.z_bits().rotate_left(32)),
                );
                Ok(exact + rng.random_range(-eps..=eps))
            }
            Backend::Sampled { shots, .. } => {
                let m = expectation_shots(acc);
                if m > shots as f64 {
                    return Err(Error::ShotBudgetOverflow {
                        required: m,
                        budget: shots,
                    });
                }
                let m = m as u64;
                let mut rng = self.rng(
                    TAG_EXPECTATION,
                    t,
                    input.key() ^ mix(o.x_bits() ^ o.z_bits().rotate_left(32)),
                );
                self.add_shots(m as u128);
                match input {
                    ProbeInput::PauliInput { q } if !q.is_identity() => {
                        let half = m.div_ceil(2);
                        let plus = sample_mean(&mut rng, rm * (c_i + rp * c_q), half)?;
                        let minus = sample_mean(&mut rng, rm * (c_i - rp * c_q), half)?;
                        Ok(0.5 * (plus - minus))
                    }
                    _ => sample_mean(&mut rng, exact, m),
                }
            }
        }
    }
}

/// Shots for a single expectation estimate at the requested accuracy.
pub fn expectation_shots(acc: Accuracy) -> f64 {
    (2.0 * (2.0 / acc.delta_s).ln() / (acc.eps_s * acc.eps_s)).ceil()
}

/// Mean of `m` outcomes in {+1, -1} with expectation `e`.
fn sample_mean<R: Rng>(rng: &mut R, e: f64, m: u64) -> Result<f64> {
    if m == 0 {
        return Err(Error::InvalidArgument("zero shots requested".into()));
    }
    let p = (0.5 * (1.0 + e)).clamp(0.0, 1.0);
    let bin = Binomial::new(m, p).map_err(|err| Error::InvalidArgument(err.to_string()))?;
    let k = bin.sample(rng) as f64;
    Ok((2.0 * k - m as f64) / m as f64)
}
