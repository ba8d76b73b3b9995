//! Coefficient learning from derivatives of patch-supported Pauli probes.
//!
//! For a probe with input `Q` and observable `O`, the time derivative at
//! zero of the measured signal is a fixed linear combination of the unknown
//! Hamiltonian coefficients and Kossakowski entries. Rows of that linear map
//! are collected until the system is square and invertible, derivatives are
//! estimated with a Chebyshev schedule, and the system is solved.

use std::collections::{BTreeSet, HashMap, HashSet};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::chebyshev::{params_first_factorial, ScheduleParams};
use crate::error::{Error, Result};
use crate::evolution::{mix, Accuracy, ChannelOracle, DetMap, ProbeInput, QueryCounts};
use crate::linalg::{Lu, RankTracker};
use crate::model::{max_degree_by_support, Lindbladian};
use crate::pauli::{i_power, patch_paulis_of_weight, Patch, PauliString};
use crate::scalar::Field;
use crate::spam::{spam_rescale, SpamParams};
use crate::Schedule;

/// Floor on the derivative accuracy `ε/ν`.
pub const EPS_D_FLOOR: f64 = 1e-9;
/// Largest probe locality accepted by shadow estimation.
pub const SHADOW_LOCALITY_CAP: usize = 4;
/// Largest number of shadow snapshots a single call may simulate.
pub const SHADOW_SHOT_CAP: u64 = 50_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Slot {
    H(usize),
    Diag(usize),
    Pair(usize),
}

/// Ordered unknowns `h ⊕ a_diag ⊕ Re a_ij ⊕ Im a_ij` with `j < i`.
#[derive(Clone, Debug)]
pub struct ParameterIndex {
    n: usize,
    h: Vec<PauliString>,
    diag: Vec<PauliString>,
    pairs: Vec<(usize, usize)>,
    site_slots: Vec<Vec<(Slot, u64)>>,
}

fn sorted_unique(v: &[PauliString]) -> Vec<PauliString> {
    let set: BTreeSet<PauliString> = v.iter().copied().collect();
    set.into_iter().collect()
}

fn infer_n(s_h: &[PauliString], s_d: &[PauliString]) -> Result<usize> {
    let n = s_h
        .iter()
        .chain(s_d)
        .map(|p| p.n())
        .next()
        .ok_or_else(|| Error::InvalidArgument("candidate structures are both empty".into()))?;
    if let Some(p) = s_h.iter().chain(s_d).find(|p| p.n() != n) {
        return Err(Error::SizeMismatch {
            left: n,
            right: p.n(),
        });
    }
    Ok(n)
}

impl ParameterIndex {
    /// All off-diagonal pairs of the dissipator candidates.
    pub fn full(s_h: &[PauliString], s_d: &[PauliString]) -> Result<Self> {
        let d = sorted_unique(s_d).len();
        let pairs = (0..d).flat_map(|i| (0..i).map(move |j| (i, j))).collect();
        Self::build(s_h, s_d, pairs)
    }

    /// Off-diagonal unknowns restricted to the given unordered pairs.
    pub fn with_pairs(
        s_h: &[PauliString],
        s_d: &[PauliString],
        pairs: &[(PauliString, PauliString)],
    ) -> Result<Self> {
        let diag = sorted_unique(s_d);
        let pos: HashMap<PauliString, usize> =
            diag.iter().enumerate().map(|(i, p)| (*p, i)).collect();
        let mut set = BTreeSet::new();
        for (a, b) in pairs {
            let (Some(&i), Some(&j)) = (pos.get(a), pos.get(b)) else {
                return Err(Error::InvalidArgument(format!(
                    "pair ({a}, {b}) is not inside the dissipator candidates"
                )));
            };
            if i != j {
                set.insert((i.max(j), i.min(j)));
            }
        }
        Self::build(s_h, s_d, set.into_iter().collect())
    }

    fn build(s_h: &[PauliString], s_d: &[PauliString], pairs: Vec<(usize, usize)>) -> Result<Self> {
        let n = infer_n(s_h, s_d)?;
        let h = sorted_unique(s_h);
        let diag = sorted_unique(s_d);
        if h.iter().chain(&diag).any(|p| p.is_identity()) {
            return Err(Error::IdentityTermPresent("candidate structure"));
        }
        let mut site_slots = vec![Vec::new(); n];
        let mut push = |slot: Slot, mask: u64| {
            for (q, list) in site_slots.iter_mut().enumerate() {
                if mask >> q & 1 == 1 {
                    list.push((slot, mask));
                }
            }
        };
        for (k, p) in h.iter().enumerate() {
            push(Slot::H(k), p.support_mask());
        }
        for (k, p) in diag.iter().enumerate() {
            push(Slot::Diag(k), p.support_mask());
        }
        for (k, &(i, j)) in pairs.iter().enumerate() {
            push(
                Slot::Pair(k),
                diag[i].support_mask() | diag[j].support_mask(),
            );
        }
        Ok(ParameterIndex {
            n,
            h,
            diag,
            pairs,
            site_slots,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> &[PauliString] {
        &self.h
    }

    pub fn diag(&self) -> &[PauliString] {
        &self.diag
    }

    /// Off-diagonal pairs `(i, j)`, `j < i`, as indices into [`ParameterIndex::diag`].
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Number of real unknowns.
    pub fn dim(&self) -> usize {
        self.h.len() + self.diag.len() + 2 * self.pairs.len()
    }

    fn offset_diag(&self) -> usize {
        self.h.len()
    }

    fn offset_re(&self) -> usize {
        self.h.len() + self.diag.len()
    }

    fn offset_im(&self) -> usize {
        self.offset_re() + self.pairs.len()
    }

    /// Component supports with multiplicity: Hamiltonian terms, diagonal
    /// terms and both orderings of every off-diagonal pair.
    fn support_counts(&self) -> HashMap<u64, usize> {
        let mut groups: HashMap<u64, usize> = HashMap::new();
        for p in self.h.iter().chain(&self.diag) {
            *groups.entry(p.support_mask()).or_default() += 1;
        }
        for &(i, j) in &self.pairs {
            *groups
                .entry(self.diag[i].support_mask() | self.diag[j].support_mask())
                .or_default() += 2;
        }
        groups
    }

    /// Dual-graph degree of the components this index can represent.
    pub fn dual_degree(&self) -> usize {
        max_degree_by_support(&self.support_counts())
    }

    /// Number of components whose support meets `o`.
    pub fn neighborhood(&self, o: &PauliString) -> usize {
        self.support_counts()
            .iter()
            .filter(|(m, _)| *m & o.support_mask() != 0)
            .map(|(_, c)| c)
            .sum()
    }

    /// Patches of all Hamiltonian candidates, diagonal candidates and pairs.
    pub fn patch_family(&self) -> Vec<Patch> {
        let mut set = BTreeSet::new();
        for p in self.h.iter().chain(&self.diag) {
            set.insert(p.support());
        }
        for &(i, j) in &self.pairs {
            set.insert(self.diag[i].support().union(&self.diag[j].support()));
        }
        set.into_iter().collect()
    }

    /// Parameter vector of `model` in this index (entries outside the index are dropped).
    pub fn parameters_of(&self, model: &Lindbladian) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        for (k, p) in self.h.iter().enumerate() {
            x[k] = model.h(p);
        }
        for (k, p) in self.diag.iter().enumerate() {
            x[self.offset_diag() + k] = model.a(p, p).re;
        }
        for (k, &(i, j)) in self.pairs.iter().enumerate() {
            let a = model.a(&self.diag[i], &self.diag[j]);
            x[self.offset_re() + k] = a.re;
            x[self.offset_im() + k] = a.im;
        }
        x
    }

    /// Whether every nonzero term of `model` has a slot in this index.
    pub fn covers(&self, model: &Lindbladian) -> bool {
        let h_ok = model
            .hamiltonian()
            .iter()
            .all(|(p, v)| v.abs() <= 1e-14 || self.h.contains(p));
        let support = model.diss_support();
        let k = model.kossakowski();
        h_ok && support.iter().enumerate().all(|(i, pi)| {
            support
                .iter()
                .enumerate()
                .all(|(j, pj)| k[(i, j)].norm() <= 1e-14 || self.slot_of_pair(pi, pj).is_some())
        })
    }

    fn slot_of_pair(&self, a: &PauliString, b: &PauliString) -> Option<Slot> {
        let i = self.diag.iter().position(|p| p == a)?;
        let j = self.diag.iter().position(|p| p == b)?;
        if i == j {
            return Some(Slot::Diag(i));
        }
        let key = (i.max(j), i.min(j));
        self.pairs.iter().position(|p| *p == key).map(Slot::Pair)
    }

    /// Sparse design rows of observable `o` for every Pauli input it reaches:
    /// maps `Q` to `(column, value)` entries of the row of `(PauliInput Q, o)`.
    pub fn observable_table(&self, o: &PauliString) -> DetMap<PauliString, Vec<(usize, f64)>> {
        let mut table: DetMap<PauliString, Vec<(usize, f64)>> = DetMap::default();
        let omask = o.support_mask();
        for q in 0..self.n {
            if omask >> q & 1 == 0 {
                continue;
            }
            for &(slot, mask) in &self.site_slots[q] {
                if (mask & omask).trailing_zeros() as usize != q {
                    continue;
                }
                self.slot_contribution(slot, o, &mut table);
            }
        }
        table
    }

    fn slot_contribution(
        &self,
        slot: Slot,
        o: &PauliString,
        table: &mut DetMap<PauliString, Vec<(usize, f64)>>,
    ) {
        match slot {
            Slot::H(k) => {
                let p = self.h[k];
                if p.commutes_unchecked(o) {
                    return;
                }
                let prod = p.mul_unchecked(o);
                let c = i_power(prod.phase + 1) * 2.0;
                table.entry(prod.pauli).or_default().push((k, c.re));
            }
            Slot::Diag(k) => {
                if !self.diag[k].commutes_unchecked(o) {
                    table
                        .entry(*o)
                        .or_default()
                        .push((self.offset_diag() + k, -2.0));
                }
            }
            Slot::Pair(k) => {
                let (i, j) = self.pairs[k];
                let (pi, pj) = (self.diag[i], self.diag[j]);
                let ci = pi.commutes_unchecked(o);
                let cj = pj.commutes_unchecked(o);
                if ci && cj {
                    return;
                }
                let jo = pj.mul_unchecked(o);
                let joi = jo.pauli.mul_unchecked(&pi);
                let mut c = i_power(jo.phase + joi.phase);
                if ci == cj {
                    // Both anticommute: P_j O P_i = -P_j P_i O, so the term is twice that.
                    c *= 2.0;
                }
                let entry = table.entry(joi.pauli).or_default();
                entry.push((self.offset_re() + k, 2.0 * c.re));
                entry.push((self.offset_im() + k, -2.0 * c.im));
            }
        }
    }

    /// Dense design row of a probe.
    pub fn design_row(&self, probe: &Probe) -> Vec<f64> {
        let table = self.observable_table(&probe.observable);
        self.row_from_table(&table, &probe.input)
    }

    fn row_from_table(
        &self,
        table: &DetMap<PauliString, Vec<(usize, f64)>>,
        input: &ProbeInput,
    ) -> Vec<f64> {
        let mut row = vec![0.0; self.dim()];
        let mut add = |q: &PauliString, s: f64| {
            if let Some(entries) = table.get(q) {
                for &(c, v) in entries {
                    row[c] += s * v;
                }
            }
        };
        match input {
            ProbeInput::PauliInput { q } => add(q, 1.0),
            ProbeInput::Eigenstate { q, sign } => {
                add(&PauliString::from_bits_unchecked(self.n, 0, 0), 1.0);
                add(q, *sign as f64);
            }
        }
        row
    }
}

/// Patch family of full candidate structures.
pub fn patch_family(s_h: &[PauliString], s_d: &[PauliString]) -> Result<Vec<Patch>> {
    Ok(ParameterIndex::full(s_h, s_d)?.patch_family())
}

/// A state-preparation and observable pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct Probe {
    pub input: ProbeInput,
    pub observable: PauliString,
    #[serde(serialize_with = "serialize_patch")]
    pub patch: Patch,
}

fn serialize_patch<S: serde::Serializer>(p: &Patch, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let sites = p.sites();
    let mut seq = s.serialize_seq(Some(sites.len()))?;
    for q in sites {
        seq.serialize_element(&q)?;
    }
    seq.end()
}

impl Probe {
    pub fn new(input: ProbeInput, observable: PauliString, patch: Patch) -> Result<Self> {
        let used = input.q().support().union(&observable.support());
        if used.mask() & !patch.mask() != 0 {
            return Err(Error::InvalidArgument(format!(
                "probe ({:?}, {observable}) is not supported on patch {patch}",
                input
            )));
        }
        Ok(Probe {
            input,
            observable,
            patch,
        })
    }

    /// `|supp(O) ∪ supp(Q)|`.
    pub fn locality(&self) -> usize {
        self.input
            .q()
            .support()
            .union(&self.observable.support())
            .len()
    }
}

fn flip_letter(c: char) -> char {
    match c {
        'X' => 'Y',
        'Y' => 'Z',
        _ => 'X',
    }
}

/// Pre-pass probe for one Hamiltonian candidate: `O` flips the letter of
/// the first support site, and the input is the `+1` eigenstate of `iOP`
/// with the phase folded into the sign.
pub fn prepass_probe(p: &PauliString) -> Result<Probe> {
    if p.is_identity() {
        return Err(Error::IdentityInput);
    }
    let q0 = p.support().sites()[0];
    let flipped = PauliString::single(p.n(), q0, flip_letter(p.letter(q0)))?;
    let o = PauliString::from_bits_unchecked(
        p.n(),
        (p.x_bits() & !(1 << q0)) | flipped.x_bits(),
        (p.z_bits() & !(1 << q0)) | flipped.z_bits(),
    );
    let prod = o.mul_unchecked(p);
    let phase = (prod.phase + 1) % 4;
    debug_assert!(phase.is_multiple_of(2));
    let sign = if phase == 0 { 1 } else { -1 };
    Probe::new(ProbeInput::eigenstate(prod.pauli, sign), o, p.support())
}

pub fn hamiltonian_prepass(s_h: &[PauliString]) -> Result<Vec<Probe>> {
    sorted_unique(s_h).iter().map(prepass_probe).collect()
}

struct Bucket {
    patch: Patch,
    k1: usize,
    k2: usize,
    probes: Option<Vec<(PauliString, PauliString)>>,
    pos: usize,
}

/// Round-robin scheduler over `(patch, w(O), w(Q))` buckets grouped by patch size.
struct Scheduler {
    n: usize,
    levels: Vec<Vec<Bucket>>,
    level: usize,
    cursor: usize,
    seed: u64,
}

impl Scheduler {
    fn new(n: usize, patches: &[Patch], seed: u64) -> Self {
        let max = patches.iter().map(|p| p.len()).max().unwrap_or(0);
        let mut levels: Vec<Vec<Bucket>> = (0..=max).map(|_| Vec::new()).collect();
        for patch in patches {
            let k = patch.len();
            for k1 in 1..=k {
                for k2 in 0..=k {
                    levels[k].push(Bucket {
                        patch: *patch,
                        k1,
                        k2,
                        probes: None,
                        pos: 0,
                    });
                }
            }
        }
        Scheduler {
            n,
            levels,
            level: 0,
            cursor: 0,
            seed,
        }
    }

    fn next(&mut self) -> Result<Option<Probe>> {
        loop {
            let Some(buckets) = self.levels.get_mut(self.level) else {
                return Ok(None);
            };
            if buckets.is_empty() {
                self.level += 1;
                self.cursor = 0;
                continue;
            }
            if self.cursor >= buckets.len() {
                self.cursor = 0;
            }
            let b = &mut buckets[self.cursor];
            if b.probes.is_none() {
                let os = patch_paulis_of_weight(&b.patch, self.n, b.k1)?;
                let qs = patch_paulis_of_weight(&b.patch, self.n, b.k2)?;
                let mut list: Vec<(PauliString, PauliString)> = os
                    .iter()
                    .flat_map(|o| qs.iter().map(move |q| (*o, *q)))
                    .collect();
                let key =
                    mix(self.seed
                        ^ mix(b.patch.mask() ^ ((b.k1 as u64) << 40) ^ ((b.k2 as u64) << 48)));
                list.shuffle(&mut ChaCha8Rng::seed_from_u64(key));
                b.probes = Some(list);
            }
            let list = b.probes.as_ref().expect("materialized above");
            if b.pos < list.len() {
                let (o, q) = list[b.pos];
                b.pos += 1;
                let patch = b.patch;
                self.cursor += 1;
                return Ok(Some(Probe {
                    input: ProbeInput::pauli(q),
                    observable: o,
                    patch,
                }));
            }
            buckets.remove(self.cursor);
        }
    }
}

/// Square design system produced by probe selection.
#[derive(Clone, Debug)]
pub struct DesignSystem {
    pub probes: Vec<Probe>,
    /// Row-major `dim x dim` design matrix.
    pub matrix: Vec<f64>,
    pub index: ParameterIndex,
    pub nu: f64,
    /// `(attempted probes, rank)` after every rank increase.
    pub rank_trace: Vec<(usize, usize)>,
    pub attempts: usize,
    pub prepass_probes: usize,
    pub prepass_rank_gain: usize,
    /// Extra non-square rows appended after full rank.
    pub extra_probes: Vec<Probe>,
    pub extra_rows: Vec<Vec<f64>>,
}

impl DesignSystem {
    pub fn dim(&self) -> usize {
        self.index.dim()
    }

    pub fn matrix_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim(), self.dim(), &self.matrix)
    }
}

/// Options of [`select_probes_with`].
#[derive(Clone, Copy, Debug)]
#[derive(Default)]
pub struct SelectionOptions {
    pub seed: u64,
    pub max_attempts: Option<usize>,
    /// Additional probes kept after full rank is reached.
    pub oversample: usize,
}


/// Probe selection over full candidate structures with default options.
pub fn select_probes(s_h: &[PauliString], s_d: &[PauliString]) -> Result<DesignSystem> {
    select_probes_with(
        &ParameterIndex::full(s_h, s_d)?,
        SelectionOptions::default(),
    )
}

/// Hamiltonian pre-pass followed by round-robin patchwise growth until the
/// design matrix reaches full rank.
pub fn select_probes_with(index: &ParameterIndex, opts: SelectionOptions) -> Result<DesignSystem> {
    let dim = index.dim();
    if dim == 0 {
        return Err(Error::InvalidArgument("no unknown parameters".into()));
    }
    let mut tracker = RankTracker::<f64>::new(dim);
    let mut probes = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut trace = Vec::new();
    let mut attempts = 0usize;
    let mut tables: DetMap<PauliString, DetMap<PauliString, Vec<(usize, f64)>>> = DetMap::default();

    let prepass = hamiltonian_prepass(index.h())?;
    let prepass_count = prepass.len();
    for probe in prepass {
        attempts += 1;
        let row = index.design_row(&probe);
        if tracker.try_add(&row)? {
            probes.push(probe);
            rows.push(row);
            trace.push((attempts, tracker.rank()));
            if tracker.is_full() {
                break;
            }
        }
    }
    let prepass_rank_gain = tracker.rank();

    let mut seen: HashSet<(PauliString, PauliString)> = HashSet::new();
    let mut scheduler = Scheduler::new(index.n(), &index.patch_family(), opts.seed);
    let mut extra_probes = Vec::new();
    let mut extra_rows = Vec::new();
    while !tracker.is_full() || extra_probes.len() < opts.oversample {
        if let Some(cap) = opts.max_attempts {
            if attempts >= cap && !tracker.is_full() {
                return Err(Error::RankStalled {
                    rank: tracker.rank(),
                    target: dim,
                    attempts,
                });
            }
        }
        let Some(probe) = scheduler.next()? else {
            if tracker.is_full() {
                break;
            }
            return Err(Error::RankStalled {
                rank: tracker.rank(),
                target: dim,
                attempts,
            });
        };
        if !seen.insert((probe.observable, probe.input.q())) {
            continue;
        }
        attempts += 1;
        let table = tables
            .entry(probe.observable)
            .or_insert_with(|| index.observable_table(&probe.observable));
        if !table.contains_key(&probe.input.q()) {
            continue;
        }
        let row = index.row_from_table(table, &probe.input);
        if tracker.is_full() {
            extra_probes.push(probe);
            extra_rows.push(row);
        } else if tracker.try_add(&row)? {
            probes.push(probe);
            rows.push(row);
            trace.push((attempts, tracker.rank()));
        }
    }
    let matrix: Vec<f64> = rows.into_iter().flatten().collect();
    let nu = Lu::factor(&matrix, dim)?.inverse_inf_norm();
    Ok(DesignSystem {
        probes,
        matrix,
        index: index.clone(),
        nu,
        rank_trace: trace,
        attempts,
        prepass_probes: prepass_count,
        prepass_rank_gain,
        extra_probes,
        extra_rows,
    })
}

/// Rank of the complete patchwise Pauli-input probe pool.
pub fn full_pool_rank<T: Field>(index: &ParameterIndex) -> Result<usize> {
    let mut tracker = RankTracker::<T>::new(index.dim());
    let n = index.n();
    for patch in index.patch_family() {
        for o in crate::pauli::enumerate_patch_paulis(&patch, n)? {
            if o.is_identity() {
                continue;
            }
            let table = index.observable_table(&o);
            let mut qs: Vec<&PauliString> = table.keys().collect();
            qs.sort();
            for q in qs {
                let row: Vec<T> = index
                    .row_from_table(&table, &ProbeInput::pauli(*q))
                    .into_iter()
                    .map(T::from_f64_lossy)
                    .collect();
                tracker.try_add(&row)?;
                if tracker.is_full() {
                    return Ok(tracker.rank());
                }
            }
        }
    }
    Ok(tracker.rank())
}

/// Conditioning factor of a square row-major matrix.
pub fn conditioning(matrix: &[f64], dim: usize) -> Result<f64> {
    crate::linalg::conditioning_factor(matrix, dim)
}

/// Chebyshev derivative of one probe signal at `t = 0`. With SPAM
/// retentions given, the signal is split into Pauli-input components, each
/// rescaled before combining.
pub fn estimate_probe_derivative(
    oracle: &ChannelOracle,
    probe: &Probe,
    schedule: &Schedule,
    delta_s: f64,
    spam: Option<SpamParams>,
) -> Result<f64> {
    let acc = Accuracy::new(schedule.eps_s, delta_s)?;
    let deriv = |input: ProbeInput| -> Result<f64> {
        let samples: Vec<f64> = schedule
            .nodes
            .iter()
            .map(|&t| oracle.expectation(&input, &probe.observable, t, acc))
            .collect::<Result<_>>()?;
        schedule.estimate_deriv1(&samples)
    };
    match spam {
        None => deriv(probe.input),
        Some(s) => {
            let o = &probe.observable;
            let component = |q: PauliString| -> Result<f64> {
                spam_rescale(deriv(ProbeInput::pauli(q))?, &q, o, s.r_prep, s.r_meas)
            };
            match probe.input {
                ProbeInput::PauliInput { q } => component(q),
                ProbeInput::Eigenstate { q, sign } => {
                    let identity = PauliString::identity(q.n())?;
                    Ok(component(identity)? + sign as f64 * component(q)?)
                }
            }
        }
    }
}

/// Simultaneous estimates of Pauli-input probe values `c_Q(t)` from random
/// product-eigenstate inputs and random single-qubit measurement bases,
/// combined by median of means. Eigenstate probes are assembled from their
/// identity and `Q` components.
pub fn shadow_estimate_all(
    oracle: &ChannelOracle,
    probes: &[Probe],
    t: f64,
    eps_s: f64,
    delta_s: f64,
) -> Result<Vec<f64>> {
    shadow_estimate_capped(oracle, probes, t, eps_s, delta_s, SHADOW_SHOT_CAP)
}

pub fn shadow_estimate_capped(
    oracle: &ChannelOracle,
    probes: &[Probe],
    t: f64,
    eps_s: f64,
    delta_s: f64,
    shot_cap: u64,
) -> Result<Vec<f64>> {
    Accuracy::new(eps_s, delta_s)?;
    let n = oracle.n();
    if probes.is_empty() {
        return Ok(Vec::new());
    }
    for p in probes {
        if p.locality() > SHADOW_LOCALITY_CAP {
            return Err(Error::LocalityCapExceeded {
                k: p.locality(),
                cap: SHADOW_LOCALITY_CAP,
            });
        }
    }
    let identity = PauliString::identity(n)?;
    // Distinct (observable, input Pauli) pairs to estimate.
    let mut pairs: Vec<(PauliString, PauliString)> = Vec::new();
    let mut pair_pos: HashMap<(PauliString, PauliString), usize> = HashMap::new();
    let mut need = |o: PauliString, q: PauliString, pairs: &mut Vec<(PauliString, PauliString)>| {
        *pair_pos.entry((o, q)).or_insert_with(|| {
            pairs.push((o, q));
            pairs.len() - 1
        })
    };
    let mut plan: Vec<(usize, Option<(usize, f64)>)> = Vec::new();
    let mut any_eigen = false;
    for p in probes {
        match p.input {
            ProbeInput::PauliInput { q } => plan.push((need(p.observable, q, &mut pairs), None)),
            ProbeInput::Eigenstate { q, sign } => {
                any_eigen = true;
                let a = need(p.observable, identity, &mut pairs);
                let b = need(p.observable, q, &mut pairs);
                plan.push((a, Some((b, sign as f64))));
            }
        }
    }
    let eps = if any_eigen { eps_s / 2.0 } else { eps_s };
    let max_w = pairs
        .iter()
        .map(|(o, q)| o.weight() + q.weight())
        .max()
        .unwrap_or(0);
    let group = (4.0 * 3f64.powi(max_w as i32) / (eps * eps)).ceil();
    let groups = (8.0 * (2.0 * pairs.len() as f64 / delta_s).ln())
        .ceil()
        .max(1.0);
    let total = group * groups;
    if total > shot_cap as f64 {
        return Err(Error::ShotBudgetOverflow {
            required: total,
            budget: shot_cap,
        });
    }
    let (group, groups) = (group as u64, groups as usize);
    oracle.add_shots(group as u128 * groups as u128);

    let spam = oracle.retention();
    let mut observables: Vec<PauliString> = pairs.iter().map(|(o, _)| *o).collect();
    observables.sort();
    observables.dedup();
    let evolved: Vec<Vec<(u64, u64, u64, f64)>> = observables
        .iter()
        .map(|o| {
            let v = oracle.ptm().evolve_cached(t, o)?;
            let rm = spam.meas_factor(o);
            Ok(v.iter()
                .map(|(p, c)| {
                    (
                        p.x_bits(),
                        p.z_bits(),
                        p.support_mask(),
                        rm * spam.prep_factor(p) * c,
                    )
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let obs_pos: HashMap<PauliString, usize> = observables
        .iter()
        .enumerate()
        .map(|(i, o)| (*o, i))
        .collect();
    let pair_obs: Vec<usize> = pairs.iter().map(|(o, _)| obs_pos[o]).collect();
    let pair_weight: Vec<f64> = pairs
        .iter()
        .map(|(o, q)| 3f64.powi((o.weight() + q.weight()) as i32))
        .collect();
    let full = if n >= 64 { u64::MAX } else { (1u64 << n) - 1 };

    let mut rng = oracle.rng(0x7368_6164, t, mix(pairs.len() as u64) ^ mix(eps.to_bits()));
    let mut group_means = vec![Vec::with_capacity(groups); pairs.len()];
    let mut outcome: Vec<Option<f64>> = vec![None; observables.len()];
    for _ in 0..groups {
        let mut sums = vec![0.0f64; pairs.len()];
        for _ in 0..group {
            let (sx, sz) = random_letters(&mut rng, n);
            let signs: u64 = rng.random::<u64>() & full;
            let (bx, bz) = random_letters(&mut rng, n);
            for (k, o) in observables.iter().enumerate() {
                let m = o.support_mask();
                outcome[k] = if (o.x_bits() ^ bx) & m == 0 && (o.z_bits() ^ bz) & m == 0 {
                    let mean: f64 = evolved[k]
                        .iter()
                        .filter(|(px, pz, pm, _)| (px ^ sx) & pm == 0 && (pz ^ sz) & pm == 0)
                        .map(|(_, _, pm, c)| {
                            if (signs & pm).count_ones() % 2 == 1 {
                                -c
                            } else {
                                *c
                            }
                        })
                        .sum();
                    let p = (0.5 * (1.0 + mean)).clamp(0.0, 1.0);
                    Some(if rng.random_bool(p) { 1.0 } else { -1.0 })
                } else {
                    None
                };
            }
            for (k, (_, q)) in pairs.iter().enumerate() {
                let Some(out) = outcome[pair_obs[k]] else {
                    continue;
                };
                let m = q.support_mask();
                if (q.x_bits() ^ sx) & m != 0 || (q.z_bits() ^ sz) & m != 0 {
                    continue;
                }
                let s = if (signs & m).count_ones() % 2 == 1 {
                    -1.0
                } else {
                    1.0
                };
                sums[k] += pair_weight[k] * s * out;
            }
        }
        for (k, s) in sums.into_iter().enumerate() {
            group_means[k].push(s / group as f64);
        }
    }
    let estimates: Vec<f64> = group_means.into_iter().map(median).collect();
    Ok(plan
        .into_iter()
        .map(|(a, b)| match b {
            None => estimates[a],
            Some((b, s)) => estimates[a] + s * estimates[b],
        })
        .collect())
}

fn random_letters<R: Rng>(rng: &mut R, n: usize) -> (u64, u64) {
    let mut x = 0u64;
    let mut z = 0u64;
    for q in 0..n {
        match rng.random_range(0..3u8) {
            0 => x |= 1 << q,
            1 => {
                x |= 1 << q;
                z |= 1 << q;
            }
            _ => z |= 1 << q,
        }
    }
    (x, z)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeMode {
    ProbeByProbe,
    Shadow,
}

impl std::str::FromStr for ProbeMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "probe" | "probe-by-probe" => Ok(ProbeMode::ProbeByProbe),
            "shadow" => Ok(ProbeMode::Shadow),
            _ => Err(Error::InvalidArgument(format!("unknown mode {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CoefficientOptions {
    pub eps: f64,
    pub delta: f64,
    pub mode: ProbeMode,
    pub selection: SelectionOptions,
    /// Known SPAM retentions used to rescale probe data.
    pub spam: Option<SpamParams>,
    pub shadow_shot_cap: u64,
}

impl CoefficientOptions {
    pub fn new(eps: f64, delta: f64) -> Self {
        CoefficientOptions {
            eps,
            delta,
            mode: ProbeMode::ProbeByProbe,
            selection: SelectionOptions::default(),
            spam: None,
            shadow_shot_cap: SHADOW_SHOT_CAP,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CoefficientEstimate {
    pub h_hat: std::collections::BTreeMap<PauliString, f64>,
    pub diss_support: Vec<PauliString>,
    #[serde(skip)]
    pub a_hat: DMatrix<Complex64>,
    pub residual: f64,
    pub deriv_accuracy: f64,
    pub nu: f64,
    pub lambda: f64,
    pub schedule: ScheduleParams<f64>,
    pub probes_used: usize,
    pub queries_used: QueryCounts,
    /// Estimated parameter vector in index order.
    pub x_hat: Vec<f64>,
    pub derivatives: Vec<f64>,
}

impl CoefficientEstimate {
    /// Largest error against the coefficients of `model`.
    pub fn max_error(&self, model: &Lindbladian) -> f64 {
        let mut err = 0.0f64;
        let mut keys: BTreeSet<PauliString> = self.h_hat.keys().copied().collect();
        keys.extend(model.hamiltonian().keys().copied());
        for p in keys {
            err = err.max((self.h_hat.get(&p).copied().unwrap_or(0.0) - model.h(&p)).abs());
        }
        let mut support: BTreeSet<PauliString> = self.diss_support.iter().copied().collect();
        support.extend(model.diss_support().iter().copied());
        for a in &support {
            for b in &support {
                err = err.max((self.a(a, b) - model.a(a, b)).norm());
            }
        }
        err
    }

    pub fn a(&self, p: &PauliString, q: &PauliString) -> Complex64 {
        let i = self.diss_support.iter().position(|x| x == p);
        let j = self.diss_support.iter().position(|x| x == q);
        match (i, j) {
            (Some(i), Some(j)) => self.a_hat[(i, j)],
            _ => Complex64::new(0.0, 0.0),
        }
    }
}

/// Derivative-bound scale for a design: twice the largest of the candidate
/// dual-graph degree and the probe-observable neighborhoods, or `2 M̂` when
/// that is zero.
pub fn coefficient_lambda(design: &DesignSystem) -> f64 {
    let index = &design.index;
    let d = design
        .probes
        .iter()
        .chain(&design.extra_probes)
        .map(|p| index.neighborhood(&p.observable))
        .fold(index.dual_degree(), usize::max);
    if d == 0 {
        2.0 * index.dim() as f64
    } else {
        2.0 * d as f64
    }
}

/// Full coefficient learning over complete candidate structures.
pub fn learn_coefficients(
    oracle: &ChannelOracle,
    s_h: &[PauliString],
    s_d: &[PauliString],
    eps: f64,
    delta: f64,
    mode: ProbeMode,
) -> Result<CoefficientEstimate> {
    let mut opts = CoefficientOptions::new(eps, delta);
    opts.mode = mode;
    learn_coefficients_with(oracle, &ParameterIndex::full(s_h, s_d)?, &opts)
}

pub fn learn_coefficients_with(
    oracle: &ChannelOracle,
    index: &ParameterIndex,
    opts: &CoefficientOptions,
) -> Result<CoefficientEstimate> {
    if !(opts.eps > 0.0) || !(opts.delta > 0.0 && opts.delta < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "need eps > 0 and 0 < delta < 1, got ({}, {})",
            opts.eps, opts.delta
        )));
    }
    if index.n() != oracle.n() {
        return Err(Error::SizeMismatch {
            left: oracle.n(),
            right: index.n(),
        });
    }
    let design = select_probes_with(index, opts.selection)?;
    learn_from_design(oracle, &design, opts)
}

/// Acquire derivative data for an existing design and solve.
pub fn learn_from_design(
    oracle: &ChannelOracle,
    design: &DesignSystem,
    opts: &CoefficientOptions,
) -> Result<CoefficientEstimate> {
    let before = oracle.counts();
    let dim = design.dim();
    let eps_d = (opts.eps / design.nu).max(EPS_D_FLOOR);
    let lambda = coefficient_lambda(design);
    let params = params_first_factorial(1.0, lambda, eps_d)?;
    let schedule = Schedule::from_params(params)?;
    let all_probes: Vec<Probe> = design
        .probes
        .iter()
        .chain(&design.extra_probes)
        .copied()
        .collect();

    let derivs: Vec<f64> = match opts.mode {
        ProbeMode::ProbeByProbe => {
            let delta_s = opts.delta / ((schedule.r + 1) as f64 * dim as f64);
            all_probes
                .par_iter()
                .map(|p| estimate_probe_derivative(oracle, p, &schedule, delta_s, opts.spam))
                .collect::<Result<_>>()?
        }
        ProbeMode::Shadow => {
            let delta_s = opts.delta / (schedule.r + 1) as f64;
            let per_node: Vec<Vec<f64>> = schedule
                .nodes
                .iter()
                .map(|&t| {
                    shadow_estimate_capped(
                        oracle,
                        &all_probes,
                        t,
                        schedule.eps_s,
                        delta_s,
                        opts.shadow_shot_cap,
                    )
                })
                .collect::<Result<_>>()?;
            let mut out = Vec::with_capacity(all_probes.len());
            for (k, p) in all_probes.iter().enumerate() {
                let samples: Vec<f64> = per_node.iter().map(|v| v[k]).collect();
                let d = schedule.estimate_deriv1(&samples)?;
                out.push(match (opts.spam, p.input) {
                    (Some(s), ProbeInput::PauliInput { q }) => {
                        spam_rescale(d, &q, &p.observable, s.r_prep, s.r_meas)?
                    }
                    (Some(_), ProbeInput::Eigenstate { .. }) => {
                        return Err(Error::InvalidArgument(
                            "shadow mode with SPAM rescaling needs Pauli-input probes".into(),
                        ))
                    }
                    (None, _) => d,
                });
            }
            out
        }
    };

    let x = if design.extra_rows.is_empty() {
        Lu::factor(&design.matrix, dim)?.solve(&derivs[..dim])?
    } else {
        solve_normal_equations(design, &derivs)?
    };
    let mut residual = 0.0f64;
    for (k, d) in derivs.iter().enumerate() {
        let row: &[f64] = if k < dim {
            &design.matrix[k * dim..(k + 1) * dim]
        } else {
            &design.extra_rows[k - dim]
        };
        let fit: f64 = row.iter().zip(&x).map(|(a, b)| a * b).sum();
        residual = residual.max((fit - d).abs());
    }

    let index = &design.index;
    let h_hat = index
        .h()
        .iter()
        .enumerate()
        .map(|(k, p)| (*p, x[k]))
        .collect();
    let d = index.diag().len();
    let mut a_hat = DMatrix::from_element(d, d, Complex64::new(0.0, 0.0));
    for k in 0..d {
        a_hat[(k, k)] = Complex64::new(x[index.offset_diag() + k], 0.0);
    }
    for (k, &(i, j)) in index.pairs().iter().enumerate() {
        let v = Complex64::new(x[index.offset_re() + k], x[index.offset_im() + k]);
        a_hat[(i, j)] = v;
        a_hat[(j, i)] = v.conj();
    }
    let after = oracle.counts();
    Ok(CoefficientEstimate {
        h_hat,
        diss_support: index.diag().to_vec(),
        a_hat,
        residual,
        deriv_accuracy: eps_d,
        nu: design.nu,
        lambda,
        schedule: params,
        probes_used: all_probes.len(),
        queries_used: QueryCounts {
            chi_queries: after.chi_queries - before.chi_queries,
            expectation_queries: after.expectation_queries - before.expectation_queries,
            shots: after.shots - before.shots,
        },
        x_hat: x,
        derivatives: derivs,
    })
}

fn solve_normal_equations(design: &DesignSystem, derivs: &[f64]) -> Result<Vec<f64>> {
    let dim = design.dim();
    let rows: Vec<&[f64]> = (0..dim)
        .map(|k| &design.matrix[k * dim..(k + 1) * dim])
        .chain(design.extra_rows.iter().map(|r| r.as_slice()))
        .collect();
    let mut ata = vec![0.0; dim * dim];
    let mut atb = vec![0.0; dim];
    for (row, d) in rows.iter().zip(derivs) {
        let nz: Vec<(usize, f64)> = row
            .iter()
            .copied()
            .enumerate()
            .filter(|(_, v)| *v != 0.0)
            .collect();
        for &(i, a) in &nz {
            atb[i] += a * d;
            for &(j, b) in &nz {
                ata[i * dim + j] += a * b;
            }
        }
    }
    Lu::factor(&ata, dim)?.solve(&atb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::Backend;
    use num_rational::BigRational;

    fn p(s: &str) -> PauliString {
        s.parse().unwrap()
    }

    #[test]
    fn design_entries_single_qubit() {
        let index = ParameterIndex::full(&[p("Y")], &[p("Z")]).unwrap();
        let probe = Probe::new(ProbeInput::pauli(p("Z")), p("X"), Patch::from_mask(1)).unwrap();
        assert_eq!(index.design_row(&probe), vec![2.0, 0.0]);
        let probe = Probe::new(ProbeInput::pauli(p("X")), p("X"), Patch::from_mask(1)).unwrap();
        assert_eq!(index.design_row(&probe), vec![0.0, -2.0]);
        let disjoint = ParameterIndex::full(&[p("ZI")], &[p("XI")]).unwrap();
        let probe = Probe::new(ProbeInput::pauli(p("IZ")), p("IX"), Patch::from_mask(2)).unwrap();
        assert!(disjoint.design_row(&probe).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn prepass_examples() {
        let probe = prepass_probe(&p("Z")).unwrap();
        assert_eq!(probe.observable, p("X"));
        assert_eq!(probe.input, ProbeInput::eigenstate(p("Y"), 1));
        let probe = prepass_probe(&p("XX")).unwrap();
        assert_eq!(probe.observable, p("YX"));
        assert!(!probe.observable.commutes(&p("XX")).unwrap());
        // i (YX)(XX) = i (YX·X)(X·X) = i(-iZ) I = Z on qubit 0
        assert_eq!(probe.input, ProbeInput::eigenstate(p("ZI"), 1));
    }

    #[test]
    fn selection_examples() {
        let d = select_probes(&[p("X")], &[]).unwrap();
        assert_eq!(d.dim(), 1);
        assert_eq!(d.matrix, vec![-2.0]);
        assert!((d.nu - 0.5).abs() < 1e-15);
        let d = select_probes(&[], &[p("Z")]).unwrap();
        assert_eq!(d.matrix, vec![-2.0]);
        assert!((d.nu - 0.5).abs() < 1e-15);
    }

    #[test]
    fn patch_family_examples() {
        assert_eq!(
            patch_family(&[p("XI")], &[]).unwrap(),
            vec![Patch::from_mask(1)]
        );
        let fam = patch_family(&[], &[p("ZI"), p("IZ")]).unwrap();
        assert_eq!(fam.len(), 3);
    }

    #[test]
    fn full_pool_is_injective_on_two_qubits() {
        let index =
            ParameterIndex::full(&[p("XY"), p("ZI")], &[p("XI"), p("IY"), p("ZZ")]).unwrap();
        assert_eq!(full_pool_rank::<f64>(&index).unwrap(), index.dim());
        assert_eq!(full_pool_rank::<BigRational>(&index).unwrap(), index.dim());
        let d = select_probes_with(&index, SelectionOptions::default()).unwrap();
        assert_eq!(d.probes.len(), index.dim());
    }

    #[test]
    fn exact_recovery_examples() {
        let deph = Lindbladian::diagonal(1, [], [(p("Z"), 0.5)]).unwrap();
        let oracle = ChannelOracle::new(deph, Backend::Exact);
        let est = learn_coefficients(
            &oracle,
            &[p("Z")],
            &[p("Z")],
            0.05,
            0.05,
            ProbeMode::ProbeByProbe,
        )
        .unwrap();
        assert!(est.h_hat[&p("Z")].abs() < 1e-8);
        assert!((est.a(&p("Z"), &p("Z")).re - 0.5).abs() < 1e-8);

        let rabi = Lindbladian::hamiltonian_only(1, [(p("X"), 0.25)]).unwrap();
        let oracle = ChannelOracle::new(rabi, Backend::Exact);
        let est = learn_coefficients(&oracle, &[p("X")], &[], 0.05, 0.05, ProbeMode::ProbeByProbe)
            .unwrap();
        assert!((est.h_hat[&p("X")] - 0.25).abs() < 1e-8);
    }

    #[test]
    fn correlated_dissipator_round_trip() {
        let a = DMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(0.5, 0.0),
                Complex64::new(0.2, 0.25),
                Complex64::new(0.2, -0.25),
                Complex64::new(0.6, 0.0),
            ],
        );
        let model = Lindbladian::new(2, [(p("ZX"), -0.4)], vec![p("XI"), p("IY")], a).unwrap();
        let oracle = ChannelOracle::new(model.clone(), Backend::Exact);
        let est = learn_coefficients(
            &oracle,
            &[p("ZX"), p("YY")],
            &[p("XI"), p("IY")],
            0.05,
            0.05,
            ProbeMode::ProbeByProbe,
        )
        .unwrap();
        assert!(
            est.max_error(&model) < 1e-7,
            "error {}",
            est.max_error(&model)
        );
        assert!(est.h_hat[&p("YY")].abs() < 1e-7);
    }

    #[test]
    fn prepass_derivative_isolates_h() {
        let model = Lindbladian::hamiltonian_only(2, [(p("XZ"), 0.3), (p("YI"), -0.7)]).unwrap();
        let oracle = ChannelOracle::new(model, Backend::Exact);
        let schedule =
            Schedule::from_params(params_first_factorial(1.0, 4.0, 0.01).unwrap()).unwrap();
        for (pauli, h) in [("XZ", 0.3), ("YI", -0.7)] {
            let probe = prepass_probe(&p(pauli)).unwrap();
            let d = estimate_probe_derivative(&oracle, &probe, &schedule, 0.01, None).unwrap();
            assert!((d + 2.0 * h).abs() < 1e-8);
        }
    }

    #[test]
    fn shadow_time_zero() {
        let model = Lindbladian::diagonal(2, [], [(p("ZI"), 0.3)]).unwrap();
        let oracle = ChannelOracle::new(model, Backend::Sampled { shots: 1, seed: 5 });
        let probes = vec![
            Probe::new(ProbeInput::pauli(p("XI")), p("XI"), Patch::from_mask(1)).unwrap(),
            Probe::new(ProbeInput::pauli(p("ZZ")), p("ZZ"), Patch::from_mask(3)).unwrap(),
        ];
        let est = shadow_estimate_all(&oracle, &probes, 0.0, 0.25, 0.05).unwrap();
        for e in est {
            assert!((e - 1.0).abs() <= 0.25);
        }
    }
}
