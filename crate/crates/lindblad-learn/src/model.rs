//! Sparse Lindbladian in the Pauli basis.
//!
//! The generator acts as
//! `L(rho) = -i sum_k h_k [P_k, rho] + sum_{i,j} a_ij (P_i rho P_j - 1/2 {P_j P_i, rho})`
//! with a Hermitian positive semidefinite Kossakowski matrix `a` indexed by
//! the dissipator support list.

use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pauli::{Patch, PauliString};

/// Coefficients with magnitude at or below this count as zero.
pub const ZERO_THRESHOLD: f64 = 1e-14;
/// Allowed deviation of the Kossakowski matrix from Hermiticity.
pub const HERMITIAN_TOLERANCE: f64 = 1e-12;
/// Smallest eigenvalue accepted as positive semidefinite.
pub const PSD_TOLERANCE: f64 = -1e-10;
/// Largest qubit count for which the Hamiltonian spectrum is computed exactly.
pub const EXACT_SPECTRUM_MAX_QUBITS: usize = 10;

#[derive(Clone, Debug)]
pub struct Lindbladian {
    n: usize,
    hamiltonian: BTreeMap<PauliString, f64>,
    diss_support: Vec<PauliString>,
    kossakowski: DMatrix<Complex64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SparsityReport {
    pub m_h: usize,
    pub m_d: usize,
    pub m: usize,
    pub eta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ComponentKind {
    Hamiltonian(PauliString),
    Dissipative(PauliString, PauliString),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LindbladComponent {
    pub kind: ComponentKind,
    pub support: Patch,
}

impl LindbladComponent {
    pub fn hamiltonian(p: PauliString) -> Self {
        LindbladComponent {
            kind: ComponentKind::Hamiltonian(p),
            support: p.support(),
        }
    }

    pub fn dissipative(k: PauliString, m: PauliString) -> Self {
        LindbladComponent {
            kind: ComponentKind::Dissipative(k, m),
            support: k.support().union(&m.support()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DualGraph {
    pub vertices: Vec<LindbladComponent>,
    pub edges: Vec<(usize, usize)>,
    pub max_degree: usize,
}

/// Graph on components with an edge whenever two supports intersect.
pub fn dual_graph(components: &[LindbladComponent]) -> DualGraph {
    let mut edges = Vec::new();
    let mut degree = vec![0usize; components.len()];
    for i in 0..components.len() {
        for j in i + 1..components.len() {
            if components[i].support.intersects(&components[j].support) {
                edges.push((i, j));
                degree[i] += 1;
                degree[j] += 1;
            }
        }
    }
    DualGraph {
        vertices: components.to_vec(),
        max_degree: degree.into_iter().max().unwrap_or(0),
        edges,
    }
}

/// Maximum dual-graph degree computed by grouping components per support.
///
/// Equivalent to `dual_graph(..).max_degree` without materializing edges,
/// which matters when the component count is quadratic in the candidates.
pub fn max_degree_by_support(supports: &HashMap<u64, usize>) -> usize {
    let groups: Vec<(u64, usize)> = supports.iter().map(|(&m, &c)| (m, c)).collect();
    let mut best = 0usize;
    for &(mask, count) in &groups {
        if count == 0 {
            continue;
        }
        let overlapping: usize = groups
            .iter()
            .filter(|(other, _)| other & mask != 0)
            .map(|(_, c)| c)
            .sum();
        best = best.max(overlapping.saturating_sub(1));
    }
    best
}

/// Dual-graph degree of all components induced by candidate supports:
/// one per candidate Hamiltonian term and one per ordered dissipator pair.
pub fn candidate_dual_degree(s_h: &[PauliString], s_d: &[PauliString]) -> usize {
    let mut groups: HashMap<u64, usize> = HashMap::new();
    for p in s_h {
        *groups.entry(p.support_mask()).or_default() += 1;
    }
    for a in s_d {
        for b in s_d {
            *groups
                .entry(a.support_mask() | b.support_mask())
                .or_default() += 1;
        }
    }
    max_degree_by_support(&groups)
}

impl Lindbladian {
    /// Build and validate a model.
    pub fn new(
        n: usize,
        hamiltonian: impl IntoIterator<Item = (PauliString, f64)>,
        diss_support: Vec<PauliString>,
        kossakowski: DMatrix<Complex64>,
    ) -> Result<Self> {
        let mut ham = BTreeMap::new();
        for (p, h) in hamiltonian {
            if p.n() != n {
                return Err(Error::SizeMismatch {
                    left: n,
                    right: p.n(),
                });
            }
            if !h.is_finite() {
                return Err(Error::InconsistentModel(format!(
                    "non-finite coefficient for {p}"
                )));
            }
            if ham.insert(p, h).is_some() {
                return Err(Error::InconsistentModel(format!(
                    "duplicate Hamiltonian term {p}"
                )));
            }
        }
        let model = Lindbladian {
            n,
            hamiltonian: ham,
            diss_support,
            kossakowski,
        };
        model.validate()?;
        Ok(model)
    }

    /// Model without dissipation.
    pub fn hamiltonian_only(
        n: usize,
        terms: impl IntoIterator<Item = (PauliString, f64)>,
    ) -> Result<Self> {
        Lindbladian::new(n, terms, Vec::new(), DMatrix::zeros(0, 0))
    }

    /// Model with a diagonal Kossakowski matrix.
    pub fn diagonal(
        n: usize,
        hamiltonian: impl IntoIterator<Item = (PauliString, f64)>,
        rates: impl IntoIterator<Item = (PauliString, f64)>,
    ) -> Result<Self> {
        let (support, diag): (Vec<_>, Vec<_>) = rates.into_iter().unzip();
        let k = DMatrix::from_fn(diag.len(), diag.len(), |i, j| {
            if i == j {
                Complex64::new(diag[i], 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        Lindbladian::new(n, hamiltonian, support, k)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn hamiltonian(&self) -> &BTreeMap<PauliString, f64> {
        &self.hamiltonian
    }

    pub fn diss_support(&self) -> &[PauliString] {
        &self.diss_support
    }

    pub fn kossakowski(&self) -> &DMatrix<Complex64> {
        &self.kossakowski
    }

    /// Hamiltonian coefficient of `p` (zero when absent).
    pub fn h(&self, p: &PauliString) -> f64 {
        self.hamiltonian.get(p).copied().unwrap_or(0.0)
    }

    /// Kossakowski entry `a_{pq}` (zero when either Pauli is outside the support).
    pub fn a(&self, p: &PauliString, q: &PauliString) -> Complex64 {
        let i = self.diss_support.iter().position(|x| x == p);
        let j = self.diss_support.iter().position(|x| x == q);
        match (i, j) {
            (Some(i), Some(j)) => self.kossakowski[(i, j)],
            _ => Complex64::new(0.0, 0.0),
        }
    }

    /// Check every invariant and report the sparsity data.
    pub fn validate(&self) -> Result<SparsityReport> {
        let n = self.n;
        if n == 0 || n > crate::pauli::MAX_QUBITS {
            return Err(Error::UnsupportedQubitCount(n));
        }
        for p in self.hamiltonian.keys() {
            if p.is_identity() {
                return Err(Error::IdentityTermPresent("Hamiltonian"));
            }
        }
        let d = self.diss_support.len();
        if self.kossakowski.nrows() != d || self.kossakowski.ncols() != d {
            return Err(Error::InconsistentModel(format!(
                "Kossakowski matrix is {}x{} but the support has {d} entries",
                self.kossakowski.nrows(),
                self.kossakowski.ncols()
            )));
        }
        for (i, p) in self.diss_support.iter().enumerate() {
            if p.n() != n {
                return Err(Error::SizeMismatch {
                    left: n,
                    right: p.n(),
                });
            }
            if p.is_identity() {
                return Err(Error::IdentityTermPresent("dissipator support"));
            }
            if self.diss_support[..i].contains(p) {
                return Err(Error::InconsistentModel(format!(
                    "duplicate dissipator Pauli {p}"
                )));
            }
        }
        let mut deviation = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                let v = self.kossakowski[(i, j)];
                if !v.re.is_finite() || !v.im.is_finite() {
                    return Err(Error::InconsistentModel(
                        "non-finite Kossakowski entry".into(),
                    ));
                }
                deviation = deviation.max((v - self.kossakowski[(j, i)].conj()).norm());
            }
        }
        if deviation > HERMITIAN_TOLERANCE {
            return Err(Error::NonHermitianKossakowski { deviation });
        }
        if d > 0 {
            let herm = (&self.kossakowski + self.kossakowski.adjoint()) * Complex64::new(0.5, 0.0);
            let eig = herm.symmetric_eigenvalues();
            let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
            if min < PSD_TOLERANCE {
                return Err(Error::NotPsd {
                    min_eigenvalue: min,
                });
            }
        }
        for i in 0..d {
            if self.kossakowski[(i, i)].re.abs() <= ZERO_THRESHOLD {
                for j in 0..d {
                    if self.kossakowski[(i, j)].norm() > 1e-9 {
                        return Err(Error::InconsistentModel(format!(
                            "a_ii = 0 for {} but row {i} has nonzero entries",
                            self.diss_support[i]
                        )));
                    }
                }
            }
        }
        Ok(self.sparsity())
    }

    pub fn sparsity(&self) -> SparsityReport {
        let m_h = self.hamiltonian.len();
        let m_d = self.diss_support.len();
        let mut eta = f64::INFINITY;
        for &h in self.hamiltonian.values() {
            if h.abs() > ZERO_THRESHOLD {
                eta = eta.min(h.abs());
            }
        }
        for v in self.kossakowski.iter() {
            if v.norm() > ZERO_THRESHOLD {
                eta = eta.min(v.norm());
            }
        }
        SparsityReport {
            m_h,
            m_d,
            m: m_h + m_d * m_d,
            eta: if eta.is_finite() { eta } else { 0.0 },
        }
    }

    /// Paulis carrying a nonzero Hamiltonian coefficient.
    pub fn hamiltonian_structure(&self) -> Vec<PauliString> {
        self.hamiltonian
            .iter()
            .filter(|(_, h)| h.abs() > ZERO_THRESHOLD)
            .map(|(p, _)| *p)
            .collect()
    }

    /// Paulis carrying a nonzero diagonal Kossakowski entry.
    pub fn dissipator_structure(&self) -> Vec<PauliString> {
        let mut v: Vec<PauliString> = self
            .diss_support
            .iter()
            .enumerate()
            .filter(|(i, _)| self.kossakowski[(*i, *i)].re > ZERO_THRESHOLD)
            .map(|(_, p)| *p)
            .collect();
        v.sort();
        v
    }

    /// Components with nonzero coefficients.
    pub fn components(&self) -> Vec<LindbladComponent> {
        let mut out: Vec<LindbladComponent> = self
            .hamiltonian_structure()
            .into_iter()
            .map(LindbladComponent::hamiltonian)
            .collect();
        for (i, k) in self.diss_support.iter().enumerate() {
            for (j, m) in self.diss_support.iter().enumerate() {
                if self.kossakowski[(i, j)].norm() > ZERO_THRESHOLD {
                    out.push(LindbladComponent::dissipative(*k, *m));
                }
            }
        }
        out
    }

    pub fn dual_graph(&self) -> DualGraph {
        dual_graph(&self.components())
    }

    /// Largest coefficient magnitude.
    pub fn max_abs_coefficient(&self) -> f64 {
        let h = self
            .hamiltonian
            .values()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        self.kossakowski.iter().fold(h, |m, v| m.max(v.norm()))
    }

    /// Copy scaled so the largest coefficient has magnitude one, with the factor used.
    pub fn rescaled(&self) -> (Lindbladian, f64) {
        let m = self.max_abs_coefficient();
        if m <= ZERO_THRESHOLD {
            return (self.clone(), 1.0);
        }
        let mut out = self.clone();
        for v in out.hamiltonian.values_mut() {
            *v /= m;
        }
        out.kossakowski /= Complex64::new(m, 0.0);
        (out, 1.0 / m)
    }

    /// Dense Hamiltonian matrix.
    pub fn dense_hamiltonian(&self) -> DMatrix<Complex64> {
        let dim = 1usize << self.n;
        let mut h = DMatrix::zeros(dim, dim);
        for (p, &c) in &self.hamiltonian {
            h += p.to_dense() * Complex64::new(c, 0.0);
        }
        h
    }

    /// Spectral range of the Hamiltonian: exact for small systems, otherwise `2 sum |h|`.
    pub fn hamiltonian_range(&self) -> f64 {
        if self.hamiltonian.is_empty() {
            return 0.0;
        }
        if self.n <= EXACT_SPECTRUM_MAX_QUBITS {
            let eig = self.dense_hamiltonian().symmetric_eigenvalues();
            let max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
            max - min
        } else {
            2.0 * self.hamiltonian.values().map(|h| h.abs()).sum::<f64>()
        }
    }

    /// Smoothness scale `Delta(H) + 2 sum |a_mn|`, never above `2M`.
    pub fn lambda_bound(&self) -> f64 {
        let diss: f64 = self.kossakowski.iter().map(|v| v.norm()).sum();
        self.hamiltonian_range() + 2.0 * diss
    }

    pub fn to_file(&self) -> ModelFile {
        let d = self.diss_support.len();
        ModelFile {
            n: self.n,
            hamiltonian: self
                .hamiltonian
                .iter()
                .map(|(p, &coeff)| HamTerm {
                    pauli: p.to_string(),
                    coeff,
                })
                .collect(),
            dissipator: DissipatorFile {
                support: self.diss_support.iter().map(|p| p.to_string()).collect(),
                kossakowski_re: (0..d)
                    .map(|i| (0..d).map(|j| self.kossakowski[(i, j)].re).collect())
                    .collect(),
                kossakowski_im: (0..d)
                    .map(|i| (0..d).map(|j| self.kossakowski[(i, j)].im).collect())
                    .collect(),
            },
        }
    }

    pub fn from_file(f: &ModelFile) -> Result<Self> {
        let parse = |s: &str| -> Result<PauliString> {
            let p: PauliString = s.parse()?;
            if p.n() != f.n {
                return Err(Error::SizeMismatch {
                    left: f.n,
                    right: p.n(),
                });
            }
            Ok(p)
        };
        let ham = f
            .hamiltonian
            .iter()
            .map(|t| Ok((parse(&t.pauli)?, t.coeff)))
            .collect::<Result<Vec<_>>>()?;
        let support = f
            .dissipator
            .support
            .iter()
            .map(|s| parse(s))
            .collect::<Result<Vec<_>>>()?;
        let d = support.len();
        let re = &f.dissipator.kossakowski_re;
        let im = &f.dissipator.kossakowski_im;
        let shape_ok = |m: &Vec<Vec<f64>>| m.len() == d && m.iter().all(|r| r.len() == d);
        if !shape_ok(re) || !(im.is_empty() || shape_ok(im)) {
            return Err(Error::InconsistentModel(
                "Kossakowski arrays do not match the support size".into(),
            ));
        }
        let k = DMatrix::from_fn(d, d, |i, j| {
            Complex64::new(re[i][j], if im.is_empty() { 0.0 } else { im[i][j] })
        });
        Lindbladian::new(f.n, ham, support, k)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: ModelFile = serde_json::from_str(s)?;
        Lindbladian::from_file(&f)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct HamTerm {
    pub pauli: String,
    pub coeff: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DissipatorFile {
    pub support: Vec<String>,
    pub kossakowski_re: Vec<Vec<f64>>,
    #[serde(default)]
    pub kossakowski_im: Vec<Vec<f64>>,
}

/// On-disk model layout.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ModelFile {
    pub n: usize,
    pub hamiltonian: Vec<HamTerm>,
    pub dissipator: DissipatorFile,
}

/// Settings for [`random_lindbladian`].
#[derive(Clone, Copy, Debug)]
pub struct RandomModelSpec {
    pub n: usize,
    pub m_h: usize,
    pub m_d: usize,
    /// Smallest magnitude of every Hamiltonian coefficient and diagonal rate.
    pub eta: f64,
    /// Largest Pauli weight drawn.
    pub max_weight: usize,
}

fn random_pauli<R: Rng + ?Sized>(n: usize, max_weight: usize, rng: &mut R) -> PauliString {
    loop {
        let w = rng.random_range(1..=max_weight.min(n).max(1));
        let mut sites: Vec<usize> = (0..n).collect();
        for i in 0..w {
            let j = rng.random_range(i..n);
            sites.swap(i, j);
        }
        let mut x = 0u64;
        let mut z = 0u64;
        for &q in &sites[..w] {
            match rng.random_range(0..3) {
                0 => x |= 1 << q,
                1 => {
                    x |= 1 << q;
                    z |= 1 << q;
                }
                _ => z |= 1 << q,
            }
        }
        let p = PauliString::from_bits_unchecked(n, x, z);
        if !p.is_identity() {
            return p;
        }
    }
}

fn distinct_paulis<R: Rng + ?Sized>(
    n: usize,
    count: usize,
    max_weight: usize,
    rng: &mut R,
) -> Vec<PauliString> {
    let mut out: Vec<PauliString> = Vec::with_capacity(count);
    while out.len() < count {
        let p = random_pauli(n, max_weight, rng);
        if !out.contains(&p) {
            out.push(p);
        }
    }
    out
}

/// Random valid model: Hamiltonian coefficients in `±[eta, 1]`, diagonal
/// rates in `[eta, 1]` and a random correlation structure off the diagonal.
pub fn random_lindbladian<R: Rng + ?Sized>(
    spec: &RandomModelSpec,
    rng: &mut R,
) -> Result<Lindbladian> {
    let n = spec.n;
    let available = 4usize.saturating_pow(n.min(16) as u32) - 1;
    if spec.m_h > available || spec.m_d > available || spec.eta <= 0.0 || spec.eta > 1.0 {
        return Err(Error::InvalidArgument(
            "random model request cannot be satisfied".into(),
        ));
    }
    let ham_paulis = distinct_paulis(n, spec.m_h, spec.max_weight, rng);
    let ham: Vec<(PauliString, f64)> = ham_paulis
        .into_iter()
        .map(|p| {
            let mag = rng.random_range(spec.eta..=1.0);
            (p, if rng.random_bool(0.5) { mag } else { -mag })
        })
        .collect();
    let support = distinct_paulis(n, spec.m_d, spec.max_weight, rng);
    let d = support.len();
    let rank = rng.random_range(1..=d.max(1));
    let g = DMatrix::from_fn(d, rank, |_, _| {
        Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    });
    let mut corr = &g * g.adjoint();
    let mix = rng.random_range(0.0..1.0);
    for i in 0..d {
        for j in 0..d {
            if i != j {
                corr[(i, j)] *= mix;
            }
        }
    }
    let diag: Vec<f64> = (0..d).map(|i| corr[(i, i)].re.max(1e-300)).collect();
    let rates: Vec<f64> = (0..d).map(|_| rng.random_range(spec.eta..=1.0)).collect();
    let k = DMatrix::from_fn(d, d, |i, j| {
        if i == j {
            Complex64::new(rates[i], 0.0)
        } else {
            corr[(i, j)] / (diag[i] * diag[j]).sqrt() * (rates[i] * rates[j]).sqrt()
        }
    });
    let k = (&k + k.adjoint()) * Complex64::new(0.5, 0.0);
    Lindbladian::new(n, ham, support, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn p(s: &str) -> PauliString {
        s.parse().unwrap()
    }

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn sparsity_examples() {
        let deph = Lindbladian::diagonal(1, [], [(p("Z"), 0.5)]).unwrap();
        let r = deph.validate().unwrap();
        assert_eq!((r.m_h, r.m_d, r.m), (0, 1, 1));
        assert_eq!(r.eta, 0.5);
        let ham = Lindbladian::hamiltonian_only(1, [(p("X"), 0.25)]).unwrap();
        let r = ham.validate().unwrap();
        assert_eq!(r.m, 1);
        assert_eq!(r.eta, 0.25);
    }

    #[test]
    fn rejects_invalid_kossakowski() {
        let k = DMatrix::from_row_slice(2, 2, &[c(1.0), c(1.5), c(1.5), c(1.0)]);
        let e = Lindbladian::new(1, [], vec![p("X"), p("Z")], k).unwrap_err();
        assert!(
            matches!(e, Error::NotPsd { min_eigenvalue } if (min_eigenvalue + 0.5).abs() < 1e-9)
        );
        let k = DMatrix::from_row_slice(2, 2, &[c(1.0), c(0.1), c(0.2), c(1.0)]);
        assert!(matches!(
            Lindbladian::new(1, [], vec![p("X"), p("Z")], k),
            Err(Error::NonHermitianKossakowski { .. })
        ));
        assert!(matches!(
            Lindbladian::hamiltonian_only(1, [(p("I"), 1.0)]),
            Err(Error::IdentityTermPresent(_))
        ));
    }

    #[test]
    fn lambda_examples() {
        let deph = Lindbladian::diagonal(1, [], [(p("Z"), 0.5)]).unwrap();
        assert!((deph.lambda_bound() - 1.0).abs() < 1e-12);
        let ham = Lindbladian::hamiltonian_only(1, [(p("X"), 0.25)]).unwrap();
        assert!((ham.lambda_bound() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dual_graph_examples() {
        let one = [LindbladComponent::hamiltonian(p("XI"))];
        assert_eq!(dual_graph(&one).max_degree, 0);
        let two = [
            LindbladComponent::hamiltonian(p("XI")),
            LindbladComponent::hamiltonian(p("IZ")),
        ];
        assert_eq!(dual_graph(&two).max_degree, 0);
        let chain: Vec<_> = ["ZZIII", "IZZII", "IIZZI", "IIIZZ"]
            .iter()
            .map(|s| LindbladComponent::hamiltonian(p(s)))
            .collect();
        assert_eq!(dual_graph(&chain).max_degree, 2);
    }

    #[test]
    fn candidate_degree_examples() {
        assert_eq!(candidate_dual_degree(&[p("XI")], &[]), 0);
        assert_eq!(candidate_dual_degree(&[], &[p("ZI"), p("IZ")]), 3);
    }

    #[test]
    fn json_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = RandomModelSpec {
            n: 2,
            m_h: 2,
            m_d: 3,
            eta: 0.2,
            max_weight: 2,
        };
        let m = random_lindbladian(&spec, &mut rng).unwrap();
        let back = Lindbladian::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back.hamiltonian(), m.hamiltonian());
        assert_eq!(back.diss_support(), m.diss_support());
        assert!((back.kossakowski() - m.kossakowski()).norm() < 1e-15);
    }

    #[test]
    fn random_models_respect_eta() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let spec = RandomModelSpec {
                n: 3,
                m_h: 3,
                m_d: 3,
                eta: 0.2,
                max_weight: 3,
            };
            let m = random_lindbladian(&spec, &mut rng).unwrap();
            assert!(m
                .hamiltonian()
                .values()
                .all(|h| h.abs() >= 0.2 && h.abs() <= 1.0));
            for i in 0..3 {
                assert!(m.kossakowski()[(i, i)].re >= 0.2);
            }
            assert!(m.max_abs_coefficient() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn rescale_normalizes() {
        let m = Lindbladian::diagonal(1, [(p("X"), 4.0)], [(p("Z"), 2.0)]).unwrap();
        let (r, f) = m.rescaled();
        assert!((f - 0.25).abs() < 1e-15);
        assert!((r.max_abs_coefficient() - 1.0).abs() < 1e-15);
    }
}
