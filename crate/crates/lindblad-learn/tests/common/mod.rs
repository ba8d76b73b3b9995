//! Dense reference computations shared by the integration tests.
//!
//! Everything here works with explicit `2^n × 2^n` matrices and
//! `4^n × 4^n` superoperators built from Kronecker products, so it shares
//! no code path with the sparse Pauli-basis engine under test.

#![allow(dead_code)]

use std::io::Write;

use lindblad_learn::model::{random_lindbladian, RandomModelSpec};
use lindblad_learn::{Lindbladian, PauliString};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type CMat = DMatrix<Complex64>;

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn p(s: &str) -> PauliString {
    s.parse().unwrap()
}

fn single(letter: char) -> CMat {
    let z = c(0.0, 0.0);
    let o = c(1.0, 0.0);
    let i = c(0.0, 1.0);
    match letter {
        'I' => DMatrix::from_row_slice(2, 2, &[o, z, z, o]),
        'X' => DMatrix::from_row_slice(2, 2, &[z, o, o, z]),
        'Y' => DMatrix::from_row_slice(2, 2, &[z, -i, i, z]),
        'Z' => DMatrix::from_row_slice(2, 2, &[o, z, z, -o]),
        _ => panic!("bad letter {letter}"),
    }
}

/// Dense matrix of a Pauli string written as text, leftmost letter acting
/// on the most significant tensor factor.
pub fn dense_pauli_text(s: &str) -> CMat {
    let mut m = DMatrix::from_element(1, 1, c(1.0, 0.0));
    for ch in s.chars() {
        m = m.kronecker(&single(ch));
    }
    m
}

pub fn dense_pauli(q: &PauliString) -> CMat {
    dense_pauli_text(&q.to_string())
}

pub fn identity(d: usize) -> CMat {
    DMatrix::identity(d, d)
}

/// Column-stacking vectorization: `vec(A X B) = (Bᵀ ⊗ A) vec(X)`.
pub fn sandwich(a: &CMat, b: &CMat) -> CMat {
    b.transpose().kronecker(a)
}

/// Dense Liouvillian of `L(ρ) = -i[H, ρ] + Σ a_ij (P_i ρ P_j - ½{P_j P_i, ρ})`.
pub fn dense_liouvillian(model: &Lindbladian) -> CMat {
    let n = model.n();
    let d = 1usize << n;
    let id = identity(d);
    let mut h = DMatrix::from_element(d, d, c(0.0, 0.0));
    for (pauli, coeff) in model.hamiltonian() {
        h += dense_pauli(pauli) * c(*coeff, 0.0);
    }
    let mut l = (sandwich(&h, &id) - sandwich(&id, &h)) * c(0.0, -1.0);
    let support = model.diss_support();
    let k = model.kossakowski();
    for (i, pi) in support.iter().enumerate() {
        for (j, pj) in support.iter().enumerate() {
            let a = k[(i, j)];
            if a.norm() == 0.0 {
                continue;
            }
            let (mi, mj) = (dense_pauli(pi), dense_pauli(pj));
            let prod = &mj * &mi;
            let term =
                sandwich(&mi, &mj) - (sandwich(&prod, &id) + sandwich(&id, &prod)) * c(0.5, 0.0);
            l += term * a;
        }
    }
    l
}

pub fn vec_of(m: &CMat) -> CMat {
    let d = m.nrows();
    DMatrix::from_fn(d * d, 1, |k, _| m[(k % d, k / d)])
}

pub fn unvec(v: &CMat) -> CMat {
    let d = (v.nrows() as f64).sqrt().round() as usize;
    DMatrix::from_fn(d, d, |i, j| v[(j * d + i, 0)])
}

pub fn apply(superop: &CMat, rho: &CMat) -> CMat {
    unvec(&(superop * vec_of(rho)))
}

/// `exp(t L)` through nalgebra's dense matrix exponential.
pub fn expm(l: &CMat, t: f64) -> CMat {
    (l * c(t, 0.0)).exp()
}

/// Choi matrix `Σ_ij |i⟩⟨j| ⊗ E(|i⟩⟨j|)`.
pub fn choi(superop: &CMat) -> CMat {
    let d = (superop.nrows() as f64).sqrt().round() as usize;
    let mut j = DMatrix::from_element(d * d, d * d, c(0.0, 0.0));
    for a in 0..d {
        for b in 0..d {
            let mut e = DMatrix::from_element(d, d, c(0.0, 0.0));
            e[(a, b)] = c(1.0, 0.0);
            let out = apply(superop, &e);
            for x in 0..d {
                for y in 0..d {
                    j[(a * d + x, b * d + y)] = out[(x, y)];
                }
            }
        }
    }
    j
}

/// Diagonal χ entry `⟨⟨P| J |P⟩⟩ / 4^n` with `|P⟩⟩ = Σ_i |i⟩ ⊗ P|i⟩`.
pub fn chi_entry(choi: &CMat, q: &PauliString) -> f64 {
    let m = dense_pauli(q);
    let d = m.nrows();
    let v = DMatrix::from_fn(d * d, 1, |k, _| m[(k % d, k / d)]);
    let val = (v.adjoint() * choi * &v)[(0, 0)];
    val.re / (d * d) as f64
}

/// `2^{-n} tr(A B)`.
pub fn normalized_trace(a: &CMat, b: &CMat) -> Complex64 {
    (a * b).trace() / c(a.nrows() as f64, 0.0)
}

/// Product of single-qubit depolarizing channels with retention `r`.
pub fn depolarizing(n: usize, r: f64) -> CMat {
    let d = 1usize << n;
    let mut total = identity(d * d);
    for q in 0..n {
        let site = |letter: char| {
            let text: String = (0..n).map(|k| if k == q { letter } else { 'I' }).collect();
            dense_pauli_text(&text)
        };
        let mut ch = identity(d * d) * c((1.0 + 3.0 * r) / 4.0, 0.0);
        for letter in ['X', 'Y', 'Z'] {
            let m = site(letter);
            ch += sandwich(&m, &m) * c((1.0 - r) / 4.0, 0.0);
        }
        total = ch * total;
    }
    total
}

/// Trace norm of a Hermitian matrix.
pub fn trace_norm(m: &CMat) -> f64 {
    let h = (m + m.adjoint()) * c(0.5, 0.0);
    h.symmetric_eigenvalues().iter().map(|v| v.abs()).sum()
}

/// Spectral norm of a superoperator.
pub fn spectral_norm(m: &CMat) -> f64 {
    m.clone().singular_values().max()
}

/// Whether two Paulis anticommute, decided on dense matrices.
pub fn anticommute_dense(a: &CMat, b: &CMat) -> bool {
    (a * b + b * a).iter().all(|v| v.norm() < 1e-12)
}

/// Seeded random model with `|coefficients| ≤ 1` and diagonal rates and
/// Hamiltonian magnitudes at least `eta`.
pub fn seeded_model(seed: u64, n: usize, m_h: usize, m_d: usize, eta: f64) -> Lindbladian {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = RandomModelSpec {
        n,
        m_h,
        m_d,
        eta,
        max_weight: n,
    };
    random_lindbladian(&spec, &mut rng).unwrap()
}

/// The `k`-th model of the standard seeded family used across tests:
/// sizes cycle through one to three qubits.
pub fn family_model(k: u64, eta: f64) -> Lindbladian {
    let n = 1 + (k % 3) as usize;
    let (m_h, m_d) = match n {
        1 => (1 + (k % 2) as usize, 1 + (k / 3 % 2) as usize),
        2 => (2 + (k % 2) as usize, 1 + (k / 3 % 3) as usize),
        _ => (3, 2 + (k / 3 % 2) as usize),
    };
    seeded_model(1000 + k, n, m_h, m_d, eta)
}

/// Print a verdict line on the real stderr, bypassing test capture.
pub fn report(criterion: usize, title: &str, ok: bool, detail: &str) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "criterion {criterion:2} [{verdict}] {title}: {detail}");
}
