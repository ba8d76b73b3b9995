//! Exact n-qubit Pauli algebra in the symplectic (x, z) bit representation.
//!
//! A Hermitian Pauli string is stored as two bit masks. Qubit `q` carries
//! `X` when only bit `q` of `x` is set, `Z` when only bit `q` of `z` is set
//! and `Y` when both are set. Phases of products are tracked as powers of `i`
//! modulo 4, so every operation here is integer arithmetic.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Largest qubit count representable by the 64-bit masks.
pub const MAX_QUBITS: usize = 64;

/// A Hermitian n-qubit Pauli string.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct PauliString {
    n: u8,
    x: u64,
    z: u64,
}

/// A Pauli string multiplied by `i^phase`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PhasedPauli {
    pub pauli: PauliString,
    pub phase: u8,
}

/// A set of qubit indices, stored as a bit mask.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Patch {
    mask: u64,
}

fn full_mask(n: usize) -> u64 {
    if n >= 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 || n > MAX_QUBITS {
        Err(Error::UnsupportedQubitCount(n))
    } else {
        Ok(())
    }
}

/// Letter order used for text-lexicographic comparison: I < X < Y < Z.
fn letter_rank(x: bool, z: bool) -> u8 {
    match (x, z) {
        (false, false) => 0,
        (true, false) => 1,
        (true, true) => 2,
        (false, true) => 3,
    }
}

impl PauliString {
    pub fn identity(n: usize) -> Result<Self> {
        check_n(n)?;
        Ok(PauliString {
            n: n as u8,
            x: 0,
            z: 0,
        })
    }

    pub fn new(n: usize, x: u64, z: u64) -> Result<Self> {
        check_n(n)?;
        let m = full_mask(n);
        if x & !m != 0 || z & !m != 0 {
            return Err(Error::InvalidArgument(format!(
                "bit masks exceed {n} qubits"
            )));
        }
        Ok(PauliString { n: n as u8, x, z })
    }

    /// Single-qubit Pauli `letter` on qubit `q`, identity elsewhere.
    pub fn single(n: usize, q: usize, letter: char) -> Result<Self> {
        check_n(n)?;
        if q >= n {
            return Err(Error::InvalidArgument(format!(
                "qubit {q} out of range for n = {n}"
            )));
        }
        let (x, z) = match letter {
            'I' => (false, false),
            'X' => (true, false),
            'Y' => (true, true),
            'Z' => (false, true),
            _ => return Err(Error::InvalidPauli(letter.to_string())),
        };
        Ok(PauliString {
            n: n as u8,
            x: (x as u64) << q,
            z: (z as u64) << q,
        })
    }

    #[inline]
    pub(crate) fn from_bits_unchecked(n: usize, x: u64, z: u64) -> Self {
        PauliString { n: n as u8, x, z }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n as usize
    }

    #[inline]
    pub fn x_bits(&self) -> u64 {
        self.x
    }

    #[inline]
    pub fn z_bits(&self) -> u64 {
        self.z
    }

    #[inline]
    pub fn is_identity(&self) -> bool {
        self.x == 0 && self.z == 0
    }

    #[inline]
    pub fn support_mask(&self) -> u64 {
        self.x | self.z
    }

    #[inline]
    pub fn weight(&self) -> usize {
        self.support_mask().count_ones() as usize
    }

    pub fn support(&self) -> Patch {
        Patch {
            mask: self.support_mask(),
        }
    }

    pub fn letter(&self, q: usize) -> char {
        match ((self.x >> q) & 1 == 1, (self.z >> q) & 1 == 1) {
            (false, false) => 'I',
            (true, false) => 'X',
            (true, true) => 'Y',
            (false, true) => 'Z',
        }
    }

    /// Parity of the symplectic product: 1 when the strings anticommute.
    #[inline]
    pub fn symplectic_product(&self, other: &PauliString) -> u32 {
        ((self.x & other.z).count_ones() + (self.z & other.x).count_ones()) & 1
    }

    #[inline]
    pub(crate) fn commutes_unchecked(&self, other: &PauliString) -> bool {
        self.symplectic_product(other) == 0
    }

    pub fn commutes(&self, other: &PauliString) -> Result<bool> {
        self.check_same(other)?;
        Ok(self.commutes_unchecked(other))
    }

    fn check_same(&self, other: &PauliString) -> Result<()> {
        if self.n != other.n {
            Err(Error::SizeMismatch {
                left: self.n(),
                right: other.n(),
            })
        } else {
            Ok(())
        }
    }

    /// Exact product `self * other` as a phased Pauli.
    #[inline]
    pub(crate) fn mul_unchecked(&self, other: &PauliString) -> PhasedPauli {
        let x = self.x ^ other.x;
        let z = self.z ^ other.z;
        // Hermitian P = i^{|x&z|} X^x Z^z, and Z^z X^x' = (-1)^{|z&x'|} X^x' Z^z.
        let p = (self.x & self.z).count_ones()
            + (other.x & other.z).count_ones()
            + 2 * (self.z & other.x).count_ones()
            + 4 * 64
            - (x & z).count_ones();
        PhasedPauli {
            pauli: PauliString { n: self.n, x, z },
            phase: (p % 4) as u8,
        }
    }

    pub fn mul(&self, other: &PauliString) -> Result<PhasedPauli> {
        self.check_same(other)?;
        Ok(self.mul_unchecked(other))
    }

    /// Index in the lexicographic order with per-qubit codes I=0, X=1, Z=2, Y=3
    /// and qubit 0 least significant. Requires `n <= 32`.
    pub fn index(&self) -> usize {
        debug_assert!(self.n() <= 32);
        let mut idx = 0usize;
        for q in (0..self.n()).rev() {
            let code = ((self.x >> q) & 1) | (((self.z >> q) & 1) << 1);
            idx = (idx << 2) | code as usize;
        }
        idx
    }

    /// Inverse of [`PauliString::index`].
    pub fn from_index(n: usize, index: usize) -> Result<Self> {
        check_n(n)?;
        if n > 32 || (n < 32 && index >> (2 * n) != 0) {
            return Err(Error::InvalidArgument(format!(
                "index {index} out of range for n = {n}"
            )));
        }
        let mut x = 0u64;
        let mut z = 0u64;
        for q in 0..n {
            let code = (index >> (2 * q)) & 3;
            x |= ((code & 1) as u64) << q;
            z |= (((code >> 1) & 1) as u64) << q;
        }
        Ok(PauliString { n: n as u8, x, z })
    }

    /// Dense `2^n x 2^n` matrix, basis state bit `q` holding qubit `q`.
    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let dim = 1usize << self.n();
        let mut m = DMatrix::zeros(dim, dim);
        let base = i_power((self.x & self.z).count_ones() as u8);
        for c in 0..dim {
            let sign = if (self.z & c as u64).count_ones() % 2 == 1 {
                -1.0
            } else {
                1.0
            };
            let r = c ^ self.x as usize;
            m[(r, c)] = base * sign;
        }
        m
    }

    /// All `4^n` Pauli strings in index order.
    pub fn all(n: usize) -> Result<Vec<PauliString>> {
        if n > 16 {
            return Err(Error::CapExceeded {
                what: "qubits for exhaustive enumeration",
                value: n,
                cap: 16,
            });
        }
        (0..1usize << (2 * n))
            .map(|i| PauliString::from_index(n, i))
            .collect()
    }
}

/// `i^p` as a complex number.
pub fn i_power(p: u8) -> Complex64 {
    match p % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, 1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, -1.0),
    }
}

impl Ord for PauliString {
    /// Text-lexicographic order of the canonical form, qubit 0 first.
    fn cmp(&self, other: &Self) -> Ordering {
        self.n.cmp(&other.n).then_with(|| {
            let diff = (self.x ^ other.x) | (self.z ^ other.z);
            if diff == 0 {
                return Ordering::Equal;
            }
            let q = diff.trailing_zeros();
            let a = letter_rank((self.x >> q) & 1 == 1, (self.z >> q) & 1 == 1);
            let b = letter_rank((other.x >> q) & 1 == 1, (other.z >> q) & 1 == 1);
            a.cmp(&b)
        })
    }
}

impl PartialOrd for PauliString {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: String = (0..self.n()).map(|q| self.letter(q)).collect();
        f.write_str(&s)
    }
}

impl fmt::Debug for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl FromStr for PauliString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let n = s.chars().count();
        check_n(n).map_err(|_| Error::InvalidPauli(s.to_string()))?;
        let mut x = 0u64;
        let mut z = 0u64;
        for (q, c) in s.chars().enumerate() {
            let (bx, bz) = match c {
                'I' => (0, 0),
                'X' => (1, 0),
                'Y' => (1, 1),
                'Z' => (0, 1),
                _ => return Err(Error::InvalidPauli(s.to_string())),
            };
            x |= bx << q;
            z |= bz << q;
        }
        Ok(PauliString { n: n as u8, x, z })
    }
}

impl serde::Serialize for PauliString {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> serde::Deserialize<'de> for PauliString {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl PhasedPauli {
    pub fn new(pauli: PauliString, phase: u8) -> Self {
        PhasedPauli {
            pauli,
            phase: phase % 4,
        }
    }

    pub fn identity(n: usize) -> Result<Self> {
        Ok(PhasedPauli {
            pauli: PauliString::identity(n)?,
            phase: 0,
        })
    }

    pub fn mul(&self, other: &PhasedPauli) -> Result<PhasedPauli> {
        let p = self.pauli.mul(&other.pauli)?;
        Ok(PhasedPauli::new(
            p.pauli,
            p.phase + self.phase + other.phase,
        ))
    }

    /// Multiplicative inverse; Hermitian Paulis square to the identity.
    pub fn inverse(&self) -> PhasedPauli {
        PhasedPauli::new(self.pauli, (4 - self.phase) % 4)
    }

    pub fn coefficient(&self) -> Complex64 {
        i_power(self.phase)
    }

    /// True when the operator is Hermitian, that is the phase is real.
    pub fn is_hermitian(&self) -> bool {
        self.phase.is_multiple_of(2)
    }
}

impl fmt::Display for PhasedPauli {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prefix = ["+", "+i", "-", "-i"][self.phase as usize % 4];
        write!(f, "{prefix}{}", self.pauli)
    }
}

impl Patch {
    pub fn from_mask(mask: u64) -> Self {
        Patch { mask }
    }

    pub fn from_sites(sites: &[usize]) -> Result<Self> {
        let mut mask = 0u64;
        for &s in sites {
            if s >= MAX_QUBITS {
                return Err(Error::InvalidArgument(format!("site {s} out of range")));
            }
            mask |= 1 << s;
        }
        Ok(Patch { mask })
    }

    pub fn empty() -> Self {
        Patch { mask: 0 }
    }

    #[inline]
    pub fn mask(&self) -> u64 {
        self.mask
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.mask.count_ones() as usize
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.mask == 0
    }

    pub fn sites(&self) -> Vec<usize> {
        (0..64).filter(|q| (self.mask >> q) & 1 == 1).collect()
    }

    pub fn union(&self, other: &Patch) -> Patch {
        Patch {
            mask: self.mask | other.mask,
        }
    }

    pub fn intersects(&self, other: &Patch) -> bool {
        self.mask & other.mask != 0
    }

    pub fn contains_pauli(&self, p: &PauliString) -> bool {
        p.support_mask() & !self.mask == 0
    }
}

impl fmt::Display for Patch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: Vec<String> = self.sites().iter().map(|q| q.to_string()).collect();
        write!(f, "{{{}}}", s.join(","))
    }
}

/// All `4^|T|` Pauli strings supported inside `T`, in text-lexicographic order.
pub fn enumerate_patch_paulis(patch: &Patch, n: usize) -> Result<Vec<PauliString>> {
    check_n(n)?;
    if patch.mask & !full_mask(n) != 0 {
        return Err(Error::InvalidArgument(format!(
            "patch {patch} not inside {n} qubits"
        )));
    }
    let sites = patch.sites();
    let k = sites.len();
    if k > 12 {
        return Err(Error::CapExceeded {
            what: "patch size",
            value: k,
            cap: 12,
        });
    }
    // Letters in I, X, Y, Z order; the lowest site is the most significant digit.
    const LETTERS: [(u64, u64); 4] = [(0, 0), (1, 0), (1, 1), (0, 1)];
    let mut out = Vec::with_capacity(1 << (2 * k));
    for code in 0..1usize << (2 * k) {
        let mut x = 0u64;
        let mut z = 0u64;
        for (j, &q) in sites.iter().enumerate() {
            let digit = (code >> (2 * (k - 1 - j))) & 3;
            let (bx, bz) = LETTERS[digit];
            x |= bx << q;
            z |= bz << q;
        }
        out.push(PauliString::from_bits_unchecked(n, x, z));
    }
    Ok(out)
}

/// Pauli strings inside `patch` whose support has exactly `k` sites.
pub fn patch_paulis_of_weight(patch: &Patch, n: usize, k: usize) -> Result<Vec<PauliString>> {
    Ok(enumerate_patch_paulis(patch, n)?
        .into_iter()
        .filter(|p| p.weight() == k)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> PauliString {
        s.parse().unwrap()
    }

    #[test]
    fn single_qubit_products() {
        let xy = p("X").mul(&p("Y")).unwrap();
        assert_eq!(xy.pauli, p("Z"));
        assert_eq!(xy.phase, 1);
        let yx = p("Y").mul(&p("X")).unwrap();
        assert_eq!(yx.phase, 3);
        let zz = p("Z").mul(&p("Z")).unwrap();
        assert!(zz.pauli.is_identity());
        assert_eq!(zz.phase, 0);
    }

    #[test]
    fn two_qubit_product_phase() {
        let r = p("XZ").mul(&p("ZX")).unwrap();
        assert_eq!(r.pauli, p("YY"));
        assert_eq!(r.phase, 0);
    }

    #[test]
    fn identity_is_neutral() {
        for s in ["X", "Y", "Z", "I"] {
            let r = p("I").mul(&p(s)).unwrap();
            assert_eq!(r.pauli, p(s));
            assert_eq!(r.phase, 0);
        }
    }

    #[test]
    fn inverse_gives_identity() {
        let a = PhasedPauli::new(p("XYZ"), 1);
        let r = a.mul(&a.inverse()).unwrap();
        assert!(r.pauli.is_identity());
        assert_eq!(r.phase, 0);
    }

    #[test]
    fn commutation() {
        assert!(!p("X").commutes(&p("Z")).unwrap());
        assert!(p("XY").commutes(&p("YX")).unwrap());
        assert!(p("XYZ").commutes(&p("XYZ")).unwrap());
        assert!(p("X").commutes(&p("XX")).is_err());
    }

    #[test]
    fn parsing_rejects_lowercase() {
        assert!("xiz".parse::<PauliString>().is_err());
        assert!("XAZ".parse::<PauliString>().is_err());
        assert_eq!(p("XIZ").to_string(), "XIZ");
        assert_eq!(p("XIZ").weight(), 2);
        assert_eq!(p("XIZ").support().sites(), vec![0, 2]);
    }

    #[test]
    fn patch_enumeration() {
        let t = Patch::from_sites(&[0]).unwrap();
        let v: Vec<String> = enumerate_patch_paulis(&t, 2)
            .unwrap()
            .iter()
            .map(|p| p.to_string())
            .collect();
        assert_eq!(v, ["II", "XI", "YI", "ZI"]);
        let e = enumerate_patch_paulis(&Patch::empty(), 3).unwrap();
        assert_eq!(e.len(), 1);
        assert!(e[0].is_identity());
        let t2 = Patch::from_sites(&[0, 2]).unwrap();
        assert_eq!(enumerate_patch_paulis(&t2, 3).unwrap().len(), 16);
        assert_eq!(patch_paulis_of_weight(&t2, 3, 2).unwrap().len(), 9);
    }

    #[test]
    fn index_roundtrip_and_codes() {
        assert_eq!(p("X").index(), 1);
        assert_eq!(p("Z").index(), 2);
        assert_eq!(p("Y").index(), 3);
        assert_eq!(p("IX").index(), 4);
        for i in 0..64 {
            assert_eq!(PauliString::from_index(3, i).unwrap().index(), i);
        }
    }

    #[test]
    fn text_order_sorts_like_strings() {
        let mut v = PauliString::all(2).unwrap();
        v.sort();
        let s: Vec<String> = v.iter().map(|p| p.to_string()).collect();
        let mut t = s.clone();
        t.sort();
        assert_eq!(s, t);
    }
}
