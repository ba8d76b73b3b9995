//! Hard instances for the query lower bound.
//!
//! The null generator applies every weight-`κ` Pauli dissipator with unit
//! rate. The alternative drops one of those Paulis. Both generators act
//! diagonally in the Pauli basis: `⟨Q⟩_t = exp(-2 N_ac(Q) t) ⟨Q⟩_0`, where
//! `N_ac(Q)` counts the members that anticommute with `Q`. Every state
//! therefore relaxes quickly to the maximally mixed state, and after a short
//! time the two generators produce nearly identical outputs.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::Lindbladian;
use crate::pauli::{Patch, PauliString};

/// Largest qubit count for which mixing distances are computed exactly.
pub const MIXING_MAX_QUBITS: usize = 6;
/// Largest member count that [`BalancedPauliSet::new`] will enumerate.
pub const MAX_MEMBERS: usize = 1 << 22;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Null,
    /// Alternative generator without the given member; `None` drops the
    /// lexicographically first member.
    Alternative(Option<PauliString>),
}

/// All weight-`κ` Paulis with non-identity letters on their support,
/// optionally without one designated member.
#[derive(Clone, Debug)]
pub struct BalancedPauliSet {
    n: usize,
    kappa: usize,
    members: Vec<PauliString>,
    excluded: Option<PauliString>,
}

fn check_kappa(n: usize, kappa: usize) -> Result<()> {
    if kappa < 2 || kappa > n {
        Err(Error::KappaOutOfRange { n, kappa })
    } else {
        Ok(())
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) as u128 / (i + 1) as u128;
    }
    c
}

/// `3^κ C(n, κ)`.
pub fn full_set_size(n: usize, kappa: usize) -> Result<u128> {
    check_kappa(n, kappa)?;
    3u128
        .checked_pow(kappa as u32)
        .and_then(|p| p.checked_mul(binomial(n, kappa)))
        .ok_or(Error::CapExceeded {
            what: "balanced set size",
            value: usize::MAX,
            cap: usize::MAX,
        })
}

/// Uniform lower bound `(4/9) 3^κ C(n-1, κ-1)` on anticommuting counts.
pub fn n_star(n: usize, kappa: usize) -> Result<f64> {
    check_kappa(n, kappa)?;
    Ok(4.0 / 9.0 * 3f64.powi(kappa as i32) * binomial(n - 1, kappa - 1) as f64)
}

/// Smallest evolution time at which the trace-distance bound drops below `2^-n`.
pub fn t0_kappa(n: usize, kappa: usize) -> Result<f64> {
    let m = full_set_size(n, kappa)? as f64;
    let nf = n as f64;
    Ok(9.0 * nf * (3.0 * nf * std::f64::consts::LN_2 + 2.0) / (16.0 * kappa as f64 * m - 9.0 * nf))
}

impl BalancedPauliSet {
    pub fn new(n: usize, kappa: usize, variant: Variant) -> Result<Self> {
        let size = full_set_size(n, kappa)?;
        if size > MAX_MEMBERS as u128 {
            return Err(Error::CapExceeded {
                what: "balanced set size",
                value: usize::try_from(size).unwrap_or(usize::MAX),
                cap: MAX_MEMBERS,
            });
        }
        let mut members = Vec::with_capacity(size as usize);
        // Gosper's hack walks the κ-subsets of the n sites in increasing order.
        let mut mask: u64 = (1u64 << kappa) - 1;
        let limit: u128 = 1u128 << n;
        while (mask as u128) < limit {
            let sites = Patch::from_mask(mask).sites();
            for code in 0..3usize.pow(kappa as u32) {
                let (mut x, mut z) = (0u64, 0u64);
                let mut c = code;
                for &q in &sites {
                    match c % 3 {
                        0 => x |= 1 << q,
                        1 => {
                            x |= 1 << q;
                            z |= 1 << q;
                        }
                        _ => z |= 1 << q,
                    }
                    c /= 3;
                }
                members.push(PauliString::new(n, x, z)?);
            }
            let c = mask & mask.wrapping_neg();
            let Some(r) = mask.checked_add(c) else { break };
            mask = (((r ^ mask) >> 2) / c) | r;
        }
        members.sort();
        let excluded = match variant {
            Variant::Null => None,
            Variant::Alternative(None) => Some(members[0]),
            Variant::Alternative(Some(p)) => {
                if p.n() != n {
                    return Err(Error::SizeMismatch {
                        left: n,
                        right: p.n(),
                    });
                }
                if !members.contains(&p) {
                    return Err(Error::InvalidArgument(format!(
                        "{p} is not a weight-{kappa} member of the balanced set"
                    )));
                }
                Some(p)
            }
        };
        if let Some(e) = excluded {
            members.retain(|p| *p != e);
        }
        Ok(BalancedPauliSet {
            n,
            kappa,
            members,
            excluded,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kappa(&self) -> usize {
        self.kappa
    }

    pub fn members(&self) -> &[PauliString] {
        &self.members
    }

    pub fn excluded(&self) -> Option<PauliString> {
        self.excluded
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Decay rate guaranteed for every non-identity Pauli: `N★`, less one
    /// when a member was removed.
    pub fn guaranteed_count(&self) -> Result<f64> {
        let s = n_star(self.n, self.kappa)?;
        Ok(if self.excluded.is_some() { s - 1.0 } else { s })
    }
}

/// Dissipator-only generator with unit rates on the members of the set.
pub fn build_l(n: usize, kappa: usize, variant: Variant) -> Result<Lindbladian> {
    lindbladian_of(&BalancedPauliSet::new(n, kappa, variant)?)
}

pub fn lindbladian_of(set: &BalancedPauliSet) -> Result<Lindbladian> {
    Lindbladian::diagonal(set.n, [], set.members.iter().map(|p| (*p, 1.0)))
}

fn check_input(q: &PauliString, set: &BalancedPauliSet) -> Result<()> {
    if q.n() != set.n {
        return Err(Error::SizeMismatch {
            left: set.n,
            right: q.n(),
        });
    }
    if q.is_identity() {
        return Err(Error::IdentityInput);
    }
    Ok(())
}

/// Members anticommuting with `q`, counted one by one.
pub fn n_anticommuting(q: &PauliString, set: &BalancedPauliSet) -> Result<usize> {
    check_input(q, set)?;
    Ok(set
        .members
        .iter()
        .filter(|p| !p.commutes_unchecked(q))
        .count())
}

/// Closed form of the same count from the weight of `q`: a support of size
/// `κ` meeting `supp(q)` in `r ≥ 1` sites contributes
/// `3^{κ-r} (3^r - (-1)^r) / 2` anticommuting members.
pub fn n_anticommuting_closed_form(q: &PauliString, set: &BalancedPauliSet) -> Result<u128> {
    check_input(q, set)?;
    let full = closed_form_by_weight(set.n, set.kappa, q.weight());
    let correction = match set.excluded {
        Some(e) if !e.commutes_unchecked(q) => 1,
        _ => 0,
    };
    Ok(full - correction)
}

fn closed_form_by_weight(n: usize, kappa: usize, w: usize) -> u128 {
    (1..=w.min(kappa))
        .map(|r| {
            let p = 3u128.pow(r as u32);
            let odd = if r % 2 == 1 { p.div_ceil(2) } else { (p - 1) / 2 };
            binomial(w, r) * binomial(n - w, kappa - r) * 3u128.pow((kappa - r) as u32) * odd
        })
        .sum()
}

/// Minimum of the anticommuting count over all non-identity Paulis.
pub fn min_anticommuting(set: &BalancedPauliSet) -> u128 {
    let m = (1..=set.n)
        .map(|w| closed_form_by_weight(set.n, set.kappa, w))
        .min()
        .unwrap_or(0);
    if set.excluded.is_some() {
        m - 1
    } else {
        m
    }
}

/// `⟨Q⟩_t / ⟨Q⟩_0 = exp(-2 N_ac(Q) t)`.
pub fn pauli_decay(set: &BalancedPauliSet, q: &PauliString, t: f64) -> Result<f64> {
    let k = n_anticommuting_closed_form(q, set)? as f64;
    Ok((-2.0 * k * t).exp())
}

/// Product of single-qubit states given by Bloch vectors `(x, y, z)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProductState {
    pub bloch: Vec<[f64; 3]>,
}

impl ProductState {
    pub fn new(bloch: Vec<[f64; 3]>) -> Result<Self> {
        for b in &bloch {
            if b.iter().map(|v| v * v).sum::<f64>() > 1.0 + 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "Bloch vector {b:?} has norm above one"
                )));
            }
        }
        Ok(ProductState { bloch })
    }

    /// `|0…0⟩`.
    pub fn zero(n: usize) -> Self {
        ProductState {
            bloch: vec![[0.0, 0.0, 1.0]; n],
        }
    }

    /// Uniformly random pure product state.
    pub fn random_pure<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let bloch = (0..n)
            .map(|_| {
                let z: f64 = rng.random_range(-1.0..=1.0);
                let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let s = (1.0 - z * z).max(0.0).sqrt();
                [s * phi.cos(), s * phi.sin(), z]
            })
            .collect();
        ProductState { bloch }
    }

    pub fn n(&self) -> usize {
        self.bloch.len()
    }

    /// `tr(P ρ)`.
    pub fn expectation(&self, p: &PauliString) -> f64 {
        self.bloch
            .iter()
            .enumerate()
            .map(|(q, b)| match p.letter(q) {
                'X' => b[0],
                'Y' => b[1],
                'Z' => b[2],
                _ => 1.0,
            })
            .product()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MixingCertificate {
    pub t: f64,
    /// Exact Hilbert-Schmidt distance to the maximally mixed state.
    pub l2_dist: f64,
    /// `exp(-2 N t)` with the guaranteed count `N`.
    pub l2_bound: f64,
    /// Trace-norm bound `2^{n/2}` times the exact distance.
    pub l1_from_l2: f64,
    /// Trace-norm bound `2^{n/2} exp(-2 N t)`.
    pub l1_bound: f64,
}

/// Exact distance of the evolved state to `I/2^n` together with its bounds.
pub fn mixing_certificate(
    set: &BalancedPauliSet,
    state: &ProductState,
    t: f64,
) -> Result<MixingCertificate> {
    let n = set.n;
    if n > MIXING_MAX_QUBITS {
        return Err(Error::CapExceeded {
            what: "qubits for exact mixing distance",
            value: n,
            cap: MIXING_MAX_QUBITS,
        });
    }
    if state.n() != n {
        return Err(Error::SizeMismatch {
            left: n,
            right: state.n(),
        });
    }
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "time must be nonnegative, got {t}"
        )));
    }
    let sum: f64 = PauliString::all(n)?
        .par_iter()
        .filter(|q| !q.is_identity())
        .map(|q| {
            let v = state.expectation(q) * pauli_decay(set, q, t)?;
            Ok(v * v)
        })
        .collect::<Result<Vec<f64>>>()?
        .iter()
        .sum();
    let l2_dist = (sum / 2f64.powi(n as i32)).sqrt();
    let l2_bound = (-2.0 * set.guaranteed_count()? * t).exp();
    if l2_dist > l2_bound * (1.0 + 1e-12) + 1e-15 {
        return Err(Error::InconsistentModel(format!(
            "mixing distance {l2_dist:e} exceeds its bound {l2_bound:e} at t = {t}"
        )));
    }
    let scale = 2f64.powf(n as f64 / 2.0);
    Ok(MixingCertificate {
        t,
        l2_dist,
        l2_bound,
        l1_from_l2: scale * l2_dist,
        l1_bound: scale * l2_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> PauliString {
        s.parse().unwrap()
    }

    #[test]
    fn set_sizes() {
        assert_eq!(
            build_l(2, 2, Variant::Null).unwrap().diss_support().len(),
            9
        );
        assert_eq!(
            build_l(4, 2, Variant::Null).unwrap().diss_support().len(),
            54
        );
        assert_eq!(
            build_l(4, 2, Variant::Alternative(None))
                .unwrap()
                .diss_support()
                .len(),
            53
        );
        assert!(matches!(
            build_l(3, 1, Variant::Null),
            Err(Error::KappaOutOfRange { .. })
        ));
        assert!(matches!(
            build_l(3, 4, Variant::Null),
            Err(Error::KappaOutOfRange { .. })
        ));
        let alt = BalancedPauliSet::new(4, 2, Variant::Alternative(None)).unwrap();
        assert_eq!(alt.excluded(), Some(p("IIXX")));
        assert!(BalancedPauliSet::new(2, 2, Variant::Alternative(Some(p("XI")))).is_err());
    }

    #[test]
    fn counting_examples() {
        let set = BalancedPauliSet::new(2, 2, Variant::Null).unwrap();
        assert_eq!(n_anticommuting(&p("ZI"), &set).unwrap(), 6);
        assert_eq!(n_anticommuting(&p("ZZ"), &set).unwrap(), 4);
        assert_eq!(n_anticommuting_closed_form(&p("ZI"), &set).unwrap(), 6);
        assert_eq!(n_anticommuting_closed_form(&p("ZZ"), &set).unwrap(), 4);
        assert!(matches!(
            n_anticommuting(&p("II"), &set),
            Err(Error::IdentityInput)
        ));
        assert!((n_star(2, 2).unwrap() - 4.0).abs() < 1e-12);
        assert_eq!(min_anticommuting(&set), 4);
    }

    #[test]
    fn decay_and_threshold() {
        let set = BalancedPauliSet::new(2, 2, Variant::Null).unwrap();
        assert_eq!(pauli_decay(&set, &p("ZI"), 0.0).unwrap(), 1.0);
        assert!((pauli_decay(&set, &p("ZI"), 0.1).unwrap() - (-1.2f64).exp()).abs() < 1e-15);
        let t0 = t0_kappa(4, 2).unwrap();
        assert!((t0 - 0.21953).abs() < 1e-4, "{t0}");
    }

    #[test]
    fn mixing_at_threshold() {
        let set = BalancedPauliSet::new(4, 2, Variant::Null).unwrap();
        let t0 = t0_kappa(4, 2).unwrap();
        let c = mixing_certificate(&set, &ProductState::zero(4), t0).unwrap();
        assert!(c.l1_bound <= 1.0 / 16.0);
        assert!(c.l2_dist <= c.l2_bound);
        let late = mixing_certificate(&set, &ProductState::zero(4), 50.0).unwrap();
        assert!(late.l2_dist < 1e-100);
        assert!(matches!(
            mixing_certificate(
                &BalancedPauliSet::new(7, 2, Variant::Null).unwrap(),
                &ProductState::zero(7),
                0.1
            ),
            Err(Error::CapExceeded { .. })
        ));
    }
}
