//! Structure identification from time derivatives of Pauli error rates.
//!
//! At `t = 0` the first derivative of the error rate `χ_ii` equals the
//! diagonal Kossakowski entry `a_ii`, and when `a_ii = 0` the second
//! derivative is at least `2 h_i^2`. Thresholding Chebyshev estimates of
//! both derivatives therefore recovers the dissipator support exactly and a
//! superset of the Hamiltonian support.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::Serialize;

use crate::chebyshev::{make_schedule, params_first, params_second, ScheduleParams};
use crate::error::{Error, Result};
use crate::evolution::{Accuracy, Backend, ChannelOracle, ChiDiagonal, QueryCounts};
use crate::model::Lindbladian;
use crate::pauli::PauliString;
use crate::Schedule;

/// Smallest smoothness scale used to build schedules.
pub const LAMBDA_FLOOR: f64 = 1e-6;

/// Where the smoothness scale `Λ` comes from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum LambdaSource {
    /// `lambda_bound` of the oracle's ground-truth model.
    Model,
    /// The generic `2M` bound.
    TwiceSparsity,
    /// A caller-supplied value.
    Value(f64),
}

#[derive(Clone, Debug, Serialize)]
pub struct StructureResult {
    pub s_d_hat: Vec<PauliString>,
    pub s_h_hat: Vec<PauliString>,
    pub chi_deriv1: BTreeMap<PauliString, f64>,
    pub chi_deriv2: BTreeMap<PauliString, f64>,
    pub queries_used: QueryCounts,
    pub lambda: f64,
    pub eta: f64,
    pub schedule: Schedule,
    /// Raw χ estimates at each node, in node order.
    #[serde(skip)]
    pub node_data: Vec<ChiDiagonal>,
}

fn check_inputs(m: usize, eta: f64, delta: f64) -> Result<()> {
    if m == 0 {
        return Err(Error::InvalidArgument(
            "sparsity M must be at least 1".into(),
        ));
    }
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "eta must lie in (0, 1], got {eta}"
        )));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    Ok(())
}

/// Resolve `Λ` for an oracle and sparsity `m`.
pub fn resolve_lambda(oracle: &ChannelOracle, m: usize, source: LambdaSource) -> f64 {
    let l = match source {
        LambdaSource::Model => oracle.model().lambda_bound(),
        LambdaSource::TwiceSparsity => 2.0 * m as f64,
        LambdaSource::Value(v) => v,
    };
    l.max(LAMBDA_FLOOR)
}

fn counts_since(before: QueryCounts, after: QueryCounts) -> QueryCounts {
    QueryCounts {
        chi_queries: after.chi_queries - before.chi_queries,
        expectation_queries: after.expectation_queries - before.expectation_queries,
        shots: after.shots - before.shots,
    }
}

/// Query χ at every node and fit both derivatives for every Pauli seen.
fn fit_derivatives(
    oracle: &ChannelOracle,
    schedule: &Schedule,
    delta: f64,
) -> Result<(
    Vec<ChiDiagonal>,
    BTreeMap<PauliString, f64>,
    BTreeMap<PauliString, f64>,
)> {
    let acc = Accuracy::new(schedule.eps_s, delta / (schedule.r + 1) as f64)?;
    let data: Vec<ChiDiagonal> = schedule
        .nodes
        .par_iter()
        .map(|&t| oracle.chi_rates(t, acc))
        .collect::<Result<_>>()?;
    let pool: BTreeSet<PauliString> = data
        .iter()
        .flat_map(|d| d.entries.keys().copied())
        .filter(|p| !p.is_identity())
        .collect();
    let mut d1 = BTreeMap::new();
    let mut d2 = BTreeMap::new();
    for p in pool {
        let samples: Vec<f64> = data.iter().map(|d| d.get(&p)).collect();
        d1.insert(p, schedule.estimate_deriv1(&samples)?);
        d2.insert(p, schedule.estimate_deriv2(&samples)?);
    }
    Ok((data, d1, d2))
}

fn above(map: &BTreeMap<PauliString, f64>, threshold: f64) -> Vec<PauliString> {
    map.iter()
        .filter(|(_, v)| **v > threshold)
        .map(|(p, _)| *p)
        .collect()
}

/// Dissipator support from first derivatives thresholded at `η/2`.
pub fn learn_dissipator(
    oracle: &ChannelOracle,
    m: usize,
    eta: f64,
    delta: f64,
) -> Result<StructureResult> {
    learn_dissipator_with(oracle, m, eta, delta, LambdaSource::Model)
}

pub fn learn_dissipator_with(
    oracle: &ChannelOracle,
    m: usize,
    eta: f64,
    delta: f64,
    source: LambdaSource,
) -> Result<StructureResult> {
    check_inputs(m, eta, delta)?;
    let lambda = resolve_lambda(oracle, m, source);
    let schedule = Schedule::from_params(params_first(1.0, lambda, eta / 2.0)?)?;
    let before = oracle.counts();
    let (node_data, d1, d2) = fit_derivatives(oracle, &schedule, delta)?;
    let s_d_hat = above(&d1, eta / 2.0);
    Ok(StructureResult {
        s_h_hat: s_d_hat.clone(),
        s_d_hat,
        chi_deriv1: d1,
        chi_deriv2: d2,
        queries_used: counts_since(before, oracle.counts()),
        lambda,
        eta,
        schedule,
        node_data,
    })
}

/// Schedule accurate enough for both the `η²` second-derivative test and the
/// `η/2` first-derivative test on one set of nodes.
pub fn hamiltonian_schedule(lambda: f64, eta: f64) -> Result<Schedule> {
    let second = params_second(1.0, lambda, eta * eta)?;
    let first = params_first(1.0, lambda, eta / 2.0)?;
    let r = second.r.max(first.r);
    let rf = r as f64;
    let eps_s = (eta / 2.0 / (10.0 * lambda * rf.powi(3)))
        .min(eta * eta / (8.0 * lambda * lambda * rf.powi(5)));
    Schedule::from_params(ScheduleParams {
        tau_max: second.tau_max,
        r,
        eps_s,
    })
}

/// Hamiltonian superset: second derivative above `η²` or first above `η/2`.
pub fn learn_hamiltonian(
    oracle: &ChannelOracle,
    m: usize,
    eta: f64,
    delta: f64,
) -> Result<StructureResult> {
    learn_hamiltonian_with(oracle, m, eta, delta, LambdaSource::Model)
}

pub fn learn_hamiltonian_with(
    oracle: &ChannelOracle,
    m: usize,
    eta: f64,
    delta: f64,
    source: LambdaSource,
) -> Result<StructureResult> {
    check_inputs(m, eta, delta)?;
    let lambda = resolve_lambda(oracle, m, source);
    let schedule = hamiltonian_schedule(lambda, eta)?;
    let before = oracle.counts();
    let (node_data, d1, d2) = fit_derivatives(oracle, &schedule, delta)?;
    let s_d_hat = above(&d1, eta / 2.0);
    let mut s_h: BTreeSet<PauliString> = above(&d2, eta * eta).into_iter().collect();
    s_h.extend(s_d_hat.iter().copied());
    Ok(StructureResult {
        s_d_hat,
        s_h_hat: s_h.into_iter().collect(),
        chi_deriv1: d1,
        chi_deriv2: d2,
        queries_used: counts_since(before, oracle.counts()),
        lambda,
        eta,
        schedule,
        node_data,
    })
}

/// One row of the derivative-identity check.
#[derive(Clone, Debug, Serialize)]
pub struct IdentityRow {
    pub pauli: PauliString,
    pub a_ii: f64,
    pub h_i: f64,
    pub deriv1: f64,
    pub deriv2: f64,
    pub ok: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct IdentityReport {
    pub rows: Vec<IdentityRow>,
    pub max_deriv1_error: f64,
    pub max_zero_deviation: f64,
    pub min_second_margin: f64,
    pub passed: bool,
}

/// Tolerance on `χ'_ii = a_ii` when `a_ii > 0`.
pub const IDENTITY_TOL_RATE: f64 = 1e-4;
/// Tolerance on `χ'_ii = 0` when `a_ii = 0`.
pub const IDENTITY_TOL_ZERO: f64 = 1e-6;
/// Slack on `χ''_ii >= 2 h_i^2`.
pub const IDENTITY_TOL_SECOND: f64 = 1e-4;

/// Fit both derivatives of every error rate from exact data and compare
/// with the Kossakowski diagonal and Hamiltonian coefficients.
pub fn chi_derivative_identities_check(model: &Lindbladian) -> Result<IdentityReport> {
    if model.n() > 3 {
        return Err(Error::CapExceeded {
            what: "qubits for the identity check",
            value: model.n(),
            cap: 3,
        });
    }
    let oracle = ChannelOracle::new(model.clone(), Backend::Exact);
    let lambda = model.lambda_bound().max(LAMBDA_FLOOR);
    // A short window keeps the interpolation bias far below the tolerances
    // while exact data keeps the noise amplification harmless.
    let schedule = make_schedule(1.0 / (4.0 * lambda), 12, 1e-12)?;
    let acc = Accuracy::new(1e-12, 0.5)?;
    let data: Vec<ChiDiagonal> = schedule
        .nodes
        .par_iter()
        .map(|&t| oracle.chi_rates(t, acc))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut max_d1 = 0.0f64;
    let mut max_zero = 0.0f64;
    let mut min_margin = f64::INFINITY;
    for p in PauliString::all(model.n())?.into_iter().skip(1) {
        let samples: Vec<f64> = data.iter().map(|d| d.get(&p)).collect();
        let deriv1 = schedule.estimate_deriv1(&samples)?;
        let deriv2 = schedule.estimate_deriv2(&samples)?;
        let a_ii = model.a(&p, &p).re;
        let h_i = model.h(&p);
        let ok = if a_ii > 0.0 {
            max_d1 = max_d1.max((deriv1 - a_ii).abs());
            (deriv1 - a_ii).abs() <= IDENTITY_TOL_RATE
        } else {
            max_zero = max_zero.max(deriv1.abs());
            let margin = deriv2 - 2.0 * h_i * h_i;
            min_margin = min_margin.min(margin);
            deriv1.abs() <= IDENTITY_TOL_ZERO && margin >= -IDENTITY_TOL_SECOND
        };
        rows.push(IdentityRow {
            pauli: p,
            a_ii,
            h_i,
            deriv1,
            deriv2,
            ok,
        });
    }
    let passed = rows.iter().all(|r| r.ok);
    Ok(IdentityReport {
        rows,
        max_deriv1_error: max_d1,
        max_zero_deviation: max_zero,
        min_second_margin: min_margin,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::Backend;
    use nalgebra::DMatrix;
    use num_complex::Complex64;

    fn p(s: &str) -> PauliString {
        s.parse().unwrap()
    }

    fn mixed() -> Lindbladian {
        Lindbladian::diagonal(2, [(p("YI"), 0.7)], [(p("XI"), 0.6), (p("ZZ"), 0.5)]).unwrap()
    }

    #[test]
    fn dephasing_dissipator() {
        let model = Lindbladian::diagonal(1, [], [(p("Z"), 0.5)]).unwrap();
        let oracle = ChannelOracle::new(model, Backend::Exact);
        let res = learn_dissipator(&oracle, 1, 0.4, 0.05).unwrap();
        assert_eq!(res.s_d_hat, vec![p("Z")]);
        assert!((res.chi_deriv1[&p("Z")] - 0.5).abs() < 1e-6);
        assert_eq!(res.queries_used.chi_queries as usize, res.schedule.r + 1);
        let h = learn_hamiltonian(&oracle, 1, 0.3, 0.05).unwrap();
        assert!(h.s_h_hat.contains(&p("Z")));
    }

    #[test]
    fn rabi_hamiltonian() {
        let model = Lindbladian::hamiltonian_only(1, [(p("X"), 0.25)]).unwrap();
        let oracle = ChannelOracle::new(model, Backend::Exact);
        let d = learn_dissipator(&oracle, 1, 0.2, 0.05).unwrap();
        assert!(d.s_d_hat.is_empty());
        let h = learn_hamiltonian(&oracle, 1, 0.2, 0.05).unwrap();
        assert!(h.s_h_hat.contains(&p("X")));
        assert!((h.chi_deriv2[&p("X")] - 0.125).abs() < 1e-6);
    }

    #[test]
    fn mixed_two_qubit_model() {
        let oracle = ChannelOracle::new(mixed(), Backend::Exact);
        let d = learn_dissipator(&oracle, 3, 0.3, 0.05).unwrap();
        assert_eq!(d.s_d_hat, vec![p("XI"), p("ZZ")]);
        let h = learn_hamiltonian(&oracle, 3, 0.3, 0.05).unwrap();
        for q in ["YI", "XI", "ZZ"] {
            assert!(
                h.s_h_hat.contains(&p(q)),
                "{q} missing from {:?}",
                h.s_h_hat
            );
        }
        for q in &h.s_d_hat {
            assert!(h.s_h_hat.contains(q));
        }
    }

    #[test]
    fn noisy_backend_keeps_guarantee() {
        let oracle = ChannelOracle::new(
            mixed(),
            Backend::ExactPlusNoise {
                eps: None,
                seed: 11,
            },
        );
        let d = learn_dissipator(&oracle, 3, 0.3, 0.05).unwrap();
        assert_eq!(d.s_d_hat, vec![p("XI"), p("ZZ")]);
        let h = learn_hamiltonian(&oracle, 3, 0.3, 0.05).unwrap();
        assert!(h.s_h_hat.contains(&p("YI")));
    }

    #[test]
    fn identities_on_small_models() {
        let deph = Lindbladian::diagonal(1, [], [(p("Z"), 0.5)]).unwrap();
        let rep = chi_derivative_identities_check(&deph).unwrap();
        assert!(rep.passed);
        let zrow = rep.rows.iter().find(|r| r.pauli == p("Z")).unwrap();
        assert!((zrow.deriv1 - 0.5).abs() < 1e-6);

        let h_only = Lindbladian::hamiltonian_only(2, [(p("XZ"), 0.4), (p("YI"), -0.3)]).unwrap();
        let rep = chi_derivative_identities_check(&h_only).unwrap();
        assert!(rep.passed);
        assert!(rep.rows.iter().all(|r| r.deriv1.abs() < 1e-6));

        let a = DMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(0.5, 0.0),
                Complex64::new(0.1, 0.2),
                Complex64::new(0.1, -0.2),
                Complex64::new(0.4, 0.0),
            ],
        );
        let corr = Lindbladian::new(2, [(p("ZZ"), 0.3)], vec![p("XI"), p("IY")], a).unwrap();
        assert!(chi_derivative_identities_check(&corr).unwrap().passed);
    }

    #[test]
    fn rejects_bad_inputs() {
        let oracle = ChannelOracle::new(mixed(), Backend::Exact);
        assert!(learn_dissipator(&oracle, 0, 0.3, 0.05).is_err());
        assert!(learn_dissipator(&oracle, 3, 1.5, 0.05).is_err());
        assert!(learn_hamiltonian(&oracle, 3, 0.3, 1.0).is_err());
    }
}
