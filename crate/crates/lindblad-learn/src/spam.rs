//! Depolarizing state-preparation and measurement noise.
//!
//! Each qubit passes through a depolarizing channel with retention `r_prep`
//! before the evolution and `r_meas` after it. A Pauli string of weight `w`
//! is scaled by `r^w` by such a layer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::ChannelOracle;
use crate::pauli::PauliString;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpamParams {
    pub r_prep: f64,
    pub r_meas: f64,
}

fn check_retention(r: f64) -> Result<()> {
    if r > 0.0 && r <= 1.0 {
        Ok(())
    } else {
        Err(Error::ZeroRetention(r))
    }
}

impl SpamParams {
    pub fn new(r_prep: f64, r_meas: f64) -> Result<Self> {
        check_retention(r_prep)?;
        check_retention(r_meas)?;
        Ok(SpamParams { r_prep, r_meas })
    }

    pub fn ideal() -> Self {
        SpamParams {
            r_prep: 1.0,
            r_meas: 1.0,
        }
    }

    /// Combined retention `r_prep * r_meas`.
    pub fn r(&self) -> f64 {
        self.r_prep * self.r_meas
    }

    /// Two stacked layers: retentions multiply.
    pub fn compose(&self, other: &SpamParams) -> SpamParams {
        SpamParams {
            r_prep: self.r_prep * other.r_prep,
            r_meas: self.r_meas * other.r_meas,
        }
    }

    /// Scaling of a Pauli component of the prepared state.
    pub fn prep_factor(&self, p: &PauliString) -> f64 {
        self.r_prep.powi(p.weight() as i32)
    }

    /// Scaling of a measured Pauli observable.
    pub fn meas_factor(&self, p: &PauliString) -> f64 {
        self.r_meas.powi(p.weight() as i32)
    }

    /// Parse `rP,rM`.
    pub fn parse(spec: &str) -> Result<Self> {
        let bad = || {
            Error::InvalidArgument(format!(
                "SPAM retentions must be given as rP,rM, got {spec:?}"
            ))
        };
        let (a, b) = spec.split_once(',').ok_or_else(bad)?;
        let a: f64 = a.trim().parse().map_err(|_| bad())?;
        let b: f64 = b.trim().parse().map_err(|_| bad())?;
        SpamParams::new(a, b)
    }
}

/// Fidelity seen through preparation and measurement noise.
pub fn damp_fidelity(lambda: f64, q: &PauliString, spam: &SpamParams) -> f64 {
    lambda * spam.r().powi(q.weight() as i32)
}

/// Oracle whose every query passes through `spam`, stacked on any SPAM the
/// wrapped oracle already has.
pub fn wrap_oracle(oracle: &ChannelOracle, spam: SpamParams) -> ChannelOracle {
    let combined = match oracle.spam() {
        Some(existing) => existing.compose(&spam),
        None => spam,
    };
    oracle.with_spam(Some(combined))
}

/// Undo the SPAM damping of Pauli-input probe data with input `q` and
/// observable `o`: divides by `r_prep^{w(q)} r_meas^{w(o)}`.
pub fn spam_rescale(
    raw: f64,
    q: &PauliString,
    o: &PauliString,
    r_prep: f64,
    r_meas: f64,
) -> Result<f64> {
    check_retention(r_prep)?;
    check_retention(r_meas)?;
    Ok(raw / (r_prep.powi(q.weight() as i32) * r_meas.powi(o.weight() as i32)))
}
