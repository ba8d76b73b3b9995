//! Ansatz-free learning of sparse Lindbladians from simulated dynamics.
//!
//! The crate covers exact Pauli algebra, a Pauli-basis Lindbladian model,
//! sparse Heisenberg-picture evolution with several query backends,
//! Chebyshev derivative estimation, structure and coefficient learning,
//! depolarizing SPAM, the time-resolution lower-bound constructions and
//! reproducible experiment drivers.

pub mod chebyshev;
pub mod coefficients;
pub mod error;
pub mod evolution;
pub mod experiments;
pub mod linalg;
pub mod lowerbound;
pub mod model;
pub mod pauli;
pub mod scalar;
pub mod spam;
pub mod structure;

pub use error::{Error, Result};
pub use model::{Lindbladian, SparsityReport};
pub use pauli::{Patch, PauliString, PhasedPauli};

/// Double-precision Chebyshev schedule.
pub type Schedule = chebyshev::ChebyshevSchedule<f64>;
/// Floating-point rank tracker used by probe selection.
pub type FloatRankTracker = linalg::RankTracker<f64>;
/// Exact rational rank tracker used for cross-checks.
pub type ExactRankTracker = linalg::RankTracker<num_rational::BigRational>;
