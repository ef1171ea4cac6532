//! Counting 0-1 matrices with prescribed row and column sums.
//!
//! The crate offers three views of the same quantity `B(s, t)`:
//!
//! * [`exact`]: an arbitrary-precision dynamic program (plus a brute-force
//!   enumerator used as an oracle) and the Gale–Ryser feasibility test.
//! * [`asymptotic`]: the dense-case binomial formula with its
//!   `N · P1 · P2 · E` decomposition.
//! * [`saddle`] and [`integral`]: the saddle point of the generating-function
//!   integral, the prefactor `P(s, t)`, and direct quadrature of the contour
//!   integral `I(s, t)` so that `B = P · I` can be checked numerically.
//!
//! [`moments`] evaluates the closed-form estimate for perturbed Gaussian box
//! integrals together with a tensor-quadrature validator.

pub mod asymptotic;
pub mod error;
pub mod exact;
pub mod integral;
pub mod margins;
pub mod moments;
pub mod quadrature;
pub mod saddle;
pub mod special;

pub use error::{Error, Result};
pub use margins::{check_applicability, compute_stats, ApplicabilityReport, MarginPair, MarginStats};
