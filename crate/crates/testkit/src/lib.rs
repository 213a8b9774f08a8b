//! Independent numerical oracles for the curveclust test suites.
//!
//! Everything here recomputes expected values from first principles (textbook
//! recursions, explicit determinant-and-inverse formulas, exhaustive search,
//! generic numerical maximization) so the tests never reuse the code paths
//! they are checking.

pub mod cluster_metrics;
pub mod complete_loglik;
pub mod deboor;
pub mod dense_gauss;
pub mod instances;
pub mod mstep_oracle;
pub mod optimize;
pub mod quadrature;
