//! Network panel econometrics: estimate a sparse interaction network among
//! panel units, fit heterogeneous spatial IV models with interactive fixed
//! effects on it, and decompose covariate impacts into spillovers.

pub mod bolmt;
pub mod error;
pub mod estimation;
pub mod exec;
pub mod factors;
pub mod homophily;
pub mod impact;
pub mod linalg;
pub mod netbuild;
pub mod panel;
pub mod report;
pub mod rng;
pub mod simulator;
pub mod stats;

pub use error::{Error, Result};
