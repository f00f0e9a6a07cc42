//! Unconstrained feature model (UFM) toolkit for multivariate regression.
//!
//! * [`dataset`]: target statistics and synthetic data with a prescribed target covariance.
//! * [`ufm`]: closed-form global minima of the regularized UFM objective, the
//!   unregularized solution family, and critical-point checks.
//! * [`metrics`]: the NRC1/NRC2/NRC3 collapse metrics, explained variance, gamma selection.
//! * [`trainer`]: gradient descent on the UFM objective and a small ReLU MLP.

pub mod dataset;
pub mod error;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod objective;
pub mod trainer;
pub mod ufm;

pub use error::{Error, Result, Warning};
