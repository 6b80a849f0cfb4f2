//! Monte Carlo and quadrature workbench for reduced critical branching
//! processes in i.i.d. random environment, conditioned on survival together
//! with a low terminal value of the associated random walk.

pub mod bpre;
pub mod envs;
pub mod error;
pub mod limits;
pub mod quad;
pub mod rng;
pub mod stable;
pub mod stats;
pub mod walk;

pub use error::{Error, Result};
pub use stable::StableSpec;
