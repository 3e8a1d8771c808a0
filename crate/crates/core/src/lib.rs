//! Individual-fairness tooling for ReLU feed-forward binary classifiers:
//! exact verification through a mixed-integer encoding solved by an
//! in-crate branch-and-bound, guaranteed-fair prediction by counting
//! counterexamples, and counterexample-guided retraining.

pub mod bounds;
pub mod error;
pub mod fairness;
pub mod lp;
pub mod milp;
pub mod network;
pub mod schema;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
