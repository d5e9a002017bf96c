//! Lower and upper bounds on causal effects over every DAG compatible with
//! partial edge knowledge.
//!
//! Given a dataset and a set of sure/forbidden edges, the crate searches the
//! space of compatible DAGs for the smallest and largest adjustment-based
//! estimate of an interventional expectation. Three search backends are
//! provided: exhaustive enumeration (`knowledge`), an augmented-Lagrangian
//! relaxation with straight-through Gumbel-Softmax adjacency sampling, and
//! permutation-based differentiable DAG sampling (`optimizer`). Supporting
//! machinery covers synthetic data generation (`synthetic`), PC-based
//! knowledge extraction (`discovery`), and evaluation metrics (`metrics`).

pub mod data;
pub mod diff;
pub mod discovery;
pub mod error;
pub mod estimation;
pub mod graph;
pub mod grid;
pub mod knowledge;
pub mod linalg;
pub mod metrics;
pub mod optimizer;
pub mod plot;
pub mod rng;
pub mod sampling;
pub mod synthetic;

pub use error::{Error, Result};
