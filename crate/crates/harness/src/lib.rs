//! Problem zoo, reference solvers, run records and parameter sweeps on top
//! of `rpd-core`.

pub mod compare;
pub mod error;
pub mod record;
pub mod reference;
pub mod spec;
pub mod sweep;
pub mod zoo;

pub use compare::{compare, Comparison};
pub use error::HarnessError;
pub use record::{run_experiment, RunRecord};
pub use reference::{solve_reference, ReferenceSolution};
pub use spec::ProblemSpec;
pub use sweep::sweep;
pub use zoo::{build_problem, Instance};
