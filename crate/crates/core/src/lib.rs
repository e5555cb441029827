pub mod autodiff;
pub mod densemat;
mod error;
pub mod estimator;
pub mod io;
pub mod iterops;
pub mod oracle;
pub mod relaxation;
pub mod solvers;
pub mod sweep;
pub mod synthetic;

pub use autodiff::{Tape, Var};
pub use densemat::{DenseMatrix, GaussianSampler};
pub use error::{Error, ErrorClass, Result};
pub use estimator::{EstimateReport, EstimatorConfig};
pub use iterops::{AlphaPolicy, IterConfig};
pub use relaxation::{ExpansionCoefficients, ExpansionMode, RelaxationSpec};
pub use solvers::{
    CompletionProblem, OptimizerConfig, Regularizer, SeparationProblem, SolveReport,
};
