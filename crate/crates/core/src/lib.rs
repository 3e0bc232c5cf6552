//! Multi-objective counterfactual search for design problems.
//!
//! Everything is generic over the scalar type. The aliases at the root fix it
//! to `f64`; [`single_precision`] has the `f32` equivalents.

pub mod bench2d;
pub mod config;
pub mod design_space;
pub mod manifest;
pub mod objectives;
pub mod optimizer;
pub mod predictors;
pub mod problem;
pub mod sampler;
pub mod scalar;
pub mod study;

pub use config::{ConfigError, FieldError, ProblemConfig};
pub use optimizer::{run_optimization, OptimizerConfig, Progress};
pub use sampler::{sample, SampleError, SamplingRequest, Target};
pub use scalar::Scalar;

pub type DesignSchema = design_space::DesignSchema<f64>;
pub type DesignPoint = design_space::DesignPoint<f64>;
pub type Dataset = design_space::Dataset<f64>;
pub type ProblemSpec = problem::ProblemSpec<f64>;
pub type CandidateArchive = optimizer::CandidateArchive<f64>;
pub type Counterfactual = sampler::Counterfactual<f64>;
pub type CounterfactualSet = sampler::CounterfactualSet<f64>;

pub mod single_precision {
    pub type DesignSchema = crate::design_space::DesignSchema<f32>;
    pub type DesignPoint = crate::design_space::DesignPoint<f32>;
    pub type Dataset = crate::design_space::Dataset<f32>;
    pub type ProblemSpec = crate::problem::ProblemSpec<f32>;
    pub type CandidateArchive = crate::optimizer::CandidateArchive<f32>;
    pub type Counterfactual = crate::sampler::Counterfactual<f32>;
    pub type CounterfactualSet = crate::sampler::CounterfactualSet<f32>;
}
