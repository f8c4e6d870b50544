pub mod bspline;
pub mod cprsm;
pub mod distributions;
pub mod error;
pub mod glm;
pub mod inference;
pub mod linalg;
pub mod montecarlo;
pub mod penalty;
pub mod simgen;
pub mod tuning;

pub use bspline::{BSplineBasis, GridFunction};
pub use cprsm::{CprsmConfig, FitResult};
pub use error::{HdfpError, Result};
pub use glm::{DesignMatrix, Family, FunctionalDataset, ThetaVector};
pub use inference::{Hypothesis, MiddleMatrix, SandwichCorrection, SandwichCovariance, TestResult};
pub use montecarlo::{run_experiment, ExperimentConfig, ExperimentResult, ExperimentSummary, TuningMode};
pub use penalty::ScadPenalty;
pub use simgen::{NoiseModel, ScenarioConfig};
pub use tuning::{cv_select, CvPlan};
