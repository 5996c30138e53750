//! Joint likelihood over all datasets, MAP fitting and prediction.

pub mod case_study;
pub mod compiled;
pub mod fit;
pub mod layout;
pub mod optim;
pub mod predict;
pub mod sparse;
pub mod spec;

pub use case_study::{compose_case_study_spec, CaseStudyOptions, SpeciesData};
pub use compiled::{gradient, joint_negloglik, CompiledModel, Decomposition, Evaluation};
pub use fit::{fit_map, laplace_standard_errors, FitOptions, FitResult, LatentMode};
pub use layout::{Layout, ParamKind, ParameterVector, Parameters};
pub use optim::{minimize, LbfgsOptions, LbfgsReport};
pub use predict::{grid_points, predict_grid, PredictionGrid};
pub use spec::{DatasetBinding, FieldComponent, ModelSpec, PredictionTarget, Prior};
