//! Movement models, MAP fitting and Laplace-approximate posterior draws.

mod fit;
mod model;
mod optim;

pub use fit::{
    fit_map, fit_params, jockey_ratings, laplace_curvature, laplace_draws, negative_hessian, Curvature,
    FitConfig, FitDiagnostics, FittedModel, FittedParams, ForwardDraw, JockeyRating, LaplaceSampler, LateralDraw,
    ParamDraw, PointParams, Provenance, PARAMS_VERSION,
};
pub use model::{
    gradient, inverse_mills, log_ndtr, log_posterior, value_and_gradient, Layout, ModelData, ModelKind, Priors,
    Vocabulary,
};
pub use optim::{minimize, minimize_preconditioned, OptimOptions, OptimResult};
