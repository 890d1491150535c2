//! Frame-level forward/lateral movement models for multi-competitor track
//! races, with posterior-predictive race simulation.

pub mod covariates;
pub mod drafting;
pub mod error;
pub mod geometry;
pub mod inference;
pub mod ingest;
pub mod pipeline;
pub mod profiles;
pub mod simulator;
pub mod spline;
pub mod synth;

pub use covariates::{DesignRow, ReplaySnapshot, Standardizer, TrainingRow};
pub use drafting::{DragTable, EnergyLedger};
pub use error::{Error, Result};
pub use geometry::{GeoOutline, GeoPoint, PlanarPoint, TrackFrame, TrackModel, TrackPosition};
pub use inference::{FitConfig, FittedParams, JockeyRating, ParamDraw, Priors};
pub use ingest::{AnomalyConfig, CleaningReport, RaceFrameTable};
pub use profiles::{Clustering, ProfileVector};
pub use simulator::{Entrant, LaneExperiment, LaneSettings, PlacementMatrix, RaceState, SimConfig, Simulator};
pub use spline::{Basis, SplineSpec};
pub use synth::{SynthConfig, SynthDataset, SynthTruth};
