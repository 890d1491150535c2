//! Shared inputs for the benchmarks.

use racesim_core::covariates::DEFAULT_RACE_DISTANCE_M;
use racesim_core::pipeline::{prepare_races, training_rows};
use racesim_core::synth::{generate, SynthConfig};
use racesim_core::{AnomalyConfig, DragTable, Entrant, FittedParams, RaceState, SynthDataset, TrainingRow};

/// A small synthetic field with its generating parameters and prepared rows.
pub struct Workload {
    pub data: SynthDataset,
    pub truth: FittedParams,
    pub rows: Vec<TrainingRow>,
}

pub fn workload(n_races: usize) -> Workload {
    let config = SynthConfig {
        n_horses: 8,
        n_races,
        field_size: 6,
        n_jockeys: 6,
        ..SynthConfig::default()
    };
    let mut data = generate(&config, 3).expect("synthetic field");
    prepare_races(&mut data.tables, &data.track, &data.frame, &AnomalyConfig::default()).expect("prepare");
    let drag = DragTable::default();
    let rows = training_rows(&data.tables, &data.track, &drag, config.race_distance).expect("rows");
    let truth = data.truth.point_params().into_fitted(&drag).expect("params");
    Workload { data, truth, rows }
}

/// Six-horse start grid in lanes 1..=6.
pub fn six_horse_grid(w: &Workload) -> RaceState {
    let entrants: Vec<Entrant> = w
        .data
        .truth
        .horses
        .iter()
        .zip(&w.data.truth.jockeys)
        .take(6)
        .map(|(h, j)| Entrant::new(&h.horse_id, &j.0))
        .collect();
    let laterals: Vec<f64> = (1..=6).map(|l| l as f64 - 0.5).collect();
    RaceState::grid(&entrants, &laterals, "dirt-fast").expect("grid")
}

pub const RACE_DISTANCE: f64 = DEFAULT_RACE_DISTANCE_M;
