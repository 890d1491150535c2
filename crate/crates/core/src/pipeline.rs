//! Glue from raw tracking tables to training rows and replay snapshots.

use rayon::prelude::*;

use crate::covariates::{race_training_rows, replay_race, ReplaySettings, ReplaySnapshot, TrainingRow};
use crate::drafting::DragTable;
use crate::error::{Error, Result};
use crate::geometry::{TrackFrame, TrackModel};
use crate::ingest::{clean_table, project_table, AnomalyConfig, CleaningReport, RaceFrameTable};

/// Projects every table onto the track and imputes tracking faults.
pub fn prepare_races(
    tables: &mut [RaceFrameTable],
    track: &TrackModel,
    frame: &TrackFrame,
    anomalies: &AnomalyConfig,
) -> Result<Vec<CleaningReport>> {
    tables
        .par_iter_mut()
        .map(|t| {
            project_table(t, track, frame)?;
            clean_table(t, anomalies)
        })
        .collect()
}

/// Training rows of all races, concatenated in table order.
pub fn training_rows(
    tables: &[RaceFrameTable],
    track: &TrackModel,
    drag: &DragTable,
    race_distance: f64,
) -> Result<Vec<TrainingRow>> {
    let per_race: Vec<Vec<TrainingRow>> = tables
        .par_iter()
        .map(|t| {
            race_training_rows(
                t,
                ReplaySettings {
                    track,
                    drag,
                    race_distance,
                },
            )
        })
        .collect::<Result<_>>()?;
    Ok(per_race.into_iter().flatten().collect())
}

/// Replayed state of `race_id` at `frame_index` frames after its start.
pub fn snapshot_at(
    tables: &[RaceFrameTable],
    race_id: &str,
    frame_index: i64,
    track: &TrackModel,
    drag: &DragTable,
    race_distance: f64,
) -> Result<ReplaySnapshot> {
    let table = tables
        .iter()
        .find(|t| t.race_id == race_id)
        .ok_or_else(|| Error::Input(format!("race `{race_id}` not found")))?;
    let (first, last) = table.frame_range();
    if frame_index < 0 || first + frame_index > last {
        return Err(Error::Input(format!(
            "frame index {frame_index} is outside race `{race_id}` (0..={})",
            last - first
        )));
    }
    replay_race(
        table,
        ReplaySettings {
            track,
            drag,
            race_distance,
        },
        Some(first + frame_index),
        |_| {},
    )
}
