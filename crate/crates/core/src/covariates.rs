//! Per-frame covariates shared by the forward and lateral models, and the
//! race replay that turns a projected tracking table into training rows.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::drafting::{drag_coefficient, DragTable, EnergyLedger};
use crate::error::{Error, Result};
use crate::geometry::{motion_delta, Segment, TrackModel, TrackPosition};
use crate::ingest::RaceFrameTable;

/// Value used for nearest-competitor distances when the directional subset
/// is empty.
pub const DISTANCE_CAP_M: f64 = 50.0;
/// Length of the home-stretch entry window after the final turn.
pub const TURN_EXIT_WINDOW_M: f64 = 10.0;
pub const DEFAULT_RACE_DISTANCE_M: f64 = 1609.34;

/// Covariates used by both models, in matrix column order.
pub const FORWARD_FEATURES: [&str; 12] = [
    "n_horses_inside",
    "n_horses_outside",
    "n_horses_forward",
    "n_horses_backward",
    "nearest_inside",
    "nearest_outside",
    "nearest_inside_euclid",
    "nearest_outside_euclid",
    "nearest_forward",
    "is_drafting",
    "prop_energy_saved",
    "is_turn",
];
/// Lateral-model covariates: the shared block followed by the home-stretch
/// indicators. The previous lateral movement has its own coefficient.
pub const LATERAL_FEATURES: [&str; 14] = [
    "n_horses_inside",
    "n_horses_outside",
    "n_horses_forward",
    "n_horses_backward",
    "nearest_inside",
    "nearest_outside",
    "nearest_inside_euclid",
    "nearest_outside_euclid",
    "nearest_forward",
    "is_drafting",
    "prop_energy_saved",
    "is_turn",
    "is_home_stretch",
    "turn_to_home_stretch",
];
pub const N_FORWARD: usize = FORWARD_FEATURES.len();
pub const N_LATERAL: usize = LATERAL_FEATURES.len();

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialCovariates {
    pub n_inside: u32,
    pub n_outside: u32,
    pub n_forward: u32,
    pub n_backward: u32,
    pub nearest_inside: f64,
    pub nearest_outside: f64,
    pub nearest_inside_euclid: f64,
    pub nearest_outside_euclid: f64,
    pub nearest_forward: f64,
    /// Index (into the input slice) of the closest strictly-forward
    /// competitor by Euclidean distance; the one whose wake is used for drag.
    pub leader: Option<usize>,
}

impl Default for SpatialCovariates {
    fn default() -> Self {
        Self {
            n_inside: 0,
            n_outside: 0,
            n_forward: 0,
            n_backward: 0,
            nearest_inside: DISTANCE_CAP_M,
            nearest_outside: DISTANCE_CAP_M,
            nearest_inside_euclid: DISTANCE_CAP_M,
            nearest_outside_euclid: DISTANCE_CAP_M,
            nearest_forward: DISTANCE_CAP_M,
            leader: None,
        }
    }
}

/// Counts and nearest distances from `positions[me]` to every other entry.
/// Smaller lateral is inside; exact ties in a coordinate fall in neither set.
pub fn spatial_covariates(positions: &[TrackPosition], me: usize) -> SpatialCovariates {
    let own = positions[me];
    let mut out = SpatialCovariates::default();
    let mut leader_d2 = f64::INFINITY;
    for (k, other) in positions.iter().enumerate() {
        if k == me {
            continue;
        }
        let df = other.forward - own.forward;
        let dl = other.lateral - own.lateral;
        let euclid = df.hypot(dl);
        if dl < 0.0 {
            out.n_inside += 1;
            out.nearest_inside = out.nearest_inside.min(-dl);
            out.nearest_inside_euclid = out.nearest_inside_euclid.min(euclid);
        } else if dl > 0.0 {
            out.n_outside += 1;
            out.nearest_outside = out.nearest_outside.min(dl);
            out.nearest_outside_euclid = out.nearest_outside_euclid.min(euclid);
        }
        if df > 0.0 {
            out.n_forward += 1;
            out.nearest_forward = out.nearest_forward.min(df);
            let d2 = df * df + dl * dl;
            if d2 < leader_d2 {
                leader_d2 = d2;
                out.leader = Some(k);
            }
        } else if df < 0.0 {
            out.n_backward += 1;
        }
    }
    out
}

/// Drag coefficient for `positions[me]` given its drafting leader.
pub fn frame_drag_coefficient(
    positions: &[TrackPosition],
    me: usize,
    leader: Option<usize>,
    table: &DragTable,
) -> f64 {
    match leader {
        Some(l) => drag_coefficient(
            positions[l].forward - positions[me].forward,
            positions[me].lateral - positions[l].lateral,
            table,
        ),
        None => table.clean_air,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentIndicators {
    pub is_turn: bool,
    pub is_home_stretch: bool,
    pub turn_to_home_stretch: bool,
}

pub fn segment_indicators(pos: TrackPosition, track: &TrackModel) -> Result<SegmentIndicators> {
    let seg = track.segment_at(pos.forward)?;
    let is_home_stretch = seg == Segment::HomeStretch;
    let turn_to_home_stretch = is_home_stretch
        && track
            .home_stretch_entry()
            .is_some_and(|entry| pos.forward >= entry && pos.forward - entry < TURN_EXIT_WINDOW_M);
    Ok(SegmentIndicators {
        is_turn: seg.is_turn(),
        is_home_stretch,
        turn_to_home_stretch,
    })
}

/// Covariate values in [`LATERAL_FEATURES`] order; the forward model uses
/// the first [`N_FORWARD`] entries.
pub type RawFeatures = [f64; N_LATERAL];

pub fn raw_features(
    spatial: &SpatialCovariates,
    segments: SegmentIndicators,
    is_drafting: bool,
    prop_energy_saved: f64,
) -> RawFeatures {
    [
        spatial.n_inside as f64,
        spatial.n_outside as f64,
        spatial.n_forward as f64,
        spatial.n_backward as f64,
        spatial.nearest_inside,
        spatial.nearest_outside,
        spatial.nearest_inside_euclid,
        spatial.nearest_outside_euclid,
        spatial.nearest_forward,
        is_drafting as u8 as f64,
        prop_energy_saved,
        segments.is_turn as u8 as f64,
        segments.is_home_stretch as u8 as f64,
        segments.turn_to_home_stretch as u8 as f64,
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignRow {
    pub race_id: String,
    pub frame: i64,
    pub horse_id: String,
    pub jockey_id: String,
    pub race_context: String,
    /// Cumulative forward distance `j` at this frame.
    pub cumulative_forward: f64,
    pub spatial: SpatialCovariates,
    pub segments: SegmentIndicators,
    pub is_drafting: bool,
    pub prop_energy_saved: f64,
    /// Signed lateral movement over the previous frame (lateral model only).
    pub prev_lat_movement: f64,
}

impl DesignRow {
    pub fn features(&self) -> RawFeatures {
        raw_features(&self.spatial, self.segments, self.is_drafting, self.prop_energy_saved)
    }

    pub fn forward_features(&self) -> [f64; N_FORWARD] {
        let all = self.features();
        let mut out = [0.0; N_FORWARD];
        out.copy_from_slice(&all[..N_FORWARD]);
        out
    }

    pub fn lateral_features(&self) -> [f64; N_LATERAL] {
        self.features()
    }
}

#[derive(Clone, Debug, Default)]
pub struct DesignRowBuilder {
    race_id: Option<String>,
    frame: Option<i64>,
    horse_id: Option<String>,
    jockey_id: Option<String>,
    race_context: Option<String>,
    cumulative_forward: Option<f64>,
    spatial: Option<SpatialCovariates>,
    segments: Option<SegmentIndicators>,
    is_drafting: Option<bool>,
    ledger: Option<EnergyLedger>,
    prev_lat_movement: Option<f64>,
}

impl DesignRowBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn metadata(mut self, race_id: &str, frame: i64, horse_id: &str, jockey_id: &str, race_context: &str) -> Self {
        self.race_id = Some(race_id.to_string());
        self.frame = Some(frame);
        self.horse_id = Some(horse_id.to_string());
        self.jockey_id = Some(jockey_id.to_string());
        self.race_context = Some(race_context.to_string());
        self
    }

    pub fn cumulative_forward(mut self, j: f64) -> Self {
        self.cumulative_forward = Some(j);
        self
    }

    pub fn spatial(mut self, s: SpatialCovariates) -> Self {
        self.spatial = Some(s);
        self
    }

    pub fn segments(mut self, s: SegmentIndicators) -> Self {
        self.segments = Some(s);
        self
    }

    pub fn drafting(mut self, is_drafting: bool, ledger: EnergyLedger) -> Self {
        self.is_drafting = Some(is_drafting);
        self.ledger = Some(ledger);
        self
    }

    /// `None` on the first frame of a race, which records 0.
    pub fn prev_lat_movement(mut self, d_lateral: Option<f64>) -> Self {
        self.prev_lat_movement = Some(d_lateral.unwrap_or(0.0));
        self
    }

    pub fn build(self) -> Result<DesignRow> {
        let ledger = self.ledger.ok_or(Error::Assembly("prop_energy_saved"))?;
        Ok(DesignRow {
            race_id: self.race_id.ok_or(Error::Assembly("race_id"))?,
            frame: self.frame.ok_or(Error::Assembly("frame"))?,
            horse_id: self.horse_id.ok_or(Error::Assembly("horse_id"))?,
            jockey_id: self.jockey_id.ok_or(Error::Assembly("jockey_id"))?,
            race_context: self.race_context.ok_or(Error::Assembly("race_context"))?,
            cumulative_forward: self.cumulative_forward.ok_or(Error::Assembly("cumulative_forward"))?,
            spatial: self.spatial.ok_or(Error::Assembly("spatial"))?,
            segments: self.segments.ok_or(Error::Assembly("segments"))?,
            is_drafting: self.is_drafting.ok_or(Error::Assembly("is_drafting"))?,
            prop_energy_saved: ledger.prop_energy_saved(),
            prev_lat_movement: self.prev_lat_movement.ok_or(Error::Assembly("prev_lat_movement"))?,
        })
    }
}

pub fn assemble_design_row(builder: DesignRowBuilder) -> Result<DesignRow> {
    builder.build()
}

/// Column-wise centring and scaling fitted on the training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    /// Columns with (near) zero spread keep scale 1.
    pub fn fit<'a>(rows: impl Iterator<Item = &'a [f64]>, width: usize) -> Self {
        let mut n = 0usize;
        let mut mean = vec![0.0; width];
        let mut m2 = vec![0.0; width];
        for row in rows {
            n += 1;
            for c in 0..width {
                let delta = row[c] - mean[c];
                mean[c] += delta / n as f64;
                m2[c] += delta * (row[c] - mean[c]);
            }
        }
        let sd = m2
            .iter()
            .map(|&s| {
                let sd = if n > 1 { (s / (n - 1) as f64).sqrt() } else { 0.0 };
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, sd }
    }

    pub fn identity(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            sd: vec![1.0; width],
        }
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_in_place(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.sd) {
            *v = (*v - m) / s;
        }
    }
}

/// One frame transition: covariates at frame `t` and the observed movement
/// to `t + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingRow {
    pub row: DesignRow,
    pub d_forward: f64,
    pub d_lateral: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayEntry {
    pub horse_id: String,
    pub jockey_id: String,
    pub starting_lane: u32,
    pub position: TrackPosition,
    pub prev_lat_movement: f64,
    pub ledger: EnergyLedger,
    /// Seconds from the first frame, interpolated at the crossing.
    pub finish_time: Option<f64>,
    /// Lateral position at the finish crossing.
    pub finish_lateral: Option<f64>,
}

/// State of every competitor at one frame of a replayed race.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplaySnapshot {
    pub race_id: String,
    pub race_context: String,
    /// Frames elapsed since the first frame of the race.
    pub frame_index: i64,
    pub entries: Vec<ReplayEntry>,
}

#[derive(Clone, Copy, Debug)]
pub struct ReplaySettings<'a> {
    pub track: &'a TrackModel,
    pub drag: &'a DragTable,
    pub race_distance: f64,
}

/// Walks a projected race frame by frame, calling `on_row` for each
/// transition of an unfinished competitor, and returns the state at
/// `stop_frame` (or at the last frame).
///
/// Covariates at `t` use the positions at `t` of unfinished competitors;
/// the energy ledger for the move `t -> t + 1` uses the drag coefficient of
/// the configuration at `t`.
pub fn replay_race(
    table: &RaceFrameTable,
    settings: ReplaySettings<'_>,
    stop_frame: Option<i64>,
    mut on_row: impl FnMut(TrainingRow),
) -> Result<ReplaySnapshot> {
    if !table.is_projected() {
        return Err(Error::Input(format!(
            "race `{}` has unprojected frames",
            table.race_id
        )));
    }
    let (first, last) = table.frame_range();
    let stop = stop_frame.unwrap_or(last);
    if stop < first || stop > last {
        return Err(Error::Range(format!(
            "frame {stop} is outside race `{}` frames {first}..={last}",
            table.race_id
        )));
    }
    let dt = table.frame_period;
    let context = table.context();
    let mut entries: Vec<ReplayEntry> = table
        .competitors
        .iter()
        .map(|c| {
            let p = c.frames[0].position.expect("checked projected");
            ReplayEntry {
                horse_id: c.horse_id.clone(),
                jockey_id: c.jockey_id.clone(),
                starting_lane: c.starting_lane,
                position: p,
                prev_lat_movement: 0.0,
                ledger: EnergyLedger::default(),
                finish_time: (p.forward >= settings.race_distance).then_some(0.0),
                finish_lateral: (p.forward >= settings.race_distance).then_some(p.lateral),
            }
        })
        .collect();
    let mut active_idx = Vec::with_capacity(entries.len());
    let mut active_pos = Vec::with_capacity(entries.len());
    for t in first..stop {
        active_idx.clear();
        active_pos.clear();
        for (k, c) in table.competitors.iter().enumerate() {
            if entries[k].finish_time.is_some() {
                continue;
            }
            if let Some(p) = c.position(t) {
                entries[k].position = p;
                active_idx.push(k);
                active_pos.push(p);
            }
        }
        for (slot, &k) in active_idx.iter().enumerate() {
            let comp = &table.competitors[k];
            let Some(next) = comp.position(t + 1) else {
                continue;
            };
            let here = active_pos[slot];
            let spatial = spatial_covariates(&active_pos, slot);
            let c_d = frame_drag_coefficient(&active_pos, slot, spatial.leader, settings.drag);
            let entry = &mut entries[k];
            let row = DesignRowBuilder::new()
                .metadata(&table.race_id, t, &comp.horse_id, &comp.jockey_id, &context)
                .cumulative_forward(here.forward)
                .spatial(spatial)
                .segments(segment_indicators(here, settings.track)?)
                .drafting(c_d < settings.drag.clean_air, entry.ledger)
                .prev_lat_movement((t > comp.first_frame()).then_some(entry.prev_lat_movement))
                .build()?;
            let delta = motion_delta(here, next);
            on_row(TrainingRow {
                row,
                d_forward: delta.d_forward,
                d_lateral: delta.d_lateral,
            });
            entry.ledger.update(delta.d_total / dt, c_d, delta.d_total, settings.drag);
            entry.prev_lat_movement = delta.d_lateral;
            entry.position = next;
            if next.forward >= settings.race_distance {
                let i = (t - first) as f64;
                let frac = if delta.d_forward > 0.0 {
                    (settings.race_distance - here.forward) / delta.d_forward
                } else {
                    1.0
                };
                entry.finish_time = Some(i * dt + dt * frac);
                entry.finish_lateral = Some(next.lateral);
            }
        }
    }
    for (k, c) in table.competitors.iter().enumerate() {
        if entries[k].finish_time.is_none() {
            if let Some(p) = c.position(stop) {
                entries[k].position = p;
            }
        }
    }
    Ok(ReplaySnapshot {
        race_id: table.race_id.clone(),
        race_context: context,
        frame_index: stop - first,
        entries,
    })
}

/// All training rows of a race.
pub fn race_training_rows(table: &RaceFrameTable, settings: ReplaySettings<'_>) -> Result<Vec<TrainingRow>> {
    let mut rows = Vec::new();
    replay_race(table, settings, None, |r| rows.push(r))?;
    Ok(rows)
}

/// Writes raw (unstandardized) design rows with their responses.
pub fn write_design_rows<W: Write>(rows: &[TrainingRow], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = vec![
        "race_id",
        "frame",
        "horse_id",
        "jockey_id",
        "race_context",
        "cumulative_forward",
    ];
    header.extend(LATERAL_FEATURES);
    header.extend(["prev_lat_movement", "d_forward", "d_lateral"]);
    wtr.write_record(&header)?;
    for r in rows {
        let d = &r.row;
        let mut rec = vec![
            d.race_id.clone(),
            d.frame.to_string(),
            d.horse_id.clone(),
            d.jockey_id.clone(),
            d.race_context.clone(),
            d.cumulative_forward.to_string(),
        ];
        rec.extend(d.features().iter().map(f64::to_string));
        rec.extend([
            d.prev_lat_movement.to_string(),
            r.d_forward.to_string(),
            r.d_lateral.to_string(),
        ]);
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}
