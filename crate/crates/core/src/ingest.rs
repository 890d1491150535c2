//! Frame-level tracking tables: parsing, projection onto the track, anomaly
//! detection and peer-proportional gap imputation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{motion_delta, GeoPoint, PlanarPoint, TrackFrame, TrackModel, TrackPosition};

pub const DEFAULT_FRAME_PERIOD: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CourseType {
    Dirt,
    Turf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackCondition {
    Fast,
    Good,
    Sloppy,
    Muddy,
}

impl FromStr for CourseType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dirt" | "d" => Ok(CourseType::Dirt),
            "turf" | "t" => Ok(CourseType::Turf),
            other => Err(format!("unknown course type `{other}`")),
        }
    }
}

impl FromStr for TrackCondition {
    type Err = String;

    /// Accepts full names in any case and the usual chart abbreviations.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fast" | "ft" => Ok(TrackCondition::Fast),
            "good" | "gd" => Ok(TrackCondition::Good),
            "sloppy" | "sy" | "sly" => Ok(TrackCondition::Sloppy),
            "muddy" | "my" => Ok(TrackCondition::Muddy),
            other => Err(format!("unknown track condition `{other}`")),
        }
    }
}

impl fmt::Display for CourseType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CourseType::Dirt => "dirt",
            CourseType::Turf => "turf",
        })
    }
}

impl fmt::Display for TrackCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrackCondition::Fast => "fast",
            TrackCondition::Good => "good",
            TrackCondition::Sloppy => "sloppy",
            TrackCondition::Muddy => "muddy",
        })
    }
}

/// Label of the course/condition random effect, e.g. `dirt-fast`.
pub fn race_context(course: CourseType, condition: TrackCondition) -> String {
    format!("{course}-{condition}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameObs {
    pub frame: i64,
    pub timestamp_s: f64,
    pub geo: GeoPoint,
    pub planar: Option<PlanarPoint>,
    pub position: Option<TrackPosition>,
    pub imputed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompetitorTrack {
    pub horse_id: String,
    pub jockey_id: String,
    pub starting_lane: u32,
    /// Consecutive frames, first to last.
    pub frames: Vec<FrameObs>,
}

impl CompetitorTrack {
    pub fn first_frame(&self) -> i64 {
        self.frames[0].frame
    }

    pub fn last_frame(&self) -> i64 {
        self.frames[self.frames.len() - 1].frame
    }

    pub fn obs(&self, frame: i64) -> Option<&FrameObs> {
        let k = frame - self.first_frame();
        if k < 0 {
            return None;
        }
        self.frames.get(k as usize)
    }

    pub fn position(&self, frame: i64) -> Option<TrackPosition> {
        self.obs(frame).and_then(|o| o.position)
    }

    fn obs_mut(&mut self, frame: i64) -> Option<&mut FrameObs> {
        let k = frame - self.first_frame();
        if k < 0 {
            return None;
        }
        self.frames.get_mut(k as usize)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RaceFrameTable {
    pub race_id: String,
    pub track_id: String,
    pub course: CourseType,
    pub condition: TrackCondition,
    pub frame_period: f64,
    /// Sorted by horse id.
    pub competitors: Vec<CompetitorTrack>,
}

impl RaceFrameTable {
    pub fn context(&self) -> String {
        race_context(self.course, self.condition)
    }

    /// First and last frame over all competitors.
    pub fn frame_range(&self) -> (i64, i64) {
        let first = self.competitors.iter().map(|c| c.first_frame()).min().unwrap_or(0);
        let last = self.competitors.iter().map(|c| c.last_frame()).max().unwrap_or(0);
        (first, last)
    }

    pub fn competitor(&self, horse_id: &str) -> Option<&CompetitorTrack> {
        self.competitors.iter().find(|c| c.horse_id == horse_id)
    }

    pub fn n_rows(&self) -> usize {
        self.competitors.iter().map(|c| c.frames.len()).sum()
    }

    pub fn is_projected(&self) -> bool {
        self.competitors
            .iter()
            .all(|c| c.frames.iter().all(|o| o.position.is_some()))
    }
}

const REQUIRED_COLUMNS: [&str; 11] = [
    "race_id",
    "track_id",
    "course_type",
    "track_condition",
    "frame",
    "timestamp_s",
    "horse_id",
    "jockey_id",
    "starting_lane",
    "latitude",
    "longitude",
];

#[derive(Debug, Deserialize, Serialize)]
struct TrackingRecord {
    race_id: String,
    track_id: String,
    course_type: String,
    track_condition: String,
    frame: i64,
    timestamp_s: f64,
    horse_id: String,
    jockey_id: String,
    starting_lane: u32,
    latitude: f64,
    longitude: f64,
    #[serde(default)]
    x_m: Option<f64>,
    #[serde(default)]
    y_m: Option<f64>,
    #[serde(default)]
    forward_m: Option<f64>,
    #[serde(default)]
    lateral_m: Option<f64>,
    #[serde(default)]
    imputed: Option<u8>,
}

struct RaceBuilder {
    track_id: String,
    course: CourseType,
    condition: TrackCondition,
    competitors: BTreeMap<String, CompetitorTrack>,
}

/// Parses a tracking table, possibly holding several races, into one
/// validated table per race (ordered by race id).
pub fn parse_tracking<R: Read>(reader: R, frame_period: f64) -> Result<Vec<RaceFrameTable>> {
    if !(frame_period > 0.0) {
        return Err(Error::Input(format!(
            "frame period must be positive, got {frame_period}"
        )));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    for col in REQUIRED_COLUMNS {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::Schema {
                row: 1,
                message: format!("missing required column `{col}`"),
            });
        }
    }
    let mut races: BTreeMap<String, RaceBuilder> = BTreeMap::new();
    for (i, rec) in rdr.deserialize::<TrackingRecord>().enumerate() {
        let row = i + 2;
        let schema = |message: String| Error::Schema { row, message };
        let rec = rec.map_err(|e| schema(e.to_string()))?;
        let course: CourseType = rec.course_type.parse().map_err(schema)?;
        let condition: TrackCondition = rec.track_condition.parse().map_err(schema)?;
        let geo = GeoPoint::new(rec.latitude, rec.longitude).map_err(|e| schema(e.to_string()))?;
        let race = races.entry(rec.race_id.clone()).or_insert_with(|| RaceBuilder {
            track_id: rec.track_id.clone(),
            course,
            condition,
            competitors: BTreeMap::new(),
        });
        if race.track_id != rec.track_id || race.course != course || race.condition != condition {
            return Err(schema(format!(
                "race `{}` has inconsistent track/course/condition metadata",
                rec.race_id
            )));
        }
        let planar = match (rec.x_m, rec.y_m) {
            (Some(x), Some(y)) => Some(PlanarPoint::new(x, y)),
            _ => None,
        };
        let position = match (rec.forward_m, rec.lateral_m) {
            (Some(f), Some(l)) => Some(TrackPosition::new(f, l)),
            _ => None,
        };
        let obs = FrameObs {
            frame: rec.frame,
            timestamp_s: rec.timestamp_s,
            geo,
            planar,
            position,
            imputed: rec.imputed.unwrap_or(0) != 0,
        };
        let comp = race
            .competitors
            .entry(rec.horse_id.clone())
            .or_insert_with(|| CompetitorTrack {
                horse_id: rec.horse_id.clone(),
                jockey_id: rec.jockey_id.clone(),
                starting_lane: rec.starting_lane,
                frames: Vec::new(),
            });
        if comp.jockey_id != rec.jockey_id || comp.starting_lane != rec.starting_lane {
            return Err(schema(format!(
                "horse `{}` changes jockey or starting lane within race `{}`",
                rec.horse_id, rec.race_id
            )));
        }
        if let Some(last) = comp.frames.last() {
            if rec.frame == last.frame {
                return Err(schema(format!(
                    "duplicate row for horse `{}` at frame {}",
                    rec.horse_id, rec.frame
                )));
            }
            if rec.frame < last.frame {
                return Err(schema(format!(
                    "non-monotone frame numbering for horse `{}`: frame {} after {}",
                    rec.horse_id, rec.frame, last.frame
                )));
            }
            if rec.frame != last.frame + 1 {
                return Err(schema(format!(
                    "frames for horse `{}` skip from {} to {}",
                    rec.horse_id, last.frame, rec.frame
                )));
            }
        }
        comp.frames.push(obs);
    }
    Ok(races
        .into_iter()
        .map(|(race_id, b)| RaceFrameTable {
            race_id,
            track_id: b.track_id,
            course: b.course,
            condition: b.condition,
            frame_period,
            competitors: b.competitors.into_values().collect(),
        })
        .collect())
}

/// Writes tables sorted by (race, frame, horse). Planar and track
/// positions are written when present, so the output parses back.
pub fn write_tracking<W: Write>(tables: &[RaceFrameTable], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut sorted: Vec<&RaceFrameTable> = tables.iter().collect();
    sorted.sort_by(|a, b| a.race_id.cmp(&b.race_id));
    for table in sorted {
        let mut rows: Vec<(i64, &str, &CompetitorTrack, &FrameObs)> = table
            .competitors
            .iter()
            .flat_map(|c| c.frames.iter().map(move |o| (o.frame, c.horse_id.as_str(), c, o)))
            .collect();
        rows.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(b.1)));
        for (_, _, c, o) in rows {
            wtr.serialize(TrackingRecord {
                race_id: table.race_id.clone(),
                track_id: table.track_id.clone(),
                course_type: table.course.to_string(),
                track_condition: table.condition.to_string(),
                frame: o.frame,
                timestamp_s: o.timestamp_s,
                horse_id: c.horse_id.clone(),
                jockey_id: c.jockey_id.clone(),
                starting_lane: c.starting_lane,
                latitude: o.geo.latitude,
                longitude: o.geo.longitude,
                x_m: o.planar.map(|p| p.x),
                y_m: o.planar.map(|p| p.y),
                forward_m: o.position.map(|p| p.forward),
                lateral_m: o.position.map(|p| p.lateral),
                imputed: Some(o.imputed as u8),
            })?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Fills planar and forward/lateral positions for every observation.
pub fn project_table(table: &mut RaceFrameTable, track: &TrackModel, frame: &TrackFrame) -> Result<()> {
    for comp in &mut table.competitors {
        for obs in &mut comp.frames {
            let planar = frame.to_plane(obs.geo)?;
            obs.planar = Some(planar);
            obs.position = Some(track.project(planar)?);
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnomalyKind {
    /// Stuck for several frames, then reappears far ahead.
    Frozen,
    /// Single implausible displacement with no preceding freeze.
    Jump,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalySpan {
    pub competitor: String,
    /// Last reliable frame before the anomaly.
    pub start_frame: i64,
    /// First reliable frame after the anomaly.
    pub end_frame: i64,
    pub kind: AnomalyKind,
}

impl AnomalySpan {
    pub fn overlaps(&self, a: i64, b: i64) -> bool {
        self.start_frame <= b && a <= self.end_frame
    }

    pub fn interior_frames(&self) -> i64 {
        (self.end_frame - self.start_frame - 1).max(0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnomalyConfig {
    /// Per-frame displacement (m) below which a competitor counts as frozen.
    pub freeze_epsilon: f64,
    /// Consecutive frozen displacements needed to flag a freeze.
    pub min_frozen_frames: usize,
    /// Speed (m/s) above which a single-frame displacement is a jump.
    pub max_speed: f64,
    /// Spans ending after this many frames from the race start get a warning.
    pub early_window_frames: i64,
}

impl Default for AnomalyConfig {
    fn default() -> Self {
        Self {
            freeze_epsilon: 0.05,
            min_frozen_frames: 2,
            max_speed: 20.0,
            early_window_frames: 40,
        }
    }
}

fn require_positions(comp: &CompetitorTrack) -> Result<Vec<TrackPosition>> {
    comp.frames
        .iter()
        .map(|o| {
            o.position.ok_or_else(|| {
                Error::Input(format!(
                    "horse `{}` has no track position at frame {}; project the table first",
                    comp.horse_id, o.frame
                ))
            })
        })
        .collect()
}

pub fn detect_anomalies(table: &RaceFrameTable, config: &AnomalyConfig) -> Result<Vec<AnomalySpan>> {
    let jump = config.max_speed * table.frame_period;
    let mut spans = Vec::new();
    for comp in &table.competitors {
        let pos = require_positions(comp)?;
        let n = pos.len();
        let disp: Vec<f64> = (0..n)
            .map(|k| {
                if k == 0 {
                    f64::NAN
                } else {
                    motion_delta(pos[k - 1], pos[k]).d_total
                }
            })
            .collect();
        let first = comp.first_frame();
        let mut k = 1;
        while k < n {
            if disp[k] < config.freeze_epsilon {
                let mut r = k;
                while r < n && disp[r] < config.freeze_epsilon {
                    r += 1;
                }
                if r - k >= config.min_frozen_frames && r < n && disp[r] > jump {
                    // the frozen value first appears at index k - 1
                    let start = (k as i64 - 2).max(0);
                    spans.push(AnomalySpan {
                        competitor: comp.horse_id.clone(),
                        start_frame: first + start,
                        end_frame: first + r as i64,
                        kind: AnomalyKind::Frozen,
                    });
                    k = r + 1;
                } else {
                    k = r;
                }
            } else if disp[k] > jump {
                spans.push(AnomalySpan {
                    competitor: comp.horse_id.clone(),
                    start_frame: first + k as i64 - 1,
                    end_frame: first + k as i64,
                    kind: AnomalyKind::Jump,
                });
                k += 1;
            } else {
                k += 1;
            }
        }
    }
    Ok(spans)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImputationRecord {
    pub span: AnomalySpan,
    pub peers: Vec<String>,
    pub frames_imputed: i64,
    pub outside_early_window: bool,
}

/// Replaces the interior of `span` by shrinking toward the peers' mean
/// progress pattern: the competitor covers the same share of its own
/// `[a, b]` distance at each frame as the reliable peers do on average.
///
/// Peers are competitors observed over the whole span with no anomaly in
/// `all_spans` overlapping it.
pub fn impute_gap(
    table: &mut RaceFrameTable,
    span: &AnomalySpan,
    all_spans: &[AnomalySpan],
    config: &AnomalyConfig,
) -> Result<ImputationRecord> {
    let (a, b) = (span.start_frame, span.end_frame);
    let impossible = |reason: &str| Error::ImputationImpossible {
        competitor: span.competitor.clone(),
        start: a,
        end: b,
        reason: reason.to_string(),
    };
    if a >= b {
        return Err(impossible("span is empty"));
    }
    let target = table
        .competitors
        .iter()
        .position(|c| c.horse_id == span.competitor)
        .ok_or_else(|| impossible("competitor not in table"))?;
    let (pa, pb) = {
        let c = &table.competitors[target];
        match (c.position(a), c.position(b)) {
            (Some(pa), Some(pb)) => (pa, pb),
            _ => return Err(impossible("span endpoints are not observed")),
        }
    };

    let mut peers: Vec<(String, Vec<f64>)> = Vec::new();
    for (i, peer) in table.competitors.iter().enumerate() {
        if i == target
            || all_spans
                .iter()
                .any(|s| s.competitor == peer.horse_id && s.overlaps(a, b))
        {
            continue;
        }
        let track: Option<Vec<f64>> = (a..=b).map(|t| peer.position(t).map(|p| p.forward)).collect();
        let Some(track) = track else { continue };
        let covered = track[track.len() - 1] - track[0];
        if !(covered > 0.0) {
            continue;
        }
        let props = track.iter().map(|f| (f - track[0]) / covered).collect();
        peers.push((peer.horse_id.clone(), props));
    }
    if peers.is_empty() {
        return Err(impossible("no reliable competitor covers the span"));
    }

    let outside = b - table.frame_range().0 > config.early_window_frames;
    if outside {
        log::warn!(
            "imputing {} frames {}..={} in race {} outside the first {} frames",
            span.competitor,
            a,
            b,
            table.race_id,
            config.early_window_frames
        );
    }
    let distance = pb.forward - pa.forward;
    let comp = &mut table.competitors[target];
    for t in a + 1..b {
        let k = (t - a) as usize;
        let mean_prop = peers.iter().map(|(_, p)| p[k]).sum::<f64>() / peers.len() as f64;
        let frac = (t - a) as f64 / (b - a) as f64;
        let obs = comp
            .obs_mut(t)
            .ok_or_else(|| impossible("interior frame missing"))?;
        obs.position = Some(TrackPosition::new(
            pa.forward + distance * mean_prop,
            pa.lateral + (pb.lateral - pa.lateral) * frac,
        ));
        obs.imputed = true;
    }
    Ok(ImputationRecord {
        span: span.clone(),
        peers: peers.into_iter().map(|(id, _)| id).collect(),
        frames_imputed: b - a - 1,
        outside_early_window: outside,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub race_id: String,
    pub competitors: usize,
    pub spans: Vec<AnomalySpan>,
    pub imputations: Vec<ImputationRecord>,
    pub failures: Vec<String>,
}

impl CleaningReport {
    pub fn imputed_competitors(&self) -> usize {
        self.imputations
            .iter()
            .map(|r| r.span.competitor.as_str())
            .collect::<BTreeSet<_>>()
            .len()
    }
}

/// Detects anomalies and imputes every frozen span that has interior frames.
pub fn clean_table(table: &mut RaceFrameTable, config: &AnomalyConfig) -> Result<CleaningReport> {
    let spans = detect_anomalies(table, config)?;
    let mut report = CleaningReport {
        race_id: table.race_id.clone(),
        competitors: table.competitors.len(),
        ..Default::default()
    };
    for span in spans.iter().filter(|s| s.kind == AnomalyKind::Frozen && s.interior_frames() > 0) {
        match impute_gap(table, span, &spans, config) {
            Ok(rec) => report.imputations.push(rec),
            Err(e @ Error::ImputationImpossible { .. }) => {
                log::warn!("{e}");
                report.failures.push(e.to_string());
            }
            Err(e) => return Err(e),
        }
    }
    report.spans = spans;
    Ok(report)
}
