//! Synthetic tracking data from known parameters on a stadium-shaped track.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariates::{DEFAULT_RACE_DISTANCE_M, N_FORWARD, N_LATERAL};
use crate::drafting::DragTable;
use crate::error::{Error, Result};
use crate::geometry::{
    plane_to_geo, GeoOutline, GeoPoint, PlanarPoint, Rotation, TrackFrame, TrackModel,
};
use crate::inference::{FittedParams, PointParams};
use crate::ingest::{race_context, CompetitorTrack, CourseType, FrameObs, RaceFrameTable, TrackCondition};
use crate::simulator::{Entrant, RaceState, SimConfig, Simulator};
use crate::spline::SplineSpec;

pub const TRACK_ID: &str = "SYN";
pub const TURN_RADIUS_M: f64 = 120.0;
pub const STRAIGHT_M: f64 = 500.0;
pub const TRACK_WIDTH_M: f64 = 25.0;
/// Rail length; the outline stops short of closing on the start gate.
pub const OUTLINE_LENGTH_M: f64 = 1700.0;
const GATE_OFFSET_M: f64 = 55.0;
const TILT_RAD: f64 = 0.6;
const ANCHOR: (f64, f64) = (40.715, -73.72);

/// Fast start then fade, even pace, slow start with a late kick.
pub const ARCHETYPES: [[f64; 9]; 3] = [
    [3.2, 4.7, 4.8, 4.6, 4.3, 4.1, 3.9, 3.8, 3.8],
    [3.0, 4.4, 4.5, 4.5, 4.4, 4.4, 4.3, 4.3, 4.3],
    [2.8, 4.1, 4.3, 4.3, 4.4, 4.6, 4.8, 4.9, 4.9],
];

pub const CONTEXTS: [(CourseType, TrackCondition, f64); 4] = [
    (CourseType::Dirt, TrackCondition::Fast, 0.08),
    (CourseType::Dirt, TrackCondition::Good, 0.02),
    (CourseType::Dirt, TrackCondition::Sloppy, -0.04),
    (CourseType::Dirt, TrackCondition::Muddy, -0.06),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_horses: usize,
    pub n_races: usize,
    pub field_size: usize,
    pub n_jockeys: usize,
    /// Jockey forward effects are evenly spaced over `[-spread, spread]`.
    pub jockey_spread: f64,
    /// Per-coefficient noise around each archetype.
    pub horse_spread: f64,
    pub sigma_forward: f64,
    pub beta_plm: f64,
    pub sigma_lateral: f64,
    pub lane_width: f64,
    /// Share of starts given an early freeze-then-jump tracking fault.
    pub freeze_fraction: f64,
    pub frame_period: f64,
    pub race_distance: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_horses: 20,
            n_races: 30,
            field_size: 8,
            n_jockeys: 10,
            jockey_spread: 0.2,
            horse_spread: 0.05,
            sigma_forward: 0.25,
            beta_plm: 0.8,
            sigma_lateral: 0.05,
            lane_width: 1.0,
            freeze_fraction: 0.0,
            frame_period: 0.25,
            race_distance: DEFAULT_RACE_DISTANCE_M,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic field: {m}")));
        if self.field_size == 0 || self.field_size > self.n_horses {
            return bad("field size must be between 1 and the number of horses");
        }
        if self.n_jockeys < self.field_size {
            return bad("need at least one jockey per runner");
        }
        if self.n_races == 0 {
            return bad("at least one race is required");
        }
        if !(self.sigma_forward >= 0.0 && self.sigma_lateral >= 0.0 && self.horse_spread >= 0.0) {
            return bad("noise scales must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.freeze_fraction) {
            return bad("freeze_fraction must lie in [0, 1]");
        }
        if !(self.race_distance > 0.0 && self.race_distance < OUTLINE_LENGTH_M - 20.0) {
            return bad("race distance must fit on the synthetic track");
        }
        Ok(())
    }
}

/// Point on the stadium rail (or `offset` metres outside it) at arclength
/// `s` from the gate, running counter-clockwise.
fn stadium_point(s: f64, offset: f64) -> PlanarPoint {
    let r = TURN_RADIUS_M + offset;
    let half = STRAIGHT_M / 2.0;
    let arc = std::f64::consts::PI * TURN_RADIUS_M;
    let perimeter = 2.0 * STRAIGHT_M + 2.0 * arc;
    let mut s = (s + STRAIGHT_M - GATE_OFFSET_M).rem_euclid(perimeter);
    // s now runs from the top-right corner, heading west
    if s < STRAIGHT_M {
        return PlanarPoint::new(half - s, r);
    }
    s -= STRAIGHT_M;
    if s < arc {
        let a = std::f64::consts::FRAC_PI_2 + s / TURN_RADIUS_M;
        return PlanarPoint::new(-half + r * a.cos(), r * a.sin());
    }
    s -= arc;
    if s < STRAIGHT_M {
        return PlanarPoint::new(-half + s, -r);
    }
    s -= STRAIGHT_M;
    let a = -std::f64::consts::FRAC_PI_2 + s / TURN_RADIUS_M;
    PlanarPoint::new(half + r * a.cos(), r * a.sin())
}

/// Stadium outline in geographic coordinates, tilted off the cardinal axes.
pub fn stadium_outline(race_distance: f64) -> Result<GeoOutline> {
    let tilt = Rotation {
        angle: TILT_RAD,
        center: PlanarPoint::new(0.0, 0.0),
    };
    let anchor = GeoPoint::new(ANCHOR.0, ANCHOR.1)?;
    let to_geo = |p: PlanarPoint| plane_to_geo(tilt.apply(p), anchor);
    let n = OUTLINE_LENGTH_M as usize;
    let inner = (0..=n).map(|s| to_geo(stadium_point(s as f64, 0.0))).collect::<Result<Vec<_>>>()?;
    let outer = (0..=n)
        .map(|s| to_geo(stadium_point(s as f64, TRACK_WIDTH_M)))
        .collect::<Result<Vec<_>>>()?;
    let finish = [
        to_geo(stadium_point(race_distance, 0.0))?,
        to_geo(stadium_point(race_distance, TRACK_WIDTH_M))?,
    ];
    Ok(GeoOutline { inner, outer, finish })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorseTruth {
    pub horse_id: String,
    pub archetype: usize,
    pub coefficients: Vec<f64>,
    pub race_count: usize,
}

/// Known parameters behind a synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub horses: Vec<HorseTruth>,
    /// Jockey id and forward effect.
    pub jockeys: Vec<(String, f64)>,
    pub contexts: Vec<(String, f64)>,
    pub sigma_forward: f64,
    pub beta_plm: f64,
    pub sigma_lateral: f64,
    pub seed: u64,
}

impl SynthTruth {
    pub fn point_params(&self) -> PointParams {
        let dim = SplineSpec::default().dimension();
        let mut mu = vec![0.0; dim];
        for h in &self.horses {
            for (m, c) in mu.iter_mut().zip(&h.coefficients) {
                *m += c / self.horses.len() as f64;
            }
        }
        PointParams {
            spline: SplineSpec::default(),
            horses: self
                .horses
                .iter()
                .map(|h| (h.horse_id.clone(), h.coefficients.clone(), h.race_count))
                .collect(),
            mu,
            jockeys: self.jockeys.iter().map(|(j, e)| (j.clone(), *e, 0.0)).collect(),
            contexts: self.contexts.iter().map(|(c, e)| (c.clone(), *e, 0.0)).collect(),
            psi_forward: [0.0; N_FORWARD],
            sigma_forward: self.sigma_forward,
            beta_plm: self.beta_plm,
            psi_lateral: [0.0; N_LATERAL],
            sigma_lateral: self.sigma_lateral,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectedFault {
    pub race_id: String,
    pub horse_id: String,
    /// Last good frame before the freeze and first good frame after.
    pub start_frame: i64,
    pub end_frame: i64,
}

#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub outline: GeoOutline,
    pub track: TrackModel,
    pub frame: TrackFrame,
    pub truth: SynthTruth,
    pub tables: Vec<RaceFrameTable>,
    pub faults: Vec<InjectedFault>,
}

struct RacePlan {
    race_id: String,
    context: usize,
    entrants: Vec<Entrant>,
    lanes: Vec<u32>,
    seed: u64,
}

fn planar_to_geo(frame: &TrackFrame, p: PlanarPoint) -> Result<GeoPoint> {
    let undo = Rotation {
        angle: -frame.rotation.angle,
        center: frame.rotation.center,
    };
    plane_to_geo(undo.apply(p), frame.origin)
}

pub fn generate(config: &SynthConfig, seed: u64) -> Result<SynthDataset> {
    config.validate()?;
    let outline = stadium_outline(config.race_distance)?;
    let (track, frame) = outline.build(&[])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let noise = Normal::new(0.0, config.horse_spread.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut horses: Vec<HorseTruth> = (0..config.n_horses)
        .map(|i| {
            let archetype = i % ARCHETYPES.len();
            let coefficients = ARCHETYPES[archetype]
                .iter()
                .map(|c| if config.horse_spread > 0.0 { c + noise.sample(&mut rng) } else { *c })
                .collect();
            HorseTruth {
                horse_id: format!("H{:02}", i + 1),
                archetype,
                coefficients,
                race_count: 0,
            }
        })
        .collect();
    let mut effects: Vec<f64> = (0..config.n_jockeys)
        .map(|j| {
            if config.n_jockeys == 1 {
                0.0
            } else {
                config.jockey_spread * (2.0 * j as f64 / (config.n_jockeys - 1) as f64 - 1.0)
            }
        })
        .collect();
    effects.shuffle(&mut rng);
    let jockeys: Vec<(String, f64)> = effects
        .into_iter()
        .enumerate()
        .map(|(j, e)| (format!("J{:02}", j + 1), e))
        .collect();
    let contexts: Vec<(String, f64)> = CONTEXTS.iter().map(|(c, t, e)| (race_context(*c, *t), *e)).collect();

    let mut plans = Vec::with_capacity(config.n_races);
    for r in 0..config.n_races {
        let mut runners: Vec<usize> = (0..config.n_horses).collect();
        runners.shuffle(&mut rng);
        runners.truncate(config.field_size);
        runners.sort_unstable();
        let mut riders: Vec<usize> = (0..config.n_jockeys).collect();
        riders.shuffle(&mut rng);
        let mut lanes: Vec<u32> = (1..=config.field_size as u32).collect();
        lanes.shuffle(&mut rng);
        for &h in &runners {
            horses[h].race_count += 1;
        }
        plans.push(RacePlan {
            race_id: format!("R{:03}", r + 1),
            context: rng.random_range(0..CONTEXTS.len()),
            entrants: runners
                .iter()
                .zip(&riders)
                .map(|(&h, &j)| Entrant::new(&horses[h].horse_id, &jockeys[j].0))
                .collect(),
            lanes,
            seed: rng.random(),
        });
    }

    let truth = SynthTruth {
        horses,
        jockeys,
        contexts,
        sigma_forward: config.sigma_forward,
        beta_plm: config.beta_plm,
        sigma_lateral: config.sigma_lateral,
        seed,
    };
    let params = truth.point_params().into_fitted(&DragTable::default())?;
    let races: Vec<(RaceFrameTable, Vec<InjectedFault>)> = plans
        .par_iter()
        .map(|plan| simulate_plan(plan, config, &params, &track, &frame))
        .collect::<Result<_>>()?;
    let mut tables = Vec::with_capacity(races.len());
    let mut faults = Vec::new();
    for (t, f) in races {
        tables.push(t);
        faults.extend(f);
    }
    Ok(SynthDataset {
        outline,
        track,
        frame,
        truth,
        tables,
        faults,
    })
}

fn simulate_plan(
    plan: &RacePlan,
    config: &SynthConfig,
    params: &FittedParams,
    track: &TrackModel,
    frame: &TrackFrame,
) -> Result<(RaceFrameTable, Vec<InjectedFault>)> {
    let sim_config = SimConfig {
        race_distance: config.race_distance,
        frame_period: config.frame_period,
        keep_trajectory: true,
        ..SimConfig::default()
    };
    let sim = Simulator::new(params, track, sim_config)?;
    let (course, condition, _) = CONTEXTS[plan.context];
    let laterals: Vec<f64> = plan.lanes.iter().map(|&l| (l as f64 - 0.5) * config.lane_width).collect();
    let start = RaceState::grid(&plan.entrants, &laterals, &race_context(course, condition))?;
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let outcome = sim.simulate_race(&start, &params.map_draw(), &mut rng)?;
    let trajectory = outcome.trajectory.expect("trajectory requested");

    let mut competitors = Vec::with_capacity(plan.entrants.len());
    let mut faults = Vec::new();
    for (k, entrant) in plan.entrants.iter().enumerate() {
        let mut frames = Vec::new();
        for (f, positions) in trajectory.iter().enumerate() {
            let pos = positions[k];
            let planar = track.locate(pos, 1.0)?;
            frames.push(FrameObs {
                frame: f as i64,
                timestamp_s: f as f64 * config.frame_period,
                geo: planar_to_geo(frame, planar)?,
                planar: None,
                position: None,
                imputed: false,
            });
            if pos.forward >= config.race_distance {
                break;
            }
        }
        if rng.random::<f64>() < config.freeze_fraction {
            let a = rng.random_range(3..25usize);
            let b = a + rng.random_range(3..6usize);
            let held = frames[a].geo;
            for obs in &mut frames[a + 1..b] {
                obs.geo = held;
            }
            faults.push(InjectedFault {
                race_id: plan.race_id.clone(),
                horse_id: entrant.horse_id.clone(),
                start_frame: a as i64,
                end_frame: b as i64,
            });
        }
        competitors.push(CompetitorTrack {
            horse_id: entrant.horse_id.clone(),
            jockey_id: entrant.jockey_id.clone(),
            starting_lane: plan.lanes[k],
            frames,
        });
    }
    competitors.sort_by(|a, b| a.horse_id.cmp(&b.horse_id));
    Ok((
        RaceFrameTable {
            race_id: plan.race_id.clone(),
            track_id: TRACK_ID.to_string(),
            course,
            condition,
            frame_period: config.frame_period,
            competitors,
        },
        faults,
    ))
}
