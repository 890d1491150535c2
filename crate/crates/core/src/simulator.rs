//! Frame-by-frame race simulation, posterior-predictive placement
//! probabilities and the lane-assignment experiment.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::covariates::{
    frame_drag_coefficient, raw_features, segment_indicators, spatial_covariates, ReplaySnapshot,
    DEFAULT_RACE_DISTANCE_M, N_FORWARD, N_LATERAL,
};
use crate::drafting::EnergyLedger;
use crate::error::{Error, Result};
use crate::geometry::{TrackModel, TrackPosition};
use crate::inference::{FittedParams, LaplaceSampler, ParamDraw};
use crate::ingest::DEFAULT_FRAME_PERIOD;
use crate::spline::Basis;

pub const DEFAULT_FRAME_CAP: u32 = 1200;
pub const DEFAULT_LANE_WIDTH_M: f64 = 1.0;
/// Largest field for which every lane assignment is enumerated.
pub const MAX_LANE_FIELD: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub race_distance: f64,
    pub frame_period: f64,
    pub frame_cap: u32,
    pub keep_trajectory: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            race_distance: DEFAULT_RACE_DISTANCE_M,
            frame_period: DEFAULT_FRAME_PERIOD,
            frame_cap: DEFAULT_FRAME_CAP,
            keep_trajectory: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompetitorState {
    pub horse_id: String,
    pub jockey_id: String,
    pub position: TrackPosition,
    pub prev_lat_movement: f64,
    pub ledger: EnergyLedger,
    /// Seconds from the race start, interpolated at the crossing.
    pub finish_time: Option<f64>,
    pub finish_lateral: Option<f64>,
}

impl CompetitorState {
    pub fn new(horse_id: &str, jockey_id: &str, position: TrackPosition) -> Self {
        Self {
            horse_id: horse_id.to_string(),
            jockey_id: jockey_id.to_string(),
            position,
            prev_lat_movement: 0.0,
            ledger: EnergyLedger::default(),
            finish_time: None,
            finish_lateral: None,
        }
    }

    pub fn finished(&self) -> bool {
        self.finish_time.is_some()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RaceState {
    /// Frames elapsed since the race start.
    pub frame: u32,
    pub race_context: String,
    pub competitors: Vec<CompetitorState>,
}

impl RaceState {
    /// Start grid at forward 0 with the given lateral offsets.
    pub fn grid(entrants: &[Entrant], laterals: &[f64], race_context: &str) -> Result<Self> {
        if entrants.len() != laterals.len() {
            return Err(Error::Simulation("one lateral offset per entrant is required".into()));
        }
        Ok(Self {
            frame: 0,
            race_context: race_context.to_string(),
            competitors: entrants
                .iter()
                .zip(laterals)
                .map(|(e, &l)| CompetitorState::new(&e.horse_id, &e.jockey_id, TrackPosition::new(0.0, l.max(0.0))))
                .collect(),
        })
    }

    /// State of a replayed race, carrying the observed energy ledgers and
    /// any finish times already recorded.
    pub fn from_snapshot(snapshot: &ReplaySnapshot) -> Self {
        Self {
            frame: snapshot.frame_index as u32,
            race_context: snapshot.race_context.clone(),
            competitors: snapshot
                .entries
                .iter()
                .map(|e| CompetitorState {
                    horse_id: e.horse_id.clone(),
                    jockey_id: e.jockey_id.clone(),
                    position: e.position,
                    prev_lat_movement: e.prev_lat_movement,
                    ledger: e.ledger,
                    finish_time: e.finish_time,
                    finish_lateral: e.finish_lateral,
                })
                .collect(),
        }
    }

    pub fn unfinished(&self) -> usize {
        self.competitors.iter().filter(|c| !c.finished()).count()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entrant {
    pub horse_id: String,
    pub jockey_id: String,
}

impl Entrant {
    pub fn new(horse_id: &str, jockey_id: &str) -> Self {
        Self {
            horse_id: horse_id.to_string(),
            jockey_id: jockey_id.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationOutcome {
    pub finish_times: Vec<f64>,
    /// 1-based rank of each competitor, in state order.
    pub ranks: Vec<usize>,
    pub draw: usize,
    pub seed: u64,
    /// Positions of every competitor at every simulated frame.
    pub trajectory: Option<Vec<Vec<TrackPosition>>>,
}

/// Ranks by finish time, then lateral at the crossing, then horse id.
pub fn rank_finishers(state: &RaceState) -> Result<Vec<usize>> {
    let n = state.competitors.len();
    let mut order: Vec<usize> = (0..n).collect();
    for c in &state.competitors {
        if !c.finished() {
            return Err(Error::Simulation(format!("{} has not finished", c.horse_id)));
        }
    }
    order.sort_by(|&a, &b| {
        let (ca, cb) = (&state.competitors[a], &state.competitors[b]);
        ca.finish_time
            .unwrap()
            .total_cmp(&cb.finish_time.unwrap())
            .then_with(|| ca.finish_lateral.unwrap_or(0.0).total_cmp(&cb.finish_lateral.unwrap_or(0.0)))
            .then_with(|| ca.horse_id.cmp(&cb.horse_id))
    });
    let mut ranks = vec![0; n];
    for (r, &k) in order.iter().enumerate() {
        ranks[k] = r + 1;
    }
    Ok(ranks)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinishSummary {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Probability that row `h` finishes at rank `r + 1`, with per-row rank
/// and finish-time summaries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementMatrix {
    pub labels: Vec<String>,
    pub probabilities: Vec<Vec<f64>>,
    pub expected_rank: Vec<f64>,
    /// Monte Carlo standard error of each expected rank.
    pub expected_rank_se: Vec<f64>,
    pub finish_time: Vec<FinishSummary>,
    pub n_simulations: usize,
    pub seed: u64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl PlacementMatrix {
    /// `ranks[s][h]` and `times[s][h]` for simulation `s` and row `h`.
    pub fn aggregate(labels: Vec<String>, ranks: &[Vec<usize>], times: &[Vec<f64>], seed: u64) -> Self {
        let n = labels.len();
        let sims = ranks.len();
        let mut counts = vec![vec![0usize; n]; n];
        let mut rank_sum = vec![0.0; n];
        let mut rank_sq = vec![0.0; n];
        for r in ranks {
            for (h, &rank) in r.iter().enumerate() {
                counts[h][rank - 1] += 1;
                rank_sum[h] += rank as f64;
                rank_sq[h] += (rank * rank) as f64;
            }
        }
        let total = sims as f64;
        let probabilities = counts
            .iter()
            .map(|row| row.iter().map(|&c| c as f64 / total).collect())
            .collect();
        let expected_rank: Vec<f64> = rank_sum.iter().map(|s| s / total).collect();
        let expected_rank_se = (0..n)
            .map(|h| {
                if sims < 2 {
                    return 0.0;
                }
                let var = (rank_sq[h] - total * expected_rank[h].powi(2)) / (total - 1.0);
                (var.max(0.0) / total).sqrt()
            })
            .collect();
        let finish_time = (0..n)
            .map(|h| {
                let mut t: Vec<f64> = times.iter().map(|row| row[h]).collect();
                t.sort_by(f64::total_cmp);
                FinishSummary {
                    mean: t.iter().sum::<f64>() / t.len().max(1) as f64,
                    lower: quantile(&t, 0.025),
                    upper: quantile(&t, 0.975),
                }
            })
            .collect();
        Self {
            labels,
            probabilities,
            expected_rank,
            expected_rank_se,
            finish_time,
            n_simulations: sims,
            seed,
        }
    }

    /// Largest deviation of any row or column sum from 1.
    pub fn stochasticity_error(&self) -> f64 {
        let n = self.labels.len();
        let mut worst: f64 = 0.0;
        for h in 0..n {
            let row: f64 = self.probabilities[h].iter().sum();
            let col: f64 = self.probabilities.iter().map(|r| r[h]).sum();
            worst = worst.max((row - 1.0).abs()).max((col - 1.0).abs());
        }
        worst
    }

    pub fn win_probability(&self, label: &str) -> Option<f64> {
        let h = self.labels.iter().position(|l| l == label)?;
        Some(self.probabilities[h][0])
    }
}

/// Truncated below at zero, by inverting the CDF on the admissible range.
fn sample_truncated<R: Rng + ?Sized>(mean: f64, sd: f64, rng: &mut R) -> f64 {
    if sd == 0.0 {
        return mean.max(0.0);
    }
    let u = 1.0 - rng.random::<f64>();
    let upper_mass = 0.5 * libm::erfc(-(mean / sd) / std::f64::consts::SQRT_2);
    if upper_mass < 1e-300 {
        // far tail: the excess over the bound is approximately exponential
        let a = -mean / sd;
        return sd * (a - u.ln() / a) + mean;
    }
    let z = -standard_normal().inverse_cdf(u * upper_mass);
    (mean + sd * z).max(0.0)
}

fn standard_normal() -> Normal {
    Normal::standard()
}

/// Draw-specific quantities resolved for a given start state.
struct Prepared<'d> {
    coefficients: Vec<&'d [f64]>,
    base_forward: Vec<f64>,
    base_lateral: Vec<f64>,
    /// Coefficients divided by the standardizer scale.
    w_forward: [f64; N_FORWARD],
    w_lateral: [f64; N_LATERAL],
    offset_forward: f64,
    offset_lateral: f64,
    sigma_forward: f64,
    sigma_lateral: f64,
    beta_plm: f64,
}

#[derive(Default)]
struct Scratch {
    active: Vec<usize>,
    positions: Vec<TrackPosition>,
    moves: Vec<(f64, f64, f64)>,
    basis: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Simulator<'a> {
    fitted: &'a FittedParams,
    track: &'a TrackModel,
    basis: Basis,
    sampler: LaplaceSampler,
    config: SimConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaneSettings {
    pub lane_width: f64,
    pub sims_per_assignment: usize,
    pub race_context: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaneExperiment {
    pub entrants: Vec<Entrant>,
    pub n_assignments: usize,
    pub sims_per_assignment: usize,
    /// Rows are lanes 1..=N, aggregated over who occupied them.
    pub by_lane: PlacementMatrix,
    /// Rows are entrants, aggregated over their lane.
    pub by_entrant: PlacementMatrix,
    pub seed: u64,
}

/// All permutations of `0..n` in lexicographic order.
pub fn lexicographic_permutations(n: usize) -> Vec<Vec<usize>> {
    let mut p: Vec<usize> = (0..n).collect();
    let mut out = vec![p.clone()];
    loop {
        let Some(i) = (1..n).rev().find(|&i| p[i - 1] < p[i]) else {
            return out;
        };
        let j = (i..n).rev().find(|&j| p[j] > p[i - 1]).unwrap();
        p.swap(i - 1, j);
        p[i..].reverse();
        out.push(p.clone());
    }
}

impl<'a> Simulator<'a> {
    pub fn new(fitted: &'a FittedParams, track: &'a TrackModel, config: SimConfig) -> Result<Self> {
        let sim = |m: &str| Error::Simulation(m.to_string());
        if !(config.frame_period > 0.0) || !(config.race_distance > 0.0) {
            return Err(sim("frame period and race distance must be positive"));
        }
        if config.race_distance > track.rail_length() {
            return Err(Error::Config(format!(
                "race distance {} m exceeds the rail length {:.1} m",
                config.race_distance,
                track.rail_length()
            )));
        }
        let basis = Basis::new(fitted.spline.clone())?;
        let f = &fitted.forward;
        let l = &fitted.lateral;
        if f.layout.spline_dim != basis.dimension() {
            return Err(sim("spline dimension does not match the knot specification"));
        }
        if f.layout.n_covariates != N_FORWARD || f.standardizer.width() != N_FORWARD {
            return Err(sim("forward covariate count does not match the design"));
        }
        if l.layout.n_covariates != N_LATERAL || l.standardizer.width() != N_LATERAL {
            return Err(sim("lateral covariate count does not match the design"));
        }
        if f.theta.len() != f.layout.len() || l.theta.len() != l.layout.len() {
            return Err(sim("parameter vector does not match its layout"));
        }
        Ok(Self {
            sampler: fitted.sampler()?,
            fitted,
            track,
            basis,
            config,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn fitted(&self) -> &FittedParams {
        self.fitted
    }

    fn prepare<'d>(&self, state: &RaceState, draw: &'d ParamDraw) -> Result<Prepared<'d>> {
        let fv = &self.fitted.forward.vocabulary;
        let lv = &self.fitted.lateral.vocabulary;
        let f = &draw.forward;
        let l = &draw.lateral;
        if f.psi.len() != N_FORWARD || l.psi.len() != N_LATERAL || f.mu.len() != self.basis.dimension() {
            return Err(Error::Simulation("parameter draw does not match the covariate layout".into()));
        }
        let ctx_f = fv.context_index(&state.race_context).map_or(0.0, |c| f.context[c]);
        let ctx_l = lv.context_index(&state.race_context).map_or(0.0, |c| l.context[c]);
        let mut p = Prepared {
            coefficients: Vec::with_capacity(state.competitors.len()),
            base_forward: Vec::with_capacity(state.competitors.len()),
            base_lateral: Vec::with_capacity(state.competitors.len()),
            w_forward: [0.0; N_FORWARD],
            w_lateral: [0.0; N_LATERAL],
            offset_forward: 0.0,
            offset_lateral: 0.0,
            sigma_forward: f.sigma,
            sigma_lateral: l.sigma,
            beta_plm: l.beta_plm,
        };
        for c in &state.competitors {
            p.coefficients.push(f.coefficients(fv.horse_index(&c.horse_id)));
            p.base_forward
                .push(ctx_f + fv.jockey_index(&c.jockey_id).map_or(0.0, |j| f.jockey[j]));
            p.base_lateral
                .push(ctx_l + lv.jockey_index(&c.jockey_id).map_or(0.0, |j| l.jockey[j]));
        }
        let sf = &self.fitted.forward.standardizer;
        for c in 0..N_FORWARD {
            p.w_forward[c] = f.psi[c] / sf.sd[c];
            p.offset_forward -= sf.mean[c] * p.w_forward[c];
        }
        let sl = &self.fitted.lateral.standardizer;
        for c in 0..N_LATERAL {
            p.w_lateral[c] = l.psi[c] / sl.sd[c];
            p.offset_lateral -= sl.mean[c] * p.w_lateral[c];
        }
        Ok(p)
    }

    /// Advances every unfinished competitor by one frame.
    pub fn step_frame<R: Rng + ?Sized>(&self, state: &mut RaceState, draw: &ParamDraw, rng: &mut R) -> Result<()> {
        if state.unfinished() == 0 {
            return Err(Error::Simulation("no unfinished competitors".into()));
        }
        let prepared = self.prepare(state, draw)?;
        self.step(state, &prepared, rng, &mut Scratch::default())
    }

    fn step<R: Rng + ?Sized>(
        &self,
        state: &mut RaceState,
        p: &Prepared<'_>,
        rng: &mut R,
        s: &mut Scratch,
    ) -> Result<()> {
        let drag = &self.fitted.drag;
        let dt = self.config.frame_period;
        let distance = self.config.race_distance;
        s.active.clear();
        s.positions.clear();
        s.moves.clear();
        s.basis.resize(self.basis.degree() + 1, 0.0);
        for (k, c) in state.competitors.iter().enumerate() {
            if !c.finished() {
                s.active.push(k);
                s.positions.push(c.position);
            }
        }
        for (slot, &k) in s.active.iter().enumerate() {
            let c = &state.competitors[k];
            let pos = s.positions[slot];
            let spatial = spatial_covariates(&s.positions, slot);
            let c_d = frame_drag_coefficient(&s.positions, slot, spatial.leader, drag);
            let seg = segment_indicators(pos, self.track)?;
            let x = raw_features(&spatial, seg, c_d < drag.clean_air, c.ledger.prop_energy_saved());

            let start = self.basis.eval_into(pos.forward.max(0.0), &mut s.basis)?;
            let coef = &p.coefficients[k][start..];
            let mut mean_f = p.base_forward[k] + p.offset_forward;
            for (b, v) in s.basis.iter().zip(coef) {
                mean_f += b * v;
            }
            for (xc, w) in x[..N_FORWARD].iter().zip(&p.w_forward) {
                mean_f += xc * w;
            }
            let mut mean_l = p.base_lateral[k] + p.offset_lateral + p.beta_plm * c.prev_lat_movement;
            for (xc, w) in x.iter().zip(&p.w_lateral) {
                mean_l += xc * w;
            }
            let d_forward = sample_truncated(mean_f, p.sigma_forward, rng);
            let z: f64 = if p.sigma_lateral > 0.0 { rng.sample(StandardNormal) } else { 0.0 };
            let d_lateral = mean_l + p.sigma_lateral * z;
            s.moves.push((d_forward, d_lateral, c_d));
        }
        let i = state.frame as f64;
        for (slot, &k) in s.active.iter().enumerate() {
            let (d_forward, d_lateral, c_d) = s.moves[slot];
            let c = &mut state.competitors[k];
            let prev = c.position;
            let lateral = (prev.lateral + d_lateral).max(0.0);
            let realized = lateral - prev.lateral;
            c.position = TrackPosition::new(prev.forward + d_forward, lateral);
            let step = d_forward.hypot(realized);
            c.ledger.update(step / dt, c_d, step, drag);
            c.prev_lat_movement = realized;
            if c.position.forward >= distance {
                c.finish_time = Some(i * dt + dt * (distance - prev.forward) / d_forward);
                c.finish_lateral = Some(lateral);
            }
        }
        state.frame += 1;
        Ok(())
    }

    /// Runs from `start` until every competitor has finished.
    pub fn simulate_race<R: Rng + ?Sized>(
        &self,
        start: &RaceState,
        draw: &ParamDraw,
        rng: &mut R,
    ) -> Result<SimulationOutcome> {
        let prepared = self.prepare(start, draw)?;
        let mut state = start.clone();
        let mut scratch = Scratch::default();
        let mut trajectory = self
            .config
            .keep_trajectory
            .then(|| vec![state.competitors.iter().map(|c| c.position).collect::<Vec<_>>()]);
        while state.unfinished() > 0 {
            if state.frame >= self.config.frame_cap {
                let leader = state
                    .competitors
                    .iter()
                    .filter(|c| !c.finished())
                    .map(|c| c.position.forward)
                    .fold(f64::NEG_INFINITY, f64::max);
                return Err(Error::Runaway {
                    frames: self.config.frame_cap,
                    unfinished: state.unfinished(),
                    leader_forward: leader,
                });
            }
            self.step(&mut state, &prepared, rng, &mut scratch)?;
            if let Some(t) = trajectory.as_mut() {
                t.push(state.competitors.iter().map(|c| c.position).collect());
            }
        }
        Ok(SimulationOutcome {
            finish_times: state.competitors.iter().map(|c| c.finish_time.unwrap()).collect(),
            ranks: rank_finishers(&state)?,
            draw: 0,
            seed: 0,
            trajectory,
        })
    }

    /// One posterior draw and one race, seeded by `seed ^ task`.
    fn run_task(&self, start: &RaceState, seed: u64, task: usize) -> Result<SimulationOutcome> {
        let task_seed = seed ^ task as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(task_seed);
        let draw = self.sampler.draw(&mut rng);
        let mut out = self
            .simulate_race(start, &draw, &mut rng)
            .map_err(|e| Error::Draw {
                draw: task,
                source: Box::new(e),
            })?;
        out.draw = task;
        out.seed = task_seed;
        Ok(out)
    }

    /// Independent outcomes for `n_draws` parameter draws, in draw order.
    pub fn outcomes(&self, start: &RaceState, n_draws: usize, seed: u64) -> Result<Vec<SimulationOutcome>> {
        (0..n_draws)
            .into_par_iter()
            .map(|d| self.run_task(start, seed, d))
            .collect()
    }

    pub fn posterior_predictive(&self, start: &RaceState, n_draws: usize, seed: u64) -> Result<PlacementMatrix> {
        if n_draws == 0 {
            return Err(Error::Input("at least one draw is required".into()));
        }
        let outcomes = self.outcomes(start, n_draws, seed)?;
        let ranks: Vec<Vec<usize>> = outcomes.iter().map(|o| o.ranks.clone()).collect();
        let times: Vec<Vec<f64>> = outcomes.into_iter().map(|o| o.finish_times).collect();
        let labels = start.competitors.iter().map(|c| c.horse_id.clone()).collect();
        Ok(PlacementMatrix::aggregate(labels, &ranks, &times, seed))
    }

    /// Every lane assignment of `entrants`, `sims_per_assignment` races each.
    /// Lane `L` (1-based) starts at lateral `(L - 0.5) * lane_width`.
    pub fn counterfactual_lane_experiment(
        &self,
        entrants: &[Entrant],
        settings: &LaneSettings,
        seed: u64,
    ) -> Result<LaneExperiment> {
        let n = entrants.len();
        if n == 0 || n > MAX_LANE_FIELD {
            return Err(Error::Input(format!(
                "lane experiment needs between 1 and {MAX_LANE_FIELD} entrants, got {n}"
            )));
        }
        if settings.sims_per_assignment == 0 {
            return Err(Error::Input("sims_per_assignment must be positive".into()));
        }
        let perms = lexicographic_permutations(n);
        let laterals: Vec<f64> = (1..=n).map(|l| (l as f64 - 0.5) * settings.lane_width).collect();
        let starts: Vec<RaceState> = perms
            .iter()
            .map(|perm| {
                let order: Vec<Entrant> = perm.iter().map(|&e| entrants[e].clone()).collect();
                RaceState::grid(&order, &laterals, &settings.race_context)
            })
            .collect::<Result<_>>()?;
        let s = settings.sims_per_assignment;
        let total = perms.len() * s;
        let outcomes: Vec<SimulationOutcome> = (0..total)
            .into_par_iter()
            .map(|t| self.run_task(&starts[t / s], seed, t))
            .collect::<Result<_>>()?;
        // state order is lane order; map back to entrants via the permutation
        let mut lane_ranks = Vec::with_capacity(total);
        let mut lane_times = Vec::with_capacity(total);
        let mut entrant_ranks = Vec::with_capacity(total);
        let mut entrant_times = Vec::with_capacity(total);
        for (t, o) in outcomes.into_iter().enumerate() {
            let perm = &perms[t / s];
            let mut er = vec![0; n];
            let mut et = vec![0.0; n];
            for (lane, &e) in perm.iter().enumerate() {
                er[e] = o.ranks[lane];
                et[e] = o.finish_times[lane];
            }
            entrant_ranks.push(er);
            entrant_times.push(et);
            lane_ranks.push(o.ranks);
            lane_times.push(o.finish_times);
        }
        let lane_labels = (1..=n).map(|l| format!("lane {l}")).collect();
        let entrant_labels = entrants.iter().map(|e| e.horse_id.clone()).collect();
        Ok(LaneExperiment {
            entrants: entrants.to_vec(),
            n_assignments: perms.len(),
            sims_per_assignment: s,
            by_lane: PlacementMatrix::aggregate(lane_labels, &lane_ranks, &lane_times, seed),
            by_entrant: PlacementMatrix::aggregate(entrant_labels, &entrant_ranks, &entrant_times, seed),
            seed,
        })
    }
}
