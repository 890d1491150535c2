use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;

use racesim_core::covariates::write_design_rows;
use racesim_core::geometry::read_track_outline_file;
use racesim_core::ingest::{parse_tracking, AnomalyKind, write_tracking, CleaningReport};
use racesim_core::inference::{fit_params, jockey_ratings, FitDiagnostics, Provenance};
use racesim_core::pipeline::{prepare_races, snapshot_at, training_rows};
use racesim_core::profiles::{cluster_profiles, profile_curves, write_curves, write_dendrogram};
use racesim_core::simulator::LaneSettings as CoreLaneSettings;
use racesim_core::synth::generate;
use racesim_core::{
    Basis, Entrant, FittedParams, PlacementMatrix, ProfileVector, RaceFrameTable, RaceState, Simulator, TrackFrame,
    TrackModel,
};

use crate::config::{file_digest, RunConfig};
use crate::output::{Outputs, Stamp};
use crate::Command;

pub const PLACEMENT_SCHEMA: &str = "racesim-placement/1";
pub const LANES_SCHEMA: &str = "racesim-lanes/1";
pub const REPORT_SCHEMA: &str = "racesim-prepare-report/1";
pub const DIAGNOSTICS_SCHEMA: &str = "racesim-fit-diagnostics/1";
pub const TRUTH_SCHEMA: &str = "racesim-synth-truth/1";

pub fn dispatch(config: &RunConfig, command: &Command) -> Result<Vec<PathBuf>> {
    let stamp = Stamp {
        config_digest: config.digest(),
        seed: config.seed,
    };
    let mut out = Outputs::new(&config.output_dir(), stamp)?;
    match command {
        Command::Synth => cmd_synth(config, &mut out)?,
        Command::Prepare => cmd_prepare(config, &mut out)?,
        Command::Fit => cmd_fit(config, &mut out)?,
        Command::Simulate {
            race,
            frame,
            every,
            grid,
            draws,
        } => {
            let draws = draws.unwrap_or(config.simulation.draws);
            if *grid {
                cmd_simulate_grid(config, draws, &mut out)?
            } else {
                let race = race
                    .clone()
                    .or_else(|| config.simulation.race_id.clone())
                    .ok_or_else(|| anyhow!("no race id: pass --race or set simulation.race_id"))?;
                let frames = if frame.is_empty() && every.is_none() {
                    config.simulation.start_frames.clone()
                } else {
                    frame.clone()
                };
                cmd_simulate(config, &race, &frames, *every, draws, &mut out)?
            }
        }
        Command::Counterfactual { race, sims } => cmd_counterfactual(config, race.as_deref(), *sims, &mut out)?,
        Command::Profiles { clusters } => cmd_profiles(config, clusters.unwrap_or(config.profiles.clusters), &mut out)?,
        Command::Ratings => cmd_ratings(config, &mut out)?,
    }
    Ok(out.written)
}

fn require(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        bail!("{what} not found at {}", path.display());
    }
    Ok(())
}

fn load_track(config: &RunConfig) -> Result<(TrackModel, TrackFrame)> {
    let path = config.outline_path();
    let outline = read_track_outline_file(&path).with_context(|| format!("track outline {}", path.display()))?;
    outline
        .build(&config.race.chutes)
        .with_context(|| format!("building track from {}", path.display()))
}

fn load_tables(path: &Path, config: &RunConfig) -> Result<Vec<RaceFrameTable>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    parse_tracking(BufReader::new(file), config.race.frame_period).with_context(|| format!("tracking table {}", path.display()))
}

fn load_params(config: &RunConfig) -> Result<FittedParams> {
    let path = config.params_path();
    require(&path, "parameter file")?;
    let file = File::open(&path)?;
    FittedParams::from_reader(BufReader::new(file)).with_context(|| format!("parameter file {}", path.display()))
}

fn load_prepared(config: &RunConfig) -> Result<Vec<RaceFrameTable>> {
    let path = config.prepared_path();
    require(&path, "prepared tracking table (run `prepare` first)")?;
    let tables = load_tables(&path, config)?;
    if let Some(t) = tables.iter().find(|t| !t.is_projected()) {
        bail!("race `{}` in {} has no track positions", t.race_id, path.display());
    }
    Ok(tables)
}

fn cmd_synth(config: &RunConfig, out: &mut Outputs) -> Result<()> {
    let data = generate(&config.synth, config.seed)?;
    out.table(config.tracking_path(), |w| Ok(write_tracking(&data.tables, w)?))?;
    out.table(config.outline_path(), |w| {
        Ok(racesim_core::geometry::write_track_outline(&data.outline, w)?)
    })?;
    #[derive(Serialize)]
    struct Truth<'a> {
        truth: &'a racesim_core::SynthTruth,
        faults: &'a [racesim_core::synth::InjectedFault],
    }
    out.json(
        out.path("truth.json"),
        TRUTH_SCHEMA,
        &Truth {
            truth: &data.truth,
            faults: &data.faults,
        },
    )?;
    log::info!("generated {} races", data.tables.len());
    Ok(())
}

#[derive(Serialize)]
struct PrepareReport<'a> {
    races: usize,
    competitors: usize,
    frozen_spans: usize,
    jump_spans: usize,
    imputed_competitors: usize,
    imputed_fraction: f64,
    training_rows: usize,
    imputation_method: &'static str,
    reports: &'a [CleaningReport],
}

fn count_kind(reports: &[CleaningReport], kind: AnomalyKind) -> usize {
    reports.iter().flat_map(|r| &r.spans).filter(|s| s.kind == kind).count()
}

fn cmd_prepare(config: &RunConfig, out: &mut Outputs) -> Result<()> {
    let tracking = config.tracking_path();
    require(&tracking, "tracking table")?;
    require(&config.outline_path(), "track outline")?;
    let (track, frame) = load_track(config)?;
    let mut tables = load_tables(&tracking, config)?;
    let reports = prepare_races(&mut tables, &track, &frame, &config.anomaly)?;
    let rows = training_rows(&tables, &track, &config.drag, config.race.distance)?;
    out.table(config.prepared_path(), |w| Ok(write_tracking(&tables, w)?))?;
    out.table(out.path("design.csv"), |w| Ok(write_design_rows(&rows, w)?))?;
    let competitors: usize = reports.iter().map(|r| r.competitors).sum();
    let imputed: usize = reports.iter().map(|r| r.imputed_competitors()).sum();
    let report = PrepareReport {
        races: tables.len(),
        competitors,
        frozen_spans: count_kind(&reports, AnomalyKind::Frozen),
        jump_spans: count_kind(&reports, AnomalyKind::Jump),
        imputed_competitors: imputed,
        imputed_fraction: if competitors == 0 { 0.0 } else { imputed as f64 / competitors as f64 },
        training_rows: rows.len(),
        imputation_method: "peer-mean proportional distance",
        reports: &reports,
    };
    out.json(out.path("prepare_report.json"), REPORT_SCHEMA, &report)?;
    log::info!(
        "prepared {} races, {} rows, {} imputed competitors",
        report.races,
        report.training_rows,
        imputed
    );
    Ok(())
}

fn cmd_fit(config: &RunConfig, out: &mut Outputs) -> Result<()> {
    let prepared = config.prepared_path();
    let tables = load_prepared(config)?;
    require(&config.outline_path(), "track outline")?;
    let (track, _) = load_track(config)?;
    let rows = training_rows(&tables, &track, &config.drag, config.race.distance)?;
    let mut params = fit_params(&rows, &config.fit.model, &config.drag)?;
    params.provenance = Provenance {
        seed: config.seed,
        config_digest: out.stamp.config_digest.clone(),
        data_digest: file_digest(&prepared)?,
    };
    #[derive(Serialize)]
    struct Diagnostics<'a> {
        forward: &'a FitDiagnostics,
        lateral: &'a FitDiagnostics,
    }
    let (fd, ld) = (&params.forward.diagnostics, &params.lateral.diagnostics);
    for (name, d) in [("forward", fd), ("lateral", ld)] {
        log::info!(
            "{name} model: {} iterations, gradient max-norm {:.3e}, converged {}",
            d.iterations,
            d.grad_max_norm,
            d.converged
        );
    }
    out.json(
        out.path("fit_diagnostics.json"),
        DIAGNOSTICS_SCHEMA,
        &Diagnostics { forward: fd, lateral: ld },
    )?;
    if !(fd.converged && ld.converged) && !config.fit.allow_unconverged {
        bail!(
            "optimizer did not converge (forward {}, lateral {}); see fit_diagnostics.json",
            fd.converged,
            ld.converged
        );
    }
    let path = config.params_path();
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = std::io::BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    params.to_writer(&mut w)?;
    w.write_all(b"\n")?;
    w.flush()?;
    out.written.push(path);
    Ok(())
}

#[derive(Serialize)]
struct PlacementRow<'a> {
    race_id: &'a str,
    start_frame: i64,
    horse_id: &'a str,
    rank: usize,
    probability: f64,
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    race_id: &'a str,
    start_frame: i64,
    horse_id: &'a str,
    win_probability: f64,
    expected_rank: f64,
    expected_rank_se: f64,
    finish_mean_s: f64,
    finish_lower_s: f64,
    finish_upper_s: f64,
}

#[derive(Serialize)]
struct SeriesEntry {
    start_frame: i64,
    matrix: PlacementMatrix,
}

#[derive(Serialize)]
struct PlacementSeries<'a> {
    race_id: &'a str,
    draws: usize,
    series: &'a [SeriesEntry],
}

fn write_series(out: &mut Outputs, race_id: &str, draws: usize, series: &[SeriesEntry]) -> Result<()> {
    let mut long = Vec::new();
    let mut summary = Vec::new();
    for s in series {
        let m = &s.matrix;
        for (h, label) in m.labels.iter().enumerate() {
            for (r, &p) in m.probabilities[h].iter().enumerate() {
                long.push(PlacementRow {
                    race_id,
                    start_frame: s.start_frame,
                    horse_id: label,
                    rank: r + 1,
                    probability: p,
                });
            }
            summary.push(SummaryRow {
                race_id,
                start_frame: s.start_frame,
                horse_id: label,
                win_probability: m.probabilities[h][0],
                expected_rank: m.expected_rank[h],
                expected_rank_se: m.expected_rank_se[h],
                finish_mean_s: m.finish_time[h].mean,
                finish_lower_s: m.finish_time[h].lower,
                finish_upper_s: m.finish_time[h].upper,
            });
        }
    }
    out.csv_rows(&format!("placement_{race_id}.csv"), &long)?;
    out.csv_rows(&format!("placement_{race_id}_summary.csv"), &summary)?;
    out.json(
        out.path(&format!("placement_{race_id}.json")),
        PLACEMENT_SCHEMA,
        &PlacementSeries { race_id, draws, series },
    )
}

fn cmd_simulate(
    config: &RunConfig,
    race_id: &str,
    frames: &[i64],
    every: Option<i64>,
    draws: usize,
    out: &mut Outputs,
) -> Result<()> {
    let params = load_params(config)?;
    let tables = load_prepared(config)?;
    let (track, _) = load_track(config)?;
    let table = tables
        .iter()
        .find(|t| t.race_id == race_id)
        .ok_or_else(|| anyhow!("unknown race id `{race_id}`"))?;
    let (first, last) = table.frame_range();
    let mut starts: Vec<i64> = frames.to_vec();
    if let Some(step) = every {
        if step <= 0 {
            bail!("--every must be positive");
        }
        starts.extend((0..=last - first).step_by(step as usize));
    }
    starts.sort_unstable();
    starts.dedup();
    if starts.is_empty() {
        bail!("no start frames requested");
    }
    let sim = Simulator::new(&params, &track, config.sim_config())?;
    let mut series = Vec::with_capacity(starts.len());
    for &f in &starts {
        let snap = snapshot_at(&tables, race_id, f, &track, &config.drag, config.race.distance)?;
        let state = RaceState::from_snapshot(&snap);
        let matrix = sim.posterior_predictive(&state, draws, config.seed)?;
        log::info!("{race_id} frame {f}: leader win probability {:.3}", matrix.probabilities.iter().map(|r| r[0]).fold(0.0, f64::max));
        series.push(SeriesEntry { start_frame: f, matrix });
    }
    write_series(out, race_id, draws, &series)
}

fn grid_state(config: &RunConfig, entrants: &[Entrant], context: &str) -> Result<RaceState> {
    let laterals: Vec<f64> = (1..=entrants.len()).map(|l| (l as f64 - 0.5) * config.lanes.lane_width).collect();
    Ok(RaceState::grid(entrants, &laterals, context)?)
}

fn cmd_simulate_grid(config: &RunConfig, draws: usize, out: &mut Outputs) -> Result<()> {
    if config.lanes.entrants.is_empty() {
        bail!("--grid needs lanes.entrants in the config");
    }
    let params = load_params(config)?;
    let (track, _) = load_track(config)?;
    let sim = Simulator::new(&params, &track, config.sim_config())?;
    let state = grid_state(config, &config.lanes.entrants, &config.lanes.race_context)?;
    let matrix = sim.posterior_predictive(&state, draws, config.seed)?;
    write_series(out, "grid", draws, &[SeriesEntry { start_frame: 0, matrix }])
}

#[derive(Serialize)]
struct LaneRow<'a> {
    grouping: &'static str,
    label: &'a str,
    rank: usize,
    probability: f64,
}

#[derive(Serialize)]
struct LaneSummaryRow<'a> {
    grouping: &'static str,
    label: &'a str,
    win_probability: f64,
    expected_rank: f64,
    expected_rank_se: f64,
    finish_mean_s: f64,
}

fn cmd_counterfactual(config: &RunConfig, race: Option<&str>, sims: Option<usize>, out: &mut Outputs) -> Result<()> {
    let params = load_params(config)?;
    let (track, _) = load_track(config)?;
    let (entrants, context) = if !config.lanes.entrants.is_empty() {
        (config.lanes.entrants.clone(), config.lanes.race_context.clone())
    } else {
        let race = race
            .map(str::to_string)
            .or_else(|| config.simulation.race_id.clone())
            .ok_or_else(|| anyhow!("no field: set lanes.entrants or pass --race"))?;
        let tables = load_tables(&config.prepared_path(), config).or_else(|_| load_tables(&config.tracking_path(), config))?;
        let table = tables
            .iter()
            .find(|t| t.race_id == race)
            .ok_or_else(|| anyhow!("unknown race id `{race}`"))?;
        let mut field: Vec<_> = table.competitors.iter().collect();
        field.sort_by_key(|c| (c.starting_lane, c.horse_id.clone()));
        (
            field.iter().map(|c| Entrant::new(&c.horse_id, &c.jockey_id)).collect(),
            table.context(),
        )
    };
    let settings = CoreLaneSettings {
        lane_width: config.lanes.lane_width,
        sims_per_assignment: sims.unwrap_or(config.lanes.sims_per_assignment),
        race_context: context,
    };
    let sim = Simulator::new(&params, &track, config.sim_config())?;
    let exp = sim.counterfactual_lane_experiment(&entrants, &settings, config.seed)?;
    let mut long = Vec::new();
    let mut summary = Vec::new();
    for (grouping, m) in [("lane", &exp.by_lane), ("entrant", &exp.by_entrant)] {
        for (h, label) in m.labels.iter().enumerate() {
            for (r, &p) in m.probabilities[h].iter().enumerate() {
                long.push(LaneRow {
                    grouping,
                    label,
                    rank: r + 1,
                    probability: p,
                });
            }
            summary.push(LaneSummaryRow {
                grouping,
                label,
                win_probability: m.probabilities[h][0],
                expected_rank: m.expected_rank[h],
                expected_rank_se: m.expected_rank_se[h],
                finish_mean_s: m.finish_time[h].mean,
            });
        }
    }
    out.csv_rows("lanes.csv", &long)?;
    out.csv_rows("lanes_summary.csv", &summary)?;
    out.json(out.path("lanes.json"), LANES_SCHEMA, &exp)?;
    log::info!(
        "{} assignments x {} simulations",
        exp.n_assignments,
        exp.sims_per_assignment
    );
    Ok(())
}

fn cmd_profiles(config: &RunConfig, k: usize, out: &mut Outputs) -> Result<()> {
    let params = load_params(config)?;
    let basis = Basis::new(params.spline.clone())?;
    let vectors = ProfileVector::from_fitted(&params);
    let clustering = cluster_profiles(&vectors, k, &basis)?;
    #[derive(Serialize)]
    struct ClusterRow<'a> {
        horse_id: &'a str,
        cluster: usize,
        race_count: usize,
    }
    let rows: Vec<ClusterRow> = clustering
        .horse_ids
        .iter()
        .zip(&clustering.labels)
        .map(|(h, &c)| ClusterRow {
            horse_id: h,
            cluster: c,
            race_count: vectors.iter().find(|v| &v.horse_id == h).map_or(0, |v| v.race_count),
        })
        .collect();
    out.csv_rows("clusters.csv", &rows)?;
    out.table(out.path("dendrogram.csv"), |w| Ok(write_dendrogram(&clustering, w)?))?;
    let curves = profile_curves(&vectors, &basis)?;
    out.table(out.path("curves.csv"), |w| Ok(write_curves(&curves, w)?))?;
    Ok(())
}

fn cmd_ratings(config: &RunConfig, out: &mut Outputs) -> Result<()> {
    let params = load_params(config)?;
    #[derive(Serialize)]
    struct Row<'a> {
        rank: usize,
        jockey_id: &'a str,
        rating: f64,
    }
    let ratings = jockey_ratings(&params);
    let rows: Vec<Row> = ratings
        .iter()
        .enumerate()
        .map(|(i, r)| Row {
            rank: i + 1,
            jockey_id: &r.jockey_id,
            rating: r.rating,
        })
        .collect();
    out.csv_rows("ratings.csv", &rows)
}
