use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use racesim_core::covariates::DEFAULT_RACE_DISTANCE_M;
use racesim_core::geometry::ChuteRange;
use racesim_core::ingest::DEFAULT_FRAME_PERIOD;
use racesim_core::simulator::{Entrant, DEFAULT_FRAME_CAP, DEFAULT_LANE_WIDTH_M};
use racesim_core::{AnomalyConfig, DragTable, FitConfig, SynthConfig};

pub const DEFAULT_SEED: u64 = 20240501;

/// File locations. Unset paths fall back to fixed names in the output
/// directory, so `synth -> prepare -> fit -> simulate` chains without a
/// config file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub tracking: Option<PathBuf>,
    pub outline: Option<PathBuf>,
    pub prepared: Option<PathBuf>,
    pub params: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RaceSettings {
    pub distance: f64,
    pub frame_period: f64,
    pub chutes: Vec<ChuteRange>,
}

impl Default for RaceSettings {
    fn default() -> Self {
        Self {
            distance: DEFAULT_RACE_DISTANCE_M,
            frame_period: DEFAULT_FRAME_PERIOD,
            chutes: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSettings {
    pub draws: usize,
    pub frame_cap: u32,
    pub race_id: Option<String>,
    /// Frames after the race start at which to start simulating.
    pub start_frames: Vec<i64>,
}

impl Default for SimulationSettings {
    fn default() -> Self {
        Self {
            draws: 2000,
            frame_cap: DEFAULT_FRAME_CAP,
            race_id: None,
            start_frames: vec![0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LaneSettings {
    pub lane_width: f64,
    pub sims_per_assignment: usize,
    pub race_context: String,
    /// Field for the experiment; taken from `simulation.race_id` when empty.
    pub entrants: Vec<Entrant>,
}

impl Default for LaneSettings {
    fn default() -> Self {
        Self {
            lane_width: DEFAULT_LANE_WIDTH_M,
            sims_per_assignment: 100,
            race_context: "dirt-fast".into(),
            entrants: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileSettings {
    pub clusters: usize,
}

impl Default for ProfileSettings {
    fn default() -> Self {
        Self { clusters: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitSettings {
    #[serde(flatten)]
    pub model: FitConfig,
    /// Write parameters even when the optimizer stops at its iteration cap.
    pub allow_unconverged: bool,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            model: FitConfig::default(),
            allow_unconverged: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub race: RaceSettings,
    pub anomaly: AnomalyConfig,
    pub drag: DragTable,
    pub fit: FitSettings,
    pub simulation: SimulationSettings,
    pub lanes: LaneSettings,
    pub profiles: ProfileSettings,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            paths: Paths::default(),
            race: RaceSettings::default(),
            anomaly: AnomalyConfig::default(),
            drag: DragTable::default(),
            fit: FitSettings::default(),
            simulation: SimulationSettings::default(),
            lanes: LaneSettings::default(),
            profiles: ProfileSettings::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.race.distance > 0.0) || !(self.race.frame_period > 0.0) {
            bail!("race distance and frame period must be positive");
        }
        if self.simulation.draws == 0 {
            bail!("simulation.draws must be positive");
        }
        if self.profiles.clusters == 0 {
            bail!("profiles.clusters must be positive");
        }
        self.fit.model.spline.validate()?;
        self.fit.model.priors.validate()?;
        Ok(())
    }

    pub fn output_dir(&self) -> PathBuf {
        self.paths.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    fn in_output(&self, set: &Option<PathBuf>, name: &str) -> PathBuf {
        set.clone().unwrap_or_else(|| self.output_dir().join(name))
    }

    pub fn tracking_path(&self) -> PathBuf {
        self.in_output(&self.paths.tracking, "tracking.csv")
    }

    pub fn outline_path(&self) -> PathBuf {
        self.in_output(&self.paths.outline, "outline.csv")
    }

    pub fn prepared_path(&self) -> PathBuf {
        self.in_output(&self.paths.prepared, "prepared.csv")
    }

    pub fn params_path(&self) -> PathBuf {
        self.in_output(&self.paths.params, "params.json")
    }

    /// SHA-256 over every setting except file locations and the seed, so
    /// identical runs in different directories share a digest.
    pub fn digest(&self) -> String {
        let mut settings = self.clone();
        settings.paths = Paths::default();
        settings.seed = 0;
        let bytes = serde_json::to_vec(&settings).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn sim_config(&self) -> racesim_core::SimConfig {
        racesim_core::SimConfig {
            race_distance: self.race.distance,
            frame_period: self.race.frame_period,
            frame_cap: self.simulation.frame_cap,
            keep_trajectory: false,
        }
    }
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
