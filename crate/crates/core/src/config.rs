//! The run configuration document shared by every command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coupling::SoftnessParams;
use crate::episode::{EpisodeConfig, Scenario};
use crate::error::{Error, Result};
use crate::fluid::{FluidParams, MacGrid, NetConfig, TrainConfig};
use crate::optimize::{AdamConfig, CmaesConfig};
use crate::softbody::{Material, SolverOptions};
use crate::swimmer::SwimmerSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub frequencies_hz: Vec<f64>,
    /// Episode length of each sweep run.
    pub steps: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig { frequencies_hz: vec![3.0, 4.0, 5.0, 6.0, 7.0], steps: 120 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub steps: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { steps: 300 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    /// Length of the coupled episode that is differentiated.
    pub steps: usize,
    pub omega_hz: f64,
    /// Central-difference step in rad/s.
    pub epsilon: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig { steps: 10, omega_hz: 3.0, epsilon: 1e-4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Unactuated steps used to measure the resting force after training; 0 skips it.
    pub steps: usize,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { steps: 20 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SnapshotConfig {
    /// Write field snapshots every this many steps; 0 disables them.
    pub every: usize,
    /// Write CSV instead of the binary field format.
    pub csv: bool,
    /// Also render pressure frames as PNG.
    pub png: bool,
}

impl Default for SnapshotConfig {
    fn default() -> Self {
        SnapshotConfig { every: 0, csv: false, png: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; overrides the training and CMA-ES seeds.
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Network weights; defaults to `fluid.bin` in the output directory.
    pub weights: Option<PathBuf>,
    pub grid: MacGrid,
    pub fluid: FluidParams,
    pub net: NetConfig,
    pub softness: SoftnessParams,
    pub swimmer: SwimmerSpec,
    pub material: Material,
    pub solver: SolverOptions,
    pub episode: EpisodeConfig,
    pub training: TrainConfig,
    pub optimizer: AdamConfig,
    pub cmaes: CmaesConfig,
    pub sweep: SweepConfig,
    pub bench: BenchConfig,
    pub gradcheck: GradcheckConfig,
    pub snapshots: SnapshotConfig,
    pub noise: NoiseConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output_dir: PathBuf::from("out"),
            weights: None,
            grid: MacGrid::default(),
            fluid: FluidParams::default(),
            net: NetConfig::default(),
            softness: SoftnessParams::default(),
            swimmer: SwimmerSpec::default(),
            material: Material::default(),
            solver: SolverOptions::default(),
            episode: EpisodeConfig::default(),
            training: TrainConfig::default(),
            optimizer: AdamConfig::default(),
            cmaes: CmaesConfig::default(),
            sweep: SweepConfig::default(),
            bench: BenchConfig::default(),
            gradcheck: GradcheckConfig::default(),
            snapshots: SnapshotConfig::default(),
            noise: NoiseConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses and validates a TOML document. Unknown keys are rejected.
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.set_seed(cfg.seed);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        RunConfig::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Sets the master seed and every seed derived from it.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.training.seed = seed;
        self.cmaes.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.fluid.validate()?;
        self.net.validate()?;
        self.softness.validate()?;
        self.swimmer.validate()?;
        self.material.validate()?;
        self.solver.validate()?;
        self.episode.validate()?;
        self.training.validate()?;
        self.optimizer.validate()?;
        self.cmaes.validate()?;
        if self.sweep.frequencies_hz.is_empty() || self.sweep.frequencies_hz.iter().any(|f| !(*f > 0.0)) {
            return Err(Error::Config("sweep needs at least one positive frequency".into()));
        }
        if self.sweep.steps == 0 || self.bench.steps == 0 || self.gradcheck.steps == 0 {
            return Err(Error::Config("sweep, bench and gradcheck need at least one step".into()));
        }
        if !(self.gradcheck.omega_hz > 0.0 && self.gradcheck.epsilon > 0.0) {
            return Err(Error::Config("gradcheck needs a positive frequency and epsilon".into()));
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML form.
    /// File locations are left out, so a run hashes the same wherever it writes.
    pub fn hash(&self) -> String {
        let located = RunConfig { output_dir: PathBuf::new(), weights: None, ..self.clone() };
        let digest = Sha256::digest(located.to_toml().as_bytes());
        hex::encode(digest)[..16].to_string()
    }

    pub fn weights_path(&self) -> PathBuf {
        self.weights.clone().unwrap_or_else(|| self.output_dir.join("fluid.bin"))
    }

    pub fn scenario(&self) -> Scenario {
        Scenario {
            grid: self.grid,
            fluid: self.fluid,
            softness: self.softness,
            swimmer: self.swimmer.clone(),
            material: self.material,
            solver: self.solver,
            episode: self.episode.clone(),
        }
    }
}
