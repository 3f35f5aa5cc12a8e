//! Experiment runners. Each configuration is turned into a [`Job`] with all
//! fields, noise and problem data built and checked; only then does any
//! computation start.

mod chain;
mod observe;
mod single;
mod squeeze;

use kdvb_core::dynamics::{SolverConfig, Trajectory};
use kdvb_core::ergodic::ChainNoise;
use kdvb_core::io::CsvTable;
use kdvb_core::noise::{LocalisedNoiseSpec, MultiplicativeNoiseSpec};
use kdvb_core::TorusGrid;

use crate::config::{Experiment, LoadedConfig, NoiseBlock, Params};
use crate::output::Artifacts;
use crate::CliError;

pub use observe::{ct1_sample, Ct1Sample};

pub trait Job {
    fn run(&self, out: &mut Artifacts) -> Result<(), CliError>;
}

/// Shared run settings.
#[derive(Clone, Debug)]
pub struct Setup {
    pub experiment: Experiment,
    pub seed: u64,
    pub solver: SolverConfig,
    pub grid: TorusGrid,
    pub noise: NoiseBlock,
}

impl Setup {
    pub fn new(loaded: &LoadedConfig) -> Result<Self, CliError> {
        let c = &loaded.config;
        c.solver
            .validate()
            .map_err(|e| CliError::Schema(format!("solver: {e}")))?;
        let grid = c
            .solver
            .grid()
            .map_err(|e| CliError::Schema(format!("solver.n_points: {e}")))?;
        Ok(Self {
            experiment: c.experiment,
            seed: c.seed,
            solver: c.solver.clone(),
            grid,
            noise: c.noise.clone(),
        })
    }

    /// Builds the configured noise; kick noise uses `period`.
    pub fn build_noise(&self, period: f64) -> Result<Noise, CliError> {
        let field = |e: kdvb_core::Error| CliError::Schema(format!("noise: {e}"));
        Ok(match &self.noise {
            NoiseBlock::Off => Noise::Off,
            NoiseBlock::Localised(cfg) => {
                Noise::Localised(LocalisedNoiseSpec::from_config(cfg, period).map_err(field)?)
            }
            NoiseBlock::Multiplicative(cfg) => {
                Noise::Multiplicative(MultiplicativeNoiseSpec::from_config(cfg).map_err(field)?)
            }
        })
    }

    pub fn localised(&self, period: f64) -> Result<LocalisedNoiseSpec, CliError> {
        match self.build_noise(period)? {
            Noise::Localised(spec) => Ok(spec),
            _ => Err(self.wrong_noise("localised")),
        }
    }

    /// Multiplicative noise or none.
    pub fn continuous(&self) -> Result<Option<MultiplicativeNoiseSpec>, CliError> {
        match self.build_noise(1.0)? {
            Noise::Off => Ok(None),
            Noise::Multiplicative(spec) => Ok(Some(spec)),
            Noise::Localised(_) => Err(self.wrong_noise("multiplicative or off")),
        }
    }

    pub fn wrong_noise(&self, wanted: &str) -> CliError {
        CliError::Schema(format!(
            "noise.kind: {} needs {wanted} noise, got {}",
            self.experiment,
            self.noise.kind()
        ))
    }
}

/// Owned noise specification.
#[derive(Clone, Debug)]
pub enum Noise {
    Off,
    Localised(LocalisedNoiseSpec),
    Multiplicative(MultiplicativeNoiseSpec),
}

impl Noise {
    pub fn chain(&self) -> ChainNoise<'_> {
        match self {
            Noise::Off => ChainNoise::Off,
            Noise::Localised(s) => ChainNoise::Localised(s),
            Noise::Multiplicative(s) => ChainNoise::Multiplicative(s),
        }
    }
}

pub fn positive(key: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Schema(format!("{key} must be positive and finite, got {v}")))
    }
}

pub fn at_least_one(key: &str, n: usize) -> Result<(), CliError> {
    if n >= 1 {
        Ok(())
    } else {
        Err(CliError::Schema(format!("{key} must be at least 1")))
    }
}

/// `time, l2_norm, h1_norm` and optional moduli of the first coefficients.
pub fn trajectory_table(traj: &Trajectory, mode_columns: usize, every: usize) -> CsvTable {
    let mut header = vec!["time".to_string(), "l2_norm".to_string(), "h1_norm".to_string()];
    header.extend((1..=mode_columns).map(|k| format!("amp_{k}")));
    let mut t = CsvTable::new(&header);
    let last = traj.len().saturating_sub(1);
    for (i, (time, u)) in traj.times.iter().zip(&traj.states).enumerate() {
        if i % every.max(1) != 0 && i != last {
            continue;
        }
        let mut row = vec![*time, u.l2_norm(), u.h1_norm()];
        row.extend((1..=mode_columns).map(|k| {
            if k < u.coeffs().len() {
                2.0 * u.coeff(k).norm()
            } else {
                0.0
            }
        }));
        t.push(&row);
    }
    t
}

/// Checks and assembles the job for a loaded configuration.
pub fn prepare(loaded: &LoadedConfig) -> Result<Box<dyn Job>, CliError> {
    let setup = Setup::new(loaded)?;
    Ok(match &loaded.params {
        Params::Simulate(p) => Box::new(single::SimulateJob::new(setup, p)?),
        Params::Nudge(p) => Box::new(single::NudgeJob::new(setup, p)?),
        Params::NudgedStopped(p) => Box::new(single::StoppedJob::new(setup, p)?),
        Params::Couple(p) => Box::new(chain::CoupleJob::new(setup, p)?),
        Params::ChainMix(p) => Box::new(chain::MixJob::new(setup, p)?),
        Params::Moments(p) => Box::new(chain::MomentsJob::new(setup, p)?),
        Params::Carleman(p) => Box::new(observe::CarlemanJob::new(setup, p)?),
        Params::Cl2(p) => Box::new(observe::Cl2Job::new(setup, p)?),
        Params::Observability(p) => Box::new(observe::ObservabilityJob::new(setup, p)?),
        Params::TruncatedObs(p) => Box::new(observe::TruncatedJob::new(setup, p)?),
        Params::Control(p) => Box::new(squeeze::ControlJob::new(setup, p)?),
        Params::Contraction(p) => Box::new(squeeze::ContractionJob::new(setup, p)?),
    })
}
