//! Experiment configuration files: one JSON document per run.

use std::fmt;
use std::path::{Path, PathBuf};

use kdvb_core::control::ControlConfig;
use kdvb_core::dynamics::SolverConfig;
use kdvb_core::ergodic::CouplingMode;
use kdvb_core::noise::{LocalisedNoiseConfig, MultiplicativeNoiseConfig};
use kdvb_core::sync::NudgingConfig;
use kdvb_core::{Field, TorusGrid};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Simulate,
    Nudge,
    NudgedStopped,
    Couple,
    ChainMix,
    Carleman,
    Cl2,
    Observability,
    TruncatedObs,
    Control,
    Contraction,
    Moments,
}

impl Experiment {
    pub const ALL: [Experiment; 12] = [
        Experiment::Simulate,
        Experiment::Nudge,
        Experiment::NudgedStopped,
        Experiment::Couple,
        Experiment::ChainMix,
        Experiment::Carleman,
        Experiment::Cl2,
        Experiment::Observability,
        Experiment::TruncatedObs,
        Experiment::Control,
        Experiment::Contraction,
        Experiment::Moments,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Simulate => "simulate",
            Experiment::Nudge => "nudge",
            Experiment::NudgedStopped => "nudged-stopped",
            Experiment::Couple => "couple",
            Experiment::ChainMix => "chain-mix",
            Experiment::Carleman => "carleman",
            Experiment::Cl2 => "cl2",
            Experiment::Observability => "observability",
            Experiment::TruncatedObs => "truncated-obs",
            Experiment::Control => "control",
            Experiment::Contraction => "contraction",
            Experiment::Moments => "moments",
        }
    }

    pub fn summary(self) -> &'static str {
        match self {
            Experiment::Simulate => "single trajectory with norms, energy residual and optional snapshots",
            Experiment::Nudge => "nudged pair ensemble: error decay, Lyapunov check, stopping-time tails",
            Experiment::NudgedStopped => "pairs driven by the stopped shifted noise",
            Experiment::Couple => "two chains under shared or independent noise",
            Experiment::ChainMix => "dual-Lipschitz distance to the invariant cloud and mixing-rate fit",
            Experiment::Carleman => "global Carleman inequality on random backward problems",
            Experiment::Cl2 => "conjugated inequality on random trigonometric test functions",
            Experiment::Observability => "sharp observability constant on a window",
            Experiment::TruncatedObs => "observability through the truncated window basis",
            Experiment::Control => "penalised control of the linearisation",
            Experiment::Contraction => "squeezing ratio of the controlled nonlinear flow",
            Experiment::Moments => "second and p-th moment diagnostics",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Top level of a configuration file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub solver: SolverConfig,
    #[serde(default)]
    pub noise: NoiseBlock,
    /// Hypotheses to check before the run.
    #[serde(default)]
    pub regime: Option<Regime>,
    /// Experiment-specific block, decoded once the experiment is known.
    #[serde(default)]
    pub params: serde_json::Value,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoiseBlock {
    #[default]
    Off,
    Localised(LocalisedNoiseConfig),
    Multiplicative(MultiplicativeNoiseConfig),
}

impl NoiseBlock {
    pub fn kind(&self) -> &'static str {
        match self {
            NoiseBlock::Off => "off",
            NoiseBlock::Localised(_) => "localised",
            NoiseBlock::Multiplicative(_) => "multiplicative",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Regime {
    pub target: Target,
    /// Number `N` of leading kick coefficients that must be non-zero.
    #[serde(default)]
    pub modes: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    /// Exponential mixing of the kicked chain.
    KickMixing,
    /// Unique ergodic measure under multiplicative noise.
    UniqueErgodicity,
    /// Weak convergence of transition laws under multiplicative noise.
    WeakConvergence,
}

/// `c + Σ (a_k cos kx + b_k sin kx)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    #[serde(default)]
    pub constant: f64,
    #[serde(default)]
    pub modes: Vec<ModeSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    pub k: usize,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

impl FieldSpec {
    pub fn build(&self, grid: &TorusGrid, key: &str) -> Result<Field, CliError> {
        let mut f = Field::constant(grid, self.constant);
        for (i, m) in self.modes.iter().enumerate() {
            if m.k == 0 || m.k >= grid.nyquist() {
                return Err(CliError::Schema(format!(
                    "{key}.modes[{i}].k: wavenumber {} must lie in 1..{}",
                    m.k,
                    grid.nyquist()
                )));
            }
            if !(m.cos.is_finite() && m.sin.is_finite()) {
                return Err(CliError::Schema(format!("{key}.modes[{i}]: amplitudes must be finite")));
            }
            f.add_mode(m.k, m.cos, m.sin);
        }
        if !self.constant.is_finite() {
            return Err(CliError::Schema(format!("{key}.constant must be finite")));
        }
        Ok(f)
    }

    pub fn is_zero(&self) -> bool {
        self.constant == 0.0 && self.modes.iter().all(|m| m.cos == 0.0 && m.sin == 0.0)
    }
}

fn one() -> usize {
    1
}

fn ten() -> usize {
    10
}

fn paths_128() -> usize {
    128
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateParams {
    pub u0: FieldSpec,
    #[serde(default)]
    pub forcing: FieldSpec,
    pub horizon: f64,
    /// Kick period; defaults to the horizon.
    #[serde(default)]
    pub period: Option<f64>,
    #[serde(default = "one")]
    pub record_every: usize,
    /// Extra columns with the modulus of each coefficient up to this wavenumber.
    #[serde(default)]
    pub mode_columns: usize,
    #[serde(default)]
    pub snapshot: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NudgeParams {
    pub u0: FieldSpec,
    pub v0: FieldSpec,
    #[serde(default)]
    pub forcing: FieldSpec,
    pub nudging: NudgingConfig,
    pub horizon: f64,
    #[serde(default = "one")]
    pub n_paths: usize,
    #[serde(default = "ten")]
    pub record_every: usize,
    /// Levels `R` for the stopping-time tail.
    #[serde(default)]
    pub radii: Vec<f64>,
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Fits of the power law start here.
    #[serde(default = "default_power_start")]
    pub power_fit_start: f64,
}

fn default_beta() -> f64 {
    1.0
}

fn default_power_start() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NudgedStoppedParams {
    pub u0: FieldSpec,
    pub v0: FieldSpec,
    #[serde(default)]
    pub forcing: FieldSpec,
    pub nudging: NudgingConfig,
    /// Integer horizon `n`.
    pub horizon: usize,
    #[serde(default = "paths_128")]
    pub n_paths: usize,
    /// Stopping level; computed from a pilot ensemble when absent.
    #[serde(default)]
    pub level: Option<f64>,
    #[serde(default = "one")]
    pub m_star: usize,
    #[serde(default = "default_pilot")]
    pub n_pilot: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_pilot() -> usize {
    64
}

fn default_tolerance() -> f64 {
    1e-3
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoupleParams {
    pub u0: FieldSpec,
    pub v0: FieldSpec,
    #[serde(default)]
    pub forcing: FieldSpec,
    pub period: f64,
    pub n_steps: usize,
    pub mode: CouplingMode,
    #[serde(default)]
    pub nudging: Option<NudgingConfig>,
    #[serde(default = "paths_128")]
    pub n_paths: usize,
    pub epsilon: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainMixParams {
    pub u0: FieldSpec,
    #[serde(default)]
    pub forcing: FieldSpec,
    pub period: f64,
    pub n_steps: usize,
    #[serde(default = "paths_128")]
    pub n_chains: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_ref_burn")]
    pub reference_burn_in: usize,
    #[serde(default = "default_ref_len")]
    pub reference_len: usize,
    #[serde(default = "one")]
    pub thin: usize,
    #[serde(default = "default_floor")]
    pub floor_factor: f64,
    /// Writes the final ensemble cloud as a binary snapshot.
    #[serde(default)]
    pub snapshot: bool,
}

fn default_dim() -> usize {
    8
}

fn default_ref_burn() -> usize {
    40
}

fn default_ref_len() -> usize {
    1024
}

fn default_floor() -> f64 {
    3.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CarlemanParams {
    pub window: (f64, f64),
    pub horizon: f64,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    pub s_values: Vec<f64>,
    #[serde(default = "default_panels")]
    pub panels: usize,
    /// Final data are drawn from the first `data_modes` wavenumbers.
    #[serde(default = "default_data_modes")]
    pub data_modes: usize,
    /// Radius of the coefficient ball for `a` and `b`.
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Amplitude of the random right-hand side.
    #[serde(default = "default_rho")]
    pub source: f64,
}

fn default_samples() -> usize {
    100
}

fn default_panels() -> usize {
    16
}

fn default_data_modes() -> usize {
    6
}

fn default_rho() -> f64 {
    0.5
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cl2Params {
    pub window: (f64, f64),
    pub horizon: f64,
    #[serde(default = "default_cl2_samples")]
    pub n_samples: usize,
    pub s_values: Vec<f64>,
    #[serde(default = "default_terms")]
    pub n_terms: usize,
    #[serde(default = "default_data_modes")]
    pub max_k: usize,
    #[serde(default = "default_time_panels")]
    pub time_panels: usize,
    #[serde(default = "default_x_width")]
    pub x_width: f64,
}

fn default_cl2_samples() -> usize {
    50
}

fn default_terms() -> usize {
    4
}

fn default_time_panels() -> usize {
    24
}

fn default_x_width() -> f64 {
    0.1
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservabilityParams {
    pub n_data: usize,
    pub window: (f64, f64),
    pub horizon: f64,
    /// Transport coefficient of the backward equation.
    #[serde(default)]
    pub a: FieldSpec,
    /// Zeroth-order coefficient of the backward equation.
    #[serde(default)]
    pub b: FieldSpec,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncatedObsParams {
    pub n_data: usize,
    pub horizon: f64,
    #[serde(default)]
    pub a: FieldSpec,
    #[serde(default)]
    pub b: FieldSpec,
    /// Also compute the full-window constant on the kick window's x-range.
    #[serde(default = "yes")]
    pub compare_full: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlParams {
    pub uhat0: FieldSpec,
    #[serde(default)]
    pub forcing: FieldSpec,
    pub v0: FieldSpec,
    pub horizon: f64,
    #[serde(default)]
    pub control: ControlConfig,
    /// Extra penalties for the bound sweep.
    #[serde(default)]
    pub delta_sweep: Vec<f64>,
    /// Also export the operator built from the minimisers.
    #[serde(default)]
    pub upsilon: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractionParams {
    pub uhat0: FieldSpec,
    #[serde(default)]
    pub forcing: FieldSpec,
    /// Direction of `u0 - uhat0`; scaled to each distance `d`.
    pub direction: FieldSpec,
    pub horizon: f64,
    #[serde(default)]
    pub control: ControlConfig,
    /// Ranks `N` to scan; defaults to the control block's.
    #[serde(default)]
    pub n_targets: Vec<usize>,
    #[serde(default)]
    pub d_values: Vec<f64>,
    /// Bisection bracket for the smallness threshold.
    #[serde(default = "default_d_min")]
    pub d_min: f64,
    #[serde(default = "default_d_max")]
    pub d_max: f64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
}

fn default_d_min() -> f64 {
    1e-6
}

fn default_d_max() -> f64 {
    1.0
}

fn default_iterations() -> usize {
    12
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsParams {
    pub u0: FieldSpec,
    #[serde(default)]
    pub forcing: FieldSpec,
    /// Moment exponent; defaults to the midpoint of the admissible range.
    #[serde(default)]
    pub p: Option<f64>,
    pub horizon: f64,
    #[serde(default = "default_moment_paths")]
    pub n_paths: usize,
    #[serde(default = "ten")]
    pub record_every: usize,
    #[serde(default = "default_margin")]
    pub margin: f64,
    /// Start of the window for the boundedness check.
    #[serde(default)]
    pub burn_in: f64,
}

fn default_moment_paths() -> usize {
    256
}

fn default_margin() -> f64 {
    0.1
}

/// Experiment block decoded for the named experiment.
#[derive(Clone, Debug, Serialize)]
#[serde(untagged)]
pub enum Params {
    Simulate(SimulateParams),
    Nudge(NudgeParams),
    NudgedStopped(NudgedStoppedParams),
    Couple(CoupleParams),
    ChainMix(ChainMixParams),
    Carleman(CarlemanParams),
    Cl2(Cl2Params),
    Observability(ObservabilityParams),
    TruncatedObs(TruncatedObsParams),
    Control(ControlParams),
    Contraction(ContractionParams),
    Moments(MomentsParams),
}

fn decode<T: DeserializeOwned>(value: &serde_json::Value) -> Result<T, CliError> {
    let value = if value.is_null() {
        serde_json::Value::Object(Default::default())
    } else {
        value.clone()
    };
    serde_path_to_error::deserialize(value).map_err(|e| schema_error("params", &e))
}

fn schema_error(prefix: &str, e: &serde_path_to_error::Error<serde_json::Error>) -> CliError {
    let path = e.path().to_string();
    let key = match (prefix.is_empty(), path.as_str()) {
        (true, ".") => "(root)".to_string(),
        (true, p) => p.to_string(),
        (false, ".") => prefix.to_string(),
        (false, p) => format!("{prefix}.{p}"),
    };
    CliError::Schema(format!("{key}: {}", e.inner()))
}

impl Params {
    pub fn decode(experiment: Experiment, value: &serde_json::Value) -> Result<Self, CliError> {
        Ok(match experiment {
            Experiment::Simulate => Params::Simulate(decode(value)?),
            Experiment::Nudge => Params::Nudge(decode(value)?),
            Experiment::NudgedStopped => Params::NudgedStopped(decode(value)?),
            Experiment::Couple => Params::Couple(decode(value)?),
            Experiment::ChainMix => Params::ChainMix(decode(value)?),
            Experiment::Carleman => Params::Carleman(decode(value)?),
            Experiment::Cl2 => Params::Cl2(decode(value)?),
            Experiment::Observability => Params::Observability(decode(value)?),
            Experiment::TruncatedObs => Params::TruncatedObs(decode(value)?),
            Experiment::Control => Params::Control(decode(value)?),
            Experiment::Contraction => Params::Contraction(decode(value)?),
            Experiment::Moments => Params::Moments(decode(value)?),
        })
    }
}

/// A configuration with its experiment block decoded.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub params: Params,
    /// The document as read, echoed into the manifest.
    pub source: serde_json::Value,
}

impl LoadedConfig {
    pub fn from_str(text: &str) -> Result<Self, CliError> {
        let source: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CliError::Schema(format!("(root): {e}")))?;
        let config: ExperimentConfig =
            serde_path_to_error::deserialize(source.clone()).map_err(|e| schema_error("", &e))?;
        let params = Params::decode(config.experiment, &config.params)?;
        Ok(Self { config, params, source })
    }

    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
        Self::from_str(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{
        "experiment": "simulate",
        "seed": 3,
        "output_dir": "out",
        "solver": {"n_points": 32, "dt": 0.01},
        "params": {"u0": {}, "horizon": 1.0}
    }"#;

    fn with(patch: impl FnOnce(&mut serde_json::Value)) -> Result<LoadedConfig, CliError> {
        let mut v: serde_json::Value = serde_json::from_str(BASE).unwrap();
        patch(&mut v);
        LoadedConfig::from_str(&v.to_string())
    }

    #[test]
    fn minimal_config_parses() {
        let c = with(|_| {}).unwrap();
        assert_eq!(c.config.experiment, Experiment::Simulate);
        assert_eq!(c.config.noise, NoiseBlock::Off);
        match c.params {
            Params::Simulate(p) => assert_eq!(p.record_every, 1),
            _ => panic!("wrong params"),
        }
    }

    #[test]
    fn errors_name_the_key() {
        let err = |e: CliError| e.to_string();
        let e = err(with(|v| v["params"]["horizn"] = 1.0.into()).unwrap_err());
        assert!(e.contains("params") && e.contains("horizn"), "{e}");
        let e = err(with(|v| v["solver"]["dt"] = "fast".into()).unwrap_err());
        assert!(e.contains("solver.dt"), "{e}");
        let e = err(with(|v| v["params"]["u0"]["modes"] = serde_json::json!([{"k": 1, "cs": 2.0}])).unwrap_err());
        assert!(e.contains("params.u0.modes[0]") && e.contains("cs"), "{e}");
        let e = err(with(|v| v["experiment"] = "simulat".into()).unwrap_err());
        assert!(e.contains("experiment"), "{e}");
        let e = err(with(|v| v["extra"] = 1.into()).unwrap_err());
        assert!(e.contains("extra"), "{e}");
    }

    #[test]
    fn noise_blocks() {
        let c = with(|v| {
            v["noise"] = serde_json::json!({
                "kind": "multiplicative",
                "growth": {"kind": "linear", "gain": 0.4},
                "beta0": 0.5, "n_modes": 8, "rank": 4
            })
        })
        .unwrap();
        assert_eq!(c.config.noise.kind(), "multiplicative");
        let c = with(|v| {
            v["noise"] = serde_json::json!({
                "kind": "localised",
                "window": {"x1": 1.0, "x2": 5.0, "t1": 0.1, "t2": 0.9},
                "n_modes": 8
            })
        })
        .unwrap();
        assert_eq!(c.config.noise.kind(), "localised");
        let e = with(|v| {
            v["noise"] = serde_json::json!({
                "kind": "localised",
                "window": {"x1": 1.0, "x2": 5.0, "t1": 0.1, "t2": 0.9},
                "n_mode": 8
            })
        })
        .unwrap_err()
        .to_string();
        assert!(e.contains("n_mode"), "{e}");
        let e = with(|v| {
            v["noise"] = serde_json::json!({
                "kind": "multiplicative",
                "growth": {"kind": "linear", "gian": 0.4},
                "beta0": 0.5, "n_modes": 8, "rank": 4
            })
        })
        .unwrap_err()
        .to_string();
        assert!(e.contains("noise") && e.contains("gian"), "{e}");
    }

    #[test]
    fn field_spec_bounds() {
        let g = TorusGrid::new(16).unwrap();
        let spec = FieldSpec {
            constant: 1.0,
            modes: vec![ModeSpec {
                k: 2,
                cos: 0.5,
                sin: -1.0,
            }],
        };
        let f = spec.build(&g, "u0").unwrap();
        assert!((f.eval_at(0.3) - (1.0 + 0.5 * 0.6f64.cos() - 0.6f64.sin())).abs() < 1e-13);
        let bad = FieldSpec {
            constant: 0.0,
            modes: vec![ModeSpec {
                k: 8,
                cos: 1.0,
                sin: 0.0,
            }],
        };
        assert!(bad.build(&g, "u0").unwrap_err().to_string().contains("u0.modes[0].k"));
    }
}
