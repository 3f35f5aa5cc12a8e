//! Dry-run validation: schema, hypotheses of the targeted result and the
//! constants the run would use.

use kdvb_core::noise::Growth;
use kdvb_core::spectral::eigenvalue_of_index;
use kdvb_core::sync::NudgingConfig;

use crate::config::{LoadedConfig, Params, Target};
use crate::experiments::{self, Noise, Setup};
use crate::CliError;

/// Bound on the linear growth constant for weak convergence of the laws.
pub const WEAK_CONVERGENCE_GROWTH: f64 = 0.447_213_595_499_957_9;

#[derive(Debug, Default, Clone, PartialEq)]
pub struct ValidationReport {
    /// Active constants, one `name = value` per line.
    pub lines: Vec<String>,
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }

    fn note(&mut self, line: impl Into<String>) {
        self.lines.push(line.into());
    }

    fn violate(&mut self, why: impl Into<String>) {
        self.violations.push(why.into());
    }
}

fn nudging_of(params: &Params) -> Option<&NudgingConfig> {
    match params {
        Params::Nudge(p) => Some(&p.nudging),
        Params::NudgedStopped(p) => Some(&p.nudging),
        Params::Couple(p) => p.nudging.as_ref(),
        _ => None,
    }
}

/// Kick period used to build the noise for this experiment.
fn period_of(params: &Params) -> f64 {
    match params {
        Params::Simulate(p) => p.period.unwrap_or(p.horizon),
        Params::Couple(p) => p.period,
        Params::ChainMix(p) => p.period,
        Params::TruncatedObs(p) => p.horizon,
        Params::Control(p) => p.horizon,
        Params::Contraction(p) => p.horizon,
        _ => 1.0,
    }
}

/// Checks the configuration as `run` would, then the targeted hypotheses.
/// Schema errors are returned as `Err`; hypothesis failures are collected
/// in the report.
pub fn validate(loaded: &LoadedConfig) -> Result<ValidationReport, CliError> {
    experiments::prepare(loaded)?;
    let setup = Setup::new(loaded)?;
    let noise = setup.build_noise(period_of(&loaded.params))?;
    let mut r = ValidationReport::default();
    let s = &setup.solver;
    r.note(format!("experiment = {}", setup.experiment));
    r.note(format!("seed = {}", setup.seed));
    r.note(format!(
        "grid = {} points, dt = {}, dealias = {}, scheme = {:?}",
        s.n_points, s.dt, s.dealias, s.scheme
    ));
    r.note(format!("noise = {}", setup.noise.kind()));
    match &noise {
        Noise::Off => {}
        Noise::Localised(spec) => {
            let b = spec.coefficients();
            r.note(format!("kick modes = {}", b.len()));
            r.note(format!("b_1 = {:e}, b_{} = {:e}", b[0], b.len(), b[b.len() - 1]));
            r.note(format!("kick period T = {}", spec.period()));
        }
        Noise::Multiplicative(spec) => {
            let c = spec.constants();
            let (lo, hi) = spec.admissible_p();
            r.note(format!("growth = {:?}", spec.growth()));
            r.note(format!("K (additive growth) = {}", c.k));
            r.note(format!("L (growth multiplier) = {}", c.l));
            r.note(format!("L_g (Lipschitz) = {}", c.lipschitz));
            r.note(format!("K_f (right-inverse bound) = {}", c.f_sup));
            r.note(format!("p range = ({lo}, {hi}), default p = {}", spec.default_p()));
        }
    }
    if let Some(n) = nudging_of(&loaded.params) {
        r.note(format!("N = {}", n.n_observed));
        r.note(format!("lambda_N = {}", n.lambda_n()));
        r.note(format!("lambda = {}", n.gain()));
    }
    if let Params::Moments(p) = &loaded.params {
        if let (Some(v), Noise::Multiplicative(spec)) = (p.p, &noise) {
            r.note(format!("p = {v}"));
            if let Err(e) = spec.check_p(v) {
                r.violate(e.to_string());
            }
        }
    }
    if let Some(regime) = &loaded.config.regime {
        r.note(format!("target = {:?}", regime.target));
        match regime.target {
            Target::KickMixing => match (&noise, regime.modes) {
                (Noise::Localised(spec), Some(n)) => {
                    r.note(format!("lambda_N = {} for N = {n}", eigenvalue_of_index(n)));
                    if !spec.leading_nonzero(n) {
                        r.violate(format!("kick coefficients b_i must be non-zero for i = 1..{n}"));
                    }
                }
                (Noise::Localised(_), None) => {
                    r.violate("regime.modes: kick mixing needs the number N of driven modes")
                }
                _ => r.violate("noise.kind: kick mixing needs localised noise"),
            },
            Target::UniqueErgodicity | Target::WeakConvergence => match &noise {
                Noise::Multiplicative(spec) => {
                    let limit = if regime.target == Target::UniqueErgodicity {
                        1.0
                    } else {
                        WEAK_CONVERGENCE_GROWTH
                    };
                    if let Growth::Linear { gain } = spec.growth() {
                        r.note(format!("L3 = {gain}, required < {limit}"));
                        if !(gain < limit) {
                            r.violate(format!("linear growth constant L3 = {gain} must be below {limit}"));
                        }
                    }
                    if !spec.has_right_inverse() {
                        r.violate("noise: the right inverse on the first `rank` modes does not exist");
                    }
                    if let Some(m) = regime.modes {
                        if spec.rank() < m {
                            r.violate(format!("noise.rank = {} is below the required {m}", spec.rank()));
                        }
                    }
                }
                _ => r.violate("noise.kind: this target needs multiplicative noise"),
            },
        }
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(gain: f64, p: Option<f64>, target: &str) -> LoadedConfig {
        let mut v = serde_json::json!({
            "experiment": "moments",
            "seed": 1,
            "output_dir": "out",
            "solver": {"n_points": 32, "dt": 0.01},
            "noise": {
                "kind": "multiplicative",
                "growth": {"kind": "linear", "gain": gain},
                "beta0": 0.5, "n_modes": 8, "rank": 4
            },
            "regime": {"target": target},
            "params": {"u0": {"constant": 1.0}, "horizon": 1.0}
        });
        if let Some(p) = p {
            v["params"]["p"] = p.into();
        }
        LoadedConfig::from_str(&v.to_string()).unwrap()
    }

    #[test]
    fn growth_limits() {
        let r = validate(&moments(0.5, None, "weak-convergence")).unwrap();
        assert!(!r.ok());
        assert!(r.violations[0].contains("0.5"), "{:?}", r.violations);
        assert!(validate(&moments(0.4, None, "unique-ergodicity")).unwrap().ok());
        let r = validate(&moments(0.4, Some(2.5), "unique-ergodicity")).unwrap();
        assert!(r.ok() && r.lines.iter().any(|l| l == "p = 2.5"));
        assert!((WEAK_CONVERGENCE_GROWTH - 1.0 / 5f64.sqrt()).abs() < 1e-16);
    }

    #[test]
    fn p_outside_range_is_a_schema_error() {
        let e = validate(&moments(0.4, Some(7.5), "unique-ergodicity")).unwrap_err();
        assert_eq!(e.exit_code(), 1);
        assert!(e.to_string().contains("params.p"), "{e}");
    }

    #[test]
    fn kick_mixing_needs_leading_coefficients() {
        let cfg = |coeffs: &str, modes: usize| {
            let text = format!(
                r#"{{"experiment": "chain-mix", "seed": 1, "output_dir": "o",
                   "solver": {{"n_points": 32, "dt": 0.01}},
                   "noise": {{"kind": "localised", "window": {{"x1": 1, "x2": 5, "t1": 0.1, "t2": 0.9}},
                              "coefficients": {coeffs}}},
                   "regime": {{"target": "kick-mixing", "modes": {modes}}},
                   "params": {{"u0": {{}}, "period": 1.0, "n_steps": 4}}}}"#
            );
            validate(&LoadedConfig::from_str(&text).unwrap()).unwrap()
        };
        assert!(cfg("[1e-3, 1e-4, 1e-5]", 3).ok());
        let r = cfg("[1e-3, 0.0, 1e-5]", 3);
        assert!(!r.ok() && r.violations[0].contains("1..3"));
        assert!(cfg("[1e-3, 0.0, 1e-5]", 1).ok());
    }
}
