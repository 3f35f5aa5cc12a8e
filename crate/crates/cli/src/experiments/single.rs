//! Trajectories and nudged pairs.

use kdvb_core::dynamics::{energy_report, simulate, Trajectory};
use kdvb_core::io::CsvTable;
use kdvb_core::noise::{stochastic_step_with, KickProcess, KickSample, MultiplicativeNoiseSpec};
use kdvb_core::rng::{Domain, StreamKey};
use kdvb_core::source::Sum;
use kdvb_core::sync::{run_nudged_stopped, run_sync, stopping_level, NudgingConfig, SyncEnsemble};
use kdvb_core::Field;
use serde_json::json;

use super::{at_least_one, positive, trajectory_table, Job, Noise, Setup};
use crate::config::{NudgeParams, NudgedStoppedParams, SimulateParams};
use crate::output::Artifacts;
use crate::CliError;

/// Keeps the pilot ensemble's draws apart from the main run's.
const PILOT_SEED_MIX: u64 = 0x9e37_79b9_7f4a_7c15;

pub struct SimulateJob {
    setup: Setup,
    u0: Field,
    forcing: Field,
    horizon: f64,
    noise: Noise,
    record_every: usize,
    mode_columns: usize,
    snapshot: bool,
}

impl SimulateJob {
    pub fn new(setup: Setup, p: &SimulateParams) -> Result<Self, CliError> {
        positive("params.horizon", p.horizon)?;
        at_least_one("params.record_every", p.record_every)?;
        let period = p.period.unwrap_or(p.horizon);
        positive("params.period", period)?;
        let nyq = setup.grid.nyquist();
        if p.mode_columns >= nyq {
            return Err(CliError::Schema(format!("params.mode_columns must be below {nyq}")));
        }
        Ok(Self {
            u0: p.u0.build(&setup.grid, "params.u0")?,
            forcing: p.forcing.build(&setup.grid, "params.forcing")?,
            noise: setup.build_noise(period)?,
            horizon: p.horizon,
            record_every: p.record_every,
            mode_columns: p.mode_columns,
            snapshot: p.snapshot,
            setup,
        })
    }

    fn euler_maruyama(&self, spec: &MultiplicativeNoiseSpec) -> Result<Trajectory, CliError> {
        let solver = &self.setup.solver;
        let n = solver.steps_for(self.horizon);
        let dt = self.horizon / n as f64;
        let mut rng = StreamKey::new(self.setup.seed).path(0).stream(Domain::Wiener, 0);
        let mut u = self.u0.clone();
        let mut traj = Trajectory::new();
        traj.push(0.0, u.clone())?;
        for i in 0..n {
            let dw = spec.draw_increments(dt, &mut rng);
            u = stochastic_step_with(&u, i as f64 * dt, dt, spec, &self.forcing, solver, &dw)?;
            traj.push((i + 1) as f64 * dt, u.clone())?;
        }
        Ok(traj)
    }
}

impl Job for SimulateJob {
    fn run(&self, out: &mut Artifacts) -> Result<(), CliError> {
        let solver = &self.setup.solver;
        let every = self.record_every;
        let (traj, residual) = match &self.noise {
            Noise::Off => {
                let traj = simulate(&self.u0, &self.forcing, 0.0, self.horizon, solver, 1)?;
                let r = energy_report(&traj, &self.forcing);
                (traj, Some(r))
            }
            Noise::Localised(spec) => {
                let n_kicks = (self.horizon / spec.period()).ceil() as u64;
                let key = StreamKey::new(self.setup.seed).path(0);
                let samples: Vec<KickSample> = (1..=n_kicks).map(|k| spec.sample_kick(key, k)).collect();
                let mut log = CsvTable::new(&["kick", "mode", "xi"]);
                for (k, s) in samples.iter().enumerate() {
                    for (i, xi) in s.xi.iter().enumerate() {
                        log.push(&[(k + 1) as f64, (i + 1) as f64, *xi]);
                    }
                }
                out.csv("kicks.csv", &log);
                let process = KickProcess::new(spec, &samples);
                let forcing = Sum(&self.forcing, &process);
                let traj = simulate(&self.u0, &forcing, 0.0, self.horizon, solver, 1)?;
                let r = energy_report(&traj, &forcing);
                (traj, Some(r))
            }
            Noise::Multiplicative(spec) => (self.euler_maruyama(spec)?, None),
        };
        out.csv("trajectory.csv", &trajectory_table(&traj, self.mode_columns, every));
        if let Some(r) = &residual {
            let mut t = CsvTable::new(&["time", "residual"]);
            for (time, v) in traj.times.iter().skip(1).zip(r) {
                t.push(&[*time, *v]);
            }
            out.csv("energy.csv", &t);
        }
        if self.snapshot {
            let kept: Vec<Field> = traj
                .states
                .iter()
                .enumerate()
                .filter(|(i, _)| i % every == 0 || *i + 1 == traj.len())
                .map(|(_, u)| u.clone())
                .collect();
            out.snapshot("states.bin", &kept)?;
        }
        let last = traj.last().expect("non-empty trajectory");
        let max_residual = residual.as_ref().map(|r| r.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        out.json(
            "summary.json",
            &json!({
                "horizon": self.horizon,
                "steps": traj.len() - 1,
                "final_l2_norm": last.l2_norm(),
                "final_h1_norm": last.h1_norm(),
                "max_energy_residual": max_residual,
            }),
        );
        Ok(())
    }
}

fn sync_table(ens: &SyncEnsemble) -> CsvTable {
    let mut t = CsvTable::new(&["t", "mean_sq_error", "gamma", "lyapunov_lhs", "n_paths", "lyapunov_se"]);
    for r in ens.report() {
        t.push(&[
            r.t,
            r.mean_sq_error,
            r.gamma,
            r.lyapunov_lhs,
            r.n_paths as f64,
            r.lyapunov_se,
        ]);
    }
    t
}

fn check_nudging(cfg: &NudgingConfig, setup: &Setup) -> Result<(), CliError> {
    cfg.validate()
        .map_err(|e| CliError::Schema(format!("params.nudging: {e}")))?;
    if cfg.n_observed >= setup.grid.basis_dim() {
        return Err(CliError::Schema(format!(
            "params.nudging.n_observed: {} exceeds the grid basis",
            cfg.n_observed
        )));
    }
    Ok(())
}

pub struct NudgeJob {
    setup: Setup,
    u0: Field,
    v0: Field,
    forcing: Field,
    noise: Option<MultiplicativeNoiseSpec>,
    p: NudgeParams,
}

impl NudgeJob {
    pub fn new(setup: Setup, p: &NudgeParams) -> Result<Self, CliError> {
        positive("params.horizon", p.horizon)?;
        at_least_one("params.n_paths", p.n_paths)?;
        at_least_one("params.record_every", p.record_every)?;
        check_nudging(&p.nudging, &setup)?;
        if p.radii.iter().any(|r| !r.is_finite()) {
            return Err(CliError::Schema("params.radii must be finite".into()));
        }
        Ok(Self {
            u0: p.u0.build(&setup.grid, "params.u0")?,
            v0: p.v0.build(&setup.grid, "params.v0")?,
            forcing: p.forcing.build(&setup.grid, "params.forcing")?,
            noise: setup.continuous()?,
            p: p.clone(),
            setup,
        })
    }
}

impl Job for NudgeJob {
    fn run(&self, out: &mut Artifacts) -> Result<(), CliError> {
        let p = &self.p;
        let ens = run_sync(
            &self.u0,
            &self.v0,
            &p.nudging,
            self.noise.as_ref(),
            &self.forcing,
            p.horizon,
            &self.setup.solver,
            p.n_paths,
            self.setup.seed,
            p.record_every,
        )?;
        out.csv("sync.csv", &sync_table(&ens));
        let exponential = ens.exponential_fit();
        let power = ens.power_fit(p.power_fit_start);
        // Exponential decay is expected for bounded noise, a power law otherwise.
        let bounded = self
            .noise
            .as_ref()
            .is_none_or(|s| matches!(s.growth(), kdvb_core::noise::Growth::Bounded));
        let fit = if bounded { &exponential } else { &power };
        out.json("fit.json", fit);
        let tails = ens.tau_tail(&p.radii, p.beta);
        if !p.radii.is_empty() {
            let mut t = CsvTable::new(&["radius", "p_stopped"]);
            for (r, q) in p.radii.iter().zip(&tails) {
                t.push(&[*r, *q]);
            }
            out.csv("tau_tail.csv", &t);
        }
        let msq = ens.mean_sq_error();
        out.json(
            "summary.json",
            &json!({
                "lambda_n": ens.lambda_n,
                "gain": p.nudging.gain(),
                "lipschitz": ens.lipschitz,
                "c0": ens.c0,
                "w0_sq": ens.w0_sq,
                "final_mean_sq_error": msq.last(),
                "decay_ratio": msq.last().map(|m| m / msq[0]),
                "supermartingale_violations": ens.supermartingale_violations(0.0),
                "exponential_fit": exponential,
                "power_fit": power,
                "radii": p.radii,
                "beta": p.beta,
                "tau_tail": tails,
            }),
        );
        Ok(())
    }
}

pub struct StoppedJob {
    setup: Setup,
    u0: Field,
    v0: Field,
    forcing: Field,
    noise: MultiplicativeNoiseSpec,
    p: NudgedStoppedParams,
}

impl StoppedJob {
    pub fn new(setup: Setup, p: &NudgedStoppedParams) -> Result<Self, CliError> {
        at_least_one("params.horizon", p.horizon)?;
        at_least_one("params.n_paths", p.n_paths)?;
        at_least_one("params.n_pilot", p.n_pilot)?;
        positive("params.tolerance", p.tolerance)?;
        if let Some(k) = p.level {
            if !(k >= 0.0 && k.is_finite()) {
                return Err(CliError::Schema(format!(
                    "params.level must be finite and ≥ 0, got {k}"
                )));
            }
        }
        check_nudging(&p.nudging, &setup)?;
        let noise = setup.continuous()?.ok_or_else(|| setup.wrong_noise("multiplicative"))?;
        if noise.rank() < p.nudging.n_observed || !noise.has_right_inverse() {
            return Err(CliError::Schema(format!(
                "noise.rank: the shift needs a right inverse on the {} observed modes",
                p.nudging.n_observed
            )));
        }
        Ok(Self {
            u0: p.u0.build(&setup.grid, "params.u0")?,
            v0: p.v0.build(&setup.grid, "params.v0")?,
            forcing: p.forcing.build(&setup.grid, "params.forcing")?,
            noise,
            p: p.clone(),
            setup,
        })
    }
}

impl Job for StoppedJob {
    fn run(&self, out: &mut Artifacts) -> Result<(), CliError> {
        let p = &self.p;
        let solver = &self.setup.solver;
        let level = match p.level {
            Some(k) => k,
            None => stopping_level(
                &self.u0,
                &self.v0,
                &p.nudging,
                &self.noise,
                &self.forcing,
                p.m_star,
                solver,
                p.n_pilot,
                self.setup.seed ^ PILOT_SEED_MIX,
            )?,
        };
        let report = run_nudged_stopped(
            &self.u0,
            &self.v0,
            &p.nudging,
            &self.noise,
            &self.forcing,
            level,
            p.horizon as f64,
            solver,
            p.n_paths,
            self.setup.seed,
            p.tolerance,
        )?;
        let mut t = CsvTable::new(&["path", "sigma_k", "final_distance"]);
        for (i, path) in report.ensemble.paths.iter().enumerate() {
            let d = path.w_sq.last().map_or(f64::NAN, |w| w.sqrt());
            t.push(&[i as f64, path.sigma_k.unwrap_or(f64::NAN), d]);
        }
        out.csv("stopped.csv", &t);
        out.csv("sync.csv", &sync_table(&report.ensemble));
        out.json(
            "summary.json",
            &json!({
                "level": level,
                "level_from_pilot": p.level.is_none(),
                "never_stopped": report.never_stopped,
                "synchronised": report.synchronised,
                "tolerance": report.tolerance,
                "n_paths": report.ensemble.paths.len(),
            }),
        );
        Ok(())
    }
}
