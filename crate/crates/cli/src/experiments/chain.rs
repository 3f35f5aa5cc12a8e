//! Kicked and continuously forced chains: coupling, mixing and moments.

use kdvb_core::ergodic::{mixing_experiment, moment_diagnostics, two_chain_coupling, ChainConfig, MixingSetup};
use kdvb_core::io::CsvTable;
use kdvb_core::noise::MultiplicativeNoiseSpec;
use kdvb_core::Field;
use serde_json::json;

use super::{at_least_one, positive, Job, Noise, Setup};
use crate::config::{ChainMixParams, CoupleParams, MomentsParams};
use crate::output::Artifacts;
use crate::CliError;

fn chain_config(setup: &Setup, period: f64, n_steps: usize, noise: &Noise) -> Result<ChainConfig, CliError> {
    positive("params.period", period)?;
    at_least_one("params.n_steps", n_steps)?;
    let cfg = ChainConfig {
        period,
        n_steps,
        burn_in: 0,
        solver: setup.solver.clone(),
    };
    cfg.validate(noise.chain())
        .map_err(|e| CliError::Schema(format!("params: {e}")))?;
    Ok(cfg)
}

pub struct CoupleJob {
    setup: Setup,
    u0: Field,
    v0: Field,
    forcing: Field,
    noise: Noise,
    chain: ChainConfig,
    p: CoupleParams,
}

impl CoupleJob {
    pub fn new(setup: Setup, p: &CoupleParams) -> Result<Self, CliError> {
        positive("params.epsilon", p.epsilon)?;
        at_least_one("params.n_paths", p.n_paths)?;
        let noise = setup.build_noise(p.period)?;
        if let Some(n) = &p.nudging {
            n.validate()
                .map_err(|e| CliError::Schema(format!("params.nudging: {e}")))?;
            if matches!(noise, Noise::Localised(_)) {
                return Err(CliError::Schema(
                    "params.nudging: nudged coupling needs multiplicative noise or none".into(),
                ));
            }
        }
        Ok(Self {
            u0: p.u0.build(&setup.grid, "params.u0")?,
            v0: p.v0.build(&setup.grid, "params.v0")?,
            forcing: p.forcing.build(&setup.grid, "params.forcing")?,
            chain: chain_config(&setup, p.period, p.n_steps, &noise)?,
            noise,
            p: p.clone(),
            setup,
        })
    }
}

impl Job for CoupleJob {
    fn run(&self, out: &mut Artifacts) -> Result<(), CliError> {
        let p = &self.p;
        let report = two_chain_coupling(
            &self.u0,
            &self.v0,
            &self.forcing,
            self.noise.chain(),
            &self.chain,
            p.mode,
            p.nudging.as_ref(),
            p.n_paths,
            self.setup.seed,
            p.epsilon,
        )?;
        let (frac, mean) = (report.fraction_within(), report.mean_distance());
        let mut t = CsvTable::new(&["k", "fraction_within", "mean_distance"]);
        for (k, (f, m)) in frac.iter().zip(&mean).enumerate() {
            t.push(&[k as f64, *f, *m]);
        }
        out.csv("coupling.csv", &t);
        out.json(
            "summary.json",
            &json!({
                "mode": p.mode,
                "nudged": p.nudging.is_some(),
                "epsilon": p.epsilon,
                "n_paths": p.n_paths,
                "final_fraction_within": frac.last(),
                "final_mean_distance": mean.last(),
            }),
        );
        Ok(())
    }
}

pub struct MixJob {
    setup: Setup,
    u0: Field,
    forcing: Field,
    noise: Noise,
    chain: ChainConfig,
    mixing: MixingSetup,
    snapshot: bool,
}

impl MixJob {
    pub fn new(setup: Setup, p: &ChainMixParams) -> Result<Self, CliError> {
        at_least_one("params.n_chains", p.n_chains)?;
        at_least_one("params.dim", p.dim)?;
        at_least_one("params.reference_len", p.reference_len)?;
        at_least_one("params.thin", p.thin)?;
        positive("params.floor_factor", p.floor_factor)?;
        if p.dim > setup.grid.basis_dim() {
            return Err(CliError::Schema(format!(
                "params.dim: {} exceeds the grid basis",
                p.dim
            )));
        }
        let noise = setup.build_noise(p.period)?;
        Ok(Self {
            u0: p.u0.build(&setup.grid, "params.u0")?,
            forcing: p.forcing.build(&setup.grid, "params.forcing")?,
            chain: chain_config(&setup, p.period, p.n_steps, &noise)?,
            noise,
            mixing: MixingSetup {
                n_chains: p.n_chains,
                dim: p.dim,
                reference_burn_in: p.reference_burn_in,
                reference_len: p.reference_len,
                thin: p.thin,
                floor_factor: p.floor_factor,
            },
            snapshot: p.snapshot,
            setup,
        })
    }
}

impl Job for MixJob {
    fn run(&self, out: &mut Artifacts) -> Result<(), CliError> {
        let report = mixing_experiment(
            &self.u0,
            &self.forcing,
            self.noise.chain(),
            &self.chain,
            &self.mixing,
            self.setup.seed,
        )?;
        let mut t = CsvTable::new(&["k", "distance", "n_samples"]);
        for r in &report.rows {
            t.push(&[r.k as f64, r.distance, r.n_samples as f64]);
        }
        out.csv("distances.csv", &t);
        out.json(
            "fit.json",
            &json!({
                "sigma": report.fit.map(|f| f.sigma),
                "c": report.fit.map(|f| f.c),
                "r2": report.fit.map(|f| f.r2),
                "n_points": report.fit.map(|f| f.n_points),
                "floor": report.floor,
                "fit_error": report.fit_error,
            }),
        );
        if self.snapshot {
            out.snapshot("cloud.bin", &report.final_cloud)?;
        }
        Ok(())
    }
}

pub struct MomentsJob {
    setup: Setup,
    u0: Field,
    forcing: Field,
    noise: Option<MultiplicativeNoiseSpec>,
    p_exp: f64,
    p: MomentsParams,
}

impl MomentsJob {
    pub fn new(setup: Setup, p: &MomentsParams) -> Result<Self, CliError> {
        positive("params.horizon", p.horizon)?;
        at_least_one("params.n_paths", p.n_paths)?;
        at_least_one("params.record_every", p.record_every)?;
        if !(p.margin >= 0.0 && p.margin.is_finite()) {
            return Err(CliError::Schema(format!("params.margin must be ≥ 0, got {}", p.margin)));
        }
        let noise = setup.continuous()?;
        let p_exp = match (p.p, &noise) {
            (Some(v), _) => v,
            (None, Some(s)) => s.default_p(),
            (None, None) => 4.0,
        };
        match &noise {
            Some(s) => s
                .check_p(p_exp)
                .map_err(|e| CliError::Schema(format!("params.p: {e}")))?,
            None if p_exp <= 2.0 => {
                return Err(CliError::Schema(format!(
                    "params.p: moment exponent {p_exp} must exceed 2"
                )));
            }
            None => {}
        }
        Ok(Self {
            u0: p.u0.build(&setup.grid, "params.u0")?,
            forcing: p.forcing.build(&setup.grid, "params.forcing")?,
            noise,
            p_exp,
            p: p.clone(),
            setup,
        })
    }
}

impl Job for MomentsJob {
    fn run(&self, out: &mut Artifacts) -> Result<(), CliError> {
        let p = &self.p;
        let r = moment_diagnostics(
            &self.u0,
            &self.forcing,
            self.noise.as_ref(),
            self.p_exp,
            p.horizon,
            &self.setup.solver,
            p.n_paths,
            self.setup.seed,
            p.record_every,
        )?;
        let (lhs, rhs) = (r.lhs(), r.rhs(p.margin));
        let mut t = CsvTable::new(&["t", "mean_sq", "mean_dissipation", "lhs", "rhs", "mean_p"]);
        for i in 0..r.times.len() {
            t.push(&[
                r.times[i],
                r.mean_sq[i],
                r.mean_dissipation[i],
                lhs[i],
                rhs[i],
                r.mean_p[i],
            ]);
        }
        out.csv("moments.csv", &t);
        out.json(
            "summary.json",
            &json!({
                "p": r.p,
                "b": r.b,
                "margin": p.margin,
                "n_paths": r.n_paths,
                "dissipation_violations": r.dissipation_violations(p.margin),
                "boundedness": r.boundedness(p.burn_in),
            }),
        );
        Ok(())
    }
}
