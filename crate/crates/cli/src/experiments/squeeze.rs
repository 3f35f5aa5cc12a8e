//! Penalised controls and the squeezing ratio.

use kdvb_core::control::{reference_trajectory, ControlConfig, ControlProblem, ControlProblemSpec, Squeezer};
use kdvb_core::io::CsvTable;
use kdvb_core::noise::LocalisedNoiseSpec;
use kdvb_core::Field;
use serde_json::json;

use super::{at_least_one, positive, trajectory_table, Job, Setup};
use crate::config::{ContractionParams, ControlParams};
use crate::output::Artifacts;
use crate::CliError;

fn check_control(cfg: &ControlConfig, noise: &LocalisedNoiseSpec, setup: &Setup) -> Result<(), CliError> {
    cfg.validate()
        .map_err(|e| CliError::Schema(format!("params.control: {e}")))?;
    if cfg.m > noise.basis().len() {
        return Err(CliError::Schema(format!(
            "params.control.m: {} exceeds the {} window basis functions (noise.n_modes)",
            cfg.m,
            noise.basis().len()
        )));
    }
    if cfg.ambient() > setup.grid.basis_dim() || cfg.n_target > setup.grid.basis_dim() {
        return Err(CliError::Schema("params.control: rank exceeds the grid basis".into()));
    }
    Ok(())
}

pub struct ControlJob {
    setup: Setup,
    noise: LocalisedNoiseSpec,
    uhat0: Field,
    forcing: Field,
    v0: Field,
    p: ControlParams,
}

impl ControlJob {
    pub fn new(setup: Setup, p: &ControlParams) -> Result<Self, CliError> {
        positive("params.horizon", p.horizon)?;
        let noise = setup.localised(p.horizon)?;
        check_control(&p.control, &noise, &setup)?;
        for (i, d) in p.delta_sweep.iter().enumerate() {
            positive(&format!("params.delta_sweep[{i}]"), *d)?;
        }
        Ok(Self {
            uhat0: p.uhat0.build(&setup.grid, "params.uhat0")?,
            forcing: p.forcing.build(&setup.grid, "params.forcing")?,
            v0: p.v0.build(&setup.grid, "params.v0")?,
            noise,
            p: p.clone(),
            setup,
        })
    }
}

impl Job for ControlJob {
    fn run(&self, out: &mut Artifacts) -> Result<(), CliError> {
        let p = &self.p;
        let solver = &self.setup.solver;
        let uhat = reference_trajectory(&self.uhat0, &self.forcing, p.horizon, solver)?;
        let problem = |delta: f64| {
            ControlProblem::new(ControlProblemSpec {
                config: ControlConfig {
                    delta,
                    ..p.control.clone()
                },
                noise: &self.noise,
                uhat: &uhat,
                horizon: p.horizon,
                solver: solver.clone(),
            })
        };
        let main = problem(p.control.delta)?;
        let sol = main.solve(&self.v0)?;
        let ratio = main.bound_ratio(&self.v0, &sol);
        let hessian_min = main.hessian_min_eigenvalue();
        let mut zeta = CsvTable::new(&["index", "zeta"]);
        for (i, z) in sol.zeta.iter().enumerate() {
            zeta.push(&[(i + 1) as f64, *z]);
        }
        out.csv("zeta.csv", &zeta);
        out.csv("w.csv", &trajectory_table(&sol.w, 0, 1));
        let mut sweep = Vec::new();
        let mut table = CsvTable::new(&["delta", "ratio", "cost"]);
        for &d in &p.delta_sweep {
            let pr = problem(d)?;
            let s = pr.solve(&self.v0)?;
            let r = pr.bound_ratio(&self.v0, &s);
            table.push(&[d, r, s.cost]);
            sweep.push(json!({"delta": d, "ratio": r, "cost": s.cost}));
        }
        if !p.delta_sweep.is_empty() {
            out.csv("delta_sweep.csv", &table);
        }
        if p.upsilon {
            let u = main.upsilon(p.control.ambient())?;
            let mut header = vec!["row".to_string()];
            header.extend((1..=u.ncols()).map(|j| format!("e_{j}")));
            let mut t = CsvTable::new(&header);
            for i in 0..u.nrows() {
                let mut row = vec![(i + 1) as f64];
                row.extend((0..u.ncols()).map(|j| u[(i, j)]));
                t.push(&row);
            }
            out.csv("upsilon.csv", &t);
        }
        let final_norm = sol.w_final().l2_norm();
        out.json(
            "summary.json",
            &json!({
                "delta": p.control.delta,
                "N": p.control.n_target,
                "m": p.control.m,
                "cost": sol.cost,
                "bound_ratio": ratio,
                "final_norm": final_norm,
                "hessian_min_eigenvalue": hessian_min,
                "zeta": sol.zeta,
                "sweep": sweep,
            }),
        );
        Ok(())
    }
}

pub struct ContractionJob {
    setup: Setup,
    noise: LocalisedNoiseSpec,
    uhat0: Field,
    forcing: Field,
    direction: Field,
    targets: Vec<usize>,
    p: ContractionParams,
}

impl ContractionJob {
    pub fn new(setup: Setup, p: &ContractionParams) -> Result<Self, CliError> {
        positive("params.horizon", p.horizon)?;
        positive("params.d_min", p.d_min)?;
        positive("params.d_max", p.d_max)?;
        if p.d_min >= p.d_max {
            return Err(CliError::Schema("params.d_min must be below params.d_max".into()));
        }
        at_least_one("params.iterations", p.iterations)?;
        for (i, d) in p.d_values.iter().enumerate() {
            positive(&format!("params.d_values[{i}]"), *d)?;
        }
        let noise = setup.localised(p.horizon)?;
        let targets = if p.n_targets.is_empty() {
            vec![p.control.n_target]
        } else {
            p.n_targets.clone()
        };
        for &n in &targets {
            check_control(
                &ControlConfig {
                    n_target: n,
                    ..p.control.clone()
                },
                &noise,
                &setup,
            )?;
        }
        let direction = p.direction.build(&setup.grid, "params.direction")?;
        if direction.l2_norm() == 0.0 {
            return Err(CliError::Schema("params.direction must be non-zero".into()));
        }
        Ok(Self {
            uhat0: p.uhat0.build(&setup.grid, "params.uhat0")?,
            forcing: p.forcing.build(&setup.grid, "params.forcing")?,
            direction,
            targets,
            noise,
            p: p.clone(),
            setup,
        })
    }
}

impl Job for ContractionJob {
    fn run(&self, out: &mut Artifacts) -> Result<(), CliError> {
        let p = &self.p;
        let unit = self.direction.scale(1.0 / self.direction.l2_norm());
        let mut table = CsvTable::new(&["N", "m", "delta", "d", "q_measured", "q_linear"]);
        let mut summary = Vec::new();
        for &n in &self.targets {
            // The ambient rank follows N unless set explicitly.
            let config = ControlConfig {
                n_target: n,
                ..p.control.clone()
            };
            let sq = Squeezer::new(
                &self.uhat0,
                &self.forcing,
                &self.noise,
                config,
                p.horizon,
                self.setup.solver.clone(),
            )?;
            for &d in &p.d_values {
                let c = sq.contraction(&unit.scale(d))?;
                table.push(&[n as f64, c.m as f64, c.delta, c.d, c.q_measured, c.q_linear]);
            }
            let d = sq.threshold(&unit, p.d_min, p.d_max, p.iterations)?;
            let at = match d {
                Some(d) => Some(sq.contraction(&unit.scale(d))?),
                None => None,
            };
            summary.push(json!({
                "N": n,
                "m": p.control.m,
                "delta": p.control.delta,
                "d": d,
                "q_measured": at.as_ref().map(|c| c.q_measured),
                "q_linear": at.as_ref().map(|c| c.q_linear),
            }));
        }
        out.csv("contraction.csv", &table);
        out.json("summary.json", &summary);
        Ok(())
    }
}
