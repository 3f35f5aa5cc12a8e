//! Carleman inequalities and observability constants.

use kdvb_core::carleman::{
    ct1_sides, lemma_cl2_sides, observability_constant, observability_constant_at, truncated_observability,
    BackwardProblem, CarlemanWeights, Cl2Resolution, ObservabilityProblem, TrigTestFunction,
};
use kdvb_core::dynamics::SolverConfig;
use kdvb_core::io::{CsvTable, Num};
use kdvb_core::noise::LocalisedNoiseSpec;
use kdvb_core::rng::{Domain, StreamKey};
use kdvb_core::{Field, TorusGrid};
use rand::Rng;
use rayon::prelude::*;
use serde_json::json;

use super::{at_least_one, positive, Job, Setup};
use crate::config::{CarlemanParams, Cl2Params, FieldSpec, ModeSpec, ObservabilityParams, TruncatedObsParams};
use crate::output::Artifacts;
use crate::CliError;

/// Random data of one backward problem, independent of the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Ct1Sample {
    pub v_final: FieldSpec,
    pub a: FieldSpec,
    pub b: FieldSpec,
    pub g: FieldSpec,
}

/// `c + r cos(x + θ)` with `|c| + r ≤ rho`.
fn ball_coefficient(rng: &mut impl Rng, rho: f64) -> FieldSpec {
    let c = 0.5 * rho * (2.0 * rng.random::<f64>() - 1.0);
    let r = 0.5 * rho * rng.random::<f64>();
    let th = std::f64::consts::TAU * rng.random::<f64>();
    FieldSpec {
        constant: c,
        modes: vec![ModeSpec {
            k: 1,
            cos: r * th.cos(),
            sin: r * th.sin(),
        }],
    }
}

fn random_poly(rng: &mut impl Rng, modes: usize, amp: f64, with_constant: bool) -> FieldSpec {
    let mut u = || amp * (2.0 * rng.random::<f64>() - 1.0);
    let constant = if with_constant { u() } else { 0.0 };
    let modes = (1..=modes).map(|k| ModeSpec { k, cos: u(), sin: u() }).collect();
    FieldSpec { constant, modes }
}

/// Sample `index` of the backward-problem family: final data in the first
/// `data_modes` wavenumbers, `a` and `b` in the ball of radius `rho`, and a
/// time-independent right-hand side of size `source`.
pub fn ct1_sample(seed: u64, index: u64, data_modes: usize, rho: f64, source: f64) -> Ct1Sample {
    let mut rng = StreamKey::new(seed).path(index).stream(Domain::Sampling, 0);
    let v_final = random_poly(&mut rng, data_modes, 1.0, true);
    let a = ball_coefficient(&mut rng, rho);
    let b = ball_coefficient(&mut rng, rho);
    let g = random_poly(&mut rng, 3, source, false);
    Ct1Sample { v_final, a, b, g }
}

fn window_cell(a: f64, b: f64) -> String {
    format!("{}:{}", Num(a), Num(b))
}

fn weights_for(window: (f64, f64), horizon: f64) -> Result<CarlemanWeights, CliError> {
    positive("params.horizon", horizon)?;
    let w = CarlemanWeights::new(window.0, window.1, horizon)
        .map_err(|e| CliError::Schema(format!("params.window: {e}")))?;
    w.validate()
        .map_err(|e| CliError::Schema(format!("params.window: {e}")))?;
    Ok(w)
}

fn check_s_values(s: &[f64]) -> Result<(), CliError> {
    if s.is_empty() {
        return Err(CliError::Schema("params.s_values must not be empty".into()));
    }
    for (i, v) in s.iter().enumerate() {
        positive(&format!("params.s_values[{i}]"), *v)?;
    }
    Ok(())
}

pub struct CarlemanJob {
    setup: Setup,
    weights: CarlemanWeights,
    p: CarlemanParams,
    resolutions: Vec<SolverConfig>,
}

impl CarlemanJob {
    pub fn new(setup: Setup, p: &CarlemanParams) -> Result<Self, CliError> {
        let weights = weights_for(p.window, p.horizon)?;
        check_s_values(&p.s_values)?;
        at_least_one("params.n_samples", p.n_samples)?;
        at_least_one("params.panels", p.panels)?;
        if !(p.rho >= 0.0 && p.source >= 0.0) {
            return Err(CliError::Schema("params.rho and params.source must be ≥ 0".into()));
        }
        if p.data_modes + 1 >= setup.grid.nyquist() {
            return Err(CliError::Schema(format!(
                "params.data_modes: {} too large for the grid",
                p.data_modes
            )));
        }
        let mut fine = setup.solver.clone();
        fine.n_points *= 2;
        Ok(Self {
            resolutions: vec![setup.solver.clone(), fine],
            weights,
            p: p.clone(),
            setup,
        })
    }

    /// `ln(lhs/rhs)` for each `s`.
    fn sample_ratios(&self, sample: &Ct1Sample, solver: &SolverConfig) -> Result<Vec<(f64, f64, f64)>, CliError> {
        let grid = TorusGrid::new(solver.n_points)?;
        let v_final = sample.v_final.build(&grid, "v_final")?;
        let a = sample.a.build(&grid, "a")?;
        let b = sample.b.build(&grid, "b")?;
        let g = sample.g.build(&grid, "g")?;
        let prob = BackwardProblem {
            v_final: &v_final,
            a: &a,
            b: &b,
            g: &g,
        };
        self.p
            .s_values
            .iter()
            .map(|&s| {
                let sides = ct1_sides(&prob, &self.weights, s, self.p.panels, solver)?;
                Ok((sides.log_lhs, sides.log_rhs, sides.log_ratio()))
            })
            .collect()
    }
}

impl Job for CarlemanJob {
    fn run(&self, out: &mut Artifacts) -> Result<(), CliError> {
        let p = &self.p;
        let samples: Vec<Ct1Sample> = (0..p.n_samples as u64)
            .map(|i| ct1_sample(self.setup.seed, i, p.data_modes, p.rho, p.source))
            .collect();
        let mut table = CsvTable::new(&["sample", "s", "n_points", "log_lhs", "log_rhs", "log_ratio"]);
        let mut max_per_res = Vec::new();
        let mut max_per_s = Vec::new();
        for solver in &self.resolutions {
            let results = samples
                .par_iter()
                .map(|s| self.sample_ratios(s, solver))
                .collect::<Result<Vec<_>, CliError>>()?;
            let mut per_s = vec![f64::NEG_INFINITY; p.s_values.len()];
            for (i, rows) in results.iter().enumerate() {
                for (j, &(l, r, q)) in rows.iter().enumerate() {
                    table.push(&[i as f64, p.s_values[j], solver.n_points as f64, l, r, q]);
                    per_s[j] = per_s[j].max(q);
                }
            }
            max_per_res.push(per_s.iter().copied().fold(f64::NEG_INFINITY, f64::max));
            max_per_s.push(per_s);
        }
        out.csv("ct1.csv", &table);
        let mut w = CsvTable::new(&["x", "psi", "dpsi", "ddpsi"]);
        for row in self.weights.sample(512) {
            w.push(&row);
        }
        out.csv("weights.csv", &w);
        // Maxima are compared through their logarithms, which stay finite
        // where the ratios themselves underflow.
        let change = (max_per_res[1] - max_per_res[0]).abs().exp_m1();
        out.json(
            "summary.json",
            &json!({
                "n_samples": p.n_samples,
                "s_values": p.s_values,
                "resolutions": self.resolutions.iter().map(|s| s.n_points).collect::<Vec<_>>(),
                "max_log_ratio": max_per_res,
                "max_log_ratio_per_s": max_per_s,
                "refinement_change": change,
                "weights": {
                    "psi_max": self.weights.psi_max,
                    "psi_min": self.weights.psi_min,
                    "shift": self.weights.shift,
                    "offset": self.weights.offset,
                    "max_min_ratio": self.weights.ratio(),
                },
            }),
        );
        Ok(())
    }
}

pub struct Cl2Job {
    setup: Setup,
    weights: CarlemanWeights,
    p: Cl2Params,
}

impl Cl2Job {
    pub fn new(setup: Setup, p: &Cl2Params) -> Result<Self, CliError> {
        let weights = weights_for(p.window, p.horizon)?;
        check_s_values(&p.s_values)?;
        at_least_one("params.n_samples", p.n_samples)?;
        at_least_one("params.n_terms", p.n_terms)?;
        at_least_one("params.time_panels", p.time_panels)?;
        positive("params.x_width", p.x_width)?;
        Ok(Self {
            weights,
            p: p.clone(),
            setup,
        })
    }
}

impl Job for Cl2Job {
    fn run(&self, out: &mut Artifacts) -> Result<(), CliError> {
        let p = &self.p;
        let res = Cl2Resolution {
            time_panels: p.time_panels,
            x_width: p.x_width,
        };
        let results = (0..p.n_samples as u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = StreamKey::new(self.setup.seed).path(i).stream(Domain::Sampling, 1);
                let q = TrigTestFunction::random(&mut rng, p.n_terms, p.max_k, p.horizon);
                p.s_values
                    .iter()
                    .map(|&s| lemma_cl2_sides(&q, &self.weights, s, res).map_err(CliError::from))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut t = CsvTable::new(&["sample", "s", "log_lhs", "log_rhs", "log_ratio"]);
        let mut per_s = vec![f64::NEG_INFINITY; p.s_values.len()];
        for (i, rows) in results.iter().enumerate() {
            for (j, sides) in rows.iter().enumerate() {
                let q = sides.log_ratio();
                t.push(&[i as f64, p.s_values[j], sides.log_lhs, sides.log_rhs, q]);
                per_s[j] = per_s[j].max(q);
            }
        }
        out.csv("cl2.csv", &t);
        let finite = per_s.iter().all(|v| v.is_finite());
        let non_increasing = per_s.windows(2).all(|w| w[1] <= w[0]);
        out.json(
            "summary.json",
            &json!({
                "n_samples": p.n_samples,
                "s_values": p.s_values,
                "max_log_ratio_per_s": per_s,
                "finite": finite,
                "non_increasing": non_increasing,
            }),
        );
        Ok(())
    }
}

fn check_observation(n_data: usize, horizon: f64, grid: &TorusGrid) -> Result<(), CliError> {
    at_least_one("params.n_data", n_data)?;
    positive("params.horizon", horizon)?;
    if n_data > grid.basis_dim() {
        return Err(CliError::Schema(format!(
            "params.n_data: {n_data} exceeds the grid basis"
        )));
    }
    Ok(())
}

pub struct ObservabilityJob {
    setup: Setup,
    a: Field,
    b: Field,
    p: ObservabilityParams,
}

impl ObservabilityJob {
    pub fn new(setup: Setup, p: &ObservabilityParams) -> Result<Self, CliError> {
        check_observation(p.n_data, p.horizon, &setup.grid)?;
        let (x1, x2) = p.window;
        if !(0.0 <= x1 && x1 < x2 && x2 <= std::f64::consts::TAU) {
            return Err(CliError::Schema(format!(
                "params.window: ({x1}, {x2}) must lie in [0, 2π]"
            )));
        }
        Ok(Self {
            a: p.a.build(&setup.grid, "params.a")?,
            b: p.b.build(&setup.grid, "params.b")?,
            p: p.clone(),
            setup,
        })
    }
}

impl Job for ObservabilityJob {
    fn run(&self, out: &mut Artifacts) -> Result<(), CliError> {
        let p = &self.p;
        let prob = ObservabilityProblem {
            n_data: p.n_data,
            a: &self.a,
            b: &self.b,
            window: p.window,
            horizon: p.horizon,
            solver: self.setup.solver.clone(),
        };
        let dim = self.setup.grid.basis_dim();
        let mut k = prob.initial_ambient();
        let mut t = CsvTable::new(&["N", "M", "window", "C", "min_singular_value"]);
        let window = window_cell(p.window.0, p.window.1);
        let mut history = Vec::new();
        loop {
            let obs = observability_constant_at(&prob, k)?;
            t.push_cells(&[
                p.n_data.to_string(),
                k.to_string(),
                window.clone(),
                Num(obs.constant).to_string(),
                Num(obs.min_singular_value).to_string(),
            ]);
            let done = history.last().is_some_and(|prev: &kdvb_core::carleman::Observability| {
                (obs.constant - prev.constant).abs() < 0.01 * prev.constant.abs()
            });
            history.push(obs);
            if done || k >= dim {
                break;
            }
            k = (2 * k).min(dim);
        }
        out.csv("constants.csv", &t);
        let last = history.last().expect("at least one constant");
        let change = if history.len() >= 2 {
            let prev = &history[history.len() - 2];
            (last.constant - prev.constant).abs() / prev.constant.abs()
        } else {
            f64::NAN
        };
        out.json(
            "summary.json",
            &json!({
                "n_data": p.n_data,
                "window": p.window,
                "horizon": p.horizon,
                "constant": last.constant,
                "modes": last.modes,
                "relative_change": change,
                "converged": change < 0.01,
                "residual": last.residual,
                "min_singular_value": last.min_singular_value,
                "spectrum": last.spectrum,
                "maximiser": last.maximiser,
            }),
        );
        Ok(())
    }
}

pub struct TruncatedJob {
    setup: Setup,
    noise: LocalisedNoiseSpec,
    a: Field,
    b: Field,
    p: TruncatedObsParams,
}

impl TruncatedJob {
    pub fn new(setup: Setup, p: &TruncatedObsParams) -> Result<Self, CliError> {
        check_observation(p.n_data, p.horizon, &setup.grid)?;
        Ok(Self {
            noise: setup.localised(p.horizon)?,
            a: p.a.build(&setup.grid, "params.a")?,
            b: p.b.build(&setup.grid, "params.b")?,
            p: p.clone(),
            setup,
        })
    }
}

impl Job for TruncatedJob {
    fn run(&self, out: &mut Artifacts) -> Result<(), CliError> {
        let p = &self.p;
        let w = *self.noise.window();
        let prob = ObservabilityProblem {
            n_data: p.n_data,
            a: &self.a,
            b: &self.b,
            window: (w.x1, w.x2),
            horizon: p.horizon,
            solver: self.setup.solver.clone(),
        };
        let trunc = truncated_observability(&prob, &self.noise)?;
        let full = if p.compare_full {
            Some(observability_constant(&prob)?.constant)
        } else {
            None
        };
        let mut t = CsvTable::new(&["N", "M", "window", "C", "min_singular_value"]);
        let window = window_cell(w.x1, w.x2);
        for row in &trunc.scan {
            t.push_cells(&[
                p.n_data.to_string(),
                row.m.to_string(),
                window.clone(),
                Num(row.constant.unwrap_or(f64::INFINITY)).to_string(),
                Num(row.min_singular_value).to_string(),
            ]);
        }
        out.csv("constants.csv", &t);
        let deficient: Vec<usize> = trunc
            .scan
            .iter()
            .filter(|r| r.constant.is_none())
            .map(|r| r.m)
            .collect();
        out.json(
            "summary.json",
            &json!({
                "n_data": p.n_data,
                "m": trunc.m,
                "constant": trunc.constant,
                "full_window_constant": full,
                "dominates_full": full.map(|c| trunc.constant >= c),
                "rank_deficient": deficient,
            }),
        );
        Ok(())
    }
}
