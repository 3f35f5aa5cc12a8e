use kdvb_core::control::{reference_trajectory, ControlConfig, ControlProblem, ControlProblemSpec, Squeezer};
use kdvb_core::dynamics::{SolverConfig, Trajectory};
use kdvb_core::noise::{LocalisedNoiseSpec, Window};
use kdvb_core::source::Zero;
use kdvb_core::{EigenBasis, Field, TorusGrid};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn noise() -> LocalisedNoiseSpec {
    let w = Window {
        x1: 0.5,
        x2: 5.5,
        t1: 0.05,
        t2: 0.95,
    };
    LocalisedNoiseSpec::new(w, 1.0, 32, 1.0).unwrap()
}

fn reference(g: &TorusGrid) -> (Trajectory, SolverConfig) {
    let solver = SolverConfig::new(g.n_points(), 1e-2);
    let mut uhat0 = Field::mode(g, 1, 0.5, 0.2);
    uhat0.add_mode(2, -0.3, 0.1);
    (reference_trajectory(&uhat0, &Zero, 1.0, &solver).unwrap(), solver)
}

fn initial(g: &TorusGrid) -> Field {
    let mut v0 = Field::constant(g, 0.2);
    v0.add_mode(1, 0.3, 0.7);
    v0.add_mode(2, -0.4, 0.1);
    v0.add_mode(5, 0.05, -0.05);
    v0
}

#[test]
fn minimiser_matches_dense_quadratic_oracle() {
    let g = TorusGrid::new(32).unwrap();
    let (uhat, solver) = reference(&g);
    let nz = noise();
    let p = ControlProblem::new(ControlProblemSpec {
        config: ControlConfig::default(),
        noise: &nz,
        uhat: &uhat,
        horizon: 1.0,
        solver,
    })
    .unwrap();
    let v0 = initial(&g);
    let m = p.spec().config.m;
    let unit = |i: usize| {
        let mut e = vec![0.0; m];
        e[i] = 1.0;
        e
    };
    let j = |z: &[f64]| p.cost(&v0, z).unwrap();
    let j0 = j(&vec![0.0; m]);
    let ji: Vec<f64> = (0..m).map(|i| j(&unit(i))).collect();
    // The cost is exactly quadratic, so polarisation and central
    // differences with unit steps recover Hessian and gradient.
    let h = DMatrix::from_fn(m, m, |a, b| {
        let mut e = unit(a);
        e[b] += 1.0;
        let jab = j(&e);
        if a == b {
            jab - 2.0 * ji[a] + j0
        } else {
            jab - ji[a] - ji[b] + j0
        }
    });
    let grad = DVector::from_fn(m, |i, _| {
        let mut minus = vec![0.0; m];
        minus[i] = -1.0;
        0.5 * (ji[i] - j(&minus))
    });
    let oracle = h.lu().solve(&(-grad)).unwrap();
    let sol = p.solve(&v0).unwrap();
    let zeta = DVector::from_column_slice(&sol.zeta);
    let err = (&zeta - &oracle).norm() / oracle.norm();
    assert!(err < 1e-8, "relative error {err}");
}

#[test]
fn contraction_does_not_degrade_with_more_targets() {
    let g = TorusGrid::new(32).unwrap();
    let solver = SolverConfig::new(32, 1e-2);
    let nz = noise();
    let uhat0 = Field::mode(&g, 1, 0.5, 0.2);
    let v0 = initial(&g).scale(1e-2);
    let mut last = f64::INFINITY;
    for n in [1usize, 2, 4, 8] {
        let cfg = ControlConfig {
            n_target: n,
            ..ControlConfig::default()
        };
        let q = Squeezer::new(&uhat0, &Zero, &nz, cfg, 1.0, solver.clone())
            .unwrap()
            .contraction(&v0)
            .unwrap();
        assert!(
            q.q_measured <= last * (1.0 + 1e-9),
            "N = {n}: {} > {last}",
            q.q_measured
        );
        last = q.q_measured;
    }
}

fn field(g: &TorusGrid, c: &[f64]) -> Field {
    EigenBasis::new(g).synthesize(c)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn control_map_is_linear(
        a in prop::collection::vec(-1.0f64..1.0, 16),
        b in prop::collection::vec(-1.0f64..1.0, 16),
        alpha in -2.0f64..2.0,
    ) {
        let g = TorusGrid::new(32).unwrap();
        let (uhat, solver) = reference(&g);
        let nz = noise();
        let p = ControlProblem::new(ControlProblemSpec {
            config: ControlConfig::default(),
            noise: &nz,
            uhat: &uhat,
            horizon: 1.0,
            solver,
        })
        .unwrap();
        let (va, vb) = (field(&g, &a), field(&g, &b));
        let za = p.solve(&va).unwrap().zeta;
        let zb = p.solve(&vb).unwrap().zeta;
        let zc = p.solve(&va.scale(alpha).add(&vb)).unwrap().zeta;
        let scale = 1.0 + zc.iter().map(|z| z.abs()).fold(0.0, f64::max);
        for i in 0..zc.len() {
            prop_assert!((zc[i] - alpha * za[i] - zb[i]).abs() <= 1e-10 * scale);
        }
        let ups = p.upsilon(16).unwrap();
        let via = p.apply_upsilon(&ups, &va);
        for i in 0..za.len() {
            prop_assert!((via[i] - za[i]).abs() <= 1e-10 * scale);
        }
    }
}
