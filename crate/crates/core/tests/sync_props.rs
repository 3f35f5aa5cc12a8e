use kdvb_core::dynamics::SolverConfig;
use kdvb_core::noise::{Growth, MultiplicativeNoiseSpec};
use kdvb_core::sync::{girsanov_shift, run_sync, NudgingConfig};
use kdvb_core::{Field, TorusGrid};
use proptest::prelude::*;

fn random_field(g: &TorusGrid, c: &[(f64, f64)], amp: f64) -> Field {
    let mut f = Field::constant(g, amp * c[0].0);
    for (k, &(a, b)) in c.iter().enumerate().skip(1) {
        f.add_mode(k, amp * a / k as f64, amp * b / k as f64);
    }
    f
}

fn coeffs() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 2..12)
}

fn forcing(g: &TorusGrid) -> Field {
    let mut h = Field::mode(g, 1, 0.0, 6.0);
    h.add_mode(2, 3.0, 0.0);
    h
}

#[test]
fn larger_observed_subspace_never_slows_synchronisation() {
    let g = TorusGrid::new(64).unwrap();
    let solver = SolverConfig::new(64, 1e-3);
    let h = forcing(&g);
    let pairs = [(3.0, 0.0), (1.0, -2.0), (0.5, 4.0)];
    for (i, &(a, b)) in pairs.iter().enumerate() {
        let mut u0 = Field::constant(&g, a);
        u0.add_mode(1, b, 1.0);
        u0.add_mode(3 + i, 0.5, -0.5);
        let v0 = Field::zeros(&g);
        let mut last = 0.0;
        for n in [1usize, 2, 4, 8, 16] {
            let ens = run_sync(&u0, &v0, &NudgingConfig::new(n), None, &h, 1.0, &solver, 1, 0, 20).unwrap();
            let fit = ens.exponential_fit().unwrap();
            assert!(
                fit.rate >= last * (1.0 - 1e-6),
                "pair {i}, N = {n}: rate {} < {last}",
                fit.rate
            );
            last = fit.rate;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn novikov_integrand_is_bounded(
        mode in prop_oneof![
            Just(Growth::Bounded),
            (0.05f64..0.95).prop_map(|rho| Growth::Sublinear { rho }),
            (0.0f64..0.99).prop_map(|gain| Growth::Linear { gain }),
        ],
        cu in coeffs(),
        cv in coeffs(),
        au in 0.0f64..10.0,
        av in 0.0f64..10.0,
        n in 1usize..8,
    ) {
        let g = TorusGrid::new(32).unwrap();
        let spec = MultiplicativeNoiseSpec::new(mode, 0.7, 12, 8).unwrap();
        let cfg = NudgingConfig::new(n);
        let (u, v) = (random_field(&g, &cu, au), random_field(&g, &cv, av));
        let shift = girsanov_shift(&u, &v, &cfg, &spec).unwrap();
        let lam = cfg.gain();
        let w = u.sub(&v).project(n).l2_norm();
        let bound = lam * spec.constants().f_sup * w;
        prop_assert!(shift.norm <= bound * (1.0 + 1e-12) + 1e-300);
    }
}
