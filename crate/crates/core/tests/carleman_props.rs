use kdvb_core::carleman::{backward_to_zero, CarlemanWeights, ObservabilityProblem};
use kdvb_core::dynamics::{run_recorded, solve_adjoint, LinearisedDrift, SolverConfig};
use kdvb_core::source::Zero;
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
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 2..8)
}

/// `sup_t ‖y‖ + (∫‖y‖₁²)^{1/2}` over a recorded trajectory.
fn x0_norm(times: &[f64], states: &[Field]) -> f64 {
    let sup = states.iter().map(|y| y.l2_norm()).fold(0.0, f64::max);
    let h1: Vec<f64> = states.iter().map(|y| y.h1_norm().powi(2)).collect();
    let integral: f64 = times
        .windows(2)
        .zip(h1.windows(2))
        .map(|(t, h)| 0.5 * (t[1] - t[0]) * (h[0] + h[1]))
        .sum();
    sup + integral.sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn weights_are_valid_for_any_window(l1 in 0.2f64..5.0, width in 0.2f64..1.0, horizon in 0.2f64..3.0) {
        let l2 = (l1 + width).min(6.1);
        let w = CarlemanWeights::new(l1, l2, horizon).unwrap();
        prop_assert!(w.validate().is_ok());
        prop_assert!(w.ratio() < 1.0);
        prop_assert!((w.xi(0.5 * horizon) - 4.0 / (horizon * horizon)).abs() < 1e-12 / (horizon * horizon));
        for t in [0.05, 0.3, 0.5, 0.9].map(|s| s * horizon) {
            prop_assert!(2.0 * w.phi_hat(t) < 3.0 * w.phi_check(t));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn observation_maps_are_linear(cv in coeffs(), cw in coeffs(), ca in coeffs(), alpha in -3.0f64..3.0) {
        let g = TorusGrid::new(32).unwrap();
        let a = random_field(&g, &ca, 1.0);
        let b = Field::constant(&g, 0.5);
        let prob = ObservabilityProblem {
            n_data: 4,
            a: &a,
            b: &b,
            window: (1.0, 2.0),
            horizon: 1.0,
            solver: SolverConfig::new(32, 1e-2),
        };
        let (v, w) = (random_field(&g, &cv, 1.0), random_field(&g, &cw, 1.0));
        let combo = v.scale(alpha).add(&w);
        let l0 = |f: &Field| backward_to_zero(&prob, f).unwrap();
        let lhs = l0(&combo);
        let rhs = l0(&v).scale(alpha).add(&l0(&w));
        prop_assert!(lhs.max_coeff_diff(&rhs) <= 1e-10 * (1.0 + rhs.l2_norm()));
        let times = [0.1, 0.4, 0.7];
        let lw = |f: &Field| -> Vec<f64> {
            let traj = solve_adjoint(f, &a, &b, &Zero, 1.0, &prob.solver, &times).unwrap();
            traj.states.iter().flat_map(|s| [1.1, 1.5, 1.9].map(|x| s.eval_at(x))).collect()
        };
        let (oc, ov, ow) = (lw(&combo), lw(&v), lw(&w));
        for i in 0..oc.len() {
            prop_assert!((oc[i] - alpha * ov[i] - ow[i]).abs() <= 1e-10 * (1.0 + oc[i].abs()));
        }
    }

    // ‖y‖_{X₀} / (‖y₀‖ + ‖h‖_{L²(D_T)}) for the linearisation `y_t + Ay + (ū y)_x = h`.
    #[test]
    fn linearised_solution_map_is_bounded(cu in coeffs(), cy in coeffs(), ch in coeffs(), amp in 0.1f64..2.0) {
        let mut ratios = Vec::new();
        for n in [32usize, 64] {
            let g = TorusGrid::new(n).unwrap();
            let (ubar, y0, h) = (random_field(&g, &cu, amp), random_field(&g, &cy, 1.0), random_field(&g, &ch, 1.0));
            let drift = LinearisedDrift { ubar: &ubar, source: &h, dealias: true };
            let traj = run_recorded(&y0, 0.0, 1.0, &SolverConfig::new(n, 5e-3), &drift, 1).unwrap();
            ratios.push(x0_norm(&traj.times, &traj.states) / (y0.l2_norm() + h.l2_norm()));
        }
        prop_assert!(ratios[0].is_finite() && ratios[0] < 10.0);
        prop_assert!((ratios[0] - ratios[1]).abs() <= 1e-3 * ratios[1]);
    }
}
