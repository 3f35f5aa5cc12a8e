use kdvb_core::noise::localised::{xi_cdf, KickProcess, KickSample, Window};
use kdvb_core::noise::{eval_eta, Growth, LocalisedNoiseSpec, MultiplicativeNoiseSpec};
use kdvb_core::quadrature::GaussLegendre;
use kdvb_core::rng::StreamKey;
use kdvb_core::{Field, TorusGrid};
use proptest::prelude::*;

const WINDOW: Window = Window {
    x1: 1.0,
    x2: 4.0,
    t1: 0.1,
    t2: 0.8,
};

fn spec() -> LocalisedNoiseSpec {
    LocalisedNoiseSpec::new(WINDOW, 1.0, 12, 50.0).unwrap()
}

fn draws(n: u64, mode: usize) -> Vec<f64> {
    let s = spec();
    let key = StreamKey::new(2024);
    (1..=n).map(|k| s.sample_kick(key, k).xi[mode]).collect()
}

#[test]
fn xi_has_zero_mean_and_the_raised_cosine_law() {
    let mut xi = draws(100_000, 0);
    let n = xi.len() as f64;
    let mean = xi.iter().sum::<f64>() / n;
    // Var ξ = 1/3 - 2/π² for the raised-cosine density.
    let sd = (1.0 / 3.0 - 2.0 / std::f64::consts::PI.powi(2)).sqrt();
    assert!(mean.abs() < 3.0 * sd / n.sqrt(), "mean {mean}");
    assert!(xi.iter().all(|v| v.abs() <= 1.0));
    xi.sort_by(f64::total_cmp);
    let ks = xi
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = xi_cdf(v);
            (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
        })
        .fold(0.0, f64::max);
    assert!(ks < 0.01, "KS distance {ks}");
}

#[test]
fn distinct_kicks_are_uncorrelated() {
    let a = draws(20_000, 2);
    let s = spec();
    let key = StreamKey::new(2024);
    let n = a.len() as f64;
    // Lag-one correlation in the kick index and correlation across modes.
    let var: f64 = a.iter().map(|v| v * v).sum::<f64>() / n;
    let lag: f64 = a.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / (n - 1.0) / var;
    let b: Vec<f64> = (1..=a.len() as u64).map(|k| s.sample_kick(key, k).xi[3]).collect();
    let cross: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / n / var;
    let bound = 3.0 / n.sqrt();
    assert!(lag.abs() < bound && cross.abs() < bound, "lag {lag}, cross {cross}");
}

#[test]
fn kick_norm_matches_dense_quadrature() {
    let s = spec();
    let sample = s.sample_kick(StreamKey::new(9), 1);
    let kick = s.kick(&sample);
    let (tn, tw) =
        GaussLegendre::new(12).composite(&(0..=20).map(|i| WINDOW.t1 + 0.035 * i as f64).collect::<Vec<_>>());
    let (xn, xw) = GaussLegendre::new(12).composite(&(0..=30).map(|i| WINDOW.x1 + 0.1 * i as f64).collect::<Vec<_>>());
    // Oracle: direct mode sum at each node.
    let basis = s.basis();
    let mut direct = 0.0;
    for (t, wt) in tn.iter().zip(&tw) {
        for (x, wx) in xn.iter().zip(&xw) {
            let v: f64 = (0..basis.len())
                .map(|i| s.coefficients()[i] * sample.xi[i] * basis.phi(i, *x, *t))
                .sum::<f64>()
                * s.cutoff().eval(*x, *t);
            direct += wt * wx * v * v;
        }
    }
    let g = TorusGrid::new(512).unwrap();
    let on_grid: f64 = tn
        .iter()
        .zip(&tw)
        .map(|(t, w)| w * kick.field(*t, &g).map_or(0.0, |f| f.l2_norm().powi(2)))
        .sum();
    assert!(direct > 0.0);
    assert!(((on_grid - direct) / direct).abs() < 1e-6, "{on_grid} vs {direct}");
}

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

fn growth() -> impl Strategy<Value = Growth> {
    prop_oneof![
        Just(Growth::Bounded),
        (0.05f64..0.95).prop_map(|rho| Growth::Sublinear { rho }),
        (0.0f64..0.99).prop_map(|gain| Growth::Linear { gain }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn kicks_vanish_outside_the_window(
        xi in prop::collection::vec(-1.0f64..1.0, 12),
        k in 1usize..4,
        tau in 0.0f64..1.0,
    ) {
        let s = spec();
        let samples: Vec<KickSample> = (0..4).map(|_| KickSample { xi: xi.clone() }).collect();
        let process = KickProcess::new(&s, &samples);
        let g = TorusGrid::new(64).unwrap();
        let eta = eval_eta(&process, (k - 1) as f64 + tau, &g);
        if !WINDOW.contains_time(tau) {
            prop_assert_eq!(eta.l2_norm(), 0.0);
        } else {
            for (j, v) in eta.to_physical().iter().enumerate() {
                if !WINDOW.contains_x(g.node(j)) {
                    prop_assert!(v.abs() < 1e-12);
                }
            }
            let direct = s.kick(&samples[k - 1]).field(tau, &g).unwrap_or_else(|| Field::zeros(&g));
            // Global time loses a few ulps when folded back to local time.
            prop_assert!(eta.max_coeff_diff(&direct) < 1e-9 * (1.0 + direct.l2_norm()));
        }
    }

    #[test]
    fn lipschitz_growth_and_right_inverse(
        mode in growth(),
        cu in coeffs(),
        cv in coeffs(),
        au in 0.0f64..20.0,
        av in 0.0f64..20.0,
    ) {
        let g = TorusGrid::new(32).unwrap();
        let spec = MultiplicativeNoiseSpec::new(mode, 0.8, 10, 6).unwrap();
        let c = spec.constants();
        let (u1, u2) = (random_field(&g, &cu, au), random_field(&g, &cv, av));
        let d = u1.sub(&u2).l2_norm();
        prop_assert!(spec.hs_distance(&u1, &u2) <= c.lipschitz * d * (1.0 + 1e-12) + 1e-15);
        prop_assert!(spec.hs_norm(&u1) <= spec.growth_bound(u1.l2_norm()) * (1.0 + 1e-12));
        let back = spec.g_apply(&u1, &spec.f_apply(&u1, &u2));
        let target = kdvb_core::EigenBasis::new(&g).synthesize(&kdvb_core::EigenBasis::new(&g).coords(&u2, 6));
        prop_assert!(back.max_coeff_diff(&target) <= 1e-12 * (1.0 + u2.l2_norm()));
    }
}
