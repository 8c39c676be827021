use proptest::prelude::*;

use semiheat::intersections::{count_intersections, IntersectOptions};
use semiheat::nonlinearity::{eval_f_inverse_log, eval_log_f_transform, estimate_q, q_grid};
use semiheat::pde::{simulate, Grid, InitialData, SolverConfig};
use semiheat::rescaling::g_g_pair;
use semiheat::steady::{picard_singular, shoot_regular, PicardOperator, PicardOptions, RadialProfile, ShootOptions};
use semiheat::Nonlinearity;

fn builtin() -> impl Strategy<Value = String> {
    prop_oneof![
        (1.5f64..6.0).prop_map(|p| format!("power:p={p}")),
        (1.5f64..6.0, 0.5f64..2.0).prop_map(|(p, r1)| format!("power_log:p={p},r1={r1}")),
        Just("exp".to_string()),
        (1.0f64..3.0).prop_map(|r2| format!("exp_power:r2={r2}")),
    ]
}

/// Cosine series on `[0, 1]`, with its derivative.
fn cosine_profile(coef: &[f64], shift: f64) -> RadialProfile {
    let r: Vec<f64> = (0..=400).map(|i| i as f64 / 400.0).collect();
    let series = |x: f64| -> (f64, f64) {
        coef.iter().enumerate().fold((shift, 0.0), |(v, d), (k, c)| {
            let w = (k + 1) as f64 * std::f64::consts::PI;
            (v + c * (w * x).cos(), d - c * w * (w * x).sin())
        })
    };
    let (v, d): (Vec<f64>, Vec<f64>) = r.iter().map(|&x| series(x)).unzip();
    RadialProfile::new(r, v, d, 3, None).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn transform_decreases_and_inverts(spec in builtin(), a in 0.0f64..6.0, gap in 0.01f64..1.0) {
        let nl: Nonlinearity = spec.parse().unwrap();
        let u1 = 10f64.powf(a);
        let u2 = u1 * (1.0 + gap);
        let f1 = eval_log_f_transform(&nl, u1, 1e-12).unwrap();
        let f2 = eval_log_f_transform(&nl, u2, 1e-12).unwrap();
        prop_assert!(f1 > f2, "{spec}: log F({u1}) = {f1} vs log F({u2}) = {f2}");
        let back = eval_f_inverse_log(&nl, f1, 1e-12).unwrap();
        prop_assert!(((back - u1) / u1).abs() < 1e-6, "{spec}: {u1} -> {back}");
    }

    #[test]
    fn q_is_at_least_one(spec in builtin()) {
        let nl: Nonlinearity = spec.parse().unwrap();
        let q = match nl.q_analytic() {
            Some(q) => q,
            None => estimate_q(&nl, &q_grid(&nl, 1e8, 17), 1e-3).unwrap().q,
        };
        prop_assert!(q >= 1.0 - 1e-9, "{spec}: q = {q}");
    }

    #[test]
    fn g_pair_identities(q in 1.0f64..4.0, eta in 0.05f64..20.0) {
        let g = g_g_pair(q).unwrap();
        let back = g.big_g_inv(g.big_g(eta));
        prop_assert!((back - eta).abs() <= 1e-10 * eta.max(1.0));
        // G' = -1/g
        let d = 1e-5 * eta;
        let slope = (g.big_g(eta + d) - g.big_g(eta - d)) / (2.0 * d);
        prop_assert!((slope * g.g(eta) + 1.0).abs() < 1e-6, "q={q} eta={eta} slope*g={}", slope * g.g(eta));
        prop_assert!((g.log_derivative(eta) - slope / g.big_g(eta)).abs() < 1e-6 * g.log_derivative(eta).abs());
    }

    #[test]
    fn intersection_count_is_symmetric_and_monotone(
        ca in proptest::collection::vec(-1.0f64..1.0, 1..6),
        cb in proptest::collection::vec(-1.0f64..1.0, 1..6),
        shift in -0.5f64..0.5,
        b in 0.2f64..0.6,
        c in 0.6f64..1.0,
    ) {
        let pa = cosine_profile(&ca, shift);
        let pb = cosine_profile(&cb, 0.0);
        let opts = IntersectOptions::default();
        let ab = count_intersections(&pa, &pb, (0.0, c), &opts).unwrap();
        let ba = count_intersections(&pb, &pa, (0.0, c), &opts).unwrap();
        prop_assert_eq!(ab.count, ba.count);
        prop_assert_eq!(ab.count, ab.zero_locations.len());
        prop_assert!(ab.zero_locations.windows(2).all(|w| w[1] > w[0]));
        let short = count_intersections(&pa, &pb, (0.0, b), &opts).unwrap();
        prop_assert!(short.count <= ab.count);
    }

    #[test]
    fn shooting_energy_inequality(alpha in 0.1f64..3.0, n in 1u32..10, cubic: bool) {
        let (nl, prim): (Nonlinearity, fn(f64) -> f64) = if cubic {
            ("power:p=3".parse().unwrap(), |u| u.powi(4) / 4.0)
        } else {
            ("exp".parse().unwrap(), f64::exp)
        };
        let (p, _) = shoot_regular(&nl, n, alpha, 2.0, &ShootOptions::default()).unwrap();
        for (v, d) in p.values.iter().zip(&p.derivative) {
            let lhs = 0.5 * d * d;
            let rhs = prim(alpha) - prim(*v);
            prop_assert!(lhs <= rhs + 1e-9 * prim(alpha).abs().max(1.0), "N={n} alpha={alpha}: {lhs} > {rhs}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    /// Small exp runs stay nonnegative, peak at the origin, and never outrun
    /// the space-free ODE `M' = e^M`.
    #[test]
    fn pde_positivity_and_ode_comparison(a in 0.5f64..2.5, m in 1.0f64..3.0, n in 1u32..6) {
        let nl: Nonlinearity = "exp".parse().unwrap();
        let grid = Grid::new(1.0, 48, n).unwrap();
        let (u0, _) = InitialData::Bump { a, m }.sample(&nl, &grid).unwrap();
        let cfg = SolverConfig { t_horizon: 0.05, snapshot_dt: 0.005, ..Default::default() };
        let run = simulate(&nl, &grid, &cfg, &u0, 0.0, "bump").unwrap();
        let m0 = run.snapshots[0].max_value;
        for s in &run.snapshots {
            let lo = s.u.iter().copied().fold(f64::INFINITY, f64::min);
            prop_assert!(lo >= -1e-9 * s.max_value, "min {lo} at t={}", s.t);
            prop_assert_eq!(s.argmax_r, 0.0);
            let ode = -((-m0).exp() - s.t).ln();
            prop_assert!(s.max_value <= ode + 1e-6, "t={}: M={} ode={ode}", s.t, s.max_value);
        }
    }
}

#[test]
fn picard_fixed_point_is_stable_under_one_more_application() {
    let nl: Nonlinearity = "power_log:p=3,r1=1".parse().unwrap();
    let opts = PicardOptions::default();
    let st = picard_singular(&nl, 1.5, 5, &opts).unwrap();
    let op = PicardOperator::new(&nl, 1.5, 5, &opts).unwrap();
    let (x, y) = op.apply(&st.x, &st.x_prime).unwrap();
    let dx = x.iter().zip(&st.x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let dy = y.iter().zip(&st.x_prime).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(dx + dy <= 2.0 * opts.tol, "{dx} + {dy}");
}
