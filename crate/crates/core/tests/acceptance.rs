//! Acceptance suite: one numbered check per criterion, each printing a
//! single PASS/FAIL line. Runs without the libtest harness so the lines
//! always reach the console.

use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Instant;

use semiheat::analysis::{classify, ratio_series, ClassifyOptions, Verdict};
use semiheat::intersections::{count_intersections, intersection_trace, IntersectOptions};
use semiheat::nonlinearity::{critical_exponents, estimate_q, eval_f_inverse_log, eval_log_f_transform, q_grid};
use semiheat::pde::{simulate, Grid, InitialData, RunRecord, SolverConfig};
use semiheat::rescaling::{build_rescaled, check_lambda_ratio, check_vt_bounds, g_g_pair, geometric_times, trusted_window};
use semiheat::steady::{
    explicit_singular_profile, picard_singular, shoot_regular, transform_to_radial, ExplicitKind, PicardOptions,
    ShootOptions,
};
use semiheat::Nonlinearity;

type Outcome = Result<String, String>;

fn nl(spec: &str) -> Nonlinearity {
    spec.parse().expect("built-in spec")
}

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Bump scenario on the unit ball, `k = 0`, `A (1 - r²)²` with `A = 10`.
struct Scenario {
    nl: Nonlinearity,
    run: RunRecord,
}

fn bump_run(spec: &str, cells: usize) -> Scenario {
    let f = nl(spec);
    let grid = Grid::new(1.0, cells, 5).unwrap();
    let (u0, _) = InitialData::Bump { a: 10.0, m: 2.0 }.sample(&f, &grid).unwrap();
    let cfg = SolverConfig { snapshot_df: 0.02, ..Default::default() };
    let run = simulate(&f, &grid, &cfg, &u0, 0.0, "bump:A=10,m=2").unwrap();
    Scenario { nl: f, run }
}

fn exp_run() -> &'static Scenario {
    static S: OnceLock<Scenario> = OnceLock::new();
    S.get_or_init(|| bump_run("exp", 4000))
}

fn power_run() -> &'static Scenario {
    static S: OnceLock<Scenario> = OnceLock::new();
    S.get_or_init(|| bump_run("power:p=3", 1000))
}

fn power_log_run() -> &'static Scenario {
    static S: OnceLock<Scenario> = OnceLock::new();
    S.get_or_init(|| bump_run("power_log:p=3,r1=1", 1000))
}

fn c1_exponents() -> Outcome {
    let e3 = critical_exponents(3).unwrap();
    let exact3 = e3.p_s == 5.0 && e3.q_s == 1.25;
    let jl_inf = (3..=10).all(|n| critical_exponents(n).unwrap().p_jl.is_infinite());
    let e11 = critical_exponents(11).unwrap();
    let conj = (e11.q_jl - e11.p_jl / (e11.p_jl - 1.0)).abs();
    check(
        exact3 && jl_inf && conj <= 1e-12,
        format!("p_S(3)={} q_S(3)={} p_JL(3..10)=inf:{jl_inf} conjugacy defect N=11 {conj:e}", e3.p_s, e3.q_s),
    )
}

fn c2_round_trip() -> Outcome {
    let mut worst: f64 = 0.0;
    for spec in ["power:p=2", "exp", "power_log:p=3,r1=1", "exp_power:r2=2"] {
        let f = nl(spec);
        for i in 0..25 {
            let u = 10f64.powf(6.0 * i as f64 / 24.0);
            let lv = eval_log_f_transform(&f, u, 1e-12).map_err(|e| format!("{spec} u={u}: {e}"))?;
            let back = eval_f_inverse_log(&f, lv, 1e-13).map_err(|e| format!("{spec} u={u}: {e}"))?;
            worst = worst.max((back - u).abs() / u);
        }
    }
    check(worst <= 1e-6, format!("worst relative error {worst:e} over 4 families x 25 points"))
}

fn c3_q_estimation() -> Outcome {
    let mut lines = vec![];
    let mut ok = true;
    let mut cases: Vec<(String, f64)> = vec![];
    for p in [2.0, 3.0, 5.0] {
        cases.push((format!("power:p={p}"), p / (p - 1.0)));
        cases.push((format!("power_log:p={p},r1=1"), p / (p - 1.0)));
    }
    for s in ["exp", "exp_power:r2=2", "iterexp:n=2", "iterexp:n=3"] {
        cases.push((s.to_string(), 1.0));
    }
    for (spec, want) in cases {
        let f = nl(&spec);
        let est = estimate_q(&f, &q_grid(&f, 1e8, 17), 1e-3).map_err(|e| format!("{spec}: {e}"))?;
        let err = (est.q - want).abs();
        ok &= err <= 1e-2;
        lines.push(format!("{spec}:{err:.1e}"));
    }
    check(ok, format!("|q - q_exact| {}", lines.join(" ")))
}

fn c4_degenerate_picard() -> Outcome {
    let mut parts = vec![];
    let mut ok = true;
    for (spec, q, n) in [("power:p=3", 1.5, 5), ("exp", 1.0, 5), ("exp", 1.0, 3)] {
        let st = picard_singular(&nl(spec), q, n, &PicardOptions::default()).map_err(|e| format!("{spec}: {e}"))?;
        let sup = st.x.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        ok &= sup <= 1e-10 && st.iterations <= 2;
        parts.push(format!("{spec} N={n}: |X|={sup:e} iters={}", st.iterations));
    }
    check(ok, parts.join("; "))
}

fn singular_power_log() -> &'static semiheat::steady::SingularTransform {
    static S: OnceLock<semiheat::steady::SingularTransform> = OnceLock::new();
    S.get_or_init(|| {
        let opts = PicardOptions { s_min: -60.0, s_max: -10.0, ds: 0.02, ..Default::default() };
        picard_singular(&nl("power_log:p=3,r1=1"), 1.5, 5, &opts).expect("power_log Picard converges")
    })
}

fn c5_nondegenerate_picard() -> Outcome {
    let exp_st = picard_singular(&nl("exp"), 1.0, 5, &PicardOptions::default()).map_err(|e| e.to_string())?;
    let mut parts = vec![];
    let mut ok = true;
    for (label, f, st) in [("exp", nl("exp"), &exp_st), ("power_log", nl("power_log:p=3,r1=1"), singular_power_log())] {
        let (a, b) = (st.s[0], st.s[st.s.len() - 1]);
        let quarter = 0.25 * (b - a);
        let res = st.ode_residual_on(&f, a + quarter, b - quarter).map_err(|e| e.to_string())?;
        let theta = st.theta();
        let decade = st.s.iter().take_while(|&&s| s <= a + std::f64::consts::LN_10).count();
        let monotone = theta[..decade].windows(2).all(|w| w[0].abs() <= w[1].abs());
        let last = theta[0].abs();
        let good = st.contraction_ratio < 1.0 && res <= 1e-3 && monotone && last <= 0.05;
        ok &= good;
        parts.push(format!(
            "{label}: ratio {:.3} residual {res:.1e} monotone {monotone} |theta(r_min)| {last:.4}",
            st.contraction_ratio
        ));
    }
    check(ok, parts.join("; "))
}

fn c6_scaling_law() -> Outcome {
    let f = nl("power:p=3");
    let r: Vec<f64> = (0..=500).map(|i| 5.0 * i as f64 / 500.0).collect();
    let big: Vec<f64> = r.iter().map(|x| 4.0 * x).collect();
    let opts = ShootOptions { outputs: big.clone(), ..Default::default() };
    let (phi1, _) = shoot_regular(&f, 5, 1.0, 20.0, &opts).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for alpha in [1.0, 4.0] {
        let opts = ShootOptions { outputs: r.clone(), ..Default::default() };
        let (phi, _) = shoot_regular(&f, 5, alpha, 5.0, &opts).map_err(|e| e.to_string())?;
        for &x in &r {
            let lhs = phi.eval(x).map_err(|e| e.to_string())?;
            let rhs = alpha * phi1.eval(alpha * x).map_err(|e| e.to_string())?;
            worst = worst.max((lhs - rhs).abs());
        }
    }
    check(worst <= 1e-5, format!("sup |Phi_a(r) - a Phi_1(a r)| = {worst:e} for a in {{1, 4}}"))
}

fn intersection_counts(f: &Nonlinearity, kind: ExplicitKind, n: u32, alpha: f64) -> Result<Vec<usize>, String> {
    let (phi, exit) = shoot_regular(f, n, alpha, 1e4, &ShootOptions::default()).map_err(|e| e.to_string())?;
    if let Some(e) = exit {
        return Err(format!("regular profile left the range at r = {}", e.r));
    }
    let grid: Vec<f64> = phi.r.iter().copied().filter(|&r| r > 0.0).collect();
    let star = explicit_singular_profile(kind, n, &grid).map_err(|e| e.to_string())?;
    let lo = grid[0];
    [1e2, 1e3, 1e4]
        .iter()
        .map(|&r_max| {
            count_intersections(&phi, &star, (lo, r_max), &IntersectOptions::default())
                .map(|rep| rep.count)
                .map_err(|e| e.to_string())
        })
        .collect()
}

fn c7_infinite_intersections() -> Outcome {
    let a = intersection_counts(&nl("exp"), ExplicitKind::Exp, 3, 0.0)?;
    let b = intersection_counts(&nl("power:p=3"), ExplicitKind::Power { p: 3.0 }, 5, 1.0)?;
    let grows = |c: &[usize]| c[0] >= 2 && c[1] > c[0] && c[2] > c[1];
    check(grows(&a) && grows(&b), format!("counts at r_max 1e2/1e3/1e4: exp N=3 {a:?}, u^3 N=5 {b:?}"))
}

fn stationarity_error(spec: &str, n: u32, cells: usize) -> Result<f64, String> {
    let f = nl(spec);
    let grid = Grid::new(1.0, cells, n).map_err(|e| e.to_string())?;
    let (u0, k) = InitialData::Steady { alpha: 1.0 }.sample(&f, &grid).map_err(|e| e.to_string())?;
    let cfg = SolverConfig { t_horizon: 1.0, snapshot_dt: 0.01, rtol: 1e-10, atol: 1e-12, ..Default::default() };
    let run = simulate(&f, &grid, &cfg, &u0, k.unwrap(), "steady:alpha=1").map_err(|e| e.to_string())?;
    Ok(run
        .snapshots
        .iter()
        .flat_map(|s| s.u.iter().zip(&u0).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max))
}

fn c8_stationarity_order() -> Outcome {
    let mut parts = vec![];
    let mut ok = true;
    for (spec, n) in [("exp", 3), ("power:p=3", 5)] {
        let e1 = stationarity_error(spec, n, 32)?;
        let e2 = stationarity_error(spec, n, 64)?;
        let factor = e1 / e2;
        ok &= factor >= 3.6;
        parts.push(format!("{spec} N={n}: {e1:.2e} -> {e2:.2e} factor {factor:.2} order {:.2}", factor.log2()));
    }
    check(ok, parts.join("; "))
}

fn c9_ode_comparison() -> Outcome {
    let mut parts = vec![];
    let mut ok = true;
    for (label, sc) in [("exp", exp_run()), ("u^3", power_run()), ("u^3 log", power_log_run())] {
        let s = &sc.run.snapshots;
        let Some(settle) = sc.run.settle_index() else {
            ok = false;
            parts.push(format!("{label}: argmax never settles"));
            continue;
        };
        let mut worst = f64::NEG_INFINITY;
        for i in settle..s.len() {
            for j in i + 1..s.len() {
                let excess = (s[i].f_of_m - s[j].f_of_m) / (s[j].t - s[i].t);
                worst = worst.max(excess);
            }
        }
        ok &= worst <= 1.05;
        parts.push(format!("{label}: max (F(M(t))-F(M(s)))/(s-t) = {worst:.4}"));
    }
    check(ok, parts.join("; "))
}

fn c10_type_one() -> Outcome {
    let mut parts = vec![];
    let mut ok = true;
    for (label, sc) in [("exp", exp_run()), ("u^3", power_run()), ("u^3 log", power_log_run())] {
        let rep = classify(&sc.run, &sc.nl, &ClassifyOptions::default());
        let (lo, hi) = (rep.ratio_min.unwrap_or(f64::NAN), rep.ratio_max.unwrap_or(f64::NAN));
        ok &= rep.verdict == Verdict::TypeI && lo >= 0.1 && hi <= 5.0;
        parts.push(format!("{label}: {:?} ratio [{lo:.3}, {hi:.3}]", rep.verdict));
    }
    let f = nl("exp");
    let times: Vec<f64> = (0..80).map(|i| 1.0 - 0.9f64.powi(i)).collect();
    let synth = RunRecord::synthetic_ode(&f, 1.0, &times).map_err(|e| e.to_string())?;
    let fit = synth.estimate_blowup_time().map_err(|e| e.to_string())?;
    let dev = ratio_series(&synth, fit.t_est).iter().map(|x| (x.1 - 1.0).abs()).fold(0.0, f64::max);
    ok &= dev <= 1e-6;
    parts.push(format!("synthetic ODE |ratio - 1| <= {dev:.1e}"));
    check(ok, parts.join("; "))
}

fn c11_intersection_boundedness() -> Outcome {
    let sc = exp_run();
    let st = picard_singular(&sc.nl, 1.0, 5, &PicardOptions::default()).map_err(|e| e.to_string())?;
    let r0 = st.s[st.s.len() - 1].exp();
    let hi = r0.min(sc.run.grid.radius);
    let r: Vec<f64> = st.s.iter().map(|s| s.exp()).collect();
    let ustar = transform_to_radial(&st, &sc.nl, &r).map_err(|e| e.to_string())?;
    let trace = intersection_trace(&sc.run, &ustar, (r[0], hi), &IntersectOptions::default()).map_err(|e| e.to_string())?;
    let settle = sc.run.settle_index().ok_or("argmax never settles")?;
    let first = trace.counts[settle];
    let max_after = trace.counts[settle..].iter().copied().max().unwrap_or(0);
    check(
        max_after <= first + 1,
        format!("count at settlement {first}, max afterwards {max_after}, final {}", trace.counts[trace.counts.len() - 1]),
    )
}

fn c12_bound_diagnostics() -> Outcome {
    let sc = exp_run();
    let run = &sc.run;
    let (t_lo, t_hi) = trusted_window(run);
    let times = geometric_times(run, 4.0, 5);
    let taus: Vec<f64> = (-20..=20).map(|i| i as f64 * 0.025).collect();
    let mut eps: f64 = 0.0;
    let mut min_v = f64::INFINITY;
    let mut origin_exact = true;
    let mut used = 0;
    for &t in &times {
        let l2 = run.f_of_m_at(t).map_err(|e| e.to_string())?;
        if t + 0.5 * l2 > t_hi || t - 0.5 * l2 < t_lo {
            continue;
        }
        used += 1;
        eps = eps.max(check_lambda_ratio(run, t, &taus).map_err(|e| e.to_string())?.worst_eps);
        let rp = build_rescaled(run, &sc.nl, 1.0, t, (1.0, 32), (0.25, 8)).map_err(|e| e.to_string())?;
        origin_exact &= rp.v_origin() == 1.0;
        min_v = min_v.min(check_vt_bounds(&rp, 1.0, 0.25).map_err(|e| e.to_string())?.min_v);
    }
    let settle = run.settle_index().ok_or("argmax never settles")?;
    let end = run.trusted_end();
    let late = settle.max(end.saturating_sub((end - settle) / 3));
    let mut excess: f64 = 0.0;
    for i in late..end {
        excess = excess.max(run.gradient_excess(&sc.nl, i).map_err(|e| e.to_string())?.0);
    }
    check(
        used >= 2 && eps <= 0.05 && origin_exact && min_v >= 0.6 && excess <= 0.02,
        format!("{used} base times: lambda-ratio eps {eps:.2e}, v(0,0)=1 exact {origin_exact}, min v {min_v:.3}, gradient excess {excess:.2e}"),
    )
}

fn anchor_values(sc: &Scenario, q: f64) -> Result<Vec<f64>, String> {
    let times = geometric_times(&sc.run, 4.0, 3);
    times
        .iter()
        .map(|&t| {
            build_rescaled(&sc.run, &sc.nl, q, t, (1.0, 8), (0.0, 1))
                .map(|rp| rp.w_origin())
                .map_err(|e| e.to_string())
        })
        .collect()
}

fn c13_anchor() -> Outcome {
    let target = g_g_pair(1.5).unwrap().anchor();
    let wp = anchor_values(power_run(), 1.5)?;
    let we = anchor_values(exp_run(), 1.0)?;
    let dp = wp.iter().map(|w| (w - target).abs()).fold(0.0, f64::max);
    let de = we.iter().map(|w| w.abs()).fold(0.0, f64::max);
    check(
        wp.len() == 3 && we.len() == 3 && dp <= 0.05 && de <= 0.05,
        format!("u^3: w(0,0) {wp:.6?} vs {target:.6}; exp: max |w(0,0)| {de:.2e}"),
    )
}

fn c14_determinism() -> Outcome {
    let again = bump_run("exp", 4000);
    let same_run = again.run.snapshots_csv() == exp_run().run.snapshots_csv();
    let a = singular_power_log().to_csv();
    let opts = PicardOptions { s_min: -60.0, s_max: -10.0, ds: 0.02, ..Default::default() };
    let b = picard_singular(&nl("power_log:p=3,r1=1"), 1.5, 5, &opts).map_err(|e| e.to_string())?.to_csv();
    check(same_run && a == b, format!("snapshots.csv identical {same_run}, singular.csv identical {}", a == b))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 14] = [
        ("exponent exactness", c1_exponents),
        ("transform round trip", c2_round_trip),
        ("q estimation", c3_q_estimation),
        ("scale-invariant Picard fixed point", c4_degenerate_picard),
        ("non-invariant singular steady state", c5_nondegenerate_picard),
        ("steady-state scaling law", c6_scaling_law),
        ("growing intersection counts", c7_infinite_intersections),
        ("PDE stationarity and order", c8_stationarity_order),
        ("ODE comparison inequality", c9_ode_comparison),
        ("type-I classification", c10_type_one),
        ("bounded intersection trace", c11_intersection_boundedness),
        ("rescaled bound diagnostics", c12_bound_diagnostics),
        ("rescaled profile anchor", c13_anchor),
        ("determinism", c14_determinism),
    ];
    // The shared blow-up scenarios are independent; build them concurrently.
    std::thread::scope(|s| {
        s.spawn(exp_run);
        s.spawn(power_run);
        s.spawn(power_log_run);
        s.spawn(singular_power_log);
    });
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {:>2} PASS {name} ({secs:.1}s): {d}", i + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name} ({secs:.1}s): {d}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
