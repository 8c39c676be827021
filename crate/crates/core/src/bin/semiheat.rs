use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use semiheat::analysis::{classify, BlowupReport};
use semiheat::config::ExperimentConfig;
use semiheat::intersections::{count_intersections, intersection_trace, IntersectOptions};
use semiheat::io::{self, num, CsvTable};
use semiheat::nonlinearity::{critical_exponents, estimate_q, q_grid};
use semiheat::pde::{simulate, RunRecord};
use semiheat::rescaling::{build_rescaled, check_lambda_ratio, check_vt_bounds, geometric_times, trusted_window};
use semiheat::steady::{picard_singular_auto, shoot_regular, transform_to_radial, PicardOptions, RadialProfile, ShootOptions};
use semiheat::{Error, Nonlinearity, Result};

/// Environment variable naming the root for relative output paths.
const OUT_ENV: &str = "SEMIHEAT_OUT";

#[derive(Parser)]
#[command(name = "semiheat", version, about = "Radial blow-up laboratory for u_t = Δu + f(u)")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print p_S, p_JL, q_S, q_JL for dimension N.
    Exponents { n: u32 },
    /// Regular steady state by shooting from the origin.
    Steady {
        #[arg(long)]
        nl: String,
        #[arg(long)]
        n: u32,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        r_max: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Singular steady state by Picard iteration.
    Singular {
        #[arg(long)]
        nl: String,
        #[arg(long)]
        n: u32,
        /// Defaults to the family's exponent, else a numerical estimate.
        #[arg(long)]
        q: Option<f64>,
        #[arg(long, default_value_t = -12.0, allow_negative_numbers = true)]
        s_min: f64,
        #[arg(long, default_value_t = -2.0, allow_negative_numbers = true)]
        s_max: f64,
        #[arg(long, default_value_t = 0.01)]
        ds: f64,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        /// Output directory for singular.csv and profile.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Count sign changes of the difference of two profile CSVs.
    Intersect {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        lo: f64,
        #[arg(long)]
        hi: f64,
    },
    /// Run the PDE for a configuration file.
    Simulate {
        config: PathBuf,
        /// Overrides as key=value, applied in order.
        #[arg(long = "set")]
        set: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify a finished run directory.
    Classify { run: PathBuf },
    /// Run the cartesian product of parameter lists concurrently.
    Sweep {
        config: PathBuf,
        /// key=v1,v2,...
        #[arg(long = "param", required = true)]
        params: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn resolve(p: &Path) -> PathBuf {
    if p.is_absolute() {
        return p.to_path_buf();
    }
    match std::env::var_os(OUT_ENV) {
        Some(root) => Path::new(&root).join(p),
        None => p.to_path_buf(),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    io::write_atomic(path, text.as_bytes())
}

/// Builds `dir` under a temporary sibling holding a `PARTIAL` marker, and
/// renames it into place once `fill` succeeds.
fn write_dir(dir: &Path, fill: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let name = dir.file_name().ok_or_else(|| Error::Spec(format!("bad output directory {}", dir.display())))?;
    let parent = dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(parent)?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(".partial");
    let tmp = parent.join(tmp_name);
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir(&tmp)?;
    fs::write(tmp.join("PARTIAL"), b"")?;
    fill(&tmp)?;
    fs::remove_file(tmp.join("PARTIAL"))?;
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::rename(&tmp, dir)?;
    Ok(())
}

fn fmt6(x: f64) -> String {
    if x.is_infinite() {
        return "inf".into();
    }
    let s = format!("{:.*e}", 5, x);
    let v: f64 = s.parse().expect("formatted float");
    let out = num(v);
    out.strip_suffix(".0").map_or(out.clone(), str::to_string)
}

fn cmd_exponents(n: u32) -> Result<()> {
    let e = critical_exponents(n)?;
    println!("p_S={} p_JL={} q_S={} q_JL={}", fmt6(e.p_s), fmt6(e.p_jl), fmt6(e.q_s), fmt6(e.q_jl));
    Ok(())
}

fn q_for(nl: &Nonlinearity, q: Option<f64>) -> Result<f64> {
    if let Some(q) = q.or(nl.q_analytic()) {
        return Ok(q);
    }
    let est = estimate_q(nl, &q_grid(nl, 1e8, 17), 1e-3)?;
    Ok(est.q)
}

fn cmd_steady(nl: &str, n: u32, alpha: f64, r_max: f64, out: Option<PathBuf>) -> Result<()> {
    let nl: Nonlinearity = nl.parse()?;
    let (p, exit) = shoot_regular(&nl, n, alpha, r_max, &ShootOptions::default())?;
    let csv = p.to_csv();
    match out {
        Some(o) => write_file(&resolve(&o), &csv)?,
        None => print!("{csv}"),
    }
    if let Some(e) = exit {
        eprintln!("note: profile leaves the admissible range at r={} value={}", num(e.r), num(e.value));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_singular(nl: &str, n: u32, q: Option<f64>, s_min: f64, s_max: f64, ds: f64, tol: f64, out: Option<PathBuf>) -> Result<()> {
    let nl: Nonlinearity = nl.parse()?;
    let q = q_for(&nl, q)?;
    let opts = PicardOptions { s_min, s_max, ds, tol, ..Default::default() };
    let st = picard_singular_auto(&nl, q, n, &opts)?;
    let r: Vec<f64> = st.s.iter().map(|s| s.exp()).collect();
    let profile = transform_to_radial(&st, &nl, &r)?;
    if let Some(o) = out {
        let dir = resolve(&o);
        write_dir(&dir, |d| {
            io::write_atomic(&d.join("singular.csv"), st.to_csv().as_bytes())?;
            io::write_atomic(&d.join("profile.csv"), profile.to_csv().as_bytes())
        })?;
    }
    let summary = json!({
        "nonlinearity": nl.to_string(),
        "q": st.q,
        "n": st.n,
        "window": [st.s[0], st.s[st.s.len() - 1]],
        "iterations": st.iterations,
        "contraction_ratio": st.contraction_ratio,
        "residual": st.residual,
        "ode_residual": st.ode_residual,
        "tail_integrand": st.tail_integrand,
        "boundary_defect": st.boundary_defect,
        "boundary_ok": st.boundary_ok,
        "theta_at_s_min": st.theta()[0],
    });
    println!("{}", serde_json::to_string(&summary).expect("json"));
    Ok(())
}

fn cmd_intersect(a: &Path, b: &Path, lo: f64, hi: f64) -> Result<()> {
    let pa = RadialProfile::from_csv(&fs::read_to_string(a)?)?;
    let pb = RadialProfile::from_csv(&fs::read_to_string(b)?)?;
    let rep = count_intersections(&pa, &pb, (lo, hi), &IntersectOptions::default())?;
    println!("{}", serde_json::to_string(&rep).expect("json"));
    Ok(())
}

/// Runs one configuration into `dir` and returns the classification.
fn run_config(cfg: &ExperimentConfig, dir: &Path) -> Result<(RunRecord, Option<BlowupReport>)> {
    let nl = cfg.nonlinearity()?;
    let grid = cfg.grid()?;
    let (u0, natural_k) = cfg.initial_data()?.sample(&nl, &grid)?;
    let k = cfg.k.or(natural_k).unwrap_or(u0[u0.len() - 1]);
    let run = simulate(&nl, &grid, &cfg.solver, &u0, k, &cfg.initial)?;
    let report = cfg.analysis.classify.then(|| classify(&run, &nl, &cfg.classify_options()));
    write_dir(dir, |d| {
        io::write_atomic(&d.join("config.ini"), cfg.render().as_bytes())?;
        run.write(d)?;
        let mut summary = json!({
            "termination": run.termination,
            "final_time": run.last_time(),
            "resolution_exhausted_at": run.resolution_exhausted_at,
            "snapshots": run.snapshots.len(),
        });
        match run.estimate_blowup_time() {
            Ok(fit) => summary["blowup_fit"] = serde_json::to_value(fit).expect("json"),
            Err(e) => summary["blowup_fit_error"] = json!(e.to_string()),
        }
        match run.check_gradient_bound(&nl) {
            Ok(g) => summary["gradient_bound"] = serde_json::to_value(g).expect("json"),
            Err(e) => summary["gradient_bound_error"] = json!(e.to_string()),
        }
        if let Some(rep) = &report {
            summary["verdict"] = serde_json::to_value(rep.verdict).expect("json");
            summary["t_est"] = json!(rep.t_est);
            io::write_atomic(&d.join("report.json"), rep.to_json().as_bytes())?;
            io::write_atomic(&d.join("series.csv"), rep.series_csv().as_bytes())?;
        }
        if cfg.analysis.rescaling {
            summary["rescaling"] = rescaling_diagnostics(&run, &nl);
        }
        if cfg.analysis.intersections {
            match intersection_diagnostics(&run, &nl) {
                Ok(csv) => io::write_atomic(&d.join("intersections.csv"), csv.as_bytes())?,
                Err(e) => summary["intersections_error"] = json!(e.to_string()),
            }
        }
        let text = serde_json::to_string_pretty(&summary).expect("json");
        io::write_atomic(&d.join("summary.json"), text.as_bytes())
    })?;
    Ok((run, report))
}

fn rescaling_diagnostics(run: &RunRecord, nl: &Nonlinearity) -> serde_json::Value {
    let q = match q_for(nl, None) {
        Ok(q) => q,
        Err(e) => return json!({ "error": e.to_string() }),
    };
    let mut out = vec![];
    let (t_lo, t_hi) = trusted_window(run);
    for t in geometric_times(run, 4.0, 4) {
        let l2 = run.f_of_m_at(t).unwrap_or(f64::NAN);
        let mut entry = json!({ "t": t, "lambda_sq": l2 });
        if t - 0.5 * l2 >= t_lo && t + 0.5 * l2 <= t_hi {
            let taus: Vec<f64> = (-10..=10).map(|i| i as f64 * 0.05).collect();
            if let Ok(r) = check_lambda_ratio(run, t, &taus) {
                entry["lambda_ratio_eps"] = json!(r.worst_eps);
            }
        }
        match build_rescaled(run, nl, q, t, (1.0, 32), (0.25, 8)) {
            Ok(rp) => {
                entry["w_origin"] = json!(rp.w_origin());
                if let Ok(b) = check_vt_bounds(&rp, 1.0, 0.25) {
                    entry["vt_bounds"] = serde_json::to_value(b).expect("json");
                }
            }
            Err(e) => entry["error"] = json!(e.to_string()),
        }
        out.push(entry);
    }
    json!({ "q": q, "samples": out })
}

fn intersection_diagnostics(run: &RunRecord, nl: &Nonlinearity) -> Result<String> {
    let q = q_for(nl, None)?;
    let st = picard_singular_auto(nl, q, run.grid.n, &PicardOptions::default())?;
    let r0 = st.s[st.s.len() - 1].exp();
    let lo = st.s[0].exp();
    let hi = r0.min(run.grid.radius);
    let r: Vec<f64> = st.s.iter().map(|s| s.exp()).filter(|&x| x <= hi).collect();
    let ustar = transform_to_radial(&st, nl, &r)?;
    let trace = intersection_trace(run, &ustar, (lo, r[r.len() - 1]), &IntersectOptions::default())?;
    Ok(trace.to_csv())
}

fn load_config(path: &Path, set: &[String]) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::parse(&fs::read_to_string(path)?)?;
    for kv in set {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Spec(format!("--set expects key=value, got '{kv}'")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

fn cmd_simulate(config: &Path, set: &[String], out: Option<PathBuf>) -> Result<()> {
    let cfg = load_config(config, set)?;
    let dir = out
        .or_else(|| cfg.output.as_ref().map(PathBuf::from))
        .ok_or_else(|| Error::Spec("no output directory: pass --out or set [output] dir".into()))?;
    let dir = resolve(&dir);
    let (run, report) = run_config(&cfg, &dir)?;
    let line = json!({
        "dir": dir.display().to_string(),
        "termination": run.termination,
        "final_time": run.last_time(),
        "verdict": report.as_ref().map(|r| r.verdict),
        "t_est": report.as_ref().and_then(|r| r.t_est),
    });
    println!("{line}");
    Ok(())
}

fn cmd_classify(dir: &Path) -> Result<()> {
    let run = RunRecord::load(dir)?;
    let opts = match fs::read_to_string(dir.join("config.ini")) {
        Ok(text) => ExperimentConfig::parse(&text)?.classify_options(),
        Err(_) => Default::default(),
    };
    let rep = classify(&run, &run.nonlinearity, &opts);
    println!("{}", rep.to_json());
    Ok(())
}

fn cmd_sweep(config: &Path, params: &[String], out: &Path) -> Result<()> {
    let base = load_config(config, &[])?;
    let mut axes: Vec<(String, Vec<String>)> = vec![];
    for p in params {
        let (k, vs) = p.split_once('=').ok_or_else(|| Error::Spec(format!("--param expects key=v1,v2, got '{p}'")))?;
        let values: Vec<String> = vs.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
        if values.is_empty() {
            return Err(Error::Spec(format!("--param '{k}' has no values")));
        }
        axes.push((k.trim().to_string(), values));
    }
    let mut combos: Vec<Vec<String>> = vec![vec![]];
    for (_, values) in &axes {
        combos = combos
            .into_iter()
            .flat_map(|c| values.iter().map(move |v| [c.clone(), vec![v.clone()]].concat()))
            .collect();
    }
    let mut configs = vec![];
    for combo in &combos {
        let mut c = base.clone();
        for ((k, _), v) in axes.iter().zip(combo) {
            c.set(k, v)?;
        }
        configs.push(c);
    }
    let root = resolve(out);
    fs::create_dir_all(&root)?;
    let results: Vec<Result<(RunRecord, Option<BlowupReport>)>> = configs
        .par_iter()
        .enumerate()
        .map(|(i, c)| run_config(c, &root.join(format!("run_{i:04}"))))
        .collect();

    let mut index = String::from("run,status");
    for (k, _) in &axes {
        index.push(',');
        index.push_str(k);
    }
    index.push_str(",verdict\n");
    let mut agg = CsvTable {
        header: ["run", "final_time", "t_est", "ratio_min", "ratio_max", "steps"].map(String::from).to_vec(),
        ..Default::default()
    };
    for (i, (combo, res)) in combos.iter().zip(&results).enumerate() {
        let (status, verdict) = match res {
            Ok((run, rep)) => {
                let r = rep.as_ref();
                agg.rows.push(vec![
                    i as f64,
                    run.last_time(),
                    r.and_then(|x| x.t_est).unwrap_or(f64::NAN),
                    r.and_then(|x| x.ratio_min).unwrap_or(f64::NAN),
                    r.and_then(|x| x.ratio_max).unwrap_or(f64::NAN),
                    run.stats.steps as f64,
                ]);
                let v = r.map(|x| serde_json::to_value(x.verdict).expect("json").as_str().unwrap_or("").to_string());
                ("ok".to_string(), v.unwrap_or_default())
            }
            Err(e) => (e.code().to_string(), String::new()),
        };
        index.push_str(&format!("run_{i:04},{status},{},{verdict}\n", combo.join(",")));
    }
    io::write_atomic(&root.join("index.csv"), index.as_bytes())?;
    io::write_atomic(&root.join("aggregate.csv"), agg.render().as_bytes())?;
    let failed = results.iter().filter(|r| r.is_err()).count();
    println!("{}", json!({ "runs": results.len(), "failed": failed, "dir": root.display().to_string() }));
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let msg = e.to_string();
                let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
                eprintln!("error code=usage message={first}");
                return ExitCode::from(2);
            }
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    let res = match cli.cmd {
        Cmd::Exponents { n } => cmd_exponents(n),
        Cmd::Steady { nl, n, alpha, r_max, out } => cmd_steady(&nl, n, alpha, r_max, out),
        Cmd::Singular { nl, n, q, s_min, s_max, ds, tol, out } => cmd_singular(&nl, n, q, s_min, s_max, ds, tol, out),
        Cmd::Intersect { a, b, lo, hi } => cmd_intersect(&a, &b, lo, hi),
        Cmd::Simulate { config, set, out } => cmd_simulate(&config, &set, out),
        Cmd::Classify { run } => cmd_classify(&run),
        Cmd::Sweep { config, params, out } => cmd_sweep(&config, &params, &out),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error code={} message={msg}", e.code());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
