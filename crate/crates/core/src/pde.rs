//! Method-of-lines solver for `U_t = U_rr + (N-1)U_r/r + f(U)` on `(0, R)`
//! with `U_r(0) = 0` and `U(R) = k`.

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::Pchip;
use crate::io::{self, CsvTable};
use crate::nonlinearity::{eval_f_inverse_log, Family, Nonlinearity, TransformTable};
use crate::ode::{next_step, DormandPrince};
use crate::steady::{shoot_regular, RadialProfile, ShootOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub radius: f64,
    pub cells: usize,
    pub h: f64,
    pub n: u32,
}

impl Grid {
    pub fn new(radius: f64, cells: usize, n: u32) -> Result<Self> {
        if cells < 16 || !(radius > 0.0) || !radius.is_finite() || n < 1 {
            return Err(Error::Spec(format!("grid needs R > 0, M >= 16, N >= 1 (got {radius}, {cells}, {n})")));
        }
        Ok(Self { radius, cells, h: radius / cells as f64, n })
    }

    pub fn r(&self, j: usize) -> f64 {
        if j == self.cells {
            self.radius
        } else {
            j as f64 * self.h
        }
    }

    pub fn radii(&self) -> Vec<f64> {
        (0..=self.cells).map(|j| self.r(j)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeScheme {
    ExplicitRk,
    ImplicitTrapezoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub scheme: TimeScheme,
    pub safety: f64,
    pub dt_min: f64,
    /// Blow-up threshold on `max U`; `None` picks the family default.
    pub m_max: Option<f64>,
    pub t_horizon: f64,
    /// Snapshot every `snapshot_dt` in `t` ...
    pub snapshot_dt: f64,
    /// ... and whenever `F(M)` has dropped by this fraction.
    pub snapshot_df: f64,
    pub rtol: f64,
    pub atol: f64,
    /// Resolution is trusted while `sqrt(F(M)) >= resolution_factor · h`.
    pub resolution_factor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            scheme: TimeScheme::ExplicitRk,
            safety: 0.9,
            dt_min: 1e-20,
            m_max: None,
            t_horizon: 10.0,
            snapshot_dt: 0.01,
            snapshot_df: 0.05,
            rtol: 1e-7,
            atol: 1e-9,
            resolution_factor: 5.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.safety > 0.0
            && self.safety <= 1.0
            && self.dt_min > 0.0
            && self.t_horizon > 0.0
            && self.t_horizon.is_finite()
            && self.snapshot_dt > 0.0
            && self.snapshot_df > 0.0
            && self.snapshot_df < 1.0
            && self.rtol > 0.0
            && self.atol > 0.0
            && self.resolution_factor > 0.0
            && self.m_max.is_none_or(|m| m.is_finite() && m > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Spec(format!("invalid solver configuration {self:?}")))
        }
    }
}

/// Default blow-up threshold: keeps `log f(M)` near 30 for exponential
/// families and `M = 10⁶` for power-like ones.
pub fn default_threshold(nl: &Nonlinearity) -> f64 {
    match nl.family() {
        Family::Exp => 30.0,
        Family::ExpPower { r2 } | Family::ExpPowerPerturbed { r2, .. } => 30f64.powf(1.0 / r2),
        Family::IteratedExp { n } => {
            let mut v = 30.0f64;
            for _ in 1..n {
                v = v.ln();
            }
            v
        }
        _ => 1e6,
    }
}

/// `F(M)`, infinite where `f(M) = 0`. Families without a closed form are
/// tabulated once so that the per-step cost stays small.
struct FScale<'a> {
    nl: &'a Nonlinearity,
    table: Option<TransformTable>,
}

impl<'a> FScale<'a> {
    fn new(nl: &'a Nonlinearity, u_hi: Option<f64>) -> Result<Self> {
        let table = match u_hi {
            Some(hi) if !nl.has_analytic_transform() && hi > 1e-2 => Some(TransformTable::build(nl, 1e-2, hi, 0.01)?),
            _ => None,
        };
        Ok(Self { nl, table })
    }

    fn eval(&self, m: f64) -> Result<f64> {
        if self.nl.f(m) <= 0.0 {
            return Ok(f64::INFINITY);
        }
        if let Some(t) = &self.table {
            let (lo, hi) = t.u_range();
            if m >= lo && m <= hi {
                return Ok(t.log_transform(m)?.exp());
            }
        }
        Ok(self.nl.log_transform(m, 1e-12)?.exp())
    }
}

fn gauss5(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    const X: [f64; 5] = [0.0, 0.5384693101056831, -0.5384693101056831, 0.906179845938664, -0.906179845938664];
    const W: [f64; 5] = [0.5688888888888889, 0.47862867049936647, 0.47862867049936647, 0.23692688505618908, 0.23692688505618908];
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    h * X.iter().zip(&W).map(|(x, w)| w * f(c + h * x)).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub u: Vec<f64>,
    pub max_value: f64,
    pub argmax_r: f64,
    /// `F(M(t))`.
    pub f_of_m: f64,
}

impl Snapshot {
    fn new(t: f64, u: Vec<f64>, grid: &Grid, scale: &FScale) -> Result<Self> {
        let (j, &m) = u
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .expect("non-empty state");
        let f_of_m = scale.eval(m)?;
        Ok(Self { t, max_value: m, argmax_r: grid.r(j), f_of_m, u })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Horizon,
    Threshold,
    DtUnderflow,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RunStats {
    pub steps: usize,
    pub rejected: usize,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub nonlinearity: Nonlinearity,
    pub initial: String,
    pub grid: Grid,
    pub k: f64,
    pub config: SolverConfig,
    pub snapshots: Vec<Snapshot>,
    pub termination: Termination,
    pub resolution_exhausted_at: Option<f64>,
    pub stats: RunStats,
}

/// Initial data specifications.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialData {
    Flat { a: f64 },
    /// `A (1 - (r/R)²)^m`.
    Bump { a: f64, m: f64 },
    /// Regular steady state with center value `alpha`.
    Steady { alpha: f64 },
    File(String),
}

impl std::str::FromStr for InitialData {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, rest) = s.split_once(':').unwrap_or((s, ""));
        if name == "file" {
            if rest.is_empty() {
                return Err(Error::Spec("file: needs a path".into()));
            }
            return Ok(InitialData::File(rest.to_string()));
        }
        let mut kv = std::collections::BTreeMap::new();
        for item in rest.split(',').map(str::trim).filter(|x| !x.is_empty()) {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::Spec(format!("expected key=value in '{item}'")))?;
            kv.insert(k.trim().to_string(), io::parse_num(v)?);
        }
        let get = |k: &str| kv.get(k).copied().ok_or_else(|| Error::Spec(format!("'{name}' needs {k}")));
        let known: &[&str] = match name {
            "flat" => &["a"],
            "bump" => &["A", "m"],
            "steady" => &["alpha"],
            _ => return Err(Error::Spec(format!("unknown initial data '{name}'"))),
        };
        if let Some(k) = kv.keys().find(|k| !known.contains(&k.as_str())) {
            return Err(Error::Spec(format!("unexpected parameter '{k}' for '{name}'")));
        }
        Ok(match name {
            "flat" => InitialData::Flat { a: get("a")? },
            "bump" => InitialData::Bump { a: get("A")?, m: kv.get("m").copied().unwrap_or(2.0) },
            _ => InitialData::Steady { alpha: get("alpha")? },
        })
    }
}

impl std::fmt::Display for InitialData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InitialData::Flat { a } => write!(f, "flat:a={a}"),
            InitialData::Bump { a, m } => write!(f, "bump:A={a},m={m}"),
            InitialData::Steady { alpha } => write!(f, "steady:alpha={alpha}"),
            InitialData::File(p) => write!(f, "file:{p}"),
        }
    }
}

impl InitialData {
    /// Samples the data on the grid. For `steady` the profile value at `R`
    /// is returned as the natural boundary value.
    pub fn sample(&self, nl: &Nonlinearity, grid: &Grid) -> Result<(Vec<f64>, Option<f64>)> {
        let r = grid.radii();
        match self {
            InitialData::Flat { a } => Ok((vec![*a; r.len()], Some(*a))),
            InitialData::Bump { a, m } => {
                Ok((r.iter().map(|x| a * (1.0 - (x / grid.radius).powi(2)).max(0.0).powf(*m)).collect(), Some(0.0)))
            }
            InitialData::Steady { alpha } => {
                let opts = ShootOptions { outputs: r.clone(), rtol: 1e-12, atol: 1e-14 };
                let (p, exit) = shoot_regular(nl, grid.n, *alpha, grid.radius, &opts)?;
                if let Some(e) = exit {
                    return Err(Error::Domain(format!("steady profile leaves the admissible range at r = {}", e.r)));
                }
                let u: Vec<f64> = r.iter().map(|&x| p.eval(x)).collect::<Result<_>>()?;
                let k = u[u.len() - 1];
                Ok((u, Some(k)))
            }
            InitialData::File(path) => {
                let text = fs::read_to_string(path)?;
                let p = RadialProfile::from_csv(&text)?;
                let pc = Pchip::new(&p.r, &p.values);
                let (lo, hi) = p.domain();
                if lo > 0.0 || hi < grid.radius * (1.0 - 1e-12) {
                    return Err(Error::OutOfRange(format!("profile in {path} covers [{lo}, {hi}], need [0, {}]", grid.radius)));
                }
                let u: Vec<f64> = r.iter().map(|&x| pc.eval(x.min(hi))).collect();
                Ok((u, None))
            }
        }
    }
}

fn rhs(grid: &Grid, nl: &Nonlinearity, u: &[f64], du: &mut [f64]) {
    let m = grid.cells;
    let h2 = grid.h * grid.h;
    let nf = grid.n as f64;
    du[0] = 2.0 * nf * (u[1] - u[0]) / h2 + nl.f(u[0]);
    for j in 1..m {
        let adv = (nf - 1.0) / j as f64 * (u[j + 1] - u[j - 1]) / (2.0 * h2);
        du[j] = (u[j + 1] - 2.0 * u[j] + u[j - 1]) / h2 + adv + nl.f(u[j]);
    }
    du[m] = 0.0;
}

/// Newton solve of one trapezoid step (tridiagonal Jacobian).
fn trapezoid_step(grid: &Grid, nl: &Nonlinearity, u: &[f64], dt: f64) -> Option<Vec<f64>> {
    let m = grid.cells;
    let h2 = grid.h * grid.h;
    let nf = grid.n as f64;
    let mut lu = vec![0.0; m + 1];
    rhs(grid, nl, u, &mut lu);
    let mut v = u.to_vec();
    let mut lv = vec![0.0; m + 1];
    let (mut lower, mut diag, mut upper, mut g) = (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    for _ in 0..30 {
        rhs(grid, nl, &v, &mut lv);
        for j in 0..m {
            g[j] = -(v[j] - u[j] - 0.5 * dt * (lv[j] + lu[j]));
            let (a, b, c) = if j == 0 {
                (0.0, -2.0 * nf / h2, 2.0 * nf / h2)
            } else {
                let w = (nf - 1.0) / (2.0 * j as f64 * h2);
                (1.0 / h2 - w, -2.0 / h2, 1.0 / h2 + w)
            };
            lower[j] = -0.5 * dt * a;
            diag[j] = 1.0 - 0.5 * dt * (b + nl.f_prime(v[j]));
            upper[j] = if j + 1 < m { -0.5 * dt * c } else { 0.0 };
        }
        // Thomas algorithm.
        for j in 1..m {
            let w = lower[j] / diag[j - 1];
            diag[j] -= w * upper[j - 1];
            g[j] -= w * g[j - 1];
        }
        let mut delta = vec![0.0; m];
        delta[m - 1] = g[m - 1] / diag[m - 1];
        for j in (0..m - 1).rev() {
            delta[j] = (g[j] - upper[j] * delta[j + 1]) / diag[j];
        }
        let mut norm: f64 = 0.0;
        for j in 0..m {
            v[j] += delta[j];
            norm = norm.max(delta[j].abs() / (1.0 + v[j].abs()));
        }
        if !norm.is_finite() {
            return None;
        }
        if norm < 1e-12 {
            return Some(v);
        }
    }
    None
}

/// Advances the semidiscrete system until the horizon, the blow-up
/// threshold, or step-size underflow.
pub fn simulate(
    nl: &Nonlinearity,
    grid: &Grid,
    config: &SolverConfig,
    u0: &[f64],
    k: f64,
    initial_label: &str,
) -> Result<RunRecord> {
    config.validate()?;
    let m = grid.cells;
    if u0.len() != m + 1 {
        return Err(Error::Spec(format!("initial data has {} samples, grid needs {}", u0.len(), m + 1)));
    }
    if !(k >= 0.0) || u0.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::Domain("initial data and boundary value must be finite and nonnegative".into()));
    }
    if (u0[m] - k).abs() > 1e-8 * k.abs().max(1.0) {
        return Err(Error::Domain(format!("initial data has U(R) = {}, boundary value is {k}", u0[m])));
    }
    let m_max = config.m_max.unwrap_or_else(|| default_threshold(nl));
    if !nl.f(m_max).is_finite() || !nl.f_prime(m_max).is_finite() {
        return Err(Error::Spec(format!("threshold {m_max} is beyond the representable range of {}", nl.label())));
    }
    let start = Instant::now();
    let mut u = u0.to_vec();
    u[m] = k;
    let mut t = 0.0;
    let scale = FScale::new(nl, Some(m_max * 1.01))?;
    let mut snapshots = vec![Snapshot::new(0.0, u.clone(), grid, &scale)?];
    let mut next_t = config.snapshot_dt;
    let mut stats = RunStats::default();
    let mut dp = DormandPrince::new(m + 1, config.rtol, config.atol);
    let mut f_rhs = |_t: f64, y: &[f64], dy: &mut [f64]| rhs(grid, nl, y, dy);
    let diffusion_cap = grid.h * grid.h / (2.0 * grid.n as f64);
    let mut dt = config.safety * diffusion_cap;
    let mut exhausted = None;
    let termination;
    loop {
        let last = snapshots.last().expect("initial snapshot");
        let mx = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if mx >= m_max {
            termination = Termination::Threshold;
            break;
        }
        if t >= config.t_horizon {
            termination = Termination::Horizon;
            break;
        }
        let fm = scale.eval(mx)?;
        if exhausted.is_none() && fm.sqrt() < config.resolution_factor * grid.h {
            exhausted = Some(t);
        }
        let fp_max = u.iter().map(|&v| nl.f_prime(v).abs()).fold(0.0, f64::max);
        let mut cap = (config.safety / fp_max.max(1e-300)).min(0.02 * fm);
        if config.scheme == TimeScheme::ExplicitRk {
            cap = cap.min(config.safety * diffusion_cap);
        }
        let to_output = next_t.min(config.t_horizon) - t;
        let landing = dt.min(cap) >= to_output;
        let step = if landing { to_output } else { dt.min(cap) };
        if step < config.dt_min {
            termination = Termination::DtUnderflow;
            break;
        }
        let accepted = match config.scheme {
            TimeScheme::ExplicitRk => {
                let err = dp.attempt(&mut f_rhs, t, &u, step);
                let ok = err <= 1.0;
                if ok {
                    u.copy_from_slice(&dp.y_new);
                    if !landing {
                        dt = next_step(step, err);
                    }
                } else {
                    dt = next_step(step, err);
                }
                ok
            }
            TimeScheme::ImplicitTrapezoid => match trapezoid_step(grid, nl, &u, step) {
                Some(v) => {
                    u[..m].copy_from_slice(&v[..m]);
                    dt = step * 1.5;
                    true
                }
                None => {
                    dt = step * 0.25;
                    false
                }
            },
        };
        if !accepted {
            stats.rejected += 1;
            continue;
        }
        stats.steps += 1;
        t = if landing { next_t.min(config.t_horizon) } else { t + step };
        u[m] = k;
        let mx = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mn = u.iter().copied().fold(f64::INFINITY, f64::min);
        if mn < -1e-6 * mx.abs().max(1.0) {
            return Err(Error::Discretization(format!("min U = {mn:e} at t = {t} (max {mx:e})")));
        }
        if !mx.is_finite() {
            return Err(Error::Discretization(format!("non-finite state at t = {t}")));
        }
        let fm_new = if mx >= m_max { 0.0 } else { scale.eval(mx)? };
        let due_t = t >= next_t;
        let due_f = fm_new <= (1.0 - config.snapshot_df) * last.f_of_m;
        if due_t || due_f || mx >= m_max || t >= config.t_horizon {
            snapshots.push(Snapshot::new(t, u.clone(), grid, &scale)?);
        }
        while next_t <= t {
            next_t += config.snapshot_dt;
        }
    }
    if snapshots.last().map(|s| s.t) != Some(t) {
        snapshots.push(Snapshot::new(t, u.clone(), grid, &scale)?);
    }
    stats.wall_seconds = start.elapsed().as_secs_f64();
    Ok(RunRecord {
        nonlinearity: nl.clone(),
        initial: initial_label.to_string(),
        grid: *grid,
        k,
        config: *config,
        snapshots,
        termination,
        resolution_exhausted_at: exhausted,
        stats,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct BlowupFit {
    pub t_est: f64,
    pub intercept: f64,
    pub slope: f64,
    /// `max_t (t + F(M(t)))`.
    pub lower_bound: f64,
    pub consistent_with_bound: bool,
    pub window: (f64, f64),
    pub points: usize,
    pub rms: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct GradientReport {
    /// Largest `(½|U_r|² - ∫_U^M f) / (f(M) M)` over the checked snapshots.
    pub max_excess: f64,
    pub at_t: f64,
    pub at_r: f64,
    pub snapshots_checked: usize,
}

impl RunRecord {
    /// Synthetic space-free run with `M(t) = F⁻¹(T - t)` (flat profiles).
    pub fn synthetic_ode(nl: &Nonlinearity, t_blowup: f64, times: &[f64]) -> Result<Self> {
        let grid = Grid::new(1.0, 16, 1)?;
        let mut snapshots = Vec::with_capacity(times.len());
        for &t in times {
            if !(t < t_blowup) {
                return Err(Error::Domain(format!("synthetic time {t} is not before T = {t_blowup}")));
            }
            let log_f = (t_blowup - t).ln();
            let m = eval_f_inverse_log(nl, log_f, 1e-13)?;
            snapshots.push(Snapshot { t, u: vec![m; grid.cells + 1], max_value: m, argmax_r: 0.0, f_of_m: t_blowup - t });
        }
        let k = snapshots.last().map(|s| s.max_value).unwrap_or(0.0);
        Ok(Self {
            nonlinearity: nl.clone(),
            initial: "synthetic_ode".into(),
            grid,
            k,
            config: SolverConfig::default(),
            snapshots,
            termination: Termination::Threshold,
            resolution_exhausted_at: None,
            stats: RunStats::default(),
        })
    }

    /// Index one past the last snapshot with `sqrt(F(M)) >= resolution_factor · h`.
    pub fn trusted_end(&self) -> usize {
        let lim = self.config.resolution_factor * self.grid.h;
        self.snapshots.iter().position(|s| s.f_of_m.sqrt() < lim).unwrap_or(self.snapshots.len())
    }

    /// First snapshot from which the maximum sits at the origin for good.
    pub fn settle_index(&self) -> Option<usize> {
        let last_off = self.snapshots.iter().rposition(|s| s.argmax_r != 0.0);
        match last_off {
            None => Some(0),
            Some(i) if i + 1 < self.snapshots.len() => Some(i + 1),
            _ => None,
        }
    }

    pub fn snapshot_profile(&self, i: usize) -> Result<RadialProfile> {
        let s = &self.snapshots[i];
        let r = self.grid.radii();
        let m = self.grid.cells;
        let h = self.grid.h;
        let mut d = vec![0.0; m + 1];
        for j in 1..m {
            d[j] = (s.u[j + 1] - s.u[j - 1]) / (2.0 * h);
        }
        d[m] = (3.0 * s.u[m] - 4.0 * s.u[m - 1] + s.u[m - 2]) / (2.0 * h);
        let mut p = RadialProfile::new(r, s.u.clone(), d, self.grid.n, Some(s.u[0]))?;
        p.meta.insert("t".into(), io::num(s.t));
        Ok(p)
    }

    /// `F(M(t))` by linear interpolation between snapshots.
    pub fn f_of_m_at(&self, t: f64) -> Result<f64> {
        let (i, w) = self.time_bracket(t)?;
        let s = &self.snapshots;
        Ok(if w == 0.0 { s[i].f_of_m } else { (1.0 - w) * s[i].f_of_m + w * s[i + 1].f_of_m })
    }

    fn time_bracket(&self, t: f64) -> Result<(usize, f64)> {
        let s = &self.snapshots;
        let (t0, t1) = (s[0].t, s[s.len() - 1].t);
        if !(t >= t0 && t <= t1) {
            return Err(Error::OutOfRange(format!("t = {t} outside run window [{t0}, {t1}]")));
        }
        let i = s.partition_point(|x| x.t <= t).saturating_sub(1).min(s.len() - 1);
        if i + 1 == s.len() || s[i].t == t {
            return Ok((i, 0.0));
        }
        Ok((i, (t - s[i].t) / (s[i + 1].t - s[i].t)))
    }

    /// `u(r, t)`: monotone cubic in `r`, linear in `t` between snapshots.
    pub fn u_at(&self, r: f64, t: f64) -> Result<f64> {
        if !(r >= 0.0 && r <= self.grid.radius) {
            return Err(Error::OutOfRange(format!("r = {r} outside [0, {}]", self.grid.radius)));
        }
        let (i, w) = self.time_bracket(t)?;
        let a = self.space_interp(i, r);
        if w == 0.0 {
            return Ok(a);
        }
        Ok((1.0 - w) * a + w * self.space_interp(i + 1, r))
    }

    fn space_interp(&self, i: usize, r: f64) -> f64 {
        let m = self.grid.cells;
        let j = ((r / self.grid.h).floor() as usize).min(m - 1);
        let lo = j.saturating_sub(1);
        let hi = (j + 2).min(m);
        let xs: Vec<f64> = (lo..=hi).map(|q| self.grid.r(q)).collect();
        Pchip::new(&xs, &self.snapshots[i].u[lo..=hi]).eval(r)
    }

    pub fn last_time(&self) -> f64 {
        self.snapshots.last().map(|s| s.t).unwrap_or(0.0)
    }

    /// Least-squares fit `F(M(t)) ≈ a - c t` over the last resolved
    /// `F(M)`-decade; `T_est = a / c`.
    pub fn estimate_blowup_time(&self) -> Result<BlowupFit> {
        if self.termination != Termination::Threshold {
            return Err(Error::FitDegenerate(format!("run ended by {:?}, not by the blow-up threshold", self.termination)));
        }
        let idx = self.last_decade();
        if idx.len() < 6 {
            return Err(Error::FitDegenerate(format!("only {} snapshots in the final F(M)-decade", idx.len())));
        }
        let xs: Vec<f64> = idx.iter().map(|&i| self.snapshots[i].t).collect();
        let ys: Vec<f64> = idx.iter().map(|&i| self.snapshots[i].f_of_m).collect();
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        let slope = sxy / sxx;
        let c = -slope;
        if !(c > 0.0) {
            return Err(Error::FitDegenerate(format!("F(M) is not decreasing over the final window (slope {slope:e})")));
        }
        let a = my - slope * mx;
        let t_est = a / c;
        let rms = (xs.iter().zip(&ys).map(|(x, y)| (y - (a - c * x)).powi(2)).sum::<f64>() / n).sqrt();
        let lower_bound = self.snapshots.iter().map(|s| s.t + s.f_of_m).fold(f64::NEG_INFINITY, f64::max);
        Ok(BlowupFit {
            t_est,
            intercept: a,
            slope: c,
            lower_bound,
            consistent_with_bound: t_est >= lower_bound - 1e-9 * lower_bound.abs().max(1e-300) - rms,
            window: (xs[0], xs[xs.len() - 1]),
            points: idx.len(),
            rms,
        })
    }

    /// Snapshot indices with `F(M)` in `[F_end, 10 F_end]`, `F_end` the
    /// smallest trusted value.
    pub fn last_decade(&self) -> Vec<usize> {
        let end = self.trusted_end();
        if end == 0 {
            return vec![];
        }
        let f_end = self.snapshots[end - 1].f_of_m;
        (0..end).filter(|&i| self.snapshots[i].f_of_m <= 10.0 * f_end).collect()
    }

    /// Normalized excess of `½|U_r|² - ∫_U^M f` after the argmax settles.
    pub fn check_gradient_bound(&self, nl: &Nonlinearity) -> Result<GradientReport> {
        let settle = self.settle_index().unwrap_or(self.snapshots.len());
        let mut rep = GradientReport { max_excess: f64::NEG_INFINITY, at_t: f64::NAN, at_r: f64::NAN, snapshots_checked: 0 };
        for i in settle..self.snapshots.len() {
            let (e, r) = self.gradient_excess(nl, i)?;
            rep.snapshots_checked += 1;
            if e > rep.max_excess {
                rep.max_excess = e;
                rep.at_t = self.snapshots[i].t;
                rep.at_r = r;
            }
        }
        rep.max_excess = rep.max_excess.max(0.0);
        Ok(rep)
    }

    /// Max normalized energy excess on snapshot `i` and where it occurs.
    pub fn gradient_excess(&self, nl: &Nonlinearity, i: usize) -> Result<(f64, f64)> {
        let s = &self.snapshots[i];
        let p = self.snapshot_profile(i)?;
        let mx = s.max_value;
        let norm = nl.f(mx) * mx.abs().max(1e-300);
        // ∫_{U_j}^{M} f accumulated along the grid from the maximum.
        let mut prim = nl.integral(s.u[0], mx)?;
        let mut worst = (f64::NEG_INFINITY, 0.0);
        for j in 0..s.u.len() {
            if j > 0 {
                prim += gauss5(|x| nl.f(x), s.u[j], s.u[j - 1]);
            }
            let e = (0.5 * p.derivative[j] * p.derivative[j] - prim) / norm;
            if e > worst.0 {
                worst = (e, p.r[j]);
            }
        }
        Ok(worst)
    }

    pub fn snapshots_csv(&self) -> String {
        let mut meta = std::collections::BTreeMap::new();
        meta.insert("R".into(), io::num(self.grid.radius));
        meta.insert("M".into(), self.grid.cells.to_string());
        meta.insert("N".into(), self.grid.n.to_string());
        meta.insert("k".into(), io::num(self.k));
        meta.insert("nonlinearity".into(), self.nonlinearity.to_string());
        meta.insert("initial".into(), self.initial.clone());
        let mut header = vec!["t".to_string()];
        header.extend((0..=self.grid.cells).map(|j| format!("u{j}")));
        CsvTable {
            meta,
            header,
            rows: self
                .snapshots
                .iter()
                .map(|s| std::iter::once(s.t).chain(s.u.iter().copied()).collect())
                .collect(),
        }
        .render()
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "nonlinearity": self.nonlinearity.to_string(),
            "initial": self.initial,
            "grid": self.grid,
            "k": self.k,
            "config": self.config,
            "termination": self.termination,
            "resolution_exhausted_at": self.resolution_exhausted_at,
            "snapshots": self.snapshots.len(),
            "final_time": self.last_time(),
            "final_max": self.snapshots.last().map(|s| s.max_value),
            "stats": self.stats,
        })
    }

    /// Writes `snapshots.csv` and `run.json` into `dir` (which must exist).
    pub fn write(&self, dir: &Path) -> Result<()> {
        io::write_atomic(&dir.join("snapshots.csv"), self.snapshots_csv().as_bytes())?;
        let json = serde_json::to_string_pretty(&self.summary_json()).expect("summary serializes");
        io::write_atomic(&dir.join("run.json"), json.as_bytes())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("run.json"))?)
            .map_err(|e| Error::Spec(format!("run.json: {e}")))?;
        let field = |k: &str| meta.get(k).cloned().ok_or_else(|| Error::Spec(format!("run.json lacks '{k}'")));
        let de = |v: serde_json::Value, k: &str| Error::Spec(format!("run.json field '{k}': {v}"));
        let nl: Nonlinearity = field("nonlinearity")?.as_str().ok_or_else(|| Error::Spec("nonlinearity".into()))?.parse()?;
        let grid: Grid = serde_json::from_value(field("grid")?).map_err(|e| de(e.to_string().into(), "grid"))?;
        let config: SolverConfig = serde_json::from_value(field("config")?).map_err(|e| de(e.to_string().into(), "config"))?;
        let termination: Termination =
            serde_json::from_value(field("termination")?).map_err(|e| de(e.to_string().into(), "termination"))?;
        let stats: RunStats = serde_json::from_value(field("stats")?).map_err(|e| de(e.to_string().into(), "stats"))?;
        let k = field("k")?.as_f64().ok_or_else(|| Error::Spec("k".into()))?;
        let initial = field("initial")?.as_str().unwrap_or_default().to_string();
        let resolution_exhausted_at = field("resolution_exhausted_at")?.as_f64();
        let table = CsvTable::parse(&fs::read_to_string(dir.join("snapshots.csv"))?)?;
        let scale = FScale::new(&nl, Some(config.m_max.unwrap_or_else(|| default_threshold(&nl)) * 1.01))?;
        let mut snapshots = Vec::with_capacity(table.rows.len());
        for row in table.rows {
            if row.len() != grid.cells + 2 {
                return Err(Error::Spec("snapshot row length does not match the grid".into()));
            }
            snapshots.push(Snapshot::new(row[0], row[1..].to_vec(), &grid, &scale)?);
        }
        if snapshots.is_empty() {
            return Err(Error::Spec("run has no snapshots".into()));
        }
        Ok(Self { nonlinearity: nl, initial, grid, k, config, snapshots, termination, resolution_exhausted_at, stats })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nl(s: &str) -> Nonlinearity {
        s.parse().unwrap()
    }

    #[test]
    fn initial_data_specs() {
        for s in ["flat:a=1.5", "bump:A=10,m=2", "steady:alpha=0.5", "file:/tmp/x.csv"] {
            assert_eq!(s.parse::<InitialData>().unwrap().to_string(), s);
        }
        assert!("bump:B=1".parse::<InitialData>().is_err());
        assert!("wave:a=1".parse::<InitialData>().is_err());
    }

    #[test]
    fn flat_zero_data_stays_nonnegative_and_grows() {
        let f = nl("exp");
        let g = Grid::new(1.0, 32, 3).unwrap();
        let cfg = SolverConfig { t_horizon: 0.05, ..Default::default() };
        let run = simulate(&f, &g, &cfg, &vec![0.0; 33], 0.0, "flat:a=0").unwrap();
        assert_eq!(run.termination, Termination::Horizon);
        let last = run.snapshots.last().unwrap();
        assert!(last.u.iter().all(|&v| v >= 0.0));
        assert!(last.u[0] > 0.0 && last.u[32] == 0.0);
        assert!(run.snapshots.windows(2).all(|w| w[1].t > w[0].t));
    }

    #[test]
    fn boundary_mismatch_is_rejected() {
        let f = nl("exp");
        let g = Grid::new(1.0, 16, 3).unwrap();
        assert!(simulate(&f, &g, &SolverConfig::default(), &[1.0; 17], 0.0, "x").is_err());
        assert!(Grid::new(1.0, 8, 3).is_err());
    }

    #[test]
    fn synthetic_run_fits_exactly() {
        let f = nl("exp");
        let times: Vec<f64> = (0..40).map(|i| 1.0 - 0.9f64.powi(i)).collect();
        let run = RunRecord::synthetic_ode(&f, 1.0, &times).unwrap();
        let fit = run.estimate_blowup_time().unwrap();
        assert!((fit.t_est - 1.0).abs() < 1e-6, "{fit:?}");
    }

    #[test]
    fn horizon_run_has_no_blowup_fit() {
        let f = nl("power:p=3");
        let g = Grid::new(1.0, 16, 5).unwrap();
        let cfg = SolverConfig { t_horizon: 0.01, ..Default::default() };
        let run = simulate(&f, &g, &cfg, &[0.0; 17], 0.0, "flat:a=0").unwrap();
        assert!(matches!(run.estimate_blowup_time(), Err(Error::FitDegenerate(_))));
    }

    #[test]
    fn schemes_agree_on_a_smooth_run() {
        let f = nl("exp");
        let g = Grid::new(1.0, 32, 3).unwrap();
        let (u0, _) = InitialData::Bump { a: 1.0, m: 2.0 }.sample(&f, &g).unwrap();
        let base = SolverConfig { t_horizon: 0.02, snapshot_dt: 0.02, ..Default::default() };
        let a = simulate(&f, &g, &base, &u0, 0.0, "bump").unwrap();
        let b = simulate(&f, &g, &SolverConfig { scheme: TimeScheme::ImplicitTrapezoid, ..base }, &u0, 0.0, "bump").unwrap();
        let (ua, ub) = (&a.snapshots.last().unwrap().u, &b.snapshots.last().unwrap().u);
        let err = ua.iter().zip(ub).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn run_directory_round_trip() {
        let f = nl("exp");
        let g = Grid::new(1.0, 16, 3).unwrap();
        let cfg = SolverConfig { t_horizon: 0.01, ..Default::default() };
        let run = simulate(&f, &g, &cfg, &[0.0; 17], 0.0, "flat:a=0").unwrap();
        let dir = tempfile::tempdir().unwrap();
        run.write(dir.path()).unwrap();
        let back = RunRecord::load(dir.path()).unwrap();
        assert_eq!(back.snapshots, run.snapshots);
        assert_eq!(back.grid, run.grid);
        assert_eq!(back.termination, run.termination);
    }
}
