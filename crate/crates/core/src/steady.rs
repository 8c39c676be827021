//! Steady states of `Φ'' + (N-1)Φ'/r + f(Φ) = 0`: the explicit singular
//! solutions, the singular solution built by Picard iteration in the
//! variable `X(s)`, `s = log r`, and regular solutions by shooting.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::interp::{hermite, locate};
use crate::io::{num, CsvTable};
use crate::nonlinearity::{eval_f_inverse_log, Family, Nonlinearity, TransformTable};
use crate::ode::{self, IntegrateOptions};

/// A sampled radial function with its derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialProfile {
    pub r: Vec<f64>,
    pub values: Vec<f64>,
    pub derivative: Vec<f64>,
    pub n: u32,
    /// Value at `r = 0`; absent for singular profiles.
    pub origin_value: Option<f64>,
    pub meta: BTreeMap<String, String>,
}

impl RadialProfile {
    pub fn new(r: Vec<f64>, values: Vec<f64>, derivative: Vec<f64>, n: u32, origin_value: Option<f64>) -> Result<Self> {
        if r.len() < 2 || r.len() != values.len() || r.len() != derivative.len() {
            return Err(Error::Domain(format!(
                "profile needs matching arrays of length >= 2 (r {}, values {}, derivative {})",
                r.len(),
                values.len(),
                derivative.len()
            )));
        }
        if r.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain("profile radii must be strictly increasing".into()));
        }
        if r[0] < 0.0 || values.iter().chain(&derivative).any(|v| !v.is_finite()) {
            return Err(Error::Domain("profile radii must be >= 0 and samples finite".into()));
        }
        Ok(Self { r, values, derivative, n, origin_value, meta: BTreeMap::new() })
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.r[0], self.r[self.r.len() - 1])
    }

    /// Cubic Hermite interpolation using the stored derivatives.
    pub fn eval_with_derivative(&self, x: f64) -> Result<(f64, f64)> {
        let (a, b) = self.domain();
        let slack = 1e-12 * (b - a);
        if !(x >= a - slack && x <= b + slack) {
            return Err(Error::OutOfRange(format!("r = {x} outside [{a}, {b}]")));
        }
        let x = x.clamp(a, b);
        let i = locate(&self.r, x);
        Ok(hermite(
            self.r[i],
            self.r[i + 1],
            self.values[i],
            self.values[i + 1],
            self.derivative[i],
            self.derivative[i + 1],
            x,
        ))
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        self.eval_with_derivative(x).map(|v| v.0)
    }

    pub fn to_table(&self) -> CsvTable {
        let mut meta = self.meta.clone();
        meta.insert("N".into(), self.n.to_string());
        if let Some(o) = self.origin_value {
            meta.insert("origin_value".into(), num(o));
        }
        CsvTable {
            meta,
            header: vec!["r".into(), "value".into(), "derivative".into()],
            rows: (0..self.r.len()).map(|i| vec![self.r[i], self.values[i], self.derivative[i]]).collect(),
        }
    }

    pub fn to_csv(&self) -> String {
        self.to_table().render()
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut t = CsvTable::parse(text)?;
        let n = t
            .meta
            .remove("N")
            .ok_or_else(|| Error::Spec("profile csv lacks '# N=' line".into()))?
            .parse()
            .map_err(|_| Error::Spec("bad N in profile csv".into()))?;
        let origin = t.meta.remove("origin_value").map(|v| crate::io::parse_num(&v)).transpose()?;
        let mut p = Self::new(t.column("r")?, t.column("value")?, t.column("derivative")?, n, origin)?;
        p.meta = t.meta;
        Ok(p)
    }
}

/// Nonlinearities with an explicit singular steady state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExplicitKind {
    Power { p: f64 },
    Exp,
}

impl ExplicitKind {
    pub fn of(nl: &Nonlinearity) -> Option<Self> {
        match nl.family() {
            Family::Power { p } => Some(ExplicitKind::Power { p }),
            Family::Exp => Some(ExplicitKind::Exp),
            _ => None,
        }
    }
}

fn explicit_check(kind: ExplicitKind, n: u32, r: f64) -> Result<()> {
    if !(r > 0.0) {
        return Err(Error::Domain(format!("explicit singular solution needs r > 0, got {r}")));
    }
    if n < 3 {
        return Err(Error::Domain(format!("explicit singular solution needs N >= 3, got {n}")));
    }
    if let ExplicitKind::Power { p } = kind {
        let nf = n as f64;
        if !(p > nf / (nf - 2.0)) {
            return Err(Error::Domain(format!("power singular solution needs p > N/(N-2), got p = {p}")));
        }
    }
    Ok(())
}

/// `Φ*_p(r)` or `Φ*_∞(r)` together with the derivative in `r`.
pub fn explicit_singular_with_derivative(kind: ExplicitKind, n: u32, r: f64) -> Result<(f64, f64)> {
    explicit_check(kind, n, r)?;
    let nf = n as f64;
    Ok(match kind {
        ExplicitKind::Power { p } => {
            let b = 2.0 * nf - 4.0 * p / (p - 1.0);
            let v = ((p - 1.0) / b * r * r).powf(-1.0 / (p - 1.0));
            (v, -2.0 / (p - 1.0) * v / r)
        }
        ExplicitKind::Exp => (-(r * r / (2.0 * nf - 4.0)).ln(), -2.0 / r),
    })
}

pub fn explicit_singular(kind: ExplicitKind, n: u32, r: f64) -> Result<f64> {
    explicit_singular_with_derivative(kind, n, r).map(|v| v.0)
}

pub fn explicit_singular_profile(kind: ExplicitKind, n: u32, r_grid: &[f64]) -> Result<RadialProfile> {
    let (mut v, mut d) = (Vec::with_capacity(r_grid.len()), Vec::with_capacity(r_grid.len()));
    for &r in r_grid {
        let (a, b) = explicit_singular_with_derivative(kind, n, r)?;
        v.push(a);
        d.push(b);
    }
    RadialProfile::new(r_grid.to_vec(), v, d, n, None)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "branch", rename_all = "snake_case")]
pub enum KernelBranch {
    Real { l1: f64, l2: f64 },
    Double { l: f64 },
    Complex { mu: f64, omega: f64 },
}

/// Solution of `Z'' + aZ' + bZ = 0`, `Z(0) = 0`, `Z'(0) = 1` with
/// `a = N + 2 - 4q`, `b = 2N - 4q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelZ {
    pub a: f64,
    pub b: f64,
    pub branch: KernelBranch,
    /// Decay constants with `|Z| + |Z'| + |Z''| <= β e^{-αs}` on `s >= 0`.
    pub alpha: f64,
    pub beta: f64,
}

impl KernelZ {
    pub fn z(&self, s: f64) -> f64 {
        match self.branch {
            KernelBranch::Real { l1, l2 } => ((l1 * s).exp() - (l2 * s).exp()) / (l1 - l2),
            KernelBranch::Double { l } => s * (l * s).exp(),
            KernelBranch::Complex { mu, omega } => (mu * s).exp() * (omega * s).sin() / omega,
        }
    }

    pub fn dz(&self, s: f64) -> f64 {
        match self.branch {
            KernelBranch::Real { l1, l2 } => (l1 * (l1 * s).exp() - l2 * (l2 * s).exp()) / (l1 - l2),
            KernelBranch::Double { l } => (1.0 + l * s) * (l * s).exp(),
            KernelBranch::Complex { mu, omega } => {
                (mu * s).exp() * (mu * (omega * s).sin() / omega + (omega * s).cos())
            }
        }
    }

    pub fn d2z(&self, s: f64) -> f64 {
        -self.a * self.dz(s) - self.b * self.z(s)
    }

    /// `∫_d^∞ Z(σ) dσ = (Z'(d) + a Z(d)) / b`.
    pub fn tail_integral(&self, d: f64) -> f64 {
        (self.dz(d) + self.a * self.z(d)) / self.b
    }

    /// `∫_d^∞ (σ - d) Z(σ) dσ = (a T(d) - Z(d)) / b` with `T` the tail integral.
    pub fn tail_moment(&self, d: f64) -> f64 {
        (self.a * self.tail_integral(d) - self.z(d)) / self.b
    }
}

pub fn kernel_z(q: f64, n: u32) -> Result<KernelZ> {
    let nf = n as f64;
    let a = nf + 2.0 - 4.0 * q;
    let b = 2.0 * nf - 4.0 * q;
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::Stability(format!(
            "λ² + {a}λ + {b} has a root with nonnegative real part (q = {q}, N = {n})"
        )));
    }
    let disc = a * a - 4.0 * b;
    let scale = 1e-12 * a * a;
    let (branch, slowest) = if disc > scale {
        let sq = disc.sqrt();
        let l1 = (-a + sq) / 2.0;
        // Stable form for the root of larger magnitude.
        let l2 = b / l1;
        (KernelBranch::Real { l1, l2 }, -l1)
    } else if disc < -scale {
        (KernelBranch::Complex { mu: -a / 2.0, omega: (-disc).sqrt() / 2.0 }, a / 2.0)
    } else {
        (KernelBranch::Double { l: -a / 2.0 }, a / 2.0)
    };
    let alpha = match branch {
        KernelBranch::Double { .. } => 0.9 * slowest,
        _ => slowest,
    };
    let mut k = KernelZ { a, b, branch, alpha, beta: 0.0 };
    let horizon = 60.0 / alpha;
    let steps = 20_000;
    let mut beta: f64 = 0.0;
    for i in 0..=steps {
        let s = horizon * i as f64 / steps as f64;
        let m = (k.z(s).abs() + k.dz(s).abs() + k.d2z(s).abs()) * (alpha * s).exp();
        beta = beta.max(m);
    }
    k.beta = 1.05 * beta;
    Ok(k)
}

/// Evaluates `ζ = F₀⁻¹(e^{lv})`, `f₀'F₀(ζ)` and `f/f₀(ζ)`, with the
/// companion either in closed form or tabulated.
struct CompanionEval<'a> {
    nl: &'a Nonlinearity,
    comp: &'a Nonlinearity,
    table: Option<TransformTable>,
    j_const: Option<f64>,
}

impl<'a> CompanionEval<'a> {
    fn new(nl: &'a Nonlinearity, log_v_lo: f64, log_v_hi: f64) -> Result<Self> {
        let comp = nl.companion();
        if let Some(j) = comp.analytic_j() {
            return Ok(Self { nl, comp, table: None, j_const: Some(j) });
        }
        let u_lo = eval_f_inverse_log(comp, log_v_hi, 1e-10)? * 0.9;
        let u_hi = eval_f_inverse_log(comp, log_v_lo, 1e-10)? * 1.1;
        let table = TransformTable::build(comp, u_lo, u_hi, 0.01)?;
        Ok(Self { nl, comp, table: Some(table), j_const: None })
    }

    fn zeta(&self, log_v: f64) -> Result<f64> {
        match &self.table {
            None => self
                .comp
                .analytic_inverse_log(log_v)
                .filter(|u| u.is_finite())
                .ok_or_else(|| Error::Overflow(format!("ζ not representable at log v = {log_v}"))),
            Some(t) => t.inverse_log(log_v),
        }
    }

    fn j(&self, u: f64) -> f64 {
        match (&self.table, self.j_const) {
            (_, Some(j)) => j,
            (Some(t), None) => t.q_function(u),
            (None, None) => unreachable!("companion evaluator without table or constant"),
        }
    }

    fn ratio_minus_one(&self, u: f64) -> f64 {
        if std::ptr::eq(self.nl, self.comp) {
            0.0
        } else {
            (self.nl.log_f(u) - self.comp.log_f(u)).exp_m1()
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PicardOptions {
    pub s_min: f64,
    pub s_max: f64,
    pub ds: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Bound on `|X(s_min)| + |X'(s_min)|`; exceeded values are reported in
    /// the transform, not raised.
    pub tol_boundary: f64,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self { s_min: -12.0, s_max: -2.0, ds: 0.01, tol: 1e-10, max_iter: 200, tol_boundary: 0.05 }
    }
}

/// Samples of `X` and `X'` on a uniform `s`-grid representing
/// `U*(r) = F₀⁻¹((2N - 4q)⁻¹ e^{2s - X(s)})`.
#[derive(Debug, Clone, Serialize)]
pub struct SingularTransform {
    pub label: String,
    pub s: Vec<f64>,
    pub x: Vec<f64>,
    pub x_prime: Vec<f64>,
    pub q: f64,
    pub n: u32,
    pub iterations: usize,
    /// Final `sup(|ΔX| + |ΔX'|)`.
    pub residual: f64,
    pub contraction_ratio: f64,
    /// Max relative residual of the steady-state equation over the interior.
    pub ode_residual: f64,
    /// `|h₁ + h₂|` at `s_min` (the truncated integrand magnitude).
    pub tail_integrand: f64,
    pub boundary_defect: f64,
    pub boundary_ok: bool,
}

impl SingularTransform {
    /// `θ(r) = e^{-X(log r)} - 1` on the grid.
    pub fn theta(&self) -> Vec<f64> {
        self.x.iter().map(|x| (-x).exp_m1()).collect()
    }

    pub fn eval_x(&self, s: f64) -> Result<(f64, f64)> {
        let (a, b) = (self.s[0], self.s[self.s.len() - 1]);
        let slack = 1e-9 * (b - a);
        if !(s >= a - slack && s <= b + slack) {
            return Err(Error::OutOfRange(format!("s = {s} outside [{a}, {b}]")));
        }
        let s = s.clamp(a, b);
        let i = locate(&self.s, s);
        let (x, _) = hermite(self.s[i], self.s[i + 1], self.x[i], self.x[i + 1], self.x_prime[i], self.x_prime[i + 1], s);
        let t = (s - self.s[i]) / (self.s[i + 1] - self.s[i]);
        let xp = self.x_prime[i] * (1.0 - t) + self.x_prime[i + 1] * t;
        Ok((x, xp))
    }

    /// Max relative residual of the steady-state equation on `[s_lo, s_hi]`.
    pub fn ode_residual_on(&self, nl: &Nonlinearity, s_lo: f64, s_hi: f64) -> Result<f64> {
        let b = 2.0 * self.n as f64 - 4.0 * self.q;
        let eval = CompanionEval::new(nl, 2.0 * s_lo - b.ln() - 4.0, 2.0 * s_hi - b.ln() + 4.0)?;
        residual_max(&eval, &self.s, &self.x, &self.x_prime, self.n, self.q, s_lo, s_hi)
    }

    pub fn to_csv(&self) -> String {
        let mut meta = BTreeMap::new();
        meta.insert("nonlinearity".into(), self.label.clone());
        meta.insert("N".into(), self.n.to_string());
        meta.insert("q".into(), num(self.q));
        meta.insert("iterations".into(), self.iterations.to_string());
        meta.insert("residual".into(), num(self.residual));
        meta.insert("ode_residual".into(), num(self.ode_residual));
        meta.insert("contraction_ratio".into(), num(self.contraction_ratio));
        let theta = self.theta();
        CsvTable {
            meta,
            header: vec!["s".into(), "X".into(), "X_prime".into(), "theta".into()],
            rows: (0..self.s.len()).map(|i| vec![self.s[i], self.x[i], self.x_prime[i], theta[i]]).collect(),
        }
        .render()
    }
}

#[allow(clippy::too_many_arguments)]
fn residual_max(
    eval: &CompanionEval,
    s: &[f64],
    x: &[f64],
    y: &[f64],
    n: u32,
    q: f64,
    s_lo: f64,
    s_hi: f64,
) -> Result<f64> {
    let nf = n as f64;
    let b = 2.0 * nf - 4.0 * q;
    let ds = s[1] - s[0];
    let mut worst: f64 = 0.0;
    for i in 1..s.len() - 1 {
        if s[i] < s_lo || s[i] > s_hi {
            continue;
        }
        let zeta = eval.zeta(2.0 * s[i] - x[i] - b.ln())?;
        let ypp = (y[i + 1] - y[i - 1]) / (2.0 * ds);
        let yy = y[i] - 2.0;
        let source = b * (1.0 + eval.ratio_minus_one(zeta)) * x[i].exp();
        let r = ypp - yy * (y[i] - nf) + eval.j(zeta) * yy * yy + source;
        worst = worst.max((r / source).abs());
    }
    Ok(worst)
}

/// The map `Ψ` of the fixed-point problem on a fixed grid, with the kernel
/// tabulated once.
pub struct PicardOperator<'a> {
    eval: CompanionEval<'a>,
    pub kernel: KernelZ,
    pub s: Vec<f64>,
    ds: f64,
    q: f64,
    z: Vec<f64>,
    dz: Vec<f64>,
    tail: Vec<f64>,
    tail_moment: Vec<f64>,
}

impl<'a> PicardOperator<'a> {
    pub fn new(nl: &'a Nonlinearity, q: f64, n: u32, opts: &PicardOptions) -> Result<Self> {
        if !(opts.s_max > opts.s_min && opts.ds > 0.0) {
            return Err(Error::Domain(format!("bad s-window [{}, {}] / Δs {}", opts.s_min, opts.s_max, opts.ds)));
        }
        let kernel = kernel_z(q, n)?;
        let m = ((opts.s_max - opts.s_min) / opts.ds).round().max(4.0) as usize;
        let ds = (opts.s_max - opts.s_min) / m as f64;
        let s: Vec<f64> = (0..=m).map(|i| opts.s_min + ds * i as f64).collect();
        let lb = kernel.b.ln();
        let eval = CompanionEval::new(nl, 2.0 * opts.s_min - lb - 4.0, 2.0 * opts.s_max - lb + 4.0)?;
        let z = (0..=m).map(|k| kernel.z(k as f64 * ds)).collect();
        let dz = (0..=m).map(|k| kernel.dz(k as f64 * ds)).collect();
        let tail = (0..=m).map(|k| kernel.tail_integral(k as f64 * ds)).collect();
        let tail_moment = (0..=m).map(|k| kernel.tail_moment(k as f64 * ds)).collect();
        Ok(Self { eval, kernel, s, ds, q, z, dz, tail, tail_moment })
    }

    /// `h₁(X, Y) + h₂(X, Y, s)` on the grid.
    pub fn forcing(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let b = self.kernel.b;
        let lb = b.ln();
        (0..self.s.len())
            .map(|i| {
                let (xi, yi) = (x[i], y[i]);
                let h1 = b * (xi.exp_m1() - xi) + (self.q - 1.0) * yi * yi;
                let zeta = self.eval.zeta(2.0 * self.s[i] - xi - lb)?;
                let h2 = b * self.eval.ratio_minus_one(zeta) * xi.exp()
                    + (self.eval.j(zeta) - self.q) * (yi - 2.0) * (yi - 2.0);
                Ok(h1 + h2)
            })
            .collect()
    }

    /// One application of `Ψ`, returning new `(X, X')`. The integral below
    /// `s_min` is closed by extending the forcing linearly from `s_min`.
    pub fn apply(&self, x: &[f64], y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let h = self.forcing(x, y)?;
        let ds = self.ds;
        let slope = (-3.0 * h[0] + 4.0 * h[1] - h[2]) / (2.0 * ds);
        let out: Vec<(f64, f64)> = (0..self.s.len())
            .into_par_iter()
            .map(|i| {
                let (mut sx, mut sy) = (0.0, 0.0);
                if i > 0 {
                    sx = 0.5 * (h[0] * self.z[i] + h[i] * self.z[0]);
                    sy = 0.5 * (h[0] * self.dz[i] + h[i] * self.dz[0]);
                    for j in 1..i {
                        sx += h[j] * self.z[i - j];
                        sy += h[j] * self.dz[i - j];
                    }
                }
                let xi = -(ds * sx + h[0] * self.tail[i] - slope * self.tail_moment[i]);
                let yi = -(ds * sy - h[0] * self.z[i] + slope * self.tail[i]);
                (xi, yi)
            })
            .collect();
        Ok(out.into_iter().unzip())
    }
}

/// Picard iteration `X_{k+1} = Ψ[X_k]` from `X₀ ≡ 0`.
pub fn picard_singular(nl: &Nonlinearity, q: f64, n: u32, opts: &PicardOptions) -> Result<SingularTransform> {
    let op = PicardOperator::new(nl, q, n, opts)?;
    let m = op.s.len();
    let (mut x, mut y) = (vec![0.0; m], vec![0.0; m]);
    let mut prev_diff = f64::NAN;
    let mut ratio = 0.0;
    for iter in 1..=opts.max_iter {
        let (nx, ny) = op.apply(&x, &y)?;
        let diff = (0..m).map(|i| (nx[i] - x[i]).abs() + (ny[i] - y[i]).abs()).fold(0.0, f64::max);
        if !diff.is_finite() || nx.iter().any(|v| v.abs() > 5.0) {
            return Err(Error::NonConvergence(format!(
                "Picard iterate left |X| <= 5 at iteration {iter} (contraction ratio {ratio:.3}); try a smaller s_max"
            )));
        }
        if prev_diff > 0.0 {
            ratio = diff / prev_diff;
        }
        x = nx;
        y = ny;
        if diff < opts.tol {
            let h0 = op.forcing(&x, &y)?[0].abs();
            let ode_residual = residual_max(&op.eval, &op.s, &x, &y, n, q, f64::NEG_INFINITY, f64::INFINITY)?;
            let boundary_defect = x[0].abs() + y[0].abs();
            return Ok(SingularTransform {
                label: nl.label().to_string(),
                s: op.s,
                x,
                x_prime: y,
                q,
                n,
                iterations: iter,
                residual: diff,
                contraction_ratio: ratio,
                ode_residual,
                tail_integrand: h0,
                boundary_defect,
                boundary_ok: boundary_defect <= opts.tol_boundary,
            });
        }
        prev_diff = diff;
    }
    Err(Error::NonConvergence(format!(
        "Picard iteration did not reach tol {} in {} iterations (contraction ratio {ratio:.3}); try a smaller s_max",
        opts.tol, opts.max_iter
    )))
}

/// Runs [`picard_singular`], lowering `s_max` by `log 2` (halving `r₀`) after
/// each non-convergent attempt.
pub fn picard_singular_auto(nl: &Nonlinearity, q: f64, n: u32, opts: &PicardOptions) -> Result<SingularTransform> {
    let mut o = *opts;
    let mut last = None;
    for _ in 0..8 {
        match picard_singular(nl, q, n, &o) {
            Err(Error::NonConvergence(msg)) => {
                last = Some(msg);
                o.s_max -= std::f64::consts::LN_2;
                if o.s_max <= o.s_min + 1.0 {
                    break;
                }
            }
            other => return other,
        }
    }
    Err(Error::NonConvergence(last.unwrap_or_default()))
}

/// `U*(r) = F₀⁻¹((2N - 4q)⁻¹ r² e^{-X(log r)})` with
/// `U*'(r) = f₀(U*) F₀(U*) (X' - 2) / r`.
pub fn transform_to_radial(st: &SingularTransform, nl: &Nonlinearity, r_grid: &[f64]) -> Result<RadialProfile> {
    let b = 2.0 * st.n as f64 - 4.0 * st.q;
    let lb = b.ln();
    let (s_lo, s_hi) = (st.s[0], st.s[st.s.len() - 1]);
    let eval = CompanionEval::new(nl, 2.0 * s_lo - lb - 4.0, 2.0 * s_hi - lb + 4.0)?;
    let comp = nl.companion();
    let mut values = Vec::with_capacity(r_grid.len());
    let mut deriv = Vec::with_capacity(r_grid.len());
    for &r in r_grid {
        if !(r > 0.0) {
            return Err(Error::OutOfRange(format!("r = {r} is not positive")));
        }
        let s = r.ln();
        let (x, xp) = st.eval_x(s)?;
        let log_f0_tr = 2.0 * s - x - lb;
        let u = eval.zeta(log_f0_tr)?;
        values.push(u);
        deriv.push((comp.log_f(u) + log_f0_tr).exp() * (xp - 2.0) / r);
    }
    let mut p = RadialProfile::new(r_grid.to_vec(), values, deriv, st.n, None)?;
    p.meta.insert("nonlinearity".into(), nl.label().to_string());
    p.meta.insert("q".into(), num(st.q));
    p.meta.insert("residual".into(), num(st.ode_residual));
    Ok(p)
}

#[derive(Debug, Clone)]
pub struct ShootOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Radii landed on exactly, in addition to every accepted step.
    pub outputs: Vec<f64>,
}

impl Default for ShootOptions {
    fn default() -> Self {
        Self { rtol: 1e-11, atol: 1e-15, outputs: Vec::new() }
    }
}

/// Where a shooting profile left the admissible range (`Φ <= 0` for
/// nonlinearities that vanish at zero).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RangeExit {
    pub r: f64,
    pub value: f64,
}

/// Regular steady state with `Φ(0) = α`, `Φ'(0) = 0`.
pub fn shoot_regular(nl: &Nonlinearity, n: u32, alpha: f64, r_max: f64, opts: &ShootOptions) -> Result<(RadialProfile, Option<RangeExit>)> {
    if n < 1 || !(r_max > 0.0) || !alpha.is_finite() {
        return Err(Error::Domain(format!("shooting needs N >= 1, r_max > 0, finite α (got {n}, {r_max}, {alpha})")));
    }
    let vanishes_at_zero = nl.f(0.0) == 0.0;
    if vanishes_at_zero && !(alpha > 0.0) {
        return Err(Error::Domain(format!("center value must be positive for {}, got {alpha}", nl.label())));
    }
    let nf = n as f64;
    let fa = nl.f_checked(alpha)?;
    let fpa = nl.f_prime(alpha);
    // Taylor start radius: a small fraction of both r_max and the length
    // scale set by f near α.
    let scale = 1.0 / (fpa.abs() + fa / (1.0 + alpha.abs())).sqrt();
    let r0 = 1e-3 * r_max.min(scale);
    let c2 = -fa / (2.0 * nf);
    let c4 = fa * fpa / (8.0 * nf * (nf + 2.0));
    let taylor = |r: f64| (alpha + c2 * r * r + c4 * r.powi(4), 2.0 * c2 * r + 4.0 * c4 * r.powi(3));

    let mut r = vec![0.0];
    let mut v = vec![alpha];
    let mut d = vec![0.0];
    let mut outs: Vec<f64> = opts.outputs.iter().copied().filter(|&o| o > 0.0 && o <= r_max).collect();
    outs.sort_by(f64::total_cmp);
    outs.dedup();
    for &o in outs.iter().filter(|&&o| o < r0) {
        let (a, b) = taylor(o);
        r.push(o);
        v.push(a);
        d.push(b);
    }
    let (p0, d0) = taylor(r0);
    let mut exit = None;
    let mut overflow = false;
    let traj = ode::integrate(
        |t, y, dy| {
            dy[0] = y[1];
            dy[1] = -(nf - 1.0) * y[1] / t - nl.f(y[0]);
        },
        r0,
        &[p0, d0],
        r_max,
        &outs,
        IntegrateOptions { rtol: opts.rtol, atol: opts.atol, h_init: r0 * 0.1, h_min: r0 * 1e-12, ..Default::default() },
        |t, y| {
            if vanishes_at_zero && y[0] <= 0.0 {
                exit = Some(RangeExit { r: t, value: y[0] });
                return true;
            }
            if !nl.f(y[0]).is_finite() {
                overflow = true;
                return true;
            }
            false
        },
    )?;
    if overflow {
        return Err(Error::Overflow(format!("{}: f(Φ) overflowed while shooting", nl.label())));
    }
    for (t, y) in traj.t.iter().zip(&traj.y) {
        r.push(*t);
        v.push(y[0]);
        d.push(y[1]);
    }
    let mut p = RadialProfile::new(r, v, d, n, Some(alpha))?;
    p.meta.insert("nonlinearity".into(), nl.label().to_string());
    p.meta.insert("alpha".into(), num(alpha));
    Ok((p, exit))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nl(s: &str) -> Nonlinearity {
        s.parse().unwrap()
    }

    #[test]
    fn explicit_examples() {
        assert!(explicit_singular(ExplicitKind::Exp, 3, 2f64.sqrt()).unwrap().abs() < 1e-15);
        let v = explicit_singular(ExplicitKind::Power { p: 3.0 }, 5, 1.0).unwrap();
        assert!((v - 2f64.sqrt()).abs() < 1e-15);
        assert!(explicit_singular(ExplicitKind::Power { p: 1.5 }, 5, 1.0).is_err());
        assert!(explicit_singular(ExplicitKind::Exp, 2, 1.0).is_err());
        assert!(explicit_singular(ExplicitKind::Exp, 3, 0.0).is_err());
    }

    #[test]
    fn explicit_solution_residual() {
        // Independent check by centered differences of Φ*_3 in N = 5.
        for &r in &[0.1, 0.7, 3.0] {
            let f = |x: f64| explicit_singular(ExplicitKind::Power { p: 3.0 }, 5, x).unwrap();
            let h = 1e-4 * r;
            let d1 = (f(r + h) - f(r - h)) / (2.0 * h);
            let d2 = (f(r + h) - 2.0 * f(r) + f(r - h)) / (h * h);
            let res = d2 + 4.0 * d1 / r + f(r).powi(3);
            assert!(res.abs() / f(r).powi(3) < 1e-5, "{res}");
        }
    }

    #[test]
    fn kernel_branches() {
        let k = kernel_z(1.0, 5).unwrap();
        assert!(matches!(k.branch, KernelBranch::Complex { .. }));
        let k = kernel_z(1.0, 20).unwrap();
        assert!(matches!(k.branch, KernelBranch::Real { .. }));
        // a² = 4b: N + 2 - 4q = 4, 2N - 4q = 4 → N = 2, q = 0 (outside q >= 1 but a valid kernel).
        let k = kernel_z(0.0, 2).unwrap();
        assert!(matches!(k.branch, KernelBranch::Double { .. }));
        for k in [kernel_z(1.0, 5).unwrap(), kernel_z(1.0, 20).unwrap(), kernel_z(0.0, 2).unwrap()] {
            assert_eq!(k.z(0.0), 0.0);
            assert!((k.dz(0.0) - 1.0).abs() < 1e-15);
        }
        assert!(matches!(kernel_z(1.75, 5), Err(Error::Stability(_))));
    }

    #[test]
    fn picard_power_is_degenerate() {
        let f = nl("power:p=3");
        let st = picard_singular(&f, 1.5, 5, &PicardOptions::default()).unwrap();
        assert_eq!(st.iterations, 1);
        assert!(st.x.iter().all(|&x| x == 0.0));
        let r = [0.01, 0.05, 0.1];
        let p = transform_to_radial(&st, &f, &r).unwrap();
        for (i, &ri) in r.iter().enumerate() {
            let (v, d) = explicit_singular_with_derivative(ExplicitKind::Power { p: 3.0 }, 5, ri).unwrap();
            assert!((p.values[i] / v - 1.0).abs() < 1e-10);
            assert!((p.derivative[i] / d - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn shooting_starts_at_strict_maximum() {
        let (p, exit) = shoot_regular(&nl("power:p=3"), 5, 1.0, 5.0, &ShootOptions::default()).unwrap();
        assert!(exit.is_none());
        assert_eq!(p.derivative[0], 0.0);
        assert!(p.values[1] < 1.0);
    }

    #[test]
    fn profile_csv_round_trip() {
        let (p, _) = shoot_regular(&nl("exp"), 3, 0.0, 2.0, &ShootOptions::default()).unwrap();
        let back = RadialProfile::from_csv(&p.to_csv()).unwrap();
        assert_eq!(back, p);
    }
}
