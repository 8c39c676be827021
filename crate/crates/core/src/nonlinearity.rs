//! Nonlinear terms `f`, the transform `F(u) = ∫_u^∞ dη / f(η)`, the
//! exponent `q = lim f₀'(u) F₀(u)` and the critical exponents.
//!
//! Built-in families are evaluated in log space: with `ℓ = log f` the
//! transform factors as
//!
//! ```text
//! F(u) = exp(-ℓ(u)) / ℓ'(u) · J(u),   J(u) = ∫_0^∞ exp(-[ℓ(u + σ/ℓ'(u)) - ℓ(u)]) dσ,
//! ```
//!
//! and `J(u)` is exactly `f'(u) F(u)`. Increments of `ℓ` are formed without
//! cancellation per family, so neither `f` nor `F` has to be representable
//! for `log F` and `q` to be computed.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::{hermite, locate, Pchip};
use crate::quadrature;
use crate::roots;

const E: f64 = std::f64::consts::E;
/// Largest exponent handed to `exp` before the result is treated as overflow.
const EXP_LIMIT: f64 = 709.0;
/// Upper limit on `u` for families whose logarithm never overflows.
const U_CEILING: f64 = 1e300;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Family tag of a nonlinearity, with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Family {
    Power { p: f64 },
    PowerLog { p: f64, r1: f64 },
    /// `(u^p + u e^{sin u}) log(e+u)^{r1}`.
    PowerLogPerturbed { p: f64, r1: f64 },
    Exp,
    ExpPower { r2: f64 },
    /// `exp(u^{r2}) + u^{r3} cos² u`.
    ExpPowerPerturbed { r2: f64, r3: f64 },
    IteratedExp { n: u32 },
    Custom,
}

#[derive(Clone)]
pub struct Nonlinearity {
    label: String,
    family: Family,
    custom: Option<(ScalarFn, ScalarFn)>,
    companion: Option<Box<Nonlinearity>>,
    q_analytic: Option<f64>,
}

impl fmt::Debug for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Nonlinearity")
            .field("label", &self.label)
            .field("family", &self.family)
            .field("companion", &self.companion.as_ref().map(|c| c.label.clone()))
            .field("q_analytic", &self.q_analytic)
            .finish()
    }
}

fn iter_exp(n: u32, u: f64) -> f64 {
    let mut v = u;
    for _ in 0..n {
        v = v.exp();
    }
    v
}

impl Nonlinearity {
    pub fn new(family: Family) -> Result<Self> {
        let check = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Spec(format!("{what} (family {family:?})")))
            }
        };
        let (companion, q) = match family {
            Family::Power { p } => {
                check(p > 1.0 && p.is_finite(), "power requires p > 1")?;
                (None, Some(p / (p - 1.0)))
            }
            Family::PowerLog { p, r1 } => {
                check(p > 1.0 && p.is_finite() && r1.is_finite(), "power_log requires p > 1")?;
                (None, Some(p / (p - 1.0)))
            }
            Family::PowerLogPerturbed { p, r1 } => {
                check(p > 1.0 && p.is_finite() && r1.is_finite(), "power_log_perturbed requires p > 1")?;
                let c = Nonlinearity::new(Family::PowerLog { p, r1 })?;
                (Some(Box::new(c)), Some(p / (p - 1.0)))
            }
            Family::Exp => (None, Some(1.0)),
            Family::ExpPower { r2 } => {
                check(r2 > 0.0 && r2.is_finite(), "exp_power requires r2 > 0")?;
                (None, Some(1.0))
            }
            Family::ExpPowerPerturbed { r2, r3 } => {
                check(r2 > 0.0 && r3 > 0.0 && r2.is_finite() && r3.is_finite(), "exp_power_perturbed requires r2, r3 > 0")?;
                let c = Nonlinearity::new(Family::ExpPower { r2 })?;
                (Some(Box::new(c)), Some(1.0))
            }
            Family::IteratedExp { n } => {
                check(n >= 1, "iterexp requires n >= 1")?;
                (None, Some(1.0))
            }
            Family::Custom => return Err(Error::Spec("use Nonlinearity::custom for custom terms".into())),
        };
        let mut nl = Self { label: String::new(), family, custom: None, companion, q_analytic: q };
        nl.label = nl.to_string();
        Ok(nl)
    }

    /// A user-supplied `f` with its derivative. No companion is attached;
    /// `f` serves as its own companion.
    pub fn custom(label: &str, f: ScalarFn, f_prime: ScalarFn) -> Self {
        Self {
            label: label.to_string(),
            family: Family::Custom,
            custom: Some((f, f_prime)),
            companion: None,
            q_analytic: None,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn q_analytic(&self) -> Option<f64> {
        self.q_analytic
    }

    pub fn with_q(mut self, q: f64) -> Self {
        self.q_analytic = Some(q);
        self
    }

    pub fn has_companion(&self) -> bool {
        self.companion.is_some()
    }

    /// The companion `f₀`; built-in families without a perturbation are their
    /// own companion.
    pub fn companion(&self) -> &Nonlinearity {
        self.companion.as_deref().unwrap_or(self)
    }

    pub fn f(&self, u: f64) -> f64 {
        match self.family {
            Family::Power { p } => pw(u, p),
            Family::PowerLog { p, r1 } => pw(u, p) * pw((E + u).ln(), r1),
            Family::PowerLogPerturbed { p, r1 } => {
                (u.powf(p) + u * u.sin().exp()) * (E + u).ln().powf(r1)
            }
            Family::Exp => u.exp(),
            Family::ExpPower { r2 } => u.powf(r2).exp(),
            Family::ExpPowerPerturbed { r2, r3 } => {
                let c = u.cos();
                u.powf(r2).exp() + u.powf(r3) * c * c
            }
            Family::IteratedExp { n } => iter_exp(n, u),
            Family::Custom => (self.custom.as_ref().expect("custom fn").0)(u),
        }
    }

    pub fn f_prime(&self, u: f64) -> f64 {
        match self.family {
            Family::Power { p } => p * pw(u, p - 1.0),
            Family::PowerLog { p, r1 } => {
                let l = (E + u).ln();
                p * pw(u, p - 1.0) * pw(l, r1) + pw(u, p) * r1 * pw(l, r1 - 1.0) / (E + u)
            }
            Family::PowerLogPerturbed { p, r1 } => {
                let l = (E + u).ln();
                let g = u.powf(p) + u * u.sin().exp();
                let dg = p * u.powf(p - 1.0) + u.sin().exp() * (1.0 + u * u.cos());
                dg * l.powf(r1) + g * r1 * l.powf(r1 - 1.0) / (E + u)
            }
            Family::Exp => u.exp(),
            Family::ExpPower { r2 } => r2 * u.powf(r2 - 1.0) * u.powf(r2).exp(),
            Family::ExpPowerPerturbed { r2, r3 } => {
                let c = u.cos();
                r2 * u.powf(r2 - 1.0) * u.powf(r2).exp() + r3 * u.powf(r3 - 1.0) * c * c
                    - u.powf(r3) * (2.0 * u).sin()
            }
            Family::IteratedExp { n } => {
                let mut v = u;
                let mut prod = 1.0;
                for _ in 0..n {
                    v = v.exp();
                    prod *= v;
                }
                prod
            }
            Family::Custom => (self.custom.as_ref().expect("custom fn").1)(u),
        }
    }

    /// `f(u)` with an explicit overflow error instead of a silent infinity.
    pub fn f_checked(&self, u: f64) -> Result<f64> {
        let v = self.f(u);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Overflow(format!("{}: f({u}) is not representable", self.label)))
        }
    }

    /// `log f(u)`.
    pub fn log_f(&self, u: f64) -> f64 {
        match self.family {
            Family::Power { p } => p * u.ln(),
            Family::PowerLog { p, r1 } => p * u.ln() + r1 * (E + u).ln().ln(),
            Family::PowerLogPerturbed { p, r1 } => {
                p * u.ln() + (u.powf(1.0 - p) * u.sin().exp()).ln_1p() + r1 * (E + u).ln().ln()
            }
            Family::Exp => u,
            Family::ExpPower { r2 } => u.powf(r2),
            Family::ExpPowerPerturbed { r2, r3 } => {
                u.powf(r2) + self.exp_power_perturbation(u, r2, r3).ln_1p()
            }
            Family::IteratedExp { n } => iter_exp(n - 1, u),
            Family::Custom => self.f(u).ln(),
        }
    }

    fn exp_power_perturbation(&self, u: f64, r2: f64, r3: f64) -> f64 {
        let c = u.cos();
        u.powf(r3) * c * c * (-u.powf(r2)).exp()
    }

    /// `log(ℓ'(u))` where `ℓ = log f`; NaN when `ℓ'(u) <= 0`.
    pub fn log_dlogf(&self, u: f64) -> f64 {
        match self.family {
            Family::Power { p } => p.ln() - u.ln(),
            Family::Exp => 0.0,
            Family::ExpPower { r2 } if r2 == 1.0 => 0.0,
            Family::ExpPower { r2 } => r2.ln() + (r2 - 1.0) * u.ln(),
            Family::IteratedExp { n } => {
                // ℓ' = Π_{k=1}^{n-1} E_k(u), so log ℓ' = Σ_{k=0}^{n-2} E_k(u).
                let mut v = u;
                let mut sum = 0.0;
                for _ in 0..n.saturating_sub(1) {
                    sum += v;
                    v = v.exp();
                }
                sum
            }
            _ => {
                let d = self.dlogf(u);
                if d > 0.0 {
                    d.ln()
                } else {
                    f64::NAN
                }
            }
        }
    }

    /// `ℓ'(u) = f'(u) / f(u)`.
    pub fn dlogf(&self, u: f64) -> f64 {
        match self.family {
            Family::Power { p } => p / u,
            Family::PowerLog { p, r1 } => p / u + r1 / ((E + u) * (E + u).ln()),
            Family::PowerLogPerturbed { p, r1 } => {
                let g = u.powf(p) + u * u.sin().exp();
                let dg = p * u.powf(p - 1.0) + u.sin().exp() * (1.0 + u * u.cos());
                dg / g + r1 / ((E + u) * (E + u).ln())
            }
            Family::Exp => 1.0,
            Family::ExpPower { r2 } => r2 * u.powf(r2 - 1.0),
            Family::ExpPowerPerturbed { r2, r3 } => {
                let c = u.cos();
                let damp = (-u.powf(r2)).exp();
                (r2 * u.powf(r2 - 1.0)
                    + (r3 * u.powf(r3 - 1.0) * c * c - u.powf(r3) * (2.0 * u).sin()) * damp)
                    / (1.0 + u.powf(r3) * c * c * damp)
            }
            Family::IteratedExp { .. } => self.log_dlogf(u).exp(),
            Family::Custom => self.f_prime(u) / self.f(u),
        }
    }

    /// `ℓ(u + δ) - ℓ(u)` evaluated without catastrophic cancellation.
    pub fn log_f_increment(&self, u: f64, delta: f64) -> f64 {
        if u == 0.0 {
            return self.log_f(delta) - self.log_f(0.0);
        }
        match self.family {
            Family::Power { p } => p * (delta / u).ln_1p(),
            Family::PowerLog { p, r1 } => {
                let l = (E + u).ln();
                p * (delta / u).ln_1p() + r1 * ((delta / (E + u)).ln_1p() / l).ln_1p()
            }
            Family::PowerLogPerturbed { p, r1 } => {
                let l = (E + u).ln();
                let rho = |x: f64| (x.powf(1.0 - p) * x.sin().exp()).ln_1p();
                p * (delta / u).ln_1p() + rho(u + delta) - rho(u)
                    + r1 * ((delta / (E + u)).ln_1p() / l).ln_1p()
            }
            Family::Exp => delta,
            Family::ExpPower { r2 } => u.powf(r2) * (r2 * (delta / u).ln_1p()).exp_m1(),
            Family::ExpPowerPerturbed { r2, r3 } => {
                u.powf(r2) * (r2 * (delta / u).ln_1p()).exp_m1()
                    + self.exp_power_perturbation(u + delta, r2, r3).ln_1p()
                    - self.exp_power_perturbation(u, r2, r3).ln_1p()
            }
            Family::IteratedExp { n } => {
                let mut inc = delta;
                let mut e_k = u;
                for _ in 1..n {
                    e_k = e_k.exp();
                    if inc > EXP_LIMIT {
                        return f64::INFINITY;
                    }
                    inc = e_k * inc.exp_m1();
                }
                inc
            }
            Family::Custom => (self.f(u + delta) / self.f(u)).ln(),
        }
    }

    /// Largest `u` at which log-space evaluation (`ℓ`, `ℓ'`, increments)
    /// stays finite.
    pub fn log_space_cap(&self) -> f64 {
        match self.family {
            Family::ExpPower { r2 } | Family::ExpPowerPerturbed { r2, .. } => {
                U_CEILING.powf(1.0 / r2).min(U_CEILING)
            }
            Family::IteratedExp { n } if n >= 2 => {
                roots::bisect(|u| self.log_dlogf(u).min(1e6) - (EXP_LIMIT - 9.0), 0.0, EXP_LIMIT, 1e-12)
            }
            _ => U_CEILING,
        }
    }

    /// Largest `u` at which `f(u)` and `f'(u)` are representable.
    pub fn overflow_cap(&self) -> f64 {
        let target = EXP_LIMIT - 9.0;
        let g = |u: f64| {
            let l = self.log_f(u) + self.dlogf(u).max(1.0).ln();
            if l.is_nan() {
                f64::INFINITY
            } else {
                l - target
            }
        };
        if g(U_CEILING) < 0.0 {
            return U_CEILING;
        }
        // ℓ is increasing for large u for every built-in family.
        let mut lo = 1e-3;
        let mut hi = 1.0;
        while g(hi) < 0.0 {
            lo = hi;
            hi *= 2.0;
        }
        roots::bisect(g, lo, hi, 1e-12 * hi)
    }

    /// Closed-form `log F(u)` where one exists.
    fn analytic_log_transform(&self, u: f64) -> Option<f64> {
        match self.family {
            Family::Power { p } | Family::PowerLog { p, r1: 0.0 } => {
                Some((1.0 - p) * u.ln() - (p - 1.0).ln())
            }
            Family::Exp => Some(-u),
            _ => None,
        }
    }

    pub(crate) fn analytic_inverse_log(&self, log_v: f64) -> Option<f64> {
        match self.family {
            Family::Power { p } | Family::PowerLog { p, r1: 0.0 } => {
                Some(((p - 1.0).ln() + log_v).exp().powf(-1.0 / (p - 1.0)))
            }
            Family::Exp => Some(-log_v),
            _ => None,
        }
    }

    /// Closed-form `f'(u) F(u)` where it is constant.
    pub(crate) fn analytic_j(&self) -> Option<f64> {
        match self.family {
            Family::Power { p } | Family::PowerLog { p, r1: 0.0 } => Some(p / (p - 1.0)),
            Family::Exp => Some(1.0),
            _ => None,
        }
    }

    /// `∫_a^b f(η) dη`.
    pub fn integral(&self, a: f64, b: f64) -> Result<f64> {
        if a == b {
            return Ok(0.0);
        }
        let v = match self.family {
            Family::Power { p } => (b.powf(p + 1.0) - a.powf(p + 1.0)) / (p + 1.0),
            Family::Exp => b.exp() - a.exp(),
            _ => quadrature::integrate(|x| self.f(x), a, b, 0.0, 1e-12, 2000)?.value,
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Overflow(format!("{}: ∫f over [{a}, {b}] overflows", self.label)))
        }
    }

    pub fn has_analytic_transform(&self) -> bool {
        self.analytic_j().is_some()
    }

    fn admits_zero(&self) -> bool {
        let f0 = self.f(0.0);
        f0.is_finite() && f0 > 0.0
    }

    /// `J(u) = ∫_0^∞ exp(-[ℓ(u + σ/ℓ'(u)) - ℓ(u)]) dσ`, together with
    /// `log ℓ'(u)`. For `ℓ' <= 0` the scale `1 + u` is used and the integral
    /// is reported with its scale factor folded in.
    fn scaled_integral(&self, u: f64, rel_tol: f64) -> Result<(f64, f64)> {
        let log_lp = self.log_dlogf(u);
        if log_lp.is_finite() && log_lp < EXP_LIMIT - 9.0 && log_lp > -EXP_LIMIT + 9.0 {
            let scale = (-log_lp).exp();
            let r = quadrature::integrate_semi_infinite(
                |s| (-self.log_f_increment(u, s * scale)).exp(),
                0.0,
                rel_tol,
            )?;
            Ok((r.value, log_lp))
        } else if log_lp.is_finite() {
            Err(Error::Overflow(format!("{}: log ℓ'({u}) = {log_lp:e} out of range", self.label)))
        } else {
            let scale = 1.0 + u;
            let r = quadrature::integrate_semi_infinite(
                |s| (-self.log_f_increment(u, s * scale)).exp(),
                0.0,
                rel_tol,
            )?;
            // f'F = ℓ' · scale · r; log F = -ℓ + log(scale · r).
            Ok((r.value * scale, f64::NAN))
        }
    }

    /// `log F(u)` to relative accuracy `tol` in `F`.
    pub fn log_transform(&self, u: f64, tol: f64) -> Result<f64> {
        if !(u >= 0.0) || !u.is_finite() {
            return Err(Error::Domain(format!("F requires u >= 0, got {u}")));
        }
        if u == 0.0 && !self.admits_zero() {
            return Err(Error::Domain(format!("{}: F(0) diverges since f(0) = 0", self.label)));
        }
        if let Some(v) = self.analytic_log_transform(u) {
            return Ok(v);
        }
        let tol = tol.clamp(1e-14, 1e-2);
        if let Family::Custom = self.family {
            return self.custom_transform(u, tol).map(f64::ln);
        }
        if let Some(comp) = self.companion.as_deref() {
            if comp.has_analytic_transform() {
                return self.corrected_log_transform(comp, u, tol);
            }
        }
        if u > self.log_space_cap() {
            return Err(Error::Overflow(format!("{}: u = {u:e} beyond log-space cap", self.label)));
        }
        let (j, log_lp) = self.scaled_integral(u, tol * 0.1)?;
        if log_lp.is_nan() {
            Ok(-self.log_f(u) + j.ln())
        } else {
            Ok(-self.log_f(u) - log_lp + j.ln())
        }
    }

    /// `F = F₀ + ∫_u^∞ (1/f - 1/f₀)` with an analytic `F₀`.
    fn corrected_log_transform(&self, comp: &Nonlinearity, u: f64, tol: f64) -> Result<f64> {
        let log_f0 = comp.analytic_log_transform(u).expect("analytic companion");
        let log_lp = comp.log_dlogf(u);
        let scale = if log_lp.is_finite() { (-log_lp).exp() } else { 1.0 + u };
        let l0u = comp.log_f(u);
        let r = quadrature::integrate_semi_infinite(
            |s| {
                let eta = u + s * scale;
                let decay = (-comp.log_f_increment(u, s * scale)).exp();
                decay * (comp.log_f(eta) - self.log_f(eta)).exp_m1()
            },
            1e-300,
            tol * 0.1,
        )?;
        // correction = exp(-ℓ₀(u)) · scale · r
        let ratio = (-l0u - log_f0).exp() * scale * r.value;
        if ratio <= -1.0 {
            return Err(Error::Divergent(format!("{}: corrected transform is not positive", self.label)));
        }
        Ok(log_f0 + ratio.ln_1p())
    }

    /// Transform of a custom `f`: adaptive quadrature over doubling chunks
    /// `[u 2^k, u 2^{k+1}]` until the geometric tail bound contracts below
    /// tolerance.
    fn custom_transform(&self, u: f64, tol: f64) -> Result<f64> {
        let inv = |x: f64| 1.0 / self.f(x);
        let mut lo = u;
        let mut width = u.max(1.0);
        let mut total = 0.0;
        let mut prev_chunk = f64::NAN;
        let mut non_contracting = 0;
        for _ in 0..2000 {
            let hi = lo + width;
            // Sampled monotonicity check of f on the chunk.
            let samples: Vec<f64> = (0..=8).map(|i| self.f(lo + width * i as f64 / 8.0)).collect();
            if samples.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::Divergent(format!("{}: f not positive on [{lo}, {hi}]", self.label)));
            }
            let chunk = quadrature::integrate(inv, lo, hi, 0.0, tol * 0.01, 400)?.value;
            total += chunk;
            let ratio = chunk / prev_chunk;
            let nondecreasing = samples.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-12));
            if prev_chunk.is_nan() {
                // Need two chunks before the contraction ratio means anything.
            } else if ratio < 0.9 && nondecreasing {
                non_contracting = 0;
                let tail = chunk * ratio / (1.0 - ratio);
                if tail <= tol * 0.1 * total {
                    return Ok(total + tail);
                }
            } else {
                non_contracting += 1;
                if non_contracting >= 40 {
                    return Err(Error::Divergent(format!(
                        "{}: tail chunks stopped contracting near {hi:e}",
                        self.label
                    )));
                }
            }
            prev_chunk = chunk;
            lo = hi;
            width *= 2.0;
            if !lo.is_finite() || !self.f(lo).is_finite() {
                return Err(Error::Overflow(format!("{}: tail reached overflow before contracting", self.label)));
            }
        }
        Err(Error::Divergent(format!("{}: tail did not contract", self.label)))
    }

    /// `f'(u) F(u)` (the quantity whose limit is `q`).
    pub fn q_function(&self, u: f64, tol: f64) -> Result<f64> {
        if let Some(j) = self.analytic_j() {
            return Ok(j);
        }
        if let Family::Custom = self.family {
            let f_tr = self.custom_transform(u, tol)?;
            return Ok(self.f_prime(u) * f_tr);
        }
        if u > self.log_space_cap() {
            return Err(Error::Overflow(format!("{}: u = {u:e} beyond log-space cap", self.label)));
        }
        if self.companion.as_deref().is_some_and(Nonlinearity::has_analytic_transform) {
            let log_f = self.log_transform(u, tol)?;
            return Ok(self.dlogf(u) * (self.log_f(u) + log_f).exp());
        }
        let (j, log_lp) = self.scaled_integral(u, tol)?;
        if log_lp.is_nan() {
            Ok(self.dlogf(u) * j)
        } else {
            Ok(j)
        }
    }
}

impl fmt::Display for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            Family::Power { p } => write!(f, "power:p={p}"),
            Family::PowerLog { p, r1 } => write!(f, "power_log:p={p},r1={r1}"),
            Family::PowerLogPerturbed { p, r1 } => write!(f, "power_log_perturbed:p={p},r1={r1}"),
            Family::Exp => write!(f, "exp"),
            Family::ExpPower { r2 } => write!(f, "exp_power:r2={r2}"),
            Family::ExpPowerPerturbed { r2, r3 } => write!(f, "exp_power_perturbed:r2={r2},r3={r3}"),
            Family::IteratedExp { n } => write!(f, "iterexp:n={n}"),
            Family::Custom => write!(f, "custom:{}", self.label),
        }
    }
}

impl std::str::FromStr for Nonlinearity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, params) = s.split_once(':').unwrap_or((s, ""));
        let mut kv = std::collections::BTreeMap::new();
        for item in params.split(',').map(str::trim).filter(|x| !x.is_empty()) {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::Spec(format!("expected key=value in '{item}'")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Spec(format!("bad number '{v}' for {k}")))?;
            kv.insert(k.trim().to_string(), v);
        }
        let mut take = |k: &str, default: Option<f64>| -> Result<f64> {
            kv.remove(k)
                .or(default)
                .ok_or_else(|| Error::Spec(format!("'{name}' requires parameter {k}")))
        };
        let family = match name.trim() {
            "power" => Family::Power { p: take("p", None)? },
            "power_log" => Family::PowerLog { p: take("p", None)?, r1: take("r1", Some(1.0))? },
            "power_log_perturbed" | "f1" => {
                Family::PowerLogPerturbed { p: take("p", None)?, r1: take("r1", Some(1.0))? }
            }
            "exp" => Family::Exp,
            "exp_power" => Family::ExpPower { r2: take("r2", None)? },
            "exp_power_perturbed" | "f2" => {
                Family::ExpPowerPerturbed { r2: take("r2", None)?, r3: take("r3", Some(1.0))? }
            }
            "iterexp" | "iterated_exp" | "f3" => {
                let n = take("n", None)?;
                if n.fract() != 0.0 || n < 1.0 {
                    return Err(Error::Spec(format!("iterexp n must be a positive integer, got {n}")));
                }
                Family::IteratedExp { n: n as u32 }
            }
            other => return Err(Error::Spec(format!("unknown nonlinearity '{other}'"))),
        };
        if let Some(k) = kv.keys().next() {
            return Err(Error::Spec(format!("unexpected parameter '{k}' for '{name}'")));
        }
        Nonlinearity::new(family)
    }
}

/// `F(u)`. Errors with `Overflow` when `F(u)` underflows double precision;
/// use [`eval_log_f_transform`] in that regime.
pub fn eval_f_transform(nl: &Nonlinearity, u: f64, tol: f64) -> Result<f64> {
    let l = nl.log_transform(u, tol)?;
    let v = l.exp();
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Overflow(format!("{}: F({u}) = exp({l:e}) is not representable", nl.label())))
    }
}

pub fn eval_log_f_transform(nl: &Nonlinearity, u: f64, tol: f64) -> Result<f64> {
    nl.log_transform(u, tol)
}

/// `F⁻¹(v)`.
pub fn eval_f_inverse(nl: &Nonlinearity, v: f64, tol: f64) -> Result<f64> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::Domain(format!("F⁻¹ requires v > 0, got {v}")));
    }
    eval_f_inverse_log(nl, v.ln(), tol)
}

/// `F⁻¹(exp(log_v))`: geometric bracketing followed by Brent refinement on
/// `log F(u) - log_v`.
pub fn eval_f_inverse_log(nl: &Nonlinearity, log_v: f64, tol: f64) -> Result<f64> {
    if !log_v.is_finite() {
        return Err(Error::Domain(format!("F⁻¹ requires finite log v, got {log_v}")));
    }
    if let Some(u) = nl.analytic_inverse_log(log_v) {
        if u >= 0.0 && u.is_finite() {
            return Ok(u);
        }
        return Err(Error::Bracket(format!("{}: log v = {log_v} outside the range of F", nl.label())));
    }
    if nl.admits_zero() {
        let at_zero = nl.log_transform(0.0, tol)?;
        if log_v > at_zero {
            return Err(Error::Bracket(format!(
                "{}: log v = {log_v} exceeds log F(0) = {at_zero}",
                nl.label()
            )));
        }
        if log_v == at_zero {
            return Ok(0.0);
        }
    }
    let quad_tol = (tol * 1e-3).max(1e-13);
    let cap = nl.log_space_cap();
    let mut g = |u: f64| match nl.log_transform(u, quad_tol) {
        Ok(l) => l - log_v,
        Err(_) => f64::NAN,
    };
    let start = 1.0f64.min(cap * 0.5);
    let (lo, hi) = roots::bracket_geometric(&mut g, start, 4.0, 1e-300, cap, 2000)?;
    let u = roots::brent(&mut g, lo, hi, 1e-15 * hi, tol * 1e-3, 300)?;
    Ok(u)
}

/// Outcome of extrapolating `f₀'(u) F₀(u)` along a geometric grid.
#[derive(Debug, Clone, Serialize)]
pub struct QEstimate {
    pub q: f64,
    /// `(u, f₀'(u) F₀(u))` along the grid actually used.
    pub sequence: Vec<(f64, f64)>,
    /// Spread of the last five raw values.
    pub drift: f64,
    pub extrapolated: bool,
    pub converged: bool,
}

/// Geometric grid of `count` points ending at `min(u_max, cap)`.
pub fn q_grid(nl: &Nonlinearity, u_max: f64, count: usize) -> Vec<f64> {
    let hi = u_max.min(nl.companion().log_space_cap() * 0.999);
    let lo = if hi > 1e4 { (hi * 1e-8).max(1.0) } else { hi / 8.0 };
    let ratio = (hi / lo).powf(1.0 / (count.max(2) - 1) as f64);
    (0..count).map(|i| lo * ratio.powi(i as i32)).collect()
}

/// Extrapolates `q = lim f₀'(u)F₀(u)` along `u_grid` (a fit against
/// `1/log u` over the last five points), reporting the raw sequence.
pub fn estimate_q(nl: &Nonlinearity, u_grid: &[f64], tol: f64) -> Result<QEstimate> {
    let comp = nl.companion();
    let cap = comp.log_space_cap();
    let mut sequence = Vec::with_capacity(u_grid.len());
    for &u in u_grid.iter().filter(|&&u| u > 0.0 && u <= cap) {
        sequence.push((u, comp.q_function(u, 1e-12)?));
    }
    if sequence.len() < 5 {
        return Err(Error::Domain(format!("estimate_q needs at least 5 usable grid points, got {}", sequence.len())));
    }
    let tail = &sequence[sequence.len() - 5..];
    let (mn, mx) = tail.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &(_, j)| (a.min(j), b.max(j)));
    let drift = mx - mn;
    let diffs: Vec<f64> = tail.windows(2).map(|w| w[1].1 - w[0].1).collect();
    let sign_flips = diffs.windows(2).filter(|d| d[0] * d[1] < 0.0).count();
    let oscillating = sign_flips >= 2 && drift > tol;
    let (q, extrapolated) = if drift <= tol * 1e-2 {
        (tail[4].1, false)
    } else {
        // Least squares j ≈ q + c / log(e + u).
        let xs: Vec<f64> = tail.iter().map(|(u, _)| 1.0 / (E + u).ln()).collect();
        let ys: Vec<f64> = tail.iter().map(|(_, j)| *j).collect();
        let n = xs.len() as f64;
        let mx_ = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx_) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx_) * (x - mx_)).sum();
        let slope = sxy / sxx;
        (my - slope * mx_, true)
    };
    Ok(QEstimate { q, sequence, drift, extrapolated, converged: !oscillating && q >= 1.0 - tol })
}

/// Critical exponents for dimension `N`; infinite values are `f64::INFINITY`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CriticalExponents {
    pub n: u32,
    pub p_s: f64,
    pub p_jl: f64,
    pub q_s: f64,
    pub q_jl: f64,
}

pub fn critical_exponents(n: u32) -> Result<CriticalExponents> {
    if n < 1 {
        return Err(Error::Domain("dimension must be >= 1".into()));
    }
    let nf = n as f64;
    let (p_s, q_s) = if n <= 2 { (f64::INFINITY, 1.0) } else { ((nf + 2.0) / (nf - 2.0), (nf + 2.0) / 4.0) };
    let (p_jl, q_jl) = if n <= 10 {
        (f64::INFINITY, 1.0)
    } else {
        let root = (nf - 1.0).sqrt();
        (1.0 + 4.0 / (nf - 4.0 - 2.0 * root), (nf - 2.0 * root) / 4.0)
    };
    Ok(CriticalExponents { n, p_s, p_jl, q_s, q_jl })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum A3Verdict {
    Satisfied,
    Violated,
    Boundary,
}

/// Tolerance for deciding that `q` sits on `q_S` or `q_JL`.
pub const EPS_Q: f64 = 1e-3;

pub fn check_a3(q: f64, n: u32) -> Result<A3Verdict> {
    let ce = critical_exponents(n)?;
    if n >= 3 && ((q - ce.q_s).abs() <= EPS_Q || (n >= 11 && (q - ce.q_jl).abs() <= EPS_Q)) {
        return Ok(A3Verdict::Boundary);
    }
    let interior = n >= 3 && ce.q_jl < q && q < ce.q_s;
    let exp_like = (3..=9).contains(&n) && (q - 1.0).abs() <= EPS_Q;
    Ok(if interior || exp_like { A3Verdict::Satisfied } else { A3Verdict::Violated })
}

/// Tabulated `log F₀` and `f₀'F₀` on a log-`u` grid, used where `F₀` has no
/// closed form and must be inverted many times (the singular steady state).
#[derive(Debug, Clone)]
pub struct TransformTable {
    x: Vec<f64>,
    log_f: Vec<f64>,
    dlog_f: Vec<f64>,
    q_fn: Pchip,
}

impl TransformTable {
    /// Tabulates `nl` for `u ∈ [u_lo, u_hi]` with spacing `dx` in `log u`.
    pub fn build(nl: &Nonlinearity, u_lo: f64, u_hi: f64, dx: f64) -> Result<Self> {
        if !(u_lo > 0.0 && u_hi > u_lo) {
            return Err(Error::Domain(format!("bad table range [{u_lo}, {u_hi}]")));
        }
        let (x0, x1) = (u_lo.ln(), u_hi.ln());
        let n = ((x1 - x0) / dx).ceil().max(2.0) as usize;
        let step = (x1 - x0) / n as f64;
        let mut x = Vec::with_capacity(n + 1);
        let mut log_f = Vec::with_capacity(n + 1);
        let mut dlog_f = Vec::with_capacity(n + 1);
        let mut qs = Vec::with_capacity(n + 1);
        for i in 0..=n {
            let xi = x0 + step * i as f64;
            let u = xi.exp();
            let lf = nl.log_transform(u, 1e-13)?;
            let j = nl.q_function(u, 1e-13)?;
            // d log F / d log u = -u / (f F) = -u ℓ' / J
            let d = -(u * nl.dlogf(u)) / j;
            x.push(xi);
            log_f.push(lf);
            dlog_f.push(d);
            qs.push(j);
        }
        let q_fn = Pchip::new(&x, &qs);
        Ok(Self { x, log_f, dlog_f, q_fn })
    }

    pub fn u_range(&self) -> (f64, f64) {
        (self.x[0].exp(), self.x[self.x.len() - 1].exp())
    }

    pub fn log_transform(&self, u: f64) -> Result<f64> {
        let xi = u.ln();
        if xi < self.x[0] - 1e-12 || xi > self.x[self.x.len() - 1] + 1e-12 {
            return Err(Error::OutOfRange(format!("u = {u:e} outside table")));
        }
        let i = locate(&self.x, xi);
        Ok(hermite(self.x[i], self.x[i + 1], self.log_f[i], self.log_f[i + 1], self.dlog_f[i], self.dlog_f[i + 1], xi).0)
    }

    pub fn q_function(&self, u: f64) -> f64 {
        self.q_fn.eval(u.ln())
    }

    /// `F₀⁻¹(exp(log_v))` by Newton iteration on the Hermite interpolant.
    pub fn inverse_log(&self, log_v: f64) -> Result<f64> {
        let n = self.x.len();
        // log_f is decreasing in x.
        if log_v > self.log_f[0] + 1e-12 || log_v < self.log_f[n - 1] - 1e-12 {
            return Err(Error::OutOfRange(format!("log v = {log_v} outside table")));
        }
        let (mut lo, mut hi) = (0usize, n - 1);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.log_f[mid] >= log_v {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (xa, xb) = (self.x[lo], self.x[hi]);
        let eval = |x: f64| hermite(xa, xb, self.log_f[lo], self.log_f[hi], self.dlog_f[lo], self.dlog_f[hi], x);
        let (mut a, mut b) = (xa, xb);
        let t = (log_v - self.log_f[lo]) / (self.log_f[hi] - self.log_f[lo]);
        let mut x = xa + t.clamp(0.0, 1.0) * (xb - xa);
        for _ in 0..60 {
            let (v, d) = eval(x);
            let r = v - log_v;
            if r > 0.0 {
                a = x;
            } else {
                b = x;
            }
            if r.abs() < 1e-15 * (1.0 + log_v.abs()) {
                break;
            }
            let mut next = x - r / d;
            if !(next > a && next < b) || !next.is_finite() {
                next = 0.5 * (a + b);
            }
            if (next - x).abs() < 1e-16 * (1.0 + x.abs()) {
                x = next;
                break;
            }
            x = next;
        }
        Ok(x.exp())
    }
}

/// `u^p` with an integer fast path.
fn pw(u: f64, p: f64) -> f64 {
    if p == p.trunc() && p.abs() <= 16.0 && u >= 0.0 {
        u.powi(p as i32)
    } else {
        u.powf(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nl(s: &str) -> Nonlinearity {
        s.parse().unwrap()
    }

    #[test]
    fn parse_and_render_round_trip() {
        for s in [
            "power:p=3",
            "power_log:p=3,r1=1",
            "exp",
            "exp_power:r2=2",
            "iterexp:n=3",
            "power_log_perturbed:p=2.5,r1=-1",
            "exp_power_perturbed:r2=2,r3=1.5",
        ] {
            assert_eq!(nl(s).to_string(), s);
        }
        assert!(matches!("power".parse::<Nonlinearity>(), Err(Error::Spec(_))));
        assert!(matches!("power:p=0.5".parse::<Nonlinearity>(), Err(Error::Spec(_))));
        assert!(matches!("power:p=3,z=1".parse::<Nonlinearity>(), Err(Error::Spec(_))));
        assert!(matches!("sinh".parse::<Nonlinearity>(), Err(Error::Spec(_))));
    }

    #[test]
    fn derivatives_match_centered_differences() {
        let specs = [
            "power:p=3",
            "power_log:p=3,r1=1",
            "power_log_perturbed:p=3,r1=1",
            "exp",
            "exp_power:r2=2",
            "exp_power_perturbed:r2=2,r3=1",
            "iterexp:n=2",
            "iterexp:n=3",
        ];
        for s in specs {
            let f = nl(s);
            for &u in &[0.3, 0.9, 1.3, 1.7] {
                let h = 1e-7 * u;
                let fd = (f.f(u + h) - f.f(u - h)) / (2.0 * h);
                let rel = (fd - f.f_prime(u)).abs() / f.f_prime(u).abs();
                assert!(rel < 1e-5, "{s} at {u}: fd {fd} vs {}", f.f_prime(u));
                let dl = (f.log_f(u + h) - f.log_f(u - h)) / (2.0 * h);
                assert!((dl - f.dlogf(u)).abs() / f.dlogf(u).abs() < 1e-5, "{s} dlogf at {u}");
            }
        }
    }

    #[test]
    fn increments_match_direct_differences() {
        for s in ["power_log:p=3,r1=1", "exp_power:r2=2", "iterexp:n=3", "power_log_perturbed:p=3,r1=1", "exp_power_perturbed:r2=2,r3=1"] {
            let f = nl(s);
            for &(u, d) in &[(1.2, 0.3), (1.5, 0.01)] {
                let direct = f.log_f(u + d) - f.log_f(u);
                assert!((f.log_f_increment(u, d) - direct).abs() < 1e-10 * (1.0 + direct.abs()), "{s}");
            }
        }
    }

    #[test]
    fn positivity_on_grid() {
        for s in ["power_log_perturbed:p=2,r1=-2", "exp_power_perturbed:r2=0.5,r3=2", "iterexp:n=3"] {
            let f = nl(s);
            for k in 1..200 {
                let u = 0.01 * k as f64;
                assert!(f.f(u) > 0.0, "{s} at {u}");
            }
        }
    }

    #[test]
    fn companion_ratio_tends_to_one() {
        let f1 = nl("power_log_perturbed:p=3,r1=1");
        let f2 = nl("exp_power_perturbed:r2=2,r3=1");
        for f in [&f1, &f2] {
            let c = f.companion();
            assert!(f.has_companion());
            let u = 1e6;
            let ratio = (f.log_f(u) - c.log_f(u)).exp();
            assert!((ratio - 1.0).abs() < 0.05, "{} ratio {ratio}", f.label());
            let u = 1e8;
            let ratio = (f.log_f(u) - c.log_f(u)).exp();
            assert!((ratio - 1.0).abs() <= 0.01, "{} ratio {ratio}", f.label());
        }
    }

    #[test]
    fn trivial_transform_values() {
        assert!((eval_f_transform(&nl("power:p=2"), 10.0, 1e-12).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(eval_f_transform(&nl("exp"), 0.0, 1e-12).unwrap(), 1.0);
        assert!((eval_f_inverse(&nl("exp"), (-1f64).exp(), 1e-12).unwrap() - 1.0).abs() < 1e-15);
        assert!((eval_f_inverse(&nl("power:p=2"), 0.25, 1e-12).unwrap() - 4.0).abs() < 1e-13);
    }

    #[test]
    fn numeric_route_agrees_with_closed_forms() {
        // exp_power with r2 = 1 is e^u, iterexp n = 1 as well.
        for s in ["exp_power:r2=1", "iterexp:n=1"] {
            let f = nl(s);
            for &u in &[0.0, 0.5, 3.0, 40.0] {
                let l = f.log_transform(u, 1e-12).unwrap();
                assert!((l + u).abs() < 1e-10, "{s} at {u}: {l}");
                assert!((f.q_function(u.max(0.1), 1e-12).unwrap() - 1.0).abs() < 1e-10);
            }
        }
        // power_log with r1 = 0 through the numerical route.
        let f = Nonlinearity { q_analytic: None, ..nl("power_log:p=3,r1=0.0") };
        let g = nl("power_log_perturbed:p=3,r1=0");
        assert!(g.companion().has_analytic_transform());
        let exact = (1.0f64 - 3.0) * 5f64.ln() - 2f64.ln();
        assert!((f.log_transform(5.0, 1e-12).unwrap() - exact).abs() < 1e-13);
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(eval_f_transform(&nl("power:p=2"), 0.0, 1e-8), Err(Error::Domain(_))));
        assert!(matches!(eval_f_transform(&nl("exp"), -1.0, 1e-8), Err(Error::Domain(_))));
        assert!(matches!(eval_f_inverse(&nl("exp"), 2.0, 1e-8), Err(Error::Bracket(_))));
        assert!(matches!(eval_f_transform(&nl("exp_power:r2=2"), 1e6, 1e-8), Err(Error::Overflow(_))));
        assert!(eval_log_f_transform(&nl("exp_power:r2=2"), 1e6, 1e-8).is_ok());
    }

    #[test]
    fn custom_matches_power() {
        let c = Nonlinearity::custom("cube", Arc::new(|u: f64| u * u * u), Arc::new(|u: f64| 3.0 * u * u));
        let v = eval_f_transform(&c, 2.0, 1e-10).unwrap();
        assert!((v - 0.125).abs() < 1e-9 * 0.125, "{v}");
        let inv = eval_f_inverse(&c, 0.125, 1e-10).unwrap();
        assert!((inv - 2.0).abs() < 1e-6);
        let lin = Nonlinearity::custom("linear", Arc::new(|u: f64| 1.0 + u), Arc::new(|_| 1.0));
        assert!(matches!(eval_f_transform(&lin, 1.0, 1e-8), Err(Error::Divergent(_))));
    }

    #[test]
    fn q_values() {
        let g = q_grid(&nl("power:p=3"), 1e8, 17);
        assert!((estimate_q(&nl("power:p=3"), &g, 1e-2).unwrap().q - 1.5).abs() < 1e-12);
        let g = q_grid(&nl("exp"), 1e8, 17);
        assert!((estimate_q(&nl("exp"), &g, 1e-2).unwrap().q - 1.0).abs() < 1e-12);
        let f = nl("power_log:p=2,r1=1");
        let est = estimate_q(&f, &q_grid(&f, 1e8, 17), 1e-2).unwrap();
        assert!((est.q - 2.0).abs() < 1e-2, "{est:?}");
        assert!(est.extrapolated);
    }

    #[test]
    fn exponents() {
        let c3 = critical_exponents(3).unwrap();
        assert_eq!((c3.p_s, c3.q_s), (5.0, 1.25));
        assert!(c3.p_jl.is_infinite() && c3.q_jl == 1.0);
        let c1 = critical_exponents(1).unwrap();
        assert!(c1.p_s.is_infinite() && c1.q_s == 1.0);
        assert!(critical_exponents(10).unwrap().p_jl.is_infinite());
        assert!(critical_exponents(0).is_err());
        for n in 3..40 {
            let c = critical_exponents(n).unwrap();
            if n >= 11 {
                assert!(c.p_jl > c.p_s);
                assert!(c.q_jl < c.q_s);
            }
            assert!((c.q_s - c.p_s / (c.p_s - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn a3_examples() {
        assert_eq!(check_a3(1.0, 5).unwrap(), A3Verdict::Satisfied);
        assert_eq!(check_a3(1.5, 11).unwrap(), A3Verdict::Satisfied);
        assert_eq!(check_a3(1.25, 3).unwrap(), A3Verdict::Boundary);
        assert_eq!(check_a3(1.0, 10).unwrap(), A3Verdict::Violated);
        assert_eq!(check_a3(2.0, 5).unwrap(), A3Verdict::Violated);
        assert_eq!(check_a3(1.5, 2).unwrap(), A3Verdict::Violated);
    }

    #[test]
    fn table_matches_direct_evaluation() {
        let f = nl("power_log:p=3,r1=1");
        let t = TransformTable::build(&f, 2.0, 1e6, 0.02).unwrap();
        for &u in &[3.3, 77.0, 5.5e4] {
            let direct = f.log_transform(u, 1e-13).unwrap();
            assert!((t.log_transform(u).unwrap() - direct).abs() < 1e-9);
            let back = t.inverse_log(direct).unwrap();
            assert!((back / u - 1.0).abs() < 1e-9, "{back} vs {u}");
            assert!((t.q_function(u) - f.q_function(u, 1e-13).unwrap()).abs() < 1e-6);
        }
        assert!(t.inverse_log(10.0).is_err());
    }
}
