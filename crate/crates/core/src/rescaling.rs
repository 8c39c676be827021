//! Rescaled solutions around the blow-up point and the diagnostic bounds
//! checked on them.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::CsvTable;
use crate::nonlinearity::Nonlinearity;
use crate::pde::RunRecord;

/// The pair `(g_q, G_q)` with `G_q(η) = ∫_η^∞ dζ / g_q(ζ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GPair {
    pub q: f64,
}

pub fn g_g_pair(q: f64) -> Result<GPair> {
    if !(q >= 1.0) || !q.is_finite() {
        return Err(Error::Domain(format!("g_q needs q >= 1, got {q}")));
    }
    Ok(GPair { q })
}

impl GPair {
    pub fn g(&self, eta: f64) -> f64 {
        if self.q == 1.0 {
            eta.exp()
        } else {
            eta.powf(self.q / (self.q - 1.0))
        }
    }

    pub fn big_g(&self, eta: f64) -> f64 {
        if self.q == 1.0 {
            (-eta).exp()
        } else {
            (self.q - 1.0) * eta.powf(-1.0 / (self.q - 1.0))
        }
    }

    pub fn big_g_inv(&self, v: f64) -> f64 {
        self.big_g_inv_log(v.ln())
    }

    /// `G_q⁻¹(exp(log_v))`.
    pub fn big_g_inv_log(&self, log_v: f64) -> f64 {
        if self.q == 1.0 {
            -log_v
        } else {
            ((self.q - 1.0) * ((self.q - 1.0).ln() - log_v)).exp()
        }
    }

    /// `G_q'(η) / G_q(η)`.
    pub fn log_derivative(&self, eta: f64) -> f64 {
        if self.q == 1.0 {
            -1.0
        } else {
            -1.0 / ((self.q - 1.0) * eta)
        }
    }

    /// The value `G_q⁻¹(1)` taken by the limit profile at the origin.
    pub fn anchor(&self) -> f64 {
        self.big_g_inv_log(0.0)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RescaledProfile {
    pub t_i: f64,
    pub lambda: f64,
    pub q: f64,
    pub n: u32,
    pub y: Vec<f64>,
    pub tau: Vec<f64>,
    /// `v[k][j] = v^{t_i}(y_j, τ_k)`.
    pub v: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
    /// Underlying `u(λ y_j, t_i + λ² τ_k)`.
    pub u: Vec<Vec<f64>>,
}

/// Largest `t` inside the trusted part of the run.
pub fn trusted_window(run: &RunRecord) -> (f64, f64) {
    let end = run.trusted_end().max(1);
    (run.snapshots[0].t, run.snapshots[end - 1].t)
}

/// `log F(u(0, t))` with `u(0, ·)` linear between snapshots.
fn log_lambda_sq(run: &RunRecord, nl: &Nonlinearity, t: f64) -> Result<f64> {
    nl.log_transform(run.u_at(0.0, t)?, 1e-12)
}

/// Samples `v^{t_i}` and `w_i` on `[0, y_max] × [-τ_max, τ_max]` with
/// `ny + 1` radii and `2 nt + 1` times.
pub fn build_rescaled(
    run: &RunRecord,
    nl: &Nonlinearity,
    q: f64,
    t_i: f64,
    (y_max, ny): (f64, usize),
    (tau_max, nt): (f64, usize),
) -> Result<RescaledProfile> {
    let pair = g_g_pair(q)?;
    let (t_lo, t_hi) = trusted_window(run);
    if !(t_i >= t_lo && t_i <= t_hi) {
        return Err(Error::OutOfRange(format!("t_i = {t_i} outside trusted window [{t_lo}, {t_hi}]")));
    }
    let log_l2 = log_lambda_sq(run, nl, t_i)?;
    let l2 = log_l2.exp();
    let lambda = l2.sqrt();
    let h = run.grid.h;
    if lambda < run.config.resolution_factor * h {
        return Err(Error::ResolutionExhausted(format!(
            "lambda = {lambda:e} below {} h at t_i = {t_i}",
            run.config.resolution_factor
        )));
    }
    if lambda * y_max > run.grid.radius {
        return Err(Error::OutOfRange(format!("lambda y_max = {} exceeds R", lambda * y_max)));
    }
    if t_i - l2 * tau_max < t_lo || t_i + l2 * tau_max > t_hi {
        return Err(Error::OutOfRange(format!(
            "time window [{}, {}] leaves the trusted window [{t_lo}, {t_hi}]",
            t_i - l2 * tau_max,
            t_i + l2 * tau_max
        )));
    }
    let ny = ny.max(1);
    let nt = nt.max(1);
    let y: Vec<f64> = (0..=ny).map(|j| y_max * j as f64 / ny as f64).collect();
    let tau: Vec<f64> = (0..=2 * nt).map(|k| tau_max * (k as f64 - nt as f64) / nt as f64).collect();
    let f0 = nl.companion();
    let (mut v, mut w, mut uu) = (vec![], vec![], vec![]);
    for &tk in &tau {
        let t = t_i + l2 * tk;
        let (mut vr, mut wr, mut ur) = (vec![], vec![], vec![]);
        for &yj in &y {
            let u = run.u_at(lambda * yj, t)?;
            let vv = if yj == 0.0 && tk == 0.0 { 1.0 } else { (nl.log_transform(u, 1e-12)? - log_l2).exp() };
            vr.push(vv);
            wr.push(pair.big_g_inv_log(f0.log_transform(u, 1e-12)? - log_l2));
            ur.push(u);
        }
        v.push(vr);
        w.push(wr);
        uu.push(ur);
    }
    Ok(RescaledProfile { t_i, lambda, q, n: run.grid.n, y, tau, v, w, u: uu })
}

impl RescaledProfile {
    fn center(&self) -> usize {
        self.tau.len() / 2
    }

    pub fn v_origin(&self) -> f64 {
        self.v[self.center()][0]
    }

    pub fn w_origin(&self) -> f64 {
        self.w[self.center()][0]
    }

    pub fn to_csv(&self) -> String {
        let mut t = CsvTable { header: vec!["y".into(), "tau".into(), "v".into(), "w".into()], ..Default::default() };
        t.meta.insert("t_i".into(), crate::io::num(self.t_i));
        t.meta.insert("lambda".into(), crate::io::num(self.lambda));
        t.meta.insert("q".into(), crate::io::num(self.q));
        for (k, &tk) in self.tau.iter().enumerate() {
            for (j, &yj) in self.y.iter().enumerate() {
                t.rows.push(vec![yj, tk, self.v[k][j], self.w[k][j]]);
            }
        }
        t.render()
    }

    /// Sup of the residual of the exact equation satisfied by `w_i`,
    /// with derivatives from centered differences, over `|y| ≤ rho`,
    /// `|τ| ≤ tau0` (interior samples only).
    pub fn transformed_residual(&self, nl: &Nonlinearity, rho: f64, tau0: f64) -> Result<f64> {
        let pair = g_g_pair(self.q)?;
        let f0 = nl.companion();
        let dy = self.y[1] - self.y[0];
        let dt = self.tau[1] - self.tau[0];
        let nf = self.n as f64;
        let mut worst: f64 = 0.0;
        for k in 1..self.tau.len() - 1 {
            if self.tau[k].abs() > tau0 {
                continue;
            }
            for j in 0..self.y.len() - 1 {
                if self.y[j] > rho {
                    continue;
                }
                let w = &self.w;
                let wc = w[k][j];
                let (wy, lap) = if j == 0 {
                    (0.0, nf * 2.0 * (w[k][1] - wc) / (dy * dy))
                } else {
                    let wy = (w[k][j + 1] - w[k][j - 1]) / (2.0 * dy);
                    (wy, (w[k][j + 1] - 2.0 * wc + w[k][j - 1]) / (dy * dy) + (nf - 1.0) / self.y[j] * wy)
                };
                let wt = (w[k + 1][j] - w[k - 1][j]) / (2.0 * dt);
                let u = self.u[k][j];
                let ratio = nl.f(u) / f0.f(u);
                let jq = f0.q_function(u, 1e-10)?;
                let grad = if self.q == 1.0 { (jq - 1.0) * wy * wy } else { (jq - self.q) * wy * wy / ((self.q - 1.0) * wc) };
                let rhs = ratio * pair.g(wc) + grad;
                worst = worst.max((wt - lap - rhs).abs() / (1.0 + rhs.abs()));
            }
        }
        Ok(worst)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LambdaRatioReport {
    pub t: f64,
    pub lambda_sq: f64,
    /// `(τ, λ(t + λ(t)² τ)² / λ(t)²)`.
    pub samples: Vec<(f64, f64)>,
    /// Smallest `ε` with `1 - |τ| - ε ≤ ratio ≤ 1 + |τ| + ε` at every sample.
    pub worst_eps: f64,
}

/// Checks the two-sided bound on `λ²` along `t + λ(t)² τ`.
pub fn check_lambda_ratio(run: &RunRecord, t: f64, taus: &[f64]) -> Result<LambdaRatioReport> {
    let l2 = run.f_of_m_at(t)?;
    let mut rep = LambdaRatioReport { t, lambda_sq: l2, samples: vec![], worst_eps: 0.0 };
    for &tau in taus {
        let ratio = if tau == 0.0 { 1.0 } else { run.f_of_m_at(t + l2 * tau)? / l2 };
        let eps = ((1.0 - tau.abs()) - ratio).max(ratio - (1.0 + tau.abs())).max(0.0);
        rep.worst_eps = rep.worst_eps.max(eps);
        rep.samples.push((tau, ratio));
    }
    Ok(rep)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct VtBounds {
    pub min_v: f64,
    pub max_v: f64,
    pub max_grad: f64,
}

/// Extrema of `v` and of `|∂_y v|` over `|y| ≤ rho0`, `|τ| ≤ tau0`.
pub fn check_vt_bounds(rp: &RescaledProfile, rho0: f64, tau0: f64) -> Result<VtBounds> {
    let y_max = rp.y[rp.y.len() - 1];
    let tau_max = rp.tau[rp.tau.len() - 1];
    if rho0 > y_max * (1.0 + 1e-12) || tau0 > tau_max * (1.0 + 1e-12) {
        return Err(Error::OutOfRange(format!("profile covers |y| <= {y_max}, |tau| <= {tau_max}")));
    }
    let dy = rp.y[1] - rp.y[0];
    let mut b = VtBounds { min_v: f64::INFINITY, max_v: f64::NEG_INFINITY, max_grad: 0.0 };
    for (k, row) in rp.v.iter().enumerate() {
        if rp.tau[k].abs() > tau0 * (1.0 + 1e-12) {
            continue;
        }
        for j in 0..row.len() {
            if rp.y[j] > rho0 * (1.0 + 1e-12) {
                continue;
            }
            b.min_v = b.min_v.min(row[j]);
            b.max_v = b.max_v.max(row[j]);
            let g = if j == 0 {
                0.0
            } else if j + 1 < row.len() {
                (row[j + 1] - row[j - 1]) / (2.0 * dy)
            } else {
                (row[j] - row[j - 1]) / dy
            };
            b.max_grad = b.max_grad.max(g.abs());
        }
    }
    Ok(b)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CenterRatioReport {
    pub min_ratio: f64,
    /// `1 - 2 (q - 1) ρ₀² / (1 - τ₀)`.
    pub bound: f64,
}

/// `min u(λ y, t + λ² τ) / u(0, t + λ² τ)` over `|y| ≤ rho0`, `|τ| ≤ tau0`.
pub fn check_ratio_u_center(run: &RunRecord, nl: &Nonlinearity, q: f64, t: f64, rho0: f64, tau0: f64) -> Result<CenterRatioReport> {
    if !(tau0 > 0.0 && tau0 < 1.0) {
        return Err(Error::Domain(format!("tau0 must lie in (0, 1), got {tau0}")));
    }
    let rp = build_rescaled(run, nl, q, t, (rho0, 32), (tau0, 8))?;
    let mut min_ratio = f64::INFINITY;
    for row in &rp.u {
        for &u in row {
            min_ratio = min_ratio.min(u / row[0]);
        }
    }
    Ok(CenterRatioReport { min_ratio, bound: 1.0 - 2.0 * (q - 1.0) * rho0 * rho0 / (1.0 - tau0) })
}

/// Snapshot times `t_i` at which `F(M)` has dropped by successive factors
/// of `factor`, ending at the last trusted snapshot.
pub fn geometric_times(run: &RunRecord, factor: f64, count: usize) -> Vec<f64> {
    let end = run.trusted_end();
    if end == 0 {
        return vec![];
    }
    let f_end = run.snapshots[end - 1].f_of_m;
    let mut out = Vec::new();
    for i in (0..count).rev() {
        let target = f_end * factor.powi(i as i32);
        // The snapshot whose F(M) is closest to the target in log scale.
        if let Some(s) = run.snapshots[..end].iter().min_by(|a, b| {
            (a.f_of_m / target).ln().abs().total_cmp(&(b.f_of_m / target).ln().abs())
        }) {
            if out.last() != Some(&s.t) {
                out.push(s.t);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_identities() {
        for q in [1.0, 1.25, 1.5, 2.0, 3.0] {
            let p = g_g_pair(q).unwrap();
            for eta in [0.3, 1.0, 2.5, 7.0] {
                let h = 1e-6 * eta;
                let d = (p.big_g(eta + h) - p.big_g(eta - h)) / (2.0 * h);
                assert!((d + 1.0 / p.g(eta)).abs() < 1e-7 * (1.0 / p.g(eta)).max(1.0), "q={q} eta={eta}");
                let v = p.big_g(eta);
                assert!((p.big_g(p.big_g_inv(v)) - v).abs() <= 1e-12 * v.max(1.0));
            }
        }
        assert!(g_g_pair(0.9).is_err());
    }

    #[test]
    fn pair_values() {
        assert_eq!(g_g_pair(1.0).unwrap().big_g(0.0), 1.0);
        let p2 = g_g_pair(2.0).unwrap();
        assert!((p2.big_g(2.0) - 0.5).abs() < 1e-15);
        assert!((p2.g(3.0) - 9.0).abs() < 1e-12);
        assert!((g_g_pair(1.5).unwrap().anchor() - 0.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(g_g_pair(1.0).unwrap().anchor(), 0.0);
    }

    #[test]
    fn synthetic_lambda_ratio_is_exact() {
        let nl: Nonlinearity = "exp".parse().unwrap();
        let times: Vec<f64> = (0..200).map(|i| i as f64 * 0.004).collect();
        let run = RunRecord::synthetic_ode(&nl, 1.0, &times).unwrap();
        let rep = check_lambda_ratio(&run, 0.5, &[-0.5, -0.25, 0.0, 0.25, 0.5]).unwrap();
        assert!(rep.worst_eps < 1e-9, "{rep:?}");
        for (tau, r) in rep.samples {
            assert!((r - (1.0 - tau)).abs() < 1e-9);
        }
    }
}
