//! Runtime verdict on a completed run: bounded, type-I blow-up, or not.

use serde::{Deserialize, Serialize};

use crate::io::CsvTable;
use crate::nonlinearity::Nonlinearity;
use crate::pde::{RunRecord, Termination};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    GlobalBounded,
    #[serde(rename = "type_I")]
    TypeI,
    #[serde(rename = "type_II_suspect")]
    TypeIISuspect,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifyOptions {
    pub c_min: f64,
    pub spread: f64,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self { c_min: 0.1, spread: 50.0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BlowupReport {
    pub verdict: Verdict,
    pub t_est: Option<f64>,
    pub t_lower_bound: Option<f64>,
    pub ratio_series: Vec<(f64, f64)>,
    pub delta_series: Vec<(f64, f64)>,
    pub trusted_window: (f64, f64),
    /// Window of the last resolved `F(M)`-decade.
    pub decade_window: Option<(f64, f64)>,
    pub ratio_min: Option<f64>,
    pub ratio_max: Option<f64>,
    pub delta_min: Option<f64>,
    /// Range of `M'(t) / f(M(t))` over the decade window.
    pub derivative_quotient: Option<(f64, f64)>,
    pub argmax_settled: bool,
    pub termination: Termination,
    pub notes: Vec<String>,
}

impl BlowupReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn series_csv(&self) -> String {
        let mut t = CsvTable { header: vec!["t".into(), "ratio".into(), "delta".into()], ..Default::default() };
        for &(ti, r) in &self.ratio_series {
            let d = self.delta_series.iter().find(|x| x.0 == ti).map_or(f64::NAN, |x| x.1);
            t.rows.push(vec![ti, r, d]);
        }
        t.render()
    }
}

/// `(t, F(M(t)) / (T_est - t))` for snapshots before `T_est`.
pub fn ratio_series(run: &RunRecord, t_est: f64) -> Vec<(f64, f64)> {
    run.snapshots.iter().filter(|s| s.t < t_est).map(|s| (s.t, s.f_of_m / (t_est - s.t))).collect()
}

/// `δ(t_j) = max_{s > t_j} (F(M(t_j)) - F(M(s))) / (s - t_j)`.
pub fn delta_sup_series(run: &RunRecord) -> Vec<(f64, f64)> {
    let s = &run.snapshots;
    (0..s.len().saturating_sub(1))
        .map(|j| {
            let d = s[j + 1..]
                .iter()
                .map(|x| (s[j].f_of_m - x.f_of_m) / (x.t - s[j].t))
                .fold(f64::NEG_INFINITY, f64::max);
            (s[j].t, d)
        })
        .collect()
}

/// Least-squares `F(M) ≈ a - c t` on the given snapshots.
fn linear_fit(run: &RunRecord, idx: &[usize]) -> Option<(f64, f64)> {
    if idx.len() < 3 {
        return None;
    }
    let n = idx.len() as f64;
    let xs: Vec<f64> = idx.iter().map(|&i| run.snapshots[i].t).collect();
    let ys: Vec<f64> = idx.iter().map(|&i| run.snapshots[i].f_of_m).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let c = -sxy / sxx;
    (c > 0.0).then(|| ((my + c * mx) / c, c))
}

pub fn classify(run: &RunRecord, nl: &Nonlinearity, opts: &ClassifyOptions) -> BlowupReport {
    let end = run.trusted_end().max(1);
    let s = &run.snapshots;
    let mut rep = BlowupReport {
        verdict: Verdict::Inconclusive,
        t_est: None,
        t_lower_bound: None,
        ratio_series: vec![],
        delta_series: delta_sup_series(run),
        trusted_window: (s[0].t, s[end - 1].t),
        decade_window: None,
        ratio_min: None,
        ratio_max: None,
        delta_min: None,
        derivative_quotient: None,
        argmax_settled: run.settle_index().is_some(),
        termination: run.termination,
        notes: vec![],
    };
    if !rep.argmax_settled {
        rep.notes.push("argmax never settles at the origin".into());
    }

    if run.termination == Termination::Horizon {
        let t_end = run.last_time();
        let sup_after = |t0: f64| s.iter().filter(|x| x.t >= t0).map(|x| x.max_value).fold(f64::NEG_INFINITY, f64::max);
        let half = sup_after(0.5 * t_end);
        let quarter = sup_after(0.75 * t_end);
        if (half - quarter).abs() <= 0.01 * half.abs() {
            rep.verdict = Verdict::GlobalBounded;
        } else {
            rep.notes.push(format!("sup M over last half {half} vs last quarter {quarter}"));
        }
        return rep;
    }

    let idx = run.last_decade();
    let fit = match run.estimate_blowup_time() {
        Ok(f) => Some((f.t_est, f.lower_bound)),
        Err(e) => {
            rep.notes.push(format!("blow-up time fit: {e}"));
            linear_fit(run, &idx).map(|(t, _)| (t, s.iter().map(|x| x.t + x.f_of_m).fold(f64::NEG_INFINITY, f64::max)))
        }
    };
    let Some((t_est, lower)) = fit else {
        return rep;
    };
    rep.t_est = Some(t_est);
    rep.t_lower_bound = Some(lower);
    rep.ratio_series = ratio_series(run, t_est);
    let late: Vec<(f64, f64)> = idx
        .iter()
        .map(|&i| s[i].t)
        .filter_map(|t| rep.ratio_series.iter().find(|x| x.0 == t).copied())
        .collect();
    if late.is_empty() {
        rep.notes.push("no resolved snapshots before the estimated blow-up time".into());
        return rep;
    }
    rep.decade_window = Some((late[0].0, late[late.len() - 1].0));
    let rmin = late.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
    let rmax = late.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
    rep.ratio_min = Some(rmin);
    rep.ratio_max = Some(rmax);
    let (w0, w1) = rep.decade_window.unwrap();
    rep.delta_min = rep
        .delta_series
        .iter()
        .filter(|x| x.0 >= w0 && x.0 <= w1)
        .map(|x| x.1)
        .reduce(f64::min);

    let mut quotients = vec![];
    for w in idx.windows(2) {
        let (a, b) = (&s[w[0]], &s[w[1]]);
        let mid = 0.5 * (a.max_value + b.max_value);
        quotients.push((b.max_value - a.max_value) / (b.t - a.t) / nl.f(mid));
    }
    if !quotients.is_empty() {
        rep.derivative_quotient = Some((
            quotients.iter().copied().fold(f64::INFINITY, f64::min),
            quotients.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ));
    }

    let decreasing = late.len() >= 2 && late[late.len() - 1].1 < late[0].1;
    rep.verdict = if !rep.argmax_settled {
        Verdict::Inconclusive
    } else if run.termination == Termination::Threshold && rmin >= opts.c_min && rmax <= opts.c_min * opts.spread {
        Verdict::TypeI
    } else if rmin < opts.c_min && decreasing {
        Verdict::TypeIISuspect
    } else {
        Verdict::Inconclusive
    };
    rep
}
