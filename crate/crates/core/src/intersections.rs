//! Zero counting of differences of radial profiles.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::interp::Pchip;
use crate::io::CsvTable;
use crate::pde::RunRecord;
use crate::roots;
use crate::steady::RadialProfile;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct IntersectOptions {
    pub eps_abs: f64,
    pub eps_rel: f64,
    /// Zeros closer than this many local grid cells are merged.
    pub min_sep_cells: f64,
}

impl Default for IntersectOptions {
    fn default() -> Self {
        Self { eps_abs: 1e-13, eps_rel: 1e-9, min_sep_cells: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntersectionReport {
    /// Interval actually examined (the lower end is clipped to where both
    /// profiles are defined).
    pub interval: (f64, f64),
    pub count: usize,
    pub zero_locations: Vec<f64>,
    pub min_gap: f64,
    pub tolerance_used: f64,
    /// Places where the difference dips into the noise floor without
    /// changing sign, and zeros removed when merging close pairs.
    pub near_touches: Vec<f64>,
}

/// Counts sign changes of `a - b` on `(lo, hi]`.
pub fn count_intersections(
    a: &RadialProfile,
    b: &RadialProfile,
    interval: (f64, f64),
    opts: &IntersectOptions,
) -> Result<IntersectionReport> {
    let (lo_req, hi) = interval;
    let (a0, a1) = a.domain();
    let (b0, b1) = b.domain();
    let lo = lo_req.max(a0).max(b0);
    if !(hi > lo) || hi > a1.min(b1) * (1.0 + 1e-12) {
        return Err(Error::InsufficientOverlap(format!(
            "requested ({lo_req}, {hi}], profiles cover [{a0}, {a1}] and [{b0}, {b1}]"
        )));
    }
    let hi = hi.min(a1.min(b1));
    let mut grid: Vec<f64> = a
        .r
        .iter()
        .chain(&b.r)
        .copied()
        .filter(|&r| r >= lo && r <= hi)
        .chain([lo, hi])
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup_by(|x, y| (*x - *y).abs() <= 1e-14 * y.abs().max(1e-300));
    let pa = Pchip::new(&a.r, &a.values);
    let pb = Pchip::new(&b.r, &b.values);
    let diff = |r: f64| pa.eval(r) - pb.eval(r);
    let floor = |r: f64| opts.eps_abs.max(opts.eps_rel * pa.eval(r).abs().max(pb.eval(r).abs()));

    let d: Vec<f64> = grid.iter().map(|&r| diff(r)).collect();
    let tau: Vec<f64> = grid.iter().map(|&r| floor(r)).collect();
    let signs: Vec<i8> = d
        .iter()
        .zip(&tau)
        .map(|(&v, &t)| if v > t { 1 } else if v < -t { -1 } else { 0 })
        .collect();
    if signs.iter().all(|&s| s == 0) {
        return Err(Error::Indistinguishable);
    }

    let width = 1e-10 * (hi - lo);
    let mut zeros = Vec::new();
    let mut touches = Vec::new();
    let mut last: Option<usize> = None;
    for (i, &s) in signs.iter().enumerate() {
        if s == 0 {
            continue;
        }
        if let Some(j) = last {
            if signs[j] != s {
                let z = roots::bisect(diff, grid[j], grid[i], width);
                zeros.push(z);
            } else if i > j + 1 {
                touches.push(0.5 * (grid[j] + grid[i]));
            }
        }
        last = Some(i);
    }

    // Merge clusters of zeros closer than min_sep local cells; a cluster of
    // k zeros carries k mod 2 net sign changes.
    let local_h = |z: f64| {
        let i = grid.partition_point(|&g| g < z).clamp(1, grid.len() - 1);
        grid[i] - grid[i - 1]
    };
    let mut merged = Vec::new();
    let mut i = 0;
    while i < zeros.len() {
        let mut j = i;
        while j + 1 < zeros.len() && zeros[j + 1] - zeros[j] < opts.min_sep_cells * local_h(zeros[j]) {
            j += 1;
        }
        let cluster = &zeros[i..=j];
        if cluster.len() % 2 == 1 {
            let keep = cluster[cluster.len() / 2];
            merged.push(keep);
            touches.extend(cluster.iter().copied().filter(|&z| z != keep));
        } else {
            touches.extend_from_slice(cluster);
        }
        i = j + 1;
    }
    touches.sort_by(f64::total_cmp);
    let min_gap = merged.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let tolerance_used = tau.iter().copied().fold(0.0, f64::max);
    Ok(IntersectionReport {
        interval: (lo, hi),
        count: merged.len(),
        zero_locations: merged,
        min_gap,
        tolerance_used,
        near_touches: touches,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct IntersectionTrace {
    pub times: Vec<f64>,
    pub counts: Vec<usize>,
    pub locations: Vec<Vec<f64>>,
    /// Count shared by the final third of the series, if constant there.
    pub tail_value: Option<usize>,
}

impl IntersectionTrace {
    pub fn to_csv(&self) -> String {
        CsvTable {
            header: vec!["t".into(), "count".into()],
            rows: self.times.iter().zip(&self.counts).map(|(&t, &c)| vec![t, c as f64]).collect(),
            ..Default::default()
        }
        .render()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }
}

/// Intersection counts of every snapshot against `ustar` on `interval`.
/// Snapshots indistinguishable from `ustar` are recorded with count 0.
pub fn intersection_trace(
    run: &RunRecord,
    ustar: &RadialProfile,
    interval: (f64, f64),
    opts: &IntersectOptions,
) -> Result<IntersectionTrace> {
    let mut trace = IntersectionTrace { times: vec![], counts: vec![], locations: vec![], tail_value: None };
    for i in 0..run.snapshots.len() {
        let profile = run.snapshot_profile(i)?;
        let (count, locs) = match count_intersections(&profile, ustar, interval, opts) {
            Ok(rep) => (rep.count, rep.zero_locations),
            Err(Error::Indistinguishable) => (0, vec![]),
            Err(e) => return Err(e),
        };
        trace.times.push(run.snapshots[i].t);
        trace.counts.push(count);
        trace.locations.push(locs);
    }
    let n = trace.counts.len();
    if n > 0 {
        let tail = &trace.counts[n - n.div_ceil(3)..];
        if tail.iter().all(|&c| c == tail[0]) {
            trace.tail_value = Some(tail[0]);
        }
    }
    Ok(trace)
}
