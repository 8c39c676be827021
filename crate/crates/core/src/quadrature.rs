//! Globally adaptive Gauss–Kronrod (10/21 point) quadrature.

use crate::error::{Error, Result};

const XGK: [f64; 11] = [
    0.995_657_163_025_808_1,
    0.973_906_528_517_171_7,
    0.930_157_491_355_708_2,
    0.865_063_366_688_984_5,
    0.780_817_726_586_416_9,
    0.679_409_568_299_024_4,
    0.562_757_134_668_604_7,
    0.433_395_394_129_247_2,
    0.294_392_862_701_460_2,
    0.148_874_338_981_631_22,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874,
    0.032_558_162_307_964_725,
    0.054_755_896_574_351_995,
    0.075_039_674_810_919_96,
    0.093_125_454_583_697_6,
    0.109_387_158_802_297_64,
    0.123_491_976_262_065_84,
    0.134_709_217_311_473_34,
    0.142_775_938_577_060_09,
    0.147_739_104_901_338_49,
    0.149_445_554_002_916_9,
];

// Gauss weights for the odd-indexed Kronrod nodes (1, 3, ..., 9).
const WG: [f64; 5] = [
    0.066_671_344_308_688_14,
    0.149_451_349_150_580_6,
    0.219_086_362_515_982_04,
    0.269_266_719_309_996_35,
    0.295_524_224_714_752_87,
];

#[derive(Debug, Clone, Copy)]
pub struct QuadResult {
    pub value: f64,
    pub abs_error: f64,
    pub evaluations: usize,
}

fn gk21<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[10];
    let mut gauss = 0.0;
    for j in 0..10 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    let kronrod = kronrod * half;
    let gauss = gauss * half;
    (kronrod, (kronrod - gauss).abs())
}

/// Integrates `f` over `[a, b]` until the summed error estimate is below
/// `max(abs_tol, rel_tol * |I|)`.
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_intervals: usize,
) -> Result<QuadResult> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Domain(format!("non-finite limits [{a}, {b}]")));
    }
    if a == b {
        return Ok(QuadResult { value: 0.0, abs_error: 0.0, evaluations: 0 });
    }
    let (v, e) = gk21(&mut f, a, b);
    let mut intervals = vec![(a, b, v, e)];
    let mut evaluations = 21;
    loop {
        let total: f64 = intervals.iter().map(|iv| iv.2).sum();
        let err: f64 = intervals.iter().map(|iv| iv.3).sum();
        if !total.is_finite() {
            return Err(Error::Overflow("quadrature produced a non-finite sum".into()));
        }
        if err <= abs_tol.max(rel_tol * total.abs()) || intervals.len() >= max_intervals {
            if err > abs_tol.max(rel_tol * total.abs()) * 1e3 {
                return Err(Error::NonConvergence(format!(
                    "quadrature error {err:e} after {} subintervals",
                    intervals.len()
                )));
            }
            return Ok(QuadResult { value: total, abs_error: err, evaluations });
        }
        let (idx, _) = intervals
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("non-empty");
        let (lo, hi, _, _) = intervals.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            // Interval can no longer be split in floating point.
            return Ok(QuadResult { value: total, abs_error: err, evaluations });
        }
        let (v1, e1) = gk21(&mut f, lo, mid);
        let (v2, e2) = gk21(&mut f, mid, hi);
        evaluations += 42;
        intervals.push((lo, mid, v1, e1));
        intervals.push((mid, hi, v2, e2));
    }
}

/// Integrates over `[0, ∞)` as `∫_0^1 f + ∫_0^1 f(1/s) / s² ds`, which keeps
/// full floating-point resolution of the far tail.
pub fn integrate_semi_infinite<F: FnMut(f64) -> f64>(
    mut f: F,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<QuadResult> {
    let guard = |x: f64, v: f64| if v.is_finite() && x.is_finite() { v } else { 0.0 };
    let head = integrate(|x| guard(x, f(x)), 0.0, 1.0, abs_tol * 0.5, rel_tol, 1000)?;
    let tail = integrate(
        |s| {
            if s <= 0.0 {
                return 0.0;
            }
            let x = 1.0 / s;
            let v = f(x) / (s * s);
            guard(x, v)
        },
        0.0,
        1.0,
        abs_tol * 0.5,
        rel_tol,
        1000,
    )?;
    Ok(QuadResult {
        value: head.value + tail.value,
        abs_error: head.abs_error + tail.abs_error,
        evaluations: head.evaluations + tail.evaluations,
    })
}
