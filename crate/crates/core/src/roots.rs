//! Bracketing and safeguarded secant/bisection root finding.

use crate::error::{Error, Result};

/// Brent's method on a bracket `[a, b]` with `g(a)` and `g(b)` of opposite
/// sign. Stops when the bracket is narrower than `x_tol` or `|g| <= g_tol`.
pub fn brent<G: FnMut(f64) -> f64>(
    mut g: G,
    a: f64,
    b: f64,
    x_tol: f64,
    g_tol: f64,
    max_iter: usize,
) -> Result<f64> {
    let (mut a, mut b) = (a, b);
    let mut fa = g(a);
    let mut fb = g(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::Bracket(format!("g({a}) = {fa}, g({b}) = {fb}")));
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * x_tol;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb.abs() <= g_tol {
            return Ok(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = g(b);
    }
    Err(Error::NonConvergence(format!("brent: {max_iter} iterations")))
}

/// Expands `[lo, hi]` geometrically (in the positive half-line) until `g`
/// changes sign, staying within `[floor, ceiling]`.
pub fn bracket_geometric<G: FnMut(f64) -> f64>(
    mut g: G,
    start: f64,
    factor: f64,
    floor: f64,
    ceiling: f64,
    max_expansions: usize,
) -> Result<(f64, f64)> {
    let mut lo = start / factor;
    let mut hi = start * factor;
    let mut glo = g(lo);
    let mut ghi = g(hi);
    for _ in 0..max_expansions {
        if glo.is_finite() && ghi.is_finite() && glo.signum() != ghi.signum() {
            return Ok((lo, hi));
        }
        // Move the endpoint whose value is closer to a root by magnitude.
        let grow_hi = !glo.is_finite() || (ghi.is_finite() && ghi.abs() < glo.abs());
        if grow_hi && hi < ceiling {
            lo = hi;
            glo = ghi;
            hi = (hi * factor).min(ceiling);
            ghi = g(hi);
        } else if lo > floor {
            hi = lo;
            ghi = glo;
            lo = (lo / factor).max(floor);
            glo = g(lo);
        } else if hi < ceiling {
            lo = hi;
            glo = ghi;
            hi = (hi * factor).min(ceiling);
            ghi = g(hi);
        } else {
            break;
        }
    }
    if glo.is_finite() && ghi.is_finite() && glo.signum() != ghi.signum() {
        return Ok((lo, hi));
    }
    Err(Error::Bracket(format!(
        "no sign change within [{floor:e}, {ceiling:e}] starting from {start:e}"
    )))
}

/// Plain bisection: returns the midpoint once the bracket is narrower than `width`.
pub fn bisect<G: FnMut(f64) -> f64>(mut g: G, mut a: f64, mut b: f64, width: f64) -> f64 {
    let mut ga = g(a);
    for _ in 0..200 {
        if (b - a).abs() <= width {
            break;
        }
        let m = 0.5 * (a + b);
        let gm = g(m);
        if gm == 0.0 {
            return m;
        }
        if gm.signum() == ga.signum() {
            a = m;
            ga = gm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brent_finds_sqrt2() {
        let r = brent(|x| x * x - 2.0, 0.0, 2.0, 1e-15, 0.0, 100).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn brent_rejects_non_bracket() {
        assert!(matches!(brent(|x| x * x + 1.0, -1.0, 1.0, 1e-12, 0.0, 50), Err(Error::Bracket(_))));
    }

    #[test]
    fn geometric_bracket_expands_upward_and_downward() {
        let (lo, hi) = bracket_geometric(|x| x - 1e5, 1.0, 2.0, 1e-300, 1e300, 200).unwrap();
        assert!(lo <= 1e5 && hi >= 1e5);
        let (lo, hi) = bracket_geometric(|x| 1e-7 - x, 1.0, 2.0, 1e-300, 1e300, 200).unwrap();
        assert!(lo <= 1e-7 && hi >= 1e-7);
    }

    #[test]
    fn bisection_width() {
        let r = bisect(|x| x.cos(), 1.0, 2.0, 1e-12);
        assert!((r - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }
}
