//! Piecewise cubic interpolation on strictly increasing grids.

/// Index `i` with `xs[i] <= x <= xs[i + 1]`, clamped to valid cells.
pub fn locate(xs: &[f64], x: f64) -> usize {
    debug_assert!(xs.len() >= 2);
    match xs.binary_search_by(|v| v.total_cmp(&x)) {
        Ok(i) => i.min(xs.len() - 2),
        Err(0) => 0,
        Err(i) => (i - 1).min(xs.len() - 2),
    }
}

/// Cubic Hermite evaluation on `[x0, x1]` with values and slopes at the ends.
/// Returns value and derivative.
pub fn hermite(x0: f64, x1: f64, y0: f64, y1: f64, d0: f64, d1: f64, x: f64) -> (f64, f64) {
    let h = x1 - x0;
    let t = (x - x0) / h;
    let t2 = t * t;
    let t3 = t2 * t;
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + t;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    let value = h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1;
    let dh00 = (6.0 * t2 - 6.0 * t) / h;
    let dh10 = 3.0 * t2 - 4.0 * t + 1.0;
    let dh01 = (-6.0 * t2 + 6.0 * t) / h;
    let dh11 = 3.0 * t2 - 2.0 * t;
    let deriv = dh00 * y0 + dh10 * d0 + dh01 * y1 + dh11 * d1;
    (value, deriv)
}

/// Monotone cubic (Fritsch–Carlson / PCHIP) interpolant.
#[derive(Debug, Clone)]
pub struct Pchip {
    xs: Vec<f64>,
    ys: Vec<f64>,
    ds: Vec<f64>,
}

impl Pchip {
    pub fn new(xs: &[f64], ys: &[f64]) -> Self {
        assert_eq!(xs.len(), ys.len());
        assert!(xs.len() >= 2, "need at least two nodes");
        let n = xs.len();
        let slopes: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i])).collect();
        let mut ds = vec![0.0; n];
        if n == 2 {
            ds[0] = slopes[0];
            ds[1] = slopes[0];
        } else {
            for i in 1..n - 1 {
                let (s0, s1) = (slopes[i - 1], slopes[i]);
                if s0 * s1 <= 0.0 {
                    ds[i] = 0.0;
                } else {
                    let h0 = xs[i] - xs[i - 1];
                    let h1 = xs[i + 1] - xs[i];
                    let w1 = 2.0 * h1 + h0;
                    let w2 = h1 + 2.0 * h0;
                    ds[i] = (w1 + w2) / (w1 / s0 + w2 / s1);
                }
            }
            ds[0] = end_slope(xs[1] - xs[0], xs[2] - xs[1], slopes[0], slopes[1]);
            ds[n - 1] = end_slope(
                xs[n - 1] - xs[n - 2],
                xs[n - 2] - xs[n - 3],
                slopes[n - 2],
                slopes[n - 3],
            );
        }
        Self { xs: xs.to_vec(), ys: ys.to_vec(), ds }
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.eval_with_derivative(x).0
    }

    pub fn eval_with_derivative(&self, x: f64) -> (f64, f64) {
        let i = locate(&self.xs, x);
        hermite(
            self.xs[i],
            self.xs[i + 1],
            self.ys[i],
            self.ys[i + 1],
            self.ds[i],
            self.ds[i + 1],
            x,
        )
    }
}

fn end_slope(h0: f64, h1: f64, s0: f64, s1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * s0 - h0 * s1) / (h0 + h1);
    if d.signum() != s0.signum() {
        0.0
    } else if s0.signum() != s1.signum() && d.abs() > 3.0 * s0.abs() {
        3.0 * s0
    } else {
        d
    }
}
