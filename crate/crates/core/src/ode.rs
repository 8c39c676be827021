//! Dormand–Prince 5(4) embedded Runge–Kutta stepping.

use crate::error::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// Fifth-order weights minus embedded fourth-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Reusable work buffers for one system size.
pub struct DormandPrince {
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    pub y_new: Vec<f64>,
    pub rtol: f64,
    pub atol: f64,
}

impl DormandPrince {
    pub fn new(dim: usize, rtol: f64, atol: f64) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![0.0; dim]),
            tmp: vec![0.0; dim],
            y_new: vec![0.0; dim],
            rtol,
            atol,
        }
    }

    /// Attempts one step of size `h` from `(t, y)`; the candidate state is
    /// left in `y_new`. Returns the scaled max-norm error estimate (accept
    /// when `<= 1`).
    pub fn attempt<F>(&mut self, rhs: &mut F, t: f64, y: &[f64], h: f64) -> f64
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        let n = y.len();
        let [k1, k2, k3, k4, k5, k6, k7] = &mut self.k;
        let tmp = &mut self.tmp;
        rhs(t, y, k1);
        for i in 0..n {
            tmp[i] = y[i] + h * A21 * k1[i];
        }
        rhs(t + C2 * h, tmp, k2);
        for i in 0..n {
            tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        rhs(t + C3 * h, tmp, k3);
        for i in 0..n {
            tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        rhs(t + C4 * h, tmp, k4);
        for i in 0..n {
            tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        rhs(t + C5 * h, tmp, k5);
        for i in 0..n {
            tmp[i] = y[i]
                + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        rhs(t + h, tmp, k6);
        let y_new = &mut self.y_new;
        for i in 0..n {
            y_new[i] =
                y[i] + h * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i]);
        }
        rhs(t + h, y_new, k7);
        let mut err: f64 = 0.0;
        for i in 0..n {
            let e = h
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let scale = self.atol + self.rtol * y[i].abs().max(y_new[i].abs());
            let r = e.abs() / scale;
            if !(r <= err) {
                err = if r.is_nan() { f64::INFINITY } else { r };
            }
        }
        err
    }
}

/// Step-size update from an error estimate (order 5 controller).
pub fn next_step(h: f64, err: f64) -> f64 {
    let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
    h * factor
}

#[derive(Debug, Clone, Copy)]
pub struct IntegrateOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub h_max: f64,
    pub h_min: f64,
    pub max_steps: usize,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self { rtol: 1e-10, atol: 1e-12, h_init: 1e-3, h_max: f64::INFINITY, h_min: 1e-14, max_steps: 5_000_000 }
    }
}

/// Dense record of an integration: every accepted step plus the requested
/// output points (which are always landed on exactly).
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub y: Vec<Vec<f64>>,
}

/// Integrates from `t0` to `t_end`, stopping early when `stop(t, y)` is true.
/// Every accepted step is recorded; `outputs` are additionally hit exactly.
pub fn integrate<F, S>(
    mut rhs: F,
    t0: f64,
    y0: &[f64],
    t_end: f64,
    outputs: &[f64],
    opts: IntegrateOptions,
    mut stop: S,
) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    S: FnMut(f64, &[f64]) -> bool,
{
    let mut dp = DormandPrince::new(y0.len(), opts.rtol, opts.atol);
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut h = opts.h_init.min(opts.h_max).min(t_end - t0);
    let mut traj = Trajectory { t: vec![t0], y: vec![y.clone()] };
    let mut next_out = outputs.iter().position(|&o| o > t0).unwrap_or(outputs.len());
    let mut steps = 0;
    while t < t_end {
        if steps >= opts.max_steps {
            return Err(Error::NonConvergence(format!("ode: {} steps without reaching {t_end}", opts.max_steps)));
        }
        steps += 1;
        let mut target = t_end;
        if next_out < outputs.len() {
            target = target.min(outputs[next_out]);
        }
        let mut h_try = h.min(target - t);
        let landing = h_try >= target - t;
        if landing {
            h_try = target - t;
        }
        let err = dp.attempt(&mut rhs, t, &y, h_try);
        if err <= 1.0 {
            t = if landing { target } else { t + h_try };
            y.copy_from_slice(&dp.y_new);
            traj.t.push(t);
            traj.y.push(y.clone());
            if next_out < outputs.len() && t >= outputs[next_out] {
                next_out += 1;
            }
            if !landing {
                h = next_step(h_try, err).min(opts.h_max);
            }
            if stop(t, &y) {
                break;
            }
        } else {
            h = next_step(h_try, err).min(opts.h_max);
            if h < opts.h_min {
                return Err(Error::StepUnderflow { t });
            }
        }
    }
    Ok(traj)
}
