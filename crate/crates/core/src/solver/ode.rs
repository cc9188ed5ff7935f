//! Adaptive Dormand-Prince 5(4) integrator for small systems.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-14,
            h_init: 1e-4,
            h_max: f64::INFINITY,
            max_steps: 200_000,
        }
    }
}

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrate `y' = f(x, y)` from `x0` towards `x1` (either direction).
///
/// A step whose stages produce non-finite values is rejected and retried with
/// a smaller step, which lets the right-hand side signal leaving its domain by
/// returning NaN. `observer` sees every accepted step and may stop the
/// integration early by returning `true`. Returns the final `(x, y)`.
pub fn integrate<F, O>(
    mut f: F,
    x0: f64,
    y0: &[f64],
    x1: f64,
    opts: &OdeOptions,
    mut observer: O,
) -> Result<(f64, Vec<f64>)>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    O: FnMut(f64, &[f64]) -> bool,
{
    let dim = y0.len();
    let span = x1 - x0;
    if span == 0.0 {
        return Ok((x0, y0.to_vec()));
    }
    let dir = span.signum();
    let h_min = 1e-15 * span.abs().max(x0.abs());
    let mut h = opts.h_init.min(opts.h_max).min(span.abs());
    let mut x = x0;
    let mut y = y0.to_vec();
    let mut k = vec![vec![0.0; dim]; 7];
    let mut ytmp = vec![0.0; dim];
    let mut ynew = vec![0.0; dim];
    f(x, &y, &mut k[0]);
    if k[0].iter().any(|v| !v.is_finite()) {
        return Err(Error::Oracle(format!("right-hand side not finite at start x = {x}")));
    }
    let mut steps = 0;
    while (x1 - x) * dir > 0.0 {
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::Oracle(format!("step limit reached at x = {x}")));
        }
        let last = h >= (x1 - x).abs();
        if last {
            h = (x1 - x).abs();
        }
        let hs = h * dir;
        for s in 1..7 {
            for j in 0..dim {
                let mut acc = y[j];
                for (l, kl) in k.iter().enumerate().take(s) {
                    acc += hs * A[s][l] * kl[j];
                }
                ytmp[j] = acc;
            }
            f(x + C[s] * hs, &ytmp, &mut k[s]);
        }
        // stage 7 evaluates at the 5th-order solution (FSAL)
        ynew.copy_from_slice(&ytmp);
        let mut err = 0.0;
        let mut finite = true;
        for j in 0..dim {
            let mut e = 0.0;
            for (s, ks) in k.iter().enumerate() {
                e += E[s] * ks[j];
            }
            e *= hs;
            let scale = opts.atol + opts.rtol * y[j].abs().max(ynew[j].abs());
            let r = e / scale;
            if !r.is_finite() || !ynew[j].is_finite() {
                finite = false;
            }
            err += r * r;
        }
        let err = (err / dim as f64).sqrt();
        if !finite {
            h *= 0.25;
            if h < h_min {
                return Err(Error::Oracle(format!("step size underflow at x = {x}")));
            }
            continue;
        }
        if err <= 1.0 {
            x = if last { x1 } else { x + hs };
            y.copy_from_slice(&ynew);
            let k7 = k[6].clone();
            k[0].copy_from_slice(&k7);
            if observer(x, &y) {
                return Ok((x, y));
            }
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h = (h * factor).min(opts.h_max);
        if h < h_min {
            return Err(Error::Oracle(format!("step size underflow at x = {x}")));
        }
    }
    Ok((x, y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_growth() {
        let (x, y) = integrate(
            |_, y, d| d[0] = y[0],
            0.0,
            &[1.0],
            1.0,
            &OdeOptions::default(),
            |_, _| false,
        )
        .unwrap();
        assert_eq!(x, 1.0);
        assert!((y[0] - std::f64::consts::E).abs() < 1e-9);
    }

    #[test]
    fn backwards_harmonic_oscillator() {
        let (_, y) = integrate(
            |_, y, d| {
                d[0] = y[1];
                d[1] = -y[0];
            },
            std::f64::consts::PI,
            &[0.0, -1.0],
            0.0,
            &OdeOptions::default(),
            |_, _| false,
        )
        .unwrap();
        assert!(y[0].abs() < 1e-9 && (y[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn nan_region_is_avoided_and_observer_stops() {
        // y' = 1/sqrt(1 - x) is NaN beyond x = 1; stop once y >= 1.5
        let (x, y) = integrate(
            |x, _, d| d[0] = 1.0 / (1.0 - x).sqrt(),
            0.0,
            &[0.0],
            0.999,
            &OdeOptions::default(),
            |_, y| y[0] >= 1.5,
        )
        .unwrap();
        assert!(y[0] >= 1.5 && x < 0.999);
        let exact = 2.0 - 2.0 * (1.0 - x).sqrt();
        assert!((y[0] - exact).abs() < 1e-8);
    }
}
