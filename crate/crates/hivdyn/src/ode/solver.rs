//! Adaptive embedded Runge-Kutta integration.
//!
//! The kernel is a Dormand-Prince 5(4) pair with local extrapolation: steps
//! advance on the fifth-order solution and the embedded fourth-order solution
//! supplies the error estimate. The controller accepts a step when the
//! weighted RMS error is at most one, with the usual weight
//! `abs_tol + rel_tol * |y|` per component.
//!
//! Declared breakpoints split the time axis into closed segments and the
//! integrator restarts at each: no step straddles a breakpoint, and the first
//! derivative evaluation of a segment is nudged one ulp into the segment so
//! that piecewise inputs resolve on the incoming side of the discontinuity.
//! Requested output times are hit exactly by clamping the step size.

use crate::error::{Error, Result};

/// Tolerances and limits for [`integrate`].
#[derive(Debug, Clone)]
pub struct IntegratorConfig {
    /// Relative local error tolerance per step.
    pub rel_tol: f64,
    /// Absolute local error tolerance per step.
    pub abs_tol: f64,
    /// Budget of step attempts (accepted and rejected) per call.
    pub max_steps: usize,
    /// Times where the right-hand side may be discontinuous.
    pub breakpoints: Vec<f64>,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self { rel_tol: 1e-6, abs_tol: 1e-8, max_steps: 100_000, breakpoints: Vec::new() }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.rel_tol.is_finite()) {
            return Err(Error::Domain(format!("rel_tol must be positive, got {}", self.rel_tol)));
        }
        if !(self.abs_tol > 0.0 && self.abs_tol.is_finite()) {
            return Err(Error::Domain(format!("abs_tol must be positive, got {}", self.abs_tol)));
        }
        if self.max_steps == 0 {
            return Err(Error::Domain("max_steps must be at least 1".into()));
        }
        if self.breakpoints.iter().any(|b| !b.is_finite()) {
            return Err(Error::Domain("breakpoints must be finite".into()));
        }
        Ok(())
    }
}

// Dormand-Prince 5(4) tableau.
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

// Fifth-order advancing weights (stage 2 and 7 have zero weight).
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;

// Difference between fifth- and fourth-order weights, for the error estimate.
const E1: f64 = B1 - 5179.0 / 57600.0;
const E3: f64 = B3 - 7571.0 / 16695.0;
const E4: f64 = B4 - 393.0 / 640.0;
const E5: f64 = B5 + 92097.0 / 339200.0;
const E6: f64 = B6 - 187.0 / 2100.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;

struct Step<const N: usize> {
    y_new: [f64; N],
    // Derivative at (t + h, y_new); reused as the next step's first stage.
    k_last: [f64; N],
    err_norm: f64,
}

fn attempt_step<const N: usize, F>(rhs: &F, t: f64, y: &[f64; N], k1: &[f64; N], h: f64, config: &IntegratorConfig) -> Step<N>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let mut stage = [0.0; N];

    for i in 0..N {
        stage[i] = y[i] + h * A21 * k1[i];
    }
    let k2 = rhs(t + C2 * h, &stage);
    for i in 0..N {
        stage[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
    }
    let k3 = rhs(t + C3 * h, &stage);
    for i in 0..N {
        stage[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
    }
    let k4 = rhs(t + C4 * h, &stage);
    for i in 0..N {
        stage[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
    }
    let k5 = rhs(t + C5 * h, &stage);
    for i in 0..N {
        stage[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
    }
    let k6 = rhs(t + h, &stage);

    let mut y_new = [0.0; N];
    for i in 0..N {
        y_new[i] = y[i] + h * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i]);
    }
    let k_last = rhs(t + h, &y_new);

    let mut sum_sq = 0.0;
    for i in 0..N {
        let err_i = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k_last[i]);
        let scale = config.abs_tol + config.rel_tol * y[i].abs().max(y_new[i].abs());
        sum_sq += (err_i / scale) * (err_i / scale);
    }
    let err_norm = (sum_sq / N as f64).sqrt();

    Step { y_new, k_last, err_norm }
}

/// Integrate `dy/dt = rhs(t, y)` from `(t0, y0)` and report the state at each
/// requested output time.
///
/// `times` must be nondecreasing with `times[0] >= t0`; entries equal to `t0`
/// report the initial state. Output times and breakpoints are hit exactly.
/// Fails with [`Error::Divergence`] when the state leaves the representable
/// range and [`Error::ConvergenceFailure`] when the step budget is exhausted
/// or the step size underflows.
pub fn integrate<const N: usize, F>(rhs: F, y0: [f64; N], t0: f64, times: &[f64], config: &IntegratorConfig) -> Result<Vec<[f64; N]>>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    config.validate()?;
    if !t0.is_finite() || y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("initial state and time must be finite".into()));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::Domain("output times must be finite".into()));
    }
    if times.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Domain("output times must be nondecreasing".into()));
    }
    if let Some(first) = times.first() {
        if *first < t0 {
            return Err(Error::Domain(format!("output time {first} precedes start time {t0}")));
        }
    }

    let mut out = Vec::with_capacity(times.len());
    let mut out_idx = 0;
    while out_idx < times.len() && times[out_idx] <= t0 {
        out.push(y0);
        out_idx += 1;
    }
    if out_idx == times.len() {
        return Ok(out);
    }

    let t_end = *times.last().unwrap();
    let mut stops: Vec<f64> = config.breakpoints.iter().copied().filter(|b| *b > t0 && *b < t_end).collect();
    stops.sort_by(|a, b| a.partial_cmp(b).unwrap());
    stops.dedup();
    stops.push(t_end);

    let mut t = t0;
    let mut y = y0;
    let mut h = (t_end - t0) * 1e-3;
    let mut attempts = 0usize;

    for &seg_end in &stops {
        // First evaluation of the segment, nudged past the discontinuity.
        let mut k1 = rhs(t.next_up(), &y);

        while t < seg_end {
            let stop_at = match times.get(out_idx) {
                Some(&next) if next < seg_end => next,
                _ => seg_end,
            };

            // Snap across gaps too small to step over.
            if stop_at - t <= 4.0 * f64::EPSILON * t.abs().max(1.0) {
                t = stop_at;
                while out_idx < times.len() && times[out_idx] <= t {
                    out.push(y);
                    out_idx += 1;
                }
                continue;
            }

            let hitting = h >= stop_at - t;
            let h_try = if hitting { stop_at - t } else { h };

            if attempts >= config.max_steps {
                return Err(Error::ConvergenceFailure { t, detail: format!("step budget of {} exhausted", config.max_steps) });
            }
            attempts += 1;

            let step = attempt_step(&rhs, t, &y, &k1, h_try, config);
            if !step.err_norm.is_finite() || step.y_new.iter().any(|v| !v.is_finite()) {
                // A wildly unstable step can overflow before the controller
                // reacts; retry smaller until the step size underflows.
                if step.err_norm.is_nan() && h_try <= 16.0 * f64::EPSILON * t.abs().max(1.0) {
                    return Err(Error::Divergence { t });
                }
                h = h_try * MIN_FACTOR;
                if h <= 16.0 * f64::EPSILON * t.abs().max(1.0) {
                    return Err(Error::Divergence { t });
                }
                continue;
            }

            let factor = (SAFETY * step.err_norm.powf(-0.2)).clamp(MIN_FACTOR, MAX_FACTOR);
            if step.err_norm <= 1.0 {
                t = if hitting { stop_at } else { t + h_try };
                y = step.y_new;
                k1 = step.k_last;
                h = h_try * factor;
                while out_idx < times.len() && times[out_idx] <= t {
                    out.push(y);
                    out_idx += 1;
                }
            } else {
                h = h_try * factor;
                if h <= 16.0 * f64::EPSILON * t.abs().max(1.0) {
                    return Err(Error::ConvergenceFailure { t, detail: "step size underflow".into() });
                }
            }
        }
    }

    Ok(out)
}

/// Advance with the fifth-order formula at a fixed step size, no error
/// control. Intended for convergence studies against the adaptive path; the
/// right-hand side must be smooth over `[t0, t1]`.
pub fn integrate_fixed_step<const N: usize, F>(rhs: F, y0: [f64; N], t0: f64, t1: f64, n_steps: usize) -> Result<[f64; N]>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    if n_steps == 0 {
        return Err(Error::Domain("n_steps must be at least 1".into()));
    }
    if !(t0.is_finite() && t1.is_finite() && t1 >= t0) {
        return Err(Error::Domain("integration interval must be finite and ordered".into()));
    }
    let h = (t1 - t0) / n_steps as f64;
    let mut y = y0;
    let mut stage = [0.0; N];
    for step in 0..n_steps {
        let t = t0 + step as f64 * h;
        let k1 = rhs(t, &y);
        for i in 0..N {
            stage[i] = y[i] + h * A21 * k1[i];
        }
        let k2 = rhs(t + C2 * h, &stage);
        for i in 0..N {
            stage[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        let k3 = rhs(t + C3 * h, &stage);
        for i in 0..N {
            stage[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        let k4 = rhs(t + C4 * h, &stage);
        for i in 0..N {
            stage[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        let k5 = rhs(t + C5 * h, &stage);
        for i in 0..N {
            stage[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        let k6 = rhs(t + h, &stage);
        for i in 0..N {
            y[i] += h * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i]);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { t });
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solve_scalar(rhs: impl Fn(f64, &[f64; 1]) -> [f64; 1], y0: f64, times: &[f64], config: &IntegratorConfig) -> Vec<f64> {
        integrate(rhs, [y0], 0.0, times, config).unwrap().into_iter().map(|y| y[0]).collect()
    }

    #[test]
    fn exponential_decay_matches_closed_form() {
        let config = IntegratorConfig::default();
        let got = solve_scalar(|_, y| [-y[0]], 1.0, &[0.0, 0.5, 1.0, 2.0, 5.0], &config);
        for (g, t) in got.iter().zip([0.0, 0.5, 1.0, 2.0, 5.0]) {
            let want = (-t as f64).exp();
            assert!((g - want).abs() < 1e-7, "t = {t}: {g} vs {want}");
        }
    }

    #[test]
    fn oscillator_preserves_amplitude() {
        let config = IntegratorConfig { rel_tol: 1e-9, abs_tol: 1e-12, ..Default::default() };
        let sol = integrate(|_, y: &[f64; 2]| [y[1], -y[0]], [1.0, 0.0], 0.0, &[20.0 * std::f64::consts::PI], &config).unwrap();
        assert!((sol[0][0] - 1.0).abs() < 1e-6, "cos after 10 periods: {}", sol[0][0]);
        assert!(sol[0][1].abs() < 1e-6, "sin after 10 periods: {}", sol[0][1]);
    }

    #[test]
    fn initial_time_outputs_report_initial_state() {
        let config = IntegratorConfig::default();
        let got = solve_scalar(|_, y| [-y[0]], 3.0, &[0.0, 0.0, 1.0], &config);
        assert_eq!(got[0], 3.0);
        assert_eq!(got[1], 3.0);
        assert!(got[2] < 3.0);
    }

    #[test]
    fn piecewise_rhs_with_declared_breakpoint_is_integrated_exactly() {
        // dy/dt = +y before t = 5, -y after; sign resolved by a lookup that is
        // wrong at exactly t = 5 unless evaluation restarts on the far side.
        let config = IntegratorConfig { breakpoints: vec![5.0], rel_tol: 1e-9, abs_tol: 1e-12, ..Default::default() };
        let rate = |t: f64| if t <= 5.0 { 1.0 } else { -1.0 };
        let got = solve_scalar(move |t, y| [rate(t) * y[0]], 1.0, &[5.0, 8.0], &config);
        assert!((got[0] - 5.0f64.exp()).abs() / 5.0f64.exp() < 1e-8);
        let want = (5.0f64 - 3.0).exp();
        assert!((got[1] - want).abs() / want < 1e-8, "{} vs {want}", got[1]);
    }

    #[test]
    fn undeclared_discontinuity_degrades_accuracy() {
        let tight = IntegratorConfig { rel_tol: 1e-10, abs_tol: 1e-12, breakpoints: vec![5.0], ..Default::default() };
        let loose = IntegratorConfig { rel_tol: 1e-10, abs_tol: 1e-12, ..Default::default() };
        let rate = |t: f64| if t <= 5.0 { 1.0 } else { -1.0 };
        let want = (5.0f64 - 3.0).exp();
        let with_bp = solve_scalar(move |t, y| [rate(t) * y[0]], 1.0, &[8.0], &tight)[0];
        let without_bp = solve_scalar(move |t, y| [rate(t) * y[0]], 1.0, &[8.0], &loose)[0];
        assert!((with_bp - want).abs() <= (without_bp - want).abs());
    }

    #[test]
    fn step_budget_exhaustion_is_reported() {
        let config = IntegratorConfig { max_steps: 3, ..Default::default() };
        let err = integrate(|_, y: &[f64; 1]| [-50.0 * y[0]], [1.0], 0.0, &[100.0], &config).unwrap_err();
        assert!(matches!(err, Error::ConvergenceFailure { .. }), "got {err:?}");
    }

    #[test]
    fn finite_time_blowup_is_divergence() {
        // dy/dt = y^2 from y(0) = 1 blows up at t = 1.
        let config = IntegratorConfig::default();
        let err = integrate(|_, y: &[f64; 1]| [y[0] * y[0]], [1.0], 0.0, &[2.0], &config).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. } | Error::ConvergenceFailure { .. }), "got {err:?}");
    }

    #[test]
    fn rejects_decreasing_output_times() {
        let config = IntegratorConfig::default();
        let err = integrate(|_, y: &[f64; 1]| [-y[0]], [1.0], 0.0, &[2.0, 1.0], &config).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn fixed_step_converges_at_fifth_order() {
        // Smooth nonlinear problem: dy/dt = -y + sin(t/2), y(0) = 1.
        let rhs = |t: f64, y: &[f64; 1]| [-y[0] + (t / 2.0).sin()];
        let reference = {
            let config = IntegratorConfig { rel_tol: 1e-13, abs_tol: 1e-14, ..Default::default() };
            integrate(rhs, [1.0], 0.0, &[10.0], &config).unwrap()[0][0]
        };
        let err_at = |n: usize| (integrate_fixed_step(rhs, [1.0], 0.0, 10.0, n).unwrap()[0] - reference).abs();
        let (e1, e2, e3) = (err_at(20), err_at(40), err_at(80));
        let order_a = (e1 / e2).log2();
        let order_b = (e2 / e3).log2();
        assert!(order_a >= 4.7, "order {order_a} from errors {e1:e} -> {e2:e}");
        assert!(order_b >= 4.7, "order {order_b} from errors {e2:e} -> {e3:e}");
    }
}
