//! ODE integration with the Bogacki–Shampine 3(2) pair, the single machine
//! infinite bus benchmark, and finite-horizon Lyapunov data generation.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Gp3Error, Result};
use crate::gp::TrainingSet;
use crate::par::Workers;
use crate::rect::Hyperrectangle;
use crate::verify::{initial_grid_counts, MapFn};

/// Autonomous or time-varying vector field `ẋ = F(t, x)`.
pub trait OdeSystem: Send + Sync {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, x: &[f64], dx: &mut [f64]);
}

/// Parameters of `m φ̈ + d φ̇ = -a (sin(θ + φ) - sin θ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmibParams {
    pub m1: f64,
    pub d1: f64,
    pub a12: f64,
    pub theta1: f64,
}

impl Default for SmibParams {
    fn default() -> Self {
        Self {
            m1: 1.0,
            d1: 20.0,
            a12: 10.0,
            theta1: 0.05f64.asin(),
        }
    }
}

/// Vector field of the single machine infinite bus system for the state
/// `[φ̇, φ]`, returning `[φ̈, φ̇]`.
pub fn smib_field(state: [f64; 2], p: &SmibParams) -> Result<[f64; 2]> {
    if p.m1 == 0.0 {
        return Err(Gp3Error::InvalidParameter("inertia m1 must be non-zero".into()));
    }
    let [omega, phi] = state;
    let accel = (-p.d1 * omega - p.a12 * ((p.theta1 + phi).sin() - p.theta1.sin())) / p.m1;
    Ok([accel, omega])
}

/// Single machine infinite bus system.
#[derive(Debug, Clone)]
pub struct Smib {
    params: SmibParams,
}

impl Smib {
    pub fn new(params: SmibParams) -> Result<Self> {
        if params.m1 == 0.0 || ![params.m1, params.d1, params.a12, params.theta1].iter().all(|v| v.is_finite()) {
            return Err(Gp3Error::InvalidParameter(format!("invalid SMIB parameters {params:?}")));
        }
        Ok(Self { params })
    }

    pub fn params(&self) -> &SmibParams {
        &self.params
    }
}

impl OdeSystem for Smib {
    fn dim(&self) -> usize {
        2
    }

    fn rhs(&self, _t: f64, x: &[f64], dx: &mut [f64]) {
        let p = &self.params;
        dx[0] = (-p.d1 * x[0] - p.a12 * ((p.theta1 + x[1]).sin() - p.theta1.sin())) / p.m1;
        dx[1] = x[0];
    }
}

/// `ẋ = -rate · x`.
#[derive(Debug, Clone)]
pub struct LinearDecay {
    pub dim: usize,
    pub rate: f64,
}

impl OdeSystem for LinearDecay {
    fn dim(&self) -> usize {
        self.dim
    }

    fn rhs(&self, _t: f64, x: &[f64], dx: &mut [f64]) {
        for (d, v) in dx.iter_mut().zip(x) {
            *d = -self.rate * v;
        }
    }
}

/// `ẍ = -x` as `[x, ẋ]`.
#[derive(Debug, Clone, Copy)]
pub struct HarmonicOscillator;

impl OdeSystem for HarmonicOscillator {
    fn dim(&self) -> usize {
        2
    }

    fn rhs(&self, _t: f64, x: &[f64], dx: &mut [f64]) {
        dx[0] = x[1];
        dx[1] = -x[0];
    }
}

/// `ẋ = 0`.
#[derive(Debug, Clone, Copy)]
pub struct ZeroField(pub usize);

impl OdeSystem for ZeroField {
    fn dim(&self) -> usize {
        self.0
    }

    fn rhs(&self, _t: f64, _x: &[f64], dx: &mut [f64]) {
        dx.fill(0.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub initial_step: f64,
    pub max_step: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            initial_step: 1e-3,
            max_step: 0.1,
        }
    }
}

impl IntegratorConfig {
    /// Steps of exactly `h` (up to landing on sample times); error control
    /// never rejects.
    pub fn fixed(h: f64) -> Self {
        Self {
            rel_tol: 1e300,
            abs_tol: 1e300,
            initial_step: h,
            max_step: h,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = [self.rel_tol, self.abs_tol, self.initial_step, self.max_step]
            .iter()
            .all(|v| *v > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Gp3Error::InvalidParameter(format!("invalid integrator config {self:?}")))
        }
    }
}

const MIN_STEP: f64 = 1e-14;

/// States at `sample_times` (non-decreasing, starting from `t = 0` at `x0`).
///
/// Adaptive Bogacki–Shampine 3(2) with first-same-as-last reuse: the
/// third-order solution is propagated and the embedded second-order one
/// drives step control. Steps are shortened to land exactly on each sample
/// time.
pub fn integrate<S: OdeSystem + ?Sized>(
    system: &S,
    x0: &[f64],
    sample_times: &[f64],
    config: &IntegratorConfig,
) -> Result<Vec<Vec<f64>>> {
    config.validate()?;
    let n = system.dim();
    if x0.len() != n {
        return Err(Gp3Error::DimensionMismatch {
            expected: n,
            got: x0.len(),
        });
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Gp3Error::NonFiniteState { t: 0.0 });
    }
    if sample_times.first().is_some_and(|t| *t < 0.0) || sample_times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Gp3Error::InvalidParameter("sample times must be non-negative and increasing".into()));
    }

    let mut t = 0.0;
    let mut y = x0.to_vec();
    let mut h = config.initial_step.min(config.max_step);
    let mut k1 = vec![0.0; n];
    let (mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    system.rhs(t, &y, &mut k1);

    let mut out = Vec::with_capacity(sample_times.len());
    for &target in sample_times {
        while t < target {
            let remaining = target - t;
            let landing = h >= remaining;
            let step = if landing { remaining } else { h };

            for i in 0..n {
                tmp[i] = y[i] + 0.5 * step * k1[i];
            }
            system.rhs(t + 0.5 * step, &tmp, &mut k2);
            for i in 0..n {
                tmp[i] = y[i] + 0.75 * step * k2[i];
            }
            system.rhs(t + 0.75 * step, &tmp, &mut k3);
            for i in 0..n {
                y_new[i] = y[i] + step * (2.0 / 9.0 * k1[i] + 1.0 / 3.0 * k2[i] + 4.0 / 9.0 * k3[i]);
            }
            let t_new = if landing { target } else { t + step };
            system.rhs(t_new, &y_new, &mut k4);

            let mut err = 0.0;
            for i in 0..n {
                let e = step
                    * (-5.0 / 72.0 * k1[i] + 1.0 / 12.0 * k2[i] + 1.0 / 9.0 * k3[i] - 0.125 * k4[i]);
                let scale = config.abs_tol + config.rel_tol * y[i].abs().max(y_new[i].abs());
                err += (e / scale).powi(2);
            }
            let err = (err / n as f64).sqrt();
            if !err.is_finite() || y_new.iter().any(|v| !v.is_finite()) {
                if step <= MIN_STEP {
                    return Err(Gp3Error::NonFiniteState { t });
                }
                h = 0.25 * step;
                continue;
            }

            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-1.0 / 3.0)).clamp(0.2, 5.0)
            };
            if err <= 1.0 {
                t = t_new;
                std::mem::swap(&mut y, &mut y_new);
                std::mem::swap(&mut k1, &mut k4);
                // A shortened landing step says nothing about the natural step size.
                let proposal = (step * factor).min(config.max_step);
                h = if landing { proposal.max(h) } else { proposal };
            } else {
                h = step * factor.min(1.0);
                if h < MIN_STEP {
                    return Err(Gp3Error::StepUnderflow { t, h });
                }
            }
        }
        out.push(y.clone());
    }
    Ok(out)
}

/// `Σ_{k=0}^{K} ‖x(kΔt, x0)‖²`.
pub fn lyapunov_value<S: OdeSystem + ?Sized>(
    system: &S,
    x0: &[f64],
    horizon: usize,
    dt: f64,
    config: &IntegratorConfig,
) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Gp3Error::InvalidParameter(format!("sample time must be positive, got {dt}")));
    }
    let times: Vec<f64> = (0..=horizon).map(|k| k as f64 * dt).collect();
    let states = integrate(system, x0, &times, config)?;
    Ok(states
        .iter()
        .map(|x| x.iter().map(|v| v * v).sum::<f64>())
        .sum())
}

/// Grid of points spanning `domain` with `counts[k]` points per axis,
/// endpoints included (a single point sits at the center). Last axis
/// varies fastest.
pub fn grid_points(domain: &Hyperrectangle, counts: &[usize]) -> Vec<Vec<f64>> {
    let d = domain.dim();
    let lower = domain.lower();
    let upper = domain.upper();
    let axis = |k: usize, i: usize| -> f64 {
        if counts[k] == 1 {
            domain.center()[k]
        } else {
            lower[k] + (upper[k] - lower[k]) * i as f64 / (counts[k] - 1) as f64
        }
    };
    let total: usize = counts.iter().product();
    let mut idx = vec![0usize; d];
    let mut pts = Vec::with_capacity(total);
    for _ in 0..total {
        pts.push((0..d).map(|k| axis(k, idx[k])).collect());
        for k in (0..d).rev() {
            idx[k] += 1;
            if idx[k] < counts[k] {
                break;
            }
            idx[k] = 0;
        }
    }
    pts
}

/// Per-axis counts of a uniform grid with exactly `n` points: equal counts
/// when `n` is a perfect `d`-th power, otherwise counts proportional to the
/// domain widths if they multiply to `n`.
pub fn sample_grid_counts(domain: &Hyperrectangle, n: usize) -> Result<Vec<usize>> {
    let d = domain.dim();
    if n == 0 {
        return Err(Gp3Error::InvalidParameter("sample count must be positive".into()));
    }
    let root = (n as f64).powf(1.0 / d as f64).round() as usize;
    if root.checked_pow(d as u32) == Some(n) {
        return Ok(vec![root; d]);
    }
    let counts = initial_grid_counts(domain, n);
    if counts.iter().product::<usize>() == n {
        Ok(counts)
    } else {
        Err(Gp3Error::InvalidParameter(format!(
            "{n} points do not form a uniform grid (nearest {counts:?})"
        )))
    }
}

/// Initial states with their finite-horizon Lyapunov values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LyapunovDataset {
    pub initial_states: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub horizon: usize,
    pub sample_time: f64,
}

impl LyapunovDataset {
    pub fn to_training_set(&self) -> Result<TrainingSet> {
        TrainingSet::from_rows(&self.initial_states, self.values.clone())
    }
}

/// Evaluates [`lyapunov_value`] on a uniform grid of `n` initial states
/// laid out by [`sample_grid_counts`].
pub fn build_lyapunov_dataset<S: OdeSystem + ?Sized>(
    system: &S,
    domain: &Hyperrectangle,
    n: usize,
    horizon: usize,
    dt: f64,
    config: &IntegratorConfig,
    workers: &Workers,
) -> Result<LyapunovDataset> {
    if domain.dim() != system.dim() {
        return Err(Gp3Error::DimensionMismatch {
            expected: system.dim(),
            got: domain.dim(),
        });
    }
    let counts = sample_grid_counts(domain, n)?;
    let initial_states = grid_points(domain, &counts);
    let values = workers.try_map(&initial_states, |x0| lyapunov_value(system, x0, horizon, dt, config))?;
    Ok(LyapunovDataset {
        initial_states,
        values,
        horizon,
        sample_time: dt,
    })
}

/// `x0 ↦ x(Δt, x0)`.
pub fn flow_map(system: Arc<dyn OdeSystem>, dt: f64, config: IntegratorConfig) -> Result<MapFn> {
    if !(dt > 0.0) {
        return Err(Gp3Error::InvalidParameter(format!("sample time must be positive, got {dt}")));
    }
    config.validate()?;
    Ok(Arc::new(move |x: &[f64]| {
        let mut states = integrate(system.as_ref(), x, &[dt], &config)?;
        Ok(states.pop().expect("one sample time"))
    }))
}

/// Whether the trajectory from `x0` ends within `radius` of the origin after
/// `horizon` time units. Integration failures count as divergence.
pub fn converges<S: OdeSystem + ?Sized>(
    system: &S,
    x0: &[f64],
    horizon: f64,
    radius: f64,
    config: &IntegratorConfig,
) -> bool {
    match integrate(system, x0, &[horizon], config) {
        Ok(states) => states[0].iter().map(|v| v * v).sum::<f64>().sqrt() <= radius,
        Err(_) => false,
    }
}

/// Trajectory-simulation estimate of the region of attraction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineGrid {
    pub counts: Vec<usize>,
    pub points: Vec<Vec<f64>>,
    pub converged: Vec<bool>,
}

/// Simulates `steps · Δt` from a grid of at least `grid_n` initial states
/// and marks those ending within `radius` of the origin.
#[allow(clippy::too_many_arguments)]
pub fn roa_baseline<S: OdeSystem + ?Sized>(
    system: &S,
    domain: &Hyperrectangle,
    grid_n: usize,
    steps: usize,
    dt: f64,
    radius: f64,
    config: &IntegratorConfig,
    workers: &Workers,
) -> Result<BaselineGrid> {
    if grid_n == 0 || steps == 0 || !(dt > 0.0) || !(radius > 0.0) {
        return Err(Gp3Error::InvalidParameter("baseline arguments must be positive".into()));
    }
    if domain.dim() != system.dim() {
        return Err(Gp3Error::DimensionMismatch {
            expected: system.dim(),
            got: domain.dim(),
        });
    }
    let counts = initial_grid_counts(domain, grid_n);
    let points = grid_points(domain, &counts);
    let horizon = steps as f64 * dt;
    let converged = workers.map(&points, |x0| converges(system, x0, horizon, radius, config));
    Ok(BaselineGrid {
        counts,
        points,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_field_is_constant() {
        let c = [1.5, -2.0, 0.25];
        let states = integrate(&ZeroField(3), &c, &[0.0, 0.5, 1.0, 7.0], &IntegratorConfig::default()).unwrap();
        assert!(states.iter().all(|s| s == &c));
    }

    #[test]
    fn exponential_decay() {
        let cfg = IntegratorConfig {
            rel_tol: 1e-8,
            ..Default::default()
        };
        let s = integrate(&LinearDecay { dim: 1, rate: 1.0 }, &[1.0], &[1.0], &cfg).unwrap();
        assert!((s[0][0] - (-1f64).exp()).abs() <= 10.0 * cfg.rel_tol * (-1f64).exp());
    }

    #[test]
    fn oscillator_conserves_energy() {
        let cfg = IntegratorConfig {
            rel_tol: 1e-8,
            abs_tol: 1e-12,
            ..Default::default()
        };
        let period = std::f64::consts::TAU;
        let s = integrate(&HarmonicOscillator, &[1.0, 0.0], &[period], &cfg).unwrap();
        let energy = s[0][0].powi(2) + s[0][1].powi(2);
        assert!((energy - 1.0).abs() <= 100.0 * cfg.rel_tol);
    }

    #[test]
    fn third_order_convergence() {
        let sys = LinearDecay { dim: 1, rate: 1.0 };
        let hs = [0.1, 0.05, 0.025, 0.0125];
        let pts: Vec<(f64, f64)> = hs
            .iter()
            .map(|&h| {
                let s = integrate(&sys, &[1.0], &[1.0], &IntegratorConfig::fixed(h)).unwrap();
                (h.ln(), (s[0][0] - (-1f64).exp()).abs().ln())
            })
            .collect();
        let slope = fit_slope(&pts);
        assert!((slope - 3.0).abs() <= 0.2, "slope {slope}");
    }

    fn fit_slope(pts: &[(f64, f64)]) -> f64 {
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx
    }

    #[test]
    fn tighter_tolerance_never_hurts() {
        let sys = LinearDecay { dim: 1, rate: 1.0 };
        let mut prev = f64::INFINITY;
        for k in 3..10 {
            let cfg = IntegratorConfig {
                rel_tol: 10f64.powi(-k),
                abs_tol: 1e-14,
                ..Default::default()
            };
            let s = integrate(&sys, &[1.0], &[2.0], &cfg).unwrap();
            let err = (s[0][0] - (-2f64).exp()).abs();
            assert!(err <= prev * 1.01 + 1e-15);
            prev = err;
        }
    }

    #[test]
    fn smib_examples() {
        let p = SmibParams::default();
        assert_eq!(smib_field([0.0, 0.0], &p).unwrap(), [0.0, 0.0]);
        assert_eq!(smib_field([1.0, 0.0], &p).unwrap(), [-20.0, 1.0]);
        for phi in [-0.01, -0.003, 0.004, 0.01] {
            let a = smib_field([0.0, phi], &p).unwrap()[0];
            let lin = -p.a12 * p.theta1.cos() * phi / p.m1;
            assert!((a - lin).abs() <= 0.01 * lin.abs());
        }
        let bad = SmibParams { m1: 0.0, ..p };
        assert!(smib_field([0.0, 0.0], &bad).is_err());
        assert!(Smib::new(bad).is_err());
    }

    #[test]
    fn smib_equilibrium_is_preserved() {
        let sys = Smib::new(SmibParams::default()).unwrap();
        let times: Vec<f64> = (0..=10_000).map(|k| k as f64 * 0.01).collect();
        let s = integrate(&sys, &[0.0, 0.0], &times, &IntegratorConfig::default()).unwrap();
        assert!(s.iter().all(|x| x[0].abs() <= 1e-12 && x[1].abs() <= 1e-12));
    }

    #[test]
    fn lyapunov_examples() {
        let cfg = IntegratorConfig::default();
        let decay = LinearDecay { dim: 1, rate: 1.0 };
        assert_eq!(lyapunov_value(&decay, &[0.0], 50, 0.1, &cfg).unwrap(), 0.0);
        assert_eq!(lyapunov_value(&decay, &[1.5], 0, 0.1, &cfg).unwrap(), 2.25);
        let v = lyapunov_value(&decay, &[1.0], 2, 1.0, &cfg).unwrap();
        assert_relative_eq!(v, 1.0 + (-2f64).exp() + (-4f64).exp(), epsilon = 1e-7);
        assert!((v - 1.1537).abs() < 1e-4);

        let sys = Smib::new(SmibParams::default()).unwrap();
        let mut prev = 0.0;
        for k in [0, 1, 10, 100] {
            let v = lyapunov_value(&sys, &[0.5, 1.0], k, 0.01, &cfg).unwrap();
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn dataset_examples() {
        let cfg = IntegratorConfig::default();
        let w = Workers::sequential();
        let dom = Hyperrectangle::from_bounds(&[-1.0, 0.0], &[1.0, 2.0]).unwrap();
        let one = build_lyapunov_dataset(&ZeroField(2), &dom, 1, 3, 0.1, &cfg, &w).unwrap();
        assert_eq!(one.initial_states, vec![vec![0.0, 1.0]]);
        assert_eq!(one.values, vec![4.0]);

        let ds = build_lyapunov_dataset(&ZeroField(2), &dom, 16, 5, 0.1, &cfg, &w).unwrap();
        for (x, v) in ds.initial_states.iter().zip(&ds.values) {
            let sq: f64 = x.iter().map(|a| a * a).sum();
            assert_relative_eq!(*v, 6.0 * sq, epsilon = 1e-12);
        }
        assert!(build_lyapunov_dataset(&ZeroField(2), &dom, 15, 5, 0.1, &cfg, &w).is_err());
        let wide = Hyperrectangle::from_bounds(&[-6.0, -4.0], &[4.0, 4.0]).unwrap();
        assert_eq!(sample_grid_counts(&wide, 100).unwrap(), vec![10, 10]);
        assert_eq!(sample_grid_counts(&wide, 20).unwrap(), vec![5, 4]);
        assert!(sample_grid_counts(&wide, 0).is_err());
    }

    #[test]
    fn flow_map_properties() {
        let cfg = IntegratorConfig::default();
        let smib: Arc<dyn OdeSystem> = Arc::new(Smib::new(SmibParams::default()).unwrap());
        let f = flow_map(smib.clone(), 0.01, cfg).unwrap();
        assert_eq!(f(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);

        let decay: Arc<dyn OdeSystem> = Arc::new(LinearDecay { dim: 2, rate: 1.0 });
        let g = flow_map(decay, 0.01, cfg).unwrap();
        let y = g(&[1.0, -2.0]).unwrap();
        assert_relative_eq!(y[0], (-0.01f64).exp(), max_relative = 1e-7);
        assert_relative_eq!(y[1], -2.0 * (-0.01f64).exp(), max_relative = 1e-7);

        let f2 = flow_map(smib, 0.02, cfg).unwrap();
        let x = [0.7, -1.2];
        let twice = f(&f(&x).unwrap()).unwrap();
        let direct = f2(&x).unwrap();
        for (a, b) in twice.iter().zip(&direct) {
            assert!((a - b).abs() <= 10.0 * cfg.rel_tol * (1.0 + b.abs()));
        }
    }

    #[test]
    fn baseline_examples() {
        let cfg = IntegratorConfig {
            rel_tol: 1e-6,
            abs_tol: 1e-9,
            ..Default::default()
        };
        let w = Workers::sequential();
        let dom = Hyperrectangle::from_bounds(&[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        let decay = LinearDecay { dim: 2, rate: 1.0 };
        let b = roa_baseline(&decay, &dom, 25, 2000, 0.01, 1e-3, &cfg, &w).unwrap();
        assert!(b.converged.iter().all(|c| *c));
        let sys = Smib::new(SmibParams::default()).unwrap();
        assert!(converges(&sys, &[0.0, 0.0], 100.0, 0.01, &cfg));
        // Beyond the saddle at φ = π - 2θ the machine slips a pole.
        assert!(!converges(&sys, &[0.0, 3.5], 100.0, 0.01, &cfg));
    }

    #[test]
    fn rejects_bad_input() {
        let cfg = IntegratorConfig::default();
        assert!(integrate(&ZeroField(2), &[0.0], &[1.0], &cfg).is_err());
        assert!(integrate(&ZeroField(1), &[0.0], &[1.0, 0.5], &cfg).is_err());
        assert!(integrate(&ZeroField(1), &[f64::NAN], &[1.0], &cfg).is_err());
        let bad = IntegratorConfig { rel_tol: 0.0, ..cfg };
        assert!(integrate(&ZeroField(1), &[0.0], &[1.0], &bad).is_err());
    }
}
