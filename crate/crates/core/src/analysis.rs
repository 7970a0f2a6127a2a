//! Exponential-decay fits and efficiency extraction from field traces.

use std::fmt;

use num_complex::Complex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::real::{pairwise_sum, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("at least 3 points required, got {0}")]
    TooFewPoints(usize),
    #[error("times must be strictly increasing (index {0})")]
    NotIncreasing(usize),
    #[error("non-positive value {value} at index {index} under a log-linear form")]
    NonPositive { index: usize, value: f64 },
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("reference energy must be positive, got {0}")]
    ZeroReference(f64),
    #[error("echo window [{0}, {1}] overlaps the noise window [{2}, {3}]")]
    WindowCollision(f64, f64, f64, f64),
    #[error("window [{0}, {1}] contains fewer than two samples")]
    EmptyWindow(f64, f64),
}

/// Fit forms; `t` is the decay variable and `T` the fitted time constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecayForm {
    /// `I₀·e^{−4t/T}` (two-pulse echo intensity vs pulse separation, T = T₂O).
    EchoIntensity,
    /// `η_R·e^{−2t/T}` (memory efficiency vs storage time, T = T₂M).
    Memory,
    /// `1 − a·e^{−t/T}` (population recovery, T = T_SLR).
    Recovery,
}

impl DecayForm {
    fn rate_factor(self) -> f64 {
        match self {
            DecayForm::EchoIntensity => 4.0,
            DecayForm::Memory => 2.0,
            DecayForm::Recovery => 1.0,
        }
    }

    pub fn amplitude_name(self) -> &'static str {
        match self {
            DecayForm::EchoIntensity => "I0",
            DecayForm::Memory => "eta_R",
            DecayForm::Recovery => "a",
        }
    }

    pub fn time_constant_name(self) -> &'static str {
        match self {
            DecayForm::EchoIntensity => "T2O",
            DecayForm::Memory => "T2M",
            DecayForm::Recovery => "T_SLR",
        }
    }

    /// Model value at `t`.
    pub fn eval<T: Real>(self, amplitude: T, time_constant: T, t: T) -> T {
        let b = (-T::lit(self.rate_factor()) * t / time_constant).exp();
        match self {
            DecayForm::Recovery => T::one() - amplitude * b,
            _ => amplitude * b,
        }
    }
}

impl fmt::Display for DecayForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DecayForm::EchoIntensity => "echo-intensity",
            DecayForm::Memory => "memory",
            DecayForm::Recovery => "recovery",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayModel<T> {
    pub form: DecayForm,
    pub amplitude: T,
    pub time_constant: T,
    pub amplitude_stderr: T,
    pub time_constant_stderr: T,
    /// sqrt of the residual sum of squares.
    pub residual_norm: T,
    pub points: usize,
}

const GOLDEN_ITERS: usize = 200;
const SCAN_POINTS: usize = 241;

/// Least-squares fit of one of the decay forms. The amplitude has a closed form for every
/// time constant, so only `ln T` is searched (coarse scan, then golden section).
pub fn fit_decay<T: Real>(points: &[(T, T)], form: DecayForm) -> Result<DecayModel<T>, AnalysisError> {
    let n = points.len();
    if n < 3 {
        return Err(AnalysisError::TooFewPoints(n));
    }
    for i in 1..n {
        if !(points[i].0 > points[i - 1].0) {
            return Err(AnalysisError::NotIncreasing(i));
        }
    }
    if form != DecayForm::Recovery {
        if let Some((i, p)) = points.iter().enumerate().find(|(_, p)| !(p.1 > T::zero())) {
            return Err(AnalysisError::NonPositive {
                index: i,
                value: p.1.as_f64(),
            });
        }
    }
    let y0 = points[0].1;
    let spread = points.iter().map(|p| (p.1 - y0).abs()).fold(T::zero(), T::max);
    let scale = points.iter().map(|p| p.1.abs()).fold(T::zero(), T::max);
    if !(spread > scale * T::lit(1e-12)) {
        return Err(AnalysisError::Degenerate("all values are equal".into()));
    }

    let k = T::lit(form.rate_factor());
    // target z = A·b(t) with z = y, or z = 1 − y for the recovery form
    let z: Vec<T> = points
        .iter()
        .map(|p| if form == DecayForm::Recovery { T::one() - p.1 } else { p.1 })
        .collect();
    let t0 = points[0].0;
    let range = points[n - 1].0 - t0;
    let tmax = points.iter().map(|p| p.0.abs()).fold(T::zero(), T::max).max(range);
    let sse = |ln_tau: T| -> (T, T) {
        let tau = ln_tau.exp();
        let b: Vec<T> = points.iter().map(|p| (-k * p.0 / tau).exp()).collect();
        let sbz = pairwise_sum(&b.iter().zip(&z).map(|(b, z)| *b * *z).collect::<Vec<_>>(), T::zero());
        let sbb = pairwise_sum(&b.iter().map(|b| *b * *b).collect::<Vec<_>>(), T::zero());
        let a = if sbb > T::zero() { sbz / sbb } else { T::zero() };
        let r: Vec<T> = b.iter().zip(&z).map(|(b, z)| (*z - a * *b) * (*z - a * *b)).collect();
        (pairwise_sum(&r, T::zero()), a)
    };

    let lo = (range * k / T::lit(1e3)).ln();
    let hi = (tmax * k * T::lit(1e3)).ln();
    let step = (hi - lo) / T::from_usize_lossy(SCAN_POINTS - 1);
    let grid: Vec<T> = (0..SCAN_POINTS).map(|i| lo + step * T::from_usize_lossy(i)).collect();
    let vals: Vec<T> = grid.iter().map(|&g| sse(g).0).collect();
    let mut best = 0;
    for i in 1..SCAN_POINTS {
        if vals[i] < vals[best] {
            best = i;
        }
    }
    if best == 0 || best == SCAN_POINTS - 1 {
        return Err(AnalysisError::Degenerate(
            "best time constant lies at the edge of the search range; data do not decay".into(),
        ));
    }
    let (mut a, mut b) = (grid[best - 1], grid[best + 1]);
    let phi = T::lit((5f64.sqrt() - 1.0) / 2.0);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (sse(c).0, sse(d).0);
    for _ in 0..GOLDEN_ITERS {
        if (b - a).abs() < T::epsilon() * T::lit(4.0) * (T::one() + a.abs()) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = sse(c).0;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = sse(d).0;
        }
    }
    let ln_tau = (a + b) / T::lit(2.0);
    let tau = ln_tau.exp();
    let (ssr, amp) = sse(ln_tau);

    // Jacobian of the model in (A, T)
    let sign = if form == DecayForm::Recovery { -T::one() } else { T::one() };
    let (mut j11, mut j12, mut j22) = (T::zero(), T::zero(), T::zero());
    for p in points {
        let e = (-k * p.0 / tau).exp();
        let da = sign * e;
        let dt = sign * amp * e * k * p.0 / (tau * tau);
        j11 = j11 + da * da;
        j12 = j12 + da * dt;
        j22 = j22 + dt * dt;
    }
    let det = j11 * j22 - j12 * j12;
    let dof = T::from_usize_lossy(n - 2);
    let s2 = if dof > T::zero() { ssr / dof } else { T::zero() };
    let (se_a, se_t) = if det > T::zero() {
        ((s2 * j22 / det).sqrt(), (s2 * j11 / det).sqrt())
    } else {
        (T::infinity(), T::infinity())
    };
    Ok(DecayModel {
        form,
        amplitude: amp,
        time_constant: tau,
        amplitude_stderr: se_a,
        time_constant_stderr: se_t,
        residual_norm: ssr.sqrt(),
        points: n,
    })
}

/// Field trace on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldTrace<T> {
    pub t: Vec<T>,
    pub field: Vec<Complex<T>>,
}

impl<T: Real> FieldTrace<T> {
    pub fn new(t: Vec<T>, field: Vec<Complex<T>>) -> Self {
        Self { t, field }
    }

    fn window(&self, lo: T, hi: T) -> Result<(Vec<T>, Vec<T>), AnalysisError> {
        let (ts, ps): (Vec<T>, Vec<T>) = self
            .t
            .iter()
            .zip(&self.field)
            .filter(|(t, _)| **t >= lo && **t <= hi)
            .map(|(t, f)| (*t, f.norm_sqr()))
            .unzip();
        if ts.len() < 2 {
            return Err(AnalysisError::EmptyWindow(lo.as_f64(), hi.as_f64()));
        }
        Ok((ts, ps))
    }

    /// ∫|E|²dt over `[lo, hi]` (trapezoid on the samples inside).
    pub fn energy(&self, lo: T, hi: T) -> Result<T, AnalysisError> {
        let (ts, ps) = self.window(lo, hi)?;
        Ok(trapezoid_nonuniform(&ts, &ps))
    }

    pub fn total_energy(&self) -> T {
        let ps: Vec<T> = self.field.iter().map(|f| f.norm_sqr()).collect();
        trapezoid_nonuniform(&self.t, &ps)
    }
}

fn trapezoid_nonuniform<T: Real>(t: &[T], y: &[T]) -> T {
    let terms: Vec<T> = t
        .windows(2)
        .zip(y.windows(2))
        .map(|(t, y)| (t[1] - t[0]) * (y[0] + y[1]) / T::lit(2.0))
        .collect();
    pairwise_sum(&terms, T::zero())
}

fn median<T: Real>(mut xs: Vec<T>) -> T {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / T::lit(2.0)
    }
}

/// η = (echo-window energy − median noise power × window length) / reference energy, clamped
/// at 0. The reference is the off-resonant transmitted probe; its whole trace is integrated.
pub fn extract_efficiency<T: Real>(
    trace: &FieldTrace<T>,
    reference: &FieldTrace<T>,
    echo_window: (T, T),
    noise_window: (T, T),
) -> Result<T, AnalysisError> {
    let (elo, ehi) = echo_window;
    let (nlo, nhi) = noise_window;
    if elo <= nhi && nlo <= ehi {
        return Err(AnalysisError::WindowCollision(
            elo.as_f64(),
            ehi.as_f64(),
            nlo.as_f64(),
            nhi.as_f64(),
        ));
    }
    let reference_energy = reference.total_energy();
    if !(reference_energy > T::zero()) {
        return Err(AnalysisError::ZeroReference(reference_energy.as_f64()));
    }
    let (_, noise) = trace.window(nlo, nhi)?;
    let floor = median(noise);
    let (ts, _) = trace.window(elo, ehi)?;
    let width = ts[ts.len() - 1] - ts[0];
    let echo = trace.energy(elo, ehi)?;
    Ok(((echo - floor * width) / reference_energy).max(T::zero()))
}
