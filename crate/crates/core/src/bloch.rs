//! Optical Bloch equations for one two-level atom driven by a sampled complex envelope.
//!
//! With `c = u + iv` and the envelope `Ω(t)` in the frame rotating at the global center
//! frequency, the equations integrated are
//!
//! ```text
//! du/dt = −δ·v + Im(Ω)·w − u/T2
//! dv/dt =  δ·u − Re(Ω)·w − v/T2
//! dw/dt = −Im(Ω)·u + Re(Ω)·v − (w + 1)/T1
//! ```
//!
//! i.e. `ds/dt = (Re Ω, Im Ω, δ) × s` plus relaxation, and `dc/dt = iδc − iΩw`. A tone with
//! phase `δ_c·t` is resonant with atoms at `+δ_c`. The ground state is `w = −1`; a resonant real
//! pulse of area π takes `(0, 0, −1)` through `(0, 1, 0)` to `(0, 0, 1)`.

use std::io::{self, Write};

use num_complex::Complex;
use thiserror::Error;

use crate::pulse::{PulseSpec, SampledEnvelope};
use crate::real::Real;

/// Largest allowed phase advance `|δ|·dt` per envelope sample, in radians.
pub const MAX_PHASE_PER_SAMPLE: f64 = 0.3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BlochError {
    #[error("step too large: |delta|*dt = {product:.3} rad exceeds {limit} (delta = {detuning:e} rad/s, dt = {dt:e} s)")]
    StepTooLarge {
        detuning: f64,
        dt: f64,
        product: f64,
        limit: f64,
    },
    #[error("invalid atom: {0}")]
    InvalidAtom(String),
    #[error("atom at {detuning:e} rad/s is outside the swept span +-{half_span:e} rad/s around {center:e}")]
    OutsideSpan {
        detuning: f64,
        center: f64,
        half_span: f64,
    },
    #[error("envelope has fewer than two samples")]
    ShortEnvelope,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtomParams<T> {
    /// Detuning δ = ω_a − ω₀, rad/s.
    pub detuning: T,
    /// Optical coherence time, s (`T::infinity()` for none).
    pub t2: T,
    /// Population lifetime, s (`T::infinity()` for none).
    pub t1: T,
    /// Spectral weight g(δ) of this bin.
    pub weight: T,
}

impl<T: Real> AtomParams<T> {
    pub fn new(detuning: T) -> Self {
        Self {
            detuning,
            t2: T::infinity(),
            t1: T::infinity(),
            weight: T::one(),
        }
    }

    pub fn with_t2(mut self, t2: T) -> Self {
        self.t2 = t2;
        self
    }

    pub fn with_t1(mut self, t1: T) -> Self {
        self.t1 = t1;
        self
    }

    pub fn with_weight(mut self, weight: T) -> Self {
        self.weight = weight;
        self
    }

    pub fn validate(&self) -> Result<(), BlochError> {
        if !(self.t2 > T::zero()) {
            return Err(BlochError::InvalidAtom(format!("T2 must be > 0, got {}", self.t2)));
        }
        if self.t1 < self.t2 / T::lit(2.0) {
            return Err(BlochError::InvalidAtom(format!(
                "T1 = {} must be at least T2/2 = {}",
                self.t1,
                self.t2 / T::lit(2.0)
            )));
        }
        if !(self.weight >= T::zero()) {
            return Err(BlochError::InvalidAtom(format!("weight must be >= 0, got {}", self.weight)));
        }
        if !self.detuning.is_finite() {
            return Err(BlochError::InvalidAtom("detuning must be finite".into()));
        }
        Ok(())
    }

    /// Transverse decay rate 1/T2.
    pub fn gamma2(&self) -> T {
        rate(self.t2)
    }

    /// Longitudinal decay rate 1/T1.
    pub fn gamma1(&self) -> T {
        rate(self.t1)
    }
}

fn rate<T: Real>(tau: T) -> T {
    if tau.is_finite() {
        T::one() / tau
    } else {
        T::zero()
    }
}

/// Bloch vector `(u, v, w)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BlochVector<T> {
    pub u: T,
    pub v: T,
    pub w: T,
}

impl<T: Real> BlochVector<T> {
    pub fn new(u: T, v: T, w: T) -> Self {
        Self { u, v, w }
    }

    pub fn ground() -> Self {
        Self::new(T::zero(), T::zero(), -T::one())
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn norm(&self) -> T {
        (self.u * self.u + self.v * self.v + self.w * self.w).sqrt()
    }

    /// Transverse coherence `u + iv`.
    pub fn coherence(&self) -> Complex<T> {
        Complex::new(self.u, self.v)
    }

    pub fn from_coherence(c: Complex<T>, w: T) -> Self {
        Self::new(c.re, c.im, w)
    }

    pub fn sub(&self, o: &Self) -> Self {
        Self::new(self.u - o.u, self.v - o.v, self.w - o.w)
    }

    pub fn add(&self, o: &Self) -> Self {
        Self::new(self.u + o.u, self.v + o.v, self.w + o.w)
    }

    pub fn max_abs_diff(&self, o: &Self) -> T {
        (self.u - o.u).abs().max((self.v - o.v).abs()).max((self.w - o.w).abs())
    }
}

/// Whether the longitudinal relaxation pulls `w` toward −1 (physical state) or toward 0 (the
/// difference of two physical states, which obeys the homogeneous equations).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Full,
    Homogeneous,
}

#[derive(Clone, Copy)]
struct Coeffs<T> {
    delta: T,
    g1: T,
    g2: T,
    w_eq: T,
}

impl<T: Real> Coeffs<T> {
    fn new(p: &AtomParams<T>, mode: Mode) -> Self {
        Self {
            delta: p.detuning,
            g1: p.gamma1(),
            g2: p.gamma2(),
            w_eq: match mode {
                Mode::Full => -T::one(),
                Mode::Homogeneous => T::zero(),
            },
        }
    }

    #[inline(always)]
    fn deriv(&self, s: &BlochVector<T>, om: Complex<T>) -> BlochVector<T> {
        BlochVector {
            u: -self.delta * s.v + om.im * s.w - self.g2 * s.u,
            v: self.delta * s.u - om.re * s.w - self.g2 * s.v,
            w: -om.im * s.u + om.re * s.v - self.g1 * (s.w - self.w_eq),
        }
    }

    #[inline(always)]
    fn rk4(&self, s: &BlochVector<T>, o1: Complex<T>, om: Complex<T>, o2: Complex<T>, h: T) -> BlochVector<T> {
        let half = h / T::lit(2.0);
        let k1 = self.deriv(s, o1);
        let k2 = self.deriv(&axpy(s, half, &k1), om);
        let k3 = self.deriv(&axpy(s, half, &k2), om);
        let k4 = self.deriv(&axpy(s, h, &k3), o2);
        let six = h / T::lit(6.0);
        let two = T::lit(2.0);
        BlochVector {
            u: s.u + six * (k1.u + two * (k2.u + k3.u) + k4.u),
            v: s.v + six * (k1.v + two * (k2.v + k3.v) + k4.v),
            w: s.w + six * (k1.w + two * (k2.w + k3.w) + k4.w),
        }
    }
}

#[inline(always)]
fn axpy<T: Real>(s: &BlochVector<T>, a: T, k: &BlochVector<T>) -> BlochVector<T> {
    BlochVector {
        u: s.u + a * k.u,
        v: s.v + a * k.v,
        w: s.w + a * k.w,
    }
}

/// Refuses envelopes too coarse for the atom's detuning.
pub fn check_step<T: Real>(detuning: T, dt: T) -> Result<(), BlochError> {
    let product = (detuning * dt).abs();
    if product > T::lit(MAX_PHASE_PER_SAMPLE) {
        return Err(BlochError::StepTooLarge {
            detuning: detuning.as_f64(),
            dt: dt.as_f64(),
            product: product.as_f64(),
            limit: MAX_PHASE_PER_SAMPLE,
        });
    }
    Ok(())
}

/// Fixed-step scheme used by [`integrate_samples_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Integrator {
    /// Fourth-order Magnus expansion with Simpson quadrature: each step is an exact rotation, so
    /// the Bloch-vector norm is preserved to rounding error. Relaxation is Strang-split around it.
    #[default]
    Magnus4,
    /// Classic fourth-order Runge-Kutta.
    Rk4,
}

impl<T: Real> Coeffs<T> {
    #[inline(always)]
    fn relax(&self, s: &BlochVector<T>, t: T) -> BlochVector<T> {
        if self.g1 == T::zero() && self.g2 == T::zero() {
            return *s;
        }
        let f2 = (-self.g2 * t).exp();
        let f1 = (-self.g1 * t).exp();
        BlochVector {
            u: s.u * f2,
            v: s.v * f2,
            w: self.w_eq + (s.w - self.w_eq) * f1,
        }
    }

    #[inline(always)]
    fn magnus4(&self, s: &BlochVector<T>, o1: Complex<T>, om: Complex<T>, o2: Complex<T>, h: T) -> BlochVector<T> {
        let half = h / T::lit(2.0);
        let s = self.relax(s, half);
        let six = h / T::lit(6.0);
        let four = T::lit(4.0);
        // Simpson average of b = (Re Ω, Im Ω, δ) plus the leading commutator (b_e − b_s) × b_m
        let c2 = h * h / T::lit(12.0);
        let (dx, dy) = (o2.re - o1.re, o2.im - o1.im);
        let tx = six * (o1.re + four * om.re + o2.re) + c2 * (dy * self.delta);
        let ty = six * (o1.im + four * om.im + o2.im) - c2 * (dx * self.delta);
        let tz = h * self.delta + c2 * (dx * om.im - dy * om.re);
        let s = rotate(&s, tx, ty, tz);
        self.relax(&s, half)
    }
}

/// Rotates `s` about the vector `(x, y, z)` by the angle `|(x, y, z)|`.
#[inline(always)]
fn rotate<T: Real>(s: &BlochVector<T>, x: T, y: T, z: T) -> BlochVector<T> {
    let th2 = x * x + y * y + z * z;
    let (a, b) = if th2 < T::lit(1e-8) {
        // series of sinθ/θ and (1 − cosθ)/θ²
        (
            T::one() - th2 / T::lit(6.0) + th2 * th2 / T::lit(120.0),
            T::lit(0.5) - th2 / T::lit(24.0) + th2 * th2 / T::lit(720.0),
        )
    } else {
        let th = th2.sqrt();
        let (sn, cs) = th.sin_cos();
        (sn / th, (T::one() - cs) / th2)
    };
    // Θ × s and Θ × (Θ × s) = Θ(Θ·s) − θ²s
    let cx = y * s.w - z * s.v;
    let cy = z * s.u - x * s.w;
    let cz = x * s.v - y * s.u;
    let dot = x * s.u + y * s.v + z * s.w;
    BlochVector {
        u: s.u + a * cx + b * (x * dot - th2 * s.u),
        v: s.v + a * cy + b * (y * dot - th2 * s.v),
        w: s.w + a * cz + b * (z * dot - th2 * s.w),
    }
}

/// Integrates over a raw sample slice with the default integrator. Each step spans two sample
/// intervals and uses the middle sample as the midpoint value; a trailing odd interval uses the
/// interpolated midpoint. `visit` receives the sample index and state after each step (and index 0
/// before the first).
pub fn integrate_samples<T: Real, F: FnMut(usize, &BlochVector<T>)>(
    s: BlochVector<T>,
    params: &AtomParams<T>,
    mode: Mode,
    samples: &[Complex<T>],
    dt: T,
    visit: F,
) -> BlochVector<T> {
    integrate_samples_with(Integrator::default(), s, params, mode, samples, dt, visit)
}

pub fn integrate_samples_with<T: Real, F: FnMut(usize, &BlochVector<T>)>(
    integrator: Integrator,
    mut s: BlochVector<T>,
    params: &AtomParams<T>,
    mode: Mode,
    samples: &[Complex<T>],
    dt: T,
    mut visit: F,
) -> BlochVector<T> {
    let c = Coeffs::new(params, mode);
    let n = samples.len();
    visit(0, &s);
    if n < 2 {
        return s;
    }
    let step = |s: &BlochVector<T>, a, m, b, h| match integrator {
        Integrator::Magnus4 => c.magnus4(s, a, m, b, h),
        Integrator::Rk4 => c.rk4(s, a, m, b, h),
    };
    let h = dt + dt;
    let mut k = 0;
    while k + 2 < n {
        s = step(&s, samples[k], samples[k + 1], samples[k + 2], h);
        k += 2;
        visit(k, &s);
    }
    if k + 1 < n {
        let mid = (samples[k] + samples[k + 1]) * T::lit(0.5);
        s = step(&s, samples[k], mid, samples[k + 1], dt);
        k += 1;
        visit(k, &s);
    }
    s
}

/// Sampled trajectory of one atom.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub t: Vec<T>,
    pub states: Vec<BlochVector<T>>,
}

impl<T: Real> Trajectory<T> {
    pub fn last(&self) -> BlochVector<T> {
        *self.states.last().expect("trajectory holds the initial state")
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t_s,u,v,w")?;
        for (t, s) in self.t.iter().zip(&self.states) {
            writeln!(w, "{},{},{},{}", t, s.u, s.v, s.w)?;
        }
        Ok(())
    }
}

fn check_inputs<T: Real>(params: &AtomParams<T>, env: &SampledEnvelope<T>) -> Result<(), BlochError> {
    params.validate()?;
    if env.len() < 2 {
        return Err(BlochError::ShortEnvelope);
    }
    check_step(params.detuning, env.dt)
}

/// Evolves `state` across `env`, recording the state after every integrator step.
pub fn evolve<T: Real>(
    state: BlochVector<T>,
    params: &AtomParams<T>,
    env: &SampledEnvelope<T>,
) -> Result<Trajectory<T>, BlochError> {
    check_inputs(params, env)?;
    let mut traj = Trajectory {
        t: Vec::with_capacity(env.len() / 2 + 2),
        states: Vec::with_capacity(env.len() / 2 + 2),
    };
    integrate_samples(state, params, Mode::Full, &env.samples, env.dt, |k, s| {
        traj.t.push(env.time(k));
        traj.states.push(*s);
    });
    Ok(traj)
}

/// Final state only.
pub fn evolve_final<T: Real>(
    state: BlochVector<T>,
    params: &AtomParams<T>,
    env: &SampledEnvelope<T>,
    mode: Mode,
) -> Result<BlochVector<T>, BlochError> {
    check_inputs(params, env)?;
    Ok(integrate_samples(state, params, mode, &env.samples, env.dt, |_, _| {}))
}

/// Closed-form free evolution for a duration `t`.
pub fn free_evolve<T: Real>(s: BlochVector<T>, params: &AtomParams<T>, t: T, mode: Mode) -> BlochVector<T> {
    let c = s.coherence() * Complex::from_polar((-params.gamma2() * t).exp(), params.detuning * t);
    let w_eq = match mode {
        Mode::Full => -T::one(),
        Mode::Homogeneous => T::zero(),
    };
    let w = w_eq + (s.w - w_eq) * (-params.gamma1() * t).exp();
    BlochVector::from_coherence(c, w)
}

/// Instantaneous rotation by `angle` about the transverse axis `(cos φ, sin φ, 0)`: the limit of
/// a resonant pulse with envelope phase φ and area `angle`.
pub fn hard_rotation<T: Real>(s: BlochVector<T>, angle: T, phase: T) -> BlochVector<T> {
    let (sp, cp) = phase.sin_cos();
    let (sa, ca) = angle.sin_cos();
    // Rodrigues: s' = s cosθ + (k × s) sinθ + k (k·s)(1 − cosθ)
    let kdot = cp * s.u + sp * s.v;
    let cross = BlochVector::new(sp * s.w, -cp * s.w, cp * s.v - sp * s.u);
    BlochVector::new(
        s.u * ca + cross.u * sa + cp * kdot * (T::one() - ca),
        s.v * ca + cross.v * sa + sp * kdot * (T::one() - ca),
        s.w * ca + cross.w * sa,
    )
}

/// Detuning-dependent transverse phase written by a RAP: `arg(u + iv)` at the pulse end minus the
/// free-evolution phase `δ·τ_R`, starting from `(1, 0, 0)` at the pulse start.
pub fn rap_phase_imprint<T: Real>(
    params: &AtomParams<T>,
    rap: &PulseSpec<T>,
    env: &SampledEnvelope<T>,
) -> Result<T, BlochError> {
    check_inputs(params, env)?;
    if rap.peak_rabi() == T::zero() {
        return Ok(T::zero());
    }
    let tone = rap
        .tones
        .iter()
        .min_by(|a, b| {
            (a.detuning - params.detuning)
                .abs()
                .partial_cmp(&(b.detuning - params.detuning).abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .ok_or(BlochError::ShortEnvelope)?;
    let half_span = tone.span(rap.duration) / T::lit(2.0);
    if (params.detuning - tone.detuning).abs() > half_span {
        return Err(BlochError::OutsideSpan {
            detuning: params.detuning.as_f64(),
            center: tone.detuning.as_f64(),
            half_span: half_span.as_f64(),
        });
    }
    let start = BlochVector::new(T::one(), T::zero(), T::zero());
    let end = integrate_samples(start, params, Mode::Full, &env.samples, env.dt, |_, _| {});
    let raw = end.coherence().arg() - params.detuning * env.duration();
    Ok(wrap_phase(raw))
}

/// Wraps an angle into (−π, π].
pub fn wrap_phase<T: Real>(x: T) -> T {
    let tp = T::two_pi();
    let mut y = x - tp * (x / tp).round();
    if y <= -T::PI() {
        y = y + tp;
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pulse::{synthesize, PulseSpec, TimeGrid};
    use crate::real::{mhz, mhz_per_ms, us};
    use std::f64::consts::PI;

    fn square_env(om: f64, tau: f64, n: usize) -> SampledEnvelope<f64> {
        let p = PulseSpec::square(tau / 2.0, tau, om);
        synthesize(&p, TimeGrid::covering(0.0, tau, tau / n as f64)).unwrap()
    }

    #[test]
    fn pi_pulse_inverts_through_plus_v() {
        let tau = 1e-6;
        let env = square_env(PI / tau, tau, 400);
        let traj = evolve(BlochVector::ground(), &AtomParams::new(0.0), &env).unwrap();
        let end = traj.last();
        assert!(end.max_abs_diff(&BlochVector::new(0.0, 0.0, 1.0)) < 1e-8, "{end:?}");
        let mid = traj.states[traj.states.len() / 2];
        assert!(mid.max_abs_diff(&BlochVector::new(0.0, 1.0, 0.0)) < 1e-8, "{mid:?}");
    }

    #[test]
    fn hard_rotation_matches_pulse() {
        let tau = 1e-6;
        let s0 = BlochVector::new(0.3, -0.2, -0.9);
        for &(area, phase) in &[(PI, 0.0), (PI / 2.0, 0.7), (1.3, -2.0)] {
            let p = PulseSpec {
                tones: vec![crate::pulse::Tone::new(0.0, area / tau, 0.0)],
                ..PulseSpec::square(tau / 2.0, tau, 0.0)
            };
            let env = synthesize(&p, TimeGrid::covering(0.0, tau, tau / 400.0)).unwrap();
            let env = SampledEnvelope {
                samples: env.samples.iter().map(|s| s * Complex::from_polar(1.0, phase)).collect(),
                ..env
            };
            let a = evolve_final(s0, &AtomParams::new(0.0), &env, Mode::Full).unwrap();
            let b = hard_rotation(s0, area, phase);
            assert!(a.max_abs_diff(&b) < 1e-10, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn free_rotation_quarter_turn() {
        let delta = mhz::<f64>(1.0);
        let t = 0.25e-6;
        let n = 1000;
        let env = SampledEnvelope {
            t_start: 0.0,
            dt: t / n as f64,
            samples: vec![Complex::new(0.0, 0.0); n + 1],
        };
        let end = evolve_final(BlochVector::new(1.0, 0.0, 0.0), &AtomParams::new(delta), &env, Mode::Full)
            .unwrap();
        assert!(end.max_abs_diff(&BlochVector::new(0.0, 1.0, 0.0)) < 1e-9, "{end:?}");
        assert!((end.coherence().norm() - 1.0).abs() < 1e-9);
        let exact = free_evolve(BlochVector::new(1.0, 0.0, 0.0), &AtomParams::new(delta), t, Mode::Full);
        assert!(end.max_abs_diff(&exact) < 1e-9);
    }

    #[test]
    fn decay_law() {
        let p = AtomParams::new(mhz::<f64>(0.3)).with_t2(us(5.0)).with_t1(us(50.0));
        let n = 2000;
        let t = us::<f64>(10.0);
        let env = SampledEnvelope {
            t_start: 0.0,
            dt: t / n as f64,
            samples: vec![Complex::new(0.0, 0.0); n + 1],
        };
        let s0 = BlochVector::new(0.6, 0.0, 0.2);
        let end = evolve_final(s0, &p, &env, Mode::Full).unwrap();
        let expect = 0.6 * (-t / us::<f64>(5.0)).exp();
        assert!((end.coherence().norm() - expect).abs() < 1e-10);
        let exact = free_evolve(s0, &p, t, Mode::Full);
        assert!(end.max_abs_diff(&exact) < 1e-10);
    }

    #[test]
    fn step_guard() {
        let env = SampledEnvelope {
            t_start: 0.0,
            dt: 1e-6,
            samples: vec![Complex::new(0.0, 0.0); 3],
        };
        let err = evolve_final(BlochVector::ground(), &AtomParams::new(1e6), &env, Mode::Full).unwrap_err();
        assert!(matches!(err, BlochError::StepTooLarge { .. }));
    }

    #[test]
    fn odd_interval_count_is_handled() {
        let tau = 1e-6;
        let n = 401;
        let env = SampledEnvelope {
            t_start: 0.0,
            dt: tau / n as f64,
            samples: vec![Complex::new(PI / tau, 0.0); n + 1],
        };
        let end = evolve_final(BlochVector::ground(), &AtomParams::new(0.0), &env, Mode::Full).unwrap();
        assert!((end.w - 1.0).abs() < 1e-8);
    }

    #[test]
    fn invalid_atoms() {
        assert!(AtomParams::new(0.0).with_t2(0.0).validate().is_err());
        assert!(AtomParams::new(0.0).with_t2(2.0).with_t1(0.5).validate().is_err());
        assert!(AtomParams::new(0.0).with_weight(-1.0).validate().is_err());
        assert!(AtomParams::new(0.0).with_t2(2.0).with_t1(1.0).validate().is_ok());
    }

    fn paper_rap(t0: f64) -> PulseSpec<f64> {
        PulseSpec::rap(t0, us(50.0), mhz(0.35), mhz_per_ms(30.0), 0.0)
    }

    fn rap_env(p: &PulseSpec<f64>, dt: f64) -> SampledEnvelope<f64> {
        synthesize(p, TimeGrid::for_pulse(p, dt)).unwrap()
    }

    #[test]
    fn paper_rap_inverts_in_span_atoms() {
        let p = paper_rap(25e-6);
        let env = rap_env(&p, 10e-9);
        // the sinc envelope is too weak near the sweep edges: only the inner part of the nominal
        // ±0.75 MHz span is inverted adiabatically
        for f in [-0.4, -0.3, -0.1, 0.0, 0.2, 0.4] {
            let end = evolve_final(BlochVector::ground(), &AtomParams::new(mhz(f)), &env, Mode::Full).unwrap();
            assert!(end.w > 0.98, "delta {f} MHz: w = {}", end.w);
        }
        let edge = evolve_final(BlochVector::ground(), &AtomParams::new(mhz(0.7)), &env, Mode::Full).unwrap();
        assert!(edge.w < 0.0);
    }

    #[test]
    fn zero_amplitude_rap_imprint_is_zero() {
        let p = PulseSpec::rap(25e-6, us(50.0), 0.0, mhz_per_ms(30.0), 0.0);
        let env = rap_env(&p, 10e-9);
        assert_eq!(rap_phase_imprint(&AtomParams::new(mhz(0.2)), &p, &env).unwrap(), 0.0);
    }

    #[test]
    fn imprint_outside_span_is_flagged() {
        let p = paper_rap(25e-6);
        let env = rap_env(&p, 10e-9);
        let err = rap_phase_imprint(&AtomParams::new(mhz(1.0)), &p, &env).unwrap_err();
        assert!(matches!(err, BlochError::OutsideSpan { .. }));
    }

    /// Least squares fit of y against 1, x, x² through the normal equations.
    fn quad_fit(xs: &[f64], ys: &[f64]) -> ([f64; 3], f64) {
        let mut a = [[0.0f64; 4]; 3];
        for (&x, &y) in xs.iter().zip(ys) {
            let phi = [1.0, x, x * x];
            for i in 0..3 {
                for j in 0..3 {
                    a[i][j] += phi[i] * phi[j];
                }
                a[i][3] += phi[i] * y;
            }
        }
        for i in 0..3 {
            let p = a[i][i];
            for j in 0..4 {
                a[i][j] /= p;
            }
            for r in 0..3 {
                if r != i {
                    let f = a[r][i];
                    for j in 0..4 {
                        a[r][j] -= f * a[i][j];
                    }
                }
            }
        }
        let c = [a[0][3], a[1][3], a[2][3]];
        let res = xs
            .iter()
            .zip(ys)
            .map(|(&x, &y)| (y - c[0] - c[1] * x - c[2] * x * x).abs())
            .fold(0.0, f64::max);
        (c, res)
    }

    fn unwrap_seq(xs: &mut [f64]) {
        for i in 1..xs.len() {
            while xs[i] - xs[i - 1] > PI {
                xs[i] -= 2.0 * PI;
            }
            while xs[i] - xs[i - 1] < -PI {
                xs[i] += 2.0 * PI;
            }
        }
    }

    #[test]
    fn imprint_is_quadratic_in_detuning() {
        let p = paper_rap(25e-6);
        let env = rap_env(&p, 10e-9);
        // the inner half of the span, where the adiabatic picture holds
        let xs: Vec<f64> = (-30..=30).map(|k| mhz::<f64>(0.005 * k as f64)).collect();
        let mut ys: Vec<f64> = xs
            .iter()
            .map(|&d| rap_phase_imprint(&AtomParams::new(d), &p, &env).unwrap())
            .collect();
        unwrap_seq(&mut ys);
        let scaled: Vec<f64> = xs.iter().map(|x| x / mhz::<f64>(1.0)).collect();
        let (c, res) = quad_fit(&scaled, &ys);
        assert!(res < 0.05, "residual {res}");
        assert!(c[2].abs() > 1.0, "imprint should be strongly quadratic, c2 = {}", c[2]);
        let d0 = ys[30];
        let d1 = rap_phase_imprint(&AtomParams::new(0.3 * mhz::<f64>(0.75)), &p, &env).unwrap();
        assert!((wrap_phase(d1 - d0)).abs() > 0.1);
    }

    #[test]
    fn two_identical_raps_cancel_the_imprint() {
        let p = paper_rap(25e-6);
        let env = rap_env(&p, 10e-9);
        let gap = 20e-6;
        // each inversion conjugates the coherence and adds the same imprint, so after two the only
        // phase left is the reversed free evolution of the gap
        let deviation = |d: f64| {
            let a = AtomParams::new(d);
            let s = evolve_final(BlochVector::new(1.0, 0.0, 0.0), &a, &env, Mode::Full).unwrap();
            let s = free_evolve(s, &a, gap, Mode::Full);
            let s = evolve_final(s, &a, &env, Mode::Full).unwrap();
            wrap_phase(s.coherence().arg() + d * gap)
        };
        let devs: Vec<f64> = (-8..=8).map(|k| deviation(mhz(0.06 * k as f64))).collect();
        for a in &devs {
            for b in &devs {
                assert!(wrap_phase(a - b).abs() < 0.05, "{devs:?}");
            }
        }
    }

    #[test]
    fn norm_conserved_over_rap() {
        let p = paper_rap(25e-6);
        let dt = crate::pulse::default_dt(2e-6, p.f_max() + 2e6);
        let env = rap_env(&p, dt);
        for f in [-1.9, -0.6, 0.0, 0.37, 1.2] {
            let traj = evolve(BlochVector::new(0.6, 0.0, -0.8), &AtomParams::new(mhz(f)), &env).unwrap();
            let drift = traj.states.iter().map(|s| (s.norm() - 1.0).abs()).fold(0.0, f64::max);
            assert!(drift < 1e-6, "drift {drift}");
        }
    }

    #[test]
    fn fourth_order_convergence() {
        let p = paper_rap(25e-6);
        let atom = AtomParams::new(mhz(0.31));
        for integrator in [Integrator::Magnus4, Integrator::Rk4] {
            let run = |dt: f64| {
                let env = rap_env(&p, dt);
                integrate_samples_with(
                    integrator,
                    BlochVector::new(0.6, 0.0, -0.8),
                    &atom,
                    Mode::Full,
                    &env.samples,
                    env.dt,
                    |_, _| {},
                )
            };
            let (a, b, c) = (run(20e-9), run(10e-9), run(5e-9));
            let ratio = a.max_abs_diff(&b) / b.max_abs_diff(&c);
            assert!((12.0..=20.0).contains(&ratio), "{integrator:?}: ratio {ratio}");
            if integrator == Integrator::Magnus4 {
                assert!(b.max_abs_diff(&c) < 1e-7, "{}", b.max_abs_diff(&c));
            }
        }
    }
}
