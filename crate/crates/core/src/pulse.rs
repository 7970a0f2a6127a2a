//! Pulse synthesis: probe pulses and single/multitone chirped RAP pulses as complex Rabi
//! envelopes in the frame rotating at the global center frequency.
//!
//! A RAP tone has amplitude `Ω₀·sinc(2(t−t₀)/τ)` restricted to the sinc main lobe (so it is zero
//! at both edges) and phase `δ_c·(t−t₀) + (R/2)(t−t₀)²`. Its instantaneous detuning sweeps the full
//! width `R·τ` centered on `δ_c`.

use std::io::{self, Write};

use num_complex::Complex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::real::{cis, Real};

/// Required Nyquist margin: at least this many samples per period of the fastest rotation.
pub const NYQUIST_MARGIN: f64 = 20.0;

/// Gaussian probes are truncated at ± this many intensity-FWHM durations.
pub const GAUSSIAN_HALF_SUPPORT: f64 = 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PulseError {
    #[error("grid too coarse: dt = {dt:e} s exceeds the Nyquist limit {limit:e} s")]
    GridTooCoarse { dt: f64, limit: f64 },
    #[error("tones {a} and {b} overlap: centers {separation_hz:e} Hz apart, spans need {needed_hz:e} Hz")]
    OverlappingTones {
        a: usize,
        b: usize,
        separation_hz: f64,
        needed_hz: f64,
    },
    #[error("grid [{grid_start:e}, {grid_end:e}] s does not cover pulse support [{start:e}, {end:e}] s")]
    GridDoesNotCover {
        grid_start: f64,
        grid_end: f64,
        start: f64,
        end: f64,
    },
    #[error("invalid pulse: {0}")]
    Invalid(String),
    #[error("empty envelope")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PulseShape {
    ProbeSquare,
    ProbeGaussian,
    RapSincChirp,
    MultitoneComposite,
}

impl PulseShape {
    pub fn is_probe(self) -> bool {
        matches!(self, PulseShape::ProbeSquare | PulseShape::ProbeGaussian)
    }

    pub fn is_rap(self) -> bool {
        matches!(self, PulseShape::RapSincChirp | PulseShape::MultitoneComposite)
    }
}

/// One spectral component of a pulse. Probes carry a single tone with zero chirp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tone<T> {
    /// Carrier detuning δ_c from the frame center, rad/s.
    pub detuning: T,
    /// Peak Rabi frequency Ω₀, rad/s.
    pub peak_rabi: T,
    /// Chirp rate R, rad/s².
    pub chirp_rate: T,
}

impl<T: Real> Tone<T> {
    pub fn new(detuning: T, peak_rabi: T, chirp_rate: T) -> Self {
        Self {
            detuning,
            peak_rabi,
            chirp_rate,
        }
    }

    /// Full swept width in rad/s for a pulse of the given duration.
    pub fn span(&self, duration: T) -> T {
        self.chirp_rate.abs() * duration
    }

    /// Full swept width in Hz.
    pub fn span_hz(&self, duration: T) -> T {
        self.span(duration) / T::two_pi()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulseSpec<T> {
    pub shape: PulseShape,
    pub center_time: T,
    /// τ_R for RAP pulses, τ_probe for probes (intensity FWHM for Gaussian probes).
    pub duration: T,
    pub tones: Vec<Tone<T>>,
}

impl<T: Real> PulseSpec<T> {
    pub fn square(center_time: T, duration: T, rabi: T) -> Self {
        Self {
            shape: PulseShape::ProbeSquare,
            center_time,
            duration,
            tones: vec![Tone::new(T::zero(), rabi, T::zero())],
        }
    }

    pub fn gaussian(center_time: T, fwhm: T, peak_rabi: T) -> Self {
        Self {
            shape: PulseShape::ProbeGaussian,
            center_time,
            duration: fwhm,
            tones: vec![Tone::new(T::zero(), peak_rabi, T::zero())],
        }
    }

    /// A probe of the given shape scaled so that its resonant pulse area is `area` radians.
    pub fn probe_with_area(shape: PulseShape, center_time: T, duration: T, area: T) -> Self {
        let mut p = match shape {
            PulseShape::ProbeGaussian => Self::gaussian(center_time, duration, T::one()),
            _ => Self::square(center_time, duration, T::one()),
        };
        let unit = p.area();
        p.tones[0].peak_rabi = area / unit;
        p
    }

    pub fn rap(center_time: T, duration: T, peak_rabi: T, chirp_rate: T, detuning: T) -> Self {
        Self {
            shape: PulseShape::RapSincChirp,
            center_time,
            duration,
            tones: vec![Tone::new(detuning, peak_rabi, chirp_rate)],
        }
    }

    pub fn multitone(center_time: T, duration: T, tones: Vec<Tone<T>>) -> Self {
        Self {
            shape: PulseShape::MultitoneComposite,
            center_time,
            duration,
            tones,
        }
    }

    /// Same pulse moved to a new center time.
    pub fn at(&self, center_time: T) -> Self {
        Self {
            center_time,
            ..self.clone()
        }
    }

    pub fn peak_rabi(&self) -> T {
        self.tones.first().map_or(T::zero(), |t| t.peak_rabi)
    }

    pub fn chirp_rate(&self) -> T {
        self.tones.first().map_or(T::zero(), |t| t.chirp_rate)
    }

    pub fn carrier_detuning(&self) -> T {
        self.tones.first().map_or(T::zero(), |t| t.detuning)
    }

    /// Time interval outside which the envelope is identically zero.
    pub fn support(&self) -> (T, T) {
        let half = match self.shape {
            PulseShape::ProbeGaussian => T::lit(GAUSSIAN_HALF_SUPPORT) * self.duration,
            _ => self.duration / T::lit(2.0),
        };
        (self.center_time - half, self.center_time + half)
    }

    /// Highest rotating-frame frequency in Hz, `(|δ_c| + |R|·τ/2)/2π` maximized over tones.
    pub fn f_max(&self) -> T {
        self.tones
            .iter()
            .map(|t| (t.detuning.abs() + t.span(self.duration) / T::lit(2.0)) / T::two_pi())
            .fold(T::zero(), T::max)
    }

    /// Resonant pulse area ∫Ω dt of a single-tone probe (analytic).
    pub fn area(&self) -> T {
        let om = self.peak_rabi();
        match self.shape {
            PulseShape::ProbeSquare => om * self.duration,
            PulseShape::ProbeGaussian => {
                // ∫ exp(-2 ln2 t²/τ²) over the truncated support
                let a = T::lit(2.0 * std::f64::consts::LN_2);
                let h = T::lit(GAUSSIAN_HALF_SUPPORT);
                om * self.duration * (T::PI() / a).sqrt() * erf(a.sqrt() * h)
            }
            _ => T::zero(),
        }
    }

    pub fn validate(&self) -> Result<(), PulseError> {
        if !(self.duration > T::zero()) || !self.duration.is_finite() {
            return Err(PulseError::Invalid(format!(
                "duration must be positive, got {}",
                self.duration
            )));
        }
        if self.tones.is_empty() {
            return Err(PulseError::Invalid("pulse has no tones".into()));
        }
        for t in &self.tones {
            if t.peak_rabi < T::zero() || !t.peak_rabi.is_finite() {
                return Err(PulseError::Invalid(format!(
                    "peak Rabi frequency must be >= 0, got {}",
                    t.peak_rabi
                )));
            }
        }
        match self.shape {
            PulseShape::ProbeSquare | PulseShape::ProbeGaussian | PulseShape::RapSincChirp => {
                if self.tones.len() != 1 {
                    return Err(PulseError::Invalid(format!(
                        "{:?} takes exactly one tone",
                        self.shape
                    )));
                }
            }
            PulseShape::MultitoneComposite => self.check_tone_overlap()?,
        }
        Ok(())
    }

    fn check_tone_overlap(&self) -> Result<(), PulseError> {
        let mut order: Vec<usize> = (0..self.tones.len()).collect();
        order.sort_by(|&a, &b| {
            self.tones[a]
                .detuning
                .partial_cmp(&self.tones[b].detuning)
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        for w in order.windows(2) {
            let (a, b) = (&self.tones[w[0]], &self.tones[w[1]]);
            let sep = b.detuning - a.detuning;
            let needed = (a.span(self.duration) + b.span(self.duration)) / T::lit(2.0);
            // relative slack for tones placed exactly edge to edge
            if sep < needed * (T::one() - T::lit(1e-9)) {
                return Err(PulseError::OverlappingTones {
                    a: w[0],
                    b: w[1],
                    separation_hz: (sep / T::two_pi()).as_f64(),
                    needed_hz: (needed / T::two_pi()).as_f64(),
                });
            }
        }
        Ok(())
    }

    /// Envelope value at time `t` (rotating frame), rad/s.
    pub fn value_at(&self, t: T) -> Complex<T> {
        let (lo, hi) = self.support();
        if t < lo || t > hi {
            return Complex::new(T::zero(), T::zero());
        }
        let x = t - self.center_time;
        match self.shape {
            PulseShape::ProbeSquare => self.tones[0].value(x, T::one()),
            PulseShape::ProbeGaussian => {
                let a = T::lit(2.0 * std::f64::consts::LN_2);
                let g = (-a * x * x / (self.duration * self.duration)).exp();
                self.tones[0].value(x, g)
            }
            PulseShape::RapSincChirp | PulseShape::MultitoneComposite => {
                let amp = sinc_main_lobe(T::lit(2.0) * x / self.duration);
                self.tones
                    .iter()
                    .fold(Complex::new(T::zero(), T::zero()), |acc, tone| {
                        acc + tone.value(x, amp)
                    })
            }
        }
    }
}

impl<T: Real> Tone<T> {
    #[inline]
    fn value(&self, x: T, shape: T) -> Complex<T> {
        let phase = self.detuning * x + self.chirp_rate * x * x / T::lit(2.0);
        cis(phase) * (self.peak_rabi * shape)
    }
}

/// Normalized sinc restricted to its main lobe: `sin(πx)/(πx)` for |x| ≤ 1, zero outside.
pub fn sinc_main_lobe<T: Real>(x: T) -> T {
    if x.abs() > T::one() {
        return T::zero();
    }
    if x == T::zero() {
        return T::one();
    }
    let px = T::PI() * x;
    px.sin() / px
}

// Abramowitz-Stegun 7.1.26 is too coarse for area normalization; use the series/continued
// fraction pair instead.
fn erf<T: Real>(x: T) -> T {
    let xf = x.as_f64();
    let v = if xf.abs() < 3.0 {
        // Maclaurin series
        let mut term = xf;
        let mut sum = xf;
        let x2 = xf * xf;
        for n in 1..200 {
            term *= -x2 / n as f64;
            let add = term / (2 * n + 1) as f64;
            sum += add;
            if add.abs() < 1e-17 * sum.abs() {
                break;
            }
        }
        sum * 2.0 / std::f64::consts::PI.sqrt()
    } else {
        // continued fraction for erfc
        let mut f = 0.0;
        for k in (1..60).rev() {
            f = (k as f64 / 2.0) / (xf.abs() + f);
        }
        let erfc = (-xf * xf).exp() / std::f64::consts::PI.sqrt() / (xf.abs() + f);
        (1.0 - erfc) * xf.signum()
    };
    T::lit(v)
}

/// Uniform sampling grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid<T> {
    pub t_start: T,
    pub dt: T,
    pub n: usize,
}

impl<T: Real> TimeGrid<T> {
    pub fn new(t_start: T, dt: T, n: usize) -> Self {
        Self { t_start, dt, n }
    }

    /// Grid spanning exactly `[t0, t1]` with an even number of intervals of at most `dt_max`.
    pub fn covering(t0: T, t1: T, dt_max: T) -> Self {
        let span = (t1 - t0).max(T::zero());
        let mut intervals = (span / dt_max).ceil().to_usize().unwrap_or(0).max(2);
        if intervals % 2 == 1 {
            intervals += 1;
        }
        let dt = span / T::from_usize_lossy(intervals);
        Self {
            t_start: t0,
            dt: if dt > T::zero() { dt } else { dt_max },
            n: intervals + 1,
        }
    }

    /// Grid covering the pulse support at the default resolution.
    pub fn for_pulse(spec: &PulseSpec<T>, dt_max: T) -> Self {
        let (lo, hi) = spec.support();
        Self::covering(lo, hi, dt_max)
    }

    pub fn t_end(&self) -> T {
        self.t_start + self.dt * T::from_usize_lossy(self.n.saturating_sub(1))
    }
}

/// Default sample spacing: `min(τ_probe/40, 1/(40·f_max))`. `f_max` should already include the
/// fastest atomic detuning the envelope will be integrated against.
pub fn default_dt<T: Real>(probe_duration: T, f_max_hz: T) -> T {
    let a = probe_duration / T::lit(40.0);
    if f_max_hz > T::zero() {
        a.min(T::one() / (T::lit(40.0) * f_max_hz))
    } else {
        a
    }
}

/// Complex Rabi frequency samples on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledEnvelope<T> {
    pub t_start: T,
    pub dt: T,
    pub samples: Vec<Complex<T>>,
}

impl<T: Real> SampledEnvelope<T> {
    pub fn zeros(grid: TimeGrid<T>) -> Self {
        Self {
            t_start: grid.t_start,
            dt: grid.dt,
            samples: vec![Complex::new(T::zero(), T::zero()); grid.n],
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time(&self, k: usize) -> T {
        self.t_start + self.dt * T::from_usize_lossy(k)
    }

    pub fn t_end(&self) -> T {
        self.time(self.len().saturating_sub(1))
    }

    pub fn duration(&self) -> T {
        self.t_end() - self.t_start
    }

    pub fn max_abs(&self) -> T {
        self.samples.iter().map(|s| s.norm()).fold(T::zero(), T::max)
    }

    /// Trapezoidal ∫Ω dt.
    pub fn area(&self) -> Complex<T> {
        trapezoid(&self.samples, self.dt)
    }

    /// Trapezoidal ∫|Ω|² dt.
    pub fn energy(&self) -> T {
        let p: Vec<T> = self.samples.iter().map(|s| s.norm_sqr()).collect();
        trapezoid(&p, self.dt)
    }

    /// Sample-wise sum. Grids must match.
    pub fn add(&self, other: &Self) -> Result<Self, PulseError> {
        if self.len() != other.len() || self.dt != other.dt || self.t_start != other.t_start {
            return Err(PulseError::Invalid("envelope grids differ".into()));
        }
        Ok(Self {
            t_start: self.t_start,
            dt: self.dt,
            samples: self
                .samples
                .iter()
                .zip(&other.samples)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    /// Copy expressed in a frame shifted by `offset` rad/s (an atom at detuning `d` appears at
    /// `d − offset`).
    pub fn reframed(&self, offset: T) -> Self {
        Self {
            t_start: self.t_start,
            dt: self.dt,
            samples: self
                .samples
                .iter()
                .enumerate()
                .map(|(k, s)| s * cis(-offset * self.time(k)))
                .collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t_s,re_rad_per_s,im_rad_per_s")?;
        for (k, s) in self.samples.iter().enumerate() {
            writeln!(w, "{},{},{}", self.time(k), s.re, s.im)?;
        }
        Ok(())
    }
}

fn trapezoid<T: Real, V>(xs: &[V], dt: T) -> V
where
    V: Copy + std::ops::Add<Output = V> + std::ops::Mul<T, Output = V>,
{
    match xs.len() {
        0 => panic!("trapezoid of empty slice"),
        1 => xs[0] * T::zero(),
        n => {
            let inner = xs[1..n - 1].iter().fold(xs[0] * T::zero(), |a, &x| a + x);
            (inner + (xs[0] + xs[n - 1]) * T::lit(0.5)) * dt
        }
    }
}

/// Samples `spec` on `grid`.
pub fn synthesize<T: Real>(
    spec: &PulseSpec<T>,
    grid: TimeGrid<T>,
) -> Result<SampledEnvelope<T>, PulseError> {
    spec.validate()?;
    if grid.n == 0 {
        return Err(PulseError::Empty);
    }
    let (lo, hi) = spec.support();
    let tol = grid.dt * T::lit(1e-6);
    if grid.t_start > lo + tol || grid.t_end() < hi - tol {
        return Err(PulseError::GridDoesNotCover {
            grid_start: grid.t_start.as_f64(),
            grid_end: grid.t_end().as_f64(),
            start: lo.as_f64(),
            end: hi.as_f64(),
        });
    }
    let f_max = spec.f_max();
    if f_max > T::zero() {
        let limit = T::one() / (T::lit(NYQUIST_MARGIN) * f_max);
        if grid.dt > limit * (T::one() + T::lit(1e-12)) {
            return Err(PulseError::GridTooCoarse {
                dt: grid.dt.as_f64(),
                limit: limit.as_f64(),
            });
        }
    }
    let offset = grid.t_start;
    let samples = (0..grid.n)
        .map(|k| {
            // grid points a few ulps past an edge still sample the edge value
            let t = offset + grid.dt * T::from_usize_lossy(k);
            let t = if t > hi && t <= hi + tol {
                hi
            } else if t < lo && t >= lo - tol {
                lo
            } else {
                t
            };
            spec.value_at(t)
        })
        .collect();
    Ok(SampledEnvelope {
        t_start: grid.t_start,
        dt: grid.dt,
        samples,
    })
}

/// Two-sided power spectrum on an explicit frequency grid (Hz), by direct summation.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum<T> {
    pub freq_hz: Vec<T>,
    pub power: Vec<T>,
}

impl<T: Real> Spectrum<T> {
    /// Full width at half maximum in Hz, by linear interpolation of the half-power crossings.
    pub fn fwhm(&self) -> Option<T> {
        let (imax, &pmax) = self
            .power
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))?;
        if !(pmax > T::zero()) {
            return None;
        }
        let half = pmax / T::lit(2.0);
        let cross = |i: usize, j: usize| {
            let (p0, p1) = (self.power[i], self.power[j]);
            let (f0, f1) = (self.freq_hz[i], self.freq_hz[j]);
            f0 + (half - p0) * (f1 - f0) / (p1 - p0)
        };
        let mut right = None;
        for j in imax + 1..self.power.len() {
            if self.power[j] <= half {
                right = Some(cross(j - 1, j));
                break;
            }
        }
        let mut left = None;
        for j in (0..imax).rev() {
            if self.power[j] <= half {
                left = Some(cross(j + 1, j));
                break;
            }
        }
        Some(right? - left?)
    }

    /// Fraction of the summed power with |f − center| ≤ half_width.
    pub fn band_fraction(&self, center_hz: T, half_width_hz: T) -> T {
        let total: T = self.power.iter().copied().sum();
        if total == T::zero() {
            return T::zero();
        }
        let inside: T = self
            .freq_hz
            .iter()
            .zip(&self.power)
            .filter(|(f, _)| (**f - center_hz).abs() <= half_width_hz)
            .map(|(_, p)| *p)
            .sum();
        inside / total
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "f_hz,power")?;
        for (f, p) in self.freq_hz.iter().zip(&self.power) {
            writeln!(w, "{},{}", f, p)?;
        }
        Ok(())
    }
}

/// |∫Ω(t)e^{−i2πft}dt|² at each requested frequency.
pub fn spectrum<T: Real>(env: &SampledEnvelope<T>, freq_hz: &[T]) -> Result<Spectrum<T>, PulseError> {
    if env.is_empty() {
        return Err(PulseError::Empty);
    }
    let power = freq_hz
        .iter()
        .map(|&f| {
            let w = T::two_pi() * f;
            // recurrence for e^{-iωt_k}; renormalized every block to bound drift
            let step = cis(-w * env.dt);
            let mut ph = cis(-w * env.t_start);
            let mut acc = Complex::new(T::zero(), T::zero());
            let last = env.len() - 1;
            for (k, s) in env.samples.iter().enumerate() {
                let weight = if k == 0 || k == last { T::lit(0.5) } else { T::one() };
                acc = acc + s * ph * weight;
                ph = ph * step;
                if k % 256 == 255 {
                    ph = cis(-w * env.time(k + 1));
                }
            }
            (acc * env.dt).norm_sqr()
        })
        .collect();
    Ok(Spectrum {
        freq_hz: freq_hz.to_vec(),
        power,
    })
}

/// Spectrum on `n` evenly spaced frequencies spanning `[center − half_span, center + half_span]` Hz.
pub fn spectrum_uniform<T: Real>(
    env: &SampledEnvelope<T>,
    center_hz: T,
    half_span_hz: T,
    n: usize,
) -> Result<Spectrum<T>, PulseError> {
    let n = n.max(2);
    let df = T::lit(2.0) * half_span_hz / T::from_usize_lossy(n - 1);
    let freqs: Vec<T> = (0..n)
        .map(|k| center_hz - half_span_hz + df * T::from_usize_lossy(k))
        .collect();
    spectrum(env, &freqs)
}

/// Probe spectral FWHM in Hz from its synthesized envelope.
pub fn probe_fwhm_hz<T: Real>(probe: &PulseSpec<T>) -> Result<T, PulseError> {
    probe.validate()?;
    let dt = probe.duration / T::lit(200.0);
    let env = synthesize(probe, TimeGrid::for_pulse(probe, dt))?;
    // first spectral zero of a square pulse is at 1/τ; search well beyond it
    let half_span = T::lit(3.0) / probe.duration;
    let spec = spectrum_uniform(&env, probe.carrier_detuning() / T::two_pi(), half_span, 1201)?;
    spec.fwhm()
        .ok_or_else(|| PulseError::Invalid("probe spectrum has no half-maximum crossing".into()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionThresholds<T> {
    pub adiabaticity: T,
    pub bandwidth: T,
}

impl<T: Real> Default for ConditionThresholds<T> {
    fn default() -> Self {
        Self {
            adiabaticity: T::lit(10.0),
            bandwidth: T::lit(3.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditionReport {
    /// Ω₀²/R; infinite for an unchirped pulse.
    pub adiabaticity_ratio: f64,
    /// RAP swept span over probe spectral FWHM.
    pub bandwidth_ratio: f64,
    pub adiabatic_ok: bool,
    pub bandwidth_ok: bool,
}

impl ConditionReport {
    pub fn pass(&self) -> bool {
        self.adiabatic_ok && self.bandwidth_ok
    }
}

/// Adiabaticity (Ω₀² ≫ R) and bandwidth (span ≳ 3·probe FWHM) checks.
pub fn check_conditions<T: Real>(
    rap: &PulseSpec<T>,
    probe: &PulseSpec<T>,
    thresholds: ConditionThresholds<T>,
) -> Result<ConditionReport, PulseError> {
    if !rap.shape.is_rap() {
        return Err(PulseError::Invalid("first argument must be a RAP pulse".into()));
    }
    if !probe.shape.is_probe() {
        return Err(PulseError::Invalid("second argument must be a probe pulse".into()));
    }
    // the weakest tone bounds the adiabaticity of a composite
    let tone = rap
        .tones
        .iter()
        .min_by(|a, b| {
            let ra = a.peak_rabi * a.peak_rabi / a.chirp_rate.abs();
            let rb = b.peak_rabi * b.peak_rabi / b.chirp_rate.abs();
            ra.partial_cmp(&rb).unwrap_or(std::cmp::Ordering::Equal)
        })
        .ok_or_else(|| PulseError::Invalid("RAP has no tones".into()))?;
    let adiabaticity = if tone.chirp_rate == T::zero() {
        f64::INFINITY
    } else {
        (tone.peak_rabi * tone.peak_rabi / tone.chirp_rate.abs()).as_f64()
    };
    let fwhm = probe_fwhm_hz(probe)?;
    let bandwidth = (tone.span_hz(rap.duration) / fwhm).as_f64();
    Ok(ConditionReport {
        adiabaticity_ratio: adiabaticity,
        bandwidth_ratio: bandwidth,
        adiabatic_ok: adiabaticity >= thresholds.adiabaticity.as_f64(),
        bandwidth_ok: bandwidth >= thresholds.bandwidth.as_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::real::{mhz, mhz_per_ms, us};

    fn paper_rap() -> PulseSpec<f64> {
        PulseSpec::rap(25e-6, us(50.0), mhz(0.35), mhz_per_ms(30.0), 0.0)
    }

    fn sample(p: &PulseSpec<f64>, dt: f64) -> SampledEnvelope<f64> {
        synthesize(p, TimeGrid::for_pulse(p, dt)).unwrap()
    }

    /// Half-power point of sinc²(πx) by bisection: the rectangular pulse FWHM is 2x/τ.
    fn sinc2_half_power() -> f64 {
        let f = |x: f64| {
            let s = (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x);
            s * s - 0.5
        };
        let (mut lo, mut hi) = (0.1, 0.9);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    #[test]
    fn paper_rap_span() {
        let p = paper_rap();
        assert!((p.tones[0].span_hz(p.duration) - 1.5e6).abs() < 1e-6);
    }

    #[test]
    fn zero_amplitude_gives_zero_samples() {
        let p = PulseSpec::rap(25e-6, us(50.0), 0.0, mhz_per_ms(30.0), 0.0);
        let env = sample(&p, 10e-9);
        assert!(env.samples.iter().all(|s| s.norm() == 0.0));
        let spec = spectrum_uniform(&env, 0.0, 1e6, 11).unwrap();
        assert!(spec.power.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn sinc_edges_vanish() {
        let p = paper_rap();
        let (lo, hi) = p.support();
        let om = p.peak_rabi();
        assert!(p.value_at(lo).norm() < 1e-12 * om);
        assert!(p.value_at(hi).norm() < 1e-12 * om);
        assert_eq!(p.value_at(hi + 1e-9).norm(), 0.0);
        assert!((p.value_at(p.center_time).norm() - om).abs() < 1e-9 * om);
    }

    #[test]
    fn square_probe_fwhm_matches_sinc_oracle() {
        let p = PulseSpec::square(0.0, us(2.0), 1.0);
        let fwhm = probe_fwhm_hz(&p).unwrap();
        let oracle = 2.0 * sinc2_half_power() / 2e-6;
        assert!((oracle - 0.443e6).abs() < 1e3);
        assert!((fwhm - oracle).abs() < 1e-3 * oracle, "{fwhm} vs {oracle}");
    }

    #[test]
    fn gaussian_probe_fwhm_and_area() {
        let tau = us::<f64>(2.0);
        let p = PulseSpec::gaussian(0.0, tau, 1.0);
        // Fourier pair of an intensity-FWHM τ Gaussian: power FWHM 4 ln2 / (2π τ)
        let oracle = 4.0 * std::f64::consts::LN_2 / (std::f64::consts::TAU * tau);
        let fwhm = probe_fwhm_hz(&p).unwrap();
        assert!((fwhm - oracle).abs() < 5e-3 * oracle, "{fwhm} vs {oracle}");
        let env = sample(&p, tau / 1000.0);
        assert!((env.area().re - p.area()).abs() < 1e-8 * p.area(), "{} {}", env.area().re, p.area());
        let q = PulseSpec::probe_with_area(PulseShape::ProbeGaussian, 0.0, tau, 0.05);
        assert!((q.area() - 0.05).abs() < 1e-15);
    }

    #[test]
    fn rap_spectrum_is_confined_to_sweep() {
        let p = paper_rap();
        let env = sample(&p, 20e-9);
        let spec = spectrum_uniform(&env, 0.0, 2e6, 801).unwrap();
        assert!(spec.band_fraction(0.0, 0.8e6) > 0.97);
        assert!(spec.band_fraction(0.0, 0.25e6) < 0.8);
    }

    #[test]
    fn three_tone_bands_are_disjoint() {
        let span = mhz_per_ms::<f64>(30.0);
        let tones: Vec<_> = [-1.0, 0.0, 1.0]
            .iter()
            .map(|&k| Tone::new(k * mhz::<f64>(3.5), mhz(0.35), span))
            .collect();
        let p = PulseSpec::multitone(25e-6, us(50.0), tones);
        let env = sample(&p, 1.0 / (40.0 * p.f_max()));
        let spec = spectrum_uniform(&env, 0.0, 6e6, 1201).unwrap();
        let total: f64 = spec.power.iter().sum();
        for c in [-3.5e6, 0.0, 3.5e6] {
            let frac = spec.band_fraction(c, 0.8e6);
            assert!(frac > 0.3 && frac < 0.36, "band at {c}: {frac}");
        }
        // the guard gaps between bands are nearly dark
        let gap: f64 = spec
            .freq_hz
            .iter()
            .zip(&spec.power)
            .filter(|(f, _)| ((f.abs() - 1.75e6).abs()) < 0.5e6)
            .map(|(_, p)| p)
            .sum();
        assert!(gap / total < 0.01);
    }

    #[test]
    fn overlapping_tones_rejected() {
        let r = mhz_per_ms::<f64>(30.0);
        let p = PulseSpec::multitone(
            25e-6,
            us(50.0),
            vec![Tone::new(0.0, 1.0, r), Tone::new(mhz(1.0), 1.0, r)],
        );
        assert!(matches!(p.validate(), Err(PulseError::OverlappingTones { .. })));
        let q = PulseSpec::multitone(
            25e-6,
            us(50.0),
            vec![Tone::new(0.0, 1.0, r), Tone::new(mhz(1.5), 1.0, r)],
        );
        assert!(q.validate().is_ok());
    }

    #[test]
    fn coarse_or_short_grid_rejected() {
        let p = paper_rap();
        let coarse = TimeGrid::for_pulse(&p, 1e-6);
        assert!(matches!(synthesize(&p, coarse), Err(PulseError::GridTooCoarse { .. })));
        let short = TimeGrid::covering(0.0, 40e-6, 10e-9);
        assert!(matches!(synthesize(&p, short), Err(PulseError::GridDoesNotCover { .. })));
    }

    #[test]
    fn edge_samples_survive_round_off() {
        let p = PulseSpec::gaussian(0.0, us(1.5830681542558713), mhz(0.2));
        let edge = p.value_at(p.support().1).norm();
        assert!(edge > 0.0);
        for dt in [40e-9, 20e-9, 10e-9, 1e-9] {
            let env = sample(&p, dt);
            assert_eq!(env.samples[0].norm(), edge);
            assert_eq!(env.samples[env.samples.len() - 1].norm(), edge, "dt {dt:e}");
        }
    }

    #[test]
    fn amplitude_bounded_by_sum_of_peaks() {
        let r = mhz_per_ms::<f64>(30.0);
        let tones = vec![Tone::new(-mhz::<f64>(2.0), mhz(0.3), r), Tone::new(mhz(2.0), mhz(0.2), r)];
        let p = PulseSpec::multitone(25e-6, us(50.0), tones);
        let env = sample(&p, 5e-9);
        assert!(env.max_abs() <= mhz::<f64>(0.5) * (1.0 + 1e-12));
    }

    #[test]
    fn paper_conditions() {
        let rap = paper_rap();
        let probe = PulseSpec::square(0.0, us(2.0), 1.0);
        let rep = check_conditions(&rap, &probe, ConditionThresholds::default()).unwrap();
        let oracle = (mhz::<f64>(0.35)).powi(2) / mhz_per_ms::<f64>(30.0);
        assert!((rep.adiabaticity_ratio - oracle).abs() < 1e-9 * oracle);
        assert!((rep.adiabaticity_ratio - 25.7).abs() < 0.05);
        assert!((rep.bandwidth_ratio - 3.39).abs() < 0.02, "{}", rep.bandwidth_ratio);
        assert!(rep.pass());
    }

    #[test]
    fn adiabaticity_boundary_fails() {
        let r = mhz_per_ms::<f64>(30.0);
        let rap = PulseSpec::rap(0.0, us(50.0), r.sqrt(), r, 0.0);
        let probe = PulseSpec::square(0.0, us(2.0), 1.0);
        let rep = check_conditions(&rap, &probe, ConditionThresholds::default()).unwrap();
        assert!((rep.adiabaticity_ratio - 1.0).abs() < 1e-12);
        assert!(!rep.adiabatic_ok && !rep.pass());
    }

    #[test]
    fn unchirped_rap_is_infinitely_adiabatic() {
        let rap = PulseSpec::rap(0.0, us(50.0), 1.0, 0.0, 0.0);
        let probe = PulseSpec::square(0.0, us(2.0), 1.0);
        let rep = check_conditions(&rap, &probe, ConditionThresholds::default()).unwrap();
        assert!(rep.adiabaticity_ratio.is_infinite() && rep.adiabatic_ok);
    }

    #[test]
    fn wrong_kinds_rejected() {
        let probe = PulseSpec::square(0.0, us(2.0), 1.0);
        assert!(check_conditions(&probe, &probe, ConditionThresholds::default()).is_err());
    }

    #[test]
    fn csv_headers() {
        let env = sample(&PulseSpec::square(0.0, 1e-6, 1.0), 1e-7);
        let mut buf = Vec::new();
        env.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t_s,re_rad_per_s,im_rad_per_s\n"));
        assert_eq!(text.lines().count(), env.len() + 1);
        let mut buf = Vec::new();
        spectrum_uniform(&env, 0.0, 1e6, 5).unwrap().write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("f_hz,power\n"));
    }

    #[test]
    fn empty_envelope_spectrum_errors() {
        let env = SampledEnvelope::<f64> {
            t_start: 0.0,
            dt: 1.0,
            samples: vec![],
        };
        assert_eq!(spectrum(&env, &[0.0]), Err(PulseError::Empty));
    }
}
