//! Forward propagation through an optically thick medium in the weak-probe limit.
//!
//! The field is resolved on the same detuning bins as the ensemble. In bin `j` the amplitude obeys
//!
//! ```text
//! ∂z Ẽ_j = (α/2)·r_j·w_j·Ẽ_j + iα·(Δδ/2π)·r_j·c_j(z)
//! ```
//!
//! with `r_j = g_j/g_peak`, `w_j` the inversion seen by the field and `c_j(z)` the coherence the
//! earlier pulses left in that slice. The time-domain output is `E(t) = Σ_j Ẽ_j(L)·e^{(iδ_j − 1/T2)(t − t_ref)}`,
//! in the same Rabi-frequency units as the input probe. For a uniform line and ideal rephasing this
//! gives η = (αL)²e^{−αL} when the medium is back in the ground state and 4·sinh²(αL/2) when it
//! is inverted.
//!
//! Control pulses are undepleted, so every slice holds the same background and the probe response
//! of slice `m` is the input-face response scaled by the probe attenuation `a_j(z_m)`.

use std::io::{self, Write};

use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::bloch::AtomParams;
use crate::ensemble::{energy_of, sample_times, EnsembleGrid};
use crate::pulse::SampledEnvelope;
use crate::real::{cis, pairwise_sum, Real};

/// Largest probe tip angle (radians) for which the linear response is trusted.
pub const MAX_TIP_ANGLE: f64 = 0.05;

/// Refuse media whose gain exponent αL·⟨σ_z⟩ exceeds this.
pub const MAX_GAIN_EXPONENT: f64 = 25.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PropagationError {
    #[error("invalid medium: {0}")]
    InvalidMedium(String),
    #[error("probe too strong for linear response: tip angle {tip:.4} rad exceeds {limit} rad")]
    StrongProbe { tip: f64, limit: f64 },
    #[error("missing coherence data: {0}")]
    MissingCoherence(String),
    #[error("gain overflow guard: alpha_L * <sigma_z> = {exponent:.3} exceeds {limit}")]
    GainOverflow { exponent: f64, limit: f64 },
    #[error("spectator atoms are disabled; free-induction decay is undefined")]
    NoSpectators,
    #[error("invalid chain efficiency {0}: must lie in (0, 1]")]
    InvalidEfficiency(f64),
    #[error("invalid window: {0}")]
    InvalidWindow(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MediumSpec<T> {
    /// Peak optical depth αL.
    pub alpha_l: T,
    pub slices: usize,
    /// Crystal length in meters (informational).
    pub length_m: T,
}

impl<T: Real> MediumSpec<T> {
    pub fn new(alpha_l: T, slices: usize) -> Self {
        Self {
            alpha_l,
            slices,
            length_m: T::lit(0.012),
        }
    }

    pub fn validate(&self) -> Result<(), PropagationError> {
        if self.slices < 8 {
            return Err(PropagationError::InvalidMedium(format!(
                "at least 8 slices required, got {}",
                self.slices
            )));
        }
        if !(self.alpha_l >= T::zero()) || !self.alpha_l.is_finite() {
            return Err(PropagationError::InvalidMedium(format!(
                "optical depth must be finite and >= 0, got {}",
                self.alpha_l
            )));
        }
        Ok(())
    }

    /// Slice thickness in units of L.
    pub fn h(&self) -> T {
        T::one() / T::from_usize_lossy(self.slices)
    }

    /// Slice midpoints in units of L.
    pub fn midpoints(&self) -> Vec<T> {
        let h = self.h();
        (0..self.slices)
            .map(|m| h * (T::from_usize_lossy(m) + T::lit(0.5)))
            .collect()
    }
}

/// Probe absorption through the slices.
#[derive(Debug, Clone, PartialEq)]
pub struct Absorption<T> {
    /// Slice midpoints z_m/L.
    pub z: Vec<T>,
    /// Field amplitude factor `a_j(z_m)` per slice (outer) and bin (inner).
    pub factors: Vec<Vec<T>>,
    /// `a_j(L)` at the exit face.
    pub exit_factors: Vec<T>,
    /// Transmitted probe energy over input energy.
    pub transmitted_fraction: T,
    /// Peak tip angle ∫|Ω|dt of the probe at the input face.
    pub tip_angle: T,
    /// ∫|S_in|²dt.
    pub input_energy: T,
}

fn ratio<T: Real>(a: &AtomParams<T>, peak: T) -> T {
    if peak > T::zero() {
        a.weight / peak
    } else {
        T::zero()
    }
}

/// Weak-probe absorption: bin `j` of the probe decays as `a_j(z) = exp((α/2)·r_j·w_j·z)` where
/// `w_j` is the inversion the probe meets (−1 for the ground state).
pub fn absorb_probe<T: Real>(
    medium: &MediumSpec<T>,
    grid: &EnsembleGrid<T>,
    inversion: &[T],
    probe: &SampledEnvelope<T>,
) -> Result<Absorption<T>, PropagationError> {
    medium.validate()?;
    if inversion.len() != grid.len() {
        return Err(PropagationError::MissingCoherence(format!(
            "{} inversion values for {} bins",
            inversion.len(),
            grid.len()
        )));
    }
    if probe.is_empty() {
        return Err(PropagationError::MissingCoherence("empty probe".into()));
    }
    let abs: Vec<T> = probe.samples.iter().map(|s| s.norm()).collect();
    let tip = trapezoid(&abs, probe.dt);
    if tip > T::lit(MAX_TIP_ANGLE) {
        return Err(PropagationError::StrongProbe {
            tip: tip.as_f64(),
            limit: MAX_TIP_ANGLE,
        });
    }
    let half_a = medium.alpha_l / T::lit(2.0);
    let rates: Vec<T> = grid
        .atoms
        .iter()
        .zip(inversion)
        .map(|(a, &w)| half_a * ratio(a, grid.peak_weight) * w)
        .collect();
    let z = medium.midpoints();
    let factors: Vec<Vec<T>> = z
        .iter()
        .map(|&zm| rates.iter().map(|&k| (k * zm).exp()).collect())
        .collect();
    let exit_factors: Vec<T> = rates.iter().map(|&k| k.exp()).collect();

    // spectral weights |Ŝ(δ_j)|² of the probe at the bin frequencies
    let spec: Vec<T> = grid
        .atoms
        .par_iter()
        .map(|a| {
            let mut acc = Complex::new(T::zero(), T::zero());
            for (k, s) in probe.samples.iter().enumerate() {
                acc = acc + s * cis(-a.detuning * probe.time(k));
            }
            acc.norm_sqr()
        })
        .collect();
    let total = pairwise_sum(&spec, T::zero());
    let passed: Vec<T> = spec.iter().zip(&exit_factors).map(|(s, a)| *s * *a * *a).collect();
    let transmitted_fraction = if total > T::zero() {
        pairwise_sum(&passed, T::zero()) / total
    } else {
        T::one()
    };
    Ok(Absorption {
        z,
        factors,
        exit_factors,
        transmitted_fraction,
        tip_angle: tip,
        input_energy: probe.energy(),
    })
}

fn trapezoid<T: Real>(xs: &[T], dt: T) -> T {
    match xs.len() {
        0 | 1 => T::zero(),
        n => (pairwise_sum(&xs[1..n - 1], T::zero()) + (xs[0] + xs[n - 1]) * T::lit(0.5)) * dt,
    }
}

/// Integrates the bin amplitudes through the slices. `source_scale[m][j]` multiplies the source
/// coherence of bin `j` in slice `m` (the probe attenuation for echoes, 1 for the background).
pub fn propagate_bins<T: Real>(
    medium: &MediumSpec<T>,
    grid: &EnsembleGrid<T>,
    inversion: &[T],
    coherence: &[Complex<T>],
    source_scale: Option<&[Vec<T>]>,
) -> Result<Vec<Complex<T>>, PropagationError> {
    medium.validate()?;
    let n = grid.len();
    if coherence.len() != n || inversion.len() != n {
        return Err(PropagationError::MissingCoherence(format!(
            "expected {n} bins, got {} coherences and {} inversions",
            coherence.len(),
            inversion.len()
        )));
    }
    if let Some(s) = source_scale {
        if s.len() != medium.slices || s.iter().any(|row| row.len() != n) {
            return Err(PropagationError::MissingCoherence("source scale shape mismatch".into()));
        }
    }
    let mean_w = pairwise_sum(
        &grid.atoms.iter().zip(inversion).map(|(a, &w)| a.weight * w).collect::<Vec<_>>(),
        T::zero(),
    );
    let exponent = medium.alpha_l * mean_w;
    if exponent > T::lit(MAX_GAIN_EXPONENT) {
        return Err(PropagationError::GainOverflow {
            exponent: exponent.as_f64(),
            limit: MAX_GAIN_EXPONENT,
        });
    }
    let a = medium.alpha_l;
    let h = medium.h();
    let kappa = grid.spacing / T::two_pi();
    let out = (0..n)
        .map(|j| {
            let r = ratio(&grid.atoms[j], grid.peak_weight);
            let gamma = a / T::lit(2.0) * r * inversion[j];
            let step = (gamma * h).exp();
            let half = (gamma * h / T::lit(2.0)).exp();
            let src = Complex::new(T::zero(), a * kappa * r) * coherence[j];
            let mut e = Complex::new(T::zero(), T::zero());
            for m in 0..medium.slices {
                let scale = source_scale.map_or(T::one(), |s| s[m][j]);
                e = e * step + src * (scale * h * half);
            }
            e
        })
        .collect();
    Ok(out)
}

/// `Σ_j Ẽ_j e^{(iδ_j − 1/T2)(t − t_ref)}` at each time.
pub fn output_field<T: Real>(atoms: &[AtomParams<T>], amps: &[Complex<T>], t_ref: T, times: &[T]) -> Vec<Complex<T>> {
    times
        .par_iter()
        .map(|&t| {
            let dt = t - t_ref;
            let terms: Vec<Complex<T>> = atoms
                .iter()
                .zip(amps)
                .map(|(a, e)| e * cis(a.detuning * dt) * (-a.gamma2() * dt).exp())
                .collect();
            pairwise_sum(&terms, Complex::new(T::zero(), T::zero()))
        })
        .collect()
}

/// Output field and efficiency figures.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationResult<T> {
    pub times: Vec<T>,
    /// Echo field at the exit face (probe-induced part).
    pub e_out: Vec<Complex<T>>,
    /// Free-induction field of the control-only background, when computed.
    pub fid_trace: Option<Vec<Complex<T>>>,
    /// `None` when the probe carries no energy.
    pub efficiency: Option<T>,
    pub echo_energy: T,
    pub fid_energy: Option<T>,
    pub input_energy: T,
    pub snr: Option<T>,
    pub transmitted_fraction: T,
    /// Weighted mean inversion seen by the echo.
    pub mean_inversion: T,
}

impl<T: Real> PropagationResult<T> {
    pub fn peak(&self) -> (T, T) {
        crate::ensemble::peak_of(&self.times, &self.e_out)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t_s,re,im,abs2")?;
        for (t, e) in self.times.iter().zip(&self.e_out) {
            writeln!(w, "{},{},{},{}", t, e.re, e.im, e.norm_sqr())?;
        }
        Ok(())
    }
}

/// Inputs for [`emit_echo`], all captured at `t_ref` after the last control pulse.
#[derive(Debug, Clone, Copy)]
pub struct EchoState<'a, T> {
    pub t_ref: T,
    /// Probe-induced coherence of the input-face slice.
    pub perturbation: &'a [Complex<T>],
    /// Control-only coherence (identical in every slice), for the FID.
    pub background: Option<&'a [Complex<T>]>,
    /// Inversion per bin seen by the emitted field.
    pub inversion: &'a [T],
}

/// Propagates the echo (and, when a background is given, the FID) and integrates the output over
/// `window = (lo, hi)` sampled every `dt_out`.
pub fn emit_echo<T: Real>(
    medium: &MediumSpec<T>,
    grid: &EnsembleGrid<T>,
    absorption: &Absorption<T>,
    state: EchoState<'_, T>,
    window: (T, T),
    dt_out: T,
) -> Result<PropagationResult<T>, PropagationError> {
    let (lo, hi) = window;
    if !(hi > lo) || !(dt_out > T::zero()) {
        return Err(PropagationError::InvalidWindow(format!("[{lo}, {hi}] with step {dt_out}")));
    }
    if lo < state.t_ref {
        return Err(PropagationError::InvalidWindow(format!(
            "window starts at {lo} s, before the last control pulse ends at {} s",
            state.t_ref
        )));
    }
    let amps = propagate_bins(medium, grid, state.inversion, state.perturbation, Some(&absorption.factors))?;
    let times = sample_times(lo, hi, dt_out);
    let e_out = output_field(&grid.atoms, &amps, state.t_ref, &times);
    let echo_energy = energy_of(&times, &e_out);
    let (fid_trace, fid_energy) = match state.background {
        Some(bg) => {
            let famps = propagate_bins(medium, grid, state.inversion, bg, None)?;
            let f = output_field(&grid.atoms, &famps, state.t_ref, &times);
            let en = energy_of(&times, &f);
            (Some(f), Some(en))
        }
        None => (None, None),
    };
    let mean_inversion = pairwise_sum(
        &grid.atoms.iter().zip(state.inversion).map(|(a, &w)| a.weight * w).collect::<Vec<_>>(),
        T::zero(),
    );
    Ok(PropagationResult {
        snr: fid_energy.map(|f| if f > T::zero() { echo_energy / f } else { T::infinity() }),
        efficiency: (absorption.input_energy > T::zero()).then(|| echo_energy / absorption.input_energy),
        times,
        e_out,
        fid_trace,
        echo_energy,
        fid_energy,
        input_energy: absorption.input_energy,
        transmitted_fraction: absorption.transmitted_fraction,
        mean_inversion,
    })
}

/// Free-induction field of the control-only background over `window`.
#[derive(Debug, Clone, PartialEq)]
pub struct FidTrace<T> {
    pub times: Vec<T>,
    pub field: Vec<Complex<T>>,
    pub energy: T,
}

pub fn fid_noise<T: Real>(
    medium: &MediumSpec<T>,
    grid: &EnsembleGrid<T>,
    background: &[Complex<T>],
    inversion: &[T],
    t_ref: T,
    window: (T, T),
    dt_out: T,
) -> Result<FidTrace<T>, PropagationError> {
    if !grid.includes_spectators {
        return Err(PropagationError::NoSpectators);
    }
    let (lo, hi) = window;
    if !(hi > lo) || lo < t_ref {
        return Err(PropagationError::InvalidWindow(format!("[{lo}, {hi}] after {t_ref}")));
    }
    let amps = propagate_bins(medium, grid, inversion, background, None)?;
    let times = sample_times(lo, hi, dt_out);
    let field = output_field(&grid.atoms, &amps, t_ref, &times);
    let energy = energy_of(&times, &field);
    Ok(FidTrace { times, field, energy })
}

/// Writes an efficiency sweep as `alpha_L,eta`.
pub fn write_sweep_csv<T: Real, W: Write>(rows: &[(T, T)], mut w: W) -> io::Result<()> {
    writeln!(w, "alpha_L,eta")?;
    for (a, e) in rows {
        writeln!(w, "{},{}", a, e)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhotonBudget {
    pub input_photons: f64,
    pub chain: Vec<f64>,
    pub transmission: f64,
    pub expected_detected: f64,
}

impl PhotonBudget {
    /// Seeded Poisson draws of the detected count, one per trial.
    pub fn sample(&self, seed: u64, trials: usize) -> Vec<u64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if self.expected_detected <= 0.0 {
            return vec![0; trials];
        }
        let dist = Poisson::new(self.expected_detected).expect("positive mean");
        (0..trials).map(|_| dist.sample(&mut rng) as u64).collect()
    }
}

/// Expected detections after a chain of efficiencies.
pub fn photon_budget(input_photons: f64, chain: &[f64]) -> Result<PhotonBudget, PropagationError> {
    for &e in chain {
        if !(e > 0.0 && e <= 1.0) {
            return Err(PropagationError::InvalidEfficiency(e));
        }
    }
    let transmission: f64 = chain.iter().product();
    Ok(PhotonBudget {
        input_photons,
        chain: chain.to_vec(),
        transmission,
        expected_detected: input_photons * transmission,
    })
}
