//! RAPPI and two-pulse photon echo (2PPE) sequences and end-to-end runs.
//!
//! Times are measured from the probe center. For RAPPI, τ₁ runs from the probe to the start of
//! RAP1, τ_R is the RAP duration and τ₂ the gap between the end of RAP1 and the start of RAP2;
//! the secondary echo is due at `2(τ₂ + τ_R)`. For 2PPE a single π-pulse centered at τ₁ gives an
//! echo at `2τ₁`.

use num_complex::Complex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{fit_decay, AnalysisError, DecayForm, DecayModel};
use crate::bloch::Integrator;
use crate::ensemble::{
    build_grid, echo_time_check, energy_of, free_field, peak_of, run_sequence, sample_times, EnsembleError,
    EnsembleGrid, EnsembleSpec, EnsembleTrace, Event, SequenceOptions, SequenceResult, Snapshot,
};
use crate::propagation::{absorb_probe, emit_echo, EchoState, MediumSpec, PropagationError, PropagationResult};
use crate::pulse::{
    check_conditions, default_dt, probe_fwhm_hz, synthesize, ConditionReport, ConditionThresholds, PulseError,
    PulseShape, PulseSpec, SampledEnvelope, TimeGrid,
};
use crate::real::{mhz, mhz_per_ms, us, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("timing: {0}")]
    Timing(String),
    #[error("invalid run: {0}")]
    Invalid(String),
    #[error("at least 3 storage times required, got {0}")]
    TooFewPoints(usize),
    #[error(transparent)]
    Pulse(#[from] PulseError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Propagation(#[from] PropagationError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProtocolKind {
    #[serde(rename = "rappi")]
    Rappi,
    #[serde(rename = "2ppe")]
    TwoPpe,
}

/// How the 2PPE π-pulse is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PiMode {
    /// Short resonant square pulse integrated like any other control.
    #[default]
    Pulse,
    /// Instantaneous rotation.
    Hard,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolRun<T> {
    pub kind: ProtocolKind,
    pub tau1: T,
    /// Unused for 2PPE.
    pub tau2: T,
    /// RAP duration; unused for 2PPE.
    pub tau_r: T,
    /// Probe pulse; its center time is ignored and set to 0.
    pub probe: PulseSpec<T>,
    /// RAP template (RAPPI) or π-pulse (2PPE); the center time is ignored.
    pub control: PulseSpec<T>,
    pub medium: MediumSpec<T>,
    pub ensemble: EnsembleSpec<T>,
    pub t2: T,
    pub pi_mode: PiMode,
    /// Sample spacing; `None` picks [`default_dt`] from the probe width and fastest frequency.
    pub dt: Option<T>,
    /// Ensemble trace spacing; `None` records no trace.
    pub trace_dt: Option<T>,
}

/// Probe tip angle used by the bundled parameter sets.
pub const DEFAULT_PROBE_AREA: f64 = 0.01;

impl<T: Real> ProtocolRun<T> {
    /// Ω₀ = 2π·0.35 MHz, R = 2π·30 MHz/ms, τ_R = 50 µs, τ₁ = 10 µs, τ₂ = 20 µs, 2 µs Gaussian
    /// probe, αL = 2 over 32 slices, no decay.
    pub fn paper_rappi() -> Self {
        let tau_r = us(50.0);
        Self {
            kind: ProtocolKind::Rappi,
            tau1: us(10.0),
            tau2: us(20.0),
            tau_r,
            probe: PulseSpec::probe_with_area(PulseShape::ProbeGaussian, T::zero(), us(2.0), T::lit(DEFAULT_PROBE_AREA)),
            control: PulseSpec::rap(T::zero(), tau_r, mhz(0.35), mhz_per_ms(30.0), T::zero()),
            medium: MediumSpec::new(T::lit(2.0), 32),
            ensemble: EnsembleSpec::uniform(1001, mhz(2.5)),
            t2: T::infinity(),
            pi_mode: PiMode::Pulse,
            dt: None,
            trace_dt: None,
        }
    }

    /// Hahn echo with a 0.2 µs square π-pulse at `tau`.
    pub fn paper_2ppe(tau: T) -> Self {
        let pi_len = us(0.2);
        Self {
            kind: ProtocolKind::TwoPpe,
            tau1: tau,
            tau2: T::zero(),
            tau_r: T::zero(),
            control: PulseSpec::square(T::zero(), pi_len, T::PI() / pi_len),
            ..Self::paper_rappi()
        }
    }

    /// Predicted echo time measured from the probe center.
    pub fn echo_time(&self) -> Result<T, ProtocolError> {
        match self.kind {
            ProtocolKind::Rappi => Ok(echo_time_check(self.tau1, self.tau2, self.tau_r)?),
            ProtocolKind::TwoPpe => {
                if !(self.tau1 > T::zero()) {
                    return Err(ProtocolError::Timing(format!("tau must be positive, got {}", self.tau1)));
                }
                Ok(T::lit(2.0) * self.tau1)
            }
        }
    }

    /// Sets τ₂ (RAPPI) or τ (2PPE) so the echo falls at `t_echo`.
    pub fn with_echo_time(mut self, t_echo: T) -> Self {
        match self.kind {
            ProtocolKind::Rappi => self.tau2 = t_echo / T::lit(2.0) - self.tau_r,
            ProtocolKind::TwoPpe => self.tau1 = t_echo / T::lit(2.0),
        }
        self
    }

    /// The RAP at its scheduled duration (τ_R).
    pub fn rap(&self) -> PulseSpec<T> {
        let mut r = self.control.clone();
        r.duration = self.tau_r;
        r
    }

    /// Adiabaticity and bandwidth conditions (RAPPI only).
    pub fn conditions(&self) -> Result<Option<ConditionReport>, ProtocolError> {
        match self.kind {
            ProtocolKind::Rappi => Ok(Some(check_conditions(
                &self.rap(),
                &self.probe,
                ConditionThresholds::default(),
            )?)),
            ProtocolKind::TwoPpe => Ok(None),
        }
    }

    /// Widest control span in rad/s.
    pub fn control_span(&self) -> T {
        match self.kind {
            ProtocolKind::Rappi => {
                let r = self.rap();
                let d = r.duration;
                r.tones.iter().map(|t| t.span(d)).fold(T::zero(), T::max)
            }
            ProtocolKind::TwoPpe => T::zero(),
        }
    }

    pub fn ensemble_spec(&self) -> EnsembleSpec<T> {
        self.ensemble.clone().with_t2(self.t2)
    }

    /// Sample spacing actually used.
    pub fn resolved_dt(&self) -> T {
        if let Some(dt) = self.dt {
            return dt;
        }
        let spec = self.ensemble_spec();
        let edge = (spec.center.abs() + spec.window / T::lit(2.0)) / T::two_pi();
        let f = self.probe.f_max().max(self.control.f_max()).max(self.rap().f_max()).max(edge);
        default_dt(self.probe.duration, f)
    }
}

/// Time-ordered events and the windows derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence<T> {
    pub events: Vec<Event<T>>,
    /// Start of the probe support.
    pub t_start: T,
    pub echo_time: T,
    /// `t_E ± 2τ_probe`.
    pub echo_window: (T, T),
    /// Window where a primary echo would appear (RAPPI: mirror of the probe through RAP1, clipped
    /// to the gap between the RAPs; 2PPE: the echo window).
    pub primary_window: (T, T),
    /// End time of each control.
    pub control_ends: Vec<T>,
}

impl<T: Real> Sequence<T> {
    /// End of the last control pulse; emission is evaluated from here.
    pub fn t_ref(&self) -> T {
        self.control_ends.last().copied().unwrap_or(self.t_start)
    }

    pub fn span(&self) -> T {
        self.echo_window.1 - self.t_start
    }
}

/// Builds the event list for `run`.
pub fn build_sequence<T: Real>(run: &ProtocolRun<T>) -> Result<Sequence<T>, ProtocolError> {
    if !run.probe.shape.is_probe() {
        return Err(ProtocolError::Invalid("probe must be a square or Gaussian probe pulse".into()));
    }
    run.probe.validate()?;
    let probe = run.probe.at(T::zero());
    let (p_lo, p_hi) = probe.support();
    let two = T::lit(2.0);
    let half_window = two * probe.duration;
    let t_e = run.echo_time()?;
    let echo_window = (t_e - half_window, t_e + half_window);
    match run.kind {
        ProtocolKind::Rappi => {
            if !run.control.shape.is_rap() {
                return Err(ProtocolError::Invalid("RAPPI control must be a RAP pulse".into()));
            }
            let rap = run.rap();
            rap.validate()?;
            let s1 = run.tau1;
            let s2 = run.tau1 + run.tau_r + run.tau2;
            let rap1 = rap.at(s1 + run.tau_r / two);
            let rap2 = rap.at(s2 + run.tau_r / two);
            if p_hi > s1 {
                return Err(ProtocolError::Timing(format!(
                    "probe ends at {p_hi:e} s, after RAP1 starts at {s1:e} s"
                )));
            }
            let rap2_end = rap2.support().1;
            if echo_window.0 < rap2_end {
                return Err(ProtocolError::Timing(format!(
                    "echo window starts at {:e} s, inside RAP2 ending at {rap2_end:e} s; increase tau2 - tau1",
                    echo_window.0
                )));
            }
            let rap1_end = rap1.support().1;
            let primary = two * run.tau1 + run.tau_r;
            let primary_window = (
                (primary - half_window).max(rap1_end),
                (primary + half_window).min(s2),
            );
            Ok(Sequence {
                events: vec![Event::Probe(probe), Event::Control(rap1), Event::Control(rap2)],
                t_start: p_lo,
                echo_time: t_e,
                echo_window,
                primary_window,
                control_ends: vec![rap1_end, rap2_end],
            })
        }
        ProtocolKind::TwoPpe => {
            let tau = run.tau1;
            let (event, end) = match run.pi_mode {
                PiMode::Pulse => {
                    let pi = run.control.at(tau);
                    pi.validate()?;
                    let (lo, hi) = pi.support();
                    if p_hi > lo {
                        return Err(ProtocolError::Timing(format!(
                            "probe ends at {p_hi:e} s, after the pi-pulse starts at {lo:e} s"
                        )));
                    }
                    (Event::Control(pi), hi)
                }
                PiMode::Hard => {
                    if p_hi > tau {
                        return Err(ProtocolError::Timing(format!(
                            "probe ends at {p_hi:e} s, after the rotation at {tau:e} s"
                        )));
                    }
                    (
                        Event::Rotation {
                            time: tau,
                            angle: T::PI(),
                            phase: T::zero(),
                        },
                        tau,
                    )
                }
            };
            if echo_window.0 < end {
                return Err(ProtocolError::Timing(format!(
                    "echo window starts at {:e} s, before the pi-pulse ends at {end:e} s",
                    echo_window.0
                )));
            }
            Ok(Sequence {
                events: vec![Event::Probe(probe), event],
                t_start: p_lo,
                echo_time: t_e,
                echo_window,
                primary_window: echo_window,
                control_ends: vec![end],
            })
        }
    }
}

/// Ensemble run of a protocol, reusable for any optical depth.
#[derive(Debug, Clone)]
pub struct PreparedRun<T> {
    pub run: ProtocolRun<T>,
    pub grid: EnsembleGrid<T>,
    pub sequence: Sequence<T>,
    pub result: SequenceResult<T>,
    pub probe_env: SampledEnvelope<T>,
    pub dt: T,
}

/// Checks the run and builds the grid it needs.
pub fn grid_for<T: Real>(run: &ProtocolRun<T>) -> Result<EnsembleGrid<T>, ProtocolError> {
    let seq = build_sequence(run)?;
    let spec = run.ensemble_spec();
    // the spectral width depends only on the shape
    let mut unit = run.probe.clone();
    for t in &mut unit.tones {
        t.peak_rabi = T::one();
    }
    let fwhm = probe_fwhm_hz(&unit)? * T::two_pi();
    spec.check_window(run.control_span(), fwhm)?;
    Ok(build_grid(&spec, seq.span())?)
}

/// Runs the ensemble part of `run`.
pub fn prepare<T: Real>(run: &ProtocolRun<T>) -> Result<PreparedRun<T>, ProtocolError> {
    let grid = grid_for(run)?;
    prepare_on(run, grid)
}

/// As [`prepare`], on a caller-supplied grid (shared across a sweep).
pub fn prepare_on<T: Real>(run: &ProtocolRun<T>, grid: EnsembleGrid<T>) -> Result<PreparedRun<T>, ProtocolError> {
    let sequence = build_sequence(run)?;
    grid.check_span(sequence.span())?;
    let dt = run.resolved_dt();
    let mut opts = SequenceOptions::new(dt)
        .with_span(sequence.t_start, sequence.echo_window.1)
        .with_snapshots(sequence.control_ends.clone());
    opts.integrator = Integrator::default();
    if let Some(tdt) = run.trace_dt {
        opts = opts.with_trace(tdt);
    }
    let result = run_sequence(&grid.atoms, &sequence.events, &opts)?;
    let probe = run.probe.at(T::zero());
    let probe_env = synthesize(&probe, TimeGrid::for_pulse(&probe, dt))?;
    Ok(PreparedRun {
        run: run.clone(),
        grid,
        sequence,
        result,
        probe_env,
        dt,
    })
}

/// Summary figures of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult<T> {
    pub kind: ProtocolKind,
    pub trace: Option<EnsembleTrace<T>>,
    pub propagation: PropagationResult<T>,
    pub predicted_echo_time: T,
    /// Peak of |E_out| in the echo window.
    pub echo_peak_time: T,
    pub efficiency: Option<T>,
    /// Primary-window over echo-window emitted energy of the ensemble (thin-medium) field.
    pub suppression_ratio: Option<T>,
    pub snr: Option<T>,
    pub primary_energy: T,
    pub secondary_energy: T,
    /// Weighted mean inversion when the echo is emitted.
    pub mean_inversion: T,
}

impl<T: Real> PreparedRun<T> {
    fn snapshot(&self) -> &Snapshot<T> {
        self.result.snapshots.last().expect("one snapshot per control")
    }

    fn out_dt(&self) -> T {
        self.run.probe.duration / T::lit(50.0)
    }

    /// Propagates the stored excitation through `medium`.
    pub fn propagate(&self, medium: &MediumSpec<T>) -> Result<PropagationResult<T>, ProtocolError> {
        let snap = self.snapshot();
        let ground = vec![-T::one(); self.grid.len()];
        let absorption = absorb_probe(medium, &self.grid, &ground, &self.probe_env)?;
        let pert = snap.perturbation_coherence();
        let bg = snap.background_coherence();
        let inversion: Vec<T> = snap.background.iter().map(|s| s.w).collect();
        let state = EchoState {
            t_ref: snap.time,
            perturbation: &pert,
            background: self.grid.includes_spectators.then_some(&bg[..]),
            inversion: &inversion,
        };
        Ok(emit_echo(
            medium,
            &self.grid,
            &absorption,
            state,
            self.sequence.echo_window,
            self.out_dt(),
        )?)
    }

    /// Thin-medium field Σ g_j Δc_j(t) of the probe-induced coherence in `window`, starting from
    /// snapshot `k`.
    pub fn proxy_field(&self, k: usize, window: (T, T)) -> (Vec<T>, Vec<Complex<T>>) {
        let snap = &self.result.snapshots[k];
        let times = sample_times(window.0, window.1, self.out_dt());
        let f = free_field(&self.grid.atoms, &snap.perturbation_coherence(), snap.time, &times);
        (times, f)
    }

    pub fn finish(&self) -> Result<ExperimentResult<T>, ProtocolError> {
        let propagation = self.propagate(&self.run.medium)?;
        let last = self.result.snapshots.len() - 1;
        let (st, sf) = self.proxy_field(last, self.sequence.echo_window);
        let secondary_energy = energy_of(&st, &sf);
        let primary_energy = match self.run.kind {
            ProtocolKind::Rappi => {
                let (pt, pf) = self.proxy_field(0, self.sequence.primary_window);
                energy_of(&pt, &pf)
            }
            ProtocolKind::TwoPpe => secondary_energy,
        };
        let echo_peak_time = if propagation.echo_energy > T::zero() {
            propagation.peak().0
        } else {
            peak_of(&st, &sf).0
        };
        Ok(ExperimentResult {
            kind: self.run.kind,
            trace: self.result.trace.clone(),
            predicted_echo_time: self.sequence.echo_time,
            echo_peak_time,
            efficiency: propagation.efficiency,
            suppression_ratio: (secondary_energy > T::zero()).then(|| primary_energy / secondary_energy),
            snr: propagation.snr,
            primary_energy,
            secondary_energy,
            mean_inversion: propagation.mean_inversion,
            propagation,
        })
    }
}

/// Absorption, sequence and emission for one run.
pub fn run_experiment<T: Real>(run: &ProtocolRun<T>) -> Result<ExperimentResult<T>, ProtocolError> {
    prepare(run)?.finish()
}

/// η at each optical depth, from a single ensemble run.
pub fn efficiency_vs_depth<T: Real>(run: &ProtocolRun<T>, alpha_l: &[T]) -> Result<Vec<(T, T)>, ProtocolError> {
    let prep = prepare(run)?;
    alpha_l
        .iter()
        .map(|&a| {
            let mut m = run.medium;
            m.alpha_l = a;
            let r = prep.propagate(&m)?;
            Ok((a, r.efficiency.unwrap_or(T::zero())))
        })
        .collect()
}

/// Efficiency against storage time with its `η_R·e^{−2t/T₂M}` fit.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayCurve<T> {
    pub points: Vec<(T, T)>,
    pub fit: DecayModel<T>,
}

/// Runs `template` at each echo time (τ₂ for RAPPI, τ for 2PPE adjusted) on one shared grid
/// sized for the longest run, and fits the decay.
pub fn efficiency_vs_storage<T: Real>(template: &ProtocolRun<T>, t_echo: &[T]) -> Result<DecayCurve<T>, ProtocolError> {
    if t_echo.len() < 3 {
        return Err(ProtocolError::TooFewPoints(t_echo.len()));
    }
    let preps = prepare_storage(template, t_echo)?;
    let points = preps
        .iter()
        .map(|(t, p)| {
            let r = p.propagate(&template.medium)?;
            Ok((*t, r.efficiency.unwrap_or(T::zero())))
        })
        .collect::<Result<Vec<_>, ProtocolError>>()?;
    let fit = fit_decay(&points, DecayForm::Memory)?;
    Ok(DecayCurve { points, fit })
}

/// Ensemble runs for each echo time on a shared grid.
pub fn prepare_storage<T: Real>(
    template: &ProtocolRun<T>,
    t_echo: &[T],
) -> Result<Vec<(T, PreparedRun<T>)>, ProtocolError> {
    let runs: Vec<ProtocolRun<T>> = t_echo.iter().map(|&t| template.clone().with_echo_time(t)).collect();
    let longest = runs
        .iter()
        .map(|r| build_sequence(r).map(|s| s.span()))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .enumerate()
        .fold((0, T::zero()), |acc, (i, s)| if s > acc.1 { (i, s) } else { acc })
        .0;
    let grid = grid_for(&runs[longest])?;
    t_echo
        .iter()
        .zip(&runs)
        .map(|(&t, r)| Ok((t, prepare_on(r, grid.clone())?)))
        .collect()
}
