//! Inhomogeneously broadened ensembles and pulse-sequence runs.
//!
//! Every atom is tracked as two Bloch vectors: the background `b(t)`, the response to the control
//! pulses alone, and the perturbation `p(t) = s(t) − b(t)` caused by the probes. The Bloch
//! equations are affine in the state, so outside the probes `p` obeys the homogeneous equations
//! under the same controls and the split is exact. The background radiates the free-induction
//! decay; the perturbation radiates the echoes.

use std::io::{self, Write};

use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bloch::{
    check_step, free_evolve, hard_rotation, integrate_samples_with, AtomParams, BlochError, BlochVector,
    Integrator, Mode,
};
use crate::pulse::{synthesize, PulseError, PulseSpec, SampledEnvelope, TimeGrid};
use crate::real::{cis, pairwise_sum, Real};

/// Atoms per reduction block. Fixed, so sums do not depend on the worker count.
const BLOCK: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnsembleError {
    #[error("invalid ensemble: {0}")]
    InvalidSpec(String),
    #[error("grid revival time {revival_s:e} s is not longer than twice the simulated span {span_s:e} s; use more atoms or a narrower window")]
    RevivalTooShort { revival_s: f64, span_s: f64 },
    #[error("event {index} starts at {start_s:e} s, before the previous event ends at {previous_end_s:e} s")]
    Overlap {
        index: usize,
        start_s: f64,
        previous_end_s: f64,
    },
    #[error("window [{lo_s:e}, {hi_s:e}] s lies outside the trace [{t0_s:e}, {t1_s:e}] s")]
    WindowOutsideTrace { lo_s: f64, hi_s: f64, t0_s: f64, t1_s: f64 },
    #[error("snapshot at {0:e} s falls inside a pulse")]
    SnapshotInsidePulse(f64),
    #[error("timing: {0}")]
    Timing(String),
    #[error(transparent)]
    Pulse(#[from] PulseError),
    #[error(transparent)]
    Bloch(#[from] BlochError),
}

/// Inhomogeneous line shape g(δ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Profile {
    Uniform,
    /// Full width at half maximum in rad/s.
    Gaussian { fwhm: f64 },
    Lorentzian { fwhm: f64 },
}

impl Profile {
    pub fn density<T: Real>(&self, d: T) -> T {
        match *self {
            Profile::Uniform => T::one(),
            Profile::Gaussian { fwhm } => {
                let x = d / T::lit(fwhm);
                (-T::lit(4.0 * std::f64::consts::LN_2) * x * x).exp()
            }
            Profile::Lorentzian { fwhm } => {
                let x = T::lit(2.0) * d / T::lit(fwhm);
                T::one() / (T::one() + x * x)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSpec<T> {
    /// Number of detuning bins (odd, ≥ 3).
    pub n: usize,
    /// Full simulated detuning span, rad/s.
    pub window: T,
    /// Center of the window, rad/s.
    pub center: T,
    pub profile: Profile,
    /// Atoms outside the probe band but inside the control span are present (needed for FID).
    pub includes_spectators: bool,
    pub t2: T,
    pub t1: T,
}

impl<T: Real> EnsembleSpec<T> {
    pub fn uniform(n: usize, window: T) -> Self {
        Self {
            n,
            window,
            center: T::zero(),
            profile: Profile::Uniform,
            includes_spectators: true,
            t2: T::infinity(),
            t1: T::infinity(),
        }
    }

    pub fn with_t2(mut self, t2: T) -> Self {
        self.t2 = t2;
        self
    }

    /// Smallest odd bin count (at least 101) whose revival time is 2.2× `span`.
    pub fn auto_bins(window: T, span: T) -> usize {
        let n = (window / T::two_pi() * T::lit(2.2) * span).ceil().to_usize().unwrap_or(0);
        (n | 1).max(101)
    }

    /// Uniform grid with [`auto_bins`](Self::auto_bins) bins.
    pub fn uniform_for_span(window: T, span: T) -> Self {
        Self::uniform(Self::auto_bins(window, span), window)
    }

    pub fn with_center(mut self, center: T) -> Self {
        self.center = center;
        self
    }

    pub fn spacing(&self) -> T {
        self.window / T::from_usize_lossy(self.n.saturating_sub(1).max(1))
    }

    /// Artificial revival period 2π/Δδ of the discrete grid.
    pub fn revival_time(&self) -> T {
        T::two_pi() / self.spacing()
    }

    pub fn validate(&self) -> Result<(), EnsembleError> {
        if self.n < 3 || self.n % 2 == 0 {
            return Err(EnsembleError::InvalidSpec(format!(
                "bin count must be odd and at least 3, got {}",
                self.n
            )));
        }
        if !(self.window > T::zero()) || !self.window.is_finite() {
            return Err(EnsembleError::InvalidSpec(format!(
                "window must be positive, got {}",
                self.window
            )));
        }
        match self.profile {
            Profile::Gaussian { fwhm } | Profile::Lorentzian { fwhm } if !(fwhm > 0.0) => {
                return Err(EnsembleError::InvalidSpec(format!("profile width must be positive, got {fwhm}")))
            }
            _ => {}
        }
        Ok(())
    }

    /// Checks the window covers the control span plus four probe widths (all in rad/s).
    pub fn check_window(&self, control_span: T, probe_fwhm: T) -> Result<(), EnsembleError> {
        let need = control_span + T::lit(4.0) * probe_fwhm;
        if self.window < need * (T::one() - T::lit(1e-9)) {
            return Err(EnsembleError::InvalidSpec(format!(
                "window {:.4e} rad/s narrower than control span + 4 probe widths = {:.4e} rad/s",
                self.window.as_f64(),
                need.as_f64()
            )));
        }
        Ok(())
    }
}

/// Quadrature grid over the inhomogeneous line.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleGrid<T> {
    pub atoms: Vec<AtomParams<T>>,
    pub spacing: T,
    pub revival_time: T,
    pub peak_weight: T,
    pub includes_spectators: bool,
}

impl<T: Real> EnsembleGrid<T> {
    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn max_abs_detuning(&self) -> T {
        self.atoms.iter().map(|a| a.detuning.abs()).fold(T::zero(), T::max)
    }

    /// Refuses a run whose span reaches half the grid revival time.
    pub fn check_span(&self, span: T) -> Result<(), EnsembleError> {
        if self.revival_time <= T::lit(2.0) * span {
            return Err(EnsembleError::RevivalTooShort {
                revival_s: self.revival_time.as_f64(),
                span_s: span.as_f64(),
            });
        }
        Ok(())
    }
}

/// Uniform detuning grid with weights `g(δ_j)` normalized to sum 1. `span` is the simulated time
/// span the grid must support without revivals.
pub fn build_grid<T: Real>(spec: &EnsembleSpec<T>, span: T) -> Result<EnsembleGrid<T>, EnsembleError> {
    spec.validate()?;
    let dd = spec.spacing();
    let half = (spec.n / 2) as i64;
    let raw: Vec<(T, T)> = (-half..=half)
        .map(|k| {
            let off = dd * T::lit(k as f64);
            (spec.center + off, spec.profile.density(off))
        })
        .collect();
    let total: T = pairwise_sum(&raw.iter().map(|r| r.1).collect::<Vec<_>>(), T::zero());
    let atoms: Vec<AtomParams<T>> = raw
        .iter()
        .map(|&(d, g)| AtomParams {
            detuning: d,
            t2: spec.t2,
            t1: spec.t1,
            weight: g / total,
        })
        .collect();
    for a in &atoms {
        a.validate()?;
    }
    let grid = EnsembleGrid {
        peak_weight: atoms.iter().map(|a| a.weight).fold(T::zero(), T::max),
        atoms,
        spacing: dd,
        revival_time: T::two_pi() / dd,
        includes_spectators: spec.includes_spectators,
    };
    grid.check_span(span)?;
    Ok(grid)
}

/// One step of a pulse sequence. Pulses are placed at their own center times; `Wait` only
/// extends the sequence end.
#[derive(Debug, Clone, PartialEq)]
pub enum Event<T> {
    /// Weak signal pulse; its effect is accumulated in the perturbation.
    Probe(PulseSpec<T>),
    /// Control pulse applied to every atom (RAP, π-pulse).
    Control(PulseSpec<T>),
    /// Instantaneous transverse rotation at `time`.
    Rotation { time: T, angle: T, phase: T },
    /// Control given directly as samples (no tone validation).
    Envelope(SampledEnvelope<T>),
    Wait(T),
}

impl<T: Real> Event<T> {
    fn interval(&self, cursor: T) -> (T, T) {
        match self {
            Event::Probe(p) | Event::Control(p) => p.support(),
            Event::Rotation { time, .. } => (*time, *time),
            Event::Envelope(e) => (e.t_start, e.t_end()),
            Event::Wait(d) => (cursor, cursor + *d),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceOptions<T> {
    /// Envelope sample spacing (upper bound).
    pub dt: T,
    /// Trace sample spacing; `None` records no trace.
    pub trace_dt: Option<T>,
    pub t_start: T,
    /// Sequence end; defaults to the end of the last event.
    pub t_end: Option<T>,
    /// Times at which all per-atom states are captured. Must not fall inside a pulse.
    pub snapshots: Vec<T>,
    pub integrator: Integrator,
}

impl<T: Real> SequenceOptions<T> {
    pub fn new(dt: T) -> Self {
        Self {
            dt,
            trace_dt: None,
            t_start: T::zero(),
            t_end: None,
            snapshots: Vec::new(),
            integrator: Integrator::default(),
        }
    }

    pub fn with_trace(mut self, trace_dt: T) -> Self {
        self.trace_dt = Some(trace_dt);
        self
    }

    pub fn with_span(mut self, t_start: T, t_end: T) -> Self {
        self.t_start = t_start;
        self.t_end = Some(t_end);
        self
    }

    pub fn with_snapshots(mut self, times: Vec<T>) -> Self {
        self.snapshots = times;
        self
    }
}

/// Ensemble-averaged observables on the sequence grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleTrace<T> {
    pub t: Vec<T>,
    /// Σ g_j v_j of the full state.
    pub sigma_y_bar: Vec<T>,
    /// Σ g_j w_j of the full state.
    pub sigma_z_bar: Vec<T>,
    /// Emitted-field proxy of the probe-induced part, Σ g_j (u_j + i v_j).
    pub proxy: Vec<Complex<T>>,
    /// Same for the control-only background (free-induction decay).
    pub background_proxy: Vec<Complex<T>>,
}

impl<T: Real> EnsembleTrace<T> {
    fn indices_in(&self, lo: T, hi: T) -> Result<std::ops::Range<usize>, EnsembleError> {
        let (t0, t1) = match (self.t.first(), self.t.last()) {
            (Some(&a), Some(&b)) => (a, b),
            _ => (T::zero(), T::zero()),
        };
        let slack = (t1 - t0).abs() * T::lit(1e-9);
        if self.t.is_empty() || lo < t0 - slack || hi > t1 + slack || hi < lo {
            return Err(EnsembleError::WindowOutsideTrace {
                lo_s: lo.as_f64(),
                hi_s: hi.as_f64(),
                t0_s: t0.as_f64(),
                t1_s: t1.as_f64(),
            });
        }
        let a = self.t.partition_point(|&t| t < lo);
        let b = self.t.partition_point(|&t| t <= hi);
        Ok(a..b)
    }

    /// Time and magnitude of the largest |proxy| inside `[lo, hi]`.
    pub fn echo_peak(&self, lo: T, hi: T) -> Result<(T, T), EnsembleError> {
        let r = self.indices_in(lo, hi)?;
        let mut best = (lo, T::zero());
        for i in r {
            let m = self.proxy[i].norm();
            if m > best.1 {
                best = (self.t[i], m);
            }
        }
        Ok(best)
    }

    /// ∫|proxy|² dt over `[lo, hi]` (rectangle rule on the trace samples).
    pub fn proxy_energy(&self, lo: T, hi: T) -> Result<T, EnsembleError> {
        let r = self.indices_in(lo, hi)?;
        let mut acc = T::zero();
        for i in r {
            let dt = if i + 1 < self.t.len() {
                self.t[i + 1] - self.t[i]
            } else if i > 0 {
                self.t[i] - self.t[i - 1]
            } else {
                T::zero()
            };
            acc = acc + self.proxy[i].norm_sqr() * dt;
        }
        Ok(acc)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t_s,sigma_y_bar,sigma_z_bar,re_proxy,im_proxy")?;
        for i in 0..self.t.len() {
            writeln!(
                w,
                "{},{},{},{},{}",
                self.t[i], self.sigma_y_bar[i], self.sigma_z_bar[i], self.proxy[i].re, self.proxy[i].im
            )?;
        }
        Ok(())
    }
}

/// Per-atom states at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot<T> {
    pub time: T,
    pub background: Vec<BlochVector<T>>,
    pub perturbation: Vec<BlochVector<T>>,
}

impl<T: Real> Snapshot<T> {
    pub fn perturbation_coherence(&self) -> Vec<Complex<T>> {
        self.perturbation.iter().map(|s| s.coherence()).collect()
    }

    pub fn background_coherence(&self) -> Vec<Complex<T>> {
        self.background.iter().map(|s| s.coherence()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceResult<T> {
    pub trace: Option<EnsembleTrace<T>>,
    /// States at the end of the sequence.
    pub last: Snapshot<T>,
    pub snapshots: Vec<Snapshot<T>>,
}

enum Step<T> {
    Probe(SampledEnvelope<T>),
    Control(SampledEnvelope<T>),
    Rotation { time: T, angle: T, phase: T },
}

impl<T: Real> Step<T> {
    fn span(&self) -> (T, T) {
        match self {
            Step::Probe(e) | Step::Control(e) => (e.t_start, e.t_end()),
            Step::Rotation { time, .. } => (*time, *time),
        }
    }
}

/// Trace sample request inside a pulse: record after the integrator reaches sample `k`.
struct Plan<T> {
    steps: Vec<Step<T>>,
    /// For each step, (trace index, sample index) pairs in increasing order.
    marks: Vec<Vec<(usize, usize)>>,
    /// Trace times outside pulses: (trace index, time), grouped by the gap before step i (the
    /// last group follows the final step).
    free_marks: Vec<Vec<(usize, T)>>,
    snaps: Vec<Vec<(usize, T)>>,
    trace_t: Vec<T>,
    t_end: T,
}

fn plan<T: Real>(events: &[Event<T>], opts: &SequenceOptions<T>) -> Result<Plan<T>, EnsembleError> {
    let mut steps = Vec::new();
    let mut cursor = opts.t_start;
    for (i, ev) in events.iter().enumerate() {
        let (lo, hi) = ev.interval(cursor);
        let tol = opts.dt * T::lit(1e-6);
        if lo < cursor - tol {
            return Err(EnsembleError::Overlap {
                index: i,
                start_s: lo.as_f64(),
                previous_end_s: cursor.as_f64(),
            });
        }
        match ev {
            Event::Probe(p) | Event::Control(p) => {
                let env = synthesize(p, TimeGrid::for_pulse(p, opts.dt))?;
                steps.push(if matches!(ev, Event::Probe(_)) {
                    Step::Probe(env)
                } else {
                    Step::Control(env)
                });
            }
            Event::Envelope(e) => {
                if e.is_empty() {
                    return Err(EnsembleError::Pulse(PulseError::Empty));
                }
                steps.push(Step::Control(e.clone()));
            }
            Event::Rotation { time, angle, phase } => steps.push(Step::Rotation {
                time: *time,
                angle: *angle,
                phase: *phase,
            }),
            Event::Wait(_) => {}
        }
        cursor = hi;
    }
    let t_end = opts.t_end.unwrap_or(cursor).max(cursor);
    let trace_t: Vec<T> = match opts.trace_dt {
        Some(tdt) if tdt > T::zero() => {
            let n = ((t_end - opts.t_start) / tdt).floor().to_usize().unwrap_or(0) + 1;
            (0..n).map(|k| opts.t_start + tdt * T::from_usize_lossy(k)).collect()
        }
        _ => Vec::new(),
    };
    let mut marks = vec![Vec::new(); steps.len()];
    let mut free_marks = vec![Vec::new(); steps.len() + 1];
    let mut trace_out = trace_t.clone();
    for (q, &t) in trace_t.iter().enumerate() {
        let mut placed = false;
        for (i, st) in steps.iter().enumerate() {
            let (a, b) = st.span();
            if let Step::Probe(env) | Step::Control(env) = st {
                if t >= a && t <= b {
                    // nearest integrator step (even sample index, or the last sample)
                    let n = env.len() - 1;
                    let raw = ((t - a) / env.dt).round().to_usize().unwrap_or(0).min(n);
                    let k = if raw == n { n } else { (raw / 2) * 2 };
                    marks[i].push((q, k));
                    trace_out[q] = env.time(k);
                    placed = true;
                    break;
                }
            }
            if t < a {
                free_marks[i].push((q, t));
                placed = true;
                break;
            }
        }
        if !placed {
            free_marks[steps.len()].push((q, t));
        }
    }
    let mut snaps = vec![Vec::new(); steps.len() + 1];
    for (si, &t) in opts.snapshots.iter().enumerate() {
        let mut placed = false;
        let mut t = t;
        for (i, st) in steps.iter().enumerate() {
            let (a, b) = st.span();
            // sample grids can overshoot a nominal edge by a few ulps
            let slack = (b - a) * T::lit(1e-9);
            if t > a + slack && t < b && t >= b - slack {
                t = b;
            }
            if t > a + slack && t < b {
                return Err(EnsembleError::SnapshotInsidePulse(t.as_f64()));
            }
            if t <= a {
                snaps[i].push((si, t));
                placed = true;
                break;
            }
        }
        if !placed {
            snaps[steps.len()].push((si, t));
        }
    }
    Ok(Plan {
        steps,
        marks,
        free_marks,
        snaps,
        trace_t: trace_out,
        t_end,
    })
}

const NQ: usize = 6;

struct AtomRun<T> {
    bg: BlochVector<T>,
    p: BlochVector<T>,
    t: T,
}

impl<T: Real> AtomRun<T> {
    fn advance(&mut self, atom: &AtomParams<T>, to: T) {
        let d = to - self.t;
        if d > T::zero() {
            self.bg = free_evolve(self.bg, atom, d, Mode::Full);
            self.p = free_evolve(self.p, atom, d, Mode::Homogeneous);
            self.t = to;
        }
    }
}

#[inline]
fn accumulate<T: Real>(acc: &mut [T], q: usize, g: T, bg: &BlochVector<T>, p: &BlochVector<T>) {
    let a = &mut acc[q * NQ..q * NQ + NQ];
    a[0] = a[0] + g * (bg.v + p.v);
    a[1] = a[1] + g * (bg.w + p.w);
    a[2] = a[2] + g * p.u;
    a[3] = a[3] + g * p.v;
    a[4] = a[4] + g * bg.u;
    a[5] = a[5] + g * bg.v;
}

fn run_atom<T: Real>(
    atom: &AtomParams<T>,
    plan: &Plan<T>,
    opts: &SequenceOptions<T>,
    acc: &mut [T],
    snap_out: &mut [(BlochVector<T>, BlochVector<T>)],
) -> (BlochVector<T>, BlochVector<T>) {
    let g = atom.weight;
    let mut st = AtomRun {
        bg: BlochVector::ground(),
        p: BlochVector::zero(),
        t: opts.t_start,
    };
    let flush = |st: &mut AtomRun<T>, i: usize, acc: &mut [T], snap_out: &mut [(BlochVector<T>, BlochVector<T>)]| {
        // free-evolution trace points and snapshots before step i, in time order
        let fm = &plan.free_marks[i];
        let sn = &plan.snaps[i];
        let (mut a, mut b) = (0, 0);
        while a < fm.len() || b < sn.len() {
            let take_mark = b >= sn.len() || (a < fm.len() && fm[a].1 <= sn[b].1);
            if take_mark {
                let (q, t) = fm[a];
                st.advance(atom, t);
                accumulate(acc, q, g, &st.bg, &st.p);
                a += 1;
            } else {
                let (s, t) = sn[b];
                st.advance(atom, t);
                snap_out[s] = (st.bg, st.p);
                b += 1;
            }
        }
    };
    for (i, step) in plan.steps.iter().enumerate() {
        flush(&mut st, i, acc, snap_out);
        let (a, b) = step.span();
        st.advance(atom, a);
        let marks = &plan.marks[i];
        match step {
            Step::Rotation { angle, phase, .. } => {
                st.bg = hard_rotation(st.bg, *angle, *phase);
                st.p = hard_rotation(st.p, *angle, *phase);
            }
            Step::Control(env) => {
                let bg0 = st.bg;
                let p0 = st.p;
                let mut m = 0;
                let mut bg_at = Vec::with_capacity(marks.len());
                st.bg = integrate_samples_with(opts.integrator, bg0, atom, Mode::Full, &env.samples, env.dt, |k, s| {
                    while m < marks.len() && marks[m].1 == k {
                        bg_at.push(*s);
                        m += 1;
                    }
                });
                let mut m = 0;
                st.p = integrate_samples_with(
                    opts.integrator,
                    p0,
                    atom,
                    Mode::Homogeneous,
                    &env.samples,
                    env.dt,
                    |k, s| {
                        while m < marks.len() && marks[m].1 == k {
                            accumulate(acc, marks[m].0, g, &bg_at[m], s);
                            m += 1;
                        }
                    },
                );
            }
            Step::Probe(env) => {
                let bg0 = st.bg;
                let full0 = bg0.add(&st.p);
                let mut m = 0;
                let full = integrate_samples_with(opts.integrator, full0, atom, Mode::Full, &env.samples, env.dt, |k, s| {
                    while m < marks.len() && marks[m].1 == k {
                        let bg = free_evolve(bg0, atom, env.time(k) - a, Mode::Full);
                        accumulate(acc, marks[m].0, g, &bg, &s.sub(&bg));
                        m += 1;
                    }
                });
                st.bg = free_evolve(bg0, atom, b - a, Mode::Full);
                st.p = full.sub(&st.bg);
            }
        }
        st.t = b;
    }
    flush(&mut st, plan.steps.len(), acc, snap_out);
    st.advance(atom, plan.t_end);
    (st.bg, st.p)
}

/// Runs every atom through the events. Atoms are processed in fixed blocks and block partial
/// sums are combined pairwise in block order, so the result does not depend on the thread count.
pub fn run_sequence<T: Real>(
    atoms: &[AtomParams<T>],
    events: &[Event<T>],
    opts: &SequenceOptions<T>,
) -> Result<SequenceResult<T>, EnsembleError> {
    if atoms.is_empty() {
        return Err(EnsembleError::InvalidSpec("no atoms".into()));
    }
    let max_d = atoms.iter().map(|a| a.detuning.abs()).fold(T::zero(), T::max);
    check_step(max_d, opts.dt)?;
    for a in atoms {
        a.validate()?;
    }
    let plan = plan(events, opts)?;
    for st in &plan.steps {
        if let Step::Probe(e) | Step::Control(e) = st {
            check_step(max_d, e.dt)?;
        }
    }
    let nq = plan.trace_t.len();
    let ns = opts.snapshots.len();

    type Block<T> = (Vec<T>, Vec<(BlochVector<T>, BlochVector<T>)>, Vec<Vec<(BlochVector<T>, BlochVector<T>)>>);
    let blocks: Vec<Block<T>> = atoms
        .par_chunks(BLOCK)
        .map(|chunk| {
            let mut acc = vec![T::zero(); nq * NQ];
            let mut finals = Vec::with_capacity(chunk.len());
            let mut snaps = Vec::with_capacity(chunk.len());
            for atom in chunk {
                let mut so = vec![(BlochVector::zero(), BlochVector::zero()); ns];
                finals.push(run_atom(atom, &plan, opts, &mut acc, &mut so));
                snaps.push(so);
            }
            (acc, finals, snaps)
        })
        .collect();

    let trace = if nq > 0 {
        let mut sums = vec![T::zero(); nq * NQ];
        let mut col = vec![T::zero(); blocks.len()];
        for (j, s) in sums.iter_mut().enumerate() {
            for (c, b) in col.iter_mut().zip(&blocks) {
                *c = b.0[j];
            }
            *s = pairwise_sum(&col, T::zero());
        }
        let get = |q: usize, k: usize| sums[q * NQ + k];
        Some(EnsembleTrace {
            t: plan.trace_t.clone(),
            sigma_y_bar: (0..nq).map(|q| get(q, 0)).collect(),
            sigma_z_bar: (0..nq).map(|q| get(q, 1)).collect(),
            proxy: (0..nq).map(|q| Complex::new(get(q, 2), get(q, 3))).collect(),
            background_proxy: (0..nq).map(|q| Complex::new(get(q, 4), get(q, 5))).collect(),
        })
    } else {
        None
    };

    let mut last = Snapshot {
        time: plan.t_end,
        background: Vec::with_capacity(atoms.len()),
        perturbation: Vec::with_capacity(atoms.len()),
    };
    let mut snapshots: Vec<Snapshot<T>> = opts
        .snapshots
        .iter()
        .map(|&t| Snapshot {
            time: t,
            background: Vec::with_capacity(atoms.len()),
            perturbation: Vec::with_capacity(atoms.len()),
        })
        .collect();
    for (_, finals, snaps) in &blocks {
        for (f, s) in finals.iter().zip(snaps) {
            last.background.push(f.0);
            last.perturbation.push(f.1);
            for (k, v) in s.iter().enumerate() {
                snapshots[k].background.push(v.0);
                snapshots[k].perturbation.push(v.1);
            }
        }
    }
    Ok(SequenceResult { trace, last, snapshots })
}

/// Emitted-field proxy Σ g_j c_j e^{(iδ_j − 1/T2)(t − t_ref)} of coherences captured at `t_ref`
/// and left to evolve freely, evaluated at each of `times`.
pub fn free_field<T: Real>(atoms: &[AtomParams<T>], coherence: &[Complex<T>], t_ref: T, times: &[T]) -> Vec<Complex<T>> {
    times
        .par_iter()
        .map(|&t| {
            let dt = t - t_ref;
            let terms: Vec<Complex<T>> = atoms
                .iter()
                .zip(coherence)
                .map(|(a, c)| c * cis(a.detuning * dt) * (a.weight * (-a.gamma2() * dt).exp()))
                .collect();
            pairwise_sum(&terms, Complex::new(T::zero(), T::zero()))
        })
        .collect()
}

/// Uniform sample times covering `[lo, hi]` with spacing at most `dt`.
pub fn sample_times<T: Real>(lo: T, hi: T, dt: T) -> Vec<T> {
    let n = ((hi - lo) / dt).ceil().to_usize().unwrap_or(0).max(1);
    let step = (hi - lo) / T::from_usize_lossy(n);
    (0..=n).map(|k| lo + step * T::from_usize_lossy(k)).collect()
}

/// Argmax of |field| on `times`.
pub fn peak_of<T: Real>(times: &[T], field: &[Complex<T>]) -> (T, T) {
    let mut best = (times.first().copied().unwrap_or(T::zero()), T::zero());
    for (t, f) in times.iter().zip(field) {
        let m = f.norm();
        if m > best.1 {
            best = (*t, m);
        }
    }
    best
}

/// Trapezoidal ∫|f|² over uniformly spaced samples.
pub fn energy_of<T: Real>(times: &[T], field: &[Complex<T>]) -> T {
    if times.len() < 2 {
        return T::zero();
    }
    let dt = (times[times.len() - 1] - times[0]) / T::from_usize_lossy(times.len() - 1);
    let p: Vec<T> = field.iter().map(|f| f.norm_sqr()).collect();
    let inner = pairwise_sum(&p[1..p.len() - 1], T::zero());
    (inner + (p[0] + p[p.len() - 1]) * T::lit(0.5)) * dt
}

/// Predicted secondary-echo time measured from the probe center: `2(τ₂ + τ_R)`, with τ₁ the
/// probe-to-RAP1-start delay and τ₂ the RAP1-end-to-RAP2-start gap.
pub fn echo_time_check<T: Real>(tau1: T, tau2: T, tau_r: T) -> Result<T, EnsembleError> {
    if !(tau1 > T::zero()) {
        return Err(EnsembleError::Timing(format!("tau1 must be positive, got {tau1}")));
    }
    if !(tau_r > T::zero()) {
        return Err(EnsembleError::Timing(format!("tau_R must be positive, got {tau_r}")));
    }
    if !(tau2 > tau1) {
        return Err(EnsembleError::Timing(format!(
            "tau2 = {tau2} s must exceed tau1 = {tau1} s or the echo would precede the end of RAP2"
        )));
    }
    Ok(T::lit(2.0) * (tau2 + tau_r))
}

/// Weighted excited fraction Σ g_j (1 + w_j)/2 over atoms selected by `keep`, divided by their
/// total weight.
pub fn excited_fraction<T: Real>(
    atoms: &[AtomParams<T>],
    states: &[BlochVector<T>],
    keep: impl Fn(&AtomParams<T>) -> bool,
) -> T {
    let mut num = T::zero();
    let mut den = T::zero();
    for (a, s) in atoms.iter().zip(states) {
        if keep(a) {
            num = num + a.weight * (T::one() + s.w) / T::lit(2.0);
            den = den + a.weight;
        }
    }
    if den > T::zero() {
        num / den
    } else {
        T::zero()
    }
}
