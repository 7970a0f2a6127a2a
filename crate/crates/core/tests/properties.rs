//! Property suites: weak-probe linearity, norm conservation, integrator order, thread-count
//! determinism and fit invariances.

use num_complex::Complex;
use proptest::prelude::*;
use rappi::analysis::{extract_efficiency, fit_decay, DecayForm, FieldTrace};
use rappi::bloch::{integrate_samples_with, AtomParams, BlochVector, Integrator, Mode};
use rappi::ensemble::{build_grid, run_sequence, EnsembleSpec, Event, SequenceOptions};
use rappi::protocol::{run_experiment, ProtocolRun};
use rappi::pulse::{synthesize, PulseShape, PulseSpec, TimeGrid};

fn us(x: f64) -> f64 {
    rappi::real::us(x)
}

fn mhz(x: f64) -> f64 {
    rappi::real::mhz(x)
}

fn mhz_per_ms(x: f64) -> f64 {
    rappi::real::mhz_per_ms(x)
}

fn unit_vector(theta: f64, phi: f64) -> BlochVector<f64> {
    BlochVector::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// The probe-induced change of the nonlinear state scales with the probe amplitude within
    /// 1 % and equals the split perturbation.
    #[test]
    fn weak_probe_response_is_linear(
        area in 0.002f64..0.02,
        rate in 0.5f64..1.5,
        detunings in prop::collection::vec(-0.6f64..0.6, 6),
    ) {
        let atoms: Vec<AtomParams<f64>> = detunings.iter().map(|&f| AtomParams::new(mhz(f))).collect();
        let probe = |a: f64| PulseSpec::probe_with_area(PulseShape::ProbeGaussian, 0.0, us(1.0), a);
        let rap = PulseSpec::rap(us(35.0), us(50.0), mhz(0.35), mhz_per_ms(30.0 * rate), 0.0);
        let opts = SequenceOptions::new(5e-9).with_span(-us(2.0), us(62.0));
        let base = run_sequence(&atoms, &[Event::Control(rap.clone())], &opts).unwrap();
        let full = |a: f64| {
            run_sequence(&atoms, &[Event::Control(probe(a)), Event::Control(rap.clone())], &opts).unwrap()
        };
        let (one, two) = (full(area), full(2.0 * area));
        let split = run_sequence(&atoms, &[Event::Probe(probe(area)), Event::Control(rap.clone())], &opts).unwrap();
        // an atom near a node of its own linear response shows the O(area^2) term, so the
        // superposition is measured over the whole response vector
        let (mut dev, mut scale) = (0.0, 0.0);
        for j in 0..atoms.len() {
            let d1 = one.last.background[j].coherence() - base.last.background[j].coherence();
            let d2 = two.last.background[j].coherence() - base.last.background[j].coherence();
            let p = split.last.perturbation[j].coherence();
            dev += (d2 - d1 * 2.0).norm_sqr();
            scale += (d1 * 2.0).norm_sqr();
            prop_assert!((p - d1).norm() <= 1e-6 * area, "atom {j}: split {p} vs {d1}");
        }
        prop_assert!(dev.sqrt() <= 0.01 * scale.sqrt(), "deviation {} of {}", dev.sqrt(), scale.sqrt());
    }

    #[test]
    fn bloch_norm_is_conserved(
        rabi in 0.05f64..1.0,
        rate in 5.0f64..80.0,
        duration in 10.0f64..60.0,
        detuning in -1.5f64..1.5,
        theta in 0.0f64..std::f64::consts::PI,
        phi in 0.0f64..std::f64::consts::TAU,
    ) {
        let rap = PulseSpec::rap(0.0, us(duration), mhz(rabi), mhz_per_ms(rate), 0.0);
        let env = synthesize(&rap, TimeGrid::for_pulse(&rap, 10e-9)).unwrap();
        let atom = AtomParams::new(mhz(detuning));
        let mut drift: f64 = 0.0;
        integrate_samples_with(Integrator::Magnus4, unit_vector(theta, phi), &atom, Mode::Full, &env.samples, env.dt, |_, s| {
            drift = drift.max((s.norm() - 1.0).abs());
        });
        prop_assert!(drift < 1e-6, "drift {drift}");
    }

    /// Halving the step of RK4 shrinks the error sixteenfold.
    #[test]
    fn rk4_is_fourth_order(
        fwhm in 0.5f64..2.0,
        rabi in 0.2f64..1.0,
        detuning in -1.0f64..1.0,
        theta in 0.2f64..3.0,
        phi in 0.0f64..std::f64::consts::TAU,
    ) {
        let pulse = PulseSpec::gaussian(0.0, us(fwhm), mhz(rabi));
        let atom = AtomParams::new(mhz(detuning));
        let run = |dt: f64| {
            let env = synthesize(&pulse, TimeGrid::for_pulse(&pulse, dt)).unwrap();
            integrate_samples_with(Integrator::Rk4, unit_vector(theta, phi), &atom, Mode::Full, &env.samples, env.dt, |_, _| {})
        };
        let (a, b, c) = (run(40e-9), run(20e-9), run(10e-9));
        let ratio = a.max_abs_diff(&b) / b.max_abs_diff(&c);
        prop_assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn decay_fit_recovers_parameters(
        amplitude in 0.05f64..1.0,
        tau_us in 50.0f64..2000.0,
        count in 4usize..10,
        form_index in 0usize..3,
    ) {
        let form = [DecayForm::EchoIntensity, DecayForm::Memory, DecayForm::Recovery][form_index];
        let tau = us(tau_us);
        let points: Vec<(f64, f64)> = (0..count)
            .map(|i| {
                let t = tau * (0.1 + 1.4 * i as f64 / (count - 1) as f64);
                (t, form.eval(amplitude, tau, t))
            })
            .collect();
        let m = fit_decay(&points, form).unwrap();
        prop_assert!((m.time_constant / tau - 1.0).abs() < 1e-4, "{} vs {tau}", m.time_constant);
        prop_assert!((m.amplitude / amplitude - 1.0).abs() < 1e-4);
    }

    /// Scaling the amplitude or the time axis of the data scales the fit accordingly.
    #[test]
    fn decay_fit_is_scale_invariant(
        amplitude in 0.05f64..1.0,
        tau_us in 100.0f64..1000.0,
        scale in 0.2f64..5.0,
        noise in prop::collection::vec(-0.05f64..0.05, 6),
    ) {
        let tau = us(tau_us);
        let points: Vec<(f64, f64)> = noise
            .iter()
            .enumerate()
            .map(|(i, n)| {
                let t = tau * (0.2 + 0.3 * i as f64);
                (t, DecayForm::Memory.eval(amplitude, tau, t) * (1.0 + n))
            })
            .collect();
        let base = fit_decay(&points, DecayForm::Memory).unwrap();
        let tall: Vec<(f64, f64)> = points.iter().map(|&(t, y)| (t, y * scale)).collect();
        let wide: Vec<(f64, f64)> = points.iter().map(|&(t, y)| (t * scale, y)).collect();
        let tall = fit_decay(&tall, DecayForm::Memory).unwrap();
        let wide = fit_decay(&wide, DecayForm::Memory).unwrap();
        prop_assert!((tall.amplitude / (base.amplitude * scale) - 1.0).abs() < 1e-6);
        prop_assert!((tall.time_constant / base.time_constant - 1.0).abs() < 1e-6);
        prop_assert!((wide.time_constant / (base.time_constant * scale) - 1.0).abs() < 1e-6);
        prop_assert!((wide.amplitude / base.amplitude - 1.0).abs() < 1e-6);
    }

    /// Efficiency is quadratic in the field and inverse in the reference energy.
    #[test]
    fn extracted_efficiency_scales_with_energy(
        gain in 0.1f64..10.0,
        echo in 0.1f64..1.0,
        floor in 0.0f64..0.05,
    ) {
        let t: Vec<f64> = (0..=400).map(|i| i as f64 * 0.01).collect();
        let field = |g: f64| -> Vec<Complex<f64>> {
            t.iter()
                .map(|&x| {
                    let pulse = echo * (-((x - 3.0) / 0.1).powi(2)).exp();
                    Complex::new(pulse, floor * (std::f64::consts::TAU * 5.0 * x).sin()) * g
                })
                .collect()
        };
        let reference = FieldTrace::new(t.clone(), t.iter().map(|&x| Complex::new((-((x - 0.5) / 0.1).powi(2)).exp(), 0.0)).collect());
        let eta = |g: f64| extract_efficiency(&FieldTrace::new(t.clone(), field(g)), &reference, (2.6, 3.4), (1.0, 2.0)).unwrap();
        let (a, b) = (eta(1.0), eta(gain.sqrt()));
        prop_assert!((b - gain * a).abs() <= 1e-9 * (gain * a).max(1e-12), "{a} {b}");
        let doubled = FieldTrace::new(reference.t.clone(), reference.field.iter().map(|c| c * 2.0).collect());
        let c = extract_efficiency(&FieldTrace::new(t.clone(), field(1.0)), &doubled, (2.6, 3.4), (1.0, 2.0)).unwrap();
        prop_assert!((c * 4.0 - a).abs() <= 1e-9 * a.max(1e-12));
    }
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let mut run = ProtocolRun::<f64>::paper_2ppe(us(6.0));
    run.ensemble = EnsembleSpec::uniform(301, mhz(2.5));
    run.trace_dt = Some(us(0.1));
    let results: Vec<_> = [1, 2, 4]
        .iter()
        .map(|&n| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
            pool.install(|| run_experiment(&run).unwrap())
        })
        .collect();
    for r in &results[1..] {
        assert_eq!(r.efficiency.unwrap().to_bits(), results[0].efficiency.unwrap().to_bits());
        assert_eq!(r.propagation.e_out, results[0].propagation.e_out);
        assert_eq!(r.trace, results[0].trace);
    }

    let atoms = build_grid(&EnsembleSpec::uniform(257, mhz(2.0)), us(60.0)).unwrap().atoms;
    let rap = PulseSpec::rap(us(30.0), us(50.0), mhz(0.35), mhz_per_ms(30.0), 0.0);
    let probe = PulseSpec::probe_with_area(PulseShape::ProbeGaussian, 0.0, us(1.0), 0.01);
    let opts = SequenceOptions::new(10e-9).with_span(-us(2.0), us(58.0)).with_trace(us(0.2));
    let traces: Vec<_> = [1, 3, 8]
        .iter()
        .map(|&n| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
            pool.install(|| {
                run_sequence(&atoms, &[Event::Probe(probe.clone()), Event::Control(rap.clone())], &opts).unwrap()
            })
        })
        .collect();
    assert!(traces.windows(2).all(|p| p[0].trace == p[1].trace && p[0].last == p[1].last));
}
