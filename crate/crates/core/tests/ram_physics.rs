//! Band-level simulations of scheduled RAM events. Each test runs a few ensemble simulations
//! of a few seconds each.

use rappi::ensemble::EnsembleSpec;
use rappi::protocol::{prepare, ProtocolRun};
use rappi::pulse::{probe_fwhm_hz, PulseShape, PulseSpec};
use rappi::ram::*;

fn us(x: f64) -> f64 {
    rappi::real::us(x)
}

fn mhz(x: f64) -> f64 {
    rappi::real::mhz(x)
}

fn paper_cells(n: usize) -> Vec<MemoryCell> {
    MemoryCell::comb(n, mhz(3.5), mhz(1.5))
}

fn echo_energy(run: &BandRun, t_out: f64, tp: f64) -> f64 {
    run.trace.proxy_energy(t_out - 2.0 * tp, t_out + 2.0 * tp).unwrap()
}

#[test]
fn two_cell_crosstalk_below_threshold() {
    let cells = paper_cells(2);
    let reqs = [RamRequest::from_us(0, 0.0, 140.0), RamRequest::from_us(1, 60.0, 400.0)];
    let sched = schedule(&reqs, &cells, &SchedulerConfig::default()).unwrap();
    assert!(sched.feasible);
    let report = verify_schedule(&sched, &reqs, &cells, &PhysicsConfig::default()).unwrap();
    assert!(report.passed, "{:?}", report.failures);
    // cell 1 sees cell 0's first event as foreign
    assert!(!report.cells[1].foreign_events.is_empty());
    for c in &report.cells {
        assert!(c.crosstalk_ratio < 0.01, "{c:?}");
    }
}

#[test]
fn overlapping_spans_fail_verification() {
    let valid = paper_cells(2);
    let reqs = [RamRequest::from_us(0, 0.0, 140.0), RamRequest::from_us(1, 60.0, 400.0)];
    let sched = schedule(&reqs, &valid, &SchedulerConfig::default()).unwrap();
    let mut wide = valid.clone();
    for c in &mut wide {
        c.span = 1.2 * c.guard;
    }
    assert!(validate_cells(&wide).is_err());
    // a short square probe stores coherence across the whole overlapping band
    let phys = PhysicsConfig {
        probe: PulseSpec::probe_with_area(PulseShape::ProbeSquare, 0.0, us(1.0), 0.01),
        ..PhysicsConfig::default()
    };
    let narrow = verify_schedule(&sched, &reqs, &valid, &phys).unwrap();
    let overlap = verify_schedule(&sched, &reqs, &wide, &phys).unwrap();
    assert!(narrow.passed, "{:?}", narrow.failures);
    assert!(!overlap.passed);
    let ratio = overlap.cells[1].crosstalk_ratio;
    assert!(ratio > phys.crosstalk_threshold, "ratio {ratio}");
    assert!(overlap.failures.iter().any(|f| f.contains("cell 1") && f.contains("cross-talk")));
}

#[test]
fn own_events_only_match_plain_rappi() {
    let cells = paper_cells(1);
    let reqs = [RamRequest::from_us(0, 0.0, 140.0)];
    let sched = schedule(&reqs, &cells, &SchedulerConfig::default()).unwrap();
    let phys = PhysicsConfig {
        trace_dt: Some(us(0.1)),
        ..PhysicsConfig::default()
    };
    let events = ControlEvent::from_schedule(&sched);
    let tp = phys.probe.duration;
    let band = simulate_band(&cells[0], &cells, &[0.0], &events, &phys, us(140.0) + 2.0 * tp + us(0.2), true).unwrap();

    let mut unit = phys.probe.clone();
    unit.tones[0].peak_rabi = 1.0;
    let window = cells[0].span + 4.0 * std::f64::consts::TAU * probe_fwhm_hz(&unit).unwrap();
    let a = sched.assignment(0).unwrap();
    let mut run = ProtocolRun::<f64>::paper_rappi();
    run.tau1 = a.tau1_ns as f64 * 1e-9;
    run.tau2 = a.tau2_ns as f64 * 1e-9;
    run.ensemble = EnsembleSpec::uniform(band.atoms, window);
    run.trace_dt = phys.trace_dt;
    let prep = prepare(&run).unwrap();
    let trace = prep.result.trace.as_ref().unwrap();

    let (t_b, a_b) = band.trace.echo_peak(us(136.0), us(143.5)).unwrap();
    let (t_p, a_p) = trace.echo_peak(us(136.0), us(143.5)).unwrap();
    assert!((t_b - t_p).abs() <= us(0.1), "{t_b} vs {t_p}");
    assert!((a_b - a_p).abs() <= 0.01 * a_p, "{a_b} vs {a_p}");
}

#[test]
fn echo_time_independent_of_rap1_slide() {
    let cells = paper_cells(1);
    let phys = PhysicsConfig {
        trace_dt: Some(us(0.1)),
        ..PhysicsConfig::default()
    };
    let tp = phys.probe.duration;
    let (t_in, t_out) = (0.0, us(200.0));
    let d = (t_out - t_in) / 2.0;
    for s1 in [us(5.0), us(20.0), us(40.0)] {
        let events = [
            ControlEvent { start: s1, tones: vec![0] },
            ControlEvent { start: s1 + d, tones: vec![0] },
        ];
        let run = simulate_band(&cells[0], &cells, &[t_in], &events, &phys, t_out + 2.0 * tp + us(0.2), true).unwrap();
        let (peak, _) = run.trace.echo_peak(t_out - 2.0 * tp, t_out + 2.0 * tp).unwrap();
        assert!((peak - t_out).abs() <= tp / 2.0, "slide {s1}: peak {peak}");
    }
}

#[test]
fn removing_a_cells_tones_silences_only_that_cell() {
    let cells = paper_cells(3);
    let reqs = [
        RamRequest::from_us(0, 0.0, 160.0),
        RamRequest::from_us(1, 6.0, 166.0),
        RamRequest::from_us(2, 12.0, 172.0),
    ];
    let sched = schedule(&reqs, &cells, &SchedulerConfig::default()).unwrap();
    assert!(sched.feasible, "{:?}", sched.violations);
    let phys = PhysicsConfig::default();
    let tp = phys.probe.duration;
    let events = ControlEvent::from_schedule(&sched);
    let stripped: Vec<ControlEvent> = events
        .iter()
        .map(|e| ControlEvent {
            start: e.start,
            tones: e.tones.iter().copied().filter(|&c| c != 1).collect(),
        })
        .collect();
    let end = us(172.0) + 2.0 * tp + us(1.0);
    let mut before = Vec::new();
    let mut after = Vec::new();
    for (c, q) in cells.iter().zip(&reqs) {
        let t_in = q.t_in_ns as f64 * 1e-9;
        let t_out = q.t_out_ns as f64 * 1e-9;
        let a = simulate_band(c, &cells, &[t_in], &events, &phys, end, true).unwrap();
        let b = simulate_band(c, &cells, &[t_in], &stripped, &phys, end, true).unwrap();
        before.push(echo_energy(&a, t_out, tp));
        after.push(echo_energy(&b, t_out, tp));
    }
    assert!(after[1] < 1e-3 * before[1], "{} vs {}", after[1], before[1]);
    for k in [0, 2] {
        assert!((after[k] - before[k]).abs() < 0.01 * before[k], "cell {k}: {} vs {}", after[k], before[k]);
    }
}

#[test]
fn on_demand_recall_leaves_other_tones_stored() {
    let mm = multimode_run(&MultimodeConfig::spectral(Scenario::OnDemand)).unwrap();
    assert_eq!(mm.order, vec![2, 1, 0]);
    // at the first recall (tone ω₀+Δ) the other two bands stay silent
    let first = &mm.modes[2];
    let (lo, hi) = (first.expected_us * 1e-6 - us(4.0), first.expected_us * 1e-6 + us(4.0));
    let e2 = mm.band_energy(2, lo, hi).unwrap();
    for cell in [0, 1] {
        let e = mm.band_energy(cell, lo, hi).unwrap();
        assert!(e < 0.01 * e2, "cell {cell}: {e} vs {e2}");
    }
    // and they are still recalled later
    for m in &mm.modes {
        assert!((m.echo_centroid_us - m.expected_us).abs() < 2.0, "{m:?}");
        assert!(m.energy > 0.9 * first.energy);
    }
}

#[test]
fn scenarios_order_echoes() {
    let fifo = multimode_run(&MultimodeConfig::spectral(Scenario::Fifo)).unwrap();
    assert!(fifo.is_fifo());
    let simultaneous = multimode_run(&MultimodeConfig::spectral(Scenario::Simultaneous)).unwrap();
    let t: Vec<f64> = simultaneous.modes.iter().map(|m| m.echo_centroid_us).collect();
    assert!(t.iter().all(|x| (x - t[0]).abs() < 0.1), "{t:?}");
    let early = multimode_run(&MultimodeConfig::spectral(Scenario::SelectiveEarly)).unwrap();
    assert_eq!(early.order[0], 1);
    assert!(early.modes[0].echo_centroid_us < early.modes[2].echo_centroid_us);
}

#[test]
fn spectro_temporal_trains_recall_in_order() {
    let mm = multimode_run(&MultimodeConfig::spectro_temporal(3)).unwrap();
    assert_eq!(mm.modes.len(), 9);
    for cell in 0..3 {
        let c: Vec<f64> = mm.modes.iter().filter(|m| m.cell == cell).map(|m| m.echo_centroid_us).collect();
        assert!(c.windows(2).all(|p| p[1] > p[0]), "{c:?}");
    }
    assert!(mm.spacing_error_us() < 0.5);
    assert!(mm.energy_spread() < 0.2);
}

#[test]
fn single_temporal_mode_is_plain_rappi() {
    let mut cfg = MultimodeConfig::temporal_train();
    cfg.modes = 1;
    let mm = multimode_run(&cfg).unwrap();
    assert_eq!(mm.modes.len(), 1);
    let m = &mm.modes[0];
    let s: Vec<f64> = mm.events.iter().map(|e| e.start).collect();
    assert!((m.expected_us - (m.t_in_us + 2.0 * (s[1] - s[0]) * 1e6)).abs() < 1e-9);
    assert!((m.echo_centroid_us - m.expected_us).abs() < 0.25);
}

#[test]
fn train_collision_is_rejected() {
    let mut cfg = MultimodeConfig::temporal_train();
    cfg.probe_spacing = us(0.5);
    assert!(matches!(multimode_run(&cfg), Err(RamError::TrainCollision(_))));
}
