//! Up-front checks: resolved parameters, derived quantities and every guard outcome, without
//! running the simulation.

use std::fmt::Write as _;
use std::path::Path;

use rappi::bloch::MAX_PHASE_PER_SAMPLE;
use rappi::ensemble::build_grid;
use rappi::protocol::{build_sequence, ProtocolKind};
use rappi::pulse::probe_fwhm_hz;
use rappi::ram::{schedule, validate_cells};
use serde::Serialize;

use crate::config::{Experiment, RunConfig};
use crate::run::read_points;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Guard {
    pub name: &'static str,
    pub module: &'static str,
    pub status: Status,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Derived {
    pub name: &'static str,
    pub value: f64,
    pub unit: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub experiment: Experiment,
    pub resolved: RunConfig,
    pub derived: Vec<Derived>,
    pub guards: Vec<Guard>,
    pub pass: bool,
}

impl Report {
    fn add(&mut self, name: &'static str, value: f64, unit: &'static str) {
        self.derived.push(Derived { name, value, unit });
    }

    fn guard(&mut self, name: &'static str, module: &'static str, outcome: Result<String, String>) {
        let (status, detail) = match outcome {
            Ok(d) => (Status::Pass, d),
            Err(d) => (Status::Fail, d),
        };
        self.guards.push(Guard { name, module, status, detail });
    }

    fn skip(&mut self, name: &'static str, module: &'static str, why: &str) {
        self.guards.push(Guard {
            name,
            module,
            status: Status::Skipped,
            detail: why.to_string(),
        });
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "experiment: {}", serde_json::to_value(self.experiment).expect("enum").as_str().unwrap_or("?")).ok();
        writeln!(s, "resolved:").ok();
        let cfg = serde_json::to_string_pretty(&self.resolved).expect("config");
        for line in cfg.lines() {
            writeln!(s, "  {line}").ok();
        }
        writeln!(s, "derived:").ok();
        for d in &self.derived {
            writeln!(s, "  {} = {:.4} {}", d.name, d.value, d.unit).ok();
        }
        writeln!(s, "guards:").ok();
        for g in &self.guards {
            let tag = match g.status {
                Status::Pass => "pass",
                Status::Fail => "FAIL",
                Status::Skipped => "skip",
            };
            writeln!(s, "  [{tag}] {} ({}): {}", g.name, g.module, g.detail).ok();
        }
        writeln!(s, "overall: {}", if self.pass { "pass" } else { "FAIL" }).ok();
        s
    }
}

pub fn validate(cfg: &RunConfig, base: &Path) -> Report {
    let mut r = Report {
        experiment: cfg.experiment,
        resolved: cfg.clone(),
        derived: Vec::new(),
        guards: Vec::new(),
        pass: true,
    };
    r.guard("sections", "config", cfg.check_sections().map(|_| "required sections present".into()).map_err(|e| e.message));
    match cfg.experiment {
        e if e.uses_protocol() => protocol_guards(cfg, &mut r),
        Experiment::RamSchedule | Experiment::Crosstalk => ram_guards(cfg, base, &mut r),
        Experiment::Multimode => {
            if let Some(m) = &cfg.multimode {
                let mc = m.config();
                r.add("cells", mc.cells.len() as f64, "");
                r.add("probes_per_cell", mc.modes as f64, "");
                r.add("probe_spacing", mc.probe_spacing * 1e6, "us");
                r.add("tau_r", mc.phys.tau_r * 1e6, "us");
                r.guard("cells", "ram", validate_cells(&mc.cells).map(|_| format!("{} cells", mc.cells.len())).map_err(|e| e.to_string()));
            }
        }
        Experiment::Fit => {
            if let Some(f) = &cfg.fit {
                let outcome = read_points(&base.join(&f.input), &f.x_column, &f.y_column).map_err(|e| e.message).and_then(|p| {
                    if p.len() >= 3 {
                        Ok(format!("{} points", p.len()))
                    } else {
                        Err(format!("{} points, need at least 3", p.len()))
                    }
                });
                r.guard("input", "analysis", outcome);
            }
        }
        _ => {}
    }
    if let Some(b) = &cfg.photon_budget {
        let bad: Vec<f64> = b.chain.iter().copied().filter(|&e| !(e > 0.0 && e <= 1.0)).collect();
        let transmission: f64 = b.chain.iter().product();
        if bad.is_empty() {
            r.add("expected_detected", b.input_photons * transmission, "photons");
        }
        r.guard(
            "photon_chain",
            "propagation",
            if bad.is_empty() {
                Ok(format!("transmission {transmission:.5}"))
            } else {
                Err(format!("efficiencies outside (0, 1]: {bad:?}"))
            },
        );
    }
    r.pass = r.guards.iter().all(|g| g.status != Status::Fail);
    r
}

fn protocol_guards(cfg: &RunConfig, r: &mut Report) {
    let mut run = cfg.protocol_run();
    if let (Experiment::StorageSweep, Some(s)) = (cfg.experiment, &cfg.storage_sweep) {
        if let Some(&longest) = s.t_echo_us.iter().max_by(|a, b| a.total_cmp(b)) {
            run = run.with_echo_time(longest * 1e-6);
        }
    }

    match run.conditions() {
        Ok(Some(c)) => {
            r.add("adiabaticity_ratio", c.adiabaticity_ratio, "(Omega0^2/R)");
            r.add("bandwidth_ratio", c.bandwidth_ratio, "(RAP span / probe FWHM)");
            let verdict = |ok: bool, s: String| if ok { Ok(s) } else { Err(s) };
            r.guard("adiabaticity", "pulse", verdict(c.adiabatic_ok, format!("Omega0^2/R = {:.2}, need >= 10", c.adiabaticity_ratio)));
            r.guard("bandwidth", "pulse", verdict(c.bandwidth_ok, format!("span/FWHM = {:.2}, need >= 3", c.bandwidth_ratio)));
        }
        Ok(None) => {
            r.skip("adiabaticity", "pulse", "no RAP in a 2PPE run");
            r.skip("bandwidth", "pulse", "no RAP in a 2PPE run");
        }
        Err(e) => r.guard("pulse", "pulse", Err(e.to_string())),
    }

    let spec = run.ensemble_spec();
    r.add("atoms", spec.n as f64, "");
    r.add("grid_spacing", spec.spacing() / std::f64::consts::TAU / 1e3, "kHz");
    r.add("revival_time", spec.revival_time() * 1e6, "us");
    r.guard("ensemble_spec", "ensemble", spec.validate().map(|_| format!("{} bins over {:.3} MHz", spec.n, cfg.ensemble.window_mhz)).map_err(|e| e.to_string()));

    let mut unit = run.probe.clone();
    for t in &mut unit.tones {
        t.peak_rabi = 1.0;
    }
    match probe_fwhm_hz(&unit) {
        Ok(fwhm) => {
            r.add("probe_fwhm", fwhm / 1e6, "MHz");
            let span = run.control_span();
            if run.kind == ProtocolKind::Rappi {
                r.add("control_span", span / std::f64::consts::TAU / 1e6, "MHz");
            }
            r.guard(
                "window",
                "ensemble",
                spec.check_window(span, fwhm * std::f64::consts::TAU)
                    .map(|_| "window covers the control span plus 4 probe widths".into())
                    .map_err(|e| e.to_string()),
            );
        }
        Err(e) => r.guard("probe", "pulse", Err(e.to_string())),
    }

    match build_sequence(&run) {
        Ok(seq) => {
            r.add("t_echo", seq.echo_time * 1e6, "us");
            r.add("simulated_span", seq.span() * 1e6, "us");
            r.guard("timing", "protocol", Ok(format!("echo due at {:.3} us", seq.echo_time * 1e6)));
            let revival = spec.revival_time();
            let detail = format!("T_rev = {:.1} us against twice the span = {:.1} us", revival * 1e6, 2.0 * seq.span() * 1e6);
            let ok = spec.validate().is_ok() && build_grid(&spec, seq.span()).is_ok();
            r.guard("revival", "ensemble", if ok { Ok(detail) } else { Err(detail) });
        }
        Err(e) => {
            r.guard("timing", "protocol", Err(e.to_string()));
            r.skip("revival", "ensemble", "needs a valid timing");
        }
    }

    let dt = run.resolved_dt();
    let edge = spec.center.abs() + spec.window / 2.0;
    let phase = edge * dt;
    r.add("dt", dt * 1e9, "ns");
    let detail = format!("|delta|max * dt = {phase:.3}, limit {MAX_PHASE_PER_SAMPLE}");
    r.guard("step", "bloch", if phase <= MAX_PHASE_PER_SAMPLE { Ok(detail) } else { Err(detail) });

    let m = &cfg.medium;
    r.guard(
        "medium",
        "propagation",
        if m.alpha_l >= 0.0 && m.alpha_l.is_finite() && m.slices >= 1 {
            Ok(format!("alphaL = {} over {} slices", m.alpha_l, m.slices))
        } else {
            Err(format!("need finite alphaL >= 0 and at least one slice, got {} and {}", m.alpha_l, m.slices))
        },
    );
}

fn ram_guards(cfg: &RunConfig, base: &Path, r: &mut Report) {
    let cells = cfg.cells();
    r.add("cells", cells.len() as f64, "");
    let cells_ok = validate_cells(&cells);
    r.guard("cells", "ram", cells_ok.as_ref().map(|_| format!("{} cells", cells.len())).map_err(|e| e.to_string()));
    let requests = match cfg.requests(base) {
        Ok(q) => {
            r.add("requests", q.len() as f64, "");
            r.guard("requests", "ram", Ok(format!("{} requests", q.len())));
            q
        }
        Err(e) => {
            r.guard("requests", "ram", Err(e.message));
            r.skip("schedule", "ram", "needs valid requests");
            return;
        }
    };
    if cells_ok.is_err() {
        r.skip("schedule", "ram", "needs valid cells");
        return;
    }
    match schedule(&requests, &cells, &cfg.scheduler()) {
        Ok(s) => {
            r.add("events", s.events.len() as f64, "");
            let detail = format!("{} events, {} violations", s.events.len(), s.violations.len());
            r.guard("schedule", "ram", if s.feasible { Ok(detail) } else { Err(detail) });
        }
        Err(e) => r.guard("schedule", "ram", Err(e.to_string())),
    }
}
