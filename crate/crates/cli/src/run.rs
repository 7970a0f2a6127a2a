//! Executes one configured experiment.

use std::path::{Path, PathBuf};

use rappi::analysis::{fit_decay, DecayModel};
use rappi::propagation::photon_budget;
use rappi::protocol::{efficiency_vs_depth, efficiency_vs_storage, run_experiment, ProtocolKind};
use rappi::ram::{multimode_run, schedule, verify_schedule, ControlEvent};
use rappi::EnsembleTrace;
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::config::{Experiment, FitConfig, RunConfig};
use crate::error::CliError;
use crate::output::Table;

/// Everything a run produces: a results summary, tables, and extra JSON documents.
pub struct Outcome {
    pub results: Value,
    pub tables: Vec<Table>,
    pub documents: Vec<(String, Value)>,
}

impl Outcome {
    fn new(results: Value) -> Self {
        Self {
            results,
            tables: Vec::new(),
            documents: Vec::new(),
        }
    }
}

fn doc<S: Serialize>(name: &str, value: &S) -> (String, Value) {
    (name.to_string(), serde_json::to_value(value).expect("serializable"))
}

/// Ensemble trace; the proxy columns are divided by `scale`.
fn trace_table(name: impl Into<String>, tr: &EnsembleTrace, scale: f64) -> Table {
    let mut t = Table::new(name, &["t_s", "sigma_y_bar", "sigma_z_bar", "re_proxy", "im_proxy"]);
    for i in 0..tr.t.len() {
        t.push(vec![tr.t[i], tr.sigma_y_bar[i], tr.sigma_z_bar[i], tr.proxy[i].re / scale, tr.proxy[i].im / scale]);
    }
    t
}

/// Peak |proxy| before the first control, i.e. the coherence the probe left behind.
fn post_probe_peak(tr: &EnsembleTrace, first_control: f64) -> f64 {
    let peak = tr
        .t
        .iter()
        .zip(&tr.proxy)
        .filter(|(t, _)| **t <= first_control)
        .map(|(_, p)| p.norm())
        .fold(0.0, f64::max);
    if peak > 0.0 {
        peak
    } else {
        1.0
    }
}

/// `{form, params, stderr, residual}` with the form's own parameter names.
pub fn fit_json(m: &DecayModel<f64>) -> Value {
    let mut params = Map::new();
    params.insert(m.form.amplitude_name().into(), json!(m.amplitude));
    params.insert(m.form.time_constant_name().into(), json!(m.time_constant));
    let mut stderr = Map::new();
    stderr.insert(m.form.amplitude_name().into(), json!(m.amplitude_stderr));
    stderr.insert(m.form.time_constant_name().into(), json!(m.time_constant_stderr));
    json!({
        "form": m.form,
        "params": params,
        "stderr": stderr,
        "residual": m.residual_norm,
        "points": m.points,
    })
}

pub fn execute(cfg: &RunConfig, base: &Path) -> Result<Outcome, CliError> {
    cfg.check_sections()?;
    let mut out = match cfg.experiment {
        Experiment::ProtocolRun => protocol_run(cfg)?,
        Experiment::DepthSweep => depth_sweep(cfg)?,
        Experiment::StorageSweep => storage_sweep(cfg)?,
        Experiment::Multimode => multimode(cfg)?,
        Experiment::RamSchedule => ram_schedule(cfg, base)?,
        Experiment::Crosstalk => crosstalk(cfg, base)?,
        Experiment::Fit => fit(cfg.fit.as_ref().expect("checked"), base)?,
    };
    if let Some(b) = &cfg.photon_budget {
        let budget = photon_budget(b.input_photons, &b.chain).map_err(|e| CliError::physics("propagation", e))?;
        let counts = budget.sample(cfg.seed, b.trials);
        let max = counts.iter().copied().max().unwrap_or(0);
        let mut hist = Table::new("photon_counts", &["detected", "trials"]);
        for k in 0..=max {
            hist.push(vec![k as f64, counts.iter().filter(|&&c| c == k).count() as f64]);
        }
        let mean = counts.iter().sum::<u64>() as f64 / counts.len() as f64;
        out.tables.push(hist);
        if let Value::Object(m) = &mut out.results {
            m.insert(
                "photon_budget".into(),
                json!({
                    "transmission": budget.transmission,
                    "expected_detected": budget.expected_detected,
                    "sampled_mean": mean,
                    "trials": b.trials,
                }),
            );
        }
    }
    Ok(out)
}

fn protocol_run(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let run = cfg.protocol_run();
    let r = run_experiment(&run).map_err(CliError::protocol)?;
    let mut out = Outcome::new(json!({
        "eta": r.efficiency,
        "t_echo_us": r.predicted_echo_time * 1e6,
        "suppression_ratio": r.suppression_ratio,
        "snr": r.snr,
        "echo_peak_us": r.echo_peak_time * 1e6,
        "primary_energy": r.primary_energy,
        "secondary_energy": r.secondary_energy,
        "mean_inversion": r.mean_inversion,
        "atoms": run.ensemble.n,
    }));
    let mut field = Table::new("echo_field", &["t_s", "re", "im", "abs2"]);
    for (t, e) in r.propagation.times.iter().zip(&r.propagation.e_out) {
        field.push(vec![*t, e.re, e.im, e.norm_sqr()]);
    }
    out.tables.push(field);
    if let Some(tr) = &r.trace {
        let first_control = match run.kind {
            ProtocolKind::Rappi => run.tau1,
            ProtocolKind::TwoPpe => run.tau1 - run.control.duration / 2.0,
        };
        out.tables.push(trace_table("ensemble_trace", tr, post_probe_peak(tr, first_control)));
    }
    Ok(out)
}

fn depth_sweep(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let run = cfg.protocol_run();
    let alphas = cfg.depth_sweep.as_ref().expect("checked").values();
    let rows = efficiency_vs_depth(&run, &alphas).map_err(CliError::protocol)?;
    let mut t = Table::new("depth_sweep", &["alpha_L", "eta"]);
    for &(a, e) in &rows {
        t.push(vec![a, e]);
    }
    let (peak_a, peak_eta) = rows.iter().copied().fold((f64::NAN, f64::MIN), |b, p| if p.1 > b.1 { p } else { b });
    let mut out = Outcome::new(json!({
        "peak_alpha_l": peak_a,
        "peak_eta": peak_eta,
        "points": rows.len(),
        "t_echo_us": run.echo_time().map_err(CliError::protocol)? * 1e6,
    }));
    out.tables.push(t);
    Ok(out)
}

fn storage_sweep(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let run = cfg.protocol_run();
    let times: Vec<f64> = cfg.storage_sweep.as_ref().expect("checked").t_echo_us.iter().map(|&t| t * 1e-6).collect();
    let curve = efficiency_vs_storage(&run, &times).map_err(CliError::protocol)?;
    let mut t = Table::new("storage_sweep", &["t_echo_us", "eta"]);
    for &(x, e) in &curve.points {
        t.push(vec![x * 1e6, e]);
    }
    let mut out = Outcome::new(json!({
        "eta_r": curve.fit.amplitude,
        "t2m_us": curve.fit.time_constant * 1e6,
        "fit": fit_json(&curve.fit),
        "atoms": run.ensemble.n,
    }));
    out.tables.push(t);
    Ok(out)
}

fn events_json(events: &[ControlEvent]) -> Value {
    Value::Array(
        events
            .iter()
            .map(|e| json!({ "t_start_us": e.start * 1e6, "tones": e.tones }))
            .collect(),
    )
}

fn multimode(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let section = cfg.multimode.as_ref().expect("checked");
    let mm = multimode_run(&section.config()).map_err(|e| CliError::physics("ram", e))?;
    let mut t = Table::new(
        "modes",
        &["cell", "t_in_us", "expected_us", "echo_peak_us", "echo_centroid_us", "energy", "peak_amplitude"],
    );
    for m in &mm.modes {
        t.push(vec![m.cell as f64, m.t_in_us, m.expected_us, m.echo_peak_us, m.echo_centroid_us, m.energy, m.peak_amplitude]);
    }
    let mut out = Outcome::new(json!({
        "kind": section.kind,
        "scenario": section.scenario,
        "modes": mm.modes.len(),
        "order": mm.order,
        "fifo": mm.is_fifo(),
        "spacing_error_us": mm.spacing_error_us(),
        "energy_spread": mm.energy_spread(),
        "events": events_json(&mm.events),
    }));
    out.tables.push(t);
    for run in &mm.traces {
        out.tables.push(trace_table(format!("trace_cell{}", run.cell), &run.trace, 1.0));
    }
    Ok(out)
}

fn ram_schedule(cfg: &RunConfig, base: &Path) -> Result<Outcome, CliError> {
    let requests = cfg.requests(base)?;
    let cells = cfg.cells();
    let sched = schedule(&requests, &cells, &cfg.scheduler()).map_err(|e| CliError::physics("ram", e))?;
    let report = sched.report();
    let mut results = json!({
        "feasible": sched.feasible,
        "event_count": report.event_count,
        "violations": report.violations.len(),
    });
    let mut out = Outcome::new(Value::Null);
    out.documents.push(doc("schedule", &report));
    if cfg.ram().verify && sched.feasible {
        let v = verify_schedule(&sched, &requests, &cells, &cfg.physics()).map_err(|e| CliError::physics("ram", e))?;
        results["verified"] = json!(v.passed);
        out.documents.push(doc("verification", &v));
    }
    let mut a = Table::new("assignments", &["cell", "event1", "event2", "tau1_us", "tau2_us"]);
    for x in &report.assignments {
        a.push(vec![x.cell as f64, x.event1 as f64, x.event2 as f64, x.tau1_us, x.tau2_us]);
    }
    out.tables.push(a);
    out.results = results;
    Ok(out)
}

fn crosstalk(cfg: &RunConfig, base: &Path) -> Result<Outcome, CliError> {
    let requests = cfg.requests(base)?;
    let cells = cfg.cells();
    let sched = schedule(&requests, &cells, &cfg.scheduler()).map_err(|e| CliError::physics("ram", e))?;
    let phys = cfg.physics();
    let v = verify_schedule(&sched, &requests, &cells, &phys).map_err(|e| CliError::physics("ram", e))?;
    let mut t = Table::new(
        "crosstalk",
        &["cell", "t_out_us", "echo_peak_us", "on_target_energy", "off_target_energy", "crosstalk_ratio"],
    );
    for c in &v.cells {
        t.push(vec![c.cell as f64, c.t_out_us, c.echo_peak_us, c.on_target_energy, c.off_target_energy, c.crosstalk_ratio]);
    }
    let worst = v.cells.iter().map(|c| c.crosstalk_ratio).fold(0.0, f64::max);
    let mut out = Outcome::new(json!({
        "passed": v.passed,
        "max_crosstalk_ratio": worst,
        "threshold": phys.crosstalk_threshold,
        "event_count": sched.events.len(),
    }));
    out.tables.push(t);
    out.documents.push(doc("schedule", &sched.report()));
    out.documents.push(doc("verification", &v));
    Ok(out)
}

/// Reads `(x, y)` pairs from two named CSV columns.
pub fn read_points(path: &Path, x: &str, y: &str) -> Result<Vec<(f64, f64)>, CliError> {
    let bad = |msg: String| CliError::config("analysis", format!("{}: {msg}", path.display()));
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(file);
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| bad(format!("no column `{name}` (have {})", headers.iter().collect::<Vec<_>>().join(", "))))
    };
    let (ix, iy) = (col(x)?, col(y)?);
    let mut points = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let num = |k: usize| -> Result<f64, CliError> {
            rec.get(k)
                .unwrap_or("")
                .parse()
                .map_err(|_| bad(format!("row {}: `{}` is not a number", i + 2, rec.get(k).unwrap_or(""))))
        };
        points.push((num(ix)?, num(iy)?));
    }
    Ok(points)
}

fn fit(f: &FitConfig, base: &Path) -> Result<Outcome, CliError> {
    let path: PathBuf = base.join(&f.input);
    let points = read_points(&path, &f.x_column, &f.y_column)?;
    let m = fit_decay(&points, f.form).map_err(|e| CliError::physics("analysis", e))?;
    let body = fit_json(&m);
    let mut out = Outcome::new(json!({
        "fit": body,
        "x_column": f.x_column,
        "y_column": f.y_column,
    }));
    out.documents.push(("fit".into(), body));
    Ok(out)
}
