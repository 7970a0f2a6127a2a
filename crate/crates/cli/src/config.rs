//! Run configuration. Every physical quantity carries its unit in the key name and unknown keys
//! are rejected.

use std::path::{Path, PathBuf};

use rappi::ensemble::Profile;
use rappi::protocol::{PiMode, ProtocolKind};
use rappi::pulse::PulseShape;
use rappi::ram::{MemoryCell, MultimodeConfig, MultimodeKind, RamRequest, Scenario, SchedulerConfig, PhysicsConfig};
use rappi::real::{mhz, mhz_per_ms, us};
use rappi::{EnsembleSpec, MediumSpec, ProtocolRun, PulseSpec};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    ProtocolRun,
    DepthSweep,
    StorageSweep,
    Multimode,
    RamSchedule,
    Crosstalk,
    Fit,
}

impl Experiment {
    pub fn uses_protocol(self) -> bool {
        matches!(self, Experiment::ProtocolRun | Experiment::DepthSweep | Experiment::StorageSweep)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub format: Format,
    /// Not part of the manifest: outputs must not depend on where they are written.
    #[serde(default, skip_serializing)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub medium: MediumConfig,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_sweep: Option<DepthSweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub storage_sweep: Option<StorageSweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multimode: Option<MultimodeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ram: Option<RamConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub photon_budget: Option<PhotonBudgetConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeShape {
    Gaussian,
    Square,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub shape: ProbeShape,
    /// Intensity FWHM (Gaussian) or length (square).
    pub duration_us: f64,
    pub area_rad: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            shape: ProbeShape::Gaussian,
            duration_us: 2.0,
            area_rad: 0.01,
        }
    }
}

impl ProbeConfig {
    pub fn spec(&self) -> PulseSpec {
        let shape = match self.shape {
            ProbeShape::Gaussian => PulseShape::ProbeGaussian,
            ProbeShape::Square => PulseShape::ProbeSquare,
        };
        PulseSpec::probe_with_area(shape, 0.0, us(self.duration_us), self.area_rad)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RapConfig {
    /// Peak Rabi frequency Ω₀/2π.
    pub rabi_mhz: f64,
    /// Sweep rate R/2π.
    pub chirp_mhz_per_ms: f64,
    pub detuning_mhz: f64,
}

impl Default for RapConfig {
    fn default() -> Self {
        Self {
            rabi_mhz: 0.35,
            chirp_mhz_per_ms: 30.0,
            detuning_mhz: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiPulseConfig {
    pub duration_us: f64,
    pub mode: PiMode,
}

impl Default for PiPulseConfig {
    fn default() -> Self {
        Self {
            duration_us: 0.2,
            mode: PiMode::Pulse,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    pub kind: ProtocolKind,
    /// RAPPI: probe to RAP1 start. 2PPE: probe to π-pulse.
    pub tau1_us: f64,
    pub tau2_us: f64,
    pub tau_r_us: f64,
    pub probe: ProbeConfig,
    pub rap: RapConfig,
    pub pi_pulse: PiPulseConfig,
    /// Omitted means no dephasing.
    pub t2_us: Option<f64>,
    pub dt_ns: Option<f64>,
    pub trace_dt_us: Option<f64>,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            kind: ProtocolKind::Rappi,
            tau1_us: 10.0,
            tau2_us: 20.0,
            tau_r_us: 50.0,
            probe: ProbeConfig::default(),
            rap: RapConfig::default(),
            pi_pulse: PiPulseConfig::default(),
            t2_us: None,
            dt_ns: None,
            trace_dt_us: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MediumConfig {
    /// Peak optical depth αL (dimensionless).
    pub alpha_l: f64,
    pub slices: usize,
    pub length_mm: f64,
}

impl Default for MediumConfig {
    fn default() -> Self {
        Self {
            alpha_l: 2.0,
            slices: 32,
            length_mm: 12.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileKind {
    Uniform,
    Gaussian,
    Lorentzian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    /// Detuning bins; omitted picks enough for the run's span.
    pub atoms: Option<usize>,
    pub window_mhz: f64,
    pub center_mhz: f64,
    pub profile: ProfileKind,
    pub profile_fwhm_mhz: Option<f64>,
    pub t1_us: Option<f64>,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            atoms: Some(1001),
            window_mhz: 2.5,
            center_mhz: 0.0,
            profile: ProfileKind::Uniform,
            profile_fwhm_mhz: None,
            t1_us: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthSweepConfig {
    pub alpha_l_min: f64,
    pub alpha_l_max: f64,
    pub points: usize,
}

impl DepthSweepConfig {
    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.alpha_l_min];
        }
        let step = (self.alpha_l_max - self.alpha_l_min) / (self.points - 1) as f64;
        (0..self.points).map(|i| self.alpha_l_min + step * i as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StorageSweepConfig {
    pub t_echo_us: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultimodeSection {
    pub kind: MultimodeKind,
    #[serde(default = "default_scenario")]
    pub scenario: Scenario,
    /// Probes per cell for spectro-temporal trains.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes: Option<usize>,
}

fn default_scenario() -> Scenario {
    Scenario::Simultaneous
}

impl MultimodeSection {
    pub fn config(&self) -> MultimodeConfig {
        match self.kind {
            MultimodeKind::Temporal => MultimodeConfig::temporal_train(),
            MultimodeKind::Spectral => MultimodeConfig::spectral(self.scenario),
            MultimodeKind::SpectroTemporal => MultimodeConfig::spectro_temporal(self.modes.unwrap_or(3)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestConfig {
    pub cell: usize,
    pub t_in_us: f64,
    pub t_out_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellsConfig {
    pub count: usize,
    pub spacing_mhz: f64,
    pub span_mhz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RamConfig {
    /// CSV with header `cell,t_in_us,t_out_us`, relative to the config file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub requests_file: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub requests: Option<Vec<RequestConfig>>,
    pub cells: CellsConfig,
    pub guard_us: f64,
    pub grid_us: f64,
    pub restarts: usize,
    /// Bins per cell in verification runs; omitted picks enough for each cell's span.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub atoms: Option<usize>,
    /// Re-simulate every cell to check echo timing and cross-talk.
    pub verify: bool,
    pub neighbor_reach: f64,
    pub crosstalk_threshold: f64,
}

impl Default for RamConfig {
    fn default() -> Self {
        let s = SchedulerConfig::default();
        let p = PhysicsConfig::default();
        Self {
            requests_file: None,
            requests: None,
            cells: CellsConfig {
                count: 8,
                spacing_mhz: 3.5,
                span_mhz: 1.5,
            },
            guard_us: s.guard_ns as f64 / 1e3,
            grid_us: s.grid_ns as f64 / 1e3,
            restarts: s.restarts,
            atoms: None,
            verify: false,
            neighbor_reach: p.neighbor_reach,
            crosstalk_threshold: p.crosstalk_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    /// CSV file relative to the config file.
    pub input: PathBuf,
    pub form: rappi::analysis::DecayForm,
    pub x_column: String,
    pub y_column: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhotonBudgetConfig {
    pub input_photons: f64,
    /// Efficiencies of each stage between the crystal and the detector.
    pub chain: Vec<f64>,
    pub trials: usize,
}

fn ns(x_us: f64) -> i64 {
    (x_us * 1e3).round() as i64
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(CliError::from_json)?;
        Ok(cfg)
    }

    /// Reads a config file. Manifests written by `run` are accepted too.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let value: serde_json::Value = serde_path_to_error::deserialize(de).map_err(CliError::from_json)?;
        if let Some(inner) = value.as_object().filter(|o| o.contains_key("tool")).and_then(|o| o.get("config")) {
            let text = serde_json::to_string(inner).expect("value serializes");
            return Self::parse(&text);
        }
        Self::parse(&text)
    }

    pub fn protocol_run(&self) -> ProtocolRun {
        let p = &self.protocol;
        let mut run = match p.kind {
            ProtocolKind::Rappi => ProtocolRun::paper_rappi(),
            ProtocolKind::TwoPpe => ProtocolRun::paper_2ppe(us(p.tau1_us)),
        };
        run.tau1 = us(p.tau1_us);
        run.probe = p.probe.spec();
        match p.kind {
            ProtocolKind::Rappi => {
                run.tau2 = us(p.tau2_us);
                run.tau_r = us(p.tau_r_us);
                run.control = PulseSpec::rap(
                    0.0,
                    run.tau_r,
                    mhz(p.rap.rabi_mhz),
                    mhz_per_ms(p.rap.chirp_mhz_per_ms),
                    mhz(p.rap.detuning_mhz),
                );
            }
            ProtocolKind::TwoPpe => {
                let len = us(p.pi_pulse.duration_us);
                run.control = PulseSpec::square(0.0, len, std::f64::consts::PI / len);
                run.pi_mode = p.pi_pulse.mode;
            }
        }
        run.t2 = p.t2_us.map_or(f64::INFINITY, us);
        run.dt = p.dt_ns.map(|x| x * 1e-9);
        run.trace_dt = p.trace_dt_us.map(us);
        run.medium = MediumSpec {
            alpha_l: self.medium.alpha_l,
            slices: self.medium.slices,
            length_m: self.medium.length_mm * 1e-3,
        };
        run.ensemble = self.ensemble_spec(&run, self.longest_echo_us());
        run
    }

    /// Longest echo time the ensemble must hold.
    fn longest_echo_us(&self) -> Option<f64> {
        match (&self.experiment, &self.storage_sweep) {
            (Experiment::StorageSweep, Some(s)) => s.t_echo_us.iter().copied().reduce(f64::max),
            _ => None,
        }
    }

    fn ensemble_spec(&self, run: &ProtocolRun, t_echo_us: Option<f64>) -> EnsembleSpec {
        let e = &self.ensemble;
        let window = mhz(e.window_mhz);
        let n = e.atoms.unwrap_or_else(|| {
            let t_e = t_echo_us.map(us).or_else(|| run.echo_time().ok()).unwrap_or(0.0);
            EnsembleSpec::auto_bins(window, t_e + 4.0 * run.probe.duration + run.probe.duration)
        });
        let mut spec = EnsembleSpec::uniform(n, window).with_center(mhz(e.center_mhz));
        let fwhm = e.profile_fwhm_mhz.map_or(0.0, mhz);
        spec.profile = match e.profile {
            ProfileKind::Uniform => Profile::Uniform,
            ProfileKind::Gaussian => Profile::Gaussian { fwhm },
            ProfileKind::Lorentzian => Profile::Lorentzian { fwhm },
        };
        spec.t1 = e.t1_us.map_or(f64::INFINITY, us);
        spec
    }

    pub fn ram(&self) -> RamConfig {
        self.ram.clone().unwrap_or_default()
    }

    pub fn scheduler(&self) -> SchedulerConfig {
        let r = self.ram();
        SchedulerConfig {
            tau_r_ns: ns(self.protocol.tau_r_us),
            probe_ns: ns(self.protocol.probe.duration_us),
            guard_ns: ns(r.guard_us),
            grid_ns: ns(r.grid_us),
            restarts: r.restarts,
            seed: self.seed,
        }
    }

    pub fn cells(&self) -> Vec<MemoryCell> {
        let c = self.ram().cells;
        MemoryCell::comb(c.count, mhz(c.spacing_mhz), mhz(c.span_mhz))
    }

    pub fn physics(&self) -> PhysicsConfig {
        let r = self.ram();
        PhysicsConfig {
            tau_r: us(self.protocol.tau_r_us),
            probe: self.protocol.probe.spec(),
            rabi: mhz(self.protocol.rap.rabi_mhz),
            atoms: r.atoms,
            t2: self.protocol.t2_us.map_or(f64::INFINITY, us),
            dt: self.protocol.dt_ns.map(|x| x * 1e-9),
            trace_dt: self.protocol.trace_dt_us.map(us),
            neighbor_reach: r.neighbor_reach,
            crosstalk_threshold: r.crosstalk_threshold,
        }
    }

    /// RAM requests, from the inline list or the request file (relative to `base`).
    pub fn requests(&self, base: &Path) -> Result<Vec<RamRequest>, CliError> {
        let r = self.ram();
        match (&r.requests, &r.requests_file) {
            (Some(list), None) => Ok(list.iter().map(|q| RamRequest::from_us(q.cell, q.t_in_us, q.t_out_us)).collect()),
            (None, Some(file)) => {
                let path = base.join(file);
                let f = std::fs::File::open(&path).map_err(|e| CliError::io(&path, e))?;
                rappi::ram::parse_requests(f).map_err(|e| CliError::physics("ram", e))
            }
            (Some(_), Some(_)) => Err(CliError::config("ram", "give either ram.requests or ram.requests_file, not both")),
            (None, None) => Err(CliError::config("ram", "ram.requests or ram.requests_file is required")),
        }
    }

    /// Checks that the sections the experiment needs are present and sane.
    pub fn check_sections(&self) -> Result<(), CliError> {
        let missing = |key: &str| CliError::config("config", format!("experiment {:?} needs a `{key}` section", self.experiment));
        match self.experiment {
            Experiment::DepthSweep => {
                let s = self.depth_sweep.as_ref().ok_or_else(|| missing("depth_sweep"))?;
                if s.points == 0 || !(s.alpha_l_max >= s.alpha_l_min) || s.alpha_l_min < 0.0 {
                    return Err(CliError::config("config", "depth_sweep needs points >= 1 and 0 <= alpha_l_min <= alpha_l_max"));
                }
            }
            Experiment::StorageSweep => {
                let s = self.storage_sweep.as_ref().ok_or_else(|| missing("storage_sweep"))?;
                if s.t_echo_us.len() < 3 {
                    return Err(CliError::config("config", "storage_sweep.t_echo_us needs at least 3 times"));
                }
                if s.t_echo_us.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(CliError::config("config", "storage_sweep.t_echo_us must be increasing"));
                }
            }
            Experiment::Multimode => {
                self.multimode.as_ref().ok_or_else(|| missing("multimode"))?;
            }
            Experiment::RamSchedule | Experiment::Crosstalk => {
                self.ram.as_ref().ok_or_else(|| missing("ram"))?;
            }
            Experiment::Fit => {
                self.fit.as_ref().ok_or_else(|| missing("fit"))?;
            }
            Experiment::ProtocolRun => {}
        }
        if let Some(b) = &self.photon_budget {
            if b.trials == 0 || !(b.input_photons >= 0.0) {
                return Err(CliError::config("photon_budget", "needs trials >= 1 and input_photons >= 0"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_reproduce_the_paper_run() {
        let cfg = RunConfig::parse(r#"{"experiment": "protocol-run"}"#).unwrap();
        let run = cfg.protocol_run();
        let paper = ProtocolRun::paper_rappi();
        assert_eq!(run.control, paper.control);
        assert_eq!(run.probe, paper.probe);
        assert_eq!(run.ensemble, paper.ensemble);
        assert_eq!(run.medium.alpha_l, paper.medium.alpha_l);
        assert!((run.tau2 - paper.tau2).abs() < 1e-15);
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_path() {
        let err = RunConfig::parse(r#"{"experiment": "protocol-run", "protocol": {"tau1": 10}}"#).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("protocol"), "{msg}");
        assert!(msg.contains("tau1"), "{msg}");
    }

    #[test]
    fn sweep_values_span_the_range() {
        let s = DepthSweepConfig {
            alpha_l_min: 0.0,
            alpha_l_max: 6.0,
            points: 25,
        };
        let v = s.values();
        assert_eq!(v.len(), 25);
        assert_eq!(v[8], 2.0);
        assert_eq!(v[24], 6.0);
    }
}
