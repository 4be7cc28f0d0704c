//! Run configuration: a JSON document whose keys carry their SI unit.
//!
//! Every block is optional and falls back to the defaults below. Unknown keys
//! are rejected so that a misspelt unit suffix cannot be silently ignored.

use std::path::{Path, PathBuf};

use ionarray::consts::{ATOMIC_MASS_UNIT, ELEMENTARY_CHARGE, TWO_PI};
use ionarray::fixtures;
use serde::Deserialize;

use crate::error::CliError;

pub const DEFAULT_SEED: u64 = 20_250_101;

type Point3 = [f64; 3];

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Layout document, relative to the config file.
    pub layout: Option<PathBuf>,
    pub seed: Option<u64>,
    pub species: SpeciesConfig,
    pub drive: DriveConfig,
    pub search: SearchConfig,
    /// Static control voltages added to the RF pseudopotential.
    pub control_voltages_v: Option<Vec<f64>>,
    pub modes: ModesConfig,
    pub solve_control: SolveControlConfig,
    pub sweep: SweepConfig,
    pub rfopt: RfoptConfig,
    pub flop: FlopConfig,
    pub fit_flop: FitFlopConfig,
    pub thermometry: ThermometryConfig,
    pub heating: HeatingConfig,
    pub tickle: TickleConfig,
    pub exchange: ExchangeConfig,
    pub micromotion: MicromotionConfig,
    pub detection: DetectionConfig,
    pub ramp: RampConfig,
    pub waveform: WaveformConfig,
    pub field_sample: FieldSampleConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            layout: None,
            seed: None,
            species: SpeciesConfig::default(),
            drive: DriveConfig::default(),
            search: SearchConfig::default(),
            control_voltages_v: None,
            modes: ModesConfig::default(),
            solve_control: SolveControlConfig::default(),
            sweep: SweepConfig::default(),
            rfopt: RfoptConfig::default(),
            flop: FlopConfig::default(),
            fit_flop: FitFlopConfig::default(),
            thermometry: ThermometryConfig::default(),
            heating: HeatingConfig::default(),
            tickle: TickleConfig::default(),
            exchange: ExchangeConfig::default(),
            micromotion: MicromotionConfig::default(),
            detection: DetectionConfig::default(),
            ramp: RampConfig::default(),
            waveform: WaveformConfig::default(),
            field_sample: FieldSampleConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// Resolve a path from the config file relative to its directory.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpeciesConfig {
    pub charge_c: f64,
    pub mass_kg: f64,
    pub label: String,
}

impl Default for SpeciesConfig {
    fn default() -> Self {
        Self { charge_c: ELEMENTARY_CHARGE, mass_kg: 25.0 * ATOMIC_MASS_UNIT, label: "25Mg+".into() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriveConfig {
    pub omega_rf_rad_s: f64,
    pub u_rf_v: f64,
}

impl Default for DriveConfig {
    fn default() -> Self {
        Self { omega_rf_rad_s: TWO_PI * 48.3e6, u_rf_v: 20.0 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub lower_m: Point3,
    pub upper_m: Point3,
    pub starts: [usize; 3],
    /// Also report saddle points in `sites`.
    pub include_saddles: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        let r = fixtures::triangular_search_region();
        Self { lower_m: r.lower.into(), upper_m: r.upper.into(), starts: r.starts, include_saddles: false }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModesConfig {
    /// Evaluate modes here; empty means at every minimum found.
    pub positions_m: Vec<Point3>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveControlConfig {
    pub families: Vec<String>,
    /// Exact constraint sites; the first is the addressed site.
    pub sites_m: Option<Vec<Point3>>,
    /// Without `sites_m`, the minima nearest these positions are used.
    pub nominal_sites_m: [Point3; 3],
    /// `l2` or `chebyshev`.
    pub norm: String,
}

impl Default for SolveControlConfig {
    fn default() -> Self {
        Self {
            families: ["eps_x", "eps_y", "eps_z", "kappa_tune", "kappa_rot", "kappa_rot2"].map(String::from).to_vec(),
            sites_m: None,
            nominal_sites_m: fixtures::triangular_sites(),
            norm: "l2".into(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// `detuning` or `rotation`.
    pub kind: String,
    pub u_min_v: f64,
    pub u_max_v: f64,
    pub points: usize,
    pub mode_frequency_hz: f64,
    pub curvature_per_volt_m2: f64,
    /// Initial curvature for `rotation`, V/m².
    pub phi_ini_v_m2: [[f64; 3]; 3],
    /// Rotation family curvature, m⁻² per volt; defaults to `kappa_rot`.
    pub kappa_rot_m2: Option<[[f64; 3]; 3]>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            kind: "detuning".into(),
            u_min_v: -0.4,
            u_max_v: 0.4,
            points: 81,
            mode_frequency_hz: 2.6e6,
            curvature_per_volt_m2: 1.164e7,
            phi_ini_v_m2: [[3.4e7, 0.0, 0.0], [0.0, 1.5e7, 0.0], [0.0, 0.0, 1.9e7]],
            kappa_rot_m2: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RfoptConfig {
    pub nx: usize,
    pub ny: usize,
    pub pitch_m: f64,
    pub sites_m: Vec<Point3>,
    pub threshold: f64,
    pub align_jacobian: bool,
}

impl Default for RfoptConfig {
    fn default() -> Self {
        Self {
            nx: 32,
            ny: 32,
            pitch_m: 6e-6,
            sites_m: fixtures::triangular_sites().to_vec(),
            threshold: 0.5,
            align_jacobian: true,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    pub transition: String,
    pub t_max_s: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlopConfig {
    pub mode_frequencies_hz: [f64; 2],
    pub wavelength_m: f64,
    /// Overrides the crossed-beam Lamb-Dicke parameters.
    pub eta_full: Option<[f64; 2]>,
    pub rabi0_rad_s: f64,
    pub phi_deg: f64,
    pub nbar: [f64; 2],
    pub p_down_initial: f64,
    pub shots: u32,
    pub schedule: Vec<ScheduleEntry>,
}

impl Default for FlopConfig {
    fn default() -> Self {
        let entry = |t: &str, t_max_s: f64| ScheduleEntry { transition: t.into(), t_max_s, points: 50 };
        Self {
            mode_frequencies_hz: [5.3e6, 4.1e6],
            wavelength_m: 280e-9,
            eta_full: None,
            rabi0_rad_s: TWO_PI * 50e3,
            phi_deg: 24.7,
            nbar: [0.3, 0.3],
            p_down_initial: 0.0,
            shots: 250,
            schedule: vec![
                entry("carrier", 100e-6),
                entry("bsb0", 400e-6),
                entry("bsb1", 400e-6),
                entry("rsb0", 400e-6),
                entry("rsb1", 400e-6),
            ],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitFlopConfig {
    /// CSV with `transition,time_s,p_down,shots` columns, as written by
    /// `simulate flop`.
    pub data: Option<PathBuf>,
    pub initial_rabi0_rad_s: f64,
    pub initial_phi_deg: f64,
    pub initial_nbar: [f64; 2],
}

impl Default for FitFlopConfig {
    fn default() -> Self {
        Self { data: None, initial_rabi0_rad_s: TWO_PI * 45e3, initial_phi_deg: 45.0, initial_nbar: [0.2, 0.2] }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThermometryConfig {
    /// Occupations of mode 0; mode 1 keeps `flop.nbar[1]`.
    pub nbar: Vec<f64>,
    /// Sideband pulse length for the BSB/RSB comparison.
    pub pulse_time_s: f64,
}

impl Default for ThermometryConfig {
    fn default() -> Self {
        Self { nbar: vec![0.05, 0.3, 0.6], pulse_time_s: 60e-6 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatingConfig {
    pub rates_quanta_per_s: Vec<f64>,
    pub nbar0: f64,
    pub t_max_s: f64,
    pub points: usize,
}

impl Default for HeatingConfig {
    fn default() -> Self {
        Self { rates_quanta_per_s: vec![0.9e3, 2.2e3, 4.0e3], nbar0: 0.0, t_max_s: 1e-3, points: 11 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TickleConfig {
    pub field_v_m: f64,
    pub mode_frequency_hz: f64,
    pub duration_s: f64,
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    pub points: usize,
}

impl Default for TickleConfig {
    fn default() -> Self {
        Self {
            field_v_m: 0.01,
            mode_frequency_hz: 2.6e6,
            duration_s: 1e-3,
            f_min_hz: 2.59e6,
            f_max_hz: 2.61e6,
            points: 201,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExchangeConfig {
    pub distances_m: Vec<f64>,
    pub mode_frequencies_hz: Vec<f64>,
}

impl Default for ExchangeConfig {
    fn default() -> Self {
        Self { distances_m: vec![20e-6, 40e-6, 80e-6], mode_frequencies_hz: vec![1e6, 2e6, 4e6] }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MicromotionConfig {
    /// Axis-aligned mode frequencies (x, y, z).
    pub mode_frequencies_hz: [f64; 3],
    pub stray_fields_v_m: Vec<Point3>,
    pub wavelength_m: f64,
    pub delta_k_direction: Point3,
}

impl Default for MicromotionConfig {
    fn default() -> Self {
        Self {
            mode_frequencies_hz: [5.4e6, 2.4e6, 4.1e6],
            stray_fields_v_m: vec![[0.0, 0.0, 300.0], [0.0, 0.0, 900.0], [100.0, 0.0, 900.0]],
            wavelength_m: 280e-9,
            delta_k_direction: [1.0, 0.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionConfig {
    pub bright_mean: f64,
    pub dark_mean: f64,
    pub duration_s: f64,
    /// Counts at or above this are bright; defaults to the optimum.
    pub threshold: Option<u32>,
    pub p_down: Vec<f64>,
    pub shots: u64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            bright_mean: 12.0,
            dark_mean: 0.8,
            duration_s: 150e-6,
            threshold: None,
            p_down: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            shots: 10_000,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RampConfig {
    pub u_start_v: f64,
    pub u_stop_v: f64,
    pub durations_s: Vec<f64>,
    pub update_rate_hz: f64,
    pub shape: String,
    pub mode_frequency_hz: f64,
    pub curvature_per_volt_m2: f64,
}

impl Default for RampConfig {
    fn default() -> Self {
        Self {
            u_start_v: 0.0,
            u_stop_v: 2.3,
            durations_s: vec![7.5e-6, 15e-6, 30e-6, 60e-6, 120e-6],
            update_rate_hz: 50e6,
            shape: "smoothstep".into(),
            mode_frequency_hz: 2.6e6,
            curvature_per_volt_m2: 1.164e7,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToneConfig {
    pub channel: usize,
    pub frequency_hz: f64,
    pub amplitude_v: f64,
    pub start_s: f64,
    pub stop_s: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveformConfig {
    pub from_v: Vec<f64>,
    pub to_v: Vec<f64>,
    pub duration_s: f64,
    pub shape: String,
    pub update_rate_hz: f64,
    /// `binary` or `csv`.
    pub format: String,
    pub tone: Option<ToneConfig>,
}

impl Default for WaveformConfig {
    fn default() -> Self {
        Self {
            from_v: vec![0.0],
            to_v: vec![2.3],
            duration_s: 7.5e-6,
            shape: "smoothstep".into(),
            update_rate_hz: 50e6,
            format: "binary".into(),
            tone: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldSampleConfig {
    /// `rf`, `pseudo`, `total` or an electrode id.
    pub sources: Vec<String>,
    pub points_m: Vec<Point3>,
    /// Evenly spaced points from `line_from_m` to `line_to_m`.
    pub line_from_m: Option<Point3>,
    pub line_to_m: Option<Point3>,
    pub line_points: usize,
}

impl Default for FieldSampleConfig {
    fn default() -> Self {
        Self {
            sources: vec!["pseudo".into()],
            points_m: Vec::new(),
            line_from_m: Some([0.0, 0.0, 10e-6]),
            line_to_m: Some([0.0, 0.0, 120e-6]),
            line_points: 56,
        }
    }
}
