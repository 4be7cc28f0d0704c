mod control;
mod rfopt;
mod simulate;
mod trap;
mod waveform;

use std::path::{Path, PathBuf};

use ionarray::layout::ElectrodeLayout;
use ionarray::trap::{IonSpecies, RfDrive, SearchRegion, TrapModel};
use nalgebra::Vector3;

use crate::config::{RunConfig, DEFAULT_SEED};
use crate::error::CliError;
use crate::output::OutDir;

pub use control::{solve_control, sweep};
pub use rfopt::rfopt;
pub use simulate::{
    fit_flop, simulate_detection, simulate_exchange, simulate_flop, simulate_heating, simulate_micromotion,
    simulate_ramp, simulate_thermometry, simulate_tickle,
};
pub use trap::{field_sample, modes, sites};
pub use waveform::waveform;

pub struct Context {
    pub cfg: RunConfig,
    layout_path: Option<PathBuf>,
    pub out: OutDir,
    pub seed: u64,
}

impl Context {
    pub fn new(cfg: RunConfig, layout: Option<PathBuf>, out: &Path, seed: Option<u64>) -> Result<Self, CliError> {
        let layout_path = layout.or_else(|| cfg.layout.as_ref().map(|p| cfg.resolve(p)));
        let seed = seed.or(cfg.seed).unwrap_or(DEFAULT_SEED);
        Ok(Self { out: OutDir::create(out)?, cfg, layout_path, seed })
    }

    pub fn layout(&self) -> Result<ElectrodeLayout, CliError> {
        let path = self
            .layout_path
            .as_ref()
            .ok_or_else(|| CliError::Config("no layout given (use --layout or the config's `layout`)".into()))?;
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read layout {}: {e}", path.display())))?;
        ElectrodeLayout::parse(&text).map_err(|e| CliError::Config(format!("layout {}: {e}", path.display())))
    }

    pub fn species(&self) -> Result<IonSpecies, CliError> {
        let s = &self.cfg.species;
        IonSpecies::new(s.charge_c, s.mass_kg, s.label.clone()).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn drive(&self) -> Result<RfDrive, CliError> {
        let d = &self.cfg.drive;
        RfDrive::new(d.omega_rf_rad_s, d.u_rf_v).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn region(&self) -> Result<SearchRegion, CliError> {
        let s = &self.cfg.search;
        SearchRegion::new(v3(s.lower_m), v3(s.upper_m), s.starts).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Trap model of the layout with the configured static control voltages.
    pub fn model(&self) -> Result<TrapModel, CliError> {
        let model = TrapModel::new(&self.layout()?, self.drive()?, self.species()?)?;
        match &self.cfg.control_voltages_v {
            Some(v) => model.with_control_voltages(v.clone()).map_err(|e| CliError::Config(e.to_string())),
            None => Ok(model),
        }
    }
}

pub fn v3(p: [f64; 3]) -> Vector3<f64> {
    Vector3::new(p[0], p[1], p[2])
}

pub fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

/// `n` evenly spaced values from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n).map(|k| if k + 1 == n { b } else { a + (b - a) * k as f64 / (n - 1) as f64 }).collect(),
    }
}
