//! Physical constants (CODATA 2018, SI).

pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;
pub const HBAR: f64 = 1.054_571_817e-34;
pub const VACUUM_PERMITTIVITY: f64 = 8.854_187_812_8e-12;

pub const TWO_PI: f64 = 2.0 * std::f64::consts::PI;
