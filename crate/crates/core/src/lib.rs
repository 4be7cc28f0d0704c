//! Design and analysis toolkit for two-dimensional surface-electrode ion-trap
//! arrays.
//!
//! The crate is organised bottom-up:
//!
//! * [`layout`]: planar electrode geometries, validation, rotation and the
//!   JSON layout document.
//! * [`fields`]: gapless-plane basis potentials (solid angle of each
//!   electrode) with analytic gradients, Hessians and third derivatives.
//! * [`trap`]: RF pseudopotential, stationary-point search and normal modes.
//! * [`control`]: minimum-norm control-voltage synthesis, the named
//!   potential families and the detuning/rotation predictors.
//! * [`rfshape`]: linear-programming design of pixelated RF electrodes and
//!   polygon extraction.
//! * [`dynamics`]: forward models of the spectroscopy and calibration
//!   experiments (flopping, thermometry, heating, tickle, micromotion,
//!   detection, adiabatic ramps) plus flop fitting.
//! * [`waveform`]: multi-channel AWG sample streams and their file format.

// `!(x > 0.0)` deliberately also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod consts;
pub mod control;
pub mod dynamics;
pub mod fields;
pub mod fixtures;
pub mod geometry;
pub mod layout;
pub mod lp;
pub mod rfshape;
pub mod trap;
pub mod waveform;

pub use fields::{BasisPotential, BasisSet, FieldSample, Order};
pub use layout::{Electrode, ElectrodeLayout, Role};
pub use trap::{IonSpecies, ModeStructure, RfDrive, TrapModel, TrapSite};
