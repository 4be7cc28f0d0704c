//! Forward models of the single-ion calibration experiments.
//!
//! Spin convention: `|↓⟩` is the bright state. A blue sideband couples
//! `|↑, n⟩ ↔ |↓, n+1⟩` (adds a quantum when flipping up to down), a red
//! sideband `|↑, n⟩ ↔ |↓, n−1⟩`. Rabi frequencies are angular and a resonant
//! pulse flips with probability `sin²(Ωt/2)`. Each transition is treated in
//! the resolved-sideband rotating-wave approximation.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use rayon::prelude::*;
use thiserror::Error;

use crate::consts::{HBAR, TWO_PI, VACUUM_PERMITTIVITY};
use crate::trap::{IonSpecies, ModeStructure, RfDrive};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("mode vector has zero length")]
    ZeroModeVector,
    #[error("unknown transition '{0}'")]
    UnknownTransition(String),
    #[error("Fock cutoff {cutoff} leaves tail mass {tail:e} (limit {limit:e})")]
    CutoffTooSmall { cutoff: usize, tail: f64, limit: f64 },
    #[error("fit did not converge after {0} iterations")]
    NonConvergence(usize),
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("sideband ratio {0} is unphysical for a thermal state (need 0 ≤ r < 1)")]
    Unphysical(f64),
    #[error("curvature tensor is singular or not positive definite")]
    SingularCurvature,
    #[error("ω² = {omega_sq:e} rad²/s² ≤ 0 at sample {index}")]
    Unstable { index: usize, omega_sq: f64 },
}

/// Largest truncated population accepted by the flop model.
pub const TAIL_LIMIT: f64 = 1e-6;
/// Smallest Fock cutoff used for thermal states.
pub const MIN_FOCK_CUTOFF: usize = 20;
/// Amplitude a motional excitation must exceed to be detected, m.
pub const TICKLE_DETECTION_THRESHOLD: f64 = 100e-9;
/// Adiabaticity parameter at or above which a ramp is flagged.
pub const ADIABATICITY_LIMIT: f64 = 0.01;

fn require(ok: bool, what: impl FnOnce() -> String) -> Result<(), DynamicsError> {
    if ok {
        Ok(())
    } else {
        Err(DynamicsError::InvalidParameter(what()))
    }
}

// ---------------------------------------------------------------------------
// Raman coupling geometry

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RamanGeometry {
    /// Effective two-photon wave vector, m⁻¹.
    pub delta_k: Vector3<f64>,
    /// Laser wavelength, m.
    pub wavelength: f64,
}

impl RamanGeometry {
    pub fn new(delta_k: Vector3<f64>, wavelength: f64) -> Result<Self, DynamicsError> {
        require(delta_k.norm() > 0.0 && delta_k.iter().all(|v| v.is_finite()), || "|Δk| must be positive".into())?;
        require(wavelength > 0.0 && wavelength.is_finite(), || "wavelength must be positive".into())?;
        Ok(Self { delta_k, wavelength })
    }

    /// Two beams of wavelength `wavelength` crossing at 90°, so that
    /// `|Δk| = √2·2π/λ`, with `Δk` along `direction`.
    pub fn crossed_beams(wavelength: f64, direction: Vector3<f64>) -> Result<Self, DynamicsError> {
        require(wavelength > 0.0 && wavelength.is_finite(), || "wavelength must be positive".into())?;
        let n = direction.norm();
        require(n > 0.0 && n.is_finite(), || "Δk direction must be nonzero".into())?;
        let k = std::f64::consts::SQRT_2 * TWO_PI / wavelength;
        Self::new(direction / n * k, wavelength)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambDicke {
    /// `η ≥ 0`.
    pub eta: f64,
    /// Angle between `Δk` and the mode axis, folded into [0°, 90°].
    pub angle_deg: f64,
}

/// Lamb-Dicke parameter at full projection, `|Δk|·√(ħ/2mω)`.
pub fn lamb_dicke_full(delta_k: f64, omega: f64, species: &IonSpecies) -> f64 {
    delta_k * (HBAR / (2.0 * species.mass * omega)).sqrt()
}

pub fn lamb_dicke(
    geometry: &RamanGeometry,
    omega: f64,
    mode_vector: &Vector3<f64>,
    species: &IonSpecies,
) -> Result<LambDicke, DynamicsError> {
    require(omega > 0.0 && omega.is_finite(), || format!("mode frequency {omega} must be positive"))?;
    let un = mode_vector.norm();
    if !(un > 0.0) {
        return Err(DynamicsError::ZeroModeVector);
    }
    let k = geometry.delta_k.norm();
    let cos = (geometry.delta_k.dot(mode_vector) / (k * un)).abs().min(1.0);
    Ok(LambDicke { eta: lamb_dicke_full(k, omega, species) * cos, angle_deg: cos.acos().to_degrees() })
}

// ---------------------------------------------------------------------------
// Motional and spin states

#[derive(Debug, Clone, PartialEq)]
pub struct ThermalMode {
    /// Mode angular frequency, rad/s.
    pub omega: f64,
    pub nbar: f64,
    /// Fock populations `p_0 .. p_{cutoff-1}`, renormalized.
    populations: Vec<f64>,
    /// Population discarded by the cutoff before renormalization.
    tail: f64,
}

impl ThermalMode {
    /// Thermal distribution `p_n = n̄ⁿ/(1+n̄)ⁿ⁺¹`, cut at the smallest `N ≥ 20`
    /// whose tail `(n̄/(1+n̄))^N` is below [`TAIL_LIMIT`].
    pub fn thermal(omega: f64, nbar: f64) -> Result<Self, DynamicsError> {
        require(nbar >= 0.0 && nbar.is_finite(), || format!("n̄ = {nbar} must be finite and ≥ 0"))?;
        let q = nbar / (1.0 + nbar);
        let mut cutoff = MIN_FOCK_CUTOFF;
        if q > 0.0 {
            let needed = (TAIL_LIMIT.ln() / q.ln()).floor() as usize + 1;
            cutoff = cutoff.max(needed);
        }
        while q.powi(cutoff as i32) >= TAIL_LIMIT {
            cutoff += 1;
        }
        let tail = q.powi(cutoff as i32);
        let mut p: Vec<f64> = (0..cutoff).map(|n| q.powi(n as i32) / (1.0 + nbar)).collect();
        let sum: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= sum);
        Ok(Self { omega, nbar, populations: p, tail })
    }

    /// Explicit Fock distribution. Populations are renormalized; their
    /// shortfall from 1 is recorded as the tail mass.
    pub fn fock(omega: f64, populations: Vec<f64>) -> Result<Self, DynamicsError> {
        require(!populations.is_empty(), || "empty Fock distribution".into())?;
        require(populations.iter().all(|p| *p >= 0.0 && p.is_finite()), || "Fock populations must be ≥ 0".into())?;
        let sum: f64 = populations.iter().sum();
        require(sum > 0.0 && sum <= 1.0 + 1e-9, || format!("Fock populations sum to {sum}"))?;
        let p: Vec<f64> = populations.iter().map(|v| v / sum).collect();
        let nbar = p.iter().enumerate().map(|(n, v)| n as f64 * v).sum();
        Ok(Self { omega, nbar, populations: p, tail: (1.0 - sum).max(0.0) })
    }

    pub fn populations(&self) -> &[f64] {
        &self.populations
    }

    pub fn cutoff(&self) -> usize {
        self.populations.len()
    }

    pub fn tail_mass(&self) -> f64 {
        self.tail
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpinMotionState {
    /// Population of `|↓⟩`; `|↑⟩` holds the rest.
    pub p_down: f64,
    pub modes: Vec<ThermalMode>,
}

impl SpinMotionState {
    pub fn new(p_down: f64, modes: Vec<ThermalMode>) -> Result<Self, DynamicsError> {
        require((0.0..=1.0).contains(&p_down), || format!("P(↓) = {p_down} outside [0, 1]"))?;
        Ok(Self { p_down, modes })
    }

    pub fn p_up(&self) -> f64 {
        1.0 - self.p_down
    }
}

// ---------------------------------------------------------------------------
// Rabi flopping

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Transition {
    Carrier,
    /// Blue sideband of mode `j`.
    Blue(usize),
    /// Red sideband of mode `j`.
    Red(usize),
}

impl fmt::Display for Transition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transition::Carrier => write!(f, "carrier"),
            Transition::Blue(j) => write!(f, "bsb{j}"),
            Transition::Red(j) => write!(f, "rsb{j}"),
        }
    }
}

impl FromStr for Transition {
    type Err = DynamicsError;

    /// `carrier`, `bsb<j>` or `rsb<j>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_lowercase();
        let unknown = || DynamicsError::UnknownTransition(s.to_string());
        if t == "carrier" {
            return Ok(Transition::Carrier);
        }
        let (kind, idx) = t.split_at(t.len().min(3));
        let j: usize = idx.parse().map_err(|_| unknown())?;
        match kind {
            "bsb" => Ok(Transition::Blue(j)),
            "rsb" => Ok(Transition::Red(j)),
            _ => Err(unknown()),
        }
    }
}

/// Generalized Laguerre polynomial `L_n^(α)(x)` by upward recurrence.
pub fn laguerre(n: usize, alpha: usize, x: f64) -> f64 {
    let a = alpha as f64;
    let mut prev = 1.0;
    if n == 0 {
        return prev;
    }
    let mut cur = 1.0 + a - x;
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0 + a - x) * cur - (kf + a) * prev) / (kf + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// `|⟨m| exp(iη(a + a†)) |n⟩|`.
pub fn displacement_element(eta: f64, n: usize, m: usize) -> f64 {
    let (lo, hi) = if n <= m { (n, m) } else { (m, n) };
    let s = hi - lo;
    let x = eta * eta;
    // √(lo!/hi!) as a running product.
    let mut ratio = 1.0;
    for k in lo + 1..=hi {
        ratio *= eta / (k as f64).sqrt();
    }
    ((-0.5 * x).exp() * ratio * laguerre(lo, s, x)).abs()
}

/// Fock configurations below this joint population are dropped; even the
/// full sum of dropped weight stays far below the model accuracy.
const NEGLIGIBLE_WEIGHT: f64 = 1e-16;

/// Flip channels of a transition: `P↓(t) = P↓(0) + Σ w·sin²(Ωt/2)` with
/// signed weights `w`.
struct FlopTable {
    p_down: f64,
    channels: Vec<(f64, f64)>,
}

impl FlopTable {
    fn build(state: &SpinMotionState, transition: Transition, rabi0: f64, etas: &[f64]) -> Result<Self, DynamicsError> {
        let nm = state.modes.len();
        if etas.len() != nm {
            return Err(DynamicsError::InvalidParameter(format!(
                "{} Lamb-Dicke parameters for {nm} modes",
                etas.len()
            )));
        }
        let target = match transition {
            Transition::Carrier => None,
            Transition::Blue(j) | Transition::Red(j) => {
                if j >= nm {
                    return Err(DynamicsError::UnknownTransition(format!("{transition} (only {nm} modes)")));
                }
                Some(j)
            }
        };
        for m in &state.modes {
            if m.tail > TAIL_LIMIT {
                return Err(DynamicsError::CutoffTooSmall { cutoff: m.cutoff(), tail: m.tail, limit: TAIL_LIMIT });
            }
        }
        require(etas.iter().all(|e| *e >= 0.0 && e.is_finite()), || "η must be ≥ 0".into())?;
        require(rabi0.is_finite(), || "Rabi frequency must be finite".into())?;
        // Per-mode factors: diagonal (Debye-Waller) and the two neighbours.
        let diag: Vec<Vec<f64>> = state
            .modes
            .iter()
            .zip(etas)
            .map(|(m, &eta)| (0..m.cutoff()).map(|n| displacement_element(eta, n, n)).collect())
            .collect();
        let mut channels = Vec::new();
        let mut idx = vec![0usize; nm];
        loop {
            let mut weight = 1.0;
            let mut spectator = rabi0;
            for k in 0..nm {
                weight *= state.modes[k].populations[idx[k]];
                if Some(k) != target {
                    spectator *= diag[k][idx[k]];
                }
            }
            if weight > NEGLIGIBLE_WEIGHT {
                let (from_up, from_down) = match (transition, target) {
                    (Transition::Carrier, _) => (spectator, spectator),
                    (Transition::Blue(_), Some(j)) => {
                        let n = idx[j];
                        let up = spectator * displacement_element(etas[j], n, n + 1);
                        let down = if n == 0 { 0.0 } else { spectator * displacement_element(etas[j], n, n - 1) };
                        (up, down)
                    }
                    (Transition::Red(_), Some(j)) => {
                        let n = idx[j];
                        let up = if n == 0 { 0.0 } else { spectator * displacement_element(etas[j], n, n - 1) };
                        let down = spectator * displacement_element(etas[j], n, n + 1);
                        (up, down)
                    }
                    _ => unreachable!(),
                };
                if state.p_up() > 0.0 && from_up != 0.0 {
                    channels.push((weight * state.p_up(), from_up));
                }
                if state.p_down > 0.0 && from_down != 0.0 {
                    channels.push((-weight * state.p_down, from_down));
                }
            }
            // Odometer over all Fock configurations.
            let mut k = 0;
            loop {
                if k == nm {
                    return Ok(Self { p_down: state.p_down, channels });
                }
                idx[k] += 1;
                if idx[k] < state.modes[k].cutoff() {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }

    fn eval(&self, t: f64) -> f64 {
        let mut p = self.p_down;
        for &(w, omega) in &self.channels {
            let s = (0.5 * omega * t).sin();
            p += w * s * s;
        }
        p.clamp(0.0, 1.0)
    }
}

/// Probability of `|↓⟩` after a pulse of duration `t` on `transition`.
pub fn flop_signal(
    state: &SpinMotionState,
    transition: Transition,
    rabi0: f64,
    etas: &[f64],
    t: f64,
) -> Result<f64, DynamicsError> {
    Ok(FlopTable::build(state, transition, rabi0, etas)?.eval(t))
}

/// [`flop_signal`] on a time grid.
pub fn flop_curve(
    state: &SpinMotionState,
    transition: Transition,
    rabi0: f64,
    etas: &[f64],
    times: &[f64],
) -> Result<Vec<f64>, DynamicsError> {
    let table = FlopTable::build(state, transition, rabi0, etas)?;
    Ok(times.iter().map(|&t| table.eval(t)).collect())
}

// ---------------------------------------------------------------------------
// Flop fitting

/// Two modes spanning a plane that contains `Δk`: mode 0 makes angle `φ`
/// with `Δk`, mode 1 makes `90° − φ`, so `η₀ = η₀,full·cos φ` and
/// `η₁ = η₁,full·sin φ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarFlopModel {
    pub eta_full: [f64; 2],
    pub mode_omegas: [f64; 2],
    /// Initial `P(↓)`; the experiment prepares `|↑⟩`.
    pub p_down_initial: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlopParameters {
    /// Bare carrier Rabi frequency, rad/s.
    pub rabi0: f64,
    /// Angle between `Δk` and mode 0, rad.
    pub phi: f64,
    pub nbar: [f64; 2],
}

impl PlanarFlopModel {
    pub fn etas(&self, phi: f64) -> [f64; 2] {
        [self.eta_full[0] * phi.cos().abs(), self.eta_full[1] * phi.sin().abs()]
    }

    pub fn state(&self, nbar: [f64; 2]) -> Result<SpinMotionState, DynamicsError> {
        SpinMotionState::new(
            self.p_down_initial,
            vec![
                ThermalMode::thermal(self.mode_omegas[0], nbar[0])?,
                ThermalMode::thermal(self.mode_omegas[1], nbar[1])?,
            ],
        )
    }

    pub fn curve(&self, p: &FlopParameters, transition: Transition, times: &[f64]) -> Result<Vec<f64>, DynamicsError> {
        flop_curve(&self.state(p.nbar)?, transition, p.rabi0, &self.etas(p.phi), times)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlopDataset {
    pub transition: Transition,
    pub times: Vec<f64>,
    /// Observed fraction of `|↓⟩`.
    pub p_down: Vec<f64>,
    /// Shots behind each point.
    pub shots: Vec<u32>,
}

/// Binomially sampled flop data.
pub fn simulate_flop_data<R: Rng + ?Sized>(
    model: &PlanarFlopModel,
    params: &FlopParameters,
    transition: Transition,
    times: &[f64],
    shots: u32,
    rng: &mut R,
) -> Result<FlopDataset, DynamicsError> {
    require(shots > 0, || "shots must be ≥ 1".into())?;
    let p = model.curve(params, transition, times)?;
    let observed = p
        .iter()
        .map(|&pi| {
            let k = Binomial::new(u64::from(shots), pi).expect("probability in [0, 1]").sample(rng);
            k as f64 / f64::from(shots)
        })
        .collect();
    Ok(FlopDataset { transition, times: times.to_vec(), p_down: observed, shots: vec![shots; times.len()] })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlopFit {
    pub params: FlopParameters,
    /// Asymptotic standard errors of `(Ω₀, φ, n̄₀, n̄₁)`.
    pub std_errors: [f64; 4],
    pub chi2: f64,
    pub dof: usize,
    pub iterations: usize,
}

impl FlopFit {
    pub fn phi_deg(&self) -> f64 {
        self.params.phi.to_degrees()
    }
}

/// Internal coordinates: `(Ω₀/Ω_scale, φ, √n̄₀, √n̄₁)`.
fn to_params(theta: &DVector<f64>, scale: f64) -> FlopParameters {
    FlopParameters { rabi0: theta[0] * scale, phi: theta[1], nbar: [theta[2] * theta[2], theta[3] * theta[3]] }
}

fn weighted_residuals(
    model: &PlanarFlopModel,
    data: &[FlopDataset],
    weights: &[Vec<f64>],
    p: &FlopParameters,
) -> Result<DVector<f64>, DynamicsError> {
    let mut out = Vec::new();
    for (d, w) in data.iter().zip(weights) {
        let curve = model.curve(p, d.transition, &d.times)?;
        out.extend(curve.iter().zip(&d.p_down).zip(w).map(|((m, o), w)| (m - o) * w));
    }
    Ok(DVector::from_vec(out))
}

/// Weighted least-squares fit of `(Ω₀, φ, n̄₀, n̄₁)` to carrier and sideband
/// flop data with a Levenberg-Marquardt loop and a central-difference
/// Jacobian. `initial` supplies the Rabi frequency scale and the starting
/// occupations; the angle is bracketed by a scan over `[0°, 90°]`, and the
/// best of the local fits is returned.
pub fn fit_flopping(
    model: &PlanarFlopModel,
    data: &[FlopDataset],
    initial: &FlopParameters,
) -> Result<FlopFit, DynamicsError> {
    let kinds: std::collections::HashSet<Transition> = data.iter().map(|d| d.transition).collect();
    if kinds.len() < 2 {
        return Err(DynamicsError::DegenerateData("need at least two distinct transitions".into()));
    }
    for d in data {
        if d.times.len() != d.p_down.len() || d.times.len() != d.shots.len() || d.times.is_empty() {
            return Err(DynamicsError::DegenerateData(format!("{}: inconsistent or empty series", d.transition)));
        }
    }
    let all: Vec<f64> = data.iter().flat_map(|d| d.p_down.iter().copied()).collect();
    let (lo, hi) = all.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi - lo < 1e-12 {
        return Err(DynamicsError::DegenerateData("flat signal".into()));
    }
    require(initial.rabi0 > 0.0, || "initial Rabi frequency must be positive".into())?;
    // Binomial weights with a pseudo-count so that 0 and 1 keep finite weight.
    let weights: Vec<Vec<f64>> = data
        .iter()
        .map(|d| {
            d.p_down
                .iter()
                .zip(&d.shots)
                .map(|(&p, &n)| {
                    let n = f64::from(n.max(1));
                    let pb = (p * n + 0.5) / (n + 1.0);
                    (n / (pb * (1.0 - pb))).sqrt()
                })
                .collect()
        })
        .collect();
    let n_points = all.len();
    let scale = initial.rabi0;
    // Coarse scan over (φ, Ω₀) at the initial occupations; local fits start
    // from the best scan points with distinct angles.
    let sq = [initial.nbar[0].max(0.0).sqrt(), initial.nbar[1].max(0.0).sqrt()];
    let mut scan = Vec::new();
    for i in 0..SCAN_ANGLES {
        let phi = (i as f64 + 0.5) * std::f64::consts::FRAC_PI_2 / SCAN_ANGLES as f64;
        for k in 0..SCAN_RABI {
            let f = 0.75 + 0.5 * k as f64 / (SCAN_RABI - 1) as f64;
            let theta = DVector::from_vec(vec![f, phi, sq[0], sq[1]]);
            let chi2 = weighted_residuals(model, data, &weights, &to_params(&theta, scale))?.norm_squared();
            scan.push((chi2, theta));
        }
    }
    scan.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut starts: Vec<DVector<f64>> = Vec::new();
    for (_, theta) in scan {
        if starts.iter().all(|s| (s[1] - theta[1]).abs() > 0.2) {
            starts.push(theta);
        }
        if starts.len() == LOCAL_FITS {
            break;
        }
    }
    let mut best: Option<FlopFit> = None;
    for theta0 in starts {
        let Ok(fit) = levenberg_marquardt(model, data, &weights, theta0, scale, n_points) else { continue };
        if best.as_ref().is_none_or(|b| fit.chi2 < b.chi2) {
            best = Some(fit);
        }
    }
    best.ok_or(DynamicsError::NonConvergence(MAX_FIT_ITERATIONS))
}

const MAX_FIT_ITERATIONS: usize = 200;
const SCAN_ANGLES: usize = 12;
const SCAN_RABI: usize = 11;
const LOCAL_FITS: usize = 2;

fn levenberg_marquardt(
    model: &PlanarFlopModel,
    data: &[FlopDataset],
    weights: &[Vec<f64>],
    mut theta: DVector<f64>,
    scale: f64,
    n_points: usize,
) -> Result<FlopFit, DynamicsError> {
    let np = theta.len();
    let residuals = |t: &DVector<f64>| weighted_residuals(model, data, weights, &to_params(t, scale));
    let mut r = residuals(&theta)?;
    let mut chi2 = r.norm_squared();
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    let mut jac = DMatrix::zeros(n_points, np);
    while iterations < MAX_FIT_ITERATIONS {
        iterations += 1;
        for k in 0..np {
            let h = 1e-6 * theta[k].abs().max(1e-2);
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[k] += h;
            tm[k] -= h;
            let d = (residuals(&tp)? - residuals(&tm)?) / (2.0 * h);
            jac.set_column(k, &d);
        }
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * &r;
        let mut improved = false;
        while lambda < 1e12 {
            let mut a = jtj.clone();
            for k in 0..np {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&(-&g))) else {
                lambda *= 10.0;
                continue;
            };
            let trial = &theta + &step;
            let rt = residuals(&trial)?;
            let c2 = rt.norm_squared();
            if c2 < chi2 {
                let small_step = step.norm() <= 1e-10 * (theta.norm() + 1e-10);
                let small_gain = chi2 - c2 <= 1e-12 * chi2;
                theta = trial;
                r = rt;
                chi2 = c2;
                lambda = (lambda * 0.3).max(1e-12);
                improved = true;
                converged = small_step || small_gain;
                break;
            }
            lambda *= 10.0;
        }
        if !improved || converged {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(DynamicsError::NonConvergence(iterations));
    }
    // Fold the angle into [0, π/2]; η depends on |cos φ| and |sin φ| only.
    let mut phi = theta[1].rem_euclid(std::f64::consts::PI);
    if phi > std::f64::consts::FRAC_PI_2 {
        phi = std::f64::consts::PI - phi;
    }
    theta[1] = phi;
    let params = to_params(&theta, scale);
    let dof = n_points.saturating_sub(np).max(1);
    let reduced = chi2 / dof as f64;
    let cov = (jac.transpose() * &jac).try_inverse().unwrap_or_else(|| DMatrix::from_element(np, np, f64::NAN));
    let sd = |k: usize| (cov[(k, k)] * reduced).max(0.0).sqrt();
    let std_errors = [sd(0) * scale, sd(1), 2.0 * theta[2].abs() * sd(2), 2.0 * theta[3].abs() * sd(3)];
    Ok(FlopFit { params, std_errors, chi2, dof, iterations })
}

// ---------------------------------------------------------------------------
// Thermometry and heating

/// `n̄ = r/(1 − r)` from the first-sideband excitation ratio `r = RSB/BSB`.
pub fn sideband_thermometry(r: f64) -> Result<f64, DynamicsError> {
    if !(0.0..1.0).contains(&r) {
        return Err(DynamicsError::Unphysical(r));
    }
    Ok(r / (1.0 - r))
}

/// Asymptotic first-sideband ratio of a thermal state, `n̄/(1 + n̄)`.
pub fn sideband_ratio(nbar: f64) -> f64 {
    nbar / (1.0 + nbar)
}

/// Linear heating, `n̄(t) = n̄₀ + rate·t` with the rate in quanta/s.
pub fn heating_evolution(nbar0: f64, rate: f64, t: f64) -> Result<f64, DynamicsError> {
    require(rate >= 0.0 && rate.is_finite(), || format!("heating rate {rate} must be ≥ 0"))?;
    require(nbar0 >= 0.0 && t >= 0.0, || "n̄₀ and t must be ≥ 0".into())?;
    Ok(nbar0 + rate * t)
}

/// Heated thermal mode at time `t`.
pub fn heated_mode(mode: &ThermalMode, rate: f64, t: f64) -> Result<ThermalMode, DynamicsError> {
    ThermalMode::thermal(mode.omega, heating_evolution(mode.nbar, rate, t)?)
}

/// Linear frequency drift bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyDrift {
    /// Hz per second.
    pub slope: f64,
}

impl FrequencyDrift {
    /// Shift after `elapsed` seconds, Hz.
    pub fn shift(&self, elapsed: f64) -> f64 {
        self.slope * elapsed
    }

    /// Drifted angular frequency.
    pub fn apply(&self, omega: f64, elapsed: f64) -> f64 {
        omega + TWO_PI * self.shift(elapsed)
    }
}

// ---------------------------------------------------------------------------
// Motional excitation

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TickleResponse {
    /// Oscillation amplitude at the end of the pulse, m.
    pub amplitude: f64,
    /// Undamped resonant limit `QEt/(2mω)`, m.
    pub resonant_limit: f64,
    /// Driven steady amplitude `(QE/m)/|ω² − ω_exc²|`, m (infinite on resonance).
    pub steady_state: f64,
    pub detectable: bool,
}

/// Response of a mode at rest to a uniform field `E cos(ω_exc t)` applied
/// for `t_exc`. Uses the exact solution of the driven oscillator written
/// with `sinc`, so it stays finite through resonance.
pub fn tickle_response(
    field_amp: f64,
    omega_exc: f64,
    t_exc: f64,
    omega_mode: f64,
    species: &IonSpecies,
) -> Result<TickleResponse, DynamicsError> {
    require(omega_mode > 0.0 && omega_mode.is_finite(), || "mode frequency must be positive".into())?;
    require(omega_exc >= 0.0 && t_exc >= 0.0, || "drive frequency and duration must be ≥ 0".into())?;
    let f = species.charge_to_mass() * field_amp.abs();
    let w = omega_mode;
    let sum = w + omega_exc;
    let diff = w - omega_exc;
    let sinc = |u: f64| if u.abs() < 1e-8 { 1.0 - u * u / 6.0 } else { u.sin() / u };
    let half = 0.5 * t_exc;
    let x = f * t_exc / sum * (sum * half).sin() * sinc(diff * half);
    let v = f * (half * (sum * half).cos() * sinc(diff * half) + (sum * half).sin() * (diff * half).cos() / sum);
    let amplitude = x.hypot(v / w);
    let detuning = (w * w - omega_exc * omega_exc).abs();
    Ok(TickleResponse {
        amplitude,
        resonant_limit: f * t_exc / (2.0 * w),
        steady_state: if detuning > 0.0 { f / detuning } else { f64::INFINITY },
        detectable: amplitude > TICKLE_DETECTION_THRESHOLD,
    })
}

/// Field that drives a resonant mode to `amplitude` in `t_exc`, V/m.
pub fn tickle_threshold_field(amplitude: f64, omega_mode: f64, t_exc: f64, species: &IonSpecies) -> f64 {
    2.0 * omega_mode * amplitude / (species.charge_to_mass() * t_exc)
}

// ---------------------------------------------------------------------------
// Coulomb exchange

/// `Ω_ex = Q²/(4πε₀·m·ω·d³)`, rad/s.
pub fn exchange_rate(d: f64, omega: f64, species: &IonSpecies) -> Result<f64, DynamicsError> {
    require(d > 0.0 && omega > 0.0, || "distance and frequency must be positive".into())?;
    let q = species.charge;
    Ok(q * q / (4.0 * std::f64::consts::PI * VACUUM_PERMITTIVITY * species.mass * omega * d.powi(3)))
}

// ---------------------------------------------------------------------------
// Micromotion

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Micromotion {
    /// Static displacement from the RF null, m.
    pub displacement: Vector3<f64>,
    /// Micromotion amplitude vector, m.
    pub amplitude: Vector3<f64>,
    /// `β = Δk · amplitude`.
    pub modulation_index: f64,
    /// `∂Δr_z/∂ln U_RF`, m.
    pub z_sensitivity: f64,
    /// Mathieu `q` per mode.
    pub mathieu_q: [f64; 3],
}

pub fn micromotion_analysis(
    stray_field: &Vector3<f64>,
    modes: &ModeStructure,
    drive: &RfDrive,
    geometry: &RamanGeometry,
) -> Result<Micromotion, DynamicsError> {
    if modes.curvatures.iter().any(|k| !(*k > 0.0)) {
        return Err(DynamicsError::SingularCurvature);
    }
    // κ⁻¹ from the eigenbasis; Δr = κ⁻¹E equals (Q/m)·K⁻¹·E with K = (Q/m)κ.
    let mut inverse = Matrix3::zeros();
    for k in 0..3 {
        inverse += modes.vectors[k] * modes.vectors[k].transpose() / modes.curvatures[k];
    }
    let displacement = inverse * stray_field;
    let mut amplitude = Vector3::zeros();
    let mut mathieu_q = [0.0; 3];
    for (k, mq) in mathieu_q.iter_mut().enumerate() {
        let q = 2.0 * std::f64::consts::SQRT_2 * modes.frequencies[k] / drive.omega_rf;
        *mq = q;
        amplitude += modes.vectors[k] * (0.5 * q * modes.vectors[k].dot(&displacement));
    }
    Ok(Micromotion {
        displacement,
        amplitude,
        modulation_index: geometry.delta_k.dot(&amplitude).abs(),
        z_sensitivity: -2.0 * displacement.z,
        mathieu_q,
    })
}

// ---------------------------------------------------------------------------
// Detection

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionModel {
    /// Mean counts for `|↓⟩`.
    pub bright_mean: f64,
    /// Mean counts for `|↑⟩`.
    pub dark_mean: f64,
    /// Detection window, s.
    pub duration: f64,
    /// Smallest count classified as `|↓⟩`.
    pub threshold: u32,
}

impl Default for DetectionModel {
    fn default() -> Self {
        Self { bright_mean: 12.0, dark_mean: 0.8, duration: 150e-6, threshold: optimal_threshold(12.0, 0.8) }
    }
}

/// `P(N ≤ k)` for `N ~ Poisson(mean)`.
pub fn poisson_cdf(k: i64, mean: f64) -> f64 {
    if k < 0 {
        return 0.0;
    }
    if mean == 0.0 {
        return 1.0;
    }
    let mut term = (-mean).exp();
    let mut sum = term;
    for i in 1..=k {
        term *= mean / i as f64;
        sum += term;
    }
    sum.min(1.0)
}

/// Threshold minimizing the equal-prior misclassification probability:
/// the first count at which the bright likelihood reaches the dark one.
pub fn optimal_threshold(bright_mean: f64, dark_mean: f64) -> u32 {
    if dark_mean <= 0.0 {
        return 1;
    }
    let k = (bright_mean - dark_mean) / (bright_mean / dark_mean).ln();
    k.ceil().max(1.0) as u32
}

impl DetectionModel {
    pub fn new(bright_mean: f64, dark_mean: f64, duration: f64, threshold: u32) -> Result<Self, DynamicsError> {
        require(dark_mean >= 0.0 && bright_mean > dark_mean && bright_mean.is_finite(), || {
            format!("need bright_mean > dark_mean ≥ 0, got {bright_mean} and {dark_mean}")
        })?;
        require(duration > 0.0, || "detection duration must be positive".into())?;
        Ok(Self { bright_mean, dark_mean, duration, threshold })
    }

    /// `P(classified ↓ | ↓)`.
    pub fn bright_fidelity(&self) -> f64 {
        1.0 - poisson_cdf(i64::from(self.threshold) - 1, self.bright_mean)
    }

    /// `P(classified ↓ | ↑)`.
    pub fn dark_error(&self) -> f64 {
        1.0 - poisson_cdf(i64::from(self.threshold) - 1, self.dark_mean)
    }

    /// Expected inferred `P(↓)` for a true `P(↓)`.
    pub fn expected_inferred(&self, p_down: f64) -> f64 {
        p_down * self.bright_fidelity() + (1.0 - p_down) * self.dark_error()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    /// `histogram[k]` = shots with `k` counts.
    pub histogram: Vec<u64>,
    pub shots: u64,
    pub bright_shots: u64,
    /// Fraction of shots classified `|↓⟩`.
    pub inferred_p_down: f64,
    pub mean_counts: f64,
}

const DETECTION_CHUNK: u64 = 4096;

/// Per-shot Poisson counts for a spin drawn from `p_down`. Shots are split
/// into fixed chunks, each with its own ChaCha stream, so the result depends
/// only on the seed.
pub fn simulate_detection(
    p_down: f64,
    model: &DetectionModel,
    shots: u64,
    seed: u64,
) -> Result<DetectionResult, DynamicsError> {
    require((0.0..=1.0).contains(&p_down), || format!("P(↓) = {p_down} outside [0, 1]"))?;
    require(shots >= 1, || "shots must be ≥ 1".into())?;
    let bright = (model.bright_mean > 0.0).then(|| Poisson::new(model.bright_mean).expect("positive mean"));
    let dark = (model.dark_mean > 0.0).then(|| Poisson::new(model.dark_mean).expect("positive mean"));
    let chunks = shots.div_ceil(DETECTION_CHUNK);
    let counts: Vec<Vec<u32>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c);
            let n = DETECTION_CHUNK.min(shots - c * DETECTION_CHUNK);
            (0..n)
                .map(|_| {
                    let is_down = rng.random::<f64>() < p_down;
                    let dist = if is_down { &bright } else { &dark };
                    dist.as_ref().map_or(0, |d| d.sample(&mut rng) as u32)
                })
                .collect()
        })
        .collect();
    let mut histogram = Vec::new();
    let (mut bright_shots, mut total) = (0u64, 0u64);
    for &k in counts.iter().flatten() {
        let k = k as usize;
        if histogram.len() <= k {
            histogram.resize(k + 1, 0);
        }
        histogram[k] += 1;
        total += k as u64;
        if k as u32 >= model.threshold {
            bright_shots += 1;
        }
    }
    Ok(DetectionResult {
        histogram,
        shots,
        bright_shots,
        inferred_p_down: bright_shots as f64 / shots as f64,
        mean_counts: total as f64 / shots as f64,
    })
}

// ---------------------------------------------------------------------------
// Adiabatic ramps

#[derive(Debug, Clone, PartialEq)]
pub struct RampCheck {
    /// Mode frequency per sample, rad/s.
    pub omega: Vec<f64>,
    /// `|dω/dt|/ω²` per sample.
    pub epsilon: Vec<f64>,
    pub max_epsilon: f64,
    pub adiabatic: bool,
}

/// Mode frequency along a sampled control amplitude `U(t)`, using
/// `ω² = ω₀² + (Q/m)·U·c`, and its adiabaticity `|dω/dt|/ω²` by finite
/// differences (central inside, one-sided at the ends).
pub fn ramp_check(
    samples: &[f64],
    update_rate: f64,
    curvature_per_volt: f64,
    omega0: f64,
    species: &IonSpecies,
) -> Result<RampCheck, DynamicsError> {
    require(update_rate > 0.0, || "update rate must be positive".into())?;
    let qm = species.charge_to_mass();
    let mut omega = Vec::with_capacity(samples.len());
    for (index, &u) in samples.iter().enumerate() {
        let omega_sq = omega0 * omega0 + qm * u * curvature_per_volt;
        if !(omega_sq > 0.0) {
            return Err(DynamicsError::Unstable { index, omega_sq });
        }
        omega.push(omega_sq.sqrt());
    }
    let n = omega.len();
    let dt = 1.0 / update_rate;
    let epsilon: Vec<f64> = (0..n)
        .map(|k| {
            let d = if n < 2 {
                0.0
            } else if k == 0 {
                (omega[1] - omega[0]) / dt
            } else if k == n - 1 {
                (omega[n - 1] - omega[n - 2]) / dt
            } else {
                (omega[k + 1] - omega[k - 1]) / (2.0 * dt)
            };
            d.abs() / (omega[k] * omega[k])
        })
        .collect();
    let max_epsilon = epsilon.iter().copied().fold(0.0, f64::max);
    Ok(RampCheck { omega, epsilon, max_epsilon, adiabatic: max_epsilon < ADIABATICITY_LIMIT })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consts::ATOMIC_MASS_UNIT;

    fn mg() -> IonSpecies {
        IonSpecies::mg25()
    }

    #[test]
    fn lamb_dicke_reference_value() {
        let g = RamanGeometry::crossed_beams(280e-9, Vector3::x()).unwrap();
        let omega = TWO_PI * 5.3e6;
        let ld = lamb_dicke(&g, omega, &Vector3::x(), &mg()).unwrap();
        // Independent scalar evaluation.
        let x0 = (1.054_571_817e-34 / (2.0 * 25.0 * ATOMIC_MASS_UNIT * omega)).sqrt();
        let mass_ratio = (mg().mass / (25.0 * ATOMIC_MASS_UNIT)).sqrt();
        let eta = 2f64.sqrt() * TWO_PI / 280e-9 * x0 / mass_ratio;
        assert!((ld.eta - eta).abs() < 1e-12 * eta);
        assert!((ld.eta - 0.20).abs() < 0.01, "{}", ld.eta);
        assert_eq!(ld.angle_deg, 0.0);
        let perp = lamb_dicke(&g, omega, &Vector3::y(), &mg()).unwrap();
        assert!(perp.eta.abs() < 1e-15 && (perp.angle_deg - 90.0).abs() < 1e-12);
        let doubled = lamb_dicke(&g, 2.0 * omega, &Vector3::x(), &mg()).unwrap();
        assert!((doubled.eta * 2f64.sqrt() - ld.eta).abs() < 1e-14);
        assert_eq!(lamb_dicke(&g, omega, &Vector3::zeros(), &mg()), Err(DynamicsError::ZeroModeVector));
    }

    #[test]
    fn thermal_cutoff_rule() {
        let m = ThermalMode::thermal(1.0, 0.0).unwrap();
        assert_eq!(m.cutoff(), MIN_FOCK_CUTOFF);
        assert_eq!(m.populations()[0], 1.0);
        let hot = ThermalMode::thermal(1.0, 5.0).unwrap();
        assert!(hot.tail_mass() < TAIL_LIMIT);
        let q: f64 = 5.0 / 6.0;
        assert!(q.powi(hot.cutoff() as i32 - 1) >= TAIL_LIMIT);
        assert!((hot.populations().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn laguerre_small_cases() {
        assert_eq!(laguerre(0, 3, 0.7), 1.0);
        assert!((laguerre(1, 2, 0.5) - 2.5).abs() < 1e-15);
        // L_2^(1)(x) = (x² − 6x + 6)/2.
        let x = 0.3;
        assert!((laguerre(2, 1, x) - 0.5 * (x * x - 6.0 * x + 6.0)).abs() < 1e-14);
    }

    #[test]
    fn ground_state_sidebands() {
        let state = SpinMotionState::new(0.0, vec![ThermalMode::thermal(1.0, 0.0).unwrap()]).unwrap();
        let eta = [0.1];
        for t in [0.0, 1e-6, 3.7e-5, 1e-3] {
            assert_eq!(flop_signal(&state, Transition::Red(0), 1e5, &eta, t).unwrap(), 0.0);
        }
        // Carrier π pulse at η = 0 flips completely.
        let p = flop_signal(&state, Transition::Carrier, 1e5, &[0.0], std::f64::consts::PI / 1e5).unwrap();
        assert!((p - 1.0).abs() < 1e-15);
        // Lamb-Dicke limit of the blue sideband.
        let omega = 1e5 * displacement_element(1e-3, 0, 1);
        assert!((omega / (1e5 * 1e-3) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn transition_names() {
        for t in [Transition::Carrier, Transition::Blue(1), Transition::Red(0)] {
            assert_eq!(t.to_string().parse::<Transition>().unwrap(), t);
        }
        assert!("bsbx".parse::<Transition>().is_err());
        assert!("wiggle".parse::<Transition>().is_err());
    }

    #[test]
    fn exchange_scaling() {
        let a = exchange_rate(40e-6, TWO_PI * 2e6, &mg()).unwrap();
        let b = exchange_rate(80e-6, TWO_PI * 2e6, &mg()).unwrap();
        let c = exchange_rate(40e-6, TWO_PI * 4e6, &mg()).unwrap();
        assert!((a / b - 8.0).abs() < 1e-12);
        assert!((a / c - 2.0).abs() < 1e-12);
    }

    #[test]
    fn drift_bookkeeping() {
        let d = FrequencyDrift { slope: -1.5 };
        assert!((d.shift(3600.0) + 5400.0).abs() < 1e-9);
        let w = TWO_PI * 2.6e6;
        assert!((d.apply(w, 10.0) - w - TWO_PI * -15.0).abs() < 1e-6);
    }

    #[test]
    fn optimal_threshold_for_default_means() {
        let m = DetectionModel::default();
        assert_eq!(m.threshold, 5);
        // Likelihood ordering around the threshold.
        let pmf = |k: i64, mu: f64| poisson_cdf(k, mu) - poisson_cdf(k - 1, mu);
        assert!(pmf(5, 12.0) > pmf(5, 0.8));
        assert!(pmf(4, 12.0) < pmf(4, 0.8));
    }
}
