//! RF pseudopotential, stationary-point search and normal-mode analysis.

use std::cmp::Ordering;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::consts::{ATOMIC_MASS_UNIT, ELEMENTARY_CHARGE, TWO_PI};
use crate::fields::{check_above, BasisPotential, BasisSet, FieldError, FieldSample, Order};
use crate::layout::ElectrodeLayout;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrapError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("invalid ion species: charge and mass must be positive")]
    InvalidSpecies,
    #[error("invalid RF drive: angular frequency must be positive")]
    InvalidDrive,
    #[error("search region is empty or reaches below the electrode plane")]
    InvalidRegion,
    #[error("no stationary point found in the search region")]
    NoStationaryPoint,
    #[error("curvature matrix is not symmetric")]
    Asymmetric,
    #[error("curvature eigenvalue {kappa:e} V/m^2 along mode {index} is not positive")]
    NonPositiveCurvature { index: usize, kappa: f64 },
    #[error("control voltage vector has length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct IonSpecies {
    /// Coulombs.
    pub charge: f64,
    /// Kilograms.
    pub mass: f64,
    pub label: String,
}

impl IonSpecies {
    pub fn new(charge: f64, mass: f64, label: impl Into<String>) -> Result<Self, TrapError> {
        if !(charge > 0.0 && mass > 0.0 && charge.is_finite() && mass.is_finite()) {
            return Err(TrapError::InvalidSpecies);
        }
        Ok(Self { charge, mass, label: label.into() })
    }

    /// Singly charged ²⁵Mg.
    pub fn mg25() -> Self {
        Self { charge: ELEMENTARY_CHARGE, mass: 25.0 * ATOMIC_MASS_UNIT, label: "25Mg+".into() }
    }

    pub fn charge_to_mass(&self) -> f64 {
        self.charge / self.mass
    }
}

impl Default for IonSpecies {
    fn default() -> Self {
        Self::mg25()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RfDrive {
    /// Angular frequency, rad/s.
    pub omega_rf: f64,
    /// Peak voltage, V.
    pub u_rf: f64,
}

impl RfDrive {
    pub fn new(omega_rf: f64, u_rf: f64) -> Result<Self, TrapError> {
        if !(omega_rf > 0.0 && omega_rf.is_finite() && u_rf.is_finite()) {
            return Err(TrapError::InvalidDrive);
        }
        Ok(Self { omega_rf, u_rf })
    }
}

impl Default for RfDrive {
    fn default() -> Self {
        Self { omega_rf: TWO_PI * 48.3e6, u_rf: 20.0 }
    }
}

/// `Q / (4 m Ω²) · U²`, the factor converting `|∇φ̂_RF|²` to volts.
pub fn pseudopotential_scale(drive: &RfDrive, species: &IonSpecies) -> f64 {
    species.charge_to_mass() / (4.0 * drive.omega_rf * drive.omega_rf) * drive.u_rf * drive.u_rf
}

/// Pseudopotential (energy divided by charge, volts) of the RF electrode.
pub fn pseudopotential(
    rf: &BasisPotential,
    drive: &RfDrive,
    species: &IonSpecies,
    r: &Vector3<f64>,
    order: Order,
) -> Result<FieldSample, TrapError> {
    check_above(r)?;
    let s = pseudopotential_scale(drive, species);
    if order == Order::Value {
        let g = rf.gradient(r);
        return Ok(FieldSample { value: s * g.norm_squared(), ..FieldSample::zero() });
    }
    let (g, h, t) = rf.derivatives(r);
    let gradient = 2.0 * s * (h * g);
    let hessian = if order == Order::Hessian {
        2.0 * s * (h * h + t[0] * g[0] + t[1] * g[1] + t[2] * g[2])
    } else {
        Matrix3::zeros()
    };
    Ok(FieldSample { value: s * g.norm_squared(), gradient, hessian })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SiteKind {
    Minimum,
    Saddle,
    Maximum,
    /// At least one curvature eigenvalue is numerically zero.
    Degenerate,
}

impl SiteKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SiteKind::Minimum => "MINIMUM",
            SiteKind::Saddle => "SADDLE",
            SiteKind::Maximum => "MAXIMUM",
            SiteKind::Degenerate => "DEGENERATE",
        }
    }

    /// Classify by eigenvalue signs; `|κ| < 1e-9 ‖H‖` counts as zero.
    pub fn classify(curvature: &Matrix3<f64>) -> SiteKind {
        let scale = curvature.norm();
        let eig = SymmetricEigen::new(*curvature).eigenvalues;
        if scale == 0.0 || eig.iter().any(|k| k.abs() < 1e-9 * scale) {
            return SiteKind::Degenerate;
        }
        match eig.iter().filter(|k| **k < 0.0).count() {
            0 => SiteKind::Minimum,
            3 => SiteKind::Maximum,
            _ => SiteKind::Saddle,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrapSite {
    /// Meters.
    pub position: Vector3<f64>,
    /// Total potential, V.
    pub potential: f64,
    /// V/m.
    pub gradient: Vector3<f64>,
    /// V/m².
    pub curvature: Matrix3<f64>,
    pub kind: SiteKind,
}

impl TrapSite {
    pub fn modes(&self, species: &IonSpecies) -> Result<ModeStructure, TrapError> {
        mode_analysis(&self.curvature, species)
    }
}

/// Normal modes of a curvature matrix.
///
/// `vectors[j]` is the unit vector of mode `j`; labels 0, 1, 2 correspond to
/// the modes closest to x, y and z respectively. Frequencies are in rad/s;
/// a mode with non-positive curvature has frequency `NaN`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeStructure {
    pub frequencies: [f64; 3],
    pub vectors: [Vector3<f64>; 3],
    /// Curvature eigenvalues κ_j, V/m².
    pub curvatures: [f64; 3],
}

impl ModeStructure {
    pub fn is_stable(&self) -> bool {
        self.curvatures.iter().all(|k| *k > 0.0)
    }

    /// `Σ κ_j u_j u_jᵀ`.
    pub fn reconstruct(&self) -> Matrix3<f64> {
        (0..3).map(|j| self.vectors[j] * self.vectors[j].transpose() * self.curvatures[j]).sum()
    }

    pub fn frequencies_hz(&self) -> [f64; 3] {
        self.frequencies.map(|w| w / TWO_PI)
    }
}

fn frequency(kappa: f64, species: &IonSpecies) -> f64 {
    if kappa > 0.0 {
        (species.charge_to_mass() * kappa).sqrt()
    } else {
        f64::NAN
    }
}

/// Orthonormal eigenvectors with degenerate eigenspaces resolved onto the
/// coordinate axes, so the result is deterministic.
fn eigen_resolved(curvature: &Matrix3<f64>) -> ([f64; 3], [Vector3<f64>; 3]) {
    let eig = SymmetricEigen::new(*curvature);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = idx.map(|i| eig.eigenvalues[i]);
    let mut vecs = idx.map(|i| eig.eigenvectors.column(i).into_owned());
    let scale = curvature.norm().max(f64::MIN_POSITIVE);
    let tol = 1e-9 * scale;

    let mut start = 0;
    while start < 3 {
        let mut end = start + 1;
        while end < 3 && (vals[end - 1] - vals[end]).abs() <= tol {
            end += 1;
        }
        if end - start > 1 {
            let projector: Matrix3<f64> = (start..end).map(|j| vecs[j] * vecs[j].transpose()).sum();
            let mut axes: Vec<Vector3<f64>> = (0..3).map(|k| projector.column(k).into_owned()).collect();
            // Stable sort keeps axis order among equal projections.
            axes.sort_by(|a, b| b.norm().partial_cmp(&a.norm()).unwrap_or(Ordering::Equal));
            let mut basis: Vec<Vector3<f64>> = Vec::new();
            for a in axes {
                let mut v = a;
                for b in &basis {
                    v -= b * b.dot(&v);
                }
                if v.norm() > 1e-6 && basis.len() < end - start {
                    basis.push(v.normalize());
                }
            }
            for (j, v) in (start..end).zip(basis) {
                vecs[j] = v;
            }
        }
        start = end;
    }
    (vals, vecs)
}

fn orient_positive(v: Vector3<f64>) -> Vector3<f64> {
    let max = v.amax();
    let first = v.iter().find(|c| c.abs() >= max - 1e-12).copied().unwrap_or(0.0);
    if first < 0.0 {
        -v
    } else {
        v
    }
}

const PERMUTATIONS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

/// Eigenstructure of a symmetric curvature matrix without a stability
/// check. See [`mode_analysis`] for the labelling convention.
pub fn eigenmodes(curvature: &Matrix3<f64>, species: &IonSpecies) -> Result<ModeStructure, TrapError> {
    let asym = (curvature - curvature.transpose()).norm();
    if asym > 1e-12 * curvature.norm() || !curvature.iter().all(|x| x.is_finite()) {
        return Err(TrapError::Asymmetric);
    }
    let (vals, vecs) = eigen_resolved(curvature);
    // perm[label] = eigen index assigned to that axis label.
    let score = |p: &[usize; 3]| -> f64 { (0..3).map(|axis| vecs[p[axis]][axis].powi(2)).sum() };
    let best = PERMUTATIONS.iter().map(score).fold(f64::NEG_INFINITY, f64::max);
    let perm = PERMUTATIONS.iter().find(|p| score(p) >= best - 1e-12).copied().unwrap_or([0, 1, 2]);

    let u1 = orient_positive(vecs[perm[0]]);
    let u2 = orient_positive(vecs[perm[1]]);
    let u3 = u1.cross(&u2);
    let curvatures = perm.map(|i| vals[i]);
    Ok(ModeStructure { frequencies: curvatures.map(|k| frequency(k, species)), vectors: [u1, u2, u3], curvatures })
}

/// Normal modes `ω_j = sqrt((Q/m) κ_j)` of a curvature matrix at a minimum.
///
/// Modes are labelled by axis proximity: the assignment of eigenvectors to
/// x, y, z maximizing the summed squared overlaps. `u_1` and `u_2` have
/// their largest-magnitude component positive and `u_3 = u_1 × u_2`.
pub fn mode_analysis(curvature: &Matrix3<f64>, species: &IonSpecies) -> Result<ModeStructure, TrapError> {
    let modes = eigenmodes(curvature, species)?;
    if let Some(index) = (0..3).find(|&j| modes.curvatures[j] <= 0.0) {
        return Err(TrapError::NonPositiveCurvature { index, kappa: modes.curvatures[index] });
    }
    Ok(modes)
}

/// Continue mode labels from `previous` to a nearby curvature, matching
/// eigenvectors by overlap instead of axis proximity so labels do not swap
/// at frequency crossings.
pub fn track_modes(
    previous: &ModeStructure,
    curvature: &Matrix3<f64>,
    species: &IonSpecies,
) -> Result<ModeStructure, TrapError> {
    let fresh = eigenmodes(curvature, species)?;
    let score = |p: &[usize; 3]| -> f64 { (0..3).map(|l| fresh.vectors[p[l]].dot(&previous.vectors[l]).powi(2)).sum() };
    let best = PERMUTATIONS.iter().map(score).fold(f64::NEG_INFINITY, f64::max);
    let perm = PERMUTATIONS.iter().find(|p| score(p) >= best - 1e-12).copied().unwrap_or([0, 1, 2]);
    let align = |v: Vector3<f64>, prev: &Vector3<f64>| if v.dot(prev) < 0.0 { -v } else { v };
    let u1 = align(fresh.vectors[perm[0]], &previous.vectors[0]);
    let u2 = align(fresh.vectors[perm[1]], &previous.vectors[1]);
    let curvatures = perm.map(|i| fresh.curvatures[i]);
    Ok(ModeStructure {
        frequencies: curvatures.map(|k| frequency(k, species)),
        vectors: [u1, u2, u1.cross(&u2)],
        curvatures,
    })
}

/// Axis-aligned box of candidate positions with a grid of starting points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchRegion {
    pub lower: Vector3<f64>,
    pub upper: Vector3<f64>,
    /// Starting points per axis.
    pub starts: [usize; 3],
}

impl SearchRegion {
    pub fn new(lower: Vector3<f64>, upper: Vector3<f64>, starts: [usize; 3]) -> Result<Self, TrapError> {
        let ok = (0..3).all(|k| lower[k] < upper[k] && lower[k].is_finite() && upper[k].is_finite())
            && lower.z > 0.0
            && starts.iter().all(|&n| n > 0);
        if !ok {
            return Err(TrapError::InvalidRegion);
        }
        Ok(Self { lower, upper, starts })
    }

    pub fn contains(&self, r: &Vector3<f64>) -> bool {
        (0..3).all(|k| r[k] >= self.lower[k] && r[k] <= self.upper[k])
    }

    /// Cell-centered start grid.
    pub fn start_points(&self) -> Vec<Vector3<f64>> {
        let [nx, ny, nz] = self.starts;
        let coord = |k: usize, i: usize, n: usize| {
            self.lower[k] + (self.upper[k] - self.lower[k]) * (i as f64 + 0.5) / n as f64
        };
        let mut out = Vec::with_capacity(nx * ny * nz);
        for i in 0..nx {
            for j in 0..ny {
                for k in 0..nz {
                    out.push(Vector3::new(coord(0, i, nx), coord(1, j, ny), coord(2, k, nz)));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchOptions {
    /// Convergence threshold on |∇φ|, V/m.
    pub gradient_tol: f64,
    /// Polishing stops once the Newton step is shorter than this, m.
    pub step_tol: f64,
    pub max_iterations: usize,
    /// Longest single step, m.
    pub max_step: f64,
    /// Stationary points closer than this are merged, m.
    pub merge_distance: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self { gradient_tol: 1e-3, step_tol: 1e-13, max_iterations: 300, max_step: 5e-6, merge_distance: 1e-7 }
    }
}

/// Combined potential of the RF pseudopotential and static control
/// voltages.
#[derive(Debug, Clone)]
pub struct TrapModel {
    pub basis: BasisSet,
    pub drive: RfDrive,
    pub species: IonSpecies,
    control_voltages: Vec<f64>,
}

impl TrapModel {
    pub fn new(layout: &ElectrodeLayout, drive: RfDrive, species: IonSpecies) -> Result<Self, TrapError> {
        let basis = BasisSet::new(layout)?;
        basis.rf()?;
        let n = basis.control_count();
        Ok(Self { basis, drive, species, control_voltages: vec![0.0; n] })
    }

    /// Static control voltages (V, control index order).
    pub fn with_control_voltages(mut self, voltages: Vec<f64>) -> Result<Self, TrapError> {
        if voltages.len() != self.basis.control_count() {
            return Err(TrapError::DimensionMismatch { expected: self.basis.control_count(), got: voltages.len() });
        }
        self.control_voltages = voltages;
        Ok(self)
    }

    pub fn control_voltages(&self) -> &[f64] {
        &self.control_voltages
    }

    pub fn pseudopotential(&self, r: &Vector3<f64>, order: Order) -> Result<FieldSample, TrapError> {
        pseudopotential(self.basis.rf()?, &self.drive, &self.species, r, order)
    }

    /// Pseudopotential plus control potential, volts.
    pub fn potential(&self, r: &Vector3<f64>, order: Order) -> Result<FieldSample, TrapError> {
        let mut total = self.pseudopotential(r, order)?;
        if self.control_voltages.iter().any(|v| *v != 0.0) {
            total.add_scaled(&self.basis.apply(&self.control_voltages, r, order)?, 1.0);
        }
        Ok(total)
    }

    pub fn site_at(&self, r: &Vector3<f64>) -> Result<TrapSite, TrapError> {
        let s = self.potential(r, Order::Hessian)?;
        Ok(TrapSite {
            position: *r,
            potential: s.value,
            gradient: s.gradient,
            curvature: s.hessian,
            kind: SiteKind::classify(&s.hessian),
        })
    }

    /// Levenberg–Marquardt on `∇φ = 0` followed by Newton polishing.
    /// Converges to minima and saddles alike.
    pub fn refine(&self, start: &Vector3<f64>, region: &SearchRegion, opts: &SearchOptions) -> Option<Vector3<f64>> {
        let eval = |r: &Vector3<f64>| -> Option<(Vector3<f64>, Matrix3<f64>)> {
            let s = self.potential(r, Order::Hessian).ok()?;
            Some((s.gradient, s.hessian))
        };
        let z_floor = 0.5 * region.lower.z;
        let mut r = *start;
        let (mut g, mut h) = eval(&r)?;
        let mut mu = 1e-3 * (h.transpose() * h).diagonal().max();
        let mut converged = false;
        for _ in 0..opts.max_iterations {
            if g.norm() < opts.gradient_tol {
                converged = true;
                break;
            }
            let jtj = h.transpose() * h;
            let rhs = -(h.transpose() * g);
            let Some(mut step) = (jtj + Matrix3::identity() * mu).cholesky().map(|c| c.solve(&rhs)) else {
                mu = mu.max(f64::MIN_POSITIVE) * 10.0;
                continue;
            };
            let len = step.norm();
            if len > opts.max_step {
                step *= opts.max_step / len;
            }
            let mut trial = r + step;
            if trial.z < z_floor {
                trial.z = 0.5 * (r.z + z_floor);
            }
            match eval(&trial) {
                Some((gt, ht)) if gt.norm() < g.norm() => {
                    r = trial;
                    g = gt;
                    h = ht;
                    mu /= 3.0;
                }
                _ => {
                    mu = mu.max(1e-30 * jtj.norm()) * 4.0;
                    if !mu.is_finite() || mu > 1e12 * jtj.norm() {
                        return None;
                    }
                }
            }
            if !region_margin(region).contains(&r) {
                return None;
            }
        }
        if !converged {
            return None;
        }
        for _ in 0..20 {
            let Some(step) = h.try_inverse().map(|inv| -(inv * g)) else { break };
            let trial = r + step;
            let Some((gt, ht)) = eval(&trial) else { break };
            if gt.norm() > g.norm() * 1.5 + opts.gradient_tol * 1e-6 {
                break;
            }
            r = trial;
            g = gt;
            h = ht;
            if step.norm() < opts.step_tol {
                break;
            }
        }
        (region.contains(&r) && g.norm() < opts.gradient_tol).then_some(r)
    }

    /// All stationary points of the combined potential reachable from the
    /// region's start grid, merged and sorted by kind, then position.
    pub fn find_sites(&self, region: &SearchRegion, opts: &SearchOptions) -> Result<Vec<TrapSite>, TrapError> {
        if region.lower.z <= 0.0 {
            return Err(TrapError::InvalidRegion);
        }
        let found: Vec<Option<Vector3<f64>>> =
            region.start_points().par_iter().map(|s| self.refine(s, region, opts)).collect();
        let mut unique: Vec<Vector3<f64>> = Vec::new();
        for r in found.into_iter().flatten() {
            if !unique.iter().any(|u| (u - r).norm() < opts.merge_distance) {
                unique.push(r);
            }
        }
        if unique.is_empty() {
            return Err(TrapError::NoStationaryPoint);
        }
        let mut sites = unique.iter().map(|r| self.site_at(r)).collect::<Result<Vec<_>, _>>()?;
        sites.sort_by(|a, b| a.kind.cmp(&b.kind).then_with(|| position_order(&a.position, &b.position)));
        Ok(sites)
    }

    pub fn minima(&self, region: &SearchRegion, opts: &SearchOptions) -> Result<Vec<TrapSite>, TrapError> {
        Ok(self.find_sites(region, opts)?.into_iter().filter(|s| s.kind == SiteKind::Minimum).collect())
    }
}

fn region_margin(region: &SearchRegion) -> SearchRegion {
    let span = region.upper - region.lower;
    let lower = region.lower - span * 0.25;
    SearchRegion {
        lower: Vector3::new(lower.x, lower.y, 0.5 * region.lower.z),
        upper: region.upper + span * 0.25,
        starts: region.starts,
    }
}

/// Lexicographic in (x, y, z) with a 1 nm tie tolerance.
pub fn position_order(a: &Vector3<f64>, b: &Vector3<f64>) -> Ordering {
    for k in 0..3 {
        if (a[k] - b[k]).abs() > 1e-9 {
            return a[k].total_cmp(&b[k]);
        }
    }
    Ordering::Equal
}
