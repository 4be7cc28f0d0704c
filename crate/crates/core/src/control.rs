//! Control-voltage synthesis and the detuning/rotation predictors.
//!
//! A control set is a voltage vector over the control electrodes, written
//! as a unit direction `v̂` times an amplitude `U_c`. The solver finds the
//! minimum-norm vector whose basis-potential gradients and curvatures hit
//! prescribed targets at a list of sites.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, SymmetricEigen, Vector3};
use thiserror::Error;

use crate::fields::{BasisSet, FieldError, Order};
use crate::lp::{LinearProgram, LpError};
use crate::trap::{eigenmodes, IonSpecies, ModeStructure, TrapError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Trap(#[from] TrapError),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error("{constraints} constraints exceed the {electrodes} control electrodes")]
    TooManyConstraints { constraints: usize, electrodes: usize },
    #[error("constraint system is rank deficient (rank {rank}); dependent rows: {rows:?}")]
    RankDeficient { rank: usize, rows: Vec<String> },
    #[error("unknown control family '{0}'")]
    UnknownFamily(String),
    #[error("curvature target is not traceless symmetric")]
    NotTraceless,
    #[error("mode frequency would become imaginary (ω² = {0:e} rad²/s²)")]
    Unstable(f64),
    #[error("in-plane curvature eigenvalues are degenerate; rotation angle undefined")]
    Degenerate,
    #[error("voltage vector has length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Traceless symmetric curvature from its five independent entries;
/// `zz = −xx − yy`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Curvature5 {
    pub xx: f64,
    pub yy: f64,
    pub xy: f64,
    pub xz: f64,
    pub yz: f64,
}

impl Curvature5 {
    pub const ZERO: Curvature5 = Curvature5 { xx: 0.0, yy: 0.0, xy: 0.0, xz: 0.0, yz: 0.0 };

    pub fn zz(&self) -> f64 {
        -(self.xx + self.yy)
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.xx, self.xy, self.xz, self.xy, self.yy, self.yz, self.xz, self.yz, self.zz())
    }

    /// Accepts matrices symmetric and traceless to `1e-9` of their norm.
    pub fn from_matrix(m: &Matrix3<f64>) -> Result<Self, ControlError> {
        let scale = m.norm();
        let asym = (m - m.transpose()).norm();
        if asym > 1e-12 * scale || m.trace().abs() > 1e-9 * scale {
            return Err(ControlError::NotTraceless);
        }
        Ok(Self { xx: m[(0, 0)], yy: m[(1, 1)], xy: m[(0, 1)], xz: m[(0, 2)], yz: m[(1, 2)] })
    }

    pub fn components(&self) -> [f64; 5] {
        [self.xx, self.yy, self.xy, self.xz, self.yz]
    }
}

/// Gradient and curvature targets at one site. `None` leaves the quantity
/// free.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintTarget {
    pub site: Vector3<f64>,
    pub gradient: Option<Vector3<f64>>,
    pub curvature: Option<Curvature5>,
}

impl ConstraintTarget {
    pub fn zero(site: Vector3<f64>) -> Self {
        Self { site, gradient: Some(Vector3::zeros()), curvature: Some(Curvature5::ZERO) }
    }

    pub fn free(site: Vector3<f64>) -> Self {
        Self { site, gradient: None, curvature: None }
    }

    pub fn constraint_count(&self) -> usize {
        3 * self.gradient.is_some() as usize + 5 * self.curvature.is_some() as usize
    }
}

/// Unit voltage direction and amplitude.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSet {
    pub label: String,
    v_hat: DVector<f64>,
    amplitude: f64,
}

impl ControlSet {
    /// Split a voltage vector into `v̂ = v/|v|` and `U_c = |v|`. The zero
    /// vector gives `v̂ = 0`, `U_c = 0`.
    pub fn from_voltages(voltages: &DVector<f64>, label: impl Into<String>) -> Self {
        let amplitude = voltages.norm();
        let v_hat = if amplitude > 0.0 { voltages / amplitude } else { voltages.clone() };
        Self { label: label.into(), v_hat, amplitude }
    }

    pub fn v_hat(&self) -> &DVector<f64> {
        &self.v_hat
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn voltages(&self) -> DVector<f64> {
        &self.v_hat * self.amplitude
    }

    /// The same direction at a different amplitude.
    pub fn with_amplitude(&self, amplitude: f64) -> Self {
        Self { label: self.label.clone(), v_hat: self.v_hat.clone(), amplitude }
    }

    pub fn len(&self) -> usize {
        self.v_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v_hat.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoltageNorm {
    /// Minimum Euclidean norm.
    L2,
    /// Minimum largest absolute voltage, via linear programming.
    Chebyshev,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub norm: VoltageNorm,
    /// Singular values below this fraction of the largest count as zero.
    pub rank_tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { norm: VoltageNorm::L2, rank_tol: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiteResidual {
    pub site: Vector3<f64>,
    pub gradient: Vector3<f64>,
    pub curvature: Matrix3<f64>,
    /// Achieved minus target; `None` where the target was free.
    pub gradient_error: Option<Vector3<f64>>,
    pub curvature_error: Option<Matrix3<f64>>,
}

#[derive(Debug, Clone)]
pub struct ControlSolution {
    pub control: ControlSet,
    pub residuals: Vec<SiteResidual>,
    pub rank: usize,
    /// Dimension of the constraint-matrix nullspace (unused freedom).
    pub nullspace_dim: usize,
    /// Largest `|A_i v − b_i| / (|A_i| |v|)` over constraint rows.
    pub max_relative_residual: f64,
}

impl ControlSolution {
    pub fn voltages(&self) -> DVector<f64> {
        self.control.voltages()
    }
}

/// Constraint matrix, right-hand side and row labels.
#[derive(Debug, Clone)]
pub struct ConstraintSystem {
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub labels: Vec<String>,
}

const CURVATURE_ROWS: [(usize, usize, &str); 5] =
    [(0, 0, "xx"), (1, 1, "yy"), (0, 1, "xy"), (0, 2, "xz"), (1, 2, "yz")];

pub fn constraint_system(basis: &BasisSet, targets: &[ConstraintTarget]) -> Result<ConstraintSystem, ControlError> {
    let n = basis.control_count();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs = Vec::new();
    let mut labels = Vec::new();
    for (s, t) in targets.iter().enumerate() {
        if t.gradient.is_none() && t.curvature.is_none() {
            continue;
        }
        let derivs = basis.control_derivatives(&t.site)?;
        if let Some(g) = t.gradient {
            for (k, axis) in ["x", "y", "z"].iter().enumerate() {
                rows.push(derivs.iter().map(|(gr, _)| gr[k]).collect());
                rhs.push(g[k]);
                labels.push(format!("site {s} gradient {axis}"));
            }
        }
        if let Some(c) = t.curvature {
            let m = c.to_matrix();
            for (i, j, name) in CURVATURE_ROWS {
                rows.push(derivs.iter().map(|(_, h)| h[(i, j)]).collect());
                rhs.push(m[(i, j)]);
                labels.push(format!("site {s} curvature {name}"));
            }
        }
    }
    let m = rows.len();
    let matrix = DMatrix::from_fn(m, n, |i, j| rows[i][j]);
    Ok(ConstraintSystem { matrix, rhs: DVector::from_vec(rhs), labels })
}

impl ConstraintSystem {
    /// Rows scaled to unit norm; the solution set is unchanged.
    fn normalized(&self) -> (DMatrix<f64>, DVector<f64>) {
        let mut a = self.matrix.clone();
        let mut b = self.rhs.clone();
        for i in 0..a.nrows() {
            let norm = a.row(i).norm();
            if norm > 0.0 {
                a.row_mut(i).scale_mut(1.0 / norm);
                b[i] /= norm;
            }
        }
        (a, b)
    }

    fn rank_of(a: &DMatrix<f64>, tol: f64) -> usize {
        if a.nrows() == 0 {
            return 0;
        }
        let sv = a.clone().svd(false, false).singular_values;
        let max = sv.max();
        sv.iter().filter(|s| **s > tol * max && **s > 0.0).count()
    }

    /// Rows that are (numerically) combinations of earlier rows.
    pub fn dependent_rows(&self, tol: f64) -> Vec<String> {
        let (a, _) = self.normalized();
        let mut out = Vec::new();
        let mut kept: Vec<usize> = Vec::new();
        for i in 0..a.nrows() {
            let mut trial = kept.clone();
            trial.push(i);
            let sub = a.select_rows(&trial);
            if Self::rank_of(&sub, tol) == trial.len() {
                kept = trial;
            } else {
                out.push(self.labels[i].clone());
            }
        }
        out
    }

    /// Orthonormal basis of the nullspace, one column per direction.
    pub fn nullspace(&self, tol: f64) -> DMatrix<f64> {
        let n = self.matrix.ncols();
        let (a, _) = self.normalized();
        if a.nrows() == 0 {
            return DMatrix::identity(n, n);
        }
        let pinv = a.clone().pseudo_inverse(tol).unwrap_or_else(|_| DMatrix::zeros(n, a.nrows()));
        let projector = DMatrix::identity(n, n) - pinv * &a;
        let eig = SymmetricEigen::new((&projector + projector.transpose()) * 0.5);
        let cols: Vec<_> =
            (0..n).filter(|&k| eig.eigenvalues[k] > 0.5).map(|k| eig.eigenvectors.column(k).into_owned()).collect();
        if cols.is_empty() {
            DMatrix::zeros(n, 0)
        } else {
            DMatrix::from_columns(&cols)
        }
    }

    pub fn max_relative_residual(&self, v: &DVector<f64>) -> f64 {
        let r = &self.matrix * v - &self.rhs;
        let vn = v.norm();
        (0..r.len())
            .map(|i| {
                let scale = self.matrix.row(i).norm() * vn;
                if scale > 0.0 {
                    r[i].abs() / scale
                } else {
                    r[i].abs()
                }
            })
            .fold(0.0, f64::max)
    }
}

fn chebyshev_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>, ControlError> {
    // v = p − q, p, q ≥ 0; s± slack the rows  ±(p − q) − t + s = 0.
    let (m, n) = a.shape();
    let cols = 4 * n + 1;
    let rows = m + 2 * n;
    let t = 2 * n;
    let mut lp_a = DMatrix::zeros(rows, cols);
    for i in 0..m {
        for j in 0..n {
            lp_a[(i, j)] = a[(i, j)];
            lp_a[(i, n + j)] = -a[(i, j)];
        }
    }
    for j in 0..n {
        let r1 = m + j;
        let r2 = m + n + j;
        lp_a[(r1, j)] = 1.0;
        lp_a[(r1, n + j)] = -1.0;
        lp_a[(r1, t)] = -1.0;
        lp_a[(r1, t + 1 + j)] = 1.0;
        lp_a[(r2, j)] = -1.0;
        lp_a[(r2, n + j)] = 1.0;
        lp_a[(r2, t)] = -1.0;
        lp_a[(r2, t + 1 + n + j)] = 1.0;
    }
    let mut rhs = DVector::zeros(rows);
    rhs.rows_mut(0, m).copy_from(b);
    let mut c = DVector::zeros(cols);
    c[t] = -1.0;
    let lp = LinearProgram::new(c, lp_a, rhs, DVector::from_element(cols, f64::INFINITY))?;
    let sol = lp.solve()?;
    Ok(DVector::from_fn(n, |j, _| sol.x[j] - sol.x[n + j]))
}

/// Solve for the control voltages meeting every target exactly.
pub fn solve_control(
    basis: &BasisSet,
    targets: &[ConstraintTarget],
    label: &str,
    opts: &SolveOptions,
) -> Result<ControlSolution, ControlError> {
    let system = constraint_system(basis, targets)?;
    let (m, n) = system.matrix.shape();
    if m > n {
        return Err(ControlError::TooManyConstraints { constraints: m, electrodes: n });
    }
    let (a, b) = system.normalized();
    let rank = ConstraintSystem::rank_of(&a, opts.rank_tol);
    if rank < m {
        return Err(ControlError::RankDeficient { rank, rows: system.dependent_rows(opts.rank_tol) });
    }
    let v = if b.iter().all(|x| *x == 0.0) {
        DVector::zeros(n)
    } else {
        match opts.norm {
            VoltageNorm::L2 => {
                let svd = a.clone().svd(true, true);
                svd.solve(&b, 0.0).map_err(|_| ControlError::RankDeficient { rank, rows: vec![] })?
            }
            VoltageNorm::Chebyshev => chebyshev_solve(&a, &b)?,
        }
    };
    let residuals = site_residuals(basis, &v, targets)?;
    Ok(ControlSolution {
        max_relative_residual: system.max_relative_residual(&v),
        control: ControlSet::from_voltages(&v, label),
        residuals,
        rank,
        nullspace_dim: n - rank,
    })
}

/// Achieved gradient and curvature of `voltages` at each target site.
pub fn site_residuals(
    basis: &BasisSet,
    voltages: &DVector<f64>,
    targets: &[ConstraintTarget],
) -> Result<Vec<SiteResidual>, ControlError> {
    targets
        .iter()
        .map(|t| {
            let s = basis.apply(voltages.as_slice(), &t.site, Order::Hessian)?;
            Ok(SiteResidual {
                site: t.site,
                gradient: s.gradient,
                curvature: s.hessian,
                gradient_error: t.gradient.map(|g| s.gradient - g),
                curvature_error: t.curvature.map(|c| s.hessian - c.to_matrix()),
            })
        })
        .collect()
}

/// The named control-potential families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    EpsX,
    EpsY,
    EpsZ,
    KappaTune,
    KappaRot,
    KappaRot2,
}

impl Family {
    pub const ALL: [Family; 6] =
        [Family::EpsX, Family::EpsY, Family::EpsZ, Family::KappaTune, Family::KappaRot, Family::KappaRot2];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::EpsX => "eps_x",
            Family::EpsY => "eps_y",
            Family::EpsZ => "eps_z",
            Family::KappaTune => "kappa_tune",
            Family::KappaRot => "kappa_rot",
            Family::KappaRot2 => "kappa_rot2",
        }
    }

    pub fn parse(s: &str) -> Result<Family, ControlError> {
        Family::ALL.into_iter().find(|f| f.as_str() == s).ok_or_else(|| ControlError::UnknownFamily(s.to_string()))
    }

    /// Curvature target at the first site, m⁻² per volt.
    pub fn curvature(self) -> Curvature5 {
        match self {
            Family::EpsX | Family::EpsY | Family::EpsZ => Curvature5::ZERO,
            Family::KappaTune => Curvature5 { xx: 0.0, yy: 0.937e7, xy: 0.0, xz: 0.0, yz: 0.0 },
            Family::KappaRot => Curvature5 { xx: -1.60e7, yy: 0.84e7, xy: 1.75e7, xz: 0.0, yz: 0.0 },
            // xz analogue: off-diagonal 1.75e7, yy left untouched.
            Family::KappaRot2 => Curvature5 { xx: -0.84e7, yy: 0.0, xy: 0.0, xz: 1.75e7, yz: 0.0 },
        }
    }

    /// Gradient target at the first site, m⁻¹ per volt.
    pub fn gradient(self) -> Vector3<f64> {
        match self {
            Family::EpsX => Vector3::x(),
            Family::EpsY => Vector3::y(),
            Family::EpsZ => Vector3::z(),
            _ => Vector3::zeros(),
        }
    }
}

/// Constraint table of a family: the family's gradient and curvature at
/// `sites[0]`, zero gradient and curvature at every other site.
pub fn family_target(kind: Family, sites: &[Vector3<f64>]) -> Vec<ConstraintTarget> {
    sites
        .iter()
        .enumerate()
        .map(|(k, &site)| {
            if k == 0 {
                ConstraintTarget { site, gradient: Some(kind.gradient()), curvature: Some(kind.curvature()) }
            } else {
                ConstraintTarget::zero(site)
            }
        })
        .collect()
}

/// `Δω = sqrt(ω² + U (Q/m) c) − ω`, rad/s.
pub fn predict_detuning(
    omega: f64,
    curvature_per_volt: f64,
    u: f64,
    species: &IonSpecies,
) -> Result<f64, ControlError> {
    let shift = u * species.charge_to_mass() * curvature_per_volt;
    let radicand = omega * omega + shift;
    if !(radicand >= 0.0) {
        return Err(ControlError::Unstable(radicand));
    }
    // Rationalized form keeps full relative precision for small shifts.
    Ok(shift / (radicand.sqrt() + omega))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationPrediction {
    /// Angle of the softer in-plane eigenvector from the y axis, degrees,
    /// in (−90, 90].
    pub angle_deg: f64,
    /// Same angle from the full 3D eigensolve.
    pub angle_3d_deg: f64,
    pub modes: ModeStructure,
}

fn angle_from_y(u: [f64; 2]) -> f64 {
    let (x, y) = (u[0], u[1]);
    let (x, y) = if y < 0.0 || (y == 0.0 && x > 0.0) { (-x, -y) } else { (x, y) };
    (-x).atan2(y).to_degrees()
}

/// Orientation of the in-plane modes of `φ_ini + U κ_rot`.
pub fn predict_rotation(
    phi_ini: &Matrix3<f64>,
    kappa_rot: &Matrix3<f64>,
    u_rot: f64,
    species: &IonSpecies,
) -> Result<RotationPrediction, ControlError> {
    let fin = phi_ini + kappa_rot * u_rot;
    let block = Matrix2::new(fin[(0, 0)], fin[(0, 1)], fin[(1, 0)], fin[(1, 1)]);
    let eig = SymmetricEigen::new(block);
    let (lo, hi) = if eig.eigenvalues[0] <= eig.eigenvalues[1] { (0, 1) } else { (1, 0) };
    let (k_lo, k_hi) = (eig.eigenvalues[lo], eig.eigenvalues[hi]);
    if k_lo <= 0.0 {
        return Err(ControlError::Unstable(k_lo));
    }
    if (k_hi - k_lo) <= 1e-12 * k_hi.abs() {
        return Err(ControlError::Degenerate);
    }
    let u = eig.eigenvectors.column(lo);
    let angle_deg = angle_from_y([u[0], u[1]]);

    let modes = eigenmodes(&fin, species)?;
    // Drop the most out-of-plane mode, keep the softer of the other two.
    let out = (0..3).max_by(|&a, &b| modes.vectors[a].z.abs().total_cmp(&modes.vectors[b].z.abs())).unwrap_or(2);
    let soft =
        (0..3).filter(|&j| j != out).min_by(|&a, &b| modes.curvatures[a].total_cmp(&modes.curvatures[b])).unwrap_or(1);
    let v = modes.vectors[soft];
    let angle_3d_deg = angle_from_y([v.x, v.y]);
    Ok(RotationPrediction { angle_deg, angle_3d_deg, modes })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crosstalk {
    pub site: Vector3<f64>,
    /// Gradient and curvature of the control set at this site (V/m, V/m²).
    pub gradient: Vector3<f64>,
    pub curvature: Matrix3<f64>,
    /// `‖H‖ / ‖H_ref‖`.
    pub curvature_ratio: f64,
    /// Projection of `H` on the reference curvature, `⟨H, H_ref⟩ / ‖H_ref‖²`.
    pub curvature_projection: f64,
    /// `|g| / ‖H_ref‖`, meters.
    pub gradient_per_curvature: f64,
}

/// Effect of a control set at `sites`, relative to its curvature at
/// `reference`.
pub fn residual_crosstalk(
    basis: &BasisSet,
    control: &ControlSet,
    reference: &Vector3<f64>,
    sites: &[Vector3<f64>],
) -> Result<Vec<Crosstalk>, ControlError> {
    let n = basis.control_count();
    if control.len() != n {
        return Err(ControlError::DimensionMismatch { expected: n, got: control.len() });
    }
    let v = control.voltages();
    let href = basis.apply(v.as_slice(), reference, Order::Hessian)?.hessian;
    let nref = href.norm();
    sites
        .iter()
        .map(|site| {
            let s = basis.apply(v.as_slice(), site, Order::Hessian)?;
            let safe = |x: f64| if nref > 0.0 { x } else { f64::NAN };
            Ok(Crosstalk {
                site: *site,
                gradient: s.gradient,
                curvature: s.hessian,
                curvature_ratio: safe(s.hessian.norm() / nref),
                curvature_projection: safe(s.hessian.dot(&href) / (nref * nref)),
                gradient_per_curvature: safe(s.gradient.norm() / nref),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn family_traces_vanish() {
        for f in Family::ALL {
            assert_eq!(f.curvature().to_matrix().trace(), 0.0);
        }
        assert!((Family::KappaRot.curvature().zz() - 0.76e7).abs() < 1e-8);
        assert!((Family::KappaTune.curvature().zz() + 0.937e7).abs() < 1e-8);
    }

    #[test]
    fn family_parse_round_trip() {
        for f in Family::ALL {
            assert_eq!(Family::parse(f.as_str()).unwrap(), f);
        }
        assert!(Family::parse("kappa_bogus").is_err());
    }

    #[test]
    fn detuning_zero_and_sign() {
        let sp = IonSpecies::mg25();
        let w = crate::consts::TWO_PI * 2.6e6;
        assert_eq!(predict_detuning(w, 1.164e7, 0.0, &sp).unwrap(), 0.0);
        assert!(predict_detuning(w, 1.164e7, 0.5, &sp).unwrap() > 0.0);
        assert!(predict_detuning(w, -1.164e7, 0.5, &sp).unwrap() < 0.0);
        assert!(matches!(predict_detuning(w, -1e12, 10.0, &sp), Err(ControlError::Unstable(_))));
    }

    #[test]
    fn rotation_closed_form() {
        let sp = IonSpecies::mg25();
        let (a, b, c, u) = (3.0e7, 1.5e7, 0.4e7, 1.3);
        let phi = Matrix3::from_diagonal(&Vector3::new(a, b, 4.5e7));
        let kappa = Matrix3::new(0.0, c, 0.0, c, 0.0, 0.0, 0.0, 0.0, 0.0);
        let p = predict_rotation(&phi, &kappa, u, &sp).unwrap();
        let expected = 0.5 * (2.0 * u * c / (a - b)).atan();
        assert!((p.angle_deg - expected.to_degrees()).abs() < 1e-10);
        assert!((p.angle_3d_deg - p.angle_deg).abs() < 1e-8);
        assert_eq!(predict_rotation(&phi, &Matrix3::zeros(), 0.0, &sp).unwrap().angle_deg, 0.0);
    }

    #[test]
    fn all_zero_targets_give_zero_set() {
        let basis = BasisSet::new(&fixtures::single_ring()).unwrap();
        let t = [ConstraintTarget {
            site: Vector3::new(0.0, 0.0, 40e-6),
            gradient: Some(Vector3::zeros()),
            curvature: None,
        }];
        let sol = solve_control(&basis, &t, "zero", &SolveOptions::default()).unwrap();
        assert_eq!(sol.control.amplitude(), 0.0);
        assert!(sol.control.v_hat().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn too_many_constraints_rejected() {
        let basis = BasisSet::new(&fixtures::single_ring()).unwrap();
        let t = [ConstraintTarget::zero(Vector3::new(0.0, 0.0, 40e-6))];
        assert!(matches!(
            solve_control(&basis, &t, "x", &SolveOptions::default()),
            Err(ControlError::TooManyConstraints { constraints: 8, electrodes: 4 })
        ));
    }

    #[test]
    fn rank_deficiency_names_rows() {
        let basis = BasisSet::new(&fixtures::triangular_array()).unwrap();
        let r = Vector3::new(3e-6, 1e-6, 40e-6);
        let g = ConstraintTarget { site: r, gradient: Some(Vector3::x()), curvature: None };
        match solve_control(&basis, &[g, g], "x", &SolveOptions::default()) {
            Err(ControlError::RankDeficient { rank: 3, rows }) => {
                assert_eq!(rows, ["site 1 gradient x", "site 1 gradient y", "site 1 gradient z"])
            }
            other => panic!("{other:?}"),
        }
        assert!(solve_control(&basis, &[g, ConstraintTarget::free(r)], "x", &SolveOptions::default()).is_ok());
    }
}
