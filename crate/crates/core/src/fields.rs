//! Basis potentials in the gapless-plane approximation.
//!
//! With the whole `z = 0` plane grounded except for one electrode held at
//! 1 V, the potential above the plane is `Ω(r) / 2π`, where `Ω` is the solid
//! angle the electrode subtends from `r`. Values come from an ear-clipped
//! triangulation (Van Oosterom–Strackee formula per triangle). Derivatives
//! come from the boundary line integral
//!
//! ```text
//! ∇Ω(r) = Σ_edges (b × a) (|a| + |b|) / (|a| |b| (|a| |b| + a·b)),   a = A − r, b = B − r
//! ```
//!
//! differentiated exactly with second-order forward-mode jets, which gives
//! the Hessian and the third-derivative tensor of the potential without
//! finite differences.

use nalgebra::{DVector, Matrix3, Vector3};
use thiserror::Error;

use crate::consts::TWO_PI;
use crate::geometry::{self, Point2};
use crate::layout::{Electrode, ElectrodeLayout};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("evaluation point must lie strictly above the electrode plane (z = {0:e} m)")]
    BelowPlane(f64),
    #[error("electrode '{0}' has a ring that cannot be triangulated")]
    DegenerateTriangulation(String),
    #[error("voltage vector has length {got}, layout has {expected} control electrodes")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("control direction is not a unit vector (|v| = {0})")]
    NotUnit(f64),
    #[error("layout has no RF electrode")]
    NoRfElectrode,
}

/// Derivative order requested from an evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Order {
    Value = 0,
    Gradient = 1,
    Hessian = 2,
}

impl TryFrom<u8> for Order {
    type Error = u8;
    fn try_from(v: u8) -> Result<Self, u8> {
        match v {
            0 => Ok(Order::Value),
            1 => Ok(Order::Gradient),
            2 => Ok(Order::Hessian),
            other => Err(other),
        }
    }
}

/// Value, gradient and Hessian of a potential at one point. Units follow the
/// source: dimensionless (and per meter) for basis potentials, volts for
/// superposed ones. Entries above the requested order are zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub value: f64,
    pub gradient: Vector3<f64>,
    pub hessian: Matrix3<f64>,
}

impl FieldSample {
    pub fn zero() -> Self {
        Self { value: 0.0, gradient: Vector3::zeros(), hessian: Matrix3::zeros() }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { value: s * self.value, gradient: s * self.gradient, hessian: s * self.hessian }
    }

    pub fn add_scaled(&mut self, other: &FieldSample, s: f64) {
        self.value += s * other.value;
        self.gradient += s * other.gradient;
        self.hessian += s * other.hessian;
    }
}

/// Third derivatives `T[k][(i, j)] = ∂_i ∂_j ∂_k φ`.
pub type ThirdDerivatives = [Matrix3<f64>; 3];

/// Gradient and Hessian.
pub type Derivatives = (Vector3<f64>, Matrix3<f64>);

/// Second-order Taylor jet of a scalar function of position.
#[derive(Debug, Clone, Copy)]
struct Jet {
    v: f64,
    g: Vector3<f64>,
    h: Matrix3<f64>,
}

impl Jet {
    fn map(self, f0: f64, f1: f64, f2: f64) -> Jet {
        Jet { v: f0, g: self.g * f1, h: self.h * f1 + self.g * self.g.transpose() * f2 }
    }

    fn sqrt(self) -> Jet {
        let s = self.v.sqrt();
        self.map(s, 0.5 / s, -0.25 / (s * self.v))
    }

    fn recip(self) -> Jet {
        let r = 1.0 / self.v;
        self.map(r, -r * r, 2.0 * r * r * r)
    }

    fn mul(self, o: Jet) -> Jet {
        let cross = self.g * o.g.transpose();
        Jet {
            v: self.v * o.v,
            g: self.g * o.v + o.g * self.v,
            h: self.h * o.v + o.h * self.v + cross + cross.transpose(),
        }
    }

    fn add(self, o: Jet) -> Jet {
        Jet { v: self.v + o.v, g: self.g + o.g, h: self.h + o.h }
    }
}

/// `|a|² `, `|b|²` and `a·b` with `a = A − r`, `b = B − r` as jets in `r`.
fn quadratic_jets(a: Vector3<f64>, b: Vector3<f64>) -> (Jet, Jet, Jet) {
    let two = Matrix3::identity() * 2.0;
    (
        Jet { v: a.norm_squared(), g: -2.0 * a, h: two },
        Jet { v: b.norm_squared(), g: -2.0 * b, h: two },
        Jet { v: a.dot(&b), g: -(a + b), h: two },
    )
}

fn edge_scalar(a: Vector3<f64>, b: Vector3<f64>) -> f64 {
    let la = a.norm();
    let lb = b.norm();
    let p = la * lb;
    (la + lb) / (p * (p + a.dot(&b)))
}

fn edge_scalar_jet(a: Vector3<f64>, b: Vector3<f64>) -> Jet {
    let (a2, b2, d) = quadratic_jets(a, b);
    let la = a2.sqrt();
    let lb = b2.sqrt();
    let p = la.mul(lb);
    la.add(lb).mul(p.mul(p.add(d)).recip())
}

fn lift(p: Point2) -> Vector3<f64> {
    Vector3::new(p[0], p[1], 0.0)
}

/// Solid angle of the counter-clockwise triangle `(p0, p1, p2)` seen from
/// `r`; positive for `r` above the plane.
fn triangle_solid_angle(tri: &[Point2; 3], r: &Vector3<f64>) -> f64 {
    let a = lift(tri[0]) - r;
    let b = lift(tri[1]) - r;
    let c = lift(tri[2]) - r;
    let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
    let num = a.dot(&c.cross(&b));
    let den = la * lb * lc + a.dot(&b) * lc + a.dot(&c) * lb + b.dot(&c) * la;
    2.0 * num.atan2(den)
}

/// Dimensionless potential of one electrode held at 1 V.
#[derive(Debug, Clone)]
pub struct BasisPotential {
    id: String,
    /// Signed triangles: (triangle, +1 for outer rings, −1 for holes).
    triangles: Vec<([Point2; 3], f64)>,
    /// Directed edges in ring orientation.
    edges: Vec<(Vector3<f64>, Vector3<f64>)>,
}

impl BasisPotential {
    pub fn new(electrode: &Electrode) -> Result<Self, FieldError> {
        Self::from_rings(&electrode.id, &electrode.rings)
    }

    pub fn from_rings(id: &str, rings: &[Vec<Point2>]) -> Result<Self, FieldError> {
        let mut triangles = Vec::new();
        let mut edges = Vec::new();
        for ring in rings {
            let sign = geometry::signed_area(ring).signum();
            let tris = geometry::ear_clip(ring).ok_or_else(|| FieldError::DegenerateTriangulation(id.to_string()))?;
            if tris.is_empty() {
                return Err(FieldError::DegenerateTriangulation(id.to_string()));
            }
            triangles.extend(tris.into_iter().map(|t| (t, sign)));
            let n = ring.len();
            edges.extend((0..n).map(|i| (lift(ring[i]), lift(ring[(i + 1) % n]))));
        }
        Ok(Self { id: id.to_string(), triangles, edges })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn triangles(&self) -> impl Iterator<Item = &([Point2; 3], f64)> {
        self.triangles.iter()
    }

    pub fn value(&self, r: &Vector3<f64>) -> f64 {
        self.triangles.iter().map(|(t, s)| s * triangle_solid_angle(t, r)).sum::<f64>() / TWO_PI
    }

    pub fn gradient(&self, r: &Vector3<f64>) -> Vector3<f64> {
        let mut acc = Vector3::zeros();
        for (pa, pb) in &self.edges {
            let a = pa - r;
            let b = pb - r;
            acc += b.cross(&a) * edge_scalar(a, b);
        }
        acc / TWO_PI
    }

    /// Gradient, Hessian and third derivatives.
    pub fn derivatives(&self, r: &Vector3<f64>) -> (Vector3<f64>, Matrix3<f64>, ThirdDerivatives) {
        let mut grad = Vector3::zeros();
        let mut hess = Matrix3::zeros();
        let mut third = [Matrix3::zeros(); 3];
        for (pa, pb) in &self.edges {
            let a = pa - r;
            let b = pb - r;
            let c = b.cross(&a);
            // ∂_k (b × a) = e_k × (B − A); independent of r.
            let dba = pb - pa;
            let dc = [Vector3::x().cross(&dba), Vector3::y().cross(&dba), Vector3::z().cross(&dba)];
            let g = edge_scalar_jet(a, b);
            grad += c * g.v;
            for j in 0..3 {
                let dcj = Vector3::new(dc[0][j], dc[1][j], dc[2][j]);
                // F_j = c_j g; row j of the Hessian is ∇F_j.
                let grad_fj = g.g * c[j] + dcj * g.v;
                for k in 0..3 {
                    hess[(j, k)] += grad_fj[k];
                }
                let hess_fj = g.h * c[j] + dcj * g.g.transpose() + g.g * dcj.transpose();
                // ∂_k ∂_l F_j = ∂_j ∂_k ∂_l φ: store as third[j][(k, l)].
                third[j] += hess_fj;
            }
        }
        let s = 1.0 / TWO_PI;
        // Symmetrise away round-off; the exact tensors are symmetric.
        let hess = (hess + hess.transpose()) * (0.5 * s);
        for t in &mut third {
            *t = (*t + t.transpose()) * (0.5 * s);
        }
        (grad * s, hess, third)
    }

    pub fn eval(&self, r: &Vector3<f64>, order: Order) -> Result<FieldSample, FieldError> {
        check_above(r)?;
        let value = self.value(r);
        Ok(match order {
            Order::Value => FieldSample { value, ..FieldSample::zero() },
            Order::Gradient => FieldSample { value, gradient: self.gradient(r), hessian: Matrix3::zeros() },
            Order::Hessian => {
                let (gradient, hessian, _) = self.derivatives(r);
                FieldSample { value, gradient, hessian }
            }
        })
    }
}

pub fn check_above(r: &Vector3<f64>) -> Result<(), FieldError> {
    if r.z > 0.0 && r.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(FieldError::BelowPlane(r.z))
    }
}

/// Free-function form of [`BasisPotential::eval`].
pub fn basis_eval(basis: &BasisPotential, r: &Vector3<f64>, order: Order) -> Result<FieldSample, FieldError> {
    basis.eval(r, order)
}

/// Basis potentials of every control electrode (in control index order) and
/// of the RF electrode of a layout.
#[derive(Debug, Clone)]
pub struct BasisSet {
    controls: Vec<BasisPotential>,
    rf: Option<BasisPotential>,
}

impl BasisSet {
    pub fn new(layout: &ElectrodeLayout) -> Result<Self, FieldError> {
        let controls = layout.controls().map(BasisPotential::new).collect::<Result<Vec<_>, _>>()?;
        let rf = layout.rf().map(BasisPotential::new).transpose()?;
        Ok(Self { controls, rf })
    }

    pub fn control_count(&self) -> usize {
        self.controls.len()
    }

    pub fn controls(&self) -> &[BasisPotential] {
        &self.controls
    }

    pub fn rf(&self) -> Result<&BasisPotential, FieldError> {
        self.rf.as_ref().ok_or(FieldError::NoRfElectrode)
    }

    /// Potential produced by applying `voltages` (volts, control index
    /// order) to the control electrodes.
    pub fn apply(&self, voltages: &[f64], r: &Vector3<f64>, order: Order) -> Result<FieldSample, FieldError> {
        if voltages.len() != self.controls.len() {
            return Err(FieldError::DimensionMismatch { expected: self.controls.len(), got: voltages.len() });
        }
        check_above(r)?;
        let mut acc = FieldSample::zero();
        for (basis, &v) in self.controls.iter().zip(voltages) {
            if v != 0.0 {
                acc.add_scaled(&basis.eval(r, order)?, v);
            }
        }
        Ok(acc)
    }

    /// `U_c Σ_n v̂_n φ̂_n(r)`; `v_hat` must be a unit vector.
    pub fn superpose(
        &self,
        v_hat: &[f64],
        amplitude: f64,
        r: &Vector3<f64>,
        order: Order,
    ) -> Result<FieldSample, FieldError> {
        let norm = v_hat.iter().map(|x| x * x).sum::<f64>().sqrt();
        if v_hat.len() == self.controls.len() && (norm - 1.0).abs() > 1e-9 {
            return Err(FieldError::NotUnit(norm));
        }
        self.superpose_unnormalized(v_hat, amplitude, r, order)
    }

    /// As [`BasisSet::superpose`] without the unit-norm check.
    pub fn superpose_unnormalized(
        &self,
        v: &[f64],
        amplitude: f64,
        r: &Vector3<f64>,
        order: Order,
    ) -> Result<FieldSample, FieldError> {
        if amplitude == 0.0 {
            if v.len() != self.controls.len() {
                return Err(FieldError::DimensionMismatch { expected: self.controls.len(), got: v.len() });
            }
            check_above(r)?;
            return Ok(FieldSample::zero());
        }
        let scaled: Vec<f64> = v.iter().map(|x| x * amplitude).collect();
        self.apply(&scaled, r, order)
    }

    /// Gradient and Hessian of every control basis at
    /// `r`, as columns per electrode.
    pub fn control_derivatives(&self, r: &Vector3<f64>) -> Result<Vec<Derivatives>, FieldError> {
        check_above(r)?;
        Ok(self
            .controls
            .iter()
            .map(|b| {
                let (g, h, _) = b.derivatives(r);
                (g, h)
            })
            .collect())
    }
}

/// Convenience wrapper matching the free-function style of the other
/// modules.
pub fn superpose(
    basis: &BasisSet,
    v_hat: &DVector<f64>,
    amplitude: f64,
    r: &Vector3<f64>,
    order: Order,
) -> Result<FieldSample, FieldError> {
    basis.superpose(v_hat.as_slice(), amplitude, r, order)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(half: f64) -> Vec<Point2> {
        vec![[-half, -half], [half, -half], [half, half], [-half, half]]
    }

    #[test]
    fn large_plane_approaches_one() {
        let b = BasisPotential::from_rings("big", &[square(1.0)]).unwrap();
        let v = b.value(&Vector3::new(0.0, 0.0, 1e-7));
        assert!((v - 1.0).abs() < 1e-6, "{v}");
    }

    #[test]
    fn far_outside_near_plane_approaches_zero() {
        let b = BasisPotential::from_rings("sq", &[square(1e-5)]).unwrap();
        let v = b.value(&Vector3::new(1e-3, 0.0, 1e-9));
        assert!(v.abs() < 1e-6 && v > 0.0, "{v}");
    }

    #[test]
    fn on_axis_square_closed_form() {
        // Solid angle of a square of side 2s from height h on its axis:
        // 4 asin(s² / (s² + h²)).
        let b = BasisPotential::from_rings("sq", &[square(1.0)]).unwrap();
        let h: f64 = 0.7;
        let expected = 4.0 * (1.0 / (1.0 + h * h)).asin() / TWO_PI;
        assert!((b.value(&Vector3::new(0.0, 0.0, h)) - expected).abs() < 1e-14);
    }

    #[test]
    fn holes_subtract() {
        let mut hole = square(0.5);
        hole.reverse();
        let ring = BasisPotential::from_rings("ring", &[square(1.0), hole]).unwrap();
        let outer = BasisPotential::from_rings("o", &[square(1.0)]).unwrap();
        let inner = BasisPotential::from_rings("i", &[square(0.5)]).unwrap();
        let r = Vector3::new(0.1, 0.2, 0.3);
        let s = ring.eval(&r, Order::Hessian).unwrap();
        let o = outer.eval(&r, Order::Hessian).unwrap();
        let i = inner.eval(&r, Order::Hessian).unwrap();
        assert!((s.value - (o.value - i.value)).abs() < 1e-14);
        assert!((s.gradient - (o.gradient - i.gradient)).norm() < 1e-13);
        assert!((s.hessian - (o.hessian - i.hessian)).norm() < 1e-12);
    }

    #[test]
    fn below_plane_rejected() {
        let b = BasisPotential::from_rings("sq", &[square(1.0)]).unwrap();
        assert_eq!(b.eval(&Vector3::new(0.0, 0.0, 0.0), Order::Value), Err(FieldError::BelowPlane(0.0)));
        assert!(b.eval(&Vector3::new(0.0, 0.0, -1.0), Order::Value).is_err());
    }

    #[test]
    fn third_derivatives_match_hessian_differences() {
        let b = BasisPotential::from_rings("sq", &[square(1.0)]).unwrap();
        let r = Vector3::new(0.3, -0.2, 0.6);
        let (_, _, t) = b.derivatives(&r);
        let h = 1e-5;
        for k in 0..3 {
            let mut e = Vector3::zeros();
            e[k] = h;
            let (_, hp, _) = b.derivatives(&(r + e));
            let (_, hm, _) = b.derivatives(&(r - e));
            let fd = (hp - hm) / (2.0 * h);
            assert!((fd - t[k]).norm() < 1e-6 * t[k].norm().max(1.0), "k={k}");
        }
    }
}
