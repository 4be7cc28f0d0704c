//! Pixelated RF electrode design by linear programming, and extraction of
//! electrode polygons from a pixel pattern.
//!
//! Each pixel is a square electrode whose RF amplitude fraction `p ∈ [0, 1]`
//! is a decision variable. The RF field and its Jacobian at every site are
//! linear in `p`, so nulling the field at the sites while maximizing the
//! projection of each Jacobian on a target direction is a linear program.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::fields::{check_above, BasisPotential, Derivatives, FieldError};
use crate::geometry::{rotate_point, signed_area, Point2};
use crate::layout::{Electrode, ElectrodeLayout, Frame, LayoutError, Role};
use crate::lp::{Certificate, LinearProgram, LpError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShapeError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error("the field cannot be nulled at every site with this grid")]
    Infeasible,
    #[error("pixel linear program is unbounded")]
    Unbounded,
    #[error(transparent)]
    Lp(LpError),
    #[error("direction matrix {0} must be symmetric, traceless and of unit Frobenius norm")]
    BadDirection(usize),
    #[error("objective needs one direction matrix per site")]
    DirectionCount,
    #[error("grid must have at least one pixel and a positive pitch")]
    BadGrid,
    #[error("pattern has {got} values, grid has {expected} pixels")]
    PatternSize { expected: usize, got: usize },
    #[error("pattern value {0} outside [0, 1]")]
    PatternRange(f64),
    #[error("pattern has no pixel above the threshold")]
    EmptyPattern,
}

impl From<LpError> for ShapeError {
    fn from(e: LpError) -> Self {
        match e {
            LpError::Infeasible(_) => ShapeError::Infeasible,
            LpError::Unbounded => ShapeError::Unbounded,
            other => ShapeError::Lp(other),
        }
    }
}

/// Square pixel grid in the electrode plane. Pixel `(i, j)` covers
/// `origin + pitch·[i, i+1] × [j, j+1]` before the whole grid is rotated by
/// `rotation` about the frame origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub origin: Point2,
    pub nx: usize,
    pub ny: usize,
    pub pitch: f64,
    pub rotation: f64,
}

impl GridSpec {
    /// `nx × ny` grid centered on the frame origin.
    pub fn centered(nx: usize, ny: usize, pitch: f64) -> Self {
        Self { origin: [-0.5 * nx as f64 * pitch, -0.5 * ny as f64 * pitch], nx, ny, pitch, rotation: 0.0 }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self) -> Result<(), ShapeError> {
        if self.is_empty() || !(self.pitch > 0.0) || !self.pitch.is_finite() {
            return Err(ShapeError::BadGrid);
        }
        Ok(())
    }

    /// Physical position of grid-index coordinates `(u, v)` (pixel corners
    /// are integers).
    pub fn to_plane(&self, u: f64, v: f64) -> Point2 {
        let p = [self.origin[0] + self.pitch * u, self.origin[1] + self.pitch * v];
        if self.rotation == 0.0 {
            p
        } else {
            rotate_point(p, [0.0, 0.0], self.rotation)
        }
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn pixel_polygon(&self, i: usize, j: usize) -> Vec<Point2> {
        let (u, v) = (i as f64, j as f64);
        vec![self.to_plane(u, v), self.to_plane(u + 1.0, v), self.to_plane(u + 1.0, v + 1.0), self.to_plane(u, v + 1.0)]
    }

    pub fn pixel_center(&self, i: usize, j: usize) -> Point2 {
        self.to_plane(i as f64 + 0.5, j as f64 + 0.5)
    }

    /// Same extent at twice the resolution.
    pub fn refined(&self) -> Self {
        Self { nx: 2 * self.nx, ny: 2 * self.ny, pitch: 0.5 * self.pitch, ..*self }
    }
}

/// Fraction of each pixel held at RF potential, row-major (`j·nx + i`).
#[derive(Debug, Clone, PartialEq)]
pub struct PixelPattern {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl PixelPattern {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self, ShapeError> {
        grid.validate()?;
        if values.len() != grid.len() {
            return Err(ShapeError::PatternSize { expected: grid.len(), got: values.len() });
        }
        if let Some(&v) = values.iter().find(|v| !(**v >= 0.0 && **v <= 1.0 + 1e-12)) {
            return Err(ShapeError::PatternRange(v));
        }
        Ok(Self { grid, values })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    /// Pixels strictly between 0 and 1 (beyond `tol`).
    pub fn fractional_count(&self, tol: f64) -> usize {
        self.values.iter().filter(|v| **v > tol && **v < 1.0 - tol).count()
    }

    /// CSV grid, one row per `j`, first row `j = 0`.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for j in 0..self.grid.ny {
            let row: Vec<String> = (0..self.grid.nx).map(|i| format!("{}", self.get(i, j))).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }
}

/// `diag(−1, −1, 2) / √6`: isotropic in-plane confinement, field null on
/// the z axis.
pub fn default_direction() -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 2.0)) / 6f64.sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeObjective {
    sites: Vec<Vector3<f64>>,
    directions: Vec<Matrix3<f64>>,
}

impl ShapeObjective {
    pub fn new(sites: Vec<Vector3<f64>>, directions: Vec<Matrix3<f64>>) -> Result<Self, ShapeError> {
        if sites.len() != directions.len() || sites.is_empty() {
            return Err(ShapeError::DirectionCount);
        }
        for (k, m) in directions.iter().enumerate() {
            let ok = (m - m.transpose()).norm() < 1e-12 && m.trace().abs() < 1e-12 && (m.norm() - 1.0).abs() < 1e-12;
            if !ok {
                return Err(ShapeError::BadDirection(k));
            }
        }
        for s in &sites {
            check_above(s)?;
        }
        Ok(Self { sites, directions })
    }

    pub fn uniform(sites: Vec<Vector3<f64>>) -> Result<Self, ShapeError> {
        let n = sites.len();
        Self::new(sites, vec![default_direction(); n])
    }

    pub fn sites(&self) -> &[Vector3<f64>] {
        &self.sites
    }

    pub fn directions(&self) -> &[Matrix3<f64>] {
        &self.directions
    }

    /// Sites and matrices rotated by `angle` about z.
    pub fn rotated(&self, angle: f64) -> Self {
        let r = nalgebra::Rotation3::from_axis_angle(&Vector3::z_axis(), angle);
        let m = r.matrix();
        Self {
            sites: self.sites.iter().map(|s| r * s).collect(),
            directions: self.directions.iter().map(|d| m * d * m.transpose()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShapeOptions {
    /// Require a field null at every site. Disabling it leaves only the
    /// bounds, which is useful for checking the LP against enumeration.
    pub enforce_null: bool,
    /// Require each Jacobian to be a multiple of its direction matrix (four
    /// more equalities per site). Without it the objective only sees the
    /// projection on `M`, and the optimum tends to leave one curvature
    /// eigenvalue near zero, giving a fragile, elongated null.
    pub align_jacobian: bool,
}

impl Default for ShapeOptions {
    fn default() -> Self {
        Self { enforce_null: true, align_jacobian: true }
    }
}

/// Orthonormal basis of the traceless symmetric matrices orthogonal to `m`
/// (Frobenius inner product).
fn orthogonal_complement(m: &Matrix3<f64>) -> Vec<Matrix3<f64>> {
    let s2 = std::f64::consts::FRAC_1_SQRT_2;
    let s6 = 1.0 / 6f64.sqrt();
    let basis = [
        Matrix3::new(s2, 0.0, 0.0, 0.0, -s2, 0.0, 0.0, 0.0, 0.0),
        Matrix3::new(-s6, 0.0, 0.0, 0.0, -s6, 0.0, 0.0, 0.0, 2.0 * s6),
        Matrix3::new(0.0, s2, 0.0, s2, 0.0, 0.0, 0.0, 0.0, 0.0),
        Matrix3::new(0.0, 0.0, s2, 0.0, 0.0, 0.0, s2, 0.0, 0.0),
        Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, s2, 0.0, s2, 0.0),
    ];
    let mut out: Vec<Matrix3<f64>> = Vec::new();
    for b in basis {
        let mut v = b - m * m.dot(&b);
        for o in &out {
            v -= o * o.dot(&v);
        }
        if v.norm() > 1e-8 {
            out.push(v / v.norm());
        }
    }
    out.truncate(4);
    out
}

#[derive(Debug, Clone)]
pub struct ShapeReport {
    pub pattern: PixelPattern,
    /// `Σ ⟨M_i, J_i⟩`, m⁻² per volt of RF.
    pub objective: f64,
    /// Field-gradient Jacobian `J_i = ∇∇φ̂_RF` at each site, m⁻².
    pub jacobians: Vec<Matrix3<f64>>,
    /// `J_iᵀ J_i`, proportional to the pseudopotential curvature at a null:
    /// multiply by `2 Q U² / (4 m Ω²)` for V/m².
    pub curvatures: Vec<Matrix3<f64>>,
    /// Residual field `∇φ̂_RF` at each site, m⁻¹.
    pub fields: Vec<Vector3<f64>>,
    pub certificate: Certificate,
    pub fractional_pixels: usize,
    pub equality_rows: usize,
    pub iterations: usize,
}

/// Gradient and Hessian of every pixel basis at every site:
/// `out[pixel][site]`.
fn pixel_responses(grid: &GridSpec, sites: &[Vector3<f64>]) -> Result<Vec<Vec<Derivatives>>, ShapeError> {
    (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k % grid.nx, k / grid.nx);
            let b = BasisPotential::from_rings("pixel", &[grid.pixel_polygon(i, j)])?;
            Ok(sites
                .iter()
                .map(|s| {
                    let (g, h, _) = b.derivatives(s);
                    (g, h)
                })
                .collect())
        })
        .collect()
}

pub fn lp_optimize(
    objective: &ShapeObjective,
    grid: &GridSpec,
    opts: &ShapeOptions,
) -> Result<ShapeReport, ShapeError> {
    grid.validate()?;
    let resp = pixel_responses(grid, &objective.sites)?;
    let n = grid.len();
    let ns = objective.sites.len();
    let c = DVector::from_fn(n, |k, _| (0..ns).map(|s| objective.directions[s].dot(&resp[k][s].1)).sum::<f64>());
    let mut rows: Vec<Box<dyn Fn(usize) -> f64 + Sync + '_>> = Vec::new();
    if opts.enforce_null {
        for s in 0..ns {
            for axis in 0..3 {
                let resp = &resp;
                rows.push(Box::new(move |k| resp[k][s].0[axis]));
            }
        }
    }
    if opts.align_jacobian {
        for s in 0..ns {
            for q in orthogonal_complement(&objective.directions[s]) {
                let resp = &resp;
                rows.push(Box::new(move |k| q.dot(&resp[k][s].1)));
            }
        }
    }
    let m = rows.len();
    let a = DMatrix::from_fn(m, n, |row, k| rows[row](k));
    let lp = LinearProgram::new(c, a, DVector::zeros(m), DVector::from_element(n, 1.0))?;
    let sol = lp.solve()?;
    let values: Vec<f64> = sol.x.iter().map(|v| v.clamp(0.0, 1.0)).collect();

    let mut jacobians = vec![Matrix3::zeros(); ns];
    let mut fields = vec![Vector3::zeros(); ns];
    for (k, &p) in values.iter().enumerate() {
        if p != 0.0 {
            for s in 0..ns {
                fields[s] += resp[k][s].0 * p;
                jacobians[s] += resp[k][s].1 * p;
            }
        }
    }
    let pattern = PixelPattern::new(*grid, values)?;
    Ok(ShapeReport {
        fractional_pixels: pattern.fractional_count(1e-9),
        pattern,
        objective: sol.objective,
        curvatures: jacobians.iter().map(|j| j.transpose() * j).collect(),
        jacobians,
        fields,
        certificate: sol.certificate,
        equality_rows: m,
        iterations: sol.iterations,
    })
}

#[derive(Debug, Clone)]
pub struct Extraction {
    pub layout: ElectrodeLayout,
    /// Number of 4-connected RF regions.
    pub fragmentation: usize,
}

type Corner = (i64, i64);

/// Closed pixel-edge loops around the cells where `mask` is set, with the
/// set cells on the left (outer boundaries counter-clockwise, holes
/// clockwise). At a corner touched by two diagonal cells the loop turns
/// left, so diagonal neighbours stay separate regions.
fn boundary_loops(nx: usize, ny: usize, mask: &[bool]) -> Vec<Vec<Corner>> {
    let at = |i: i64, j: i64| {
        i >= 0 && j >= 0 && (i as usize) < nx && (j as usize) < ny && mask[j as usize * nx + i as usize]
    };
    let mut out_edges: HashMap<Corner, Vec<Corner>> = HashMap::new();
    let mut edges: Vec<(Corner, Corner)> = Vec::new();
    for j in 0..ny as i64 {
        for i in 0..nx as i64 {
            if !at(i, j) {
                continue;
            }
            if !at(i, j - 1) {
                edges.push(((i, j), (i + 1, j)));
            }
            if !at(i + 1, j) {
                edges.push(((i + 1, j), (i + 1, j + 1)));
            }
            if !at(i, j + 1) {
                edges.push(((i + 1, j + 1), (i, j + 1)));
            }
            if !at(i - 1, j) {
                edges.push(((i, j + 1), (i, j)));
            }
        }
    }
    for &(a, b) in &edges {
        out_edges.entry(a).or_default().push(b);
    }
    let mut used: HashMap<(Corner, Corner), bool> = edges.iter().map(|e| (*e, false)).collect();
    let mut loops = Vec::new();
    for &(start, first) in &edges {
        if used[&(start, first)] {
            continue;
        }
        let mut ring = vec![start];
        let (mut prev, mut cur) = (start, first);
        used.insert((start, first), true);
        while cur != start || ring.len() < 2 {
            ring.push(cur);
            let dir = (cur.0 - prev.0, cur.1 - prev.1);
            let cands: Vec<Corner> = out_edges[&cur].iter().copied().filter(|n| !used[&(cur, *n)]).collect();
            // Rank by turn: left, straight, right.
            let turn = |n: &Corner| {
                let d = (n.0 - cur.0, n.1 - cur.1);
                let cross = dir.0 * d.1 - dir.1 * d.0;
                let dot = dir.0 * d.0 + dir.1 * d.1;
                if cross > 0 {
                    0
                } else if dot > 0 {
                    1
                } else {
                    2
                }
            };
            let Some(next) = cands.into_iter().min_by_key(turn) else { break };
            used.insert((cur, next), true);
            prev = cur;
            cur = next;
        }
        loops.push(ring);
    }
    loops.into_iter().flat_map(split_at_repeats).collect()
}

/// Split a loop that revisits a corner into simple loops.
fn split_at_repeats(ring: Vec<Corner>) -> Vec<Vec<Corner>> {
    let mut out = Vec::new();
    let mut stack: Vec<Corner> = Vec::new();
    let mut pos: HashMap<Corner, usize> = HashMap::new();
    for p in ring {
        if let Some(&k) = pos.get(&p) {
            let sub: Vec<Corner> = stack.drain(k..).collect();
            for q in &sub {
                pos.remove(q);
            }
            out.push(sub);
        }
        pos.insert(p, stack.len());
        stack.push(p);
    }
    if stack.len() >= 3 {
        out.push(stack);
    }
    out.retain(|r| r.len() >= 3);
    out
}

fn perpendicular_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len = dx.hypot(dy);
    if len == 0.0 {
        return (p[0] - a[0]).hypot(p[1] - a[1]);
    }
    ((p[0] - a[0]) * dy - (p[1] - a[1]) * dx).abs() / len
}

fn douglas_peucker_open(pts: &[Point2], tol: f64, keep: &mut [bool], lo: usize, hi: usize) {
    if hi <= lo + 1 {
        return;
    }
    let (mut best, mut dmax) = (lo, 0.0);
    for k in lo + 1..hi {
        let d = perpendicular_distance(pts[k], pts[lo], pts[hi]);
        if d > dmax {
            dmax = d;
            best = k;
        }
    }
    if dmax > tol {
        keep[best] = true;
        douglas_peucker_open(pts, tol, keep, lo, best);
        douglas_peucker_open(pts, tol, keep, best, hi);
    }
}

/// Douglas–Peucker on a closed ring, anchored at vertex 0 and the vertex
/// farthest from it.
pub fn simplify_ring(ring: &[Point2], tol: f64) -> Vec<Point2> {
    let n = ring.len();
    if n <= 4 {
        return ring.to_vec();
    }
    let far = (1..n)
        .max_by(|&a, &b| {
            let da = (ring[a][0] - ring[0][0]).hypot(ring[a][1] - ring[0][1]);
            let db = (ring[b][0] - ring[0][0]).hypot(ring[b][1] - ring[0][1]);
            da.total_cmp(&db)
        })
        .unwrap_or(n / 2);
    let mut closed = ring.to_vec();
    closed.push(ring[0]);
    let mut keep = vec![false; n + 1];
    keep[0] = true;
    keep[far] = true;
    keep[n] = true;
    douglas_peucker_open(&closed, tol, &mut keep, 0, far);
    douglas_peucker_open(&closed, tol, &mut keep, far, n);
    let out: Vec<Point2> = (0..n).filter(|&k| keep[k]).map(|k| ring[k]).collect();
    if out.len() >= 3 && signed_area(&out).abs() > 0.0 {
        out
    } else {
        ring.to_vec()
    }
}

/// Number of 4-connected components of `mask`.
pub fn count_components(nx: usize, ny: usize, mask: &[bool]) -> usize {
    let mut seen = vec![false; mask.len()];
    let mut count = 0;
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        count += 1;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(k) = stack.pop() {
            let (i, j) = (k % nx, k / nx);
            let mut push = |ii: usize, jj: usize| {
                let q = jj * nx + ii;
                if mask[q] && !seen[q] {
                    seen[q] = true;
                    stack.push(q);
                }
            };
            if i > 0 {
                push(i - 1, j);
            }
            if i + 1 < nx {
                push(i + 1, j);
            }
            if j > 0 {
                push(i, j - 1);
            }
            if j + 1 < ny {
                push(i, j + 1);
            }
        }
    }
    count
}

/// Contour the pattern at `threshold` into an RF electrode (pixels with
/// value ≥ threshold) and a GROUND electrode covering the rest of the grid
/// rectangle.
pub fn extract_polygons(pattern: &PixelPattern, threshold: f64) -> Result<Extraction, ShapeError> {
    let g = pattern.grid;
    let mask: Vec<bool> = pattern.values.iter().map(|v| *v >= threshold).collect();
    if !mask.iter().any(|m| *m) {
        return Err(ShapeError::EmptyPattern);
    }
    let loops = boundary_loops(g.nx, g.ny, &mask);
    let tol = g.pitch / 4.0;
    let rf_rings: Vec<Vec<Point2>> = loops
        .iter()
        .map(|l| {
            let ring: Vec<Point2> = l.iter().map(|&(u, v)| g.to_plane(u as f64, v as f64)).collect();
            simplify_ring(&ring, tol)
        })
        .collect();
    let fragmentation = count_components(g.nx, g.ny, &mask);

    let mut electrodes = vec![Electrode::new("rf", Role::Rf, rf_rings.clone())];
    if mask.iter().any(|m| !*m) {
        let rect = vec![
            g.to_plane(0.0, 0.0),
            g.to_plane(g.nx as f64, 0.0),
            g.to_plane(g.nx as f64, g.ny as f64),
            g.to_plane(0.0, g.ny as f64),
        ];
        let mut rings = vec![rect];
        rings.extend(rf_rings.into_iter().map(|mut r| {
            r.reverse();
            r
        }));
        electrodes.push(Electrode::new("ground", Role::Ground, rings));
    }
    let layout = ElectrodeLayout::new(Frame::default(), electrodes)?;
    Ok(Extraction { layout, fragmentation })
}
