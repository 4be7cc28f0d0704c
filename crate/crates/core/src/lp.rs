//! Dense bounded-variable revised simplex.
//!
//! Solves `maximize cᵀx  subject to  A x = b,  0 ≤ x ≤ u` with `u_j` possibly
//! infinite. Sized for problems with few equality rows and many columns
//! (pixel patterns), where the basis inverse is a small dense matrix that is
//! simply refactored every iteration.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("linear program is infeasible (phase-one residual {0:e})")]
    Infeasible(f64),
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("simplex iteration limit reached")]
    IterationLimit,
    #[error("problem dimensions are inconsistent")]
    Dimension,
    #[error("basis matrix became singular")]
    SingularBasis,
}

#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub objective: DVector<f64>,
    pub constraints: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub upper: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certificate {
    /// `max |A x − b|` relative to the row scale.
    pub primal_residual: f64,
    /// Largest bound violation of `x`.
    pub bound_violation: f64,
    /// Largest reduced cost with the wrong sign for its bound status.
    pub dual_infeasibility: f64,
    /// `max_j (z_lower,j · x_j + z_upper,j · (u_j − x_j))`, relative to `|c|`.
    pub complementarity: f64,
}

impl Certificate {
    pub fn worst(&self) -> f64 {
        self.primal_residual.max(self.bound_violation).max(self.dual_infeasibility).max(self.complementarity)
    }
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    /// Row duals `y` with `c − Aᵀy` the reduced costs.
    pub duals: DVector<f64>,
    pub basis: Vec<usize>,
    pub iterations: usize,
    pub certificate: Certificate,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Status {
    Basic,
    Lower,
    Upper,
}

const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-9;
const PERTURBATION: f64 = 1e-7;

struct Simplex<'a> {
    a: &'a DMatrix<f64>,
    b: &'a DVector<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    status: Vec<Status>,
    basis: Vec<usize>,
    x: DVector<f64>,
    iterations: usize,
    max_iterations: usize,
}

impl<'a> Simplex<'a> {
    fn basis_matrix(&self) -> DMatrix<f64> {
        let m = self.a.nrows();
        DMatrix::from_fn(m, m, |i, k| self.a[(i, self.basis[k])])
    }

    /// Recompute basic values from the nonbasic ones.
    fn refresh(&mut self, binv: &DMatrix<f64>) {
        let mut r = self.b.clone();
        for j in 0..self.a.ncols() {
            if self.status[j] != Status::Basic && self.x[j] != 0.0 {
                r.axpy(-self.x[j], &self.a.column(j), 1.0);
            }
        }
        let xb = binv * r;
        for (k, &j) in self.basis.iter().enumerate() {
            self.x[j] = xb[k];
        }
    }

    fn run(&mut self, c: &DVector<f64>, stop_at: f64) -> Result<(DMatrix<f64>, DVector<f64>), LpError> {
        let n = self.a.ncols();
        let mut stall = 0usize;
        let mut last_obj = f64::NEG_INFINITY;
        let mut skip = vec![false; n];
        loop {
            let binv = self.basis_matrix().try_inverse().ok_or(LpError::SingularBasis)?;
            self.refresh(&binv);
            let cb = DVector::from_iterator(self.basis.len(), self.basis.iter().map(|&j| c[j]));
            let y = binv.transpose() * cb;
            let obj = c.dot(&self.x);
            if obj > last_obj + 1e-12 * obj.abs().max(1.0) {
                stall = 0;
                last_obj = obj;
            } else {
                stall += 1;
            }
            let bland = stall > 50;
            if obj >= stop_at {
                return Ok((binv, y));
            }

            // Entering variable.
            let mut enter: Option<(usize, f64, f64)> = None;
            for j in 0..n {
                let st = self.status[j];
                if st == Status::Basic || self.upper[j] == self.lower[j] || skip[j] {
                    continue;
                }
                let d = c[j] - self.a.column(j).dot(&y);
                let dir = match st {
                    Status::Lower if d > COST_TOL => 1.0,
                    Status::Upper if d < -COST_TOL => -1.0,
                    _ => continue,
                };
                if bland {
                    enter = Some((j, d, dir));
                    break;
                }
                if enter.is_none_or(|(_, best, _)| d.abs() > best.abs()) {
                    enter = Some((j, d, dir));
                }
            }
            let Some((j, d_enter, dir)) = enter else {
                return Ok((binv, y));
            };
            if self.iterations >= self.max_iterations {
                return Err(LpError::IterationLimit);
            }
            self.iterations += 1;

            let w = &binv * self.a.column(j);
            // Step θ ≥ 0 moves x_j by dir·θ and x_B by −dir·θ·w.
            let mut theta = self.upper[j] - self.lower[j];
            let mut leave: Option<(usize, Status, f64)> = None;
            for (k, &bj) in self.basis.iter().enumerate() {
                let delta = -dir * w[k];
                if delta.abs() <= PIVOT_TOL {
                    continue;
                }
                let xb = self.x[bj];
                let (limit, to) = if delta < 0.0 {
                    ((xb - self.lower[bj]).max(0.0) / -delta, Status::Lower)
                } else if self.upper[bj].is_finite() {
                    (((self.upper[bj] - xb).max(0.0)) / delta, Status::Upper)
                } else {
                    continue;
                };
                let take = match leave {
                    None => limit <= theta,
                    Some((kk, _, piv)) => {
                        let tie = limit <= theta + 1e-12;
                        limit < theta - 1e-12
                            || (tie && !bland && delta.abs() > piv)
                            || (tie && bland && bj < self.basis[kk])
                    }
                };
                if take {
                    theta = limit.min(theta);
                    leave = Some((k, to, delta.abs()));
                }
            }
            if !theta.is_finite() {
                // A ray with round-off-level gain is a zero-cost ray.
                if d_enter.abs() < 1e-7 {
                    skip[j] = true;
                    self.iterations -= 1;
                    continue;
                }
                return Err(LpError::Unbounded);
            }
            skip.iter_mut().for_each(|s| *s = false);
            match leave {
                None => {
                    // Bound flip.
                    self.status[j] = if dir > 0.0 { Status::Upper } else { Status::Lower };
                    self.x[j] = if dir > 0.0 { self.upper[j] } else { self.lower[j] };
                }
                Some((k, to, _)) => {
                    let out = self.basis[k];
                    self.status[out] = to;
                    self.x[out] = if to == Status::Upper { self.upper[out] } else { self.lower[out] };
                    self.basis[k] = j;
                    self.status[j] = Status::Basic;
                    self.x[j] += dir * theta;
                }
            }
        }
    }

    /// Move every nonbasic variable onto its current bound.
    fn snap_nonbasic(&mut self) {
        for j in 0..self.a.ncols() {
            match self.status[j] {
                Status::Lower => self.x[j] = self.lower[j],
                Status::Upper => self.x[j] = self.upper[j],
                Status::Basic => {}
            }
        }
    }

    /// Bounded dual simplex: restores primal feasibility while keeping the
    /// reduced costs of a maximization dual feasible.
    fn dual_repair(&mut self, c: &DVector<f64>) -> Result<(), LpError> {
        let n = self.a.ncols();
        loop {
            let binv = self.basis_matrix().try_inverse().ok_or(LpError::SingularBasis)?;
            self.refresh(&binv);
            let mut worst: Option<(usize, f64, bool)> = None;
            for (k, &bj) in self.basis.iter().enumerate() {
                let xb = self.x[bj];
                let (viol, below) = if xb < self.lower[bj] - FEAS_TOL {
                    (self.lower[bj] - xb, true)
                } else if xb > self.upper[bj] + FEAS_TOL {
                    (xb - self.upper[bj], false)
                } else {
                    continue;
                };
                if worst.is_none_or(|(_, v, _)| viol > v) {
                    worst = Some((k, viol, below));
                }
            }
            let Some((k, _, below)) = worst else {
                return Ok(());
            };
            if self.iterations >= self.max_iterations {
                return Err(LpError::IterationLimit);
            }
            self.iterations += 1;
            let cb = DVector::from_iterator(self.basis.len(), self.basis.iter().map(|&j| c[j]));
            let y = binv.transpose() * cb;
            let row = binv.row(k);
            let mut enter: Option<(usize, f64)> = None;
            for j in 0..n {
                let st = self.status[j];
                if st == Status::Basic || self.upper[j] == self.lower[j] {
                    continue;
                }
                let alpha = row.dot(&self.a.column(j).transpose());
                if alpha.abs() <= PIVOT_TOL {
                    continue;
                }
                // x_Bk changes by −α·Δx_j.
                let eligible = match (st, below) {
                    (Status::Lower, true) | (Status::Upper, false) => alpha < 0.0,
                    (Status::Upper, true) | (Status::Lower, false) => alpha > 0.0,
                    _ => false,
                };
                if !eligible {
                    continue;
                }
                let d = c[j] - self.a.column(j).dot(&y);
                let ratio = d.abs() / alpha.abs();
                if enter.is_none_or(|(_, r)| ratio < r) {
                    enter = Some((j, ratio));
                }
            }
            let Some((j, _)) = enter else {
                return Err(LpError::Infeasible(0.0));
            };
            let out = self.basis[k];
            if below {
                self.status[out] = Status::Lower;
                self.x[out] = self.lower[out];
            } else {
                self.status[out] = Status::Upper;
                self.x[out] = self.upper[out];
            }
            self.basis[k] = j;
            self.status[j] = Status::Basic;
        }
    }
}

impl LinearProgram {
    pub fn new(
        objective: DVector<f64>,
        constraints: DMatrix<f64>,
        rhs: DVector<f64>,
        upper: DVector<f64>,
    ) -> Result<Self, LpError> {
        let (m, n) = constraints.shape();
        if objective.len() != n || rhs.len() != m || upper.len() != n || upper.iter().any(|u| *u < 0.0 || u.is_nan()) {
            return Err(LpError::Dimension);
        }
        Ok(Self { objective, constraints, rhs, upper })
    }

    pub fn solve(&self) -> Result<LpSolution, LpError> {
        let (m, n) = self.constraints.shape();
        // Row-normalize, flip rows so b ≥ 0, append one artificial per row.
        let mut a = DMatrix::zeros(m, n + m);
        let mut b = DVector::zeros(m);
        let mut row_scale = vec![1.0; m];
        for i in 0..m {
            let norm = self.constraints.row(i).amax().max(self.rhs[i].abs()).max(f64::MIN_POSITIVE);
            let sign = if self.rhs[i] < 0.0 { -1.0 } else { 1.0 };
            row_scale[i] = sign / norm;
            for j in 0..n {
                a[(i, j)] = self.constraints[(i, j)] * row_scale[i];
            }
            a[(i, n + i)] = 1.0;
            b[i] = self.rhs[i] * row_scale[i];
        }
        let mut upper: Vec<f64> = self.upper.iter().copied().collect();
        upper.extend(std::iter::repeat_n(f64::INFINITY, m));
        // Crash: a positive unit column can replace a row's artificial.
        let mut basis: Vec<usize> = (n..n + m).collect();
        for (j, &uj) in upper.iter().enumerate().take(n) {
            let col = a.column(j);
            let nz: Vec<usize> = (0..m).filter(|&i| col[i] != 0.0).collect();
            if let [i] = nz[..] {
                if col[i] > 0.0 && basis[i] >= n && uj >= b[i] / col[i] {
                    basis[i] = j;
                }
            }
        }
        let mut status = vec![Status::Lower; n + m];
        for &j in &basis {
            status[j] = Status::Basic;
        }
        let mut sx = Simplex {
            a: &a,
            b: &b,
            lower: vec![0.0; n + m],
            upper,
            status,
            basis,
            x: DVector::zeros(n + m),
            iterations: 0,
            max_iterations: 50 * (n + m) + 1000,
        };

        let mut phase1 = DVector::zeros(n + m);
        for i in 0..m {
            phase1[n + i] = -1.0;
        }
        sx.run(&phase1, -FEAS_TOL * (1.0 + b.amax()))?;
        let infeas: f64 = (n..n + m).map(|j| sx.x[j].abs()).sum();
        if infeas > FEAS_TOL * (1.0 + b.amax()) {
            return Err(LpError::Infeasible(infeas));
        }
        // Fix artificials at zero and pivot basic ones out where possible.
        for j in n..n + m {
            sx.upper[j] = 0.0;
            if sx.status[j] != Status::Basic {
                sx.status[j] = Status::Lower;
                sx.x[j] = 0.0;
            }
        }
        let binv = sx.basis_matrix().try_inverse().ok_or(LpError::SingularBasis)?;
        for k in 0..m {
            let bj = sx.basis[k];
            if bj < n {
                continue;
            }
            let row = binv.row(k);
            let pick = (0..n)
                .filter(|&j| sx.status[j] != Status::Basic)
                .map(|j| (j, row.dot(&a.column(j).transpose()).abs()))
                .filter(|(_, v)| *v > 1e-7)
                .max_by(|x, y| x.1.total_cmp(&y.1));
            if let Some((j, _)) = pick {
                // Degenerate pivot: the artificial sits at zero.
                sx.status[bj] = Status::Lower;
                sx.x[bj] = 0.0;
                sx.basis[k] = j;
                sx.status[j] = Status::Basic;
            }
        }

        let cscale = self.objective.amax().max(f64::MIN_POSITIVE);
        let mut c = DVector::zeros(n + m);
        for j in 0..n {
            c[j] = self.objective[j] / cscale;
        }
        // Phase two on slightly widened bounds, which breaks the degeneracy
        // of vertices such as the origin of a homogeneous system. Restoring
        // the bounds keeps the basis dual feasible; a dual simplex pass then
        // recovers primal feasibility.
        let original_upper = sx.upper.clone();
        for j in 0..n {
            let shift = PERTURBATION * (1.0 + (j as f64 * 0.618_033_988_749_895).fract());
            sx.lower[j] = -shift;
            if sx.upper[j].is_finite() {
                sx.upper[j] += shift * (1.0 + (j as f64 * 0.414_213_562_373_095).fract());
            }
        }
        sx.snap_nonbasic();
        sx.run(&c, f64::INFINITY)?;
        sx.lower.iter_mut().for_each(|l| *l = 0.0);
        sx.upper = original_upper;
        sx.snap_nonbasic();
        sx.dual_repair(&c)?;
        let (_, y_scaled) = sx.run(&c, f64::INFINITY)?;

        let x = DVector::from_iterator(n, (0..n).map(|j| sx.x[j].clamp(0.0, self.upper[j])));
        let duals = DVector::from_iterator(m, (0..m).map(|i| y_scaled[i] * row_scale[i] * cscale));
        let certificate = self.certify(&x, &duals);
        Ok(LpSolution {
            objective: self.objective.dot(&x),
            x,
            duals,
            basis: sx.basis.iter().copied().filter(|&j| j < n).collect(),
            iterations: sx.iterations,
            certificate,
        })
    }

    /// Optimality certificate of a primal point and row duals.
    pub fn certify(&self, x: &DVector<f64>, y: &DVector<f64>) -> Certificate {
        let (m, n) = self.constraints.shape();
        let r = &self.constraints * x - &self.rhs;
        let primal_residual = (0..m)
            .map(|i| {
                let scale = self.constraints.row(i).amax().max(self.rhs[i].abs()).max(f64::MIN_POSITIVE);
                r[i].abs() / scale
            })
            .fold(0.0, f64::max);
        let bound_violation = (0..n).map(|j| (-x[j]).max(x[j] - self.upper[j]).max(0.0)).fold(0.0, f64::max);
        let d = &self.objective - self.constraints.transpose() * y;
        let cscale = self.objective.amax().max(f64::MIN_POSITIVE);
        let mut dual_infeasibility: f64 = 0.0;
        let mut complementarity: f64 = 0.0;
        for j in 0..n {
            let dj = d[j] / cscale;
            let z_low = (-dj).max(0.0);
            let z_up = dj.max(0.0);
            if self.upper[j].is_finite() {
                // Any reduced cost is dual feasible for a boxed variable;
                // it must sit at the bound its sign points to.
                let span = self.upper[j].max(f64::MIN_POSITIVE);
                complementarity = complementarity.max(z_low * x[j] / span).max(z_up * (self.upper[j] - x[j]) / span);
            } else {
                dual_infeasibility = dual_infeasibility.max(z_up);
                complementarity = complementarity.max(z_low * x[j]);
            }
        }
        Certificate { primal_residual, bound_violation, dual_infeasibility, complementarity }
    }
}
