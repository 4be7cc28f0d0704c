#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};

/// Basis potential of a set of rings (winding-signed) at `r`, by adaptive
/// quadrature. The inner y integral is done in closed form across each
/// vertical cross-section; the outer x integral is double exponential
/// quadrature split at every vertex abscissa.
pub fn quadrature_potential(rings: &[Vec<[f64; 2]>], r: [f64; 3]) -> f64 {
    let [x0, y0, z] = r;
    let mut xs: Vec<f64> = rings.iter().flatten().map(|p| p[0]).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let cross = |x: f64| -> f64 {
        let a2 = (x - x0).powi(2) + z * z;
        let f = |y: f64| {
            let t = y - y0;
            t / (a2 * (a2 + t * t).sqrt())
        };
        let mut acc = 0.0;
        for ring in rings {
            for i in 0..ring.len() {
                let a = ring[i];
                let b = ring[(i + 1) % ring.len()];
                let (lo, hi, s) = if a[0] < b[0] { (a[0], b[0], 1.0) } else { (b[0], a[0], -1.0) };
                if lo <= x && x < hi {
                    let y = a[1] + (b[1] - a[1]) * (x - a[0]) / (b[0] - a[0]);
                    acc -= s * f(y);
                }
            }
        }
        z * acc / (2.0 * PI)
    };
    xs.windows(2).map(|w| quadrature::integrate(cross, w[0], w[1], 1e-14).integral).sum()
}

pub fn rectangle(x0: f64, y0: f64, w: f64, h: f64) -> Vec<[f64; 2]> {
    vec![[x0, y0], [x0 + w, y0], [x0 + w, y0 + h], [x0, y0 + h]]
}

pub fn regular_polygon(c: [f64; 2], radius: f64, n: usize, phase: f64) -> Vec<[f64; 2]> {
    (0..n)
        .map(|k| {
            let t = phase + 2.0 * PI * k as f64 / n as f64;
            [c[0] + radius * t.cos(), c[1] + radius * t.sin()]
        })
        .collect()
}

/// Five test shapes in meters: rectangle, triangle, hexagon, L (non-convex)
/// and a square annulus (one hole).
pub fn oracle_shapes() -> Vec<(&'static str, Vec<Vec<[f64; 2]>>)> {
    let um = 1e-6;
    let mut hole = rectangle(-10.0 * um, -10.0 * um, 20.0 * um, 20.0 * um);
    hole.reverse();
    vec![
        ("rectangle", vec![rectangle(-20.0 * um, -7.0 * um, 45.0 * um, 18.0 * um)]),
        ("triangle", vec![vec![[-15.0 * um, -10.0 * um], [30.0 * um, -4.0 * um], [2.0 * um, 26.0 * um]]]),
        ("hexagon", vec![regular_polygon([3.0 * um, -2.0 * um], 22.0 * um, 6, 0.3)]),
        (
            "l_shape",
            vec![vec![
                [0.0, 0.0],
                [40.0 * um, 0.0],
                [40.0 * um, 12.0 * um],
                [12.0 * um, 12.0 * um],
                [12.0 * um, 35.0 * um],
                [0.0, 35.0 * um],
            ]],
        ),
        ("annulus", vec![rectangle(-30.0 * um, -30.0 * um, 60.0 * um, 60.0 * um), hole]),
    ]
}

/// `|⟨m|exp(iηX)|n⟩|` for all `m, n < keep`, from an eigendecomposition of
/// the position operator `X = a + a†` truncated at `dim`.
pub fn brute_force_displacement(eta: f64, dim: usize, keep: usize) -> DMatrix<f64> {
    let x = DMatrix::from_fn(dim, dim, |i, j| {
        if i + 1 == j {
            (j as f64).sqrt()
        } else if j + 1 == i {
            (i as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(x);
    let v = &eig.eigenvectors;
    DMatrix::from_fn(keep, keep, |m, n| {
        let (mut re, mut im) = (0.0, 0.0);
        for k in 0..dim {
            let w = v[(m, k)] * v[(n, k)];
            let ph = eta * eig.eigenvalues[k];
            re += w * ph.cos();
            im += w * ph.sin();
        }
        re.hypot(im)
    })
}
