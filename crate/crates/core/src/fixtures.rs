//! Synthetic layouts used by the tests, the acceptance suite and the CLI
//! examples.
//!
//! The triangular array is a stand-in for a three-site array with 80 µm side
//! length: a single RF electrode (a disk with four holes) enclosing 30
//! control electrodes grouped into four islands. One island sits under each
//! trap site, one under the array center. The geometry is exactly symmetric
//! under rotations by 2π/3 about the origin, which maps control electrode
//! `n` of island `k` onto electrode `n` of island `k + 1`.

use std::f64::consts::PI;

use nalgebra::Vector3;

use crate::geometry::{circle, rotate_point, Point2};
use crate::layout::{Electrode, ElectrodeLayout, Frame, Role};
use crate::trap::{SearchOptions, SearchRegion, SiteKind, TrapError, TrapModel, TrapSite};

const UM: f64 = 1e-6;

/// Dimensions of the triangular fixture, all in meters.
#[derive(Debug, Clone, Copy)]
pub struct TriangularArraySpec {
    pub rf_outer_radius: f64,
    pub center_island_radius: f64,
    pub site_island_radius: f64,
    pub site_island_inner_radius: f64,
    /// Distance of the site-island centers from the array center.
    pub site_island_offset: f64,
    pub outer_vertices: usize,
    pub island_vertices: usize,
}

impl Default for TriangularArraySpec {
    fn default() -> Self {
        Self {
            rf_outer_radius: 148.0 * UM,
            center_island_radius: 22.9 * UM,
            site_island_radius: 18.0 * UM,
            site_island_inner_radius: 9.0 * UM,
            site_island_offset: 53.74 * UM,
            outer_vertices: 96,
            island_vertices: 60,
        }
    }
}

/// Design side length of the fixture's trap triangle.
pub const TRIANGULAR_SIDE: f64 = 80.0 * UM;

/// Nominal trap-site positions T0, T1, T2 of the triangular fixture (found
/// by the stationary-point search; kept here as seeds and for labelling).
pub fn triangular_sites() -> [[f64; 3]; 3] {
    let rho = TRIANGULAR_SIDE / 3f64.sqrt();
    let h = 30.0 * UM;
    [[-rho, 0.0, h], [rho / 2.0, -rho * 3f64.sqrt() / 2.0, h], [rho / 2.0, rho * 3f64.sqrt() / 2.0, h]]
}

fn reversed(mut ring: Vec<Point2>) -> Vec<Point2> {
    ring.reverse();
    ring
}

fn rotate_ring(ring: &[Point2], angle: f64) -> Vec<Point2> {
    ring.iter().map(|&p| rotate_point(p, [0.0, 0.0], angle)).collect()
}

/// Pie slice from `center` over arc vertices `start..=start + span` of `arc`.
fn pie(center: Point2, arc: &[Point2], start: usize, span: usize) -> Vec<Point2> {
    let n = arc.len();
    let mut ring = vec![center];
    ring.extend((0..=span).map(|k| arc[(start + k) % n]));
    ring
}

/// Annular sector between two concentric rings sharing vertex angles.
fn annular_sector(outer: &[Point2], inner: &[Point2], start: usize, span: usize) -> Vec<Point2> {
    let n = outer.len();
    let mut ring: Vec<Point2> = (0..=span).map(|k| outer[(start + k) % n]).collect();
    ring.extend((0..=span).rev().map(|k| inner[(start + k) % n]));
    ring
}

pub fn triangular_array_with(spec: &TriangularArraySpec) -> ElectrodeLayout {
    let nv = spec.island_vertices;
    assert!(nv.is_multiple_of(60), "island rings must split into 3, 4 and 5 sectors");

    // Island under T0, centered on the negative x axis.
    let c0 = [-spec.site_island_offset, 0.0];
    let site_outer = circle(c0, spec.site_island_radius, nv, PI);
    let site_inner = circle(c0, spec.site_island_inner_radius, nv, PI);
    let mut island0: Vec<Vec<Point2>> = Vec::new();
    let q = nv / 4;
    let inner_offset = 7 * nv / 60;
    for m in 0..4 {
        island0.push(pie(c0, &site_inner, inner_offset + m * q, q));
    }
    let f = nv / 5;
    for m in 0..5 {
        island0.push(annular_sector(&site_outer, &site_inner, m * f, f));
    }

    let center_ring = circle([0.0, 0.0], spec.center_island_radius, nv, 0.0);
    let mut rf_rings =
        vec![circle([0.0, 0.0], spec.rf_outer_radius, spec.outer_vertices, 0.0), reversed(center_ring.clone())];
    let mut electrodes = Vec::new();
    let mut id = 1;
    for k in 0..3 {
        let angle = 2.0 * PI * k as f64 / 3.0;
        rf_rings.push(reversed(rotate_ring(&site_outer, angle)));
        for ring in &island0 {
            electrodes.push(Electrode::new(id.to_string(), Role::Control, vec![rotate_ring(ring, angle)]));
            id += 1;
        }
    }
    let t = nv / 3;
    for m in 0..3 {
        electrodes.push(Electrode::new(id.to_string(), Role::Control, vec![pie([0.0, 0.0], &center_ring, m * t, t)]));
        id += 1;
    }
    electrodes.insert(0, Electrode::new("rf", Role::Rf, rf_rings));
    ElectrodeLayout::new(Frame::default(), electrodes).expect("fixture geometry is valid")
}

/// The 30-control-electrode, three-site triangular fixture.
pub fn triangular_array() -> ElectrodeLayout {
    triangular_array_with(&TriangularArraySpec::default())
}

/// A single ring trap: one RF annulus around a disk of four control
/// electrodes. The RF null lies on the z axis.
pub fn single_ring() -> ElectrodeLayout {
    let n = 60;
    let inner = circle([0.0, 0.0], 30.0 * UM, n, 0.0);
    let rf = Electrode::new("rf", Role::Rf, vec![circle([0.0, 0.0], 100.0 * UM, 96, 0.0), reversed(inner.clone())]);
    let mut electrodes = vec![rf];
    for m in 0..4 {
        electrodes.push(Electrode::new(
            (m + 1).to_string(),
            Role::Control,
            vec![pie([0.0, 0.0], &inner, m * n / 4, n / 4)],
        ));
    }
    ElectrodeLayout::new(Frame::default(), electrodes).expect("fixture geometry is valid")
}

/// Search box covering the triangular fixture's sites and the ancillary
/// minimum above the center.
pub fn triangular_search_region() -> SearchRegion {
    SearchRegion::new(
        Vector3::new(-100.0 * UM, -100.0 * UM, 10.0 * UM),
        Vector3::new(100.0 * UM, 100.0 * UM, 120.0 * UM),
        [7, 7, 6],
    )
    .expect("static region is valid")
}

/// Minima of a triangular-array model labelled T0, T1, T2 (nearest to the
/// nominal positions) plus the ancillary minimum closest to the z axis.
#[derive(Debug, Clone)]
pub struct LabelledSites {
    pub sites: [TrapSite; 3],
    pub ancillary: Option<TrapSite>,
    pub all: Vec<TrapSite>,
}

pub fn locate_triangular_sites(model: &TrapModel) -> Result<LabelledSites, TrapError> {
    locate_sites_near(model, &triangular_sites(), &triangular_search_region())
}

/// As [`locate_triangular_sites`] for arbitrary nominal positions. Each
/// nominal position takes the nearest minimum; the ancillary minimum is the
/// remaining one closest to the z axis.
pub fn locate_sites_near(
    model: &TrapModel,
    nominal: &[[f64; 3]; 3],
    region: &SearchRegion,
) -> Result<LabelledSites, TrapError> {
    let all = model.find_sites(region, &SearchOptions::default())?;
    let minima: Vec<&TrapSite> = all.iter().filter(|s| s.kind == SiteKind::Minimum).collect();
    let mut taken = vec![false; minima.len()];
    let mut picked = Vec::with_capacity(3);
    for n in nominal {
        let target = Vector3::from(*n);
        let best = (0..minima.len())
            .filter(|&k| !taken[k])
            .min_by(|&a, &b| {
                let da = (minima[a].position - target).norm();
                let db = (minima[b].position - target).norm();
                da.total_cmp(&db)
            })
            .ok_or(TrapError::NoStationaryPoint)?;
        taken[best] = true;
        picked.push(minima[best].clone());
    }
    let ancillary = (0..minima.len())
        .filter(|&k| !taken[k])
        .min_by(|&a, &b| minima[a].position.xy().norm().total_cmp(&minima[b].position.xy().norm()))
        .map(|k| minima[k].clone());
    let sites: [TrapSite; 3] = picked.try_into().expect("three picks");
    Ok(LabelledSites { sites, ancillary, all })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangular_array_topology() {
        let layout = triangular_array();
        assert_eq!(layout.control_count(), 30);
        assert!(layout.rf().is_some());
        let ids: Vec<_> = layout.controls().map(|e| e.id.clone()).collect();
        assert_eq!(ids.first().map(String::as_str), Some("1"));
        assert_eq!(ids.last().map(String::as_str), Some("30"));
    }

    #[test]
    fn islands_fill_the_rf_holes() {
        let layout = triangular_array();
        let rf_area = layout.rf().unwrap().area();
        let control_area: f64 = layout.controls().map(|e| e.area()).sum();
        let disk = layout.rf().unwrap().rings[0].clone();
        let disk_area = crate::geometry::signed_area(&disk);
        assert!((rf_area + control_area - disk_area).abs() < 1e-9 * disk_area);
    }

    #[test]
    fn single_ring_is_valid() {
        assert_eq!(single_ring().control_count(), 4);
    }
}
