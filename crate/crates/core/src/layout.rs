//! Electrode layouts: planar polygonal electrodes with roles, the JSON layout
//! document, validation and rigid rotation.
//!
//! Every electrode is a set of rings in the `z = 0` plane, coordinates in
//! meters. Ring orientation carries the sign: counter-clockwise rings add
//! area, clockwise rings are holes. Gaps between electrodes are not stored;
//! the rest of the plane is grounded.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, Point2, RingDefect, SegmentRelation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    #[serde(rename = "RF")]
    Rf,
    #[serde(rename = "CONTROL")]
    Control,
    #[serde(rename = "GROUND")]
    Ground,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Rf => "RF",
            Role::Control => "CONTROL",
            Role::Ground => "GROUND",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Electrode {
    pub id: String,
    pub role: Role,
    pub rings: Vec<Vec<Point2>>,
}

impl Electrode {
    pub fn new(id: impl Into<String>, role: Role, rings: Vec<Vec<Point2>>) -> Self {
        Self { id: id.into(), role, rings }
    }

    /// Net signed area (holes subtract).
    pub fn area(&self) -> f64 {
        self.rings.iter().map(|r| geometry::signed_area(r)).sum()
    }

    /// Winding sum of all rings around `p`; positive inside the electrode.
    pub fn winding(&self, p: Point2) -> i32 {
        self.rings.iter().map(|r| geometry::winding_number(r, p)).sum()
    }

    pub fn contains(&self, p: Point2) -> bool {
        self.winding(p) > 0
    }

    fn edges(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        self.rings.iter().flat_map(|r| {
            let n = r.len();
            (0..n).map(move |i| (r[i], r[(i + 1) % n]))
        })
    }
}

/// Chip coordinate frame. The origin is the array center in the electrode
/// plane; `z` is the chip normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub origin_m: Point2,
}

impl Default for Frame {
    fn default() -> Self {
        Self { origin_m: [0.0, 0.0] }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LayoutError {
    #[error("layout document does not match the schema: {0}")]
    Schema(String),
    #[error("electrode '{electrode}' ring {ring}: {defect}")]
    BadRing { electrode: String, ring: usize, defect: String },
    #[error("electrode '{0}' has no rings")]
    NoRings(String),
    #[error("electrode '{0}' has non-positive net area")]
    NegativeArea(String),
    #[error("duplicate electrode id '{0}'")]
    DuplicateId(String),
    #[error("more than one RF electrode ('{0}' and '{1}')")]
    MultipleRf(String, String),
    #[error("electrodes '{0}' and '{1}' overlap")]
    Overlap(String, String),
}

fn describe(defect: RingDefect) -> String {
    match defect {
        RingDefect::TooFewVertices => "fewer than three vertices".into(),
        RingDefect::NonFinite => "non-finite coordinate".into(),
        RingDefect::ZeroLengthEdge(i) => format!("zero-length edge at vertex {i}"),
        RingDefect::ZeroArea => "zero area".into(),
        RingDefect::SelfIntersection(i, j) => format!("self-intersecting (edges {i} and {j})"),
    }
}

/// On-disk shape of a layout; [`ElectrodeLayout`] is its validated form.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayoutDocument {
    frame: Frame,
    electrodes: Vec<Electrode>,
}

/// A validated electrode layout. Immutable once constructed.
#[derive(Debug, Clone, PartialEq)]
pub struct ElectrodeLayout {
    frame: Frame,
    electrodes: Vec<Electrode>,
    control_indices: Vec<usize>,
    rf_index: Option<usize>,
}

impl ElectrodeLayout {
    pub fn new(frame: Frame, electrodes: Vec<Electrode>) -> Result<Self, LayoutError> {
        let mut ids = HashSet::new();
        let mut rf_index: Option<usize> = None;
        for (k, e) in electrodes.iter().enumerate() {
            if !ids.insert(e.id.as_str()) {
                return Err(LayoutError::DuplicateId(e.id.clone()));
            }
            if e.rings.is_empty() {
                return Err(LayoutError::NoRings(e.id.clone()));
            }
            for (ri, ring) in e.rings.iter().enumerate() {
                geometry::check_simple(ring).map_err(|d| LayoutError::BadRing {
                    electrode: e.id.clone(),
                    ring: ri,
                    defect: describe(d),
                })?;
            }
            if e.area() <= 0.0 {
                return Err(LayoutError::NegativeArea(e.id.clone()));
            }
            if e.role == Role::Rf {
                if let Some(prev) = rf_index {
                    return Err(LayoutError::MultipleRf(electrodes[prev].id.clone(), e.id.clone()));
                }
                rf_index = Some(k);
            }
        }
        for i in 0..electrodes.len() {
            for j in (i + 1)..electrodes.len() {
                if overlapping(&electrodes[i], &electrodes[j]) {
                    return Err(LayoutError::Overlap(electrodes[i].id.clone(), electrodes[j].id.clone()));
                }
            }
        }
        let control_indices =
            electrodes.iter().enumerate().filter(|(_, e)| e.role == Role::Control).map(|(k, _)| k).collect();
        Ok(Self { frame, electrodes, control_indices, rf_index })
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn electrodes(&self) -> &[Electrode] {
        &self.electrodes
    }

    pub fn control_count(&self) -> usize {
        self.control_indices.len()
    }

    /// Control electrodes in index order (index `n` here is control
    /// electrode `n + 1`).
    pub fn controls(&self) -> impl Iterator<Item = &Electrode> + '_ {
        self.control_indices.iter().map(|&k| &self.electrodes[k])
    }

    pub fn rf(&self) -> Option<&Electrode> {
        self.rf_index.map(|k| &self.electrodes[k])
    }

    pub fn electrode(&self, id: &str) -> Option<&Electrode> {
        self.electrodes.iter().find(|e| e.id == id)
    }

    /// Rigid rotation about the frame origin. Ids, roles and electrode order
    /// are preserved.
    pub fn rotated(&self, angle: f64) -> ElectrodeLayout {
        let o = self.frame.origin_m;
        let electrodes = self
            .electrodes
            .iter()
            .map(|e| Electrode {
                id: e.id.clone(),
                role: e.role,
                rings: e
                    .rings
                    .iter()
                    .map(|r| r.iter().map(|&p| geometry::rotate_point(p, o, angle)).collect())
                    .collect(),
            })
            .collect();
        ElectrodeLayout {
            frame: self.frame,
            electrodes,
            control_indices: self.control_indices.clone(),
            rf_index: self.rf_index,
        }
    }

    /// For every electrode of `self`, the index of a geometrically identical
    /// electrode of `other` with the same role (rings equal as a multiset,
    /// vertices within `tol`). `None` if no such bijection exists.
    pub fn match_electrodes(&self, other: &ElectrodeLayout, tol: f64) -> Option<Vec<usize>> {
        let mut used = vec![false; other.electrodes.len()];
        let mut map = Vec::with_capacity(self.electrodes.len());
        for e in &self.electrodes {
            let hit = other
                .electrodes
                .iter()
                .enumerate()
                .position(|(k, f)| !used[k] && f.role == e.role && same_ring_multiset(&e.rings, &f.rings, tol))?;
            used[hit] = true;
            map.push(hit);
        }
        Some(map)
    }

    /// Map a permutation of all electrodes to a permutation of the control
    /// indices.
    pub fn control_permutation(&self, other: &ElectrodeLayout, electrode_map: &[usize]) -> Vec<usize> {
        self.control_indices
            .iter()
            .map(|&k| {
                let target = electrode_map[k];
                other.control_indices.iter().position(|&c| c == target).expect("electrode map preserves roles")
            })
            .collect()
    }

    pub fn parse(text: &str) -> Result<Self, LayoutError> {
        let doc: LayoutDocument = serde_json::from_str(text).map_err(|e| LayoutError::Schema(e.to_string()))?;
        Self::new(doc.frame, doc.electrodes)
    }

    /// Serialise to the layout document: JSON with one vertex per line.
    pub fn to_document(&self) -> String {
        let num = |x: f64| serde_json::to_string(&x).expect("finite coordinate");
        let mut out = String::new();
        out.push_str("{\n");
        let _ = writeln!(
            out,
            "  \"frame\": {{\"origin_m\": [{}, {}]}},",
            num(self.frame.origin_m[0]),
            num(self.frame.origin_m[1])
        );
        out.push_str("  \"electrodes\": [\n");
        for (ei, e) in self.electrodes.iter().enumerate() {
            out.push_str("    {\n");
            let _ = writeln!(out, "      \"id\": {},", serde_json::to_string(&e.id).unwrap());
            let _ = writeln!(out, "      \"role\": \"{}\",", e.role.as_str());
            out.push_str("      \"rings\": [\n");
            for (ri, ring) in e.rings.iter().enumerate() {
                out.push_str("        [\n");
                for (vi, p) in ring.iter().enumerate() {
                    let sep = if vi + 1 == ring.len() { "" } else { "," };
                    let _ = writeln!(out, "          [{}, {}]{}", num(p[0]), num(p[1]), sep);
                }
                let sep = if ri + 1 == e.rings.len() { "" } else { "," };
                let _ = writeln!(out, "        ]{sep}");
            }
            out.push_str("      ]\n");
            let sep = if ei + 1 == self.electrodes.len() { "" } else { "," };
            let _ = writeln!(out, "    }}{sep}");
        }
        out.push_str("  ]\n}\n");
        out
    }
}

fn same_ring_multiset(a: &[Vec<Point2>], b: &[Vec<Point2>], tol: f64) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut used = vec![false; b.len()];
    for ra in a {
        match b.iter().enumerate().position(|(k, rb)| !used[k] && geometry::rings_match(ra, rb, tol)) {
            Some(k) => used[k] = true,
            None => return false,
        }
    }
    true
}

/// Points just inside `e`, one next to every edge, that are genuinely inside
/// the electrode region.
fn interior_probes(e: &Electrode) -> Vec<Point2> {
    e.edges()
        .filter_map(|(a, b)| {
            let len = geometry::dist(a, b);
            let off = 1e-6 * len;
            let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
            // Region lies to the left of every directed edge.
            let p = [mid[0] - off * (b[1] - a[1]) / len, mid[1] + off * (b[0] - a[0]) / len];
            e.contains(p).then_some(p)
        })
        .collect()
}

fn overlapping(a: &Electrode, b: &Electrode) -> bool {
    for (a0, a1) in a.edges() {
        for (b0, b1) in b.edges() {
            if geometry::segment_relation(a0, a1, b0, b1) == SegmentRelation::Cross {
                return true;
            }
        }
    }
    interior_probes(b).into_iter().any(|p| a.contains(p)) || interior_probes(a).into_iter().any(|p| b.contains(p))
}
