//! Planar polygon primitives shared by the layout validator, the basis
//! potentials and the contour extractor.
//!
//! Rings are stored open (the closing edge from the last vertex back to the
//! first is implicit). Counter-clockwise rings have positive signed area.

pub type Point2 = [f64; 2];

pub fn signed_area(ring: &[Point2]) -> f64 {
    let n = ring.len();
    let mut acc = 0.0;
    for i in 0..n {
        let [x0, y0] = ring[i];
        let [x1, y1] = ring[(i + 1) % n];
        acc += x0 * y1 - x1 * y0;
    }
    0.5 * acc
}

pub fn perimeter(ring: &[Point2]) -> f64 {
    let n = ring.len();
    (0..n).map(|i| dist(ring[i], ring[(i + 1) % n])).sum()
}

#[inline]
pub fn dist(a: Point2, b: Point2) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[inline]
fn cross(o: Point2, a: Point2, b: Point2) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Orientation of `c` relative to the directed line `a -> b`, with a
/// tolerance scaled by the lengths involved.
pub fn orient(a: Point2, b: Point2, c: Point2) -> i8 {
    let v = cross(a, b, c);
    let scale = dist(a, b) * (dist(a, c) + dist(b, c));
    if v.abs() <= 1e-12 * scale {
        0
    } else if v > 0.0 {
        1
    } else {
        -1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentRelation {
    Disjoint,
    /// Segments share exactly one point (an endpoint or a T-junction).
    Touch,
    /// Interiors cross transversally.
    Cross,
    /// Collinear with an overlap of positive length.
    Overlap,
}

fn on_segment(p: Point2, a: Point2, b: Point2) -> bool {
    let len = dist(a, b);
    let tol = 1e-12 * len.max(f64::MIN_POSITIVE);
    p[0] >= a[0].min(b[0]) - tol
        && p[0] <= a[0].max(b[0]) + tol
        && p[1] >= a[1].min(b[1]) - tol
        && p[1] <= a[1].max(b[1]) + tol
}

pub fn segment_relation(p1: Point2, p2: Point2, q1: Point2, q2: Point2) -> SegmentRelation {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);

    if d1 == 0 && d2 == 0 && d3 == 0 && d4 == 0 {
        // Collinear: project on the dominant axis of p.
        let axis = if (p2[0] - p1[0]).abs() >= (p2[1] - p1[1]).abs() { 0 } else { 1 };
        let (a0, a1) = minmax(p1[axis], p2[axis]);
        let (b0, b1) = minmax(q1[axis], q2[axis]);
        let lo = a0.max(b0);
        let hi = a1.min(b1);
        let tol = 1e-12 * (a1 - a0).max(b1 - b0).max(f64::MIN_POSITIVE);
        return if hi - lo > tol {
            SegmentRelation::Overlap
        } else if hi - lo >= -tol {
            SegmentRelation::Touch
        } else {
            SegmentRelation::Disjoint
        };
    }
    if d1 * d2 < 0 && d3 * d4 < 0 {
        return SegmentRelation::Cross;
    }
    if (d1 == 0 && on_segment(p1, q1, q2))
        || (d2 == 0 && on_segment(p2, q1, q2))
        || (d3 == 0 && on_segment(q1, p1, p2))
        || (d4 == 0 && on_segment(q2, p1, p2))
    {
        return SegmentRelation::Touch;
    }
    SegmentRelation::Disjoint
}

fn minmax(a: f64, b: f64) -> (f64, f64) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RingDefect {
    TooFewVertices,
    NonFinite,
    ZeroLengthEdge(usize),
    ZeroArea,
    /// Edges `.0` and `.1` intersect.
    SelfIntersection(usize, usize),
}

/// Check that a ring is a simple closed polygon with at least three
/// vertices and non-zero area.
pub fn check_simple(ring: &[Point2]) -> Result<(), RingDefect> {
    let n = ring.len();
    if n < 3 {
        return Err(RingDefect::TooFewVertices);
    }
    if ring.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(RingDefect::NonFinite);
    }
    let scale = perimeter(ring);
    for i in 0..n {
        if dist(ring[i], ring[(i + 1) % n]) <= 1e-14 * scale {
            return Err(RingDefect::ZeroLengthEdge(i));
        }
    }
    if signed_area(ring).abs() <= 1e-14 * scale * scale {
        return Err(RingDefect::ZeroArea);
    }
    for i in 0..n {
        let (a0, a1) = (ring[i], ring[(i + 1) % n]);
        for j in (i + 1)..n {
            let (b0, b1) = (ring[j], ring[(j + 1) % n]);
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            let rel = segment_relation(a0, a1, b0, b1);
            let bad = if adjacent { rel == SegmentRelation::Overlap } else { rel != SegmentRelation::Disjoint };
            if bad {
                return Err(RingDefect::SelfIntersection(i, j));
            }
        }
    }
    Ok(())
}

/// Winding number of `ring` around `p` (positive for counter-clockwise).
/// Points on the boundary give an unspecified but finite answer.
pub fn winding_number(ring: &[Point2], p: Point2) -> i32 {
    let n = ring.len();
    let mut wn = 0;
    for i in 0..n {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        if a[1] <= p[1] {
            if b[1] > p[1] && cross(a, b, p) > 0.0 {
                wn += 1;
            }
        } else if b[1] <= p[1] && cross(a, b, p) < 0.0 {
            wn -= 1;
        }
    }
    wn
}

/// Drop vertices that are collinear with their neighbours.
pub fn remove_collinear(ring: &[Point2]) -> Vec<Point2> {
    let mut out: Vec<Point2> = ring.to_vec();
    loop {
        let n = out.len();
        if n < 3 {
            return out;
        }
        let mut removed = false;
        let mut i = 0;
        while i < out.len() && out.len() >= 3 {
            let m = out.len();
            let prev = out[(i + m - 1) % m];
            let next = out[(i + 1) % m];
            if orient(prev, out[i], next) == 0 {
                out.remove(i);
                removed = true;
            } else {
                i += 1;
            }
        }
        if !removed {
            return out;
        }
    }
}

fn point_in_triangle(p: Point2, a: Point2, b: Point2, c: Point2) -> bool {
    orient(a, b, p) >= 0 && orient(b, c, p) >= 0 && orient(c, a, p) >= 0
}

/// Ear-clipping triangulation of a simple counter-clockwise ring.
///
/// Collinear vertices are removed first so no zero-area triangle is emitted.
/// Returns `None` when no ear can be found, which only happens for rings
/// that are not simple.
pub fn ear_clip(ring: &[Point2]) -> Option<Vec<[Point2; 3]>> {
    let mut poly = remove_collinear(ring);
    if poly.len() < 3 {
        return None;
    }
    if signed_area(&poly) < 0.0 {
        poly.reverse();
    }
    let mut tris = Vec::with_capacity(poly.len() - 2);
    while poly.len() > 3 {
        let m = poly.len();
        let mut clipped = false;
        for i in 0..m {
            let a = poly[(i + m - 1) % m];
            let b = poly[i];
            let c = poly[(i + 1) % m];
            if orient(a, b, c) <= 0 {
                continue;
            }
            let blocked = poly.iter().enumerate().any(|(k, &p)| {
                k != i
                    && k != (i + m - 1) % m
                    && k != (i + 1) % m
                    && p != a
                    && p != b
                    && p != c
                    && point_in_triangle(p, a, b, c)
            });
            if !blocked {
                tris.push([a, b, c]);
                poly.remove(i);
                clipped = true;
                break;
            }
        }
        if !clipped {
            return None;
        }
        // Clipping can expose new collinear runs.
        if poly.len() > 3 {
            let cleaned = remove_collinear(&poly);
            if cleaned.len() < poly.len() {
                poly = cleaned;
                if poly.len() < 3 {
                    return Some(tris);
                }
            }
        }
    }
    if poly.len() == 3 && orient(poly[0], poly[1], poly[2]) != 0 {
        tris.push([poly[0], poly[1], poly[2]]);
    }
    Some(tris)
}

pub fn rotate_point(p: Point2, origin: Point2, angle: f64) -> Point2 {
    let (s, c) = angle.sin_cos();
    let dx = p[0] - origin[0];
    let dy = p[1] - origin[1];
    [origin[0] + c * dx - s * dy, origin[1] + s * dx + c * dy]
}

/// Regular polygon approximating a circle, counter-clockwise, first vertex
/// at `phase`.
pub fn circle(center: Point2, radius: f64, n: usize, phase: f64) -> Vec<Point2> {
    (0..n)
        .map(|k| {
            let t = phase + std::f64::consts::TAU * k as f64 / n as f64;
            [center[0] + radius * t.cos(), center[1] + radius * t.sin()]
        })
        .collect()
}

/// Two rings describe the same closed curve (same orientation, any starting
/// vertex) within `tol`.
pub fn rings_match(a: &[Point2], b: &[Point2], tol: f64) -> bool {
    if a.len() != b.len() || a.is_empty() {
        return false;
    }
    let n = a.len();
    (0..n).any(|shift| (0..n).all(|k| dist(a[k], b[(k + shift) % n]) <= tol))
}
