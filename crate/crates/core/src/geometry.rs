//! Planar similarity maps and convex polygon primitives shared by the engines.

use crate::error::{Error, Result};

pub type Point = [f64; 2];

#[inline]
pub fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[inline]
fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// A realized contracting similarity `x -> A x + b` with `A = ratio * O`,
/// `O` orthogonal. One-dimensional maps embed on the x-axis with
/// `A = diag(sign * ratio, ratio)`, which keeps the family closed under
/// composition while leaving the axis invariant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimMap {
    pub ratio: f64,
    lin: [[f64; 2]; 2],
    shift: [f64; 2],
}

impl SimMap {
    pub fn identity() -> Self {
        SimMap { ratio: 1.0, lin: [[1.0, 0.0], [0.0, 1.0]], shift: [0.0, 0.0] }
    }

    /// Similarity of the line: `x -> sign * ratio * x + shift_x`.
    pub fn line(ratio: f64, sign: f64, shift_x: f64) -> Self {
        debug_assert!(sign == 1.0 || sign == -1.0);
        SimMap {
            ratio,
            lin: [[sign * ratio, 0.0], [0.0, ratio]],
            shift: [shift_x, 0.0],
        }
    }

    /// Similarity of the plane: rotation by `angle`, optional reflection
    /// across the x-axis (applied before the rotation), scaling, translation.
    pub fn plane(ratio: f64, angle: f64, reflect: bool, shift: [f64; 2]) -> Self {
        let (s, c) = angle.sin_cos();
        let refl = if reflect { -1.0 } else { 1.0 };
        SimMap {
            ratio,
            lin: [
                [ratio * c, -ratio * s * refl],
                [ratio * s, ratio * c * refl],
            ],
            shift,
        }
    }

    #[inline]
    pub fn apply(&self, p: Point) -> Point {
        [
            self.lin[0][0] * p[0] + self.lin[0][1] * p[1] + self.shift[0],
            self.lin[1][0] * p[0] + self.lin[1][1] * p[1] + self.shift[1],
        ]
    }

    /// `self` after `inner`: `(self * inner)(x) = self(inner(x))`.
    pub fn compose(&self, inner: &SimMap) -> SimMap {
        let a = &self.lin;
        let b = &inner.lin;
        SimMap {
            ratio: self.ratio * inner.ratio,
            lin: [
                [
                    a[0][0] * b[0][0] + a[0][1] * b[1][0],
                    a[0][0] * b[0][1] + a[0][1] * b[1][1],
                ],
                [
                    a[1][0] * b[0][0] + a[1][1] * b[1][0],
                    a[1][0] * b[0][1] + a[1][1] * b[1][1],
                ],
            ],
            shift: self.apply(inner.shift),
        }
    }

    pub fn is_reflecting(&self) -> bool {
        self.lin[0][0] * self.lin[1][1] - self.lin[0][1] * self.lin[1][0] < 0.0
    }
}

/// Convex polygon with vertices stored counter-clockwise.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvexPolygon {
    verts: Vec<Point>,
}

impl ConvexPolygon {
    /// Builds from an ordered vertex list (either orientation), normalizing
    /// to counter-clockwise. Rejects polygons with fewer than three vertices,
    /// degenerate area, or a reflex corner.
    pub fn new(verts: Vec<Point>) -> Result<Self> {
        if verts.len() < 3 {
            return Err(Error::Model("polygon needs at least 3 vertices".into()));
        }
        let mut verts = verts;
        let area2 = signed_area2(&verts);
        if area2.abs() < 1e-300 {
            return Err(Error::Model("polygon has zero area".into()));
        }
        if area2 < 0.0 {
            verts.reverse();
        }
        let scale2 = signed_area2(&verts).abs();
        let n = verts.len();
        for i in 0..n {
            let o = verts[i];
            let a = verts[(i + 1) % n];
            let b = verts[(i + 2) % n];
            if cross(o, a, b) < -1e-12 * scale2 {
                return Err(Error::Model("polygon is not convex".into()));
            }
        }
        Ok(ConvexPolygon { verts })
    }

    pub fn verts(&self) -> &[Point] {
        &self.verts
    }

    pub fn area(&self) -> f64 {
        0.5 * signed_area2(&self.verts)
    }

    pub fn centroid(&self) -> Point {
        let mut cx = 0.0;
        let mut cy = 0.0;
        let mut a2 = 0.0;
        let n = self.verts.len();
        for i in 0..n {
            let p = self.verts[i];
            let q = self.verts[(i + 1) % n];
            let w = p[0] * q[1] - q[0] * p[1];
            cx += (p[0] + q[0]) * w;
            cy += (p[1] + q[1]) * w;
            a2 += w;
        }
        [cx / (3.0 * a2), cy / (3.0 * a2)]
    }

    pub fn diameter(&self) -> f64 {
        let mut d = 0.0f64;
        for (i, &p) in self.verts.iter().enumerate() {
            for &q in &self.verts[i + 1..] {
                d = d.max(dist(p, q));
            }
        }
        d
    }

    pub fn bbox(&self) -> (Point, Point) {
        let mut lo = [f64::INFINITY, f64::INFINITY];
        let mut hi = [f64::NEG_INFINITY, f64::NEG_INFINITY];
        for v in &self.verts {
            lo[0] = lo[0].min(v[0]);
            lo[1] = lo[1].min(v[1]);
            hi[0] = hi[0].max(v[0]);
            hi[1] = hi[1].max(v[1]);
        }
        (lo, hi)
    }

    /// Signed inner margin of `p`: the minimum over edges of the distance of
    /// `p` to the edge line, positive strictly inside, negative outside.
    pub fn inner_margin(&self, p: Point) -> f64 {
        let n = self.verts.len();
        let mut m = f64::INFINITY;
        for i in 0..n {
            let a = self.verts[i];
            let b = self.verts[(i + 1) % n];
            let len = dist(a, b);
            if len == 0.0 {
                continue;
            }
            m = m.min(cross(a, b, p) / len);
        }
        m
    }

    /// Sutherland-Hodgman clip of `self` by convex `clip`; `None` when the
    /// intersection is empty or degenerate.
    pub fn clip(&self, clip: &ConvexPolygon) -> Option<ConvexPolygon> {
        let mut poly = self.verts.clone();
        let n = clip.verts.len();
        for i in 0..n {
            if poly.is_empty() {
                return None;
            }
            let a = clip.verts[i];
            let b = clip.verts[(i + 1) % n];
            let mut out: Vec<Point> = Vec::with_capacity(poly.len() + 2);
            let m = poly.len();
            for j in 0..m {
                let p = poly[j];
                let q = poly[(j + 1) % m];
                let sp = cross(a, b, p);
                let sq = cross(a, b, q);
                if sp >= 0.0 {
                    out.push(p);
                }
                if (sp > 0.0 && sq < 0.0) || (sp < 0.0 && sq > 0.0) {
                    let t = sp / (sp - sq);
                    out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
                }
            }
            poly = out;
        }
        if poly.len() < 3 {
            return None;
        }
        Some(ConvexPolygon { verts: poly })
    }

    /// Area of the intersection with another convex polygon.
    pub fn intersection_area(&self, other: &ConvexPolygon) -> f64 {
        match self.clip(other) {
            Some(p) => p.area().abs(),
            None => 0.0,
        }
    }

    /// Image under a similarity; vertex order is re-normalized to CCW when
    /// the map reflects.
    pub fn transform(&self, map: &SimMap) -> ConvexPolygon {
        let mut verts: Vec<Point> = self.verts.iter().map(|&v| map.apply(v)).collect();
        if map.is_reflecting() {
            verts.reverse();
        }
        ConvexPolygon { verts }
    }
}

/// Distance from `p` to the segment [a, b].
pub fn point_segment_dist(p: Point, a: Point, b: Point) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    if len2 == 0.0 {
        return dist(p, a);
    }
    let t = ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0);
    dist(p, [a[0] + t * ab[0], a[1] + t * ab[1]])
}

/// Euclidean distance between two convex polygons; 0 when they intersect.
pub fn polygon_distance(a: &ConvexPolygon, b: &ConvexPolygon) -> f64 {
    if a.clip(b).is_some() {
        return 0.0;
    }
    let mut d = f64::INFINITY;
    let (va, vb) = (a.verts(), b.verts());
    for (poly_from, poly_to) in [(va, vb), (vb, va)] {
        let n = poly_to.len();
        for &p in poly_from {
            for i in 0..n {
                d = d.min(point_segment_dist(p, poly_to[i], poly_to[(i + 1) % n]));
            }
        }
    }
    d
}

fn signed_area2(verts: &[Point]) -> f64 {
    let n = verts.len();
    let mut s = 0.0;
    for i in 0..n {
        let p = verts[i];
        let q = verts[(i + 1) % n];
        s += p[0] * q[1] - q[0] * p[1];
    }
    s
}

/// Compensated (Neumaier) summation; keeps curvature totals exact enough for
/// the locality cancellation checks.
pub fn neumaier_sum<I: IntoIterator<Item = f64>>(vals: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in vals {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square() -> ConvexPolygon {
        ConvexPolygon::new(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]).unwrap()
    }

    #[test]
    fn simmap_is_exact_similarity() {
        let m = SimMap::plane(0.5, 1.1, true, [0.3, -0.2]);
        let p = [0.7, 0.1];
        let q = [-0.4, 0.9];
        let d0 = dist(p, q);
        let d1 = dist(m.apply(p), m.apply(q));
        assert!((d1 - 0.5 * d0).abs() < 1e-14);
    }

    #[test]
    fn composition_multiplies_ratios() {
        let a = SimMap::plane(0.5, 0.3, false, [1.0, 0.0]);
        let b = SimMap::plane(0.25, -1.2, true, [0.0, 2.0]);
        let c = a.compose(&b);
        assert!((c.ratio - 0.125).abs() < 1e-15);
        let p = [0.2, 0.4];
        let lhs = c.apply(p);
        let rhs = a.apply(b.apply(p));
        assert!(dist(lhs, rhs) < 1e-14);
    }

    #[test]
    fn line_maps_keep_axis() {
        let m = SimMap::line(1.0 / 3.0, -1.0, 1.0);
        let p = m.apply([0.5, 0.0]);
        assert_eq!(p[1], 0.0);
        assert!((p[0] - (1.0 - 0.5 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn polygon_orientation_and_margin() {
        let sq = ConvexPolygon::new(vec![[0.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0]]).unwrap();
        assert!(sq.area() > 0.0);
        assert!((sq.inner_margin([0.5, 0.5]) - 0.5).abs() < 1e-15);
        assert!(sq.inner_margin([1.2, 0.5]) < 0.0);
    }

    #[test]
    fn clip_areas() {
        let a = unit_square();
        let shifted = ConvexPolygon::new(vec![[0.5, 0.0], [1.5, 0.0], [1.5, 1.0], [0.5, 1.0]]).unwrap();
        assert!((a.intersection_area(&shifted) - 0.5).abs() < 1e-12);
        let far = ConvexPolygon::new(vec![[2.0, 0.0], [3.0, 0.0], [3.0, 1.0], [2.0, 1.0]]).unwrap();
        assert_eq!(a.intersection_area(&far), 0.0);
    }

    #[test]
    fn rejects_nonconvex() {
        let bad = ConvexPolygon::new(vec![[0.0, 0.0], [2.0, 0.0], [0.2, 0.2], [0.0, 2.0]]);
        assert!(bad.is_err());
    }

    #[test]
    fn neumaier_cancels() {
        let vals = vec![1e16, 1.0, -1e16];
        assert_eq!(neumaier_sum(vals), 1.0);
    }
}
