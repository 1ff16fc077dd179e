//! Two-dimensional raster geometry.
//!
//! A realization is rendered as a bit mask on a square pixel lattice, an
//! exact squared Euclidean distance transform turns it into a distance
//! field, and parallel sets are read off as sublevel sets. Curvatures:
//! area with sub-pixel boundary cells, boundary length from interpolated
//! marching-squares contours, and the Euler characteristic from contour
//! orientations (cross-checked against a bit-quad pixel-complex count).

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::model::RifsModel;
use crate::tree::LeafCover;

/// Minimal radius-to-pixel ratio accepted by the sublevel extractors;
/// below it discretization noise dominates.
pub const EPS_GATE_FACTOR: f64 = 4.0;

/// Dense bit mask on an axis-aligned pixel lattice. `origin` is the world
/// position of the center of pixel (0, 0); pixel (i, j) has center
/// `origin + (i*h, j*h)`. Grids built by the renderers share the global
/// lattice (origins are integer multiples of h), so sub-windows align.
#[derive(Clone, Debug)]
pub struct GridMask {
    pub origin: Point,
    pub h: f64,
    pub width: usize,
    pub height: usize,
    words: Vec<u64>,
}

impl GridMask {
    pub fn new(origin: Point, h: f64, width: usize, height: usize) -> Self {
        GridMask {
            origin,
            h,
            width,
            height,
            words: vec![0; (width * height + 63) / 64],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        let idx = j * self.width + i;
        self.words[idx / 64] >> (idx % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize) {
        let idx = j * self.width + i;
        self.words[idx / 64] |= 1 << (idx % 64);
    }

    /// Marks the pixel whose center is nearest to `p`; out-of-range points
    /// are an error (renderers size grids so this cannot happen).
    pub fn set_point(&mut self, p: Point) -> Result<()> {
        let i = ((p[0] - self.origin[0]) / self.h).round();
        let j = ((p[1] - self.origin[1]) / self.h).round();
        if i < 0.0 || j < 0.0 || i as usize >= self.width || j as usize >= self.height {
            return Err(Error::Gate(format!(
                "point ({}, {}) falls outside the grid",
                p[0], p[1]
            )));
        }
        self.set(i as usize, j as usize);
        Ok(())
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    /// World coordinates of the center of pixel (i, j).
    pub fn center(&self, i: usize, j: usize) -> Point {
        [
            self.origin[0] + i as f64 * self.h,
            self.origin[1] + j as f64 * self.h,
        ]
    }

    /// Diameter of the set of foreground pixel centers (convex hull +
    /// pairwise scan over hull vertices).
    pub fn support_diameter(&self) -> f64 {
        let mut pts: Vec<Point> = Vec::new();
        for j in 0..self.height {
            for i in 0..self.width {
                if self.get(i, j) {
                    pts.push(self.center(i, j));
                }
            }
        }
        if pts.len() < 2 {
            return 0.0;
        }
        let hull = convex_hull(&mut pts);
        let mut d = 0.0f64;
        for a in 0..hull.len() {
            for b in a + 1..hull.len() {
                d = d.max(crate::geometry::dist(hull[a], hull[b]));
            }
        }
        d
    }

    /// Binary PGM (P5, 8-bit) with foreground = 255.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.reserve(self.width * self.height);
        for j in 0..self.height {
            for i in 0..self.width {
                out.push(if self.get(i, j) { 255 } else { 0 });
            }
        }
        out
    }
}

fn convex_hull(pts: &mut [Point]) -> Vec<Point> {
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let cross = |o: Point, a: Point, b: Point| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut hull: Vec<Point> = Vec::with_capacity(pts.len() * 2);
    for &p in pts.iter() {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower = hull.len() + 1;
    for &p in pts.iter().rev() {
        while hull.len() >= lower && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

/// Exact squared Euclidean distances (in pixel units) from every pixel
/// center to the nearest foreground pixel center. Values are integers held
/// in f64, so comparisons and the brute-force oracle are bitwise.
#[derive(Clone, Debug)]
pub struct SqDistField {
    pub origin: Point,
    pub h: f64,
    pub width: usize,
    pub height: usize,
    pub sq: Vec<f64>,
}

impl SqDistField {
    /// Euclidean distance at pixel (i, j) in world units.
    #[inline]
    pub fn dist(&self, i: usize, j: usize) -> f64 {
        self.sq[j * self.width + i].sqrt() * self.h
    }

    pub fn max_dist(&self) -> f64 {
        self.sq.iter().cloned().fold(0.0f64, f64::max).sqrt() * self.h
    }

    /// 16-bit PGM (P5) of the distance values; the scale factor sits in a
    /// header comment.
    pub fn to_pgm(&self) -> Vec<u8> {
        let maxd = self.max_dist();
        let scale = if maxd > 0.0 { maxd / 65535.0 } else { 1.0 };
        let mut out = format!(
            "P5\n# scale={scale:e}\n{} {}\n65535\n",
            self.width, self.height
        )
        .into_bytes();
        out.reserve(2 * self.width * self.height);
        for j in 0..self.height {
            for i in 0..self.width {
                let v = (self.dist(i, j) / scale).round().min(65535.0) as u16;
                out.extend_from_slice(&v.to_be_bytes());
            }
        }
        out
    }
}

/// Exact squared-Euclidean distance transform: a per-column nearest scan
/// followed by a per-row lower envelope of parabolas. Columns and rows are
/// processed independently, so parallel execution is observationally
/// deterministic.
pub fn edt(mask: &GridMask) -> Result<SqDistField> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let (w, h) = (mask.width, mask.height);
    let sentinel = (w + h + 1) as i64;

    // column pass: distance to the nearest foreground pixel in the same
    // column, squared; column-major so each column is a contiguous chunk
    let mut colsq = vec![0.0f64; w * h];
    colsq
        .par_chunks_mut(h)
        .enumerate()
        .for_each(|(i, chunk)| {
            let mut d = sentinel;
            for j in 0..h {
                if mask.get(i, j) {
                    d = 0;
                } else if d < sentinel {
                    d += 1;
                }
                chunk[j] = d as f64;
            }
            let mut d = sentinel;
            for j in (0..h).rev() {
                if mask.get(i, j) {
                    d = 0;
                } else if d < sentinel {
                    d += 1;
                }
                if (d as f64) < chunk[j] {
                    chunk[j] = d as f64;
                }
            }
            for j in 0..h {
                let v = chunk[j];
                chunk[j] = if v >= sentinel as f64 { f64::INFINITY } else { v * v };
            }
        });

    let mut sq = vec![0.0f64; w * h];
    sq.par_chunks_mut(w).enumerate().for_each(|(j, row)| {
        // lower envelope of f(x') = colsq[x'][j] + (x - x')^2
        let f = |x: usize| colsq[x * h + j];
        let mut v = vec![0usize; w];
        let mut z = vec![0.0f64; w + 1];
        let mut k = 0usize;
        let mut started = false;
        for q in 0..w {
            let fq = f(q);
            if !fq.is_finite() {
                continue;
            }
            if !started {
                v[0] = q;
                z[0] = f64::NEG_INFINITY;
                z[1] = f64::INFINITY;
                started = true;
                continue;
            }
            let mut s;
            loop {
                let p = v[k];
                s = ((fq + (q * q) as f64) - (f(p) + (p * p) as f64))
                    / (2.0 * (q as f64 - p as f64));
                if s <= z[k] && k > 0 {
                    k -= 1;
                } else {
                    break;
                }
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
        }
        debug_assert!(started, "mask is nonempty, every row sees some column");
        let mut k = 0usize;
        for x in 0..w {
            while z[k + 1] < x as f64 {
                k += 1;
            }
            let p = v[k];
            let dx = x as f64 - p as f64;
            row[x] = dx * dx + f(p);
        }
    });

    Ok(SqDistField { origin: mask.origin, h: mask.h, width: w, height: h, sq })
}

/// Brute-force nearest-distance oracle, O(pixels x foreground); test use.
pub fn edt_brute_force(mask: &GridMask) -> Result<SqDistField> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let (w, h) = (mask.width, mask.height);
    let mut fg = Vec::new();
    for j in 0..h {
        for i in 0..w {
            if mask.get(i, j) {
                fg.push((i as f64, j as f64));
            }
        }
    }
    let sq = (0..w * h)
        .map(|idx| {
            let (x, y) = ((idx % w) as f64, (idx / w) as f64);
            fg.iter()
                .map(|&(fx, fy)| {
                    let (dx, dy) = (x - fx, y - fy);
                    dx * dx + dy * dy
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    Ok(SqDistField { origin: mask.origin, h: mask.h, width: w, height: h, sq })
}

fn gate(field: &SqDistField, eps: f64) -> Result<f64> {
    let t = eps / field.h;
    if t < EPS_GATE_FACTOR {
        return Err(Error::ResolutionTooCoarse(format!(
            "eps = {eps} is below the gate {} * h = {}",
            EPS_GATE_FACTOR,
            EPS_GATE_FACTOR * field.h
        )));
    }
    Ok(t)
}

/// Sublevel set {distance <= eps} as a mask. Gate: eps >= 4h.
pub fn parallel_mask(field: &SqDistField, eps: f64) -> Result<GridMask> {
    let t = gate(field, eps)?;
    let t2 = t * t;
    let mut mask = GridMask::new(field.origin, field.h, field.width, field.height);
    for j in 0..field.height {
        for i in 0..field.width {
            if field.sq[j * field.width + i] <= t2 {
                mask.set(i, j);
            }
        }
    }
    Ok(mask)
}

/// One closed iso-contour; `signed_area > 0` for outer boundaries (the
/// parallel set lies on the left of the traversal), negative for holes.
#[derive(Clone, Debug)]
pub struct Contour {
    pub points: Vec<Point>,
    pub length: f64,
    pub signed_area: f64,
}

/// All iso-contours of the distance field at one level.
#[derive(Clone, Debug)]
pub struct ContourSet {
    pub level: f64,
    pub contours: Vec<Contour>,
}

impl ContourSet {
    pub fn total_length(&self) -> f64 {
        self.contours.iter().map(|c| c.length).sum()
    }

    pub fn total_area(&self) -> f64 {
        self.contours.iter().map(|c| c.signed_area).sum()
    }

    pub fn euler(&self) -> i64 {
        self.contours
            .iter()
            .map(|c| if c.signed_area > 0.0 { 1i64 } else { -1i64 })
            .sum()
    }

    pub fn vertex_count(&self) -> usize {
        self.contours.iter().map(|c| c.points.len()).sum()
    }
}

const EDGE_B: u8 = 0;
const EDGE_R: u8 = 1;
const EDGE_T: u8 = 2;
const EDGE_L: u8 = 3;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct EdgeKey {
    horizontal: bool,
    i: u32,
    j: u32,
}

/// Marching squares on the distance values at pixel centers, linear
/// interpolation along cell edges. Segments are oriented with the sublevel
/// set on the left, so loops chain into closed polylines whose orientation
/// encodes outer boundary vs hole. Saddle cells are split by the sign of
/// the bilinear interpolant at the cell center.
pub fn contours(field: &SqDistField, eps: f64) -> Result<ContourSet> {
    let t = gate(field, eps)?;
    let t2 = t * t;
    let (w, h) = (field.width, field.height);
    // the sublevel set must not touch the border cells, otherwise loops
    // would be truncated; renderers pad grids accordingly
    for i in 0..w {
        if field.sq[i] <= t2 || field.sq[(h - 1) * w + i] <= t2 {
            return Err(Error::Gate("parallel set touches the grid border".into()));
        }
    }
    for j in 0..h {
        if field.sq[j * w] <= t2 || field.sq[j * w + w - 1] <= t2 {
            return Err(Error::Gate("parallel set touches the grid border".into()));
        }
    }

    let phi = |i: usize, j: usize| field.sq[j * w + i].sqrt() - t;
    let inside = |i: usize, j: usize| field.sq[j * w + i] <= t2;

    // crossing parameter along an edge, canonical corner order
    let cross_at = |pa: f64, pb: f64| pa / (pa - pb);

    let mut segments: BTreeMap<EdgeKey, (EdgeKey, Point, Point)> = BTreeMap::new();

    for j in 0..h - 1 {
        for i in 0..w - 1 {
            let b0 = inside(i, j) as usize;
            let b1 = inside(i + 1, j) as usize;
            let b2 = inside(i + 1, j + 1) as usize;
            let b3 = inside(i, j + 1) as usize;
            let case = b0 | b1 << 1 | b2 << 2 | b3 << 3;
            if case == 0 || case == 15 {
                continue;
            }
            let p00 = phi(i, j);
            let p10 = phi(i + 1, j);
            let p11 = phi(i + 1, j + 1);
            let p01 = phi(i, j + 1);
            let (fi, fj) = (i as f64, j as f64);
            // crossing point on each cell edge (canonical direction)
            let pt = |edge: u8| -> Point {
                match edge {
                    EDGE_B => [fi + cross_at(p00, p10), fj],
                    EDGE_T => [fi + cross_at(p01, p11), fj + 1.0],
                    EDGE_L => [fi, fj + cross_at(p00, p01)],
                    _ => [fi + 1.0, fj + cross_at(p10, p11)],
                }
            };
            let key = |edge: u8| -> EdgeKey {
                match edge {
                    EDGE_B => EdgeKey { horizontal: true, i: i as u32, j: j as u32 },
                    EDGE_T => EdgeKey { horizontal: true, i: i as u32, j: j as u32 + 1 },
                    EDGE_L => EdgeKey { horizontal: false, i: i as u32, j: j as u32 },
                    _ => EdgeKey { horizontal: false, i: i as u32 + 1, j: j as u32 },
                }
            };
            let saddle_center_inside = || (p00 + p10 + p11 + p01) * 0.25 <= 0.0;
            let segs: &[(u8, u8)] = match case {
                1 => &[(EDGE_B, EDGE_L)],
                2 => &[(EDGE_R, EDGE_B)],
                4 => &[(EDGE_T, EDGE_R)],
                8 => &[(EDGE_L, EDGE_T)],
                3 => &[(EDGE_R, EDGE_L)],
                6 => &[(EDGE_T, EDGE_B)],
                12 => &[(EDGE_L, EDGE_R)],
                9 => &[(EDGE_B, EDGE_T)],
                7 => &[(EDGE_T, EDGE_L)],
                11 => &[(EDGE_R, EDGE_T)],
                13 => &[(EDGE_B, EDGE_R)],
                14 => &[(EDGE_L, EDGE_B)],
                5 => {
                    if saddle_center_inside() {
                        &[(EDGE_B, EDGE_R), (EDGE_T, EDGE_L)]
                    } else {
                        &[(EDGE_B, EDGE_L), (EDGE_T, EDGE_R)]
                    }
                }
                _ => {
                    if saddle_center_inside() {
                        &[(EDGE_L, EDGE_B), (EDGE_R, EDGE_T)]
                    } else {
                        &[(EDGE_R, EDGE_B), (EDGE_L, EDGE_T)]
                    }
                }
            };
            for &(from, to) in segs {
                segments.insert(key(from), (key(to), pt(from), pt(to)));
            }
        }
    }

    let mut contours = Vec::new();
    let mut visited: std::collections::BTreeSet<EdgeKey> = std::collections::BTreeSet::new();
    let starts: Vec<EdgeKey> = segments.keys().cloned().collect();
    for start in starts {
        if visited.contains(&start) {
            continue;
        }
        let mut pts: Vec<Point> = Vec::new();
        let mut cur = start;
        loop {
            visited.insert(cur);
            let (next, from_pt, _) = segments[&cur];
            pts.push(from_pt);
            cur = next;
            if cur == start {
                break;
            }
            debug_assert!(segments.contains_key(&cur), "broken contour chain");
        }
        let n = pts.len();
        let mut length = 0.0;
        let mut area2 = 0.0;
        for a in 0..n {
            let p = pts[a];
            let q = pts[(a + 1) % n];
            length += crate::geometry::dist(p, q);
            area2 += p[0] * q[1] - q[0] * p[1];
        }
        let hh = field.h;
        let world: Vec<Point> = pts
            .iter()
            .map(|p| [field.origin[0] + p[0] * hh, field.origin[1] + p[1] * hh])
            .collect();
        contours.push(Contour {
            points: world,
            length: length * hh,
            signed_area: 0.5 * area2 * hh * hh,
        });
    }
    Ok(ContourSet { level: eps, contours })
}

/// Total curvatures of the parallel set at radius `eps`.
#[derive(Clone, Copy, Debug)]
pub struct Curvatures2 {
    /// Euler characteristic from contour orientations.
    pub euler: i64,
    /// Boundary length (full boundary measure, no factor 1/2).
    pub boundary: f64,
    /// Area: interior pixels plus interpolated boundary-cell polygons.
    pub area: f64,
    /// Cross-check: bit-quad Euler number of the pixel complex
    /// (8-connected foreground, 4-connected background).
    pub euler_pixel: i64,
    pub contour_count: usize,
    pub vertex_count: usize,
}

/// C_0, C_1, C_2 of `{distance <= eps}`. Gate: eps >= 4h.
pub fn curvatures_2d(field: &SqDistField, eps: f64) -> Result<Curvatures2> {
    let set = contours(field, eps)?;
    let mask = parallel_mask(field, eps)?;
    Ok(Curvatures2 {
        euler: set.euler(),
        boundary: set.total_length(),
        area: set.total_area(),
        euler_pixel: euler_pixel(&mask),
        contour_count: set.contours.len(),
        vertex_count: set.vertex_count(),
    })
}

/// Bit-quad Euler number with 8-connected foreground: counts 2x2 windows
/// with one, three, and two-diagonal foreground pixels over the mask padded
/// by background.
pub fn euler_pixel(mask: &GridMask) -> i64 {
    let (w, h) = (mask.width as i64, mask.height as i64);
    let at = |i: i64, j: i64| -> bool {
        i >= 0 && j >= 0 && i < w && j < h && mask.get(i as usize, j as usize)
    };
    let mut n1 = 0i64;
    let mut n3 = 0i64;
    let mut nd = 0i64;
    for j in -1..h {
        for i in -1..w {
            let a = at(i, j) as u8;
            let b = at(i + 1, j) as u8;
            let c = at(i, j + 1) as u8;
            let d = at(i + 1, j + 1) as u8;
            match a + b + c + d {
                1 => n1 += 1,
                3 => n3 += 1,
                2 => {
                    if (a == 1 && d == 1) || (b == 1 && c == 1) {
                        nd += 1;
                    }
                }
                _ => {}
            }
        }
    }
    (n1 - n3 - 2 * nd) / 4
}

/// Renders the leaf cover of a two-dimensional model onto a mask: one pixel
/// per leaf at the image of the base anchor point. Requires leaf diameters
/// at most h/2 and pads the grid by `pad` world units around the base set's
/// bounding box (callers pass the largest radius they will probe plus a
/// safety margin).
pub fn render_cover_2d(cover: &LeafCover, model: &RifsModel, h: f64, pad: f64) -> Result<GridMask> {
    if model.dimension() != 2 {
        return Err(Error::Gate("render_cover_2d requires a dimension-2 model".into()));
    }
    if cover.resolution > h / 2.0 {
        return Err(Error::ResolutionTooCoarse(format!(
            "leaf resolution {} exceeds h/2 = {}",
            cover.resolution,
            h / 2.0
        )));
    }
    let (lo, hi) = model.base.bbox();
    let anchor = model.base.anchor();
    let mut mask = grid_over(lo, hi, h, pad);
    for leaf in &cover.leaves {
        mask.set_point(leaf.map.apply(anchor))?;
    }
    Ok(mask)
}

/// Renders only the leaves below one first-generation child.
pub fn render_child_cover_2d(
    cover: &LeafCover,
    model: &RifsModel,
    child: u32,
    h: f64,
    pad: f64,
) -> Result<GridMask> {
    let fg = cover
        .first_generation
        .iter()
        .find(|f| f.index == child)
        .ok_or_else(|| Error::Gate(format!("no first-generation child {child}")))?;
    let (blo, bhi) = model.base.bbox();
    let corners = [
        [blo[0], blo[1]],
        [bhi[0], blo[1]],
        [bhi[0], bhi[1]],
        [blo[0], bhi[1]],
    ];
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for c in corners {
        let p = fg.map.apply(c);
        lo[0] = lo[0].min(p[0]);
        lo[1] = lo[1].min(p[1]);
        hi[0] = hi[0].max(p[0]);
        hi[1] = hi[1].max(p[1]);
    }
    let anchor = model.base.anchor();
    let mut mask = grid_over(lo, hi, h, pad);
    for leaf in cover.leaves.iter().filter(|l| l.first_gen == child) {
        mask.set_point(leaf.map.apply(anchor))?;
    }
    Ok(mask)
}

/// Mask over a padded bounding box, aligned to the global lattice (origin at
/// an integer multiple of h).
pub fn grid_over(lo: Point, hi: Point, h: f64, pad: f64) -> GridMask {
    let pad_cells = (pad / h).ceil() + 4.0;
    let i0 = (lo[0] / h).floor() - pad_cells;
    let j0 = (lo[1] / h).floor() - pad_cells;
    let i1 = (hi[0] / h).ceil() + pad_cells;
    let j1 = (hi[1] / h).ceil() + pad_cells;
    GridMask::new(
        [i0 * h, j0 * h],
        h,
        (i1 - i0) as usize + 1,
        (j1 - j0) as usize + 1,
    )
}

/// Mask holding a finite point set, padded for probing radii up to `pad`.
pub fn mask_from_points(points: &[Point], h: f64, pad: f64) -> Result<GridMask> {
    if points.is_empty() {
        return Err(Error::EmptyMask);
    }
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in points {
        lo[0] = lo[0].min(p[0]);
        lo[1] = lo[1].min(p[1]);
        hi[0] = hi[0].max(p[0]);
        hi[1] = hi[1].max(p[1]);
    }
    let mut mask = grid_over(lo, hi, h, pad);
    for &p in points {
        mask.set_point(p)?;
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    fn single_pixel(size: usize) -> GridMask {
        let mut m = GridMask::new([0.0, 0.0], 1.0, size, size);
        m.set(size / 2, size / 2);
        m
    }

    #[test]
    fn edt_three_four_five() {
        let m = single_pixel(32);
        let f = edt(&m).unwrap();
        let c = 16usize;
        assert_eq!(f.sq[(c + 4) * 32 + (c + 3)], 25.0);
        assert_eq!(f.dist(c + 3, c + 4), 5.0);
        assert_eq!(f.sq[c * 32 + c], 0.0);
    }

    #[test]
    fn edt_all_set_is_zero() {
        let mut m = GridMask::new([0.0, 0.0], 0.5, 8, 8);
        for j in 0..8 {
            for i in 0..8 {
                m.set(i, j);
            }
        }
        let f = edt(&m).unwrap();
        assert!(f.sq.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn edt_empty_rejected() {
        let m = GridMask::new([0.0, 0.0], 1.0, 4, 4);
        assert!(matches!(edt(&m), Err(Error::EmptyMask)));
    }

    #[test]
    fn edt_matches_brute_force_on_random_masks() {
        for trial in 0..20u64 {
            let mut s = Stream::new(99, trial, crate::rng::DOMAIN_MASK);
            let mut m = GridMask::new([0.0, 0.0], 1.0, 64, 64);
            let density = 0.002 + 0.05 * s.next_unit();
            let mut any = false;
            for j in 0..64 {
                for i in 0..64 {
                    if s.next_unit() < density {
                        m.set(i, j);
                        any = true;
                    }
                }
            }
            if !any {
                m.set(31, 17);
            }
            let fast = edt(&m).unwrap();
            let slow = edt_brute_force(&m).unwrap();
            for (a, b) in fast.sq.iter().zip(&slow.sq) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn disc_calibration_from_single_pixel() {
        let m = single_pixel(64);
        let f = edt(&m).unwrap();
        let r = 20.0;
        let c = curvatures_2d(&f, r).unwrap();
        assert_eq!(c.euler, 1);
        assert_eq!(c.euler_pixel, 1);
        let per = 2.0 * std::f64::consts::PI * r;
        let area = std::f64::consts::PI * r * r;
        assert!((c.boundary - per).abs() < 0.01 * per, "perimeter {}", c.boundary);
        assert!((c.area - area).abs() < 0.01 * area, "area {}", c.area);
    }

    #[test]
    fn gate_rejects_small_eps() {
        let m = single_pixel(16);
        let f = edt(&m).unwrap();
        assert!(matches!(
            curvatures_2d(&f, 3.0),
            Err(Error::ResolutionTooCoarse(_))
        ));
    }

    #[test]
    fn two_pixels_merge_when_discs_overlap() {
        let mut m = GridMask::new([0.0, 0.0], 1.0, 40, 40);
        m.set(10, 20);
        m.set(20, 20); // distance 10h
        let f = edt(&m).unwrap();
        let c = curvatures_2d(&f, 6.0).unwrap(); // 2*6 > 10: one component
        assert_eq!(c.euler, 1);
        assert_eq!(c.euler_pixel, 1);
        let c2 = curvatures_2d(&f, 4.5).unwrap(); // 2*4.5 < 10: two discs
        assert_eq!(c2.euler, 2);
        assert_eq!(c2.euler_pixel, 2);
    }

    #[test]
    fn annulus_has_euler_zero() {
        // ring of sources: at eps over the gate but under the ring radius the
        // sublevel set is an annulus
        let mut m = GridMask::new([0.0, 0.0], 1.0, 128, 128);
        let (cx, cy, rad) = (64.0, 64.0, 40.0);
        let n = 1024;
        for k in 0..n {
            let a = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            let i = (cx + rad * a.cos()).round() as usize;
            let j = (cy + rad * a.sin()).round() as usize;
            m.set(i, j);
        }
        let f = edt(&m).unwrap();
        let c = curvatures_2d(&f, 8.0).unwrap();
        assert_eq!(c.euler, 0, "outer loop plus one hole");
        assert_eq!(c.euler_pixel, 0);
        assert_eq!(c.contour_count, 2);
    }

    #[test]
    fn sublevel_monotone_in_eps() {
        let mut m = GridMask::new([0.0, 0.0], 1.0, 64, 64);
        let mut s = Stream::new(5, 0, crate::rng::DOMAIN_MASK);
        for _ in 0..12 {
            let i = 8 + s.next_index(48);
            let j = 8 + s.next_index(48);
            m.set(i, j);
        }
        let f = edt(&m).unwrap();
        let small = parallel_mask(&f, 4.0).unwrap();
        let big = parallel_mask(&f, 7.0).unwrap();
        for j in 0..64 {
            for i in 0..64 {
                if small.get(i, j) {
                    assert!(big.get(i, j));
                }
            }
        }
        let a4 = curvatures_2d(&f, 4.0).unwrap().area;
        let a7 = curvatures_2d(&f, 7.0).unwrap().area;
        assert!(a4 <= a7);
    }

    #[test]
    fn whole_pixel_translation_invariance() {
        let mut a = GridMask::new([0.0, 0.0], 1.0, 48, 48);
        let mut b = GridMask::new([0.0, 0.0], 1.0, 48, 48);
        let pts = [(12usize, 13usize), (20, 22), (15, 30)];
        for &(i, j) in &pts {
            a.set(i, j);
            b.set(i + 5, j + 3);
        }
        let fa = edt(&a).unwrap();
        let fb = edt(&b).unwrap();
        let ca = curvatures_2d(&fa, 5.5).unwrap();
        let cb = curvatures_2d(&fb, 5.5).unwrap();
        assert_eq!(ca.euler, cb.euler);
        assert!((ca.boundary - cb.boundary).abs() < 1e-12);
        assert!((ca.area - cb.area).abs() < 1e-12);
    }

    #[test]
    fn star_shape_law_large_eps() {
        let mut m = GridMask::new([0.0, 0.0], 1.0, 96, 96);
        let mut s = Stream::new(7, 1, crate::rng::DOMAIN_MASK);
        for _ in 0..7 {
            let i = 40 + s.next_index(16);
            let j = 40 + s.next_index(16);
            m.set(i, j);
        }
        let f = edt(&m).unwrap();
        let diam = m.support_diameter();
        let c = curvatures_2d(&f, diam.max(4.0) + 1.0).unwrap();
        assert_eq!(c.euler, 1);
    }

    #[test]
    fn pgm_headers() {
        let m = single_pixel(8);
        let pgm = m.to_pgm();
        assert!(pgm.starts_with(b"P5\n8 8\n255\n"));
        let f = edt(&m).unwrap();
        let fp = f.to_pgm();
        assert!(fp.starts_with(b"P5\n# scale="));
    }
}
