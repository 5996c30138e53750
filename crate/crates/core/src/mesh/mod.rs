//! Triangulation of the study region.
//!
//! The mesh carries the latent field (one value per vertex), provides the
//! barycentric interpolation used for every off-vertex evaluation, and supplies
//! the dual-cell areas that serve as quadrature weights for intensity integrals.
//!
//! Construction inserts boundary points (edges subdivided to `max_edge`), a
//! triangular lattice of interior points, and then runs a constrained Delaunay
//! triangulation with the boundary edges as constraints. Edges longer than
//! `EDGE_SLACK * max_edge` are split and the triangulation rebuilt until none remain.
//!
//! There is no outer extension ring: the field lives only on the study region,
//! so field estimates near the boundary carry the usual free-boundary bias.

mod geometry;

pub(crate) use geometry::{orient, triangle_area};
pub use geometry::{point_segment_distance, Point2D, Polygon};

use serde::{Deserialize, Serialize};
use spade::{ConstrainedDelaunayTriangulation, Point2 as SpadePoint, Triangulation};

use crate::error::{Error, Result};

/// Refinement slack: constructed meshes have every edge below this multiple of `max_edge`.
pub const EDGE_SLACK: f64 = 1.5;

/// Interior lattice points closer than this fraction of `max_edge` to the boundary are dropped.
const BOUNDARY_MARGIN: f64 = 0.5;

const BARY_TOL: f64 = 1e-10;

/// Containing triangle and barycentric weights of a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshLocation {
    pub triangle_index: usize,
    pub barycentric: [f64; 3],
}

#[derive(Debug, Clone)]
struct LocatorGrid {
    origin: Point2D,
    cell: f64,
    nx: usize,
    ny: usize,
    cells: Vec<Vec<u32>>,
}

impl LocatorGrid {
    fn build(vertices: &[Point2D], triangles: &[[usize; 3]], lo: Point2D, hi: Point2D) -> Self {
        let w = (hi.x - lo.x).max(f64::MIN_POSITIVE);
        let h = (hi.y - lo.y).max(f64::MIN_POSITIVE);
        let target = (triangles.len() as f64).sqrt().max(1.0);
        let cell = (w.max(h) / target).max(f64::MIN_POSITIVE);
        let nx = ((w / cell).ceil() as usize).max(1);
        let ny = ((h / cell).ceil() as usize).max(1);
        let mut cells = vec![Vec::new(); nx * ny];
        let mut grid = LocatorGrid {
            origin: lo,
            cell,
            nx,
            ny,
            cells: Vec::new(),
        };
        for (t, tri) in triangles.iter().enumerate() {
            let pts = tri.map(|i| vertices[i]);
            let (x0, x1) = (
                pts.iter().map(|p| p.x).fold(f64::INFINITY, f64::min),
                pts.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max),
            );
            let (y0, y1) = (
                pts.iter().map(|p| p.y).fold(f64::INFINITY, f64::min),
                pts.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max),
            );
            let (i0, j0) = grid.cell_of(Point2D::new(x0, y0));
            let (i1, j1) = grid.cell_of(Point2D::new(x1, y1));
            for j in j0..=j1 {
                for i in i0..=i1 {
                    cells[j * nx + i].push(t as u32);
                }
            }
        }
        grid.cells = cells;
        grid
    }

    fn cell_of(&self, p: Point2D) -> (usize, usize) {
        let fx = ((p.x - self.origin.x) / self.cell).floor();
        let fy = ((p.y - self.origin.y) / self.cell).floor();
        let i = fx.clamp(0.0, (self.nx - 1) as f64) as usize;
        let j = fy.clamp(0.0, (self.ny - 1) as f64) as usize;
        (i, j)
    }

    fn candidates(&self, p: Point2D) -> &[u32] {
        let (i, j) = self.cell_of(p);
        &self.cells[j * self.nx + i]
    }
}

/// The discretized study region.
#[derive(Debug, Clone)]
pub struct TriangulatedDomain {
    vertices: Vec<Point2D>,
    triangles: Vec<[usize; 3]>,
    boundary: Polygon,
    dual_areas: Vec<f64>,
    max_edge: f64,
    bbox: (Point2D, Point2D),
    locator: LocatorGrid,
}

/// Serialized mesh layout used for caching and inspection.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshFile {
    pub max_edge: f64,
    pub boundary: Vec<[f64; 2]>,
    pub vertices: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub dual_areas: Vec<f64>,
}

/// Builds a conforming triangulation of `boundary` with edges bounded by `max_edge`
/// (up to [`EDGE_SLACK`]).
pub fn build_mesh(boundary: &Polygon, max_edge: f64) -> Result<TriangulatedDomain> {
    if !(max_edge > 0.0 && max_edge.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "max_edge must be positive, got {max_edge}"
        )));
    }
    boundary.validate_simple()?;
    let boundary = boundary.to_ccw();
    let (lo, hi) = boundary.bbox();
    let extent = (hi.x - lo.x).max(hi.y - lo.y);
    if extent / max_edge > 1e4 {
        return Err(Error::InvalidArgument(format!(
            "max_edge {max_edge} is too small for a domain of extent {extent}"
        )));
    }

    let mut boundary_pts = Vec::new();
    for (a, b) in boundary.edges() {
        let len = a.dist(b);
        let k = (len / max_edge).ceil().max(1.0) as usize;
        for s in 0..k {
            let t = s as f64 / k as f64;
            boundary_pts.push(Point2D::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)));
        }
    }

    let mut interior = Vec::new();
    let row_h = max_edge * 3f64.sqrt() / 2.0;
    let rows = ((hi.y - lo.y) / row_h).ceil() as usize + 1;
    let cols = ((hi.x - lo.x) / max_edge).ceil() as usize + 2;
    for r in 0..rows {
        let y = lo.y + r as f64 * row_h;
        let shift = if r % 2 == 1 { 0.5 * max_edge } else { 0.0 };
        for c in 0..cols {
            let p = Point2D::new(lo.x + shift + c as f64 * max_edge, y);
            if boundary.contains_with_margin(p, BOUNDARY_MARGIN * max_edge) {
                interior.push(p);
            }
        }
    }

    for _round in 0..32 {
        let (vertices, triangles) = triangulate(&boundary, &boundary_pts, &interior)?;
        let mut extra = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        for tri in &triangles {
            for k in 0..3 {
                let (i, j) = (tri[k], tri[(k + 1) % 3]);
                let key = (i.min(j), i.max(j));
                if vertices[i].dist(vertices[j]) > EDGE_SLACK * max_edge && seen.insert(key) {
                    let (a, b) = (vertices[i], vertices[j]);
                    extra.push(Point2D::new(0.5 * (a.x + b.x), 0.5 * (a.y + b.y)));
                }
            }
        }
        if extra.is_empty() {
            return TriangulatedDomain::from_parts(vertices, triangles, boundary, max_edge);
        }
        interior.extend(extra);
    }
    Err(Error::Geometry("mesh refinement did not terminate".into()))
}

fn triangulate(
    boundary: &Polygon,
    boundary_pts: &[Point2D],
    interior: &[Point2D],
) -> Result<(Vec<Point2D>, Vec<[usize; 3]>)> {
    let mut cdt: ConstrainedDelaunayTriangulation<SpadePoint<f64>> =
        ConstrainedDelaunayTriangulation::new();
    let insert = |cdt: &mut ConstrainedDelaunayTriangulation<SpadePoint<f64>>, p: Point2D| {
        cdt.insert(SpadePoint::new(p.x, p.y)).map_err(|e| {
            Error::Geometry(format!(
                "triangulation insert failed at ({}, {}): {e:?}",
                p.x, p.y
            ))
        })
    };
    let mut ring = Vec::with_capacity(boundary_pts.len());
    for &p in boundary_pts {
        ring.push(insert(&mut cdt, p)?);
    }
    for &p in interior {
        insert(&mut cdt, p)?;
    }
    for k in 0..ring.len() {
        let (a, b) = (ring[k], ring[(k + 1) % ring.len()]);
        if a != b && !cdt.can_add_constraint(a, b) {
            return Err(Error::Geometry(
                "boundary constraint crosses an existing edge".into(),
            ));
        }
        cdt.add_constraint(a, b);
    }

    // Spade keeps vertices in insertion order; drop any not used by an inside face.
    let all: Vec<Point2D> = cdt
        .vertices()
        .map(|v| {
            let p = v.position();
            Point2D::new(p.x, p.y)
        })
        .collect();
    let mut faces = Vec::new();
    for face in cdt.inner_faces() {
        let idx = face.vertices().map(|v| v.fix().index());
        let (a, b, c) = (all[idx[0]], all[idx[1]], all[idx[2]]);
        let centroid = Point2D::new((a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0);
        if !boundary.contains(centroid) || orient(a, b, c) == 0.0 {
            continue;
        }
        faces.push(if orient(a, b, c) > 0.0 {
            idx
        } else {
            [idx[0], idx[2], idx[1]]
        });
    }
    let mut remap = vec![usize::MAX; all.len()];
    let mut vertices = Vec::new();
    for f in &faces {
        for &i in f {
            if remap[i] == usize::MAX {
                remap[i] = 0;
            }
        }
    }
    for (i, slot) in remap.iter_mut().enumerate() {
        if *slot != usize::MAX {
            *slot = vertices.len();
            vertices.push(all[i]);
        }
    }
    let triangles = faces.into_iter().map(|f| f.map(|i| remap[i])).collect();
    Ok((vertices, triangles))
}

impl TriangulatedDomain {
    /// Assembles a domain from raw parts, computing barycentric-dual areas and
    /// checking the structural invariants.
    pub fn from_parts(
        vertices: Vec<Point2D>,
        mut triangles: Vec<[usize; 3]>,
        boundary: Polygon,
        max_edge: f64,
    ) -> Result<Self> {
        if vertices.is_empty() || triangles.is_empty() {
            return Err(Error::Geometry("mesh has no triangles".into()));
        }
        if let Some(p) = vertices.iter().find(|p| !p.is_finite()) {
            return Err(Error::Geometry(format!(
                "non-finite vertex ({}, {})",
                p.x, p.y
            )));
        }
        let mut dual_areas = vec![0.0; vertices.len()];
        for (t, tri) in triangles.iter_mut().enumerate() {
            if tri.iter().any(|&i| i >= vertices.len()) {
                return Err(Error::Geometry(format!(
                    "triangle {t} references a missing vertex"
                )));
            }
            let (a, b, c) = (vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
            let o = orient(a, b, c);
            if o == 0.0 {
                return Err(Error::Geometry(format!("triangle {t} is degenerate")));
            }
            if o < 0.0 {
                tri.swap(1, 2);
            }
            let third = triangle_area(a, b, c) / 3.0;
            for &i in tri.iter() {
                dual_areas[i] += third;
            }
        }
        if let Some(i) = dual_areas.iter().position(|&a| a <= 0.0) {
            return Err(Error::Geometry(format!(
                "vertex {i} belongs to no triangle"
            )));
        }
        let boundary = boundary.to_ccw();
        let mut lo = Point2D::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point2D::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &vertices {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        let locator = LocatorGrid::build(&vertices, &triangles, lo, hi);
        Ok(Self {
            vertices,
            triangles,
            boundary,
            dual_areas,
            max_edge,
            bbox: (lo, hi),
            locator,
        })
    }

    pub fn vertices(&self) -> &[Point2D] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary(&self) -> &Polygon {
        &self.boundary
    }

    /// Barycentric-dual cell areas, one per vertex.
    pub fn dual_areas(&self) -> &[f64] {
        &self.dual_areas
    }

    pub fn max_edge(&self) -> f64 {
        self.max_edge
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn bbox(&self) -> (Point2D, Point2D) {
        self.bbox
    }

    /// Total area, summed over dual cells.
    pub fn area(&self) -> f64 {
        crate::numeric::neumaier_sum(self.dual_areas.iter().copied())
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        triangle_area(self.vertices[a], self.vertices[b], self.vertices[c])
    }

    pub fn longest_edge(&self) -> f64 {
        let mut m: f64 = 0.0;
        for tri in &self.triangles {
            for k in 0..3 {
                m = m.max(self.vertices[tri[k]].dist(self.vertices[tri[(k + 1) % 3]]));
            }
        }
        m
    }

    pub fn diameter(&self) -> f64 {
        self.boundary.diameter()
    }

    /// Finds the triangle containing `p`. Points on shared edges go to the
    /// lowest-index containing triangle.
    pub fn locate(&self, p: Point2D) -> Result<MeshLocation> {
        if !p.is_finite() {
            return Err(Error::OutsideDomain { x: p.x, y: p.y });
        }
        let (lo, hi) = self.bbox;
        let pad = 1e-9 * (hi.x - lo.x).max(hi.y - lo.y);
        if p.x < lo.x - pad || p.x > hi.x + pad || p.y < lo.y - pad || p.y > hi.y + pad {
            return Err(Error::OutsideDomain { x: p.x, y: p.y });
        }
        for &t in self.locator.candidates(p) {
            let t = t as usize;
            let w = self.barycentric(t, p);
            if w.iter().all(|&wi| wi >= -BARY_TOL) {
                let mut w = w.map(|wi| wi.max(0.0));
                let s = w[0] + w[1] + w[2];
                if s != 1.0 {
                    w = w.map(|wi| wi / s);
                }
                return Ok(MeshLocation {
                    triangle_index: t,
                    barycentric: w,
                });
            }
        }
        Err(Error::OutsideDomain { x: p.x, y: p.y })
    }

    fn barycentric(&self, t: usize, p: Point2D) -> [f64; 3] {
        let [ia, ib, ic] = self.triangles[t];
        let (a, b, c) = (self.vertices[ia], self.vertices[ib], self.vertices[ic]);
        let det = orient(a, b, c);
        let wb = geometry::cross(p.sub(a), c.sub(a)) / det;
        let wc = geometry::cross(b.sub(a), p.sub(a)) / det;
        [1.0 - wb - wc, wb, wc]
    }

    pub fn contains(&self, p: Point2D) -> bool {
        self.locate(p).is_ok()
    }

    /// Vertex indices with barycentric weights for `p`.
    pub fn weights(&self, p: Point2D) -> Result<[(usize, f64); 3]> {
        let loc = self.locate(p)?;
        let tri = self.triangles[loc.triangle_index];
        Ok([
            (tri[0], loc.barycentric[0]),
            (tri[1], loc.barycentric[1]),
            (tri[2], loc.barycentric[2]),
        ])
    }

    /// Barycentric interpolation of per-vertex values.
    pub fn interpolate(&self, node_values: &[f64], p: Point2D) -> Result<f64> {
        if node_values.len() != self.vertices.len() {
            return Err(Error::InvalidArgument(format!(
                "node_values has length {}, mesh has {} vertices",
                node_values.len(),
                self.vertices.len()
            )));
        }
        let w = self.weights(p)?;
        Ok(w.iter().map(|&(i, wi)| wi * node_values[i]).sum())
    }

    /// Indices of vertices lying inside (or on the boundary of) `region`.
    pub fn vertices_in(&self, region: &Polygon) -> Vec<usize> {
        self.vertices
            .iter()
            .enumerate()
            .filter(|(_, p)| region.contains(**p))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn nearest_vertex(&self, p: Point2D) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, v) in self.vertices.iter().enumerate() {
            let d = (v.x - p.x).powi(2) + (v.y - p.y).powi(2);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    /// Undirected vertex adjacency from the triangle edges, each list sorted.
    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for tri in &self.triangles {
            for k in 0..3 {
                let (i, j) = (tri[k], tri[(k + 1) % 3]);
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        for a in &mut adj {
            a.sort_unstable();
            a.dedup();
        }
        adj
    }

    pub fn to_file(&self) -> MeshFile {
        MeshFile {
            max_edge: self.max_edge,
            boundary: self.boundary.ring.iter().map(|p| [p.x, p.y]).collect(),
            vertices: self.vertices.iter().map(|p| [p.x, p.y]).collect(),
            triangles: self.triangles.clone(),
            dual_areas: self.dual_areas.clone(),
        }
    }

    /// Rebuilds a domain from its serialized form; dual areas are recomputed and
    /// must match the stored ones.
    pub fn from_file(file: &MeshFile) -> Result<Self> {
        let vertices = file
            .vertices
            .iter()
            .map(|&[x, y]| Point2D::new(x, y))
            .collect();
        let boundary = Polygon::new(
            file.boundary
                .iter()
                .map(|&[x, y]| Point2D::new(x, y))
                .collect(),
        );
        let dom = Self::from_parts(vertices, file.triangles.clone(), boundary, file.max_edge)?;
        if dom.dual_areas.len() != file.dual_areas.len() {
            return Err(Error::Geometry(
                "dual_areas length does not match vertex count".into(),
            ));
        }
        for (i, (a, b)) in dom.dual_areas.iter().zip(&file.dual_areas).enumerate() {
            if (a - b).abs() > 1e-9 * a.abs().max(1e-300) {
                return Err(Error::Geometry(format!(
                    "stored dual area {i} disagrees with geometry"
                )));
            }
        }
        Ok(dom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn interiors_overlap(m: &TriangulatedDomain, s: usize, t: usize) -> bool {
        // Separating-axis test on the open triangles: overlap iff no edge separates them.
        let tri = |k: usize| m.triangles()[k].map(|i| m.vertices()[i]);
        let (a, b) = (tri(s), tri(t));
        for (p, q) in [(a, b), (b, a)] {
            for k in 0..3 {
                let (e0, e1) = (p[k], p[(k + 1) % 3]);
                // p is ccw, so its interior is on the left; q separated if all on the right or on the line.
                if q.iter().all(|&v| orient(e0, e1, v) <= 1e-14) {
                    return false;
                }
            }
        }
        true
    }

    #[test]
    fn unit_square_coarse() {
        let m = build_mesh(&Polygon::unit_square(), 2.0).unwrap();
        assert_eq!(m.num_vertices(), 4);
        assert_eq!(m.num_triangles(), 2);
        assert!((m.area() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn refinement_adds_vertices_and_keeps_area() {
        let coarse = build_mesh(&Polygon::unit_square(), 0.5).unwrap();
        let fine = build_mesh(&Polygon::unit_square(), 0.1).unwrap();
        assert!(fine.num_vertices() > coarse.num_vertices());
        for m in [&coarse, &fine] {
            assert!((m.area() - 1.0).abs() < 1e-9);
            assert!(m.longest_edge() <= EDGE_SLACK * m.max_edge() + 1e-12);
        }
    }

    #[test]
    fn triangles_do_not_overlap() {
        let l_shape = Polygon::new(vec![
            Point2D::new(0.0, 0.0),
            Point2D::new(2.0, 0.0),
            Point2D::new(2.0, 1.0),
            Point2D::new(1.0, 1.0),
            Point2D::new(1.0, 2.0),
            Point2D::new(0.0, 2.0),
        ]);
        for (poly, h) in [(Polygon::unit_square(), 0.25), (l_shape, 0.4)] {
            let m = build_mesh(&poly, h).unwrap();
            assert!((m.area() - poly.area()).abs() < 1e-9 * poly.area());
            for s in 0..m.num_triangles() {
                assert!(m.triangle_area(s) > 0.0);
                for t in s + 1..m.num_triangles() {
                    assert!(
                        !interiors_overlap(&m, s, t),
                        "triangles {s} and {t} overlap"
                    );
                }
            }
        }
    }

    #[test]
    fn non_convex_domain_excludes_notch() {
        let l_shape = Polygon::new(vec![
            Point2D::new(0.0, 0.0),
            Point2D::new(2.0, 0.0),
            Point2D::new(2.0, 1.0),
            Point2D::new(1.0, 1.0),
            Point2D::new(1.0, 2.0),
            Point2D::new(0.0, 2.0),
        ]);
        let m = build_mesh(&l_shape, 0.3).unwrap();
        assert!(m.locate(Point2D::new(1.5, 1.5)).is_err());
        assert!(m.locate(Point2D::new(0.5, 1.5)).is_ok());
    }

    #[test]
    fn locate_vertex_and_centroid() {
        let m = build_mesh(&Polygon::unit_square(), 0.2).unwrap();
        for (i, &v) in m.vertices().iter().enumerate() {
            let loc = m.locate(v).unwrap();
            let tri = m.triangles()[loc.triangle_index];
            let mut w = loc.barycentric;
            w.sort_by(f64::total_cmp);
            assert_eq!(w, [0.0, 0.0, 1.0]);
            assert!(tri.contains(&i));
        }
        for t in 0..m.num_triangles() {
            let [a, b, c] = m.triangles()[t].map(|i| m.vertices()[i]);
            let g = Point2D::new((a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0);
            let loc = m.locate(g).unwrap();
            assert_eq!(loc.triangle_index, t);
            for w in loc.barycentric {
                assert!((w - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shared_edge_goes_to_lowest_index() {
        let m = build_mesh(&Polygon::unit_square(), 2.0).unwrap();
        // The diagonal is shared by both triangles.
        let loc = m.locate(Point2D::new(0.5, 0.5)).unwrap();
        assert_eq!(loc.triangle_index, 0);
    }

    #[test]
    fn outside_point_is_an_error() {
        let m = build_mesh(&Polygon::unit_square(), 0.3).unwrap();
        let err = m.locate(Point2D::new(1.5, 0.5)).unwrap_err();
        assert!(err.is_outside_domain());
        assert!(m
            .interpolate(&vec![0.0; m.num_vertices()], Point2D::new(-0.1, 0.5))
            .is_err());
    }

    #[test]
    fn interpolation_is_linear_exact() {
        let m = build_mesh(&Polygon::unit_square(), 0.15).unwrap();
        let xs: Vec<f64> = m.vertices().iter().map(|p| p.x).collect();
        let aff: Vec<f64> = m
            .vertices()
            .iter()
            .map(|p| 2.0 - 3.0 * p.x + 0.5 * p.y)
            .collect();
        let ones = vec![4.25; m.num_vertices()];
        for k in 0..50 {
            let p = Point2D::new((k as f64 * 0.618).fract(), (k as f64 * 0.377).fract());
            assert!((m.interpolate(&xs, p).unwrap() - p.x).abs() < 1e-13);
            assert!(
                (m.interpolate(&aff, p).unwrap() - (2.0 - 3.0 * p.x + 0.5 * p.y)).abs() < 1e-12
            );
            assert!((m.interpolate(&ones, p).unwrap() - 4.25).abs() < 1e-14);
        }
    }

    #[test]
    fn degenerate_polygons_rejected() {
        let bowtie = Polygon::new(vec![
            Point2D::new(0.0, 0.0),
            Point2D::new(1.0, 1.0),
            Point2D::new(1.0, 0.0),
            Point2D::new(0.0, 1.0),
        ]);
        assert!(matches!(build_mesh(&bowtie, 0.2), Err(Error::Geometry(_))));
        assert!(build_mesh(&Polygon::unit_square(), 0.0).is_err());
    }

    #[test]
    fn file_roundtrip() {
        let m = build_mesh(&Polygon::unit_square(), 0.3).unwrap();
        let json = serde_json::to_string(&m.to_file()).unwrap();
        let back = TriangulatedDomain::from_file(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back.vertices(), m.vertices());
        assert_eq!(back.triangles(), m.triangles());
        assert_eq!(back.dual_areas(), m.dual_areas());
    }
}
