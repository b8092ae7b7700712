//! Triangle meshes: generation, subdomain labelling, restriction and point location.
//!
//! Subdomain labels start at 1. By convention label 1 is the normal area
//! (water) and label 2 the physical barrier (land).

use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sprs::{CsMat, TriMat};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

pub const NORMAL: u32 = 1;
pub const BARRIER: u32 = 2;

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn expand(&self, by: f64) -> Self {
        Self::new(self.x0 - by, self.y0 - by, self.x1 + by, self.y1 + by)
    }

    pub fn contains(&self, p: Point) -> bool {
        p[0] >= self.x0 && p[0] <= self.x1 && p[1] >= self.y0 && p[1] <= self.y1
    }
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeshFile", into = "MeshFile")]
pub struct TriangleMesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    subdomain: Vec<u32>,
}

/// On-disk layout, `{"vertices":[[x,y],...],"triangles":[[i,j,k],...],"subdomain":[q,...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct MeshFile {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    subdomain: Vec<u32>,
}

impl TryFrom<MeshFile> for TriangleMesh {
    type Error = Error;

    fn try_from(f: MeshFile) -> Result<Self> {
        TriangleMesh::new(f.vertices, f.triangles, f.subdomain)
    }
}

impl From<TriangleMesh> for MeshFile {
    fn from(m: TriangleMesh) -> Self {
        MeshFile {
            vertices: m.vertices,
            triangles: m.triangles,
            subdomain: m.subdomain,
        }
    }
}

impl TriangleMesh {
    /// Validates and builds a mesh. Clockwise triangles are reoriented.
    pub fn new(
        vertices: Vec<Point>,
        mut triangles: Vec<[usize; 3]>,
        subdomain: Vec<u32>,
    ) -> Result<Self> {
        if subdomain.len() != triangles.len() {
            return Err(Error::InvalidMesh(format!(
                "{} subdomain labels for {} triangles",
                subdomain.len(),
                triangles.len()
            )));
        }
        if let Some(i) = vertices
            .iter()
            .position(|v| !v[0].is_finite() || !v[1].is_finite())
        {
            return Err(Error::InvalidMesh(format!("vertex {i} has a non-finite coordinate")));
        }
        if let Some(t) = subdomain.iter().position(|&q| q == 0) {
            return Err(Error::InvalidMesh(format!("triangle {t} has subdomain label 0")));
        }
        let n = vertices.len();
        for (t, tri) in triangles.iter_mut().enumerate() {
            if let Some(&bad) = tri.iter().find(|&&i| i >= n) {
                return Err(Error::InvalidMesh(format!(
                    "triangle {t} references vertex {bad} but there are {n} vertices"
                )));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::InvalidMesh(format!("triangle {t} repeats a vertex")));
            }
            let area = 0.5 * cross(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
            if area == 0.0 || !area.is_finite() {
                return Err(Error::DegenerateTriangle { triangle: t, area });
            }
            if area < 0.0 {
                tri.swap(1, 2);
            }
        }
        let mut edges: HashMap<(usize, usize), u8> = HashMap::new();
        for (t, tri) in triangles.iter().enumerate() {
            for e in 0..3 {
                let (a, b) = (tri[e], tri[(e + 1) % 3]);
                let c = edges.entry((a.min(b), a.max(b))).or_insert(0);
                *c += 1;
                if *c > 2 {
                    return Err(Error::InvalidMesh(format!(
                        "edge ({a}, {b}) of triangle {t} is shared by more than two triangles"
                    )));
                }
            }
        }
        Ok(Self {
            vertices,
            triangles,
            subdomain,
        })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn subdomain(&self) -> &[u32] {
        &self.subdomain
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    /// Number of subdomains `k`, i.e. the largest label in use.
    pub fn subdomain_count(&self) -> usize {
        self.subdomain.iter().copied().max().unwrap_or(1) as usize
    }

    pub fn corners(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn area(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        0.5 * cross(a, b, c)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangle_count()).map(|t| self.area(t)).sum()
    }

    pub fn subdomain_area(&self, q: u32) -> f64 {
        (0..self.triangle_count())
            .filter(|&t| self.subdomain[t] == q)
            .map(|t| self.area(t))
            .sum()
    }

    pub fn centroid(&self, t: usize) -> Point {
        let [a, b, c] = self.corners(t);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    pub fn bbox(&self) -> Rect {
        let mut r = Rect::new(f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in &self.vertices {
            r.x0 = r.x0.min(v[0]);
            r.y0 = r.y0.min(v[1]);
            r.x1 = r.x1.max(v[0]);
            r.y1 = r.y1.max(v[1]);
        }
        r
    }

    /// Length of the longest edge.
    pub fn max_edge(&self) -> f64 {
        let mut h: f64 = 0.0;
        for t in 0..self.triangle_count() {
            let p = self.corners(t);
            for e in 0..3 {
                let (a, b) = (p[e], p[(e + 1) % 3]);
                h = h.max((a[0] - b[0]).hypot(a[1] - b[1]));
            }
        }
        h
    }

    /// Vertex closest to `p`, lowest index on ties.
    pub fn nearest_vertex(&self, p: Point) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, v) in self.vertices.iter().enumerate() {
            let d = (v[0] - p[0]).powi(2) + (v[1] - p[1]).powi(2);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best.map(|(i, _)| i)
    }

    /// Returns a copy with new per-triangle labels.
    pub fn with_subdomain(&self, subdomain: Vec<u32>) -> Result<Self> {
        if subdomain.len() != self.triangle_count() {
            return Err(Error::DimensionMismatch {
                expected: self.triangle_count(),
                got: subdomain.len(),
            });
        }
        if let Some(t) = subdomain.iter().position(|&q| q == 0) {
            return Err(Error::InvalidMesh(format!("triangle {t} has subdomain label 0")));
        }
        Ok(Self {
            vertices: self.vertices.clone(),
            triangles: self.triangles.clone(),
            subdomain,
        })
    }

    /// Stable content hash, used to tag derived objects with the mesh they came from.
    pub fn id(&self) -> String {
        let mut h = std::hash::DefaultHasher::new();
        for v in &self.vertices {
            v[0].to_bits().hash(&mut h);
            v[1].to_bits().hash(&mut h);
        }
        self.triangles.hash(&mut h);
        self.subdomain.hash(&mut h);
        format!("{:016x}", h.finish())
    }

    pub fn to_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer(w, self)?;
        Ok(())
    }

    pub fn from_json<R: Read>(r: R) -> Result<Self> {
        Ok(serde_json::from_reader(r)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.to_json(f)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::from_json(f)
    }
}

/// Regular triangulation of `bbox` enlarged by `extension` on every side.
///
/// The enlarged rectangle is split into `nx × ny` equal cells and every cell
/// is cut along the same diagonal (lower-left to upper-right), so all interior
/// nodes share one six-neighbour stencil. Vertices are numbered row-major from
/// the lower-left corner; cell `(i, j)` owns triangles `2(j·nx + i)` and
/// `2(j·nx + i) + 1`. All triangles get label 1.
pub fn build_regular_mesh(bbox: Rect, nx: usize, ny: usize, extension: f64) -> Result<TriangleMesh> {
    if !(bbox.width() > 0.0 && bbox.height() > 0.0) || !bbox.area().is_finite() {
        return Err(Error::InvalidParameter(format!("degenerate bounding box {bbox:?}")));
    }
    if nx < 2 || ny < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 cells per direction, got {nx}×{ny}"
        )));
    }
    if !(extension >= 0.0) || !extension.is_finite() {
        return Err(Error::InvalidParameter(format!("extension must be ≥ 0, got {extension}")));
    }
    let outer = bbox.expand(extension);
    let (hx, hy) = (outer.width() / nx as f64, outer.height() / ny as f64);
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        let y = if j == ny { outer.y1 } else { outer.y0 + j as f64 * hy };
        for i in 0..=nx {
            let x = if i == nx { outer.x1 } else { outer.x0 + i as f64 * hx };
            vertices.push([x, y]);
        }
    }
    let idx = |i: usize, j: usize| j * (nx + 1) + i;
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (v00, v10, v01, v11) = (idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1));
            triangles.push([v00, v10, v11]);
            triangles.push([v00, v11, v01]);
        }
    }
    let subdomain = vec![NORMAL; triangles.len()];
    TriangleMesh::new(vertices, triangles, subdomain)
}

/// Regular mesh whose cell size is at most `edge` in both directions.
pub fn build_mesh_with_edge(bbox: Rect, edge: f64, extension: f64) -> Result<TriangleMesh> {
    if !(edge > 0.0) {
        return Err(Error::InvalidParameter(format!("edge length must be > 0, got {edge}")));
    }
    let outer = bbox.expand(extension.max(0.0));
    // Tolerate round-off so that exact multiples do not gain an extra cell.
    let cells = |len: f64| ((len / edge) * (1.0 - 1e-12)).ceil().max(2.0) as usize;
    build_regular_mesh(bbox, cells(outer.width()), cells(outer.height()), extension)
}

/// A closed simple polygon, stored counter-clockwise without repeating the first vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    vertices: Vec<Point>,
}

impl Polygon {
    pub fn new(mut vertices: Vec<Point>) -> Result<Self> {
        if vertices.len() > 1 && vertices.first() == vertices.last() {
            vertices.pop();
        }
        if vertices.len() < 3 {
            return Err(Error::InvalidParameter("polygon needs at least 3 vertices".into()));
        }
        if vertices.iter().any(|v| !v[0].is_finite() || !v[1].is_finite()) {
            return Err(Error::InvalidParameter("polygon has a non-finite vertex".into()));
        }
        let n = vertices.len();
        for a in 0..n {
            for b in a + 1..n {
                // adjacent edges share a vertex and are allowed to touch there
                if b == a + 1 || (a == 0 && b == n - 1) {
                    continue;
                }
                let (p1, p2) = (vertices[a], vertices[(a + 1) % n]);
                let (p3, p4) = (vertices[b], vertices[(b + 1) % n]);
                if segments_intersect(p1, p2, p3, p4) {
                    return Err(Error::InvalidParameter(format!(
                        "polygon is self-intersecting (edges {a} and {b})"
                    )));
                }
            }
        }
        let poly = Self { vertices };
        if poly.signed_area() == 0.0 {
            return Err(Error::InvalidParameter("polygon has zero area".into()));
        }
        let mut poly = poly;
        if poly.signed_area() < 0.0 {
            poly.vertices.reverse();
        }
        Ok(poly)
    }

    pub fn rectangle(r: Rect) -> Result<Self> {
        Self::new(vec![[r.x0, r.y0], [r.x1, r.y0], [r.x1, r.y1], [r.x0, r.y1]])
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn signed_area(&self) -> f64 {
        let n = self.vertices.len();
        0.5 * (0..n)
            .map(|i| {
                let (a, b) = (self.vertices[i], self.vertices[(i + 1) % n]);
                a[0] * b[1] - b[0] * a[1]
            })
            .sum::<f64>()
    }

    /// Even-odd ray test. Boundary points follow the half-open crossing rule.
    pub fn contains(&self, p: Point) -> bool {
        let n = self.vertices.len();
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            let (a, b) = (self.vertices[i], self.vertices[j]);
            if (a[1] > p[1]) != (b[1] > p[1]) {
                let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
                if p[0] < x {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }
}

fn segments_intersect(p1: Point, p2: Point, p3: Point, p4: Point) -> bool {
    let d1 = cross(p3, p4, p1);
    let d2 = cross(p3, p4, p2);
    let d3 = cross(p1, p2, p3);
    let d4 = cross(p1, p2, p4);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on = |a: Point, b: Point, p: Point| {
        p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
    };
    (d1 == 0.0 && on(p3, p4, p1))
        || (d2 == 0.0 && on(p3, p4, p2))
        || (d3 == 0.0 && on(p1, p2, p3))
        || (d4 == 0.0 && on(p1, p2, p4))
}

/// Physical barrier described as a set of polygons in map coordinates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BarrierGeometry {
    pub polygons: Vec<Polygon>,
}

impl BarrierGeometry {
    pub fn new(polygons: Vec<Polygon>) -> Self {
        Self { polygons }
    }

    pub fn contains(&self, p: Point) -> bool {
        self.polygons.iter().any(|poly| poly.contains(p))
    }
}

/// Labels every triangle whose centroid lies inside the barrier with 2, all others with 1.
pub fn mark_barrier(mesh: &TriangleMesh, barrier: &BarrierGeometry) -> TriangleMesh {
    mark_where(mesh, |c| barrier.contains(c))
}

/// Labels triangles by a predicate on their centroid: `true` → barrier.
pub fn mark_where(mesh: &TriangleMesh, mut is_barrier: impl FnMut(Point) -> bool) -> TriangleMesh {
    let subdomain = (0..mesh.triangle_count())
        .map(|t| if is_barrier(mesh.centroid(t)) { BARRIER } else { NORMAL })
        .collect();
    TriangleMesh {
        vertices: mesh.vertices.clone(),
        triangles: mesh.triangles.clone(),
        subdomain,
    }
}

/// Sub-mesh of one subdomain together with the map back to parent node indices.
#[derive(Debug, Clone, PartialEq)]
pub struct RestrictedMesh {
    /// The restricted mesh; all of its triangles carry label 1.
    pub mesh: TriangleMesh,
    /// `parent_node[i]` is the parent-mesh index of restricted node `i`.
    pub parent_node: Vec<usize>,
}

impl RestrictedMesh {
    /// Inverse of `parent_node`: parent index → restricted index, if kept.
    pub fn child_of_parent(&self, parent_count: usize) -> Vec<Option<usize>> {
        let mut map = vec![None; parent_count];
        for (child, &parent) in self.parent_node.iter().enumerate() {
            map[parent] = Some(child);
        }
        map
    }
}

/// Keeps only the triangles of subdomain `q`, re-indexing vertices compactly in
/// increasing parent order.
pub fn restrict_to_subdomain(mesh: &TriangleMesh, q: u32) -> Result<RestrictedMesh> {
    let keep: Vec<usize> = (0..mesh.triangle_count())
        .filter(|&t| mesh.subdomain[t] == q)
        .collect();
    if keep.is_empty() {
        return Err(Error::EmptySubdomain(q));
    }
    let mut used = vec![false; mesh.vertex_count()];
    for &t in &keep {
        for &v in &mesh.triangles[t] {
            used[v] = true;
        }
    }
    let mut new_index = vec![usize::MAX; mesh.vertex_count()];
    let mut parent_node = Vec::new();
    for (v, &u) in used.iter().enumerate() {
        if u {
            new_index[v] = parent_node.len();
            parent_node.push(v);
        }
    }
    let vertices = parent_node.iter().map(|&v| mesh.vertices[v]).collect();
    let triangles = keep
        .iter()
        .map(|&t| mesh.triangles[t].map(|v| new_index[v]))
        .collect();
    Ok(RestrictedMesh {
        mesh: TriangleMesh {
            vertices,
            triangles,
            subdomain: vec![NORMAL; keep.len()],
        },
        parent_node,
    })
}

/// Barycentric coordinates of one point in its containing triangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionRow {
    pub triangle: usize,
    pub nodes: [usize; 3],
    pub weights: [f64; 3],
}

impl ProjectionRow {
    /// Evaluates a nodal field at the projected point.
    pub fn interpolate(&self, field: &[f64]) -> f64 {
        (0..3).map(|k| self.weights[k] * field[self.nodes[k]]).sum()
    }
}

/// Piecewise-linear evaluation operator from mesh nodes to a list of points.
/// Rows for points outside the mesh are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    rows: Vec<Option<ProjectionRow>>,
    node_count: usize,
}

impl Projector {
    pub fn rows(&self) -> &[Option<ProjectionRow>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> Option<&ProjectionRow> {
        self.rows[i].as_ref()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn invalid_rows(&self) -> Vec<usize> {
        (0..self.rows.len()).filter(|&i| self.rows[i].is_none()).collect()
    }

    pub fn is_all_valid(&self) -> bool {
        self.rows.iter().all(Option::is_some)
    }

    /// Applies the projector to a nodal field; invalid rows give NaN.
    pub fn apply(&self, field: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.map_or(f64::NAN, |r| r.interpolate(field)))
            .collect()
    }

    /// Keeps only the listed rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Projector {
        Projector {
            rows: rows.iter().map(|&i| self.rows[i]).collect(),
            node_count: self.node_count,
        }
    }

    /// Sparse `rows × node_count` matrix; invalid rows are empty.
    pub fn to_csr(&self) -> CsMat<f64> {
        let mut tri = TriMat::new((self.rows.len(), self.node_count));
        for (i, r) in self.rows.iter().enumerate() {
            if let Some(r) = r {
                for k in 0..3 {
                    if r.weights[k] != 0.0 {
                        tri.add_triplet(i, r.nodes[k], r.weights[k]);
                    }
                }
            }
        }
        tri.to_csr()
    }
}

/// Bucket grid over the mesh bounding box for point location.
struct TriangleLocator<'a> {
    mesh: &'a TriangleMesh,
    bbox: Rect,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
}

impl<'a> TriangleLocator<'a> {
    fn new(mesh: &'a TriangleMesh) -> Self {
        let bbox = mesh.bbox();
        let side = (mesh.triangle_count() as f64).sqrt().ceil().max(1.0) as usize;
        let (nx, ny) = (side, side);
        let mut buckets = vec![Vec::new(); nx * ny];
        let mut loc = Self {
            mesh,
            bbox,
            nx,
            ny,
            buckets: Vec::new(),
        };
        for t in 0..mesh.triangle_count() {
            let c = mesh.corners(t);
            let (mut lo, mut hi) = (c[0], c[0]);
            for p in &c[1..] {
                lo = [lo[0].min(p[0]), lo[1].min(p[1])];
                hi = [hi[0].max(p[0]), hi[1].max(p[1])];
            }
            let (i0, j0) = loc.cell(lo);
            let (i1, j1) = loc.cell(hi);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    buckets[j * nx + i].push(t);
                }
            }
        }
        loc.buckets = buckets;
        loc
    }

    fn cell(&self, p: Point) -> (usize, usize) {
        let fx = (p[0] - self.bbox.x0) / self.bbox.width().max(f64::MIN_POSITIVE);
        let fy = (p[1] - self.bbox.y0) / self.bbox.height().max(f64::MIN_POSITIVE);
        let i = ((fx * self.nx as f64).floor().max(0.0) as usize).min(self.nx - 1);
        let j = ((fy * self.ny as f64).floor().max(0.0) as usize).min(self.ny - 1);
        (i, j)
    }

    fn locate(&self, p: Point) -> Option<ProjectionRow> {
        if !p[0].is_finite() || !p[1].is_finite() {
            return None;
        }
        let eps = 1e-12 * (self.bbox.width() + self.bbox.height());
        let outer = self.bbox.expand(eps);
        if !outer.contains(p) {
            return None;
        }
        let (i, j) = self.cell(p);
        // buckets hold triangle indices in increasing order, so the first hit is the lowest index
        self.buckets[j * self.nx + i]
            .iter()
            .find_map(|&t| barycentric(self.mesh, t, p))
    }
}

const BARY_TOL: f64 = 1e-12;

fn barycentric(mesh: &TriangleMesh, t: usize, p: Point) -> Option<ProjectionRow> {
    let nodes = mesh.triangles[t];
    let [a, b, c] = mesh.corners(t);
    let det = cross(a, b, c);
    let mut w = [cross(p, b, c) / det, cross(p, c, a) / det, cross(p, a, b) / det];
    if w.iter().any(|&x| x < -BARY_TOL) {
        return None;
    }
    for x in &mut w {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    let s: f64 = w.iter().sum();
    if s != 1.0 {
        for x in &mut w {
            *x /= s;
        }
    }
    Some(ProjectionRow {
        triangle: t,
        nodes,
        weights: w,
    })
}

/// Barycentric projection of arbitrary points. Points on shared edges are
/// assigned to the lowest-index triangle containing them.
pub fn project_points(mesh: &TriangleMesh, points: &[Point]) -> Projector {
    let locator = TriangleLocator::new(mesh);
    Projector {
        rows: points.iter().map(|&p| locator.locate(p)).collect(),
        node_count: mesh.vertex_count(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> Rect {
        Rect::new(0.0, 0.0, 1.0, 1.0)
    }

    #[test]
    fn two_by_two_grid_counts() {
        let m = build_regular_mesh(unit(), 2, 2, 0.0).unwrap();
        assert_eq!(m.vertex_count(), 9);
        assert_eq!(m.triangle_count(), 8);
        assert!(m.subdomain().iter().all(|&q| q == NORMAL));
    }

    #[test]
    fn extension_and_area() {
        let m = build_regular_mesh(Rect::new(0.0, 0.0, 10.0, 10.0), 50, 50, 3.0).unwrap();
        let b = m.bbox();
        assert_eq!((b.x0, b.y0, b.x1, b.y1), (-3.0, -3.0, 13.0, 13.0));
        // oracle: shoelace sum over triangles, independent of Rect::area
        let total: f64 = m
            .triangles()
            .iter()
            .map(|t| {
                let (p, q, r) = (m.vertices()[t[0]], m.vertices()[t[1]], m.vertices()[t[2]]);
                0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1])).abs()
            })
            .sum();
        assert!((total - 256.0).abs() < 1e-9 * 256.0);
    }

    #[test]
    fn interior_nodes_share_one_stencil() {
        let m = build_regular_mesh(unit(), 6, 5, 0.0).unwrap();
        let mut degree = vec![0usize; m.vertex_count()];
        for t in m.triangles() {
            for &v in t {
                degree[v] += 1;
            }
        }
        for j in 1..5 {
            for i in 1..6 {
                assert_eq!(degree[j * 7 + i], 6);
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(build_regular_mesh(Rect::new(0.0, 0.0, 0.0, 1.0), 4, 4, 0.0).is_err());
        assert!(build_regular_mesh(unit(), 1, 4, 0.0).is_err());
        assert!(build_regular_mesh(unit(), 4, 4, -1.0).is_err());
    }

    #[test]
    fn edge_sized_mesh() {
        let m = build_mesh_with_edge(Rect::new(0.0, 0.0, 10.0, 10.0), 0.2, 4.5).unwrap();
        assert_eq!(m.vertex_count(), 96 * 96);
        assert!((m.max_edge() - 0.2 * 2f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn clockwise_triangles_are_reoriented() {
        let m = TriangleMesh::new(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 2, 1]], vec![1]).unwrap();
        assert!(m.area(0) > 0.0);
    }

    #[test]
    fn non_manifold_edge_rejected() {
        let v = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, -1.0], [1.0, 1.0]];
        let t = vec![[0, 1, 2], [0, 3, 1], [0, 1, 4]];
        assert!(matches!(TriangleMesh::new(v, t, vec![1, 1, 1]), Err(Error::InvalidMesh(_))));
    }

    #[test]
    fn mark_empty_and_full() {
        let m = build_regular_mesh(unit(), 4, 4, 1.0).unwrap();
        let none = mark_barrier(&m, &BarrierGeometry::default());
        assert!(none.subdomain().iter().all(|&q| q == NORMAL));
        let all = mark_barrier(
            &m,
            &BarrierGeometry::new(vec![Polygon::rectangle(m.bbox().expand(0.1)).unwrap()]),
        );
        assert!(all.subdomain().iter().all(|&q| q == BARRIER));
        assert_eq!(all.vertices(), m.vertices());
    }

    #[test]
    fn strip_area_fraction() {
        let m = build_regular_mesh(Rect::new(0.0, 0.0, 10.0, 10.0), 50, 50, 3.0).unwrap();
        let strip = Polygon::rectangle(Rect::new(-3.0, 5.0, 13.0, 5.5)).unwrap();
        let marked = mark_barrier(&m, &BarrierGeometry::new(vec![strip]));
        // oracle: area of marked triangles versus exact strip area 0.5·16
        let marked_area: f64 = (0..marked.triangle_count())
            .filter(|&t| marked.subdomain()[t] == BARRIER)
            .map(|t| marked.area(t))
            .sum();
        let row_area = 16.0 * 0.32;
        assert!((marked_area - 8.0).abs() <= row_area, "{marked_area}");
    }

    #[test]
    fn polygon_orientation_and_simplicity() {
        let cw = Polygon::new(vec![[0.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0]]).unwrap();
        assert!(cw.signed_area() > 0.0);
        let bowtie = Polygon::new(vec![[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]]);
        assert!(bowtie.is_err());
        let closed = Polygon::new(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]).unwrap();
        assert_eq!(closed.vertices().len(), 3);
    }

    #[test]
    fn restrict_identity_and_missing() {
        let m = build_regular_mesh(unit(), 3, 3, 0.0).unwrap();
        let r = restrict_to_subdomain(&m, NORMAL).unwrap();
        assert_eq!(r.mesh, m);
        assert_eq!(r.parent_node, (0..m.vertex_count()).collect::<Vec<_>>());
        assert!(matches!(restrict_to_subdomain(&m, BARRIER), Err(Error::EmptySubdomain(2))));
    }

    #[test]
    fn restrict_drops_strip_interior_nodes() {
        let m = build_regular_mesh(Rect::new(0.0, 0.0, 10.0, 10.0), 50, 50, 0.0).unwrap();
        let strip = Polygon::rectangle(Rect::new(-1.0, 4.9, 11.0, 5.7)).unwrap();
        let marked = mark_barrier(&m, &BarrierGeometry::new(vec![strip]));
        // oracle: nodes whose every adjacent triangle is barrier
        let mut touches_water = vec![false; m.vertex_count()];
        for (t, tri) in marked.triangles().iter().enumerate() {
            if marked.subdomain()[t] == NORMAL {
                for &v in tri {
                    touches_water[v] = true;
                }
            }
        }
        let only_strip = touches_water.iter().filter(|&&w| !w).count();
        assert!(only_strip > 0);
        let water = restrict_to_subdomain(&marked, NORMAL).unwrap();
        assert_eq!(water.mesh.vertex_count(), m.vertex_count() - only_strip);
        let land = restrict_to_subdomain(&marked, BARRIER).unwrap();
        assert_eq!(water.mesh.triangle_count() + land.mesh.triangle_count(), m.triangle_count());
        for (child, &parent) in water.parent_node.iter().enumerate() {
            assert_eq!(water.mesh.vertices()[child], m.vertices()[parent]);
        }
    }

    #[test]
    fn projection_special_points() {
        let m = build_regular_mesh(unit(), 2, 2, 0.0).unwrap();
        let p = project_points(&m, &[[0.5, 0.5]]);
        let row = p.row(0).unwrap();
        let (k, w) = row.weights.iter().enumerate().find(|(_, &w)| w != 0.0).unwrap();
        assert_eq!(*w, 1.0);
        assert_eq!(m.vertices()[row.nodes[k]], [0.5, 0.5]);
        assert_eq!(row.weights.iter().filter(|&&w| w != 0.0).count(), 1);

        let c = m.centroid(3);
        let row = *project_points(&m, &[c]).row(0).unwrap();
        assert_eq!(row.triangle, 3);
        for w in row.weights {
            assert!((w - 1.0 / 3.0).abs() < 1e-12);
        }

        // midpoint of the lower edge of the first cell
        let row = *project_points(&m, &[[0.25, 0.0]]).row(0).unwrap();
        let mut nz: Vec<f64> = row.weights.iter().copied().filter(|&w| w != 0.0).collect();
        nz.sort_by(f64::total_cmp);
        assert_eq!(nz.len(), 2);
        assert!((nz[0] - 0.5).abs() < 1e-12 && (nz[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn edge_ties_go_to_lowest_triangle() {
        let m = build_regular_mesh(unit(), 2, 2, 0.0).unwrap();
        // on the diagonal of cell (0,0): shared by triangles 0 and 1
        let row = *project_points(&m, &[[0.2, 0.2]]).row(0).unwrap();
        assert_eq!(row.triangle, 0);
    }

    #[test]
    fn outside_points_flagged() {
        let m = build_regular_mesh(unit(), 2, 2, 0.0).unwrap();
        let p = project_points(&m, &[[2.0, 0.5], [0.5, 0.5], [f64::NAN, 0.0]]);
        assert_eq!(p.invalid_rows(), vec![0, 2]);
        assert!(!p.is_all_valid());
    }

    #[test]
    fn json_round_trip_and_errors() {
        let m = mark_where(&build_regular_mesh(unit(), 3, 2, 0.5).unwrap(), |c| c[0] > 0.5);
        let mut buf = Vec::new();
        m.to_json(&mut buf).unwrap();
        assert_eq!(TriangleMesh::from_json(buf.as_slice()).unwrap(), m);

        let bad_index = r#"{"vertices":[[0,0],[1,0],[0,1]],"triangles":[[0,1,3]],"subdomain":[1]}"#;
        assert!(TriangleMesh::from_json(bad_index.as_bytes()).is_err());
        let nan = r#"{"vertices":[[0,0],[1,0],[0,NaN]],"triangles":[[0,1,2]],"subdomain":[1]}"#;
        assert!(TriangleMesh::from_json(nan.as_bytes()).is_err());
        let null = r#"{"vertices":[[0,0],[1,0],[0,null]],"triangles":[[0,1,2]],"subdomain":[1]}"#;
        assert!(TriangleMesh::from_json(null.as_bytes()).is_err());
        assert!(TriangleMesh::from_json("{".as_bytes()).is_err());
    }
}
