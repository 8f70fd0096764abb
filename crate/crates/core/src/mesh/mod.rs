//! Body-fitted triangulations of the unit square D = (0,1)^2 with an internal
//! interface separating a PLUS phase from a MINUS phase.
//!
//! Meshes are immutable after construction. [`deform`] produces a new mesh
//! with displaced vertices and unchanged connectivity and labels; validity of
//! the result is a separate query ([`validate`]).

mod delaunay;
mod generate;

pub use generate::{generate_mesh, union_boundary_polylines};

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use crate::error::Error;
use crate::field::VectorFieldP1;
use crate::geom::Vec2;
use crate::math;

/// Phase label of an element.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Label {
    Minus,
    Plus,
}

/// Analytic description of the phase region Omega as a union of discs.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeSpec {
    pub discs: Vec<Disc>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Disc {
    pub center: Vec2,
    pub radius: f64,
}

impl ShapeSpec {
    pub fn new(discs: Vec<Disc>) -> Self {
        ShapeSpec { discs }
    }

    pub fn empty() -> Self {
        ShapeSpec { discs: Vec::new() }
    }

    /// Every disc must lie strictly inside D (center distance to the boundary
    /// of D exceeds the radius).
    pub fn validate(&self) -> Result<(), Error> {
        for d in &self.discs {
            if !(d.radius > 0.0) {
                return Err(Error::InvalidShape(format!(
                    "disc radius must be positive, got {}",
                    d.radius
                )));
            }
            let margin = d
                .center
                .x
                .min(d.center.y)
                .min(1.0 - d.center.x)
                .min(1.0 - d.center.y);
            if !(margin > d.radius) {
                return Err(Error::InvalidShape(format!(
                    "disc at ({},{}) with radius {} touches the boundary of D",
                    d.center.x, d.center.y, d.radius
                )));
            }
        }
        Ok(())
    }

    /// Membership test for the union of discs.
    pub fn contains(&self, p: Vec2) -> bool {
        self.discs
            .iter()
            .any(|d| (p - d.center).norm_sq() < d.radius * d.radius)
    }
}

/// An edge of the mesh shared by one PLUS and one MINUS element.
#[derive(Clone, Copy, Debug)]
pub struct InterfaceEdge {
    /// Endpoint vertex indices, ordered as traversed by the PLUS element.
    pub endpoints: [u32; 2],
    /// Unit normal pointing from the PLUS side into the MINUS side.
    pub normal: Vec2,
    pub length: f64,
    /// Adjacent element indices (plus side, minus side).
    pub plus_element: usize,
    pub minus_element: usize,
}

/// Floors used by [`validate`].
#[derive(Clone, Copy, Debug)]
pub struct QualityFloors {
    pub area_floor: f64,
    pub angle_floor_deg: f64,
}

impl Default for QualityFloors {
    fn default() -> Self {
        QualityFloors {
            area_floor: 1e-12,
            angle_floor_deg: 5.0,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct QualityReport {
    pub min_signed_area: f64,
    pub min_angle_deg: f64,
    pub valid: bool,
}

static NEXT_MESH_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_mesh_id() -> u64 {
    NEXT_MESH_ID.fetch_add(1, Ordering::Relaxed)
}

/// Conforming triangulation of D with per-element phase labels.
#[derive(Clone, Debug)]
pub struct TriMesh {
    vertices: Vec<Vec2>,
    triangles: Vec<[u32; 3]>,
    labels: Vec<Label>,
    boundary: Vec<bool>,
    id: u64,
}

const BOUNDARY_TOL: f64 = 1e-12;

fn on_unit_square_boundary(p: Vec2) -> bool {
    p.x.abs() <= BOUNDARY_TOL
        || (p.x - 1.0).abs() <= BOUNDARY_TOL
        || p.y.abs() <= BOUNDARY_TOL
        || (p.y - 1.0).abs() <= BOUNDARY_TOL
}

impl TriMesh {
    /// Builds a mesh from raw arrays, checking the structural invariants:
    /// positive element areas, in-range indices, boundary flags on the
    /// boundary of D, and closed interface polylines away from the boundary.
    pub fn from_parts(
        vertices: Vec<Vec2>,
        triangles: Vec<[u32; 3]>,
        labels: Vec<Label>,
        boundary: Vec<bool>,
    ) -> Result<Self, Error> {
        if labels.len() != triangles.len() {
            return Err(Error::InvalidMesh(format!(
                "{} labels for {} triangles",
                labels.len(),
                triangles.len()
            )));
        }
        if boundary.len() != vertices.len() {
            return Err(Error::InvalidMesh(format!(
                "{} boundary flags for {} vertices",
                boundary.len(),
                vertices.len()
            )));
        }
        let nv = vertices.len() as u32;
        for (k, t) in triangles.iter().enumerate() {
            if t.iter().any(|&v| v >= nv) {
                return Err(Error::InvalidMesh(format!(
                    "triangle {k} references a vertex out of range"
                )));
            }
            let a = vertices[t[0] as usize];
            let b = vertices[t[1] as usize];
            let c = vertices[t[2] as usize];
            let area = 0.5 * (b - a).cross(c - a);
            if !(area > 0.0) {
                return Err(Error::InvalidMesh(format!(
                    "triangle {k} has non-positive signed area {area}"
                )));
            }
        }
        for (i, (&flag, &p)) in boundary.iter().zip(vertices.iter()).enumerate() {
            if flag && !on_unit_square_boundary(p) {
                return Err(Error::InvalidMesh(format!(
                    "vertex {i} flagged as boundary but lies at ({},{})",
                    p.x, p.y
                )));
            }
        }
        let mesh = TriMesh {
            vertices,
            triangles,
            labels,
            boundary,
            id: fresh_mesh_id(),
        };
        mesh.check_interface_topology()?;
        Ok(mesh)
    }

    /// Interface edges must form closed polylines (even interface degree at
    /// every vertex) and must not touch the boundary of D.
    fn check_interface_topology(&self) -> Result<(), Error> {
        let edges = interface_edges(self);
        let mut degree: BTreeMap<u32, usize> = BTreeMap::new();
        for e in &edges {
            for &v in &e.endpoints {
                if self.boundary[v as usize] {
                    return Err(Error::InvalidMesh(format!(
                        "interface touches the boundary of D at vertex {v}"
                    )));
                }
                *degree.entry(v).or_insert(0) += 1;
            }
        }
        for (&v, &d) in &degree {
            if d % 2 != 0 {
                return Err(Error::InvalidMesh(format!(
                    "interface polyline is not closed at vertex {v} (degree {d})"
                )));
            }
        }
        Ok(())
    }

    /// Constructor that skips invariant checks. Used by `deform`, whose output
    /// is allowed to be invalid until revalidated by the caller.
    fn from_parts_unchecked(
        vertices: Vec<Vec2>,
        triangles: Vec<[u32; 3]>,
        labels: Vec<Label>,
        boundary: Vec<bool>,
    ) -> Self {
        TriMesh {
            vertices,
            triangles,
            labels,
            boundary,
            id: fresh_mesh_id(),
        }
    }

    /// Uniform right-triangle mesh of the unit square with `n x n` cells,
    /// all elements labeled MINUS. Used for convergence studies.
    pub fn structured(n: usize) -> Self {
        assert!(n >= 1);
        let np = n + 1;
        let h = 1.0 / n as f64;
        let mut vertices = Vec::with_capacity(np * np);
        let mut boundary = Vec::with_capacity(np * np);
        for j in 0..np {
            for i in 0..np {
                // exact 0 and 1 at the ends
                let x = if i == n { 1.0 } else { i as f64 * h };
                let y = if j == n { 1.0 } else { j as f64 * h };
                vertices.push(Vec2::new(x, y));
                boundary.push(i == 0 || i == n || j == 0 || j == n);
            }
        }
        let idx = |i: usize, j: usize| (j * np + i) as u32;
        let mut triangles = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                triangles.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
                triangles.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
            }
        }
        let labels = alloc::vec![Label::Minus; triangles.len()];
        TriMesh::from_parts(vertices, triangles, labels, boundary)
            .expect("structured mesh is always valid")
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn vertex(&self, i: usize) -> Vec2 {
        self.vertices[i]
    }

    pub fn triangle(&self, k: usize) -> [u32; 3] {
        self.triangles[k]
    }

    pub fn label(&self, k: usize) -> Label {
        self.labels[k]
    }

    pub fn is_boundary_vertex(&self, i: usize) -> bool {
        self.boundary[i]
    }

    pub fn boundary_flags(&self) -> &[bool] {
        &self.boundary
    }

    /// Identity token used to detect fields paired with the wrong mesh.
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn corners(&self, k: usize) -> [Vec2; 3] {
        let t = self.triangles[k];
        [
            self.vertices[t[0] as usize],
            self.vertices[t[1] as usize],
            self.vertices[t[2] as usize],
        ]
    }

    pub fn signed_area(&self, k: usize) -> f64 {
        let [a, b, c] = self.corners(k);
        0.5 * (b - a).cross(c - a)
    }

    pub fn centroid(&self, k: usize) -> Vec2 {
        let [a, b, c] = self.corners(k);
        (a + b + c) * (1.0 / 3.0)
    }

    /// Total area of all elements carrying `label`.
    pub fn area_of_label(&self, label: Label) -> f64 {
        (0..self.n_triangles())
            .filter(|&k| self.labels[k] == label)
            .map(|k| self.signed_area(k))
            .sum()
    }
}

/// Moves every vertex by `t * V`, zeroing the displacement at boundary
/// vertices so the boundary of D stays fixed. Connectivity and labels are
/// unchanged and no revalidation is performed.
pub fn deform(mesh: &TriMesh, direction: &VectorFieldP1, t: f64) -> Result<TriMesh, Error> {
    if direction.mesh_id() != mesh.id() || direction.len() != mesh.n_vertices() {
        return Err(Error::MeshMismatch);
    }
    let vertices: Vec<Vec2> = mesh
        .vertices
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            if mesh.boundary[i] {
                p
            } else {
                p + direction.value(i) * t
            }
        })
        .collect();
    Ok(TriMesh::from_parts_unchecked(
        vertices,
        mesh.triangles.clone(),
        mesh.labels.clone(),
        mesh.boundary.clone(),
    ))
}

/// Minimum signed area and minimum interior angle over all elements.
pub fn validate(mesh: &TriMesh, floors: &QualityFloors) -> QualityReport {
    let mut min_area = f64::INFINITY;
    let mut min_angle = f64::INFINITY;
    for k in 0..mesh.n_triangles() {
        let [a, b, c] = mesh.corners(k);
        min_area = min_area.min(0.5 * (b - a).cross(c - a));
        for (p, q, r) in [(a, b, c), (b, c, a), (c, a, b)] {
            let u = q - p;
            let v = r - p;
            let denom = u.norm() * v.norm();
            if denom > 0.0 {
                let cosang = (u.dot(v) / denom).clamp(-1.0, 1.0);
                min_angle = min_angle.min(math::acos(cosang) * 180.0 / core::f64::consts::PI);
            } else {
                min_angle = 0.0;
            }
        }
    }
    if mesh.n_triangles() == 0 {
        min_area = 0.0;
        min_angle = 0.0;
    }
    QualityReport {
        min_signed_area: min_area,
        min_angle_deg: min_angle,
        valid: min_area > floors.area_floor && min_angle > floors.angle_floor_deg,
    }
}

/// Directed edge occurrences keyed by the sorted vertex pair.
fn edge_map(mesh: &TriMesh) -> BTreeMap<(u32, u32), Vec<(usize, u32, u32)>> {
    let mut map: BTreeMap<(u32, u32), Vec<(usize, u32, u32)>> = BTreeMap::new();
    for (k, t) in mesh.triangles.iter().enumerate() {
        for e in 0..3 {
            let a = t[e];
            let b = t[(e + 1) % 3];
            let key = (a.min(b), a.max(b));
            map.entry(key).or_default().push((k, a, b));
        }
    }
    map
}

/// All edges shared by one PLUS and one MINUS element, with normals oriented
/// from PLUS into MINUS. The output order is deterministic.
pub fn interface_edges(mesh: &TriMesh) -> Vec<InterfaceEdge> {
    let mut edges = Vec::new();
    for (_, occ) in edge_map(mesh) {
        if occ.len() != 2 {
            continue;
        }
        let (k0, a0, b0) = occ[0];
        let (k1, _, _) = occ[1];
        let (plus, minus, a, b) = match (mesh.labels[k0], mesh.labels[k1]) {
            (Label::Plus, Label::Minus) => (k0, k1, a0, b0),
            (Label::Minus, Label::Plus) => (k1, k0, occ[1].1, occ[1].2),
            _ => continue,
        };
        let pa = mesh.vertices[a as usize];
        let pb = mesh.vertices[b as usize];
        let edge = pb - pa;
        // The PLUS triangle is CCW, so its interior lies left of a->b and the
        // outward normal (PLUS into MINUS) is the right perpendicular.
        edges.push(InterfaceEdge {
            endpoints: [a, b],
            normal: edge.perp_right().normalized(),
            length: edge.norm(),
            plus_element: plus,
            minus_element: minus,
        });
    }
    edges
}

/// Stitches the interface edges into closed vertex loops. Each loop lists its
/// vertices once, in order; the closing edge back to the first vertex is
/// implied.
pub fn interface_polylines(mesh: &TriMesh) -> Vec<Vec<u32>> {
    let edges = interface_edges(mesh);
    let mut incident: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, e) in edges.iter().enumerate() {
        incident.entry(e.endpoints[0]).or_default().push(i);
        incident.entry(e.endpoints[1]).or_default().push(i);
    }
    let mut used = alloc::vec![false; edges.len()];
    let mut loops = Vec::new();
    for start in 0..edges.len() {
        if used[start] {
            continue;
        }
        used[start] = true;
        let mut cycle = alloc::vec![edges[start].endpoints[0]];
        let mut current = edges[start].endpoints[1];
        let first = edges[start].endpoints[0];
        while current != first {
            cycle.push(current);
            let next = incident[&current]
                .iter()
                .copied()
                .find(|&i| !used[i])
                .expect("interface polyline is closed");
            used[next] = true;
            current = if edges[next].endpoints[0] == current {
                edges[next].endpoints[1]
            } else {
                edges[next].endpoints[0]
            };
        }
        loops.push(cycle);
    }
    loops
}

/// Result of locating a point in the mesh.
#[derive(Clone, Copy, Debug)]
pub enum Located {
    Inside {
        element: usize,
        barycentric: [f64; 3],
    },
    Outside,
}

/// Finds the element containing `point` and its barycentric coordinates.
pub fn locate(mesh: &TriMesh, point: Vec2) -> Located {
    const TOL: f64 = 1e-12;
    for k in 0..mesh.n_triangles() {
        let [a, b, c] = mesh.corners(k);
        let area = (b - a).cross(c - a);
        let l0 = (b - point).cross(c - point) / area;
        let l1 = (c - point).cross(a - point) / area;
        let l2 = (a - point).cross(b - point) / area;
        if l0 >= -TOL && l1 >= -TOL && l2 >= -TOL {
            return Located::Inside {
                element: k,
                barycentric: [l0.max(0.0), l1.max(0.0), l2.max(0.0)],
            };
        }
    }
    Located::Outside
}
