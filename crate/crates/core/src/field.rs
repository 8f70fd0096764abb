//! Per-vertex nodal fields on a [`TriMesh`].

use alloc::vec::Vec;

use crate::geom::Vec2;
use crate::mesh::TriMesh;

/// Scalar P1 field, one value per mesh vertex.
#[derive(Clone, Debug)]
pub struct ScalarFieldP1 {
    values: Vec<f64>,
    mesh_id: u64,
}

impl ScalarFieldP1 {
    pub fn zeros(mesh: &TriMesh) -> Self {
        ScalarFieldP1 {
            values: alloc::vec![0.0; mesh.n_vertices()],
            mesh_id: mesh.id(),
        }
    }

    pub fn from_values(mesh: &TriMesh, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), mesh.n_vertices());
        ScalarFieldP1 {
            values,
            mesh_id: mesh.id(),
        }
    }

    /// Nodal interpolation of an analytic function.
    pub fn interpolate(mesh: &TriMesh, f: impl Fn(Vec2) -> f64) -> Self {
        ScalarFieldP1 {
            values: mesh.vertices().iter().map(|&p| f(p)).collect(),
            mesh_id: mesh.id(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mesh_id(&self) -> u64 {
        self.mesh_id
    }

    pub fn value(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn set(&mut self, i: usize, v: f64) {
        self.values[i] = v;
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Value of the linear interpolant at a point of element `k`, given its
    /// barycentric coordinates.
    pub fn eval_in_element(&self, mesh: &TriMesh, k: usize, bary: [f64; 3]) -> f64 {
        let t = mesh.triangle(k);
        bary[0] * self.values[t[0] as usize]
            + bary[1] * self.values[t[1] as usize]
            + bary[2] * self.values[t[2] as usize]
    }

    /// Evaluates the field at an arbitrary point of its own mesh, trying
    /// `hint` first (cheap when the point is known to lie in or very near
    /// that element, as for slightly deformed quadrature points). Falls back
    /// to a global search, and to affine extrapolation from the hint element
    /// when the point escapes the mesh by rounding.
    pub fn eval_at(&self, mesh: &TriMesh, point: Vec2, hint: usize) -> f64 {
        let bary_in = |k: usize| -> ([f64; 3], f64) {
            let [a, b, c] = mesh.corners(k);
            let area = (b - a).cross(c - a);
            let l0 = (b - point).cross(c - point) / area;
            let l1 = (c - point).cross(a - point) / area;
            let l2 = (a - point).cross(b - point) / area;
            ([l0, l1, l2], l0.min(l1).min(l2))
        };
        let (bary, min) = bary_in(hint);
        if min >= -1e-9 {
            return self.eval_in_element(mesh, hint, bary);
        }
        match crate::mesh::locate(mesh, point) {
            crate::mesh::Located::Inside {
                element,
                barycentric,
            } => self.eval_in_element(mesh, element, barycentric),
            crate::mesh::Located::Outside => self.eval_in_element(mesh, hint, bary),
        }
    }

    /// Piecewise-constant gradient on element `k`.
    pub fn gradient_in_element(&self, mesh: &TriMesh, k: usize) -> Vec2 {
        let t = mesh.triangle(k);
        let [a, b, c] = mesh.corners(k);
        let area2 = (b - a).cross(c - a);
        // Gradients of the barycentric basis functions.
        let ga = (c - b).perp_right() * (-1.0 / area2);
        let gb = (a - c).perp_right() * (-1.0 / area2);
        let gc = (b - a).perp_right() * (-1.0 / area2);
        ga * self.values[t[0] as usize]
            + gb * self.values[t[1] as usize]
            + gc * self.values[t[2] as usize]
    }
}

/// Vector-valued P1 field, one 2-vector per mesh vertex.
#[derive(Clone, Debug)]
pub struct VectorFieldP1 {
    values: Vec<Vec2>,
    mesh_id: u64,
}

impl VectorFieldP1 {
    pub fn zeros(mesh: &TriMesh) -> Self {
        VectorFieldP1 {
            values: alloc::vec![Vec2::ZERO; mesh.n_vertices()],
            mesh_id: mesh.id(),
        }
    }

    pub fn from_values(mesh: &TriMesh, values: Vec<Vec2>) -> Self {
        assert_eq!(values.len(), mesh.n_vertices());
        VectorFieldP1 {
            values,
            mesh_id: mesh.id(),
        }
    }

    pub fn interpolate(mesh: &TriMesh, f: impl Fn(Vec2) -> Vec2) -> Self {
        VectorFieldP1 {
            values: mesh.vertices().iter().map(|&p| f(p)).collect(),
            mesh_id: mesh.id(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mesh_id(&self) -> u64 {
        self.mesh_id
    }

    pub fn value(&self, i: usize) -> Vec2 {
        self.values[i]
    }

    pub fn values(&self) -> &[Vec2] {
        &self.values
    }

    pub fn set(&mut self, i: usize, v: Vec2) {
        self.values[i] = v;
    }

    /// Zeroes the field at boundary vertices.
    pub fn project_boundary_to_zero(&mut self, mesh: &TriMesh) {
        assert_eq!(self.mesh_id, mesh.id());
        for i in 0..self.values.len() {
            if mesh.is_boundary_vertex(i) {
                self.values[i] = Vec2::ZERO;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.max_abs()))
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.values {
            *v = *v * s;
        }
    }

    pub fn eval_in_element(&self, mesh: &TriMesh, k: usize, bary: [f64; 3]) -> Vec2 {
        let t = mesh.triangle(k);
        self.values[t[0] as usize] * bary[0]
            + self.values[t[1] as usize] * bary[1]
            + self.values[t[2] as usize] * bary[2]
    }
}
