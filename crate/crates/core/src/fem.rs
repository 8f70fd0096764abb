//! P1 finite elements for the transmission state and adjoint equations on a
//! labeled mesh, and evaluation of the tracking cost.
//!
//! All integrals use the order-2 rule with the three edge midpoints, which is
//! exact for every integrand appearing here with P1 fields and constant
//! sources.

use alloc::vec::Vec;

use crate::error::Error;
use crate::field::ScalarFieldP1;
use crate::geom::Vec2;
use crate::math;
use crate::mesh::{Label, ShapeSpec, TriMesh};

/// Source term of the state equation.
#[derive(Clone, Debug)]
pub enum SourceTerm {
    Constant(f64),
    Field(ScalarFieldP1),
}

impl SourceTerm {
    fn value(&self, mesh: &TriMesh, k: usize, bary: [f64; 3]) -> f64 {
        match self {
            SourceTerm::Constant(c) => *c,
            SourceTerm::Field(f) => f.eval_in_element(mesh, k, bary),
        }
    }

    /// Piecewise-constant gradient; zero for a constant source.
    pub fn gradient_in_element(&self, mesh: &TriMesh, k: usize) -> Vec2 {
        match self {
            SourceTerm::Constant(_) => Vec2::ZERO,
            SourceTerm::Field(f) => f.gradient_in_element(mesh, k),
        }
    }
}

/// Data of the transmission problem on a given mesh.
#[derive(Clone, Debug)]
pub struct ProblemData {
    pub beta_plus: f64,
    pub beta_minus: f64,
    pub source: SourceTerm,
    pub u_d: ScalarFieldP1,
}

/// Mesh-independent description of the optimisation problem: conductivities,
/// the constant source, and the analytic target shape defining u_d.
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    pub beta_plus: f64,
    pub beta_minus: f64,
    pub source: f64,
    pub target: ShapeSpec,
    pub cg_tol: f64,
}

impl ProblemSpec {
    /// Problem data on `mesh`, with the target recomputed there.
    pub fn data_on(&self, mesh: &TriMesh) -> Result<ProblemData, Error> {
        let u_d = compute_target(
            mesh,
            &self.target,
            self.beta_plus,
            self.beta_minus,
            &SourceTerm::Constant(self.source),
            self.cg_tol,
        )?;
        Ok(ProblemData {
            beta_plus: self.beta_plus,
            beta_minus: self.beta_minus,
            source: SourceTerm::Constant(self.source),
            u_d,
        })
    }

    /// Cost of the configuration on an arbitrary (possibly deformed) mesh:
    /// recompute the target, solve the state, evaluate the tracking cost.
    pub fn cost_on(&self, mesh: &TriMesh) -> Result<f64, Error> {
        let data = self.data_on(mesh)?;
        let u = solve_state(mesh, &data, self.cg_tol)?;
        Ok(cost(mesh, &u, &data.u_d))
    }

    /// Cost on a deformed copy of `base` against a target field held fixed
    /// as a function of space: the state is re-solved on `moved` (labels
    /// travel with the elements), while `u_d` is read through the affine
    /// extension of the matching base element. Element `k` of `moved` must
    /// be the image of element `k` of `base`.
    ///
    /// This is the evaluation whose exact derivative at the base mesh is the
    /// volume expression; recomputing the target per trial mesh would add
    /// mesh-dependent discretisation noise of the same order as the
    /// derivative itself.
    pub fn trial_cost(
        &self,
        base: &TriMesh,
        u_d: &ScalarFieldP1,
        moved: &TriMesh,
    ) -> Result<f64, Error> {
        assert_eq!(u_d.mesh_id(), base.id());
        assert_eq!(base.n_triangles(), moved.n_triangles());
        let data = ProblemData {
            beta_plus: self.beta_plus,
            beta_minus: self.beta_minus,
            source: SourceTerm::Constant(self.source),
            u_d: ScalarFieldP1::zeros(moved),
        };
        let u_t = solve_state(moved, &data, self.cg_tol)?;
        let mut j = 0.0;
        for k in 0..moved.n_triangles() {
            let [a, b, c] = base.corners(k);
            let area = (b - a).cross(c - a);
            for (y, w, bary) in midpoint_quadrature(moved.corners(k)) {
                let base_bary = [
                    (b - y).cross(c - y) / area,
                    (c - y).cross(a - y) / area,
                    (a - y).cross(b - y) / area,
                ];
                let diff =
                    u_t.eval_in_element(moved, k, bary) - u_d.eval_in_element(base, k, base_bary);
                j += w * diff * diff;
            }
        }
        Ok(j)
    }
}

impl ProblemData {
    pub fn beta(&self, label: Label) -> f64 {
        match label {
            Label::Plus => self.beta_plus,
            Label::Minus => self.beta_minus,
        }
    }
}

/// Symmetric positive definite matrix in CSR layout over the free
/// (non-Dirichlet) vertices.
#[derive(Clone, Debug)]
pub struct SparseSpd {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseSpd {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.col_idx[k]];
            }
            y[i] = s;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = alloc::vec![0.0; self.n];
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.col_idx[k] == i {
                    d[i] = self.vals[k];
                }
            }
        }
        d
    }

    /// Adds to an entry that exists in the sparsity pattern.
    fn add_entry(&mut self, row: usize, col: usize, value: f64) {
        let lo = self.row_ptr[row];
        let hi = self.row_ptr[row + 1];
        let k = lo + self.col_idx[lo..hi]
            .binary_search(&col)
            .expect("entry outside sparsity pattern");
        self.vals[k] += value;
    }

    /// Maximum relative asymmetry over all stored entries.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                let aij = self.vals[k];
                let mut aji = 0.0;
                for l in self.row_ptr[j]..self.row_ptr[j + 1] {
                    if self.col_idx[l] == i {
                        aji = self.vals[l];
                    }
                }
                let scale = aij.abs().max(aji.abs()).max(1e-300);
                worst = worst.max((aij - aji).abs() / scale);
            }
        }
        worst
    }
}

/// Map between mesh vertices and free unknowns.
#[derive(Clone, Debug)]
pub struct FreeVertexMap {
    pub free_of_vertex: Vec<Option<u32>>,
    pub vertex_of_free: Vec<u32>,
}

impl FreeVertexMap {
    pub fn new(mesh: &TriMesh) -> Self {
        let mut free_of_vertex = alloc::vec![None; mesh.n_vertices()];
        let mut vertex_of_free = Vec::new();
        for i in 0..mesh.n_vertices() {
            if !mesh.is_boundary_vertex(i) {
                free_of_vertex[i] = Some(vertex_of_free.len() as u32);
                vertex_of_free.push(i as u32);
            }
        }
        FreeVertexMap {
            free_of_vertex,
            vertex_of_free,
        }
    }

    pub fn n_free(&self) -> usize {
        self.vertex_of_free.len()
    }

    /// Spreads a free-dof vector to a full per-vertex field, zero on the
    /// boundary.
    pub fn scatter(&self, mesh: &TriMesh, x: &[f64]) -> ScalarFieldP1 {
        let mut f = ScalarFieldP1::zeros(mesh);
        for (fi, &v) in self.vertex_of_free.iter().enumerate() {
            f.set(v as usize, x[fi]);
        }
        f
    }
}

/// Barycentric coordinates of the three edge midpoints.
pub const MIDPOINT_BARY: [[f64; 3]; 3] = [
    [0.5, 0.5, 0.0],
    [0.0, 0.5, 0.5],
    [0.5, 0.0, 0.5],
];

/// Edge-midpoint quadrature: three points of weight `area/3`.
pub fn midpoint_quadrature(corners: [Vec2; 3]) -> [(Vec2, f64, [f64; 3]); 3] {
    let [a, b, c] = corners;
    let area = 0.5 * (b - a).cross(c - a);
    let w = area / 3.0;
    [
        ((a + b) * 0.5, w, MIDPOINT_BARY[0]),
        ((b + c) * 0.5, w, MIDPOINT_BARY[1]),
        ((a + c) * 0.5, w, MIDPOINT_BARY[2]),
    ]
}

/// Gradients of the P1 basis functions on a triangle, and its area.
pub fn basis_gradients(corners: [Vec2; 3]) -> ([Vec2; 3], f64) {
    let [a, b, c] = corners;
    let area2 = (b - a).cross(c - a);
    let ga = (c - b).perp_right() * (-1.0 / area2);
    let gb = (a - c).perp_right() * (-1.0 / area2);
    let gc = (b - a).perp_right() * (-1.0 / area2);
    ([ga, gb, gc], 0.5 * area2)
}

fn check_mesh_for_assembly(mesh: &TriMesh) -> Result<(), Error> {
    for k in 0..mesh.n_triangles() {
        if !(mesh.signed_area(k) > 0.0) {
            return Err(Error::InvalidMesh(alloc::format!(
                "element {k} has non-positive area; assembly refused"
            )));
        }
    }
    Ok(())
}

/// Assembles the stiffness matrix with a per-element coefficient, rows and
/// columns of Dirichlet vertices eliminated.
pub fn assemble_with_coefficient(
    mesh: &TriMesh,
    beta_of_element: impl Fn(usize) -> f64,
) -> Result<(SparseSpd, FreeVertexMap), Error> {
    check_mesh_for_assembly(mesh)?;
    let map = FreeVertexMap::new(mesh);
    let n = map.n_free();

    // Sparsity pattern from vertex adjacency.
    let mut cols: Vec<Vec<usize>> = alloc::vec![Vec::new(); n];
    for k in 0..mesh.n_triangles() {
        let t = mesh.triangle(k);
        for &vi in &t {
            if let Some(fi) = map.free_of_vertex[vi as usize] {
                for &vj in &t {
                    if let Some(fj) = map.free_of_vertex[vj as usize] {
                        cols[fi as usize].push(fj as usize);
                    }
                }
            }
        }
    }
    let mut row_ptr = Vec::with_capacity(n + 1);
    row_ptr.push(0usize);
    let mut col_idx = Vec::new();
    for c in &mut cols {
        c.sort_unstable();
        c.dedup();
        col_idx.extend_from_slice(c);
        row_ptr.push(col_idx.len());
    }
    let mut vals = alloc::vec![0.0; col_idx.len()];

    let entry = |row: usize, col: usize, row_ptr: &[usize], col_idx: &[usize]| -> usize {
        let lo = row_ptr[row];
        let hi = row_ptr[row + 1];
        lo + col_idx[lo..hi].binary_search(&col).unwrap()
    };

    for k in 0..mesh.n_triangles() {
        let beta = beta_of_element(k);
        let (grads, area) = basis_gradients(mesh.corners(k));
        let t = mesh.triangle(k);
        for i in 0..3 {
            let Some(fi) = map.free_of_vertex[t[i] as usize] else {
                continue;
            };
            for j in 0..3 {
                let Some(fj) = map.free_of_vertex[t[j] as usize] else {
                    continue;
                };
                let kij = beta * area * grads[i].dot(grads[j]);
                vals[entry(fi as usize, fj as usize, &row_ptr, &col_idx)] += kij;
            }
        }
    }

    Ok((
        SparseSpd {
            n,
            row_ptr,
            col_idx,
            vals,
        },
        map,
    ))
}

/// Assembles `(i,j) -> sum_K beta_chi(K) int_K grad(phi_i).grad(phi_j)` from
/// the mesh labels.
pub fn assemble_system(
    mesh: &TriMesh,
    data: &ProblemData,
) -> Result<(SparseSpd, FreeVertexMap), Error> {
    assemble_with_coefficient(mesh, |k| data.beta(mesh.label(k)))
}

/// Assembles the scalar H1 matrix `int grad(phi_i).grad(phi_j) [+ phi_i
/// phi_j]`, Dirichlet rows and columns eliminated. With the mass term this is
/// the component matrix of the full vector H1 inner product; without it, of
/// the seminorm variant.
pub fn assemble_h1_matrix(
    mesh: &TriMesh,
    include_mass: bool,
) -> Result<(SparseSpd, FreeVertexMap), Error> {
    let (mut stiff, map) = assemble_with_coefficient(mesh, |_| 1.0)?;
    if include_mass {
        for k in 0..mesh.n_triangles() {
            let t = mesh.triangle(k);
            for (_, w, bary) in midpoint_quadrature(mesh.corners(k)) {
                for i in 0..3 {
                    let Some(fi) = map.free_of_vertex[t[i] as usize] else {
                        continue;
                    };
                    for j in 0..3 {
                        let Some(fj) = map.free_of_vertex[t[j] as usize] else {
                            continue;
                        };
                        stiff.add_entry(fi as usize, fj as usize, w * bary[i] * bary[j]);
                    }
                }
            }
        }
    }
    Ok((stiff, map))
}

/// Jacobi-preconditioned conjugate gradients. Returns `x` with
/// `||Ax - b|| <= tol * ||b||`.
pub fn cg_solve(a: &SparseSpd, b: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>, Error> {
    let n = a.n();
    assert_eq!(b.len(), n);
    if n == 0 {
        return Ok(Vec::new());
    }
    let diag = a.diagonal();
    let inv_diag: Vec<f64> = diag.iter().map(|&d| 1.0 / d).collect();
    let bnorm = math::sqrt(dot(b, b));
    if bnorm == 0.0 {
        return Ok(alloc::vec![0.0; n]);
    }
    let mut x = alloc::vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = alloc::vec![0.0; n];
    let mut history = Vec::new();
    for it in 0..max_iter {
        a.matvec(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rnorm = math::sqrt(dot(&r, &r));
        history.push(rnorm);
        if rnorm <= tol * bnorm {
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        let _ = it;
    }
    Err(Error::SolverFailure {
        residual: history.last().copied().unwrap_or(bnorm) / bnorm,
        iterations: max_iter,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Assembled transmission system, reused for the state and adjoint solves.
pub struct TransmissionSolver {
    pub matrix: SparseSpd,
    pub map: FreeVertexMap,
    cg_tol: f64,
    mesh_id: u64,
}

impl TransmissionSolver {
    pub fn new(mesh: &TriMesh, data: &ProblemData, cg_tol: f64) -> Result<Self, Error> {
        let (matrix, map) = assemble_system(mesh, data)?;
        Ok(TransmissionSolver {
            matrix,
            map,
            cg_tol,
            mesh_id: mesh.id(),
        })
    }

    fn max_iter(&self) -> usize {
        10 * self.matrix.n().max(10)
    }

    fn solve_rhs(&self, mesh: &TriMesh, rhs: &[f64]) -> Result<ScalarFieldP1, Error> {
        let x = cg_solve(&self.matrix, rhs, self.cg_tol, self.max_iter())?;
        Ok(self.map.scatter(mesh, &x))
    }

    /// `int beta_chi grad(u).grad(phi) = int f phi` for all free P1 phi.
    pub fn solve_state(&self, mesh: &TriMesh, data: &ProblemData) -> Result<ScalarFieldP1, Error> {
        assert_eq!(mesh.id(), self.mesh_id);
        let mut rhs = alloc::vec![0.0; self.map.n_free()];
        for k in 0..mesh.n_triangles() {
            let t = mesh.triangle(k);
            for (_, w, bary) in midpoint_quadrature(mesh.corners(k)) {
                let fval = data.source.value(mesh, k, bary);
                for i in 0..3 {
                    if let Some(fi) = self.map.free_of_vertex[t[i] as usize] {
                        rhs[fi as usize] += w * fval * bary[i];
                    }
                }
            }
        }
        self.solve_rhs(mesh, &rhs)
    }

    /// `int beta_chi grad(phi).grad(p) = -int 2 (u_h - u_d) phi` for all free
    /// P1 phi; the matrix is symmetric, so the state matrix is reused.
    pub fn solve_adjoint(
        &self,
        mesh: &TriMesh,
        data: &ProblemData,
        u_h: &ScalarFieldP1,
    ) -> Result<ScalarFieldP1, Error> {
        assert_eq!(mesh.id(), self.mesh_id);
        if u_h.mesh_id() != mesh.id() || data.u_d.mesh_id() != mesh.id() {
            return Err(Error::MeshMismatch);
        }
        let mut rhs = alloc::vec![0.0; self.map.n_free()];
        for k in 0..mesh.n_triangles() {
            let t = mesh.triangle(k);
            for (_, w, bary) in midpoint_quadrature(mesh.corners(k)) {
                let diff = u_h.eval_in_element(mesh, k, bary) - data.u_d.eval_in_element(mesh, k, bary);
                for i in 0..3 {
                    if let Some(fi) = self.map.free_of_vertex[t[i] as usize] {
                        rhs[fi as usize] += -2.0 * w * diff * bary[i];
                    }
                }
            }
        }
        self.solve_rhs(mesh, &rhs)
    }
}

/// One-shot state solve.
pub fn solve_state(mesh: &TriMesh, data: &ProblemData, cg_tol: f64) -> Result<ScalarFieldP1, Error> {
    TransmissionSolver::new(mesh, data, cg_tol)?.solve_state(mesh, data)
}

/// One-shot adjoint solve.
pub fn solve_adjoint(
    mesh: &TriMesh,
    data: &ProblemData,
    u_h: &ScalarFieldP1,
    cg_tol: f64,
) -> Result<ScalarFieldP1, Error> {
    TransmissionSolver::new(mesh, data, cg_tol)?.solve_adjoint(mesh, data, u_h)
}

/// Tracking cost `J = int_D |u_h - u_d|^2 dx`, integrated exactly.
pub fn cost(mesh: &TriMesh, u_h: &ScalarFieldP1, u_d: &ScalarFieldP1) -> f64 {
    assert_eq!(u_h.mesh_id(), mesh.id());
    assert_eq!(u_d.mesh_id(), mesh.id());
    let mut j = 0.0;
    for k in 0..mesh.n_triangles() {
        for (_, w, bary) in midpoint_quadrature(mesh.corners(k)) {
            let d = u_h.eval_in_element(mesh, k, bary) - u_d.eval_in_element(mesh, k, bary);
            j += w * d * d;
        }
    }
    j
}

/// Solves the state equation on the current mesh with the phase indicator of
/// `target_shape` evaluated analytically at element centroids. This is the
/// reference field u_d, recomputed whenever the mesh changes.
pub fn compute_target(
    mesh: &TriMesh,
    target_shape: &ShapeSpec,
    beta_plus: f64,
    beta_minus: f64,
    source: &SourceTerm,
    cg_tol: f64,
) -> Result<ScalarFieldP1, Error> {
    let (matrix, map) = assemble_with_coefficient(mesh, |k| {
        if target_shape.contains(mesh.centroid(k)) {
            beta_plus
        } else {
            beta_minus
        }
    })?;
    let mut rhs = alloc::vec![0.0; map.n_free()];
    for k in 0..mesh.n_triangles() {
        let t = mesh.triangle(k);
        for (_, w, bary) in midpoint_quadrature(mesh.corners(k)) {
            let fval = source.value(mesh, k, bary);
            for i in 0..3 {
                if let Some(fi) = map.free_of_vertex[t[i] as usize] {
                    rhs[fi as usize] += w * fval * bary[i];
                }
            }
        }
    }
    let x = cg_solve(&matrix, &rhs, cg_tol, 10 * matrix.n().max(10))?;
    Ok(map.scatter(mesh, &x))
}
