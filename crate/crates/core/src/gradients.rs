//! Descent-direction fields on the mesh from the shape-derivative tensors,
//! under three metrics: vvRKHS with a radial kernel, H1, and Euclidean.

use alloc::vec::Vec;

use crate::error::Error;
use crate::fem::{self, basis_gradients, midpoint_quadrature, MIDPOINT_BARY};
use crate::field::VectorFieldP1;
use crate::geom::Vec2;
use crate::kernels::{rkhs_gradient_at, KernelProfile, RadialKernel};
use crate::mesh::TriMesh;
use crate::tensors::ShapeTensors;

/// Metric in which the shape gradient is represented.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GradientMethod {
    RkhsGauss { sigma: f64 },
    RkhsWendland { sigma: f64 },
    H1 { seminorm: bool },
    Euclidean,
}

impl GradientMethod {
    pub fn is_rkhs(&self) -> bool {
        matches!(
            self,
            GradientMethod::RkhsGauss { .. } | GradientMethod::RkhsWendland { .. }
        )
    }

    pub fn kernel_profile(&self) -> Option<KernelProfile> {
        match self {
            GradientMethod::RkhsGauss { .. } => Some(KernelProfile::Gauss),
            GradientMethod::RkhsWendland { .. } => Some(KernelProfile::Wendland),
            _ => None,
        }
    }

    pub fn sigma(&self) -> Option<f64> {
        match self {
            GradientMethod::RkhsGauss { sigma } | GradientMethod::RkhsWendland { sigma } => {
                Some(*sigma)
            }
            _ => None,
        }
    }
}

/// `dJ_vol` applied to every hat basis field, accumulated in one element
/// sweep: entry `i` holds `(dJ(hat_i e1), dJ(hat_i e2))`.
fn dj_vol_on_hat_basis(tensors: &ShapeTensors, mesh: &TriMesh) -> Vec<Vec2> {
    assert_eq!(tensors.mesh_id(), mesh.id());
    let mut f = alloc::vec![Vec2::ZERO; mesh.n_vertices()];
    for k in 0..mesh.n_triangles() {
        let t = mesh.triangle(k);
        let (grads, _) = basis_gradients(mesh.corners(k));
        for (q, (_, w, s1, s0)) in tensors.quadrature_of_element(k).enumerate() {
            let bary = MIDPOINT_BARY[q];
            for i in 0..3 {
                // X = hat_i e_c: S1 : dX = (S1 grad_i)_c, S0 . X = S0_c hat_i.
                let v = s1.mul_vec(grads[i]) + *s0 * bary[i];
                f[t[i] as usize] += v * w;
            }
        }
    }
    f
}

/// Closed-form RKHS gradient evaluated at every vertex, then projected to
/// zero on the boundary so the resulting deformation keeps D fixed.
pub fn rkhs_gradient_field(
    mesh: &TriMesh,
    tensors: &ShapeTensors,
    kernel: &RadialKernel,
) -> VectorFieldP1 {
    let values: Vec<Vec2> = mesh
        .vertices()
        .iter()
        .map(|&y| rkhs_gradient_at(tensors, kernel, y))
        .collect();
    let mut field = VectorFieldP1::from_values(mesh, values);
    field.project_boundary_to_zero(mesh);
    field
}

/// Riesz representative of `dJ_vol` in the vector H1 inner product
/// `int dV : dX [+ V . X]` with zero Dirichlet data. The component problems
/// decouple for this inner product and share one scalar matrix.
pub fn h1_gradient_field(
    mesh: &TriMesh,
    tensors: &ShapeTensors,
    seminorm: bool,
    cg_tol: f64,
) -> Result<VectorFieldP1, Error> {
    let (matrix, map) = fem::assemble_h1_matrix(mesh, !seminorm)?;
    let rhs_full = dj_vol_on_hat_basis(tensors, mesh);
    let n = map.n_free();
    let mut rhs_x = alloc::vec![0.0; n];
    let mut rhs_y = alloc::vec![0.0; n];
    for (fi, &v) in map.vertex_of_free.iter().enumerate() {
        rhs_x[fi] = rhs_full[v as usize].x;
        rhs_y[fi] = rhs_full[v as usize].y;
    }
    let max_iter = 10 * n.max(10);
    let sol_x = fem::cg_solve(&matrix, &rhs_x, cg_tol, max_iter)?;
    let sol_y = fem::cg_solve(&matrix, &rhs_y, cg_tol, max_iter)?;
    let mut field = VectorFieldP1::zeros(mesh);
    for (fi, &v) in map.vertex_of_free.iter().enumerate() {
        field.set(v as usize, Vec2::new(sol_x[fi], sol_y[fi]));
    }
    Ok(field)
}

/// Gradient in the Euclidean metric of the hat basis: the coefficient of
/// `hat_i e_c` is just `dJ_vol(hat_i e_c)`, boundary vertices zeroed.
pub fn euclidean_gradient_field(mesh: &TriMesh, tensors: &ShapeTensors) -> VectorFieldP1 {
    let mut field = VectorFieldP1::from_values(mesh, dj_vol_on_hat_basis(tensors, mesh));
    field.project_boundary_to_zero(mesh);
    field
}

/// Dispatch on the configured metric.
pub fn gradient_field(
    method: &GradientMethod,
    mesh: &TriMesh,
    tensors: &ShapeTensors,
    cg_tol: f64,
) -> Result<VectorFieldP1, Error> {
    match method {
        GradientMethod::RkhsGauss { sigma } => {
            let kernel = RadialKernel::gauss(*sigma)?;
            Ok(rkhs_gradient_field(mesh, tensors, &kernel))
        }
        GradientMethod::RkhsWendland { sigma } => {
            let kernel = RadialKernel::wendland(*sigma)?;
            Ok(rkhs_gradient_field(mesh, tensors, &kernel))
        }
        GradientMethod::H1 { seminorm } => h1_gradient_field(mesh, tensors, *seminorm, cg_tol),
        GradientMethod::Euclidean => Ok(euclidean_gradient_field(mesh, tensors)),
    }
}

/// H1 inner product of two P1 fields, with or without the mass term,
/// integrated with the element quadrature (exact for these integrands).
pub fn h1_inner_product(
    mesh: &TriMesh,
    v: &VectorFieldP1,
    w: &VectorFieldP1,
    seminorm: bool,
) -> f64 {
    let mut total = 0.0;
    for k in 0..mesh.n_triangles() {
        let t = mesh.triangle(k);
        let (grads, _) = basis_gradients(mesh.corners(k));
        let mut dv = crate::geom::Mat2::ZERO;
        let mut dw = crate::geom::Mat2::ZERO;
        for i in 0..3 {
            dv = dv + crate::geom::Mat2::outer(v.value(t[i] as usize), grads[i]);
            dw = dw + crate::geom::Mat2::outer(w.value(t[i] as usize), grads[i]);
        }
        for (_, wq, bary) in midpoint_quadrature(mesh.corners(k)) {
            total += wq * dv.ddot(dw);
            if !seminorm {
                total += wq
                    * v.eval_in_element(mesh, k, bary)
                        .dot(w.eval_in_element(mesh, k, bary));
            }
        }
    }
    total
}
