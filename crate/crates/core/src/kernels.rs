//! Radial kernels and the pointwise vvRKHS shape-gradient formulas.
//!
//! A radial kernel is `K(x,y) = phi_sigma(|x-y|^2) I` with
//! `phi_sigma(r) = phi(r/sigma)`. The shape gradient of a functional with
//! tensor representation (S1, S0) in the associated vvRKHS is
//!
//! ```text
//! grad(y) = int_D phi_sigma(|x-y|^2) S0(x) + (2/sigma) phi_sigma'(|x-y|^2) S1(x)(x-y) dx
//! ```
//!
//! evaluated with the same element quadrature that carries the tensors. The
//! Jacobian and divergence follow by differentiating under the integral.

use alloc::vec::Vec;

use crate::error::Error;
use crate::geom::{Mat2, Vec2};
use crate::linalg::Cholesky;
use crate::math;
use crate::tensors::ShapeTensors;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelProfile {
    /// `phi(r) = exp(-r)` applied to the squared distance.
    Gauss,
    /// Compactly supported Wendland kernel `(1-d)_+^4 (4d+1)` in the
    /// distance `d = |x-y|/sqrt(sigma)`, i.e. `phi(r) = (1-sqrt(r))_+^4
    /// (4 sqrt(r)+1)` in the squared-distance framework. The quartic applied
    /// directly to the squared distance is not positive semi-definite (its
    /// Fourier transform oscillates), so the distance form is used; the
    /// support `|x-y|^2 <= sigma` is the same either way.
    Wendland,
}

#[derive(Clone, Copy, Debug)]
pub struct RadialKernel {
    pub profile: KernelProfile,
    pub sigma: f64,
}

impl RadialKernel {
    pub fn new(profile: KernelProfile, sigma: f64) -> Result<Self, Error> {
        if !(sigma > 0.0) {
            return Err(Error::Config(alloc::format!(
                "kernel smoothing parameter must be positive, got {sigma}"
            )));
        }
        Ok(RadialKernel { profile, sigma })
    }

    pub fn gauss(sigma: f64) -> Result<Self, Error> {
        Self::new(KernelProfile::Gauss, sigma)
    }

    pub fn wendland(sigma: f64) -> Result<Self, Error> {
        Self::new(KernelProfile::Wendland, sigma)
    }

    /// `(phi_sigma, phi_sigma', phi_sigma'')` at squared distance `r`, where
    /// `phi_sigma^(k)(r) := phi^(k)(r/sigma)` carries no chain-rule factors.
    ///
    /// The Wendland profile has a square-root cusp in the squared-distance
    /// variable, so its second derivative diverges at `r = 0`; the gradient
    /// formulas only ever multiply it by factors vanishing there.
    pub fn eval(&self, r: f64) -> (f64, f64, f64) {
        debug_assert!(r >= 0.0);
        let s = r / self.sigma;
        match self.profile {
            KernelProfile::Gauss => {
                let e = math::exp(-s);
                (e, -e, e)
            }
            KernelProfile::Wendland => {
                if s >= 1.0 {
                    (0.0, 0.0, 0.0)
                } else {
                    let rho = math::sqrt(s);
                    let m = 1.0 - rho;
                    let m2 = m * m;
                    let phi = m2 * m2 * (4.0 * rho + 1.0);
                    let dphi = -10.0 * m2 * m;
                    let ddphi = if rho > 0.0 {
                        15.0 * m2 / rho
                    } else {
                        f64::INFINITY
                    };
                    (phi, dphi, ddphi)
                }
            }
        }
    }
}

/// Shape gradient of the tensors in the vvRKHS of `kernel`, evaluated at `y`.
pub fn rkhs_gradient_at(tensors: &ShapeTensors, kernel: &RadialKernel, y: Vec2) -> Vec2 {
    let two_over_sigma = 2.0 / kernel.sigma;
    let mut g = Vec2::ZERO;
    for (x, w, s1, s0) in tensors.quadrature() {
        let d = x - y;
        let (phi, dphi, _) = kernel.eval(d.norm_sq());
        g += (*s0 * phi + s1.mul_vec(d) * (two_over_sigma * dphi)) * w;
    }
    g
}

/// Jacobian (with respect to the evaluation point) of the RKHS gradient.
pub fn rkhs_jacobian_at(tensors: &ShapeTensors, kernel: &RadialKernel, y: Vec2) -> Mat2 {
    let sigma = kernel.sigma;
    let mut j = Mat2::ZERO;
    for (x, w, s1, s0) in tensors.quadrature() {
        let d = x - y;
        let r = d.norm_sq();
        let (_, dphi, ddphi) = kernel.eval(r);
        let first = (Mat2::outer(*s0, d) + *s1) * (2.0 / sigma * dphi);
        let mut term = first;
        if r > 0.0 {
            // The second term vanishes with |x-y|^2 even where phi'' blows up.
            term = term + Mat2::outer(s1.mul_vec(d), d) * (4.0 / (sigma * sigma) * ddphi);
        }
        j = j - term * w;
    }
    j
}

/// Divergence of the RKHS gradient; equals the trace of the Jacobian.
pub fn rkhs_divergence_at(tensors: &ShapeTensors, kernel: &RadialKernel, y: Vec2) -> f64 {
    let sigma = kernel.sigma;
    let mut div = 0.0;
    for (x, w, s1, s0) in tensors.quadrature() {
        let d = x - y;
        let r = d.norm_sq();
        let (_, dphi, ddphi) = kernel.eval(r);
        let mut term = 2.0 / sigma * dphi * (s0.dot(d) + s1.trace());
        if r > 0.0 {
            term += 4.0 / (sigma * sigma) * ddphi * s1.mul_vec(d).dot(d);
        }
        div -= w * term;
    }
    div
}

/// Scalar Gram system of a radial kernel over a set of centers. For
/// `K = k I` the 2N x 2N block system decouples into two copies of the
/// N x N scalar Gram matrix stored here.
pub struct GramSystem {
    centers: Vec<Vec2>,
    kernel: RadialKernel,
    gram: Vec<f64>,
}

impl GramSystem {
    pub fn n_centers(&self) -> usize {
        self.centers.len()
    }

    pub fn kernel(&self) -> &RadialKernel {
        &self.kernel
    }

    pub fn matrix(&self) -> &[f64] {
        &self.gram
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.gram[i * self.centers.len() + j]
    }

    /// Reconstructs `sum_k alpha_k v^k` at `y`, with the basis layout
    /// `v^i = K(., z_i) e1` for `i < N` and `v^{N+i} = K(., z_i) e2`.
    pub fn reconstruct_at(&self, alpha: &[f64], y: Vec2) -> Vec2 {
        let n = self.centers.len();
        assert_eq!(alpha.len(), 2 * n);
        let mut v = Vec2::ZERO;
        for (i, &z) in self.centers.iter().enumerate() {
            let (phi, _, _) = self.kernel.eval((y - z).norm_sq());
            v += Vec2::new(alpha[i], alpha[n + i]) * phi;
        }
        v
    }
}

/// Builds the Gram matrix `k_ij = phi_sigma(|z_i - z_j|^2)`.
pub fn gram_matrix(kernel: &RadialKernel, centers: &[Vec2]) -> Result<GramSystem, Error> {
    let n = centers.len();
    for i in 0..n {
        for j in i + 1..n {
            if (centers[i] - centers[j]).norm() <= 1e-14 {
                return Err(Error::DuplicateCenters);
            }
        }
    }
    let mut gram = alloc::vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let (phi, _, _) = kernel.eval((centers[i] - centers[j]).norm_sq());
            gram[i * n + j] = phi;
        }
    }
    Ok(GramSystem {
        centers: centers.to_vec(),
        kernel: *kernel,
        gram,
    })
}

const CONDITION_LIMIT: f64 = 1e12;

/// Solves `A_N alpha = F_N` for the coefficients of the finite-dimensional
/// RKHS gradient, where `F_N` holds the functional values on the kernel
/// basis (x-components first, then y-components).
pub fn finite_dim_gradient(gram: &GramSystem, functional: &[f64]) -> Result<Vec<f64>, Error> {
    let n = gram.n_centers();
    assert_eq!(functional.len(), 2 * n);
    let ch = Cholesky::new(&gram.gram, n)?;
    if ch.condition_estimate > CONDITION_LIMIT {
        return Err(Error::IllConditioned {
            estimate: ch.condition_estimate,
        });
    }
    let mut alpha = ch.solve(&functional[..n]);
    alpha.extend(ch.solve(&functional[n..]));
    Ok(alpha)
}

/// Functional values `F_k = dJ(v^k)` of the tensors on the kernel basis
/// fields `v^i = K(., z_i) e1`, `v^{N+i} = K(., z_i) e2`, integrated with the
/// tensor quadrature. By the reproducing property this equals the pointwise
/// RKHS gradient at the centers.
pub fn functional_on_kernel_basis(
    tensors: &ShapeTensors,
    kernel: &RadialKernel,
    centers: &[Vec2],
) -> Vec<f64> {
    let n = centers.len();
    let mut f = alloc::vec![0.0; 2 * n];
    let two_over_sigma = 2.0 / kernel.sigma;
    for (i, &z) in centers.iter().enumerate() {
        // v(x) = phi(|x-z|^2) e_c, dv = e_c (x) grad_x phi, so
        // S1 : dv = (S1 grad_x phi)_c and S0 . v = S0_c phi.
        let mut acc = Vec2::ZERO;
        for (x, w, s1, s0) in tensors.quadrature() {
            let d = x - z;
            let (phi, dphi, _) = kernel.eval(d.norm_sq());
            let grad_phi = d * (two_over_sigma * dphi);
            acc += (s1.mul_vec(grad_phi) + *s0 * phi) * w;
        }
        f[i] = acc.x;
        f[n + i] = acc.y;
    }
    f
}
