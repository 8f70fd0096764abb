//! Minimal 2D vector and matrix types used throughout the crate.

use core::ops::{Add, AddAssign, Mul, Neg, Sub};

use crate::math;

/// A point or vector in the plane.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    #[inline]
    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    #[inline]
    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    #[inline]
    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        math::hypot(self.x, self.y)
    }

    /// Rotation by -90 degrees: for a CCW triangle this turns an edge vector
    /// into the outward normal of that edge.
    #[inline]
    pub fn perp_right(self) -> Vec2 {
        Vec2::new(self.y, -self.x)
    }

    /// Cross product z-component of two plane vectors.
    #[inline]
    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    #[inline]
    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        Vec2::new(self.x / n, self.y / n)
    }

    #[inline]
    pub fn max_abs(self) -> f64 {
        self.x.abs().max(self.y.abs())
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    #[inline]
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    #[inline]
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    #[inline]
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    #[inline]
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    #[inline]
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// A 2x2 matrix in row-major order.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Mat2 {
    pub m: [[f64; 2]; 2],
}

impl Mat2 {
    pub const ZERO: Mat2 = Mat2 { m: [[0.0; 2]; 2] };

    #[inline]
    pub fn identity() -> Mat2 {
        Mat2 {
            m: [[1.0, 0.0], [0.0, 1.0]],
        }
    }

    #[inline]
    pub fn diag(s: f64) -> Mat2 {
        Mat2 {
            m: [[s, 0.0], [0.0, s]],
        }
    }

    /// Outer product `a b^T`.
    #[inline]
    pub fn outer(a: Vec2, b: Vec2) -> Mat2 {
        Mat2 {
            m: [[a.x * b.x, a.x * b.y], [a.y * b.x, a.y * b.y]],
        }
    }

    #[inline]
    pub fn trace(self) -> f64 {
        self.m[0][0] + self.m[1][1]
    }

    #[inline]
    pub fn transpose(self) -> Mat2 {
        Mat2 {
            m: [
                [self.m[0][0], self.m[1][0]],
                [self.m[0][1], self.m[1][1]],
            ],
        }
    }

    /// Frobenius inner product `A : B`.
    #[inline]
    pub fn ddot(self, o: Mat2) -> f64 {
        self.m[0][0] * o.m[0][0]
            + self.m[0][1] * o.m[0][1]
            + self.m[1][0] * o.m[1][0]
            + self.m[1][1] * o.m[1][1]
    }

    #[inline]
    pub fn mul_vec(self, v: Vec2) -> Vec2 {
        Vec2::new(
            self.m[0][0] * v.x + self.m[0][1] * v.y,
            self.m[1][0] * v.x + self.m[1][1] * v.y,
        )
    }

    #[inline]
    pub fn max_abs(self) -> f64 {
        let mut m = 0.0f64;
        for row in &self.m {
            for &v in row {
                m = m.max(v.abs());
            }
        }
        m
    }
}

impl Add for Mat2 {
    type Output = Mat2;
    #[inline]
    fn add(self, o: Mat2) -> Mat2 {
        let mut r = Mat2::ZERO;
        for i in 0..2 {
            for j in 0..2 {
                r.m[i][j] = self.m[i][j] + o.m[i][j];
            }
        }
        r
    }
}

impl Sub for Mat2 {
    type Output = Mat2;
    #[inline]
    fn sub(self, o: Mat2) -> Mat2 {
        let mut r = Mat2::ZERO;
        for i in 0..2 {
            for j in 0..2 {
                r.m[i][j] = self.m[i][j] - o.m[i][j];
            }
        }
        r
    }
}

impl Mul<f64> for Mat2 {
    type Output = Mat2;
    #[inline]
    fn mul(self, s: f64) -> Mat2 {
        let mut r = self;
        for i in 0..2 {
            for j in 0..2 {
                r.m[i][j] *= s;
            }
        }
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outer_and_ddot() {
        let a = Vec2::new(1.0, 2.0);
        let b = Vec2::new(3.0, -1.0);
        let ab = Mat2::outer(a, b);
        assert_eq!(ab.m, [[3.0, -1.0], [6.0, -2.0]]);
        assert_eq!(ab.trace(), 1.0);
        // A : (b c^T) = b . (A c)
        let c = Vec2::new(0.5, 4.0);
        let m = Mat2 {
            m: [[2.0, 1.0], [0.0, 3.0]],
        };
        let lhs = m.ddot(Mat2::outer(b, c));
        let rhs = b.dot(m.mul_vec(c));
        assert!((lhs - rhs).abs() < 1e-14);
    }

    #[test]
    fn perp_right_is_outward_for_ccw() {
        // CCW unit triangle, edge (0,0)->(1,0); interior is above, outward
        // normal must point down.
        let e = Vec2::new(1.0, 0.0);
        let n = e.perp_right();
        assert_eq!(n, Vec2::new(0.0, -1.0));
    }
}
