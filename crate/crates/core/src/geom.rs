//! Small fixed-size 2D vector/matrix helpers.
//!
//! Deliberately minimal: the element kernels only ever need dot products,
//! 2x2 matrix algebra and Frobenius contractions.

use std::ops::{Add, AddAssign, Neg, Sub};

use crate::scalar::Real;

/// A point or vector in the plane.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Vec2<S> {
    pub x: S,
    pub y: S,
}

impl<S: Real> Vec2<S> {
    #[inline]
    pub fn new(x: S, y: S) -> Self {
        Vec2 { x, y }
    }

    #[inline]
    pub fn zero() -> Self {
        Vec2 {
            x: S::zero(),
            y: S::zero(),
        }
    }

    #[inline]
    pub fn dot(self, o: Self) -> S {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the cross product `self x o`.
    #[inline]
    pub fn cross(self, o: Self) -> S {
        self.x * o.y - self.y * o.x
    }

    #[inline]
    pub fn norm_sq(self) -> S {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> S {
        self.norm_sq().sqrt()
    }

    #[inline]
    pub fn scale(self, s: S) -> Self {
        Vec2::new(self.x * s, self.y * s)
    }

    /// Rotate by +90 degrees: (x, y) -> (-y, x).
    #[inline]
    pub fn rot90(self) -> Self {
        Vec2::new(-self.y, self.x)
    }

    /// Right-hand normal of a tangent: (x, y) -> (y, -x).
    ///
    /// For a boundary edge traversed with the domain on its left this is the
    /// outward normal direction.
    #[inline]
    pub fn right_normal(self) -> Self {
        Vec2::new(self.y, -self.x)
    }

    pub fn normalized(self) -> Self {
        let n = self.norm();
        Vec2::new(self.x / n, self.y / n)
    }
}

impl<S: Real> Add for Vec2<S> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl<S: Real> Sub for Vec2<S> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl<S: Real> Neg for Vec2<S> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Vec2::new(-self.x, -self.y)
    }
}

impl<S: Real> AddAssign for Vec2<S> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        self.x += o.x;
        self.y += o.y;
    }
}

/// Row-major 2x2 matrix.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Mat2<S> {
    /// `m[i][j]` is row i, column j.
    pub m: [[S; 2]; 2],
}

impl<S: Real> Mat2<S> {
    #[inline]
    pub fn new(a11: S, a12: S, a21: S, a22: S) -> Self {
        Mat2 {
            m: [[a11, a12], [a21, a22]],
        }
    }

    #[inline]
    pub fn zero() -> Self {
        Mat2::new(S::zero(), S::zero(), S::zero(), S::zero())
    }

    #[inline]
    pub fn identity() -> Self {
        Mat2::new(S::one(), S::zero(), S::zero(), S::one())
    }

    /// Outer product `u v^T`.
    #[inline]
    pub fn outer(u: Vec2<S>, v: Vec2<S>) -> Self {
        Mat2::new(u.x * v.x, u.x * v.y, u.y * v.x, u.y * v.y)
    }

    #[inline]
    pub fn transpose(self) -> Self {
        Mat2::new(self.m[0][0], self.m[1][0], self.m[0][1], self.m[1][1])
    }

    #[inline]
    pub fn trace(self) -> S {
        self.m[0][0] + self.m[1][1]
    }

    #[inline]
    pub fn matvec(self, v: Vec2<S>) -> Vec2<S> {
        Vec2::new(
            self.m[0][0] * v.x + self.m[0][1] * v.y,
            self.m[1][0] * v.x + self.m[1][1] * v.y,
        )
    }

    #[inline]
    pub fn matmul(self, o: Self) -> Self {
        let a = self.m;
        let b = o.m;
        Mat2::new(
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        )
    }

    /// Frobenius contraction `A : B`.
    #[inline]
    pub fn frob(self, o: Self) -> S {
        self.m[0][0] * o.m[0][0]
            + self.m[0][1] * o.m[0][1]
            + self.m[1][0] * o.m[1][0]
            + self.m[1][1] * o.m[1][1]
    }

    #[inline]
    pub fn scale(self, s: S) -> Self {
        Mat2::new(
            self.m[0][0] * s,
            self.m[0][1] * s,
            self.m[1][0] * s,
            self.m[1][1] * s,
        )
    }
}

impl<S: Real> Add for Mat2<S> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Mat2::new(
            self.m[0][0] + o.m[0][0],
            self.m[0][1] + o.m[0][1],
            self.m[1][0] + o.m[1][0],
            self.m[1][1] + o.m[1][1],
        )
    }
}

impl<S: Real> Sub for Mat2<S> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Mat2::new(
            self.m[0][0] - o.m[0][0],
            self.m[0][1] - o.m[0][1],
            self.m[1][0] - o.m[1][0],
            self.m[1][1] - o.m[1][1],
        )
    }
}

impl<S: Real> AddAssign for Mat2<S> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vector_basics() {
        let a = Vec2::new(1.0, 2.0);
        let b = Vec2::new(3.0, -1.0);
        assert_eq!(a.dot(b), 1.0);
        assert_eq!(a.cross(b), -7.0);
        assert_eq!((a + b).x, 4.0);
        assert_eq!(a.rot90(), Vec2::new(-2.0, 1.0));
        assert_eq!(a.right_normal(), Vec2::new(2.0, -1.0));
    }

    #[test]
    fn matrix_basics() {
        let a = Mat2::new(1.0, 2.0, 3.0, 4.0);
        let v = Vec2::new(1.0, 1.0);
        assert_eq!(a.matvec(v), Vec2::new(3.0, 7.0));
        assert_eq!(a.trace(), 5.0);
        assert_eq!(a.transpose().m[0][1], 3.0);
        let b = Mat2::identity();
        assert_eq!(a.matmul(b), a);
        assert_eq!(a.frob(a), 1.0 + 4.0 + 9.0 + 16.0);
        assert_eq!(
            Mat2::outer(Vec2::new(2.0, 0.0), Vec2::new(0.0, 3.0)).m[0][1],
            6.0
        );
    }
}
