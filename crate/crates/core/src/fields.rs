//! Closed-form vector fields used as body forces, boundary data and tracking
//! targets. Each field knows its Jacobian so the shape-derivative assembly can
//! consume `Df`, `Dg`, and the target's gradient analytically.

use crate::geom::{Mat2, Vec2};
use crate::scalar::Real;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("field evaluation at the origin (r < 1e-12) is undefined")]
    OriginEvaluation,
}

/// A smooth vector field with a closed-form Jacobian.
pub trait AnalyticField<S: Real>: Send + Sync {
    fn eval(&self, p: Vec2<S>) -> Vec2<S>;
    fn jacobian(&self, p: Vec2<S>) -> Mat2<S>;
}

/// The zero field.
pub struct ZeroField;

impl<S: Real> AnalyticField<S> for ZeroField {
    fn eval(&self, _p: Vec2<S>) -> Vec2<S> {
        Vec2::zero()
    }
    fn jacobian(&self, _p: Vec2<S>) -> Mat2<S> {
        Mat2::zero()
    }
}

/// A constant field.
pub struct ConstField<S>(pub Vec2<S>);

impl<S: Real> AnalyticField<S> for ConstField<S> {
    fn eval(&self, _p: Vec2<S>) -> Vec2<S> {
        self.0
    }
    fn jacobian(&self, _p: Vec2<S>) -> Mat2<S> {
        Mat2::zero()
    }
}

/// The linear field `x -> M x`.
pub struct LinearField<S>(pub Mat2<S>);

impl<S: Real> AnalyticField<S> for LinearField<S> {
    fn eval(&self, p: Vec2<S>) -> Vec2<S> {
        self.0.matvec(p)
    }
    fn jacobian(&self, _p: Vec2<S>) -> Mat2<S> {
        self.0
    }
}

/// The tracking target: a swirl that vanishes on the circles `r = 0.2` and
/// `r = 1`,
///
/// ```text
/// u = ( -y (r - 0.2)(r - 1) / r ,  x (r - 0.2)(r - 1) / r )
/// ```
///
/// It is divergence-free, so it is an admissible Stokes velocity, and it is
/// the exact solution of the manufactured problem driven by [`SwirlBodyForce`]
/// on the annulus `0.2 < r < 1` with zero boundary data and zero pressure.
pub struct SwirlTarget;

impl SwirlTarget {
    /// `psi(r) = (r - 0.2)(r - 1)/r` and its derivative.
    fn psi<S: Real>(r: S) -> (S, S) {
        let c_inner = S::of(0.2);
        let one = S::one();
        let psi = (r - c_inner) * (r - one) / r;
        let dpsi = one - c_inner / (r * r);
        (psi, dpsi)
    }
}

impl<S: Real> AnalyticField<S> for SwirlTarget {
    fn eval(&self, p: Vec2<S>) -> Vec2<S> {
        let r = p.norm();
        let (psi, _) = Self::psi(r);
        Vec2::new(-p.y * psi, p.x * psi)
    }

    fn jacobian(&self, p: Vec2<S>) -> Mat2<S> {
        let r = p.norm();
        let (psi, dpsi) = Self::psi(r);
        let (x, y) = (p.x, p.y);
        Mat2::new(
            -y * dpsi * x / r,
            -psi - y * y * dpsi / r,
            psi + x * x * dpsi / r,
            x * y * dpsi / r,
        )
    }
}

/// Evaluate the tracking target, guarding against the coordinate singularity.
pub fn evaluate_target<S: Real>(p: Vec2<S>) -> Result<Vec2<S>, FieldError> {
    if p.norm() < S::of(1e-12) {
        return Err(FieldError::OriginEvaluation);
    }
    Ok(SwirlTarget.eval(p))
}

/// Body force `f = -alpha * (3 - 0.2 / r^2) * t_hat`, with `t_hat` the unit
/// counterclockwise tangential direction.
///
/// Chosen so that the swirl target together with zero pressure solves the
/// momentum equation `-alpha lap(u) + grad(p) = f` exactly: the swirl
/// Laplacian reduces to `(psi'' + psi'/r - psi/r^2) t_hat = (3 - 0.2/r^2) t_hat`
/// for the radial profile `psi = (r - 0.2)(r - 1)`.
pub struct SwirlBodyForce<S> {
    pub alpha: S,
}

impl<S: Real> SwirlBodyForce<S> {
    /// `chi(r) = (3 - 0.2/r^2)/r` and its derivative; `f = -alpha chi (-y, x)`.
    fn chi(r: S) -> (S, S) {
        let three = S::of(3.0);
        let c = S::of(0.2);
        let chi = three / r - c / (r * r * r);
        let dchi = -three / (r * r) + S::of(0.6) / (r * r * r * r);
        (chi, dchi)
    }
}

impl<S: Real> AnalyticField<S> for SwirlBodyForce<S> {
    fn eval(&self, p: Vec2<S>) -> Vec2<S> {
        let r = p.norm();
        let (chi, _) = Self::chi(r);
        Vec2::new(self.alpha * p.y * chi, -self.alpha * p.x * chi)
    }

    fn jacobian(&self, p: Vec2<S>) -> Mat2<S> {
        let r = p.norm();
        let (chi, dchi) = Self::chi(r);
        let (x, y) = (p.x, p.y);
        let a = self.alpha;
        Mat2::new(
            a * y * dchi * x / r,
            a * chi + a * y * y * dchi / r,
            -a * chi - a * x * x * dchi / r,
            -a * x * y * dchi / r,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;

    fn fd_jacobian(f: &dyn AnalyticField<f64>, p: Vec2<f64>) -> Mat2<f64> {
        let h = 1e-6;
        let dx = (f.eval(Vec2::new(p.x + h, p.y)) - f.eval(Vec2::new(p.x - h, p.y)))
            .scale(0.5 / h);
        let dy = (f.eval(Vec2::new(p.x, p.y + h)) - f.eval(Vec2::new(p.x, p.y - h)))
            .scale(0.5 / h);
        Mat2::new(dx.x, dy.x, dx.y, dy.y)
    }

    fn fd_laplacian(f: &dyn AnalyticField<f64>, p: Vec2<f64>) -> Vec2<f64> {
        let h = 1e-4;
        let c = f.eval(p);
        let sum = f.eval(Vec2::new(p.x + h, p.y))
            + f.eval(Vec2::new(p.x - h, p.y))
            + f.eval(Vec2::new(p.x, p.y + h))
            + f.eval(Vec2::new(p.x, p.y - h));
        (sum - c.scale(4.0)).scale(1.0 / (h * h))
    }

    fn sample_points(n: usize) -> Vec<Vec2<f64>> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        (0..n)
            .map(|_| {
                let r = rng.gen_range(0.3..0.9);
                let t = rng.gen_range(0.0..std::f64::consts::TAU);
                Vec2::new(r * t.cos(), r * t.sin())
            })
            .collect()
    }

    #[test]
    fn target_vanishes_on_both_circles() {
        for &theta in &[0.0, 1.0, 2.5, 4.0] {
            let inner = Vec2::new(0.2 * f64::cos(theta), 0.2 * f64::sin(theta));
            let outer = Vec2::new(f64::cos(theta), f64::sin(theta));
            assert!(SwirlTarget.eval(inner).norm() < 1e-15);
            assert!(SwirlTarget.eval(outer).norm() < 1e-15);
        }
    }

    #[test]
    fn target_value_by_hand() {
        // At (0.5, 0): psi = (0.3)(-0.5)/0.5 = -0.3, so the value is (0, -0.15).
        let v: Vec2<f64> = evaluate_target(Vec2::new(0.5, 0.0)).unwrap();
        assert!((v.x - 0.0).abs() < 1e-16);
        assert!((v.y + 0.15).abs() < 1e-16);
    }

    #[test]
    fn target_origin_is_rejected() {
        assert!(matches!(
            evaluate_target(Vec2::new(1e-13, 0.0)),
            Err(FieldError::OriginEvaluation)
        ));
    }

    #[test]
    fn target_is_divergence_free() {
        for p in sample_points(10) {
            let j = SwirlTarget.jacobian(p);
            assert!(j.trace().abs() < 1e-14, "div = {}", j.trace());
        }
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let force = SwirlBodyForce { alpha: 0.7 };
        for p in sample_points(10) {
            let jt = SwirlTarget.jacobian(p);
            let jt_fd = fd_jacobian(&SwirlTarget, p);
            let jf = force.jacobian(p);
            let jf_fd = fd_jacobian(&force, p);
            for i in 0..2 {
                for j in 0..2 {
                    assert!((jt.m[i][j] - jt_fd.m[i][j]).abs() < 1e-8);
                    assert!((jf.m[i][j] - jf_fd.m[i][j]).abs() < 1e-7);
                }
            }
        }
    }

    /// The body force must equal `-alpha * lap(target)`; checked against a
    /// numerical Laplacian before anything downstream relies on it.
    #[test]
    fn body_force_matches_fd_laplacian_of_target() {
        let alpha = 0.01;
        let force = SwirlBodyForce { alpha };
        for p in sample_points(10) {
            let lap = fd_laplacian(&SwirlTarget, p);
            let expect = lap.scale(-alpha);
            let got = force.eval(p);
            assert!(
                (got - expect).norm() < 1e-6 * (1.0 + expect.norm()),
                "at {p:?}: {got:?} vs {expect:?}"
            );
        }
    }
}
