//! Structured annular mesh generation.
//!
//! The generator samples the inner curve and the outer circle at `n_theta`
//! angles and interpolates `n_r` radial layers between them, splitting each
//! quad into two triangles. Node counts are deterministic:
//! `n_theta * (n_r + 1)` nodes, `2 * n_theta * n_r` triangles.

use super::{BoundaryEdge, DisplacementField, EdgeMarker, MeshError, NodeMarker, TriMesh};
use crate::geom::Vec2;
use crate::scalar::Real;

/// A closed parametric curve, sampled at angles in `[0, 2*pi)`.
pub trait ClosedCurve<S> {
    fn point(&self, theta: S) -> Vec2<S>;
}

/// Circle of given radius centered at the origin.
pub struct Circle<S> {
    pub radius: S,
}

impl<S: Real> ClosedCurve<S> for Circle<S> {
    fn point(&self, theta: S) -> Vec2<S> {
        Vec2::new(self.radius * theta.cos(), self.radius * theta.sin())
    }
}

/// Axis-aligned ellipse centered at the origin.
pub struct Ellipse<S> {
    pub semi_x: S,
    pub semi_y: S,
}

impl<S: Real> ClosedCurve<S> for Ellipse<S> {
    fn point(&self, theta: S) -> Vec2<S> {
        Vec2::new(self.semi_x * theta.cos(), self.semi_y * theta.sin())
    }
}

/// Generate the annular mesh between `inner_curve` and the circle of radius
/// `outer_radius`.
///
/// Inner-boundary nodes lie exactly on the curve samples. Self-intersecting
/// or oversized inner curves surface as validation failures (a triangle with
/// non-positive area).
pub fn generate_annulus_mesh<S: Real>(
    inner_curve: &dyn ClosedCurve<S>,
    outer_radius: S,
    n_theta: usize,
    n_r: usize,
) -> Result<TriMesh<S>, MeshError> {
    if n_theta < 8 {
        return Err(MeshError::Invalid(format!(
            "n_theta = {n_theta} too small, need at least 8"
        )));
    }
    if n_r < 2 {
        return Err(MeshError::Invalid(format!("n_r = {n_r} too small, need at least 2")));
    }
    if outer_radius <= S::zero() {
        return Err(MeshError::Invalid("outer_radius must be positive".into()));
    }

    let idx = |i: usize, j: usize| j * n_theta + (i % n_theta);
    let two_pi = S::PI() * S::of(2.0);

    let mut nodes = Vec::with_capacity(n_theta * (n_r + 1));
    let mut markers = Vec::with_capacity(n_theta * (n_r + 1));
    for j in 0..=n_r {
        let s = S::of_usize(j) / S::of_usize(n_r);
        for i in 0..n_theta {
            let theta = two_pi * S::of_usize(i) / S::of_usize(n_theta);
            let inner = inner_curve.point(theta);
            let outer = Vec2::new(outer_radius * theta.cos(), outer_radius * theta.sin());
            nodes.push(inner + (outer - inner).scale(s));
            markers.push(if j == 0 {
                NodeMarker::InnerFree
            } else if j == n_r {
                NodeMarker::OuterFixed
            } else {
                NodeMarker::Interior
            });
        }
    }

    // Quad (i, j) has CCW corners a=(i,j), d=(i,j+1), c=(i+1,j+1), b=(i+1,j):
    // the angular direction then the radial direction is clockwise, so the
    // radial-first ordering is the counterclockwise one.
    let mut triangles = Vec::with_capacity(2 * n_theta * n_r);
    for j in 0..n_r {
        for i in 0..n_theta {
            let a = idx(i, j);
            let b = idx(i + 1, j);
            let c = idx(i + 1, j + 1);
            let d = idx(i, j + 1);
            triangles.push([a, d, c]);
            triangles.push([a, c, b]);
        }
    }

    // Directed with the fluid on the left: the inner loop runs clockwise,
    // the outer loop counterclockwise.
    let mut boundary_edges = Vec::with_capacity(2 * n_theta);
    for i in 0..n_theta {
        boundary_edges.push(BoundaryEdge {
            a: idx(i + 1, 0),
            b: idx(i, 0),
            marker: EdgeMarker::InnerFree,
        });
        boundary_edges.push(BoundaryEdge {
            a: idx(i, n_r),
            b: idx(i + 1, n_r),
            marker: EdgeMarker::OuterFixed,
        });
    }

    let mesh = TriMesh::new(nodes, triangles, boundary_edges, markers)?;
    mesh.validate_annular()?;
    Ok(mesh)
}

/// Case 1 initial domain: inner circle of radius 0.4 inside the unit circle.
pub fn case1_mesh<S: Real>(n_theta: usize, n_r: usize) -> Result<TriMesh<S>, MeshError> {
    generate_annulus_mesh(&Circle { radius: S::of(0.4) }, S::one(), n_theta, n_r)
}

/// Case 2 initial domain: ellipse with semi-axes 0.6 and 0.4.
pub fn case2_mesh<S: Real>(n_theta: usize, n_r: usize) -> Result<TriMesh<S>, MeshError> {
    generate_annulus_mesh(
        &Ellipse {
            semi_x: S::of(0.6),
            semi_y: S::of(0.4),
        },
        S::one(),
        n_theta,
        n_r,
    )
}

/// Target domain: inner circle of radius 0.2 inside the unit circle.
pub fn target_mesh<S: Real>(n_theta: usize, n_r: usize) -> Result<TriMesh<S>, MeshError> {
    generate_annulus_mesh(&Circle { radius: S::of(0.2) }, S::one(), n_theta, n_r)
}

impl<S: Real> TriMesh<S> {
    /// Radial displacement field `rho(|x|) * x / |x|` from a profile function.
    pub fn radial_field(&self, rho: impl Fn(S) -> S) -> DisplacementField<S> {
        DisplacementField::from_fn(self, |p| {
            let r = p.norm();
            if r == S::zero() {
                Vec2::zero()
            } else {
                p.scale(rho(r) / r)
            }
        })
    }
}
