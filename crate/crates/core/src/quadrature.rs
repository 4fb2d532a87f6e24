//! Quadrature rules on the reference triangle and on edges.

use crate::scalar::Real;

/// A symmetric quadrature rule in barycentric coordinates.
///
/// Weights are normalized to sum to one; multiply by the physical triangle
/// area when integrating.
pub struct TriQuadRule<S> {
    pub points: Vec<[S; 3]>,
    pub weights: Vec<S>,
}

/// Six-point rule, exact for polynomials up to degree 4.
///
/// This is the workhorse rule: it integrates every product of linear and
/// cubic-bubble basis gradients that appears in the mixed element exactly.
pub fn tri_quadrature_deg4<S: Real>() -> TriQuadRule<S> {
    let w1 = S::of(0.223_381_589_678_011);
    let a1 = S::of(0.108_103_018_168_070);
    let b1 = S::of(0.445_948_490_915_965);
    let w2 = S::of(0.109_951_743_655_322);
    let a2 = S::of(0.816_847_572_980_459);
    let b2 = S::of(0.091_576_213_509_771);
    TriQuadRule {
        points: vec![
            [a1, b1, b1],
            [b1, a1, b1],
            [b1, b1, a1],
            [a2, b2, b2],
            [b2, a2, b2],
            [b2, b2, a2],
        ],
        weights: vec![w1, w1, w1, w2, w2, w2],
    }
}

/// Two-point Gauss rule on an edge, exact up to degree 3.
///
/// Returns `(t, w)` pairs with `t` the position along the edge in `[0, 1]`
/// and weights summing to one; multiply by the edge length.
pub fn edge_quadrature_gauss2<S: Real>() -> [(S, S); 2] {
    let half = S::of(0.5);
    let off = S::of(0.5) / S::of(3.0).sqrt();
    [(half - off, half), (half + off, half)]
}
