//! Triangular meshes of annular domains with a fixed outer boundary and a
//! free inner boundary, plus the deformation primitives the moving-mesh
//! optimizer relies on.
//!
//! Meshes are immutable: every operation returns a new mesh, so values can be
//! shared freely across threads.

mod generate;
mod io;

pub use generate::{
    case1_mesh, case2_mesh, generate_annulus_mesh, target_mesh, Circle, ClosedCurve, Ellipse,
};
pub use io::{load_mesh, save_mesh};

use crate::geom::Vec2;
use crate::scalar::Real;
use thiserror::Error;

/// Classification of a mesh node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeMarker {
    Interior,
    /// On the outer boundary, which never moves.
    OuterFixed,
    /// On the inner boundary, which the optimizer is free to move.
    InnerFree,
}

/// Which boundary loop an edge belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeMarker {
    OuterFixed,
    InnerFree,
}

/// A directed boundary edge. The adjacent triangle lies on the left of
/// `a -> b`, so the outward normal is the right-hand normal of the tangent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundaryEdge {
    pub a: usize,
    pub b: usize,
    pub marker: EdgeMarker,
}

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("mesh validation failed: {0}")]
    Invalid(String),
    #[error("deformation step too large: triangle {triangle} area {area} fell below {epsilon}")]
    StepTooLarge {
        triangle: usize,
        area: f64,
        epsilon: f64,
    },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// A conforming triangulation with marked boundary loops.
#[derive(Clone, Debug)]
pub struct TriMesh<S> {
    nodes: Vec<Vec2<S>>,
    triangles: Vec<[usize; 3]>,
    boundary_edges: Vec<BoundaryEdge>,
    node_markers: Vec<NodeMarker>,
}

/// A per-node displacement (or perturbation velocity) field.
#[derive(Clone, Debug)]
pub struct DisplacementField<S> {
    pub values: Vec<Vec2<S>>,
}

impl<S: Real> DisplacementField<S> {
    pub fn zero(n: usize) -> Self {
        DisplacementField {
            values: vec![Vec2::zero(); n],
        }
    }

    pub fn from_fn(mesh: &TriMesh<S>, f: impl Fn(Vec2<S>) -> Vec2<S>) -> Self {
        DisplacementField {
            values: mesh.nodes().iter().map(|&p| f(p)).collect(),
        }
    }

    pub fn max_norm(&self) -> S {
        self.values
            .iter()
            .map(|v| v.norm())
            .fold(S::zero(), |a, b| a.max(b))
    }

    pub fn scaled(&self, s: S) -> Self {
        DisplacementField {
            values: self.values.iter().map(|v| v.scale(s)).collect(),
        }
    }
}

/// Signed area of the triangle `(a, b, c)`; positive for CCW orientation.
pub fn signed_area<S: Real>(a: Vec2<S>, b: Vec2<S>, c: Vec2<S>) -> S {
    (b - a).cross(c - a) * S::of(0.5)
}

impl<S: Real> TriMesh<S> {
    /// Build a mesh, enforcing the structural invariants:
    /// strictly positive signed areas, boundary edges owned by exactly one
    /// triangle with matching orientation, closed simple loops per marker,
    /// and node markers consistent with edge membership.
    pub fn new(
        nodes: Vec<Vec2<S>>,
        triangles: Vec<[usize; 3]>,
        boundary_edges: Vec<BoundaryEdge>,
        node_markers: Vec<NodeMarker>,
    ) -> Result<Self, MeshError> {
        let n_v = nodes.len();
        if node_markers.len() != n_v {
            return Err(MeshError::Invalid(format!(
                "{} node markers for {} nodes",
                node_markers.len(),
                n_v
            )));
        }
        for (i, p) in nodes.iter().enumerate() {
            if !(p.x.is_finite() && p.y.is_finite()) {
                return Err(MeshError::Invalid(format!("node {i} has non-finite coordinates")));
            }
        }
        for (t, tri) in triangles.iter().enumerate() {
            for &v in tri {
                if v >= n_v {
                    return Err(MeshError::Invalid(format!(
                        "triangle {t} references node {v} out of range"
                    )));
                }
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(MeshError::Invalid(format!("triangle {t} has repeated vertices")));
            }
            let area = signed_area(nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]);
            if area <= S::zero() {
                return Err(MeshError::Invalid(format!(
                    "triangle {t} has non-positive signed area {area}"
                )));
            }
        }

        // Collect the directed edges of all triangles and count undirected uses.
        use std::collections::HashMap;
        let mut undirected: HashMap<(usize, usize), u32> = HashMap::new();
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for (t, tri) in triangles.iter().enumerate() {
            for k in 0..3 {
                let a = tri[k];
                let b = tri[(k + 1) % 3];
                let key = (a.min(b), a.max(b));
                *undirected.entry(key).or_insert(0) += 1;
                if directed.insert((a, b), t).is_some() {
                    return Err(MeshError::Invalid(format!(
                        "directed edge {a}->{b} shared by two triangles (inconsistent orientation)"
                    )));
                }
            }
        }
        if let Some((&(a, b), &n)) = undirected.iter().find(|&(_, &n)| n > 2) {
            return Err(MeshError::Invalid(format!(
                "edge {a}-{b} shared by {n} triangles"
            )));
        }

        // Boundary edges must be exactly the edges used once, with the owning
        // triangle on the left.
        let mut marked: HashMap<(usize, usize), EdgeMarker> = HashMap::new();
        for e in &boundary_edges {
            if e.a >= n_v || e.b >= n_v {
                return Err(MeshError::Invalid(format!(
                    "boundary edge {}->{} references node out of range",
                    e.a, e.b
                )));
            }
            if !directed.contains_key(&(e.a, e.b)) {
                return Err(MeshError::Invalid(format!(
                    "boundary edge {}->{} is not a triangle edge in that orientation",
                    e.a, e.b
                )));
            }
            let key = (e.a.min(e.b), e.a.max(e.b));
            if undirected[&key] != 1 {
                return Err(MeshError::Invalid(format!(
                    "boundary edge {}->{} belongs to more than one triangle",
                    e.a, e.b
                )));
            }
            if marked.insert((e.a, e.b), e.marker).is_some() {
                return Err(MeshError::Invalid(format!(
                    "duplicate boundary edge {}->{}",
                    e.a, e.b
                )));
            }
        }
        for (&(a, b), &n) in &undirected {
            if n == 1 && !(marked.contains_key(&(a, b)) || marked.contains_key(&(b, a))) {
                return Err(MeshError::Invalid(format!(
                    "triangle edge {a}-{b} lies on the boundary but is not marked"
                )));
            }
        }

        // Loops: within each marker every touched node must have exactly one
        // outgoing and one incoming edge.
        for marker in [EdgeMarker::OuterFixed, EdgeMarker::InnerFree] {
            let mut succ: HashMap<usize, usize> = HashMap::new();
            let mut pred: HashMap<usize, usize> = HashMap::new();
            for e in boundary_edges.iter().filter(|e| e.marker == marker) {
                if succ.insert(e.a, e.b).is_some() || pred.insert(e.b, e.a).is_some() {
                    return Err(MeshError::Invalid(format!(
                        "boundary loop with marker {marker:?} is not simple at edge {}->{}",
                        e.a, e.b
                    )));
                }
            }
            for (&a, _) in &succ {
                if !pred.contains_key(&a) {
                    return Err(MeshError::Invalid(format!(
                        "boundary loop with marker {marker:?} is not closed at node {a}"
                    )));
                }
            }
        }

        // Node markers must match edge membership.
        let mut expected = vec![NodeMarker::Interior; n_v];
        for e in &boundary_edges {
            let m = match e.marker {
                EdgeMarker::OuterFixed => NodeMarker::OuterFixed,
                EdgeMarker::InnerFree => NodeMarker::InnerFree,
            };
            for v in [e.a, e.b] {
                if expected[v] != NodeMarker::Interior && expected[v] != m {
                    return Err(MeshError::Invalid(format!(
                        "node {v} lies on boundary loops with different markers"
                    )));
                }
                expected[v] = m;
            }
        }
        if expected != node_markers {
            let i = (0..n_v).find(|&i| expected[i] != node_markers[i]).unwrap();
            return Err(MeshError::Invalid(format!(
                "node {i} marked {:?} but boundary edges imply {:?}",
                node_markers[i], expected[i]
            )));
        }

        Ok(TriMesh {
            nodes,
            triangles,
            boundary_edges,
            node_markers,
        })
    }

    /// Additionally require the two-loop annular topology: exactly one closed
    /// outer loop and one closed inner loop.
    pub fn validate_annular(&self) -> Result<(), MeshError> {
        for (marker, name) in [(EdgeMarker::OuterFixed, "outer"), (EdgeMarker::InnerFree, "inner")]
        {
            let loops = self.loops_with_marker(marker);
            if loops.len() != 1 {
                return Err(MeshError::Invalid(format!(
                    "expected exactly one {name} boundary loop, found {}",
                    loops.len()
                )));
            }
        }
        Ok(())
    }

    pub fn nodes(&self) -> &[Vec2<S>] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    pub fn node_markers(&self) -> &[NodeMarker] {
        &self.node_markers
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangle_area(&self, t: usize) -> S {
        let [a, b, c] = self.triangles[t];
        signed_area(self.nodes[a], self.nodes[b], self.nodes[c])
    }

    pub fn total_area(&self) -> S {
        (0..self.n_triangles()).map(|t| self.triangle_area(t)).sum()
    }

    /// Degeneracy guard used by `deform`: scale-invariant area floor.
    pub fn area_epsilon(&self) -> S {
        let (mut lo, mut hi) = (self.nodes[0], self.nodes[0]);
        for p in &self.nodes {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        let bbox = (hi.x - lo.x) * (hi.y - lo.y);
        S::of(1e-12) * bbox / S::of_usize(self.n_triangles().max(1))
    }

    /// Move every node by `-h * d`, keeping connectivity and markers.
    ///
    /// Fails with `StepTooLarge` as soon as any triangle area drops to the
    /// degeneracy floor; callers shrink `h` and retry.
    pub fn deform(&self, d: &DisplacementField<S>, h: S) -> Result<TriMesh<S>, MeshError> {
        assert_eq!(d.values.len(), self.n_nodes(), "displacement field size mismatch");
        let nodes: Vec<Vec2<S>> = self
            .nodes
            .iter()
            .zip(&d.values)
            .map(|(&p, &v)| p - v.scale(h))
            .collect();
        let eps = self.area_epsilon();
        for (t, tri) in self.triangles.iter().enumerate() {
            let area = signed_area(nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]);
            if area <= eps {
                return Err(MeshError::StepTooLarge {
                    triangle: t,
                    area: area.to_f64().unwrap_or(f64::NAN),
                    epsilon: eps.to_f64().unwrap_or(f64::NAN),
                });
            }
        }
        Ok(TriMesh {
            nodes,
            triangles: self.triangles.clone(),
            boundary_edges: self.boundary_edges.clone(),
            node_markers: self.node_markers.clone(),
        })
    }

    /// Minimum over all triangles of `2 * inradius / circumradius`, in (0, 1].
    pub fn quality(&self) -> S {
        let mut q_min = S::infinity();
        for tri in &self.triangles {
            let (pa, pb, pc) = (self.nodes[tri[0]], self.nodes[tri[1]], self.nodes[tri[2]]);
            let a = (pb - pc).norm();
            let b = (pc - pa).norm();
            let c = (pa - pb).norm();
            let area = signed_area(pa, pb, pc);
            // 2 * (2A / perimeter) / (abc / 4A) = 16 A^2 / (perimeter * abc)
            let q = S::of(16.0) * area * area / ((a + b + c) * a * b * c);
            q_min = q_min.min(q);
        }
        q_min
    }

    pub fn min_edge_length(&self) -> S {
        let mut m = S::infinity();
        for tri in &self.triangles {
            for k in 0..3 {
                let e = (self.nodes[tri[(k + 1) % 3]] - self.nodes[tri[k]]).norm();
                m = m.min(e);
            }
        }
        m
    }

    /// Closed loops of the given marker, each as an ordered node cycle.
    pub fn loops_with_marker(&self, marker: EdgeMarker) -> Vec<Vec<usize>> {
        use std::collections::HashMap;
        let mut succ: HashMap<usize, usize> = HashMap::new();
        for e in self.boundary_edges.iter().filter(|e| e.marker == marker) {
            succ.insert(e.a, e.b);
        }
        let mut seen: std::collections::HashSet<usize> = Default::default();
        let mut starts: Vec<usize> = succ.keys().copied().collect();
        starts.sort_unstable();
        let mut loops = Vec::new();
        for s in starts {
            if seen.contains(&s) {
                continue;
            }
            let mut cycle = vec![s];
            seen.insert(s);
            let mut cur = succ[&s];
            while cur != s {
                cycle.push(cur);
                seen.insert(cur);
                cur = succ[&cur];
            }
            loops.push(cycle);
        }
        loops
    }

    /// The inner boundary as an ordered node cycle.
    pub fn inner_loop(&self) -> Vec<usize> {
        self.loops_with_marker(EdgeMarker::InnerFree)
            .into_iter()
            .next()
            .unwrap_or_default()
    }

    /// Length of the polygonal boundary with the given marker.
    pub fn boundary_length(&self, marker: EdgeMarker) -> S {
        self.boundary_edges
            .iter()
            .filter(|e| e.marker == marker)
            .map(|e| (self.nodes[e.b] - self.nodes[e.a]).norm())
            .sum()
    }

    pub fn total_boundary_length(&self) -> S {
        self.boundary_length(EdgeMarker::OuterFixed) + self.boundary_length(EdgeMarker::InnerFree)
    }

    /// Mean distance of inner-boundary nodes from the origin.
    pub fn mean_inner_radius(&self) -> S {
        let inner: Vec<usize> = self.inner_loop();
        if inner.is_empty() {
            return S::zero();
        }
        inner.iter().map(|&i| self.nodes[i].norm()).sum::<S>() / S::of_usize(inner.len())
    }

    /// RMS deviation of inner-node radii from `target`.
    pub fn inner_radius_rms_error(&self, target: S) -> S {
        let inner = self.inner_loop();
        if inner.is_empty() {
            return S::zero();
        }
        let ss: S = inner
            .iter()
            .map(|&i| {
                let d = self.nodes[i].norm() - target;
                d * d
            })
            .sum();
        (ss / S::of_usize(inner.len())).sqrt()
    }

    /// Outward unit normal of a boundary edge (outward with respect to the
    /// fluid domain; the owning triangle is on the left of `a -> b`).
    pub fn edge_outward_normal(&self, e: &BoundaryEdge) -> Vec2<S> {
        (self.nodes[e.b] - self.nodes[e.a]).right_normal().normalized()
    }

    /// Per-inner-node outward normal (angle-bisector of the adjacent edge
    /// normals) together with the lumped boundary measure: half the length of
    /// the two adjacent inner edges.
    ///
    /// Returned in inner-loop order alongside the node ids.
    pub fn inner_node_normals(&self) -> Vec<InnerNodeGeometry<S>> {
        use std::collections::HashMap;
        let mut incoming: HashMap<usize, &BoundaryEdge> = HashMap::new();
        let mut outgoing: HashMap<usize, &BoundaryEdge> = HashMap::new();
        for e in self
            .boundary_edges
            .iter()
            .filter(|e| e.marker == EdgeMarker::InnerFree)
        {
            outgoing.insert(e.a, e);
            incoming.insert(e.b, e);
        }
        self.inner_loop()
            .into_iter()
            .map(|i| {
                let e_in = incoming[&i];
                let e_out = outgoing[&i];
                let n_in = self.edge_outward_normal(e_in);
                let n_out = self.edge_outward_normal(e_out);
                let normal = (n_in + n_out).normalized();
                let len_in = (self.nodes[e_in.b] - self.nodes[e_in.a]).norm();
                let len_out = (self.nodes[e_out.b] - self.nodes[e_out.a]).norm();
                InnerNodeGeometry {
                    node: i,
                    normal,
                    measure: (len_in + len_out) * S::of(0.5),
                }
            })
            .collect()
    }
}

/// Geometry attached to one inner-boundary node.
#[derive(Clone, Copy, Debug)]
pub struct InnerNodeGeometry<S> {
    pub node: usize,
    /// Unit normal pointing out of the fluid domain.
    pub normal: Vec2<S>,
    /// Lumped arc measure (half the two adjacent edge lengths).
    pub measure: S,
}

#[cfg(test)]
mod tests;
