//! Shape derivatives of the tracking cost with respect to perturbations of
//! the free inner boundary.
//!
//! Three independent routes to the same number:
//!
//! * [`boundary_gradient_density`] evaluates the boundary expression
//!   `w = 1/2 |y - y_d|^2 + alpha D(y - g) : D v` on the inner loop and pairs
//!   it with the normal trace of a perturbation field;
//! * [`distributed_shape_derivative`] assembles the volume form obtained by
//!   differentiating the transported weak problem at t = 0 — for piecewise
//!   linear perturbations this is the exact derivative of the discrete cost
//!   under mesh transport, up to quadrature of the smooth data;
//! * [`fd_shape_derivative`] transports the mesh by `+-t V`, re-solves, and
//!   central-differences the cost.
//!
//! Their pairwise agreement is the main correctness gate for the whole
//! toolkit.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::fem::{
    assemble_stokes, compute_cost, element_geometry, momentum_residual, solve_state,
    velocity_gradient_at, FlowField, SolveError,
};
use crate::fields::AnalyticField;
use crate::geom::{Mat2, Vec2};
use crate::mesh::{DisplacementField, MeshError, NodeMarker, TriMesh};
use crate::quadrature::{edge_quadrature_gauss2, tri_quadrature_deg4};
use crate::scalar::Real;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ShapeError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// Scalar shape-gradient density on the free inner boundary, one entry per
/// inner node in loop order.
#[derive(Clone, Debug)]
pub struct BoundaryDensity<S> {
    pub entries: Vec<DensityEntry<S>>,
}

#[derive(Clone, Copy, Debug)]
pub struct DensityEntry<S> {
    pub node: usize,
    pub position: Vec2<S>,
    /// Density value `w` multiplying `V . n`.
    pub density: S,
    /// Lumped arc measure `s`.
    pub measure: S,
    /// Outward (out of the fluid) unit normal.
    pub normal: Vec2<S>,
}

impl<S: Real> BoundaryDensity<S> {
    /// Approximate the derivative along `v` by the lumped boundary pairing
    /// `sum_i w_i s_i (V . n)_i`.
    pub fn pairing(&self, v: &DisplacementField<S>) -> S {
        self.entries
            .iter()
            .map(|e| e.density * e.measure * v.values[e.node].dot(e.normal))
            .sum()
    }

    /// Largest absolute density value.
    pub fn max_abs(&self) -> S {
        self.entries
            .iter()
            .map(|e| e.density.abs())
            .fold(S::zero(), |a, b| a.max(b))
    }

    /// Dump as CSV: `node_id,x,y,w,s,nx,ny`.
    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut out = std::fs::File::create(path)?;
        writeln!(out, "node_id,x,y,w,s,nx,ny")?;
        for e in &self.entries {
            writeln!(
                out,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                e.node, e.position.x, e.position.y, e.density, e.measure, e.normal.x, e.normal.y
            )?;
        }
        Ok(())
    }
}

/// Evaluate the boundary form of the shape gradient on the inner loop.
///
/// The misfit term is taken pointwise at each node. The viscous term
/// `alpha D(y - g) : D v` reduces on the Dirichlet boundary to the product of
/// normal derivatives; these are recovered variationally from the momentum
/// residuals of the state and adjoint at the boundary rows (the discrete
/// traction functionals `int (alpha Du n - p n) . phi`), lumped with the arc
/// measure. This recovery is second-order accurate, where one-sided element
/// gradients would converge only at first order with a constant far too
/// large for the agreement tolerances on the experiment meshes.
pub fn boundary_gradient_density<S: Real>(
    mesh: &TriMesh<S>,
    alpha: S,
    y: &FlowField<S>,
    adjoint: &FlowField<S>,
    f: &dyn AnalyticField<S>,
    g: &dyn AnalyticField<S>,
    target: &dyn AnalyticField<S>,
) -> BoundaryDensity<S> {
    let sys = assemble_stokes(mesh, alpha);
    let state_load = sys.body_force_load(mesh, f);
    let adjoint_load = sys.tracking_load(mesh, y, target);
    let r_y = momentum_residual(&sys, y, &state_load);
    let r_v = momentum_residual(&sys, adjoint, &adjoint_load);

    let entries = mesh
        .inner_node_normals()
        .into_iter()
        .map(|giom| {
            let i = giom.node;
            let x = mesh.nodes()[i];
            let n = giom.normal;
            let misfit = y.velocity[i] - target.eval(x);

            // Tractions: t = alpha Du n - p n, lumped over the arc measure.
            let t_y = r_y[i].scale(S::one() / giom.measure);
            let t_v = r_v[i].scale(S::one() / giom.measure);
            // Normal derivative of y - g and alpha times that of v.
            let dn_y_minus_g =
                (t_y + n.scale(y.pressure[i])).scale(S::one() / alpha) - g.jacobian(x).matvec(n);
            let alpha_dn_v = t_v + n.scale(adjoint.pressure[i]);
            let w = S::of(0.5) * misfit.norm_sq() + dn_y_minus_g.dot(alpha_dn_v);

            DensityEntry {
                node: i,
                position: x,
                density: w,
                measure: giom.measure,
                normal: n,
            }
        })
        .collect();

    BoundaryDensity { entries }
}

/// Volume (distributed) form of the shape derivative along the piecewise
/// linear perturbation `vel`.
///
/// Assembled term by term from the transport derivative of the weak problem:
/// cost transport, viscous-form derivative, the two pressure couplings, body
/// force transport, and, for nonzero boundary data, a boundary correction
/// integrated by parts so no second derivatives of discrete fields appear.
#[allow(clippy::too_many_arguments)]
pub fn distributed_shape_derivative<S: Real>(
    mesh: &TriMesh<S>,
    alpha: S,
    y: &FlowField<S>,
    adjoint: &FlowField<S>,
    vel: &DisplacementField<S>,
    f: &dyn AnalyticField<S>,
    g: &dyn AnalyticField<S>,
    target: &dyn AnalyticField<S>,
) -> S {
    let rule = tri_quadrature_deg4::<S>();
    let mut total = S::zero();

    for t in 0..mesh.n_triangles() {
        let geo = element_geometry(mesh, t);
        // P1 interpolant of the perturbation: constant gradient per triangle.
        let mut dv_pert = Mat2::zero();
        for m in 0..3 {
            dv_pert += Mat2::outer(vel.values[geo.verts[m]], geo.grad_lambda[m]);
        }
        let div_pert = dv_pert.trace();

        let mut acc = S::zero();
        for (lam, &wq) in rule.points.iter().zip(&rule.weights) {
            let lam = *lam;
            let xq = geo.coords[0].scale(lam[0])
                + geo.coords[1].scale(lam[1])
                + geo.coords[2].scale(lam[2]);
            let v_at = vel.values[geo.verts[0]].scale(lam[0])
                + vel.values[geo.verts[1]].scale(lam[1])
                + vel.values[geo.verts[2]].scale(lam[2]);

            let yv = y.velocity_at(mesh, t, lam);
            let vv = adjoint.velocity_at(mesh, t, lam);
            let pv = y.pressure_at(mesh, t, lam);
            let qv = adjoint.pressure_at(mesh, t, lam);
            let dy = velocity_gradient_at(&geo, y, t, lam);
            let dv = velocity_gradient_at(&geo, adjoint, t, lam);

            // cost transport
            let misfit = yv - target.eval(xq);
            let dyd = target.jacobian(xq);
            let mut term = S::of(0.5) * misfit.norm_sq() * div_pert - misfit.dot(dyd.matvec(v_at));

            // viscous-form derivative
            term += alpha
                * (dy.matmul(dv_pert).frob(dv) + dy.frob(dv.matmul(dv_pert))
                    - dy.frob(dv) * div_pert);

            // pressure couplings
            term += -pv * dv.matmul(dv_pert).trace() + pv * dv.trace() * div_pert;
            term += -qv * dy.matmul(dv_pert).trace() + qv * dy.trace() * div_pert;

            // body force transport
            let fv = f.eval(xq);
            let df = f.jacobian(xq);
            term += df.matvec(v_at).dot(vv) + fv.dot(vv) * div_pert;

            acc += wq * term;
        }
        total += acc * geo.area;
    }

    // Boundary correction for nonzero Dirichlet data, integrated by parts:
    // - int_Gamma <(alpha Dv^T - q I)(Dg V), n> ds.
    let edge_rule = edge_quadrature_gauss2::<S>();
    let mut owner: HashMap<(usize, usize), usize> = HashMap::new();
    for (t, tri) in mesh.triangles().iter().enumerate() {
        for k in 0..3 {
            owner.insert((tri[k], tri[(k + 1) % 3]), t);
        }
    }
    let mut boundary_term = S::zero();
    for e in mesh.boundary_edges() {
        let t = owner[&(e.a, e.b)];
        let geo = element_geometry(mesh, t);
        let pa = mesh.nodes()[e.a];
        let pb = mesh.nodes()[e.b];
        let len = (pb - pa).norm();
        let n = mesh.edge_outward_normal(e);
        for &(s, w) in &edge_rule {
            let x = pa + (pb - pa).scale(s);
            let vp = vel.values[e.a].scale(S::one() - s) + vel.values[e.b].scale(s);
            let dgv = g.jacobian(x).matvec(vp);
            if dgv.norm_sq() == S::zero() {
                continue;
            }
            // barycentric coordinates of x in the owner triangle
            let lam = barycentric(&geo, x);
            let dv = velocity_gradient_at(&geo, adjoint, t, lam);
            let qv = adjoint.pressure_at(mesh, t, lam);
            let stress = dv.transpose().scale(alpha) - Mat2::identity().scale(qv);
            boundary_term += w * len * stress.matvec(dgv).dot(n);
        }
    }
    total - boundary_term
}

fn barycentric<S: Real>(geo: &crate::fem::ElementGeometry<S>, x: Vec2<S>) -> [S; 3] {
    // lambda_i is affine with gradient grad_lambda[i], equal to 1 at vertex i.
    let mut lam = [S::zero(); 3];
    for i in 0..3 {
        lam[i] = S::one() + geo.grad_lambda[i].dot(x - geo.coords[i]);
    }
    lam
}

/// Central-difference transport oracle: move every node by `+-t V`, re-solve
/// the flow problem with the data re-evaluated on the moved geometry, and
/// difference the costs.
pub fn fd_shape_derivative<S: Real>(
    mesh: &TriMesh<S>,
    alpha: S,
    vel: &DisplacementField<S>,
    f: &dyn AnalyticField<S>,
    g: &dyn AnalyticField<S>,
    target: &dyn AnalyticField<S>,
    t: S,
) -> Result<S, ShapeError> {
    let backward = vel.clone();
    let forward = vel.scaled(-S::one());
    let mesh_plus = mesh.deform(&forward, t)?;
    let mesh_minus = mesh.deform(&backward, t)?;
    let j_plus = compute_cost(&mesh_plus, &solve_state(&mesh_plus, alpha, f, g)?, target);
    let j_minus = compute_cost(
        &mesh_minus,
        &solve_state(&mesh_minus, alpha, f, g)?,
        target,
    );
    Ok((j_plus - j_minus) / (S::of(2.0) * t))
}

/// Perturbation fields used by the gradient validation: three smooth fields
/// vanishing on the fixed outer boundary, with distinct radial profiles and a
/// tangential component in the last one.
pub fn validation_fields<S: Real>(
    mesh: &TriMesh<S>,
) -> Vec<(&'static str, DisplacementField<S>)> {
    let build = |f: Box<dyn Fn(Vec2<S>) -> Vec2<S>>| {
        let mut d = DisplacementField::from_fn(mesh, |p| f(p));
        for (i, m) in mesh.node_markers().iter().enumerate() {
            if *m == NodeMarker::OuterFixed {
                d.values[i] = Vec2::zero();
            }
        }
        d
    };
    let one = S::one();
    let radial = build(Box::new(move |p: Vec2<S>| {
        let r = p.norm();
        p.scale((one - r * r) / r)
    }));
    let modulated = build(Box::new(move |p: Vec2<S>| {
        let r = p.norm();
        let m = one + S::of(0.5) * p.x / r;
        p.scale((one - r * r) * m / r)
    }));
    let skewed = build(Box::new(move |p: Vec2<S>| {
        let r = p.norm();
        let bump = one - r * r;
        let rad = p.scale((one + S::of(0.3) * p.x) / r);
        let tan = p.rot90().scale(S::of(0.4) / r);
        (rad + tan).scale(bump)
    }));
    vec![
        ("radial", radial),
        ("modulated", modulated),
        ("skewed", skewed),
    ]
}

/// Nodewise tangential field on the inner loop (exactly orthogonal to the
/// nodal normals), zero elsewhere.
pub fn inner_tangential_field<S: Real>(mesh: &TriMesh<S>) -> DisplacementField<S> {
    let mut d = DisplacementField::zero(mesh.n_nodes());
    for g in mesh.inner_node_normals() {
        d.values[g.node] = g.normal.rot90();
    }
    d
}

/// Nodewise normal field on the inner loop, zero elsewhere.
pub fn inner_normal_field<S: Real>(mesh: &TriMesh<S>) -> DisplacementField<S> {
    let mut d = DisplacementField::zero(mesh.n_nodes());
    for g in mesh.inner_node_normals() {
        d.values[g.node] = g.normal;
    }
    d
}

#[cfg(test)]
mod tests;
