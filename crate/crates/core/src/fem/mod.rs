//! Mixed finite-element discretization of the Stokes equations on triangles:
//! linear velocities enriched with a cubic bubble per element, linear
//! pressures, and a scalar multiplier pinning the pressure mean to zero.
//!
//! The bubble unknowns are condensed out element by element before global
//! assembly; the element data needed to reconstruct them afterwards is kept
//! on the system. The condensed saddle system is solved by eliminating the
//! velocities with a banded Cholesky factorization (after a bandwidth
//! reducing reordering) and running preconditioned conjugate gradients on the
//! pressure Schur complement. Assembly runs in ascending element order and
//! every kernel is sequential, so repeated runs are bit-identical.

pub mod linalg;

use crate::fields::AnalyticField;
use crate::geom::{Mat2, Vec2};
use crate::mesh::{NodeMarker, TriMesh};
use crate::quadrature::{edge_quadrature_gauss2, tri_quadrature_deg4};
use crate::scalar::Real;
use linalg::{projected_pcg, reverse_cuthill_mckee, BandedCholesky, Csr};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("incompatible boundary data: net flux {flux} exceeds tolerance {tolerance}")]
    CompatibilityViolated { flux: f64, tolerance: f64 },
    #[error("linear solver breakdown: {0}")]
    SolverBreakdown(String),
}

/// Discrete velocity-pressure pair.
#[derive(Clone, Debug)]
pub struct FlowField<S> {
    /// Velocity at mesh nodes.
    pub velocity: Vec<Vec2<S>>,
    /// Bubble coefficient per triangle.
    pub bubble: Vec<Vec2<S>>,
    /// Pressure at mesh nodes, zero mean over the domain.
    pub pressure: Vec<S>,
}

impl<S: Real> FlowField<S> {
    pub fn zeros(mesh: &TriMesh<S>) -> Self {
        FlowField {
            velocity: vec![Vec2::zero(); mesh.n_nodes()],
            bubble: vec![Vec2::zero(); mesh.n_triangles()],
            pressure: vec![S::zero(); mesh.n_nodes()],
        }
    }

    /// Velocity value inside triangle `t` at barycentric coordinates `lam`,
    /// including the bubble contribution. Written in anchored form so a field
    /// with equal vertex values reproduces that value exactly.
    pub fn velocity_at(&self, mesh: &TriMesh<S>, t: usize, lam: [S; 3]) -> Vec2<S> {
        let tri = mesh.triangles()[t];
        let base = self.velocity[tri[0]];
        let v = base
            + (self.velocity[tri[1]] - base).scale(lam[1])
            + (self.velocity[tri[2]] - base).scale(lam[2]);
        v + self.bubble[t].scale(bubble_value(lam))
    }

    pub fn pressure_at(&self, mesh: &TriMesh<S>, t: usize, lam: [S; 3]) -> S {
        let tri = mesh.triangles()[t];
        let base = self.pressure[tri[0]];
        base + (self.pressure[tri[1]] - base) * lam[1] + (self.pressure[tri[2]] - base) * lam[2]
    }

    /// Integral of the pressure over the mesh (exact for linear pressures).
    pub fn pressure_integral(&self, mesh: &TriMesh<S>) -> S {
        let third = S::of(1.0 / 3.0);
        (0..mesh.n_triangles())
            .map(|t| {
                let tri = mesh.triangles()[t];
                mesh.triangle_area(t)
                    * third
                    * (self.pressure[tri[0]] + self.pressure[tri[1]] + self.pressure[tri[2]])
            })
            .sum()
    }

    pub fn max_velocity(&self) -> S {
        self.velocity
            .iter()
            .map(|v| v.norm())
            .fold(S::zero(), |a, b| a.max(b))
    }
}

/// Geometry of one triangle used by the element kernels.
pub struct ElementGeometry<S> {
    pub verts: [usize; 3],
    pub coords: [Vec2<S>; 3],
    pub area: S,
    pub grad_lambda: [Vec2<S>; 3],
}

pub fn element_geometry<S: Real>(mesh: &TriMesh<S>, t: usize) -> ElementGeometry<S> {
    let verts = mesh.triangles()[t];
    let coords = [
        mesh.nodes()[verts[0]],
        mesh.nodes()[verts[1]],
        mesh.nodes()[verts[2]],
    ];
    let two_area = (coords[1] - coords[0]).cross(coords[2] - coords[0]);
    let inv = S::one() / two_area;
    let grad_lambda = [
        (coords[1] - coords[2]).right_normal().scale(inv),
        (coords[2] - coords[0]).right_normal().scale(inv),
        (coords[0] - coords[1]).right_normal().scale(inv),
    ];
    ElementGeometry {
        verts,
        coords,
        area: two_area * S::of(0.5),
        grad_lambda,
    }
}

/// Cubic bubble (normalized to 1 at the barycenter).
#[inline]
pub fn bubble_value<S: Real>(lam: [S; 3]) -> S {
    S::of(27.0) * lam[0] * lam[1] * lam[2]
}

#[inline]
pub fn bubble_gradient<S: Real>(geo: &ElementGeometry<S>, lam: [S; 3]) -> Vec2<S> {
    (geo.grad_lambda[0].scale(lam[1] * lam[2])
        + geo.grad_lambda[1].scale(lam[0] * lam[2])
        + geo.grad_lambda[2].scale(lam[0] * lam[1]))
    .scale(S::of(27.0))
}

/// Per-element data for reconstructing the condensed bubble unknowns.
struct BubbleCondensation<S> {
    /// Inverse of the 2x2 bubble-bubble block.
    inv: [[S; 2]; 2],
    /// Rows: bubble x/y equations. Columns: the nine kept local unknowns
    /// in the order [u0x u0y u1x u1y u2x u2y p0 p1 p2].
    coupling: [[S; 9]; 2],
}

/// Assembled, bubble-condensed saddle-point system.
///
/// Layout: velocity dof `2 * node + component`, pressure dof `node`, plus one
/// implicit multiplier row enforcing the zero pressure mean.
pub struct SaddleSystem<S> {
    pub n_u: usize,
    pub n_p: usize,
    /// Symmetric velocity block (viscous stiffness plus condensation fill).
    pub velocity_block: Csr<S>,
    /// Velocity-pressure coupling `b(phi_u, pi_k)`; rows are pressure nodes.
    /// The momentum equations use its transpose, so the assembled operator is
    /// symmetric by construction.
    pub coupling: Csr<S>,
    /// Pressure-pressure block produced by bubble condensation (negative
    /// semidefinite).
    pub pressure_block: Csr<S>,
    /// Lumped pressure integrals: multiplier column and CG preconditioner.
    pub pressure_lump: Vec<S>,
    /// Velocity dofs constrained by boundary data.
    pub dirichlet: Vec<bool>,
    pub area: S,
    pub alpha: S,
    bubbles: Vec<BubbleCondensation<S>>,
}

/// Load vector in condensed form.
pub struct RhsBundle<S> {
    pub momentum: Vec<S>,
    pub continuity: Vec<S>,
    /// Raw bubble loads per element, needed for bubble recovery.
    bubble_loads: Vec<Vec2<S>>,
}

impl<S: Real> RhsBundle<S> {
    /// Duality pairing of this load with a discrete solution: the uncondensed
    /// load vector against the uncondensed solution. The raw continuity load
    /// of every bundle built here is zero (the stored continuity entries are
    /// condensation corrections belonging to the matrix side), so the pairing
    /// runs over the velocity unknowns only.
    pub fn dot_with_flow(&self, flow: &FlowField<S>) -> S {
        let mut acc = S::zero();
        for (i, v) in flow.velocity.iter().enumerate() {
            acc += self.momentum[2 * i] * v.x + self.momentum[2 * i + 1] * v.y;
        }
        for (t, b) in flow.bubble.iter().enumerate() {
            acc += self.bubble_loads[t].x * b.x + self.bubble_loads[t].y * b.y;
        }
        acc
    }
}

/// Assemble the viscous/coupling/stabilization blocks for the given
/// viscosity. Element loops run in ascending triangle order.
pub fn assemble_stokes<S: Real>(mesh: &TriMesh<S>, alpha: S) -> SaddleSystem<S> {
    let n_v = mesh.n_nodes();
    let n_u = 2 * n_v;
    let rule = tri_quadrature_deg4::<S>();
    let nq = rule.weights.len();

    let mut uu = Vec::with_capacity(mesh.n_triangles() * 36);
    let mut pu = Vec::with_capacity(mesh.n_triangles() * 18);
    let mut pp = Vec::with_capacity(mesh.n_triangles() * 9);
    let mut lump = vec![S::zero(); n_v];
    let mut bubbles = Vec::with_capacity(mesh.n_triangles());
    let mut area_total = S::zero();

    for t in 0..mesh.n_triangles() {
        let geo = element_geometry(mesh, t);
        area_total += geo.area;
        let third = S::of(1.0 / 3.0);
        for k in 0..3 {
            lump[geo.verts[k]] += geo.area * third;
        }

        // Viscosity-free element integrals. The bubble gradient integrates to
        // zero against constant gradients, so the nodal-bubble stiffness
        // coupling is identically zero and is never formed: the viscous block
        // stays nodal, and condensation touches only the pressure block.
        let mut a_geo = [[S::zero(); 3]; 3];
        let mut a_bb = S::zero();
        // b(phi e_c, pi_k) = -int pi_k d_c phi, for nodal and bubble phi.
        let mut b_loc = [[S::zero(); 8]; 3];
        for q in 0..nq {
            let lam = rule.points[q];
            let w = rule.weights[q] * geo.area;
            let grads = [
                geo.grad_lambda[0],
                geo.grad_lambda[1],
                geo.grad_lambda[2],
                bubble_gradient(&geo, lam),
            ];
            for m in 0..3 {
                for m2 in 0..3 {
                    a_geo[m][m2] += w * grads[m].dot(grads[m2]);
                }
            }
            a_bb += w * grads[3].dot(grads[3]);
            for k in 0..3 {
                for m in 0..4 {
                    b_loc[k][2 * m] -= w * lam[k] * grads[m].x;
                    b_loc[k][2 * m + 1] -= w * lam[k] * grads[m].y;
                }
            }
        }

        for m in 0..3 {
            for m2 in 0..3 {
                let v = a_geo[m][m2];
                uu.push((2 * geo.verts[m], 2 * geo.verts[m2], v));
                uu.push((2 * geo.verts[m] + 1, 2 * geo.verts[m2] + 1, v));
            }
        }
        for k in 0..3 {
            for m in 0..3 {
                pu.push((geo.verts[k], 2 * geo.verts[m], b_loc[k][2 * m]));
                pu.push((geo.verts[k], 2 * geo.verts[m] + 1, b_loc[k][2 * m + 1]));
            }
        }
        // Eliminating the two bubble velocity unknowns yields a pressure
        // block -B_b^T (alpha A_bb)^{-1} B_b.
        let inv_bb = S::one() / (alpha * a_bb);
        for k in 0..3 {
            for k2 in 0..3 {
                let v = -(b_loc[k][6] * b_loc[k2][6] + b_loc[k][7] * b_loc[k2][7]) * inv_bb;
                pp.push((geo.verts[k], geo.verts[k2], v));
            }
        }
        let mut coupling_loc = [[S::zero(); 9]; 2];
        for b in 0..2 {
            for k in 0..3 {
                coupling_loc[b][6 + k] = b_loc[k][6 + b];
            }
        }
        bubbles.push(BubbleCondensation {
            inv: [[inv_bb, S::zero()], [S::zero(), inv_bb]],
            coupling: coupling_loc,
        });
    }

    let dirichlet = mesh
        .node_markers()
        .iter()
        .flat_map(|m| {
            let fixed = *m != NodeMarker::Interior;
            [fixed, fixed]
        })
        .collect();

    // The viscosity multiplies the accumulated geometric stiffness once, so
    // scaling alpha scales the assembled block exactly.
    let mut velocity_block = Csr::from_triplets(n_u, n_u, uu);
    for v in velocity_block.val.iter_mut() {
        *v *= alpha;
    }

    SaddleSystem {
        n_u,
        n_p: n_v,
        velocity_block,
        coupling: Csr::from_triplets(n_v, n_u, pu),
        pressure_block: Csr::from_triplets(n_v, n_v, pp),
        pressure_lump: lump,
        dirichlet,
        area: area_total,
        alpha,
    bubbles,
    }
}

impl<S: Real> SaddleSystem<S> {
    /// Assemble a condensed load from a pointwise momentum density evaluated
    /// at quadrature points: `eval(triangle, point, barycentric)`.
    pub fn assemble_load(
        &self,
        mesh: &TriMesh<S>,
        eval: impl Fn(usize, Vec2<S>, [S; 3]) -> Vec2<S>,
    ) -> RhsBundle<S> {
        let rule = tri_quadrature_deg4::<S>();
        let nq = rule.weights.len();
        let mut momentum = vec![S::zero(); self.n_u];
        let mut continuity = vec![S::zero(); self.n_p];
        let mut bubble_loads = Vec::with_capacity(mesh.n_triangles());

        for t in 0..mesh.n_triangles() {
            let geo = element_geometry(mesh, t);
            let mut f_loc = [S::zero(); 8];
            for q in 0..nq {
                let lam = rule.points[q];
                let w = rule.weights[q] * geo.area;
                let xq = geo.coords[0].scale(lam[0])
                    + geo.coords[1].scale(lam[1])
                    + geo.coords[2].scale(lam[2]);
                let f = eval(t, xq, lam);
                let vals = [lam[0], lam[1], lam[2], bubble_value(lam)];
                for m in 0..4 {
                    f_loc[2 * m] += w * f.x * vals[m];
                    f_loc[2 * m + 1] += w * f.y * vals[m];
                }
            }
            let bc = &self.bubbles[t];
            let fb = [f_loc[6], f_loc[7]];
            let tvec = [
                bc.inv[0][0] * fb[0] + bc.inv[0][1] * fb[1],
                bc.inv[1][0] * fb[0] + bc.inv[1][1] * fb[1],
            ];
            for rc in 0..9 {
                let corr = bc.coupling[0][rc] * tvec[0] + bc.coupling[1][rc] * tvec[1];
                if rc < 6 {
                    momentum[2 * geo.verts[rc / 2] + rc % 2] += f_loc[rc] - corr;
                } else {
                    continuity[geo.verts[rc - 6]] -= corr;
                }
            }
            bubble_loads.push(Vec2::new(fb[0], fb[1]));
        }
        RhsBundle {
            momentum,
            continuity,
            bubble_loads,
        }
    }

    /// Load for the state problem: a body force evaluated pointwise.
    pub fn body_force_load(&self, mesh: &TriMesh<S>, f: &dyn AnalyticField<S>) -> RhsBundle<S> {
        self.assemble_load(mesh, |_, x, _| f.eval(x))
    }

    /// Load for the adjoint problem: the discrete velocity minus the nodal
    /// interpolant of the target, so a state that matches the target at every
    /// node produces an identically zero right-hand side.
    pub fn tracking_load(
        &self,
        mesh: &TriMesh<S>,
        y: &FlowField<S>,
        target: &dyn AnalyticField<S>,
    ) -> RhsBundle<S> {
        let misfit: Vec<Vec2<S>> = mesh
            .nodes()
            .iter()
            .zip(&y.velocity)
            .map(|(&p, &v)| v - target.eval(p))
            .collect();
        self.assemble_load(mesh, |t, _, lam| {
            let tri = mesh.triangles()[t];
            let mut v = Vec2::zero();
            for m in 0..3 {
                v += misfit[tri[m]].scale(lam[m]);
            }
            v + y.bubble[t].scale(bubble_value(lam))
        })
    }

    /// Boundary values interpolated at constrained nodes, zero elsewhere.
    pub fn boundary_values(&self, mesh: &TriMesh<S>, g: &dyn AnalyticField<S>) -> Vec<S> {
        let mut vals = vec![S::zero(); self.n_u];
        for (i, marker) in mesh.node_markers().iter().enumerate() {
            if *marker != NodeMarker::Interior {
                let gv = g.eval(mesh.nodes()[i]);
                vals[2 * i] = gv.x;
                vals[2 * i + 1] = gv.y;
            }
        }
        vals
    }
}

/// Factorized solver for one mesh and viscosity; the state and adjoint
/// problems share the matrix, so one factorization serves both.
pub struct StokesSolver<'m, S> {
    pub mesh: &'m TriMesh<S>,
    pub system: SaddleSystem<S>,
    free: Vec<usize>,
    /// Band position of each free dof (by free rank).
    band_pos: Vec<usize>,
    chol: BandedCholesky<S>,
    coupling_free: Csr<S>,
}

/// Relative residual every solve must reach.
pub fn solver_tolerance<S: Real>() -> S {
    S::of(1e-9)
}

impl<'m, S: Real> StokesSolver<'m, S> {
    pub fn new(mesh: &'m TriMesh<S>, alpha: S) -> Result<Self, SolveError> {
        let system = assemble_stokes(mesh, alpha);
        let free: Vec<usize> = (0..system.n_u).filter(|&d| !system.dirichlet[d]).collect();
        let mut free_rank = vec![usize::MAX; system.n_u];
        for (r, &d) in free.iter().enumerate() {
            free_rank[d] = r;
        }

        // Bandwidth-reducing order on the free velocity dofs.
        let mut adj = vec![Vec::new(); free.len()];
        for (r, &d) in free.iter().enumerate() {
            for (c, _) in system.velocity_block.row(d) {
                if free_rank[c] != usize::MAX && free_rank[c] != r {
                    adj[r].push(free_rank[c]);
                }
            }
        }
        let band_order_ranks = reverse_cuthill_mckee(&adj);
        let mut band_pos = vec![0usize; free.len()];
        for (pos, &r) in band_order_ranks.iter().enumerate() {
            band_pos[r] = pos;
        }
        let mut bw = 0usize;
        for (r, ns) in adj.iter().enumerate() {
            for &c in ns {
                bw = bw.max(band_pos[r].abs_diff(band_pos[c]));
            }
        }
        let band_order: Vec<usize> = band_order_ranks.iter().map(|&r| free[r]).collect();
        let chol = BandedCholesky::factor(free.len(), bw, |i, j| {
            system.velocity_block.get(band_order[i], band_order[j])
        })
        .map_err(SolveError::SolverBreakdown)?;

        // Coupling restricted to free columns, indexed by free rank.
        let mut triplets = Vec::new();
        for r in 0..system.n_p {
            for (c, v) in system.coupling.row(r) {
                if free_rank[c] != usize::MAX {
                    triplets.push((r, free_rank[c], v));
                }
            }
        }
        let coupling_free = Csr::from_triplets(system.n_p, free.len(), triplets);

        Ok(StokesSolver {
            mesh,
            system,
            free,
            band_pos,
            chol,
            coupling_free,
        })
    }

    /// Solve the velocity block restricted to free dofs.
    fn solve_velocity_block(&self, rhs_free: &[S]) -> Vec<S> {
        let n_f = self.free.len();
        let mut permuted = vec![S::zero(); n_f];
        for r in 0..n_f {
            permuted[self.band_pos[r]] = rhs_free[r];
        }
        self.chol.solve_in_place(&mut permuted);
        let mut out = vec![S::zero(); n_f];
        for r in 0..n_f {
            out[r] = permuted[self.band_pos[r]];
        }
        out
    }

    /// Solve with the given condensed load and boundary values.
    pub fn solve(&self, rhs: &RhsBundle<S>, bc: &[S]) -> Result<FlowField<S>, SolveError> {
        let sys = &self.system;
        let n_f = self.free.len();

        // Symmetric elimination of the constrained dofs.
        let mut u_full = vec![S::zero(); sys.n_u];
        for d in 0..sys.n_u {
            if sys.dirichlet[d] {
                u_full[d] = bc[d];
            }
        }
        let mut a_uc = vec![S::zero(); sys.n_u];
        sys.velocity_block.matvec(&u_full, &mut a_uc);
        let f_hat: Vec<S> = self
            .free
            .iter()
            .map(|&d| rhs.momentum[d] - a_uc[d])
            .collect();
        let mut b_uc = vec![S::zero(); sys.n_p];
        sys.coupling.matvec(&u_full, &mut b_uc);
        let h_hat: Vec<S> = (0..sys.n_p)
            .map(|k| rhs.continuity[k] - b_uc[k])
            .collect();

        // Schur reduction onto the pressure: K p = m*lambda - r with
        // K = B A^{-1} B^T - C, r = H - B A^{-1} F.
        let w = self.solve_velocity_block(&f_hat);
        let mut r_p = vec![S::zero(); sys.n_p];
        self.coupling_free.matvec(&w, &mut r_p);
        for k in 0..sys.n_p {
            r_p[k] = h_hat[k] - r_p[k];
        }
        let lambda = r_p.iter().copied().sum::<S>() / sys.area;
        let rhs_p: Vec<S> = (0..sys.n_p)
            .map(|k| sys.pressure_lump[k] * lambda - r_p[k])
            .collect();

        let apply = |p: &[S], out: &mut [S]| {
            let mut tmp_u = vec![S::zero(); n_f];
            self.coupling_free.matvec_transpose(p, &mut tmp_u);
            let sol = self.solve_velocity_block(&tmp_u);
            self.coupling_free.matvec(&sol, out);
            let mut cp = vec![S::zero(); sys.n_p];
            sys.pressure_block.matvec(p, &mut cp);
            for k in 0..sys.n_p {
                out[k] -= cp[k];
            }
        };
        let precond = |r: &[S], z: &mut [S]| {
            for k in 0..sys.n_p {
                z[k] = sys.alpha * r[k] / sys.pressure_lump[k];
            }
        };
        let mut p = vec![S::zero(); sys.n_p];
        let rtol = S::of(1e-12).max(S::epsilon() * S::of(100.0));
        projected_pcg(apply, precond, &rhs_p, &mut p, rtol, 20 * sys.n_p + 200)
            .map_err(SolveError::SolverBreakdown)?;
        // Fix the gauge: weighted mean exactly zero.
        let mean = p
            .iter()
            .zip(&sys.pressure_lump)
            .map(|(&pi, &mi)| pi * mi)
            .sum::<S>()
            / sys.area;
        for pi in p.iter_mut() {
            *pi -= mean;
        }

        // Back-substitute the velocity.
        let mut bt_p = vec![S::zero(); n_f];
        self.coupling_free.matvec_transpose(&p, &mut bt_p);
        let u_rhs: Vec<S> = (0..n_f).map(|i| f_hat[i] - bt_p[i]).collect();
        let u_f = self.solve_velocity_block(&u_rhs);
        for (i, &d) in self.free.iter().enumerate() {
            u_full[d] = u_f[i];
        }

        // Recover the condensed bubbles.
        let mut bubble = Vec::with_capacity(self.mesh.n_triangles());
        for t in 0..self.mesh.n_triangles() {
            let tri = self.mesh.triangles()[t];
            let bc_data = &sys.bubbles[t];
            let mut kept = [S::zero(); 9];
            for m in 0..3 {
                kept[2 * m] = u_full[2 * tri[m]];
                kept[2 * m + 1] = u_full[2 * tri[m] + 1];
                kept[6 + m] = p[tri[m]];
            }
            let fb = rhs.bubble_loads[t];
            let mut resid = [fb.x, fb.y];
            for b in 0..2 {
                for rc in 0..9 {
                    resid[b] -= bc_data.coupling[b][rc] * kept[rc];
                }
            }
            bubble.push(Vec2::new(
                bc_data.inv[0][0] * resid[0] + bc_data.inv[0][1] * resid[1],
                bc_data.inv[1][0] * resid[0] + bc_data.inv[1][1] * resid[1],
            ));
        }

        let flow = FlowField {
            velocity: (0..sys.n_p)
                .map(|i| Vec2::new(u_full[2 * i], u_full[2 * i + 1]))
                .collect(),
            bubble,
            pressure: p,
        };

        self.check_residual(&flow, rhs, &f_hat, &h_hat, lambda, &u_full)?;
        Ok(flow)
    }

    /// Verify the solve contract on the condensed system. Raw equation rows
    /// are checked with the full solution vector (constrained columns
    /// included); the norm of the reduced right-hand side sets the scale.
    fn check_residual(
        &self,
        flow: &FlowField<S>,
        rhs: &RhsBundle<S>,
        f_hat: &[S],
        h_hat: &[S],
        lambda: S,
        u_full: &[S],
    ) -> Result<(), SolveError> {
        let sys = &self.system;
        let mut res_sq = S::zero();
        let mut b_sq = S::zero();

        // Momentum rows at free dofs: A u + B^T p = F.
        let mut au = vec![S::zero(); sys.n_u];
        sys.velocity_block.matvec(u_full, &mut au);
        let mut btp = vec![S::zero(); sys.n_u];
        sys.coupling.matvec_transpose(&flow.pressure, &mut btp);
        for (i, &d) in self.free.iter().enumerate() {
            let r = au[d] + btp[d] - rhs.momentum[d];
            res_sq += r * r;
            b_sq += f_hat[i] * f_hat[i];
        }

        // Continuity rows: B u + C p + m lambda = H.
        let mut bu = vec![S::zero(); sys.n_p];
        sys.coupling.matvec(u_full, &mut bu);
        let mut cp = vec![S::zero(); sys.n_p];
        sys.pressure_block.matvec(&flow.pressure, &mut cp);
        for k in 0..sys.n_p {
            let r = bu[k] + cp[k] + sys.pressure_lump[k] * lambda - rhs.continuity[k];
            res_sq += r * r;
            b_sq += h_hat[k] * h_hat[k];
        }

        // Multiplier row: weighted pressure mean.
        let gauge = flow
            .pressure
            .iter()
            .zip(&sys.pressure_lump)
            .map(|(&pi, &mi)| pi * mi)
            .sum::<S>();
        res_sq += gauge * gauge;

        let res = res_sq.sqrt();
        let b_norm = b_sq.sqrt();
        if b_norm == S::zero() && res <= S::of(1e-300) {
            return Ok(());
        }
        let rel = res / b_norm.max(S::of(1e-300));
        if rel > solver_tolerance::<S>() || !rel.is_finite() {
            return Err(SolveError::SolverBreakdown(format!(
                "relative residual {rel} exceeds contract {}",
                solver_tolerance::<S>()
            )));
        }
        Ok(())
    }

    /// Solve the flow problem with body force `f` and boundary data `g`.
    pub fn state(
        &self,
        f: &dyn AnalyticField<S>,
        g: &dyn AnalyticField<S>,
    ) -> Result<FlowField<S>, SolveError> {
        check_compatibility(self.mesh, g)?;
        let rhs = self.system.body_force_load(self.mesh, f);
        let bc = self.system.boundary_values(self.mesh, g);
        self.solve(&rhs, &bc)
    }

    /// Solve the dual problem driven by the tracking misfit of `y`.
    pub fn adjoint(
        &self,
        y: &FlowField<S>,
        target: &dyn AnalyticField<S>,
    ) -> Result<FlowField<S>, SolveError> {
        let rhs = self.system.tracking_load(self.mesh, y, target);
        let bc = vec![S::zero(); self.system.n_u];
        self.solve(&rhs, &bc)
    }
}

/// Net outward flux of `g` through the boundary, with the scales needed for
/// the compatibility tolerance.
pub fn boundary_flux<S: Real>(mesh: &TriMesh<S>, g: &dyn AnalyticField<S>) -> (S, S, S) {
    let rule = edge_quadrature_gauss2::<S>();
    let mut flux = S::zero();
    let mut max_g = S::zero();
    let mut perimeter = S::zero();
    for e in mesh.boundary_edges() {
        let a = mesh.nodes()[e.a];
        let b = mesh.nodes()[e.b];
        let len = (b - a).norm();
        let n = mesh.edge_outward_normal(e);
        perimeter += len;
        for &(t, w) in &rule {
            let x = a + (b - a).scale(t);
            let gv = g.eval(x);
            flux += gv.dot(n) * w * len;
            max_g = max_g.max(gv.norm());
        }
    }
    (flux, max_g, perimeter)
}

fn check_compatibility<S: Real>(
    mesh: &TriMesh<S>,
    g: &dyn AnalyticField<S>,
) -> Result<(), SolveError> {
    let (flux, max_g, perimeter) = boundary_flux(mesh, g);
    let tol = S::of(1e-8) * perimeter * max_g;
    if flux.abs() > tol {
        return Err(SolveError::CompatibilityViolated {
            flux: flux.to_f64().unwrap_or(f64::NAN),
            tolerance: tol.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok(())
}

/// Solve the flow problem on `mesh`.
pub fn solve_state<S: Real>(
    mesh: &TriMesh<S>,
    alpha: S,
    f: &dyn AnalyticField<S>,
    g: &dyn AnalyticField<S>,
) -> Result<FlowField<S>, SolveError> {
    StokesSolver::new(mesh, alpha)?.state(f, g)
}

/// Solve the dual problem for the tracking functional.
pub fn solve_adjoint<S: Real>(
    mesh: &TriMesh<S>,
    alpha: S,
    y: &FlowField<S>,
    target: &dyn AnalyticField<S>,
) -> Result<FlowField<S>, SolveError> {
    StokesSolver::new(mesh, alpha)?.adjoint(y, target)
}

/// Tracking cost: half the squared L2 distance between the discrete velocity
/// and the target, with the target evaluated at quadrature points.
pub fn compute_cost<S: Real>(
    mesh: &TriMesh<S>,
    y: &FlowField<S>,
    target: &dyn AnalyticField<S>,
) -> S {
    let rule = tri_quadrature_deg4::<S>();
    let mut total = S::zero();
    for t in 0..mesh.n_triangles() {
        let geo = element_geometry(mesh, t);
        for (lam, &w) in rule.points.iter().zip(&rule.weights) {
            let xq = geo.coords[0].scale(lam[0])
                + geo.coords[1].scale(lam[1])
                + geo.coords[2].scale(lam[2]);
            let diff = y.velocity_at(mesh, t, *lam) - target.eval(xq);
            total += w * geo.area * diff.norm_sq();
        }
    }
    total * S::of(0.5)
}

/// L2 and H1-seminorm errors of the discrete velocity against an analytic
/// field (the H1 part compares full discrete gradients, bubble included).
pub fn velocity_error_norms<S: Real>(
    mesh: &TriMesh<S>,
    y: &FlowField<S>,
    exact: &dyn AnalyticField<S>,
) -> (S, S) {
    let rule = tri_quadrature_deg4::<S>();
    let mut l2 = S::zero();
    let mut h1 = S::zero();
    for t in 0..mesh.n_triangles() {
        let geo = element_geometry(mesh, t);
        let tri = geo.verts;
        let mut grad_lin = Mat2::zero();
        for m in 0..3 {
            grad_lin += Mat2::outer(y.velocity[tri[m]], geo.grad_lambda[m]);
        }
        for (lam, &w) in rule.points.iter().zip(&rule.weights) {
            let xq = geo.coords[0].scale(lam[0])
                + geo.coords[1].scale(lam[1])
                + geo.coords[2].scale(lam[2]);
            let diff = y.velocity_at(mesh, t, *lam) - exact.eval(xq);
            l2 += w * geo.area * diff.norm_sq();
            let grad =
                grad_lin + Mat2::outer(y.bubble[t], bubble_gradient(&geo, *lam));
            let gdiff = grad - exact.jacobian(xq);
            h1 += w * geo.area * gdiff.frob(gdiff);
        }
    }
    (l2.sqrt(), h1.sqrt())
}

/// Velocity gradient of the discrete field inside triangle `t` at barycentric
/// coordinates `lam`, bubble contribution included.
pub fn velocity_gradient_at<S: Real>(
    geo: &ElementGeometry<S>,
    y: &FlowField<S>,
    t: usize,
    lam: [S; 3],
) -> Mat2<S> {
    let mut grad = Mat2::zero();
    for m in 0..3 {
        grad += Mat2::outer(y.velocity[geo.verts[m]], geo.grad_lambda[m]);
    }
    grad + Mat2::outer(y.bubble[t], bubble_gradient(geo, lam))
}

/// Pairing of the discrete divergence (bubble included) against every linear
/// pressure basis function: entry `k` is the integral of `pi_k div(y)`.
pub fn divergence_pairing<S: Real>(mesh: &TriMesh<S>, y: &FlowField<S>) -> Vec<S> {
    let rule = tri_quadrature_deg4::<S>();
    let mut out = vec![S::zero(); mesh.n_nodes()];
    for t in 0..mesh.n_triangles() {
        let geo = element_geometry(mesh, t);
        for (lam, &w) in rule.points.iter().zip(&rule.weights) {
            let div = velocity_gradient_at(&geo, y, t, *lam).trace();
            for k in 0..3 {
                out[geo.verts[k]] += w * geo.area * lam[k] * div;
            }
        }
    }
    out
}

/// Nodal momentum residual `A u + B^T p - F` of a discrete flow against a
/// load. At interior nodes of a solved flow this vanishes to solver
/// precision; at Dirichlet nodes it is the discrete boundary traction
/// functional `int_Gamma (alpha Dy n - p n) . phi ds`.
pub fn momentum_residual<S: Real>(
    sys: &SaddleSystem<S>,
    flow: &FlowField<S>,
    load: &RhsBundle<S>,
) -> Vec<Vec2<S>> {
    let mut u_full = vec![S::zero(); sys.n_u];
    for (i, v) in flow.velocity.iter().enumerate() {
        u_full[2 * i] = v.x;
        u_full[2 * i + 1] = v.y;
    }
    let mut au = vec![S::zero(); sys.n_u];
    sys.velocity_block.matvec(&u_full, &mut au);
    let mut btp = vec![S::zero(); sys.n_u];
    sys.coupling.matvec_transpose(&flow.pressure, &mut btp);
    (0..sys.n_p)
        .map(|i| {
            Vec2::new(
                au[2 * i] + btp[2 * i] - load.momentum[2 * i],
                au[2 * i + 1] + btp[2 * i + 1] - load.momentum[2 * i + 1],
            )
        })
        .collect()
}

/// Viscous energy `int alpha |D y|^2`, bubble included (exact quadrature).
pub fn viscous_energy<S: Real>(mesh: &TriMesh<S>, y: &FlowField<S>, alpha: S) -> S {
    let rule = tri_quadrature_deg4::<S>();
    let mut acc = S::zero();
    for t in 0..mesh.n_triangles() {
        let geo = element_geometry(mesh, t);
        for (lam, &w) in rule.points.iter().zip(&rule.weights) {
            let g = velocity_gradient_at(&geo, y, t, *lam);
            acc += w * geo.area * g.frob(g);
        }
    }
    acc * alpha
}

/// Pressure L2 error against an analytic pressure (mean-adjusted).
pub fn pressure_error_l2<S: Real>(
    mesh: &TriMesh<S>,
    y: &FlowField<S>,
    exact: impl Fn(Vec2<S>) -> S,
) -> S {
    let rule = tri_quadrature_deg4::<S>();
    let mut err = S::zero();
    for t in 0..mesh.n_triangles() {
        let geo = element_geometry(mesh, t);
        for (lam, &w) in rule.points.iter().zip(&rule.weights) {
            let xq = geo.coords[0].scale(lam[0])
                + geo.coords[1].scale(lam[1])
                + geo.coords[2].scale(lam[2]);
            let diff = y.pressure_at(mesh, t, *lam) - exact(xq);
            err += w * geo.area * diff * diff;
        }
    }
    err.sqrt()
}
