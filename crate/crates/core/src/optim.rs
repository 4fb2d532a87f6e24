//! Moving-mesh descent on the tracking cost: regularized descent directions,
//! backtracking line search, and the outer optimization loop.

use std::path::Path;
use std::time::Instant;

use crate::fem::linalg::{reverse_cuthill_mckee, BandedCholesky, Csr};
use crate::fem::{compute_cost, element_geometry, FlowField, SolveError, StokesSolver};
use crate::fields::AnalyticField;
use crate::geom::Vec2;
use crate::mesh::{save_mesh, DisplacementField, MeshError, NodeMarker, TriMesh};
use crate::quadrature::tri_quadrature_deg4;
use crate::scalar::Real;
use crate::shape::{boundary_gradient_density, BoundaryDensity};
use crate::vtk::write_flow_vtk;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptError {
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// How the boundary gradient is turned into a displacement field.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DescentKind {
    /// Solve a vector Laplacian so the whole mesh moves smoothly (the
    /// gradient representative in the H1 inner product).
    H1,
    /// Move only the inner boundary along `w n` (unregularized fallback).
    RawNormal,
}

/// Parameters of the optimization loop.
#[derive(Clone, Debug)]
pub struct OptSettings<S> {
    pub alpha: S,
    pub max_iters: usize,
    /// Stop when the descent norm falls below this fraction of its initial
    /// value.
    pub grad_tol_rel: S,
    /// Cap on the largest nodal displacement of the first trial step, as a
    /// fraction of the smallest mesh edge.
    pub step_cap: S,
    /// Sufficient-decrease constant of the backtracking rule.
    pub armijo_c: S,
    pub max_backtracks: usize,
    pub descent: DescentKind,
    /// Abort when the mesh quality falls below this threshold.
    pub quality_floor: S,
    /// Stop when the cost decrease stalls relative to the initial cost.
    pub stagnation_rel: S,
}

impl<S: Real> Default for OptSettings<S> {
    fn default() -> Self {
        OptSettings {
            alpha: S::of(0.01),
            max_iters: 30,
            grad_tol_rel: S::of(1e-6),
            step_cap: S::of(0.2),
            armijo_c: S::of(1e-4),
            max_backtracks: 30,
            descent: DescentKind::H1,
            quality_floor: S::of(0.05),
            stagnation_rel: S::of(1e-12),
        }
    }
}

/// One accepted iterate.
#[derive(Clone, Debug)]
pub struct IterationRecord<S> {
    pub k: usize,
    pub cost: S,
    pub grad_norm: S,
    pub step: S,
    pub mesh_quality: S,
    pub mean_inner_radius: S,
    pub wall_seconds: f64,
}

/// Why the loop stopped.
#[derive(Clone, Debug, PartialEq)]
pub enum Termination {
    MaxIters,
    GradientTolerance,
    CostStagnation,
    LineSearchFailed { backtracks: usize },
    QualityAbort { quality: f64 },
}

/// Mesh and flow of an accepted iterate.
pub struct Snapshot<S> {
    pub mesh: TriMesh<S>,
    pub flow: FlowField<S>,
}

/// Full result of an optimization run.
pub struct OptState<S> {
    pub mesh: TriMesh<S>,
    pub k: usize,
    pub cost: S,
    pub last_descent: Option<DisplacementField<S>>,
    pub last_step: S,
    pub history: Vec<IterationRecord<S>>,
    pub snapshots: Vec<Snapshot<S>>,
    pub termination: Termination,
}

/// Scalar Laplacian with zero values on the fixed outer boundary, used to
/// turn the boundary gradient into a smooth displacement of the whole mesh.
struct OuterClampedLaplacian<S> {
    free: Vec<usize>,
    band_pos: Vec<usize>,
    chol: BandedCholesky<S>,
    n_nodes: usize,
}

impl<S: Real> OuterClampedLaplacian<S> {
    fn new(mesh: &TriMesh<S>) -> Result<Self, SolveError> {
        let n = mesh.n_nodes();
        let mut triplets = Vec::with_capacity(9 * mesh.n_triangles());
        for t in 0..mesh.n_triangles() {
            let geo = element_geometry(mesh, t);
            for i in 0..3 {
                for j in 0..3 {
                    triplets.push((
                        geo.verts[i],
                        geo.verts[j],
                        geo.area * geo.grad_lambda[i].dot(geo.grad_lambda[j]),
                    ));
                }
            }
        }
        let matrix = Csr::from_triplets(n, n, triplets);
        let free: Vec<usize> = (0..n)
            .filter(|&i| mesh.node_markers()[i] != NodeMarker::OuterFixed)
            .collect();
        let mut rank = vec![None; n];
        for (r, &i) in free.iter().enumerate() {
            rank[i] = Some(r);
        }
        let mut adj = vec![Vec::new(); free.len()];
        for (r, &i) in free.iter().enumerate() {
            for (c, _) in matrix.row(i) {
                if let Some(rc) = rank[c] {
                    if rc != r {
                        adj[r].push(rc);
                    }
                }
            }
        }
        let order = reverse_cuthill_mckee(&adj);
        let mut band_pos = vec![0usize; free.len()];
        for (pos, &r) in order.iter().enumerate() {
            band_pos[r] = pos;
        }
        let mut bw = 0usize;
        for (r, ns) in adj.iter().enumerate() {
            for &c in ns {
                bw = bw.max(band_pos[r].abs_diff(band_pos[c]));
            }
        }
        let by_pos: Vec<usize> = order.iter().map(|&r| free[r]).collect();
        let chol = BandedCholesky::factor(free.len(), bw, |i, j| {
            matrix.get(by_pos[i], by_pos[j])
        })
        .map_err(SolveError::SolverBreakdown)?;
        Ok(OuterClampedLaplacian {
            free,
            band_pos,
            chol,
            n_nodes: n,
        })
    }

    /// Solve with a full-length right-hand side; constrained entries are zero
    /// in the result.
    fn solve(&self, rhs: &[S]) -> Vec<S> {
        let mut permuted = vec![S::zero(); self.free.len()];
        for (r, &i) in self.free.iter().enumerate() {
            permuted[self.band_pos[r]] = rhs[i];
        }
        self.chol.solve_in_place(&mut permuted);
        let mut out = vec![S::zero(); self.n_nodes];
        for (r, &i) in self.free.iter().enumerate() {
            out[i] = permuted[self.band_pos[r]];
        }
        out
    }
}

/// Full H1 norm of a displacement field (values and gradients).
pub fn h1_norm<S: Real>(mesh: &TriMesh<S>, d: &DisplacementField<S>) -> S {
    let rule = tri_quadrature_deg4::<S>();
    let mut acc = S::zero();
    for t in 0..mesh.n_triangles() {
        let geo = element_geometry(mesh, t);
        let mut grad_sq = S::zero();
        for comp in 0..2 {
            let mut g = Vec2::zero();
            for m in 0..3 {
                let val = if comp == 0 {
                    d.values[geo.verts[m]].x
                } else {
                    d.values[geo.verts[m]].y
                };
                g += geo.grad_lambda[m].scale(val);
            }
            grad_sq += g.norm_sq();
        }
        let mut val_sq = S::zero();
        for (lam, &w) in rule.points.iter().zip(&rule.weights) {
            let mut v = Vec2::zero();
            for m in 0..3 {
                v += d.values[geo.verts[m]].scale(lam[m]);
            }
            val_sq += w * v.norm_sq();
        }
        acc += geo.area * (grad_sq + val_sq);
    }
    acc.sqrt()
}

/// Compute the descent displacement from the boundary gradient density.
///
/// For the regularized kind this solves, componentwise, a scalar Laplacian
/// with zero boundary values on the fixed outer loop and the lumped boundary
/// pairing as the load, so the returned field satisfies
/// `int Dd : DV = sum_i w_i s_i (V.n)_i` for all admissible fields `V`.
pub fn descent_direction<S: Real>(
    mesh: &TriMesh<S>,
    density: &BoundaryDensity<S>,
    kind: DescentKind,
) -> Result<DisplacementField<S>, SolveError> {
    match kind {
        DescentKind::RawNormal => {
            let mut d = DisplacementField::zero(mesh.n_nodes());
            for e in &density.entries {
                d.values[e.node] = e.normal.scale(e.density);
            }
            Ok(d)
        }
        DescentKind::H1 => {
            let lap = OuterClampedLaplacian::new(mesh)?;
            let n = mesh.n_nodes();
            let mut rhs_x = vec![S::zero(); n];
            let mut rhs_y = vec![S::zero(); n];
            for e in &density.entries {
                rhs_x[e.node] = e.density * e.measure * e.normal.x;
                rhs_y[e.node] = e.density * e.measure * e.normal.y;
            }
            let dx = lap.solve(&rhs_x);
            let dy = lap.solve(&rhs_y);
            Ok(DisplacementField {
                values: (0..n).map(|i| Vec2::new(dx[i], dy[i])).collect(),
            })
        }
    }
}

/// Result of one accepted backtracking step.
pub struct StepOutcome<S> {
    pub step: S,
    pub mesh: TriMesh<S>,
    pub flow: FlowField<S>,
    pub cost: S,
    pub backtracks: usize,
}

/// Backtracking line search along `-d`.
///
/// The first trial step scales the largest nodal displacement to
/// `step_cap * min_edge`; the step halves whenever the move inverts the mesh,
/// the solve fails, or the sufficient-decrease test fails.
#[allow(clippy::too_many_arguments)]
pub fn armijo_step<S: Real>(
    mesh: &TriMesh<S>,
    d: &DisplacementField<S>,
    directional: S,
    current_cost: S,
    settings: &OptSettings<S>,
    f: &dyn AnalyticField<S>,
    g: &dyn AnalyticField<S>,
    target: &dyn AnalyticField<S>,
) -> Result<Option<StepOutcome<S>>, OptError> {
    let d_max = d.max_norm();
    if d_max == S::zero() {
        return Ok(None);
    }
    let mut h = settings.step_cap * mesh.min_edge_length() / d_max;
    for bt in 0..=settings.max_backtracks {
        let trial = match mesh.deform(d, h) {
            Ok(m) => m,
            Err(MeshError::StepTooLarge { .. }) => {
                h = h * S::of(0.5);
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let solved = StokesSolver::new(&trial, settings.alpha)
            .and_then(|s| s.state(f, g))
            .map(|flow| {
                let cost = compute_cost(&trial, &flow, target);
                (flow, cost)
            });
        match solved {
            Ok((flow, cost)) => {
                if cost <= current_cost - settings.armijo_c * h * directional {
                    return Ok(Some(StepOutcome {
                        step: h,
                        mesh: trial,
                        flow,
                        cost,
                        backtracks: bt,
                    }));
                }
            }
            // A degenerate trial configuration is treated like a rejected
            // step; persistent failure ends as a failed line search.
            Err(SolveError::SolverBreakdown(_)) => {}
            Err(e) => return Err(e.into()),
        }
        h = h * S::of(0.5);
    }
    Ok(None)
}

/// Run the moving-mesh descent loop from `initial` until the iteration
/// budget, the gradient tolerance, cost stagnation, a failed line search, or
/// a mesh-quality abort.
pub fn optimize<S: Real>(
    initial: TriMesh<S>,
    settings: &OptSettings<S>,
    f: &dyn AnalyticField<S>,
    g: &dyn AnalyticField<S>,
    target: &dyn AnalyticField<S>,
) -> Result<OptState<S>, OptError> {
    let mut mesh = initial;
    let mut history: Vec<IterationRecord<S>> = Vec::new();
    let mut snapshots: Vec<Snapshot<S>> = Vec::new();
    let mut grad0: Option<S> = None;
    let mut cost0: Option<S> = None;
    let mut last_descent: Option<DisplacementField<S>> = None;
    let mut last_step = S::zero();

    let mut k = 0usize;
    loop {
        let started = Instant::now();
        let quality = mesh.quality();
        let radius = mesh.mean_inner_radius();

        let solver = StokesSolver::new(&mesh, settings.alpha)?;
        let y = solver.state(f, g)?;
        let cost = compute_cost(&mesh, &y, target);
        cost0.get_or_insert(cost);
        snapshots.push(Snapshot {
            mesh: mesh.clone(),
            flow: y.clone(),
        });

        let mut record = IterationRecord {
            k,
            cost,
            grad_norm: S::zero(),
            step: S::zero(),
            mesh_quality: quality,
            mean_inner_radius: radius,
            wall_seconds: 0.0,
        };

        if quality < settings.quality_floor {
            record.wall_seconds = started.elapsed().as_secs_f64();
            history.push(record);
            return Ok(OptState {
                mesh,
                k,
                cost,
                last_descent,
                last_step,
                history,
                snapshots,
                termination: Termination::QualityAbort {
                    quality: quality.to_f64().unwrap_or(f64::NAN),
                },
            });
        }

        if settings.max_iters == 0 {
            record.wall_seconds = started.elapsed().as_secs_f64();
            history.push(record);
            return Ok(OptState {
                mesh,
                k,
                cost,
                last_descent,
                last_step,
                history,
                snapshots,
                termination: Termination::MaxIters,
            });
        }

        let adj = solver.adjoint(&y, target)?;
        let density = boundary_gradient_density(&mesh, settings.alpha, &y, &adj, f, g, target);
        let d = descent_direction(&mesh, &density, settings.descent)?;
        let grad_norm = h1_norm(&mesh, &d);
        record.grad_norm = grad_norm;
        let g0 = *grad0.get_or_insert(grad_norm);

        let stop = if k >= settings.max_iters {
            Some(Termination::MaxIters)
        } else if grad_norm <= settings.grad_tol_rel * g0 {
            Some(Termination::GradientTolerance)
        } else if k >= 1
            && (history[k - 1].cost - cost).abs() < settings.stagnation_rel * cost0.unwrap()
        {
            Some(Termination::CostStagnation)
        } else {
            None
        };
        if let Some(termination) = stop {
            record.wall_seconds = started.elapsed().as_secs_f64();
            history.push(record);
            return Ok(OptState {
                mesh,
                k,
                cost,
                last_descent: Some(d),
                last_step,
                history,
                snapshots,
                termination,
            });
        }

        let directional = density.pairing(&d);
        let outcome = armijo_step(
            &mesh,
            &d,
            directional,
            cost,
            settings,
            f,
            g,
            target,
        )?;
        match outcome {
            None => {
                record.wall_seconds = started.elapsed().as_secs_f64();
                history.push(record);
                return Ok(OptState {
                    mesh,
                    k,
                    cost,
                    last_descent: Some(d),
                    last_step,
                    history,
                    snapshots,
                    termination: Termination::LineSearchFailed {
                        backtracks: settings.max_backtracks,
                    },
                });
            }
            Some(step) => {
                record.step = step.step;
                record.wall_seconds = started.elapsed().as_secs_f64();
                history.push(record);
                last_step = step.step;
                last_descent = Some(d);
                mesh = step.mesh;
                k += 1;
            }
        }
    }
}

/// Write the per-run artifacts into `dir`: the deterministic iteration
/// history, wall-clock timings (kept separate so the history file is
/// byte-reproducible), per-iterate mesh and flow snapshots, and the final
/// inner boundary polygon.
pub fn write_run_outputs<S: Real>(
    state: &OptState<S>,
    dir: &Path,
    emit_vtk: bool,
) -> Result<(), OptError> {
    use std::io::Write;

    let mut hist = String::from("iter,cost,grad_norm,step,mesh_quality,mean_inner_radius\n");
    let mut timings = String::from("iter,wall_seconds\n");
    for r in &state.history {
        hist.push_str(&format!(
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            r.k, r.cost, r.grad_norm, r.step, r.mesh_quality, r.mean_inner_radius
        ));
        timings.push_str(&format!("{},{:.16e}\n", r.k, r.wall_seconds));
    }
    std::fs::write(dir.join("history.csv"), hist)?;
    std::fs::write(dir.join("timings.csv"), timings)?;

    for (k, snap) in state.snapshots.iter().enumerate() {
        save_mesh(&snap.mesh, &dir.join(format!("mesh_{k:04}.msh")))?;
        if emit_vtk {
            write_flow_vtk(
                &snap.mesh,
                &snap.flow,
                &format!("iterate {k}"),
                &dir.join(format!("fields_{k:04}.vtk")),
            )?;
        }
    }

    let mut boundary = std::fs::File::create(dir.join("final_boundary.csv"))?;
    writeln!(boundary, "node_id,x,y")?;
    for i in state.mesh.inner_loop() {
        let p = state.mesh.nodes()[i];
        writeln!(boundary, "{},{:.16e},{:.16e}", i, p.x, p.y)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests;
